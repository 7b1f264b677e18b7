//! The 19-node sensor graph: geodesic edge weights, the normalised
//! propagation matrix, and a coordinate override.

use ega::montage::{builtin_positions, parse_positions, GraphOptions, MontageGraph};

fn main() -> ega::Result<()> {
    let g = MontageGraph::standard();
    let (fp1, fp2, o1) = (g.index_of("Fp1").unwrap(), g.index_of("Fp2").unwrap(), g.index_of("O1").unwrap());
    println!("{} nodes: {}", g.n(), g.node_order().join(" "));
    println!("w(Fp1, Fp2) = {:.4}", g.weight(fp1, fp2));
    println!("w(Fp1, O1)  = {:.4}", g.weight(fp1, o1));
    let s = g.s_gcn();
    let row_sum: f64 = s.row(fp1).iter().sum();
    println!("S_gcn row Fp1 sums to {row_sum:.4}, diagonal {:.4}", s.at2(fp1, fp1));

    // move O1 to the back of the head on the midline and rebuild
    let mut table: std::collections::BTreeMap<String, [f64; 3]> =
        builtin_positions().into_iter().map(|p| (p.name, p.xyz)).collect();
    table.insert("O1".into(), [0.0, -1.0, 0.0]);
    let custom = parse_positions(&serde_json::to_string(&table)?)?;
    let g2 = MontageGraph::build(&custom, GraphOptions::default())?;
    println!("after override w(Fp1, O1) = {:.4}", g2.weight(fp1, o1));

    let no_loops = MontageGraph::build(&builtin_positions(), GraphOptions { no_self_loop: true, ..Default::default() })?;
    println!("without self loops, S_gcn diagonal = {}", no_loops.s_gcn().at2(0, 0));
    Ok(())
}
