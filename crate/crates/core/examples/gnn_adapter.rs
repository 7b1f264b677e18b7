//! The graph adapter in front of the encoder: identity at initialisation,
//! trainable-parameter counts, and the attention it learns over sensors.

use ega::adapter::{adapter_forward, init_params, AdapterConfig, GnnKind, GraphOperators};
use ega::autodiff::{Tape, Tensor};
use ega::montage::MontageGraph;

fn main() -> ega::Result<()> {
    let graph = MontageGraph::standard();
    let ops = GraphOperators::new(&graph);
    let len = 256;
    let x = Tensor::from_fn([19, len], |i| ((i % len) as f64 * 0.05 + (i / len) as f64).sin());

    for kind in GnnKind::ALL {
        let cfg = AdapterConfig::new(kind, len);
        let params = init_params(&cfg, 7)?;
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let trace = adapter_forward(&mut tape, xv, &ops, &b, &cfg, 0)?;
        let same = tape.value(trace.output) == &x;
        let c = cfg.param_breakdown();
        println!(
            "{:<5} identity at init: {same}  params: gnn {} + out {} = {}",
            kind.name(),
            c.gnn,
            c.out_proj,
            c.total()
        );
        if let Some(&alpha) = trace.attention.first() {
            let a = tape.value(alpha);
            println!("      attention row Cz sums to {:.6}", a.row(9).iter().sum::<f64>());
        }
    }

    // a 128-sample segment mapped to the 256 samples the encoder expects
    let mut cfg = AdapterConfig::new(GnnKind::Gcn, len);
    cfg.raw_len = Some(128);
    let params = init_params(&cfg, 7)?;
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let short = tape.constant(Tensor::zeros([19, 128]));
    let out = adapter_forward(&mut tape, short, &ops, &b, &cfg, 0)?.output;
    println!("length adapter: [19, 128] -> {:?}", tape.shape(out));
    Ok(())
}
