//! Graph layers against naive dense loops on random small graphs.

use ega::adapter::{gat_layer, gcn_layer, sage_layer, Activation, GraphOperators, GAT_SLOPE};
use ega::autodiff::{Tape, Tensor};
use ega::init;
use ega::montage::MontageGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;
const GRAPHS: u64 = 200;

struct Case {
    graph: MontageGraph,
    h: Tensor,
    w: Tensor,
    w2: Tensor,
    a_src: Tensor,
    a_dst: Tensor,
    b: Tensor,
}

fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6);
    let mut w = Tensor::zeros([n, n]);
    for i in 0..n {
        for j in i + 1..n {
            // about a third of the edges are absent
            let v = if rng.random_bool(0.35) { 0.0 } else { rng.random_range(0.05..1.0) };
            w.data_mut()[i * n + j] = v;
            w.data_mut()[j * n + i] = v;
        }
    }
    let self_loops = rng.random_bool(0.7);
    let graph = MontageGraph::from_weights((0..n).map(|i| format!("n{i}")).collect(), w, self_loops).unwrap();
    let (f, o) = (rng.random_range(1..=5), rng.random_range(1..=4));
    Case {
        graph,
        h: init::normal(&mut rng, [n, f], 1.0),
        w: init::normal(&mut rng, [f, o], 1.0),
        w2: init::normal(&mut rng, [f, o], 1.0),
        a_src: init::normal(&mut rng, [o], 1.0),
        a_dst: init::normal(&mut rng, [o], 1.0),
        b: init::normal(&mut rng, [o], 1.0),
    }
}

fn matmul(a: &Tensor, b: &Tensor) -> Vec<Vec<f64>> {
    (0..a.rows())
        .map(|i| (0..b.cols()).map(|j| (0..a.cols()).map(|k| a.at2(i, k) * b.at2(k, j)).sum()).collect())
        .collect()
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn assert_close(got: &Tensor, want: &[Vec<f64>], what: &str, seed: u64) {
    for (i, row) in want.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let g = got.at2(i, j);
            assert!((g - v).abs() <= TOL, "{what} seed {seed} at ({i},{j}): {g} vs {v}");
        }
    }
}

#[test]
pub fn gcn_matches_dense_reference() {
    for seed in 0..GRAPHS {
        let c = case(seed);
        let n = c.graph.n();
        let loops = if c.graph.self_loops() { 1.0 } else { 0.0 };
        let a = |i: usize, j: usize| c.graph.weight(i, j) + if i == j { loops } else { 0.0 };
        let deg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a(i, j)).sum()).collect();
        let hw = matmul(&c.h, &c.w);
        let want: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..c.w.cols())
                    .map(|o| {
                        let mut acc = 0.0;
                        for j in 0..n {
                            if deg[i] > 0.0 && deg[j] > 0.0 {
                                acc += a(i, j) / (deg[i] * deg[j]).sqrt() * hw[j][o];
                            }
                        }
                        relu(acc + c.b.data()[o])
                    })
                    .collect()
            })
            .collect();
        let mut tape = Tape::new();
        let (h, s, w, b) = (
            tape.constant(c.h.clone()),
            tape.constant(c.graph.s_gcn().clone()),
            tape.constant(c.w.clone()),
            tape.constant(c.b.clone()),
        );
        let out = gcn_layer(&mut tape, h, s, w, b, Activation::Relu).unwrap();
        assert_close(tape.value(out), &want, "gcn", seed);
    }
}

#[test]
pub fn sage_matches_dense_reference() {
    for seed in 0..GRAPHS {
        let c = case(seed);
        let n = c.graph.n();
        let weighted = seed % 2 == 1;
        let ops = GraphOperators::new(&c.graph);
        let agg = ops.sage_aggregation(None, weighted, 0).unwrap();
        let own = matmul(&c.h, &c.w);
        let nb = matmul(&c.h, &c.w2);
        let want: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let neigh: Vec<usize> = (0..n).filter(|&j| j != i && c.graph.weight(i, j) > 0.0).collect();
                let total: f64 = if weighted {
                    neigh.iter().map(|&j| c.graph.weight(i, j)).sum()
                } else {
                    neigh.len() as f64
                };
                (0..c.w.cols())
                    .map(|o| {
                        let mean: f64 = neigh
                            .iter()
                            .map(|&j| (if weighted { c.graph.weight(i, j) } else { 1.0 }) * nb[j][o])
                            .sum::<f64>()
                            / if total > 0.0 { total } else { 1.0 };
                        relu(own[i][o] + mean + c.b.data()[o])
                    })
                    .collect()
            })
            .collect();
        let mut tape = Tape::new();
        let (h, m, ws, wn, b) = (
            tape.constant(c.h.clone()),
            tape.constant(agg),
            tape.constant(c.w.clone()),
            tape.constant(c.w2.clone()),
            tape.constant(c.b.clone()),
        );
        let out = sage_layer(&mut tape, h, m, ws, wn, b, Activation::Relu).unwrap();
        assert_close(tape.value(out), &want, "sage", seed);
    }
}

#[test]
pub fn gat_matches_dense_reference() {
    for seed in 0..GRAPHS {
        let c = case(seed);
        let n = c.graph.n();
        let z = matmul(&c.h, &c.w);
        let o = c.w.cols();
        let dot = |v: &[f64], a: &Tensor| v.iter().zip(a.data()).map(|(x, y)| x * y).sum::<f64>();
        let mut alpha_want = vec![vec![0.0; n]; n];
        let want: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let attended: Vec<usize> = (0..n)
                    .filter(|&j| if j == i { c.graph.self_loops() } else { c.graph.weight(i, j) > 0.0 })
                    .collect();
                // an isolated node without a self loop sees only masked logits
                // and attends uniformly
                let isolated = attended.is_empty();
                let set: Vec<usize> = if isolated { (0..n).collect() } else { attended };
                let e: Vec<f64> = set
                    .iter()
                    .map(|&j| {
                        if isolated {
                            return 0.0;
                        }
                        let v = dot(&z[i], &c.a_src) + dot(&z[j], &c.a_dst);
                        if v > 0.0 {
                            v
                        } else {
                            GAT_SLOPE * v
                        }
                    })
                    .collect();
                let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = e.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = ex.iter().sum();
                for (k, &j) in set.iter().enumerate() {
                    alpha_want[i][j] = ex[k] / s;
                }
                (0..o)
                    .map(|f| set.iter().enumerate().map(|(k, &j)| ex[k] / s * z[j][f]).sum::<f64>() + c.b.data()[f])
                    .collect()
            })
            .collect();
        let mask = Tensor::from_fn([n, n], |k| {
            let (i, j) = (k / n, k % n);
            let on = if i == j { c.graph.self_loops() } else { c.graph.neighbors(i).contains(&j) };
            if on {
                0.0
            } else {
                -1e30
            }
        });
        let mut tape = Tape::new();
        let (h, mk, w, a_s, a_d, b) = (
            tape.constant(c.h.clone()),
            tape.constant(mask),
            tape.constant(c.w.clone()),
            tape.constant(c.a_src.clone()),
            tape.constant(c.a_dst.clone()),
            tape.constant(c.b.clone()),
        );
        let (out, alpha) = gat_layer(&mut tape, h, mk, w, a_s, a_d, b, Activation::Identity).unwrap();
        assert_close(tape.value(out), &want, "gat", seed);
        assert_close(tape.value(alpha), &alpha_want, "gat attention", seed);
    }
}
