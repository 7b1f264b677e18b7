//! Finite-difference checks of every differentiable layer, with respect to
//! each of its inputs and parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adapter::{self, Activation, GraphOperators};
use crate::autodiff::{grad_check, Tape, Tensor, Var};
use crate::backbone::{contextualize, cosine_reconstruction_loss, PretrainConfig};
use crate::error::Result;
use crate::head;
use crate::init;
use crate::montage::MontageGraph;
use crate::params::{Bindings, ModelBundle};

pub const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-6;

pub const LAYERS: [&str; 10] = [
    "conv1d",
    "group_norm",
    "gcn",
    "sage",
    "gat",
    "attention",
    "aggregator",
    "cross_entropy",
    "length_adapter",
    "cosine_loss",
];

#[derive(Clone, Debug, Serialize)]
pub struct GradCase {
    pub layer: &'static str,
    pub seed: u64,
    /// Input or parameter the derivative is taken against.
    pub target: String,
    pub max_rel_error: f64,
    pub kinks: usize,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

type Forward = Box<dyn Fn(&mut Tape, &Bindings) -> Result<Var>>;

struct Layer {
    tensors: ModelBundle,
    forward: Forward,
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    init::normal(rng, shape.to_vec(), 1.0)
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Result<MontageGraph> {
    use rand::Rng;
    let mut w = Tensor::zeros([n, n]);
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.random_range(0.1..1.0);
            w.data_mut()[i * n + j] = v;
            w.data_mut()[j * n + i] = v;
        }
    }
    MontageGraph::from_weights((0..n).map(|i| format!("n{i}")).collect(), w, true)
}

fn build(layer: &str, seed: u64) -> Result<Layer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = ModelBundle::new();
    let mut put = |name: &str, shape: &[usize], rng: &mut ChaCha8Rng| t.insert(name, normal(rng, shape), false);
    let forward: Forward = match layer {
        "conv1d" => {
            put("x", &[3, 13], &mut rng);
            put("w", &[4, 3, 3], &mut rng);
            put("b", &[4], &mut rng);
            Box::new(|tape, p| tape.conv1d(p.get("x")?, p.get("w")?, Some(p.get("b")?), 2, 1))
        }
        "group_norm" => {
            put("x", &[4, 7], &mut rng);
            put("gamma", &[4], &mut rng);
            put("beta", &[4], &mut rng);
            Box::new(|tape, p| tape.group_norm(p.get("x")?, p.get("gamma")?, p.get("beta")?, 2, 1e-5))
        }
        "gcn" | "sage" | "gat" => {
            let n = 5;
            let ops = GraphOperators::new(&random_graph(&mut rng, n)?);
            put("h", &[n, 6], &mut rng);
            put("w", &[6, 4], &mut rng);
            put("b", &[4], &mut rng);
            match layer {
                "gcn" => {
                    let s = MontageGraph::from_weights(
                        (0..n).map(|i| format!("n{i}")).collect(),
                        random_graph(&mut rng, n)?.weights().clone(),
                        true,
                    )?
                    .s_gcn()
                    .clone();
                    Box::new(move |tape, p| {
                        let s = tape.constant(s.clone());
                        adapter::gcn_layer(tape, p.get("h")?, s, p.get("w")?, p.get("b")?, Activation::Relu)
                    })
                }
                "sage" => {
                    put("w_neigh", &[6, 4], &mut rng);
                    let agg = ops.sage_aggregation(Some(3), false, seed)?;
                    Box::new(move |tape, p| {
                        let m = tape.constant(agg.clone());
                        adapter::sage_layer(tape, p.get("h")?, m, p.get("w")?, p.get("w_neigh")?, p.get("b")?, Activation::Relu)
                    })
                }
                _ => {
                    put("a_src", &[4], &mut rng);
                    put("a_dst", &[4], &mut rng);
                    // attend to all pairs except node 0 → node 4
                    let mut mask = Tensor::zeros([n, n]);
                    mask.data_mut()[4] = -1e30;
                    Box::new(move |tape, p| {
                        let m = tape.constant(mask.clone());
                        let (out, _) = adapter::gat_layer(
                            tape,
                            p.get("h")?,
                            m,
                            p.get("w")?,
                            p.get("a_src")?,
                            p.get("a_dst")?,
                            p.get("b")?,
                            Activation::Identity,
                        )?;
                        Ok(out)
                    })
                }
            }
        }
        "attention" => {
            let d = 4;
            let cfg = PretrainConfig {
                ff_mult: 2,
                ..PretrainConfig::default()
            };
            put("x", &[5, d], &mut rng);
            for (name, shape) in [
                ("wq", vec![d, d]),
                ("wk", vec![d, d]),
                ("wv", vec![d, d]),
                ("wo", vec![d, d]),
                ("bq", vec![d]),
                ("bk", vec![d]),
                ("bv", vec![d]),
                ("bo", vec![d]),
                ("ff1.w", vec![d, 2 * d]),
                ("ff1.b", vec![2 * d]),
                ("ff2.w", vec![2 * d, d]),
                ("ff2.b", vec![d]),
            ] {
                let v = init::normal(&mut rng, shape, 0.5);
                t.insert(format!("backbone.ctx.{name}"), v, false);
            }
            Box::new(move |tape, p| contextualize(tape, p.get("x")?, p, &cfg))
        }
        "aggregator" => {
            put("z", &[3, 11], &mut rng);
            Box::new(|tape, p| head::aggregate(tape, p.get("z")?))
        }
        "cross_entropy" => {
            put("logits", &[4, 3], &mut rng);
            Box::new(|tape, p| tape.cross_entropy(p.get("logits")?, &[0, 2, 1, 2]))
        }
        "length_adapter" => {
            put("x", &[3, 7], &mut rng);
            put("adapter.length.w", &[7, 5], &mut rng);
            put("adapter.length.b", &[5], &mut rng);
            let mut cfg = adapter::AdapterConfig::new(adapter::GnnKind::Gcn, 5);
            cfg.raw_len = Some(7);
            Box::new(move |tape, p| adapter::length_adapt(tape, p.get("x")?, p, &cfg))
        }
        "cosine_loss" => {
            put("pred", &[4, 3], &mut rng);
            put("orig", &[4, 3], &mut rng);
            Box::new(|tape, p| cosine_reconstruction_loss(tape, p.get("pred")?, p.get("orig")?, &[0.5, 0.0, 0.25, 0.25]))
        }
        other => return Err(crate::Error::Config(format!("unknown layer `{other}`"))),
    };
    Ok(Layer { tensors: t, forward })
}

/// Checks `layer` with the given seed against every tensor it reads. Vector
/// outputs are reduced with a fixed random projection.
pub fn check_layer(layer: &'static str, seed: u64) -> Result<Vec<GradCase>> {
    let Layer { tensors, forward } = build(layer, seed)?;
    let probe = {
        let mut tape = Tape::new();
        let p = tensors.bind(&mut tape);
        let out = forward(&mut tape, &p)?;
        tape.value(out).shape().to_vec()
    };
    let projection = init::normal(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5), probe, 1.0);
    let mut cases = Vec::new();
    for target in tensors.iter() {
        let name = target.name.clone();
        let f = |tape: &mut Tape, x: Var| -> Result<Var> {
            let mut p = tensors.bind(tape);
            p.insert(name.clone(), x);
            let out = forward(tape, &p)?;
            let r = tape.constant(projection.clone());
            let prod = tape.mul(out, r)?;
            tape.sum(prod)
        };
        let report = grad_check(f, &target.value, STEP)?;
        cases.push(GradCase {
            layer,
            seed,
            target: name,
            max_rel_error: report.max_rel_error,
            kinks: report.kinks.len(),
        });
    }
    Ok(cases)
}

/// Every layer, seeds `0..seeds`.
pub fn run_suite(seeds: u64) -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    for layer in LAYERS {
        for seed in 0..seeds {
            out.extend(check_layer(layer, seed)?);
        }
    }
    Ok(out)
}
