//! The graph adapter: an optional trainable length map, up to two GNN layers
//! (GCN, GraphSAGE or single-head GAT) and a zero-initialised projection back
//! to signal length, added residually to the input.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::montage::MontageGraph;
use crate::params::{Bindings, ModelBundle};

pub const PREFIX: &str = "adapter.";
pub const GAT_SLOPE: f64 = 0.2;
/// Additive logit for pairs outside the attended set; exp underflows to 0.
const MASKED_LOGIT: f64 = -1e30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnnKind {
    Gcn,
    Sage,
    Gat,
}

impl GnnKind {
    pub const ALL: [GnnKind; 3] = [GnnKind::Gcn, GnnKind::Sage, GnnKind::Gat];

    pub fn name(self) -> &'static str {
        match self {
            GnnKind::Gcn => "gcn",
            GnnKind::Sage => "sage",
            GnnKind::Gat => "gat",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    pub variant: GnnKind,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_layers")]
    pub n_layers: usize,
    #[serde(default = "default_heads")]
    pub gat_heads: usize,
    /// Signal length the backbone expects (`L`).
    pub input_len: usize,
    /// Raw segment length; a trainable length map is added when it differs from `input_len`.
    #[serde(default)]
    pub raw_len: Option<usize>,
    #[serde(default = "default_true")]
    pub residual: bool,
    #[serde(default)]
    pub sage_sample_k: Option<usize>,
    #[serde(default)]
    pub sage_weighted_mean: bool,
    #[serde(default)]
    pub activation: Activation,
}

fn default_hidden() -> usize {
    64
}
fn default_layers() -> usize {
    2
}
fn default_heads() -> usize {
    1
}
fn default_true() -> bool {
    true
}

impl AdapterConfig {
    pub fn new(variant: GnnKind, input_len: usize) -> Self {
        AdapterConfig {
            variant,
            hidden: default_hidden(),
            n_layers: default_layers(),
            gat_heads: default_heads(),
            input_len,
            raw_len: None,
            residual: true,
            sage_sample_k: None,
            sage_weighted_mean: false,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("adapter hidden size must be positive".into()));
        }
        if self.n_layers > 2 {
            return Err(Error::Config("adapter supports at most two GNN layers".into()));
        }
        if self.gat_heads != 1 {
            return Err(Error::Config("only single-head attention is supported".into()));
        }
        if self.input_len == 0 || self.raw_len == Some(0) {
            return Err(Error::Config("signal lengths must be positive".into()));
        }
        Ok(())
    }

    pub fn raw_len(&self) -> usize {
        self.raw_len.unwrap_or(self.input_len)
    }

    pub fn has_length_adapter(&self) -> bool {
        self.raw_len() != self.input_len
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.n_layers)
            .map(|l| if l == 0 { (self.input_len, self.hidden) } else { (self.hidden, self.hidden) })
            .collect()
    }

    /// Closed-form trainable-parameter counts.
    pub fn param_breakdown(&self) -> AdapterParamCount {
        let length_adapter = if self.has_length_adapter() {
            self.raw_len() * self.input_len + self.input_len
        } else {
            0
        };
        let gnn = self
            .layer_dims()
            .iter()
            .map(|&(i, o)| match self.variant {
                GnnKind::Gcn => i * o + o,
                GnnKind::Sage => 2 * i * o + o,
                GnnKind::Gat => i * o + 2 * o + o,
            })
            .sum();
        let out_proj = if self.n_layers > 0 {
            self.hidden * self.input_len + self.input_len
        } else {
            0
        };
        AdapterParamCount {
            length_adapter,
            gnn,
            out_proj,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterParamCount {
    pub length_adapter: usize,
    pub gnn: usize,
    pub out_proj: usize,
}

impl AdapterParamCount {
    pub fn total(&self) -> usize {
        self.length_adapter + self.gnn + self.out_proj
    }
}

fn layer_name(l: usize, field: &str) -> String {
    format!("{PREFIX}gnn{l}.{field}")
}

/// Freshly initialised adapter parameters, all trainable. The output
/// projection starts at zero so the residual adapter is an identity map.
pub fn init_params(cfg: &AdapterConfig, seed: u64) -> Result<ModelBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ModelBundle::new();
    if cfg.has_length_adapter() {
        let (li, lo) = (cfg.raw_len(), cfg.input_len);
        b.insert(format!("{PREFIX}length.w"), init::glorot(&mut rng, [li, lo], li, lo), true);
        b.insert(format!("{PREFIX}length.b"), Tensor::zeros([lo]), true);
    }
    for (l, (i, o)) in cfg.layer_dims().into_iter().enumerate() {
        match cfg.variant {
            GnnKind::Gcn => {
                b.insert(layer_name(l, "w"), init::glorot(&mut rng, [i, o], i, o), true);
            }
            GnnKind::Sage => {
                b.insert(layer_name(l, "w_self"), init::glorot(&mut rng, [i, o], i, o), true);
                b.insert(layer_name(l, "w_neigh"), init::glorot(&mut rng, [i, o], i, o), true);
            }
            GnnKind::Gat => {
                b.insert(layer_name(l, "w"), init::glorot(&mut rng, [i, o], i, o), true);
                b.insert(layer_name(l, "a_src"), init::glorot(&mut rng, [o], o, 1), true);
                b.insert(layer_name(l, "a_dst"), init::glorot(&mut rng, [o], o, 1), true);
            }
        }
        b.insert(layer_name(l, "b"), Tensor::zeros([o]), true);
    }
    if cfg.n_layers > 0 {
        b.insert(format!("{PREFIX}out.w"), Tensor::zeros([cfg.hidden, cfg.input_len]), true);
        b.insert(format!("{PREFIX}out.b"), Tensor::zeros([cfg.input_len]), true);
    }
    Ok(b)
}

/// Exact scalar count of every trainable adapter buffer in `params`.
pub fn count_params(params: &ModelBundle) -> usize {
    params.with_prefix(PREFIX).filter(|p| p.trainable).map(|p| p.value.numel()).sum()
}

/// Constant graph operators, precomputed once per graph.
#[derive(Clone, Debug)]
pub struct GraphOperators {
    n: usize,
    s_gcn: Tensor,
    gat_mask: Tensor,
    weights: Tensor,
    neighbors: Vec<Vec<usize>>,
}

impl GraphOperators {
    pub fn new(graph: &MontageGraph) -> Self {
        let n = graph.n();
        let neighbors: Vec<Vec<usize>> = (0..n).map(|i| graph.neighbors(i)).collect();
        let gat_mask = Tensor::from_fn([n, n], |k| {
            let (i, j) = (k / n, k % n);
            let attended = if i == j { graph.self_loops() } else { neighbors[i].contains(&j) };
            if attended {
                0.0
            } else {
                MASKED_LOGIT
            }
        });
        GraphOperators {
            n,
            s_gcn: graph.s_gcn().clone(),
            gat_mask,
            weights: graph.weights().clone(),
            neighbors,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Row-stochastic neighbour-mean matrix used by the SAGE layer. With
    /// `sample_k` each node averages a seeded uniform sample (without
    /// replacement) of its neighbours.
    pub fn sage_aggregation(&self, sample_k: Option<usize>, weighted: bool, seed: u64) -> Result<Tensor> {
        let n = self.n;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Tensor::zeros([n, n]);
        for i in 0..n {
            let nb = &self.neighbors[i];
            let chosen: Vec<usize> = match sample_k {
                Some(k) if k > nb.len() => {
                    return Err(Error::Config(format!(
                        "sage_sample_k = {k} exceeds the {} neighbours of node {i}",
                        nb.len()
                    )))
                }
                Some(k) => {
                    let mut idx: Vec<usize> = sample(&mut rng, nb.len(), k).into_iter().map(|p| nb[p]).collect();
                    idx.sort_unstable();
                    idx
                }
                None => nb.clone(),
            };
            if chosen.is_empty() {
                continue;
            }
            let coeffs: Vec<f64> = if weighted {
                let total: f64 = chosen.iter().map(|&j| self.weights.at2(i, j)).sum();
                chosen.iter().map(|&j| self.weights.at2(i, j) / total).collect()
            } else {
                vec![1.0 / chosen.len() as f64; chosen.len()]
            };
            for (&j, c) in chosen.iter().zip(coeffs) {
                m.data_mut()[i * n + j] = c;
            }
        }
        Ok(m)
    }
}

fn activate(tape: &mut Tape, x: Var, act: Activation) -> Result<Var> {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Identity => Ok(x),
    }
}

/// `act(S · H · W + b)`.
pub fn gcn_layer(tape: &mut Tape, h: Var, s_gcn: Var, w: Var, b: Var, act: Activation) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    let agg = tape.matmul(s_gcn, hw)?;
    let z = tape.add_row(agg, b)?;
    activate(tape, z, act)
}

/// `act(H · W_self + M · H · W_neigh + b)` with `M` the neighbour-mean matrix.
pub fn sage_layer(
    tape: &mut Tape,
    h: Var,
    aggregation: Var,
    w_self: Var,
    w_neigh: Var,
    b: Var,
    act: Activation,
) -> Result<Var> {
    let own = tape.matmul(h, w_self)?;
    let hn = tape.matmul(h, w_neigh)?;
    let neigh = tape.matmul(aggregation, hn)?;
    let sum = tape.add(own, neigh)?;
    let z = tape.add_row(sum, b)?;
    activate(tape, z, act)
}

/// Single-head graph attention. Returns the layer output and the attention
/// matrix `α` (rows sum to one over each node's attended set).
#[allow(clippy::too_many_arguments)]
pub fn gat_layer(
    tape: &mut Tape,
    h: Var,
    mask: Var,
    w: Var,
    a_src: Var,
    a_dst: Var,
    b: Var,
    act: Activation,
) -> Result<(Var, Var)> {
    let z = tape.matmul(h, w)?;
    let d_out = tape.shape(z)[1];
    let a_src = tape.reshape(a_src, &[d_out, 1])?;
    let a_dst = tape.reshape(a_dst, &[d_out, 1])?;
    let s = tape.matmul(z, a_src)?;
    let d = tape.matmul(z, a_dst)?;
    let e = tape.outer_add(s, d)?;
    let e = tape.leaky_relu(e, GAT_SLOPE)?;
    let e = tape.add(e, mask)?;
    let alpha = tape.softmax(e, 1)?;
    let agg = tape.matmul(alpha, z)?;
    let out = tape.add_row(agg, b)?;
    Ok((activate(tape, out, act)?, alpha))
}

/// `x · M + b`, or `x` itself when no length map is configured.
pub fn length_adapt(tape: &mut Tape, x: Var, params: &Bindings, cfg: &AdapterConfig) -> Result<Var> {
    if !cfg.has_length_adapter() {
        return Ok(x);
    }
    let len = tape.shape(x)[1];
    if len != cfg.raw_len() {
        return Err(Error::ShapeMismatch {
            op: "length_adapt",
            lhs: tape.shape(x).to_vec(),
            rhs: vec![cfg.raw_len(), cfg.input_len],
        });
    }
    let m = params.get(&format!("{PREFIX}length.w"))?;
    let b = params.get(&format!("{PREFIX}length.b"))?;
    let y = tape.matmul(x, m)?;
    tape.add_row(y, b)
}

/// Intermediate values of one adapter pass.
#[derive(Clone, Debug)]
pub struct AdapterTrace {
    pub output: Var,
    pub hidden: Option<Var>,
    pub attention: Vec<Var>,
}

/// `X' = length_adapt(x) + out_proj(GNN(length_adapt(x), A))`; the residual
/// term is dropped when `cfg.residual` is false.
pub fn adapter_forward(
    tape: &mut Tape,
    x: Var,
    ops: &GraphOperators,
    params: &Bindings,
    cfg: &AdapterConfig,
    sage_seed: u64,
) -> Result<AdapterTrace> {
    let rows = tape.shape(x)[0];
    if rows != ops.n() {
        return Err(Error::ShapeMismatch {
            op: "adapter_forward",
            lhs: tape.shape(x).to_vec(),
            rhs: vec![ops.n(), ops.n()],
        });
    }
    let xa = length_adapt(tape, x, params, cfg)?;
    if cfg.n_layers == 0 {
        return Ok(AdapterTrace {
            output: xa,
            hidden: None,
            attention: vec![],
        });
    }
    let mut h = xa;
    let mut attention = Vec::new();
    let graph_const = match cfg.variant {
        GnnKind::Gcn => tape.constant(ops.s_gcn.clone()),
        GnnKind::Sage => tape.constant(ops.sage_aggregation(cfg.sage_sample_k, cfg.sage_weighted_mean, sage_seed)?),
        GnnKind::Gat => tape.constant(ops.gat_mask.clone()),
    };
    for l in 0..cfg.n_layers {
        let p = |f: &str| params.get(&layer_name(l, f));
        h = match cfg.variant {
            GnnKind::Gcn => gcn_layer(tape, h, graph_const, p("w")?, p("b")?, cfg.activation)?,
            GnnKind::Sage => sage_layer(tape, h, graph_const, p("w_self")?, p("w_neigh")?, p("b")?, cfg.activation)?,
            GnnKind::Gat => {
                let (out, alpha) = gat_layer(
                    tape,
                    h,
                    graph_const,
                    p("w")?,
                    p("a_src")?,
                    p("a_dst")?,
                    p("b")?,
                    cfg.activation,
                )?;
                attention.push(alpha);
                out
            }
        };
    }
    let w_out = params.get(&format!("{PREFIX}out.w"))?;
    let b_out = params.get(&format!("{PREFIX}out.b"))?;
    let proj = tape.matmul(h, w_out)?;
    let proj = tape.add_row(proj, b_out)?;
    let output = if cfg.residual { tape.add(xa, proj)? } else { proj };
    Ok(AdapterTrace {
        output,
        hidden: Some(h),
        attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        init::normal(&mut ChaCha8Rng::seed_from_u64(seed), shape.to_vec(), 1.0)
    }

    #[test]
    fn identity_shortcut_and_shapes() {
        let cfg = AdapterConfig::new(GnnKind::Gcn, 16);
        let params = init_params(&cfg, 1).unwrap();
        assert!(!params.contains("adapter.length.w"));
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let x = tape.constant(rand_tensor(&[19, 16], 3));
        assert_eq!(length_adapt(&mut tape, x, &b, &cfg).unwrap(), x);

        let mut cfg = AdapterConfig::new(GnnKind::Gat, 32);
        cfg.raw_len = Some(8);
        let params = init_params(&cfg, 1).unwrap();
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let x = tape.constant(rand_tensor(&[19, 8], 3));
        let y = length_adapt(&mut tape, x, &b, &cfg).unwrap();
        assert_eq!(tape.shape(y), &[19, 32]);
    }

    #[test]
    fn constructed_identity_length_map() {
        let mut cfg = AdapterConfig::new(GnnKind::Gcn, 6);
        cfg.raw_len = Some(4);
        let mut params = init_params(&cfg, 0).unwrap();
        // identity on the first 4 outputs, zero padding afterwards
        params.get_mut("adapter.length.w").unwrap().value = Tensor::from_fn([4, 6], |k| if k / 6 == k % 6 { 1.0 } else { 0.0 });
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let xt = rand_tensor(&[3, 4], 9);
        let x = tape.constant(xt.clone());
        let y = length_adapt(&mut tape, x, &b, &cfg).unwrap();
        for r in 0..3 {
            assert_eq!(&tape.value(y).row(r)[..4], xt.row(r));
            assert_eq!(&tape.value(y).row(r)[4..], &[0.0, 0.0]);
        }
    }

    #[test]
    fn zero_input_gives_relu_bias() {
        let g = MontageGraph::uniform(4, true);
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::zeros([4, 3]));
        let s = tape.constant(g.s_gcn().clone());
        let w = tape.constant(rand_tensor(&[3, 2], 1));
        let b = tape.constant(Tensor::new([2], vec![0.7, -0.4]).unwrap());
        let y = gcn_layer(&mut tape, h, s, w, b, Activation::Relu).unwrap();
        for r in 0..4 {
            assert_eq!(tape.value(y).row(r), &[0.7, 0.0]);
        }
    }

    #[test]
    fn single_node_gcn() {
        let g = MontageGraph::uniform(1, true);
        assert_eq!(g.s_gcn().data(), &[1.0]);
        let mut tape = Tape::new();
        let ht = rand_tensor(&[1, 3], 2);
        let wt = rand_tensor(&[3, 2], 3);
        let h = tape.constant(ht.clone());
        let s = tape.constant(g.s_gcn().clone());
        let w = tape.constant(wt.clone());
        let b = tape.constant(Tensor::new([2], vec![0.1, 0.2]).unwrap());
        let y = gcn_layer(&mut tape, h, s, w, b, Activation::Relu).unwrap();
        for j in 0..2 {
            let z: f64 = (0..3).map(|k| ht.data()[k] * wt.at2(k, j)).sum::<f64>() + [0.1, 0.2][j];
            assert!((tape.value(y).data()[j] - z.max(0.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn sage_sampling_is_seeded() {
        let ops = GraphOperators::new(&MontageGraph::standard());
        let a = ops.sage_aggregation(Some(5), false, 11).unwrap();
        let b = ops.sage_aggregation(Some(5), false, 11).unwrap();
        assert_eq!(a, b);
        for i in 0..19 {
            let row = a.row(i);
            assert_eq!(row.iter().filter(|&&v| v > 0.0).count(), 5);
            assert_eq!(row[i], 0.0);
        }
        assert!(ops.sage_aggregation(Some(19), false, 0).is_err());
    }

    #[test]
    fn init_is_identity_map() {
        for kind in GnnKind::ALL {
            let cfg = AdapterConfig::new(kind, 24);
            let params = init_params(&cfg, 5).unwrap();
            let ops = GraphOperators::new(&MontageGraph::standard());
            let mut tape = Tape::new();
            let b = params.bind(&mut tape);
            let xt = rand_tensor(&[19, 24], 8);
            let x = tape.constant(xt.clone());
            let y = adapter_forward(&mut tape, x, &ops, &b, &cfg, 0).unwrap();
            let out = tape.value(y.output);
            assert_eq!(out.shape(), &[19, 24]);
            assert!(out.data().iter().zip(xt.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn counts() {
        let mut cfg = AdapterConfig::new(GnnKind::Gcn, 15360);
        let bd = cfg.param_breakdown();
        assert_eq!(bd.gnn, 987_264);
        assert_eq!(bd.length_adapter, 0);
        cfg.variant = GnnKind::Sage;
        let ratio = cfg.param_breakdown().gnn as f64 / bd.gnn as f64;
        assert!((1.9..=2.1).contains(&ratio), "{ratio}");
        cfg.n_layers = 0;
        assert_eq!(cfg.param_breakdown().total(), 0);
        assert_eq!(count_params(&init_params(&cfg, 0).unwrap()), 0);

        for kind in GnnKind::ALL {
            let mut cfg = AdapterConfig::new(kind, 40);
            cfg.raw_len = Some(30);
            cfg.hidden = 8;
            let params = init_params(&cfg, 0).unwrap();
            assert_eq!(count_params(&params), cfg.param_breakdown().total());
        }
    }
}
