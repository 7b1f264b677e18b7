//! Sensor graph over the 19-electrode 10-20 montage.
//!
//! Nodes are electrodes on a unit-sphere head model. Every pair of distinct
//! electrodes is connected; edge weights come from the great-circle distance.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::Deserialize;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Canonical node order of the 10-20 montage.
pub const CANONICAL_CHANNELS: [&str; 19] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz", "P4", "T6", "O1",
    "O2",
];

const BUILTIN_POSITIONS: &str = include_str!("../data/electrodes_1020.json");

const UNIT_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ElectrodePosition {
    pub name: String,
    pub xyz: [f64; 3],
}

impl ElectrodePosition {
    pub fn new(name: impl Into<String>, xyz: [f64; 3]) -> Result<Self> {
        let name = name.into();
        let norm = norm3(xyz);
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotUnitNorm { name, norm });
        }
        Ok(ElectrodePosition { name, xyz })
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Great-circle distance in radians between two unit vectors.
pub fn geodesic_distance(a: [f64; 3], b: [f64; 3]) -> Result<f64> {
    for (label, v) in [("a", a), ("b", b)] {
        let norm = norm3(v);
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotUnitNorm {
                name: label.into(),
                norm,
            });
        }
    }
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    Ok(dot.clamp(-1.0, 1.0).acos())
}

#[derive(Deserialize)]
struct PositionTable {
    electrodes: Vec<PositionEntry>,
}

#[derive(Deserialize)]
struct PositionEntry {
    name: String,
    xyz: [f64; 3],
}

/// The shipped spherical 10-20 coordinate table, in canonical order.
pub fn builtin_positions() -> Vec<ElectrodePosition> {
    let table: PositionTable = serde_json::from_str(BUILTIN_POSITIONS).expect("built-in table parses");
    table
        .electrodes
        .into_iter()
        .map(|e| ElectrodePosition::new(e.name, e.xyz).expect("built-in table is unit norm"))
        .collect()
}

/// Reads an override file of the form `{"Fp1": [x, y, z], ...}`.
pub fn load_positions(path: &Path) -> Result<Vec<ElectrodePosition>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_positions(&text)
}

pub fn parse_positions(json: &str) -> Result<Vec<ElectrodePosition>> {
    let map: BTreeMap<String, [f64; 3]> = serde_json::from_str(json)?;
    map.into_iter().map(|(name, xyz)| ElectrodePosition::new(name, xyz)).collect()
}

/// How geodesic distance becomes an edge weight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeWeighting {
    /// `1 − d/π`: nearer sensors weigh more.
    #[default]
    Closeness,
    /// The raw distance in radians.
    RawDistance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphOptions {
    pub weighting: EdgeWeighting,
    /// Drop the self-loops from the GCN propagation matrix (and the GAT
    /// attended set) so each node aggregates only the other sensors.
    pub no_self_loop: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            weighting: EdgeWeighting::Closeness,
            no_self_loop: false,
        }
    }
}

/// Fully connected weighted sensor graph and its propagation matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MontageGraph {
    node_order: Vec<String>,
    weights: Tensor,
    s_gcn: Tensor,
    self_loops: bool,
}

impl MontageGraph {
    /// Graph over the canonical montage from the built-in coordinate table.
    pub fn standard() -> Self {
        Self::build(&builtin_positions(), GraphOptions::default()).expect("built-in montage is valid")
    }

    /// Builds the canonical 19-node graph. `positions` may be in any order
    /// but must cover every canonical electrode exactly once.
    pub fn build(positions: &[ElectrodePosition], opts: GraphOptions) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in positions {
            if !seen.insert(p.name.to_ascii_lowercase()) {
                return Err(Error::DuplicateElectrode(p.name.clone()));
            }
        }
        let missing: Vec<String> = CANONICAL_CHANNELS
            .iter()
            .filter(|c| !seen.contains(&c.to_ascii_lowercase()))
            .map(|c| c.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingChannels(missing));
        }
        let ordered: Vec<&ElectrodePosition> = CANONICAL_CHANNELS
            .iter()
            .map(|c| {
                positions
                    .iter()
                    .find(|p| p.name.eq_ignore_ascii_case(c))
                    .expect("presence checked")
            })
            .collect();
        Self::from_positions_in_order(&ordered, opts)
    }

    /// Builds a graph over arbitrary unit-sphere positions, keeping their order.
    pub fn from_positions(positions: &[ElectrodePosition], opts: GraphOptions) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in positions {
            if !seen.insert(p.name.to_ascii_lowercase()) {
                return Err(Error::DuplicateElectrode(p.name.clone()));
            }
        }
        let refs: Vec<&ElectrodePosition> = positions.iter().collect();
        Self::from_positions_in_order(&refs, opts)
    }

    fn from_positions_in_order(positions: &[&ElectrodePosition], opts: GraphOptions) -> Result<Self> {
        let n = positions.len();
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = geodesic_distance(positions[i].xyz, positions[j].xyz)?;
                let wij = match opts.weighting {
                    EdgeWeighting::Closeness => 1.0 - d / std::f64::consts::PI,
                    EdgeWeighting::RawDistance => d,
                };
                w[i * n + j] = wij;
                w[j * n + i] = wij;
            }
        }
        let names = positions.iter().map(|p| p.name.clone()).collect();
        Self::from_weights(names, Tensor::new([n, n], w)?, !opts.no_self_loop)
    }

    /// Builds from an explicit symmetric weight matrix with zero diagonal.
    pub fn from_weights(node_order: Vec<String>, weights: Tensor, self_loops: bool) -> Result<Self> {
        let n = node_order.len();
        if weights.shape() != [n, n] {
            return Err(Error::ShapeMismatch {
                op: "graph weights",
                lhs: vec![n, n],
                rhs: weights.shape().to_vec(),
            });
        }
        let s_gcn = normalized_propagation(&weights, self_loops);
        Ok(MontageGraph {
            node_order,
            weights,
            s_gcn,
            self_loops,
        })
    }

    /// Every off-diagonal edge has weight one.
    pub fn uniform(n: usize, self_loops: bool) -> Self {
        let w = Tensor::from_fn([n, n], |k| if k / n == k % n { 0.0 } else { 1.0 });
        let names = (0..n).map(|i| format!("n{i}")).collect();
        Self::from_weights(names, w, self_loops).expect("square by construction")
    }

    pub fn n(&self) -> usize {
        self.node_order.len()
    }

    pub fn node_order(&self) -> &[String] {
        &self.node_order
    }

    /// Weighted adjacency `A`.
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights.at2(i, j)
    }

    /// `D̂^(−1/2)(A + I)D̂^(−1/2)` (or without `I` when self-loops are off).
    pub fn s_gcn(&self) -> &Tensor {
        &self.s_gcn
    }

    pub fn self_loops(&self) -> bool {
        self.self_loops
    }

    /// Nodes other than `i` with a positive-weight edge.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n()).filter(|&j| j != i && self.weight(i, j) > 0.0).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.node_order.iter().position(|n| n.eq_ignore_ascii_case(name))
    }

    /// Reorders nodes: node `k` of the result is node `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        let w = Tensor::from_fn([n, n], |k| self.weight(perm[k / n], perm[k % n]));
        let names = perm.iter().map(|&p| self.node_order[p].clone()).collect();
        Self::from_weights(names, w, self.self_loops).expect("same size")
    }
}

fn normalized_propagation(w: &Tensor, self_loops: bool) -> Tensor {
    let n = w.rows();
    let loop_w = if self_loops { 1.0 } else { 0.0 };
    let a = |i: usize, j: usize| w.at2(i, j) + if i == j { loop_w } else { 0.0 };
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = (0..n).map(|j| a(i, j)).sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_fn([n, n], |k| {
        let (i, j) = (k / n, k % n);
        inv_sqrt_deg[i] * a(i, j) * inv_sqrt_deg[j]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn distances() {
        assert_eq!(geodesic_distance([0., 0., 1.], [0., 0., 1.]).unwrap(), 0.0);
        assert!((geodesic_distance([0., 0., 1.], [0., 0., -1.]).unwrap() - PI).abs() < 1e-15);
        assert!((geodesic_distance([1., 0., 0.], [0., 1., 0.]).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!(geodesic_distance([2., 0., 0.], [0., 1., 0.]).is_err());
    }

    #[test]
    fn builtin_table_is_canonical() {
        let pos = builtin_positions();
        let names: Vec<&str> = pos.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, CANONICAL_CHANNELS);
        for p in &pos {
            assert!((norm3(p.xyz) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn structure() {
        let g = MontageGraph::standard();
        assert_eq!(g.weights().shape(), &[19, 19]);
        let mut pairs = 0;
        for i in 0..19 {
            assert_eq!(g.weight(i, i), 0.0);
            for j in 0..19 {
                assert_eq!(g.weight(i, j), g.weight(j, i));
                if i < j {
                    assert!(g.weight(i, j) > 0.0 && g.weight(i, j) <= 1.0);
                    pairs += 1;
                }
            }
        }
        assert_eq!(pairs, 171);
    }

    #[test]
    fn frontal_neighbours_outweigh_front_to_back() {
        let pos = builtin_positions();
        let at = |n: &str| pos.iter().find(|p| p.name == n).unwrap().xyz;
        let w = |a: &str, b: &str| 1.0 - geodesic_distance(at(a), at(b)).unwrap() / PI;
        let g = MontageGraph::standard();
        let (fp1, fp2, o2) = (g.index_of("Fp1").unwrap(), g.index_of("Fp2").unwrap(), g.index_of("O2").unwrap());
        assert!((g.weight(fp1, fp2) - w("Fp1", "Fp2")).abs() < 1e-15);
        assert!((g.weight(fp1, o2) - w("Fp1", "O2")).abs() < 1e-15);
        assert!(g.weight(fp1, fp2) > g.weight(fp1, o2));
    }

    #[test]
    fn uniform_rows_are_stochastic() {
        // With uniform weights every node has degree n, so D̂^(−1/2)(A+I)D̂^(−1/2) = (A+I)/n.
        let g = MontageGraph::uniform(7, true);
        for i in 0..7 {
            let row_sum: f64 = (0..7).map(|j| g.s_gcn().at2(i, j)).sum();
            assert!((row_sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicate_and_missing() {
        let mut pos = builtin_positions();
        pos.push(pos[0].clone());
        assert!(matches!(
            MontageGraph::build(&pos, GraphOptions::default()),
            Err(Error::DuplicateElectrode(_))
        ));
        let pos: Vec<_> = builtin_positions().into_iter().filter(|p| p.name != "Pz").collect();
        match MontageGraph::build(&pos, GraphOptions::default()) {
            Err(Error::MissingChannels(m)) => assert_eq!(m, vec!["Pz".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn override_file_is_validated() {
        assert!(parse_positions(r#"{"Cz": [0, 0, 1]}"#).is_ok());
        assert!(matches!(
            parse_positions(r#"{"Cz": [0, 0, 2]}"#),
            Err(Error::NotUnitNorm { .. })
        ));
    }
}
