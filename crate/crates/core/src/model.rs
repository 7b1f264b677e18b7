//! Complete classifiers: optional graph adapter, convolutional encoder,
//! four-chunk aggregator and linear head.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapter::{self, Activation, AdapterConfig, GnnKind, GraphOperators};
use crate::autodiff::{Tape, Tensor, Var};
use crate::backbone::{self, EncoderConfig, ENCODER_PREFIX};
use crate::error::{Error, Result};
use crate::head;
use crate::montage::MontageGraph;
use crate::params::{Bindings, ModelBundle};

/// What gets trained during fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Encoder and head both trainable.
    #[serde(rename = "baseline-bendr", alias = "baseline")]
    Baseline,
    /// Frozen encoder, head only.
    #[serde(rename = "frozen")]
    Frozen,
    #[serde(rename = "ega-gcn", alias = "gcn")]
    Gcn,
    #[serde(rename = "ega-sage", alias = "sage")]
    Sage,
    #[serde(rename = "ega-gat", alias = "gat")]
    Gat,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Baseline, Variant::Frozen, Variant::Gcn, Variant::Sage, Variant::Gat];
    pub const EGA: [Variant; 3] = [Variant::Gcn, Variant::Sage, Variant::Gat];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline-bendr",
            Variant::Frozen => "frozen",
            Variant::Gcn => "ega-gcn",
            Variant::Sage => "ega-sage",
            Variant::Gat => "ega-gat",
        }
    }

    pub fn gnn(self) -> Option<GnnKind> {
        match self {
            Variant::Gcn => Some(GnnKind::Gcn),
            Variant::Sage => Some(GnnKind::Sage),
            Variant::Gat => Some(GnnKind::Gat),
            _ => None,
        }
    }

    /// Whether the encoder stays fixed.
    pub fn freezes_backbone(self) -> bool {
        self != Variant::Baseline
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|_| {
            Error::Config(format!(
                "unknown variant `{s}`; expected one of baseline, frozen, gcn, sage, gat"
            ))
        })
    }
}

/// Adapter hyper-parameters shared by the three graph variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterSettings {
    pub hidden: usize,
    pub n_layers: usize,
    pub residual: bool,
    pub activation: Activation,
    pub sage_sample_k: Option<usize>,
    pub sage_weighted_mean: bool,
    /// Length fed to the encoder. When it differs from the segment length a
    /// trainable linear map converts between them.
    pub backbone_len: Option<usize>,
}

impl Default for AdapterSettings {
    fn default() -> Self {
        AdapterSettings {
            hidden: 64,
            n_layers: 2,
            residual: true,
            activation: Activation::Relu,
            sage_sample_k: None,
            sage_weighted_mean: false,
            backbone_len: None,
        }
    }
}

impl AdapterSettings {
    /// Adapter config for `kind` on segments of `segment_len` samples.
    pub fn config(&self, kind: GnnKind, segment_len: usize) -> AdapterConfig {
        let input_len = self.backbone_len.unwrap_or(segment_len);
        AdapterConfig {
            hidden: self.hidden,
            n_layers: self.n_layers,
            residual: self.residual,
            activation: self.activation,
            sage_sample_k: self.sage_sample_k,
            sage_weighted_mean: self.sage_weighted_mean,
            raw_len: (segment_len != input_len).then_some(segment_len),
            ..AdapterConfig::new(kind, input_len)
        }
    }
}

/// Closed-form trainable-parameter count of `variant`.
pub fn trainable_count(
    variant: Variant,
    enc: &EncoderConfig,
    settings: &AdapterSettings,
    segment_len: usize,
    n_classes: usize,
) -> usize {
    let head = head::param_count(enc.d_enc, n_classes);
    match variant {
        Variant::Baseline => enc.param_count() + head,
        Variant::Frozen => head,
        v => settings.config(v.gnn().expect("graph variant"), segment_len).param_breakdown().total() + head,
    }
}

/// Seeds of the independently initialised parts, derived from one base seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InitSeeds {
    pub head: u64,
    pub adapter: u64,
}

impl InitSeeds {
    pub fn derive(base: u64) -> Self {
        InitSeeds {
            head: mix_seed(base, 0x68656164),
            adapter: mix_seed(base, 0x61646170),
        }
    }
}

/// SplitMix64 of `base ⊕ tag`; decorrelates streams drawn from one seed.
pub fn mix_seed(base: u64, tag: u64) -> u64 {
    let mut z = (base ^ tag).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A classifier assembled from a pretrained encoder.
#[derive(Clone, Debug)]
pub struct Model {
    pub variant: Variant,
    pub encoder: EncoderConfig,
    pub adapter: Option<AdapterConfig>,
    pub n_classes: usize,
    pub params: ModelBundle,
    ops: Option<GraphOperators>,
}

impl Model {
    /// Takes the encoder weights out of `pretrained` (pre-training context
    /// weights are left behind), adds a fresh head and, for graph variants,
    /// a fresh adapter, and sets trainable flags for `variant`.
    pub fn from_pretrained(
        variant: Variant,
        pretrained: &ModelBundle,
        encoder: &EncoderConfig,
        settings: &AdapterSettings,
        graph: &MontageGraph,
        segment_len: usize,
        n_classes: usize,
        seeds: InitSeeds,
    ) -> Result<Self> {
        encoder.validate()?;
        if graph.n() != encoder.in_channels {
            return Err(Error::IncompatibleCheckpoint(vec![format!(
                "graph has {} nodes but the encoder expects {} channels",
                graph.n(),
                encoder.in_channels
            )]));
        }
        let mut params = ModelBundle::new();
        for p in pretrained.with_prefix(ENCODER_PREFIX) {
            params.insert(p.name.clone(), p.value.clone(), true);
        }
        let expected = backbone::init_encoder_params(encoder, 0)?;
        let mut mismatched = Vec::new();
        for p in expected.iter() {
            match params.get(&p.name) {
                Ok(have) if have.value.shape() == p.value.shape() => {}
                Ok(have) => mismatched.push(format!("{}: {:?} vs {:?}", p.name, have.value.shape(), p.value.shape())),
                Err(_) => mismatched.push(format!("{}: missing", p.name)),
            }
        }
        if !mismatched.is_empty() {
            return Err(Error::IncompatibleCheckpoint(mismatched));
        }
        if variant.freezes_backbone() {
            backbone::freeze(&mut params);
        }

        let adapter = match variant.gnn() {
            Some(kind) => {
                let cfg = settings.config(kind, segment_len);
                cfg.validate()?;
                params.merge(adapter::init_params(&cfg, seeds.adapter)?);
                Some(cfg)
            }
            None => None,
        };
        let encoded_len = adapter.as_ref().map_or(segment_len, |a| a.input_len);
        if encoder.output_len(encoded_len).is_none() {
            return Err(Error::TooShort {
                len: encoded_len,
                min: encoder.min_input_len(),
            });
        }
        params.merge(head::init_params(encoder.d_enc, n_classes, seeds.head));
        Ok(Model {
            variant,
            encoder: encoder.clone(),
            ops: adapter.as_ref().map(|_| GraphOperators::new(graph)),
            adapter,
            n_classes,
            params,
        })
    }

    /// Rebuilds a model from saved parameters.
    pub fn from_parts(
        variant: Variant,
        encoder: EncoderConfig,
        adapter: Option<AdapterConfig>,
        n_classes: usize,
        params: ModelBundle,
        graph: &MontageGraph,
    ) -> Result<Self> {
        if adapter.is_some() != variant.gnn().is_some() {
            return Err(Error::Config(format!("variant {variant} and adapter config disagree")));
        }
        Ok(Model {
            variant,
            ops: adapter.as_ref().map(|_| GraphOperators::new(graph)),
            encoder,
            adapter,
            n_classes,
            params,
        })
    }

    pub fn trainable_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// Pooled `[1, 4·d_enc]` features of one `[channels, len]` segment.
    pub fn features(&self, tape: &mut Tape, p: &Bindings, x: &Tensor, sage_seed: u64) -> Result<Var> {
        let mut h = tape.constant(x.clone());
        if let (Some(cfg), Some(ops)) = (&self.adapter, &self.ops) {
            h = adapter::adapter_forward(tape, h, ops, p, cfg, sage_seed)?.output;
        }
        let z = backbone::encode(tape, h, p, &self.encoder)?;
        head::aggregate(tape, z)
    }

    /// `[B, n_classes]` logits for a batch.
    pub fn logits(&self, tape: &mut Tape, p: &Bindings, batch: &[&Tensor], sage_seed: u64) -> Result<Var> {
        let rows = batch
            .iter()
            .map(|x| self.features(tape, p, x, sage_seed))
            .collect::<Result<Vec<_>>>()?;
        let pooled = tape.concat(&rows, 0)?;
        head::logits(tape, pooled, p)
    }

    /// Class probabilities, one row per segment.
    pub fn predict_proba(&self, batch: &[&Tensor]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(batch.len());
        for x in batch {
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape);
            let z = self.logits(&mut tape, &p, &[x], 0)?;
            let probs = tape.softmax(z, 1)?;
            out.push(tape.value(probs).data().to_vec());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("GCN".parse::<Variant>().unwrap(), Variant::Gcn);
        assert_eq!("baseline".parse::<Variant>().unwrap(), Variant::Baseline);
        assert!("mlp".parse::<Variant>().is_err());
    }

    #[test]
    fn counts_match_bundles() {
        let enc = EncoderConfig {
            d_enc: 8,
            ..Default::default()
        };
        let pre = backbone::init_encoder_params(&enc, 0).unwrap();
        let graph = MontageGraph::standard();
        let settings = AdapterSettings {
            hidden: 6,
            ..Default::default()
        };
        for v in Variant::ALL {
            let m = Model::from_pretrained(v, &pre, &enc, &settings, &graph, 128, 2, InitSeeds::derive(1)).unwrap();
            assert_eq!(m.trainable_count(), trainable_count(v, &enc, &settings, 128, 2), "{v}");
        }
    }

    #[test]
    fn shapes_are_checked() {
        let enc = EncoderConfig {
            d_enc: 8,
            ..Default::default()
        };
        let mut pre = backbone::init_encoder_params(&enc, 0).unwrap();
        let graph = MontageGraph::standard();
        let wider = EncoderConfig {
            d_enc: 16,
            ..Default::default()
        };
        let s = AdapterSettings::default();
        let err = Model::from_pretrained(Variant::Gcn, &pre, &wider, &s, &graph, 128, 2, InitSeeds::derive(0));
        assert!(matches!(err, Err(Error::IncompatibleCheckpoint(_))));
        pre.insert("backbone.enc0.w", Tensor::zeros([8, 19, 5]), true);
        assert!(Model::from_pretrained(Variant::Gcn, &pre, &enc, &s, &graph, 128, 2, InitSeeds::derive(0)).is_err());
        assert!(Model::from_pretrained(Variant::Gcn, &backbone::init_encoder_params(&enc, 0).unwrap(), &enc, &s, &graph, 50, 2, InitSeeds::derive(0)).is_err());
    }
}
