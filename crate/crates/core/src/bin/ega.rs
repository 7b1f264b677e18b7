use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ega::checkpoint::Checkpoint;
use ega::harness::{self, finetune, gradsuite, CheckpointConfig, ExperimentConfig, Pretrained, Task};
use ega::model::{trainable_count, Variant};
use ega::signal::{self, io, PreprocessConfig, Recording, SynthSpec};

#[derive(Parser)]
#[command(name = "ega", version, about = "Graph adapter fine-tuning for a frozen EEG encoder")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic two-class EEGB dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Subjects per class.
        #[arg(long)]
        subjects: Option<usize>,
        /// Samples per segment.
        #[arg(long)]
        len: Option<usize>,
        /// SynthSpec JSON; flags override it.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Resample, select channels, filter and segment recordings.
    Preprocess {
        /// An .eegb or .csv file, or a directory of them.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256.0)]
        resample_hz: f64,
        /// Notch frequency in Hz, or `off`.
        #[arg(long, default_value = "50")]
        notch: String,
        #[arg(long, default_value_t = 30.0)]
        notch_q: f64,
        /// Pass band `lo:hi` in Hz, or `off`.
        #[arg(long, default_value = "0.1:100")]
        band: String,
        #[arg(long, default_value_t = 4)]
        order: usize,
        #[arg(long, default_value_t = 60.0)]
        window_s: f64,
        /// Sample rate of CSV inputs.
        #[arg(long)]
        csv_rate: Option<f64>,
        /// Label given to CSV inputs.
        #[arg(long)]
        label: Option<usize>,
    },
    /// Pre-train the encoder by masked reconstruction.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Built-in recipe (`mdd` or `tuab`) used when no config is given.
        #[arg(long)]
        recipe: Option<String>,
        /// Directory of EEGB segments; defaults to the config's task.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// k-fold fine-tuning from a pre-trained checkpoint.
    Finetune {
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory of labelled EEGB segments; omit for the synthetic task.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        recipe: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Electrode position override JSON.
        #[arg(long)]
        positions: Option<PathBuf>,
        /// Where report.json (and fold models) go.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also write each fold's trained model as foldN.egac.
        #[arg(long)]
        save_models: bool,
    },
    /// Score a fine-tuned model checkpoint on labelled EEGB segments.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Print trainable-parameter counts per variant.
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Segment length; defaults to the config's synthetic length.
        #[arg(long)]
        len: Option<usize>,
        #[arg(long)]
        d_enc: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

fn load_config(path: Option<&Path>, recipe: Option<&str>) -> Result<ExperimentConfig> {
    Ok(match (path, recipe) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(r)) => ExperimentConfig::recipe(r)?,
        (None, None) => ExperimentConfig::default(),
    })
}

fn parse_off<T>(s: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Option<T>> {
    if s.eq_ignore_ascii_case("off") {
        Ok(None)
    } else {
        parse(s).map(Some)
    }
}

fn read_input(path: &Path, csv_rate: Option<f64>, label: Option<usize>) -> Result<Recording> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => {
            let rate = csv_rate.context("CSV input needs --csv-rate")?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("csv");
            Ok(io::read_csv(path, rate, label, stem)?)
        }
        _ => Ok(io::read_eegb(path)?),
    }
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Synth {
            out,
            seed,
            subjects,
            len,
            spec,
        } => {
            let mut s = match spec {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)?,
                None => SynthSpec::default(),
            };
            if let Some(n) = subjects {
                s.n_subjects_per_class = n;
            }
            if let Some(l) = len {
                s.segment_len = l;
            }
            let segments = signal::synthesize_dataset(&s, seed)?;
            let files = io::write_segments(&out, &segments, &s.channel_names())?;
            println!("wrote {} segments to {}", files.len(), out.display());
        }
        Cmd::Preprocess {
            input,
            out,
            resample_hz,
            notch,
            notch_q,
            band,
            order,
            window_s,
            csv_rate,
            label,
        } => {
            let cfg = PreprocessConfig {
                resample_hz,
                notch_hz: parse_off(&notch, |s| Ok(s.parse::<f64>()?))?,
                notch_q,
                band: parse_off(&band, |s| {
                    let (lo, hi) = s.split_once(':').context("--band expects lo:hi")?;
                    Ok([lo.parse()?, hi.parse()?])
                })?,
                band_order: order,
                window_s,
            };
            let inputs: Vec<PathBuf> = if input.is_dir() {
                let mut v: Vec<PathBuf> = std::fs::read_dir(&input)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("eegb" | "csv")))
                    .collect();
                v.sort();
                v
            } else {
                vec![input]
            };
            let names: Vec<String> = ega::montage::CANONICAL_CHANNELS.iter().map(|s| s.to_string()).collect();
            let mut total = 0;
            for path in &inputs {
                let rec = read_input(path, csv_rate, label).with_context(|| path.display().to_string())?;
                if rec.label.is_none() {
                    bail!("{}: recording has no label (use --label)", path.display());
                }
                let done = signal::preprocess(&rec, &cfg).with_context(|| path.display().to_string())?;
                io::write_segments(&out, &done.segments, &names)?;
                println!(
                    "{}: {} segments, {} tail samples discarded",
                    path.display(),
                    done.segments.len(),
                    done.discarded_samples
                );
                total += done.segments.len();
            }
            println!("wrote {total} segments to {}", out.display());
        }
        Cmd::Pretrain {
            config,
            out,
            recipe,
            data,
            max_steps,
        } => {
            let mut cfg = load_config(config.as_deref(), recipe.as_deref())?;
            if let Some(d) = data {
                cfg.task = Task::EegbDir;
                cfg.data_dir = Some(d);
            }
            let start = Instant::now();
            let inputs = harness::pretraining_data(&cfg)?;
            let (ckpt, report) = harness::pretrain_backbone(&cfg, &inputs, max_steps)?;
            ckpt.save(&out)?;
            let first = report.losses.first().copied().unwrap_or(f64::NAN);
            let last = report.losses.last().copied().unwrap_or(f64::NAN);
            println!(
                "pre-trained on {} segments, {} steps, loss {first:.4} -> {last:.4}, {:.1}s; wrote {}",
                inputs.len(),
                report.losses.len(),
                start.elapsed().as_secs_f64(),
                out.display()
            );
        }
        Cmd::Finetune {
            variant,
            ckpt,
            data,
            k,
            seed,
            config,
            recipe,
            epochs,
            lr,
            positions,
            out,
            save_models,
        } => {
            let mut cfg = load_config(config.as_deref(), recipe.as_deref())?;
            if let Some(v) = variant {
                cfg.variant = v;
            }
            if let Some(d) = data {
                cfg.task = Task::EegbDir;
                cfg.data_dir = Some(d);
            }
            if let Some(k) = k {
                cfg.k_folds = k;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(l) = lr {
                cfg.lr = l;
            }
            if positions.is_some() {
                cfg.positions = positions;
            }
            cfg.validate()?;
            let pre = Pretrained::from_checkpoint(Checkpoint::load(&ckpt)?)?;
            let data = harness::load_dataset(&cfg)?;
            std::fs::create_dir_all(&out)?;
            let report = harness::run_experiment(&cfg, &pre, &data, |run| {
                if save_models {
                    let path = out.join(format!("fold{}.egac", run.report.fold));
                    finetune::model_checkpoint(&cfg, run)?.save(&path)?;
                }
                Ok(())
            })?;
            let path = out.join("report.json");
            std::fs::write(&path, report.to_json()?)?;
            print!("{}", report.table());
            println!("wrote {}", path.display());
        }
        Cmd::Eval { ckpt, data } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let (graph_opts, positions) = match ckpt.config_as::<CheckpointConfig>()? {
                CheckpointConfig::Finetuned { graph, positions, .. } => (graph, positions),
                CheckpointConfig::Pretrained { .. } => bail!("eval needs a fine-tuned model checkpoint (finetune --save-models)"),
            };
            let segments = io::load_segments(&data)?;
            if segments.is_empty() {
                bail!("no .eegb files in {}", data.display());
            }
            let cfg = ExperimentConfig {
                graph: graph_opts,
                positions,
                ..ExperimentConfig::default()
            };
            let graph = harness::graph_for(&cfg, segments[0].n_channels())?;
            let model = finetune::model_from_checkpoint(&ckpt, &graph)?;
            let batch: Vec<_> = segments.iter().map(|s| &s.samples).collect();
            let probs = model.predict_proba(&batch)?;
            let labels: Vec<usize> = segments.iter().map(|s| s.label).collect();
            let preds: Vec<usize> = probs.iter().map(|p| harness::metrics::argmax(p)).collect();
            let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
            let f1 = harness::f1_score(&preds, &labels)?;
            let au = harness::auroc(&scores, &labels)
                .map(|a| format!("{a:.4}"))
                .unwrap_or_else(|e| format!("n/a ({e})"));
            println!("{} segments  variant {}  F1 {f1:.4}  AUROC {au}", segments.len(), model.variant);
        }
        Cmd::Params {
            config,
            len,
            d_enc,
            hidden,
            json,
        } => {
            let mut cfg = load_config(config.as_deref(), None)?;
            if let Some(d) = d_enc {
                cfg.encoder.d_enc = d;
            }
            if let Some(h) = hidden {
                cfg.adapter.hidden = h;
            }
            let len = len.unwrap_or(cfg.synth.segment_len);
            let counts: Vec<(Variant, usize)> = Variant::ALL
                .iter()
                .map(|&v| (v, trainable_count(v, &cfg.encoder, &cfg.adapter, len, cfg.n_classes)))
                .collect();
            let backbone_full = cfg.encoder.param_count() + cfg.pretrain.param_count(cfg.encoder.d_enc);
            if json {
                let mut map = serde_json::Map::new();
                for (v, c) in &counts {
                    map.insert(v.name().into(), (*c).into());
                }
                map.insert("full-backbone".into(), backbone_full.into());
                println!("{}", serde_json::to_string_pretty(&map)?);
            } else {
                println!("segment length {len}, d_enc {}, hidden {}", cfg.encoder.d_enc, cfg.adapter.hidden);
                println!("{:<16} {:>12}", "variant", "trainable");
                for (v, c) in &counts {
                    println!("{:<16} {:>12}", v.name(), c);
                }
                println!("{:<16} {:>12}", "full-backbone", backbone_full);
            }
        }
        Cmd::Gradcheck { seeds } => {
            let start = Instant::now();
            let cases = gradsuite::run_suite(seeds)?;
            let mut failed = 0;
            println!("{:<16} {:>12} {:>6} {:>6}", "layer", "max rel err", "cases", "kinks");
            for layer in gradsuite::LAYERS {
                let mine: Vec<_> = cases.iter().filter(|c| c.layer == layer).collect();
                let worst = mine.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
                let kinks: usize = mine.iter().map(|c| c.kinks).sum();
                failed += mine.iter().filter(|c| !c.passed()).count();
                println!("{layer:<16} {worst:>12.3e} {:>6} {kinks:>6}", mine.len());
            }
            println!("{} cases, {failed} failed, {:.1}s", cases.len(), start.elapsed().as_secs_f64());
            if failed > 0 {
                bail!("{failed} gradient checks exceeded {:e}", gradsuite::TOLERANCE);
            }
        }
    }
    Ok(())
}
