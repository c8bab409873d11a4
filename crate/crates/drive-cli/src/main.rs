//! `drive`: dataset generation, hard-negative mining, loss auditing, toy
//! training, and retrieval evaluation from one binary.
//!
//! Every artifact-writing subcommand drops a `<file>.meta.json` sidecar
//! with the resolved config and its hash; rerunning with identical inputs
//! and seeds reproduces every output byte for byte.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use drive_core::annotation::{Annotator, HttpClient, StubClient};
use drive_core::config::{load_config_from, write_sidecar, AppConfig};
use drive_core::dataset_io::{
    read_hnmap, read_samples, read_tagged_captions, write_hnmap, write_samples,
};
use drive_core::encoder::EncoderParams;
use drive_core::eval::{emit_report, evaluate, ReportFormat};
use drive_core::gradcheck::{audit_gradients, AuditConfig, AuditLoss};
use drive_core::lexicon::EmbeddingLexicon;
use drive_core::mining::{dataset_stats, mine_with_workers, DatasetMode};
use drive_core::similarity::sweep_threshold;
use drive_core::synth::{synth_world, World};
use drive_core::train::{train, LossMode, TrainConfig};
use drive_core::triplet::{admit_sample, extract_triplet, render_caption, Phrase, Sample};

#[derive(Parser)]
#[command(
    name = "drive",
    version,
    about = "Relation-focused contrastive learning at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key-value config file (`similarity.tau = 0.93`)
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override single config keys, e.g. `--set train.epochs=3`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self, extra: &[(String, String)]) -> Result<AppConfig> {
        self.resolve_from(AppConfig::default(), extra)
    }

    fn resolve_from(&self, base: AppConfig, extra: &[(String, String)]) -> Result<AppConfig> {
        let mut overrides = Vec::new();
        for s in &self.sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {s:?}"))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        overrides.extend(extra.iter().cloned());
        Ok(load_config_from(base, self.config.as_deref(), &overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simplify raw captions into triplet samples via the annotation
    /// service or its offline rule stub
    Annotate {
        #[command(flatten)]
        config: ConfigArgs,

        /// Input captions, JSONL: {"id", "caption", ["img"], ["scene_rel"], ["obj_count"], ["bidir"]}
        #[arg(long, conflicts_with = "tagged")]
        captions: Option<PathBuf>,

        /// Pre-tagged captions, JSONL: {"id", "raw", "tokens": [{"surface","lemma","pos","head","dep"}]};
        /// triplets are extracted locally, only the verb state is annotated
        #[arg(long)]
        tagged: Option<PathBuf>,

        /// Offline stub rules (JSON with "verbs" and "overrides")
        #[arg(long)]
        fixture: Option<PathBuf>,

        /// Annotation endpoint; DRIVE_ANNOTATION_URL overrides config
        #[arg(long)]
        url: Option<String>,

        /// Output dataset JSONL
        #[arg(long)]
        out: PathBuf,
    },

    /// Mine hard negatives over a triplet dataset
    Mine {
        #[command(flatten)]
        config: ConfigArgs,

        #[arg(long, value_parser = parse_mode)]
        mode: DatasetMode,

        #[arg(long)]
        dataset: PathBuf,

        /// Word vectors: header "<vocab> <dim>", then "word v1 .. vd" lines
        #[arg(long)]
        lexicon: PathBuf,

        /// Synonym sets, JSON: [["driving","steering"], ...]
        #[arg(long)]
        synonyms: Option<PathBuf>,

        /// Cosine threshold for approximate equality
        #[arg(long)]
        tau: Option<f64>,

        #[arg(long, default_value_t = 1)]
        workers: usize,

        /// Output hard-negative map JSONL
        #[arg(long)]
        out: PathBuf,
    },

    /// F1 sweep of the cosine threshold on a labeled pair file
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,

        /// Labeled pairs, JSONL: {"a", "b", "label"}
        #[arg(long)]
        pairs: PathBuf,

        #[arg(long)]
        lexicon: PathBuf,

        #[arg(long, default_value_t = 0.80)]
        lo: f64,

        #[arg(long, default_value_t = 0.99)]
        hi: f64,

        #[arg(long, default_value_t = 0.01)]
        step: f64,

        /// Output JSON (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Relation and entity statistics of a dataset
    Stats {
        #[command(flatten)]
        config: ConfigArgs,

        #[arg(long)]
        dataset: PathBuf,

        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Generate a synthetic relational world
    Synth {
        #[command(flatten)]
        config: ConfigArgs,

        /// World seed (shorthand for --set world.seed=N)
        #[arg(long)]
        seed: Option<u64>,

        /// Output samples JSONL; the hard-negative map lands next to it
        #[arg(long)]
        out: PathBuf,
    },

    /// Train the toy dual encoders on a world
    Train {
        #[command(flatten)]
        config: ConfigArgs,

        /// World samples JSONL (hard negatives read from the sibling file
        /// unless --hnmap is given)
        #[arg(long)]
        world: PathBuf,

        #[arg(long)]
        hnmap: Option<PathBuf>,

        #[arg(long, value_parser = parse_loss_mode)]
        mode: LossMode,

        /// Training preset: `toy` (desk-scale learning rate) or `paper`
        /// (reference fine-tuning defaults)
        #[arg(long, default_value = "toy")]
        preset: String,

        /// Train seed (shorthand for --set train.seed=N)
        #[arg(long)]
        seed: Option<u64>,

        #[arg(long)]
        out_params: PathBuf,

        /// Per-epoch CSV: epoch, loss, r1_t2i, r1_i2t
        #[arg(long)]
        out_history: PathBuf,
    },

    /// Evaluate within-candidate-set retrieval
    Eval {
        #[command(flatten)]
        config: ConfigArgs,

        #[arg(long)]
        params: PathBuf,

        #[arg(long)]
        world: PathBuf,

        #[arg(long)]
        hnmap: Option<PathBuf>,

        /// Subset split: `state` adds stative/dynamic rates
        #[arg(long)]
        subsets: Option<String>,

        /// Reference subset for the signed accuracy deltas
        #[arg(long)]
        reference: Option<String>,

        #[arg(long, default_value = "json")]
        format: String,

        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Finite-difference audit of the analytic loss gradients
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,

        /// One of clip, croco, hn-text, hn-image, hn, all
        #[arg(long, default_value = "all")]
        loss: String,

        #[arg(long, default_value_t = 0)]
        seed: u64,

        #[arg(long, default_value_t = 1e-4)]
        step: f64,

        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<DatasetMode, String> {
    s.parse()
}

fn parse_loss_mode(s: &str) -> Result<LossMode, String> {
    s.parse()
}

/// Sibling path for a dataset's hard-negative map: `world.jsonl` maps to
/// `world.hn.jsonl`.
fn hnmap_sibling(samples: &Path) -> PathBuf {
    match samples.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => samples.with_extension("hn.jsonl"),
        _ => {
            let mut name = samples.as_os_str().to_os_string();
            name.push(".hn.jsonl");
            PathBuf::from(name)
        }
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn emit_or_print(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => write_bytes(path, bytes),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

#[derive(Debug, Deserialize)]
struct CaptionLine {
    id: String,
    caption: String,
    #[serde(default)]
    img: Vec<f64>,
    #[serde(default = "one")]
    scene_rel: u32,
    #[serde(default = "one")]
    obj_count: u32,
    #[serde(default = "yes")]
    bidir: bool,
}

fn one() -> u32 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Default)]
struct DropCounters {
    filter: u64,
    annotation: u64,
    extraction: u64,
}

fn cmd_annotate(
    config: &ConfigArgs,
    captions: Option<&Path>,
    tagged: Option<&Path>,
    fixture: Option<&Path>,
    url: Option<String>,
    out: &Path,
) -> Result<()> {
    let cfg = config.resolve(&[])?;
    let url = std::env::var("DRIVE_ANNOTATION_URL")
        .ok()
        .or(url)
        .or_else(|| cfg.annotation.url.clone());

    let client: Box<dyn drive_core::annotation::AnnotationClient> = match (&url, fixture) {
        (Some(url), _) => Box::new(HttpClient::new(
            url,
            Duration::from_millis(cfg.annotation.timeout_ms),
        )?),
        (None, Some(fixture)) => Box::new(StubClient::from_file(fixture)?),
        (None, None) => {
            return Err(anyhow!(
                "annotate needs --fixture for the offline stub or --url / annotation.url"
            ))
        }
    };
    let mut annotator = Annotator::new(client);
    if let Some(cache) = &cfg.annotation.cache_path {
        annotator = annotator.with_cache_file(cache)?;
    }

    let mut samples = Vec::new();
    let mut drops = DropCounters::default();
    match (captions, tagged) {
        (Some(captions), None) => annotate_raw(captions, &annotator, &mut samples, &mut drops)?,
        (None, Some(tagged)) => annotate_tagged(tagged, &annotator, &mut samples, &mut drops)?,
        _ => {
            return Err(anyhow!(
                "annotate needs exactly one of --captions or --tagged"
            ))
        }
    }

    write_samples(out, &samples)?;
    write_sidecar(out, &cfg)?;
    eprintln!(
        "{}",
        serde_json::json!({
            "admitted": samples.len(),
            "dropped_filter": drops.filter,
            "dropped_annotation": drops.annotation,
            "dropped_extraction": drops.extraction,
        })
    );
    Ok(())
}

fn annotate_raw(
    captions: &Path,
    annotator: &Annotator,
    samples: &mut Vec<Sample>,
    drops: &mut DropCounters,
) -> Result<()> {
    let text = std::fs::read_to_string(captions)
        .with_context(|| format!("reading {}", captions.display()))?;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: CaptionLine = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", captions.display(), lineno + 1))?;
        if !admit_sample(record.scene_rel, record.obj_count) {
            drops.filter += 1;
            continue;
        }
        let (tagged, state) = match annotator.annotate(&record.caption) {
            Ok(pair) => pair,
            Err(drive_core::annotation::AnnotationError::AnnotationUnavailable(_)) => {
                drops.annotation += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let triplet = match extract_triplet(&tagged) {
            Ok(t) => t,
            Err(_) => {
                drops.extraction += 1;
                continue;
            }
        };
        samples.push(Sample {
            id: record.id,
            raw_caption: record.caption,
            triplet,
            state,
            scene_relation_count: record.scene_rel,
            object_count: record.obj_count,
            image_features: record.img,
            bidirectional_plausible: record.bidir,
        });
    }
    Ok(())
}

/// Pre-tagged inputs skip caption simplification: the triplet comes from
/// the stored parse and the client only classifies the verb state of the
/// rendered caption.
fn annotate_tagged(
    tagged: &Path,
    annotator: &Annotator,
    samples: &mut Vec<Sample>,
    drops: &mut DropCounters,
) -> Result<()> {
    for record in read_tagged_captions(tagged)? {
        if !admit_sample(record.scene_rel, record.obj_count) {
            drops.filter += 1;
            continue;
        }
        let triplet = match record.tagged_caption().map(|tc| extract_triplet(&tc)) {
            Ok(Ok(t)) => t,
            _ => {
                drops.extraction += 1;
                continue;
            }
        };
        let rendered = render_caption(&triplet);
        let state = match annotator.annotate(&rendered) {
            Ok((_, state)) => state,
            Err(drive_core::annotation::AnnotationError::AnnotationUnavailable(_)) => {
                drops.annotation += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        samples.push(Sample {
            id: record.id,
            raw_caption: record.raw,
            triplet,
            state,
            scene_relation_count: record.scene_rel,
            object_count: record.obj_count,
            image_features: record.img,
            bidirectional_plausible: record.bidir,
        });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_mine(
    config: &ConfigArgs,
    mode: DatasetMode,
    dataset: &Path,
    lexicon: &Path,
    synonyms: Option<&Path>,
    tau: Option<f64>,
    workers: usize,
    out: &Path,
) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(tau) = tau {
        extra.push(("similarity.tau".to_string(), tau.to_string()));
    }
    let cfg = config.resolve(&extra)?;

    let samples = read_samples(dataset)?;
    let mut lex = EmbeddingLexicon::load_vectors(lexicon)?;
    if let Some(synonyms) = synonyms {
        lex.load_synonyms(synonyms)?;
    }
    let map = mine_with_workers(&samples, mode, &lex, &cfg.similarity, workers)?;
    write_hnmap(out, &map)?;
    write_sidecar(out, &cfg)?;
    eprintln!(
        "{}",
        serde_json::json!({
            "anchors": map.len(),
            "anchors_with_negatives": map.non_empty_anchors(),
        })
    );
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PairLine {
    a: String,
    b: String,
    label: bool,
}

fn cmd_sweep(
    config: &ConfigArgs,
    pairs: &Path,
    lexicon: &Path,
    range: (f64, f64),
    step: f64,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = config.resolve(&[])?;
    let lex = EmbeddingLexicon::load_vectors(lexicon)?;
    let text =
        std::fs::read_to_string(pairs).with_context(|| format!("reading {}", pairs.display()))?;
    let mut labeled = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PairLine = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", pairs.display(), lineno + 1))?;
        labeled.push((
            Phrase::noun(&record.a),
            Phrase::noun(&record.b),
            record.label,
        ));
    }
    let result = sweep_threshold(&labeled, &lex, range, step)?;
    let mut bytes = serde_json::to_vec_pretty(&result)?;
    bytes.push(b'\n');
    emit_or_print(out, &bytes)?;
    if let Some(path) = out {
        write_sidecar(path, &cfg)?;
    }
    Ok(())
}

fn cmd_stats(config: &ConfigArgs, dataset: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = config.resolve(&[])?;
    let samples = read_samples(dataset)?;
    let stats = dataset_stats(&samples)?;
    let mut bytes = serde_json::to_vec_pretty(&stats)?;
    bytes.push(b'\n');
    emit_or_print(out, &bytes)?;
    if let Some(path) = out {
        write_sidecar(path, &cfg)?;
    }
    Ok(())
}

fn cmd_synth(config: &ConfigArgs, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(seed) = seed {
        extra.push(("world.seed".to_string(), seed.to_string()));
    }
    let cfg = config.resolve(&extra)?;
    let world = synth_world(&cfg.world)?;
    let hn_path = hnmap_sibling(out);
    write_samples(out, &world.samples)?;
    write_hnmap(&hn_path, &world.hnmap)?;
    write_sidecar(out, &cfg)?;
    write_sidecar(&hn_path, &cfg)?;
    eprintln!(
        "{}",
        serde_json::json!({
            "samples": world.samples.len(),
            "anchors_with_negatives": world.hnmap.non_empty_anchors(),
            "hnmap": hn_path.display().to_string(),
        })
    );
    Ok(())
}

fn load_world(samples_path: &Path, hnmap_path: Option<&Path>) -> Result<World> {
    let sibling = hnmap_sibling(samples_path);
    let hn_path = hnmap_path.unwrap_or(&sibling);
    let samples = read_samples(samples_path)?;
    let map = read_hnmap(hn_path)?;
    Ok(World::from_dataset(samples, map)?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: &ConfigArgs,
    world_path: &Path,
    hnmap: Option<&Path>,
    mode: LossMode,
    preset: &str,
    seed: Option<u64>,
    out_params: &Path,
    out_history: &Path,
) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(seed) = seed {
        extra.push(("train.seed".to_string(), seed.to_string()));
    }
    // the preset is the layering base; file and flags refine it
    let base_train = match preset {
        "toy" => TrainConfig::toy_preset(),
        "paper" => TrainConfig::default(),
        other => return Err(anyhow!("unknown preset {other:?} (expected toy or paper)")),
    };
    let base = AppConfig {
        train: base_train,
        ..AppConfig::default()
    };
    let mut cfg = config.resolve_from(base, &extra)?;
    cfg.train.loss_mode = mode;

    let world = load_world(world_path, hnmap)?;
    let (params, history) = train(&world, &cfg.train)?;
    // the checkpoint's own sidecar carries the shapes, the config hash,
    // and the echoed config
    params.save_with_config(out_params, &cfg.hash(), cfg.canonical_entries())?;
    write_bytes(out_history, history.to_csv().as_bytes())?;
    write_sidecar(out_history, &cfg)?;
    eprintln!(
        "{}",
        serde_json::json!({
            "epochs": history.epochs.len(),
            "final_loss": history.epochs.last().map(|e| e.loss),
            "final_r1_t2i": history.epochs.last().map(|e| e.r1_t2i),
            "anchors_used": history.anchors_used,
            "anchors_skipped": history.anchors_skipped,
        })
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    config: &ConfigArgs,
    params_path: &Path,
    world_path: &Path,
    hnmap: Option<&Path>,
    subsets: Option<&str>,
    reference: Option<&str>,
    format: &str,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = config.resolve(&[])?;
    let format: ReportFormat = format.parse()?;
    let split_state = match subsets {
        None => false,
        Some("state") => true,
        Some(other) => return Err(anyhow!("unknown subset split {other:?} (expected state)")),
    };
    let (params, _) = EncoderParams::load(params_path)?;
    let world = load_world(world_path, hnmap)?;
    let report = evaluate(&params, &world, split_state, reference)?;
    let bytes = emit_report(&report, format)?;
    emit_or_print(out, &bytes)?;
    if let Some(path) = out {
        write_sidecar(path, &cfg)?;
    }
    Ok(())
}

fn cmd_gradcheck(
    config: &ConfigArgs,
    loss: &str,
    seed: u64,
    step: f64,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = config.resolve(&[])?;
    let losses: Vec<AuditLoss> = if loss == "all" {
        AuditLoss::ALL.to_vec()
    } else {
        vec![loss.parse().map_err(|e: String| anyhow!(e))?]
    };
    let mut reports = serde_json::Map::new();
    for loss in losses {
        let audit = AuditConfig {
            step,
            ..AuditConfig::from_seed(loss, seed)
        };
        let report = audit_gradients(&audit)?;
        reports.insert(loss.to_string(), serde_json::to_value(&report)?);
    }
    let mut bytes = serde_json::to_vec_pretty(&serde_json::Value::Object(reports))?;
    bytes.push(b'\n');
    emit_or_print(out, &bytes)?;
    if let Some(path) = out {
        write_sidecar(path, &cfg)?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Annotate {
            config,
            captions,
            tagged,
            fixture,
            url,
            out,
        } => cmd_annotate(
            config,
            captions.as_deref(),
            tagged.as_deref(),
            fixture.as_deref(),
            url.clone(),
            out,
        ),
        Command::Mine {
            config,
            mode,
            dataset,
            lexicon,
            synonyms,
            tau,
            workers,
            out,
        } => cmd_mine(
            config,
            *mode,
            dataset,
            lexicon,
            synonyms.as_deref(),
            *tau,
            *workers,
            out,
        ),
        Command::Sweep {
            config,
            pairs,
            lexicon,
            lo,
            hi,
            step,
            out,
        } => cmd_sweep(config, pairs, lexicon, (*lo, *hi), *step, out.as_deref()),
        Command::Stats {
            config,
            dataset,
            out,
        } => cmd_stats(config, dataset, out.as_deref()),
        Command::Synth { config, seed, out } => cmd_synth(config, *seed, out),
        Command::Train {
            config,
            world,
            hnmap,
            mode,
            preset,
            seed,
            out_params,
            out_history,
        } => cmd_train(
            config,
            world,
            hnmap.as_deref(),
            *mode,
            preset,
            *seed,
            out_params,
            out_history,
        ),
        Command::Eval {
            config,
            params,
            world,
            hnmap,
            subsets,
            reference,
            format,
            out,
        } => cmd_eval(
            config,
            params,
            world,
            hnmap.as_deref(),
            subsets.as_deref(),
            reference.as_deref(),
            format,
            out.as_deref(),
        ),
        Command::Gradcheck {
            config,
            loss,
            seed,
            step,
            out,
        } => cmd_gradcheck(config, loss, *seed, *step, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse(); // usage errors exit 2 via clap
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            let payload = serde_json::json!({
                "error": {
                    "message": format!("{error:#}"),
                }
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
