//! `ca`: the command-line surface over the core library.
//!
//! One subcommand per pipeline stage (dataset synthesis, curation, the two
//! training stages, evaluation, the ablation and scaling experiments, key
//! inspection, gradient checking), all driven by a flat TOML config plus
//! flag overrides. Every command echoes its resolved configuration into the
//! output directory, never writes outside it, and never mutates its inputs.
//!
//! Exit codes: 0 ok, 2 config error, 3 data error, 4 leakage, 5 numeric.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ca_core::fusion::FusionKind;
use ca_core::model::{gradcheck_full, CaModel, HeadConfig, ModelConfig};
use ca_core::pipeline::eval::reports_csv;
use ca_core::pipeline::{
    ablate, evaluate, finetune, fold_plan, load_checkpoint, pretrain, save_checkpoint,
    scaling_csv, subject_scaling, variant_model_cfg, ContextPolicy, EvalReport, Scheme, StageLog,
    StageSummary, SubModel, SubjectData, TrainConfig, Variant,
};
use ca_core::signal::curate::{delta_curate, CurateParams};
use ca_core::signal::io::{
    load_all_recordings, read_curated, read_manifest, write_curated, Recording,
};
use ca_core::signal::synth::{synth_generate, write_dataset, SynthParams};
use ca_core::{Error, Real, Result};

use config::RunConfig;

/// Output directories given as relative paths land under this root when set.
const OUT_ROOT_ENV: &str = "CA_OUT_ROOT";

#[derive(Parser)]
#[command(
    name = "ca",
    version,
    about = "Channel-adaptive seizure detection: synthesis, training, evaluation"
)]
struct Cli {
    /// Run configuration file (TOML); built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set seed=7 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Root random seed; shorthand for --set seed=N.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (created if missing); relative paths resolve under
    /// $CA_OUT_ROOT when that is set.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic grouped-channel dataset with annotated seizures.
    Synth {
        #[arg(long)]
        subjects: Option<usize>,
        /// Channel count range per subject, e.g. 32:128.
        #[arg(long, value_parser = parse_channel_range, value_name = "MIN:MAX")]
        channels: Option<(usize, usize)>,
        /// Channels per electrode group.
        #[arg(long)]
        group_size: Option<usize>,
        /// Seizures per subject.
        #[arg(long)]
        seizures: Option<usize>,
        /// Recordings per subject.
        #[arg(long)]
        recordings: Option<usize>,
        /// Recording length in seconds.
        #[arg(long)]
        duration_s: Option<f64>,
        /// Sampling rate in Hz.
        #[arg(long)]
        rate_hz: Option<f64>,
    },

    /// Select a delta-power-stratified training subset for one subject.
    Curate {
        /// Dataset directory (defaults to `data` in the config).
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long)]
        subject: String,
        /// Number of delta-power bins.
        #[arg(long)]
        bins: Option<usize>,
        /// Minutes selected per bin.
        #[arg(long)]
        minutes: Option<f64>,
    },

    /// Pre-train the shared model on every subject except the held-out ones.
    Pretrain {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Subjects excluded from the pool (comma-separated).
        #[arg(long, value_delimiter = ',', value_name = "IDS")]
        test_subjects: Vec<String>,
        /// Directory of per-subject curated manifests; when given, every pool
        /// subject trains only on its curated segments.
        #[arg(long, value_name = "DIR")]
        curated: Option<PathBuf>,
    },

    /// Fine-tune per-seizure sub-models for one held-out subject.
    Finetune {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long)]
        subject: String,
        /// Pre-trained checkpoint to start from.
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Cross-validation scheme: looc or laboc.
        #[arg(long)]
        scheme: Option<String>,
    },

    /// Score a fine-tune run's sub-models on their held-out seizures.
    Eval {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long)]
        subject: String,
        /// Output directory of a previous `finetune` run.
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
    },

    /// Run architecture ablations on one test subject.
    Ablate {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long)]
        subject: String,
        /// Variant to run (repeatable): full, mean_fusion, no_memory,
        /// no_pretrain. Default: all four.
        #[arg(long = "variant", value_name = "NAME")]
        variants: Vec<String>,
    },

    /// Measure how held-out F1 scales with the pre-training pool size.
    Scaling {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', value_name = "IDS")]
        test_subjects: Vec<String>,
        /// Pool sizes to train at (comma-separated).
        #[arg(long, value_delimiter = ',', value_name = "N,N,...")]
        sizes: Vec<usize>,
    },

    /// Dump a subject's channel-key cosine similarity matrix.
    InspectKeys {
        /// Checkpoint holding the subject's key map; omitted = fresh init.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        subject: Option<String>,
        /// Dataset directory; supplies channel counts and group metadata.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Channel count for a fresh key map (no checkpoint, no manifest).
        #[arg(long)]
        channels: Option<usize>,
    },

    /// Finite-difference audit of every parameter family's gradients.
    Gradcheck {
        /// Maximum tolerated relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn parse_channel_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("'{s}' is not MIN:MAX"))?;
    let lo = lo.trim().parse::<usize>().map_err(|e| format!("bad MIN in '{s}': {e}"))?;
    let hi = hi.trim().parse::<usize>().map_err(|e| format!("bad MAX in '{s}': {e}"))?;
    Ok((lo, hi))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;

    match cli.cmd {
        Cmd::Synth {
            subjects,
            channels,
            group_size,
            seizures,
            recordings,
            duration_s,
            rate_hz,
        } => {
            let mut params = SynthParams { seed: cfg.seed, ..SynthParams::default() };
            if let Some(v) = subjects {
                params.subjects = v;
            }
            if let Some((lo, hi)) = channels {
                params.channels_min = lo;
                params.channels_max = hi;
            }
            if let Some(v) = group_size {
                params.group_size = v;
            }
            if let Some(v) = seizures {
                params.seizures_per_subject = v;
            }
            if let Some(v) = recordings {
                params.recordings_per_subject = v;
            }
            if let Some(v) = duration_s {
                params.duration_s = v;
            }
            if let Some(v) = rate_hz {
                params.sampling_rate_hz = v;
            }
            cmd_synth(cfg, cli.out, params)
        }
        Cmd::Curate { data, subject, bins, minutes } => {
            cmd_curate(cfg, cli.out, data, subject, bins, minutes)
        }
        Cmd::Pretrain { data, test_subjects, curated } => {
            cmd_pretrain(cfg, cli.out, data, test_subjects, curated)
        }
        Cmd::Finetune { data, subject, checkpoint, scheme } => {
            cmd_finetune(cfg, cli.out, data, subject, checkpoint, scheme)
        }
        Cmd::Eval { data, subject, run } => cmd_eval(cfg, cli.out, data, subject, run),
        Cmd::Ablate { data, subject, variants } => {
            cmd_ablate(cfg, cli.out, data, subject, variants)
        }
        Cmd::Scaling { data, test_subjects, sizes } => {
            cmd_scaling(cfg, cli.out, data, test_subjects, sizes)
        }
        Cmd::InspectKeys { checkpoint, subject, data, channels } => {
            cmd_inspect_keys(cfg, cli.out, checkpoint, subject, data, channels)
        }
        Cmd::Gradcheck { tolerance } => cmd_gradcheck(cfg, cli.out, tolerance),
    }
}

// ---------------------------------------------------------------------------
// shared plumbing

/// A missing required input is a configuration error (exit 2); unreadable or
/// corrupt content later surfaces as a data error (exit 3).
fn existing(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

/// Resolves and creates the output directory: flag, then config, then the
/// command's default name; relative paths land under $CA_OUT_ROOT when set.
fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig, default_name: &str) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(default_name));
    let dir = if dir.is_absolute() {
        dir
    } else {
        match std::env::var_os(OUT_ROOT_ENV) {
            Some(root) => PathBuf::from(root).join(dir),
            None => dir,
        }
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn data_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| cfg.data.as_ref().map(PathBuf::from))
        .ok_or_else(|| {
            Error::Config("no dataset directory: pass --data or set `data` in the config".into())
        })?;
    existing(&dir, "data directory")?;
    Ok(dir)
}

/// Records the resolved paths in the config echo so a run's artifacts state
/// exactly what it read and wrote.
fn echo_config(mut cfg: RunConfig, out: &Path, data: Option<&Path>) -> Result<()> {
    cfg.data = data.map(|d| d.display().to_string());
    cfg.out = Some(out.display().to_string());
    cfg.echo(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    write_text(path, &format!("{text}\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Subject manifests are `<id>.json` at the top of the data directory;
/// curated manifests (`*.curated.json`) live elsewhere and are skipped.
fn find_manifests(data: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(data).map_err(|e| Error::io(data, e))? {
        let path = entry.map_err(|e| Error::io(data, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.ends_with(".json") && !name.ends_with(".curated.json") {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Data(format!("no subject manifests under {}", data.display())));
    }
    Ok(out)
}

fn load_subject(
    data: &Path,
    subject: &str,
    pp: &ca_core::pipeline::PreprocessConfig,
    train: &TrainConfig,
) -> Result<SubjectData<Real>> {
    let path = data.join(format!("{subject}.json"));
    existing(&path, "subject manifest")?;
    SubjectData::prepare(&path, pp, train.window_s, train.stride_s)
}

fn load_pool(
    data: &Path,
    excluded: &[String],
    pp: &ca_core::pipeline::PreprocessConfig,
    train: &TrainConfig,
) -> Result<Vec<SubjectData<Real>>> {
    let mut pool = Vec::new();
    for path in find_manifests(data)? {
        let subject = SubjectData::<Real>::prepare(&path, pp, train.window_s, train.stride_s)?;
        if !excluded.contains(&subject.subject_id) {
            pool.push(subject);
        }
    }
    Ok(pool)
}

fn parse_scheme(s: &str) -> Result<Scheme> {
    match s {
        "looc" => Ok(Scheme::Looc),
        "laboc" => Ok(Scheme::Laboc),
        _ => Err(Error::Config(format!("unknown scheme '{s}' (expected looc or laboc)"))),
    }
}

fn parse_context(s: &str) -> Result<ContextPolicy> {
    match s {
        "short_term" => Ok(ContextPolicy::ShortTerm),
        "long_term" => Ok(ContextPolicy::LongTerm),
        _ => Err(Error::Config(format!(
            "unknown context '{s}' (expected short_term or long_term)"
        ))),
    }
}

/// Which published ablation arm a model configuration corresponds to.
fn variant_label(cfg: &ModelConfig) -> &'static str {
    match (cfg.fusion, &cfg.head) {
        (FusionKind::ChannelMean, _) => "mean_fusion",
        (_, HeadConfig::Mlp { .. }) => "no_memory",
        _ => "full",
    }
}

/// Epochs of the checkpoint's pre-training stage, when it has one.
fn pretrain_epochs_of(log: &[StageSummary]) -> Option<usize> {
    log.iter().find(|s| s.stage == "pretrain").map(|s| s.train_f1.len())
}

// ---------------------------------------------------------------------------
// synth

#[derive(Serialize)]
struct SynthSubjectRow {
    subject_id: String,
    channels: usize,
    groups: usize,
    recordings: usize,
    seizures: usize,
    duration_s: f64,
}

#[derive(Serialize)]
struct SynthSummary {
    params: SynthParams,
    subjects: Vec<SynthSubjectRow>,
    total_recordings: usize,
    total_seizures: usize,
    total_duration_s: f64,
}

fn cmd_synth(cfg: RunConfig, out: Option<PathBuf>, params: SynthParams) -> Result<()> {
    let out = out_dir(out, &cfg, "synth")?;
    let dataset = synth_generate::<Real>(&params)?;
    let data = out.join("data");
    fs::create_dir_all(&data).map_err(|e| Error::io(&data, e))?;
    let manifest_paths = write_dataset(&data, &dataset)?;

    // The printed summary recounts from the files just written, so it cannot
    // drift from what a reader of the manifests will see.
    let mut rows = Vec::with_capacity(manifest_paths.len());
    for path in &manifest_paths {
        let m = read_manifest(path)?;
        rows.push(SynthSubjectRow {
            subject_id: m.subject_id.clone(),
            channels: m.channels(),
            groups: m
                .channel_groups
                .as_ref()
                .and_then(|g| g.iter().max().map(|&g| g + 1))
                .unwrap_or(0),
            recordings: m.recordings.len(),
            seizures: m.seizure_count(),
            duration_s: m.recordings.iter().map(|r| r.duration_s).sum(),
        });
    }
    let summary = SynthSummary {
        total_recordings: rows.iter().map(|r| r.recordings).sum(),
        total_seizures: rows.iter().map(|r| r.seizures).sum(),
        total_duration_s: rows.iter().map(|r| r.duration_s).sum(),
        params,
        subjects: rows,
    };
    write_json(&out.join("synth.summary.json"), &summary)?;
    echo_config(cfg, &out, Some(&data))?;

    println!("subject  channels  groups  recordings  seizures  duration_s");
    for r in &summary.subjects {
        println!(
            "{:<8} {:>8}  {:>6}  {:>10}  {:>8}  {:>10.0}",
            r.subject_id, r.channels, r.groups, r.recordings, r.seizures, r.duration_s
        );
    }
    println!(
        "total: {} subjects, {} recordings, {} seizures, {:.2} h -> {}",
        summary.subjects.len(),
        summary.total_recordings,
        summary.total_seizures,
        summary.total_duration_s / 3600.0,
        data.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// curate

fn cmd_curate(
    cfg: RunConfig,
    out: Option<PathBuf>,
    data: Option<PathBuf>,
    subject: String,
    bins: Option<usize>,
    minutes: Option<f64>,
) -> Result<()> {
    let data = data_dir(data, &cfg)?;
    let out = out_dir(out, &cfg, "curate")?;
    let mpath = data.join(format!("{subject}.json"));
    existing(&mpath, "subject manifest")?;
    let manifest = read_manifest(&mpath)?;
    let recordings = load_all_recordings::<Real>(&mpath, &manifest)?;
    let sources: Vec<(&str, &Recording<Real>)> = manifest
        .recordings
        .iter()
        .map(|m| m.path.as_str())
        .zip(recordings.iter())
        .collect();

    let mut params = CurateParams { seed: cfg.seed, ..CurateParams::default() };
    if let Some(b) = bins {
        params.bins = b;
    }
    if let Some(m) = minutes {
        params.minutes_per_bin = m;
    }
    let curated = delta_curate(&subject, &sources, &params)?;

    let cpath = out.join(format!("{subject}.curated.json"));
    write_curated(&cpath, &curated)?;
    echo_config(cfg, &out, Some(&data))?;

    let background: Vec<_> = curated.segments.iter().filter(|s| s.bin.is_some()).collect();
    let minutes_selected: f64 =
        background.iter().map(|s| (s.end_s - s.start_s) / 60.0).sum::<f64>();
    println!(
        "curated {}: {} background segments ({:.1} min over {} bins) + {} ictal segments -> {}",
        subject,
        background.len(),
        minutes_selected,
        params.bins,
        curated.segments.len() - background.len(),
        cpath.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// pretrain

#[derive(Serialize)]
struct PretrainSummary {
    pool: Vec<String>,
    test_subjects: Vec<String>,
    curated: bool,
    epochs: usize,
    train_f1: Vec<f64>,
    duration_s: f64,
}

fn cmd_pretrain(
    cfg: RunConfig,
    out: Option<PathBuf>,
    data: Option<PathBuf>,
    test_subjects: Vec<String>,
    curated: Option<PathBuf>,
) -> Result<()> {
    let data = data_dir(data, &cfg)?;
    let out = out_dir(out, &cfg, "pretrain")?;
    let model_cfg = cfg.model()?;
    let pp = cfg.preprocess()?;
    let train_cfg = cfg.train()?;

    let mut pool = load_pool(&data, &test_subjects, &pp, &train_cfg)?;
    if let Some(cdir) = &curated {
        existing(cdir, "curated directory")?;
        for subject in &mut pool {
            let cpath = cdir.join(format!("{}.curated.json", subject.subject_id));
            existing(&cpath, "curated manifest")?;
            subject.restrict_to_curated(&read_curated(&cpath)?)?;
        }
    }

    let start = Instant::now();
    let pre = pretrain(&model_cfg, &train_cfg, &pool, &test_subjects)?;
    let duration_s = start.elapsed().as_secs_f64();

    let ck = out.join("pretrained.ck");
    save_checkpoint(&ck, &pre.model, &pre.adam, &[StageSummary::from(&pre.log)])?;
    write_text(&out.join("pretrain.provenance.jsonl"), &pre.log.provenance_jsonl())?;
    let summary = PretrainSummary {
        pool: pool.iter().map(|s| s.subject_id.clone()).collect(),
        test_subjects,
        curated: curated.is_some(),
        epochs: pre.log.epochs(),
        train_f1: pre.log.train_f1.clone(),
        duration_s,
    };
    write_json(&out.join("pretrain.json"), &summary)?;
    echo_config(cfg, &out, Some(&data))?;

    println!(
        "pre-trained on {} subjects for {} epochs in {:.1} s (final train F1 {:.3}) -> {}",
        summary.pool.len(),
        summary.epochs,
        duration_s,
        summary.train_f1.last().copied().unwrap_or(0.0),
        ck.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// finetune

#[derive(Serialize, Deserialize)]
struct FoldRow {
    fold: usize,
    trained_on: Vec<(usize, usize)>,
    held_out: Vec<(usize, usize)>,
    train_f1: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FinetuneSummary {
    subject: String,
    variant: String,
    scheme: String,
    context: String,
    folds: usize,
    pretrain_epochs: Option<usize>,
    finetune_epochs: usize,
    fold_details: Vec<FoldRow>,
}

fn cmd_finetune(
    mut cfg: RunConfig,
    out: Option<PathBuf>,
    data: Option<PathBuf>,
    subject: String,
    checkpoint: PathBuf,
    scheme: Option<String>,
) -> Result<()> {
    if let Some(s) = &scheme {
        cfg.scheme = parse_scheme(s)?;
    }
    let data = data_dir(data, &cfg)?;
    let out = out_dir(out, &cfg, "finetune")?;
    existing(&checkpoint, "checkpoint")?;
    let pp = cfg.preprocess()?;
    let train_cfg = cfg.train()?;

    let loaded = load_checkpoint::<Real>(&checkpoint)?;
    let subject_data = load_subject(&data, &subject, &pp, &train_cfg)?;
    let pretrain_epochs = pretrain_epochs_of(&loaded.log);

    let subs = finetune(&loaded.model, &train_cfg, &subject_data, pretrain_epochs)?;

    let mut fold_details = Vec::with_capacity(subs.len());
    for (k, sub) in subs.iter().enumerate() {
        let mut log = loaded.log.clone();
        log.push(StageSummary::from(&sub.log));
        save_checkpoint(&out.join(format!("sub_{k}.ck")), &sub.model, &sub.adam, &log)?;
        write_text(
            &out.join(format!("sub_{k}.provenance.jsonl")),
            &sub.log.provenance_jsonl(),
        )?;
        fold_details.push(FoldRow {
            fold: k,
            trained_on: sub.trained_on.clone(),
            held_out: sub.held_out.clone(),
            train_f1: sub.log.train_f1.clone(),
        });
    }
    let summary = FinetuneSummary {
        subject: subject.clone(),
        variant: variant_label(loaded.model.cfg()).to_string(),
        scheme: train_cfg.scheme.label().to_string(),
        context: train_cfg.context.label().to_string(),
        folds: subs.len(),
        pretrain_epochs,
        finetune_epochs: subs[0].log.epochs(),
        fold_details,
    };
    write_json(&out.join("finetune.json"), &summary)?;
    echo_config(cfg, &out, Some(&data))?;

    println!(
        "fine-tuned {} ({}): {} sub-models x {} epochs -> {}",
        subject,
        summary.scheme,
        summary.folds,
        summary.finetune_epochs,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

fn cmd_eval(
    mut cfg: RunConfig,
    out: Option<PathBuf>,
    data: Option<PathBuf>,
    subject: String,
    run: PathBuf,
) -> Result<()> {
    let data = data_dir(data, &cfg)?;
    existing(&run, "fine-tune run directory")?;
    let fpath = run.join("finetune.json");
    existing(&fpath, "fine-tune manifest")?;
    let manifest: FinetuneSummary = read_json(&fpath)?;
    if manifest.subject != subject {
        return Err(Error::Config(format!(
            "run {} was fine-tuned for {}, not {subject}",
            run.display(),
            manifest.subject
        )));
    }
    // Masks are a pure function of (subject, scheme, context); evaluating
    // under the run's own settings reconstructs exactly the folds it trained.
    cfg.scheme = parse_scheme(&manifest.scheme)?;
    cfg.context = parse_context(&manifest.context)?;
    let out = out_dir(out, &cfg, "eval")?;
    let pp = cfg.preprocess()?;
    let train_cfg = cfg.train()?;

    let subject_data = load_subject(&data, &subject, &pp, &train_cfg)?;
    if subject_data.seizure_count() != manifest.folds {
        return Err(Error::Config(format!(
            "run has {} folds but {} now lists {} seizures",
            manifest.folds,
            subject,
            subject_data.seizure_count()
        )));
    }

    let mut subs = Vec::with_capacity(manifest.folds);
    for k in 0..manifest.folds {
        let cpath = run.join(format!("sub_{k}.ck"));
        existing(&cpath, "sub-model checkpoint")?;
        let loaded = load_checkpoint::<Real>(&cpath)?;
        let plan = fold_plan(&subject_data, &train_cfg, k)?;
        subs.push(SubModel {
            model: loaded.model,
            adam: loaded.adam,
            log: StageLog::new(format!("finetune.k{k}")),
            trained_on: plan.trained_on,
            held_out: plan.held_out,
            train_masks: plan.train_masks,
        });
    }

    let report = evaluate(&subs, &subject_data, &train_cfg, &manifest.variant)?;
    write_json(&out.join("eval.json"), &report)?;
    write_text(&out.join("eval.csv"), &reports_csv(std::slice::from_ref(&report)))?;
    echo_config(cfg, &out, Some(&data))?;

    println!(
        "{} ({} folds, {}/{}): median F1 {:.3}, sensitivity {:.3}, specificity {:.3} -> {}",
        subject,
        manifest.folds,
        report.scheme,
        report.context,
        report.f1.median,
        report.sensitivity.median,
        report.specificity.median,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate

#[derive(Serialize)]
struct AblationRow {
    variant: String,
    pretrain_epochs: Option<usize>,
    finetune_epochs: usize,
    pretrain_f1: Vec<f64>,
    report: EvalReport,
}

fn cmd_ablate(
    cfg: RunConfig,
    out: Option<PathBuf>,
    data: Option<PathBuf>,
    subject: String,
    variant_names: Vec<String>,
) -> Result<()> {
    let data = data_dir(data, &cfg)?;
    let out = out_dir(out, &cfg, "ablate")?;
    let model_cfg = cfg.model()?;
    let pp = cfg.preprocess()?;
    let train_cfg = cfg.train()?;

    let variants: Vec<Variant> = if variant_names.is_empty() {
        Variant::ALL.to_vec()
    } else {
        variant_names.iter().map(|s| s.parse()).collect::<Result<_>>()?
    };

    let pool = load_pool(&data, std::slice::from_ref(&subject), &pp, &train_cfg)?;
    let target = load_subject(&data, &subject, &pp, &train_cfg)?;

    let outcomes = ablate(&model_cfg, &train_cfg, &pool, &target, &variants)?;

    let rows: Vec<AblationRow> = outcomes
        .iter()
        .map(|o| AblationRow {
            variant: o.variant.label().to_string(),
            pretrain_epochs: o.pretrain_epochs,
            finetune_epochs: o.finetune_epochs,
            pretrain_f1: o.pretrain_log.first().map(|l| l.train_f1.clone()).unwrap_or_default(),
            report: o.reports[0].clone(),
        })
        .collect();
    write_json(&out.join("ablation.json"), &rows)?;
    let reports: Vec<EvalReport> = rows.iter().map(|r| r.report.clone()).collect();
    write_text(&out.join("ablation.csv"), &reports_csv(&reports))?;
    echo_config(cfg, &out, Some(&data))?;

    for row in &rows {
        println!(
            "{:<12} median F1 {:.3}  (pretrain {:?} epochs, finetune {})",
            row.variant, row.report.f1.median, row.pretrain_epochs, row.finetune_epochs
        );
    }
    println!("-> {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// scaling

fn cmd_scaling(
    cfg: RunConfig,
    out: Option<PathBuf>,
    data: Option<PathBuf>,
    test_subjects: Vec<String>,
    sizes: Vec<usize>,
) -> Result<()> {
    if test_subjects.is_empty() {
        return Err(Error::Config("scaling needs --test-subjects".into()));
    }
    if sizes.is_empty() {
        return Err(Error::Config("scaling needs --sizes".into()));
    }
    let data = data_dir(data, &cfg)?;
    let out = out_dir(out, &cfg, "scaling")?;
    let model_cfg = cfg.model()?;
    let pp = cfg.preprocess()?;
    let train_cfg = cfg.train()?;

    let pool = load_pool(&data, &test_subjects, &pp, &train_cfg)?;
    let mut tests = Vec::with_capacity(test_subjects.len());
    for id in &test_subjects {
        tests.push(load_subject(&data, id, &pp, &train_cfg)?);
    }
    let test_refs: Vec<&SubjectData<Real>> = tests.iter().collect();

    let points = subject_scaling(&model_cfg, &train_cfg, &pool, &test_refs, &sizes)?;
    write_json(&out.join("scaling.json"), &points)?;
    write_text(&out.join("scaling.csv"), &scaling_csv(&points))?;
    echo_config(cfg, &out, Some(&data))?;

    for p in &points {
        println!(
            "pool {:>3}: median F1 {:.3} (mean {:.3}, {} pretrain epochs, {:.0} s)",
            p.pool_size, p.median_f1, p.mean_f1, p.pretrain_epochs, p.runtime_s
        );
    }
    println!("-> {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// inspect-keys

#[derive(Serialize)]
struct KeySummary {
    subject: String,
    channels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    within_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    between_mean: Option<f64>,
}

/// Mean cosine similarity over same-group and different-group key pairs.
fn group_means(sim: &[Vec<Real>], groups: &[usize]) -> (f64, f64) {
    let (mut within, mut n_within, mut between, mut n_between) = (0.0, 0u64, 0.0, 0u64);
    for i in 0..groups.len() {
        for j in 0..groups.len() {
            if i == j {
                continue;
            }
            if groups[i] == groups[j] {
                within += sim[i][j];
                n_within += 1;
            } else {
                between += sim[i][j];
                n_between += 1;
            }
        }
    }
    (within / n_within.max(1) as f64, between / n_between.max(1) as f64)
}

fn cmd_inspect_keys(
    cfg: RunConfig,
    out: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    subject: Option<String>,
    data: Option<PathBuf>,
    channels: Option<usize>,
) -> Result<()> {
    let out = out_dir(out, &cfg, "inspect-keys")?;

    // Group metadata (and a fallback channel count) come from the manifest
    // when a data directory is given.
    let manifest = match (&data, &subject) {
        (Some(d), Some(s)) => {
            let mpath = d.join(format!("{s}.json"));
            existing(&mpath, "subject manifest")?;
            Some(read_manifest(&mpath)?)
        }
        _ => None,
    };

    let (model, subject_id) = match checkpoint {
        Some(ck) => {
            existing(&ck, "checkpoint")?;
            let subject_id = subject.clone().ok_or_else(|| {
                Error::Config("inspect-keys on a checkpoint needs --subject".into())
            })?;
            (load_checkpoint::<Real>(&ck)?.model, subject_id)
        }
        None => {
            let subject_id = subject.clone().unwrap_or_else(|| "fresh".to_string());
            let c = match (channels, &manifest) {
                (Some(c), _) => c,
                (None, Some(m)) => m.channels(),
                (None, None) => {
                    return Err(Error::Config(
                        "fresh key map needs --channels or --data with --subject".into(),
                    ))
                }
            };
            let mut model = CaModel::<Real>::new(cfg.model()?, cfg.seed)?;
            model.register_subject(&subject_id, c)?;
            (model, subject_id)
        }
    };

    let sim = model.key_similarity(&subject_id)?;
    let mut csv = String::new();
    for row in &sim {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.12}")).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    write_text(&out.join("keys.csv"), &csv)?;

    let groups = manifest.as_ref().and_then(|m| m.channel_groups.clone());
    let (within_mean, between_mean) = match &groups {
        Some(g) if g.len() == sim.len() => {
            let (w, b) = group_means(&sim, g);
            (Some(w), Some(b))
        }
        _ => (None, None),
    };
    let summary =
        KeySummary { subject: subject_id.clone(), channels: sim.len(), within_mean, between_mean };
    write_json(&out.join("keys.json"), &summary)?;
    echo_config(cfg, &out, data.as_deref())?;

    match (within_mean, between_mean) {
        (Some(w), Some(b)) => println!(
            "{}: {}x{} key similarity, within-group mean {:.4}, between-group mean {:.4} -> {}",
            subject_id,
            sim.len(),
            sim.len(),
            w,
            b,
            out.display()
        ),
        _ => println!(
            "{}: {}x{} key similarity (no group metadata) -> {}",
            subject_id,
            sim.len(),
            sim.len(),
            out.display()
        ),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck

#[derive(Serialize)]
struct GradCheckRow {
    variant: String,
    checked: usize,
    max_rel_err: f64,
    worst_param: String,
    passed: bool,
}

/// Small double-precision configuration exercising every parameter family
/// (encoder, head, per-subject keys) in seconds: the finite-difference driver
/// perturbs every trainable scalar twice.
fn gradcheck_model_cfg() -> ModelConfig {
    ModelConfig {
        feature_dim: 32,
        encoder: ca_core::encoder::EncoderConfig {
            levels: 2,
            kernel: 3,
            widths: vec![3, 4],
            output_dim: 32,
            expected_input_len: None,
        },
        fusion: FusionKind::Holographic,
        memory_len: 4,
        head: HeadConfig::Tcn(ca_core::memory::TcnConfig {
            blocks: 2,
            kernel: 3,
            dilations: vec![1, 2],
            hidden: 8,
        }),
    }
}

fn cmd_gradcheck(cfg: RunConfig, out: Option<PathBuf>, tolerance: f64) -> Result<()> {
    let out = out_dir(out, &cfg, "gradcheck")?;
    let base = gradcheck_model_cfg();
    let mut rows = Vec::new();
    for variant in [Variant::Full, Variant::MeanFusion, Variant::NoMemory] {
        let model_cfg = variant_model_cfg(&base, variant);
        let report = gradcheck_full(&model_cfg, &[3, 5], cfg.seed, 1e-5)?;
        let passed = report.passes(tolerance);
        println!(
            "{:<12} {} params checked, max rel err {:.3e} ({}) -> {}",
            variant.label(),
            report.checked,
            report.max_rel_err,
            report.worst_param,
            if passed { "ok" } else { "FAIL" }
        );
        rows.push(GradCheckRow {
            variant: variant.label().to_string(),
            checked: report.checked,
            max_rel_err: report.max_rel_err,
            worst_param: report.worst_param,
            passed,
        });
    }
    write_json(&out.join("gradcheck.json"), &rows)?;
    echo_config(cfg, &out, None)?;

    if let Some(bad) = rows.iter().find(|r| !r.passed) {
        return Err(Error::Numeric(format!(
            "gradient check failed for {}: max rel err {:.3e} in {} exceeds {tolerance:.1e}",
            bad.variant, bad.max_rel_err, bad.worst_param
        )));
    }
    Ok(())
}
