//! Command-line entry point: one binary, one subcommand per pipeline stage.
//!
//! Every successful run writes a [`RunManifest`] next to its primary
//! output (`<out>.manifest.json`). Usage errors exit with 2, runtime
//! errors with 1 and a one-line diagnostic on stderr.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context as _};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bench::{run_benchmark_suite, BenchConfig};
use crate::checkpoint::{item_table, load_encoder, load_model, save_encoder, save_model, ModelMeta};
use crate::data::{self, Corpus, Dataset, Domain, Role, SynthConfig};
use crate::encoder::{pretrain_domain, EncoderKind};
use crate::eval::{evaluate, export_alignment, rank_event, AlignmentRow, EvalOptions, MetricReport};
use crate::model::{HorizonModel, RetrievalIndex, TableSizes, Variant};
use crate::retrieval::RetrievalDatabase;
use crate::seeds::rng_for;
use crate::train::{apply_ablation, build_training_database, pretrain_all, train, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "horizonrec", version, about = "Cross-domain sequential recommendation with retrieval-conditioned diffusion")]
struct Cli {
    /// Replace existing outputs instead of refusing to run.
    #[arg(long, global = true)]
    overwrite: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a dataset directory from raw source/target interaction files.
    Preprocess(PreprocessArgs),
    /// Generate a planted synthetic dataset directory.
    Synth(SynthArgs),
    /// Pretrain one sequence encoder on next-item prediction.
    Pretrain(PretrainArgs),
    /// Build the retrieval database from a pretrained mixed-domain encoder.
    BuildDb(BuildDbArgs),
    /// Train the full model (or one variant).
    Train(TrainCmd),
    /// Train and test several variants over several seeds.
    Ablate(AblateArgs),
    /// Compute ranking metrics of a trained model.
    Evaluate(EvaluateArgs),
    /// Export representations and similarities for visualisation.
    ExportViz(ExportVizArgs),
    /// Time training, inference and retrieval at several scales.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = data::DEFAULT_MIN_INTERACTIONS)]
    min_interactions: usize,
    #[arg(long, default_value_t = 200)]
    max_len: usize,
    /// Skip the first line of each input file.
    #[arg(long)]
    header: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    users: usize,
    /// Items per domain.
    #[arg(long, default_value_t = 300)]
    items: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Minimum total interactions per user.
    #[arg(long)]
    min_len: Option<usize>,
    /// Maximum total interactions per user.
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    drift: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    domain: EncoderKind,
    #[arg(long)]
    epochs: Option<usize>,
    /// Flat TOML file with training-config keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BuildDbArgs {
    #[arg(long)]
    data: PathBuf,
    /// Pretrained mixed-domain encoder checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = crate::retrieval::DEFAULT_C)]
    c: f64,
    #[arg(long, default_value_t = crate::retrieval::DEFAULT_N)]
    n: f64,
    #[arg(long, default_value_t = crate::retrieval::DEFAULT_WINDOW)]
    window: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Flags shared by `train` and `ablate`.
#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Retrieval database (required by variants that retrieve noise).
    #[arg(long)]
    db: Option<PathBuf>,
    /// Flat TOML file with training-config keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    source_ckpt: Option<PathBuf>,
    #[arg(long)]
    target_ckpt: Option<PathBuf>,
    #[arg(long)]
    mixed_ckpt: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    beta_start: Option<f64>,
    #[arg(long)]
    beta_end: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    w: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    freeze_encoders: bool,
}

#[derive(Debug, Args)]
struct TrainCmd {
    #[command(flatten)]
    common: TrainArgs,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    common: TrainArgs,
    /// Comma-separated variant names, or `all`.
    #[arg(long, default_value = "all")]
    variant: String,
    /// Comma-separated seeds; defaults to the single `--seed`.
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated grid of `w` values.
    #[arg(long)]
    sweep_w: Option<String>,
    /// Comma-separated grid of `lambda` values.
    #[arg(long)]
    sweep_lambda: Option<String>,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory (defaults to the one recorded in the checkpoint).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Retrieval database (defaults to the one recorded in the checkpoint).
    #[arg(long)]
    db: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value = "5,10,20")]
    k: String,
    /// Exclude already-seen target items from the ranking.
    #[arg(long)]
    mask_seen: bool,
    /// Seed of the inference-time noise draws.
    #[arg(long)]
    eval_seed: Option<u64>,
    /// Key-value metric report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportVizArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    db: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    users: usize,
    /// Seed of the user sample and the noise draws.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "16,32")]
    steps: String,
    #[arg(long, default_value = "1,2")]
    db_scales: String,
    #[arg(long, default_value_t = 2)]
    epochs: usize,
    #[arg(long, default_value_t = 20)]
    passes: usize,
    /// JSON timing report.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Record of one CLI run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub dataset_hash: Option<String>,
    pub seed: Option<u64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    /// `<primary>.manifest.json`.
    pub fn path_for(primary: &Path) -> PathBuf {
        let mut s = primary.as_os_str().to_os_string();
        while s.len() > 1 && (s.to_string_lossy().ends_with('/') || s.to_string_lossy().ends_with('\\')) {
            let t = s.to_string_lossy();
            s = OsString::from(&t[..t.len() - 1]);
        }
        s.push(".manifest.json");
        PathBuf::from(s)
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn write_atomic(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(path, text.as_bytes())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

struct Run {
    command: &'static str,
    argv: Vec<String>,
    started: f64,
    config: serde_json::Value,
    dataset_hash: Option<String>,
    seed: Option<u64>,
    artifacts: Vec<String>,
}

impl Run {
    fn finish(self, primary: &Path) -> anyhow::Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            argv: self.argv,
            config: self.config,
            dataset_hash: self.dataset_hash,
            seed: self.seed,
            started_unix: self.started,
            finished_unix: now_unix(),
            artifacts: self.artifacts,
        };
        let path = RunManifest::path_for(primary);
        manifest.write_atomic(&path)?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    fn artifact(&mut self, p: &Path) {
        self.artifacts.push(p.display().to_string());
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns
/// the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    configure_threads();
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            1
        }
    }
}

fn one_line(e: &anyhow::Error) -> String {
    e.chain().map(|c| c.to_string()).collect::<Vec<_>>().join(": ").replace('\n', " ")
}

fn configure_threads() {
    if let Ok(v) = std::env::var("HORIZONREC_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_ok() {
                    log::info!("using {n} worker threads");
                }
            }
            _ => log::warn!("ignoring HORIZONREC_THREADS={v:?} (expected a positive integer)"),
        }
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u32>() as u64;
        log::warn!("no --seed given; using random seed {s}");
        s
    })
}

fn refuse_clobber(path: &Path, overwrite: bool) -> anyhow::Result<()> {
    if path.exists() && !overwrite {
        bail!("refusing to overwrite {} (pass --overwrite)", path.display());
    }
    Ok(())
}

fn prepare_dir(path: &Path, overwrite: bool) -> anyhow::Result<()> {
    if path.exists() {
        let empty = path.is_dir() && fs::read_dir(path)?.next().is_none();
        if !empty && !overwrite {
            bail!("refusing to overwrite {} (pass --overwrite)", path.display());
        }
    }
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(())
}

fn list<T: std::str::FromStr>(s: &str, what: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|e| anyhow!("bad {what} {x:?}: {e}")))
        .collect()
}

fn load_config(path: Option<&Path>) -> anyhow::Result<TrainConfig> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            Ok(TrainConfig::from_toml(&text).with_context(|| format!("config {}", p.display()))?)
        }
    }
}

fn load_dataset(dir: &Path) -> anyhow::Result<(Dataset, String)> {
    let data = Dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let hash = Corpus::content_hash(dir)?;
    Ok((data, hash))
}

fn open_checkpoint_path(path: &Path) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!("checkpoint not found: {}", path.display());
    }
    Ok(())
}

fn absolute(p: &Path) -> String {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

fn run(cli: Cli, argv: Vec<String>) -> anyhow::Result<()> {
    let overwrite = cli.overwrite;
    let mut run = Run {
        command: "",
        argv,
        started: now_unix(),
        config: serde_json::Value::Null,
        dataset_hash: None,
        seed: None,
        artifacts: Vec::new(),
    };
    match cli.command {
        Command::Preprocess(a) => {
            run.command = "preprocess";
            prepare_dir(&a.out, overwrite)?;
            let opts = data::LoadOptions { header: a.header };
            let source = data::load_interactions(&a.source, Domain::Source, opts)?;
            let target = data::load_interactions(&a.target, Domain::Target, opts)?;
            let corpus = Corpus::from_records(&source, &target, a.min_interactions, a.max_len)?;
            corpus.write(&a.out)?;
            let ds = corpus.to_dataset()?;
            println!(
                "{} users, {} source items, {} target items",
                ds.users.len(),
                ds.source_vocab.len(),
                ds.target_vocab.len()
            );
            run.config = serde_json::json!({
                "source": a.source, "target": a.target,
                "min_interactions": a.min_interactions, "max_len": a.max_len, "header": a.header,
            });
            run.dataset_hash = Some(Corpus::content_hash(&a.out)?);
            run.artifact(&a.out);
            run.finish(&a.out)
        }
        Command::Synth(a) => {
            run.command = "synth";
            prepare_dir(&a.out, overwrite)?;
            let seed = resolve_seed(a.seed);
            let d = SynthConfig::default();
            let cfg = SynthConfig {
                users: a.users,
                items_per_domain: a.items,
                min_len: a.min_len.unwrap_or(d.min_len),
                max_len: a.max_len.unwrap_or(d.max_len),
                latent_dim: a.latent_dim.unwrap_or(d.latent_dim),
                noise_level: a.noise.unwrap_or(d.noise_level),
                temperature: a.temperature.unwrap_or(d.temperature),
                drift: a.drift.unwrap_or(d.drift),
                seed,
            };
            let corpus = data::generate_synthetic(&cfg)?;
            corpus.write(&a.out)?;
            println!("{} users written to {}", corpus.users(), a.out.display());
            run.config = serde_json::to_value(&cfg)?;
            run.seed = Some(seed);
            run.dataset_hash = Some(Corpus::content_hash(&a.out)?);
            run.artifact(&a.out);
            run.finish(&a.out)
        }
        Command::Pretrain(a) => {
            run.command = "pretrain";
            refuse_clobber(&a.out, overwrite)?;
            let (data, hash) = load_dataset(&a.data)?;
            let mut cfg = load_config(a.config.as_deref())?;
            cfg.seed = resolve_seed(a.seed.or(a.config.as_ref().map(|_| cfg.seed)));
            if let Some(d) = a.dim {
                cfg.dim = d;
            }
            let mut pc = cfg.pretrain_config();
            if let Some(e) = a.epochs {
                pc.epochs = e;
            }
            if let Some(lr) = a.lr {
                pc.lr = lr;
            }
            let kind = a.domain;
            let pre = pretrain_domain(&kind.training_sequences(&data), kind, kind.table_rows(&data), &pc)?;
            save_encoder(&pre, kind, &pc, &a.out)?;
            println!(
                "{kind:?} encoder: {} epochs, final loss {:.4}",
                pre.losses.len(),
                pre.losses.last().copied().unwrap_or(f64::NAN)
            );
            run.config = serde_json::to_value(&pc)?;
            run.seed = Some(pc.seed);
            run.dataset_hash = Some(hash);
            run.artifact(&a.out);
            run.finish(&a.out)
        }
        Command::BuildDb(a) => {
            run.command = "build-db";
            refuse_clobber(&a.out, overwrite)?;
            let (data, hash) = load_dataset(&a.data)?;
            open_checkpoint_path(&a.ckpt)?;
            let (meta, params) = load_encoder(&a.ckpt)?;
            if meta.domain != EncoderKind::Mixed {
                bail!("{} holds a {:?} encoder; build-db needs the mixed-domain one", a.ckpt.display(), meta.domain);
            }
            let table = item_table(&params, EncoderKind::Mixed)?;
            if table.rows != data.mixed_table_rows() {
                bail!(
                    "encoder vocabulary ({} rows) does not match the dataset ({} rows)",
                    table.rows,
                    data.mixed_table_rows()
                );
            }
            let db = build_training_database(&data, table, a.c, a.n, a.window)?;
            db.save(&a.out)?;
            println!("{} segments of width {}", db.rows(), db.dim());
            run.config = serde_json::json!({"ckpt": a.ckpt, "c": a.c, "n": a.n, "window": a.window});
            run.dataset_hash = Some(hash);
            run.artifact(&a.out);
            run.finish(&a.out)
        }
        Command::Train(a) => {
            run.command = "train";
            refuse_clobber(&a.out, overwrite)?;
            let (data, hash) = load_dataset(&a.common.data)?;
            let mut cfg = train_config(&a.common)?;
            if let Some(v) = a.variant {
                cfg = apply_ablation(&cfg, v);
            }
            cfg.validate()?;
            let db = load_db(a.common.db.as_deref())?;
            let model = initial_model(&data, &cfg, &a.common)?;
            let outcome = train(&data, model, db.as_ref())?;
            let meta = ModelMeta::new(
                Some(absolute(&a.common.data)),
                a.common.db.as_deref().map(absolute),
                outcome.history.clone(),
                outcome.best_epoch,
                outcome.best_val_ndcg10,
            );
            save_model(&outcome.model, &meta, &a.out)?;
            if let Some(last) = outcome.history.last() {
                println!(
                    "{} epochs; last L_rec {:.4} L_diff {:.4} L_total {:.4}; best epoch {} (val NDCG@10 {})",
                    outcome.history.len(),
                    last.l_rec,
                    last.l_diff,
                    last.l_total,
                    outcome.best_epoch,
                    outcome.best_val_ndcg10.map_or("n/a".to_string(), |v| format!("{v:.4}"))
                );
            }
            run.config = serde_json::to_value(&cfg)?;
            run.seed = Some(cfg.seed);
            run.dataset_hash = Some(hash);
            run.artifact(&a.out);
            run.finish(&a.out)
        }
        Command::Ablate(a) => {
            run.command = "ablate";
            prepare_dir(&a.out, overwrite)?;
            let (data, hash) = load_dataset(&a.common.data)?;
            let base = train_config(&a.common)?;
            let variants: Vec<Variant> = if a.variant.trim().eq_ignore_ascii_case("all") {
                Variant::ALL.to_vec()
            } else {
                list(&a.variant, "variant")?
            };
            let seeds: Vec<u64> = match &a.seeds {
                Some(s) => list(s, "seed")?,
                None => vec![base.seed],
            };
            let ws: Vec<f64> = match &a.sweep_w {
                Some(s) => list(s, "w")?,
                None => vec![base.w],
            };
            let lambdas: Vec<f64> = match &a.sweep_lambda {
                Some(s) => list(s, "lambda")?,
                None => vec![base.lambda],
            };
            if variants.is_empty() || seeds.is_empty() || ws.is_empty() || lambdas.is_empty() {
                bail!("nothing to run: empty variant, seed or sweep list");
            }
            let rows = ablate(&data, &base, &a, &variants, &seeds, &ws, &lambdas)?;
            let detail = a.out.join("ablation.tsv");
            let summary = a.out.join("summary.tsv");
            fs::write(&detail, ablation_table(&rows, false)).with_context(|| format!("writing {}", detail.display()))?;
            let means = summarize(&rows)?;
            let text = ablation_table(&means, true);
            fs::write(&summary, &text).with_context(|| format!("writing {}", summary.display()))?;
            print!("{text}");
            run.config = serde_json::json!({
                "base": base, "variants": variants, "seeds": seeds, "w": ws, "lambda": lambdas,
            });
            run.seed = seeds.first().copied();
            run.dataset_hash = Some(hash);
            run.artifact(&detail);
            run.artifact(&summary);
            run.finish(&a.out)
        }
        Command::Evaluate(a) => {
            run.command = "evaluate";
            if let Some(out) = &a.out {
                refuse_clobber(out, overwrite)?;
            }
            let split = match a.split.as_str() {
                "test" => Role::Test,
                "validation" | "valid" | "val" => Role::Validation,
                other => bail!("unknown split {other:?} (test|validation)"),
            };
            let ks: Vec<usize> = list(&a.k, "k")?;
            if ks.is_empty() || ks.contains(&0) {
                bail!("--k needs positive cutoffs");
            }
            let loaded = load_for_inference(&a.ckpt, a.data.as_deref(), a.db.as_deref())?;
            let opts = EvalOptions {
                ks,
                mask_seen: a.mask_seen,
                seed: a.eval_seed.unwrap_or(loaded.model.config.eval_seed),
            };
            let index = loaded.db.as_ref().map(|db| RetrievalIndex::new(db, &loaded.data));
            let (report, _) = evaluate(&loaded.model, &loaded.data, index.as_ref(), split, &opts)?;
            println!("{report}");
            run.config = serde_json::json!({
                "ckpt": absolute(&a.ckpt), "split": a.split, "ks": opts.ks,
                "mask_seen": opts.mask_seen, "eval_seed": opts.seed,
            });
            run.seed = Some(opts.seed);
            run.dataset_hash = Some(loaded.hash);
            let primary = match &a.out {
                Some(out) => {
                    fs::write(out, report.to_key_values()).with_context(|| format!("writing {}", out.display()))?;
                    run.artifact(out);
                    out.clone()
                }
                None => {
                    let mut p = a.ckpt.as_os_str().to_os_string();
                    p.push(format!(".{}", report.split));
                    PathBuf::from(p)
                }
            };
            run.finish(&primary)
        }
        Command::ExportViz(a) => {
            run.command = "export-viz";
            prepare_dir(&a.out, overwrite)?;
            let loaded = load_for_inference(&a.ckpt, a.data.as_deref(), a.db.as_deref())?;
            let seed = resolve_seed(a.seed);
            let rows = alignment_rows(&loaded, a.users, seed)?;
            export_alignment(&rows, loaded.model.target_table(), &a.out)?;
            println!("exported {} users to {}", rows.len(), a.out.display());
            run.config = serde_json::json!({"ckpt": absolute(&a.ckpt), "users": a.users});
            run.seed = Some(seed);
            run.dataset_hash = Some(loaded.hash);
            for name in ["similarity.csv", "embeddings.csv", "target_items.csv"] {
                run.artifact(&a.out.join(name));
            }
            run.finish(&a.out)
        }
        Command::Bench(a) => {
            run.command = "bench";
            if let Some(out) = &a.out {
                refuse_clobber(out, overwrite)?;
            }
            let (data, hash) = load_dataset(&a.data)?;
            let mut train_cfg = match &a.config {
                Some(p) => load_config(Some(p))?,
                None => BenchConfig::default().train,
            };
            train_cfg.seed = resolve_seed(a.seed.or(a.config.as_ref().map(|_| train_cfg.seed)));
            let cfg = BenchConfig {
                train: train_cfg,
                steps: list(&a.steps, "step count")?,
                db_scales: list(&a.db_scales, "database scale")?,
                epochs: a.epochs,
                retrieval_passes: a.passes,
            };
            let report = run_benchmark_suite(&data, &cfg)?;
            println!("{report}");
            run.config = serde_json::to_value(&cfg)?;
            run.seed = Some(cfg.train.seed);
            run.dataset_hash = Some(hash);
            let primary = match &a.out {
                Some(out) => {
                    fs::write(out, serde_json::to_string_pretty(&report)?)
                        .with_context(|| format!("writing {}", out.display()))?;
                    run.artifact(out);
                    out.clone()
                }
                None => a.data.join("bench"),
            };
            run.finish(&primary)
        }
    }
}

fn train_config(a: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let mut cfg = load_config(a.config.as_deref())?;
    cfg.seed = resolve_seed(a.seed.or(a.config.as_ref().map(|_| cfg.seed)));
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { cfg.$f = v; } )* };
    }
    set!(epochs, steps, beta_start, beta_end, k, w, lambda);
    if a.freeze_encoders {
        cfg.freeze_encoders = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_db(path: Option<&Path>) -> anyhow::Result<Option<RetrievalDatabase>> {
    path.map(|p| RetrievalDatabase::load(p).with_context(|| format!("loading database {}", p.display())))
        .transpose()
}

/// A fresh model with whichever pretrained encoders were given.
fn initial_model(data: &Dataset, cfg: &TrainConfig, a: &TrainArgs) -> anyhow::Result<HorizonModel> {
    let mut model = HorizonModel::new(cfg, TableSizes::of(data))?;
    for (kind, path) in [
        (EncoderKind::Source, &a.source_ckpt),
        (EncoderKind::Target, &a.target_ckpt),
        (EncoderKind::Mixed, &a.mixed_ckpt),
    ] {
        match path {
            Some(p) => {
                open_checkpoint_path(p)?;
                let (meta, params) = load_encoder(p)?;
                if meta.domain != kind {
                    bail!("{} holds a {:?} encoder, expected {kind:?}", p.display(), meta.domain);
                }
                model.load_pretrained(kind, &params).with_context(|| format!("loading {}", p.display()))?;
            }
            None => log::warn!("no pretrained {kind:?} encoder given; starting from random initialisation"),
        }
    }
    Ok(model)
}

struct Loaded {
    model: HorizonModel,
    data: Dataset,
    hash: String,
    db: Option<RetrievalDatabase>,
}

fn load_for_inference(ckpt: &Path, data: Option<&Path>, db: Option<&Path>) -> anyhow::Result<Loaded> {
    open_checkpoint_path(ckpt)?;
    let (model, meta) = load_model(ckpt)?;
    let data_dir = match (data, &meta.data_dir) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => bail!("the checkpoint records no dataset; pass --data"),
    };
    let (data, hash) = load_dataset(&data_dir)?;
    let db_path = db.map(Path::to_path_buf).or_else(|| meta.db_path.as_ref().map(PathBuf::from));
    let db = if model.config.variant.uses_retrieval() {
        match db_path {
            Some(p) => load_db(Some(&p))?,
            None => bail!("variant {} needs a retrieval database; pass --db", model.config.variant),
        }
    } else {
        None
    };
    Ok(Loaded { model, data, hash, db })
}

fn alignment_rows(loaded: &Loaded, users: usize, seed: u64) -> anyhow::Result<Vec<AlignmentRow>> {
    use rand::seq::SliceRandom;
    let mut candidates: Vec<(usize, usize)> = loaded
        .data
        .users
        .iter()
        .enumerate()
        .filter_map(|(u, h)| h.label_index(Role::Test).map(|j| (u, j)))
        .collect();
    let mut rng = rng_for(seed, &[0x715e]);
    candidates.shuffle(&mut rng);
    candidates.truncate(users);
    candidates.sort_unstable();
    let index = loaded.db.as_ref().map(|db| RetrievalIndex::new(db, &loaded.data));
    let opts = EvalOptions {
        seed,
        ..EvalOptions::default()
    };
    candidates
        .into_iter()
        .map(|(u, j)| {
            let (r, state) = rank_event(&loaded.model, &loaded.data, index.as_ref(), u, j, &opts)?;
            Ok(AlignmentRow {
                user_id: r.user_id,
                state,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
struct AblationRow {
    variant: Variant,
    seed: Option<u64>,
    w: f64,
    lambda: f64,
    report: MetricReport,
}

fn ablate(
    data: &Dataset,
    base: &TrainConfig,
    a: &AblateArgs,
    variants: &[Variant],
    seeds: &[u64],
    ws: &[f64],
    lambdas: &[f64],
) -> anyhow::Result<Vec<AblationRow>> {
    let given = [&a.common.source_ckpt, &a.common.target_ckpt, &a.common.mixed_ckpt];
    let all_given = given.iter().all(|p| p.is_some()) && a.common.db.is_some();
    let mut rows = Vec::new();
    for &seed in seeds {
        let seeded = TrainConfig { seed, ..base.clone() };
        // Either reuse the supplied encoders and database, or pretrain and
        // build them for this seed.
        let (pretrained, db) = if all_given {
            (None, load_db(a.common.db.as_deref())?.expect("db given"))
        } else {
            log::info!("seed {seed}: pretraining encoders and building the database");
            let p = pretrain_all(data, &seeded)?;
            let table = p.mixed.params.get(p.mixed.encoder.item_table);
            let db = build_training_database(data, table, seeded.c, seeded.n, seeded.window)?;
            (Some(p), db)
        };
        let index = RetrievalIndex::new(&db, data);
        for &variant in variants {
            for &w in ws {
                for &lambda in lambdas {
                    let cfg = apply_ablation(&TrainConfig { w, lambda, ..seeded.clone() }, variant);
                    let mut model = match &pretrained {
                        Some(p) => {
                            let mut m = HorizonModel::new(&cfg, TableSizes::of(data))?;
                            for kind in EncoderKind::ALL {
                                m.load_pretrained(kind, &p.get(kind).params)?;
                            }
                            m
                        }
                        None => initial_model(data, &cfg, &a.common)?,
                    };
                    model.config = cfg.clone();
                    let outcome = train(data, model, Some(&db))?;
                    let (report, _) = evaluate(&outcome.model, data, Some(&index), Role::Test, &EvalOptions {
                        seed: cfg.eval_seed,
                        ..EvalOptions::default()
                    })?;
                    log::info!(
                        "{variant} seed {seed} w {w} lambda {lambda}: NDCG@10 {:.4}",
                        report.ndcg_at(10).unwrap_or(f64::NAN)
                    );
                    rows.push(AblationRow {
                        variant,
                        seed: Some(seed),
                        w,
                        lambda,
                        report,
                    });
                }
            }
        }
    }
    Ok(rows)
}

fn summarize(rows: &[AblationRow]) -> anyhow::Result<Vec<AblationRow>> {
    let mut keys: Vec<(Variant, u64, u64)> = Vec::new();
    for r in rows {
        let k = (r.variant, r.w.to_bits(), r.lambda.to_bits());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(variant, w, lambda)| {
            let group: Vec<MetricReport> = rows
                .iter()
                .filter(|r| r.variant == variant && r.w.to_bits() == w && r.lambda.to_bits() == lambda)
                .map(|r| r.report.clone())
                .collect();
            Ok(AblationRow {
                variant,
                seed: None,
                w: f64::from_bits(w),
                lambda: f64::from_bits(lambda),
                report: MetricReport::mean(&group)?,
            })
        })
        .collect()
}

fn ablation_table(rows: &[AblationRow], mean: bool) -> String {
    let mut out = String::new();
    let Some(first) = rows.first() else { return out };
    out.push_str(if mean { "variant\tw\tlambda" } else { "variant\tseed\tw\tlambda" });
    for k in &first.report.ks {
        out.push_str(&format!("\tHR@{k}\tNDCG@{k}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(r.variant.name());
        if !mean {
            out.push_str(&format!("\t{}", r.seed.unwrap_or(0)));
        }
        out.push_str(&format!("\t{}\t{}", r.w, r.lambda));
        for (h, n) in r.report.hr.iter().zip(&r.report.ndcg) {
            out.push_str(&format!("\t{h:.4}\t{n:.4}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_path_strips_trailing_separators() {
        assert_eq!(RunManifest::path_for(Path::new("out/d/")), PathBuf::from("out/d.manifest.json"));
        assert_eq!(RunManifest::path_for(Path::new("m.ckpt")), PathBuf::from("m.ckpt.manifest.json"));
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(dispatch(["horizonrec", "train"]), 2);
        assert_eq!(dispatch(["horizonrec", "no-such-command"]), 2);
        assert_eq!(dispatch(["horizonrec", "--help"]), 0);
    }

    #[test]
    fn list_parsing() {
        assert_eq!(list::<usize>("5, 10,20", "k").unwrap(), vec![5, 10, 20]);
        assert!(list::<usize>("5,x", "k").is_err());
        assert_eq!(list::<Variant>("full,no_MDR", "variant").unwrap(), vec![Variant::Full, Variant::NoMdr]);
    }
}
