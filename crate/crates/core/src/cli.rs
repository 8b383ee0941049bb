//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage/config/domain errors, 2 internal failures
//! (I/O, non-finite training, failed gradient audit).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    self, generate_synthetic, load_dataset, sample_pairs, save_dataset, Dataset, MediaSet,
    SynthConfig,
};
use crate::dsg::{hard_loss, harden, minimize_relaxed, RelaxOptions};
use crate::error::{Error, Result};
use crate::evalkit::{self, ScoringOptions, DEFAULT_FAR_POINTS, DEFAULT_RANKS, DEFAULT_TOP_L};
use crate::matching::{match_embeddings, MatchMode};
use crate::model::Model;
use crate::oracle::brute_force_dsg;
use crate::training::{self, GradCheckOptions, TrainConfig};

pub const THREADS_ENV: &str = "PROTO_SET_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "protoset",
    version,
    about = "Set-to-set matching with dense-subgraph prototypes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted modes.
    GenData(GenDataArgs),
    /// Train a model and write checkpoint, loss CSV and resolved config.
    Train(TrainArgs),
    /// Score verification pairs and an open-set search; write curves.
    Eval(EvalArgs),
    /// Relaxed DSG minimization against the exhaustive oracle on a distance CSV.
    Partition(PartitionArgs),
    /// Finite-difference audit of the joint-loss gradient.
    GradCheck(GradCheckArgs),
    /// Time media-level against prototype-level matching.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// key=value file overriding the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Start from the desk-scale preset (K=8, R=16) instead of the published values.
    #[arg(long)]
    pub desk: bool,
}

impl Common {
    fn train_config(&self) -> Result<TrainConfig> {
        let base = if self.desk {
            TrainConfig::desk()
        } else {
            TrainConfig::published()
        };
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p, base)?,
            None => base,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output dataset file.
    #[arg(long)]
    pub out: PathBuf,
    /// key=value file with synthetic generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Accepted for symmetry; the generator defaults are already desk scale.
    #[arg(long)]
    pub desk: bool,
    /// Also write this many sampled verification pairs next to the dataset.
    #[arg(long)]
    pub pairs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for checkpoint.txt, loss.csv and config.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// Initial checkpoint instead of a fresh model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory for roc.csv, cmc.csv and metrics.txt.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "media")]
    pub mode: MatchMode,
    /// Pairs file; sampled from the seed when absent.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Number of sampled verification pairs.
    #[arg(long, default_value_t = 1000)]
    pub n_pairs: usize,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// Square distance matrix as CSV.
    pub matrix: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of random (model, pair) draws.
    #[arg(long, default_value_t = 1)]
    pub draws: usize,
    /// Audit this checkpoint instead of random models.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Media per set.
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                1
            } else {
                2
            }
        }
    }
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Partition(a) => partition(a),
        Command::GradCheck(a) => grad_check(a),
        Command::Bench(a) => bench(a),
    }
}

pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| {
                Error::Config(format!(
                    "{THREADS_ENV} must be a positive integer, got `{v}`"
                ))
            }),
        Err(_) => Ok(1),
    }
}

fn gen_data(a: GenDataArgs) -> Result<i32> {
    let mut cfg = match &a.config {
        Some(p) => SynthConfig::default().apply_config_text(&fs::read_to_string(p)?)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let ds = generate_synthetic(&cfg)?;
    save_dataset(&ds, &a.out)?;
    println!(
        "wrote {} sets, {} media to {}",
        ds.sets.len(),
        ds.media_count(),
        a.out.display()
    );
    if let Some(n) = a.pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9a1e);
        let pairs = sample_pairs(&ds, n, 0.5, &mut rng)?;
        let path = a.out.with_extension("pairs");
        dataset::save_pairs(&pairs, &path)?;
        println!("wrote {} pairs to {}", pairs.len(), path.display());
    }
    Ok(0)
}

fn train(a: TrainArgs) -> Result<i32> {
    let ds = load_dataset(&a.dataset)?;
    let mut cfg = a.common.train_config()?;
    cfg.model.d_in = ds.dim;
    let model = match &a.checkpoint {
        Some(p) => Model::load(p)?,
        None => training::init_model(&cfg)?,
    };
    let out = training::train(model, &ds, &cfg)?;
    fs::create_dir_all(&a.out)?;
    out.model.save(a.out.join("checkpoint.txt"))?;
    training::save_history(&out.history, a.out.join("loss.csv"))?;
    fs::write(a.out.join("config.txt"), cfg.to_config_text())?;
    match out.history.last() {
        Some(r) => println!(
            "iterations={} final ranking={} dsg={} joint={}",
            out.history.len(),
            r.ranking,
            r.dsg,
            r.joint
        ),
        None => println!("iterations=0"),
    }
    if let Some(report) = &out.audit {
        print!("{}", report.render());
        if !report.passed() {
            return Ok(2);
        }
    }
    Ok(0)
}

fn eval(a: EvalArgs) -> Result<i32> {
    let ds = load_dataset(&a.dataset)?;
    let cfg = a.common.train_config()?;
    let model = Model::load(&a.checkpoint)?;
    let opts = ScoringOptions {
        mode: a.mode,
        beta: cfg.beta,
        eps_mass: cfg.eps_mass,
        threads: threads_from_env()?,
    };
    let pairs = match &a.pairs {
        Some(p) => dataset::load_pairs(p)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xe7a1);
            sample_pairs(&ds, a.n_pairs, 0.5, &mut rng)?
        }
    };
    let scores = evalkit::score_pairs(&model, &ds, &pairs, opts)?;
    let mut report = evalkit::verification_metrics(&scores, &DEFAULT_FAR_POINTS)?;
    let (gallery, probes) = evalkit::open_set_protocol(&ds)?;
    let ident = evalkit::identification_metrics(
        &gallery,
        &probes,
        &model,
        DEFAULT_TOP_L,
        &DEFAULT_FAR_POINTS,
        &DEFAULT_RANKS,
        opts,
    )?;
    report = report.merge(ident);
    let summary = report.summary();
    print!("{summary}");
    evalkit::export_curves(&report, &a.out)?;
    fs::write(a.out.join("metrics.txt"), summary)?;
    Ok(0)
}

fn parse_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::Domain("empty distance matrix".into()));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != n) {
        return Err(Error::Format {
            line: bad + 1,
            msg: format!("expected {n} columns, got {}", rows[bad].len()),
        });
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite distance".into()));
    }
    Array2::from_shape_vec((n, n), flat).map_err(|e| Error::Shape(e.to_string()))
}

fn fmt_labels(labels: &[usize]) -> String {
    labels
        .iter()
        .map(|l| l.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn partition(a: PartitionArgs) -> Result<i32> {
    let d = parse_matrix_csv(&a.matrix)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (z, _) = minimize_relaxed(&d, a.k, RelaxOptions::default(), &mut rng)?;
    let labels = harden(&z);
    let value = hard_loss(&d, &labels);
    let mut out = String::new();
    let _ = writeln!(out, "labels: {}", fmt_labels(&labels));
    let _ = writeln!(out, "value: {value}");
    match brute_force_dsg(&d, a.k) {
        Ok((p, best)) => {
            let _ = writeln!(out, "oracle_labels: {}", fmt_labels(&p.labels));
            let _ = writeln!(out, "oracle_value: {best}");
            let _ = writeln!(out, "oracle_gap: {}", value - best);
        }
        Err(Error::Capacity(msg)) => {
            let _ = writeln!(out, "oracle: skipped ({msg})");
        }
        Err(e) => return Err(e),
    }
    print!("{out}");
    Ok(0)
}

fn grad_check(a: GradCheckArgs) -> Result<i32> {
    let mut cfg = a.common.train_config()?;
    if !a.common.desk && a.common.config.is_none() {
        // the published K=500 is needlessly slow for an audit
        cfg = TrainConfig {
            seed: cfg.seed,
            ..TrainConfig::desk()
        };
    }
    let fixed = a.checkpoint.as_deref().map(Model::load).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ok = true;
    for draw in 0..a.draws.max(1) {
        let model = match &fixed {
            Some(m) => m.clone(),
            None => training::audit_model(&cfg.model, &mut rng)?,
        };
        let label = rng.random_range(0..2u8);
        let input = training::random_pair_input(&mut rng, model.in_dim(), label);
        let report =
            training::grad_check(&model, &input, &cfg, GradCheckOptions::default(), &mut rng)?;
        println!("draw {draw} label={label}");
        print!("{}", report.render());
        ok &= report.passed();
    }
    Ok(if ok { 0 } else { 2 })
}

fn bench(a: BenchArgs) -> Result<i32> {
    let cfg = a.common.train_config()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = match &a.checkpoint {
        Some(p) => Model::load(p)?,
        None => training::init_model(&cfg)?,
    };
    let synth = SynthConfig {
        n_subjects: 2,
        min_media: a.n,
        max_media: a.n,
        dim: model.in_dim(),
        seed: rng.random(),
        ..SynthConfig::default()
    };
    let ds: Dataset = generate_synthetic(&synth)?;
    let (sa, sb): (&MediaSet, &MediaSet) = (&ds.sets[0], &ds.sets[1]);
    let ea = model.embed_set(sa)?;
    let eb = model.embed_set(sb)?;
    let mut lines = String::new();
    for mode in [MatchMode::MediaLevel, MatchMode::PrototypeLevel] {
        let start = Instant::now();
        let mut last = None;
        for _ in 0..a.reps.max(1) {
            last = Some(match_embeddings(&ea, &eb, mode, cfg.beta, cfg.eps_mass)?);
        }
        let per = start.elapsed().as_secs_f64() / a.reps.max(1) as f64;
        let out = last.expect("at least one repetition");
        let _ = writeln!(
            lines,
            "mode={mode} distance_evals={} seconds_per_match={per:.3e} score={}",
            out.distance_evals, out.score
        );
    }
    print!("{lines}");
    Ok(0)
}
