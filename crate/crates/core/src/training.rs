//! Joint training of the encoder and DSG sub-net.
//!
//! Per set pair the loss is `ranking(E_ab) + lambda * (tr_a + tr_b)` where
//! `E_ab` is the cross-set energy and `tr_s = tr(Z~_s^T D_ss Z~_s)` is the
//! relaxed dense-subgraph loss within set `s`. Every parameter tensor
//! (encoder, `W`, `U`, `G`) is updated by SGD with momentum and weight decay.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{balance_set, sample_pairs, Dataset, MediaSet, SetPair};
use crate::dsg::{
    distances_backward, dsg_backward, dsg_loss, indicator_backward, pairwise_distances,
    reconstruct_backward,
};
use crate::encoder::Init;
use crate::error::{Error, Result};
use crate::matching::{energy, energy_backward, ranking_loss, ranking_loss_grad, DEFAULT_EPS_MASS};
use crate::model::{Model, ModelConfig, SetEmbedding};

/// When sets are resampled to `R` media.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BalanceMode {
    /// Fresh resampling every time a set enters a pair.
    PerPair,
    /// One resampling per set per epoch.
    PerEpoch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub r: usize,
    pub beta: f64,
    pub tau: f64,
    pub lambda: f64,
    pub lr: f64,
    /// Iteration at which the learning rate is multiplied by `lr_drop_factor`.
    pub lr_drop_at: Option<usize>,
    pub lr_drop_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Set pairs per SGD step.
    pub batch: usize,
    pub epochs: usize,
    pub pairs_per_epoch: usize,
    pub genuine_fraction: f64,
    pub max_iters: Option<usize>,
    pub seed: u64,
    pub jitter: f64,
    pub balance: BalanceMode,
    pub eps_mass: f64,
    /// Fixed affinity bandwidth for diagnostics; `None` uses the median heuristic.
    pub delta: Option<f64>,
    /// Audit the analytic gradient on the first training pair.
    pub grad_check: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::published()
    }
}

impl TrainConfig {
    /// Published hyperparameters (K=500, R=128, beta=10, tau=0.8,
    /// lambda=0.01, lr=0.01, momentum 0.9, weight decay 5e-4, batch 1).
    pub fn published() -> Self {
        TrainConfig {
            model: ModelConfig {
                k: 500,
                ..ModelConfig::default()
            },
            r: 128,
            beta: 10.0,
            tau: 0.8,
            lambda: 0.01,
            lr: 0.01,
            lr_drop_at: None,
            lr_drop_factor: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch: 1,
            epochs: 10,
            pairs_per_epoch: 500,
            genuine_fraction: 0.5,
            max_iters: None,
            seed: 0,
            jitter: 0.01,
            balance: BalanceMode::PerPair,
            eps_mass: DEFAULT_EPS_MASS,
            delta: None,
            grad_check: false,
        }
    }

    /// Desk-scale preset: K=8, R=16 and an encoder sized for quick runs.
    pub fn desk() -> Self {
        TrainConfig {
            model: ModelConfig {
                k: 8,
                encoder_init: Init::FanIn(1.0),
                ..ModelConfig::default()
            },
            r: 16,
            epochs: 8,
            pairs_per_epoch: 500,
            lr_drop_at: Some(3000),
            ..Self::published()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.model.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.r == 0 {
            return bad("r must be at least 1".into());
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        // a zero rate is allowed: it freezes the parameters
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be non-negative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if !self.beta.is_finite() {
            return bad("beta must be finite".into());
        }
        if !(self.eps_mass > 0.0) {
            return bad("eps_mass must be positive".into());
        }
        if !(self.jitter >= 0.0) {
            return bad("jitter must be non-negative".into());
        }
        if let Some(d) = self.delta {
            if !(d > 0.0) {
                return bad("delta must be positive".into());
            }
        }
        if self.model.d_in == 0 || self.model.d == 0 {
            return bad("d_in and d must be at least 1".into());
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. `#` starts a comment.
    pub fn apply_config_text(mut self, text: &str) -> Result<Self> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", idx + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", idx + 1)))?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn load(path: impl AsRef<Path>, base: TrainConfig) -> Result<Self> {
        base.apply_config_text(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse()
                .map_err(|_| format!("invalid value `{v}` for {key}"))
        }
        match key {
            "r" => self.r = num(key, value)?,
            "k" => self.model.k = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "lr_drop_at" => {
                self.lr_drop_at = if value == "none" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "lr_drop_factor" => self.lr_drop_factor = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "pairs_per_epoch" => self.pairs_per_epoch = num(key, value)?,
            "genuine_fraction" => self.genuine_fraction = num(key, value)?,
            "max_iters" => {
                self.max_iters = if value == "none" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "seed" => self.seed = num(key, value)?,
            "d_in" => self.model.d_in = num(key, value)?,
            "d" => self.model.d = num(key, value)?,
            "hidden" => {
                self.model.hidden = if value.is_empty() || value == "none" {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|v| num(key, v.trim()))
                        .collect::<std::result::Result<_, _>>()?
                }
            }
            "slope" => self.model.slope = num(key, value)?,
            "init" => {
                self.model.encoder_init = match value.strip_prefix("fanin") {
                    Some("") => Init::FanIn(1.0),
                    Some(gain) => Init::FanIn(num(key, gain.trim_start_matches(':'))?),
                    None => Init::Normal(num(key, value)?),
                }
            }
            "w_std" => self.model.w_std = num(key, value)?,
            "eps_mass" => self.eps_mass = num(key, value)?,
            "jitter" => self.jitter = num(key, value)?,
            "balance" => {
                self.balance = match value {
                    "pair" => BalanceMode::PerPair,
                    "epoch" => BalanceMode::PerEpoch,
                    _ => return Err(format!("balance must be pair|epoch, got `{value}`")),
                }
            }
            "delta" => {
                self.delta = if value == "median" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "grad_check" => {
                self.grad_check = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(format!("grad_check must be true|false, got `{value}`")),
                }
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn to_config_text(&self) -> String {
        let init = match self.model.encoder_init {
            Init::Normal(s) => s.to_string(),
            Init::FanIn(g) => format!("fanin:{g}"),
        };
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |x| x.to_string());
        let hidden: Vec<String> = self.model.hidden.iter().map(|h| h.to_string()).collect();
        let mut s = String::new();
        let fields: Vec<(&str, String)> = vec![
            ("r", self.r.to_string()),
            ("k", self.model.k.to_string()),
            ("beta", self.beta.to_string()),
            ("tau", self.tau.to_string()),
            ("lambda", self.lambda.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_drop_at", opt(self.lr_drop_at)),
            ("lr_drop_factor", self.lr_drop_factor.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("batch", self.batch.to_string()),
            ("epochs", self.epochs.to_string()),
            ("pairs_per_epoch", self.pairs_per_epoch.to_string()),
            ("genuine_fraction", self.genuine_fraction.to_string()),
            ("max_iters", opt(self.max_iters)),
            ("seed", self.seed.to_string()),
            ("d_in", self.model.d_in.to_string()),
            ("d", self.model.d.to_string()),
            (
                "hidden",
                if hidden.is_empty() {
                    "none".into()
                } else {
                    hidden.join(",")
                },
            ),
            ("slope", self.model.slope.to_string()),
            ("init", init),
            ("w_std", self.model.w_std.to_string()),
            ("eps_mass", self.eps_mass.to_string()),
            ("jitter", self.jitter.to_string()),
            (
                "balance",
                match self.balance {
                    BalanceMode::PerPair => "pair",
                    BalanceMode::PerEpoch => "epoch",
                }
                .into(),
            ),
            (
                "delta",
                self.delta.map_or("median".to_string(), |d| d.to_string()),
            ),
            ("grad_check", self.grad_check.to_string()),
        ];
        for (k, v) in fields {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn learning_rate(&self, iteration: usize) -> f64 {
        match self.lr_drop_at {
            Some(at) if iteration >= at => self.lr * self.lr_drop_factor,
            _ => self.lr,
        }
    }

    pub fn total_iterations(&self) -> usize {
        let per_epoch = self.pairs_per_epoch.div_ceil(self.batch);
        let total = self.epochs * per_epoch;
        self.max_iters.map_or(total, |m| m.min(total))
    }
}

/// Keeps model initialization on a different stream from pair sampling.
const INIT_STREAM: u64 = 0x1a17_5eed;
const AUDIT_STREAM: u64 = 0xa0d1_7000;

/// Fresh model for `cfg`, seeded from `cfg.seed`.
pub fn init_model(cfg: &TrainConfig) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INIT_STREAM);
    Model::new(&cfg.model, &mut rng)
}

/// Random model for gradient audits: fan-in encoder and every tensor
/// perturbed away from its structured initial value, so no parameter sits at
/// a special point (U = I, G = 0).
pub fn audit_model(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Model> {
    let cfg = ModelConfig {
        encoder_init: Init::FanIn(1.0),
        w_std: 0.5,
        ..cfg.clone()
    };
    let mut model = Model::new(&cfg, rng)?;
    for t in model.tensors_mut() {
        t.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    Ok(model)
}

/// Two random sets of 2..=6 media with coordinates in [-1, 1].
pub fn random_pair_input(rng: &mut impl Rng, d_in: usize, label: u8) -> PairInput {
    let n = rng.random_range(2..=6);
    let m = rng.random_range(2..=6);
    PairInput {
        a: Array2::from_shape_simple_fn((n, d_in), || rng.random_range(-1.0..1.0)),
        b: Array2::from_shape_simple_fn((m, d_in), || rng.random_range(-1.0..1.0)),
        label,
    }
}

/// One balanced training sample: the two media matrices and the label.
#[derive(Debug, Clone, PartialEq)]
pub struct PairInput {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub label: u8,
}

impl PairInput {
    pub fn from_sets(a: &MediaSet, b: &MediaSet, label: u8) -> Result<Self> {
        Ok(PairInput {
            a: a.to_matrix()?,
            b: b.to_matrix()?,
            label,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub iteration: usize,
    pub ranking: f64,
    pub dsg: f64,
    pub joint: f64,
    pub energies: Vec<f64>,
}

impl LossReport {
    fn check_finite(&self) -> Result<()> {
        let terms = [
            ("ranking", self.ranking),
            ("dsg", self.dsg),
            ("joint", self.joint),
        ];
        for (term, v) in terms {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    term,
                    iteration: self.iteration,
                });
            }
        }
        Ok(())
    }
}

struct PairForward {
    ea: SetEmbedding,
    eb: SetEmbedding,
    d_ab: Array2<f64>,
    d_aa: Array2<f64>,
    d_bb: Array2<f64>,
    energy: f64,
    ranking: f64,
    dsg_a: f64,
    dsg_b: f64,
}

fn run_forward(model: &Model, input: &PairInput, cfg: &TrainConfig) -> Result<PairForward> {
    let ea = model.embed(&input.a)?;
    let eb = model.embed(&input.b)?;
    let fa = &ea.reconstruction.f_hat;
    let fb = &eb.reconstruction.f_hat;
    let d_ab = pairwise_distances(fa, fb)?;
    let d_aa = pairwise_distances(fa, fa)?;
    let d_bb = pairwise_distances(fb, fb)?;
    let e = energy(&d_ab, cfg.beta)?;
    let dsg_a = dsg_loss(&ea.assignment.z_tilde, &d_aa)?;
    let dsg_b = dsg_loss(&eb.assignment.z_tilde, &d_bb)?;
    Ok(PairForward {
        ranking: ranking_loss(e, input.label, cfg.tau),
        ea,
        eb,
        d_ab,
        d_aa,
        d_bb,
        energy: e,
        dsg_a,
        dsg_b,
    })
}

impl PairForward {
    fn report(&self, lambda: f64, iteration: usize) -> LossReport {
        let dsg = self.dsg_a + self.dsg_b;
        LossReport {
            iteration,
            ranking: self.ranking,
            dsg,
            joint: self.ranking + lambda * dsg,
            energies: vec![self.energy],
        }
    }
}

/// Joint loss of one pair without gradients.
pub fn forward_pair(model: &Model, input: &PairInput, cfg: &TrainConfig) -> Result<LossReport> {
    Ok(run_forward(model, input, cfg)?.report(cfg.lambda, 0))
}

/// Joint loss of one pair; its parameter gradients are added into `grads`.
pub fn forward_backward(
    model: &Model,
    input: &PairInput,
    cfg: &TrainConfig,
    grads: &mut Model,
) -> Result<LossReport> {
    let fw = run_forward(model, input, cfg)?;
    let fa = &fw.ea.reconstruction.f_hat;
    let fb = &fw.eb.reconstruction.f_hat;

    let mut d_fa = Array2::zeros(fa.raw_dim());
    let mut d_fb = Array2::zeros(fb.raw_dim());
    let g_e = ranking_loss_grad(fw.energy, input.label, cfg.tau);
    if g_e != 0.0 {
        let d_dab = energy_backward(&fw.d_ab, cfg.beta, g_e)?;
        distances_backward(fa, fb, &d_dab, &mut d_fa, &mut d_fb);
    }

    for (emb, d_within, d_fhat) in [(&fw.ea, &fw.d_aa, &mut d_fa), (&fw.eb, &fw.d_bb, &mut d_fb)] {
        let zt = &emb.assignment.z_tilde;
        let (d_zt_dsg, d_dd) = dsg_backward(zt, d_within, cfg.lambda)?;
        if cfg.lambda != 0.0 {
            let f_hat = &emb.reconstruction.f_hat;
            let mut left = Array2::zeros(f_hat.raw_dim());
            let mut right = Array2::zeros(f_hat.raw_dim());
            distances_backward(f_hat, f_hat, &d_dd, &mut left, &mut right);
            *d_fhat += &left;
            *d_fhat += &right;
        }
        let feats = emb.features();
        let rec = reconstruct_backward(
            &model.dsg,
            feats,
            zt,
            &emb.reconstruction,
            d_fhat,
            &mut grads.dsg.u,
            &mut grads.dsg.g,
        );
        let mut d_f = rec.d_f;
        let d_zt = rec.d_z_tilde + &d_zt_dsg;
        indicator_backward(
            &model.dsg,
            feats,
            &emb.assignment,
            &d_zt,
            &mut grads.dsg.w,
            &mut d_f,
        );
        model.encoder.backward(&emb.trace, &d_f, &mut grads.encoder);
    }
    Ok(fw.report(cfg.lambda, 0))
}

/// SGD with momentum and L2 weight decay:
/// `v <- m v + lr (g + wd p)`, `p <- p - v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(model: &Model, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: model
                .tensors()
                .iter()
                .map(|t| vec![0.0; t.data.len()])
                .collect(),
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Model, lr: f64) {
        let grad_views = grads.tensors();
        for ((param, grad), vel) in model
            .tensors_mut()
            .into_iter()
            .zip(grad_views)
            .zip(self.velocity.iter_mut())
        {
            for ((p, g), v) in param.iter_mut().zip(grad.data).zip(vel.iter_mut()) {
                *v = self.momentum * *v + lr * (g + self.weight_decay * *p);
                *p -= *v;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<LossReport>,
    /// Gradient audit of the first pair when `grad_check` is set.
    pub audit: Option<GradCheckReport>,
}

fn balanced_side(set: &MediaSet, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<MediaSet> {
    balance_set(set, cfg.r, cfg.jitter, rng)
}

/// Runs SGD over freshly sampled pairs each epoch. Deterministic for a fixed
/// seed: sampling, balancing and gradient accumulation are sequential.
pub fn train(mut model: Model, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.dim != model.in_dim() {
        return Err(Error::Shape(format!(
            "dataset dim {} != model input {}",
            ds.dim,
            model.in_dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(&model, cfg.momentum, cfg.weight_decay);
    let mut history = Vec::new();
    let total = cfg.total_iterations();
    let mut t = 0usize;
    let mut audit = None;

    'epochs: for _ in 0..cfg.epochs {
        let pairs = sample_pairs(ds, cfg.pairs_per_epoch, cfg.genuine_fraction, &mut rng)?;
        let mut epoch_cache: HashMap<(u64, u64, u8), (MediaSet, MediaSet)> = HashMap::new();
        for batch in pairs.chunks(cfg.batch) {
            if t >= total {
                break 'epochs;
            }
            let mut grads = model.zeros_like();
            let mut sum = LossReport {
                iteration: t,
                ranking: 0.0,
                dsg: 0.0,
                joint: 0.0,
                energies: Vec::new(),
            };
            for pair in batch {
                let (a, b) = match cfg.balance {
                    BalanceMode::PerPair => {
                        let (a, b) = ds.resolve_pair(pair)?;
                        (
                            balanced_side(&a, cfg, &mut rng)?,
                            balanced_side(&b, cfg, &mut rng)?,
                        )
                    }
                    BalanceMode::PerEpoch => {
                        resolve_cached(ds, pair, cfg, &mut epoch_cache, &mut rng)?
                    }
                };
                let input = PairInput::from_sets(&a, &b, pair.label)?;
                if cfg.grad_check && audit.is_none() {
                    let mut audit_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ AUDIT_STREAM);
                    audit = Some(grad_check(
                        &model,
                        &input,
                        cfg,
                        GradCheckOptions::default(),
                        &mut audit_rng,
                    )?);
                }
                let r = forward_backward(&model, &input, cfg, &mut grads)?;
                sum.ranking += r.ranking;
                sum.dsg += r.dsg;
                sum.energies.extend(r.energies);
            }
            let scale = 1.0 / batch.len() as f64;
            sum.ranking *= scale;
            sum.dsg *= scale;
            sum.joint = sum.ranking + cfg.lambda * sum.dsg;
            sum.check_finite()?;
            for g in grads.tensors_mut() {
                g.iter_mut().for_each(|v| *v *= scale);
            }
            opt.step(&mut model, &grads, cfg.learning_rate(t));
            if !model.is_finite() {
                return Err(Error::NonFinite {
                    term: "parameter",
                    iteration: t,
                });
            }
            history.push(sum);
            t += 1;
        }
    }
    Ok(TrainOutcome {
        model,
        history,
        audit,
    })
}

fn resolve_cached(
    ds: &Dataset,
    pair: &SetPair,
    cfg: &TrainConfig,
    cache: &mut HashMap<(u64, u64, u8), (MediaSet, MediaSet)>,
    rng: &mut impl Rng,
) -> Result<(MediaSet, MediaSet)> {
    // split pairs are cached as a unit; whole sets under (id, id, 2)
    if pair.is_split() {
        let key = (pair.a, pair.a, 0);
        if let Some(v) = cache.get(&key) {
            return Ok(v.clone());
        }
        let (a, b) = ds.resolve_pair(pair)?;
        let v = (balanced_side(&a, cfg, rng)?, balanced_side(&b, cfg, rng)?);
        cache.insert(key, v.clone());
        return Ok(v);
    }
    let mut side = |id: u64| -> Result<MediaSet> {
        let key = (id, id, 2);
        if let Some((s, _)) = cache.get(&key) {
            return Ok(s.clone());
        }
        let set = ds
            .set(id)
            .ok_or_else(|| Error::Domain(format!("unknown set {id}")))?;
        let s = balanced_side(set, cfg, rng)?;
        cache.insert(key, (s.clone(), s.clone()));
        Ok(s)
    };
    Ok((side(pair.a)?, side(pair.b)?))
}

pub fn history_csv(history: &[LossReport]) -> String {
    let mut s = String::from("iter,ranking,dsg,joint\n");
    for r in history {
        let _ = writeln!(s, "{},{},{},{}", r.iteration, r.ranking, r.dsg, r.joint);
    }
    s
}

pub fn save_history(history: &[LossReport], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, history_csv(history))?;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub coords_per_tensor: usize,
    pub tolerance: f64,
    /// Denominator floor of the relative error, so that gradients that are
    /// zero on both sides compare by absolute difference.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            coords_per_tensor: 100,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.max_rel_error <= self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for t in &self.tensors {
            let _ = writeln!(
                s,
                "{:<18} checked={:<4} max_rel_err={:.3e} max_abs_err={:.3e} max_grad={:.3e}{}",
                t.name,
                t.checked,
                t.max_rel_error,
                t.max_abs_error,
                t.max_abs_grad,
                if t.max_rel_error <= self.tolerance {
                    ""
                } else {
                    "  FAIL"
                }
            );
        }
        let _ = writeln!(s, "result: {}", if self.passed() { "pass" } else { "fail" });
        s
    }
}

/// Which side of every non-smooth point the forward pass sits on: leaky
/// unit signs, the hinge state and whether the floors engage.
fn kink_signature(model: &Model, input: &PairInput, cfg: &TrainConfig) -> Result<Vec<bool>> {
    let fw = run_forward(model, input, cfg)?;
    let mut sig = Vec::new();
    for emb in [&fw.ea, &fw.eb] {
        for pre in &emb.trace.pre {
            sig.extend(pre.iter().map(|v| *v > 0.0));
        }
        sig.extend(
            emb.assignment
                .row_sums
                .iter()
                .map(|s| *s > crate::dsg::ROW_SUM_FLOOR),
        );
        sig.extend(
            emb.reconstruction
                .norms
                .iter()
                .map(|n| *n > crate::dsg::NORM_FLOOR),
        );
    }
    sig.push(cfg.tau - fw.energy > 0.0);
    Ok(sig)
}

fn with_coordinate(model: &Model, tensor: usize, idx: usize, delta: f64) -> Model {
    let mut m = model.clone();
    m.tensors_mut()[tensor][idx] += delta;
    m
}

/// Central-difference audit of the joint-loss gradient on one pair.
pub fn grad_check(
    model: &Model,
    input: &PairInput,
    cfg: &TrainConfig,
    opts: GradCheckOptions,
    rng: &mut impl Rng,
) -> Result<GradCheckReport> {
    let mut grads = model.zeros_like();
    forward_backward(model, input, cfg, &mut grads)?;
    compare_gradients(model, input, cfg, &grads, opts, rng)
}

/// Compares supplied analytic gradients against central differences on up
/// to `coords_per_tensor` random coordinates of every tensor. Coordinates
/// whose perturbation crosses a kink are replaced by fresh draws.
pub fn compare_gradients(
    model: &Model,
    input: &PairInput,
    cfg: &TrainConfig,
    analytic: &Model,
    opts: GradCheckOptions,
    rng: &mut impl Rng,
) -> Result<GradCheckReport> {
    let h = opts.step;
    let names: Vec<String> = model.tensors().iter().map(|t| t.name.clone()).collect();
    let analytic_views = analytic.tensors();
    let mut out = Vec::with_capacity(names.len());
    for (ti, name) in names.iter().enumerate() {
        let len = analytic_views[ti].data.len();
        let order: Vec<usize> = if len <= opts.coords_per_tensor {
            (0..len).collect()
        } else {
            index::sample(rng, len, len).into_vec()
        };
        let mut check = TensorCheck {
            name: name.clone(),
            checked: 0,
            skipped_kinks: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            max_abs_grad: 0.0,
        };
        for idx in order {
            if check.checked >= opts.coords_per_tensor {
                break;
            }
            let plus = with_coordinate(model, ti, idx, h);
            let minus = with_coordinate(model, ti, idx, -h);
            if kink_signature(&plus, input, cfg)? != kink_signature(&minus, input, cfg)? {
                check.skipped_kinks += 1;
                continue;
            }
            let lp = forward_pair(&plus, input, cfg)?.joint;
            let lm = forward_pair(&minus, input, cfg)?.joint;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic_views[ti].data[idx];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            check.max_abs_error = check.max_abs_error.max(abs);
            check.max_rel_error = check.max_rel_error.max(rel);
            check.max_abs_grad = check.max_abs_grad.max(a.abs());
            check.checked += 1;
        }
        out.push(check);
    }
    Ok(GradCheckReport {
        tensors: out,
        tolerance: opts.tolerance,
    })
}
