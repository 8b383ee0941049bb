//! Set-pair scoring.
//!
//! Cross-set distances are folded into one energy, a softmax-weighted mean
//! where larger distances get exponentially more weight:
//! `E = sum d_ij exp(beta d_ij) / sum exp(beta d_ij)`. Matching can run over
//! all media (n*m distances) or over pooled prototype representatives
//! (K'*K'' distances).

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};

use crate::dataset::MediaSet;
use crate::dsg::{pairwise_distances, NORM_FLOOR};
use crate::error::{shape_err, Error, Result};
use crate::model::{Model, SetEmbedding};

pub const DEFAULT_EPS_MASS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatchMode {
    MediaLevel,
    PrototypeLevel,
}

impl FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "media" | "media_level" => Ok(MatchMode::MediaLevel),
            "proto" | "prototype" | "prototype_level" => Ok(MatchMode::PrototypeLevel),
            other => Err(Error::Config(format!(
                "unknown match mode `{other}` (expected media|proto)"
            ))),
        }
    }
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchMode::MediaLevel => "media",
            MatchMode::PrototypeLevel => "proto",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchEnergy {
    pub energy: f64,
    pub beta: f64,
    pub mode: MatchMode,
}

fn softmax_weights(d: &Array2<f64>, beta: f64) -> Result<Array2<f64>> {
    if d.is_empty() {
        return Err(Error::Domain("energy of an empty distance matrix".into()));
    }
    if !beta.is_finite() {
        return Err(Error::Domain(format!("beta must be finite, got {beta}")));
    }
    let shift = d.iter().map(|v| beta * v).fold(f64::NEG_INFINITY, f64::max);
    let mut w = d.mapv(|v| (beta * v - shift).exp());
    let total = w.sum();
    w.mapv_inplace(|v| v / total);
    Ok(w)
}

/// Softmax-weighted mean of all entries, weights `exp(beta d_ij)`.
pub fn energy(d: &Array2<f64>, beta: f64) -> Result<f64> {
    let w = softmax_weights(d, beta)?;
    Ok((&w * d).sum())
}

/// `dE/dd_ij = w_ij (1 + beta (d_ij - E))`, times `upstream`.
pub fn energy_backward(d: &Array2<f64>, beta: f64, upstream: f64) -> Result<Array2<f64>> {
    let w = softmax_weights(d, beta)?;
    let e = (&w * d).sum();
    let mut g = w;
    g.zip_mut_with(d, |wij, &dij| *wij *= upstream * (1.0 + beta * (dij - e)));
    Ok(g)
}

/// Contrastive margin loss: `E` for genuine pairs (`label = 0`),
/// `max(0, margin - E)` for imposters.
pub fn ranking_loss(energy: f64, label: u8, margin: f64) -> f64 {
    if label == 0 {
        energy
    } else {
        (margin - energy).max(0.0)
    }
}

/// Derivative of [`ranking_loss`] w.r.t. the energy.
pub fn ranking_loss_grad(energy: f64, label: u8, margin: f64) -> f64 {
    if label == 0 {
        1.0
    } else if margin - energy > 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pooled prototype representatives of one set.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSummary {
    /// `K' x d`, unit-norm rows.
    pub representatives: Array2<f64>,
    pub masses: Array1<f64>,
    /// Original prototype index of each surviving row.
    pub prototypes: Vec<usize>,
}

/// Mass-weighted mean of the reconstructed features per prototype,
/// renormalized. Prototypes lighter than `eps_mass` are dropped except the
/// heaviest one, which always survives.
pub fn prototype_pool(
    f_hat: &Array2<f64>,
    z_tilde: &Array2<f64>,
    eps_mass: f64,
) -> Result<PrototypeSummary> {
    if f_hat.nrows() != z_tilde.nrows() {
        return Err(shape_err("membership rows", f_hat.nrows(), z_tilde.nrows()));
    }
    if f_hat.nrows() == 0 {
        return Err(Error::Domain("cannot pool an empty set".into()));
    }
    if !(eps_mass > 0.0) {
        return Err(Error::Config(format!(
            "eps_mass must be positive, got {eps_mass}"
        )));
    }
    let masses = z_tilde.sum_axis(ndarray::Axis(0));
    let heaviest = masses
        .iter()
        .enumerate()
        .fold(0, |best, (k, m)| if *m > masses[best] { k } else { best });
    let keep: Vec<usize> = (0..masses.len())
        .filter(|&k| masses[k] >= eps_mass || k == heaviest)
        .collect();

    let pooled = z_tilde.t().dot(f_hat);
    let mut reps = Array2::zeros((keep.len(), f_hat.ncols()));
    for (row, &k) in keep.iter().enumerate() {
        let mean = pooled.row(k).mapv(|v| v / masses[k].max(NORM_FLOOR));
        let norm = mean.dot(&mean).sqrt().max(NORM_FLOOR);
        reps.row_mut(row).assign(&mean.mapv(|v| v / norm));
    }
    Ok(PrototypeSummary {
        representatives: reps,
        masses: keep.iter().map(|&k| masses[k]).collect(),
        prototypes: keep,
    })
}

/// Result of scoring one set pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOutcome {
    pub energy: MatchEnergy,
    /// `-E`; higher means more similar.
    pub score: f64,
    /// Number of pairwise distances evaluated.
    pub distance_evals: usize,
}

/// Scores two already-embedded sets.
pub fn match_embeddings(
    a: &SetEmbedding,
    b: &SetEmbedding,
    mode: MatchMode,
    beta: f64,
    eps_mass: f64,
) -> Result<MatchOutcome> {
    let d = match mode {
        MatchMode::MediaLevel => {
            pairwise_distances(&a.reconstruction.f_hat, &b.reconstruction.f_hat)?
        }
        MatchMode::PrototypeLevel => {
            let pa = a.prototype_summary(eps_mass)?;
            let pb = b.prototype_summary(eps_mass)?;
            pairwise_distances(&pa.representatives, &pb.representatives)?
        }
    };
    let e = energy(&d, beta)?;
    Ok(MatchOutcome {
        energy: MatchEnergy {
            energy: e,
            beta,
            mode,
        },
        score: -e,
        distance_evals: d.len(),
    })
}

/// Encodes both sets, runs the DSG forward pass and scores the pair.
pub fn match_sets(
    a: &MediaSet,
    b: &MediaSet,
    model: &Model,
    mode: MatchMode,
    beta: f64,
    eps_mass: f64,
) -> Result<MatchOutcome> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("cannot match an empty set".into()));
    }
    let ea = model.embed_set(a)?;
    let eb = model.embed_set(b)?;
    match_embeddings(&ea, &eb, mode, beta, eps_mass)
}
