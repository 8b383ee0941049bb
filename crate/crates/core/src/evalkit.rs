//! Verification and open-set identification metrics over set-pair scores.
//!
//! Threshold convention: at FAR = x the threshold is the smallest value `t`
//! with `#{imposter >= t} / n_imp <= x`. With `c = floor(x * n_imp)` and
//! imposter scores sorted descending as `b_1 >= b_2 >= ...`, that is the
//! open bound just above `b_{c+1}`, so a genuine score is accepted iff it is
//! strictly greater than `b_{c+1}` (every score is accepted when `c >= n_imp`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{Dataset, MediaSet, SetPair};
use crate::error::{Error, Result};
use crate::matching::{match_embeddings, MatchMode};
use crate::model::{Model, SetEmbedding};

pub const DEFAULT_FAR_POINTS: [f64; 3] = [0.1, 0.01, 0.001];
pub const DEFAULT_RANKS: [usize; 3] = [1, 5, 10];
pub const DEFAULT_TOP_L: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreSample {
    pub score: f64,
    pub genuine: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    /// `(far, tar)` in the order requested.
    pub tar_at_far: Vec<(f64, f64)>,
    /// `(fpir, fnir)` in the order requested.
    pub fnir_at_fpir: Vec<(f64, f64)>,
    /// `(n, rate)`.
    pub rank_n: Vec<(usize, f64)>,
    pub auc: Option<f64>,
}

impl MetricReport {
    pub fn tar(&self, far: f64) -> Option<f64> {
        self.tar_at_far
            .iter()
            .find(|(f, _)| *f == far)
            .map(|(_, t)| *t)
    }

    pub fn merge(mut self, other: MetricReport) -> MetricReport {
        self.tar_at_far.extend(other.tar_at_far);
        self.fnir_at_fpir.extend(other.fnir_at_fpir);
        self.rank_n.extend(other.rank_n);
        self.auc = self.auc.or(other.auc);
        self
    }

    /// One `key: value` pair per line inside braces.
    pub fn summary(&self) -> String {
        let mut s = String::from("{\n");
        for (far, tar) in &self.tar_at_far {
            let _ = writeln!(s, "  \"tar@far={far}\": {tar},");
        }
        for (fpir, fnir) in &self.fnir_at_fpir {
            let _ = writeln!(s, "  \"fnir@fpir={fpir}\": {fnir},");
        }
        for (n, rate) in &self.rank_n {
            let _ = writeln!(s, "  \"rank{n}\": {rate},");
        }
        match self.auc {
            Some(a) => {
                let _ = writeln!(s, "  \"auc\": {a}");
            }
            None => {
                let _ = writeln!(s, "  \"auc\": null");
            }
        }
        s.push('}');
        s.push('\n');
        s
    }
}

/// Largest count `c` with `c / n <= x`.
fn allowed_false(x: f64, n: usize) -> usize {
    let mut c = (x * n as f64).floor().max(0.0) as usize;
    while c > 0 && c as f64 / n as f64 > x {
        c -= 1;
    }
    while c < n && (c + 1) as f64 / n as f64 <= x {
        c += 1;
    }
    c.min(n)
}

/// Score a sample must exceed to be accepted at false-accept rate `x`;
/// `None` accepts everything.
fn threshold_bound(sorted_desc: &[f64], x: f64) -> Option<f64> {
    let c = allowed_false(x, sorted_desc.len());
    sorted_desc.get(c).copied()
}

fn accepted(score: f64, bound: Option<f64>) -> bool {
    bound.is_none_or(|b| score > b)
}

fn sort_desc(v: &mut [f64]) {
    v.sort_by(|a, b| b.total_cmp(a));
}

pub fn verification_metrics(samples: &[ScoreSample], far_points: &[f64]) -> Result<MetricReport> {
    if let Some(s) = samples.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::Domain(format!("non-finite score {}", s.score)));
    }
    let mut gen: Vec<f64> = samples
        .iter()
        .filter(|s| s.genuine)
        .map(|s| s.score)
        .collect();
    let mut imp: Vec<f64> = samples
        .iter()
        .filter(|s| !s.genuine)
        .map(|s| s.score)
        .collect();
    if gen.is_empty() || imp.is_empty() {
        return Err(Error::Domain(
            "verification needs genuine and imposter samples".into(),
        ));
    }
    sort_desc(&mut gen);
    sort_desc(&mut imp);
    let tar_at_far = far_points
        .iter()
        .map(|&x| {
            let bound = threshold_bound(&imp, x);
            let hits = gen.iter().filter(|g| accepted(**g, bound)).count();
            (x, hits as f64 / gen.len() as f64)
        })
        .collect();
    Ok(MetricReport {
        tar_at_far,
        auc: Some(roc_auc(&gen, &imp)),
        ..MetricReport::default()
    })
}

/// Area under the ROC traced by thresholds at every distinct score.
fn roc_auc(gen_desc: &[f64], imp_desc: &[f64]) -> f64 {
    let (ng, ni) = (gen_desc.len() as f64, imp_desc.len() as f64);
    let (mut gi, mut ii) = (0, 0);
    let (mut prev_far, mut prev_tar, mut area) = (0.0, 0.0, 0.0);
    while gi < gen_desc.len() || ii < imp_desc.len() {
        let t = match (gen_desc.get(gi), imp_desc.get(ii)) {
            (Some(g), Some(i)) => g.max(*i),
            (Some(g), None) => *g,
            (None, Some(i)) => *i,
            (None, None) => unreachable!(),
        };
        while gi < gen_desc.len() && gen_desc[gi] >= t {
            gi += 1;
        }
        while ii < imp_desc.len() && imp_desc[ii] >= t {
            ii += 1;
        }
        let (far, tar) = (ii as f64 / ni, gi as f64 / ng);
        area += (far - prev_far) * (tar + prev_tar) / 2.0;
        prev_far = far;
        prev_tar = tar;
    }
    area
}

/// Scores of one probe against every gallery subject.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeScores {
    /// Gallery subject of the probe, if enrolled.
    pub mate: Option<u64>,
    pub scores: BTreeMap<u64, f64>,
}

impl ProbeScores {
    fn best(&self) -> f64 {
        self.scores
            .values()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// 1 + number of subjects scoring strictly above the mate.
    fn mate_rank(&self) -> Option<(usize, f64)> {
        let mate = self.scores.get(&self.mate?)?;
        let above = self.scores.values().filter(|s| *s > mate).count();
        Some((above + 1, *mate))
    }
}

/// Rank-n and FNIR at the requested FPIR points. Mated probes whose subject
/// is missing from the scores count as misses at every rank.
pub fn identification_from_scores(
    probes: &[ProbeScores],
    top_l: usize,
    fpir_points: &[f64],
    ranks: &[usize],
) -> Result<MetricReport> {
    let mated: Vec<&ProbeScores> = probes.iter().filter(|p| p.mate.is_some()).collect();
    if mated.is_empty() {
        return Err(Error::Domain(
            "identification needs at least one mated probe".into(),
        ));
    }
    if probes
        .iter()
        .flat_map(|p| p.scores.values())
        .any(|s| !s.is_finite())
    {
        return Err(Error::Domain("non-finite identification score".into()));
    }
    let mate_ranks: Vec<Option<(usize, f64)>> = mated.iter().map(|p| p.mate_rank()).collect();
    let n = mated.len() as f64;
    let rank_n = ranks
        .iter()
        .map(|&r| {
            let hits = mate_ranks
                .iter()
                .filter(|m| m.is_some_and(|(rank, _)| rank <= r))
                .count();
            (r, hits as f64 / n)
        })
        .collect();

    let mut non_mated: Vec<f64> = probes
        .iter()
        .filter(|p| p.mate.is_none())
        .map(|p| p.best())
        .collect();
    sort_desc(&mut non_mated);
    let fnir_at_fpir = if non_mated.is_empty() {
        Vec::new()
    } else {
        fpir_points
            .iter()
            .map(|&x| {
                let bound = threshold_bound(&non_mated, x);
                let hits = mate_ranks
                    .iter()
                    .filter(|m| m.is_some_and(|(rank, s)| rank <= top_l && accepted(s, bound)))
                    .count();
                (x, 1.0 - hits as f64 / n)
            })
            .collect()
    };
    Ok(MetricReport {
        fnir_at_fpir,
        rank_n,
        ..MetricReport::default()
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ScoringOptions {
    pub mode: MatchMode,
    pub beta: f64,
    pub eps_mass: f64,
    /// Worker threads; 1 scores sequentially.
    pub threads: usize,
}

fn with_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    if threads <= 1 {
        return Ok(job());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

fn embed_all(model: &Model, sets: &[&MediaSet], threads: usize) -> Result<Vec<SetEmbedding>> {
    with_pool(threads, || {
        sets.par_iter()
            .map(|s| model.embed_set(s))
            .collect::<Result<Vec<_>>>()
    })?
}

/// Scores a list of pairs. Each distinct set (or split half) is embedded
/// once; output order follows `pairs` regardless of thread count.
pub fn score_pairs(
    model: &Model,
    ds: &Dataset,
    pairs: &[SetPair],
    opts: ScoringOptions,
) -> Result<Vec<ScoreSample>> {
    let mut sides: Vec<MediaSet> = Vec::new();
    let mut index: BTreeMap<(u64, u8), usize> = BTreeMap::new();
    let mut slot = |id: u64, part: u8, set: MediaSet, sides: &mut Vec<MediaSet>| {
        *index.entry((id, part)).or_insert_with(|| {
            sides.push(set);
            sides.len() - 1
        })
    };
    let mut refs = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (a, b) = ds.resolve_pair(p)?;
        let (ka, kb) = if p.is_split() { (1, 2) } else { (0, 0) };
        let ia = slot(p.a, ka, a, &mut sides);
        let ib = slot(p.b, kb, b, &mut sides);
        refs.push((ia, ib, p.is_genuine()));
    }
    let set_refs: Vec<&MediaSet> = sides.iter().collect();
    let emb = embed_all(model, &set_refs, opts.threads)?;
    let scores = with_pool(opts.threads, || {
        refs.par_iter()
            .map(|&(a, b, genuine)| {
                let out = match_embeddings(&emb[a], &emb[b], opts.mode, opts.beta, opts.eps_mass)?;
                Ok(ScoreSample {
                    score: out.score,
                    genuine,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    scores
}

/// Open-set search: every probe is scored against every gallery set and a
/// subject's score is its best gallery set.
pub fn identification_metrics(
    gallery: &[MediaSet],
    probes: &[MediaSet],
    model: &Model,
    top_l: usize,
    fpir_points: &[f64],
    ranks: &[usize],
    opts: ScoringOptions,
) -> Result<MetricReport> {
    if gallery.is_empty() {
        return Err(Error::Domain("empty gallery".into()));
    }
    let g_refs: Vec<&MediaSet> = gallery.iter().collect();
    let p_refs: Vec<&MediaSet> = probes.iter().collect();
    let g_emb = embed_all(model, &g_refs, opts.threads)?;
    let p_emb = embed_all(model, &p_refs, opts.threads)?;
    let enrolled: std::collections::BTreeSet<u64> = gallery.iter().map(|s| s.subject_id).collect();
    let rows = with_pool(opts.threads, || {
        probes
            .par_iter()
            .zip(p_emb.par_iter())
            .map(|(probe, pe)| {
                let mut scores = BTreeMap::new();
                for (gs, ge) in gallery.iter().zip(&g_emb) {
                    let s = match_embeddings(pe, ge, opts.mode, opts.beta, opts.eps_mass)?.score;
                    let e = scores.entry(gs.subject_id).or_insert(f64::NEG_INFINITY);
                    *e = f64::max(*e, s);
                }
                let mate = enrolled
                    .contains(&probe.subject_id)
                    .then_some(probe.subject_id);
                Ok(ProbeScores { mate, scores })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    identification_from_scores(&rows, top_l, fpir_points, ranks)
}

/// Splits a dataset into gallery and probes for open-set search. Every
/// fourth subject (in id order, starting with the fourth) is left out of the
/// gallery and probes as non-mated. An enrolled subject with several sets
/// enrolls its first set and probes with the rest; with a single set, the
/// two split halves play those roles. Non-mated subjects probe with each of
/// their sets.
pub fn open_set_protocol(ds: &Dataset) -> Result<(Vec<MediaSet>, Vec<MediaSet>)> {
    let mut gallery = Vec::new();
    let mut probes = Vec::new();
    for (rank, idxs) in ds.sets_by_subject().values().enumerate() {
        let sets: Vec<&MediaSet> = idxs.iter().map(|&i| &ds.sets[i]).collect();
        if rank % 4 == 3 {
            probes.extend(sets.into_iter().cloned());
        } else if sets.len() >= 2 {
            gallery.push(sets[0].clone());
            probes.extend(sets[1..].iter().map(|s| (*s).clone()));
        } else {
            let (a, b) = Dataset::split_halves(sets[0])?;
            gallery.push(a);
            probes.push(b);
        }
    }
    if gallery.is_empty() {
        return Err(Error::Domain("no subject could be enrolled".into()));
    }
    Ok((gallery, probes))
}

/// Writes `roc.csv` (`far,tar`, ascending far) and `cmc.csv` (`rank,rate`).
pub fn export_curves(report: &MetricReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut roc = report.tar_at_far.clone();
    roc.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut s = String::from("far,tar\n");
    for (far, tar) in roc {
        let _ = writeln!(s, "{far},{tar}");
    }
    fs::write(dir.join("roc.csv"), s)?;
    let mut cmc = report.rank_n.clone();
    cmc.sort_by_key(|r| r.0);
    let mut s = String::from("rank,rate\n");
    for (rank, rate) in cmc {
        let _ = writeln!(s, "{rank},{rate}");
    }
    fs::write(dir.join("cmc.csv"), s)?;
    Ok(())
}
