//! Ground-truth machinery: exhaustive hard DSG minimization on small
//! instances, a k-means baseline and the adjusted Rand index.

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsg::hard_loss;
use crate::error::{shape_err, Error, Result};

/// Largest instance the exhaustive search accepts.
pub const MAX_BRUTE_FORCE_N: usize = 12;
/// Upper bound on enumerated canonical labellings.
pub const MAX_BRUTE_FORCE_ASSIGNMENTS: u128 = 20_000_000;
pub const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardPartition {
    pub labels: Vec<usize>,
    pub k: usize,
}

impl HardPartition {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Domain(format!("label {bad} outside [0, {k})")));
        }
        Ok(HardPartition { labels, k })
    }

    /// Labels renumbered in order of first appearance.
    pub fn canonical(&self) -> Vec<usize> {
        let mut map = HashMap::new();
        self.labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect()
    }
}

/// Number of labellings of `n` items using at most `k` distinct labels, up
/// to renaming: `sum_{j<=k} S(n, j)`.
pub fn canonical_assignment_count(n: usize, k: usize) -> u128 {
    if n == 0 {
        return 1;
    }
    // Stirling numbers of the second kind, row by row
    let mut row = vec![0u128; n + 1];
    row[0] = 1;
    for i in 1..=n {
        let mut next = vec![0u128; n + 1];
        for j in 1..=i {
            next[j] = (j as u128)
                .saturating_mul(row[j])
                .saturating_add(row[j - 1]);
        }
        row = next;
    }
    row.iter()
        .take(k.min(n) + 1)
        .fold(0u128, |a, b| a.saturating_add(*b))
}

struct Search<'a> {
    d: &'a Array2<f64>,
    k: usize,
    labels: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
}

impl Search<'_> {
    fn visit(&mut self, i: usize, used: usize, cost: f64) {
        let n = self.labels.len();
        if i == n {
            // strict improvement keeps the lexicographically first minimizer
            if self.best.as_ref().is_none_or(|(b, _)| cost < *b) {
                self.best = Some((cost, self.labels.clone()));
            }
            return;
        }
        let limit = (used + 1).min(self.k);
        for l in 0..limit {
            let mut add = self.d[[i, i]];
            for j in 0..i {
                if self.labels[j] == l {
                    add += self.d[[i, j]] + self.d[[j, i]];
                }
            }
            self.labels[i] = l;
            self.visit(i + 1, used.max(l + 1), cost + add);
        }
    }
}

/// Exact minimizer of `sum over same-label pairs of d_ij` over all hard
/// assignments with at most `k` labels. Labellings are enumerated once per
/// label renaming (first medium fixed to 0, each new label the next unused
/// one); ties resolve to the lexicographically smallest canonical labelling.
pub fn brute_force_dsg(d: &Array2<f64>, k: usize) -> Result<(HardPartition, f64)> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(shape_err("distance matrix", (n, n), d.dim()));
    }
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if n > MAX_BRUTE_FORCE_N {
        return Err(Error::Capacity(format!(
            "n = {n} exceeds the exhaustive limit of {MAX_BRUTE_FORCE_N}"
        )));
    }
    let count = canonical_assignment_count(n, k);
    if count > MAX_BRUTE_FORCE_ASSIGNMENTS {
        return Err(Error::Capacity(format!(
            "{count} assignments for n = {n}, K = {k} exceed the cap of {MAX_BRUTE_FORCE_ASSIGNMENTS}"
        )));
    }
    if n == 0 {
        return Ok((
            HardPartition {
                labels: Vec::new(),
                k,
            },
            0.0,
        ));
    }
    let mut search = Search {
        d,
        k,
        labels: vec![0; n],
        best: None,
    };
    search.visit(0, 0, 0.0);
    let (_, labels) = search.best.expect("at least one assignment");
    // report the value through the reference formula
    let value = hard_loss(d, &labels);
    Ok((HardPartition { labels, k }, value))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub partition: HardPartition,
    pub centroids: Array2<f64>,
    /// Sum of squared distances to the assigned centroid after each
    /// assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_seed(f: &Array2<f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = f.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist(f.row(i), f.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // guard against round-off landing on an existing centre
            if nearest[pick] == 0.0 {
                pick = nearest.iter().position(|w| *w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // all remaining points coincide with a centre
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, w) in nearest.iter_mut().enumerate() {
            *w = w.min(sq_dist(f.row(i), f.row(next)));
        }
    }
    let mut c = Array2::zeros((k, f.ncols()));
    for (r, &i) in chosen.iter().enumerate() {
        c.row_mut(r).assign(&f.row(i));
    }
    c
}

fn assign(f: &Array2<f64>, c: &Array2<f64>) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let labels = f
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = (0, f64::INFINITY);
            for (k, cr) in c.rows().into_iter().enumerate() {
                let v = sq_dist(row, cr);
                if v < best.1 {
                    best = (k, v);
                }
            }
            total += best.1;
            best.0
        })
        .collect();
    (labels, total)
}

/// Lloyd's algorithm from k-means++ seeding. Empty clusters keep their
/// previous centroid.
pub fn kmeans_detailed(f: &Array2<f64>, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = f.nrows();
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if n < k {
        return Err(Error::Domain(format!(
            "k-means needs n >= K, got n = {n}, K = {k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seed(f, k, &mut rng);
    let (mut labels, obj) = assign(f, &centroids);
    let mut objective = vec![obj];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            let mut r = sums.row_mut(l);
            r += &f.row(i);
            counts[l] += 1;
        }
        for (l, &c) in counts.iter().enumerate() {
            if c > 0 {
                let mean = sums.row(l).mapv(|v| v / c as f64);
                centroids.row_mut(l).assign(&mean);
            }
        }
        let (next, obj) = assign(f, &centroids);
        objective.push(obj);
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(KMeansResult {
        partition: HardPartition { labels, k },
        centroids,
        objective,
        iterations,
    })
}

pub fn kmeans(f: &Array2<f64>, k: usize, seed: u64) -> Result<HardPartition> {
    Ok(kmeans_detailed(f, k, seed)?.partition)
}

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index from the contingency table. Returns 1 when both
/// partitions are trivial in the same way (index and expectation coincide).
pub fn ari(p: &[usize], q: &[usize]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(shape_err("partition length", p.len(), q.len()));
    }
    let n = p.len() as u64;
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&a, &b) in p.iter().zip(q) {
        *table.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    let denom = max - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}
