//! Dense-subgraph (DSG) sub-net.
//!
//! Each set's deep features `F` (n x d) are mapped to soft prototype
//! memberships `Z = sigmoid(F W)`, row-normalized to `Z~` so every medium
//! spreads unit mass over the `K` prototypes. The second layer applies a
//! shared transform `U` and a membership-mixed gate:
//!
//! ```text
//! g_i    = sum_k z~_ik * sigmoid(G_k)
//! f^_i   = normalize(g_i (.) U f_i)
//! ```
//!
//! The relaxed dense-subgraph objective is `tr(Z~^T D Z~)` over the
//! squared-distance matrix `D` of the reconstructed features; low values
//! mean media sharing a prototype sit close together.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};

pub const ROW_SUM_FLOOR: f64 = 1e-8;
pub const NORM_FLOOR: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsgParams {
    /// Prototype predictor, `d x K`.
    pub w: Array2<f64>,
    /// Shared second-layer transform, `d x d`.
    pub u: Array2<f64>,
    /// Gate logits, one row per prototype, `K x d`.
    pub g: Array2<f64>,
}

impl DsgParams {
    /// `W ~ N(0, w_std)`, `U = I`, `G = 0` (all gates at one half).
    pub fn new(d: usize, k: usize, w_std: f64, rng: &mut impl Rng) -> Result<Self> {
        if d == 0 || k == 0 {
            return Err(Error::Config(format!(
                "DSG needs d >= 1 and K >= 1, got d={d}, K={k}"
            )));
        }
        let normal =
            Normal::new(0.0, w_std).map_err(|e| Error::Config(format!("bad W std: {e}")))?;
        Ok(DsgParams {
            w: Array2::from_shape_simple_fn((d, k), || normal.sample(rng)),
            u: Array2::eye(d),
            g: Array2::zeros((k, d)),
        })
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn prototypes(&self) -> usize {
        self.w.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        DsgParams {
            w: Array2::zeros(self.w.raw_dim()),
            u: Array2::zeros(self.u.raw_dim()),
            g: Array2::zeros(self.g.raw_dim()),
        }
    }

    fn check_features(&self, f: &Array2<f64>) -> Result<()> {
        if f.ncols() != self.dim() {
            return Err(shape_err("feature width", self.dim(), f.ncols()));
        }
        Ok(())
    }
}

/// Soft prototype memberships of one set.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeAssignment {
    /// Raw sigmoid memberships, entries in `[0, 1]`.
    pub z: Array2<f64>,
    /// Row-normalized memberships; rows sum to one.
    pub z_tilde: Array2<f64>,
    /// Unfloored row sums of `z`.
    pub row_sums: Array1<f64>,
}

pub fn predict_indicator(p: &DsgParams, f: &Array2<f64>) -> Result<PrototypeAssignment> {
    p.check_features(f)?;
    let z = f.dot(&p.w).mapv(sigmoid);
    Ok(normalize_rows(z))
}

/// Wraps an arbitrary membership matrix, normalizing its rows.
pub fn normalize_rows(z: Array2<f64>) -> PrototypeAssignment {
    let row_sums = z.sum_axis(Axis(1));
    let mut z_tilde = z.clone();
    for (mut row, s) in z_tilde.rows_mut().into_iter().zip(row_sums.iter()) {
        let s = s.max(ROW_SUM_FLOOR);
        row.mapv_inplace(|v| v / s);
    }
    PrototypeAssignment {
        z,
        z_tilde,
        row_sums,
    }
}

/// Chains a gradient w.r.t. `Z~` back to `W`, adding into `d_w` and `d_f`.
pub fn indicator_backward(
    p: &DsgParams,
    f: &Array2<f64>,
    assign: &PrototypeAssignment,
    d_z_tilde: &Array2<f64>,
    d_w: &mut Array2<f64>,
    d_f: &mut Array2<f64>,
) {
    let mut d_s = Array2::zeros(assign.z.raw_dim());
    for i in 0..assign.z.nrows() {
        let s = assign.row_sums[i];
        let zt = assign.z_tilde.row(i);
        let dzt = d_z_tilde.row(i);
        let mut row = d_s.row_mut(i);
        if s > ROW_SUM_FLOOR {
            let dot: f64 = dzt.iter().zip(zt.iter()).map(|(a, b)| a * b).sum();
            for k in 0..row.len() {
                row[k] = (dzt[k] - dot) / s;
            }
        } else {
            for k in 0..row.len() {
                row[k] = dzt[k] / ROW_SUM_FLOOR;
            }
        }
        // through the sigmoid
        for k in 0..row.len() {
            let z = assign.z[[i, k]];
            row[k] *= z * (1.0 - z);
        }
    }
    *d_w += &f.t().dot(&d_s);
    *d_f += &d_s.dot(&p.w.t());
}

/// Intermediate values of the second DSG layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// `sigmoid(G)`, `K x d`.
    pub gate_table: Array2<f64>,
    /// Per-medium effective gates `Z~ sigmoid(G)`, `n x d`.
    pub gates: Array2<f64>,
    /// `F U^T`, `n x d`.
    pub transformed: Array2<f64>,
    /// Unfloored row norms of the gated output.
    pub norms: Array1<f64>,
    /// Reconstructed, unit-norm features.
    pub f_hat: Array2<f64>,
}

pub fn reconstruct(
    p: &DsgParams,
    f: &Array2<f64>,
    z_tilde: &Array2<f64>,
) -> Result<Reconstruction> {
    p.check_features(f)?;
    if z_tilde.dim() != (f.nrows(), p.prototypes()) {
        return Err(shape_err(
            "membership matrix",
            (f.nrows(), p.prototypes()),
            z_tilde.dim(),
        ));
    }
    let gate_table = p.g.mapv(sigmoid);
    let gates = z_tilde.dot(&gate_table);
    let transformed = f.dot(&p.u.t());
    let mut f_hat = &gates * &transformed;
    let norms: Array1<f64> = f_hat.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    for (mut row, n) in f_hat.rows_mut().into_iter().zip(norms.iter()) {
        let n = n.max(NORM_FLOOR);
        row.mapv_inplace(|v| v / n);
    }
    Ok(Reconstruction {
        gate_table,
        gates,
        transformed,
        norms,
        f_hat,
    })
}

/// Gradients produced by [`reconstruct_backward`].
pub struct ReconstructGrads {
    pub d_f: Array2<f64>,
    pub d_z_tilde: Array2<f64>,
}

/// Back-propagates a gradient w.r.t. `f^`, adding into `d_u` and `d_g`.
pub fn reconstruct_backward(
    p: &DsgParams,
    f: &Array2<f64>,
    z_tilde: &Array2<f64>,
    rec: &Reconstruction,
    d_f_hat: &Array2<f64>,
    d_u: &mut Array2<f64>,
    d_g: &mut Array2<f64>,
) -> ReconstructGrads {
    // through the row normalization
    let mut d_h = d_f_hat.to_owned();
    for i in 0..d_h.nrows() {
        let n = rec.norms[i];
        let mut row = d_h.row_mut(i);
        if n > NORM_FLOOR {
            let fh = rec.f_hat.row(i);
            let proj = fh.dot(&row);
            Zip::from(&mut row)
                .and(&fh)
                .for_each(|d, &y| *d = (*d - y * proj) / n);
        } else {
            row.mapv_inplace(|d| d / NORM_FLOOR);
        }
    }
    let d_gates = &d_h * &rec.transformed;
    let d_transformed = &d_h * &rec.gates;

    *d_u += &d_transformed.t().dot(f);
    let d_f = d_transformed.dot(&p.u);

    let d_table = z_tilde.t().dot(&d_gates);
    Zip::from(d_g)
        .and(&d_table)
        .and(&rec.gate_table)
        .for_each(|dg, &dt, &s| *dg += dt * s * (1.0 - s));
    let d_z_tilde = d_gates.dot(&rec.gate_table.t());
    ReconstructGrads { d_f, d_z_tilde }
}

/// Squared Euclidean distances between the rows of `a` and of `b`.
pub fn pairwise_distances(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(shape_err("distance operand width", a.ncols(), b.ncols()));
    }
    let mut out = Array2::zeros((a.nrows(), b.nrows()));
    for (i, ra) in a.rows().into_iter().enumerate() {
        for (j, rb) in b.rows().into_iter().enumerate() {
            out[[i, j]] = ra
                .iter()
                .zip(rb.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
        }
    }
    Ok(out)
}

/// Chains `dL/dD` through `D = dist(a, b)`, adding into `d_a` and `d_b`.
pub fn distances_backward(
    a: &Array2<f64>,
    b: &Array2<f64>,
    d_dist: &Array2<f64>,
    d_a: &mut Array2<f64>,
    d_b: &mut Array2<f64>,
) {
    // d/da_i = 2 sum_j g_ij (a_i - b_j); d/db_j = -2 sum_i g_ij (a_i - b_j)
    let row_w = d_dist.sum_axis(Axis(1));
    let col_w = d_dist.sum_axis(Axis(0));
    let gb = d_dist.dot(b);
    let ga = d_dist.t().dot(a);
    for i in 0..a.nrows() {
        let mut r = d_a.row_mut(i);
        Zip::from(&mut r)
            .and(a.row(i))
            .and(gb.row(i))
            .for_each(|d, &x, &y| *d += 2.0 * (row_w[i] * x - y));
    }
    for j in 0..b.nrows() {
        let mut r = d_b.row_mut(j);
        Zip::from(&mut r)
            .and(b.row(j))
            .and(ga.row(j))
            .for_each(|d, &x, &y| *d += 2.0 * (col_w[j] * x - y));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub a: Array2<f64>,
    pub bandwidth: f64,
}

/// `a_ij = exp(-d_ij / delta^2)`.
pub fn affinity(d: &Array2<f64>, bandwidth: f64) -> Result<AffinityMatrix> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Domain(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    let s = bandwidth * bandwidth;
    Ok(AffinityMatrix {
        a: d.mapv(|v| (-v / s).exp()),
        bandwidth,
    })
}

/// Median heuristic: `delta = sqrt(median of off-diagonal d_ij)`. Falls back
/// to 1 when there is no positive off-diagonal entry.
pub fn median_bandwidth(d: &Array2<f64>) -> f64 {
    let mut off: Vec<f64> = d
        .indexed_iter()
        .filter(|((i, j), _)| i != j)
        .map(|(_, v)| *v)
        .collect();
    if off.is_empty() {
        return 1.0;
    }
    off.sort_by(f64::total_cmp);
    let mid = off.len() / 2;
    let median = if off.len().is_multiple_of(2) {
        0.5 * (off[mid - 1] + off[mid])
    } else {
        off[mid]
    };
    if median > 0.0 {
        median.sqrt()
    } else {
        1.0
    }
}

fn check_loss_shapes(z_tilde: &Array2<f64>, d: &Array2<f64>) -> Result<()> {
    let n = z_tilde.nrows();
    if d.dim() != (n, n) {
        return Err(shape_err("distance matrix", (n, n), d.dim()));
    }
    Ok(())
}

/// Relaxed dense-subgraph loss `tr(Z~^T D Z~)`.
pub fn dsg_loss(z_tilde: &Array2<f64>, d: &Array2<f64>) -> Result<f64> {
    check_loss_shapes(z_tilde, d)?;
    Ok((z_tilde * &d.dot(z_tilde)).sum())
}

/// Gradients of `scale * tr(Z~^T D Z~)`: `(D + D^T) Z~` and `Z~ Z~^T`, both scaled.
pub fn dsg_backward(
    z_tilde: &Array2<f64>,
    d: &Array2<f64>,
    scale: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_loss_shapes(z_tilde, d)?;
    let sym = d + &d.t();
    let d_z = sym.dot(z_tilde) * scale;
    let d_d = z_tilde.dot(&z_tilde.t()) * scale;
    Ok((d_z, d_d))
}

/// Hard labels: row-wise argmax, ties to the lowest prototype index.
pub fn harden(z_tilde: &Array2<f64>) -> Vec<usize> {
    z_tilde
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Euclidean projection of `v` onto the probability simplex.
pub fn project_simplex(v: &mut [f64]) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

#[derive(Debug, Clone, Copy)]
pub struct RelaxOptions {
    pub steps: usize,
    pub step_size: f64,
    pub restarts: usize,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        RelaxOptions {
            steps: 300,
            step_size: 0.05,
            restarts: 8,
        }
    }
}

/// Minimizes the relaxed loss directly over the memberships by projected
/// gradient descent (each row kept on the simplex) from several random
/// starts. Returns the start whose hardened labelling scores lowest,
/// together with that relaxed membership matrix.
pub fn minimize_relaxed(
    d: &Array2<f64>,
    k: usize,
    opts: RelaxOptions,
    rng: &mut impl Rng,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(shape_err("distance matrix", (n, n), d.dim()));
    }
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12) * n as f64;
    let step = opts.step_size / scale;
    let mut best: Option<(f64, Array2<f64>, Vec<usize>)> = None;
    for _ in 0..opts.restarts.max(1) {
        let mut z = Array2::from_shape_simple_fn((n, k), || rng.random::<f64>());
        for mut row in z.rows_mut() {
            project_simplex(row.as_slice_mut().expect("standard layout"));
        }
        for _ in 0..opts.steps {
            let (grad, _) = dsg_backward(&z, d, 1.0)?;
            z.scaled_add(-step, &grad);
            for mut row in z.rows_mut() {
                project_simplex(row.as_slice_mut().expect("standard layout"));
            }
        }
        let labels = harden(&z);
        let value = hard_loss(d, &labels);
        if best.as_ref().is_none_or(|(b, _, _)| value < *b) {
            best = Some((value, z, labels));
        }
    }
    let (_, z, labels) = best.expect("at least one restart");
    Ok((z, labels))
}

/// `sum over same-label pairs (i, j) of d_ij`, i.e. the loss of a hard
/// one-hot membership matrix.
pub fn hard_loss(d: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, li) in labels.iter().enumerate() {
        for (j, lj) in labels.iter().enumerate() {
            if li == lj {
                total += d[[i, j]];
            }
        }
    }
    total
}

pub fn one_hot(labels: &[usize], k: usize) -> Array2<f64> {
    let mut z = Array2::zeros((labels.len(), k));
    for (i, &l) in labels.iter().enumerate() {
        z[[i, l]] = 1.0;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
    }

    fn random_params(rng: &mut impl Rng, d: usize, k: usize) -> DsgParams {
        DsgParams {
            w: rand_matrix(rng, d, k),
            u: rand_matrix(rng, d, d),
            g: rand_matrix(rng, k, d),
        }
    }

    fn block_d() -> Array2<f64> {
        let mut d = Array2::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                if (i < 2) != (j < 2) {
                    d[[i, j]] = 4.0;
                }
            }
        }
        d
    }

    fn central<F: Fn(f64) -> f64>(f: F, h: f64) -> f64 {
        (f(h) - f(-h)) / (2.0 * h)
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
    }

    #[test]
    fn zero_predictor_gives_uniform_memberships() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = DsgParams {
            w: Array2::zeros((3, 4)),
            ..random_params(&mut rng, 3, 4)
        };
        let a = predict_indicator(&p, &rand_matrix(&mut rng, 5, 3)).unwrap();
        assert!(a.z.iter().all(|v| *v == 0.5));
        assert!(a.z_tilde.iter().all(|v| (*v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn saturated_logits_give_one_hot_rows() {
        // F W = +inf in column 1, -inf elsewhere
        let p = DsgParams {
            w: array![[f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY]],
            u: Array2::eye(1),
            g: Array2::zeros((3, 1)),
        };
        let a = predict_indicator(&p, &array![[1.0]]).unwrap();
        assert_eq!(a.z_tilde.row(0).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn indicator_rows_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_params(&mut rng, 4, 6);
        let a = predict_indicator(&p, &(rand_matrix(&mut rng, 9, 4) * 5.0)).unwrap();
        for row in a.z_tilde.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        assert!(a.z.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn indicator_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, d, k) = (5, 3, 4);
        let p = random_params(&mut rng, d, k);
        let f = rand_matrix(&mut rng, n, d);
        let probe = rand_matrix(&mut rng, n, k);
        let loss = |p: &DsgParams, f: &Array2<f64>| {
            let zt = predict_indicator(p, f).unwrap().z_tilde;
            (&zt * &probe).sum() + zt.mapv(|v| v * v).sum()
        };
        let a = predict_indicator(&p, &f).unwrap();
        let d_zt = &probe + &(&a.z_tilde * 2.0);
        let mut d_w = Array2::zeros((d, k));
        let mut d_f = Array2::zeros((n, d));
        indicator_backward(&p, &f, &a, &d_zt, &mut d_w, &mut d_f);
        for idx in 0..d * k {
            let fd = central(
                |h| {
                    let mut q = p.clone();
                    q.w.as_slice_mut().unwrap()[idx] += h;
                    loss(&q, &f)
                },
                1e-5,
            );
            assert!(rel_err(d_w.as_slice().unwrap()[idx], fd) <= 1e-4);
        }
        for idx in 0..n * d {
            let fd = central(
                |h| {
                    let mut g = f.clone();
                    g.as_slice_mut().unwrap()[idx] += h;
                    loss(&p, &g)
                },
                1e-5,
            );
            assert!(rel_err(d_f.as_slice().unwrap()[idx], fd) <= 1e-4);
        }
    }

    #[test]
    fn transparent_gate_normalizes_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = rand_matrix(&mut rng, 4, 3);
        let p = DsgParams {
            w: rand_matrix(&mut rng, 3, 2),
            u: Array2::eye(3),
            g: Array2::from_elem((2, 3), f64::INFINITY),
        };
        let zt = predict_indicator(&p, &f).unwrap().z_tilde;
        let rec = reconstruct(&p, &f, &zt).unwrap();
        for (row, orig) in rec.f_hat.rows().into_iter().zip(f.rows()) {
            let n = orig.dot(&orig).sqrt();
            for (a, b) in row.iter().zip(orig.iter()) {
                assert!((a - b / n).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reconstruction_rows_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let p = random_params(&mut rng, 6, 3);
            let f = rand_matrix(&mut rng, 7, 6);
            let zt = predict_indicator(&p, &f).unwrap().z_tilde;
            let rec = reconstruct(&p, &f, &zt).unwrap();
            for row in rec.f_hat.rows() {
                assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reconstruction_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, d, k) = (4, 3, 2);
        let p = random_params(&mut rng, d, k);
        let f = rand_matrix(&mut rng, n, d);
        let zt = predict_indicator(&p, &f).unwrap().z_tilde;
        let probe = rand_matrix(&mut rng, n, d);
        let loss = |p: &DsgParams, f: &Array2<f64>, zt: &Array2<f64>| {
            (&reconstruct(p, f, zt).unwrap().f_hat * &probe).sum()
        };
        let rec = reconstruct(&p, &f, &zt).unwrap();
        let mut d_u = Array2::zeros((d, d));
        let mut d_g = Array2::zeros((k, d));
        let grads = reconstruct_backward(&p, &f, &zt, &rec, &probe, &mut d_u, &mut d_g);
        let h = 1e-5;
        for idx in 0..d * d {
            let fd = central(
                |e| {
                    let mut q = p.clone();
                    q.u.as_slice_mut().unwrap()[idx] += e;
                    loss(&q, &f, &zt)
                },
                h,
            );
            assert!(rel_err(d_u.as_slice().unwrap()[idx], fd) <= 1e-4);
        }
        for idx in 0..k * d {
            let fd = central(
                |e| {
                    let mut q = p.clone();
                    q.g.as_slice_mut().unwrap()[idx] += e;
                    loss(&q, &f, &zt)
                },
                h,
            );
            assert!(rel_err(d_g.as_slice().unwrap()[idx], fd) <= 1e-4);
        }
        for idx in 0..n * d {
            let fd = central(
                |e| {
                    let mut g = f.clone();
                    g.as_slice_mut().unwrap()[idx] += e;
                    loss(&p, &g, &zt)
                },
                h,
            );
            assert!(rel_err(grads.d_f.as_slice().unwrap()[idx], fd) <= 1e-4);
        }
        for idx in 0..n * k {
            let fd = central(
                |e| {
                    let mut z = zt.clone();
                    z.as_slice_mut().unwrap()[idx] += e;
                    loss(&p, &f, &z)
                },
                h,
            );
            assert!(rel_err(grads.d_z_tilde.as_slice().unwrap()[idx], fd) <= 1e-4);
        }
    }

    #[test]
    fn distance_basics() {
        let e = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let d = pairwise_distances(&e, &e).unwrap();
        assert_eq!(d[[0, 1]], 2.0);
        assert_eq!(d[[0, 2]], 0.0);
        for i in 0..3 {
            assert_eq!(d[[i, i]], 0.0);
            for j in 0..3 {
                assert_eq!(d[[i, j]], d[[j, i]]);
            }
        }
        assert!(matches!(
            pairwise_distances(&e, &Array2::zeros((2, 3))),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn distances_match_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = rand_matrix(&mut rng, 7, 5);
        let b = rand_matrix(&mut rng, 4, 5);
        let d = pairwise_distances(&a, &b).unwrap();
        for i in 0..7 {
            for j in 0..4 {
                let mut s = 0.0;
                for c in 0..5 {
                    let t = a[[i, c]] - b[[j, c]];
                    s += t * t;
                }
                assert!((d[[i, j]] - s).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn distance_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_matrix(&mut rng, 3, 4);
        let b = rand_matrix(&mut rng, 5, 4);
        let probe = rand_matrix(&mut rng, 3, 5);
        let loss =
            |a: &Array2<f64>, b: &Array2<f64>| (&pairwise_distances(a, b).unwrap() * &probe).sum();
        let mut d_a = Array2::zeros(a.raw_dim());
        let mut d_b = Array2::zeros(b.raw_dim());
        distances_backward(&a, &b, &probe, &mut d_a, &mut d_b);
        for idx in 0..a.len() {
            let fd = central(
                |e| {
                    let mut x = a.clone();
                    x.as_slice_mut().unwrap()[idx] += e;
                    loss(&x, &b)
                },
                1e-5,
            );
            assert!(rel_err(d_a.as_slice().unwrap()[idx], fd) <= 1e-4);
        }
        for idx in 0..b.len() {
            let fd = central(
                |e| {
                    let mut x = b.clone();
                    x.as_slice_mut().unwrap()[idx] += e;
                    loss(&a, &x)
                },
                1e-5,
            );
            assert!(rel_err(d_b.as_slice().unwrap()[idx], fd) <= 1e-4);
        }
    }

    #[test]
    fn affinity_values() {
        let d = array![[0.0, 0.25], [0.25, 0.0]];
        let a = affinity(&d, 0.5).unwrap();
        assert_eq!(a.a[[0, 0]], 1.0);
        assert!((a.a[[0, 1]] - 0.367879441171).abs() < 1e-9);
        assert!(matches!(affinity(&d, 0.0), Err(Error::Domain(_))));
        assert!(matches!(affinity(&d, -1.0), Err(Error::Domain(_))));
        let mono = affinity(&array![[0.1, 0.2, 3.0]], 1.3).unwrap().a;
        assert!(mono[[0, 0]] > mono[[0, 1]] && mono[[0, 1]] > mono[[0, 2]]);
    }

    #[test]
    fn median_bandwidth_heuristic() {
        let d = array![[0.0, 1.0, 4.0], [1.0, 0.0, 9.0], [4.0, 9.0, 0.0]];
        // off-diagonal: 1 1 4 4 9 9 -> median 4
        assert_eq!(median_bandwidth(&d), 2.0);
        assert_eq!(median_bandwidth(&Array2::zeros((3, 3))), 1.0);
    }

    #[test]
    fn block_loss_values() {
        let d = block_d();
        let hard = one_hot(&[0, 0, 1, 1], 2);
        assert_eq!(dsg_loss(&hard, &d).unwrap(), 0.0);
        let uniform = Array2::from_elem((4, 2), 0.5);
        assert!((dsg_loss(&uniform, &d).unwrap() - 16.0).abs() < 1e-12);
        let crossed = one_hot(&[0, 1, 0, 1], 2);
        assert!((dsg_loss(&crossed, &d).unwrap() - 16.0).abs() < 1e-12);
        assert!(matches!(
            dsg_loss(&hard, &Array2::zeros((3, 3))),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn dsg_backward_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let zt = rand_matrix(&mut rng, 4, 3);
        let (gz, gd) = dsg_backward(&zt, &Array2::zeros((4, 4)), 1.0).unwrap();
        assert!(gz.iter().all(|v| *v == 0.0));
        assert!(gd.iter().any(|v| *v != 0.0));
        let (_, gd) = dsg_backward(&Array2::zeros((4, 3)), &block_d(), 1.0).unwrap();
        assert!(gd.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dsg_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let zt = rand_matrix(&mut rng, 5, 3);
            let dm = rand_matrix(&mut rng, 5, 5);
            let scale = rng.random_range(0.1..2.0);
            let (gz, gd) = dsg_backward(&zt, &dm, scale).unwrap();
            for idx in 0..zt.len() {
                let fd = central(
                    |e| {
                        let mut z = zt.clone();
                        z.as_slice_mut().unwrap()[idx] += e;
                        scale * dsg_loss(&z, &dm).unwrap()
                    },
                    1e-5,
                );
                assert!(rel_err(gz.as_slice().unwrap()[idx], fd) <= 1e-4);
            }
            for idx in 0..dm.len() {
                let fd = central(
                    |e| {
                        let mut x = dm.clone();
                        x.as_slice_mut().unwrap()[idx] += e;
                        scale * dsg_loss(&zt, &x).unwrap()
                    },
                    1e-5,
                );
                assert!(rel_err(gd.as_slice().unwrap()[idx], fd) <= 1e-4);
            }
        }
    }

    #[test]
    fn harden_rules() {
        assert_eq!(harden(&one_hot(&[2, 0, 1], 3)), vec![2, 0, 1]);
        assert_eq!(harden(&Array2::from_elem((1, 4), 0.25)), vec![0]);
        assert_eq!(harden(&array![[0.2, 0.5, 0.3]]), vec![1]);
    }

    #[test]
    fn simplex_projection() {
        let mut v = [0.2, 0.3, 0.5];
        project_simplex(&mut v);
        assert_eq!(v, [0.2, 0.3, 0.5]);
        let mut v = [3.0, 0.0, -1.0];
        project_simplex(&mut v);
        assert_eq!(v, [1.0, 0.0, 0.0]);
        let mut v = [0.5, 0.5, 0.5, 0.5];
        project_simplex(&mut v);
        assert!(v.iter().all(|x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn relaxed_minimization_finds_block_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (_, labels) =
            minimize_relaxed(&block_d(), 2, RelaxOptions::default(), &mut rng).unwrap();
        assert_eq!(hard_loss(&block_d(), &labels), 0.0);
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[2], labels[3]);
        assert_ne!(labels[0], labels[2]);
    }

    fn sym_distances(rng: &mut impl Rng, n: usize) -> Array2<f64> {
        let pts = rand_matrix(rng, n, 3);
        pairwise_distances(&pts, &pts).unwrap()
    }

    proptest! {
        #[test]
        fn loss_invariances(seed in 0u64..10_000, n in 1usize..8, k in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = sym_distances(&mut rng, n);
            let raw = Array2::from_shape_simple_fn((n, k), || rng.random::<f64>());
            let zt = normalize_rows(raw).z_tilde;
            let base = dsg_loss(&zt, &d).unwrap();
            prop_assert!(base >= 0.0);

            // permute media
            let mut perm: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let zp = zt.select(Axis(0), &perm);
            let dp = d.select(Axis(0), &perm).select(Axis(1), &perm);
            prop_assert!((dsg_loss(&zp, &dp).unwrap() - base).abs() <= 1e-9 * base.max(1.0));

            // permute prototype columns
            let mut cols: Vec<usize> = (0..k).collect();
            rand::seq::SliceRandom::shuffle(cols.as_mut_slice(), &mut rng);
            let zc = zt.select(Axis(1), &cols);
            prop_assert!((dsg_loss(&zc, &d).unwrap() - base).abs() <= 1e-9 * base.max(1.0));

            // hard memberships reduce to same-label pair sums
            let labels = harden(&zt);
            let hard = dsg_loss(&one_hot(&labels, k), &d).unwrap();
            prop_assert!((hard - hard_loss(&d, &labels)).abs() <= 1e-12 * hard.max(1.0));
        }
    }
}
