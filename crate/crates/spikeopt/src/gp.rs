//! Gaussian-process regression on the unit hypercube.
//!
//! The surrogate is a standard GP with an anisotropic Matérn-5/2 kernel,
//!
//! ```text
//! k(a, b) = s2 * (1 + sqrt(5) r + 5 r^2 / 3) * exp(-sqrt(5) r),
//! r^2     = sum_i ((a_i - b_i) / ell_i)^2,
//! ```
//!
//! fitted by maximizing the log marginal likelihood over log-scaled
//! hyperparameters with a small multi-start gradient ascent. Targets are
//! standardized internally; predictions are reported on the original scale.
//! Joint posterior samples over a candidate set (Thompson draws) come from a
//! Cholesky factor of the posterior covariance, with a fixed jitter
//! escalation ladder for numerically borderline factorizations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::space::UnitPoint;

const SQRT5: f64 = 2.23606797749979;

/// Lengthscale bounds (unit-cube coordinates).
pub const LENGTHSCALE_BOUNDS: (f64, f64) = (0.005, 20.0);
/// Signal-variance bounds (standardized target scale).
pub const SIGNAL_BOUNDS: (f64, f64) = (0.01, 50.0);
/// Noise-variance bounds; the lower edge doubles as the jitter floor.
pub const NOISE_BOUNDS: (f64, f64) = (1e-8, 1.0);

/// Diagonal jitter escalation used when a covariance factorization fails.
const JITTER_LADDER: [f64; 5] = [0.0, 1e-8, 1e-6, 1e-4, 1e-2];

/// Matérn-5/2 kernel hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    /// One positive lengthscale per input dimension.
    pub lengthscales: Vec<f64>,
    /// Prior variance of the latent function.
    pub signal_variance: f64,
    /// Observation noise variance added to the kernel diagonal.
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(lengthscales: Vec<f64>, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        if lengthscales.is_empty() || lengthscales.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Surrogate("lengthscales must be positive and finite".into()));
        }
        if !(signal_variance >= 0.0) || !(noise_variance >= NOISE_BOUNDS.0) {
            return Err(Error::Surrogate(format!(
                "signal variance must be non-negative and noise at least {}",
                NOISE_BOUNDS.0
            )));
        }
        Ok(KernelParams { lengthscales, signal_variance, noise_variance })
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }
}

/// Scaled distance between two points under the kernel's lengthscales.
fn scaled_dist(a: &[f64], b: &[f64], ell: &[f64]) -> f64 {
    let mut r2 = 0.0;
    for i in 0..a.len() {
        let d = (a[i] - b[i]) / ell[i];
        r2 += d * d;
    }
    r2.sqrt()
}

/// Matérn-5/2 covariance between two points (noise excluded).
pub fn matern52(a: &UnitPoint, b: &UnitPoint, k: &KernelParams) -> f64 {
    debug_assert_eq!(a.dim(), k.dim());
    debug_assert_eq!(b.dim(), k.dim());
    let r = scaled_dist(a.coords(), b.coords(), &k.lengthscales);
    k.signal_variance * (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * (-SQRT5 * r).exp()
}

fn matern52_raw(a: &[f64], b: &[f64], k: &KernelParams) -> f64 {
    let r = scaled_dist(a, b, &k.lengthscales);
    k.signal_variance * (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * (-SQRT5 * r).exp()
}

/// Dense kernel matrix over one point set (noise excluded). Columns are
/// filled independently; the `parallel` feature fans them out over rayon.
pub fn kernel_matrix(points: &[UnitPoint], k: &KernelParams) -> DMatrix<f64> {
    cross_kernel_matrix(points, points, k)
}

/// Kernel matrix between two point sets: entry `(i, j) = k(rows[i], cols[j])`.
pub fn cross_kernel_matrix(
    rows: &[UnitPoint],
    cols: &[UnitPoint],
    k: &KernelParams,
) -> DMatrix<f64> {
    let (nr, nc) = (rows.len(), cols.len());
    let mut m = DMatrix::zeros(nr, nc);
    let fill = |j: usize, col: &mut [f64]| {
        let cj = cols[j].coords();
        for (i, slot) in col.iter_mut().enumerate() {
            *slot = matern52_raw(rows[i].coords(), cj, k);
        }
    };
    // Column-major storage, so per-column chunks are contiguous and disjoint.
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        m.as_mut_slice().par_chunks_mut(nr).enumerate().for_each(|(j, col)| fill(j, col));
    }
    #[cfg(not(feature = "parallel"))]
    {
        m.as_mut_slice().chunks_mut(nr).enumerate().for_each(|(j, col)| fill(j, col));
    }
    m
}

/// Sequential twin of [`kernel_matrix`], kept callable for benchmarks
/// comparing the two paths.
pub fn kernel_matrix_seq(points: &[UnitPoint], k: &KernelParams) -> DMatrix<f64> {
    let n = points.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            m[(i, j)] = matern52_raw(points[i].coords(), points[j].coords(), k);
        }
    }
    m
}

/// Cholesky with the crate's jitter ladder. Returns the factorization and
/// the jitter that was needed.
fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut prev = 0.0;
    let mut work = m.clone();
    for &jitter in &JITTER_LADDER {
        if jitter > prev {
            for i in 0..work.nrows() {
                work[(i, i)] += jitter - prev;
            }
            prev = jitter;
        }
        if let Some(chol) = Cholesky::new(work.clone()) {
            return Ok((chol, jitter));
        }
    }
    Err(Error::Surrogate(format!(
        "covariance factorization failed even with jitter {}",
        JITTER_LADDER.last().unwrap()
    )))
}

/// Log marginal likelihood of `y` under the kernel. `y` is used as given;
/// the fitted model standardizes targets before calling this.
pub fn log_marginal_likelihood(x: &[UnitPoint], y: &[f64], k: &KernelParams) -> Result<f64> {
    let (ll, _) = likelihood_inner(x, y, k, false)?;
    Ok(ll)
}

/// Log marginal likelihood and its gradient with respect to the *logs* of
/// each kernel parameter, ordered `[ln ell_1 .. ln ell_d, ln s2, ln noise]`.
pub fn log_marginal_likelihood_grad(
    x: &[UnitPoint],
    y: &[f64],
    k: &KernelParams,
) -> Result<(f64, Vec<f64>)> {
    let (ll, grad) = likelihood_inner(x, y, k, true)?;
    Ok((ll, grad.expect("gradient requested")))
}

fn likelihood_inner(
    x: &[UnitPoint],
    y: &[f64],
    k: &KernelParams,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::Surrogate("likelihood needs at least 2 points and matching targets".into()));
    }
    let d = k.dim();
    let s2 = k.signal_variance;
    let inv_ell: Vec<f64> = k.lengthscales.iter().map(|l| 1.0 / l).collect();

    // One geometry pass feeds both the likelihood and the gradient: `knl` is
    // the noiseless kernel value, `cfac` the shared factor of every
    // lengthscale derivative, (5/3) s2 (1 + sqrt5 r) e^{-sqrt5 r}. The pair
    // arithmetic is symmetric, so mirroring the triangle is exact.
    let mut knl = DMatrix::zeros(n, n);
    let mut cfac = DMatrix::zeros(n, n);
    let entry = |p: usize, q: usize| -> (f64, f64) {
        let (xp, xq) = (x[p].coords(), x[q].coords());
        let mut s = 0.0;
        for t in 0..d {
            let diff = (xp[t] - xq[t]) * inv_ell[t];
            s += diff * diff;
        }
        let r = s.sqrt();
        let e = (-SQRT5 * r).exp();
        let base = 1.0 + SQRT5 * r;
        (s2 * (base + 5.0 * r * r / 3.0) * e, 5.0 / 3.0 * s2 * base * e)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        knl.as_mut_slice()
            .par_chunks_mut(n)
            .zip(cfac.as_mut_slice().par_chunks_mut(n))
            .enumerate()
            .for_each(|(q, (kcol, ccol))| {
                for p in 0..n {
                    let (kv, cv) = entry(p, q);
                    kcol[p] = kv;
                    ccol[p] = cv;
                }
            });
    }
    #[cfg(not(feature = "parallel"))]
    for q in 0..n {
        for p in q..n {
            let (kv, cv) = entry(p, q);
            knl[(p, q)] = kv;
            knl[(q, p)] = kv;
            cfac[(p, q)] = cv;
            cfac[(q, p)] = cv;
        }
    }

    let mut km = knl.clone();
    for i in 0..n {
        km[(i, i)] += k.noise_variance;
    }
    let chol = Cholesky::new(km)
        .ok_or_else(|| Error::Surrogate("kernel matrix not positive definite".into()))?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let logdet: f64 = (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
    let ll = -0.5 * yv.dot(&alpha) - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    if !with_grad {
        return Ok((ll, None));
    }

    // d ll / d theta = 0.5 tr((alpha alpha^T - K^-1) dK/dtheta), evaluated
    // pairwise without materializing either matrix. Row partials are reduced
    // in index order so results do not depend on thread scheduling.
    let kinv = chol.inverse();
    let inv_ell2: Vec<f64> = inv_ell.iter().map(|v| v * v).collect();
    let row_partials = |p: usize| -> Vec<f64> {
        let mut acc = vec![0.0; d + 2];
        let xp = x[p].coords();
        for q in 0..n {
            let xq = x[q].coords();
            let b = alpha[p] * alpha[q] - kinv[(p, q)];
            // The noiseless kernel's log-signal derivative is itself.
            acc[d] += b * knl[(p, q)];
            let c = b * cfac[(p, q)];
            if c != 0.0 {
                for i in 0..d {
                    let diff = xp[i] - xq[i];
                    acc[i] += c * (diff * diff) * inv_ell2[i];
                }
            }
            if p == q {
                acc[d + 1] += b * k.noise_variance;
            }
        }
        acc
    };

    #[cfg(feature = "parallel")]
    let partials: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(row_partials).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<Vec<f64>> = (0..n).map(row_partials).collect();

    let mut grad = vec![0.0; d + 2];
    for row in &partials {
        for (g, v) in grad.iter_mut().zip(row) {
            *g += v;
        }
    }
    grad.iter_mut().for_each(|g| *g *= 0.5);
    Ok((ll, Some(grad)))
}

/// A fitted GP regression model.
#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<UnitPoint>,
    y_raw: Vec<f64>,
    y_mean: f64,
    y_std: f64,
    kernel: KernelParams,
    chol: Cholesky<f64, Dyn>,
    /// `K^-1 y_std` on the standardized scale.
    alpha: DVector<f64>,
    log_likelihood: f64,
}

impl GpModel {
    /// Fits kernel hyperparameters by multi-start gradient ascent on the log
    /// marginal likelihood: one heuristic start plus four log-uniform draws,
    /// with a polish pass on the winning start. Deterministic for a given
    /// seed.
    pub fn fit(x: &[UnitPoint], y: &[f64], seed: u64) -> Result<GpModel> {
        let (x, y) = dedupe(x, y)?;
        let d = x[0].dim();
        let (y_mean, y_std) = standardize_stats(&y);
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();

        let lo = [LENGTHSCALE_BOUNDS.0.ln(), SIGNAL_BOUNDS.0.ln(), NOISE_BOUNDS.0.ln()];
        let hi = [LENGTHSCALE_BOUNDS.1.ln(), SIGNAL_BOUNDS.1.ln(), NOISE_BOUNDS.1.ln()];
        let clamp = |theta: &mut [f64]| {
            for i in 0..d {
                theta[i] = theta[i].clamp(lo[0], hi[0]);
            }
            theta[d] = theta[d].clamp(lo[1], hi[1]);
            theta[d + 1] = theta[d + 1].clamp(lo[2], hi[2]);
        };

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut starts: Vec<Vec<f64>> = Vec::new();
        // Heuristic start: moderate lengthscales, unit signal, small noise.
        let mut default = vec![0.3f64.ln(); d];
        default.push(0.0);
        default.push(1e-4f64.ln());
        starts.push(default);
        for _ in 0..4 {
            let mut t: Vec<f64> = (0..d).map(|_| rng.gen_range(lo[0]..hi[0])).collect();
            t.push(rng.gen_range(lo[1]..hi[1]));
            t.push(rng.gen_range(lo[2]..hi[2]));
            starts.push(t);
        }

        let eval = |theta: &[f64]| -> Option<(f64, Vec<f64>)> {
            let k = KernelParams {
                lengthscales: theta[..d].iter().map(|t| t.exp()).collect(),
                signal_variance: theta[d].exp(),
                noise_variance: theta[d + 1].exp(),
            };
            log_marginal_likelihood_grad(&x, &ys, &k).ok()
        };

        let ascend = |theta0: &[f64], iters: usize| -> Option<(f64, Vec<f64>)> {
            let mut theta = theta0.to_vec();
            clamp(&mut theta);
            // Adam in log space with projection onto the bounds box.
            let (mut m, mut v) = (vec![0.0; d + 2], vec![0.0; d + 2]);
            let (b1, b2, lr, eps) = (0.9, 0.999, 0.1, 1e-8);
            let mut current = eval(&theta)?;
            for t in 1..=iters {
                let grad = &current.1;
                if grad.iter().all(|g| g.abs() < 1e-3) {
                    break;
                }
                let mut step_inf = 0.0f64;
                for i in 0..theta.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                    let mh = m[i] / (1.0 - b1f64(b1, t));
                    let vh = v[i] / (1.0 - b1f64(b2, t));
                    // Ascent: step along the gradient.
                    let old = theta[i];
                    theta[i] += lr * mh / (vh.sqrt() + eps);
                    step_inf = step_inf.max((theta[i] - old).abs());
                }
                clamp(&mut theta);
                match eval(&theta) {
                    Some(r) => current = r,
                    None => break,
                }
                if step_inf < 1e-7 {
                    break;
                }
            }
            Some((current.0, theta))
        };

        // The heuristic start gets the full budget; the random restarts are
        // short probes for a better basin, and whichever start wins is
        // polished before assembly. Budgets taper on large histories, where
        // each evaluation costs a cubic factorization and the likelihood
        // surface is already well conditioned.
        let (full, probe, polish) = if x.len() <= 80 { (40, 18, 18) } else { (24, 10, 12) };
        let mut best: Option<(f64, Vec<f64>)> = None;
        for (si, theta) in starts.iter().enumerate() {
            let iters = if si == 0 { full } else { probe };
            if let Some((ll, th)) = ascend(theta, iters) {
                if best.as_ref().map_or(true, |(b, _)| ll > *b) {
                    best = Some((ll, th));
                }
            }
        }
        if let Some((ll, th)) = &best {
            if let Some(polished) = ascend(th, polish) {
                if polished.0 > *ll {
                    best = Some(polished);
                }
            }
        }

        let (_, theta) = best.ok_or_else(|| {
            Error::Surrogate("no hyperparameter start produced a usable likelihood".into())
        })?;
        let kernel = KernelParams {
            lengthscales: theta[..d].iter().map(|t| t.exp()).collect(),
            signal_variance: theta[d].exp(),
            noise_variance: theta[d + 1].exp(),
        };
        Self::assemble(x, y, y_mean, y_std, kernel)
    }

    /// Builds a model with fixed kernel hyperparameters (no optimization).
    pub fn with_kernel(x: &[UnitPoint], y: &[f64], kernel: KernelParams) -> Result<GpModel> {
        let (x, y) = dedupe(x, y)?;
        if kernel.dim() != x[0].dim() {
            return Err(Error::Surrogate("kernel dimension does not match inputs".into()));
        }
        let (y_mean, y_std) = standardize_stats(&y);
        Self::assemble(x, y, y_mean, y_std, kernel)
    }

    fn assemble(
        x: Vec<UnitPoint>,
        y_raw: Vec<f64>,
        y_mean: f64,
        y_std: f64,
        kernel: KernelParams,
    ) -> Result<GpModel> {
        let n = x.len();
        let mut km = kernel_matrix(&x, &kernel);
        for i in 0..n {
            km[(i, i)] += kernel.noise_variance;
        }
        let (chol, _) = cholesky_with_jitter(&km)?;
        let ys = DVector::from_iterator(n, y_raw.iter().map(|v| (v - y_mean) / y_std));
        let alpha = chol.solve(&ys);
        let logdet: f64 = (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
        let log_likelihood =
            -0.5 * ys.dot(&alpha) - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        Ok(GpModel { x, y_raw, y_mean, y_std, kernel, chol, alpha, log_likelihood })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn targets(&self) -> &[f64] {
        &self.y_raw
    }

    /// Posterior mean and variance of the latent function at one point, on
    /// the original target scale. Variance excludes observation noise.
    pub fn posterior(&self, q: &UnitPoint) -> (f64, f64) {
        let n = self.len();
        let kstar = DVector::from_iterator(
            n,
            self.x.iter().map(|xi| matern52_raw(xi.coords(), q.coords(), &self.kernel)),
        );
        let mean_std = kstar.dot(&self.alpha);
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kstar)
            .expect("triangular factor is invertible");
        let var_std = (self.kernel.signal_variance - z.dot(&z)).max(0.0);
        (self.y_mean + self.y_std * mean_std, self.y_std * self.y_std * var_std)
    }

    /// One joint posterior sample over a candidate set. Bit-identical
    /// candidates share a single latent value, so repeats in the list come
    /// back exactly equal.
    pub fn thompson_draw(&self, candidates: &[UnitPoint], rng: &mut impl Rng) -> Result<Vec<f64>> {
        if candidates.is_empty() {
            return Err(Error::Surrogate("thompson draw needs at least one candidate".into()));
        }
        // Collapse exact duplicates before factorizing: a repeated point is
        // perfectly correlated with itself and would only poison the factor.
        let mut unique: Vec<UnitPoint> = Vec::new();
        let mut keys: Vec<Vec<u64>> = Vec::new();
        let mut index_of = Vec::with_capacity(candidates.len());
        for c in candidates {
            let key: Vec<u64> = c.coords().iter().map(|v| v.to_bits()).collect();
            match keys.iter().position(|k| *k == key) {
                Some(i) => index_of.push(i),
                None => {
                    keys.push(key);
                    unique.push(c.clone());
                    index_of.push(unique.len() - 1);
                }
            }
        }

        let m = unique.len();
        let kstar = cross_kernel_matrix(&self.x, &unique, &self.kernel); // n x m
        let mean_std = kstar.transpose() * &self.alpha;
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kstar)
            .expect("triangular factor is invertible");
        let mut cov = kernel_matrix(&unique, &self.kernel);
        cov -= v.transpose() * &v;
        // Symmetrize away accumulation skew before factorizing.
        for i in 0..m {
            for j in (i + 1)..m {
                let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = s;
                cov[(j, i)] = s;
            }
            cov[(i, i)] = cov[(i, i)].max(0.0);
        }
        let (factor, _) = cholesky_with_jitter(&cov)?;
        let z = DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let sample_std = mean_std + factor.l_dirty().lower_triangle() * z;
        Ok(index_of
            .iter()
            .map(|&i| self.y_mean + self.y_std * sample_std[i])
            .collect())
    }
}

fn b1f64(b: f64, t: usize) -> f64 {
    b.powi(t as i32)
}

/// Drops earlier duplicates (pairwise max-coordinate distance below 1e-12),
/// keeping the latest observation for each location.
fn dedupe(x: &[UnitPoint], y: &[f64]) -> Result<(Vec<UnitPoint>, Vec<f64>)> {
    if x.len() != y.len() {
        return Err(Error::Surrogate("inputs and targets differ in length".into()));
    }
    if x.len() < 2 {
        return Err(Error::Surrogate("fit requires at least 2 points".into()));
    }
    let d = x[0].dim();
    if x.iter().any(|p| p.dim() != d) {
        return Err(Error::Surrogate("inconsistent input dimensions".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Surrogate("non-finite target value".into()));
    }
    let mut keep = vec![true; x.len()];
    for i in 0..x.len() {
        for j in (i + 1)..x.len() {
            if !keep[i] {
                break;
            }
            let close = x[i]
                .coords()
                .iter()
                .zip(x[j].coords())
                .all(|(a, b)| (a - b).abs() < 1e-12);
            if close {
                keep[i] = false;
            }
        }
    }
    let xs: Vec<UnitPoint> =
        x.iter().zip(&keep).filter(|(_, &k)| k).map(|(p, _)| p.clone()).collect();
    let ys: Vec<f64> = y.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v).collect();
    if xs.len() < 2 {
        return Err(Error::Surrogate("fewer than 2 distinct points after dedupe".into()));
    }
    Ok((xs, ys))
}

fn standardize_stats(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std < 1e-12 { 1.0 } else { std })
}
