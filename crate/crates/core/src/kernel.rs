//! Discrete Gaussian support (the alpha-kernel) used by map fusion and
//! collision checking.

use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use lru::LruCache;
use nalgebra::DMatrix;
use statrs::function::erf::erf;
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const CACHE_CAPACITY: usize = 1024;
const SIGMA_QUANTUM: f64 = 0.01;

/// Probability mass of a `dim`-dimensional standard Gaussian inside radius `t`.
pub fn chi_cdf(t: f64, dim: usize) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    gamma_lr(dim as f64 / 2.0, t * t / 2.0)
}

/// Radius (in standard deviations) of the central ball holding mass `alpha`.
pub fn critical_value(alpha: f64, dim: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    if !(1..=3).contains(&dim) {
        return Err(Error::invalid(format!("dimension must be 1, 2 or 3, got {dim}")));
    }
    if alpha == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while chi_cdf(hi, dim) < alpha {
        hi *= 2.0;
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if chi_cdf(mid, dim) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Half-width in cells, `ceil(t * sigma / h)`.
pub fn half_width(sigma: f64, h: f64, t: f64) -> usize {
    if sigma <= 0.0 {
        return 0;
    }
    // guard against float noise pushing an exact ratio up by one cell
    let r = t * sigma / h;
    let rr = r.round();
    if (r - rr).abs() < 1e-9 {
        rr as usize
    } else {
        r.ceil() as usize
    }
}

/// Number of cells along one axis, `2 ceil(t sigma / h) + 1`.
pub fn kernel_size(sigma: f64, h: f64, alpha: f64, dim: usize) -> Result<usize> {
    if h <= 0.0 || sigma < 0.0 {
        return Err(Error::invalid("kernel_size needs h > 0 and sigma >= 0"));
    }
    let t = critical_value(alpha, dim)?;
    Ok(2 * half_width(sigma, h, t) + 1)
}

/// One axis of a kernel: `h * N((j h) - offset)` for `j = -k..=k`.
///
/// `offset` is the position of the mean relative to the centre of the
/// middle cell. Midpoint sampling can slightly overshoot unit mass for
/// narrow Gaussians, so factors summing above one are rescaled.
pub fn axis_factor(sigma: f64, h: f64, k: usize, offset: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        // all mass in the cell holding the mean
        return vec![1.0];
    }
    let k = k as i64;
    if sigma < h {
        // point samples of a narrow density miss most of its mass; use the
        // exact per-cell integral instead
        let phi = |x: f64| 0.5 * (1.0 + erf(x / (sigma * std::f64::consts::SQRT_2)));
        return (-k..=k)
            .map(|j| {
                let c = j as f64 * h - offset;
                phi(c + 0.5 * h) - phi(c - 0.5 * h)
            })
            .collect();
    }
    let mut f: Vec<f64> = (-k..=k)
        .map(|j| {
            let z = (j as f64 * h - offset) / sigma;
            h * INV_SQRT_2PI / sigma * (-0.5 * z * z).exp()
        })
        .collect();
    let s: f64 = f.iter().sum();
    if s > 1.0 {
        f.iter_mut().for_each(|v| *v /= s);
    }
    f
}

/// A separable discrete Gaussian patch.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaKernel {
    factors: Vec<Vec<f64>>,
    h: f64,
    alpha: f64,
    sigmas: Vec<f64>,
}

impl AlphaKernel {
    /// Build from per-axis standard deviations with the mean at `offsets`
    /// from the centre cell centre.
    pub fn with_offsets(sigmas: &[f64], offsets: &[f64], h: f64, alpha: f64) -> Result<Self> {
        if h <= 0.0 || !h.is_finite() {
            return Err(Error::invalid(format!("resolution must be positive, got {h}")));
        }
        if sigmas.len() != offsets.len() {
            return Err(Error::DimensionMismatch { expected: sigmas.len(), found: offsets.len() });
        }
        if sigmas.iter().any(|s| *s < 0.0 || !s.is_finite()) {
            return Err(Error::invalid("standard deviations must be finite and non-negative"));
        }
        let t = critical_value(alpha, sigmas.len())?;
        let factors = sigmas
            .iter()
            .zip(offsets)
            .map(|(&s, &o)| axis_factor(s, h, half_width(s, h, t), o))
            .collect();
        Ok(AlphaKernel { factors, h, alpha, sigmas: sigmas.to_vec() })
    }

    pub fn from_sigmas(sigmas: &[f64], h: f64, alpha: f64) -> Result<Self> {
        Self::with_offsets(sigmas, &vec![0.0; sigmas.len()], h, alpha)
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn resolution(&self) -> f64 {
        self.h
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Cells per axis (always odd).
    pub fn sizes(&self) -> Vec<usize> {
        self.factors.iter().map(Vec::len).collect()
    }

    pub fn half_widths(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.len() / 2).collect()
    }

    pub fn center_index(&self) -> Vec<usize> {
        self.half_widths()
    }

    pub fn factor(&self, axis: usize) -> &[f64] {
        &self.factors[axis]
    }

    pub fn factors(&self) -> &[Vec<f64>] {
        &self.factors
    }

    /// Value at a multi-index (row-major, first axis slowest).
    pub fn get(&self, idx: &[usize]) -> f64 {
        self.factors.iter().zip(idx).map(|(f, &i)| f[i]).product()
    }

    /// Total mass of the kernel.
    pub fn mass(&self) -> f64 {
        self.factors.iter().map(|f| f.iter().sum::<f64>()).product()
    }

    /// Largest single cell value.
    pub fn max_cell(&self) -> f64 {
        self.factors.iter().map(|f| f.iter().cloned().fold(0.0, f64::max)).product()
    }

    /// Dense cell array in row-major order (first axis slowest).
    pub fn cells(&self) -> Vec<f64> {
        let mut out = vec![1.0];
        for f in &self.factors {
            let mut next = Vec::with_capacity(out.len() * f.len());
            for &a in &out {
                next.extend(f.iter().map(|&b| a * b));
            }
            out = next;
        }
        out
    }
}

/// Reduce a positional covariance to per-axis variances.
///
/// Cross terms are dropped when small; when any exceeds 10% of the largest
/// eigenvalue every axis is inflated to that eigenvalue.
pub fn diagonal_variances(cov: &DMatrix<f64>) -> Vec<f64> {
    let n = cov.nrows();
    let diag: Vec<f64> = (0..n).map(|i| cov[(i, i)].max(0.0)).collect();
    let mut max_off = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                max_off = max_off.max(cov[(i, j)].abs());
            }
        }
    }
    if max_off == 0.0 {
        return diag;
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let lmax = sym.symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max);
    if max_off > 0.1 * lmax {
        vec![lmax; n]
    } else {
        diag
    }
}

/// Build the kernel of a diagonal positional covariance.
pub fn build_kernel(cov: &DMatrix<f64>, h: f64, alpha: f64) -> Result<AlphaKernel> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: cov.ncols() });
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && cov[(i, j)] != 0.0 {
                return Err(Error::invalid("kernel covariance must be diagonal"));
            }
        }
        if cov[(i, i)] < 0.0 {
            return Err(Error::invalid("negative variance"));
        }
    }
    let sigmas: Vec<f64> = (0..n).map(|i| cov[(i, i)].sqrt()).collect();
    AlphaKernel::from_sigmas(&sigmas, h, alpha)
}

type CacheKey = (Vec<i64>, u64, u64);

fn cache() -> &'static Mutex<LruCache<CacheKey, Arc<AlphaKernel>>> {
    static CACHE: OnceLock<Mutex<LruCache<CacheKey, Arc<AlphaKernel>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(LruCache::new(NonZeroUsize::new(CACHE_CAPACITY).unwrap())))
}

/// Memoised centred kernel. Standard deviations are quantised to 0.01 m,
/// and the returned kernel is built from the quantised values.
pub fn cached_kernel(sigmas: &[f64], h: f64, alpha: f64) -> Result<Arc<AlphaKernel>> {
    let q: Vec<i64> = sigmas.iter().map(|s| (s / SIGMA_QUANTUM).round() as i64).collect();
    let key = (q.clone(), h.to_bits(), alpha.to_bits());
    if let Some(k) = cache().lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
        return Ok(Arc::clone(k));
    }
    let quantised: Vec<f64> = q.iter().map(|&v| v as f64 * SIGMA_QUANTUM).collect();
    let k = Arc::new(AlphaKernel::from_sigmas(&quantised, h, alpha)?);
    cache().lock().unwrap_or_else(|e| e.into_inner()).put(key, Arc::clone(&k));
    Ok(k)
}
