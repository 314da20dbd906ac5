//! Backward recursion for the single-variable value functions `v_k`, the
//! optimal threshold functions `g_k`, their minimal fixed points `ξ_k` and
//! the limit `ξ`, and the first derivatives `v'_k`.
//!
//! One Bellman step maps the tabulated `v_{k-1}` to `v_k` and `g_k`:
//!
//! ```text
//! g_k(y) = inf { x in [y, 1] : v_{k-1}(y) <= 1 + v_{k-1}(1 - x) }
//! v_k(y) = g_k(y) v_{k-1}(y) + (1 - g_k(y)) + ∫_0^{1 - g_k(y)} v_{k-1}(u) du
//! ```
//!
//! The max inside the integrand is split at `g_k(y)`, so the quadrature
//! never straddles the kink.

use rayon::prelude::*;
use thiserror::Error;

use crate::numerics::{GridSpec, Monotone, NumericsError, PrefixIntegral, SampledFunction};

#[derive(Debug, Error)]
pub enum BellmanError {
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("tol_xi must be positive, got {0}")]
    BadTolerance(f64),
    #[error("minimal fixed point for k = {k} not bracketed: {source}")]
    FixedPoint { k: usize, source: NumericsError },
    #[error("xi did not settle within {k_max} iterations (last step {last_step:e}, tol {tol:e})")]
    NoConvergence {
        k_max: usize,
        last_step: f64,
        tol: f64,
    },
    #[error("tables are inconsistent: {0}")]
    Mismatch(String),
    #[error("index k = {k} outside 1..={horizon}")]
    Index { k: usize, horizon: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, BellmanError>;

/// Upper limit on the number of recursion steps `converge_xi` will take.
pub const DEFAULT_K_MAX: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DpOptions {
    /// Walk the root cell forward from the previous grid point. When off,
    /// every grid point bisects independently and rows run in parallel.
    pub warm_start: bool,
}

impl Default for DpOptions {
    fn default() -> Self {
        Self { warm_start: true }
    }
}

/// `v_0, v_1, ..., v_n` on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    grid: GridSpec,
    v: Vec<SampledFunction>,
}

impl ValueTable {
    /// Rebuilds a table from raw rows (used by the cache reader).
    pub fn from_rows(grid: GridSpec, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(BellmanError::EmptyHorizon);
        }
        let v = rows
            .into_iter()
            .map(|r| SampledFunction::new(grid, r, Monotone::Decreasing))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { grid, v })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn horizon(&self) -> usize {
        self.v.len() - 1
    }

    /// `v_k` for `k` in `0..=horizon`.
    pub fn v(&self, k: usize) -> &SampledFunction {
        &self.v[k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &SampledFunction> {
        self.v.iter()
    }

    /// `v_n(0)`, the expected number of selections under `π*_n`.
    pub fn mean_selections(&self, n: usize) -> f64 {
        self.v[n].at(0)
    }
}

/// `g_1..g_n`, `ξ_1..ξ_n` and the limit `ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdFamily {
    grid: GridSpec,
    g: Vec<SampledFunction>,
    xi: Vec<f64>,
    xi_limit: f64,
}

impl ThresholdFamily {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn horizon(&self) -> usize {
        self.g.len()
    }

    /// `g_k`, 1-based.
    pub fn g(&self, k: usize) -> &SampledFunction {
        &self.g[k - 1]
    }

    /// `ξ_k`, 1-based.
    pub fn xi(&self, k: usize) -> f64 {
        self.xi[k - 1]
    }

    pub fn xis(&self) -> &[f64] {
        &self.xi
    }

    pub fn xi_limit(&self) -> f64 {
        self.xi_limit
    }

    /// The limiting threshold `g_∞(y) = max(ξ, y)`.
    pub fn g_limit(&self, y: f64) -> f64 {
        self.xi_limit.max(y)
    }

    /// Fast threshold lookup for simulation: `g_k(y)` without domain checks.
    #[inline]
    pub fn threshold(&self, k: usize, y: f64) -> f64 {
        // g_k is the identity from ξ_k onward.
        if y >= self.xi[k - 1] {
            y
        } else {
            self.g[k - 1].eval_unchecked(y)
        }
    }
}

/// `v'_1..v'_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeTable {
    grid: GridSpec,
    dv: Vec<SampledFunction>,
}

impl DerivativeTable {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn horizon(&self) -> usize {
        self.dv.len()
    }

    /// `v'_k`, 1-based.
    pub fn dv(&self, k: usize) -> &SampledFunction {
        &self.dv[k - 1]
    }
}

/// One Bellman step: from `v_{k-1}` (node values) to `(v_k, g_k)`.
pub fn bellman_step(grid: &GridSpec, prev: &SampledFunction, opts: DpOptions) -> (Vec<f64>, Vec<f64>) {
    let n = grid.intervals();
    let h = grid.step();
    let vp = prev.values();
    let prefix = PrefixIntegral::new(prev);

    // For y = x_j the threshold solves v(u) = v(y) - 1 in u = 1 - x; the
    // root cell index m is the last node with v(x_m) >= v(y) - 1.
    let solve_row = |j: usize, m_hint: usize| -> (f64, f64, usize) {
        let vy = vp[j];
        let c = vy - 1.0;
        let y = grid.x(j);
        if vp[n - j] >= c {
            let u = grid.x(n - j);
            let vk = y * vy + u + prefix.head(prev, u);
            return (vk, y, m_hint);
        }
        // Root lies in [0, 1 - y); v(0) >= c always.
        let limit = n - j - 1;
        let m = if opts.warm_start {
            let mut m = m_hint.min(limit);
            while m < limit && vp[m + 1] >= c {
                m += 1;
            }
            m
        } else {
            let (mut a, mut b) = (0usize, limit);
            while a < b {
                let mid = a + (b - a).div_ceil(2);
                if vp[mid] >= c {
                    a = mid;
                } else {
                    b = mid - 1;
                }
            }
            a
        };
        let drop = vp[m] - vp[m + 1];
        let t = if drop > 0.0 { ((vp[m] - c) / drop).clamp(0.0, 1.0) } else { 0.0 };
        let u = grid.x(m) + t * h;
        let g = 1.0 - u;
        let vk = g * vy + u + prefix.head(prev, u);
        (vk, g, m)
    };

    let points = grid.points();
    if opts.warm_start {
        let mut v = Vec::with_capacity(points);
        let mut g = Vec::with_capacity(points);
        let mut hint = 0usize;
        for j in 0..points {
            let (vk, gk, m) = solve_row(j, hint);
            hint = m;
            v.push(vk);
            g.push(gk);
        }
        (v, g)
    } else {
        (0..points)
            .into_par_iter()
            .map(|j| {
                let (vk, gk, _) = solve_row(j, 0);
                (vk, gk)
            })
            .unzip()
    }
}

/// Minimal fixed point of `g_k` from the tabulated `v_{k-1}`: the root of
/// `v_{k-1}(y) - v_{k-1}(1 - y) = 1` on [0, 1/2] for `k >= 3`, zero for
/// `k <= 2`.
pub fn minimal_fixed_point(grid: &GridSpec, prev: &SampledFunction, k: usize) -> Result<f64> {
    if k <= 2 {
        return Ok(0.0);
    }
    let n = grid.intervals();
    let vp = prev.values();
    let delta = SampledFunction::new(
        *grid,
        (0..grid.points()).map(|j| vp[j] - vp[n - j]).collect(),
        Monotone::Decreasing,
    )?;
    delta
        .solve_decreasing(1.0, 0.0, 0.5)
        .map_err(|source| BellmanError::FixedPoint { k, source })
}

fn zero_row(grid: &GridSpec) -> SampledFunction {
    SampledFunction::from_fn(*grid, Monotone::Decreasing, |_| 0.0)
}

pub fn compute_values(grid: GridSpec, n: usize) -> Result<ValueTable> {
    compute_values_with(grid, n, DpOptions::default())
}

pub fn compute_values_with(grid: GridSpec, n: usize, opts: DpOptions) -> Result<ValueTable> {
    if n == 0 {
        return Err(BellmanError::EmptyHorizon);
    }
    let mut v = Vec::with_capacity(n + 1);
    v.push(zero_row(&grid));
    for k in 1..=n {
        let (row, _) = bellman_step(&grid, &v[k - 1], opts);
        v.push(SampledFunction::new(grid, row, Monotone::Decreasing)?);
    }
    Ok(ValueTable { grid, v })
}

/// Tabulates `g_1..g_n` and `ξ_1..ξ_n` from a value table; the limit `ξ`
/// comes from [`converge_xi`] at tolerance `tol_xi`.
pub fn compute_thresholds(vt: &ValueTable, tol_xi: f64) -> Result<ThresholdFamily> {
    let (xi_limit, _) = converge_xi(*vt.grid(), tol_xi)?;
    compute_thresholds_with_limit(vt, xi_limit)
}

/// As [`compute_thresholds`] with a known limit `ξ`.
pub fn compute_thresholds_with_limit(vt: &ValueTable, xi_limit: f64) -> Result<ThresholdFamily> {
    let grid = *vt.grid();
    let n = vt.horizon();
    let mut g = Vec::with_capacity(n);
    let mut xi = Vec::with_capacity(n);
    for k in 1..=n {
        let (_, gk) = bellman_step(&grid, vt.v(k - 1), DpOptions::default());
        g.push(SampledFunction::new(grid, gk, Monotone::None)?);
        xi.push(minimal_fixed_point(&grid, vt.v(k - 1), k)?);
    }
    Ok(ThresholdFamily {
        grid,
        g,
        xi,
        xi_limit,
    })
}

/// Runs the recursion until `ξ_{k+1} - ξ_k < tol_xi`, returning the last
/// `ξ_k` and its index. Uses at most [`DEFAULT_K_MAX`] steps.
pub fn converge_xi(grid: GridSpec, tol_xi: f64) -> Result<(f64, usize)> {
    converge_xi_bounded(grid, tol_xi, DEFAULT_K_MAX)
}

pub fn converge_xi_bounded(grid: GridSpec, tol_xi: f64, k_max: usize) -> Result<(f64, usize)> {
    if tol_xi.is_nan() || tol_xi <= 0.0 {
        return Err(BellmanError::BadTolerance(tol_xi));
    }
    // v_1 is needed for ξ_2 (= 0); ξ_3 uses v_2.
    let mut prev = zero_row(&grid);
    let mut xi_prev = 0.0;
    let mut last_step = f64::INFINITY;
    for k in 1..=k_max {
        let xi_k = minimal_fixed_point(&grid, &prev, k)?;
        if k >= 3 {
            last_step = xi_k - xi_prev;
            if last_step < tol_xi {
                return Ok((xi_k, k));
            }
        }
        xi_prev = xi_k;
        let (row, _) = bellman_step(&grid, &prev, DpOptions::default());
        prev = SampledFunction::new(grid, row, Monotone::Decreasing)?;
    }
    Err(BellmanError::NoConvergence {
        k_max,
        last_step,
        tol: tol_xi,
    })
}

/// Derivatives by the two-branch recursion, switching at `ξ_k`:
/// `v'_k = g_k v'_{k-1}` below, `v_{k-1}(y) - 1 - v_{k-1}(1-y) + y v'_{k-1}`
/// above.
pub fn compute_derivatives(vt: &ValueTable, tf: &ThresholdFamily) -> Result<DerivativeTable> {
    if vt.grid() != tf.grid() {
        return Err(BellmanError::Mismatch("grids differ".into()));
    }
    if tf.horizon() > vt.horizon() {
        return Err(BellmanError::Mismatch(format!(
            "threshold horizon {} exceeds value horizon {}",
            tf.horizon(),
            vt.horizon()
        )));
    }
    let grid = *vt.grid();
    let n = grid.intervals();
    let mut dv: Vec<SampledFunction> = Vec::with_capacity(tf.horizon());
    dv.push(SampledFunction::from_fn(grid, Monotone::None, |_| -1.0));
    for k in 2..=tf.horizon() {
        let vp = vt.v(k - 1).values();
        let dp = dv[k - 2].values();
        let gk = tf.g(k).values();
        let xi_k = tf.xi(k);
        let row: Vec<f64> = (0..grid.points())
            .map(|j| {
                let y = grid.x(j);
                if y <= xi_k {
                    gk[j] * dp[j]
                } else {
                    vp[j] - 1.0 - vp[n - j] + y * dp[j]
                }
            })
            .collect();
        dv.push(SampledFunction::new(grid, row, Monotone::None)?);
    }
    Ok(DerivativeTable { grid, dv })
}

/// `sup_y |g_k(y) - max(ξ, y)|` for the interpolated threshold, whose
/// breakpoints are the grid nodes and `ξ_k`.
pub fn uniform_gap(tf: &ThresholdFamily, k: usize) -> Result<f64> {
    if k == 0 || k > tf.horizon() {
        return Err(BellmanError::Index {
            k,
            horizon: tf.horizon(),
        });
    }
    let grid = tf.grid();
    let xi_k = tf.xi(k);
    let at_nodes = tf
        .g(k)
        .values()
        .iter()
        .enumerate()
        .map(|(j, &g)| (g - tf.g_limit(grid.x(j))).abs())
        .fold(0.0, f64::max);
    Ok(at_nodes.max((tf.threshold(k, xi_k) - tf.g_limit(xi_k)).abs()))
}
