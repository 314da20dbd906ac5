//! Uniform grids on [0, 1], piecewise-linear sampled functions, tail
//! quadrature and monotone root location.
//!
//! Every tabulated object in the crate (value functions, thresholds,
//! derivatives) is a [`SampledFunction`] on a shared [`GridSpec`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("grid step {0} is invalid: need 0 < h <= 0.1 with 1/h an integer")]
    InvalidStep(f64),
    #[error("argument {value} lies outside [0, 1] (slack {slack})")]
    Domain { value: f64, slack: f64 },
    #[error("sample count {got} does not match grid of {expected} points")]
    Length { expected: usize, got: usize },
    #[error(
        "root not bracketed on [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}, target = {target}"
    )]
    Bracket {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
        target: f64,
    },
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Uniform discretization `x_j = j * h`, `j = 0..=intervals`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    step: f64,
    intervals: usize,
}

impl GridSpec {
    /// Builds a grid with spacing `step`. `1/step` must be an integer (up to
    /// rounding) and the grid must have at least 11 points.
    pub fn new(step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0 && step <= 0.1) {
            return Err(NumericsError::InvalidStep(step));
        }
        let raw = 1.0 / step;
        let intervals = raw.round();
        if (raw - intervals).abs() > 1e-6 * raw {
            return Err(NumericsError::InvalidStep(step));
        }
        Ok(Self::with_intervals(intervals as usize))
    }

    /// Grid with `intervals` equal cells; spacing is `1 / intervals`.
    pub fn with_intervals(intervals: usize) -> Self {
        assert!(intervals >= 10, "a grid needs at least 11 points");
        Self {
            step: 1.0 / intervals as f64,
            intervals,
        }
    }

    #[inline]
    pub fn step(&self) -> f64 {
        self.step
    }

    #[inline]
    pub fn points(&self) -> usize {
        self.intervals + 1
    }

    #[inline]
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Grid abscissa `x_j`. Computed as `j / N` so that `x(N - j) = 1 - x(j)`
    /// holds to rounding.
    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        j as f64 / self.intervals as f64
    }

    pub fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.points()).map(move |j| self.x(j))
    }

    /// Default root tolerance, one tenth of a cell.
    pub fn tol_root(&self) -> f64 {
        self.step / 10.0
    }

    /// Index of the cell `[x_j, x_{j+1}]` containing `y` and the local
    /// coordinate `t` in `[0, 1]`. `y` is assumed already clamped to [0, 1].
    #[inline]
    pub fn locate(&self, y: f64) -> (usize, f64) {
        let mut s = y * self.intervals as f64;
        let r = s.round();
        // Snap nodes computed as j / N back onto the grid.
        if (s - r).abs() <= 4.0 * f64::EPSILON * r {
            s = r;
        }
        let j = (s.floor() as usize).min(self.intervals - 1);
        (j, s - j as f64)
    }

    fn check_domain(&self, y: f64) -> Result<f64> {
        let slack = self.step / 2.0;
        if y.is_nan() || y < -slack || y > 1.0 + slack {
            return Err(NumericsError::Domain { value: y, slack });
        }
        Ok(y.clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotone {
    Decreasing,
    None,
}

/// A function on [0, 1] known through its values at the grid points and
/// evaluated elsewhere by linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    grid: GridSpec,
    values: Vec<f64>,
    monotone: Monotone,
}

impl SampledFunction {
    pub fn new(grid: GridSpec, values: Vec<f64>, monotone: Monotone) -> Result<Self> {
        if values.len() != grid.points() {
            return Err(NumericsError::Length {
                expected: grid.points(),
                got: values.len(),
            });
        }
        Ok(Self {
            grid,
            values,
            monotone,
        })
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: GridSpec, monotone: Monotone, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.xs().map(f).collect();
        Self {
            grid,
            values,
            monotone,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn monotone(&self) -> Monotone {
        self.monotone
    }

    /// Value at grid index `j`.
    #[inline]
    pub fn at(&self, j: usize) -> f64 {
        self.values[j]
    }

    /// Linear interpolation at `y`; exact at the grid points.
    pub fn eval(&self, y: f64) -> Result<f64> {
        let y = self.grid.check_domain(y)?;
        Ok(self.eval_unchecked(y))
    }

    /// Interpolation without domain checking; `y` must lie in [0, 1].
    #[inline]
    pub fn eval_unchecked(&self, y: f64) -> f64 {
        let (j, t) = self.grid.locate(y);
        if t == 0.0 {
            return self.values[j];
        }
        let a = self.values[j];
        let b = self.values[j + 1];
        a + t * (b - a)
    }

    /// Trapezoid approximation of `∫_a^1 f(x) dx`, with the partial first
    /// cell integrated from the interpolated endpoint value.
    pub fn integrate_tail(&self, a: f64) -> Result<f64> {
        let a = self.grid.check_domain(a)?;
        let h = self.grid.step();
        let (j, t) = self.grid.locate(a);
        let fa = self.eval_unchecked(a);
        let partial = 0.5 * (1.0 - t) * h * (fa + self.values[j + 1]);
        let rest: f64 = self.values[j + 1..]
            .windows(2)
            .map(|w| 0.5 * h * (w[0] + w[1]))
            .sum();
        Ok(partial + rest)
    }

    /// Smallest `y` in `[lo, hi]` with interpolated `f(y) <= target`.
    ///
    /// The bracketing cell is found by bisection over grid indices and the
    /// root inside it is solved on the linear piece, so the result is exact
    /// for the interpolant (well inside `tol_root`).
    pub fn solve_decreasing(&self, target: f64, lo: f64, hi: f64) -> Result<f64> {
        let lo = self.grid.check_domain(lo)?;
        let hi = self.grid.check_domain(hi)?;
        let f_lo = self.eval_unchecked(lo);
        if f_lo <= target {
            return Ok(lo);
        }
        let f_hi = self.eval_unchecked(hi);
        if f_hi > target {
            return Err(NumericsError::Bracket {
                lo,
                hi,
                f_lo,
                f_hi,
                target,
            });
        }
        Ok(solve_on_grid(&self.grid, |j| self.values[j], target, lo, hi))
    }
}

/// Root location for a non-increasing piecewise-linear function given by its
/// node values `f(j)`. Requires `f(lo) > target >= f(hi)`.
///
/// Breakpoints are `lo`, every node strictly inside `(lo, hi)`, then `hi`;
/// the first breakpoint with value `<= target` is found by bisection and the
/// root is solved on the linear piece ending there.
pub(crate) fn solve_on_grid(
    grid: &GridSpec,
    f: impl Fn(usize) -> f64,
    target: f64,
    lo: f64,
    hi: f64,
) -> f64 {
    let n = grid.intervals() as f64;
    let first = (lo * n).floor() as usize + 1;
    let mut last = (hi * n).ceil() as usize;
    while last >= first && grid.x(last) >= hi {
        last -= 1;
    }
    let inner = if last >= first { last + 1 - first } else { 0 };
    let point = |i: usize| -> (f64, f64) {
        if i == 0 {
            (lo, interp_nodes(grid, &f, lo))
        } else if i <= inner {
            let j = first + i - 1;
            (grid.x(j), f(j))
        } else {
            (hi, interp_nodes(grid, &f, hi))
        }
    };
    let (mut a, mut b) = (1usize, inner + 1);
    while a < b {
        let mid = a + (b - a) / 2;
        if point(mid).1 <= target {
            b = mid;
        } else {
            a = mid + 1;
        }
    }
    let (x0, f0) = point(a - 1);
    let (x1, f1) = point(a);
    linear_root(x0, f0, x1, f1, target)
}

#[inline]
fn interp_nodes(grid: &GridSpec, f: &impl Fn(usize) -> f64, y: f64) -> f64 {
    let (j, t) = grid.locate(y);
    if t == 0.0 {
        f(j)
    } else {
        let a = f(j);
        a + t * (f(j + 1) - a)
    }
}

#[inline]
fn linear_root(x0: f64, f0: f64, x1: f64, f1: f64, target: f64) -> f64 {
    if f0 <= target {
        return x0;
    }
    if f1 >= f0 {
        return x1;
    }
    let t = ((f0 - target) / (f0 - f1)).clamp(0.0, 1.0);
    x0 + t * (x1 - x0)
}

/// Running prefix integrals `C_j = ∫_0^{x_j} f` of a piecewise-linear
/// function; `∫_0^a f` for off-grid `a` adds the exact partial cell.
#[derive(Debug, Clone)]
pub struct PrefixIntegral {
    grid: GridSpec,
    cumulative: Vec<f64>,
}

impl PrefixIntegral {
    pub fn new(f: &SampledFunction) -> Self {
        let h = f.grid.step();
        let mut cumulative = Vec::with_capacity(f.values.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in f.values.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            cumulative.push(acc);
        }
        Self {
            grid: f.grid,
            cumulative,
        }
    }

    /// `∫_0^a f(x) dx` for `a` in [0, 1].
    #[inline]
    pub fn head(&self, f: &SampledFunction, a: f64) -> f64 {
        let (j, t) = self.grid.locate(a);
        if t == 0.0 {
            return self.cumulative[j];
        }
        let fj = f.values[j];
        let fa = fj + t * (f.values[j + 1] - fj);
        self.cumulative[j] + 0.5 * t * self.grid.step() * (fj + fa)
    }

    pub fn total(&self) -> f64 {
        self.cumulative[self.cumulative.len() - 1]
    }
}
