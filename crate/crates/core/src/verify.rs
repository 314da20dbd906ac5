//! Numerical certification of the structural properties of `v_k`, `g_k`,
//! `ξ_k` and `v'_k` on computed tables.
//!
//! Every claim is reduced to a signed slack (negative means the claim is
//! violated) minimized over the grid; a claim passes when its worst slack is
//! at least `-tolerance_used`.

use rayon::prelude::*;
use serde::Serialize;

use crate::bellman::{uniform_gap, DerivativeTable, ThresholdFamily, ValueTable};
use crate::numerics::{GridSpec, SampledFunction};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub lemma_id: String,
    pub passed: bool,
    pub worst_violation: f64,
    pub worst_location: String,
    pub tolerance_used: f64,
    /// Number of individual inequalities evaluated.
    pub checked: usize,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub note: String,
}

/// Stride of the coarsened sweep used for two-variable claims.
pub const COARSE_STRIDE: usize = 10;

/// Tolerances, all derived from the grid step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Allowed negative slack for every claim.
    pub slack: f64,
    /// Grid-scale slack built into the Lipschitz claim.
    pub lipschitz_slack: f64,
    /// Constant `C` in `|v'_k - central difference| <= C h (1 + |v'_k|)`.
    pub derivative_fd: f64,
}

impl Tolerances {
    pub fn for_grid(grid: &GridSpec) -> Self {
        let h = grid.step();
        Self {
            slack: 10.0 * h * h,
            lipschitz_slack: 2.0 * h,
            derivative_fd: FD_CONSTANT,
        }
    }
}

/// Central differences straddle the jump of `v''_k` at `ξ_k`, where the
/// relative error reaches about 2.
pub const FD_CONSTANT: f64 = 4.0;

#[derive(Debug, Clone, Copy)]
struct Loc {
    k: usize,
    y: f64,
    x: Option<f64>,
}

/// Running minimum of a slack together with where it occurred.
struct Worst {
    slack: f64,
    loc: Option<Loc>,
    checked: usize,
}

impl Worst {
    fn new() -> Self {
        Self {
            slack: f64::INFINITY,
            loc: None,
            checked: 0,
        }
    }

    #[inline]
    fn see(&mut self, slack: f64, k: usize, y: f64, x: Option<f64>) {
        self.checked += 1;
        if slack < self.slack || slack.is_nan() {
            self.slack = slack;
            self.loc = Some(Loc { k, y, x });
        }
    }

    fn merge(mut self, other: Worst) -> Worst {
        self.checked += other.checked;
        if other.slack < self.slack {
            self.slack = other.slack;
            self.loc = other.loc;
        }
        self
    }

    fn report(self, id: &str, tolerance: f64, note: String) -> LemmaReport {
        let location = match self.loc {
            None => "none".to_string(),
            Some(Loc { k, y, x: None }) => format!("k={k} y={y:.6}"),
            Some(Loc { k, y, x: Some(x) }) => format!("k={k} y={y:.6} x={x:.6}"),
        };
        let worst = if self.checked == 0 { 0.0 } else { self.slack };
        LemmaReport {
            lemma_id: id.to_string(),
            passed: worst >= -tolerance,
            worst_violation: worst,
            worst_location: location,
            tolerance_used: tolerance,
            checked: self.checked,
            note,
        }
    }
}

struct Ctx<'a> {
    vt: &'a ValueTable,
    tf: &'a ThresholdFamily,
    dt: &'a DerivativeTable,
    grid: GridSpec,
    /// Horizon shared by all three tables.
    n: usize,
    tol: Tolerances,
}

impl Ctx<'_> {
    fn ys(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.grid.points()).map(|j| (j, self.grid.x(j)))
    }

    fn coarse(&self) -> impl Iterator<Item = (usize, f64)> + Clone + '_ {
        (0..self.grid.points())
            .step_by(COARSE_STRIDE)
            .map(|j| (j, self.grid.x(j)))
    }

    fn v(&self, k: usize) -> &SampledFunction {
        self.vt.v(k)
    }
}

type Claim = fn(&Ctx) -> LemmaReport;

/// `v_k(x_j) - v_k(x_{j+1}) >= 0` for all k >= 1. Exact strictness is
/// counted separately: for large k the functions are so flat near zero that
/// adjacent tabulated values coincide in double precision.
fn strict_decrease(c: &Ctx) -> LemmaReport {
    let mut w = Worst::new();
    let mut ties = 0usize;
    for k in 1..=c.n {
        let v = c.v(k).values();
        for j in 0..c.grid.intervals() {
            let d = v[j] - v[j + 1];
            if d <= 0.0 {
                ties += 1;
            }
            w.see(d, k, c.grid.x(j), None);
        }
    }
    let note = format!("{ties} adjacent pairs not strictly decreasing in double precision");
    w.report("value_strictly_decreasing", c.tol.slack, note)
}

fn derivative_negative(c: &Ctx) -> LemmaReport {
    let mut w = Worst::new();
    for k in 1..=c.n {
        let d = c.dt.dv(k).values();
        for (j, y) in c.ys().skip(1) {
            w.see(-d[j], k, y, None);
        }
    }
    let note = if w.slack > 0.0 {
        "v'_k < 0 on (0, 1] for every k".to_string()
    } else {
        String::new()
    };
    w.report("value_derivative_negative", 0.0, note)
}

fn boundary(c: &Ctx) -> LemmaReport {
    let mut w = Worst::new();
    let last = c.grid.intervals();
    for k in 0..=c.n {
        w.see(-c.v(k).at(last).abs(), k, 1.0, None);
    }
    w.report("value_boundary_at_one", c.tol.slack, String::new())
}

fn value_monotone_in_k(c: &Ctx) -> LemmaReport {
    let mut w = Worst::new();
    for k in 0..c.n {
        let (a, b) = (c.v(k).values(), c.v(k + 1).values());
        for (j, y) in c.ys() {
            w.see(b[j] - a[j], k, y, None);
        }
    }
    w.report("value_monotone_in_k", c.tol.slack, String::new())
}

fn fixed_point_range(c: &Ctx) -> LemmaReport {
    let mut w = Worst::new();
    for k in 1..=c.n {
        let v = c.v(k);
        let d = v.at(0) - v.eval_unchecked(2.0 / 3.0);
        w.see(1.0 - d, k, 0.0, Some(2.0 / 3.0));
    }
    w.report("fixed_point_range", c.tol.slack, String::new())
}

fn diminishing_returns_1(c: &Ctx) -> LemmaReport {
    let k_max = c.n.min(50);
    let w = (1..=k_max)
        .into_par_iter()
        .map(|k| {
            let mut w = Worst::new();
            let (a, b) = (c.v(k - 1), c.v(k));
            for (_, y) in c.coarse().take_while(|&(_, y)| y <= 0.5) {
                let (ay, by) = (a.eval_unchecked(1.0 - y), b.eval_unchecked(1.0 - y));
                for (ju, u) in c.coarse().filter(|&(_, u)| u >= y && u <= 1.0 - y) {
                    let lhs = a.at(ju) - ay;
                    let rhs = b.at(ju) - by;
                    w.see(rhs - lhs, k, y, Some(u));
                }
            }
            w
        })
        .reduce(Worst::new, Worst::merge);
    w.report("diminishing_returns_1", c.tol.slack, format!("k <= {k_max}, stride {COARSE_STRIDE}"))
}

fn diminishing_returns_2(c: &Ctx) -> LemmaReport {
    let k_max = c.n.min(50);
    let w = (3..=k_max)
        .into_par_iter()
        .map(|k| {
            let mut w = Worst::new();
            let (a, b, g) = (c.v(k - 1), c.v(k), c.tf.g(k));
            let xi_k = c.tf.xi(k);
            for (jy, y) in c.coarse().take_while(|&(_, y)| y <= xi_k) {
                let gy = g.at(jy);
                let (ay, by) = (a.at(jy), b.at(jy));
                let xs = c
                    .coarse()
                    .map(|(_, x)| x)
                    .filter(|&x| x >= y && x < gy)
                    .chain(std::iter::once(gy));
                for x in xs {
                    let lhs = ay - a.eval_unchecked(1.0 - x);
                    let rhs = by - b.eval_unchecked(1.0 - x);
                    w.see(rhs - lhs, k, y, Some(x));
                }
            }
            w
        })
        .reduce(Worst::new, Worst::merge);
    w.report("diminishing_returns_2", c.tol.slack, format!("3 <= k <= {k_max}, stride {COARSE_STRIDE}"))
}

fn g_first_two_identity(c: &Ctx) -> LemmaReport {
    let mut w = Worst::new();
    for k in 1..=c.n.min(2) {
        let g = c.tf.g(k).values();
        for (j, y) in c.ys() {
            w.see(-(g[j] - y).abs(), k, y, None);
        }
        w.see(-c.tf.xi(k).abs(), k, 0.0, None);
    }
    w.report("threshold_first_two_identity", c.tol.slack, String::new())
}

fn g_bounds(c: &Ctx) -> LemmaReport {
    let mut w = Worst::new();
    for k in 1..=c.n {
        let g = c.tf.g(k).values();
        for (j, y) in c.ys() {
            w.see((g[j] - y).min((1.0f64 / 3.0).max(y) - g[j]), k, y, None);
        }
    }
    w.report("threshold_bounds", c.tol.slack, String::new())
}

fn g_identity_above_third(c: &Ctx) -> LemmaReport {
    let mut w = Worst::new();
    for k in 1..=c.n {
        let g = c.tf.g(k).values();
        for (j, y) in c.ys().filter(|&(_, y)| y >= 1.0 / 3.0) {
            w.see(-(g[j] - y).abs(), k, y, None);
        }
    }
    w.report("threshold_identity_above_one_third", c.tol.slack, String::new())
}

fn g_lower_bound(c: &Ctx) -> LemmaReport {
    let mut w = Worst::new();
    for k in 3..=c.n {
        let g = c.tf.g(k).values();
        for (j, y) in c.ys() {
            w.see(g[j] - 1.0 / 6.0, k, y, None);
        }
    }
    w.report("threshold_lower_bound", c.tol.slack, String::new())
}

fn g_monotone_in_k(c: &Ctx) -> LemmaReport {
    let mut w = Worst::new();
    for k in 1..c.n {
        let (a, b) = (c.tf.g(k).values(), c.tf.g(k + 1).values());
        for (j, y) in c.ys() {
            w.see(b[j] - a[j], k, y, None);
        }
    }
    w.report("threshold_monotone_in_k", c.tol.slack, String::new())
}

fn g_below_limit(c: &Ctx) -> LemmaReport {
    let mut w = Worst::new();
    for k in 1..=c.n {
        let g = c.tf.g(k).values();
        for (j, y) in c.ys() {
            w.see(c.tf.g_limit(y) - g[j], k, y, None);
        }
    }
    w.report("threshold_below_limit", c.tol.slack, String::new())
}

fn lipschitz(c: &Ctx) -> LemmaReport {
    let mut w = Worst::new();
    let h = c.grid.step();
    for k in 1..=c.n {
        let g = c.tf.g(k).values();
        for j in 0..c.grid.intervals() {
            w.see(h + c.tol.lipschitz_slack - (g[j + 1] - g[j]).abs(), k, c.grid.x(j), None);
        }
    }
    w.report("threshold_lipschitz", c.tol.slack, format!("slack {} on each step", c.tol.lipschitz_slack))
}

fn xi_monotone(c: &Ctx) -> LemmaReport {
    let mut w = Worst::new();
    let xs = c.tf.xis();
    for k in 1..c.n {
        w.see(xs[k] - xs[k - 1], k, xs[k - 1], None);
    }
    for (k, &x) in xs.iter().enumerate() {
        w.see(1.0 / 3.0 - x, k + 1, x, None);
        w.see(c.tf.xi_limit() - x, k + 1, x, None);
    }
    w.see(1.0 / 3.0 - c.tf.xi_limit(), 0, c.tf.xi_limit(), None);
    w.report("xi_monotone_bounded", c.tol.slack, String::new())
}

/// `ξ_k` solves `v_{k-1}(y) - v_{k-1}(1 - y) = 1`, and the tabulated `g_k`
/// leaves the diagonal exactly there: `g_k(y) = y` at nodes from `ξ_k` on,
/// `g_k(y) >= y` below.
fn xi_characterization(c: &Ctx) -> LemmaReport {
    let mut w = Worst::new();
    for k in 3..=c.n {
        let xi = c.tf.xi(k);
        let v = c.v(k - 1);
        let delta = v.eval_unchecked(xi) - v.eval_unchecked(1.0 - xi);
        w.see(-(delta - 1.0).abs(), k, xi, None);
        let g = c.tf.g(k).values();
        for (j, y) in c.ys() {
            let s = if y >= xi { -(g[j] - y).abs() } else { g[j] - y };
            w.see(s, k, y, None);
        }
    }
    w.report("xi_characterization", c.tol.slack, String::new())
}

fn derivative_low(c: &Ctx) -> LemmaReport {
    let mut w = Worst::new();
    for k in 1..=c.n {
        let d = c.dt.dv(k).values();
        let next = (k < c.n).then(|| c.dt.dv(k + 1).values());
        for (j, y) in c.ys().take_while(|&(_, y)| y <= 1.0 / 3.0) {
            let mut s = (d[j] + 1.0).min(-d[j]);
            if let Some(nx) = next {
                s = s.min(nx[j] - d[j]);
            }
            w.see(s, k, y, None);
        }
    }
    w.report("derivative_bounds_low", c.tol.slack, String::new())
}

fn derivative_high(c: &Ctx) -> LemmaReport {
    let mut w = Worst::new();
    for k in 1..=c.n {
        let d = c.dt.dv(k).values();
        let next = (k < c.n).then(|| c.dt.dv(k + 1).values());
        for (j, y) in c.ys().filter(|&(_, y)| y >= 0.5) {
            let mut s = -1.0 - d[j];
            if let Some(nx) = next {
                s = s.min(d[j] - nx[j]);
            }
            w.see(s, k, y, None);
        }
    }
    w.report("derivative_bounds_high", c.tol.slack, String::new())
}

fn derivative_fd(c: &Ctx) -> LemmaReport {
    let mut w = Worst::new();
    let h = c.grid.step();
    for k in 1..=c.n {
        let v = c.v(k).values();
        let d = c.dt.dv(k).values();
        for j in 1..c.grid.intervals() {
            let fd = (v[j + 1] - v[j - 1]) / (2.0 * h);
            let bound = c.tol.derivative_fd * h * (1.0 + d[j].abs());
            w.see(bound - (d[j] - fd).abs(), k, c.grid.x(j), None);
        }
    }
    w.report("derivative_finite_difference", c.tol.slack, format!("bound {FD_CONSTANT} h (1 + |v'_k|)"))
}

fn gap(c: &Ctx) -> LemmaReport {
    let mut w = Worst::new();
    let xi = c.tf.xi_limit();
    for k in 1..=c.n {
        let g = uniform_gap(c.tf, k).expect("k within horizon");
        w.see(-(g - (xi - c.tf.xi(k))).abs(), k, c.tf.xi(k), None);
    }
    w.report("uniform_gap", c.tol.slack, String::new())
}

const CLAIMS: &[Claim] = &[
    strict_decrease,
    derivative_negative,
    boundary,
    value_monotone_in_k,
    fixed_point_range,
    diminishing_returns_1,
    diminishing_returns_2,
    g_first_two_identity,
    g_bounds,
    g_identity_above_third,
    g_lower_bound,
    g_monotone_in_k,
    g_below_limit,
    lipschitz,
    xi_monotone,
    xi_characterization,
    derivative_low,
    derivative_high,
    derivative_fd,
    gap,
];

/// Checks every claim on tables sharing one grid; reports come back sorted
/// by id. The horizon used is the shortest of the three tables.
pub fn certify_all(vt: &ValueTable, tf: &ThresholdFamily, dt: &DerivativeTable) -> Vec<LemmaReport> {
    assert!(
        vt.grid() == tf.grid() && tf.grid() == dt.grid(),
        "certify_all needs tables on one grid"
    );
    let ctx = Ctx {
        vt,
        tf,
        dt,
        grid: *vt.grid(),
        n: vt.horizon().min(tf.horizon()).min(dt.horizon()),
        tol: Tolerances::for_grid(vt.grid()),
    };
    let mut out: Vec<LemmaReport> = CLAIMS.par_iter().map(|claim| claim(&ctx)).collect();
    out.sort_by(|a, b| a.lemma_id.cmp(&b.lemma_id));
    out
}

/// The threshold figure: for `k = 1..10`, `g_k` sits on the diagonal from
/// `ξ_k` on and decreases below `ξ_k - h`; the last tabulated `g_n` is
/// within `ξ - ξ_n + 2h` of `max(ξ, y)`.
pub fn certify_figure1(tf: &ThresholdFamily) -> LemmaReport {
    let grid = *tf.grid();
    let h = grid.step();
    let tol = 2.0 * h;
    let mut w = Worst::new();
    let mut strict = (0usize, 0usize);
    for k in 1..=tf.horizon().min(10) {
        let g = tf.g(k).values();
        let xi_k = tf.xi(k);
        for j in 0..grid.points() {
            let y = grid.x(j);
            if y >= xi_k {
                w.see(-(g[j] - y).abs(), k, y, None);
            } else if j + 1 < grid.points() && grid.x(j + 1) <= xi_k - h {
                let d = g[j] - g[j + 1];
                strict.1 += 1;
                if d > 0.0 {
                    strict.0 += 1;
                }
                w.see(d, k, y, None);
            }
        }
    }
    let n = tf.horizon();
    let allowance = tf.xi_limit() - tf.xi(n);
    let last = tf.g(n).values();
    for (j, g) in last.iter().enumerate() {
        let y = grid.x(j);
        w.see(allowance - (g - tf.g_limit(y)).abs(), n, y, None);
    }
    let note = format!("{} of {} steps below the fixed point strictly decreasing", strict.0, strict.1);
    w.report("figure_threshold_curves", tol, note)
}

pub fn all_passed(reports: &[LemmaReport]) -> bool {
    reports.iter().all(|r| r.passed)
}

/// Fixed-width text table of reports.
pub fn write_text_table(mut out: impl std::io::Write, reports: &[LemmaReport]) -> std::io::Result<()> {
    let width = reports.iter().map(|r| r.lemma_id.len()).max().unwrap_or(8).max(8);
    writeln!(out, "{:<width$}  {:<6}  {:>14}  {:>10}  location", "claim", "result", "worst_slack", "tolerance")?;
    for r in reports {
        writeln!(
            out,
            "{:<width$}  {:<6}  {:>14.6e}  {:>10.3e}  {}",
            r.lemma_id,
            if r.passed { "pass" } else { "FAIL" },
            r.worst_violation,
            r.tolerance_used,
            r.worst_location
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bellman::{compute_derivatives, compute_thresholds_with_limit, compute_values};

    const XI: f64 = 0.292_893_218_813_452_5;

    fn tables(h: f64, n: usize) -> (ValueTable, ThresholdFamily, DerivativeTable) {
        let vt = compute_values(GridSpec::new(h).unwrap(), n).unwrap();
        let tf = compute_thresholds_with_limit(&vt, XI).unwrap();
        let dt = compute_derivatives(&vt, &tf).unwrap();
        (vt, tf, dt)
    }

    #[test]
    fn suite_passes_and_is_sorted() {
        let (vt, tf, dt) = tables(1e-2, 20);
        let reports = certify_all(&vt, &tf, &dt);
        for r in &reports {
            assert!(r.passed, "{r:?}");
            assert_eq!(r.passed, r.worst_violation >= -r.tolerance_used);
        }
        assert!(reports.windows(2).all(|w| w[0].lemma_id < w[1].lemma_id));
        assert_eq!(reports.len(), CLAIMS.len());
    }

    #[test]
    fn detects_a_broken_table() {
        let (vt, _, _) = tables(1e-2, 5);
        let mut rows: Vec<Vec<f64>> = vt.rows().map(|r| r.values().to_vec()).collect();
        rows[4][50] += 0.1;
        let bad = ValueTable::from_rows(*vt.grid(), rows).unwrap();
        let tf = compute_thresholds_with_limit(&bad, XI).unwrap();
        let dt = compute_derivatives(&bad, &tf).unwrap();
        let reports = certify_all(&bad, &tf, &dt);
        let r = reports.iter().find(|r| r.lemma_id == "value_strictly_decreasing").unwrap();
        assert!(!r.passed);
        assert!(r.worst_location.starts_with("k=4"), "{}", r.worst_location);
    }

    #[test]
    fn v10_is_strictly_decreasing() {
        let (vt, _, _) = tables(1e-3, 10);
        let v = vt.v(10).values();
        assert!(v.windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn figure_curves() {
        let (_, tf, _) = tables(1e-3, 40);
        let r = certify_figure1(&tf);
        assert!(r.passed, "{r:?}");
    }
}
