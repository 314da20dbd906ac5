//! Selection policies run as state machines over a stream of uniforms.
//!
//! The state `Y` is `1 - X` at the last selection (0 before any), and step
//! `i` selects `X_i` iff `X_i >= threshold(Y_{i-1})`.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::bellman::{ThresholdFamily, ValueTable};
use crate::estimators::{EstimatorReport, Method};
use crate::rng::{replicate, uniform};
use crate::stats::Moments;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("uniform stream ended after {got} of {needed} values")]
    StreamExhausted { needed: usize, got: usize },
    #[error("threshold family covers horizon {available}, run needs {needed}")]
    HorizonTooShort { needed: usize, available: usize },
    #[error("threshold {0} outside [0, 1/3]")]
    BadThreshold(f64),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

/// Renewal level: every threshold of `π*_n` (before its last two steps)
/// and of `π_∞` sits below it.
pub const RENEWAL_LEVEL: f64 = 5.0 / 6.0;

#[derive(Debug, Clone, Copy)]
pub enum PolicyKind<'a> {
    /// `π*_n`: threshold `g_{n-i+1}(Y_{i-1})` at step `i`.
    Optimal(&'a ThresholdFamily),
    /// `π_∞`: threshold `max(ξ, Y_{i-1})`.
    Limit { xi: f64 },
    /// Baseline `max(c, Y_{i-1})`.
    FixedThreshold { c: f64 },
}

impl PolicyKind<'_> {
    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            PolicyKind::Optimal(tf) if tf.horizon() < n => Err(PolicyError::HorizonTooShort {
                needed: n,
                available: tf.horizon(),
            }),
            PolicyKind::Limit { xi: c } | PolicyKind::FixedThreshold { c }
                if !(0.0..=1.0 / 3.0).contains(&c) =>
            {
                Err(PolicyError::BadThreshold(c))
            }
            _ => Ok(()),
        }
    }

    /// Threshold with `k` observations still to be seen (including the
    /// current one) and state `y`.
    #[inline]
    pub fn threshold(&self, k: usize, y: f64) -> f64 {
        match *self {
            PolicyKind::Optimal(tf) => tf.threshold(k, y),
            PolicyKind::Limit { xi } => xi.max(y),
            PolicyKind::FixedThreshold { c } => c.max(y),
        }
    }

    pub fn tag(&self) -> PolicyTag {
        match *self {
            PolicyKind::Optimal(_) => PolicyTag::Optimal,
            PolicyKind::Limit { xi } => PolicyTag::Limit { xi },
            PolicyKind::FixedThreshold { c } => PolicyTag::FixedThreshold { c },
        }
    }
}

/// Serializable description of a [`PolicyKind`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum PolicyTag {
    Optimal,
    Limit { xi: f64 },
    FixedThreshold { c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathStep {
    pub i: usize,
    pub x: f64,
    pub threshold: f64,
    pub selected: bool,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyRun {
    pub kind: PolicyTag,
    pub n: usize,
    pub selections: usize,
    pub final_state: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<PathStep>>,
}

impl PolicyRun {
    /// Writes the recorded path as CSV (`i,x,threshold,selected,y`).
    pub fn write_trace_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "i,x,threshold,selected,y")?;
        for s in self.path.iter().flatten() {
            writeln!(
                out,
                "{},{},{},{},{}",
                s.i,
                crate::report::fmt_sig(s.x),
                crate::report::fmt_sig(s.threshold),
                u8::from(s.selected),
                crate::report::fmt_sig(s.y)
            )?;
        }
        Ok(())
    }
}

/// Runs `kind` for `steps` observations of a horizon-`n` problem. For the
/// optimal policy step `i` uses `g_{n-i+1}`; `steps < n` stops early.
fn run_steps(
    kind: &PolicyKind<'_>,
    n: usize,
    steps: usize,
    uniforms: &mut impl Iterator<Item = f64>,
    record: bool,
) -> Result<PolicyRun> {
    kind.validate(n)?;
    debug_assert!(steps <= n);
    let mut y = 0.0;
    let mut selections = 0;
    let mut path = record.then(|| Vec::with_capacity(steps));
    for i in 1..=steps {
        let x = uniforms.next().ok_or(PolicyError::StreamExhausted {
            needed: steps,
            got: i - 1,
        })?;
        let t = kind.threshold(n - i + 1, y);
        let selected = x >= t;
        if selected {
            y = 1.0 - x;
            selections += 1;
        }
        if let Some(p) = path.as_mut() {
            p.push(PathStep {
                i,
                x,
                threshold: t,
                selected,
                y,
            });
        }
    }
    Ok(PolicyRun {
        kind: kind.tag(),
        n,
        selections,
        final_state: y,
        path,
    })
}

/// Executes `kind` over `n` uniforms.
pub fn run_policy(
    kind: &PolicyKind<'_>,
    n: usize,
    uniforms: impl IntoIterator<Item = f64>,
    record: bool,
) -> Result<PolicyRun> {
    run_steps(kind, n, n, &mut uniforms.into_iter(), record)
}

/// Selection count only; the hot loop of the Monte Carlo estimators.
#[inline]
pub fn count_selections(kind: &PolicyKind<'_>, n: usize, mut next: impl FnMut() -> f64) -> u32 {
    let mut y = 0.0;
    let mut count = 0u32;
    for i in 1..=n {
        let x = next();
        if x >= kind.threshold(n - i + 1, y) {
            y = 1.0 - x;
            count += 1;
        }
    }
    count
}

/// `π*_n` and `π_∞` driven by one shared stream of `n` uniforms.
pub fn run_coupled(
    tf: &ThresholdFamily,
    xi: f64,
    n: usize,
    uniforms: impl IntoIterator<Item = f64>,
    record: bool,
) -> Result<(PolicyRun, PolicyRun)> {
    run_coupled_steps(tf, xi, n, n, uniforms, record)
}

/// As [`run_coupled`] but stopping after `steps` of the `n` observations.
pub fn run_coupled_steps(
    tf: &ThresholdFamily,
    xi: f64,
    n: usize,
    steps: usize,
    uniforms: impl IntoIterator<Item = f64>,
    record: bool,
) -> Result<(PolicyRun, PolicyRun)> {
    if steps > n {
        return Err(PolicyError::Invalid(format!("steps {steps} exceed horizon {n}")));
    }
    let xs: Vec<f64> = uniforms.into_iter().take(steps).collect();
    if xs.len() < steps {
        return Err(PolicyError::StreamExhausted {
            needed: steps,
            got: xs.len(),
        });
    }
    let opt = run_steps(&PolicyKind::Optimal(tf), n, steps, &mut xs.iter().copied(), record)?;
    let lim = run_steps(&PolicyKind::Limit { xi }, n, steps, &mut xs.iter().copied(), record)?;
    Ok((opt, lim))
}

/// Indices `i` (1-based) with `X_i >= 5/6` at which the coupled runs fail to
/// both select or end in different states. Needs recorded paths.
pub fn renewal_violations(opt: &PolicyRun, lim: &PolicyRun) -> Vec<usize> {
    let (Some(a), Some(b)) = (&opt.path, &lim.path) else {
        return Vec::new();
    };
    a.iter()
        .zip(b)
        .filter(|(s, t)| s.x >= RENEWAL_LEVEL && !(s.selected && t.selected && s.y == t.y))
        .map(|(s, _)| s.i)
        .collect()
}

/// Monte Carlo mean of `A_n(π*_n)` against the DP value `v_n(0)`.
pub fn mean_selection_check(
    vt: &ValueTable,
    tf: &ThresholdFamily,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<EstimatorReport> {
    if reps < 100 {
        return Err(PolicyError::Invalid(format!("reps = {reps} < 100")));
    }
    if vt.horizon() < n {
        return Err(PolicyError::HorizonTooShort {
            needed: n,
            available: vt.horizon(),
        });
    }
    let kind = PolicyKind::Optimal(tf);
    kind.validate(n)?;
    let counts: Vec<f64> = replicate(reps, seed, |_, rng| {
        count_selections(&kind, n, || uniform(rng)) as f64
    });
    let m = Moments::from_slice(&counts);
    let se = m.std_error_of_mean();
    let dp = vt.mean_selections(n);
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("dp_value".into(), dp);
    diagnostics.insert("z_score".into(), if se > 0.0 { (m.mean - dp) / se } else { 0.0 });
    diagnostics.insert("sample_variance".into(), m.variance);
    let mut params = BTreeMap::new();
    params.insert("n".into(), n.into());
    params.insert("reps".into(), reps.into());
    params.insert("seed".into(), seed.into());
    params.insert("h".into(), tf.grid().step().into());
    Ok(EstimatorReport::new(Method::Replication, m.mean, se, reps, params, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bellman::{compute_thresholds_with_limit, compute_values};
    use crate::numerics::GridSpec;

    const XI: f64 = 0.292_893_218_813_452_5;

    fn family(n: usize) -> ThresholdFamily {
        let vt = compute_values(GridSpec::new(1e-3).unwrap(), n).unwrap();
        compute_thresholds_with_limit(&vt, XI).unwrap()
    }

    #[test]
    fn limit_policy_hand_trace() {
        let run = run_policy(&PolicyKind::Limit { xi: XI }, 2, [0.9, 0.9], true).unwrap();
        assert_eq!(run.selections, 2);
        let p = run.path.unwrap();
        assert!((p[0].y - 0.1).abs() < 1e-15);
        assert_eq!(p[1].threshold, XI);
    }

    #[test]
    fn optimal_single_step_always_selects() {
        let tf = family(1);
        for &x in &[0.0, 1e-9, 0.5, 0.999] {
            let run = run_policy(&PolicyKind::Optimal(&tf), 1, [x], false).unwrap();
            assert_eq!(run.selections, 1);
        }
    }

    #[test]
    fn nothing_clears_the_threshold() {
        let run = run_policy(&PolicyKind::Limit { xi: XI }, 5, [0.1; 5], false).unwrap();
        assert_eq!(run.selections, 0);
        assert_eq!(run.final_state, 0.0);
    }

    #[test]
    fn weak_inequality_at_threshold() {
        let run = run_policy(&PolicyKind::FixedThreshold { c: 0.25 }, 1, [0.25], false).unwrap();
        assert_eq!(run.selections, 1);
    }

    #[test]
    fn errors() {
        assert_eq!(
            run_policy(&PolicyKind::Limit { xi: XI }, 3, [0.5, 0.5], false),
            Err(PolicyError::StreamExhausted { needed: 3, got: 2 })
        );
        let tf = family(3);
        assert!(matches!(
            run_policy(&PolicyKind::Optimal(&tf), 4, [0.5; 4], false),
            Err(PolicyError::HorizonTooShort { needed: 4, available: 3 })
        ));
        assert!(matches!(
            run_policy(&PolicyKind::Limit { xi: 0.5 }, 1, [0.5], false),
            Err(PolicyError::BadThreshold(_))
        ));
    }

    #[test]
    fn coupled_runs_share_renewals() {
        let tf = family(8);
        let xs = [0.9, 0.2, 0.5, 0.95, 0.1, 0.3, 0.86, 0.4];
        let (opt, lim) = run_coupled(&tf, XI, 8, xs, true).unwrap();
        assert!(renewal_violations(&opt, &lim).is_empty());
        let (a, b) = (opt.path.unwrap(), lim.path.unwrap());
        assert_eq!(a[0].y, b[0].y);
        assert_eq!(a[3].y, b[3].y);
    }

    #[test]
    fn coupled_all_renewals() {
        let tf = family(6);
        let (opt, lim) = run_coupled(&tf, XI, 6, [0.9, 0.99, 0.85, 0.87, 0.95, 0.9], false).unwrap();
        assert_eq!(opt.selections, 6);
        assert_eq!(lim.selections, 6);
        let (opt, lim) = run_coupled(&tf, XI, 1, [0.01], false).unwrap();
        assert!(opt.selections <= 1 && lim.selections <= 1);
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let run = run_policy(&PolicyKind::Limit { xi: XI }, 2, [0.9, 0.1], true).unwrap();
        let mut buf = Vec::new();
        run.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "i,x,threshold,selected,y");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,0.9,"));
    }

    #[test]
    fn mean_check_small_horizons() {
        let vt = compute_values(GridSpec::new(1e-3).unwrap(), 2).unwrap();
        let tf = compute_thresholds_with_limit(&vt, XI).unwrap();
        let r1 = mean_selection_check(&vt, &tf, 1, 1000, 3).unwrap();
        assert_eq!(r1.estimate, 1.0);
        let r2 = mean_selection_check(&vt, &tf, 2, 20_000, 3).unwrap();
        assert!((r2.estimate - 1.5).abs() <= 3.0 * r2.std_error, "{r2:?}");
        assert!(mean_selection_check(&vt, &tf, 2, 10, 3).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn renewal_coupling_holds_pathwise(xs in proptest::collection::vec(0.0f64..1.0, 3..40)) {
                let tf = family(40);
                let n = xs.len();
                // The last step of π*_n may see a state above 5/6.
                let (opt, lim) = run_coupled_steps(&tf, XI, n, n - 1, xs.iter().copied(), true).unwrap();
                prop_assert!(renewal_violations(&opt, &lim).is_empty());
                let renewals = xs[..n - 1].iter().filter(|&&x| x >= RENEWAL_LEVEL).count();
                prop_assert!(opt.selections >= renewals && lim.selections >= renewals);
                prop_assert!(opt.selections <= n && lim.selections <= n);
            }

            #[test]
            fn limit_states_stay_below_one_minus_xi(xs in proptest::collection::vec(0.0f64..1.0, 1..60)) {
                let run = run_policy(&PolicyKind::Limit { xi: XI }, xs.len(), xs.iter().copied(), true).unwrap();
                for s in run.path.unwrap() {
                    prop_assert!(s.y <= 1.0 - XI);
                }
            }

            #[test]
            fn runs_are_deterministic(seed in 0u64..1000) {
                use crate::rng::replication_rng;
                let tf = family(30);
                let draw = |s| { let mut r = replication_rng(s, 0); (0..30).map(|_| uniform(&mut r)).collect::<Vec<_>>() };
                let a = run_policy(&PolicyKind::Optimal(&tf), 30, draw(seed), true).unwrap();
                let b = run_policy(&PolicyKind::Optimal(&tf), 30, draw(seed), true).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
