//! The Markov chain `Z_i = (X_i, Y'_{i-1})` behind the limiting policy,
//! on the state space `[0, 1] × [0, 1 - ξ]`.

use serde::Serialize;

use crate::estimators::{EstimatorReport, Method};
use crate::rng::{replicate, replication_rng, uniform, ReplicationRng};
use crate::stats::{normal_quantile, Moments};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainState {
    pub x: f64,
    pub y: f64,
}

impl ChainState {
    pub fn is_valid(&self, xi: f64) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0 - xi).contains(&self.y)
    }

    /// Whether the current observation is selected.
    #[inline]
    pub fn selects(&self, xi: f64) -> bool {
        self.x >= xi.max(self.y)
    }
}

/// One transition: select `x` (new state `1 - x`) when `x >= max(ξ, y)`,
/// otherwise keep `y`; the next observation is `u_next`.
#[inline]
pub fn kernel_step(z: ChainState, u_next: f64, xi: f64) -> ChainState {
    let y = if z.selects(xi) { 1.0 - z.x } else { z.y };
    ChainState { x: u_next, y }
}

/// A draw from the uniform stationary law on `[0, 1] × [0, 1 - ξ]`.
#[inline]
pub fn stationary_draw(rng: &mut ReplicationRng, xi: f64) -> ChainState {
    let x = uniform(rng);
    let y = (1.0 - xi) * uniform(rng);
    ChainState { x, y }
}

/// `count` i.i.d. stationary states from stream 0 of `seed`.
pub fn stationary_sample(count: usize, xi: f64, seed: u64) -> Vec<ChainState> {
    let mut rng = replication_rng(seed, 0);
    (0..count).map(|_| stationary_draw(&mut rng, xi)).collect()
}

/// Advances every state `steps` transitions with fresh uniforms.
pub fn push_forward(states: &[ChainState], steps: usize, xi: f64, seed: u64) -> Vec<ChainState> {
    let mut rng = replication_rng(seed, 1);
    states
        .iter()
        .map(|&z| (0..steps).fold(z, |z, _| kernel_step(z, uniform(&mut rng), xi)))
        .collect()
}

/// Largest lag at which the coupling tail is compared.
pub const TAIL_LAGS: usize = 20;
/// Steps past the coupling time over which state equality is checked.
pub const POST_COUPLING_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingOutcome {
    pub coupling_time: usize,
    pub pre_coupling_discrepancy: usize,
    pub post_coupling_equal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRow {
    pub ell: usize,
    pub empirical: f64,
    pub theoretical: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingReport {
    pub xi: f64,
    pub reps: usize,
    pub mean_nu: f64,
    pub mean_nu_se: f64,
    pub tail: Vec<TailRow>,
    pub pathwise_violations: usize,
    /// Simultaneous (Bonferroni, 1%) binomial band check over all lags.
    pub tail_within_bands: bool,
    pub summary: EstimatorReport,
}

/// One double-chain path. `Z` starts at `z0`, `Z̄` at a stationary draw;
/// one warm-up transition puts both on the shared stream, after which
/// `Z_i = (X_i, Y'_{i-1})`, `Z̄_i = (X_i, Ȳ'_{i-1})` and
/// `ν = min{i >= 1 : X_i >= 1 - ξ}`.
pub fn coupled_path(z0: ChainState, xi: f64, rng: &mut ReplicationRng) -> CouplingOutcome {
    let zbar0 = stationary_draw(rng, xi);
    let u1 = uniform(rng);
    let mut z = kernel_step(z0, u1, xi);
    let mut zb = kernel_step(zbar0, u1, xi);
    let mut i = 1;
    let mut discrepancy = 0;
    loop {
        if z.y != zb.y {
            discrepancy += 1;
        }
        if z.x >= 1.0 - xi {
            break;
        }
        let u = uniform(rng);
        z = kernel_step(z, u, xi);
        zb = kernel_step(zb, u, xi);
        i += 1;
    }
    let nu = i;
    let mut equal = true;
    for _ in 0..POST_COUPLING_STEPS {
        let u = uniform(rng);
        z = kernel_step(z, u, xi);
        zb = kernel_step(zb, u, xi);
        equal &= z == zb;
    }
    CouplingOutcome {
        coupling_time: nu,
        pre_coupling_discrepancy: discrepancy,
        post_coupling_equal: equal,
    }
}

/// Empirical law of the coupling time against `P(ν > ℓ) = (1 - ξ)^ℓ`.
pub fn coupling_experiment(z0: ChainState, reps: usize, xi: f64, seed: u64) -> CouplingReport {
    let outcomes = replicate(reps, seed, |_, rng| coupled_path(z0, xi, rng));
    let nus: Vec<f64> = outcomes.iter().map(|o| o.coupling_time as f64).collect();
    let m = Moments::from_slice(&nus);
    let violations = outcomes.iter().filter(|o| !o.post_coupling_equal).count();
    let z = normal_quantile(1.0 - 0.01 / (2.0 * TAIL_LAGS as f64));
    let rf = reps as f64;
    let tail: Vec<TailRow> = (1..=TAIL_LAGS)
        .map(|ell| {
            let exceed = outcomes.iter().filter(|o| o.coupling_time > ell).count();
            let p = (1.0 - xi).powi(ell as i32);
            TailRow {
                ell,
                empirical: exceed as f64 / rf,
                theoretical: p,
                half_width: z * (p * (1.0 - p) / rf).sqrt(),
            }
        })
        .collect();
    let within = tail
        .iter()
        .all(|r| (r.empirical - r.theoretical).abs() <= r.half_width);
    let mean_discrepancy =
        outcomes.iter().map(|o| o.pre_coupling_discrepancy as f64).sum::<f64>() / rf;

    let mut params = BTreeMap::new();
    params.insert("xi".into(), xi.into());
    params.insert("reps".into(), reps.into());
    params.insert("seed".into(), seed.into());
    params.insert("z0_x".into(), z0.x.into());
    params.insert("z0_y".into(), z0.y.into());
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("geometric_mean".into(), 1.0 / xi);
    diagnostics.insert("mean_pre_coupling_discrepancy".into(), mean_discrepancy);
    diagnostics.insert("pathwise_violations".into(), violations as f64);
    let se = m.std_error_of_mean();
    CouplingReport {
        xi,
        reps,
        mean_nu: m.mean,
        mean_nu_se: se,
        tail,
        pathwise_violations: violations,
        tail_within_bands: within,
        summary: EstimatorReport::new(Method::Replication, m.mean, se, reps, params, diagnostics),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_two_sample, ks_two_sample_critical_1pct};

    const XI: f64 = 0.292_893_218_813_452_5;

    #[test]
    fn kernel_branches() {
        let s = kernel_step(ChainState { x: 0.9, y: 0.2 }, 0.5, XI);
        assert!((s.y - 0.1).abs() < 1e-15);
        assert_eq!(s.x, 0.5);
        let r = kernel_step(ChainState { x: 0.1, y: 0.2 }, 0.5, XI);
        assert_eq!(r.y, 0.2);
        let tie = kernel_step(ChainState { x: XI, y: 0.2 }, 0.5, XI);
        assert_eq!(tie.y, 1.0 - XI);
        let tie = kernel_step(ChainState { x: 0.3, y: 0.3 }, 0.5, XI);
        assert_eq!(tie.y, 0.7);
    }

    #[test]
    fn stationary_means() {
        let s = stationary_sample(100_000, XI, 11);
        let xs: Vec<f64> = s.iter().map(|z| z.x).collect();
        let ys: Vec<f64> = s.iter().map(|z| z.y).collect();
        let mx = Moments::from_slice(&xs);
        let my = Moments::from_slice(&ys);
        assert!((mx.mean - 0.5).abs() <= 3.0 * mx.std_error_of_mean());
        assert!((my.mean - (1.0 - XI) / 2.0).abs() <= 3.0 * my.std_error_of_mean());
        assert!(s.iter().all(|z| z.is_valid(XI)));
    }

    #[test]
    fn one_step_preserves_y_marginal() {
        let s = stationary_sample(100_000, XI, 5);
        let pushed: Vec<f64> = push_forward(&s, 1, XI, 5).iter().map(|z| z.y).collect();
        let fresh: Vec<f64> = stationary_sample(100_000, XI, 6).iter().map(|z| z.y).collect();
        let d = ks_two_sample(&pushed, &fresh);
        assert!(d < ks_two_sample_critical_1pct(100_000, 100_000), "d = {d}");
    }

    #[test]
    fn distinct_starts_merge_at_first_high_draw() {
        let mut rng = replication_rng(9, 0);
        let mut a = ChainState { x: 0.0, y: 0.0 };
        let mut b = ChainState { x: 0.0, y: 1.0 - XI };
        let mut merged = false;
        for _ in 0..200 {
            let u = uniform(&mut rng);
            let high = a.x >= 1.0 - XI;
            a = kernel_step(a, u, XI);
            b = kernel_step(b, u, XI);
            merged |= high;
            if merged {
                assert_eq!(a, b);
            }
        }
        assert!(merged);
    }

    #[test]
    fn coupling_time_is_geometric() {
        let r = coupling_experiment(ChainState { x: 0.3, y: 0.0 }, 20_000, XI, 1);
        assert!((r.mean_nu - 1.0 / XI).abs() <= 3.0 * r.mean_nu_se, "{}", r.mean_nu);
        let p1 = &r.tail[0];
        let se = (p1.theoretical * (1.0 - p1.theoretical) / 20_000.0).sqrt();
        assert!((p1.empirical - (1.0 - XI)).abs() <= 3.0 * se);
        assert_eq!(r.pathwise_violations, 0);
    }
}
