//! Estimators for the mean rate `μ` and the variance constant `σ²` of the
//! selection count, the CLT diagnostic, and the L² closeness of the optimal
//! and limiting policies.
//!
//! Three routes to `σ²`:
//! - replication: `Var(A_n) / n` over independent runs;
//! - regenerative: i.i.d. blocks between draws `X_i >= 1 - ξ` of one long
//!   run of `π_∞`;
//! - covariance series: `Var_γ f + 2 Σ_{ℓ>=1} Cov_γ(f(Z_1), f(Z_{1+ℓ}))`
//!   from stationary-started chains, truncated at `max_lag`.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::bellman::ThresholdFamily;
use crate::chain::{kernel_step, stationary_draw};
use crate::policies::{count_selections, run_coupled_steps, PolicyError, PolicyKind};
use crate::rng::{replicate, replication_rng, uniform};
use crate::stats::{compensated_sum, ks_critical_1pct, ks_distance, normal_cdf, CompensatedSum, Moments, Z95};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

/// `2 - sqrt 2`, the asymptotic selection rate.
pub const MEAN_RATE: f64 = 2.0 - std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Replication,
    Regenerative,
    CovarianceSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorReport {
    pub method: Method,
    pub estimate: f64,
    pub std_error: f64,
    pub ci95: (f64, f64),
    pub reps_or_lags: usize,
    pub params: BTreeMap<String, Value>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl EstimatorReport {
    pub fn new(
        method: Method,
        estimate: f64,
        std_error: f64,
        reps_or_lags: usize,
        params: BTreeMap<String, Value>,
        diagnostics: BTreeMap<String, f64>,
    ) -> Self {
        let std_error = std_error.max(0.0);
        Self {
            method,
            estimate,
            std_error,
            ci95: (estimate - Z95 * std_error, estimate + Z95 * std_error),
            reps_or_lags,
            params,
            diagnostics,
        }
    }

    /// Whether `|estimate - other| <= 3 (se + other_se) + slack`.
    pub fn agrees_with(&self, other: &EstimatorReport) -> bool {
        let slack = self.diagnostics.get("truncation_bound").copied().unwrap_or(0.0)
            + other.diagnostics.get("truncation_bound").copied().unwrap_or(0.0);
        (self.estimate - other.estimate).abs() <= 3.0 * (self.std_error + other.std_error) + slack
    }
}

fn policy_params(policy: &PolicyKind<'_>, params: &mut BTreeMap<String, Value>) {
    match *policy {
        PolicyKind::Optimal(tf) => {
            params.insert("policy".into(), "optimal".into());
            params.insert("h".into(), tf.grid().step().into());
        }
        PolicyKind::Limit { xi } => {
            params.insert("policy".into(), "limit".into());
            params.insert("xi".into(), xi.into());
        }
        PolicyKind::FixedThreshold { c } => {
            params.insert("policy".into(), "fixed_threshold".into());
            params.insert("c".into(), c.into());
        }
    }
}

/// Selection counts of `reps` independent runs.
pub fn simulate_counts(policy: &PolicyKind<'_>, n: usize, reps: usize, seed: u64) -> Result<Vec<f64>> {
    policy.validate(n)?;
    Ok(replicate(reps, seed, |_, rng| {
        count_selections(policy, n, || uniform(rng)) as f64
    }))
}

/// Mean selection count of `policy` over `reps` runs; `mean_rate` in the
/// diagnostics is the mean divided by `n`.
pub fn selection_mean(policy: &PolicyKind<'_>, n: usize, reps: usize, seed: u64) -> Result<EstimatorReport> {
    if reps < 2 {
        return Err(EstimatorError::Invalid("need at least 2 replications".into()));
    }
    let counts = simulate_counts(policy, n, reps, seed)?;
    let m = Moments::from_slice(&counts);
    let nf = n as f64;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("mean_rate".into(), m.mean / nf);
    diagnostics.insert("mean_rate_se".into(), m.std_error_of_mean() / nf);
    diagnostics.insert("sample_variance".into(), m.variance);
    diagnostics.insert("asymptotic_mean".into(), MEAN_RATE * nf);
    let mut params = BTreeMap::new();
    params.insert("n".into(), n.into());
    params.insert("reps".into(), reps.into());
    params.insert("seed".into(), seed.into());
    policy_params(policy, &mut params);
    Ok(EstimatorReport::new(Method::Replication, m.mean, m.std_error_of_mean(), reps, params, diagnostics))
}

/// `σ² ≈ Var(A_n) / n` from `reps` independent runs; the standard error
/// uses the sample fourth central moment.
pub fn estimate_sigma2_replication(
    n: usize,
    reps: usize,
    policy: &PolicyKind<'_>,
    seed: u64,
) -> Result<EstimatorReport> {
    if reps < 1000 {
        return Err(EstimatorError::Invalid(format!("replication needs reps >= 1000, got {reps}")));
    }
    let counts = simulate_counts(policy, n, reps, seed)?;
    Ok(replication_report(n, reps, policy, seed, &counts))
}

fn replication_report(
    n: usize,
    reps: usize,
    policy: &PolicyKind<'_>,
    seed: u64,
    counts: &[f64],
) -> EstimatorReport {
    let m = Moments::from_slice(counts);
    let nf = n as f64;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("mean".into(), m.mean);
    diagnostics.insert("mean_se".into(), m.std_error_of_mean());
    diagnostics.insert("mean_rate".into(), m.mean / nf);
    diagnostics.insert("mean_rate_se".into(), m.std_error_of_mean() / nf);
    diagnostics.insert("excess_kurtosis".into(), m.excess_kurtosis());
    let mut params = BTreeMap::new();
    params.insert("n".into(), n.into());
    params.insert("reps".into(), reps.into());
    params.insert("seed".into(), seed.into());
    policy_params(policy, &mut params);
    EstimatorReport::new(
        Method::Replication,
        m.variance / nf,
        m.std_error_of_variance() / nf,
        reps,
        params,
        diagnostics,
    )
}

/// Regenerative estimator from one run of `π_∞` over `n` observations.
///
/// Blocks end at each `X_i >= 1 - ξ`; every block starts with a state below
/// `ξ`, so the pairs `(U_t, ℓ_t)` (selections, length) are i.i.d. With
/// `μ̂ = ΣU / Σℓ` and `W_t = U_t - μ̂ ℓ_t`, `σ̂² = ΣW² / Σℓ`.
pub fn estimate_sigma2_regenerative(n: usize, xi: f64, seed: u64) -> Result<EstimatorReport> {
    PolicyKind::Limit { xi }.validate(n)?;
    let mut rng = replication_rng(seed, 0);
    let level = 1.0 - xi;
    let mut blocks: Vec<(u32, u32)> = Vec::with_capacity((n as f64 * xi * 1.1) as usize + 16);
    let (mut y, mut sel, mut len) = (0.0f64, 0u32, 0u32);
    for _ in 0..n {
        let x = uniform(&mut rng);
        len += 1;
        if x >= xi.max(y) {
            y = 1.0 - x;
            sel += 1;
        }
        if x >= level {
            blocks.push((sel, len));
            sel = 0;
            len = 0;
        }
    }
    let t = blocks.len();
    if t < 100 {
        return Err(EstimatorError::InsufficientData(format!(
            "{t} complete regeneration blocks (need 100)"
        )));
    }
    let tf = t as f64;
    let sum_u = compensated_sum(blocks.iter().map(|b| b.0 as f64));
    let sum_l = compensated_sum(blocks.iter().map(|b| b.1 as f64));
    let mu = sum_u / sum_l;
    let mean_len = sum_l / tf;
    let w2: Vec<f64> = blocks
        .iter()
        .map(|&(u, l)| {
            let w = u as f64 - mu * l as f64;
            w * w
        })
        .collect();
    let sum_w2 = compensated_sum(w2.iter().copied());
    let sigma2 = sum_w2 / sum_l;
    // Delta method for the ratio ΣW² / Σℓ.
    let q: Vec<f64> = blocks
        .iter()
        .zip(&w2)
        .map(|(&(_, l), &w2)| w2 - sigma2 * l as f64)
        .collect();
    let q_var = compensated_sum(q.iter().map(|v| v * v)) / (tf - 1.0);
    let se = (q_var / tf).sqrt() / mean_len;
    let mu_se = (sum_w2 / (tf - 1.0) / tf).sqrt() / mean_len;
    let lens: Vec<f64> = blocks.iter().map(|b| b.1 as f64).collect();
    let lm = Moments::from_slice(&lens);

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("blocks".into(), tf);
    diagnostics.insert("mu_hat".into(), mu);
    diagnostics.insert("mu_se".into(), mu_se);
    diagnostics.insert("mean_block_length".into(), lm.mean);
    diagnostics.insert("mean_block_length_se".into(), lm.std_error_of_mean());
    diagnostics.insert("mean_block_selections".into(), sum_u / tf);
    let mut params = BTreeMap::new();
    params.insert("n".into(), n.into());
    params.insert("xi".into(), xi.into());
    params.insert("seed".into(), seed.into());
    Ok(EstimatorReport::new(Method::Regenerative, sigma2, se, t, params, diagnostics))
}

/// Truncation bound `4 Σ_{ℓ > L} (1-ξ)^ℓ = 4 (1-ξ)^{L+1} / ξ`.
pub fn series_truncation_bound(xi: f64, max_lag: usize) -> f64 {
    4.0 * (1.0 - xi).powi(max_lag as i32 + 1) / xi
}

/// Covariance-series estimator from `reps` stationary-started chains of
/// `chain_len` steps each. Lag products are pooled over all chains; the
/// standard error is a delete-one-chain jackknife.
pub fn estimate_sigma2_series(
    xi: f64,
    max_lag: usize,
    reps: usize,
    chain_len: usize,
    seed: u64,
) -> Result<EstimatorReport> {
    if reps < 2 {
        return Err(EstimatorError::Invalid("series estimator needs at least 2 chains".into()));
    }
    if chain_len <= max_lag {
        return Err(EstimatorError::Invalid(format!(
            "chain length {chain_len} must exceed max_lag {max_lag}"
        )));
    }
    PolicyKind::Limit { xi }.validate(1)?;
    let lags = max_lag + 1;
    // Per chain: [Σf, P_0, P_1, ..., P_L] with P_ℓ = Σ_i f_i f_{i+ℓ}.
    let per_chain: Vec<Vec<u64>> = replicate(reps, seed, |_, rng| {
        let mut acc = vec![0u64; lags + 1];
        let mut ring = vec![false; lags];
        let mut z = stationary_draw(rng, xi);
        for i in 0..chain_len {
            let f = z.selects(xi);
            ring[i % lags] = f;
            if f {
                acc[0] += 1;
                for ell in 0..lags.min(i + 1) {
                    if ring[(i - ell) % lags] {
                        acc[1 + ell] += 1;
                    }
                }
            }
            z = kernel_step(z, uniform(rng), xi);
        }
        acc
    });

    let totals: Vec<u64> = (0..=lags)
        .map(|c| per_chain.iter().map(|a| a[c]).sum())
        .collect();
    let estimate_from = |tot: &[f64], chains: f64| -> (f64, f64) {
        let mu = tot[0] / (chains * chain_len as f64);
        let mu2 = mu * mu;
        let mut s = CompensatedSum::new();
        for ell in 0..lags {
            let c = tot[1 + ell] / (chains * (chain_len - ell) as f64) - mu2;
            s.add(if ell == 0 { c } else { 2.0 * c });
        }
        (s.value(), mu)
    };
    let tot_f: Vec<f64> = totals.iter().map(|&v| v as f64).collect();
    let r = reps as f64;
    let (sigma2, mu) = estimate_from(&tot_f, r);

    let jack: Vec<f64> = per_chain
        .iter()
        .map(|a| {
            let t: Vec<f64> = tot_f.iter().zip(a).map(|(t, &v)| t - v as f64).collect();
            estimate_from(&t, r - 1.0).0
        })
        .collect();
    let jm = compensated_sum(jack.iter().copied()) / r;
    let se = ((r - 1.0) / r * compensated_sum(jack.iter().map(|v| (v - jm) * (v - jm)))).sqrt();

    let lag0 = tot_f[1] / (r * chain_len as f64) - mu * mu;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("mu_hat".into(), mu);
    diagnostics.insert("lag0".into(), lag0);
    diagnostics.insert("truncation_bound".into(), series_truncation_bound(xi, max_lag));
    for ell in 1..lags.min(4) {
        let c = tot_f[1 + ell] / (r * (chain_len - ell) as f64) - mu * mu;
        diagnostics.insert(format!("cov_lag{ell}"), c);
    }
    let mut params = BTreeMap::new();
    params.insert("xi".into(), xi.into());
    params.insert("max_lag".into(), max_lag.into());
    params.insert("reps".into(), reps.into());
    params.insert("chain_len".into(), chain_len.into());
    params.insert("seed".into(), seed.into());
    Ok(EstimatorReport::new(Method::CovarianceSeries, sigma2, se, max_lag, params, diagnostics))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum Center {
    /// `v_n(0)`, the exact mean of the optimal policy.
    DpValue(f64),
    /// `(2 - sqrt 2) n`.
    Asymptotic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltDiagnostic {
    pub n: usize,
    pub reps: usize,
    pub center: f64,
    pub sigma2: f64,
    #[serde(skip)]
    pub standardized: Vec<f64>,
    pub ks_to_normal: f64,
    pub ks_critical_1pct: f64,
    pub skew: f64,
    pub excess_kurtosis: f64,
}

impl CltDiagnostic {
    pub fn passes(&self) -> bool {
        self.ks_to_normal < self.ks_critical_1pct
    }

    /// One standardized value per line under a `z` header.
    pub fn write_csv(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "z")?;
        for z in &self.standardized {
            writeln!(out, "{}", crate::report::fmt_sig(*z))?;
        }
        Ok(())
    }
}

/// Standardizes `reps` selection counts by `(A - center) / sqrt(n σ²)` and
/// compares them with the standard normal.
pub fn clt_diagnostic(
    n: usize,
    reps: usize,
    policy: &PolicyKind<'_>,
    center: Center,
    sigma2: f64,
    seed: u64,
) -> Result<CltDiagnostic> {
    if sigma2.is_nan() || sigma2 <= 0.0 {
        return Err(EstimatorError::Invalid(format!("sigma2 must be positive, got {sigma2}")));
    }
    if reps < 1000 {
        return Err(EstimatorError::Invalid(format!("CLT diagnostic needs reps >= 1000, got {reps}")));
    }
    let counts = simulate_counts(policy, n, reps, seed)?;
    let c = match center {
        Center::DpValue(v) => v,
        Center::Asymptotic => MEAN_RATE * n as f64,
    };
    let scale = (n as f64 * sigma2).sqrt();
    let standardized: Vec<f64> = counts.iter().map(|a| (a - c) / scale).collect();
    let m = Moments::from_slice(&standardized);
    Ok(CltDiagnostic {
        n,
        reps,
        center: c,
        sigma2,
        ks_to_normal: ks_distance(&standardized, normal_cdf),
        ks_critical_1pct: ks_critical_1pct(reps),
        skew: m.skewness(),
        excess_kurtosis: m.excess_kurtosis(),
        standardized,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosenessRow {
    pub n: usize,
    pub reps: usize,
    pub mean_delta: f64,
    pub var_delta_over_n: f64,
    pub std_error: f64,
}

/// For each `n`, the variance over `reps` shared-stream runs of
/// `A_{n-2}(π*_n) - A_{n-2}(π_∞)`, divided by `n`.
pub fn l2_closeness(
    n_list: &[usize],
    reps: usize,
    tf: &ThresholdFamily,
    xi: f64,
    seed: u64,
) -> Result<Vec<ClosenessRow>> {
    if reps < 2 {
        return Err(EstimatorError::Invalid("need at least 2 replications".into()));
    }
    n_list
        .iter()
        .enumerate()
        .map(|(rung, &n)| {
            if n < 3 {
                return Err(EstimatorError::Invalid(format!("horizon {n} < 3")));
            }
            PolicyKind::Optimal(tf).validate(n)?;
            let rung_seed = seed.wrapping_add(rung as u64);
            let deltas: Vec<std::result::Result<f64, PolicyError>> = replicate(reps, rung_seed, |_, rng| {
                let xs = (0..n - 2).map(|_| uniform(rng));
                let (opt, lim) = run_coupled_steps(tf, xi, n, n - 2, xs, false)?;
                Ok(opt.selections as f64 - lim.selections as f64)
            });
            let deltas = deltas.into_iter().collect::<std::result::Result<Vec<_>, _>>()?;
            let m = Moments::from_slice(&deltas);
            let nf = n as f64;
            Ok(ClosenessRow {
                n,
                reps,
                mean_delta: m.mean,
                var_delta_over_n: m.variance / nf,
                std_error: m.std_error_of_variance() / nf,
            })
        })
        .collect()
}

/// Whether `var/n` is non-increasing along the ladder within two combined
/// standard errors per rung.
pub fn closeness_decreasing(rows: &[ClosenessRow]) -> bool {
    rows.windows(2).all(|w| {
        let se = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        w[1].var_delta_over_n <= w[0].var_delta_over_n + 2.0 * se
    })
}
