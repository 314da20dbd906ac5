//! Acceptance suite. One line per criterion on stdout; exits non-zero if
//! any criterion fails. Every tolerance is pinned below.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use altseq::bellman::{
    compute_derivatives, compute_thresholds, compute_thresholds_with_limit, compute_values, converge_xi,
    ThresholdFamily, ValueTable,
};
use altseq::chain::{coupling_experiment, ChainState};
use altseq::estimators::{
    clt_diagnostic, closeness_decreasing, estimate_sigma2_regenerative, estimate_sigma2_replication,
    estimate_sigma2_series, l2_closeness, Center, EstimatorReport, MEAN_RATE,
};
use altseq::numerics::GridSpec;
use altseq::policies::{mean_selection_check, PolicyKind};
use altseq::verify::{certify_all, certify_figure1, LemmaReport};

const TOL_XI: f64 = 1e-12;
const REFERENCE_SIGMA2: f64 = 0.3096;
const REFERENCE_SE: f64 = 6.19e-4;
/// Confidence multiplier used throughout (3 standard errors).
const Z: f64 = 3.0;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn grid(h: f64) -> GridSpec {
    GridSpec::new(h).unwrap()
}

/// Tables at h = 1e-3 up to horizon 10^4, shared by several criteria.
fn tables() -> &'static (ValueTable, ThresholdFamily) {
    static T: OnceLock<(ValueTable, ThresholdFamily)> = OnceLock::new();
    T.get_or_init(|| {
        let vt = compute_values(grid(1e-3), 10_000).unwrap();
        let tf = compute_thresholds(&vt, TOL_XI).unwrap();
        (vt, tf)
    })
}

fn xi_limit(h: f64) -> f64 {
    converge_xi(grid(h), TOL_XI).unwrap().0
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_err(f: &altseq::numerics::SampledFunction, exact: impl Fn(f64) -> f64) -> f64 {
    f.grid()
        .xs()
        .zip(f.values())
        .map(|(x, v)| (v - exact(x)).abs())
        .fold(0.0, f64::max)
}

fn v3_exact(y: f64) -> f64 {
    if y <= 1.0 / 6.0 {
        1.5 * (1.0 - y * y) + 3f64.powf(-1.5) * (2.0 + 3.0 * y * y).powf(1.5)
    } else {
        0.5 * (1.0 - y) * (4.0 + 5.0 * y + 2.0 * y * y)
    }
}

fn c1_value_oracles() -> Outcome {
    let h = 1e-3;
    let start = Instant::now();
    let vt = compute_values(grid(h), 3).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let errs = [
        max_err(vt.v(1), |y| 1.0 - y),
        max_err(vt.v(2), |y| 1.5 * (1.0 - y * y)),
        max_err(vt.v(3), v3_exact),
    ];
    let tol = 10.0 * h * h;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    check(
        worst <= tol && elapsed < 1.0,
        format!("max error v1..v3 = {worst:.3e} (tol {tol:.0e}), {elapsed:.3}s"),
    )
}

fn c2_threshold_oracles() -> Outcome {
    let g = grid(1e-3);
    let vt = compute_values(g, 3).unwrap();
    let tf = compute_thresholds(&vt, TOL_XI).unwrap();
    let err = max_err(tf.g(3), |y| (1.0 - (2.0 / 3.0 + y * y).sqrt()).max(y));
    let xi3 = (tf.xi(3) - 1.0 / 6.0).abs();
    let ok = err <= 10.0 * g.step() && xi3 <= g.tol_root() && tf.xi(1) == 0.0 && tf.xi(2) == 0.0;
    check(
        ok,
        format!(
            "g3 error {err:.3e} (tol {:.0e}), |xi3 - 1/6| = {xi3:.3e} (tol {:.0e}), xi1 = {}, xi2 = {}",
            10.0 * g.step(),
            g.tol_root(),
            tf.xi(1),
            tf.xi(2)
        ),
    )
}

fn offsets(vt: &ValueTable, n: usize) -> Vec<f64> {
    (1..=n).map(|k| vt.v(k).at(0) - MEAN_RATE * k as f64).collect()
}

/// Least-squares slope of `ys` against their index.
fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

fn c3_mean_asymptotics() -> Outcome {
    const OFFSET_BOUND: f64 = 0.5;
    const REFINEMENT_TOL: f64 = 1e-3;
    let coarse = offsets(&compute_values(grid(1e-3), 2000).unwrap(), 2000);
    let fine = offsets(&compute_values(grid(1e-4), 200).unwrap(), 200);
    let sup = |xs: &[f64]| xs.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let bound_coarse = sup(&coarse);
    let bound_fine = sup(&fine);
    // Past the transient the offset only drifts by the discretization error.
    let trend = slope(&coarse[99..]);
    let trend_tol = 1e-3 * 1e-3;
    let refine = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let ok = bound_coarse <= OFFSET_BOUND
        && trend.abs() <= trend_tol
        && refine <= REFINEMENT_TOL
        && (bound_coarse - bound_fine).abs() <= REFINEMENT_TOL;
    check(
        ok,
        format!(
            "sup offset {bound_coarse:.6} (h=1e-3, n<=2000) vs {bound_fine:.6} (h=1e-4, n<=200); \
             offset(2000) = {:.6}; slope over n>=100 {trend:.2e}/step (tol {trend_tol:.0e}); \
             refinement gap {refine:.2e} (tol {REFINEMENT_TOL:.0e})",
            coarse[1999]
        ),
    )
}

fn c4_dp_vs_simulation() -> Outcome {
    let (vt, tf) = tables();
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, n) in [10usize, 100, 1000].into_iter().enumerate() {
        let r = mean_selection_check(vt, tf, n, 100_000, 40 + i as u64).map_err(|e| e.to_string())?;
        let dp = vt.mean_selections(n);
        let z = (r.estimate - dp) / r.std_error;
        ok &= z.abs() <= Z;
        lines.push(format!("n={n} mc {:.4} dp {dp:.4} z {z:+.2}", r.estimate));
    }
    check(ok, lines.join("; "))
}

fn c5_sigma2_reproduction() -> Outcome {
    let xi = xi_limit(1e-4);
    let limit = PolicyKind::Limit { xi };
    let full = estimate_sigma2_replication(10_000, 500_000, &limit, 5).map_err(|e| e.to_string())?;
    let combined = (full.std_error.powi(2) + REFERENCE_SE.powi(2)).sqrt();
    let z_full = (full.estimate - REFERENCE_SIGMA2) / combined;
    let ci = estimate_sigma2_replication(1_000, 50_000, &limit, 6).map_err(|e| e.to_string())?;
    let (_, tf) = tables();
    let opt = estimate_sigma2_replication(10_000, 50_000, &PolicyKind::Optimal(tf), 7).map_err(|e| e.to_string())?;
    let z_opt = (opt.estimate - REFERENCE_SIGMA2) / (opt.std_error.powi(2) + REFERENCE_SE.powi(2)).sqrt();
    let ok = z_full.abs() <= Z && (0.28..=0.34).contains(&ci.estimate) && z_opt.abs() <= Z;
    check(
        ok,
        format!(
            "limit n=1e4 reps=5e5: {:.5} +- {:.5} (z {z_full:+.2}); desk n=1e3 reps=5e4: {:.5}; \
             optimal n=1e4 reps=5e4 h=1e-3: {:.5} +- {:.5} (z {z_opt:+.2})",
            full.estimate, full.std_error, ci.estimate, opt.estimate, opt.std_error
        ),
    )
}

/// The three estimators at the scale used for cross-checks.
fn sigma2_methods() -> &'static [EstimatorReport; 3] {
    static R: OnceLock<[EstimatorReport; 3]> = OnceLock::new();
    R.get_or_init(|| {
        let xi = xi_limit(1e-3);
        [
            estimate_sigma2_replication(1_000, 50_000, &PolicyKind::Limit { xi }, 11).unwrap(),
            estimate_sigma2_regenerative(10_000_000, xi, 12).unwrap(),
            estimate_sigma2_series(xi, 40, 50_000, 2_000, 13).unwrap(),
        ]
    })
}

fn c6_cross_method() -> Outcome {
    let r = sigma2_methods();
    let mut ok = true;
    for i in 0..3 {
        for j in i + 1..3 {
            ok &= r[i].agrees_with(&r[j]);
        }
    }
    ok &= r.iter().all(|e| e.estimate - Z * e.std_error > 0.0);
    let parts: Vec<String> = r
        .iter()
        .map(|e| format!("{:?} {:.5} +- {:.5}", e.method, e.estimate, e.std_error))
        .collect();
    check(ok, parts.join("; "))
}

fn c7_mu() -> Outcome {
    let reg = &sigma2_methods()[1];
    let mu = reg.diagnostics["mu_hat"];
    let se = reg.diagnostics["mu_se"];
    let z = (mu - MEAN_RATE) / se;
    check(z.abs() <= Z, format!("mu_hat {mu:.6} +- {se:.6} vs {MEAN_RATE:.6} (z {z:+.2})"))
}

fn c8_coupling() -> Outcome {
    let xi = xi_limit(1e-3);
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, z0) in [ChainState { x: 0.0, y: 0.0 }, ChainState { x: 0.95, y: 1.0 - xi }]
        .into_iter()
        .enumerate()
    {
        let r = coupling_experiment(z0, 100_000, xi, 20 + i as u64);
        ok &= r.tail_within_bands && r.pathwise_violations == 0;
        lines.push(format!(
            "z0=({}, {:.3}): mean nu {:.4} (1/xi {:.4}), bands {}, violations {}",
            z0.x,
            z0.y,
            r.mean_nu,
            1.0 / xi,
            r.tail_within_bands,
            r.pathwise_violations
        ));
    }
    check(ok, lines.join("; "))
}

fn verify_at(h: f64) -> Vec<LemmaReport> {
    let g = grid(h);
    let vt = compute_values(g, 50).unwrap();
    let tf = compute_thresholds_with_limit(&vt, xi_limit(h)).unwrap();
    let dt = compute_derivatives(&vt, &tf).unwrap();
    let mut r = certify_all(&vt, &tf, &dt);
    r.push(certify_figure1(&tf));
    r
}

fn c9_certification() -> Outcome {
    let coarse = verify_at(1e-3);
    let fine = verify_at(1e-4);
    let tol = 10.0 * 1e-3 * 1e-3;
    let mut ok = coarse.len() == fine.len();
    let mut failures = Vec::new();
    for (a, b) in coarse.iter().zip(&fine) {
        let within = a.lemma_id == "figure_threshold_curves" || a.worst_violation >= -tol;
        let good = a.passed && b.passed && a.lemma_id == b.lemma_id && within;
        if !good {
            failures.push(a.lemma_id.clone());
        }
        ok &= good;
    }
    let detail = if failures.is_empty() {
        format!("{} claims pass at h=1e-3 and h=1e-4 (horizon 50)", coarse.len())
    } else {
        format!("failing: {}", failures.join(", "))
    };
    check(ok, detail)
}

fn c10_clt() -> Outcome {
    let (vt, tf) = tables();
    let n = 10_000;
    let opt = clt_diagnostic(
        n,
        10_000,
        &PolicyKind::Optimal(tf),
        Center::DpValue(vt.mean_selections(n)),
        REFERENCE_SIGMA2,
        30,
    )
    .map_err(|e| e.to_string())?;
    let lim = clt_diagnostic(
        n,
        10_000,
        &PolicyKind::Limit { xi: tf.xi_limit() },
        Center::Asymptotic,
        REFERENCE_SIGMA2,
        31,
    )
    .map_err(|e| e.to_string())?;
    check(
        opt.passes() && lim.passes(),
        format!(
            "KS optimal {:.4}, limit {:.4} (1% critical {:.4})",
            opt.ks_to_normal, lim.ks_to_normal, opt.ks_critical_1pct
        ),
    )
}

fn c11_closeness() -> Outcome {
    let (_, tf) = tables();
    let rows = l2_closeness(&[100, 1_000, 10_000], 5_000, tf, tf.xi_limit(), 50).map_err(|e| e.to_string())?;
    let last = rows.last().unwrap().var_delta_over_n;
    let ok = closeness_decreasing(&rows) && last < 0.05 * REFERENCE_SIGMA2;
    let parts: Vec<String> = rows
        .iter()
        .map(|r| format!("n={} {:.2e} +- {:.1e}", r.n, r.var_delta_over_n, r.std_error))
        .collect();
    check(ok, format!("var/n: {}", parts.join(", ")))
}

fn run_cli(cache: &Path, threads: usize, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_altseq"))
        .args(["--seed", "9", "--cache-dir"])
        .arg(cache)
        .args(["--threads", &threads.to_string()])
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .map_err(|e| e.to_string())?;
    match out.status.code() {
        Some(0) | Some(3) => Ok(out.stdout),
        c => Err(format!("{args:?} exited {c:?}: {}", String::from_utf8_lossy(&out.stderr))),
    }
}

fn c12_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let small = ["--grid-h", "0.01", "--horizon", "40", "--reps", "2000"];
    let commands: [&[&str]; 13] = [
        &["values"],
        &["thresholds"],
        &["thresholds", "--full-range", "--format", "csv"],
        &["simulate", "--policy", "optimal"],
        &["simulate", "--policy", "fixed", "--c", "0.3"],
        &["sigma2", "--method", "replication"],
        &["sigma2", "--method", "regenerative", "--regen-len", "200000"],
        &["sigma2", "--method", "series", "--series-chain-len", "200"],
        &["coupling", "--format", "csv"],
        &["clt", "--policy", "optimal"],
        &["verify", "--format", "text"],
        &["closeness", "--ladder", "10,20,40"],
        &["values", "--format", "csv"],
    ];
    let mut differing = Vec::new();
    for cmd in commands {
        let args: Vec<&str> = small.iter().chain(cmd.iter()).copied().collect();
        let a = run_cli(dir.path(), 1, &args)?;
        let b = run_cli(dir.path(), 1, &args)?;
        let c = run_cli(dir.path(), 2, &args)?;
        if a.is_empty() || a != b || a != c {
            differing.push(cmd.join(" "));
        }
    }
    check(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} subcommand invocations byte-identical across reruns and --threads 1/2", commands.len())
        } else {
            format!("outputs differ for: {}", differing.join("; "))
        },
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("closed-form values", c1_value_oracles),
        ("threshold oracles", c2_threshold_oracles),
        ("mean asymptotics", c3_mean_asymptotics),
        ("dp vs simulation", c4_dp_vs_simulation),
        ("sigma2 reproduction", c5_sigma2_reproduction),
        ("sigma2 cross-method", c6_cross_method),
        ("mean rate", c7_mu),
        ("coupling law", c8_coupling),
        ("certification", c9_certification),
        ("clt diagnostic", c10_clt),
        ("l2 closeness", c11_closeness),
        ("determinism", c12_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (verdict, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {:>2} {verdict} {name} [{:.1}s]: {detail}",
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
