//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid configuration or arguments, 2 I/O
//! failure, 3 an embedded acceptance check failed.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use altseq::bellman::{compute_derivatives, compute_thresholds_with_limit, converge_xi, ThresholdFamily, ValueTable};
use altseq::cache::{self, CacheError, CacheStatus};
use altseq::chain::{coupling_experiment, ChainState, CouplingReport};
use altseq::config::{ConfigError, ConfigFileError, RunConfig};
use altseq::estimators::{
    clt_diagnostic, closeness_decreasing, estimate_sigma2_regenerative, estimate_sigma2_replication,
    estimate_sigma2_series, l2_closeness, selection_mean, Center, EstimatorReport, MEAN_RATE,
};
use altseq::policies::{mean_selection_check, run_policy, PolicyKind};
use altseq::report::{self, emit, fmt_sig, write_csv_rows, Format};
use altseq::rng::{replication_rng, uniform};
use altseq::verify::{all_passed, certify_all, certify_figure1, write_text_table, LemmaReport};

/// Published reference value of the variance constant, and its
/// standard error.
const REFERENCE_SIGMA2: f64 = 0.3096;
const REFERENCE_SIGMA2_SE: f64 = 6.19e-4;

#[derive(Parser)]
#[command(name = "altseq", version, about = "Optimal on-line alternating subsequence selection")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    grid_h: Option<f64>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[arg(long, global = true)]
    reps: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    tol_xi: Option<f64>,
    #[arg(long, global = true)]
    max_lag: Option<usize>,
    #[arg(long, global = true)]
    series_chain_len: Option<usize>,
    #[arg(long, global = true)]
    regen_len: Option<usize>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    format: Option<Format>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate v_0..v_n (cached) and summarize v_n(0).
    Values,
    /// Threshold curves g_1..g_10 and g_inf, and the fixed points.
    Thresholds {
        /// Emit y over [0, 1] instead of [0, 0.35].
        #[arg(long)]
        full_range: bool,
    },
    /// Mean selection count of a policy.
    Simulate {
        #[arg(long, value_enum, default_value_t = PolicyArg::Optimal)]
        policy: PolicyArg,
        /// Level for the fixed-threshold policy.
        #[arg(long, default_value_t = 0.25)]
        c: f64,
        /// Write the path of replication 0 as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Estimate the variance constant.
    Sigma2 {
        #[arg(long, value_enum, default_value_t = MethodArg::Replication)]
        method: MethodArg,
        /// Policy for the replication method.
        #[arg(long, value_enum, default_value_t = PolicyArg::Limit)]
        policy: PolicyArg,
    },
    /// Coupling-time experiment for the limiting chain.
    Coupling {
        #[arg(long, default_value_t = 0.5)]
        z0_x: f64,
        #[arg(long, default_value_t = 0.0)]
        z0_y: f64,
    },
    /// Normality of the standardized selection count.
    Clt {
        #[arg(long, value_enum, default_value_t = PolicyArg::Limit)]
        policy: PolicyArg,
        /// Defaults to dp-value for the optimal policy, asymptotic otherwise.
        #[arg(long, value_enum)]
        center: Option<CenterArg>,
        #[arg(long, default_value_t = REFERENCE_SIGMA2)]
        sigma2: f64,
        /// Write the standardized samples as CSV.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Certify the structural properties of the computed tables.
    Verify,
    /// Variance of the optimal-minus-limit selection difference over n.
    Closeness {
        #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
        ladder: Vec<usize>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Optimal,
    Limit,
    Fixed,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Replication,
    Regenerative,
    Series,
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CenterArg {
    DpValue,
    Asymptotic,
}

enum Failure {
    Config(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Io(_) => 2,
        }
    }
}

macro_rules! config_failure {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Config(e.to_string())
            }
        }
    )*};
}

config_failure!(
    ConfigError,
    altseq::bellman::BellmanError,
    altseq::estimators::EstimatorError,
    altseq::policies::PolicyError
);

impl From<CacheError> for Failure {
    fn from(e: CacheError) -> Self {
        match e {
            CacheError::Bellman(b) => b.into(),
            other => Failure::Io(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

#[derive(Serialize)]
struct Check {
    name: String,
    passed: bool,
    detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'static str,
    config: &'a RunConfig,
    passed: bool,
    checks: Vec<Check>,
    result: T,
}

struct Output {
    buf: Vec<u8>,
    passed: bool,
}

fn enveloped<T: Serialize>(
    command: &'static str,
    cfg: &RunConfig,
    checks: Vec<Check>,
    result: T,
) -> Result<Output, Failure> {
    let passed = checks.iter().all(|c| c.passed);
    let env = Envelope {
        command,
        config: cfg,
        passed,
        checks,
        result,
    };
    let mut buf = Vec::new();
    emit(&mut buf, cfg.output_format, &env)?;
    Ok(Output { buf, passed })
}

fn resolve_config(g: &Global) -> Result<RunConfig, Failure> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::from_file(p).map_err(|e| match e {
            ConfigFileError::Io(..) => Failure::Io(e.to_string()),
            ConfigFileError::Parse(p) => p.into(),
        })?,
        None => RunConfig::default(),
    };
    if let Some(v) = g.grid_h {
        cfg.grid_h = v;
    }
    if let Some(v) = g.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = g.reps {
        cfg.reps = v;
    }
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = g.tol_xi {
        cfg.tol_xi = v;
    }
    if let Some(v) = g.max_lag {
        cfg.max_lag = v;
    }
    if let Some(v) = g.series_chain_len {
        cfg.series_chain_len = v;
    }
    if let Some(v) = g.regen_len {
        cfg.regen_len = v;
    }
    if let Some(v) = &g.cache_dir {
        cfg.cache_dir = v.clone();
    }
    if let Some(v) = g.format {
        cfg.output_format = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn limit_xi(cfg: &RunConfig) -> Result<f64, Failure> {
    let (xi, k) = converge_xi(cfg.grid()?, cfg.tol_xi)?;
    log::info!("xi = {xi} after {k} steps");
    Ok(xi)
}

fn value_table(cfg: &RunConfig, n: usize) -> Result<ValueTable, Failure> {
    let grid = cfg.grid()?;
    let (vt, status) = cache::load_or_compute(&cfg.cache_dir, grid, n)?;
    match status {
        CacheStatus::Hit => log::info!("value table h={} n={n} read from cache", grid.step()),
        CacheStatus::Computed => log::info!("value table h={} n={n} computed and cached", grid.step()),
    }
    Ok(vt)
}

fn tables(cfg: &RunConfig, n: usize) -> Result<(ValueTable, ThresholdFamily), Failure> {
    let vt = value_table(cfg, n)?;
    let tf = compute_thresholds_with_limit(&vt, limit_xi(cfg)?)?;
    Ok((vt, tf))
}

#[derive(Serialize)]
struct ValuesSummary {
    h: f64,
    horizon: usize,
    v_n0: f64,
    offset: f64,
    offset_min: f64,
    offset_max: f64,
}

fn cmd_values(cfg: &RunConfig) -> Result<Output, Failure> {
    let vt = value_table(cfg, cfg.horizon)?;
    let n = cfg.horizon;
    let offsets: Vec<f64> = (1..=n).map(|k| vt.mean_selections(k) - MEAN_RATE * k as f64).collect();
    let summary = ValuesSummary {
        h: cfg.grid_h,
        horizon: n,
        v_n0: vt.mean_selections(n),
        offset: offsets[n - 1],
        offset_min: offsets.iter().copied().fold(f64::INFINITY, f64::min),
        offset_max: offsets.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    enveloped("values", cfg, Vec::new(), summary)
}

#[derive(Serialize)]
struct ThresholdSummary {
    xi_limit: f64,
    xi: Vec<f64>,
    figure: LemmaReport,
}

fn cmd_thresholds(cfg: &RunConfig, full_range: bool) -> Result<Output, Failure> {
    let n = cfg.horizon.max(report::FIGURE_CURVES);
    let (_, tf) = tables(cfg, n)?;
    let figure = certify_figure1(&tf);
    if cfg.output_format == Format::Csv {
        let mut buf = Vec::new();
        report::write_threshold_csv(&mut buf, &tf, full_range)?;
        return Ok(Output {
            buf,
            passed: figure.passed,
        });
    }
    let checks = vec![check("figure_threshold_curves", figure.passed, figure.note.clone())];
    let summary = ThresholdSummary {
        xi_limit: tf.xi_limit(),
        xi: tf.xis().to_vec(),
        figure,
    };
    enveloped("thresholds", cfg, checks, summary)
}

fn cmd_simulate(cfg: &RunConfig, policy: PolicyArg, c: f64, trace: Option<&PathBuf>) -> Result<Output, Failure> {
    let n = cfg.horizon;
    let owned;
    let (kind, report, checks) = match policy {
        PolicyArg::Optimal => {
            owned = tables(cfg, n)?;
            let r = mean_selection_check(&owned.0, &owned.1, n, cfg.reps, cfg.seed)?;
            let z = r.diagnostics["z_score"];
            let chk = check("mean_matches_dp_value", z.abs() <= 3.0, format!("z = {}", fmt_sig(z)));
            (PolicyKind::Optimal(&owned.1), r, vec![chk])
        }
        PolicyArg::Limit => {
            let kind = PolicyKind::Limit { xi: limit_xi(cfg)? };
            (kind, selection_mean(&kind, n, cfg.reps, cfg.seed)?, Vec::new())
        }
        PolicyArg::Fixed => {
            let kind = PolicyKind::FixedThreshold { c };
            (kind, selection_mean(&kind, n, cfg.reps, cfg.seed)?, Vec::new())
        }
    };
    if let Some(path) = trace {
        let mut rng = replication_rng(cfg.seed, 0);
        let run = run_policy(&kind, n, (0..n).map(|_| uniform(&mut rng)), true)?;
        let mut f = std::fs::File::create(path)?;
        run.write_trace_csv(&mut f)?;
    }
    enveloped("simulate", cfg, checks, report)
}

#[derive(Serialize)]
struct Reference {
    value: f64,
    std_error: f64,
}

#[derive(Serialize)]
struct Sigma2Result {
    estimates: Vec<EstimatorReport>,
    reference: Reference,
}

fn cmd_sigma2(cfg: &RunConfig, method: MethodArg, policy: PolicyArg) -> Result<Output, Failure> {
    let xi = limit_xi(cfg)?;
    let mut estimates = Vec::new();
    if matches!(method, MethodArg::Replication | MethodArg::All) {
        let r = match policy {
            PolicyArg::Optimal => {
                let (_, tf) = tables(cfg, cfg.horizon)?;
                estimate_sigma2_replication(cfg.horizon, cfg.reps, &PolicyKind::Optimal(&tf), cfg.seed)?
            }
            PolicyArg::Limit => estimate_sigma2_replication(cfg.horizon, cfg.reps, &PolicyKind::Limit { xi }, cfg.seed)?,
            PolicyArg::Fixed => {
                return Err(Failure::Config("sigma2 supports the optimal and limit policies".into()))
            }
        };
        estimates.push(r);
    }
    if matches!(method, MethodArg::Regenerative | MethodArg::All) {
        estimates.push(estimate_sigma2_regenerative(cfg.regen_len, xi, cfg.seed)?);
    }
    if matches!(method, MethodArg::Series | MethodArg::All) {
        estimates.push(estimate_sigma2_series(xi, cfg.max_lag, cfg.reps, cfg.series_chain_len, cfg.seed)?);
    }
    let mut checks: Vec<Check> = estimates
        .iter()
        .map(|e| {
            let lo = e.estimate - 3.0 * e.std_error;
            check("positive", lo > 0.0, format!("{:?}: estimate - 3 se = {}", e.method, fmt_sig(lo)))
        })
        .collect();
    for (i, a) in estimates.iter().enumerate() {
        for b in &estimates[i + 1..] {
            checks.push(check(
                "methods_agree",
                a.agrees_with(b),
                format!("{:?} vs {:?}: {} vs {}", a.method, b.method, fmt_sig(a.estimate), fmt_sig(b.estimate)),
            ));
        }
    }
    let result = Sigma2Result {
        estimates,
        reference: Reference {
            value: REFERENCE_SIGMA2,
            std_error: REFERENCE_SIGMA2_SE,
        },
    };
    enveloped("sigma2", cfg, checks, result)
}

fn cmd_coupling(cfg: &RunConfig, z0: ChainState) -> Result<Output, Failure> {
    let xi = limit_xi(cfg)?;
    if !z0.is_valid(xi) {
        return Err(Failure::Config(format!("start ({}, {}) outside the state space", z0.x, z0.y)));
    }
    let r: CouplingReport = coupling_experiment(z0, cfg.reps, xi, cfg.seed);
    let checks = vec![
        check("tail_within_bands", r.tail_within_bands, format!("{} lags", r.tail.len())),
        check("paths_merge", r.pathwise_violations == 0, format!("{} violations", r.pathwise_violations)),
        check(
            "mean_is_geometric",
            (r.mean_nu - 1.0 / xi).abs() <= 3.0 * r.mean_nu_se,
            format!("{} vs {}", fmt_sig(r.mean_nu), fmt_sig(1.0 / xi)),
        ),
    ];
    if cfg.output_format == Format::Csv {
        let mut buf = Vec::new();
        write_csv_rows(
            &mut buf,
            &["ell", "empirical", "theoretical", "half_width"],
            r.tail.iter().map(|t| {
                vec![
                    t.ell.to_string(),
                    fmt_sig(t.empirical),
                    fmt_sig(t.theoretical),
                    fmt_sig(t.half_width),
                ]
            }),
        )?;
        return Ok(Output {
            buf,
            passed: checks.iter().all(|c| c.passed),
        });
    }
    enveloped("coupling", cfg, checks, r)
}

fn cmd_clt(
    cfg: &RunConfig,
    policy: PolicyArg,
    center: Option<CenterArg>,
    sigma2: f64,
    samples: Option<&PathBuf>,
) -> Result<Output, Failure> {
    let n = cfg.horizon;
    let owned;
    let (kind, centre) = match policy {
        PolicyArg::Optimal => {
            owned = tables(cfg, n)?;
            let c = match center.unwrap_or(CenterArg::DpValue) {
                CenterArg::DpValue => Center::DpValue(owned.0.mean_selections(n)),
                CenterArg::Asymptotic => Center::Asymptotic,
            };
            (PolicyKind::Optimal(&owned.1), c)
        }
        PolicyArg::Limit => {
            if center == Some(CenterArg::DpValue) {
                return Err(Failure::Config("dp-value centering needs the optimal policy".into()));
            }
            (PolicyKind::Limit { xi: limit_xi(cfg)? }, Center::Asymptotic)
        }
        PolicyArg::Fixed => return Err(Failure::Config("clt supports the optimal and limit policies".into())),
    };
    let d = clt_diagnostic(n, cfg.reps, &kind, centre, sigma2, cfg.seed)?;
    if let Some(path) = samples {
        let mut f = std::fs::File::create(path)?;
        d.write_csv(&mut f)?;
    }
    let checks = vec![check(
        "ks_below_critical",
        d.passes(),
        format!("{} < {}", fmt_sig(d.ks_to_normal), fmt_sig(d.ks_critical_1pct)),
    )];
    enveloped("clt", cfg, checks, d)
}

#[derive(Serialize)]
struct VerifyResult {
    claims: Vec<LemmaReport>,
    figure: LemmaReport,
}

fn cmd_verify(cfg: &RunConfig) -> Result<Output, Failure> {
    let (vt, tf) = tables(cfg, cfg.horizon)?;
    let dt = compute_derivatives(&vt, &tf)?;
    let claims = certify_all(&vt, &tf, &dt);
    let figure = certify_figure1(&tf);
    let passed = all_passed(&claims) && (tf.horizon() < 10 || figure.passed);
    let mut buf = Vec::new();
    match cfg.output_format {
        Format::Text => {
            write_text_table(&mut buf, &claims)?;
            write_text_table(&mut buf, std::slice::from_ref(&figure))?;
        }
        Format::Csv => write_csv_rows(
            &mut buf,
            &["lemma_id", "passed", "worst_violation", "worst_location", "tolerance_used", "checked"],
            claims.iter().chain([&figure]).map(|r| {
                vec![
                    r.lemma_id.clone(),
                    r.passed.to_string(),
                    fmt_sig(r.worst_violation),
                    r.worst_location.clone(),
                    fmt_sig(r.tolerance_used),
                    r.checked.to_string(),
                ]
            }),
        )?,
        Format::Json => {
            let checks = claims
                .iter()
                .chain([&figure])
                .map(|r| check(&r.lemma_id, r.passed, fmt_sig(r.worst_violation)))
                .collect();
            return enveloped("verify", cfg, checks, VerifyResult { claims, figure });
        }
    }
    Ok(Output { buf, passed })
}

fn cmd_closeness(cfg: &RunConfig, ladder: &[usize]) -> Result<Output, Failure> {
    let top = ladder.iter().copied().max().ok_or_else(|| Failure::Config("empty ladder".into()))?;
    let (_, tf) = tables(cfg, top)?;
    let rows = l2_closeness(ladder, cfg.reps, &tf, tf.xi_limit(), cfg.seed)?;
    let checks = vec![check("decreasing", closeness_decreasing(&rows), format!("{} rungs", rows.len()))];
    if cfg.output_format == Format::Csv {
        let mut buf = Vec::new();
        write_csv_rows(
            &mut buf,
            &["n", "reps", "mean_delta", "var_delta_over_n", "std_error"],
            rows.iter().map(|r| {
                vec![
                    r.n.to_string(),
                    r.reps.to_string(),
                    fmt_sig(r.mean_delta),
                    fmt_sig(r.var_delta_over_n),
                    fmt_sig(r.std_error),
                ]
            }),
        )?;
        return Ok(Output {
            buf,
            passed: checks.iter().all(|c| c.passed),
        });
    }
    enveloped("closeness", cfg, checks, rows)
}

fn run(cli: &Cli) -> Result<Output, Failure> {
    let cfg = resolve_config(&cli.global)?;
    if let Some(t) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Values => cmd_values(&cfg),
        Command::Thresholds { full_range } => cmd_thresholds(&cfg, *full_range),
        Command::Simulate { policy, c, trace } => cmd_simulate(&cfg, *policy, *c, trace.as_ref()),
        Command::Sigma2 { method, policy } => cmd_sigma2(&cfg, *method, *policy),
        Command::Coupling { z0_x, z0_y } => cmd_coupling(&cfg, ChainState { x: *z0_x, y: *z0_y }),
        Command::Clt {
            policy,
            center,
            sigma2,
            samples,
        } => cmd_clt(&cfg, *policy, *center, *sigma2, samples.as_ref()),
        Command::Verify => cmd_verify(&cfg),
        Command::Closeness { ladder } => cmd_closeness(&cfg, ladder),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let out = match run(&cli) {
        Ok(o) => o,
        Err(f) => {
            let (Failure::Config(m) | Failure::Io(m)) = &f;
            eprintln!("error: {m}");
            return ExitCode::from(f.code());
        }
    };
    let written = match &cli.global.out {
        Some(p) => std::fs::write(p, &out.buf).map_err(|e| format!("{}: {e}", p.display())),
        None => std::io::stdout().lock().write_all(&out.buf).map_err(|e| e.to_string()),
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    if out.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}
