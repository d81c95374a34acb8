//! Command-line experiments for the sigma-antithetic MLMC estimator.
//!
//! Commands: rates | noise | estimate | clt | ablation | complexity |
//! models. Settings resolve as CLI flag > config-file key > default;
//! each command writes a JSON document plus plot-ready CSVs into the
//! output directory and embeds the resolved configuration, so a rerun
//! with the same inputs reproduces every byte.
//!
//! Exit codes: 0 success, 2 configuration error, 3 simulation/runtime
//! error.

mod config;
mod output;

use clap::{Args, Parser, Subcommand};
use config::{
    parse_n_grid, parse_permutation, parse_weight_family, validate_power_of_m, FileConfig,
    ResolvedConfig,
};
use output::{ensure_out_dir, g17, write_csv, write_json};
use serde::Serialize;
use sigma_mlmc::limitlaw::{
    clt_report, noise_variance_report, sigma_ablation, strong_rate_report, ErrorFunctional,
};
use sigma_mlmc::mlmc::{
    estimate, plan_levels, theoretical_cost, weight_condition_report, LevelPlan, WeightKind,
};
use sigma_mlmc::model::{build_model, build_payoff, commutativity_defect, ModelParams, MODEL_IDS};
use sigma_mlmc::noise::{sample_grid, write_grid_csv, Permutation, Purpose, StreamKey};
use sigma_mlmc::scheme::{coupled_triple, write_trajectories_csv};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<sigma_mlmc::Error> for CliError {
    fn from(e: sigma_mlmc::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

#[derive(Parser)]
#[command(
    name = "sigma-mlmc",
    about = "Sigma-antithetic multilevel Monte Carlo experiments for SDEs",
    version
)]
struct Cli {
    /// Flat TOML config file; CLI flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for all random streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for JSON/CSV artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (results are independent of this).
    #[arg(long, global = true, env = "SIGMA_MLMC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Strong convergence rates of the coupling errors U and V.
    Rates(RatesArgs),
    /// Variances and independence of the triangular noise arrays.
    Noise(NoiseArgs),
    /// One sigma-antithetic MLMC estimate with per-level statistics.
    Estimate(EstimateArgs),
    /// Normality of the estimator over repeated independent runs.
    Clt(CltArgs),
    /// Permutation ablation of the n-scaled average-error variance.
    Ablation(AblationArgs),
    /// Cost growth of the weight families over a resolution sweep.
    Complexity(ComplexityArgs),
    /// List the built-in models.
    Models,
}

#[derive(Args)]
struct ModelOpts {
    /// Registry id: clark-cameron | additive-2d | trig-2d | gbm-1d.
    #[arg(long)]
    model: Option<String>,
    /// Initial state override, comma-separated.
    #[arg(long, value_delimiter = ',')]
    x0: Option<Vec<f64>>,
    /// gbm-1d drift coefficient.
    #[arg(long)]
    mu: Option<f64>,
    /// gbm-1d diffusion coefficient.
    #[arg(long = "sigma-coeff")]
    sigma_coeff: Option<f64>,
    /// additive-2d drift vector, comma-separated.
    #[arg(long, value_delimiter = ',')]
    drift: Option<Vec<f64>>,
    /// additive-2d diffusion matrix (row-major), comma-separated.
    #[arg(long, value_delimiter = ',')]
    gmat: Option<Vec<f64>>,
}

#[derive(Args)]
struct RatesArgs {
    #[command(flatten)]
    model: ModelOpts,
    #[arg(long)]
    m: Option<usize>,
    /// Comma list (8,16,32) or exponent range (2^3..2^8).
    #[arg(long = "n-grid")]
    n_grid: Option<String>,
    #[arg(long = "R")]
    replicates: Option<u64>,
    /// Within-cell permutation (1-based images); default reversal.
    #[arg(long)]
    sigma: Option<String>,
    /// Measure sup over coarse times instead of the terminal value.
    #[arg(long)]
    sup: bool,
    /// Also dump the coupled trajectories of one replicate.
    #[arg(long)]
    dump_paths: bool,
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "R")]
    replicates: Option<u64>,
    /// Also dump the first sampled grid as CSV.
    #[arg(long)]
    dump_grid: bool,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    model: ModelOpts,
    /// Payoff id: x1 | x2 | x2sq | const.
    #[arg(long)]
    payoff: Option<String>,
    /// Value of the const payoff.
    #[arg(long)]
    payoff_const: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight family: unit | inv_ell | inv_ell_log | optimal.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    a0: Option<f64>,
    /// Global sample-size shrink factor for desk-scale runs.
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Args)]
struct CltArgs {
    #[command(flatten)]
    estimate: EstimateArgs,
    #[arg(long = "R")]
    replicates: Option<u64>,
}

#[derive(Args)]
struct AblationArgs {
    #[command(flatten)]
    model: ModelOpts,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long = "n-grid")]
    n_grid: Option<String>,
    #[arg(long = "R")]
    replicates: Option<u64>,
    /// Semicolon-separated permutations, e.g. "3,2,1;2,3,1".
    #[arg(long)]
    perms: Option<String>,
}

#[derive(Args)]
struct ComplexityArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long = "n-grid")]
    n_grid: Option<String>,
    /// Comma-separated weight families to sweep.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Moment order of the weight-condition table.
    #[arg(long)]
    p: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            eprintln!("run `sigma-mlmc --help` for usage");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            ExitCode::from(3)
        }
    }
}

/// Settings shared by every command, after merging file and flags.
struct Base {
    file: FileConfig,
    seed: u64,
    out: PathBuf,
    threads: usize,
}

impl Base {
    fn resolved(&self, command: &str) -> ResolvedConfig {
        ResolvedConfig {
            command: command.to_string(),
            seed: self.seed,
            out: self.out.clone(),
            threads: self.threads,
            model: None,
            payoff: None,
            payoff_const: None,
            m: None,
            n: None,
            n_grid: None,
            q: None,
            alpha: None,
            weights: None,
            a0: None,
            kappa: None,
            replicates: None,
            p: None,
            sigma: None,
            perms: None,
            sup_functional: None,
            model_params: ModelParams::default(),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let threads = cli
        .threads
        .or(file.threads)
        .unwrap_or_else(num_threads_default);
    if threads == 0 {
        return Err(CliError::Config("threads must be positive".into()));
    }
    // Results are independent of the pool size by construction; a
    // repeated build_global (e.g. in tests) is harmless.
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .ok();
    let base = Base {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        out: cli
            .out
            .clone()
            .or_else(|| file.out.clone())
            .unwrap_or_else(|| PathBuf::from("out")),
        threads,
        file,
    };
    ensure_out_dir(&base.out)?;
    match cli.command {
        Command::Rates(args) => cmd_rates(&base, args),
        Command::Noise(args) => cmd_noise(&base, args),
        Command::Estimate(args) => cmd_estimate(&base, args),
        Command::Clt(args) => cmd_clt(&base, args),
        Command::Ablation(args) => cmd_ablation(&base, args),
        Command::Complexity(args) => cmd_complexity(&base, args),
        Command::Models => cmd_models(&base),
    }
}

fn num_threads_default() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn resolve_model_params(base: &Base, opts: &ModelOpts) -> ModelParams {
    ModelParams {
        x0: opts.x0.clone().or_else(|| base.file.x0.clone()),
        mu: opts.mu.or(base.file.mu),
        sigma: opts.sigma_coeff.or(base.file.sigma_coeff),
        drift: opts.drift.clone().or_else(|| base.file.drift.clone()),
        gmat: opts.gmat.clone().or_else(|| base.file.gmat.clone()),
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Config(format!("missing required setting --{flag}")))
}

fn resolve_n_grid(
    cli_value: &Option<String>,
    file_value: &Option<Vec<usize>>,
) -> Result<Option<Vec<usize>>, CliError> {
    if let Some(text) = cli_value {
        return Ok(Some(parse_n_grid(text)?));
    }
    Ok(file_value.clone())
}

fn cmd_rates(base: &Base, args: RatesArgs) -> Result<(), CliError> {
    let model_id = required(
        args.model.model.clone().or_else(|| base.file.model.clone()),
        "model",
    )?;
    let params = resolve_model_params(base, &args.model);
    let model = build_model(&model_id, &params)?;
    let m = required(args.m.or(base.file.m), "m")?;
    let n_grid = required(resolve_n_grid(&args.n_grid, &base.file.n_grid)?, "n-grid")?;
    validate_power_of_m(&n_grid, m)?;
    let replicates = required(args.replicates.or(base.file.replicates), "R")?;
    let sigma_text = args.sigma.clone().or_else(|| base.file.sigma.clone());
    let sigma = match &sigma_text {
        Some(text) => parse_permutation(text)?,
        None => Permutation::reversal(m),
    };
    let sup = args.sup || base.file.sup_functional.unwrap_or(false);
    let functional = if sup {
        ErrorFunctional::SupCoarseTimes
    } else {
        ErrorFunctional::Terminal
    };

    let report = strong_rate_report(&model, m, &n_grid, replicates, &sigma, functional, base.seed)?;

    let mut config = base.resolved("rates");
    config.model = Some(model_id);
    config.model_params = params;
    config.m = Some(m);
    config.n_grid = Some(n_grid.clone());
    config.replicates = Some(replicates);
    config.sigma = Some(sigma.label());
    config.sup_functional = Some(sup);

    #[derive(Serialize)]
    struct Doc<'a> {
        config: &'a ResolvedConfig,
        #[serde(flatten)]
        report: &'a sigma_mlmc::limitlaw::RateReport,
    }
    write_json(
        &base.out,
        "rates.json",
        &Doc {
            config: &config,
            report: &report,
        },
    )?;
    write_csv(
        &base.out,
        "rates.csv",
        "n,rms_u,rms_v",
        report
            .points
            .iter()
            .map(|p| format!("{},{},{}", p.n, g17(p.rms_u), g17(p.rms_v))),
    )?;
    if args.dump_paths {
        let key = StreamKey::new(base.seed, Purpose::Rates, n_grid[0] as i64, 0);
        let triple = coupled_triple(&model, &key, n_grid[0], m, &sigma, true)?;
        let path = base.out.join("paths.csv");
        let mut buf = Vec::new();
        write_trajectories_csv(&triple, &mut buf)
            .map_err(|e| CliError::Runtime(format!("cannot render paths.csv: {e}")))?;
        std::fs::write(&path, buf)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }

    let describe = |name: &str, slope: &Option<sigma_mlmc::limitlaw::SlopeFit>, degenerate: bool| {
        if degenerate {
            println!("{name}: coupling error is zero to rounding; no slope fitted");
        } else if let Some(fit) = slope {
            println!("{name}: slope {:+.4} +/- {:.4}", fit.slope, fit.std_err);
        }
    };
    println!(
        "strong rates for {} (m = {m}, sigma = {}):",
        report.model, report.sigma
    );
    for p in &report.points {
        println!(
            "  n = {:6}: rms|U| = {:.6e}, rms|V| = {:.6e}",
            p.n, p.rms_u, p.rms_v
        );
    }
    describe("U", &report.u_slope, report.u_degenerate);
    describe("V", &report.v_slope, report.v_degenerate);
    Ok(())
}

fn cmd_noise(base: &Base, args: NoiseArgs) -> Result<(), CliError> {
    let m = required(args.m.or(base.file.m), "m")?;
    let q = required(args.q.or(base.file.q), "q")?;
    let n = required(args.n.or(base.file.n), "n")?;
    let replicates = required(args.replicates.or(base.file.replicates), "R")?;

    let report = noise_variance_report(base.seed, n, m, q, replicates)?;

    let mut config = base.resolved("noise");
    config.m = Some(m);
    config.q = Some(q);
    config.n = Some(n);
    config.replicates = Some(replicates);

    #[derive(Serialize)]
    struct Doc<'a> {
        config: &'a ResolvedConfig,
        #[serde(flatten)]
        report: &'a sigma_mlmc::limitlaw::NoiseVarianceReport,
    }
    write_json(
        &base.out,
        "noise.json",
        &Doc {
            config: &config,
            report: &report,
        },
    )?;
    write_csv(
        &base.out,
        "noise.csv",
        "component,empirical_var,theoretical_var,stderr",
        report.variance_rows.iter().map(|r| {
            format!(
                "{},{},{},{}",
                r.component,
                g17(r.empirical),
                g17(r.theoretical),
                g17(r.std_err)
            )
        }),
    )?;
    if args.dump_grid {
        let key = StreamKey::new(base.seed, Purpose::Noise, n as i64, 0);
        let grid = sample_grid(&key, n, m, q)?;
        let path = base.out.join("grid.csv");
        let mut buf = Vec::new();
        write_grid_csv(&grid, &mut buf)
            .map_err(|e| CliError::Runtime(format!("cannot render grid.csv: {e}")))?;
        std::fs::write(&path, buf)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }

    println!("noise arrays at n = {n}, m = {m}, q = {q}, R = {replicates}:");
    let worst = report
        .variance_rows
        .iter()
        .map(|r| (r.empirical - r.theoretical).abs())
        .fold(0.0f64, f64::max);
    println!("  max |empirical - theoretical| variance deviation: {worst:.5}");
    println!(
        "  max |cross covariance| = {:.5} (bound {:.5})",
        report.max_abs_covariance, report.covariance_bound
    );
    println!("  max |z3| over grids = {:.3e}", report.max_abs_z3);
    Ok(())
}

#[derive(Serialize)]
struct PlanEcho {
    n: usize,
    m: usize,
    alpha: f64,
    family: String,
    kappa: f64,
    a0: f64,
    weights: Vec<f64>,
    sample_sizes: Vec<u64>,
    clamped: bool,
    violates_condition_w: bool,
}

impl PlanEcho {
    fn new(plan: &LevelPlan) -> Self {
        PlanEcho {
            n: plan.n,
            m: plan.m,
            alpha: plan.alpha,
            family: plan.family.kind.name().to_string(),
            kappa: plan.kappa,
            a0: plan.family.a0,
            weights: plan.weights.clone(),
            sample_sizes: plan.sample_sizes.clone(),
            clamped: plan.clamped,
            violates_condition_w: plan.violates_condition_w,
        }
    }
}

struct EstimateSetup {
    model: sigma_mlmc::SdeModel,
    payoff: sigma_mlmc::Payoff,
    plan: LevelPlan,
    config: ResolvedConfig,
}

fn resolve_estimate(
    base: &Base,
    args: &EstimateArgs,
    command: &str,
) -> Result<EstimateSetup, CliError> {
    let model_id = required(
        args.model.model.clone().or_else(|| base.file.model.clone()),
        "model",
    )?;
    let params = resolve_model_params(base, &args.model);
    let model = build_model(&model_id, &params)?;
    let payoff_id = required(
        args.payoff.clone().or_else(|| base.file.payoff.clone()),
        "payoff",
    )?;
    let payoff_const = args.payoff_const.or(base.file.payoff_const).unwrap_or(1.0);
    let payoff = build_payoff(&payoff_id, model.dim_state(), payoff_const)?;
    let n = required(args.n.or(base.file.n), "n")?;
    let m = required(args.m.or(base.file.m), "m")?;
    let alpha = args.alpha.or(base.file.alpha).unwrap_or(1.0);
    let weights_name = args
        .weights
        .clone()
        .or_else(|| base.file.weights.clone())
        .unwrap_or_else(|| "unit".to_string());
    let a0 = args.a0.or(base.file.a0).unwrap_or(1.0);
    let family = parse_weight_family(&weights_name, a0)?;
    let kappa = args.kappa.or(base.file.kappa).unwrap_or(1.0);
    let plan = plan_levels(n, m, alpha, family, kappa)?;

    let mut config = base.resolved(command);
    config.model = Some(model_id);
    config.model_params = params;
    config.payoff = Some(payoff_id);
    config.payoff_const = Some(payoff_const);
    config.n = Some(n);
    config.m = Some(m);
    config.alpha = Some(alpha);
    config.weights = Some(weights_name);
    config.a0 = Some(a0);
    config.kappa = Some(kappa);
    Ok(EstimateSetup {
        model,
        payoff,
        plan,
        config,
    })
}

fn cmd_estimate(base: &Base, args: EstimateArgs) -> Result<(), CliError> {
    let setup = resolve_estimate(base, &args, "estimate")?;
    let result = estimate(&setup.model, &setup.payoff, &setup.plan, base.seed)?;

    #[derive(Serialize)]
    struct LevelRow {
        ell: usize,
        #[serde(rename = "N")]
        samples: u64,
        mean: f64,
        variance: f64,
        cost_units: f64,
    }
    #[derive(Serialize)]
    struct Doc<'a> {
        config: &'a ResolvedConfig,
        estimate: f64,
        std_err: f64,
        levels: Vec<LevelRow>,
        total_cost_units: f64,
        paper_cost_units: f64,
        seed: u64,
        condition_w_violated: bool,
        plan: PlanEcho,
    }
    let doc = Doc {
        config: &setup.config,
        estimate: result.estimate,
        std_err: result.std_err(),
        levels: result
            .levels
            .iter()
            .map(|s| LevelRow {
                ell: s.ell,
                samples: s.samples,
                mean: s.mean,
                variance: s.variance,
                cost_units: s.cost_units,
            })
            .collect(),
        total_cost_units: result.total_cost_units,
        paper_cost_units: result.paper_cost_units,
        seed: base.seed,
        condition_w_violated: setup.plan.violates_condition_w,
        plan: PlanEcho::new(&setup.plan),
    };
    write_json(&base.out, "mlmc.json", &doc)?;
    write_csv(
        &base.out,
        "mlmc.csv",
        "ell,N,mean,variance,cost_units",
        result.levels.iter().map(|s| {
            format!(
                "{},{},{},{},{}",
                s.ell,
                s.samples,
                g17(s.mean),
                g17(s.variance),
                g17(s.cost_units)
            )
        }),
    )?;

    if setup.plan.violates_condition_w {
        eprintln!(
            "warning: the optimal weight family violates the CLT weight condition; \
             the estimator is still unbiased but the normal limit is not guaranteed"
        );
    }
    println!(
        "estimate = {:+.6e} +/- {:.3e} (1 se), N = {:?}",
        result.estimate,
        result.std_err(),
        setup.plan.sample_sizes
    );
    println!(
        "cost: paper {} units, total {} units",
        result.paper_cost_units, result.total_cost_units
    );
    Ok(())
}

fn cmd_clt(base: &Base, args: CltArgs) -> Result<(), CliError> {
    let replicates = required(args.replicates.or(base.file.replicates), "R")?;
    let setup = resolve_estimate(base, &args.estimate, "clt")?;
    let mut config = setup.config;
    config.replicates = Some(replicates);
    let report = clt_report(
        &setup.model,
        &setup.payoff,
        setup.plan.n,
        setup.plan.m,
        setup.plan.alpha,
        setup.plan.family,
        setup.plan.kappa,
        replicates,
        base.seed,
    )?;

    #[derive(Serialize)]
    struct Doc<'a> {
        config: &'a ResolvedConfig,
        #[serde(flatten)]
        report: &'a sigma_mlmc::limitlaw::CltReport,
    }
    write_json(
        &base.out,
        "clt.json",
        &Doc {
            config: &config,
            report: &report,
        },
    )?;
    write_csv(
        &base.out,
        "clt.csv",
        "replicate,qhat,standardized",
        report
            .qhat
            .iter()
            .zip(&report.standardized)
            .enumerate()
            .map(|(i, (q, z))| format!("{},{},{}", i, g17(*q), g17(*z))),
    )?;
    println!(
        "clt: R = {}, KS statistic = {:.5}, p = {:.5}",
        replicates, report.ks_statistic, report.p_value
    );
    println!(
        "  scaled level variances m^(2(l-1)) Var_l = {:?}",
        report.scaled_level_variances
    );
    println!(
        "  variance proxy V/kappa = {:.6e}, observed n^(2a) Var(qhat) = {:.6e}",
        report.v_proxy_over_kappa, report.scaled_qhat_variance
    );
    Ok(())
}

fn cmd_ablation(base: &Base, args: AblationArgs) -> Result<(), CliError> {
    let model_id = required(
        args.model.model.clone().or_else(|| base.file.model.clone()),
        "model",
    )?;
    let params = resolve_model_params(base, &args.model);
    let model = build_model(&model_id, &params)?;
    let m = required(args.m.or(base.file.m), "m")?;
    let n_grid = required(resolve_n_grid(&args.n_grid, &base.file.n_grid)?, "n-grid")?;
    validate_power_of_m(&n_grid, m)?;
    let replicates = required(args.replicates.or(base.file.replicates), "R")?;
    let perm_texts: Vec<String> = match (&args.perms, &base.file.perms) {
        (Some(text), _) => text.split(';').map(str::to_string).collect(),
        (None, Some(list)) => list.clone(),
        (None, None) => default_ablation_perms(m),
    };
    let perms: Vec<Permutation> = perm_texts
        .iter()
        .map(|t| parse_permutation(t))
        .collect::<Result<_, sigma_mlmc::Error>>()?;

    let report = sigma_ablation(&model, m, &perms, &n_grid, replicates, base.seed)?;

    let mut config = base.resolved("ablation");
    config.model = Some(model_id);
    config.model_params = params;
    config.m = Some(m);
    config.n_grid = Some(n_grid);
    config.replicates = Some(replicates);
    config.perms = Some(report.series.iter().map(|s| s.sigma.clone()).collect());

    #[derive(Serialize)]
    struct Doc<'a> {
        config: &'a ResolvedConfig,
        #[serde(flatten)]
        report: &'a sigma_mlmc::limitlaw::AblationReport,
    }
    write_json(
        &base.out,
        "ablation.json",
        &Doc {
            config: &config,
            report: &report,
        },
    )?;
    write_csv(
        &base.out,
        "ablation.csv",
        "sigma,n,scaled_variance",
        report.series.iter().flat_map(|s| {
            s.cells
                .iter()
                .map(move |c| format!("\"{}\",{},{}", s.sigma, c.n, g17(c.scaled_variance)))
                .collect::<Vec<_>>()
        }),
    )?;
    println!("sigma ablation (m = {m}, n^2 Var of terminal V):");
    for s in &report.series {
        let cells: Vec<String> = s
            .cells
            .iter()
            .map(|c| format!("n={}: {:.4e}", c.n, c.scaled_variance))
            .collect();
        let tag = if s.strictly_decreasing { " [reversal]" } else { "" };
        println!("  {}{}: {}", s.sigma, tag, cells.join(", "));
    }
    if let Some(minimal) = report.reversal_minimal_at_largest_n {
        println!(
            "  reversal minimal at largest n: {}",
            if minimal { "yes" } else { "no" }
        );
    }
    Ok(())
}

/// Reversal plus a cyclic shift and a transposition: the simplest
/// non-decreasing competitors.
fn default_ablation_perms(m: usize) -> Vec<String> {
    let join = |v: Vec<usize>| {
        v.iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let reversal: Vec<usize> = (1..=m).rev().collect();
    let mut cycle: Vec<usize> = (2..=m).collect();
    cycle.push(1);
    let mut swap: Vec<usize> = (1..=m).collect();
    if m >= 2 {
        swap.swap(0, 1);
    }
    vec![join(reversal), join(cycle), join(swap)]
}

fn cmd_complexity(base: &Base, args: ComplexityArgs) -> Result<(), CliError> {
    let m = required(args.m.or(base.file.m), "m")?;
    let n_grid = required(resolve_n_grid(&args.n_grid, &base.file.n_grid)?, "n-grid")?;
    validate_power_of_m(&n_grid, m)?;
    let alpha = args.alpha.or(base.file.alpha).unwrap_or(1.0);
    let kappa = args.kappa.or(base.file.kappa).unwrap_or(1.0);
    let p = args.p.or(base.file.p).unwrap_or(4.0);
    let weights_text = args
        .weights
        .clone()
        .or_else(|| base.file.weights.clone())
        .unwrap_or_else(|| "unit,inv_ell,inv_ell_log,optimal".to_string());
    let kinds: Vec<WeightKind> = weights_text
        .split(',')
        .map(|t| WeightKind::parse(t.trim()))
        .collect::<Result<_, sigma_mlmc::Error>>()?;

    #[derive(Serialize)]
    struct SweepRow {
        family: String,
        n: usize,
        levels: usize,
        paper_cost: f64,
        total_cost: f64,
        cost_over_n2: f64,
    }
    let mut rows = Vec::new();
    for kind in &kinds {
        let family = parse_weight_family(kind.name(), 1.0)?;
        for &n in &n_grid {
            let plan = plan_levels(n, m, alpha, family, kappa)?;
            let paper = plan.paper_cost();
            rows.push(SweepRow {
                family: kind.name().to_string(),
                n,
                levels: plan.levels,
                paper_cost: paper,
                total_cost: theoretical_cost(&plan),
                cost_over_n2: paper / (n as f64 * n as f64),
            });
        }
    }
    let unit_family = parse_weight_family("unit", 1.0)?;
    let level_grid: Vec<usize> = n_grid
        .iter()
        .map(|&n| plan_levels(n, m, alpha, unit_family, kappa).map(|p| p.levels))
        .collect::<Result<_, sigma_mlmc::Error>>()?;
    let condition_reports: Vec<_> = kinds
        .iter()
        .map(|kind| {
            weight_condition_report(parse_weight_family(kind.name(), 1.0)?, m, p, &level_grid)
        })
        .collect::<Result<_, sigma_mlmc::Error>>()?;

    let mut config = base.resolved("complexity");
    config.m = Some(m);
    config.n_grid = Some(n_grid);
    config.alpha = Some(alpha);
    config.kappa = Some(kappa);
    config.p = Some(p);
    config.weights = Some(weights_text);

    #[derive(Serialize)]
    struct Doc<'a> {
        config: &'a ResolvedConfig,
        sweep: &'a [SweepRow],
        weight_condition: &'a [sigma_mlmc::mlmc::WeightConditionReport],
    }
    write_json(
        &base.out,
        "complexity.json",
        &Doc {
            config: &config,
            sweep: &rows,
            weight_condition: &condition_reports,
        },
    )?;
    write_csv(
        &base.out,
        "complexity.csv",
        "family,n,paper_cost,cost_over_n2",
        rows.iter().map(|r| {
            format!(
                "{},{},{},{}",
                r.family,
                r.n,
                g17(r.paper_cost),
                g17(r.cost_over_n2)
            )
        }),
    )?;
    write_csv(
        &base.out,
        "weight_condition.csv",
        "family,levels,weight_sum,lyapunov_ratio",
        condition_reports.iter().flat_map(|rep| {
            let family = rep.family.kind.name().to_string();
            rep.rows
                .iter()
                .map(move |row| {
                    format!(
                        "{},{},{},{}",
                        family,
                        row.levels,
                        g17(row.weight_sum),
                        g17(row.lyapunov_ratio)
                    )
                })
                .collect::<Vec<_>>()
        }),
    )?;

    println!("complexity sweep (m = {m}, alpha = {alpha}, kappa = {kappa}):");
    for kind in &kinds {
        let series: Vec<&SweepRow> = rows.iter().filter(|r| r.family == kind.name()).collect();
        if let (Some(first), Some(last)) = (series.first(), series.last()) {
            println!(
                "  {:12} cost/n^2: {:.2} at n={} -> {:.2} at n={}",
                kind.name(),
                first.cost_over_n2,
                first.n,
                last.cost_over_n2,
                last.n
            );
        }
    }
    Ok(())
}

fn cmd_models(base: &Base) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct ModelRow {
        id: String,
        dim_state: usize,
        dim_noise: usize,
        x0: Vec<f64>,
        commutativity_defect_at_x0: f64,
        jacobian: sigma_mlmc::model::JacobianKind,
    }
    let mut rows = Vec::new();
    for id in MODEL_IDS {
        let model = build_model(id, &ModelParams::default())?;
        let defect = commutativity_defect(&model, model.initial_state())?;
        rows.push(ModelRow {
            id: id.to_string(),
            dim_state: model.dim_state(),
            dim_noise: model.dim_noise(),
            x0: model.initial_state().to_vec(),
            commutativity_defect_at_x0: defect,
            jacobian: model.jacobian_kind(),
        });
    }
    let config = base.resolved("models");
    #[derive(Serialize)]
    struct Doc<'a> {
        config: &'a ResolvedConfig,
        models: &'a [ModelRow],
    }
    write_json(
        &base.out,
        "models.json",
        &Doc {
            config: &config,
            models: &rows,
        },
    )?;
    println!("{:<14} {:>2} {:>2}  {:<22} defect(x0)", "id", "d", "q", "x0");
    for r in &rows {
        println!(
            "{:<14} {:>2} {:>2}  {:<22} {:.4}",
            r.id,
            r.dim_state,
            r.dim_noise,
            format!("{:?}", r.x0),
            r.commutativity_defect_at_x0
        );
    }
    Ok(())
}
