//! Command-line front end for the branching-in-random-environment library.
//!
//! Each subcommand computes one quantity of interest and emits two things: a
//! short human-readable summary on stderr and a machine report on stdout (or
//! into `--out`). The machine report is a schema-versioned JSON envelope by
//! default, or a flat CSV table with `--format csv`. Reports are
//! deterministic: the same model, configuration, and seed produce
//! byte-identical bytes at any worker count, and every reported number comes
//! with an uncertainty — a standard error for Monte Carlo estimates, a
//! truncation bracket or leak bound for exact finite-state computations, a
//! residual for eigendata.
//!
//! Exit codes: `0` success, `2` configuration or validation failure, `3`
//! numerical failure (no convergence, truncation too small, overflow), `4`
//! estimators that ran but produced no usable data.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mbpre_core::envmodel::{check_conditions, CheckConfig, EnvModel};
use mbpre_core::error::Error;
use mbpre_core::lyapunov::{survival_tilted, theta_spectrum, SpectrumConfig};
use mbpre_core::oracle::{
    build_chain, functional_equation_residual, limit_ratio_report, survival_series,
    yaglom_exact_from, FunctionalEqReport, TruncatedChain, YaglomData, YAGLOM_TOL,
};
use mbpre_core::qprocess::{
    build_qkernel, kstep_consistency, limit_checks, qstat, LimitCheckConfig, LimitReport,
    QStatReport,
};
use mbpre_core::simulate::{survival_mc, yaglom_mc, SurvivalEstimator};
use mbpre_core::spectral::perron_eig;
use mbpre_core::McEstimate;

mod report;
use report::{cell, emit, render_json, Csv};

const DEFAULT_HORIZON: usize = 30;
const DEFAULT_SAMPLES: usize = 100_000;
const DEFAULT_TRUNCATION: usize = 20;
const DEFAULT_GRID_PER_EDGE: usize = 11;
/// Tolerance of the annealed-mean eigendata extraction.
const SPECTRAL_TOL: f64 = 1e-13;
/// Rows of the ratio table are flagged when the truncation bracket is wider
/// than this fraction of its midpoint.
const RATIO_PRECISION: f64 = 1e-3;

#[derive(Parser)]
#[command(
    name = "mbpre",
    version,
    about = "Multitype branching processes in a random environment: admissibility checks, \
             decay spectra, survival asymptotics, conditional limit laws, and the size-biased chain"
)]
struct Cli {
    /// Model file (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    model: Option<PathBuf>,

    /// Base seed for every random stream.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Horizon in generations; for `eqy`, grid points per axis.
    #[arg(long, global = true, value_name = "INT")]
    n: Option<usize>,

    /// Largest tracked total population of the exact reference chain.
    #[arg(long, global = true, value_name = "K")]
    trunc: Option<usize>,

    /// Monte Carlo replica count.
    #[arg(long, global = true, value_name = "INT")]
    samples: Option<usize>,

    /// Comma-separated tilt exponents.
    #[arg(long, global = true, value_delimiter = ',', value_name = "a,b,c")]
    theta: Option<Vec<f64>>,

    /// Comma-separated start population, one count per type.
    #[arg(long, global = true, value_delimiter = ',', value_name = "z1,z2,...")]
    start: Option<Vec<u64>>,

    /// Write the machine report here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Machine report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Check the six admissibility conditions on the model.
    Validate,
    /// Perron eigendata of the annealed mean matrix.
    Spectral,
    /// Moment curve over the tilt grid, its slope at 1, and the regime label.
    Lyapunov,
    /// Survival probability at a horizon: exact bracket and three estimators.
    Survival,
    /// Conditional law of the population given survival: exact and empirical.
    Yaglom,
    /// Convergence of survival over rate^n to its predicted constant.
    Theorem1,
    /// The size-biased chain: stationary law, structure, and long-run checks.
    Qprocess,
    /// Residual of the limit law's one-step functional equation.
    Eqy,
}

/// A terminal failure with its exit code; `2` for configuration problems,
/// `3` for numerical ones, `4` for estimators starved of data.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Model(_) | Error::Domain(_) | Error::ResourceLimit(_) | Error::Io(_) => 2,
        Error::NoConvergence { .. }
        | Error::DegenerateProjection(_)
        | Error::TruncationTooSmall { .. }
        | Error::PopulationOverflow { .. }
        | Error::TruncationEscape { .. } => 3,
        Error::InsufficientData(_) => 4,
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure { code: exit_code(&err), message: err.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure { code: 2, message: format!("i/o error: {err}") }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

/// Resolved invocation: the loaded model plus defaulted knobs.
struct Ctx<'a> {
    cli: &'a Cli,
    model: EnvModel,
    model_name: String,
    seed: u64,
}

impl Ctx<'_> {
    fn n(&self, default: usize) -> usize {
        self.cli.n.unwrap_or(default)
    }

    fn trunc(&self) -> usize {
        self.cli.trunc.unwrap_or(DEFAULT_TRUNCATION)
    }

    fn samples(&self, default: usize) -> usize {
        self.cli.samples.unwrap_or(default)
    }

    fn theta(&self) -> Vec<f64> {
        self.cli.theta.clone().unwrap_or_else(|| vec![0.5, 1.0, 1.5, 2.0])
    }

    fn start(&self) -> Vec<u64> {
        self.cli.start.clone().unwrap_or_else(|| {
            let mut z = vec![0u64; self.model.p()];
            z[0] = 1;
            z
        })
    }

    /// Emits the machine report and notes the destination when it is a file.
    fn emit(&self, text: &str) -> Result<(), Failure> {
        emit(&self.cli.out, text)?;
        if let Some(path) = &self.cli.out {
            eprintln!("report written to {}", path.display());
        }
        Ok(())
    }

    fn render<P: Serialize, R: Serialize>(
        &self,
        command: &'static str,
        params: P,
        results: R,
    ) -> String {
        render_json(command, &self.model_name, self.seed, params, results)
    }
}

fn run(cli: &Cli) -> Result<ExitCode, Failure> {
    let model_path = cli
        .model
        .as_ref()
        .ok_or_else(|| Failure::usage("--model <PATH> is required"))?;
    let seed = cli.seed.ok_or_else(|| Failure::usage("--seed <U64> is required"))?;
    let model = EnvModel::from_json_file(model_path)?;
    let ctx = Ctx { cli, model, model_name: model_path.display().to_string(), seed };
    match cli.command {
        Command::Validate => cmd_validate(&ctx),
        Command::Spectral => cmd_spectral(&ctx),
        Command::Lyapunov => cmd_lyapunov(&ctx),
        Command::Survival => cmd_survival(&ctx),
        Command::Yaglom => cmd_yaglom(&ctx),
        Command::Theorem1 => cmd_theorem1(&ctx),
        Command::Qprocess => cmd_qprocess(&ctx),
        Command::Eqy => cmd_eqy(&ctx),
    }
}

fn flag(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

// --- validate ---------------------------------------------------------------

#[derive(Serialize)]
struct ValidateParams {
    theta_grid: Vec<f64>,
    epsilon: f64,
    h5_samples: usize,
    product_length: usize,
    grid_per_edge: usize,
    product_cap: usize,
}

fn cmd_validate(ctx: &Ctx) -> Result<ExitCode, Failure> {
    let defaults = CheckConfig::default();
    let cfg = CheckConfig {
        seed: ctx.seed,
        theta_grid: ctx.cli.theta.clone().unwrap_or(defaults.theta_grid.clone()),
        h5_samples: ctx.samples(defaults.h5_samples),
        ..defaults
    };
    let rep = check_conditions(&ctx.model, &cfg)?;

    eprintln!(
        "H1 {}  mean-norm tilt moments finite on the grid ({} values)",
        flag(rep.h1.pass),
        rep.h1.moments.len()
    );
    if rep.h2.falsified {
        eprintln!(
            "H2 FAIL  invariant union of subspaces: {}",
            rep.h2.witness.as_deref().unwrap_or("(witness missing)")
        );
    } else {
        eprintln!(
            "H2 PASS  no invariant proper union of subspaces among {} products",
            rep.h2.products_checked
        );
    }
    match rep.h3.gamma {
        Some(gamma) => eprintln!("H3 {}  entry-ratio bound gamma = {gamma:.6}", flag(rep.h3.pass)),
        None => eprintln!(
            "H3 FAIL  state {} has a mean-matrix zero",
            rep.h3.offending_state.map(|s| s.to_string()).unwrap_or_default()
        ),
    }
    eprintln!(
        "H4 {}  log-stretch delta = {:.6} from a product of length {} ({} products)",
        flag(rep.h4.pass),
        rep.h4.delta,
        rep.h4.witness_length,
        rep.h4.products_checked
    );
    eprintln!(
        "H5 OK    mixed-moment estimate {:.6} +/- {:.6} at epsilon = {} ({} samples, advisory)",
        rep.h5.estimate, rep.h5.stderr, rep.h5.epsilon, rep.h5.samples
    );
    if rep.h6.pass {
        eprintln!("H6 PASS  every offspring law puts mass on the empty litter");
    } else {
        for &(state, law) in &rep.h6.offending {
            eprintln!("H6 FAIL (state {state}, law {law}: no mass on the empty litter)");
        }
    }
    eprintln!("overall {}", flag(rep.pass));

    let pass = rep.pass;
    let params = ValidateParams {
        theta_grid: cfg.theta_grid.clone(),
        epsilon: cfg.epsilon,
        h5_samples: cfg.h5_samples,
        product_length: cfg.product_length,
        grid_per_edge: cfg.grid_per_edge,
        product_cap: cfg.product_cap,
    };
    let text = match ctx.cli.format {
        Format::Json => ctx.render("validate", params, &rep),
        Format::Csv => {
            let mut csv = Csv::new("condition,pass,detail");
            csv.row(format!("h1,{},moments={}", rep.h1.pass, rep.h1.moments.len()));
            csv.row(format!(
                "h2,{},products={}",
                !rep.h2.falsified,
                rep.h2.products_checked
            ));
            csv.row(format!(
                "h3,{},gamma={}",
                rep.h3.pass,
                rep.h3.gamma.map(|g| g.to_string()).unwrap_or_default()
            ));
            csv.row(format!(
                "h4,{},delta={};witness_length={}",
                rep.h4.pass, rep.h4.delta, rep.h4.witness_length
            ));
            csv.row(format!(
                "h5,advisory,estimate={};stderr={};epsilon={}",
                rep.h5.estimate, rep.h5.stderr, rep.h5.epsilon
            ));
            let offending: Vec<String> = rep
                .h6
                .offending
                .iter()
                .map(|(s, l)| format!("{s}|{l}"))
                .collect();
            csv.row(format!("h6,{},offending={}", rep.h6.pass, offending.join(";")));
            csv.row(format!("overall,{},", rep.pass));
            csv.finish()
        }
    };
    ctx.emit(&text)?;
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

// --- spectral ---------------------------------------------------------------

#[derive(Serialize)]
struct SpectralParams {
    tol: f64,
}

fn cmd_spectral(ctx: &Ctx) -> Result<ExitCode, Failure> {
    let mean = ctx.model.annealed_mean();
    let spec = perron_eig(&mean, SPECTRAL_TOL)?;

    eprintln!(
        "lambda = {:.12} ({} iterations, residuals {:.3e} / {:.3e})",
        spec.lambda, spec.iterations, spec.residual_right, spec.residual_left
    );
    eprintln!("right eigenvector U = {:?}", spec.right);
    eprintln!("left eigenvector  V = {:?}", spec.left);

    let text = match ctx.cli.format {
        Format::Json => ctx.render("spectral", SpectralParams { tol: SPECTRAL_TOL }, &spec),
        Format::Csv => {
            let mut csv = Csv::new("quantity,index,value");
            csv.row(format!("lambda,,{}", spec.lambda));
            for (i, v) in spec.right.iter().enumerate() {
                csv.row(format!("right,{i},{v}"));
            }
            for (i, v) in spec.left.iter().enumerate() {
                csv.row(format!("left,{i},{v}"));
            }
            for i in 0..mean.dim() {
                for j in 0..mean.dim() {
                    csv.row(format!("mean,{i}|{j},{}", mean.get(i, j)));
                }
            }
            csv.row(format!("residual_right,,{}", spec.residual_right));
            csv.row(format!("residual_left,,{}", spec.residual_left));
            csv.row(format!("iterations,,{}", spec.iterations));
            csv.finish()
        }
    };
    ctx.emit(&text)?;
    Ok(ExitCode::SUCCESS)
}

// --- lyapunov ---------------------------------------------------------------

#[derive(Serialize)]
struct LyapunovParams {
    theta: Vec<f64>,
    tol: f64,
}

fn cmd_lyapunov(ctx: &Ctx) -> Result<ExitCode, Failure> {
    let thetas = ctx.theta();
    let cfg = SpectrumConfig::default();
    let spectrum = theta_spectrum(&ctx.model, &thetas, &cfg)?;

    for ((t, l), r) in spectrum
        .thetas
        .iter()
        .zip(&spectrum.lambdas)
        .zip(&spectrum.r_ratios)
    {
        eprintln!("theta {t:<6} lambda {l:.12}  log {:+.9}  eigenfunction spread {r:.6}", l.ln());
    }
    let s = &spectrum.slope;
    eprintln!(
        "log-derivative at 1: {:+.9} (coarse {:+.9}, fine {:+.9}, flagged {})",
        s.slope, s.coarse, s.fine, s.flagged
    );
    eprintln!(
        "regime: {} (lambda(1) = {:.12})",
        spectrum.classification.regime, spectrum.classification.lambda1
    );

    let text = match ctx.cli.format {
        Format::Json => ctx.render(
            "lyapunov",
            LyapunovParams { theta: thetas, tol: cfg.tol },
            &spectrum,
        ),
        Format::Csv => {
            let mut csv = Csv::new("theta,lambda,log_lambda,r_ratio");
            for (i, t) in spectrum.thetas.iter().enumerate() {
                csv.row(format!(
                    "{t},{},{},{}",
                    spectrum.lambdas[i], spectrum.log_lambdas[i], spectrum.r_ratios[i]
                ));
            }
            csv.finish()
        }
    };
    ctx.emit(&text)?;
    Ok(ExitCode::SUCCESS)
}

// --- survival ---------------------------------------------------------------

#[derive(Serialize)]
struct SurvivalParams {
    n: usize,
    trunc: usize,
    samples: usize,
    start: Vec<u64>,
}

#[derive(Serialize)]
struct Bracket {
    lower: f64,
    upper: f64,
}

#[derive(Serialize)]
struct SurvivalResults {
    /// Exact truncated-chain bracket on the survival probability.
    oracle: Bracket,
    /// Plain trajectory indicator.
    indicator: McEstimate,
    /// Environment-conditional exact survival, averaged over environments.
    quenched: McEstimate,
    /// Importance sampling under the tilt at 1.
    tilted: McEstimate,
}

fn cmd_survival(ctx: &Ctx) -> Result<ExitCode, Failure> {
    let n = ctx.n(DEFAULT_HORIZON);
    let trunc = ctx.trunc();
    let samples = ctx.samples(DEFAULT_SAMPLES);
    let start = ctx.start();

    let chain = build_chain(&ctx.model, trunc)?;
    let series = survival_series(&chain, &start, n)?;
    let (lower, upper) = series[n];
    let indicator =
        survival_mc(&ctx.model, &start, n, samples, ctx.seed, SurvivalEstimator::Indicator)?;
    let quenched =
        survival_mc(&ctx.model, &start, n, samples, ctx.seed, SurvivalEstimator::Quenched)?;
    let tilted =
        survival_tilted(&ctx.model, &start, n, samples, ctx.seed, &SpectrumConfig::default())?;

    eprintln!("oracle bracket   [{lower:.9e}, {upper:.9e}] (truncation {trunc})");
    eprintln!("indicator        {:.9e} +/- {:.3e}", indicator.value, indicator.stderr);
    eprintln!("quenched         {:.9e} +/- {:.3e}", quenched.value, quenched.stderr);
    eprintln!("tilted           {:.9e} +/- {:.3e}", tilted.value, tilted.stderr);

    let params = SurvivalParams { n, trunc, samples, start };
    let results = SurvivalResults {
        oracle: Bracket { lower, upper },
        indicator,
        quenched,
        tilted,
    };
    let text = match ctx.cli.format {
        Format::Json => ctx.render("survival", params, &results),
        Format::Csv => {
            let mut csv = Csv::new("estimator,value,stderr,lower,upper");
            csv.row(format!(
                "oracle,{},,{},{}",
                0.5 * (results.oracle.lower + results.oracle.upper),
                results.oracle.lower,
                results.oracle.upper
            ));
            for (name, est) in [
                ("indicator", &results.indicator),
                ("quenched", &results.quenched),
                ("tilted", &results.tilted),
            ] {
                csv.row(format!("{name},{},{},,", est.value, est.stderr));
            }
            csv.finish()
        }
    };
    ctx.emit(&text)?;
    Ok(ExitCode::SUCCESS)
}

// --- yaglom -----------------------------------------------------------------

#[derive(Serialize)]
struct YaglomParams {
    n: usize,
    trunc: usize,
    samples: usize,
    start: Vec<u64>,
    tol: f64,
}

#[derive(Serialize)]
struct MassEntry {
    z: Vec<u64>,
    mass: f64,
}

#[derive(Serialize)]
struct FreqEntry {
    z: Vec<u64>,
    freq: f64,
    stderr: f64,
}

#[derive(Serialize)]
struct OracleLaw {
    rate: f64,
    w: f64,
    k_vec: Vec<f64>,
    iterations: u64,
    movement: f64,
    step_leak: f64,
    t_weighted_leak: f64,
    pmf: Vec<MassEntry>,
}

#[derive(Serialize)]
struct EmpiricalLaw {
    samples: usize,
    survivors: usize,
    pmf: Vec<FreqEntry>,
}

#[derive(Serialize)]
struct YaglomResults {
    oracle: OracleLaw,
    empirical: EmpiricalLaw,
    /// Total variation distance between the empirical law and the exact one.
    tv_distance: f64,
    /// Expected TV contribution of pure sampling noise (half the summed
    /// per-state standard errors); distances at this scale are unresolved.
    tv_noise_floor: f64,
}

fn tv_against_oracle(
    chain: &TruncatedChain,
    yaglom: &YaglomData,
    pmf: &[(Vec<u64>, f64)],
) -> f64 {
    let mut seen = vec![false; chain.n_states()];
    let mut acc = 0.0;
    for (z, freq) in pmf {
        match chain.state_index(z) {
            Some(idx) => {
                seen[idx] = true;
                acc += (yaglom.t[idx] - freq).abs();
            }
            // Beyond the truncation the exact law carries no mass.
            None => acc += freq,
        }
    }
    for (idx, &was_seen) in seen.iter().enumerate().skip(1) {
        if !was_seen {
            acc += yaglom.t[idx];
        }
    }
    0.5 * acc
}

fn cmd_yaglom(ctx: &Ctx) -> Result<ExitCode, Failure> {
    let n = ctx.n(DEFAULT_HORIZON);
    let trunc = ctx.trunc();
    let samples = ctx.samples(DEFAULT_SAMPLES);
    let start = ctx.start();

    let chain = build_chain(&ctx.model, trunc)?;
    let yag = yaglom_exact_from(&chain, &start, YAGLOM_TOL)?;
    let mc = yaglom_mc(&ctx.model, &start, n, samples, ctx.seed)?;

    let oracle_pmf: Vec<MassEntry> = yag
        .t
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &mass)| mass > 0.0)
        .map(|(idx, &mass)| MassEntry { z: chain.states[idx].clone(), mass })
        .collect();
    let survivors = mc.survivors as f64;
    let empirical_pmf: Vec<FreqEntry> = mc
        .pmf
        .iter()
        .map(|(z, freq)| FreqEntry {
            z: z.clone(),
            freq: *freq,
            stderr: (freq * (1.0 - freq) / survivors).sqrt(),
        })
        .collect();
    let tv = tv_against_oracle(&chain, &yag, &mc.pmf);
    let noise_floor = 0.5 * empirical_pmf.iter().map(|e| e.stderr).sum::<f64>();

    eprintln!(
        "decay rate {:.12} ({} iterations, step leak {:.3e})",
        yag.rate, yag.iterations, yag.step_leak
    );
    eprintln!("survivors {} of {} at horizon {n}", mc.survivors, mc.samples);
    eprintln!("TV(empirical, exact) = {tv:.6} (noise floor {noise_floor:.6})");
    for entry in empirical_pmf.iter().take(5) {
        let exact = yag.t_at(&chain, &entry.z);
        eprintln!(
            "  state {:?}: empirical {:.6} +/- {:.6}, exact {:.6}",
            entry.z, entry.freq, entry.stderr, exact
        );
    }

    let params = YaglomParams { n, trunc, samples, start, tol: YAGLOM_TOL };
    let results = YaglomResults {
        oracle: OracleLaw {
            rate: yag.rate,
            w: yag.w,
            k_vec: yag.k_vec.clone(),
            iterations: yag.iterations,
            movement: yag.movement,
            step_leak: yag.step_leak,
            t_weighted_leak: yag.t_weighted_leak,
            pmf: oracle_pmf,
        },
        empirical: EmpiricalLaw { samples: mc.samples, survivors: mc.survivors, pmf: empirical_pmf },
        tv_distance: tv,
        tv_noise_floor: noise_floor,
    };
    let text = match ctx.cli.format {
        Format::Json => ctx.render("yaglom", params, &results),
        Format::Csv => {
            let mut csv = Csv::new("state,oracle_mass,mc_freq,mc_stderr");
            // Chain states first (graded lexicographic), then any states the
            // simulation reached beyond the truncation, in law order.
            for entry in &results.oracle.pmf {
                match results.empirical.pmf.iter().find(|e| e.z == entry.z) {
                    Some(e) => csv.row(format!(
                        "{},{},{},{}",
                        cell(&entry.z),
                        entry.mass,
                        e.freq,
                        e.stderr
                    )),
                    None => csv.row(format!("{},{},,", cell(&entry.z), entry.mass)),
                }
            }
            for e in &results.empirical.pmf {
                if chain.state_index(&e.z).is_none() {
                    csv.row(format!("{},0,{},{}", cell(&e.z), e.freq, e.stderr));
                }
            }
            csv.finish()
        }
    };
    ctx.emit(&text)?;
    Ok(ExitCode::SUCCESS)
}

// --- theorem1 ---------------------------------------------------------------

#[derive(Serialize)]
struct RatioParams {
    n_max: usize,
    trunc: usize,
    start: Vec<u64>,
    precision: f64,
}

fn cmd_theorem1(ctx: &Ctx) -> Result<ExitCode, Failure> {
    let n_max = ctx.n(DEFAULT_HORIZON);
    let trunc = ctx.trunc();
    let start = ctx.start();

    let chain = build_chain(&ctx.model, trunc)?;
    let yag = yaglom_exact_from(&chain, &start, YAGLOM_TOL)?;
    let reports =
        limit_ratio_report(&chain, &yag, &[start.clone()], n_max, RATIO_PRECISION)?;

    for rep in &reports {
        let last = rep.rows.last().expect("n_max >= 1 gives at least one row");
        eprintln!(
            "start {:?}: survival/rate^n at n={} is {:.9} toward (z,U)/W = {:.9}",
            rep.z, last.n, last.ratio, rep.target
        );
        eprintln!(
            "  last increment {:+.3e}, max additive gap {:.3e}, flagged rows {}",
            last.increment,
            rep.max_additive_gap,
            rep.rows.iter().filter(|r| r.flagged).count()
        );
    }

    let params = RatioParams { n_max, trunc, start, precision: RATIO_PRECISION };
    let text = match ctx.cli.format {
        Format::Json => ctx.render("theorem1", params, &reports),
        Format::Csv => {
            let mut csv =
                Csv::new("start,n,lower,upper,ratio,increment,additive_gap,flagged");
            for rep in &reports {
                for row in &rep.rows {
                    csv.row(format!(
                        "{},{},{},{},{},{},{},{}",
                        cell(&rep.z),
                        row.n,
                        row.lower,
                        row.upper,
                        row.ratio,
                        row.increment,
                        row.additive_gap,
                        row.flagged
                    ));
                }
            }
            csv.finish()
        }
    };
    ctx.emit(&text)?;
    Ok(ExitCode::SUCCESS)
}

// --- qprocess ---------------------------------------------------------------

#[derive(Serialize)]
struct QprocessParams {
    trunc: usize,
    start: Vec<u64>,
    window_m: usize,
    window_horizon: usize,
    times: (usize, usize),
    mass_threshold: f64,
    max_tuple_states: usize,
    path_depth: usize,
}

#[derive(Serialize)]
struct QprocessResults {
    lambda: f64,
    /// Max deviation between k-step conditioned transitions and the
    /// reweighted k-step chain, k = 1..=5.
    kstep_max_deviation: f64,
    /// Escape mass of the conditioned kernel as its stationary law sees it.
    weighted_leak_star: f64,
    stationary: QStatReport,
    limits: LimitReport,
}

fn cmd_qprocess(ctx: &Ctx) -> Result<ExitCode, Failure> {
    let trunc = ctx.trunc();
    let start = ctx.start();
    let mut cfg = LimitCheckConfig::default();
    if let Some(n) = ctx.cli.n {
        cfg.window_horizon = n;
        cfg.times = (n, 2 * n);
    }

    let chain = build_chain(&ctx.model, trunc)?;
    let yag = yaglom_exact_from(&chain, &start, YAGLOM_TOL)?;
    let q = build_qkernel(&chain)?;
    let stationary = qstat(&q, &yag)?;
    let kstep = kstep_consistency(&chain, &q, 5);
    let weighted_leak_star: f64 = stationary
        .invariant
        .t_star
        .iter()
        .zip(&q.leak_star)
        .map(|(t, l)| t * l)
        .sum();
    let limits = limit_checks(&chain, &q, &yag, &start, &cfg)?;

    eprintln!("lambda = {:.12}, stationary invariance residual {:.3e}", q.lambda, stationary.invariance_residual);
    eprintln!(
        "terminal class: unique {}, size {}, support {}, aperiodic witness {:?}",
        stationary.unique_terminal_class,
        stationary.class_size,
        stationary.support_size,
        stationary.aperiodic_witness
    );
    eprintln!("k-step consistency (k <= 5): {kstep:.3e}");
    eprintln!(
        "window check      {:.3e} over {} tuples (bracket halfwidth {:.3e})",
        limits.window.max_abs_error, limits.window.tuples_checked, limits.window.bracket_halfwidth
    );
    eprintln!(
        "factorization     {:.3e} over {} pairs at times {:?}",
        limits.factorization.max_abs_error,
        limits.factorization.pairs_checked,
        limits.factorization.times
    );
    eprintln!(
        "path identity     {:.3e} over {} paths",
        limits.path_identity.max_rel_error, limits.path_identity.paths_checked
    );
    eprintln!(
        "kernel powers     TV {:.3e} after {} iterations",
        limits.kernel_limit.tv_error, limits.kernel_limit.iterations
    );
    eprintln!("structure {}", flag(stationary.pass));

    let params = QprocessParams {
        trunc,
        start,
        window_m: cfg.window_m,
        window_horizon: cfg.window_horizon,
        times: cfg.times,
        mass_threshold: cfg.mass_threshold,
        max_tuple_states: cfg.max_tuple_states,
        path_depth: cfg.path_depth,
    };
    let results = QprocessResults {
        lambda: q.lambda,
        kstep_max_deviation: kstep,
        weighted_leak_star,
        stationary,
        limits,
    };
    let text = match ctx.cli.format {
        Format::Json => ctx.render("qprocess", params, &results),
        Format::Csv => {
            let mut csv = Csv::new("check,value");
            csv.row(format!("lambda,{}", results.lambda));
            csv.row(format!("kstep_max_deviation,{}", results.kstep_max_deviation));
            csv.row(format!("invariance_residual,{}", results.stationary.invariance_residual));
            csv.row(format!("weighted_leak_star,{}", results.weighted_leak_star));
            csv.row(format!("class_size,{}", results.stationary.class_size));
            csv.row(format!("support_size,{}", results.stationary.support_size));
            csv.row(format!("window_max_abs_error,{}", results.limits.window.max_abs_error));
            csv.row(format!(
                "window_bracket_halfwidth,{}",
                results.limits.window.bracket_halfwidth
            ));
            csv.row(format!(
                "factorization_max_abs_error,{}",
                results.limits.factorization.max_abs_error
            ));
            csv.row(format!(
                "path_identity_max_rel_error,{}",
                results.limits.path_identity.max_rel_error
            ));
            csv.row(format!("kernel_limit_tv_error,{}", results.limits.kernel_limit.tv_error));
            csv.row(format!("structure_pass,{}", results.stationary.pass));
            csv.finish()
        }
    };
    ctx.emit(&text)?;
    Ok(ExitCode::SUCCESS)
}

// --- eqy --------------------------------------------------------------------

#[derive(Serialize)]
struct EqyParams {
    trunc: usize,
    grid_per_edge: usize,
}

#[derive(Serialize)]
struct EqyResults {
    rate: f64,
    residual: FunctionalEqReport,
}

fn cmd_eqy(ctx: &Ctx) -> Result<ExitCode, Failure> {
    let trunc = ctx.trunc();
    let per_edge = ctx.n(DEFAULT_GRID_PER_EDGE);

    let chain = build_chain(&ctx.model, trunc)?;
    let yag = yaglom_exact_from(&chain, &ctx.start(), YAGLOM_TOL)?;
    let residual = functional_equation_residual(&ctx.model, &chain, &yag, per_edge)?;

    eprintln!(
        "max |E[T(F(s))] - rate*T(s) - (1 - rate)| = {:.3e} over {} grid points",
        residual.max_residual, residual.grid_points
    );
    eprintln!(
        "tail bound {:.3e}, residual at s=1: {}",
        residual.tail_bound, residual.residual_at_one
    );

    let params = EqyParams { trunc, grid_per_edge: per_edge };
    let results = EqyResults { rate: yag.rate, residual };
    let text = match ctx.cli.format {
        Format::Json => ctx.render("eqy", params, &results),
        Format::Csv => {
            let mut csv = Csv::new("quantity,value");
            csv.row(format!("rate,{}", results.rate));
            csv.row(format!("max_residual,{}", results.residual.max_residual));
            csv.row(format!("residual_at_one,{}", results.residual.residual_at_one));
            csv.row(format!("tail_bound,{}", results.residual.tail_bound));
            csv.row(format!("grid_points,{}", results.residual.grid_points));
            csv.finish()
        }
    };
    ctx.emit(&text)?;
    Ok(ExitCode::SUCCESS)
}
