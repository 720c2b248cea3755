//! Command-line front end. Scenarios are JSON files; tables go out as CSV and
//! summaries as JSON. Exit status is 0 on success, 1 for invalid input and 2
//! when a computation fails.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convergence::{convergence_sweep, ConvergenceReport, ConvergenceScenario, Reference};
use crate::error::{Error, Result};
use crate::gatherings::{GatheringDistribution, GatheringLaw};
use crate::incidence::{basic_reproduction_number, incidence_b_derivative_at_zero, SirParams};
use crate::jump_engine::{JumpTrajectory, Sampling};
use crate::meanfield_ode::{comparison_curves, integrate, GatheringSir, MacroState, DEFAULT_DT};
use crate::sir_process::{replica_rng, simulate_sir_recorded, FiniteState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Everything a subcommand may need. Only `params` and `dist` are always required.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub params: SirParams,
    pub dist: GatheringDistribution,
    #[serde(default)]
    pub initial: Option<MacroState>,
    #[serde(default, rename = "T", alias = "horizon")]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default, rename = "N")]
    pub population: Option<u64>,
    #[serde(default)]
    pub replicas: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub reference: Option<Reference>,
}

fn missing(field: &str) -> Error {
    Error::invalid(format!("scenario.{field}"), "required by this subcommand but missing")
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    fn validate(&self) -> Result<()> {
        if let Some(t) = self.horizon {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid("scenario.T", format!("{t} must be positive and finite")));
            }
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::invalid("scenario.dt", format!("{dt} must be positive and finite")));
            }
        }
        if self.population == Some(0) {
            return Err(Error::invalid("scenario.N", "must be at least 1"));
        }
        if self.replicas == Some(0) {
            return Err(Error::invalid("scenario.replicas", "must be at least 1"));
        }
        Ok(())
    }

    fn initial(&self) -> Result<MacroState> {
        self.initial.ok_or_else(|| missing("initial"))
    }

    fn horizon(&self) -> Result<f64> {
        self.horizon.ok_or_else(|| missing("T"))
    }

    fn dt(&self) -> f64 {
        self.dt.unwrap_or(DEFAULT_DT)
    }

    fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| "scenario".into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "gather-sir", version, about = "SIR epidemics driven by random social gatherings")]
struct Cli {
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for replica fan-out.
    #[arg(long, global = true, env = "GATHER_SIR_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ScenarioArg {
    /// Scenario JSON file, or `-` for stdin.
    scenario: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the gathering ODE; CSV `t,s,i,r`.
    Ode {
        #[command(flatten)]
        input: ScenarioArg,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long = "T")]
        horizon: Option<f64>,
    },
    /// Simulate the finite-population process; CSV `replica,t,S,I,R`.
    Simulate {
        #[command(flatten)]
        input: ScenarioArg,
        #[arg(long = "N")]
        population: Option<u64>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "T")]
        horizon: Option<f64>,
    },
    /// Sup-distance between simulations and the ODE across population sizes;
    /// CSV `N,M,mean_sup_err,max_sup_err,stderr`.
    Sweep {
        #[command(flatten)]
        input: ScenarioArg,
        #[arg(long, value_delimiter = ',', required = true)]
        ns: Vec<u64>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "T")]
        horizon: Option<f64>,
    },
    /// Basic reproduction number and B'(0) as JSON.
    R0 {
        #[command(flatten)]
        input: ScenarioArg,
    },
    /// Gathering ODE against the classic SIR with matching B'(0);
    /// CSV `t,s_gathering,i_gathering,r_gathering,s_classic,i_classic,r_classic`.
    Compare {
        #[command(flatten)]
        input: ScenarioArg,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long = "T")]
        horizon: Option<f64>,
    },
    /// Moments, generating function and admissibility of a gathering law as JSON.
    GatheringCheck {
        /// Distribution JSON file, or `-` for stdin.
        dist: PathBuf,
        /// Points at which to evaluate the generating function.
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1")]
        xi: Vec<f64>,
    },
}

fn read_input(path: &PathBuf) -> Result<String> {
    let mut text = String::new();
    if path.as_os_str() == "-" {
        io::stdin().read_to_string(&mut text)?;
    } else {
        text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid("scenario", format!("cannot read {}: {e}", path.display())))?;
    }
    Ok(text)
}

fn load_scenario(input: &ScenarioArg) -> Result<Scenario> {
    Scenario::from_json(&read_input(&input.scenario)?)
}

/// Scientific notation with 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_ode(out: &mut dyn Write, scenario: &Scenario, dt: Option<f64>, horizon: Option<f64>) -> Result<()> {
    let horizon = match horizon {
        Some(t) => t,
        None => scenario.horizon()?,
    };
    let dt = dt.unwrap_or_else(|| scenario.dt());
    let rhs = GatheringSir {
        params: &scenario.params,
        dist: &scenario.dist,
    };
    let traj = integrate(&rhs, scenario.initial()?, horizon, dt)?;
    writeln!(out, "t,s,i,r")?;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        writeln!(out, "{},{},{},{}", num(*t), num(x.s), num(x.i), num(x.r))?;
    }
    Ok(())
}

fn thread_pool(threads: Option<usize>) -> Result<Option<rayon::ThreadPool>> {
    threads
        .map(|t| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::invalid("threads", e.to_string()))
        })
        .transpose()
}

struct SimulateArgs {
    population: Option<u64>,
    replicas: Option<usize>,
    seed: Option<u64>,
    horizon: Option<f64>,
    threads: Option<usize>,
}

fn write_simulations(out: &mut dyn Write, scenario: &Scenario, args: SimulateArgs) -> Result<()> {
    let n = args.population.or(scenario.population).ok_or_else(|| missing("N"))?;
    if n == 0 {
        return Err(Error::invalid("N", "must be at least 1"));
    }
    let replicas = args.replicas.or(scenario.replicas).unwrap_or(1);
    if replicas == 0 {
        return Err(Error::invalid("replicas", "must be at least 1"));
    }
    let seed = args.seed.or(scenario.seed).unwrap_or(0);
    let horizon = match args.horizon {
        Some(t) => t,
        None => scenario.horizon()?,
    };
    let x0 = FiniteState::from_proportions(n, &scenario.initial()?)?;
    let sampling = Sampling::for_population(n);
    let run = || {
        (0..replicas as u64)
            .into_par_iter()
            .map(|r| {
                let mut rng = replica_rng(seed, n, r);
                simulate_sir_recorded(&scenario.params, &scenario.dist, x0, horizon, &mut rng, sampling)
            })
            .collect::<Result<Vec<JumpTrajectory<3>>>>()
    };
    let runs = match thread_pool(args.threads)? {
        Some(pool) => pool.install(run)?,
        None => run()?,
    };
    writeln!(out, "replica,t,S,I,R")?;
    for (r, traj) in runs.iter().enumerate() {
        for (t, x) in traj.times.iter().zip(&traj.states) {
            writeln!(out, "{r},{},{},{},{}", num(*t), x[0], x[1], x[2])?;
        }
    }
    Ok(())
}

pub fn write_report_csv(out: &mut dyn Write, report: &ConvergenceReport) -> Result<()> {
    writeln!(out, "N,M,mean_sup_err,max_sup_err,stderr")?;
    for row in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.n,
            row.replicas,
            num(row.mean_sup_err),
            num(row.max_sup_err),
            num(row.stderr)
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct R0Summary {
    r0: f64,
    b_prime_0: f64,
}

#[derive(Serialize)]
struct GatheringSummary<'a> {
    law: &'a GatheringLaw,
    admissible: bool,
    finite_support: bool,
    support_max: u64,
    support_mass: f64,
    mean: f64,
    second_factorial_moment: f64,
    pgf: Vec<[f64; 2]>,
    pgf_derivative: Vec<[f64; 2]>,
}

fn gathering_summary<'a>(dist: &'a GatheringDistribution, xi: &[f64]) -> Result<GatheringSummary<'a>> {
    if let Some(&bad) = xi.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::invalid("xi", format!("{bad} lies outside [0, 1]")));
    }
    Ok(GatheringSummary {
        law: dist.law(),
        admissible: dist.is_admissible(),
        finite_support: dist.has_finite_support(),
        support_max: dist.max_size(),
        support_mass: dist.support().iter().map(|&(_, w)| w).sum(),
        mean: dist.mean(),
        second_factorial_moment: dist.second_factorial_moment(),
        pgf: xi.iter().map(|&x| [x, dist.pgf(x)]).collect(),
        pgf_derivative: xi.iter().map(|&x| [x, dist.pgf_derivative(x)]).collect(),
    })
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let threads = cli.threads;
    match cli.command {
        Command::Ode { input, dt, horizon } => write_ode(out, &load_scenario(&input)?, dt, horizon),
        Command::Simulate {
            input,
            population,
            replicas,
            seed,
            horizon,
        } => write_simulations(
            out,
            &load_scenario(&input)?,
            SimulateArgs {
                population,
                replicas,
                seed,
                horizon,
                threads,
            },
        ),
        Command::Sweep {
            input,
            ns,
            replicas,
            seed,
            horizon,
        } => {
            let scenario = load_scenario(&input)?;
            let sweep = ConvergenceScenario {
                name: scenario.label(),
                params: scenario.params,
                dist: scenario.dist.clone(),
                initial: scenario.initial()?,
                horizon: horizon.or(scenario.horizon),
                reference: scenario.reference.unwrap_or(Reference::Gathering),
            };
            let replicas = replicas.or(scenario.replicas).unwrap_or(20);
            let seed = seed.or(scenario.seed).unwrap_or(0);
            let report = convergence_sweep(&sweep, &ns, replicas, seed, threads)?;
            write_report_csv(out, &report)
        }
        Command::R0 { input } => {
            let scenario = load_scenario(&input)?;
            let summary = R0Summary {
                r0: basic_reproduction_number(&scenario.params, &scenario.dist)?,
                b_prime_0: incidence_b_derivative_at_zero(&scenario.dist, scenario.params.p())?,
            };
            serde_json::to_writer(&mut *out, &summary)?;
            writeln!(out)?;
            Ok(())
        }
        Command::Compare { input, dt, horizon } => {
            let scenario = load_scenario(&input)?;
            let horizon = match horizon {
                Some(t) => t,
                None => scenario.horizon()?,
            };
            let dt = dt.unwrap_or_else(|| scenario.dt());
            let curves = comparison_curves(scenario.initial()?, &scenario.params, &scenario.dist, horizon, dt)?;
            log::info!(
                "beta = {}, min(s_gathering - s_classic) = {:e}",
                curves.beta,
                curves.min_susceptible_gap()
            );
            writeln!(out, "t,s_gathering,i_gathering,r_gathering,s_classic,i_classic,r_classic")?;
            for ((t, g), c) in curves.gathering.times.iter().zip(&curves.gathering.states).zip(&curves.classic.states) {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    num(*t),
                    num(g.s),
                    num(g.i),
                    num(g.r),
                    num(c.s),
                    num(c.i),
                    num(c.r)
                )?;
            }
            Ok(())
        }
        Command::GatheringCheck { dist, xi } => {
            let dist: GatheringDistribution = serde_json::from_str(&read_input(&dist)?)?;
            serde_json::to_writer_pretty(&mut *out, &gathering_summary(&dist, &xi)?)?;
            writeln!(out)?;
            Ok(())
        }
    }
}

/// Parses `argv` (including the program name) and runs the subcommand,
/// writing results to `out` (unless `--out` is given) and diagnostics to `err`.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let result = match cli.out.clone() {
        Some(path) => File::create(&path)
            .map_err(|e| Error::invalid("out", format!("cannot create {}: {e}", path.display())))
            .and_then(|file| {
                let mut writer = BufWriter::new(file);
                dispatch(cli, &mut writer)?;
                writer.flush()?;
                Ok(())
            }),
        None => dispatch(cli, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let code = run_with(argv, &mut out, &mut io::stderr());
    if out.flush().is_err() {
        return EXIT_RUNTIME;
    }
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAIRS: &str = r#"{"params":{"mu":0.5,"p":0.2,"gamma":0.1},"dist":{"type":"fixed","theta":2},
        "initial":{"s":0.99,"i":0.01},"T":10,"dt":0.01}"#;

    #[test]
    fn scenario_parsing() {
        let s = Scenario::from_json(PAIRS).unwrap();
        assert_eq!(s.horizon, Some(10.0));
        assert_eq!(s.initial.unwrap().r, 0.0);
        let e = Scenario::from_json(r#"{"params":{"mu":0.5,"p":0.2},"dist":{"type":"fixed","theta":2}}"#)
            .unwrap_err();
        assert!(e.is_validation() && e.to_string().contains("gamma"), "{e}");
        let e = Scenario::from_json(&PAIRS.replace("\"T\":10", "\"T\":-1")).unwrap_err();
        assert!(e.to_string().contains("scenario.T"), "{e}");
        let e = Scenario::from_json(&PAIRS.replace("\"dt\"", "\"dtt\"")).unwrap_err();
        assert!(e.to_string().contains("dtt"), "{e}");
    }

    #[test]
    fn missing_fields_are_named() {
        let s = Scenario::from_json(r#"{"params":{"mu":0.5,"p":0.2,"gamma":0.1},"dist":{"type":"fixed","theta":2}}"#)
            .unwrap();
        let mut sink = Vec::new();
        let e = write_ode(&mut sink, &s, None, None).unwrap_err();
        assert!(e.to_string().contains("scenario.T"), "{e}");
    }

    #[test]
    fn number_format_has_17_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(2.0), "2.0000000000000000e0");
    }

    #[test]
    fn help_exits_cleanly() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run_with(["gather-sir", "--help"], &mut out, &mut err), EXIT_OK);
        assert_eq!(run_with(["gather-sir", "bogus"], &mut out, &mut err), EXIT_VALIDATION);
    }
}
