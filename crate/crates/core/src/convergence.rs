//! Distance between the scaled jump process and the mean-field ODE, and
//! population sweeps measuring how that distance shrinks with `N`.
//!
//! Distances use the 1-norm on proportions. The jump path is extended
//! piecewise constant (right-continuous); the ODE path is linearly
//! interpolated between grid points.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gatherings::GatheringDistribution;
use crate::incidence::{incidence_b, SirParams};
use crate::jump_engine::{simulate_observed, JumpObserver, JumpTrajectory};
use crate::meanfield_ode::{integrate, integrate_until, ClassicSir, GatheringSir, MacroState, Trajectory};
use crate::sir_process::{coupling_mismatch_probability, gathering_infections, replica_rng, FiniteState, SirFamily};

/// Step of the ODE reference used by sweeps.
pub const REFERENCE_DT: f64 = 1e-3;
/// The default horizon ends once `i` falls below this fraction of its peak.
pub const DEFAULT_HORIZON_FRACTION: f64 = 0.1;
/// Horizon used when there is no epidemic to follow.
pub const DISEASE_FREE_HORIZON: f64 = 1.0;
const COVERAGE_SLACK: f64 = 1e-9;

fn l1(x: &[i64; 3], n: f64, z: &MacroState) -> f64 {
    (x[0] as f64 / n - z.s).abs() + (x[1] as f64 / n - z.i).abs() + (x[2] as f64 / n - z.r).abs()
}

/// Streaming `sup_{t <= T} |X_t / N - z_t|`, fed by the jump engine.
#[derive(Debug)]
pub struct SupDeviation<'a> {
    ode: &'a Trajectory,
    scale: f64,
    horizon: f64,
    current: [i64; 3],
    next_grid: usize,
    max: f64,
}

impl<'a> SupDeviation<'a> {
    pub fn new(ode: &'a Trajectory, population: u64, horizon: f64) -> Self {
        Self {
            ode,
            scale: population as f64,
            horizon,
            current: [0; 3],
            next_grid: 0,
            max: 0.0,
        }
    }

    pub fn value(&self) -> f64 {
        self.max
    }

    fn observe(&mut self, t: f64) {
        let d = l1(&self.current, self.scale, &self.ode.state_at(t));
        if d > self.max {
            self.max = d;
        }
    }

    /// Evaluates ODE grid points strictly before `t`, or up to `t` inclusive.
    fn flush(&mut self, t: f64, inclusive: bool) {
        while let Some(&gt) = self.ode.times.get(self.next_grid) {
            if gt > self.horizon || gt > t || (!inclusive && gt == t) {
                break;
            }
            let d = l1(&self.current, self.scale, &self.ode.states[self.next_grid]);
            if d > self.max {
                self.max = d;
            }
            self.next_grid += 1;
        }
    }
}

impl JumpObserver<3> for SupDeviation<'_> {
    fn start(&mut self, x0: &[i64; 3]) {
        self.current = *x0;
    }

    fn jump(&mut self, t: f64, x: &[i64; 3]) {
        self.flush(t, false);
        self.current = *x;
        self.observe(t);
    }

    fn finish(&mut self, horizon: f64) {
        self.flush(horizon, true);
        self.observe(horizon);
    }
}

/// `sup_{t <= T} |X_t / N - z_t|` over jump times, ODE grid points and `T`.
pub fn sup_distance(jump: &JumpTrajectory<3>, ode: &Trajectory, horizon: f64) -> Result<f64> {
    if jump.horizon < horizon - COVERAGE_SLACK {
        return Err(Error::Coverage {
            which: "jump",
            end: jump.horizon,
            horizon,
        });
    }
    if ode.end_time() < horizon - COVERAGE_SLACK {
        return Err(Error::Coverage {
            which: "ODE",
            end: ode.end_time(),
            horizon,
        });
    }
    let mut acc = SupDeviation::new(ode, jump.population, horizon);
    acc.start(&jump.states[0]);
    for (&t, x) in jump.times.iter().zip(&jump.states).skip(1) {
        if t > horizon {
            break;
        }
        acc.jump(t, x);
    }
    acc.finish(horizon);
    Ok(acc.value())
}

/// Mean-field ODE the jump process is compared against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Reference {
    Gathering,
    Classic { beta: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceScenario {
    pub name: String,
    pub params: SirParams,
    pub dist: GatheringDistribution,
    pub initial: MacroState,
    /// Defaults to the end of the epidemic wave when absent.
    pub horizon: Option<f64>,
    pub reference: Reference,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "M")]
    pub replicas: usize,
    pub mean_sup_err: f64,
    pub max_sup_err: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub scenario: String,
    pub ode_dt: f64,
    pub horizon: f64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    pub fn mean_strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].mean_sup_err < w[0].mean_sup_err)
    }

    /// Least-squares slope of `log mean error` against `log N`.
    pub fn empirical_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.mean_sup_err > 0.0)
            .map(|r| ((r.n as f64).ln(), r.mean_sup_err.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        Some(sxy / sxx)
    }
}

impl ConvergenceScenario {
    fn ode(&self, horizon: f64, dt: f64) -> Result<Trajectory> {
        match self.reference {
            Reference::Gathering => integrate(
                &GatheringSir {
                    params: &self.params,
                    dist: &self.dist,
                },
                self.initial,
                horizon,
                dt,
            ),
            Reference::Classic { beta } => integrate(
                &ClassicSir {
                    beta,
                    gamma: self.params.gamma(),
                },
                self.initial,
                horizon,
                dt,
            ),
        }
    }

    /// First time after the peak at which `i < 0.1 max i`, on the reference grid.
    pub fn default_horizon(&self) -> Result<f64> {
        if self.initial.i <= 0.0 {
            return Ok(DISEASE_FREE_HORIZON);
        }
        let mut peak = 0.0f64;
        let stop = |x: &MacroState| {
            peak = peak.max(x.i);
            x.i < DEFAULT_HORIZON_FRACTION * peak
        };
        let rhs = GatheringSir {
            params: &self.params,
            dist: &self.dist,
        };
        let traj = match self.reference {
            Reference::Gathering => integrate_until(&rhs, self.initial, REFERENCE_DT, 1e4, stop)?,
            Reference::Classic { beta } => integrate_until(
                &ClassicSir {
                    beta,
                    gamma: self.params.gamma(),
                },
                self.initial,
                REFERENCE_DT,
                1e4,
                stop,
            )?,
        };
        Ok(traj.end_time())
    }

    pub fn horizon(&self) -> Result<f64> {
        match self.horizon {
            Some(t) => Ok(t),
            None => self.default_horizon(),
        }
    }
}

/// Sup-error of one replica against a precomputed reference.
fn replica_error(
    scenario: &ConvergenceScenario,
    ode: &Trajectory,
    horizon: f64,
    n: u64,
    seed: u64,
    replica: u64,
) -> Result<f64> {
    let x0 = FiniteState::from_proportions(n, &scenario.initial)?;
    let family = SirFamily::new(&scenario.params, &scenario.dist, n);
    let mut rng = replica_rng(seed, n, replica);
    let mut acc = SupDeviation::new(ode, n, horizon);
    simulate_observed(&family, x0.counts(), horizon, &mut rng, &mut acc)?;
    Ok(acc.value())
}

/// Runs `replicas` simulations per population size and aggregates the
/// sup-errors. Output is independent of `threads`.
pub fn convergence_sweep(
    scenario: &ConvergenceScenario,
    ns: &[u64],
    replicas: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<ConvergenceReport> {
    if ns.is_empty() {
        return Err(Error::invalid("ns", "need at least one population size"));
    }
    if ns.windows(2).any(|w| w[1] <= w[0]) || ns[0] == 0 {
        return Err(Error::invalid("ns", "population sizes must be positive and increasing"));
    }
    if replicas == 0 {
        return Err(Error::invalid("replicas", "need at least one replica"));
    }
    let horizon = scenario.horizon()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("T", format!("horizon {horizon} must be positive and finite")));
    }
    let dt = REFERENCE_DT.min(horizon);
    let ode = scenario.ode(horizon, dt)?;
    log::info!("sweep '{}': T = {horizon}, {} reference steps", scenario.name, ode.len() - 1);

    let jobs: Vec<(u64, u64)> = ns
        .iter()
        .flat_map(|&n| (0..replicas as u64).map(move |r| (n, r)))
        .collect();
    let run = || {
        jobs.par_iter()
            .map(|&(n, r)| replica_error(scenario, &ode, horizon, n, seed, r))
            .collect::<Result<Vec<f64>>>()
    };
    let errors = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::invalid("threads", e.to_string()))?
            .install(run)?,
        None => run()?,
    };

    let rows = ns
        .iter()
        .zip(errors.chunks(replicas))
        .map(|(&n, errs)| {
            let m = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / m;
            let max = errs.iter().copied().fold(0.0, f64::max);
            let stderr = if errs.len() > 1 {
                (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt()
            } else {
                0.0
            };
            ConvergenceRow {
                n,
                replicas,
                mean_sup_err: mean,
                max_sup_err: max,
                stderr,
            }
        })
        .collect();
    let report = ConvergenceReport {
        scenario: scenario.name.clone(),
        ode_dt: dt,
        horizon,
        rows,
    };
    if let Some(slope) = report.empirical_slope() {
        log::info!("empirical log-log slope of mean sup-error: {slope:.3}");
    }
    Ok(report)
}

/// Monte-Carlo drift comparison at one state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DriftSample {
    pub state: FiniteState,
    /// Sample mean of the number of infections caused by one gathering.
    pub infections: f64,
    pub infections_stderr: f64,
    /// `s B(i)`.
    pub mean_field: f64,
    /// 1-norm gap between the drifts, `2 μ |E[U] - s B(i)|`.
    pub gap: f64,
    pub gap_stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftReport {
    #[serde(rename = "N")]
    pub n: u64,
    pub samples: usize,
    pub states: Vec<DriftSample>,
    pub max_gap: f64,
    /// `2 μ E[Θ 1{Θ > N}] + 4 μ ‖φ‖ (coupling mismatch)`.
    pub bound: f64,
}

impl DriftReport {
    /// Whether every state's gap is within the bound plus `sigmas` standard errors.
    pub fn within_bound(&self, sigmas: f64) -> bool {
        self.states.iter().all(|d| d.gap <= self.bound + sigmas * d.gap_stderr)
    }
}

/// Bound on the 1-norm gap between the finite-N and mean-field drifts.
/// `‖φ‖` is the largest gathering size in the support table.
pub fn drift_gap_bound(n: u64, params: &SirParams, dist: &GatheringDistribution) -> f64 {
    let mu = params.mu();
    2.0 * mu * dist.oversize_mean(n) + 4.0 * mu * dist.max_size() as f64 * coupling_mismatch_probability(n, dist)
}

/// Estimates the finite-N drift from `samples` simulated gatherings per state
/// and compares it to the mean-field drift. The recovery components agree
/// exactly, so the gap lives in the infection components.
pub fn drift_consistency<R: Rng + ?Sized>(
    states: &[FiniteState],
    params: &SirParams,
    dist: &GatheringDistribution,
    samples: usize,
    rng: &mut R,
) -> Result<DriftReport> {
    let n = match states.first() {
        Some(s) => s.population(),
        None => return Err(Error::DegenerateInput("no states to compare")),
    };
    if states.iter().any(|s| s.population() != n) || n == 0 {
        return Err(Error::invalid("states", "all states must share the same positive population"));
    }
    if samples < 2 {
        return Err(Error::invalid("samples", "need at least two gathering samples"));
    }
    let mu = params.mu();
    let mut out = Vec::with_capacity(states.len());
    for state in states {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..samples {
            let j = gathering_infections(state, dist, params.p(), rng) as f64;
            sum += j;
            sum_sq += j * j;
        }
        let m = samples as f64;
        let mean = sum / m;
        let var = ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0);
        let stderr = (var / m).sqrt();
        let [s, i, _] = state.proportions();
        let mean_field = s * incidence_b(dist, params.p(), i)?;
        out.push(DriftSample {
            state: *state,
            infections: mean,
            infections_stderr: stderr,
            mean_field,
            gap: 2.0 * mu * (mean - mean_field).abs(),
            gap_stderr: 2.0 * mu * stderr,
        });
    }
    Ok(DriftReport {
        n,
        samples,
        max_gap: out.iter().map(|d| d.gap).fold(0.0, f64::max),
        states: out,
        bound: drift_gap_bound(n, params, dist),
    })
}

/// The nine states with `s ∈ {.2, .4, .6}` and `i ∈ {.1, .2, .3}`.
pub fn interior_grid(n: u64) -> Vec<FiniteState> {
    let mut out = Vec::with_capacity(9);
    for s in [0.2, 0.4, 0.6] {
        for i in [0.1, 0.2, 0.3] {
            let z = MacroState {
                s,
                i,
                r: 1.0 - s - i,
            };
            out.push(FiniteState::from_proportions(n, &z).expect("n is positive"));
        }
    }
    out
}
