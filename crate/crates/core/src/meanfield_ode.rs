//! Deterministic SIR dynamics: the classic bilinear model and the gathering
//! model `s' = -μ s B(i)`, integrated with fixed-step RK4 on the simplex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gatherings::GatheringDistribution;
use crate::incidence::{incidence_b, incidence_b_derivative_at_zero, logarithmic_constants, SirParams};

/// Tolerance on `s + i + r = 1` accepted when building a state.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;
/// Components down to this value are clamped to zero.
pub const NEGATIVE_TOLERANCE: f64 = 1e-12;
/// Per-step drift from the simplex above which the state is renormalized.
pub const RENORMALIZE_DRIFT: f64 = 1e-12;
/// Default integration step.
pub const DEFAULT_DT: f64 = 0.01;
/// Infected proportion regarded as extinct when estimating the final size.
pub const EXTINCTION_THRESHOLD: f64 = 1e-8;
/// Largest horizon tried when integrating to extinction.
pub const MAX_FINAL_SIZE_HORIZON: f64 = 1e4;

/// Susceptible, infected and recovered proportions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMacroState")]
pub struct MacroState {
    pub s: f64,
    pub i: f64,
    pub r: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMacroState {
    s: f64,
    i: f64,
    #[serde(default)]
    r: f64,
}

impl TryFrom<RawMacroState> for MacroState {
    type Error = Error;

    fn try_from(raw: RawMacroState) -> Result<Self> {
        MacroState::new(raw.s, raw.i, raw.r)
    }
}

impl MacroState {
    pub fn new(s: f64, i: f64, r: f64) -> Result<Self> {
        for (field, v) in [("initial.s", s), ("initial.i", i), ("initial.r", r)] {
            if !v.is_finite() || !(-NEGATIVE_TOLERANCE..=1.0 + SIMPLEX_TOLERANCE).contains(&v) {
                return Err(Error::invalid(field, format!("{v} is not a proportion")));
            }
        }
        let sum = s + i + r;
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::invalid("initial", format!("s + i + r = {sum}, expected 1")));
        }
        Ok(Self {
            s: s.max(0.0),
            i: i.max(0.0),
            r: r.max(0.0),
        })
    }

    /// `(1 - i0, i0, 0)`.
    pub fn seeded(i0: f64) -> Result<Self> {
        Self::new(1.0 - i0, i0, 0.0)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.s, self.i, self.r]
    }

    pub fn sum(&self) -> f64 {
        self.s + self.i + self.r
    }

    /// 1-norm distance.
    pub fn distance(&self, other: &MacroState) -> f64 {
        (self.s - other.s).abs() + (self.i - other.i).abs() + (self.r - other.r).abs()
    }

    fn offset(&self, d: &[f64; 3], h: f64) -> MacroState {
        MacroState {
            s: self.s + h * d[0],
            i: self.i + h * d[1],
            r: self.r + h * d[2],
        }
    }
}

/// Right-hand side of an autonomous SIR system.
pub trait VectorField {
    fn eval(&self, state: &MacroState) -> [f64; 3];
}

impl<F: Fn(&MacroState) -> [f64; 3]> VectorField for F {
    fn eval(&self, state: &MacroState) -> [f64; 3] {
        self(state)
    }
}

/// `s' = -βsi, i' = βsi - γi, r' = γi`.
pub fn classic_rhs(state: &MacroState, beta: f64, gamma: f64) -> [f64; 3] {
    let infection = beta * state.s * state.i;
    let recovery = gamma * state.i;
    [-infection, infection - recovery, recovery]
}

/// `s' = -μ s B(i), i' = μ s B(i) - γi, r' = γi`.
pub fn gathering_rhs(state: &MacroState, params: &SirParams, dist: &GatheringDistribution) -> [f64; 3] {
    // RK4 stages may step a rounding error outside [0, 1].
    let i = state.i.clamp(0.0, 1.0);
    let b = incidence_b(dist, params.p(), i).expect("clamped into the domain of B");
    let infection = params.mu() * state.s * b;
    let recovery = params.gamma() * state.i;
    [-infection, infection - recovery, recovery]
}

#[derive(Clone, Copy, Debug)]
pub struct ClassicSir {
    pub beta: f64,
    pub gamma: f64,
}

impl VectorField for ClassicSir {
    fn eval(&self, state: &MacroState) -> [f64; 3] {
        classic_rhs(state, self.beta, self.gamma)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GatheringSir<'a> {
    pub params: &'a SirParams,
    pub dist: &'a GatheringDistribution,
}

impl VectorField for GatheringSir<'_> {
    fn eval(&self, state: &MacroState) -> [f64; 3] {
        gathering_rhs(state, self.params, self.dist)
    }
}

/// States on a uniform time grid `t_k = k dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<MacroState>,
    /// Largest simplex drift observed before renormalization.
    pub max_drift: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("trajectories hold the initial state")
    }

    pub fn final_state(&self) -> &MacroState {
        self.states.last().expect("trajectories hold the initial state")
    }

    /// Linear interpolation between grid points; clamps outside the grid.
    pub fn state_at(&self, t: f64) -> MacroState {
        if t <= 0.0 {
            return self.states[0];
        }
        let pos = t / self.dt;
        let k = pos.floor() as usize;
        if k + 1 >= self.len() {
            return *self.final_state();
        }
        let w = pos - k as f64;
        if w == 0.0 {
            return self.states[k];
        }
        let (a, b) = (&self.states[k], &self.states[k + 1]);
        MacroState {
            s: a.s + w * (b.s - a.s),
            i: a.i + w * (b.i - a.i),
            r: a.r + w * (b.r - a.r),
        }
    }

    /// Index and value of the largest infected proportion.
    pub fn peak_infected(&self) -> (usize, f64) {
        self.states
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, x)| if x.i > best.1 { (k, x.i) } else { best })
    }
}

fn check_step(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::StepSize(dt));
    }
    Ok(())
}

fn rk4_step(rhs: &impl VectorField, x: &MacroState, dt: f64, max_drift: &mut f64) -> MacroState {
    let k1 = rhs.eval(x);
    let k2 = rhs.eval(&x.offset(&k1, 0.5 * dt));
    let k3 = rhs.eval(&x.offset(&k2, 0.5 * dt));
    let k4 = rhs.eval(&x.offset(&k3, dt));
    let mut incr = [0.0; 3];
    for c in 0..3 {
        incr[c] = (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]) / 6.0;
    }
    let mut next = x.offset(&incr, dt);
    next.s = next.s.max(0.0);
    next.i = next.i.max(0.0);
    next.r = next.r.max(0.0);
    let drift = (next.sum() - 1.0).abs();
    if drift > RENORMALIZE_DRIFT {
        *max_drift = max_drift.max(drift);
        let total = next.sum();
        next.s /= total;
        next.i /= total;
        next.r /= total;
    }
    next
}

/// Classical RK4 on the grid `0, dt, ..., n dt` with `n dt ≥ horizon`.
pub fn integrate(rhs: &impl VectorField, initial: MacroState, horizon: f64, dt: f64) -> Result<Trajectory> {
    check_step(dt)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("T", format!("horizon {horizon} must be positive and finite")));
    }
    if dt > horizon {
        return Err(Error::invalid("dt", format!("step {dt} exceeds the horizon {horizon}")));
    }
    let steps = (horizon / dt - 1e-9).ceil() as usize;
    Ok(run(rhs, initial, dt, |k, _| k >= steps))
}

/// Integrates until `stop` holds or `max_time` is reached.
pub fn integrate_until(
    rhs: &impl VectorField,
    initial: MacroState,
    dt: f64,
    max_time: f64,
    mut stop: impl FnMut(&MacroState) -> bool,
) -> Result<Trajectory> {
    check_step(dt)?;
    let max_steps = (max_time / dt - 1e-9).ceil() as usize;
    Ok(run(rhs, initial, dt, |k, x| k >= max_steps || stop(x)))
}

fn run(
    rhs: &impl VectorField,
    initial: MacroState,
    dt: f64,
    mut done: impl FnMut(usize, &MacroState) -> bool,
) -> Trajectory {
    let mut times = vec![0.0];
    let mut states = vec![initial];
    let mut max_drift = 0.0;
    let mut x = initial;
    let mut k = 0;
    while !done(k, &x) {
        x = rk4_step(rhs, &x, dt, &mut max_drift);
        k += 1;
        times.push(k as f64 * dt);
        states.push(x);
    }
    if max_drift > 0.0 {
        log::debug!("renormalized onto the simplex; max drift {max_drift:e}");
    }
    Trajectory {
        dt,
        times,
        states,
        max_drift,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpidemicPhase {
    MonotoneDecline,
    RiseThenDecline,
}

/// `γ i0 / (μ B(i0))`: the largest initial susceptible proportion for which
/// infections decline from the start.
pub fn phase_threshold(i0: f64, params: &SirParams, dist: &GatheringDistribution) -> Result<f64> {
    let b = incidence_b(dist, params.p(), i0)?;
    Ok(params.gamma() * i0 / (params.mu() * b))
}

pub fn epidemic_phase(
    initial: &MacroState,
    params: &SirParams,
    dist: &GatheringDistribution,
) -> Result<EpidemicPhase> {
    if initial.i <= 0.0 {
        return Err(Error::DegenerateInput("epidemic phase needs i0 > 0"));
    }
    let threshold = phase_threshold(initial.i, params, dist)?;
    Ok(if initial.s <= threshold {
        EpidemicPhase::MonotoneDecline
    } else {
        EpidemicPhase::RiseThenDecline
    })
}

/// Limiting susceptible proportion read off a trajectory run to extinction.
pub fn final_size(trajectory: &Trajectory) -> Result<f64> {
    let last = trajectory.final_state();
    if last.i >= EXTINCTION_THRESHOLD {
        return Err(Error::NotConverged {
            time: trajectory.end_time(),
            infected: last.i,
            threshold: EXTINCTION_THRESHOLD,
        });
    }
    Ok(last.s)
}

/// Integrates until `i < 1e-8` (or `t = 1e4`) and returns the final size.
pub fn integrate_to_final_size(rhs: &impl VectorField, initial: MacroState, dt: f64) -> Result<f64> {
    let traj = integrate_until(rhs, initial, dt, MAX_FINAL_SIZE_HORIZON, |x| {
        x.i < EXTINCTION_THRESHOLD
    })?;
    final_size(&traj)
}

/// Closed-form phase curve `i(s)` of the logarithmic-gathering model, anchored
/// at `i(s0) = i0`.
pub fn logarithmic_phase_solution(
    s: f64,
    s0: f64,
    i0: f64,
    params: &SirParams,
    alpha: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", format!("{alpha} must lie in (0, 1)")));
    }
    if !(s0 > 0.0 && i0 > 0.0) {
        return Err(Error::DegenerateInput("phase curve needs s0 > 0 and i0 > 0"));
    }
    if !(s > 0.0 && s <= s0) {
        return Err(Error::Domain {
            what: "s",
            value: s,
            domain: "(0, s0]",
        });
    }
    if s == s0 {
        return Ok(i0);
    }
    let (a, b) = logarithmic_constants(alpha, params.p());
    let rho = params.gamma() * b / (params.mu() * a);
    let ratio = s / s0;
    let ln_ratio = ratio.ln();
    // i(s) = -1/b + C s^ρ + s/(ρ-1) with C = (i0 + 1/b - s0/(ρ-1)) / s0^ρ,
    // regrouped so that ρ → 1 is continuous and free of cancellation.
    let anchored = (i0 + 1.0 / b) * (rho * ln_ratio).exp();
    let linear = if (rho - 1.0).abs() < 1e-12 {
        // ρ = 1 branch: -1/b + C s - s log s
        -s * ln_ratio
    } else {
        -s * ((rho - 1.0) * ln_ratio).exp_m1() / (rho - 1.0)
    };
    Ok(-1.0 / b + anchored + linear)
}

/// Gathering trajectory paired with the classic one for `β = μ B'(0)`.
#[derive(Clone, Debug)]
pub struct ComparisonCurves {
    pub beta: f64,
    pub gathering: Trajectory,
    pub classic: Trajectory,
}

impl ComparisonCurves {
    /// `min_t (s_t - ŝ_t)` over the shared grid.
    pub fn min_susceptible_gap(&self) -> f64 {
        self.gathering
            .states
            .iter()
            .zip(&self.classic.states)
            .map(|(g, c)| g.s - c.s)
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn comparison_curves(
    initial: MacroState,
    params: &SirParams,
    dist: &GatheringDistribution,
    horizon: f64,
    dt: f64,
) -> Result<ComparisonCurves> {
    if !(initial.s > 0.0 && initial.i > 0.0) {
        return Err(Error::DegenerateInput("comparison needs s0 > 0 and i0 > 0"));
    }
    let beta = params.mu() * incidence_b_derivative_at_zero(dist, params.p())?;
    let gathering = integrate(&GatheringSir { params, dist }, initial, horizon, dt)?;
    let classic = integrate(
        &ClassicSir {
            beta,
            gamma: params.gamma(),
        },
        initial,
        horizon,
        dt,
    )?;
    Ok(ComparisonCurves {
        beta,
        gathering,
        classic,
    })
}
