//! Exact simulation of density-dependent jump Markov processes on
//! `{0, ..., N}^D`, where a jump `x -> x + ℓ` happens at rate `N λ_ℓ(x)`.
//!
//! A [`RateFamily`] describes the per-capita rates. For simulation it hands
//! out [`Channel`]s: either a single amplitude, or a compound channel whose
//! amplitude is drawn by the family when it fires (gatherings are simulated
//! this way rather than by tabulating every `ℓ_k`). For drift computations
//! the family enumerates the exact `(ℓ, λ_ℓ)` pairs instead.
//!
//! The sampler is the direct method: exponential waiting time with the total
//! rate, then a channel chosen proportionally to its rate.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};

/// Relative slack allowed when comparing a rate to its declared bound.
const BOUND_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Jump<const D: usize> {
    Fixed([i64; D]),
    /// Compound channel; the tag is passed back to [`RateFamily::sample_jump`].
    Sampled(usize),
}

/// One way the process can move from the current state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Channel<const D: usize> {
    /// Per-capita rate; the engine multiplies by `N`.
    pub rate: f64,
    /// Uniform-in-`N` bound the family declares for this rate.
    pub bound: f64,
    pub jump: Jump<D>,
}

/// An amplitude `ℓ` with its per-capita rate `λ_ℓ(x)` and bound `λ̄_ℓ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition<const D: usize> {
    pub amplitude: [i64; D],
    pub rate: f64,
    pub bound: f64,
}

pub trait RateFamily<const D: usize> {
    fn population(&self) -> u64;

    /// Pushes the channels with positive rate at `x` into `out`.
    fn channels(&self, x: &[i64; D], out: &mut Vec<Channel<D>>);

    /// Draws the amplitude of compound channel `tag` fired at `x`.
    fn sample_jump<R: Rng + ?Sized>(&self, x: &[i64; D], tag: usize, rng: &mut R) -> [i64; D] {
        let _ = (x, rng);
        panic!("family declared compound channel {tag} but does not sample it")
    }

    /// Exact amplitudes and rates at `x`. Families with compound channels
    /// must override this.
    fn transitions(&self, x: &[i64; D]) -> Vec<Transition<D>> {
        let mut channels = Vec::new();
        self.channels(x, &mut channels);
        channels
            .into_iter()
            .map(|c| match c.jump {
                Jump::Fixed(amplitude) => Transition {
                    amplitude,
                    rate: c.rate,
                    bound: c.bound,
                },
                Jump::Sampled(tag) => panic!("compound channel {tag} has no exact transition list"),
            })
            .collect()
    }
}

/// Receives the path of a simulation as it is generated.
pub trait JumpObserver<const D: usize> {
    fn start(&mut self, x0: &[i64; D]);
    /// Called after every event with the post-event state.
    fn jump(&mut self, t: f64, x: &[i64; D]);
    fn finish(&mut self, horizon: f64);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    /// Every event is stored.
    Events,
    /// States are read off a uniform grid of this many points on `[0, T]`.
    Grid(usize),
}

/// Populations above this size are recorded on a grid by default.
pub const FULL_LOG_MAX_POPULATION: u64 = 10_000;
/// Grid size used when the full event log is not kept.
pub const DEFAULT_GRID_POINTS: usize = 1000;

impl Sampling {
    pub fn for_population(n: u64) -> Self {
        if n <= FULL_LOG_MAX_POPULATION {
            Sampling::Events
        } else {
            Sampling::Grid(DEFAULT_GRID_POINTS)
        }
    }
}

/// A recorded path: `(t, state)` pairs starting with `(0, x0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpTrajectory<const D: usize> {
    pub population: u64,
    pub times: Vec<f64>,
    pub states: Vec<[i64; D]>,
    /// The path is defined (piecewise constant) up to this time.
    pub horizon: f64,
    pub sampling: Sampling,
}

impl<const D: usize> JumpTrajectory<D> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[i64; D] {
        self.states.last().expect("trajectories hold the initial state")
    }

    /// Right-continuous state at time `t`.
    pub fn state_at(&self, t: f64) -> &[i64; D] {
        let idx = self.times.partition_point(|&s| s <= t);
        &self.states[idx.saturating_sub(1)]
    }
}

/// Records every event.
#[derive(Debug)]
pub struct EventLog<const D: usize> {
    traj: JumpTrajectory<D>,
}

impl<const D: usize> EventLog<D> {
    pub fn new(population: u64) -> Self {
        Self {
            traj: JumpTrajectory {
                population,
                times: Vec::new(),
                states: Vec::new(),
                horizon: 0.0,
                sampling: Sampling::Events,
            },
        }
    }

    pub fn into_trajectory(self) -> JumpTrajectory<D> {
        self.traj
    }
}

impl<const D: usize> JumpObserver<D> for EventLog<D> {
    fn start(&mut self, x0: &[i64; D]) {
        self.traj.times.push(0.0);
        self.traj.states.push(*x0);
    }

    fn jump(&mut self, t: f64, x: &[i64; D]) {
        self.traj.times.push(t);
        self.traj.states.push(*x);
    }

    fn finish(&mut self, horizon: f64) {
        self.traj.horizon = horizon;
    }
}

/// Samples the path on `points` uniformly spaced times covering `[0, T]`.
#[derive(Debug)]
pub struct GridRecorder<const D: usize> {
    step: f64,
    current: [i64; D],
    traj: JumpTrajectory<D>,
}

impl<const D: usize> GridRecorder<D> {
    pub fn new(population: u64, horizon: f64, points: usize) -> Self {
        let points = points.max(2);
        Self {
            step: horizon / (points - 1) as f64,
            current: [0; D],
            traj: JumpTrajectory {
                population,
                times: Vec::with_capacity(points),
                states: Vec::with_capacity(points),
                horizon,
                sampling: Sampling::Grid(points),
            },
        }
    }

    fn grid_time(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    fn flush_before(&mut self, t: f64, inclusive: bool) {
        let Sampling::Grid(points) = self.traj.sampling else {
            unreachable!()
        };
        loop {
            let k = self.traj.times.len();
            if k >= points {
                break;
            }
            let gt = if k + 1 == points {
                self.traj.horizon
            } else {
                self.grid_time(k)
            };
            if gt < t || (inclusive && gt <= t) {
                self.traj.times.push(gt);
                self.traj.states.push(self.current);
            } else {
                break;
            }
        }
    }

    pub fn into_trajectory(self) -> JumpTrajectory<D> {
        self.traj
    }
}

impl<const D: usize> JumpObserver<D> for GridRecorder<D> {
    fn start(&mut self, x0: &[i64; D]) {
        self.current = *x0;
    }

    fn jump(&mut self, t: f64, x: &[i64; D]) {
        self.flush_before(t, false);
        self.current = *x;
    }

    fn finish(&mut self, horizon: f64) {
        self.flush_before(horizon, true);
    }
}

/// What happened during one run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSummary<const D: usize> {
    pub events: u64,
    pub final_state: [i64; D],
    /// Time the process entered a state with zero total rate, if it did.
    pub absorbed_at: Option<f64>,
}

fn in_box<const D: usize>(x: &[i64; D], n: u64) -> bool {
    x.iter().all(|&c| c >= 0 && c as u64 <= n)
}

/// Runs the process from `x0` up to `horizon`, streaming the path into `observer`.
pub fn simulate_observed<const D: usize, F, R, O>(
    family: &F,
    x0: [i64; D],
    horizon: f64,
    rng: &mut R,
    observer: &mut O,
) -> Result<RunSummary<D>>
where
    F: RateFamily<D>,
    R: Rng + ?Sized,
    O: JumpObserver<D>,
{
    let n = family.population();
    if !in_box(&x0, n) {
        return Err(Error::invalid("x0", format!("{x0:?} is outside [0, {n}]^{D}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("T", format!("horizon {horizon} must be positive and finite")));
    }
    let scale = n as f64;
    let mut channels = Vec::new();
    let mut x = x0;
    let mut t = 0.0;
    let mut events = 0;
    let mut absorbed_at = None;
    observer.start(&x);
    loop {
        channels.clear();
        family.channels(&x, &mut channels);
        let mut total = 0.0;
        for c in &channels {
            if c.rate > c.bound * (1.0 + BOUND_SLACK) {
                return Err(Error::RateBoundExceeded {
                    rate: c.rate,
                    bound: c.bound,
                    state: x.to_vec(),
                });
            }
            total += c.rate;
        }
        if total <= 0.0 {
            absorbed_at = Some(t);
            break;
        }
        let wait: f64 = Exp1.sample(rng);
        let next = t + wait / (scale * total);
        if next > horizon {
            break;
        }
        t = next;

        let mut u = rng.random::<f64>() * total;
        let mut chosen = None;
        for c in &channels {
            if c.rate <= 0.0 {
                continue;
            }
            chosen = Some(c);
            if u < c.rate {
                break;
            }
            u -= c.rate;
        }
        let channel = chosen.expect("positive total rate implies a positive channel");
        let amplitude = match channel.jump {
            Jump::Fixed(a) => a,
            Jump::Sampled(tag) => family.sample_jump(&x, tag, rng),
        };
        let mut y = x;
        for (c, a) in y.iter_mut().zip(amplitude) {
            *c += a;
        }
        if !in_box(&y, n) {
            return Err(Error::IllegalState {
                from: x.to_vec(),
                amplitude: amplitude.to_vec(),
                population: n,
            });
        }
        x = y;
        events += 1;
        observer.jump(t, &x);
    }
    observer.finish(horizon);
    Ok(RunSummary {
        events,
        final_state: x,
        absorbed_at,
    })
}

/// Runs the process and records it according to `sampling`.
pub fn simulate_recorded<const D: usize, F, R>(
    family: &F,
    x0: [i64; D],
    horizon: f64,
    rng: &mut R,
    sampling: Sampling,
) -> Result<JumpTrajectory<D>>
where
    F: RateFamily<D>,
    R: Rng + ?Sized,
{
    let n = family.population();
    match sampling {
        Sampling::Events => {
            let mut log = EventLog::new(n);
            simulate_observed(family, x0, horizon, rng, &mut log)?;
            Ok(log.into_trajectory())
        }
        Sampling::Grid(points) => {
            let mut grid = GridRecorder::new(n, horizon, points);
            simulate_observed(family, x0, horizon, rng, &mut grid)?;
            Ok(grid.into_trajectory())
        }
    }
}

/// Runs the process keeping the full event log.
pub fn simulate<const D: usize, F, R>(family: &F, x0: [i64; D], horizon: f64, rng: &mut R) -> Result<JumpTrajectory<D>>
where
    F: RateFamily<D>,
    R: Rng + ?Sized,
{
    simulate_recorded(family, x0, horizon, rng, Sampling::Events)
}

/// `F^N(z) = Σ_ℓ ℓ λ_ℓ(N z)` for a grid point `z` of `{0, 1/N, ..., 1}^D`.
pub fn expected_drift<const D: usize, F: RateFamily<D>>(family: &F, z: &[f64; D]) -> Result<[f64; D]> {
    let n = family.population() as f64;
    let mut x = [0i64; D];
    for (c, &zc) in x.iter_mut().zip(z) {
        let scaled = zc * n;
        let rounded = scaled.round();
        if (scaled - rounded).abs() > 1e-9 * n.max(1.0) || rounded < 0.0 || rounded > n {
            return Err(Error::Domain {
                what: "N z",
                value: scaled,
                domain: "the integer grid {0, ..., N}",
            });
        }
        *c = rounded as i64;
    }
    let mut drift = [0.0; D];
    for tr in family.transitions(&x) {
        for (d, &a) in drift.iter_mut().zip(&tr.amplitude) {
            *d += a as f64 * tr.rate;
        }
    }
    Ok(drift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Each of `x` individuals dies at rate γ.
    struct PureDeath {
        n: u64,
        gamma: f64,
    }

    impl RateFamily<1> for PureDeath {
        fn population(&self) -> u64 {
            self.n
        }

        fn channels(&self, x: &[i64; 1], out: &mut Vec<Channel<1>>) {
            if x[0] > 0 {
                out.push(Channel {
                    rate: self.gamma * x[0] as f64 / self.n as f64,
                    bound: self.gamma,
                    jump: Jump::Fixed([-1]),
                });
            }
        }
    }

    /// Arrivals at constant total rate `n * c` until the box is full.
    struct Arrivals {
        n: u64,
        c: f64,
    }

    impl RateFamily<1> for Arrivals {
        fn population(&self) -> u64 {
            self.n
        }

        fn channels(&self, x: &[i64; 1], out: &mut Vec<Channel<1>>) {
            if (x[0] as u64) < self.n {
                out.push(Channel {
                    rate: self.c,
                    bound: self.c,
                    jump: Jump::Fixed([1]),
                });
            }
        }
    }

    struct Frozen;

    impl RateFamily<2> for Frozen {
        fn population(&self) -> u64 {
            10
        }

        fn channels(&self, _: &[i64; 2], _: &mut Vec<Channel<2>>) {}
    }

    /// Ignores the box constraint.
    struct Leaky;

    impl RateFamily<1> for Leaky {
        fn population(&self) -> u64 {
            3
        }

        fn channels(&self, _: &[i64; 1], out: &mut Vec<Channel<1>>) {
            out.push(Channel {
                rate: 1.0,
                bound: 1.0,
                jump: Jump::Fixed([1]),
            });
        }
    }

    struct OverBound;

    impl RateFamily<1> for OverBound {
        fn population(&self) -> u64 {
            3
        }

        fn channels(&self, _: &[i64; 1], out: &mut Vec<Channel<1>>) {
            out.push(Channel {
                rate: 2.0,
                bound: 1.0,
                jump: Jump::Fixed([0]),
            });
        }
    }

    /// Random walk with a compound channel that jumps by a random amount.
    struct Walk {
        n: u64,
    }

    impl RateFamily<2> for Walk {
        fn population(&self) -> u64 {
            self.n
        }

        fn channels(&self, x: &[i64; 2], out: &mut Vec<Channel<2>>) {
            if x[0] > 0 {
                out.push(Channel {
                    rate: 0.5,
                    bound: 0.5,
                    jump: Jump::Sampled(0),
                });
            }
            if x[1] > 0 {
                out.push(Channel {
                    rate: x[1] as f64 / self.n as f64,
                    bound: 1.0,
                    jump: Jump::Fixed([1, -1]),
                });
            }
        }

        fn sample_jump<R: Rng + ?Sized>(&self, x: &[i64; 2], _: usize, rng: &mut R) -> [i64; 2] {
            let k = rng.random_range(0..=x[0].min(3));
            [-k, k]
        }
    }

    #[test]
    fn zero_rates_absorb_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traj = simulate(&Frozen, [4, 6], 10.0, &mut rng).unwrap();
        assert_eq!(traj.times, vec![0.0]);
        assert_eq!(traj.states, vec![[4, 6]]);
        assert_eq!(traj.horizon, 10.0);
        let drift = expected_drift(&Frozen, &[0.4, 0.6]).unwrap();
        assert_eq!(drift, [0.0, 0.0]);
    }

    #[test]
    fn leaving_the_box_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = simulate(&Leaky, [0], 100.0, &mut rng).unwrap_err();
        assert!(matches!(err, Error::IllegalState { .. }), "{err}");
    }

    #[test]
    fn rate_bounds_are_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = simulate(&OverBound, [0], 1.0, &mut rng).unwrap_err();
        assert!(matches!(err, Error::RateBoundExceeded { .. }), "{err}");
    }

    #[test]
    fn initial_state_must_be_in_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(simulate(&PureDeath { n: 5, gamma: 1.0 }, [6], 1.0, &mut rng).is_err());
        assert!(simulate(&PureDeath { n: 5, gamma: 1.0 }, [5], 0.0, &mut rng).is_err());
    }

    #[test]
    fn pure_death_mean_decays_exponentially() {
        let (n, gamma, replicas) = (100u64, 1.0, 1000);
        let family = PureDeath { n, gamma };
        let checkpoints = [0.25, 0.5, 1.0, 2.0];
        let mut sums = [0.0; 4];
        for r in 0..replicas {
            let mut rng = ChaCha8Rng::seed_from_u64(r);
            let traj = simulate(&family, [n as i64], 3.0, &mut rng).unwrap();
            for (sum, &t) in sums.iter_mut().zip(&checkpoints) {
                *sum += traj.state_at(t)[0] as f64 / n as f64;
            }
        }
        for (sum, &t) in sums.iter().zip(&checkpoints) {
            let mean = sum / replicas as f64;
            let p = (-gamma * t).exp();
            let se = (p * (1.0 - p) / (n as f64 * replicas as f64)).sqrt();
            assert!((mean - p).abs() < 4.0 * se, "t {t}: {mean} vs {p}");
        }
    }

    #[test]
    fn event_counts_are_poisson() {
        let (n, c, horizon, replicas) = (1_000_000u64, 5e-6, 2.0, 10_000);
        let family = Arrivals { n, c };
        let lambda_t = n as f64 * c * horizon;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let counts: Vec<f64> = (0..replicas)
            .map(|_| {
                let summary =
                    simulate_observed(&family, [0], horizon, &mut rng, &mut EventLog::new(n)).unwrap();
                summary.events as f64
            })
            .collect();
        let m = replicas as f64;
        let mean = counts.iter().sum::<f64>() / m;
        let var = counts.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / (m - 1.0);
        assert!((mean - lambda_t).abs() < 4.0 * (lambda_t / m).sqrt(), "mean {mean}");
        let var_se = ((lambda_t + 2.0 * lambda_t * lambda_t) / m).sqrt();
        assert!((var - lambda_t).abs() < 4.0 * var_se, "var {var}");
    }

    #[test]
    fn seed_determinism() {
        let family = Walk { n: 50 };
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            simulate(&family, [30, 20], 5.0, &mut rng).unwrap()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn grid_recorder_matches_event_log() {
        let family = Walk { n: 50 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let full = simulate(&family, [30, 20], 5.0, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grid = simulate_recorded(&family, [30, 20], 5.0, &mut rng, Sampling::Grid(101)).unwrap();
        assert_eq!(grid.len(), 101);
        assert_eq!(*grid.times.last().unwrap(), 5.0);
        for (t, x) in grid.times.iter().zip(&grid.states) {
            assert_eq!(x, full.state_at(*t), "t {t}");
        }
    }

    #[test]
    fn drift_of_linear_death() {
        let family = PureDeath { n: 200, gamma: 0.7 };
        let drift = expected_drift(&family, &[0.25]).unwrap();
        assert!((drift[0] + 0.7 * 0.25).abs() < 1e-15);
        assert!(matches!(expected_drift(&family, &[0.2501]), Err(Error::Domain { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn paths_stay_in_box(seed in any::<u64>(), n in 1u64..60, split in 0.0f64..1.0) {
            let family = Walk { n };
            let a = (split * n as f64).floor() as i64;
            let x0 = [a, n as i64 - a];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let traj = simulate(&family, x0, 10.0, &mut rng).unwrap();
            for w in traj.times.windows(2) {
                prop_assert!(w[1] > w[0]);
            }
            for x in &traj.states {
                prop_assert!(x.iter().all(|&c| c >= 0 && c as u64 <= n));
                prop_assert_eq!(x[0] + x[1], n as i64);
            }
        }
    }
}
