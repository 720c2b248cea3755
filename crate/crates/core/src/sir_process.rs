//! The finite-population SIR process with gatherings.
//!
//! Each infected individual recovers at rate γ. Gatherings are convened at
//! total rate μN: a size Θ is drawn, the attendees are drawn without
//! replacement, and every susceptible attendee is infected independently
//! with probability `1 - (1-p)^Ĩ`, where Ĩ is the number of infected
//! attendees. A gathering larger than the population does nothing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Hypergeometric};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gatherings::GatheringDistribution;
use crate::incidence::{one_minus_pow_complement, SirParams};
use crate::jump_engine::{self, Channel, Jump, JumpTrajectory, RateFamily, Sampling, Transition};
use crate::meanfield_ode::MacroState;

/// Compartment counts of a population of `s + i + r` individuals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct FiniteState {
    pub s: u64,
    pub i: u64,
    pub r: u64,
}

impl FiniteState {
    pub fn new(s: u64, i: u64, r: u64) -> Self {
        Self { s, i, r }
    }

    pub fn population(&self) -> u64 {
        self.s + self.i + self.r
    }

    /// `(round(N s0), round(N i0), rest)`.
    pub fn from_proportions(n: u64, z: &MacroState) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("N", "population must be at least 1"));
        }
        let nf = n as f64;
        let s = ((nf * z.s).round() as u64).min(n);
        let i = ((nf * z.i).round() as u64).min(n - s);
        Ok(Self { s, i, r: n - s - i })
    }

    pub fn counts(&self) -> [i64; 3] {
        [self.s as i64, self.i as i64, self.r as i64]
    }

    /// Panics if a count is negative.
    pub fn from_counts(x: &[i64; 3]) -> Self {
        let c = |v: i64| u64::try_from(v).expect("counts are nonnegative");
        Self {
            s: c(x[0]),
            i: c(x[1]),
            r: c(x[2]),
        }
    }

    pub fn proportions(&self) -> [f64; 3] {
        let n = self.population() as f64;
        [self.s as f64 / n, self.i as f64 / n, self.r as f64 / n]
    }
}

/// Attendees of one gathering, by compartment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct GatheringDraw {
    pub s: u64,
    pub i: u64,
    pub r: u64,
}

impl GatheringDraw {
    pub fn size(&self) -> u64 {
        self.s + self.i + self.r
    }
}

/// Samples at most this large are drawn one individual at a time; the
/// library sampler's setup cost grows with the population.
const URN_DRAW_LIMIT: u64 = 64;

/// Number of marked items when drawing `draws` of `total` without replacement.
fn hypergeometric<R: Rng + ?Sized>(total: u64, marked: u64, draws: u64, rng: &mut R) -> u64 {
    if draws == 0 || marked == 0 {
        return 0;
    }
    if marked == total {
        return draws;
    }
    if draws == total {
        return marked;
    }
    if draws <= URN_DRAW_LIMIT {
        let mut hits = 0;
        for j in 0..draws {
            if rng.random_range(0..total - j) < marked - hits {
                hits += 1;
            }
        }
        return hits;
    }
    Hypergeometric::new(total, marked, draws)
        .expect("parameters checked by caller")
        .sample(rng)
}

/// Draws `theta` attendees without replacement from the `(S, I, R)` urns.
pub fn sample_composition<R: Rng + ?Sized>(state: &FiniteState, theta: u64, rng: &mut R) -> Result<GatheringDraw> {
    let n = state.population();
    if theta > n {
        return Err(Error::GatheringTooLarge {
            size: theta,
            population: n,
        });
    }
    let s = hypergeometric(n, state.s, theta, rng);
    let i = hypergeometric(n - state.s, state.i, theta - s, rng);
    Ok(GatheringDraw {
        s,
        i,
        r: theta - s - i,
    })
}

/// Number of susceptible attendees infected: Binomial(S̃, 1 - (1-p)^Ĩ).
pub fn sample_new_infections<R: Rng + ?Sized>(draw: &GatheringDraw, p: f64, rng: &mut R) -> u64 {
    if draw.s == 0 || draw.i == 0 {
        return 0;
    }
    let prob = one_minus_pow_complement(p, draw.i);
    if prob >= 1.0 {
        return draw.s;
    }
    Binomial::new(draw.s, prob)
        .expect("probability lies in [0, 1)")
        .sample(rng)
}

/// Infections caused by one gathering, or 0 when the drawn size exceeds N.
pub fn gathering_infections<R: Rng + ?Sized>(
    state: &FiniteState,
    dist: &GatheringDistribution,
    p: f64,
    rng: &mut R,
) -> u64 {
    let theta = dist.sample(rng);
    if theta > state.population() {
        return 0;
    }
    let draw = sample_composition(state, theta, rng).expect("size gated above");
    sample_new_infections(&draw, p, rng)
}

pub fn gathering_event<R: Rng + ?Sized>(
    state: &FiniteState,
    dist: &GatheringDistribution,
    p: f64,
    rng: &mut R,
) -> FiniteState {
    let j = gathering_infections(state, dist, p, rng);
    FiniteState {
        s: state.s - j,
        i: state.i + j,
        r: state.r,
    }
}

/// Exact law of the number of infections caused by one gathering at `state`:
/// entry `k` is `P[U = k]`. Sizes beyond the support table are ignored.
pub fn infection_count_pmf(state: &FiniteState, dist: &GatheringDistribution, p: f64) -> Vec<f64> {
    let n = state.population();
    let m = dist.max_size().min(n) as usize;
    let mut pmf = vec![0.0; state.s.min(m as u64) as usize + 1];

    let ln_fact: Vec<f64> = std::iter::once(0.0)
        .chain((1..=m).scan(0.0, |acc, j| {
            *acc += (j as f64).ln();
            Some(*acc)
        }))
        .collect();
    // ln(pop (pop-1) ... (pop-k+1)); -inf once k exceeds pop.
    let ln_falling = |pop: u64| -> Vec<f64> {
        let mut out = Vec::with_capacity(m + 1);
        let mut acc = 0.0;
        out.push(acc);
        for j in 0..m as u64 {
            acc += if j < pop { ((pop - j) as f64).ln() } else { f64::NEG_INFINITY };
            out.push(acc);
        }
        out
    };
    let (fs, fi, fr, fnn) = (ln_falling(state.s), ln_falling(state.i), ln_falling(state.r), ln_falling(n));
    let ln_q_unit = (-p).ln_1p();

    for &(theta, w) in dist.support() {
        if w == 0.0 {
            continue;
        }
        if theta > n {
            pmf[0] += w;
            continue;
        }
        let t = theta as usize;
        for a in 0..=t.min(state.s as usize) {
            for b in 0..=(t - a).min(state.i as usize) {
                let c = t - a - b;
                if c as u64 > state.r {
                    continue;
                }
                let ln_weight = ln_fact[t] - ln_fact[a] - ln_fact[b] - ln_fact[c] + fs[a] + fi[b] + fr[c] - fnn[t];
                let weight = w * ln_weight.exp();
                if a == 0 || b == 0 {
                    pmf[0] += weight;
                    continue;
                }
                let prob = one_minus_pow_complement(p, b as u64);
                if prob >= 1.0 {
                    pmf[a] += weight;
                    continue;
                }
                let ln_prob = prob.ln();
                let ln_miss = b as f64 * ln_q_unit;
                for (k, slot) in pmf.iter_mut().enumerate().take(a + 1) {
                    let ln_term =
                        ln_fact[a] - ln_fact[k] - ln_fact[a - k] + k as f64 * ln_prob + (a - k) as f64 * ln_miss;
                    *slot += weight * ln_term.exp();
                }
            }
        }
    }
    pmf
}

/// `E[U]` at `state`, from the exact law.
pub fn expected_new_infections(state: &FiniteState, dist: &GatheringDistribution, p: f64) -> f64 {
    infection_count_pmf(state, dist, p)
        .iter()
        .enumerate()
        .map(|(k, &w)| k as f64 * w)
        .sum()
}

const GATHERING: usize = 0;

/// Rate family of the SIR process with gatherings on a population of `N`.
#[derive(Clone, Copy, Debug)]
pub struct SirFamily<'a> {
    params: &'a SirParams,
    dist: &'a GatheringDistribution,
    population: u64,
}

impl<'a> SirFamily<'a> {
    pub fn new(params: &'a SirParams, dist: &'a GatheringDistribution, population: u64) -> Self {
        Self {
            params,
            dist,
            population,
        }
    }
}

impl RateFamily<3> for SirFamily<'_> {
    fn population(&self) -> u64 {
        self.population
    }

    fn channels(&self, x: &[i64; 3], out: &mut Vec<Channel<3>>) {
        let (s, i) = (x[0], x[1]);
        if i > 0 {
            out.push(Channel {
                rate: self.params.gamma() * i as f64 / self.population as f64,
                bound: self.params.gamma(),
                jump: Jump::Fixed([0, -1, 1]),
            });
        }
        // Without both susceptibles and infecteds a gathering cannot change the state.
        if s > 0 && i > 0 {
            out.push(Channel {
                rate: self.params.mu(),
                bound: self.params.mu(),
                jump: Jump::Sampled(GATHERING),
            });
        }
    }

    fn sample_jump<R: Rng + ?Sized>(&self, x: &[i64; 3], tag: usize, rng: &mut R) -> [i64; 3] {
        debug_assert_eq!(tag, GATHERING);
        let state = FiniteState::from_counts(x);
        let j = gathering_infections(&state, self.dist, self.params.p(), rng) as i64;
        [-j, j, 0]
    }

    fn transitions(&self, x: &[i64; 3]) -> Vec<Transition<3>> {
        let state = FiniteState::from_counts(x);
        let mut out = Vec::new();
        if state.i > 0 {
            out.push(Transition {
                amplitude: [0, -1, 1],
                rate: self.params.gamma() * state.i as f64 / self.population as f64,
                bound: self.params.gamma(),
            });
        }
        if state.s == 0 || state.i == 0 {
            return out;
        }
        let support = self.dist.support();
        let mu = self.params.mu();
        // P(Θ >= k) as a suffix sum so that tiny tails keep their precision.
        let mut tail = 0.0;
        let mut survival = vec![0.0; support.last().map_or(0, |&(k, _)| k as usize) + 2];
        let mut idx = support.len();
        for k in (0..survival.len()).rev() {
            while idx > 0 && support[idx - 1].0 as usize >= k {
                idx -= 1;
                tail += support[idx].1;
            }
            survival[k] = tail;
        }
        for (k, &w) in infection_count_pmf(&state, self.dist, self.params.p()).iter().enumerate().skip(1) {
            if w > 0.0 {
                out.push(Transition {
                    amplitude: [-(k as i64), k as i64, 0],
                    rate: mu * w,
                    bound: mu * survival[k],
                });
            }
        }
        out
    }
}

/// Random source for replica `replica` of a run at population `n`.
pub fn replica_rng(seed: u64, n: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((n << 32) ^ replica);
    rng
}

pub fn simulate_sir<R: Rng + ?Sized>(
    params: &SirParams,
    dist: &GatheringDistribution,
    x0: FiniteState,
    horizon: f64,
    rng: &mut R,
) -> Result<JumpTrajectory<3>> {
    let n = x0.population();
    simulate_sir_recorded(params, dist, x0, horizon, rng, Sampling::for_population(n))
}

pub fn simulate_sir_recorded<R: Rng + ?Sized>(
    params: &SirParams,
    dist: &GatheringDistribution,
    x0: FiniteState,
    horizon: f64,
    rng: &mut R,
    sampling: Sampling,
) -> Result<JumpTrajectory<3>> {
    let n = x0.population();
    if n == 0 {
        return Err(Error::invalid("N", "population must be at least 1"));
    }
    let family = SirFamily::new(params, dist, n);
    jump_engine::simulate_recorded(&family, x0.counts(), horizon, rng, sampling)
}

/// `1 - E[Π_{j<Θ} (N-j)/N · 1{Θ <= N}]`: probability that drawing a gathering
/// with replacement repeats someone or overflows the population.
pub fn coupling_mismatch_probability(n: u64, dist: &GatheringDistribution) -> f64 {
    let nf = n as f64;
    let mut matched = 0.0;
    for &(theta, w) in dist.support() {
        if theta > n {
            break;
        }
        let mut prod = 1.0;
        for j in 0..theta {
            prod *= (n - j) as f64 / nf;
        }
        matched += w * prod;
    }
    (1.0 - matched).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn params() -> SirParams {
        SirParams::new(0.5, 0.2, 0.1).unwrap()
    }

    #[test]
    fn trivial_compositions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let state = FiniteState::new(6, 3, 1);
        assert_eq!(sample_composition(&state, 0, &mut rng).unwrap(), GatheringDraw { s: 0, i: 0, r: 0 });
        let pure = FiniteState::new(40, 0, 0);
        for theta in [1, 7, 40] {
            let draw = sample_composition(&pure, theta, &mut rng).unwrap();
            assert_eq!(draw, GatheringDraw { s: theta, i: 0, r: 0 });
        }
        assert!(matches!(
            sample_composition(&state, 11, &mut rng),
            Err(Error::GatheringTooLarge { size: 11, population: 10 })
        ));
        for _ in 0..1000 {
            let d = sample_composition(&state, 4, &mut rng).unwrap();
            assert_eq!(d.size(), 4);
            assert!(d.s <= 6 && d.i <= 3 && d.r <= 1);
        }
    }

    #[test]
    fn trivial_infections() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            assert_eq!(sample_new_infections(&GatheringDraw { s: 5, i: 0, r: 2 }, 0.9, &mut rng), 0);
            assert_eq!(sample_new_infections(&GatheringDraw { s: 0, i: 3, r: 2 }, 0.9, &mut rng), 0);
            assert_eq!(sample_new_infections(&GatheringDraw { s: 4, i: 1, r: 0 }, 1.0, &mut rng), 4);
        }
    }

    #[test]
    fn trivial_gathering_events() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dist = GatheringDistribution::fixed(5);
        let healthy = FiniteState::new(70, 0, 30);
        for _ in 0..100 {
            assert_eq!(gathering_event(&healthy, &dist, 0.5, &mut rng), healthy);
        }
        let state = FiniteState::new(7, 2, 1);
        let everyone = GatheringDistribution::fixed(10);
        assert_eq!(gathering_event(&state, &everyone, 1.0, &mut rng), FiniteState::new(0, 9, 1));
        let too_big = GatheringDistribution::fixed(11);
        assert_eq!(gathering_event(&state, &too_big, 1.0, &mut rng), state);
    }

    #[test]
    fn proportions_round() {
        let z = MacroState::new(0.99, 0.01, 0.0).unwrap();
        assert_eq!(FiniteState::from_proportions(1000, &z).unwrap(), FiniteState::new(990, 10, 0));
        assert_eq!(FiniteState::from_proportions(150, &z).unwrap(), FiniteState::new(149, 1, 0));
        assert!(FiniteState::from_proportions(0, &z).is_err());
    }

    #[test]
    fn disease_free_start_is_constant() {
        let dist = GatheringDistribution::fixed(5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let traj = simulate_sir(&params(), &dist, FiniteState::new(500, 0, 0), 50.0, &mut rng).unwrap();
        assert_eq!(traj.states, vec![[500, 0, 0]]);
    }

    #[test]
    fn exact_law_sums_to_one() {
        let dist = GatheringDistribution::poisson(20f64.sqrt()).unwrap();
        for state in [FiniteState::new(60, 30, 10), FiniteState::new(3, 2, 1), FiniteState::new(9000, 500, 500)] {
            let total: f64 = infection_count_pmf(&state, &dist, 0.2).iter().sum();
            assert!((total - 1.0).abs() < 1e-11, "{state:?}: {total}");
        }
        // Only one composition when everyone attends.
        let pmf = infection_count_pmf(&FiniteState::new(2, 1, 0), &GatheringDistribution::fixed(3), 0.5);
        assert!((pmf[0] - 0.25).abs() < 1e-15 && (pmf[1] - 0.5).abs() < 1e-15 && (pmf[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn transitions_respect_bounds() {
        let p = params();
        for dist in [
            GatheringDistribution::fixed(5),
            GatheringDistribution::poisson(4.0).unwrap(),
            GatheringDistribution::logarithmic(0.6).unwrap(),
        ] {
            let family = SirFamily::new(&p, &dist, 200);
            for tr in family.transitions(&[120, 50, 30]) {
                assert!(tr.rate <= tr.bound * (1.0 + 1e-12), "{tr:?}");
            }
        }
    }

    #[test]
    fn drift_vanishes_without_infecteds() {
        let p = params();
        let dist = GatheringDistribution::fixed(5);
        let family = SirFamily::new(&p, &dist, 100);
        assert_eq!(jump_engine::expected_drift(&family, &[0.7, 0.0, 0.3]).unwrap(), [0.0; 3]);
    }

    #[test]
    fn mismatch_examples() {
        for n in [1, 2, 50, 10_000] {
            assert_eq!(coupling_mismatch_probability(n, &GatheringDistribution::fixed(1)), 0.0);
        }
        let two = coupling_mismatch_probability(100, &GatheringDistribution::fixed(2));
        assert!((two - 0.01).abs() < 1e-16);
        assert_eq!(coupling_mismatch_probability(4, &GatheringDistribution::fixed(5)), 1.0);
        let five: Vec<f64> = [100, 1000, 10_000]
            .iter()
            .map(|&n| coupling_mismatch_probability(n, &GatheringDistribution::fixed(5)))
            .collect();
        assert!(five[0] > five[1] && five[1] > five[2] && five[2] > 0.0);
        for (&n, &m) in [100.0, 1000.0, 10_000.0].iter().zip(&five) {
            let birthday = 10.0 / n;
            assert!(m <= birthday && m > 0.9 * birthday, "{m} vs {birthday}");
        }
    }

    #[test]
    fn replica_streams_differ() {
        let a: u64 = replica_rng(7, 100, 0).random();
        let b: u64 = replica_rng(7, 100, 1).random();
        let c: u64 = replica_rng(7, 1000, 0).random();
        assert!(a != b && a != c && b != c);
        assert_eq!(a, replica_rng(7, 100, 0).random::<u64>());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn paths_conserve_and_are_monotone(
            seed in any::<u64>(),
            n in 5u64..400,
            i_frac in 0.0f64..0.5,
            theta in 2u64..8,
        ) {
            let dist = GatheringDistribution::fixed(theta);
            let i = ((n as f64 * i_frac) as u64).max(1);
            let x0 = FiniteState::new(n - i, i, 0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let traj = simulate_sir(&params(), &dist, x0, 30.0, &mut rng).unwrap();
            for w in traj.states.windows(2) {
                let (a, b) = (w[0], w[1]);
                prop_assert_eq!(b.iter().sum::<i64>(), n as i64);
                prop_assert!(b[0] <= a[0]);
                prop_assert!(b[2] >= a[2]);
                let di = b[1] - a[1];
                prop_assert!(di == -1 && b[2] == a[2] + 1 || di >= 0 && b[2] == a[2]);
            }
        }
    }
}
