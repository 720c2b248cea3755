//! The gathering incidence function `B(i) = E[Θ(1 - (1 - p i)^(Θ-1))]` and
//! the basic reproduction number built from it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gatherings::{GatheringDistribution, GatheringLaw};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    mu: f64,
    p: f64,
    gamma: f64,
}

/// Rates of the gathering SIR model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct SirParams {
    mu: f64,
    p: f64,
    gamma: f64,
}

impl TryFrom<RawParams> for SirParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        SirParams::new(raw.mu, raw.p, raw.gamma)
    }
}

impl From<SirParams> for RawParams {
    fn from(p: SirParams) -> Self {
        RawParams {
            mu: p.mu,
            p: p.p,
            gamma: p.gamma,
        }
    }
}

impl SirParams {
    /// `mu`: gatherings per individual per unit time; `p`: transmission
    /// probability per exposure; `gamma`: recovery rate.
    pub fn new(mu: f64, p: f64, gamma: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::invalid("params.mu", format!("{mu} must be positive and finite")));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid("params.p", format!("{p} must lie in (0, 1]")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(
                "params.gamma",
                format!("{gamma} must be positive and finite"),
            ));
        }
        Ok(Self { mu, p, gamma })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Probability that a single exposure does not transmit.
    pub fn q(&self) -> f64 {
        1.0 - self.p
    }
}

/// `1 - (1 - x)^n` for `x` in `[0, 1]`, accurate for small `x` and large `n`.
pub(crate) fn one_minus_pow_complement(x: f64, n: u64) -> f64 {
    match n {
        0 => 0.0,
        1 => x,
        _ => -((n as f64) * (-x).ln_1p()).exp_m1(),
    }
}

/// `k (1 - (1 - p i)^(k-1))`: expected new infections contributed by a
/// gathering of exactly `k` attendees, per unit susceptible proportion.
fn size_term(k: u64, pi: f64) -> f64 {
    match k {
        0 | 1 => 0.0,
        2 => 2.0 * pi,
        _ => k as f64 * one_minus_pow_complement(pi, k - 1),
    }
}

fn check_infected(i: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&i) {
        return Err(Error::Domain {
            what: "i",
            value: i,
            domain: "[0, 1]",
        });
    }
    Ok(())
}

/// `B(i)`, using the family closed form when one exists.
pub fn incidence_b(dist: &GatheringDistribution, p: f64, i: f64) -> Result<f64> {
    check_infected(i)?;
    let pi = p * i;
    Ok(match *dist.law() {
        GatheringLaw::Fixed { theta } => size_term(theta, pi),
        GatheringLaw::Binomial { k, alpha } => {
            if k < 2 {
                0.0
            } else {
                k as f64 * alpha * one_minus_pow_complement(alpha * pi, k - 1)
            }
        }
        GatheringLaw::Poisson { lambda } => -lambda * (-lambda * pi).exp_m1(),
        GatheringLaw::Logarithmic { alpha } => {
            let (a, b) = logarithmic_constants(alpha, p);
            a * i / (1.0 + b * i)
        }
        GatheringLaw::Empirical { .. } => dist.expect(|k| size_term(k, pi)),
    })
}

/// `B(i)` as a plain expectation over the support table, ignoring closed forms.
pub fn incidence_b_generic(dist: &GatheringDistribution, p: f64, i: f64) -> Result<f64> {
    check_infected(i)?;
    Ok(dist.expect(|k| size_term(k, p * i)))
}

/// Constants `(a, b)` with `B(i) = a i / (1 + b i)` for a logarithmic law.
pub fn logarithmic_constants(alpha: f64, p: f64) -> (f64, f64) {
    let one_minus = 1.0 - alpha;
    let a = -alpha * alpha * p / (one_minus * one_minus * (-alpha).ln_1p());
    let b = alpha * p / one_minus;
    (a, b)
}

/// `B'(0) = p E[Θ(Θ-1)]`.
pub fn incidence_b_derivative_at_zero(dist: &GatheringDistribution, p: f64) -> Result<f64> {
    dist.require_admissible()?;
    Ok(p * dist.second_factorial_moment())
}

/// `R0 = μ p E[Θ(Θ-1)] / γ`.
pub fn basic_reproduction_number(params: &SirParams, dist: &GatheringDistribution) -> Result<f64> {
    dist.require_admissible()?;
    Ok(params.mu() * params.p() * dist.second_factorial_moment() / params.gamma())
}
