//! Laws for the size of a social gathering.
//!
//! A [`GatheringDistribution`] wraps one of five families (point mass,
//! binomial, Poisson, logarithmic, finite empirical pmf) together with a
//! precomputed support table. Families with unbounded support are truncated
//! at the first `k*` whose tail mass `P(Θ > k*)` drops below [`TAIL_MASS`];
//! that table backs generic expectations and inverse-CDF sampling, while the
//! closed forms are used wherever they exist.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Tail mass below which unbounded supports are truncated.
pub const TAIL_MASS: f64 = 1e-12;

/// Empirical pmfs whose total is within this distance of 1 are renormalized.
pub const EMPIRICAL_SUM_TOLERANCE: f64 = 1e-9;

/// Serialized form of a gathering-size law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum GatheringLaw {
    Fixed {
        theta: u64,
    },
    Binomial {
        #[serde(alias = "K")]
        k: u64,
        alpha: f64,
    },
    Poisson {
        lambda: f64,
    },
    Logarithmic {
        alpha: f64,
    },
    Empirical {
        pmf: Vec<(u64, f64)>,
    },
}

#[derive(Clone, Debug)]
enum Sampler {
    Fixed(u64),
    Binomial(Binomial),
    Poisson(Poisson<f64>),
    /// Inverse CDF over the support table; `cdf` ends at exactly 1.
    Table { cdf: Vec<f64> },
}

/// The law of Θ, validated and with its support table precomputed.
///
/// Values are immutable once built and can be shared freely across threads.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "GatheringLaw", into = "GatheringLaw")]
pub struct GatheringDistribution {
    law: GatheringLaw,
    /// `(k, P(Θ = k))` in increasing `k`, truncated for unbounded families.
    support: Vec<(u64, f64)>,
    sampler: Sampler,
}

impl PartialEq for GatheringDistribution {
    fn eq(&self, other: &Self) -> bool {
        self.law == other.law
    }
}

impl TryFrom<GatheringLaw> for GatheringDistribution {
    type Error = Error;

    fn try_from(law: GatheringLaw) -> Result<Self> {
        GatheringDistribution::new(law)
    }
}

impl From<GatheringDistribution> for GatheringLaw {
    fn from(dist: GatheringDistribution) -> Self {
        dist.law
    }
}

fn check_probability(field: &str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::invalid(field, format!("{value} is not a probability in [0, 1]")));
    }
    Ok(())
}

impl GatheringDistribution {
    pub fn new(law: GatheringLaw) -> Result<Self> {
        let law = match law {
            GatheringLaw::Binomial { alpha, .. } => {
                check_probability("dist.alpha", alpha)?;
                law
            }
            GatheringLaw::Poisson { lambda } => {
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::invalid("dist.lambda", format!("{lambda} must be positive and finite")));
                }
                law
            }
            GatheringLaw::Logarithmic { alpha } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::invalid("dist.alpha", format!("{alpha} must lie in (0, 1)")));
                }
                law
            }
            GatheringLaw::Empirical { pmf } => GatheringLaw::Empirical {
                pmf: normalize_empirical(pmf)?,
            },
            GatheringLaw::Fixed { .. } => law,
        };
        let support = build_support(&law);
        let sampler = match law {
            GatheringLaw::Fixed { theta } => Sampler::Fixed(theta),
            GatheringLaw::Binomial { k, alpha } => Sampler::Binomial(
                Binomial::new(k, alpha).map_err(|e| Error::invalid("dist", e.to_string()))?,
            ),
            GatheringLaw::Poisson { lambda } => Sampler::Poisson(
                Poisson::new(lambda).map_err(|e| Error::invalid("dist.lambda", e.to_string()))?,
            ),
            GatheringLaw::Logarithmic { .. } | GatheringLaw::Empirical { .. } => {
                let mut acc = 0.0;
                let mut cdf: Vec<f64> = support
                    .iter()
                    .map(|&(_, w)| {
                        acc += w;
                        acc
                    })
                    .collect();
                let total = acc;
                for c in &mut cdf {
                    *c /= total;
                }
                if let Some(last) = cdf.last_mut() {
                    *last = 1.0;
                }
                Sampler::Table { cdf }
            }
        };
        Ok(Self { law, support, sampler })
    }

    pub fn fixed(theta: u64) -> Self {
        Self::new(GatheringLaw::Fixed { theta }).expect("point masses are always valid")
    }

    pub fn binomial(k: u64, alpha: f64) -> Result<Self> {
        Self::new(GatheringLaw::Binomial { k, alpha })
    }

    pub fn poisson(lambda: f64) -> Result<Self> {
        Self::new(GatheringLaw::Poisson { lambda })
    }

    pub fn logarithmic(alpha: f64) -> Result<Self> {
        Self::new(GatheringLaw::Logarithmic { alpha })
    }

    pub fn empirical(pmf: Vec<(u64, f64)>) -> Result<Self> {
        Self::new(GatheringLaw::Empirical { pmf })
    }

    pub fn law(&self) -> &GatheringLaw {
        &self.law
    }

    /// Support table `(k, P(Θ = k))`. Exact for bounded families; for Poisson
    /// and logarithmic laws it stops at the tail-mass cutoff.
    pub fn support(&self) -> &[(u64, f64)] {
        &self.support
    }

    /// True when the support is finite and the table is exact.
    pub fn has_finite_support(&self) -> bool {
        !matches!(self.law, GatheringLaw::Poisson { .. } | GatheringLaw::Logarithmic { .. })
    }

    /// Largest gathering size in the support table.
    pub fn max_size(&self) -> u64 {
        self.support.last().map_or(0, |&(k, _)| k)
    }

    /// `P(Θ ≥ 2) > 0`. The second-moment condition holds for every family here.
    pub fn is_admissible(&self) -> bool {
        match self.law {
            GatheringLaw::Fixed { theta } => theta >= 2,
            GatheringLaw::Binomial { k, alpha } => k >= 2 && alpha > 0.0,
            GatheringLaw::Poisson { .. } | GatheringLaw::Logarithmic { .. } => true,
            GatheringLaw::Empirical { ref pmf } => pmf.iter().any(|&(k, w)| k >= 2 && w > 0.0),
        }
    }

    pub fn require_admissible(&self) -> Result<()> {
        if self.is_admissible() {
            Ok(())
        } else {
            Err(Error::Inadmissible(format!(
                "{:?} puts no mass on gatherings of size >= 2",
                self.law
            )))
        }
    }

    /// `P(Θ = k)`, from the exact family formula.
    pub fn pmf(&self, k: u64) -> f64 {
        match self.law {
            GatheringLaw::Fixed { theta } => {
                if k == theta {
                    1.0
                } else {
                    0.0
                }
            }
            GatheringLaw::Binomial { k: n, alpha } => binomial_pmf(n, alpha, k),
            GatheringLaw::Poisson { lambda } => {
                (-lambda + k as f64 * lambda.ln() - ln_gamma(k as f64 + 1.0)).exp()
            }
            GatheringLaw::Logarithmic { alpha } => {
                if k == 0 {
                    0.0
                } else {
                    -1.0 / (-alpha).ln_1p() * alpha.powf(k as f64) / k as f64
                }
            }
            GatheringLaw::Empirical { ref pmf } => pmf
                .iter()
                .find(|&&(j, _)| j == k)
                .map_or(0.0, |&(_, w)| w),
        }
    }

    /// One draw of Θ.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.sampler {
            Sampler::Fixed(theta) => *theta,
            Sampler::Binomial(b) => b.sample(rng),
            Sampler::Poisson(p) => p.sample(rng) as u64,
            Sampler::Table { cdf } => {
                let u: f64 = rng.random();
                let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                self.support[idx].0
            }
        }
    }

    /// Probability generating function `E[ξ^Θ]`.
    pub fn pgf(&self, xi: f64) -> f64 {
        match self.law {
            GatheringLaw::Fixed { theta } => powu(xi, theta),
            GatheringLaw::Binomial { k, alpha } => powu(1.0 - alpha * (1.0 - xi), k),
            GatheringLaw::Poisson { lambda } => (-lambda * (1.0 - xi)).exp(),
            GatheringLaw::Logarithmic { alpha } => (-alpha * xi).ln_1p() / (-alpha).ln_1p(),
            GatheringLaw::Empirical { .. } => self.expect(|k| powu(xi, k)),
        }
    }

    /// `E[Θ ξ^(Θ-1)]`, the derivative of [`pgf`](Self::pgf).
    pub fn pgf_derivative(&self, xi: f64) -> f64 {
        match self.law {
            GatheringLaw::Fixed { theta } => {
                if theta == 0 {
                    0.0
                } else {
                    theta as f64 * powu(xi, theta - 1)
                }
            }
            GatheringLaw::Binomial { k, alpha } => {
                if k == 0 {
                    0.0
                } else {
                    k as f64 * alpha * powu(1.0 - alpha * (1.0 - xi), k - 1)
                }
            }
            GatheringLaw::Poisson { lambda } => lambda * (-lambda * (1.0 - xi)).exp(),
            GatheringLaw::Logarithmic { alpha } => {
                -1.0 / (-alpha).ln_1p() * alpha / (1.0 - alpha * xi)
            }
            GatheringLaw::Empirical { .. } => self.expect(|k| {
                if k == 0 {
                    0.0
                } else {
                    k as f64 * powu(xi, k - 1)
                }
            }),
        }
    }

    /// `E[Θ]`.
    pub fn mean(&self) -> f64 {
        match self.law {
            GatheringLaw::Fixed { theta } => theta as f64,
            GatheringLaw::Binomial { k, alpha } => k as f64 * alpha,
            GatheringLaw::Poisson { lambda } => lambda,
            GatheringLaw::Logarithmic { alpha } => -alpha / ((1.0 - alpha) * (-alpha).ln_1p()),
            GatheringLaw::Empirical { .. } => self.expect(|k| k as f64),
        }
    }

    /// `E[Θ(Θ-1)]`.
    pub fn second_factorial_moment(&self) -> f64 {
        match self.law {
            GatheringLaw::Fixed { theta } => theta as f64 * (theta as f64 - 1.0),
            GatheringLaw::Binomial { k, alpha } => alpha * alpha * k as f64 * (k as f64 - 1.0),
            GatheringLaw::Poisson { lambda } => lambda * lambda,
            GatheringLaw::Logarithmic { alpha } => {
                -alpha * alpha / ((1.0 - alpha) * (1.0 - alpha) * (-alpha).ln_1p())
            }
            GatheringLaw::Empirical { .. } => self.expect(|k| k as f64 * (k as f64 - 1.0)),
        }
    }

    /// `P(Θ ≥ k)`.
    pub fn survival(&self, k: u64) -> f64 {
        let below: f64 = self
            .support
            .iter()
            .take_while(|&&(j, _)| j < k)
            .map(|&(_, w)| w)
            .sum();
        (1.0 - below).max(0.0)
    }

    /// `E[Θ 1{Θ > n}]`, the mass of gatherings too large for a population of `n`.
    pub fn oversize_mean(&self, n: u64) -> f64 {
        let within: f64 = self
            .support
            .iter()
            .take_while(|&&(j, _)| j <= n)
            .map(|&(j, w)| j as f64 * w)
            .sum();
        (self.mean() - within).max(0.0)
    }

    /// `E[f(Θ)]` summed over the support table.
    pub fn expect(&self, f: impl Fn(u64) -> f64) -> f64 {
        self.support.iter().map(|&(k, w)| w * f(k)).sum()
    }
}

fn normalize_empirical(mut pmf: Vec<(u64, f64)>) -> Result<Vec<(u64, f64)>> {
    if pmf.is_empty() {
        return Err(Error::invalid("dist.pmf", "must contain at least one entry"));
    }
    for (idx, &(k, w)) in pmf.iter().enumerate() {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::invalid(
                format!("dist.pmf[{idx}]"),
                format!("probability {w} for k = {k} is not a nonnegative number"),
            ));
        }
    }
    pmf.sort_by_key(|&(k, _)| k);
    if let Some(pair) = pmf.windows(2).find(|pair| pair[0].0 == pair[1].0) {
        return Err(Error::invalid("dist.pmf", format!("size {} listed twice", pair[0].0)));
    }
    let total: f64 = pmf.iter().map(|&(_, w)| w).sum();
    if (total - 1.0).abs() > EMPIRICAL_SUM_TOLERANCE {
        return Err(Error::invalid(
            "dist.pmf",
            format!("probabilities sum to {total}, not 1"),
        ));
    }
    for entry in &mut pmf {
        entry.1 /= total;
    }
    Ok(pmf)
}

fn build_support(law: &GatheringLaw) -> Vec<(u64, f64)> {
    match *law {
        GatheringLaw::Fixed { theta } => vec![(theta, 1.0)],
        GatheringLaw::Binomial { k, alpha } => (0..=k).map(|j| (j, binomial_pmf(k, alpha, j))).collect(),
        GatheringLaw::Poisson { lambda } => {
            let ln_lambda = lambda.ln();
            truncate_unbounded(0, |k| {
                (-lambda + k as f64 * ln_lambda - ln_gamma(k as f64 + 1.0)).exp()
            }, lambda)
        }
        GatheringLaw::Logarithmic { alpha } => {
            let norm = -1.0 / (-alpha).ln_1p();
            let ln_alpha = alpha.ln();
            truncate_unbounded(1, |k| norm * (k as f64 * ln_alpha).exp() / k as f64, 1.0)
        }
        GatheringLaw::Empirical { ref pmf } => pmf.clone(),
    }
}

/// Tabulates a unimodal pmf from `start` far enough into its tail that the
/// remaining mass is negligible, then cuts at the smallest `k*` with
/// `P(Θ > k*) < TAIL_MASS`. Suffix sums avoid cancellation in `1 - cdf`.
fn truncate_unbounded(start: u64, pmf: impl Fn(u64) -> f64, mode: f64) -> Vec<(u64, f64)> {
    let mut table = Vec::new();
    let mut k = start;
    loop {
        let w = pmf(k);
        table.push((k, w));
        if k as f64 > mode && w < TAIL_MASS * f64::EPSILON {
            break;
        }
        k += 1;
    }
    let mut tail = 0.0;
    let mut cut = table.len() - 1;
    for idx in (0..table.len()).rev() {
        // tail == P(Θ > table[idx].0)
        if tail >= TAIL_MASS {
            break;
        }
        cut = idx;
        tail += table[idx].1;
    }
    table.truncate(cut + 1);
    table
}

fn binomial_pmf(n: u64, alpha: f64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    if alpha == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if alpha == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    if n <= 60 {
        let mut choose = 1.0;
        for j in 0..k {
            choose = choose * (n - j) as f64 / (j + 1) as f64;
        }
        return choose * powu(alpha, k) * powu(1.0 - alpha, n - k);
    }
    let ln_choose =
        ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0);
    (ln_choose + k as f64 * alpha.ln() + (n - k) as f64 * (-alpha).ln_1p()).exp()
}

/// `x^n` for a nonnegative integer exponent.
pub(crate) fn powu(x: f64, n: u64) -> f64 {
    match i32::try_from(n) {
        Ok(n) => x.powi(n),
        Err(_) => x.powf(n as f64),
    }
}
