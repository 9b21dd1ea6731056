//! Beta-Bernoulli conjugate inference.
//!
//! Each arm's average potential outcome carries a `Beta(alpha, beta)`
//! posterior. Updates are exact conjugate arithmetic, the RMSE against a true
//! value has a closed form, and the probability that each arm is best is
//! available two ways: Monte Carlo over joint posterior draws (used on the
//! simulation hot path) and Gauss-Legendre quadrature over
//! `f_k(x) * prod_{j != k} F_j(x)` (an independent oracle).

use rand::{Rng, SeedableRng};
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::AssignmentProbs;
use crate::special::{beta_pdf, reg_inc_beta, GaussLegendre};
use crate::SimRng;

/// Smallest node count accepted by [`prob_best_quadrature`].
pub const MIN_QUADRATURE_NODES: usize = 64;
/// Node count used by the oracle suite.
pub const DEFAULT_QUADRATURE_NODES: usize = 256;
/// Largest tolerated `|sum - 1|` before the quadrature result is renormalized.
pub const MAX_RENORMALIZATION: f64 = 1e-6;

/// Shape parameters of a Beta distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    /// Successes plus prior alpha.
    pub alpha: f64,
    /// Failures plus prior beta.
    pub beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = Self { alpha, beta };
        p.check()?;
        Ok(p)
    }

    /// The uninformative `Beta(1, 1)` prior.
    pub const fn uniform() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.alpha) && ok(self.beta) {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "Beta shapes must be positive and finite, got ({}, {})",
                self.alpha, self.beta
            )))
        }
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }

    /// Root of the posterior-expected squared error to `theta_star`:
    /// `sqrt((theta_star - mean)^2 + variance)`.
    pub fn rmse(&self, theta_star: f64) -> f64 {
        let bias = theta_star - self.mean();
        (bias * bias + self.variance()).sqrt()
    }

    fn distribution(&self) -> Result<Beta<f64>> {
        Beta::new(self.alpha, self.beta).map_err(|e| {
            Error::Contract(format!(
                "cannot sample Beta({}, {}): {e}",
                self.alpha, self.beta
            ))
        })
    }
}

impl Default for BetaParams {
    fn default() -> Self {
        Self::uniform()
    }
}

pub fn posterior_mean(p: &BetaParams) -> f64 {
    p.mean()
}

pub fn rmse(p: &BetaParams, theta_star: f64) -> f64 {
    p.rmse(theta_star)
}

/// `m` independent `Beta(alpha, beta)` variates.
pub fn sample_posterior<R: Rng + ?Sized>(
    p: &BetaParams,
    rng: &mut R,
    m: usize,
) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::Contract("sample_posterior needs m >= 1".into()));
    }
    let dist = p.distribution()?;
    Ok((0..m).map(|_| dist.sample(rng)).collect())
}

/// Per-arm success and failure counts from one wave.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OutcomeCounts {
    pub successes: Vec<u64>,
    pub failures: Vec<u64>,
}

impl OutcomeCounts {
    pub fn zeros(k: usize) -> Self {
        Self {
            successes: vec![0; k],
            failures: vec![0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.successes.len()
    }

    pub fn total(&self) -> u64 {
        self.successes.iter().chain(&self.failures).sum()
    }

    /// Elementwise sum of two count vectors.
    pub fn combine(&self, other: &Self) -> Result<Self> {
        if self.k() != other.k() || self.failures.len() != other.failures.len() {
            return Err(Error::Contract(
                "cannot combine counts of different lengths".into(),
            ));
        }
        let add = |a: &[u64], b: &[u64]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Ok(Self {
            successes: add(&self.successes, &other.successes),
            failures: add(&self.failures, &other.failures),
        })
    }
}

/// Posteriors for all `K` arms of one experiment, in fixed arm order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    arms: Vec<BetaParams>,
}

impl PosteriorState {
    pub fn new(arms: Vec<BetaParams>) -> Result<Self> {
        if arms.len() < 2 {
            return Err(Error::Contract(format!(
                "a posterior state needs at least 2 arms, got {}",
                arms.len()
            )));
        }
        for a in &arms {
            a.check()?;
        }
        Ok(Self { arms })
    }

    /// `k` arms all at `prior`.
    pub fn from_prior(k: usize, prior: BetaParams) -> Result<Self> {
        Self::new(vec![prior; k])
    }

    pub fn arms(&self) -> &[BetaParams] {
        &self.arms
    }

    pub fn k(&self) -> usize {
        self.arms.len()
    }

    pub fn means(&self) -> Vec<f64> {
        self.arms.iter().map(BetaParams::mean).collect()
    }

    /// Conjugate update: `alpha += successes`, `beta += failures` per arm.
    pub fn update(&self, counts: &OutcomeCounts) -> Result<Self> {
        let mut next = self.clone();
        next.update_in_place(counts)?;
        Ok(next)
    }

    pub fn update_in_place(&mut self, counts: &OutcomeCounts) -> Result<()> {
        if counts.successes.len() != self.k() || counts.failures.len() != self.k() {
            return Err(Error::Contract(format!(
                "outcome counts have {}/{} entries for {} arms",
                counts.successes.len(),
                counts.failures.len(),
                self.k()
            )));
        }
        for ((arm, &s), &f) in self
            .arms
            .iter_mut()
            .zip(&counts.successes)
            .zip(&counts.failures)
        {
            arm.alpha += s as f64;
            arm.beta += f as f64;
        }
        Ok(())
    }

    /// Returns a state with arms reordered so that new arm `i` is old arm `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.k())?;
        Ok(Self {
            arms: perm.iter().map(|&i| self.arms[i]).collect(),
        })
    }
}

pub(crate) fn check_permutation(perm: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    if perm.len() != k
        || !perm
            .iter()
            .all(|&i| i < k && !std::mem::replace(&mut seen[i], true))
    {
        return Err(Error::Contract(format!(
            "{perm:?} is not a permutation of 0..{k}"
        )));
    }
    Ok(())
}

/// Monte Carlo estimate of `P(arm k is best)` from `m` joint posterior draws.
///
/// One child stream per arm is split off `rng` (in arm order), and arm `k`'s
/// `m` draws all come from child `k`. Ties in a draw go to the lowest index.
pub fn prob_best_mc<R: Rng + ?Sized>(
    state: &PosteriorState,
    m: usize,
    rng: &mut R,
) -> Result<AssignmentProbs> {
    let mut streams: Vec<SimRng> = (0..state.k())
        .map(|_| SimRng::seed_from_u64(rng.random()))
        .collect();
    prob_best_mc_streams(state, m, &mut streams)
}

/// [`prob_best_mc`] with caller-supplied per-arm streams.
///
/// Permuting the arms together with their streams permutes the output the
/// same way.
pub fn prob_best_mc_streams<R: Rng>(
    state: &PosteriorState,
    m: usize,
    streams: &mut [R],
) -> Result<AssignmentProbs> {
    let k = state.k();
    if m == 0 {
        return Err(Error::Contract("prob_best_mc needs m >= 1".into()));
    }
    if streams.len() != k {
        return Err(Error::Contract(format!(
            "{} rng streams supplied for {k} arms",
            streams.len()
        )));
    }
    let draws = joint_draws(state, m, streams)?;
    let mut wins = vec![0u64; k];
    for i in 0..m {
        let mut best = 0;
        let mut best_v = draws[i];
        for arm in 1..k {
            let v = draws[arm * m + i];
            if v > best_v {
                best = arm;
                best_v = v;
            }
        }
        wins[best] += 1;
    }
    let m = m as f64;
    Ok(AssignmentProbs::from_raw(
        wins.into_iter().map(|w| w as f64 / m).collect(),
    ))
}

/// Column-major `K x m` matrix of posterior draws: arm `k` occupies
/// `[k * m, (k + 1) * m)`.
pub(crate) fn joint_draws<R: Rng>(
    state: &PosteriorState,
    m: usize,
    streams: &mut [R],
) -> Result<Vec<f64>> {
    let mut draws = Vec::with_capacity(state.k() * m);
    for (arm, stream) in state.arms().iter().zip(streams.iter_mut()) {
        let dist = arm.distribution()?;
        draws.extend((0..m).map(|_| dist.sample(stream)));
    }
    Ok(draws)
}

/// Half-width, in posterior standard deviations, of the window each arm's
/// term is integrated over. Beta tails beyond it hold well under 1e-10 of the mass.
const QUADRATURE_WINDOW_SDS: f64 = 25.0;

/// Geometric panels added next to an endpoint of `[0, 1]`, each a quarter of
/// the width of its neighbour.
const QUADRATURE_GRADED_PANELS: i32 = 10;

/// Panel breakpoints for `[lo, hi]`. Where the window touches 0 or 1 the
/// density may behave like `x^s` with small `s`, which a single rule only
/// resolves algebraically; geometric grading towards that end restores fast
/// convergence.
fn quadrature_panels(lo: f64, hi: f64) -> Vec<f64> {
    let width = hi - lo;
    let mut cuts = vec![lo, hi];
    for level in 1..=QUADRATURE_GRADED_PANELS {
        let offset = width * 0.25_f64.powi(level);
        if lo == 0.0 {
            cuts.push(lo + offset);
        }
        if hi == 1.0 {
            cuts.push(hi - offset);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts
}

/// Quadrature estimate of `P(arm k is best)`:
/// `∫₀¹ f_k(x) ∏_{j≠k} F_j(x) dx` with an `nodes`-point Gauss-Legendre rule per panel.
///
/// Each arm's term is integrated over that arm's own window
/// `[mean - 25 sd, mean + 25 sd] ∩ [0, 1]`, outside which `f_k` is negligible,
/// so concentrated posteriors get the full node budget; windows that reach an
/// endpoint are graded towards it. The masses must sum to one within
/// [`MAX_RENORMALIZATION`] before they are renormalized; otherwise the rule
/// could not resolve the posterior and an error is returned.
pub fn prob_best_quadrature(state: &PosteriorState, nodes: usize) -> Result<AssignmentProbs> {
    if nodes < MIN_QUADRATURE_NODES {
        return Err(Error::Contract(format!(
            "quadrature needs at least {MIN_QUADRATURE_NODES} nodes, got {nodes}"
        )));
    }
    let rule = GaussLegendre::unit_interval(nodes)?;
    let arms = state.arms();
    let mut mass = Vec::with_capacity(arms.len());
    for (target, arm) in arms.iter().enumerate() {
        let half = QUADRATURE_WINDOW_SDS * arm.variance().sqrt();
        let cuts = quadrature_panels((arm.mean() - half).max(0.0), (arm.mean() + half).min(1.0));
        let mut acc = 0.0;
        for panel in cuts.windows(2) {
            let (lo, width) = (panel[0], panel[1] - panel[0]);
            for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
                let x = lo + width * u;
                let f = beta_pdf(x, arm.alpha, arm.beta);
                if !f.is_finite() {
                    return Err(Error::NumericRange(format!(
                        "Beta({}, {}) density at {x} is not finite",
                        arm.alpha, arm.beta
                    )));
                }
                let mut others = 1.0;
                for (j, other) in arms.iter().enumerate() {
                    if j != target {
                        others *= reg_inc_beta(x, other.alpha, other.beta)?;
                    }
                }
                acc += w * width * f * others;
            }
        }
        mass.push(acc);
    }
    let total: f64 = mass.iter().sum();
    if !total.is_finite() || (total - 1.0).abs() >= MAX_RENORMALIZATION {
        return Err(Error::NumericRange(format!(
            "quadrature mass {total} is off by more than {MAX_RENORMALIZATION} \
             ({nodes} nodes cannot resolve this posterior)"
        )));
    }
    Ok(AssignmentProbs::from_raw(
        mass.into_iter().map(|v| v / total).collect(),
    ))
}
