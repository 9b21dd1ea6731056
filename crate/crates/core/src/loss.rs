//! Base and hybrid loss measures for a completed experiment.
//!
//! Base measures: in-sample regret, policy regret, RMSE of the chosen arm,
//! average RMSE over arms, and the binary statistical-power loss. Hybrids pair
//! two base measures: regret/precision pairs are averaged, and any pair with
//! the power loss takes the maximum, so a failed ordering costs the full 1.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::WaveAllocation;
use crate::posterior::{joint_draws, PosteriorState};
use crate::SimRng;

/// Per-pair Type-I level of the ordering tests.
pub const DEFAULT_ALPHA: f64 = 0.05;
/// Monte Carlo draws behind the power loss.
pub const DEFAULT_SP_DRAWS: usize = 10_000;

/// True average potential outcomes of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSet {
    theta_star: Vec<f64>,
}

impl TruthSet {
    pub fn new(theta_star: Vec<f64>) -> Result<Self> {
        if theta_star.len() < 2 {
            return Err(Error::Contract("a truth set needs at least 2 arms".into()));
        }
        if let Some(bad) = theta_star.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Contract(format!(
                "true outcome {bad} is outside [0, 1]"
            )));
        }
        Ok(Self { theta_star })
    }

    pub fn values(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn k(&self) -> usize {
        self.theta_star.len()
    }

    /// `k*`, lowest index on exact ties.
    pub fn best_arm(&self) -> usize {
        argmax_lowest(&self.theta_star).0
    }

    pub fn best_value(&self) -> f64 {
        self.theta_star[self.best_arm()]
    }

    /// True if any two arms share exactly the same value.
    pub fn has_ties(&self) -> bool {
        let mut v = self.theta_star.clone();
        v.sort_by(f64::total_cmp);
        v.windows(2).any(|w| w[0] == w[1])
    }

    /// `Δ_k = max θ* − θ*_k`.
    ///
    /// # Panics
    /// If `k` is not an arm index.
    pub fn gap(&self, k: usize) -> f64 {
        self.best_value() - self.theta_star[k]
    }

    /// Arm indices ordered by ascending true value, index order on ties.
    pub fn ascending_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.k()).collect();
        idx.sort_by(|&a, &b| self.theta_star[a].total_cmp(&self.theta_star[b]));
        idx
    }
}

/// Index of the maximum with the lowest index winning exact ties, plus
/// whether a tie for the maximum occurred.
pub(crate) fn argmax_lowest(v: &[f64]) -> (usize, bool) {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    let tied = v
        .iter()
        .enumerate()
        .any(|(i, &x)| i != best && x == v[best]);
    (best, tied)
}

pub fn regret_gap(truth: &TruthSet, k: usize) -> f64 {
    truth.gap(k)
}

/// The five base measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BaseMeasure {
    RSample,
    RPolicy,
    PrecBest,
    PrecAvg,
    Sp,
}

impl BaseMeasure {
    pub const ALL: [BaseMeasure; 5] = [
        BaseMeasure::RSample,
        BaseMeasure::RPolicy,
        BaseMeasure::PrecBest,
        BaseMeasure::PrecAvg,
        BaseMeasure::Sp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BaseMeasure::RSample => "r_sample",
            BaseMeasure::RPolicy => "r_policy",
            BaseMeasure::PrecBest => "prec_best",
            BaseMeasure::PrecAvg => "prec_avg",
            BaseMeasure::Sp => "sp",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for BaseMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaseMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|m| m.name()).collect();
                Error::Contract(format!(
                    "unknown measure `{s}`; valid names: {}",
                    names.join(", ")
                ))
            })
    }
}

/// Base losses of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossVector {
    pub r_sample: f64,
    pub r_policy: f64,
    pub prec_best: f64,
    pub prec_avg: f64,
    /// 1 when the true ordering was not recovered.
    pub sp: u8,
}

impl LossVector {
    pub fn get(&self, m: BaseMeasure) -> f64 {
        match m {
            BaseMeasure::RSample => self.r_sample,
            BaseMeasure::RPolicy => self.r_policy,
            BaseMeasure::PrecBest => self.prec_best,
            BaseMeasure::PrecAvg => self.prec_avg,
            BaseMeasure::Sp => f64::from(self.sp),
        }
    }

    pub fn in_range(&self) -> bool {
        BaseMeasure::ALL
            .iter()
            .all(|&m| (0.0..=1.0).contains(&self.get(m)))
            && self.sp <= 1
    }
}

/// Unordered pair of base measures; `a == b` denotes the base measure alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HybridSpec {
    a: BaseMeasure,
    b: BaseMeasure,
}

impl HybridSpec {
    pub fn new(a: BaseMeasure, b: BaseMeasure) -> Self {
        if a <= b {
            Self { a, b }
        } else {
            Self { a: b, b: a }
        }
    }

    pub fn base(m: BaseMeasure) -> Self {
        Self { a: m, b: m }
    }

    pub fn first(&self) -> BaseMeasure {
        self.a
    }

    pub fn second(&self) -> BaseMeasure {
        self.b
    }

    pub fn is_diagonal(&self) -> bool {
        self.a == self.b
    }

    /// The ten distinct pairs.
    pub fn hybrids() -> Vec<HybridSpec> {
        Self::cells()
            .into_iter()
            .filter(|h| !h.is_diagonal())
            .collect()
    }

    /// The fifteen matrix cells: ten hybrids plus five diagonal base measures,
    /// in row-major lower-triangular order.
    pub fn cells() -> Vec<HybridSpec> {
        let mut out = Vec::with_capacity(15);
        for (i, &a) in BaseMeasure::ALL.iter().enumerate() {
            for &b in &BaseMeasure::ALL[..=i] {
                out.push(HybridSpec::new(b, a));
            }
        }
        out
    }
}

impl fmt::Display for HybridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_diagonal() {
            write!(f, "{}", self.a)
        } else {
            write!(f, "{}/{}", self.a, self.b)
        }
    }
}

pub fn hybrid_loss(spec: HybridSpec, losses: &LossVector) -> f64 {
    let (a, b) = (losses.get(spec.a), losses.get(spec.b));
    if spec.is_diagonal() {
        a
    } else if spec.a == BaseMeasure::Sp || spec.b == BaseMeasure::Sp {
        a.max(b)
    } else {
        0.5 * (a + b)
    }
}

/// `(1/N) Σ_t Σ_k n_t^k Δ_k` over the waves of one experiment.
pub fn in_sample_regret(truth: &TruthSet, waves: &[WaveAllocation]) -> Result<f64> {
    let mut per_arm = vec![0u64; truth.k()];
    for w in waves {
        if w.counts.len() != truth.k() {
            return Err(Error::Contract(format!(
                "wave allocation has {} arms, truth has {}",
                w.counts.len(),
                truth.k()
            )));
        }
        for (acc, &c) in per_arm.iter_mut().zip(&w.counts) {
            *acc += c;
        }
    }
    in_sample_regret_from_totals(truth, &per_arm)
}

/// In-sample regret from per-arm totals; equal to [`in_sample_regret`] for any
/// split of the totals into waves.
pub fn in_sample_regret_from_totals(truth: &TruthSet, totals: &[u64]) -> Result<f64> {
    if totals.len() != truth.k() {
        return Err(Error::Contract(
            "per-arm totals do not match the truth set".into(),
        ));
    }
    let n: u64 = totals.iter().sum();
    if n == 0 {
        return Err(Error::Contract("no participants were assigned".into()));
    }
    let weighted: f64 = totals
        .iter()
        .enumerate()
        .map(|(k, &c)| c as f64 * truth.gap(k))
        .sum();
    Ok((weighted / n as f64).clamp(0.0, 1.0))
}

/// `k̂`: the arm with the highest posterior mean, lowest index on ties, and
/// whether a tie occurred.
pub fn estimated_best_arm(state: &PosteriorState) -> (usize, bool) {
    argmax_lowest(&state.means())
}

fn check_arms(truth: &TruthSet, state: &PosteriorState) -> Result<()> {
    if truth.k() != state.k() {
        return Err(Error::Contract(format!(
            "truth has {} arms, posterior has {}",
            truth.k(),
            state.k()
        )));
    }
    Ok(())
}

/// `Δ` at `k̂`.
pub fn policy_regret(truth: &TruthSet, state: &PosteriorState) -> Result<f64> {
    check_arms(truth, state)?;
    Ok(truth.gap(estimated_best_arm(state).0))
}

/// `(prec_best, prec_avg)`: RMSE at `k̂` and the mean RMSE over arms.
pub fn precision_losses(truth: &TruthSet, state: &PosteriorState) -> Result<(f64, f64)> {
    check_arms(truth, state)?;
    let rmses: Vec<f64> = state
        .arms()
        .iter()
        .zip(truth.values())
        .map(|(arm, &t)| arm.rmse(t))
        .collect();
    let best = rmses[estimated_best_arm(state).0];
    let avg = rmses.iter().sum::<f64>() / rmses.len() as f64;
    Ok((best.min(1.0), avg.min(1.0)))
}

/// Outcome of the ordering test.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTest {
    /// 0 iff every adjacent pair was ordered at level alpha.
    pub loss: u8,
    /// Empirical p-values for the adjacent pairs, lowest true value first.
    pub p_values: Vec<f64>,
    /// The truth had exact ties, broken by index.
    pub truth_tie: bool,
}

/// Binary power loss: orders arms by true value and, for each adjacent pair
/// `(lo, hi)`, estimates `P(draw_hi <= draw_lo)` from `m` shared joint
/// posterior draws. Succeeds (loss 0) only if every estimate is below `alpha`.
pub fn statistical_power_loss<R: Rng + ?Sized>(
    truth: &TruthSet,
    state: &PosteriorState,
    alpha: f64,
    m: usize,
    rng: &mut R,
) -> Result<PowerTest> {
    check_arms(truth, state)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Contract(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if m == 0 {
        return Err(Error::Contract("power test needs m >= 1".into()));
    }
    let mut streams: Vec<SimRng> = (0..state.k())
        .map(|_| SimRng::seed_from_u64(rng.random()))
        .collect();
    let draws = joint_draws(state, m, &mut streams)?;
    let order = truth.ascending_order();
    let p_values: Vec<f64> = order
        .windows(2)
        .map(|pair| {
            let (lo, hi) = (&draws[pair[0] * m..][..m], &draws[pair[1] * m..][..m]);
            let fails = lo.iter().zip(hi).filter(|(l, h)| h <= l).count();
            fails as f64 / m as f64
        })
        .collect();
    let loss = u8::from(!p_values.iter().all(|&p| p < alpha));
    Ok(PowerTest {
        loss,
        p_values,
        truth_tie: truth.has_ties(),
    })
}

/// Tie events recorded alongside a trial's losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TieFlags {
    /// Two or more arms shared the highest posterior mean at the end.
    pub khat: bool,
    /// The truth had exact ties, so the rank order was broken by index.
    pub truth: bool,
}

/// All five base losses for a finished experiment.
pub fn evaluate<R: Rng + ?Sized>(
    truth: &TruthSet,
    state: &PosteriorState,
    totals: &[u64],
    alpha: f64,
    sp_draws: usize,
    rng: &mut R,
) -> Result<(LossVector, TieFlags)> {
    let r_sample = in_sample_regret_from_totals(truth, totals)?;
    let r_policy = policy_regret(truth, state)?;
    let (prec_best, prec_avg) = precision_losses(truth, state)?;
    let power = statistical_power_loss(truth, state, alpha, sp_draws, rng)?;
    let flags = TieFlags {
        khat: estimated_best_arm(state).1,
        truth: power.truth_tie,
    };
    Ok((
        LossVector {
            r_sample,
            r_policy,
            prec_best,
            prec_avg,
            sp: power.loss,
        },
        flags,
    ))
}
