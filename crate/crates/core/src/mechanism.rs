//! Assignment mechanisms: per-wave assignment probabilities and their
//! conversion into integer wave allocations.

use std::fmt;
use std::ops::Index;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{prob_best_mc, PosteriorState};

/// Simplex tolerance for assignment probabilities.
pub const SIMPLEX_TOL: f64 = 1e-9;
/// Below this the Exploration normalizer is treated as degenerate.
pub const EXPLORATION_DEGENERATE: f64 = 1e-12;
/// Tempering weight used unless configured otherwise.
pub const DEFAULT_GAMMA: f64 = 0.2;

/// Per-arm assignment probabilities for one wave.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentProbs(Vec<f64>);

impl AssignmentProbs {
    /// Validates that `probs` lies on the simplex.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Contract("empty probability vector".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Contract(format!(
                "{probs:?} has a component outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Contract(format!("{probs:?} sums to {sum}, not 1")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL);
        Self(probs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Index<usize> for AssignmentProbs {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MechanismKind {
    /// Uniform random assignment, `1/K` per arm every wave.
    RandomAssignment,
    Thompson,
    Exploration,
    /// Blend `(1 - gamma) * thompson + gamma / K`.
    Tempered {
        gamma: f64,
    },
}

impl MechanismKind {
    pub const ALL_NAMES: [&'static str; 4] = ["ra", "thompson", "exploration", "tempered"];

    /// The four mechanisms in id order, Tempered at `gamma`.
    pub fn all(gamma: f64) -> [MechanismKind; 4] {
        [
            MechanismKind::RandomAssignment,
            MechanismKind::Thompson,
            MechanismKind::Exploration,
            MechanismKind::Tempered { gamma },
        ]
    }

    /// Stable numeric id, also the column order of win-matrix output.
    pub fn id(&self) -> usize {
        match self {
            MechanismKind::RandomAssignment => 0,
            MechanismKind::Thompson => 1,
            MechanismKind::Exploration => 2,
            MechanismKind::Tempered { .. } => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        Self::ALL_NAMES[self.id()]
    }

    pub fn from_name(name: &str, gamma: f64) -> Result<Self> {
        match name {
            "ra" => Ok(MechanismKind::RandomAssignment),
            "thompson" => Ok(MechanismKind::Thompson),
            "exploration" => Ok(MechanismKind::Exploration),
            "tempered" => {
                if !(0.0..=1.0).contains(&gamma) {
                    return Err(Error::config(
                        "gamma",
                        format!("must lie in [0, 1], got {gamma}"),
                    ));
                }
                Ok(MechanismKind::Tempered { gamma })
            }
            other => Err(Error::config(
                "mechanisms",
                format!(
                    "unknown mechanism `{other}` (expected one of {:?})",
                    Self::ALL_NAMES
                ),
            )),
        }
    }

    pub fn is_adaptive(&self) -> bool {
        !matches!(self, MechanismKind::RandomAssignment)
    }

    pub fn tag(&self) -> MechanismTag {
        MechanismTag::ALL[self.id()]
    }
}

/// Mechanism identity without parameters, as written to run stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismTag {
    Ra,
    Thompson,
    Exploration,
    Tempered,
}

impl MechanismTag {
    pub const ALL: [MechanismTag; 4] = [
        MechanismTag::Ra,
        MechanismTag::Thompson,
        MechanismTag::Exploration,
        MechanismTag::Tempered,
    ];

    pub fn id(&self) -> usize {
        *self as usize
    }

    pub fn name(&self) -> &'static str {
        MechanismKind::ALL_NAMES[self.id()]
    }
}

impl fmt::Display for MechanismTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How assignment probabilities become integer counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocationPolicy {
    /// Each participant independently drawn from the categorical distribution.
    #[default]
    Iid,
    /// `floor(n * p_k)` plus leftover seats by largest fractional part.
    LargestRemainder,
}

impl FromStr for AllocationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(AllocationPolicy::Iid),
            "largest-remainder" => Ok(AllocationPolicy::LargestRemainder),
            other => Err(Error::config(
                "allocation_policy",
                format!("unknown policy `{other}` (expected iid or largest-remainder)"),
            )),
        }
    }
}

/// Participants per arm in one wave.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaveAllocation {
    pub counts: Vec<u64>,
}

impl WaveAllocation {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Assignment probabilities for the next wave.
///
/// `m` is the Monte Carlo draw count behind the Thompson vector; RA consumes
/// no randomness.
pub fn assignment_probs<R: Rng + ?Sized>(
    kind: MechanismKind,
    state: &PosteriorState,
    m: usize,
    rng: &mut R,
) -> Result<AssignmentProbs> {
    match kind {
        MechanismKind::RandomAssignment => Ok(AssignmentProbs::uniform(state.k())),
        MechanismKind::Thompson => prob_best_mc(state, m, rng),
        MechanismKind::Exploration => Ok(exploration_from_thompson(&prob_best_mc(state, m, rng)?)),
        MechanismKind::Tempered { gamma } => {
            tempered_from_thompson(&prob_best_mc(state, m, rng)?, gamma)
        }
    }
}

/// `q_k = p_k (1 - p_k) / Σ_j p_j (1 - p_j)`, falling back to `thompson`
/// itself when the normalizer is degenerate (a certain best arm).
pub fn exploration_from_thompson(thompson: &AssignmentProbs) -> AssignmentProbs {
    let weights: Vec<f64> = thompson.as_slice().iter().map(|p| p * (1.0 - p)).collect();
    let total: f64 = weights.iter().sum();
    if total < EXPLORATION_DEGENERATE {
        return thompson.clone();
    }
    AssignmentProbs::from_raw(weights.into_iter().map(|w| w / total).collect())
}

pub fn tempered_from_thompson(thompson: &AssignmentProbs, gamma: f64) -> Result<AssignmentProbs> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Contract(format!(
            "gamma must lie in [0, 1], got {gamma}"
        )));
    }
    let floor = gamma / thompson.len() as f64;
    Ok(AssignmentProbs::from_raw(
        thompson
            .as_slice()
            .iter()
            .map(|p| (1.0 - gamma) * p + floor)
            .collect(),
    ))
}

/// Splits `n_t` participants across arms according to `probs`.
pub fn allocate<R: Rng + ?Sized>(
    probs: &AssignmentProbs,
    n_t: u64,
    policy: AllocationPolicy,
    rng: &mut R,
) -> Result<WaveAllocation> {
    if n_t == 0 {
        return Err(Error::Contract("wave size must be at least 1".into()));
    }
    let p = probs.as_slice();
    let counts = match policy {
        AllocationPolicy::Iid => {
            let mut counts = vec![0u64; p.len()];
            // Round-off can leave the cumulative sum a hair under 1.
            let last = p.iter().rposition(|&v| v > 0.0).unwrap_or(p.len() - 1);
            for _ in 0..n_t {
                let u: f64 = rng.random();
                let mut cum = 0.0;
                let mut pick = last;
                for (k, &pk) in p.iter().enumerate() {
                    cum += pk;
                    if u < cum {
                        pick = k;
                        break;
                    }
                }
                counts[pick] += 1;
            }
            counts
        }
        AllocationPolicy::LargestRemainder => largest_remainder(p, n_t),
    };
    Ok(WaveAllocation { counts })
}

fn largest_remainder(p: &[f64], n_t: u64) -> Vec<u64> {
    let n = n_t as f64;
    let mut counts: Vec<u64> = p.iter().map(|&pk| (n * pk).floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..p.len()).collect();
    // Stable sort keeps the lowest index first among equal remainders.
    order.sort_by(|&a, &b| {
        let ra = n * p[a] - (n * p[a]).floor();
        let rb = n * p[b] - (n * p[b]).floor();
        rb.total_cmp(&ra)
    });
    let mut left = n_t.saturating_sub(assigned);
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    // Floors of round-off-inflated products can overshoot; trim from the smallest remainders.
    let mut excess = counts.iter().sum::<u64>().saturating_sub(n_t);
    for &k in order.iter().rev() {
        while excess > 0 && counts[k] > 0 {
            counts[k] -= 1;
            excess -= 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::{BetaParams, PosteriorState};
    use crate::SimRng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn probs(v: &[f64]) -> AssignmentProbs {
        AssignmentProbs::new(v.to_vec()).unwrap()
    }

    fn prior_state(k: usize) -> PosteriorState {
        PosteriorState::from_prior(k, BetaParams::uniform()).unwrap()
    }

    #[test]
    fn ra_is_uniform_and_ignores_state() {
        let s = PosteriorState::new(vec![
            BetaParams::new(90.0, 2.0).unwrap(),
            BetaParams::new(1.0, 50.0).unwrap(),
            BetaParams::new(3.0, 3.0).unwrap(),
        ])
        .unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        let p = assignment_probs(MechanismKind::RandomAssignment, &s, 10, &mut rng).unwrap();
        assert_eq!(p, AssignmentProbs::uniform(3));
    }

    #[test]
    fn thompson_on_identical_posteriors() {
        let mut rng = SimRng::seed_from_u64(5);
        let p =
            assignment_probs(MechanismKind::Thompson, &prior_state(3), 100_000, &mut rng).unwrap();
        for &v in p.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn exploration_formula() {
        let q = exploration_from_thompson(&probs(&[0.5, 0.3, 0.2]));
        assert_abs_diff_eq!(q[0], 25.0 / 62.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q[1], 21.0 / 62.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q[2], 16.0 / 62.0, epsilon = 1e-12);
    }

    #[test]
    fn exploration_degenerate_falls_back_to_thompson() {
        let p = probs(&[1.0, 0.0, 0.0]);
        assert_eq!(exploration_from_thompson(&p), p);
    }

    #[test]
    fn exploration_zeroes_certain_arms() {
        let q = exploration_from_thompson(&probs(&[0.0, 0.6, 0.4]));
        assert_eq!(q[0], 0.0);
        assert_abs_diff_eq!(q[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn tempered_formula_and_endpoints() {
        let t = tempered_from_thompson(&probs(&[1.0, 0.0, 0.0]), 0.2).unwrap();
        assert_abs_diff_eq!(t[0], 0.8 + 0.2 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t[1], 0.2 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t[2], 0.2 / 3.0, epsilon = 1e-15);

        let p = probs(&[0.7, 0.2, 0.1]);
        assert_eq!(
            tempered_from_thompson(&p, 1.0).unwrap(),
            AssignmentProbs::uniform(3)
        );
        assert_eq!(tempered_from_thompson(&p, 0.0).unwrap(), p);
        assert!(tempered_from_thompson(&p, 1.5).is_err());
    }

    #[test]
    fn tempered_gamma_zero_matches_thompson_stream() {
        let s = PosteriorState::new(vec![
            BetaParams::new(4.0, 2.0).unwrap(),
            BetaParams::new(2.0, 3.0).unwrap(),
            BetaParams::new(6.0, 6.0).unwrap(),
        ])
        .unwrap();
        let a = assignment_probs(
            MechanismKind::Thompson,
            &s,
            1000,
            &mut SimRng::seed_from_u64(8),
        )
        .unwrap();
        let b = assignment_probs(
            MechanismKind::Tempered { gamma: 0.0 },
            &s,
            1000,
            &mut SimRng::seed_from_u64(8),
        )
        .unwrap();
        assert_eq!(a, b);
        let c = assignment_probs(
            MechanismKind::Tempered { gamma: 1.0 },
            &s,
            1000,
            &mut SimRng::seed_from_u64(8),
        )
        .unwrap();
        assert_eq!(c, AssignmentProbs::uniform(3));
    }

    #[test]
    fn allocate_degenerate_simplex() {
        let mut rng = SimRng::seed_from_u64(1);
        let p = probs(&[1.0, 0.0, 0.0]);
        for policy in [AllocationPolicy::Iid, AllocationPolicy::LargestRemainder] {
            assert_eq!(
                allocate(&p, 10, policy, &mut rng).unwrap().counts,
                vec![10, 0, 0]
            );
        }
    }

    #[test]
    fn allocate_largest_remainder_exact() {
        let mut rng = SimRng::seed_from_u64(1);
        let a = allocate(
            &probs(&[0.5, 0.3, 0.2]),
            10,
            AllocationPolicy::LargestRemainder,
            &mut rng,
        )
        .unwrap();
        assert_eq!(a.counts, vec![5, 3, 2]);
        // Equal remainders go to the lowest index.
        let u = allocate(
            &AssignmentProbs::uniform(3),
            4,
            AllocationPolicy::LargestRemainder,
            &mut rng,
        )
        .unwrap();
        assert_eq!(u.counts, vec![2, 1, 1]);
    }

    #[test]
    fn allocate_iid_concentrates() {
        let mut rng = SimRng::seed_from_u64(11);
        let a = allocate(
            &AssignmentProbs::uniform(3),
            100_000,
            AllocationPolicy::Iid,
            &mut rng,
        )
        .unwrap();
        assert_eq!(a.total(), 100_000);
        for &c in &a.counts {
            assert!((c as f64 - 33_333.33).abs() < 333.33, "count {c}");
        }
    }

    #[test]
    fn allocate_rejects_empty_wave() {
        let mut rng = SimRng::seed_from_u64(1);
        assert!(allocate(
            &AssignmentProbs::uniform(2),
            0,
            AllocationPolicy::Iid,
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn mechanism_names_round_trip() {
        for kind in MechanismKind::all(0.3) {
            assert_eq!(MechanismKind::from_name(kind.name(), 0.3).unwrap(), kind);
        }
        assert!(MechanismKind::from_name("ucb", 0.2).is_err());
        assert!(MechanismKind::from_name("tempered", -0.1).is_err());
        assert_eq!(
            "largest-remainder".parse::<AllocationPolicy>().unwrap(),
            AllocationPolicy::LargestRemainder
        );
    }

    fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, k).prop_filter_map("nonzero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn every_mechanism_stays_on_simplex(
            shapes in proptest::collection::vec((1.0f64..60.0, 1.0f64..60.0), 2..6),
            gamma in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let s = PosteriorState::new(shapes.iter().map(|&(a, b)| BetaParams::new(a, b).unwrap()).collect()).unwrap();
            for kind in MechanismKind::all(gamma) {
                let p = assignment_probs(kind, &s, 200, &mut SimRng::seed_from_u64(seed)).unwrap();
                prop_assert!(AssignmentProbs::new(p.into_vec()).is_ok());
            }
        }

        #[test]
        fn exploration_is_permutation_equivariant(p in simplex(4), rot in 0usize..4) {
            let p = AssignmentProbs::from_raw(p);
            let mut rotated = p.as_slice().to_vec();
            rotated.rotate_left(rot);
            let q = exploration_from_thompson(&p);
            let mut q_rot = q.as_slice().to_vec();
            q_rot.rotate_left(rot);
            let q2 = exploration_from_thompson(&AssignmentProbs::from_raw(rotated));
            for (a, b) in q_rot.iter().zip(q2.as_slice()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn allocations_sum_to_wave_size(p in simplex(3), n_t in 1u64..500, seed in any::<u64>()) {
            let p = AssignmentProbs::from_raw(p);
            let mut rng = SimRng::seed_from_u64(seed);
            for policy in [AllocationPolicy::Iid, AllocationPolicy::LargestRemainder] {
                prop_assert_eq!(allocate(&p, n_t, policy, &mut rng).unwrap().total(), n_t);
            }
            let a = allocate(&p, n_t, AllocationPolicy::LargestRemainder, &mut rng).unwrap();
            let b = allocate(&p, n_t, AllocationPolicy::LargestRemainder, &mut SimRng::seed_from_u64(0)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
