//! Oracle suite: checks the Monte Carlo and closed-form routes against
//! independent ones and verifies the mechanism identities.

use std::fmt;

use rand::{Rng, SeedableRng};

use crate::mechanism::{
    assignment_probs, exploration_from_thompson, AssignmentProbs, MechanismKind,
};
use crate::posterior::{
    prob_best_mc, prob_best_quadrature, sample_posterior, BetaParams, PosteriorState,
    DEFAULT_QUADRATURE_NODES,
};
use crate::SimRng;

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub seed: u64,
    pub quadrature_nodes: usize,
    /// Draws for the probability-of-best Monte Carlo route.
    pub prob_best_draws: usize,
    /// Draws for the Monte Carlo RMSE route.
    pub rmse_draws: usize,
    /// Random states (and random RMSE cases) per check.
    pub cases: usize,
    /// Shapes are drawn uniformly from `[1, max_shape]`.
    pub max_shape: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            seed: 0x5EED,
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
            prob_best_draws: 200_000,
            rmse_draws: 100_000,
            cases: 50,
            max_shape: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_deviation: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: Option<String>,
}

impl CheckResult {
    fn measured(name: &'static str, max_deviation: f64, threshold: f64) -> Self {
        Self {
            name,
            max_deviation,
            threshold,
            passed: max_deviation < threshold,
            detail: None,
        }
    }

    /// Exact identity: passes only when the deviation is exactly zero.
    fn exact(name: &'static str, max_deviation: f64) -> Self {
        Self {
            name,
            max_deviation,
            threshold: 0.0,
            passed: max_deviation == 0.0,
            detail: None,
        }
    }

    fn failed(name: &'static str, threshold: f64, detail: String) -> Self {
        Self {
            name,
            max_deviation: f64::NAN,
            threshold,
            passed: false,
            detail: Some(detail),
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let bound = if self.threshold == 0.0 {
            "== 0 (exact)".to_string()
        } else {
            format!("< {:.1e}", self.threshold)
        };
        write!(
            f,
            "[{verdict}] {:<48} max deviation {:.3e} {bound}",
            self.name, self.max_deviation
        )?;
        if let Some(d) = &self.detail {
            write!(f, " ({d})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        write!(f, "{passed}/{} checks passed", self.checks.len())
    }
}

pub const PROB_BEST_TOL: f64 = 0.005;
pub const ANALYTIC_TOL: f64 = 1e-6;
pub const RMSE_TOL: f64 = 0.005;
pub const EXPLORATION_TOL: f64 = 1e-12;

fn random_shape<R: Rng>(rng: &mut R, max: f64) -> f64 {
    rng.random_range(1.0..=max)
}

fn max_gap(a: &AssignmentProbs, b: &AssignmentProbs) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn check_prob_best_routes(cfg: &OracleConfig) -> CheckResult {
    const NAME: &str = "prob_best_mc_vs_quadrature";
    let mut rng = SimRng::seed_from_u64(cfg.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.cases {
        let arms = (0..3)
            .map(|_| {
                BetaParams::new(
                    random_shape(&mut rng, cfg.max_shape),
                    random_shape(&mut rng, cfg.max_shape),
                )
            })
            .collect::<crate::Result<Vec<_>>>()
            .expect("shapes are >= 1");
        let state = PosteriorState::new(arms).expect("three valid arms");
        let quad = match prob_best_quadrature(&state, cfg.quadrature_nodes) {
            Ok(q) => q,
            Err(e) => return CheckResult::failed(NAME, PROB_BEST_TOL, e.to_string()),
        };
        let mc = match prob_best_mc(&state, cfg.prob_best_draws, &mut rng) {
            Ok(p) => p,
            Err(e) => return CheckResult::failed(NAME, PROB_BEST_TOL, e.to_string()),
        };
        worst = worst.max(max_gap(&quad, &mc));
    }
    CheckResult::measured(NAME, worst, PROB_BEST_TOL)
}

pub fn check_two_arm_analytic(cfg: &OracleConfig) -> CheckResult {
    const NAME: &str = "quadrature_two_arm_analytic";
    let state = PosteriorState::new(vec![
        BetaParams::new(2.0, 1.0).expect("valid"),
        BetaParams::uniform(),
    ])
    .expect("two arms");
    match prob_best_quadrature(&state, cfg.quadrature_nodes) {
        Ok(p) => {
            let want = AssignmentProbs::new(vec![2.0 / 3.0, 1.0 / 3.0]).expect("simplex");
            CheckResult::measured(NAME, max_gap(&p, &want), ANALYTIC_TOL)
        }
        Err(e) => CheckResult::failed(NAME, ANALYTIC_TOL, e.to_string()),
    }
}

pub fn check_rmse_routes(cfg: &OracleConfig) -> CheckResult {
    const NAME: &str = "rmse_closed_form_vs_mc";
    let mut rng = SimRng::seed_from_u64(cfg.seed ^ 0x524D_5345);
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.cases {
        let p = BetaParams::new(
            random_shape(&mut rng, cfg.max_shape),
            random_shape(&mut rng, cfg.max_shape),
        )
        .expect("shapes are >= 1");
        let theta: f64 = rng.random();
        let draws = match sample_posterior(&p, &mut rng, cfg.rmse_draws) {
            Ok(d) => d,
            Err(e) => return CheckResult::failed(NAME, RMSE_TOL, e.to_string()),
        };
        let mc =
            (draws.iter().map(|x| (theta - x).powi(2)).sum::<f64>() / draws.len() as f64).sqrt();
        worst = worst.max((mc - p.rmse(theta)).abs());
    }
    CheckResult::measured(NAME, worst, RMSE_TOL)
}

fn algebra_state() -> PosteriorState {
    PosteriorState::new(vec![
        BetaParams::new(12.0, 9.0).expect("valid"),
        BetaParams::new(7.0, 7.0).expect("valid"),
        BetaParams::new(3.0, 5.0).expect("valid"),
    ])
    .expect("three arms")
}

pub fn check_tempered_endpoints(cfg: &OracleConfig) -> Vec<CheckResult> {
    let state = algebra_state();
    let run = |kind| assignment_probs(kind, &state, 1_000, &mut SimRng::seed_from_u64(cfg.seed));
    let pair = |a: crate::Result<AssignmentProbs>, b: crate::Result<AssignmentProbs>| match (a, b) {
        (Ok(a), Ok(b)) => Ok(max_gap(&a, &b)),
        (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
    };
    let zero = pair(
        run(MechanismKind::Tempered { gamma: 0.0 }),
        run(MechanismKind::Thompson),
    );
    let one = pair(
        run(MechanismKind::Tempered { gamma: 1.0 }),
        run(MechanismKind::RandomAssignment),
    );
    [
        ("mechanism_algebra/tempered_gamma0_is_thompson", zero),
        ("mechanism_algebra/tempered_gamma1_is_ra", one),
    ]
    .into_iter()
    .map(|(name, r)| match r {
        Ok(d) => CheckResult::exact(name, d),
        Err(e) => CheckResult::failed(name, 0.0, e),
    })
    .collect()
}

pub fn check_exploration_formula() -> CheckResult {
    let q = exploration_from_thompson(&AssignmentProbs::new(vec![0.5, 0.3, 0.2]).expect("simplex"));
    let want = AssignmentProbs::new(vec![25.0 / 62.0, 21.0 / 62.0, 16.0 / 62.0]).expect("simplex");
    CheckResult::measured(
        "mechanism_algebra/exploration_formula",
        max_gap(&q, &want),
        EXPLORATION_TOL,
    )
}

/// Runs every oracle check. Deterministic for a fixed config.
pub fn run_oracles(cfg: &OracleConfig) -> ValidationReport {
    let mut checks = vec![
        check_prob_best_routes(cfg),
        check_two_arm_analytic(cfg),
        check_rmse_routes(cfg),
    ];
    checks.extend(check_tempered_endpoints(cfg));
    checks.push(check_exploration_formula());
    ValidationReport { checks }
}
