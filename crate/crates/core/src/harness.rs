//! Study configuration, seeding, single experiments and full replication
//! studies.
//!
//! All randomness is keyed to grid coordinates. The truth set of trial `i`
//! comes from a stream seeded by `(master_seed, i)` alone, so every
//! (mechanism, wave size) cell of a trial sees the same truth. Each cell then
//! gets its own stream from `(master_seed, i, mechanism, wave_size)` for
//! assignment draws, outcome draws and the final power test. Output therefore
//! depends only on the config, never on scheduling.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{evaluate, TieFlags, TruthSet, DEFAULT_ALPHA, DEFAULT_SP_DRAWS};
use crate::mechanism::{
    allocate, assignment_probs, AllocationPolicy, MechanismKind, MechanismTag, DEFAULT_GAMMA,
};
use crate::posterior::{BetaParams, OutcomeCounts, PosteriorState};
use crate::SimRng;

/// Thompson draws per wave on the simulation hot path.
pub const DEFAULT_MC_DRAWS: usize = 1_000;

/// Study configuration, read from TOML with these exact key names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub k_arms: usize,
    pub n_total: u64,
    pub wave_sizes: Vec<u64>,
    pub mechanisms: Vec<String>,
    pub gamma: f64,
    pub prior: BetaParams,
    pub replications: u64,
    /// Monte Carlo draws behind each wave's Thompson probabilities.
    pub mc_draws: usize,
    /// Monte Carlo draws behind the final power test.
    pub sp_draws: usize,
    pub alpha: f64,
    pub allocation_policy: AllocationPolicy,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            k_arms: 3,
            n_total: 1_000,
            wave_sizes: vec![4, 10, 100],
            mechanisms: MechanismKind::ALL_NAMES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            gamma: DEFAULT_GAMMA,
            prior: BetaParams::uniform(),
            replications: 10_000,
            mc_draws: DEFAULT_MC_DRAWS,
            sp_draws: DEFAULT_SP_DRAWS,
            alpha: DEFAULT_ALPHA,
            allocation_policy: AllocationPolicy::Iid,
            master_seed: 20_240_601,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_arms < 2 {
            return Err(Error::config("k_arms", "need at least 2 arms"));
        }
        if self.n_total == 0 {
            return Err(Error::config("n_total", "must be positive"));
        }
        if self.wave_sizes.is_empty() {
            return Err(Error::config(
                "wave_sizes",
                "at least one wave size is required",
            ));
        }
        for &w in &self.wave_sizes {
            if w == 0 || !self.n_total.is_multiple_of(w) {
                return Err(Error::config(
                    "wave_sizes",
                    format!("wave size {w} does not divide n_total = {}", self.n_total),
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(
                "gamma",
                format!("must lie in [0, 1], got {}", self.gamma),
            ));
        }
        self.prior
            .check()
            .map_err(|e| Error::config("prior", e.to_string()))?;
        if self.replications == 0 {
            return Err(Error::config("replications", "must be at least 1"));
        }
        if self.mc_draws == 0 {
            return Err(Error::config("mc_draws", "must be at least 1"));
        }
        if self.sp_draws == 0 {
            return Err(Error::config("sp_draws", "must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(
                "alpha",
                format!("must lie in (0, 1), got {}", self.alpha),
            ));
        }
        let kinds = self.mechanism_kinds()?;
        if kinds.is_empty() {
            return Err(Error::config(
                "mechanisms",
                "at least one mechanism is required",
            ));
        }
        let mut ids: Vec<_> = kinds.iter().map(MechanismKind::id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != kinds.len() {
            return Err(Error::config("mechanisms", "duplicate mechanism"));
        }
        let mut waves = self.wave_sizes.clone();
        waves.sort_unstable();
        waves.dedup();
        if waves.len() != self.wave_sizes.len() {
            return Err(Error::config("wave_sizes", "duplicate wave size"));
        }
        Ok(())
    }

    pub fn mechanism_kinds(&self) -> Result<Vec<MechanismKind>> {
        self.mechanisms
            .iter()
            .map(|m| MechanismKind::from_name(m, self.gamma))
            .collect()
    }

    /// Number of waves `T = N / N_t`.
    pub fn waves(&self, wave_size: u64) -> u64 {
        self.n_total / wave_size
    }

    pub fn cells_per_trial(&self) -> u64 {
        (self.mechanisms.len() * self.wave_sizes.len()) as u64
    }

    pub fn expected_records(&self) -> u64 {
        self.replications * self.cells_per_trial()
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const TRUTH_DOMAIN: u64 = 0x7472_7574_685f_7374;
const CELL_DOMAIN: u64 = 0x6365_6c6c_5f73_6565;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn chain(domain: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(domain), |h, &p| mix(h ^ mix(p)))
}

/// Seed of one cell's stream: SplitMix64 chained over
/// `(master, trial, mechanism_id, wave_size)` under a cell domain tag.
pub fn derive_seed(master: u64, trial: u64, mechanism_id: u64, wave_size: u64) -> u64 {
    chain(CELL_DOMAIN, &[master, trial, mechanism_id, wave_size])
}

/// Seed of a trial's truth stream, keyed by `(master, trial)` only.
pub fn truth_seed(master: u64, trial: u64) -> u64 {
    chain(TRUTH_DOMAIN, &[master, trial])
}

/// Truth set of `trial`: each arm iid standard uniform.
pub fn draw_truth(master: u64, trial: u64, k: usize) -> TruthSet {
    let mut rng = SimRng::seed_from_u64(truth_seed(master, trial));
    let theta = (0..k).map(|_| rng.random::<f64>()).collect();
    TruthSet::new(theta).expect("uniform draws lie in [0, 1)")
}

/// One run-store line: the complete outcome of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRecord {
    pub trial: u64,
    pub mechanism: MechanismTag,
    pub wave_size: u64,
    pub theta_star: Vec<f64>,
    pub r_sample: f64,
    pub r_policy: f64,
    pub prec_best: f64,
    pub prec_avg: f64,
    pub sp: u8,
    /// Participants assigned to each arm over the whole experiment.
    pub counts: Vec<u64>,
    pub alpha_final: Vec<f64>,
    pub beta_final: Vec<f64>,
    pub seed: u64,
    pub tie_flags: TieFlags,
}

impl TrialRecord {
    pub fn losses(&self) -> crate::loss::LossVector {
        crate::loss::LossVector {
            r_sample: self.r_sample,
            r_policy: self.r_policy,
            prec_best: self.prec_best,
            prec_avg: self.prec_avg,
            sp: self.sp,
        }
    }

    pub fn truth(&self) -> Result<TruthSet> {
        TruthSet::new(self.theta_star.clone())
    }

    pub fn final_posteriors(&self) -> Result<PosteriorState> {
        if self.alpha_final.len() != self.beta_final.len() {
            return Err(Error::Contract(
                "alpha_final and beta_final differ in length".into(),
            ));
        }
        PosteriorState::new(
            self.alpha_final
                .iter()
                .zip(&self.beta_final)
                .map(|(&a, &b)| BetaParams::new(a, b))
                .collect::<Result<_>>()?,
        )
    }
}

/// Grid coordinates of one experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub trial: u64,
    pub mechanism: MechanismKind,
    pub wave_size: u64,
}

/// Runs one experiment from the prior through `T` waves and scores it.
pub fn run_experiment(
    config: &ExperimentConfig,
    cell: Cell,
    truth: &TruthSet,
    seed: u64,
) -> Result<TrialRecord> {
    let k = config.k_arms;
    if truth.k() != k {
        return Err(Error::Contract(format!(
            "truth has {} arms, config has {k}",
            truth.k()
        )));
    }
    if cell.wave_size == 0 || !config.n_total.is_multiple_of(cell.wave_size) {
        return Err(Error::config(
            "wave_sizes",
            format!(
                "wave size {} does not divide n_total = {}",
                cell.wave_size, config.n_total
            ),
        ));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let mut state = PosteriorState::from_prior(k, config.prior)?;
    let mut totals = vec![0u64; k];
    let mut outcomes = OutcomeCounts::zeros(k);
    for _ in 0..config.waves(cell.wave_size) {
        let probs = assignment_probs(cell.mechanism, &state, config.mc_draws, &mut rng)?;
        let alloc = allocate(&probs, cell.wave_size, config.allocation_policy, &mut rng)?;
        for (arm, (&n, &theta)) in alloc.counts.iter().zip(truth.values()).enumerate() {
            let wins = (0..n).filter(|_| rng.random_bool(theta)).count() as u64;
            outcomes.successes[arm] = wins;
            outcomes.failures[arm] = n - wins;
            totals[arm] += n;
        }
        state.update_in_place(&outcomes)?;
    }
    let (losses, tie_flags) = evaluate(
        truth,
        &state,
        &totals,
        config.alpha,
        config.sp_draws,
        &mut rng,
    )?;
    Ok(TrialRecord {
        trial: cell.trial,
        mechanism: cell.mechanism.tag(),
        wave_size: cell.wave_size,
        theta_star: truth.values().to_vec(),
        r_sample: losses.r_sample,
        r_policy: losses.r_policy,
        prec_best: losses.prec_best,
        prec_avg: losses.prec_avg,
        sp: losses.sp,
        counts: totals,
        alpha_final: state.arms().iter().map(|a| a.alpha).collect(),
        beta_final: state.arms().iter().map(|a| a.beta).collect(),
        seed,
        tie_flags,
    })
}

/// Runs cell `(mechanism, wave_size)` of `trial` with coordinate-derived seeds.
pub fn run_cell(
    config: &ExperimentConfig,
    trial: u64,
    mechanism: MechanismKind,
    wave_size: u64,
) -> Result<TrialRecord> {
    let truth = draw_truth(config.master_seed, trial, config.k_arms);
    let seed = derive_seed(config.master_seed, trial, mechanism.id() as u64, wave_size);
    run_experiment(
        config,
        Cell {
            trial,
            mechanism,
            wave_size,
        },
        &truth,
        seed,
    )
}

/// Trials handed to the worker pool per batch; bounds resident records.
const TRIALS_PER_BATCH: u64 = 64;

/// Runs the full grid and feeds every record to `sink` in
/// `(trial, mechanism, wave_size)` order, in config order within a trial.
///
/// Work inside a batch runs on `threads` workers; the batch is emitted only
/// once complete, so the sink sees the same sequence for every thread count.
/// Returns the number of records emitted.
pub fn run_study<F>(config: &ExperimentConfig, threads: usize, mut sink: F) -> Result<u64>
where
    F: FnMut(&TrialRecord) -> Result<()>,
{
    config.validate()?;
    let kinds = config.mechanism_kinds()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Contract(format!("cannot start worker pool: {e}")))?;
    let mut emitted = 0;
    let mut start = 0;
    while start < config.replications {
        let end = (start + TRIALS_PER_BATCH * threads.max(1) as u64).min(config.replications);
        let units: Vec<(u64, MechanismKind, u64)> = (start..end)
            .flat_map(|t| {
                kinds
                    .iter()
                    .flat_map(move |&m| config.wave_sizes.iter().map(move |&w| (t, m, w)))
            })
            .collect();
        let batch: Vec<TrialRecord> = pool.install(|| {
            units
                .par_iter()
                .map(|&(t, m, w)| run_cell(config, t, m, w))
                .collect::<Result<_>>()
        })?;
        for rec in &batch {
            sink(rec)?;
            emitted += 1;
        }
        start = end;
    }
    Ok(emitted)
}

/// Number of worker threads to use when none is requested.
pub fn default_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}
