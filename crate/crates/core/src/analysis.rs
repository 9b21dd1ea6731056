//! Aggregation of run-store records into mean/CI tables and win matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::TrialRecord;
use crate::loss::{hybrid_loss, BaseMeasure, HybridSpec, LossVector};
use crate::mechanism::MechanismTag;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCI {
    pub mean: f64,
    /// `1.96 * s / sqrt(n)`; zero when `n == 1`.
    pub half_width: f64,
    pub n: u64,
}

impl MeanCI {
    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }

    /// True if the two intervals do not overlap.
    pub fn disjoint(&self, other: &MeanCI) -> bool {
        self.upper() < other.lower() || other.upper() < self.lower()
    }
}

/// Mean with a normal-approximation 95% interval from the sample standard
/// deviation. `None` for an empty slice.
pub fn mean_ci(values: &[f64]) -> Option<MeanCI> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    if values.iter().all(|&v| v == values[0]) {
        return Some(MeanCI {
            mean: values[0],
            half_width: 0.0,
            n: n as u64,
        });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let half_width = if n > 1 {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        Z_95 * (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
    } else {
        0.0
    };
    Some(MeanCI {
        mean,
        half_width,
        n: n as u64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub measure: BaseMeasure,
    pub mechanism: MechanismTag,
    pub wave_size: u64,
    pub ci: MeanCI,
}

/// Per (mechanism, wave size) mean of `measure`, rows ordered by mechanism id
/// then wave size.
///
/// Values are summed in trial order, so the result does not depend on record
/// order. Combinations of a mechanism and wave size that both occur in the
/// store but have no records together are omitted and reported in the
/// returned warnings.
pub fn aggregate_means(
    records: &[TrialRecord],
    measure: BaseMeasure,
) -> (Vec<AggregateRow>, Vec<String>) {
    let mut groups: BTreeMap<(MechanismTag, u64), Vec<(u64, f64)>> = BTreeMap::new();
    let mut mechs = BTreeSet::new();
    let mut waves = BTreeSet::new();
    for r in records {
        mechs.insert(r.mechanism);
        waves.insert(r.wave_size);
        groups
            .entry((r.mechanism, r.wave_size))
            .or_default()
            .push((r.trial, r.losses().get(measure)));
    }
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &m in &mechs {
        for &w in &waves {
            let Some(group) = groups.get_mut(&(m, w)) else {
                warnings.push(format!(
                    "{measure}: no records for {m} at wave size {w}; group omitted"
                ));
                continue;
            };
            group.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let values: Vec<f64> = group.iter().map(|&(_, v)| v).collect();
            if values.len() < 2 {
                warnings.push(format!(
                    "{measure}: only one record for {m} at wave size {w}; interval is degenerate"
                ));
            }
            let ci = mean_ci(&values).expect("groups are never empty");
            rows.push(AggregateRow {
                measure,
                mechanism: m,
                wave_size: w,
                ci,
            });
        }
    }
    (rows, warnings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WinMode {
    #[serde(rename = "per-trial")]
    PerTrial,
    #[serde(rename = "avg")]
    Avg,
}

impl WinMode {
    pub fn name(&self) -> &'static str {
        match self {
            WinMode::PerTrial => "per-trial",
            WinMode::Avg => "avg",
        }
    }
}

impl std::str::FromStr for WinMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-trial" => Ok(WinMode::PerTrial),
            "avg" => Ok(WinMode::Avg),
            other => Err(Error::Contract(format!(
                "unknown mode `{other}`; use per-trial or avg"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WinCell {
    pub spec: HybridSpec,
    pub winner: MechanismTag,
    /// Indexed by mechanism id. Win shares in per-trial mode, mean losses in
    /// avg mode; `None` for mechanisms absent from the store.
    pub values: [Option<f64>; 4],
    /// Avg mode only: another mechanism had exactly the winning mean.
    pub tied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WinMatrix {
    pub wave_size: u64,
    pub mode: WinMode,
    /// Fifteen cells in [`HybridSpec::cells`] order.
    pub cells: Vec<WinCell>,
    /// Trials used for every cell.
    pub trials: u64,
    /// Trials dropped because a mechanism's record was missing.
    pub excluded_trials: u64,
}

impl WinMatrix {
    pub fn cell(&self, spec: HybridSpec) -> Option<&WinCell> {
        self.cells.iter().find(|c| c.spec == spec)
    }
}

/// Paired trials at one wave size: for each trial with every mechanism
/// present, the loss vectors indexed by mechanism id.
struct Paired {
    mechanisms: Vec<MechanismTag>,
    trials: Vec<[Option<LossVector>; 4]>,
    excluded: u64,
}

fn pair_trials(records: &[TrialRecord], wave_size: u64) -> Result<Paired> {
    let mut by_trial: BTreeMap<u64, [Option<LossVector>; 4]> = BTreeMap::new();
    let mut mechs = BTreeSet::new();
    for r in records.iter().filter(|r| r.wave_size == wave_size) {
        mechs.insert(r.mechanism);
        let slot = &mut by_trial.entry(r.trial).or_default()[r.mechanism.id()];
        if slot.is_some() {
            return Err(Error::Analysis(format!(
                "duplicate record for trial {} / {} / wave size {wave_size}",
                r.trial, r.mechanism
            )));
        }
        *slot = Some(r.losses());
    }
    if mechs.is_empty() {
        return Err(Error::Analysis(format!(
            "no records at wave size {wave_size}"
        )));
    }
    let mechanisms: Vec<MechanismTag> = mechs.into_iter().collect();
    let total = by_trial.len() as u64;
    let trials: Vec<_> = by_trial
        .into_values()
        .filter(|row| mechanisms.iter().all(|m| row[m.id()].is_some()))
        .collect();
    let excluded = total - trials.len() as u64;
    if trials.is_empty() {
        return Err(Error::Analysis(format!(
            "no trial at wave size {wave_size} has records for every mechanism"
        )));
    }
    Ok(Paired {
        mechanisms,
        trials,
        excluded,
    })
}

/// Share of each tie, scaled so that splitting among 1..=4 mechanisms stays integral.
const SHARE_UNIT: u64 = 12;

/// Per-trial win shares of `score` over complete trials at `wave_size`, indexed
/// by mechanism id. Exact ties split the trial evenly.
pub fn win_shares<F>(records: &[TrialRecord], wave_size: u64, score: F) -> Result<[Option<f64>; 4]>
where
    F: Fn(&LossVector) -> f64,
{
    let paired = pair_trials(records, wave_size)?;
    Ok(shares_of(&paired, &score))
}

fn shares_of(paired: &Paired, score: &dyn Fn(&LossVector) -> f64) -> [Option<f64>; 4] {
    let mut units = [0u64; 4];
    for row in &paired.trials {
        let scores: Vec<(usize, f64)> = paired
            .mechanisms
            .iter()
            .map(|m| (m.id(), score(row[m.id()].as_ref().expect("complete trial"))))
            .collect();
        let best = scores.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        let tied: Vec<usize> = scores.iter().filter(|s| s.1 == best).map(|s| s.0).collect();
        for id in &tied {
            units[*id] += SHARE_UNIT / tied.len() as u64;
        }
    }
    let denom = (SHARE_UNIT * paired.trials.len() as u64) as f64;
    let mut out = [None; 4];
    for m in &paired.mechanisms {
        out[m.id()] = Some(units[m.id()] as f64 / denom);
    }
    out
}

fn mean_scores(paired: &Paired, score: &dyn Fn(&LossVector) -> f64) -> [Option<f64>; 4] {
    let mut out = [None; 4];
    for m in &paired.mechanisms {
        let sum: f64 = paired
            .trials
            .iter()
            .map(|row| score(row[m.id()].as_ref().expect("complete trial")))
            .sum();
        out[m.id()] = Some(sum / paired.trials.len() as f64);
    }
    out
}

/// Picks the extreme present value, lowest mechanism id first among equals.
fn pick(values: &[Option<f64>; 4], better: impl Fn(f64, f64) -> bool) -> (MechanismTag, bool) {
    let mut best: Option<(usize, f64)> = None;
    for (id, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| better(v, b)) {
                best = Some((id, v));
            }
        }
    }
    let (id, v) = best.expect("at least one mechanism present");
    let tied = values
        .iter()
        .enumerate()
        .any(|(j, x)| j != id && *x == Some(v));
    (MechanismTag::ALL[id], tied)
}

fn build(records: &[TrialRecord], wave_size: u64, mode: WinMode) -> Result<WinMatrix> {
    let paired = pair_trials(records, wave_size)?;
    let cells = HybridSpec::cells()
        .into_iter()
        .map(|spec| {
            let score = move |l: &LossVector| hybrid_loss(spec, l);
            let (values, winner, tied) = match mode {
                WinMode::PerTrial => {
                    let v = shares_of(&paired, &score);
                    let (w, _) = pick(&v, |a, b| a > b);
                    (v, w, false)
                }
                WinMode::Avg => {
                    let v = mean_scores(&paired, &score);
                    let (w, tied) = pick(&v, |a, b| a < b);
                    (v, w, tied)
                }
            };
            WinCell {
                spec,
                winner,
                values,
                tied,
            }
        })
        .collect();
    Ok(WinMatrix {
        wave_size,
        mode,
        cells,
        trials: paired.trials.len() as u64,
        excluded_trials: paired.excluded,
    })
}

/// For each of the fifteen cells, the share of trials on which each mechanism
/// had the lowest loss; the winner is the mechanism with the largest share.
pub fn win_matrix_per_trial(records: &[TrialRecord], wave_size: u64) -> Result<WinMatrix> {
    build(records, wave_size, WinMode::PerTrial)
}

/// For each of the fifteen cells, the mean loss of each mechanism; the winner
/// has the lowest mean.
pub fn win_matrix_avg(records: &[TrialRecord], wave_size: u64) -> Result<WinMatrix> {
    build(records, wave_size, WinMode::Avg)
}

pub fn wave_sizes(records: &[TrialRecord]) -> Vec<u64> {
    records
        .iter()
        .map(|r| r.wave_size)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

#[derive(Serialize)]
struct AggregateCsvRow<'a> {
    measure: &'a str,
    mechanism: &'a str,
    wave_size: u64,
    mean: f64,
    ci_half_width: f64,
    n: u64,
}

pub fn write_aggregate_csv(rows: &[AggregateRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(AggregateCsvRow {
            measure: r.measure.name(),
            mechanism: r.mechanism.name(),
            wave_size: r.wave_size,
            mean: r.ci.mean,
            ci_half_width: r.ci.half_width,
            n: r.ci.n,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct WinCsvRow<'a> {
    measure_a: &'a str,
    measure_b: &'a str,
    wave_size: u64,
    winner: &'a str,
    prop_ra: Option<f64>,
    prop_thompson: Option<f64>,
    prop_exploration: Option<f64>,
    prop_tempered: Option<f64>,
    mode: &'a str,
}

pub fn write_winmatrix_csv(matrices: &[WinMatrix], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for m in matrices {
        for c in &m.cells {
            w.serialize(WinCsvRow {
                measure_a: c.spec.first().name(),
                measure_b: c.spec.second().name(),
                wave_size: m.wave_size,
                winner: c.winner.name(),
                prop_ra: c.values[0],
                prop_thompson: c.values[1],
                prop_exploration: c.values[2],
                prop_tempered: c.values[3],
                mode: m.mode.name(),
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Side information for the plotting step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiguresMeta {
    pub n_total: u64,
    pub k_arms: usize,
    pub wave_sizes: Vec<u64>,
    pub aggregate_csv: String,
    pub winmatrix_per_trial_csv: String,
    pub winmatrix_avg_csv: String,
}

/// Everything the figure renderer reads: the all-measure aggregate table, both
/// win-matrix variants, and `figures_meta.json` with `n_total` for the
/// wave-count axis. Returns analysis warnings.
pub fn write_figures_data(records: &[TrialRecord], dir: &Path) -> Result<Vec<String>> {
    let first = records
        .first()
        .ok_or_else(|| Error::Analysis("run store is empty".into()))?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut warnings = Vec::new();
    let mut rows = Vec::new();
    for m in BaseMeasure::ALL {
        let (r, w) = aggregate_means(records, m);
        rows.extend(r);
        warnings.extend(w);
    }
    let waves = wave_sizes(records);
    let per_trial = waves
        .iter()
        .map(|&w| win_matrix_per_trial(records, w))
        .collect::<Result<Vec<_>>>()?;
    let avg = waves
        .iter()
        .map(|&w| win_matrix_avg(records, w))
        .collect::<Result<Vec<_>>>()?;
    let meta = FiguresMeta {
        n_total: first.counts.iter().sum(),
        k_arms: first.counts.len(),
        wave_sizes: waves,
        aggregate_csv: "aggregate.csv".into(),
        winmatrix_per_trial_csv: "winmatrix_per_trial.csv".into(),
        winmatrix_avg_csv: "winmatrix_avg.csv".into(),
    };
    write_aggregate_csv(&rows, &dir.join(&meta.aggregate_csv))?;
    write_winmatrix_csv(&per_trial, &dir.join(&meta.winmatrix_per_trial_csv))?;
    write_winmatrix_csv(&avg, &dir.join(&meta.winmatrix_avg_csv))?;
    let meta_path = dir.join("figures_meta.json");
    std::fs::write(
        &meta_path,
        serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n",
    )
    .map_err(|e| Error::io(&meta_path, e))?;
    Ok(warnings)
}
