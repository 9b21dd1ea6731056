//! Run store: one JSON object per line, one line per experiment.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::{run_study, ExperimentConfig, TrialRecord};

pub struct StoreWriter {
    path: PathBuf,
    out: BufWriter<File>,
    written: u64,
}

impl StoreWriter {
    /// Creates (or truncates) the store at `path`.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            written: 0,
        })
    }

    pub fn append(&mut self, rec: &TrialRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, rec)
            .map_err(|e| Error::io(&self.path, std::io::Error::other(e)))?;
        self.out
            .write_all(b"\n")
            .map_err(|e| Error::io(&self.path, e))?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn finish(mut self) -> Result<u64> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.written)
    }
}

pub fn parse_record(line: &str) -> std::result::Result<TrialRecord, serde_json::Error> {
    serde_json::from_str(line)
}

/// Calls `f` on every record of the store, stopping at the first malformed line.
pub fn for_each_record<F>(path: &Path, mut f: F) -> Result<u64>
where
    F: FnMut(TrialRecord) -> Result<()>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut n = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        f(rec)?;
        n += 1;
    }
    Ok(n)
}

pub fn read_store(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut out = Vec::new();
    for_each_record(path, |r| {
        out.push(r);
        Ok(())
    })?;
    Ok(out)
}

/// Written next to every run store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 of the effective config in canonical TOML.
    pub config_hash: String,
    pub master_seed: u64,
    pub record_count: u64,
    pub expected_records: u64,
    pub threads: usize,
    pub wall_time_secs: f64,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn path_for(store: &Path) -> PathBuf {
        let mut s = store.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest always serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    Sha256::digest(config.to_toml_string().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Runs the study into a fresh store at `out` and writes its manifest.
///
/// If the store cannot be written the manifest is still written, marked
/// incomplete, with the number of records that made it to disk.
pub fn run_to_store(config: &ExperimentConfig, out: &Path, threads: usize) -> Result<RunManifest> {
    config.validate()?;
    let started = Instant::now();
    let manifest_path = RunManifest::path_for(out);
    let mut manifest = RunManifest {
        config_hash: config_hash(config),
        master_seed: config.master_seed,
        record_count: 0,
        expected_records: config.expected_records(),
        threads,
        wall_time_secs: 0.0,
        complete: false,
        error: None,
    };
    let mut writer = StoreWriter::create(out)?;
    let result = run_study(config, threads, |rec| writer.append(rec));
    let written = writer.written();
    let result = result.and_then(|_| writer.finish());
    manifest.wall_time_secs = started.elapsed().as_secs_f64();
    match result {
        Ok(n) => {
            manifest.record_count = n;
            manifest.complete = true;
            manifest.write(&manifest_path)?;
            Ok(manifest)
        }
        Err(e) => {
            manifest.record_count = written;
            manifest.error = Some(e.to_string());
            // Best effort; the original failure is the one worth reporting.
            let _ = manifest.write(&manifest_path);
            Err(e)
        }
    }
}

/// Outcome of checking a store against the invariants of its config.
#[derive(Debug, Default, Clone)]
pub struct LintReport {
    pub records: u64,
    /// `(record index, problem)` pairs.
    pub problems: Vec<(u64, String)>,
}

impl LintReport {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Problems with a single record: arm counts, count conservation in both
/// the assignment totals and the posterior shapes, and loss ranges.
pub fn lint_record(rec: &TrialRecord, config: &ExperimentConfig) -> Vec<String> {
    let mut problems = Vec::new();
    let k = config.k_arms;
    for (name, len) in [
        ("theta_star", rec.theta_star.len()),
        ("counts", rec.counts.len()),
        ("alpha_final", rec.alpha_final.len()),
        ("beta_final", rec.beta_final.len()),
    ] {
        if len != k {
            problems.push(format!("{name} has {len} entries, expected {k}"));
        }
    }
    if !config.wave_sizes.contains(&rec.wave_size) {
        problems.push(format!("wave size {} is not in the config", rec.wave_size));
    }
    if !config.mechanisms.iter().any(|m| m == rec.mechanism.name()) {
        problems.push(format!("mechanism {} is not in the config", rec.mechanism));
    }
    let assigned: u64 = rec.counts.iter().sum();
    if assigned != config.n_total {
        problems.push(format!(
            "counts sum to {assigned}, expected {}",
            config.n_total
        ));
    }
    let prior_mass = config.prior.alpha + config.prior.beta;
    let observed: f64 = rec
        .alpha_final
        .iter()
        .zip(&rec.beta_final)
        .map(|(a, b)| a + b - prior_mass)
        .sum();
    if (observed - config.n_total as f64).abs() > 1e-6 {
        problems.push(format!(
            "posteriors absorbed {observed} outcomes, expected {}",
            config.n_total
        ));
    }
    if rec.theta_star.iter().any(|t| !(0.0..=1.0).contains(t)) {
        problems.push("theta_star outside [0, 1]".into());
    }
    if !rec.losses().in_range() {
        problems.push(format!("loss outside [0, 1]: {:?}", rec.losses()));
    }
    if rec.final_posteriors().is_err() {
        problems.push("final posteriors are not valid Beta shapes".into());
    }
    problems
}

pub fn lint_records<'a>(
    records: impl IntoIterator<Item = &'a TrialRecord>,
    config: &ExperimentConfig,
) -> LintReport {
    let mut report = LintReport::default();
    for (i, rec) in records.into_iter().enumerate() {
        report.records += 1;
        report
            .problems
            .extend(lint_record(rec, config).into_iter().map(|p| (i as u64, p)));
    }
    report
}

pub fn lint_store(path: &Path, config: &ExperimentConfig) -> Result<LintReport> {
    let mut report = LintReport::default();
    for_each_record(path, |rec| {
        let i = report.records;
        report.records += 1;
        report
            .problems
            .extend(lint_record(&rec, config).into_iter().map(|p| (i, p)));
        Ok(())
    })?;
    Ok(report)
}
