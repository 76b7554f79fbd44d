//! On-disk artifacts.
//!
//! Batches and posteriors are CSV files with a JSON sidecar of the same
//! stem; everything else is JSON. Numbers are written in shortest
//! round-trip form, so loading and re-saving an artifact reproduces it byte
//! for byte. Every artifact carries the config hash and seed of its run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::abc::{AcceptanceInfo, Provenance, SimulationBatch, TruncationRegion, WeightedPosterior};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::mat::{self, Matrix};
use crate::semiauto::{SemiautoRun, SummaryProjector, TargetEstimate};

pub const CONFIG_FILE: &str = "config.json";
pub const PILOT_BATCH: &str = "pilot_batch";
pub const PILOT_POSTERIOR: &str = "pilot_posterior";
pub const TRUNCATION_FILE: &str = "truncation.json";
pub const CONSTRUCT_BATCH: &str = "construct_batch";
pub const PROJECTOR_FILE: &str = "projector.json";
pub const MAIN_BATCH: &str = "main_batch";
pub const POSTERIOR: &str = "posterior";
pub const ADJUSTED_POSTERIOR: &str = "posterior_adjusted";
pub const ESTIMATES_FILE: &str = "estimates.json";
pub const ESTIMATES_CSV: &str = "estimates.csv";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn artifact_err(path: &Path, message: impl ToString) -> Error {
    Error::Artifact {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| artifact_err(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| artifact_err(path, e))
}

fn fmt_f64(v: f64) -> String {
    ryu::Buffer::new().format(v).to_string()
}

fn csv_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.csv"))
}

fn sidecar_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.json"))
}

fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| artifact_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| artifact_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| artifact_err(path, e))?;
    write_text(path, &String::from_utf8(bytes).expect("csv output is utf8"))
}

/// Reads a numeric CSV; returns the header and rows.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = read_text(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| artifact_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| artifact_err(path, e))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| artifact_err(path, format!("`{f}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

/// Metadata stored beside a batch CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSidecar {
    pub kind: String,
    pub model: String,
    pub seed: u64,
    pub prior_hash: String,
    pub config_hash: String,
    pub rows: usize,
    pub param_dim: usize,
    pub stat_dim: usize,
}

/// Writes `stem.csv` (`draw_index, theta_1.., s_1..`) and `stem.json`.
pub fn write_batch(dir: &Path, stem: &str, batch: &SimulationBatch, config_hash: &str) -> Result<()> {
    let (p, d) = (batch.param_dim(), batch.stat_dim());
    let header: Vec<String> = std::iter::once("draw_index".to_string())
        .chain(numbered("theta", p))
        .chain(numbered("s", d))
        .collect();
    let rows = (0..batch.len()).map(|i| {
        std::iter::once(i.to_string())
            .chain(batch.thetas.row(i).iter().map(|v| fmt_f64(*v)))
            .chain(batch.stats.row(i).iter().map(|v| fmt_f64(*v)))
            .collect()
    });
    write_table(&csv_path(dir, stem), &header, rows)?;
    write_json(
        &sidecar_path(dir, stem),
        &BatchSidecar {
            kind: "batch".into(),
            model: batch.model.clone(),
            seed: batch.seed,
            prior_hash: batch.prior_hash.clone(),
            config_hash: config_hash.into(),
            rows: batch.len(),
            param_dim: p,
            stat_dim: d,
        },
    )
}

pub fn read_batch(dir: &Path, stem: &str) -> Result<(SimulationBatch, BatchSidecar)> {
    let side_path = sidecar_path(dir, stem);
    let side: BatchSidecar = read_json(&side_path)?;
    let path = csv_path(dir, stem);
    let (header, rows) = read_table(&path)?;
    let (p, d) = (side.param_dim, side.stat_dim);
    if header.len() != 1 + p + d || rows.len() != side.rows {
        return Err(artifact_err(&path, "shape disagrees with sidecar"));
    }
    let mut thetas = Vec::with_capacity(rows.len() * p);
    let mut stats = Vec::with_capacity(rows.len() * d);
    for (i, r) in rows.iter().enumerate() {
        if r[0] != i as f64 {
            return Err(artifact_err(&path, format!("row {i} has draw_index {}", r[0])));
        }
        thetas.extend_from_slice(&r[1..=p]);
        stats.extend_from_slice(&r[1 + p..]);
    }
    let batch = SimulationBatch {
        thetas: Matrix::new(rows.len(), p, thetas)?,
        stats: Matrix::new(rows.len(), d, stats)?,
        seed: side.seed,
        model: side.model.clone(),
        prior_hash: side.prior_hash.clone(),
    };
    Ok((batch, side))
}

/// Metadata stored beside a posterior CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorSidecar {
    pub kind: String,
    pub rows: usize,
    pub param_dim: usize,
    pub provenance: Provenance,
    /// Realised tolerance.
    pub epsilon: f64,
    pub distances: Vec<f64>,
    pub scales: Vec<f64>,
    pub total_draws: usize,
}

/// Writes `stem.csv` (`draw_index, theta_1.., weight`) and `stem.json`.
pub fn write_posterior(dir: &Path, stem: &str, post: &WeightedPosterior) -> Result<()> {
    let p = post.thetas.cols();
    let header: Vec<String> = std::iter::once("draw_index".to_string())
        .chain(numbered("theta", p))
        .chain(std::iter::once("weight".to_string()))
        .collect();
    let rows = (0..post.len()).map(|i| {
        std::iter::once(post.acceptance.indices[i].to_string())
            .chain(post.thetas.row(i).iter().map(|v| fmt_f64(*v)))
            .chain(std::iter::once(fmt_f64(post.weights[i])))
            .collect()
    });
    write_table(&csv_path(dir, stem), &header, rows)?;
    write_json(
        &sidecar_path(dir, stem),
        &PosteriorSidecar {
            kind: "posterior".into(),
            rows: post.len(),
            param_dim: p,
            provenance: post.provenance.clone(),
            epsilon: post.acceptance.epsilon,
            distances: post.acceptance.distances.clone(),
            scales: post.acceptance.scales.clone(),
            total_draws: post.acceptance.total_draws,
        },
    )
}

/// Loads a posterior and checks its row count and that weights sum to 1.
pub fn read_posterior(dir: &Path, stem: &str) -> Result<WeightedPosterior> {
    let side: PosteriorSidecar = read_json(&sidecar_path(dir, stem))?;
    let path = csv_path(dir, stem);
    let (header, rows) = read_table(&path)?;
    let p = side.param_dim;
    if header.len() != p + 2 || rows.len() != side.rows || side.distances.len() != side.rows {
        return Err(artifact_err(&path, "shape disagrees with sidecar"));
    }
    if rows.is_empty() {
        return Err(artifact_err(&path, "posterior has no rows"));
    }
    let weights: Vec<f64> = rows.iter().map(|r| r[p + 1]).collect();
    let total = mat::stable_sum(weights.clone());
    if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
        return Err(artifact_err(&path, format!("weights sum to {total}, not 1")));
    }
    let mut thetas = Vec::with_capacity(rows.len() * p);
    for r in &rows {
        thetas.extend_from_slice(&r[1..=p]);
    }
    Ok(WeightedPosterior {
        thetas: Matrix::new(rows.len(), p, thetas)?,
        weights,
        acceptance: AcceptanceInfo {
            epsilon: side.epsilon,
            indices: rows.iter().map(|r| r[0] as usize).collect(),
            distances: side.distances,
            scales: side.scales,
            total_draws: side.total_draws,
        },
        provenance: side.provenance,
    })
}

/// JSON envelope for single-object artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stamped<T> {
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub body: T,
}

impl<T> Stamped<T> {
    pub fn new(kind: &str, config: &RunConfig, body: T) -> Self {
        Self {
            kind: kind.into(),
            config_hash: config.hash(),
            seed: config.seed,
            body,
        }
    }
}

/// Fails unless an artifact was produced under `config`.
pub fn check_hash(path: &Path, found: &str, config: &RunConfig) -> Result<()> {
    let expected = config.hash();
    if found == expected {
        Ok(())
    } else {
        Err(Error::ProvenanceMismatch(format!(
            "{} was written by config {}, current config is {}",
            path.display(),
            &found[..found.len().min(12)],
            &expected[..12]
        )))
    }
}

/// Reads a stamped artifact and checks it belongs to `config`'s run.
pub fn read_stamped<T: DeserializeOwned>(path: &Path, config: &RunConfig) -> Result<T> {
    let s: Stamped<T> = read_json(path)?;
    check_hash(path, &s.config_hash, config)?;
    Ok(s.body)
}

pub fn read_batch_checked(dir: &Path, stem: &str, config: &RunConfig) -> Result<SimulationBatch> {
    let (batch, side) = read_batch(dir, stem)?;
    check_hash(&sidecar_path(dir, stem), &side.config_hash, config)?;
    Ok(batch)
}

pub fn read_posterior_checked(dir: &Path, stem: &str, config: &RunConfig) -> Result<WeightedPosterior> {
    let post = read_posterior(dir, stem)?;
    let found = post.provenance.config_hash.clone().unwrap_or_default();
    check_hash(&sidecar_path(dir, stem), &found, config)?;
    Ok(post)
}

pub fn write_config(dir: &Path, config: &RunConfig) -> Result<()> {
    let mut copy = config.clone();
    copy.out_dir = None;
    write_text(&dir.join(CONFIG_FILE), &(copy.to_pretty_json() + "\n"))
}

pub fn write_truncation(dir: &Path, config: &RunConfig, region: &TruncationRegion) -> Result<()> {
    write_json(&dir.join(TRUNCATION_FILE), &Stamped::new("truncation", config, region))
}

pub fn read_truncation(dir: &Path, config: &RunConfig) -> Result<TruncationRegion> {
    read_stamped(&dir.join(TRUNCATION_FILE), config)
}

pub fn write_projector(dir: &Path, config: &RunConfig, projector: &SummaryProjector) -> Result<()> {
    write_json(&dir.join(PROJECTOR_FILE), &Stamped::new("projector", config, projector))
}

pub fn read_projector(dir: &Path, config: &RunConfig) -> Result<SummaryProjector> {
    read_stamped(&dir.join(PROJECTOR_FILE), config)
}

pub fn write_estimates(dir: &Path, config: &RunConfig, estimates: &[TargetEstimate]) -> Result<()> {
    write_json(&dir.join(ESTIMATES_FILE), &Stamped::new("estimates", config, estimates))?;
    let header: Vec<String> = ["target", "estimate", "oracle", "abs_error", "mc_sd"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let rows = estimates.iter().map(|e| {
        vec![
            e.target.clone(),
            fmt_f64(e.estimate),
            opt(e.oracle),
            opt(e.abs_error),
            fmt_f64(e.mc_sd),
        ]
    });
    write_table(&dir.join(ESTIMATES_CSV), &header, rows)
}

pub fn read_estimates(dir: &Path, config: &RunConfig) -> Result<Vec<TargetEstimate>> {
    read_stamped(&dir.join(ESTIMATES_FILE), config)
}

/// Persists every artifact of a full pipeline run.
pub fn write_run(dir: &Path, config: &RunConfig, run: &SemiautoRun) -> Result<()> {
    let hash = &run.config_hash;
    write_config(dir, config)?;
    write_batch(dir, PILOT_BATCH, &run.pilot_batch, hash)?;
    write_posterior(dir, PILOT_POSTERIOR, &run.pilot.posterior)?;
    write_truncation(dir, config, &run.pilot.region)?;
    write_batch(dir, CONSTRUCT_BATCH, &run.construct.batch, hash)?;
    write_projector(dir, config, &run.construct.projector)?;
    write_batch(dir, MAIN_BATCH, &run.infer.batch, hash)?;
    write_posterior(dir, POSTERIOR, &run.infer.posterior)?;
    if let Some(adj) = &run.infer.adjusted {
        write_posterior(dir, ADJUSTED_POSTERIOR, adj)?;
    }
    write_estimates(dir, config, &run.infer.estimates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abc::{rejection_abc, Acceptance};

    fn batch() -> SimulationBatch {
        SimulationBatch {
            thetas: Matrix::from_fn(30, 2, |i, j| (i as f64 * 0.1).sin() + j as f64 / 3.0),
            stats: Matrix::from_fn(30, 1, |i, _| (i as f64).sqrt() * 1e-7),
            seed: 9,
            model: "toy".into(),
            prior_hash: "abc".into(),
        }
    }

    #[test]
    fn batch_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let b = batch();
        write_batch(dir.path(), "b", &b, "h").unwrap();
        let (back, side) = read_batch(dir.path(), "b").unwrap();
        assert_eq!(back, b);
        let first = fs::read(dir.path().join("b.csv")).unwrap();
        write_batch(dir.path(), "b", &back, &side.config_hash).unwrap();
        assert_eq!(fs::read(dir.path().join("b.csv")).unwrap(), first);
    }

    #[test]
    fn posterior_round_trip_and_weight_check() {
        let dir = tempfile::tempdir().unwrap();
        let post = rejection_abc(&batch(), &[0.0], Acceptance::Fraction(0.3)).unwrap();
        write_posterior(dir.path(), "p", &post).unwrap();
        let csv1 = fs::read(dir.path().join("p.csv")).unwrap();
        let json1 = fs::read(dir.path().join("p.json")).unwrap();
        let back = read_posterior(dir.path(), "p").unwrap();
        assert_eq!(back, post);
        write_posterior(dir.path(), "p", &back).unwrap();
        assert_eq!(fs::read(dir.path().join("p.csv")).unwrap(), csv1);
        assert_eq!(fs::read(dir.path().join("p.json")).unwrap(), json1);

        let mut bad = post.clone();
        bad.weights[0] *= 2.0;
        write_posterior(dir.path(), "bad", &bad).unwrap();
        assert!(read_posterior(dir.path(), "bad").is_err());
    }

    #[test]
    fn missing_artifact_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_batch(dir.path(), "nope").unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(ref p) if p.ends_with("nope.json")));
    }
}
