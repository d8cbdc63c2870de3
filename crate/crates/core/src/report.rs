//! Experiment configuration files, run manifests and result files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_spike_model, EntryDist, Regime};
use crate::montecarlo::{ExperimentConfig, ExperimentSummary, Mode, SpikeSummary};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SFL_THREADS";

fn default_dist() -> EntryDist {
    EntryDist::Gaussian
}

/// On-disk form of [`ExperimentConfig`]. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub p: usize,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    /// Expanded spike list, one entry per spiked direction, descending.
    pub spikes: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiplicities: Option<Vec<usize>>,
    /// Row-major `q x q` orthogonal matrix; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<Vec<f64>>,
    #[serde(default = "default_dist")]
    pub dist: EntryDist,
    pub seed: u64,
    pub replications: usize,
    /// 1-based spike indices; all spikes when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<usize>>,
    pub mode: Mode,
}

fn field_error(field: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        e @ Error::Config { .. } => e,
        other => Error::config(field, other.to_string()),
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Validates and builds the experiment configuration. Every failure is a
    /// [`Error::Config`] naming the offending field.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let q = self.spikes.len();
        if self.p == 0 {
            return Err(Error::config("p", "must be positive"));
        }
        if self.n <= self.p {
            return Err(Error::config("n", format!("must exceed p = {}", self.p)));
        }
        if self.t == 0 {
            return Err(Error::config("T", "must be at least 1"));
        }
        if q >= self.p {
            return Err(Error::config("spikes", format!("{q} spikes need p > {q}")));
        }
        let regime = Regime::new(self.p, self.n, self.t, q).map_err(field_error("p"))?;
        let rotation = match &self.rotation {
            None => None,
            Some(v) if v.len() != q * q => {
                return Err(Error::config(
                    "rotation",
                    format!("{} entries given, expected {}", v.len(), q * q),
                ))
            }
            Some(v) => Some(DMatrix::from_row_slice(q, q, v)),
        };
        let model = build_spike_model(
            &self.spikes,
            self.multiplicities.as_deref(),
            rotation,
            self.dist,
        )
        .map_err(|e| {
            let field = match e {
                Error::InvalidRotation { .. } | Error::Dimension(_) => "rotation",
                Error::InvalidSpectrum(ref m) if m.contains("multiplicities") => "multiplicities",
                _ => "spikes",
            };
            field_error(field)(e)
        })?;
        ExperimentConfig::new(
            regime,
            model,
            self.replications,
            self.seed,
            self.targets.clone(),
            self.mode,
        )
    }

    /// Inverse of [`ConfigFile::resolve`].
    pub fn from_config(config: &ExperimentConfig) -> Self {
        let model = &config.model;
        let q = model.q();
        let rotation = (!model.is_identity_rotation()).then(|| {
            (0..q)
                .flat_map(|i| (0..q).map(move |j| (i, j)))
                .map(|(i, j)| model.rotation()[(i, j)])
                .collect()
        });
        Self {
            p: config.regime.p(),
            n: config.regime.n(),
            t: config.regime.t(),
            spikes: model.spikes().to_vec(),
            multiplicities: Some(model.multiplicities().to_vec()),
            rotation,
            dist: model.dist(),
            seed: config.master_seed,
            replications: config.replications,
            targets: Some(config.targets.clone()),
            mode: config.mode,
        }
    }
}

/// Reads [`THREADS_ENV`]; unset or empty means rayon's default.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::config(
                THREADS_ENV,
                format!("expected a positive integer, got {v:?}"),
            )),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// Written before the run; left in place if the run is interrupted.
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: RunStatus,
    pub version: String,
    /// UTC, ISO-8601.
    pub started: String,
    pub finished: Option<String>,
    pub duration_seconds: Option<f64>,
    pub master_seed: u64,
    pub config: ConfigFile,
    pub outputs: Vec<PathBuf>,
    pub error: Option<String>,
}

fn utc_now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn begin(config: &ExperimentConfig) -> Self {
        Self {
            status: RunStatus::Running,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: utc_now(),
            finished: None,
            duration_seconds: None,
            master_seed: config.master_seed,
            config: ConfigFile::from_config(config),
            outputs: Vec::new(),
            error: None,
        }
    }

    fn close(&mut self, status: RunStatus, duration_seconds: f64) {
        self.status = status;
        self.finished = Some(utc_now());
        self.duration_seconds = Some(duration_seconds);
    }

    pub fn complete(&mut self, duration_seconds: f64) {
        self.close(RunStatus::Complete, duration_seconds);
    }

    pub fn fail(&mut self, duration_seconds: f64, error: &Error) {
        self.close(RunStatus::Failed, duration_seconds);
        self.error = Some(error.to_string());
    }

    /// Writes `manifest.json` into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        ensure_dir(dir)?;
        let path = dir.join("manifest.json");
        write_file(&path, &(serde_json::to_string_pretty(self)? + "\n"))?;
        Ok(path)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// 17 significant digits, locale-independent.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn samples_csv(spike: &SpikeSummary) -> String {
    let mut out = String::from("replication,lambda_hat,delta,normalized\n");
    for k in 0..spike.replication.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            spike.replication[k],
            format_float(spike.lambda_hat[k]),
            format_float(spike.delta[k]),
            format_float(spike.normalized[k])
        );
    }
    out
}

pub fn qq_csv(spike: &SpikeSummary) -> String {
    let mut out = String::from("normal_quantile,sample_quantile\n");
    for &(theory, sample) in &spike.fluctuation.qq {
        let _ = writeln!(out, "{},{}", format_float(theory), format_float(sample));
    }
    out
}

/// Writes `summary.json`, `samples_<i>.csv` and `qq_<i>.csv` per tracked
/// spike, then the finalized `manifest.json`. Returns every written path.
pub fn write_summary(
    summary: &ExperimentSummary,
    manifest: &mut RunManifest,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    let path = dir.join("summary.json");
    write_file(&path, &(serde_json::to_string_pretty(summary)? + "\n"))?;
    written.push(path);
    for spike in &summary.spikes {
        let path = dir.join(format!("samples_{}.csv", spike.spike));
        write_file(&path, &samples_csv(spike))?;
        written.push(path);
        let path = dir.join(format!("qq_{}.csv", spike.spike));
        write_file(&path, &qq_csv(spike))?;
        written.push(path);
    }
    manifest.outputs = written.clone();
    manifest.outputs.push(dir.join("manifest.json"));
    written.push(manifest.write(dir)?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_file() -> ConfigFile {
        ConfigFile::parse(
            r#"{"p": 40, "n": 200, "T": 120, "spikes": [60, 60, 20],
                "seed": 3, "replications": 4, "mode": "clt_simple"}"#,
        )
        .unwrap()
    }

    #[test]
    fn parse_defaults() {
        let file = sample_file();
        assert_eq!(file.dist, EntryDist::Gaussian);
        let config = file.resolve().unwrap();
        assert_eq!(config.targets, vec![1, 2, 3]);
        assert_eq!(config.model.multiplicities(), &[2, 1]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ConfigFile::parse(
            r#"{"p": 40, "n": 200, "T": 120, "spikes": [], "seed": 3,
                "replications": 4, "mode": "consistency", "colour": 1}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("colour"));
    }

    #[test]
    fn resolve_names_the_field() {
        let field_of = |f: ConfigFile| match f.resolve().unwrap_err() {
            Error::Config { field, .. } => field,
            e => panic!("{e}"),
        };
        let mut f = sample_file();
        f.n = 30;
        assert_eq!(field_of(f), "n");
        let mut f = sample_file();
        f.spikes = vec![60.0, 0.5, 0.4];
        assert_eq!(field_of(f), "spikes");
        let mut f = sample_file();
        f.rotation = Some(vec![1.0; 9]);
        assert_eq!(field_of(f), "rotation");
        let mut f = sample_file();
        f.multiplicities = Some(vec![1, 1]);
        assert_eq!(field_of(f), "multiplicities");
        let mut f = sample_file();
        f.targets = Some(vec![7]);
        assert_eq!(field_of(f), "targets");
    }

    #[test]
    fn round_trip_through_json() {
        let angle: f64 = 0.3;
        let (s, c) = angle.sin_cos();
        let mut file = sample_file();
        file.spikes = vec![60.0, 20.0, 5.0];
        file.rotation = Some(vec![c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
        file.dist = EntryDist::UniformSym;
        file.targets = Some(vec![3, 1]);
        let config = file.resolve().unwrap();
        let text = ConfigFile::from_config(&config).to_json().unwrap();
        assert_eq!(ConfigFile::parse(&text).unwrap().resolve().unwrap(), config);
    }

    #[test]
    fn float_format_round_trips() {
        for &x in &[0.1, -1.0 / 3.0, 6.02214076e23, 5e-324, 476.4902206600369] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            assert!(!s.contains(','));
        }
    }
}
