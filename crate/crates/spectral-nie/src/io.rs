//! On-disk formats: dataset JSON, checkpoint manifest + binary parameter
//! sidecar, the flat sectioned run-config format, and the CSV tables.
//! Floats in JSON documents are written with 17 significant digits so that
//! read-back is bit-faithful.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{Dataset, DatasetKind, DatasetMeta, Trajectory};
use crate::error::{Error, Result};
use crate::ie::EquationKind;
use crate::neural::{Layer, LayerSpec, MLPParams};
use crate::train::{BenchRow, EpochRecord, TrainConfig};

// ---------------------------------------------------------------------------
// JSON with fixed-width scientific floats

struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        // 1 + 16 digits of mantissa: enough to reproduce any f64 exactly
        write!(writer, "{value:.16e}")
    }
}

fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SciFormatter);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Schema(e.to_string()))?;
    String::from_utf8(out).map_err(|e| Error::Schema(e.to_string()))
}

fn from_json_str<'a, T: Deserialize<'a>>(text: &'a str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
}

// ---------------------------------------------------------------------------
// Dataset files

#[derive(Serialize, Deserialize)]
struct SampleDoc {
    t: Vec<f64>,
    y: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetDoc {
    meta: DatasetMeta,
    samples: Vec<SampleDoc>,
}

pub fn dataset_to_string(ds: &Dataset) -> Result<String> {
    let samples = ds
        .samples
        .iter()
        .map(|traj| SampleDoc {
            t: traj.times.clone(),
            y: (0..traj.times.len())
                .map(|i| traj.values.row(i).iter().copied().collect())
                .collect(),
        })
        .collect();
    to_json_string(&DatasetDoc {
        meta: ds.meta.clone(),
        samples,
    })
}

pub fn dataset_from_string(text: &str) -> Result<Dataset> {
    let doc: DatasetDoc = from_json_str(text)?;
    let mut samples = Vec::with_capacity(doc.samples.len());
    for (idx, s) in doc.samples.into_iter().enumerate() {
        if s.y.len() != s.t.len() {
            return Err(Error::Schema(format!(
                "samples[{idx}]: {} rows in y but {} times",
                s.y.len(),
                s.t.len()
            )));
        }
        if s.y.iter().any(|row| row.len() != doc.meta.dim) {
            return Err(Error::Schema(format!(
                "samples[{idx}].y: row width != meta.dim {}",
                doc.meta.dim
            )));
        }
        let values = DMatrix::from_fn(s.t.len(), doc.meta.dim, |i, j| s.y[i][j]);
        let traj = Trajectory::new(s.t, values)
            .map_err(|e| Error::Schema(format!("samples[{idx}]: {e}")))?;
        samples.push(traj);
    }
    Ok(Dataset {
        samples,
        meta: doc.meta,
    })
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    std::fs::write(path, dataset_to_string(ds)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_string(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Checkpoints

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub layers: Vec<LayerSpec>,
    pub n_modes: usize,
    pub dim: usize,
    pub seed: u64,
    pub step: u64,
    pub param_count: usize,
    /// SHA-256 of the binary sidecar, lowercase hex.
    pub checksum: String,
    /// Sidecar file name, relative to the manifest.
    pub bin: String,
}

/// Parameters concatenated layer by layer, each layer's weights row-major
/// followed by its bias, as little-endian f64.
fn params_to_bytes(params: &MLPParams) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(params.total_params() * 8);
    for layer in &params.layers {
        for r in 0..layer.weight.nrows() {
            for c in 0..layer.weight.ncols() {
                bytes.extend_from_slice(&layer.weight[(r, c)].to_le_bytes());
            }
        }
        for b in layer.bias.iter() {
            bytes.extend_from_slice(&b.to_le_bytes());
        }
    }
    bytes
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        })
}

fn sidecar_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

pub fn save_checkpoint(
    manifest_path: &Path,
    params: &MLPParams,
    seed: u64,
    step: u64,
) -> Result<()> {
    let bytes = params_to_bytes(params);
    let bin_path = sidecar_path(manifest_path);
    let manifest = CheckpointManifest {
        layers: params.specs(),
        n_modes: params.n_modes,
        dim: params.dim,
        seed,
        step,
        param_count: params.total_params(),
        checksum: sha256_hex(&bytes),
        bin: bin_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    std::fs::write(&bin_path, &bytes)?;
    std::fs::write(manifest_path, to_json_string(&manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(manifest_path: &Path) -> Result<(MLPParams, CheckpointManifest)> {
    let manifest: CheckpointManifest =
        from_json_str(&std::fs::read_to_string(manifest_path)?)?;
    let bin_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.bin);
    let bytes = std::fs::read(&bin_path)?;
    if sha256_hex(&bytes) != manifest.checksum {
        return Err(Error::Schema(format!(
            "checksum mismatch for {}",
            bin_path.display()
        )));
    }
    if bytes.len() != manifest.param_count * 8 {
        return Err(Error::Schema(format!(
            "sidecar has {} bytes, manifest declares {} parameters",
            bytes.len(),
            manifest.param_count
        )));
    }
    let mut vals = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for spec in &manifest.layers {
        let mut weight = DMatrix::zeros(spec.out_dim, spec.in_dim);
        for r in 0..spec.out_dim {
            for c in 0..spec.in_dim {
                weight[(r, c)] = vals.next().ok_or_else(|| {
                    Error::Schema("sidecar shorter than layer specs require".into())
                })?;
            }
        }
        let mut bias = DVector::zeros(spec.out_dim);
        for r in 0..spec.out_dim {
            bias[r] = vals
                .next()
                .ok_or_else(|| Error::Schema("sidecar shorter than layer specs require".into()))?;
        }
        layers.push(Layer {
            weight,
            bias,
            activation: spec.activation,
        });
    }
    if vals.next().is_some() {
        return Err(Error::Schema("sidecar longer than layer specs require".into()));
    }
    let params = MLPParams {
        layers,
        n_modes: manifest.n_modes,
        dim: manifest.dim,
    };
    if params.input_width() != manifest.layers[0].in_dim {
        return Err(Error::Schema(
            "layer widths inconsistent with n_modes and dim".into(),
        ));
    }
    Ok((params, manifest))
}

// ---------------------------------------------------------------------------
// Run configuration: flat `key = value` sections

/// Dataset generation settings of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub kind: DatasetKind,
    pub ie_kind: EquationKind,
    pub samples: usize,
    pub points: usize,
    pub dim: usize,
    pub nodes: usize,
    pub lambda: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::SyntheticIe,
            ie_kind: EquationKind::Volterra,
            samples: 100,
            points: 100,
            dim: 2,
            nodes: 80,
            lambda: 1.0,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
}

fn parse_num<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Schema(format!("[{section}] {key}: cannot parse '{value}'")))
}

fn parse_kind(value: &str) -> Result<DatasetKind> {
    match value {
        "synthetic-ie" => Ok(DatasetKind::SyntheticIe),
        "delay-net" => Ok(DatasetKind::DelayNet),
        other => Err(Error::Schema(format!("unknown dataset kind '{other}'"))),
    }
}

fn parse_eq_kind(value: &str) -> Result<EquationKind> {
    match value {
        "fredholm" => Ok(EquationKind::Fredholm),
        "volterra" => Ok(EquationKind::Volterra),
        other => Err(Error::Schema(format!("unknown equation kind '{other}'"))),
    }
}

fn eq_kind_str(kind: EquationKind) -> &'static str {
    match kind {
        EquationKind::Fredholm => "fredholm",
        EquationKind::Volterra => "volterra",
    }
}

/// Apply one `key = value` setting; `section` is one of data / model /
/// solver / train. CLI flag overrides reuse the same names.
pub fn apply_setting(cfg: &mut RunConfig, section: &str, key: &str, value: &str) -> Result<()> {
    match (section, key) {
        ("data", "kind") => cfg.data.kind = parse_kind(value)?,
        ("data", "ie-kind") => cfg.data.ie_kind = parse_eq_kind(value)?,
        ("data", "samples") => cfg.data.samples = parse_num(section, key, value)?,
        ("data", "points") => cfg.data.points = parse_num(section, key, value)?,
        ("data", "dim") => cfg.data.dim = parse_num(section, key, value)?,
        ("data", "nodes") => cfg.data.nodes = parse_num(section, key, value)?,
        ("data", "lambda") => cfg.data.lambda = parse_num(section, key, value)?,
        ("data", "noise-sigma") => cfg.data.noise_sigma = parse_num(section, key, value)?,
        ("data", "seed") => cfg.data.seed = parse_num(section, key, value)?,
        ("model", "hidden") => {
            cfg.train.hidden = value
                .split(',')
                .map(|v| parse_num(section, key, v.trim()))
                .collect::<Result<_>>()?
        }
        ("model", "n-degree") => cfg.train.n_degree = parse_num(section, key, value)?,
        ("solver", "tol") => cfg.train.solver.tol = parse_num(section, key, value)?,
        ("solver", "max-iter") => cfg.train.solver.max_iter = parse_num(section, key, value)?,
        ("solver", "relaxation") => cfg.train.solver.relaxation = parse_num(section, key, value)?,
        ("train", "kind") => cfg.train.kind = parse_eq_kind(value)?,
        ("train", "lambda") => cfg.train.lambda = parse_num(section, key, value)?,
        ("train", "lr") => cfg.train.lr = parse_num(section, key, value)?,
        ("train", "batch-size") => cfg.train.batch_size = parse_num(section, key, value)?,
        ("train", "max-epochs") => cfg.train.max_epochs = parse_num(section, key, value)?,
        ("train", "patience-epochs") => {
            cfg.train.patience_epochs = parse_num(section, key, value)?
        }
        ("train", "walltime-cap-s") => cfg.train.walltime_cap_s = parse_num(section, key, value)?,
        ("train", "init-points") => cfg.train.n_init_points = parse_num(section, key, value)?,
        ("train", "mc-samples") => cfg.train.mc_samples = parse_num(section, key, value)?,
        ("train", "seed") => cfg.train.seed = parse_num(section, key, value)?,
        _ => {
            return Err(Error::Schema(format!(
                "unknown config key [{section}] {key}"
            )))
        }
    }
    Ok(())
}

/// Parse the flat sectioned format. Unknown sections or keys are rejected.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            match name {
                "data" | "model" | "solver" | "train" => section = name.to_string(),
                other => {
                    return Err(Error::Schema(format!(
                        "line {}: unknown section [{other}]",
                        lineno + 1
                    )))
                }
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Schema(format!(
                "line {}: expected 'key = value', got '{line}'",
                lineno + 1
            )));
        };
        if section.is_empty() {
            return Err(Error::Schema(format!(
                "line {}: setting before any [section]",
                lineno + 1
            )));
        }
        apply_setting(&mut cfg, &section, key.trim(), value.trim())?;
    }
    Ok(cfg)
}

/// Render a config back to the sectioned text format (the "resolved config"
/// written next to every run's outputs). `parse_config` round-trips it.
pub fn format_config(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let d = &cfg.data;
    let t = &cfg.train;
    writeln!(s, "[data]").unwrap();
    let kind = match d.kind {
        DatasetKind::SyntheticIe => "synthetic-ie",
        DatasetKind::DelayNet => "delay-net",
    };
    writeln!(s, "kind = {kind}").unwrap();
    writeln!(s, "ie-kind = {}", eq_kind_str(d.ie_kind)).unwrap();
    writeln!(s, "samples = {}", d.samples).unwrap();
    writeln!(s, "points = {}", d.points).unwrap();
    writeln!(s, "dim = {}", d.dim).unwrap();
    writeln!(s, "nodes = {}", d.nodes).unwrap();
    writeln!(s, "lambda = {:?}", d.lambda).unwrap();
    writeln!(s, "noise-sigma = {:?}", d.noise_sigma).unwrap();
    writeln!(s, "seed = {}", d.seed).unwrap();
    writeln!(s, "\n[model]").unwrap();
    let hidden: Vec<String> = t.hidden.iter().map(|h| h.to_string()).collect();
    writeln!(s, "hidden = {}", hidden.join(",")).unwrap();
    writeln!(s, "n-degree = {}", t.n_degree).unwrap();
    writeln!(s, "\n[solver]").unwrap();
    writeln!(s, "tol = {:?}", t.solver.tol).unwrap();
    writeln!(s, "max-iter = {}", t.solver.max_iter).unwrap();
    writeln!(s, "relaxation = {:?}", t.solver.relaxation).unwrap();
    writeln!(s, "\n[train]").unwrap();
    writeln!(s, "kind = {}", eq_kind_str(t.kind)).unwrap();
    writeln!(s, "lambda = {:?}", t.lambda).unwrap();
    writeln!(s, "lr = {:?}", t.lr).unwrap();
    writeln!(s, "batch-size = {}", t.batch_size).unwrap();
    writeln!(s, "max-epochs = {}", t.max_epochs).unwrap();
    writeln!(s, "patience-epochs = {}", t.patience_epochs).unwrap();
    writeln!(s, "walltime-cap-s = {:?}", t.walltime_cap_s).unwrap();
    writeln!(s, "init-points = {}", t.n_init_points).unwrap();
    writeln!(s, "mc-samples = {}", t.mc_samples).unwrap();
    writeln!(s, "seed = {}", t.seed).unwrap();
    s
}

// ---------------------------------------------------------------------------
// CSV tables

pub const METRICS_HEADER: &str = "epoch,train_mse,val_mse,walltime_s";
pub const BENCHMARK_HEADER: &str =
    "name,params,mc_samples,memory_bytes,walltime_s,test_mse_mean,test_mse_std,interp_mse_mean,interp_mse_std";

pub fn metrics_csv(epochs: &[EpochRecord]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for rec in epochs {
        writeln!(
            s,
            "{},{:?},{:?},{:?}",
            rec.epoch, rec.train_mse, rec.val_mse, rec.walltime_s
        )
        .unwrap();
    }
    s
}

pub fn benchmark_csv(rows: &[(String, Result<BenchRow>)]) -> String {
    let mut s = String::from(BENCHMARK_HEADER);
    s.push('\n');
    for (name, row) in rows {
        match row {
            Ok(r) => writeln!(
                s,
                "{},{},{},{},{:?},{:?},{:?},{:?},{:?}",
                r.name,
                r.params,
                r.mc_samples,
                r.memory_bytes,
                r.walltime_s,
                r.test_mse_mean,
                r.test_mse_std,
                r.interp_mse_mean,
                r.interp_mse_std
            )
            .unwrap(),
            Err(_) => writeln!(s, "{name},0,0,0,NaN,NaN,NaN,NaN,NaN").unwrap(),
        }
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}
