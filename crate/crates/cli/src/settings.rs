use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use sparsemono::pbf::{BankConfig, PbfConfig};
use sparsemono::rapa::RapaConfig;

use crate::error::CliError;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Directory of KITTI label files (`<id>.txt`)
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Directory of calibration files (`<id>.txt`)
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Directory of images (`<id>.img`)
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Directory of PGM masks: road `<id>.pgm`, objects `<id>_<n>.pgm`
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Directory of object patches (`*.patch`)
    #[arg(long)]
    pub patches: Option<PathBuf>,
    /// Predictions JSONL file, or a directory of scored label files for `eval`
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Feature JSONL file for `proto-init`
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Prototype bank JSON written by `proto-init`
    #[arg(long)]
    pub prototypes: Option<PathBuf>,
    /// GT Bank JSONL file
    #[arg(long = "gt-bank")]
    pub gt_bank: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Key=value configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Training epoch recorded with new GT Bank entries and augmentation seeds
    #[arg(long)]
    pub epoch: Option<u32>,
    #[arg(long = "num-scenes")]
    pub num_scenes: Option<usize>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long = "patches-per-image")]
    pub patches_per_image: Option<usize>,
    #[arg(long = "tau-road")]
    pub tau_road: Option<f64>,
    #[arg(long = "tau-overlap")]
    pub tau_overlap: Option<f64>,
    #[arg(long = "tau-depth")]
    pub tau_depth: Option<f64>,
    #[arg(long = "tau-proto", allow_hyphen_values = true)]
    pub tau_proto: Option<f64>,
    #[arg(long = "tau-new", allow_hyphen_values = true)]
    pub tau_new: Option<f64>,
    /// Lateral search half-width in meters
    #[arg(long)]
    pub delta: Option<f64>,
    /// Number of lateral offsets
    #[arg(long)]
    pub m: Option<usize>,
    /// Placement trials per patch
    #[arg(long = "n-max")]
    pub n_max: Option<usize>,
    /// Prototype bank capacity
    #[arg(long)]
    pub k: Option<usize>,
    /// Prototype update weight during training
    #[arg(long)]
    pub beta: Option<f64>,
    /// Prototype update weight during initialization
    #[arg(long = "beta-init")]
    pub beta_init: Option<f64>,
}

const KEYS: &[&str] = &[
    "labels", "calib", "images", "masks", "patches", "predictions", "features", "prototypes",
    "gt_bank", "out", "seed", "jobs", "epoch", "num_scenes", "epochs", "patches_per_image",
    "tau_road", "tau_overlap", "tau_depth", "tau_proto", "tau_new", "delta", "m", "n_max", "k",
    "beta", "beta_init",
];

/// `key = value` lines; `#` starts a comment. Dashes in keys read as underscores.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Validation(format!("config line {}: expected key=value", i + 1)));
        };
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Validation(format!("config line {}: unknown key `{}`", i + 1, key)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

/// Flags resolved against the config file and built-in defaults.
#[derive(Debug, Clone)]
pub struct Settings {
    flags: Flags,
    file: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(flags: Flags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self { flags, file })
    }

    fn value<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Validation(format!("config key `{key}`: cannot parse `{v}`"))),
            None => Ok(None),
        }
    }

    fn or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.value(flag, key)?.unwrap_or(default))
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        let f = &self.flags;
        let flag = match key {
            "labels" => &f.labels,
            "calib" => &f.calib,
            "images" => &f.images,
            "masks" => &f.masks,
            "patches" => &f.patches,
            "predictions" => &f.predictions,
            "features" => &f.features,
            "prototypes" => &f.prototypes,
            "gt_bank" => &f.gt_bank,
            "out" => &f.out,
            _ => unreachable!("not a path key: {key}"),
        };
        self.value(flag.clone(), key)
    }

    /// A path the command cannot run without.
    pub fn required(&self, key: &str) -> Result<PathBuf, CliError> {
        self.path(key)?
            .ok_or_else(|| CliError::Usage(format!("missing --{}", key.replace('_', "-"))))
    }

    /// A required input path that must already exist.
    pub fn existing(&self, key: &str) -> Result<PathBuf, CliError> {
        let p = self.required(key)?;
        if !p.exists() {
            return Err(CliError::Io(format!("{}: no such file or directory", p.display())));
        }
        Ok(p)
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.or(self.flags.seed, "seed", 0)
    }

    pub fn jobs(&self) -> Result<usize, CliError> {
        let jobs = self.or(self.flags.jobs, "jobs", 1)?;
        if jobs == 0 {
            return Err(CliError::Validation("--jobs must be at least 1".into()));
        }
        Ok(jobs)
    }

    pub fn epoch(&self, default: u32) -> Result<u32, CliError> {
        self.or(self.flags.epoch, "epoch", default)
    }

    pub fn num_scenes(&self, default: usize) -> Result<usize, CliError> {
        self.or(self.flags.num_scenes, "num_scenes", default)
    }

    pub fn epochs(&self, default: u32) -> Result<u32, CliError> {
        self.or(self.flags.epochs, "epochs", default)
    }

    pub fn rapa(&self) -> Result<RapaConfig, CliError> {
        let d = RapaConfig::default();
        let f = &self.flags;
        let cfg = RapaConfig {
            delta: self.or(f.delta, "delta", d.delta)?,
            num_offsets: self.or(f.m, "m", d.num_offsets)?,
            tau_road: self.or(f.tau_road, "tau_road", d.tau_road)?,
            tau_overlap: self.or(f.tau_overlap, "tau_overlap", d.tau_overlap)?,
            n_max: self.or(f.n_max, "n_max", d.n_max)?,
            patches_per_image: self.or(f.patches_per_image, "patches_per_image", d.patches_per_image)?,
            ..d
        };
        cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(cfg)
    }

    pub fn pbf(&self) -> Result<PbfConfig, CliError> {
        let d = PbfConfig::default();
        let cfg = PbfConfig {
            tau_depth: self.or(self.flags.tau_depth, "tau_depth", d.tau_depth)?,
            tau_proto: self.or(self.flags.tau_proto, "tau_proto", d.tau_proto)?,
        };
        cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(cfg)
    }

    pub fn bank(&self) -> Result<BankConfig, CliError> {
        let d = BankConfig::default();
        let f = &self.flags;
        let cfg = BankConfig {
            capacity: self.or(f.k, "k", d.capacity)?,
            tau_new: self.or(f.tau_new, "tau_new", d.tau_new)?,
            beta_init: self.or(f.beta_init, "beta_init", d.beta_init)?,
            beta_train: self.or(f.beta, "beta", d.beta_train)?,
        };
        cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(cfg)
    }

    /// `beta` only when given explicitly, by flag or config.
    pub fn beta_override(&self) -> Result<Option<f64>, CliError> {
        self.value(self.flags.beta, "beta")
    }
}

pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}
