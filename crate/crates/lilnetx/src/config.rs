//! Run configuration: a flat UTF-8 "key = value" file with typed parsing
//! and unknown-key rejection.

use crate::arch::{ArchDescriptor, ArchKind};
use crate::sparsity::{GroupNorm, SparsityConfig, WeightNorm};
use crate::{Error, Result};
use std::path::{Path, PathBuf};

pub const DATA_DIR_ENV: &str = "LILNETX_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    /// Procedurally generated MNIST-format digits, for machines without the
    /// real files.
    MnistSynth,
    /// Stratified 10% training subset of CIFAR-10.
    Cifar10Subset,
}

impl DatasetKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(Self::Mnist),
            "mnist-synth" => Ok(Self::MnistSynth),
            "cifar10-subset" => Ok(Self::Cifar10Subset),
            other => Err(Error::Config(format!(
                "unknown dataset '{other}' (expected mnist, mnist-synth, or cifar10-subset)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Mnist => "mnist",
            Self::MnistSynth => "mnist-synth",
            Self::Cifar10Subset => "cifar10-subset",
        }
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        match self {
            Self::Mnist | Self::MnistSynth => (1, 28, 28),
            Self::Cifar10Subset => (3, 32, 32),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub arch: ArchKind,
    /// Empty means the architecture default.
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr_main: f64,
    pub lr_entropy: f64,
    pub lambda_i: f64,
    pub sparsity: SparsityConfig,
    pub b_min: f64,
    pub out_dir: PathBuf,
    /// Dataset root; falls back to $LILNETX_DATA_DIR.
    pub data_dir: Option<PathBuf>,
    /// Parallel workers for sweeps.
    pub sweep_workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::MnistSynth,
            arch: ArchKind::MiniConv,
            widths: Vec::new(),
            epochs: 10,
            batch_size: 128,
            seed: 1,
            lr_main: 0.01,
            lr_entropy: 1e-4,
            lambda_i: 1e-4,
            sparsity: SparsityConfig::default(),
            b_min: 2.0,
            out_dir: PathBuf::from("runs/run"),
            data_dir: None,
            sweep_workers: 2,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got '{raw}'", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Apply one typed override; used both by the parser and CLI flags.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
        }
        match key {
            "dataset" => self.dataset = DatasetKind::parse(value)?,
            "arch" => self.arch = ArchKind::parse(value)?,
            "widths" => {
                self.widths = value
                    .split(',')
                    .map(|w| num::<usize>("widths", w.trim()))
                    .collect::<Result<_>>()?;
            }
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "lr_main" => self.lr_main = num(key, value)?,
            "lr_entropy" => self.lr_entropy = num(key, value)?,
            "lambda_i" => self.lambda_i = num(key, value)?,
            "lambda_u" => self.sparsity.lambda_u = num(key, value)?,
            "lambda_s" => self.sparsity.lambda_s = num(key, value)?,
            "weight_norm" => {
                self.sparsity.weight_norm = match value {
                    "l2" => WeightNorm::L2,
                    "l1" => WeightNorm::L1,
                    other => {
                        return Err(Error::Config(format!(
                            "invalid weight_norm '{other}' (expected l2 or l1)"
                        )))
                    }
                }
            }
            "group_norm" => {
                self.sparsity.group_norm = match value {
                    "l2" => GroupNorm::L2,
                    "linf" => GroupNorm::LInf,
                    other => {
                        return Err(Error::Config(format!(
                            "invalid group_norm '{other}' (expected l2 or linf)"
                        )))
                    }
                }
            }
            "b_min" => self.b_min = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "sweep_workers" => self.sweep_workers = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.sparsity.validate()?;
        for (name, v) in
            [("lr_main", self.lr_main), ("lr_entropy", self.lr_entropy), ("lambda_i", self.lambda_i)]
        {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.b_min <= 0.5 {
            return Err(Error::Config(format!("b_min must exceed 0.5, got {}", self.b_min)));
        }
        if self.sweep_workers == 0 {
            return Err(Error::Config("sweep_workers must be positive".into()));
        }
        Ok(())
    }

    /// Canonical text form, parseable by [`RunConfig::parse`]. Written as a
    /// snapshot into every run directory and hashed for sweep resumption.
    pub fn to_text(&self) -> String {
        let widths = if self.widths.is_empty() {
            String::new()
        } else {
            format!(
                "widths = {}\n",
                self.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
            )
        };
        format!(
            "dataset = {}\narch = {}\n{widths}epochs = {}\nbatch_size = {}\nseed = {}\n\
             lr_main = {}\nlr_entropy = {}\nlambda_i = {}\nlambda_u = {}\nlambda_s = {}\n\
             weight_norm = {}\ngroup_norm = {}\nb_min = {}\nout_dir = {}\nsweep_workers = {}\n",
            self.dataset.name(),
            self.arch.name(),
            self.epochs,
            self.batch_size,
            self.seed,
            self.lr_main,
            self.lr_entropy,
            self.lambda_i,
            self.sparsity.lambda_u,
            self.sparsity.lambda_s,
            match self.sparsity.weight_norm {
                WeightNorm::L2 => "l2",
                WeightNorm::L1 => "l1",
            },
            match self.sparsity.group_norm {
                GroupNorm::L2 => "l2",
                GroupNorm::LInf => "linf",
            },
            self.b_min,
            self.out_dir.display(),
            self.sweep_workers,
        )
    }

    /// Directory holding the dataset files: explicit key, else the
    /// LILNETX_DATA_DIR environment variable, else ./data.
    pub fn resolve_data_dir(&self) -> PathBuf {
        if let Some(dir) = &self.data_dir {
            return dir.clone();
        }
        if let Ok(dir) = std::env::var(DATA_DIR_ENV) {
            return PathBuf::from(dir);
        }
        PathBuf::from("data")
    }

    pub fn arch_descriptor(&self) -> Result<ArchDescriptor> {
        let input = self.dataset.input_shape();
        let num_classes = 10;
        let desc = match self.arch {
            ArchKind::Mlp => {
                let hidden = *self.widths.first().unwrap_or(&128);
                ArchDescriptor::mlp(input, num_classes, hidden)
            }
            ArchKind::MiniConv => {
                let w: [usize; 4] = match self.widths[..] {
                    [] => [16, 32, 48, 48],
                    [a, b, c, d] => [a, b, c, d],
                    _ => {
                        return Err(Error::Config(
                            "miniconv expects exactly four widths".into(),
                        ))
                    }
                };
                ArchDescriptor::miniconv(input, num_classes, w)
            }
            ArchKind::ResNet20 => {
                let w: [usize; 3] = match self.widths[..] {
                    [] => [8, 16, 32],
                    [a, b, c] => [a, b, c],
                    _ => {
                        return Err(Error::Config("resnet20 expects exactly three widths".into()))
                    }
                };
                ArchDescriptor::resnet20(input, num_classes, w)
            }
        };
        Ok(desc)
    }
}
