//! Training configuration, the training loop, run logs and experiments.

mod adam;
mod experiments;
mod plot;
mod train;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use experiments::{run_fig3, sweep, Fig3Result, Fig3Row, SweepParam, SweepRow};
pub use plot::fig3_svg;
pub use train::{batch_views, eval_views, train, train_observed, BatchRecord, TrainObserver, TrainRun, Trainer};

use crate::augment::{AugmentPolicy, PolicyPreset, DEFAULT_STRENGTH};
use crate::encoder::EncoderDims;
use crate::error::{Error, Result};
use crate::graph::{generate_sbm, Dataset, SbmConfig};
use crate::loss::LossConfig;
use crate::metrics::MetricConfig;

/// Where the training graphs come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    Sbm(SbmConfig),
    File { path: PathBuf },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Sbm(SbmConfig::default())
    }
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::Sbm(cfg) => generate_sbm(cfg),
            DatasetSpec::File { path } => Dataset::load(path),
        }
    }
}

/// Encoder sizes; the input width comes from the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub out_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = EncoderDims::default();
        Self {
            hidden: d.hidden,
            layers: d.layers,
            out_dim: d.out_dim,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self, in_dim: usize) -> EncoderDims {
        EncoderDims {
            in_dim,
            hidden: self.hidden,
            layers: self.layers,
            out_dim: self.out_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dataset: DatasetSpec,
    pub policy: PolicyPreset,
    pub strength: f64,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Probe accuracy is computed every this many epochs and at the last.
    pub metric_every: usize,
    pub metrics: MetricConfig,
    /// Off by default so run logs are byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            policy: PolicyPreset::SocialDense,
            strength: DEFAULT_STRENGTH,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optimizer: AdamConfig::default(),
            batch_size: 64,
            epochs: 40,
            seed: 0,
            metric_every: 2,
            metrics: MetricConfig::default(),
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(format!("batch size must be at least 2, got {}", self.batch_size)));
        }
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.metric_every < 1 {
            return Err(Error::invalid("metric_every must be at least 1"));
        }
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.metrics.validate()?;
        self.augment_policy()?;
        Ok(())
    }

    pub fn augment_policy(&self) -> Result<AugmentPolicy> {
        AugmentPolicy::preset(self.policy).with_strength(self.strength)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// One epoch of a run. Losses are means over the epoch's batches; `align`
/// and `unif` are measured on fixed evaluation views after the epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_c: f64,
    pub loss_g: f64,
    pub loss_total: f64,
    pub align: f64,
    pub unif: f64,
    pub probe_acc: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

pub const RUNLOG_HEADER: &str = "epoch,loss_c,loss_g,loss_total,align,unif,probe_acc,seconds";

impl RunLog {
    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.epoch <= last.epoch {
                return Err(Error::Validation(format!(
                    "epoch {} logged after epoch {}",
                    record.epoch, last.epoch
                )));
            }
        }
        let values = [
            record.loss_c,
            record.loss_g,
            record.loss_total,
            record.align,
            record.unif,
            record.probe_acc.unwrap_or(0.0),
            record.seconds,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite value in epoch {}", record.epoch)));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Last probe accuracy recorded, if any.
    pub fn final_probe(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.probe_acc)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(RUNLOG_HEADER);
        out.push('\n');
        for r in &self.records {
            let probe = r.probe_acc.map(|p| p.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.epoch, r.loss_c, r.loss_g, r.loss_total, r.align, r.unif, probe, r.seconds
            )
            .expect("writing to a string");
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}
