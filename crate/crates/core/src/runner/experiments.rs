use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fig3_svg, train, TrainConfig, TrainRun};
use crate::error::{Error, Result};

/// One checkpoint of the alignment/uniformity trajectories of both arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3Row {
    pub epoch: usize,
    pub align_base: f64,
    pub unif_base: f64,
    pub align_reg: f64,
    pub unif_reg: f64,
}

#[derive(Debug, Clone)]
pub struct Fig3Result {
    pub beta: f64,
    /// The arm trained with `beta = 0`.
    pub base: TrainRun,
    /// The arm trained with the given `beta`.
    pub reg: TrainRun,
    pub rows: Vec<Fig3Row>,
}

pub const FIG3_HEADER: &str = "epoch,align_base,unif_base,align_reg,unif_reg";

impl Fig3Result {
    fn final_row(&self) -> &Fig3Row {
        self.rows.last().expect("at least one checkpoint")
    }

    /// Whether the regularized arm ends with alignment and uniformity no
    /// greater than the baseline.
    pub fn reg_dominates(&self) -> bool {
        let r = self.final_row();
        r.align_reg <= r.align_base && r.unif_reg <= r.unif_base
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(FIG3_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch, r.align_base, r.unif_base, r.align_reg, r.unif_reg
            )
            .expect("writing to a string");
        }
        out
    }

    pub fn to_svg(&self) -> String {
        fig3_svg(&self.rows, self.beta)
    }

    pub fn summary(&self) -> String {
        let r = self.final_row();
        let probe = |run: &TrainRun| {
            run.log
                .final_probe()
                .map_or_else(|| "n/a".to_string(), |p| format!("{p:.4}"))
        };
        format!(
            "epoch {}: beta=0 align {:.4} unif {:.4} probe {}; beta={} align {:.4} unif {:.4} probe {}",
            r.epoch,
            r.align_base,
            r.unif_base,
            probe(&self.base),
            self.beta,
            r.align_reg,
            r.unif_reg,
            probe(&self.reg),
        )
    }
}

/// Trains the same configuration with `beta = 0` and with `beta`, sharing
/// seeds, data and batch order, and pairs their trajectories at the metric
/// cadence.
pub fn run_fig3(base: &TrainConfig, beta: f64) -> Result<Fig3Result> {
    let mut off = base.clone();
    off.loss.beta = 0.0;
    let mut on = base.clone();
    on.loss.beta = beta;
    on.validate()?;
    let (base_run, reg_run) = rayon::join(|| train(&off), || train(&on));
    let (base_run, reg_run) = (base_run?, reg_run?);
    let rows = base_run
        .log
        .records
        .iter()
        .zip(&reg_run.log.records)
        .filter(|(a, _)| a.epoch % base.metric_every == 0)
        .map(|(a, b)| Fig3Row {
            epoch: a.epoch,
            align_base: a.align,
            unif_base: a.unif,
            align_reg: b.align,
            unif_reg: b.unif,
        })
        .collect::<Vec<_>>();
    if rows.is_empty() {
        return Err(Error::invalid(format!(
            "{} epochs give no checkpoint at cadence {}",
            base.epochs, base.metric_every
        )));
    }
    Ok(Fig3Result {
        beta,
        base: base_run,
        reg: reg_run,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    /// Similarity percentile.
    P,
    Beta,
    /// Learning rate.
    Lr,
}

impl SweepParam {
    pub fn apply(self, cfg: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let mut cfg = cfg.clone();
        match self {
            SweepParam::P => cfg.loss.percentile = value,
            SweepParam::Beta => cfg.loss.beta = value,
            SweepParam::Lr => cfg.optimizer.learning_rate = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p" => Ok(SweepParam::P),
            "beta" => Ok(SweepParam::Beta),
            "lr" => Ok(SweepParam::Lr),
            other => Err(Error::invalid(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::P => "p",
            SweepParam::Beta => "beta",
            SweepParam::Lr => "lr",
        })
    }
}

/// Final metrics of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: SweepParam,
    pub value: f64,
    pub loss_c: f64,
    pub loss_g: f64,
    pub loss_total: f64,
    pub align: f64,
    pub unif: f64,
    pub probe_acc: Option<f64>,
}

pub const SWEEP_HEADER: &str = "parameter,value,loss_c,loss_g,loss_total,align,unif,probe_acc";

impl SweepRow {
    fn from_run(parameter: SweepParam, value: f64, run: &TrainRun) -> Self {
        let last = run.log.last().expect("at least one epoch");
        SweepRow {
            parameter,
            value,
            loss_c: last.loss_c,
            loss_g: last.loss_g,
            loss_total: last.loss_total,
            align: last.align,
            unif: last.unif,
            probe_acc: run.log.final_probe(),
        }
    }

    pub fn csv(rows: &[SweepRow]) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        for r in rows {
            let probe = r.probe_acc.map(|p| p.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.parameter, r.value, r.loss_c, r.loss_g, r.loss_total, r.align, r.unif, probe
            )
            .expect("writing to a string");
        }
        out
    }
}

/// One full training run per value, all sharing the base seed.
pub fn sweep(parameter: SweepParam, values: &[f64], base: &TrainConfig) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let configs = values
        .iter()
        .map(|&v| parameter.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    configs
        .par_iter()
        .zip(values)
        .map(|(cfg, &v)| Ok(SweepRow::from_run(parameter, v, &train(cfg)?)))
        .collect()
}
