use std::time::Instant;

use rand::seq::SliceRandom;

use super::{Adam, EpochRecord, RunLog, TrainConfig};
use crate::augment::{sample_views, AugmentPolicy};
use crate::encoder::{objective, readout_embeddings, EncoderParams, ViewBatch};
use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph};
use crate::metrics::{alignment_loss, batch_uniformity, linear_probe};
use crate::seed;

const SHUFFLE_TAG: u64 = 0x5348_5546;
const VIEW_TAG: u64 = 0x5649_4557;
const EVAL_TAG: u64 = 0x4556_414C;
const SPLIT_TAG: u64 = 0x5350_4C54;

/// Fraction of graphs used to fit the linear probe.
const PROBE_TRAIN_FRACTION: f64 = 0.8;

/// What the training loop saw for one batch, before its optimizer step.
pub struct BatchRecord<'a> {
    pub epoch: usize,
    pub batch: usize,
    pub indices: &'a [usize],
    pub params: &'a EncoderParams,
    pub contrastive: f64,
    pub spectral: f64,
    pub total: f64,
}

pub trait TrainObserver {
    fn on_batch(&mut self, record: &BatchRecord<'_>);
}

impl TrainObserver for () {
    fn on_batch(&mut self, _: &BatchRecord<'_>) {}
}

/// The two training views of the given graphs at an epoch. Each graph's
/// views depend only on the seed, the epoch and the graph's index.
pub fn batch_views(
    graphs: &[Graph],
    indices: &[usize],
    policy: &AugmentPolicy,
    seed: u64,
    epoch: usize,
) -> Result<(Vec<Graph>, Vec<Graph>)> {
    let mut first = Vec::with_capacity(indices.len());
    let mut second = Vec::with_capacity(indices.len());
    for &i in indices {
        let g = graphs
            .get(i)
            .ok_or_else(|| Error::invalid(format!("graph index {i} out of range")))?;
        let mut rng = seed::derived_rng(seed, &[VIEW_TAG, epoch as u64, i as u64]);
        let (a, b) = sample_views(g, policy, &mut rng)?;
        first.push(a);
        second.push(b);
    }
    Ok((first, second))
}

/// Fixed views on which alignment and uniformity are logged every epoch.
pub fn eval_views(graphs: &[Graph], policy: &AugmentPolicy, seed: u64) -> Result<(Vec<Graph>, Vec<Graph>)> {
    let mut first = Vec::with_capacity(graphs.len());
    let mut second = Vec::with_capacity(graphs.len());
    for (i, g) in graphs.iter().enumerate() {
        let mut rng = seed::derived_rng(seed, &[EVAL_TAG, i as u64]);
        let (a, b) = sample_views(g, policy, &mut rng)?;
        first.push(a);
        second.push(b);
    }
    Ok((first, second))
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub params: EncoderParams,
    pub log: RunLog,
}

/// Epoch-at-a-time training. After an error the parameters are those of
/// the last successful optimizer step.
pub struct Trainer {
    cfg: TrainConfig,
    dataset: Dataset,
    policy: AugmentPolicy,
    params: EncoderParams,
    adam: Adam,
    log: RunLog,
    epoch: usize,
    eval_views: (Vec<Graph>, Vec<Graph>),
    probe: Option<ProbeSplit>,
}

struct ProbeSplit {
    train: Vec<usize>,
    test: Vec<usize>,
    labels: Vec<usize>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let dataset = cfg.dataset.load()?;
        Self::with_dataset(cfg, dataset)
    }

    pub fn with_dataset(cfg: TrainConfig, dataset: Dataset) -> Result<Self> {
        cfg.validate()?;
        if dataset.len() < 2 {
            return Err(Error::invalid("training needs at least 2 graphs"));
        }
        let policy = cfg.augment_policy()?;
        let params = EncoderParams::init(cfg.model.dims(dataset.feature_dim()), cfg.seed)?;
        let adam = Adam::new(cfg.optimizer, &params)?;

        let eval_views = eval_views(dataset.graphs(), &policy, cfg.seed)?;
        let probe = probe_split(&dataset, cfg.seed);

        Ok(Self {
            cfg,
            dataset,
            policy,
            params,
            adam,
            log: RunLog::default(),
            epoch: 0,
            eval_views,
            probe,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    /// Graph indices of each batch in an epoch. A trailing batch with a
    /// single graph is dropped because it has no negatives.
    pub fn epoch_batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.dataset.len()).collect();
        order.shuffle(&mut seed::derived_rng(self.cfg.seed, &[SHUFFLE_TAG, epoch as u64]));
        order
            .chunks(self.cfg.batch_size)
            .filter(|c| c.len() >= 2)
            .map(<[usize]>::to_vec)
            .collect()
    }

    pub fn run_epoch(&mut self, observer: &mut dyn TrainObserver) -> Result<&EpochRecord> {
        let epoch = self.epoch + 1;
        let start = Instant::now();
        let batches = self.epoch_batches(epoch);
        let (mut lc, mut lg, mut total) = (0.0, 0.0, 0.0);
        for (b, indices) in batches.iter().enumerate() {
            let (v1, v2) = batch_views(self.dataset.graphs(), indices, &self.policy, self.cfg.seed, epoch)?;
            let obj = match objective(&self.params, &v1, &v2, &self.cfg.loss) {
                Ok(obj) => obj,
                Err(Error::DegenerateEmbedding { .. }) => return Err(Error::Diverged { epoch }),
                Err(e) => return Err(e),
            };
            if !obj.total.is_finite() || !obj.grads.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            observer.on_batch(&BatchRecord {
                epoch,
                batch: b,
                indices,
                params: &self.params,
                contrastive: obj.contrastive,
                spectral: obj.spectral,
                total: obj.total,
            });
            let before = self.params.clone();
            self.adam.step(&mut self.params, &obj.grads);
            if !self.params.is_finite() {
                self.params = before;
                return Err(Error::Diverged { epoch });
            }
            lc += obj.contrastive;
            lg += obj.spectral;
            total += obj.total;
        }
        let nb = batches.len() as f64;

        let eval = ViewBatch::encode(&self.params, &self.eval_views.0, &self.eval_views.1)?;
        let align = alignment_loss(&eval.z1, &eval.z2, self.cfg.metrics.alpha)?;
        let unif = batch_uniformity(&eval, self.cfg.metrics.t_unif)?;
        let probe_due = epoch % self.cfg.metric_every == 0 || epoch == self.cfg.epochs;
        let probe_acc = match (&self.probe, probe_due) {
            (Some(split), true) => Some(self.probe_accuracy(split)?),
            _ => None,
        };
        let seconds = if self.cfg.record_wall_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        self.log.push(EpochRecord {
            epoch,
            loss_c: lc / nb,
            loss_g: lg / nb,
            loss_total: total / nb,
            align,
            unif,
            probe_acc,
            seconds,
        })?;
        self.epoch = epoch;
        Ok(self.log.last().expect("just pushed"))
    }

    fn probe_accuracy(&self, split: &ProbeSplit) -> Result<f64> {
        let x = readout_embeddings(&self.params, self.dataset.graphs())?;
        let pick = |idx: &[usize]| {
            let rows = x.select(ndarray::Axis(0), idx);
            let labels: Vec<usize> = idx.iter().map(|&i| split.labels[i]).collect();
            (rows, labels)
        };
        let (xtr, ytr) = pick(&split.train);
        let (xte, yte) = pick(&split.test);
        linear_probe(&xtr, &ytr, &xte, &yte)
    }

    pub fn finish(self) -> TrainRun {
        TrainRun {
            params: self.params,
            log: self.log,
        }
    }
}

/// Seeded 80/20 split; `None` when some graph is unlabeled or a side
/// would be empty.
fn probe_split(dataset: &Dataset, seed: u64) -> Option<ProbeSplit> {
    let labels: Option<Vec<usize>> = dataset.graphs().iter().map(Graph::label).collect();
    let labels = labels?;
    let n = labels.len();
    let n_train = (n as f64 * PROBE_TRAIN_FRACTION).floor() as usize;
    if n_train == 0 || n_train == n {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::derived_rng(seed, &[SPLIT_TAG]));
    let test = order.split_off(n_train);
    Some(ProbeSplit {
        train: order,
        test,
        labels,
    })
}

pub fn train(cfg: &TrainConfig) -> Result<TrainRun> {
    train_observed(cfg, &mut ())
}

pub fn train_observed(cfg: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<TrainRun> {
    let mut trainer = Trainer::new(cfg.clone())?;
    while !trainer.is_done() {
        trainer.run_epoch(observer)?;
    }
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SbmConfig;
    use crate::runner::{DatasetSpec, ModelConfig};

    fn tiny() -> TrainConfig {
        TrainConfig {
            dataset: DatasetSpec::Sbm(SbmConfig {
                n_graphs: 20,
                min_nodes: 8,
                max_nodes: 12,
                ..SbmConfig::default()
            }),
            model: ModelConfig {
                hidden: 8,
                layers: 2,
                out_dim: 8,
            },
            batch_size: 8,
            epochs: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn batches_cover_dataset_and_drop_singletons() {
        let mut cfg = tiny();
        cfg.batch_size = 19;
        let t = Trainer::new(cfg).unwrap();
        let batches = t.epoch_batches(1);
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].len(), 19);
        let mut cfg = tiny();
        cfg.batch_size = 6;
        let t = Trainer::new(cfg).unwrap();
        let mut all: Vec<usize> = t.epoch_batches(3).concat();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert_ne!(t.epoch_batches(1), t.epoch_batches(2));
    }

    #[test]
    fn views_ignore_batch_position() {
        let t = Trainer::new(tiny()).unwrap();
        let policy = t.config().augment_policy().unwrap();
        let (a, _) = batch_views(t.dataset().graphs(), &[3, 7], &policy, 5, 1).unwrap();
        let (b, _) = batch_views(t.dataset().graphs(), &[7, 3], &policy, 5, 1).unwrap();
        assert_eq!(a[0], b[1]);
        assert_eq!(a[1], b[0]);
    }

    #[test]
    fn probe_runs_on_cadence_and_last_epoch() {
        let mut cfg = tiny();
        cfg.epochs = 3;
        let run = train(&cfg).unwrap();
        let probes: Vec<bool> = run.log.records.iter().map(|r| r.probe_acc.is_some()).collect();
        assert_eq!(probes, [false, true, true]);
    }

    #[test]
    fn huge_learning_rate_reports_divergence_with_finite_params() {
        let mut cfg = tiny();
        cfg.optimizer.learning_rate = 1e300;
        cfg.epochs = 5;
        let mut trainer = Trainer::new(cfg).unwrap();
        let mut err = None;
        while !trainer.is_done() {
            if let Err(e) = trainer.run_epoch(&mut ()) {
                err = Some(e);
                break;
            }
        }
        assert!(matches!(err, Some(Error::Diverged { .. })), "{err:?}");
        assert!(trainer.params().is_finite());
    }
}
