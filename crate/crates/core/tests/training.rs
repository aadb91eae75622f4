use rand::seq::index::sample;
use specmatch_core::encoder::{objective, EncoderParams, ViewBatch};
use specmatch_core::graph::SbmConfig;
use specmatch_core::metrics::{alignment_loss, batch_uniformity};
use specmatch_core::runner::{
    batch_views, eval_views, run_fig3, sweep, train, train_observed, BatchRecord, DatasetSpec, ModelConfig,
    SweepParam, TrainConfig, TrainObserver, Trainer,
};
use specmatch_core::seed;

fn small(epochs: usize) -> TrainConfig {
    TrainConfig {
        dataset: DatasetSpec::Sbm(SbmConfig {
            n_graphs: 40,
            min_nodes: 10,
            max_nodes: 16,
            ..SbmConfig::default()
        }),
        model: ModelConfig {
            hidden: 16,
            layers: 2,
            out_dim: 16,
        },
        batch_size: 16,
        epochs,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut cfg = small(1);
    cfg.optimizer.learning_rate = 0.0;
    let run = train(&cfg).unwrap();
    let init = Trainer::new(cfg).unwrap();
    assert_eq!(&run.params, init.params());
}

#[test]
fn identical_configs_give_identical_logs_and_checkpoints() {
    let cfg = small(3);
    let a = train(&cfg).unwrap();
    let b = train(&cfg).unwrap();
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    assert_eq!(a.params.to_json(), b.params.to_json());
    let mut other = cfg.clone();
    other.seed = 12;
    assert_ne!(train(&other).unwrap().log.to_csv(), a.log.to_csv());
}

struct Recorder {
    epochs: Vec<usize>,
    batches: Vec<(usize, Vec<usize>, EncoderParams, f64, f64, f64)>,
}

impl TrainObserver for Recorder {
    fn on_batch(&mut self, r: &BatchRecord<'_>) {
        if self.epochs.contains(&r.epoch) {
            self.batches.push((
                r.epoch,
                r.indices.to_vec(),
                r.params.clone(),
                r.contrastive,
                r.spectral,
                r.total,
            ));
        }
    }
}

#[test]
fn logged_losses_match_recomputation() {
    let cfg = small(6);
    let mut rng = seed::rng(99);
    let epochs: Vec<usize> = sample(&mut rng, cfg.epochs, 3).into_iter().map(|e| e + 1).collect();
    let mut rec = Recorder {
        epochs: epochs.clone(),
        batches: Vec::new(),
    };
    let run = train_observed(&cfg, &mut rec).unwrap();
    let data = cfg.dataset.load().unwrap();
    let policy = cfg.augment_policy().unwrap();

    for &e in &epochs {
        let batches: Vec<_> = rec.batches.iter().filter(|b| b.0 == e).collect();
        assert!(!batches.is_empty());
        let mut sums = [0.0; 3];
        for (epoch, indices, params, lc, lg, total) in batches.iter().copied() {
            let (v1, v2) = batch_views(data.graphs(), indices, &policy, cfg.seed, *epoch).unwrap();
            let again = objective(params, &v1, &v2, &cfg.loss).unwrap();
            assert_eq!(again.contrastive, *lc);
            assert_eq!(again.spectral, *lg);
            assert_eq!(again.total, *total);
            assert!((again.total - (again.contrastive + cfg.loss.beta * again.spectral)).abs() < 1e-9);
            sums[0] += lc;
            sums[1] += lg;
            sums[2] += total;
        }
        let logged = &run.log.records[e - 1];
        let nb = batches.len() as f64;
        assert_eq!(logged.loss_c, sums[0] / nb);
        assert_eq!(logged.loss_g, sums[1] / nb);
        assert_eq!(logged.loss_total, sums[2] / nb);
    }

    // Final alignment and uniformity from the saved checkpoint.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    run.params.save(&path).unwrap();
    let params = EncoderParams::load(&path).unwrap();
    let (e1, e2) = eval_views(data.graphs(), &policy, cfg.seed).unwrap();
    let eval = ViewBatch::encode(&params, &e1, &e2).unwrap();
    let last = run.log.last().unwrap();
    assert_eq!(alignment_loss(&eval.z1, &eval.z2, cfg.metrics.alpha).unwrap(), last.align);
    assert_eq!(batch_uniformity(&eval, cfg.metrics.t_unif).unwrap(), last.unif);
}

#[test]
fn contrastive_loss_decreases_on_sbm() {
    let cfg = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    let mut cfg = cfg;
    cfg.loss.beta = 0.0;
    let run = train(&cfg).unwrap();
    let first = run.log.records.first().unwrap().loss_c;
    let last = run.log.last().unwrap().loss_c;
    println!("loss_c epoch 1 {first:.4}, epoch 20 {last:.4}");
    assert!(last < first);
    for w in run.log.records.windows(2) {
        assert_eq!(w[1].epoch, w[0].epoch + 1);
    }
}

#[test]
fn fig3_baseline_arm_equals_plain_training() {
    let cfg = small(4);
    let result = run_fig3(&cfg, 0.5).unwrap();
    let mut plain = cfg.clone();
    plain.loss.beta = 0.0;
    let run = train(&plain).unwrap();
    assert_eq!(result.base.log, run.log);
    assert_eq!(result.base.params, run.params);
    let mut reg = cfg.clone();
    reg.loss.beta = 0.5;
    assert_eq!(result.reg.log, train(&reg).unwrap().log);

    // One row every two epochs.
    assert_eq!(result.rows.len(), 2);
    assert_eq!(result.rows.iter().map(|r| r.epoch).collect::<Vec<_>>(), [2, 4]);
    let csv = result.to_csv();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("epoch,align_base,unif_base,align_reg,unif_reg\n"));
    assert_eq!(result.to_svg().matches("<circle").count(), 4);
}

#[test]
fn sweep_rows_and_single_value_equivalence() {
    let cfg = small(2);
    let rows = sweep(SweepParam::P, &[60.0, 80.0, 100.0], &cfg).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), [60.0, 80.0, 100.0]);

    let single = sweep(SweepParam::Beta, &[cfg.loss.beta], &cfg).unwrap();
    let run = train(&cfg).unwrap();
    let last = run.log.last().unwrap();
    assert_eq!(single[0].loss_total, last.loss_total);
    assert_eq!(single[0].align, last.align);
    assert_eq!(single[0].probe_acc, run.log.final_probe());
    let csv = specmatch_core::runner::SweepRow::csv(&rows);
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn config_file_drives_training() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    let cfg = small(1);
    std::fs::write(&path, cfg.to_json()).unwrap();
    let loaded = TrainConfig::load(&path).unwrap();
    assert_eq!(loaded, cfg);
    assert_eq!(train(&loaded).unwrap().log, train(&cfg).unwrap().log);
}
