use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;

use super::checkpoint::load_checkpoint;
use super::config::{lr_at, DatasetSpec, Init, TrainConfig};
use super::data::{gen_synthetic_split, load_cifar10, Dataset};
use super::metrics::MetricsRow;
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::prune::{
    extract_compact, hard_prune, prune_step, CompactModel, MaskState, PruneConfig, PruneMode, PruneSchedule,
};
use crate::rng;
use crate::tensor::{sgd_step, softmax_cross_entropy, SgdParams, Tensor};

const EVAL_CHUNK: usize = 256;

/// Training and held-out splits named by a config.
pub fn load_dataset(spec: &DatasetSpec) -> Result<(Dataset, Dataset)> {
    match spec {
        DatasetSpec::Cifar10 { path } => {
            let (train, test, _) = load_cifar10(path)?;
            Ok((train, test))
        }
        &DatasetSpec::Synthetic {
            classes,
            n,
            dim,
            seed,
            test_n,
        } => gen_synthetic_split(classes, n, test_n.unwrap_or((n / 4).max(1)), dim, seed),
    }
}

/// Fraction of `data` classified correctly (eval mode).
pub fn accuracy(model: &Model<f32>, data: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, labels) = data.batch(chunk);
        let logits = model.predict(&x)?;
        let classes = logits.shape()[1];
        for (row, &label) in logits.data().chunks(classes).zip(&labels) {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                .0;
            correct += usize::from(best == label);
        }
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}

/// Largest logit difference between two models on up to `limit` samples,
/// relative to `max(1, largest |logit|)`.
pub fn equivalence_error(a: &Model<f32>, b: &Model<f32>, data: &Dataset, limit: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len().min(limit)).collect();
    let mut worst = 0.0f64;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, _) = data.batch(chunk);
        let ya = a.predict(&x)?;
        let yb = b.predict(&x)?;
        let scale = f64::from(ya.max_abs()).max(1.0);
        worst = worst.max(f64::from(ya.max_abs_diff(&yb)?) / scale);
    }
    Ok(worst)
}

fn augment(x: &mut Tensor<f32>, rng: &mut rng::DetRng) {
    let [n, c, h, w] = x.dims4().expect("batches are 4-d");
    let per = c * h * w;
    for s in 0..n {
        let flip = rng.random_bool(0.5);
        let dy = rng.random_range(-2i64..=2);
        let dx = rng.random_range(-2i64..=2);
        let src = x.data()[s * per..(s + 1) * per].to_vec();
        let dst = &mut x.data_mut()[s * per..(s + 1) * per];
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let sy = y as i64 + dy;
                    let sx0 = if flip { (w - 1 - xx) as i64 } else { xx as i64 } + dx;
                    let v = if (0..h as i64).contains(&sy) && (0..w as i64).contains(&sx0) {
                        src[(ch * h + sy as usize) * w + sx0 as usize]
                    } else {
                        0.0
                    };
                    dst[(ch * h + y) * w + xx] = v;
                }
            }
        }
    }
}

/// Model, optimizer state and data of one run. Exposes the pieces of the
/// epoch loop separately so they can be driven step by step.
pub struct Trainer<'a> {
    pub model: Model<f32>,
    pub velocity: BTreeMap<String, Tensor<f32>>,
    cfg: &'a TrainConfig,
    train: &'a Dataset,
    test: &'a Dataset,
    lr_schedule: Vec<(usize, f64)>,
    schedule: Option<PruneSchedule>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a TrainConfig, model: Model<f32>, train: &'a Dataset, test: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.prune.as_ref().map(PruneSchedule::for_config).transpose()?;
        Ok(Self {
            model,
            velocity: BTreeMap::new(),
            cfg,
            train,
            test,
            lr_schedule: cfg.lr_schedule(),
            schedule,
        })
    }

    pub fn schedule(&self) -> Option<&PruneSchedule> {
        self.schedule.as_ref()
    }

    /// One shuffled SGD pass over the training set (0-based pass `t`);
    /// returns the mean loss.
    pub fn train_pass(&mut self, t: usize) -> Result<f64> {
        self.train_pass_with_lr(t, lr_at(&self.lr_schedule, t))
    }

    pub fn train_pass_with_lr(&mut self, t: usize, lr: f64) -> Result<f64> {
        let p = SgdParams {
            lr,
            momentum: self.cfg.momentum,
            weight_decay: self.cfg.weight_decay,
        };
        self.model.set_mode(Mode::Train);
        let order = rng::permutation(&mut rng::derived(self.cfg.seed, 1000 + t as u64), self.train.len());
        let mut aug_rng = rng::derived(self.cfg.seed, 1_000_000 + t as u64);
        let mut total = 0.0;
        for idx in order.chunks(self.cfg.batch_size) {
            let (mut x, labels) = self.train.batch(idx);
            if self.cfg.augment {
                augment(&mut x, &mut aug_rng);
            }
            let (logits, cache) = self.model.forward(&x)?;
            let (loss, d_logits) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Ok(loss);
            }
            total += loss * idx.len() as f64;
            let grads = self.model.backward(&cache, &d_logits)?;
            let velocity = &mut self.velocity;
            let mut status = Ok(());
            self.model.visit_params_mut(|name, trainable, w| {
                if !trainable || status.is_err() {
                    return;
                }
                let v = velocity.entry(name.clone()).or_insert_with(|| Tensor::zeros(w.shape()));
                if v.shape() != w.shape() {
                    *v = Tensor::zeros(w.shape());
                }
                status = sgd_step(w, &grads[&name], v, p);
            });
            status?;
        }
        Ok(total / self.train.len() as f64)
    }

    pub fn test_accuracy(&self) -> Result<f64> {
        accuracy(&self.model, self.test)
    }

    /// Soft prune step at `epoch` with the run's schedule.
    pub fn prune(&mut self, epoch: usize) -> Result<MaskState> {
        match (&self.cfg.prune, &self.schedule) {
            (Some(cfg), Some(s)) => prune_step(&mut self.model, cfg, s, epoch),
            _ => Ok(MaskState::new(epoch)),
        }
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The trained model; for soft modes it still carries the final zeroized filters.
    pub model: Model<f32>,
    pub mask: MaskState,
    /// The mask produced by every prune step, in order.
    pub mask_history: Vec<MaskState>,
    pub compact: CompactModel<f32>,
    pub metrics: Vec<MetricsRow>,
    /// Test accuracy of the compact model.
    pub final_accuracy: f64,
    pub equivalence_error: f64,
}

/// Relative logit tolerance of the masked ↔ compact check.
pub const EQUIVALENCE_TOL: f64 = 1e-5;

pub fn initial_model(cfg: &TrainConfig) -> Result<Model<f32>> {
    match &cfg.init {
        Init::Scratch => Model::from_arch(&cfg.arch, cfg.seed),
        Init::Checkpoint(p) => {
            let (m, _) = load_checkpoint(p)?;
            if m.input_shape() != cfg.arch.input() || m.arch().classes() != cfg.arch.classes() {
                return Err(Error::Config(format!(
                    "checkpoint {} does not match the configured input/classes",
                    p.display()
                )));
            }
            Ok(m)
        }
    }
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, test_set) = load_dataset(&cfg.dataset)?;
    train_on(cfg, &train_set, &test_set)
}

/// Epochs `1..=epochs`: a training pass, test accuracy, a prune step when
/// due, test accuracy again, one metrics row. Ends with extraction and the
/// masked ↔ compact equivalence check.
pub fn train_on(cfg: &TrainConfig, train_set: &Dataset, test_set: &Dataset) -> Result<TrainOutcome> {
    let mut model = initial_model(cfg)?;
    let mode = cfg.prune.as_ref().map(|p| p.mode);
    let mut mask = MaskState::new(0);
    if mode == Some(PruneMode::Hard) {
        let pc: &PruneConfig = cfg.prune.as_ref().expect("mode is set");
        let (compact, hard_mask) = hard_prune(&model, pc)?;
        model = compact.model;
        mask = hard_mask;
    }
    let mut trainer = Trainer::new(cfg, model, train_set, test_set)?;
    let soft = matches!(mode, Some(PruneMode::Soft | PruneMode::AsymptoticSoft));
    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut history = Vec::new();
    for e in 1..=cfg.epochs {
        let start = Instant::now();
        let loss = trainer.train_pass(e - 1)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch: e, loss });
        }
        let evaluate = e % cfg.eval_every == 0 || e == cfg.epochs;
        let acc_before = if evaluate { trainer.test_accuracy()? } else { f64::NAN };
        let (rate, pruned_count) = match (mode, trainer.schedule()) {
            (Some(PruneMode::Hard), _) => (cfg.prune.as_ref().expect("hard").p_goal, 0),
            (Some(_), Some(s)) => {
                let rate = s.rate_at(e)?;
                let interval = cfg.prune.as_ref().expect("soft").interval;
                if e % interval == 0 || e == cfg.epochs {
                    mask = trainer.prune(e)?;
                    history.push(mask.clone());
                    (rate, mask.pruned_count())
                } else {
                    (rate, 0)
                }
            }
            _ => (0.0, 0),
        };
        let acc_after = if pruned_count == 0 || !evaluate {
            acc_before
        } else {
            trainer.test_accuracy()?
        };
        rows.push(MetricsRow {
            epoch: e,
            train_loss: loss,
            acc_before,
            acc_after,
            gap: acc_after - acc_before,
            rate,
            pruned_count,
            wall_seconds: if cfg.record_wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
    }
    let mut model = trainer.model;
    model.set_mode(Mode::Eval);
    let extract_mask = if soft { mask.clone() } else { MaskState::new(cfg.epochs) };
    let compact = extract_compact(&model, &extract_mask)?;
    let err = equivalence_error(&model, &compact.model, test_set, 512)?;
    if !(err <= EQUIVALENCE_TOL) {
        return Err(Error::Consistency(format!(
            "compact model deviates from the masked model by {err:e} (relative logits)"
        )));
    }
    let final_accuracy = accuracy(&compact.model, test_set)?;
    Ok(TrainOutcome {
        model,
        mask,
        mask_history: history,
        compact,
        metrics: rows,
        final_accuracy,
        equivalence_error: err,
    })
}
