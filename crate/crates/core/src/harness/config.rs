use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ArchSpec;
use crate::prune::PruneConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Cifar10 {
        path: PathBuf,
    },
    Synthetic {
        classes: usize,
        /// Training samples per class.
        n: usize,
        /// Image side length.
        dim: usize,
        seed: u64,
        /// Held-out samples per class; defaults to `n / 4` (at least 1).
        #[serde(default)]
        test_n: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Scratch,
    Checkpoint(PathBuf),
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    5e-4
}

fn default_one() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_init() -> Init {
    Init::Scratch
}

/// One training run. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: ArchSpec,
    pub dataset: DatasetSpec,
    pub epochs: usize,
    pub batch_size: usize,
    /// Piecewise-constant `[epoch, lr]` pairs over 0-based training passes.
    /// Defaults to 0.1 with ×0.1 drops at 50% and 75% of `epochs`.
    #[serde(default)]
    pub lr_schedule: Option<Vec<(usize, f64)>>,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub seed: u64,
    #[serde(default)]
    pub prune: Option<PruneConfig>,
    #[serde(default = "default_init")]
    pub init: Init,
    #[serde(default = "default_one")]
    pub eval_every: usize,
    /// Random horizontal flips and 2-pixel shifted crops.
    #[serde(default)]
    pub augment: bool,
    /// When false the `wall_seconds` column is written as 0 so that logs
    /// of identical runs compare byte for byte.
    #[serde(default = "default_true")]
    pub record_wall_time: bool,
}

/// Learning rate used for training pass `t` (0-based).
pub fn lr_at(schedule: &[(usize, f64)], t: usize) -> f64 {
    schedule
        .iter()
        .take_while(|(e, _)| *e <= t)
        .last()
        .map_or(schedule[0].1, |&(_, lr)| lr)
}

pub fn default_lr_schedule(epochs: usize) -> Vec<(usize, f64)> {
    let mut s = vec![(0, 0.1)];
    for (frac, lr) in [(0.5, 0.01), (0.75, 0.001)] {
        let e = (epochs as f64 * frac).round() as usize;
        if e > s.last().expect("non-empty").0 && e < epochs {
            s.push((e, lr));
        }
    }
    s
}

impl TrainConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The effective schedule. Runs initialised from a checkpoint train at
    /// one tenth of it.
    pub fn lr_schedule(&self) -> Vec<(usize, f64)> {
        let base = self
            .lr_schedule
            .clone()
            .unwrap_or_else(|| default_lr_schedule(self.epochs));
        match self.init {
            Init::Scratch => base,
            Init::Checkpoint(_) => base.into_iter().map(|(e, lr)| (e, lr * 0.1)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs, batch_size and eval_every must be positive".into()));
        }
        if let Some(s) = &self.lr_schedule {
            if s.first().map(|p| p.0) != Some(0) {
                return Err(Error::Config("lr schedule must start at epoch 0".into()));
            }
            if s.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(Error::Config("lr schedule epochs must be strictly increasing".into()));
            }
            if s.iter().any(|p| !(p.1 >= 0.0)) {
                return Err(Error::Config("learning rates must be >= 0".into()));
            }
        }
        if let Some(p) = &self.prune {
            p.validate()?;
            if p.epoch_max != self.epochs {
                return Err(Error::Config(format!(
                    "prune.epoch_max ({}) must equal epochs ({})",
                    p.epoch_max, self.epochs
                )));
            }
        }
        if let DatasetSpec::Synthetic { classes, dim, .. } = self.dataset {
            let [c, h, w] = self.arch.input();
            if classes != self.arch.classes() || [c, h, w] != [3, dim, dim] {
                return Err(Error::Config(format!(
                    "synthetic data ({classes} classes, 3x{dim}x{dim}) does not match arch ({} classes, {c}x{h}x{w})",
                    self.arch.classes()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"{"arch":{"arch":"resnet","n":1,"widths":[4,8,16],"input":[3,8,8]},
        "dataset":{"synthetic":{"classes":10,"n":20,"dim":8,"seed":1}},
        "epochs":8,"batch_size":16,"seed":3}"#;

    #[test]
    fn defaults() {
        let c = TrainConfig::from_json(MIN).unwrap();
        assert_eq!(c.lr_schedule(), vec![(0, 0.1), (4, 0.01), (6, 0.001)]);
        assert_eq!((c.momentum, c.eval_every, c.init.clone()), (0.9, 1, Init::Scratch));
        assert!(c.record_wall_time && !c.augment && c.prune.is_none());
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MIN.replace("\"seed\":3", "\"seed\":3,\"lr\":0.1");
        assert!(matches!(TrainConfig::from_json(&bad), Err(Error::Json(_))));
    }

    #[test]
    fn checkpoint_init_scales_lr() {
        let c = TrainConfig {
            init: Init::Checkpoint("m.json".into()),
            ..TrainConfig::from_json(MIN).unwrap()
        };
        let s = c.lr_schedule();
        assert!((s[0].1 - 0.01).abs() < 1e-12 && (s[1].1 - 0.001).abs() < 1e-12);
    }

    #[test]
    fn schedule_rules() {
        let mut c = TrainConfig::from_json(MIN).unwrap();
        c.lr_schedule = Some(vec![(1, 0.1)]);
        assert!(c.validate().is_err());
        c.lr_schedule = Some(vec![(0, 0.1), (3, 0.01), (3, 0.001)]);
        assert!(c.validate().is_err());
        let s = [(0, 0.1), (3, 0.01)];
        assert_eq!((lr_at(&s, 2), lr_at(&s, 3), lr_at(&s, 9)), (0.1, 0.01, 0.01));
    }

    #[test]
    fn prune_epochs_must_match() {
        let with = MIN.replace(
            "\"seed\":3",
            "\"seed\":3,\"prune\":{\"mode\":\"soft\",\"P_goal\":0.3,\"epoch_max\":9}",
        );
        assert!(matches!(TrainConfig::from_json(&with), Err(Error::Config(_))));
    }
}
