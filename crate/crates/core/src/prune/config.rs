use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneMode {
    /// Select once at the start and delete; the smaller model is trained.
    Hard,
    /// Zeroize at a constant rate every interval; filters keep training.
    Soft,
    /// Soft pruning with the rate growing along the exponential schedule.
    AsymptoticSoft,
}

/// How a fractional filter count `N·P` is turned into a whole number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    /// `floor(N·P)` filters pruned.
    #[default]
    PruneFloor,
    /// `floor(N·(1 − P))` filters kept.
    KeepFloor,
}

/// Which prunable layers a prune step touches.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerFilter {
    #[default]
    All,
    /// Layer ids ending with this string, e.g. `"conv1"`.
    Suffix(String),
    Ids(Vec<String>),
}

impl LayerFilter {
    pub fn accepts(&self, layer_id: &str) -> bool {
        match self {
            LayerFilter::All => true,
            LayerFilter::Suffix(s) => layer_id.ends_with(s.as_str()),
            LayerFilter::Ids(ids) => ids.iter().any(|i| i == layer_id),
        }
    }
}

fn default_p() -> u8 {
    2
}

fn default_d() -> f64 {
    0.125
}

fn default_interval() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    pub mode: PruneMode,
    /// Norm order of the filter criterion, 1 or 2.
    #[serde(default = "default_p")]
    pub p: u8,
    #[serde(rename = "P_goal")]
    pub p_goal: f64,
    #[serde(rename = "P_min", default)]
    pub p_min: f64,
    #[serde(rename = "D", default = "default_d")]
    pub d: f64,
    pub epoch_max: usize,
    #[serde(default = "default_interval")]
    pub interval: usize,
    #[serde(default)]
    pub layer_filter: LayerFilter,
    #[serde(default)]
    pub rounding: Rounding,
}

impl PruneConfig {
    pub fn new(mode: PruneMode, p_goal: f64, epoch_max: usize) -> Self {
        Self {
            mode,
            p: 2,
            p_goal,
            p_min: if mode == PruneMode::AsymptoticSoft { 0.0 } else { p_goal },
            d: 0.125,
            epoch_max,
            interval: 1,
            layer_filter: LayerFilter::All,
            rounding: Rounding::PruneFloor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p != 1 && self.p != 2 {
            return Err(Error::Config(format!("norm order p must be 1 or 2, got {}", self.p)));
        }
        if !(0.0..1.0).contains(&self.p_goal) {
            return Err(Error::Config(format!("P_goal must be in [0, 1), got {}", self.p_goal)));
        }
        if !(0.0..=self.p_goal).contains(&self.p_min) && self.mode == PruneMode::AsymptoticSoft {
            return Err(Error::Config(format!(
                "P_min must be in [0, P_goal], got {} with P_goal {}",
                self.p_min, self.p_goal
            )));
        }
        if !(self.d > 0.0 && self.d < 1.0) {
            return Err(Error::Config(format!("D must be in (0, 1), got {}", self.d)));
        }
        if self.epoch_max == 0 {
            return Err(Error::Config("epoch_max must be positive".into()));
        }
        if self.interval == 0 {
            return Err(Error::Config("interval must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_names() {
        let c: PruneConfig = serde_json::from_str(
            r#"{"mode":"asymptotic-soft","p":1,"P_goal":0.3,"P_min":0,"D":0.125,"epoch_max":200,
                "layer_filter":{"suffix":"conv1"}}"#,
        )
        .unwrap();
        assert_eq!(c.mode, PruneMode::AsymptoticSoft);
        assert_eq!(c.interval, 1);
        assert!(c.layer_filter.accepts("s1.b0.conv1"));
        assert!(!c.layer_filter.accepts("s1.b0.conv2"));
        c.validate().unwrap();
        assert!(serde_json::from_str::<PruneConfig>(r#"{"mode":"soft","P_goal":0.3,"epoch_max":1,"x":1}"#).is_err());
    }

    #[test]
    fn invariants_enforced() {
        let ok = PruneConfig::new(PruneMode::AsymptoticSoft, 0.3, 10);
        ok.validate().unwrap();
        for bad in [
            PruneConfig { p: 3, ..ok.clone() },
            PruneConfig { p_goal: 1.0, ..ok.clone() },
            PruneConfig { p_min: 0.4, ..ok.clone() },
            PruneConfig { d: 1.0, ..ok.clone() },
            PruneConfig { interval: 0, ..ok.clone() },
            PruneConfig { epoch_max: 0, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }
}
