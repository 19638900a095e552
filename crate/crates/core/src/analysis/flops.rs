use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerSpec, Model};
use crate::tensor::Element;

/// Multiply-accumulates of one layer (zero for BN, ReLU and pooling).
pub fn layer_macs(spec: &LayerSpec) -> u64 {
    match spec.kind {
        LayerKind::Conv {
            in_channels,
            out_channels,
            kernel,
            out_hw: [ho, wo],
            ..
        } => (out_channels * in_channels * kernel * kernel * ho * wo) as u64,
        LayerKind::Affine {
            in_features,
            out_features,
        } => (in_features * out_features) as u64,
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerFlops {
    pub layer_id: String,
    pub baseline: u64,
    pub pruned: u64,
    pub reduction: f64,
}

/// Per-layer MAC counts of a baseline model and a pruned version of it.
/// FLOPs here means MACs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopsReport {
    pub unit: &'static str,
    pub layers: Vec<LayerFlops>,
    pub baseline_total: u64,
    pub pruned_total: u64,
    pub pruned_ratio: f64,
}

fn weighted<T: Element>(model: &Model<T>) -> Result<Vec<(String, u64)>> {
    Ok(model
        .layer_specs()?
        .iter()
        .filter(|s| matches!(s.kind, LayerKind::Conv { .. } | LayerKind::Affine { .. }))
        .map(|s| (s.layer_id.clone(), layer_macs(s)))
        .collect())
}

/// MAC counts of a single model (baseline and pruned columns coincide).
pub fn count_flops<T: Element>(model: &Model<T>) -> Result<FlopsReport> {
    compare_flops(model, model)
}

/// Matches layers by id; both models must share the same layer list.
pub fn compare_flops<T: Element, U: Element>(baseline: &Model<T>, pruned: &Model<U>) -> Result<FlopsReport> {
    let base = weighted(baseline)?;
    let small = weighted(pruned)?;
    if base.len() != small.len() || base.iter().zip(&small).any(|(a, b)| a.0 != b.0) {
        return Err(Error::Config("models do not share a layer structure".into()));
    }
    let layers: Vec<LayerFlops> = base
        .into_iter()
        .zip(small)
        .map(|((id, b), (_, p))| LayerFlops {
            layer_id: id,
            baseline: b,
            pruned: p,
            reduction: if b == 0 { 0.0 } else { 1.0 - p as f64 / b as f64 },
        })
        .collect();
    let baseline_total: u64 = layers.iter().map(|l| l.baseline).sum();
    let pruned_total: u64 = layers.iter().map(|l| l.pruned).sum();
    Ok(FlopsReport {
        unit: "MACs",
        layers,
        baseline_total,
        pruned_total,
        pruned_ratio: 1.0 - pruned_total as f64 / baseline_total as f64,
    })
}

impl FlopsReport {
    /// `baseline / pruned`, the speedup implied by the MAC counts.
    pub fn theoretical_speedup(&self) -> f64 {
        self.baseline_total as f64 / self.pruned_total as f64
    }

    pub fn to_table(&self) -> String {
        let w = self.layers.iter().map(|l| l.layer_id.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let _ = writeln!(out, "FLOPs counted as multiply-accumulates (MACs)");
        let _ = writeln!(out, "{:<w$}  {:>14}  {:>14}  {:>9}", "layer", "baseline", "pruned", "reduced");
        for l in &self.layers {
            let _ = writeln!(
                out,
                "{:<w$}  {:>14}  {:>14}  {:>8.2}%",
                l.layer_id,
                l.baseline,
                l.pruned,
                100.0 * l.reduction
            );
        }
        let _ = writeln!(
            out,
            "{:<w$}  {:>14}  {:>14}  {:>8.2}%",
            "total",
            self.baseline_total,
            self.pruned_total,
            100.0 * self.pruned_ratio
        );
        let _ = writeln!(out, "theoretical speedup {:.3}x", self.theoretical_speedup());
        out
    }
}

/// Fraction of a conv's MACs removed when its input side is pruned at
/// `p_i` and its output side at `p_next`: `1 − (1 − p_next)(1 − p_i)`.
pub fn layerwise_reduction(p_i: f64, p_next: f64) -> f64 {
    1.0 - (1.0 - p_next) * (1.0 - p_i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_plain_cnn, ArchSpec};
    use crate::prune::{hard_prune, PruneConfig, PruneMode, Rounding};

    fn conv(cin: usize, cout: usize, k: usize, hw: usize) -> LayerSpec {
        LayerSpec {
            layer_id: "c".into(),
            kind: LayerKind::Conv {
                in_channels: cin,
                out_channels: cout,
                kernel: k,
                stride: 1,
                pad: 1,
                out_hw: [hw, hw],
            },
            prunable: true,
        }
    }

    #[test]
    fn formula_cases() {
        assert_eq!(layer_macs(&conv(3, 16, 3, 32)), 442_368);
        assert_eq!(layer_macs(&conv(1, 1, 1, 1)), 1);
        assert_eq!(layerwise_reduction(0.0, 0.0), 0.0);
        assert!((layerwise_reduction(0.3, 0.3) - 0.51).abs() < 1e-12);
        assert_eq!(layerwise_reduction(0.25, 0.0), 0.25);
    }

    #[test]
    fn resnet56_baseline_total() {
        let m: Model<f32> = Model::from_arch(&ArchSpec::resnet56(), 0).unwrap();
        let r = count_flops(&m).unwrap();
        assert_eq!(r.baseline_total, 125_747_840);
        assert_eq!(r.pruned_ratio, 0.0);
        assert_eq!(r.layers.iter().map(|l| l.baseline).sum::<u64>(), r.baseline_total);
    }

    #[test]
    fn resnet56_forty_percent() {
        let m: Model<f32> = Model::from_arch(&ArchSpec::resnet56(), 0).unwrap();
        let ratio = |rounding| {
            let cfg = PruneConfig {
                rounding,
                ..PruneConfig::new(PruneMode::Hard, 0.4, 1)
            };
            let (c, _) = hard_prune(&m, &cfg).unwrap();
            compare_flops(&m, &c.model).unwrap().pruned_ratio
        };
        assert!((ratio(Rounding::KeepFloor) - 0.526).abs() <= 0.015);
        assert!((ratio(Rounding::PruneFloor) - 0.497).abs() < 0.001);
    }

    #[test]
    fn plain_chain_interior_layers() {
        let m: Model<f64> = build_plain_cnn(&[20, 20, 20, 20], [3, 16, 16], 10, 1).unwrap();
        let cfg = PruneConfig::new(PruneMode::Hard, 0.3, 1);
        let (c, _) = hard_prune(&m, &cfg).unwrap();
        let r = compare_flops(&m, &c.model).unwrap();
        for l in r.layers.iter().filter(|l| ["conv1", "conv2", "conv3"].contains(&l.layer_id.as_str())) {
            assert!((l.reduction - layerwise_reduction(0.3, 0.3)).abs() < 1e-12, "{l:?}");
        }
        assert!(r.to_table().contains("total"));
    }
}
