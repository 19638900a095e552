use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{PruneConfig, PruneMode};
use super::schedule::PruneSchedule;
use super::select::{filter_norm, num_to_prune, select_prune_set};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Element;

/// Zeroized filter indices per layer as of `epoch`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskState {
    pub epoch: usize,
    pub layers: BTreeMap<String, Vec<usize>>,
}

impl MaskState {
    pub fn new(epoch: usize) -> Self {
        Self {
            epoch,
            layers: BTreeMap::new(),
        }
    }

    pub fn pruned_count(&self) -> usize {
        self.layers.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.pruned_count() == 0
    }

    /// Filters still active in each masked layer of `model`.
    pub fn remaining<T: Element>(&self, model: &Model<T>) -> Result<BTreeMap<String, usize>> {
        self.layers
            .iter()
            .map(|(id, idx)| {
                let conv = model.conv(id).ok_or_else(|| Error::UnknownLayer(id.clone()))?;
                Ok((id.clone(), conv.out_channels().saturating_sub(idx.len())))
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Sets filters `indices` of conv `layer_id` and their BN γ, β to zero.
pub fn zeroize_filters<T: Element>(model: &mut Model<T>, layer_id: &str, indices: &[usize]) -> Result<()> {
    let conv = model
        .conv(layer_id)
        .ok_or_else(|| Error::UnknownLayer(layer_id.to_string()))?;
    if !conv.prunable {
        return Err(Error::NotPrunable(layer_id.to_string()));
    }
    if indices.is_empty() {
        return Ok(());
    }
    model.conv_mut(layer_id)?.zeroize(indices)
}

/// One soft-pruning step: for every selected prunable layer, rank filters
/// by their current norm and zeroize the `num_to_prune` weakest.
pub fn prune_step<T: Element>(
    model: &mut Model<T>,
    cfg: &PruneConfig,
    schedule: &PruneSchedule,
    epoch: usize,
) -> Result<MaskState> {
    let rate = schedule.rate_at(epoch)?;
    let targets: Vec<String> = model
        .prunable_layers()
        .into_iter()
        .filter(|id| cfg.layer_filter.accepts(id))
        .map(str::to_string)
        .collect();
    // all selections use the pre-step weights
    let mut picks = Vec::with_capacity(targets.len());
    for id in &targets {
        let w = &model.conv(id).expect("listed by prunable_layers").weight;
        let norms = filter_norm(w, cfg.p)?;
        let count = num_to_prune(norms.len(), rate, cfg.rounding);
        picks.push(select_prune_set(&norms, count)?);
    }
    let mut mask = MaskState::new(epoch);
    for (id, idx) in targets.into_iter().zip(picks) {
        zeroize_filters(model, &id, &idx)?;
        mask.layers.insert(id, idx);
    }
    Ok(mask)
}

/// A structurally smaller model plus the residual index set of each block.
#[derive(Debug, Clone)]
pub struct CompactModel<T> {
    pub model: Model<T>,
    pub index_sets: BTreeMap<String, Vec<usize>>,
}

impl<T: Element> PartialEq for CompactModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.model == other.model && self.index_sets == other.index_sets
    }
}

/// Deletes the masked filters, their BN channels and the matching input
/// slices of whatever consumes them. Block outputs are merged back into the
/// full-width residual through the recorded index sets.
pub fn extract_compact<T: Element>(model: &Model<T>, mask: &MaskState) -> Result<CompactModel<T>> {
    let mut compact = model.clone();
    for (id, pruned) in &mask.layers {
        if pruned.is_empty() {
            continue;
        }
        let conv = model
            .conv(id)
            .ok_or_else(|| Error::Extraction(format!("mask names unknown layer `{id}`")))?;
        let n = conv.out_channels();
        if let Some(&bad) = pruned.iter().find(|&&i| i >= n) {
            return Err(Error::Extraction(format!(
                "mask index {bad} out of range for `{id}` with {n} filters"
            )));
        }
        let keep: Vec<usize> = (0..n).filter(|j| !pruned.contains(j)).collect();
        compact.retain_filters(id, &keep)?;
    }
    compact.validate()?;
    let index_sets = compact.index_sets();
    Ok(CompactModel {
        model: compact,
        index_sets,
    })
}

/// Hard pruning: one selection at the current weights with rate `P_goal`,
/// then immediate extraction.
pub fn hard_prune<T: Element>(model: &Model<T>, cfg: &PruneConfig) -> Result<(CompactModel<T>, MaskState)> {
    let cfg = PruneConfig {
        mode: PruneMode::Hard,
        ..cfg.clone()
    };
    cfg.validate()?;
    let mut masked = model.clone();
    let schedule = PruneSchedule::constant(cfg.p_goal, cfg.epoch_max);
    let mask = prune_step(&mut masked, &cfg, &schedule, 0)?;
    Ok((extract_compact(&masked, &mask)?, mask))
}
