use super::config::Rounding;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// ℓp norm of every output filter of a `[Cout, Cin, K, K]` weight.
pub fn filter_norm<T: Element>(weight: &Tensor<T>, p: u8) -> Result<Vec<f64>> {
    let [cout, ..] = weight.dims4()?;
    let norm = |row: &[T]| -> f64 {
        match p {
            1 => row.iter().map(|v| v.as_f64().abs()).sum(),
            _ => row.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt(),
        }
    };
    if p != 1 && p != 2 {
        return Err(Error::Config(format!("norm order p must be 1 or 2, got {p}")));
    }
    Ok((0..cout).map(|j| norm(weight.slice0(j))).collect())
}

/// Filters to remove from a layer of `n` at `rate`. At least one filter
/// always survives.
pub fn num_to_prune(n: usize, rate: f64, rounding: Rounding) -> usize {
    // the small slack keeps e.g. 0.3·10 from flooring to 2
    let count = match rounding {
        Rounding::PruneFloor => (n as f64 * rate + 1e-9).floor() as usize,
        Rounding::KeepFloor => n - ((n as f64 * (1.0 - rate) + 1e-9).floor() as usize).min(n),
    };
    count.min(n.saturating_sub(1))
}

/// The `count` smallest-norm indices (ties go to the lower index), sorted.
pub fn select_prune_set(norms: &[f64], count: usize) -> Result<Vec<usize>> {
    if count > norms.len() {
        return Err(Error::Selection {
            count,
            available: norms.len(),
        });
    }
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_unstable_by(|&i, &j| norms[i].total_cmp(&norms[j]).then(i.cmp(&j)));
    let mut picked = order[..count].to_vec();
    picked.sort_unstable();
    Ok(picked)
}
