use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn check_index_set(width: usize, branch: usize, index_set: &[usize]) -> Result<()> {
    if index_set.len() != branch {
        return Err(Error::Index(format!(
            "index set has {} entries for a {branch}-channel branch",
            index_set.len()
        )));
    }
    if let Some(&bad) = index_set.iter().find(|&&i| i >= width) {
        return Err(Error::Index(format!(
            "index {bad} out of range for residual width {width}"
        )));
    }
    if index_set.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Index("index set must be strictly increasing".into()));
    }
    Ok(())
}

/// Merge of a (possibly channel-pruned) branch into the full-width residual:
/// `out[I[j]] = residual[I[j]] + branch[j]`, every other channel passes the
/// residual through unchanged.
pub fn residual_add<T: Element>(
    residual: &Tensor<T>,
    branch: &Tensor<T>,
    index_set: &[usize],
) -> Result<Tensor<T>> {
    let [n, cr, h, w] = residual.dims4()?;
    let [bn, cc, bh, bw] = branch.dims4()?;
    if (bn, bh, bw) != (n, h, w) {
        return Err(Error::dim("residual_add", residual.shape(), branch.shape()));
    }
    check_index_set(cr, cc, index_set)?;
    let plane = h * w;
    let mut out = residual.clone();
    let o = out.data_mut();
    let b = branch.data();
    for s in 0..n {
        for (j, &idx) in index_set.iter().enumerate() {
            let dst = (s * cr + idx) * plane;
            let src = (s * cc + j) * plane;
            for (d, &v) in o[dst..dst + plane].iter_mut().zip(&b[src..src + plane]) {
                *d = *d + v;
            }
        }
    }
    Ok(out)
}

/// Gradient of [`residual_add`] with respect to the branch: the upstream
/// gradient gathered at the index set. The residual receives the upstream
/// gradient unchanged.
pub fn residual_add_grad<T: Element>(d_out: &Tensor<T>, index_set: &[usize]) -> Result<Tensor<T>> {
    d_out.select1(index_set)
}
