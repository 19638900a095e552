use serde::{Deserialize, Serialize};

use super::config::{PruneConfig, PruneMode};
use crate::error::{Error, Result};

const U_LO: f64 = 1e-6;
const U_HI: f64 = 100.0;

/// `rate(e) = a·exp(−k·e) + b`, passing through `(0, P_min)`,
/// `(D·E, 0.75·P_goal)` and `(E, P_goal)` for `E = epoch_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub a: f64,
    pub k: f64,
    pub b: f64,
    pub p_goal: f64,
    pub p_min: f64,
    pub d: f64,
    pub epoch_max: usize,
}

impl PruneSchedule {
    /// Constant rate `p` for every epoch.
    pub fn constant(p: f64, epoch_max: usize) -> Self {
        Self {
            a: 0.0,
            k: 0.0,
            b: p,
            p_goal: p,
            p_min: p,
            d: 0.125,
            epoch_max,
        }
    }

    pub fn for_config(cfg: &PruneConfig) -> Result<Self> {
        cfg.validate()?;
        match cfg.mode {
            PruneMode::Hard | PruneMode::Soft => Ok(Self::constant(cfg.p_goal, cfg.epoch_max)),
            PruneMode::AsymptoticSoft => solve_schedule(cfg.p_goal, cfg.p_min, cfg.d, cfg.epoch_max),
        }
    }

    /// `k·epoch_max`.
    pub fn u(&self) -> f64 {
        self.k * self.epoch_max as f64
    }

    pub fn rate_at(&self, epoch: usize) -> Result<f64> {
        if epoch > self.epoch_max {
            return Err(Error::EpochRange {
                epoch,
                max: self.epoch_max,
            });
        }
        let r = self.a * (-self.k * epoch as f64).exp() + self.b;
        Ok(r.clamp(self.p_min, self.p_goal))
    }
}

fn ratio(u: f64, d: f64) -> f64 {
    // (1 − e^{−uD}) / (1 − e^{−u}), written with expm1 for small u
    (-u * d).exp_m1() / (-u).exp_m1()
}

/// Solves the three anchor equations. `a` and `b` are eliminated, leaving
/// `(1 − e^{−uD}) / (1 − e^{−u}) = (0.75·P_goal − P_min) / (P_goal − P_min)`
/// in `u = k·epoch_max`, which is bisected on `(1e-6, 100)`.
pub fn solve_schedule(p_goal: f64, p_min: f64, d: f64, epoch_max: usize) -> Result<PruneSchedule> {
    if epoch_max == 0 {
        return Err(Error::Schedule("epoch_max must be positive".into()));
    }
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::Schedule(format!("D must be in (0, 1), got {d}")));
    }
    if p_goal <= p_min {
        return Ok(PruneSchedule {
            d,
            ..PruneSchedule::constant(p_goal, epoch_max)
        });
    }
    if 0.75 * p_goal <= p_min {
        return Err(Error::Schedule(format!(
            "0.75·P_goal = {} does not exceed P_min = {p_min}",
            0.75 * p_goal
        )));
    }
    let target = (0.75 * p_goal - p_min) / (p_goal - p_min);
    let f = |u: f64| ratio(u, d) - target;
    let (mut lo, mut hi) = (U_LO, U_HI);
    let (f_lo, f_hi) = (f(lo), f(hi));
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(Error::Numeric(format!(
            "no root in ({U_LO}, {U_HI}): residuals {f_lo:e}, {f_hi:e} for target {target}, D {d}"
        )));
    }
    let mut u = 0.5 * (lo + hi);
    for _ in 0..200 {
        u = 0.5 * (lo + hi);
        let r = f(u);
        if r.abs() < 1e-12 {
            break;
        }
        if r < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
    }
    let a = (p_goal - p_min) / (-u).exp_m1();
    Ok(PruneSchedule {
        a,
        k: u / epoch_max as f64,
        b: p_min - a,
        p_goal,
        p_min,
        d,
        epoch_max,
    })
}
