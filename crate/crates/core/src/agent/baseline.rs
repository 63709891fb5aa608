//! Fixed-wrench scraping profile used as the comparison baseline.

use crate::env::Action;
use crate::material::VialGeometry;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub f_x: f64,
    pub tau_y: f64,
    /// Descend over the first `sweep_split` of the horizon, then sweep back up.
    pub upward_sweep: bool,
    pub sweep_split: f64,
    pub sweep_f_x: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { f_x: 4.0, tau_y: 0.5, upward_sweep: false, sweep_split: 0.8, sweep_f_x: 6.0 }
    }
}

/// Action at policy step `t`: constant wrench, `z` descending linearly from the
/// window top (`t = 0`) to the window bottom (`t = horizon`), then holding.
pub fn fixed_wrench_policy(t: usize, cfg: &BaselineConfig, geometry: &VialGeometry, horizon: usize) -> Action {
    let (top, bottom) = (geometry.window_z_max, geometry.window_z_min);
    let horizon = horizon.max(1) as f64;
    let t = t as f64;
    if cfg.upward_sweep {
        let split = (cfg.sweep_split.clamp(0.0, 1.0) * horizon).max(1.0);
        if t >= split {
            let back = ((t - split) / (horizon - split).max(1.0)).min(1.0);
            return Action { f_x_cmd: cfg.sweep_f_x, tau_y_cmd: cfg.tau_y, z_desired: bottom + back * (top - bottom) };
        }
        let s = t / split;
        return Action { f_x_cmd: cfg.f_x, tau_y_cmd: cfg.tau_y, z_desired: top - s * (top - bottom) };
    }
    let s = (t / horizon).min(1.0);
    Action { f_x_cmd: cfg.f_x, tau_y_cmd: cfg.tau_y, z_desired: top - s * (top - bottom) }
}
