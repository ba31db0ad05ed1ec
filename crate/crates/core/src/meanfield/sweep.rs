//! Convergence studies: trajectories across a smoothing grid or a width grid,
//! compared through the Wasserstein distances of their layer measures.

use rayon::prelude::*;

use super::measure::EmpiricalMeasure;
use super::wasserstein::{wasserstein1, wasserstein2};
use crate::backprop::LossSpec;
use crate::dataset::Dataset;
use crate::dynamics::{run_trajectory, ParticleTrajectory, RunConfig};
use crate::error::{Error, Result};
use crate::forward::Architecture;
use crate::quant::SmoothingParams;

/// Shared problem for every cell of a sweep.
#[derive(Debug, Clone)]
pub struct SweepBase {
    pub architecture: Architecture,
    pub smoothing: SmoothingParams,
    pub data: Dataset,
    pub loss: LossSpec,
    pub run: RunConfig,
    pub comparison_times: Vec<f64>,
}

impl SweepBase {
    /// `{0, T/4, T/2, 3T/4, T}`
    pub fn default_times(horizon: f64) -> Vec<f64> {
        (0..=4).map(|k| horizon * k as f64 / 4.0).collect()
    }
}

/// Distance between the measures of two consecutive grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// 0-based layer.
    pub layer: usize,
    /// Requested comparison time.
    pub time: f64,
    /// Grid value of the first cell (ε or width).
    pub from: f64,
    /// Grid value of the second cell.
    pub to: f64,
    pub w1: f64,
    pub w2: f64,
}

/// Velocity diagnostics of one grid cell and layer.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityRecord {
    pub parameter: f64,
    pub layer: usize,
    /// `sup_k max_i ‖∇_{w_i} R‖`
    pub max_row: f64,
    /// `sup_k (mean_i ‖∇_{w_i} R‖²)^{1/2}`
    pub rms: f64,
    pub clip_events: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub velocity: Vec<VelocityRecord>,
}

fn velocity_records(traj: &ParticleTrajectory, parameter: f64) -> Vec<VelocityRecord> {
    (0..traj.architecture.depth())
        .map(|l| VelocityRecord {
            parameter,
            layer: l,
            max_row: traj.velocity_sup(l),
            rms: traj.velocity_rms_sup(l),
            clip_events: traj.clip_events(),
        })
        .collect()
}

fn compare(
    a: &ParticleTrajectory,
    b: &ParticleTrajectory,
    layers: &[usize],
    times: &[f64],
    from: f64,
    to: f64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(layers.len() * times.len());
    for &t in times {
        let (ia, ib) = (a.index_at(t), b.index_at(t));
        for &l in layers {
            let mu = EmpiricalMeasure::new(a.snapshots[ia][l].as_array().clone())?;
            let nu = EmpiricalMeasure::new(b.snapshots[ib][l].as_array().clone())?;
            rows.push(SweepRow {
                layer: l,
                time: t,
                from,
                to,
                w1: wasserstein1(&mu, &nu)?,
                w2: wasserstein2(&mu, &nu)?,
            });
        }
    }
    Ok(rows)
}

/// Runs one trajectory per ε (non-increasing) and compares consecutive
/// cells on every layer at each comparison time.
pub fn eps_sweep(base: &SweepBase, eps_list: &[f64]) -> Result<SweepTable> {
    if eps_list.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Precondition("epsilon list must be non-increasing".into()));
    }
    let trajs: Vec<ParticleTrajectory> = eps_list
        .par_iter()
        .map(|&eps| {
            let smoothing = base.smoothing.with_epsilon(eps)?;
            run_trajectory(&base.architecture, &smoothing, &base.data, &base.loss, &base.run)
        })
        .collect::<Result<_>>()?;
    let layers: Vec<usize> = (0..base.architecture.depth()).collect();
    let rows = trajs
        .par_windows(2)
        .zip(eps_list.par_windows(2))
        .map(|(t, e)| compare(&t[0], &t[1], &layers, &base.comparison_times, e[0], e[1]))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let velocity = trajs
        .iter()
        .zip(eps_list)
        .flat_map(|(t, &e)| velocity_records(t, e))
        .collect();
    Ok(SweepTable { rows, velocity })
}

/// Architecture with every hidden layer of width `width`.
pub fn with_hidden_width(arch: &Architecture, width: usize) -> Result<Architecture> {
    let mut widths = arch.widths().to_vec();
    let depth = widths.len();
    for w in widths.iter_mut().take(depth.saturating_sub(1)) {
        *w = width;
    }
    Architecture::new(arch.input_dim(), widths, arch.activations().to_vec())
}

/// Runs one trajectory per hidden width (non-decreasing) and compares
/// consecutive cells on the layers whose row dimension does not depend on
/// the width.
pub fn width_sweep(base: &SweepBase, widths: &[usize]) -> Result<SweepTable> {
    if widths.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Precondition("width list must be non-decreasing".into()));
    }
    let archs: Vec<Architecture> = widths
        .iter()
        .map(|&w| with_hidden_width(&base.architecture, w))
        .collect::<Result<_>>()?;
    let trajs: Vec<ParticleTrajectory> = archs
        .par_iter()
        .map(|a| run_trajectory(a, &base.smoothing, &base.data, &base.loss, &base.run))
        .collect::<Result<_>>()?;
    let rows = trajs
        .par_windows(2)
        .zip(archs.par_windows(2))
        .zip(widths.par_windows(2))
        .map(|((t, a), w)| {
            let layers: Vec<usize> = (0..a[0].depth())
                .filter(|&l| a[0].layer_shape(l).1 == a[1].layer_shape(l).1)
                .collect();
            compare(&t[0], &t[1], &layers, &base.comparison_times, w[0] as f64, w[1] as f64)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let velocity = trajs
        .iter()
        .zip(widths)
        .flat_map(|(t, &w)| velocity_records(t, w as f64))
        .collect();
    Ok(SweepTable { rows, velocity })
}
