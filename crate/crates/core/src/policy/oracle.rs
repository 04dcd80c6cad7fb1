//! Brute-force reference solver over a (iterations, power) grid.

use super::{feasibility, Link, UtilityParams};
use crate::error::Result;

pub const GRID_POINTS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptimum {
    pub iterations: usize,
    pub power: f64,
    pub utility: f64,
}

/// Iteration counts searched: every integer in range, or `points` evenly
/// spaced ones when the range is wider.
pub fn iteration_grid(j_min: usize, j_max: usize, points: usize) -> Vec<usize> {
    let span = j_max - j_min;
    if span < points {
        (j_min..=j_max).collect()
    } else {
        let mut js: Vec<usize> = (0..points)
            .map(|i| j_min + ((i as f64 / (points - 1) as f64) * span as f64).round() as usize)
            .collect();
        js.dedup();
        js
    }
}

/// Maximize utility over `points` iteration counts times `points` powers.
/// Powers are spaced uniformly in spectral efficiency between P_min and P_max
/// and every grid point is checked against the delay bound.
pub fn grid_optimum(params: &UtilityParams, link: &Link<'_>, points: usize) -> Result<Option<GridOptimum>> {
    let feas = feasibility(link)?;
    let mut best: Option<GridOptimum> = None;
    let zs: Vec<f64> = (0..points)
        .map(|i| feas.z_min + (feas.z_max - feas.z_min) * i as f64 / (points - 1).max(1) as f64)
        .collect();
    for j in iteration_grid(feas.j_min, feas.j_max, points) {
        for &z in &zs {
            if !link.meets_deadline(j, z, 1e-12 * link.delay_bound) {
                continue;
            }
            let u = link.utility_at(params, j as f64, z);
            if best.is_none_or(|b| u > b.utility) {
                best = Some(GridOptimum {
                    iterations: j,
                    power: link.power_of_z(z),
                    utility: u,
                });
            }
        }
    }
    Ok(best)
}
