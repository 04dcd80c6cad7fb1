//! Run-level statistics and plot series.
//!
//! Spreads are population standard deviations over the fixed device set.
//! Skipped device-rounds are left out of every mean.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::engine::{RoundRecord, SchemeKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSummary {
    pub device: usize,
    pub rounds_participated: usize,
    /// J.
    pub mean_energy: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: SchemeKind,
    pub rounds: usize,
    pub devices: usize,
    pub skipped: usize,
    /// Average loss over the last tenth of the rounds.
    pub final_average_loss: f64,
    pub mean_loss: f64,
    /// Across-device loss spread, averaged over rounds.
    pub loss_std: f64,
    /// Mean over devices of each device's mean round energy, J.
    pub mean_energy: f64,
    /// Spread of the devices' mean round energies, J.
    pub energy_std: f64,
    pub mean_compute_energy: f64,
    pub mean_transmit_energy: f64,
    pub mean_iterations: f64,
    pub mean_power: f64,
    pub per_device: Vec<DeviceSummary>,
    /// (round, average loss) for rounds with at least one participant.
    pub loss_by_round: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schemes: Vec<SchemeSummary>,
    /// Proposed relative to benchmark; present when both ran.
    pub energy_std_reduction_percent: Option<f64>,
    pub mean_energy_reduction_percent: Option<f64>,
    pub final_loss_increase_percent: Option<f64>,
}

impl Summary {
    pub fn scheme(&self, kind: SchemeKind) -> Option<&SchemeSummary> {
        self.schemes.iter().find(|s| s.scheme == kind)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population standard deviation; zero for a single value.
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn summarize_scheme(scheme: SchemeKind, recs: &[&RoundRecord]) -> SchemeSummary {
    let mut by_round: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut by_device: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut devices = std::collections::BTreeSet::new();
    let mut rounds = std::collections::BTreeSet::new();
    let (mut e_cp, mut e_tx, mut js, mut ps) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut skipped = 0;
    for r in recs {
        devices.insert(r.device);
        rounds.insert(r.round);
        let Some(d) = r.decision else {
            skipped += 1;
            continue;
        };
        by_round.entry(r.round).or_default().push(r.loss);
        let entry = by_device.entry(r.device).or_default();
        entry.0.push(r.energy.total);
        entry.1.push(r.loss);
        e_cp.push(r.energy.compute);
        e_tx.push(r.energy.transmit);
        js.push(d.iterations as f64);
        ps.push(d.power);
    }
    let loss_by_round: Vec<(usize, f64)> = by_round.iter().map(|(&m, v)| (m, mean(v))).collect();
    let tail = loss_by_round.len().div_ceil(10).max(1);
    let tail_losses: Vec<f64> = loss_by_round.iter().rev().take(tail).map(|x| x.1).collect();
    let round_stds: Vec<f64> = by_round.values().map(|v| population_std(v)).collect();
    let all_losses: Vec<f64> = by_round.values().flatten().copied().collect();
    let per_device: Vec<DeviceSummary> = devices
        .iter()
        .map(|&k| {
            let (e, l) = by_device.get(&k).cloned().unwrap_or_default();
            DeviceSummary {
                device: k,
                rounds_participated: e.len(),
                mean_energy: mean(&e),
                mean_loss: mean(&l),
            }
        })
        .collect();
    let device_energy: Vec<f64> = per_device
        .iter()
        .filter(|d| d.rounds_participated > 0)
        .map(|d| d.mean_energy)
        .collect();
    SchemeSummary {
        scheme,
        rounds: rounds.len(),
        devices: devices.len(),
        skipped,
        final_average_loss: mean(&tail_losses),
        mean_loss: mean(&all_losses),
        loss_std: mean(&round_stds),
        mean_energy: mean(&device_energy),
        energy_std: population_std(&device_energy),
        mean_compute_energy: mean(&e_cp),
        mean_transmit_energy: mean(&e_tx),
        mean_iterations: mean(&js),
        mean_power: mean(&ps),
        per_device,
        loss_by_round,
    }
}

pub fn summarize(records: &[RoundRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::Empty("no records to summarize"));
    }
    let mut groups: BTreeMap<SchemeKind, Vec<&RoundRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.scheme).or_default().push(r);
    }
    let schemes: Vec<SchemeSummary> = groups.into_iter().map(|(k, v)| summarize_scheme(k, &v)).collect();
    let find = |k| schemes.iter().find(|s| s.scheme == k);
    let (mut std_red, mut mean_red, mut loss_inc) = (None, None, None);
    if let (Some(p), Some(b)) = (find(SchemeKind::Proposed), find(SchemeKind::Benchmark)) {
        std_red = Some(100.0 * (1.0 - p.energy_std / b.energy_std));
        mean_red = Some(100.0 * (1.0 - p.mean_energy / b.mean_energy));
        loss_inc = Some(100.0 * (p.final_average_loss / b.final_average_loss - 1.0));
    }
    Ok(Summary {
        schemes,
        energy_std_reduction_percent: std_red,
        mean_energy_reduction_percent: mean_red,
        final_loss_increase_percent: loss_inc,
    })
}

/// Plain-text table of the headline numbers.
pub fn print_summary(summary: &Summary) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<28}", "");
    for s in &summary.schemes {
        let _ = write!(out, "{:>14}", s.scheme.as_str());
    }
    out.push('\n');
    type Row = (&'static str, fn(&SchemeSummary) -> String);
    let rows: [Row; 9] = [
        ("final average loss", |s| format!("{:.4}", s.final_average_loss)),
        ("mean loss", |s| format!("{:.4}", s.mean_loss)),
        ("loss std across devices", |s| format!("{:.3}", s.loss_std)),
        ("mean energy (mJ)", |s| format!("{:.2}", 1e3 * s.mean_energy)),
        ("energy std (mJ)", |s| format!("{:.2}", 1e3 * s.energy_std)),
        ("mean compute energy (mJ)", |s| format!("{:.2}", 1e3 * s.mean_compute_energy)),
        ("mean transmit energy (mJ)", |s| format!("{:.2}", 1e3 * s.mean_transmit_energy)),
        ("mean iterations", |s| format!("{:.1}", s.mean_iterations)),
        ("skipped device-rounds", |s| s.skipped.to_string()),
    ];
    for (label, f) in rows {
        let _ = write!(out, "{label:<28}");
        for s in &summary.schemes {
            let _ = write!(out, "{:>14}", f(s));
        }
        out.push('\n');
    }
    if let (Some(a), Some(b), Some(c)) = (
        summary.energy_std_reduction_percent,
        summary.mean_energy_reduction_percent,
        summary.final_loss_increase_percent,
    ) {
        let _ = writeln!(out, "energy std reduction        {a:>13.2}%");
        let _ = writeln!(out, "mean energy reduction       {b:>13.2}%");
        let _ = writeln!(out, "final loss increase         {c:>13.2}%");
    }
    out
}
