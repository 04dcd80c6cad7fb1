//! Experiment driver: config in, CSV/JSON out.
//!
//! Output files in the chosen directory:
//!
//! | file | contents |
//! |------|----------|
//! | `rounds.csv` | one row per device per round per scheme |
//! | `summary.json` | [`Summary`] |
//! | `fig1_loss_<scheme>.csv` | `round,average_loss` |
//! | `fig2_energy_<scheme>.csv` | `device,distance_m,normalized_path_loss,mean_energy_J` |
//!
//! `rounds.csv` columns: `round, device, scheme, loss, deviation, sigma,
//! e_compute_J, e_transmit_J, e_total_J, j, p_W, rate_bps, phi, utility,
//! skipped`. Skipped rows carry zero energy, `j = 0`, `p_W = 0`,
//! `rate_bps = 0` and `phi = 1`. Floats are written in shortest round-trip
//! form.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::Energy;
use crate::config::load_config;
use crate::engine::{run_simulation, RoundRecord, Scheme, SchemeKind, SimulationConfig};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::policy::PolicyDecision;
use crate::summary::{summarize, Summary};

pub const ROUNDS_CSV: &str = "rounds.csv";
pub const SUMMARY_JSON: &str = "summary.json";

pub const CSV_HEADER: [&str; 15] = [
    "round",
    "device",
    "scheme",
    "loss",
    "deviation",
    "sigma",
    "e_compute_J",
    "e_transmit_J",
    "e_total_J",
    "j",
    "p_W",
    "rate_bps",
    "phi",
    "utility",
    "skipped",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Emit {
    RoundCsv,
    SummaryJson,
    FigureData,
}

impl Emit {
    pub fn all() -> BTreeSet<Emit> {
        [Emit::RoundCsv, Emit::SummaryJson, Emit::FigureData].into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub config_path: PathBuf,
    pub output_dir: PathBuf,
    pub emit: BTreeSet<Emit>,
    pub seed: Option<u64>,
    pub scheme: Option<Scheme>,
    pub rounds: Option<usize>,
    pub execution: Option<Execution>,
}

impl ExperimentSpec {
    pub fn new(config_path: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentSpec {
            config_path: config_path.into(),
            output_dir: output_dir.into(),
            emit: Emit::all(),
            seed: None,
            scheme: None,
            rounds: None,
            execution: None,
        }
    }

    /// The loaded config with command-line overrides applied.
    pub fn config(&self) -> Result<SimulationConfig> {
        let mut c = load_config(&self.config_path)?;
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(s) = self.scheme {
            c.scheme = s;
        }
        if let Some(m) = self.rounds {
            c.rounds = m;
        }
        if let Some(e) = self.execution {
            c.execution = e;
        }
        c.validate()?;
        Ok(c)
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

pub fn record_row(r: &RoundRecord) -> [String; 15] {
    let (j, p, rate, phi) = match r.decision {
        Some(d) => (d.iterations, d.power, d.rate, d.accuracy),
        None => (0, 0.0, 0.0, 1.0),
    };
    [
        r.round.to_string(),
        r.device.to_string(),
        r.scheme.as_str().to_string(),
        num(r.loss),
        num(r.deviation),
        num(r.sigma),
        num(r.energy.compute),
        num(r.energy.transmit),
        num(r.energy.total),
        j.to_string(),
        num(p),
        num(rate),
        num(phi),
        num(r.utility),
        r.skipped().to_string(),
    ]
}

pub fn write_records_csv(records: &[RoundRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(record_row(r))?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize, line: u64) -> Result<T> {
    let raw = row.get(i).ok_or_else(|| Error::Parse(format!("line {line}: missing `{}`", CSV_HEADER[i])))?;
    raw.parse()
        .map_err(|_| Error::Parse(format!("line {line}: bad `{}` value `{raw}`", CSV_HEADER[i])))
}

/// Read back a `rounds.csv`. The spectral efficiency is not stored, so
/// decisions come back with `z = NaN`.
pub fn read_records_csv(path: &Path) -> Result<Vec<RoundRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Parse(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i as u64 + 2;
        let skipped: bool = field(&row, 14, line)?;
        let energy = Energy {
            compute: field(&row, 6, line)?,
            transmit: field(&row, 7, line)?,
            total: field(&row, 8, line)?,
        };
        let decision = if skipped {
            None
        } else {
            Some(PolicyDecision {
                iterations: field(&row, 9, line)?,
                power: field(&row, 10, line)?,
                rate: field(&row, 11, line)?,
                accuracy: field(&row, 12, line)?,
                z: f64::NAN,
            })
        };
        out.push(RoundRecord {
            round: field(&row, 0, line)?,
            device: field(&row, 1, line)?,
            scheme: field::<String>(&row, 2, line)?.parse()?,
            loss: field(&row, 3, line)?,
            deviation: field(&row, 4, line)?,
            sigma: field(&row, 5, line)?,
            energy,
            decision,
            utility: field(&row, 13, line)?,
        });
    }
    Ok(out)
}

pub fn fig1_path(dir: &Path, scheme: SchemeKind) -> PathBuf {
    dir.join(format!("fig1_loss_{}.csv", scheme.as_str()))
}

pub fn fig2_path(dir: &Path, scheme: SchemeKind) -> PathBuf {
    dir.join(format!("fig2_energy_{}.csv", scheme.as_str()))
}

/// Write the loss-per-round and energy-versus-path-loss series.
pub fn write_figure_data(summary: &Summary, config: &SimulationConfig, dir: &Path) -> Result<()> {
    let distances = config.distances();
    for s in &summary.schemes {
        let mut w = csv::Writer::from_path(fig1_path(dir, s.scheme))?;
        w.write_record(["round", "average_loss"])?;
        for (m, l) in &s.loss_by_round {
            w.write_record([m.to_string(), num(*l)])?;
        }
        w.flush()?;

        let mut rows: Vec<(f64, usize, f64, f64)> = s
            .per_device
            .iter()
            .map(|d| {
                let r = distances[d.device];
                (config.normalized_path_loss(r), d.device, r, d.mean_energy)
            })
            .collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut w = csv::Writer::from_path(fig2_path(dir, s.scheme))?;
        w.write_record(["device", "distance_m", "normalized_path_loss", "mean_energy_J"])?;
        for (npl, k, r, e) in rows {
            w.write_record([k.to_string(), num(r), num(npl), num(e)])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: SimulationConfig,
    pub records: Vec<RoundRecord>,
    pub summary: Summary,
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    if spec.emit.is_empty() {
        return Err(Error::Config {
            field: "emit".into(),
            reason: "nothing to emit".into(),
        });
    }
    let config = spec.config()?;
    let records = run_simulation(&config)?;
    let summary = summarize(&records)?;
    fs::create_dir_all(&spec.output_dir)?;
    if spec.emit.contains(&Emit::RoundCsv) {
        write_records_csv(&records, &spec.output_dir.join(ROUNDS_CSV))?;
    }
    if spec.emit.contains(&Emit::SummaryJson) {
        let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(spec.output_dir.join(SUMMARY_JSON), json + "\n")?;
    }
    if spec.emit.contains(&Emit::FigureData) {
        write_figure_data(&summary, &config, &spec.output_dir)?;
    }
    Ok(ExperimentOutput {
        config,
        records,
        summary,
    })
}
