//! CSV traces, JSON result documents and SVG plots.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! results always produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::BoundReport;
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::harness::experiment::ExperimentResult;
use crate::harness::fit::FitResult;
use crate::harness::studies::{CellAxes, SpeedupTable, SweepResult, SweepSpec, TauTable};
use crate::harness::svg::{Plot, Series};
use crate::oracles::ComparatorMethod;
use crate::vector::Vector;

pub const TRACE_HEADER: &str = "t,regret_cum,V_t,zeta_sq,K_sq,sigma_sq,eta_t,sync_flag";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub zeta_bar_sq: f64,
    pub k_bar_sq: f64,
    pub sigma_bar_sq: f64,
    pub zeta_max_sq: f64,
    pub k_max_sq: f64,
    pub sigma_max_sq: f64,
    pub zeta_exact: bool,
    pub zeta_note: String,
}

/// The machine-readable summary of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub config: ExperimentConfig,
    pub config_hash: String,
    /// Replicate mean of `R_T`.
    pub regret: f64,
    pub regret_std_error: f64,
    pub best_in_hindsight: Vector,
    pub comparator_method: ComparatorMethod,
    pub comparator_residual: f64,
    pub heterogeneity: ProfileSummary,
    pub first_step_size: f64,
    pub last_step_size: f64,
    pub bounds: BoundReport,
    pub fits: Vec<FitResult>,
}

impl ResultDocument {
    pub fn new(result: &ExperimentResult, fits: Vec<FitResult>) -> Self {
        let p = &result.profile;
        Self {
            config: result.config.clone(),
            config_hash: result.config_hash.clone(),
            regret: result.regret,
            regret_std_error: result.regret_std_error,
            best_in_hindsight: result.best_in_hindsight.clone(),
            comparator_method: result.comparator_method,
            comparator_residual: result.comparator_residual,
            heterogeneity: ProfileSummary {
                zeta_bar_sq: p.zeta_bar_sq,
                k_bar_sq: p.k_bar_sq,
                sigma_bar_sq: p.sigma_bar_sq,
                zeta_max_sq: p.zeta_max_sq,
                k_max_sq: p.k_max_sq,
                sigma_max_sq: p.sigma_max_sq,
                zeta_exact: p.zeta_exact,
                zeta_note: result.zeta_note.clone(),
            },
            first_step_size: result.curve.eta[0],
            last_step_size: *result.curve.eta.last().unwrap_or(&f64::NAN),
            bounds: result.bounds.clone(),
            fits,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// One row per step: cumulative regret, mean `V_t`, `ζ_t²`, `K_t²`, `σ_t²`,
/// `η_t` and whether averaging followed the step.
pub fn trace_csv(result: &ExperimentResult) -> String {
    let c = &result.curve;
    let p = &result.profile;
    let mut out = String::with_capacity(64 * c.cumulative.len());
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for i in 0..c.cumulative.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            i + 1,
            c.cumulative[i],
            c.consensus[i],
            p.zeta_sq[i],
            p.k_sq[i],
            p.sigma_sq[i],
            c.eta[i],
            u8::from(c.synced[i])
        );
    }
    out
}

fn write(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, contents)?;
    written.push(path);
    Ok(())
}

fn regret_plot(result: &ExperimentResult) -> Plot {
    let c = &result.curve;
    Plot {
        title: format!(
            "Cumulative regret (M = {}, tau = {})",
            result.config.num_clients, result.config.sync_period
        ),
        x_label: "t".into(),
        y_label: "E[R_t]".into(),
        log_x: false,
        log_y: false,
        series: vec![Series {
            label: "regret".into(),
            points: c
                .cumulative
                .iter()
                .enumerate()
                .map(|(i, r)| ((i + 1) as f64, *r))
                .collect(),
        }],
    }
}

/// Writes `trace.csv`, `result.json` and optionally `regret.svg` into `dir`.
pub fn emit_outputs(
    result: &ExperimentResult,
    fits: &[FitResult],
    dir: &Path,
    plots: bool,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    write(dir.join("trace.csv"), &trace_csv(result), &mut written)?;
    let doc = ResultDocument::new(result, fits.to_vec());
    write(
        dir.join("result.json"),
        &(serde_json::to_string_pretty(&doc)? + "\n"),
        &mut written,
    )?;
    if plots {
        write(
            dir.join("regret.svg"),
            &regret_plot(result).render(),
            &mut written,
        )?;
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCellSummary {
    pub directory: String,
    pub axes: CellAxes,
    pub config_hash: String,
    pub regret: f64,
    pub regret_std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepDocument {
    pub spec: SweepSpec,
    pub cells: Vec<SweepCellSummary>,
    pub fits: Vec<FitResult>,
}

/// Writes one directory per cell plus `sweep.json`, `sweep.csv` and
/// optionally `sweep.svg`.
pub fn emit_sweep(sweep: &SweepResult, dir: &Path, plots: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut summaries = Vec::with_capacity(sweep.cells.len());
    let mut table = String::from("cell,horizon,clients,sync_period,regret,regret_std_error\n");
    for (i, cell) in sweep.cells.iter().enumerate() {
        let name = format!("cell_{i:04}");
        written.extend(emit_outputs(&cell.result, &[], &dir.join(&name), plots)?);
        let _ = writeln!(
            table,
            "{name},{},{},{},{},{}",
            cell.axes.horizon,
            cell.axes.clients,
            cell.axes.sync_period,
            cell.result.regret,
            cell.result.regret_std_error
        );
        summaries.push(SweepCellSummary {
            directory: name,
            axes: cell.axes.clone(),
            config_hash: cell.result.config_hash.clone(),
            regret: cell.result.regret,
            regret_std_error: cell.result.regret_std_error,
        });
    }
    let doc = SweepDocument {
        spec: sweep.spec.clone(),
        cells: summaries,
        fits: sweep.fits.clone(),
    };
    write(
        dir.join("sweep.json"),
        &(serde_json::to_string_pretty(&doc)? + "\n"),
        &mut written,
    )?;
    write(dir.join("sweep.csv"), &table, &mut written)?;
    if plots {
        let mut series = vec![Series {
            label: "regret".into(),
            points: sweep
                .cells
                .iter()
                .map(|c| (c.axes.horizon as f64, c.result.regret))
                .collect(),
        }];
        for fit in &sweep.fits {
            series.push(Series {
                label: format!("{:?} fit", fit.model),
                points: fit
                    .points
                    .iter()
                    .map(|p| (p.horizon, fit.predict(p.horizon)))
                    .collect(),
            });
        }
        let plot = Plot {
            title: "Final regret by cell".into(),
            x_label: "T".into(),
            y_label: "E[R_T]".into(),
            log_x: true,
            log_y: true,
            series,
        };
        write(dir.join("sweep.svg"), &plot.render(), &mut written)?;
    }
    Ok(written)
}

pub fn emit_speedup(table: &SpeedupTable, dir: &Path, plots: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    write(
        dir.join("speedup.json"),
        &(serde_json::to_string_pretty(table)? + "\n"),
        &mut written,
    )?;
    let mut csv = String::from("clients,regret,regret_std_error,ratio,predicted_ratio,in_regime\n");
    for r in &table.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.clients, r.regret, r.std_error, r.ratio, r.predicted_ratio, r.in_regime
        );
    }
    write(dir.join("speedup.csv"), &csv, &mut written)?;
    if plots {
        let plot = Plot {
            title: "Regret ratio vs clients".into(),
            x_label: "M".into(),
            y_label: "regret / regret(first)".into(),
            log_x: true,
            log_y: true,
            series: vec![
                Series {
                    label: "measured".into(),
                    points: table
                        .rows
                        .iter()
                        .map(|r| (r.clients as f64, r.ratio))
                        .collect(),
                },
                Series {
                    label: "1/sqrt(M)".into(),
                    points: table
                        .rows
                        .iter()
                        .map(|r| (r.clients as f64, r.predicted_ratio))
                        .collect(),
                },
            ],
        };
        write(dir.join("speedup.svg"), &plot.render(), &mut written)?;
    }
    Ok(written)
}

pub fn emit_tau(table: &TauTable, dir: &Path, plots: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    write(
        dir.join("tau.json"),
        &(serde_json::to_string_pretty(table)? + "\n"),
        &mut written,
    )?;
    let mut csv = String::from("sync_period,regret,regret_std_error,rounds,is_reference\n");
    for r in &table.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.sync_period, r.regret, r.std_error, r.rounds, r.is_reference
        );
    }
    write(dir.join("tau.csv"), &csv, &mut written)?;
    if plots {
        let plot = Plot {
            title: format!(
                "Regret vs sync period (reference {})",
                table.reference_period
            ),
            x_label: "tau".into(),
            y_label: "E[R_T]".into(),
            log_x: true,
            log_y: false,
            series: vec![Series {
                label: "regret".into(),
                points: table
                    .rows
                    .iter()
                    .map(|r| (r.sync_period as f64, r.regret))
                    .collect(),
            }],
        };
        write(dir.join("tau.svg"), &plot.render(), &mut written)?;
    }
    Ok(written)
}
