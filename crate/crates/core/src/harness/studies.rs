//! Parameter sweeps and the two parallelization studies.

use serde::{Deserialize, Serialize};

use crate::bounds::Lemma1Verdict;
use crate::config::ExperimentConfig;
use crate::error::{FedSeaError, Result};
use crate::harness::experiment::{prepare, run_prepared, ExperimentResult};
use crate::harness::fit::{fit_log_law, fit_power_law, FitPoint, FitResult, MIN_FIT_POINTS};
use crate::step_size::StepSizePolicy;

pub const DEFAULT_CELL_CAP: usize = 10_000;

fn default_cell_cap() -> usize {
    DEFAULT_CELL_CAP
}

/// A base config and the axes to sweep. Absent axes keep the base value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clients: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync_periods: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_levels: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size_policies: Option<Vec<StepSizePolicy>>,
    /// Overrides `base.replicates` in every cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(default = "default_cell_cap")]
    pub cell_cap: usize,
}

impl SweepSpec {
    pub fn new(base: ExperimentConfig) -> Self {
        Self {
            base,
            horizons: None,
            clients: None,
            sync_periods: None,
            variance_levels: None,
            amplitudes: None,
            step_size_policies: None,
            replicates: None,
            cell_cap: DEFAULT_CELL_CAP,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn axis_len<T>(axis: &Option<Vec<T>>) -> Result<usize> {
        match axis {
            None => Ok(1),
            Some(v) if v.is_empty() => Err(FedSeaError::Config("sweep axis is empty".into())),
            Some(v) => Ok(v.len()),
        }
    }

    pub fn cell_count(&self) -> Result<usize> {
        let lens = [
            Self::axis_len(&self.horizons)?,
            Self::axis_len(&self.clients)?,
            Self::axis_len(&self.sync_periods)?,
            Self::axis_len(&self.variance_levels)?,
            Self::axis_len(&self.amplitudes)?,
            Self::axis_len(&self.step_size_policies)?,
        ];
        lens.iter()
            .try_fold(1usize, |acc, n| acc.checked_mul(*n))
            .ok_or_else(|| FedSeaError::Config("sweep cell count overflows".into()))
    }

    /// Expands the cross product of all axes, horizons varying fastest.
    pub fn cells(&self) -> Result<Vec<SweepCell>> {
        let count = self.cell_count()?;
        if count > self.cell_cap {
            return Err(FedSeaError::Config(format!(
                "sweep has {count} cells, above the cap of {}",
                self.cell_cap
            )));
        }
        fn values<T: Clone>(axis: &Option<Vec<T>>) -> Vec<Option<T>> {
            match axis {
                None => vec![None],
                Some(v) => v.iter().cloned().map(Some).collect(),
            }
        }
        let mut cells = Vec::with_capacity(count);
        for policy in values(&self.step_size_policies) {
            for amplitude in values(&self.amplitudes) {
                for variance in values(&self.variance_levels) {
                    for tau in values(&self.sync_periods) {
                        for clients in values(&self.clients) {
                            for horizon in values(&self.horizons) {
                                let mut config = self.base.clone();
                                if let Some(h) = horizon {
                                    config.horizon = h;
                                }
                                if let Some(m) = clients {
                                    config.num_clients = m;
                                }
                                if let Some(t) = tau {
                                    config.sync_period = t;
                                }
                                if let Some(v) = variance {
                                    config.adversary_spec =
                                        config.adversary_spec.with_variance(v)?;
                                }
                                if let Some(a) = amplitude {
                                    config.adversary_spec =
                                        config.adversary_spec.with_amplitude(a)?;
                                }
                                if let Some(p) = &policy {
                                    config.step_size_policy = p.clone();
                                }
                                if let Some(r) = self.replicates {
                                    config.replicates = r;
                                }
                                config.validate()?;
                                cells.push(SweepCell {
                                    axes: CellAxes {
                                        horizon: config.horizon,
                                        clients: config.num_clients,
                                        sync_period: config.sync_period,
                                        variance_level: variance,
                                        amplitude,
                                        step_size_policy: policy.clone(),
                                    },
                                    config,
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellAxes {
    pub horizon: usize,
    pub clients: usize,
    pub sync_period: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_size_policy: Option<StepSizePolicy>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub axes: CellAxes,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub axes: CellAxes,
    pub result: ExperimentResult,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub cells: Vec<CellResult>,
    /// Power-law and log-law fits of regret against `T`, present when only
    /// the horizon axis varies and it has enough points.
    pub fits: Vec<FitResult>,
}

/// Runs every cell in order; replicates within a cell run in parallel.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    let cells = spec
        .cells()?
        .into_iter()
        .map(|cell| {
            Ok(CellResult {
                axes: cell.axes,
                result: run_prepared(&prepare(&cell.config)?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let only_horizons = spec.cell_count()? == spec.horizons.as_ref().map_or(1, Vec::len);
    let mut fits = Vec::new();
    if only_horizons && cells.len() >= MIN_FIT_POINTS {
        let points: Vec<FitPoint> = cells
            .iter()
            .map(|c| FitPoint {
                horizon: c.axes.horizon as f64,
                regret: c.result.regret,
                std_error: c.result.regret_std_error,
            })
            .collect();
        if let Ok(fit) = fit_power_law(&points) {
            fits.push(fit);
        }
        if let Ok(fit) = fit_log_law(&points) {
            fits.push(fit);
        }
    }
    Ok(SweepResult {
        spec: spec.clone(),
        cells,
        fits,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub clients: usize,
    pub regret: f64,
    pub std_error: f64,
    /// Regret relative to the first row (`M = 1` when present).
    pub ratio: f64,
    /// `√(M_0/M)`
    pub predicted_ratio: f64,
    /// Whether `σ̄²/M ≥ LK̄²` holds.
    pub in_regime: bool,
    pub lemma1: Lemma1Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupTable {
    pub rows: Vec<SpeedupRow>,
    pub warning: Option<String>,
}

/// Regret as a function of the number of clients.
pub fn speedup_study(base: &ExperimentConfig, clients: &[usize]) -> Result<SpeedupTable> {
    if clients.is_empty() {
        return Err(FedSeaError::Config("client list is empty".into()));
    }
    let mut rows: Vec<SpeedupRow> = Vec::with_capacity(clients.len());
    let mut out_of_regime = Vec::new();
    for &m in clients {
        let mut config = base.clone();
        config.num_clients = m;
        let prepared = prepare(&config)?;
        let c = &prepared.constants;
        let in_regime = c.sigma_bar_sq / m as f64 >= c.smoothness * c.k_bar_sq;
        if !in_regime {
            out_of_regime.push(m);
        }
        let result = run_prepared(&prepared)?;
        let (reference, m0) = rows
            .first()
            .map_or((result.regret, m), |r| (r.regret, r.clients));
        rows.push(SpeedupRow {
            clients: m,
            regret: result.regret,
            std_error: result.regret_std_error,
            ratio: result.regret / reference,
            predicted_ratio: (m0 as f64 / m as f64).sqrt(),
            in_regime,
            lemma1: result.bounds.lemma1.clone(),
        });
    }
    let warning = (!out_of_regime.is_empty()).then(|| {
        format!(
            "variance-dominated regime violated (sigma_bar^2/M < L*K_bar^2) for M in {out_of_regime:?}"
        )
    });
    Ok(SpeedupTable { rows, warning })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauRow {
    pub sync_period: usize,
    pub regret: f64,
    pub std_error: f64,
    /// Number of averaging rounds.
    pub rounds: usize,
    pub is_reference: bool,
    pub lemma1: Lemma1Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauTable {
    pub rows: Vec<TauRow>,
    /// `⌈T^{1/4}/M^{3/4}⌉`
    pub reference_period: usize,
    /// Regret at the reference period over regret at `τ = 1`.
    pub reference_ratio: f64,
}

/// `⌈T^{1/4}/M^{3/4}⌉`, ignoring rounding noise in exact powers.
pub fn reference_sync_period(horizon: usize, clients: usize) -> usize {
    let x = (horizon as f64).powf(0.25) / (clients as f64).powf(0.75);
    ((x - 1e-9).ceil() as usize).max(1)
}

/// Regret as a function of the synchronization period. `τ = 1` and the
/// reference period are always included.
pub fn tau_study(base: &ExperimentConfig, periods: &[usize]) -> Result<TauTable> {
    let reference = reference_sync_period(base.horizon, base.num_clients).min(base.horizon);
    let mut taus: Vec<usize> = periods.to_vec();
    taus.push(1);
    taus.push(reference);
    taus.sort_unstable();
    taus.dedup();
    let mut rows = Vec::with_capacity(taus.len());
    for tau in taus {
        let mut config = base.clone();
        config.sync_period = tau;
        config.sync_phase = config.sync_phase.min(tau - 1);
        let result = run_prepared(&prepare(&config)?)?;
        rows.push(TauRow {
            sync_period: tau,
            regret: result.regret,
            std_error: result.regret_std_error,
            rounds: result.curve.synced.iter().filter(|s| **s).count(),
            is_reference: tau == reference,
            lemma1: result.bounds.lemma1.clone(),
        });
    }
    let at = |tau: usize| rows.iter().find(|r| r.sync_period == tau).map(|r| r.regret);
    let reference_ratio = at(reference).unwrap_or(f64::NAN) / at(1).unwrap_or(f64::NAN);
    Ok(TauTable {
        rows,
        reference_period: reference,
        reference_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::AdversarySpec;
    use crate::losses::LossSpec;
    use crate::vector::Vector;

    fn base() -> ExperimentConfig {
        ExperimentConfig {
            num_clients: 2,
            horizon: 32,
            sync_period: 2,
            dimension: 1,
            step_size_policy: StepSizePolicy::TheoryConvex,
            projection_radius: Default::default(),
            replicates: 2,
            seed: 1,
            loss_spec: LossSpec::MeanQuadratic,
            adversary_spec: AdversarySpec::StaticIid {
                mean: Vector::new(vec![0.5]).unwrap(),
                variance: 1.0,
            },
            initial_point: None,
            initial_distance: None,
            sync_phase: 0,
        }
    }

    #[test]
    fn cell_cap_is_enforced() {
        let mut spec = SweepSpec::new(base());
        spec.horizons = Some(vec![32; 200]);
        spec.clients = Some(vec![1; 60]);
        assert!(spec.cells().is_err());
        spec.cell_cap = 20_000;
        assert_eq!(spec.cells().unwrap().len(), 12_000);
    }

    #[test]
    fn cells_apply_axes() {
        let mut spec = SweepSpec::new(base());
        spec.horizons = Some(vec![16, 32]);
        spec.sync_periods = Some(vec![1, 4]);
        spec.variance_levels = Some(vec![0.5]);
        let cells = spec.cells().unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[1].config.horizon, 32);
        assert_eq!(cells[2].config.sync_period, 4);
        assert!(matches!(
            cells[0].config.adversary_spec,
            AdversarySpec::StaticIid { variance, .. } if variance == 0.5
        ));
    }

    #[test]
    fn reference_period_handles_exact_powers() {
        assert_eq!(reference_sync_period(1 << 14, 4), 4);
        assert_eq!(reference_sync_period(1 << 12, 1), 8);
        assert_eq!(reference_sync_period(100, 16), 1);
    }

    #[test]
    fn speedup_first_row_is_unit() {
        let table = speedup_study(&base(), &[1, 2]).unwrap();
        assert_eq!(table.rows[0].ratio, 1.0);
        assert_eq!(table.rows[0].predicted_ratio, 1.0);
        assert!(table.warning.is_none());
    }

    #[test]
    fn tau_study_includes_baseline() {
        let table = tau_study(&base(), &[4]).unwrap();
        assert_eq!(table.rows[0].sync_period, 1);
        assert_eq!(table.rows[0].rounds, 32);
        assert!(table.rows.iter().any(|r| r.is_reference));
    }
}
