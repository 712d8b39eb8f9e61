//! Per-run metric series and cross-replication aggregation.
//!
//! A run produces one `MetricsRow` per decision time: selection counts, the
//! conservative FSR estimate, and — when ground truth is available — the
//! false selection proportion (wrong selections over selections) and true
//! selection proportion (correct decisions over arrived tasks).
//!
//! Replications aggregate per decision-time index, truncated to the shortest
//! common prefix: FSR/TSR are means of the per-replication proportions with
//! Monte Carlo standard errors, while the marginal FSR is a ratio of means
//! (mean false count over mean selection count) with a delta-method SE.

use crate::engine::DecisionRecord;
use crate::policy::Decision;
use crate::world::{Arm, DecisionGrid, Time};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("ground truth missing for task {0}")]
    MissingTruth(usize),
    #[error("no replications to aggregate")]
    EmptyAggregate,
    #[error("replication {0} has no usable metric rows")]
    EmptySeries(usize),
    #[error("fsp/tsp unavailable (run had incomplete ground truth)")]
    MissingProportions,
}

/// Metrics at one decision time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub time: Time,
    pub n_active: usize,
    pub n_arrived: usize,
    pub n_selected: usize,
    pub n_selected_a: usize,
    pub n_selected_b: usize,
    pub n_dropped: usize,
    pub n_false_selected: Option<usize>,
    pub fsr_hat: f64,
    pub fsp: Option<f64>,
    pub tsp: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSeries {
    pub rows: Vec<MetricsRow>,
}

impl MetricsSeries {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Recompute the metric series from a decision log and ground truth. The
/// FSR estimate is rebuilt from per-task running level maxima in the log, so
/// this doubles as an independent check on the engine's inline bookkeeping.
pub fn compute_metrics(
    log: &[DecisionRecord],
    truths: &[Arm],
    grid: &DecisionGrid,
) -> Result<MetricsSeries, MetricsError> {
    let n_tasks = grid.n_tasks();
    if truths.len() < n_tasks {
        return Err(MetricsError::MissingTruth(truths.len() + 1));
    }
    let mut decided: Vec<Option<Decision>> = vec![None; n_tasks];
    let mut level_max: Vec<(f64, f64)> = vec![(0.0, 0.0); n_tasks];
    let mut series = MetricsSeries::default();
    let mut cursor = 0usize;

    for (step, &t) in grid.times().iter().enumerate() {
        let mut n_active = 0usize;
        while cursor < log.len() && log[cursor].step == step {
            let row = &log[cursor];
            let idx = row.task - 1;
            n_active += 1;
            level_max[idx].0 = level_max[idx].0.max(row.level_a);
            level_max[idx].1 = level_max[idx].1.max(row.level_b);
            if row.decision.is_absorbing() {
                decided[idx] = Some(row.decision);
            }
            cursor += 1;
        }

        let n_arrived = grid.arrivals().iter().filter(|&&a| a <= t).count();
        let mut n_selected = 0;
        let mut n_selected_a = 0;
        let mut n_selected_b = 0;
        let mut n_dropped = 0;
        let mut n_false = 0;
        let mut n_correct = 0;
        let mut fsr_hat_num = 0.0;
        for j in 0..n_tasks {
            if grid.arrivals()[j] > t {
                break;
            }
            fsr_hat_num += level_max[j].0.max(level_max[j].1);
            match decided[j] {
                Some(Decision::A) => {
                    n_selected += 1;
                    n_selected_a += 1;
                    if truths[j] == Arm::A {
                        n_correct += 1;
                    } else {
                        n_false += 1;
                    }
                }
                Some(Decision::B) => {
                    n_selected += 1;
                    n_selected_b += 1;
                    if truths[j] == Arm::B {
                        n_correct += 1;
                    } else {
                        n_false += 1;
                    }
                }
                Some(Decision::D) => n_dropped += 1,
                _ => {}
            }
        }

        series.rows.push(MetricsRow {
            time: t,
            n_active,
            n_arrived,
            n_selected,
            n_selected_a,
            n_selected_b,
            n_dropped,
            n_false_selected: Some(n_false),
            fsr_hat: fsr_hat_num / n_selected.max(1) as f64,
            fsp: Some(n_false as f64 / n_selected.max(1) as f64),
            tsp: Some(n_correct as f64 / n_arrived.max(1) as f64),
        });
    }
    Ok(series)
}

/// Aggregated estimates at one decision-time index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    /// 1-based decision-time index.
    pub index: usize,
    pub fsr: f64,
    pub fsr_se: f64,
    pub tsr: f64,
    pub tsr_se: f64,
    pub mfsr: f64,
    pub mfsr_se: f64,
    pub mean_selected: f64,
    pub mean_fsr_hat: f64,
}

/// Replication-level summary, truncated to the shortest common prefix of
/// decision-time indices (and optionally capped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_reps: usize,
    /// Single-replication aggregates have no meaningful standard errors.
    pub degenerate: bool,
    pub points: Vec<AggregatePoint>,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Aggregate per-replication series. `max_points` caps the number of
/// decision-time indices reported.
pub fn aggregate(series: &[MetricsSeries], max_points: usize) -> Result<Aggregate, MetricsError> {
    if series.is_empty() {
        return Err(MetricsError::EmptyAggregate);
    }
    let min_len = series.iter().map(MetricsSeries::len).min().unwrap();
    for (i, s) in series.iter().enumerate() {
        if s.is_empty() {
            return Err(MetricsError::EmptySeries(i));
        }
    }
    let len = min_len.min(max_points);
    let n_reps = series.len();
    let mut points = Vec::with_capacity(len);
    for i in 0..len {
        let mut fsps = Vec::with_capacity(n_reps);
        let mut tsps = Vec::with_capacity(n_reps);
        let mut falses = Vec::with_capacity(n_reps);
        let mut sel_or_one = Vec::with_capacity(n_reps);
        let mut selected = Vec::with_capacity(n_reps);
        let mut fsr_hats = Vec::with_capacity(n_reps);
        for s in series {
            let row = &s.rows[i];
            fsps.push(row.fsp.ok_or(MetricsError::MissingProportions)?);
            tsps.push(row.tsp.ok_or(MetricsError::MissingProportions)?);
            falses.push(
                row.n_false_selected
                    .ok_or(MetricsError::MissingProportions)? as f64,
            );
            sel_or_one.push(row.n_selected.max(1) as f64);
            selected.push(row.n_selected as f64);
            fsr_hats.push(row.fsr_hat);
        }
        let (fsr, fsr_se) = mean_and_se(&fsps);
        let (tsr, tsr_se) = mean_and_se(&tsps);
        let (mean_selected, _) = mean_and_se(&selected);
        let (mean_fsr_hat, _) = mean_and_se(&fsr_hats);

        // Ratio-of-means estimator with delta-method standard error.
        let v_bar = falses.iter().sum::<f64>() / n_reps as f64;
        let w_bar = sel_or_one.iter().sum::<f64>() / n_reps as f64;
        let mfsr = v_bar / w_bar;
        let mfsr_se = if n_reps < 2 {
            0.0
        } else {
            let resid_var = falses
                .iter()
                .zip(&sel_or_one)
                .map(|(v, w)| (v - mfsr * w).powi(2))
                .sum::<f64>()
                / (n_reps as f64 - 1.0);
            (resid_var / n_reps as f64).sqrt() / w_bar
        };

        points.push(AggregatePoint {
            index: i + 1,
            fsr,
            fsr_se,
            tsr,
            tsr_se,
            mfsr,
            mfsr_se,
            mean_selected,
            mean_fsr_hat,
        });
    }
    Ok(Aggregate {
        n_reps,
        degenerate: n_reps < 2,
        points,
    })
}
