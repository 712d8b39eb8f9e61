//! Engine: drives the doubly-sequential inference loop over the decision
//! grid. At each decision time it refreshes the active set, absorbs new
//! observations into each task's evidence, then sweeps the active tasks in
//! ascending index order — computing test levels from the ledger as it goes,
//! so a selection made earlier in the sweep immediately raises the levels of
//! later tasks at the same decision time — and freezes any task that leaves
//! the continue state.
//!
//! The sweep order is load-bearing: levels for task `j` may only depend on
//! tasks with smaller index, and the ascending sweep is what lets concurrent
//! selections at one decision time fund each other without violating that.
//!
//! In the valid modes the conservative FSR estimate is checked against the
//! target after every step; exceeding it is a hard error, not a warning. The
//! adversarial modes exist to demonstrate exactly that failure, so the check
//! is skipped there and the estimate is only recorded.

use crate::evidence::{EvidenceKind, EvidenceState};
use crate::investing::{
    fsr_hat, fsr_hat_arm, levels_arm_specific, levels_classical, levels_method1,
    levels_savaspecial, levels_symmetric, wealth_greedy_credit, wealth_greedy_step, LevelRecord,
    SelectionLedger, WealthState,
};
use crate::metrics::{MetricsRow, MetricsSeries};
use crate::policy::{decide, decide_classical, Decision};
use crate::world::{Arm, DecisionGrid, TaskData, TaskId, Time, Tolerance, World};
use std::collections::BTreeMap;
use thiserror::Error;

/// Numerical slack for the FSR-estimate invariant; the inequality itself is
/// exact, this only absorbs float accumulation in the numerator sum.
pub const FSR_HAT_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("step time {got} does not match the next grid time {expected}")]
    OutOfOrderStep { got: Time, expected: Time },
    #[error("no more grid times to process")]
    GridExhausted,
    #[error("observation supplied for frozen task {0}")]
    ObservationForFrozenTask(TaskId),
    #[error("observation supplied for task {0} before its arrival")]
    ObservationBeforeArrival(TaskId),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("scripted p-value table for task {task} has no entry for step {step}")]
    ScriptedExhausted { task: TaskId, step: usize },
    #[error("world supplies observation streams but no evidence kind was given")]
    MissingEvidenceKind,
    #[error("FSR estimate {value} exceeded the target {alpha} at time {time}")]
    FsrHatExceeded { time: Time, value: f64, alpha: f64 },
    #[error("mode parameter out of range: {0}")]
    BadMode(String),
    #[error(
        "the time-varying slot rule requires a unit-spaced decision grid (spacing breaks at index {0})"
    )]
    UnsupportedRegime(usize),
    #[error("evidence error on task {task}: {source}")]
    Evidence {
        task: TaskId,
        source: crate::evidence::EvidenceError,
    },
    #[error("ledger error: {0}")]
    Ledger(#[from] crate::investing::InvestingError),
}

/// Which alpha-investing rule the engine runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EngineMode {
    /// The standard symmetric window rule.
    Symmetric { alpha: f64, k: usize },
    /// One-direction rule with A as the only selectable arm.
    Classical { alpha: f64, k: usize },
    /// Separate budgets and windows per direction.
    ArmSpecific {
        alpha_a: f64,
        alpha_b: f64,
        k_a: usize,
        k_b: usize,
    },
    /// Geometric static-slot rule (valid).
    SavaSpecial { alpha: f64, k: usize },
    /// Time-varying slot rule; violates the running-maximum budget.
    AdversarialMethod1 { alpha: f64, k: usize },
    /// Greedy wealth rule; peeks at p-values when funding levels.
    AdversarialMethod2 { alpha: f64 },
}

impl EngineMode {
    /// Whether this mode carries the FSR-estimate guarantee.
    pub fn is_valid_rule(&self) -> bool {
        !matches!(
            self,
            EngineMode::AdversarialMethod1 { .. } | EngineMode::AdversarialMethod2 { .. }
        )
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let check_alpha = |a: f64| -> Result<(), EngineError> {
            if a > 0.0 && a < 1.0 {
                Ok(())
            } else {
                Err(EngineError::BadMode(format!("alpha {a} outside (0,1)")))
            }
        };
        let check_k = |k: usize| -> Result<(), EngineError> {
            if k >= 1 {
                Ok(())
            } else {
                Err(EngineError::BadMode("k must be >= 1".into()))
            }
        };
        match *self {
            EngineMode::Symmetric { alpha, k }
            | EngineMode::Classical { alpha, k }
            | EngineMode::SavaSpecial { alpha, k }
            | EngineMode::AdversarialMethod1 { alpha, k } => {
                check_alpha(alpha)?;
                check_k(k)
            }
            EngineMode::ArmSpecific {
                alpha_a,
                alpha_b,
                k_a,
                k_b,
            } => {
                check_alpha(alpha_a)?;
                check_alpha(alpha_b)?;
                check_k(k_a)?;
                check_k(k_b)
            }
            EngineMode::AdversarialMethod2 { alpha } => check_alpha(alpha),
        }
    }
}

/// Where a task's directional p-values come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PvalueSource {
    /// Incrementally updated e-processes over an observation stream.
    EProcess {
        state: EvidenceState,
        kind: EvidenceKind,
    },
    /// Constant p-values (counterexample worlds).
    Static { p_a: f64, p_b: f64 },
    /// A table indexed by grid step; used by tests to script exact traces.
    Scripted { table: Vec<(f64, f64)> },
}

/// Everything the engine tracks for one task.
#[derive(Debug, Clone)]
pub struct TaskState {
    pub id: TaskId,
    pub arrival: Time,
    pub tolerance: Tolerance,
    pub decision: Decision,
    pub source: PvalueSource,
    /// Most recent directional p-values.
    pub pvalues: (f64, f64),
    pub levels: LevelRecord,
    pub truth: Option<Arm>,
    /// P-values from the previous decision time, when the task was active
    /// there (the greedy wealth rule funds against these).
    prev_pvalues: Option<(f64, f64)>,
    first_eval_time: Option<Time>,
    last_eval_step: Option<usize>,
    pub decided_step: Option<usize>,
}

/// Inputs to build one task.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub tolerance: Tolerance,
    pub source: PvalueSource,
    pub truth: Option<Arm>,
}

/// One row of the decision log: a task evaluated at a decision time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionRecord {
    pub step: usize,
    pub time: Time,
    pub task: TaskId,
    pub decision: Decision,
    pub p_a: f64,
    pub p_b: f64,
    pub level_a: f64,
    pub level_b: f64,
}

/// Full run result: decision log, per-time metrics, final ledger.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: Vec<DecisionRecord>,
    pub series: MetricsSeries,
    pub ledger: SelectionLedger,
}

pub struct Engine {
    mode: EngineMode,
    grid: DecisionGrid,
    tasks: Vec<TaskState>,
    ledger: SelectionLedger,
    next_step: usize,
    wealth: WealthState,
    prev_selected: usize,
    n_false_selected: usize,
    n_correct_selected: usize,
    truths_complete: bool,
    log: Vec<DecisionRecord>,
    series: MetricsSeries,
}

impl Engine {
    pub fn new(
        mode: EngineMode,
        grid: DecisionGrid,
        specs: Vec<TaskSpec>,
    ) -> Result<Self, EngineError> {
        mode.validate()?;
        assert_eq!(grid.n_tasks(), specs.len(), "one spec per task");
        for (i, spec) in specs.iter().enumerate() {
            if let PvalueSource::EProcess { kind, .. } = &spec.source {
                kind.validate().map_err(|source| EngineError::Evidence {
                    task: i + 1,
                    source,
                })?;
            }
        }
        if matches!(mode, EngineMode::AdversarialMethod1 { .. }) {
            for i in 1..grid.times().len() {
                if grid.times()[i] - grid.times()[i - 1] != 1 {
                    return Err(EngineError::UnsupportedRegime(i));
                }
            }
        }
        let alpha_init = match mode {
            EngineMode::AdversarialMethod2 { alpha } => alpha,
            _ => 0.0,
        };
        let truths_complete = specs.iter().all(|s| s.truth.is_some());
        let tasks = specs
            .into_iter()
            .enumerate()
            .map(|(i, s)| TaskState {
                id: i + 1,
                arrival: grid.arrival(i + 1),
                tolerance: s.tolerance,
                decision: Decision::C,
                source: s.source,
                pvalues: (1.0, 1.0),
                levels: LevelRecord::default(),
                truth: s.truth,
                prev_pvalues: None,
                first_eval_time: None,
                last_eval_step: None,
                decided_step: None,
            })
            .collect::<Vec<_>>();
        let n = tasks.len();
        Ok(Self {
            mode,
            grid,
            tasks,
            ledger: SelectionLedger::new(n),
            next_step: 0,
            wealth: WealthState::new(alpha_init),
            prev_selected: 0,
            n_false_selected: 0,
            n_correct_selected: 0,
            truths_complete,
            log: Vec::new(),
            series: MetricsSeries::default(),
        })
    }

    pub fn mode(&self) -> EngineMode {
        self.mode
    }

    pub fn grid(&self) -> &DecisionGrid {
        &self.grid
    }

    pub fn ledger(&self) -> &SelectionLedger {
        &self.ledger
    }

    pub fn task(&self, id: TaskId) -> &TaskState {
        &self.tasks[id - 1]
    }

    /// Residual wealth of the greedy adversarial rule.
    pub fn wealth(&self) -> f64 {
        self.wealth.wealth
    }

    /// Tasks that would be evaluated at decision time `t`: arrived and still
    /// continuing. Ascending index order.
    pub fn pending_tasks(&self, t: Time) -> Vec<TaskId> {
        let mut out = Vec::new();
        for task in &self.tasks {
            if task.arrival > t {
                break; // arrivals are non-decreasing in index
            }
            if task.decision == Decision::C {
                out.push(task.id);
            }
        }
        out
    }

    /// The conservative FSR estimate over everything arrived so far.
    pub fn current_fsr_hat(&self) -> f64 {
        if self.next_step == 0 {
            return 0.0;
        }
        let now = self.grid.times()[self.next_step - 1];
        let arrived = self
            .tasks
            .iter()
            .filter(|t| t.arrival <= now)
            .map(|t| &t.levels);
        fsr_hat(arrived, &self.ledger)
    }

    /// Process one decision time. `observations` maps task ids to the new
    /// samples collected since the previous decision time; static and
    /// scripted tasks take no observations.
    pub fn step(
        &mut self,
        t: Time,
        observations: &BTreeMap<TaskId, Vec<f64>>,
    ) -> Result<Vec<(TaskId, Decision)>, EngineError> {
        let step = self.next_step;
        let expected = *self
            .grid
            .times()
            .get(step)
            .ok_or(EngineError::GridExhausted)?;
        if t != expected {
            return Err(EngineError::OutOfOrderStep { got: t, expected });
        }

        // Step 1: active set and ledger arrivals.
        let active = self.pending_tasks(t);
        for &j in &active {
            if matches!(
                self.ledger.flag(j),
                crate::investing::TaskFlag::NotYetArrived
            ) {
                self.ledger.mark_arrived(j)?;
            }
        }

        for &j in observations.keys() {
            if j == 0 || j > self.tasks.len() {
                return Err(EngineError::UnknownTask(j));
            }
            if self.tasks[j - 1].decision != Decision::C {
                return Err(EngineError::ObservationForFrozenTask(j));
            }
            if self.tasks[j - 1].arrival > t {
                return Err(EngineError::ObservationBeforeArrival(j));
            }
        }

        // Step 2: refresh directional p-values for the active set.
        for &j in &active {
            let task = &mut self.tasks[j - 1];
            task.prev_pvalues = if step > 0 && task.last_eval_step == Some(step - 1) {
                Some(task.pvalues)
            } else {
                None
            };
            match &mut task.source {
                PvalueSource::EProcess { state, kind } => {
                    if let Some(xs) = observations.get(&j) {
                        for &x in xs {
                            state
                                .observe(x, kind)
                                .map_err(|source| EngineError::Evidence { task: j, source })?;
                        }
                    }
                    task.pvalues = state.pvalues();
                }
                PvalueSource::Static { p_a, p_b } => task.pvalues = (*p_a, *p_b),
                PvalueSource::Scripted { table } => {
                    task.pvalues = *table
                        .get(step)
                        .ok_or(EngineError::ScriptedExhausted { task: j, step })?;
                }
            }
            if task.first_eval_time.is_none() {
                task.first_eval_time = Some(t);
            }
            task.last_eval_step = Some(step);
        }

        // Step 3: ascending-index sweep; the ledger reflects selections made
        // earlier in this same sweep.
        let mut out = Vec::with_capacity(active.len());
        for &j in &active {
            let (a_a, a_b) = self.levels_for(j, t);
            let task = &mut self.tasks[j - 1];
            task.levels.update(a_a, a_b);
            let elapsed = t - task.arrival;
            let (p_a, p_b) = task.pvalues;
            let d = match self.mode {
                EngineMode::Classical { .. } => decide_classical(p_a, a_a, elapsed, task.tolerance),
                _ => decide(p_a, p_b, a_a, a_b, elapsed, task.tolerance),
            };
            if d.is_absorbing() {
                task.decision = d;
                task.decided_step = Some(step);
                if let (Some(arm), Some(truth)) = (d.selected_arm(), task.truth) {
                    if arm == truth {
                        self.n_correct_selected += 1;
                    } else {
                        self.n_false_selected += 1;
                    }
                }
                self.ledger.record(j, d, t)?;
            }
            self.log.push(DecisionRecord {
                step,
                time: t,
                task: j,
                decision: d,
                p_a,
                p_b,
                level_a: a_a,
                level_b: a_b,
            });
            out.push((j, d));
        }

        // Greedy wealth credit lands once per decision time, after the sweep.
        if let EngineMode::AdversarialMethod2 { alpha } = self.mode {
            wealth_greedy_credit(
                &mut self.wealth,
                self.ledger.n_selected(),
                self.prev_selected,
                alpha,
            );
            self.prev_selected = self.ledger.n_selected();
        }

        self.next_step += 1;
        let fsr_hat_value = self.record_metrics(t, active.len());
        self.enforce_condition_one(t, fsr_hat_value)?;
        Ok(out)
    }

    fn levels_for(&mut self, j: TaskId, t: Time) -> (f64, f64) {
        match self.mode {
            EngineMode::Symmetric { alpha, k } => levels_symmetric(&self.ledger, j, k, alpha),
            EngineMode::Classical { alpha, k } => {
                (levels_classical(&self.ledger, j, k, alpha), 0.0)
            }
            EngineMode::ArmSpecific {
                alpha_a,
                alpha_b,
                k_a,
                k_b,
            } => levels_arm_specific(&self.ledger, j, k_a, k_b, alpha_a, alpha_b),
            EngineMode::SavaSpecial { alpha, k } => levels_savaspecial(&self.ledger, j, k, alpha),
            EngineMode::AdversarialMethod1 { alpha, k } => {
                let t_first = self.tasks[j - 1]
                    .first_eval_time
                    .expect("active task has been evaluated");
                levels_method1(&self.ledger, j, k, alpha, t, t_first)
            }
            EngineMode::AdversarialMethod2 { .. } => {
                let task = &self.tasks[j - 1];
                match task.prev_pvalues {
                    // Newly arrived tasks start at level zero.
                    None => (0.0, 0.0),
                    Some((pa, pb)) => {
                        let prior_zero =
                            task.levels.current_a == 0.0 && task.levels.current_b == 0.0;
                        let level = wealth_greedy_step(&mut self.wealth, prior_zero, pa.min(pb));
                        (level, level)
                    }
                }
            }
        }
    }

    fn record_metrics(&mut self, t: Time, n_active: usize) -> f64 {
        let fsr_hat_value = {
            let arrived = self
                .tasks
                .iter()
                .filter(|task| task.arrival <= t)
                .map(|task| &task.levels);
            fsr_hat(arrived, &self.ledger)
        };
        let n_arrived = self.tasks.iter().take_while(|x| x.arrival <= t).count();
        let (fsp, tsp) = if self.truths_complete {
            (
                Some(self.n_false_selected as f64 / self.ledger.n_selected().max(1) as f64),
                Some(self.n_correct_selected as f64 / n_arrived.max(1) as f64),
            )
        } else {
            (None, None)
        };
        self.series.rows.push(MetricsRow {
            time: t,
            n_active,
            n_arrived,
            n_selected: self.ledger.n_selected(),
            n_selected_a: self.ledger.n_selected_arm(Arm::A),
            n_selected_b: self.ledger.n_selected_arm(Arm::B),
            n_dropped: self.ledger.n_dropped(),
            n_false_selected: self.truths_complete.then_some(self.n_false_selected),
            fsr_hat: fsr_hat_value,
            fsp,
            tsp,
        });
        fsr_hat_value
    }

    fn enforce_condition_one(&self, t: Time, fsr_hat_value: f64) -> Result<(), EngineError> {
        let fail = |value: f64, alpha: f64| EngineError::FsrHatExceeded {
            time: t,
            value,
            alpha,
        };
        match self.mode {
            EngineMode::Symmetric { alpha, .. } | EngineMode::SavaSpecial { alpha, .. } => {
                if fsr_hat_value > alpha + FSR_HAT_SLACK {
                    return Err(fail(fsr_hat_value, alpha));
                }
            }
            EngineMode::Classical { alpha, .. } => {
                let v = self.fsr_hat_for_arm(t, Arm::A);
                if v > alpha + FSR_HAT_SLACK {
                    return Err(fail(v, alpha));
                }
            }
            EngineMode::ArmSpecific {
                alpha_a, alpha_b, ..
            } => {
                let va = self.fsr_hat_for_arm(t, Arm::A);
                if va > alpha_a + FSR_HAT_SLACK {
                    return Err(fail(va, alpha_a));
                }
                let vb = self.fsr_hat_for_arm(t, Arm::B);
                if vb > alpha_b + FSR_HAT_SLACK {
                    return Err(fail(vb, alpha_b));
                }
            }
            EngineMode::AdversarialMethod1 { .. } | EngineMode::AdversarialMethod2 { .. } => {}
        }
        Ok(())
    }

    fn fsr_hat_for_arm(&self, t: Time, arm: Arm) -> f64 {
        let arrived = self
            .tasks
            .iter()
            .filter(|task| task.arrival <= t)
            .map(|task| &task.levels);
        fsr_hat_arm(arrived, &self.ledger, arm)
    }

    /// Consume the engine into its run artifacts.
    pub fn finish(self) -> RunOutput {
        RunOutput {
            log: self.log,
            series: self.series,
            ledger: self.ledger,
        }
    }
}

/// Run a mode over a world end to end. `evidence` supplies the e-process
/// family for stream-backed tasks (ignored for static-p-value worlds);
/// tolerances default to infinite for every task.
pub fn run_world(
    mode: EngineMode,
    world: &World,
    evidence: Option<EvidenceKind>,
) -> Result<RunOutput, EngineError> {
    run_world_with_tolerance(mode, world, evidence, Tolerance::Infinite)
}

pub fn run_world_with_tolerance(
    mode: EngineMode,
    world: &World,
    evidence: Option<EvidenceKind>,
    tolerance: Tolerance,
) -> Result<RunOutput, EngineError> {
    let specs = world
        .data
        .iter()
        .enumerate()
        .map(|(i, data)| {
            let source = match data {
                TaskData::Stream(_) => {
                    let kind = evidence.ok_or(EngineError::MissingEvidenceKind)?;
                    Ok::<_, EngineError>(PvalueSource::EProcess {
                        state: EvidenceState::new(),
                        kind,
                    })
                }
                TaskData::StaticPvalues { p_a, p_b } => Ok(PvalueSource::Static {
                    p_a: *p_a,
                    p_b: *p_b,
                }),
            }?;
            Ok(TaskSpec {
                tolerance,
                source,
                truth: world.truths.get(i).copied(),
            })
        })
        .collect::<Result<Vec<_>, EngineError>>()?;

    let mut engine = Engine::new(mode, world.grid.clone(), specs)?;
    let mut cursors = vec![0usize; world.n_tasks()];
    for &t in world.grid.times() {
        let cutoff = world.cutoff(t);
        let mut obs: BTreeMap<TaskId, Vec<f64>> = BTreeMap::new();
        for j in engine.pending_tasks(t) {
            if let Some(stream) = world.stream(j) {
                let pos = &mut cursors[j - 1];
                let mut xs = Vec::new();
                while *pos < stream.samples.len() && stream.samples[*pos].0 <= cutoff {
                    xs.push(stream.samples[*pos].1);
                    *pos += 1;
                }
                if !xs.is_empty() {
                    obs.insert(j, xs);
                }
            }
        }
        engine.step(t, &obs)?;
    }
    Ok(engine.finish())
}
