//! Alpha-investing: allocation of per-task, per-direction test levels over
//! time, the conservative FSR estimate built from running level maxima, and
//! the two adversarial allocation rules used to demonstrate FSR inflation.
//!
//! The valid window rule spreads the `alpha` earned by each selection evenly
//! over the next `k` task indices: task `j` receives
//! `(alpha/k) * [1{j <= k} + N_{t,j-}(k)]` per direction, where `N` counts
//! selections among tasks `j-k ..= j-1` that arrived before `j`, always
//! excluding the very first selection in that history — counting it would
//! let the FSR estimate drift past `alpha`.
//!
//! Levels may only depend on tasks with strictly smaller index: every query
//! here derives from `selections_before(j)`, so information from later
//! arrivals cannot leak into task `j`'s allocation.

use crate::policy::Decision;
use crate::world::{Arm, TaskId, Time};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum InvestingError {
    #[error("task {task} transition {from:?} -> {to:?} is not allowed")]
    InvalidTransition {
        task: TaskId,
        from: TaskFlag,
        to: TaskFlag,
    },
    #[error("task {0} is out of range for this ledger")]
    UnknownTask(TaskId),
}

/// Lifecycle flag of one task inside the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskFlag {
    NotYetArrived,
    Continuing,
    SelectedA,
    SelectedB,
    Dropped,
}

impl TaskFlag {
    pub fn selected_arm(self) -> Option<Arm> {
        match self {
            TaskFlag::SelectedA => Some(Arm::A),
            TaskFlag::SelectedB => Some(Arm::B),
            _ => None,
        }
    }
}

/// Ordered record of per-task decision flags. Task indices are the global
/// arrival order (1-based); flags only move `Continuing -> {SelectedA,
/// SelectedB, Dropped}` and never revert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionLedger {
    flags: Vec<TaskFlag>,
    selected: Vec<TaskId>,
    selected_a: Vec<TaskId>,
    selected_b: Vec<TaskId>,
    /// Decision time at which each task was selected (adversarial Method 1
    /// spreads wealth by these stopping times).
    selection_times: Vec<Option<Time>>,
    n_arrived: usize,
    n_dropped: usize,
}

impl SelectionLedger {
    pub fn new(n_tasks: usize) -> Self {
        Self {
            flags: vec![TaskFlag::NotYetArrived; n_tasks],
            selected: Vec::new(),
            selected_a: Vec::new(),
            selected_b: Vec::new(),
            selection_times: vec![None; n_tasks],
            n_arrived: 0,
            n_dropped: 0,
        }
    }

    pub fn n_tasks(&self) -> usize {
        self.flags.len()
    }

    pub fn flag(&self, task: TaskId) -> TaskFlag {
        self.flags[task - 1]
    }

    pub fn mark_arrived(&mut self, task: TaskId) -> Result<(), InvestingError> {
        if task == 0 || task > self.flags.len() {
            return Err(InvestingError::UnknownTask(task));
        }
        match self.flags[task - 1] {
            TaskFlag::NotYetArrived => {
                self.flags[task - 1] = TaskFlag::Continuing;
                self.n_arrived += 1;
                Ok(())
            }
            from => Err(InvestingError::InvalidTransition {
                task,
                from,
                to: TaskFlag::Continuing,
            }),
        }
    }

    /// Apply an absorbing decision to a continuing task. `Decision::C` is a
    /// no-op.
    pub fn record(&mut self, task: TaskId, d: Decision, time: Time) -> Result<(), InvestingError> {
        if task == 0 || task > self.flags.len() {
            return Err(InvestingError::UnknownTask(task));
        }
        let to = match d {
            Decision::C => return Ok(()),
            Decision::A => TaskFlag::SelectedA,
            Decision::B => TaskFlag::SelectedB,
            Decision::D => TaskFlag::Dropped,
        };
        let from = self.flags[task - 1];
        if from != TaskFlag::Continuing {
            return Err(InvestingError::InvalidTransition { task, from, to });
        }
        self.flags[task - 1] = to;
        match to {
            TaskFlag::SelectedA | TaskFlag::SelectedB => {
                let pos = self.selected.partition_point(|&i| i < task);
                self.selected.insert(pos, task);
                let arm_list = if to == TaskFlag::SelectedA {
                    &mut self.selected_a
                } else {
                    &mut self.selected_b
                };
                let pos = arm_list.partition_point(|&i| i < task);
                arm_list.insert(pos, task);
                self.selection_times[task - 1] = Some(time);
            }
            TaskFlag::Dropped => self.n_dropped += 1,
            _ => unreachable!(),
        }
        Ok(())
    }

    pub fn n_arrived(&self) -> usize {
        self.n_arrived
    }

    pub fn n_dropped(&self) -> usize {
        self.n_dropped
    }

    pub fn n_selected(&self) -> usize {
        self.selected.len()
    }

    pub fn n_selected_arm(&self, arm: Arm) -> usize {
        match arm {
            Arm::A => self.selected_a.len(),
            Arm::B => self.selected_b.len(),
        }
    }

    /// All selected task indices, ascending.
    pub fn selected(&self) -> &[TaskId] {
        &self.selected
    }

    /// Selected indices of tasks arriving before `task`, ascending. This is
    /// the only selection view the level rules may consult.
    pub fn selections_before(&self, task: TaskId) -> &[TaskId] {
        let end = self.selected.partition_point(|&i| i < task);
        &self.selected[..end]
    }

    pub fn selections_before_arm(&self, task: TaskId, arm: Arm) -> &[TaskId] {
        let list = match arm {
            Arm::A => &self.selected_a,
            Arm::B => &self.selected_b,
        };
        let end = list.partition_point(|&i| i < task);
        &list[..end]
    }

    /// Decision time at which `task` was selected, if it has been.
    pub fn selection_time(&self, task: TaskId) -> Option<Time> {
        self.selection_times[task - 1]
    }
}

/// Count of wealth-earning selections in the one-sided neighborhood of `j`:
/// `|{n >= 2 : j-k <= I_n <= j-1}|` over the ascending selection indices
/// `I_n` restricted to tasks before `j`. The first selection in that history
/// never earns.
fn window_count(selections_before_j: &[TaskId], j: TaskId, k: usize) -> usize {
    if selections_before_j.is_empty() {
        return 0;
    }
    let lo = j.saturating_sub(k);
    let start = selections_before_j.partition_point(|&i| i < lo);
    let mut count = selections_before_j.len() - start;
    if selections_before_j[0] >= lo {
        count -= 1;
    }
    count
}

pub fn neighborhood_count(ledger: &SelectionLedger, j: TaskId, k: usize) -> usize {
    window_count(ledger.selections_before(j), j, k)
}

pub fn neighborhood_count_arm(ledger: &SelectionLedger, j: TaskId, k: usize, arm: Arm) -> usize {
    window_count(ledger.selections_before_arm(j, arm), j, k)
}

/// The symmetric window rule: both directions receive
/// `(alpha/k) * [1{j <= k} + N_{t,j-}(k)]`.
pub fn levels_symmetric(ledger: &SelectionLedger, j: TaskId, k: usize, alpha: f64) -> (f64, f64) {
    let base = usize::from(j <= k);
    let a = alpha / k as f64 * (base + neighborhood_count(ledger, j, k)) as f64;
    (a, a)
}

/// One-direction variant for the classical setup: only A-selections earn.
pub fn levels_classical(ledger: &SelectionLedger, j: TaskId, k: usize, alpha: f64) -> f64 {
    let base = usize::from(j <= k);
    alpha / k as f64 * (base + neighborhood_count_arm(ledger, j, k, Arm::A)) as f64
}

/// Independent windows and budgets per direction.
pub fn levels_arm_specific(
    ledger: &SelectionLedger,
    j: TaskId,
    k_a: usize,
    k_b: usize,
    alpha_a: f64,
    alpha_b: f64,
) -> (f64, f64) {
    let a = alpha_a / k_a as f64
        * (usize::from(j <= k_a) + neighborhood_count_arm(ledger, j, k_a, Arm::A)) as f64;
    let b = alpha_b / k_b as f64
        * (usize::from(j <= k_b) + neighborhood_count_arm(ledger, j, k_b, Arm::B)) as f64;
    (a, b)
}

/// Geometric slot weights `g_k(i) = 2^{-i}` for `1 <= i < k` and
/// `2^{-(k-1)}` at `i = k`; zero outside. Sums to 1 over `1..=k`.
pub fn slot_weight(k: usize, i: usize) -> f64 {
    if i == 0 || i > k {
        0.0
    } else if i < k {
        0.5_f64.powi(i as i32)
    } else {
        0.5_f64.powi(k as i32 - 1)
    }
}

/// Static-slot variant of the geometric rule: slots are fixed by index
/// distance, so levels are monotone in time and the FSR estimate stays
/// conservative.
pub fn levels_savaspecial(ledger: &SelectionLedger, j: TaskId, k: usize, alpha: f64) -> (f64, f64) {
    let mut a = if j <= k {
        alpha * slot_weight(k, j)
    } else {
        0.0
    };
    let sel = ledger.selections_before(j);
    for (n, &i_n) in sel.iter().enumerate() {
        if n == 0 {
            continue;
        }
        if i_n < j && j <= i_n + k {
            a += alpha * slot_weight(k, j - i_n);
        }
    }
    (a, a)
}

/// Time-varying slot rule (adversarial "Method 1"): the slot index cycles
/// with the decision time, so a task's level can shrink between evaluations
/// while the per-time sum of current levels still looks controlled. Only
/// defined on unit-spaced decision grids; the engine enforces that regime.
pub fn levels_method1(
    ledger: &SelectionLedger,
    j: TaskId,
    k: usize,
    alpha: f64,
    t_now: Time,
    t_first_eval: Time,
) -> (f64, f64) {
    let slot_at = |since: Time| -> usize { (since.rem_euclid(k as i64)) as usize + 1 };
    let mut a = 0.0;
    if j <= k {
        a += alpha * slot_weight(k, slot_at(t_now - t_first_eval));
    }
    let sel = ledger.selections_before(j);
    for (n, &i_n) in sel.iter().enumerate() {
        if n == 0 {
            continue;
        }
        if i_n < j && j <= i_n + k {
            let t_sel = ledger
                .selection_time(i_n)
                .expect("selected task has a selection time");
            a += alpha * slot_weight(k, slot_at(t_now - t_sel));
        }
    }
    (a, a)
}

/// Per-task level bookkeeping: current pair and running maxima. The maxima
/// feed the FSR estimate; valid rules are monotone (current == max) but the
/// adversarial Method 1 is not, so genuine maxima are stored uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelRecord {
    pub current_a: f64,
    pub current_b: f64,
    pub max_a: f64,
    pub max_b: f64,
}

impl LevelRecord {
    pub fn update(&mut self, a: f64, b: f64) {
        self.current_a = a;
        self.current_b = b;
        self.max_a = self.max_a.max(a);
        self.max_b = self.max_b.max(b);
    }

    pub fn max_either(&self) -> f64 {
        self.max_a.max(self.max_b)
    }
}

/// Conservative FSR estimate: `sum_j max(abar_a, abar_b) / (|S_t| v 1)` over
/// all arrived tasks' level records.
pub fn fsr_hat<'a>(
    records: impl IntoIterator<Item = &'a LevelRecord>,
    ledger: &SelectionLedger,
) -> f64 {
    let num: f64 = records.into_iter().map(LevelRecord::max_either).sum();
    num / ledger.n_selected().max(1) as f64
}

/// Arm-restricted FSR estimate: that arm's maxima over `|S^arm| v 1`.
pub fn fsr_hat_arm<'a>(
    records: impl IntoIterator<Item = &'a LevelRecord>,
    ledger: &SelectionLedger,
    arm: Arm,
) -> f64 {
    let num: f64 = records
        .into_iter()
        .map(|r| match arm {
            Arm::A => r.max_a,
            Arm::B => r.max_b,
        })
        .sum();
    num / ledger.n_selected_arm(arm).max(1) as f64
}

/// Residual alpha-wealth for the greedy adversarial rule ("Method 2").
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WealthState {
    pub wealth: f64,
}

impl WealthState {
    pub fn new(alpha: f64) -> Self {
        Self { wealth: alpha }
    }
}

/// Greedy funding step for one task: a task that was active at the previous
/// decision time with zero levels gets its previous minimum p-value as its
/// new level, provided the wealth covers it. Returns the emitted level.
pub fn wealth_greedy_step(
    w: &mut WealthState,
    prior_levels_were_zero: bool,
    prev_min_p: f64,
) -> f64 {
    if prior_levels_were_zero && w.wealth >= prev_min_p {
        w.wealth -= prev_min_p;
        prev_min_p
    } else {
        0.0
    }
}

/// End-of-step wealth credit: `alpha * (max(1,|S_t|) - max(1,|S_prev|))`,
/// applied once per decision time after all tasks are processed.
pub fn wealth_greedy_credit(
    w: &mut WealthState,
    n_selected_now: usize,
    n_selected_prev: usize,
    alpha: f64,
) {
    w.wealth += alpha * (n_selected_now.max(1) as f64 - n_selected_prev.max(1) as f64);
}
