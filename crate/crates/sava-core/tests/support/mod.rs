//! From-scratch reference implementation shared by the oracle-equivalence
//! and acceptance suites: at every decision time it recomputes all p-values
//! and test levels from the raw cumulative data and the definitional
//! formulas, sharing no state-management code with the engine. E-processes
//! are re-accumulated from the start of each stream, selection
//! neighborhoods are recounted by scanning flag arrays, and the decision
//! rule is re-stated inline.

#![allow(dead_code)]

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sava_core::engine::{DecisionRecord, Engine, EngineMode, PvalueSource, TaskSpec};
use sava_core::evidence::{EvidenceKind, EvidenceState};
use sava_core::policy::Decision;
use sava_core::world::{DecisionGrid, TaskId, Time, Tolerance};
use std::collections::BTreeMap;

#[derive(Clone)]
pub enum RefData {
    Scripted(Vec<(f64, f64)>),
    Stream { samples: Vec<(Time, f64)> },
}

#[derive(Clone)]
pub struct RefTask {
    pub arrival: Time,
    pub tolerance: Tolerance,
    pub data: RefData,
}

pub struct Instance {
    pub mode: EngineMode,
    pub times: Vec<Time>,
    pub tasks: Vec<RefTask>,
    /// Hoeffding parameters for stream-backed tasks.
    pub bound: f64,
    pub alpha_evidence: f64,
}

/// Re-derivation of the bounded-support e-process p-values from the full
/// prefix of observations, written independently of `EvidenceState`.
pub fn pvalues_from_scratch(samples: &[f64], bound: f64, alpha: f64) -> (f64, f64) {
    let mut log_a = 0.0_f64;
    let mut log_b = 0.0_f64;
    let mut best_a = 0.0_f64;
    let mut best_b = 0.0_f64;
    for (i, &x) in samples.iter().enumerate() {
        let r = (i + 1) as f64;
        let lambda = (8.0 * (2.0 / alpha).ln() / (r * (r + 1.0).ln()))
            .sqrt()
            .min(1.0);
        log_a += lambda * x / (2.0 * bound) - lambda * lambda / 8.0;
        log_b += -(lambda * x / (2.0 * bound)) - lambda * lambda / 8.0;
        best_a = best_a.max(log_a);
        best_b = best_b.max(log_b);
    }
    ((-best_a).exp().min(1.0), (-best_b).exp().min(1.0))
}

/// Selected indices before `j` (ascending) scanned from the flag array.
pub fn selections_before(
    flags: &[Option<Decision>],
    j: TaskId,
    arm: Option<Decision>,
) -> Vec<TaskId> {
    (1..j)
        .filter(|&i| match (flags[i - 1], arm) {
            (Some(Decision::A) | Some(Decision::B), None) => true,
            (Some(d), Some(want)) => d == want,
            _ => false,
        })
        .collect()
}

pub fn window_count(selected: &[TaskId], j: TaskId, k: usize) -> usize {
    selected
        .iter()
        .enumerate()
        .filter(|&(n, &i)| n >= 1 && i + k >= j && i < j)
        .count()
}

pub fn g_slot(k: usize, i: usize) -> f64 {
    if i == 0 || i > k {
        0.0
    } else if i < k {
        0.5_f64.powi(i as i32)
    } else {
        0.5_f64.powi(k as i32 - 1)
    }
}

struct RefState {
    flags: Vec<Option<Decision>>,
    selection_time: Vec<Option<Time>>,
    first_eval: Vec<Option<Time>>,
    prev_pvalues: Vec<Option<(f64, f64)>>,
    prev_levels: Vec<Option<(f64, f64)>>,
    last_eval_step: Vec<Option<usize>>,
    wealth: f64,
    prev_selected: usize,
}

pub fn reference_log(inst: &Instance) -> Vec<DecisionRecord> {
    let n = inst.tasks.len();
    let mut st = RefState {
        flags: vec![None; n],
        selection_time: vec![None; n],
        first_eval: vec![None; n],
        prev_pvalues: vec![None; n],
        prev_levels: vec![None; n],
        last_eval_step: vec![None; n],
        wealth: match inst.mode {
            EngineMode::AdversarialMethod2 { alpha } => alpha,
            _ => 0.0,
        },
        prev_selected: 0,
    };
    let mut log = Vec::new();

    for (step, &t) in inst.times.iter().enumerate() {
        let active: Vec<TaskId> = (1..=n)
            .filter(|&j| inst.tasks[j - 1].arrival <= t && st.flags[j - 1].is_none())
            .collect();

        // All p-values recomputed from scratch before the sweep.
        let mut pvals: BTreeMap<TaskId, (f64, f64)> = BTreeMap::new();
        for &j in &active {
            let p = match &inst.tasks[j - 1].data {
                RefData::Scripted(table) => table[step],
                RefData::Stream { samples } => {
                    let xs: Vec<f64> = samples
                        .iter()
                        .filter(|(ts, _)| *ts <= t)
                        .map(|(_, x)| *x)
                        .collect();
                    pvalues_from_scratch(&xs, inst.bound, inst.alpha_evidence)
                }
            };
            pvals.insert(j, p);
        }

        let mut new_prev_p: Vec<(TaskId, (f64, f64))> = Vec::new();
        let mut new_prev_l: Vec<(TaskId, (f64, f64))> = Vec::new();
        for &j in &active {
            let was_prev_active =
                st.last_eval_step[j - 1] == Some(step.wrapping_sub(1)) && step > 0;
            if st.first_eval[j - 1].is_none() {
                st.first_eval[j - 1] = Some(t);
            }
            st.last_eval_step[j - 1] = Some(step);
            let (p_a, p_b) = pvals[&j];

            let (a_a, a_b) = match inst.mode {
                EngineMode::Symmetric { alpha, k } => {
                    let sel = selections_before(&st.flags, j, None);
                    let base = usize::from(j <= k);
                    let a = alpha / k as f64 * (base + window_count(&sel, j, k)) as f64;
                    (a, a)
                }
                EngineMode::Classical { alpha, k } => {
                    let sel = selections_before(&st.flags, j, Some(Decision::A));
                    let base = usize::from(j <= k);
                    let a = alpha / k as f64 * (base + window_count(&sel, j, k)) as f64;
                    (a, 0.0)
                }
                EngineMode::ArmSpecific {
                    alpha_a,
                    alpha_b,
                    k_a,
                    k_b,
                } => {
                    let sel_a = selections_before(&st.flags, j, Some(Decision::A));
                    let sel_b = selections_before(&st.flags, j, Some(Decision::B));
                    let a = alpha_a / k_a as f64
                        * (usize::from(j <= k_a) + window_count(&sel_a, j, k_a)) as f64;
                    let b = alpha_b / k_b as f64
                        * (usize::from(j <= k_b) + window_count(&sel_b, j, k_b)) as f64;
                    (a, b)
                }
                EngineMode::SavaSpecial { alpha, k } => {
                    let sel = selections_before(&st.flags, j, None);
                    let mut a = if j <= k { alpha * g_slot(k, j) } else { 0.0 };
                    for (nn, &i) in sel.iter().enumerate() {
                        if nn >= 1 && i < j && j <= i + k {
                            a += alpha * g_slot(k, j - i);
                        }
                    }
                    (a, a)
                }
                EngineMode::AdversarialMethod1 { alpha, k } => {
                    let sel = selections_before(&st.flags, j, None);
                    let mut a = 0.0;
                    if j <= k {
                        let slot =
                            ((t - st.first_eval[j - 1].unwrap()).rem_euclid(k as i64)) as usize + 1;
                        a += alpha * g_slot(k, slot);
                    }
                    for (nn, &i) in sel.iter().enumerate() {
                        if nn >= 1 && i < j && j <= i + k {
                            let slot = ((t - st.selection_time[i - 1].unwrap())
                                .rem_euclid(k as i64))
                                as usize
                                + 1;
                            a += alpha * g_slot(k, slot);
                        }
                    }
                    (a, a)
                }
                EngineMode::AdversarialMethod2 { .. } => {
                    if !was_prev_active {
                        (0.0, 0.0)
                    } else {
                        let (qa, qb) = st.prev_pvalues[j - 1].unwrap();
                        let min_p = qa.min(qb);
                        let zero_before = st.prev_levels[j - 1] == Some((0.0, 0.0));
                        if zero_before && st.wealth >= min_p {
                            st.wealth -= min_p;
                            (min_p, min_p)
                        } else {
                            (0.0, 0.0)
                        }
                    }
                }
            };

            // Decision rule restated inline.
            let elapsed = t - inst.tasks[j - 1].arrival;
            let expired = match inst.tasks[j - 1].tolerance {
                Tolerance::Finite(b) => elapsed >= b,
                Tolerance::Infinite => false,
            };
            let d = if matches!(inst.mode, EngineMode::Classical { .. }) {
                if p_a <= a_a {
                    Decision::A
                } else if expired {
                    Decision::D
                } else {
                    Decision::C
                }
            } else {
                let sig_a = p_a <= a_a;
                let sig_b = p_b <= a_b;
                if sig_a && sig_b {
                    if p_b >= p_a {
                        Decision::A
                    } else {
                        Decision::B
                    }
                } else if sig_a {
                    Decision::A
                } else if sig_b {
                    Decision::B
                } else if expired {
                    Decision::D
                } else {
                    Decision::C
                }
            };

            if d != Decision::C {
                st.flags[j - 1] = Some(d);
                if matches!(d, Decision::A | Decision::B) {
                    st.selection_time[j - 1] = Some(t);
                }
            }
            new_prev_p.push((j, (p_a, p_b)));
            new_prev_l.push((j, (a_a, a_b)));
            log.push(DecisionRecord {
                step,
                time: t,
                task: j,
                decision: d,
                p_a,
                p_b,
                level_a: a_a,
                level_b: a_b,
            });
        }

        if let EngineMode::AdversarialMethod2 { alpha } = inst.mode {
            let selected = st
                .flags
                .iter()
                .filter(|f| matches!(f, Some(Decision::A) | Some(Decision::B)))
                .count();
            st.wealth += alpha * (selected.max(1) as f64 - st.prev_selected.max(1) as f64);
            st.prev_selected = selected;
        }
        for (j, p) in new_prev_p {
            st.prev_pvalues[j - 1] = Some(p);
        }
        for (j, l) in new_prev_l {
            st.prev_levels[j - 1] = Some(l);
        }
    }
    log
}

/// Drive the real engine over the same instance.
pub fn engine_log(inst: &Instance) -> Vec<DecisionRecord> {
    let arrivals: Vec<Time> = inst.tasks.iter().map(|t| t.arrival).collect();
    let grid = DecisionGrid::new(inst.times.clone(), arrivals).unwrap();
    let specs: Vec<TaskSpec> = inst
        .tasks
        .iter()
        .map(|t| TaskSpec {
            tolerance: t.tolerance,
            source: match &t.data {
                RefData::Scripted(table) => PvalueSource::Scripted {
                    table: table.clone(),
                },
                RefData::Stream { .. } => PvalueSource::EProcess {
                    state: EvidenceState::new(),
                    kind: EvidenceKind::HoeffdingBounded {
                        bound: inst.bound,
                        alpha: inst.alpha_evidence,
                    },
                },
            },
            truth: None,
        })
        .collect();
    let mut engine = Engine::new(inst.mode, grid, specs).unwrap();
    let mut cursors = vec![0usize; inst.tasks.len()];
    for &t in &inst.times {
        let mut obs: BTreeMap<TaskId, Vec<f64>> = BTreeMap::new();
        for j in engine.pending_tasks(t) {
            if let RefData::Stream { samples } = &inst.tasks[j - 1].data {
                let pos = &mut cursors[j - 1];
                let mut xs = Vec::new();
                while *pos < samples.len() && samples[*pos].0 <= t {
                    xs.push(samples[*pos].1);
                    *pos += 1;
                }
                if !xs.is_empty() {
                    obs.insert(j, xs);
                }
            }
        }
        engine.step(t, &obs).expect("engine step");
    }
    engine.finish().log
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n_times = 1 + (rng.random::<u64>() % 20) as usize;
    let n_tasks = 1 + (rng.random::<u64>() % 10) as usize;
    let mode_pick = rng.random::<u64>() % 6;
    let unit_grid = mode_pick == 4; // Method 1 demands unit spacing

    let mut times = Vec::with_capacity(n_times);
    let mut t = 1 + (rng.random::<u64>() % 3) as i64;
    for _ in 0..n_times {
        times.push(t);
        t += if unit_grid {
            1
        } else {
            1 + (rng.random::<u64>() % 3) as i64
        };
    }
    let t_max = *times.last().unwrap();

    let mut arrivals = Vec::with_capacity(n_tasks);
    let mut a = 1i64;
    for _ in 0..n_tasks {
        arrivals.push(a.min(t_max));
        a += (rng.random::<u64>() % 4) as i64;
    }

    let alpha = [0.05, 0.1, 0.3][(rng.random::<u64>() % 3) as usize];
    let k = 1 + (rng.random::<u64>() % 5) as usize;
    let mode = match mode_pick {
        0 => EngineMode::Symmetric { alpha, k },
        1 => EngineMode::Classical { alpha, k },
        2 => EngineMode::ArmSpecific {
            alpha_a: alpha,
            alpha_b: alpha / 2.0,
            k_a: k,
            k_b: k + 1,
        },
        3 => EngineMode::SavaSpecial { alpha, k },
        4 => EngineMode::AdversarialMethod1 { alpha, k },
        _ => EngineMode::AdversarialMethod2 { alpha },
    };

    let tasks = (0..n_tasks)
        .map(|i| {
            let tolerance = if rng.random::<u64>() % 3 == 0 {
                Tolerance::Finite(1 + (rng.random::<u64>() % 15) as i64)
            } else {
                Tolerance::Infinite
            };
            let data = if rng.random::<u64>() % 4 == 0 {
                // Bounded stream: one observation per unit time.
                let samples = (arrivals[i]..=t_max)
                    .map(|ts| {
                        let u = rng.random::<f64>();
                        (ts, (u * 4.0 - 1.2).clamp(-2.0, 2.0))
                    })
                    .collect();
                RefData::Stream { samples }
            } else {
                // Scripted p-values, skewed small so selections happen.
                let table = (0..n_times)
                    .map(|_| {
                        let u: f64 = rng.random();
                        let v: f64 = rng.random();
                        (u * u * u, v * v)
                    })
                    .collect();
                RefData::Scripted(table)
            };
            RefTask {
                arrival: arrivals[i],
                tolerance,
                data,
            }
        })
        .collect();

    Instance {
        mode,
        times,
        tasks,
        bound: 2.0,
        alpha_evidence: 0.05,
    }
}

pub fn assert_logs_identical(a: &[DecisionRecord], b: &[DecisionRecord], seed: u64) {
    assert_eq!(a.len(), b.len(), "log length differs on instance {seed}");
    for (x, y) in a.iter().zip(b) {
        assert_eq!(
            (x.step, x.time, x.task, x.decision),
            (y.step, y.time, y.task, y.decision),
            "decision mismatch on instance {seed}"
        );
        assert_eq!(x.p_a.to_bits(), y.p_a.to_bits(), "p_a differs on {seed}");
        assert_eq!(x.p_b.to_bits(), y.p_b.to_bits(), "p_b differs on {seed}");
        assert_eq!(
            x.level_a.to_bits(),
            y.level_a.to_bits(),
            "level_a differs on instance {seed} task {} step {}",
            x.task,
            x.step
        );
        assert_eq!(
            x.level_b.to_bits(),
            y.level_b.to_bits(),
            "level_b differs on {seed}"
        );
    }
}
