//! Shared world model: the decision-time grid, task arrivals, ground truth,
//! and per-task data (either an observation stream or directly supplied
//! static p-values).
//!
//! A world is immutable once built. Engines and baseline runners consume it
//! read-only, so replications can share one world or run on freshly
//! generated ones without coordination.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

/// Discrete time stamp. Simulated worlds use consecutive integers; rating
/// replays use epoch seconds.
pub type Time = i64;

/// Task index, 1-based, in global arrival order.
pub type TaskId = usize;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("decision times must be strictly increasing (index {0})")]
    NonIncreasingTimes(usize),
    #[error("arrival times must be non-decreasing in task index (task {0})")]
    DecreasingArrivals(TaskId),
    #[error("world has {tasks} tasks but {data} data entries")]
    DataMismatch { tasks: usize, data: usize },
    #[error("fixture format error: {0}")]
    Fixture(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// True state of a task: which arm is superior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    A,
    B,
}

/// Per-task tolerance duration `b_j`: how long abstention (C) is acceptable
/// before the task is dropped (D).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tolerance {
    Finite(Time),
    Infinite,
}

impl Tolerance {
    /// True when `elapsed >= b`, the drop condition.
    pub fn exceeded_by(self, elapsed: Time) -> bool {
        match self {
            Tolerance::Finite(b) => elapsed >= b,
            Tolerance::Infinite => false,
        }
    }
}

/// The global decision-time set together with each task's initiation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionGrid {
    times: Vec<Time>,
    arrivals: Vec<Time>,
}

impl DecisionGrid {
    /// Build a grid from strictly increasing decision times and per-task
    /// arrival times (non-decreasing in task index; ties are legal for
    /// replayed data and are surfaced by the ingest layer).
    pub fn new(times: Vec<Time>, arrivals: Vec<Time>) -> Result<Self, WorldError> {
        for i in 1..times.len() {
            if times[i] <= times[i - 1] {
                return Err(WorldError::NonIncreasingTimes(i));
            }
        }
        for j in 1..arrivals.len() {
            if arrivals[j] < arrivals[j - 1] {
                return Err(WorldError::DecreasingArrivals(j + 1));
            }
        }
        Ok(Self { times, arrivals })
    }

    pub fn times(&self) -> &[Time] {
        &self.times
    }

    pub fn n_tasks(&self) -> usize {
        self.arrivals.len()
    }

    /// Arrival time `t_0^j` of a task (1-based id).
    pub fn arrival(&self, task: TaskId) -> Time {
        self.arrivals[task - 1]
    }

    pub fn arrivals(&self) -> &[Time] {
        &self.arrivals
    }

    /// Index of the first decision time at or after the task's arrival, i.e.
    /// the step where the task first enters the active set. `None` when the
    /// task never arrives within the grid.
    pub fn first_eval_index(&self, task: TaskId) -> Option<usize> {
        let t0 = self.arrival(task);
        let idx = self.times.partition_point(|&t| t < t0);
        (idx < self.times.len()).then_some(idx)
    }
}

/// One task's raw observation stream: `(time, value)` pairs sorted by time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    pub samples: Vec<(Time, f64)>,
}

impl TaskStream {
    /// Observations with time in `(after, up_to]`. `after = None` means
    /// everything from the start of the stream.
    pub fn window(&self, after: Option<Time>, up_to: Time) -> impl Iterator<Item = f64> + '_ {
        let lo = after.unwrap_or(Time::MIN);
        self.samples
            .iter()
            .filter(move |(t, _)| *t > lo && *t <= up_to)
            .map(|(_, x)| *x)
    }
}

/// Per-task data backing the p-value computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskData {
    /// A real observation stream; p-values come from e-processes (engine)
    /// or batch tests (baselines).
    Stream(TaskStream),
    /// Directly supplied directional p-values, constant over time. Used by
    /// the counterexample worlds where data collection is omitted.
    StaticPvalues { p_a: f64, p_b: f64 },
}

/// Provenance of a world, echoed into fixtures so a regenerated world can be
/// cross-checked against a pinned one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorldSource {
    Generated(crate::simgen::WorldConfig),
    Counterexample { which: u8, seed: u64 },
    Replay { input: String },
    Scripted,
}

/// An immutable experiment world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub grid: DecisionGrid,
    /// Ground truth per task, in task-index order.
    pub truths: Vec<Arm>,
    pub data: Vec<TaskData>,
    /// Observation cutoff at decision time `t` is `t - obs_lag`: simulated
    /// worlds evaluate samples up to and including `t` (lag 0) while rating
    /// replays evaluate reviews strictly prior to `t` (lag 1).
    pub obs_lag: Time,
    pub source: WorldSource,
    /// Per-task substream identifiers for generated worlds (regeneration
    /// hooks recorded in fixtures); empty otherwise.
    pub task_seeds: Vec<u64>,
}

impl World {
    pub fn n_tasks(&self) -> usize {
        self.grid.n_tasks()
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.data.len() != self.n_tasks() || self.truths.len() != self.n_tasks() {
            return Err(WorldError::DataMismatch {
                tasks: self.n_tasks(),
                data: self.data.len().min(self.truths.len()),
            });
        }
        Ok(())
    }

    /// Observation cutoff associated with decision time `t`.
    pub fn cutoff(&self, t: Time) -> Time {
        t - self.obs_lag
    }

    pub fn stream(&self, task: TaskId) -> Option<&TaskStream> {
        match &self.data[task - 1] {
            TaskData::Stream(s) => Some(s),
            TaskData::StaticPvalues { .. } => None,
        }
    }
}

const FIXTURE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Fixture {
    version: u32,
    world: World,
}

/// Serialize a world to the versioned fixture format.
pub fn write_fixture<W: Write>(world: &World, out: W) -> Result<(), WorldError> {
    let fx = Fixture {
        version: FIXTURE_VERSION,
        world: world.clone(),
    };
    serde_json::to_writer(out, &fx).map_err(|e| WorldError::Fixture(e.to_string()))
}

/// Deserialize a world fixture, checking the format version.
pub fn read_fixture<R: Read>(input: R) -> Result<World, WorldError> {
    let fx: Fixture =
        serde_json::from_reader(input).map_err(|e| WorldError::Fixture(e.to_string()))?;
    if fx.version != FIXTURE_VERSION {
        return Err(WorldError::Fixture(format!(
            "unsupported fixture version {} (expected {})",
            fx.version, FIXTURE_VERSION
        )));
    }
    fx.world.validate()?;
    Ok(fx.world)
}
