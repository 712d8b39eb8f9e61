//! Doubly-sequential online selective inference.
//!
//! Tasks arrive over time and each collects its own data stream; at every
//! decision time the engine either selects an arm for a task, keeps
//! collecting, or drops it, while an alpha-investing rule keeps a
//! conservative estimate of the false selection rate below the target at
//! every decision time. E-process-based always-valid directional p-values
//! make the per-task monitoring safe under continuous peeking.
//!
//! Module map:
//!
//! * [`evidence`] — e-processes, always-valid directional p-values, and the
//!   fixed-sample Wilcoxon / z tests used by the baselines;
//! * [`policy`] — the p-value-plane partition and the A/B/C/D decision rule;
//! * [`investing`] — selection ledger, test-level allocation rules (valid
//!   and adversarial), and the conservative FSR estimate;
//! * [`engine`] — the per-decision-time orchestration loop;
//! * [`baselines`] — LORD++ / SAFFRON / ADDIS in the synchronous regime;
//! * [`simgen`] — synthetic worlds and the counterexample worlds;
//! * [`ingest`] — rating-stream replay;
//! * [`metrics`] — per-run series and cross-replication aggregation;
//! * [`world`] — shared grid/world model and fixture serialization.

pub mod baselines;
pub mod engine;
pub mod evidence;
pub mod ingest;
pub mod investing;
pub mod metrics;
pub mod policy;
pub mod simgen;
pub mod world;

pub use engine::{run_world, Engine, EngineMode, RunOutput};
pub use policy::Decision;
pub use world::{Arm, DecisionGrid, TaskId, Time, Tolerance, World};
