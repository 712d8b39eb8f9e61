//! Synthetic world generation: Bernoulli task arrivals on an integer
//! horizon, the synchronized decision grid, ground-truth assignment, data
//! streams under the truncated-Gaussian and Gaussian models, and the two
//! counterexample worlds driven by static p-values.
//!
//! Determinism: a single root seed drives independent per-task substreams of
//! one counter-based generator, so adding tasks or replications never
//! perturbs earlier tasks' data. Truncated-normal draws use the inverse CDF,
//! consuming exactly one uniform per sample, which keeps substreams aligned
//! no matter which draws a particular run consumes.

use crate::world::{Arm, DecisionGrid, TaskData, TaskStream, Time, World, WorldError, WorldSource};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("horizon must be >= 1, got {0}")]
    BadHorizon(Time),
    #[error("arrival probability must lie in (0, 1], got {0}")]
    BadArrivalProb(f64),
    #[error("pi_plus must lie in [0, 1], got {0}")]
    BadPiPlus(f64),
    #[error("model parameter out of range: {0}")]
    BadModel(String),
    #[error("truncation range is degenerate: [{lo}, {hi}]")]
    DegenerateRange { lo: f64, hi: f64 },
    #[error(transparent)]
    World(#[from] WorldError),
}

/// Data-generating model for one task stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum DataModel {
    /// `trN(±mu, 1, -bound, bound)` depending on the true arm.
    TruncGauss { mu: f64, bound: f64 },
    /// `N(±mu, 1)` depending on the true arm.
    Gauss { mu: f64 },
}

/// Full configuration of a generated world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    /// Temporal horizon `T`; time runs over `1..=T`.
    pub horizon: Time,
    /// Per-time arrival probability for `t >= 2` (the first task always
    /// starts at `t = 1`).
    pub arrival_prob: f64,
    /// Probability that a task's true state is arm A.
    pub pi_plus: f64,
    pub model: DataModel,
    pub seed: u64,
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.horizon < 1 {
            return Err(SimError::BadHorizon(self.horizon));
        }
        if !(self.arrival_prob > 0.0 && self.arrival_prob <= 1.0) {
            return Err(SimError::BadArrivalProb(self.arrival_prob));
        }
        if !(0.0..=1.0).contains(&self.pi_plus) {
            return Err(SimError::BadPiPlus(self.pi_plus));
        }
        match self.model {
            DataModel::TruncGauss { mu, bound } => {
                if mu <= 0.0 || bound <= 0.0 {
                    return Err(SimError::BadModel(format!("mu {mu}, bound {bound}")));
                }
            }
            DataModel::Gauss { mu } => {
                if mu <= 0.0 {
                    return Err(SimError::BadModel(format!("mu {mu}")));
                }
            }
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed for replication `rep` from a root seed. Fixed derivation:
/// running `reps = N` produces a prefix of the seeds used by `reps = M > N`.
pub fn replication_seed(root: u64, rep: u64) -> u64 {
    splitmix64(root ^ splitmix64(rep.wrapping_add(1)))
}

fn substream(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// Substream layout: 0 drives arrivals, 1 drives truths, 2 + j drives task j.
const STREAM_ARRIVALS: u64 = 0;
const STREAM_TRUTHS: u64 = 1;
const STREAM_TASK_BASE: u64 = 2;

fn uniform(rng: &mut ChaCha12Rng) -> f64 {
    rng.random::<f64>()
}

/// One draw from `N(mu, sigma^2)` conditioned on `[lo, hi]`, via the inverse
/// CDF of the truncated range.
pub fn sample_truncnorm(
    mu: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha12Rng,
) -> Result<f64, SimError> {
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(SimError::DegenerateRange { lo, hi });
    }
    if sigma <= 0.0 {
        return Err(SimError::BadModel(format!("sigma {sigma}")));
    }
    let norm = Normal::standard();
    let a = norm.cdf((lo - mu) / sigma);
    let b = norm.cdf((hi - mu) / sigma);
    let p = (a + uniform(rng) * (b - a)).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
    let x = mu + sigma * norm.inverse_cdf(p);
    Ok(x.clamp(lo, hi))
}

fn sample_gaussian(mu: f64, rng: &mut ChaCha12Rng) -> f64 {
    let p = uniform(rng).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
    mu + Normal::standard().inverse_cdf(p)
}

/// Generate a world: arrivals at `t = 1` and each later `t` with probability
/// `p`; decision grid `{t - 1 : arrival at t >= 2} ∪ {T}`; iid truths; one
/// observation per unit time from each task's arrival through the horizon.
pub fn gen_world(config: &WorldConfig) -> Result<World, SimError> {
    config.validate()?;
    let t_max = config.horizon;

    let mut arrivals = vec![1i64];
    {
        let mut rng = substream(config.seed, STREAM_ARRIVALS);
        for t in 2..=t_max {
            if uniform(&mut rng) < config.arrival_prob {
                arrivals.push(t);
            }
        }
    }
    let mut times: Vec<Time> = arrivals[1..].iter().map(|t| t - 1).collect();
    times.push(t_max);

    let n = arrivals.len();
    let truths: Vec<Arm> = {
        let mut rng = substream(config.seed, STREAM_TRUTHS);
        (0..n)
            .map(|_| {
                if uniform(&mut rng) < config.pi_plus {
                    Arm::A
                } else {
                    Arm::B
                }
            })
            .collect()
    };

    let mut data = Vec::with_capacity(n);
    let mut task_seeds = Vec::with_capacity(n);
    for j in 1..=n {
        let stream_id = STREAM_TASK_BASE + j as u64;
        task_seeds.push(stream_id);
        let mut rng = substream(config.seed, stream_id);
        let sign = match truths[j - 1] {
            Arm::A => 1.0,
            Arm::B => -1.0,
        };
        let samples = (arrivals[j - 1]..=t_max)
            .map(|t| {
                let x = match config.model {
                    DataModel::TruncGauss { mu, bound } => {
                        sample_truncnorm(sign * mu, 1.0, -bound, bound, &mut rng)?
                    }
                    DataModel::Gauss { mu } => sample_gaussian(sign * mu, &mut rng),
                };
                Ok((t, x))
            })
            .collect::<Result<Vec<_>, SimError>>()?;
        data.push(TaskData::Stream(TaskStream { samples }));
    }

    let world = World {
        grid: DecisionGrid::new(times, arrivals)?,
        truths,
        data,
        obs_lag: 0,
        source: WorldSource::Generated(*config),
        task_seeds,
    };
    world.validate()?;
    Ok(world)
}

/// Counterexample experiment defaults (horizon, arrival probability, target
/// level).
pub const COUNTEREXAMPLE_HORIZON: Time = 100;
pub const COUNTEREXAMPLE_ALPHA: f64 = 0.1;

/// Static-p-value world shared by both counterexamples: 1-per-time arrivals
/// over the default horizon, truth `A` iff `mu >= 0`, and per-task constant
/// directional p-values — the informative direction from `1 - Phi(Y)` or
/// `Phi(Y)` with `Y ~ N(mu, 0.25)`, the other direction uniform.
fn static_world(mus: Vec<f64>, seed: u64, which: u8) -> Result<(World, Vec<f64>), SimError> {
    let n = mus.len();
    let norm = Normal::standard();
    let mut truths = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n);
    for (idx, &mu) in mus.iter().enumerate() {
        let truth = if mu >= 0.0 { Arm::A } else { Arm::B };
        truths.push(truth);
        let mut rng = substream(seed, STREAM_TASK_BASE + (idx as u64 + 1));
        let y =
            mu + 0.5 * norm.inverse_cdf(uniform(&mut rng).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16));
        let u = uniform(&mut rng);
        let (p_a, p_b) = match truth {
            Arm::A => (1.0 - norm.cdf(y), u),
            Arm::B => (u, norm.cdf(y)),
        };
        data.push(TaskData::StaticPvalues { p_a, p_b });
    }
    let arrivals: Vec<Time> = (1..=n as Time).collect();
    let times: Vec<Time> = (1..=COUNTEREXAMPLE_HORIZON).collect();
    let world = World {
        grid: DecisionGrid::new(times, arrivals)?,
        truths,
        data,
        obs_lag: 0,
        source: WorldSource::Counterexample { which, seed },
        task_seeds: (1..=n as u64).map(|j| STREAM_TASK_BASE + j).collect(),
    };
    Ok((world, mus))
}

/// First counterexample world: 500 tasks with means drawn from
/// `Ber(0.5) - 0.5`. Returns the world and the mean vector.
pub fn gen_counterexample1(seed: u64) -> Result<(World, Vec<f64>), SimError> {
    let mut rng = substream(seed, STREAM_TRUTHS);
    let mus: Vec<f64> = (0..500)
        .map(|_| if uniform(&mut rng) < 0.5 { -0.5 } else { 0.5 })
        .collect();
    static_world(mus, seed, 1)
}

/// Second counterexample world: 100 tasks with the fixed block pattern of
/// means (strong 2.5 blocks interleaved with near-null blocks).
pub fn gen_counterexample2(seed: u64) -> Result<(World, Vec<f64>), SimError> {
    let mut mus = Vec::with_capacity(100);
    for j in 1..=100usize {
        let mu = match j {
            1..=20 => 2.5,
            21..=50 => 0.01,
            51..=60 => 2.5,
            61..=70 => 0.001,
            71..=80 => 2.5,
            _ => 0.001,
        };
        mus.push(mu);
    }
    static_world(mus, seed, 2)
}

/// Regenerate a world from its recorded source and verify it matches. Used
/// to validate pinned fixtures against generator drift.
pub fn verify_fixture(world: &World) -> Result<bool, SimError> {
    let regenerated = match &world.source {
        WorldSource::Generated(config) => gen_world(config)?,
        WorldSource::Counterexample { which: 1, seed } => gen_counterexample1(*seed)?.0,
        WorldSource::Counterexample { which: _, seed } => gen_counterexample2(*seed)?.0,
        WorldSource::Replay { .. } | WorldSource::Scripted => return Ok(true),
    };
    Ok(regenerated == *world)
}
