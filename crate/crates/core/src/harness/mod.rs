//! Experiment orchestration: training runs, paired evaluation, filter sweeps,
//! benchmarks and reports.

mod config;
mod evaluate;
mod report;
pub mod svg;
mod sweep;
mod train;

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::policies::EncoderId;
use crate::rng::{derive_seed, substream, Stream};
use crate::{Error, Result};

pub use config::{ExperimentConfig, LogConfig, Preset, SweepConfig};
pub use evaluate::{
    benchmark, eval_set_hash, evaluate, median, play_episode, summarize, write_records,
    BenchmarkReport, EpisodeRecord, MethodSummary, Policy,
};
pub use report::report;
pub use sweep::{pf_sweep, SweepReport, SweepRow};
pub use train::{
    load_checkpoint, read_curve, run_dir, smooth, train_all, train_run, CheckpointMeta, CurveRow,
    TrainSummary,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(rename = "rule_based_1")]
    RuleBased1,
    #[serde(rename = "rule_based_5")]
    RuleBased5,
    RlLog,
    #[serde(rename = "rl_est_1")]
    RlEst1,
    #[serde(rename = "rl_est_5")]
    RlEst5,
    OracleTrue,
    OracleLookahead,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::RuleBased1,
        Method::RuleBased5,
        Method::RlLog,
        Method::RlEst1,
        Method::RlEst5,
        Method::OracleTrue,
        Method::OracleLookahead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::RuleBased1 => "rule_based_1",
            Method::RuleBased5 => "rule_based_5",
            Method::RlLog => "rl_log",
            Method::RlEst1 => "rl_est_1",
            Method::RlEst5 => "rl_est_5",
            Method::OracleTrue => "oracle_true",
            Method::OracleLookahead => "oracle_lookahead",
        }
    }

    /// Encoder of a learned method; `None` for the rule-based ones.
    pub fn encoder(self) -> Option<EncoderId> {
        match self {
            Method::RuleBased1 | Method::RuleBased5 => None,
            Method::RlLog => Some(EncoderId::RlLog),
            Method::RlEst1 => Some(EncoderId::RlEst1),
            Method::RlEst5 => Some(EncoderId::RlEst5),
            Method::OracleTrue => Some(EncoderId::OracleTrue),
            Method::OracleLookahead => Some(EncoderId::OracleLookahead),
        }
    }

    pub fn is_learned(self) -> bool {
        self.encoder().is_some()
    }

    /// Filter estimates consumed by the method; zero when it runs no filter.
    pub fn n_best(self) -> usize {
        match self {
            Method::RuleBased1 | Method::RlEst1 => 1,
            Method::RuleBased5 | Method::RlEst5 => 5,
            _ => 0,
        }
    }

    pub fn uses_filter(self) -> bool {
        self.n_best() > 0
    }

    pub fn learned() -> impl Iterator<Item = Method> {
        Self::ALL.into_iter().filter(|m| m.is_learned())
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown method {s:?}")))
    }
}

/// Every random source of one episode, derived from a single base seed.
#[derive(Debug, Clone)]
pub struct EpisodeSeeds {
    pub realization: u64,
    pub noise: u64,
    pub filter: ChaCha8Rng,
    pub lookahead: ChaCha8Rng,
}

impl EpisodeSeeds {
    fn from_base(base: u64) -> Self {
        Self {
            realization: base,
            noise: derive_seed(base, Stream::Environment, 1),
            filter: substream(base, Stream::Filter, 0),
            lookahead: substream(base, Stream::Lookahead, 0),
        }
    }

    pub fn training(seed: u64, episode: usize) -> Self {
        Self::from_base(derive_seed(seed, Stream::Environment, episode as u64))
    }

    pub fn evaluation(eval_seed: u64, realization: usize) -> Self {
        Self::from_base(derive_seed(eval_seed, Stream::Evaluation, realization as u64))
    }

    pub fn sweep(seed: u64, realization: usize) -> Self {
        Self::from_base(derive_seed(seed, Stream::Sweep, realization as u64))
    }
}

/// Runs `f` on a pool of `threads` workers (0 means one per core).
pub fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
