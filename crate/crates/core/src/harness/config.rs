use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Method;
use crate::dqn::AgentConfig;
use crate::environment::EnvConfig;
use crate::particle_filter::FilterConfig;
use crate::policies::RuleBasedConfig;
use crate::rng::{derive_seed, Stream};
use crate::stratigraphy::{load_offset_log, synth_offset_log_with_thickness, OffsetLog};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Full,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            _ => Err(Error::Usage(format!("unknown preset {s:?} (desk|full)"))),
        }
    }
}

/// Offset log used as the reference profile: a CSV file, or the synthetic
/// profile drawn from `synthetic_seed` when no path is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogConfig {
    pub path: Option<PathBuf>,
    pub rescale: bool,
    pub synthetic_seed: u64,
}

impl Default for LogConfig {
    fn default() -> Self {
        Self {
            path: None,
            rescale: false,
            synthetic_seed: 7,
        }
    }
}

impl LogConfig {
    pub fn load(&self, thickness: f64) -> Result<Arc<OffsetLog>> {
        Ok(Arc::new(match &self.path {
            Some(p) => load_offset_log(p, self.rescale)?,
            None => synth_offset_log_with_thickness(self.synthetic_seed, thickness),
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub realizations: usize,
    pub n_par: Vec<usize>,
    pub n_best: Vec<usize>,
    /// Particle count used for the `n_best` sweep.
    pub n_best_at: usize,
    /// Action indices played at each decision.
    pub plan: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            realizations: 100,
            n_par: vec![32, 64, 128, 256, 512, 1024],
            n_best: (1..=8).collect(),
            n_best_at: 128,
            // three full build-downs to leave the landing at 95 degrees, one
            // more to level off at 90, then hold
            plan: vec![0, 0, 0, 0, 5, 5, 5, 5, 5, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Master seed: training seeds and the evaluation set derive from it.
    pub seed: u64,
    /// Explicit training seeds. When empty, `n_seeds` consecutive seeds
    /// starting at `seed` are used.
    pub seeds: Vec<u64>,
    pub n_seeds: usize,
    pub eval_realizations: usize,
    /// Evaluation-set seed; derived from `seed` when absent.
    pub eval_seed: Option<u64>,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses one per core.
    pub threads: usize,
    pub checkpoint_every: usize,
    /// Fill the `wall_ms` column of training curves. Off by default so that
    /// curves are byte-reproducible.
    pub record_wall_time: bool,
    /// Network steering the landing of the rule-based methods. Defaults to
    /// the first `rl_est_1` seed under `output_dir`.
    pub landing_checkpoint: Option<PathBuf>,
    pub log: LogConfig,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub filter: FilterConfig,
    pub rule_based: RuleBasedConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::RlEst1,
            seed: 42,
            seeds: Vec::new(),
            n_seeds: 11,
            eval_realizations: 1000,
            eval_seed: None,
            output_dir: PathBuf::from("out"),
            threads: 0,
            checkpoint_every: 1000,
            record_wall_time: false,
            landing_checkpoint: None,
            log: LogConfig::default(),
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            filter: FilterConfig::default(),
            rule_based: RuleBasedConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn preset(preset: Preset) -> Self {
        let mut cfg = Self::default();
        cfg.apply_preset(preset);
        cfg
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        let (seeds, episodes, evals, n_par) = match preset {
            Preset::Desk => (3, 5000, 200, 64),
            Preset::Full => (11, 20_000, 1000, 128),
        };
        self.n_seeds = seeds;
        self.seeds.clear();
        self.agent.episodes = episodes;
        self.eval_realizations = evals;
        self.filter.n_par = n_par;
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        self.rule_based.validate()?;
        if self.seeds.is_empty() && self.n_seeds == 0 {
            return Err(Error::Config("no training seeds".into()));
        }
        if self.eval_realizations == 0 {
            return Err(Error::Config("eval_realizations must be positive".into()));
        }
        if self.filter.n_par < 5 || self.filter.n_par < self.rule_based.n_best {
            return Err(Error::Config(format!(
                "filter.n_par = {} is too small",
                self.filter.n_par
            )));
        }
        if self.sweep.plan.len() != self.env.n_decisions
            || self.sweep.plan.iter().any(|&a| a >= self.env.steering.n_actions())
        {
            return Err(Error::Config("sweep.plan needs one valid action per decision".into()));
        }
        if self.sweep.n_par.is_empty() || self.sweep.n_best.is_empty() || self.sweep.realizations == 0 {
            return Err(Error::Config("sweep lists must be non-empty".into()));
        }
        Ok(())
    }

    pub fn training_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.n_seeds as u64).map(|i| self.seed + i).collect()
        } else {
            self.seeds.clone()
        }
    }

    pub fn eval_seed(&self) -> u64 {
        self.eval_seed
            .unwrap_or_else(|| derive_seed(self.seed, Stream::Evaluation, u64::MAX >> 16))
    }

    /// Filter settings for `method`, with its `n_best`.
    pub fn filter_for(&self, method: Method) -> FilterConfig {
        FilterConfig {
            n_best: method.n_best().max(1),
            ..self.filter.clone()
        }
    }

    pub fn load_log(&self) -> Result<Arc<OffsetLog>> {
        self.log.load(self.env.stratigraphy.thickness)
    }
}
