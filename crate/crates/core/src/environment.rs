//! The episodic geosteering decision process.
//!
//! An episode starts above the reservoir, runs three landing decisions with
//! relaxed inclination bounds, then seven drilling decisions. Each decision
//! advances 32 stations. Only drilling-phase stations are scored: 0 inside
//! the reservoir, -1 outside.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::stratigraphy::{OffsetLog, Realization, StratigraphyConfig};
use crate::trajectory::{self, Phase, SteeringConstraints, WellState};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub stratigraphy: StratigraphyConfig,
    pub steering: SteeringConstraints,
    pub initial_inclination: f64,
    pub landing_decisions: usize,
    pub n_decisions: usize,
    /// Score landing stations too. Off by default: landing stations count 0.
    pub landing_penalty: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            stratigraphy: StratigraphyConfig::default(),
            steering: SteeringConstraints::default(),
            initial_inclination: 110.0,
            landing_decisions: 3,
            n_decisions: 10,
            landing_penalty: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.stratigraphy.validate()?;
        self.steering.validate()?;
        if self.n_decisions * self.steering.interval_stations != self.stratigraphy.n_stations {
            return Err(Error::Config(format!(
                "{} decisions x {} stations does not cover {} stations",
                self.n_decisions, self.steering.interval_stations, self.stratigraphy.n_stations
            )));
        }
        if self.landing_decisions > self.n_decisions {
            return Err(Error::Config("landing_decisions exceeds n_decisions".into()));
        }
        Ok(())
    }

    pub fn landing_stations(&self) -> usize {
        self.landing_decisions * self.steering.interval_stations
    }

    /// Number of stations that can be scored; the reward floor is its negative.
    pub fn scored_stations(&self) -> usize {
        if self.landing_penalty {
            self.stratigraphy.n_stations
        } else {
            self.stratigraphy.n_stations - self.landing_stations()
        }
    }
}

/// Fraction of scored stations inside the reservoir, in percent.
pub fn contact_percent(reward_total: i32, scored_stations: usize) -> f64 {
    contact_of_reward(f64::from(reward_total), scored_stations)
}

/// Same identity for a fractional (mean or median) reward.
pub fn contact_of_reward(reward: f64, scored_stations: usize) -> f64 {
    let n = scored_stations as f64;
    (n + reward) / n * 100.0
}

pub fn reward_point(bit_tvd: f64, top: f64, bottom: f64) -> i32 {
    if top <= bit_tvd && bit_tvd <= bottom {
        0
    } else {
        -1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distances {
    pub d_top: f64,
    pub d_bottom: f64,
    pub d_min: f64,
}

/// Signed distances from the bit to each boundary; negative means outside.
pub fn distances(bit_tvd: f64, top: f64, bottom: f64) -> Distances {
    let d_top = bit_tvd - top;
    let d_bottom = bottom - bit_tvd;
    Distances {
        d_top,
        d_bottom,
        d_min: d_top.min(d_bottom),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub stations: Vec<WellState>,
    pub gammas: Vec<f64>,
    pub applied_delta: f64,
    pub reward: i32,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct EnvState {
    realization: Realization,
    log: Arc<OffsetLog>,
    config: EnvConfig,
    /// One entry per station visited so far, starting at station 0.
    path: Vec<WellState>,
    gamma_history: Vec<f64>,
    station_rewards: Vec<i32>,
    decision_index: usize,
    reward_total: i32,
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
    pub rng_seed: u64,
}

impl EnvState {
    pub fn reset(
        realization: Realization,
        log: Arc<OffsetLog>,
        config: &EnvConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if realization.n_stations() != config.stratigraphy.n_stations {
            return Err(Error::Config(format!(
                "realization has {} stations, scenario expects {}",
                realization.n_stations(),
                config.stratigraphy.n_stations
            )));
        }
        let tvd = realization.top(0) - realization.start_offset;
        let rel = tvd - realization.top(0);
        if !log.covers(rel, rel) {
            let (lo, hi) = log.span();
            return Err(Error::Config(format!(
                "offset log spans [{lo}, {hi}] ft but the well starts at relative depth {rel}"
            )));
        }
        let noise = if config.stratigraphy.measurement_noise > 0.0 {
            let normal = Normal::new(0.0, config.stratigraphy.measurement_noise)
                .map_err(|e| Error::Config(e.to_string()))?;
            Some((normal, ChaCha8Rng::seed_from_u64(seed)))
        } else {
            None
        };
        let start = WellState {
            station: 0,
            tvd,
            inclination: config.initial_inclination,
        };
        let mut env = Self {
            realization,
            log,
            config: config.clone(),
            path: vec![start],
            gamma_history: Vec::with_capacity(config.stratigraphy.n_stations + 1),
            station_rewards: vec![0],
            decision_index: 0,
            reward_total: 0,
            noise,
            rng_seed: seed,
        };
        let g = env.observe(&start);
        env.gamma_history.push(g);
        Ok(env)
    }

    fn observe(&mut self, s: &WellState) -> f64 {
        let rel = s.tvd - self.realization.top(s.station);
        let g = self.log.gamma_at(rel);
        match &mut self.noise {
            Some((normal, rng)) => (g + normal.sample(rng)).clamp(0.0, 1.0),
            None => g,
        }
    }

    pub fn step(&mut self, action_index: usize) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let steering = &self.config.steering;
        if action_index >= steering.n_actions() {
            return Err(Error::Usage(format!(
                "action {action_index} outside 0..{}",
                steering.n_actions()
            )));
        }
        let phase = self.phase();
        let well = *self.well();
        let applied =
            trajectory::clamp_action(&well, steering.delta_of(action_index), steering, phase);
        let stations = trajectory::step_interval(&well, applied, steering)?;
        let landing_end = self.config.landing_stations();
        let mut gammas = Vec::with_capacity(stations.len());
        let mut reward = 0;
        for s in &stations {
            let g = self.observe(s);
            gammas.push(g);
            self.gamma_history.push(g);
            let r = if s.station > landing_end || self.config.landing_penalty {
                reward_point(
                    s.tvd,
                    self.realization.top(s.station),
                    self.realization.bottom(s.station),
                )
            } else {
                0
            };
            self.station_rewards.push(r);
            reward += r;
        }
        self.path.extend_from_slice(&stations);
        self.decision_index += 1;
        self.reward_total += reward;
        Ok(StepOutcome {
            stations,
            gammas,
            applied_delta: applied,
            reward,
            done: self.is_done(),
        })
    }

    pub fn phase(&self) -> Phase {
        if self.decision_index < self.config.landing_decisions {
            Phase::Landing
        } else {
            Phase::Drilling
        }
    }

    pub fn is_done(&self) -> bool {
        self.decision_index >= self.config.n_decisions
    }

    pub fn well(&self) -> &WellState {
        self.path.last().expect("path always holds station 0")
    }

    pub fn path(&self) -> &[WellState] {
        &self.path
    }

    pub fn gamma_history(&self) -> &[f64] {
        &self.gamma_history
    }

    pub fn decision_index(&self) -> usize {
        self.decision_index
    }

    pub fn reward_total(&self) -> i32 {
        self.reward_total
    }

    pub fn realization(&self) -> &Realization {
        &self.realization
    }

    pub fn log(&self) -> &Arc<OffsetLog> {
        &self.log
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn contact_percent(&self) -> f64 {
        contact_percent(self.reward_total, self.config.scored_stations())
    }

    /// Signed distances from the current bit to the true boundaries.
    pub fn true_distances(&self) -> Distances {
        let w = self.well();
        distances(
            w.tvd,
            self.realization.top(w.station),
            self.realization.bottom(w.station),
        )
    }

    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Validation(e.to_string()))?;
        let map = |e: csv::Error| Error::Validation(format!("trace export: {e}"));
        w.write_record([
            "station",
            "tvd_ft",
            "inclination_deg",
            "top_ft",
            "bottom_ft",
            "gamma",
            "reward",
        ])
        .map_err(map)?;
        for (i, s) in self.path.iter().enumerate() {
            w.write_record([
                s.station.to_string(),
                s.tvd.to_string(),
                s.inclination.to_string(),
                self.realization.top(s.station).to_string(),
                self.realization.bottom(s.station).to_string(),
                self.gamma_history[i].to_string(),
                self.station_rewards[i].to_string(),
            ])
            .map_err(map)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
