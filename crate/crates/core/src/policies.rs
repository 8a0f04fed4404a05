//! State encoders, the greedy look-ahead rule, and an episode driver that
//! keeps a boundary tracker in step with the well.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dqn::DecisionProcess;
use crate::environment::{distances, EnvState, StepOutcome};
use crate::neuralnet::LayerSpec;
use crate::particle_filter::{
    lookahead, BoundaryEstimate, BoundaryTracker, FilterConfig, Particle, TransitionModel,
};
use crate::stratigraphy::Realization;
use crate::trajectory::{clamp_action, step_interval, Phase, SteeringConstraints, WellState};
use crate::{Error, Result};

pub const DISTANCE_SCALE: f64 = 100.0;
pub const INCLINATION_SCALE: f64 = 20.0;
pub const LOG_WINDOW: usize = 32;
/// Look-ahead probe offsets, in stations, for the look-ahead oracle.
pub const PROBE_OFFSETS: [usize; 4] = [8, 16, 24, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderId {
    RlLog,
    #[serde(rename = "rl_est_1")]
    RlEst1,
    #[serde(rename = "rl_est_5")]
    RlEst5,
    OracleTrue,
    OracleLookahead,
}

impl EncoderId {
    pub const ALL: [EncoderId; 5] = [
        EncoderId::RlLog,
        EncoderId::RlEst1,
        EncoderId::RlEst5,
        EncoderId::OracleTrue,
        EncoderId::OracleLookahead,
    ];

    pub fn dim(self) -> usize {
        match self {
            EncoderId::RlLog => LOG_WINDOW + 2,
            EncoderId::RlEst1 => 5,
            EncoderId::RlEst5 => 17,
            EncoderId::OracleTrue => 4,
            EncoderId::OracleLookahead => 4 + 2 * PROBE_OFFSETS.len(),
        }
    }

    /// Number of filter estimates consumed, zero for encoders without a filter.
    pub fn n_best(self) -> usize {
        match self {
            EncoderId::RlEst1 => 1,
            EncoderId::RlEst5 => 5,
            _ => 0,
        }
    }

    pub fn uses_filter(self) -> bool {
        self.n_best() > 0
    }

    /// Hidden widths are multiples of the input width: 4-8-4 for the raw-log
    /// encoder, 2-4-2 otherwise.
    pub fn layer_spec(self, n_actions: usize) -> LayerSpec {
        let factors = match self {
            EncoderId::RlLog => [4, 8, 4],
            _ => [2, 4, 2],
        };
        LayerSpec::scaled(self.dim(), n_actions, factors)
    }

    pub fn name(self) -> &'static str {
        match self {
            EncoderId::RlLog => "rl_log",
            EncoderId::RlEst1 => "rl_est_1",
            EncoderId::RlEst5 => "rl_est_5",
            EncoderId::OracleTrue => "oracle_true",
            EncoderId::OracleLookahead => "oracle_lookahead",
        }
    }
}

impl fmt::Display for EncoderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown encoder {s:?}")))
    }
}

fn tail_features(inclination: f64, station: usize, n_stations: usize) -> [f64; 2] {
    [
        (inclination - 90.0) / INCLINATION_SCALE,
        station as f64 / n_stations as f64,
    ]
}

/// The last `LOG_WINDOW` readings ending at the current station, padded at
/// the front with the first reading.
pub fn rl_log_window(gamma_history: &[f64]) -> Vec<f64> {
    let first = gamma_history.first().copied().unwrap_or(0.0);
    let have = gamma_history.len().min(LOG_WINDOW);
    let mut w = vec![first; LOG_WINDOW - have];
    w.extend_from_slice(&gamma_history[gamma_history.len() - have..]);
    w
}

pub fn encode_rl_log(window: &[f64], inclination: f64, station: usize, n_stations: usize) -> Result<Vec<f64>> {
    if window.len() != LOG_WINDOW {
        return Err(Error::Usage(format!(
            "log window has {} readings, expected {LOG_WINDOW}",
            window.len()
        )));
    }
    let mut v = window.to_vec();
    v.extend(tail_features(inclination, station, n_stations));
    Ok(v)
}

pub fn encode_rl_est(
    encoder: EncoderId,
    estimates: &[BoundaryEstimate],
    bit_tvd: f64,
    inclination: f64,
    station: usize,
    n_stations: usize,
) -> Result<Vec<f64>> {
    if encoder.n_best() == 0 || estimates.len() != encoder.n_best() {
        return Err(Error::Usage(format!(
            "{encoder} takes {} estimates, got {}",
            encoder.n_best(),
            estimates.len()
        )));
    }
    let mut v = Vec::with_capacity(encoder.dim());
    for e in estimates {
        let d = distances(bit_tvd, e.top_depth, e.bottom_depth);
        v.extend([
            d.d_top / DISTANCE_SCALE,
            d.d_bottom / DISTANCE_SCALE,
            e.normalized_weight,
        ]);
    }
    v.extend(tail_features(inclination, station, n_stations));
    Ok(v)
}

/// Truth-fed state; with `lookahead` the true boundaries relative to the
/// current bit are appended at the probe stations, clamped to the last one.
pub fn encode_oracle(truth: &Realization, well: &WellState, lookahead: bool) -> Vec<f64> {
    let k = well.station;
    let d = distances(well.tvd, truth.top(k), truth.bottom(k));
    let mut v = vec![d.d_top / DISTANCE_SCALE, d.d_bottom / DISTANCE_SCALE];
    v.extend(tail_features(well.inclination, k, truth.n_stations()));
    if lookahead {
        for off in PROBE_OFFSETS {
            let s = (k + off).min(truth.n_stations());
            v.push((truth.top(s) - well.tvd) / DISTANCE_SCALE);
            v.push((truth.bottom(s) - well.tvd) / DISTANCE_SCALE);
        }
    }
    v
}

/// Parabolic station reward: 1 at the layer centre, 0 on a boundary,
/// negative outside.
pub fn station_reward(d_min: f64, thickness: f64) -> f64 {
    let u = d_min / thickness - 0.5;
    1.0 - 4.0 * u * u
}

/// Weighted sum over particles of each particle's summed station rewards.
pub fn expected_reward(weights: &[f64], rewards: &[Vec<f64>]) -> f64 {
    weights
        .iter()
        .zip(rewards)
        .map(|(w, row)| w * row.iter().sum::<f64>())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleBasedConfig {
    /// Number of best particles consulted.
    pub n_best: usize,
    /// Look-ahead horizon in stations.
    pub horizon: usize,
    /// Layer thickness used by the station reward.
    pub thickness: f64,
    /// Look-ahead draws per particle, averaged.
    pub draws: usize,
}

impl Default for RuleBasedConfig {
    fn default() -> Self {
        Self {
            n_best: 1,
            horizon: 32,
            thickness: 20.0,
            draws: 1,
        }
    }
}

impl RuleBasedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_best == 0 || self.horizon == 0 || self.draws == 0 || !(self.thickness > 0.0) {
            return Err(Error::Config(format!("invalid rule-based config: {self:?}")));
        }
        Ok(())
    }
}

/// A weighted forecast of (top, bottom) over the next interval.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPath {
    pub weight: f64,
    pub boundaries: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyDecision {
    pub action: usize,
    /// Expected reward per action index.
    pub scores: Vec<f64>,
}

/// Action indices from most to least preferred when scores tie: smaller
/// magnitude first, then the negative change.
fn preference_order(steering: &SteeringConstraints) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..steering.n_actions()).collect();
    idx.sort_by(|&a, &b| {
        let (da, db) = (steering.delta_of(a), steering.delta_of(b));
        da.abs().total_cmp(&db.abs()).then(da.total_cmp(&db))
    });
    idx
}

/// Scores every action by projecting the well one interval and summing the
/// parabolic reward along each forecast path; picks the best.
pub fn greedy_action(
    paths: &[BoundaryPath],
    well: &WellState,
    steering: &SteeringConstraints,
    phase: Phase,
    thickness: f64,
) -> Result<GreedyDecision> {
    let mut scores = vec![0.0; steering.n_actions()];
    for (a, score) in scores.iter_mut().enumerate() {
        let applied = clamp_action(well, steering.delta_of(a), steering, phase);
        let stations = step_interval(well, applied, steering)?;
        let weights: Vec<f64> = paths.iter().map(|p| p.weight).collect();
        let rewards: Vec<Vec<f64>> = paths
            .iter()
            .map(|p| {
                stations
                    .iter()
                    .zip(&p.boundaries)
                    .map(|(s, &(top, bottom))| {
                        station_reward(distances(s.tvd, top, bottom).d_min, thickness)
                    })
                    .collect()
            })
            .collect();
        *score = expected_reward(&weights, &rewards);
    }
    let order = preference_order(steering);
    let mut action = order[0];
    for &a in &order[1..] {
        if scores[a] > scores[action] {
            action = a;
        }
    }
    Ok(GreedyDecision { action, scores })
}

/// Forecast paths for the selected particles: `draws` independent look-ahead
/// draws each, sharing the particle's weight.
pub fn forecast_paths(
    estimates: &[BoundaryEstimate],
    model: &TransitionModel,
    config: &RuleBasedConfig,
    rng: &mut impl Rng,
) -> Vec<BoundaryPath> {
    let total: f64 = estimates.iter().map(|e| e.normalized_weight).sum();
    let mut paths = Vec::with_capacity(estimates.len() * config.draws);
    for e in estimates {
        let start = Particle {
            top_depth: e.top_depth,
            slope: e.slope,
        };
        let thickness = e.bottom_depth - e.top_depth;
        for _ in 0..config.draws {
            paths.push(BoundaryPath {
                weight: e.normalized_weight / total / config.draws as f64,
                boundaries: lookahead(start, thickness, model, config.horizon, rng),
            });
        }
    }
    paths
}

/// Greedy drilling decision from the best particles. Each particle's
/// look-ahead is drawn once and shared by all candidate actions.
pub fn rule_based_decide(
    estimates: &[BoundaryEstimate],
    well: &WellState,
    steering: &SteeringConstraints,
    model: &TransitionModel,
    config: &RuleBasedConfig,
    rng: &mut impl Rng,
) -> Result<(GreedyDecision, Vec<BoundaryPath>)> {
    config.validate()?;
    if estimates.is_empty() {
        return Err(Error::Usage("rule-based decision needs at least one estimate".into()));
    }
    let paths = forecast_paths(estimates, model, config, rng);
    let decision = greedy_action(&paths, well, steering, Phase::Drilling, config.thickness)?;
    Ok((decision, paths))
}

/// The true boundaries over the next `n` stations as a single certain path.
pub fn truth_path(truth: &Realization, station: usize, n: usize) -> BoundaryPath {
    BoundaryPath {
        weight: 1.0,
        boundaries: (1..=n)
            .map(|j| (truth.top(station + j), truth.bottom(station + j)))
            .collect(),
    }
}

/// Exhaustive landing plan against the true boundaries: every landing action
/// sequence is played out and followed by [`greedy_action`] on the true
/// boundaries to the end of the section. Returns the plan that keeps the most
/// post-landing stations inside the layer; ties go to the earlier plan in
/// action preference order.
pub fn plan_landing_on_truth(
    truth: &Realization,
    start: &WellState,
    steering: &SteeringConstraints,
    landing_decisions: usize,
    thickness: f64,
) -> Result<Vec<usize>> {
    let order = preference_order(steering);
    let n = order.len();
    let mut best: Option<(usize, Vec<usize>)> = None;
    for code in 0..n.pow(landing_decisions as u32) {
        let mut plan = vec![0; landing_decisions];
        let mut c = code;
        for slot in plan.iter_mut().rev() {
            *slot = order[c % n];
            c /= n;
        }
        let mut well = *start;
        for &a in &plan {
            let applied = clamp_action(&well, steering.delta_of(a), steering, Phase::Landing);
            well = *step_interval(&well, applied, steering)?.last().expect("interval has stations");
        }
        let mut inside = 0;
        while well.station < truth.n_stations() {
            let path = truth_path(truth, well.station, steering.interval_stations);
            let d = greedy_action(&[path], &well, steering, Phase::Drilling, thickness)?;
            let applied = clamp_action(&well, steering.delta_of(d.action), steering, Phase::Drilling);
            let stations = step_interval(&well, applied, steering)?;
            inside += stations
                .iter()
                .filter(|s| truth.top(s.station) <= s.tvd && s.tvd <= truth.bottom(s.station))
                .count();
            well = *stations.last().expect("interval has stations");
        }
        if best.as_ref().is_none_or(|(b, _)| inside > *b) {
            best = Some((inside, plan));
        }
    }
    Ok(best.map(|(_, plan)| plan).unwrap_or_default())
}

/// An environment episode with an optional boundary tracker fed by every
/// observed station.
#[derive(Debug, Clone)]
pub struct SteeringEpisode {
    env: EnvState,
    encoder: EncoderId,
    tracker: Option<BoundaryTracker>,
}

impl SteeringEpisode {
    /// `filter` starts a tracker at station 0 recording at least
    /// `record_best` estimates per station.
    pub fn new(
        env: EnvState,
        encoder: EncoderId,
        filter: Option<(&FilterConfig, TransitionModel, ChaCha8Rng)>,
        record_best: usize,
    ) -> Result<Self> {
        let tracker = match filter {
            Some((cfg, model, rng)) => {
                let well = *env.well();
                let thickness = env.realization().thickness;
                Some(BoundaryTracker::start(
                    well.tvd,
                    env.gamma_history()[0],
                    env.log().clone(),
                    model,
                    cfg,
                    thickness,
                    record_best,
                    rng,
                )?)
            }
            None if encoder.uses_filter() => {
                return Err(Error::Usage(format!("{encoder} needs a boundary tracker")))
            }
            None => None,
        };
        Ok(Self {
            env,
            encoder,
            tracker,
        })
    }

    pub fn env(&self) -> &EnvState {
        &self.env
    }

    pub fn tracker(&self) -> Option<&BoundaryTracker> {
        self.tracker.as_ref()
    }

    pub fn encoder(&self) -> EncoderId {
        self.encoder
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let outcome = self.env.step(action)?;
        if let Some(t) = &mut self.tracker {
            for (s, &g) in outcome.stations.iter().zip(&outcome.gammas) {
                t.observe(s.tvd, g)?;
            }
        }
        Ok(outcome)
    }

    /// Current state under any encoder. Filter encoders read the first
    /// `n_best` recorded estimates, renormalized among themselves.
    pub fn encode(&self, encoder: EncoderId) -> Result<Vec<f64>> {
        let well = self.env.well();
        let n = self.env.config().stratigraphy.n_stations;
        match encoder {
            EncoderId::RlLog => encode_rl_log(
                &rl_log_window(self.env.gamma_history()),
                well.inclination,
                well.station,
                n,
            ),
            EncoderId::RlEst1 | EncoderId::RlEst5 => {
                let tracker = self
                    .tracker
                    .as_ref()
                    .ok_or_else(|| Error::Usage(format!("{encoder} needs a boundary tracker")))?;
                let best = &tracker.latest().best;
                let k = encoder.n_best();
                if best.len() < k {
                    return Err(Error::Usage(format!(
                        "{encoder} needs {k} estimates, tracker records {}",
                        best.len()
                    )));
                }
                let total: f64 = best[..k].iter().map(|e| e.normalized_weight).sum();
                let picked: Vec<BoundaryEstimate> = best[..k]
                    .iter()
                    .map(|e| BoundaryEstimate {
                        normalized_weight: e.normalized_weight / total,
                        ..*e
                    })
                    .collect();
                encode_rl_est(encoder, &picked, well.tvd, well.inclination, well.station, n)
            }
            EncoderId::OracleTrue => Ok(encode_oracle(self.env.realization(), well, false)),
            EncoderId::OracleLookahead => Ok(encode_oracle(self.env.realization(), well, true)),
        }
    }
}

impl DecisionProcess for SteeringEpisode {
    fn state(&self) -> Result<Vec<f64>> {
        self.encode(self.encoder)
    }

    fn act(&mut self, action: usize) -> Result<(f64, bool)> {
        let o = self.step(action)?;
        Ok((f64::from(o.reward), o.done))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dqn::{Agent, AgentConfig, Mode};
    use crate::environment::EnvConfig;
    use crate::rng::{derive_seed, substream, Stream};
    use crate::stratigraphy::{generate_realization, synth_offset_log};

    fn flat_truth(top: f64, n: usize) -> Realization {
        Realization {
            top_depth: vec![top; n + 1],
            thickness: 20.0,
            fault_stations: vec![],
            fault_throws: vec![],
            start_offset: 220.0,
            seed: 0,
        }
    }

    fn estimate(top: f64, w: f64) -> BoundaryEstimate {
        BoundaryEstimate {
            top_depth: top,
            bottom_depth: top + 20.0,
            slope: 0.0,
            normalized_weight: w,
            index: 0,
        }
    }

    #[test]
    fn encoder_dimensions() {
        let dims: Vec<usize> = EncoderId::ALL.iter().map(|e| e.dim()).collect();
        assert_eq!(dims, vec![34, 5, 17, 4, 12]);
        assert_eq!(EncoderId::RlLog.layer_spec(11).sizes, vec![34, 136, 272, 136, 11]);
        assert_eq!(EncoderId::RlEst1.layer_spec(11).sizes, vec![5, 10, 20, 10, 11]);
        for e in EncoderId::ALL {
            assert_eq!(e.name().parse::<EncoderId>().unwrap(), e);
            assert_eq!(serde_json::to_string(&e).unwrap(), format!("\"{e}\""));
        }
    }

    #[test]
    fn rl_log_features() {
        let v = encode_rl_log(&[0.5; 32], 90.0, 0, 320).unwrap();
        assert_eq!(v.len(), 34);
        assert!(v[..32].iter().all(|&g| g == 0.5));
        assert_eq!(&v[32..], &[0.0, 0.0]);
        let v = encode_rl_log(&[0.5; 32], 110.0, 96, 320).unwrap();
        assert_eq!(&v[32..], &[1.0, 0.3]);
        assert!(encode_rl_log(&[0.5; 31], 90.0, 0, 320).is_err());

        assert_eq!(rl_log_window(&[0.7]), vec![0.7; 32]);
        let hist: Vec<f64> = (0..40).map(f64::from).collect();
        assert_eq!(rl_log_window(&hist), (8..40).map(f64::from).collect::<Vec<_>>());
        let short = rl_log_window(&[1.0, 2.0, 3.0]);
        assert_eq!(&short[..29], &[1.0; 29]);
        assert_eq!(&short[29..], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn rl_est_features() {
        let e = BoundaryEstimate {
            top_depth: 100.0,
            bottom_depth: 120.0,
            slope: 0.0,
            normalized_weight: 1.0,
            index: 0,
        };
        let v = encode_rl_est(EncoderId::RlEst1, &[e], 105.0, 90.0, 160, 320).unwrap();
        let expect = [0.05, 0.15, 1.0, 0.0, 0.5];
        for (a, b) in v.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{v:?}");
        }
        let v = encode_rl_est(EncoderId::RlEst1, &[e], 90.0, 90.0, 0, 320).unwrap();
        assert!((v[0] + 0.10).abs() < 1e-12);
        let five = vec![estimate(100.0, 0.2); 5];
        assert_eq!(encode_rl_est(EncoderId::RlEst5, &five, 105.0, 90.0, 0, 320).unwrap().len(), 17);
        assert!(encode_rl_est(EncoderId::RlEst5, &[e], 105.0, 90.0, 0, 320).is_err());
        assert!(encode_rl_est(EncoderId::RlLog, &[e], 105.0, 90.0, 0, 320).is_err());
    }

    #[test]
    fn oracle_features() {
        let truth = flat_truth(1000.0, 320);
        let well = WellState {
            station: 100,
            tvd: 1005.0,
            inclination: 90.0,
        };
        let base = encode_oracle(&truth, &well, false);
        assert_eq!(base.len(), 4);
        assert!((base[0] - 0.05).abs() < 1e-12 && (base[1] - 0.15).abs() < 1e-12);
        let la = encode_oracle(&truth, &well, true);
        assert_eq!(la.len(), 12);
        for pair in la[4..].chunks(2) {
            assert_eq!(pair, &[-0.05, 0.15]);
        }

        let mut sloped = flat_truth(1000.0, 320);
        for (k, t) in sloped.top_depth.iter_mut().enumerate() {
            *t = 1000.0 + k as f64;
        }
        let end = WellState {
            station: 320,
            tvd: 1300.0,
            inclination: 90.0,
        };
        let la = encode_oracle(&sloped, &end, true);
        for pair in la[4..].chunks(2) {
            assert!((pair[0] - 0.2).abs() < 1e-12 && (pair[1] - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn station_rewards_and_expectation() {
        assert_eq!(station_reward(0.0, 20.0), 0.0);
        assert_eq!(station_reward(10.0, 20.0), 1.0);
        assert_eq!(station_reward(-10.0, 20.0), -3.0);
        assert!((expected_reward(&[0.6, 0.4], &[vec![4.0, 6.0], vec![5.0]]) - 8.0).abs() < 1e-12);
        assert_eq!(expected_reward(&[1.0], &[vec![1.0, 2.0]]), 3.0);
        assert!((expected_reward(&[0.3, 0.7], &[vec![1.0; 32], vec![1.0; 32]]) - 32.0).abs() < 1e-12);
    }

    #[test]
    fn centered_flat_well_holds() {
        let steering = SteeringConstraints::default();
        let well = WellState {
            station: 160,
            tvd: 110.0,
            inclination: 90.0,
        };
        let model = TransitionModel::noiseless(0.97, 0.6);
        let mut rng = substream(0, Stream::Lookahead, 0);
        let (d, _) = rule_based_decide(
            &[estimate(100.0, 1.0)],
            &well,
            &steering,
            &model,
            &RuleBasedConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(steering.delta_of(d.action), 0.0);
    }

    #[test]
    fn ties_prefer_small_then_negative_changes() {
        let steering = SteeringConstraints::default();
        // At the upper drilling bound every positive change clamps to zero.
        let well = WellState {
            station: 160,
            tvd: 90.0,
            inclination: 94.0,
        };
        let flat = BoundaryPath {
            weight: 1.0,
            boundaries: vec![(-1e6, 1e6); 32],
        };
        let d = greedy_action(&[flat], &well, &steering, Phase::Drilling, 20.0).unwrap();
        assert_eq!(steering.delta_of(d.action), 0.0);
        assert_eq!(preference_order(&steering)[..3], [5, 4, 6]);
    }

    #[test]
    fn decision_ignores_common_weight_scale() {
        let steering = SteeringConstraints::default();
        let model = TransitionModel::from_stratigraphy(&Default::default(), 1.5 / 320.0);
        let well = WellState {
            station: 128,
            tvd: 1004.0,
            inclination: 91.0,
        };
        let cfg = RuleBasedConfig {
            n_best: 5,
            ..RuleBasedConfig::default()
        };
        for seed in 0..20 {
            let ests: Vec<BoundaryEstimate> = (0..5)
                .map(|i| estimate(995.0 + 3.0 * i as f64, 0.1 + 0.05 * i as f64))
                .collect();
            let scaled: Vec<BoundaryEstimate> = ests
                .iter()
                .map(|e| BoundaryEstimate {
                    normalized_weight: e.normalized_weight * 7.5,
                    ..*e
                })
                .collect();
            let a = rule_based_decide(&ests, &well, &steering, &model, &cfg, &mut substream(seed, Stream::Lookahead, 0))
                .unwrap();
            let b = rule_based_decide(&scaled, &well, &steering, &model, &cfg, &mut substream(seed, Stream::Lookahead, 0))
                .unwrap();
            assert_eq!(a.0.action, b.0.action);
        }
    }

    /// Independent scoring of every action against a known boundary path.
    fn brute_force(path: &[(f64, f64)], well: &WellState, steering: &SteeringConstraints) -> usize {
        let mut best = (f64::NEG_INFINITY, 0.0f64, 0usize);
        for a in 0..steering.n_actions() {
            let applied = clamp_action(well, steering.delta_of(a), steering, Phase::Drilling);
            let stations = step_interval(well, applied, steering).unwrap();
            let mut r = 0.0;
            for (s, &(top, bottom)) in stations.iter().zip(path) {
                let d = (s.tvd - top).min(bottom - s.tvd);
                r += 1.0 - 4.0 * (d / 20.0 - 0.5).powi(2);
            }
            let delta = steering.delta_of(a);
            let better = r > best.0
                || (r == best.0 && (delta.abs() < best.1.abs() || (delta.abs() == best.1.abs() && delta < best.1)));
            if better {
                best = (r, delta, a);
            }
        }
        best.2
    }

    #[test]
    fn noiseless_truth_particle_matches_brute_force() {
        let steering = SteeringConstraints::default();
        let model = TransitionModel::noiseless(0.97, 0.6);
        for case in 0..200u64 {
            let mut r = substream(case, Stream::Lookahead, 1);
            let top = 1000.0;
            let slope = r.random_range(-0.5..0.5);
            let well = WellState {
                station: 128,
                tvd: top + r.random_range(-15.0..35.0),
                inclination: r.random_range(86.0..94.0),
            };
            let particle = Particle { top_depth: top, slope };
            let truth = lookahead(particle, 20.0, &model, 32, &mut r);
            let est = BoundaryEstimate {
                top_depth: top,
                bottom_depth: top + 20.0,
                slope,
                normalized_weight: 1.0,
                index: 0,
            };
            let (d, _) = rule_based_decide(&[est], &well, &steering, &model, &RuleBasedConfig::default(), &mut r)
                .unwrap();
            assert_eq!(d.action, brute_force(&truth, &well, &steering), "case {case}");
        }
    }

    fn env_for(seed: u64) -> EnvState {
        let cfg = EnvConfig::default();
        let real = generate_realization(&cfg.stratigraphy, seed).unwrap();
        EnvState::reset(real, Arc::new(synth_offset_log(7)), &cfg, seed).unwrap()
    }

    /// Post-landing reward of a landing plan followed by greedy steering on
    /// the true boundaries.
    fn greedy_followup(env: &EnvState, plan: &[usize]) -> i32 {
        let mut e = env.clone();
        for &p in plan {
            e.step(p).unwrap();
        }
        let steering = e.config().steering.clone();
        while !e.is_done() {
            let path = truth_path(e.realization(), e.well().station, steering.interval_stations);
            let d = greedy_action(&[path], e.well(), &steering, Phase::Drilling, 20.0).unwrap();
            e.step(d.action).unwrap();
        }
        e.reward_total()
    }

    #[test]
    fn truth_landing_beats_fixed_plans() {
        let cfg = EnvConfig::default();
        for seed in 0..4 {
            let env = env_for(seed);
            let plan = plan_landing_on_truth(
                env.realization(),
                env.well(),
                &cfg.steering,
                cfg.landing_decisions,
                20.0,
            )
            .unwrap();
            assert_eq!(plan.len(), 3);
            let planned = greedy_followup(&env, &plan);
            for fixed in [[0, 0, 0], [5, 5, 5], [10, 10, 10], [0, 5, 5], [2, 3, 4]] {
                assert!(planned >= greedy_followup(&env, &fixed), "seed {seed} vs {fixed:?}");
            }
        }
    }

    #[test]
    fn episode_driver_tracks_every_station() {
        let env = env_for(3);
        let cfg = FilterConfig {
            n_par: 32,
            n_best: 5,
            ..FilterConfig::default()
        };
        let model = TransitionModel::from_stratigraphy(&env.config().stratigraphy, cfg.p_fault);
        let mut ep = SteeringEpisode::new(
            env,
            EncoderId::RlEst5,
            Some((&cfg, model, substream(3, Stream::Filter, 0))),
            5,
        )
        .unwrap();
        let mut n = 0;
        loop {
            for e in [EncoderId::RlLog, EncoderId::RlEst1, EncoderId::RlEst5, EncoderId::OracleTrue, EncoderId::OracleLookahead] {
                let v = ep.encode(e).unwrap();
                assert_eq!(v.len(), e.dim());
                assert!(v.iter().all(|x| x.is_finite()));
            }
            assert_eq!(ep.encode(EncoderId::RlEst1).unwrap()[2], 1.0);
            let (_, done) = ep.act(5).unwrap();
            n += 1;
            if done {
                break;
            }
        }
        assert_eq!(n, 10);
        assert_eq!(ep.tracker().unwrap().history().len(), 321);
        assert!(SteeringEpisode::new(env_for(1), EncoderId::RlEst1, None, 0).is_err());
    }

    #[test]
    fn untrained_agent_scores_near_the_floor() {
        let spec = EncoderId::RlLog.layer_spec(11);
        let mut agent = Agent::new(&spec, AgentConfig::default(), 5).unwrap();
        let mut total = 0.0;
        for i in 0..100 {
            let mut ep = SteeringEpisode::new(env_for(derive_seed(5, Stream::Environment, i)), EncoderId::RlLog, None, 0)
                .unwrap();
            agent.set_epsilon(1.0);
            total += agent.run_episode(&mut ep, Mode::Train).unwrap().reward;
        }
        let mean = total / 100.0;
        assert!((mean + 220.0).abs() <= 15.0, "mean reward {mean}");
    }
}
