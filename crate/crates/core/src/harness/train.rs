use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{with_pool, EpisodeSeeds, ExperimentConfig, Method};
use crate::dqn::{Agent, Mode};
use crate::environment::EnvState;
use crate::neuralnet::{QNetwork, FORMAT_VERSION};
use crate::particle_filter::TransitionModel;
use crate::policies::{EncoderId, SteeringEpisode};
use crate::stratigraphy::{generate_realization, OffsetLog};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    pub reward: f64,
    pub epsilon: f64,
    pub loss_mean: f64,
    pub wall_ms: u64,
}

/// Sidecar written next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub method: Method,
    pub encoder: EncoderId,
    pub widths: Vec<usize>,
    pub seed: u64,
    pub episodes: usize,
    pub train_steps: u64,
    pub epsilon: f64,
    pub init: String,
    pub precision: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub method: Method,
    pub seed: u64,
    pub dir: PathBuf,
    /// Mean reward over the last 100 episodes.
    pub final_reward: f64,
}

pub fn run_dir(out: &Path, method: Method, seed: u64) -> PathBuf {
    out.join(method.name()).join(format!("seed_{seed}"))
}

/// Builds one episode with its tracker, if the encoder needs one.
pub(crate) fn start_episode(
    cfg: &ExperimentConfig,
    method: Method,
    encoder: EncoderId,
    log: &Arc<OffsetLog>,
    seeds: &EpisodeSeeds,
) -> Result<SteeringEpisode> {
    let real = generate_realization(&cfg.env.stratigraphy, seeds.realization)?;
    let env = EnvState::reset(real, log.clone(), &cfg.env, seeds.noise)?;
    let filter_cfg = cfg.filter_for(method);
    let episode = if method.uses_filter() {
        let model = TransitionModel::from_stratigraphy(&cfg.env.stratigraphy, filter_cfg.p_fault);
        let rng = seeds.filter.clone();
        SteeringEpisode::new(env, encoder, Some((&filter_cfg, model, rng)), method.n_best())?
    } else {
        SteeringEpisode::new(env, encoder, None, 0)?
    };
    Ok(episode)
}

fn write_checkpoint(dir: &Path, agent: &Agent, meta: &CheckpointMeta) -> Result<()> {
    let bin = dir.join("checkpoint.bin");
    agent.online().save(&bin)?;
    let json = dir.join("checkpoint.json");
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::Validation(e.to_string()))?;
    std::fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))
}

fn write_curve(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curve(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{}: {other:?}", path.display())),
    })?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Trailing mean over `window` entries (shorter at the start).
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Trains one seed of a learned method, writing `curve.csv` and a
/// checkpoint under `run_dir(output_dir, method, seed)`.
pub fn train_run(
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    log: &Arc<OffsetLog>,
) -> Result<TrainSummary> {
    let encoder = method
        .encoder()
        .ok_or_else(|| Error::Usage(format!("{method} is not a learned method")))?;
    let dir = run_dir(&cfg.output_dir, method, seed);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let spec = encoder.layer_spec(cfg.env.steering.n_actions());
    let mut agent = Agent::new(&spec, cfg.agent.clone(), seed)?;
    let mut meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        method,
        encoder,
        widths: spec.sizes.clone(),
        seed,
        episodes: 0,
        train_steps: 0,
        epsilon: agent.epsilon(),
        init: "glorot-uniform".into(),
        precision: "f64".into(),
    };
    let mut curve = Vec::with_capacity(cfg.agent.episodes);
    for ep in 0..cfg.agent.episodes {
        let started = cfg.record_wall_time.then(Instant::now);
        let mut episode =
            start_episode(cfg, method, encoder, log, &EpisodeSeeds::training(seed, ep))?;
        let s = agent.run_episode(&mut episode, Mode::Train)?;
        curve.push(CurveRow {
            episode: ep + 1,
            reward: s.reward,
            epsilon: s.epsilon,
            loss_mean: s.loss_mean(),
            wall_ms: started.map_or(0, |t| t.elapsed().as_millis() as u64),
        });
        let done = ep + 1;
        if done % cfg.checkpoint_every.max(1) == 0 || done == cfg.agent.episodes {
            meta.episodes = done;
            meta.train_steps = agent.train_steps();
            meta.epsilon = agent.epsilon();
            write_checkpoint(&dir, &agent, &meta)?;
            log::debug!("{method} seed {seed}: checkpoint at episode {done}");
        }
    }
    write_curve(&dir.join("curve.csv"), &curve)?;
    let rewards: Vec<f64> = curve.iter().map(|r| r.reward).collect();
    let final_reward = smooth(&rewards, 100).last().copied().unwrap_or(0.0);
    log::info!("{method} seed {seed}: {} episodes, last-100 mean reward {final_reward:.2}", curve.len());
    Ok(TrainSummary {
        method,
        seed,
        dir,
        final_reward,
    })
}

/// Trains every configured seed in parallel; results are ordered by seed.
pub fn train_all(cfg: &ExperimentConfig, method: Method) -> Result<Vec<TrainSummary>> {
    cfg.validate()?;
    let log = cfg.load_log()?;
    let seeds = cfg.training_seeds();
    log::info!("training {method} on seeds {seeds:?}");
    with_pool(cfg.threads, || {
        seeds
            .par_iter()
            .map(|&s| train_run(cfg, method, s, &log))
            .collect::<Result<Vec<_>>>()
    })?
}

/// Loads a checkpoint and checks it was trained for `method`.
pub fn load_checkpoint(dir: &Path, method: Method) -> Result<(QNetwork, CheckpointMeta)> {
    let bin = dir.join("checkpoint.bin");
    let json = dir.join("checkpoint.json");
    for p in [&bin, &json] {
        if !p.is_file() {
            return Err(Error::Validation(format!("missing checkpoint file {}", p.display())));
        }
    }
    let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Validation(format!("{}: {e}", json.display())))?;
    let net = QNetwork::load(&bin)?;
    let encoder = method
        .encoder()
        .ok_or_else(|| Error::Usage(format!("{method} has no network")))?;
    if meta.encoder != encoder || net.spec().input() != encoder.dim() || net.spec().sizes != meta.widths {
        return Err(Error::Validation(format!(
            "{} holds a {} network with widths {:?}, expected {encoder} input {}",
            bin.display(),
            meta.encoder,
            net.spec().sizes,
            encoder.dim()
        )));
    }
    Ok((net, meta))
}
