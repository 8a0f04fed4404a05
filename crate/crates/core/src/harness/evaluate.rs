use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::svg::{bar_chart, BarGroup};
use super::train::{load_checkpoint, run_dir, start_episode};
use super::{with_pool, EpisodeSeeds, ExperimentConfig, Method};
use crate::dqn::argmax;
use crate::environment::contact_of_reward;
use crate::neuralnet::QNetwork;
use crate::particle_filter::TransitionModel;
use crate::policies::{rule_based_decide, EncoderId, RuleBasedConfig, SteeringEpisode};
use crate::stratigraphy::{generate_realization, OffsetLog};
use crate::trajectory::Phase;
use crate::{Error, Result};

/// A fixed decision rule for evaluation.
#[derive(Debug, Clone)]
pub enum Policy {
    /// Greedy on a trained network.
    Network { net: QNetwork, encoder: EncoderId },
    /// A network steers the landing, the greedy look-ahead rule the rest.
    RuleBased { landing: QNetwork, config: RuleBasedConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub method: Method,
    pub seed: u64,
    pub realization: usize,
    pub reward: i32,
    pub contact: f64,
    pub faults: usize,
    pub boundary_mae: Option<f64>,
    pub gamma_mae: Option<f64>,
}

/// Running sums of per-station input errors.
#[derive(Default)]
struct ErrorSums {
    gamma: f64,
    boundary: f64,
    n: usize,
}

impl ErrorSums {
    fn add(&mut self, gamma: f64, boundary: f64) {
        self.gamma += gamma;
        self.boundary += boundary;
        self.n += 1;
    }

    fn means(&self) -> (Option<f64>, Option<f64>) {
        if self.n == 0 {
            return (None, None);
        }
        let n = self.n as f64;
        (Some(self.boundary / n), Some(self.gamma / n))
    }
}

fn greedy(net: &QNetwork, state: &[f64]) -> Result<usize> {
    Ok(argmax(&net.forward(state)?))
}

/// Plays one evaluation episode. Input errors cover the scored stations:
/// filter estimates for filter-fed networks, look-ahead forecasts for the
/// rule-based methods, zero for oracles, and nothing for the raw-log network.
pub fn play_episode(
    cfg: &ExperimentConfig,
    method: Method,
    policy: &Policy,
    log: &Arc<OffsetLog>,
    seed: u64,
    realization: usize,
    seeds: &EpisodeSeeds,
) -> Result<EpisodeRecord> {
    let landing_end = cfg.env.landing_stations();
    let mut errors = ErrorSums::default();
    let (ep, faults) = match policy {
        Policy::Network { net, encoder } => {
            let mut ep = start_episode(cfg, method, *encoder, log, seeds)?;
            while !ep.env().is_done() {
                let a = greedy(net, &ep.encode(*encoder)?)?;
                ep.step(a)?;
            }
            let faults = ep.env().realization().faults_after(landing_end);
            (ep, faults)
        }
        Policy::RuleBased { landing, config } => {
            let mut ep = start_episode(cfg, method, EncoderId::RlEst1, log, seeds)?;
            let model = TransitionModel::from_stratigraphy(&cfg.env.stratigraphy, cfg.filter.p_fault);
            let mut rng = seeds.lookahead.clone();
            let rb = RuleBasedConfig {
                n_best: method.n_best(),
                ..config.clone()
            };
            while !ep.env().is_done() {
                if ep.env().phase() == Phase::Landing {
                    let a = greedy(landing, &ep.encode(EncoderId::RlEst1)?)?;
                    ep.step(a)?;
                    continue;
                }
                let tracker = ep.tracker().expect("rule-based episodes run a filter");
                let best = &tracker.latest().best;
                let x = rb.n_best.min(best.len());
                let (decision, paths) =
                    rule_based_decide(&best[..x], ep.env().well(), &cfg.env.steering, &model, &rb, &mut rng)?;
                let outcome = ep.step(decision.action)?;
                let real = ep.env().realization();
                for (j, s) in outcome.stations.iter().enumerate() {
                    if s.station <= landing_end {
                        continue;
                    }
                    let true_top = real.top(s.station);
                    let true_gamma = log.gamma_at(s.tvd - true_top);
                    let (mut g, mut b) = (0.0, 0.0);
                    for p in &paths {
                        let top = p.boundaries[j].0;
                        b += p.weight * (top - true_top).abs();
                        g += p.weight * (log.gamma_at(s.tvd - top) - true_gamma).abs();
                    }
                    errors.add(g, b);
                }
            }
            let faults = ep.env().realization().faults_after(landing_end);
            (ep, faults)
        }
    };
    let env = ep.env();
    let (boundary_mae, gamma_mae) = match method {
        Method::RlLog => (None, None),
        Method::OracleTrue | Method::OracleLookahead => (Some(0.0), Some(0.0)),
        Method::RuleBased1 | Method::RuleBased5 => errors.means(),
        Method::RlEst1 | Method::RlEst5 => filter_errors(&ep, method.n_best(), landing_end, log),
    };
    Ok(EpisodeRecord {
        method,
        seed,
        realization,
        reward: env.reward_total(),
        contact: env.contact_percent(),
        faults,
        boundary_mae,
        gamma_mae,
    })
}

fn filter_errors(
    ep: &SteeringEpisode,
    n_best: usize,
    landing_end: usize,
    log: &OffsetLog,
) -> (Option<f64>, Option<f64>) {
    let Some(tracker) = ep.tracker() else {
        return (None, None);
    };
    let real = ep.env().realization();
    let mut sums = ErrorSums::default();
    for s in tracker.history().iter().filter(|s| s.station > landing_end) {
        let top = real.top(s.station);
        let (g, b) = s.errors(n_best, log, top, log.gamma_at(s.bit_tvd - top));
        sums.add(g, b);
    }
    sums.means()
}

/// Median, with the mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub seeds: Vec<u64>,
    /// Mean episode reward per seed, in seed order.
    pub seed_means: Vec<f64>,
    pub median_reward: f64,
    pub contact: f64,
    /// Contact restricted to episodes with at least 0, 1 and 2 faults.
    pub contact_by_faults: [Option<f64>; 3],
    pub boundary_mae: Option<f64>,
    pub gamma_mae: Option<f64>,
    pub episodes: usize,
}

fn seed_median(records: &[&EpisodeRecord], seeds: &[u64]) -> Option<f64> {
    let means: Vec<f64> = seeds
        .iter()
        .filter_map(|s| {
            let r: Vec<f64> = records
                .iter()
                .filter(|e| e.seed == *s)
                .map(|e| f64::from(e.reward))
                .collect();
            (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
        })
        .collect();
    (!means.is_empty()).then(|| median(&means))
}

/// Per-seed means of episode rewards, their median across seeds, and the
/// contact that median implies. Fault strata repeat the same steps on the
/// episodes with at least that many faults.
pub fn summarize(method: Method, records: &[EpisodeRecord], scored: usize) -> Result<MethodSummary> {
    let mine: Vec<&EpisodeRecord> = records.iter().filter(|r| r.method == method).collect();
    if mine.is_empty() {
        return Err(Error::Validation(format!("no evaluation records for {method}")));
    }
    let mut seeds: Vec<u64> = mine.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let seed_means: Vec<f64> = seeds
        .iter()
        .map(|s| {
            let r: Vec<f64> = mine.iter().filter(|e| e.seed == *s).map(|e| f64::from(e.reward)).collect();
            r.iter().sum::<f64>() / r.len() as f64
        })
        .collect();
    let median_reward = median(&seed_means);
    let mut by_faults = [None; 3];
    for (k, slot) in by_faults.iter_mut().enumerate() {
        let subset: Vec<&EpisodeRecord> = mine.iter().copied().filter(|r| r.faults >= k).collect();
        *slot = seed_median(&subset, &seeds).map(|m| contact_of_reward(m, scored));
    }
    let mean_of = |f: fn(&EpisodeRecord) -> Option<f64>| {
        let v: Vec<f64> = mine.iter().filter_map(|r| f(r)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(MethodSummary {
        method,
        seeds,
        seed_means,
        median_reward,
        contact: contact_of_reward(median_reward, scored),
        contact_by_faults: by_faults,
        boundary_mae: mean_of(|r| r.boundary_mae),
        gamma_mae: mean_of(|r| r.gamma_mae),
        episodes: mine.len(),
    })
}

/// Digest of the evaluation realizations, to confirm that methods were
/// compared on the same set.
pub fn eval_set_hash(cfg: &ExperimentConfig) -> Result<String> {
    let eval_seed = cfg.eval_seed();
    let mut h = Sha256::new();
    for r in 0..cfg.eval_realizations {
        let seeds = EpisodeSeeds::evaluation(eval_seed, r);
        let real = generate_realization(&cfg.env.stratigraphy, seeds.realization)?;
        h.update(seeds.realization.to_le_bytes());
        h.update(real.start_offset.to_le_bytes());
        for t in &real.top_depth {
            h.update(t.to_le_bytes());
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn policies_for(cfg: &ExperimentConfig, method: Method) -> Result<Vec<(u64, Policy)>> {
    let seeds = cfg.training_seeds();
    match method.encoder() {
        Some(encoder) => seeds
            .iter()
            .map(|&s| {
                let (net, _) = load_checkpoint(&run_dir(&cfg.output_dir, method, s), method)?;
                Ok((s, Policy::Network { net, encoder }))
            })
            .collect(),
        None => {
            let dir = cfg
                .landing_checkpoint
                .clone()
                .unwrap_or_else(|| run_dir(&cfg.output_dir, Method::RlEst1, seeds[0]));
            let (landing, meta) = load_checkpoint(&dir, Method::RlEst1)?;
            Ok(vec![(
                meta.seed,
                Policy::RuleBased {
                    landing,
                    config: cfg.rule_based.clone(),
                },
            )])
        }
    }
}

pub fn write_records(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in records {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Evaluates `method` greedily on the shared evaluation set, once per
/// training seed (once in total for the rule-based methods). Writes
/// `<output_dir>/<method>/eval.csv`.
pub fn evaluate(cfg: &ExperimentConfig, method: Method) -> Result<(Vec<EpisodeRecord>, MethodSummary)> {
    cfg.validate()?;
    let log = cfg.load_log()?;
    let policies = policies_for(cfg, method)?;
    let eval_seed = cfg.eval_seed();
    let jobs: Vec<(usize, usize)> = (0..policies.len())
        .flat_map(|p| (0..cfg.eval_realizations).map(move |r| (p, r)))
        .collect();
    let records = with_pool(cfg.threads, || {
        jobs.par_iter()
            .map(|&(p, r)| {
                let (seed, policy) = &policies[p];
                play_episode(cfg, method, policy, &log, *seed, r, &EpisodeSeeds::evaluation(eval_seed, r))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let dir = cfg.output_dir.join(method.name());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_records(&dir.join("eval.csv"), &records)?;
    let summary = summarize(method, &records, cfg.env.scored_stations())?;
    log::info!(
        "{method}: median reward {:.2}, contact {:.2}% over {} episodes",
        summary.median_reward,
        summary.contact,
        summary.episodes
    );
    Ok((records, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub eval_set_sha256: String,
    pub summaries: Vec<MethodSummary>,
}

impl BenchmarkReport {
    pub fn get(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

fn write_table(path: &Path, summaries: &[MethodSummary]) -> Result<()> {
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record([
        "method",
        "seeds",
        "episodes",
        "median_reward",
        "contact",
        "contact_faults_ge0",
        "contact_faults_ge1",
        "contact_faults_ge2",
        "boundary_mae",
        "gamma_mae",
    ])
    .map_err(io)?;
    for s in summaries {
        w.write_record([
            s.method.name().to_string(),
            s.seeds.len().to_string(),
            s.episodes.to_string(),
            format!("{:.4}", s.median_reward),
            format!("{:.4}", s.contact),
            fmt_opt(s.contact_by_faults[0]),
            fmt_opt(s.contact_by_faults[1]),
            fmt_opt(s.contact_by_faults[2]),
            fmt_opt(s.boundary_mae),
            fmt_opt(s.gamma_mae),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Evaluates every method on one shared realization set and writes
/// `results.csv`, `benchmark.csv`, `eval_set.sha256` and two bar charts.
pub fn benchmark(cfg: &ExperimentConfig, methods: &[Method]) -> Result<BenchmarkReport> {
    let hash = eval_set_hash(cfg)?;
    log::info!("evaluation set sha256 {hash}");
    let mut all = Vec::new();
    let mut summaries = Vec::new();
    for &m in methods {
        let (records, summary) = evaluate(cfg, m)?;
        let again = eval_set_hash(cfg)?;
        if again != hash {
            return Err(Error::Invariant(format!("evaluation set changed while evaluating {m}")));
        }
        all.extend(records);
        summaries.push(summary);
    }
    let out = &cfg.output_dir;
    write_records(&out.join("results.csv"), &all)?;
    write_table(&out.join("benchmark.csv"), &summaries)?;
    let hash_path = out.join("eval_set.sha256");
    std::fs::write(&hash_path, format!("{hash}\n")).map_err(|e| Error::io(&hash_path, e))?;

    let names: Vec<String> = summaries.iter().map(|s| s.method.name().to_string()).collect();
    let contact = bar_chart(
        "Reservoir contact by method",
        "contact (%)",
        &names,
        &[BarGroup {
            name: "all realizations".into(),
            values: summaries.iter().map(|s| Some(s.contact)).collect(),
        }],
    );
    let strata = bar_chart(
        "Reservoir contact by fault count",
        "contact (%)",
        &names,
        &(0..3)
            .map(|k| BarGroup {
                name: format!("faults >= {k}"),
                values: summaries.iter().map(|s| s.contact_by_faults[k]).collect(),
            })
            .collect::<Vec<_>>(),
    );
    for (file, svg) in [("contact_by_method.svg", contact), ("contact_by_faults.svg", strata)] {
        let p = out.join(file);
        std::fs::write(&p, svg).map_err(|e| Error::io(&p, e))?;
    }
    Ok(BenchmarkReport {
        eval_set_sha256: hash,
        summaries,
    })
}
