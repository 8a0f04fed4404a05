use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluate::median;
use super::svg::{line_chart, Series};
use super::{with_pool, EpisodeSeeds, ExperimentConfig};
use crate::environment::EnvState;
use crate::particle_filter::{BoundaryTracker, FilterConfig, TransitionModel};
use crate::stratigraphy::generate_realization;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_par: usize,
    pub n_best: usize,
    pub median_gamma_mae: f64,
    pub median_boundary_mae: f64,
    pub mean_gamma_mae: f64,
    pub mean_boundary_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// Best-particle errors for each particle count.
    pub by_n_par: Vec<SweepRow>,
    /// Errors of the top-`n_best` estimates at a fixed particle count.
    pub by_n_best: Vec<SweepRow>,
}

/// Per-realization (gamma, boundary) MAE for every (n_par, n_best) pair.
type Cell = ((usize, usize), (f64, f64));

fn sweep_realization(cfg: &ExperimentConfig, r: usize, log: &std::sync::Arc<crate::stratigraphy::OffsetLog>) -> Result<Vec<Cell>> {
    let seeds = EpisodeSeeds::sweep(cfg.seed, r);
    let real = generate_realization(&cfg.env.stratigraphy, seeds.realization)?;
    let mut env = EnvState::reset(real, log.clone(), &cfg.env, seeds.noise)?;
    for &a in &cfg.sweep.plan {
        env.step(a)?;
    }
    let path = env.path();
    let gammas = env.gamma_history();
    let real = env.realization();
    let truth: Vec<(f64, f64)> = path
        .iter()
        .map(|s| {
            let top = real.top(s.station);
            (top, log.gamma_at(s.tvd - top))
        })
        .collect();

    let mut counts: Vec<usize> = cfg.sweep.n_par.clone();
    counts.push(cfg.sweep.n_best_at);
    counts.sort_unstable();
    counts.dedup();
    let max_best = cfg.sweep.n_best.iter().copied().max().unwrap_or(1);
    let model = TransitionModel::from_stratigraphy(&cfg.env.stratigraphy, cfg.filter.p_fault);
    let mut cells = Vec::new();
    for n_par in counts {
        let fc = FilterConfig {
            n_par,
            n_best: 1,
            ..cfg.filter.clone()
        };
        let mut tracker = BoundaryTracker::start(
            path[0].tvd,
            gammas[0],
            log.clone(),
            model.clone(),
            &fc,
            real.thickness,
            max_best,
            seeds.filter.clone(),
        )?;
        for (s, &g) in path[1..].iter().zip(&gammas[1..]) {
            tracker.observe(s.tvd, g)?;
        }
        let mut wanted = vec![1];
        if n_par == cfg.sweep.n_best_at {
            wanted.extend(cfg.sweep.n_best.iter().copied());
        }
        wanted.sort_unstable();
        wanted.dedup();
        for n_best in wanted {
            let (mut g, mut b) = (0.0, 0.0);
            for (snap, &(top, gamma)) in tracker.history().iter().zip(&truth) {
                let (eg, eb) = snap.errors(n_best, log, top, gamma);
                g += eg;
                b += eb;
            }
            let n = truth.len() as f64;
            cells.push(((n_par, n_best), (g / n, b / n)));
        }
    }
    Ok(cells)
}

fn row(n_par: usize, n_best: usize, cells: &[Vec<Cell>]) -> SweepRow {
    let picked: Vec<(f64, f64)> = cells
        .iter()
        .filter_map(|c| c.iter().find(|(k, _)| *k == (n_par, n_best)).map(|(_, v)| *v))
        .collect();
    let g: Vec<f64> = picked.iter().map(|p| p.0).collect();
    let b: Vec<f64> = picked.iter().map(|p| p.1).collect();
    SweepRow {
        n_par,
        n_best,
        median_gamma_mae: median(&g),
        median_boundary_mae: median(&b),
        mean_gamma_mae: g.iter().sum::<f64>() / g.len() as f64,
        mean_boundary_mae: b.iter().sum::<f64>() / b.len() as f64,
    }
}

fn write_rows(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs the filter along a fixed steering plan on the sweep realizations,
/// once per particle count, and tabulates estimate errors over every station.
/// Writes `sweep_n_par.csv`, `sweep_n_best.csv` and matching charts.
pub fn pf_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let log = cfg.load_log()?;
    let cells = with_pool(cfg.threads, || {
        (0..cfg.sweep.realizations)
            .into_par_iter()
            .map(|r| sweep_realization(cfg, r, &log))
            .collect::<Result<Vec<_>>>()
    })??;
    let report = SweepReport {
        by_n_par: cfg.sweep.n_par.iter().map(|&n| row(n, 1, &cells)).collect(),
        by_n_best: cfg
            .sweep
            .n_best
            .iter()
            .map(|&k| row(cfg.sweep.n_best_at, k, &cells))
            .collect(),
    };
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_rows(&out.join("sweep_n_par.csv"), &report.by_n_par)?;
    write_rows(&out.join("sweep_n_best.csv"), &report.by_n_best)?;
    let charts = [
        (
            "sweep_n_par.svg",
            line_chart(
                "Estimate error against particle count",
                "particles",
                "median gamma MAE",
                &[Series {
                    name: "best particle".into(),
                    points: report.by_n_par.iter().map(|r| (r.n_par as f64, r.median_gamma_mae)).collect(),
                    band: Vec::new(),
                }],
            ),
        ),
        (
            "sweep_n_best.svg",
            line_chart(
                "Estimate error against estimates used",
                "best estimates",
                "mean gamma MAE",
                &[Series {
                    name: format!("{} particles", cfg.sweep.n_best_at),
                    points: report.by_n_best.iter().map(|r| (r.n_best as f64, r.mean_gamma_mae)).collect(),
                    band: Vec::new(),
                }],
            ),
        ),
    ];
    for (name, svg) in charts {
        let p = out.join(name);
        std::fs::write(&p, svg).map_err(|e| Error::io(&p, e))?;
    }
    for r in &report.by_n_par {
        log::info!("n_par {:>5}: median gamma MAE {:.5}, boundary {:.3} ft", r.n_par, r.median_gamma_mae, r.median_boundary_mae);
    }
    Ok(report)
}
