//! Bootstrap particle filter over the top-boundary depth and its local dip.
//!
//! Each particle carries a hypothesized top-boundary TVD at the current
//! station together with a slope state that follows the same clamped AR(1)
//! walk used to generate realizations. The transition prior is the importance
//! density, so the weight update reduces to multiplying by the Gaussian
//! likelihood of the observed gamma value.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::stratigraphy::{OffsetLog, StratigraphyConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub top_depth: f64,
    /// ft per station
    pub slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrowDistribution {
    pub min: f64,
    pub max: f64,
    /// Flip the sign with probability one half.
    pub random_sign: bool,
}

impl ThrowDistribution {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        let magnitude = if self.max > self.min {
            rng.random_range(self.min..=self.max)
        } else {
            self.min
        };
        if self.random_sign && rng.random_bool(0.5) {
            -magnitude
        } else {
            magnitude
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub rho: f64,
    pub slope_sigma: f64,
    pub slope_clamp: f64,
    /// Probability of a fault throw per station.
    pub p_fault: f64,
    pub throw: ThrowDistribution,
}

impl TransitionModel {
    pub fn from_stratigraphy(config: &StratigraphyConfig, p_fault: f64) -> Self {
        Self {
            rho: config.slope_ar1_rho,
            slope_sigma: config.slope_noise_sigma,
            slope_clamp: config.slope_clamp,
            p_fault,
            throw: ThrowDistribution {
                min: config.fault_throw_range.0,
                max: config.fault_throw_range.1,
                random_sign: true,
            },
        }
    }

    pub fn noiseless(rho: f64, slope_clamp: f64) -> Self {
        Self {
            rho,
            slope_sigma: 0.0,
            slope_clamp,
            p_fault: 0.0,
            throw: ThrowDistribution {
                min: 0.0,
                max: 0.0,
                random_sign: false,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p_fault) {
            return Err(Error::Config(format!(
                "fault hazard {} outside [0, 1)",
                self.p_fault
            )));
        }
        if !(self.slope_sigma >= 0.0 && self.slope_clamp > 0.0) {
            return Err(Error::Config("transition noise must be non-negative".into()));
        }
        Ok(())
    }

    /// One station forward: the depth moves by the current slope (plus a
    /// throw if a fault fires), then the slope takes its AR(1) step.
    pub fn advance(&self, p: &mut Particle, rng: &mut impl Rng) {
        p.top_depth += p.slope;
        if self.p_fault > 0.0 && rng.random::<f64>() < self.p_fault {
            p.top_depth += self.throw.sample(rng);
        }
        let eta = if self.slope_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            self.slope_sigma * z
        } else {
            0.0
        };
        p.slope = (self.rho * p.slope + eta).clamp(-self.slope_clamp, self.slope_clamp);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEstimate {
    pub top_depth: f64,
    pub bottom_depth: f64,
    pub slope: f64,
    /// Weight renormalized over the selected subset.
    pub normalized_weight: f64,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct ParticleSet {
    particles: Vec<Particle>,
    weights: Vec<f64>,
    station: usize,
    thickness: f64,
    rng: ChaCha8Rng,
    degeneracy_events: usize,
}

impl ParticleSet {
    /// Uniform prior on the top depth over `prior` and on the slope over
    /// `[-slope_clamp, slope_clamp]`, equal weights.
    pub fn init(
        prior: (f64, f64),
        n_par: usize,
        slope_clamp: f64,
        thickness: f64,
        mut rng: ChaCha8Rng,
    ) -> Result<Self> {
        let (a, b) = prior;
        if !(a < b) || n_par == 0 {
            return Err(Error::Usage(format!(
                "particle prior needs a < b and n_par >= 1, got ({a}, {b}), {n_par}"
            )));
        }
        let particles = (0..n_par)
            .map(|_| Particle {
                top_depth: rng.random_range(a..=b),
                slope: rng.random_range(-slope_clamp..=slope_clamp),
            })
            .collect();
        Ok(Self::from_particles(particles, thickness, rng))
    }

    pub fn from_particles(particles: Vec<Particle>, thickness: f64, rng: ChaCha8Rng) -> Self {
        let n = particles.len();
        Self {
            particles,
            weights: vec![1.0 / n as f64; n],
            station: 0,
            thickness,
            rng,
            degeneracy_events: 0,
        }
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        let sum: f64 = weights.iter().sum();
        if weights.len() != self.particles.len() || weights.iter().any(|w| !(*w >= 0.0)) || !(sum > 0.0) {
            return Err(Error::Usage("weights must be non-negative with positive sum".into()));
        }
        self.weights = weights.into_iter().map(|w| w / sum).collect();
        Ok(())
    }

    pub fn n_par(&self) -> usize {
        self.particles.len()
    }

    pub fn station(&self) -> usize {
        self.station
    }

    pub fn degeneracy_events(&self) -> usize {
        self.degeneracy_events
    }

    pub fn propagate(&mut self, model: &TransitionModel) {
        for p in &mut self.particles {
            model.advance(p, &mut self.rng);
        }
        self.station += 1;
    }

    /// Multiplies each weight by the Gaussian likelihood of `observed` given
    /// the particle's predicted gamma, then renormalizes.
    pub fn update(&mut self, observed: f64, bit_tvd: f64, log: &OffsetLog, sigma: f64) {
        let inv = -0.5 / (sigma * sigma);
        let mut max_ll = f64::NEG_INFINITY;
        let lls: Vec<f64> = self
            .particles
            .iter()
            .map(|p| {
                let r = observed - log.gamma_at(bit_tvd - p.top_depth);
                let ll = inv * r * r;
                max_ll = max_ll.max(ll);
                ll
            })
            .collect();
        let mut sum = 0.0;
        if max_ll.is_finite() {
            for (w, ll) in self.weights.iter_mut().zip(&lls) {
                *w *= (ll - max_ll).exp();
                sum += *w;
            }
        }
        if !(sum > 0.0) || !sum.is_finite() {
            self.degeneracy_events += 1;
            let uniform = 1.0 / self.n_par() as f64;
            self.weights.iter_mut().for_each(|w| *w = uniform);
            return;
        }
        self.weights.iter_mut().for_each(|w| *w /= sum);
    }

    /// Systematic resampling; all weights become `1 / n_par`.
    pub fn resample(&mut self) {
        let n = self.n_par();
        let step = 1.0 / n as f64;
        let mut u = self.rng.random::<f64>() * step;
        let mut cumulative = self.weights[0];
        let mut i = 0;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            while u > cumulative && i + 1 < n {
                i += 1;
                cumulative += self.weights[i];
            }
            out.push(self.particles[i]);
            u += step;
        }
        self.particles = out;
        self.weights.iter_mut().for_each(|w| *w = step);
    }

    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn weighted_mean_top(&self) -> f64 {
        self.particles
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| p.top_depth * w)
            .sum()
    }

    /// The `n_best` heaviest particles, ties to the lower index, with weights
    /// renormalized over the subset.
    pub fn best(&self, n_best: usize) -> Result<Vec<BoundaryEstimate>> {
        if n_best == 0 || n_best > self.n_par() {
            return Err(Error::Usage(format!(
                "n_best {n_best} outside 1..={}",
                self.n_par()
            )));
        }
        let order: Vec<usize> = if n_best == 1 {
            let mut best = 0;
            for (i, w) in self.weights.iter().enumerate() {
                if *w > self.weights[best] {
                    best = i;
                }
            }
            vec![best]
        } else {
            let mut idx: Vec<usize> = (0..self.n_par()).collect();
            // stable sort keeps lower indices first among equal weights
            idx.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]));
            idx.truncate(n_best);
            idx
        };
        let total: f64 = order.iter().map(|&i| self.weights[i]).sum();
        Ok(order
            .into_iter()
            .map(|i| {
                let p = self.particles[i];
                BoundaryEstimate {
                    top_depth: p.top_depth,
                    bottom_depth: p.top_depth + self.thickness,
                    slope: p.slope,
                    normalized_weight: if total > 0.0 {
                        self.weights[i] / total
                    } else {
                        1.0 / n_best as f64
                    },
                    index: i,
                }
            })
            .collect())
    }
}

/// Runs the transition `n` times from `start`, returning the (top, bottom)
/// boundary pair at each of the next `n` stations.
pub fn lookahead(
    start: Particle,
    thickness: f64,
    model: &TransitionModel,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<(f64, f64)> {
    let mut p = start;
    (0..n)
        .map(|_| {
            model.advance(&mut p, rng);
            (p.top_depth, p.top_depth + thickness)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mae {
    pub gamma: f64,
    pub boundary_ft: f64,
}

/// Mean absolute errors of aligned per-station (top, gamma) estimates.
pub fn mae(estimates: &[(f64, f64)], truth: &[(f64, f64)]) -> Result<Mae> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return Err(Error::Usage(format!(
            "MAE needs aligned non-empty series, got {} and {}",
            estimates.len(),
            truth.len()
        )));
    }
    let n = estimates.len() as f64;
    let (mut g, mut b) = (0.0, 0.0);
    for ((top, gamma), (true_top, true_gamma)) in estimates.iter().zip(truth) {
        b += (top - true_top).abs();
        g += (gamma - true_gamma).abs();
    }
    Ok(Mae {
        gamma: g / n,
        boundary_ft: b / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub n_par: usize,
    pub n_best: usize,
    pub sigma: f64,
    /// Prior on the top depth relative to the bit at reset, ft below the bit.
    pub prior_below_bit: (f64, f64),
    pub p_fault: f64,
    /// Resample whenever `station % resample_every == 0`.
    pub resample_every: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            n_par: 128,
            n_best: 1,
            sigma: 0.2,
            prior_below_bit: (180.0, 270.0),
            p_fault: 1.5 / 320.0,
            resample_every: 16,
        }
    }
}

/// Estimates recorded at one station, before any resampling there.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSnapshot {
    pub station: usize,
    pub bit_tvd: f64,
    pub observed: f64,
    pub ess: f64,
    /// Heaviest particles first, subset weights renormalized.
    pub best: Vec<BoundaryEstimate>,
}

impl StationSnapshot {
    /// Weighted mean over the first `n` estimates of |predicted - truth| for
    /// gamma and top depth; with `n = 1` this is the best particle's error.
    pub fn errors(&self, n: usize, log: &OffsetLog, true_top: f64, true_gamma: f64) -> (f64, f64) {
        let n = n.min(self.best.len());
        let total: f64 = self.best[..n].iter().map(|e| e.normalized_weight).sum();
        let mut g = 0.0;
        let mut b = 0.0;
        for e in &self.best[..n] {
            let w = if total > 0.0 {
                e.normalized_weight / total
            } else {
                1.0 / n as f64
            };
            g += w * (log.gamma_at(self.bit_tvd - e.top_depth) - true_gamma).abs();
            b += w * (e.top_depth - true_top).abs();
        }
        (g, b)
    }
}

/// Runs a particle set alongside a well: propagate, update, record the best
/// estimates, then resample on schedule.
#[derive(Debug, Clone)]
pub struct BoundaryTracker {
    set: ParticleSet,
    model: TransitionModel,
    log: Arc<OffsetLog>,
    config: FilterConfig,
    record_best: usize,
    history: Vec<StationSnapshot>,
}

impl BoundaryTracker {
    /// Starts the filter at station 0 and assimilates its observation.
    pub fn start(
        bit_tvd: f64,
        observed: f64,
        log: Arc<OffsetLog>,
        model: TransitionModel,
        config: &FilterConfig,
        thickness: f64,
        record_best: usize,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        model.validate()?;
        if config.resample_every == 0 || !(config.sigma > 0.0) {
            return Err(Error::Config(format!("invalid filter config: {config:?}")));
        }
        let (lo, hi) = config.prior_below_bit;
        let set = ParticleSet::init(
            (bit_tvd + lo, bit_tvd + hi),
            config.n_par,
            model.slope_clamp,
            thickness,
            rng,
        )?;
        let record_best = record_best.max(config.n_best).min(config.n_par);
        let mut tracker = Self {
            set,
            model,
            log,
            config: config.clone(),
            record_best,
            history: Vec::new(),
        };
        tracker.assimilate(bit_tvd, observed, false)?;
        Ok(tracker)
    }

    /// Advances one station and assimilates its observation.
    pub fn observe(&mut self, bit_tvd: f64, observed: f64) -> Result<()> {
        self.assimilate(bit_tvd, observed, true)
    }

    fn assimilate(&mut self, bit_tvd: f64, observed: f64, advance: bool) -> Result<()> {
        if advance {
            self.set.propagate(&self.model);
        }
        self.set
            .update(observed, bit_tvd, &self.log, self.config.sigma);
        let snapshot = StationSnapshot {
            station: self.set.station(),
            bit_tvd,
            observed,
            ess: self.set.ess(),
            best: self.set.best(self.record_best)?,
        };
        self.history.push(snapshot);
        if self.set.station() % self.config.resample_every == 0 {
            self.set.resample();
        }
        Ok(())
    }

    /// Current estimates exposed to a policy.
    pub fn estimates(&self) -> &[BoundaryEstimate] {
        let last = self.history.last().expect("tracker always holds station 0");
        &last.best[..self.config.n_best]
    }

    pub fn latest(&self) -> &StationSnapshot {
        self.history.last().expect("tracker always holds station 0")
    }

    pub fn history(&self) -> &[StationSnapshot] {
        &self.history
    }

    pub fn set(&self) -> &ParticleSet {
        &self.set
    }

    pub fn model(&self) -> &TransitionModel {
        &self.model
    }

    pub fn log(&self) -> &OffsetLog {
        &self.log
    }

    pub fn thickness(&self) -> f64 {
        self.set.thickness
    }

    /// Writes `station,best_top_ft,true_top_ft,best_gamma,true_gamma,ess`.
    pub fn write_diagnostics_csv(
        &self,
        path: &std::path::Path,
        true_top: impl Fn(usize) -> f64,
    ) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Validation(e.to_string()))?;
        let map = |e: csv::Error| Error::Validation(format!("filter export: {e}"));
        w.write_record([
            "station",
            "best_top_ft",
            "true_top_ft",
            "best_gamma",
            "true_gamma",
            "ess",
        ])
        .map_err(map)?;
        for s in &self.history {
            let best = &s.best[0];
            let top = true_top(s.station);
            w.write_record([
                s.station.to_string(),
                best.top_depth.to_string(),
                top.to_string(),
                self.log.gamma_at(s.bit_tvd - best.top_depth).to_string(),
                self.log.gamma_at(s.bit_tvd - top).to_string(),
                s.ess.to_string(),
            ])
            .map_err(map)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
