//! Well-path geometry in the vertical plane.
//!
//! Inclination is measured from vertical in degrees: 90 is horizontal and
//! values above 90 deepen the well. Stations are spaced by horizontal
//! distance. Each decision interval is a constant-curvature arc, so the
//! inclination varies linearly with horizontal distance across it.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Landing,
    Drilling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellState {
    pub station: usize,
    pub tvd: f64,
    pub inclination: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteeringConstraints {
    /// Largest absolute inclination change per decision; actions are the
    /// integers `-max_delta..=max_delta`.
    pub max_delta: i32,
    pub landing_bounds: (f64, f64),
    pub drilling_bounds: (f64, f64),
    /// Degrees per 100 ft.
    pub dls_limit: f64,
    pub interval_stations: usize,
    pub station_spacing: f64,
}

impl Default for SteeringConstraints {
    fn default() -> Self {
        Self {
            max_delta: 5,
            landing_bounds: (70.0, 110.0),
            drilling_bounds: (86.0, 94.0),
            dls_limit: 3.0,
            interval_stations: 32,
            station_spacing: 10.0,
        }
    }
}

impl SteeringConstraints {
    pub fn n_actions(&self) -> usize {
        (2 * self.max_delta + 1) as usize
    }

    pub fn action_set(&self) -> Vec<f64> {
        (-self.max_delta..=self.max_delta).map(f64::from).collect()
    }

    /// Inclination change requested by action `index`.
    pub fn delta_of(&self, index: usize) -> f64 {
        f64::from(index as i32 - self.max_delta)
    }

    pub fn interval_length(&self) -> f64 {
        self.interval_stations as f64 * self.station_spacing
    }

    pub fn bounds(&self, phase: Phase) -> (f64, f64) {
        match phase {
            Phase::Landing => self.landing_bounds,
            Phase::Drilling => self.drilling_bounds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo < hi && lo > 0.0 && hi < 180.0;
        if self.max_delta < 0
            || !ordered(self.landing_bounds)
            || !ordered(self.drilling_bounds)
            || !(self.dls_limit > 0.0)
            || self.interval_stations == 0
            || !(self.station_spacing > 0.0)
        {
            return Err(Error::Config(format!("invalid steering constraints: {self:?}")));
        }
        Ok(())
    }
}

/// Dogleg severity in degrees per 100 ft.
pub fn dls_of(delta: f64, horizontal_length: f64) -> f64 {
    delta.abs() * 100.0 / horizontal_length
}

/// Shrinks `delta` toward zero until the target inclination respects the phase
/// bounds and the dogleg limit over `horizontal_length`.
///
/// When the current inclination already lies outside the phase bounds (the
/// first drilling decision after a steep landing), the admissible band is
/// widened to include it, so moves toward the band are allowed and moves away
/// from it are not.
pub fn clamp_action_over(
    inclination: f64,
    delta: f64,
    constraints: &SteeringConstraints,
    phase: Phase,
    horizontal_length: f64,
) -> f64 {
    let (lo, hi) = constraints.bounds(phase);
    let lo = lo.min(inclination);
    let hi = hi.max(inclination);
    let dls_room = constraints.dls_limit * horizontal_length / 100.0;
    if delta > 0.0 {
        delta.min(hi - inclination).min(dls_room).max(0.0)
    } else if delta < 0.0 {
        -(-delta).min(inclination - lo).min(dls_room).max(0.0)
    } else {
        0.0
    }
}

pub fn clamp_action(
    state: &WellState,
    delta: f64,
    constraints: &SteeringConstraints,
    phase: Phase,
) -> f64 {
    clamp_action_over(
        state.inclination,
        delta,
        constraints,
        phase,
        constraints.interval_length(),
    )
}

/// TVD gained over the horizontal span `[x0, x1]` of an arc whose inclination
/// starts at `incl0` (degrees) and changes at `rate` degrees per foot.
fn tvd_gain(incl0: f64, rate: f64, x0: f64, x1: f64) -> f64 {
    let phi0 = (incl0 - 90.0).to_radians();
    let k = rate.to_radians();
    if k.abs() < 1e-12 {
        return phi0.tan() * (x1 - x0);
    }
    let phi_a = phi0 + k * x0;
    let phi_b = phi0 + k * x1;
    // d/dx(-ln cos(phi0 + kx)) = k tan(phi0 + kx)
    (phi_a.cos().ln() - phi_b.cos().ln()) / k
}

/// Advances the well one decision interval with an already-clamped
/// inclination change, returning the `interval_stations` new stations.
pub fn step_interval(
    state: &WellState,
    applied_delta: f64,
    constraints: &SteeringConstraints,
) -> Result<Vec<WellState>> {
    let n = constraints.interval_stations;
    let dx = constraints.station_spacing;
    let length = constraints.interval_length();
    let end = state.inclination + applied_delta;
    if !(state.inclination > 0.0 && state.inclination < 180.0 && end > 0.0 && end < 180.0) {
        return Err(Error::Invariant(format!(
            "inclination path {} -> {} leaves (0, 180)",
            state.inclination, end
        )));
    }
    let rate = applied_delta / length;
    let mut tvd = state.tvd;
    let mut out = Vec::with_capacity(n);
    for j in 1..=n {
        let x0 = (j - 1) as f64 * dx;
        let x1 = j as f64 * dx;
        tvd += tvd_gain(state.inclination, rate, x0, x1);
        let inclination = if j == n {
            end
        } else {
            state.inclination + rate * x1
        };
        out.push(WellState {
            station: state.station + j,
            tvd,
            inclination,
        });
    }
    Ok(out)
}

pub fn write_trajectory_csv(path: &std::path::Path, stations: &[WellState]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Validation(e.to_string()))?;
    let map = |e: csv::Error| Error::Validation(format!("trajectory export: {e}"));
    w.write_record(["station", "tvd_ft", "inclination_deg"])
        .map_err(map)?;
    for s in stations {
        w.write_record([
            s.station.to_string(),
            s.tvd.to_string(),
            s.inclination.to_string(),
        ])
        .map_err(map)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at(inclination: f64) -> WellState {
        WellState {
            station: 0,
            tvd: 1000.0,
            inclination,
        }
    }

    /// Composite Simpson quadrature of tan(theta(x) - 90 deg), independent of
    /// the log-cosine closed form.
    fn quadrature_drop(incl0: f64, delta: f64, length: f64, panels: usize) -> f64 {
        let f = |x: f64| ((incl0 + delta * x / length) - 90.0).to_radians().tan();
        let h = length / panels as f64;
        let mut sum = f(0.0) + f(length);
        for i in 1..panels {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * f(i as f64 * h);
        }
        sum * h / 3.0
    }

    #[test]
    fn clamp_examples() {
        let c = SteeringConstraints::default();
        assert_eq!(clamp_action(&at(92.0), 3.0, &c, Phase::Drilling), 2.0);
        assert_eq!(clamp_action(&at(110.0), 1.0, &c, Phase::Landing), 0.0);
        // 85 would leave the 86..94 band; the DLS of a full -5 is 1.5625 < 3
        assert_eq!(clamp_action(&at(90.0), -5.0, &c, Phase::Drilling), -4.0);
        assert_eq!(clamp_action(&at(90.0), -5.0, &c, Phase::Landing), -5.0);
        assert_eq!(dls_of(5.0, 320.0), 1.5625);
    }

    #[test]
    fn out_of_band_inclination_may_only_return() {
        let c = SteeringConstraints::default();
        assert_eq!(clamp_action(&at(100.0), 3.0, &c, Phase::Drilling), 0.0);
        assert_eq!(clamp_action(&at(100.0), -5.0, &c, Phase::Drilling), -5.0);
        assert_eq!(clamp_action(&at(80.0), -2.0, &c, Phase::Drilling), 0.0);
        assert_eq!(clamp_action(&at(80.0), 4.0, &c, Phase::Drilling), 4.0);
    }

    #[test]
    fn dls_branch_binds_only_on_short_intervals() {
        let c = SteeringConstraints::default();
        for delta in c.action_set() {
            assert!(dls_of(delta, c.interval_length()) <= 1.5625);
            assert_eq!(clamp_action_over(90.0, delta, &c, Phase::Landing, 320.0), delta);
        }
        // 3 deg per 100 ft over 50 ft allows 1.5 deg
        assert_eq!(clamp_action_over(90.0, 4.0, &c, Phase::Drilling, 50.0), 1.5);
        assert_eq!(clamp_action_over(90.0, -4.0, &c, Phase::Drilling, 50.0), -1.5);
        assert_eq!(dls_of(3.0, 100.0), 3.0);
        assert_eq!(dls_of(0.0, 320.0), 0.0);
    }

    #[test]
    fn horizontal_well_stays_level() {
        let c = SteeringConstraints::default();
        let path = step_interval(&at(90.0), 0.0, &c).unwrap();
        assert_eq!(path.len(), 32);
        assert!(path.iter().all(|s| s.tvd == 1000.0));
        assert_eq!(path.last().unwrap().station, 32);
    }

    #[test]
    fn constant_landing_inclination_descends() {
        let c = SteeringConstraints::default();
        let path = step_interval(&at(110.0), 0.0, &c).unwrap();
        let drop = path.last().unwrap().tvd - 1000.0;
        assert!((drop - 320.0 * 20f64.to_radians().tan()).abs() < 1e-9);
        assert!((drop - 116.47).abs() < 0.01);
    }

    #[test]
    fn build_matches_quadrature() {
        let c = SteeringConstraints::default();
        let path = step_interval(&at(90.0), 4.0, &c).unwrap();
        let drop = path.last().unwrap().tvd - 1000.0;
        assert!((drop - quadrature_drop(90.0, 4.0, 320.0, 2000)).abs() < 0.01);
        assert_eq!(path.last().unwrap().inclination, 94.0);
    }

    #[test]
    fn all_actions_match_quadrature_from_every_bound() {
        let c = SteeringConstraints::default();
        for start in [70.0, 80.0, 86.0, 90.0, 94.0, 100.0, 110.0] {
            for delta in c.action_set() {
                let path = step_interval(&at(start), delta, &c).unwrap();
                let mut prev = 1000.0;
                for (j, s) in path.iter().enumerate() {
                    // per-station segment against its own quadrature
                    let x0 = j as f64 * 10.0;
                    let seg = {
                        let f = |x: f64| ((start + delta * x / 320.0) - 90.0).to_radians().tan();
                        let n = 200;
                        let h = 10.0 / n as f64;
                        let mut sum = f(x0) + f(x0 + 10.0);
                        for i in 1..n {
                            sum += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x0 + i as f64 * h);
                        }
                        sum * h / 3.0
                    };
                    assert!((s.tvd - prev - seg).abs() < 1e-6);
                    prev = s.tvd;
                }
                let total = path.last().unwrap().tvd - 1000.0;
                assert!((total - quadrature_drop(start, delta, 320.0, 2000)).abs() < 0.01);
            }
        }
    }

    #[test]
    fn reversal_restores_inclination() {
        let c = SteeringConstraints::default();
        let a = step_interval(&at(91.0), 3.0, &c).unwrap();
        let b = step_interval(a.last().unwrap(), -3.0, &c).unwrap();
        assert_eq!(b.last().unwrap().inclination, 91.0);
    }

    #[test]
    fn crossing_vertical_is_an_invariant_violation() {
        let c = SteeringConstraints::default();
        assert!(matches!(
            step_interval(&at(2.0), -5.0, &c),
            Err(Error::Invariant(_))
        ));
    }

    proptest! {
        #[test]
        fn clamp_respects_bounds_and_sign(incl in 70i32..=110, action in 0usize..11, landing: bool) {
            let c = SteeringConstraints::default();
            let phase = if landing { Phase::Landing } else { Phase::Drilling };
            let delta = c.delta_of(action);
            let applied = clamp_action(&at(f64::from(incl)), delta, &c, phase);
            prop_assert!(applied.abs() <= delta.abs());
            prop_assert!(applied == 0.0 || applied.signum() == delta.signum());
            let (lo, hi) = c.bounds(phase);
            let target = f64::from(incl) + applied;
            let incl = f64::from(incl);
            prop_assert!(target >= lo.min(incl) && target <= hi.max(incl));
            if incl >= lo && incl <= hi {
                prop_assert!(target >= lo && target <= hi);
            }
        }

        #[test]
        fn tvd_monotone_in_constant_inclination(incl in 70.0f64..110.0) {
            let c = SteeringConstraints::default();
            let path = step_interval(&at(incl), 0.0, &c).unwrap();
            let mut prev = 1000.0;
            for s in &path {
                if incl > 90.0 { prop_assert!(s.tvd > prev); }
                else if incl < 90.0 { prop_assert!(s.tvd < prev); }
                else { prop_assert!(s.tvd == prev); }
                prev = s.tvd;
            }
        }
    }
}
