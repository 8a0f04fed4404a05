//! Reservoir realizations and the offset gamma-ray log.
//!
//! Depths are true vertical depth in feet, positive downward. Relative depth
//! is `bit_tvd - top_tvd`: 0 on the top boundary, `thickness` on the bottom.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const FAULT_PLACEMENT_RETRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StratigraphyConfig {
    pub n_stations: usize,
    pub station_spacing: f64,
    pub thickness: f64,
    pub max_faults: usize,
    pub min_fault_separation: usize,
    pub slope_ar1_rho: f64,
    pub slope_noise_sigma: f64,
    pub slope_clamp: f64,
    pub fault_throw_range: (f64, f64),
    pub start_offset_range: (f64, f64),
    /// TVD of the top boundary at station 0.
    pub base_depth: f64,
    /// Standard deviation of additive gamma noise. Observations are exact at 0.
    pub measurement_noise: f64,
}

impl Default for StratigraphyConfig {
    fn default() -> Self {
        Self {
            n_stations: 320,
            station_spacing: 10.0,
            thickness: 20.0,
            max_faults: 3,
            min_fault_separation: 100,
            slope_ar1_rho: 0.97,
            slope_noise_sigma: 0.1,
            slope_clamp: 0.6,
            fault_throw_range: (10.0, 30.0),
            start_offset_range: (200.0, 250.0),
            base_depth: 1000.0,
            measurement_noise: 0.0,
        }
    }
}

impl StratigraphyConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(format!("stratigraphy: {msg}")));
        if self.n_stations == 0 {
            return fail("n_stations must be positive");
        }
        if !(self.station_spacing > 0.0) {
            return fail("station_spacing must be positive");
        }
        if !(self.thickness > 0.0) {
            return fail("thickness must be positive");
        }
        if self.max_faults > 0
            && self.min_fault_separation * (self.max_faults - 1) >= self.n_stations
        {
            return fail("max_faults cannot be placed with min_fault_separation");
        }
        if !(self.slope_clamp > 0.0) {
            return fail("slope_clamp must be positive");
        }
        if !(self.slope_ar1_rho > 0.0 && self.slope_ar1_rho < 1.0) {
            return fail("slope_ar1_rho must lie in (0, 1)");
        }
        if !(self.slope_noise_sigma >= 0.0) || !(self.measurement_noise >= 0.0) {
            return fail("noise levels must be non-negative");
        }
        let (lo, hi) = self.fault_throw_range;
        if !(lo >= 0.0 && lo <= hi) {
            return fail("fault_throw_range must satisfy 0 <= min <= max");
        }
        let (lo, hi) = self.start_offset_range;
        if !(lo >= 0.0 && lo <= hi) {
            return fail("start_offset_range must satisfy 0 <= min <= max");
        }
        Ok(())
    }

    /// Standard deviation of the stationary slope process before clamping.
    pub fn stationary_slope_std(&self) -> f64 {
        self.slope_noise_sigma / (1.0 - self.slope_ar1_rho * self.slope_ar1_rho).sqrt()
    }
}

/// Ground-truth boundaries for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    /// Top boundary TVD at stations `0..=n_stations`.
    pub top_depth: Vec<f64>,
    pub thickness: f64,
    /// Stations whose incoming increment carries a fault throw, ascending.
    pub fault_stations: Vec<usize>,
    pub fault_throws: Vec<f64>,
    /// Height of the bit above the top boundary at station 0.
    pub start_offset: f64,
    pub seed: u64,
}

impl Realization {
    pub fn n_stations(&self) -> usize {
        self.top_depth.len() - 1
    }

    pub fn top(&self, station: usize) -> f64 {
        self.top_depth[station.min(self.n_stations())]
    }

    pub fn bottom(&self, station: usize) -> f64 {
        self.top(station) + self.thickness
    }

    /// Local dip of the top boundary in ft per station, measured backwards and
    /// excluding any fault throw at `station`.
    pub fn slope_at(&self, station: usize) -> f64 {
        if station == 0 {
            return self.top_depth[1] - self.top_depth[0];
        }
        let station = station.min(self.n_stations());
        let mut d = self.top_depth[station] - self.top_depth[station - 1];
        if let Some(i) = self.fault_stations.iter().position(|&f| f == station) {
            d -= self.fault_throws[i];
        }
        d
    }

    pub fn faults_after(&self, station: usize) -> usize {
        self.fault_stations.iter().filter(|&&f| f > station).count()
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let map = |e: csv::Error| Error::Validation(format!("realization export: {e}"));
        w.write_record(["station", "top_tvd_ft", "bottom_tvd_ft", "is_fault"])
            .map_err(map)?;
        for (k, &top) in self.top_depth.iter().enumerate() {
            let is_fault = self.fault_stations.contains(&k);
            w.write_record([
                k.to_string(),
                top.to_string(),
                (top + self.thickness).to_string(),
                u8::from(is_fault).to_string(),
            ])
            .map_err(map)?;
        }
        w.flush().map_err(|e| Error::io("<realization>", e))?;
        Ok(())
    }
}

/// Draws one realization: an AR(1) slope walk plus up to `max_faults`
/// instantaneous throws. Pure in `(config, seed)`.
pub fn generate_realization(config: &StratigraphyConfig, seed: u64) -> Result<Realization> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.n_stations;

    let n_faults = rng.random_range(0..=config.max_faults);
    let fault_stations = place_faults(&mut rng, n, n_faults, config.min_fault_separation)?;
    let (throw_lo, throw_hi) = config.fault_throw_range;
    let fault_throws: Vec<f64> = fault_stations
        .iter()
        .map(|_| {
            let magnitude = if throw_hi > throw_lo {
                rng.random_range(throw_lo..=throw_hi)
            } else {
                throw_lo
            };
            if rng.random_bool(0.5) {
                magnitude
            } else {
                -magnitude
            }
        })
        .collect();

    let (off_lo, off_hi) = config.start_offset_range;
    let start_offset = if off_hi > off_lo {
        rng.random_range(off_lo..=off_hi)
    } else {
        off_lo
    };

    let clamp = config.slope_clamp;
    let noise = Normal::new(0.0, config.slope_noise_sigma)
        .map_err(|e| Error::Config(format!("slope noise: {e}")))?;
    let stationary = Normal::new(0.0, config.stationary_slope_std())
        .map_err(|e| Error::Config(format!("slope noise: {e}")))?;

    let mut top_depth = Vec::with_capacity(n + 1);
    let mut depth = config.base_depth;
    let mut slope: f64 = stationary.sample(&mut rng).clamp(-clamp, clamp);
    top_depth.push(depth);
    let mut next_fault = 0;
    for k in 1..=n {
        depth += slope;
        if next_fault < fault_stations.len() && fault_stations[next_fault] == k {
            depth += fault_throws[next_fault];
            next_fault += 1;
        }
        top_depth.push(depth);
        slope = (config.slope_ar1_rho * slope + noise.sample(&mut rng)).clamp(-clamp, clamp);
    }

    Ok(Realization {
        top_depth,
        thickness: config.thickness,
        fault_stations,
        fault_throws,
        start_offset,
        seed,
    })
}

fn place_faults(
    rng: &mut impl Rng,
    n_stations: usize,
    count: usize,
    separation: usize,
) -> Result<Vec<usize>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    for _ in 0..FAULT_PLACEMENT_RETRIES {
        let mut stations: Vec<usize> = (0..count)
            .map(|_| rng.random_range(1..=n_stations))
            .collect();
        stations.sort_unstable();
        if stations.windows(2).all(|w| w[1] - w[0] >= separation) {
            return Ok(stations);
        }
    }
    Err(Error::Config(format!(
        "could not place {count} faults {separation} stations apart in {FAULT_PLACEMENT_RETRIES} tries"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LogSource {
    Synthetic { seed: u64 },
    File { path: PathBuf },
}

/// Reference gamma profile as a function of relative depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetLog {
    rel_depth: Vec<f64>,
    gamma: Vec<f64>,
    source: LogSource,
}

/// Baseline gamma above, inside and below the reservoir.
const SHALE_ABOVE: f64 = 0.8;
const RESERVOIR: f64 = 0.2;
const SHALE_BELOW: f64 = 0.75;
const FLUCTUATION_AMPLITUDE: f64 = 0.15;
const N_SINUSOIDS: usize = 8;
const SYNTH_GRID: (i32, i32) = (-300, 280);

impl OffsetLog {
    pub fn new(rel_depth: Vec<f64>, gamma: Vec<f64>, source: LogSource) -> Result<Self> {
        if rel_depth.is_empty() {
            return Err(Error::Validation("offset log is empty".into()));
        }
        if rel_depth.len() != gamma.len() {
            return Err(Error::Validation(
                "offset log depth and gamma lengths differ".into(),
            ));
        }
        if let Some(i) = rel_depth.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Validation(format!(
                "offset log depth grid not strictly increasing at sample {} ({} then {})",
                i + 1,
                rel_depth[i],
                rel_depth[i + 1]
            )));
        }
        if let Some(g) = gamma.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            return Err(Error::Validation(format!(
                "offset log gamma {g} outside [0, 1]"
            )));
        }
        Ok(Self {
            rel_depth,
            gamma,
            source,
        })
    }

    pub fn rel_depth(&self) -> &[f64] {
        &self.rel_depth
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn source(&self) -> &LogSource {
        &self.source
    }

    pub fn span(&self) -> (f64, f64) {
        (self.rel_depth[0], self.rel_depth[self.rel_depth.len() - 1])
    }

    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        let (a, b) = self.span();
        a <= lo && hi <= b
    }

    /// Linear interpolation on the grid, clamped to the end values outside it.
    pub fn gamma_at(&self, rel_depth: f64) -> f64 {
        let xs = &self.rel_depth;
        let last = xs.len() - 1;
        if !(rel_depth > xs[0]) {
            return self.gamma[0];
        }
        if rel_depth >= xs[last] {
            return self.gamma[last];
        }
        // first index with xs[i] > rel_depth; 1 <= i <= last
        let i = xs.partition_point(|&x| x <= rel_depth);
        let (x0, x1) = (xs[i - 1], xs[i]);
        let (g0, g1) = (self.gamma[i - 1], self.gamma[i]);
        if rel_depth == x0 {
            return g0;
        }
        g0 + (g1 - g0) * (rel_depth - x0) / (x1 - x0)
    }
}

/// Synthetic stand-in for a real offset log: layer baselines plus a bounded
/// sum of sinusoids, on a 1-ft grid.
pub fn synth_offset_log(seed: u64) -> OffsetLog {
    synth_offset_log_with_thickness(seed, StratigraphyConfig::default().thickness)
}

pub fn synth_offset_log_with_thickness(seed: u64, thickness: f64) -> OffsetLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..N_SINUSOIDS).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let waves: Vec<(f64, f64, f64)> = raw
        .iter()
        .map(|a| {
            let amplitude = FLUCTUATION_AMPLITUDE * a / total;
            let wavelength = rng.random_range(5.0..=80.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            (amplitude, wavelength, phase)
        })
        .collect();

    let (lo, hi) = SYNTH_GRID;
    let rel_depth: Vec<f64> = (lo..=hi).map(f64::from).collect();
    let gamma = rel_depth
        .iter()
        .map(|&z| {
            let base = if z < 0.0 {
                SHALE_ABOVE
            } else if z <= thickness {
                RESERVOIR
            } else {
                SHALE_BELOW
            };
            let wiggle: f64 = waves
                .iter()
                .map(|&(a, l, p)| a * (2.0 * PI * z / l + p).sin())
                .sum();
            (base + wiggle).clamp(0.0, 1.0)
        })
        .collect();
    OffsetLog {
        rel_depth,
        gamma,
        source: LogSource::Synthetic { seed },
    }
}

/// Reads a two-column `rel_depth_ft,gamma` CSV. A non-numeric first row is
/// treated as a header. With `rescale` the gamma column is min-max scaled
/// into [0, 1]; otherwise values must already lie there.
pub fn load_offset_log(path: &Path, rescale: bool) -> Result<OffsetLog> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);

    let mut rel_depth = Vec::new();
    let mut gamma = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(i + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.len() != 2 {
            return Err(parse_err(format!("expected 2 columns, found {}", record.len())));
        }
        let parsed = (record[0].parse::<f64>(), record[1].parse::<f64>());
        match parsed {
            (Ok(z), Ok(g)) if z.is_finite() && g.is_finite() => {
                rel_depth.push(z);
                gamma.push(g);
            }
            _ if i == 0 => continue,
            _ => {
                return Err(parse_err(format!(
                    "cannot parse '{},{}' as two numbers",
                    &record[0], &record[1]
                )))
            }
        }
    }

    if rel_depth.is_empty() {
        return Err(Error::Validation(format!(
            "offset log {} has no samples",
            path.display()
        )));
    }
    if rescale {
        let min = gamma.iter().copied().fold(f64::INFINITY, f64::min);
        let max = gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = max - min;
        for g in &mut gamma {
            *g = if range > 0.0 { (*g - min) / range } else { 0.0 };
        }
    }
    OffsetLog::new(
        rel_depth,
        gamma,
        LogSource::File {
            path: path.to_path_buf(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        std::io::Write::write_all(&mut f, contents.as_bytes()).unwrap();
        f
    }

    fn small_log() -> OffsetLog {
        OffsetLog::new(
            vec![0.0, 10.0, 20.0],
            vec![0.2, 0.4, 0.9],
            LogSource::Synthetic { seed: 0 },
        )
        .unwrap()
    }

    #[test]
    fn fault_free_walk_is_slope_bounded() {
        let cfg = StratigraphyConfig {
            max_faults: 0,
            ..Default::default()
        };
        let r = generate_realization(&cfg, 7).unwrap();
        assert!(r.fault_stations.is_empty());
        for w in r.top_depth.windows(2) {
            assert!((w[1] - w[0]).abs() <= cfg.slope_clamp + 1e-12);
        }
    }

    #[test]
    fn three_fault_realizations_keep_separation() {
        let cfg = StratigraphyConfig::default();
        let mut seen = 0;
        for seed in 0..400 {
            let r = generate_realization(&cfg, seed).unwrap();
            if r.fault_stations.len() == 3 {
                seen += 1;
                for w in r.fault_stations.windows(2) {
                    assert!(w[1] - w[0] >= 100, "seed {seed}: {:?}", r.fault_stations);
                }
            }
        }
        assert!(seen > 20);
    }

    #[test]
    fn fault_count_is_uniform_over_zero_to_three() {
        let cfg = StratigraphyConfig::default();
        let mut counts = [0usize; 4];
        for seed in 0..4000 {
            counts[generate_realization(&cfg, seed).unwrap().fault_stations.len()] += 1;
        }
        // 1000 expected each, binomial sd ~ 27
        for c in counts {
            assert!((c as i64 - 1000).abs() < 120, "{counts:?}");
        }
    }

    #[test]
    fn start_offset_within_range() {
        let cfg = StratigraphyConfig::default();
        for seed in 0..200 {
            let r = generate_realization(&cfg, seed).unwrap();
            assert!((200.0..=250.0).contains(&r.start_offset));
        }
    }

    #[test]
    fn impossible_fault_layout_is_a_config_error() {
        let cfg = StratigraphyConfig {
            n_stations: 100,
            min_fault_separation: 60,
            ..Default::default()
        };
        assert!(matches!(generate_realization(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn slope_at_removes_fault_throw() {
        let cfg = StratigraphyConfig::default();
        for seed in 0..100 {
            let r = generate_realization(&cfg, seed).unwrap();
            for k in 1..=r.n_stations() {
                assert!(r.slope_at(k).abs() <= cfg.slope_clamp + 1e-9);
            }
        }
    }

    #[test]
    fn realization_csv_has_one_row_per_station() {
        let r = generate_realization(&StratigraphyConfig::default(), 3).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("station,top_tvd_ft,bottom_tvd_ft,is_fault"));
        assert_eq!(lines.count(), 321);
    }

    #[test]
    fn synthetic_log_is_clipped_and_deterministic() {
        let a = synth_offset_log(1);
        let b = synth_offset_log(1);
        assert!(a.gamma().iter().all(|g| (0.0..=1.0).contains(g)));
        assert_eq!(
            a.gamma().iter().map(|g| g.to_bits()).collect::<Vec<_>>(),
            b.gamma().iter().map(|g| g.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.span(), (-300.0, 280.0));
        assert!(a.covers(-300.0, 270.0));
    }

    #[test]
    fn synthetic_log_separates_sand_from_shale() {
        let log = synth_offset_log(1);
        let mean = |lo: f64, hi: f64| {
            let v: Vec<f64> = log
                .rel_depth()
                .iter()
                .zip(log.gamma())
                .filter(|(z, _)| (lo..=hi).contains(*z))
                .map(|(_, g)| *g)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(5.0, 15.0) < mean(-100.0, -50.0));
        assert!(mean(5.0, 15.0) < 0.4);
    }

    #[test]
    fn gamma_at_interpolates_and_clamps() {
        let log = small_log();
        assert_eq!(log.gamma_at(10.0), 0.4);
        assert_eq!(log.gamma_at(0.0), 0.2);
        assert_eq!(log.gamma_at(20.0), 0.9);
        assert!((log.gamma_at(5.0) - 0.3).abs() < 1e-15);
        assert_eq!(log.gamma_at(-10_000.0), 0.2);
        assert_eq!(log.gamma_at(10_000.0), 0.9);
    }

    #[test]
    fn loads_two_rows() {
        let f = write_tmp("0,0.5\n10,0.7");
        let log = load_offset_log(f.path(), false).unwrap();
        assert_eq!(log.rel_depth(), &[0.0, 10.0]);
        assert_eq!(log.gamma(), &[0.5, 0.7]);
    }

    #[test]
    fn loads_header_and_crlf() {
        let f = write_tmp("rel_depth_ft,gamma\r\n0,0.5\r\n10,0.7\r\n");
        let log = load_offset_log(f.path(), false).unwrap();
        assert_eq!(log.gamma(), &[0.5, 0.7]);
    }

    #[test]
    fn rescale_maps_into_unit_interval() {
        let f = write_tmp("0,30\n5,150\n10,90\n");
        let log = load_offset_log(f.path(), true).unwrap();
        assert_eq!(log.gamma(), &[0.0, 1.0, 0.5]);
        let err = load_offset_log(f.path(), false).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn duplicate_depth_is_rejected() {
        let f = write_tmp("0,0.1\n10,0.2\n10,0.3\n");
        assert!(matches!(
            load_offset_log(f.path(), false),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = write_tmp("0,0.1\n10,abc\n");
        match load_offset_log(f.path(), false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_rejected() {
        let f = write_tmp("");
        assert!(matches!(
            load_offset_log(f.path(), false),
            Err(Error::Validation(_))
        ));
    }

    proptest! {
        #[test]
        fn realization_is_pure_and_constant_thickness(seed in any::<u64>()) {
            let cfg = StratigraphyConfig::default();
            let a = generate_realization(&cfg, seed).unwrap();
            let b = generate_realization(&cfg, seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.top_depth.len(), 321);
            for k in 0..=320 {
                prop_assert!((a.bottom(k) - a.top(k) - 20.0).abs() < 1e-9);
            }
            for w in a.fault_stations.windows(2) {
                prop_assert!(w[1] - w[0] >= 100);
            }
            for k in 1..=320 {
                let inc = (a.top_depth[k] - a.top_depth[k - 1]).abs();
                if a.fault_stations.contains(&k) {
                    prop_assert!(inc >= 10.0 - 0.6 - 1e-9 && inc <= 30.0 + 0.6 + 1e-9);
                } else {
                    prop_assert!(inc <= 0.6 + 1e-12);
                }
            }
        }

        #[test]
        fn gamma_at_is_lipschitz(z in -320.0f64..300.0, dz in 0.0f64..2.0) {
            let log = synth_offset_log(5);
            let max_gap = log.gamma().windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
            let diff = (log.gamma_at(z + dz) - log.gamma_at(z)).abs();
            prop_assert!(diff <= max_gap * dz + 1e-12);
        }
    }
}
