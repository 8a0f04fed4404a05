use std::path::{Path, PathBuf};

use super::evaluate::{summarize, EpisodeRecord};
use super::svg::{bar_chart, line_chart, BarGroup, Series};
use super::sweep::SweepRow;
use super::train::{read_curve, smooth};
use super::Method;
use crate::{Error, Result};

const SMOOTHING: usize = 100;
const MAX_POINTS: usize = 400;

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
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

fn write(path: PathBuf, text: String, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Seed directories of one method, sorted by name.
fn seed_dirs(method_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(method_dir).map_err(|e| Error::io(method_dir, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("seed_"))
        })
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn training_chart(method: Method, dirs: &[PathBuf]) -> Result<String> {
    let mut curves = Vec::new();
    for d in dirs {
        let path = d.join("curve.csv");
        if !path.is_file() {
            return Err(Error::Validation(format!("missing artifact {}", path.display())));
        }
        let rewards: Vec<f64> = read_curve(&path)?.iter().map(|r| r.reward).collect();
        curves.push(smooth(&rewards, SMOOTHING));
    }
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    let stride = len.div_ceil(MAX_POINTS).max(1);
    let mut points = Vec::new();
    let mut band = Vec::new();
    for i in (0..len).step_by(stride).chain(len.checked_sub(1).filter(|l| l % stride != 0)) {
        let v: Vec<f64> = curves.iter().map(|c| c[i]).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let x = (i + 1) as f64;
        points.push((x, mean));
        band.push((x, lo, hi));
    }
    Ok(line_chart(
        &format!("{method}: reward over the last {SMOOTHING} episodes ({} seeds)", curves.len()),
        "episode",
        "reward",
        &[Series {
            name: "mean, min-max band".into(),
            points,
            band,
        }],
    ))
}

/// Renders charts and tables from whatever artifacts `dir` holds: training
/// curves, evaluation records and filter sweeps. Returns the files written.
pub fn report(dir: &Path, scored_stations: usize) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Validation(format!("report directory {} does not exist", dir.display())));
    }
    let mut written = Vec::new();

    for method in Method::learned() {
        let mdir = dir.join(method.name());
        if !mdir.is_dir() {
            continue;
        }
        let dirs = seed_dirs(&mdir)?;
        if dirs.is_empty() {
            continue;
        }
        let svg = training_chart(method, &dirs)?;
        write(dir.join(format!("training_{method}.svg")), svg, &mut written)?;
    }

    let results = dir.join("results.csv");
    if results.is_file() {
        let records: Vec<EpisodeRecord> = read_rows(&results)?;
        let mut methods: Vec<Method> = records.iter().map(|r| r.method).collect();
        methods.sort();
        methods.dedup();
        let summaries = methods
            .iter()
            .map(|&m| summarize(m, &records, scored_stations))
            .collect::<Result<Vec<_>>>()?;
        let names: Vec<String> = summaries.iter().map(|s| s.method.name().to_string()).collect();
        let groups: Vec<BarGroup> = (0..3)
            .map(|k| BarGroup {
                name: format!("faults >= {k}"),
                values: summaries.iter().map(|s| s.contact_by_faults[k]).collect(),
            })
            .collect();
        write(
            dir.join("report_contact.svg"),
            bar_chart("Reservoir contact by fault count", "contact (%)", &names, &groups),
            &mut written,
        )?;
        let mut table = String::from("method,median_reward,contact,boundary_mae,gamma_mae\n");
        for s in &summaries {
            let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
            table.push_str(&format!(
                "{},{:.4},{:.4},{},{}\n",
                s.method,
                s.median_reward,
                s.contact,
                opt(s.boundary_mae),
                opt(s.gamma_mae)
            ));
        }
        write(dir.join("report_table.csv"), table, &mut written)?;
    }

    for (file, x_of, y_label) in [
        ("sweep_n_par.csv", (|r: &SweepRow| r.n_par as f64) as fn(&SweepRow) -> f64, "particles"),
        ("sweep_n_best.csv", |r: &SweepRow| r.n_best as f64, "best estimates"),
    ] {
        let p = dir.join(file);
        if !p.is_file() {
            continue;
        }
        let rows: Vec<SweepRow> = read_rows(&p)?;
        let series = vec![
            Series {
                name: "median gamma MAE".into(),
                points: rows.iter().map(|r| (x_of(r), r.median_gamma_mae)).collect(),
                band: Vec::new(),
            },
            Series {
                name: "mean gamma MAE".into(),
                points: rows.iter().map(|r| (x_of(r), r.mean_gamma_mae)).collect(),
                band: Vec::new(),
            },
        ];
        let svg = line_chart("Filter estimate error", y_label, "gamma MAE", &series);
        write(dir.join(file.replace(".csv", "_report.svg")), svg, &mut written)?;
    }

    if written.is_empty() {
        return Err(Error::Validation(format!(
            "no training curves, results.csv or sweep tables under {}",
            dir.display()
        )));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_or_missing_directories_are_named() {
        let tmp = tempfile::tempdir().unwrap();
        let err = report(tmp.path(), 224).unwrap_err().to_string();
        assert!(err.contains(&tmp.path().display().to_string()), "{err}");
        let gone = tmp.path().join("nope");
        assert!(report(&gone, 224).unwrap_err().to_string().contains("nope"));
    }

    #[test]
    fn missing_curve_is_named() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(tmp.path().join("rl_log/seed_1")).unwrap();
        let err = report(tmp.path(), 224).unwrap_err().to_string();
        assert!(err.contains("curve.csv"), "{err}");
    }

    #[test]
    fn curves_render_identically_twice() {
        let tmp = tempfile::tempdir().unwrap();
        for seed in [1, 2] {
            let d = tmp.path().join(format!("rl_est_1/seed_{seed}"));
            std::fs::create_dir_all(&d).unwrap();
            let mut text = String::from("episode,reward,epsilon,loss_mean,wall_ms\n");
            for ep in 1..=250 {
                text.push_str(&format!("{ep},{},1.0,0.5,0\n", -((ep * seed) % 200)));
            }
            std::fs::write(d.join("curve.csv"), text).unwrap();
        }
        let a = report(tmp.path(), 224).unwrap();
        let first = std::fs::read(&a[0]).unwrap();
        report(tmp.path(), 224).unwrap();
        assert_eq!(first, std::fs::read(&a[0]).unwrap());
        assert!(a[0].ends_with("training_rl_est_1.svg"));
    }
}
