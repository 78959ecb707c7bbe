//! Figure data as CSV plus a plain SVG rendering of each figure.
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{ArgGroup, Args};
use trialforge::bench::median;
use trialforge::storage::StorageUrl;
use trialforge::{FrozenTrial, StudyDirection, TrialState};

use crate::bench::TRAJECTORY_HEADER;
use crate::{parse_storage, CliError, CliResult};

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["study", "trajectories"])))]
pub struct PlotArgs {
    #[arg(long, default_value = "memory://", value_parser = parse_storage)]
    storage: StorageUrl,
    /// Plot optimisation history and intermediate curves of this study.
    #[arg(long, visible_alias = "name")]
    study: Option<String>,
    /// Plot median best value against trials or steps from a run-bench trajectories.csv.
    #[arg(long, visible_alias = "scaling")]
    trajectories: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Line,
    Dots,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub mark: Mark,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 190.0, 40.0, 50.0);
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

impl Figure {
    pub fn to_svg(&self) -> String {
        let finite = |s: &Series| -> Vec<(f64, f64)> {
            s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect()
        };
        let all: Vec<(f64, f64)> = self.series.iter().flat_map(finite).collect();
        let (x0, x1) = extent(all.iter().map(|p| p.0));
        let (y0, y1) = extent(all.iter().map(|p| p.1));
        let (left, right, top, bottom) = MARGIN;
        let (pw, ph) = (WIDTH - left - right, HEIGHT - top - bottom);
        let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" font-size="14" text-anchor="middle">{}</text>"#,
            left + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                sx(x),
                top + ph + 16.0,
                tick(x)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                left - 6.0,
                sy(y) + 4.0,
                tick(y)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            left + pw / 2.0,
            HEIGHT - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
            top + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let points = finite(series);
            match series.mark {
                Mark::Line => {
                    let path: Vec<String> =
                        points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
                    let _ = writeln!(
                        s,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                        path.join(" ")
                    );
                }
                Mark::Dots => {
                    for &(x, y) in &points {
                        let _ = writeln!(
                            s,
                            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}" fill-opacity="0.6"/>"#,
                            sx(x),
                            sy(y)
                        );
                    }
                }
            }
            if !series.label.is_empty() {
                let ly = top + 12.0 + 16.0 * i as f64;
                let _ = writeln!(
                    s,
                    r#"<rect x="{}" y="{}" width="12" height="3" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
                    WIDTH - right + 10.0,
                    ly - 4.0,
                    WIDTH - right + 26.0,
                    ly,
                    escape(&series.label)
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// `(number, value, best so far)` for complete trials in number order.
pub fn history(trials: &[FrozenTrial], direction: StudyDirection) -> Vec<(u64, f64, f64)> {
    let mut best: Option<f64> = None;
    let mut out = Vec::new();
    for t in trials {
        let Some(v) = t.value.filter(|_| t.state == TrialState::Complete) else {
            continue;
        };
        if best.is_none_or(|b| direction.compare(v, b).is_lt()) {
            best = Some(v);
        }
        out.push((t.number, v, best.unwrap()));
    }
    out
}

type SeriesKey = (String, String, String, usize);

/// Median over repeats of the best value reached at each recorded `x`.
pub fn median_trajectories(path: &Path) -> anyhow::Result<BTreeMap<SeriesKey, Vec<(u64, f64)>>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = reader.headers()?.clone();
    if header.iter().ne(TRAJECTORY_HEADER) {
        anyhow::bail!("{} is not a trajectories file", path.display());
    }
    let mut runs: BTreeMap<SeriesKey, BTreeMap<usize, Vec<(u64, f64)>>> = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let key = (row[0].to_owned(), row[1].to_owned(), row[2].to_owned(), row[3].parse()?);
        let repeat: usize = row[4].parse()?;
        runs.entry(key).or_default().entry(repeat).or_default().push((row[5].parse()?, row[6].parse()?));
    }
    Ok(runs
        .into_iter()
        .map(|(key, repeats)| {
            let mut xs: Vec<u64> = repeats.values().flatten().map(|p| p.0).collect();
            xs.sort_unstable();
            xs.dedup();
            let curve = xs
                .into_iter()
                .filter_map(|x| {
                    let at: Vec<f64> = repeats
                        .values()
                        .map(|t| {
                            t.iter().take_while(|p| p.0 <= x).last().map_or(f64::INFINITY, |p| p.1)
                        })
                        .collect();
                    let m = median(&at);
                    m.is_finite().then_some((x, m))
                })
                .collect();
            (key, curve)
        })
        .collect())
}

fn write_figure(dir: &Path, stem: &str, header: &[&str], rows: &[Vec<String>], figure: &Figure) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(dir.join(format!("{stem}.csv")))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    fs::write(dir.join(format!("{stem}.svg")), figure.to_svg())?;
    println!("wrote {}", dir.join(format!("{stem}.svg")).display());
    Ok(())
}

fn plot_study(storage: &StorageUrl, name: &str, dir: &Path) -> CliResult {
    let storage = storage.open()?;
    let record = storage
        .get_study_by_name(name)?
        .ok_or_else(|| trialforge::Error::UnknownStudy(name.to_owned()))?;
    let trials = storage.get_all_trials(record.study_id)?;

    let hist = history(&trials, record.direction);
    let rows: Vec<Vec<String>> = hist
        .iter()
        .map(|(n, v, b)| vec![n.to_string(), v.to_string(), b.to_string()])
        .collect();
    let figure = Figure {
        title: format!("Optimization history of {name}"),
        x_label: "trial".into(),
        y_label: "objective value".into(),
        series: vec![
            Series {
                label: "value".into(),
                mark: Mark::Dots,
                points: hist.iter().map(|&(n, v, _)| (n as f64, v)).collect(),
            },
            Series {
                label: "best".into(),
                mark: Mark::Line,
                points: hist.iter().map(|&(n, _, b)| (n as f64, b)).collect(),
            },
        ],
    };
    write_figure(dir, "optimization-history", &["number", "value", "best"], &rows, &figure)?;

    let mut rows = Vec::new();
    let mut series = Vec::new();
    for t in &trials {
        if t.intermediate_values.is_empty() {
            continue;
        }
        let points: Vec<(f64, f64)> = t.intermediate_values.iter().map(|&(s, v)| (s as f64, v)).collect();
        for (s, v) in &t.intermediate_values {
            rows.push(vec![t.number.to_string(), t.state.to_string(), s.to_string(), v.to_string()]);
        }
        series.push(Series {
            label: String::new(),
            mark: Mark::Line,
            points,
        });
    }
    let figure = Figure {
        title: format!("Intermediate values of {name}"),
        x_label: "step".into(),
        y_label: "intermediate value".into(),
        series,
    };
    write_figure(dir, "intermediate-curves", &["number", "state", "step", "value"], &rows, &figure)?;
    Ok(())
}

fn plot_trajectories(path: &Path, dir: &Path) -> CliResult {
    let curves = median_trajectories(path)?;
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for ((function, sampler, pruner, workers), curve) in &curves {
        let label = format!("{function} {sampler} {pruner} w={workers}");
        for (x, m) in curve {
            rows.push(vec![
                function.clone(),
                sampler.clone(),
                pruner.clone(),
                workers.to_string(),
                x.to_string(),
                m.to_string(),
            ]);
        }
        series.push(Series {
            label,
            mark: Mark::Line,
            points: curve.iter().map(|&(x, m)| (x as f64, m)).collect(),
        });
    }
    let figure = Figure {
        title: "Median best value".into(),
        x_label: "trials or steps consumed".into(),
        y_label: "median best value".into(),
        series,
    };
    write_figure(
        dir,
        "best-vs-trials",
        &["function", "sampler", "pruner", "n_workers", "x", "median_best"],
        &rows,
        &figure,
    )?;
    Ok(())
}

pub fn plot(args: PlotArgs) -> CliResult {
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    match (&args.study, &args.trajectories) {
        (Some(name), _) => plot_study(&args.storage, name, &args.out),
        (None, Some(path)) => plot_trajectories(path, &args.out),
        (None, None) => Err(CliError::Usage("one of --study or --trajectories is required".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_skips_non_finite_points_and_escapes_labels() {
        let figure = Figure {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series {
                label: "s&t".into(),
                mark: Mark::Line,
                points: vec![(0.0, 1.0), (1.0, f64::INFINITY), (2.0, 0.5)],
            }],
        };
        let svg = figure.to_svg();
        assert!(svg.contains("a &lt; b"));
        assert!(svg.contains("s&amp;t"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(!svg.contains("inf"));
    }

    #[test]
    fn empty_figure_renders() {
        let figure = Figure {
            title: "empty".into(),
            x_label: String::new(),
            y_label: String::new(),
            series: vec![],
        };
        assert!(figure.to_svg().ends_with("</svg>\n"));
    }
}
