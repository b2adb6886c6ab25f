//! Static SVG figures from a bench CSV.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::harness::bench::BenchRow;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Epsilon,
    SampleRate,
    Deviation,
    Sensitivity,
    TimeMs,
    Walks,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "epsilon" => Ok(Axis::Epsilon),
            "sample-rate" | "rate" => Ok(Axis::SampleRate),
            "deviation" => Ok(Axis::Deviation),
            "sensitivity" => Ok(Axis::Sensitivity),
            "time" => Ok(Axis::TimeMs),
            "walks" => Ok(Axis::Walks),
            _ => Err(Error::param(format!("unknown axis `{s}`"))),
        }
    }

    fn label(self) -> &'static str {
        match self {
            Axis::Epsilon => "epsilon",
            Axis::SampleRate => "sample rate",
            Axis::Deviation => "median deviation",
            Axis::Sensitivity => "median sensitivity",
            Axis::TimeMs => "median online time (ms)",
            Axis::Walks => "median walks",
        }
    }

    fn value(self, r: &BenchRow) -> Option<f64> {
        match self {
            Axis::Epsilon => Some(r.epsilon),
            Axis::SampleRate => r.sample_rate,
            Axis::Deviation => Some(r.median_deviation),
            Axis::Sensitivity => Some(r.median_sensitivity),
            Axis::TimeMs => Some(r.time_p50_ms),
            Axis::Walks => r.median_walks,
        }
    }
}

pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn log_range(v: impl Iterator<Item = f64>) -> Option<std::ops::Range<f64>> {
    let (lo, hi) = v
        .filter(|x| *x > 0.0 && x.is_finite())
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
    (hi > 0.0).then(|| lo / 1.5..hi * 1.5)
}

/// One log-log figure per query: a line per method and mechanism. Points
/// with a non-positive or missing coordinate are skipped. Returns the files
/// written.
pub fn render(rows: &[BenchRow], x: Axis, y: Axis, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    type Series = BTreeMap<String, Vec<(f64, f64)>>;
    let mut by_query: BTreeMap<&str, Series> = BTreeMap::new();
    for r in rows {
        if let (Some(a), Some(b)) = (x.value(r), y.value(r)) {
            if a > 0.0 && b > 0.0 {
                by_query
                    .entry(&r.query)
                    .or_default()
                    .entry(format!("{} / {}", r.method, r.mechanism))
                    .or_default()
                    .push((a, b));
            }
        }
    }
    let plot_err = |e: String| Error::Config(format!("plotting failed: {e}"));
    let mut written = Vec::new();
    for (query, series) in by_query {
        let xr = log_range(series.values().flatten().map(|p| p.0)).expect("positive points");
        let yr = log_range(series.values().flatten().map(|p| p.1)).expect("positive points");
        let path = out_dir.join(format!("{query}_{}_vs_{}.svg", name(y), name(x)));
        {
            let root = SVGBackend::new(&path, (800, 560)).into_drawing_area();
            root.fill(&WHITE).map_err(|e| plot_err(e.to_string()))?;
            let mut chart = ChartBuilder::on(&root)
                .caption(format!("{query}: {} vs {}", y.label(), x.label()), ("sans-serif", 20))
                .margin(12)
                .x_label_area_size(40)
                .y_label_area_size(70)
                .build_cartesian_2d(xr.log_scale(), yr.log_scale())
                .map_err(|e| plot_err(e.to_string()))?;
            chart
                .configure_mesh()
                .x_desc(x.label())
                .y_desc(y.label())
                .draw()
                .map_err(|e| plot_err(e.to_string()))?;
            for (i, (label, mut pts)) in series.into_iter().enumerate() {
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                let color = Palette99::pick(i).to_rgba();
                chart
                    .draw_series(LineSeries::new(pts, color.stroke_width(2)))
                    .map_err(|e| plot_err(e.to_string()))?
                    .label(label)
                    .legend(move |(px, py)| PathElement::new([(px, py), (px + 18, py)], color.stroke_width(2)));
            }
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()
                .map_err(|e| plot_err(e.to_string()))?;
            root.present().map_err(|e| plot_err(e.to_string()))?;
        }
        written.push(path);
    }
    Ok(written)
}

fn name(a: Axis) -> &'static str {
    match a {
        Axis::Epsilon => "epsilon",
        Axis::SampleRate => "rate",
        Axis::Deviation => "deviation",
        Axis::Sensitivity => "sensitivity",
        Axis::TimeMs => "time",
        Axis::Walks => "walks",
    }
}
