//! Static SVG plots: learning curves and per-episode traces.

use std::ops::Range;
use std::path::Path;

use plotters::coord::Shift;
use plotters::prelude::*;

use crate::error::{HarnessError, Result};
use crate::metrics::{read_rows, read_trace, EpisodeRow, EvalRow, TraceRow, EPISODE_SCHEMA, EVAL_SCHEMA};

const SIZE: (u32, u32) = (960, 720);

fn draw_err(path: &Path) -> impl Fn(String) -> HarnessError + '_ {
    move |m| HarnessError::Config(format!("{}: drawing failed: {m}", path.display()))
}

/// Trailing moving average over `window` values.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

/// Axis range covering every value, padded by 5% (unit range when empty or
/// degenerate).
pub fn axis_range(values: impl IntoIterator<Item = f64>) -> Range<f64> {
    let (lo, hi) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return 0.0..1.0;
    }
    if lo == hi {
        let d = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return lo - d..hi + d;
    }
    let pad = 0.05 * (hi - lo);
    lo - pad..hi + pad
}

type Series<'a> = (&'a str, Vec<(f64, f64)>);

fn panel(area: &DrawingArea<SVGBackend, Shift>, title: &str, x_label: &str, series: &[Series], path: &Path) -> Result<()> {
    let xr = axis_range(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let yr = axis_range(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let err = draw_err(path);
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(8)
        .x_label_area_size(32)
        .y_label_area_size(56)
        .build_cartesian_2d(xr, yr)
        .map_err(|e| err(e.to_string()))?;
    chart.configure_mesh().x_desc(x_label).draw().map_err(|e| err(e.to_string()))?;
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(k).to_rgba();
        if pts.is_empty() {
            continue;
        }
        if pts.len() == 1 {
            chart
                .draw_series(pts.iter().map(|p| Circle::new(*p, 3, color.filled())))
                .map_err(|e| err(e.to_string()))?;
        } else {
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(1)))
                .map_err(|e| err(e.to_string()))?
                .label(*name)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        }
    }
    if series.iter().any(|s| s.1.len() > 1) && series.len() <= 8 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| err(e.to_string()))?;
    }
    Ok(())
}

/// Smoothed episode return (top) and evaluation success rate (bottom)
/// against environment steps.
pub fn learning_curve(episodes: &[EpisodeRow], evals: &[EvalRow], window: usize, out: &Path) -> Result<()> {
    let root = SVGBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| draw_err(out)(e.to_string()))?;
    let (top, bottom) = root.split_vertically(SIZE.1 / 2);
    let returns: Vec<f64> = episodes.iter().map(|r| r.episode_return).collect();
    let smoothed: Vec<(f64, f64)> =
        episodes.iter().zip(smooth(&returns, window)).map(|(r, s)| (r.step as f64, s)).collect();
    panel(&top, "episode return (smoothed)", "environment steps", &[("return", smoothed)], out)?;
    let success: Vec<(f64, f64)> = evals.iter().map(|e| (e.step as f64, e.success_rate)).collect();
    panel(&bottom, "evaluation success rate", "environment steps", &[("success", success)], out)?;
    root.present().map_err(|e| draw_err(out)(e.to_string()))
}

/// Position relative to the goal, contact wrench and the policy's actions
/// over one episode.
pub fn trace_plot(rows: &[TraceRow], out: &Path) -> Result<()> {
    let root = SVGBackend::new(out, (SIZE.0, SIZE.1 * 3 / 2)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| draw_err(out)(e.to_string()))?;
    let areas = root.split_evenly((3, 1));
    let t = |r: &TraceRow| r.t as f64;
    let pos_names = ["x (mm)", "y (mm)", "z (mm)"];
    let pos: Vec<Series> = (0..3)
        .map(|i| (pos_names[i], rows.iter().map(|r| (t(r), r.relative_position[i] * 1e3)).collect()))
        .collect();
    panel(&areas[0], "peg tip relative to goal", "policy step", &pos, out)?;
    let f_names = ["Fx", "Fy", "Fz", "Mx", "My", "Mz"];
    let force: Vec<Series> = (0..6).map(|i| (f_names[i], rows.iter().map(|r| (t(r), r.wrench[i])).collect())).collect();
    panel(&areas[1], "contact wrench (N, N m)", "policy step", &force, out)?;
    let n_actions = rows.first().map_or(0, |r| r.action.len());
    let actions: Vec<Series> =
        (0..n_actions).map(|i| ("a", rows.iter().map(|r| (t(r), r.action[i])).collect())).collect();
    panel(&areas[2], "policy actions", "policy step", &actions, out)?;
    root.present().map_err(|e| draw_err(out)(e.to_string()))
}

/// Plot a run directory (its learning curve and any trace files under
/// `traces/`) or a single metrics or trace CSV. Returns the files written.
pub fn plot_path(input: &Path, out_dir: &Path, window: usize) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(HarnessError::io(out_dir))?;
    let mut written = Vec::new();
    let stem = |p: &Path| p.file_stem().and_then(|s| s.to_str()).unwrap_or("plot").to_string();
    if input.is_dir() {
        let episodes_path = input.join(crate::train::EPISODES_FILE);
        if episodes_path.exists() {
            let episodes: Vec<EpisodeRow> = read_rows(&episodes_path, EPISODE_SCHEMA)?;
            let eval_path = input.join(crate::train::EVAL_FILE);
            let evals: Vec<EvalRow> = if eval_path.exists() { read_rows(&eval_path, EVAL_SCHEMA)? } else { Vec::new() };
            let out = out_dir.join("learning_curve.svg");
            learning_curve(&episodes, &evals, window, &out)?;
            written.push(out);
        }
        let traces = input.join("traces");
        if traces.is_dir() {
            let mut files: Vec<_> = std::fs::read_dir(&traces)
                .map_err(HarnessError::io(&traces))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "csv"))
                .collect();
            files.sort();
            for f in files {
                let out = out_dir.join(format!("{}.svg", stem(&f)));
                trace_plot(&read_trace(&f)?, &out)?;
                written.push(out);
            }
        }
        return Ok(written);
    }
    let first = crate::metrics::read_lines(input)?.into_iter().next().unwrap_or_default();
    let out = out_dir.join(format!("{}.svg", stem(input)));
    match first.as_str() {
        EPISODE_SCHEMA => learning_curve(&read_rows(input, EPISODE_SCHEMA)?, &[], window, &out)?,
        EVAL_SCHEMA => learning_curve(&[], &read_rows(input, EVAL_SCHEMA)?, window, &out)?,
        crate::metrics::TRACE_SCHEMA => trace_plot(&read_trace(input)?, &out)?,
        other => {
            return Err(HarnessError::Parse {
                path: input.to_path_buf(),
                row: 1,
                column: String::new(),
                message: format!("unrecognized schema line {other:?}"),
            })
        }
    }
    written.push(out);
    Ok(written)
}
