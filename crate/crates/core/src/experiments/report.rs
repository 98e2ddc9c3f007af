//! Report emission: summary CSVs, paper-layout tables, and
//! self-contained SVG figures, each with a sibling CSV carrying its
//! exact data.

use super::runlog;
use super::{summarize_values, DatasetKind, ExperimentRecord};
use crate::error::Result;
use crate::nn::Arch;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub enum Marker {
    Circle,
    Triangle,
    Star,
}

pub struct Series {
    pub name: String,
    pub marker: Marker,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const ML: f64 = 64.0;
const MR: f64 = 24.0;
const MT: f64 = 36.0;
const MB: f64 = 52.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn from_points<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> Frame {
        let mut x0 = f64::INFINITY;
        let mut x1 = f64::NEG_INFINITY;
        let mut y0 = f64::INFINITY;
        let mut y1 = f64::NEG_INFINITY;
        for &(x, y) in points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x0 == x1 {
            x1 = x0 + 1.0;
        }
        if y0 == y1 {
            y1 = y0 + 1.0;
        }
        let dx = (x1 - x0) * 0.05;
        let dy = (y1 - y0) * 0.05;
        Frame {
            x0: x0 - dx,
            x1: x1 + dx,
            y0: y0 - dy,
            y1: y1 + dy,
        }
    }

    fn sx(&self, x: f64) -> f64 {
        ML + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - ML - MR)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MB - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - MT - MB)
    }
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let range = hi - lo;
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        mag
    } else if norm < 3.5 {
        2.0 * mag
    } else if norm < 7.5 {
        5.0 * mag
    } else {
        10.0 * mag
    };
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-12 * range {
        out.push(t);
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (0.01..100_000.0).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:e}")
    }
}

fn marker_svg(m: &Marker, x: f64, y: f64, color: &str) -> String {
    match m {
        Marker::Circle => {
            format!(r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="none" stroke="{color}"/>"#)
        }
        Marker::Triangle => format!(
            r#"<path d="M {:.2} {:.2} L {:.2} {:.2} L {:.2} {:.2} Z" fill="none" stroke="{color}"/>"#,
            x,
            y - 3.8,
            x - 3.3,
            y + 2.6,
            x + 3.3,
            y + 2.6
        ),
        Marker::Star => {
            let mut d = String::new();
            for i in 0..5 {
                let a = std::f64::consts::TAU * i as f64 / 5.0 - std::f64::consts::FRAC_PI_2;
                let b = a + std::f64::consts::TAU / 10.0;
                let (r1, r2) = (4.2, 1.8);
                let _ = write!(
                    d,
                    "{}{:.2} {:.2} L {:.2} {:.2} ",
                    if i == 0 { "M " } else { "L " },
                    x + r1 * a.cos(),
                    y + r1 * a.sin(),
                    x + r2 * b.cos(),
                    y + r2 * b.sin()
                );
            }
            format!(r#"<path d="{}Z" fill="{color}" stroke="none"/>"#, d)
        }
    }
}

fn svg_frame(title: &str, xlabel: &str, ylabel: &str, frame: &Frame, body: &str, legend: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">
<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<text x="{:.1}" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>
"#,
        (ML + WIDTH - MR) / 2.0
    );
    for t in ticks(frame.x0, frame.x1) {
        let x = frame.sx(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.1}" y1="{MT}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/><text x="{x:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="10">{}</text>"##,
            HEIGHT - MB,
            HEIGHT - MB + 14.0,
            fmt_tick(t)
        );
    }
    for t in ticks(frame.y0, frame.y1) {
        let y = frame.sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{ML}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="10">{}</text>"##,
            WIDTH - MR,
            ML - 6.0,
            y + 3.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{ML}" y="{MT}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        WIDTH - ML - MR,
        HEIGHT - MT - MB
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12">{xlabel}</text>"#,
        (ML + WIDTH - MR) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {:.1})">{ylabel}</text>"#,
        (MT + HEIGHT - MB) / 2.0,
        (MT + HEIGHT - MB) / 2.0
    );
    s.push_str(body);
    s.push_str(legend);
    s.push_str("</svg>\n");
    s
}

fn legend_svg(entries: &[(&str, &str, Option<&Marker>)]) -> String {
    let mut s = String::new();
    for (i, (name, color, marker)) in entries.iter().enumerate() {
        let y = MT + 14.0 + 16.0 * i as f64;
        let x = WIDTH - MR - 120.0;
        match marker {
            Some(m) => s.push_str(&marker_svg(m, x, y - 3.0, color)),
            None => {
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="1.5"/>"#,
                    x - 5.0,
                    y - 3.0,
                    x + 5.0,
                    y - 3.0
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{y:.1}" font-family="sans-serif" font-size="11">{name}</text>"#,
            x + 9.0
        );
    }
    s
}

/// Scatter with per-series markers and an optional y=x reference line.
pub fn scatter_svg(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[Series],
    diagonal: bool,
) -> String {
    let frame = Frame::from_points(series.iter().flat_map(|s| s.points.iter()));
    let mut body = String::new();
    if diagonal {
        let lo = frame.x0.max(frame.y0);
        let hi = frame.x1.min(frame.y1);
        if hi > lo {
            let _ = writeln!(
                body,
                r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999" stroke-dasharray="4 3"/>"##,
                frame.sx(lo),
                frame.sy(lo),
                frame.sx(hi),
                frame.sy(hi)
            );
        }
    }
    for s in series {
        for &(x, y) in &s.points {
            body.push_str(&marker_svg(&s.marker, frame.sx(x), frame.sy(y), s.color));
            body.push('\n');
        }
    }
    let entries: Vec<(&str, &str, Option<&Marker>)> = series
        .iter()
        .map(|s| (s.name.as_str(), s.color, Some(&s.marker)))
        .collect();
    svg_frame(title, xlabel, ylabel, &frame, &body, &legend_svg(&entries))
}

/// Polyline chart (learning curves).
pub fn lines_svg(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let frame = Frame::from_points(series.iter().flat_map(|s| s.points.iter()));
    let mut body = String::new();
    for s in series {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.sx(x), frame.sy(y)))
            .collect();
        let _ = writeln!(
            body,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            pts.join(" "),
            s.color
        );
    }
    let entries: Vec<(&str, &str, Option<&Marker>)> =
        series.iter().map(|s| (s.name.as_str(), s.color, None)).collect();
    svg_frame(title, xlabel, ylabel, &frame, &body, &legend_svg(&entries))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::from("-"), |v| format!("{v:.2}"))
}

/// Renders the per-(model, dataset) tables: one row per
/// (size, gamma, lr), No-PS and PS columns, best and mean +/- sample-std
/// footer.
pub fn render_tables(records: &[ExperimentRecord]) -> String {
    let mut out = String::new();
    for model in [Arch::ResNet1D, Arch::Tcn] {
        for dataset in [DatasetKind::Local, DatasetKind::Global] {
            type Row = (usize, f64, f64, Option<f64>, Option<f64>);
            let mut rows: Vec<Row> = Vec::new();
            for r in records.iter().filter(|r| {
                r.config.model == model && r.config.dataset == dataset && r.is_done()
            }) {
                let key = (r.config.size, r.config.gamma, r.config.lr);
                let slot = match rows.iter_mut().find(|(s, g, l, _, _)| (*s, *g, *l) == key) {
                    Some(s) => s,
                    None => {
                        rows.push((key.0, key.1, key.2, None, None));
                        rows.last_mut().expect("just pushed")
                    }
                };
                if r.config.ps {
                    slot.4 = r.test_l1_km;
                } else {
                    slot.3 = r.test_l1_km;
                }
            }
            if rows.is_empty() {
                continue;
            }
            // Paper row order: size descending, then gamma, then lr descending.
            rows.sort_by(|a, b| {
                b.0.cmp(&a.0)
                    .then(a.1.partial_cmp(&b.1).expect("finite"))
                    .then(b.2.partial_cmp(&a.2).expect("finite"))
            });
            let _ = writeln!(
                out,
                "== {} {} ==\n size | gamma |      lr | No PS |    PS",
                match model {
                    Arch::ResNet1D => "ResNet",
                    Arch::Tcn => "TCN",
                },
                dataset.as_str()
            );
            for (size, gamma, lr, nops, ps) in &rows {
                let _ = writeln!(
                    out,
                    " {size:>4} | {gamma:>5} | {lr:>7} | {:>5} | {:>5}",
                    fmt_opt(*nops),
                    fmt_opt(*ps)
                );
            }
            for (label, col) in [(("No PS"), 3usize), (("PS"), 4usize)] {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter_map(|r| if col == 3 { r.3 } else { r.4 })
                    .collect();
                if let Ok(s) = summarize_values(&vals) {
                    let _ = writeln!(
                        out,
                        " {label}: best {:.2}, mean+/-std {:.2}+/-{:.2} (n={})",
                        s.best, s.mean, s.std, s.n
                    );
                }
            }
            out.push('\n');
        }
    }
    out
}

const TRAIN_COLOR: &str = "#d62728";
const VAL_COLOR: &str = "#2ca02c";
const TEST_COLOR: &str = "#1f77b4";

fn write_pair(dir: &Path, stem: &str, svg: String, csv: String, files: &mut Vec<PathBuf>) -> Result<()> {
    let svg_path = dir.join(format!("{stem}.svg"));
    let csv_path = dir.join(format!("{stem}.csv"));
    std::fs::write(&svg_path, svg)?;
    std::fs::write(&csv_path, csv)?;
    files.push(svg_path);
    files.push(csv_path);
    Ok(())
}

/// Emits the report tree for a grid output directory: summary CSV, the
/// paper-layout tables, per-run prediction scatters (train star, test
/// triangle, validation circle) and learning curves, and optionally the
/// distance-vs-S-P scatter. Every SVG gets a sibling CSV with its data.
pub fn emit_report(
    records: &[ExperimentRecord],
    grid_dir: &Path,
    sp_pairs: Option<&[(f64, f64)]>,
) -> Result<Vec<PathBuf>> {
    let report_dir = grid_dir.join("report");
    std::fs::create_dir_all(&report_dir)?;
    let mut files = Vec::new();

    // Summary CSV over finished runs.
    let summary_path = report_dir.join("summary.csv");
    {
        let mut w = csv::Writer::from_path(&summary_path)?;
        w.write_record([
            "model",
            "dataset",
            "ps",
            "size",
            "gamma",
            "lr",
            "test_l1_km",
            "runtime_min",
        ])?;
        for r in records.iter().filter(|r| r.is_done()) {
            w.write_record([
                r.config.model.as_str(),
                r.config.dataset.as_str(),
                if r.config.ps { "1" } else { "0" },
                &r.config.size.to_string(),
                &r.config.gamma.to_string(),
                &r.config.lr.to_string(),
                &r.test_l1_km.unwrap_or(f64::NAN).to_string(),
                &r.runtime_min.to_string(),
            ])?;
        }
        w.flush()?;
    }
    files.push(summary_path);

    let tables_path = report_dir.join("tables.txt");
    std::fs::write(&tables_path, render_tables(records))?;
    files.push(tables_path);

    let log_path = grid_dir.join("runs.jsonl");
    for r in records.iter().filter(|r| r.is_done()) {
        let run_id = r.run_id();
        let pred_path = grid_dir.join("runs").join(&run_id).join("predictions.csv");
        if pred_path.exists() {
            let mut reader = csv::Reader::from_path(&pred_path)?;
            let mut by_split: std::collections::BTreeMap<String, Vec<(f64, f64)>> =
                Default::default();
            let mut csv_copy = String::from("split,truth_km,pred_km\n");
            for rec in reader.records() {
                let rec = rec.map_err(|e| crate::error::Error::format(&pred_path, e.to_string()))?;
                let (Some(split), Some(t), Some(p)) = (
                    rec.get(0),
                    rec.get(1).and_then(|v| v.parse::<f64>().ok()),
                    rec.get(2).and_then(|v| v.parse::<f64>().ok()),
                ) else {
                    continue;
                };
                by_split.entry(split.to_string()).or_default().push((t, p));
                let _ = writeln!(csv_copy, "{split},{t},{p}");
            }
            let series: Vec<Series> = by_split
                .into_iter()
                .map(|(name, points)| {
                    let (marker, color) = match name.as_str() {
                        "train" => (Marker::Star, TRAIN_COLOR),
                        "val" => (Marker::Circle, VAL_COLOR),
                        _ => (Marker::Triangle, TEST_COLOR),
                    };
                    Series {
                        name,
                        marker,
                        color,
                        points,
                    }
                })
                .collect();
            let svg = scatter_svg(
                &format!("{run_id}: predicted vs true distance"),
                "true epicentral distance (km)",
                "predicted distance (km)",
                &series,
                true,
            );
            write_pair(&report_dir, &format!("{run_id}.scatter"), svg, csv_copy, &mut files)?;
        }

        let curve = runlog::epoch_curve(&log_path, &run_id)?;
        if !curve.is_empty() {
            let train_pts: Vec<(f64, f64)> =
                curve.iter().map(|&(e, t, _)| (e as f64, t)).collect();
            let val_pts: Vec<(f64, f64)> = curve.iter().map(|&(e, _, v)| (e as f64, v)).collect();
            let mut csv_copy = String::from("epoch,train_l1_km,val_l1_km\n");
            for (e, t, v) in &curve {
                let _ = writeln!(csv_copy, "{e},{t},{v}");
            }
            let svg = lines_svg(
                &format!("{run_id}: learning curves"),
                "epoch",
                "L1 loss (km)",
                &[
                    Series {
                        name: "train".into(),
                        marker: Marker::Circle,
                        color: TRAIN_COLOR,
                        points: train_pts,
                    },
                    Series {
                        name: "val".into(),
                        marker: Marker::Circle,
                        color: VAL_COLOR,
                        points: val_pts,
                    },
                ],
            );
            write_pair(&report_dir, &format!("{run_id}.curve"), svg, csv_copy, &mut files)?;
        }
    }

    if let Some(pairs) = sp_pairs {
        let mut csv_copy = String::from("sp_interval_s,epicentral_km\n");
        for (sp, km) in pairs {
            let _ = writeln!(csv_copy, "{sp},{km}");
        }
        let svg = scatter_svg(
            "Epicentral distance vs S-P interval",
            "S-P interval (s)",
            "epicentral distance (km)",
            &[Series {
                name: "events".into(),
                marker: Marker::Circle,
                color: TEST_COLOR,
                points: pairs.to_vec(),
            }],
            false,
        );
        write_pair(&report_dir, "sp_vs_distance", svg, csv_copy, &mut files)?;
    }

    Ok(files)
}
