//! Hand-written SVG line charts. Figures are built only from the CSV files
//! under the output directory, and every coordinate is printed with a fixed
//! number of decimals so the same inputs always give the same bytes.

use std::fmt::Write as _;

use sn_forecast::kv::KvDocument;
use sn_forecast::pipeline::{read_loss_csv, read_prediction_csv};
use sn_forecast::sncurve::read_series_csv;

use crate::failure::{input, Outcome};
use crate::stages::{Layout, Slot, AXIAL, SLOTS, TORSIONAL};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 78.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 58.0;
const COLORS: [&str; 5] = ["#222222", "#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    dashed: bool,
}

struct Chart {
    title: String,
    x_label: String,
    y_label: String,
    series: Vec<Series>,
    vline: Option<(f64, String)>,
}

/// Returns `(figure name, svg text)` for every figure whose inputs exist.
/// An input file that exists but holds no rows is an error, and nothing is
/// returned in that case.
pub fn render_figures(layout: &Layout) -> Outcome<Vec<(String, String)>> {
    let mut figures = Vec::new();
    for dataset in [AXIAL, TORSIONAL] {
        let slots: Vec<Slot> = SLOTS
            .iter()
            .copied()
            .filter(|s| s.dataset == dataset && s.model != "dnn")
            .collect();
        let mut series = Vec::new();
        for slot in &slots {
            let path = layout.loss_csv(*slot);
            if !path.is_file() {
                continue;
            }
            let losses = read_loss_csv(&path)?;
            if losses.is_empty() {
                return Err(input(format!("{} has no loss rows", path.display())));
            }
            let points = losses
                .iter()
                .enumerate()
                .filter(|(_, l)| **l > 0.0)
                .map(|(k, l)| ((k + 1) as f64, l.log10()))
                .collect();
            series.push(Series {
                label: slot.model.to_string(),
                points,
                dashed: false,
            });
        }
        if !series.is_empty() {
            let chart = Chart {
                title: format!("Training loss, {dataset} data"),
                x_label: "epoch".into(),
                y_label: "log10 MSE loss (scaled units)".into(),
                series,
                vline: None,
            };
            figures.push((format!("loss_{dataset}"), render(&chart)));
        }
    }

    for dataset in [AXIAL, TORSIONAL] {
        let data_path = layout.dataset(dataset);
        let mut series = Vec::new();
        if data_path.is_file() {
            let data = read_series_csv(&data_path)?;
            series.push(Series {
                label: "true curve".into(),
                points: data.cycles().iter().zip(data.stress()).map(|(n, s)| (n.log10(), *s)).collect(),
                dashed: false,
            });
        }
        let mut predictions = 0;
        for slot in SLOTS.iter().filter(|s| s.dataset == dataset) {
            let path = layout.prediction_csv(*slot);
            if !path.is_file() {
                continue;
            }
            let (cycles, _, pred) = read_prediction_csv(&path)?;
            if cycles.is_empty() {
                continue;
            }
            predictions += 1;
            series.push(Series {
                label: slot.model.to_string(),
                points: cycles.iter().zip(&pred).map(|(n, s)| (n.log10(), *s)).collect(),
                dashed: true,
            });
        }
        if predictions == 0 {
            continue;
        }
        let chart = Chart {
            title: format!("S-N curve, {dataset} data"),
            x_label: "log10 N (cycles)".into(),
            y_label: "stress amplitude (MPa)".into(),
            series,
            vline: train_boundary(layout, dataset).map(|n| (n.log10(), "train | test".to_string())),
        };
        figures.push((format!("sn_{dataset}"), render(&chart)));
    }

    if figures.is_empty() {
        return Err(input(format!(
            "no loss or prediction CSVs under {}; run the training and forecast stages first",
            layout.root.display()
        )));
    }
    Ok(figures)
}

fn train_boundary(layout: &Layout, dataset: &str) -> Option<f64> {
    let doc = KvDocument::read(&layout.split_sidecar()).ok()?;
    doc.get_parsed_opt::<f64>(dataset, "last_train_cycle")
        .ok()
        .flatten()
        .filter(|n| n.is_finite() && *n > 0.0)
}

/// Tick positions covering `[lo, hi]` with a 1-2-5 step.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 7.0)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn bounds(chart: &Chart) -> ((f64, f64), (f64, f64)) {
    let mut x = (f64::INFINITY, f64::NEG_INFINITY);
    let mut y = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &chart.series {
        for &(px, py) in s.points.iter().filter(|(a, b)| a.is_finite() && b.is_finite()) {
            x = (x.0.min(px), x.1.max(px));
            y = (y.0.min(py), y.1.max(py));
        }
    }
    if !x.0.is_finite() {
        return ((0.0, 1.0), (0.0, 1.0));
    }
    let widen = |(lo, hi): (f64, f64), pad: f64| {
        if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            let m = (hi - lo) * pad;
            (lo - m, hi + m)
        }
    };
    (widen(x, 0.02), widen(y, 0.05))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render(chart: &Chart) -> String {
    let ((x0, x1), (y0, y1)) = bounds(chart);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{HEIGHT:.0}" viewBox="0 0 {WIDTH:.0} {HEIGHT:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(&chart.title)
    );

    let xt = ticks(x0, x1);
    let yt = ticks(y0, y1);
    let step = |t: &[f64]| if t.len() > 1 { t[1] - t[0] } else { 1.0 };
    let (xs, ys) = (step(&xt), step(&yt));
    for &t in &xt {
        let px = sx(t);
        let _ = writeln!(
            s,
            r##"<line x1="{px:.2}" y1="{TOP:.2}" x2="{px:.2}" y2="{:.2}" stroke="#e5e5e5"/>"##,
            TOP + ph
        );
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph + 16.0,
            tick_label(t, xs)
        );
    }
    for &t in &yt {
        let py = sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#e5e5e5"/>"##,
            LEFT + pw
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            py + 4.0,
            tick_label(t, ys)
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#444444"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 16.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&chart.y_label)
    );

    if let Some((x, label)) = &chart.vline {
        if (x0..=x1).contains(x) {
            let px = sx(*x);
            let _ = writeln!(
                s,
                r##"<line x1="{px:.2}" y1="{TOP:.2}" x2="{px:.2}" y2="{:.2}" stroke="#888888" stroke-dasharray="2 3"/>"##,
                TOP + ph
            );
            let _ = writeln!(
                s,
                r##"<text x="{:.2}" y="{:.2}" fill="#666666">{}</text>"##,
                px + 4.0,
                TOP + 14.0,
                escape(label)
            );
        }
    }

    for (k, series) in chart.series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut path = String::new();
        let mut pen_down = false;
        for &(x, y) in &series.points {
            if !(x.is_finite() && y.is_finite()) {
                pen_down = false;
                continue;
            }
            let _ = write!(path, "{}{:.2} {:.2} ", if pen_down { "L" } else { "M" }, sx(x), sy(y));
            pen_down = true;
        }
        let dash = if series.dashed { r#" stroke-dasharray="6 3""# } else { "" };
        let _ = writeln!(
            s,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>"#,
            path.trim_end()
        );
        let ly = TOP + 12.0 + 16.0 * k as f64;
        let lx = LEFT + pw - 150.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash}/>"#,
            lx + 22.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 28.0,
            ly + 4.0,
            escape(&series.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_cover_range_with_round_steps() {
        let t = ticks(3.6, 6.5);
        assert_eq!(t.first(), Some(&4.0));
        assert_eq!(t.last(), Some(&6.5));
        let t = ticks(110.0, 355.0);
        assert!(t.len() >= 3 && t.len() <= 8, "{t:?}");
        assert!(t.iter().all(|v| (v / 50.0).fract() == 0.0));
    }

    #[test]
    fn tick_labels_drop_negative_zero() {
        assert_eq!(tick_label(-0.0, 0.5), "0.0");
        assert_eq!(tick_label(-1e-17, 0.5), "0.0");
        assert_eq!(tick_label(200.0, 50.0), "200");
        assert_eq!(tick_label(-6.5, 0.5), "-6.5");
    }

    #[test]
    fn render_is_deterministic_and_escaped() {
        let chart = Chart {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series {
                label: "s".into(),
                points: vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, 3.0)],
                dashed: true,
            }],
            vline: Some((1.0, "cut".into())),
        };
        let a = render(&chart);
        assert_eq!(a, render(&chart));
        assert!(a.contains("a &lt; b"));
        assert_eq!(a.matches("<path").count(), 1);
        // The non-finite point breaks the line into two moves.
        let d = a.split("<path d=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(d.matches('M').count(), 2);
        assert!(!d.contains('L'));
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout {
            root: dir.path().to_path_buf(),
        };
        assert!(render_figures(&layout).is_err());
    }

    #[test]
    fn empty_loss_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout {
            root: dir.path().to_path_buf(),
        };
        let path = layout.loss_csv(SLOTS[0]);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, "epoch,loss\n").unwrap();
        assert!(render_figures(&layout).is_err());
    }
}
