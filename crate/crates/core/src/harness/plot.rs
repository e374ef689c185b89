//! Deterministic SVG rendering of metrics logs (loss curves) and evaluation
//! reports (grouped bars per variant).

use std::fmt::Write as _;
use std::path::Path;

use crate::training::METRICS_HEADER;

use super::HarnessError;

pub const EVAL_HEADER: &str = "variant,setting,episodes,mean_return,std_return";

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];
const SETTINGS: [&str; 3] = ["same", "rotated", "different"];

fn csv_error(path: &Path, line: u64, msg: impl Into<String>) -> HarnessError {
    HarnessError::Csv {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

type Rows = Vec<(u64, Vec<String>)>;

/// Header fields and data rows with their 1-based line numbers.
fn read_csv(path: &Path, text: &str) -> Result<(String, Rows), HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| csv_error(path, 1, e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_error(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok((header, rows))
}

fn num(path: &Path, line: u64, field: &str) -> Result<f64, HarnessError> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| csv_error(path, line, format!("{field:?} is not a finite number")))
}

/// Renders one CSV, dispatching on its header.
pub fn render_csv(path: &Path, text: &str) -> Result<String, HarnessError> {
    let (header, rows) = read_csv(path, text)?;
    if header == METRICS_HEADER {
        let mut series: Vec<(f64, [f64; 4])> = Vec::with_capacity(rows.len());
        for (line, r) in &rows {
            let v: Vec<f64> = r[..5].iter().map(|f| num(path, *line, f)).collect::<Result<_, _>>()?;
            series.push((v[0], [v[1], v[2], v[3], v[4]]));
        }
        Ok(metrics_svg(&series))
    } else if header == EVAL_HEADER {
        let mut bars: Vec<(String, String, f64, f64)> = Vec::with_capacity(rows.len());
        for (line, r) in &rows {
            if !SETTINGS.contains(&r[1].as_str()) {
                return Err(csv_error(path, *line, format!("unknown setting {:?}", r[1])));
            }
            bars.push((r[0].clone(), r[1].clone(), num(path, *line, &r[3])?, num(path, *line, &r[4])?));
        }
        Ok(eval_svg(&bars))
    } else {
        Err(csv_error(path, 1, format!("unrecognized header {header:?}")))
    }
}

struct Frame {
    out: String,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(title: &str, y0: f64, y1: f64) -> Self {
        let (y0, y1) = if y1 > y0 { (y0, y1) } else { (y0 - 1.0, y0 + 1.0) };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">"
        );
        let _ = writeln!(out, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
        let _ = writeln!(out, "<text x=\"{LEFT}\" y=\"18\" font-size=\"13\">{title}</text>");
        let f = Self { out, y0, y1 };
        f.axes()
    }

    fn axes(mut self) -> Self {
        let (x1, yb) = (W - RIGHT, H - BOTTOM);
        let _ = writeln!(
            self.out,
            "<path d=\"M{LEFT} {TOP} L{LEFT} {yb} L{x1} {yb}\" stroke=\"black\" fill=\"none\"/>"
        );
        for i in 0..=4 {
            let v = self.y0 + (self.y1 - self.y0) * i as f64 / 4.0;
            let y = self.sy(v);
            let _ = writeln!(
                self.out,
                "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{LEFT}\" y2=\"{y:.2}\" stroke=\"black\"/><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{v:.3}</text>",
                LEFT - 4.0,
                LEFT - 6.0,
                y + 4.0
            );
        }
        self
    }

    fn sy(&self, v: f64) -> f64 {
        let (t, b) = (TOP, H - BOTTOM);
        b - (v - self.y0) / (self.y1 - self.y0) * (b - t)
    }

    fn legend(&mut self, entries: &[(&str, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = TOP + 16.0 * i as f64;
            let x = W - RIGHT + 12.0;
            let _ = writeln!(
                self.out,
                "<rect x=\"{x}\" y=\"{y}\" width=\"10\" height=\"10\" fill=\"{color}\"/><text x=\"{}\" y=\"{}\">{label}</text>",
                x + 14.0,
                y + 9.0
            );
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

/// Loss curves over training steps. No rows gives empty axes.
pub fn metrics_svg(rows: &[(f64, [f64; 4])]) -> String {
    let (y0, y1) = bounds(rows.iter().flat_map(|(_, v)| v.iter().copied())).unwrap_or((0.0, 1.0));
    let (x0, x1) = bounds(rows.iter().map(|(s, _)| *s)).unwrap_or((0.0, 1.0));
    let mut f = Frame::new("training loss", y0.min(0.0), y1);
    let span = if x1 > x0 { x1 - x0 } else { 1.0 };
    let sx = |s: f64| LEFT + (s - x0) / span * (W - RIGHT - LEFT);
    let names = ["loss_total", "loss_p", "loss_v", "loss_r"];
    for (k, color) in COLORS.iter().enumerate() {
        if rows.is_empty() {
            break;
        }
        let mut d = String::new();
        for (i, (s, v)) in rows.iter().enumerate() {
            let _ = write!(d, "{}{:.2} {:.2}", if i == 0 { "M" } else { " L" }, sx(*s), f.sy(v[k]));
        }
        let _ = writeln!(f.out, "<path d=\"{d}\" stroke=\"{color}\" fill=\"none\"/>");
    }
    let _ = writeln!(
        f.out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">step</text>",
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0
    );
    f.legend(&names.iter().zip(COLORS).map(|(n, c)| (*n, c)).collect::<Vec<_>>());
    f.finish()
}

/// Grouped bars: one group per variant in order of first appearance, one bar
/// per setting, whiskers at ± one standard deviation.
pub fn eval_svg(rows: &[(String, String, f64, f64)]) -> String {
    let mut variants: Vec<&str> = Vec::new();
    for (v, ..) in rows {
        if !variants.contains(&v.as_str()) {
            variants.push(v);
        }
    }
    let (lo, hi) = bounds(rows.iter().flat_map(|(_, _, m, s)| [m - s, m + s])).unwrap_or((0.0, 1.0));
    let mut f = Frame::new("evaluation return", lo.min(0.0), hi.max(0.0));
    let group_w = (W - RIGHT - LEFT) / variants.len().max(1) as f64;
    let bar_w = group_w / 4.0;
    let zero = f.sy(0.0);
    for (gi, v) in variants.iter().enumerate() {
        let gx = LEFT + gi as f64 * group_w;
        for (si, setting) in SETTINGS.iter().enumerate() {
            let Some((_, _, mean, std)) = rows.iter().find(|(rv, rs, ..)| rv == v && rs == setting) else {
                continue;
            };
            let x = gx + bar_w * (si as f64 + 0.5);
            let y = f.sy(*mean);
            let (top, h) = if y < zero { (y, zero - y) } else { (zero, y - zero) };
            let _ = writeln!(
                f.out,
                "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"{}\"/>",
                bar_w * 0.9,
                COLORS[si]
            );
            let cx = x + bar_w * 0.45;
            let _ = writeln!(
                f.out,
                "<line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
                f.sy(mean - std),
                f.sy(mean + std)
            );
        }
        let _ = writeln!(
            f.out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{v}</text>",
            gx + group_w / 2.0,
            H - BOTTOM + 16.0
        );
    }
    let _ = writeln!(
        f.out,
        "<line x1=\"{LEFT}\" y1=\"{zero:.2}\" x2=\"{:.2}\" y2=\"{zero:.2}\" stroke=\"#888\"/>",
        W - RIGHT
    );
    f.legend(&SETTINGS.iter().zip(COLORS).map(|(n, c)| (*n, c)).collect::<Vec<_>>());
    f.finish()
}
