//! Minimal self-contained SVG line plots of the plot-data tables.

use std::fmt::Write as _;
use std::path::Path;

use semitrace::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let headers: Vec<String> = lines.next().unwrap_or_default().split('\t').map(str::to_string).collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split('\t').map(|v| v.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    Ok(Table { headers, rows })
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-300 {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        let pad = 0.05 * (hi - lo);
        Axis { lo: lo - pad, hi: hi + pad, log }
    }

    /// Position in `[0, 1]`, or `None` for values the axis cannot show.
    fn unit(&self, v: f64) -> Option<f64> {
        let v = if self.log {
            if v <= 0.0 {
                return None;
            }
            v.log10()
        } else {
            v
        };
        v.is_finite().then(|| (v - self.lo) / (self.hi - self.lo))
    }

    fn label(&self, t: f64) -> String {
        let v = self.lo + t * (self.hi - self.lo);
        if self.log {
            format!("1e{v:.1}")
        } else {
            format!("{v:.3e}")
        }
    }
}

/// First column on x, every other column as one series. Kernel residual
/// tables are drawn on log-log axes.
pub fn render_table(tsv: &Path, out: &Path) -> Result<()> {
    let t = read_table(tsv)?;
    let log = tsv.file_stem().is_some_and(|s| s == "kernel");
    let x = Axis::fit(t.rows.iter().map(|r| r[0]), log);
    let y = Axis::fit(t.rows.iter().flat_map(|r| r[1..].iter().copied()), log);
    let px = |v: f64| x.unit(v).map(|u| MARGIN + u * (W - 2.0 * MARGIN));
    let py = |v: f64| y.unit(v).map(|u| H - MARGIN - u * (H - 2.0 * MARGIN));

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN, H - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1);
    for i in 0..=4 {
        let u = i as f64 / 4.0;
        let gx = x0 + u * (x1 - x0);
        let gy = y0 - u * (y0 - y1);
        let _ = writeln!(s, r#"<text x="{gx}" y="{}" text-anchor="middle">{}</text>"#, y0 + 16.0, x.label(u));
        let _ = writeln!(s, r#"<text x="{}" y="{gy}" text-anchor="end">{}</text>"#, x0 - 4.0, y.label(u));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 16.0, t.headers[0]);
    for (j, name) in t.headers.iter().enumerate().skip(1) {
        let color = COLORS[(j - 1) % COLORS.len()];
        let pts: Vec<(f64, f64)> = t.rows.iter().filter_map(|r| Some((px(r[0])?, py(*r.get(j)?)?))).collect();
        let path: Vec<String> = pts.iter().map(|(a, b)| format!("{a:.1},{b:.1}")).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        for (a, b) in &pts {
            let _ = writeln!(s, r#"<circle cx="{a:.1}" cy="{b:.1}" r="2.5" fill="{color}"/>"#);
        }
        let ly = y1 + 14.0 * j as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}">{name}</text>"#, x0 + 8.0);
    }
    s.push_str("</svg>\n");
    std::fs::write(out, s).map_err(|e| Error::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_every_series() {
        let dir = tempfile::tempdir().unwrap();
        let tsv = dir.path().join("trace.tsv");
        std::fs::write(&tsv, "x\ta\tb\n0.1\t1\t2\n0.2\t1.5\tnan\n0.3\t2\t2.5\n").unwrap();
        let out = dir.path().join("trace.svg");
        render_table(&tsv, &out).unwrap();
        let svg = std::fs::read_to_string(&out).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 5);
    }

    #[test]
    fn log_axes_skip_nonpositive_values() {
        let a = Axis::fit([1e-3, 1e-1, 0.0, -1.0].into_iter(), true);
        assert!(a.unit(0.0).is_none());
        let u = a.unit(1e-2).unwrap();
        assert!((u - 0.5).abs() < 1e-12);
    }
}
