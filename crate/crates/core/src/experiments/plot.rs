//! SVG line charts of sweep results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Result, UdorError};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, esc(title));
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#,
            sx(xv),
            TOP + ph + 16.0,
            xv
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            LEFT - 6.0,
            sy(yv) + 4.0,
            yv
        );
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            LEFT + pw,
            sy(yv),
            sy(yv)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, esc(x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        TOP + ph / 2.0,
        esc(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for &(x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{0}" x2="{1}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{2}" y="{3}">{4}</text>"#,
            W - RIGHT + 12.0,
            W - RIGHT + 32.0,
            W - RIGHT + 38.0,
            ly + 4.0,
            esc(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Reads a sweep `results.csv` and writes `M_vs_<x>.svg` and `V_vs_<x>.svg`
/// with one line per method (seeds averaged). `x` is whichever of
/// part_length and offset varies.
pub fn plot_results(results: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(results).map_err(|e| UdorError::io(results, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| UdorError::Format(format!("{} is empty", results.display())))?
        .split(',')
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| UdorError::Format(format!("{}: no column {name}", results.display())))
    };
    let (c_method, c_pl, c_off, c_m, c_v) = (col("method")?, col("part_length")?, col("offset")?, col("M")?, col("V")?);
    let rows: Vec<Vec<&str>> = lines.filter(|l| !l.trim().is_empty()).map(|l| l.split(',').collect()).collect();
    let num = |r: &Vec<&str>, c: usize| -> Result<f64> {
        r.get(c)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| UdorError::Format(format!("{}: bad value in column {}", results.display(), header[c])))
    };
    let mut offsets: Vec<f64> = rows.iter().map(|r| num(r, c_off)).collect::<Result<_>>()?;
    offsets.sort_by(f64::total_cmp);
    offsets.dedup();
    let (c_x, x_name) = if offsets.len() > 1 { (c_off, "offset") } else { (c_pl, "part_length") };

    // method -> x -> (sum M, sum V, count)
    let mut acc: BTreeMap<String, BTreeMap<i64, (f64, f64, usize)>> = BTreeMap::new();
    for r in &rows {
        let x = num(r, c_x)? as i64;
        let e = acc
            .entry(r[c_method].to_string())
            .or_default()
            .entry(x)
            .or_insert((0.0, 0.0, 0));
        e.0 += num(r, c_m)?;
        e.1 += num(r, c_v)?;
        e.2 += 1;
    }
    let series = |pick: fn(&(f64, f64, usize)) -> f64| -> Vec<Series> {
        acc.iter()
            .map(|(name, pts)| Series {
                name: name.clone(),
                points: pts.iter().map(|(&x, v)| (x as f64, pick(v))).collect(),
            })
            .collect()
    };
    std::fs::create_dir_all(out).map_err(|e| UdorError::io(out, e))?;
    let mut written = Vec::new();
    for (metric, title, s) in [
        ("M", "Modularity score", series(|v| v.0 / v.2 as f64)),
        ("V", "Integrity score", series(|v| v.1 / v.2 as f64)),
    ] {
        let path = out.join(format!("{metric}_vs_{x_name}.svg"));
        let svg = line_chart_svg(&format!("{title} vs {x_name}"), x_name, metric, &s);
        std::fs::write(&path, svg).map_err(|e| UdorError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_has_one_polyline_per_series() {
        let s = vec![
            Series {
                name: "a".into(),
                points: vec![(0.0, 1.0), (1.0, 2.0)],
            },
            Series {
                name: "b<c".into(),
                points: vec![(0.0, 0.5)],
            },
        ];
        let svg = line_chart_svg("t", "x", "y", &s);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("b&lt;c"));
    }

    #[test]
    fn results_csv_to_two_charts() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("results.csv");
        std::fs::write(
            &csv,
            format!(
                "seed,{}\n0,UDOR,5,0,2,2,1.0,0.1,1,0.1,0.3,0.1,,,,,,,false\n0,UDOR,5,11,2,2,1.5,0.3,1,0.3,0.3,0.2,,,,,,,false\n",
                crate::metrics::CSV_HEADER
            ),
        )
        .unwrap();
        let paths = plot_results(&csv, dir.path()).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths[0].ends_with("M_vs_offset.svg"));
    }
}
