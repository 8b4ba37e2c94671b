//! Standalone SVG figures: a strategy × ratio accuracy heatmap from a sweep
//! CSV, and accuracy-versus-SNR curves from metrics reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use rfmsm_core::eval::MetricsReport;

use crate::Invalid;

const HEATMAP_HEADER: &str = "strategy,ratio,accuracy,f1,seed_mean,seed_std";
const PALETTE: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

pub struct HeatCell {
    pub strategy: String,
    pub ratio: f64,
    pub accuracy: f64,
}

pub fn run(inputs: &[PathBuf], out: &Path) -> anyhow::Result<()> {
    let mut sources = Vec::new();
    for path in inputs {
        let text = std::fs::read_to_string(path).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
        if text.trim().is_empty() {
            return Err(Invalid(format!("{} is empty", path.display())).into());
        }
        sources.push((path, text));
    }
    let is_csv = |p: &Path| p.extension().is_some_and(|e| e == "csv");
    let svg = if sources.iter().all(|(p, _)| is_csv(p)) {
        let [(path, text)] = sources.as_slice() else {
            return Err(Invalid("a heatmap takes exactly one CSV".into()).into());
        };
        heatmap_svg(&parse_heatmap(text)?, &provenance(&sources), path)
    } else {
        let mut curves = Vec::new();
        for (path, text) in &sources {
            let report: MetricsReport = serde_json::from_str(text)
                .map_err(|e| Invalid(format!("{}: not a metrics report: {e}", path.display())))?;
            if report.per_snr_accuracy.is_empty() {
                return Err(Invalid(format!("{} has no per-SNR accuracy", path.display())).into());
            }
            let label = path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
            curves.push((label, report.per_snr_accuracy));
        }
        snr_svg(&curves, &provenance(&sources))
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, svg)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn provenance(sources: &[(&PathBuf, String)]) -> String {
    sources
        .iter()
        .map(|(p, text)| {
            let digest: String = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
            // comments may not contain a double hyphen
            format!("{} sha256 {digest}", p.display().to_string().replace("--", "- -"))
        })
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn parse_heatmap(text: &str) -> anyhow::Result<Vec<HeatCell>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some(HEATMAP_HEADER) {
        return Err(Invalid(format!("heatmap CSV must start with {HEATMAP_HEADER:?}")).into());
    }
    let mut cells = Vec::new();
    for (k, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Invalid(format!("heatmap CSV row {}: {line:?}", k + 2));
        if fields.len() != 6 {
            return Err(bad().into());
        }
        cells.push(HeatCell {
            strategy: fields[0].to_string(),
            ratio: fields[1].parse().map_err(|_| bad())?,
            accuracy: fields[2].parse().map_err(|_| bad())?,
        });
    }
    if cells.is_empty() {
        return Err(Invalid("heatmap CSV has no rows".into()).into());
    }
    Ok(cells)
}

fn color(t: f64) -> String {
    if !t.is_finite() {
        return "#bbbbbb".into();
    }
    let x = t.clamp(0.0, 1.0) * (PALETTE.len() - 1) as f64;
    let i = (x.floor() as usize).min(PALETTE.len() - 2);
    let f = x - i as f64;
    let (a, b) = (PALETTE[i], PALETTE[i + 1]);
    let mix = |u: f64, v: f64| (u + (v - u) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn heatmap_svg(cells: &[HeatCell], provenance: &str, source: &Path) -> String {
    let mut strategies: Vec<&str> = Vec::new();
    for c in cells {
        if !strategies.contains(&c.strategy.as_str()) {
            strategies.push(&c.strategy);
        }
    }
    let mut ratios: Vec<f64> = cells.iter().map(|c| c.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    let finite: Vec<f64> = cells.iter().map(|c| c.accuracy).filter(|a| a.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (cw, ch, left, top) = (56.0, 36.0, 60.0, 40.0);
    let width = left + cw * ratios.len() as f64 + 20.0;
    let height = top + ch * strategies.len() as f64 + 50.0;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, "<!-- data: {} -->", escape(provenance));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">Accuracy by masking strategy and ratio ({})</text>"#,
        width / 2.0,
        escape(&source.file_name().unwrap_or_default().to_string_lossy())
    );
    for c in cells {
        let row = strategies.iter().position(|s| *s == c.strategy).expect("collected");
        let col = ratios.iter().position(|r| *r == c.ratio).expect("collected");
        let (x, y) = (left + col as f64 * cw, top + row as f64 * ch);
        let t = if !c.accuracy.is_finite() {
            f64::NAN
        } else if hi > lo {
            (c.accuracy - lo) / (hi - lo)
        } else {
            0.5
        };
        let label = if c.accuracy.is_finite() { format!("{:.1}", 100.0 * c.accuracy) } else { "n/a".into() };
        let ink = if t.is_finite() && t > 0.6 { "#000" } else { "#fff" };
        let _ = writeln!(
            s,
            r#"<rect class="cell" x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{}" data-strategy="{}" data-ratio="{}" data-accuracy="{}"/>"#,
            color(t),
            escape(&c.strategy),
            c.ratio,
            c.accuracy
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{label}</text>"#,
            x + cw / 2.0,
            y + ch / 2.0 + 4.0
        );
    }
    for (row, name) in strategies.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 8.0,
            top + row as f64 * ch + ch / 2.0 + 4.0,
            escape(name)
        );
    }
    let base = top + ch * strategies.len() as f64;
    for (col, r) in ratios.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{r}</text>"#,
            left + col as f64 * cw + cw / 2.0,
            base + 16.0
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">masking ratio</text>"#, left + cw * ratios.len() as f64 / 2.0, base + 34.0);
    s.push_str("</svg>\n");
    s
}

pub fn snr_svg(curves: &[(String, BTreeMap<i16, f64>)], provenance: &str) -> String {
    let snrs: Vec<i16> = curves.iter().flat_map(|(_, c)| c.keys().copied()).collect();
    let (lo, hi) = (
        f64::from(*snrs.iter().min().expect("nonempty")),
        f64::from(*snrs.iter().max().expect("nonempty")),
    );
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (left, top, w, h) = (60.0, 40.0, 480.0, 260.0);
    let px = |snr: i16| left + (f64::from(snr) - lo) / span * w;
    let py = |acc: f64| top + (1.0 - acc.clamp(0.0, 1.0)) * h;
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#, left + w + 150.0, top + h + 50.0);
    let _ = writeln!(s, "<!-- data: {} -->", escape(provenance));
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">Accuracy versus SNR</text>"#, left + w / 2.0);
    let _ = writeln!(s, r##"<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="#444"/>"##);
    for k in 0..=4 {
        let acc = f64::from(k) * 0.25;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{acc:.2}</text>"#, left - 6.0, py(acc) + 4.0);
    }
    for snr in [lo, (lo + hi) / 2.0, hi] {
        let x = left + (snr - lo) / span * w;
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{snr}</text>"#, top + h + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">SNR (dB)</text>"#, left + w / 2.0, top + h + 34.0);
    for (i, (label, curve)) in curves.iter().enumerate() {
        let color = colors[i % colors.len()];
        let points: Vec<String> = curve.iter().map(|(&snr, &acc)| format!("{:.2},{:.2}", px(snr), py(acc))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="snr-curve" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 14.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, left + w + 10.0, left + w + 30.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, left + w + 36.0, ly + 4.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_grid_has_36_cells() {
        let mut csv = format!("{HEATMAP_HEADER}\n");
        for s in ["A", "B", "C", "D"] {
            for r in 1..=9 {
                csv += &format!("{s},{},0.{r},0.5,0.{r},0.01\n", f64::from(r) / 10.0);
            }
        }
        let cells = parse_heatmap(&csv).unwrap();
        let svg = heatmap_svg(&cells, "x", Path::new("h.csv"));
        assert_eq!(svg.matches(r#"class="cell""#).count(), 36);
    }

    #[test]
    fn failed_cells_are_grey() {
        let cells = parse_heatmap(&format!("{HEATMAP_HEADER}\nA,0.1,nan,nan,nan,nan\nA,0.2,0.4,0.4,0.4,0\n")).unwrap();
        assert!(heatmap_svg(&cells, "x", Path::new("h.csv")).contains("#bbbbbb"));
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(parse_heatmap("a,b\n1,2\n").is_err());
        assert!(parse_heatmap(&format!("{HEATMAP_HEADER}\n")).is_err());
        assert!(parse_heatmap(&format!("{HEATMAP_HEADER}\nA,x,1,1,1,1\n")).is_err());
    }

    #[test]
    fn curve_has_one_vertex_per_snr() {
        let curve: BTreeMap<i16, f64> = (-20..=20).map(|s| (s, 0.5 + f64::from(s) / 50.0)).collect();
        let svg = snr_svg(&[("ssl".into(), curve)], "x");
        let points = svg.split(r#"points=""#).nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(points.split(' ').count(), 41);
    }
}
