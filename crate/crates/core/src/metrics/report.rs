//! Text table, fingerprint CSV and radar plots for an [`Analysis`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{Analysis, ArmStats, DimStats, CONTROL_ROW};
use crate::{Error, Result};

fn cell(d: &DimStats, prec: usize) -> String {
    let mut s = format!("{:.p$} ± {:.p$}", d.mean, d.sd, p = prec);
    if let Some(ci) = &d.ci {
        let _ = write!(s, " [{:.p$}, {:.p$}]", ci.lower(), ci.upper(), p = prec);
    }
    s.push_str(&d.stars);
    s
}

fn row(out: &mut String, w: usize, name: &str, arm: &ArmStats, signature: &str) {
    let _ = writeln!(
        out,
        "{:<w$} {:>3} {:<30} {:<32} {:<32} {}",
        name,
        arm.trials.len(),
        cell(&arm.dims[0], 3),
        cell(&arm.dims[1], 1),
        cell(&arm.dims[2], 1),
        signature
    );
}

/// Fixed-width summary: one row per config plus the pooled no-attack row,
/// mean ± SD [95% CI] with Bonferroni-corrected significance stars.
pub fn render_table(a: &Analysis) -> String {
    let mut out = String::new();
    // wide enough for "  <name> (sham)"
    let w = a.configs.iter().map(|c| c.name.chars().count() + 9).fold(16, usize::max);
    let _ = writeln!(
        out,
        "{:<w$} {:>3} {:<30} {:<32} {:<32} {}",
        "config", "n", "steering dev", "proc time incr %", "fps drop %", "signature"
    );
    if a.configs.is_empty() {
        out.push_str("(no attack configurations in the input)\n");
        return out;
    }
    if let Some(c) = &a.control {
        let sig = a
            .fingerprints
            .iter()
            .find(|f| f.name == CONTROL_ROW)
            .and_then(|f| f.normalized)
            .map(|n| super::classify_signature(n, a.thresholds).to_string())
            .unwrap_or_else(|| "-".into());
        row(&mut out, w, CONTROL_ROW, c, &sig);
    }
    for c in &a.configs {
        let sig = c.signature.map(|s| s.to_string()).unwrap_or_else(|| "-".into());
        row(&mut out, w, &c.name, &c.attack, &sig);
        if let Some(s) = &c.sham {
            row(&mut out, w, &format!("  {} (sham)", c.name), s, "");
        }
    }
    let _ = writeln!(
        out,
        "\n* p<0.05  ** p<0.01  *** p<0.001 (paired t vs matched no-attack trials, Bonferroni m={})",
        a.configs.len()
    );
    let outliers: Vec<String> = a
        .configs
        .iter()
        .flat_map(|c| {
            c.attack.dims.iter().zip(super::AXES).flat_map(move |(d, axis)| {
                d.trial_outliers
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| **o)
                    .map(move |(i, _)| format!("{}:{axis}:trial {i}", c.name))
            })
        })
        .collect();
    if !outliers.is_empty() {
        let _ = writeln!(out, "3σ trial outliers: {}", outliers.join(", "));
    }
    out
}

/// `name,raw...,normalized...,signature` per fingerprint.
pub fn fingerprint_csv(a: &Analysis) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["name".to_string()];
    header.extend(super::AXES.iter().map(|x| x.to_string()));
    header.extend(super::AXES.iter().map(|x| format!("{x}_norm")));
    header.push("signature".into());
    w.write_record(&header)?;
    for f in &a.fingerprints {
        let mut rec = vec![f.name.clone()];
        rec.extend(f.raw.iter().map(|v| format!("{v}")));
        match f.normalized {
            Some(n) => {
                rec.extend(n.iter().map(|v| format!("{v}")));
                rec.push(super::classify_signature(n, a.thresholds).to_string());
            }
            None => rec.extend(["", "", "", ""].map(String::from)),
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Metrics(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8 csv"))
}

/// Three-axis radar of a normalized fingerprint.
pub fn radar_svg(name: &str, normalized: [f64; 3]) -> String {
    const C: f64 = 150.0;
    const R: f64 = 100.0;
    let pt = |i: usize, r: f64| {
        let ang = -std::f64::consts::FRAC_PI_2 + i as f64 * std::f64::consts::TAU / 3.0;
        (C + r * ang.cos(), C + r * ang.sin())
    };
    let poly = |r: &dyn Fn(usize) -> f64| {
        (0..3)
            .map(|i| {
                let (x, y) = pt(i, r(i));
                format!("{x:.2},{y:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="300" height="320" viewBox="0 0 300 320">"#
    );
    for ring in [0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            s,
            r##"<polygon points="{}" fill="none" stroke="#bbb"/>"##,
            poly(&|_| R * ring)
        );
    }
    for (i, axis) in super::AXES.iter().enumerate() {
        let (x, y) = pt(i, R);
        let (lx, ly) = pt(i, R + 18.0);
        let _ = writeln!(s, r##"<line x1="{C}" y1="{C}" x2="{x:.2}" y2="{y:.2}" stroke="#888"/>"##);
        let _ = writeln!(
            s,
            r#"<text x="{lx:.2}" y="{ly:.2}" font-size="11" text-anchor="middle">{axis}</text>"#
        );
    }
    let _ = writeln!(
        s,
        r##"<polygon points="{}" fill="#d33" fill-opacity="0.35" stroke="#d33"/>"##,
        poly(&|i| R * normalized[i].clamp(0.0, 1.0))
    );
    let _ = writeln!(
        s,
        r#"<text x="150" y="310" font-size="13" text-anchor="middle">{}</text>"#,
        escape(name)
    );
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `table.txt`, `fingerprints.csv`, `analysis.json` and one radar
/// SVG per normalized fingerprint into `dir`. Returns the written paths.
pub fn emit_report(a: &Analysis, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(PathBuf, String)> = vec![
        (dir.join("table.txt"), render_table(a)),
        (dir.join("fingerprints.csv"), fingerprint_csv(a)?),
        (dir.join("analysis.json"), serde_json::to_string_pretty(a)? + "\n"),
    ];
    for f in &a.fingerprints {
        if let Some(n) = f.normalized {
            files.push((dir.join(format!("radar_{}.svg", f.name)), radar_svg(&f.name, n)));
        }
    }
    for (p, text) in &files {
        std::fs::write(p, text).map_err(|e| Error::io(p, e))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{analyze, Dataset, Thresholds};

    #[test]
    fn empty_input_gives_a_stub_table() {
        let a = analyze(&Dataset::default(), Thresholds::default()).unwrap();
        let t = render_table(&a);
        assert!(t.contains("no attack configurations"));
        assert_eq!(fingerprint_csv(&a).unwrap().lines().count(), 1);
    }

    #[test]
    fn radar_is_well_formed() {
        let s = radar_svg("a<b", [1.0, 0.5, 0.0]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a&lt;b"));
    }
}
