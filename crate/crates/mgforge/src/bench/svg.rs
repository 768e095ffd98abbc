//! Dependency-free SVG line charts: per-stage time against dofs per rank
//! on log-log axes.

use super::report::RunSummary;
use std::io::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Writes one log-log chart; series are the stages present in the runs.
pub fn emit_svg(runs: &[RunSummary], w: &mut impl Write) -> std::io::Result<()> {
    let mut stages: Vec<String> = Vec::new();
    for run in runs {
        for row in &run.report.rows {
            if row.seconds > 0.0 && !stages.contains(&row.stage) {
                stages.push(row.stage.clone());
            }
        }
    }
    let mut points: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for stage in &stages {
        let mut series = Vec::new();
        for run in runs {
            if let Some(row) = run.report.row(stage) {
                if row.seconds > 0.0 {
                    series.push((run.total_dofs as f64 / run.ranks as f64, row.seconds));
                }
            }
        }
        if series.len() >= 2 {
            series.sort_by(|a, b| a.0.total_cmp(&b.0));
            points.push((stage.clone(), series));
        }
    }

    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="monospace" font-size="12">"#
    )?;
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    if points.is_empty() {
        writeln!(w, r#"<text x="20" y="30">no multi-run data</text></svg>"#)?;
        return Ok(());
    }

    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, series) in &points {
        for &(x, y) in series {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    let pad = |lo: f64, hi: f64| {
        let (l, h) = (lo.log10(), hi.log10());
        let d = (h - l).max(0.1);
        (l - 0.05 * d, h + 0.05 * d)
    };
    let (lx0, lx1) = pad(xmin, xmax);
    let (ly0, ly1) = pad(ymin, ymax);
    let sx = |x: f64| MARGIN + (x.log10() - lx0) / (lx1 - lx0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y.log10() - ly0) / (ly1 - ly0) * (HEIGHT - 2.0 * MARGIN);

    // axes
    writeln!(
        w,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    )?;
    writeln!(
        w,
        r#"<line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN
    )?;
    writeln!(
        w,
        r#"<text x="{x}" y="{y}" text-anchor="middle">dofs per rank (log)</text>"#,
        x = WIDTH / 2.0,
        y = HEIGHT - 15.0
    )?;
    writeln!(
        w,
        r#"<text x="18" y="{y}" transform="rotate(-90 18 {y})" text-anchor="middle">seconds (log)</text>"#,
        y = HEIGHT / 2.0
    )?;

    for (i, (stage, series)) in points.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = series
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        writeln!(
            w,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.join(" ")
        )?;
        for &(x, y) in series {
            writeln!(
                w,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y)
            )?;
        }
        writeln!(
            w,
            r#"<text x="{x}" y="{y}" fill="{color}">{stage}</text>"#,
            x = WIDTH - MARGIN - 180.0,
            y = MARGIN + 16.0 * i as f64
        )?;
    }
    writeln!(w, "</svg>")?;
    Ok(())
}
