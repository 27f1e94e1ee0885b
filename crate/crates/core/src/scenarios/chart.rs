//! Grouped bar charts of sweep metrics as standalone SVG.

use std::fmt::Write;

use super::{Distribution, SweepRow};
use crate::model::PlanMetrics;

type Getter = fn(&PlanMetrics) -> f64;

/// `(file stem, axis label, value)` of every chartable metric.
pub const CHART_METRICS: [(&str, &str, Getter); 6] = [
    ("total_cost", "Total cost ($)", |m| m.total_cost),
    ("server_cost", "Server cost ($)", |m| m.server_cost),
    ("network_cost", "Network cost ($)", |m| m.network_cost),
    ("allocated_mb", "Allocated memory (MB)", |m| {
        m.allocated_memory
    }),
    ("median_compression_rate", "Median compression rate", |m| {
        m.median_compression_rate()
    }),
    ("max_delay_ms", "Max end-to-end delay (ms)", |m| m.max_delay),
];

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 80.0;
const BOTTOM: f64 = 60.0;
const TOP: f64 = 40.0;

fn colour(d: Distribution) -> &'static str {
    match d {
        Distribution::Homogeneous => "#4e79a7",
        Distribution::Heterogeneous => "#f28e2b",
    }
}

/// One group per (scenario, n) in first-seen order, one bar per distribution.
/// Failed runs get an empty slot marked with a cross.
pub fn render_chart(rows: &[SweepRow], metric: &str) -> Option<String> {
    let &(_, label, get) = CHART_METRICS.iter().find(|(name, _, _)| *name == metric)?;
    let mut groups: Vec<(String, usize)> = Vec::new();
    for r in rows {
        let key = (r.spec.kind.name().to_uppercase(), r.spec.participant_count);
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let dists = [Distribution::Homogeneous, Distribution::Heterogeneous];
    let top = rows
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok().map(get))
        .fold(0.0f64, f64::max);
    let top = if top > 0.0 { top * 1.1 } else { 1.0 };

    let plot_w = WIDTH - LEFT - 20.0;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let group_w = plot_w / groups.len().max(1) as f64;
    let bar_w = group_w * 0.8 / dists.len() as f64;
    let y_of = |v: f64| TOP + plot_h * (1.0 - v / top);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{label}</text>"#,
        WIDTH / 2.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#,
        TOP + plot_h
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{y}" x2="{}" y2="{y}" stroke="black"/>"#,
        WIDTH - 20.0,
        y = TOP + plot_h
    );
    for k in 0..=4 {
        let v = top * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y_of(v) + 4.0,
            tick(v)
        );
    }
    for (gi, (kind, n)) in groups.iter().enumerate() {
        let gx = LEFT + gi as f64 * group_w + group_w * 0.1;
        for (di, &d) in dists.iter().enumerate() {
            let x = gx + di as f64 * bar_w;
            let row = rows.iter().find(|r| {
                r.spec.kind.name().to_uppercase() == *kind
                    && r.spec.participant_count == *n
                    && r.spec.distribution == d
            });
            match row.map(|r| r.outcome.as_ref()) {
                Some(Ok(m)) => {
                    let v = get(m);
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x:.1}" y="{:.1}" width="{bar_w:.1}" height="{:.1}" fill="{}"/>"#,
                        y_of(v),
                        TOP + plot_h - y_of(v),
                        colour(d)
                    );
                }
                Some(Err(_)) => {
                    let _ = writeln!(
                        s,
                        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="{}">x</text>"#,
                        x + bar_w / 2.0,
                        TOP + plot_h - 4.0,
                        colour(d)
                    );
                }
                None => {}
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{kind} {n}</text>"#,
            gx + bar_w,
            TOP + plot_h + 18.0
        );
    }
    for (di, &d) in dists.iter().enumerate() {
        let x = LEFT + 10.0 + di as f64 * 140.0;
        let y = HEIGHT - 16.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/>"#,
            y - 10.0,
            colour(d)
        );
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, x + 16.0, d.name());
    }
    s.push_str("</svg>\n");
    Some(s)
}

fn tick(v: f64) -> String {
    if v >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}
