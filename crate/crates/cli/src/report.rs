//! Markdown summary of a run directory. Reads only files under the
//! directory, so the output is a function of its contents.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use fleeting::stats::{read_metrics_csv, MetricRow};
use fleeting::{Error, Result};
use serde::Deserialize;

use crate::pipeline::GridStatus;

#[derive(Deserialize)]
struct StatsRow {
    metric: String,
    comparison: String,
    n: usize,
    mean: f64,
    ci_low: f64,
    ci_high: f64,
    p: f64,
    stars: String,
}

fn sorted_files(dir: &Path, ext: &str) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .into_iter()
        .flatten()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(ext))
        .collect();
    v.sort();
    v
}

fn decimals(metric: &str) -> usize {
    match metric.split(':').next().unwrap_or("") {
        "val_loss" => 6,
        "pair_acc" => 4,
        "delta_ll" => 3,
        _ => 2,
    }
}

/// Conditions in first-seen order, seeds ascending.
fn table(out: &mut String, title: &str, rows: &[&MetricRow]) {
    let mut conditions: Vec<&str> = Vec::new();
    for r in rows {
        if !conditions.contains(&r.condition.as_str()) {
            conditions.push(&r.condition);
        }
    }
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let d = decimals(&rows[0].metric);
    let _ = writeln!(out, "### {title}\n");
    let _ = write!(out, "| condition |");
    for s in &seeds {
        let _ = write!(out, " seed {s} |");
    }
    let _ = writeln!(out, " mean |");
    let _ = writeln!(out, "|---|{}---|", "---|".repeat(seeds.len()));
    for c in conditions {
        let _ = write!(out, "| {c} |");
        let mut sum = 0.0;
        let mut n = 0;
        for s in &seeds {
            match rows.iter().find(|r| r.condition == c && r.seed == *s) {
                Some(r) => {
                    sum += r.value;
                    n += 1;
                    let _ = write!(out, " {:.d$} |", r.value);
                }
                None => {
                    let _ = write!(out, " - |");
                }
            }
        }
        let _ = writeln!(out, " {:.d$} |", sum / n.max(1) as f64);
    }
    out.push('\n');
}

pub fn summary(dir: &Path) -> Result<String> {
    let grid: GridStatus = {
        let p = dir.join("grid.json");
        serde_json::from_str(&std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?
    };
    let mut rows: Vec<MetricRow> = Vec::new();
    for f in sorted_files(&dir.join("metrics"), ".csv") {
        rows.extend(read_metrics_csv(&dir.join("metrics").join(f))?);
    }
    let mut out = String::from("# Experiment summary\n\n");
    let failed: Vec<_> = grid.cells.iter().filter(|c| !c.ok).collect();
    let _ = writeln!(
        out,
        "Grid: {} cells, {} completed, {} failed.\n",
        grid.cells.len(),
        grid.cells.len() - failed.len(),
        failed.len()
    );
    for c in &failed {
        let _ = writeln!(out, "- failed: {} seed {}: {}", c.condition, c.seed, c.error.as_deref().unwrap_or(""));
    }
    if !failed.is_empty() {
        out.push('\n');
    }

    let mut by_metric: BTreeMap<&str, Vec<&MetricRow>> = BTreeMap::new();
    for r in &rows {
        by_metric.entry(r.metric.as_str()).or_default().push(r);
    }
    let sections = [
        ("val_loss", "Final validation loss (nats)"),
        ("pair_acc", "Minimal-pair accuracy"),
        ("delta_ll", "Reading-time ΔLL"),
    ];
    out.push_str("## Metrics\n\n");
    for (prefix, title) in sections {
        for (metric, rs) in by_metric.iter().filter(|(m, _)| m.split(':').next() == Some(prefix)) {
            let title = match metric.split_once(':') {
                Some((_, src)) => format!("{title}: {src}"),
                None => title.to_string(),
            };
            table(&mut out, &title, rs);
        }
    }

    // Quintile MSE, one table per corpus: rows conditions, columns quintiles.
    let mut corpora: BTreeMap<&str, BTreeMap<(usize, &str), Vec<f64>>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for r in &rows {
        let Some((q, src)) = r.metric.strip_prefix("mse_q").and_then(|m| m.split_once(':')) else {
            continue;
        };
        let Ok(q) = q.parse::<usize>() else { continue };
        if !order.contains(&r.condition.as_str()) {
            order.push(&r.condition);
        }
        corpora.entry(src).or_default().entry((q, r.condition.as_str())).or_default().push(r.value);
    }
    for (src, cells) in &corpora {
        let _ = writeln!(out, "### Residual MSE by frequency quintile: {src} (seed mean, ms²)\n");
        out.push_str("| condition | Q1 | Q2 | Q3 | Q4 | Q5 |\n|---|---|---|---|---|---|\n");
        for c in &order {
            let _ = write!(out, "| {c} |");
            for q in 1..=5 {
                match cells.get(&(q, *c)) {
                    Some(v) => {
                        let _ = write!(out, " {:.2} |", v.iter().sum::<f64>() / v.len() as f64);
                    }
                    None => {
                        let _ = write!(out, " - |");
                    }
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }

    let stats_path = dir.join("stats").join("stats.csv");
    if stats_path.is_file() {
        let mut rdr = csv::Reader::from_path(&stats_path)?;
        let stats: Vec<StatsRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
        out.push_str("## Paired bootstrap tests\n\n");
        out.push_str("| metric | comparison | n | mean Δ | 95% CI | p | |\n|---|---|---|---|---|---|---|\n");
        for s in &stats {
            let d = decimals(&s.metric) + 1;
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.d$} | [{:.d$}, {:.d$}] | {:.4} | {} |",
                s.metric, s.comparison, s.n, s.mean, s.ci_low, s.ci_high, s.p, s.stars
            );
        }
        out.push('\n');
    }

    let figures = sorted_files(&dir.join("figures"), ".svg");
    if !figures.is_empty() {
        out.push_str("## Figures\n\n");
        for f in figures {
            let _ = writeln!(out, "- figures/{f}");
        }
    }
    Ok(out)
}
