//! Markdown, CSV and JSON renderings of metric tables and verdicts.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::benchmark::{AblationReport, BenchmarkReport, Verdict};
use super::pipeline::Component;
use super::run::MetricTable;

pub const TABLE_COLUMNS: [&str; 17] = [
    "label",
    "events",
    "labelled_events",
    "crps",
    "csi20",
    "csi40",
    "pod",
    "far",
    "reliability",
    "median_lead_min",
    "warned",
    "late",
    "missed",
    "reach_10min",
    "routes_viable_frac",
    "coordination_latency_min",
    "coordination_latency_p95",
];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "missing".to_string(), |x| format!("{x:.4}"))
}

fn row(t: &MetricTable) -> Vec<String> {
    vec![
        t.label.clone(),
        t.events.to_string(),
        t.labelled_events.to_string(),
        cell(t.crps),
        cell(t.csi20),
        cell(t.csi40),
        cell(t.pod),
        cell(t.far),
        cell(t.reliability),
        cell(t.median_lead_min),
        t.warned.to_string(),
        t.late.to_string(),
        t.missed.to_string(),
        cell(t.reach_10min),
        cell(t.routes_viable_frac),
        cell(t.coordination_latency_min),
        cell(t.coordination_latency_p95),
    ]
}

pub fn tables_csv(tables: &[&MetricTable]) -> String {
    let mut out = TABLE_COLUMNS.join(",");
    out.push('\n');
    for t in tables {
        out.push_str(&row(t).join(","));
        out.push('\n');
    }
    out
}

pub fn tables_markdown(tables: &[&MetricTable]) -> String {
    let mut out = format!("| {} |\n", TABLE_COLUMNS.join(" | "));
    out.push_str(&format!("|{}\n", "---|".repeat(TABLE_COLUMNS.len())));
    for t in tables {
        out.push_str(&format!("| {} |\n", row(t).join(" | ")));
    }
    out
}

pub fn verdicts_json(verdicts: &BTreeMap<String, Verdict>) -> String {
    serde_json::to_string_pretty(verdicts).expect("verdicts serialize") + "\n"
}

const RELIABILITY_NOTE: &str = "Reliability is 1 minus the count-weighted mean absolute gap between mean \
forecast probability and observed frequency over 10 equal-width bins. It is this tool's own index and is \
not calibrated against any externally published score.";

pub fn benchmark_markdown(r: &BenchmarkReport) -> String {
    let mut s = String::from("# Benchmark: MAS vs baseline\n\n");
    if r.seeds.is_empty() {
        s.push_str("Empty batch: no events, no verdicts.\n");
        return s;
    }
    let _ = writeln!(
        s,
        "Events: {} (seeds {}..={}). Wall time {:.1} s.\n",
        r.seeds.len(),
        r.seeds[0],
        r.seeds[r.seeds.len() - 1],
        r.elapsed_s
    );
    s.push_str(&tables_markdown(&[&r.mas, &r.baseline]));
    s.push_str("\n## Verdicts\n\n| metric | mas | baseline | delta | win |\n|---|---|---|---|---|\n");
    for (k, v) in &r.verdicts {
        let _ = writeln!(s, "| {k} | {} | {} | {} | {} |", cell(v.mas), cell(v.baseline), cell(v.delta), v.win);
    }
    let _ = writeln!(
        s,
        "\nPer-event CRPS wins: MAS {} / baseline {} of {}.",
        r.crps_wins.0,
        r.crps_wins.1,
        r.seeds.len()
    );
    let _ = writeln!(s, "Observation inputs identical across configurations: {}.", r.input_hashes_match);
    let _ = writeln!(s, "Largest hydrology mass-balance error: {:.3e}.", r.max_mass_balance_error);
    let _ = writeln!(
        s,
        "A missing median lead (no warned events) compares as 0 min.\n\n{RELIABILITY_NOTE}\n\nOverall: {}.",
        if r.passed() { "PASS" } else { "FAIL" }
    );
    s
}

pub fn ablation_markdown(reports: &[AblationReport]) -> String {
    let mut s = String::from("# Ablations\n");
    for r in reports {
        let _ = writeln!(s, "\n## Without {}\n", r.component.as_str());
        s.push_str(&tables_markdown(&[&r.full, &r.ablated]));
        s.push_str("\n| metric | ablated - full |\n|---|---|\n");
        for (k, d) in &r.deltas {
            let _ = writeln!(s, "| {k} | {} |", cell(*d));
        }
        s.push_str("\nExpected signs:\n\n");
        for (k, ok) in &r.checks {
            let _ = writeln!(s, "- {k}: {}", if *ok { "holds" } else { "violated" });
        }
        if r.component == Component::Learning {
            s.push_str(ADAPTATION_NOTE);
            s.push_str("\n| metric | adaptation gain |\n|---|---|\n");
            for (k, d) in &r.deltas {
                let _ = writeln!(s, "| {k} | {} |", cell(d.map(|d| -d)));
            }
        }
    }
    s
}

const ADAPTATION_NOTE: &str = "\nAdaptation gain is this tool's own definition: the metric with between-event \
learning minus the metric with learning frozen at its initial state, over the same events.\n";

pub fn ablation_csv(reports: &[AblationReport]) -> String {
    let mut out = String::from("component,metric,full,ablated,delta\n");
    for r in reports {
        for (k, d) in &r.deltas {
            let _ = writeln!(
                out,
                "{},{k},{},{},{}",
                r.component.as_str(),
                cell(super::benchmark::metric(&r.full, k)),
                cell(super::benchmark::metric(&r.ablated, k)),
                cell(*d)
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::run::MetricAccumulator;

    #[test]
    fn csv_has_one_row_per_table_and_fixed_columns() {
        let t = MetricAccumulator::new(10).table("mas");
        let csv = tables_csv(&[&t, &t]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        for l in &lines {
            assert_eq!(l.split(',').count(), TABLE_COLUMNS.len());
        }
        assert!(lines[1].contains("missing"));
    }

    #[test]
    fn learning_ablation_reports_the_gain_with_flipped_sign() {
        let t = MetricAccumulator::new(10).table("mas");
        let report = |component| AblationReport {
            component,
            seeds: vec![1],
            full: t.clone(),
            ablated: t.clone(),
            deltas: BTreeMap::from([("crps".to_string(), Some(0.25))]),
            checks: BTreeMap::new(),
            elapsed_s: 0.0,
        };
        let md = ablation_markdown(&[report(Component::Learning)]);
        assert!(md.contains("| crps | -0.2500 |"));
        assert!(!ablation_markdown(&[report(Component::Downscaling)]).contains("adaptation gain"));
    }
}
