//! Machine (CSV) and human (markdown) renderings of an evaluation report.

use std::collections::BTreeSet;
use std::fmt::Write;

use super::{EvalReport, DEPTHS};

/// Relative drop from `d0` to `d5` in percent; `None` when `d0` is zero.
pub fn drop_percent(d0: f64, d5: f64) -> Option<f64> {
    (d0 > 0.0).then(|| (d0 - d5) / d0 * 100.0)
}

pub const CSV_HEADER: &str = "agent,depth,error_type,cases,runs,awareness_rate,success_rate,all_pass_rate";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_csv(report: &EvalReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        let t = r.error_type.map_or("all", |t| t.as_str());
        writeln!(
            out,
            "{},{},{},{},{},{:.4},{:.4},{:.4}",
            csv_field(&r.agent),
            r.depth,
            t,
            r.cases,
            r.runs,
            r.awareness_rate,
            r.success_rate,
            r.all_pass_rate
        )
        .expect("string write");
    }
    out
}

fn pct(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

/// Success by depth with the depth-0 to depth-5 drop, then awareness by
/// depth, one row per agent.
pub fn render_summary(report: &EvalReport) -> String {
    let agents: BTreeSet<&str> = report.rows.iter().map(|r| r.agent.as_str()).collect();
    let mut out = String::new();
    writeln!(out, "# Robustness evaluation\n").unwrap();
    writeln!(out, "Runs per case: {}\n", report.runs_per_case).unwrap();
    let header = |out: &mut String, title: &str, extra: &str| {
        writeln!(out, "## {title}\n").unwrap();
        write!(out, "| Agent |").unwrap();
        for d in DEPTHS {
            write!(out, " d={d} |").unwrap();
        }
        writeln!(out, "{extra}").unwrap();
        write!(out, "|---|").unwrap();
        for _ in DEPTHS {
            write!(out, "---:|").unwrap();
        }
        writeln!(out, "{}", if extra.is_empty() { "" } else { "---:|" }).unwrap();
    };
    let cell = |agent: &str, d: u32, f: &dyn Fn(&super::RateRow) -> f64| {
        report.row(agent, d, None).map_or("-".to_string(), |r| pct(f(r)))
    };
    header(&mut out, "Post-error success rate (%)", " Drop |");
    for a in &agents {
        write!(out, "| {a} |").unwrap();
        for d in DEPTHS {
            write!(out, " {} |", cell(a, d, &|r| r.success_rate)).unwrap();
        }
        let drop = report
            .drops
            .iter()
            .find(|x| x.agent == *a)
            .and_then(|x| x.drop_pct)
            .map_or("-".to_string(), |p| format!("{p:.0}%"));
        writeln!(out, " {drop} |").unwrap();
    }
    writeln!(out).unwrap();
    header(&mut out, "Error-awareness rate (%)", "");
    for a in &agents {
        write!(out, "| {a} |").unwrap();
        for d in DEPTHS {
            write!(out, " {} |", cell(a, d, &|r| r.awareness_rate)).unwrap();
        }
        writeln!(out).unwrap();
    }
    writeln!(out).unwrap();
    header(&mut out, "All-pass rate over runs (%)", "");
    for a in &agents {
        write!(out, "| {a} |").unwrap();
        for d in DEPTHS {
            write!(out, " {} |", cell(a, d, &|r| r.all_pass_rate)).unwrap();
        }
        writeln!(out).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drop_arithmetic() {
        assert_eq!(drop_percent(0.40, 0.268).map(|p| p.round()), Some(33.0));
        assert_eq!(drop_percent(0.0, 0.0), None);
        assert_eq!(drop_percent(1.0, 1.0), Some(0.0));
    }

    #[test]
    fn empty_report_has_headers() {
        let r = EvalReport::default();
        assert_eq!(render_csv(&r), format!("{CSV_HEADER}\n"));
        assert!(render_summary(&r).contains("| Agent | d=0 | d=1 | d=3 | d=5 | Drop |"));
    }
}
