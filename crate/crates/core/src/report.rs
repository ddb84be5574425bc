//! Human-readable sweep tables: mean macro F1 per `(regime, p)` and a
//! per-class comparison with methods as columns and an average row carrying
//! differences against Baseline.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::sweep::{mean_std, CellRecord};
use crate::train::Regime;

/// `p` whose TMPS column is shown in the per-class table when present.
pub const REPORT_P: f64 = 0.7;

/// Rounds a fraction to tenths of a percent, as an integer count of tenths.
fn tenths(fraction: f64) -> i64 {
    (fraction * 1000.0).round() as i64
}

fn show_tenths(t: i64) -> String {
    let sign = if t < 0 { "-" } else { "" };
    format!("{sign}{}.{}", t.abs() / 10, t.abs() % 10)
}

/// Difference between two averages (fractions) after each is rounded to one
/// decimal percent, rendered as `(+x.y)` / `(-x.y)`.
pub fn format_delta(method: f64, baseline: f64) -> String {
    let d = tenths(method) - tenths(baseline);
    let sign = if d < 0 { '-' } else { '+' };
    format!("({sign}{})", show_tenths(d.abs()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonColumn {
    pub label: String,
    pub regime: Regime,
    pub p: Option<f64>,
    /// Mean per-class F1 over seeds.
    pub class_f1: Vec<f64>,
    /// Mean of `class_f1`.
    pub average: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub columns: Vec<ComparisonColumn>,
    pub num_classes: usize,
}

impl ComparisonTable {
    /// Builds the table from successful cells. TMPS uses `p = 0.7` when
    /// available, otherwise the `p` with the highest mean macro F1.
    pub fn from_records(records: &[CellRecord]) -> Result<Self> {
        let ok: Vec<&CellRecord> = records.iter().filter(|r| r.macro_f1.is_some()).collect();
        let num_classes = ok.first().map(|r| r.class_f1.len()).unwrap_or(0);
        let mut columns = Vec::new();
        for regime in Regime::ALL {
            let p = if regime.uses_p() {
                match pick_p(&ok, regime) {
                    Some(p) => Some(p),
                    None => continue,
                }
            } else {
                None
            };
            let cells: Vec<&&CellRecord> = ok.iter().filter(|r| r.regime == regime && r.p == p).collect();
            if cells.is_empty() {
                continue;
            }
            let class_f1: Vec<f64> = (0..num_classes)
                .map(|c| cells.iter().map(|r| r.class_f1[c]).sum::<f64>() / cells.len() as f64)
                .collect();
            let average = class_f1.iter().sum::<f64>() / num_classes.max(1) as f64;
            let label = match p {
                Some(p) => format!("{regime} (p={p})"),
                None => regime.to_string(),
            };
            columns.push(ComparisonColumn {
                label,
                regime,
                p,
                class_f1,
                average,
            });
        }
        if !columns.iter().any(|c| c.regime == Regime::Baseline) {
            return Err(Error::invalid("report", "results contain no successful Baseline cells"));
        }
        Ok(Self { columns, num_classes })
    }

    pub fn baseline(&self) -> &ComparisonColumn {
        self.columns
            .iter()
            .find(|c| c.regime == Regime::Baseline)
            .expect("checked at construction")
    }

    /// Delta strings for the average row, in column order.
    pub fn deltas(&self) -> Vec<String> {
        let base = self.baseline().average;
        self.columns.iter().map(|c| format_delta(c.average, base)).collect()
    }

    pub fn render(&self) -> String {
        let width = self.columns.iter().map(|c| c.label.len()).max().unwrap_or(0).max(14);
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "class");
        for c in &self.columns {
            let _ = write!(out, " {:>width$}", c.label);
        }
        out.push('\n');
        for k in 0..self.num_classes {
            let _ = write!(out, "{k:<8}");
            for c in &self.columns {
                let _ = write!(out, " {:>width$}", show_tenths(tenths(c.class_f1[k])));
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<8}", "Ave.");
        for (c, d) in self.columns.iter().zip(self.deltas()) {
            let cell = if c.regime == Regime::Baseline {
                show_tenths(tenths(c.average))
            } else {
                format!("{} {d}", show_tenths(tenths(c.average)))
            };
            let _ = write!(out, " {cell:>width$}");
        }
        out.push('\n');
        out
    }
}

fn pick_p(records: &[&CellRecord], regime: Regime) -> Option<f64> {
    let mut ps: Vec<f64> = records
        .iter()
        .filter(|r| r.regime == regime)
        .filter_map(|r| r.p)
        .collect();
    ps.sort_by(|a, b| a.partial_cmp(b).expect("finite p"));
    ps.dedup();
    if ps.contains(&REPORT_P) {
        return Some(REPORT_P);
    }
    ps.into_iter()
        .map(|p| {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| r.regime == regime && r.p == Some(p))
                .filter_map(|r| r.macro_f1)
                .collect();
            (p, mean_std(&vals).0)
        })
        .fold(None, |best: Option<(f64, f64)>, (p, m)| match best {
            Some((_, bm)) if bm >= m => best,
            _ => Some((p, m)),
        })
        .map(|(p, _)| p)
}

/// Mean and standard deviation of macro F1 per `(regime, p)`, in percent.
pub fn render_summary(records: &[CellRecord]) -> String {
    let mut groups: Vec<(Regime, Option<f64>, Vec<f64>, usize)> = Vec::new();
    for r in records {
        let i = match groups.iter().position(|g| g.0 == r.regime && g.1 == r.p) {
            Some(i) => i,
            None => {
                groups.push((r.regime, r.p, Vec::new(), 0));
                groups.len() - 1
            }
        };
        match r.macro_f1 {
            Some(f) => groups[i].2.push(f),
            None => groups[i].3 += 1,
        }
    }
    let mut out = format!("{:<12} {:>5} {:>8} {:>7} {:>5} {:>6}\n", "regime", "p", "macro F1", "std", "seeds", "failed");
    for (regime, p, vals, failed) in groups {
        let (m, s) = mean_std(&vals);
        let p = p.map(|p| format!("{p:.2}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<12} {:>5} {:>8} {:>7} {:>5} {:>6}",
            regime.to_string(),
            p,
            if vals.is_empty() { "-".into() } else { show_tenths(tenths(m)) },
            if vals.is_empty() { "-".into() } else { show_tenths(tenths(s)) },
            vals.len(),
            failed
        );
    }
    out
}
