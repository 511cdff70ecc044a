//! Run reports and their CSV forms.
//!
//! Three tables, each with a fixed column order:
//!
//! | file        | columns                                                   |
//! |-------------|-----------------------------------------------------------|
//! | curve       | step, stage, task, wer, method, policy, budget, seed      |
//! | matrix      | method, policy, budget, seed, task, after_stage, wer      |
//! | summary     | method, policy, budget, seed, averaged_wer, relative_reduction |
//!
//! `policy` is empty for methods without a memory and `relative_reduction`
//! is empty when no baseline was attached.

use std::cmp::Ordering;
use std::path::Path;

use super::metrics::relative_wer_reduction;
use super::train::CurvePoint;
use crate::error::{Error, Result};

pub const CURVE_COLUMNS: [&str; 8] = ["step", "stage", "task", "wer", "method", "policy", "budget", "seed"];
pub const MATRIX_COLUMNS: [&str; 7] = ["method", "policy", "budget", "seed", "task", "after_stage", "wer"];
pub const SUMMARY_COLUMNS: [&str; 6] = ["method", "policy", "budget", "seed", "averaged_wer", "relative_reduction"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// `finetune`, `ewc`, …, or `multitask`.
    pub method: String,
    pub policy: Option<String>,
    /// Memory capacity in frames (0 without a memory).
    pub budget_frames: usize,
    pub seed: u64,
    pub curve: Vec<CurvePoint>,
    /// `final_matrix[task][after_stage]`.
    pub final_matrix: Vec<Vec<f64>>,
    pub averaged_wer: f64,
    pub relative_reduction_vs_baseline: Option<f64>,
    /// Global step at the end of each stage.
    pub stage_end_steps: Vec<u64>,
}

impl RunReport {
    /// Builds a report; `averaged_wer` is the mean over tasks of the last
    /// column of `final_matrix`.
    pub fn new(
        method: impl Into<String>,
        policy: Option<String>,
        budget_frames: usize,
        seed: u64,
        curve: Vec<CurvePoint>,
        final_matrix: Vec<Vec<f64>>,
        stage_end_steps: Vec<u64>,
    ) -> Result<Self> {
        if final_matrix.is_empty() || final_matrix.iter().any(Vec::is_empty) {
            return Err(Error::Empty("final WER matrix"));
        }
        let last: Vec<f64> = final_matrix.iter().map(|row| *row.last().expect("nonempty row")).collect();
        let averaged_wer = last.iter().sum::<f64>() / last.len() as f64;
        Ok(Self {
            method: method.into(),
            policy,
            budget_frames,
            seed,
            curve,
            final_matrix,
            averaged_wer,
            relative_reduction_vs_baseline: None,
            stage_end_steps,
        })
    }

    pub fn final_wer(&self, task: usize) -> Option<f64> {
        self.final_matrix.get(task).and_then(|row| row.last().copied())
    }

    /// Attaches the relative averaged-WER reduction against `baseline`.
    pub fn compare_to(&mut self, baseline: &RunReport) -> Result<f64> {
        if baseline.final_matrix.len() != self.final_matrix.len() {
            return Err(Error::InvalidArgument("reports cover different task sequences".into()));
        }
        let r = relative_wer_reduction(baseline.averaged_wer, self.averaged_wer)?;
        self.relative_reduction_vs_baseline = Some(r);
        Ok(r)
    }

    /// Curve of one task as `(step, wer)`.
    pub fn task_curve(&self, task: usize) -> Vec<(u64, f64)> {
        self.curve.iter().filter(|p| p.task == task).map(|p| (p.step, p.wer)).collect()
    }

    /// Position of `step` with every stage stretched to unit width, so stage
    /// `k` spans `[k, k + 1]`.
    pub fn normalized_position(&self, step: u64) -> f64 {
        let mut start = 0;
        for (k, &end) in self.stage_end_steps.iter().enumerate() {
            if step <= end {
                let width = (end - start).max(1) as f64;
                return k as f64 + (step - start) as f64 / width;
            }
            start = end;
        }
        self.stage_end_steps.len() as f64
    }

    /// Standard deviation of `task`'s WER over the second half of the last
    /// stage; `None` with fewer than two points there.
    pub fn oscillation(&self, task: usize) -> Option<f64> {
        let k = self.stage_end_steps.len().checked_sub(1)?;
        let end = self.stage_end_steps[k];
        let start = if k == 0 { 0 } else { self.stage_end_steps[k - 1] };
        let mid = start + (end - start) / 2;
        let xs: Vec<f64> = self
            .curve
            .iter()
            .filter(|p| p.task == task && p.stage == k && p.step > mid && p.step <= end)
            .map(|p| p.wer)
            .collect();
        if xs.len() < 2 {
            return None;
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        Some((xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt())
    }

    fn key(&self) -> [String; 4] {
        [
            self.method.clone(),
            self.policy.clone().unwrap_or_default(),
            self.budget_frames.to_string(),
            self.seed.to_string(),
        ]
    }
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

/// Learning curves of `reports`.
pub fn curve_csv(reports: &[RunReport]) -> Result<String> {
    let mut w = writer();
    w.write_record(CURVE_COLUMNS)?;
    for r in reports {
        let [method, policy, budget, seed] = r.key();
        for p in &r.curve {
            w.write_record([
                p.step.to_string(),
                p.stage.to_string(),
                p.task.to_string(),
                p.wer.to_string(),
                method.clone(),
                policy.clone(),
                budget.clone(),
                seed.clone(),
            ])?;
        }
    }
    finish(w)
}

pub fn matrix_csv(reports: &[RunReport]) -> Result<String> {
    let mut w = writer();
    w.write_record(MATRIX_COLUMNS)?;
    for r in reports {
        for (task, row) in r.final_matrix.iter().enumerate() {
            for (stage, wer) in row.iter().enumerate() {
                let mut rec = r.key().to_vec();
                rec.extend([task.to_string(), stage.to_string(), wer.to_string()]);
                w.write_record(rec)?;
            }
        }
    }
    finish(w)
}

pub fn summary_csv(reports: &[RunReport]) -> Result<String> {
    let mut w = writer();
    w.write_record(SUMMARY_COLUMNS)?;
    for r in reports {
        let mut rec = r.key().to_vec();
        rec.push(r.averaged_wer.to_string());
        rec.push(r.relative_reduction_vs_baseline.map(|v| v.to_string()).unwrap_or_default());
        w.write_record(rec)?;
    }
    finish(w)
}

/// Writes `curve.csv`, `matrix.csv` and `summary.csv` into `dir`.
pub fn write_reports(dir: impl AsRef<Path>, reports: &[RunReport]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("curve.csv"), curve_csv(reports)?)?;
    std::fs::write(dir.join("matrix.csv"), matrix_csv(reports)?)?;
    std::fs::write(dir.join("summary.csv"), summary_csv(reports)?)?;
    Ok(())
}

fn field_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

/// Merges CSV tables sharing one header. Rows are sorted field by field
/// (numerically where both fields parse) and exact duplicates dropped, so
/// the result does not depend on input order or grouping.
pub fn merge_csv<S: AsRef<str>>(tables: &[S]) -> Result<String> {
    let mut header: Option<csv::StringRecord> = None;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for table in tables {
        let mut r = csv::Reader::from_reader(table.as_ref().as_bytes());
        let h = r.headers()?.clone();
        match &header {
            None => header = Some(h),
            Some(prev) if *prev != h => {
                return Err(Error::InvalidArgument(format!(
                    "cannot merge tables with headers {prev:?} and {h:?}"
                )))
            }
            _ => {}
        }
        for rec in r.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
    }
    let header = header.ok_or(Error::Empty("tables to merge"))?;
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| field_cmp(x, y))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| a.len().cmp(&b.len()))
    });
    rows.dedup();
    let mut w = writer();
    w.write_record(&header)?;
    for row in rows {
        w.write_record(row)?;
    }
    finish(w)
}

/// Median of a non-empty sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Median averaged WER per (method, policy, budget) over seeds, from a
/// summary table, with the relative reduction against the `finetune` group.
pub fn aggregate_summary(summary: &str) -> Result<String> {
    let mut r = csv::Reader::from_reader(summary.as_bytes());
    if r.headers()?.iter().ne(SUMMARY_COLUMNS) {
        return Err(Error::InvalidArgument("not a summary table".into()));
    }
    let mut groups: std::collections::BTreeMap<(String, String, u64), Vec<f64>> = Default::default();
    for rec in r.records() {
        let rec = rec?;
        let budget = rec[2].parse().map_err(|_| Error::InvalidArgument(format!("bad budget `{}`", &rec[2])))?;
        let wer = rec[4].parse().map_err(|_| Error::InvalidArgument(format!("bad WER `{}`", &rec[4])))?;
        groups.entry((rec[0].to_string(), rec[1].to_string(), budget)).or_default().push(wer);
    }
    let baseline = groups
        .iter()
        .find(|((m, _, _), _)| m == "finetune")
        .and_then(|(_, v)| median(v));
    let mut w = writer();
    w.write_record(["method", "policy", "budget", "runs", "median_averaged_wer", "relative_reduction"])?;
    for ((method, policy, budget), v) in &groups {
        let med = median(v).expect("nonempty group");
        let rel = baseline
            .and_then(|b| relative_wer_reduction(b, med).ok())
            .map(|x| x.to_string())
            .unwrap_or_default();
        w.write_record([
            method.clone(),
            policy.clone(),
            budget.to_string(),
            v.len().to_string(),
            med.to_string(),
            rel,
        ])?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn report(method: &str, seed: u64, matrix: Vec<Vec<f64>>) -> RunReport {
        let curve = vec![
            CurvePoint { step: 2, stage: 0, task: 0, wer: 0.5 },
            CurvePoint { step: 4, stage: 1, task: 0, wer: 0.7 },
            CurvePoint { step: 4, stage: 1, task: 1, wer: 0.4 },
        ];
        RunReport::new(method, None, 0, seed, curve, matrix, vec![2, 4]).unwrap()
    }

    #[test]
    fn averaged_wer_is_mean_of_last_column() {
        let r = report("finetune", 0, vec![vec![0.2, 0.5], vec![0.9, 0.3]]);
        assert!((r.averaged_wer - 0.4).abs() < 1e-12);
        assert_eq!(r.final_wer(0), Some(0.5));
    }

    #[test]
    fn compare_to_baseline() {
        let base = report("finetune", 0, vec![vec![0.4], vec![0.4]]);
        let mut cand = report("gem", 0, vec![vec![0.3], vec![0.3]]);
        assert!((cand.compare_to(&base).unwrap() - 0.25).abs() < 1e-12);
        let mut same = base.clone();
        assert_eq!(same.compare_to(&base).unwrap(), 0.0);
        let mut short = report("gem", 0, vec![vec![0.3]]);
        assert!(short.compare_to(&base).is_err());
    }

    #[test]
    fn csv_columns_are_fixed() {
        let r = report("finetune", 7, vec![vec![0.2, 0.5], vec![0.9, 0.3]]);
        let curve = curve_csv(std::slice::from_ref(&r)).unwrap();
        let mut lines = curve.lines();
        assert_eq!(lines.next().unwrap(), "step,stage,task,wer,method,policy,budget,seed");
        assert_eq!(lines.next().unwrap(), "2,0,0,0.5,finetune,,0,7");
        let matrix = matrix_csv(std::slice::from_ref(&r)).unwrap();
        assert_eq!(matrix.lines().count(), 5);
        let summary = summary_csv(&[r]).unwrap();
        assert_eq!(summary.lines().nth(1).unwrap(), "finetune,,0,7,0.4,");
    }

    #[test]
    fn normalized_positions_and_oscillation() {
        let mut r = report("finetune", 0, vec![vec![0.1]]);
        r.stage_end_steps = vec![10, 30];
        assert_eq!(r.normalized_position(5), 0.5);
        assert_eq!(r.normalized_position(20), 1.5);
        assert_eq!(r.normalized_position(30), 2.0);
        r.curve = (21..=30)
            .map(|s| CurvePoint { step: s, stage: 1, task: 0, wer: if s % 2 == 0 { 0.2 } else { 0.4 } })
            .collect();
        assert!((r.oscillation(0).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(r.oscillation(3), None);
    }

    #[test]
    fn merge_rejects_mismatched_headers() {
        assert!(merge_csv(&["a,b\n1,2\n", "a,c\n1,2\n"]).is_err());
    }

    #[test]
    fn aggregate_takes_medians() {
        let runs: Vec<RunReport> = [0.5, 0.3, 0.4]
            .iter()
            .enumerate()
            .map(|(s, &w)| report("finetune", s as u64, vec![vec![w]]))
            .chain([report("gem", 0, vec![vec![0.3]])])
            .collect();
        let table = aggregate_summary(&summary_csv(&runs).unwrap()).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[1], "finetune,,0,3,0.4,0");
        assert!(lines[2].starts_with("gem,,0,1,0.3,0.2"));
    }

    proptest! {
        #[test]
        fn merge_is_order_independent_and_associative(
            rows in prop::collection::vec((0u32..20, 0u32..3, 0.0f64..1.0), 0..12),
            split1 in 0usize..12, split2 in 0usize..12,
        ) {
            let table = |rs: &[(u32, u32, f64)]| {
                let mut s = String::from("step,task,wer\n");
                for (a, b, c) in rs {
                    s.push_str(&format!("{a},{b},{c}\n"));
                }
                s
            };
            let (i, j) = (split1.min(rows.len()), split2.min(rows.len()));
            let (i, j) = (i.min(j), i.max(j));
            let (a, b, c) = (table(&rows[..i]), table(&rows[i..j]), table(&rows[j..]));
            let left = merge_csv(&[merge_csv(&[&a, &b]).unwrap(), c.clone()]).unwrap();
            let right = merge_csv(&[a.clone(), merge_csv(&[&b, &c]).unwrap()]).unwrap();
            let swapped = merge_csv(&[&c, &a, &b]).unwrap();
            prop_assert_eq!(&left, &right);
            prop_assert_eq!(&left, &swapped);
        }
    }
}
