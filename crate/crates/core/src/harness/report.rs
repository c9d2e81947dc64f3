use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::io::fmt_f64;
use super::sweep::SweepResultRow;
use crate::error::{invalid, Result};
use crate::metrics::paired_t_test_one_sided;

/// Aggregate of one estimator in one cell: mean error, p-value against the baseline and rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dgp_kind: String,
    pub gamma_r: f64,
    pub gamma_rs: f64,
    pub gamma_tau: f64,
    pub estimator: String,
    pub n_seeds: usize,
    pub mean_cate_mse: f64,
    pub sd_cate_mse: f64,
    pub mean_cate_rmse: f64,
    /// One-sided p-value that the baseline has lower error; NaN with fewer than three paired seeds.
    pub p_value: f64,
    /// 1 is the lowest mean error; ties share a rank.
    pub rank: usize,
}

type CellKey = (String, u64, u64, u64);

fn cell_key(r: &SweepResultRow) -> CellKey {
    (r.dgp_kind.clone(), r.gamma_r.to_bits(), r.gamma_rs.to_bits(), r.gamma_tau.to_bits())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Cells keep first-appearance order, and estimators keep their order within each cell.
pub fn generate_report(rows: &[SweepResultRow], baseline: &str) -> Result<Vec<ReportRow>> {
    if rows.is_empty() {
        return invalid("no result rows to report");
    }
    let mut cells: Vec<(CellKey, Vec<&SweepResultRow>)> = Vec::new();
    for r in rows {
        let k = cell_key(r);
        match cells.iter_mut().find(|(c, _)| *c == k) {
            Some((_, v)) => v.push(r),
            None => cells.push((k, vec![r])),
        }
    }
    let mut out = Vec::new();
    for (_, cell_rows) in &cells {
        let mut estimators: Vec<&str> = Vec::new();
        for r in cell_rows {
            if !estimators.contains(&r.estimator.as_str()) {
                estimators.push(&r.estimator);
            }
        }
        let per_seed = |est: &str| -> BTreeMap<u64, (f64, f64)> {
            cell_rows
                .iter()
                .filter(|r| r.estimator == est && r.is_ok() && r.cate_mse.is_finite())
                .map(|r| (r.seed, (r.cate_mse, r.cate_rmse)))
                .collect()
        };
        let base = per_seed(baseline);
        let first = cell_rows[0];
        let mut cell_out: Vec<ReportRow> = estimators
            .iter()
            .map(|&est| {
                let errs = per_seed(est);
                let vals: Vec<f64> = errs.values().map(|e| e.0).collect();
                let rmse: Vec<f64> = errs.values().map(|e| e.1).collect();
                let paired: Vec<(f64, f64)> = base
                    .iter()
                    .filter_map(|(s, b)| errs.get(s).map(|e| (b.0, e.0)))
                    .collect();
                let a = DVector::from_iterator(paired.len(), paired.iter().map(|p| p.0));
                let b = DVector::from_iterator(paired.len(), paired.iter().map(|p| p.1));
                let p_value = paired_t_test_one_sided(&a, &b).unwrap_or(f64::NAN);
                ReportRow {
                    dgp_kind: first.dgp_kind.clone(),
                    gamma_r: first.gamma_r,
                    gamma_rs: first.gamma_rs,
                    gamma_tau: first.gamma_tau,
                    estimator: est.to_string(),
                    n_seeds: vals.len(),
                    mean_cate_mse: mean(&vals),
                    sd_cate_mse: sample_sd(&vals),
                    mean_cate_rmse: mean(&rmse),
                    p_value,
                    rank: 0,
                }
            })
            .collect();
        let means: Vec<f64> = cell_out.iter().map(|r| r.mean_cate_mse).collect();
        for (i, row) in cell_out.iter_mut().enumerate() {
            let m = means[i];
            row.rank = if m.is_nan() {
                means.len()
            } else {
                1 + means.iter().filter(|&&o| o < m).count()
            };
        }
        out.append(&mut cell_out);
    }
    Ok(out)
}

pub const REPORT_COLUMNS: [&str; 11] = [
    "dgp_kind",
    "gamma_r",
    "gamma_rs",
    "gamma_tau",
    "estimator",
    "n_seeds",
    "mean_cate_mse",
    "sd_cate_mse",
    "mean_cate_rmse",
    "p_value",
    "rank",
];

pub fn write_report_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(REPORT_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.dgp_kind.clone(),
            r.gamma_r.to_string(),
            r.gamma_rs.to_string(),
            r.gamma_tau.to_string(),
            r.estimator.clone(),
            r.n_seeds.to_string(),
            fmt_f64(r.mean_cate_mse),
            fmt_f64(r.sd_cate_mse),
            fmt_f64(r.mean_cate_rmse),
            fmt_f64(r.p_value),
            r.rank.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Table view: one line per cell, each estimator shown as `rmse (p-value)` with `*` on rank 1 and `+` on rank 2.
pub fn format_report_table(rows: &[ReportRow]) -> String {
    let mut estimators: Vec<&str> = Vec::new();
    for r in rows {
        if !estimators.contains(&r.estimator.as_str()) {
            estimators.push(&r.estimator);
        }
    }
    let mut s = format!("{:>6} {:>6} {:>6}", "g_R", "g_RS", "g_tau");
    for e in &estimators {
        s.push_str(&format!(" {e:>21}"));
    }
    s.push('\n');
    let mut i = 0;
    while i < rows.len() {
        let r = &rows[i];
        let same = |o: &ReportRow| {
            o.dgp_kind == r.dgp_kind && o.gamma_r == r.gamma_r && o.gamma_rs == r.gamma_rs && o.gamma_tau == r.gamma_tau
        };
        let cell: Vec<&ReportRow> = rows[i..].iter().take_while(|o| same(o)).collect();
        s.push_str(&format!("{:>6} {:>6} {:>6}", r.gamma_r, r.gamma_rs, r.gamma_tau));
        for e in &estimators {
            match cell.iter().find(|o| o.estimator == *e) {
                Some(o) => {
                    let flag = match o.rank {
                        1 => "*",
                        2 => "+",
                        _ => " ",
                    };
                    s.push_str(&format!(" {:>12.4} ({:>5.2}){flag}", o.mean_cate_rmse, o.p_value));
                }
                None => s.push_str(&format!(" {:>21}", "-")),
            }
        }
        s.push('\n');
        i += cell.len();
    }
    s
}
