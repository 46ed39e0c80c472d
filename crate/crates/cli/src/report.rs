//! Plain-text and tab-separated iteration reports. Nothing here draws plots;
//! the CSV exports are meant for external plotting tools.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use ntl_core::session::{GuardStatus, IterationRecord, Session};
use ntl_core::shap::{write_importance_csv, write_points_csv};

use crate::error::CliError;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn status(s: GuardStatus) -> &'static str {
    match s {
        GuardStatus::Baseline => "baseline",
        GuardStatus::Accept => "accept",
        GuardStatus::Reject => "reject",
    }
}

fn actions(r: &IterationRecord) -> String {
    r.actions.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub fn metrics_tsv(records: &[IterationRecord]) -> String {
    let mut out = String::from(
        "iteration\tguard\tndcg_drop\treverted\tndcg_validation\tenergy_at_k_kwh\tk\tprecision_at_k\trmse_train_kwh\tmax_abs_phi_kwh\tmax_abs_phi_customer\tmax_abs_phi_feature\tactions\n",
    );
    for r in records {
        let m = &r.metrics;
        let g = &r.global_summary;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.index,
            status(r.guard.status),
            opt(r.guard.ndcg_drop),
            r.reverted,
            opt(m.ndcg_validation),
            m.energy_at_k_test,
            m.k,
            m.precision_at_k_test,
            m.rmse_train,
            g.max_abs_phi,
            g.max_abs_phi_customer,
            g.max_abs_phi_feature,
            actions(r),
        );
    }
    out
}

/// Long format: one row per (iteration, feature).
pub fn importance_tsv(records: &[IterationRecord]) -> String {
    let mut out = String::from("iteration\trank\tfeature\tmean_abs_phi_kwh\tshare\n");
    for r in records {
        let total: f64 = r.global_summary.importance.iter().map(|i| i.mean_abs_phi).sum();
        for (rank, imp) in r.global_summary.importance.iter().enumerate() {
            let share = if total > 0.0 { imp.mean_abs_phi / total } else { 0.0 };
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", r.index, rank + 1, imp.feature, imp.mean_abs_phi, share);
        }
    }
    out
}

pub fn report_text(source: &str, provenance: &str, records: &[IterationRecord]) -> String {
    let mut out = String::new();
    let accepted = records.iter().filter(|r| !r.reverted).count();
    let _ = writeln!(out, "NTL refinement report");
    let _ = writeln!(out, "source:     {source}");
    let _ = writeln!(out, "dataset:    {provenance}");
    let _ = writeln!(out, "iterations: {} ({accepted} kept, {} reverted)\n", records.len(), records.len() - accepted);

    let k = records.first().map_or(0, |r| r.metrics.k);
    let _ = writeln!(
        out,
        "{:>4}  {:<8}  {:>8}  {:>8}  {:>14}  {:>8}  {:>12}  {:>12}  actions",
        "iter",
        "guard",
        "ndcg_val",
        "drop",
        format!("energy@{k}"),
        format!("prec@{k}"),
        "rmse_train",
        "max|phi|"
    );
    let fmt4 = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for r in records {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{:>4}  {:<8}  {:>8}  {:>8}  {:>14.1}  {:>8.3}  {:>12.1}  {:>12.1}  {}",
            r.index,
            status(r.guard.status),
            fmt4(m.ndcg_validation),
            fmt4(r.guard.ndcg_drop),
            m.energy_at_k_test,
            m.precision_at_k_test,
            m.rmse_train,
            r.global_summary.max_abs_phi,
            actions(r),
        );
    }
    if let (Some(first), Some(last)) = (records.first(), records.last()) {
        let (e0, e1) = (first.metrics.energy_at_k_test, last.metrics.energy_at_k_test);
        let change = if e0 > 0.0 { format!(" ({:+.1}%)", 100.0 * (e1 - e0) / e0) } else { String::new() };
        let _ = writeln!(out, "\nenergy@{k} (kWh, test): baseline {e0:.1} -> final {e1:.1}{change}");
    }

    let _ = writeln!(out, "\nAdvisor findings");
    for r in records {
        let a = &r.advisor;
        if a.is_empty() {
            let _ = writeln!(out, "  iter {}: none", r.index);
            continue;
        }
        for o in &a.outliers {
            let _ = writeln!(
                out,
                "  iter {}: outlier label {} = {:.1} kWh ({:.2}x the next largest, robust z {:.1})",
                r.index, o.customer_id, o.label_kwh, o.ratio_to_second_max, o.robust_z
            );
        }
        for l in &a.low_importance {
            let _ = writeln!(
                out,
                "  iter {}: low importance {} ({:.2}% of total mean |phi|)",
                r.index,
                l.feature,
                100.0 * l.importance_share
            );
        }
        for p in &a.correlated_pairs {
            let _ = writeln!(
                out,
                "  iter {}: correlated pair {} / {} (r {:.3}, attribution agreement {:.3})",
                r.index, p.feature_a, p.feature_b, p.pearson_r, p.phi_rank_agreement
            );
        }
    }

    if let Some(last) = records.iter().rev().find(|r| !r.reverted) {
        let total: f64 = last.global_summary.importance.iter().map(|i| i.mean_abs_phi).sum();
        let _ = writeln!(out, "\nFeature importance, iteration {} (mean |phi|, kWh)", last.index);
        for (rank, imp) in last.global_summary.importance.iter().enumerate() {
            let share = if total > 0.0 { 100.0 * imp.mean_abs_phi / total } else { 0.0 };
            let _ = writeln!(out, "  {:>3}  {:<26} {:>12.2}  {:>6.2}%", rank + 1, imp.feature, imp.mean_abs_phi, share);
        }
    }
    out
}

/// Writes `report.txt`, `metrics.tsv` and `importance.tsv`.
pub fn write_tables(out: &Path, source: &str, provenance: &str, records: &[IterationRecord]) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::output(out, e))?;
    for (name, body) in [
        ("report.txt", report_text(source, provenance, records)),
        ("metrics.tsv", metrics_tsv(records)),
        ("importance.tsv", importance_tsv(records)),
    ] {
        let path = out.join(name);
        fs::write(&path, body).map_err(|e| CliError::output(&path, e))?;
    }
    Ok(())
}

/// Per iteration: the top-k test customers' attributions as beeswarm points,
/// and the global importance table.
pub fn write_shap_exports(session: &Session, out: &Path) -> Result<(), CliError> {
    let dir = out.join("shap");
    fs::create_dir_all(&dir).map_err(|e| CliError::output(&dir, e))?;
    for r in session.iterations() {
        let (global, top_k) = session.summaries(r.index)?;
        let points = dir.join(format!("iter-{:03}-topk-points.csv", r.index));
        let file = File::create(&points).map_err(|e| CliError::output(&points, e))?;
        write_points_csv(&top_k, BufWriter::new(file)).map_err(|e| CliError::output(&points, e))?;
        let imp = dir.join(format!("iter-{:03}-importance.csv", r.index));
        let file = File::create(&imp).map_err(|e| CliError::output(&imp, e))?;
        write_importance_csv(&global, BufWriter::new(file)).map_err(|e| CliError::output(&imp, e))?;
    }
    Ok(())
}
