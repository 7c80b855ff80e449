//! CSV, summary table and plot series for suite results.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{BenchMode, BenchResult, Workload};

pub const CSV_HEADER: &str = "workload,iterations,width,workload_size,seed,mode,status,cycles,committed_instructions,overhead_ratio,ideal_paths,ratio_vs_ideal";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// One row per result, in the given order.
pub fn to_csv(results: &[BenchResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        let s = &r.spec;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            s.workload,
            s.iterations,
            s.width,
            s.workload_size,
            s.seed,
            r.mode,
            r.status,
            r.cycles,
            r.committed_instructions,
            opt(r.overhead_ratio),
            r.ideal_paths,
            opt(r.ratio_vs_ideal)
        );
    }
    out
}

fn grouped(results: &[BenchResult]) -> BTreeMap<(Workload, usize), BTreeMap<BenchMode, &BenchResult>> {
    let mut groups: BTreeMap<(Workload, usize), BTreeMap<BenchMode, &BenchResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.spec.workload, r.spec.width)).or_default().insert(r.mode, r);
    }
    groups
}

/// Overhead per (workload, W) with each mode's ratio to its ideal path
/// count.
pub fn summary_table(results: &[BenchResult]) -> String {
    let mut out = format!(
        "{:<10} {:>3} {:>12} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "workload", "W", "base_cycles", "sempe", "s/ideal", "cte", "c/ideal", "legacy"
    );
    let cell = |m: Option<&&BenchResult>, f: fn(&BenchResult) -> Option<f64>| match m {
        Some(r) if !r.status.is_ok() => {
            if matches!(r.status, super::Status::Rejected(_)) {
                "rejected".to_string()
            } else {
                "trap".to_string()
            }
        }
        Some(r) => f(r).map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into()),
        None => "-".into(),
    };
    for ((w, width), modes) in grouped(results) {
        let base = modes.get(&BenchMode::Baseline).map(|r| r.cycles.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<10} {:>3} {:>12} {:>8} {:>8} {:>8} {:>8} {:>8}",
            w.as_str(),
            width,
            base,
            cell(modes.get(&BenchMode::Sempe), |r| r.overhead_ratio),
            cell(modes.get(&BenchMode::Sempe), |r| r.ratio_vs_ideal),
            cell(modes.get(&BenchMode::Cte), |r| r.overhead_ratio),
            cell(modes.get(&BenchMode::Cte), |r| r.ratio_vs_ideal),
            cell(modes.get(&BenchMode::Legacy), |r| r.overhead_ratio),
        );
    }
    out
}

/// `(W, ratio)` series per workload and mode, blank-line separated, for
/// external plotting.
pub fn plot_data(results: &[BenchResult]) -> String {
    let mut series: BTreeMap<(Workload, BenchMode), Vec<(usize, f64)>> = BTreeMap::new();
    for r in results {
        if let Some(ratio) = r.overhead_ratio {
            series.entry((r.spec.workload, r.mode)).or_default().push((r.spec.width, ratio));
        }
    }
    let mut out = String::new();
    for ((w, m), mut points) in series {
        points.sort_by_key(|p| p.0);
        let _ = writeln!(out, "# {w} {m}");
        for (width, ratio) in points {
            let _ = writeln!(out, "{width} {ratio:.4}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::{run_suite, BenchSpec};
    use super::*;
    use crate::machine::MachineConfig;

    #[test]
    fn csv_has_one_row_per_cell() {
        let specs: Vec<BenchSpec> = Workload::ALL
            .iter()
            .map(|&w| BenchSpec { iterations: 1, workload_size: 4, ..BenchSpec::new(w, 2, 1) })
            .collect();
        let results = run_suite(&specs, &BenchMode::ALL, &MachineConfig::default()).unwrap();
        let csv = to_csv(&results);
        assert_eq!(csv.lines().count(), 1 + 16);
        assert!(csv.lines().all(|l| l.split(',').count() == 12));
        assert!(csv.contains("quicksort,1,2,4,1,cte,rejected:secret_loop"));
        let table = summary_table(&results);
        assert_eq!(table.lines().count(), 5);
        assert!(table.contains("rejected"));
        assert!(plot_data(&results).contains("# fibonacci sempe\n2 "));
    }
}
