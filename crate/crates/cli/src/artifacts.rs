use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mixclus_core::metrics::DistanceMatrix;
use mixclus_core::nalgebra::DMatrix;
use mixclus_core::trainer::TraceRow;

use crate::CliError;

/// Fixed 17-significant-digit rendering used in every CSV.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

pub fn labels_csv(labels: &[usize]) -> String {
    let mut s = String::from("label\n");
    for l in labels {
        writeln!(s, "{l}").unwrap();
    }
    s
}

/// Matrix with columns named `{prefix}0`, `{prefix}1`, ...
pub fn matrix_csv(m: &DMatrix<f64>, prefix: &str) -> String {
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("{prefix}{j}")).collect();
    let mut s = header.join(",");
    s.push('\n');
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&x| fmt_float(x)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn distance_csv(d: &DistanceMatrix) -> String {
    let header: Vec<String> = (0..d.n).map(|j| format!("d{j}")).collect();
    let mut s = header.join(",");
    s.push('\n');
    for i in 0..d.n {
        let row: Vec<String> = d.row(i).iter().map(|&x| fmt_float(x)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Iteration trace without wall-clock time, so equal runs give equal bytes.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("iteration,segment,loglik,silhouette,mc_draws,n_clusters\n");
    for r in trace {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.iteration,
            r.segment,
            fmt_float(r.loglik),
            r.silhouette.map(fmt_float).unwrap_or_default(),
            r.mc_draws,
            r.n_clusters
        )
        .unwrap();
    }
    s
}

/// Truth labels restricted to the observations kept after dropping rows with
/// missing cells. A file may list either the kept rows or every source row.
pub fn align_truth(
    truth: Vec<String>,
    n: usize,
    source_rows: &[usize],
) -> Result<Vec<String>, CliError> {
    if truth.len() == n {
        return Ok(truth);
    }
    match source_rows.last() {
        Some(&last) if truth.len() > last => {
            Ok(source_rows.iter().map(|&r| truth[r].clone()).collect())
        }
        _ => Err(CliError::Config(format!(
            "label file has {} rows, the data has {n} usable rows",
            truth.len()
        ))),
    }
}

/// Integer codes of string labels, numbered in sorted order.
pub fn encode_labels(labels: &[String]) -> Vec<usize> {
    let mut names: Vec<&String> = labels.iter().collect();
    names.sort();
    names.dedup();
    labels
        .iter()
        .map(|l| names.binary_search(&l).unwrap())
        .collect()
}
