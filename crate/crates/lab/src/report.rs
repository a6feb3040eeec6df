//! `report`: accuracy tables, method means and signed-rank comparisons built
//! from results CSV files alone.
//!
//! Files written to the report directory:
//!
//! - `accuracy__<task>.csv`: final target accuracy per run index and method,
//!   closed by an `average` row.
//! - `summary.csv`: `method,task,runs,average,best_per_task`.
//! - `method_mean.csv`: `method,tasks,mean` over the method's task averages.
//! - `comparisons.csv`: `method_a,method_b,task,n,t_minus,z,p_exact,p_approx,significant_at_0.025`.
//!   The test asks whether `method_a` is greater (or less) than `method_b`.
//!   Cells with too few usable pairs get a row with `n` and `false` only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use uda_core::eval::{method_mean, wilcoxon_signed_rank, AccuracyTable, Alternative, WilcoxonResult};
use uda_core::Error;

use crate::results::{ResultRow, Split};

pub const ALPHA: f64 = 0.025;

const METHOD_ORDER: [&str; 5] = ["source_only", "dann", "mstn", "fixbi", "dann_fixbi"];

fn method_key(m: &str) -> (usize, String) {
    (METHOD_ORDER.iter().position(|&k| k == m).unwrap_or(METHOD_ORDER.len()), m.to_string())
}

/// Final target accuracy per `task → method → run_index`.
pub type Finals = BTreeMap<String, BTreeMap<String, BTreeMap<usize, f64>>>;

pub fn final_accuracies(rows: &[ResultRow]) -> Finals {
    let mut last: BTreeMap<(String, String, usize), (usize, f64)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.split == Split::Target) {
        let key = (r.task.clone(), r.method.clone(), r.run_index);
        let e = last.entry(key).or_insert((r.epoch, r.accuracy));
        if r.epoch >= e.0 {
            *e = (r.epoch, r.accuracy);
        }
    }
    let mut out = Finals::new();
    for ((task, method, idx), (_, acc)) in last {
        out.entry(task).or_default().entry(method).or_default().insert(idx, acc);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub method_a: String,
    pub method_b: String,
    pub task: String,
    /// Paired runs before zero differences are dropped.
    pub pairs: usize,
    pub result: Option<WilcoxonResult>,
    pub warning: Option<String>,
}

impl Comparison {
    pub fn significant(&self) -> bool {
        self.result.as_ref().is_some_and(|r| r.p_exact.unwrap_or(r.p_approx) <= ALPHA)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub tables: Vec<AccuracyTable>,
    /// `(method, task count, mean of task averages)`
    pub method_means: Vec<(String, usize, f64)>,
    pub comparisons: Vec<Comparison>,
}

impl Report {
    pub fn best_per_task(&self, task: &str) -> Option<f64> {
        self.tables
            .iter()
            .filter(|t| t.task == task)
            .map(|t| t.average)
            .max_by(f64::total_cmp)
    }
}

pub fn parse_pair(spec: &str) -> Result<(String, String)> {
    match spec.split_once(':') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a.to_string(), b.to_string())),
        _ => bail!("comparison `{spec}` is not of the form method_a:method_b"),
    }
}

pub fn build(rows: &[ResultRow], compare: &[(String, String)], alt: Alternative) -> Result<Report> {
    let finals = final_accuracies(rows);
    let mut tables = Vec::new();
    for (task, methods) in &finals {
        let mut names: Vec<&String> = methods.keys().collect();
        names.sort_by_key(|m| method_key(m));
        for m in names {
            let runs: Vec<f64> = methods[m].values().copied().collect();
            tables.push(AccuracyTable::new(m.clone(), task.clone(), runs)?);
        }
    }

    let mut by_method: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    for t in &tables {
        by_method.entry(method_key(&t.method)).or_default().push(t.average);
    }
    let method_means = by_method
        .into_iter()
        .map(|((_, m), avgs)| Ok((m, avgs.len(), method_mean(&avgs)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut comparisons = Vec::new();
    for (a, b) in compare {
        for (task, methods) in &finals {
            let (Some(ra), Some(rb)) = (methods.get(a), methods.get(b)) else {
                continue;
            };
            let common: Vec<usize> = ra.keys().filter(|k| rb.contains_key(k)).copied().collect();
            let xs: Vec<f64> = common.iter().map(|k| ra[k]).collect();
            let ys: Vec<f64> = common.iter().map(|k| rb[k]).collect();
            let (result, warning) = match wilcoxon_signed_rank(&xs, &ys, alt) {
                Ok(r) => (Some(r), None),
                Err(e @ (Error::Validation { .. } | Error::Degenerate(_))) => (None, Some(e.to_string())),
                Err(e) => return Err(anyhow!(e)),
            };
            comparisons.push(Comparison {
                method_a: a.clone(),
                method_b: b.clone(),
                task: task.clone(),
                pairs: common.len(),
                result,
                warning,
            });
        }
    }
    Ok(Report {
        tables,
        method_means,
        comparisons,
    })
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write(report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let tasks: BTreeSet<&str> = report.tables.iter().map(|t| t.task.as_str()).collect();
    for task in &tasks {
        let cols: Vec<&AccuracyTable> = report.tables.iter().filter(|t| t.task == *task).collect();
        let mut s = String::from("run_index");
        for c in &cols {
            write!(s, ",{}", c.method)?;
        }
        s.push('\n');
        let depth = cols.iter().map(|c| c.runs.len()).max().unwrap_or(0);
        for i in 0..depth {
            write!(s, "{i}")?;
            for c in &cols {
                match c.runs.get(i) {
                    Some(v) => write!(s, ",{v}")?,
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s.push_str("average");
        for c in &cols {
            write!(s, ",{:.2}", c.average)?;
        }
        s.push('\n');
        write_file(dir, &format!("accuracy__{task}.csv"), &s)?;
    }

    let mut s = String::from("method,task,runs,average,best_per_task\n");
    for t in &report.tables {
        let best = report.best_per_task(&t.task) == Some(t.average);
        writeln!(s, "{},{},{},{:.2},{best}", t.method, t.task, t.runs.len(), t.average)?;
    }
    write_file(dir, "summary.csv", &s)?;

    let mut s = String::from("method,tasks,mean\n");
    for (m, n, mean) in &report.method_means {
        writeln!(s, "{m},{n},{mean:.2}")?;
    }
    write_file(dir, "method_mean.csv", &s)?;

    let mut s = String::from("method_a,method_b,task,n,t_minus,z,p_exact,p_approx,significant_at_0.025\n");
    for c in &report.comparisons {
        match &c.result {
            Some(r) => {
                let exact = r.p_exact.map(|p| p.to_string()).unwrap_or_default();
                writeln!(
                    s,
                    "{},{},{},{},{},{},{exact},{},{}",
                    c.method_a,
                    c.method_b,
                    c.task,
                    r.n,
                    r.t_minus,
                    r.z,
                    r.p_approx,
                    c.significant()
                )?;
            }
            None => writeln!(s, "{},{},{},{},,,,,false", c.method_a, c.method_b, c.task, c.pairs)?,
        }
    }
    write_file(dir, "comparisons.csv", &s)?;
    Ok(())
}
