//! Turns training and evaluation logs into CSV series and text tables.
//! Output depends only on the records passed in.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::Metric;
use crate::error::{MlrError, Result};
use crate::train::{EpochStats, StepStats};

/// Metrics of one evaluated run, with the representation that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<String>,
    pub metrics: BTreeMap<Metric, f64>,
}

/// One line of a JSON-lines log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum LogRecord {
    Step(StepStats),
    Epoch(EpochStats),
    Eval(EvalRecord),
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log record serializes")
    }
}

pub fn parse_log(text: &str) -> Result<Vec<LogRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| MlrError::format("log", format!("line {}: {e}", n + 1))))
        .collect()
}

pub fn load_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).map_err(MlrError::io(path))?;
    parse_log(&text).map_err(|e| MlrError::Invalid(format!("{}: {e}", path.display())))
}

/// A log's records together with the name it is reported under.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedLog {
    pub name: String,
    pub records: Vec<LogRecord>,
}

fn csv(header: Vec<String>, rows: Vec<Vec<String>>) -> String {
    let mut w = ::csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

fn fmt_metric(v: Option<&f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn layers_label(layers: &[usize]) -> String {
    layers.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

fn aligned(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(s, &w)| format!("{s:<w$}")).collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

/// Report files by name: `accuracy_vs_m.csv`, `accuracy_vs_layer.csv`,
/// `training_curves.csv` and `tables.txt`.
pub fn report(logs: &[NamedLog]) -> BTreeMap<String, String> {
    let evals: Vec<(&str, &EvalRecord)> = logs
        .iter()
        .flat_map(|l| {
            l.records.iter().filter_map(move |r| match r {
                LogRecord::Eval(e) => Some((l.name.as_str(), e)),
                _ => None,
            })
        })
        .collect();
    let metrics: BTreeSet<Metric> = evals.iter().flat_map(|(_, e)| e.metrics.keys().copied()).collect();
    let metric_cols: Vec<String> = metrics.iter().map(Metric::to_string).collect();
    let values = |e: &EvalRecord| -> Vec<String> { metrics.iter().map(|m| fmt_metric(e.metrics.get(m))).collect() };

    let mut by_m: Vec<(&str, usize, &str, &EvalRecord)> = evals
        .iter()
        .filter_map(|(_, e)| Some((e.strategy.as_deref().unwrap_or("?"), e.m?, e.label.as_str(), *e)))
        .collect();
    by_m.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    let header: Vec<String> = ["strategy", "m", "label"].iter().map(|s| s.to_string()).chain(metric_cols.clone()).collect();
    let rows: Vec<Vec<String>> = by_m
        .iter()
        .map(|(s, m, l, e)| [s.to_string(), m.to_string(), l.to_string()].into_iter().chain(values(e)).collect())
        .collect();
    let vs_m = csv(header, rows);

    let mut by_layer: Vec<(usize, Vec<usize>, &str, &EvalRecord)> = evals
        .iter()
        .filter(|(_, e)| e.strategy.as_deref() == Some("mlr"))
        .filter_map(|(_, e)| Some((e.layers.as_ref()?.len(), e.layers.clone()?, e.label.as_str(), *e)))
        .collect();
    by_layer.sort_by(|a, b| (a.0, &a.1, a.2).cmp(&(b.0, &b.1, b.2)));
    let header: Vec<String> = ["m", "layers", "first_layer", "label"]
        .iter()
        .map(|s| s.to_string())
        .chain(metric_cols.clone())
        .collect();
    let rows: Vec<Vec<String>> = by_layer
        .iter()
        .map(|(m, layers, l, e)| {
            [m.to_string(), layers_label(layers), layers[0].to_string(), l.to_string()]
                .into_iter()
                .chain(values(e))
                .collect()
        })
        .collect();
    let vs_layer = csv(header, rows);

    let mut curve_rows = Vec::new();
    let mut finals = Vec::new();
    for log in logs {
        let epochs: Vec<&EpochStats> = log
            .records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Epoch(e) => Some(e),
                _ => None,
            })
            .collect();
        for e in &epochs {
            curve_rows.push(vec![
                log.name.clone(),
                e.epoch.to_string(),
                e.step.to_string(),
                format!("{:.6}", e.train_loss),
                e.dev.map(|d| format!("{:?}", d.kind).to_lowercase()).unwrap_or_default(),
                e.dev.map(|d| format!("{:.6}", d.value)).unwrap_or_default(),
            ]);
        }
        if let Some(last) = epochs.last() {
            finals.push(vec![
                log.name.clone(),
                (last.epoch + 1).to_string(),
                last.step.to_string(),
                format!("{:.4}", last.train_loss),
                last.dev.map(|d| format!("{:?} {:.4}", d.kind, d.value).to_lowercase()).unwrap_or_default(),
            ]);
        }
    }
    let curves = csv(
        ["log", "epoch", "step", "train_loss", "dev_metric", "dev_value"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        curve_rows,
    );

    let mut tables = String::new();
    if !evals.is_empty() {
        let header: Vec<String> = ["label", "strategy", "layers", "m", "pooling"]
            .iter()
            .map(|s| s.to_string())
            .chain(metric_cols.clone())
            .collect();
        let rows: Vec<Vec<String>> = evals
            .iter()
            .map(|(_, e)| {
                [
                    e.label.clone(),
                    e.strategy.clone().unwrap_or_default(),
                    e.layers.as_deref().map(layers_label).unwrap_or_default(),
                    e.m.map(|m| m.to_string()).unwrap_or_default(),
                    e.pooling.clone().unwrap_or_default(),
                ]
                .into_iter()
                .chain(metrics.iter().map(|m| e.metrics.get(m).map(|v| format!("{v:.4}")).unwrap_or_default()))
                .collect()
            })
            .collect();
        tables.push_str("Retrieval\n");
        tables.push_str(&aligned(&header, &rows));
    }
    if !finals.is_empty() {
        if !tables.is_empty() {
            tables.push('\n');
        }
        let header: Vec<String> = ["log", "epochs", "steps", "train_loss", "dev"].iter().map(|s| s.to_string()).collect();
        tables.push_str("Training\n");
        tables.push_str(&aligned(&header, &finals));
    }

    BTreeMap::from([
        ("accuracy_vs_m.csv".to_string(), vs_m),
        ("accuracy_vs_layer.csv".to_string(), vs_layer),
        ("training_curves.csv".to_string(), curves),
        ("tables.txt".to_string(), tables),
    ])
}

pub fn write_report(files: &BTreeMap<String, String>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(MlrError::io(dir))?;
    for (name, content) in files {
        let path = dir.join(name);
        fs::write(&path, content).map_err(MlrError::io(&path))?;
    }
    Ok(())
}
