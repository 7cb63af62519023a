//! Per-step metrics serialisation.
//!
//! Field order is fixed (see [`FIELDS`]). Reals are written in scientific
//! notation with 17 significant digits, so a replayed run reproduces the file
//! byte for byte. JSON Lines output has no header; CSV output starts with one
//! and writes the count histogram as `n:count` pairs joined by `;`.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::StepMetrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricsFormat {
    #[default]
    Jsonl,
    Csv,
}

impl std::str::FromStr for MetricsFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(MetricsFormat::Jsonl),
            "csv" => Ok(MetricsFormat::Csv),
            other => Err(Error::Config(format!("unknown metrics format {other:?}"))),
        }
    }
}

pub const FIELDS: [&str; 21] = [
    "step",
    "epoch",
    "lambda_star",
    "marker_rate",
    "abort_rate",
    "is_weight_mean",
    "k1",
    "k2",
    "tokens_generated",
    "predicted_tokens",
    "budget",
    "rollouts",
    "count_histogram",
    "chi_squared",
    "surcharge",
    "aggregate",
    "mean_reward",
    "skill",
    "budget_overrun",
    "degenerate",
    "histogram_width",
];

enum Cell {
    Int(u64),
    Real(f64),
    OptReal(Option<f64>),
    Flag(bool),
    Hist(Vec<(u32, u32)>),
}

fn real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

fn cells(m: &StepMetrics) -> [Cell; 21] {
    [
        Cell::Int(m.step),
        Cell::Int(m.epoch),
        Cell::Real(m.lambda_star),
        Cell::Real(m.marker_rate),
        Cell::Real(m.abort_rate),
        Cell::Real(m.is_weight_mean),
        Cell::Real(m.k1),
        Cell::Real(m.k2),
        Cell::Int(m.tokens_generated),
        Cell::Real(m.predicted_tokens),
        Cell::Real(m.budget),
        Cell::Int(m.rollouts),
        Cell::Hist(m.count_histogram.iter().map(|(&k, &v)| (k, v)).collect()),
        Cell::OptReal(m.chi_squared),
        Cell::Real(m.surcharge),
        Cell::Real(m.aggregate),
        Cell::Real(m.mean_reward),
        Cell::Real(m.skill),
        Cell::Flag(m.budget_overrun),
        Cell::Flag(m.degenerate),
        Cell::Int(m.histogram_width() as u64),
    ]
}

pub fn jsonl_line(m: &StepMetrics) -> String {
    let mut out = String::from("{");
    for (i, (name, cell)) in FIELDS.iter().zip(cells(m)).enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "\"{name}\":");
        match cell {
            Cell::Int(v) => {
                let _ = write!(out, "{v}");
            }
            Cell::Real(v) => out.push_str(&real(v)),
            Cell::OptReal(v) => out.push_str(&v.map(real).unwrap_or_else(|| "null".into())),
            Cell::Flag(v) => {
                let _ = write!(out, "{v}");
            }
            Cell::Hist(h) => {
                out.push('{');
                for (j, (k, v)) in h.iter().enumerate() {
                    if j > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "\"{k}\":{v}");
                }
                out.push('}');
            }
        }
    }
    out.push('}');
    out
}

pub fn csv_header() -> String {
    FIELDS.join(",")
}

pub fn csv_line(m: &StepMetrics) -> String {
    cells(m)
        .into_iter()
        .map(|cell| match cell {
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => real(v).replace("null", ""),
            Cell::OptReal(v) => v.map(real).unwrap_or_default().replace("null", ""),
            Cell::Flag(v) => v.to_string(),
            Cell::Hist(h) => h
                .iter()
                .map(|(k, v)| format!("{k}:{v}"))
                .collect::<Vec<_>>()
                .join(";"),
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// Render every record in `format`, one per line.
pub fn render(metrics: &[StepMetrics], format: MetricsFormat) -> String {
    let mut out = String::new();
    match format {
        MetricsFormat::Jsonl => {
            for m in metrics {
                out.push_str(&jsonl_line(m));
                out.push('\n');
            }
        }
        MetricsFormat::Csv => {
            out.push_str(&csv_header());
            out.push('\n');
            for m in metrics {
                out.push_str(&csv_line(m));
                out.push('\n');
            }
        }
    }
    out
}

pub fn write_metrics(path: &Path, metrics: &[StepMetrics], format: MetricsFormat) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(render(metrics, format).as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn sample() -> StepMetrics {
        StepMetrics {
            step: 3,
            epoch: 0,
            lambda_star: 0.125,
            marker_rate: 0.5,
            abort_rate: 0.25,
            is_weight_mean: 1.0,
            k1: 921.6,
            k2: 2150.4,
            tokens_generated: 1000,
            predicted_tokens: 990.5,
            budget: 1000.0,
            rollouts: 8,
            count_histogram: BTreeMap::from([(2, 1), (6, 1)]),
            chi_squared: None,
            surcharge: 0.0,
            aggregate: -0.1,
            mean_reward: 0.5,
            skill: 1.0,
            budget_overrun: false,
            degenerate: false,
        }
    }

    #[test]
    fn jsonl_is_valid_json_with_fixed_order() {
        let line = jsonl_line(&sample());
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["lambda_star"], 0.125);
        assert_eq!(v["count_histogram"]["6"], 1);
        assert!(v["chi_squared"].is_null());
        assert_eq!(v["histogram_width"], 5);
        assert!(line.starts_with("{\"step\":3,\"epoch\":0,\"lambda_star\":1.2500000000000000e-1"));
    }

    #[test]
    fn seventeen_digits_round_trip() {
        let x = 0.1 + 0.2;
        assert_eq!(real(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn csv_header_and_row_align() {
        let row = csv_line(&sample());
        assert_eq!(row.split(',').count(), FIELDS.len());
        assert!(row.contains(",2:1;6:1,"));
        let empty = render(&[], MetricsFormat::Csv);
        assert_eq!(empty, format!("{}\n", csv_header()));
        assert_eq!(render(&[], MetricsFormat::Jsonl), "");
    }
}
