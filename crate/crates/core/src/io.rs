//! Dataset ingestion, configuration parsing, and report serialization.
//!
//! Panels arrive as long-format CSV with columns `id, period, y, x1..xp`:
//! every id must appear in exactly one row per period. Period labels other
//! than `1..T` are normalized to that range (in sorted order) with a warning.
//! Reports serialize to JSON with a stable key order and round-trip floats
//! exactly; simulation configs are `key = value` files where blank lines
//! separate grid blocks and later blocks inherit earlier values.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{CoreEstimates, EstimatorConfig, GroupCounts};
use crate::ext::ExtEstimates;
use crate::inference::InferenceReport;
use crate::matrix::Mat;
use crate::panel::{PanelDataset, PanelMode, PanelObservation};
use crate::sim::SimulationConfig;

/// Artifact version string embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Read a long-format panel CSV. `declared_p` checks the regressor count
/// against the header when given; otherwise `p` is inferred from the `x*`
/// columns. Returns the dataset and any normalization warnings.
pub fn read_panel_csv<R: Read>(
    reader: R,
    declared_p: Option<usize>,
) -> Result<(PanelDataset, Vec<String>)> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = csv_reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: format!("could not read header: {e}"),
        })?
        .clone();
    let mut col_index: BTreeMap<String, usize> = BTreeMap::new();
    for (i, name) in headers.iter().enumerate() {
        col_index.insert(name.to_ascii_lowercase(), i);
    }
    let id_col = *col_index.get("id").ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing `id` column".into(),
    })?;
    let period_col = *col_index.get("period").ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing `period` column".into(),
    })?;
    let y_col = *col_index.get("y").ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing `y` column".into(),
    })?;
    let mut x_cols = Vec::new();
    for p in 1.. {
        match col_index.get(&format!("x{p}")) {
            Some(&i) => x_cols.push(i),
            None => break,
        }
    }
    if x_cols.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no regressor columns x1..xp found".into(),
        });
    }
    if let Some(p) = declared_p {
        if p != x_cols.len() {
            return Err(Error::Validation(format!(
                "declared p = {p} but the file has {} regressor columns",
                x_cols.len()
            )));
        }
    }
    let p = x_cols.len();

    struct Row {
        period: i64,
        y: f64,
        x: Vec<f64>,
    }
    let mut by_id: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    let mut id_order: Vec<String> = Vec::new();
    let mut periods_seen: Vec<i64> = Vec::new();

    for (row_idx, record) in csv_reader.records().enumerate() {
        let line = row_idx + 2; // header is line 1
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |col: usize| -> Result<&str> {
            record.get(col).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing cell in column {col}"),
            })
        };
        let parse_f64 = |col: usize| -> Result<f64> {
            let raw = field(col)?;
            raw.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric cell `{raw}`"),
            })
        };
        let id = field(id_col)?.to_string();
        let period: i64 = field(period_col)?.parse().map_err(|_| Error::Parse {
            line,
            message: format!("non-integer period `{}`", field(period_col).unwrap_or("")),
        })?;
        let y = parse_f64(y_col)?;
        let mut x = Vec::with_capacity(p);
        for &col in &x_cols {
            x.push(parse_f64(col)?);
        }
        if !periods_seen.contains(&period) {
            periods_seen.push(period);
        }
        if !by_id.contains_key(&id) {
            id_order.push(id.clone());
        }
        by_id.entry(id).or_default().push(Row { period, y, x });
    }

    if by_id.is_empty() {
        return Err(Error::Validation("empty panel file".into()));
    }

    periods_seen.sort_unstable();
    let t = periods_seen.len();
    let mut warnings = Vec::new();
    let contiguous = periods_seen
        .iter()
        .enumerate()
        .all(|(i, &label)| label == i as i64 + 1);
    if !contiguous {
        warnings.push(format!(
            "period labels {periods_seen:?} normalized to 1..={t} in sorted order"
        ));
    }
    if t < p {
        return Err(Error::UnsupportedShape { t, p });
    }

    // Sort ids numerically when they all parse as integers, otherwise
    // lexicographically, so exported panels read back in the same order.
    let mut ids: Vec<String> = id_order;
    let all_numeric = ids.iter().all(|id| id.parse::<i64>().is_ok());
    if all_numeric {
        ids.sort_by_key(|id| id.parse::<i64>().unwrap());
    } else {
        ids.sort();
    }

    let mut observations = Vec::with_capacity(ids.len());
    for id in &ids {
        let rows = &mut by_id.get_mut(id).unwrap();
        if rows.len() != t {
            return Err(Error::UnbalancedPanel { id: id.clone() });
        }
        rows.sort_by_key(|r| r.period);
        let labels_ok = rows
            .iter()
            .zip(&periods_seen)
            .all(|(row, &label)| row.period == label);
        if !labels_ok {
            return Err(Error::UnbalancedPanel { id: id.clone() });
        }
        let y: Vec<f64> = rows.iter().map(|r| r.y).collect();
        let x = Mat::from_rows(&rows.iter().map(|r| r.x.clone()).collect::<Vec<_>>())?;
        observations.push(PanelObservation::new(y, x)?);
    }

    let dataset = PanelDataset::new(observations)?;
    Ok((dataset, warnings))
}

/// Export a panel to the canonical long-format CSV at full float precision
/// (shortest round-trip decimal representation).
pub fn export_panel_csv(dataset: &PanelDataset) -> String {
    let p = dataset.p_regressors();
    let mut out = String::from("id,period");
    out.push_str(",y");
    for j in 1..=p {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for (i, obs) in dataset.observations().iter().enumerate() {
        for t in 0..dataset.t_periods() {
            out.push_str(&format!("{},{}", i + 1, t + 1));
            out.push_str(&format!(",{}", obs.y[t]));
            for j in 0..p {
                out.push_str(&format!(",{}", obs.x.get(t, j)));
            }
            out.push('\n');
        }
    }
    out
}

/// Estimates section of a run report: square or tall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode")]
pub enum ReportEstimates {
    Square(CoreEstimates),
    Tall(ExtEstimates),
}

/// Everything one estimation run produces, serializable to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config: EstimatorConfig,
    pub n: usize,
    pub t_periods: usize,
    pub p_regressors: usize,
    pub counts: GroupCounts,
    pub estimates: ReportEstimates,
    pub inference: InferenceReport,
    pub warnings: Vec<String>,
}

fn check_finite_json(value: &serde_json::Value, path: &str) -> Result<()> {
    match value {
        serde_json::Value::Number(n) => {
            if n.as_f64().is_none() {
                return Err(Error::Serialization(format!(
                    "non-representable number at {path}"
                )));
            }
            Ok(())
        }
        serde_json::Value::Null => Err(Error::Serialization(format!(
            "non-finite float serialized as null at {path}"
        ))),
        serde_json::Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                check_finite_json(item, &format!("{path}[{i}]"))?;
            }
            Ok(())
        }
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                check_finite_json(v, &format!("{path}.{k}"))?;
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Serialize a report to JSON with stable key order. Non-finite values are
/// refused with a diagnostic naming the offending path.
pub fn write_report(report: &RunReport) -> Result<String> {
    let value = serde_json::to_value(report)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    check_finite_json(&value, "report")?;
    serde_json::to_string_pretty(&value).map_err(|e| Error::Serialization(e.to_string()))
}

/// Parse a report back from JSON.
pub fn read_report(text: &str) -> Result<RunReport> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: 0,
        message: format!("invalid report JSON: {e}"),
    })
}

/// Documented simulation config keys.
const CONFIG_KEYS: [&str; 11] = [
    "rho",
    "pi0",
    "alpha",
    "sigma_a",
    "sigma_u",
    "time_shift",
    "n",
    "poly_order",
    "reps",
    "seed",
    "ci_levels",
];

fn apply_config_key(
    config: &mut SimulationConfig,
    key: &str,
    value: &str,
    line: usize,
) -> Result<()> {
    let parse_f64 = |v: &str| -> Result<f64> {
        v.parse().map_err(|_| Error::Parse {
            line,
            message: format!("expected a number for `{key}`, got `{v}`"),
        })
    };
    let parse_usize = |v: &str| -> Result<usize> {
        v.parse().map_err(|_| Error::Parse {
            line,
            message: format!("expected a non-negative integer for `{key}`, got `{v}`"),
        })
    };
    match key {
        "rho" => config.rho = parse_f64(value)?,
        "pi0" => config.pi0 = parse_f64(value)?,
        "alpha" => config.alpha = parse_f64(value)?,
        "sigma_a" => config.sigma_a = parse_f64(value)?,
        "sigma_u" => config.sigma_u = parse_f64(value)?,
        "time_shift" => config.time_shift = parse_f64(value)?,
        "n" => config.n = parse_usize(value)?,
        "poly_order" => config.poly_order = parse_usize(value)?,
        "reps" => config.reps = parse_usize(value)?,
        "seed" => {
            config.seed = value.parse().map_err(|_| Error::Parse {
                line,
                message: format!("expected an unsigned 64-bit seed, got `{value}`"),
            })?
        }
        "ci_levels" => {
            let mut levels = Vec::new();
            for part in value.split(',') {
                levels.push(parse_f64(part.trim())?);
            }
            config.ci_levels = levels;
        }
        other => {
            return Err(Error::Parse {
                line,
                message: format!(
                    "unknown key `{other}` (expected one of: {})",
                    CONFIG_KEYS.join(", ")
                ),
            })
        }
    }
    Ok(())
}

/// Parse one or more simulation configs from a `key = value` file.
///
/// Lines starting with `#` are comments. Blank lines separate blocks; each
/// block after the first inherits every value from the block before it, so a
/// grid varies one key at a time. Every block is validated.
pub fn parse_sim_configs(text: &str) -> Result<Vec<SimulationConfig>> {
    let mut configs = Vec::new();
    let mut current = SimulationConfig::default();
    let mut block_has_keys = false;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() {
            if block_has_keys {
                current.validate()?;
                configs.push(current.clone());
                block_has_keys = false;
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        apply_config_key(&mut current, key.trim(), value.trim(), line_no)?;
        block_has_keys = true;
    }
    if block_has_keys {
        current.validate()?;
        configs.push(current);
    }
    if configs.is_empty() {
        return Err(Error::Validation(
            "config file contains no key = value lines".into(),
        ));
    }
    Ok(configs)
}

/// Check that the panel mode matches a requested mode string
/// (`auto` / `square` / `tall`).
pub fn check_mode(dataset: &PanelDataset, requested: &str) -> Result<()> {
    match requested {
        "auto" => Ok(()),
        "square" if dataset.mode() == PanelMode::SquareTP => Ok(()),
        "tall" if dataset.mode() == PanelMode::TallTP => Ok(()),
        "square" | "tall" => Err(Error::Validation(format!(
            "panel has T = {}, p = {} which is not `{requested}`",
            dataset.t_periods(),
            dataset.p_regressors()
        ))),
        other => Err(Error::Validation(format!(
            "unknown mode `{other}` (expected auto, square, or tall)"
        ))),
    }
}
