use std::path::Path;

use serde::{Deserialize, Serialize};

use super::store::{csv_reader, Malformed};
use super::PipelineError;
use crate::records::{is_valid_address, normalize_address};

/// Tool supervision for one address: `address,s_tool,f1..fK`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub address: String,
    pub s_tool: f64,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelFile {
    pub k: usize,
    pub rows: Vec<LabelRow>,
    pub malformed: Vec<Malformed>,
}

fn parse(rec: &csv::StringRecord, k: usize) -> Result<LabelRow, String> {
    if rec.len() != k + 2 {
        return Err(format!("expected {} fields, got {}", k + 2, rec.len()));
    }
    let address = &rec[0];
    if !is_valid_address(address) {
        return Err(format!("malformed address '{address}'"));
    }
    let num = |s: &str| -> Result<f64, String> {
        let v: f64 = s.parse().map_err(|_| format!("not a number: '{s}'"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("non-finite value '{s}'"))
        }
    };
    Ok(LabelRow {
        address: normalize_address(address),
        s_tool: num(&rec[1])?,
        features: rec.iter().skip(2).map(num).collect::<Result<_, _>>()?,
    })
}

/// Read a label CSV. The header fixes `K` as the column count minus two.
pub fn read_labels(path: &Path, abort_fraction: f64) -> Result<LabelFile, PipelineError> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 3 || !headers[0].eq_ignore_ascii_case("address") || !headers[1].eq_ignore_ascii_case("s_tool") {
        return Err(PipelineError::Validation(format!(
            "{}: header must be address,s_tool,f1..fK",
            path.display()
        )));
    }
    let k = headers.len() - 2;
    let mut rows = Vec::new();
    let mut malformed = Vec::new();
    let mut total = 0;
    for (i, rec) in rdr.records().enumerate() {
        total += 1;
        let line = i + 2;
        match rec.map_err(|e| e.to_string()).and_then(|r| parse(&r, k)) {
            Ok(r) => rows.push(r),
            Err(reason) => {
                log::warn!("{}:{line}: skipped: {reason}", path.display());
                malformed.push(Malformed { line, reason });
            }
        }
    }
    if total > 0 && malformed.len() as f64 > abort_fraction * total as f64 {
        return Err(PipelineError::AbortThresholdExceeded { malformed: malformed.len(), rows: total });
    }
    Ok(LabelFile { k, rows, malformed })
}
