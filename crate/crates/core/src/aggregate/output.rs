//! Two-column CSV curves and their JSON sidecars.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::{Cdf, SeriesPoint};

/// Metadata written next to a curve. `params` holds weights, windows and
/// thresholds; it is ordered so the JSON is byte-stable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub curve: String,
    pub x: String,
    pub value: String,
    pub points: usize,
    /// Samples behind the curve, for CDFs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total: Option<u64>,
    pub empty: bool,
    pub params: BTreeMap<String, serde_json::Value>,
}

impl CurveMeta {
    pub fn new(curve: &str, x: &str, value: &str) -> Self {
        CurveMeta {
            curve: curve.into(),
            x: x.into(),
            value: value.into(),
            ..CurveMeta::default()
        }
    }

    pub fn param(mut self, name: &str, value: impl Serialize) -> Self {
        self.params.insert(
            name.into(),
            serde_json::to_value(value).unwrap_or(serde_json::Value::Null),
        );
        self
    }
}

pub fn write_cdf_csv<W: Write>(out: W, x: &str, value: &str, cdf: &Cdf) -> Result<W> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([x, value])?;
    for p in &cdf.points {
        w.write_record([p.x.to_string(), p.f.to_string()])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub fn write_series_csv<W: Write>(out: W, x: &str, value: &str, points: &[SeriesPoint]) -> Result<W> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([x, value])?;
    for p in points {
        w.write_record([p.time.to_string(), p.value.to_string()])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<W: Write, T: Serialize>(mut out: W, value: &T) -> Result<W> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(out)
}
