use std::io::Write;

use serde::{Serialize, Serializer};

use super::protocol::{CrfCoeffs, Metrics};
use crate::error::{Error, Result};

/// Writes non-finite floats as the strings `"inf"`, `"-inf"` or `"nan"`.
fn finite_or_tag<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&float_text(*v))
    }
}

fn float_text(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// Evaluation result for one image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub id: String,
    pub scale: f64,
    pub crf_coeffs: CrfCoeffs,
    #[serde(serialize_with = "finite_or_tag")]
    pub pu21_psnr: f64,
    pub rmse_linear: f64,
    pub out_of_domain: usize,
}

impl EvalReport {
    pub fn new(id: impl Into<String>, m: Metrics) -> Self {
        Self {
            id: id.into(),
            scale: m.scale,
            crf_coeffs: m.crf_coeffs,
            pu21_psnr: m.pu21_psnr,
            rmse_linear: m.rmse_linear,
            out_of_domain: m.out_of_domain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    #[serde(serialize_with = "finite_or_tag")]
    pub mean: f64,
    #[serde(serialize_with = "finite_or_tag")]
    pub median: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else if sorted[n / 2 - 1] == sorted[n / 2] {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Self { mean, median }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub count: usize,
    pub scale: Summary,
    pub pu21_psnr: Summary,
    pub rmse_linear: Summary,
    pub out_of_domain: usize,
}

/// Per-image reports sorted by id, plus their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSet {
    pub images: Vec<EvalReport>,
    pub aggregate: Aggregate,
}

impl ReportSet {
    pub fn new(mut images: Vec<EvalReport>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptySample);
        }
        images.sort_by(|a, b| a.id.cmp(&b.id));
        let col = |f: fn(&EvalReport) -> f64| images.iter().map(f).collect::<Vec<_>>();
        let aggregate = Aggregate {
            count: images.len(),
            scale: Summary::of(&col(|r| r.scale)),
            pu21_psnr: Summary::of(&col(|r| r.pu21_psnr)),
            rmse_linear: Summary::of(&col(|r| r.rmse_linear)),
            out_of_domain: images.iter().map(|r| r.out_of_domain).sum(),
        };
        Ok(Self { images, aggregate })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per image; CRF coefficients flattened as `crf_<channel><k>`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string(), "scale".into(), "pu21_psnr".into(), "rmse_linear".into(), "out_of_domain".into()];
        for ch in ["r", "g", "b"] {
            header.extend((0..4).map(|k| format!("crf_{ch}{k}")));
        }
        out.write_record(&header).map_err(csv_err)?;
        for r in &self.images {
            let mut row = vec![
                r.id.clone(),
                float_text(r.scale),
                float_text(r.pu21_psnr),
                float_text(r.rmse_linear),
                r.out_of_domain.to_string(),
            ];
            row.extend(r.crf_coeffs.iter().flatten().map(|&v| float_text(v)));
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidValue(format!("csv: {other:?}")),
    }
}
