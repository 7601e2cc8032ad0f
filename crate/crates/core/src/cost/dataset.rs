//! Calibration dataset CSV.
//!
//! Header: `kind,b,s,h,volume,context,latency_s`. Compute rows fill
//! `b,s,h`; communication rows fill `volume`. Unused columns stay empty.
//! `context` is peak FLOP/s or bandwidth (bytes/s) respectively.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{CalibrationSample, Probe};
use crate::error::{Error, Result};

pub const HEADER: [&str; 7] = ["kind", "b", "s", "h", "volume", "context", "latency_s"];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    kind: String,
    b: Option<f64>,
    s: Option<f64>,
    h: Option<f64>,
    volume: Option<f64>,
    context: Option<f64>,
    latency_s: Option<f64>,
}

fn need(record: usize, column: &str, v: Option<f64>) -> Result<f64> {
    v.ok_or_else(|| Error::Dataset {
        record,
        message: format!("column `{column}` is empty"),
    })
}

pub fn read_dataset(reader: impl Read) -> Result<Vec<CalibrationSample>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Dataset {
        record: 0,
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::Dataset {
            record: 0,
            message: format!(
                "header must be `{}`, got `{}`",
                HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let record = i + 1;
        let row = row.map_err(|e| Error::Dataset {
            record,
            message: match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => match err.field() {
                    Some(f) => format!("column `{}`: {}", HEADER[f as usize], err.kind()),
                    None => err.to_string(),
                },
                _ => e.to_string(),
            },
        })?;
        let probe = match row.kind.as_str() {
            "compute" => Probe::Compute {
                b: need(record, "b", row.b)?,
                s: need(record, "s", row.s)?,
                h: need(record, "h", row.h)?,
            },
            "communication" => Probe::Communication {
                volume: need(record, "volume", row.volume)?,
            },
            other => {
                return Err(Error::Dataset {
                    record,
                    message: format!("column `kind`: unknown value `{other}`"),
                })
            }
        };
        let sample = CalibrationSample {
            probe,
            context: need(record, "context", row.context)?,
            measured_latency: need(record, "latency_s", row.latency_s)?,
        };
        sample.validate().map_err(|e| Error::Dataset {
            record,
            message: e.to_string(),
        })?;
        out.push(sample);
    }
    if out.is_empty() {
        return Err(Error::Dataset {
            record: 0,
            message: "dataset has no records".into(),
        });
    }
    Ok(out)
}

pub fn write_dataset(writer: impl Write, samples: &[CalibrationSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let map = |e: csv::Error| Error::Io(std::io::Error::other(e));
    for s in samples {
        let (b, sq, h, volume) = match s.probe {
            Probe::Compute { b, s, h } => (Some(b), Some(s), Some(h), None),
            Probe::Communication { volume } => (None, None, None, Some(volume)),
        };
        w.serialize(Row {
            kind: s.kind().as_str().to_string(),
            b,
            s: sq,
            h,
            volume,
            context: Some(s.context),
            latency_s: Some(s.measured_latency),
        })
        .map_err(map)?;
    }
    w.flush()?;
    Ok(())
}
