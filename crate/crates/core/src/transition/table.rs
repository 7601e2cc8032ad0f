//! Dequantization time lookup keyed by device count and per-device
//! parameter count.
//!
//! Parameter counts are bucketed by powers of two; a lookup uses the
//! smallest declared bucket at or above the query. CSV form:
//! `n_gpus,v_dequant,seconds`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DequantTimeTable {
    rows: BTreeMap<u32, BTreeMap<u64, f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    n_gpus: u32,
    v_dequant: u64,
    seconds: f64,
}

impl DequantTimeTable {
    /// Linear model `latency + params / throughput` sampled on buckets
    /// `2^0 ..= 2^max_log2` for each listed device count.
    pub fn linear(n_gpus: impl IntoIterator<Item = u32>, throughput: f64, latency: f64, max_log2: u32) -> Result<Self> {
        let mut t = Self::default();
        for n in n_gpus {
            for p in 0..=max_log2 {
                let v = 1u64 << p;
                t.insert(n, v, latency + v as f64 / throughput)?;
            }
        }
        Ok(t)
    }

    /// About 100 G parameters/s per device plus a 20 us launch cost, for 1 to
    /// 16 devices and up to 2^40 parameters.
    pub fn synthetic_default() -> Self {
        Self::linear(1..=16, 100.0e9, 20.0e-6, 40).expect("default table is well formed")
    }

    pub fn insert(&mut self, n_gpus: u32, v_dequant: u64, seconds: f64) -> Result<()> {
        if n_gpus == 0 {
            return Err(Error::InvalidInput("dequant table: n_gpus must be >= 1".into()));
        }
        if !v_dequant.is_power_of_two() {
            return Err(Error::InvalidInput(format!(
                "dequant table: bucket {v_dequant} is not a power of two"
            )));
        }
        if !(seconds.is_finite() && seconds >= 0.0) {
            return Err(Error::InvalidInput(format!("dequant table: bad seconds {seconds}")));
        }
        self.rows.entry(n_gpus).or_default().insert(v_dequant, seconds);
        Ok(())
    }

    pub fn is_monotone(&self) -> bool {
        self.rows
            .values()
            .all(|row| row.values().zip(row.values().skip(1)).all(|(a, b)| a <= b))
    }

    pub fn lookup(&self, n_gpus: u32, v_dequant: u64) -> Result<f64> {
        if v_dequant == 0 {
            return Ok(0.0);
        }
        self.rows
            .get(&n_gpus)
            .and_then(|row| row.range(v_dequant..).next())
            .map(|(_, &s)| s)
            .ok_or(Error::TableMiss {
                n_gpus,
                v_dequant: v_dequant.next_power_of_two(),
            })
    }

    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Dataset {
                record: 0,
                message: e.to_string(),
            })?
            .iter()
            .map(str::to_string)
            .collect();
        if header != ["n_gpus", "v_dequant", "seconds"] {
            return Err(Error::Dataset {
                record: 0,
                message: format!("header must be `n_gpus,v_dequant,seconds`, got `{}`", header.join(",")),
            });
        }
        let mut table = Self::default();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Dataset {
                record: i + 1,
                message: e.to_string(),
            })?;
            table.insert(row.n_gpus, row.v_dequant, row.seconds).map_err(|e| Error::Dataset {
                record: i + 1,
                message: e.to_string(),
            })?;
        }
        if table.rows.is_empty() {
            return Err(Error::Dataset {
                record: 0,
                message: "dequant table has no records".into(),
            });
        }
        if !table.is_monotone() {
            return Err(Error::Dataset {
                record: 0,
                message: "dequant times must not decrease with v_dequant".into(),
            });
        }
        Ok(table)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (&n_gpus, row) in &self.rows {
            for (&v_dequant, &seconds) in row {
                w.serialize(Row {
                    n_gpus,
                    v_dequant,
                    seconds,
                })
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
