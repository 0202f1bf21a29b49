//! Optimization records and their CSV/JSON persistence.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gp::FORMAT_VERSION;
use crate::mtgp::FidelityTag;
use crate::params::{GaitParams, PARAM_NAMES};

const HISTORY_FORMAT: &str = "gaitopt-history";

pub const CSV_COLUMNS: [&str; 11] = [
    "iteration",
    "tag",
    "a_alpha_b",
    "a_z_l",
    "f",
    "alpha",
    "phi",
    "v",
    "best",
    "valid",
    "wall_ms",
];

/// Hex SHA-256 of the compact JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Bo,
    Mfbo,
    Sa,
    Rs,
    Ags,
    Sweep,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bo => "bo",
            Method::Mfbo => "mfbo",
            Method::Sa => "sa",
            Method::Rs => "rs",
            Method::Ags => "ags",
            Method::Sweep => "sweep",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    /// 1-based evaluation counter.
    pub iteration: usize,
    pub tag: FidelityTag,
    pub params: GaitParams,
    pub v: f64,
    /// Running maximum of `v` up to and including this record.
    pub best: f64,
    pub valid: bool,
    pub wall_ms: f64,
}

/// The model's choice among evaluated points, reported beside the noisy argmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorBest {
    pub params: GaitParams,
    pub predicted_mean: f64,
    pub predicted_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationHistory {
    pub method: Method,
    pub seed: u64,
    pub config_hash: String,
    pub records: Vec<HistoryRecord>,
    pub posterior_best: Option<PosteriorBest>,
    /// False while the run has not reached its budget.
    pub complete: bool,
}

impl OptimizationHistory {
    pub fn new(method: Method, seed: u64, config_hash: impl Into<String>) -> Self {
        Self {
            method,
            seed,
            config_hash: config_hash.into(),
            records: Vec::new(),
            posterior_best: None,
            complete: false,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends an evaluation, filling in its iteration and running best.
    pub fn push(&mut self, tag: FidelityTag, params: GaitParams, v: f64, valid: bool, wall_ms: f64) -> &HistoryRecord {
        let best = self.best_value().map_or(v, |b| b.max(v));
        self.records.push(HistoryRecord {
            iteration: self.records.len() + 1,
            tag,
            params,
            v,
            best,
            valid,
            wall_ms,
        });
        self.records.last().expect("just pushed")
    }

    /// Record with the highest `v`; the earliest on ties.
    pub fn best(&self) -> Option<&HistoryRecord> {
        self.records
            .iter()
            .reduce(|best, r| if r.v > best.v { r } else { best })
    }

    pub fn best_value(&self) -> Option<f64> {
        self.records.last().map(|r| r.best)
    }

    pub fn best_by_tag(&self, tag: FidelityTag) -> Option<&HistoryRecord> {
        self.records
            .iter()
            .filter(|r| r.tag == tag)
            .reduce(|best, r| if r.v > best.v { r } else { best })
    }

    pub fn total_wall_ms(&self) -> f64 {
        self.records.iter().map(|r| r.wall_ms).sum()
    }

    /// CSV with a `#` comment header carrying the provenance.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# method={} seed={} config_hash={} complete={}",
            self.method, self.seed, self.config_hash, self.complete
        )
        .map_err(|e| Error::io("<csv>", e))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        for r in &self.records {
            let p = r.params.to_array();
            w.write_record([
                r.iteration.to_string(),
                r.tag.to_string(),
                p[0].to_string(),
                p[1].to_string(),
                p[2].to_string(),
                p[3].to_string(),
                p[4].to_string(),
                r.v.to_string(),
                r.best.to_string(),
                u8::from(r.valid).to_string(),
                format!("{:.3}", r.wall_ms),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Reads the records of a CSV written by [`write_csv`](Self::write_csv).
    pub fn read_csv_records<R: BufRead>(input: R) -> Result<Vec<HistoryRecord>> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let header = rdr.headers()?.clone();
        if header.iter().ne(CSV_COLUMNS) {
            return Err(Error::Config(format!("unexpected history columns: {header:?}")));
        }
        let mut out = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let num = |i: usize| -> Result<f64> {
                row[i]
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("column {}: {e}", CSV_COLUMNS[i])))
            };
            let tag: u8 = row[1].parse().map_err(|e| Error::Config(format!("tag: {e}")))?;
            out.push(HistoryRecord {
                iteration: row[0].parse().map_err(|e| Error::Config(format!("iteration: {e}")))?,
                tag: FidelityTag::try_from(tag).map_err(Error::Config)?,
                params: GaitParams::from_array([num(2)?, num(3)?, num(4)?, num(5)?, num(6)?]),
                v: num(7)?,
                best: num(8)?,
                valid: &row[9] == "1",
                wall_ms: num(10)?,
            });
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = HistoryDocument {
            format: HISTORY_FORMAT.into(),
            version: FORMAT_VERSION,
            parameters: PARAM_NAMES.map(String::from).to_vec(),
            history: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: HistoryDocument = serde_json::from_str(s)?;
        crate::gp::check_format(&doc.format, HISTORY_FORMAT, doc.version)?;
        Ok(doc.history)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HistoryDocument {
    format: String,
    version: u32,
    parameters: Vec<String>,
    history: OptimizationHistory,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> OptimizationHistory {
        let mut h = OptimizationHistory::new(Method::Bo, 7, "abc");
        let p = GaitParams::new(0.3, 0.004, 1.1, 0.4, 2.0).unwrap();
        for (v, ok) in [(0.1, true), (0.0, false), (0.25, true), (0.2, true)] {
            h.push(FidelityTag::Low, p, v, ok, 1.5);
        }
        h
    }

    #[test]
    fn running_best_is_monotone() {
        let h = sample();
        let best: Vec<f64> = h.records.iter().map(|r| r.best).collect();
        assert_eq!(best, [0.1, 0.1, 0.25, 0.25]);
        assert_eq!(h.best().unwrap().iteration, 3);
    }

    #[test]
    fn csv_roundtrip() {
        let h = sample();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# method=bo seed=7 config_hash=abc complete=false\niteration,tag,a_alpha_b"));
        let back = OptimizationHistory::read_csv_records(&buf[..]).unwrap();
        assert_eq!(back, h.records);
    }

    #[test]
    fn json_roundtrip_and_hash() {
        let h = sample();
        assert_eq!(OptimizationHistory::from_json(&h.to_json().unwrap()).unwrap(), h);
        assert_eq!(config_hash(&h.records), config_hash(&h.records));
        assert_ne!(config_hash(&1), config_hash(&2));
        assert_eq!(config_hash(&0).len(), 64);
    }
}
