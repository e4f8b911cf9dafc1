//! Newline-delimited trace records: the versioned on-disk trace format.
//!
//! One JSON object per line, `schema_version` mandatory. Raw traces carry
//! the token-level fields only; filtered files add per-token `rho_post`,
//! `p_post`, `gain`, and `filtered_ratio` columns. Numbers round-trip
//! exactly (shortest representation that parses back to the same value),
//! and non-finite values are rejected on both read and write.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ratio_forge_core::filter::FilteredSeries;
use ratio_forge_core::trace::{RatioSeries, TokenTrace};
use ratio_forge_core::TraceError;

pub const SCHEMA_VERSION: u32 = 1;

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecordV1 {
    pub schema_version: u32,
    pub sample_id: String,
    pub group_id: String,
    pub tokens: Vec<u32>,
    pub logp_old: Vec<f64>,
    pub logp_new: Vec<f64>,
    pub mask: Vec<bool>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_post: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_post: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filtered_ratio: Option<Vec<f64>>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: parse error: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: unsupported schema_version {version}, expected {SCHEMA_VERSION}")]
    Version {
        path: PathBuf,
        line: usize,
        version: u32,
    },
    #[error("{path}:{line}: {source}")]
    Validation {
        path: PathBuf,
        line: usize,
        #[source]
        source: TraceError,
    },
    #[error("{path}:{line}: field `{field}` has length {actual}, expected {expected}")]
    FieldLength {
        path: PathBuf,
        line: usize,
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{path}:{line}: field `{field}`[{index}] is not finite")]
    NonFinite {
        path: PathBuf,
        line: usize,
        field: &'static str,
        index: usize,
    },
}

impl TraceRecordV1 {
    /// Builds a raw record from a validated trace.
    pub fn from_trace(trace: &TokenTrace) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            sample_id: trace.sample_id().to_string(),
            group_id: trace.group_id().to_string(),
            tokens: trace.tokens().to_vec(),
            logp_old: trace.logp_old().to_vec(),
            logp_new: trace.logp_new().to_vec(),
            mask: trace.mask().to_vec(),
            score: trace.score(),
            rho_post: None,
            p_post: None,
            gain: None,
            filtered_ratio: None,
        }
    }

    /// Attaches per-token filter outputs to the record.
    pub fn with_filtered(mut self, filtered: &FilteredSeries, ratios: &RatioSeries) -> Self {
        self.rho_post = Some(filtered.rho_post().to_vec());
        self.p_post = Some(filtered.p_post().to_vec());
        self.gain = Some(filtered.gain().to_vec());
        self.filtered_ratio = Some(ratios.values().to_vec());
        self
    }

    /// Converts to the core trace type, enforcing its invariants.
    pub fn to_trace(&self) -> Result<TokenTrace, TraceError> {
        TokenTrace::new(
            self.sample_id.clone(),
            self.group_id.clone(),
            self.tokens.clone(),
            self.logp_old.clone(),
            self.logp_new.clone(),
            self.mask.clone(),
            self.score,
        )
    }

    /// Filtered ratios as a masked series, when present.
    pub fn filtered_series(&self) -> Option<RatioSeries> {
        self.filtered_ratio
            .as_ref()
            .map(|values| RatioSeries::new(values.clone(), self.mask.clone()).expect("validated"))
    }

    fn float_fields(&self) -> [(&'static str, Option<&[f64]>); 6] {
        [
            ("logp_old", Some(self.logp_old.as_slice())),
            ("logp_new", Some(self.logp_new.as_slice())),
            ("rho_post", self.rho_post.as_deref()),
            ("p_post", self.p_post.as_deref()),
            ("gain", self.gain.as_deref()),
            ("filtered_ratio", self.filtered_ratio.as_deref()),
        ]
    }

    fn validate(&self, path: &Path, line: usize) -> Result<(), TraceIoError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(TraceIoError::Version {
                path: path.to_path_buf(),
                line,
                version: self.schema_version,
            });
        }
        let expected = self.tokens.len();
        let lengths: [(&'static str, usize); 3] = [
            ("logp_old", self.logp_old.len()),
            ("logp_new", self.logp_new.len()),
            ("mask", self.mask.len()),
        ];
        for (field, actual) in lengths {
            if actual != expected {
                return Err(TraceIoError::FieldLength {
                    path: path.to_path_buf(),
                    line,
                    field,
                    expected,
                    actual,
                });
            }
        }
        for (field, values) in self.float_fields() {
            let Some(values) = values else { continue };
            if !matches!(field, "logp_old" | "logp_new") && values.len() != expected {
                return Err(TraceIoError::FieldLength {
                    path: path.to_path_buf(),
                    line,
                    field,
                    expected,
                    actual: values.len(),
                });
            }
            for (index, v) in values.iter().enumerate() {
                if !v.is_finite() {
                    return Err(TraceIoError::NonFinite {
                        path: path.to_path_buf(),
                        line,
                        field,
                        index,
                    });
                }
            }
        }
        if !self.score.is_finite() {
            return Err(TraceIoError::NonFinite {
                path: path.to_path_buf(),
                line,
                field: "score",
                index: 0,
            });
        }
        // Full trace-level invariants (logp sign, score range).
        self.to_trace().map_err(|source| TraceIoError::Validation {
            path: path.to_path_buf(),
            line,
            source,
        })?;
        Ok(())
    }
}

/// Reads and validates every record of a newline-delimited trace file.
/// Every error names the file and 1-based line number.
pub fn read_records(path: &Path) -> Result<Vec<TraceRecordV1>, TraceIoError> {
    let file = File::open(path).map_err(|source| TraceIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let text = line.map_err(|source| TraceIoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let record: TraceRecordV1 =
            serde_json::from_str(&text).map_err(|source| TraceIoError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                source,
            })?;
        record.validate(path, line_no)?;
        records.push(record);
    }
    Ok(records)
}

/// Reads records and converts them to core traces.
pub fn read_traces(path: &Path) -> Result<Vec<TokenTrace>, TraceIoError> {
    let records = read_records(path)?;
    Ok(records
        .iter()
        .map(|r| r.to_trace().expect("validated on read"))
        .collect())
}

/// Writes records as newline-delimited JSON. Non-finite values are
/// rejected before any byte is written.
pub fn write_records(path: &Path, records: &[TraceRecordV1]) -> Result<(), TraceIoError> {
    for (index, record) in records.iter().enumerate() {
        record.validate(path, index + 1)?;
    }
    let file = File::create(path).map_err(|source| TraceIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let json = serde_json::to_string(record).expect("record serialization is infallible");
        writer
            .write_all(json.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .map_err(|source| TraceIoError::Io {
                path: path.to_path_buf(),
                source,
            })?;
    }
    writer.flush().map_err(|source| TraceIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the input traces augmented with their filter outputs, one
/// output line per input trace, order preserved.
pub fn write_filtered(
    path: &Path,
    items: &[(TraceRecordV1, FilteredSeries, RatioSeries)],
) -> Result<(), TraceIoError> {
    let records: Vec<TraceRecordV1> = items
        .iter()
        .map(|(record, filtered, ratios)| record.clone().with_filtered(filtered, ratios))
        .collect();
    write_records(path, &records)
}
