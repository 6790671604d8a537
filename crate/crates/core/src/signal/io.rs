//! Recording ingestion from pre-converted files.
//!
//! Two formats: CSV with one sample per line, and headerless raw
//! little-endian 64-bit floats.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{FaultClass, RawRecording, SignalError, DEFAULT_SAMPLE_RATE, WINDOW_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignalFormat {
    Csv,
    RawF64le,
}

impl SignalFormat {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "csv" => Some(Self::Csv),
            "raw" | "raw-f64le" | "f64le" => Some(Self::RawF64le),
            _ => None,
        }
    }
}

/// Load a recording, attaching the file path as provenance.
pub fn load_recording(
    path: &Path,
    format: SignalFormat,
    label: FaultClass,
) -> Result<RawRecording, SignalError> {
    let display = path.display().to_string();
    let samples = match format {
        SignalFormat::Csv => {
            let text = fs::read_to_string(path)?;
            let mut out = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let trimmed = line.trim();
                if trimmed.is_empty() {
                    continue;
                }
                let value: f64 = trimmed.parse().map_err(|e| SignalError::Parse {
                    path: display.clone(),
                    line: i + 1,
                    message: format!("{e}: {trimmed:?}"),
                })?;
                out.push(value);
            }
            out
        }
        SignalFormat::RawF64le => {
            let bytes = fs::read(path)?;
            if bytes.len() % 8 != 0 {
                return Err(SignalError::Parse {
                    path: display.clone(),
                    line: 0,
                    message: format!("{} bytes is not a multiple of 8", bytes.len()),
                });
            }
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect()
        }
    };
    if samples.len() < WINDOW_LEN {
        return Err(SignalError::TooShort {
            len: samples.len(),
            min: WINDOW_LEN,
        });
    }
    RawRecording::new(samples, DEFAULT_SAMPLE_RATE, label, display)
}

/// Write samples as raw little-endian f64, no header.
pub fn write_raw_f64le(path: &Path, samples: &[f64]) -> Result<(), SignalError> {
    let mut file = fs::File::create(path)?;
    let mut buf = Vec::with_capacity(samples.len() * 8);
    for v in samples {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf)?;
    Ok(())
}

/// Write samples as CSV, one value per line.
pub fn write_csv(path: &Path, samples: &[f64]) -> Result<(), SignalError> {
    let mut out = String::new();
    for v in samples {
        out.push_str(&format!("{v}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_parses_one_value_per_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let samples: Vec<f64> = (0..2100).map(|i| i as f64 * 0.1).collect();
        write_csv(&path, &samples).unwrap();
        let rec = load_recording(&path, SignalFormat::Csv, FaultClass::IR007).unwrap();
        assert_eq!(rec.len(), 2100);
        assert_eq!(rec.samples()[1], 0.1);
        assert_eq!(rec.label, FaultClass::IR007);
        assert!(rec.source.ends_with("r.csv"));
    }

    #[test]
    fn csv_parse_error_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let mut body: String = (0..2050).map(|i| format!("{i}\n")).collect();
        body.insert_str(12, "not-a-number\n");
        std::fs::write(&path, body).unwrap();
        match load_recording(&path, SignalFormat::Csv, FaultClass::Normal) {
            Err(SignalError::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("want parse error, got {other:?}"),
        }
    }

    #[test]
    fn raw_f64le_size_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.f64le");
        let samples: Vec<f64> = (0..2048).map(|i| (i as f64).cos()).collect();
        write_raw_f64le(&path, &samples).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 2048 * 8);
        let rec = load_recording(&path, SignalFormat::RawF64le, FaultClass::B007).unwrap();
        assert_eq!(rec.len(), 2048);
    }

    #[test]
    fn raw_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.f64le");
        let samples: Vec<f64> = (0..4096)
            .map(|i| ((i as f64) * 0.12345).sin() * 1e-3 + f64::EPSILON * i as f64)
            .collect();
        write_raw_f64le(&path, &samples).unwrap();
        let rec = load_recording(&path, SignalFormat::RawF64le, FaultClass::Normal).unwrap();
        for (a, b) in samples.iter().zip(rec.samples()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn empty_file_is_length_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(
            load_recording(&path, SignalFormat::Csv, FaultClass::Normal),
            Err(SignalError::TooShort { len: 0, .. })
        ));
    }
}
