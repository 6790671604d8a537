//! Vibration-signal ingestion, synthesis, windowing, normalization and
//! dataset splits.
//!
//! Everything downstream consumes [`SignalWindow`]s: 2048 samples scaled
//! into `[0, 1]` per window, each carrying its [`FaultClass`] label.

mod io;
mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_recording, write_csv, write_raw_f64le, SignalFormat};
pub use synth::{synth_bearing, synth_class_windows, synth_dataset};

/// Samples per example window.
pub const WINDOW_LEN: usize = 2048;

/// Number of diagnosis classes.
pub const NUM_CLASSES: usize = 10;

/// Default accelerometer sampling rate in Hz.
pub const DEFAULT_SAMPLE_RATE: u32 = 12_000;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("recording too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },
    #[error("parse error at {path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("window has {len} samples, want {expected}")]
    BadWindowLength { len: usize, expected: usize },
    #[error("sample {value} at index {index} outside [0, 1]")]
    OutOfRange { value: f64, index: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The ten diagnosis categories: one healthy state plus nine fault types
/// spanning three locations and three defect diameters (in inches).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultClass {
    Normal,
    IR007,
    IR014,
    IR021,
    B007,
    B014,
    B021,
    OR007,
    OR014,
    OR021,
}

/// Where on the bearing the defect sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultLocation {
    None,
    InnerRace,
    Ball,
    OuterRace,
}

impl FaultClass {
    pub const ALL: [FaultClass; NUM_CLASSES] = [
        FaultClass::Normal,
        FaultClass::IR007,
        FaultClass::IR014,
        FaultClass::IR021,
        FaultClass::B007,
        FaultClass::B014,
        FaultClass::B021,
        FaultClass::OR007,
        FaultClass::OR014,
        FaultClass::OR021,
    ];

    pub fn id(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).expect("class in ALL")
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultClass::Normal => "Normal",
            FaultClass::IR007 => "IR007",
            FaultClass::IR014 => "IR014",
            FaultClass::IR021 => "IR021",
            FaultClass::B007 => "B007",
            FaultClass::B014 => "B014",
            FaultClass::B021 => "B021",
            FaultClass::OR007 => "OR007",
            FaultClass::OR014 => "OR014",
            FaultClass::OR021 => "OR021",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == name)
    }

    /// Defect diameter in inches; `None` for the healthy class.
    pub fn diameter(self) -> Option<f64> {
        match self {
            FaultClass::Normal => None,
            FaultClass::IR007 | FaultClass::B007 | FaultClass::OR007 => Some(0.007),
            FaultClass::IR014 | FaultClass::B014 | FaultClass::OR014 => Some(0.014),
            FaultClass::IR021 | FaultClass::B021 | FaultClass::OR021 => Some(0.021),
        }
    }

    pub fn location(self) -> FaultLocation {
        match self {
            FaultClass::Normal => FaultLocation::None,
            FaultClass::IR007 | FaultClass::IR014 | FaultClass::IR021 => FaultLocation::InnerRace,
            FaultClass::B007 | FaultClass::B014 | FaultClass::B021 => FaultLocation::Ball,
            FaultClass::OR007 | FaultClass::OR014 | FaultClass::OR021 => FaultLocation::OuterRace,
        }
    }
}

impl std::fmt::Display for FaultClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// An unprocessed vibration recording of arbitrary length.
#[derive(Clone, Debug)]
pub struct RawRecording {
    samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: FaultClass,
    pub source: String,
}

impl RawRecording {
    /// Validates length (>= one window) and finiteness.
    pub fn new(
        samples: Vec<f64>,
        sample_rate: u32,
        label: FaultClass,
        source: impl Into<String>,
    ) -> Result<Self, SignalError> {
        if samples.len() < WINDOW_LEN {
            return Err(SignalError::TooShort {
                len: samples.len(),
                min: WINDOW_LEN,
            });
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite { index });
        }
        Ok(Self {
            samples,
            sample_rate,
            label,
            source: source.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One 2048-sample example, min-max normalized into `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalWindow {
    samples: Vec<f64>,
    pub label: FaultClass,
}

impl SignalWindow {
    pub fn new(samples: Vec<f64>, label: FaultClass) -> Result<Self, SignalError> {
        if samples.len() != WINDOW_LEN {
            return Err(SignalError::BadWindowLength {
                len: samples.len(),
                expected: WINDOW_LEN,
            });
        }
        for (index, &value) in samples.iter().enumerate() {
            if !value.is_finite() {
                return Err(SignalError::NonFinite { index });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(SignalError::OutOfRange { value, index });
            }
        }
        Ok(Self { samples, label })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

/// Labeled windows split for training, validation and testing.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<SignalWindow>,
    pub val: Vec<SignalWindow>,
    pub test: Vec<SignalWindow>,
    pub seed: u64,
    /// Total windows per class across all splits, indexed by class id.
    pub class_counts: [usize; NUM_CLASSES],
}

/// Train/val/test fractions. Must sum to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

/// Cut a recording into fixed 2048-sample windows starting every `stride`
/// samples. Returns raw (unnormalized) windows.
pub fn segment(rec: &RawRecording, stride: usize) -> Result<Vec<Vec<f64>>, SignalError> {
    if stride == 0 {
        return Err(SignalError::Config("stride must be >= 1".into()));
    }
    let len = rec.len();
    if len < WINDOW_LEN {
        return Err(SignalError::TooShort {
            len,
            min: WINDOW_LEN,
        });
    }
    let count = (len - WINDOW_LEN) / stride + 1;
    Ok((0..count)
        .map(|i| rec.samples[i * stride..i * stride + WINDOW_LEN].to_vec())
        .collect())
}

/// Rescale a raw window so its minimum maps to 0 and its maximum to 1.
/// A constant window maps to all 0.5, keeping values in range without a
/// division by zero.
pub fn minmax_normalize(raw: &[f64]) -> Result<Vec<f64>, SignalError> {
    if let Some(index) = raw.iter().position(|v| !v.is_finite()) {
        return Err(SignalError::NonFinite { index });
    }
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.5; raw.len()]);
    }
    let span = max - min;
    Ok(raw.iter().map(|v| ((v - min) / span).clamp(0.0, 1.0)).collect())
}

/// Segment and normalize a recording into labeled windows.
pub fn windows_from_recording(
    rec: &RawRecording,
    stride: usize,
) -> Result<Vec<SignalWindow>, SignalError> {
    segment(rec, stride)?
        .iter()
        .map(|raw| SignalWindow::new(minmax_normalize(raw)?, rec.label))
        .collect()
}

/// Per-class stratified shuffle-and-split, deterministic for a fixed seed.
///
/// Each class is shuffled with its own stream keyed on `(seed, class id)`
/// so membership does not depend on how many other classes exist.
pub fn split(
    windows: Vec<SignalWindow>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Dataset, SignalError> {
    let sum = ratios.train + ratios.val + ratios.test;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SignalError::Config(format!("split ratios sum to {sum}, want 1")));
    }
    if ratios.train <= 0.0 || ratios.val <= 0.0 || ratios.test <= 0.0 {
        return Err(SignalError::Config("all split ratios must be positive".into()));
    }

    let mut by_class: Vec<Vec<SignalWindow>> = (0..NUM_CLASSES).map(|_| Vec::new()).collect();
    for w in windows {
        by_class[w.label.id()].push(w);
    }
    let mut class_counts = [0usize; NUM_CLASSES];
    for (id, group) in by_class.iter().enumerate() {
        class_counts[id] = group.len();
        if group.is_empty() {
            return Err(SignalError::Config(format!(
                "class {} has no windows",
                FaultClass::from_id(id).expect("valid id")
            )));
        }
        if group.len() < 5 {
            return Err(SignalError::Config(format!(
                "class {} has only {} windows, need at least 5 to split",
                FaultClass::from_id(id).expect("valid id"),
                group.len()
            )));
        }
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (id, mut group) in by_class.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(id as u64));
        group.shuffle(&mut rng);
        let n = group.len();
        let n_train = (n as f64 * ratios.train).round() as usize;
        let n_val = (n as f64 * ratios.val).round() as usize;
        let n_train = n_train.min(n);
        let n_val = n_val.min(n - n_train);
        let mut it = group.into_iter();
        train.extend(it.by_ref().take(n_train));
        val.extend(it.by_ref().take(n_val));
        test.extend(it);
    }
    Ok(Dataset {
        train,
        val,
        test,
        seed,
        class_counts,
    })
}
