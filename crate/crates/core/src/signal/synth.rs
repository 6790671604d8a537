//! Synthetic bearing-vibration generator.
//!
//! Desk-scale stand-in for real drive-end accelerometer recordings. The
//! healthy class is band-limited noise over a slow shaft hum; fault classes
//! add a quasi-periodic impulse train convolved with a decaying resonance.
//! The impulse period and ring-down are distinct per fault location
//! (inner race / ball / outer race) and the impulse amplitude grows with
//! the defect diameter, so the ten classes are separable after per-window
//! min-max normalization while leaving a realistic noise floor for
//! gradient attacks to exploit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    split, windows_from_recording, Dataset, FaultClass, FaultLocation, RawRecording, SignalError,
    SignalWindow, SplitRatios, DEFAULT_SAMPLE_RATE, WINDOW_LEN,
};

/// Samples between impulses for each fault location.
fn impulse_period(location: FaultLocation) -> usize {
    match location {
        FaultLocation::InnerRace => 85,
        FaultLocation::Ball => 123,
        FaultLocation::OuterRace => 161,
        FaultLocation::None => 0,
    }
}

/// Resonance (cycles/sample, decay constant in samples) per location.
fn resonance(location: FaultLocation) -> (f64, f64) {
    match location {
        FaultLocation::InnerRace => (0.24, 12.0),
        FaultLocation::Ball => (0.155, 18.0),
        FaultLocation::OuterRace => (0.09, 26.0),
        FaultLocation::None => (0.0, 1.0),
    }
}

/// Peak impulse amplitude as a function of defect diameter, relative to a
/// noise floor of roughly 0.7. Monotone in the diameter.
pub fn impulse_amplitude(diameter: f64) -> f64 {
    3.0 + (diameter - 0.007) * 360.0
}

/// Deterministically synthesize one recording for `(class, seed)`.
pub fn synth_bearing(class: FaultClass, length: usize, seed: u64) -> Result<RawRecording, SignalError> {
    if length < WINDOW_LEN {
        return Err(SignalError::TooShort {
            len: length,
            min: WINDOW_LEN,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class.id() as u64 + 1);
    let gauss = Normal::new(0.0, 1.0).expect("valid normal");

    // Band-limited noise floor: white gaussian smoothed with a short
    // moving average, so neighbouring samples are correlated like a
    // low-passed accelerometer channel.
    let white: Vec<f64> = (0..length + 4).map(|_| gauss.sample(&mut rng)).collect();
    let mut samples: Vec<f64> = white.windows(5).map(|w| w.iter().sum::<f64>() / 5.0 * 1.4).collect();
    debug_assert_eq!(samples.len(), length);

    // Slow shaft hum shared by every class.
    let hum_freq = 2.0 * std::f64::consts::PI * 29.5 / DEFAULT_SAMPLE_RATE as f64;
    let hum2_freq = 2.0 * std::f64::consts::PI * 47.0 / DEFAULT_SAMPLE_RATE as f64;
    let (p1, p2) = (rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU));
    for (i, s) in samples.iter_mut().enumerate() {
        let t = i as f64;
        *s += 0.5 * (hum_freq * t + p1).sin() + 0.3 * (hum2_freq * t + p2).sin();
    }

    if let Some(diameter) = class.diameter() {
        let location = class.location();
        let period = impulse_period(location);
        let (freq, tau) = resonance(location);
        let amp = impulse_amplitude(diameter);

        // Ring-down kernel excited by each impact.
        let klen = (4.0 * tau) as usize;
        let kernel: Vec<f64> = (0..klen)
            .map(|t| {
                let tf = t as f64;
                (-tf / tau).exp() * (2.0 * std::f64::consts::PI * freq * tf).sin()
            })
            .collect();

        // Quasi-periodic impacts with per-hit amplitude and timing jitter.
        let mut pos = rng.gen_range(0..period);
        while pos < length {
            let hit = amp * rng.gen_range(0.85..1.15);
            for (k, &kv) in kernel.iter().enumerate() {
                if pos + k >= length {
                    break;
                }
                samples[pos + k] += hit * kv;
            }
            let jitter: i64 = rng.gen_range(-2..=2);
            pos = (pos as i64 + period as i64 + jitter).max(pos as i64 + 1) as usize;
        }
    }

    RawRecording::new(
        samples,
        DEFAULT_SAMPLE_RATE,
        class,
        format!("synth:{}:{}", class.name(), seed),
    )
}

/// Synthesize `count` normalized windows of one class using windows taken
/// every `stride` samples from a single recording.
pub fn synth_class_windows(
    class: FaultClass,
    count: usize,
    stride: usize,
    seed: u64,
) -> Result<Vec<SignalWindow>, SignalError> {
    if count == 0 {
        return Err(SignalError::Config("window count must be >= 1".into()));
    }
    if stride == 0 {
        return Err(SignalError::Config("stride must be >= 1".into()));
    }
    let length = (count - 1) * stride + WINDOW_LEN;
    let rec = synth_bearing(class, length, seed)?;
    let mut windows = windows_from_recording(&rec, stride)?;
    windows.truncate(count);
    Ok(windows)
}

/// Full synthetic dataset: `windows_per_class` per class, stratified split.
pub fn synth_dataset(
    windows_per_class: usize,
    stride: usize,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Dataset, SignalError> {
    let mut all = Vec::with_capacity(windows_per_class * FaultClass::ALL.len());
    for class in FaultClass::ALL {
        all.extend(synth_class_windows(class, windows_per_class, stride, seed)?);
    }
    split(all, ratios, seed)
}
