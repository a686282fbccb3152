//! Laser feedback interferometry under triangular FMCW current modulation.
//!
//! The photodiode power follows `P0 * (1 + m * cos(phi))` with the phase
//! `phi = 4 pi n L(t) / lambda(t)`. Ramping the drive current tunes
//! `lambda`, which turns a fixed target distance into a beat tone
//!
//! ```text
//! f0 = 2 L / lambda^2 * (dlambda/dI) * (dI/dt)
//! ```
//!
//! and target motion shifts it by the Doppler frequency
//! `fd = 2 v cos(gamma) / lambda`. The up ramp sees `f0 + fd`, the down
//! ramp `f0 - fd`, so half-sum and half-difference separate the two.
//!
//! Weak feedback is assumed throughout, so the feedback phase equals the
//! stimulus phase and no excess-phase equation is solved.
//!
//! Sign convention: positive velocity means the target recedes along the
//! beam, and a receding target shows `f_up > f_down`. "Up" is the ramp on
//! which the optical frequency rises.

use std::f64::consts::PI;
use std::io::{self, Read, Write};
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::par::Exec;
use crate::rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LfiError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no spectral peak above the noise floor in the {0} ramp")]
    NoPeak(RampHalf),
    #[error("incidence angle leaves no velocity component along the beam")]
    DegenerateGeometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RampHalf {
    Up,
    Down,
}

impl std::fmt::Display for RampHalf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RampHalf::Up => "up",
            RampHalf::Down => "down",
        })
    }
}

/// Physical constants of one LFI sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaserParams {
    /// Center wavelength in meters.
    pub wavelength: f64,
    /// Wavelength tuning with drive current, meters per ampere.
    pub tuning_coefficient: f64,
    /// Angle between beam and surface normal, radians.
    pub incidence_angle: f64,
    /// Unattenuated optical output power, watts.
    pub base_power: f64,
    /// Feedback modulation depth.
    pub modulation_depth: f64,
    /// Refractive index of the external cavity.
    pub external_index: f64,
}

impl Default for LaserParams {
    fn default() -> Self {
        Self {
            wavelength: 850e-9,
            tuning_coefficient: 0.4e-9 / 1e-3,
            incidence_angle: 45f64.to_radians(),
            base_power: 1e-3,
            modulation_depth: 0.1,
            external_index: 1.0,
        }
    }
}

impl LaserParams {
    pub fn validate(&self) -> Result<(), LfiError> {
        let bad = |m: &str| Err(LfiError::InvalidConfig(m.to_string()));
        if !(self.wavelength > 0.0) {
            return bad("wavelength must be positive");
        }
        if !(self.tuning_coefficient > 0.0) {
            return bad("tuning coefficient must be positive");
        }
        if !(0.0..PI / 2.0).contains(&self.incidence_angle) {
            return bad("incidence angle must lie in [0, pi/2)");
        }
        if !(0.0..1.0).contains(&self.modulation_depth) {
            return bad("modulation depth must lie in [0, 1)");
        }
        if !(self.external_index > 0.0) {
            return bad("external refractive index must be positive");
        }
        Ok(())
    }
}

/// Triangular current modulation and acquisition settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampConfig {
    /// Triangle frequency in hertz; one up and one down ramp per period.
    pub update_rate: f64,
    /// Peak-to-peak current swing in amperes.
    pub current_swing: f64,
    /// ADC sample rate in samples per second.
    pub adc_rate: f64,
    /// FFT length per ramp segment after zero padding.
    pub spectrum_size: usize,
    /// A peak must exceed this multiple of the median bin magnitude.
    pub noise_floor_ratio: f64,
}

impl Default for RampConfig {
    fn default() -> Self {
        Self {
            update_rate: 1e3,
            current_swing: 4e-3,
            adc_rate: 4e6,
            spectrum_size: 16384,
            noise_floor_ratio: 5.0,
        }
    }
}

impl RampConfig {
    pub fn samples_per_ramp(&self) -> usize {
        (self.adc_rate / (2.0 * self.update_rate)).round() as usize
    }

    /// Current slope dI/dt in amperes per second.
    pub fn slope(&self) -> f64 {
        self.current_swing * 2.0 * self.update_rate
    }

    pub fn validate(&self) -> Result<(), LfiError> {
        let bad = |m: String| Err(LfiError::InvalidConfig(m));
        if !(self.update_rate > 0.0 && self.adc_rate > 0.0) {
            return bad("update and ADC rates must be positive".into());
        }
        if !(self.current_swing >= 0.0) {
            return bad("current swing must be non-negative".into());
        }
        let n = self.samples_per_ramp();
        if n < 64 {
            return bad(format!("{n} samples per ramp, need at least 64"));
        }
        if !self.spectrum_size.is_power_of_two() || self.spectrum_size < n {
            return bad(format!(
                "spectrum size {} must be a power of two >= {n}",
                self.spectrum_size
            ));
        }
        Ok(())
    }
}

/// Target state seen by the beam during one modulation period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionSample {
    pub time: f64,
    /// Sensor-to-surface distance in meters.
    pub distance: f64,
    /// Surface velocity in m/s; the beam sees `velocity * cos(gamma)`.
    pub velocity: f64,
}

/// Default bound on surface speed: about 300 deg/s on an 11.1 mm eye radius.
pub const MAX_SURFACE_SPEED: f64 = 0.06;

impl MotionSample {
    pub fn new(distance: f64, velocity: f64) -> Self {
        Self {
            time: 0.0,
            distance,
            velocity,
        }
    }

    pub fn validate(&self, max_speed: f64) -> Result<(), LfiError> {
        if !(self.distance > 0.0) {
            return Err(LfiError::InvalidConfig("distance must be positive".into()));
        }
        if !(self.velocity.abs() <= max_speed) {
            return Err(LfiError::InvalidConfig(format!(
                "|velocity| {} exceeds {max_speed} m/s",
                self.velocity
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampFrequencies {
    pub f_up: f64,
    pub f_down: f64,
}

/// Beat and signed Doppler frequency, both in hertz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeatDoppler {
    pub f0: f64,
    pub fd: f64,
}

impl BeatDoppler {
    pub fn ramp_frequencies(&self) -> RampFrequencies {
        RampFrequencies {
            f_up: self.f0 + self.fd,
            f_down: self.f0 - self.fd,
        }
    }
}

/// Photodiode samples for one full triangle period, up ramp first.
pub fn synth_interference(
    sample: &MotionSample,
    laser: &LaserParams,
    ramp: &RampConfig,
) -> Result<Vec<f64>, LfiError> {
    laser.validate()?;
    ramp.validate()?;
    let n = ramp.samples_per_ramp();
    let dt = 1.0 / ramp.adc_rate;
    let beam_speed = sample.velocity * laser.incidence_angle.cos();
    let swing = ramp.current_swing;
    let out = (0..2 * n)
        .map(|i| {
            let t = i as f64 * dt;
            // current offset around the ramp midpoint, so `wavelength` is the
            // mean wavelength of each ramp
            let di = if i < n {
                -0.5 * swing + swing * i as f64 / n as f64
            } else {
                0.5 * swing - swing * (i - n) as f64 / n as f64
            };
            let lambda = laser.wavelength + laser.tuning_coefficient * di;
            let path = sample.distance - beam_speed * t;
            let phase = 4.0 * PI * laser.external_index * path / lambda;
            laser.base_power * (1.0 + laser.modulation_depth * phase.cos())
        })
        .collect();
    Ok(out)
}

/// Reusable FFT plan for ramp spectra.
pub struct RampAnalyzer {
    ramp: RampConfig,
    fft: Arc<dyn Fft<f64>>,
}

impl RampAnalyzer {
    pub fn new(ramp: RampConfig) -> Result<Self, LfiError> {
        ramp.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(ramp.spectrum_size);
        Ok(Self { ramp, fft })
    }

    /// Magnitude spectrum (bins `0..=size/2`) of one mean-removed segment.
    pub fn magnitude_spectrum(&self, segment: &[f64]) -> Vec<f64> {
        let size = self.ramp.spectrum_size;
        let mean = segment.iter().sum::<f64>() / segment.len() as f64;
        let mut buf: Vec<Complex<f64>> = segment
            .iter()
            .map(|&x| Complex::new(x - mean, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(size)
            .collect();
        self.fft.process(&mut buf);
        buf[..=size / 2].iter().map(|c| c.norm()).collect()
    }

    fn peak_frequency(&self, segment: &[f64], half: RampHalf) -> Result<f64, LfiError> {
        let mag = self.magnitude_spectrum(segment);
        let (k, &peak) = mag
            .iter()
            .enumerate()
            .skip(1)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("spectrum has more than one bin");
        let mut sorted = mag.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        if !(peak > self.ramp.noise_floor_ratio * median) {
            return Err(LfiError::NoPeak(half));
        }
        let last = mag.len() - 1;
        let left = mag[k - 1];
        // the Nyquist bin mirrors onto itself
        let right = if k == last { mag[k - 1] } else { mag[k + 1] };
        let denom = left - 2.0 * peak + right;
        let delta = if denom.abs() > 0.0 {
            (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        Ok((k as f64 + delta) * self.ramp.adc_rate / self.ramp.spectrum_size as f64)
    }

    pub fn extract(&self, signal: &[f64]) -> Result<RampFrequencies, LfiError> {
        let n = self.ramp.samples_per_ramp();
        if signal.len() != 2 * n {
            return Err(LfiError::InvalidConfig(format!(
                "signal has {} samples, ramp config expects {}",
                signal.len(),
                2 * n
            )));
        }
        let (up, down) = signal.split_at(n);
        Ok(RampFrequencies {
            f_up: self.peak_frequency(up, RampHalf::Up)?,
            f_down: self.peak_frequency(down, RampHalf::Down)?,
        })
    }
}

/// Dominant frequency of each ramp half, refined by three-point parabolic
/// interpolation of the magnitude spectrum.
pub fn extract_ramp_freqs(signal: &[f64], ramp: &RampConfig) -> Result<RampFrequencies, LfiError> {
    RampAnalyzer::new(*ramp)?.extract(signal)
}

pub fn combine_freqs(rf: &RampFrequencies) -> BeatDoppler {
    BeatDoppler {
        f0: (rf.f_up + rf.f_down) / 2.0,
        fd: (rf.f_up - rf.f_down) / 2.0,
    }
}

/// Beat frequency expected for a static target at `distance`.
pub fn distance_to_freq(distance: f64, laser: &LaserParams, ramp: &RampConfig) -> f64 {
    2.0 * laser.external_index * distance / laser.wavelength.powi(2)
        * laser.tuning_coefficient
        * ramp.slope()
}

pub fn freq_to_distance(f0: f64, laser: &LaserParams, ramp: &RampConfig) -> Result<f64, LfiError> {
    let k = 2.0 * laser.external_index * laser.tuning_coefficient * ramp.slope();
    if k == 0.0 {
        return Err(LfiError::InvalidConfig("current ramp slope is zero".into()));
    }
    Ok(f0 * laser.wavelength.powi(2) / k)
}

/// Doppler frequency for a surface velocity.
pub fn velocity_to_freq(velocity: f64, laser: &LaserParams) -> f64 {
    2.0 * laser.external_index * velocity * laser.incidence_angle.cos() / laser.wavelength
}

pub fn freq_to_velocity(fd: f64, laser: &LaserParams) -> Result<f64, LfiError> {
    let c = laser.incidence_angle.cos();
    if c.abs() < 1e-12 {
        return Err(LfiError::DegenerateGeometry);
    }
    Ok(fd * laser.wavelength / (2.0 * laser.external_index * c))
}

/// Distance and velocity recovered from one modulation period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub distance: f64,
    pub velocity: f64,
}

impl RampAnalyzer {
    pub fn measure(&self, signal: &[f64], laser: &LaserParams) -> Result<Measurement, LfiError> {
        let bd = combine_freqs(&self.extract(signal)?);
        Ok(Measurement {
            distance: freq_to_distance(bd.f0, laser, &self.ramp)?,
            velocity: freq_to_velocity(bd.fd, laser)?,
        })
    }
}

/// Synthesizes and measures every sample; results are in input order.
pub fn roundtrip_batch(
    samples: &[MotionSample],
    laser: &LaserParams,
    ramp: &RampConfig,
    exec: Exec,
) -> Result<Vec<Measurement>, LfiError> {
    let analyzer = RampAnalyzer::new(*ramp)?;
    exec.map(samples, |s| {
        let signal = synth_interference(s, laser, ramp)?;
        analyzer.measure(&signal, laser)
    })
    .into_iter()
    .collect()
}

/// Additive measurement noise after frequency extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Distance noise standard deviation, meters.
    pub distance_std: f64,
    /// Velocity noise standard deviation, m/s.
    pub velocity_std: f64,
}

/// Eye radius used to turn angular into surface velocity, meters.
pub const EYE_RADIUS: f64 = 11.11e-3;

impl NoiseConfig {
    pub fn from_angular(distance_std: f64, velocity_deg_per_s: f64, eye_radius: f64) -> Self {
        Self {
            distance_std,
            velocity_std: velocity_deg_per_s.to_radians() * eye_radius,
        }
    }

    pub fn none() -> Self {
        Self {
            distance_std: 0.0,
            velocity_std: 0.0,
        }
    }
}

impl Default for NoiseConfig {
    /// 66.85 um distance and 2.95 deg/s velocity noise.
    fn default() -> Self {
        Self::from_angular(66.85e-6, 2.95, EYE_RADIUS)
    }
}

/// Distance and velocity traces of one sensor, sample-aligned.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LfiTrace {
    pub distance: Vec<f64>,
    pub velocity: Vec<f64>,
}

pub fn add_sensor_noise(trace: &LfiTrace, noise: &NoiseConfig, seed: u64) -> LfiTrace {
    fn channel(x: &[f64], std: f64, seed: u64, label: &str) -> Vec<f64> {
        if std == 0.0 {
            return x.to_vec();
        }
        let mut r = rng::sub_rng(seed, label);
        x.iter()
            .map(|&v| {
                let z: f64 = StandardNormal.sample(&mut r);
                v + std * z
            })
            .collect()
    }
    LfiTrace {
        distance: channel(&trace.distance, noise.distance_std, seed, "distance"),
        velocity: channel(&trace.velocity, noise.velocity_std, seed, "velocity"),
    }
}

const WAVEFORM_MAGIC: &[u8; 4] = b"LFI1";

/// Writes a waveform dump: `LFI1`, u32 sample count, u32 ADC rate in hertz,
/// u32 reserved (zero), then little-endian f64 samples.
pub fn write_waveform<W: Write>(mut w: W, samples: &[f64], adc_rate: u32) -> io::Result<()> {
    let count = u32::try_from(samples.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "too many samples"))?;
    w.write_all(WAVEFORM_MAGIC)?;
    w.write_all(&count.to_le_bytes())?;
    w.write_all(&adc_rate.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    for s in samples {
        w.write_all(&s.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_waveform<R: Read>(mut r: R) -> io::Result<(Vec<f64>, u32)> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..4] != WAVEFORM_MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad waveform magic"));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let count = word(4) as usize;
    let rate = word(8);
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    let samples = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((samples, rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_ramp() -> RampConfig {
        RampConfig {
            current_swing: 2e-3,
            ..RampConfig::default()
        }
    }

    #[test]
    fn beat_frequency_of_reference_setup() {
        // f0 = 2 * 0.025 / (850e-9)^2 * 4e-7 * (2e-3 * 2 * 1e3)
        let f0 = distance_to_freq(0.025, &LaserParams::default(), &example_ramp());
        let expected = 2.0 * 0.025 / (850e-9f64 * 850e-9) * 4e-7 * 4.0;
        assert!((f0 - expected).abs() < 1e-6);
        assert!((f0 - 110.7e3).abs() < 0.05e3, "{f0}");
    }

    #[test]
    fn no_modulation_gives_constant_power() {
        let laser = LaserParams {
            modulation_depth: 0.0,
            ..LaserParams::default()
        };
        let s = synth_interference(&MotionSample::new(0.025, 0.01), &laser, &example_ramp()).unwrap();
        assert_eq!(s.len(), 4000);
        assert!(s.iter().all(|&x| x == laser.base_power));
    }

    #[test]
    fn static_target_has_symmetric_ramps() {
        let ramp = example_ramp();
        let bin = ramp.adc_rate / ramp.spectrum_size as f64;
        let s = synth_interference(&MotionSample::new(0.025, 0.0), &LaserParams::default(), &ramp).unwrap();
        let rf = extract_ramp_freqs(&s, &ramp).unwrap();
        assert!((rf.f_up - rf.f_down).abs() < bin, "{rf:?}");
        let expected = distance_to_freq(0.025, &LaserParams::default(), &ramp);
        assert!((rf.f_up - expected).abs() < bin, "{rf:?} vs {expected}");
    }

    #[test]
    fn pure_tone_is_located() {
        let ramp = RampConfig::default();
        let n = ramp.samples_per_ramp();
        let s: Vec<f64> = (0..2 * n)
            .map(|i| (2.0 * PI * 100e3 * i as f64 / ramp.adc_rate).cos())
            .collect();
        let rf = extract_ramp_freqs(&s, &ramp).unwrap();
        let bin = ramp.adc_rate / ramp.spectrum_size as f64;
        assert!((rf.f_up - 100e3).abs() < bin, "{rf:?}");
        assert!((rf.f_down - 100e3).abs() < bin, "{rf:?}");
    }

    #[test]
    fn zero_signal_has_no_peak() {
        let ramp = RampConfig::default();
        let s = vec![0.0; 2 * ramp.samples_per_ramp()];
        assert_eq!(extract_ramp_freqs(&s, &ramp), Err(LfiError::NoPeak(RampHalf::Up)));
    }

    #[test]
    fn wrong_length_is_rejected() {
        let ramp = RampConfig::default();
        assert!(matches!(
            extract_ramp_freqs(&[1.0; 10], &ramp),
            Err(LfiError::InvalidConfig(_))
        ));
    }

    #[test]
    fn moving_target_matches_beat_plus_doppler() {
        let laser = LaserParams::default();
        let ramp = example_ramp();
        let sample = MotionSample::new(0.025, 0.05);
        let s = synth_interference(&sample, &laser, &ramp).unwrap();
        let rf = extract_ramp_freqs(&s, &ramp).unwrap();
        let f0 = distance_to_freq(0.025, &laser, &ramp);
        let fd = velocity_to_freq(0.05, &laser);
        assert!(((rf.f_up - (f0 + fd)) / (f0 + fd)).abs() < 0.01, "{rf:?}");
        assert!(((rf.f_down - (f0 - fd)) / (f0 - fd)).abs() < 0.01, "{rf:?}");
    }

    #[test]
    fn spectrum_matches_direct_dft() {
        // brute-force DFT oracle at a handful of bins
        let ramp = RampConfig {
            spectrum_size: 4096,
            ..RampConfig::default()
        };
        let analyzer = RampAnalyzer::new(ramp).unwrap();
        let seg: Vec<f64> = (0..2000).map(|i| ((i * 37 % 101) as f64).sin() + 0.3).collect();
        let mag = analyzer.magnitude_spectrum(&seg);
        let mean = seg.iter().sum::<f64>() / seg.len() as f64;
        for k in [0usize, 1, 17, 500, 2048] {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &x) in seg.iter().enumerate() {
                let a = -2.0 * PI * (k * i) as f64 / 4096.0;
                re += (x - mean) * a.cos();
                im += (x - mean) * a.sin();
            }
            let direct = (re * re + im * im).sqrt();
            assert!((mag[k] - direct).abs() < 1e-8 * (1.0 + direct), "bin {k}");
        }
    }

    #[test]
    fn combine_examples() {
        let bd = combine_freqs(&RampFrequencies { f_up: 120e3, f_down: 100e3 });
        assert_eq!((bd.f0, bd.fd), (110e3, 10e3));
        let bd = combine_freqs(&RampFrequencies { f_up: 100e3, f_down: 120e3 });
        assert_eq!(bd.fd, -10e3);
        let bd = combine_freqs(&RampFrequencies { f_up: 5e4, f_down: 5e4 });
        assert_eq!(bd.fd, 0.0);
    }

    #[test]
    fn conversion_examples() {
        let laser = LaserParams::default();
        let ramp = example_ramp();
        assert_eq!(freq_to_distance(0.0, &laser, &ramp).unwrap(), 0.0);
        let d = freq_to_distance(110.7e3, &laser, &ramp).unwrap();
        assert!((d - 0.025).abs() < 0.1e-3, "{d}");
        assert_eq!(freq_to_velocity(0.0, &laser).unwrap(), 0.0);

        let fd = velocity_to_freq(0.1, &laser);
        assert!((fd - 166.4e3).abs() < 0.05e3, "{fd}");
        assert!((freq_to_velocity(fd, &laser).unwrap() - 0.1).abs() < 1e-12);

        let head_on = LaserParams {
            incidence_angle: 0.0,
            ..laser
        };
        let v = freq_to_velocity(235.294e3, &head_on).unwrap();
        assert!((v - 0.1).abs() < 1e-6, "{v}");

        let grazing = LaserParams {
            incidence_angle: PI / 2.0,
            ..laser
        };
        assert_eq!(freq_to_velocity(1e3, &grazing), Err(LfiError::DegenerateGeometry));
        let flat = RampConfig {
            current_swing: 0.0,
            ..ramp
        };
        assert!(freq_to_distance(1e3, &laser, &flat).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RampConfig::default().validate().is_ok());
        let few = RampConfig {
            adc_rate: 100e3,
            ..RampConfig::default()
        };
        assert!(few.validate().is_err());
        let not_pow2 = RampConfig {
            spectrum_size: 3000,
            ..RampConfig::default()
        };
        assert!(not_pow2.validate().is_err());
        let bad = LaserParams {
            modulation_depth: 1.0,
            ..LaserParams::default()
        };
        assert!(bad.validate().is_err());
        assert!(MotionSample::new(0.02, 0.07).validate(MAX_SURFACE_SPEED).is_err());
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let trace = LfiTrace {
            distance: vec![0.025; 100_000],
            velocity: vec![0.0; 100_000],
        };
        let noise = NoiseConfig::default();
        let a = add_sensor_noise(&trace, &noise, 11);
        let b = add_sensor_noise(&trace, &noise, 11);
        assert_eq!(a, b);
        let n = a.distance.len() as f64;
        let mean = a.distance.iter().sum::<f64>() / n;
        let std = (a.distance.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std / 66.85e-6 - 1.0).abs() < 0.03, "{std}");
        assert_eq!(add_sensor_noise(&trace, &NoiseConfig::none(), 3), trace);
        // 2.95 deg/s on an 11.11 mm radius
        assert!((noise.velocity_std - 5.72e-4).abs() < 1e-6, "{}", noise.velocity_std);
    }

    #[test]
    fn waveform_dump_layout() {
        let samples = [1.5, -2.0, 0.25];
        let mut buf = Vec::new();
        write_waveform(&mut buf, &samples, 4_000_000).unwrap();
        assert_eq!(buf.len(), 16 + 24);
        assert_eq!(&buf[..4], b"LFI1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 4_000_000);
        assert_eq!(&buf[16..24], &1.5f64.to_le_bytes());
        let (back, rate) = read_waveform(&buf[..]).unwrap();
        assert_eq!((back.as_slice(), rate), (&samples[..], 4_000_000));
    }
}
