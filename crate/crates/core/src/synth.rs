//! Synthetic recordings of the seven activities.
//!
//! Eye movements are generated as angular gaze velocity at 1 kHz:
//! triangular saccade pulses, slow fixation drift, smooth-pursuit episodes
//! and blinks. Two LFI sensors observe the same eye through different
//! mounting projections; their distance channels switch between the iris,
//! retina (beam inside the pupil) and lid (blink) plateaus. The head IMU is
//! gravity plus periodic gait/pedal oscillation, sporadic head turns and
//! broadband vibration at 860 Hz.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::activity::{Activity, SampleLabel, CHANNELS, IMU_RATE, LFI_RATE, NUM_ACTIVITIES};
use crate::config::{Config, ConfigError};
use crate::dataset::{Channel, SensorStream};
use crate::lfi::{self, LfiTrace, NoiseConfig, EYE_RADIUS};
use crate::par::Exec;
use crate::rng::{self, Rng};

/// Largest saccade the generator emits, degrees. Together with the 80 ms
/// duration cap this keeps peak speed at or below 300 deg/s.
pub const MAX_SACCADE_AMPLITUDE: f64 = 12.0;
const MAX_SACCADE_DURATION: f64 = 0.080;
const MIN_SACCADE_DURATION: f64 = 0.020;
const GAZE_BOUND: f64 = 12.0;
const GRAVITY: f64 = 9.81;

/// Mean recording time per activity in the original study, seconds, in
/// [`Activity::ALL`] order.
pub const REFERENCE_DURATIONS: [f64; NUM_ACTIVITIES] = [597.0, 506.0, 619.0, 649.0, 865.0, 673.0, 534.0];

/// Sensor-to-eye distances, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeGeometry {
    pub iris: f64,
    pub retina: f64,
    pub lid: f64,
}

impl Default for EyeGeometry {
    fn default() -> Self {
        Self {
            iris: 25.0e-3,
            lid: 20.5e-3,
            retina: 44.5e-3,
        }
    }
}

impl EyeGeometry {
    pub fn is_valid(&self) -> bool {
        self.lid > 0.0 && self.lid < self.iris && self.iris < self.retina
    }
}

/// How one LFI sensor sees gaze rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorMount {
    /// Weight of horizontal gaze velocity in the measured surface velocity.
    pub horizontal: f64,
    /// Weight of vertical gaze velocity (and lid motion).
    pub vertical: f64,
    /// Offset added to every distance, meters.
    pub distance_offset: f64,
    /// Gaze angle along the sensor axis at which the beam enters the pupil.
    pub pupil_center: f64,
    pub pupil_half_width: f64,
}

/// Sensor 1 sits below the lens and is vertical-dominant; sensor 2 sits in
/// the temple and is horizontal-dominant.
pub const MOUNTS: [SensorMount; 2] = [
    SensorMount {
        horizontal: 0.35,
        vertical: 0.94,
        distance_offset: 0.0,
        pupil_center: 4.0,
        pupil_half_width: 2.0,
    },
    SensorMount {
        horizontal: 0.94,
        vertical: 0.35,
        distance_offset: 2.0e-3,
        pupil_center: 3.0,
        pupil_half_width: 2.0,
    },
];

#[derive(Debug, Clone, PartialEq)]
pub struct EyeProfile {
    /// Mean saccades per second.
    pub saccade_rate: f64,
    /// Uniform amplitude range, degrees.
    pub saccade_amplitude: (f64, f64),
    /// Mean share of each saccade's amplitude along the vertical axis.
    pub vertical_share: f64,
    /// Probability that a saccade is followed after a short 100-200 ms gap.
    pub burstiness: f64,
    pub pursuit_rate: f64,
    /// Pursuit speed range, deg/s.
    pub pursuit_speed: (f64, f64),
    /// Pursuit duration range, seconds.
    pub pursuit_duration: (f64, f64),
    pub blink_rate: f64,
    /// Mean blink duration, seconds.
    pub blink_duration: f64,
    /// Small left-to-right saccades along a line, then a large return sweep.
    pub reading_pattern: bool,
    pub saccades_per_line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImuProfile {
    /// Static head pitch, degrees; tilts gravity into the x axis.
    pub head_pitch: f64,
    /// Sporadic head turns/nods per second.
    pub head_move_rate: f64,
    /// Peak angular speed of a head move, rad/s.
    pub head_move_speed: f64,
    /// Base oscillation frequency range (gait/cadence), Hz.
    pub oscillation_freq: (f64, f64),
    /// Accelerometer oscillation amplitude (m/s^2) per axis at 0.5x, 1x and
    /// 2x the base frequency.
    pub accel_oscillation: [[f64; 3]; 3],
    /// Gyroscope oscillation amplitude (rad/s), same layout.
    pub gyro_oscillation: [[f64; 3]; 3],
    /// Broadband vibration std, m/s^2 and rad/s.
    pub accel_vibration: f64,
    pub gyro_vibration: f64,
}

const HARMONICS: [f64; 3] = [0.5, 1.0, 2.0];
const ACCEL_JITTER: f64 = 0.02;
const GYRO_JITTER: f64 = 0.003;

impl ImuProfile {
    /// Expected signal power added on top of gravity, summed over all six
    /// axes.
    pub fn motion_power(&self) -> f64 {
        let osc: f64 = self
            .accel_oscillation
            .iter()
            .chain(self.gyro_oscillation.iter())
            .flatten()
            .map(|a| a * a / 2.0)
            .sum();
        // half-sine head moves of ~0.55 s on one axis
        let moves = self.head_move_rate * self.head_move_speed.powi(2) * 0.5 * 0.55;
        osc + 3.0 * (self.accel_vibration.powi(2) + self.gyro_vibration.powi(2)) + moves
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivityProfile {
    pub activity: Activity,
    pub eye: EyeProfile,
    pub imu: ImuProfile,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("profile `{activity}`: {message}")]
    InvalidProfile { activity: String, message: String },
    #[error("participant `{id}`: {message}")]
    InvalidParticipant { id: String, message: String },
}

fn invalid(activity: &str, message: impl Into<String>) -> SynthError {
    SynthError::InvalidProfile {
        activity: activity.to_string(),
        message: message.into(),
    }
}

impl ActivityProfile {
    pub fn validate(&self) -> Result<(), SynthError> {
        let name = self.activity.name();
        let e = &self.eye;
        let rates = [e.saccade_rate, e.pursuit_rate, e.blink_rate, self.imu.head_move_rate];
        if rates.iter().any(|r| !(*r >= 0.0)) {
            return Err(invalid(name, "rates must be non-negative"));
        }
        let (lo, hi) = e.saccade_amplitude;
        if !(lo > 0.0 && lo <= hi && hi <= MAX_SACCADE_AMPLITUDE) {
            return Err(invalid(name, format!("saccade amplitude must lie in (0, {MAX_SACCADE_AMPLITUDE}]")));
        }
        if !(0.0..=1.0).contains(&e.vertical_share) || !(0.0..1.0).contains(&e.burstiness) {
            return Err(invalid(name, "vertical_share must be in [0,1] and burstiness in [0,1)"));
        }
        if e.saccade_rate > 0.0 && 1.0 / e.saccade_rate <= 0.15 * e.burstiness {
            return Err(invalid(name, "saccade rate too high for the burst gap"));
        }
        if !(e.blink_duration > 0.0) {
            return Err(invalid(name, "blink duration must be positive"));
        }
        if self.activity == Activity::Read && !e.reading_pattern {
            return Err(invalid(name, "the read profile must use the reading pattern"));
        }
        if e.reading_pattern && e.saccades_per_line == 0 {
            return Err(invalid(name, "saccades_per_line must be positive"));
        }
        let (flo, fhi) = self.imu.oscillation_freq;
        if !(flo > 0.0 && flo <= fhi) {
            return Err(invalid(name, "oscillation frequency range must be positive"));
        }
        Ok(())
    }

    /// Profile used for the unlabeled gaps between activities.
    pub fn transition() -> ActivityProfile {
        ActivityProfile {
            activity: Activity::Talk,
            eye: EyeProfile {
                saccade_rate: 1.5,
                saccade_amplitude: (3.0, 10.0),
                vertical_share: 0.4,
                burstiness: 0.0,
                pursuit_rate: 0.0,
                pursuit_speed: (8.0, 12.0),
                pursuit_duration: (0.5, 1.0),
                blink_rate: 0.3,
                blink_duration: 0.2,
                reading_pattern: false,
                saccades_per_line: 0,
            },
            imu: ImuProfile {
                head_pitch: 5.0,
                head_move_rate: 0.8,
                head_move_speed: 0.8,
                oscillation_freq: (1.6, 2.0),
                accel_oscillation: [[0.1, 0.3, 0.1], [0.2, 0.1, 0.0], [0.0, 0.6, 0.2]],
                gyro_oscillation: [[0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.2, 0.0, 0.0]],
                accel_vibration: 0.1,
                gyro_vibration: 0.02,
            },
        }
    }
}

/// One profile per activity.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    profiles: Vec<ActivityProfile>,
}

impl ProfileSet {
    pub fn new(mut profiles: Vec<ActivityProfile>) -> Result<Self, SynthError> {
        profiles.sort_by_key(|p| p.activity);
        for a in Activity::ALL {
            if !profiles.iter().any(|p| p.activity == a) {
                return Err(ConfigError::MissingProfile(a.name().to_string()).into());
            }
        }
        if profiles.len() != NUM_ACTIVITIES {
            return Err(invalid("*", "duplicate activity profile"));
        }
        for p in &profiles {
            p.validate()?;
        }
        let stationary = profiles
            .iter()
            .filter(|p| !p.activity.is_physical())
            .map(|p| p.imu.motion_power())
            .fold(0.0, f64::max);
        for p in profiles.iter().filter(|p| p.activity.is_physical()) {
            if p.imu.motion_power() < 10.0 * stationary {
                return Err(invalid(
                    p.activity.name(),
                    "physical activity IMU motion must be at least 10x any stationary profile",
                ));
            }
        }
        Ok(Self { profiles })
    }

    pub fn get(&self, a: Activity) -> &ActivityProfile {
        &self.profiles[a.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ActivityProfile> {
        self.profiles.iter()
    }

    /// Reads `profile.<activity>.*` keys. Every activity must be present.
    pub fn from_config(cfg: &Config) -> Result<Self, SynthError> {
        let mut profiles = Vec::with_capacity(NUM_ACTIVITIES);
        for a in Activity::ALL {
            let sec = cfg.section(&format!("profile.{}", a.name()));
            if sec.keys().next().is_none() {
                return Err(ConfigError::MissingProfile(a.name().to_string()).into());
            }
            profiles.push(profile_from_section(a, &sec)?);
        }
        Self::new(profiles)
    }
}

pub const PROFILE_KEYS: [&str; 20] = [
    "saccade_rate",
    "saccade_amplitude",
    "vertical_share",
    "burstiness",
    "pursuit_rate",
    "pursuit_speed",
    "pursuit_duration",
    "blink_rate",
    "blink_duration",
    "reading_pattern",
    "saccades_per_line",
    "imu.head_pitch",
    "imu.head_move_rate",
    "imu.head_move_speed",
    "imu.freq",
    "imu.acc_x",
    "imu.acc_y",
    "imu.acc_z",
    "imu.gyr",
    "imu.vibration",
];

fn pair(sec: &Config, key: &str, default: (f64, f64)) -> Result<(f64, f64), ConfigError> {
    match sec.get_list::<f64>(key)? {
        None => Ok(default),
        Some(v) if v.len() == 2 => Ok((v[0], v[1])),
        Some(_) => Err(ConfigError::Value {
            origin: sec.origin(key).cloned().expect("key present"),
            key: key.to_string(),
            message: "expected two comma-separated numbers".into(),
        }),
    }
}

fn triple(sec: &Config, key: &str) -> Result<[f64; 3], ConfigError> {
    match sec.get_list::<f64>(key)? {
        None => Ok([0.0; 3]),
        Some(v) if v.len() == 3 => Ok([v[0], v[1], v[2]]),
        Some(_) => Err(ConfigError::Value {
            origin: sec.origin(key).cloned().expect("key present"),
            key: key.to_string(),
            message: "expected three comma-separated numbers".into(),
        }),
    }
}

fn profile_from_section(activity: Activity, sec: &Config) -> Result<ActivityProfile, SynthError> {
    let allowed: Vec<&str> = PROFILE_KEYS.to_vec();
    sec.check_known(&allowed)?;
    let eye = EyeProfile {
        saccade_rate: sec.require("saccade_rate")?,
        saccade_amplitude: pair(sec, "saccade_amplitude", (3.0, 10.0))?,
        vertical_share: sec.get_or("vertical_share", 0.3)?,
        burstiness: sec.get_or("burstiness", 0.0)?,
        pursuit_rate: sec.get_or("pursuit_rate", 0.0)?,
        pursuit_speed: pair(sec, "pursuit_speed", (8.0, 15.0))?,
        pursuit_duration: pair(sec, "pursuit_duration", (0.8, 2.0))?,
        blink_rate: sec.require("blink_rate")?,
        blink_duration: sec.get_or("blink_duration", 0.2)?,
        reading_pattern: sec.get_or("reading_pattern", false)?,
        saccades_per_line: sec.get_or("saccades_per_line", 6)?,
    };
    // gyro oscillation: one amplitude per axis at the base frequency, plus
    // roll/yaw sway at half the base frequency
    let gyr = triple(sec, "imu.gyr")?;
    let vib = pair(sec, "imu.vibration", (0.0, 0.0))?;
    let imu = ImuProfile {
        head_pitch: sec.get_or("imu.head_pitch", 5.0)?,
        head_move_rate: sec.get_or("imu.head_move_rate", 0.0)?,
        head_move_speed: sec.get_or("imu.head_move_speed", 0.0)?,
        oscillation_freq: pair(sec, "imu.freq", (1.0, 1.0))?,
        accel_oscillation: [triple(sec, "imu.acc_x")?, triple(sec, "imu.acc_y")?, triple(sec, "imu.acc_z")?],
        gyro_oscillation: [[gyr[0], 0.0, 0.0], [0.0, gyr[1], 0.0], [gyr[2], 0.0, 0.0]],
        accel_vibration: vib.0,
        gyro_vibration: vib.1,
    };
    Ok(ActivityProfile { activity, eye, imu })
}

/// Noiseless LFI channels `v1, d1, v2, d2` at 1 kHz, velocities in m/s and
/// distances in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeTrajectory {
    pub v1: Vec<f64>,
    pub d1: Vec<f64>,
    pub v2: Vec<f64>,
    pub d2: Vec<f64>,
    /// Samples during which the lid covers the eye.
    pub blink: Vec<bool>,
}

/// Angular gaze velocity (deg/s) and lid surface velocity (m/s).
struct GazeSignal {
    omega_x: Vec<f64>,
    omega_y: Vec<f64>,
    lid_velocity: Vec<f64>,
    blink: Vec<bool>,
}

/// Adds a triangular velocity pulse whose samples sum (times dt) to
/// `amplitude` exactly.
fn add_pulse(buf: &mut [f64], start: usize, samples: usize, amplitude: f64, dt: f64) {
    let m = samples.max(2);
    let half = m as f64 / 2.0;
    let shape: Vec<f64> = (0..m)
        .map(|i| {
            let x = i as f64 + 0.5;
            if x <= half { x / half } else { (m as f64 - x) / half }
        })
        .collect();
    let norm: f64 = shape.iter().sum::<f64>() * dt;
    for (i, s) in shape.iter().enumerate() {
        if let Some(b) = buf.get_mut(start + i) {
            *b += amplitude * s / norm;
        }
    }
}

fn saccade_duration(amplitude: f64) -> f64 {
    // main-sequence duration, stretched so the peak stays under 300 deg/s
    let main = 0.0022 * amplitude + 0.021;
    let floor = 2.0 * amplitude / 300.0;
    main.max(floor).clamp(MIN_SACCADE_DURATION, MAX_SACCADE_DURATION)
}

fn toward_center(pos: f64, rng: &mut Rng) -> f64 {
    let p = (0.5 + 0.45 * (pos.abs() / GAZE_BOUND)).min(1.0);
    let toward = -pos.signum();
    let toward = if toward == 0.0 { 1.0 } else { toward };
    if pos.abs() >= GAZE_BOUND || rng.random::<f64>() < p {
        toward
    } else {
        -toward
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn exp_gap(rng: &mut Rng, rate: f64) -> f64 {
    if rate > 0.0 {
        Exp::new(rate).expect("positive rate").sample(rng)
    } else {
        f64::INFINITY
    }
}

/// Gaze position (deg) reached by slow movements alone, sampled lazily.
struct SlowPath {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl SlowPath {
    fn integrate(gx: &[f64], gy: &[f64], dt: f64) -> Self {
        let cum = |v: &[f64]| {
            let mut acc = 0.0;
            v.iter()
                .map(|w| {
                    acc += w * dt;
                    acc
                })
                .collect()
        };
        Self { x: cum(gx), y: cum(gy) }
    }

    fn at(&self, t: f64) -> (f64, f64) {
        let i = ((t * LFI_RATE) as usize).min(self.x.len().saturating_sub(1));
        self.x.get(i).zip(self.y.get(i)).map_or((0.0, 0.0), |(&x, &y)| (x, y))
    }
}

fn gen_gaze(eye: &EyeProfile, n: usize, tempo: f64, rng: &mut Rng) -> GazeSignal {
    let dt = 1.0 / LFI_RATE;
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut lid = vec![0.0; n];
    let mut blink = vec![false; n];
    let duration = n as f64 * dt;

    // fixation drift, AR(1) with a 50 ms time constant and 0.8 deg/s std
    let a = (-dt / 0.05f64).exp();
    let s = 0.8 * (1.0 - a * a).sqrt();
    let (mut dx, mut dy) = (0.0, 0.0);
    for i in 0..n {
        let zx: f64 = StandardNormal.sample(rng);
        let zy: f64 = StandardNormal.sample(rng);
        dx = a * dx + s * zx;
        dy = a * dy + s * zy;
        gx[i] += dx;
        gy[i] += dy;
    }

    // smooth pursuit: constant-velocity glides, mostly horizontal
    if eye.pursuit_rate > 0.0 {
        let (mut px, mut py) = (0.0, 0.0);
        let mut t = exp_gap(rng, eye.pursuit_rate * tempo);
        while t < duration {
            let speed = uniform(rng, eye.pursuit_speed);
            let len = uniform(rng, eye.pursuit_duration);
            let dir_x = toward_center(px, rng);
            let vy = rng.random_range(-0.3..0.3) * speed - 0.5 * py;
            let start = (t * LFI_RATE) as usize;
            let end = (((t + len) * LFI_RATE) as usize).min(n);
            for i in start..end {
                gx[i] += dir_x * speed;
                gy[i] += vy;
            }
            let span = end.saturating_sub(start) as f64 * dt;
            px += dir_x * speed * span;
            py += vy * span;
            t += len + exp_gap(rng, eye.pursuit_rate * tempo);
        }
    }
    let slow = SlowPath::integrate(&gx, &gy, dt);

    let saccade_rate = eye.saccade_rate * tempo;
    // gaze displacement from saccades scheduled so far
    let (mut sx, mut sy) = (0.0f64, 0.0f64);
    let saccade = |gx: &mut [f64], gy: &mut [f64], t: f64, dx: f64, dy: f64, sx: &mut f64, sy: &mut f64| {
        let d = saccade_duration(dx.hypot(dy));
        let start = (t * LFI_RATE) as usize;
        let m = (d * LFI_RATE).round() as usize;
        add_pulse(gx, start, m, dx, dt);
        add_pulse(gy, start, m, dy, dt);
        *sx += dx;
        *sy += dy;
        d
    };

    if eye.reading_pattern && saccade_rate > 0.0 {
        // lines run left to right from -6 deg; pages start at +6 deg
        let line_start = -6.0;
        let fix_mean = (1.0 / saccade_rate - 0.1).max(0.02);
        let mut t = 0.1 + exp_gap(rng, 1.0 / fix_mean);
        let mut on_line = 0usize;
        let mut line_len = eye.saccades_per_line;
        let mut line = 0usize;
        while t < duration {
            let (ox, oy) = slow.at(t);
            let d = if on_line < line_len {
                on_line += 1;
                let amp = uniform(rng, eye.saccade_amplitude);
                saccade(&mut gx, &mut gy, t, amp, 0.0, &mut sx, &mut sy)
            } else {
                on_line = 0;
                line += 1;
                line_len = (eye.saccades_per_line as i64 + rng.random_range(-1..=1)).max(1) as usize;
                let mut back = line_start - (sx + ox);
                let mut down = if line % 12 == 0 { 6.0 - (sy + oy) } else { -1.0 };
                // return sweep, split when it exceeds the amplitude cap
                let mut tt = t;
                while back.abs() > 1e-9 || down.abs() > 1e-9 {
                    let scale = (MAX_SACCADE_AMPLITUDE / back.hypot(down)).min(1.0);
                    let (ux, uy) = (back * scale, down * scale);
                    let dd = saccade(&mut gx, &mut gy, tt, ux, uy, &mut sx, &mut sy);
                    back -= ux;
                    down -= uy;
                    tt += dd;
                    if back.abs() > 1e-9 || down.abs() > 1e-9 {
                        tt += 0.15;
                    }
                }
                tt - t
            };
            t += d + 0.1 + exp_gap(rng, 1.0 / fix_mean);
        }
    } else if saccade_rate > 0.0 {
        let b = eye.burstiness;
        let long_mean = ((1.0 / saccade_rate - b * 0.15) / (1.0 - b)).max(0.1);
        let mut t = exp_gap(rng, 1.0 / long_mean);
        while t < duration {
            let (ox, oy) = slow.at(t);
            let amp = uniform(rng, eye.saccade_amplitude).min(MAX_SACCADE_AMPLITUDE);
            let share = (rng.random::<f64>() * 2.0 * eye.vertical_share).min(1.0);
            let dx = toward_center(sx + ox, rng) * amp * (1.0 - share).sqrt();
            let dy = toward_center(sy + oy, rng) * amp * share.sqrt();
            let d = saccade(&mut gx, &mut gy, t, dx, dy, &mut sx, &mut sy);
            let gap = if rng.random::<f64>() < b {
                rng.random_range(0.10..0.20)
            } else {
                exp_gap(rng, 1.0 / long_mean)
            };
            t += gap.max(d + 0.04);
        }
    }

    if eye.blink_rate > 0.0 {
        let mut t = exp_gap(rng, eye.blink_rate * tempo);
        while t < duration {
            let len = eye.blink_duration * rng.random_range(0.8..1.2);
            let start = (t * LFI_RATE) as usize;
            let m = (len * LFI_RATE).round() as usize;
            for b in blink.iter_mut().skip(start).take(m) {
                *b = true;
            }
            // lid closes fast, opens slower; peak surface speeds 25 and 15 mm/s
            let close = (m as f64 * 0.3) as usize;
            let open = (m as f64 * 0.4) as usize;
            add_pulse(&mut lid, start, close, -0.025 * close as f64 * dt / 2.0, dt);
            add_pulse(&mut lid, start + m - open, open, 0.015 * open as f64 * dt / 2.0, dt);
            t += len + 0.1 + exp_gap(rng, eye.blink_rate * tempo);
        }
    }

    GazeSignal {
        omega_x: gx,
        omega_y: gy,
        lid_velocity: lid,
        blink,
    }
}

fn project(gaze: &GazeSignal, geometry: &EyeGeometry) -> EyeTrajectory {
    let n = gaze.omega_x.len();
    let dt = 1.0 / LFI_RATE;
    let deg = EYE_RADIUS * PI / 180.0;
    let mut out: [(Vec<f64>, Vec<f64>); 2] = [
        (Vec::with_capacity(n), Vec::with_capacity(n)),
        (Vec::with_capacity(n), Vec::with_capacity(n)),
    ];
    let (mut x, mut y) = (0.0, 0.0);
    for i in 0..n {
        x += gaze.omega_x[i] * dt;
        y += gaze.omega_y[i] * dt;
        for (k, m) in MOUNTS.iter().enumerate() {
            let v = deg * (m.horizontal * gaze.omega_x[i] + m.vertical * gaze.omega_y[i])
                + m.vertical * gaze.lid_velocity[i];
            let along = m.horizontal * x + m.vertical * y;
            let d = if gaze.blink[i] {
                geometry.lid
            } else if (along - m.pupil_center).abs() < m.pupil_half_width {
                geometry.retina
            } else {
                geometry.iris
            };
            out[k].0.push(v);
            out[k].1.push(d + m.distance_offset);
        }
    }
    let [(v1, d1), (v2, d2)] = out;
    EyeTrajectory {
        v1,
        d1,
        v2,
        d2,
        blink: gaze.blink.clone(),
    }
}

fn eye_samples(profile: &ActivityProfile, n: usize, geometry: &EyeGeometry, tempo: f64, seed: u64) -> EyeTrajectory {
    let mut r = rng::sub_rng(seed, "eye");
    let gaze = gen_gaze(&profile.eye, n, tempo, &mut r);
    project(&gaze, geometry)
}

/// Noiseless eye channels for `duration` seconds at 1 kHz.
pub fn gen_eye_trajectory(profile: &ActivityProfile, duration: f64, geometry: &EyeGeometry, seed: u64) -> EyeTrajectory {
    let n = (duration * LFI_RATE).round() as usize;
    eye_samples(profile, n, geometry, 1.0, seed)
}

fn imu_samples(p: &ImuProfile, n: usize, tempo: f64, seed: u64) -> [Vec<f64>; 6] {
    let mut r = rng::sub_rng(seed, "imu");
    let dt = 1.0 / IMU_RATE;
    let f0 = uniform(&mut r, p.oscillation_freq);
    let wobble_phase = r.random_range(0.0..2.0 * PI);
    let phases: Vec<f64> = (0..18).map(|_| r.random_range(0.0..2.0 * PI)).collect();

    // sporadic head moves: half-sine pulses on pitch (y) or yaw (z)
    let mut head = [vec![0.0; n], vec![0.0; n]];
    if p.head_move_rate > 0.0 {
        let rate = p.head_move_rate * tempo;
        let mut t = exp_gap(&mut r, rate);
        while t < n as f64 * dt {
            let axis = r.random_range(0..2);
            let len = r.random_range(0.3..0.8);
            let peak = p.head_move_speed * r.random_range(0.5..1.0) * if r.random::<bool>() { 1.0 } else { -1.0 };
            let start = (t / dt) as usize;
            let m = (len / dt) as usize;
            for j in 0..m {
                if let Some(v) = head[axis].get_mut(start + j) {
                    *v += peak * (PI * (j as f64 + 0.5) / m as f64).sin();
                }
            }
            t += len + exp_gap(&mut r, rate);
        }
    }

    let pitch_a = (-dt / 2.0f64).exp();
    let pitch_s = 0.5f64.to_radians() * (1.0 - pitch_a * pitch_a).sqrt();
    let mut wander = 0.0;
    let mut phase = 0.0;
    let mut out: [Vec<f64>; 6] = Default::default();
    for o in out.iter_mut() {
        o.reserve(n);
    }
    for i in 0..n {
        let t = i as f64 * dt;
        let f = f0 * (1.0 + 0.03 * (2.0 * PI * t / 37.0 + wobble_phase).sin());
        phase += 2.0 * PI * f * dt;
        let z: f64 = StandardNormal.sample(&mut r);
        wander = pitch_a * wander + pitch_s * z;
        let pitch = p.head_pitch.to_radians() + wander;
        let gravity = [GRAVITY * pitch.sin(), 0.0, GRAVITY * pitch.cos()];
        for axis in 0..3 {
            let mut acc = gravity[axis];
            let mut gyr = 0.0;
            for (h, mult) in HARMONICS.iter().enumerate() {
                acc += p.accel_oscillation[axis][h] * (mult * phase + phases[axis * 3 + h]).sin();
                gyr += p.gyro_oscillation[axis][h] * (mult * phase + phases[9 + axis * 3 + h]).sin();
            }
            if axis >= 1 {
                gyr += head[axis - 1][i];
            }
            let (za, zb, zc, zd): (f64, f64, f64, f64) = (
                StandardNormal.sample(&mut r),
                StandardNormal.sample(&mut r),
                StandardNormal.sample(&mut r),
                StandardNormal.sample(&mut r),
            );
            acc += p.accel_vibration * za + ACCEL_JITTER * zb;
            gyr += p.gyro_vibration * zc + GYRO_JITTER * zd;
            out[axis].push(acc);
            out[3 + axis].push(gyr);
        }
    }
    out
}

/// Accelerometer x/y/z (m/s^2) and gyroscope x/y/z (rad/s) at 860 Hz.
pub fn gen_imu(profile: &ActivityProfile, duration: f64, seed: u64) -> [Vec<f64>; 6] {
    let n = (duration * IMU_RATE).round() as usize;
    imu_samples(&profile.imu, n, 1.0, seed)
}

/// Per-participant signal heterogeneity.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonalScale {
    /// Gain per channel, in [`CHANNELS`] order, applied before sensor noise.
    pub gain: [f64; 10],
    /// Offset per channel, same units as the channel.
    pub offset: [f64; 10],
    /// How vigorously the participant moves: multiplies eye-event and
    /// head-move rates.
    pub intensity: f64,
}

impl Default for PersonalScale {
    fn default() -> Self {
        Self {
            gain: [1.0; 10],
            offset: [0.0; 10],
            intensity: 1.0,
        }
    }
}

impl PersonalScale {
    /// Largest deviation from 1 across gains and intensity, as a ratio >= 1.
    pub fn shift(&self) -> f64 {
        self.gain
            .iter()
            .chain(std::iter::once(&self.intensity))
            .map(|&g| g.max(1.0 / g))
            .fold(1.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantSpec {
    pub id: String,
    pub seed: u64,
    /// Seconds per activity, in [`Activity::ALL`] order.
    pub durations: [f64; NUM_ACTIVITIES],
    pub personal_scale: PersonalScale,
    pub eye_geometry: EyeGeometry,
    /// Range of transition gap lengths, seconds.
    pub gap: (f64, f64),
    pub noise: NoiseConfig,
}

/// Grid on which both the 1 kHz and the 860 Hz streams have whole samples.
pub const TIME_GRID: f64 = 0.05;

fn on_grid(t: f64) -> f64 {
    (t / TIME_GRID).round() * TIME_GRID
}

impl ParticipantSpec {
    pub fn validate(&self, window_seconds: f64) -> Result<(), SynthError> {
        let err = |m: String| {
            Err(SynthError::InvalidParticipant {
                id: self.id.clone(),
                message: m,
            })
        };
        if let Some(d) = self.durations.iter().find(|&&d| !(d > 2.0 * window_seconds)) {
            return err(format!("duration {d} s is not above twice the {window_seconds} s window"));
        }
        let ps = &self.personal_scale;
        if ps.gain.iter().chain([&ps.intensity]).any(|g| !(0.5..=2.0).contains(g)) {
            return err("personal gains must lie in [0.5, 2.0]".into());
        }
        if !self.eye_geometry.is_valid() {
            return err("eye geometry must satisfy lid < iris < retina".into());
        }
        if !(self.gap.0 >= 0.0 && self.gap.0 <= self.gap.1) {
            return err("invalid transition gap range".into());
        }
        Ok(())
    }
}

struct Segment {
    label: SampleLabel,
    lfi: usize,
    imu: usize,
}

/// Generates one participant's recording: the seven activities in random
/// order, separated by unlabeled transition gaps.
pub fn gen_participant(spec: &ParticipantSpec, profiles: &ProfileSet) -> SensorStream {
    let mut r = rng::sub_rng(spec.seed, "participant");
    let mut order = Activity::ALL.to_vec();
    order.shuffle(&mut r);

    let mut segments = Vec::new();
    for (i, &a) in order.iter().enumerate() {
        if i > 0 {
            let gap = on_grid(uniform(&mut r, spec.gap));
            if gap > 0.0 {
                segments.push(Segment {
                    label: None,
                    lfi: (gap * LFI_RATE).round() as usize,
                    imu: (gap * IMU_RATE).round() as usize,
                });
            }
        }
        let d = spec.durations[a.index()];
        segments.push(Segment {
            label: Some(a),
            lfi: (d * LFI_RATE).round() as usize,
            imu: (d * IMU_RATE).round() as usize,
        });
    }

    let transition = ActivityProfile::transition();
    let ps = &spec.personal_scale;
    let mut lfi: [Vec<f64>; 4] = Default::default();
    let mut imu: [Vec<f64>; 6] = Default::default();
    let mut labels = Vec::new();
    for (k, seg) in segments.iter().enumerate() {
        let profile = seg.label.map_or(&transition, |a| profiles.get(a));
        // per-segment behavioural jitter around the profile
        let tempo = ps.intensity * r.random_range(0.9..1.1);
        let seg_seed = rng::derive_seed(spec.seed, &format!("segment-{k}"));
        let eye = eye_samples(profile, seg.lfi, &spec.eye_geometry, tempo, seg_seed);
        let head = imu_samples(&profile.imu, seg.imu, tempo, seg_seed);
        for (dst, src) in lfi.iter_mut().zip([eye.v1, eye.d1, eye.v2, eye.d2]) {
            dst.extend(src);
        }
        for (dst, src) in imu.iter_mut().zip(head) {
            dst.extend(src);
        }
        labels.extend(std::iter::repeat_n(seg.label, seg.lfi));
    }

    for (c, x) in lfi.iter_mut().chain(imu.iter_mut()).enumerate() {
        let (g, o) = (ps.gain[c], ps.offset[c]);
        x.iter_mut().for_each(|v| *v = g * *v + o);
    }
    for s in 0..2 {
        let trace = LfiTrace {
            velocity: std::mem::take(&mut lfi[2 * s]),
            distance: std::mem::take(&mut lfi[2 * s + 1]),
        };
        let noisy = lfi::add_sensor_noise(&trace, &spec.noise, rng::derive_seed(spec.seed, &format!("lfi-noise-{s}")));
        lfi[2 * s] = noisy.velocity;
        lfi[2 * s + 1] = noisy.distance;
    }

    let channels = lfi
        .into_iter()
        .map(|d| (LFI_RATE, d))
        .chain(imu.into_iter().map(|d| (IMU_RATE, d)))
        .zip(CHANNELS)
        .map(|((rate, data), name)| Channel {
            name: name.to_string(),
            rate,
            data,
        })
        .collect();
    SensorStream {
        participant_id: spec.id.clone(),
        channels,
        label_rate: LFI_RATE,
        labels,
    }
}

/// Parameters of the default synthetic cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortConfig {
    pub participants: usize,
    /// Multiplier on [`REFERENCE_DURATIONS`].
    pub duration_scale: f64,
    /// Floor on every activity's duration, seconds.
    pub min_duration: f64,
    /// Relative per-participant duration jitter.
    pub duration_jitter: f64,
    pub gap: (f64, f64),
    /// Spread of per-channel gains, as a ratio (gains in [1/s, s]).
    pub gain_spread: f64,
    /// Spread of intensity for ordinary participants.
    pub intensity_spread: f64,
    /// The last `shifted` participants get intensity `shift` or `1/shift`.
    pub shifted: usize,
    pub shift: f64,
    pub noise: NoiseConfig,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            participants: 8,
            duration_scale: 0.5,
            min_duration: 300.0,
            duration_jitter: 0.15,
            gap: (2.0, 10.0),
            gain_spread: 1.3,
            intensity_spread: 1.12,
            shifted: 2,
            shift: 1.7,
            noise: NoiseConfig::default(),
        }
    }
}

impl CohortConfig {
    pub fn from_config(cfg: &Config) -> Result<Self, ConfigError> {
        let d = Self::default();
        let sec = cfg.section("cohort");
        sec.check_known(&[
            "participants",
            "duration_scale",
            "min_duration",
            "duration_jitter",
            "gap",
            "gain_spread",
            "intensity_spread",
            "shifted",
            "shift",
            "noise.distance",
            "noise.velocity_deg",
        ])?;
        let noise = NoiseConfig::from_angular(
            sec.get_or("noise.distance", d.noise.distance_std)?,
            sec.get_or("noise.velocity_deg", 2.95)?,
            EYE_RADIUS,
        );
        Ok(Self {
            participants: sec.get_or("participants", d.participants)?,
            duration_scale: sec.get_or("duration_scale", d.duration_scale)?,
            min_duration: sec.get_or("min_duration", d.min_duration)?,
            duration_jitter: sec.get_or("duration_jitter", d.duration_jitter)?,
            gap: pair(&sec, "gap", d.gap)?,
            gain_spread: sec.get_or("gain_spread", d.gain_spread)?,
            intensity_spread: sec.get_or("intensity_spread", d.intensity_spread)?,
            shifted: sec.get_or("shifted", d.shifted)?,
            shift: sec.get_or("shift", d.shift)?,
            noise,
        })
    }

    /// Deterministic participant specs `P01`, `P02`, ...
    pub fn participants(&self, seed: u64) -> Vec<ParticipantSpec> {
        (0..self.participants)
            .map(|i| {
                let id = format!("P{:02}", i + 1);
                let pseed = rng::derive_seed(seed, &id);
                let mut r = rng::sub_rng(pseed, "spec");
                let mut durations = [0.0; NUM_ACTIVITIES];
                for (d, reference) in durations.iter_mut().zip(REFERENCE_DURATIONS) {
                    let j = if self.duration_jitter > 0.0 {
                        r.random_range(-self.duration_jitter..self.duration_jitter)
                    } else {
                        0.0
                    };
                    let raw = (reference * self.duration_scale * (1.0 + j)).max(self.min_duration);
                    *d = (raw / TIME_GRID).ceil() * TIME_GRID;
                }
                let spread = |r: &mut Rng, s: f64| {
                    if s > 1.0 {
                        r.random_range(-s.ln()..s.ln()).exp()
                    } else {
                        1.0
                    }
                };
                let mut gain = [1.0; 10];
                for g in gain.iter_mut() {
                    *g = spread(&mut r, self.gain_spread);
                }
                let mut offset = [0.0; 10];
                // glasses fit shifts the distance channels by up to 1.5 mm
                for c in [1usize, 3] {
                    offset[c] = r.random_range(-1.5e-3..1.5e-3);
                }
                let first_shifted = self.participants.saturating_sub(self.shifted);
                let intensity = if i >= first_shifted {
                    if (i - first_shifted) % 2 == 0 { self.shift } else { 1.0 / self.shift }
                } else {
                    spread(&mut r, self.intensity_spread)
                };
                let iris = r.random_range(23.0e-3..27.0e-3);
                let lid = iris - r.random_range(4.0e-3..5.0e-3);
                let retina = lid + r.random_range(23.0e-3..25.0e-3);
                ParticipantSpec {
                    id,
                    seed: pseed,
                    durations,
                    personal_scale: PersonalScale {
                        gain,
                        offset,
                        intensity,
                    },
                    eye_geometry: EyeGeometry { iris, retina, lid },
                    gap: self.gap,
                    noise: self.noise,
                }
            })
            .collect()
    }
}

/// Generates every participant; order follows `specs`.
pub fn gen_cohort(specs: &[ParticipantSpec], profiles: &ProfileSet, exec: Exec) -> Vec<SensorStream> {
    exec.map(specs, |s| gen_participant(s, profiles))
}
