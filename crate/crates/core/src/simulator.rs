//! Free-field moving-speaker scenes: geometry sampling, fractional-delay
//! rendering, speech-shaped babble and SNR mixing.
//!
//! Coordinates are metres in a room with one corner at the origin. The array
//! axis `u` is horizontal and rotated by `rotation_deg` from the x axis;
//! element `m` sits at `center + (m - (M-1)/2) * spacing * u`, so element 0 is
//! the left end. Source angles are measured from broadside `n` (the axis
//! rotated a quarter turn counter-clockwise), positive toward element 0:
//! a source at angle `θ` and radius `r` sits at `center + r (cos θ n - sin θ u)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::beamformer::{LinearArray, SPEED_OF_SOUND};
use crate::error::{Error, Result};
use crate::linalg::CVector;
use crate::par;
use crate::rtf::{ArraySide, RtfTrajectory};
use crate::stft::StftConfig;

pub const SAMPLE_RATE_HZ: u32 = 16_000;
pub const DURATION_S: f64 = 4.0;
pub const LEAD_S: f64 = 0.5;
pub const NUM_MICS: usize = 8;
pub const MIC_SPACING_M: f64 = 0.05;
pub const ARRAY_HEIGHT_M: f64 = 1.3;
pub const ROOM_HEIGHT_M: f64 = 3.0;
pub const NUM_BABBLERS: usize = 20;

const HALF_TAPS: isize = 16;
const TAPS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub width: f64,
    pub length: f64,
    pub height: f64,
}

impl Room {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0.0..=self.width).contains(&p[0]) && (0.0..=self.length).contains(&p[1]) && (0.0..=self.height).contains(&p[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayPlacement {
    pub center: [f64; 3],
    pub rotation_deg: f64,
    pub count: usize,
    pub spacing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    #[default]
    Moving,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourcePath {
    pub radius: f64,
    pub start_deg: f64,
    pub delta_deg: f64,
    pub motion: Motion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub sample_rate_hz: u32,
    pub duration_s: f64,
    /// Source-silent lead-in that provides noise-only frames.
    pub lead_s: f64,
    pub room: Room,
    pub array: ArrayPlacement,
    pub source: SourcePath,
    pub babblers: Vec<[f64; 3]>,
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scaled(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TARGET_SALT: u64 = 1;
const BABBLE_SALT: u64 = 2;

impl Scenario {
    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz as f64).round() as usize
    }

    pub fn lead_samples(&self) -> usize {
        (self.lead_s * self.sample_rate_hz as f64).round() as usize
    }

    pub fn axis(&self) -> [f64; 3] {
        let r = self.array.rotation_deg.to_radians();
        [r.cos(), r.sin(), 0.0]
    }

    pub fn broadside(&self) -> [f64; 3] {
        let r = self.array.rotation_deg.to_radians();
        [-r.sin(), r.cos(), 0.0]
    }

    /// Element offsets along the array axis.
    pub fn element_offsets(&self) -> Vec<f64> {
        let mid = (self.array.count as f64 - 1.0) / 2.0;
        (0..self.array.count)
            .map(|m| (m as f64 - mid) * self.array.spacing)
            .collect()
    }

    pub fn mic_positions(&self) -> Vec<[f64; 3]> {
        let u = self.axis();
        self.element_offsets()
            .into_iter()
            .map(|x| add(self.array.center, scaled(u, x)))
            .collect()
    }

    pub fn linear_array(&self, side: ArraySide) -> LinearArray {
        LinearArray {
            positions: self.element_offsets(),
            reference: side.reference(self.array.count),
        }
    }

    /// Unfolded source angle in degrees at time `t`.
    pub fn source_angle_deg(&self, t: f64) -> f64 {
        match self.source.motion {
            Motion::Static => self.source.start_deg,
            Motion::Moving => {
                let span = (self.duration_s - self.lead_s).max(f64::MIN_POSITIVE);
                let frac = ((t - self.lead_s) / span).clamp(0.0, 1.0);
                self.source.start_deg + frac * self.source.delta_deg
            }
        }
    }

    /// Direction of arrival seen by a linear array: the source angle folded
    /// onto [-90°, 90°].
    pub fn doa_deg(&self, t: f64) -> f64 {
        self.source_angle_deg(t).to_radians().sin().asin().to_degrees()
    }

    pub fn source_position(&self, t: f64) -> [f64; 3] {
        let th = self.source_angle_deg(t).to_radians();
        let dir = add(scaled(self.broadside(), th.cos()), scaled(self.axis(), -th.sin()));
        add(self.array.center, scaled(dir, self.source.radius))
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 || !(self.duration_s > self.lead_s) || self.lead_s < 0.0 {
            return Err(Error::Config("invalid scenario timing".into()));
        }
        if self.array.count < 2 || !(self.array.spacing > 0.0) {
            return Err(Error::Config("array needs at least two elements".into()));
        }
        if self.mic_positions().iter().any(|p| !self.room.contains(*p)) {
            return Err(Error::Config("array does not fit in the room".into()));
        }
        if self.babblers.iter().any(|p| !self.room.contains(*p)) {
            return Err(Error::Config("babbler outside the room".into()));
        }
        let steps = 64;
        for i in 0..=steps {
            let t = self.duration_s * i as f64 / steps as f64;
            if !self.room.contains(self.source_position(t)) {
                return Err(Error::Config(format!(
                    "source trajectory leaves the room at t = {t:.2} s"
                )));
            }
        }
        Ok(())
    }

    pub fn target_seed(&self) -> u64 {
        derive_seed(self.seed, TARGET_SALT)
    }

    pub fn babble_seed(&self) -> u64 {
        derive_seed(self.seed, BABBLE_SALT)
    }
}

fn babbler_position<R: Rng>(rng: &mut R, room: &Room) -> [f64; 3] {
    let inset = rng.gen_range(0.3..=0.5);
    let z = rng.gen_range(1.5..=1.8);
    let perimeter = 2.0 * (room.width + room.length);
    let s = rng.gen_range(0.0..perimeter);
    let along = |len: f64, s: f64| s.clamp(0.5, len - 0.5);
    if s < room.width {
        [along(room.width, s), inset, z]
    } else if s < room.width + room.length {
        [room.width - inset, along(room.length, s - room.width), z]
    } else if s < 2.0 * room.width + room.length {
        [along(room.width, s - room.width - room.length), room.length - inset, z]
    } else {
        [inset, along(room.length, s - 2.0 * room.width - room.length), z]
    }
}

pub fn sample_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let room = Room {
        width: rng.gen_range(6.0..=9.0),
        length: rng.gen_range(6.0..=9.0),
        height: ROOM_HEIGHT_M,
    };
    let center = [
        rng.gen_range(2.5..=room.width - 2.5),
        rng.gen_range(2.5..=room.length - 2.5),
        ARRAY_HEIGHT_M,
    ];
    let rotation_deg = rng.gen_range(-45.0..=45.0);
    let radius = rng.gen_range(1.0..=1.5);
    let start_deg = rng.gen_range(-180.0..180.0);
    let magnitude: f64 = rng.gen_range(45.0..=150.0);
    let delta_deg = if rng.gen_bool(0.5) { magnitude } else { -magnitude };
    let babblers = (0..NUM_BABBLERS).map(|_| babbler_position(&mut rng, &room)).collect();
    Scenario {
        seed,
        sample_rate_hz: SAMPLE_RATE_HZ,
        duration_s: DURATION_S,
        lead_s: LEAD_S,
        room,
        array: ArrayPlacement {
            center,
            rotation_deg,
            count: NUM_MICS,
            spacing: MIC_SPACING_M,
        },
        source: SourcePath {
            radius,
            start_deg,
            delta_deg,
            motion: Motion::Moving,
        },
        babblers,
    }
}

/// Blackman-windowed sinc taps for a delay of `frac` ∈ [0, 1) samples, for
/// input offsets `-15..=16`, normalised to unit DC gain.
fn sinc_taps(frac: f64) -> [f64; TAPS] {
    let mut taps = [0.0; TAPS];
    let s = (PI * frac).sin();
    let mut sum = 0.0;
    for (i, tap) in taps.iter_mut().enumerate() {
        let j = i as isize - (HALF_TAPS - 1);
        let t = j as f64 - frac;
        let sinc = if t.abs() < 1e-12 {
            1.0
        } else {
            // sin(π(j - frac)) = -(-1)^j sin(π frac)
            let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
            sign * s / (PI * t)
        };
        let x = (t + HALF_TAPS as f64) / (2 * HALF_TAPS) as f64;
        let w = 0.42 - 0.5 * (2.0 * PI * x).cos() + 0.08 * (4.0 * PI * x).cos();
        *tap = sinc * w;
        sum += *tap;
    }
    for tap in &mut taps {
        *tap /= sum;
    }
    taps
}

/// `sum_j taps[j] x[pos - whole - j]`.
#[inline]
fn delayed_sample(x: &[f64], pos: usize, whole: isize, taps: &[f64; TAPS]) -> f64 {
    let base = pos as isize - whole + (HALF_TAPS - 1);
    let mut acc = 0.0;
    for (i, &tap) in taps.iter().enumerate() {
        let idx = base - i as isize;
        if idx >= 0 && (idx as usize) < x.len() {
            acc += tap * x[idx as usize];
        }
    }
    acc
}

/// Oversampling factor applied before fractional-delay interpolation, so
/// that the kernel's roll-off lies far above the signal band.
pub const OVERSAMPLING: usize = 4;

/// A signal band-limited-interpolated to `OVERSAMPLING` times its rate.
struct Oversampled {
    data: Vec<f64>,
    len: usize,
}

/// Zeros appended before oversampling so that the FFT's circular wrap does
/// not carry the end of the signal into its beginning.
const WRAP_GUARD: usize = 4096;

fn oversample(x: &[f64]) -> Oversampled {
    let len = x.len();
    if len == 0 {
        return Oversampled { data: Vec::new(), len };
    }
    let n = len + WRAP_GUARD;
    let up = n * OVERSAMPLING;
    let mut planner = FftPlanner::new();
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for (z, &v) in spec.iter_mut().zip(x) {
        z.re = v;
    }
    planner.plan_fft_forward(n).process(&mut spec);
    let mut wide = vec![Complex64::new(0.0, 0.0); up];
    let half = n / 2;
    wide[..=half].copy_from_slice(&spec[..=half]);
    for k in half + 1..n {
        wide[up - (n - k)] = spec[k];
    }
    if n.is_multiple_of(2) {
        // Split the Nyquist bin between the two images.
        wide[half] = spec[half] * 0.5;
        wide[up - half] = spec[half] * 0.5;
    }
    planner.plan_fft_inverse(up).process(&mut wide);
    Oversampled {
        data: wide[..len * OVERSAMPLING].iter().map(|z| z.re / n as f64).collect(),
        len,
    }
}

/// Renders a source at one microphone for a path sampled every `hop`
/// output samples; delay and gain are interpolated linearly between path
/// points.
fn render_path_at_mic(source: &Oversampled, path: &[[f64; 3]], hop: usize, mic: [f64; 3], fs: f64) -> Vec<f64> {
    let scale = fs * OVERSAMPLING as f64 / SPEED_OF_SOUND;
    let delay_gain: Vec<(f64, f64)> = path
        .iter()
        .map(|&p| {
            let d = distance(p, mic);
            (d * scale, 1.0 / d)
        })
        .collect();
    let x = &source.data;
    let mut out = vec![0.0; source.len];
    if delay_gain.len() == 1 {
        let (delay, gain) = delay_gain[0];
        let whole = delay.floor();
        let taps = sinc_taps(delay - whole);
        for (n, y) in out.iter_mut().enumerate() {
            *y = gain * delayed_sample(x, n * OVERSAMPLING, whole as isize, &taps);
        }
        return out;
    }
    for (n, y) in out.iter_mut().enumerate() {
        let h = (n / hop).min(delay_gain.len() - 2);
        let w = (n - h * hop) as f64 / hop as f64;
        let (d0, g0) = delay_gain[h];
        let (d1, g1) = delay_gain[h + 1];
        let delay = d0 + w * (d1 - d0);
        let gain = g0 + w * (g1 - g0);
        let whole = delay.floor();
        *y = gain * delayed_sample(x, n * OVERSAMPLING, whole as isize, &sinc_taps(delay - whole));
    }
    out
}

/// Analytic free-field RTFs and target direction of a rendered scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub meta: TruthMeta,
    pub rtf_left: RtfTrajectory,
    pub rtf_right: RtfTrajectory,
    pub clean_left: Vec<f64>,
    pub clean_right: Vec<f64>,
}

/// The JSON-serialisable part of [`GroundTruth`]. Frame indices follow
/// [`crate::stft::analyze_padded`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthMeta {
    pub seed: u64,
    pub frames: usize,
    /// Leading frames that contain no target signal.
    pub noise_frames: usize,
    pub frame_time_s: Vec<f64>,
    pub doa_deg: Vec<f64>,
    /// Frames whose whole analysis window lies after target onset.
    pub active: Vec<bool>,
    pub source_position: Vec<[f64; 3]>,
}

impl GroundTruth {
    pub fn rtf(&self, side: ArraySide) -> &RtfTrajectory {
        match side {
            ArraySide::Left => &self.rtf_left,
            ArraySide::Right => &self.rtf_right,
        }
    }

    pub fn clean(&self, side: ArraySide) -> &[f64] {
        match side {
            ArraySide::Left => &self.clean_left,
            ArraySide::Right => &self.clean_right,
        }
    }
}

/// Free-field RTF of a point source at `p` for bin frequency `f_hz`.
pub fn point_source_rtf(mics: &[[f64; 3]], p: [f64; 3], reference: usize, f_hz: f64) -> CVector {
    let d_ref = distance(mics[reference], p);
    mics.iter()
        .map(|&mic| {
            let d = distance(mic, p);
            let tau = (d - d_ref) / SPEED_OF_SOUND;
            Complex64::from_polar(d_ref / d, -2.0 * PI * f_hz * tau)
        })
        .collect()
}

/// Leading frames of the padded framing that end before target onset.
pub fn noise_only_frames(scenario: &Scenario, config: &StftConfig) -> usize {
    let lead = scenario.lead_samples() as isize;
    (0..config.padded_num_frames(scenario.num_samples()))
        .take_while(|&l| config.padded_frame_start(l) + config.window_len as isize <= lead)
        .count()
}

fn ground_truth(scenario: &Scenario, config: &StftConfig, clean: &[Vec<f64>]) -> Result<GroundTruth> {
    let frames = config.padded_num_frames(scenario.num_samples());
    let bins = config.num_bins();
    let lead = scenario.lead_samples() as isize;
    let mics = scenario.mic_positions();
    let times: Vec<f64> = (0..frames).map(|l| config.padded_frame_center_s(l)).collect();
    let positions: Vec<[f64; 3]> = times.iter().map(|&t| scenario.source_position(t)).collect();
    let active: Vec<bool> = (0..frames).map(|l| config.padded_frame_start(l) >= lead).collect();

    let trajectory = |side: ArraySide| -> Result<RtfTrajectory> {
        let reference = side.reference(mics.len());
        let cells = (0..bins)
            .map(|k| {
                let f = config.bin_frequency(k);
                // The Nyquist coefficient of a real signal is real, so its
                // inter-channel phase is not observable.
                let observable = k + 1 < bins;
                (0..frames)
                    .map(|l| {
                        let a = point_source_rtf(&mics, positions[l], reference, f);
                        (a, active[l] && observable)
                    })
                    .collect()
            })
            .collect();
        RtfTrajectory::from_cells(mics.len(), cells, reference, side)
    };

    let rtf_left = trajectory(ArraySide::Left)?;
    let rtf_right = trajectory(ArraySide::Right)?;
    Ok(GroundTruth {
        meta: TruthMeta {
            seed: scenario.seed,
            frames,
            noise_frames: noise_only_frames(scenario, config),
            frame_time_s: times.clone(),
            doa_deg: times.iter().map(|&t| scenario.doa_deg(t)).collect(),
            active,
            source_position: positions,
        },
        rtf_left,
        rtf_right,
        clean_left: clean[0].clone(),
        clean_right: clean[mics.len() - 1].clone(),
    })
}

/// Raised-cosine onset applied to the target after the silent lead.
pub const FADE_IN_S: f64 = 0.01;

/// Renders the target along the scenario trajectory. The first `lead_s`
/// seconds of `source` are silenced and the onset is faded in over
/// `FADE_IN_S`.
pub fn render_moving_source(
    source: &[f64],
    scenario: &Scenario,
    config: &StftConfig,
) -> Result<(Vec<Vec<f64>>, GroundTruth)> {
    scenario.validate()?;
    config.validate()?;
    if config.sample_rate_hz != scenario.sample_rate_hz {
        return Err(Error::Config("STFT and scenario sample rates differ".into()));
    }
    let n = scenario.num_samples();
    if source.len() != n {
        return Err(Error::Shape(format!(
            "source has {} samples, scenario needs {n}",
            source.len()
        )));
    }
    let fs = scenario.sample_rate_hz as f64;
    let lead = scenario.lead_samples().min(n);
    let mut gated = source.to_vec();
    gated[..lead].iter_mut().for_each(|x| *x = 0.0);
    let fade = ((FADE_IN_S * fs) as usize).min(n - lead);
    for (i, x) in gated[lead..lead + fade].iter_mut().enumerate() {
        *x *= 0.5 - 0.5 * (PI * i as f64 / fade as f64).cos();
    }
    let gated = oversample(&gated);

    let hop = config.hop;
    let path: Vec<[f64; 3]> = match scenario.source.motion {
        Motion::Static => vec![scenario.source_position(0.0)],
        Motion::Moving => (0..=n.div_ceil(hop))
            .map(|h| scenario.source_position((h * hop) as f64 / fs))
            .collect(),
    };
    let mics = scenario.mic_positions();
    let clean = par::map_slice(&mics, |&mic| render_path_at_mic(&gated, &path, hop, mic, fs));
    let truth = ground_truth(scenario, config, &clean)?;
    Ok((clean, truth))
}

/// Sum of static free-field renderings of each babbler signal.
pub fn render_babble(scenario: &Scenario, signals: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if signals.len() != scenario.babblers.len() {
        return Err(Error::Shape(format!(
            "{} babbler signals for {} positions",
            signals.len(),
            scenario.babblers.len()
        )));
    }
    if signals.len() != NUM_BABBLERS {
        log::warn!("rendering {} babblers instead of {NUM_BABBLERS}", signals.len());
    }
    let n = scenario.num_samples();
    if let Some(bad) = signals.iter().find(|s| s.len() != n) {
        return Err(Error::Shape(format!(
            "babbler signal has {} samples, scenario needs {n}",
            bad.len()
        )));
    }
    let fs = scenario.sample_rate_hz as f64;
    let mics = scenario.mic_positions();
    let oversampled = par::map_slice(signals, |s| oversample(s));
    Ok(par::map_slice(&mics, |&mic| {
        let mut acc = vec![0.0; n];
        for (sig, &pos) in oversampled.iter().zip(&scenario.babblers) {
            let r = render_path_at_mic(sig, &[pos], 1, mic, fs);
            acc.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        }
        acc
    }))
}

pub fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// SNR at or above which the noise is dropped entirely.
pub const SNR_CAP_DB: f64 = 120.0;

/// Gain that brings `noise` to `snr_db` below `clean` at channel `reference`.
pub fn snr_noise_gain(clean: &[Vec<f64>], noise: &[Vec<f64>], snr_db: f64, reference: usize) -> Result<f64> {
    if clean.len() != noise.len() || clean.iter().zip(noise).any(|(c, v)| c.len() != v.len()) {
        return Err(Error::Shape("clean and noise shapes differ".into()));
    }
    if reference >= clean.len() {
        return Err(Error::Config(format!("reference channel {reference} out of range")));
    }
    if snr_db.is_nan() {
        return Err(Error::Config("SNR is NaN".into()));
    }
    let pc = mean_power(&clean[reference]);
    let pn = mean_power(&noise[reference]);
    if pc <= 0.0 {
        return Err(Error::InvalidInput("clean signal has zero power".into()));
    }
    if pn <= 0.0 {
        return Err(Error::InvalidInput("noise signal has zero power".into()));
    }
    if snr_db >= SNR_CAP_DB {
        return Ok(0.0);
    }
    Ok((pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt())
}

pub fn mix_at_snr(clean: &[Vec<f64>], noise: &[Vec<f64>], snr_db: f64, reference: usize) -> Result<Vec<Vec<f64>>> {
    let g = snr_noise_gain(clean, noise, snr_db, reference)?;
    Ok(clean
        .iter()
        .zip(noise)
        .map(|(c, v)| c.iter().zip(v).map(|(a, b)| a + g * b).collect())
        .collect())
}

/// Speech-shaped noise: Gaussian noise with a -3 dB/octave spectrum above
/// 100 Hz, amplitude-modulated at 4 Hz, scaled to unit RMS.
pub fn synthesize_babbler_signals(seed: u64, count: usize, num_samples: usize, sample_rate_hz: u32) -> Vec<Vec<f64>> {
    if num_samples == 0 {
        return vec![Vec::new(); count];
    }
    let fs = sample_rate_hz as f64;
    let fft = FftPlanner::new().plan_fft_forward(num_samples);
    let ifft = FftPlanner::new().plan_fft_inverse(num_samples);
    par::map_range(count, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut buf: Vec<Complex64> = (0..num_samples)
            .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
            .collect();
        fft.process(&mut buf);
        for (k, z) in buf.iter_mut().enumerate() {
            let kk = k.min(num_samples - k);
            let f = kk as f64 * fs / num_samples as f64;
            *z *= 1.0 / (f.max(100.0) / 100.0).sqrt();
        }
        ifft.process(&mut buf);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let mut x: Vec<f64> = buf
            .iter()
            .enumerate()
            .map(|(n, z)| z.re * (1.0 + 0.7 * (2.0 * PI * 4.0 * n as f64 / fs + phase).sin()))
            .collect();
        let rms = mean_power(&x).sqrt();
        if rms > 0.0 {
            x.iter_mut().for_each(|v| *v /= rms);
        }
        x
    })
}

/// Clean target image, babble image and ground truth of a scenario.
#[derive(Debug, Clone)]
pub struct Scene {
    pub clean: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
    pub truth: GroundTruth,
}

impl Scene {
    pub fn mixture(&self, snr_db: f64) -> Result<Vec<Vec<f64>>> {
        mix_at_snr(&self.clean, &self.noise, snr_db, 0)
    }

    pub fn scaled_noise(&self, snr_db: f64) -> Result<Vec<Vec<f64>>> {
        let g = snr_noise_gain(&self.clean, &self.noise, snr_db, 0)?;
        Ok(self.noise.iter().map(|c| c.iter().map(|v| g * v).collect()).collect())
    }
}

pub fn render_scene(scenario: &Scenario, config: &StftConfig) -> Result<Scene> {
    let n = scenario.num_samples();
    let target = synthesize_babbler_signals(scenario.target_seed(), 1, n, scenario.sample_rate_hz)
        .pop()
        .unwrap_or_default();
    let (clean, truth) = render_moving_source(&target, scenario, config)?;
    let babble = synthesize_babbler_signals(
        scenario.babble_seed(),
        scenario.babblers.len(),
        n,
        scenario.sample_rate_hz,
    );
    let noise = render_babble(scenario, &babble)?;
    Ok(Scene { clean, noise, truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    type C = Complex64;

    fn short_static(seed: u64) -> Scenario {
        let mut s = sample_scenario(seed);
        s.duration_s = 1.0;
        s.lead_s = 0.25;
        s.source.motion = Motion::Static;
        s
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(sample_scenario(7), sample_scenario(7));
        assert_ne!(sample_scenario(7), sample_scenario(8));
    }

    #[test]
    fn sampled_ranges_hold_for_many_seeds() {
        for seed in 0..1000 {
            let s = sample_scenario(seed);
            let d = s.source.delta_deg.abs();
            assert!((45.0..=150.0).contains(&d), "seed {seed}: {d}");
            assert!((1.0..=1.5).contains(&s.source.radius));
            assert!((6.0..=9.0).contains(&s.room.width));
            assert!((6.0..=9.0).contains(&s.room.length));
            assert!(s.array.rotation_deg.abs() <= 45.0);
            assert_eq!(s.babblers.len(), NUM_BABBLERS);
            s.validate().unwrap();
        }
    }

    #[test]
    fn leaving_the_room_is_an_error() {
        let mut s = sample_scenario(3);
        s.source.radius = 20.0;
        assert!(s.validate().is_err());
        let mut s = sample_scenario(3);
        s.babblers[0] = [-1.0, 1.0, 1.0];
        assert!(s.validate().is_err());
    }

    #[test]
    fn geometry_matches_the_angle_convention() {
        let s = sample_scenario(11);
        let mics = s.mic_positions();
        for deg in [-80.0, -30.0, 0.0, 45.0, 89.0] {
            let mut s2 = s.clone();
            s2.source.start_deg = deg;
            s2.source.motion = Motion::Static;
            s2.source.radius = 1000.0;
            let p = s2.source_position(0.0);
            // Far-field path difference between the end elements.
            let diff = distance(p, mics[7]) - distance(p, mics[0]);
            let expect = 7.0 * MIC_SPACING_M * f64::sin(deg.to_radians());
            assert!((diff - expect).abs() < 1e-3, "{deg}: {diff} vs {expect}");
        }
    }

    #[test]
    fn symmetric_static_source_gives_identical_channels() {
        let mut s = short_static(1);
        s.source.start_deg = 0.0;
        let cfg = StftConfig::default();
        let sig = synthesize_babbler_signals(5, 1, s.num_samples(), s.sample_rate_hz)
            .pop()
            .unwrap();
        let (out, _) = render_moving_source(&sig, &s, &cfg).unwrap();
        for m in 0..4 {
            let (a, b) = (&out[m], &out[7 - m]);
            let err = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err < 1e-6, "pair {m}: {err}");
        }
    }

    #[test]
    fn cross_correlation_lag_matches_geometry() {
        let mut s = short_static(2);
        s.source.start_deg = 60.0;
        // Stretch the array so the end-to-end delay spans several samples.
        s.array.spacing = 0.2;
        let cfg = StftConfig::default();
        let n = s.num_samples();
        let sig = synthesize_babbler_signals(6, 1, n, s.sample_rate_hz).pop().unwrap();
        let (out, _) = render_moving_source(&sig, &s, &cfg).unwrap();
        let mics = s.mic_positions();
        let p = s.source_position(0.0);
        let fs = s.sample_rate_hz as f64;
        let expect = (distance(p, mics[0]) - distance(p, mics[7])) / SPEED_OF_SOUND * fs;
        let lead = s.lead_samples() + 200;
        let xcorr = |lag: isize| -> f64 {
            (lead..n - 200)
                .map(|i| out[7][i] * out[0][(i as isize + lag) as usize])
                .sum()
        };
        let best = (-60..=60).max_by(|&a, &b| xcorr(a).total_cmp(&xcorr(b))).unwrap();
        assert!((best as f64 - expect).abs() <= 1.0, "lag {best}, geometry {expect}");
    }

    #[test]
    fn doa_moves_monotonically_along_the_arc() {
        let mut s = sample_scenario(4);
        s.source.start_deg = -60.0;
        s.source.delta_deg = 100.0;
        let cfg = StftConfig::default();
        let sig = vec![0.0; s.num_samples()];
        let (_, truth) = render_moving_source(&sig, &s, &cfg).unwrap();
        let doa = &truth.meta.doa_deg;
        assert!(doa.windows(2).all(|w| w[1] >= w[0]));
        assert!(doa[0] < -59.0 && *doa.last().unwrap() > 39.0);
        let steps: Vec<f64> = doa.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(steps.iter().all(|&d| d < 1.0));
    }

    #[test]
    fn unfolded_angle_is_monotone_for_sampled_scenarios() {
        for seed in 0..50 {
            let s = sample_scenario(seed);
            let sign = s.source.delta_deg.signum();
            let a: Vec<f64> = (0..=100).map(|i| s.source_angle_deg(i as f64 * 0.04)).collect();
            assert!(a.windows(2).all(|w| sign * (w[1] - w[0]) >= 0.0));
        }
    }

    #[test]
    fn ground_truth_matches_geometry() {
        let s = sample_scenario(12);
        let cfg = StftConfig::default();
        let (_, truth) = render_moving_source(&vec![0.0; s.num_samples()], &s, &cfg).unwrap();
        let mics = s.mic_positions();
        for &l in &[40usize, 120, 240] {
            let t = (l * cfg.hop) as f64 / cfg.sample_rate_hz as f64;
            let p = s.source_position(t);
            for &k in &[0usize, 17, 100, 256] {
                let f = k as f64 * 16_000.0 / 512.0;
                for (side, r) in [(ArraySide::Left, 0usize), (ArraySide::Right, 7)] {
                    let d_ref =
                        ((p[0] - mics[r][0]).powi(2) + (p[1] - mics[r][1]).powi(2) + (p[2] - mics[r][2]).powi(2))
                            .sqrt();
                    for m in 0..8 {
                        let d =
                            ((p[0] - mics[m][0]).powi(2) + (p[1] - mics[m][1]).powi(2) + (p[2] - mics[m][2]).powi(2))
                                .sqrt();
                        let phase = -2.0 * PI * f * (d - d_ref) / 343.0;
                        let expect = C::new(phase.cos(), phase.sin()) * (d_ref / d);
                        let got = truth.rtf(side).get(m, k, l);
                        assert!((got - expect).norm() < 1e-12);
                    }
                }
            }
        }
        assert!(!truth.meta.active[0]);
        assert!(truth.rtf_left.is_valid(255, 100) && !truth.rtf_left.is_valid(256, 100));
        assert!(truth.meta.active[truth.meta.frames - 1]);
        assert_eq!(truth.meta.frames, 251);
        assert_eq!(truth.meta.noise_frames, 31);
        assert_eq!(truth.meta.active.iter().position(|&a| a), Some(33));
    }

    #[test]
    fn power_follows_inverse_square_law() {
        let mut s = short_static(9);
        s.source.start_deg = 70.0;
        let cfg = StftConfig::default();
        let sig = synthesize_babbler_signals(1, 1, s.num_samples(), s.sample_rate_hz)
            .pop()
            .unwrap();
        let (out, _) = render_moving_source(&sig, &s, &cfg).unwrap();
        let p: Vec<f64> = out.iter().map(|c| mean_power(c)).collect();
        // Positive angles lie toward element 0, which is therefore loudest.
        assert!(p.windows(2).all(|w| w[0] > w[1]), "{p:?}");
    }

    #[test]
    fn single_babbler_equals_static_source_rendering() {
        let mut s = short_static(5);
        let cfg = StftConfig::default();
        let n = s.num_samples();
        let sig = synthesize_babbler_signals(2, 1, n, s.sample_rate_hz).pop().unwrap();
        let (direct, _) = render_moving_source(&sig, &s, &cfg).unwrap();
        let mut sig = sig;
        let lead = s.lead_samples();
        let fade = (FADE_IN_S * s.sample_rate_hz as f64) as usize;
        sig[..lead].iter_mut().for_each(|x| *x = 0.0);
        for (i, x) in sig[lead..lead + fade].iter_mut().enumerate() {
            *x *= 0.5 - 0.5 * (PI * i as f64 / fade as f64).cos();
        }
        s.babblers = vec![s.source_position(0.0)];
        let babble = render_babble(&s, &[sig]).unwrap();
        assert_eq!(direct, babble);
    }

    #[test]
    fn silent_babblers_give_silence() {
        let s = short_static(6);
        let zeros = vec![vec![0.0; s.num_samples()]; NUM_BABBLERS];
        let out = render_babble(&s, &zeros).unwrap();
        assert!(out.iter().flatten().all(|&x| x == 0.0));
        assert!(render_babble(&s, &zeros[..3]).is_err());
    }

    /// Magnitude-squared coherence between two channels, averaged over
    /// the bins above `f_min`.
    fn mean_coherence(a: &[f64], b: &[f64], cfg: &StftConfig, f_min: f64) -> f64 {
        let spec = crate::stft::analyze(&[a.to_vec(), b.to_vec()], cfg).unwrap();
        let mut total = 0.0;
        let mut count = 0;
        for k in 0..spec.bins() {
            if cfg.bin_frequency(k) < f_min {
                continue;
            }
            let (mut saa, mut sbb, mut sab) = (0.0, 0.0, C::new(0.0, 0.0));
            for l in 0..spec.frames() {
                let (x, y) = (spec.get(0, k, l), spec.get(1, k, l));
                saa += x.norm_sqr();
                sbb += y.norm_sqr();
                sab += x * y.conj();
            }
            total += sab.norm_sqr() / (saa * sbb);
            count += 1;
        }
        total / count as f64
    }

    #[test]
    fn babble_is_incoherent_at_high_frequencies() {
        let s = sample_scenario(21);
        let n = s.num_samples();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let white: Vec<Vec<f64>> = (0..NUM_BABBLERS)
            .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let out = render_babble(&s, &white).unwrap();
        let cfg = StftConfig::default();
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..8 {
            for j in i + 1..8 {
                total += mean_coherence(&out[i], &out[j], &cfg, 2000.0);
                count += 1;
            }
        }
        let mean = total / count as f64;
        assert!(mean < 0.5, "mean coherence {mean}");
    }

    #[test]
    fn mixing_hits_the_requested_snr() {
        let clean = synthesize_babbler_signals(1, 2, 4000, 16_000);
        let noise = synthesize_babbler_signals(2, 2, 4000, 16_000);
        for snr in [0.0, 10.0, -7.5] {
            let mix = mix_at_snr(&clean, &noise, snr, 1).unwrap();
            let scaled: Vec<f64> = mix[1].iter().zip(&clean[1]).map(|(m, c)| m - c).collect();
            let ratio = mean_power(&clean[1]) / mean_power(&scaled);
            assert!(
                (ratio - 10f64.powf(snr / 10.0)).abs() < 1e-9 * ratio.max(1.0),
                "{snr}: {ratio}"
            );
        }
        let mix = mix_at_snr(&clean, &noise, 120.0, 0).unwrap();
        assert_eq!(mix, clean);
        let silent = vec![vec![0.0; 4000]; 2];
        assert!(mix_at_snr(&clean, &silent, 0.0, 0).is_err());
        assert!(mix_at_snr(&silent, &noise, 0.0, 0).is_err());
        assert!(mix_at_snr(&clean, &noise[..1], 0.0, 0).is_err());
    }

    #[test]
    fn babbler_signals_are_deterministic_and_unit_rms() {
        let a = synthesize_babbler_signals(3, 4, 8000, 16_000);
        assert_eq!(a, synthesize_babbler_signals(3, 4, 8000, 16_000));
        for x in &a {
            assert!((mean_power(x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn babbler_spectrum_falls_three_db_per_octave() {
        let n = 64_000;
        let x = synthesize_babbler_signals(8, 1, n, 16_000).pop().unwrap();
        // Averaged periodogram over 1024-sample segments.
        let seg = 1024;
        let fft = FftPlanner::new().plan_fft_forward(seg);
        let mut psd = vec![0.0; seg / 2 + 1];
        for chunk in x.chunks_exact(seg) {
            let mut buf: Vec<C> = chunk
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / seg as f64).cos();
                    C::new(v * w, 0.0)
                })
                .collect();
            fft.process(&mut buf);
            for (p, z) in psd.iter_mut().zip(&buf) {
                *p += z.norm_sqr();
            }
        }
        // Least-squares slope of dB against octaves over 0.2-4 kHz.
        let pts: Vec<(f64, f64)> = (0..psd.len())
            .map(|k| (k as f64 * 16_000.0 / seg as f64, psd[k]))
            .filter(|(f, _)| (200.0..=4000.0).contains(f))
            .map(|(f, p)| (f.log2(), 10.0 * p.log10()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        assert!((slope + 3.0).abs() <= 1.0, "slope {slope} dB/octave");
    }

    #[test]
    fn distinct_seeds_are_uncorrelated() {
        let a = synthesize_babbler_signals(100, 1, 64_000, 16_000).pop().unwrap();
        let b = synthesize_babbler_signals(101, 1, 64_000, 16_000).pop().unwrap();
        let rho = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>()
            / (a.iter().map(|x| x * x).sum::<f64>() * b.iter().map(|y| y * y).sum::<f64>()).sqrt();
        assert!(rho.abs() < 0.05, "rho {rho}");
        let streams = synthesize_babbler_signals(100, 2, 64_000, 16_000);
        let rho = streams[0].iter().zip(&streams[1]).map(|(x, y)| x * y).sum::<f64>() / 64_000.0;
        assert!(rho.abs() < 0.05);
    }

    #[test]
    fn oversampling_keeps_original_samples_and_interpolates_sinusoids() {
        let n = 400;
        let f = 0.37;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * f * i as f64 / 2.0).cos()).collect();
        let up = oversample(&x);
        assert_eq!(up.data.len(), n * OVERSAMPLING);
        for i in 0..n {
            assert!((up.data[i * OVERSAMPLING] - x[i]).abs() < 1e-9);
        }
        // Away from the edges a slow sinusoid is interpolated closely.
        let n = 20_000;
        let g = 0.01;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * g * i as f64).sin()).collect();
        let up = oversample(&x);
        for j in (4000 * OVERSAMPLING..16_000 * OVERSAMPLING).step_by(7) {
            let t = j as f64 / OVERSAMPLING as f64;
            assert!((up.data[j] - (2.0 * PI * g * t).sin()).abs() < 1e-3, "{j}");
        }
    }

    #[test]
    fn rendered_delay_is_accurate_near_nyquist() {
        // A static source seen by one microphone: compare the rendered
        // channel against the analytic delay and gain per STFT bin.
        let mut s = short_static(13);
        s.source.start_deg = 37.0;
        let cfg = StftConfig::default();
        let n = s.num_samples();
        let sig = synthesize_babbler_signals(4, 1, n, s.sample_rate_hz).pop().unwrap();
        let (out, truth) = render_moving_source(&sig, &s, &cfg).unwrap();
        let spec = crate::stft::analyze_padded(&out, &cfg).unwrap();
        let frames: Vec<usize> = (0..truth.meta.frames).filter(|&l| truth.meta.active[l]).collect();
        for k in [160usize, 220, 250] {
            // Least-squares transfer ratio between mic 3 and mic 0.
            let (mut num, mut den) = (C::new(0.0, 0.0), 0.0);
            for &l in &frames {
                let (y0, y3) = (spec.get(0, k, l), spec.get(3, k, l));
                num += y3 * y0.conj();
                den += y0.norm_sqr();
            }
            let ratio = num / den;
            let expect = truth.rtf_left.get(3, k, frames[0]);
            assert!((ratio - expect).norm() < 0.03, "bin {k}: {ratio} vs {expect}");
        }
    }

    #[test]
    fn fractional_taps_have_unit_gain_and_reproduce_integer_delays() {
        let t = sinc_taps(0.0);
        for (i, &v) in t.iter().enumerate() {
            let expect = if i == (HALF_TAPS - 1) as usize { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-12);
        }
        for frac in [0.1, 0.5, 0.9] {
            assert!((sinc_taps(frac).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
