//! End-to-end processing of one mixture: RTF estimation, MVDR
//! beamforming, resynthesis and scoring.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::beamformer::{self, BeamformerWeights, BeampatternGrid, DEFAULT_MVDR_LOADING, SPEED_OF_SOUND};
use crate::covariance::{self, HermitianMatrixField, Whitener, DEFAULT_LOADING};
use crate::error::{Error, Result};
use crate::metrics::{self, DoaError};
use crate::rtf::{self, ArraySide, RtfTrajectory, DEFAULT_BETA};
use crate::simulator::{GroundTruth, Scenario, Scene};
use crate::stft::{self, ComplexSpectrogram, StftConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Batch covariance whitening over all frames after the noise segment.
    CwBatch,
    /// Frame-recursive subspace tracking, started after the noise segment.
    Past,
    /// Ground-truth RTFs from the simulator.
    Oracle,
    /// Reference microphone passthrough.
    None,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::CwBatch, Method::Past, Method::Oracle, Method::None];

    pub fn name(self) -> &'static str {
        match self {
            Method::CwBatch => "cw-batch",
            Method::Past => "past",
            Method::Oracle => "oracle",
            Method::None => "none",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}' (cw-batch, past, oracle, none)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stft: StftConfig,
    /// Leading noise-only frames; `None` derives it from the scenario lead.
    pub noise_frames: Option<usize>,
    pub beta: f64,
    /// Diagonal loading of the noise covariance before whitening, relative to its mean eigenvalue.
    pub loading: f64,
    /// Diagonal loading of the noise covariance inside the MVDR weights.
    pub mvdr_loading: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            noise_frames: None,
            beta: DEFAULT_BETA,
            loading: DEFAULT_LOADING,
            mvdr_loading: DEFAULT_MVDR_LOADING,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if !(self.loading >= 0.0 && self.loading.is_finite()) {
            return Err(Error::Config(format!("loading must be >= 0, got {}", self.loading)));
        }
        if !(self.mvdr_loading >= 0.0 && self.mvdr_loading.is_finite()) {
            return Err(Error::Config(format!(
                "MVDR loading must be >= 0, got {}",
                self.mvdr_loading
            )));
        }
        if self.noise_frames == Some(0) {
            return Err(Error::Config("noise frame count must be positive".into()));
        }
        Ok(())
    }
}

/// Mixture spectrogram and the noise statistics shared by both sides.
#[derive(Debug, Clone)]
pub struct Frontend {
    pub spec: ComplexSpectrogram,
    pub noise_frames: usize,
    pub phi_nn: HermitianMatrixField,
    pub whitener: Whitener,
    pub samples: usize,
}

pub fn prepare(mixture: &[Vec<f64>], noise_frames: usize, config: &PipelineConfig) -> Result<Frontend> {
    config.validate()?;
    let spec = stft::analyze_padded(mixture, &config.stft)?;
    if noise_frames >= spec.frames() {
        return Err(Error::Config(format!(
            "{noise_frames} noise frames leave no frames of a {}-frame signal",
            spec.frames()
        )));
    }
    let phi_nn = covariance::estimate_noise_covariance(&spec, noise_frames)?;
    let whitener = Whitener::from_noise_covariance(&phi_nn, config.loading)?;
    Ok(Frontend {
        spec,
        noise_frames,
        phi_nn,
        whitener,
        samples: mixture.first().map_or(0, Vec::len),
    })
}

/// RTF trajectory for `side`, or `None` for [`Method::None`].
pub fn estimate_rtf(
    front: &Frontend,
    method: Method,
    side: ArraySide,
    config: &PipelineConfig,
    truth: Option<&GroundTruth>,
) -> Result<Option<RtfTrajectory>> {
    let m = front.spec.channels();
    let reference = side.reference(m);
    match method {
        Method::None => Ok(None),
        Method::Oracle => {
            let truth = truth.ok_or_else(|| Error::Config("oracle method needs ground truth".into()))?;
            let t = truth.rtf(side);
            if (t.channels(), t.bins(), t.frames()) != (m, front.spec.bins(), front.spec.frames()) {
                return Err(Error::Shape("ground truth does not match the mixture".into()));
            }
            Ok(Some(t.clone()))
        }
        Method::CwBatch => {
            let phi_yy = covariance::estimate_mixture_covariance(&front.spec, front.noise_frames)?;
            let phi_ww = covariance::whitened_covariance(&front.whitener.inverse_sqrt, &phi_yy)?;
            let per_bin = rtf::estimate_rtf_cw(&front.whitener.sqrt, &phi_ww, reference)?;
            RtfTrajectory::from_static(&per_bin, m, front.spec.frames(), reference, side).map(Some)
        }
        Method::Past => {
            let whitened = covariance::whiten(&front.spec, &front.whitener.inverse_sqrt)?;
            rtf::track_rtf_past_from(
                &whitened,
                &front.whitener.sqrt,
                reference,
                side,
                config.beta,
                front.noise_frames,
            )
            .map(Some)
        }
    }
}

pub fn weights(
    front: &Frontend,
    rtf: Option<&RtfTrajectory>,
    side: ArraySide,
    config: &PipelineConfig,
) -> Result<BeamformerWeights> {
    match rtf {
        Some(a) => beamformer::mvdr_weights(a, &front.phi_nn, config.mvdr_loading),
        None => Ok(BeamformerWeights::passthrough(
            front.spec.channels(),
            front.spec.bins(),
            front.spec.frames(),
            side,
        )),
    }
}

/// Beamformer output resynthesised at the mixture length.
pub fn enhance(front: &Frontend, w: &BeamformerWeights) -> Result<Vec<f64>> {
    let out = beamformer::apply(w, &front.spec)?;
    stft::synthesize_padded(&out, front.samples)
}

pub fn beampattern(
    w: &BeamformerWeights,
    scenario: &Scenario,
    angles: &[f64],
    config: &PipelineConfig,
) -> Result<BeampatternGrid> {
    beamformer::narrowband_beampattern(
        w,
        &scenario.linear_array(w.side()),
        angles,
        &config.stft,
        SPEED_OF_SOUND,
    )
}

/// One row of an evaluation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: u64,
    pub snr_db: f64,
    pub method: Method,
    pub status: String,
    pub si_sdr_left: Option<f64>,
    pub si_sdr_right: Option<f64>,
    pub si_sdr_input_left: Option<f64>,
    pub si_sdr_input_right: Option<f64>,
    /// Best single-microphone input SI-SDR over all channels.
    pub si_sdr_input_best: Option<f64>,
    pub rtf_mse_left_db: Option<f64>,
    pub rtf_mse_right_db: Option<f64>,
    pub doa_error_deg: Option<f64>,
    pub doa_flat_frames: Option<usize>,
}

impl EvalReport {
    pub fn failed(scenario: u64, snr_db: f64, method: Method, err: &Error) -> Self {
        Self::blank(scenario, snr_db, method, format!("error: {err}"))
    }

    fn blank(scenario: u64, snr_db: f64, method: Method, status: String) -> Self {
        Self {
            scenario,
            snr_db,
            method,
            status,
            si_sdr_left: None,
            si_sdr_right: None,
            si_sdr_input_left: None,
            si_sdr_input_right: None,
            si_sdr_input_best: None,
            rtf_mse_left_db: None,
            rtf_mse_right_db: None,
            doa_error_deg: None,
            doa_flat_frames: None,
        }
    }

    pub fn key(&self) -> (u64, String, Method) {
        (self.scenario, format_snr(self.snr_db), self.method)
    }

    pub fn input_mean(&self) -> Option<f64> {
        Some((self.si_sdr_input_left? + self.si_sdr_input_right?) / 2.0)
    }

    pub fn output_mean(&self) -> Option<f64> {
        Some((self.si_sdr_left? + self.si_sdr_right?) / 2.0)
    }

    pub fn mse_mean_db(&self) -> Option<f64> {
        Some((self.rtf_mse_left_db? + self.rtf_mse_right_db?) / 2.0)
    }
}

/// Canonical SNR spelling used in result keys.
pub fn format_snr(snr_db: f64) -> String {
    format!("{snr_db}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub beamform: bool,
    /// Only honoured together with `beamform`.
    pub doa: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            beamform: true,
            doa: true,
        }
    }
}

/// Per-run details that do not fit in a CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDetail {
    pub report: EvalReport,
    pub rtf_mse_per_frame_left: Option<Vec<Option<f64>>>,
    pub rtf_mse_per_frame_right: Option<Vec<Option<f64>>>,
    pub doa_left: Option<DoaError>,
    pub doa_right: Option<DoaError>,
}

pub fn evaluate_scene(
    scene: &Scene,
    scenario: &Scenario,
    snr_db: f64,
    method: Method,
    config: &PipelineConfig,
    options: EvalOptions,
) -> Result<EvalDetail> {
    let mixture = scene.mixture(snr_db)?;
    evaluate_mixture(
        &mixture,
        &scene.clean,
        &scene.truth,
        scenario,
        snr_db,
        method,
        config,
        options,
    )
}

/// Scores `method` on a given mixture against the clean image `clean`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_mixture(
    mixture: &[Vec<f64>],
    clean: &[Vec<f64>],
    truth: &GroundTruth,
    scenario: &Scenario,
    snr_db: f64,
    method: Method,
    config: &PipelineConfig,
    options: EvalOptions,
) -> Result<EvalDetail> {
    if clean.len() != mixture.len() || clean.is_empty() {
        return Err(Error::Shape(format!(
            "mixture has {} channels, clean image {}",
            mixture.len(),
            clean.len()
        )));
    }
    let noise_frames = config.noise_frames.unwrap_or(truth.meta.noise_frames);
    let front = prepare(mixture, noise_frames, config)?;
    let m = mixture.len();

    let mut report = EvalReport::blank(scenario.seed, snr_db, method, "ok".into());
    let mut detail = EvalDetail {
        report: report.clone(),
        rtf_mse_per_frame_left: None,
        rtf_mse_per_frame_right: None,
        doa_left: None,
        doa_right: None,
    };

    let input: Vec<f64> = (0..m)
        .map(|c| metrics::si_sdr(&mixture[c], &clean[c]))
        .collect::<Result<_>>()?;
    report.si_sdr_input_left = Some(input[0]);
    report.si_sdr_input_right = Some(input[m - 1]);
    report.si_sdr_input_best = input.iter().copied().reduce(f64::max);

    let mut doa_sum = 0.0;
    let mut flat = 0;
    for side in ArraySide::BOTH {
        let rtf = estimate_rtf(&front, method, side, config, Some(truth))?;
        if let Some(a) = &rtf {
            let mse = rtf::rtf_mse(a, truth.rtf(side))?;
            let per_frame = rtf::rtf_mse_per_frame(a, truth.rtf(side))?;
            match side {
                ArraySide::Left => {
                    report.rtf_mse_left_db = Some(mse);
                    detail.rtf_mse_per_frame_left = Some(per_frame);
                }
                ArraySide::Right => {
                    report.rtf_mse_right_db = Some(mse);
                    detail.rtf_mse_per_frame_right = Some(per_frame);
                }
            }
        }
        if !options.beamform {
            continue;
        }
        let w = weights(&front, rtf.as_ref(), side, config)?;
        let out = enhance(&front, &w)?;
        let score = metrics::si_sdr(&out, truth.clean(side))?;
        match side {
            ArraySide::Left => report.si_sdr_left = Some(score),
            ArraySide::Right => report.si_sdr_right = Some(score),
        }
        if options.doa && rtf.is_some() {
            let grid = beampattern(&w, scenario, &beamformer::default_angle_grid(), config)?;
            let err = metrics::doa_error(&grid, &truth.meta.doa_deg, &truth.meta.active)?;
            doa_sum += err.mean_deg;
            flat += err.flat_frames;
            match side {
                ArraySide::Left => detail.doa_left = Some(err),
                ArraySide::Right => detail.doa_right = Some(err),
            }
        }
    }
    if detail.doa_left.is_some() {
        report.doa_error_deg = Some(doa_sum / 2.0);
        report.doa_flat_frames = Some(flat);
    }
    detail.report = report;
    Ok(detail)
}
