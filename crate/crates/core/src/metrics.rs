//! SI-SDR, the binaural sum loss and beampattern DOA error.

use serde::{Deserialize, Serialize};

use crate::beamformer::BeampatternGrid;
use crate::error::{Error, Result};

/// SI-SDR values are clamped to `±SI_SDR_CLAMP_DB`.
pub const SI_SDR_CLAMP_DB: f64 = 120.0;

/// Peak-to-floor ratio below which a beampower frame counts as flat.
pub const FLAT_RATIO: f64 = 1.01;

/// Scale-invariant signal-to-distortion ratio of `est` against `reference`, in dB.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Shape(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    if est.iter().chain(reference).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("SI-SDR input"));
    }
    let rr: f64 = reference.iter().map(|r| r * r).sum();
    if rr == 0.0 {
        return Err(Error::InvalidInput("SI-SDR reference is all zeros".into()));
    }
    if est.iter().all(|&e| e == 0.0) {
        return Ok(-SI_SDR_CLAMP_DB);
    }
    let c = est.iter().zip(reference).map(|(e, r)| e * r).sum::<f64>() / rr;
    let target: f64 = c * c * rr;
    let distortion: f64 = est.iter().zip(reference).map(|(e, r)| (e - c * r).powi(2)).sum();
    let db = 10.0 * (target / distortion).log10();
    Ok(if db.is_nan() {
        -SI_SDR_CLAMP_DB
    } else {
        db.clamp(-SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB)
    })
}

/// Negated sum of the left and right SI-SDR values.
pub fn binaural_loss(est_left: &[f64], est_right: &[f64], ref_left: &[f64], ref_right: &[f64]) -> Result<f64> {
    Ok(-si_sdr(est_left, ref_left)? - si_sdr(est_right, ref_right)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaError {
    /// Absolute error per frame; `None` for inactive or flat frames.
    pub per_frame: Vec<Option<f64>>,
    pub mean_deg: f64,
    pub flat_frames: usize,
    pub scored_frames: usize,
}

impl DoaError {
    /// Fraction of scored frames with error at most `tol_deg`.
    pub fn fraction_within(&self, tol_deg: f64) -> f64 {
        if self.scored_frames == 0 {
            return 0.0;
        }
        let hits = self.per_frame.iter().flatten().filter(|&&e| e <= tol_deg).count();
        hits as f64 / self.scored_frames as f64
    }
}

fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Error between the wideband beampower peak and the true DOA per frame.
/// Only frames with `active[l]` are scored; flat frames are skipped and counted.
pub fn doa_error(grid: &BeampatternGrid, truth_deg: &[f64], active: &[bool]) -> Result<DoaError> {
    if truth_deg.len() != grid.frames || active.len() != grid.frames {
        return Err(Error::Shape(format!(
            "beampattern has {} frames, truth {} / {}",
            grid.frames,
            truth_deg.len(),
            active.len()
        )));
    }
    if grid.angles.is_empty() {
        return Err(Error::Shape("empty angle grid".into()));
    }
    let mut per_frame = vec![None; grid.frames];
    let mut flat_frames = 0;
    for l in (0..grid.frames).filter(|&l| active[l]) {
        let (lo, hi) = (0..grid.angles.len())
            .map(|a| grid.wide(a, l))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p), hi.max(p)));
        if !(hi >= FLAT_RATIO * lo) || hi <= 0.0 {
            flat_frames += 1;
            continue;
        }
        per_frame[l] = Some(angular_distance(grid.peak_angle(l), truth_deg[l]));
    }
    let scored: Vec<f64> = per_frame.iter().flatten().copied().collect();
    let mean_deg = if scored.is_empty() {
        f64::NAN
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    Ok(DoaError {
        per_frame,
        mean_deg,
        flat_frames,
        scored_frames: scored.len(),
    })
}
