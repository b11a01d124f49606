//! Relative transfer function estimation.
//!
//! Two estimators share the same de-whitening step: the batch
//! covariance-whitening estimate takes the principal eigenvector of the
//! whitened mixture covariance, while the PAST tracker follows that
//! eigenvector frame by frame with an `O(M)` recursion. In both cases the
//! whitened-domain vector `ψ` is mapped back through `Φ_nn^{1/2}` and
//! divided by its reference entry, so `â[ref] = 1`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::covariance::{hermitian_evd, HermitianMatrixField};
use crate::error::{Error, Result};
use crate::linalg::{norm_sqr, unit_vector, CMatrix, CVector, ONE};
use crate::par;
use crate::stft::ComplexSpectrogram;

/// Default PAST forgetting factor (time constant ≈ 80 ms at a 16 ms hop).
pub const DEFAULT_BETA: f64 = 0.8;

/// Reported MSE for an exact estimate.
pub const MSE_FLOOR_DB: f64 = -120.0;

/// Which end of the array the reference microphone sits at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArraySide {
    Left,
    Right,
}

impl ArraySide {
    /// Left-most microphone is channel 0, right-most is `M - 1`.
    pub fn reference(self, channels: usize) -> usize {
        match self {
            ArraySide::Left => 0,
            ArraySide::Right => channels - 1,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ArraySide::Left => 0,
            ArraySide::Right => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ArraySide::Left),
            1 => Some(ArraySide::Right),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArraySide::Left => "left",
            ArraySide::Right => "right",
        }
    }

    pub const BOTH: [ArraySide; 2] = [ArraySide::Left, ArraySide::Right];
}

/// Sink for arithmetic-operation counts. `()` discards them.
pub trait OpCounter {
    fn tally(&mut self, ops: u64);
}

impl OpCounter for () {
    #[inline(always)]
    fn tally(&mut self, _: u64) {}
}

/// Counts complex multiply-adds (one per multiply, multiply-accumulate or
/// divide of complex/real scalars).
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MacCount(pub u64);

impl OpCounter for MacCount {
    fn tally(&mut self, ops: u64) {
        self.0 += ops;
    }
}

/// Per-bin PAST tracker state.
#[derive(Debug, Clone, PartialEq)]
pub struct PastState {
    pub psi: CVector,
    pub delta: f64,
    pub beta: f64,
}

/// Creates a tracker. Without an explicit `psi0` the tracker starts at the
/// unit vector of `reference`; `delta0` defaults to 1 at the call sites.
pub fn past_init(
    channels: usize,
    beta: f64,
    delta0: f64,
    psi0: Option<&[Complex64]>,
    reference: usize,
) -> Result<PastState> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Config(format!(
            "forgetting factor must lie in (0, 1], got {beta}"
        )));
    }
    if !(delta0 > 0.0 && delta0.is_finite()) {
        return Err(Error::Config(format!("initial energy must be positive, got {delta0}")));
    }
    if reference >= channels {
        return Err(Error::Config(format!(
            "reference channel {reference} out of range for {channels} channels"
        )));
    }
    let psi = match psi0 {
        Some(p) if p.len() != channels => {
            return Err(Error::Shape(format!(
                "initial vector has {} entries, expected {channels}",
                p.len()
            )))
        }
        Some(p) => p.to_vec(),
        None => unit_vector(channels, reference),
    };
    Ok(PastState {
        psi,
        delta: delta0,
        beta,
    })
}

impl PastState {
    /// One PAST step on the whitened frame `y_w`.
    pub fn update(&mut self, y_w: &[Complex64]) -> Result<()> {
        self.update_counted(y_w, &mut ())
    }

    /// As [`update`](Self::update), tallying the scalar operations.
    pub fn update_counted<C: OpCounter>(&mut self, y_w: &[Complex64], ops: &mut C) -> Result<()> {
        if y_w.len() != self.psi.len() {
            return Err(Error::Shape(format!(
                "frame has {} channels, tracker has {}",
                y_w.len(),
                self.psi.len()
            )));
        }
        if y_w.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("whitened frame"));
        }
        let m = y_w.len() as u64;

        // alpha = psi^H y_w
        let alpha: Complex64 = self.psi.iter().zip(y_w).map(|(p, y)| p.conj() * y).sum();
        ops.tally(m);

        // delta = beta delta + |alpha|^2
        self.delta = self.beta * self.delta + alpha.norm_sqr();
        ops.tally(1);

        // e = y_w - psi alpha
        let e: CVector = y_w.iter().zip(&self.psi).map(|(y, p)| y - p * alpha).collect();
        ops.tally(m);

        // psi += e alpha^* / delta
        let gain = alpha.conj() / self.delta;
        ops.tally(1);
        for (p, e) in self.psi.iter_mut().zip(&e) {
            *p += e * gain;
        }
        ops.tally(m);
        Ok(())
    }
}

/// Maps a whitened-domain eigenvector back to an RTF:
/// `Φ^{1/2} ψ / (e_ref^T Φ^{1/2} ψ)`. Returns `None` when the reference
/// entry vanishes relative to the vector norm.
pub fn dewhiten_normalize(phi_nn_sqrt: &CMatrix, psi: &[Complex64], reference: usize) -> Option<CVector> {
    let v = phi_nn_sqrt.mul_vec(psi);
    let denom = v[reference];
    let scale = norm_sqr(&v).sqrt();
    if !(denom.norm() > 1e-12 * scale) {
        return None;
    }
    let mut a: CVector = v.iter().map(|z| z / denom).collect();
    a[reference] = ONE;
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return None;
    }
    Some(a)
}

/// Batch covariance-whitening RTF per bin. `None` marks bins where the
/// reference entry of the de-whitened eigenvector vanishes.
pub fn estimate_rtf_cw(
    phi_nn_sqrt: &HermitianMatrixField,
    phi_ww: &HermitianMatrixField,
    reference: usize,
) -> Result<Vec<Option<CVector>>> {
    if phi_nn_sqrt.dim() != phi_ww.dim() || phi_nn_sqrt.bins() != phi_ww.bins() {
        return Err(Error::Shape(
            "square-root noise covariance and whitened covariance disagree".into(),
        ));
    }
    if reference >= phi_ww.dim() {
        return Err(Error::Config(format!("reference channel {reference} out of range")));
    }
    let evd = hermitian_evd(phi_ww)?;
    Ok(par::map_range(evd.len(), |k| {
        dewhiten_normalize(phi_nn_sqrt.get(k), &evd[k].principal_vector(), reference)
    }))
}

/// RTF vectors `â(l, k)` stored `(channel, bin, frame)` row-major, with a
/// per-cell validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct RtfTrajectory {
    channels: usize,
    bins: usize,
    frames: usize,
    values: Vec<Complex64>,
    valid: Vec<bool>,
    reference: usize,
    side: ArraySide,
}

impl RtfTrajectory {
    /// Assembles a trajectory from `per_bin[k][l]` cells.
    pub fn from_cells(
        channels: usize,
        per_bin: Vec<Vec<(CVector, bool)>>,
        reference: usize,
        side: ArraySide,
    ) -> Result<Self> {
        let bins = per_bin.len();
        let frames = per_bin.first().map_or(0, Vec::len);
        let mut values = vec![Complex64::new(0.0, 0.0); channels * bins * frames];
        let mut valid = vec![false; bins * frames];
        for (k, series) in per_bin.into_iter().enumerate() {
            if series.len() != frames {
                return Err(Error::Shape("ragged RTF cells".into()));
            }
            for (l, (a, ok)) in series.into_iter().enumerate() {
                if a.len() != channels {
                    return Err(Error::Shape("RTF vector length mismatch".into()));
                }
                for (m, z) in a.into_iter().enumerate() {
                    values[(m * bins + k) * frames + l] = z;
                }
                valid[k * frames + l] = ok;
            }
        }
        Self::from_raw(channels, bins, frames, values, valid, reference, side)
    }

    pub fn from_raw(
        channels: usize,
        bins: usize,
        frames: usize,
        values: Vec<Complex64>,
        valid: Vec<bool>,
        reference: usize,
        side: ArraySide,
    ) -> Result<Self> {
        if values.len() != channels * bins * frames || valid.len() != bins * frames {
            return Err(Error::Shape("RTF tensor size mismatch".into()));
        }
        if reference >= channels {
            return Err(Error::Config(format!("reference channel {reference} out of range")));
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("RTF trajectory"));
        }
        let t = Self {
            channels,
            bins,
            frames,
            values,
            valid,
            reference,
            side,
        };
        for k in 0..bins {
            for l in 0..frames {
                if t.is_valid(k, l) && t.get(reference, k, l) != ONE {
                    return Err(Error::InvalidInput(format!(
                        "reference entry of cell ({k}, {l}) is not 1"
                    )));
                }
            }
        }
        Ok(t)
    }

    /// Repeats one vector per bin over `frames` frames.
    pub fn from_static(
        per_bin: &[Option<CVector>],
        channels: usize,
        frames: usize,
        reference: usize,
        side: ArraySide,
    ) -> Result<Self> {
        let trivial = unit_vector(channels, reference);
        let cells = per_bin
            .iter()
            .map(|a| {
                let cell = match a {
                    Some(v) => (v.clone(), true),
                    None => (trivial.clone(), false),
                };
                vec![cell; frames]
            })
            .collect();
        Self::from_cells(channels, cells, reference, side)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn side(&self) -> ArraySide {
        self.side
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, m: usize, k: usize, l: usize) -> Complex64 {
        self.values[(m * self.bins + k) * self.frames + l]
    }

    pub fn vector(&self, k: usize, l: usize) -> CVector {
        (0..self.channels).map(|m| self.get(m, k, l)).collect()
    }

    pub fn is_valid(&self, k: usize, l: usize) -> bool {
        self.valid[k * self.frames + l]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Runs one PAST tracker per bin over a whitened spectrogram and
/// de-whitens every frame's eigenvector estimate.
///
/// Cells whose normalization fails keep the previous frame's RTF (the
/// trivial RTF before any success) and are flagged invalid.
pub fn track_rtf_past(
    whitened: &ComplexSpectrogram,
    phi_nn_sqrt: &HermitianMatrixField,
    reference: usize,
    side: ArraySide,
    beta: f64,
) -> Result<RtfTrajectory> {
    track_rtf_past_from(whitened, phi_nn_sqrt, reference, side, beta, 0)
}

/// [`track_rtf_past`] with the trackers started at frame `start`; earlier
/// cells hold the trivial RTF and are flagged invalid.
pub fn track_rtf_past_from(
    whitened: &ComplexSpectrogram,
    phi_nn_sqrt: &HermitianMatrixField,
    reference: usize,
    side: ArraySide,
    beta: f64,
    start: usize,
) -> Result<RtfTrajectory> {
    let m = whitened.channels();
    if phi_nn_sqrt.dim() != m || phi_nn_sqrt.bins() != whitened.bins() {
        return Err(Error::Shape(
            "square-root noise covariance does not match the spectrogram".into(),
        ));
    }
    // Validates beta and the reference once before fanning out.
    past_init(m, beta, 1.0, None, reference)?;

    let per_bin = par::map_range(whitened.bins(), |k| -> Result<Vec<(CVector, bool)>> {
        let mut state = past_init(m, beta, 1.0, None, reference)?;
        let sqrt = phi_nn_sqrt.get(k);
        let mut held = unit_vector(m, reference);
        let mut out = Vec::with_capacity(whitened.frames());
        for _ in 0..start.min(whitened.frames()) {
            out.push((held.clone(), false));
        }
        for l in start..whitened.frames() {
            state.update(&whitened.frame_vector(k, l))?;
            match dewhiten_normalize(sqrt, &state.psi, reference) {
                Some(a) => {
                    held.clone_from(&a);
                    out.push((a, true));
                }
                None => out.push((held.clone(), false)),
            }
        }
        Ok(out)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    RtfTrajectory::from_cells(m, per_bin, reference, side)
}

fn check_comparable(estimate: &RtfTrajectory, truth: &RtfTrajectory) -> Result<()> {
    if (estimate.channels, estimate.bins, estimate.frames) != (truth.channels, truth.bins, truth.frames) {
        return Err(Error::Shape(format!(
            "estimate is ({}, {}, {}), truth is ({}, {}, {})",
            estimate.channels, estimate.bins, estimate.frames, truth.channels, truth.bins, truth.frames
        )));
    }
    if estimate.reference != truth.reference {
        return Err(Error::InvalidInput(format!(
            "reference channels differ ({} vs {})",
            estimate.reference, truth.reference
        )));
    }
    Ok(())
}

/// `||â − a||² / ||a||²` for one cell, or `None` if the cell is excluded.
fn cell_error(estimate: &RtfTrajectory, truth: &RtfTrajectory, k: usize, l: usize) -> Option<f64> {
    if !estimate.is_valid(k, l) || !truth.is_valid(k, l) {
        return None;
    }
    let mut err = 0.0;
    let mut energy = 0.0;
    for m in 0..truth.channels {
        let a = truth.get(m, k, l);
        err += (estimate.get(m, k, l) - a).norm_sqr();
        energy += a.norm_sqr();
    }
    (energy > 0.0).then(|| err / energy)
}

fn to_db(mse: f64) -> f64 {
    if mse <= 0.0 {
        MSE_FLOOR_DB
    } else {
        (10.0 * mse.log10()).max(MSE_FLOOR_DB)
    }
}

/// Normalized MSE in dB: each valid cell is normalized by the true RTF
/// energy, then all cells are averaged.
pub fn rtf_mse(estimate: &RtfTrajectory, truth: &RtfTrajectory) -> Result<f64> {
    check_comparable(estimate, truth)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 0..truth.bins {
        for l in 0..truth.frames {
            if let Some(e) = cell_error(estimate, truth, k, l) {
                sum += e;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput(
            "no comparable cells between estimate and truth".into(),
        ));
    }
    Ok(to_db(sum / count as f64))
}

/// Normalized MSE in dB per frame (averaged over bins); `None` for frames
/// without comparable cells.
pub fn rtf_mse_per_frame(estimate: &RtfTrajectory, truth: &RtfTrajectory) -> Result<Vec<Option<f64>>> {
    check_comparable(estimate, truth)?;
    Ok((0..truth.frames)
        .map(|l| {
            let errs: Vec<f64> = (0..truth.bins)
                .filter_map(|k| cell_error(estimate, truth, k, l))
                .collect();
            (!errs.is_empty()).then(|| to_db(errs.iter().sum::<f64>() / errs.len() as f64))
        })
        .collect())
}
