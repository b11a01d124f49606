//! RTF-guided MVDR weights, filter-and-sum application and beampattern
//! analysis for linear arrays.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::covariance::{hermitian_evd, HermitianMatrixField};
use crate::error::{Error, Result};
use crate::linalg::{inner, unit_vector, CMatrix, CVector, ZERO};
use crate::par;
use crate::rtf::{ArraySide, RtfTrajectory};
use crate::stft::{ComplexSpectrogram, StftConfig};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Default MVDR diagonal loading, relative to the mean noise eigenvalue.
pub const DEFAULT_MVDR_LOADING: f64 = 0.1;

/// Element positions (metres) along the array axis, sorted ascending,
/// plus the element that steering vectors are normalized to.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearArray {
    pub positions: Vec<f64>,
    pub reference: usize,
}

impl LinearArray {
    /// Uniform array of `count` elements centred on the origin.
    pub fn uniform(count: usize, spacing: f64, reference: usize) -> Self {
        let mid = (count as f64 - 1.0) / 2.0;
        Self {
            positions: (0..count).map(|m| (m as f64 - mid) * spacing).collect(),
            reference,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn with_reference(&self, reference: usize) -> Self {
        Self {
            positions: self.positions.clone(),
            reference,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.positions.is_empty() || self.reference >= self.positions.len() {
            return Err(Error::Config("array needs elements and a valid reference".into()));
        }
        if self.positions.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("array positions must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Far-field plane-wave steering vector.
///
/// `h_m = exp(-j 2π f_k (τ_m - τ_ref))` with `τ_m = x_m sin(θ) / c`, so
/// positive angles arrive first at the low-index (left) end of the array.
pub fn steering_vector(
    array: &LinearArray,
    theta_deg: f64,
    k: usize,
    config: &StftConfig,
    speed_of_sound: f64,
) -> Result<CVector> {
    array.validate()?;
    if !(theta_deg.abs() <= 90.0) {
        return Err(Error::Config(format!("steering angle {theta_deg} outside [-90, 90]")));
    }
    if k >= config.num_bins() {
        return Err(Error::Config(format!("bin {k} out of range")));
    }
    Ok(steering_unchecked(
        array,
        theta_deg,
        config.bin_frequency(k),
        speed_of_sound,
    ))
}

fn steering_unchecked(array: &LinearArray, theta_deg: f64, freq: f64, c: f64) -> CVector {
    let s = theta_deg.to_radians().sin();
    let x_ref = array.positions[array.reference];
    array
        .positions
        .iter()
        .map(|&x| Complex64::from_polar(1.0, -2.0 * PI * freq * (x - x_ref) * s / c))
        .collect()
}

/// Beamformer weights `w(l, k)`, stored `(channel, bin, frame)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerWeights {
    channels: usize,
    bins: usize,
    frames: usize,
    values: Vec<Complex64>,
    side: ArraySide,
}

impl BeamformerWeights {
    fn from_bins(channels: usize, per_bin: Vec<Vec<CVector>>, side: ArraySide) -> Self {
        let bins = per_bin.len();
        let frames = per_bin.first().map_or(0, Vec::len);
        let mut values = vec![ZERO; channels * bins * frames];
        for (k, series) in per_bin.into_iter().enumerate() {
            for (l, w) in series.into_iter().enumerate() {
                for (m, z) in w.into_iter().enumerate() {
                    values[(m * bins + k) * frames + l] = z;
                }
            }
        }
        Self {
            channels,
            bins,
            frames,
            values,
            side,
        }
    }

    /// Same weight vector per bin for every frame.
    pub fn constant(per_bin: &[CVector], frames: usize, side: ArraySide) -> Self {
        let channels = per_bin.first().map_or(0, Vec::len);
        let expanded = per_bin.iter().map(|w| vec![w.clone(); frames]).collect();
        Self::from_bins(channels, expanded, side)
    }

    /// Reference-microphone passthrough `w = e_ref`.
    pub fn passthrough(channels: usize, bins: usize, frames: usize, side: ArraySide) -> Self {
        let e = unit_vector(channels, side.reference(channels));
        Self::constant(&vec![e; bins], frames, side)
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

    pub fn side(&self) -> ArraySide {
        self.side
    }

    pub fn get(&self, m: usize, k: usize, l: usize) -> Complex64 {
        self.values[(m * self.bins + k) * self.frames + l]
    }

    pub fn vector(&self, k: usize, l: usize) -> CVector {
        (0..self.channels).map(|m| self.get(m, k, l)).collect()
    }
}

/// Delay-and-sum weights `h(θ0) / M` for every bin and frame.
pub fn delay_and_sum_weights(
    array: &LinearArray,
    theta_deg: f64,
    config: &StftConfig,
    speed_of_sound: f64,
    frames: usize,
    side: ArraySide,
) -> Result<BeamformerWeights> {
    let m = array.len() as f64;
    let per_bin = (0..config.num_bins())
        .map(|k| {
            steering_vector(array, theta_deg, k, config, speed_of_sound).map(|h| h.into_iter().map(|z| z / m).collect())
        })
        .collect::<Result<Vec<CVector>>>()?;
    Ok(BeamformerWeights::constant(&per_bin, frames, side))
}

/// Distortionless MVDR weights `Φ⁻¹â / (âᴴΦ⁻¹â)` per cell, with
/// `Φ = Φ_nn + loading·(trace/M)·I`.
///
/// Invalid RTF cells reuse the previous frame's weights (the reference
/// passthrough before the first valid cell of a bin).
pub fn mvdr_weights(rtf: &RtfTrajectory, phi_nn: &HermitianMatrixField, loading: f64) -> Result<BeamformerWeights> {
    if phi_nn.dim() != rtf.channels() || phi_nn.bins() != rtf.bins() {
        return Err(Error::Shape(format!(
            "noise covariance is {} bins of {}x{}, RTF has {} bins of {} channels",
            phi_nn.bins(),
            phi_nn.dim(),
            phi_nn.dim(),
            rtf.bins(),
            rtf.channels()
        )));
    }
    if !(loading >= 0.0 && loading.is_finite()) {
        return Err(Error::Config(format!("loading must be >= 0, got {loading}")));
    }
    let m = rtf.channels();
    let reference = rtf.reference();
    let evd = hermitian_evd(phi_nn)?;
    let inverses = evd
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let eps = loading * e.values.iter().sum::<f64>() / m as f64;
            let smallest = e.values.last().copied().unwrap_or(0.0) + eps;
            if !(smallest > 0.0) {
                return Err(Error::NotPositiveDefinite {
                    bin: k,
                    eigenvalue: smallest,
                });
            }
            Ok(e.map_spectrum(|l| 1.0 / (l + eps)))
        })
        .collect::<Result<Vec<CMatrix>>>()?;

    let per_bin = par::map_range(rtf.bins(), |k| {
        let inv = &inverses[k];
        let mut held = unit_vector(m, reference);
        let mut any_valid = false;
        let series: Vec<CVector> = (0..rtf.frames())
            .map(|l| {
                if rtf.is_valid(k, l) {
                    let a = rtf.vector(k, l);
                    let num = inv.mul_vec(&a);
                    let den = inner(&a, &num).re;
                    if den > 0.0 && den.is_finite() {
                        held = num.into_iter().map(|z| z / den).collect();
                        any_valid = true;
                    }
                }
                held.clone()
            })
            .collect();
        (series, any_valid)
    });

    let dead = per_bin.iter().filter(|(_, ok)| !ok).count();
    if dead > 0 && rtf.frames() > 0 {
        log::warn!("{dead} bins have no valid RTF; using reference passthrough there");
    }
    Ok(BeamformerWeights::from_bins(
        m,
        per_bin.into_iter().map(|(s, _)| s).collect(),
        rtf.side(),
    ))
}

/// Filter-and-sum output `ŝ(l, k) = w(l, k)ᴴ y(l, k)`.
pub fn apply(weights: &BeamformerWeights, spec: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    if (weights.channels, weights.bins, weights.frames) != (spec.channels(), spec.bins(), spec.frames()) {
        return Err(Error::Shape(format!(
            "weights are ({}, {}, {}), spectrogram is ({}, {}, {})",
            weights.channels,
            weights.bins,
            weights.frames,
            spec.channels(),
            spec.bins(),
            spec.frames()
        )));
    }
    let per_bin = par::map_range(spec.bins(), |k| {
        (0..spec.frames())
            .map(|l| {
                let s: Complex64 = (0..spec.channels())
                    .map(|m| weights.get(m, k, l).conj() * spec.get(m, k, l))
                    .sum();
                vec![s]
            })
            .collect::<Vec<_>>()
    });
    Ok(ComplexSpectrogram::from_bin_frames(&per_bin, 1, *spec.config()))
}

/// `start, start + step, ...` up to and including `stop` (within 1e-9).
pub fn angle_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) || start < -90.0 || stop > 90.0 {
        return Err(Error::Config(format!("invalid angle grid {start}..{stop} step {step}")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

pub fn default_angle_grid() -> Vec<f64> {
    (0..=180).map(|i| -90.0 + i as f64).collect()
}

/// Narrowband magnitudes `|B(k, θ, l)|` stored `(bin, angle, frame)` and
/// wideband power `P(θ, l)` stored `(angle, frame)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeampatternGrid {
    pub angles: Vec<f64>,
    pub bins: usize,
    pub frames: usize,
    pub narrowband: Vec<f64>,
    pub wideband: Vec<f64>,
}

impl BeampatternGrid {
    pub fn narrow(&self, k: usize, a: usize, l: usize) -> f64 {
        self.narrowband[(k * self.angles.len() + a) * self.frames + l]
    }

    pub fn wide(&self, a: usize, l: usize) -> f64 {
        self.wideband[a * self.frames + l]
    }

    /// Angle index of the wideband maximum at frame `l`.
    pub fn peak_index(&self, l: usize) -> usize {
        (0..self.angles.len())
            .max_by(|&a, &b| self.wide(a, l).total_cmp(&self.wide(b, l)))
            .unwrap_or(0)
    }

    pub fn peak_angle(&self, l: usize) -> f64 {
        self.angles[self.peak_index(l)]
    }
}

/// `|B(k, θ, l)| = |w(k, l)ᴴ h(k, θ)|` over the angle grid, plus the
/// wideband power derived from it.
pub fn narrowband_beampattern(
    weights: &BeamformerWeights,
    array: &LinearArray,
    angles: &[f64],
    config: &StftConfig,
    speed_of_sound: f64,
) -> Result<BeampatternGrid> {
    array.validate()?;
    if array.len() != weights.channels {
        return Err(Error::Shape(format!(
            "array has {} elements, weights have {} channels",
            array.len(),
            weights.channels
        )));
    }
    if weights.bins != config.num_bins() {
        return Err(Error::Shape("weights and STFT config disagree on bins".into()));
    }
    if angles.iter().any(|a| !(a.abs() <= 90.0)) {
        return Err(Error::Config("angles must lie in [-90, 90]".into()));
    }
    let n_ang = angles.len();
    let frames = weights.frames;
    let mut narrowband = vec![0.0; weights.bins * n_ang * frames];
    par::for_each_chunk_mut(&mut narrowband, (n_ang * frames).max(1), |k, chunk| {
        let f = config.bin_frequency(k);
        let steer: Vec<CVector> = angles
            .iter()
            .map(|&t| steering_unchecked(array, t, f, speed_of_sound))
            .collect();
        for l in 0..frames {
            let w = weights.vector(k, l);
            for (a, h) in steer.iter().enumerate() {
                chunk[a * frames + l] = inner(&w, h).norm();
            }
        }
    });
    let mut grid = BeampatternGrid {
        angles: angles.to_vec(),
        bins: weights.bins,
        frames,
        narrowband,
        wideband: Vec::new(),
    };
    grid.wideband = wideband_beampower(&grid);
    Ok(grid)
}

/// `P(θ, l) = Σ_k |B(k, θ, l)|²`, summed in ascending bin order.
pub fn wideband_beampower(grid: &BeampatternGrid) -> Vec<f64> {
    let n_ang = grid.angles.len();
    let mut out = vec![0.0; n_ang * grid.frames];
    for k in 0..grid.bins {
        for a in 0..n_ang {
            for l in 0..grid.frames {
                let b = grid.narrow(k, a, l);
                out[a * grid.frames + l] += b * b;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::linalg::testing::{random_cvec, random_spd};
    use crate::linalg::ONE;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn single_cell_rtf(a: CVector, reference: usize) -> RtfTrajectory {
        RtfTrajectory::from_static(&[Some(a)], 2, 1, reference, ArraySide::Left).unwrap()
    }

    fn close(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).norm() < tol)
    }

    #[test]
    fn mvdr_identity_noise_closed_form() {
        let rtf = single_cell_rtf(vec![ONE, c(0.5)], 0);
        let phi = HermitianMatrixField::constant(CMatrix::identity(2), 1).unwrap();
        let w = mvdr_weights(&rtf, &phi, 0.0).unwrap();
        assert!(close(&w.vector(0, 0), &[c(0.8), c(0.4)], 1e-15));
        assert!((inner(&w.vector(0, 0), &rtf.vector(0, 0)) - ONE).norm() < 1e-15);
    }

    #[test]
    fn mvdr_reference_rtf_passes_through() {
        let rtf = single_cell_rtf(vec![ONE, c(0.0)], 0);
        let phi = HermitianMatrixField::constant(CMatrix::from_diag(&[2.0, 7.0]), 1).unwrap();
        let w = mvdr_weights(&rtf, &phi, 0.0).unwrap();
        assert!(close(&w.vector(0, 0), &[ONE, c(0.0)], 1e-15));
    }

    #[test]
    fn mvdr_invariant_to_noise_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = random_spd(&mut rng, 2);
        let mut a = random_cvec(&mut rng, 2);
        let a0 = a[0];
        a.iter_mut().for_each(|z| *z /= a0);
        a[0] = ONE;
        let rtf = single_cell_rtf(a, 0);
        let w1 = mvdr_weights(&rtf, &HermitianMatrixField::constant(phi.clone(), 1).unwrap(), 1e-6).unwrap();
        let w2 = mvdr_weights(&rtf, &HermitianMatrixField::constant(phi.scale(30.0), 1).unwrap(), 1e-6).unwrap();
        assert!(close(&w1.vector(0, 0), &w2.vector(0, 0), 1e-12));
    }

    #[test]
    fn mvdr_minimizes_output_noise_against_grid_search() {
        // M = 2 with w^H a = 1 and a_0 = 1: w = (1 - z conj(a_1)) e_0 + z e_1
        // parameterized by the free complex entry z. Brute-force over z.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..3 {
            let phi = random_spd(&mut rng, 2);
            let a1 = random_cvec(&mut rng, 1)[0];
            let rtf = single_cell_rtf(vec![ONE, a1], 0);
            let field = HermitianMatrixField::constant(phi.clone(), 1).unwrap();
            let w = mvdr_weights(&rtf, &field, 0.0).unwrap().vector(0, 0);
            let power = |w: &[Complex64]| inner(w, &phi.mul_vec(w)).re;
            let opt = power(&w);

            let mut best = f64::INFINITY;
            let mut best_z = Complex64::new(0.0, 0.0);
            let mut center = Complex64::new(0.0, 0.0);
            let mut radius = 4.0;
            for _ in 0..30 {
                for i in -20..=20 {
                    for j in -20..=20 {
                        let z = center + Complex64::new(i as f64, j as f64) * (radius / 20.0);
                        let cand = vec![ONE - z * a1.conj(), z];
                        let p = power(&cand);
                        if p < best {
                            best = p;
                            best_z = z;
                        }
                    }
                }
                center = best_z;
                radius *= 0.3;
            }
            assert!(opt <= best + 1e-12, "mvdr {opt} vs grid {best}");
            assert!((opt - best).abs() < 1e-9 * opt.max(1.0));
        }
    }

    #[test]
    fn mvdr_holds_previous_weights_over_invalid_cells() {
        let cells = vec![vec![
            (vec![ONE, c(0.5)], true),
            (vec![ONE, c(0.0)], false),
            (vec![ONE, c(0.0)], false),
        ]];
        let rtf = RtfTrajectory::from_cells(2, cells, 0, ArraySide::Left).unwrap();
        let phi = HermitianMatrixField::constant(CMatrix::identity(2), 1).unwrap();
        let w = mvdr_weights(&rtf, &phi, 0.0).unwrap();
        assert_eq!(w.vector(0, 2), w.vector(0, 0));

        let dead = RtfTrajectory::from_cells(2, vec![vec![(vec![ONE, c(0.0)], false); 2]], 0, ArraySide::Left).unwrap();
        let w = mvdr_weights(&dead, &phi, 0.0).unwrap();
        assert_eq!(w.vector(0, 1), vec![ONE, c(0.0)]);
    }

    #[test]
    fn mvdr_shape_mismatch() {
        let rtf = single_cell_rtf(vec![ONE, c(0.5)], 0);
        let phi = HermitianMatrixField::constant(CMatrix::identity(3), 1).unwrap();
        assert!(matches!(mvdr_weights(&rtf, &phi, 0.0), Err(Error::Shape(_))));
    }

    fn random_spec(rng: &mut ChaCha8Rng, m: usize, frames: usize) -> ComplexSpectrogram {
        let cfg = StftConfig {
            window_len: 8,
            hop: 4,
            ..StftConfig::default()
        };
        let n = m * cfg.num_bins() * frames;
        ComplexSpectrogram::from_raw(m, frames, random_cvec(rng, n), cfg).unwrap()
    }

    #[test]
    fn apply_selects_channel_and_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = random_spec(&mut rng, 3, 6);
        let e0 = BeamformerWeights::passthrough(3, spec.bins(), 6, ArraySide::Left);
        let out = apply(&e0, &spec).unwrap();
        assert_eq!(out, spec.channel(0));

        let per_bin: Vec<Vec<CVector>> = (0..spec.bins())
            .map(|_| (0..6).map(|_| random_cvec(&mut rng, 3)).collect())
            .collect();
        let w = BeamformerWeights::from_bins(3, per_bin.clone(), ArraySide::Left);
        let out = apply(&w, &spec).unwrap();
        for k in 0..spec.bins() {
            for l in 0..6 {
                let mut acc = Complex64::new(0.0, 0.0);
                for m in 0..3 {
                    acc += per_bin[k][l][m].conj() * spec.get(m, k, l);
                }
                assert!((out.get(0, k, l) - acc).norm() < 1e-12);
            }
        }
        let wrong = BeamformerWeights::passthrough(2, spec.bins(), 6, ArraySide::Left);
        assert!(matches!(apply(&wrong, &spec), Err(Error::Shape(_))));
    }

    #[test]
    fn distortionless_output_recovers_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = StftConfig {
            window_len: 8,
            hop: 4,
            ..StftConfig::default()
        };
        let m = 4;
        let frames = 5;
        let per_bin: Vec<Option<CVector>> = (0..cfg.num_bins())
            .map(|_| {
                let mut a = random_cvec(&mut rng, m);
                let a0 = a[0];
                a.iter_mut().for_each(|z| *z /= a0);
                a[0] = ONE;
                Some(a)
            })
            .collect();
        let rtf = RtfTrajectory::from_static(&per_bin, m, frames, 0, ArraySide::Left).unwrap();
        let phi = HermitianMatrixField::new((0..cfg.num_bins()).map(|_| random_spd(&mut rng, m)).collect()).unwrap();
        let w = mvdr_weights(&rtf, &phi, 1e-6).unwrap();
        let s = random_cvec(&mut rng, cfg.num_bins() * frames);
        let mut spec = ComplexSpectrogram::zeros(m, frames, cfg);
        for k in 0..cfg.num_bins() {
            for l in 0..frames {
                for ch in 0..m {
                    spec.set(ch, k, l, rtf.get(ch, k, l) * s[k * frames + l]);
                }
            }
        }
        let out = apply(&w, &spec).unwrap();
        for k in 0..cfg.num_bins() {
            for l in 0..frames {
                assert!((out.get(0, k, l) - s[k * frames + l]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn steering_vector_special_cases() {
        let cfg = StftConfig::default();
        let arr = LinearArray::uniform(4, 0.05, 0);
        for k in [0, 10, 200] {
            let h = steering_vector(&arr, 0.0, k, &cfg, SPEED_OF_SOUND).unwrap();
            assert!(h.iter().all(|z| (z - ONE).norm() < 1e-15));
        }
        let h = steering_vector(&arr, 37.0, 0, &cfg, SPEED_OF_SOUND).unwrap();
        assert!(h.iter().all(|z| (z - ONE).norm() < 1e-15));

        // f = c / (2d) at 90 degrees: half-wavelength spacing flips sign.
        let d = SPEED_OF_SOUND * cfg.window_len as f64 / (2.0 * 64.0 * cfg.sample_rate_hz as f64);
        let pair = LinearArray {
            positions: vec![0.0, d],
            reference: 0,
        };
        let h = steering_vector(&pair, 90.0, 64, &cfg, SPEED_OF_SOUND).unwrap();
        assert!((h[0] - ONE).norm() < 1e-12);
        assert!((h[1] + ONE).norm() < 1e-12);

        assert!(steering_vector(&arr, 91.0, 0, &cfg, SPEED_OF_SOUND).is_err());
        let unsorted = LinearArray {
            positions: vec![0.1, 0.0],
            reference: 0,
        };
        assert!(steering_vector(&unsorted, 0.0, 0, &cfg, SPEED_OF_SOUND).is_err());
    }

    #[test]
    fn delay_and_sum_peaks_at_steered_angle() {
        let cfg = StftConfig::default();
        let arr = LinearArray::uniform(8, 0.05, 0);
        let angles = default_angle_grid();
        for theta in [-60.0, 0.0, 30.0] {
            let w = delay_and_sum_weights(&arr, theta, &cfg, SPEED_OF_SOUND, 2, ArraySide::Left).unwrap();
            let g = narrowband_beampattern(&w, &arr, &angles, &cfg, SPEED_OF_SOUND).unwrap();
            let a0 = angles.iter().position(|&a| a == theta).unwrap();
            for k in 0..cfg.num_bins() {
                assert!((g.narrow(k, a0, 1) - 1.0).abs() < 1e-12);
            }
            assert_eq!(g.peak_angle(0), theta);
            assert_eq!(g.peak_angle(1), theta);
        }
    }

    #[test]
    fn single_microphone_is_omnidirectional() {
        let cfg = StftConfig::default();
        let arr = LinearArray::uniform(4, 0.05, 0);
        let w = BeamformerWeights::passthrough(4, cfg.num_bins(), 2, ArraySide::Left);
        let g = narrowband_beampattern(&w, &arr, &default_angle_grid(), &cfg, SPEED_OF_SOUND).unwrap();
        assert!(g.narrowband.iter().all(|&b| (b - 1.0).abs() < 1e-12));
        assert!(g.wideband.iter().all(|&p| (p - cfg.num_bins() as f64).abs() < 1e-9));
    }

    #[test]
    fn wideband_sum_special_cases_and_naive_oracle() {
        let mut grid = BeampatternGrid {
            angles: vec![-10.0, 0.0, 10.0],
            bins: 4,
            frames: 2,
            narrowband: vec![0.0; 4 * 3 * 2],
            wideband: Vec::new(),
        };
        grid.narrowband[(2 * 3 + 1) * 2 + 1] = 0.7;
        let p = wideband_beampower(&grid);
        assert!((p[3] - 0.49).abs() < 1e-15);
        assert_eq!(p.iter().filter(|&&v| v != 0.0).count(), 1);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        grid.narrowband.iter_mut().for_each(|v| *v = rng.gen_range(0.0..2.0));
        let p = wideband_beampower(&grid);
        for a in 0..3 {
            for l in 0..2 {
                let naive: f64 = (0..4).map(|k| grid.narrow(k, a, l).powi(2)).sum();
                assert!((p[a * 2 + l] - naive).abs() <= 1e-12 * naive);
            }
        }
    }

    #[test]
    fn angle_grid_resolution() {
        assert_eq!(angle_grid(-90.0, 90.0, 1.0).unwrap().len(), 181);
        assert_eq!(angle_grid(-90.0, 90.0, 2.0).unwrap().len(), 91);
        assert_eq!(angle_grid(-90.0, 90.0, 0.5).unwrap().len(), 361);
        assert!(angle_grid(-90.0, 90.0, 0.0).is_err());
        assert_eq!(default_angle_grid(), angle_grid(-90.0, 90.0, 1.0).unwrap());
    }
}
