//! Per-bin spatial covariance estimation, Hermitian matrix powers and
//! whitening.

use std::ops::Range;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::linalg::{hermitian_eigen, hermitian_tolerance, CMatrix, EigenDecomposition};
use crate::par;
use crate::stft::ComplexSpectrogram;

/// Default diagonal loading, relative to the mean eigenvalue `trace / M`.
pub const DEFAULT_LOADING: f64 = 1e-6;

/// One `M x M` Hermitian matrix per frequency bin.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrixField {
    dim: usize,
    mats: Vec<CMatrix>,
}

impl HermitianMatrixField {
    /// Wraps per-bin matrices, checking squareness and Hermitian symmetry.
    pub fn new(mats: Vec<CMatrix>) -> Result<Self> {
        let dim = mats.first().map_or(0, CMatrix::dim);
        for (k, m) in mats.iter().enumerate() {
            if m.dim() != dim {
                return Err(Error::Shape(format!(
                    "bin {k} is {0}x{0}, expected {dim}x{dim}",
                    m.dim()
                )));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite("covariance field"));
            }
            let defect = m.hermitian_defect();
            if defect > hermitian_tolerance(m) {
                return Err(Error::NotHermitian(defect));
            }
        }
        Ok(Self { dim, mats })
    }

    /// Same matrix at every bin.
    pub fn constant(m: CMatrix, bins: usize) -> Result<Self> {
        Self::new(vec![m; bins])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bins(&self) -> usize {
        self.mats.len()
    }

    pub fn get(&self, k: usize) -> &CMatrix {
        &self.mats[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &CMatrix> {
        self.mats.iter()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            mats: self.mats.iter().map(|m| m.scale(s)).collect(),
        }
    }
}

fn frame_range_covariance(spec: &ComplexSpectrogram, frames: Range<usize>) -> HermitianMatrixField {
    let m = spec.channels();
    let count = frames.len() as f64;
    let mats = par::map_range(spec.bins(), |k| {
        let mut acc = CMatrix::zeros(m);
        let mut y = vec![Complex64::new(0.0, 0.0); m];
        for l in frames.clone() {
            for (ch, v) in y.iter_mut().enumerate() {
                *v = spec.get(ch, k, l);
            }
            acc.add_outer(&y, 1.0);
        }
        let mut acc = acc.scale(1.0 / count);
        acc.symmetrize();
        acc
    });
    HermitianMatrixField { dim: m, mats }
}

/// Noise covariance from the leading `noise_frames` frames:
/// `(1/L_n) Σ_{l < L_n} y(l,k) y(l,k)^H`.
pub fn estimate_noise_covariance(spec: &ComplexSpectrogram, noise_frames: usize) -> Result<HermitianMatrixField> {
    if noise_frames == 0 || noise_frames > spec.frames() {
        return Err(Error::Config(format!(
            "noise frame count must be in [1, {}], got {noise_frames}",
            spec.frames()
        )));
    }
    Ok(frame_range_covariance(spec, 0..noise_frames))
}

/// Mixture covariance averaged over frames `[noise_frames, L)`.
pub fn estimate_mixture_covariance(spec: &ComplexSpectrogram, noise_frames: usize) -> Result<HermitianMatrixField> {
    if noise_frames >= spec.frames() {
        return Err(Error::Config(format!(
            "no frames left after {noise_frames} noise-only frames (L = {})",
            spec.frames()
        )));
    }
    Ok(frame_range_covariance(spec, noise_frames..spec.frames()))
}

pub fn hermitian_evd(field: &HermitianMatrixField) -> Result<Vec<EigenDecomposition>> {
    par::map_slice(&field.mats, hermitian_eigen).into_iter().collect()
}

/// Loaded spectrum `λ_i + loading * trace / M` of one bin.
fn loaded(evd: &EigenDecomposition, loading: f64) -> (f64, f64) {
    let n = evd.values.len() as f64;
    let trace: f64 = evd.values.iter().sum();
    (loading * trace / n, trace)
}

fn check_loading(loading: f64) -> Result<()> {
    if !(loading >= 0.0 && loading.is_finite()) {
        return Err(Error::Config(format!(
            "diagonal loading must be finite and >= 0, got {loading}"
        )));
    }
    Ok(())
}

fn inverse_sqrt_one(evd: &EigenDecomposition, loading: f64, bin: usize) -> Result<CMatrix> {
    let (eps, _) = loaded(evd, loading);
    let smallest = evd.values.last().copied().unwrap_or(0.0) + eps;
    if !(smallest > 0.0) {
        return Err(Error::NotPositiveDefinite {
            bin,
            eigenvalue: smallest,
        });
    }
    Ok(evd.map_spectrum(|l| (l + eps).powf(-0.5)))
}

fn sqrt_one(evd: &EigenDecomposition, loading: f64, bin: usize) -> Result<CMatrix> {
    let (eps, trace) = loaded(evd, loading);
    let smallest = evd.values.last().copied().unwrap_or(0.0) + eps;
    if smallest < -1e-10 * trace.abs() {
        return Err(Error::NotPositiveDefinite {
            bin,
            eigenvalue: smallest,
        });
    }
    Ok(evd.map_spectrum(|l| (l + eps).max(0.0).sqrt()))
}

/// `(Φ + loading·(trace/M)·I)^{-1/2}` per bin.
pub fn inverse_sqrt(field: &HermitianMatrixField, loading: f64) -> Result<HermitianMatrixField> {
    check_loading(loading)?;
    let evd = hermitian_evd(field)?;
    let mats = par::map_range(evd.len(), |k| inverse_sqrt_one(&evd[k], loading, k))
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(HermitianMatrixField { dim: field.dim, mats })
}

/// Hermitian (self-adjoint) square root `V diag(√(λ+ε)) V^H` per bin.
pub fn sqrt_hermitian(field: &HermitianMatrixField, loading: f64) -> Result<HermitianMatrixField> {
    check_loading(loading)?;
    let evd = hermitian_evd(field)?;
    let mats = par::map_range(evd.len(), |k| sqrt_one(&evd[k], loading, k))
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(HermitianMatrixField { dim: field.dim, mats })
}

/// `Φ^{-1/2}` and `Φ^{1/2}` from one decomposition with the same loading,
/// so the pair is mutually inverse.
#[derive(Debug, Clone)]
pub struct Whitener {
    pub inverse_sqrt: HermitianMatrixField,
    pub sqrt: HermitianMatrixField,
}

impl Whitener {
    pub fn from_noise_covariance(phi_nn: &HermitianMatrixField, loading: f64) -> Result<Self> {
        check_loading(loading)?;
        let evd = hermitian_evd(phi_nn)?;
        let pairs = par::map_range(evd.len(), |k| -> Result<(CMatrix, CMatrix)> {
            Ok((inverse_sqrt_one(&evd[k], loading, k)?, sqrt_one(&evd[k], loading, k)?))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let (inv, sq): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        Ok(Self {
            inverse_sqrt: HermitianMatrixField {
                dim: phi_nn.dim,
                mats: inv,
            },
            sqrt: HermitianMatrixField {
                dim: phi_nn.dim,
                mats: sq,
            },
        })
    }
}

/// `y_w(l,k) = W(k) y(l,k)`.
pub fn whiten(spec: &ComplexSpectrogram, w: &HermitianMatrixField) -> Result<ComplexSpectrogram> {
    if w.dim() != spec.channels() || w.bins() != spec.bins() {
        return Err(Error::Shape(format!(
            "whitener is {} bins of {}x{}, spectrogram has {} bins of {} channels",
            w.bins(),
            w.dim(),
            w.dim(),
            spec.bins(),
            spec.channels()
        )));
    }
    let per_bin = par::map_range(spec.bins(), |k| {
        let wk = w.get(k);
        (0..spec.frames())
            .map(|l| wk.mul_vec(&spec.frame_vector(k, l)))
            .collect::<Vec<_>>()
    });
    Ok(ComplexSpectrogram::from_bin_frames(
        &per_bin,
        spec.channels(),
        *spec.config(),
    ))
}

/// Whitened covariance `W Φ W^H` per bin.
pub fn whitened_covariance(w: &HermitianMatrixField, phi: &HermitianMatrixField) -> Result<HermitianMatrixField> {
    if w.dim() != phi.dim() || w.bins() != phi.bins() {
        return Err(Error::Shape("whitener and covariance disagree".into()));
    }
    let mats = par::map_range(phi.bins(), |k| {
        let wk = w.get(k);
        let mut out = wk.matmul(phi.get(k)).matmul(&wk.adjoint());
        out.symmetrize();
        out
    });
    Ok(HermitianMatrixField { dim: phi.dim, mats })
}

/// CSV of per-bin eigenvalues (`bin,index,eigenvalue`), descending per bin.
pub fn write_eigenvalue_csv(path: &Path, evd: &[EigenDecomposition]) -> Result<()> {
    write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["bin", "index", "eigenvalue"])?;
        for (k, e) in evd.iter().enumerate() {
            for (i, v) in e.values.iter().enumerate() {
                csv.write_record([k.to_string(), i.to_string(), format!("{v:e}")])?;
            }
        }
        csv.flush()?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::linalg::testing::random_spd;
    use crate::stft::StftConfig;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    /// One-bin spectrogram holding the given frame vectors.
    fn spec_from_frames(frames: &[Vec<Complex64>]) -> ComplexSpectrogram {
        let cfg = StftConfig {
            window_len: 2,
            hop: 1,
            ..StftConfig::default()
        };
        // window_len 2 gives 2 bins; bin 1 mirrors bin 0.
        let m = frames[0].len();
        let per_bin = vec![frames.to_vec(), frames.to_vec()];
        ComplexSpectrogram::from_bin_frames(&per_bin, m, cfg)
    }

    fn circular_noise(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Vec<Vec<Complex64>> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample(StandardNormal)) * s)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_basis_frame_is_rank_one() {
        let spec = spec_from_frames(&[vec![c(1.0), c(0.0)]]);
        let phi = estimate_noise_covariance(&spec, 1).unwrap();
        assert_eq!(phi.get(0), &CMatrix::from_diag(&[1.0, 0.0]));
    }

    #[test]
    fn two_basis_frames_average() {
        let spec = spec_from_frames(&[vec![c(1.0), c(0.0)], vec![c(0.0), c(1.0)]]);
        let phi = estimate_noise_covariance(&spec, 2).unwrap();
        assert_eq!(phi.get(0), &CMatrix::from_diag(&[0.5, 0.5]));
    }

    #[test]
    fn mixture_uses_complementary_range() {
        let spec = spec_from_frames(&[vec![c(5.0), c(5.0)], vec![c(1.0), c(0.0)], vec![c(0.0), c(1.0)]]);
        let phi = estimate_mixture_covariance(&spec, 1).unwrap();
        assert_eq!(phi.get(0), &CMatrix::from_diag(&[0.5, 0.5]));
        let single = spec_from_frames(&[vec![c(9.0), c(9.0)], vec![c(1.0), c(0.0)]]);
        let phi = estimate_mixture_covariance(&single, 1).unwrap();
        assert_eq!(phi.get(0), &CMatrix::from_diag(&[1.0, 0.0]));
    }

    #[test]
    fn monte_carlo_white_noise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frames = circular_noise(&mut rng, 4, 20_000);
        let spec = spec_from_frames(&frames);
        let noise = estimate_noise_covariance(&spec, 10_000).unwrap();
        assert!(noise.get(0).sub(&CMatrix::identity(4)).frobenius() < 0.1);
        let mix = estimate_mixture_covariance(&spec, 10_000).unwrap();
        assert!(mix.get(0).sub(&CMatrix::identity(4)).frobenius() < 0.1);
    }

    #[test]
    fn frame_count_errors() {
        let spec = spec_from_frames(&[vec![c(1.0)], vec![c(1.0)]]);
        assert!(matches!(estimate_noise_covariance(&spec, 0), Err(Error::Config(_))));
        assert!(matches!(estimate_noise_covariance(&spec, 3), Err(Error::Config(_))));
        assert!(matches!(estimate_mixture_covariance(&spec, 2), Err(Error::Config(_))));
    }

    #[test]
    fn estimates_are_exactly_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frames = circular_noise(&mut rng, 5, 50);
        let phi = estimate_noise_covariance(&spec_from_frames(&frames), 50).unwrap();
        assert_eq!(phi.get(0).hermitian_defect(), 0.0);
    }

    #[test]
    fn matrix_powers_of_diagonals() {
        let f = HermitianMatrixField::constant(CMatrix::identity(3).scale(4.0), 2).unwrap();
        let r = inverse_sqrt(&f, 0.0).unwrap();
        assert!(r.get(0).sub(&CMatrix::identity(3).scale(0.5)).frobenius() < 1e-15);
        let s = sqrt_hermitian(&f, 0.0).unwrap();
        assert!(s.get(1).sub(&CMatrix::identity(3).scale(2.0)).frobenius() < 1e-15);

        let f = HermitianMatrixField::constant(CMatrix::from_diag(&[4.0, 1.0]), 1).unwrap();
        let r = inverse_sqrt(&f, 0.0).unwrap();
        assert!(r.get(0).sub(&CMatrix::from_diag(&[0.5, 1.0])).frobenius() < 1e-15);
        let s = sqrt_hermitian(&f, 0.0).unwrap();
        assert!(s.get(0).sub(&CMatrix::from_diag(&[2.0, 1.0])).frobenius() < 1e-15);
    }

    #[test]
    fn singular_matrix_needs_loading() {
        let f = HermitianMatrixField::constant(CMatrix::from_diag(&[1.0, 0.0]), 1).unwrap();
        assert!(matches!(
            inverse_sqrt(&f, 0.0),
            Err(Error::NotPositiveDefinite { bin: 0, .. })
        ));
        let r = inverse_sqrt(&f, 1e-6).unwrap();
        assert!(r.get(0).is_finite());
        assert!(inverse_sqrt(&f, -1.0).is_err());
    }

    #[test]
    fn loading_is_relative_to_mean_eigenvalue() {
        // trace/M = 2, loading 0.5 -> eps = 1: (3+1)^{-1/2}, (1+1)^{-1/2}
        let f = HermitianMatrixField::constant(CMatrix::from_diag(&[3.0, 1.0]), 1).unwrap();
        let r = inverse_sqrt(&f, 0.5).unwrap();
        assert!((r.get(0)[(0, 0)].re - 0.5).abs() < 1e-15);
        assert!((r.get(0)[(1, 1)].re - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn whitening_with_scalar_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frames = circular_noise(&mut rng, 3, 7);
        let spec = spec_from_frames(&frames);
        let id = HermitianMatrixField::constant(CMatrix::identity(3), 2).unwrap();
        assert_eq!(whiten(&spec, &id).unwrap(), spec);
        let half = id.scale(0.5);
        let out = whiten(&spec, &half).unwrap();
        for (a, b) in out.as_slice().iter().zip(spec.as_slice()) {
            assert!((a - b * 0.5).norm() < 1e-15);
        }
        let wrong = HermitianMatrixField::constant(CMatrix::identity(2), 2).unwrap();
        assert!(matches!(whiten(&spec, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn whitened_noise_segment_is_white() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mix = random_spd(&mut rng, 4);
        let chol_like = sqrt_hermitian(&HermitianMatrixField::constant(mix, 1).unwrap(), 0.0)
            .unwrap()
            .get(0)
            .clone();
        let frames: Vec<_> = circular_noise(&mut rng, 4, 5000)
            .into_iter()
            .map(|v| chol_like.mul_vec(&v))
            .collect();
        let spec = spec_from_frames(&frames);
        let phi = estimate_noise_covariance(&spec, 5000).unwrap();
        let w = inverse_sqrt(&phi, 0.0).unwrap();
        let white = whiten(&spec, &w).unwrap();
        let out = estimate_noise_covariance(&white, 5000).unwrap();
        assert!(out.get(0).sub(&CMatrix::identity(4)).frobenius() < 0.15);
    }

    #[test]
    fn rejects_non_hermitian_field() {
        let mut m = CMatrix::identity(2);
        m[(0, 1)] = c(2.0);
        assert!(matches!(
            HermitianMatrixField::new(vec![m]),
            Err(Error::NotHermitian(_))
        ));
    }

    #[test]
    fn eigenvalue_csv_has_one_row_per_eigenvalue() {
        let dir = tempfile::tempdir().unwrap();
        let f = HermitianMatrixField::constant(CMatrix::from_diag(&[2.0, 1.0]), 3).unwrap();
        let p = dir.path().join("eig.csv");
        write_eigenvalue_csv(&p, &hermitian_evd(&f).unwrap()).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 2);
    }

    proptest! {
        #[test]
        fn whitening_identity(seed in any::<u64>(), which in 0usize..3) {
            let n = [2, 4, 8][which];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = random_spd(&mut rng, n);
            let field = HermitianMatrixField::constant(phi.clone(), 1).unwrap();
            let r = inverse_sqrt(&field, 0.0).unwrap();
            let r = r.get(0);
            let err = r.matmul(&phi).matmul(&r.adjoint()).sub(&CMatrix::identity(n)).frobenius();
            prop_assert!(err < 1e-8, "{err}");
            let s = sqrt_hermitian(&field, 0.0).unwrap();
            let s = s.get(0);
            let err = s.matmul(s).sub(&phi).frobenius();
            prop_assert!(err < 1e-8, "{err}");
        }
    }
}
