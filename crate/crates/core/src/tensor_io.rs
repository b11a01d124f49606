//! Binary tensor files for RTF trajectories and beampatterns.
//!
//! All integers and floats are little-endian. The file is a fixed 48-byte
//! header followed by a row-major payload and an optional validity mask.
//!
//! | offset | size | field                                                 |
//! |-------:|-----:|-------------------------------------------------------|
//! |      0 |    4 | magic `b"RTFT"`                                       |
//! |      4 |    2 | format version (`1`)                                  |
//! |      6 |    1 | kind: 0 RTF trajectory, 1 narrowband, 2 wideband      |
//! |      7 |    1 | element type: 0 complex64 (f32 re, f32 im), 1 float32 |
//! |      8 |    4 | dim0 (RTF: M; narrowband: F; wideband: 1)             |
//! |     12 |    4 | dim1 (RTF: F; beampatterns: number of angles)         |
//! |     16 |    4 | dim2 (frames L)                                       |
//! |     20 |    4 | reference channel (`u32::MAX` if not applicable)      |
//! |     24 |    1 | side: 0 left, 1 right, 255 not applicable             |
//! |     25 |    1 | window: 0 hann, 1 sqrt_hann                           |
//! |     26 |    1 | mask flag: 1 if a validity mask follows the payload   |
//! |     27 |    1 | reserved (0)                                          |
//! |     28 |    4 | sample rate (Hz)                                      |
//! |     32 |    4 | window length (samples)                               |
//! |     36 |    4 | hop (samples)                                         |
//! |     40 |    4 | f32 first angle of the grid, degrees (0 for RTF)      |
//! |     44 |    4 | f32 angle step, degrees (0 for RTF)                   |
//!
//! The payload holds `dim0 * dim1 * dim2` elements with the last index
//! fastest. The mask, when present, holds `dim1 * dim2` bytes (1 = valid)
//! indexed `(bin, frame)`.

use std::path::Path;

use num_complex::Complex64;

use crate::beamformer::BeampatternGrid;
use crate::error::{Error, Result};
use crate::io::write_bytes_atomic;
use crate::rtf::{ArraySide, RtfTrajectory};
use crate::stft::{StftConfig, WindowKind};

pub const MAGIC: &[u8; 4] = b"RTFT";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Rtf = 0,
    Narrowband = 1,
    Wideband = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorHeader {
    pub kind: TensorKind,
    pub complex: bool,
    pub dims: [u32; 3],
    pub reference: Option<u32>,
    pub side: Option<ArraySide>,
    pub config: StftConfig,
    pub has_mask: bool,
    pub angle_start: f32,
    pub angle_step: f32,
}

impl TensorHeader {
    fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(HEADER_LEN);
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.push(self.kind as u8);
        b.push(if self.complex { 0 } else { 1 });
        for d in self.dims {
            b.extend_from_slice(&d.to_le_bytes());
        }
        b.extend_from_slice(&self.reference.unwrap_or(u32::MAX).to_le_bytes());
        b.push(self.side.map_or(255, ArraySide::code));
        b.push(self.config.window.code());
        b.push(self.has_mask as u8);
        b.push(0);
        b.extend_from_slice(&self.config.sample_rate_hz.to_le_bytes());
        b.extend_from_slice(&(self.config.window_len as u32).to_le_bytes());
        b.extend_from_slice(&(self.config.hop as u32).to_le_bytes());
        b.extend_from_slice(&self.angle_start.to_le_bytes());
        b.extend_from_slice(&self.angle_step.to_le_bytes());
        debug_assert_eq!(b.len(), HEADER_LEN);
        b
    }

    fn decode(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_LEN {
            return Err(Error::Format("file shorter than header".into()));
        }
        if &b[0..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let u16_at = |o: usize| u16::from_le_bytes([b[o], b[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]]);
        let f32_at = |o: usize| f32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]]);
        let version = u16_at(4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let kind = match b[6] {
            0 => TensorKind::Rtf,
            1 => TensorKind::Narrowband,
            2 => TensorKind::Wideband,
            k => return Err(Error::Format(format!("unknown kind {k}"))),
        };
        let complex = match b[7] {
            0 => true,
            1 => false,
            t => return Err(Error::Format(format!("unknown element type {t}"))),
        };
        let reference = match u32_at(20) {
            u32::MAX => None,
            r => Some(r),
        };
        let side = match b[24] {
            255 => None,
            s => Some(ArraySide::from_code(s).ok_or_else(|| Error::Format(format!("bad side {s}")))?),
        };
        let window = WindowKind::from_code(b[25]).ok_or_else(|| Error::Format(format!("bad window code {}", b[25])))?;
        Ok(Self {
            kind,
            complex,
            dims: [u32_at(8), u32_at(12), u32_at(16)],
            reference,
            side,
            has_mask: b[26] == 1,
            config: StftConfig {
                sample_rate_hz: u32_at(28),
                window_len: u32_at(32) as usize,
                hop: u32_at(36) as usize,
                window,
            },
            angle_start: f32_at(40),
            angle_step: f32_at(44),
        })
    }

    fn elements(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

fn dim(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("dimension {n} exceeds u32")))
}

pub fn encode_rtf(rtf: &RtfTrajectory, config: &StftConfig) -> Result<Vec<u8>> {
    let header = TensorHeader {
        kind: TensorKind::Rtf,
        complex: true,
        dims: [dim(rtf.channels())?, dim(rtf.bins())?, dim(rtf.frames())?],
        reference: Some(dim(rtf.reference())?),
        side: Some(rtf.side()),
        config: *config,
        has_mask: true,
        angle_start: 0.0,
        angle_step: 0.0,
    };
    let mut b = header.encode();
    b.reserve(rtf.values().len() * 8 + rtf.validity().len());
    for z in rtf.values() {
        b.extend_from_slice(&(z.re as f32).to_le_bytes());
        b.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    b.extend(rtf.validity().iter().map(|&v| v as u8));
    Ok(b)
}

pub fn decode_rtf(b: &[u8]) -> Result<(RtfTrajectory, StftConfig)> {
    let h = TensorHeader::decode(b)?;
    if h.kind != TensorKind::Rtf || !h.complex {
        return Err(Error::Format("not an RTF trajectory file".into()));
    }
    let [m, f, l] = h.dims.map(|d| d as usize);
    let n = h.elements();
    let mask_len = if h.has_mask { f * l } else { 0 };
    if b.len() != HEADER_LEN + n * 8 + mask_len {
        return Err(Error::Format(format!(
            "expected {} bytes, found {}",
            HEADER_LEN + n * 8 + mask_len,
            b.len()
        )));
    }
    let payload = &b[HEADER_LEN..HEADER_LEN + n * 8];
    let mut values: Vec<Complex64> = payload
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    let valid = if h.has_mask {
        b[HEADER_LEN + n * 8..].iter().map(|&v| v == 1).collect()
    } else {
        vec![true; f * l]
    };
    let reference = h
        .reference
        .ok_or_else(|| Error::Format("RTF file without reference channel".into()))? as usize;
    let side = h.side.ok_or_else(|| Error::Format("RTF file without side".into()))?;
    // f32 storage keeps the reference entries exactly 1.
    if reference < m {
        for k in 0..f {
            for t in 0..l {
                values[(reference * f + k) * l + t] = Complex64::new(1.0, 0.0);
            }
        }
    }
    Ok((
        RtfTrajectory::from_raw(m, f, l, values, valid, reference, side)?,
        h.config,
    ))
}

pub fn write_rtf(path: &Path, rtf: &RtfTrajectory, config: &StftConfig) -> Result<()> {
    write_bytes_atomic(path, &encode_rtf(rtf, config)?)
}

pub fn read_rtf(path: &Path) -> Result<(RtfTrajectory, StftConfig)> {
    decode_rtf(&std::fs::read(path)?)
}

fn grid_step(angles: &[f64]) -> (f32, f32) {
    let start = angles.first().copied().unwrap_or(0.0);
    let step = if angles.len() > 1 { angles[1] - angles[0] } else { 0.0 };
    (start as f32, step as f32)
}

/// Encodes the narrowband magnitudes `(F, Θ, L)` or the wideband power
/// `(1, Θ, L)` as float32.
pub fn encode_beampattern(
    grid: &BeampatternGrid,
    kind: TensorKind,
    side: ArraySide,
    config: &StftConfig,
) -> Result<Vec<u8>> {
    let (data, d0) = match kind {
        TensorKind::Narrowband => (&grid.narrowband, grid.bins),
        TensorKind::Wideband => (&grid.wideband, 1),
        TensorKind::Rtf => return Err(Error::Format("RTF kind for a beampattern".into())),
    };
    let (angle_start, angle_step) = grid_step(&grid.angles);
    let header = TensorHeader {
        kind,
        complex: false,
        dims: [dim(d0)?, dim(grid.angles.len())?, dim(grid.frames)?],
        reference: None,
        side: Some(side),
        config: *config,
        has_mask: false,
        angle_start,
        angle_step,
    };
    let mut b = header.encode();
    for v in data {
        b.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(b)
}

/// Header plus float32 payload of a beampattern file.
pub fn decode_beampattern(b: &[u8]) -> Result<(TensorHeader, Vec<f32>)> {
    let h = TensorHeader::decode(b)?;
    if h.kind == TensorKind::Rtf || h.complex {
        return Err(Error::Format("not a beampattern file".into()));
    }
    let n = h.elements();
    if b.len() != HEADER_LEN + 4 * n {
        return Err(Error::Format("beampattern payload size mismatch".into()));
    }
    let data = b[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((h, data))
}
