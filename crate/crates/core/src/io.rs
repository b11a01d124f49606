//! WAV files and atomic file writes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WavFormat {
    Pcm16,
    #[default]
    Float32,
}

/// Writes `path` via a temporary sibling file and an atomic rename, so a
/// failure never leaves a truncated file behind.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        f(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, |w| Ok(w.write_all(bytes)?))
}

/// Multichannel audio as one `Vec` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

pub fn read_wav(path: &Path) -> Result<Audio> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let nch = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::InvalidInput(format!(
                "unsupported WAV sample format {fmt:?}/{bits} bits in {}",
                path.display()
            )))
        }
    };
    let frames = interleaved.len() / nch.max(1);
    let mut channels = vec![Vec::with_capacity(frames); nch];
    for frame in interleaved.chunks_exact(nch) {
        for (c, &s) in channels.iter_mut().zip(frame) {
            c.push(s);
        }
    }
    Ok(Audio {
        sample_rate: spec.sample_rate,
        channels,
    })
}

/// Reads a WAV file and checks its rate against the processing rate.
pub fn read_wav_at(path: &Path, sample_rate: u32) -> Result<Audio> {
    let audio = read_wav(path)?;
    if audio.sample_rate != sample_rate {
        return Err(Error::InvalidInput(format!(
            "{} has sample rate {} Hz, expected {} Hz (no resampling)",
            path.display(),
            audio.sample_rate,
            sample_rate
        )));
    }
    Ok(audio)
}

pub fn write_wav(path: &Path, audio: &Audio, format: WavFormat) -> Result<()> {
    let nch = audio.channels.len();
    if nch == 0 || nch > u16::MAX as usize {
        return Err(Error::InvalidInput(format!("cannot write {nch} channels")));
    }
    let len = audio.channels[0].len();
    if audio.channels.iter().any(|c| c.len() != len) {
        return Err(Error::Shape("channel lengths differ".into()));
    }
    let spec = WavSpec {
        channels: nch as u16,
        sample_rate: audio.sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => SampleFormat::Int,
            WavFormat::Float32 => SampleFormat::Float,
        },
    };

    let mut bytes = std::io::Cursor::new(Vec::new());
    {
        let mut writer = WavWriter::new(&mut bytes, spec)?;
        for i in 0..len {
            for c in &audio.channels {
                match format {
                    WavFormat::Pcm16 => {
                        let v = (c[i] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                        writer.write_sample(v)?;
                    }
                    WavFormat::Float32 => writer.write_sample(c[i] as f32)?,
                }
            }
        }
        writer.finalize()?;
    }
    write_bytes_atomic(path, &bytes.into_inner())
}
