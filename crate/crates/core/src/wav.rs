//! WAV reading and writing (PCM 16-bit and IEEE float 32-bit, little-endian).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::stft::Waveform;

/// Sample encoding used when writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

pub const SUPPORTED_RATES: [u32; 2] = [8000, 16000];

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if !SUPPORTED_RATES.contains(&spec.sample_rate) {
        return Err(Error::Unsupported(format!(
            "{}: sample rate {} Hz (expected 8000 or 16000)",
            path.display(),
            spec.sample_rate
        )));
    }
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Unsupported(format!(
                "{}: {bits}-bit {fmt:?} samples",
                path.display()
            )))
        }
    };
    let frames = interleaved.len() / channels;
    let mut data = Array2::zeros((channels, frames));
    for (i, v) in interleaved.into_iter().enumerate() {
        data[(i % channels, i / channels)] = v;
    }
    Waveform::new(data, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform, encoding: WavEncoding) -> Result<()> {
    let (bits, fmt) = match encoding {
        WavEncoding::Pcm16 => (16, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: wave.channels() as u16,
        sample_rate: wave.sample_rate,
        bits_per_sample: bits,
        sample_format: fmt,
    };
    let mut writer = WavWriter::create(path.as_ref(), spec)?;
    for n in 0..wave.len() {
        for c in 0..wave.channels() {
            let v = wave.data[(c, n)];
            match encoding {
                WavEncoding::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)?;
                }
                WavEncoding::Float32 => writer.write_sample(v as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}
