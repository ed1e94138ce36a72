//! Minimal RIFF/WAVE codec: 16-bit PCM and 32-bit IEEE float, mono or stereo.
//!
//! Stereo collapses to mono by averaging. Int16 decodes with scale 1/32768 so
//! the most negative code maps to exactly -1.0. Unknown chunks are skipped
//! (sizes are padded to even offsets per RIFF).

use crate::error::{Error, Result};

/// Mono audio in [-1, 1].
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        AudioClip {
            samples,
            sample_rate,
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Sample encodings this codec writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::AudioFormat(format!(
                "truncated WAV: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

struct Format {
    codec: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

pub fn load_wav(bytes: &[u8]) -> Result<AudioClip> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != b"RIFF" {
        return Err(Error::AudioFormat("not a RIFF container".into()));
    }
    let _riff_size = c.u32()?;
    if c.take(4)? != b"WAVE" {
        return Err(Error::AudioFormat("RIFF container is not WAVE".into()));
    }

    let mut format: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    while c.pos + 8 <= bytes.len() {
        let id: [u8; 4] = c.take(4)?.try_into().unwrap();
        let size = c.u32()? as usize;
        match &id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::AudioFormat("fmt chunk shorter than 16 bytes".into()));
                }
                let chunk_end = c.pos + size;
                let codec = c.u16()?;
                let channels = c.u16()?;
                let sample_rate = c.u32()?;
                let _byte_rate = c.u32()?;
                let _block_align = c.u16()?;
                let bits = c.u16()?;
                c.pos = chunk_end;
                format = Some(Format {
                    codec,
                    channels,
                    sample_rate,
                    bits,
                });
            }
            b"data" => {
                data = Some(c.take(size)?);
            }
            _ => {
                c.take(size)?;
            }
        }
        if size % 2 == 1 && c.pos < bytes.len() {
            c.pos += 1;
        }
    }

    let fmt = format.ok_or_else(|| Error::AudioFormat("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::AudioFormat("missing data chunk".into()))?;
    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(Error::AudioFormat(format!(
            "unsupported channel count {}",
            fmt.channels
        )));
    }
    if fmt.sample_rate == 0 {
        return Err(Error::AudioFormat("sample rate 0".into()));
    }

    let interleaved: Vec<f32> = match (fmt.codec, fmt.bits) {
        (FORMAT_PCM, 16) => {
            if data.len() % 2 != 0 {
                return Err(Error::AudioFormat("PCM16 data length is odd".into()));
            }
            data.chunks_exact(2)
                .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
                .collect()
        }
        (FORMAT_IEEE_FLOAT, 32) => {
            if data.len() % 4 != 0 {
                return Err(Error::AudioFormat(
                    "float32 data length not a multiple of 4".into(),
                ));
            }
            data.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect()
        }
        (codec, bits) => {
            return Err(Error::AudioFormat(format!(
                "unsupported codec: format tag {codec} with {bits} bits"
            )));
        }
    };

    let samples = if fmt.channels == 2 {
        if interleaved.len() % 2 != 0 {
            return Err(Error::AudioFormat(
                "stereo data has an odd sample count".into(),
            ));
        }
        interleaved
            .chunks_exact(2)
            .map(|p| (p[0] + p[1]) * 0.5)
            .collect()
    } else {
        interleaved
    };

    Ok(AudioClip::new(samples, fmt.sample_rate))
}

pub fn save_wav(clip: &AudioClip, encoding: WavEncoding) -> Vec<u8> {
    let bytes_per_sample = match encoding {
        WavEncoding::Pcm16 => 2,
        WavEncoding::Float32 => 4,
    };
    let data_len = clip.samples.len() * bytes_per_sample;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    let (codec, bits) = match encoding {
        WavEncoding::Pcm16 => (FORMAT_PCM, 16u16),
        WavEncoding::Float32 => (FORMAT_IEEE_FLOAT, 32u16),
    };
    out.extend_from_slice(&codec.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    let byte_rate = clip.sample_rate * bytes_per_sample as u32;
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&(bytes_per_sample as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    match encoding {
        WavEncoding::Pcm16 => {
            for &v in &clip.samples {
                let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
        }
        WavEncoding::Float32 => {
            for &v in &clip.samples {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn read_wav_file(path: &std::path::Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path)?;
    load_wav(&bytes).map_err(|e| {
        Error::AudioFormat(format!("{}: {e}", path.display()))
    })
}

pub fn write_wav_file(path: &std::path::Path, clip: &AudioClip, encoding: WavEncoding) -> Result<()> {
    std::fs::write(path, save_wav(clip, encoding))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(rate: u32, hz: f64, secs: f64, amp: f32) -> AudioClip {
        let n = (rate as f64 * secs) as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * hz * i as f64 / rate as f64).sin() as f32)
            .collect();
        AudioClip::new(samples, rate)
    }

    #[test]
    fn second_of_silence_is_48000_samples() {
        let clip = AudioClip::new(vec![0.0; 48000], 48000);
        let loaded = load_wav(&save_wav(&clip, WavEncoding::Pcm16)).unwrap();
        assert_eq!(loaded.samples.len(), 48000);
        assert_eq!(loaded.sample_rate, 48000);
        assert!(loaded.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pcm16_round_trip_within_one_code() {
        let clip = sine(16000, 440.0, 0.05, 0.8);
        let loaded = load_wav(&save_wav(&clip, WavEncoding::Pcm16)).unwrap();
        assert_eq!(loaded.samples.len(), clip.samples.len());
        for (a, b) in clip.samples.iter().zip(&loaded.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn float32_round_trip_is_bitwise() {
        let clip = sine(16000, 997.0, 0.03, 0.5);
        let loaded = load_wav(&save_wav(&clip, WavEncoding::Float32)).unwrap();
        for (a, b) in clip.samples.iter().zip(&loaded.samples) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn most_negative_code_is_exactly_minus_one() {
        let mut bytes = save_wav(&AudioClip::new(vec![0.0], 16000), WavEncoding::Pcm16);
        let n = bytes.len();
        bytes[n - 2..].copy_from_slice(&(-32768i16).to_le_bytes());
        let loaded = load_wav(&bytes).unwrap();
        assert_eq!(loaded.samples[0], -1.0);
    }

    #[test]
    fn stereo_averages_to_mono() {
        // hand-build a stereo float file with frames [1.0, 0.0]
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36u32 + 24).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&3u16.to_le_bytes());
        out.extend_from_slice(&2u16.to_le_bytes());
        out.extend_from_slice(&16000u32.to_le_bytes());
        out.extend_from_slice(&(16000u32 * 8).to_le_bytes());
        out.extend_from_slice(&8u16.to_le_bytes());
        out.extend_from_slice(&32u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&24u32.to_le_bytes());
        for _ in 0..3 {
            out.extend_from_slice(&1.0f32.to_le_bytes());
            out.extend_from_slice(&0.0f32.to_le_bytes());
        }
        let loaded = load_wav(&out).unwrap();
        assert_eq!(loaded.samples, vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn garbage_and_unsupported_rejected() {
        assert!(load_wav(b"not audio at all").is_err());

        let clip = AudioClip::new(vec![0.25; 10], 16000);
        let mut bytes = save_wav(&clip, WavEncoding::Pcm16);
        bytes[0] = b'X';
        assert!(load_wav(&bytes).is_err());

        // claim 24-bit PCM
        let mut bytes = save_wav(&clip, WavEncoding::Pcm16);
        bytes[34..36].copy_from_slice(&24u16.to_le_bytes());
        let err = load_wav(&bytes).unwrap_err();
        assert!(err.to_string().contains("unsupported codec"));

        // truncate the data chunk
        let bytes = save_wav(&clip, WavEncoding::Pcm16);
        assert!(load_wav(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn unknown_chunks_are_skipped() {
        let clip = AudioClip::new(vec![0.1, -0.1, 0.2], 16000);
        let bytes = save_wav(&clip, WavEncoding::Float32);
        // splice a LIST chunk between fmt and data
        let mut spliced = bytes[..36].to_vec();
        spliced.extend_from_slice(b"LIST");
        spliced.extend_from_slice(&5u32.to_le_bytes());
        spliced.extend_from_slice(b"INFOx");
        spliced.push(0); // pad to even
        spliced.extend_from_slice(&bytes[36..]);
        let loaded = load_wav(&spliced).unwrap();
        assert_eq!(loaded.samples.len(), 3);
        assert_eq!(loaded.samples[2], 0.2);
    }
}
