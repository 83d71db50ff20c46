use std::path::Path;

use super::{resample, FeatureError};

/// Internal sample rate for all feature extraction.
pub const CANONICAL_RATE_HZ: u32 = 16_000;

#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self, FeatureError> {
        if sample_rate_hz == 0 {
            return Err(FeatureError::InvalidSampleRate(sample_rate_hz));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(FeatureError::NonFiniteAudio);
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Resampled copy at `rate_hz` (no-op when the rate already matches).
    pub fn resampled(&self, rate_hz: u32) -> Result<Self, FeatureError> {
        if rate_hz == self.sample_rate_hz {
            return Ok(self.clone());
        }
        Self::new(resample(&self.samples, self.sample_rate_hz, rate_hz), rate_hz)
    }
}

/// Header fields of a WAV file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WavInfo {
    pub sample_rate_hz: u32,
    pub channels: u16,
    pub bits_per_sample: u16,
    /// Samples per channel.
    pub n_frames: u32,
}

impl WavInfo {
    pub fn duration_s(&self) -> f64 {
        self.n_frames as f64 / self.sample_rate_hz as f64
    }
}

/// Read only the header of a WAV file.
pub fn probe_wav(path: impl AsRef<Path>) -> Result<WavInfo, FeatureError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| FeatureError::Audio {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let spec = reader.spec();
    if spec.sample_rate == 0 {
        return Err(FeatureError::InvalidSampleRate(0));
    }
    Ok(WavInfo {
        sample_rate_hz: spec.sample_rate,
        channels: spec.channels,
        bits_per_sample: spec.bits_per_sample,
        n_frames: reader.duration(),
    })
}

/// Read a PCM WAV file as mono at [`CANONICAL_RATE_HZ`]. Channels are
/// averaged and integer samples scaled to [-1, 1].
pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioBuffer, FeatureError> {
    let path = path.as_ref();
    let audio_err = |e: hound::Error| FeatureError::Audio {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = hound::WavReader::open(path).map_err(audio_err)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()
                .map_err(audio_err)?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v.clamp(-1.0, 1.0)))
            .collect::<Result<_, _>>()
            .map_err(audio_err)?,
    };
    if interleaved.is_empty() {
        return Err(FeatureError::EmptyAudio);
    }
    let mono: Vec<f32> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / frame.len() as f32)
        .collect();
    AudioBuffer::new(mono, spec.sample_rate)?.resampled(CANONICAL_RATE_HZ)
}

/// Write a mono 16-bit PCM WAV.
pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<(), FeatureError> {
    let path = path.as_ref();
    let audio_err = |e: hound::Error| FeatureError::Audio {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(audio_err)?;
    for &s in &audio.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(audio_err)?;
    }
    writer.finalize().map_err(audio_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, channels: u16, rate: u32, frames: &[Vec<i16>]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for frame in frames {
            for &s in frame {
                w.write_sample(s).unwrap();
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn mono_16k_loads_unchanged_length() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let frames: Vec<Vec<i16>> = (0..16000).map(|i| vec![((i % 200) as i16 - 100) * 100]).collect();
        write_raw(&path, 1, 16000, &frames);
        let audio = load_audio(&path).unwrap();
        assert_eq!(audio.len(), 16000);
        assert_eq!(audio.sample_rate_hz(), 16000);
        assert!(audio.samples().iter().all(|s| (-1.0..=1.0).contains(s)));
    }

    #[test]
    fn identical_stereo_channels_downmix_to_mono() {
        let dir = tempfile::tempdir().unwrap();
        let (mono_path, stereo_path) = (dir.path().join("m.wav"), dir.path().join("s.wav"));
        let signal: Vec<i16> = (0..4000).map(|i| ((i * 37) % 2000) as i16 - 1000).collect();
        write_raw(
            &mono_path,
            1,
            16000,
            &signal.iter().map(|&s| vec![s]).collect::<Vec<_>>(),
        );
        write_raw(
            &stereo_path,
            2,
            16000,
            &signal.iter().map(|&s| vec![s, s]).collect::<Vec<_>>(),
        );
        assert_eq!(load_audio(&mono_path).unwrap(), load_audio(&stereo_path).unwrap());
    }

    #[test]
    fn empty_and_garbage_files_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("e.wav");
        write_raw(&empty, 1, 16000, &[]);
        assert!(matches!(load_audio(&empty), Err(FeatureError::EmptyAudio)));
        let junk = dir.path().join("j.wav");
        std::fs::write(&junk, b"this is not a riff file").unwrap();
        assert!(matches!(load_audio(&junk), Err(FeatureError::Audio { .. })));
    }

    #[test]
    fn probe_reads_header_only_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.wav");
        write_raw(&path, 2, 8000, &vec![vec![0, 0]; 4000]);
        let info = probe_wav(&path).unwrap();
        assert_eq!((info.sample_rate_hz, info.channels, info.n_frames), (8000, 2, 4000));
        assert_eq!(info.duration_s(), 0.5);
        std::fs::write(&path, b"RIFF").unwrap();
        assert!(probe_wav(&path).is_err());
    }

    #[test]
    fn buffer_rejects_bad_input() {
        assert!(AudioBuffer::new(vec![0.0], 0).is_err());
        assert!(AudioBuffer::new(vec![f32::NAN], 16000).is_err());
    }
}
