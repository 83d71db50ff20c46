use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{append_deltas, AudioBuffer, FeatureError};
use crate::autograd::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct MfccConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub n_ceps: usize,
    pub preemphasis: f64,
    pub with_deltas: bool,
    pub log_floor: f64,
    /// Per-utterance cepstral mean and variance normalisation.
    pub cmvn: bool,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            window_ms: 25.0,
            hop_ms: 10.0,
            n_fft: 512,
            n_mels: 40,
            n_ceps: 13,
            preemphasis: 0.97,
            with_deltas: true,
            log_floor: 1e-10,
            cmvn: false,
        }
    }
}

impl MfccConfig {
    pub fn window_samples(&self, sample_rate_hz: u32) -> usize {
        (self.window_ms * sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sample_rate_hz: u32) -> usize {
        (self.hop_ms * sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn feature_dim(&self) -> usize {
        if self.with_deltas {
            self.n_ceps * 3
        } else {
            self.n_ceps
        }
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<(), FeatureError> {
        let bad = |m: String| Err(FeatureError::InvalidConfig(m));
        let (w, h) = (self.window_samples(sample_rate_hz), self.hop_samples(sample_rate_hz));
        if w == 0 || h == 0 {
            return bad(format!("window {w} and hop {h} samples must be positive"));
        }
        if self.window_ms < self.hop_ms {
            return bad(format!("window_ms {} < hop_ms {}", self.window_ms, self.hop_ms));
        }
        if self.n_fft < w {
            return bad(format!("n_fft {} shorter than the {w}-sample window", self.n_fft));
        }
        if self.n_ceps == 0 || self.n_ceps > self.n_mels {
            return bad(format!(
                "need 0 < n_ceps <= n_mels, got {} and {}",
                self.n_ceps, self.n_mels
            ));
        }
        if self.log_floor.is_nan() || self.log_floor <= 0.0 {
            return bad(format!("log_floor must be positive, got {}", self.log_floor));
        }
        Ok(())
    }

    /// FNV-1a hash of every field, stored in feature caches to detect stale
    /// entries.
    pub fn digest(&self) -> u32 {
        let mut h: u32 = 0x811c_9dc5;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u32;
                h = h.wrapping_mul(0x0100_0193);
            }
        };
        feed(&self.window_ms.to_bits().to_le_bytes());
        feed(&self.hop_ms.to_bits().to_le_bytes());
        feed(&(self.n_fft as u64).to_le_bytes());
        feed(&(self.n_mels as u64).to_le_bytes());
        feed(&(self.n_ceps as u64).to_le_bytes());
        feed(&self.preemphasis.to_bits().to_le_bytes());
        feed(&[self.with_deltas as u8, self.cmvn as u8]);
        feed(&self.log_floor.to_bits().to_le_bytes());
        h
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Precomputed MFCC extractor for one configuration and sample rate.
pub struct Mfcc {
    cfg: MfccConfig,
    window_len: usize,
    hop: usize,
    window: Vec<f64>,
    filterbank: Vec<Vec<f64>>,
    centers_hz: Vec<f64>,
    dct: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl Mfcc {
    pub fn new(cfg: MfccConfig, sample_rate_hz: u32) -> Result<Self, FeatureError> {
        cfg.validate(sample_rate_hz)?;
        let window_len = cfg.window_samples(sample_rate_hz);
        let hop = cfg.hop_samples(sample_rate_hz);
        let window = (0..window_len)
            .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (window_len - 1).max(1) as f64).cos())
            .collect();

        // triangles on the continuous frequency axis, sampled at bin centres
        let n_bins = cfg.n_fft / 2 + 1;
        let nyquist = sample_rate_hz as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz: Vec<f64> = (0..n_bins)
            .map(|k| k as f64 * sample_rate_hz as f64 / cfg.n_fft as f64)
            .collect();
        let filterbank = (0..cfg.n_mels)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                bin_hz
                    .iter()
                    .map(|&f| ((f - lo) / (mid - lo)).min((hi - f) / (hi - mid)).max(0.0))
                    .collect()
            })
            .collect();
        let centers_hz = edges[1..=cfg.n_mels].to_vec();

        let m = cfg.n_mels as f64;
        let dct = (0..cfg.n_ceps)
            .map(|k| {
                let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                (0..cfg.n_mels)
                    .map(|j| scale * (PI * k as f64 * (j as f64 + 0.5) / m).cos())
                    .collect()
            })
            .collect();

        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(Self {
            cfg,
            window_len,
            hop,
            window,
            filterbank,
            centers_hz,
            dct,
            fft,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    /// `floor((n - window) / hop) + 1`, or zero when shorter than a window.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.window_len {
            0
        } else {
            (n_samples - self.window_len) / self.hop + 1
        }
    }

    pub fn filterbank(&self) -> &[Vec<f64>] {
        &self.filterbank
    }

    pub fn filter_centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Mel filterbank outputs (linear, before the log) for every frame.
    pub fn mel_energies(&self, samples: &[f32]) -> Result<Vec<Vec<f64>>, FeatureError> {
        let frames = self.n_frames(samples.len());
        if frames == 0 {
            return Err(FeatureError::TooShort {
                samples: samples.len(),
                window: self.window_len,
            });
        }
        let a = self.cfg.preemphasis;
        let emphasized: Vec<f64> = samples
            .iter()
            .enumerate()
            .map(|(i, &s)| s as f64 - if i > 0 { a * samples[i - 1] as f64 } else { 0.0 })
            .collect();

        let n_bins = self.cfg.n_fft / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.n_fft];
        let mut out = Vec::with_capacity(frames);
        for t in 0..frames {
            let start = t * self.hop;
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (i, (&x, &w)) in emphasized[start..start + self.window_len]
                .iter()
                .zip(&self.window)
                .enumerate()
            {
                buf[i].re = x * w;
            }
            self.fft.process(&mut buf);
            let magnitude: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm()).collect();
            out.push(
                self.filterbank
                    .iter()
                    .map(|filter| filter.iter().zip(&magnitude).map(|(w, m)| w * m).sum())
                    .collect(),
            );
        }
        Ok(out)
    }

    /// Cepstral coefficients, `T x n_ceps`.
    pub fn cepstra(&self, samples: &[f32]) -> Result<Vec<Vec<f64>>, FeatureError> {
        let floor = self.cfg.log_floor;
        Ok(self
            .mel_energies(samples)?
            .into_iter()
            .map(|energies| {
                let logs: Vec<f64> = energies.iter().map(|&e| e.max(floor).ln()).collect();
                self.dct
                    .iter()
                    .map(|basis| basis.iter().zip(&logs).map(|(b, l)| b * l).sum())
                    .collect()
            })
            .collect())
    }

    /// Full feature rows per the configuration (deltas, CMVN).
    pub fn features(&self, samples: &[f32]) -> Result<Vec<Vec<f64>>, FeatureError> {
        let mut rows = self.cepstra(samples)?;
        if self.cfg.with_deltas {
            rows = append_deltas(&rows);
        }
        if self.cfg.cmvn {
            apply_cmvn(&mut rows);
        }
        Ok(rows)
    }
}

/// Normalise every column to zero mean and unit variance over time.
/// Constant columns are only centred.
pub fn apply_cmvn(rows: &mut [Vec<f64>]) {
    let Some(dim) = rows.first().map(Vec::len) else {
        return;
    };
    let n = rows.len() as f64;
    for c in 0..dim {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
        let scale = if var > 1e-20 { 1.0 / var.sqrt() } else { 1.0 };
        for r in rows.iter_mut() {
            r[c] = (r[c] - mean) * scale;
        }
    }
}

/// Time-major `T x D` feature frames for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    utterance_id: String,
    n_frames: usize,
    dim: usize,
    frames: Vec<f32>,
    config_digest: u32,
}

impl FeatureMatrix {
    pub fn new(
        utterance_id: impl Into<String>,
        n_frames: usize,
        dim: usize,
        frames: Vec<f32>,
        config_digest: u32,
    ) -> Result<Self, FeatureError> {
        if frames.len() != n_frames * dim {
            return Err(FeatureError::InvalidConfig(format!(
                "{} values do not fill a {n_frames}x{dim} matrix",
                frames.len()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::InvalidConfig("non-finite feature value".into()));
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            n_frames,
            dim,
            frames,
            config_digest,
        })
    }

    pub fn from_rows(
        utterance_id: impl Into<String>,
        rows: &[Vec<f64>],
        config_digest: u32,
    ) -> Result<Self, FeatureError> {
        let dim = rows.first().map_or(0, Vec::len);
        let frames = rows.iter().flat_map(|r| r.iter().map(|&v| v as f32)).collect();
        Self::new(utterance_id, rows.len(), dim, frames, config_digest)
    }

    pub fn with_id(mut self, utterance_id: impl Into<String>) -> Self {
        self.utterance_id = utterance_id.into();
        self
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn config_digest(&self) -> u32 {
        self.config_digest
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            vec![self.n_frames, self.dim],
            self.frames.iter().map(|&v| T::of(v as f64)).collect(),
        )
        .expect("dimensions checked at construction")
    }
}

/// MFCC features of `audio` under `cfg`.
pub fn mfcc(audio: &AudioBuffer, cfg: &MfccConfig) -> Result<FeatureMatrix, FeatureError> {
    let extractor = Mfcc::new(cfg.clone(), audio.sample_rate_hz())?;
    let rows = extractor.features(audio.samples())?;
    FeatureMatrix::from_rows("", &rows, cfg.digest())
}
