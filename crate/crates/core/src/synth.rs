//! Offline "sine-speech": deterministic audio and targets for tests and
//! demos that need no corpus, network or TTS service.
//!
//! Each token becomes a short two-tone burst whose frequencies and length are
//! derived from an FNV-1a hash of the token, so equal words always sound the
//! same and different words almost always differ.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{AudioBuffer, CANONICAL_RATE_HZ};

const GAP_S: f64 = 0.03;
const EDGE_S: f64 = 0.02;
const AMPLITUDE: f64 = 0.3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Low tone, high tone (Hz) and duration (s) for one token.
pub fn token_voice(token: &str) -> (f64, f64, f64) {
    let h = fnv1a(token.as_bytes());
    let unit = |shift: u32| ((h >> shift) & 0xffff) as f64 / 65535.0;
    (
        200.0 + 1400.0 * unit(0),
        1800.0 + 2200.0 * unit(16),
        0.10 + 0.06 * unit(32),
    )
}

/// Tone bursts for `tokens` separated by short silences, with leading and
/// trailing silence, at the canonical sample rate.
pub fn sine_speech(tokens: &[impl AsRef<str>]) -> AudioBuffer {
    let sr = CANONICAL_RATE_HZ as f64;
    let gap = vec![0.0f32; (GAP_S * sr) as usize];
    let mut samples = gap.clone();
    for token in tokens {
        let (lo, hi, dur) = token_voice(token.as_ref());
        let n = (dur * sr) as usize;
        let ramp = (EDGE_S * sr) as usize;
        for i in 0..n {
            let t = i as f64 / sr;
            let env = (i.min(n - 1 - i) as f64 / ramp as f64).min(1.0);
            let v = 0.6 * (2.0 * PI * lo * t).sin() + 0.4 * (2.0 * PI * hi * t).sin();
            samples.push((AMPLITUDE * env * v) as f32);
        }
        samples.extend_from_slice(&gap);
    }
    AudioBuffer::new(samples, CANONICAL_RATE_HZ).expect("synthetic audio is finite and non-empty")
}

/// `n` independent uniformly distributed unit vectors.
pub fn random_unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                break v.iter().map(|x| (x / norm) as f32).collect();
            }
        })
        .collect()
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Sum of fixed random per-word vectors: a stand-in sentence embedding in
/// which utterances sharing words are similar.
pub fn bag_of_words_embedding(tokens: &[impl AsRef<str>], dim: usize) -> Vec<f32> {
    let mut out = vec![0f32; dim];
    for token in tokens {
        let v = &random_unit_vectors(1, dim, fnv1a(token.as_ref().as_bytes()))[0];
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    out
}
