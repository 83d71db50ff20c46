use std::f64::consts::PI;

/// Zero crossings of the sinc kernel on each side of the output instant.
const ZERO_CROSSINGS: f64 = 24.0;

/// Band-limited resampling by Hann-windowed sinc interpolation. The output
/// has `round(len * to / from)` samples; when downsampling the kernel cutoff
/// follows the target Nyquist frequency.
pub fn resample(samples: &[f32], from_hz: u32, to_hz: u32) -> Vec<f32> {
    if from_hz == to_hz || samples.is_empty() {
        return samples.to_vec();
    }
    let ratio = to_hz as f64 / from_hz as f64;
    let out_len = (samples.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let last = samples.len() as isize - 1;

    (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = (t - half_width).ceil().max(0.0) as isize;
            let hi = ((t + half_width).floor() as isize).min(last);
            let mut acc = 0.0;
            for k in lo..=hi {
                let u = t - k as f64;
                let x = cutoff * u;
                let sinc = if x.abs() < 1e-12 {
                    1.0
                } else {
                    (PI * x).sin() / (PI * x)
                };
                let window = 0.5 * (1.0 + (PI * u / half_width).cos());
                acc += samples[k as usize] as f64 * cutoff * sinc * window;
            }
            acc as f32
        })
        .collect()
}
