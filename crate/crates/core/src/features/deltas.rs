/// Regression half-width of the delta window.
const DELTA_WIDTH: usize = 2;

fn delta(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let t = m.len();
    let denom: f64 = 2.0 * (1..=DELTA_WIDTH).map(|k| (k * k) as f64).sum::<f64>();
    (0..t)
        .map(|i| {
            (0..m[i].len())
                .map(|c| {
                    (1..=DELTA_WIDTH)
                        .map(|k| {
                            let next = m[(i + k).min(t - 1)][c];
                            let prev = m[i.saturating_sub(k)][c];
                            k as f64 * (next - prev)
                        })
                        .sum::<f64>()
                        / denom
                })
                .collect()
        })
        .collect()
}

/// `[c | Δc | ΔΔc]` per frame, with ±2-frame regression deltas and edge
/// frames replicated.
pub fn append_deltas(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if m.is_empty() {
        return Vec::new();
    }
    let d1 = delta(m);
    let d2 = delta(&d1);
    m.iter()
        .zip(d1)
        .zip(d2)
        .map(|((c, d), dd)| {
            let mut row = c.clone();
            row.extend(d);
            row.extend(dd);
            row
        })
        .collect()
}
