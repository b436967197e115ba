//! Small numeric helpers shared across the crate.

/// Compensated (Neumaier) summation. Keeps long accumulations accurate
/// enough for the 1e-12 round-trip contracts on panel statistics.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut compensation = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            compensation += (sum - t) + v;
        } else {
            compensation += (v - t) + sum;
        }
        sum = t;
    }
    sum + compensation
}

/// Mean via compensated summation. Returns 0 for an empty slice.
pub fn compensated_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut count = 0usize;
    let total = compensated_sum(values.into_iter().inspect(|_| count += 1));
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Dot product with compensated accumulation.
pub fn compensated_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    compensated_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

/// SplitMix64 step; used to derive independent per-replication seeds
/// from a master seed without correlated low bits.
pub fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Relative closeness test: |a - b| <= tol * (1 + max(|a|, |b|)).
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
