//! Matched-filter decoder for the synthetic two-sinusoid corpus: correlate
//! each token slot against every token's frequency pair in quadrature and
//! pick the best match. Knows nothing about the recognizer under test.

/// Decode a token sequence from raw samples laid out as fixed-length token
/// slots separated by fixed-length gaps.
pub fn decode(
    samples: &[f32],
    sample_rate: f32,
    signatures: &[[f32; 2]],
    token_len: usize,
    gap_len: usize,
) -> Vec<usize> {
    let slot = token_len + gap_len;
    let count = samples.len() / slot;
    let mut out = Vec::with_capacity(count);
    for s in 0..count {
        let chunk = &samples[s * slot..s * slot + token_len];
        let mut best = (0usize, f64::NEG_INFINITY);
        for (tok, sig) in signatures.iter().enumerate() {
            let energy: f64 = sig.iter().map(|&f| quadrature_power(chunk, f, sample_rate)).sum();
            if energy > best.1 {
                best = (tok, energy);
            }
        }
        out.push(best.0);
    }
    out
}

fn quadrature_power(chunk: &[f32], freq: f32, sample_rate: f32) -> f64 {
    let w = 2.0 * std::f64::consts::PI * f64::from(freq) / f64::from(sample_rate);
    let (mut c, mut s) = (0.0f64, 0.0f64);
    for (n, &x) in chunk.iter().enumerate() {
        let ph = w * n as f64;
        c += f64::from(x) * ph.cos();
        s += f64::from(x) * ph.sin();
    }
    c * c + s * s
}
