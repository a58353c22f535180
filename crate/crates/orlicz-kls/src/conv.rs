//! Discrete convolution of nonnegative mass arrays on a shared uniform grid.
//!
//! Two engines are provided: a direct dot-product form, whose output keeps
//! full relative accuracy even deep in the tails (all terms are nonnegative,
//! so there is no cancellation), and an FFT form for long arrays. Both
//! support truncating the output, which is exact for the retained prefix
//! because supports start at the array origins.

use rustfft::{num_complex::Complex, FftPlanner};

/// Convolution engine selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvMode {
    /// Direct when the work is small, FFT otherwise.
    Auto,
    /// Always direct (tail-accurate).
    Direct,
    /// Always transform-based.
    Fft,
}

/// `out[k] = sum_i a[i] b[k-i]` for `k < out_len`.
pub fn conv_direct(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    let full = a.len() + b.len() - 1;
    let out_len = out_len.min(full);
    let m = b.len();
    let brev: Vec<f64> = b.iter().rev().copied().collect();
    let mut out = vec![0.0f64; out_len];
    for (k, slot) in out.iter_mut().enumerate() {
        let i0 = (k + 1).saturating_sub(m);
        let i1 = k.min(a.len() - 1);
        if i0 > i1 {
            continue;
        }
        let j0 = m - 1 + i0 - k;
        let av = &a[i0..=i1];
        let bv = &brev[j0..j0 + (i1 - i0 + 1)];
        let mut acc = 0.0;
        for (x, y) in av.iter().zip(bv) {
            acc += x * y;
        }
        *slot = acc;
    }
    out
}

/// FFT convolution; small negative round-off values are clamped to zero so
/// the result stays a mass array.
pub fn conv_fft(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    let full = a.len() + b.len() - 1;
    let out_len = out_len.min(full);
    let size = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);

    let mut fa: Vec<Complex<f64>> = a
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut fb: Vec<Complex<f64>> = b
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    ifft.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa[..out_len]
        .iter()
        .map(|c| (c.re * scale).max(0.0))
        .collect()
}

/// Dispatch on `mode`; `Auto` uses direct convolution when the multiply
/// count is modest and FFT beyond that.
pub fn convolve(a: &[f64], b: &[f64], out_len: usize, mode: ConvMode) -> Vec<f64> {
    match mode {
        ConvMode::Direct => conv_direct(a, b, out_len),
        ConvMode::Fft => conv_fft(a, b, out_len),
        ConvMode::Auto => {
            let work = a.len() as u64 * b.len() as u64;
            if work <= 1 << 22 {
                conv_direct(a, b, out_len)
            } else {
                conv_fft(a, b, out_len)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_matches_hand_example() {
        let a = [1.0, 2.0, 3.0];
        let b = [0.5, 0.25];
        let c = conv_direct(&a, &b, 4);
        assert_eq!(c, vec![0.5, 1.25, 2.0, 0.75]);
    }

    #[test]
    fn direct_and_fft_agree_on_overlap() {
        // Deterministic pseudo-random masses; agreement within 1e-9.
        let n = 3000;
        let mut state = 0x243F6A8885A308D3u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let a: Vec<f64> = (0..n).map(|_| next() / n as f64).collect();
        let b: Vec<f64> = (0..n).map(|_| next() / n as f64).collect();
        let d = conv_direct(&a, &b, 2 * n);
        let f = conv_fft(&a, &b, 2 * n);
        let max_diff = d
            .iter()
            .zip(&f)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-9, "engines disagree by {max_diff}");
    }

    #[test]
    fn truncation_is_exact_prefix() {
        let a = [0.25, 0.5, 0.25];
        let b = [0.125, 0.25, 0.5, 0.125];
        let full = conv_direct(&a, &b, usize::MAX);
        let cut = conv_direct(&a, &b, 3);
        assert_eq!(&full[..3], &cut[..]);
    }
}
