//! Radix-2 FFT and the per-snippet magnitude features fed to the PPG branch.

use super::series::NormStats;
use crate::error::{Error, Result};

/// In-place iterative Cooley–Tukey transform. `re.len()` must be a power of two.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) -> Result<()> {
    let n = re.len();
    if n == 0 || !n.is_power_of_two() || im.len() != n {
        return Err(Error::InvalidArgument(format!("FFT length {n} is not a power of two")));
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) };
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -std::f64::consts::TAU / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let (s, c) = (ang * k as f64).sin_cos();
                let (a, b) = (start + k, start + k + len / 2);
                let tr = re[b] * c - im[b] * s;
                let ti = re[b] * s + im[b] * c;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
    Ok(())
}

/// Magnitudes `|X_k|` of every DFT bin `k = 0..L`.
pub fn magnitude_spectrum(x: &[f64]) -> Result<Vec<f64>> {
    let mut re = x.to_vec();
    let mut im = vec![0.0; x.len()];
    fft_in_place(&mut re, &mut im)?;
    Ok(re.iter().zip(&im).map(|(r, i)| r.hypot(*i)).collect())
}

/// Positive-frequency magnitudes (bins `1..=L/2`, DC dropped), z-normalized.
pub fn fft_magnitude(x: &[f64]) -> Result<Vec<f64>> {
    let mags = magnitude_spectrum(x)?;
    let half = &mags[1..=x.len() / 2];
    let stats = NormStats::of(half);
    Ok(half.iter().map(|&m| stats.apply(m)).collect())
}
