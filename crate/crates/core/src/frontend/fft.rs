//! Iterative radix-2 Cooley-Tukey FFT, enough for power spectra.

use crate::error::{input_err, Result};

/// In-place forward DFT of a power-of-two-length complex signal.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) -> Result<()> {
    let n = re.len();
    if n != im.len() {
        return input_err("fft: real/imag length mismatch");
    }
    if n == 0 || !n.is_power_of_two() {
        return input_err(format!("fft length {n} is not a power of two"));
    }
    // bit-reversal permutation
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        let (w_im, w_re) = ang.sin_cos();
        for start in (0..n).step_by(len) {
            let mut cur_re = 1.0f64;
            let mut cur_im = 0.0f64;
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let t_re = re[b] * cur_re - im[b] * cur_im;
                let t_im = re[b] * cur_im + im[b] * cur_re;
                re[b] = re[a] - t_re;
                im[b] = im[a] - t_im;
                re[a] += t_re;
                im[a] += t_im;
                let next_re = cur_re * w_re - cur_im * w_im;
                cur_im = cur_re * w_im + cur_im * w_re;
                cur_re = next_re;
            }
        }
        len <<= 1;
    }
    Ok(())
}

/// One-sided power spectrum `|X_k|^2` for bins `0..=n/2` of a real signal,
/// zero-padded to the next power of two if needed.
pub fn power_spectrum(frame: &[f64], fft_len: usize) -> Result<Vec<f64>> {
    if fft_len < frame.len() {
        return input_err("fft length shorter than frame");
    }
    let mut re = vec![0.0; fft_len];
    let mut im = vec![0.0; fft_len];
    re[..frame.len()].copy_from_slice(frame);
    fft_in_place(&mut re, &mut im)?;
    Ok((0..=fft_len / 2)
        .map(|k| re[k] * re[k] + im[k] * im[k])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = x.len();
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for k in 0..n {
            for (t, &v) in x.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                re[k] += v * ang.cos();
                im[k] += v * ang.sin();
            }
        }
        (re, im)
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (want_re, want_im) = naive_dft(&x);
        let mut re = x.clone();
        let mut im = vec![0.0; 64];
        fft_in_place(&mut re, &mut im).unwrap();
        for k in 0..64 {
            assert!((re[k] - want_re[k]).abs() < 1e-9);
            assert!((im[k] - want_im[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn parseval_energy_conserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 2048;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let time_energy: f64 = x.iter().map(|v| v * v).sum();
        let mut re = x.clone();
        let mut im = vec![0.0; n];
        fft_in_place(&mut re, &mut im).unwrap();
        let freq_energy: f64 = re.iter().zip(im.iter()).map(|(r, i)| r * r + i * i).sum();
        let rel = (freq_energy - n as f64 * time_energy).abs() / (n as f64 * time_energy);
        assert!(rel < 1e-12, "parseval relative error {rel}");
    }

    #[test]
    fn pure_tone_peaks_at_its_bin() {
        let n = 1024;
        let bin = 37;
        let x: Vec<f64> = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * bin as f64 * t as f64 / n as f64).cos())
            .collect();
        let ps = power_spectrum(&x, n).unwrap();
        let argmax = ps
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, bin);
    }

    #[test]
    fn rejects_non_power_of_two() {
        let mut re = vec![0.0; 12];
        let mut im = vec![0.0; 12];
        assert!(fft_in_place(&mut re, &mut im).is_err());
    }
}
