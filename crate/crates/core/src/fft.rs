//! Radix-2 FFT with zero padding.
//!
//! Forward transform, unnormalized: `X_k = sum_n x_n exp(-2 pi i k n / N)`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::{axis_extents, Tensor};

/// DFT of `x` zero-padded to `pad_to` points.
pub fn fft_1d(x: &[Complex64], pad_to: usize) -> Result<Vec<Complex64>> {
    if pad_to == 0 || !pad_to.is_power_of_two() {
        return Err(Error::invalid(format!(
            "fft length {pad_to} is not a power of two"
        )));
    }
    if pad_to < x.len() {
        return Err(Error::invalid(format!(
            "pad_to {pad_to} shorter than input length {}",
            x.len()
        )));
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); pad_to];
    buf[..x.len()].copy_from_slice(x);
    fft_in_place(&mut buf);
    Ok(buf)
}

fn fft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        // twiddles evaluated directly rather than by recurrence, to keep
        // rounding error flat in N
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Applies [`fft_1d`] to every fiber of a complex tensor along `axis`.
pub fn fft_along(t: &Tensor, axis: usize, pad_to: usize) -> Result<Tensor> {
    if !t.is_complex() {
        return Err(Error::invalid("fft_along expects a complex tensor"));
    }
    let (outer, len, inner) = axis_extents(t.shape(), axis)?;
    let mut shape = t.shape().to_vec();
    shape[axis] = pad_to;
    let mut out = Tensor::zeros_complex(&shape);
    let src = t.data();
    let mut fiber = vec![Complex64::new(0.0, 0.0); len];
    {
        let dst = out.data_mut();
        for o in 0..outer {
            for j in 0..inner {
                for (i, f) in fiber.iter_mut().enumerate() {
                    let at = 2 * ((o * len + i) * inner + j);
                    *f = Complex64::new(src[at], src[at + 1]);
                }
                let spec = fft_1d(&fiber, pad_to)?;
                for (k, v) in spec.iter().enumerate() {
                    let at = 2 * ((o * pad_to + k) * inner + j);
                    dst[at] = v.re;
                    dst[at + 1] = v.im;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn dft(x: &[Complex64], n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(i, v)| {
                        v * Complex64::from_polar(1.0, -2.0 * PI * (k * i) as f64 / n as f64)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn impulse_is_flat() {
        let out = fft_1d(&[c(1.0), c(0.0), c(0.0), c(0.0)], 4).unwrap();
        for v in out {
            assert_eq!(v, c(1.0));
        }
    }

    #[test]
    fn dc_only() {
        let out = fft_1d(&[c(1.0); 4], 4).unwrap();
        assert_eq!(out[0], c(4.0));
        for v in &out[1..] {
            assert!(v.norm() < 1e-15);
        }
    }

    #[test]
    fn tone_lands_in_bin_three() {
        let x: Vec<Complex64> = (0..8)
            .map(|n| Complex64::from_polar(1.0, 2.0 * PI * 3.0 * n as f64 / 8.0))
            .collect();
        let out = fft_1d(&x, 8).unwrap();
        let oracle = dft(&x, 8);
        for (k, (a, b)) in out.iter().zip(&oracle).enumerate() {
            assert!((a - b).norm() < 1e-9);
            if k == 3 {
                assert!((a.norm() - 8.0).abs() < 1e-9);
            } else {
                assert!(a.norm() < 1e-9, "bin {k} = {a}");
            }
        }
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(fft_1d(&[c(1.0); 3], 6).is_err());
        assert!(fft_1d(&[c(1.0); 8], 4).is_err());
        assert!(fft_1d(&[], 0).is_err());
    }

    #[test]
    fn padding_matches_padded_dft() {
        let x = [c(1.0), Complex64::new(0.5, -2.0), c(-3.0)];
        let out = fft_1d(&x, 8).unwrap();
        let oracle = dft(&x, 8);
        for (a, b) in out.iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn along_axis_shapes_and_errors() {
        let t = Tensor::zeros_complex(&[3, 4]);
        assert_eq!(fft_along(&t, 1, 8).unwrap().shape(), &[3, 8]);
        assert!(fft_along(&t, 2, 8).is_err());
        assert!(fft_along(&Tensor::zeros(&[3, 4]), 1, 4).is_err());
    }

    #[test]
    fn along_axis_rows_of_impulses() {
        let mut vals = vec![c(0.0); 8];
        vals[0] = c(1.0);
        vals[4] = c(1.0);
        let t = Tensor::from_complex(vec![2, 4], &vals).unwrap();
        let out = fft_along(&t, 1, 4).unwrap();
        for v in out.to_complex_vec() {
            assert!((v - c(1.0)).norm() < 1e-15);
        }
    }
}
