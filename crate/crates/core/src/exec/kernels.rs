// SPDX-License-Identifier: Apache-2.0

//! Scalar and tensor kernels shared by both backends.
//!
//! The float chain helpers (`batchnorm`, `quant_level`) are also what the
//! streamliner evaluates when it searches for threshold cut-points, so the
//! streamlined graph agrees with the float backend bit for bit.

use crate::ir::{QuantAttrs, Rational};

/// Batch normalization of one value.
#[inline]
pub fn batchnorm(x: f64, gamma: f64, beta: f64, mean: f64, var: f64, eps: f64) -> f64 {
    gamma * (x - mean) / (var + eps).sqrt() + beta
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Integer quantization level of `x`: `clamp(round(x / scale + zp))`, or the
/// sign for BIPOLAR.
#[inline]
pub fn quant_level(x: f64, q: &QuantAttrs) -> i64 {
    let scaled = x / rational_to_f64(&q.scale);
    if q.dtype == crate::ir::DataType::Bipolar {
        return if scaled >= 0.0 { 1 } else { -1 };
    }
    let (lo, hi) = q.dtype.mantissa_range().expect("integer quantizer");
    let r = q.rounding.apply(scaled + q.zero_point as f64);
    if r.is_nan() {
        return lo;
    }
    (r.max(lo as f64).min(hi as f64)) as i64
}

/// Dequantized value of a level.
#[inline]
pub fn dequant(level: i64, q: &QuantAttrs) -> f64 {
    (level - q.zero_point) as f64 * rational_to_f64(&q.scale)
}

/// Exact quantization level of a rational input.
pub fn quant_level_exact(x: Rational, q: &QuantAttrs) -> i64 {
    let scaled = x / q.scale;
    if q.dtype == crate::ir::DataType::Bipolar {
        return if scaled >= Rational::from_integer(0) { 1 } else { -1 };
    }
    let (lo, hi) = q.dtype.mantissa_range().expect("integer quantizer");
    q.rounding.apply_exact(scaled + Rational::from_integer(q.zero_point)).clamp(lo, hi)
}

/// Geometry of a 2-D convolution or pooling window over `[C, H, W]`.
#[derive(Debug, Clone, Copy)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_begin: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Multiply-accumulate arithmetic for one backend.
pub trait Mac: Copy {
    type Acc: Copy + std::ops::AddAssign;
    const ZERO: Self::Acc;
    fn mul(w: Self, x: Self) -> Self::Acc;
}

impl Mac for f64 {
    type Acc = f64;
    const ZERO: f64 = 0.0;
    #[inline]
    fn mul(w: f64, x: f64) -> f64 {
        w * x
    }
}

impl Mac for i64 {
    type Acc = i128;
    const ZERO: i128 = 0;
    #[inline]
    fn mul(w: i64, x: i64) -> i128 {
        w as i128 * x as i128
    }
}

/// Dot products of a `[m, C, k, k]` kernel over a zero-padded input.
/// Returns `[m, out_h, out_w]` accumulators, bias not included.
pub fn conv2d<T: Mac + Default>(x: &[T], w: &[T], m: usize, g: Window) -> Vec<T::Acc> {
    let k = g.kernel;
    let mut out = Vec::with_capacity(m * g.out_h * g.out_w);
    for oc in 0..m {
        let wk = &w[oc * g.channels * k * k..(oc + 1) * g.channels * k * k];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut acc = T::ZERO;
                for ci in 0..g.channels {
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.pad_begin as isize;
                        if iy < 0 || iy as usize >= g.height {
                            continue;
                        }
                        let row = (ci * g.height + iy as usize) * g.width;
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.pad_begin as isize;
                            if ix < 0 || ix as usize >= g.width {
                                continue;
                            }
                            acc += T::mul(wk[(ci * k + ky) * k + kx], x[row + ix as usize]);
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

/// `[m, n] x [n]` dot products, bias not included.
pub fn dense<T: Mac>(x: &[T], w: &[T], m: usize) -> Vec<T::Acc> {
    let n = x.len();
    (0..m)
        .map(|c| {
            let mut acc = T::ZERO;
            for (wi, xi) in w[c * n..(c + 1) * n].iter().zip(x) {
                acc += T::mul(*wi, *xi);
            }
            acc
        })
        .collect()
}

/// Reduces each pooling window with `f`, starting from its first element.
pub fn pool<T: Copy>(x: &[T], g: Window, f: impl Fn(T, T) -> T) -> Vec<T> {
    let k = g.kernel;
    let mut out = Vec::with_capacity(g.channels * g.out_h * g.out_w);
    for c in 0..g.channels {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let base = (c * g.height + oy * g.stride) * g.width + ox * g.stride;
                let mut acc = x[base];
                for ky in 0..k {
                    for kx in 0..k {
                        if ky == 0 && kx == 0 {
                            continue;
                        }
                        acc = f(acc, x[base + ky * g.width + kx]);
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{DataType, Rounding};

    #[test]
    fn quantizer_rounding_and_clamp() {
        let q = QuantAttrs { scale: Rational::new(1, 4), zero_point: 0, dtype: DataType::uint(3), rounding: Rounding::RoundHalfUp };
        assert_eq!(quant_level(0.125, &q), 1);
        assert_eq!(quant_level(0.124, &q), 0);
        assert_eq!(quant_level(-3.0, &q), 0);
        assert_eq!(quant_level(100.0, &q), 7);
        assert_eq!(quant_level_exact(Rational::new(1, 8), &q), 1);
        let f = QuantAttrs { rounding: Rounding::Floor, ..q.clone() };
        assert_eq!(quant_level(0.49, &f), 1);
        assert_eq!(quant_level_exact(Rational::new(49, 100), &f), 1);
        assert_eq!(dequant(3, &q), 0.75);
    }

    #[test]
    fn bipolar_sign_maps_zero_up() {
        let q = QuantAttrs { scale: Rational::from_integer(1), zero_point: 0, dtype: DataType::Bipolar, rounding: Rounding::RoundHalfUp };
        assert_eq!(quant_level(0.0, &q), 1);
        assert_eq!(quant_level(-1e-9, &q), -1);
    }

    #[test]
    fn padded_conv_matches_hand_sum() {
        // 1 channel 3x3 input, 2x2 kernel of ones, pad 1 before.
        let x: Vec<i64> = (1..=9).collect();
        let g = Window { channels: 1, height: 3, width: 3, kernel: 2, stride: 1, pad_begin: 1, out_h: 3, out_w: 3 };
        let out = conv2d(&x, &[1i64; 4], 1, g);
        assert_eq!(out, vec![1, 3, 5, 5, 12, 16, 11, 24, 28]);
    }

    #[test]
    fn softmax_sums_to_one() {
        let s = softmax(&[1.0, 2.0, 3.0]);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(s[2] > s[1] && s[1] > s[0]);
    }
}
