//! Radix-2 FFT on power-of-two lengths.
//!
//! Forward transform is unnormalized, X_k = sum_j x_j exp(-2 pi i j k / n);
//! the inverse carries 1/n. Twiddles and the bit-reversal permutation are
//! precomputed in a plan so the propagator's inner loop does no trig.

use alloc::{vec, vec::Vec};

use crate::error::{CoreError, Result};
use crate::C64;

#[allow(unused_imports)]
use num_traits::Float;

pub fn is_pow2(n: usize) -> bool {
    n >= 2 && n & (n - 1) == 0
}

#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    log2n: u32,
    rev: Vec<u32>,
    /// twiddle[j] = exp(-2 pi i j / n) for j in 0..n/2
    twiddle: Vec<C64>,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if !is_pow2(n) {
            return Err(CoreError::BadGridSize(n));
        }
        let log2n = n.trailing_zeros();
        let mut rev = vec![0u32; n];
        for i in 1..n {
            rev[i] = (rev[i >> 1] >> 1) | (((i & 1) as u32) << (log2n - 1));
        }
        let mut twiddle = Vec::with_capacity(n / 2);
        for j in 0..n / 2 {
            let angle = -2.0 * core::f64::consts::PI * j as f64 / n as f64;
            twiddle.push(C64::new(angle.cos(), angle.sin()));
        }
        Ok(Self {
            n,
            log2n,
            rev,
            twiddle,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// In-place forward transform. Panics if `data.len() != self.len()`.
    pub fn forward(&self, data: &mut [C64]) {
        assert_eq!(data.len(), self.n, "fft plan length mismatch");
        for i in 0..self.n {
            let j = self.rev[i] as usize;
            if i < j {
                data.swap(i, j);
            }
        }
        let mut len = 2usize;
        for _ in 0..self.log2n {
            let half = len / 2;
            let step = self.n / len;
            let mut base = 0;
            while base < self.n {
                for j in 0..half {
                    let w = self.twiddle[j * step];
                    let t = w * data[base + j + half];
                    let u = data[base + j];
                    data[base + j] = u + t;
                    data[base + j + half] = u - t;
                }
                base += len;
            }
            len <<= 1;
        }
    }

    /// In-place inverse transform, including the 1/n factor.
    pub fn inverse(&self, data: &mut [C64]) {
        for z in data.iter_mut() {
            *z = z.conj();
        }
        self.forward(data);
        let s = 1.0 / self.n as f64;
        for z in data.iter_mut() {
            *z = C64::new(z.re * s, -z.im * s);
        }
    }
}
