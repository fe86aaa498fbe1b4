//! Uniform periodic spatial grid and its Fourier dual.
//!
//! Points are x_j = x_min + j dx for j in 0..n with dx = (x_max - x_min)/n;
//! x_max itself is excluded (it aliases x_min under periodicity). Wavenumbers
//! follow the standard FFT layout: k index below n/2 maps to 2 pi k / L,
//! at or above n/2 to 2 pi (k - n) / L.

use alloc::{vec, vec::Vec};

use crate::error::{CoreError, Result};
use crate::fft::is_pow2;

pub const MIN_POINTS: usize = 64;

#[derive(Debug, Clone)]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    n: usize,
    dx: f64,
    points: Vec<f64>,
    wavenumbers: Vec<f64>,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
            return Err(CoreError::BadGridExtent {
                min: x_min,
                max: x_max,
            });
        }
        if !is_pow2(n) || n < MIN_POINTS {
            return Err(CoreError::BadGridSize(n));
        }
        let length = x_max - x_min;
        let dx = length / n as f64;
        let points = (0..n).map(|j| x_min + j as f64 * dx).collect();
        let two_pi_over_l = 2.0 * core::f64::consts::PI / length;
        let mut wavenumbers = vec![0.0; n];
        for (k, w) in wavenumbers.iter_mut().enumerate() {
            let m = if k < n / 2 {
                k as f64
            } else {
                k as f64 - n as f64
            };
            *w = two_pi_over_l * m;
        }
        Ok(Self {
            x_min,
            x_max,
            n,
            dx,
            points,
            wavenumbers,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn spacing(&self) -> f64 {
        self.dx
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    /// Largest |wavenumber| representable on this grid (the Nyquist mode).
    pub fn max_wavenumber(&self) -> f64 {
        core::f64::consts::PI * self.n as f64 / self.length()
    }

    /// Fractional index of position `x`: x = x_min + t dx. No range clamp.
    pub fn fractional_index(&self, x: f64) -> f64 {
        (x - self.x_min) / self.dx
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x < self.x_max
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.n == other.n && self.x_min == other.x_min && self.x_max == other.x_max
    }
}
