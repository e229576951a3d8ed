//! Minimal 3-D complex FFT on a flat row-major `n^3` buffer, built from 1-D
//! plans. Index convention: `(i, j, l) -> (i * n + j) * n + l`.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct Fft3 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft3 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft3 {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    fn pass(&self, data: &mut [Complex64], axis: usize, fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        debug_assert_eq!(data.len(), self.len());
        if axis == 2 {
            // contiguous lines; rustfft processes the buffer in chunks of n
            fft.process(data);
            return;
        }
        let stride = if axis == 1 { n } else { n * n };
        let mut buf = vec![Complex64::default(); n];
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        for a in 0..n {
            for b in 0..n {
                let base = if axis == 0 { a * n + b } else { a * n * n + b };
                for k in 0..n {
                    buf[k] = data[base + k * stride];
                }
                fft.process_with_scratch(&mut buf, &mut scratch);
                for k in 0..n {
                    data[base + k * stride] = buf[k];
                }
            }
        }
    }

    /// Physical samples to Fourier coefficients of `sum c_k e^{i k x}`
    /// (forward DFT scaled by `1/n^3`).
    pub fn to_spectral(&self, data: &mut [Complex64]) {
        for axis in 0..3 {
            self.pass(data, axis, &self.fwd);
        }
        let scale = 1.0 / self.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    /// Fourier coefficients to physical samples (unscaled inverse DFT).
    pub fn to_physical(&self, data: &mut [Complex64]) {
        for axis in 0..3 {
            self.pass(data, axis, &self.inv);
        }
    }
}
