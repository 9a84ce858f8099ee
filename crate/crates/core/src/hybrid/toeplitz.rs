use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Multiplies rows by a lower-triangular Toeplitz matrix through zero-padded
/// FFTs: `out[j] = Σ_{k ≤ j} kernel[k] · signal[j - k]`.
///
/// The kernel spectrum and the FFT plans are computed once, so a convolver
/// can be shared across threads and reused for every path.
#[derive(Clone)]
pub struct ToeplitzConvolver {
    len: usize,
    fft_len: usize,
    kernel_hat: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ToeplitzConvolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToeplitzConvolver")
            .field("len", &self.len)
            .field("fft_len", &self.fft_len)
            .finish()
    }
}

/// Per-thread work buffers for [`ToeplitzConvolver::apply_row`].
pub struct ConvScratch {
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl ToeplitzConvolver {
    /// Convolver for signals of length `len`. The FFT length is the next
    /// power of two at least `2·len - 1`.
    pub fn new(kernel: &[f64], len: usize) -> Result<Self> {
        if kernel.is_empty() {
            return Err(Error::invalid("Toeplitz kernel must not be empty"));
        }
        if kernel.len() > len {
            return Err(Error::invalid(format!(
                "kernel length {} exceeds signal length {len}",
                kernel.len()
            )));
        }
        let fft_len = (2 * len - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);

        let mut kernel_hat = vec![Complex::new(0.0, 0.0); fft_len];
        for (slot, &k) in kernel_hat.iter_mut().zip(kernel) {
            slot.re = k;
        }
        let mut scratch = vec![Complex::new(0.0, 0.0); forward.get_inplace_scratch_len()];
        forward.process_with_scratch(&mut kernel_hat, &mut scratch);
        // fold the inverse transform's 1/L into the kernel spectrum
        let scale = 1.0 / fft_len as f64;
        for k in &mut kernel_hat {
            *k *= scale;
        }
        Ok(ToeplitzConvolver { len, fft_len, kernel_hat, forward, inverse })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    pub fn scratch(&self) -> ConvScratch {
        let n = self
            .forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len());
        ConvScratch {
            buf: vec![Complex::new(0.0, 0.0); self.fft_len],
            scratch: vec![Complex::new(0.0, 0.0); n],
        }
    }

    /// Convolves one row. `input` and `out` must both have length `len`.
    pub fn apply_row(&self, input: ArrayView1<f64>, mut out: ArrayViewMut1<f64>, ws: &mut ConvScratch) {
        debug_assert_eq!(input.len(), self.len);
        debug_assert_eq!(out.len(), self.len);
        for (slot, &x) in ws.buf.iter_mut().zip(input.iter()) {
            *slot = Complex::new(x, 0.0);
        }
        for slot in &mut ws.buf[self.len..] {
            *slot = Complex::new(0.0, 0.0);
        }
        self.forward.process_with_scratch(&mut ws.buf, &mut ws.scratch);
        for (b, k) in ws.buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.inverse.process_with_scratch(&mut ws.buf, &mut ws.scratch);
        for (o, b) in out.iter_mut().zip(&ws.buf) {
            *o = b.re;
        }
    }

    /// Convolves every row of `signal` (`[rows × len]`).
    pub fn apply(&self, signal: &Array2<f64>) -> Result<Array2<f64>> {
        if signal.ncols() != self.len {
            return Err(Error::invalid(format!(
                "signal has {} columns, convolver expects {}",
                signal.ncols(),
                self.len
            )));
        }
        let mut out = Array2::zeros(signal.dim());
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(signal.axis_iter(Axis(0)).into_par_iter())
            .for_each_init(|| self.scratch(), |ws, (o, s)| self.apply_row(s, o, ws));
        Ok(out)
    }
}

/// `output[p][j] = Σ_k kernel[k] · signal[p][j - k]`, in `O(N log N)` per row.
pub fn toeplitz_convolve(kernel: &[f64], signal: &Array2<f64>) -> Result<Array2<f64>> {
    ToeplitzConvolver::new(kernel, signal.ncols())?.apply(signal)
}
