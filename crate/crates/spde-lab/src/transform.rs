//! Fast sine and cosine evaluation on the interior grid.
//!
//! All grid work in the crate happens on the uniform interior nodes
//! `x_k = k/(M+1)`, `k = 1..=M`, per dimension. On those nodes the type-I
//! discrete sine transform is exactly the map between sine-polynomial
//! coefficients and point values, and it embeds into a complex FFT of length
//! `2(M+1)` via odd extension. Cosine synthesis (needed for the cosine noise
//! basis) uses the even extension of the same FFT.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

fn plan(len: usize) -> Arc<dyn Fft<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(len)
        .or_insert_with(|| FftPlanner::new().plan_fft_forward(len))
        .clone()
}

/// One-dimensional transform kernel on `m` interior nodes.
pub struct SineTransform {
    m: usize,
    fft: Arc<dyn Fft<f64>>,
}

/// Reusable buffers for [`SineTransform`]; one per worker thread.
pub struct Scratch {
    buf: Vec<Complex<f64>>,
    work: Vec<Complex<f64>>,
}

impl SineTransform {
    pub fn new(m: usize) -> Self {
        assert!(m >= 1, "transform needs at least one interior node");
        Self {
            m,
            fft: plan(2 * (m + 1)),
        }
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn scratch(&self) -> Scratch {
        let len = 2 * (self.m + 1);
        Scratch {
            buf: vec![Complex::default(); len],
            work: vec![Complex::default(); self.fft.get_inplace_scratch_len()],
        }
    }

    /// Unnormalized DST-I: `out[i-1] = sum_{k=1}^{M} data[k-1] sin(pi i k / (M+1))`.
    ///
    /// The kernel is its own inverse up to the factor `(M+1)/2`.
    pub fn dst_into(&self, data: &[f64], out: &mut [f64], scratch: &mut Scratch) {
        let m = self.m;
        assert!(data.len() <= m, "input exceeds node count");
        assert_eq!(out.len(), m);
        let l = 2 * (m + 1);
        scratch.buf[0] = Complex::default();
        scratch.buf[m + 1] = Complex::default();
        for k in 1..=m {
            let v = if k <= data.len() { data[k - 1] } else { 0.0 };
            scratch.buf[k] = Complex::new(v, 0.0);
            scratch.buf[l - k] = Complex::new(-v, 0.0);
        }
        self.fft
            .process_with_scratch(&mut scratch.buf, &mut scratch.work);
        for i in 1..=m {
            out[i - 1] = -0.5 * scratch.buf[i].im;
        }
    }

    /// Cosine synthesis on the interior nodes:
    /// `out[k-1] = sum_{j=0}^{n-1} coeffs[j] cos(pi j k / (M+1))`, `k = 1..=M`.
    ///
    /// Requires `n <= M + 2`.
    pub fn cosine_eval_into(&self, coeffs: &[f64], out: &mut [f64], scratch: &mut Scratch) {
        let m = self.m;
        assert!(coeffs.len() <= m + 2, "cosine order exceeds grid resolution");
        assert_eq!(out.len(), m);
        let l = 2 * (m + 1);
        for slot in scratch.buf.iter_mut() {
            *slot = Complex::default();
        }
        if !coeffs.is_empty() {
            scratch.buf[0] = Complex::new(coeffs[0], 0.0);
        }
        for (j, &c) in coeffs.iter().enumerate().skip(1) {
            let half = Complex::new(0.5 * c, 0.0);
            scratch.buf[j] = half;
            scratch.buf[l - j] += half;
        }
        self.fft
            .process_with_scratch(&mut scratch.buf, &mut scratch.work);
        for k in 1..=m {
            out[k - 1] = scratch.buf[k].re;
        }
    }
}

/// Applies the unnormalized DST-I along every axis of a row-major `m^d` array.
///
/// Because the multi-dimensional sine kernel factorizes over axes, this turns
/// coefficient arrays into node values (and back, up to `((M+1)/2)^d`).
pub fn dst_all_axes(values: &mut [f64], m: usize, d: usize) {
    assert_eq!(values.len(), m.pow(d as u32), "array is not m^d");
    let t = SineTransform::new(m);
    let mut scratch = t.scratch();
    let mut line = vec![0.0; m];
    let mut out = vec![0.0; m];
    for axis in 0..d {
        let stride = m.pow((d - 1 - axis) as u32);
        let n_lines = values.len() / m;
        for line_idx in 0..n_lines {
            // Decompose line_idx into the indices of all axes except `axis`.
            let block = line_idx / stride;
            let offset = line_idx % stride;
            let base = block * stride * m + offset;
            for (j, slot) in line.iter_mut().enumerate() {
                *slot = values[base + j * stride];
            }
            t.dst_into(&line, &mut out, &mut scratch);
            for (j, &v) in out.iter().enumerate() {
                values[base + j * stride] = v;
            }
        }
    }
}

/// Embeds an `n^d` coefficient array into an `m^d` array (zero padding).
pub fn embed(coeffs: &[f64], n: usize, m: usize, d: usize) -> Vec<f64> {
    assert_eq!(coeffs.len(), n.pow(d as u32));
    assert!(n <= m);
    let mut out = vec![0.0; m.pow(d as u32)];
    let mut src_idx = vec![0usize; d];
    for &c in coeffs {
        let mut flat = 0;
        for &i in &src_idx {
            flat = flat * m + i;
        }
        out[flat] = c;
        for axis in (0..d).rev() {
            src_idx[axis] += 1;
            if src_idx[axis] < n {
                break;
            }
            src_idx[axis] = 0;
        }
    }
    out
}

/// Extracts the leading `n^d` block of an `m^d` array (spectral truncation).
pub fn restrict(values: &[f64], m: usize, n: usize, d: usize) -> Vec<f64> {
    assert_eq!(values.len(), m.pow(d as u32));
    assert!(n <= m);
    let mut out = vec![0.0; n.pow(d as u32)];
    let mut idx = vec![0usize; d];
    for slot in out.iter_mut() {
        let mut flat = 0;
        for &i in &idx {
            flat = flat * m + i;
        }
        *slot = values[flat];
        for axis in (0..d).rev() {
            idx[axis] += 1;
            if idx[axis] < n {
                break;
            }
            idx[axis] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dst(data: &[f64], m: usize) -> Vec<f64> {
        (1..=m)
            .map(|i| {
                data.iter()
                    .enumerate()
                    .map(|(k0, &v)| v * (PI * i as f64 * (k0 + 1) as f64 / (m + 1) as f64).sin())
                    .sum()
            })
            .collect()
    }

    #[test]
    fn dst_matches_naive_kernel() {
        for m in [1, 2, 5, 16, 33] {
            let data: Vec<f64> = (0..m).map(|k| (k as f64 * 0.37).sin() + 0.2).collect();
            let t = SineTransform::new(m);
            let mut scratch = t.scratch();
            let mut out = vec![0.0; m];
            t.dst_into(&data, &mut out, &mut scratch);
            let expect = naive_dst(&data, m);
            for (a, b) in out.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn dst_is_involutive_up_to_scale() {
        let m = 24;
        let data: Vec<f64> = (0..m).map(|k| ((k * k) as f64).cos()).collect();
        let t = SineTransform::new(m);
        let mut scratch = t.scratch();
        let mut once = vec![0.0; m];
        let mut twice = vec![0.0; m];
        t.dst_into(&data, &mut once, &mut scratch);
        t.dst_into(&once, &mut twice, &mut scratch);
        let scale = (m + 1) as f64 / 2.0;
        for (a, b) in twice.iter().zip(&data) {
            assert!((a / scale - b).abs() < 1e-12, "{} vs {}", a / scale, b);
        }
    }

    #[test]
    fn cosine_eval_matches_naive_sum() {
        let m = 19;
        let coeffs: Vec<f64> = (0..8).map(|j| 1.0 / (1.0 + j as f64)).collect();
        let t = SineTransform::new(m);
        let mut scratch = t.scratch();
        let mut out = vec![0.0; m];
        t.cosine_eval_into(&coeffs, &mut out, &mut scratch);
        for k in 1..=m {
            let x = k as f64 / (m + 1) as f64;
            let expect: f64 = coeffs
                .iter()
                .enumerate()
                .map(|(j, &c)| c * (PI * j as f64 * x).cos())
                .sum();
            assert!((out[k - 1] - expect).abs() < 1e-12, "node {k}");
        }
    }

    #[test]
    fn two_dimensional_transform_factorizes() {
        let m = 7;
        let mut values = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                values[i * m + j] = (i as f64 + 0.3).sin() * (j as f64 - 1.7).cos();
            }
        }
        let mut fast = values.clone();
        dst_all_axes(&mut fast, m, 2);
        // Direct double sum.
        for p in 1..=m {
            for q in 1..=m {
                let mut s = 0.0;
                for i in 1..=m {
                    for j in 1..=m {
                        s += values[(i - 1) * m + (j - 1)]
                            * (PI * p as f64 * i as f64 / (m + 1) as f64).sin()
                            * (PI * q as f64 * j as f64 / (m + 1) as f64).sin();
                    }
                }
                let got = fast[(p - 1) * m + (q - 1)];
                assert!((got - s).abs() < 1e-10 * (1.0 + s.abs()), "{p},{q}");
            }
        }
    }

    #[test]
    fn embed_restrict_round_trip() {
        let n = 3;
        let m = 5;
        let coeffs: Vec<f64> = (0..n * n).map(|i| i as f64 + 1.0).collect();
        let padded = embed(&coeffs, n, m, 2);
        assert_eq!(padded.len(), m * m);
        assert_eq!(padded[0], 1.0);
        assert_eq!(padded[m + 1], coeffs[n + 1]);
        assert_eq!(restrict(&padded, m, n, 2), coeffs);
    }
}
