//! Discrete harmonic analysis on the unit circle.
//!
//! Functions on `S^1` are sampled at the equispaced angles `phi_m = 2 pi m / size`
//! of a [`CircleGrid`]. Vector-valued samples are stored node-major: component
//! `c` of node `m` lives at index `m * dim + c`.
//!
//! Frequencies are represented in the range `(-size/2, size/2]`. The Nyquist
//! bin `size/2` is treated as a non-negative frequency, which keeps analytic
//! series (no negative frequencies) exactly representable. The Hilbert
//! transform annihilates the Nyquist mode, so identities such as
//! `T(T(u)) = -u + mean(u)` hold for data band-limited below `size/2`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Imaginary parts below this bound are accepted as real.
pub const REAL_TOLERANCE: f64 = 1e-9;

/// Tolerance on `|zeta| <= 1` for disc evaluation.
pub const DISC_TOLERANCE: f64 = 1e-12;

/// Negative-frequency content below this bound still counts as analytic.
pub const ANALYTIC_TOLERANCE: f64 = 1e-12;

/// Equispaced sampling of the unit circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CircleGrid {
    size: usize,
}

impl CircleGrid {
    pub const DEFAULT_SIZE: usize = 256;

    pub fn new(size: usize) -> Result<Self> {
        if size < 4 || !size.is_power_of_two() {
            return Err(Error::InvalidGrid(size));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Largest representable frequency (`size / 2`).
    pub fn max_frequency(&self) -> i64 {
        (self.size / 2) as i64
    }

    pub fn angle(&self, node: usize) -> f64 {
        2.0 * PI * node as f64 / self.size as f64
    }

    /// `e^{i phi_m}`.
    pub fn point(&self, node: usize) -> Complex64 {
        Complex64::from_polar(1.0, self.angle(node))
    }

    /// A grid twice as fine, used for anti-aliasing checks.
    pub fn refined(&self) -> Self {
        Self {
            size: self.size * 2,
        }
    }

    fn frequency_of_bin(&self, bin: usize) -> i64 {
        if bin <= self.size / 2 {
            bin as i64
        } else {
            bin as i64 - self.size as i64
        }
    }

    fn bin_of(&self, k: i64) -> Option<usize> {
        let half = self.max_frequency();
        if k > half || k <= -half {
            return None;
        }
        Some(if k >= 0 {
            k as usize
        } else {
            (k + self.size as i64) as usize
        })
    }
}

impl Default for CircleGrid {
    fn default() -> Self {
        Self {
            size: Self::DEFAULT_SIZE,
        }
    }
}

/// Truncated Fourier series of a `C^dim`-valued function on the circle.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierSeries {
    grid: CircleGrid,
    dim: usize,
    // bin-major, FFT ordering
    coeffs: Vec<Complex64>,
}

impl FourierSeries {
    pub fn zeros(grid: CircleGrid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            coeffs: vec![Complex64::new(0.0, 0.0); grid.size * dim],
        }
    }

    /// Series with the given `(frequency, coefficient vector)` modes; unlisted
    /// modes are zero. Repeated frequencies accumulate.
    pub fn from_modes(grid: CircleGrid, dim: usize, modes: &[(i64, Vec<Complex64>)]) -> Result<Self> {
        let mut s = Self::zeros(grid, dim);
        for (k, c) in modes {
            if c.len() != dim {
                return Err(Error::SizeMismatch {
                    expected: dim,
                    found: c.len(),
                });
            }
            let bin = grid.bin_of(*k).ok_or_else(|| {
                Error::InvalidParameter(alloc::format!(
                    "frequency {k} not representable on a grid of size {}",
                    grid.size
                ))
            })?;
            for (dst, src) in s.coeffs[bin * dim..(bin + 1) * dim].iter_mut().zip(c) {
                *dst += *src;
            }
        }
        Ok(s)
    }

    /// Constant series.
    pub fn constant(grid: CircleGrid, value: &[Complex64]) -> Self {
        let mut s = Self::zeros(grid, value.len());
        s.coeffs[..value.len()].copy_from_slice(value);
        s
    }

    pub fn grid(&self) -> CircleGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Coefficient vector of frequency `k`, or `None` when `k` is outside the
    /// representable band.
    pub fn coefficient(&self, k: i64) -> Option<&[Complex64]> {
        let bin = self.grid.bin_of(k)?;
        Some(&self.coeffs[bin * self.dim..(bin + 1) * self.dim])
    }

    pub fn coefficient_mut(&mut self, k: i64) -> Option<&mut [Complex64]> {
        let bin = self.grid.bin_of(k)?;
        Some(&mut self.coeffs[bin * self.dim..(bin + 1) * self.dim])
    }

    /// Iterates over `(frequency, coefficient vector)` in increasing frequency.
    pub fn modes(&self) -> impl Iterator<Item = (i64, &[Complex64])> + '_ {
        let half = self.grid.max_frequency();
        (-half + 1..=half).map(move |k| (k, self.coefficient(k).unwrap()))
    }

    /// Largest coefficient norm among negative frequencies.
    pub fn negative_content(&self) -> f64 {
        self.modes()
            .filter(|(k, _)| *k < 0)
            .map(|(_, c)| vec_norm(c))
            .fold(0.0, f64::max)
    }

    pub fn is_analytic(&self) -> bool {
        self.negative_content() <= ANALYTIC_TOLERANCE
    }

    /// Highest frequency with a coefficient above `tol`.
    pub fn degree(&self, tol: f64) -> i64 {
        self.modes()
            .filter(|(_, c)| vec_norm(c) > tol)
            .map(|(k, _)| k)
            .max()
            .unwrap_or(0)
    }

    /// Sample values on the grid (node-major).
    pub fn synthesize(&self) -> Vec<Complex64> {
        fourier_synthesize(self)
    }

    /// The same trigonometric polynomial on another grid. Modes outside the
    /// target band are dropped.
    pub fn resample(&self, grid: CircleGrid) -> Self {
        let mut out = Self::zeros(grid, self.dim);
        for (k, c) in self.modes() {
            if let Some(dst) = out.coefficient_mut(k) {
                dst.copy_from_slice(c);
            }
        }
        out
    }

    /// Power-series evaluation `sum_k c_k zeta^k` of an analytic series.
    pub fn evaluate(&self, zeta: Complex64) -> Result<Vec<Complex64>> {
        evaluate_disc(self, zeta)
    }

    /// `sum_k c_k zeta^k` over all stored modes, for `|zeta| = 1`.
    pub fn evaluate_on_circle(&self, zeta: Complex64) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim];
        for (k, c) in self.modes() {
            let p = zeta.powi(k as i32);
            for (o, ci) in out.iter_mut().zip(c) {
                *o += ci * p;
            }
        }
        out
    }

    pub fn scale(&mut self, factor: Complex64) {
        for c in &mut self.coeffs {
            *c *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &FourierSeries) -> Result<()> {
        if other.grid != self.grid || other.dim != self.dim {
            return Err(Error::SizeMismatch {
                expected: self.coeffs.len(),
                found: other.coeffs.len(),
            });
        }
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += *b;
        }
        Ok(())
    }

    /// Largest coefficient deviation from `other` over all common modes.
    pub fn max_coefficient_distance(&self, other: &FourierSeries) -> f64 {
        let half = self.grid.max_frequency().max(other.grid.max_frequency());
        let zero = vec![Complex64::new(0.0, 0.0); self.dim];
        (-half + 1..=half)
            .map(|k| {
                let a = self.coefficient(k).unwrap_or(&zero);
                let b = other.coefficient(k).unwrap_or(&zero);
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).norm())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

pub(crate) fn vec_norm(c: &[Complex64]) -> f64 {
    libm::sqrt(c.iter().map(|z| z.norm_sqr()).sum())
}

/// In-place radix-2 FFT. `inverse` selects the `e^{+i}` kernel; no scaling is
/// applied in either direction.
fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / len as f64))
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

fn check_len(grid: CircleGrid, dim: usize, len: usize) -> Result<()> {
    if len != grid.size * dim {
        return Err(Error::SizeMismatch {
            expected: grid.size * dim,
            found: len,
        });
    }
    Ok(())
}

/// Fourier coefficients `c_k = (1/size) sum_m s_m e^{-i k phi_m}`.
pub fn fourier_analyze(grid: CircleGrid, dim: usize, samples: &[Complex64]) -> Result<FourierSeries> {
    check_len(grid, dim, samples.len())?;
    let n = grid.size;
    let mut series = FourierSeries::zeros(grid, dim);
    let mut column = vec![Complex64::new(0.0, 0.0); n];
    let inv = 1.0 / n as f64;
    for c in 0..dim {
        for (m, slot) in column.iter_mut().enumerate() {
            *slot = samples[m * dim + c];
        }
        fft_in_place(&mut column, false);
        for (bin, v) in column.iter().enumerate() {
            series.coeffs[bin * dim + c] = v * inv;
        }
    }
    Ok(series)
}

/// Real-valued samples, analysed as complex data.
pub fn fourier_analyze_real(grid: CircleGrid, dim: usize, samples: &[f64]) -> Result<FourierSeries> {
    let z: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fourier_analyze(grid, dim, &z)
}

/// Node values `s_m = sum_k c_k e^{i k phi_m}`.
pub fn fourier_synthesize(series: &FourierSeries) -> Vec<Complex64> {
    let n = series.grid.size;
    let dim = series.dim;
    let mut out = vec![Complex64::new(0.0, 0.0); n * dim];
    let mut column = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..dim {
        for (bin, slot) in column.iter_mut().enumerate() {
            *slot = series.coeffs[bin * dim + c];
        }
        fft_in_place(&mut column, true);
        for (m, v) in column.iter().enumerate() {
            out[m * dim + c] = *v;
        }
    }
    out
}

/// Validates that complex samples are real to within [`REAL_TOLERANCE`] and
/// returns their real parts.
pub fn real_samples(samples: &[Complex64]) -> Result<Vec<f64>> {
    let max_imag = samples.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if max_imag > REAL_TOLERANCE {
        return Err(Error::NonReal { max_imag });
    }
    Ok(samples.iter().map(|z| z.re).collect())
}

/// Hilbert transform: boundary values of the harmonic conjugate normalised to
/// vanish at the centre. Mode `k` is multiplied by `-i sign(k)`; the constant
/// and Nyquist modes are removed.
pub fn hilbert_transform(grid: CircleGrid, dim: usize, u: &[f64]) -> Result<Vec<f64>> {
    let mut series = fourier_analyze_real(grid, dim, u)?;
    let n = grid.size;
    for bin in 0..n {
        let k = grid.frequency_of_bin(bin);
        let factor = if k == 0 || k == grid.max_frequency() {
            Complex64::new(0.0, 0.0)
        } else if k > 0 {
            Complex64::new(0.0, -1.0)
        } else {
            Complex64::new(0.0, 1.0)
        };
        for c in 0..dim {
            series.coeffs[bin * dim + c] *= factor;
        }
    }
    Ok(fourier_synthesize(&series).into_iter().map(|z| z.re).collect())
}

/// [`hilbert_transform`] on complex input that must be real-valued.
pub fn hilbert_transform_checked(grid: CircleGrid, dim: usize, u: &[Complex64]) -> Result<Vec<f64>> {
    let real = real_samples(u)?;
    hilbert_transform(grid, dim, &real)
}

/// The analytic disc `G` with `Re G = u` on the grid nodes and `Re G(0) = x`:
/// `G = u + i T(u)` with its constant term replaced by `x`.
pub fn analytic_completion(grid: CircleGrid, u_boundary: &[f64], x: &[f64]) -> Result<FourierSeries> {
    let dim = x.len();
    check_len(grid, dim, u_boundary.len())?;
    let spectrum = fourier_analyze_real(grid, dim, u_boundary)?;
    Ok(complete_from_spectrum(&spectrum, |c| *c, x))
}

/// Builds an analytic series from the non-negative half of a real spectrum:
/// `G_0 = x`, `G_k = 2 map(c_k)` for `0 < k < size/2`, Nyquist copied once.
pub(crate) fn complete_from_spectrum(
    spectrum: &FourierSeries,
    map: impl Fn(&Complex64) -> Complex64,
    constant: &[f64],
) -> FourierSeries {
    let grid = spectrum.grid;
    let dim = spectrum.dim;
    let half = grid.max_frequency();
    let mut out = FourierSeries::zeros(grid, dim);
    for (c, slot) in out.coeffs[..dim].iter_mut().enumerate() {
        *slot = Complex64::new(constant[c], 0.0);
    }
    for k in 1..=half {
        let weight = if k == half { 1.0 } else { 2.0 };
        let bin = k as usize;
        for c in 0..dim {
            out.coeffs[bin * dim + c] = map(&spectrum.coeffs[bin * dim + c]) * weight;
        }
    }
    out
}

/// Evaluates an analytic series at a point of the closed unit disc.
pub fn evaluate_disc(series: &FourierSeries, zeta: Complex64) -> Result<Vec<Complex64>> {
    let modulus = zeta.norm();
    if modulus > 1.0 + DISC_TOLERANCE {
        return Err(Error::OutsideDisc { modulus });
    }
    let content = series.negative_content();
    if content > ANALYTIC_TOLERANCE {
        return Err(Error::NotAnalytic { content });
    }
    // Horner from the top frequency down
    let dim = series.dim;
    let mut acc = vec![Complex64::new(0.0, 0.0); dim];
    for k in (0..=series.grid.max_frequency()).rev() {
        let c = series.coefficient(k).unwrap();
        for (a, ci) in acc.iter_mut().zip(c) {
            *a = *a * zeta + ci;
        }
    }
    Ok(acc)
}

/// Mean value of each component of node-major samples.
pub fn mean(dim: usize, samples: &[f64]) -> Vec<f64> {
    let nodes = samples.len() / dim.max(1);
    let mut out = vec![0.0; dim];
    for row in samples.chunks(dim) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= nodes as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> CircleGrid {
        CircleGrid::new(n).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn grid_rejects_bad_sizes() {
        assert!(CircleGrid::new(2).is_err());
        assert!(CircleGrid::new(12).is_err());
        assert!(CircleGrid::new(16).is_ok());
    }

    #[test]
    fn analyze_constant() {
        let g = grid(8);
        let s = fourier_analyze(g, 1, &[c(1.0, 0.0); 8]).unwrap();
        assert!((s.coefficient(0).unwrap()[0] - c(1.0, 0.0)).norm() < 1e-15);
        for (k, v) in s.modes() {
            if k != 0 {
                assert!(v[0].norm() < 1e-15);
            }
        }
    }

    #[test]
    fn analyze_cosine() {
        let g = grid(16);
        let samples: Vec<Complex64> = (0..16).map(|m| c(libm::cos(g.angle(m)), 0.0)).collect();
        let s = fourier_analyze(g, 1, &samples).unwrap();
        for (k, v) in s.modes() {
            let expected = if k.abs() == 1 { 0.5 } else { 0.0 };
            assert!((v[0] - c(expected, 0.0)).norm() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn analyze_pure_mode() {
        let g = grid(8);
        let samples: Vec<Complex64> = (0..8).map(|m| g.point(m).powi(3)).collect();
        let s = fourier_analyze(g, 1, &samples).unwrap();
        for (k, v) in s.modes() {
            let expected = if k == 3 { 1.0 } else { 0.0 };
            assert!((v[0] - c(expected, 0.0)).norm() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn analyze_size_mismatch() {
        assert!(matches!(
            fourier_analyze(grid(8), 1, &[c(0.0, 0.0); 7]),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn hilbert_of_constant_vanishes() {
        let g = grid(32);
        let t = hilbert_transform(g, 1, &[1.0; 32]).unwrap();
        assert!(t.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn hilbert_of_cos_and_sin() {
        let g = grid(64);
        for k in 1..10 {
            let cosk: Vec<f64> = (0..64).map(|m| libm::cos(k as f64 * g.angle(m))).collect();
            let sink: Vec<f64> = (0..64).map(|m| libm::sin(k as f64 * g.angle(m))).collect();
            let tc = hilbert_transform(g, 1, &cosk).unwrap();
            let ts = hilbert_transform(g, 1, &sink).unwrap();
            for m in 0..64 {
                assert!((tc[m] - sink[m]).abs() < 1e-13);
                assert!((ts[m] + cosk[m]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn hilbert_rejects_complex_input() {
        let g = grid(8);
        let mut z = [c(1.0, 0.0); 8];
        z[3] = c(1.0, 1e-6);
        assert!(matches!(
            hilbert_transform_checked(g, 1, &z),
            Err(Error::NonReal { .. })
        ));
        z[3] = c(1.0, 1e-12);
        assert!(hilbert_transform_checked(g, 1, &z).is_ok());
    }

    #[test]
    fn completion_examples() {
        let g = grid(16);
        let zero = analytic_completion(g, &[0.0; 16], &[0.0]).unwrap();
        assert!(zero.modes().all(|(_, v)| v[0].norm() == 0.0));

        let cos: Vec<f64> = (0..16).map(|m| libm::cos(g.angle(m))).collect();
        let gz = analytic_completion(g, &cos, &[0.0]).unwrap();
        for (k, v) in gz.modes() {
            let expected = if k == 1 { 1.0 } else { 0.0 };
            assert!((v[0] - c(expected, 0.0)).norm() < 1e-14);
        }

        let five = analytic_completion(g, &[5.0; 16], &[5.0]).unwrap();
        assert!((five.coefficient(0).unwrap()[0] - c(5.0, 0.0)).norm() < 1e-14);
        assert!(five.is_analytic());
        assert!(five.degree(1e-14) == 0);
    }

    #[test]
    fn completion_real_part_matches_boundary() {
        let g = grid(32);
        let u: Vec<f64> = (0..32)
            .map(|m| {
                let p = g.angle(m);
                0.3 + libm::cos(p) - 0.2 * libm::sin(3.0 * p) + 0.05 * libm::cos(7.0 * p)
            })
            .collect();
        let series = analytic_completion(g, &u, &[0.3]).unwrap();
        assert!(series.is_analytic());
        let values = series.synthesize();
        for m in 0..32 {
            assert!((values[m].re - u[m]).abs() < 1e-13);
        }
    }

    #[test]
    fn evaluate_examples() {
        let g = grid(8);
        let id = FourierSeries::from_modes(g, 1, &[(1, vec![c(1.0, 0.0)])]).unwrap();
        assert!(evaluate_disc(&id, c(0.0, 0.0)).unwrap()[0].norm() < 1e-15);
        assert!((evaluate_disc(&id, c(0.0, 1.0)).unwrap()[0] - c(0.0, 1.0)).norm() < 1e-15);
        let p = FourierSeries::from_modes(g, 1, &[(0, vec![c(1.0, 0.0)]), (2, vec![c(2.0, 0.0)])]).unwrap();
        assert!((evaluate_disc(&p, c(0.5, 0.0)).unwrap()[0] - c(1.5, 0.0)).norm() < 1e-15);
        assert!(matches!(
            evaluate_disc(&p, c(1.1, 0.0)),
            Err(Error::OutsideDisc { .. })
        ));
        let bad = FourierSeries::from_modes(g, 1, &[(-1, vec![c(1e-3, 0.0)])]).unwrap();
        assert!(matches!(
            evaluate_disc(&bad, c(0.0, 0.0)),
            Err(Error::NotAnalytic { .. })
        ));
    }

    #[test]
    fn resample_preserves_polynomial() {
        let g = grid(16);
        let s = FourierSeries::from_modes(g, 2, &[(3, vec![c(1.0, 2.0), c(0.0, 0.5)]), (-2, vec![c(0.1, 0.0), c(0.0, 0.0)])]).unwrap();
        let fine = s.resample(g.refined());
        assert_eq!(fine.grid().size(), 32);
        assert!(s.max_coefficient_distance(&fine) < 1e-15);
        let z = c(0.6, 0.8);
        let a = s.evaluate_on_circle(z);
        let b = fine.evaluate_on_circle(z);
        assert!((a[0] - b[0]).norm() < 1e-14 && (a[1] - b[1]).norm() < 1e-14);
    }
}
