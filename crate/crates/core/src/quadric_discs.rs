//! Closed-form discs attached to quadric manifolds `y = q(w, w_bar)`.
//!
//! For `W(zeta) = sum_{j>=0} t_j a_j zeta^j` the attached disc through the base
//! point `x` is
//! `G = x + i sum_j t_j^2 q(a_j, a_j_bar) + 2i sum_{k<j} t_j t_k q(a_j, a_k_bar) zeta^(j-k)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::QuadricForm;
use crate::harmonics::{CircleGrid, FourierSeries, DISC_TOLERANCE};

/// Parameters of the disc family. Index `0` of the scale and direction lists
/// is the base-point term `t_0 a_0`; indices `1..=N` are the search
/// directions.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscFamilyParams {
    pub x: Vec<f64>,
    pub a0: Vec<Complex64>,
    pub t0: f64,
    pub directions: Vec<Vec<Complex64>>,
    pub scales: Vec<f64>,
}

impl DiscFamilyParams {
    /// Family with `t_0 = 1`.
    pub fn new(x: Vec<f64>, a0: Vec<Complex64>, directions: Vec<Vec<Complex64>>, scales: Vec<f64>) -> Result<Self> {
        let p = Self {
            x,
            a0,
            t0: 1.0,
            directions,
            scales,
        };
        p.check_shape()?;
        Ok(p)
    }

    pub fn with_t0(mut self, t0: f64) -> Self {
        self.t0 = t0;
        self
    }

    /// Number `N` of search directions.
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn cr_dim(&self) -> usize {
        self.a0.len()
    }

    fn check_shape(&self) -> Result<()> {
        if self.directions.is_empty() {
            return Err(Error::InvalidParameter("a disc family needs at least one direction".into()));
        }
        if self.directions.len() != self.scales.len() {
            return Err(Error::SizeMismatch {
                expected: self.directions.len(),
                found: self.scales.len(),
            });
        }
        for a in &self.directions {
            if a.len() != self.a0.len() {
                return Err(Error::SizeMismatch {
                    expected: self.a0.len(),
                    found: a.len(),
                });
            }
        }
        Ok(())
    }

    /// Checks `|t_j| |a_j| <= radius` for every term, including `t_0 a_0`.
    pub fn check_radius(&self, radius: f64) -> Result<()> {
        for j in 0..=self.len() {
            let size = self.scale(j).abs() * norm(self.direction(j));
            if size > radius {
                return Err(Error::InvalidParameter(format!(
                    "|t_{j}| |a_{j}| = {size} exceeds the family radius {radius}"
                )));
            }
        }
        Ok(())
    }

    /// `t_j`, with `t_0` at index 0.
    pub fn scale(&self, j: usize) -> f64 {
        if j == 0 {
            self.t0
        } else {
            self.scales[j - 1]
        }
    }

    /// `a_j`, with `a_0` at index 0.
    pub fn direction(&self, j: usize) -> &[Complex64] {
        if j == 0 {
            &self.a0
        } else {
            &self.directions[j - 1]
        }
    }

    pub fn with_scales(&self, scales: Vec<f64>) -> Self {
        Self {
            scales,
            ..self.clone()
        }
    }

    /// Coefficients `t_j a_j` of `W`, lowest frequency first.
    pub fn w_coefficients(&self) -> Vec<Vec<Complex64>> {
        (0..=self.len())
            .map(|j| self.direction(j).iter().map(|a| a * self.scale(j)).collect())
            .collect()
    }

    /// `W` as a series on `grid`.
    pub fn w_series(&self, grid: CircleGrid) -> Result<FourierSeries> {
        check_band(grid, self.len())?;
        let modes: Vec<(i64, Vec<Complex64>)> = self
            .w_coefficients()
            .into_iter()
            .enumerate()
            .map(|(j, c)| (j as i64, c))
            .collect();
        FourierSeries::from_modes(grid, self.cr_dim(), &modes)
    }

    /// `W(zeta)` for any `zeta`.
    pub fn w_at(&self, zeta: Complex64) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.cr_dim()];
        let mut p = Complex64::new(1.0, 0.0);
        for j in 0..=self.len() {
            let t = self.scale(j);
            for (o, a) in out.iter_mut().zip(self.direction(j)) {
                *o += a * t * p;
            }
            p *= zeta;
        }
        out
    }
}

fn norm(v: &[Complex64]) -> f64 {
    libm::sqrt(v.iter().map(|z| z.norm_sqr()).sum())
}

fn check_band(grid: CircleGrid, n: usize) -> Result<()> {
    if n as i64 >= grid.max_frequency() {
        return Err(Error::InvalidParameter(format!(
            "grid of size {} cannot resolve frequency {n}",
            grid.size()
        )));
    }
    Ok(())
}

fn check_dims(q: &QuadricForm, params: &DiscFamilyParams) -> Result<()> {
    if params.cr_dim() != q.cr_dim() {
        return Err(Error::SizeMismatch {
            expected: q.cr_dim(),
            found: params.cr_dim(),
        });
    }
    if params.x.len() != q.codim() {
        return Err(Error::SizeMismatch {
            expected: q.codim(),
            found: params.x.len(),
        });
    }
    Ok(())
}

/// Coefficients of `G` by frequency `0..=N`.
pub fn closed_form_coefficients(q: &QuadricForm, params: &DiscFamilyParams) -> Result<Vec<Vec<Complex64>>> {
    check_dims(q, params)?;
    let n = params.len();
    let d = q.codim();
    let i = Complex64::new(0.0, 1.0);
    let mut out = vec![vec![Complex64::new(0.0, 0.0); d]; n + 1];
    for (o, x) in out[0].iter_mut().zip(&params.x) {
        *o = Complex64::new(*x, 0.0);
    }
    for j in 0..=n {
        let tj = params.scale(j);
        if tj == 0.0 {
            continue;
        }
        let aj = params.direction(j);
        for (o, v) in out[0].iter_mut().zip(q.eval_real(aj)) {
            *o += i * tj * tj * v;
        }
        for k in 0..j {
            let tk = params.scale(k);
            if tk == 0.0 {
                continue;
            }
            for (o, v) in out[j - k].iter_mut().zip(q.eval(aj, params.direction(k))) {
                *o += 2.0 * i * tj * tk * v;
            }
        }
    }
    Ok(out)
}

/// The disc component `G` as a series on `grid`.
pub fn closed_form_g(q: &QuadricForm, params: &DiscFamilyParams, grid: CircleGrid) -> Result<FourierSeries> {
    check_band(grid, params.len())?;
    let modes: Vec<(i64, Vec<Complex64>)> = closed_form_coefficients(q, params)?
        .into_iter()
        .enumerate()
        .map(|(k, c)| (k as i64, c))
        .collect();
    FourierSeries::from_modes(grid, q.codim(), &modes)
}

/// `G(zeta)` evaluated directly from the closed form.
pub fn closed_form_g_at(q: &QuadricForm, params: &DiscFamilyParams, zeta: Complex64) -> Result<Vec<Complex64>> {
    let coeffs = closed_form_coefficients(q, params)?;
    let mut out = vec![Complex64::new(0.0, 0.0); q.codim()];
    for c in coeffs.iter().rev() {
        for (o, ci) in out.iter_mut().zip(c) {
            *o = *o * zeta + ci;
        }
    }
    Ok(out)
}

/// Centre `(x + i sum_j t_j^2 q(a_j, a_j_bar), t_0 a_0)` of the disc.
pub fn center_map(q: &QuadricForm, params: &DiscFamilyParams) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    check_dims(q, params)?;
    let mut g0: Vec<Complex64> = params.x.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    for j in 0..=params.len() {
        let t = params.scale(j);
        for (o, v) in g0.iter_mut().zip(q.eval_real(params.direction(j))) {
            o.im += t * t * v;
        }
    }
    let w0 = params.a0.iter().map(|a| a * params.t0).collect();
    Ok((g0, w0))
}

/// Complex derivative `dG/dt_j (zeta)`:
/// `2i sum_{k<j} t_k q(a_j, a_k_bar) zeta^(j-k) + 2i sum_{l>j} t_l q(a_l, a_j_bar) zeta^(l-j) + 2i t_j q(a_j, a_j_bar)`.
pub fn d_g_dt(q: &QuadricForm, params: &DiscFamilyParams, j: usize, zeta: Complex64) -> Result<Vec<Complex64>> {
    check_dims(q, params)?;
    if j > params.len() {
        return Err(Error::InvalidParameter(format!("index {j} exceeds N = {}", params.len())));
    }
    let i = Complex64::new(0.0, 1.0);
    let aj = params.direction(j);
    let mut out: Vec<Complex64> = q
        .eval_real(aj)
        .into_iter()
        .map(|v| 2.0 * i * params.scale(j) * v)
        .collect();
    for k in 0..=params.len() {
        let tk = params.scale(k);
        if k == j || tk == 0.0 {
            continue;
        }
        let (value, power) = if k < j {
            (q.eval(aj, params.direction(k)), (j - k) as i32)
        } else {
            (q.eval(params.direction(k), aj), (k - j) as i32)
        };
        let z = zeta.powi(power);
        for (o, v) in out.iter_mut().zip(value) {
            *o += 2.0 * i * tk * v * z;
        }
    }
    Ok(out)
}

/// `d Re G / dt_j` at a point of the unit circle. Every pair `(j, k)` with
/// `k != j`, including the base term `k = 0`, contributes.
pub fn d_re_g_dt(q: &QuadricForm, params: &DiscFamilyParams, j: usize, zeta: Complex64) -> Result<Vec<f64>> {
    if (zeta.norm() - 1.0).abs() > DISC_TOLERANCE {
        return Err(Error::InvalidParameter(format!("|zeta| = {} is not on the unit circle", zeta.norm())));
    }
    Ok(d_g_dt(q, params, j, zeta)?.into_iter().map(|z| z.re).collect())
}

/// `d v(0) / dt_j = 2 t_j q(a_j, a_j_bar)` where `v(0) = Im G(0)`.
pub fn dv0_dt(q: &QuadricForm, params: &DiscFamilyParams, j: usize) -> Result<Vec<f64>> {
    check_dims(q, params)?;
    if j > params.len() {
        return Err(Error::InvalidParameter(format!("index {j} exceeds N = {}", params.len())));
    }
    let t = params.scale(j);
    Ok(q.eval_real(params.direction(j)).into_iter().map(|v| 2.0 * t * v).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn lewy_family(scales: Vec<f64>) -> DiscFamilyParams {
        let n = scales.len();
        DiscFamilyParams::new(vec![0.0], vec![c(1.0, 0.0)], vec![vec![c(1.0, 0.0)]; n], scales)
            .unwrap()
            .with_t0(0.0)
    }

    #[test]
    fn single_mode() {
        let q = QuadricForm::lewy();
        let t = 0.3;
        let g = closed_form_coefficients(&q, &lewy_family(vec![t])).unwrap();
        assert_eq!(g[0][0], c(0.0, t * t));
        assert_eq!(g[1][0], c(0.0, 0.0));
    }

    #[test]
    fn two_modes_satisfy_boundary_identity() {
        let q = QuadricForm::lewy();
        let tau = 0.2;
        let p = lewy_family(vec![tau, tau]);
        let g = closed_form_coefficients(&q, &p).unwrap();
        assert!((g[0][0] - c(0.0, 2.0 * tau * tau)).norm() < 1e-16);
        assert!((g[1][0] - c(0.0, 2.0 * tau * tau)).norm() < 1e-16);
        for k in 0..16 {
            let phi = k as f64 * 0.4;
            let zeta = c(libm::cos(phi), libm::sin(phi));
            let gz = closed_form_g_at(&q, &p, zeta).unwrap();
            let expected = tau * tau * (2.0 + 2.0 * libm::cos(phi));
            assert!((gz[0].im - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_scales_give_base_point() {
        let q = QuadricForm::lewy();
        let p = DiscFamilyParams::new(vec![0.7], vec![c(0.3, 0.0)], vec![vec![c(1.0, 0.0)]], vec![0.0]).unwrap().with_t0(0.0);
        let g = closed_form_coefficients(&q, &p).unwrap();
        assert_eq!(g[0][0], c(0.7, 0.0));
        let (g0, w0) = center_map(&q, &p).unwrap();
        assert_eq!(g0[0], c(0.7, 0.0));
        assert_eq!(w0[0], c(0.0, 0.0));
    }

    #[test]
    fn centre_on_first_axis() {
        let q = QuadricForm::diagonal(&[vec![1.0], vec![0.0]]).unwrap();
        let p = DiscFamilyParams::new(vec![0.1, -0.2], vec![c(1.0, 0.0)], vec![vec![c(1.0, 0.0)]], vec![0.5]).unwrap().with_t0(0.0);
        let (g0, _) = center_map(&q, &p).unwrap();
        assert_eq!(g0, vec![c(0.1, 0.25), c(-0.2, 0.0)]);
    }

    #[test]
    fn derivative_examples() {
        let q = QuadricForm::lewy();
        let tau = 0.3;
        assert_eq!(d_re_g_dt(&q, &lewy_family(vec![tau]), 1, c(0.0, 1.0)).unwrap(), vec![0.0]);
        let p = lewy_family(vec![tau, 0.1]);
        assert!(d_re_g_dt(&q, &p, 2, c(1.0, 0.0)).unwrap()[0].abs() < 1e-16);
        assert!((d_re_g_dt(&q, &p, 2, c(0.0, 1.0)).unwrap()[0] + 2.0 * tau).abs() < 1e-15);
        assert!(d_re_g_dt(&q, &p, 2, c(0.5, 0.0)).is_err());

        let single = |a: Complex64, t: f64| {
            DiscFamilyParams::new(vec![0.0], vec![c(0.0, 0.0)], vec![vec![a]], vec![t]).unwrap()
        };
        assert_eq!(dv0_dt(&q, &single(c(1.0, 0.0), 0.0), 1).unwrap(), vec![0.0]);
        assert!((dv0_dt(&q, &single(c(1.0, 0.0), 0.3), 1).unwrap()[0] - 0.6).abs() < 1e-15);
        assert!((dv0_dt(&q, &single(c(0.0, 2.0), 1.0), 1).unwrap()[0] - 8.0).abs() < 1e-15);
    }
}
