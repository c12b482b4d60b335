//! Truncated open cones `{t : angle(t, axis) < half_angle, 0 < |t| < scale_max}`.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConeRegion {
    axis: Vec<f64>,
    half_angle: f64,
    scale_max: f64,
}

impl ConeRegion {
    pub fn new(axis: Vec<f64>, half_angle: f64, scale_max: f64) -> Result<Self> {
        let norm = norm(&axis);
        if axis.is_empty() || !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidParameter("cone axis must be a nonzero vector".into()));
        }
        if !(half_angle > 0.0 && half_angle < core::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidParameter("cone half-angle must lie in (0, pi/2)".into()));
        }
        if !(scale_max > 0.0) {
            return Err(Error::InvalidParameter("cone scale must be positive".into()));
        }
        Ok(Self {
            axis: axis.iter().map(|a| a / norm).collect(),
            half_angle,
            scale_max,
        })
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn half_angle(&self) -> f64 {
        self.half_angle
    }

    pub fn scale_max(&self) -> f64 {
        self.scale_max
    }

    pub fn dimension(&self) -> usize {
        self.axis.len()
    }

    pub fn with_scale(&self, scale_max: f64) -> Result<Self> {
        Self::new(self.axis.clone(), self.half_angle, scale_max)
    }

    pub fn with_half_angle(&self, half_angle: f64) -> Result<Self> {
        Self::new(self.axis.clone(), half_angle, self.scale_max)
    }

    pub fn contains(&self, t: &[f64]) -> bool {
        if t.len() != self.axis.len() {
            return false;
        }
        let r = norm(t);
        if !(r > 0.0 && r < self.scale_max) {
            return false;
        }
        angle_between(t, &self.axis) < self.half_angle
    }

    /// Unit vector at the given angle from the axis, rotated towards `towards`
    /// (any vector not parallel to the axis).
    pub fn ray_at_angle(&self, angle: f64, towards: &[f64]) -> Vec<f64> {
        let proj = dot(towards, &self.axis);
        let mut perp: Vec<f64> = towards.iter().zip(&self.axis).map(|(v, a)| v - proj * a).collect();
        let pn = norm(&perp);
        if pn < 1e-14 {
            return self.axis.clone();
        }
        for p in &mut perp {
            *p /= pn;
        }
        self.axis
            .iter()
            .zip(&perp)
            .map(|(a, p)| libm::cos(angle) * a + libm::sin(angle) * p)
            .collect()
    }

    /// Random unit direction strictly inside the cone.
    pub fn sample_ray<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        if self.axis.len() == 1 {
            return self.axis.clone();
        }
        let towards: Vec<f64> = (0..self.axis.len()).map(|_| StandardNormal.sample(rng)).collect();
        let angle = self.half_angle * rng.random_range(0.0..1.0);
        self.ray_at_angle(angle, &towards)
    }

    /// Random point of the truncated cone with `|t|` in
    /// `[min_fraction, max_fraction] * scale_max`.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R, min_fraction: f64, max_fraction: f64) -> Vec<f64> {
        let ray = self.sample_ray(rng);
        let s = self.scale_max * rng.random_range(min_fraction..max_fraction);
        ray.into_iter().map(|r| r * s).collect()
    }

    /// Directions on the cone's boundary used as probes. In dimension one the
    /// only probe is the axis.
    pub fn boundary_probes<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<Vec<f64>> {
        boundary_probes(&self.axis, self.half_angle, rng, count)
    }
}

pub(crate) fn boundary_probes<R: Rng + ?Sized>(
    axis: &[f64],
    half_angle: f64,
    rng: &mut R,
    count: usize,
) -> Vec<Vec<f64>> {
    let dim = axis.len();
    if dim == 1 {
        return alloc::vec![axis.to_vec()];
    }
    let cone = ConeRegion {
        axis: axis.to_vec(),
        half_angle,
        scale_max: 1.0,
    };
    if dim == 2 {
        let perp = [-axis[1], axis[0]];
        let neg = [axis[1], -axis[0]];
        return alloc::vec![cone.ray_at_angle(half_angle, &perp), cone.ray_at_angle(half_angle, &neg)];
    }
    (0..count)
        .map(|_| {
            let towards: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            cone.ray_at_angle(half_angle, &towards)
        })
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub(crate) fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let c = dot(a, b) / (norm(a) * norm(b));
    libm::acos(c.clamp(-1.0, 1.0))
}
