//! Z-flow measures `dµ = φ dρ` whose density is constant along the flow, and
//! the induced base measure `µ_N(F) = ∫_F φ(n,1) dn`.
//!
//! In flow coordinates `(n, t)` such a measure is the product `µ_N × dt`,
//! which is what makes cylinder measures exact.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{BasePoint, GroupPoint, GroupSpec, VerticalField};

/// Default relative tolerance for quadrature-based base measures.
pub const DEFAULT_REL_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Density {
    /// `φ ≡ 1`, the right Haar measure.
    Uniform,
    /// `ψ(n) = (1 + |n|²)^{s/2}` on ℝᵐ, lifted along the flow.
    Power { s: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowMeasure {
    pub spec: GroupSpec,
    pub z: VerticalField,
    pub density: Density,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

fn default_rel_tol() -> f64 {
    DEFAULT_REL_TOL
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingData {
    pub ratio: f64,
    pub constant: f64,
    pub window: f64,
}

impl FlowMeasure {
    pub fn haar(spec: GroupSpec, z: VerticalField) -> Result<Self> {
        Self::new(spec, z, Density::Uniform)
    }

    pub fn new(spec: GroupSpec, z: VerticalField, density: Density) -> Result<Self> {
        spec.check_field(&z)?;
        if let Density::Power { s } = density {
            match spec {
                GroupSpec::Heisenberg => {
                    return Err(Error::InvalidParameter(
                        "power weights are only available on abelian bases".into(),
                    ))
                }
                GroupSpec::Abelian { m } => {
                    if !(s > -(m as f64)) || !s.is_finite() {
                        return Err(Error::InvalidParameter(format!(
                            "power weight exponent must exceed -{m}, got {s}"
                        )));
                    }
                    if m > 3 {
                        return Err(Error::InvalidParameter(
                            "power weights are integrated for m ≤ 3 only".into(),
                        ));
                    }
                }
            }
        }
        Ok(FlowMeasure {
            spec,
            z,
            density,
            rel_tol: DEFAULT_REL_TOL,
        })
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.density, Density::Uniform)
    }

    /// `ψ(n) = φ(n, 1)`.
    pub fn base_density(&self, n: &BasePoint) -> f64 {
        match self.density {
            Density::Uniform => 1.0,
            Density::Power { s } => {
                let r2: f64 = n.0.iter().map(|v| v * v).sum();
                (1.0 + r2).powf(0.5 * s)
            }
        }
    }

    /// `φ(n, a) = ψ(n·n(log a)⁻¹)`.
    pub fn density_at(&self, x: &GroupPoint) -> f64 {
        match self.density {
            Density::Uniform => 1.0,
            Density::Power { .. } => {
                let (n, _) = self.spec.flow_coordinates(x, &self.z);
                self.base_density(&n)
            }
        }
    }

    /// `µ_N(B_N(center, radius))`.
    pub fn mu_n_ball(&self, center: &BasePoint, radius: f64) -> Result<f64> {
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
        }
        self.spec.check_base(center)?;
        match (self.density, self.spec) {
            (Density::Uniform, GroupSpec::Abelian { m }) => Ok(unit_ball_volume(m) * radius.powi(m as i32)),
            (Density::Uniform, GroupSpec::Heisenberg) => Ok(KORANYI_BALL_VOLUME * radius.powi(4)),
            (Density::Power { .. }, GroupSpec::Abelian { .. }) => {
                self.integrate_ball(center.as_slice(), radius)
            }
            (Density::Power { .. }, GroupSpec::Heisenberg) => unreachable!(),
        }
    }

    /// `µ_N` of the axis-parallel box `∏ [lo_i, hi_i)` on an abelian base.
    pub fn mu_n_box(&self, lo: &[f64], hi: &[f64]) -> Result<f64> {
        let m = match self.spec {
            GroupSpec::Abelian { m } => m,
            GroupSpec::Heisenberg => {
                return Err(Error::Unmeasurable("boxes are measured on abelian bases only".into()))
            }
        };
        if lo.len() != m || hi.len() != m {
            return Err(Error::DimensionMismatch { expected: m, found: lo.len().min(hi.len()) });
        }
        if lo.iter().zip(hi).any(|(a, b)| b <= a) {
            return Ok(0.0);
        }
        match self.density {
            Density::Uniform => Ok(lo.iter().zip(hi).map(|(a, b)| b - a).product()),
            Density::Power { s } => {
                let scale = box_density_scale(lo, hi, s);
                let vol: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
                let tol = self.rel_tol * vol * scale;
                let v = nested(0, lo, hi, &[], tol, &|p: &[f64]| {
                    (1.0 + p.iter().map(|v| v * v).sum::<f64>()).powf(0.5 * s)
                });
                finite(v)
            }
        }
    }

    fn integrate_ball(&self, c: &[f64], radius: f64) -> Result<f64> {
        let s = match self.density {
            Density::Power { s } => s,
            Density::Uniform => unreachable!(),
        };
        let m = c.len();
        let lo: Vec<f64> = c.iter().map(|v| v - radius).collect();
        let hi: Vec<f64> = c.iter().map(|v| v + radius).collect();
        let scale = box_density_scale(&lo, &hi, s);
        let tol = self.rel_tol * unit_ball_volume(m) * radius.powi(m as i32) * scale;
        // Integrate over the ball by clipping each inner range to the chord.
        let v = ball_nested(0, c, radius * radius, &[], tol, s);
        finite(v)
    }

    /// Empirical sup over sampled `(x, r)` of `µ_N(B(x, C r)) / µ_N(B(x, r))`
    /// with `|x| ≤ window` and `r ∈ [window·10⁻³, window]`.
    pub fn estimate_doubling(&self, ratio: f64, window: f64, samples: usize, seed: u64) -> Result<DoublingData> {
        if !(ratio >= 1.0) {
            return Err(Error::InvalidParameter(format!("doubling ratio must be ≥ 1, got {ratio}")));
        }
        if !(window > 0.0) || !window.is_finite() {
            return Err(Error::InvalidParameter("degenerate doubling window".into()));
        }
        if samples == 0 {
            return Err(Error::InvalidParameter("at least one sample is required".into()));
        }
        let mut constant: f64 = 1.0;
        if ratio > 1.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = self.spec.base_dim();
            for _ in 0..samples {
                let x = BasePoint::from(
                    (0..dim).map(|_| rng.gen_range(-window..window)).collect::<Vec<_>>(),
                );
                let r = window * 10f64.powf(rng.gen_range(-3.0..0.0));
                let q = self.mu_n_ball(&x, ratio * r)? / self.mu_n_ball(&x, r)?;
                constant = constant.max(q);
            }
        }
        Ok(DoublingData {
            ratio,
            constant,
            window,
        })
    }
}

/// Haar volume of the Korányi unit ball, `2π²`.
pub const KORANYI_BALL_VOLUME: f64 = 2.0 * PI * PI;

/// Lebesgue volume of the Euclidean unit ball in ℝᵐ.
pub fn unit_ball_volume(m: usize) -> f64 {
    let h = 0.5 * m as f64;
    PI.powf(h) / gamma_half_int(m + 2)
}

/// `Γ(k/2)` for a positive integer `k`.
fn gamma_half_int(k: usize) -> f64 {
    let mut g = if k % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut x = if k % 2 == 0 { 1.0 } else { 0.5 };
    while x < 0.5 * k as f64 - 1e-9 {
        g *= x;
        x += 1.0;
    }
    g
}

fn box_density_scale(lo: &[f64], hi: &[f64], s: f64) -> f64 {
    let far: f64 = lo.iter().zip(hi).map(|(a, b)| a.abs().max(b.abs()).powi(2)).sum();
    let near: f64 = lo
        .iter()
        .zip(hi)
        .map(|(a, b)| if a * b <= 0.0 { 0.0 } else { a.abs().min(b.abs()).powi(2) })
        .sum();
    (1.0 + near).powf(0.5 * s).min((1.0 + far).powf(0.5 * s))
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Quadrature("non-finite integral".into()))
    }
}

fn nested(axis: usize, lo: &[f64], hi: &[f64], prefix: &[f64], tol: f64, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let inner_tol = tol / (hi[axis] - lo[axis]).max(1e-300);
    quadrature::integrate(
        |x| {
            let mut p = prefix.to_vec();
            p.push(x);
            if axis + 1 == lo.len() {
                f(&p)
            } else {
                nested(axis + 1, lo, hi, &p, inner_tol, f)
            }
        },
        lo[axis],
        hi[axis],
        tol,
    )
    .integral
}

fn ball_nested(axis: usize, c: &[f64], rem2: f64, prefix: &[f64], tol: f64, s: f64) -> f64 {
    if rem2 <= 0.0 {
        return 0.0;
    }
    let h = rem2.sqrt();
    let inner_tol = tol / (2.0 * h);
    quadrature::integrate(
        |x| {
            let mut p = prefix.to_vec();
            p.push(x);
            if axis + 1 == c.len() {
                (1.0 + p.iter().map(|v| v * v).sum::<f64>()).powf(0.5 * s)
            } else {
                let d = x - c[axis];
                ball_nested(axis + 1, c, rem2 - d * d, &p, inner_tol, s)
            }
        },
        c[axis] - h,
        c[axis] + h,
        tol,
    )
    .integral
}
