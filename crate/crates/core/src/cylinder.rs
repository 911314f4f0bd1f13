//! Cylinders `P_{r,E}(a) = {(n,1)exp(tZ) : n ∈ E, t ∈ U_r(a)}` with
//! `U_r(a) = (log a − log r, log a + log r)`, and the admissible-cylinder
//! calculus built on a cube system.
//!
//! A cylinder stores the endpoints of `U_r(a)` rather than `(r, a)`: sons,
//! parents and their complements then share endpoints exactly, so measures of
//! unions and intersections along the dyadic tree stay exact.

use std::f64::consts::{E, SQRT_2};
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::cubes::{sample_ball, CubeRelation, CubeSystem, DyadicCube};
use crate::error::{Error, Result};
use crate::group::{BasePoint, GroupPoint, GroupSpec, VerticalField};
use crate::measure::FlowMeasure;

/// Slack, in log space, for the inclusive admissibility inequalities.
pub const ADMISSIBILITY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityParams {
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for AdmissibilityParams {
    fn default() -> Self {
        AdmissibilityParams {
            gamma: 5.0,
            lambda: 2.1 * E.powi(3),
        }
    }
}

impl AdmissibilityParams {
    pub fn validate(&self, delta: f64) -> Result<()> {
        if !(self.gamma >= 5.0) {
            return Err(Error::InvalidParameter(format!("γ must be ≥ 5, got {}", self.gamma)));
        }
        if !(self.lambda * delta > E.powi(3)) {
            return Err(Error::InvalidParameter(format!(
                "λ must exceed e³/δ = {}, got {}",
                E.powi(3) / delta,
                self.lambda
            )));
        }
        Ok(())
    }

    /// `C₂ = 3·max{γ + 1 + log λ, λe³}`.
    pub fn c2(&self) -> f64 {
        3.0 * (self.gamma + 1.0 + self.lambda.ln()).max(self.lambda * E.powi(3))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Admissibility {
    Large,
    Small,
    NotAdmissible,
}

impl Admissibility {
    pub fn is_admissible(self) -> bool {
        self != Admissibility::NotAdmissible
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMap {
    /// `E ↦ ψ_s(E)`.
    Psi(f64),
    /// `E ↦ mE`.
    LeftTranslate(BasePoint),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseSet {
    Cube(DyadicCube),
    Ball { center: BasePoint, radius: f64 },
    /// Image of a base set; membership is decided on the preimage.
    Image { base: Box<BaseSet>, map: BaseMap },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    /// `log a − log r`.
    pub lo: f64,
    /// `log a + log r`.
    pub hi: f64,
    pub base: BaseSet,
}

impl Cylinder {
    pub fn new(r: f64, base: BaseSet, a: f64) -> Result<Self> {
        if !(r > 1.0) || !r.is_finite() {
            return Err(Error::InvalidParameter(format!("cylinder radius must exceed 1, got {r}")));
        }
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidParameter(format!("cylinder anchor must be positive, got {a}")));
        }
        Ok(Self::from_logs(r.ln(), a.ln(), base))
    }

    pub fn from_logs(log_r: f64, log_a: f64, base: BaseSet) -> Self {
        Cylinder {
            lo: log_a - log_r,
            hi: log_a + log_r,
            base,
        }
    }

    pub fn from_interval(lo: f64, hi: f64, base: BaseSet) -> Self {
        Cylinder { lo, hi, base }
    }

    pub fn log_r(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn log_a(&self) -> f64 {
        0.5 * (self.hi + self.lo)
    }

    pub fn r(&self) -> f64 {
        self.log_r().exp()
    }

    pub fn a(&self) -> f64 {
        self.log_a().exp()
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn cube(&self) -> Option<&DyadicCube> {
        match &self.base {
            BaseSet::Cube(q) => Some(q),
            _ => None,
        }
    }

    pub fn with_base(&self, base: BaseSet) -> Self {
        Cylinder {
            lo: self.lo,
            hi: self.hi,
            base,
        }
    }

    /// `t ∈ U_r(a)`, open at both ends.
    pub fn interval_contains(&self, t: f64) -> bool {
        self.lo < t && t < self.hi
    }

    /// `|U₁ ∩ U₂|`.
    pub fn interval_overlap(&self, other: &Cylinder) -> f64 {
        (self.hi.min(other.hi) - self.lo.max(other.lo)).max(0.0)
    }
}

/// The three ascent candidates of a large admissible cylinder.
#[derive(Clone, Debug, PartialEq)]
pub struct Parents {
    pub down: Cylinder,
    pub up: Cylinder,
    pub lr: Cylinder,
}

/// A group, vertical field, flow measure, cube system and admissibility
/// constants: everything the cylinder calculus needs.
#[derive(Clone, Debug)]
pub struct FlowSpace {
    pub spec: GroupSpec,
    pub z: VerticalField,
    pub cubes: Arc<dyn CubeSystem>,
    pub adm: AdmissibilityParams,
}

/// Result of sampling a cylinder against a ball around its center point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallCheck {
    pub max_ratio: f64,
    pub holds: bool,
}

impl FlowSpace {
    pub fn new(cubes: Arc<dyn CubeSystem>, adm: AdmissibilityParams) -> Result<Self> {
        adm.validate(cubes.params().delta)?;
        let m = cubes.measure();
        Ok(FlowSpace {
            spec: m.spec,
            z: m.z.clone(),
            cubes,
            adm,
        })
    }

    pub fn measure(&self) -> &FlowMeasure {
        self.cubes.measure()
    }

    pub fn delta(&self) -> f64 {
        self.cubes.params().delta
    }

    pub fn c1(&self) -> f64 {
        self.cubes.params().c1
    }

    pub fn c2(&self) -> f64 {
        self.adm.c2()
    }

    /// `C* = C₁ + √2`.
    pub fn c_star(&self) -> f64 {
        self.c1() + SQRT_2
    }

    pub fn cylinder(&self, r: f64, q: DyadicCube, a: f64) -> Result<Cylinder> {
        Cylinder::new(r, BaseSet::Cube(q), a)
    }

    /// `(n,1)·exp(tZ)`.
    pub fn flow_point(&self, n: &BasePoint, t: f64) -> GroupPoint {
        self.spec.from_flow_coordinates(n, t, &self.z)
    }

    /// `(n_Q,1)·exp(log a·Z)`.
    pub fn center_point(&self, p: &Cylinder) -> Result<GroupPoint> {
        let q = p.cube().ok_or(Error::NotAdmissible)?;
        Ok(self.flow_point(&q.center, p.log_a()))
    }

    pub fn base_contains(&self, base: &BaseSet, n: &BasePoint) -> bool {
        match base {
            BaseSet::Cube(q) => self.cubes.contains(q, n),
            BaseSet::Ball { center, radius } => self.spec.dist_n(center, n) < *radius,
            BaseSet::Image { base, map } => {
                let pre = match map {
                    BaseMap::Psi(s) => self.spec.psi(-s, n, &self.z),
                    BaseMap::LeftTranslate(m) => self.spec.base_mul(&self.spec.base_inv(m), n),
                };
                self.base_contains(base, &pre)
            }
        }
    }

    pub fn contains_flow(&self, p: &Cylinder, n: &BasePoint, t: f64) -> bool {
        p.interval_contains(t) && self.base_contains(&p.base, n)
    }

    pub fn contains(&self, p: &Cylinder, x: &GroupPoint) -> bool {
        if self.spec.check_point(x).is_err() {
            return false;
        }
        let (n, t) = self.spec.flow_coordinates(x, &self.z);
        self.contains_flow(p, &n, t)
    }

    /// `P·exp(sZ) = P_{r,E}(aeˢ)`.
    pub fn translate_right(&self, p: &Cylinder, s: f64) -> Cylinder {
        Cylinder::from_interval(p.lo + s, p.hi + s, p.base.clone())
    }

    /// `exp(sZ)·P = P_{r,ψ_s(E)}(aeˢ)`.
    pub fn translate_left_exp(&self, p: &Cylinder, s: f64) -> Cylinder {
        let base = if s == 0.0 {
            p.base.clone()
        } else {
            BaseSet::Image {
                base: Box::new(p.base.clone()),
                map: BaseMap::Psi(s),
            }
        };
        Cylinder::from_interval(p.lo + s, p.hi + s, base)
    }

    /// `(m,1)·P = P_{r,mE}(a)`.
    pub fn translate_left_base(&self, p: &Cylinder, m: &BasePoint) -> Cylinder {
        p.with_base(BaseSet::Image {
            base: Box::new(p.base.clone()),
            map: BaseMap::LeftTranslate(m.clone()),
        })
    }

    /// Exact intersection test for cylinders over cubes of this system.
    pub fn intersects(&self, p1: &Cylinder, p2: &Cylinder) -> Result<bool> {
        let (q1, q2) = match (p1.cube(), p2.cube()) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::IncomparableBases),
        };
        // Intervals meeting only at an endpoint up to rounding do not intersect.
        let scale = 1f64.max(p1.lo.abs()).max(p1.hi.abs()).max(p2.lo.abs()).max(p2.hi.abs());
        if p1.interval_overlap(p2) <= ADMISSIBILITY_TOL * scale {
            return Ok(false);
        }
        Ok(self.cubes.relation(q1, q2)? != CubeRelation::Disjoint)
    }

    /// `µ(P₁ ∩ P₂) = µ_N(Q₁ ∩ Q₂)·|U₁ ∩ U₂|`.
    pub fn overlap(&self, p1: &Cylinder, p2: &Cylinder) -> Result<f64> {
        let (q1, q2) = match (p1.cube(), p2.cube()) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::IncomparableBases),
        };
        let len = p1.interval_overlap(p2);
        if len <= 0.0 {
            return Ok(0.0);
        }
        Ok(self.cubes.overlap_mu(q1, q2)? * len)
    }

    /// `µ_N(E)`.
    pub fn base_measure(&self, base: &BaseSet) -> Result<f64> {
        match base {
            BaseSet::Cube(q) => self.cubes.mu(q),
            BaseSet::Ball { center, radius } => self.measure().mu_n_ball(center, *radius),
            BaseSet::Image { base, map } => {
                if !self.measure().is_uniform() {
                    return Err(Error::Unmeasurable("image sets under a weighted measure".into()));
                }
                let inner = self.base_measure(base)?;
                Ok(match map {
                    // ψ_s is a conjugation after D_{eˢ}; Haar scales by e^{sM}.
                    BaseMap::Psi(s) => inner * (s * self.spec.homogeneous_dimension() as f64).exp(),
                    BaseMap::LeftTranslate(_) => inner,
                })
            }
        }
    }

    /// `µ(P_{r,E}(a)) = 2µ_N(E)·log r`.
    pub fn cylinder_measure(&self, p: &Cylinder) -> Result<f64> {
        Ok(self.base_measure(&p.base)? * p.width())
    }

    pub fn classify(&self, p: &Cylinder) -> Admissibility {
        let q = match p.cube() {
            Some(q) => q,
            None => return Admissibility::NotAdmissible,
        };
        let log_dk = q.generation as f64 * self.delta().ln();
        let (log_r, log_a) = (p.log_r(), p.log_a());
        if !(log_r > 0.0) {
            return Admissibility::NotAdmissible;
        }
        let within = |lo: f64, hi: f64| lo <= log_dk + ADMISSIBILITY_TOL && log_dk <= hi + ADMISSIBILITY_TOL;
        if log_r > 1.0 {
            let lo = log_a + 2.0 * log_r;
            let hi = self.adm.lambda.ln() + log_a + self.adm.gamma * log_r;
            if within(lo, hi) {
                return Admissibility::Large;
            }
        } else {
            let lo = log_a + 2.0 + log_r.ln();
            let hi = self.adm.lambda.ln() + lo;
            if within(lo, hi) {
                return Admissibility::Small;
            }
        }
        Admissibility::NotAdmissible
    }

    /// The admissible `(log r, log a)` range over a generation-`k` cube:
    /// for large cylinders `log a ∈ [kℓ − log λ − γ log r, kℓ − 2 log r]`,
    /// for small ones `log a ∈ [kℓ − log λ − 2 − log log r, kℓ − 2 − log log r]`,
    /// with `ℓ = log δ`.
    pub fn admissible_log_a(&self, k: i32, log_r: f64) -> Option<(f64, f64)> {
        let log_dk = k as f64 * self.delta().ln();
        let ll = self.adm.lambda.ln();
        if log_r > 1.0 {
            Some((log_dk - ll - self.adm.gamma * log_r, log_dk - 2.0 * log_r))
        } else if log_r > 0.0 {
            let hi = log_dk - 2.0 - log_r.ln();
            Some((hi - ll, hi))
        } else {
            None
        }
    }

    /// A random admissible cylinder over the generation-`k` cube containing
    /// `n`: large or small with equal odds, `log r` uniform in `(1, max_log_r]`
    /// or `(0, 1]`, `log a` uniform in the admissible range.
    pub fn random_admissible(&self, n: &BasePoint, k: i32, max_log_r: f64, rng: &mut dyn RngCore) -> Result<Cylinder> {
        if !(max_log_r > 1.0) {
            return Err(Error::InvalidParameter(format!("max log r must exceed 1, got {max_log_r}")));
        }
        let q = self.cubes.cube_at(n, k)?;
        let log_r = if rng.gen_bool(0.5) {
            1.0 + (max_log_r - 1.0) * (1.0 - rng.gen::<f64>())
        } else {
            1.0 - rng.gen::<f64>()
        };
        let (lo, hi) = self.admissible_log_a(k, log_r).expect("log r is positive");
        let log_a = rng.gen_range(lo..=hi);
        Ok(Cylinder::from_logs(log_r, log_a, BaseSet::Cube(q)))
    }

    /// `(P^∨, P^∧)`: the lower and upper halves of `U_r(a)` over the same base.
    pub fn vertical_halves(&self, p: &Cylinder) -> (Cylinder, Cylinder) {
        let mid = p.log_a();
        (
            Cylinder::from_interval(p.lo, mid, p.base.clone()),
            Cylinder::from_interval(mid, p.hi, p.base.clone()),
        )
    }

    /// Sons: the two vertical halves when both are admissible, otherwise the
    /// cylinders over the child cubes.
    pub fn sons(&self, p: &Cylinder) -> Result<Vec<Cylinder>> {
        if !self.classify(p).is_admissible() {
            return Err(Error::NotAdmissible);
        }
        let (v, w) = self.vertical_halves(p);
        if self.classify(&v).is_admissible() && self.classify(&w).is_admissible() {
            return Ok(vec![v, w]);
        }
        let q = p.cube().expect("admissible cylinders have cube bases");
        Ok(self
            .cubes
            .children(q)?
            .into_iter()
            .map(|c| p.with_base(BaseSet::Cube(c)))
            .collect())
    }

    /// True when the sons of `P` are its vertical halves.
    pub fn splits_vertically(&self, p: &Cylinder) -> bool {
        let (v, w) = self.vertical_halves(p);
        self.classify(&v).is_admissible() && self.classify(&w).is_admissible()
    }

    /// `p↓ = P_{r³,Q}(a/r²)`, `p↑ = P_{r²,Q}(ar)`, `p↔ = P_{r,p_N(Q)}(a)`.
    pub fn parents(&self, p: &Cylinder) -> Result<Parents> {
        if self.classify(p) != Admissibility::Large {
            return Err(Error::NotLargeAdmissible);
        }
        let q = p.cube().expect("admissible cylinders have cube bases");
        let w = p.width();
        Ok(Parents {
            down: Cylinder::from_interval(p.lo - 2.0 * w, p.hi, p.base.clone()),
            up: Cylinder::from_interval(p.lo, p.hi + w, p.base.clone()),
            lr: p.with_base(BaseSet::Cube(self.cubes.parent(q)?)),
        })
    }

    /// `p↓(P) ∖ P = P_{r²,Q}(a/r³)`.
    pub fn down_complement(&self, p: &Cylinder) -> Cylinder {
        Cylinder::from_interval(p.lo - 2.0 * p.width(), p.lo, p.base.clone())
    }

    /// `p↑(P) ∖ P = P_{r,Q}(ar²)`.
    pub fn up_complement(&self, p: &Cylinder) -> Cylinder {
        Cylinder::from_interval(p.hi, p.hi + p.width(), p.base.clone())
    }

    /// Whether `p↔(P)` is the admissible ascent, i.e. `δᵏ ≤ δλarᵞ`.
    pub fn lateral_ascent_allowed(&self, p: &Cylinder) -> Result<bool> {
        if self.classify(p) != Admissibility::Large {
            return Err(Error::NotLargeAdmissible);
        }
        let q = p.cube().expect("admissible cylinders have cube bases");
        let log_dk = q.generation as f64 * self.delta().ln();
        let bound = self.delta().ln() + self.adm.lambda.ln() + p.log_a() + self.adm.gamma * p.log_r();
        Ok(log_dk <= bound + ADMISSIBILITY_TOL)
    }

    /// `P^C = P_{r^C,Q}(a)`.
    pub fn envelope(&self, p: &Cylinder, c: f64) -> Result<Cylinder> {
        if !(c >= 1.0) {
            return Err(Error::InvalidParameter(format!("envelope factor must be ≥ 1, got {c}")));
        }
        if c == 1.0 {
            return Ok(p.clone());
        }
        let (la, lr) = (p.log_a(), p.log_r());
        Ok(Cylinder::from_interval(la - c * lr, la + c * lr, p.base.clone()))
    }

    /// `P_{r², B_N(n_Q, C*δᵏ)}(a)`, which contains `{x : d_Z(x,P) < log r}`.
    pub fn enlargement_star(&self, p: &Cylinder) -> Result<Cylinder> {
        if !self.classify(p).is_admissible() {
            return Err(Error::NotAdmissible);
        }
        let q = p.cube().expect("admissible cylinders have cube bases");
        let radius = self.c_star() * self.delta().powi(q.generation);
        let (la, lr) = (p.log_a(), p.log_r());
        Ok(Cylinder::from_interval(
            la - 2.0 * lr,
            la + 2.0 * lr,
            BaseSet::Ball {
                center: q.center.clone(),
                radius,
            },
        ))
    }

    /// `C₄ = 2D(µ_N, C*/c)` for a given doubling constant at ratio `C*/c`.
    pub fn c4(&self, doubling_constant: f64) -> f64 {
        2.0 * doubling_constant
    }

    /// `C*/c`, the doubling ratio entering `C₄`.
    pub fn c4_ratio(&self) -> f64 {
        self.c_star() / self.cubes.params().c
    }

    pub fn sample_base(&self, base: &BaseSet, rng: &mut dyn RngCore) -> Result<BasePoint> {
        match base {
            BaseSet::Cube(q) => self.cubes.sample(q, rng),
            BaseSet::Ball { center, radius } => Ok(sample_ball(self.spec, center, *radius, rng)),
            BaseSet::Image { base, map } => {
                let n = self.sample_base(base, rng)?;
                Ok(match map {
                    BaseMap::Psi(s) => self.spec.psi(*s, &n, &self.z),
                    BaseMap::LeftTranslate(m) => self.spec.base_mul(m, &n),
                })
            }
        }
    }

    /// A point of `P` in flow coordinates, uniform for the Haar flow measure.
    pub fn sample_flow(&self, p: &Cylinder, rng: &mut dyn RngCore) -> Result<(BasePoint, f64)> {
        let n = self.sample_base(&p.base, rng)?;
        let mut t = rng.gen_range(p.lo..p.hi);
        while t == p.lo {
            t = rng.gen_range(p.lo..p.hi);
        }
        Ok((n, t))
    }

    pub fn sample_point(&self, p: &Cylinder, rng: &mut dyn RngCore) -> Result<GroupPoint> {
        let (n, t) = self.sample_flow(p, rng)?;
        Ok(self.flow_point(&n, t))
    }

    /// A point `x` with `d_Z(x, y) < log r` for some `y ∈ P`, returned as
    /// `(x, y)`. Every point of `P*` arises this way.
    pub fn sample_star(&self, p: &Cylinder, rng: &mut dyn RngCore) -> Result<(GroupPoint, GroupPoint)> {
        let lr = p.log_r();
        let (m, s) = self.sample_flow(p, rng)?;
        let u = rng.gen_range(-lr..lr);
        let gap = 2.0 * (2.0 * s + u).exp() * (lr.cosh() - u.cosh());
        let rho = gap.max(0.0).sqrt();
        let n = if rho > 0.0 {
            sample_ball(self.spec, &m, rho, rng)
        } else {
            m.clone()
        };
        Ok((self.flow_point(&n, s + u), self.flow_point(&m, s)))
    }

    /// Largest sampled `d_Z(x, (n_Q,1)exp(log a·Z)) / log r` over `x ∈ P`,
    /// compared with `C₃`.
    pub fn ball_check(&self, p: &Cylinder, c3: f64, samples: usize, rng: &mut dyn RngCore) -> Result<BallCheck> {
        let center = self.center_point(p)?;
        let lr = p.log_r();
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let x = self.sample_point(p, rng)?;
            worst = worst.max(self.spec.dist_z(&x, &center, &self.z) / lr);
        }
        Ok(BallCheck {
            max_ratio: worst,
            holds: worst <= c3,
        })
    }

    /// Factor `x = (n₁w, 1)·exp(sZ)`, with `n₁ ∈ E₁` and `w ∈ Ψ_{r₁,a₁}(E₂)`,
    /// as `x₁x₂` with `xᵢ ∈ Pᵢ`.
    pub fn product_witness(
        &self,
        p1: &Cylinder,
        p2: &Cylinder,
        n1: &BasePoint,
        w: &BasePoint,
        s: f64,
    ) -> Result<(GroupPoint, GroupPoint)> {
        let lo = p1.lo.max(s - p2.hi);
        let hi = p1.hi.min(s - p2.lo);
        if !(lo < hi) {
            return Err(Error::InvalidParameter("flow time outside U_{r₁r₂}(a₁a₂)".into()));
        }
        let t = 0.5 * (lo + hi);
        let x1 = self.flow_point(n1, t);
        let x2 = self.flow_point(&self.spec.psi(-t, w, &self.z), s - t);
        Ok((x1, x2))
    }
}
