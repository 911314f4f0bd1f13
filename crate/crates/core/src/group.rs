//! Group arithmetic on `G = N ⋊ ℝ₊` for the two concrete bases `N = ℝᵐ` and
//! `N = ℍ¹`, together with the vertical flows `exp(tZ)` and the distances
//! `d_N`, `d_G` and `d_Z`.
//!
//! Heisenberg coordinates are `(q, p, τ)` with the law
//! `(q,p,τ)(q',p',τ') = (q+q', p+p', τ+τ' − ½(qp' − pq'))`, and the dilations
//! act as `D_a(q,p,τ) = (aq, ap, a²τ)`. On ℍ¹, `d_N` is the left-invariant
//! Korányi distance `‖(q,p,τ)‖⁴ = (q²+p²)²/16 + τ²`.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Coordinates of a point of `N` (length `m` on ℝᵐ, `(q, p, τ)` on ℍ¹).
pub type Coords = SmallVec<[f64; 3]>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BasePoint(pub Coords);

impl BasePoint {
    pub fn new(coords: &[f64]) -> Self {
        BasePoint(Coords::from_slice(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        BasePoint(SmallVec::from_elem(0.0, dim))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl From<Vec<f64>> for BasePoint {
    fn from(v: Vec<f64>) -> Self {
        BasePoint(Coords::from_vec(v))
    }
}

/// A point `(n, a)` of `G`, with `a > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupPoint {
    pub n: BasePoint,
    pub a: f64,
}

impl GroupPoint {
    pub fn new(n: BasePoint, a: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "vertical coordinate must be positive, got {a}"
            )));
        }
        Ok(GroupPoint { n, a })
    }
}

/// A left-invariant field `Z = X₀ + Σ βᵢ X₁,ᵢ` with unit vertical component.
///
/// On ℍ¹ the coefficients are ordered `(X_α, X_{α+β})`; `X_α` moves the `p`
/// coordinate and `X_{α+β}` moves `q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerticalField {
    pub beta: Coords,
}

impl VerticalField {
    pub fn new(beta: &[f64]) -> Self {
        VerticalField {
            beta: Coords::from_slice(beta),
        }
    }

    /// The purely vertical field `X₀`.
    pub fn vertical(spec: GroupSpec) -> Self {
        VerticalField {
            beta: SmallVec::from_elem(0.0, spec.field_dim()),
        }
    }

    /// `‖Z‖ = √(1 + |β|²)`.
    pub fn norm(&self) -> f64 {
        (1.0 + self.beta_norm_sq()).sqrt()
    }

    pub fn beta_norm_sq(&self) -> f64 {
        self.beta.iter().map(|b| b * b).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupSpec {
    Abelian { m: usize },
    Heisenberg,
}

impl GroupSpec {
    pub fn abelian(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("abelian dimension must be positive".into()));
        }
        Ok(GroupSpec::Abelian { m })
    }

    /// Number of coordinates of a point of `N`.
    pub fn base_dim(&self) -> usize {
        match *self {
            GroupSpec::Abelian { m } => m,
            GroupSpec::Heisenberg => 3,
        }
    }

    /// Homogeneous dimension `M`.
    pub fn homogeneous_dimension(&self) -> usize {
        match *self {
            GroupSpec::Abelian { m } => m,
            GroupSpec::Heisenberg => 4,
        }
    }

    /// Number of first-layer coefficients of a vertical field.
    pub fn field_dim(&self) -> usize {
        match *self {
            GroupSpec::Abelian { m } => m,
            GroupSpec::Heisenberg => 2,
        }
    }

    pub fn is_heisenberg(&self) -> bool {
        matches!(self, GroupSpec::Heisenberg)
    }

    pub fn check_base(&self, n: &BasePoint) -> Result<()> {
        check_len(self.base_dim(), n.dim())
    }

    pub fn check_point(&self, x: &GroupPoint) -> Result<()> {
        self.check_base(&x.n)?;
        if !(x.a > 0.0) {
            return Err(Error::InvalidParameter("vertical coordinate must be positive".into()));
        }
        Ok(())
    }

    pub fn check_field(&self, z: &VerticalField) -> Result<()> {
        check_len(self.field_dim(), z.beta.len())
    }

    pub fn base_identity(&self) -> BasePoint {
        BasePoint::zeros(self.base_dim())
    }

    pub fn identity(&self) -> GroupPoint {
        GroupPoint {
            n: self.base_identity(),
            a: 1.0,
        }
    }

    /// Product in `N`.
    pub fn base_mul(&self, n: &BasePoint, m: &BasePoint) -> BasePoint {
        let (x, y) = (n.as_slice(), m.as_slice());
        match self {
            GroupSpec::Abelian { .. } => BasePoint(x.iter().zip(y).map(|(u, v)| u + v).collect()),
            GroupSpec::Heisenberg => BasePoint::new(&[
                x[0] + y[0],
                x[1] + y[1],
                x[2] + y[2] - 0.5 * (x[0] * y[1] - x[1] * y[0]),
            ]),
        }
    }

    /// Inverse in `N`; in both instances it is the coordinate negation.
    pub fn base_inv(&self, n: &BasePoint) -> BasePoint {
        BasePoint(n.0.iter().map(|v| -v).collect())
    }

    /// Automorphic dilation `D_a`.
    pub fn dilate(&self, a: f64, n: &BasePoint) -> BasePoint {
        match self {
            GroupSpec::Abelian { .. } => BasePoint(n.0.iter().map(|v| a * v).collect()),
            GroupSpec::Heisenberg => {
                let x = n.as_slice();
                BasePoint::new(&[a * x[0], a * x[1], a * a * x[2]])
            }
        }
    }

    /// Homogeneous norm `d_N(n, 1_N)`.
    pub fn base_norm(&self, n: &BasePoint) -> f64 {
        let x = n.as_slice();
        match self {
            GroupSpec::Abelian { .. } => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            GroupSpec::Heisenberg => koranyi_norm(x[0], x[1], x[2]),
        }
    }

    /// `d_N(n, n') = ‖n⁻¹ n'‖`.
    pub fn dist_n(&self, n: &BasePoint, n2: &BasePoint) -> f64 {
        let (x, y) = (n.as_slice(), n2.as_slice());
        match self {
            GroupSpec::Abelian { .. } => x
                .iter()
                .zip(y)
                .map(|(u, v)| (v - u) * (v - u))
                .sum::<f64>()
                .sqrt(),
            GroupSpec::Heisenberg => koranyi_norm(
                y[0] - x[0],
                y[1] - x[1],
                y[2] - x[2] + 0.5 * (x[0] * y[1] - x[1] * y[0]),
            ),
        }
    }

    pub fn group_mul(&self, x: &GroupPoint, y: &GroupPoint) -> Result<GroupPoint> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok(self.mul(x, y))
    }

    /// Product without dimension checks.
    pub fn mul(&self, x: &GroupPoint, y: &GroupPoint) -> GroupPoint {
        GroupPoint {
            n: self.base_mul(&x.n, &self.dilate(x.a, &y.n)),
            a: x.a * y.a,
        }
    }

    /// `(n, a)⁻¹ = (D_{1/a}(n⁻¹), 1/a)`.
    pub fn group_inv(&self, x: &GroupPoint) -> GroupPoint {
        GroupPoint {
            n: self.dilate(1.0 / x.a, &self.base_inv(&x.n)),
            a: 1.0 / x.a,
        }
    }

    /// The base component `n(t)` of `exp(tZ) = (n(t), eᵗ)`.
    pub fn flow_shift(&self, z: &VerticalField, t: f64) -> BasePoint {
        let s = t.exp_m1();
        match self {
            GroupSpec::Abelian { .. } => BasePoint(z.beta.iter().map(|b| s * b).collect()),
            GroupSpec::Heisenberg => BasePoint::new(&[s * z.beta[1], s * z.beta[0], 0.0]),
        }
    }

    pub fn exp_flow(&self, z: &VerticalField, t: f64) -> GroupPoint {
        GroupPoint {
            n: self.flow_shift(z, t),
            a: t.exp(),
        }
    }

    /// Inverts `x = (n, 1)·exp(tZ)`, returning `(n, t)`.
    pub fn flow_coordinates(&self, x: &GroupPoint, z: &VerticalField) -> (BasePoint, f64) {
        let t = x.a.ln();
        let shift = self.flow_shift(z, t);
        (self.base_mul(&x.n, &self.base_inv(&shift)), t)
    }

    /// `(n, 1)·exp(tZ)`.
    pub fn from_flow_coordinates(&self, n: &BasePoint, t: f64, z: &VerticalField) -> GroupPoint {
        GroupPoint {
            n: self.base_mul(n, &self.flow_shift(z, t)),
            a: t.exp(),
        }
    }

    /// `ψ_t(n) = n(t)·D_{eᵗ}(n)·n(t)⁻¹`.
    pub fn psi(&self, t: f64, n: &BasePoint, z: &VerticalField) -> BasePoint {
        let shift = self.flow_shift(z, t);
        let moved = self.base_mul(&shift, &self.dilate(t.exp(), n));
        self.base_mul(&moved, &self.base_inv(&shift))
    }

    /// `d_G` from `cosh d_G = cosh(log(a/a')) + d_N(n,n')²/(2aa')`.
    pub fn dist_g(&self, x: &GroupPoint, y: &GroupPoint) -> f64 {
        self.dist_flow(&x.n, x.a.ln(), &y.n, y.a.ln())
    }

    /// The Z-flow metric: `d_G` evaluated on the sheared points `(n·n(log a)⁻¹, a)`.
    pub fn dist_z(&self, x: &GroupPoint, y: &GroupPoint, z: &VerticalField) -> f64 {
        let (nx, tx) = self.flow_coordinates(x, z);
        let (ny, ty) = self.flow_coordinates(y, z);
        self.dist_flow(&nx, tx, &ny, ty)
    }

    /// `d_Z` between points given in flow coordinates.
    pub fn dist_flow(&self, nx: &BasePoint, tx: f64, ny: &BasePoint, ty: f64) -> f64 {
        let dn = self.dist_n(nx, ny);
        dist_from_parts(tx - ty, dn, (tx + ty).exp())
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

pub(crate) fn koranyi_norm(q: f64, p: f64, tau: f64) -> f64 {
    let h = q * q + p * p;
    (h * h / 16.0 + tau * tau).sqrt().sqrt()
}

/// `arccosh(cosh(log_ratio) + dn²/(2·prod))`, evaluated through the excess
/// over 1 so that nearby points keep full relative precision.
fn dist_from_parts(log_ratio: f64, dn: f64, prod: f64) -> f64 {
    let sh = (0.5 * log_ratio).sinh();
    acosh_1p(2.0 * sh * sh + dn * dn / (2.0 * prod))
}

/// `arccosh(1 + eps)` for `eps ≥ 0`.
pub fn acosh_1p(eps: f64) -> f64 {
    if eps <= 0.0 {
        return 0.0;
    }
    (eps + (eps * (eps + 2.0)).sqrt()).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::E;

    const H: GroupSpec = GroupSpec::Heisenberg;

    fn pt(n: &[f64], a: f64) -> GroupPoint {
        GroupPoint::new(BasePoint::new(n), a).unwrap()
    }

    fn close(x: &GroupPoint, y: &GroupPoint, tol: f64) -> bool {
        (x.a - y.a).abs() <= tol
            && x.n.0.iter().zip(&y.n.0).all(|(u, v)| (u - v).abs() <= tol)
    }

    fn random_point(spec: GroupSpec, rng: &mut impl Rng) -> GroupPoint {
        let n: Vec<f64> = (0..spec.base_dim()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        pt(&n, rng.gen_range(-2.0f64..2.0).exp())
    }

    #[test]
    fn identity_is_two_sided() {
        let spec = GroupSpec::abelian(2).unwrap();
        let x = pt(&[0.3, -1.2], 2.5);
        assert_eq!(spec.group_mul(&spec.identity(), &x).unwrap(), x);
        assert_eq!(spec.group_mul(&x, &spec.identity()).unwrap(), x);
    }

    #[test]
    fn heisenberg_law_example() {
        let x = pt(&[1.0, 0.0, 0.0], 1.0);
        let y = pt(&[0.0, 1.0, 0.0], 1.0);
        let p = H.group_mul(&x, &y).unwrap();
        assert_eq!(p.n.as_slice(), &[1.0, 1.0, -0.5]);
        assert_eq!(p.a, 1.0);
    }

    #[test]
    fn abelian_semidirect_example() {
        let spec = GroupSpec::abelian(1).unwrap();
        let p = spec.group_mul(&pt(&[0.0], 2.0), &pt(&[1.0], 1.0)).unwrap();
        assert_eq!(p, pt(&[2.0], 2.0));
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let spec = GroupSpec::abelian(2).unwrap();
        let err = spec.group_mul(&pt(&[1.0], 1.0), &pt(&[1.0, 2.0], 1.0)).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 2, found: 1 });
        assert!(GroupPoint::new(BasePoint::new(&[0.0]), 0.0).is_err());
    }

    #[test]
    fn inverse_examples() {
        let spec = GroupSpec::abelian(1).unwrap();
        assert_eq!(spec.group_inv(&spec.identity()), spec.identity());
        assert_eq!(spec.group_inv(&pt(&[2.0], 2.0)), pt(&[-1.0], 0.5));
        assert_eq!(H.group_inv(&pt(&[1.0, -2.0, 3.0], 1.0)), pt(&[-1.0, 2.0, -3.0], 1.0));
    }

    #[test]
    fn inverse_and_associativity_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for spec in [GroupSpec::abelian(3).unwrap(), H] {
            for _ in 0..200 {
                let (x, y, w) = (
                    random_point(spec, &mut rng),
                    random_point(spec, &mut rng),
                    random_point(spec, &mut rng),
                );
                let e = spec.mul(&x, &spec.group_inv(&x));
                assert!(close(&e, &spec.identity(), 1e-12), "{e:?}");
                let l = spec.mul(&spec.mul(&x, &y), &w);
                let r = spec.mul(&x, &spec.mul(&y, &w));
                assert!(close(&l, &r, 1e-9));
            }
        }
    }

    #[test]
    fn dilation_examples() {
        assert_eq!(H.dilate(2.0, &BasePoint::new(&[1.0, 1.0, 1.0])).as_slice(), &[2.0, 2.0, 4.0]);
        let n = BasePoint::new(&[0.7, -0.2, 5.0]);
        assert_eq!(H.dilate(1.0, &n), n);
        let ab = GroupSpec::abelian(2).unwrap();
        assert_eq!(ab.dilate(3.0, &BasePoint::new(&[1.0, -2.0])).as_slice(), &[3.0, -6.0]);
        let composed = H.dilate(2.0, &H.dilate(0.3, &n));
        let direct = H.dilate(0.6, &n);
        for (u, v) in composed.0.iter().zip(&direct.0) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn heisenberg_flow_closed_form() {
        let z = VerticalField::new(&[1.0, 0.0]);
        let x = H.exp_flow(&z, 1.0);
        assert_abs_diff_eq!(x.n.0[0], 0.0);
        assert_abs_diff_eq!(x.n.0[1], E - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x.n.0[2], 0.0);
        assert_abs_diff_eq!(x.a, E, epsilon = 1e-12);
        assert_eq!(H.exp_flow(&z, 0.0), H.identity());
        assert_abs_diff_eq!(z.norm(), 2f64.sqrt());
    }

    #[test]
    fn abelian_flow_shift_is_expm1_beta() {
        let spec = GroupSpec::abelian(2).unwrap();
        let z = VerticalField::new(&[0.5, -2.0]);
        let t: f64 = 0.7;
        let n = spec.flow_shift(&z, t);
        assert_abs_diff_eq!(n.0[0], (t.exp() - 1.0) * 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(n.0[1], (t.exp() - 1.0) * -2.0, epsilon = 1e-14);
    }

    #[test]
    fn flow_is_one_parameter_group() {
        for (spec, z) in [
            (H, VerticalField::new(&[0.8, -1.3])),
            (GroupSpec::abelian(2).unwrap(), VerticalField::new(&[1.0, 2.0])),
        ] {
            for (s, t) in [(0.3, -1.1), (2.0, 0.5), (-1.5, -0.25)] {
                let l = spec.mul(&spec.exp_flow(&z, s), &spec.exp_flow(&z, t));
                assert!(close(&l, &spec.exp_flow(&z, s + t), 1e-10));
            }
        }
    }

    #[test]
    fn flow_coordinates_examples() {
        let z = VerticalField::new(&[1.0, 0.0]);
        let (n, t) = H.flow_coordinates(&H.identity(), &z);
        assert_eq!((n, t), (H.base_identity(), 0.0));
        let (n, t) = H.flow_coordinates(&pt(&[0.0, E - 1.0, 0.0], E), &z);
        assert!(n.0.iter().all(|v| v.abs() < 1e-12));
        assert_abs_diff_eq!(t, 1.0, epsilon = 1e-12);
        let x0 = VerticalField::vertical(H);
        let (n, t) = H.flow_coordinates(&pt(&[1.0, 2.0, 3.0], 4.0), &x0);
        assert_eq!(n.as_slice(), &[1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(t, 4f64.ln());
    }

    #[test]
    fn psi_matches_heisenberg_closed_form() {
        let z = VerticalField::new(&[1.0, 0.0]);
        let n = BasePoint::new(&[0.4, -1.7, 2.2]);
        assert_eq!(H.psi(0.0, &n, &z), n);
        for t in [-1.3f64, 0.2, 1.1] {
            let e = t.exp();
            let got = H.psi(t, &n, &z);
            let want = [e * 0.4, e * -1.7, e * e * 2.2 + e * (e - 1.0) * 0.4];
            for (g, w) in got.0.iter().zip(want) {
                assert_abs_diff_eq!(*g, w, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn psi_abelian_is_pure_scaling() {
        // n(t)·D(n)·n(t)⁻¹ with translations cancelling
        let spec = GroupSpec::abelian(2).unwrap();
        let z = VerticalField::new(&[3.0, -1.0]);
        let n = BasePoint::new(&[1.5, 0.25]);
        let t: f64 = 0.9;
        let brute: Vec<f64> = n
            .0
            .iter()
            .zip(spec.flow_shift(&z, t).0.iter())
            .map(|(v, s)| s + t.exp() * v - s)
            .collect();
        let got = spec.psi(t, &n, &z);
        for (g, w) in got.0.iter().zip(&brute) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-12);
        }
    }

    #[test]
    fn psi_is_automorphism() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = VerticalField::new(&[0.6, 1.4]);
        for _ in 0..100 {
            let n = random_point(H, &mut rng).n;
            let m = random_point(H, &mut rng).n;
            let t = rng.gen_range(-2.0..2.0);
            let l = H.psi(t, &H.base_mul(&n, &m), &z);
            let r = H.base_mul(&H.psi(t, &n, &z), &H.psi(t, &m, &z));
            for (u, v) in l.0.iter().zip(&r.0) {
                assert_abs_diff_eq!(u, v, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn koranyi_examples() {
        let o = H.base_identity();
        assert_abs_diff_eq!(H.dist_n(&o, &BasePoint::new(&[2.0, 0.0, 0.0])), 1.0);
        assert_abs_diff_eq!(H.dist_n(&o, &BasePoint::new(&[0.0, 0.0, 1.0])), 1.0);
        let n = BasePoint::new(&[0.3, 0.1, -2.0]);
        assert_eq!(H.dist_n(&n, &n), 0.0);
    }

    #[test]
    fn dist_g_examples() {
        let spec = GroupSpec::abelian(1).unwrap();
        assert_abs_diff_eq!(spec.dist_g(&pt(&[0.0], E), &pt(&[0.0], 1.0)), 1.0, epsilon = 1e-14);
        let d = spec.dist_g(&pt(&[2f64.sqrt()], 1.0), &pt(&[0.0], 1.0));
        assert_abs_diff_eq!(d, 2f64.acosh(), epsilon = 1e-14);
        assert_abs_diff_eq!(d, 1.316957896924816, epsilon = 1e-12);
        let x = pt(&[0.1], 3.0);
        assert_eq!(spec.dist_g(&x, &x), 0.0);
    }

    #[test]
    fn acosh_is_accurate_near_one() {
        // series arccosh(1+e) = √(2e)(1 − e/12 + 3e²/160)
        for eps in [1e-20, 1e-14, 1e-9, 1e-6] {
            let series = (2.0 * eps as f64).sqrt() * (1.0 - eps / 12.0 + 3.0 * eps * eps / 160.0);
            assert!((acosh_1p(eps) - series).abs() <= 1e-15 * series);
        }
        for u in [1.5f64, 2.0, 10.0, 1e6] {
            assert_abs_diff_eq!(acosh_1p(u - 1.0), u.acosh(), epsilon = 1e-12 * u.acosh());
        }
    }

    #[test]
    fn dist_z_reduces_to_dist_g_for_vertical_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for spec in [GroupSpec::abelian(2).unwrap(), H] {
            let z = VerticalField::vertical(spec);
            for _ in 0..200 {
                let x = random_point(spec, &mut rng);
                let y = random_point(spec, &mut rng);
                assert_eq!(spec.dist_z(&x, &y, &z), spec.dist_g(&x, &y));
            }
        }
    }

    #[test]
    fn exp_flow_distance_bound() {
        for (spec, z) in [
            (H, VerticalField::new(&[1.0, 0.0])),
            (H, VerticalField::new(&[-0.4, 2.5])),
            (GroupSpec::abelian(2).unwrap(), VerticalField::new(&[1.0, -3.0])),
        ] {
            for i in -60..=60 {
                let t = i as f64 * 0.1;
                let d = spec.dist_g(&spec.exp_flow(&z, t), &spec.identity());
                assert!(d <= t.abs() * z.norm() + 1e-12, "t={t} d={d}");
            }
        }
    }
}
