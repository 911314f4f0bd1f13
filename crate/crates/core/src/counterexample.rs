//! Comparison results between `d_Z` and `d_G`.
//!
//! On abelian `N` the two metrics are equivalent at the level of `cosh`. On
//! `ℍ¹ₑ = ℍ¹ ⋊ ℝ₊` with `Z = X_α + H_{1,0}` the dyadic family fails the
//! enlargement property for `d_G`; [`counterexample_table`] carries the
//! bookkeeping of that construction in log space.

use std::f64::consts::{LN_2, SQRT_2};
use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cubes::sample_ball;
use crate::cylinder::{BaseSet, Cylinder, FlowSpace};
use crate::error::{Error, Result};
use crate::group::{BasePoint, GroupPoint, GroupSpec, VerticalField};

/// `c̃ = 20^{−1/4}`.
pub fn c_tilde() -> f64 {
    20f64.powf(-0.25)
}

/// `Q(L, M) = [−L, L]² × [−M, M] ⊂ ℍ¹`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeisenbergBox {
    pub l: f64,
    pub m: f64,
}

impl HeisenbergBox {
    pub fn new(l: f64, m: f64) -> Result<Self> {
        if !(l > 0.0 && m > 0.0) {
            return Err(Error::InvalidParameter(format!("box sides must be positive, got ({l}, {m})")));
        }
        Ok(HeisenbergBox { l, m })
    }

    /// `Q(L) = Q(L, L²)`.
    pub fn cube(l: f64) -> Result<Self> {
        HeisenbergBox::new(l, l * l)
    }

    pub fn contains(&self, n: &BasePoint) -> bool {
        let x = n.as_slice();
        x[0].abs() <= self.l && x[1].abs() <= self.l && x[2].abs() <= self.m
    }

    pub fn corners(&self) -> Vec<BasePoint> {
        let mut out = Vec::with_capacity(8);
        for sq in [-1.0, 1.0] {
            for sp in [-1.0, 1.0] {
                for st in [-1.0, 1.0] {
                    out.push(BasePoint::new(&[sq * self.l, sp * self.l, st * self.m]));
                }
            }
        }
        out
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> BasePoint {
        BasePoint::new(&[
            rng.gen_range(-self.l..=self.l),
            rng.gen_range(-self.l..=self.l),
            rng.gen_range(-self.m..=self.m),
        ])
    }
}

/// The bounding box `Q(eᵗL, e²ᵗL² + eᵗ|1 − eᵗ|L)` of `ψ_t(Q(L))` for
/// `Z = X_α + H_{1,0}`.
pub fn psi_box_image(t: f64, l: f64) -> Result<HeisenbergBox> {
    let e = t.exp();
    HeisenbergBox::new(e * l, e * e * l * l + e * (1.0 - e).abs() * l)
}

/// The field `Z = X_α + H_{1,0}` on `ℍ¹ₑ`.
pub fn heisenberg_field() -> VerticalField {
    VerticalField::new(&[1.0, 0.0])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerCheck {
    /// Largest amount by which a corner image leaves the box, relative to the face.
    pub outside: f64,
    /// Largest gap between a box face and the farthest corner image, relative to the face.
    pub face_gap: f64,
}

/// Compares the box formula with `ψ_t` evaluated on the corners of `Q(L)`:
/// every corner image lies in the box and every face is attained.
pub fn psi_box_corner_check(t: f64, l: f64) -> Result<CornerCheck> {
    let img = psi_box_image(t, l)?;
    let src = HeisenbergBox::cube(l)?;
    let spec = GroupSpec::Heisenberg;
    let z = heisenberg_field();
    let pts: Vec<BasePoint> = src.corners().iter().map(|c| spec.psi(t, c, &z)).collect();
    let face = [img.l, img.l, img.m];
    let mut outside: f64 = 0.0;
    let mut max = [0f64; 3];
    for p in &pts {
        for (i, x) in p.as_slice().iter().enumerate() {
            outside = outside.max((x.abs() - face[i]) / face[i]);
            max[i] = max[i].max(x.abs());
        }
    }
    let face_gap = (0..3).map(|i| (face[i] - max[i]).abs() / face[i]).fold(0.0, f64::max);
    Ok(CornerCheck {
        outside: outside.max(0.0),
        face_gap,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainmentCheck {
    pub samples: usize,
    pub escapes: usize,
    /// Largest sampled value of the test quantity relative to its bound.
    pub worst_ratio: f64,
}

impl ContainmentCheck {
    pub fn holds(&self) -> bool {
        self.escapes == 0
    }
}

/// `Q(2c̃L) ⊂ B(1, L)` and `B(1, L) ⊂ Q(2L)` by sampling each inner set.
pub fn box_sandwich(l: f64, samples: usize, rng: &mut dyn RngCore) -> Result<(ContainmentCheck, ContainmentCheck)> {
    let spec = GroupSpec::Heisenberg;
    let inner = HeisenbergBox::cube(2.0 * c_tilde() * l)?;
    let outer = HeisenbergBox::cube(2.0 * l)?;
    let mut a = ContainmentCheck { samples, escapes: 0, worst_ratio: 0.0 };
    let mut b = a;
    let id = spec.base_identity();
    for _ in 0..samples {
        let n = inner.sample(rng);
        let r = spec.base_norm(&n) / l;
        a.worst_ratio = a.worst_ratio.max(r);
        if r >= 1.0 {
            a.escapes += 1;
        }
        let n = sample_ball(spec, &id, l, rng);
        let x = n.as_slice();
        let r = (x[0].abs() / outer.l).max(x[1].abs() / outer.l).max(x[2].abs() / outer.m);
        b.worst_ratio = b.worst_ratio.max(r);
        if !outer.contains(&n) {
            b.escapes += 1;
        }
    }
    Ok((a, b))
}

/// Samples `y ∈ B(1, c̃eᵗR)` and tests `‖ψ_{−t}(y)‖ < R`, i.e. whether
/// `B(1, c̃eᵗR) ⊂ ψ_t(B(1, R))`.
pub fn conjugation_ball_check(t: f64, r: f64, samples: usize, rng: &mut dyn RngCore) -> Result<ContainmentCheck> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {r}")));
    }
    let spec = GroupSpec::Heisenberg;
    let z = heisenberg_field();
    let id = spec.base_identity();
    let rho = c_tilde() * t.exp() * r;
    let mut out = ContainmentCheck { samples, escapes: 0, worst_ratio: 0.0 };
    for _ in 0..samples {
        let y = sample_ball(spec, &id, rho, rng);
        let ratio = spec.base_norm(&spec.psi(-t, &y, &z)) / r;
        out.worst_ratio = out.worst_ratio.max(ratio);
        if ratio >= 1.0 {
            out.escapes += 1;
        }
    }
    Ok(out)
}

/// Samples `P_{e^{R/(2‖Z‖)}, B_N(1_N, R/2)}(1)` and checks `d_G(x, 1_G) < R`.
pub fn verify_small_ball_in_cylinder(
    spec: GroupSpec,
    z: &VerticalField,
    r: f64,
    samples: usize,
    rng: &mut dyn RngCore,
) -> Result<ContainmentCheck> {
    spec.check_field(z)?;
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {r}")));
    }
    let half = r / (2.0 * z.norm());
    let id = spec.identity();
    let mut out = ContainmentCheck { samples, escapes: 0, worst_ratio: 0.0 };
    for _ in 0..samples {
        let n = sample_ball(spec, &spec.base_identity(), r / 2.0, rng);
        let t = rng.gen_range(-half..half);
        let x = spec.from_flow_coordinates(&n, t, z);
        let ratio = spec.dist_g(&x, &id) / r;
        out.worst_ratio = out.worst_ratio.max(ratio);
        if ratio >= 1.0 {
            out.escapes += 1;
        }
    }
    Ok(out)
}

/// Radius of the ball used in place of `Ψ_{r,a}(B_N(1_N, R/2))`: the
/// conjugation lower bound `k·e^{t_min}·R/2` with `k = c̃` on `ℍ¹` and `k = 1`
/// on `ℝᵐ`, where `ψ_t` is the dilation by `eᵗ`.
pub fn psi_lower_radius(spec: GroupSpec, p: &Cylinder, r: f64) -> f64 {
    let k = if spec.is_heisenberg() { c_tilde() } else { 1.0 };
    k * p.lo.exp() * r / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThickCheck {
    pub samples: usize,
    /// Sampled `w` with `ψ_{−t}(w) ∉ B(1, R/2)` for some `t` on the grid of `U_r(a)`.
    pub psi_escapes: usize,
    /// Sampled points whose product witness lies at distance `≥ R`.
    pub escapes: usize,
    /// Largest `d_G(x, x₁)/R` over the witnesses.
    pub worst_ratio: f64,
}

impl ThickCheck {
    pub fn holds(&self) -> bool {
        self.escapes == 0 && self.psi_escapes == 0
    }
}

/// Samples `P_{re^{R/(2‖Z‖)}, n_Q·B(1, ρ)}(a)` with `ρ` from
/// [`psi_lower_radius`] unless given, and bounds `d_G(x, P)` through the
/// product witness `x = x₁x₂` with `x₁ ∈ P` and `x₂` near `1_G`.
pub fn verify_thickened_cylinder(
    space: &FlowSpace,
    p: &Cylinder,
    r: f64,
    rho: Option<f64>,
    samples: usize,
    rng: &mut dyn RngCore,
) -> Result<ThickCheck> {
    let q = p.cube().ok_or(Error::IncomparableBases)?;
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {r}")));
    }
    let spec = space.spec;
    let z = &space.z;
    let half = r / (2.0 * z.norm());
    let rho = rho.unwrap_or_else(|| psi_lower_radius(spec, p, r));
    let thick = Cylinder::from_interval(p.lo - half, p.hi + half, BaseSet::Cube(q.clone()));
    let small = Cylinder::from_interval(-half, half, BaseSet::Ball {
        center: spec.base_identity(),
        radius: r / 2.0,
    });
    let grid: Vec<f64> = (0..=32).map(|i| p.lo + (p.hi - p.lo) * i as f64 / 32.0).collect();
    let mut out = ThickCheck { samples, psi_escapes: 0, escapes: 0, worst_ratio: 0.0 };
    for _ in 0..samples {
        let w = sample_ball(spec, &spec.base_identity(), rho, rng);
        if grid.iter().any(|&t| spec.base_norm(&spec.psi(-t, &w, z)) >= r / 2.0) {
            out.psi_escapes += 1;
        }
        let s = rng.gen_range(thick.lo..thick.hi);
        let m = spec.base_mul(&q.center, &w);
        let x = space.flow_point(&m, s);
        let (x1, _) = space.product_witness(p, &small, &q.center, &w, s)?;
        let ratio = spec.dist_g(&x, &x1) / r;
        out.worst_ratio = out.worst_ratio.max(ratio);
        if ratio >= 1.0 || !space.contains(p, &x1) {
            out.escapes += 1;
        }
    }
    Ok(out)
}

/// Constants entering the counterexample bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleParams {
    pub r0: f64,
    /// Inner radius constant `c` of the cube system on `ℍ¹`.
    pub c: f64,
    /// Outer radius constant `C₁` of the cube system on `ℍ¹`.
    pub c1: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub k: f64,
}

/// One inequality of the diameter chain, in log space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub lhs: f64,
    pub rhs: f64,
}

impl Link {
    pub fn holds(&self) -> bool {
        self.lhs >= self.rhs - 1e-9 * (1.0 + self.rhs.abs())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleRow {
    pub ell: u32,
    /// `log_{r₀} r(P_{k_ℓ+1} ∖ P_{k_ℓ})`, from the ascent simulation.
    pub strip_log_r0_r: f64,
    /// Number of vertical halvings `⌊ℓ log₂ 3⌋ + ℓ + 2`.
    pub halvings: u32,
    /// `log_{r₀} r(P^ℓ) = 3^ℓ / 2^{⌊ℓ log₂ 3⌋}`.
    pub log_r0_r: f64,
    /// Natural-log bounds on `a_ℓ`.
    pub log_a_low: f64,
    pub log_a_high: f64,
    /// Natural-log bounds on `δ^{k(ℓ)}`.
    pub log_delta_k_low: f64,
    pub log_delta_k_high: f64,
    /// Lower bound for `log cosh(diam P^ℓ)`.
    pub log_diam_lb: f64,
    /// Lower bound for `diam P^ℓ`.
    pub diam_lb: f64,
    /// Lower bound for `log` of the enlargement ratio at `K`.
    pub log_ratio_lb: f64,
    /// `log cosh(diam) ≥ log(Korányi term) ≥ log(c r₀² (1−a)/(2a))
    /// ≥ log(c r₀²/2) + log(1−ε) − log a ≥ 4·6^ℓ log r₀ + log(c/2) + log(1−ε)`.
    pub links: Vec<Link>,
}

impl CounterexampleRow {
    pub fn chain_holds(&self) -> bool {
        self.links.iter().all(Link::holds)
    }
}

/// `⌊ℓ log₂ 3⌋` in integer arithmetic.
fn floor_log2_pow3(ell: u32) -> u32 {
    let p = 3u128.pow(ell);
    127 - p.leading_zeros()
}

/// Exponents `log_{r₀} r` of the strips `P_{k+1} ∖ P_k` at the descending
/// ascents, starting from `r₀` with `p↑` first; lateral steps leave `r` fixed.
pub fn strip_exponents(count: usize) -> Vec<u64> {
    let (mut e, mut up, mut out) = (1u64, true, Vec::with_capacity(count));
    while out.len() < count {
        if up {
            e *= 2;
        } else {
            out.push(2 * e);
            e *= 3;
        }
        up = !up;
    }
    out
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `acosh(eᴸ)` for `L ≥ 0` without forming `eᴸ`.
fn acosh_exp(l: f64) -> f64 {
    if l <= 0.0 {
        return 0.0;
    }
    l + (1.0 + (-(-2.0 * l).exp_m1()).sqrt()).ln()
}

pub fn counterexample_table(params: &CounterexampleParams, ell_max: u32) -> Result<Vec<CounterexampleRow>> {
    let CounterexampleParams { r0, c, c1, lambda, gamma, k } = *params;
    if !(r0 > std::f64::consts::E) {
        return Err(Error::InvalidParameter(format!("r₀ must exceed e, got {r0}")));
    }
    if ell_max > 6 {
        return Err(Error::InvalidParameter(format!("ℓ_max must be at most 6, got {ell_max}")));
    }
    if !(c > 0.0 && c1 >= c && k > 0.0 && lambda > 1.0 && gamma >= 2.0) {
        return Err(Error::InvalidParameter("inconsistent counterexample constants".into()));
    }
    let lr0 = r0.ln();
    let strips = strip_exponents(ell_max as usize + 1);
    let mut rows = Vec::new();
    for ell in 0..=ell_max {
        let six = 6f64.powi(ell as i32);
        let strip = strips[ell as usize] as f64;
        let j = floor_log2_pow3(ell);
        let halvings = j + ell + 2;
        let e = strip / 2f64.powi(halvings as i32);
        let log_r = e * lr0;
        let log_a_low = -strip * lr0 - log_r;
        let log_a_high = -strip * lr0 + log_r;
        let log_delta_k_low = log_a_low + 2.0 * log_r;
        let log_delta_k_high = lambda.ln() + log_a_high + gamma * log_r;

        // Worst case over the admissible region: a as large as allowed and
        // δᵏ as small as allowed, δᵏ ≥ a r₀².
        let a_max_log = -(4.0 * six - 2.0) * lr0;
        let eps = a_max_log.exp();
        let log_one_minus_a = (-eps).ln_1p();
        let log_q = -a_max_log + log_one_minus_a;
        // (1/(2a²))·‖(cD, 0, cD(1−a))‖² with D = a r₀²
        //   = ½·sqrt(c⁴r₀⁸/16 + c²r₀⁴((1−a)/a)²).
        let koranyi = -LN_2
            + 0.5 * log_add_exp(4.0 * c.ln() + 8.0 * lr0 - 16f64.ln(), 2.0 * c.ln() + 4.0 * lr0 + 2.0 * log_q);
        // cosh d_G = 1 + d_N²/(2a²) and d_N² ≥ the Korányi term's square.
        let cosh_lb = log_add_exp(0.0, koranyi);
        let l2 = c.ln() + 2.0 * lr0 - LN_2 + log_q;
        let l3 = c.ln() + 2.0 * lr0 - LN_2 + log_one_minus_a - a_max_log;
        let l4 = 4.0 * six * lr0 + (c / 2.0).ln() + log_one_minus_a;
        let links = vec![
            Link { lhs: cosh_lb, rhs: koranyi },
            Link { lhs: koranyi, rhs: l2 },
            Link { lhs: l2, rhs: l3 },
            Link { lhs: l3, rhs: l4 },
        ];
        let log_diam_lb = cosh_lb;
        let diam_lb = acosh_exp(log_diam_lb);

        // ρ(neighbourhood) ≥ 2(R/(2√2) + log r₀)·|B(1, C'aR)|,
        // ρ(P^ℓ) ≤ 2·log r·|B(1, C₁δᵏ)| with δᵏ ≤ λ a r^γ and r ≤ r₀².
        let rr = k * diam_lb;
        let c_prime = c_tilde() / (2.0 * r0 * r0);
        let log_ratio_lb = if rr > 0.0 {
            (rr / (2.0 * SQRT_2) + lr0).ln() + 4.0 * (c_prime * rr).ln()
                - (2.0 * lr0).ln()
                - 4.0 * c1.ln()
                - 4.0 * lambda.ln()
                - 8.0 * gamma * lr0
        } else {
            f64::NEG_INFINITY
        };
        rows.push(CounterexampleRow {
            ell,
            strip_log_r0_r: strip,
            halvings,
            log_r0_r: e,
            log_a_low,
            log_a_high,
            log_delta_k_low,
            log_delta_k_high,
            log_diam_lb,
            diam_lb,
            log_ratio_lb,
            links,
        });
    }
    Ok(rows)
}

/// CSV with columns `ℓ,log_r0_r,a_low,a_high,log_diam_lb,log_ratio_lb_at_K1`;
/// `a_low` and `a_high` are natural logarithms.
pub fn write_counterexample_csv<W: Write>(rows: &[CounterexampleRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "ℓ,log_r0_r,a_low,a_high,log_diam_lb,log_ratio_lb_at_K1")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e}",
            r.ell, r.log_r0_r, r.log_a_low, r.log_a_high, r.log_diam_lb, r.log_ratio_lb
        )?;
    }
    Ok(())
}

/// Direct evaluation of the first diameter link for moderate `ℓ`: the two
/// points `(n_ℓ n(log a), a)` and `(n(log a), a)` with `n_ℓ = (cD, 0, 0)`.
pub fn direct_diameter_link(c: f64, d: f64, a: f64) -> (f64, f64) {
    let spec = GroupSpec::Heisenberg;
    let z = heisenberg_field();
    let nt = spec.flow_shift(&z, a.ln());
    let nl = BasePoint::new(&[c * d, 0.0, 0.0]);
    let x = GroupPoint { n: spec.base_mul(&nl, &nt), a };
    let y = GroupPoint { n: nt, a };
    let lhs = spec.dist_g(&x, &y).cosh();
    let k = spec.base_norm(&BasePoint::new(&[c * d, 0.0, c * d * (1.0 - a)]));
    (lhs, k * k / (2.0 * a * a))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annulus {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub beta: Vec<f64>,
    pub d: f64,
    pub samples: usize,
    /// Samples with `cosh d_Z > D cosh d_G`.
    pub upper_violations: usize,
    /// Samples with `cosh d_G > D cosh d_Z`.
    pub lower_violations: usize,
    pub max_cosh_ratio_zg: f64,
    pub max_cosh_ratio_gz: f64,
    /// `d_G/d_Z` over dyadic annuli in `d_G`.
    pub annuli: Vec<Annulus>,
    pub phi_min: f64,
    pub phi_max: f64,
    pub phi_at_zero: f64,
}

impl EquivalenceReport {
    pub fn holds(&self) -> bool {
        self.upper_violations == 0 && self.lower_violations == 0
    }
}

/// `Φ_β(v) = (1 + |v|²)/(1 + |v + β|²)`.
pub fn phi_beta(beta: &[f64], v: &[f64]) -> f64 {
    let a: f64 = v.iter().map(|x| x * x).sum();
    let b: f64 = v.iter().zip(beta).map(|(x, y)| (x + y) * (x + y)).sum();
    (1.0 + a) / (1.0 + b)
}

/// Samples `x = (n, a)` with `log a` uniform in `[−4, 4]` and `n` uniform in
/// `[−8, 8]ᵐ` and checks both `cosh` inequalities with `D = max{2|β|²+1, 2}`.
pub fn abelian_equivalence_certificate(beta: &[f64], samples: usize, seed: u64) -> Result<EquivalenceReport> {
    let m = beta.len();
    let spec = GroupSpec::abelian(m)?;
    let z = VerticalField::new(beta);
    let b2 = z.beta_norm_sq();
    let d = (2.0 * b2 + 1.0).max(2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = spec.identity();
    let mut rep = EquivalenceReport {
        beta: beta.to_vec(),
        d,
        samples,
        upper_violations: 0,
        lower_violations: 0,
        max_cosh_ratio_zg: 0.0,
        max_cosh_ratio_gz: 0.0,
        annuli: Vec::new(),
        phi_min: f64::INFINITY,
        phi_max: 0.0,
        phi_at_zero: phi_beta(beta, &vec![0.0; m]),
    };
    let mut bins: std::collections::BTreeMap<i32, Annulus> = Default::default();
    for _ in 0..samples {
        let n: Vec<f64> = (0..m).map(|_| rng.gen_range(-8.0..8.0)).collect();
        let a = rng.gen_range(-4.0f64..4.0).exp();
        let x = GroupPoint::new(BasePoint::from(n), a)?;
        let dg = spec.dist_g(&x, &id);
        let dz = spec.dist_z(&x, &id, &z);
        let (cg, cz) = (dg.cosh(), dz.cosh());
        rep.max_cosh_ratio_zg = rep.max_cosh_ratio_zg.max(cz / cg);
        rep.max_cosh_ratio_gz = rep.max_cosh_ratio_gz.max(cg / cz);
        if cz > d * cg {
            rep.upper_violations += 1;
        }
        if cg > d * cz {
            rep.lower_violations += 1;
        }
        if dg > 0.0 && dz > 0.0 {
            let key = dg.log2().floor() as i32;
            let e = bins.entry(key).or_insert(Annulus {
                lo: 2f64.powi(key),
                hi: 2f64.powi(key + 1),
                count: 0,
                min_ratio: f64::INFINITY,
                max_ratio: 0.0,
            });
            e.count += 1;
            e.min_ratio = e.min_ratio.min(dg / dz);
            e.max_ratio = e.max_ratio.max(dg / dz);
        }
    }
    rep.annuli = bins.into_values().collect();
    // Φ_β on a grid of [−8, 8]ᵐ.
    let per_axis = match m {
        1 => 4001,
        2 => 201,
        _ => 41,
    };
    let mut idx = vec![0usize; m];
    loop {
        let v: Vec<f64> = idx.iter().map(|&i| -8.0 + 16.0 * i as f64 / (per_axis - 1) as f64).collect();
        let phi = phi_beta(beta, &v);
        rep.phi_min = rep.phi_min.min(phi);
        rep.phi_max = rep.phi_max.max(phi);
        let mut axis = 0;
        loop {
            if axis == m {
                return Ok(rep);
            }
            idx[axis] += 1;
            if idx[axis] < per_axis {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}
