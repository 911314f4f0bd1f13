//! Maximal operators, the Calderón–Zygmund decomposition over a dyadic
//! family, the greedy covering of admissible cylinders and the weak-(1,1)
//! harness.
//!
//! Functions are finite combinations of indicators of family cylinders.
//! Their integrals over family cylinders and over arbitrary cube-based
//! cylinders are computed exactly from the tree structure.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cylinder::{BaseSet, Cylinder, FlowSpace};
use crate::cubes::CubeRelation;
use crate::error::{Error, Result};
use crate::family::DyadicFamily;
use crate::group::BasePoint;

#[derive(Clone, Debug)]
struct Atom {
    node: usize,
    coef: f64,
    path: Vec<usize>,
    /// Value of the function on the part of the node outside deeper terms.
    value: f64,
    /// Maximal strict term descendants, as atom indices.
    below: Vec<usize>,
    /// `µ(node) − Σ µ(below)`.
    exclusive: f64,
    /// `∫_node |f|`.
    abs_integral: f64,
}

/// `f = Σ cᵢ χ_{Pᵢ}` with every `Pᵢ` a cylinder of one family.
#[derive(Clone, Debug, Default)]
pub struct SimpleFunction {
    atoms: Vec<Atom>,
    by_node: HashMap<usize, usize>,
    t_hull: Option<(f64, f64)>,
}

impl Serialize for SimpleFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.terms().serialize(s)
    }
}

impl SimpleFunction {
    /// Merges repeated cylinders and drops zero coefficients. Term cylinders
    /// must be complete within the family.
    pub fn new(fam: &DyadicFamily, terms: &[(usize, f64)]) -> Result<Self> {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for &(node, coef) in terms {
            if node >= fam.nodes().len() {
                return Err(Error::InvalidParameter(format!("no cylinder {node} in the family")));
            }
            if !coef.is_finite() {
                return Err(Error::InvalidParameter("non-finite coefficient".into()));
            }
            *merged.entry(node).or_default() += coef;
        }
        let mut atoms: Vec<Atom> = merged
            .into_iter()
            .filter(|&(_, c)| c != 0.0)
            .map(|(node, coef)| Atom {
                node,
                coef,
                path: fam.path(node),
                value: 0.0,
                below: Vec::new(),
                exclusive: 0.0,
                abs_integral: 0.0,
            })
            .collect();
        for a in &atoms {
            if !fam.is_complete(a.node) {
                return Err(Error::InvalidParameter(format!(
                    "cylinder {} is cut by the window edge",
                    a.node
                )));
            }
        }
        // Coarse atoms first so every ancestor precedes its descendants.
        atoms.sort_by_key(|a| (fam.node(a.node).generation, a.node));
        let n = atoms.len();
        let mut nearest_above: Vec<Option<usize>> = vec![None; n];
        for i in 0..n {
            for j in 0..i {
                if atoms[j].path.len() < atoms[i].path.len() && atoms[i].path[atoms[j].path.len() - 1] == atoms[j].node {
                    nearest_above[i] = Some(match nearest_above[i] {
                        Some(k) if atoms[k].path.len() > atoms[j].path.len() => k,
                        _ => j,
                    });
                }
            }
        }
        for i in 0..n {
            atoms[i].value = atoms[i].coef + nearest_above[i].map_or(0.0, |k| atoms[k].value);
            if let Some(k) = nearest_above[i] {
                atoms[k].below.push(i);
            }
        }
        for i in (0..n).rev() {
            let mu = fam.node(atoms[i].node).mu;
            let below_mu: f64 = atoms[i].below.iter().map(|&d| fam.node(atoms[d].node).mu).sum();
            let below_int: f64 = atoms[i].below.iter().map(|&d| atoms[d].abs_integral).sum();
            atoms[i].exclusive = mu - below_mu;
            atoms[i].abs_integral = atoms[i].value.abs() * atoms[i].exclusive + below_int;
        }
        let by_node = atoms.iter().enumerate().map(|(i, a)| (a.node, i)).collect();
        let t_hull = atoms.iter().fold(None, |acc: Option<(f64, f64)>, a| {
            let c = &fam.node(a.node).cylinder;
            Some(match acc {
                None => (c.lo, c.hi),
                Some((lo, hi)) => (lo.min(c.lo), hi.max(c.hi)),
            })
        });
        Ok(SimpleFunction { atoms, by_node, t_hull })
    }

    pub fn zero() -> Self {
        SimpleFunction::default()
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `(node, coefficient)` pairs, coarse first.
    pub fn terms(&self) -> Vec<(usize, f64)> {
        self.atoms.iter().map(|a| (a.node, a.coef)).collect()
    }

    fn contains(&self, fam: &DyadicFamily, outer: usize, atom: usize) -> bool {
        let depth = fam.path_len(outer);
        let path = &self.atoms[atom].path;
        path.len() >= depth && path[depth - 1] == outer
    }

    /// Value of `f` on a node that contains no deeper term, or on the part
    /// of a node outside its strict term descendants.
    pub fn value_on(&self, fam: &DyadicFamily, node: usize) -> f64 {
        let path = fam.path(node);
        path.iter()
            .filter_map(|p| self.by_node.get(p))
            .map(|&i| self.atoms[i].coef)
            .sum()
    }

    fn maximal_below(&self, fam: &DyadicFamily, node: usize) -> Vec<usize> {
        let strict: Vec<usize> = (0..self.atoms.len())
            .filter(|&i| self.atoms[i].node != node && self.contains(fam, node, i))
            .collect();
        strict
            .iter()
            .copied()
            .filter(|&i| {
                !strict
                    .iter()
                    .any(|&j| j != i && self.atoms[j].path.len() < self.atoms[i].path.len() && self.atoms[i].path[self.atoms[j].path.len() - 1] == self.atoms[j].node)
            })
            .collect()
    }

    /// `∫_P f dµ` for a family cylinder `P`.
    pub fn integral(&self, fam: &DyadicFamily, node: usize) -> f64 {
        let path = fam.path(node);
        let mu = fam.node(node).mu;
        self.atoms
            .iter()
            .enumerate()
            .map(|(i, a)| {
                if path.contains(&a.node) {
                    a.coef * mu
                } else if self.contains(fam, node, i) {
                    a.coef * fam.node(a.node).mu
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// `∫_P |f| dµ` for a family cylinder `P`.
    pub fn integral_abs(&self, fam: &DyadicFamily, node: usize) -> f64 {
        if let Some(&i) = self.by_node.get(&node) {
            return self.atoms[i].abs_integral;
        }
        let below = self.maximal_below(fam, node);
        let v = self.value_on(fam, node);
        let below_mu: f64 = below.iter().map(|&d| fam.node(self.atoms[d].node).mu).sum();
        let below_int: f64 = below.iter().map(|&d| self.atoms[d].abs_integral).sum();
        v.abs() * (fam.node(node).mu - below_mu) + below_int
    }

    /// Whether `f` can be nonzero somewhere on the node.
    pub fn meets(&self, fam: &DyadicFamily, node: usize) -> bool {
        let path = fam.path(node);
        (0..self.atoms.len()).any(|i| path.contains(&self.atoms[i].node) || self.contains(fam, node, i))
    }

    /// Whether some term lies strictly inside the node.
    pub fn has_terms_below(&self, fam: &DyadicFamily, node: usize) -> bool {
        (0..self.atoms.len()).any(|i| self.atoms[i].node != node && self.contains(fam, node, i))
    }

    /// `∫_P |f| dµ` for any cylinder over a cube of the family's system.
    pub fn integral_abs_over(&self, fam: &DyadicFamily, p: &Cylinder) -> Result<f64> {
        let mut total = 0.0;
        for a in &self.atoms {
            if a.value == 0.0 {
                continue;
            }
            let mut ov = fam.space.overlap(p, &fam.node(a.node).cylinder)?;
            if ov == 0.0 {
                continue;
            }
            for &d in &a.below {
                ov -= fam.space.overlap(p, &fam.node(self.atoms[d].node).cylinder)?;
            }
            total += a.value.abs() * ov.max(0.0);
        }
        Ok(total)
    }

    /// `‖f‖₁` from the atoms of the term tree.
    pub fn norm1(&self) -> f64 {
        self.atoms.iter().map(|a| a.value.abs() * a.exclusive).sum()
    }

    /// `‖f‖₁` recomputed on the common refinement: every term is pushed down
    /// to the deepest term generation and the pieces are summed there.
    pub fn norm1_refined(&self, fam: &DyadicFamily) -> f64 {
        let Some(deepest) = self.atoms.iter().map(|a| fam.node(a.node).generation).max() else {
            return 0.0;
        };
        let mut cells: BTreeMap<usize, f64> = BTreeMap::new();
        for a in &self.atoms {
            for d in fam.descendants_at(a.node, deepest) {
                *cells.entry(d).or_default() += a.coef;
            }
        }
        cells.iter().map(|(&d, v)| v.abs() * fam.node(d).mu).sum()
    }

    /// `sup |f|` over the atoms of positive measure.
    pub fn sup_abs(&self, fam: &DyadicFamily) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.exclusive > 1e-12 * fam.node(a.node).mu)
            .map(|a| a.value.abs())
            .fold(0.0, f64::max)
    }

    /// `f(x)` at a point given in flow coordinates; zero outside the region.
    pub fn eval_flow(&self, fam: &DyadicFamily, n: &BasePoint, t: f64) -> f64 {
        match fam.chain_at(n, t) {
            Ok(chain) => chain
                .iter()
                .filter_map(|c| self.by_node.get(c))
                .map(|&i| self.atoms[i].coef)
                .sum(),
            Err(_) => 0.0,
        }
    }

    pub fn t_hull(&self) -> Option<(f64, f64)> {
        self.t_hull
    }

    fn support_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.atoms.iter().filter(|a| a.value != 0.0).map(|a| a.node)
    }
}

/// A random simple function: `terms` complete cylinders from generations
/// `gens`, coefficients uniform in `[−1, 2)`.
pub fn random_simple_function(
    fam: &DyadicFamily,
    terms: usize,
    gens: (i32, i32),
    rng: &mut dyn RngCore,
) -> Result<SimpleFunction> {
    let mut pool = Vec::new();
    for g in gens.0..=gens.1 {
        pool.extend(fam.generation(g)?.iter().copied().filter(|&i| fam.is_complete(i)));
    }
    if pool.is_empty() {
        return Err(Error::WindowExhausted("no complete cylinders in the requested generations".into()));
    }
    let picks: Vec<(usize, f64)> = (0..terms)
        .map(|_| (pool[rng.gen_range(0..pool.len())], rng.gen_range(-1.0..2.0)))
        .collect();
    SimpleFunction::new(fam, &picks)
}

/// `M^𝒟_Z f(x)`: the largest average of `|f|` over stored cylinders
/// containing `x`.
pub fn dyadic_maximal(fam: &DyadicFamily, f: &SimpleFunction, n: &BasePoint, t: f64) -> Result<f64> {
    let chain = fam.chain_at(n, t)?;
    Ok(chain
        .iter()
        .map(|&c| f.integral_abs(fam, c) / fam.node(c).mu)
        .fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingRecord {
    pub node: usize,
    pub generation: i32,
    pub mu: f64,
    pub average: f64,
    pub abs_average: f64,
    pub parent_abs_average: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub f_norm: f64,
    pub f_norm_refined: f64,
    pub sup_g: f64,
    pub c1_alpha: f64,
    pub max_abs_mean_b: f64,
    pub sum_b_norm: f64,
    pub two_c1_f_norm: f64,
    pub sum_mu: f64,
    pub f_norm_over_alpha: f64,
    pub sum_mu_star: f64,
    pub c4: f64,
    pub c4_f_norm_over_alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificates {
    /// `sup |g| ≤ C₁α`.
    pub a: bool,
    /// Each `b_j` lives in `P_j` and has zero mean.
    pub b: bool,
    /// `Σ‖b_j‖₁ ≤ 2C₁‖f‖₁`.
    pub c: bool,
    /// `Σµ(P_j) ≤ ‖f‖₁/α`.
    pub d: bool,
    /// `Σµ(P_j*) ≤ C₄‖f‖₁/α`.
    pub e: bool,
    /// The two computations of `‖f‖₁` agree.
    pub norms_agree: bool,
}

impl Certificates {
    pub fn all(&self) -> bool {
        self.a && self.b && self.c && self.d && self.e && self.norms_agree
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DecompositionReport {
    pub alpha: f64,
    pub stopping: Vec<StoppingRecord>,
    pub good: SimpleFunction,
    pub bad: Vec<SimpleFunction>,
    pub bounds: Bounds,
    pub certificates: Certificates,
}

/// Tolerance for the zero-mean certificate, relative to `max(1, ‖b_j‖₁)`.
pub const MEAN_TOL: f64 = 1e-10;

/// The stopping cylinders of `f` at height `α`: maximal family cylinders
/// with `|f|`-average above `α`.
pub fn stopping_cylinders(fam: &DyadicFamily, f: &SimpleFunction, alpha: f64) -> Result<Vec<usize>> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("α must be positive, got {alpha}")));
    }
    let (top, _) = fam.generation_range();
    let mut out = Vec::new();
    let mut stack: Vec<usize> = fam.generation(top)?.iter().rev().copied().collect();
    while let Some(id) = stack.pop() {
        if !f.meets(fam, id) {
            continue;
        }
        let avg = f.integral_abs(fam, id) / fam.node(id).mu;
        if avg > alpha {
            if fam.node(id).generation == top {
                return Err(Error::WindowExhausted(format!(
                    "α = {alpha} is below the average {avg} over a top-generation cylinder"
                )));
            }
            if !fam.is_complete(id) {
                return Err(Error::WindowExhausted(format!(
                    "α = {alpha} stops at cylinder {id}, which is cut by the window edge"
                )));
            }
            out.push(id);
        } else if f.has_terms_below(fam, id) {
            stack.extend(fam.node(id).children.iter().rev().copied());
        }
    }
    Ok(out)
}

/// The CZ decomposition `f = g + Σ b_j` at height `α`, with certificates.
/// `doubling` is `D(µ_N, C*/c)`, which enters `C₄ = 2D`.
pub fn cz_decompose(fam: &DyadicFamily, f: &SimpleFunction, alpha: f64, doubling: f64) -> Result<DecompositionReport> {
    let stops = stopping_cylinders(fam, f, alpha)?;
    let c1 = fam.space.c1();
    let c4 = fam.space.c4(doubling);
    let f_norm = f.norm1();
    let f_norm_refined = f.norm1_refined(fam);
    let mut stopping = Vec::with_capacity(stops.len());
    let mut bad = Vec::with_capacity(stops.len());
    let mut good_terms = f.terms();
    let mut max_abs_mean_b: f64 = 0.0;
    let mut b_ok = true;
    let (mut sum_b, mut sum_mu, mut sum_mu_star) = (0.0, 0.0, 0.0);
    for &j in &stops {
        let node = fam.node(j);
        let avg = f.integral(fam, j) / node.mu;
        let parent = node.parent.expect("stopping cylinders are below the top generation");
        stopping.push(StoppingRecord {
            node: j,
            generation: node.generation,
            mu: node.mu,
            average: avg,
            abs_average: f.integral_abs(fam, j) / node.mu,
            parent_abs_average: f.integral_abs(fam, parent) / fam.node(parent).mu,
        });
        let above: f64 = fam
            .path(j)
            .iter()
            .filter(|&&p| p != j)
            .filter_map(|p| f.by_node.get(p))
            .map(|&i| f.atoms[i].coef)
            .sum();
        let mut terms = vec![(j, above - avg)];
        terms.extend(
            (0..f.atoms.len())
                .filter(|&i| f.contains(fam, j, i))
                .map(|i| (f.atoms[i].node, f.atoms[i].coef)),
        );
        let b = SimpleFunction::new(fam, &terms)?;
        let mean: f64 = b.atoms.iter().map(|a| a.coef * fam.node(a.node).mu).sum();
        let b_norm = b.norm1();
        max_abs_mean_b = max_abs_mean_b.max(mean.abs());
        b_ok &= mean.abs() <= MEAN_TOL * b_norm.max(1.0);
        b_ok &= b.atoms.iter().all(|a| a.path.contains(&j));
        good_terms.extend(b.terms().into_iter().map(|(n, c)| (n, -c)));
        sum_b += b_norm;
        sum_mu += node.mu;
        let star = fam.space.enlargement_star(&node.cylinder)?;
        sum_mu_star += fam.space.cylinder_measure(&star)?;
        bad.push(b);
    }
    let good = SimpleFunction::new(fam, &good_terms)?;
    let sup_g = good.sup_abs(fam);
    let bounds = Bounds {
        f_norm,
        f_norm_refined,
        sup_g,
        c1_alpha: c1 * alpha,
        max_abs_mean_b,
        sum_b_norm: sum_b,
        two_c1_f_norm: 2.0 * c1 * f_norm,
        sum_mu,
        f_norm_over_alpha: f_norm / alpha,
        sum_mu_star,
        c4,
        c4_f_norm_over_alpha: c4 * f_norm / alpha,
    };
    let slack = |x: f64| x * (1.0 + 1e-12);
    let certificates = Certificates {
        a: sup_g <= slack(bounds.c1_alpha),
        b: b_ok,
        c: sum_b <= slack(bounds.two_c1_f_norm),
        d: sum_mu <= slack(bounds.f_norm_over_alpha),
        e: sum_mu_star <= slack(bounds.c4_f_norm_over_alpha),
        norms_agree: (f_norm - f_norm_refined).abs() <= 1e-12 * f_norm.max(1.0),
    };
    Ok(DecompositionReport {
        alpha,
        stopping,
        good,
        bad,
        bounds,
        certificates,
    })
}

/// Largest `|f − g − Σ b_j|` over sampled points of the stopping cylinders
/// and of the whole region.
pub fn identity_residual(
    fam: &DyadicFamily,
    f: &SimpleFunction,
    report: &DecompositionReport,
    samples: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let top = fam.generation(fam.generation_range().0)?;
    let mut worst: f64 = 0.0;
    for s in 0..samples {
        let node = if s % 2 == 0 && !report.stopping.is_empty() {
            report.stopping[rng.gen_range(0..report.stopping.len())].node
        } else {
            top[rng.gen_range(0..top.len())]
        };
        let (n, t) = fam.space.sample_flow(&fam.node(node).cylinder, rng)?;
        let lhs = f.eval_flow(fam, &n, t);
        let rhs = report.good.eval_flow(fam, &n, t) + report.bad.iter().map(|b| b.eval_flow(fam, &n, t)).sum::<f64>();
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// The converse construction: for a family cylinder `P₀` with a parent,
/// `f = χ_S` for a child `S` of `P₀` and `α = µ(S)/µ(p(P₀))`.
pub fn converse_instance(fam: &DyadicFamily, p0: usize) -> Result<(SimpleFunction, f64)> {
    let node = fam.node(p0);
    let parent = node
        .parent
        .ok_or_else(|| Error::WindowExhausted("the cylinder has no stored parent".into()))?;
    let s = *node
        .children
        .first()
        .ok_or_else(|| Error::WindowExhausted("the cylinder has no stored sons".into()))?;
    let f = SimpleFunction::new(fam, &[(s, 1.0)])?;
    Ok((f, fam.node(s).mu / fam.node(parent).mu))
}

/// Catalog of admissible cylinders used by the admissible maximal operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogConfig {
    /// Grid density in `r` and in `a`, per factor of 10.
    pub points_per_decade: usize,
    /// Cube generations searched.
    pub generations: (i32, i32),
    pub max_log_r: f64,
}

impl CatalogConfig {
    /// Generations spanning the family's cube generations.
    pub fn for_family(fam: &DyadicFamily) -> Self {
        let gens = fam.nodes().iter().map(|n| n.cube().generation);
        let (lo, hi) = gens.fold((i32::MAX, i32::MIN), |(lo, hi), g| (lo.min(g), hi.max(g)));
        CatalogConfig {
            points_per_decade: 32,
            generations: (lo, hi),
            max_log_r: ((fam.header.slab.1 - fam.header.slab.0) / 2.0).max(4.0),
        }
    }

    fn step(&self) -> f64 {
        std::f64::consts::LN_10 / self.points_per_decade as f64
    }
}

/// Admissible catalog cylinders through `(n, t)` that meet the support of `f`.
pub fn catalog_through(
    space: &FlowSpace,
    cfg: &CatalogConfig,
    n: &BasePoint,
    t: f64,
    support: &[Cylinder],
) -> Result<Vec<Cylinder>> {
    let step = cfg.step();
    let (t_lo, t_hi) = support
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c.lo), hi.max(c.hi)));
    let mut out = Vec::new();
    for k in cfg.generations.0..=cfg.generations.1 {
        let q = match space.cubes.cube_at(n, k) {
            Ok(q) => q,
            Err(Error::OutsideWindow) => continue,
            Err(e) => return Err(e),
        };
        let mut meets = false;
        for c in support {
            if space.cubes.relation(&q, c.cube().expect("family cylinders have cube bases"))? != CubeRelation::Disjoint {
                meets = true;
                break;
            }
        }
        if !meets {
            continue;
        }
        let mut i = 1usize;
        loop {
            let log_r = i as f64 * step;
            if log_r > cfg.max_log_r {
                break;
            }
            i += 1;
            let (adm_lo, adm_hi) = space.admissible_log_a(k, log_r).expect("log r is positive");
            let lo = adm_lo.max(t - log_r).max(t_lo - log_r);
            let hi = adm_hi.min(t + log_r).min(t_hi + log_r);
            if lo >= hi {
                continue;
            }
            let first = (lo / step).ceil() as i64;
            let last = (hi / step).floor() as i64;
            for j in first..=last {
                let log_a = j as f64 * step;
                if log_a <= t - log_r || log_a >= t + log_r {
                    continue;
                }
                out.push(Cylinder::from_logs(log_r, log_a, BaseSet::Cube(q.clone())));
            }
        }
    }
    Ok(out)
}

/// `M_Z f(x)` over the catalog together with the family chain through `x`.
/// This never exceeds the supremum over all admissible cylinders.
pub fn hl_maximal(fam: &DyadicFamily, f: &SimpleFunction, cfg: &CatalogConfig, n: &BasePoint, t: f64) -> Result<f64> {
    if f.is_zero() {
        return Ok(0.0);
    }
    let mut best = match fam.chain_at(n, t) {
        Ok(chain) => chain
            .iter()
            .map(|&c| f.integral_abs(fam, c) / fam.node(c).mu)
            .fold(0.0, f64::max),
        Err(Error::Uncovered) => 0.0,
        Err(e) => return Err(e),
    };
    let support: Vec<Cylinder> = f.support_nodes().map(|i| fam.node(i).cylinder.clone()).collect();
    for p in catalog_through(&fam.space, cfg, n, t, &support)? {
        let mu = fam.space.cylinder_measure(&p)?;
        best = best.max(f.integral_abs_over(fam, &p)? / mu);
    }
    Ok(best)
}

/// Indices of the greedy disjoint subfamily: scan by (cube generation, cube
/// key, log a, position) and keep every cylinder disjoint from those kept.
pub fn greedy_cover(space: &FlowSpace, cands: &[Cylinder]) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    for c in cands {
        if c.cube().is_none() {
            return Err(Error::IncomparableBases);
        }
    }
    order.sort_by(|&i, &j| {
        let (a, b) = (cands[i].cube().unwrap(), cands[j].cube().unwrap());
        a.generation
            .cmp(&b.generation)
            .then_with(|| a.key.0.cmp(&b.key.0))
            .then_with(|| cands[i].log_a().total_cmp(&cands[j].log_a()))
            .then_with(|| i.cmp(&j))
    });
    let mut chosen: Vec<usize> = Vec::new();
    for i in order {
        let mut free = true;
        for &j in &chosen {
            if space.intersects(&cands[i], &cands[j])? {
                free = false;
                break;
            }
        }
        if free {
            chosen.push(i);
        }
    }
    Ok(chosen)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverCheck {
    pub disjoint: bool,
    /// Every candidate meets a selected cylinder of no finer generation.
    pub matched: bool,
    /// Sampled candidate points outside the `C₂`-envelope of their match.
    pub escapes: usize,
    pub sampled: usize,
}

impl CoverCheck {
    pub fn holds(&self) -> bool {
        self.disjoint && self.matched && self.escapes == 0
    }
}

/// Checks the covering postconditions, sampling `per_cylinder` points of each candidate.
pub fn verify_cover(
    space: &FlowSpace,
    cands: &[Cylinder],
    chosen: &[usize],
    per_cylinder: usize,
    rng: &mut dyn RngCore,
) -> Result<CoverCheck> {
    let mut disjoint = true;
    for (x, &i) in chosen.iter().enumerate() {
        for &j in &chosen[x + 1..] {
            disjoint &= !space.intersects(&cands[i], &cands[j])?;
        }
    }
    let c2 = space.c2();
    let (mut matched, mut escapes, mut sampled) = (true, 0, 0);
    for p in cands {
        let mut best: Option<usize> = None;
        for &j in chosen {
            if space.intersects(p, &cands[j])? {
                let g = cands[j].cube().unwrap().generation;
                if best.map_or(true, |b| g < cands[b].cube().unwrap().generation) {
                    best = Some(j);
                }
            }
        }
        let Some(r) = best else {
            matched = false;
            continue;
        };
        if cands[r].cube().unwrap().generation > p.cube().unwrap().generation {
            matched = false;
        }
        let env = space.envelope(&cands[r], c2)?;
        for _ in 0..per_cylinder {
            let (n, t) = space.sample_flow(p, rng)?;
            sampled += 1;
            if !space.contains_flow(&env, &n, t) {
                escapes += 1;
            }
        }
    }
    Ok(CoverCheck {
        disjoint,
        matched,
        escapes,
        sampled,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub functions: usize,
    pub alphas_per_function: usize,
    pub terms: usize,
    /// Generations the random terms are drawn from.
    pub term_generations: (i32, i32),
    /// Sample points per function, stratified over family cylinders.
    pub samples: usize,
    pub catalog: CatalogConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub function_id: usize,
    pub alpha: f64,
    pub level_measure: f64,
    pub bound: f64,
    pub margin: f64,
}

impl CampaignRow {
    pub fn holds(&self) -> bool {
        self.level_measure <= self.bound
    }
}

/// Estimates `µ({M_Z f > α})` by stratified sampling of the region and
/// compares it with `C₂‖f‖₁/α`. The `α`-grid descends from `2 sup|f|` by
/// factors of 2 and stops at `‖f‖₁/µ(region)`. The margin is `bound − level`.
pub fn weak11_campaign(fam: &DyadicFamily, cfg: &CampaignConfig) -> Result<Vec<CampaignRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c2 = fam.space.c2();
    let (g_lo, g_hi) = fam.generation_range();
    let mut strata = fam.generation(g_lo)?.to_vec();
    for g in g_lo + 1..=g_hi {
        let level = fam.generation(g)?;
        if level.len() * 4 > cfg.samples {
            break;
        }
        strata = level.to_vec();
    }
    let region = fam.region_measure();
    let mut rows = Vec::new();
    for fid in 0..cfg.functions {
        let f = random_simple_function(fam, cfg.terms, cfg.term_generations, &mut rng)?;
        let norm = f.norm1();
        if norm == 0.0 {
            continue;
        }
        // Stratify over the finest generation leaving at least four samples
        // per cylinder; each stratum gets samples in proportion to its measure.
        let mut points = Vec::with_capacity(cfg.samples);
        let mut weights = Vec::with_capacity(cfg.samples);
        for &id in &strata {
            let node = fam.node(id);
            let share = ((cfg.samples as f64) * node.mu / region).round().max(1.0) as usize;
            for _ in 0..share {
                points.push(fam.space.sample_flow(&node.cylinder, &mut rng)?);
                weights.push(node.mu / share as f64);
            }
        }
        let values: Vec<f64> = points
            .par_iter()
            .map(|(n, t)| hl_maximal(fam, &f, &cfg.catalog, n, *t))
            .collect::<Result<_>>()?;
        let hi = 2.0 * f.sup_abs(fam);
        let lo = norm / region;
        let mut alpha = hi;
        for _ in 0..cfg.alphas_per_function {
            if alpha < lo {
                break;
            }
            let level: f64 = values
                .iter()
                .zip(&weights)
                .filter(|(v, _)| **v > alpha)
                .fold(0.0, |acc, (_, w)| acc + w);
            let bound = c2 * norm / alpha;
            rows.push(CampaignRow {
                function_id: fid,
                alpha,
                level_measure: level,
                bound,
                margin: bound - level,
            });
            alpha /= 2.0;
        }
    }
    Ok(rows)
}

/// CSV with columns `function_id,alpha,level_measure,bound,margin`.
pub fn write_campaign_csv<W: Write>(rows: &[CampaignRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "function_id,alpha,level_measure,bound,margin")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.11e},{:.11e},{:.11e},{:.11e}",
            r.function_id, r.alpha, r.level_measure, r.bound, r.margin
        )?;
    }
    Ok(())
}
