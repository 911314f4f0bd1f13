//! Systems of dyadic cubes on `(N, d_N, µ_N)` with Christ's four properties:
//! disjoint generations, nesting, eccentricity
//! `B(n_Q, cδᵏ) ⊂ Q ⊂ B(n_Q, C₁δᵏ)` and volume control
//! `µ_N(p_N(Q)) ≤ C₁µ_N(Q)`.
//!
//! [`AbelianDyadic`] is the exact half-open `b`-adic grid on ℝᵐ.
//! [`NetCubes`] is a windowed construction from nested maximal nets, used on
//! ℍ¹; its constants are certified by sampling at build time.

use std::collections::HashMap;
use std::fmt::Debug;
use std::sync::Mutex;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::group::{BasePoint, GroupSpec};
use crate::measure::{FlowMeasure, KORANYI_BALL_VOLUME};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeParams {
    pub delta: f64,
    pub c: f64,
    pub c1: f64,
    pub window: f64,
}

impl CubeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!("δ must lie in (0,1), got {}", self.delta)));
        }
        if !(self.c1 >= 3.0) || !(self.c > 0.0) || self.c > self.c1 {
            return Err(Error::InvalidParameter(format!(
                "cube constants need 0 < c ≤ C₁ and C₁ ≥ 3, got c={} C₁={}",
                self.c, self.c1
            )));
        }
        if !(self.window > 0.0) {
            return Err(Error::InvalidParameter("window radius must be positive".into()));
        }
        Ok(())
    }

    /// `δᵏ`.
    pub fn side(&self, k: i32) -> f64 {
        self.delta.powi(k)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CubeKey(pub SmallVec<[i64; 3]>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicCube {
    pub generation: i32,
    pub key: CubeKey,
    pub center: BasePoint,
}

impl DyadicCube {
    pub fn same_cube(&self, other: &DyadicCube) -> bool {
        self.generation == other.generation && self.key == other.key
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CubeRelation {
    Equal,
    /// The first cube strictly contains the second.
    Contains,
    /// The first cube is strictly contained in the second.
    ContainedIn,
    Disjoint,
}

pub trait CubeSystem: Send + Sync + Debug {
    fn spec(&self) -> GroupSpec;
    fn params(&self) -> &CubeParams;
    fn measure(&self) -> &FlowMeasure;
    fn cube_at(&self, n: &BasePoint, k: i32) -> Result<DyadicCube>;
    fn cube(&self, k: i32, key: &CubeKey) -> Result<DyadicCube>;
    fn parent(&self, q: &DyadicCube) -> Result<DyadicCube>;
    fn children(&self, q: &DyadicCube) -> Result<Vec<DyadicCube>>;
    fn contains(&self, q: &DyadicCube, n: &BasePoint) -> bool;
    /// `µ_N(Q)`.
    fn mu(&self, q: &DyadicCube) -> Result<f64>;
    /// A point of `Q`, uniform with respect to Haar measure.
    fn sample(&self, q: &DyadicCube, rng: &mut dyn RngCore) -> Result<BasePoint>;
    /// Generation-`k` cubes meeting the configured window.
    fn cubes_in_window(&self, k: i32) -> Result<Vec<DyadicCube>>;
    /// Inclusive range of generations the system can answer, if bounded.
    fn generation_range(&self) -> Option<(i32, i32)> {
        None
    }
    /// Whether the cube meets the spatial window.
    fn meets_window(&self, _q: &DyadicCube) -> bool {
        true
    }
    /// True for cubes cut by the window edge.
    fn is_partial(&self, _q: &DyadicCube) -> bool {
        false
    }
    /// Whether `µ_N(Q)` is an exact value rather than an estimate.
    fn exact_measures(&self) -> bool {
        true
    }

    fn ancestor(&self, q: &DyadicCube, k: i32) -> Result<DyadicCube> {
        if k > q.generation {
            return Err(Error::InvalidParameter(format!(
                "ancestor generation {k} is finer than {}",
                q.generation
            )));
        }
        let mut cur = q.clone();
        while cur.generation > k {
            cur = self.parent(&cur)?;
        }
        Ok(cur)
    }

    fn relation(&self, a: &DyadicCube, b: &DyadicCube) -> Result<CubeRelation> {
        if a.generation <= b.generation {
            let up = self.ancestor(b, a.generation)?;
            Ok(match (up.same_cube(a), a.generation == b.generation) {
                (true, true) => CubeRelation::Equal,
                (true, false) => CubeRelation::Contains,
                (false, _) => CubeRelation::Disjoint,
            })
        } else {
            Ok(match self.relation(b, a)? {
                CubeRelation::Contains => CubeRelation::ContainedIn,
                r => r,
            })
        }
    }

    /// `µ_N(Q₁ ∩ Q₂)`, exact for nested-or-disjoint cubes.
    fn overlap_mu(&self, a: &DyadicCube, b: &DyadicCube) -> Result<f64> {
        match self.relation(a, b)? {
            CubeRelation::Equal | CubeRelation::ContainedIn => self.mu(a),
            CubeRelation::Contains => self.mu(b),
            CubeRelation::Disjoint => Ok(0.0),
        }
    }
}

/// The half-open grid `∏[iⱼδᵏ, (iⱼ+1)δᵏ)` on ℝᵐ with `δ = 1/b`.
#[derive(Debug)]
pub struct AbelianDyadic {
    m: usize,
    base: i64,
    measure: FlowMeasure,
    params: CubeParams,
    cache: Mutex<HashMap<(i32, CubeKey), f64>>,
}

impl AbelianDyadic {
    /// Dyadic cubes (`b = 2`) over the window box `[−W, W]ᵐ`.
    pub fn dyadic(measure: FlowMeasure, window: f64) -> Result<Self> {
        Self::new(measure, 2, window)
    }

    pub fn new(measure: FlowMeasure, base: i64, window: f64) -> Result<Self> {
        let m = match measure.spec {
            GroupSpec::Abelian { m } => m,
            GroupSpec::Heisenberg => {
                return Err(Error::InvalidParameter("grid cubes need an abelian base".into()))
            }
        };
        if base < 2 {
            return Err(Error::InvalidParameter(format!("grid base must be ≥ 2, got {base}")));
        }
        let children = (base as f64).powi(m as i32);
        let mut sys = AbelianDyadic {
            m,
            base,
            measure,
            params: CubeParams {
                delta: 1.0 / base as f64,
                c: 0.5,
                c1: 3f64.max(children).max((m as f64).sqrt()),
                window,
            },
            cache: Mutex::new(HashMap::new()),
        };
        sys.params.validate()?;
        if !sys.measure.is_uniform() {
            sys.params.c1 = sys.params.c1.max(sys.scan_volume_ratio()?);
        }
        Ok(sys)
    }

    /// Largest `µ_N(Q)/µ_N(Q')` over children `Q'` for cubes in the window,
    /// from side `≈ 2W` down to side `≈ W/8`.
    fn scan_volume_ratio(&self) -> Result<f64> {
        let k0 = self.coarse_generation();
        let mut worst: f64 = 0.0;
        for k in k0..k0 + 4 {
            for q in self.cubes_in_window(k)? {
                let mq = self.mu(&q)?;
                for ch in self.children(&q)? {
                    worst = worst.max(mq / self.mu(&ch)?);
                }
            }
        }
        Ok(worst)
    }

    /// Coarsest generation whose side still fits inside `2W`.
    pub fn coarse_generation(&self) -> i32 {
        (2.0 * self.params.window).log(self.params.delta).ceil() as i32
    }

    fn bounds(&self, k: i32, key: &CubeKey) -> (Vec<f64>, Vec<f64>) {
        let s = self.params.side(k);
        let lo: Vec<f64> = key.0.iter().map(|&i| i as f64 * s).collect();
        let hi: Vec<f64> = key.0.iter().map(|&i| (i + 1) as f64 * s).collect();
        (lo, hi)
    }

    /// The box `∏[loⱼ, hiⱼ)` of a cube.
    pub fn cube_box(&self, q: &DyadicCube) -> (Vec<f64>, Vec<f64>) {
        self.bounds(q.generation, &q.key)
    }

    fn make(&self, k: i32, key: CubeKey) -> DyadicCube {
        let s = self.params.side(k);
        let center = key.0.iter().map(|&i| (i as f64 + 0.5) * s).collect::<Vec<_>>();
        DyadicCube {
            generation: k,
            key,
            center: BasePoint::from(center),
        }
    }
}

impl CubeSystem for AbelianDyadic {
    fn spec(&self) -> GroupSpec {
        self.measure.spec
    }

    fn params(&self) -> &CubeParams {
        &self.params
    }

    fn measure(&self) -> &FlowMeasure {
        &self.measure
    }

    fn cube_at(&self, n: &BasePoint, k: i32) -> Result<DyadicCube> {
        self.measure.spec.check_base(n)?;
        let s = self.params.side(k);
        let key = n.0.iter().map(|v| (v / s).floor() as i64).collect();
        Ok(self.make(k, CubeKey(key)))
    }

    fn cube(&self, k: i32, key: &CubeKey) -> Result<DyadicCube> {
        if key.0.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: key.0.len(),
            });
        }
        Ok(self.make(k, key.clone()))
    }

    fn parent(&self, q: &DyadicCube) -> Result<DyadicCube> {
        let key = q.key.0.iter().map(|i| i.div_euclid(self.base)).collect();
        Ok(self.make(q.generation - 1, CubeKey(key)))
    }

    fn children(&self, q: &DyadicCube) -> Result<Vec<DyadicCube>> {
        let b = self.base;
        let total = b.pow(self.m as u32);
        Ok((0..total)
            .map(|mut idx| {
                let key = q
                    .key
                    .0
                    .iter()
                    .map(|i| {
                        let d = idx % b;
                        idx /= b;
                        i * b + d
                    })
                    .collect();
                self.make(q.generation + 1, CubeKey(key))
            })
            .collect())
    }

    fn contains(&self, q: &DyadicCube, n: &BasePoint) -> bool {
        let s = self.params.side(q.generation);
        n.0.len() == self.m && n.0.iter().zip(&q.key.0).all(|(v, &i)| (v / s).floor() as i64 == i)
    }

    fn mu(&self, q: &DyadicCube) -> Result<f64> {
        if self.measure.is_uniform() {
            return Ok(self.params.side(q.generation).powi(self.m as i32));
        }
        let id = (q.generation, q.key.clone());
        if let Some(v) = self.cache.lock().unwrap().get(&id) {
            return Ok(*v);
        }
        let (lo, hi) = self.bounds(q.generation, &q.key);
        let v = self.measure.mu_n_box(&lo, &hi)?;
        self.cache.lock().unwrap().insert(id, v);
        Ok(v)
    }

    fn sample(&self, q: &DyadicCube, rng: &mut dyn RngCore) -> Result<BasePoint> {
        let s = self.params.side(q.generation);
        Ok(BasePoint::from(
            q.key.0.iter().map(|&i| (i as f64 + rng.gen::<f64>()) * s).collect::<Vec<_>>(),
        ))
    }

    fn meets_window(&self, q: &DyadicCube) -> bool {
        let (lo, hi) = self.cube_box(q);
        let w = self.params.window;
        lo.iter().zip(&hi).all(|(l, h)| *l < w && *h > -w)
    }

    fn cubes_in_window(&self, k: i32) -> Result<Vec<DyadicCube>> {
        let s = self.params.side(k);
        let w = self.params.window;
        let lo = (-w / s).floor() as i64;
        let hi = (w / s).ceil() as i64 - 1;
        let per_axis = (hi - lo + 1) as u128;
        if per_axis.pow(self.m as u32) > 4_000_000 {
            return Err(Error::WindowExhausted(format!(
                "generation {k} has too many cubes in the window"
            )));
        }
        let mut out = Vec::new();
        let mut idx = vec![lo; self.m];
        loop {
            out.push(self.make(k, CubeKey(SmallVec::from_slice(&idx))));
            let mut axis = 0;
            loop {
                if axis == self.m {
                    return Ok(out);
                }
                idx[axis] += 1;
                if idx[axis] <= hi {
                    break;
                }
                idx[axis] = lo;
                axis += 1;
            }
        }
    }
}

/// Build options for [`NetCubes`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub delta: f64,
    /// Radius of the window ball around `1_N`.
    pub window: f64,
    /// Finest generation represented.
    pub finest: i32,
    /// Candidate points drawn per unit of `µ_N(B(0, δ^finest/2))`.
    pub oversampling: f64,
    /// Monte Carlo points used for cell measures and certification.
    pub samples: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            delta: 0.5,
            window: 8.0,
            finest: -1,
            oversampling: 8.0,
            samples: 200_000,
            seed: 0x5eed,
        }
    }
}

/// Empirical constants measured while building a net system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetCertificate {
    pub inner_min: f64,
    pub outer_max: f64,
    pub volume_ratio_max: f64,
    pub children_max: usize,
    pub children_min: usize,
    pub centers: usize,
}

/// Cubes from nested maximal nets `X_{k₀} ⊂ X_{k₀+1} ⊂ … ⊂ X_K` in a window
/// ball. A center first appearing at level `j` hangs from its nearest
/// center of level `j−1` (lowest id on ties); the generation-`k` cube of a
/// point is the level-`k` ancestor of its nearest finest center.
#[derive(Debug)]
pub struct NetCubes {
    measure: FlowMeasure,
    params: CubeParams,
    coarsest: i32,
    finest: i32,
    centers: Vec<BasePoint>,
    level: Vec<i32>,
    up: Vec<Option<usize>>,
    kids: Vec<Vec<usize>>,
    finest_grid: Grid,
    /// Sample counts per finest center.
    counts: Vec<Vec<u64>>,
    total_samples: u64,
    window_volume: f64,
    certificate: NetCertificate,
}

const SAFETY_INNER: f64 = 0.8;
const SAFETY_OUTER: f64 = 1.25;

impl NetCubes {
    pub fn build(measure: FlowMeasure, cfg: NetConfig) -> Result<Self> {
        if !measure.is_uniform() {
            return Err(Error::InvalidParameter("net cubes support Haar measure only".into()));
        }
        if !(cfg.delta > 0.0 && cfg.delta < 1.0) || !(cfg.window > 0.0) || cfg.samples == 0 {
            return Err(Error::InvalidParameter("invalid net configuration".into()));
        }
        let spec = measure.spec;
        let coarsest = cfg.window.log(cfg.delta).ceil() as i32;
        if cfg.finest < coarsest + 1 {
            return Err(Error::WindowExhausted(format!(
                "finest generation {} must be finer than the coarsest generation {coarsest} the window allows",
                cfg.finest
            )));
        }
        let window_volume = ball_volume(spec, cfg.window);
        let fine_side = cfg.delta.powi(cfg.finest);
        let expected = window_volume / ball_volume(spec, 0.5 * fine_side);
        let n_cand = (cfg.oversampling * expected).ceil() as usize;
        if n_cand > 5_000_000 {
            return Err(Error::WindowExhausted("net would need too many candidates".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut candidates = Vec::with_capacity(n_cand + 1);
        candidates.push(spec.base_identity());
        while candidates.len() < n_cand {
            candidates.push(sample_ball(spec, &spec.base_identity(), cfg.window, &mut rng));
        }

        let mut centers: Vec<BasePoint> = Vec::new();
        let mut level = Vec::new();
        let mut taken = vec![false; candidates.len()];
        for k in coarsest..=cfg.finest {
            let sep = cfg.delta.powi(k);
            let mut grid = Grid::new(spec, sep, cfg.window);
            for (id, c) in centers.iter().enumerate() {
                grid.insert(id, c);
            }
            for (ci, cand) in candidates.iter().enumerate() {
                if taken[ci] {
                    continue;
                }
                let clash = grid
                    .near(cand, sep)
                    .any(|id| spec.dist_n(&centers[id], cand) < sep);
                if !clash {
                    taken[ci] = true;
                    let id = centers.len();
                    centers.push(cand.clone());
                    level.push(k);
                    grid.insert(id, cand);
                }
            }
        }

        // Parent links: nearest center of the previous level.
        let mut up = vec![None; centers.len()];
        let mut kids = vec![Vec::new(); centers.len()];
        for k in coarsest + 1..=cfg.finest {
            let prev: Vec<usize> = (0..centers.len()).filter(|&i| level[i] < k).collect();
            let mut grid = Grid::new(spec, cfg.delta.powi(k - 1), cfg.window);
            for &i in &prev {
                grid.insert(i, &centers[i]);
            }
            for i in (0..centers.len()).filter(|&i| level[i] == k) {
                let p = grid
                    .nearest(&centers[i], cfg.delta.powi(k - 1), |j| spec.dist_n(&centers[j], &centers[i]))
                    .ok_or_else(|| Error::WindowExhausted("orphan net center".into()))?;
                up[i] = Some(p);
                kids[p].push(i);
            }
        }

        let mut finest_grid = Grid::new(spec, fine_side, cfg.window);
        for (i, c) in centers.iter().enumerate() {
            finest_grid.insert(i, c);
        }
        let levels = (cfg.finest - coarsest + 1) as usize;
        let mut sys = NetCubes {
            measure,
            params: CubeParams {
                delta: cfg.delta,
                c: 1.0,
                c1: 3.0,
                window: cfg.window,
            },
            coarsest,
            finest: cfg.finest,
            centers,
            level,
            up,
            kids,
            finest_grid,
            counts: vec![Vec::new(); levels],
            total_samples: cfg.samples as u64,
            window_volume,
            certificate: NetCertificate {
                inner_min: f64::INFINITY,
                outer_max: 0.0,
                volume_ratio_max: 0.0,
                children_max: 0,
                children_min: usize::MAX,
                centers: 0,
            },
        };
        sys.certify(cfg.samples, cfg.seed ^ 0x9e37_79b9_7f4a_7c15)?;
        Ok(sys)
    }

    pub fn certificate(&self) -> &NetCertificate {
        &self.certificate
    }

    pub fn num_centers(&self) -> usize {
        self.centers.len()
    }

    fn spec_(&self) -> GroupSpec {
        self.measure.spec
    }

    fn nearest_finest(&self, n: &BasePoint) -> usize {
        let spec = self.spec_();
        let mut r = self.params.side(self.finest);
        loop {
            if let Some(i) = self.finest_grid.nearest(n, r, |j| spec.dist_n(&self.centers[j], n)) {
                return i;
            }
            r *= 2.0;
        }
    }

    fn ancestor_id(&self, mut id: usize, k: i32) -> usize {
        while self.level[id] > k {
            id = self.up[id].expect("non-root center has a parent");
        }
        id
    }

    fn owner(&self, n: &BasePoint, k: i32) -> usize {
        self.ancestor_id(self.nearest_finest(n), k)
    }

    fn check_generation(&self, k: i32) -> Result<()> {
        if k < self.coarsest || k > self.finest {
            return Err(Error::WindowExhausted(format!(
                "generation {k} outside the built range [{}, {}]",
                self.coarsest, self.finest
            )));
        }
        Ok(())
    }

    fn in_window(&self, n: &BasePoint) -> bool {
        self.spec_().base_norm(n) < self.params.window
    }

    fn make(&self, k: i32, id: usize) -> DyadicCube {
        DyadicCube {
            generation: k,
            key: CubeKey(SmallVec::from_slice(&[id as i64])),
            center: self.centers[id].clone(),
        }
    }

    fn id_of(&self, q: &DyadicCube) -> Result<usize> {
        self.check_generation(q.generation)?;
        match q.key.0.as_slice() {
            [id] if *id >= 0 && (*id as usize) < self.centers.len() && self.level[*id as usize] <= q.generation => {
                Ok(*id as usize)
            }
            _ => Err(Error::InvalidParameter(format!("unknown net cube key {:?}", q.key.0))),
        }
    }

    /// Sample-based certification of `c`, `C₁` and cell measures.
    fn certify(&mut self, samples: usize, seed: u64) -> Result<()> {
        let spec = self.spec_();
        let levels = (self.finest - self.coarsest + 1) as usize;
        let n = self.centers.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fine_counts = vec![0u64; n];
        let mut inner = vec![f64::INFINITY; n * levels];
        let mut outer: f64 = 0.0;
        let grids: Vec<Grid> = (self.coarsest..=self.finest)
            .map(|k| {
                let mut g = Grid::new(spec, self.params.side(k), self.params.window);
                for i in (0..n).filter(|&i| self.level[i] <= k) {
                    g.insert(i, &self.centers[i]);
                }
                g
            })
            .collect();
        for _ in 0..samples {
            let y = sample_ball(spec, &spec.base_identity(), self.params.window, &mut rng);
            let f = self.nearest_finest(&y);
            fine_counts[f] += 1;
            for (li, k) in (self.coarsest..=self.finest).enumerate() {
                let side = self.params.side(k);
                let own = self.ancestor_id(f, k);
                outer = outer.max(spec.dist_n(&self.centers[own], &y) / side);
                for j in grids[li].near(&y, side) {
                    if j != own {
                        let d = spec.dist_n(&self.centers[j], &y) / side;
                        let slot = &mut inner[li * n + j];
                        *slot = slot.min(d);
                    }
                }
            }
        }
        let mut counts = vec![vec![0u64; n]; levels];
        counts[levels - 1] = fine_counts;
        for li in (0..levels - 1).rev() {
            let k = self.coarsest + li as i32;
            let mut acc = vec![0u64; n];
            for i in 0..n {
                let v = counts[li + 1][i];
                if v > 0 {
                    acc[self.ancestor_id(i, k)] += v;
                }
            }
            counts[li] = acc;
        }
        self.counts = counts;

        let mut cert = NetCertificate {
            inner_min: f64::INFINITY,
            outer_max: outer,
            volume_ratio_max: 1.0,
            children_max: 0,
            children_min: usize::MAX,
            centers: n,
        };
        for (li, k) in (self.coarsest..=self.finest).enumerate() {
            for i in (0..n).filter(|&i| self.level[i] <= k) {
                cert.inner_min = cert.inner_min.min(inner[li * n + i].min(1.0));
                if k < self.finest {
                    let q = self.make(k, i);
                    let ch = self.children(&q)?;
                    cert.children_max = cert.children_max.max(ch.len());
                    cert.children_min = cert.children_min.min(ch.len());
                    let mq = self.counts[li][i] as f64;
                    for c in ch {
                        let mc = self.counts[li + 1][self.id_of(&c)?] as f64;
                        if mc > 0.0 && !self.is_partial(&c) {
                            cert.volume_ratio_max = cert.volume_ratio_max.max(mq / mc);
                        }
                    }
                }
            }
        }
        self.params.c = SAFETY_INNER * cert.inner_min;
        self.params.c1 = 3f64
            .max(SAFETY_OUTER * cert.outer_max)
            .max(SAFETY_OUTER * cert.volume_ratio_max)
            .max(cert.children_max as f64);
        self.certificate = cert;
        if !(self.params.c > 0.0) {
            return Err(Error::WindowExhausted("net cells have no certified inner radius".into()));
        }
        self.params.validate()
    }
}

impl CubeSystem for NetCubes {
    fn spec(&self) -> GroupSpec {
        self.measure.spec
    }

    fn params(&self) -> &CubeParams {
        &self.params
    }

    fn measure(&self) -> &FlowMeasure {
        &self.measure
    }

    fn cube_at(&self, n: &BasePoint, k: i32) -> Result<DyadicCube> {
        self.spec_().check_base(n)?;
        self.check_generation(k)?;
        if !self.in_window(n) {
            return Err(Error::OutsideWindow);
        }
        Ok(self.make(k, self.owner(n, k)))
    }

    fn cube(&self, k: i32, key: &CubeKey) -> Result<DyadicCube> {
        let q = DyadicCube {
            generation: k,
            key: key.clone(),
            center: self.spec_().base_identity(),
        };
        Ok(self.make(k, self.id_of(&q)?))
    }

    fn parent(&self, q: &DyadicCube) -> Result<DyadicCube> {
        let id = self.id_of(q)?;
        self.check_generation(q.generation - 1)?;
        Ok(self.make(q.generation - 1, self.ancestor_id(id, q.generation - 1)))
    }

    fn children(&self, q: &DyadicCube) -> Result<Vec<DyadicCube>> {
        let id = self.id_of(q)?;
        let k = q.generation + 1;
        self.check_generation(k)?;
        let mut out = vec![self.make(k, id)];
        out.extend(
            self.kids[id]
                .iter()
                .filter(|&&j| self.level[j] == k)
                .map(|&j| self.make(k, j)),
        );
        Ok(out)
    }

    fn contains(&self, q: &DyadicCube, n: &BasePoint) -> bool {
        match self.id_of(q) {
            Ok(id) => n.dim() == self.spec_().base_dim() && self.in_window(n) && self.owner(n, q.generation) == id,
            Err(_) => false,
        }
    }

    fn mu(&self, q: &DyadicCube) -> Result<f64> {
        let id = self.id_of(q)?;
        let li = (q.generation - self.coarsest) as usize;
        Ok(self.window_volume * self.counts[li][id] as f64 / self.total_samples as f64)
    }

    fn sample(&self, q: &DyadicCube, rng: &mut dyn RngCore) -> Result<BasePoint> {
        let id = self.id_of(q)?;
        let r = (self.certificate.outer_max * 1.5 + 0.5) * self.params.side(q.generation);
        for _ in 0..100_000 {
            let y = sample_ball(self.spec_(), &self.centers[id], r, rng);
            if self.contains(q, &y) {
                return Ok(y);
            }
        }
        Err(Error::Unmeasurable("rejection sampling found no point of the cell".into()))
    }

    fn cubes_in_window(&self, k: i32) -> Result<Vec<DyadicCube>> {
        self.check_generation(k)?;
        Ok((0..self.centers.len())
            .filter(|&i| self.level[i] <= k)
            .map(|i| self.make(k, i))
            .collect())
    }

    fn generation_range(&self) -> Option<(i32, i32)> {
        Some((self.coarsest, self.finest))
    }

    fn is_partial(&self, q: &DyadicCube) -> bool {
        let reach = self.spec_().base_norm(&q.center) + self.params.c1 * self.params.side(q.generation);
        reach >= self.params.window
    }

    fn exact_measures(&self) -> bool {
        false
    }
}

fn ball_volume(spec: GroupSpec, r: f64) -> f64 {
    match spec {
        GroupSpec::Abelian { m } => crate::measure::unit_ball_volume(m) * r.powi(m as i32),
        GroupSpec::Heisenberg => KORANYI_BALL_VOLUME * r.powi(4),
    }
}

/// A Haar-uniform point of `B_N(center, r)`: left-translate a dilated point of
/// the unit ball, drawn by rejection from its bounding box.
pub fn sample_ball(spec: GroupSpec, center: &BasePoint, r: f64, rng: &mut (impl RngCore + ?Sized)) -> BasePoint {
    let dim = spec.base_dim();
    let half: SmallVec<[f64; 3]> = match spec {
        GroupSpec::Abelian { .. } => SmallVec::from_elem(1.0, dim),
        GroupSpec::Heisenberg => SmallVec::from_slice(&[2.0, 2.0, 1.0]),
    };
    loop {
        let u = BasePoint::from(half.iter().map(|h| rng.gen_range(-h..*h)).collect::<Vec<_>>());
        if spec.base_norm(&u) < 1.0 {
            return spec.base_mul(center, &spec.dilate(r, &u));
        }
    }
}

/// Bucket grid for radius queries. On ℍ¹ the τ-extent of a Korányi ball of
/// radius `ρ` around `(q, p, τ)` is `ρ² + |(q,p)|ρ`.
#[derive(Debug)]
struct Grid {
    spec: GroupSpec,
    h: f64,
    h_tau: f64,
    cells: HashMap<SmallVec<[i64; 3]>, Vec<usize>>,
}

impl Grid {
    fn new(spec: GroupSpec, h: f64, window: f64) -> Self {
        Grid {
            spec,
            h,
            h_tau: h * h + 2.0 * window * h,
            cells: HashMap::new(),
        }
    }

    fn key(&self, n: &BasePoint) -> SmallVec<[i64; 3]> {
        let x = n.as_slice();
        match self.spec {
            GroupSpec::Abelian { .. } => x.iter().map(|v| (v / self.h).floor() as i64).collect(),
            GroupSpec::Heisenberg => SmallVec::from_slice(&[
                (x[0] / self.h).floor() as i64,
                (x[1] / self.h).floor() as i64,
                (x[2] / self.h_tau).floor() as i64,
            ]),
        }
    }

    fn insert(&mut self, id: usize, n: &BasePoint) {
        let k = self.key(n);
        self.cells.entry(k).or_default().push(id);
    }

    /// Ids in buckets that may hold points within `rho` of `n`.
    fn near<'a>(&'a self, n: &BasePoint, rho: f64) -> impl Iterator<Item = usize> + 'a {
        let x = n.as_slice();
        let ext: SmallVec<[f64; 3]> = match self.spec {
            GroupSpec::Abelian { .. } => SmallVec::from_elem(rho, x.len()),
            GroupSpec::Heisenberg => {
                let planar = (x[0] * x[0] + x[1] * x[1]).sqrt();
                SmallVec::from_slice(&[2.0 * rho, 2.0 * rho, rho * rho + planar * rho])
            }
        };
        let sizes: SmallVec<[f64; 3]> = match self.spec {
            GroupSpec::Abelian { .. } => SmallVec::from_elem(self.h, x.len()),
            GroupSpec::Heisenberg => SmallVec::from_slice(&[self.h, self.h, self.h_tau]),
        };
        let lo: SmallVec<[i64; 3]> = x.iter().zip(&ext).zip(&sizes).map(|((v, e), s)| ((v - e) / s).floor() as i64).collect();
        let hi: SmallVec<[i64; 3]> = x.iter().zip(&ext).zip(&sizes).map(|((v, e), s)| ((v + e) / s).floor() as i64).collect();
        let mut keys = Vec::new();
        let mut idx = lo.clone();
        'outer: loop {
            keys.push(idx.clone());
            let mut axis = 0;
            loop {
                if axis == idx.len() {
                    break 'outer;
                }
                idx[axis] += 1;
                if idx[axis] <= hi[axis] {
                    break;
                }
                idx[axis] = lo[axis];
                axis += 1;
            }
        }
        keys.into_iter()
            .filter_map(move |k| self.cells.get(&k))
            .flat_map(|v| v.iter().copied())
    }

    /// The nearest id within `rho`, lowest id on ties.
    fn nearest(&self, n: &BasePoint, rho: f64, dist: impl Fn(usize) -> f64) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for id in self.near(n, rho) {
            let d = dist(id);
            if d <= rho && best.map_or(true, |(bd, bi)| d < bd || (d == bd && id < bi)) {
                best = Some((d, id));
            }
        }
        best.map(|(_, i)| i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::VerticalField;
    use crate::measure::Density;

    fn line() -> AbelianDyadic {
        let mu = FlowMeasure::haar(GroupSpec::abelian(1).unwrap(), VerticalField::new(&[0.0])).unwrap();
        AbelianDyadic::dyadic(mu, 4.0).unwrap()
    }

    #[test]
    fn interval_arithmetic() {
        let sys = line();
        let q = sys.cube_at(&BasePoint::new(&[0.3]), 2).unwrap();
        assert_eq!(sys.cube_box(&q), (vec![0.25], vec![0.5]));
        assert_eq!(q.center.as_slice(), &[0.375]);
        let q1 = sys.cube_at(&BasePoint::new(&[0.3]), 1).unwrap();
        assert_eq!(sys.cube_box(&q1), (vec![0.0], vec![0.5]));
        let p = sys.parent(&q1).unwrap();
        assert_eq!(sys.cube_box(&p), (vec![0.0], vec![1.0]));
        let ch: Vec<_> = sys.children(&p).unwrap().iter().map(|c| sys.cube_box(c)).collect();
        assert_eq!(ch, vec![(vec![0.0], vec![0.5]), (vec![0.5], vec![1.0])]);
        assert!(sys.cube_at(&q.center, 2).unwrap().same_cube(&q));
    }

    #[test]
    fn negative_coordinates_and_half_open_boundaries() {
        let sys = line();
        let q = sys.cube_at(&BasePoint::new(&[-0.25]), 2).unwrap();
        assert_eq!(sys.cube_box(&q), (vec![-0.25], vec![0.0]));
        assert!(!sys.contains(&q, &BasePoint::new(&[0.0])));
        assert_eq!(sys.parent(&q).unwrap().key.0.as_slice(), &[-1]);
    }

    #[test]
    fn constants_and_counts() {
        for m in 1..=3 {
            let mu = FlowMeasure::haar(GroupSpec::abelian(m).unwrap(), VerticalField::new(&vec![0.0; m])).unwrap();
            let sys = AbelianDyadic::dyadic(mu, 2.0).unwrap();
            assert_eq!(sys.params().c1, 3f64.max(2f64.powi(m as i32)));
            let q = sys.cube_at(&BasePoint::from(vec![0.1; m]), 0).unwrap();
            let ch = sys.children(&q).unwrap();
            assert_eq!(ch.len(), 1 << m);
            let ratio = sys.mu(&sys.parent(&q).unwrap()).unwrap() / sys.mu(&q).unwrap();
            assert_eq!(ratio, 2f64.powi(m as i32));
        }
    }

    #[test]
    fn relations() {
        let sys = line();
        let a = sys.cube_at(&BasePoint::new(&[0.3]), 0).unwrap();
        let b = sys.cube_at(&BasePoint::new(&[0.3]), 3).unwrap();
        let c = sys.cube_at(&BasePoint::new(&[1.3]), 3).unwrap();
        assert_eq!(sys.relation(&a, &b).unwrap(), CubeRelation::Contains);
        assert_eq!(sys.relation(&b, &a).unwrap(), CubeRelation::ContainedIn);
        assert_eq!(sys.relation(&a, &c).unwrap(), CubeRelation::Disjoint);
        assert_eq!(sys.relation(&a, &a).unwrap(), CubeRelation::Equal);
        assert_eq!(sys.overlap_mu(&a, &b).unwrap(), 0.125);
    }

    #[test]
    fn window_enumeration_covers_box() {
        let sys = line();
        let cubes = sys.cubes_in_window(0).unwrap();
        assert_eq!(cubes.len(), 8);
        assert_eq!(cubes[0].key.0.as_slice(), &[-4]);
    }

    #[test]
    fn power_weight_constant_dominates_volume_ratios() {
        let mu = FlowMeasure::new(
            GroupSpec::abelian(1).unwrap(),
            VerticalField::new(&[0.0]),
            Density::Power { s: 1.0 },
        )
        .unwrap();
        let sys = AbelianDyadic::dyadic(mu, 4.0).unwrap();
        let c1 = sys.params().c1;
        assert!(c1 >= 3.0);
        let q = sys.cube_at(&BasePoint::new(&[0.1]), -2).unwrap();
        let mq = sys.mu(&q).unwrap();
        for ch in sys.children(&q).unwrap() {
            let mc = sys.mu(&ch).unwrap();
            assert!(mq <= c1 * mc && mq >= (1.0 + 1.0 / c1) * mc);
        }
    }

    #[test]
    fn heisenberg_ball_sampler_stays_in_ball() {
        let spec = GroupSpec::Heisenberg;
        let c = BasePoint::new(&[1.0, -2.0, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..2000 {
            let y = sample_ball(spec, &c, 0.7, &mut rng);
            assert!(spec.dist_n(&c, &y) < 0.7);
        }
    }

    #[test]
    fn small_heisenberg_net_is_consistent() {
        let mu = FlowMeasure::haar(GroupSpec::Heisenberg, VerticalField::new(&[1.0, 0.0])).unwrap();
        let cfg = NetConfig {
            window: 2.0,
            finest: 1,
            samples: 20_000,
            ..NetConfig::default()
        };
        let sys = NetCubes::build(mu, cfg).unwrap();
        let p = sys.params();
        assert!(p.c > 0.0 && p.c1 >= 3.0 && p.c <= p.c1);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let y = sample_ball(GroupSpec::Heisenberg, &BasePoint::zeros(3), 2.0, &mut rng);
            let fine = sys.cube_at(&y, 1).unwrap();
            let coarse = sys.cube_at(&y, 0).unwrap();
            assert!(sys.contains(&coarse, &y) && sys.contains(&fine, &y));
            assert!(sys.parent(&fine).unwrap().same_cube(&coarse));
            assert!(sys.children(&coarse).unwrap().iter().any(|c| c.same_cube(&fine)));
        }
        assert!(sys.cube_at(&BasePoint::new(&[0.0, 0.0, 5.0]), 0).is_err());
    }
}
