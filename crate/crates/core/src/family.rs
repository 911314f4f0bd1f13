//! The dyadic family `𝒟^Z`, materialized inside a window.
//!
//! The ascent chain `P₀ ⊂ P₁ ⊂ …` uses `p↔` whenever it is admissible and
//! otherwise alternates `p↑`, `p↓`, starting with `p↑`. Generation `−k` is
//! `S_k ∪ S̃_k ∪ ⋃_{ℓ>k} S̃_ℓ^{ℓ−k}` where `S_k` are the siblings of `P_k`,
//! `S̃_k` the siblings of `P_{k+1} ∖ P_k`, and `S̃_ℓ^m` the `m`-fold sons of
//! `S̃_ℓ`; positive generations are iterated sons.
//!
//! The family is built top-down from generation `−up`, whose cylinders tile
//! the slab `N × U(P_{up+1})`, and every expansion keeps only cubes meeting
//! the spatial window of the cube system. Each generation therefore tiles the
//! same region: the union of the top cubes times the slab.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cubes::{CubeKey, DyadicCube};
use crate::cylinder::{Admissibility, BaseSet, Cylinder, FlowSpace};
use crate::error::{Error, Result};
use crate::group::{BasePoint, GroupPoint};

/// Hard cap on materialized cylinders.
pub const MAX_NODES: usize = 4_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ascent {
    Lateral,
    Up,
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "S")]
    S,
    #[serde(rename = "S~")]
    STilde,
    #[serde(rename = "sons-of-S~")]
    SonsOfSTilde,
    #[serde(rename = "positive")]
    Positive,
}

/// How the base cylinder `P₀ = P_{r₀,Q₀}(1)` picks its cube generation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootChoice {
    /// Largest `k` with `δᵏ ≥ r₀²`: the lower end of the large range.
    Lower,
    /// Smallest `k` with `δᵏ ≤ λr₀ᵞ`: the upper end, so the first ascent is vertical.
    Upper,
    Generation(i32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilyConfig {
    pub r0: f64,
    pub root: RootChoice,
    /// Number of negative generations (ascent steps).
    pub up: usize,
    /// Number of positive generations.
    pub down: usize,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        FamilyConfig {
            r0: std::f64::consts::E * std::f64::consts::E,
            root: RootChoice::Lower,
            up: 3,
            down: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyHeader {
    pub config: FamilyConfig,
    /// `P₀, …, P_{up+1}`.
    pub chain: Vec<Cylinder>,
    /// `steps[k]` is the ascent taking `P_k` to `P_{k+1}`.
    pub steps: Vec<Ascent>,
    /// The vertical ascent the next non-lateral step would use.
    pub next_vertical: Ascent,
    /// Vertical extent `U(P_{up+1})` of the materialized region.
    pub slab: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyNode {
    pub id: usize,
    pub generation: i32,
    pub cylinder: Cylinder,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Number of children before window truncation.
    pub full_children: usize,
    pub role: Role,
    pub mu: f64,
}

impl FamilyNode {
    pub fn cube(&self) -> &DyadicCube {
        self.cylinder.cube().expect("family cylinders have cube bases")
    }
}

#[derive(Debug)]
pub struct DyadicFamily {
    pub space: FlowSpace,
    pub header: FamilyHeader,
    nodes: Vec<FamilyNode>,
    by_generation: Vec<Vec<usize>>,
    index: HashMap<(i32, i32, CubeKey), Vec<usize>>,
    cube_generations: Vec<BTreeSet<i32>>,
    complete: Vec<bool>,
}

/// The ascent chain from `P₀`, with the alternation state after it.
pub fn ascent_chain(space: &FlowSpace, p0: &Cylinder, steps: usize) -> Result<(Vec<Cylinder>, Vec<Ascent>, Ascent)> {
    if space.classify(p0) != Admissibility::Large {
        return Err(Error::NotLargeAdmissible);
    }
    let mut chain = vec![p0.clone()];
    let mut kinds = Vec::with_capacity(steps);
    let mut next = Ascent::Up;
    for k in 0..steps {
        let par = space.parents(&chain[k])?;
        let (kind, p) = if space.classify(&par.lr) == Admissibility::Large {
            (Ascent::Lateral, par.lr)
        } else if next == Ascent::Up {
            next = Ascent::Down;
            (Ascent::Up, par.up)
        } else {
            next = Ascent::Up;
            (Ascent::Down, par.down)
        };
        if space.classify(&p) != Admissibility::Large {
            return Err(Error::NotLargeAdmissible);
        }
        chain.push(p);
        kinds.push(kind);
    }
    Ok((chain, kinds, next))
}

/// `P₀ = P_{r₀,Q₀}(1)` with `Q₀ ∋ 1_N` chosen as configured.
pub fn root_cylinder(space: &FlowSpace, r0: f64, root: RootChoice) -> Result<Cylinder> {
    if !(r0 > std::f64::consts::E) {
        return Err(Error::InvalidParameter(format!("r₀ must exceed e, got {r0}")));
    }
    let ld = space.delta().ln();
    let k = match root {
        RootChoice::Lower => (2.0 * r0.ln() / ld).floor() as i32,
        RootChoice::Upper => ((space.adm.lambda.ln() + space.adm.gamma * r0.ln()) / ld).ceil() as i32,
        RootChoice::Generation(k) => k,
    };
    let q = space.cubes.cube_at(&space.spec.base_identity(), k)?;
    let p = space.cylinder(r0, q, 1.0)?;
    if space.classify(&p) != Admissibility::Large {
        return Err(Error::NotLargeAdmissible);
    }
    Ok(p)
}

impl DyadicFamily {
    pub fn build(space: FlowSpace, config: FamilyConfig) -> Result<Self> {
        let p0 = root_cylinder(&space, config.r0, config.root)?;
        let (chain, steps, next_vertical) = ascent_chain(&space, &p0, config.up + 1)?;
        let top = &chain[config.up + 1];
        let header = FamilyHeader {
            slab: (top.lo, top.hi),
            config: config.clone(),
            chain,
            steps,
            next_vertical,
        };
        let mut fam = DyadicFamily {
            space,
            header,
            nodes: Vec::new(),
            by_generation: vec![Vec::new(); config.up + config.down + 1],
            index: HashMap::new(),
            cube_generations: vec![BTreeSet::new(); config.up + config.down + 1],
            complete: Vec::new(),
        };
        fam.materialize()?;
        fam.mark_complete();
        Ok(fam)
    }

    fn materialize(&mut self) -> Result<()> {
        let up = self.header.config.up;
        let p_up = self.header.chain[up].clone();
        let top_gen = -(up as i32);
        let cubes = self.space.cubes.cubes_in_window(p_up.cube().unwrap().generation)?;
        let tilde = match self.header.steps[up] {
            Ascent::Lateral => None,
            Ascent::Up => Some(self.space.up_complement(&p_up)),
            Ascent::Down => Some(self.space.down_complement(&p_up)),
        };
        for q in cubes {
            self.push(top_gen, p_up.with_base(BaseSet::Cube(q.clone())), None, Role::S)?;
            if let Some(t) = &tilde {
                self.push(top_gen, t.with_base(BaseSet::Cube(q)), None, Role::STilde)?;
            }
        }
        let last = self.header.config.down as i32;
        for g in top_gen..last {
            let ids = self.by_generation[(g - top_gen) as usize].clone();
            for id in ids {
                self.expand(id)?;
            }
        }
        Ok(())
    }

    fn push(&mut self, generation: i32, cylinder: Cylinder, parent: Option<usize>, role: Role) -> Result<usize> {
        if self.nodes.len() >= MAX_NODES {
            return Err(Error::WindowExhausted(format!(
                "family exceeds {MAX_NODES} cylinders; shrink the window or the depth"
            )));
        }
        let mu = self.space.cylinder_measure(&cylinder)?;
        let id = self.nodes.len();
        let q = cylinder.cube().expect("family cylinders have cube bases");
        let slot = (generation + self.header.config.up as i32) as usize;
        self.index
            .entry((generation, q.generation, q.key.clone()))
            .or_default()
            .push(id);
        self.cube_generations[slot].insert(q.generation);
        self.by_generation[slot].push(id);
        self.nodes.push(FamilyNode {
            id,
            generation,
            cylinder,
            parent,
            children: Vec::new(),
            full_children: 0,
            role,
            mu,
        });
        if let Some(p) = parent {
            self.nodes[p].children.push(id);
        }
        Ok(id)
    }

    fn expand(&mut self, id: usize) -> Result<()> {
        let node = self.nodes[id].clone();
        let g = node.generation;
        let child_gen = g + 1;
        let son_role = if child_gen > 0 { Role::Positive } else { Role::SonsOfSTilde };
        let (kids, full): (Vec<(Cylinder, Role)>, usize) = match node.role {
            Role::S if g < 0 => {
                let k = (-g) as usize;
                let below = &self.header.chain[k - 1];
                match self.header.steps[k - 1] {
                    Ascent::Lateral => {
                        let all = self.space.cubes.children(node.cube())?;
                        let full = all.len();
                        let kept = all
                            .into_iter()
                            .filter(|c| self.space.cubes.meets_window(c))
                            .map(|c| (Cylinder::from_interval(below.lo, below.hi, BaseSet::Cube(c)), Role::S))
                            .collect();
                        (kept, full)
                    }
                    step => {
                        let inner = below.with_base(node.cylinder.base.clone());
                        let comp = if step == Ascent::Up {
                            self.space.up_complement(&inner)
                        } else {
                            self.space.down_complement(&inner)
                        };
                        (vec![(inner, Role::S), (comp, Role::STilde)], 2)
                    }
                }
            }
            _ => {
                let sons = self.space.sons(&node.cylinder)?;
                let full = sons.len();
                let kept = sons
                    .into_iter()
                    .filter(|s| self.space.cubes.meets_window(s.cube().unwrap()))
                    .map(|s| (s, son_role))
                    .collect();
                (kept, full)
            }
        };
        self.nodes[id].full_children = full;
        for (cyl, role) in kids {
            self.push(child_gen, cyl, Some(id), role)?;
        }
        Ok(())
    }

    fn mark_complete(&mut self) {
        let last = self.header.config.down as i32;
        self.complete = vec![false; self.nodes.len()];
        // Children always have larger ids than their parent.
        for id in (0..self.nodes.len()).rev() {
            let n = &self.nodes[id];
            self.complete[id] = n.generation == last
                || (n.children.len() == n.full_children && n.children.iter().all(|&c| self.complete[c]));
        }
    }

    /// Whether no descendant of the node, down to the finest generation, was
    /// dropped by the window, so its descendants in each generation partition it.
    pub fn is_complete(&self, id: usize) -> bool {
        self.complete[id]
    }

    /// Ancestors of a node from the top generation down to the node itself.
    pub fn path(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    /// Length of [`DyadicFamily::path`].
    pub fn path_len(&self, id: usize) -> usize {
        (self.nodes[id].generation + self.header.config.up as i32) as usize + 1
    }

    /// Descendants of a node in generation `g ≥` its own.
    pub fn descendants_at(&self, id: usize, g: i32) -> Vec<usize> {
        let mut level = vec![id];
        for _ in self.nodes[id].generation..g {
            level = level.iter().flat_map(|&i| self.nodes[i].children.iter().copied()).collect();
        }
        level
    }

    /// `µ` of the tiled region: the sum over the top generation.
    pub fn region_measure(&self) -> f64 {
        self.by_generation[0].iter().map(|&i| self.nodes[i].mu).sum()
    }

    pub fn nodes(&self) -> &[FamilyNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &FamilyNode {
        &self.nodes[id]
    }

    pub fn generation_range(&self) -> (i32, i32) {
        (-(self.header.config.up as i32), self.header.config.down as i32)
    }

    pub fn generation(&self, g: i32) -> Result<&[usize]> {
        let (lo, hi) = self.generation_range();
        if g < lo || g > hi {
            return Err(Error::WindowExhausted(format!("generation {g} outside [{lo}, {hi}]")));
        }
        Ok(&self.by_generation[(g - lo) as usize])
    }

    pub fn parent(&self, id: usize) -> Result<&FamilyNode> {
        self.nodes[id]
            .parent
            .map(|p| &self.nodes[p])
            .ok_or_else(|| Error::WindowExhausted("top generation has no stored parent".into()))
    }

    pub fn children(&self, id: usize) -> Result<Vec<&FamilyNode>> {
        if self.nodes[id].generation == self.header.config.down as i32 {
            return Err(Error::WindowExhausted("finest generation has no stored children".into()));
        }
        Ok(self.nodes[id].children.iter().map(|&c| &self.nodes[c]).collect())
    }

    /// Whether `(n, t)` lies in the region every generation tiles.
    pub fn covers_flow(&self, n: &BasePoint, t: f64) -> bool {
        let (lo, hi) = self.header.slab;
        lo < t && t < hi && self.top_node_at(n, t).is_some()
    }

    fn top_node_at(&self, n: &BasePoint, t: f64) -> Option<usize> {
        let g = self.generation_range().0;
        self.indexed_hits(n, t, g).ok().and_then(|v| v.first().copied())
    }

    /// Generation-`g` cylinders containing `(n, t)`, looked up through the
    /// cube index rather than the tree.
    pub fn indexed_hits(&self, n: &BasePoint, t: f64, g: i32) -> Result<Vec<usize>> {
        let (lo, _) = self.generation_range();
        self.generation(g)?;
        let mut hits = Vec::new();
        for &j in &self.cube_generations[(g - lo) as usize] {
            let q = match self.space.cubes.cube_at(n, j) {
                Ok(q) => q,
                Err(Error::OutsideWindow) => continue,
                Err(e) => return Err(e),
            };
            if let Some(ids) = self.index.get(&(g, j, q.key)) {
                hits.extend(ids.iter().copied().filter(|&i| self.nodes[i].cylinder.interval_contains(t)));
            }
        }
        Ok(hits)
    }

    /// The generation-`k` cylinder containing `x`, found by descending the
    /// tree from the top generation.
    pub fn locate(&self, x: &GroupPoint, k: i32) -> Result<usize> {
        let (n, t) = self.space.spec.flow_coordinates(x, &self.space.z);
        self.locate_flow(&n, t, k)
    }

    pub fn locate_flow(&self, n: &BasePoint, t: f64, k: i32) -> Result<usize> {
        self.generation(k)?;
        let mut cur = self.top_node_at(n, t).ok_or(Error::Uncovered)?;
        while self.nodes[cur].generation < k {
            cur = self.nodes[cur]
                .children
                .iter()
                .copied()
                .find(|&c| self.space.contains_flow(&self.nodes[c].cylinder, n, t))
                .ok_or(Error::Uncovered)?;
        }
        Ok(cur)
    }

    /// The chain `P_g^x` for every stored generation, coarsest first.
    pub fn chain_at(&self, n: &BasePoint, t: f64) -> Result<Vec<usize>> {
        let mut cur = self.top_node_at(n, t).ok_or(Error::Uncovered)?;
        let mut out = vec![cur];
        while let Some(&c) = self.nodes[cur]
            .children
            .iter()
            .find(|&&c| self.space.contains_flow(&self.nodes[c].cylinder, n, t))
        {
            cur = c;
            out.push(cur);
        }
        if self.nodes[cur].generation != self.generation_range().1 {
            return Err(Error::Uncovered);
        }
        Ok(out)
    }

    /// Whether node `a` is `b` or one of its ancestors.
    pub fn is_ancestor_or_self(&self, a: usize, mut b: usize) -> bool {
        loop {
            if a == b {
                return true;
            }
            if self.nodes[b].generation <= self.nodes[a].generation {
                return false;
            }
            match self.nodes[b].parent {
                Some(p) => b = p,
                None => return false,
            }
        }
    }

    /// Write one JSON record per cylinder.
    pub fn dump_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for node in &self.nodes {
            let q = node.cube();
            let rec = DumpRecord {
                id: node.id,
                generation: node.generation,
                parent: node.parent,
                role: node.role,
                r: node.cylinder.r(),
                a: node.cylinder.a(),
                lo: node.cylinder.lo,
                hi: node.cylinder.hi,
                cube_generation: q.generation,
                cube_key: &q.key.0,
                center: q.center.as_slice(),
                mu: node.mu,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct DumpRecord<'a> {
    id: usize,
    generation: i32,
    parent: Option<usize>,
    role: Role,
    r: f64,
    a: f64,
    lo: f64,
    hi: f64,
    cube_generation: i32,
    cube_key: &'a [i64],
    center: &'a [f64],
    mu: f64,
}
