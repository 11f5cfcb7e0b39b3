//! Semi-infinite polymer machinery: Busemann-type increment fields realized
//! on finite boxes, random-walk-in-random-environment transition kernels,
//! the coupled forward/dual step trees driven by shared site uniforms,
//! coalescence detection, exact hitting distributions on the northeast
//! boundary, and total-variation distances.

use crate::env::{uniform_theta_seeded, BoundarySpec, EnvironmentSpec};
use crate::lattice::{LatticePoint, Rect, E1, E2};
use crate::polymer::{self, PartitionTable};
use crate::special::{characteristic_endpoint, ModelParams};
use crate::{Error, Result};
use std::collections::HashMap;

/// How the increment field is realized on the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusemannMode {
    /// Exact in law: one backward table under a northeast stationary
    /// boundary at the box corner.
    NeStationary,
    /// Finite-horizon approximation: log-partition differences toward the
    /// characteristic endpoint at the given horizon.
    TruncatedDirection { horizon: u64 },
}

/// Increment field B(x,y) = log Z(x) - log Z(y) stored through one backward
/// log-partition table, so the cocycle property is exact by construction.
#[derive(Debug, Clone)]
pub struct BusemannField {
    pub rect: Rect,
    pub rho: f64,
    pub mode: BusemannMode,
    table: PartitionTable,
}

impl BusemannField {
    /// log of the underlying backward partition value at z.
    pub fn log_z(&self, z: LatticePoint) -> Result<f64> {
        self.table.expect_value(z)
    }

    /// B(x, y) for x, y in the table region.
    pub fn b(&self, x: LatticePoint, y: LatticePoint) -> Result<f64> {
        Ok(self.log_z(x)? - self.log_z(y)?)
    }

    /// Horizontal increment I_z = e^{B(z-e1, z)}.
    pub fn i(&self, z: LatticePoint) -> Result<f64> {
        Ok(self.b(z - E1, z)?.exp())
    }

    /// Vertical increment J_z = e^{B(z-e2, z)}.
    pub fn j(&self, z: LatticePoint) -> Result<f64> {
        Ok(self.b(z - E2, z)?.exp())
    }

    /// Weight recovered from the increments at z: 1 / (e^{-B(z,z+e1)} +
    /// e^{-B(z,z+e2)}).
    pub fn recovered_weight(&self, z: LatticePoint) -> Result<f64> {
        let a = (-self.b(z, z + E1)?).exp();
        let b = (-self.b(z, z + E2)?).exp();
        Ok(1.0 / (a + b))
    }
}

/// Realize the increment field on `rect`.
pub fn busemann_field(
    env: &EnvironmentSpec,
    rho: f64,
    rect: Rect,
    mode: BusemannMode,
) -> Result<BusemannField> {
    match mode {
        BusemannMode::NeStationary => {
            match env.boundary {
                BoundarySpec::Northeast { rho: r, anchor } if anchor == rect.hi => {
                    if r != rho {
                        return Err(Error::usage(format!(
                            "environment boundary parameter {r} does not match requested {rho}"
                        )));
                    }
                }
                _ => {
                    return Err(Error::usage(
                        "stationary mode needs a northeast boundary at the box corner",
                    ))
                }
            }
            let table = polymer::backward_table(env, rect.hi, rect.lo)?;
            Ok(BusemannField { rect, rho, mode, table })
        }
        BusemannMode::TruncatedDirection { horizon } => {
            if env.boundary != BoundarySpec::None {
                return Err(Error::usage("truncated mode needs an unbounded environment"));
            }
            let params = ModelParams::new(env.mu, rho)?;
            let (vx, vy) = characteristic_endpoint(params, horizon)?;
            let target = rect.hi + LatticePoint::new(vx, vy);
            let table = polymer::backward_table(env, target, rect.lo)?;
            Ok(BusemannField { rect, rho, mode, table })
        }
    }
}

/// Forward RWRE kernel on a box: p_e1(x) for every x strictly below the
/// northeast boundary of `rect`.
#[derive(Debug, Clone)]
pub struct TransitionField {
    pub rect: Rect,
    p_e1: Vec<f64>,
}

impl TransitionField {
    fn inner(&self) -> Rect {
        Rect::new(self.rect.lo, self.rect.hi - E1 - E2).unwrap()
    }

    /// True when x still has a step inside the box.
    pub fn can_step(&self, x: LatticePoint) -> bool {
        x.x < self.rect.hi.x && x.y < self.rect.hi.y && self.rect.contains(x)
    }

    pub fn p_e1(&self, x: LatticePoint) -> Result<f64> {
        if !self.can_step(x) {
            return Err(Error::usage(format!("{x} is on or beyond the northeast boundary")));
        }
        Ok(self.p_e1[self.inner().index(x)])
    }
}

/// Transition probabilities p_e1(x) = J_{x+e2} / (I_{x+e1} + J_{x+e2}),
/// computed stably from the field's log-partition differences.
pub fn transitions(field: &BusemannField) -> Result<TransitionField> {
    let rect = field.rect;
    if rect.width() < 2 || rect.height() < 2 {
        return Err(Error::domain("transition field needs a box of at least 2x2"));
    }
    let inner = Rect::new(rect.lo, rect.hi - E1 - E2).unwrap();
    let mut p = vec![0.0; inner.len()];
    for x in inner.points() {
        let a = field.log_z(x + E1)?;
        let b = field.log_z(x + E2)?;
        // p_e1 = e^a / (e^a + e^b)
        p[inner.index(x)] = 1.0 / (1.0 + (b - a).exp());
    }
    Ok(TransitionField { rect, p_e1: p })
}

/// Forward step tree: the e1/e2 decision at every steppable site, driven by
/// the shared site uniforms theta.
#[derive(Debug, Clone)]
pub struct ForwardTree {
    pub rect: Rect,
    steps: Vec<bool>, // true = e1
}

impl ForwardTree {
    fn inner(&self) -> Rect {
        Rect::new(self.rect.lo, self.rect.hi - E1 - E2).unwrap()
    }

    pub fn can_step(&self, x: LatticePoint) -> bool {
        x.x < self.rect.hi.x && x.y < self.rect.hi.y && self.rect.contains(x)
    }

    /// The tree step at x.
    pub fn step(&self, x: LatticePoint) -> Result<LatticePoint> {
        if !self.can_step(x) {
            return Err(Error::usage(format!("{x} has no forward step inside the box")));
        }
        Ok(if self.steps[self.inner().index(x)] { E1 } else { E2 })
    }

    /// Follow the tree from `start` until the northeast boundary.
    pub fn path_from(&self, start: LatticePoint) -> Result<Vec<LatticePoint>> {
        if !self.rect.contains(start) {
            return Err(Error::usage(format!("start {start} outside the box")));
        }
        let mut p = start;
        let mut out = vec![p];
        while self.can_step(p) {
            p = p + self.step(p)?;
            out.push(p);
        }
        Ok(out)
    }

    /// Boundary site the tree path from `start` is absorbed at.
    pub fn hit_site(&self, start: LatticePoint) -> Result<LatticePoint> {
        Ok(*self.path_from(start)?.last().unwrap())
    }

    /// Debug dump as CSV rows "x,y,step".
    pub fn to_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,step")?;
        for x in self.inner().points() {
            let s = if self.steps[self.inner().index(x)] { "e1" } else { "e2" };
            writeln!(w, "{},{},{}", x.x, x.y, s)?;
        }
        Ok(())
    }
}

/// Build the forward tree: step e1 at x iff theta_x <= p_e1(x). The uniforms
/// come from the dedicated channel of `theta_seed`.
pub fn forward_tree(trans: &TransitionField, theta_seed: u64) -> ForwardTree {
    let inner = Rect::new(trans.rect.lo, trans.rect.hi - E1 - E2).unwrap();
    let mut steps = vec![false; inner.len()];
    for x in inner.points() {
        let theta = uniform_theta_seeded(theta_seed, x);
        steps[inner.index(x)] = theta <= trans.p_e1[inner.index(x)];
    }
    ForwardTree { rect: trans.rect, steps }
}

/// Dual step tree on the shifted lattice: the site x stands for
/// x - (1/2, 1/2), and its down-left step mirrors the forward step at
/// x - e1 - e2.
#[derive(Debug, Clone)]
pub struct DualTree {
    pub rect: Rect, // dual sites: forward inner sites shifted by e1 + e2
    steps: Vec<bool>, // true = -e1
}

impl DualTree {
    pub fn can_step(&self, x: LatticePoint) -> bool {
        self.rect.contains(x)
    }

    pub fn step(&self, x: LatticePoint) -> Result<LatticePoint> {
        if !self.rect.contains(x) {
            return Err(Error::usage(format!("dual site {x} outside the dual box")));
        }
        Ok(if self.steps[self.rect.index(x)] {
            LatticePoint::ORIGIN - E1
        } else {
            LatticePoint::ORIGIN - E2
        })
    }

    /// Follow the dual tree down-left until it leaves the dual box.
    pub fn path_from(&self, start: LatticePoint) -> Result<Vec<LatticePoint>> {
        let mut p = start;
        let mut out = vec![p];
        while self.can_step(p) {
            p = p + self.step(p)?;
            out.push(p);
        }
        Ok(out)
    }
}

/// Exact transform of the forward tree: dual step at x is -e_i iff the
/// forward step at x - e1 - e2 is e_i.
pub fn dual_tree(tree: &ForwardTree) -> DualTree {
    let inner = tree.inner();
    let rect = Rect::new(inner.lo + E1 + E2, inner.hi + E1 + E2).unwrap();
    DualTree { rect, steps: tree.steps.clone() }
}

/// First common vertex of the two tree paths, or None when both reach the
/// northeast boundary unmerged. Meeting on the boundary counts as a meeting.
pub fn coalescence_point(
    tree: &ForwardTree,
    a: LatticePoint,
    b: LatticePoint,
) -> Result<Option<LatticePoint>> {
    if !tree.rect.contains(a) || !tree.rect.contains(b) {
        return Err(Error::usage(format!("starts {a}, {b} must lie in the box")));
    }
    let mut pa = a;
    let mut pb = b;
    loop {
        if pa == pb {
            return Ok(Some(pa));
        }
        let (la, lb) = (pa.x + pa.y, pb.x + pb.y);
        if la <= lb {
            if !tree.can_step(pa) {
                return Ok(None);
            }
            pa = pa + tree.step(pa)?;
        } else {
            if !tree.can_step(pb) {
                return Ok(None);
            }
            pb = pb + tree.step(pb)?;
        }
    }
}

/// Same decision rule as forward_tree + coalescence_point, but the uniforms
/// are drawn only at visited sites, so large boxes stay cheap.
pub fn coalescence_point_lazy(
    trans: &TransitionField,
    theta_seed: u64,
    a: LatticePoint,
    b: LatticePoint,
) -> Result<Option<LatticePoint>> {
    if !trans.rect.contains(a) || !trans.rect.contains(b) {
        return Err(Error::usage(format!("starts {a}, {b} must lie in the box")));
    }
    let step = |x: LatticePoint| -> Result<LatticePoint> {
        Ok(if uniform_theta_seeded(theta_seed, x) <= trans.p_e1(x)? { E1 } else { E2 })
    };
    let mut pa = a;
    let mut pb = b;
    loop {
        if pa == pb {
            return Ok(Some(pa));
        }
        if pa.x + pa.y <= pb.x + pb.y {
            if !trans.can_step(pa) {
                return Ok(None);
            }
            pa = pa + step(pa)?;
        } else {
            if !trans.can_step(pb) {
                return Ok(None);
            }
            pb = pb + step(pb)?;
        }
    }
}

/// Exact absorption law of the RWRE on the northeast boundary of the box.
#[derive(Debug, Clone)]
pub struct HittingDistribution {
    pub boundary: Vec<LatticePoint>,
    pub mass: Vec<f64>,
}

impl HittingDistribution {
    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }
}

/// Push unit mass from `start` through the kernel with absorption on the
/// northeast boundary of the kernel's box.
pub fn hitting_distribution(
    trans: &TransitionField,
    start: LatticePoint,
) -> Result<HittingDistribution> {
    let rect = trans.rect;
    if !rect.contains(start) {
        return Err(Error::usage(format!("start {start} outside the box")));
    }
    let mut mass = vec![0.0; rect.len()];
    mass[rect.index(start)] = 1.0;
    for p in rect.points() {
        let m = mass[rect.index(p)];
        if m == 0.0 || !trans.can_step(p) {
            continue;
        }
        let p1 = trans.p_e1(p)?;
        mass[rect.index(p)] = 0.0;
        mass[rect.index(p + E1)] += m * p1;
        mass[rect.index(p + E2)] += m * (1.0 - p1);
    }
    let boundary = rect.ne_boundary();
    let out = boundary.iter().map(|&p| mass[rect.index(p)]).collect();
    Ok(HittingDistribution { boundary, mass: out })
}

/// Half L1 distance between two absorption laws on the same boundary.
pub fn tv_distance(h1: &HittingDistribution, h2: &HittingDistribution) -> Result<f64> {
    if h1.boundary != h2.boundary {
        return Err(Error::usage("hitting distributions live on different boundaries"));
    }
    Ok(0.5 * h1.mass.iter().zip(&h2.mass).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Maximum pointwise discrepancy between the RWRE path law toward v and the
/// quenched stationary measure with northeast boundary at v, by enumeration.
pub fn backward_measure_check(
    env: &EnvironmentSpec,
    rho: f64,
    u: LatticePoint,
    v: LatticePoint,
) -> Result<f64> {
    if !(u.leq(v)) || u == v {
        return Err(Error::domain(format!("need u < v componentwise, got {u}, {v}")));
    }
    if (v.x - u.x) + (v.y - u.y) > 16 {
        return Err(Error::usage("enumeration box too large (perimeter over 16)"));
    }
    let rect = Rect::new(u, v).unwrap();
    let field = busemann_field(env, rho, rect, BusemannMode::NeStationary)?;
    let log_z = |p: LatticePoint| field.log_z(p);

    // enumerate all up-right paths u -> v
    fn paths(u: LatticePoint, v: LatticePoint) -> Vec<Vec<LatticePoint>> {
        if u == v {
            return vec![vec![u]];
        }
        let mut out = Vec::new();
        if u.x < v.x {
            for mut p in paths(u + E1, v) {
                p.insert(0, u);
                out.push(p);
            }
        }
        if u.y < v.y {
            for mut p in paths(u + E2, v) {
                p.insert(0, u);
                out.push(p);
            }
        }
        out
    }

    // quenched path weights under the stationary model: bulk weights off the
    // boundary, declared edge weights along it; normalized by the table value
    let mut max_disc: f64 = 0.0;
    for path in paths(u, v) {
        // Markov-chain probability with absorption rows/columns through v
        let mut log_pi = 0.0;
        for w in path.windows(2) {
            let (x, y) = (w[0], w[1]);
            if x.x == v.x || x.y == v.y {
                continue; // deterministic stretch
            }
            // pi(x, y) = e^{log_z(y)} / (e^{log_z(x+e1)} + e^{log_z(x+e2)})
            let a = log_z(x + E1)?;
            let b = log_z(x + E2)?;
            log_pi += log_z(y)? - polymer::logsumexp2(a, b);
        }
        // quenched weight: bulk vertex weights until the boundary, then
        // declared edge weights
        let mut log_w = 0.0;
        for &p in &path {
            if p.x < v.x && p.y < v.y {
                log_w += env.bulk_weight(p)?.ln();
            }
        }
        for w in path.windows(2) {
            let (x, y) = (w[0], w[1]);
            if x.x == v.x || x.y == v.y {
                log_w += env.boundary_weight(x, y)?.ln();
            }
        }
        let q = (log_w - log_z(u)?).exp();
        let pi = log_pi.exp();
        max_disc = max_disc.max((q - pi).abs());
    }
    Ok(max_disc)
}

/// Exact probability that two chains started at `a` and `b` (same
/// antidiagonal) are absorbed at different boundary sites, under the
/// independent-until-meeting pair chain. This is the law of the shared
/// uniform tree coupling, computed without Monte Carlo; quadratic state
/// space, intended for small boxes.
pub fn pair_no_meet_prob(
    trans: &TransitionField,
    a: LatticePoint,
    b: LatticePoint,
) -> Result<f64> {
    if a.x + a.y != b.x + b.y {
        return Err(Error::usage("pair chain needs starts on one antidiagonal"));
    }
    let rect = trans.rect;
    if rect.width() > 65 || rect.height() > 65 {
        return Err(Error::usage("pair chain oracle limited to boxes up to 64x64"));
    }
    if !rect.contains(a) || !rect.contains(b) {
        return Err(Error::usage("starts must lie in the box"));
    }
    if a == b {
        return Ok(0.0);
    }
    // states: both moving (pa, pb), or one absorbed at s with the other at p
    let mut both: HashMap<(LatticePoint, LatticePoint), f64> = HashMap::new();
    let mut one: HashMap<(LatticePoint, LatticePoint), f64> = HashMap::new();
    let mut p_diff = 0.0;
    let absorbed = |p: LatticePoint| !(p.x < rect.hi.x && p.y < rect.hi.y);
    match (absorbed(a), absorbed(b)) {
        (true, true) => return Ok(if a == b { 0.0 } else { 1.0 }),
        (true, false) => {
            one.insert((a, b), 1.0);
        }
        (false, true) => {
            one.insert((b, a), 1.0);
        }
        (false, false) => {
            both.insert((a, b), 1.0);
        }
    }
    while !both.is_empty() || !one.is_empty() {
        let mut nboth: HashMap<(LatticePoint, LatticePoint), f64> = HashMap::new();
        let mut none_: HashMap<(LatticePoint, LatticePoint), f64> = HashMap::new();
        for ((pa, pb), m) in both {
            let qa = trans.p_e1(pa)?;
            let qb = trans.p_e1(pb)?;
            for (sa, wa) in [(pa + E1, qa), (pa + E2, 1.0 - qa)] {
                for (sb, wb) in [(pb + E1, qb), (pb + E2, 1.0 - qb)] {
                    let w = m * wa * wb;
                    if w == 0.0 {
                        continue;
                    }
                    if sa == sb {
                        continue; // merged: same absorption site, no mass to p_diff
                    }
                    match (absorbed(sa), absorbed(sb)) {
                        (true, true) => p_diff += w,
                        (true, false) => *none_.entry((sa, sb)).or_default() += w,
                        (false, true) => *none_.entry((sb, sa)).or_default() += w,
                        (false, false) => *nboth.entry((sa, sb)).or_default() += w,
                    }
                }
            }
        }
        for ((s, p), m) in one {
            let q = trans.p_e1(p)?;
            for (sp, wp) in [(p + E1, q), (p + E2, 1.0 - q)] {
                let w = m * wp;
                if w == 0.0 {
                    continue;
                }
                if absorbed(sp) {
                    if sp != s {
                        p_diff += w;
                    }
                } else {
                    *none_.entry((s, sp)).or_default() += w;
                }
            }
        }
        both = nboth;
        one = none_;
    }
    Ok(p_diff)
}

/// Check that no dual edge crosses a forward edge: on the doubled lattice a
/// forward edge (x, x+e) and a dual edge (y, y-e') cross iff their midpoints
/// coincide and the steps are orthogonal. Returns the number of crossings.
pub fn count_dual_crossings(tree: &ForwardTree, dual: &DualTree) -> Result<usize> {
    // midpoint on the doubled lattice: forward edge (x, x+e) has doubled
    // midpoint 2x + e; dual edge from y (shifted by -(1/2,1/2)) to y - e' has
    // doubled midpoint 2y - e' - (1, 1)
    let mut forward_mid: HashMap<LatticePoint, LatticePoint> = HashMap::new();
    let inner = Rect::new(tree.rect.lo, tree.rect.hi - E1 - E2).unwrap();
    for x in inner.points() {
        let e = tree.step(x)?;
        forward_mid.insert(LatticePoint::new(2 * x.x + e.x, 2 * x.y + e.y), e);
    }
    let mut crossings = 0;
    for y in dual.rect.points() {
        let e = dual.step(y)?; // -e1 or -e2
        let mid = LatticePoint::new(2 * y.x + e.x - 1, 2 * y.y + e.y - 1);
        if let Some(f) = forward_mid.get(&mid) {
            // crossing means orthogonal steps through the same midpoint
            let orthogonal = (f.x != 0) != (e.x != 0);
            if orthogonal {
                crossings += 1;
            }
        }
    }
    Ok(crossings)
}

// position of a boundary site along the northeast boundary walk, measured
// from (hi.x, lo.y) counterclockwise
fn boundary_pos(corner: LatticePoint, p: LatticePoint) -> i64 {
    if p.x == corner.x {
        p.y
    } else {
        corner.y + (corner.x - p.x)
    }
}

// dual site d (standing for d - (1/2, 1/2)) maps to the half-integer slots
// between adjacent forward boundary sites; on the right edge the slot sits
// below the forward site at the same height, on the top edge to its left,
// and the dual corner is adjacent to both edges
fn dual_boundary_slots(corner: LatticePoint, d: LatticePoint) -> Vec<f64> {
    let mut slots = Vec::with_capacity(2);
    if d.x == corner.x && d.y <= corner.y {
        slots.push(d.y as f64 - 0.5);
    }
    if d.y == corner.y {
        slots.push(corner.y as f64 + (corner.x - d.x) as f64 + 0.5);
    }
    slots
}

/// Planar-duality witness that the forward paths from `a` and `b` (same
/// antidiagonal) did not meet in the box: some dual path started strictly
/// between the two hit sites descends to the starts' antidiagonal strictly
/// between the starts.
pub fn dual_separates(tree: &ForwardTree, a: LatticePoint, b: LatticePoint) -> Result<bool> {
    if a.x + a.y != b.x + b.y {
        return Err(Error::usage("starts must share an antidiagonal"));
    }
    let (a, b) = if a.x >= b.x { (a, b) } else { (b, a) };
    let corner = tree.rect.hi;
    let dual = dual_tree(tree);
    let ha = tree.hit_site(a)?;
    let hb = tree.hit_site(b)?;
    let (pa, pb) = (boundary_pos(corner, ha), boundary_pos(corner, hb));
    let (lo, hi) = (pa.min(pb), pa.max(pb));
    for d in dual.rect.ne_boundary() {
        let between = dual_boundary_slots(corner, d)
            .into_iter()
            .any(|dd| dd > lo as f64 && dd < hi as f64);
        if !between {
            continue;
        }
        for &p in &dual.path_from(d)? {
            if p.x + p.y == a.x + a.y + 1 && p.x > b.x && p.x <= a.x {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Environment with a northeast stationary boundary at `corner`, sharing the
/// bulk of `seed`.
pub fn ne_env(mu: f64, rho: f64, seed: u64, corner: LatticePoint) -> Result<EnvironmentSpec> {
    EnvironmentSpec::new(mu, seed, BoundarySpec::Northeast { rho, anchor: corner })
}
