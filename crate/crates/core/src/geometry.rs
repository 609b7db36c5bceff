//! Multipatch machine geometry: region tags, patch connectivity, global
//! degree-of-freedom numbering, mesh validity and the parametric demo machine.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::config::{MachineConfig, MagnetizationKind};
use crate::error::{Error, Result};
use crate::quadrature::GaussRule;
use crate::spline::{det2, KnotVector, Mat2, NurbsPatch, PatchBasis, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionTag {
    RotorIron,
    RotorAir,
    MagnetPositive,
    MagnetNegative,
    StatorIron,
    StatorAir,
    /// Coil side of phase 1..=3; `positive` is the go direction.
    Coil {
        phase: u8,
        positive: bool,
    },
}

impl RegionTag {
    pub fn is_magnet(self) -> bool {
        matches!(self, RegionTag::MagnetPositive | RegionTag::MagnetNegative)
    }

    pub fn is_iron(self) -> bool {
        matches!(self, RegionTag::RotorIron | RegionTag::StatorIron)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Stator,
    Rotor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edge {
    UMin,
    UMax,
    VMin,
    VMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeRef {
    pub patch: usize,
    pub edge: Edge,
}

impl EdgeRef {
    pub fn new(patch: usize, edge: Edge) -> Self {
        Self { patch, edge }
    }
}

/// Two patch edges glued with C0 continuity. `reversed` flips the parameter
/// direction of `b` relative to `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeMatch {
    pub a: EdgeRef,
    pub b: EdgeRef,
    pub reversed: bool,
}

/// Per-patch magnetization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Magnetization {
    /// `M = magnitude * x / |x|`, signed magnitude in A/m.
    Radial { magnitude: f64 },
    /// Constant vector in A/m.
    Uniform { m: [f64; 2] },
}

impl Magnetization {
    pub fn at(&self, x: Point) -> [f64; 2] {
        match *self {
            Magnetization::Radial { magnitude } => {
                let r = x[0].hypot(x[1]);
                [magnitude * x[0] / r, magnitude * x[1] / r]
            }
            Magnetization::Uniform { m } => m,
        }
    }

    /// `dM_a/dx_b` as `[a][b]`.
    pub fn jacobian(&self, x: Point) -> Mat2 {
        match *self {
            Magnetization::Radial { magnitude } => {
                let r = x[0].hypot(x[1]);
                let r3 = r * r * r;
                [
                    [
                        magnitude * (1.0 / r - x[0] * x[0] / r3),
                        -magnitude * x[0] * x[1] / r3,
                    ],
                    [
                        -magnitude * x[0] * x[1] / r3,
                        magnitude * (1.0 / r - x[1] * x[1] / r3),
                    ],
                ]
            }
            Magnetization::Uniform { .. } => [[0.0; 2]; 2],
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        match *self {
            Magnetization::Radial { magnitude } => Magnetization::Radial {
                magnitude: c * magnitude,
            },
            Magnetization::Uniform { m } => Magnetization::Uniform {
                m: [c * m[0], c * m[1]],
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultipatchModel {
    pub side: Side,
    pub patches: Vec<NurbsPatch>,
    pub tags: Vec<RegionTag>,
    pub magnetization: Vec<Option<Magnetization>>,
    pub interface_radius: f64,
    pub interface_edges: Vec<EdgeRef>,
    pub dirichlet_edges: Vec<EdgeRef>,
    pub connectivity: Vec<EdgeMatch>,
}

impl NurbsPatch {
    /// Local control point indices along an edge, in increasing parameter order.
    pub fn edge_indices(&self, edge: Edge) -> Vec<usize> {
        let (nu, nv) = (self.n_u(), self.n_v());
        match edge {
            Edge::UMin => (0..nv).map(|j| self.index(0, j)).collect(),
            Edge::UMax => (0..nv).map(|j| self.index(nu - 1, j)).collect(),
            Edge::VMin => (0..nu).map(|i| self.index(i, 0)).collect(),
            Edge::VMax => (0..nu).map(|i| self.index(i, nv - 1)).collect(),
        }
    }

    pub fn edge_knots(&self, edge: Edge) -> &KnotVector {
        match edge {
            Edge::UMin | Edge::UMax => &self.knots_v,
            Edge::VMin | Edge::VMax => &self.knots_u,
        }
    }

    /// Parametric point at edge coordinate `s`.
    pub fn edge_param(&self, edge: Edge, s: f64) -> (f64, f64) {
        match edge {
            Edge::UMin => (0.0, s),
            Edge::UMax => (1.0, s),
            Edge::VMin => (s, 0.0),
            Edge::VMax => (s, 1.0),
        }
    }
}

impl MultipatchModel {
    /// Checks array lengths and patch data after deserialization.
    pub fn validate(&self) -> Result<()> {
        let n = self.patches.len();
        if self.tags.len() != n || self.magnetization.len() != n {
            return Err(Error::Geometry(format!(
                "{n} patches but {} tags and {} magnetizations",
                self.tags.len(),
                self.magnetization.len()
            )));
        }
        for (k, p) in self.patches.iter().enumerate() {
            NurbsPatch::new(
                p.knots_u.clone(),
                p.knots_v.clone(),
                p.control_points.clone(),
                p.weights.clone(),
            )
            .map_err(|e| Error::Geometry(format!("patch {k}: {e}")))?;
        }
        let refs = self
            .interface_edges
            .iter()
            .chain(&self.dirichlet_edges)
            .chain(self.connectivity.iter().flat_map(|m| [&m.a, &m.b]));
        for r in refs {
            if r.patch >= n {
                return Err(Error::Geometry(format!(
                    "edge refers to missing patch {}",
                    r.patch
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: MultipatchModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    /// Maximum distance of the interface edges from the circle of radius `R_Γ`,
    /// sampled at `samples` parameters per edge.
    pub fn interface_deviation(&self, samples: usize) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for e in &self.interface_edges {
            let p = &self.patches[e.patch];
            for k in 0..samples {
                let s = k as f64 / (samples.max(2) - 1) as f64;
                let (xi, eta) = p.edge_param(e.edge, s);
                let (x, _) = p.eval(xi, eta)?;
                worst = worst.max((x[0].hypot(x[1]) - self.interface_radius).abs());
            }
        }
        Ok(worst)
    }

    /// Locates the patch and parameters of a physical point.
    pub fn locate(&self, x: Point) -> Option<(usize, f64, f64)> {
        for (k, p) in self.patches.iter().enumerate() {
            if let Some((xi, eta)) = invert_patch(p, x) {
                return Some((k, xi, eta));
            }
        }
        None
    }
}

/// Newton inversion of a patch map; `None` if `x` is outside the patch.
pub fn invert_patch(patch: &NurbsPatch, x: Point) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for c in &patch.control_points {
        for d in 0..2 {
            lo[d] = lo[d].min(c[d]);
            hi[d] = hi[d].max(c[d]);
        }
    }
    let scale = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let slack = 1e-12 * scale;
    if (0..2).any(|d| x[d] < lo[d] - slack || x[d] > hi[d] + slack) {
        return None;
    }
    let mut best = (f64::INFINITY, 0.5, 0.5);
    let g = 6;
    for a in 0..=g {
        for b in 0..=g {
            let (xi, eta) = (a as f64 / g as f64, b as f64 / g as f64);
            let (y, _) = patch.eval(xi, eta).ok()?;
            let d = (y[0] - x[0]).hypot(y[1] - x[1]);
            if d < best.0 {
                best = (d, xi, eta);
            }
        }
    }
    let (_, mut xi, mut eta) = best;
    let tol = 1e-13 * scale.max(1e-300);
    for _ in 0..50 {
        let (y, j) = patch.eval(xi, eta).ok()?;
        let r = [x[0] - y[0], x[1] - y[1]];
        if r[0].hypot(r[1]) <= tol {
            break;
        }
        let det = det2(&j);
        if det.abs() < 1e-300 {
            return None;
        }
        let dxi = (j[1][1] * r[0] - j[0][1] * r[1]) / det;
        let deta = (-j[1][0] * r[0] + j[0][0] * r[1]) / det;
        xi = (xi + dxi).clamp(0.0, 1.0);
        eta = (eta + deta).clamp(0.0, 1.0);
    }
    let (y, _) = patch.eval(xi, eta).ok()?;
    if (y[0] - x[0]).hypot(y[1] - x[1]) <= 1e-10 * scale {
        Some((xi, eta))
    } else {
        None
    }
}

/// Global numbering of control points after gluing, plus Dirichlet and free
/// index maps.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    pub n_global: usize,
    pub local_to_global: Vec<Vec<usize>>,
    pub dirichlet: Vec<bool>,
    pub free_of_global: Vec<Option<usize>>,
    pub free_to_global: Vec<usize>,
    /// Globals with a control point on the coupling interface, ascending.
    pub interface_globals: Vec<usize>,
}

impl DofMap {
    pub fn n_free(&self) -> usize {
        self.free_to_global.len()
    }

    /// Free index of each local basis function of a patch.
    pub fn free_local(&self, patch: usize) -> Vec<Option<usize>> {
        self.local_to_global[patch]
            .iter()
            .map(|&g| self.free_of_global[g])
            .collect()
    }

    /// Expands a free-dof vector to all globals, zero on Dirichlet dofs.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_global];
        for (f, &g) in self.free_to_global.iter().enumerate() {
            out[g] = free[f];
        }
        out
    }

    /// Control points indexed by global number.
    pub fn global_points(&self, model: &MultipatchModel) -> Vec<Point> {
        let mut pts = vec![[0.0; 2]; self.n_global];
        for (p, l2g) in model.patches.iter().zip(&self.local_to_global) {
            for (loc, &g) in l2g.iter().enumerate() {
                pts[g] = p.control_points[loc];
            }
        }
        pts
    }

    /// Adds a per-global displacement to every local copy of each control point.
    pub fn displace(&self, model: &MultipatchModel, disp: &[[f64; 2]]) -> MultipatchModel {
        let mut out = model.clone();
        for (p, l2g) in out.patches.iter_mut().zip(&self.local_to_global) {
            for (loc, &g) in l2g.iter().enumerate() {
                let d = disp[g];
                if d != [0.0, 0.0] {
                    p.control_points[loc][0] += d[0];
                    p.control_points[loc][1] += d[1];
                }
            }
        }
        out
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

fn reflect(kv: &KnotVector) -> Vec<f64> {
    kv.knots().iter().rev().map(|k| 1.0 - k).collect()
}

/// Glues matched edges and numbers the control points globally in order of
/// first appearance.
pub fn build_dof_map(model: &MultipatchModel) -> Result<DofMap> {
    model.validate()?;
    let offsets: Vec<usize> = model
        .patches
        .iter()
        .scan(0, |acc, p| {
            let o = *acc;
            *acc += p.len();
            Some(o)
        })
        .collect();
    let total: usize = model.patches.iter().map(|p| p.len()).sum();
    let scale = model
        .patches
        .iter()
        .flat_map(|p| &p.control_points)
        .fold(0.0f64, |m, c| m.max(c[0].abs()).max(c[1].abs()));
    let tol = 1e-12 * scale.max(1.0);
    let mut uf = UnionFind((0..total).collect());
    for m in &model.connectivity {
        let (pa, pb) = (&model.patches[m.a.patch], &model.patches[m.b.patch]);
        let (ka, kb) = (pa.edge_knots(m.a.edge), pb.edge_knots(m.b.edge));
        let kb_knots = if m.reversed {
            reflect(kb)
        } else {
            kb.knots().to_vec()
        };
        let same_knots = ka.degree() == kb.degree()
            && ka.knots().len() == kb_knots.len()
            && ka
                .knots()
                .iter()
                .zip(&kb_knots)
                .all(|(x, y)| (x - y).abs() <= 1e-14);
        if !same_knots {
            return Err(Error::Conformity(format!(
                "{:?} and {:?} have different knot vectors",
                m.a, m.b
            )));
        }
        let ia = pa.edge_indices(m.a.edge);
        let mut ib = pb.edge_indices(m.b.edge);
        if m.reversed {
            ib.reverse();
        }
        for (&la, &lb) in ia.iter().zip(&ib) {
            let (ca, cb) = (pa.control_points[la], pb.control_points[lb]);
            let (wa, wb) = (pa.weights[la], pb.weights[lb]);
            if (ca[0] - cb[0]).abs() > tol
                || (ca[1] - cb[1]).abs() > tol
                || (wa - wb).abs() > 1e-12 * wa.abs()
            {
                return Err(Error::Conformity(format!(
                    "{:?} and {:?}: control points {ca:?} (w={wa}) and {cb:?} (w={wb}) differ",
                    m.a, m.b
                )));
            }
            uf.union(offsets[m.a.patch] + la, offsets[m.b.patch] + lb);
        }
    }
    let mut root_global = vec![usize::MAX; total];
    let mut n_global = 0;
    let mut local_to_global = Vec::with_capacity(model.patches.len());
    for (k, p) in model.patches.iter().enumerate() {
        let mut l2g = Vec::with_capacity(p.len());
        for loc in 0..p.len() {
            let r = uf.find(offsets[k] + loc);
            if root_global[r] == usize::MAX {
                root_global[r] = n_global;
                n_global += 1;
            }
            l2g.push(root_global[r]);
        }
        local_to_global.push(l2g);
    }
    let mark = |edges: &[EdgeRef]| {
        let mut flag = vec![false; n_global];
        for e in edges {
            for loc in model.patches[e.patch].edge_indices(e.edge) {
                flag[local_to_global[e.patch][loc]] = true;
            }
        }
        flag
    };
    let dirichlet = mark(&model.dirichlet_edges);
    let on_interface = mark(&model.interface_edges);
    let mut free_of_global = vec![None; n_global];
    let mut free_to_global = Vec::new();
    for g in 0..n_global {
        if !dirichlet[g] {
            free_of_global[g] = Some(free_to_global.len());
            free_to_global.push(g);
        }
    }
    let interface_globals = (0..n_global).filter(|&g| on_interface[g]).collect();
    Ok(DofMap {
        n_global,
        local_to_global,
        dirichlet,
        free_of_global,
        free_to_global,
        interface_globals,
    })
}

/// Quadrature data at one point of an element.
#[derive(Debug, Clone)]
pub struct QuadPoint {
    pub x: Point,
    pub jac: Mat2,
    pub det: f64,
    /// Quadrature weight times `|det J|`.
    pub weight: f64,
    pub values: Vec<f64>,
    /// Physical gradients of the local basis.
    pub grads: Vec<[f64; 2]>,
}

/// One knot-span element with its local basis indices and quadrature points.
#[derive(Debug, Clone)]
pub struct ElementQuad {
    pub indices: Vec<usize>,
    pub points: Vec<QuadPoint>,
}

pub fn physical_grads(basis: &PatchBasis, jac: &Mat2) -> (f64, Vec<[f64; 2]>) {
    let det = det2(jac);
    let inv = [
        [jac[1][1] / det, -jac[0][1] / det],
        [-jac[1][0] / det, jac[0][0] / det],
    ];
    let grads = basis
        .d_xi
        .iter()
        .zip(&basis.d_eta)
        .map(|(&a, &b)| [inv[0][0] * a + inv[1][0] * b, inv[0][1] * a + inv[1][1] * b])
        .collect();
    (det, grads)
}

/// Tensor Gauss quadrature over every nonempty element of a patch.
pub fn patch_elements(patch: &NurbsPatch, n_pts: usize) -> Result<Vec<ElementQuad>> {
    let rule = GaussRule::new(n_pts);
    let bu = patch.knots_u.breaks();
    let bv = patch.knots_v.breaks();
    let mut out = Vec::with_capacity((bu.len() - 1) * (bv.len() - 1));
    // Univariate basis per span, reused across the other direction.
    let uni =
        |kv: &KnotVector, breaks: &[f64]| -> Result<Vec<Vec<(f64, crate::spline::BasisValues)>>> {
            breaks
                .windows(2)
                .map(|w| {
                    rule.on(w[0], w[1])
                        .map(|(t, wt)| Ok((wt, kv.basis(t)?)))
                        .collect()
                })
                .collect()
        };
    let su = uni(&patch.knots_u, &bu)?;
    let sv = uni(&patch.knots_v, &bv)?;
    for ev in &sv {
        for eu in &su {
            let mut points = Vec::with_capacity(eu.len() * ev.len());
            let mut indices = Vec::new();
            for (wv, bvv) in ev {
                for (wu, buu) in eu {
                    let basis = patch.rational_basis(buu, bvv);
                    let (x, jac) = patch.map_with(&basis);
                    let (det, grads) = physical_grads(&basis, &jac);
                    if indices.is_empty() {
                        indices = basis.indices.clone();
                    }
                    points.push(QuadPoint {
                        x,
                        jac,
                        det,
                        weight: wu * wv * det.abs(),
                        values: basis.values,
                        grads,
                    });
                }
            }
            out.push(ElementQuad { indices, points });
        }
    }
    Ok(out)
}

/// Minimum Jacobian determinant over the `(p+1)`-point Gauss grid of every
/// element; valid iff it exceeds `eps_j`.
pub fn check_mesh_validity(model: &MultipatchModel, eps_j: f64) -> (bool, f64) {
    let mut min_det = f64::INFINITY;
    for p in &model.patches {
        let n = p.knots_u.degree().max(p.knots_v.degree()) + 1;
        match patch_elements(p, n) {
            Ok(elems) => {
                for e in &elems {
                    for q in &e.points {
                        if q.det.is_nan() {
                            return (false, f64::NAN);
                        }
                        min_det = min_det.min(q.det);
                    }
                }
            }
            Err(_) => return (false, f64::NAN),
        }
    }
    (min_det > eps_j, min_det)
}

/// Area of one patch by Gauss quadrature.
pub fn patch_area(patch: &NurbsPatch, n_pts: usize) -> Result<f64> {
    Ok(patch_elements(patch, n_pts)?
        .iter()
        .flat_map(|e| e.points.iter().map(|q| q.weight))
        .sum())
}

/// Annular sector patch of degree 2: linear in `u` from `r0` to `r1`, exact
/// arc in `v` between the unit directions `d0` and `d1` (counterclockwise).
pub fn annular_sector(d0: Point, d1: Point, r0: f64, r1: f64) -> Result<NurbsPatch> {
    let cos_delta = d0[0] * d1[0] + d0[1] * d1[1];
    if cos_delta <= 0.0 {
        return Err(Error::Geometry(
            "arc sector must span less than 90 degrees".into(),
        ));
    }
    let w_mid = ((1.0 + cos_delta) / 2.0).sqrt();
    let mid = [
        (d0[0] + d1[0]) / (1.0 + cos_delta),
        (d0[1] + d1[1]) / (1.0 + cos_delta),
    ];
    let dirs = [d0, mid, d1];
    let radii = [r0, 0.5 * (r0 + r1), r1];
    let mut pts = Vec::with_capacity(9);
    let mut w = Vec::with_capacity(9);
    for (j, d) in dirs.iter().enumerate() {
        for r in radii {
            pts.push([r * d[0], r * d[1]]);
            w.push(if j == 1 { w_mid } else { 1.0 });
        }
    }
    let kv = KnotVector::new(vec![0., 0., 0., 1., 1., 1.], 2)?;
    NurbsPatch::new(kv.clone(), kv, pts, w)
}

fn uniform_interior(elements: usize) -> Vec<f64> {
    (1..elements).map(|i| i as f64 / elements as f64).collect()
}

/// Ring layers of annular sectors sharing the angular partition `angles`.
struct RingBuilder<'a> {
    angles: &'a [f64],
    angular_elements: &'a [usize],
    radii: [f64; 4],
    radial_elements: [usize; 3],
    refine: usize,
}

impl RingBuilder<'_> {
    fn build(
        &self,
        tag: impl Fn(usize, usize) -> RegionTag,
    ) -> Result<(Vec<NurbsPatch>, Vec<RegionTag>, Vec<EdgeMatch>)> {
        let m = self.angles.len();
        // Ring closure reuses the same direction vectors for shared edges.
        let dirs: Vec<Point> = self.angles.iter().map(|a| [a.cos(), a.sin()]).collect();
        let mut patches = Vec::with_capacity(3 * m);
        let mut tags = Vec::with_capacity(3 * m);
        for layer in 0..3 {
            let ru = uniform_interior(self.radial_elements[layer] * self.refine);
            for k in 0..m {
                let base = annular_sector(
                    dirs[k],
                    dirs[(k + 1) % m],
                    self.radii[layer],
                    self.radii[layer + 1],
                )?;
                let uu = uniform_interior(self.angular_elements[k] * self.refine);
                patches.push(base.insert_knots(&ru, &uu)?);
                tags.push(tag(layer, k));
            }
        }
        let mut conn = Vec::new();
        for layer in 0..3 {
            for k in 0..m {
                conn.push(EdgeMatch {
                    a: EdgeRef::new(layer * m + k, Edge::VMax),
                    b: EdgeRef::new(layer * m + (k + 1) % m, Edge::VMin),
                    reversed: false,
                });
            }
        }
        for layer in 0..2 {
            for k in 0..m {
                conn.push(EdgeMatch {
                    a: EdgeRef::new(layer * m + k, Edge::UMax),
                    b: EdgeRef::new((layer + 1) * m + k, Edge::UMin),
                    reversed: false,
                });
            }
        }
        Ok((patches, tags, conn))
    }
}

fn elements_for(span: f64, cfg: &MachineConfig) -> usize {
    ((span.to_degrees() / cfg.angular_element_deg).round() as usize).max(1)
}

/// Phase and direction of slot `s` in the balanced three-phase layout.
pub fn slot_phase(s: usize, slots_per_pole_phase: usize) -> (u8, bool) {
    const PATTERN: [(u8, bool); 6] = [
        (1, true),
        (3, false),
        (2, true),
        (1, false),
        (3, true),
        (2, false),
    ];
    PATTERN[(s / slots_per_pole_phase) % 6]
}

/// Parametric full-circle demo machine: `(stator, rotor)`.
pub fn build_demo_machine(cfg: &MachineConfig) -> Result<(MultipatchModel, MultipatchModel)> {
    cfg.validate()?;
    let refine = 1usize << cfg.refinement;
    let np = cfg.pole_pairs;

    // Rotor: magnets centered at k * pitch, inter-pole iron between them.
    let pitch = PI / np as f64;
    let half_mag = 0.5 * cfg.magnet_span_fraction * pitch;
    let mut r_angles = Vec::with_capacity(4 * np);
    let mut r_elems = Vec::with_capacity(4 * np);
    for k in 0..2 * np {
        let c = k as f64 * pitch;
        r_angles.push(c - half_mag);
        r_elems.push(elements_for(2.0 * half_mag, cfg));
        r_angles.push(c + half_mag);
        r_elems.push(elements_for(pitch - 2.0 * half_mag, cfg));
    }
    let rotor_rb = RingBuilder {
        angles: &r_angles,
        angular_elements: &r_elems,
        radii: [
            cfg.shaft_radius,
            cfg.rotor_iron_radius,
            cfg.magnet_radius,
            cfg.interface_radius,
        ],
        radial_elements: cfg.rotor_radial_elements,
        refine,
    };
    let (patches, tags, connectivity) = rotor_rb.build(|layer, k| match layer {
        0 => RegionTag::RotorIron,
        1 if k % 2 == 0 => {
            if (k / 2) % 2 == 0 {
                RegionTag::MagnetPositive
            } else {
                RegionTag::MagnetNegative
            }
        }
        1 => RegionTag::RotorIron,
        _ => RegionTag::RotorAir,
    })?;
    let mag = cfg.magnetization_magnitude();
    let magnetization = tags
        .iter()
        .enumerate()
        .map(|(idx, t)| {
            let sign = match t {
                RegionTag::MagnetPositive => 1.0,
                RegionTag::MagnetNegative => -1.0,
                _ => return None,
            };
            Some(match cfg.magnetization {
                MagnetizationKind::Radial => Magnetization::Radial {
                    magnitude: sign * mag,
                },
                MagnetizationKind::Parallel => {
                    let c = ((idx % r_angles.len()) / 2) as f64 * pitch;
                    Magnetization::Uniform {
                        m: [sign * mag * c.cos(), sign * mag * c.sin()],
                    }
                }
            })
        })
        .collect();
    let m = r_angles.len();
    let rotor = MultipatchModel {
        side: Side::Rotor,
        patches,
        tags,
        magnetization,
        interface_radius: cfg.interface_radius,
        interface_edges: (0..m)
            .map(|k| EdgeRef::new(2 * m + k, Edge::UMax))
            .collect(),
        dirichlet_edges: (0..m).map(|k| EdgeRef::new(k, Edge::UMin)).collect(),
        connectivity,
    };

    // Stator: tooth then slot opening per slot pitch.
    let sp = 2.0 * PI / cfg.slots as f64;
    let tooth = (1.0 - cfg.slot_span_fraction) * sp;
    let mut s_angles = Vec::with_capacity(2 * cfg.slots);
    let mut s_elems = Vec::with_capacity(2 * cfg.slots);
    for s in 0..cfg.slots {
        s_angles.push(s as f64 * sp);
        s_elems.push(elements_for(tooth, cfg));
        s_angles.push(s as f64 * sp + tooth);
        s_elems.push(elements_for(sp - tooth, cfg));
    }
    let q = cfg.slots / (6 * np);
    let stator_rb = RingBuilder {
        angles: &s_angles,
        angular_elements: &s_elems,
        radii: [
            cfg.interface_radius,
            cfg.stator_inner_radius,
            cfg.slot_bottom_radius,
            cfg.stator_outer_radius,
        ],
        radial_elements: cfg.stator_radial_elements,
        refine,
    };
    let (patches, tags, connectivity) = stator_rb.build(|layer, k| match layer {
        0 => RegionTag::StatorAir,
        1 if k % 2 == 1 => {
            let (phase, positive) = slot_phase(k / 2, q);
            RegionTag::Coil { phase, positive }
        }
        _ => RegionTag::StatorIron,
    })?;
    let m = s_angles.len();
    let stator = MultipatchModel {
        side: Side::Stator,
        magnetization: vec![None; patches.len()],
        patches,
        tags,
        interface_radius: cfg.interface_radius,
        interface_edges: (0..m).map(|k| EdgeRef::new(k, Edge::UMin)).collect(),
        dirichlet_edges: (0..m)
            .map(|k| EdgeRef::new(2 * m + k, Edge::UMax))
            .collect(),
        connectivity,
    };

    // Nyquist-type guard: the interface trace space must resolve the highest order.
    let max_order = cfg
        .orders()?
        .iter()
        .map(|l| l.unsigned_abs())
        .max()
        .unwrap_or(0) as usize;
    let need = 2 * max_order + 1;
    for model in [&stator, &rotor] {
        let dm = build_dof_map(model)?;
        if dm.interface_globals.len() < need {
            return Err(Error::config(
                "machine.n_harmonics",
                format!(
                    "{:?} side has {} interface dofs but order {max_order} needs {need}; refine the mesh",
                    model.side,
                    dm.interface_globals.len()
                ),
            ));
        }
    }
    Ok((stator, rotor))
}
