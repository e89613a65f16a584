//! Finite reflection groups: roots, closure enumeration, the fundamental
//! region `F`, orbits and stabilizers of a placed minimum, and the cone `D`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::sampling::{halton_directions, halton_point};
use crate::vecops::{dist, dot, norm};

/// Tolerance on `|r| = 1` for roots.
pub const UNIT_TOL: f64 = 1e-12;
/// Entry-wise tolerance used to deduplicate group elements, roots and orbit points.
pub const DEDUP_TOL: f64 = 1e-10;
/// Half-width of the band around a wall that counts as "on the wall".
pub const WALL_BAND: f64 = 1e-10;
/// Default bound on the number of enumerated elements.
pub const DEFAULT_ORDER_BOUND: usize = 10_000;

const REGION_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroupError {
    #[error("root {root:?} is not a unit vector (|r| = {norm})")]
    NonUnitRoot { root: Vec<f64>, norm: f64 },
    #[error("the zero vector has no direction")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("a reflection group in R^{dim} needs {dim} fundamental roots, got {got}")]
    RootCount { dim: usize, got: usize },
    #[error("fundamental roots {i} and {j} have positive inner product {value}")]
    AcuteRoots { i: usize, j: usize, value: f64 },
    #[error("fundamental roots are linearly dependent")]
    DependentRoots,
    #[error("not a finite reflection group: closure exceeded {0} elements")]
    NotFinite(usize),
    #[error("unknown group key {0:?}")]
    UnknownGroup(String),
    #[error("point {0:?} does not lie in the closed fundamental region")]
    OutsideFundamentalRegion(Vec<f64>),
    #[error("region D is not an intersection of root half-spaces: {0}")]
    InconsistentRegion(String),
    #[error("cone has empty interior")]
    EmptyInterior,
}

/// Unit normal of a reflecting hyperplane.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Root(Vec<f64>);

impl Root {
    /// Accepts `v` only if it is a unit vector within [`UNIT_TOL`].
    pub fn new(v: Vec<f64>) -> Result<Self, GroupError> {
        let n = norm(&v);
        if v.is_empty() || (n - 1.0).abs() > UNIT_TOL {
            return Err(GroupError::NonUnitRoot { root: v, norm: n });
        }
        Ok(Self(v))
    }

    /// Normalizes a nonzero vector.
    pub fn normalized(v: &[f64]) -> Result<Self, GroupError> {
        let n = norm(v);
        if n < 1e-300 {
            return Err(GroupError::ZeroVector);
        }
        Ok(Self(v.iter().map(|x| x / n).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, u: &[f64]) -> f64 {
        dot(&self.0, u)
    }

    /// `S_r u = u − 2⟨u,r⟩r`.
    pub fn reflect(&self, u: &[f64]) -> Vec<f64> {
        let s = 2.0 * self.dot(u);
        u.iter().zip(&self.0).map(|(x, r)| x - s * r).collect()
    }

    pub fn reflection(&self) -> Orthogonal {
        let n = self.dim();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = if i == j { 1.0 } else { 0.0 } - 2.0 * self.0[i] * self.0[j];
            }
        }
        Orthogonal { n, m }
    }
}

/// Reflects `u` across the hyperplane orthogonal to `r`.
pub fn reflect(r: &Root, u: &[f64]) -> Vec<f64> {
    r.reflect(u)
}

/// Orthogonal `n×n` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Orthogonal {
    n: usize,
    m: Vec<f64>,
}

impl Orthogonal {
    pub fn identity(n: usize) -> Self {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        Self { n, m }
    }

    /// Builds from row-major entries; the caller guarantees orthogonality.
    pub fn from_rows(n: usize, m: Vec<f64>) -> Self {
        assert_eq!(m.len(), n * n);
        Self { n, m }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i * self.n + j]
    }

    /// `g u`
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| (0..n).map(|j| self.m[i * n + j] * u[j]).sum())
            .collect()
    }

    /// `g u` written into `out`.
    #[inline]
    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += self.m[i * n + j] * u[j];
            }
            out[i] = s;
        }
    }

    /// `gᵀ u = g⁻¹ u`
    pub fn apply_transpose(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|j| (0..n).map(|i| self.m[i * n + j] * u[i]).sum())
            .collect()
    }

    /// `self · other`
    pub fn compose(&self, other: &Orthogonal) -> Orthogonal {
        let n = self.n;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = (0..n).map(|k| self.m[i * n + k] * other.m[k * n + j]).sum();
            }
        }
        Orthogonal { n, m }
    }

    pub fn transpose(&self) -> Orthogonal {
        let n = self.n;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[j * n + i] = self.m[i * n + j];
            }
        }
        Orthogonal { n, m }
    }

    pub fn distance(&self, other: &Orthogonal) -> f64 {
        self.m
            .iter()
            .zip(&other.m)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `max |gᵀg − Id|`
    pub fn orthogonality_defect(&self) -> f64 {
        self.transpose().compose(self).distance(&Orthogonal::identity(self.n))
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.m)
    }
}

/// A finite group generated by reflections across the walls of a simplicial
/// fundamental cone.
#[derive(Debug, Clone)]
pub struct ReflectionGroup {
    dim: usize,
    fundamental_roots: Vec<Root>,
    elements: Vec<Orthogonal>,
    t: Vec<f64>,
    roots: Vec<Root>,
    coweights: Vec<Vec<f64>>,
}

/// Enumerates the group generated by `fundamental_roots` with the default
/// order bound.
pub fn generate_group(fundamental_roots: Vec<Root>) -> Result<ReflectionGroup, GroupError> {
    ReflectionGroup::generate(fundamental_roots)
}

impl ReflectionGroup {
    pub fn generate(fundamental_roots: Vec<Root>) -> Result<Self, GroupError> {
        Self::generate_bounded(fundamental_roots, DEFAULT_ORDER_BOUND)
    }

    pub fn generate_bounded(
        fundamental_roots: Vec<Root>,
        order_bound: usize,
    ) -> Result<Self, GroupError> {
        let dim = fundamental_roots.first().map(Root::dim).unwrap_or(0);
        if fundamental_roots.len() != dim || dim == 0 {
            return Err(GroupError::RootCount {
                dim,
                got: fundamental_roots.len(),
            });
        }
        for r in &fundamental_roots {
            if r.dim() != dim {
                return Err(GroupError::DimensionMismatch {
                    expected: dim,
                    got: r.dim(),
                });
            }
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                let value = fundamental_roots[i].dot(fundamental_roots[j].as_slice());
                if value > UNIT_TOL {
                    return Err(GroupError::AcuteRoots { i, j, value });
                }
            }
        }
        let pi_mat = DMatrix::from_fn(dim, dim, |i, j| fundamental_roots[i].as_slice()[j]);
        let inv = pi_mat
            .clone()
            .try_inverse()
            .filter(|_| pi_mat.determinant().abs() > 1e-12)
            .ok_or(GroupError::DependentRoots)?;
        // Columns of Π⁻¹ are the coweights: ⟨ω_i, r_j⟩ = δ_ij.
        let coweights: Vec<Vec<f64>> = (0..dim)
            .map(|i| (0..dim).map(|k| inv[(k, i)]).collect())
            .collect();

        let generators: Vec<Orthogonal> = fundamental_roots.iter().map(Root::reflection).collect();
        let mut elements = vec![Orthogonal::identity(dim)];
        let mut cursor = 0;
        while cursor < elements.len() {
            let g = elements[cursor].clone();
            cursor += 1;
            for s in &generators {
                let p = s.compose(&g);
                if !elements.iter().any(|e| e.distance(&p) <= DEDUP_TOL) {
                    if elements.len() >= order_bound {
                        return Err(GroupError::NotFinite(order_bound));
                    }
                    elements.push(p);
                }
            }
        }

        let mut roots: Vec<Root> = Vec::new();
        for g in &elements {
            for r in &fundamental_roots {
                let v = g.apply(r.as_slice());
                if !roots.iter().any(|q| dist(q.as_slice(), &v) <= DEDUP_TOL) {
                    roots.push(Root(v));
                }
            }
        }

        // Generic interior point t = Σ π^{-i} ω_i of the fundamental cone.
        let mut t = vec![0.0; dim];
        for (i, w) in coweights.iter().enumerate() {
            let s = PI.powi(-(i as i32));
            for k in 0..dim {
                t[k] += s * w[k];
            }
        }

        Ok(Self {
            dim,
            fundamental_roots,
            elements,
            t,
            roots,
            coweights,
        })
    }

    /// Built-in groups: `"dihedral-k"` (k ≥ 2), `"A3-tetrahedral"`, `"B3-cube"`, `"Z2-line"`.
    pub fn builtin(key: &str) -> Result<Self, GroupError> {
        let roots: Vec<Vec<f64>> = match key {
            "Z2-line" => vec![vec![1.0]],
            "A3-tetrahedral" => vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![-0.5, -0.5, 0.5f64.sqrt()],
            ],
            "B3-cube" => {
                let s = 0.5f64.sqrt();
                vec![vec![1.0, 0.0, 0.0], vec![-s, s, 0.0], vec![0.0, -s, s]]
            }
            _ => {
                let k: usize = key
                    .strip_prefix("dihedral-")
                    .and_then(|s| s.parse().ok())
                    .filter(|&k| k >= 2)
                    .ok_or_else(|| GroupError::UnknownGroup(key.to_string()))?;
                let a = PI / k as f64;
                let mut r2 = vec![a.sin(), -a.cos()];
                // Keep exact zeros for k = 2.
                if k == 2 {
                    r2 = vec![1.0, 0.0];
                }
                vec![vec![0.0, 1.0], r2]
            }
        };
        let roots = roots
            .into_iter()
            .map(|v| Root::normalized(&v))
            .collect::<Result<Vec<_>, _>>()?;
        Self::generate(roots)
    }

    /// Builds a group from custom root coordinates (normalized first).
    pub fn from_root_coordinates(coords: &[Vec<f64>]) -> Result<Self, GroupError> {
        let roots = coords
            .iter()
            .map(|v| Root::normalized(v))
            .collect::<Result<Vec<_>, _>>()?;
        Self::generate(roots)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    /// Elements; index 0 is the identity.
    pub fn elements(&self) -> &[Orthogonal] {
        &self.elements
    }

    pub fn fundamental_roots(&self) -> &[Root] {
        &self.fundamental_roots
    }

    /// All roots Δ (both signs).
    pub fn roots(&self) -> &[Root] {
        &self.roots
    }

    /// Δ⁺ = {r ∈ Δ : ⟨t, r⟩ > 0}.
    pub fn positive_roots(&self) -> Vec<Root> {
        self.roots
            .iter()
            .filter(|r| r.dot(&self.t) > 0.0)
            .cloned()
            .collect()
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    /// Extreme rays of F̄ (dual to the fundamental roots).
    pub fn coweights(&self) -> &[Vec<f64>] {
        &self.coweights
    }

    pub fn fundamental_region(&self) -> Cone {
        Cone {
            dim: self.dim,
            walls: self.fundamental_roots.clone(),
            label: ConeLabel::F,
            interior_point: self.t.clone(),
        }
    }

    /// Index of the listed element closest to `m`, if within [`DEDUP_TOL`].
    pub fn index_of(&self, m: &Orthogonal) -> Option<usize> {
        self.elements.iter().position(|e| e.distance(m) <= DEDUP_TOL)
    }

    /// Index of an element `g` with `gᵀx ∈ F̄`, found by folding `x` across
    /// violated fundamental walls.
    pub fn chamber_of(&self, x: &[f64]) -> usize {
        let mut y = x.to_vec();
        let mut h = Orthogonal::identity(self.dim);
        let scale = norm(x).max(1.0);
        for _ in 0..(4 * self.order() + 16) {
            let violated = self
                .fundamental_roots
                .iter()
                .find(|r| r.dot(&y) < -WALL_BAND * scale);
            match violated {
                Some(r) => {
                    y = r.reflect(&y);
                    h = r.reflection().compose(&h);
                }
                None => break,
            }
        }
        // y = h x, so g = hᵀ maps F̄ onto the chamber holding x.
        self.index_of(&h.transpose())
            .expect("folding produces a group element")
    }

    /// Indices of all elements `g` with `gᵀx ∈ F̄` within the wall band.
    pub fn chambers_containing(&self, x: &[f64]) -> Vec<usize> {
        let scale = norm(x).max(1.0);
        self.elements
            .iter()
            .enumerate()
            .filter(|(_, g)| {
                let y = g.apply_transpose(x);
                self.fundamental_roots
                    .iter()
                    .all(|r| r.dot(&y) >= -WALL_BAND * scale)
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Max over pairs of the distance from `g·h` to the nearest listed element.
    pub fn closure_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in &self.elements {
            for b in &self.elements {
                let p = a.compose(b);
                let d = self
                    .elements
                    .iter()
                    .map(|e| e.distance(&p))
                    .fold(f64::INFINITY, f64::min);
                worst = worst.max(d);
            }
        }
        worst
    }

    pub fn orbit_and_stabilizer(&self, a1: &[f64]) -> Result<OrbitData, GroupError> {
        if a1.len() != self.dim {
            return Err(GroupError::DimensionMismatch {
                expected: self.dim,
                got: a1.len(),
            });
        }
        let scale = norm(a1).max(1.0);
        if !self.fundamental_region().contains_with(a1, WALL_BAND * scale) {
            return Err(GroupError::OutsideFundamentalRegion(a1.to_vec()));
        }
        let tol = DEDUP_TOL * scale;
        let mut stabilizer = Vec::new();
        let mut orbit: Vec<Vec<f64>> = Vec::new();
        let mut representatives = Vec::new();
        for (i, g) in self.elements.iter().enumerate() {
            let p = g.apply(a1);
            if dist(&p, a1) <= tol {
                stabilizer.push(i);
            }
            if !orbit.iter().any(|q| dist(q, &p) <= tol) {
                orbit.push(p);
                representatives.push(i);
            }
        }
        Ok(OrbitData {
            a1: a1.to_vec(),
            stabilizer_order: stabilizer.len(),
            n_minima: orbit.len(),
            stabilizer,
            orbit,
            representatives,
        })
    }

    /// The cone `D = Int(⋃_{g ∈ Stab(a₁)} gF̄)`.
    ///
    /// The closure of the union is generated by the images `gω_i` of the
    /// extreme rays of F̄. A positive root is a wall of `D̄` when its half-space
    /// holds all these rays and its hyperplane carries `n − 1` independent
    /// ones. The resulting cone is then checked against quasi-random samples
    /// in both directions.
    pub fn region_d(&self, orbit: &OrbitData) -> Result<Cone, GroupError> {
        let n = self.dim;
        if orbit.stabilizer_order == self.order() {
            return Ok(Cone {
                dim: n,
                walls: Vec::new(),
                label: ConeLabel::D,
                interior_point: self.t.clone(),
            });
        }
        if orbit.stabilizer_order == 1 {
            let mut f = self.fundamental_region();
            f.label = ConeLabel::D;
            return Ok(f);
        }
        let tol = 1e-9;
        let mut rays: Vec<Vec<f64>> = Vec::new();
        for &gi in &orbit.stabilizer {
            for w in &self.coweights {
                let v = self.elements[gi].apply(w);
                let r = norm(&v);
                let v: Vec<f64> = v.iter().map(|x| x / r).collect();
                if !rays.iter().any(|q| dist(q, &v) <= DEDUP_TOL) {
                    rays.push(v);
                }
            }
        }
        let mut walls = Vec::new();
        for r in self.positive_roots() {
            if rays.iter().any(|v| r.dot(v) < -tol) {
                continue;
            }
            let active: Vec<&Vec<f64>> = rays.iter().filter(|v| r.dot(v).abs() <= tol).collect();
            if active.is_empty() {
                continue;
            }
            let m = DMatrix::from_fn(active.len(), n, |i, j| active[i][j]);
            let rank = m.svd(false, false).rank(1e-9);
            if rank == n - 1 {
                walls.push(r);
            }
        }
        if walls.is_empty() {
            return Err(GroupError::InconsistentRegion(
                "no root hyperplane supports the stabilizer patch".into(),
            ));
        }
        let cone = Cone::with_interior_point(n, walls, ConeLabel::D, orbit.a1.clone())
            .map_err(|_| {
                GroupError::InconsistentRegion("a1 is not interior to the candidate cone".into())
            })?;

        // Points of the candidate cone must lie in a stabilizer chamber.
        for dir in halton_directions(n, REGION_SAMPLES) {
            if !cone.contains_strictly(&dir, 1e-9) {
                continue;
            }
            let ok = self
                .chambers_containing(&dir)
                .iter()
                .any(|g| orbit.stabilizer.contains(g));
            if !ok {
                return Err(GroupError::InconsistentRegion(format!(
                    "sample {dir:?} of the candidate cone lies outside every stabilizer chamber"
                )));
            }
        }
        // Images of F̄ under the stabilizer must lie in the candidate cone.
        let per = REGION_SAMPLES / orbit.stabilizer.len().max(1) + 1;
        for &gi in &orbit.stabilizer {
            for k in 0..per {
                let lam = halton_point(k, n);
                let mut p = vec![0.0; n];
                for (l, w) in lam.iter().zip(&self.coweights) {
                    for j in 0..n {
                        p[j] += l * w[j];
                    }
                }
                let q = self.elements[gi].apply(&p);
                if !cone.contains_with(&q, 1e-9) {
                    return Err(GroupError::InconsistentRegion(format!(
                        "stabilizer image {q:?} escapes the candidate cone"
                    )));
                }
            }
        }
        Ok(cone)
    }
}

/// Orbit of a placed minimum under the group.
#[derive(Debug, Clone, Serialize)]
pub struct OrbitData {
    pub a1: Vec<f64>,
    pub stabilizer_order: usize,
    /// Element indices fixing `a1`.
    pub stabilizer: Vec<usize>,
    /// The minima set `A = G·a1`.
    pub orbit: Vec<Vec<f64>>,
    /// `representatives[k]` maps `a1` to `orbit[k]`.
    pub representatives: Vec<usize>,
    #[serde(rename = "N")]
    pub n_minima: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConeLabel {
    F,
    D,
}

/// Convex cone `{u : ⟨u, r⟩ ≥ 0 for every wall r}`.
#[derive(Debug, Clone, Serialize)]
pub struct Cone {
    dim: usize,
    walls: Vec<Root>,
    label: ConeLabel,
    interior_point: Vec<f64>,
}

/// Distance from a point to the boundary of a cone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WallDistance {
    pub distance: f64,
    /// False when the point lies outside the closed cone; `distance` is then 0.
    pub inside: bool,
}

impl Cone {
    /// Builds a cone and searches for an interior point.
    pub fn new(dim: usize, walls: Vec<Root>, label: ConeLabel) -> Result<Self, GroupError> {
        for w in &walls {
            if w.dim() != dim {
                return Err(GroupError::DimensionMismatch {
                    expected: dim,
                    got: w.dim(),
                });
            }
        }
        if walls.is_empty() {
            return Ok(Self {
                dim,
                walls,
                label,
                interior_point: vec![0.0; dim],
            });
        }
        let mut candidates = Vec::new();
        let mut sum = vec![0.0; dim];
        for w in &walls {
            for j in 0..dim {
                sum[j] += w.as_slice()[j];
            }
        }
        candidates.push(sum);
        let m = DMatrix::from_fn(walls.len(), dim, |i, j| walls[i].as_slice()[j]);
        let ones = nalgebra::DVector::from_element(walls.len(), 1.0);
        if let Ok(sol) = m.svd(true, true).solve(&ones, 1e-12) {
            candidates.push(sol.iter().copied().collect());
        }
        for p in candidates {
            if walls.iter().all(|w| w.dot(&p) > 1e-12) {
                return Ok(Self {
                    dim,
                    walls,
                    label,
                    interior_point: p,
                });
            }
        }
        Err(GroupError::EmptyInterior)
    }

    /// Builds a cone whose interior is known to contain `p`.
    pub fn with_interior_point(
        dim: usize,
        walls: Vec<Root>,
        label: ConeLabel,
        p: Vec<f64>,
    ) -> Result<Self, GroupError> {
        if walls.iter().any(|w| w.dot(&p) <= 0.0) {
            return Err(GroupError::EmptyInterior);
        }
        Ok(Self {
            dim,
            walls,
            label,
            interior_point: p,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn walls(&self) -> &[Root] {
        &self.walls
    }

    pub fn label(&self) -> ConeLabel {
        self.label
    }

    pub fn interior_point(&self) -> &[f64] {
        &self.interior_point
    }

    /// Membership in the closed cone with the default wall band.
    pub fn contains(&self, u: &[f64]) -> bool {
        self.contains_with(u, WALL_BAND)
    }

    pub fn contains_with(&self, u: &[f64], band: f64) -> bool {
        self.walls.iter().all(|w| w.dot(u) >= -band)
    }

    pub fn contains_strictly(&self, u: &[f64], margin: f64) -> bool {
        self.walls.iter().all(|w| w.dot(u) > margin)
    }

    /// `d(x, ∂D) = min_r ⟨x, r⟩` for `x ∈ D̄`; infinite for a wall-free cone.
    pub fn wall_distance(&self, x: &[f64]) -> WallDistance {
        let mut d = f64::INFINITY;
        for w in &self.walls {
            let s = w.dot(x);
            if s < -WALL_BAND {
                return WallDistance {
                    distance: 0.0,
                    inside: false,
                };
            }
            d = d.min(s.max(0.0));
        }
        WallDistance {
            distance: d,
            inside: true,
        }
    }
}

/// Wall distance as a free function.
pub fn wall_distance(cone: &Cone, x: &[f64]) -> WallDistance {
    cone.wall_distance(x)
}

/// Root-by-root positivity report of a sampled map.
#[derive(Debug, Clone, Serialize)]
pub struct PositivityReport {
    /// Per root: `min{⟨u(x), r⟩ : ⟨x, r⟩ ≥ 0}` (infinite if no sample qualifies).
    pub per_root: Vec<f64>,
    pub margin: f64,
    pub samples: usize,
    pub tol: f64,
    pub pass: bool,
}

/// Checks `u(𝒫_r⁺) ⊂ 𝒫_r⁺` on samples `(x, u(x))` for every root in `roots`.
pub fn positivity_by_roots<'a, I>(samples: I, roots: &[Root], tol: f64) -> PositivityReport
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    let mut per_root = vec![f64::INFINITY; roots.len()];
    let mut count = 0;
    for (x, u) in samples {
        count += 1;
        for (k, r) in roots.iter().enumerate() {
            if r.dot(x) >= -WALL_BAND {
                per_root[k] = per_root[k].min(r.dot(u));
            }
        }
    }
    let margin = per_root.iter().copied().fold(f64::INFINITY, f64::min);
    PositivityReport {
        pass: margin >= -tol,
        per_root,
        margin,
        samples: count,
        tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        dist(a, b) <= tol
    }

    #[test]
    fn reflect_examples() {
        let r = Root::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(reflect(&r, &[3.0, 4.0]), vec![-3.0, 4.0]);
        let s = 0.5f64.sqrt();
        let r = Root::new(vec![s, -s]).unwrap();
        assert!(close(&reflect(&r, &[1.0, 0.0]), &[0.0, 1.0], 1e-15));
        assert!(close(&reflect(&r, &[2.0, 2.0]), &[2.0, 2.0], 1e-15));
    }

    #[test]
    fn non_unit_root_rejected() {
        assert!(matches!(
            Root::new(vec![1.0, 1.0]),
            Err(GroupError::NonUnitRoot { .. })
        ));
        assert!(Root::new(vec![1.0 + 1e-13, 0.0]).is_ok());
        assert!(Root::normalized(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn group_orders() {
        for (key, order) in [
            ("Z2-line", 2),
            ("dihedral-2", 4),
            ("dihedral-3", 6),
            ("dihedral-4", 8),
            ("dihedral-6", 12),
            ("A3-tetrahedral", 24),
            ("B3-cube", 48),
        ] {
            let g = ReflectionGroup::builtin(key).unwrap();
            assert_eq!(g.order(), order, "{key}");
            assert_eq!(g.roots().len(), g.positive_roots().len() * 2, "{key}");
        }
    }

    #[test]
    fn z2_is_plus_minus_identity() {
        let g = ReflectionGroup::builtin("Z2-line").unwrap();
        let mut entries: Vec<f64> = g.elements().iter().map(|e| e.get(0, 0)).collect();
        entries.sort_by(f64::total_cmp);
        assert_eq!(entries, vec![-1.0, 1.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            ReflectionGroup::builtin("icosahedral"),
            Err(GroupError::UnknownGroup(_))
        ));
        let acute = vec![
            Root::new(vec![1.0, 0.0]).unwrap(),
            Root::normalized(&[1.0, 1.0]).unwrap(),
        ];
        assert!(matches!(
            ReflectionGroup::generate(acute),
            Err(GroupError::AcuteRoots { .. })
        ));
        let dependent = vec![
            Root::new(vec![1.0, 0.0]).unwrap(),
            Root::new(vec![-1.0, 0.0]).unwrap(),
        ];
        assert!(matches!(
            ReflectionGroup::generate(dependent),
            Err(GroupError::DependentRoots)
        ));
    }

    #[test]
    fn irrational_angle_is_not_finite() {
        let roots = vec![
            Root::new(vec![0.0, 1.0]).unwrap(),
            Root::new(vec![1.0f64.sin(), -1.0f64.cos()]).unwrap(),
        ];
        assert_eq!(
            ReflectionGroup::generate_bounded(roots, 200).unwrap_err(),
            GroupError::NotFinite(200)
        );
    }

    #[test]
    fn dihedral_three_region() {
        let g = ReflectionGroup::builtin("dihedral-3").unwrap();
        let orbit = g.orbit_and_stabilizer(&[1.0, 0.0]).unwrap();
        assert_eq!(orbit.stabilizer_order, 2);
        assert_eq!(orbit.n_minima, 3);
        let d = g.region_d(&orbit).unwrap();
        assert_eq!(d.walls().len(), 2);
        let h = 3f64.sqrt() / 2.0;
        for w in d.walls() {
            let v = w.as_slice();
            assert!((v[0] - h).abs() < 1e-12 && (v[1].abs() - 0.5).abs() < 1e-12);
        }
        let wd = d.wall_distance(&[2.0, 0.0]);
        assert!(wd.inside && (wd.distance - 2.0 * h).abs() < 1e-12);
        let off = d.wall_distance(&[-1.0, 0.0]);
        assert!(!off.inside && off.distance == 0.0);
    }

    #[test]
    fn tetrahedral_region_matches_listed_generators() {
        let g = ReflectionGroup::builtin("A3-tetrahedral").unwrap();
        let a1 = [(2.0f64 / 3.0).sqrt(), 0.0, 1.0 / 3f64.sqrt()];
        let orbit = g.orbit_and_stabilizer(&a1).unwrap();
        assert_eq!(orbit.n_minima, 4);
        assert_eq!(orbit.stabilizer_order, 6);
        let d = g.region_d(&orbit).unwrap();
        assert_eq!(d.walls().len(), 3);
        // Generators of the simplicial cone lie on two walls each and inside.
        let s = 0.5f64.sqrt();
        let gens = [
            [0.0, (2.0f64 / 3.0).sqrt(), 1.0 / 3f64.sqrt()],
            [0.0, -(2.0f64 / 3.0).sqrt(), 1.0 / 3f64.sqrt()],
            [(2.0f64 / 3.0).sqrt(), 0.0, -1.0 / 3f64.sqrt()],
        ];
        for v in &gens {
            assert!(d.contains(v));
            let on_walls = d.walls().iter().filter(|w| w.dot(v).abs() < 1e-12).count();
            assert_eq!(on_walls, 2, "{v:?}");
        }
        let expected = [
            vec![1.0, 0.0, 0.0],
            vec![0.5, -0.5, s],
            vec![0.5, 0.5, s],
        ];
        for e in &expected {
            assert!(d.walls().iter().any(|w| close(w.as_slice(), e, 1e-12)), "{e:?}");
        }
    }

    #[test]
    fn trivial_stabilizer_gives_fundamental_region() {
        let g = ReflectionGroup::builtin("B3-cube").unwrap();
        let orbit = g.orbit_and_stabilizer(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(orbit.stabilizer_order, 1);
        let d = g.region_d(&orbit).unwrap();
        assert_eq!(d.walls(), g.fundamental_roots());
    }

    #[test]
    fn origin_placement_gives_whole_space() {
        let g = ReflectionGroup::builtin("B3-cube").unwrap();
        let orbit = g.orbit_and_stabilizer(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(orbit.n_minima, 1);
        let d = g.region_d(&orbit).unwrap();
        assert!(d.walls().is_empty());
        assert!(d.wall_distance(&[1.0, -2.0, 0.5]).distance.is_infinite());
    }

    #[test]
    fn placement_outside_fundamental_region_rejected() {
        let g = ReflectionGroup::builtin("dihedral-3").unwrap();
        assert!(matches!(
            g.orbit_and_stabilizer(&[-1.0, 0.0]),
            Err(GroupError::OutsideFundamentalRegion(_))
        ));
    }

    #[test]
    fn chamber_lookup_folds_into_fundamental_region() {
        let g = ReflectionGroup::builtin("B3-cube").unwrap();
        let f = g.fundamental_region();
        for x in [[-3.0, 1.0, 0.5], [0.2, -0.1, -4.0], [1.0, 1.0, 1.0]] {
            let k = g.chamber_of(&x);
            assert!(f.contains(&g.elements()[k].apply_transpose(&x)));
        }
    }

    #[test]
    fn cone_interior_search() {
        let walls = vec![
            Root::new(vec![1.0, 0.0]).unwrap(),
            Root::new(vec![0.0, 1.0]).unwrap(),
        ];
        let c = Cone::new(2, walls, ConeLabel::F).unwrap();
        assert!(c.contains_strictly(c.interior_point(), 0.0));
        let opposed = vec![
            Root::new(vec![1.0, 0.0]).unwrap(),
            Root::new(vec![-1.0, 0.0]).unwrap(),
        ];
        assert_eq!(
            Cone::new(2, opposed, ConeLabel::D).unwrap_err(),
            GroupError::EmptyInterior
        );
    }

    #[test]
    fn positivity_examples() {
        let g = ReflectionGroup::builtin("dihedral-3").unwrap();
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let a = i as f64 * 0.37;
                vec![a.cos() * (1.0 + i as f64 * 0.1), a.sin()]
            })
            .collect();
        let id = positivity_by_roots(pts.iter().map(|x| (x.as_slice(), x.as_slice())), g.roots(), 1e-12);
        assert!(id.pass);
        let neg: Vec<Vec<f64>> = pts.iter().map(|x| x.iter().map(|v| -v).collect()).collect();
        let flip = positivity_by_roots(
            pts.iter().zip(&neg).map(|(x, u)| (x.as_slice(), u.as_slice())),
            g.roots(),
            1e-12,
        );
        assert!(!flip.pass);
        assert!(flip.per_root.iter().all(|v| *v < 0.0));
        let a1 = vec![1.0, 0.0];
        let constant = positivity_by_roots(
            pts.iter().map(|x| (x.as_slice(), a1.as_slice())),
            g.fundamental_roots(),
            1e-12,
        );
        assert!(constant.pass);
    }
}
