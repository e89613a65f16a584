//! Uniform lattices masked to the ball `B(0, R)`, vector fields on them, the
//! zero-flux Laplacian and multilinear sampling.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coxeter::{Cone, Orthogonal, ReflectionGroup};
use crate::vecops::norm;

const ABSENT: u32 = u32::MAX;
const SNAP: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dimension must be 1, 2 or 3 (got {0})")]
    Dimension(usize),
    #[error("need h > 0 and R/h >= 8 (R = {radius}, h = {spacing})")]
    Resolution { radius: f64, spacing: f64 },
    #[error("frame is not orthogonal")]
    Frame,
    #[error("field has {got} values, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("malformed field file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lattice family of a [`Grid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lattice {
    /// `hℤⁿ` with the `2n`-point Laplacian.
    Cubic,
    /// Planar triangular lattice with the 7-point Laplacian; invariant under
    /// the dihedral groups of orders 6 and 12.
    Triangular,
}

/// Lattice nodes `x = h·B·k`, `k ∈ ℤⁿ`, with `|x| ≤ R`.
#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    radius: f64,
    spacing: f64,
    lattice: Lattice,
    frame: Orthogonal,
    basis: Vec<f64>,
    basis_inv: Vec<f64>,
    offsets: Vec<[i64; 3]>,
    half: i64,
    coords: Vec<i32>,
    positions: Vec<f64>,
    lookup: Vec<u32>,
    neighbors: Vec<u32>,
    interior: Vec<bool>,
}

fn mat_vec(m: &[f64], n: usize, v: &[f64]) -> Vec<f64> {
    (0..n).map(|i| (0..n).map(|j| m[i * n + j] * v[j]).sum()).collect()
}

fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (0..n).map(|k| a[i * n + k] * b[k * n + j]).sum();
        }
    }
    out
}

impl Grid {
    pub fn new(dim: usize, radius: f64, spacing: f64) -> Result<Self, GridError> {
        Self::with_frame(dim, radius, spacing, Orthogonal::identity(dim))
    }

    /// Cubic grid whose lattice axes are the columns of `frame`.
    pub fn with_frame(
        dim: usize,
        radius: f64,
        spacing: f64,
        frame: Orthogonal,
    ) -> Result<Self, GridError> {
        Self::build(dim, radius, spacing, Lattice::Cubic, frame)
    }

    /// Planar triangular grid with nearest-neighbour distance `spacing` and
    /// one lattice vector along `e₁`.
    pub fn triangular(radius: f64, spacing: f64) -> Result<Self, GridError> {
        Self::build(2, radius, spacing, Lattice::Triangular, Orthogonal::identity(2))
    }

    fn build(
        dim: usize,
        radius: f64,
        spacing: f64,
        lattice: Lattice,
        frame: Orthogonal,
    ) -> Result<Self, GridError> {
        if !(1..=3).contains(&dim) || (lattice == Lattice::Triangular && dim != 2) {
            return Err(GridError::Dimension(dim));
        }
        if !(spacing > 0.0) || !(radius / spacing >= 8.0) {
            return Err(GridError::Resolution { radius, spacing });
        }
        if frame.dim() != dim || frame.orthogonality_defect() > 1e-12 {
            return Err(GridError::Frame);
        }
        let mut offsets = Vec::new();
        for a in 0..dim {
            let mut e = [0i64; 3];
            e[a] = 1;
            offsets.push(e);
            e[a] = -1;
            offsets.push(e);
        }
        let (shape, reach) = match lattice {
            Lattice::Cubic => (Orthogonal::identity(dim).entries().to_vec(), 1.0),
            Lattice::Triangular => {
                offsets.push([-1, 1, 0]);
                offsets.push([1, -1, 0]);
                (vec![1.0, 0.5, 0.0, 0.75f64.sqrt()], 1.0 + 1.0 / 3f64.sqrt())
            }
        };
        let basis = mat_mul(frame.entries(), &shape, dim);
        let inv = nalgebra::DMatrix::from_row_slice(dim, dim, &basis)
            .try_inverse()
            .ok_or(GridError::Frame)?;
        let basis_inv: Vec<f64> = (0..dim * dim).map(|k| inv[(k / dim, k % dim)]).collect();
        let half = (reach * radius / spacing + 1e-9).floor() as i64 + 1;
        let side = (2 * half + 1) as usize;
        let total = side.pow(dim as u32);
        let mut lookup = vec![ABSENT; total];
        let mut coords = Vec::new();
        let mut positions = Vec::new();
        let r2 = radius * radius * (1.0 + 1e-12);
        for flat in 0..total {
            let mut k = [0i64; 3];
            let mut rem = flat;
            for slot in k.iter_mut().take(dim) {
                *slot = (rem % side) as i64 - half;
                rem /= side;
            }
            let kf: Vec<f64> = k[..dim].iter().map(|&v| v as f64 * spacing).collect();
            let x = mat_vec(&basis, dim, &kf);
            if x.iter().map(|v| v * v).sum::<f64>() > r2 {
                continue;
            }
            lookup[flat] = (coords.len() / dim) as u32;
            coords.extend(k[..dim].iter().map(|&v| v as i32));
            positions.extend(x);
        }
        let count = coords.len() / dim;
        let deg = offsets.len();
        let mut grid = Self {
            dim,
            radius,
            spacing,
            lattice,
            frame,
            basis,
            basis_inv,
            offsets,
            half,
            coords,
            positions,
            lookup,
            neighbors: vec![0; count * deg],
            interior: vec![true; count],
        };
        for i in 0..count {
            let mut k = [0i64; 3];
            for a in 0..dim {
                k[a] = grid.coords[i * dim + a] as i64;
            }
            for s in 0..deg {
                let mut kn = k;
                for a in 0..dim {
                    kn[a] += grid.offsets[s][a];
                }
                let slot = i * deg + s;
                match grid.node_at(&kn[..dim]) {
                    Some(j) => grid.neighbors[slot] = j as u32,
                    None => {
                        grid.neighbors[slot] = i as u32;
                        grid.interior[i] = false;
                    }
                }
            }
        }
        Ok(grid)
    }

    /// Grid whose lattice and frame are chosen so that as many elements of
    /// `group` as possible map the lattice onto itself.
    pub fn for_group(
        group: &ReflectionGroup,
        radius: f64,
        spacing: f64,
    ) -> Result<Self, GridError> {
        let frame = symmetric_frame(group);
        let cubic = Self::with_frame(group.dim(), radius, spacing, frame)?;
        if group.dim() != 2 {
            return Ok(cubic);
        }
        let tri = Self::triangular(radius, spacing)?;
        let count = |g: &Grid| g.lattice_symmetry_count(group);
        Ok(if count(&tri) > count(&cubic) { tri } else { cubic })
    }

    /// Number of group elements that are lattice symmetries.
    pub fn lattice_symmetry_count(&self, group: &ReflectionGroup) -> usize {
        group
            .elements()
            .iter()
            .filter(|g| self.integer_action(g).is_some())
            .count()
    }

    fn integer_action(&self, g: &Orthogonal) -> Option<Vec<i64>> {
        let n = self.dim;
        let m = mat_mul(&mat_mul(&self.basis_inv, g.entries(), n), &self.basis, n);
        let mut p = vec![0i64; n * n];
        for (slot, &v) in p.iter_mut().zip(&m) {
            let r = v.round();
            if (v - r).abs() > 1e-9 {
                return None;
            }
            *slot = r as i64;
        }
        Some(p)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn frame(&self) -> &Orthogonal {
        &self.frame
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    /// Row-major `B` with `x = h·B·k`.
    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    /// Neighbours per node.
    pub fn degree(&self) -> usize {
        self.offsets.len()
    }

    /// Factor multiplying `Σ_nb (v_nb − v_i)` in the Laplacian.
    pub fn laplacian_scale(&self) -> f64 {
        let h2 = self.spacing * self.spacing;
        match self.lattice {
            Lattice::Cubic => 1.0 / h2,
            Lattice::Triangular => 2.0 / (3.0 * h2),
        }
    }

    /// Volume of one lattice cell.
    pub fn cell_volume(&self) -> f64 {
        match self.lattice {
            Lattice::Cubic => self.spacing.powi(self.dim as i32),
            Lattice::Triangular => 0.75f64.sqrt() * self.spacing * self.spacing,
        }
    }

    pub fn len(&self) -> usize {
        self.interior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn coords(&self, i: usize) -> &[i32] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Neighbours in `±` pairs (`+e₁, −e₁, +e₂, …`, then `±(e₂ − e₁)` on the
    /// triangular lattice); a missing neighbour is the node itself.
    pub fn neighbors(&self, i: usize) -> &[u32] {
        let d = self.degree();
        &self.neighbors[i * d..(i + 1) * d]
    }

    pub fn neighbor_table(&self) -> &[u32] {
        &self.neighbors
    }

    /// True when all neighbours are in the mask.
    pub fn is_interior(&self, i: usize) -> bool {
        self.interior[i]
    }

    pub fn node_at(&self, k: &[i64]) -> Option<usize> {
        let side = 2 * self.half + 1;
        let mut flat = 0i64;
        let mut mult = 1i64;
        for &v in k {
            if v < -self.half || v > self.half {
                return None;
            }
            flat += (v + self.half) * mult;
            mult *= side;
        }
        match self.lookup[flat as usize] {
            ABSENT => None,
            j => Some(j as usize),
        }
    }

    /// Node permutation `i ↦ index of g·x_i` when `g` maps the lattice onto
    /// itself, else `None`.
    pub fn lattice_permutation(&self, g: &Orthogonal) -> Option<Vec<u32>> {
        let p = self.integer_action(g)?;
        let n = self.dim;
        let mut perm = Vec::with_capacity(self.len());
        let mut k = [0i64; 3];
        for i in 0..self.len() {
            let c = self.coords(i);
            for a in 0..n {
                k[a] = (0..n).map(|b| p[a * n + b] * c[b] as i64).sum();
            }
            perm.push(self.node_at(&k[..n])? as u32);
        }
        Some(perm)
    }

    /// Multilinear interpolation stencil at `x` in lattice coordinates.
    pub fn stencil(&self, x: &[f64]) -> Stencil {
        let n = self.dim;
        let xi = mat_vec(&self.basis_inv, n, x);
        let mut base = [0i64; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..n {
            let s = xi[a] / self.spacing;
            let r = s.round();
            if (s - r).abs() < SNAP {
                base[a] = r as i64;
                frac[a] = 0.0;
            } else {
                base[a] = s.floor() as i64;
                frac[a] = s - s.floor();
            }
        }
        let mut st = Stencil {
            nodes: [0; 8],
            weights: [0.0; 8],
            len: 0,
            clipped: norm(x) > self.radius * (1.0 + 1e-12),
        };
        let mut total = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut k = base;
            for a in 0..n {
                let up = (corner >> a) & 1 == 1;
                if up {
                    w *= frac[a];
                    k[a] += 1;
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w == 0.0 {
                continue;
            }
            match self.node_at(&k[..n]) {
                Some(j) => {
                    st.nodes[st.len] = j as u32;
                    st.weights[st.len] = w;
                    st.len += 1;
                    total += w;
                }
                None => st.clipped = true,
            }
        }
        if st.len == 0 {
            let j = self.nearest_node(x);
            st.nodes[0] = j as u32;
            st.weights[0] = 1.0;
            st.len = 1;
            st.clipped = true;
        } else if (total - 1.0).abs() > 0.0 {
            for w in &mut st.weights[..st.len] {
                *w /= total;
            }
        }
        st
    }

    /// Nearest node to `x` (brute force; used only for clipped samples).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        (0..self.len())
            .min_by(|&a, &b| {
                let da = crate::vecops::dist(self.position(a), x);
                let db = crate::vecops::dist(self.position(b), x);
                da.total_cmp(&db)
            })
            .expect("grid is nonempty")
    }

    /// Per node: `min(d(x, ∂D), R − |x|)` for `x ∈ D̄`, `None` outside.
    pub fn node_wall_distances(&self, region: &Cone) -> Vec<Option<f64>> {
        (0..self.len())
            .map(|i| {
                let x = self.position(i);
                let wd = region.wall_distance(x);
                wd.inside
                    .then(|| wd.distance.min((self.radius - norm(x)).max(0.0)))
            })
            .collect()
    }
}

/// Free-function form of [`Grid::node_wall_distances`].
pub fn node_wall_distances(grid: &Grid, region: &Cone) -> Vec<Option<f64>> {
    grid.node_wall_distances(region)
}

/// Frame among the identity and 45° coordinate-plane rotations that makes
/// the largest number of group elements lattice symmetries.
pub fn symmetric_frame(group: &ReflectionGroup) -> Orthogonal {
    let n = group.dim();
    let mut candidates = vec![Orthogonal::identity(n)];
    let s = 0.5f64.sqrt();
    match n {
        2 => candidates.push(Orthogonal::from_rows(2, vec![s, -s, s, s])),
        3 => {
            candidates.push(Orthogonal::from_rows(3, vec![s, -s, 0.0, s, s, 0.0, 0.0, 0.0, 1.0]));
            candidates.push(Orthogonal::from_rows(3, vec![s, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, s]));
            candidates.push(Orthogonal::from_rows(3, vec![1.0, 0.0, 0.0, 0.0, s, -s, 0.0, s, s]));
        }
        _ => {}
    }
    let count = |f: &Orthogonal| {
        group
            .elements()
            .iter()
            .filter(|g| {
                let m = f.transpose().compose(g).compose(f);
                m.entries().iter().all(|v| (v - v.round()).abs() < 1e-9)
            })
            .count()
    };
    let mut best = candidates[0].clone();
    let mut best_count = count(&best);
    for c in candidates.into_iter().skip(1) {
        let k = count(&c);
        if k > best_count {
            best = c;
            best_count = k;
        }
    }
    best
}

/// Interpolation weights over at most `2ⁿ` lattice corners.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub nodes: [u32; 8],
    pub weights: [f64; 8],
    pub len: usize,
    /// Some corner was missing or the point left the ball; weights renormalized.
    pub clipped: bool,
}

/// Vector-valued grid function: `comps` values per node.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    comps: usize,
    values: Vec<f64>,
}

/// Interpolated value with its clipping flag.
#[derive(Debug, Clone, Serialize)]
pub struct RaySample {
    pub lambda: f64,
    pub value: Vec<f64>,
    pub clipped: bool,
}

/// Metadata written next to serialized fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub n: usize,
    pub components: usize,
    #[serde(rename = "R")]
    pub radius: f64,
    pub h: f64,
    pub nodes: usize,
    pub interior_nodes: usize,
    pub lattice: Lattice,
    /// Row-major lattice basis `B`, `x = h·B·k`.
    pub basis: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<Grid>, comps: usize, values: Vec<f64>) -> Result<Self, GridError> {
        let expected = grid.len() * comps;
        if values.len() != expected {
            return Err(GridError::Length {
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            grid,
            comps,
            values,
        })
    }

    pub fn zeros(grid: Arc<Grid>, comps: usize) -> Self {
        let values = vec![0.0; grid.len() * comps];
        Self {
            grid,
            comps,
            values,
        }
    }

    /// Field with value `f(x)` at each node position `x`.
    pub fn from_fn(grid: Arc<Grid>, comps: usize, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(grid.len() * comps);
        for i in 0..grid.len() {
            let v = f(grid.position(i));
            assert_eq!(v.len(), comps);
            values.extend(v);
        }
        Self {
            grid,
            comps,
            values,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn comps(&self) -> usize {
        self.comps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Exchanges the value buffer with `other` (same length).
    pub(crate) fn swap_values(&mut self, other: &mut Vec<f64>) {
        debug_assert_eq!(self.values.len(), other.len());
        std::mem::swap(&mut self.values, other);
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.comps..(i + 1) * self.comps]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| norm(self.at(i)))
            .fold(0.0, f64::max)
    }

    /// `s·Σ_nb (v_nb − v_i)` per component with `s` the lattice's
    /// [`Grid::laplacian_scale`]; missing neighbours mirror the node.
    pub fn laplacian(&self) -> Field {
        let mut out = vec![0.0; self.values.len()];
        laplacian_into(&self.grid, self.comps, &self.values, &mut out);
        Field {
            grid: self.grid.clone(),
            comps: self.comps,
            values: out,
        }
    }

    /// Multilinear interpolation at `x`.
    pub fn sample(&self, x: &[f64]) -> (Vec<f64>, bool) {
        let st = self.grid.stencil(x);
        let mut v = vec![0.0; self.comps];
        for k in 0..st.len {
            let u = self.at(st.nodes[k] as usize);
            for c in 0..self.comps {
                v[c] += st.weights[k] * u[c];
            }
        }
        (v, st.clipped)
    }

    /// Samples at `λ·direction` for each `λ`.
    pub fn sample_ray(&self, direction: &[f64], lambdas: &[f64]) -> Vec<RaySample> {
        lambdas
            .iter()
            .map(|&lambda| {
                let x: Vec<f64> = direction.iter().map(|d| lambda * d).collect();
                let (value, clipped) = self.sample(&x);
                RaySample {
                    lambda,
                    value,
                    clipped,
                }
            })
            .collect()
    }

    pub fn header(&self) -> FieldHeader {
        FieldHeader {
            n: self.grid.dim,
            components: self.comps,
            radius: self.grid.radius,
            h: self.grid.spacing,
            nodes: self.grid.len(),
            interior_nodes: self.grid.interior.iter().filter(|b| **b).count(),
            lattice: self.grid.lattice,
            basis: self.grid.basis.clone(),
        }
    }

    /// CSV rows `x₁ … x_n u₁ … u_m` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), GridError> {
        let n = self.grid.dim;
        let cols: Vec<String> = (1..=n)
            .map(|k| format!("x{k}"))
            .chain((1..=self.comps).map(|k| format!("u{k}")))
            .collect();
        writeln!(w, "{}", cols.join(","))?;
        let mut line = String::new();
        for i in 0..self.grid.len() {
            line.clear();
            for (k, v) in self.grid.position(i).iter().chain(self.at(i)).enumerate() {
                if k > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{v:.16e}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Reads a CSV written by [`Field::write_csv`] for the same grid.
    pub fn read_csv<R: BufRead>(grid: Arc<Grid>, r: R) -> Result<Field, GridError> {
        let n = grid.dim;
        let mut lines = r.lines();
        let head = lines
            .next()
            .ok_or_else(|| GridError::Format("empty file".into()))??;
        let cols = head.split(',').count();
        if cols <= n {
            return Err(GridError::Format(format!("header {head:?}")));
        }
        let comps = cols - n;
        let mut values = Vec::with_capacity(grid.len() * comps);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let nums: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| GridError::Format(format!("row {i}: {e}")))?;
            if nums.len() != cols || i >= grid.len() {
                return Err(GridError::Format(format!("row {i} does not match the grid")));
            }
            if crate::vecops::dist(&nums[..n], grid.position(i)) > 1e-9 * grid.radius {
                return Err(GridError::Format(format!("row {i} position mismatch")));
            }
            values.extend_from_slice(&nums[n..]);
        }
        Field::new(grid, comps, values)
    }
}

/// Laplacian of a flat buffer with `comps` values per node.
pub fn laplacian_into(grid: &Grid, comps: usize, values: &[f64], out: &mut [f64]) {
    let scale = grid.laplacian_scale();
    let deg = grid.degree();
    for i in 0..grid.len() {
        let nb = &grid.neighbors[i * deg..(i + 1) * deg];
        for c in 0..comps {
            let vi = values[i * comps + c];
            let mut s = 0.0;
            for &j in nb {
                s += values[j as usize * comps + c] - vi;
            }
            out[i * comps + c] = s * scale;
        }
    }
}

/// Free-function form of [`Field::laplacian`].
pub fn laplacian(f: &Field) -> Field {
    f.laplacian()
}

/// Free-function form of [`Field::sample_ray`].
pub fn sample_ray(f: &Field, direction: &[f64], lambdas: &[f64]) -> Vec<RaySample> {
    f.sample_ray(direction, lambdas)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_coarse_or_bad_grids() {
        assert!(matches!(Grid::new(4, 10.0, 0.5), Err(GridError::Dimension(4))));
        assert!(matches!(Grid::new(2, 1.0, 0.5), Err(GridError::Resolution { .. })));
        assert!(Grid::new(2, 4.0, 0.5).is_ok());
    }

    #[test]
    fn one_dimensional_boundary_stencil() {
        let g = Arc::new(Grid::new(1, 1.0, 0.125).unwrap());
        assert_eq!(g.len(), 17);
        let f = Field::from_fn(g.clone(), 1, |x| vec![x[0]]);
        let lap = f.laplacian();
        let last = g.node_at(&[8]).unwrap();
        assert!((lap.at(last)[0] + 1.0 / 0.125).abs() < 1e-12);
        let first = g.node_at(&[-8]).unwrap();
        assert!((lap.at(first)[0] - 1.0 / 0.125).abs() < 1e-12);
        for i in 0..g.len() {
            if g.is_interior(i) {
                assert!(lap.at(i)[0].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotated_frame_makes_tetrahedral_group_lattice_symmetric() {
        let group = ReflectionGroup::builtin("A3-tetrahedral").unwrap();
        let g = Grid::for_group(&group, 3.0, 0.375).unwrap();
        for e in group.elements() {
            assert!(g.lattice_permutation(e).is_some());
        }
        let cube = ReflectionGroup::builtin("B3-cube").unwrap();
        let gc = Grid::for_group(&cube, 3.0, 0.375).unwrap();
        assert!(gc.frame().distance(&Orthogonal::identity(3)) == 0.0);
        assert!(cube.elements().iter().all(|e| gc.lattice_permutation(e).is_some()));
        let d3 = ReflectionGroup::builtin("dihedral-3").unwrap();
        let square = Grid::new(2, 3.0, 0.25).unwrap();
        assert_eq!(square.lattice_symmetry_count(&d3), 2);
        let g3 = Grid::for_group(&d3, 3.0, 0.25).unwrap();
        assert_eq!(g3.lattice(), Lattice::Triangular);
        assert!(d3.elements().iter().all(|e| g3.lattice_permutation(e).is_some()));
        let d4 = ReflectionGroup::builtin("dihedral-4").unwrap();
        assert_eq!(Grid::for_group(&d4, 3.0, 0.25).unwrap().lattice(), Lattice::Cubic);
    }

    #[test]
    fn triangular_laplacian_is_exact_on_quadratics() {
        let g = Arc::new(Grid::triangular(2.0, 0.25).unwrap());
        assert_eq!(g.degree(), 6);
        let f = Field::from_fn(g.clone(), 1, |x| vec![x[0] * x[0] + 3.0 * x[1] * x[1] - x[0] * x[1]]);
        let lap = f.laplacian();
        let mut interior = 0;
        for i in 0..g.len() {
            let p = g.position(i);
            assert!(norm(p) <= 2.0 + 1e-12);
            if g.is_interior(i) {
                interior += 1;
                assert!((lap.at(i)[0] - 8.0).abs() < 1e-10);
            }
        }
        // Node density 2/(√3 h²) over the disc.
        let expected = std::f64::consts::PI * 4.0 / g.cell_volume();
        assert!((g.len() as f64 - expected).abs() < 0.1 * expected);
        assert!(interior > g.len() / 2);
        let (v, clipped) = f.sample(&[0.3, 0.2]);
        let exact = 0.09 + 0.12 - 0.06;
        assert!(!clipped && (v[0] - exact).abs() < 0.05);
    }

    #[test]
    fn sample_reproduces_nodes_and_linear_fields() {
        let g = Arc::new(Grid::new(2, 2.0, 0.25).unwrap());
        let f = Field::from_fn(g.clone(), 2, |x| vec![x[0], 3.0 * x[1] - x[0]]);
        for i in (0..g.len()).step_by(7) {
            let (v, _) = f.sample(g.position(i));
            assert_eq!(v, f.at(i));
        }
        let (v, clipped) = f.sample(&[0.33, -0.71]);
        assert!(!clipped);
        assert!((v[0] - 0.33).abs() < 1e-14 && (v[1] - (-2.13 - 0.33)).abs() < 1e-13);
        let (_, clipped) = f.sample(&[2.5, 0.0]);
        assert!(clipped);
    }

    #[test]
    fn wall_distance_examples() {
        let d3 = ReflectionGroup::builtin("dihedral-3").unwrap();
        let orbit = d3.orbit_and_stabilizer(&[1.0, 0.0]).unwrap();
        let d = d3.region_d(&orbit).unwrap();
        let g = Grid::new(2, 8.0, 0.5).unwrap();
        let dist = g.node_wall_distances(&d);
        let origin = g.node_at(&[0, 0]).unwrap();
        assert_eq!(dist[origin], Some(0.0));
        let mid = g.node_at(&[8, 0]).unwrap();
        assert!((dist[mid].unwrap() - 8.0 * 3f64.sqrt() / 4.0).abs() < 1e-12);
        let rim = g.node_at(&[16, 0]).unwrap();
        assert_eq!(dist[rim], Some(0.0));
        let behind = g.node_at(&[-4, 0]).unwrap();
        assert_eq!(dist[behind], None);
    }

    #[test]
    fn csv_round_trip() {
        let g = Arc::new(Grid::new(2, 1.0, 0.125).unwrap());
        let f = Field::from_fn(g.clone(), 2, |x| vec![x[0].sin() / 3.0, x[1].exp()]);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = Field::read_csv(g, std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.values(), f.values());
        let h = f.header();
        assert_eq!(h.nodes, f.grid().len());
        assert_eq!(h.n, 2);
    }
}
