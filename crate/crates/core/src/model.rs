//! Configuration space with fixed center of mass.
//!
//! Configurations are flat `N·d` buffers in body-major order: coordinate
//! `k` belongs to body `k / d`. The mass metric is
//! `<x, y>_M = Σ m_i <r_i, s_i>` and the collision set `Δ` is the union of
//! the hyperplanes `{r_i = r_j}`.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used to accept a configuration as barycentric.
pub const TOL_COM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassSystem {
    dim: usize,
    masses: Vec<f64>,
}

impl MassSystem {
    pub fn new(dim: usize, masses: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Invalid(format!("spatial dimension must be >= 2, got {dim}")));
        }
        if masses.len() < 2 {
            return Err(Error::Invalid(format!("need at least two bodies, got {}", masses.len())));
        }
        if let Some(m) = masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::Invalid(format!("masses must be positive and finite, got {m}")));
        }
        Ok(Self { dim, masses })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_bodies(&self) -> usize {
        self.masses.len()
    }

    /// Length of a flat configuration vector.
    pub fn n_coords(&self) -> usize {
        self.dim * self.masses.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Mass attached to flat coordinate `k`.
    #[inline]
    pub fn coord_mass(&self, k: usize) -> f64 {
        self.masses[k / self.dim]
    }

    /// Diagonal of `M = diag(m_1 I_d, …, m_N I_d)`.
    pub fn coord_masses(&self) -> Vec<f64> {
        (0..self.n_coords()).map(|k| self.coord_mass(k)).collect()
    }

    pub fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_coords() {
            return Err(Error::Shape { expected: self.n_coords(), got: v.len() });
        }
        Ok(())
    }

    /// Mass-weighted barycenter of a flat vector.
    pub fn barycenter(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut c = vec![0.0; d];
        for (i, m) in self.masses.iter().enumerate() {
            for a in 0..d {
                c[a] += m * v[i * d + a];
            }
        }
        let mt = self.total_mass();
        c.iter_mut().for_each(|x| *x /= mt);
        c
    }

    /// Subtract the barycenter in place (M-orthogonal projection onto `X`).
    pub fn remove_barycenter(&self, v: &mut [f64]) {
        let c = self.barycenter(v);
        let d = self.dim;
        for (k, x) in v.iter_mut().enumerate() {
            *x -= c[k % d];
        }
    }

    /// `M v` for a flat vector.
    pub fn apply_mass(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(k, x)| self.coord_mass(k) * x).collect()
    }

    /// `M⁻¹ v` for a flat vector.
    pub fn apply_inv_mass(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(k, x)| x / self.coord_mass(k)).collect()
    }

    /// Restrict to a subset of bodies (cluster mass form).
    pub fn restrict(&self, bodies: &[usize]) -> Result<MassSystem> {
        MassSystem::new(self.dim, bodies.iter().map(|&i| self.masses[i]).collect())
    }
}

/// A point of configuration space (or a velocity), flat and body-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    dim: usize,
    coords: Vec<f64>,
}

impl Configuration {
    /// Wrap a flat buffer without checking the barycenter.
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::Shape { expected: dim * (coords.len() / dim.max(1) + 1), got: coords.len() });
        }
        Ok(Self { dim, coords })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if dim == 0 {
            return Err(Error::Invalid("empty configuration".into()));
        }
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::Shape { expected: dim, got: r.len() });
            }
            coords.extend_from_slice(r);
        }
        Ok(Self { dim, coords })
    }

    /// Wrap a flat buffer and check it lies in `X` for the given masses.
    pub fn in_system(ms: &MassSystem, coords: Vec<f64>) -> Result<Self> {
        ms.check_len(&coords)?;
        let scale = coords.iter().fold(1.0f64, |s, x| s.max(x.abs()));
        let c = ms.barycenter(&coords);
        let off = c.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if off > TOL_COM * scale * 10.0 {
            return Err(Error::Validation(format!("barycenter is not at the origin (offset {off:e})")));
        }
        Ok(Self { dim: ms.dim(), coords })
    }

    pub fn zeros(ms: &MassSystem) -> Self {
        Self { dim: ms.dim(), coords: vec![0.0; ms.n_coords()] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_bodies(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn body(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.coords.chunks(self.dim).map(|c| c.to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { dim: self.dim, coords: self.coords.iter().map(|x| x * s).collect() }
    }
}

impl Deref for Configuration {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.coords
    }
}

/// Partition of the body indices `0..N` into disjoint blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterPartition {
    blocks: Vec<Vec<usize>>,
}

impl ClusterPartition {
    pub fn new(n: usize, mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; n];
        for b in blocks.iter_mut() {
            if b.is_empty() {
                return Err(Error::Invalid("empty cluster".into()));
            }
            b.sort_unstable();
            for &i in b.iter() {
                if i >= n || seen[i] {
                    return Err(Error::Invalid(format!("cluster index {i} repeated or out of range")));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Invalid("clusters do not cover every body".into()));
        }
        blocks.sort_by_key(|b| b[0]);
        Ok(Self { blocks })
    }

    pub fn singletons(n: usize) -> Self {
        Self { blocks: (0..n).map(|i| vec![i]).collect() }
    }

    pub fn single_block(n: usize) -> Self {
        Self { blocks: vec![(0..n).collect()] }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn n_bodies(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    /// Block index of every body.
    pub fn labels(&self) -> Vec<usize> {
        let mut lab = vec![0; self.n_bodies()];
        for (k, b) in self.blocks.iter().enumerate() {
            for &i in b {
                lab[i] = k;
            }
        }
        lab
    }

    pub fn same_cluster(&self, i: usize, j: usize) -> bool {
        self.blocks.iter().any(|b| b.contains(&i) && b.contains(&j))
    }
}

/// `<x, y>_M = Σ m_i <r_i, s_i>`.
pub fn mass_inner(ms: &MassSystem, x: &[f64], y: &[f64]) -> Result<f64> {
    ms.check_len(x)?;
    ms.check_len(y)?;
    Ok(mass_inner_unchecked(ms, x, y))
}

#[inline]
pub(crate) fn mass_inner_unchecked(ms: &MassSystem, x: &[f64], y: &[f64]) -> f64 {
    let d = ms.dim();
    let mut s = 0.0;
    for (i, m) in ms.masses().iter().enumerate() {
        let mut b = 0.0;
        for a in i * d..(i + 1) * d {
            b += x[a] * y[a];
        }
        s += m * b;
    }
    s
}

pub fn mass_norm(ms: &MassSystem, x: &[f64]) -> f64 {
    mass_inner_unchecked(ms, x, x).sqrt()
}

/// Dual norm `‖p‖_{M⁻¹}` of a covector.
pub fn dual_mass_norm(ms: &MassSystem, p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(k, x)| x * x / ms.coord_mass(k)).sum::<f64>().sqrt()
}

/// Subtract the mass-weighted barycenter of raw positions.
pub fn project_com(ms: &MassSystem, raw: &[f64]) -> Result<Configuration> {
    ms.check_len(raw)?;
    let mut v = raw.to_vec();
    ms.remove_barycenter(&mut v);
    Ok(Configuration { dim: ms.dim(), coords: v })
}

/// Mass-metric distance from `x` to the collision set `Δ`.
///
/// The distance to `{r_i = r_j}` is `|r_i − r_j| · sqrt(m_i m_j / (m_i + m_j))`.
pub fn collision_distance(ms: &MassSystem, x: &[f64]) -> Result<f64> {
    ms.check_len(x)?;
    let (dist, _, _) = closest_pair(ms, x);
    Ok(dist)
}

/// Smallest mass-metric pair distance together with the pair.
pub(crate) fn closest_pair(ms: &MassSystem, x: &[f64]) -> (f64, usize, usize) {
    let d = ms.dim();
    let m = ms.masses();
    let mut best = (f64::INFINITY, 0, 1);
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            let mut r2 = 0.0;
            for a in 0..d {
                let dx = x[i * d + a] - x[j * d + a];
                r2 += dx * dx;
            }
            let dist = (r2 * m[i] * m[j] / (m[i] + m[j])).sqrt();
            if dist < best.0 {
                best = (dist, i, j);
            }
        }
    }
    best
}

/// Euclidean minimum pairwise separation.
pub fn min_separation(ms: &MassSystem, x: &[f64]) -> f64 {
    let d = ms.dim();
    let n = ms.n_bodies();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let r2: f64 = (0..d).map(|a| (x[i * d + a] - x[j * d + a]).powi(2)).sum();
            best = best.min(r2.sqrt());
        }
    }
    best
}

/// Equivalence classes of `i ~ j ⟺ |a_i − a_j| ≤ tol`, closed transitively.
pub fn cluster_from_velocity(a: &Configuration, tol: f64) -> ClusterPartition {
    let n = a.n_bodies();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut c = i;
        while p[c] != r {
            let nx = p[c];
            p[c] = r;
            c = nx;
        }
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            let dist: f64 = a.body(i).iter().zip(a.body(j)).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            if dist <= tol {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut root_block = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_block[r] == usize::MAX {
            root_block[r] = blocks.len();
            blocks.push(Vec::new());
        }
        blocks[root_block[r]].push(i);
    }
    ClusterPartition { blocks }
}
