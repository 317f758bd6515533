//! Deterministic harmonic solvers: red-black SOR on a dense integer box
//! (for transient-walk problems truncated at an escape sphere) and on the
//! domain adjacency graph (for confined-walk problems).
//!
//! Both are plumbing shared by the potential-theory, chain and estimate
//! modules. Red-black sweeps read only the opposite color, so results do
//! not depend on traversal order and parallel sweeps stay bit-reproducible.

use crate::lattice::{LatticeDomain, Point, OUTSIDE};
use crate::{Error, Result};
use rayon::prelude::*;

/// Cell classification for grid problems.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Cell {
    /// Unknown, updated by sweeps.
    Active,
    /// Fixed boundary value.
    Absorbing,
    /// Not part of the problem.
    Dead,
}

/// A dense axis-aligned box of lattice cells `lo..=hi` with strides.
#[derive(Clone, Debug)]
pub struct GridBox {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
    strides: Vec<usize>,
    len: usize,
}

impl GridBox {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidArgument("bad grid box".into()));
        }
        let mut strides = vec![0usize; lo.len()];
        let mut acc = 1usize;
        for (k, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if h < l {
                return Err(Error::InvalidArgument("grid box hi < lo".into()));
            }
            strides[k] = acc;
            acc = acc
                .checked_mul((h - l + 1) as usize)
                .ok_or_else(|| Error::InvalidArgument("grid box too large".into()))?;
        }
        if acc > 400_000_000 {
            return Err(Error::InvalidArgument(format!(
                "grid box of {} cells exceeds the memory budget",
                acc
            )));
        }
        Ok(GridBox { lo, hi, strides, len: acc })
    }

    /// Cube `center ± r` in every axis.
    pub fn cube(center: &Point, r: i64) -> Result<Self> {
        let lo = center.0.iter().map(|c| c - r).collect();
        let hi = center.0.iter().map(|c| c + r).collect();
        GridBox::new(lo, hi)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn index(&self, p: &Point) -> Option<usize> {
        let mut acc = 0usize;
        for (k, c) in p.0.iter().enumerate() {
            if *c < self.lo[k] || *c > self.hi[k] {
                return None;
            }
            acc += self.strides[k] * (c - self.lo[k]) as usize;
        }
        Some(acc)
    }

    pub fn point(&self, mut idx: usize) -> Point {
        let mut coords = vec![0i64; self.dim()];
        for k in (0..self.dim()).rev() {
            let q = idx / self.strides[k];
            idx %= self.strides[k];
            coords[k] = self.lo[k] + q as i64;
        }
        Point::from_slice(&coords)
    }

    /// Coordinate-sum parity of a cell (bipartite coloring).
    fn parity(&self, mut idx: usize) -> usize {
        let mut sum = 0i64;
        for k in (0..self.dim()).rev() {
            let q = (idx / self.strides[k]) as i64;
            idx %= self.strides[k];
            sum += q + self.lo[k];
        }
        (sum.rem_euclid(2)) as usize
    }
}

/// A discrete harmonic problem on a grid box: find v with
/// `v(x) = Σ_y w(x,y) v(y)` on active cells, `v` fixed on absorbing cells.
/// Weights are the nearest-neighbor kernel `h(y)/Σ_z h(z)` for a positive
/// conductance field `h` (uniform SRW when `tilt` is `None`). Neighbors
/// falling on Dead cells contribute weight·0 (they can only occur where the
/// kernel itself assigns zero mass; callers arrange masks so this holds).
pub struct GridProblem {
    pub grid: GridBox,
    pub cells: Vec<Cell>,
    pub values: Vec<f64>,
    /// Conductance per cell; `None` means SRW (all ones).
    pub tilt: Option<Vec<f64>>,
    /// Per-cell source for expected-visit systems `v = source + P v`.
    pub source: Vec<f64>,
}

impl GridProblem {
    pub fn new(grid: GridBox) -> Self {
        let n = grid.len();
        GridProblem {
            grid,
            cells: vec![Cell::Dead; n],
            values: vec![0.0; n],
            tilt: None,
            source: vec![0.0; n],
        }
    }

    pub fn set(&mut self, p: &Point, cell: Cell, value: f64) {
        if let Some(i) = self.grid.index(p) {
            self.cells[i] = cell;
            self.values[i] = value;
        }
    }

    pub fn value(&self, p: &Point) -> Option<f64> {
        self.grid.index(p).map(|i| self.values[i])
    }

    /// Install a conductance field from a closure over points.
    pub fn set_tilt(&mut self, f: impl Fn(&Point) -> f64) {
        let mut t = vec![1.0; self.grid.len()];
        for (i, v) in t.iter_mut().enumerate() {
            *v = f(&self.grid.point(i));
        }
        self.tilt = Some(t);
    }

    fn neighbor_offsets(&self) -> Vec<isize> {
        let mut offs = Vec::with_capacity(2 * self.grid.dim());
        for k in 0..self.grid.dim() {
            let s = self.grid.strides[k] as isize;
            offs.push(s);
            offs.push(-s);
        }
        offs
    }

    /// Active cells may not sit on a box face: every neighbor access in the
    /// sweep is a raw linear offset.
    fn check_faces(&self) -> Result<()> {
        for (i, c) in self.cells.iter().enumerate() {
            if *c != Cell::Active {
                continue;
            }
            let p = self.grid.point(i);
            for (k, coord) in p.0.iter().enumerate() {
                if *coord == self.grid.lo[k] || *coord == self.grid.hi[k] {
                    return Err(Error::InvalidArgument(
                        "active grid cell on a box face; enlarge the box or mask the face".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Red-black SOR to max-update below `tol`. Returns the sweep count.
    ///
    /// Box faces are padded by construction (callers make the outermost
    /// layer Absorbing or Dead), so linear-offset neighbor access never
    /// wraps into a different row of the box interior region.
    pub fn solve(&mut self, tol: f64, max_sweeps: usize) -> Result<usize> {
        self.check_faces()?;
        let n = self.grid.len();
        let offs = self.neighbor_offsets();
        // simple ω heuristic from the largest box extent
        let extent = self
            .grid
            .hi
            .iter()
            .zip(&self.grid.lo)
            .map(|(h, l)| (h - l + 1) as f64)
            .fold(0.0f64, f64::max);
        let omega = (2.0 / (1.0 + std::f64::consts::PI / extent)).clamp(1.0, 1.97);

        // group active cells by color once
        let mut colors: [Vec<u32>; 2] = [Vec::new(), Vec::new()];
        for i in 0..n {
            if self.cells[i] == Cell::Active {
                colors[self.grid.parity(i)].push(i as u32);
            }
        }
        if colors[0].is_empty() && colors[1].is_empty() {
            return Ok(0);
        }

        let cells = &self.cells;
        let tilt = self.tilt.as_deref();
        let source = &self.source;
        let mut max_delta = f64::INFINITY;
        let mut sweeps = 0usize;
        while sweeps < max_sweeps {
            sweeps += 1;
            max_delta = 0.0;
            for color in 0..2 {
                let values_snapshot = &self.values;
                let deltas: Vec<(u32, f64)> = colors[color]
                    .par_iter()
                    .map(|&iu| {
                        let i = iu as usize;
                        let mut num = 0.0;
                        let mut den = 0.0;
                        for &off in &offs {
                            let j = (i as isize + off) as usize;
                            let w = match tilt {
                                Some(t) => t[j],
                                None => 1.0,
                            };
                            den += w;
                            if cells[j] != Cell::Dead {
                                num += w * values_snapshot[j];
                            }
                        }
                        let target = if den > 0.0 { source[i] + num / den } else { source[i] };
                        (iu, target)
                    })
                    .collect();
                for (iu, target) in deltas {
                    let i = iu as usize;
                    let old = self.values[i];
                    let new = old + omega * (target - old);
                    let d = (new - old).abs();
                    if d > max_delta {
                        max_delta = d;
                    }
                    self.values[i] = new;
                }
            }
            if max_delta < tol {
                return Ok(sweeps);
            }
        }
        Err(Error::SolverStall { residual: max_delta, sweeps })
    }
}

/// The same solver on the domain adjacency graph, for confined-walk
/// (conductance) problems. The kernel is `p(x,y) = h(y)/Σ_{z~x} h(z)` with
/// `h ≡ 0` outside the domain, plus optional extra per-point source terms
/// for expected-visit (Green) systems: `v = source + P v`.
pub struct DomainProblem<'a> {
    pub domain: &'a LatticeDomain,
    /// Conductance per domain point (the eigenvector for the tilted walk,
    /// all ones for SRW killed at the boundary).
    pub conductance: Vec<f64>,
    /// `Some(value)` pins the point to that value.
    pub fixed: Vec<Option<f64>>,
    pub source: Vec<f64>,
    pub values: Vec<f64>,
}

impl<'a> DomainProblem<'a> {
    pub fn new(domain: &'a LatticeDomain, conductance: Vec<f64>) -> Self {
        let n = domain.len();
        DomainProblem {
            domain,
            conductance,
            fixed: vec![None; n],
            source: vec![0.0; n],
            values: vec![0.0; n],
        }
    }

    pub fn fix(&mut self, i: u32, value: f64) {
        self.fixed[i as usize] = Some(value);
        self.values[i as usize] = value;
    }

    pub fn solve(&mut self, tol: f64, max_sweeps: usize) -> Result<usize> {
        let n = self.domain.len();
        let mut colors: [Vec<u32>; 2] = [Vec::new(), Vec::new()];
        for i in 0..n {
            if self.fixed[i].is_none() {
                let parity = (self.domain.point(i as u32).0.iter().sum::<i64>()).rem_euclid(2);
                colors[parity as usize].push(i as u32);
            }
        }
        if colors[0].is_empty() && colors[1].is_empty() {
            return Ok(0);
        }
        // inverse neighbor-conductance sums, zero-neighbor rows stay zero
        let inv_sums: Vec<f64> = (0..n as u32)
            .map(|i| {
                let s: f64 = self
                    .domain
                    .neighbors_of(i)
                    .iter()
                    .filter(|&&j| j != OUTSIDE)
                    .map(|&j| self.conductance[j as usize])
                    .sum();
                if s > 0.0 {
                    1.0 / s
                } else {
                    0.0
                }
            })
            .collect();

        let diam = (n as f64).powf(1.0 / self.domain.dim as f64).max(4.0);
        let omega = (2.0 / (1.0 + std::f64::consts::PI / (2.0 * diam))).clamp(1.0, 1.97);
        let mut max_delta = f64::INFINITY;
        let mut sweeps = 0usize;
        while sweeps < max_sweeps {
            sweeps += 1;
            max_delta = 0.0;
            for color in 0..2 {
                let values = &self.values;
                let updates: Vec<(u32, f64)> = colors[color]
                    .par_iter()
                    .map(|&iu| {
                        let i = iu as usize;
                        let mut acc = 0.0;
                        for &j in self.domain.neighbors_of(iu) {
                            if j != OUTSIDE {
                                acc += self.conductance[j as usize] * values[j as usize];
                            }
                        }
                        (iu, self.source[i] + acc * inv_sums[i])
                    })
                    .collect();
                for (iu, target) in updates {
                    let i = iu as usize;
                    let old = self.values[i];
                    let new = old + omega * (target - old);
                    let d = (new - old).abs();
                    if d > max_delta {
                        max_delta = d;
                    }
                    self.values[i] = new;
                }
            }
            if max_delta < tol {
                return Ok(sweeps);
            }
        }
        Err(Error::SolverStall { residual: max_delta, sweeps })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{discretize, Shape};

    #[test]
    fn grid_gambler_ruin_1d_profile() {
        // harmonic between two absorbing plates in a 3d slab reduces to the
        // linear 1d profile along the axis
        let grid = GridBox::new(vec![0, -3, -3], vec![10, 3, 3]).unwrap();
        let mut prob = GridProblem::new(grid);
        for x in 0..=10i64 {
            for y in -3..=3i64 {
                for z in -3..=3i64 {
                    let p = Point::from_slice(&[x, y, z]);
                    if x == 0 {
                        prob.set(&p, Cell::Absorbing, 0.0);
                    } else if x == 10 {
                        prob.set(&p, Cell::Absorbing, 1.0);
                    } else if (-3..=3).contains(&y) && (-3..=3).contains(&z) {
                        // periodic-free interior: make the transverse faces
                        // reflecting by absorbing with the linear profile,
                        // which is the exact solution
                        if y.abs() == 3 || z.abs() == 3 {
                            prob.set(&p, Cell::Absorbing, x as f64 / 10.0);
                        } else {
                            prob.set(&p, Cell::Active, 0.5);
                        }
                    }
                }
            }
        }
        prob.solve(1e-13, 100_000).unwrap();
        for x in 1..10i64 {
            let v = prob.value(&Point::from_slice(&[x, 0, 0])).unwrap();
            assert!((v - x as f64 / 10.0).abs() < 1e-10, "x={} v={}", x, v);
        }
    }

    #[test]
    fn domain_solver_matches_dense_solution_on_small_ball() {
        // escape-style problem: h=1 at a marked point, 0 on the rest of the
        // boundary, harmonic inside; compare against dense Gaussian solve
        let dom = discretize(&Shape::unit_ball(3), 3, &[0.0; 3]).unwrap();
        let n = dom.len();
        let mut prob = DomainProblem::new(&dom, vec![1.0; n]);
        let marked = dom.inner_boundary()[0];
        for &b in dom.inner_boundary() {
            prob.fix(b, if b == marked { 1.0 } else { 0.0 });
        }
        prob.solve(1e-14, 100_000).unwrap();

        // dense reference: v = (sum over in-domain neighbors)/(2d) + killing
        let mut a = vec![vec![0.0f64; n]; n];
        let mut rhs = vec![0.0f64; n];
        for i in 0..n {
            if let Some(v) = prob.fixed[i] {
                a[i][i] = 1.0;
                rhs[i] = v;
            } else {
                a[i][i] = 1.0;
                let deg = dom.in_domain_degree(i as u32) as f64;
                for &j in dom.neighbors_of(i as u32) {
                    if j != OUTSIDE {
                        a[i][j as usize] -= 1.0 / deg;
                    }
                }
            }
        }
        // Gaussian elimination
        for col in 0..n {
            let piv = (col..n).max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).unwrap()).unwrap();
            a.swap(col, piv);
            rhs.swap(col, piv);
            let p = a[col][col];
            for r in 0..n {
                if r != col && a[r][col] != 0.0 {
                    let f = a[r][col] / p;
                    for c in col..n {
                        a[r][c] -= f * a[col][c];
                    }
                    rhs[r] -= f * rhs[col];
                }
            }
        }
        for i in 0..n {
            let dense = rhs[i] / a[i][i];
            assert!((prob.values[i] - dense).abs() < 1e-9);
        }
    }
}
