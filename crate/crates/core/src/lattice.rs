//! Continuous shapes, their lattice blowups, balls/annuli, the Δ standoff
//! region, and the boundary/distance geometry everything else builds on.
//!
//! Lattice points are integer vectors of runtime dimension d ≥ 3 (d = 3
//! default throughout the test suite). All structures here are immutable
//! after construction and safe to share across threads.

use crate::{Error, Result};
use smallvec::SmallVec;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

/// Sentinel in neighbor tables for "outside the domain".
pub const OUTSIDE: u32 = u32::MAX;

/// A lattice point: an integer d-vector. Inline storage for d ≤ 4.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point(pub SmallVec<[i64; 4]>);

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", c)?;
        }
        write!(f, ")")
    }
}

impl Point {
    pub fn zero(dim: usize) -> Self {
        Point(SmallVec::from_elem(0, dim))
    }

    pub fn from_slice(coords: &[i64]) -> Self {
        Point(SmallVec::from_slice(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Neighbor one step along `axis` in direction `dir` (±1).
    pub fn step(&self, axis: usize, dir: i64) -> Self {
        let mut p = self.clone();
        p.0[axis] += dir;
        p
    }

    /// Exact squared Euclidean distance to another point.
    pub fn dist2(&self, other: &Point) -> i64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| {
                let d = a - b;
                d * d
            })
            .sum()
    }

    pub fn norm2(&self) -> i64 {
        self.0.iter().map(|c| c * c).sum()
    }

    /// Iterate over the 2d nearest neighbors.
    pub fn neighbors(&self) -> impl Iterator<Item = Point> + '_ {
        let d = self.dim();
        (0..2 * d).map(move |k| self.step(k / 2, if k % 2 == 0 { 1 } else { -1 }))
    }
}

/// Euclidean point-to-set distance, exact min over the (finite) set.
pub fn distance_to_set(x: &Point, set: &[Point]) -> Result<f64> {
    let best = min_dist2_to_set(x, set)?;
    Ok((best as f64).sqrt())
}

fn min_dist2_to_set(x: &Point, set: &[Point]) -> Result<i64> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("distance to empty set".into()));
    }
    Ok(set.iter().map(|y| x.dist2(y)).min().unwrap())
}

type Predicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// A compact continuous shape in R^d. The blowup N·D ∩ Z^d is what the rest
/// of the crate works on.
#[derive(Clone)]
pub enum Shape {
    /// Closed Euclidean ball.
    Ball { center: Vec<f64>, radius: f64 },
    /// Axis-aligned closed box, `center ± half_widths`.
    AxisBox { center: Vec<f64>, half_widths: Vec<f64> },
    /// Arbitrary pure membership predicate with an explicit bounding box.
    Predicate { dim: usize, lo: Vec<f64>, hi: Vec<f64>, contains: Predicate },
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Ball { center, radius } => write!(f, "Ball(c={:?}, r={})", center, radius),
            Shape::AxisBox { center, half_widths } => {
                write!(f, "AxisBox(c={:?}, w={:?})", center, half_widths)
            }
            Shape::Predicate { dim, .. } => write!(f, "Predicate(d={})", dim),
        }
    }
}

impl Shape {
    pub fn unit_ball(dim: usize) -> Self {
        Shape::Ball { center: vec![0.0; dim], radius: 1.0 }
    }

    pub fn dim(&self) -> usize {
        match self {
            Shape::Ball { center, .. } => center.len(),
            Shape::AxisBox { center, .. } => center.len(),
            Shape::Predicate { dim, .. } => *dim,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Shape::Ball { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                d2 <= radius * radius
            }
            Shape::AxisBox { center, half_widths } => x
                .iter()
                .zip(center.iter().zip(half_widths))
                .all(|(a, (c, w))| (a - c).abs() <= *w),
            Shape::Predicate { contains, .. } => contains(x),
        }
    }

    /// Bounding box (lo, hi) in continuous coordinates.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Shape::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Shape::AxisBox { center, half_widths } => (
                center.iter().zip(half_widths).map(|(c, w)| c - w).collect(),
                center.iter().zip(half_widths).map(|(c, w)| c + w).collect(),
            ),
            Shape::Predicate { lo, hi, .. } => (lo.clone(), hi.clone()),
        }
    }

    /// Lattice membership of `p` in the blowup N·D, using exact integer
    /// squared distances for balls and exact coordinate comparisons for
    /// boxes so construction is deterministic.
    pub fn contains_blowup(&self, p: &Point, n: u32) -> bool {
        let nf = n as f64;
        match self {
            Shape::Ball { center, radius } => {
                let mut d2 = 0.0;
                for (a, c) in p.0.iter().zip(center) {
                    let d = *a as f64 - c * nf;
                    d2 += d * d;
                }
                d2 <= (radius * nf) * (radius * nf)
            }
            Shape::AxisBox { center, half_widths } => p
                .0
                .iter()
                .zip(center.iter().zip(half_widths))
                .all(|(a, (c, w))| (*a as f64 - c * nf).abs() <= w * nf),
            Shape::Predicate { contains, .. } => {
                let x: Vec<f64> = p.0.iter().map(|a| *a as f64 / nf).collect();
                contains(&x)
            }
        }
    }
}

/// A finite lattice domain D_N = (N·D) ∩ Z^d with precomputed adjacency,
/// interior / inner-boundary split, exterior boundary and a point index.
pub struct LatticeDomain {
    pub n: u32,
    pub dim: usize,
    points: Vec<Point>,
    index: HashMap<Point, u32>,
    /// Flat neighbor table, 2d entries per point, `OUTSIDE` where the
    /// neighbor is not in the domain.
    neighbors: Vec<u32>,
    interior: Vec<bool>,
    inner_boundary: Vec<u32>,
    exterior_boundary: Vec<Point>,
    pub anchor: Point,
    pub anchor_idx: u32,
}

impl fmt::Debug for LatticeDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "LatticeDomain(N={}, d={}, |points|={}, |∂|={})",
            self.n,
            self.dim,
            self.points.len(),
            self.inner_boundary.len()
        )
    }
}

impl LatticeDomain {
    /// Build a domain from an explicit point set. Points are deduplicated
    /// and sorted; the anchor must belong to the set.
    pub fn from_points(mut points: Vec<Point>, n: u32, anchor: Point) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyDomain("no lattice points".into()));
        }
        let dim = points[0].dim();
        points.sort();
        points.dedup();
        let mut index = HashMap::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            if p.dim() != dim {
                return Err(Error::InvalidArgument("mixed point dimensions".into()));
            }
            index.insert(p.clone(), i as u32);
        }
        let anchor_idx = *index
            .get(&anchor)
            .ok_or_else(|| Error::Geometry(format!("anchor {:?} not in domain", anchor)))?;

        let deg = 2 * dim;
        let mut neighbors = vec![OUTSIDE; points.len() * deg];
        let mut interior = vec![true; points.len()];
        let mut inner_boundary = Vec::new();
        let mut exterior: Vec<Point> = Vec::new();
        for (i, p) in points.iter().enumerate() {
            let mut boundary = false;
            for (k, q) in p.neighbors().enumerate() {
                match index.get(&q) {
                    Some(&j) => neighbors[i * deg + k] = j,
                    None => {
                        boundary = true;
                        exterior.push(q);
                    }
                }
            }
            if boundary {
                interior[i] = false;
                inner_boundary.push(i as u32);
            }
        }
        exterior.sort();
        exterior.dedup();

        Ok(LatticeDomain {
            n,
            dim,
            points,
            index,
            neighbors,
            interior,
            inner_boundary,
            exterior_boundary: exterior,
            anchor,
            anchor_idx,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn degree(&self) -> usize {
        2 * self.dim
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: u32) -> &Point {
        &self.points[i as usize]
    }

    pub fn idx(&self, p: &Point) -> Option<u32> {
        self.index.get(p).copied()
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.index.contains_key(p)
    }

    /// Neighbor slice of point `i` (2d entries, `OUTSIDE` sentinel).
    pub fn neighbors_of(&self, i: u32) -> &[u32] {
        let deg = self.degree();
        &self.neighbors[i as usize * deg..(i as usize + 1) * deg]
    }

    pub fn in_domain_degree(&self, i: u32) -> usize {
        self.neighbors_of(i).iter().filter(|&&j| j != OUTSIDE).count()
    }

    pub fn is_interior(&self, i: u32) -> bool {
        self.interior[i as usize]
    }

    /// Indices of the inner boundary ∂K = {x ∈ K : ∃ y ∉ K, y ~ x}.
    pub fn inner_boundary(&self) -> &[u32] {
        &self.inner_boundary
    }

    /// Points outside the domain adjacent to it.
    pub fn exterior_boundary(&self) -> &[Point] {
        &self.exterior_boundary
    }

    /// Breadth-first connectivity check over in-domain edges.
    pub fn is_connected(&self) -> bool {
        if self.points.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.points.len()];
        let mut queue = std::collections::VecDeque::new();
        seen[0] = true;
        queue.push_back(0u32);
        let mut count = 1usize;
        while let Some(i) = queue.pop_front() {
            for &j in self.neighbors_of(i) {
                if j != OUTSIDE && !seen[j as usize] {
                    seen[j as usize] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == self.points.len()
    }

    /// New domain with the given points removed (metadata preserved).
    pub fn without(&self, removed: &[Point]) -> Result<LatticeDomain> {
        let gone: std::collections::HashSet<&Point> = removed.iter().collect();
        let kept: Vec<Point> =
            self.points.iter().filter(|p| !gone.contains(p)).cloned().collect();
        let anchor = if gone.contains(&self.anchor) {
            kept.first()
                .cloned()
                .ok_or_else(|| Error::EmptyDomain("all points removed".into()))?
        } else {
            self.anchor.clone()
        };
        LatticeDomain::from_points(kept, self.n, anchor)
    }
}

/// Blowup discretization: returns exactly (N·D) ∩ Z^d with boundaries
/// computed. The anchor is x_0·N rounded to the lattice, where x_0 is the
/// shape's center-side reference point.
pub fn discretize(shape: &Shape, n: u32, x0: &[f64]) -> Result<LatticeDomain> {
    if n == 0 {
        return Err(Error::InvalidArgument("blowup factor N must be ≥ 1".into()));
    }
    let dim = shape.dim();
    if dim < 1 || x0.len() != dim {
        return Err(Error::InvalidArgument("dimension mismatch in discretize".into()));
    }
    let (lo, hi) = shape.bounding_box();
    let nf = n as f64;
    let lo_i: Vec<i64> = lo.iter().map(|v| (v * nf).floor() as i64 - 1).collect();
    let hi_i: Vec<i64> = hi.iter().map(|v| (v * nf).ceil() as i64 + 1).collect();

    let mut points = Vec::new();
    let mut cursor: Vec<i64> = lo_i.clone();
    'outer: loop {
        let p = Point::from_slice(&cursor);
        if shape.contains_blowup(&p, n) {
            points.push(p);
        }
        // odometer increment over the bounding box
        let mut axis = 0;
        loop {
            cursor[axis] += 1;
            if cursor[axis] <= hi_i[axis] {
                break;
            }
            cursor[axis] = lo_i[axis];
            axis += 1;
            if axis == dim {
                break 'outer;
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyDomain(format!("{:?} with N={} has no lattice points", shape, n)));
    }
    let anchor_coords: Vec<i64> = x0.iter().map(|c| (c * nf).round() as i64).collect();
    let anchor = Point::from_slice(&anchor_coords);
    LatticeDomain::from_points(points, n, anchor)
}

/// Inner boundary of an arbitrary finite point set (standalone form used by
/// tests and by set-level constructions).
pub fn inner_boundary_of_set(set: &[Point]) -> Vec<Point> {
    let lookup: std::collections::HashSet<&Point> = set.iter().collect();
    let mut out: Vec<Point> = set
        .iter()
        .filter(|p| p.neighbors().any(|q| !lookup.contains(&q)))
        .cloned()
        .collect();
    out.sort();
    out
}

/// A Euclidean ball region on the lattice: `{y : |y - center| ≤ radius}`.
#[derive(Clone, Debug)]
pub struct BallRegion {
    pub center: Point,
    pub radius: f64,
}

impl BallRegion {
    pub fn new(center: Point, radius: f64) -> Result<Self> {
        if radius < 0.0 {
            return Err(Error::InvalidArgument("ball radius must be ≥ 0".into()));
        }
        Ok(BallRegion { center, radius })
    }

    pub fn contains(&self, p: &Point) -> bool {
        (p.dist2(&self.center) as f64) <= self.radius * self.radius
    }

    /// All lattice points of the region (independent of any domain).
    pub fn lattice_points(&self, dim: usize) -> Vec<Point> {
        let r = self.radius.floor() as i64 + 1;
        let mut out = Vec::new();
        let mut cursor = vec![-r; dim];
        'outer: loop {
            let p = Point(
                cursor.iter().zip(self.center.0.iter()).map(|(c, o)| c + o).collect(),
            );
            if self.contains(&p) {
                out.push(p);
            }
            let mut axis = 0;
            loop {
                cursor[axis] += 1;
                if cursor[axis] <= r {
                    break;
                }
                cursor[axis] = -r;
                axis += 1;
                if axis == dim {
                    break 'outer;
                }
            }
        }
        out.sort();
        out
    }

    /// Domain indices of region members.
    pub fn indices_in(&self, domain: &LatticeDomain) -> Vec<u32> {
        self.lattice_points(domain.dim)
            .into_iter()
            .filter_map(|p| domain.idx(&p))
            .collect()
    }
}

/// Closed annulus `{z : r ≤ |z - center| ≤ R}` (both radii inclusive).
pub fn annulus(center: &Point, r: f64, big_r: f64, dim: usize) -> Result<Vec<Point>> {
    if r < 0.0 || r >= big_r {
        return Err(Error::InvalidArgument(format!("annulus requires 0 ≤ r < R, got r={} R={}", r, big_r)));
    }
    let outer = BallRegion::new(center.clone(), big_r)?;
    let r2 = r * r;
    Ok(outer
        .lattice_points(dim)
        .into_iter()
        .filter(|p| (p.dist2(center) as f64) >= r2)
        .collect())
}

/// The Δ region: points of the domain at Euclidean distance > N^γ from a
/// ball region B, with the restricted boundary convention (only neighbors
/// inside the domain count).
pub struct DeltaRegion {
    pub gamma: f64,
    pub threshold: f64,
    /// Membership mask over domain indices.
    pub member: Vec<bool>,
    /// Sorted domain indices of Δ.
    pub points: Vec<u32>,
    /// Sorted domain indices of ∂Δ = {x ∈ Δ : ∃ y ∈ Δ^c ∩ D_N, x ~ y}.
    pub boundary: Vec<u32>,
}

impl DeltaRegion {
    pub fn contains_idx(&self, i: u32) -> bool {
        self.member[i as usize]
    }
}

/// Build the Δ region for a ball `b` inside `domain` at standoff N^γ.
///
/// For points outside B the nearest point of the discrete set B∩domain lies
/// on its inner boundary, so distances are evaluated against that boundary
/// with a cheap radial pre-filter before the exact scan.
pub fn delta_region(domain: &LatticeDomain, b: &BallRegion, gamma: f64) -> Result<DeltaRegion> {
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must be in (0,1), got {}", gamma)));
    }
    let threshold = (domain.n as f64).powf(gamma);

    let b_points: Vec<Point> = b
        .lattice_points(domain.dim)
        .into_iter()
        .filter(|p| domain.contains(p))
        .collect();
    if b_points.is_empty() {
        return Err(Error::Geometry("ball region B contains no domain points".into()));
    }
    let b_shell = inner_boundary_of_set(&b_points);
    let b_max_norm = b_points
        .iter()
        .map(|p| (p.dist2(&b.center) as f64).sqrt())
        .fold(0.0f64, f64::max);

    let thr2 = threshold * threshold;
    let dim_slack = (domain.dim as f64).sqrt();
    let mut member = vec![false; domain.len()];
    for (i, p) in domain.points().iter().enumerate() {
        let rc = (p.dist2(&b.center) as f64).sqrt();
        // quick accept: even the closest possible B point is too far
        if rc - b_max_norm > threshold + dim_slack {
            member[i] = true;
            continue;
        }
        // quick reject: inside B, or trivially within threshold of it
        if b.contains(p) || rc - b_max_norm <= 0.0 {
            continue;
        }
        let d2 = b_shell.iter().map(|q| p.dist2(q)).min().unwrap();
        member[i] = (d2 as f64) > thr2;
    }

    let points: Vec<u32> =
        (0..domain.len() as u32).filter(|&i| member[i as usize]).collect();
    if points.is_empty() {
        return Err(Error::EmptyDelta(format!(
            "N^γ = {:.2} exceeds the domain extent around B",
            threshold
        )));
    }
    let boundary: Vec<u32> = points
        .iter()
        .copied()
        .filter(|&i| {
            domain
                .neighbors_of(i)
                .iter()
                .any(|&j| j != OUTSIDE && !member[j as usize])
        })
        .collect();
    Ok(DeltaRegion { gamma, threshold, member, points, boundary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn d3(p: &[i64]) -> Point {
        Point::from_slice(p)
    }

    #[test]
    fn unit_ball_n1_has_seven_points() {
        let dom = discretize(&Shape::unit_ball(3), 1, &[0.0; 3]).unwrap();
        assert_eq!(dom.len(), 7);
        assert!(dom.contains(&d3(&[0, 0, 0])));
        assert!(dom.contains(&d3(&[0, 0, 1])));
        assert!(!dom.contains(&d3(&[1, 1, 0])));
    }

    #[test]
    fn axis_box_n4_count() {
        let shape = Shape::AxisBox { center: vec![0.0; 3], half_widths: vec![1.0; 3] };
        let dom = discretize(&shape, 4, &[0.0; 3]).unwrap();
        assert_eq!(dom.len(), 9 * 9 * 9);
    }

    #[test]
    fn ball_count_matches_brute_force() {
        let dom = discretize(&Shape::unit_ball(3), 8, &[0.0; 3]).unwrap();
        let mut count = 0;
        for x in -9i64..=9 {
            for y in -9i64..=9 {
                for z in -9i64..=9 {
                    if x * x + y * y + z * z <= 64 {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(dom.len(), count);
    }

    #[test]
    fn empty_domain_is_an_error() {
        let shape = Shape::Ball { center: vec![0.4; 3], radius: 0.05 };
        assert!(matches!(discretize(&shape, 1, &[0.4; 3]), Err(Error::EmptyDomain(_))));
    }

    #[test]
    fn full_box_boundary_is_everything_but_center() {
        let shape = Shape::AxisBox { center: vec![0.0; 3], half_widths: vec![1.0; 3] };
        let dom = discretize(&shape, 1, &[0.0; 3]).unwrap();
        assert_eq!(dom.len(), 27);
        assert_eq!(dom.inner_boundary().len(), 26);
        let center = dom.idx(&d3(&[0, 0, 0])).unwrap();
        assert!(dom.is_interior(center));
    }

    #[test]
    fn single_point_is_its_own_boundary() {
        let dom = LatticeDomain::from_points(vec![d3(&[5, 5, 5])], 1, d3(&[5, 5, 5])).unwrap();
        assert_eq!(dom.inner_boundary().len(), 1);
        assert_eq!(dom.exterior_boundary().len(), 6);
    }

    #[test]
    fn boundary_matches_neighbor_scan_on_discrete_ball() {
        let dom = discretize(&Shape::unit_ball(3), 2, &[0.0; 3]).unwrap();
        let brute = inner_boundary_of_set(dom.points());
        let from_domain: Vec<Point> =
            dom.inner_boundary().iter().map(|&i| dom.point(i).clone()).collect();
        assert_eq!(brute, from_domain);
    }

    #[test]
    fn interior_and_boundary_partition_random_domains() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..100 {
            let mut pts = Vec::new();
            for _ in 0..rng.gen_range(1..40) {
                pts.push(d3(&[
                    rng.gen_range(-3..4),
                    rng.gen_range(-3..4),
                    rng.gen_range(-3..4),
                ]));
            }
            pts.sort();
            pts.dedup();
            let anchor = pts[0].clone();
            let dom = LatticeDomain::from_points(pts, 1, anchor).unwrap();
            let mut interior_count = 0;
            for i in 0..dom.len() as u32 {
                let on_boundary = dom.inner_boundary().contains(&i);
                assert_ne!(dom.is_interior(i), on_boundary);
                if dom.is_interior(i) {
                    interior_count += 1;
                }
            }
            assert_eq!(interior_count + dom.inner_boundary().len(), dom.len());
        }
    }

    #[test]
    fn blowup_membership_monotone_for_divisor_n_on_boxes() {
        let shape = Shape::AxisBox { center: vec![0.0; 3], half_widths: vec![0.7; 3] };
        let dn = discretize(&shape, 3, &[0.0; 3]).unwrap();
        // x ∈ D_3 implies (6/3)x ∈ D_6
        for p in dn.points() {
            let scaled = Point(p.0.iter().map(|c| c * 2).collect());
            assert!(shape.contains_blowup(&scaled, 6));
        }
    }

    #[test]
    fn annulus_zero_to_one_is_closed_unit_ball() {
        let a = annulus(&d3(&[0, 0, 0]), 0.0, 1.0, 3).unwrap();
        assert_eq!(a.len(), 7);
    }

    #[test]
    fn ball_radius_zero_is_center() {
        let b = BallRegion::new(d3(&[1, 2, 3]), 0.0).unwrap();
        assert_eq!(b.lattice_points(3), vec![d3(&[1, 2, 3])]);
    }

    #[test]
    fn annulus_rejects_bad_radii() {
        assert!(annulus(&d3(&[0, 0, 0]), 2.0, 2.0, 3).is_err());
    }

    #[test]
    fn annulus_count_matches_enumeration() {
        let a = annulus(&d3(&[0, 0, 0]), 2.0, 4.0, 3).unwrap();
        let mut count = 0;
        for x in -4i64..=4 {
            for y in -4i64..=4 {
                for z in -4i64..=4 {
                    let n2 = x * x + y * y + z * z;
                    if n2 >= 4 && n2 <= 16 {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(a.len(), count);
    }

    #[test]
    fn distance_to_set_brute_force() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let set: Vec<Point> = (0..50)
            .map(|_| {
                d3(&[rng.gen_range(-10..11), rng.gen_range(-10..11), rng.gen_range(-10..11)])
            })
            .collect();
        let x = d3(&[12, -3, 4]);
        let d = distance_to_set(&x, &set).unwrap();
        let brute = set
            .iter()
            .map(|y| (x.dist2(y) as f64).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(d, brute);
        assert_eq!(distance_to_set(&set[0].clone(), &set).unwrap(), 0.0);
        assert_eq!(
            distance_to_set(&d3(&[3, 0, 0]), &[d3(&[0, 0, 0])]).unwrap(),
            3.0
        );
    }

    #[test]
    fn delta_region_geometry() {
        let dom = discretize(&Shape::unit_ball(3), 16, &[0.0; 3]).unwrap();
        let b = BallRegion::new(Point::zero(3), 0.2 * 16.0).unwrap();
        let delta = delta_region(&dom, &b, 0.5).unwrap();
        assert!(!delta.points.is_empty());
        // ∂Δ ⊆ Δ and every ∂Δ point has a neighbor in D_N \ Δ
        for &i in &delta.boundary {
            assert!(delta.member[i as usize]);
            assert!(dom
                .neighbors_of(i)
                .iter()
                .any(|&j| j != OUTSIDE && !delta.member[j as usize]));
        }
        // Δ ∩ B = ∅
        for &i in &delta.points {
            assert!(!b.contains(dom.point(i)));
        }
        // membership against the brute-force point-to-set distance
        let b_points: Vec<Point> = b
            .lattice_points(3)
            .into_iter()
            .filter(|p| dom.contains(p))
            .collect();
        let thr = 16f64.powf(0.5);
        for (i, p) in dom.points().iter().enumerate() {
            let d = distance_to_set(p, &b_points).unwrap();
            assert_eq!(delta.member[i], d > thr, "mismatch at {:?} (d={})", p, d);
        }
    }

    #[test]
    fn delta_region_empty_when_standoff_too_large() {
        let dom = discretize(&Shape::unit_ball(3), 4, &[0.0; 3]).unwrap();
        let b = BallRegion::new(Point::zero(3), 2.0).unwrap();
        assert!(matches!(delta_region(&dom, &b, 0.99), Err(Error::EmptyDelta(_))));
    }

    #[test]
    fn boundary_size_matches_enumeration_oracle() {
        // |∂Δ| for unit ball, N=16, γ=0.8 against direct enumeration
        let dom = discretize(&Shape::unit_ball(3), 16, &[0.0; 3]).unwrap();
        let b = BallRegion::new(Point::zero(3), 0.1 * 16.0).unwrap();
        let delta = delta_region(&dom, &b, 0.8).unwrap();
        let b_points: Vec<Point> =
            b.lattice_points(3).into_iter().filter(|p| dom.contains(p)).collect();
        let thr = 16f64.powf(0.8);
        let mut expected = 0;
        for (i, p) in dom.points().iter().enumerate() {
            let in_delta = distance_to_set(p, &b_points).unwrap() > thr;
            if !in_delta {
                continue;
            }
            let has_inside_neighbor = dom.neighbors_of(i as u32).iter().any(|&j| {
                j != OUTSIDE
                    && distance_to_set(dom.point(j), &b_points).unwrap() <= thr
            });
            if has_inside_neighbor {
                expected += 1;
            }
        }
        assert_eq!(delta.boundary.len(), expected);
    }
}
