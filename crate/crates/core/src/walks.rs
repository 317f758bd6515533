//! Walk samplers: the simple random walk on Z^d, the confined walk on
//! conductances φ(x)φ(y) inside the domain, and the Ψ-tilted walk on all of
//! Z^d (φ on the enlarged ball, 1 outside). Plus hitting times, stop
//! conditions and the excursion decomposition between a ball and the Δ
//! region.

use crate::lattice::{BallRegion, LatticeDomain, Point, OUTSIDE};
use crate::spectrum::EigenPair;
use crate::{Error, Result};
use rand::Rng;
use std::collections::HashSet;
use std::sync::Arc;

/// Ψ field: the eigenvector on the enlarged ball B^ε, 1 elsewhere on Z^d.
pub struct TiltingField {
    pub pair: Arc<EigenPair>,
    pub b_eps: BallRegion,
    /// 1 where the domain point is inside B^ε (index-aligned with the domain).
    in_b_eps: Vec<bool>,
}

/// Builds the tilting field; B^ε must lie inside the domain with a strictly
/// positive eigenvector on it.
pub fn build_tilting_field(pair: Arc<EigenPair>, b_eps: BallRegion) -> Result<TiltingField> {
    let dom = pair.domain();
    let mut in_b_eps = vec![false; dom.len()];
    for p in b_eps.lattice_points(dom.dim) {
        match dom.idx(&p) {
            Some(i) => {
                if pair.phi.get(i) <= 0.0 {
                    return Err(Error::Geometry("φ not positive on B^ε".into()));
                }
                in_b_eps[i as usize] = true;
            }
            None => {
                return Err(Error::Geometry(format!("B^ε point {:?} outside the domain", p)));
            }
        }
    }
    Ok(TiltingField { pair, b_eps, in_b_eps })
}

impl TiltingField {
    /// Ψ(x): φ(x) on B^ε, 1 everywhere else (including outside the domain).
    pub fn psi(&self, p: &Point) -> f64 {
        match self.pair.domain().idx(p) {
            Some(i) if self.in_b_eps[i as usize] => self.pair.phi.get(i),
            _ => 1.0,
        }
    }

    pub fn psi_idx(&self, i: u32) -> f64 {
        if self.in_b_eps[i as usize] {
            self.pair.phi.get(i)
        } else {
            1.0
        }
    }

    pub fn in_b_eps(&self, p: &Point) -> bool {
        match self.pair.domain().idx(p) {
            Some(i) => self.in_b_eps[i as usize],
            None => false,
        }
    }

    /// Neighbor mean Ψ̄(x), mixing φ and 1 exactly at the seam.
    pub fn psi_bar(&self, p: &Point) -> f64 {
        let deg = 2.0 * p.dim() as f64;
        let sum: f64 = p.neighbors().map(|q| self.psi(&q)).sum();
        sum / deg
    }
}

/// Local transition rule of a nearest-neighbor walk.
pub enum WalkKernel {
    /// Uniform on the 2d neighbors, all of Z^d.
    Srw { dim: usize },
    /// Conductances φ(x)φ(y) inside the domain (never leaves it).
    PhiTilted { pair: Arc<EigenPair> },
    /// Conductances Ψ(x)Ψ(y) on all of Z^d.
    PsiTilted { tilt: Arc<TiltingField> },
}

/// Normalized weights over the 2d neighbors of a point.
pub struct StepDistribution {
    pub base: Point,
    /// `(neighbor, probability)`, zero-probability neighbors omitted.
    pub support: Vec<(Point, f64)>,
}

impl WalkKernel {
    pub fn dim(&self) -> usize {
        match self {
            WalkKernel::Srw { dim } => *dim,
            WalkKernel::PhiTilted { pair } => pair.domain().dim,
            WalkKernel::PsiTilted { tilt } => tilt.pair.domain().dim,
        }
    }

    /// Builds a φ-tilted kernel and asserts that the conductance form and
    /// the Doob form λ⁻¹φ(y)/(2dφ(x)) agree within 1e-10 on every edge.
    pub fn phi_tilted(pair: Arc<EigenPair>) -> Result<WalkKernel> {
        let dom = pair.domain().clone();
        let deg = dom.degree() as f64;
        for i in 0..dom.len() as u32 {
            let sum: f64 = dom
                .neighbors_of(i)
                .iter()
                .filter(|&&j| j != OUTSIDE)
                .map(|&j| pair.phi.get(j))
                .sum();
            if sum <= 0.0 {
                continue; // isolated point: never stepped from
            }
            for &j in dom.neighbors_of(i) {
                if j == OUTSIDE {
                    continue;
                }
                let conductance_form = pair.phi.get(j) / sum;
                let doob_form = pair.phi.get(j) / (pair.lambda * deg * pair.phi.get(i));
                if (conductance_form - doob_form).abs() > 1e-10 {
                    return Err(Error::Geometry(format!(
                        "tilted kernel forms disagree by {:.3e} at point {:?}",
                        (conductance_form - doob_form).abs(),
                        dom.point(i)
                    )));
                }
            }
        }
        Ok(WalkKernel::PhiTilted { pair })
    }

    /// Conductance weight h(y) seen from x (h ≡ 0 outside the reachable set).
    fn weight(&self, y: &Point) -> f64 {
        match self {
            WalkKernel::Srw { .. } => 1.0,
            WalkKernel::PhiTilted { pair } => pair.phi.eval(y),
            WalkKernel::PsiTilted { tilt } => tilt.psi(y),
        }
    }

    /// Full step distribution at x: p(x,y) = h(y)/Σ_{z~x} h(z).
    pub fn step_distribution(&self, x: &Point) -> Result<StepDistribution> {
        let mut support = Vec::with_capacity(2 * x.dim());
        let mut total = 0.0;
        for y in x.neighbors() {
            let w = self.weight(&y);
            if w > 0.0 {
                total += w;
                support.push((y, w));
            }
        }
        if total <= 0.0 {
            return Err(Error::SupportViolation(format!(
                "all neighbor weights vanish at {:?}",
                x
            )));
        }
        for (_, w) in &mut support {
            *w /= total;
        }
        Ok(StepDistribution { base: x.clone(), support })
    }

    /// One sampled step. SRW takes the cheap uniform path; tilted kernels
    /// draw by inversion over the neighbor weights.
    pub fn sample_step(&self, x: &Point, rng: &mut impl Rng) -> Result<Point> {
        match self {
            WalkKernel::Srw { dim } => {
                let k = rng.gen_range(0..2 * dim);
                Ok(x.step(k / 2, if k % 2 == 0 { 1 } else { -1 }))
            }
            _ => {
                let dim = x.dim();
                let mut weights = [0.0f64; 16];
                let mut total = 0.0;
                for k in 0..2 * dim {
                    let y = x.step(k / 2, if k % 2 == 0 { 1 } else { -1 });
                    let w = self.weight(&y);
                    weights[k] = w;
                    total += w;
                }
                if total <= 0.0 {
                    return Err(Error::SupportViolation(format!(
                        "all neighbor weights vanish at {:?}",
                        x
                    )));
                }
                let mut u = rng.gen::<f64>() * total;
                for k in 0..2 * dim {
                    u -= weights[k];
                    if u <= 0.0 {
                        return Ok(x.step(k / 2, if k % 2 == 0 { 1 } else { -1 }));
                    }
                }
                Ok(x.step(dim - 1, -1))
            }
        }
    }
}

/// Membership test used by stop rules.
#[derive(Clone)]
pub enum SetSpec {
    Ball(BallRegion),
    Explicit(Arc<HashSet<Point>>),
    /// Mask over a domain's indices; points outside the domain are not in
    /// the set.
    DomainMask(Arc<LatticeDomain>, Arc<Vec<bool>>),
}

impl SetSpec {
    pub fn contains(&self, p: &Point) -> bool {
        match self {
            SetSpec::Ball(b) => b.contains(p),
            SetSpec::Explicit(s) => s.contains(p),
            SetSpec::DomainMask(dom, mask) => {
                dom.idx(p).map(|i| mask[i as usize]).unwrap_or(false)
            }
        }
    }

    pub fn from_points(points: impl IntoIterator<Item = Point>) -> Self {
        SetSpec::Explicit(Arc::new(points.into_iter().collect()))
    }
}

/// Stop condition for path sampling. Composites trigger on the first hit;
/// same-step ties resolve hit > escape > budget.
#[derive(Clone)]
pub enum StopRule {
    HitSet(SetSpec),
    StepBudget(usize),
    /// Stop once strictly outside the sphere |x − center| > radius.
    EscapeSphere { center: Point, radius: f64 },
    Composite(Vec<StopRule>),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum StopReason {
    HitTarget,
    Escaped,
    BudgetExhausted,
}

/// A sampled nearest-neighbor path. `path[0]` is the start.
pub struct Trajectory {
    pub path: Vec<Point>,
    pub stop: StopReason,
}

impl Trajectory {
    pub fn start(&self) -> &Point {
        &self.path[0]
    }

    pub fn len_steps(&self) -> usize {
        self.path.len() - 1
    }

    pub fn last(&self) -> &Point {
        self.path.last().unwrap()
    }
}

fn rule_fires(rule: &StopRule, p: &Point, steps_taken: usize) -> Option<StopReason> {
    match rule {
        StopRule::HitSet(s) => s.contains(p).then_some(StopReason::HitTarget),
        StopRule::EscapeSphere { center, radius } => {
            ((p.dist2(center) as f64) > radius * radius).then_some(StopReason::Escaped)
        }
        StopRule::StepBudget(b) => (steps_taken >= *b).then_some(StopReason::BudgetExhausted),
        StopRule::Composite(rules) => {
            let mut best: Option<StopReason> = None;
            for r in rules {
                if let Some(reason) = rule_fires(r, p, steps_taken) {
                    best = Some(match (best, reason) {
                        (None, r) => r,
                        (Some(a), b) => {
                            // hit > escape > budget
                            let rank = |r: StopReason| match r {
                                StopReason::HitTarget => 0,
                                StopReason::Escaped => 1,
                                StopReason::BudgetExhausted => 2,
                            };
                            if rank(b) < rank(a) {
                                b
                            } else {
                                a
                            }
                        }
                    });
                }
            }
            best
        }
    }
}

/// Samples a path step by step until the stop rule fires. The start point
/// is tested before the first step, except for the step budget (a budget of
/// 0 yields a length-0 trajectory at the start).
pub fn sample_path(
    kernel: &WalkKernel,
    start: Point,
    stop: &StopRule,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let mut path = vec![start];
    loop {
        let steps = path.len() - 1;
        if let Some(reason) = rule_fires(stop, path.last().unwrap(), steps) {
            return Ok(Trajectory { path, stop: reason });
        }
        let next = kernel.sample_step(path.last().unwrap(), rng)?;
        path.push(next);
    }
}

/// Variant that skips the membership test at index 0, for first-return laws
/// (H̄ semantics: the start does not count as a hit).
pub fn sample_path_skip_start(
    kernel: &WalkKernel,
    start: Point,
    stop: &StopRule,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let mut path = vec![start];
    let next = kernel.sample_step(&path[0], rng)?;
    path.push(next);
    loop {
        let steps = path.len() - 1;
        if let Some(reason) = rule_fires(stop, path.last().unwrap(), steps) {
            return Ok(Trajectory { path, stop: reason });
        }
        let next = kernel.sample_step(path.last().unwrap(), rng)?;
        path.push(next);
    }
}

/// (H_K, H̄_K): first index ≥ 0 and first index ≥ 1 in K; `None` encodes +∞
/// (the path never meets K).
pub fn hitting_times(traj: &Trajectory, k: &SetSpec) -> (Option<usize>, Option<usize>) {
    let h = traj.path.iter().position(|p| k.contains(p));
    let hbar = traj.path[1..].iter().position(|p| k.contains(p)).map(|i| i + 1);
    (h, hbar)
}

/// One excursion: entry into B, exit at the first subsequent Δ-hit.
#[derive(Clone)]
pub struct ExcursionRecord {
    pub entry: Point,
    pub exit: Point,
    /// Path from entry to exit inclusive.
    pub path: Vec<Point>,
    /// Index of the entry in the source trajectory.
    pub start_index: usize,
}

pub struct Decomposition {
    /// (R_i, D_i) index pairs, in order.
    pub times: Vec<(usize, usize)>,
    pub records: Vec<ExcursionRecord>,
    /// Index of D_0 (first Δ-hit), if any.
    pub d0: Option<usize>,
    /// An entry happened but its Δ-exit lies beyond the trajectory end.
    pub truncated_last: bool,
}

/// Splits a trajectory into excursions from B to Δ. `initial_in_excursion`
/// encodes the two-sided stationary phase: when true, time 0 behaves as if
/// the walk had already visited Δ, so the first B-hit counts as an entry
/// without waiting for D_0.
pub fn excursion_decomposition(
    traj: &Trajectory,
    b: &SetSpec,
    delta: &SetSpec,
    initial_in_excursion: bool,
) -> Decomposition {
    let mut times = Vec::new();
    let mut records = Vec::new();
    let mut d0 = None;
    let mut truncated_last = false;
    // pending = the walk's last B∪Δ visit was in Δ (an entry is armed)
    let mut pending = initial_in_excursion;
    let mut current_entry: Option<usize> = None;
    for (idx, p) in traj.path.iter().enumerate() {
        if let Some(r) = current_entry {
            if delta.contains(p) {
                times.push((r, idx));
                records.push(ExcursionRecord {
                    entry: traj.path[r].clone(),
                    exit: p.clone(),
                    path: traj.path[r..=idx].to_vec(),
                    start_index: r,
                });
                current_entry = None;
                pending = true;
                if d0.is_none() {
                    d0 = Some(idx);
                }
            }
            continue;
        }
        if b.contains(p) {
            if pending {
                current_entry = Some(idx);
                pending = false;
            }
        } else if delta.contains(p) {
            if d0.is_none() {
                d0 = Some(idx);
            }
            pending = true;
        }
    }
    if current_entry.is_some() {
        truncated_last = true;
    }
    Decomposition { times, records, d0, truncated_last }
}

/// Exact sampler for the confined walk's stationary law (weights
/// φ(x)·Σ_{y~x}φ(y), the reversible measure of the conductance kernel,
/// equal to the φ² law up to the eigen-residual).
pub struct StationarySampler {
    domain: Arc<LatticeDomain>,
    cumulative: Vec<f64>,
}

impl StationarySampler {
    pub fn new(pair: &EigenPair) -> Self {
        let dom = pair.domain().clone();
        let mut cumulative = Vec::with_capacity(dom.len());
        let mut acc = 0.0;
        for i in 0..dom.len() as u32 {
            let sum: f64 = dom
                .neighbors_of(i)
                .iter()
                .filter(|&&j| j != OUTSIDE)
                .map(|&j| pair.phi.get(j))
                .sum();
            acc += pair.phi.get(i) * sum;
            cumulative.push(acc);
        }
        StationarySampler { domain: dom, cumulative }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Point {
        let total = *self.cumulative.last().unwrap();
        let u = rng.gen::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c < u);
        self.domain.point(idx.min(self.domain.len() - 1) as u32).clone()
    }
}

/// Stationary start per the spec operation signature.
pub fn stationary_start(pair: &EigenPair, rng: &mut impl Rng) -> Point {
    StationarySampler::new(pair).sample(rng)
}

/// {X_0, …, X_t} as a set; errors when t exceeds the trajectory length.
pub fn range(traj: &Trajectory, t: usize) -> Result<HashSet<Point>> {
    if t > traj.len_steps() {
        return Err(Error::InvalidArgument(format!(
            "range time {} beyond trajectory length {}",
            t,
            traj.len_steps()
        )));
    }
    Ok(traj.path[..=t].iter().cloned().collect())
}

/// Debug dump: a header with the seed and kernel id, then one point per
/// line.
pub fn write_trajectory(
    traj: &Trajectory,
    seed: u64,
    kernel_id: &str,
    w: &mut impl std::io::Write,
) -> Result<()> {
    writeln!(w, "# trajectory v1 seed {} kernel {} stop {:?}", seed, kernel_id, traj.stop)?;
    for p in &traj.path {
        let coords: Vec<String> = p.0.iter().map(|c| c.to_string()).collect();
        writeln!(w, "{}", coords.join(" "))?;
    }
    Ok(())
}

/// Log-space accumulator for λ^{-τ} reweighting factors.
#[derive(Clone, Copy, Default)]
pub struct LogWeight(pub f64);

impl LogWeight {
    pub fn push_steps(&mut self, steps: usize, lambda: f64) {
        self.0 -= steps as f64 * lambda.ln();
    }

    pub fn value(&self) -> f64 {
        self.0.exp()
    }
}
