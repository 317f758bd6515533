//! The excursion chains on Σ = ∂B × ∂Δ: entry/exit pairs of the confined
//! walk (Y) and of the tilted-interlacement trajectories (Z), their common
//! invariant measure, excursion counts, the coalescing mixing couplings,
//! and the tables feeding the soft-local-times engine.
//!
//! Exactness note: the two chains share the invariant measure π̃ exactly
//! when the Δ-collar plus one lattice ring sits inside B^ε (then every
//! B→Δ leg sees Ψ ≡ φ). The geometry builder checks this by enumeration
//! and records the outcome in `collar_exact`.

use crate::lattice::{BallRegion, DeltaRegion, LatticeDomain, Point, OUTSIDE};
use crate::potential::DiscreteDistribution;
use crate::solver::{Cell, DomainProblem, GridBox, GridProblem};
use crate::spectrum::EigenPair;
use crate::walks::{build_tilting_field, SetSpec, TiltingField, WalkKernel};
use crate::{Error, Result};
use rand::Rng;
use std::collections::HashMap;
use std::sync::Arc;

/// One chain state: an entry point on ∂B and an exit point on ∂Δ.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct PairState {
    pub entry: Point,
    pub exit: Point,
}

/// Geometry and spectral context shared by all chain machinery.
pub struct ChainGeometry {
    pub domain: Arc<LatticeDomain>,
    pub pair: Arc<EigenPair>,
    pub tilt: Arc<TiltingField>,
    pub b: BallRegion,
    pub b_eps: BallRegion,
    pub delta: DeltaRegion,
    pub gamma: f64,
    pub alpha: f64,
    pub eps: f64,
    /// Domain-index mask of B.
    pub b_mask: Vec<bool>,
    /// Entry candidates: B points with a lattice neighbor outside B.
    pub entries: Vec<u32>,
    /// Exit candidates: ∂Δ.
    pub exits: Vec<u32>,
    pub entry_pos: HashMap<u32, usize>,
    pub exit_pos: HashMap<u32, usize>,
    /// Every collar point (d(·,B) ≤ N^γ) plus one ring lies inside B^ε, so
    /// the tilted exit legs coincide with confined-walk exit legs exactly.
    pub collar_exact: bool,
}

impl ChainGeometry {
    pub fn n_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn n_exits(&self) -> usize {
        self.exits.len()
    }

    pub fn sigma_size(&self) -> usize {
        self.entries.len() * self.exits.len()
    }

    pub fn entry_point(&self, i: usize) -> &Point {
        self.domain.point(self.entries[i])
    }

    pub fn exit_point(&self, j: usize) -> &Point {
        self.domain.point(self.exits[j])
    }

    /// Conductance weight φ(x)·Σ_{y~x}φ(y) / 2d (the reversible measure of
    /// the confined kernel, λφ² up to the eigen residual).
    pub fn w_weight(&self, i: u32) -> f64 {
        self.pair.phi.get(i) * self.pair.phi.neighbor_mean_idx(i)
    }
}

pub fn build_chain_geometry(
    pair: Arc<EigenPair>,
    alpha: f64,
    eps: f64,
    gamma: f64,
) -> Result<ChainGeometry> {
    let domain = pair.domain().clone();
    let n = domain.n as f64;
    let b = BallRegion::new(domain.anchor.clone(), alpha * n)?;
    let b_eps = BallRegion::new(domain.anchor.clone(), (alpha + eps) * n)?;
    let tilt = Arc::new(build_tilting_field(pair.clone(), b_eps.clone())?);
    let delta = crate::lattice::delta_region(&domain, &b, gamma)?;

    let mut b_mask = vec![false; domain.len()];
    for p in b.lattice_points(domain.dim) {
        if let Some(i) = domain.idx(&p) {
            b_mask[i as usize] = true;
        }
    }
    if !b_mask.iter().any(|&m| m) {
        return Err(Error::Geometry("B contains no domain points".into()));
    }
    let entries: Vec<u32> = (0..domain.len() as u32)
        .filter(|&i| {
            b_mask[i as usize]
                && domain
                    .point(i)
                    .neighbors()
                    .any(|q| domain.idx(&q).map(|j| !b_mask[j as usize]).unwrap_or(true))
        })
        .collect();
    let exits = delta.boundary.clone();
    if exits.is_empty() {
        return Err(Error::EmptyDelta("∂Δ is empty".into()));
    }

    // collar containment: every domain point at distance ≤ N^γ from B, and
    // each of its lattice neighbors, must lie inside B^ε
    let mut collar_exact = true;
    'outer: for (i, p) in domain.points().iter().enumerate() {
        if delta.member[i] || b_mask[i] {
            continue;
        }
        // p is in the collar (in D, not in B, not in Δ)
        if !b_eps.contains(p) {
            collar_exact = false;
            break;
        }
        for q in p.neighbors() {
            if !b_eps.contains(&q) {
                collar_exact = false;
                break 'outer;
            }
        }
    }

    let entry_pos = entries.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let exit_pos = exits.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    Ok(ChainGeometry {
        domain,
        pair,
        tilt,
        b,
        b_eps,
        delta,
        gamma,
        alpha,
        eps,
        b_mask,
        entries,
        exits,
        entry_pos,
        exit_pos,
        collar_exact,
    })
}

/// Deterministic tables for the chain kernels, all at one truncation radius
/// (the truncated trajectory soup is exactly consistent at any radius).
pub struct ChainTables {
    /// μ(x,y) = P^N_x(X_{H_Δ} = y), rows over entries.
    pub mu: Vec<Vec<f64>>,
    /// P^N_w(X_{H_B} = x), rows over exits.
    pub retb: Vec<Vec<f64>>,
    /// Truncated Ψ-walk return: P^R_w(H_B < death, X_{H_B} = x).
    pub a_hit: Vec<Vec<f64>>,
    /// Truncated escape P^R_w(death < H_B) per exit.
    pub esc: Vec<f64>,
    /// Truncated tilted harmonic measure ē^{Ψ,R}_B per entry.
    pub ebar: Vec<f64>,
    /// (φ_N, Δ)-equilibrium weights per entry: conductance form and the
    /// φ²-normalized form.
    pub e_delta_w: Vec<f64>,
    pub e_delta_paper: Vec<f64>,
    pub cap_delta_w: f64,
    pub cap_delta_paper: f64,
    /// Truncated tilted capacity of B at the table radius.
    pub cap_psi_w: f64,
    /// Normalized entrance marginal ẽ (conductance form).
    pub g_tilde: Vec<f64>,
    /// ν_Y entrance marginal: stationary-start law of the first entry.
    pub nu_y_entry: Vec<f64>,
    pub table_radius: f64,
}

impl ChainTables {
    /// π̃(x,y) = ẽ(x)·μ(x,y).
    pub fn pi(&self, x: usize, y: usize) -> f64 {
        self.g_tilde[x] * self.mu[x][y]
    }

    /// Exit marginal m(w) = Σ_x ẽ(x) μ(x,w).
    pub fn exit_marginal(&self) -> Vec<f64> {
        let n_exit = self.esc.len();
        let mut m = vec![0.0; n_exit];
        for (x, row) in self.mu.iter().enumerate() {
            for (w, v) in row.iter().enumerate() {
                m[w] += self.g_tilde[x] * v;
            }
        }
        m
    }

    /// Z return kernel A_w(x) = hit + esc·ē.
    pub fn a_kernel(&self, w: usize, x: usize) -> f64 {
        self.a_hit[w][x] + self.esc[w] * self.ebar[x]
    }
}

/// Harmonic solve fields behind the tables, kept by the coupling
/// experiment for conditioned-bridge sampling.
pub struct ChainFields {
    /// Per exit target: P^N_·(X_{H_Δ} = y) over the domain.
    pub mu_fields: Vec<Vec<f64>>,
    /// Per entry target: P^N_·(X_{H_B} = x) over the domain.
    pub retb_fields: Vec<Vec<f64>>,
}

/// Solves the exit-law, return-law and truncated tilted tables.
pub fn build_chain_tables(
    geom: &ChainGeometry,
    table_radius: f64,
    tol: f64,
) -> Result<ChainTables> {
    build_chain_tables_with_fields(geom, table_radius, tol).map(|(t, _)| t)
}

pub fn build_chain_tables_with_fields(
    geom: &ChainGeometry,
    table_radius: f64,
    tol: f64,
) -> Result<(ChainTables, ChainFields)> {
    let dom = &geom.domain;
    let phi: Vec<f64> = geom.pair.phi.values.clone();
    let max_sweeps = 400_000;

    // μ: one confined-walk solve per exit target
    let mut mu = vec![vec![0.0; geom.n_exits()]; geom.n_entries()];
    let mut mu_fields: Vec<Vec<f64>> = Vec::with_capacity(geom.n_exits());
    for (yk, &y) in geom.exits.iter().enumerate() {
        let mut prob = DomainProblem::new(dom, phi.clone());
        for &i in &geom.delta.points {
            prob.fix(i, if i == y { 1.0 } else { 0.0 });
        }
        prob.solve(tol, max_sweeps)?;
        for (xk, &x) in geom.entries.iter().enumerate() {
            mu[xk][yk] = prob.values[x as usize];
        }
        mu_fields.push(prob.values);
    }

    // return law: one solve per entry target, harmonic off B
    let mut retb = vec![vec![0.0; geom.n_entries()]; geom.n_exits()];
    let mut ret_fields: Vec<Vec<f64>> = Vec::with_capacity(geom.n_entries());
    for (xk, &x) in geom.entries.iter().enumerate() {
        let mut prob = DomainProblem::new(dom, phi.clone());
        for i in 0..dom.len() as u32 {
            if geom.b_mask[i as usize] {
                prob.fix(i, if i == x { 1.0 } else { 0.0 });
            }
        }
        prob.solve(tol, max_sweeps)?;
        for (wk, &w) in geom.exits.iter().enumerate() {
            retb[wk][xk] = prob.values[w as usize];
        }
        ret_fields.push(prob.values);
    }

    // ν_Y entrance: continue the return fields through the first Δ-visit,
    // then average over the stationary start
    let w_total: f64 = (0..dom.len() as u32).map(|i| geom.w_weight(i)).sum();
    let mut nu_y_entry = vec![0.0; geom.n_entries()];
    for (xk, ret_field) in ret_fields.iter().enumerate() {
        let mut prob = DomainProblem::new(dom, phi.clone());
        for &i in &geom.delta.points {
            prob.fix(i, ret_field[i as usize]);
        }
        prob.solve(tol, max_sweeps)?;
        let mut acc = 0.0;
        for i in 0..dom.len() as u32 {
            acc += geom.w_weight(i) * prob.values[i as usize];
        }
        nu_y_entry[xk] = acc / w_total;
    }

    // (φ, Δ)-equilibrium: one solve, then a one-step unroll on ∂B
    let mut prob = DomainProblem::new(dom, phi.clone());
    for &i in &geom.delta.points {
        prob.fix(i, 1.0);
    }
    for i in 0..dom.len() as u32 {
        if geom.b_mask[i as usize] {
            prob.fix(i, 0.0);
        }
    }
    prob.solve(tol, max_sweeps)?;
    let cross_field = prob.values;
    let mut e_delta_w = vec![0.0; geom.n_entries()];
    let mut e_delta_paper = vec![0.0; geom.n_entries()];
    for (xk, &x) in geom.entries.iter().enumerate() {
        let mut num = 0.0;
        let mut den = 0.0;
        for &j in dom.neighbors_of(x) {
            if j == OUTSIDE {
                continue;
            }
            den += phi[j as usize];
            let val = if geom.b_mask[j as usize] {
                0.0
            } else if geom.delta.member[j as usize] {
                1.0
            } else {
                cross_field[j as usize]
            };
            num += phi[j as usize] * val;
        }
        let p_cross = if den > 0.0 { num / den } else { 0.0 };
        e_delta_w[xk] = geom.w_weight(x) * p_cross;
        e_delta_paper[xk] = phi[geom.entries[xk] as usize].powi(2) * p_cross;
    }
    let cap_delta_w: f64 = e_delta_w.iter().sum();
    let cap_delta_paper: f64 = e_delta_paper.iter().sum();
    if cap_delta_w <= 0.0 {
        return Err(Error::Geometry("(φ,Δ)-capacity vanished".into()));
    }
    let g_tilde: Vec<f64> = e_delta_w.iter().map(|v| v / cap_delta_w).collect();

    // truncated Ψ tables on the grid
    let (a_hit, esc, ebar, cap_psi_w) = build_psi_tables(geom, table_radius, tol, max_sweeps)?;

    Ok((
        ChainTables {
            mu,
            retb,
            a_hit,
            esc,
            ebar,
            e_delta_w,
            e_delta_paper,
            cap_delta_w,
            cap_delta_paper,
            cap_psi_w,
            g_tilde,
            nu_y_entry,
            table_radius,
        },
        ChainFields { mu_fields, retb_fields: ret_fields },
    ))
}

type PsiTables = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, f64);

fn psi_setup(
    geom: &ChainGeometry,
    radius: f64,
    target: Option<&Point>,
    sphere_val: f64,
) -> Result<GridProblem> {
    let center = geom.b.center.clone();
    let half = radius.ceil() as i64 + 2;
    let r2 = radius * radius;
    let b_points = geom.entries_b_points();
    let b_lookup: std::collections::HashSet<&Point> = b_points.iter().collect();
    let grid = GridBox::cube(&center, half)?;
    let mut prob = GridProblem::new(grid);
    {
        let t = geom.tilt.clone();
        prob.set_tilt(move |p| t.psi(p));
    }
    for i in 0..prob.grid.len() {
        let p = prob.grid.point(i);
        if (p.dist2(&center) as f64) > r2 {
            prob.cells[i] = Cell::Absorbing;
            prob.values[i] = sphere_val;
        } else if b_lookup.contains(&p) {
            prob.cells[i] = Cell::Absorbing;
            prob.values[i] = if Some(&p) == target { 1.0 } else { 0.0 };
        } else {
            prob.cells[i] = Cell::Active;
            prob.values[i] = 0.0;
        }
    }
    Ok(prob)
}

/// Escape solve and the truncated tilted equilibrium on B at one radius
/// (one grid solve; sufficient for samplers).
pub fn build_psi_escape(
    geom: &ChainGeometry,
    radius: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let tilt = geom.tilt.clone();
    let b_points = geom.entries_b_points();
    let b_lookup: std::collections::HashSet<&Point> = b_points.iter().collect();
    let mut esc_prob = psi_setup(geom, radius, None, 1.0)?;
    esc_prob.solve(tol, max_sweeps)?;
    let esc: Vec<f64> = geom
        .exits
        .iter()
        .map(|&w| esc_prob.value(geom.domain.point(w)).unwrap())
        .collect();

    // truncated equilibrium on B: one-step unroll of the escape field
    let mut ebar_raw = vec![0.0; geom.n_entries()];
    for (xk, x) in b_points.iter().enumerate() {
        let mut num = 0.0;
        let mut den = 0.0;
        for y in x.neighbors() {
            let w = tilt.psi(&y);
            den += w;
            let val = esc_prob.value(&y).unwrap_or(1.0);
            let val = if b_lookup.contains(&y) { 0.0 } else { val };
            num += w * val;
        }
        let p_esc = if den > 0.0 { num / den } else { 0.0 };
        ebar_raw[xk] = tilt.psi(x) * tilt.psi_bar(x) * p_esc;
    }
    let cap_psi_w: f64 = ebar_raw.iter().sum();
    if cap_psi_w <= 0.0 {
        return Err(Error::Geometry("truncated tilted capacity vanished".into()));
    }
    let ebar: Vec<f64> = ebar_raw.iter().map(|v| v / cap_psi_w).collect();
    Ok((esc, ebar, cap_psi_w))
}

fn build_psi_tables(
    geom: &ChainGeometry,
    radius: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<PsiTables> {
    let (esc, ebar, cap_psi_w) = build_psi_escape(geom, radius, tol, max_sweeps)?;
    let b_points = geom.entries_b_points();

    // per-entry hit solves: sphere → 0, B → δ_x
    let mut a_hit = vec![vec![0.0; geom.n_entries()]; geom.n_exits()];
    for (xk, x) in b_points.iter().enumerate() {
        let mut prob = psi_setup(geom, radius, Some(x), 0.0)?;
        prob.solve(tol, max_sweeps)?;
        for (wk, &w) in geom.exits.iter().enumerate() {
            a_hit[wk][xk] = prob.value(geom.domain.point(w)).unwrap();
        }
    }

    // consistency: hits + escape account for all mass (interior B points of
    // the grid absorb nothing else)
    for wk in 0..geom.n_exits() {
        let total: f64 = a_hit[wk].iter().sum::<f64>() + esc[wk];
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Geometry(format!(
                "Ψ-table mass defect {:.3e} at exit {}",
                (total - 1.0).abs(),
                wk
            )));
        }
    }
    Ok((a_hit, esc, ebar, cap_psi_w))
}

impl ChainGeometry {
    /// Entry points as lattice points (owned).
    pub fn entries_b_points(&self) -> Vec<Point> {
        self.entries.iter().map(|&i| self.domain.point(i).clone()).collect()
    }
}

/// ℓ¹ defect ‖π̃P − π̃‖₁ for the exactly-tabulated kernel of one chain.
pub enum ChainKind {
    Y,
    Z,
}

pub fn kernel_invariance_defect(tables: &ChainTables, kind: &ChainKind) -> f64 {
    let n_entry = tables.g_tilde.len();
    let n_exit = tables.esc.len();
    let m = tables.exit_marginal();
    let mut defect = 0.0;
    for x in 0..n_entry {
        let mut entry_flow = 0.0;
        for w in 0..n_exit {
            let a = match kind {
                ChainKind::Y => tables.retb[w][x],
                ChainKind::Z => tables.a_kernel(w, x),
            };
            entry_flow += m[w] * a;
        }
        for y in 0..n_exit {
            defect += (entry_flow * tables.mu[x][y] - tables.pi(x, y)).abs();
        }
    }
    defect
}

/// Row-stochasticity defect of the tabulated kernels (max over rows).
pub fn kernel_row_defect(tables: &ChainTables, kind: &ChainKind) -> f64 {
    let n_exit = tables.esc.len();
    let mut worst = 0.0f64;
    for w in 0..n_exit {
        let mut ret_total = 0.0;
        for x in 0..tables.g_tilde.len() {
            ret_total += match kind {
                ChainKind::Y => tables.retb[w][x],
                ChainKind::Z => tables.a_kernel(w, x),
            };
        }
        let mut row = 0.0;
        for x in 0..tables.g_tilde.len() {
            let a = match kind {
                ChainKind::Y => tables.retb[w][x],
                ChainKind::Z => tables.a_kernel(w, x),
            };
            let mu_sum: f64 = tables.mu[x].iter().sum();
            row += a * mu_sum;
        }
        worst = worst.max((row - 1.0).abs()).max((ret_total - 1.0).abs());
    }
    worst
}

/// Path-simulation sampler for both chains.
pub struct ChainSampler {
    pub geom: Arc<ChainGeometry>,
    phi_kernel: WalkKernel,
    psi_kernel: WalkKernel,
    b_spec: SetSpec,
    delta_spec: SetSpec,
    pub esc_radius: f64,
    pub step_budget: usize,
    /// Fresh-entry law at the sampling radius.
    pub ebar_sim: DiscreteDistribution<Point>,
    pub cap_psi_sim: f64,
}

impl ChainSampler {
    pub fn new(geom: Arc<ChainGeometry>, esc_radius: f64, tol: f64) -> Result<Self> {
        let phi_kernel = WalkKernel::phi_tilted(geom.pair.clone())?;
        let psi_kernel = WalkKernel::PsiTilted { tilt: geom.tilt.clone() };
        let b_spec = SetSpec::Ball(geom.b.clone());
        let delta_spec = SetSpec::DomainMask(
            geom.domain.clone(),
            Arc::new(geom.delta.member.clone()),
        );
        // truncated equilibrium at the sampling radius (escape solve only)
        let (_, ebar, cap) = build_psi_escape(&geom, esc_radius, tol, 400_000)?;
        let ebar_sim = DiscreteDistribution::new(geom.entries_b_points(), &ebar)?;
        let step_budget = (400.0 * esc_radius * esc_radius) as usize + 100_000;
        Ok(ChainSampler {
            geom,
            phi_kernel,
            psi_kernel,
            b_spec,
            delta_spec,
            esc_radius,
            step_budget,
            ebar_sim,
            cap_psi_sim: cap,
        })
    }

    /// Confined-walk leg from `from` to the first B-hit.
    fn phi_leg_to_b(&self, from: &Point, rng: &mut impl Rng) -> Result<Point> {
        let mut cur = from.clone();
        for _ in 0..self.step_budget {
            cur = self.phi_kernel.sample_step(&cur, rng)?;
            if self.b_spec.contains(&cur) {
                return Ok(cur);
            }
        }
        Err(Error::InvalidArgument("return leg exhausted its budget".into()))
    }

    /// Confined-walk leg from an entry to the first Δ-hit, returning the
    /// exit point and the path length.
    pub fn exit_leg(&self, from: &Point, rng: &mut impl Rng) -> Result<(Point, usize)> {
        let mut cur = from.clone();
        for step in 1..=self.step_budget {
            cur = self.phi_kernel.sample_step(&cur, rng)?;
            if self.delta_spec.contains(&cur) {
                return Ok((cur, step));
            }
        }
        Err(Error::InvalidArgument("exit leg exhausted its budget".into()))
    }

    /// Ψ-walk leg from an exit: `Ok(Some(entry))` on return to B,
    /// `Ok(None)` on escape through the truncation sphere.
    pub fn psi_return_leg(&self, from: &Point, rng: &mut impl Rng) -> Result<Option<Point>> {
        let center = &self.geom.b.center;
        let r2 = self.esc_radius * self.esc_radius;
        let mut cur = from.clone();
        for _ in 0..self.step_budget {
            cur = self.psi_kernel.sample_step(&cur, rng)?;
            if self.b_spec.contains(&cur) {
                return Ok(Some(cur));
            }
            if (cur.dist2(center) as f64) > r2 {
                return Ok(None);
            }
        }
        Err(Error::InvalidArgument("Ψ return leg exhausted its budget".into()))
    }

    /// One Y-chain step: return to B under the confined walk, then exit.
    pub fn y_chain_step(&self, state: &PairState, rng: &mut impl Rng) -> Result<PairState> {
        let entry = self.phi_leg_to_b(&state.exit, rng)?;
        let (exit, _) = self.exit_leg(&entry, rng)?;
        Ok(PairState { entry, exit })
    }

    /// One Z-chain step: Ψ-walk return or escape-and-fresh-entry, then a
    /// confined-walk exit leg. The flag reports a fresh trajectory.
    pub fn z_chain_step(&self, state: &PairState, rng: &mut impl Rng) -> Result<(PairState, bool)> {
        let (entry, fresh) = match self.psi_return_leg(&state.exit, rng)? {
            Some(p) => (p, false),
            None => (self.ebar_sim.sample(rng).clone(), true),
        };
        let (exit, _) = self.exit_leg(&entry, rng)?;
        Ok((PairState { entry, exit }, fresh))
    }

    /// ν_Y draw: stationary start, first Δ-visit, then the first excursion.
    pub fn nu_y_draw(&self, rng: &mut impl Rng) -> Result<PairState> {
        let sampler = crate::walks::StationarySampler::new(&self.geom.pair);
        let mut cur = sampler.sample(rng);
        // to the first Δ-visit (D_0), unless already there
        let mut guard = 0usize;
        while !self.delta_spec.contains(&cur) {
            cur = self.phi_kernel.sample_step(&cur, rng)?;
            guard += 1;
            if guard > self.step_budget {
                return Err(Error::InvalidArgument("ν_Y draw exhausted its budget".into()));
            }
        }
        let entry = self.phi_leg_to_b(&cur, rng)?;
        let (exit, _) = self.exit_leg(&entry, rng)?;
        Ok(PairState { entry, exit })
    }

    /// ν_Z draw: fresh tilted-equilibrium entry plus its exit leg.
    pub fn nu_z_draw(&self, rng: &mut impl Rng) -> Result<PairState> {
        let entry = self.ebar_sim.sample(rng).clone();
        let (exit, _) = self.exit_leg(&entry, rng)?;
        Ok(PairState { entry, exit })
    }

    /// Number of completed excursions N(t) of the stationary confined walk
    /// in the window [1, t], under the two-sided stationary convention:
    /// the initial phase (was the last B∪Δ visit at or before time 0 in Δ?)
    /// is drawn by running the reversed walk — the same kernel, by
    /// reversibility — from X₀ until it meets B∪Δ.
    pub fn walk_excursion_count(&self, t: usize, rng: &mut impl Rng) -> Result<usize> {
        let sampler = crate::walks::StationarySampler::new(&self.geom.pair);
        let x0 = sampler.sample(rng);
        let mut pending = if self.b_spec.contains(&x0) {
            false
        } else if self.delta_spec.contains(&x0) {
            true
        } else {
            let mut cur = x0.clone();
            loop {
                cur = self.phi_kernel.sample_step(&cur, rng)?;
                if self.b_spec.contains(&cur) {
                    break false;
                }
                if self.delta_spec.contains(&cur) {
                    break true;
                }
            }
        };
        let mut count = 0usize;
        let mut cur = x0;
        for _ in 1..=t {
            cur = self.phi_kernel.sample_step(&cur, rng)?;
            if self.b_spec.contains(&cur) {
                if pending {
                    count += 1;
                    pending = false;
                }
            } else if self.delta_spec.contains(&cur) {
                pending = true;
            }
        }
        Ok(count)
    }

    /// Expected-count prediction t·cap^{φ}_Δ(B)/‖φ‖₂² (conductance form).
    pub fn walk_count_prediction(&self, tables: &ChainTables, t: usize) -> f64 {
        let w_total: f64 =
            (0..self.geom.domain.len() as u32).map(|i| self.geom.w_weight(i)).sum();
        t as f64 * tables.cap_delta_w / w_total
    }

    /// One interlacement trajectory from the fresh-entry law: number of
    /// completed excursions.
    pub fn trajectory_excursions(&self, rng: &mut impl Rng) -> Result<usize> {
        let mut count = 0usize;
        let mut cur = self.ebar_sim.sample(rng).clone();
        loop {
            // entered B: the excursion completes at the next Δ-hit
            let (exit, _) = self.exit_leg(&cur, rng)?;
            count += 1;
            match self.psi_return_leg(&exit, rng)? {
                Some(next_entry) => cur = next_entry,
                None => return Ok(count),
            }
        }
    }

    /// N_Ψ(u): Poisson-many trajectories (labels at rate cap^{Ψ}(B)) with
    /// their excursion counts summed.
    pub fn ri_excursion_count(&self, u: f64, rng: &mut impl Rng) -> Result<usize> {
        let mut label = 0.0f64;
        let mut total = 0usize;
        loop {
            label += -(1.0 - rng.gen::<f64>()).ln() / self.cap_psi_sim;
            if label > u {
                return Ok(total);
            }
            total += self.trajectory_excursions(rng)?;
        }
    }

    /// Prediction u·λ·cap^{φ²}_Δ(B) = u·cap^{w}_Δ(B).
    pub fn ri_count_prediction(&self, tables: &ChainTables, u: f64) -> f64 {
        u * tables.cap_delta_w
    }
}

/// Empirical entrance-marginal total-variation distance against ẽ.
pub fn entrance_marginal_tv(
    geom: &ChainGeometry,
    tables: &ChainTables,
    states: &[PairState],
) -> f64 {
    let mut counts = vec![0usize; geom.n_entries()];
    let mut used = 0usize;
    for s in states {
        if let Some(&i) = geom.domain.idx(&s.entry).as_ref().and_then(|i| geom.entry_pos.get(i)) {
            counts[i] += 1;
            used += 1;
        }
    }
    if used == 0 {
        return 1.0;
    }
    0.5 * counts
        .iter()
        .zip(&tables.g_tilde)
        .map(|(c, g)| (*c as f64 / used as f64 - g).abs())
        .sum::<f64>()
}

// ---------------------------------------------------------------------------
// mixing couplings
// ---------------------------------------------------------------------------

/// Per-run outcome of a coalescing-coupling trial.
pub struct CouplingTrace {
    pub coalesced_at: Option<usize>,
    /// Transition samples (state, next) of the first copy, for marginal
    /// faithfulness tests.
    pub copy_transitions: Vec<(usize, usize)>,
}

pub struct MixingReport {
    pub trials: usize,
    pub budget: usize,
    pub coalesce_quantiles: (usize, usize, usize), // 50/90/99 percentiles
    /// First k with empirical non-coalescence frequency ≤ 1/4.
    pub tmix_bound: Option<usize>,
    pub failures: usize,
    /// Per-step coupling parameters actually used.
    pub p_step: f64,
}

/// Test hooks forcing the coupling coins.
#[derive(Clone, Copy, Default)]
pub struct CouplingHooks {
    pub force_xi1: Option<bool>,
    pub force_xi2: Option<bool>,
    /// Overrides the Z-coupling escape coin parameter.
    pub p_n_override: Option<f64>,
}

/// Internals for the Y-coupling on the half-radius ball G.
pub struct YCouplingTables {
    /// c_G = inf over entries of P^N_x(H_G < H_Δ).
    pub c_g: f64,
    /// exit rows from entries (μ) and the through-G decomposition
    pub through_rows: Vec<Vec<f64>>,
    pub residual_rows: Vec<Vec<f64>>,
    /// shared sub-probability exit law and its mass
    pub mu_floor: Vec<f64>,
    pub c_mu: f64,
    /// residual exit rows per ∂G point
    pub g_residual_rows: Vec<Vec<f64>>,
    /// conditioned hitting-point law of G per entry
    pub hitg_rows: Vec<Vec<f64>>,
    pub g_points: Vec<u32>,
}

pub fn build_y_coupling_tables(
    geom: &ChainGeometry,
    tables: &ChainTables,
    tol: f64,
) -> Result<YCouplingTables> {
    let dom = &geom.domain;
    let phi: Vec<f64> = geom.pair.phi.values.clone();
    let max_sweeps = 400_000;
    let g_ball = BallRegion::new(geom.b.center.clone(), geom.alpha * dom.n as f64 / 2.0)?;
    let g_idx: Vec<u32> = g_ball.indices_in(dom);
    if g_idx.is_empty() {
        return Err(Error::Geometry("half-radius ball G is empty".into()));
    }
    let g_mask: Vec<bool> = {
        let mut m = vec![false; dom.len()];
        for &i in &g_idx {
            m[i as usize] = true;
        }
        m
    };
    let g_boundary: Vec<u32> = g_idx
        .iter()
        .copied()
        .filter(|&i| {
            dom.point(i)
                .neighbors()
                .any(|q| dom.idx(&q).map(|j| !g_mask[j as usize]).unwrap_or(true))
        })
        .collect();

    // P(H_G < H_Δ) field
    let mut prob = DomainProblem::new(dom, phi.clone());
    for &i in &g_idx {
        prob.fix(i, 1.0);
    }
    for &i in &geom.delta.points {
        prob.fix(i, 0.0);
    }
    prob.solve(tol, max_sweeps)?;
    let reach_g = prob.values;
    let c_g = geom
        .entries
        .iter()
        .map(|&x| reach_g[x as usize])
        .fold(f64::INFINITY, f64::min);
    if c_g <= 0.0 {
        return Err(Error::Geometry("G unreachable before Δ from some entry".into()));
    }

    // hitting-point law of G conditioned on {H_G < H_Δ}: per ∂G target
    let mut hitg_cols: Vec<Vec<f64>> = Vec::new();
    for &u in &g_boundary {
        let mut p = DomainProblem::new(dom, phi.clone());
        for &i in &g_idx {
            p.fix(i, if i == u { 1.0 } else { 0.0 });
        }
        for &i in &geom.delta.points {
            p.fix(i, 0.0);
        }
        p.solve(tol, max_sweeps)?;
        hitg_cols.push(p.values);
    }
    let mut hitg_rows = vec![vec![0.0; g_boundary.len()]; geom.n_entries()];
    for (xk, &x) in geom.entries.iter().enumerate() {
        for (uk, col) in hitg_cols.iter().enumerate() {
            hitg_rows[xk][uk] = col[x as usize] / reach_g[x as usize];
        }
    }

    // exit rows from ∂G points (μ-solve fields restricted), the floor
    // measure μ_N(y) = inf over ∂G, and the per-point residuals
    let mut g_exit_rows = vec![vec![0.0; geom.n_exits()]; g_boundary.len()];
    for (yk, &y) in geom.exits.iter().enumerate() {
        let mut p = DomainProblem::new(dom, phi.clone());
        for &i in &geom.delta.points {
            p.fix(i, if i == y { 1.0 } else { 0.0 });
        }
        p.solve(tol, max_sweeps)?;
        for (uk, &u) in g_boundary.iter().enumerate() {
            g_exit_rows[uk][yk] = p.values[u as usize];
        }
    }
    let mut mu_floor = vec![0.0; geom.n_exits()];
    for yk in 0..geom.n_exits() {
        mu_floor[yk] = g_exit_rows.iter().map(|r| r[yk]).fold(f64::INFINITY, f64::min);
    }
    let c_mu: f64 = mu_floor.iter().sum();
    if c_mu <= 1e-9 {
        return Err(Error::Geometry(
            "shared exit mass μ_N(∂Δ) vanished: geometry misconfigured".into(),
        ));
    }
    let g_residual_rows: Vec<Vec<f64>> = g_exit_rows
        .iter()
        .map(|row| {
            row.iter()
                .zip(&mu_floor)
                .map(|(r, f)| (r - f).max(0.0) / (1.0 - c_mu))
                .collect()
        })
        .collect();

    // through-G exit law per entry and the ξ¹ = 0 residual rows
    let mut through_rows = vec![vec![0.0; geom.n_exits()]; geom.n_entries()];
    let mut residual_rows = vec![vec![0.0; geom.n_exits()]; geom.n_entries()];
    for xk in 0..geom.n_entries() {
        for (uk, w_u) in hitg_rows[xk].iter().enumerate() {
            for yk in 0..geom.n_exits() {
                through_rows[xk][yk] += w_u * g_exit_rows[uk][yk];
            }
        }
        for yk in 0..geom.n_exits() {
            let full = tables.mu[xk][yk];
            residual_rows[xk][yk] = (full - c_g * through_rows[xk][yk]).max(0.0) / (1.0 - c_g);
        }
    }

    Ok(YCouplingTables {
        c_g,
        through_rows,
        residual_rows,
        mu_floor,
        c_mu,
        g_residual_rows,
        hitg_rows,
        g_points: g_boundary,
    })
}

fn quantiles(sorted: &[usize]) -> (usize, usize, usize) {
    let q = |f: f64| sorted[((sorted.len() - 1) as f64 * f) as usize];
    (q(0.5), q(0.9), q(0.99))
}

fn sample_row(row: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = row.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (k, w) in row.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return k;
        }
    }
    row.len() - 1
}

/// Coalescing coupling for Y per the half-radius-ball construction, table
/// driven. Marginals stay exactly faithful: the ξ¹ split uses the uniform
/// lower bound c_G with the complementary residual law.
pub fn mixing_estimate_y(
    geom: &ChainGeometry,
    tables: &ChainTables,
    yc: &YCouplingTables,
    trials: usize,
    budget: usize,
    hooks: CouplingHooks,
    rng: &mut impl Rng,
) -> Result<MixingReport> {
    let n_exit = geom.n_exits();
    let mut coalesce_steps = Vec::with_capacity(trials);
    let mut failures = 0usize;
    for _ in 0..trials {
        // adversarial-ish distinct starts: uniform random entries
        let mut a = rng.gen_range(0..geom.n_entries());
        let mut bb = rng.gen_range(0..geom.n_entries());
        let mut coalesced_entry = a == bb;
        let mut done_at = None;
        for step in 1..=budget {
            if coalesced_entry {
                done_at = Some(step - 1);
                break;
            }
            let xi1 = hooks.force_xi1.unwrap_or_else(|| rng.gen::<f64>() < yc.c_g);
            let (exit_a, exit_b);
            if xi1 {
                let xi2 = hooks.force_xi2.unwrap_or_else(|| rng.gen::<f64>() < yc.c_mu);
                let u_a = sample_row(&yc.hitg_rows[a], rng);
                let u_b = sample_row(&yc.hitg_rows[bb], rng);
                if xi2 {
                    let shared = sample_row(&yc.mu_floor, rng);
                    exit_a = shared;
                    exit_b = shared;
                } else {
                    exit_a = sample_row(&yc.g_residual_rows[u_a], rng);
                    exit_b = sample_row(&yc.g_residual_rows[u_b], rng);
                }
            } else {
                exit_a = sample_row(&yc.residual_rows[a], rng);
                exit_b = sample_row(&yc.residual_rows[bb], rng);
            }
            if exit_a == exit_b {
                // shared exit forces shared return
                let next = sample_row(&tables.retb[exit_a], rng);
                a = next;
                bb = next;
                coalesced_entry = true;
            } else {
                a = sample_row(&tables.retb[exit_a], rng);
                bb = sample_row(&tables.retb[exit_b], rng);
                coalesced_entry = a == bb;
            }
            let _ = n_exit;
        }
        match done_at {
            Some(s) => coalesce_steps.push(s),
            None => {
                if coalesced_entry {
                    coalesce_steps.push(budget);
                } else {
                    failures += 1;
                }
            }
        }
    }
    coalesce_steps.sort_unstable();
    let tmix = tmix_from_steps(&coalesce_steps, trials, budget);
    Ok(MixingReport {
        trials,
        budget,
        coalesce_quantiles: if coalesce_steps.is_empty() {
            (budget, budget, budget)
        } else {
            quantiles(&coalesce_steps)
        },
        tmix_bound: tmix,
        failures,
        p_step: yc.c_g * yc.c_mu,
    })
}

fn tmix_from_steps(sorted_steps: &[usize], trials: usize, budget: usize) -> Option<usize> {
    // first k with P(not coalesced by k) ≤ 1/4
    for k in 0..=budget {
        let coalesced = sorted_steps.partition_point(|&s| s <= k);
        if (trials - coalesced) as f64 / trials as f64 <= 0.25 {
            return Some(k);
        }
    }
    None
}

/// Coalescing coupling for Z: a shared escape coin per step; on success
/// both copies take the same fresh tilted-equilibrium entry.
pub fn mixing_estimate_z(
    geom: &ChainGeometry,
    tables: &ChainTables,
    trials: usize,
    budget: usize,
    hooks: CouplingHooks,
    rng: &mut impl Rng,
) -> Result<MixingReport> {
    let p_n = match hooks.p_n_override {
        Some(p) => p,
        None => tables.esc.iter().copied().fold(f64::INFINITY, f64::min),
    };
    if p_n <= 0.0 {
        return Err(Error::Geometry("escape coin parameter vanished".into()));
    }
    // residual entry law per exit: (1−p_N)ν_w(x) = hit_w(x) + (esc_w − p_N)ē(x)
    let n_entries = geom.n_entries();
    let degenerate = p_n >= 1.0 - 1e-12;
    let mut residual = vec![vec![0.0; n_entries]; geom.n_exits()];
    for w in 0..geom.n_exits() {
        if degenerate {
            continue; // forced coin: every step coalesces, no residual drawn
        }
        if tables.esc[w] < p_n - 1e-12 {
            return Err(Error::Geometry(format!(
                "residual law negative at exit {w}: escape {} < p_N {}",
                tables.esc[w], p_n
            )));
        }
        for x in 0..n_entries {
            residual[w][x] =
                (tables.a_hit[w][x] + (tables.esc[w] - p_n) * tables.ebar[x]) / (1.0 - p_n);
        }
        let s: f64 = residual[w].iter().sum();
        if (s - 1.0).abs() > 1e-8 {
            return Err(Error::Geometry(format!("residual row {w} sums to {s}")));
        }
    }
    let mut coalesce_steps = Vec::with_capacity(trials);
    let mut failures = 0usize;
    for _ in 0..trials {
        let mut a = PairIdx {
            exit: rng.gen_range(0..geom.n_exits()),
        };
        let mut b = PairIdx {
            exit: rng.gen_range(0..geom.n_exits()),
        };
        let mut done_at = None;
        let mut coalesced = false;
        for step in 1..=budget {
            if coalesced {
                done_at = Some(step - 1);
                break;
            }
            let xi = rng.gen::<f64>() < p_n;
            if xi {
                let entry = sample_row(&tables.ebar, rng);
                let exit = sample_row(&tables.mu[entry], rng);
                a.exit = exit;
                b.exit = exit;
                coalesced = true;
            } else {
                let ea = sample_row(&residual[a.exit], rng);
                let eb = sample_row(&residual[b.exit], rng);
                a.exit = sample_row(&tables.mu[ea], rng);
                b.exit = sample_row(&tables.mu[eb], rng);
                coalesced = a.exit == b.exit;
            }
        }
        match done_at {
            Some(s) => coalesce_steps.push(s),
            None => {
                if coalesced {
                    coalesce_steps.push(budget);
                } else {
                    failures += 1;
                }
            }
        }
    }
    coalesce_steps.sort_unstable();
    let tmix = tmix_from_steps(&coalesce_steps, trials, budget);
    Ok(MixingReport {
        trials,
        budget,
        coalesce_quantiles: if coalesce_steps.is_empty() {
            (budget, budget, budget)
        } else {
            quantiles(&coalesce_steps)
        },
        tmix_bound: tmix,
        failures,
        p_step: p_n,
    })
}

struct PairIdx {
    exit: usize,
}

/// Marginal faithfulness: run one coupled copy of the Y coupling, collect
/// its entry-to-entry transitions, and χ²-test them against the exact
/// entry kernel q(x→x') = Σ_y μ(x,y)·retb[y][x'].
pub fn y_coupling_marginal_chi2(
    geom: &ChainGeometry,
    tables: &ChainTables,
    yc: &YCouplingTables,
    steps: usize,
    rng: &mut impl Rng,
) -> Result<(f64, usize)> {
    // exact entry kernel
    let ne = geom.n_entries();
    let mut q = vec![vec![0.0; ne]; ne];
    for x in 0..ne {
        for (yk, muxy) in tables.mu[x].iter().enumerate() {
            for xp in 0..ne {
                q[x][xp] += muxy * tables.retb[yk][xp];
            }
        }
    }
    // coupled-copy simulation (the partner copy runs too, marginal must
    // not care)
    let mut counts = vec![vec![0usize; ne]; ne];
    let mut a = 0usize;
    let mut b = ne / 2;
    for _ in 0..steps {
        let xi1 = rng.gen::<f64>() < yc.c_g;
        let (exit_a, exit_b);
        if xi1 {
            let xi2 = rng.gen::<f64>() < yc.c_mu;
            let u_a = sample_row(&yc.hitg_rows[a], rng);
            let u_b = sample_row(&yc.hitg_rows[b], rng);
            if xi2 {
                let shared = sample_row(&yc.mu_floor, rng);
                exit_a = shared;
                exit_b = shared;
            } else {
                exit_a = sample_row(&yc.g_residual_rows[u_a], rng);
                exit_b = sample_row(&yc.g_residual_rows[u_b], rng);
            }
        } else {
            exit_a = sample_row(&yc.residual_rows[a], rng);
            exit_b = sample_row(&yc.residual_rows[b], rng);
        }
        let next_a = sample_row(&tables.retb[exit_a], rng);
        let next_b = sample_row(&tables.retb[exit_b], rng);
        counts[a][next_a] += 1;
        a = next_a;
        b = next_b;
    }
    // χ² over cells with enough expected mass
    let mut chi2 = 0.0;
    let mut dof = 0usize;
    let row_totals: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
    for x in 0..ne {
        if row_totals[x] == 0 {
            continue;
        }
        for xp in 0..ne {
            let expect = q[x][xp] * row_totals[x] as f64;
            if expect >= 5.0 {
                chi2 += (counts[x][xp] as f64 - expect).powi(2) / expect;
                dof += 1;
            }
        }
    }
    Ok((chi2, dof.saturating_sub(1)))
}

/// Marginal faithfulness of the Z coupling: exit-to-exit transitions of one
/// coupled copy against the exact kernel q(w→w') = Σ_x A_w(x)·μ(x,w').
pub fn z_coupling_marginal_chi2(
    geom: &ChainGeometry,
    tables: &ChainTables,
    steps: usize,
    rng: &mut impl Rng,
) -> Result<(f64, usize)> {
    let nx = geom.n_exits();
    let ne = geom.n_entries();
    let p_n = tables.esc.iter().copied().fold(f64::INFINITY, f64::min);
    let mut residual = vec![vec![0.0; ne]; nx];
    for w in 0..nx {
        for x in 0..ne {
            residual[w][x] =
                (tables.a_hit[w][x] + (tables.esc[w] - p_n) * tables.ebar[x]) / (1.0 - p_n);
        }
    }
    let mut q = vec![vec![0.0; nx]; nx];
    for w in 0..nx {
        for x in 0..ne {
            let a = tables.a_kernel(w, x);
            for wp in 0..nx {
                q[w][wp] += a * tables.mu[x][wp];
            }
        }
    }
    let mut counts = vec![vec![0usize; nx]; nx];
    let mut a_exit = 0usize;
    let mut b_exit = nx / 2;
    for _ in 0..steps {
        let xi = rng.gen::<f64>() < p_n;
        let (na, nb);
        if xi {
            let entry = sample_row(&tables.ebar, rng);
            let e = sample_row(&tables.mu[entry], rng);
            na = e;
            nb = e;
        } else {
            let ea = sample_row(&residual[a_exit], rng);
            let eb = sample_row(&residual[b_exit], rng);
            na = sample_row(&tables.mu[ea], rng);
            nb = sample_row(&tables.mu[eb], rng);
        }
        counts[a_exit][na] += 1;
        a_exit = na;
        b_exit = nb;
    }
    let mut chi2 = 0.0;
    let mut dof = 0usize;
    for w in 0..nx {
        let total: usize = counts[w].iter().sum();
        if total == 0 {
            continue;
        }
        for wp in 0..nx {
            let expect = q[w][wp] * total as f64;
            if expect >= 5.0 {
                chi2 += (counts[w][wp] as f64 - expect).powi(2) / expect;
                dof += 1;
            }
        }
    }
    Ok((chi2, dof.saturating_sub(1)))
}

// ---------------------------------------------------------------------------
// soft-local-times inputs
// ---------------------------------------------------------------------------

pub struct SltInputs {
    /// Floored, row-renormalized reference measure μ′ over Σ (row per entry).
    pub mu_ref: Vec<Vec<f64>>,
    pub floored_cells: usize,
    /// g(x,y) = π̃(x,y)/μ′(x,y).
    pub g: Vec<Vec<f64>>,
    /// ρ tables depend only on the target entry x and the source exit w.
    pub rho_y: Vec<Vec<f64>>,
    pub rho_z: Vec<Vec<f64>>,
    /// Var_{π̃}(ρ_{(x,·)}) per target entry, for both chains.
    pub var_y: Vec<f64>,
    pub var_z: Vec<f64>,
    pub sup_y: Vec<f64>,
    pub sup_z: Vec<f64>,
    /// Scaled diagnostics N^{γ(d−1)}‖ρ‖_∞ and N^{(1+γ)(d−1)}·Var.
    pub sup_scaled: f64,
    pub var_scaled: f64,
}

pub fn slt_inputs(geom: &ChainGeometry, tables: &ChainTables, eta_mu: f64) -> SltInputs {
    let ne = geom.n_entries();
    let nx = geom.n_exits();
    let mut mu_ref = vec![vec![0.0; nx]; ne];
    let mut floored = 0usize;
    for x in 0..ne {
        let mut row: Vec<f64> = tables.mu[x].clone();
        for v in row.iter_mut() {
            if *v < eta_mu {
                *v = eta_mu;
                floored += 1;
            }
        }
        let s: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= s;
        }
        mu_ref[x] = row;
    }
    let m = tables.exit_marginal();
    let mut g = vec![vec![0.0; nx]; ne];
    for x in 0..ne {
        for y in 0..nx {
            g[x][y] = tables.pi(x, y) / mu_ref[x][y];
        }
    }
    // ρ tables (per target entry x, source exit w), with the μ→μ′ ratio
    // folded per target cell ≈ 1 away from floored cells
    let rho_y = transpose(&tables.retb, nx, ne);
    let mut rho_z = vec![vec![0.0; nx]; ne];
    for x in 0..ne {
        for w in 0..nx {
            rho_z[x][w] = tables.a_kernel(w, x);
        }
    }
    let var_of = |rho: &Vec<Vec<f64>>| -> (Vec<f64>, Vec<f64>) {
        let mut vars = vec![0.0; ne];
        let mut sups = vec![0.0; ne];
        for x in 0..ne {
            let mut mean = 0.0;
            let mut second = 0.0;
            let mut sup = 0.0f64;
            for w in 0..nx {
                let v = rho[x][w];
                mean += m[w] * v;
                second += m[w] * v * v;
                sup = sup.max(v);
            }
            vars[x] = (second - mean * mean).max(0.0);
            sups[x] = sup;
        }
        (vars, sups)
    };
    let (var_y, sup_y) = var_of(&rho_y);
    let (var_z, sup_z) = var_of(&rho_z);
    let n = geom.domain.n as f64;
    let d = geom.domain.dim as f64;
    let sup_all = sup_y.iter().chain(&sup_z).copied().fold(0.0f64, f64::max);
    let var_all = var_y.iter().chain(&var_z).copied().fold(0.0f64, f64::max);
    SltInputs {
        mu_ref,
        floored_cells: floored,
        g,
        rho_y,
        rho_z,
        var_y,
        var_z,
        sup_y,
        sup_z,
        sup_scaled: n.powf(geom.gamma * (d - 1.0)) * sup_all,
        var_scaled: n.powf((1.0 + geom.gamma) * (d - 1.0)) * var_all,
    }
}

fn transpose(rows: &[Vec<f64>], n_rows: usize, n_cols: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; n_rows]; n_cols];
    for (w, row) in rows.iter().enumerate().take(n_rows) {
        for (x, v) in row.iter().enumerate().take(n_cols) {
            out[x][w] = *v;
        }
    }
    out
}

/// Coupling-theorem constants evaluated on the real Σ tables: k(ε), the
/// RHS of the ε-condition, and whether ε satisfies it. ρ depends only on
/// the target entry, so per-state quantities collapse to per-entry ones.
pub struct SigmaConstants {
    pub k_eps: f64,
    pub eps_condition_rhs: f64,
    pub eps_ok: bool,
    pub pi_star: f64,
}

pub fn sigma_theorem_constants(
    geom: &ChainGeometry,
    tables: &ChainTables,
    inputs: &SltInputs,
    eps: f64,
) -> SigmaConstants {
    let mut pi_star = f64::INFINITY;
    for x in 0..geom.n_entries() {
        for y in 0..geom.n_exits() {
            let p = tables.pi(x, y);
            if p > 0.0 {
                pi_star = pi_star.min(p);
            }
        }
    }
    let mut k_eps = f64::NEG_INFINITY;
    let mut rhs = f64::INFINITY;
    for x in 0..geom.n_entries() {
        for y in 0..geom.n_exits() {
            let g = inputs.g[x][y];
            if g <= 0.0 {
                continue;
            }
            for (var, sup) in [
                (inputs.var_y[x], inputs.sup_y[x]),
                (inputs.var_z[x], inputs.sup_z[x]),
            ] {
                if var <= 0.0 {
                    continue;
                }
                let inner = pi_star * eps * eps * g * g / (6.0 * var);
                k_eps = k_eps.max(-inner.log2());
                if sup > 0.0 {
                    rhs = rhs.min(var / (2.0 * sup * g));
                }
            }
        }
    }
    SigmaConstants { k_eps, eps_condition_rhs: rhs, eps_ok: eps > 0.0 && eps < rhs, pi_star }
}

pub struct MarginalBoundsRow {
    pub n: u32,
    /// extremes of N^{d−1}·ẽ(x).
    pub entry_scaled_min: f64,
    pub entry_scaled_max: f64,
    /// extremes of N^{d−1}·π̃(∂B×{y}).
    pub exit_scaled_min: f64,
    pub exit_scaled_max: f64,
    /// cap^{φ}_Δ(B)/N^{d−1−γ}.
    pub cap_scaled: f64,
}

pub fn marginal_bounds_row(geom: &ChainGeometry, tables: &ChainTables) -> MarginalBoundsRow {
    let n = geom.domain.n;
    let d = geom.domain.dim as f64;
    let nf = n as f64;
    let s = nf.powf(d - 1.0);
    let m = tables.exit_marginal();
    MarginalBoundsRow {
        n,
        entry_scaled_min: tables.g_tilde.iter().copied().fold(f64::INFINITY, f64::min) * s,
        entry_scaled_max: tables.g_tilde.iter().copied().fold(0.0, f64::max) * s,
        exit_scaled_min: m.iter().copied().fold(f64::INFINITY, f64::min) * s,
        exit_scaled_max: m.iter().copied().fold(0.0, f64::max) * s,
        cap_scaled: tables.cap_delta_paper / nf.powf(d - 1.0 - geom.gamma),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{discretize, Shape};
    use crate::spectrum::{build_killed_kernel, principal_eigenpair};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn geometry(n: u32) -> Arc<ChainGeometry> {
        let dom = Arc::new(discretize(&Shape::unit_ball(3), n, &[0.0; 3]).unwrap());
        let kernel = build_killed_kernel(dom).unwrap();
        let pair = Arc::new(principal_eigenpair(&kernel, 1e-12, 500_000).unwrap());
        Arc::new(build_chain_geometry(pair, 0.2, 0.375, 0.3).unwrap())
    }

    #[test]
    fn geometry_is_collar_exact_at_desk_scale() {
        let g = geometry(8);
        assert!(g.collar_exact);
        assert!(!g.entries.is_empty());
        assert!(!g.exits.is_empty());
    }

    #[test]
    fn tables_are_stochastic_and_pi_is_invariant() {
        let g = geometry(8);
        let tables = build_chain_tables(&g, 24.0, 1e-13).unwrap();
        assert!(kernel_row_defect(&tables, &ChainKind::Y) < 1e-9);
        assert!(kernel_row_defect(&tables, &ChainKind::Z) < 1e-9);
        let dy = kernel_invariance_defect(&tables, &ChainKind::Y);
        let dz = kernel_invariance_defect(&tables, &ChainKind::Z);
        assert!(dy <= 1e-8, "Y invariance defect {dy:.3e}");
        assert!(dz <= 1e-8, "Z invariance defect {dz:.3e}");
        // ν distributions sum to one
        let s: f64 = tables.nu_y_entry.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        let e: f64 = tables.ebar.iter().sum();
        assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_y_kernel_matches_tables_on_tiny_domain() {
        let g = geometry(6);
        let tables = build_chain_tables(&g, 20.0, 1e-13).unwrap();
        let sampler = ChainSampler::new(g.clone(), 30.0, 1e-10).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        // empirical exit frequencies from a fixed entry against μ row
        let entry = g.entry_point(0).clone();
        let trials = 40_000;
        let mut counts = vec![0usize; g.n_exits()];
        for _ in 0..trials {
            let (exit, _) = sampler.exit_leg(&entry, &mut rng).unwrap();
            let j = g.exit_pos[&g.domain.idx(&exit).unwrap()];
            counts[j] += 1;
        }
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut chi2 = 0.0;
        let mut dof = 0usize;
        for (j, c) in counts.iter().enumerate() {
            let expect = tables.mu[0][j] * trials as f64;
            if expect >= 5.0 {
                chi2 += (*c as f64 - expect).powi(2) / expect;
                dof += 1;
            }
        }
        let crit = ChiSquared::new((dof - 1) as f64).unwrap().inverse_cdf(0.999);
        assert!(chi2 < crit, "chi2 {chi2} ≥ {crit} (dof {dof})");
    }

    #[test]
    fn z_chain_hooks_degenerate_cases() {
        let g = geometry(6);
        let tables = build_chain_tables(&g, 20.0, 1e-12).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        // p_N forced to 1: coalescence at step 1 in every trial
        let rep = mixing_estimate_z(
            &g,
            &tables,
            200,
            50,
            CouplingHooks { p_n_override: Some(1.0), ..Default::default() },
            &mut rng,
        )
        .unwrap();
        assert_eq!(rep.failures, 0);
        assert_eq!(rep.coalesce_quantiles.2, 1);
        // p_N above the true minimum escape: negative residual detected
        let too_big = tables.esc.iter().copied().fold(f64::INFINITY, f64::min) + 0.05;
        assert!(mixing_estimate_z(
            &g,
            &tables,
            10,
            10,
            CouplingHooks { p_n_override: Some(too_big), ..Default::default() },
            &mut rng,
        )
        .is_err());
    }

    #[test]
    fn y_coupling_forced_coins_coalesce_first_step() {
        let g = geometry(6);
        let tables = build_chain_tables(&g, 20.0, 1e-12).unwrap();
        let yc = build_y_coupling_tables(&g, &tables, 1e-12).unwrap();
        assert!(yc.c_g > 0.0 && yc.c_g <= 1.0);
        assert!(yc.c_mu > 0.01, "shared exit mass too small: {}", yc.c_mu);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let rep = mixing_estimate_y(
            &g,
            &tables,
            &yc,
            200,
            50,
            CouplingHooks { force_xi1: Some(true), force_xi2: Some(true), ..Default::default() },
            &mut rng,
        )
        .unwrap();
        assert_eq!(rep.failures, 0);
        assert!(rep.coalesce_quantiles.2 <= 1);
    }

    #[test]
    fn excursion_count_mean_matches_identity() {
        let g = geometry(6);
        let tables = build_chain_tables(&g, 20.0, 1e-12).unwrap();
        let sampler = ChainSampler::new(g.clone(), 30.0, 1e-10).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1234);
        let t = 400usize;
        let trials = 600usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..trials {
            let c = sampler.walk_excursion_count(t, &mut rng).unwrap() as f64;
            sum += c;
            sumsq += c * c;
        }
        let mean = sum / trials as f64;
        let var = (sumsq / trials as f64 - mean * mean).max(0.0);
        let se = (var / trials as f64).sqrt();
        let prediction = sampler.walk_count_prediction(&tables, t);
        assert!(
            (mean - prediction).abs() <= 3.0 * se,
            "mean {mean} vs prediction {prediction} (se {se})"
        );
    }

    #[test]
    fn ri_count_zero_at_level_zero_and_mean_matches() {
        let g = geometry(6);
        let tables = build_chain_tables(&g, 20.0, 1e-12).unwrap();
        let sampler = ChainSampler::new(g.clone(), 30.0, 1e-10).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        assert_eq!(sampler.ri_excursion_count(0.0, &mut rng).unwrap(), 0);
        let u = 0.5;
        let trials = 800usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..trials {
            let c = sampler.ri_excursion_count(u, &mut rng).unwrap() as f64;
            sum += c;
            sumsq += c * c;
        }
        let mean = sum / trials as f64;
        let var = (sumsq / trials as f64 - mean * mean).max(0.0);
        let se = (var / trials as f64).sqrt();
        // prediction uses the sampling-radius capacity for the Poisson rate
        // and the table capacity for the per-trajectory mean; both forms are
        // within the truncation difference, folded into the tolerance
        let prediction = sampler.ri_count_prediction(&tables, u);
        assert!(
            (mean - prediction).abs() <= 3.0 * se + 0.05 * prediction,
            "mean {mean} vs prediction {prediction} (se {se})"
        );
    }

    #[test]
    fn count_concentration_improves_with_horizon() {
        // relative variance of N(t) decreases as t grows
        let g = geometry(6);
        let sampler = ChainSampler::new(g.clone(), 30.0, 1e-10).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let mut rel_var = Vec::new();
        for &t in &[200usize, 800, 3200] {
            let runs = 250;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..runs {
                let c = sampler.walk_excursion_count(t, &mut rng).unwrap() as f64;
                sum += c;
                sumsq += c * c;
            }
            let mean = sum / runs as f64;
            let var = (sumsq / runs as f64 - mean * mean).max(0.0);
            rel_var.push(var / (mean * mean));
        }
        assert!(
            rel_var[2] < rel_var[0],
            "relative variance should shrink: {:?}",
            rel_var
        );
    }

    #[test]
    fn slt_inputs_shapes_and_bhatia_davis() {
        let g = geometry(6);
        let tables = build_chain_tables(&g, 20.0, 1e-12).unwrap();
        let inputs = slt_inputs(&g, &tables, 1e-9);
        let m = tables.exit_marginal();
        for x in 0..g.n_entries() {
            // crude bound Var ≤ sup·mean
            let mean_y: f64 =
                (0..g.n_exits()).map(|w| m[w] * inputs.rho_y[x][w]).sum();
            assert!(inputs.var_y[x] <= inputs.sup_y[x] * mean_y + 1e-12);
            let mean_z: f64 =
                (0..g.n_exits()).map(|w| m[w] * inputs.rho_z[x][w]).sum();
            assert!(inputs.var_z[x] <= inputs.sup_z[x] * mean_z + 1e-12);
        }
        assert!(inputs.sup_scaled.is_finite() && inputs.var_scaled.is_finite());
    }
}
