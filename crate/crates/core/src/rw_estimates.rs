//! Standalone simple-random-walk estimate checks: gambler's ruin crossing
//! probabilities against the |x|^{2−d} formula, exit-time tails, confinement
//! decay constants, and the tilted-vs-plain probability bracket.

use crate::lattice::Point;
use crate::solver::{Cell, GridBox, GridProblem};
use crate::spectrum::EigenPair;
use crate::walks::{LogWeight, WalkKernel};
use crate::{Error, Result};
use rand::Rng;
use serde::Serialize;
use std::sync::Arc;

/// A named measured-vs-predicted report row. Every measured value carries
/// an uncertainty (standard error or deterministic bracket half-width).
#[derive(Serialize, Clone, Debug)]
pub struct EstimateReport {
    pub name: String,
    pub params: Vec<(String, f64)>,
    pub measured: Vec<(String, f64, f64)>,
    pub predicted: Vec<(String, f64)>,
    pub scaled: Vec<(String, f64)>,
    pub flags: Vec<String>,
}

impl EstimateReport {
    pub fn new(name: &str) -> Self {
        EstimateReport {
            name: name.to_string(),
            params: Vec::new(),
            measured: Vec::new(),
            predicted: Vec::new(),
            scaled: Vec::new(),
            flags: Vec::new(),
        }
    }
}

/// Closed-form crossing probability from the classical one-dimensional
/// reduction: P_x(H_B < H̄_{∂B^ε}) = (|x|^{2−d} − R^{2−d}) / (r^{2−d} − R^{2−d})
/// with r = αN, R = (α+ε)N.
pub fn gambler_formula_inward(dist: f64, r: f64, big_r: f64, d: usize) -> f64 {
    let e = 2.0 - d as f64;
    ((dist.powf(e) - big_r.powf(e)) / (r.powf(e) - big_r.powf(e))).clamp(0.0, 1.0)
}

/// Harmonic solve of the annulus crossing problem: probability of reaching
/// the outer shell {|x| ≥ R} before the ball {|x| ≤ r}, evaluated per point.
pub struct AnnulusCross {
    grid: GridBox,
    values: Vec<f64>,
    pub r: f64,
    pub big_r: f64,
}

impl AnnulusCross {
    pub fn new(dim: usize, r: f64, big_r: f64, tol: f64) -> Result<Self> {
        if !(0.0 < r && r < big_r) {
            return Err(Error::InvalidArgument("need 0 < r < R".into()));
        }
        let half = big_r.ceil() as i64 + 2;
        let grid = GridBox::cube(&Point::zero(dim), half)?;
        let mut prob = GridProblem::new(grid);
        let center = Point::zero(dim);
        for i in 0..prob.grid.len() {
            let p = prob.grid.point(i);
            let d2 = p.dist2(&center) as f64;
            if d2 >= big_r * big_r {
                prob.cells[i] = Cell::Absorbing;
                prob.values[i] = 1.0;
            } else if d2 <= r * r {
                prob.cells[i] = Cell::Absorbing;
                prob.values[i] = 0.0;
            } else {
                prob.cells[i] = Cell::Active;
                prob.values[i] = 0.5;
            }
        }
        prob.solve(tol, 400_000)?;
        Ok(AnnulusCross { values: prob.values, grid: prob.grid, r, big_r })
    }

    /// P_z(outer before ball) for z in the open annulus; for z inside the
    /// ball the first-return convention is applied by a one-step unroll.
    pub fn outward(&self, z: &Point) -> f64 {
        let center = Point::zero(z.dim());
        let d2 = z.dist2(&center) as f64;
        if d2 > self.r * self.r {
            return self.grid.index(z).map(|i| self.values[i]).unwrap_or(1.0);
        }
        let deg = 2.0 * z.dim() as f64;
        z.neighbors()
            .map(|q| self.grid.index(&q).map(|i| self.values[i]).unwrap_or(0.0))
            .sum::<f64>()
            / deg
    }

    pub fn inward(&self, z: &Point) -> f64 {
        1.0 - self.outward(z)
    }
}

/// Gambler's-ruin check: solved crossing probabilities against the radial
/// formula, at start distances η·N^ι outside the ball and η·N^ȷ inside the
/// outer shell.
#[allow(clippy::too_many_arguments)]
pub fn gambler_ruin_check(
    n: u32,
    d: usize,
    alpha: f64,
    eps: f64,
    iota: f64,
    jota: f64,
    eta: f64,
    tol: f64,
) -> Result<EstimateReport> {
    let nf = n as f64;
    let r = alpha * nf;
    let big_r = (alpha + eps) * nf;
    let cross = AnnulusCross::new(d, r, big_r, tol)?;
    let mut report = EstimateReport::new("gambler_ruin");
    report.params = vec![
        ("n".into(), nf),
        ("alpha".into(), alpha),
        ("eps".into(), eps),
        ("iota".into(), iota),
        ("jota".into(), jota),
        ("eta".into(), eta),
    ];

    // start just outside the ball at distance η·N^ι
    let z_dist = (r + eta * nf.powf(iota)).min(big_r - 1.0);
    let z = radial_point(d, z_dist);
    let measured_out = cross.outward(&z);
    let z_norm = (z.norm2() as f64).sqrt();
    let formula_out = 1.0 - gambler_formula_inward(z_norm, r, big_r, d);

    // start just inside the outer shell at depth η·N^ȷ
    let w_dist = (big_r - eta * nf.powf(jota)).max(r + 1.0);
    let w = radial_point(d, w_dist);
    let measured_in = cross.inward(&w);
    let w_norm = (w.norm2() as f64).sqrt();
    let formula_in = gambler_formula_inward(w_norm, r, big_r, d);

    report.measured = vec![
        ("p_out_solve".into(), measured_out, tol),
        ("p_in_solve".into(), measured_in, tol),
    ];
    report.predicted =
        vec![("p_out_formula".into(), formula_out), ("p_in_formula".into(), formula_in)];
    report.scaled = vec![
        ("rel_dev_out".into(), crate::rel_err(measured_out, formula_out)),
        ("rel_dev_in".into(), crate::rel_err(measured_in, formula_in)),
    ];
    Ok(report)
}

fn radial_point(d: usize, dist: f64) -> Point {
    // lattice point near distance `dist` along a non-axis direction, to
    // avoid the axis-special lattice effects
    let mut best = Point::zero(d);
    let mut best_err = f64::INFINITY;
    let k = (dist / (d as f64).sqrt()).round() as i64;
    for dx in -1..=1i64 {
        for dy in -1..=1i64 {
            let mut coords = vec![k; d];
            coords[0] = k + dx;
            coords[1] = k + dy;
            let p = Point::from_slice(&coords);
            let err = ((p.norm2() as f64).sqrt() - dist).abs();
            if err < best_err {
                best_err = err;
                best = p;
            }
        }
    }
    best
}

/// Exit-time tail: P_z(H̄_B ∧ H_{∂B^δ} > (δN)²) from the worst z on ∂B,
/// scaled by N; plus the far-start variant scaled by N^{1−γ}.
#[allow(clippy::too_many_arguments)]
pub fn exit_time_tail_check(
    n: u32,
    d: usize,
    alpha: f64,
    delta: f64,
    gamma: f64,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<EstimateReport> {
    let nf = n as f64;
    let r = alpha * nf;
    let shell = (alpha + delta) * nf;
    let budget = ((delta * nf) * (delta * nf)) as usize;
    let mut report = EstimateReport::new("exit_time_tail");
    report.params = vec![
        ("n".into(), nf),
        ("alpha".into(), alpha),
        ("delta".into(), delta),
        ("gamma".into(), gamma),
    ];
    if budget == 0 {
        report.measured.push(("tail_max".into(), 1.0, 0.0));
        report.flags.push("degenerate zero budget".into());
        return Ok(report);
    }
    let kernel = WalkKernel::Srw { dim: d };
    let starts: Vec<Point> = sphere_starts(d, r, 8);
    let tail = |start: &Point, rng: &mut dyn rand::RngCore| -> Result<f64> {
        let mut rng = rng;
        let mut hits = 0usize;
        for _ in 0..trials {
            let mut cur = start.clone();
            let mut survived = true;
            for _ in 0..budget {
                cur = kernel.sample_step(&cur, &mut rng)?;
                let d2 = cur.norm2() as f64;
                if d2 <= r * r || d2 >= shell * shell {
                    survived = false;
                    break;
                }
            }
            if survived {
                hits += 1;
            }
        }
        Ok(hits as f64 / trials as f64)
    };
    let mut worst = 0.0f64;
    for z in &starts {
        worst = worst.max(tail(z, rng)?);
    }
    let se = (worst * (1.0 - worst) / trials as f64).sqrt();
    report.measured.push(("tail_max".into(), worst, se));
    report.scaled.push(("n_times_tail".into(), nf * worst));

    // far-start variant: distance N^γ outside B
    let far = radial_point(d, r + nf.powf(gamma));
    let far_tail = tail(&far, rng)?;
    report.measured.push((
        "tail_far".into(),
        far_tail,
        (far_tail * (1.0 - far_tail) / trials as f64).sqrt(),
    ));
    report.scaled.push(("n_gamma_scaled_tail_far".into(), nf.powf(1.0 - gamma) * far_tail));
    Ok(report)
}

fn sphere_starts(d: usize, r: f64, count: usize) -> Vec<Point> {
    // a deterministic spread of starts on the sphere shell {r-1 < |x| ≤ r}
    let mut out = Vec::new();
    let axes = [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0), (0.577, 0.577, 0.577),
        (0.707, 0.707, 0.0), (0.707, 0.0, 0.707), (0.0, 0.707, 0.707), (0.577, 0.577, -0.577)];
    for (a, b, c) in axes.iter().take(count) {
        let mut coords = vec![0i64; d];
        coords[0] = (a * r).round() as i64;
        if d > 1 {
            coords[1] = (b * r).round() as i64;
        }
        if d > 2 {
            coords[2] = (c * r).round() as i64;
        }
        let p = Point::from_slice(&coords);
        if (p.norm2() as f64) <= r * r {
            out.push(p);
        }
    }
    if out.is_empty() {
        out.push(radial_point(d, r));
    }
    out
}

pub enum ConfinementRegion {
    Ball { radius: f64 },
    Annulus { inner: f64, outer: f64 },
}

pub struct ConfinementFit {
    pub decay_constant: f64,
    pub fit_error: f64,
    pub survivals: Vec<(f64, f64, f64)>, // (T, survival, se)
}

/// Survival decay fit: P(S_{[0,T]} ⊆ region) ≈ C·exp(−c·T/size²), least
/// squares on the log-survivals over the T list.
pub fn confinement_decay_check(
    region: &ConfinementRegion,
    t_list: &[usize],
    trials: usize,
    rng: &mut impl Rng,
) -> Result<ConfinementFit> {
    let d = 3usize;
    let kernel = WalkKernel::Srw { dim: d };
    let (start, size, contains): (Point, f64, Box<dyn Fn(&Point) -> bool>) = match region {
        ConfinementRegion::Ball { radius } => {
            let r2 = radius * radius;
            (Point::zero(d), *radius, Box::new(move |p: &Point| (p.norm2() as f64) <= r2))
        }
        ConfinementRegion::Annulus { inner, outer } => {
            let (i2, o2) = (inner * inner, outer * outer);
            (
                radial_point(d, 0.5 * (inner + outer)),
                outer - inner,
                Box::new(move |p: &Point| {
                    let n2 = p.norm2() as f64;
                    n2 >= i2 && n2 <= o2
                }),
            )
        }
    };
    let mut survivals = Vec::new();
    for &t in t_list {
        let mut hits = 0usize;
        for _ in 0..trials {
            let mut cur = start.clone();
            let mut ok = true;
            for _ in 0..t {
                cur = kernel.sample_step(&cur, rng)?;
                if !contains(&cur) {
                    ok = false;
                    break;
                }
            }
            if ok {
                hits += 1;
            }
        }
        let p = hits as f64 / trials as f64;
        survivals.push((t as f64, p, (p * (1.0 - p) / trials as f64).sqrt()));
    }
    let usable: Vec<(f64, f64)> = survivals
        .iter()
        .filter(|(_, p, _)| *p > 0.0)
        .map(|(t, p, _)| (t / (size * size), p.ln()))
        .collect();
    if usable.len() < 2 {
        return Err(Error::InvalidArgument(
            "all-zero survival; choose smaller T values".into(),
        ));
    }
    // least squares y = a + b x
    let m = usable.len() as f64;
    let sx: f64 = usable.iter().map(|(x, _)| x).sum();
    let sy: f64 = usable.iter().map(|(_, y)| y).sum();
    let sxx: f64 = usable.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = usable.iter().map(|(x, y)| x * y).sum();
    let b = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    let a = (sy - b * sx) / m;
    let fit_error = usable
        .iter()
        .map(|(x, y)| (y - a - b * x).abs())
        .fold(0.0f64, f64::max);
    Ok(ConfinementFit { decay_constant: -b, fit_error, survivals })
}

pub struct BracketOutcome {
    pub p_tilted: f64,
    pub p_tilted_se: f64,
    pub p_srw: f64,
    pub p_srw_se: f64,
    pub lower: f64,
    pub upper: f64,
    pub kappa: f64,
    pub c0: f64,
    /// Tail-bucket share of the upper bound plus the geometric remainder.
    pub tail_share: f64,
    pub holds_with_slack: bool,
}

/// The two-sided comparison of a tilted-walk probability with its plain-walk
/// counterpart: κ P(A) ≤ P^N(A) ≤ κ⁻¹[e^{c₀}P(A) + Σ_k e^{c₀(k+1)} P(A, τ_C ∈ [k,k+1)N²)]
/// with the tail truncated at `k_max` and the remainder extrapolated
/// geometrically.
#[allow(clippy::too_many_arguments)]
pub fn probability_bracket_check(
    pair: &Arc<EigenPair>,
    kappa: f64,
    c_inner: f64,
    c_outer: f64,
    trials: usize,
    k_max: usize,
    decay_estimate: f64,
    rng: &mut impl Rng,
) -> Result<BracketOutcome> {
    let d = pair.domain().dim;
    let n = pair.domain().n as f64;
    let anchor = pair.domain().anchor.clone();
    let start = {
        let mut p = anchor.clone();
        p.0[0] += ((c_inner + c_outer) / 2.0).round() as i64;
        p
    };
    let in_c = |p: &Point| {
        let d2 = p.dist2(&anchor) as f64;
        d2 >= c_inner * c_inner && d2 <= c_outer * c_outer
    };
    // event: exit C through its outer boundary
    let outer_exit = |p: &Point| (p.dist2(&anchor) as f64) > c_outer * c_outer;

    let tilted = WalkKernel::phi_tilted(pair.clone())?;
    let mut hits = 0usize;
    for _ in 0..trials {
        let mut cur = start.clone();
        loop {
            cur = tilted.sample_step(&cur, rng)?;
            if !in_c(&cur) {
                break;
            }
        }
        if outer_exit(&cur) {
            hits += 1;
        }
    }
    let p_tilted = hits as f64 / trials as f64;
    let p_tilted_se = (p_tilted * (1.0 - p_tilted) / trials as f64).sqrt();

    let srw = WalkKernel::Srw { dim: d };
    let n2 = (n * n) as usize;
    let mut srw_hits = 0usize;
    let mut buckets = vec![0usize; k_max + 1];
    for _ in 0..trials {
        let mut cur = start.clone();
        let mut tau = 0usize;
        loop {
            cur = srw.sample_step(&cur, rng)?;
            tau += 1;
            if !in_c(&cur) {
                break;
            }
        }
        if outer_exit(&cur) {
            srw_hits += 1;
            let k = tau / n2.max(1);
            if k >= 1 {
                buckets[k.min(k_max)] += 1;
            }
        }
    }
    let p_srw = srw_hits as f64 / trials as f64;
    let p_srw_se = (p_srw * (1.0 - p_srw) / trials as f64).sqrt();

    let c0 = -n * n * pair.lambda.ln();
    let lower = kappa * p_srw;
    let mut upper = c0.exp() * p_srw;
    let mut tail = 0.0;
    for (k, &count) in buckets.iter().enumerate().skip(1) {
        let pk = count as f64 / trials as f64;
        tail += (c0 * (k as f64 + 1.0)).exp() * pk;
    }
    // geometric remainder beyond k_max from the fitted in-region decay:
    // consecutive buckets shrink by at least e^{-decay_estimate·N²/width²}
    let width = c_outer - c_inner;
    let ratio = (c0 - decay_estimate * (n / width) * (n / width)).exp();
    let last_bucket = buckets[k_max] as f64 / trials as f64;
    let last_term = (c0 * (k_max as f64 + 1.0)).exp() * last_bucket.max(3.0 / trials as f64);
    let remainder = if ratio < 1.0 { last_term * ratio / (1.0 - ratio) } else { f64::INFINITY };
    tail += remainder;
    upper += tail;
    upper /= kappa;

    let combined = (p_tilted_se * p_tilted_se + p_srw_se * p_srw_se).sqrt();
    let holds = p_tilted >= lower - 3.0 * combined && p_tilted <= upper + 3.0 * combined;
    Ok(BracketOutcome {
        p_tilted,
        p_tilted_se,
        p_srw,
        p_srw_se,
        lower,
        upper,
        kappa,
        c0,
        tail_share: tail / (upper * kappa).max(1e-300),
        holds_with_slack: holds,
    })
}

/// Log-weight helper re-export for reports that accumulate λ^{-τ} factors.
pub fn lambda_weight(steps: usize, lambda: f64) -> f64 {
    let mut w = LogWeight::default();
    w.push_steps(steps, lambda);
    w.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{discretize, Shape};
    use crate::spectrum::{build_killed_kernel, principal_eigenpair, phi_ratio_bounds};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn gambler_on_shell_is_certain() {
        let cross = AnnulusCross::new(3, 4.0, 8.0, 1e-12).unwrap();
        // on the outer shell the outward probability is 1
        let z = Point::from_slice(&[8, 0, 0]);
        assert_eq!(cross.outward(&z), 1.0);
    }

    #[test]
    fn gambler_formula_agreement_improves_with_n() {
        let r16 = gambler_ruin_check(16, 3, 0.25, 0.25, 0.5, 0.5, 1.0, 1e-12).unwrap();
        let r32 = gambler_ruin_check(32, 3, 0.25, 0.25, 0.5, 0.5, 1.0, 1e-12).unwrap();
        let dev16 = r16.scaled.iter().map(|(_, v)| *v).fold(0.0f64, f64::max);
        let dev32 = r32.scaled.iter().map(|(_, v)| *v).fold(0.0f64, f64::max);
        assert!(dev32 < 0.25, "deviation at N=32: {dev32}");
        assert!(dev32 < dev16, "expected improvement: {dev16} → {dev32}");
    }

    #[test]
    fn gambler_on_shell_start_probability_one() {
        // z exactly on the outer shell: the first probability is 1
        let cross = AnnulusCross::new(3, 4.0, 8.0, 1e-12).unwrap();
        let z = Point::from_slice(&[0, 8, 0]);
        assert_eq!(cross.outward(&z), 1.0);
    }

    #[test]
    fn exit_tail_degenerate_budget() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let rep = exit_time_tail_check(8, 3, 0.25, 0.0, 0.3, 100, &mut rng).unwrap();
        assert_eq!(rep.measured[0].1, 1.0);
        assert!(!rep.flags.is_empty());
    }

    #[test]
    fn exit_tail_scaled_stable() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut scaled = Vec::new();
        for n in [8u32, 16, 24] {
            let rep = exit_time_tail_check(n, 3, 0.25, 0.3, 0.3, 4000, &mut rng).unwrap();
            scaled.push(rep.scaled[0].1);
        }
        let max = scaled.iter().copied().fold(0.0f64, f64::max);
        let min = scaled.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(max <= 3.0 * min + 0.3, "scaled tails spread too wide: {:?}", scaled);
    }

    #[test]
    fn confinement_ball_matches_eigenvalue_and_annulus_decays_faster() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let radius = 6.0;
        let t_list: Vec<usize> = [0.4, 0.8, 1.2, 1.8, 2.6, 4.0]
            .iter()
            .map(|f| (f * radius * radius) as usize)
            .collect();
        let ball = confinement_decay_check(
            &ConfinementRegion::Ball { radius },
            &t_list,
            30_000,
            &mut rng,
        )
        .unwrap();
        // T = 0 edge: survival 1
        let z = confinement_decay_check(
            &ConfinementRegion::Ball { radius },
            &[0, (radius * radius) as usize],
            2000,
            &mut rng,
        )
        .unwrap();
        assert_eq!(z.survivals[0].1, 1.0);

        // eigenvalue prediction at T = radius²
        let dom = Arc::new(
            discretize(&Shape::Ball { center: vec![0.0; 3], radius: 1.0 }, radius as u32, &[0.0; 3])
                .unwrap(),
        );
        let kernel = build_killed_kernel(dom.clone()).unwrap();
        let pair = principal_eigenpair(&kernel, 1e-12, 400_000).unwrap();
        let t = (radius * radius) as usize;
        let (l1, l2sq) = crate::spectrum::phi_norms(&pair);
        let prediction = pair.phi.eval(&Point::zero(3)) * pair.lambda.powi(t as i32) * l1 / l2sq;
        let measured = ball
            .survivals
            .iter()
            .find(|(tt, _, _)| *tt == t as f64)
            .map(|(_, p, se)| (*p, *se));
        if let Some((p, se)) = measured {
            assert!(
                (p - prediction).abs() <= 3.0 * se + 0.05 * prediction,
                "survival {p} vs prediction {prediction}"
            );
        }

        let ann = confinement_decay_check(
            &ConfinementRegion::Annulus { inner: 6.0, outer: 10.0 },
            &[8, 16, 32, 48, 64],
            30_000,
            &mut rng,
        )
        .unwrap();
        // the narrower annulus (width 4) decays faster in absolute rate
        let ball_rate = ball.decay_constant / (radius * radius);
        let ann_rate = ann.decay_constant / (4.0 * 4.0);
        assert!(ann_rate > ball_rate, "annulus {} vs ball {}", ann_rate, ball_rate);
    }

    #[test]
    fn bracket_holds_on_small_annulus_event() {
        let dom = Arc::new(discretize(&Shape::unit_ball(3), 12, &[0.0; 3]).unwrap());
        let kernel = build_killed_kernel(dom.clone()).unwrap();
        let pair = Arc::new(principal_eigenpair(&kernel, 1e-12, 500_000).unwrap());
        let b_eps = crate::lattice::BallRegion::new(dom.anchor.clone(), 0.575 * 12.0).unwrap();
        let region = b_eps.indices_in(&dom);
        let (kappa, _) = phi_ratio_bounds(&pair, &region).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let out = probability_bracket_check(&pair, kappa, 2.0, 5.0, 60_000, 20, 1.6, &mut rng)
            .unwrap();
        assert!(out.holds_with_slack, "bracket [{}, {}] vs {}", out.lower, out.upper, out.p_tilted);
        assert!(out.tail_share < 0.10, "tail share {}", out.tail_share);
        // κ = 1 degenerate check: with κ = 1 and no tail the bracket pinches
        // to [P, e^{c0}P]; the tilted probability must still sit inside
        assert!(out.p_tilted >= out.p_srw * kappa - 3.0 * (out.p_tilted_se + out.p_srw_se));
    }
}
