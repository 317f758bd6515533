//! The verification suite: one function per acceptance criterion (plus
//! report-only diagnostics), a shared lazily-built context, and the
//! orchestrator that runs everything in dependency order into a RunRecord.

use crate::chains::{
    self, build_chain_geometry, build_chain_tables_with_fields, ChainFields, ChainGeometry,
    ChainKind, ChainSampler, ChainTables, CouplingHooks, PairState,
};
use crate::harness::cache;
use crate::harness::config::ExperimentConfig;
use crate::harness::couple::{self, CoupleContext};
use crate::harness::records::{CheckOutcome, RunRecord};
use crate::harness::seeds;
use crate::lattice::{BallRegion, LatticeDomain, Point};
use crate::potential::{vacancy_law_check, BracketConfig, TransientKind};
use crate::rw_estimates;
use crate::slt::{self, PoissonField};
use crate::spectrum::{
    self, build_killed_kernel, eigen_asymptotic_check, phi_norms, phi_ratio_bounds,
    principal_eigenpair, EigenPair,
};
use crate::{Error, Result};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

const PI_SQUARED: f64 = std::f64::consts::PI * std::f64::consts::PI;

/// Shared, lazily-built state for a suite run. Everything derived is cached
/// per blowup factor; eigenpairs additionally go through the disk cache.
pub struct SuiteContext {
    pub cfg: ExperimentConfig,
    pub cache_dir: Option<PathBuf>,
    domains: Mutex<HashMap<u32, Arc<LatticeDomain>>>,
    pairs: Mutex<HashMap<u32, Arc<EigenPair>>>,
    geoms: Mutex<HashMap<u32, Arc<ChainGeometry>>>,
    tables: Mutex<HashMap<u32, (Arc<ChainTables>, Arc<ChainFields>)>>,
    samplers: Mutex<HashMap<u32, Arc<ChainSampler>>>,
    /// Fitted spectral constants, filled by the asymptotic check.
    pub c0: Mutex<Option<f64>>,
    pub c_a: Mutex<Option<f64>>,
}

impl SuiteContext {
    pub fn new(cfg: ExperimentConfig, cache_dir: Option<PathBuf>) -> Self {
        SuiteContext {
            cfg,
            cache_dir,
            domains: Mutex::new(HashMap::new()),
            pairs: Mutex::new(HashMap::new()),
            geoms: Mutex::new(HashMap::new()),
            tables: Mutex::new(HashMap::new()),
            samplers: Mutex::new(HashMap::new()),
            c0: Mutex::new(None),
            c_a: Mutex::new(None),
        }
    }

    pub fn domain(&self, n: u32) -> Result<Arc<LatticeDomain>> {
        let mut map = self.domains.lock().unwrap();
        if let Some(d) = map.get(&n) {
            return Ok(d.clone());
        }
        let dom = Arc::new(crate::lattice::discretize(&self.cfg.shape(), n, &self.cfg.x0)?);
        map.insert(n, dom.clone());
        Ok(dom)
    }

    pub fn pair(&self, n: u32) -> Result<Arc<EigenPair>> {
        let dom = self.domain(n)?;
        let mut map = self.pairs.lock().unwrap();
        if let Some(p) = map.get(&n) {
            return Ok(p.clone());
        }
        let key = cache::shape_key(&format!("{:?}", self.cfg.shape()), self.cfg.d, n, self.cfg.eigen_tol);
        let tol = self.cfg.eigen_tol;
        let pair = cache::eigenpair_cached(self.cache_dir.as_deref(), &key, dom, move |d| {
            let kernel = build_killed_kernel(d)?;
            principal_eigenpair(&kernel, tol, 2_000_000)
        })?;
        map.insert(n, pair.clone());
        Ok(pair)
    }

    pub fn geometry(&self, n: u32) -> Result<Arc<ChainGeometry>> {
        let pair = self.pair(n)?;
        let mut map = self.geoms.lock().unwrap();
        if let Some(g) = map.get(&n) {
            return Ok(g.clone());
        }
        let geom = Arc::new(build_chain_geometry(
            pair,
            self.cfg.alpha,
            self.cfg.eps,
            self.cfg.gamma,
        )?);
        map.insert(n, geom.clone());
        Ok(geom)
    }

    pub fn tables(&self, n: u32) -> Result<(Arc<ChainTables>, Arc<ChainFields>)> {
        let geom = self.geometry(n)?;
        let mut map = self.tables.lock().unwrap();
        if let Some(t) = map.get(&n) {
            return Ok(t.clone());
        }
        let (tables, fields) =
            build_chain_tables_with_fields(&geom, self.cfg.table_radius(n), self.cfg.solver_tol)?;
        let entry = (Arc::new(tables), Arc::new(fields));
        map.insert(n, entry.clone());
        Ok(entry)
    }

    pub fn sampler(&self, n: u32) -> Result<Arc<ChainSampler>> {
        let geom = self.geometry(n)?;
        let mut map = self.samplers.lock().unwrap();
        if let Some(s) = map.get(&n) {
            return Ok(s.clone());
        }
        let sampler = Arc::new(ChainSampler::new(
            geom,
            self.cfg.esc_radius(n),
            self.cfg.solver_tol.max(1e-11),
        )?);
        map.insert(n, sampler.clone());
        Ok(sampler)
    }

    fn rng(&self, module: &str, index: u64) -> rand_chacha::ChaCha12Rng {
        seeds::derive_rng(self.cfg.master_seed, module, index)
    }
}

fn fmt_metrics(m: &[(String, f64)]) -> String {
    m.iter().map(|(k, v)| format!("{k}={v:.5}")).collect::<Vec<_>>().join(" ")
}

/// Element of the configured N list closest to the nominal value a check is
/// written for (the defaults contain the nominal values themselves).
fn pick_n(cfg: &ExperimentConfig, nominal: u32) -> u32 {
    *cfg.n_list
        .iter()
        .min_by_key(|&&n| (n as i64 - nominal as i64).abs())
        .expect("n_list validated nonempty")
}

// ---------------------------------------------------------------------------
// criterion 1: eigenvalue asymptotics
// ---------------------------------------------------------------------------

pub fn check_eigen_asymptotic(ctx: &SuiteContext) -> Result<CheckOutcome> {
    let mut pairs = Vec::new();
    for &n in &ctx.cfg.spectrum_n_list {
        pairs.push((n, ctx.pair(n)?));
    }
    let borrowed: Vec<(u32, &EigenPair)> = pairs.iter().map(|(n, p)| (*n, p.as_ref())).collect();
    let table = eigen_asymptotic_check(&borrowed)?;
    *ctx.c0.lock().unwrap() = Some(table.c0);
    let mut metrics: Vec<(String, f64)> = table
        .rows
        .iter()
        .map(|r| (format!("scaled_gap_n{}", r.n), r.scaled_gap))
        .collect();
    metrics.push(("extrapolated".into(), table.extrapolated));
    metrics.push(("c0".into(), table.c0));
    let is_unit_ball = matches!(ctx.cfg.shape, crate::harness::config::ShapeKind::Ball)
        && ctx.cfg.d == 3;
    if is_unit_ball {
        let rel = (table.extrapolated - PI_SQUARED).abs() / PI_SQUARED;
        metrics.push(("rel_err_vs_continuum".into(), rel));
        let passed = rel <= 0.15;
        Ok(CheckOutcome::gate(
            "eigen-asymptotic",
            passed,
            format!(
                "extrapolated 2dN²(1−λ_N) = {:.4} vs continuum limit {:.4} ({}% off)",
                table.extrapolated,
                PI_SQUARED,
                (rel * 100.0).round()
            ),
            metrics,
        ))
    } else {
        Ok(CheckOutcome::report(
            "eigen-asymptotic",
            "no pinned continuum limit for this shape; values reported".into(),
            metrics,
        ))
    }
}

// ---------------------------------------------------------------------------
// criterion 2: Dirichlet residual
// ---------------------------------------------------------------------------

pub fn check_dirichlet_residual(ctx: &SuiteContext) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    let mut metrics = Vec::new();
    for &n in &ctx.cfg.spectrum_n_list {
        let pair = ctx.pair(n)?;
        let report = spectrum::verify_dirichlet_problem(&pair);
        let rel = report.max_defect / report.max_phi;
        metrics.push((format!("defect_rel_n{}", n), rel));
        worst = worst.max(rel);
    }
    Ok(CheckOutcome::gate(
        "dirichlet-residual",
        worst <= 1e-10,
        format!("max |Δ_dφ − (1−λ)φ| / max φ = {worst:.3e} (tolerance 1e-10)"),
        metrics,
    ))
}

// ---------------------------------------------------------------------------
// criterion 3: ℓ² norm scaling
// ---------------------------------------------------------------------------

pub fn check_norm_scaling(ctx: &SuiteContext) -> Result<CheckOutcome> {
    let d = ctx.cfg.d as f64;
    let mut scaled = Vec::new();
    let mut metrics = Vec::new();
    for &n in &ctx.cfg.spectrum_n_list {
        let pair = ctx.pair(n)?;
        let (l1, l2sq) = phi_norms(&pair);
        let v = l2sq / (n as f64).powf(d);
        metrics.push((format!("l2sq_scaled_n{}", n), v));
        metrics.push((format!("l1_over_l2sq_n{}", n), l1 / l2sq));
        scaled.push(v);
    }
    let mut ok = true;
    for w in scaled.windows(2) {
        let ratio = w[1] / w[0];
        if !(0.7..=1.4).contains(&ratio) {
            ok = false;
        }
    }
    Ok(CheckOutcome::gate(
        "norm-scaling",
        ok,
        format!("‖φ‖₂²/N^d consecutive ratios within [0.7, 1.4]: {:?}", scaled),
        metrics,
    ))
}

// ---------------------------------------------------------------------------
// criterion 4: vacancy law
// ---------------------------------------------------------------------------

pub fn check_vacancy_law(ctx: &SuiteContext) -> Result<CheckOutcome> {
    let d = ctx.cfg.d;
    let sets: Vec<(&str, Vec<Point>)> = vec![
        ("one-point", vec![Point::zero(d)]),
        ("two-adjacent", vec![Point::zero(d), unit(d, 1)]),
        ("two-distant", vec![Point::zero(d), unit(d, 5)]),
    ];
    let cfg = BracketConfig {
        truncation_radius: 64.0,
        tol: 1e-11,
        max_sweeps: 400_000,
        step_budget: 0,
    };
    let kind = TransientKind::Srw { dim: d };
    let mut metrics = Vec::new();
    let mut all_ok = true;
    let mut details = Vec::new();
    let trials = 10_000;
    for (idx, (name, k)) in sets.iter().enumerate() {
        for (uidx, &u) in [0.5, 1.0, 2.0].iter().enumerate() {
            let mut rng = ctx.rng("vacancy", (idx * 10 + uidx) as u64);
            let rep = vacancy_law_check(&kind, u, k, trials, &cfg, &mut rng)?;
            let rel_width = rep.capacity_width / rep.capacity_mid;
            let dev = (rep.frequency - rep.prediction).abs();
            let ok = rel_width < 0.01 && dev <= 3.0 * rep.combined_se();
            all_ok &= ok;
            metrics.push((format!("{name}_u{u}_freq"), rep.frequency));
            metrics.push((format!("{name}_u{u}_pred"), rep.prediction));
            metrics.push((format!("{name}_u{u}_se"), rep.combined_se()));
            if uidx == 0 {
                metrics.push((format!("{name}_cap_rel_width"), rel_width));
            }
            if !ok {
                details.push(format!(
                    "{name} u={u}: freq {:.4} vs e^(-u·cap) {:.4} (3SE {:.4}, width {:.3}%)",
                    rep.frequency,
                    rep.prediction,
                    3.0 * rep.combined_se(),
                    rel_width * 100.0
                ));
            }
        }
    }
    Ok(CheckOutcome::gate(
        "vacancy-law",
        all_ok,
        if details.is_empty() {
            "all nine (K, u) combinations within 3 SE at <1% capacity width".into()
        } else {
            details.join("; ")
        },
        metrics,
    ))
}

fn unit(d: usize, scale: i64) -> Point {
    let mut c = vec![0i64; d];
    c[0] = scale;
    Point::from_slice(&c)
}

// ---------------------------------------------------------------------------
// criterion 5: excursion-count identity
// ---------------------------------------------------------------------------

pub fn check_excursion_identity(ctx: &SuiteContext) -> Result<CheckOutcome> {
    let n = pick_n(&ctx.cfg, 12);
    let sampler = ctx.sampler(n)?;
    let (tables, _) = ctx.tables(n)?;
    let runs = 500usize;
    let t1 = ctx.cfg.t_n(n);
    let t2 = 2 * t1;
    let mut metrics = Vec::new();
    let mut all_ok = true;
    let mut details = Vec::new();
    for (k, &t) in [t1, t2].iter().enumerate() {
        let mut rng = ctx.rng("excursion-count", k as u64);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..runs {
            let c = sampler.walk_excursion_count(t, &mut rng)? as f64;
            sum += c;
            sumsq += c * c;
        }
        let mean = sum / runs as f64;
        let var = (sumsq / runs as f64 - mean * mean).max(0.0);
        let se = (var / runs as f64).sqrt();
        let prediction = sampler.walk_count_prediction(&tables, t);
        let ok = (mean - prediction).abs() <= 3.0 * se;
        all_ok &= ok;
        metrics.push((format!("mean_t{}", t), mean));
        metrics.push((format!("prediction_t{}", t), prediction));
        metrics.push((format!("se_t{}", t), se));
        details.push(format!(
            "t={t}: mean {:.3} vs t·cap/‖φ‖² = {:.3} (3SE {:.3})",
            mean,
            prediction,
            3.0 * se
        ));
    }
    Ok(CheckOutcome::gate("excursion-count-identity", all_ok, details.join("; "), metrics))
}

// ---------------------------------------------------------------------------
// criterion 6: common invariant measure
// ---------------------------------------------------------------------------

pub fn check_invariant_measure(ctx: &SuiteContext) -> Result<CheckOutcome> {
    let n = pick_n(&ctx.cfg, 8);
    let geom = ctx.geometry(n)?;
    let (tables, _) = ctx.tables(n)?;
    let defect_y = chains::kernel_invariance_defect(&tables, &ChainKind::Y);
    let defect_z = chains::kernel_invariance_defect(&tables, &ChainKind::Z);

    let sampler = ctx.sampler(n)?;
    let steps = 100_000usize;
    let mut rng = ctx.rng("invariant-measure", 0);
    let mut y_states = Vec::with_capacity(steps);
    let mut state = sampler.nu_y_draw(&mut rng)?;
    for _ in 0..steps {
        state = sampler.y_chain_step(&state, &mut rng)?;
        y_states.push(state.clone());
    }
    let tv_y = chains::entrance_marginal_tv(&geom, &tables, &y_states);

    let mut rng = ctx.rng("invariant-measure", 1);
    let mut z_states: Vec<PairState> = Vec::with_capacity(steps);
    let mut state = sampler.nu_z_draw(&mut rng)?;
    for _ in 0..steps {
        let (next, _) = sampler.z_chain_step(&state, &mut rng)?;
        state = next;
        z_states.push(state.clone());
    }
    let tv_z = chains::entrance_marginal_tv(&geom, &tables, &z_states);

    let passed = defect_y <= 1e-8 && defect_z <= 1e-8 && tv_y < 0.05 && tv_z < 0.05;
    Ok(CheckOutcome::gate(
        "invariant-measure",
        passed,
        format!(
            "‖π̃P−π̃‖₁: Y {defect_y:.2e}, Z {defect_z:.2e} (≤1e-8); entrance TV at 1e5 \
             steps: Y {tv_y:.4}, Z {tv_z:.4} (<0.05); collar_exact={}",
            geom.collar_exact
        ),
        vec![
            ("defect_y".into(), defect_y),
            ("defect_z".into(), defect_z),
            ("tv_y".into(), tv_y),
            ("tv_z".into(), tv_z),
        ],
    ))
}

// ---------------------------------------------------------------------------
// criterion 7: SLT engine oracle equivalence
// ---------------------------------------------------------------------------

pub fn check_slt_oracle(ctx: &SuiteContext) -> Result<CheckOutcome> {
    let (chain, other, pi) = slt::toy_pair(6, seeds::derive_seed(ctx.cfg.master_seed, "slt-toy", 0));
    let steps = 100_000usize;
    let field = PoissonField { seed: seeds::derive_seed(ctx.cfg.master_seed, "slt-field", 0) };
    let run = slt::slt_simulate(&chain, &pi, &field, steps, &[])?;
    let mut rng = ctx.rng("slt-direct", 0);
    let direct = chain.simulate(steps, &mut rng);
    let pair_freq = |seq: &[usize]| {
        let mut m = vec![vec![0.0; 6]; 6];
        for w in seq.windows(2) {
            m[w[0]][w[1]] += 1.0;
        }
        let t = (seq.len() - 1) as f64;
        m.iter_mut().for_each(|r| r.iter_mut().for_each(|v| *v /= t));
        m
    };
    let a = pair_freq(&run.states);
    let b = pair_freq(&direct);
    let tv: f64 = a
        .iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        * 0.5;

    // G-monotonicity, exact, on a snapshotted run of the second chain
    let snaps: Vec<usize> = (1..=2_000).collect();
    let run2 = slt::slt_simulate(&other, &pi, &field, 2_000, &snaps)?;
    let mut monotone = true;
    for w in run2.snapshots.windows(2) {
        for (g0, g1) in w[0].1.iter().zip(&w[1].1) {
            if g1 < g0 {
                monotone = false;
            }
        }
    }
    let passed = tv < 0.02 && monotone;
    Ok(CheckOutcome::gate(
        "slt-oracle",
        passed,
        format!("transition-frequency TV {tv:.4} (<0.02); G monotone: {monotone}"),
        vec![("tv".into(), tv), ("g_monotone".into(), monotone as u8 as f64)],
    ))
}

// ---------------------------------------------------------------------------
// criterion 8: coupling inclusion experiment
// ---------------------------------------------------------------------------

pub fn check_coupling(ctx: &SuiteContext) -> Result<CheckOutcome> {
    let mut metrics = Vec::new();
    let mut details = Vec::new();
    let mut gate_frequency = None;
    for &n in &ctx.cfg.n_list {
        let geom = ctx.geometry(n)?;
        let (tables, fields) = ctx.tables(n)?;
        let cctx = CoupleContext::new(geom, tables, fields, ctx.cfg.eta_mu);
        let (summary, _) = couple::run_coupling_for_n(&ctx.cfg, &cctx, n, ctx.cfg.trials)?;
        let valid = summary.trials - summary.invalid;
        let freq = if valid > 0 { summary.both_hold as f64 / valid as f64 } else { 0.0 };
        metrics.push((format!("freq_n{}", n), freq));
        metrics.push((format!("n_steps_n{}", n), summary.n_steps as f64));
        metrics.push((format!("eps_n{}", n), summary.eps_n));
        metrics.push((format!("invalid_n{}", n), summary.invalid as f64));
        metrics.push((
            format!("chain_freq_n{}", n),
            if valid > 0 { summary.chain_both_hold as f64 / valid as f64 } else { 0.0 },
        ));
        metrics.push((
            format!("key_property_violations_n{}", n),
            summary.key_property_violations as f64,
        ));
        details.push(format!(
            "N={}: {}/{} both inclusions (n={}, ε_N={:.3})",
            n, summary.both_hold, valid, summary.n_steps, summary.eps_n
        ));
        if n == 12 {
            gate_frequency = Some(freq);
        }
    }
    let passed = gate_frequency.map(|f| f >= 0.9).unwrap_or(false);
    Ok(CheckOutcome::gate(
        "coupling-inclusion",
        passed,
        format!(
            "{} — floor: ≥90% at N=12 (exponential rates not desk-reproducible, \
             frequencies reported)",
            details.join("; ")
        ),
        metrics,
    ))
}

// ---------------------------------------------------------------------------
// criterion 9: gambler's ruin
// ---------------------------------------------------------------------------

pub fn check_gambler(ctx: &SuiteContext) -> Result<CheckOutcome> {
    let r16 = rw_estimates::gambler_ruin_check(16, ctx.cfg.d, 0.25, 0.25, 0.5, 0.5, 1.0, 1e-12)?;
    let r32 = rw_estimates::gambler_ruin_check(32, ctx.cfg.d, 0.25, 0.25, 0.5, 0.5, 1.0, 1e-12)?;
    let dev16 = r16.scaled.iter().map(|(_, v)| *v).fold(0.0f64, f64::max);
    let dev32 = r32.scaled.iter().map(|(_, v)| *v).fold(0.0f64, f64::max);
    let passed = dev32 < 0.25 && dev32 < dev16;
    Ok(CheckOutcome::gate(
        "gamblers-ruin",
        passed,
        format!(
            "max relative deviation vs radial formula: N=16 {:.3}, N=32 {:.3} \
             (<0.25 and decreasing)",
            dev16, dev32
        ),
        vec![("dev_n16".into(), dev16), ("dev_n32".into(), dev32)],
    ))
}

// ---------------------------------------------------------------------------
// criterion 10: mixing couplings
// ---------------------------------------------------------------------------

pub fn check_mixing(ctx: &SuiteContext) -> Result<CheckOutcome> {
    // faithfulness at N = 8 against exact kernels
    let n8 = pick_n(&ctx.cfg, 8);
    let geom8 = ctx.geometry(n8)?;
    let (tables8, _) = ctx.tables(n8)?;
    let yc8 = chains::build_y_coupling_tables(&geom8, &tables8, ctx.cfg.solver_tol)?;
    let mut rng = ctx.rng("mixing-faithful", 0);
    let (chi_y, dof_y) = chains::y_coupling_marginal_chi2(&geom8, &tables8, &yc8, 40_000, &mut rng)?;
    let crit_y = ChiSquared::new(dof_y.max(1) as f64).unwrap().inverse_cdf(0.999);
    let mut rng = ctx.rng("mixing-faithful", 1);
    let (chi_z, dof_z) = chains::z_coupling_marginal_chi2(&geom8, &tables8, 40_000, &mut rng)?;
    let crit_z = ChiSquared::new(dof_z.max(1) as f64).unwrap().inverse_cdf(0.999);
    let faithful = chi_y < crit_y && chi_z < crit_z;

    // coalescence at N = 12 within the budget
    let n12 = pick_n(&ctx.cfg, 12);
    let geom12 = ctx.geometry(n12)?;
    let (tables12, _) = ctx.tables(n12)?;
    let yc12 = chains::build_y_coupling_tables(&geom12, &tables12, ctx.cfg.solver_tol)?;
    let budget = 200usize;
    let trials = 1000usize;
    let mut rng = ctx.rng("mixing-coalesce", 0);
    let rep_y = chains::mixing_estimate_y(
        &geom12,
        &tables12,
        &yc12,
        trials,
        budget,
        CouplingHooks::default(),
        &mut rng,
    )?;
    let mut rng = ctx.rng("mixing-coalesce", 1);
    let rep_z = chains::mixing_estimate_z(
        &geom12,
        &tables12,
        trials,
        budget,
        CouplingHooks::default(),
        &mut rng,
    )?;
    let coalesce_ok = rep_y.failures * 100 <= trials && rep_z.failures * 100 <= trials;
    let n12f = n12 as f64;
    let rate_scale = n12f.powf(1.0 - ctx.cfg.gamma);
    let passed = faithful && coalesce_ok;
    Ok(CheckOutcome::gate(
        "mixing-couplings",
        passed,
        format!(
            "faithfulness χ²: Y {chi_y:.1}/{crit_y:.1}, Z {chi_z:.1}/{crit_z:.1}; \
             N=12 coalescence failures: Y {}/{trials}, Z {}/{trials} (≤1%); \
             T_mix bounds: Y {:?}, Z {:?} (N^(1-γ) = {:.2} reported, not asserted)",
            rep_y.failures, rep_z.failures, rep_y.tmix_bound, rep_z.tmix_bound, rate_scale
        ),
        vec![
            ("chi_y".into(), chi_y),
            ("chi_z".into(), chi_z),
            ("failures_y".into(), rep_y.failures as f64),
            ("failures_z".into(), rep_z.failures as f64),
            ("tmix_y".into(), rep_y.tmix_bound.map(|k| k as f64).unwrap_or(f64::NAN)),
            ("tmix_z".into(), rep_z.tmix_bound.map(|k| k as f64).unwrap_or(f64::NAN)),
            ("p_step_y".into(), rep_y.p_step),
            ("p_step_z".into(), rep_z.p_step),
        ],
    ))
}

// ---------------------------------------------------------------------------
// criterion 11: probability bracket
// ---------------------------------------------------------------------------

pub fn check_probability_bracket(ctx: &SuiteContext) -> Result<CheckOutcome> {
    let n = pick_n(&ctx.cfg, 12);
    let pair = ctx.pair(n)?;
    let dom = pair.domain().clone();
    let b_eps =
        BallRegion::new(dom.anchor.clone(), (ctx.cfg.alpha + ctx.cfg.eps) * n as f64)?;
    let region = b_eps.indices_in(&dom);
    let (kappa, _) = phi_ratio_bounds(&pair, &region)?;
    let decay = ctx.c_a.lock().unwrap().unwrap_or(1.6);
    let mut rng = ctx.rng("probability-bracket", 0);
    let out = rw_estimates::probability_bracket_check(
        &pair,
        kappa,
        2.0,
        5.0,
        60_000,
        ctx.cfg.k_max,
        decay,
        &mut rng,
    )?;
    let passed = out.holds_with_slack && out.tail_share < 0.10;
    Ok(CheckOutcome::gate(
        "probability-bracket",
        passed,
        format!(
            "P^N(A) = {:.4} within [{:.4}, {:.4}] (κ = {:.3}, c₀ = {:.3}); \
             tail share {:.2}% (<10%)",
            out.p_tilted,
            out.lower,
            out.upper,
            out.kappa,
            out.c0,
            out.tail_share * 100.0
        ),
        vec![
            ("p_tilted".into(), out.p_tilted),
            ("lower".into(), out.lower),
            ("upper".into(), out.upper),
            ("kappa".into(), kappa),
            ("tail_share".into(), out.tail_share),
        ],
    ))
}

// ---------------------------------------------------------------------------
// report-only diagnostics and secondary gates
// ---------------------------------------------------------------------------

pub fn check_confinement(ctx: &SuiteContext) -> Result<CheckOutcome> {
    let radius = 6.0;
    let t_list: Vec<usize> = [0.4, 0.8, 1.2, 1.8, 2.6]
        .iter()
        .map(|f| (f * radius * radius) as usize)
        .collect();
    let mut rng = ctx.rng("confinement", 0);
    let ball = rw_estimates::confinement_decay_check(
        &rw_estimates::ConfinementRegion::Ball { radius },
        &t_list,
        20_000,
        &mut rng,
    )?;
    let mut rng = ctx.rng("confinement", 1);
    let ann = rw_estimates::confinement_decay_check(
        &rw_estimates::ConfinementRegion::Annulus { inner: 6.0, outer: 10.0 },
        &[8, 16, 32, 48, 64],
        20_000,
        &mut rng,
    )?;
    *ctx.c_a.lock().unwrap() = Some(ann.decay_constant);
    let c0 = ctx.c0.lock().unwrap().unwrap_or(PI_SQUARED / 6.0);
    let relation = ann.decay_constant > ctx.cfg.eps * ctx.cfg.eps * c0;
    Ok(CheckOutcome::gate(
        "confinement-decay",
        relation,
        format!(
            "fitted c_b = {:.3} (±{:.3}), c_a = {:.3} (±{:.3}); relation c_a > ε²c₀ \
             with ε²c₀ = {:.3}",
            ball.decay_constant,
            ball.fit_error,
            ann.decay_constant,
            ann.fit_error,
            ctx.cfg.eps * ctx.cfg.eps * c0
        ),
        vec![
            ("c_b".into(), ball.decay_constant),
            ("c_a".into(), ann.decay_constant),
            ("eps2_c0".into(), ctx.cfg.eps * ctx.cfg.eps * c0),
        ],
    ))
}

pub fn check_lambda_bracket(ctx: &SuiteContext) -> Result<CheckOutcome> {
    // 1 ≤ λ_N^{-T} ≤ e^{c₀T/N²} with the fitted c₀, T ∈ {N², 5N²}
    let c0 = ctx
        .c0
        .lock()
        .unwrap()
        .ok_or_else(|| Error::InvalidArgument("run the asymptotic check first".into()))?;
    let mut ok = true;
    let mut metrics = Vec::new();
    for &n in &ctx.cfg.spectrum_n_list {
        let pair = ctx.pair(n)?;
        let n2 = (n as f64) * (n as f64);
        for t in [n2, 5.0 * n2] {
            let lhs = pair.lambda.powf(-t);
            let rhs = (c0 * t / n2).exp();
            ok &= (1.0..=rhs * (1.0 + 1e-12)).contains(&lhs);
            metrics.push((format!("lambda_pow_n{}_t{}", n, t as usize), lhs));
        }
    }
    Ok(CheckOutcome::gate(
        "lambda-bracket",
        ok,
        format!("1 ≤ λ_N^(-T) ≤ e^(c₀T/N²) with fitted c₀ = {c0:.4}"),
        metrics,
    ))
}

pub fn check_spectral_diagnostics(ctx: &SuiteContext) -> Result<CheckOutcome> {
    // second-eigenvalue gap, ratio-constant stability, survival regime,
    // and strict eigenvalue decrease when removing a macroscopic ball
    let mut metrics = Vec::new();
    let mut kappas = Vec::new();
    for &n in &ctx.cfg.n_list {
        let pair = ctx.pair(n)?;
        let dom = pair.domain().clone();
        let b_eps =
            BallRegion::new(dom.anchor.clone(), (ctx.cfg.alpha + ctx.cfg.eps) * n as f64)?;
        let region = b_eps.indices_in(&dom);
        let (kappa, _) = phi_ratio_bounds(&pair, &region)?;
        metrics.push((format!("kappa_n{}", n), kappa));
        kappas.push(kappa);
    }
    let mut kappa_stable = true;
    for w in kappas.windows(2) {
        let r = w[1] / w[0];
        if !(0.8..=1.25).contains(&r) {
            kappa_stable = false;
        }
    }
    let n = *ctx.cfg.n_list.first().unwrap();
    let pair = ctx.pair(n)?;
    let kernel = build_killed_kernel(pair.domain().clone())?;
    let lambda2 = spectrum::second_eigenvalue_estimate(&kernel, &pair, 4000);
    metrics.push(("lambda2_gap".into(), pair.lambda - lambda2));

    let ball = BallRegion::new(pair.domain().anchor.clone(), 0.3 * n as f64)?;
    let (full, carved) =
        spectrum::eigenvalue_domain_comparison(pair.domain(), &ball, 1e-11, 1_000_000)?;
    metrics.push(("lambda_full".into(), full));
    metrics.push(("lambda_carved".into(), carved));
    let strict = carved < full;

    let mut rng = ctx.rng("survival", 0);
    let t = 10.0 * (n as f64) * (n as f64) * (n as f64).ln();
    let surv =
        spectrum::survival_probability_check(&pair, &pair.anchor.clone(), t as usize, 2_000, &mut rng)?;
    metrics.push(("survival_mc".into(), surv.mc_estimate));
    metrics.push(("survival_pred".into(), surv.prediction));

    Ok(CheckOutcome::gate(
        "spectral-diagnostics",
        kappa_stable && strict,
        format!(
            "κ stability across N {:?}: {}; ball removal strictly lowers λ: {} \
             ({:.6} → {:.6}); spectral gap and survival reported",
            kappas, kappa_stable, strict, full, carved
        ),
        metrics,
    ))
}

pub fn check_capacity_scaling(ctx: &SuiteContext) -> Result<CheckOutcome> {
    let d = ctx.cfg.d as f64;
    let mut scaled = Vec::new();
    let mut uniformity = Vec::new();
    let mut metrics = Vec::new();
    for &n in &ctx.cfg.n_list {
        let (tables, _) = ctx.tables(n)?;
        let nf = n as f64;
        let cap_scaled = tables.cap_psi_w / nf.powf(d - 2.0);
        let emax = tables.ebar.iter().copied().fold(0.0f64, f64::max);
        let emin = tables.ebar.iter().copied().fold(f64::INFINITY, f64::min);
        metrics.push((format!("cap_psi_scaled_n{}", n), cap_scaled));
        metrics.push((format!("harmonic_uniformity_n{}", n), emax / emin));
        scaled.push(cap_scaled);
        uniformity.push(emax / emin);
    }
    let mut stable = true;
    for w in scaled.windows(2) {
        let r = w[1] / w[0];
        if !(0.6..=1.7).contains(&r) {
            stable = false;
        }
    }
    let uniform_ok = uniformity.iter().all(|u| *u <= 10.0);
    Ok(CheckOutcome::gate(
        "capacity-scaling",
        stable && uniform_ok,
        format!(
            "cap^Ψ(B)/N^(d-2) = {:?} (consecutive ratios in [0.6,1.7]); \
             harmonic-measure max/min = {:?} (≤10)",
            scaled, uniformity
        ),
        metrics,
    ))
}

pub fn check_chain_diagnostics(ctx: &SuiteContext) -> Result<CheckOutcome> {
    // marginal bounds, slt inputs, last-exit identity and crossing scaling
    let mut metrics = Vec::new();
    for &n in &ctx.cfg.n_list {
        let geom = ctx.geometry(n)?;
        let (tables, _) = ctx.tables(n)?;
        let row = chains::marginal_bounds_row(&geom, &tables);
        metrics.push((format!("entry_scaled_max_n{}", n), row.entry_scaled_max));
        metrics.push((format!("entry_scaled_min_n{}", n), row.entry_scaled_min));
        metrics.push((format!("exit_scaled_max_n{}", n), row.exit_scaled_max));
        metrics.push((format!("cap_delta_scaled_n{}", n), row.cap_scaled));
        let inputs = chains::slt_inputs(&geom, &tables, ctx.cfg.eta_mu);
        metrics.push((format!("rho_sup_scaled_n{}", n), inputs.sup_scaled));
        metrics.push((format!("rho_var_scaled_n{}", n), inputs.var_scaled));
        metrics.push((format!("mu_floored_cells_n{}", n), inputs.floored_cells as f64));
        let constants =
            chains::sigma_theorem_constants(&geom, &tables, &inputs, ctx.cfg.eps_n(n));
        metrics.push((format!("k_eps_n{}", n), constants.k_eps));
        metrics.push((format!("eps_cond_rhs_n{}", n), constants.eps_condition_rhs));
        metrics.push((format!("eps_ok_n{}", n), constants.eps_ok as u8 as f64));
        metrics.push((format!("pi_star_n{}", n), constants.pi_star));
    }
    // last-exit identity at the smallest N, fully inside the truncated model
    let n0 = *ctx.cfg.n_list.first().unwrap();
    let geom = ctx.geometry(n0)?;
    let k: Vec<Point> = geom.entries_b_points();
    let cfg = BracketConfig {
        truncation_radius: ctx.cfg.table_radius(n0),
        tol: 1e-12,
        max_sweeps: 400_000,
        step_budget: 0,
    };
    let led = crate::potential::last_exit_check(&geom.tilt, &k, &cfg)?;
    metrics.push(("last_exit_defect".into(), led.max_defect));
    metrics.push(("last_exit_unit_defect".into(), led.unit_defect));
    let led_ok = led.unit_defect < 1e-6;

    let mut rng = ctx.rng("crossing", 0);
    let b_eps_shell: Vec<Point> = crate::lattice::annulus(
        &geom.b.center,
        (ctx.cfg.alpha + ctx.cfg.eps) * n0 as f64 - 1.0,
        (ctx.cfg.alpha + ctx.cfg.eps) * n0 as f64,
        ctx.cfg.d,
    )?;
    let delta_pts: Vec<Point> =
        geom.exits.iter().map(|&i| geom.domain.point(i).clone()).collect();
    let crossing = crate::potential::crossing_estimates_check(
        &geom.tilt,
        &geom.b,
        &b_eps_shell,
        &delta_pts,
        ctx.cfg.gamma,
        40,
        &BracketConfig::with_radius(ctx.cfg.esc_radius(n0)),
        &mut rng,
    )?;
    metrics.push(("crossing_out_scaled".into(), crossing.out_scaled));
    metrics.push(("crossing_in_scaled".into(), crossing.in_scaled));
    metrics.push(("crossing_escape_scaled".into(), crossing.escape_scaled));

    Ok(CheckOutcome::gate(
        "chain-diagnostics",
        led_ok,
        format!(
            "last-exit identity defect {:.2e} (λ-form {:.2e}); scaled marginals and \
             crossing estimates reported",
            led.unit_defect, led.max_defect
        ),
        metrics,
    ))
}

pub fn check_exit_time_tail(ctx: &SuiteContext) -> Result<CheckOutcome> {
    let mut rng = ctx.rng("exit-tail", 0);
    let mut scaled = Vec::new();
    let mut metrics = Vec::new();
    for &n in &[8u32, 16, 24] {
        let rep = rw_estimates::exit_time_tail_check(
            n,
            ctx.cfg.d,
            0.25,
            0.3,
            ctx.cfg.gamma,
            3_000,
            &mut rng,
        )?;
        metrics.push((format!("scaled_tail_n{}", n), rep.scaled[0].1));
        scaled.push(rep.scaled[0].1);
    }
    let max = scaled.iter().copied().fold(0.0f64, f64::max);
    let min = scaled.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(CheckOutcome::gate(
        "exit-time-tail",
        max <= 3.0 * min + 0.3,
        format!("N·tail across N ∈ {{8,16,24}}: {:?} (within factor 3)", scaled),
        metrics,
    ))
}

// ---------------------------------------------------------------------------
// orchestration
// ---------------------------------------------------------------------------

type CheckFn = fn(&SuiteContext) -> Result<CheckOutcome>;

/// All checks in dependency order (spectral → potential → chains → slt →
/// estimates → coupling).
pub fn full_check_list() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("eigen-asymptotic", check_eigen_asymptotic),
        ("dirichlet-residual", check_dirichlet_residual),
        ("norm-scaling", check_norm_scaling),
        ("lambda-bracket", check_lambda_bracket),
        ("spectral-diagnostics", check_spectral_diagnostics),
        ("vacancy-law", check_vacancy_law),
        ("capacity-scaling", check_capacity_scaling),
        ("chain-diagnostics", check_chain_diagnostics),
        ("excursion-count-identity", check_excursion_identity),
        ("invariant-measure", check_invariant_measure),
        ("mixing-couplings", check_mixing),
        ("slt-oracle", check_slt_oracle),
        ("confinement-decay", check_confinement),
        ("exit-time-tail", check_exit_time_tail),
        ("gamblers-ruin", check_gambler),
        ("probability-bracket", check_probability_bracket),
        ("coupling-inclusion", check_coupling),
    ]
}

/// Runs every check, collecting failures instead of aborting; returns the
/// complete record.
pub fn run_verification_suite(
    ctx: &SuiteContext,
    selection: Option<&[&str]>,
    mut progress: impl FnMut(&CheckOutcome),
) -> Result<RunRecord> {
    let warnings = ctx.cfg.validate()?;
    let mut record = RunRecord::new(ctx.cfg.hash(), ctx.cfg.master_seed, warnings);
    for (name, check) in full_check_list() {
        if let Some(sel) = selection {
            if !sel.contains(&name) {
                continue;
            }
        }
        let start = std::time::Instant::now();
        let outcome = match check(ctx) {
            Ok(o) => o,
            Err(e) => CheckOutcome::gate(name, false, format!("check errored: {e}"), vec![]),
        };
        record.timings_ms.push((name.to_string(), start.elapsed().as_millis() as u64));
        progress(&outcome);
        record.checks.push(outcome);
    }
    Ok(record)
}

/// Human-readable one-liner per check.
pub fn outcome_line(o: &CheckOutcome) -> String {
    let status = match o.passed {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "INFO",
    };
    format!("[{status}] {}: {} | {}", o.name, o.details, fmt_metrics(&o.metrics))
}
