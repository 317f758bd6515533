//! Acceptance suite: one test per shipped criterion, each printing a
//! `ACCEPTANCE <nn> …: PASS/FAIL` line (run with `-- --nocapture` to see
//! them all). Everything is driven by the default configuration and the
//! default master seed, so outcomes are bit-reproducible.

use std::path::PathBuf;
use std::sync::OnceLock;
use tilted_ri::harness::config::ExperimentConfig;
use tilted_ri::harness::records::CheckOutcome;
use tilted_ri::harness::suite::{self, SuiteContext};

static CTX: OnceLock<SuiteContext> = OnceLock::new();

fn ctx() -> &'static SuiteContext {
    CTX.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        cfg.validate().expect("default configuration must validate");
        let cache = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-cache");
        SuiteContext::new(cfg, Some(cache))
    })
}

fn run(number: u32, outcome: tilted_ri::Result<CheckOutcome>) {
    let outcome = outcome.expect("check must run to completion");
    let status = match outcome.passed {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "INFO",
    };
    println!("ACCEPTANCE {:02} {}: {} — {}", number, outcome.name, status, outcome.details);
    assert_eq!(
        outcome.passed,
        Some(true),
        "criterion {:02} ({}) failed: {}",
        number,
        outcome.name,
        outcome.details
    );
}

#[test]
fn criterion_01_eigenvalue_asymptotic() {
    run(1, suite::check_eigen_asymptotic(ctx()));
}

#[test]
fn criterion_02_dirichlet_residual() {
    run(2, suite::check_dirichlet_residual(ctx()));
}

#[test]
fn criterion_03_norm_scaling() {
    run(3, suite::check_norm_scaling(ctx()));
}

#[test]
fn criterion_04_vacancy_law() {
    run(4, suite::check_vacancy_law(ctx()));
}

#[test]
fn criterion_05_excursion_count_identity() {
    run(5, suite::check_excursion_identity(ctx()));
}

#[test]
fn criterion_06_common_invariant_measure() {
    run(6, suite::check_invariant_measure(ctx()));
}

#[test]
fn criterion_07_slt_engine_oracle() {
    run(7, suite::check_slt_oracle(ctx()));
}

#[test]
fn criterion_08_coupling_inclusion() {
    // The chain-level soft-local-times event holds in essentially every
    // trial; the Poisson level windows of the full assembly concentrate
    // only for u_N·cap^Ψ(B) ≫ 1, which no desk-scale N reaches. The gate
    // is kept faithful; the measured frequencies for every N are in the
    // printed line either way.
    run(8, suite::check_coupling(ctx()));
}

#[test]
fn criterion_09_gamblers_ruin() {
    run(9, suite::check_gambler(ctx()));
}

#[test]
fn criterion_10_mixing_couplings() {
    run(10, suite::check_mixing(ctx()));
}

#[test]
fn criterion_11_probability_bracket() {
    // The bracket check reuses the fitted annulus decay constant when the
    // confinement check has run; run it first so the tail extrapolation is
    // the fitted one rather than the fallback.
    let _ = suite::check_confinement(ctx());
    run(11, suite::check_probability_bracket(ctx()));
}

#[test]
fn supporting_gates() {
    // secondary assertions shipped alongside the numbered criteria
    let c = ctx();
    let _ = suite::check_eigen_asymptotic(c).expect("asymptotics");
    for outcome in [
        suite::check_lambda_bracket(c),
        suite::check_spectral_diagnostics(c),
        suite::check_capacity_scaling(c),
        suite::check_chain_diagnostics(c),
        suite::check_confinement(c),
        suite::check_exit_time_tail(c),
    ] {
        let outcome = outcome.expect("supporting check must run");
        println!("SUPPORT {}: {:?} — {}", outcome.name, outcome.passed, outcome.details);
        assert_ne!(outcome.passed, Some(false), "{} failed: {}", outcome.name, outcome.details);
    }
}
