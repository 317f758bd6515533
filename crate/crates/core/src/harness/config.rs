//! Flat key-value experiment configuration: parseable, diffable, hashable.

use crate::lattice::Shape;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub enum ShapeKind {
    Ball,
    Box,
}

/// Everything a run needs. See `to_text` for the on-disk format.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub shape: ShapeKind,
    pub d: usize,
    pub x0: Vec<f64>,
    /// Ball radius fraction α (B has radius αN).
    pub alpha: f64,
    /// Buffer fraction ε (B^ε has radius (α+ε)N; B^{2ε} must fit in D_N).
    pub eps: f64,
    /// Standoff exponent γ: Δ sits at distance N^γ from B.
    pub gamma: f64,
    pub delta: f64,
    pub delta_prime: f64,
    /// Shift fraction for the range window.
    pub beta: f64,
    /// Blowup factors for the chain/coupling checks.
    pub n_list: Vec<u32>,
    /// Blowup factors for the spectral checks.
    pub spectrum_n_list: Vec<u32>,
    /// t_N = ⌈t_factor · N^{2+δ}⌉.
    pub t_factor: f64,
    pub trials: usize,
    pub master_seed: u64,
    /// Escape-sphere radius multiplier for sampling: R = m·(α+ε)N.
    pub r_esc_multiplier: f64,
    /// Multiplier for exact Ψ-walk tables (any radius is self-consistent).
    pub r_table_multiplier: f64,
    pub solver_tol: f64,
    pub eigen_tol: f64,
    /// Floor for the reference measure μ over Σ.
    pub eta_mu: f64,
    /// Tail truncation for probability-bracket sums.
    pub k_max: usize,
    /// Universal constants (C, c) used when evaluating the coupling failure
    /// bound; reported, never asserted.
    pub bound_big_c: f64,
    pub bound_small_c: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            shape: ShapeKind::Ball,
            d: 3,
            x0: vec![0.0; 3],
            alpha: 0.2,
            eps: 0.4,
            gamma: 0.4,
            delta: 0.5,
            delta_prime: 0.45,
            beta: 0.02,
            n_list: vec![8, 12, 16],
            spectrum_n_list: vec![8, 16, 24, 32],
            t_factor: 2.0,
            trials: 100,
            master_seed: 42,
            r_esc_multiplier: 10.0,
            r_table_multiplier: 6.0,
            solver_tol: 1e-12,
            eigen_tol: 1e-12,
            eta_mu: 1e-9,
            k_max: 20,
            bound_big_c: 10.0,
            bound_small_c: 0.01,
        }
    }
}

impl ExperimentConfig {
    pub fn shape(&self) -> Shape {
        match self.shape {
            ShapeKind::Ball => Shape::Ball { center: self.x0.clone(), radius: 1.0 },
            ShapeKind::Box => {
                Shape::AxisBox { center: self.x0.clone(), half_widths: vec![1.0; self.d] }
            }
        }
    }

    pub fn t_n(&self, n: u32) -> usize {
        (self.t_factor * (n as f64).powf(2.0 + self.delta)).ceil() as usize
    }

    pub fn eps_n(&self, n: u32) -> f64 {
        ((n as f64).powf(2.0 + self.delta_prime) / self.t_n(n) as f64).sqrt()
    }

    pub fn esc_radius(&self, n: u32) -> f64 {
        self.r_esc_multiplier * (self.alpha + self.eps) * n as f64
    }

    pub fn table_radius(&self, n: u32) -> f64 {
        self.r_table_multiplier * (self.alpha + self.eps) * n as f64
    }

    /// Hard validation plus theorem-regime warnings. Structural
    /// impossibilities error; asymptotic-regime violations (which no desk
    /// N can satisfy) are returned as warnings for the run record.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.d < 3 {
            return Err(Error::Config("dimension must be ≥ 3".into()));
        }
        if self.x0.len() != self.d {
            return Err(Error::Config("x0 has the wrong dimension".into()));
        }
        if !(self.alpha > 0.0 && self.eps > 0.0) {
            return Err(Error::Config("α and ε must be positive".into()));
        }
        if self.alpha + 2.0 * self.eps > 1.0 {
            return Err(Error::Config("B^{2ε} must fit inside the domain: α + 2ε ≤ 1".into()));
        }
        if !(0.0 < self.delta_prime && self.delta_prime < self.delta && self.delta < 1.0) {
            return Err(Error::Config("need 0 < δ′ < δ < 1".into()));
        }
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return Err(Error::Config("γ must lie in (0,1)".into()));
        }
        if self.beta <= 0.0 {
            return Err(Error::Config("β must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be ≥ 1".into()));
        }
        if self.n_list.is_empty() || self.spectrum_n_list.len() < 2 {
            return Err(Error::Config("need N lists (≥2 spectral factors)".into()));
        }
        let mut warnings = Vec::new();
        let gamma_floor = 1.0 - self.delta_prime / (2.0 * (self.d as f64 - 1.0));
        if self.gamma <= gamma_floor {
            warnings.push(format!(
                "γ = {} is below the theorem-regime bound {:.4}; desk-scale geometry \
                 cannot satisfy it, coupling rates are reported not asserted",
                self.gamma, gamma_floor
            ));
        }
        Ok(warnings)
    }

    /// Canonical flat text form (also the hashing base).
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let joinu = |v: &[u32]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "shape = {}\nd = {}\nx0 = {}\nalpha = {}\neps = {}\ngamma = {}\ndelta = {}\n\
             delta_prime = {}\nbeta = {}\nn_list = {}\nspectrum_n_list = {}\nt_factor = {}\n\
             trials = {}\nmaster_seed = {}\nr_esc_multiplier = {}\nr_table_multiplier = {}\n\
             solver_tol = {}\neigen_tol = {}\neta_mu = {}\nk_max = {}\nbound_big_c = {}\n\
             bound_small_c = {}\n",
            match self.shape {
                ShapeKind::Ball => "ball",
                ShapeKind::Box => "box",
            },
            self.d,
            join(&self.x0),
            self.alpha,
            self.eps,
            self.gamma,
            self.delta,
            self.delta_prime,
            self.beta,
            joinu(&self.n_list),
            joinu(&self.spectrum_n_list),
            self.t_factor,
            self.trials,
            self.master_seed,
            self.r_esc_multiplier,
            self.r_table_multiplier,
            self.solver_tol,
            self.eigen_tol,
            self.eta_mu,
            self.k_max,
            self.bound_big_c,
            self.bound_small_c,
        )
    }

    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_text().as_bytes());
        let d = hasher.finalize();
        hex_string(&d[..16])
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            let fp = |v: &str| -> Result<f64> {
                v.parse::<f64>().map_err(|e| Error::Config(format!("{key}: {e}")))
            };
            match key {
                "shape" => {
                    cfg.shape = match value {
                        "ball" => ShapeKind::Ball,
                        "box" => ShapeKind::Box,
                        other => return Err(Error::Config(format!("unknown shape {other}"))),
                    }
                }
                "d" => cfg.d = fp(value)? as usize,
                "x0" => {
                    cfg.x0 = value
                        .split(',')
                        .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Config(e.to_string())))
                        .collect::<Result<_>>()?
                }
                "alpha" => cfg.alpha = fp(value)?,
                "eps" => cfg.eps = fp(value)?,
                "gamma" => cfg.gamma = fp(value)?,
                "delta" => cfg.delta = fp(value)?,
                "delta_prime" => cfg.delta_prime = fp(value)?,
                "beta" => cfg.beta = fp(value)?,
                "n_list" => cfg.n_list = parse_u32_list(value)?,
                "spectrum_n_list" => cfg.spectrum_n_list = parse_u32_list(value)?,
                "t_factor" => cfg.t_factor = fp(value)?,
                "trials" => cfg.trials = fp(value)? as usize,
                "master_seed" => {
                    cfg.master_seed =
                        value.parse::<u64>().map_err(|e| Error::Config(e.to_string()))?
                }
                "r_esc_multiplier" => cfg.r_esc_multiplier = fp(value)?,
                "r_table_multiplier" => cfg.r_table_multiplier = fp(value)?,
                "solver_tol" => cfg.solver_tol = fp(value)?,
                "eigen_tol" => cfg.eigen_tol = fp(value)?,
                "eta_mu" => cfg.eta_mu = fp(value)?,
                "k_max" => cfg.k_max = fp(value)? as usize,
                "bound_big_c" => cfg.bound_big_c = fp(value)?,
                "bound_small_c" => cfg.bound_small_c = fp(value)?,
                other => return Err(Error::Config(format!("unknown key {other}"))),
            }
        }
        Ok(cfg)
    }
}

fn parse_u32_list(value: &str) -> Result<Vec<u32>> {
    value
        .split(',')
        .map(|s| s.trim().parse::<u32>().map_err(|e| Error::Config(e.to_string())))
        .collect()
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{:02x}", b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip_preserves_hash() {
        let cfg = ExperimentConfig::default();
        let parsed = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(cfg.hash(), parsed.hash());
    }

    #[test]
    fn default_config_validates_with_regime_warning() {
        let cfg = ExperimentConfig::default();
        let warnings = cfg.validate().unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("theorem-regime"));
    }

    #[test]
    fn structural_errors_are_hard() {
        let mut cfg = ExperimentConfig::default();
        cfg.delta_prime = 0.9;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.eps = 0.5;
        assert!(cfg.validate().is_err());
    }
}
