//! Disk caches for eigenpairs and capacity brackets, in the shared text
//! format family, keyed by content hashes so runs can be reloaded
//! bit-exactly.

use crate::harness::config::hex_string;
use crate::lattice::{LatticeDomain, Point};
use crate::spectrum::{export_eigenpair, load_eigenpair, EigenPair};
use crate::Result;
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub fn shape_key(shape_text: &str, d: usize, n: u32, tol: f64) -> String {
    let mut h = Sha256::new();
    h.update(shape_text.as_bytes());
    h.update(d.to_le_bytes());
    h.update(n.to_le_bytes());
    h.update(tol.to_le_bytes());
    hex_string(&h.finalize()[..12])
}

pub fn points_key(points: &[Point]) -> String {
    let mut h = Sha256::new();
    for p in points {
        for c in p.0.iter() {
            h.update(c.to_le_bytes());
        }
        h.update([0xffu8]);
    }
    hex_string(&h.finalize()[..12])
}

/// Loads a cached eigenpair or computes and stores it.
pub fn eigenpair_cached(
    cache_dir: Option<&Path>,
    key: &str,
    domain: Arc<LatticeDomain>,
    compute: impl FnOnce(Arc<LatticeDomain>) -> Result<EigenPair>,
) -> Result<Arc<EigenPair>> {
    let path: Option<PathBuf> = cache_dir.map(|d| d.join(format!("eigen-{key}.txt")));
    if let Some(p) = &path {
        if p.exists() {
            let file = fs::File::open(p)?;
            if let Ok(pair) = load_eigenpair(domain.clone(), &mut BufReader::new(file)) {
                return Ok(Arc::new(pair));
            }
        }
    }
    let pair = compute(domain)?;
    if let Some(p) = &path {
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut buf = Vec::new();
        export_eigenpair(&pair, &mut buf)?;
        fs::write(p, buf)?;
    }
    Ok(Arc::new(pair))
}

/// Capacity-bracket cache entry: `lower upper` plus per-point weights.
pub fn capacity_cached(
    cache_dir: Option<&Path>,
    key: &str,
    compute: impl FnOnce() -> Result<(f64, f64)>,
) -> Result<(f64, f64)> {
    let path: Option<PathBuf> = cache_dir.map(|d| d.join(format!("cap-{key}.txt")));
    if let Some(p) = &path {
        if p.exists() {
            let text = fs::read_to_string(p)?;
            let mut it = text.split_whitespace();
            if let (Some(a), Some(b)) = (it.next(), it.next()) {
                if let (Ok(lo), Ok(hi)) = (a.parse::<f64>(), b.parse::<f64>()) {
                    return Ok((lo, hi));
                }
            }
        }
    }
    let (lo, hi) = compute()?;
    if let Some(p) = &path {
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::File::create(p)?;
        writeln!(f, "{} {}", lo, hi)?;
    }
    Ok((lo, hi))
}
