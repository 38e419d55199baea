//! The stability threshold μ_cr and the ranked verdict built on it.
//!
//! Every cluster mode depends on the network only through its μ, so one
//! threshold μ_cr(ρ, k, τ, τ0) separates stable from unstable clusters for a
//! whole class of grids. [`mu_critical`] finds it numerically;
//! [`mu_cr_lower_bound`] is the closed-form conservative estimate.

use serde::Serialize;

use crate::cluster_spectrum::{max_real_part, ClusterSpectrum, ModeParams};
use crate::error::{GridError, Result};

/// Upper end of the μ search range.
pub const MU_SEARCH_MAX: f64 = 1e4;
/// Absolute bisection tolerance on μ.
pub const MU_TOLERANCE: f64 = 1e-6;
pub const MAX_BISECTIONS: usize = 200;
/// Clusters this close to μ_cr are reported as marginal.
pub const MARGINAL_BAND: f64 = 1e-4;
/// Number of samples used to look for additional crossings below the
/// bracket.
const CROSSING_SAMPLES: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuCritical {
    pub mu_cr: f64,
    /// Largest real part of the cluster modes at `mu_cr`.
    pub residual: f64,
    /// Approximate location of every sign change of max Re λ(μ) seen while
    /// sampling. More than one entry means several stability windows.
    pub crossings: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Closed-form lower bound on μ_cr.
pub fn mu_cr_lower_bound(rho: f64, k: f64) -> Result<f64> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(GridError::Domain(format!(
            "lower bound requires rho > 0 (got {rho}); the lossless case is outside its domain"
        )));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(GridError::Domain(format!("k must be > 0, got {k}")));
    }
    let r2 = rho * rho + 1.0;
    if k > 0.5 * rho * r2 {
        Ok(r2 * r2 / (4.0 * rho))
    } else {
        Ok(k * r2 / (2.0 * rho * rho))
    }
}

/// Smallest μ > 0 at which the largest real part of the cluster modes
/// crosses zero.
pub fn mu_critical(p: &ModeParams) -> Result<MuCritical> {
    let unstable = |mu: f64| -> Result<bool> { Ok(max_real_part(mu, p)? >= 0.0) };

    let start = mu_cr_lower_bound(p.rho, p.k).unwrap_or(1e-3).max(1e-3);
    let mut hi = start;
    while !unstable(hi)? {
        if hi >= MU_SEARCH_MAX {
            return Err(GridError::NoBoundary(MU_SEARCH_MAX));
        }
        hi = (hi * 2.0).min(MU_SEARCH_MAX);
    }

    // sample (0, hi] for the first upward crossing and any later ones
    let mut crossings = Vec::new();
    let mut bracket = None;
    let mut prev = (0.0, false);
    for j in 1..=CROSSING_SAMPLES {
        let mu = hi * j as f64 / CROSSING_SAMPLES as f64;
        let state = unstable(mu)?;
        if state != prev.1 {
            crossings.push(0.5 * (prev.0 + mu));
            if state && bracket.is_none() {
                bracket = Some((prev.0, mu));
            }
        }
        prev = (mu, state);
    }
    let (mut lo, mut up) = bracket.expect("hi is unstable, so a crossing exists");

    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + up);
        if mid <= lo || mid >= up {
            break;
        }
        if unstable(mid)? {
            up = mid;
        } else {
            lo = mid;
        }
        if up - lo <= 1e-14 * up {
            break;
        }
    }
    let mu_cr = 0.5 * (lo + up);
    debug_assert!(up - lo <= MU_TOLERANCE);
    let residual = max_real_part(mu_cr, p)?;

    let mut warnings = Vec::new();
    if crossings.len() > 1 {
        let list: Vec<String> = crossings.iter().map(|c| format!("{c:.4}")).collect();
        warnings.push(format!(
            "several stability crossings found ({}); reporting the first",
            list.join(", ")
        ));
    }
    if let Ok(lb) = mu_cr_lower_bound(p.rho, p.k) {
        if lb > mu_cr + MU_TOLERANCE {
            warnings.push(format!("closed-form lower bound {lb:.4} exceeds mu_cr {mu_cr:.4}"));
        }
    }
    Ok(MuCritical {
        mu_cr,
        residual,
        crossings,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterStatus {
    Stable,
    Marginal,
    Unstable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterRecord {
    /// Position in the ascending spectrum.
    pub index: usize,
    pub mu: f64,
    pub margin: f64,
    pub status: ClusterStatus,
    /// Row positions of the member inverters in the reduced network.
    pub members: Vec<usize>,
    pub member_ids: Vec<String>,
    pub psi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub mu_cr: f64,
    pub mu_cr_lower_bound: Option<f64>,
    /// Clusters by descending μ.
    pub clusters: Vec<ClusterRecord>,
    pub stable: bool,
    pub unstable_count: usize,
    pub marginal_count: usize,
}

impl StabilityVerdict {
    /// Unstable and marginal clusters, most critical first.
    pub fn critical(&self) -> impl Iterator<Item = &ClusterRecord> {
        self.clusters
            .iter()
            .filter(|c| c.status != ClusterStatus::Stable)
    }
}

/// Compares every μ_i with μ_cr. `labels` names the rows of the reduced
/// network (bus ids).
pub fn assess(
    spectrum: &ClusterSpectrum,
    mu_cr: f64,
    threshold: f64,
    labels: &[String],
) -> StabilityVerdict {
    let mut clusters: Vec<ClusterRecord> = (0..spectrum.len())
        .map(|i| {
            let mu = spectrum.mu[i];
            let margin = mu_cr - mu;
            let status = if margin.abs() < MARGINAL_BAND {
                ClusterStatus::Marginal
            } else if mu > mu_cr {
                ClusterStatus::Unstable
            } else {
                ClusterStatus::Stable
            };
            let members = spectrum.members(i, threshold);
            let member_ids = members
                .iter()
                .map(|&j| labels.get(j).cloned().unwrap_or_else(|| j.to_string()))
                .collect();
            ClusterRecord {
                index: i,
                mu,
                margin,
                status,
                members,
                member_ids,
                psi: spectrum.psi.column(i).iter().copied().collect(),
            }
        })
        .collect();
    clusters.sort_by(|a, b| b.mu.total_cmp(&a.mu).then(b.index.cmp(&a.index)));
    let unstable_count = clusters
        .iter()
        .filter(|c| c.status == ClusterStatus::Unstable)
        .count();
    let marginal_count = clusters
        .iter()
        .filter(|c| c.status == ClusterStatus::Marginal)
        .count();
    StabilityVerdict {
        mu_cr,
        mu_cr_lower_bound: None,
        clusters,
        stable: unstable_count == 0 && marginal_count == 0,
        unstable_count,
        marginal_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster_spectrum::{cluster_modes, spectrum, DroopMatrix};
    use nalgebra::DMatrix;
    use std::f64::consts::PI;

    fn two_area_params() -> ModeParams {
        ModeParams::from_frequencies(1.4, 3.0, 2.0 * PI * 5.0, 2.0 * PI * 50.0).unwrap()
    }

    #[test]
    fn lower_bound_branches() {
        let lb = mu_cr_lower_bound(1.4, 3.0).unwrap();
        assert!((lb - 2.96 * 2.96 / 5.6).abs() < 1e-12);
        assert!((lb - 1.5646).abs() < 1e-3);
        let lb = mu_cr_lower_bound(1.4, 1.0).unwrap();
        assert!((lb - 2.96 / 3.92).abs() < 1e-12);
        assert!((lb - 0.7551).abs() < 1e-4);
        // branch point k = ρ(ρ²+1)/2 = 1 at ρ = 1
        let at = mu_cr_lower_bound(1.0, 1.0).unwrap();
        let above = mu_cr_lower_bound(1.0, 1.0 + 1e-12).unwrap();
        assert!((at - 1.0).abs() < 1e-12 && (above - 1.0).abs() < 1e-12);
        assert!(mu_cr_lower_bound(0.0, 3.0).is_err());
    }

    #[test]
    fn two_area_threshold() {
        let p = two_area_params();
        let cr = mu_critical(&p).unwrap();
        assert!((cr.mu_cr - 1.97).abs() < 0.1, "{}", cr.mu_cr);
        assert!(cr.mu_cr >= 1.5646);
        assert!(cr.residual.abs() <= 1e-8 / p.tau0);
        assert!(cr.warnings.is_empty(), "{:?}", cr.warnings);
        let below = cluster_modes(cr.mu_cr * (1.0 - 1e-3), &p).unwrap();
        assert!(below.iter().all(|l| l.re < 0.0));
        let above = cluster_modes(cr.mu_cr * (1.0 + 1e-3), &p).unwrap();
        assert!(above[0].re > 0.0);
    }

    fn diag_spectrum(mu: &[f64]) -> ClusterSpectrum {
        let v = mu.len();
        let c = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(mu));
        spectrum(&c, &DroopMatrix::from_diagonal(vec![1.0; v]).unwrap()).unwrap()
    }

    fn labels(n: usize) -> Vec<String> {
        (1..=n).map(|i| i.to_string()).collect()
    }

    #[test]
    fn single_inverter_is_stable_with_full_margin() {
        let v = assess(&diag_spectrum(&[0.0]), 1.97, 0.3, &labels(1));
        assert!(v.stable);
        assert_eq!(v.clusters[0].margin, 1.97);
    }

    #[test]
    fn counts_unstable_clusters() {
        let v = assess(&diag_spectrum(&[0.0, 2.5, 2.1, 1.0]), 1.97, 0.3, &labels(4));
        assert!(!v.stable);
        assert_eq!(v.unstable_count, 2);
        let mus: Vec<f64> = v.clusters.iter().map(|c| c.mu).collect();
        assert_eq!(mus, vec![2.5, 2.1, 1.0, 0.0]);
        assert_eq!(v.critical().count(), 2);
        assert_eq!(v.clusters[0].member_ids, vec!["2"]);
    }

    #[test]
    fn marginal_band() {
        let v = assess(&diag_spectrum(&[0.0, 1.97 + 5e-5]), 1.97, 0.3, &labels(2));
        assert!(!v.stable);
        assert_eq!(v.marginal_count, 1);
        assert_eq!(v.unstable_count, 0);
        assert_eq!(v.clusters[0].status, ClusterStatus::Marginal);
    }
}
