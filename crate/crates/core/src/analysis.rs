//! End-to-end assessment: threshold, spectrum, verdict and, for unstable
//! grids, the sensitivities of the critical clusters.

use serde::Serialize;

use crate::cluster_spectrum::{network_spectrum, ClusterSpectrum, ModeParams, DEFAULT_MEMBER_THRESHOLD};
use crate::error::{GridError, Result};
use crate::grid_model::PuNetwork;
use crate::network_reduction::{reduce_to_inverters, LoadMode, ReducedNetwork};
use crate::sensitivity::{sensitivity_report, SensitivityReport};
use crate::stability_boundary::{assess, mu_cr_lower_bound, mu_critical, ClusterStatus, MuCritical, StabilityVerdict};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub load_mode: LoadMode,
    pub member_threshold: f64,
    /// Used when the inverters do not share one m/n ratio.
    pub k_override: Option<f64>,
    pub sensitivities: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            load_mode: LoadMode::LinesOnly,
            member_threshold: DEFAULT_MEMBER_THRESHOLD,
            k_override: None,
            sensitivities: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub network: PuNetwork,
    pub reduced: ReducedNetwork,
    pub spectrum: ClusterSpectrum,
    pub params: ModeParams,
    /// `None` when no inverters are coupled, so there is nothing to bound.
    pub threshold: Option<MuCritical>,
    pub verdict: StabilityVerdict,
    pub sensitivities: Vec<SensitivityReport>,
    pub warnings: Vec<String>,
}

/// Serializable summary of an [`Analysis`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisSummary {
    pub bus_ids: Vec<String>,
    pub load_mode: LoadMode,
    pub rho: f64,
    pub k: f64,
    pub omega_c_rad_s: f64,
    pub mu: Vec<f64>,
    /// ψ_i, in the order of `mu`.
    pub psi: Vec<Vec<f64>>,
    /// Member bus ids of each cluster, in the order of `mu`.
    pub members: Vec<Vec<String>>,
    /// Null when no inverters are coupled.
    pub mu_cr: Option<f64>,
    pub mu_cr_lower_bound: Option<f64>,
    pub stable: bool,
    pub unstable_count: usize,
    pub marginal_count: usize,
    pub clusters: Vec<crate::stability_boundary::ClusterRecord>,
    pub sensitivities: Vec<SensitivityReport>,
    pub warnings: Vec<String>,
}

impl Analysis {
    pub fn bus_ids(&self) -> Vec<String> {
        self.reduced
            .retained
            .iter()
            .map(|&b| self.network.buses[b].id.clone())
            .collect()
    }

    /// True when the grid has fewer than two coupled inverters.
    pub fn uncoupled(&self) -> bool {
        self.threshold.is_none()
    }

    /// 0 when stable, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.verdict.stable {
            0
        } else {
            2
        }
    }

    pub fn summary(&self) -> AnalysisSummary {
        AnalysisSummary {
            bus_ids: self.bus_ids(),
            load_mode: self.reduced.load_mode,
            rho: self.params.rho,
            k: self.params.k,
            omega_c_rad_s: 1.0 / self.params.tau,
            mu: self.spectrum.mu.clone(),
            psi: (0..self.spectrum.len())
                .map(|i| self.spectrum.psi.column(i).iter().copied().collect())
                .collect(),
            members: {
                let mut m = vec![Vec::new(); self.spectrum.len()];
                for c in &self.verdict.clusters {
                    m[c.index] = c.member_ids.clone();
                }
                m
            },
            mu_cr: self.threshold.as_ref().map(|t| t.mu_cr),
            mu_cr_lower_bound: self.verdict.mu_cr_lower_bound,
            stable: self.verdict.stable,
            unstable_count: self.verdict.unstable_count,
            marginal_count: self.verdict.marginal_count,
            clusters: self.verdict.clusters.clone(),
            sensitivities: self.sensitivities.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

/// Mode parameters of a network, falling back to `k_override` when the
/// droop ratio is not uniform.
pub fn mode_params(network: &PuNetwork, k_override: Option<f64>) -> Result<(ModeParams, Option<String>)> {
    match (network.k, k_override) {
        (_, Some(k)) => {
            let note = network
                .k
                .filter(|nk| (nk - k).abs() > 1e-9 * k)
                .map(|nk| format!("k = {k} overrides the grid's uniform ratio {nk}"))
                .or_else(|| {
                    network
                        .k
                        .is_none()
                        .then(|| format!("droop ratios differ between inverters; using k = {k}"))
                });
            Ok((ModeParams::new(network.rho, k, network.tau, network.tau0)?, note))
        }
        (Some(_), None) => Ok((ModeParams::from_network(network)?, None)),
        (None, None) => Err(GridError::Hypothesis(
            "droop ratio m/n differs between inverters (M != kN); pass an explicit k".into(),
        )),
    }
}

pub fn analyze(network: &PuNetwork, opts: &AnalysisOptions) -> Result<Analysis> {
    let reduced = reduce_to_inverters(network, opts.load_mode)?;
    let spectrum = network_spectrum(network, &reduced)?;
    let (params, note) = mode_params(network, opts.k_override)?;
    let mut warnings = reduced.warnings.clone();
    warnings.extend(note);

    let labels: Vec<String> = reduced
        .retained
        .iter()
        .map(|&b| network.buses[b].id.clone())
        .collect();
    let coupled = spectrum.mu.iter().any(|&m| m > 0.0);
    let (threshold, mut verdict) = if coupled {
        let t = mu_critical(&params)?;
        warnings.extend(t.warnings.iter().cloned());
        let v = assess(&spectrum, t.mu_cr, opts.member_threshold, &labels);
        (Some(t), v)
    } else {
        (None, assess(&spectrum, f64::INFINITY, opts.member_threshold, &labels))
    };
    verdict.mu_cr_lower_bound = mu_cr_lower_bound(params.rho, params.k).ok();

    let mut sensitivities = Vec::new();
    if opts.sensitivities {
        for c in verdict.clusters.iter().filter(|c| c.status != ClusterStatus::Stable) {
            match sensitivity_report(network, &reduced, &spectrum, c.index) {
                Ok(r) => sensitivities.push(r),
                Err(GridError::Degenerate(i)) => warnings.push(format!(
                    "cluster {i} is degenerate; sensitivities are not reported for it"
                )),
                Err(e) => return Err(e),
            }
        }
    }

    Ok(Analysis {
        network: network.clone(),
        reduced,
        spectrum,
        params,
        threshold,
        verdict,
        sensitivities,
        warnings,
    })
}
