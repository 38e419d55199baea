//! First-order sensitivities of the eigenvalues μ_i of C = M𝓑 to line
//! lengths and frequency droops.
//!
//! Both are the exact eigenvalue perturbation φᵀ(∂C/∂p)ψ / (φᵀψ) of the
//! matrix C as it is built, (1+ρ²) factor included. With φ = M⁻¹ψ:
//!
//! ```text
//! ∂μ/∂l_e = −(1+ρ²)(ψ_i − ψ_j)² / (X_e·l_e · Σψ²/m)
//! ∂μ/∂m_k = φ_k (𝓑ψ)_k / (φᵀψ)          (= μ·φ_k² / φᵀψ)
//! ```
//!
//! so Σ m_k ∂μ/∂m_k = μ.

use std::fmt;

use nalgebra::DVector;
use serde::Serialize;

use crate::cluster_spectrum::{network_spectrum, ClusterSpectrum};
use crate::error::{GridError, Result};
use crate::grid_model::PuNetwork;
use crate::network_reduction::{reduce_to_inverters, LoadMode, ReducedNetwork};

/// Largest relative finite-difference step.
pub const FD_STEP: f64 = 1e-2;
/// Smallest relative finite-difference step.
pub const FD_MIN_STEP: f64 = 1e-8;
/// Overlap below which a perturbed eigenvector is not considered the same mode.
const TRACKING_OVERLAP: f64 = 0.99;

/// A tunable scalar of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Parameter {
    /// Length (km) of line `index` in `PuNetwork::lines`.
    Length { index: usize },
    /// Frequency droop m of the inverter at bus `index`.
    Droop { index: usize },
}

impl Parameter {
    /// Parses `line:<a>-<b>` (alias `l:`) or `droop:<bus>` (alias `m:`).
    pub fn resolve(network: &PuNetwork, path: &str) -> Result<Self> {
        let not_found = || GridError::ParameterNotFound(path.to_string());
        let (kind, rest) = path.split_once(':').ok_or_else(not_found)?;
        match kind {
            "line" | "l" => {
                // bus ids may themselves contain '-', so try every split
                for (pos, _) in rest.match_indices('-') {
                    let (a, b) = (&rest[..pos], &rest[pos + 1..]);
                    if let (Some(a), Some(b)) = (network.bus_index(a), network.bus_index(b)) {
                        if let Some(index) = network.line_index(a, b) {
                            return Ok(Parameter::Length { index });
                        }
                    }
                }
                Err(not_found())
            }
            "droop" | "m" => {
                let index = network.bus_index(rest).ok_or_else(not_found)?;
                if network.droop(index).is_none() {
                    return Err(GridError::ParameterNotFound(format!(
                        "{path}: bus \"{rest}\" has no inverter"
                    )));
                }
                Ok(Parameter::Droop { index })
            }
            _ => Err(not_found()),
        }
    }

    pub fn value(&self, network: &PuNetwork) -> f64 {
        match *self {
            Parameter::Length { index } => network.lines[index].length_km,
            Parameter::Droop { index } => network.droop(index).map_or(f64::NAN, |d| d.m),
        }
    }

    /// Sets the parameter. Droop changes keep m/n fixed.
    pub fn apply(&self, network: &mut PuNetwork, value: f64) -> Result<()> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(GridError::InvalidValue {
                field: self.label(network),
                reason: format!("must be > 0, got {value}"),
            });
        }
        match *self {
            Parameter::Length { index } => {
                network.lines[index].set_length(value);
                Ok(())
            }
            Parameter::Droop { index } => network.set_frequency_droop(index, value, true),
        }
    }

    pub fn label(&self, network: &PuNetwork) -> String {
        match *self {
            Parameter::Length { index } => {
                let l = &network.lines[index];
                format!("l_{}-{}", network.buses[l.from].id, network.buses[l.to].id)
            }
            Parameter::Droop { index } => format!("m_{}", network.buses[index].id),
        }
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Parameter::Length { index } => write!(f, "line #{index}"),
            Parameter::Droop { index } => write!(f, "droop at bus #{index}"),
        }
    }
}

fn require_simple(spectrum: &ClusterSpectrum, i: usize) -> Result<()> {
    if i >= spectrum.len() {
        return Err(GridError::Dimension(format!(
            "cluster {i} requested, spectrum has {}",
            spectrum.len()
        )));
    }
    if spectrum.is_degenerate(i) {
        return Err(GridError::Degenerate(i));
    }
    Ok(())
}

fn weighted_norm(spectrum: &ClusterSpectrum, i: usize) -> f64 {
    // φᵀψ = Σ ψ_k² / m_k
    spectrum
        .psi
        .column(i)
        .iter()
        .zip(spectrum.phi.column(i).iter())
        .map(|(a, b)| a * b)
        .sum()
}

/// ∂μ_i/∂l_e in 1/km.
pub fn dmu_dlength(
    spectrum: &ClusterSpectrum,
    network: &PuNetwork,
    reduced: &ReducedNetwork,
    i: usize,
    line: usize,
) -> Result<f64> {
    require_simple(spectrum, i)?;
    let l = network
        .lines
        .get(line)
        .ok_or_else(|| GridError::ParameterNotFound(format!("line #{line}")))?;
    let (Some(a), Some(b)) = (reduced.position(l.from), reduced.position(l.to)) else {
        return Err(GridError::EliminatedLine(line));
    };
    let psi = spectrum.psi.column(i);
    let diff = psi[a] - psi[b];
    let r2 = 1.0 + reduced.rho * reduced.rho;
    // d(1/X)/dl = −1/(X·l) with X proportional to l
    let db = -1.0 / (l.x_pu * l.length_km);
    Ok(r2 * db * diff * diff / weighted_norm(spectrum, i))
}

/// ∂μ_i/∂m at the inverter of `bus` (an index into `network.buses`).
pub fn dmu_ddroop(spectrum: &ClusterSpectrum, reduced: &ReducedNetwork, i: usize, bus: usize) -> Result<f64> {
    require_simple(spectrum, i)?;
    let k = reduced
        .position(bus)
        .ok_or_else(|| GridError::ParameterNotFound(format!("bus #{bus} is not an inverter row")))?;
    let bb_psi: DVector<f64> = reduced.scaled() * spectrum.psi(i);
    Ok(spectrum.phi[(k, i)] * bb_psi[k] / weighted_norm(spectrum, i))
}

/// Derivative of μ_i with respect to any [`Parameter`].
pub fn dmu_dparameter(
    spectrum: &ClusterSpectrum,
    network: &PuNetwork,
    reduced: &ReducedNetwork,
    i: usize,
    p: Parameter,
) -> Result<f64> {
    match p {
        Parameter::Length { index } => dmu_dlength(spectrum, network, reduced, i, index),
        Parameter::Droop { index } => dmu_ddroop(spectrum, reduced, i, index),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedParameter {
    pub parameter: Parameter,
    pub label: String,
    pub value: f64,
    pub derivative: f64,
    /// p·∂μ/∂p: change of μ per unit relative change of p.
    pub elasticity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub parameter: Parameter,
    pub label: String,
    pub value: f64,
    /// One entry per cluster in ascending-μ order; `None` where μ_i is
    /// degenerate.
    pub dmu: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub mu: Vec<f64>,
    /// Retained lines only.
    pub lines: Vec<SensitivityRow>,
    pub droops: Vec<SensitivityRow>,
    /// Cluster the ranking refers to.
    pub cluster: usize,
    /// Parameters of `cluster` by descending |elasticity|.
    pub ranking: Vec<RankedParameter>,
}

pub fn sensitivity_report(
    network: &PuNetwork,
    reduced: &ReducedNetwork,
    spectrum: &ClusterSpectrum,
    cluster: usize,
) -> Result<SensitivityReport> {
    require_simple(spectrum, cluster)?;
    let row = |p: Parameter| -> Result<SensitivityRow> {
        let dmu = (0..spectrum.len())
            .map(|i| match dmu_dparameter(spectrum, network, reduced, i, p) {
                Ok(d) => Ok(Some(d)),
                Err(GridError::Degenerate(_)) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SensitivityRow {
            parameter: p,
            label: p.label(network),
            value: p.value(network),
            dmu,
        })
    };
    let mut lines = Vec::new();
    for (index, l) in network.lines.iter().enumerate() {
        if reduced.position(l.from).is_some() && reduced.position(l.to).is_some() {
            lines.push(row(Parameter::Length { index })?);
        }
    }
    let droops = reduced
        .retained
        .iter()
        .map(|&index| row(Parameter::Droop { index }))
        .collect::<Result<Vec<_>>>()?;

    let mut ranking: Vec<RankedParameter> = lines
        .iter()
        .chain(&droops)
        .map(|r| {
            let d = r.dmu[cluster].expect("cluster checked non-degenerate");
            RankedParameter {
                parameter: r.parameter,
                label: r.label.clone(),
                value: r.value,
                derivative: d,
                elasticity: r.value * d,
            }
        })
        .collect();
    ranking.sort_by(|a, b| b.elasticity.abs().total_cmp(&a.elasticity.abs()));
    Ok(SensitivityReport {
        mu: spectrum.mu.clone(),
        lines,
        droops,
        cluster,
        ranking,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdCheck {
    pub analytic: f64,
    pub numeric: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    /// Relative step that was finally used.
    pub step: f64,
}

impl FdCheck {
    /// Relative agreement, or absolute agreement when the derivative is
    /// below `small`.
    pub fn agrees(&self, rel_tol: f64, abs_tol: f64, small: f64) -> bool {
        if self.analytic.abs() < small && self.numeric.abs() < small {
            self.abs_err <= abs_tol
        } else {
            self.rel_err <= rel_tol
        }
    }
}

/// Index of the perturbed eigenpair that continues `psi`, judged by overlap
/// in the M⁻¹ inner product. `None` when no unambiguous match exists.
pub fn track(psi: &DVector<f64>, m_inv: &[f64], candidates: &ClusterSpectrum) -> Option<usize> {
    let ip = |a: &DVector<f64>, b: &DVector<f64>| -> f64 {
        a.iter().zip(b.iter()).zip(m_inv).map(|((x, y), w)| x * y * w).sum()
    };
    let self_norm = ip(psi, psi).sqrt();
    let mut overlaps: Vec<(usize, f64)> = (0..candidates.len())
        .map(|j| {
            let c = candidates.psi(j);
            (j, ip(psi, &c).abs() / (self_norm * ip(&c, &c).sqrt()))
        })
        .collect();
    overlaps.sort_by(|a, b| b.1.total_cmp(&a.1));
    let best = overlaps.first()?;
    let second = overlaps.get(1).map_or(0.0, |o| o.1);
    if best.1 >= TRACKING_OVERLAP && second < 0.5 {
        Some(best.0)
    } else {
        None
    }
}

/// Central finite difference of μ_i with respect to `p`.
///
/// The five-point stencil is evaluated on a decade ladder of relative steps
/// from `FD_STEP` down to `FD_MIN_STEP`; steps where the perturbed mode
/// cannot be tracked are skipped. The estimate returned is the one that
/// agrees best with its neighbour on the ladder, which balances truncation
/// against eigenvalue round-off without knowing either in advance.
pub fn finite_diff_check(network: &PuNetwork, mode: LoadMode, i: usize, p: Parameter) -> Result<FdCheck> {
    let reduced = reduce_to_inverters(network, mode)?;
    let base = network_spectrum(network, &reduced)?;
    let analytic = dmu_dparameter(&base, network, &reduced, i, p)?;
    let psi = base.psi(i);
    let m_inv: Vec<f64> = base.droop.diagonal().iter().map(|m| 1.0 / m).collect();
    let p0 = p.value(network);

    let sample = |value: f64| -> Result<Option<f64>> {
        let mut net = network.clone();
        p.apply(&mut net, value)?;
        let red = reduce_to_inverters(&net, mode)?;
        let spec = network_spectrum(&net, &red)?;
        Ok(track(&psi, &m_inv, &spec).map(|j| spec.mu[j]))
    };
    // (step, estimate), None where tracking failed
    let mut ladder: Vec<(f64, Option<f64>)> = Vec::new();
    let mut step = FD_STEP;
    while step >= FD_MIN_STEP * (1.0 - 1e-9) {
        let h = step * p0;
        let points = (
            sample(p0 + h)?,
            sample(p0 - h)?,
            sample(p0 + 2.0 * h)?,
            sample(p0 - 2.0 * h)?,
        );
        let estimate = match points {
            (Some(up), Some(down), Some(up2), Some(down2)) => {
                Some((8.0 * (up - down) - (up2 - down2)) / (12.0 * h))
            }
            _ => None,
        };
        ladder.push((step, estimate));
        step /= 10.0;
    }

    let mut best: Option<(f64, f64, f64)> = None; // (spread, step, estimate)
    for w in ladder.windows(2) {
        if let ((s, Some(a)), (_, Some(b))) = (w[0], w[1]) {
            let spread = (a - b).abs();
            if best.is_none_or(|(d, _, _)| spread < d) {
                best = Some((spread, s, a));
            }
        }
    }
    let (step, numeric) = match best {
        Some((_, s, e)) => (s, e),
        // a single trackable step is still an estimate
        None => ladder
            .iter()
            .find_map(|&(s, e)| e.map(|e| (s, e)))
            .ok_or(GridError::EigenvalueCrossing(i))?,
    };
    let abs_err = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    Ok(FdCheck {
        analytic,
        numeric,
        abs_err,
        rel_err: if scale > 0.0 { abs_err / scale } else { 0.0 },
        step,
    })
}
