//! One-parameter sweeps of the spectrum and the (ρ, k) map of μ_cr.
//!
//! Points are evaluated in parallel; rows always come back in parameter
//! order. Eigenvalue curves are labelled by following eigenvectors from one
//! point to the next, so a label keeps meaning the same cluster across level
//! crossings.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::mode_params;
use crate::cluster_spectrum::{network_spectrum, ClusterSpectrum, ModeParams};
use crate::error::{GridError, Result};
use crate::grid_model::PuNetwork;
use crate::network_reduction::{reduce_to_inverters, LoadMode};
use crate::sensitivity::Parameter;
use crate::stability_boundary::{mu_cr_lower_bound, mu_critical};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    /// `line:<a>-<b>` or `droop:<bus>`.
    pub parameter: String,
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl SweepSpec {
    /// Parses `<path>=<start>:<stop>:<count>`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || GridError::InvalidValue {
            field: "sweep".into(),
            reason: format!("expected <parameter>=<start>:<stop>:<count>, got \"{s}\""),
        };
        let (parameter, range) = s.rsplit_once('=').ok_or_else(bad)?;
        let parts: Vec<&str> = range.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let spec = SweepSpec {
            parameter: parameter.to_string(),
            start: parts[0].trim().parse().map_err(|_| bad())?,
            stop: parts[1].trim().parse().map_err(|_| bad())?,
            count: parts[2].trim().parse().map_err(|_| bad())?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| GridError::InvalidValue {
            field: format!("sweep {}", self.parameter),
            reason,
        };
        if self.count < 2 {
            return Err(invalid(format!("count must be >= 2, got {}", self.count)));
        }
        if !(self.start > 0.0 && self.stop > 0.0 && self.start.is_finite() && self.stop.is_finite()) {
            return Err(invalid(format!(
                "range must be positive and finite, got {}..{}",
                self.start, self.stop
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        linspace(self.start, self.stop, self.count)
    }
}

pub fn linspace(start: f64, stop: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..count)
            .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    /// Ascending.
    pub mu: Vec<f64>,
    /// μ of each tracked curve; `tracked[c]` follows curve `c`.
    pub tracked: Vec<f64>,
    pub mu_cr: f64,
    pub unstable_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Crossing {
    /// Tracked curve index, or `None` for the largest eigenvalue.
    pub curve: Option<usize>,
    /// Interpolated parameter value where μ − μ_cr changes sign.
    pub value: f64,
    /// True when the curve moves from stable to unstable as the parameter
    /// increases.
    pub destabilizing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub parameter: String,
    pub label: String,
    pub rows: Vec<SweepRow>,
    /// Sign changes of μ_max − μ_cr.
    pub crossings: Vec<Crossing>,
    /// Sign changes of every tracked curve.
    pub curve_crossings: Vec<Crossing>,
}

struct Point {
    value: f64,
    spectrum: ClusterSpectrum,
    mu_cr: f64,
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| GridError::InvalidValue {
            field: "jobs".into(),
            reason: e.to_string(),
        })
}

fn evaluate(base: &PuNetwork, mode: LoadMode, p: Parameter, value: f64, k: Option<f64>) -> Result<Point> {
    let mut net = base.clone();
    p.apply(&mut net, value)?;
    let reduced = reduce_to_inverters(&net, mode)?;
    let spectrum = network_spectrum(&net, &reduced)?;
    let (params, _) = mode_params(&net, k)?;
    let mu_cr = if spectrum.mu.iter().any(|&m| m > 0.0) {
        mu_critical(&params)?.mu_cr
    } else {
        f64::INFINITY
    };
    Ok(Point { value, spectrum, mu_cr })
}

/// Overlap above which a tracked curve's reference eigenvector is refreshed.
const CONFIDENT_OVERLAP: f64 = 0.9;

/// Greedy assignment of the eigenpairs of `next` to curves by descending
/// M⁻¹-overlap with each curve's reference vector. Returns, per curve, the
/// index in `next` and the overlap.
fn assign(reference: &DMatrix<f64>, next: &ClusterSpectrum) -> Vec<(usize, f64)> {
    let v = next.len();
    let w: Vec<f64> = next.droop.diagonal().iter().map(|m| 1.0 / m).collect();
    let norm = |col: nalgebra::DVectorView<f64>| -> f64 {
        col.iter().zip(&w).map(|(x, w)| x * x * w).sum::<f64>().sqrt()
    };
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(v * v);
    for curve in 0..v {
        let a = reference.column(curve);
        for b in 0..v {
            let c = next.psi.column(b);
            let ip: f64 = (0..v).map(|j| a[j] * c[j] * w[j]).sum();
            pairs.push((ip.abs() / (norm(a) * norm(c)), curve, b));
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut out = vec![(usize::MAX, 0.0); v];
    let mut taken = vec![false; v];
    for (overlap, curve, b) in pairs {
        if out[curve].0 == usize::MAX && !taken[b] {
            out[curve] = (b, overlap);
            taken[b] = true;
        }
    }
    out
}

fn sign_changes(values: &[f64], diffs: &[f64], curve: Option<usize>) -> Vec<Crossing> {
    let mut out = Vec::new();
    for i in 1..values.len() {
        let (d0, d1) = (diffs[i - 1], diffs[i]);
        if !(d0.is_finite() && d1.is_finite()) {
            continue;
        }
        if (d0 < 0.0) != (d1 < 0.0) {
            let x = values[i - 1] + (values[i] - values[i - 1]) * d0 / (d0 - d1);
            out.push(Crossing {
                curve,
                value: x,
                destabilizing: d1 >= 0.0,
            });
        }
    }
    out
}

/// Varies one parameter of `network`. `k` overrides the droop ratio when the
/// inverters do not share one.
pub fn run_sweep(
    network: &PuNetwork,
    mode: LoadMode,
    spec: &SweepSpec,
    k: Option<f64>,
    jobs: Option<usize>,
) -> Result<SweepResult> {
    spec.validate()?;
    let p = Parameter::resolve(network, &spec.parameter)?;
    let values = spec.values();
    let points: Vec<Point> = pool(jobs)?.install(|| {
        values
            .par_iter()
            .map(|&x| evaluate(network, mode, p, x, k))
            .collect::<Result<Vec<_>>>()
    })?;

    let v = points[0].spectrum.len();
    // near a level crossing the eigenvectors mix, so curves are compared with
    // their last unambiguous vector rather than the previous point
    let mut reference = points[0].spectrum.psi.clone();
    let mut map: Vec<usize> = (0..v).collect();
    let mut rows = Vec::with_capacity(points.len());
    for (i, pt) in points.iter().enumerate() {
        if i > 0 {
            let assigned = assign(&reference, &pt.spectrum);
            for (curve, &(j, overlap)) in assigned.iter().enumerate() {
                map[curve] = j;
                if overlap >= CONFIDENT_OVERLAP {
                    reference.set_column(curve, &pt.spectrum.psi.column(j));
                }
            }
        }
        let mu = pt.spectrum.mu.clone();
        rows.push(SweepRow {
            value: pt.value,
            tracked: map.iter().map(|&j| mu[j]).collect(),
            unstable_count: mu.iter().filter(|&&m| m > pt.mu_cr).count(),
            mu_cr: pt.mu_cr,
            mu,
        });
    }

    let top: Vec<f64> = rows
        .iter()
        .map(|r| r.mu.last().copied().unwrap_or(0.0) - r.mu_cr)
        .collect();
    let crossings = sign_changes(&values, &top, None);
    let mut curve_crossings = Vec::new();
    for c in 0..v {
        let d: Vec<f64> = rows.iter().map(|r| r.tracked[c] - r.mu_cr).collect();
        curve_crossings.extend(sign_changes(&values, &d, Some(c)));
    }
    curve_crossings.sort_by(|a, b| a.value.total_cmp(&b.value));

    Ok(SweepResult {
        parameter: spec.parameter.clone(),
        label: p.label(network),
        rows,
        crossings,
        curve_crossings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapPoint {
    pub rho: f64,
    pub k: f64,
    pub mu_cr: f64,
    pub lower_bound: f64,
}

/// μ_cr and its closed-form lower bound on a ρ × k grid, row-major in ρ.
pub fn mu_cr_map(rhos: &[f64], ks: &[f64], tau: f64, tau0: f64, jobs: Option<usize>) -> Result<Vec<MapPoint>> {
    let cells: Vec<(f64, f64)> = rhos
        .iter()
        .flat_map(|&r| ks.iter().map(move |&k| (r, k)))
        .collect();
    pool(jobs)?.install(|| {
        cells
            .par_iter()
            .map(|&(rho, k)| {
                let p = ModeParams::new(rho, k, tau, tau0)?;
                Ok(MapPoint {
                    rho,
                    k,
                    mu_cr: mu_critical(&p)?.mu_cr,
                    lower_bound: mu_cr_lower_bound(rho, k)?,
                })
            })
            .collect()
    })
}
