//! Full 5v-state linear model and the checks that tie it to the cluster
//! decomposition.
//!
//! State ordering is `[θ, ω, V, I_d, I_q]`, each block of length v. The
//! eigenvalues of A are computed with nalgebra's real Schur decomposition;
//! the cluster modes come from the in-crate companion QR, so the two sides of
//! [`verify_theorem1`] share no eigenvalue code.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use serde::Serialize;

use crate::cluster_spectrum::{cluster_modes, network_spectrum, ModeParams};
use crate::error::{GridError, Result};
use crate::grid_model::PuNetwork;
use crate::network_reduction::{LoadMode, ReducedNetwork};

#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    pub a: DMatrix<f64>,
    pub v: usize,
    pub m: Vec<f64>,
    pub n: Vec<f64>,
    pub omega0: f64,
    pub tau: f64,
    pub tau0: f64,
    pub rho: f64,
    pub bus_ids: Vec<String>,
}

impl StateMatrix {
    pub fn theta(&self, i: usize) -> usize {
        i
    }

    pub fn omega(&self, i: usize) -> usize {
        self.v + i
    }

    pub fn voltage(&self, i: usize) -> usize {
        2 * self.v + i
    }

    pub fn current_d(&self, i: usize) -> usize {
        3 * self.v + i
    }

    pub fn current_q(&self, i: usize) -> usize {
        4 * self.v + i
    }
}

/// A = S⁻¹K with S = diag(1, τ, τ, τ0, τ0) ⊗ I and
///
/// ```text
///     [ 0   1   0   0      0  ]
///     [ 0  -1   0  -ω0·M   0  ]
/// K = [ 0   0  -1   0      N  ]
///     [ 0   0   𝓑  -ρ      1  ]
///     [ 𝓑   0   0  -1     -ρ  ]
/// ```
pub fn assemble_state_matrix(network: &PuNetwork, reduced: &ReducedNetwork) -> Result<StateMatrix> {
    let v = reduced.dim();
    if reduced.b.shape() != (v, v) {
        return Err(GridError::Dimension(format!(
            "B is {:?} but {v} buses are retained",
            reduced.b.shape()
        )));
    }
    let mut m = Vec::with_capacity(v);
    let mut n = Vec::with_capacity(v);
    for &bus in &reduced.retained {
        let d = network.droop(bus).ok_or_else(|| {
            GridError::Dimension(format!(
                "retained bus \"{}\" has no inverter",
                network.buses[bus].id
            ))
        })?;
        m.push(d.m);
        n.push(d.n);
    }
    let (tau, tau0, rho, omega0) = (network.tau, network.tau0, network.rho, network.omega0);
    let bb = reduced.scaled();

    let mut a = DMatrix::zeros(5 * v, 5 * v);
    for i in 0..v {
        let (th, om, vo, id, iq) = (i, v + i, 2 * v + i, 3 * v + i, 4 * v + i);
        a[(th, om)] = 1.0;
        a[(om, om)] = -1.0 / tau;
        a[(om, id)] = -omega0 * m[i] / tau;
        a[(vo, vo)] = -1.0 / tau;
        a[(vo, iq)] = n[i] / tau;
        a[(id, id)] = -rho / tau0;
        a[(id, iq)] = 1.0 / tau0;
        a[(iq, id)] = -1.0 / tau0;
        a[(iq, iq)] = -rho / tau0;
        for j in 0..v {
            a[(id, 2 * v + j)] = bb[(i, j)] / tau0;
            a[(iq, j)] = bb[(i, j)] / tau0;
        }
    }
    Ok(StateMatrix {
        a,
        v,
        m,
        n,
        omega0,
        tau,
        tau0,
        rho,
        bus_ids: reduced
            .retained
            .iter()
            .map(|&b| network.buses[b].id.clone())
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eigen {
    pub values: Vec<Complex64>,
    /// Unit-norm right eigenvectors, one per value.
    pub vectors: Vec<DVector<Complex64>>,
}

const SCHUR_MAX_ITERATIONS: usize = 10_000;

/// Eigenvalues of a real square matrix from its real Schur form.
pub fn eigenvalues_general(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if !a.is_square() {
        return Err(GridError::Dimension(format!("A is {}x{}", a.nrows(), a.ncols())));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(GridError::Domain("A has non-finite entries".into()));
    }
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, SCHUR_MAX_ITERATIONS).ok_or_else(|| {
        GridError::NonConvergence(format!(
            "real Schur iteration exceeded {SCHUR_MAX_ITERATIONS} sweeps on a {}x{} matrix",
            a.nrows(),
            a.ncols()
        ))
    })?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Eigenvalues and eigenvectors. Vectors come from shifted inverse iteration
/// on each eigenvalue; repeated eigenvalues may share a vector.
pub fn eig_general(a: &DMatrix<f64>) -> Result<Eigen> {
    let values = eigenvalues_general(a)?;
    let n = a.nrows();
    let ac: DMatrix<Complex64> = a.map(|x| Complex64::new(x, 0.0));
    let norm = a.norm().max(f64::MIN_POSITIVE);
    let mut vectors = Vec::with_capacity(n);
    for &lambda in &values {
        let mut best: Option<(f64, DVector<Complex64>)> = None;
        for attempt in 0..3 {
            let shift = lambda + Complex64::new(1.0, 0.5) * (norm * 1e-13 * 10f64.powi(attempt));
            let mut shifted = ac.clone();
            for i in 0..n {
                shifted[(i, i)] -= shift;
            }
            let lu = shifted.lu();
            let mut x = DVector::from_fn(n, |i, _| Complex64::new(1.0 + 0.1 * i as f64, 0.3));
            for _ in 0..4 {
                match lu.solve(&x) {
                    Some(y) if y.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => {
                        let s = y.norm();
                        if s == 0.0 {
                            break;
                        }
                        x = y.unscale(s);
                    }
                    _ => break,
                }
            }
            let r = (&ac * &x - &x * lambda).norm();
            if best.as_ref().is_none_or(|(br, _)| r < *br) {
                best = Some((r, x));
            }
            if best.as_ref().unwrap().0 <= 1e-10 * norm {
                break;
            }
        }
        let (r, x) = best.unwrap();
        if r > 1e-8 * norm {
            return Err(GridError::NonConvergence(format!(
                "eigenvector for {lambda} has residual {r:e} (partial results discarded)"
            )));
        }
        vectors.push(x);
    }
    Ok(Eigen { values, vectors })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModePair {
    pub oracle: Complex64,
    pub predicted: Complex64,
    /// Position of the source μ in the ascending spectrum.
    pub cluster: usize,
    pub mu: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeMatch {
    pub pairs: Vec<ModePair>,
    pub max_pair_distance: f64,
    pub hausdorff: f64,
}

/// Hausdorff distance between two finite point sets in the complex plane.
pub fn hausdorff(a: &[Complex64], b: &[Complex64]) -> f64 {
    let directed = |x: &[Complex64], y: &[Complex64]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

/// Greedy nearest-neighbour pairing, oracle eigenvalues taken in order of
/// ascending modulus.
pub fn match_modes(oracle: &[Complex64], predicted: &[(Complex64, usize, f64)]) -> ModeMatch {
    let mut order: Vec<usize> = (0..oracle.len()).collect();
    order.sort_by(|&a, &b| oracle[a].norm().total_cmp(&oracle[b].norm()));
    let mut used = vec![false; predicted.len()];
    let mut pairs = Vec::with_capacity(oracle.len());
    for &o in &order {
        let lambda = oracle[o];
        let best = predicted
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .min_by(|a, b| (a.1 .0 - lambda).norm().total_cmp(&(b.1 .0 - lambda).norm()));
        if let Some((j, &(p, cluster, mu))) = best {
            used[j] = true;
            pairs.push(ModePair {
                oracle: lambda,
                predicted: p,
                cluster,
                mu,
                distance: (p - lambda).norm(),
            });
        }
    }
    let predicted_values: Vec<Complex64> = predicted.iter().map(|p| p.0).collect();
    ModeMatch {
        max_pair_distance: pairs.iter().map(|p| p.distance).fold(0.0, f64::max),
        hausdorff: hausdorff(oracle, &predicted_values),
        pairs,
    }
}

/// Every cluster's five modes, tagged with the cluster index and μ.
pub fn predicted_modes(network: &PuNetwork, reduced: &ReducedNetwork) -> Result<Vec<(Complex64, usize, f64)>> {
    let params = ModeParams::from_network(network)?;
    let spec = network_spectrum(network, reduced)?;
    let mut out = Vec::with_capacity(5 * spec.len());
    for (i, &mu) in spec.mu.iter().enumerate() {
        for l in cluster_modes(mu, &params)? {
            out.push((l, i, mu));
        }
    }
    Ok(out)
}

/// Matches eig(A) against the union of all cluster modes.
pub fn verify_theorem1(network: &PuNetwork, reduced: &ReducedNetwork) -> Result<ModeMatch> {
    if network.k.is_none() {
        return Err(GridError::Hypothesis(
            "proportional droops M = kN do not hold".into(),
        ));
    }
    if reduced.load_mode != LoadMode::LinesOnly {
        return Err(GridError::Hypothesis(
            "load shunts break the homogeneous-rho nodal form; use lines-only".into(),
        ));
    }
    let sm = assemble_state_matrix(network, reduced)?;
    let oracle = eigenvalues_general(&sm.a)?;
    let predicted = predicted_modes(network, reduced)?;
    Ok(match_modes(&oracle, &predicted))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma1Entry {
    pub lambda: Complex64,
    /// True where g(λ)h(λ) = 0, a root introduced by clearing denominators.
    pub excluded: bool,
    pub sigma_min: f64,
    /// Sum of the norms of the three terms of the matrix polynomial.
    pub scale: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma1Report {
    pub entries: Vec<Lemma1Entry>,
    /// Largest σ_min / scale over the non-excluded eigenvalues.
    pub max_ratio: f64,
}

/// The matrix `f(λ)τ0M⁻¹ + g(λ)(𝓑 + τ0λ𝓑NM⁻¹) + 𝓑N𝓑` at λ, with its three
/// terms' norms summed as a scale.
pub fn lemma1_matrix(sm: &StateMatrix, bb: &DMatrix<f64>, lambda: Complex64) -> (DMatrix<Complex64>, f64) {
    let v = sm.v;
    let one = Complex64::new(1.0, 0.0);
    let g = one + lambda * sm.tau;
    let h = lambda * sm.tau0 + sm.rho;
    let f = lambda * g * g * (h * h + one);
    let bc = bb.map(|x| Complex64::new(x, 0.0));
    let minv = DMatrix::from_fn(v, v, |i, j| if i == j { one / sm.m[i] } else { Complex64::new(0.0, 0.0) });
    let nm = DMatrix::from_fn(v, v, |i, j| {
        if i == j {
            Complex64::new(sm.n[i] / sm.m[i], 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let nmat = DMatrix::from_fn(v, v, |i, j| {
        if i == j {
            Complex64::new(sm.n[i], 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let t1 = &minv * (f * sm.tau0);
    let t2 = (&bc + &bc * &nm * (lambda * sm.tau0)) * g;
    let t3 = &bc * &nmat * &bc;
    let scale = t1.norm() + t2.norm() + t3.norm();
    (t1 + t2 + t3, scale)
}

pub fn verify_lemma1(network: &PuNetwork, reduced: &ReducedNetwork) -> Result<Lemma1Report> {
    let sm = assemble_state_matrix(network, reduced)?;
    let bb = reduced.scaled();
    let values = eigenvalues_general(&sm.a)?;
    let mut entries = Vec::with_capacity(values.len());
    for lambda in values {
        let g = Complex64::new(1.0, 0.0) + lambda * sm.tau;
        let h = lambda * sm.tau0 + sm.rho;
        let excluded = g.norm() <= 1e-7 * (1.0 + (lambda * sm.tau).norm())
            || h.norm() <= 1e-7 * (sm.rho + (lambda * sm.tau0).norm()).max(1e-300);
        let (p, scale) = lemma1_matrix(&sm, &bb, lambda);
        let sigma_min = p
            .singular_values()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let ratio = if scale > 0.0 { sigma_min / scale } else { 0.0 };
        entries.push(Lemma1Entry {
            lambda,
            excluded,
            sigma_min,
            scale,
            ratio,
        });
    }
    let max_ratio = entries
        .iter()
        .filter(|e| !e.excluded)
        .map(|e| e.ratio)
        .fold(0.0, f64::max);
    Ok(Lemma1Report { entries, max_ratio })
}
