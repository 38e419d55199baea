//! Spectrum of the droop-weighted susceptance matrix C = M(1+ρ²)B.
//!
//! C is not symmetric, but `M^{-1/2} C M^{1/2} = M^{1/2}(1+ρ²)B M^{1/2}` is,
//! so the eigenvalues μ are real and non-negative and can be computed with a
//! symmetric eigensolver. Each μ indexes a cluster: an equivalent two-bus
//! system whose five electromechanical/electromagnetic modes are the roots of
//! a quintic depending only on μ, ρ, k, τ and τ0 (see [`cluster_modes`]).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{GridError, Result};
use crate::grid_model::PuNetwork;
use crate::network_reduction::ReducedNetwork;
use crate::polynomial::Poly;

/// Default membership threshold relative to the largest |ψ| component.
pub const DEFAULT_MEMBER_THRESHOLD: f64 = 0.3;
/// Eigenvalues within this fraction of max μ are treated as one group.
pub const DEGENERACY_TOLERANCE: f64 = 1e-9;
/// Relative size below which a negative eigenvalue is roundoff.
pub const ZERO_CLAMP: f64 = 1e-10;

/// Positive diagonal droop matrix M = diag(m_1, …, m_v).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroopMatrix(Vec<f64>);

impl DroopMatrix {
    pub fn from_diagonal(m: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = m.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(GridError::InvalidDroopMatrix(format!("m[{i}] = {v}")));
        }
        Ok(Self(m))
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(GridError::InvalidDroopMatrix(format!(
                "shape {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        for ((i, j), v) in m.iter().enumerate().map(|(idx, v)| ((idx % m.nrows(), idx / m.nrows()), v)) {
            if i != j && *v != 0.0 {
                return Err(GridError::InvalidDroopMatrix(format!(
                    "off-diagonal entry ({i},{j}) = {v}"
                )));
            }
        }
        Self::from_diagonal(m.diagonal().iter().copied().collect())
    }

    /// Frequency droops of the retained buses of `reduced`.
    pub fn for_network(network: &PuNetwork, reduced: &ReducedNetwork) -> Result<Self> {
        let m = reduced
            .retained
            .iter()
            .map(|&b| {
                network.droop(b).map(|d| d.m).ok_or_else(|| {
                    GridError::Dimension(format!(
                        "retained bus \"{}\" has no inverter",
                        network.buses[b].id
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_diagonal(m)
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.0))
    }
}

/// C = M(1+ρ²)B.
pub fn weighted_susceptance(reduced: &ReducedNetwork, m: &DroopMatrix) -> Result<DMatrix<f64>> {
    if reduced.dim() != m.len() {
        return Err(GridError::Dimension(format!(
            "susceptance is {}x{}, droop matrix has {} entries",
            reduced.dim(),
            reduced.dim(),
            m.len()
        )));
    }
    let mut c = reduced.scaled();
    for (i, mi) in m.diagonal().iter().enumerate() {
        c.row_mut(i).scale_mut(*mi);
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpectrum {
    /// Eigenvalues in ascending order.
    pub mu: Vec<f64>,
    /// Right eigenvectors ψ as columns, unit 2-norm, largest-|·| entry positive.
    pub psi: DMatrix<f64>,
    /// Left eigenvectors φ = M⁻¹ψ as columns.
    pub phi: DMatrix<f64>,
    pub droop: DroopMatrix,
    /// Indices of numerically coincident eigenvalues, ascending.
    pub groups: Vec<Vec<usize>>,
}

impl ClusterSpectrum {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn psi(&self, i: usize) -> DVector<f64> {
        self.psi.column(i).into_owned()
    }

    pub fn phi(&self, i: usize) -> DVector<f64> {
        self.phi.column(i).into_owned()
    }

    pub fn group_of(&self, i: usize) -> &[usize] {
        self.groups
            .iter()
            .find(|g| g.contains(&i))
            .map(Vec::as_slice)
            .expect("every eigenvalue belongs to a group")
    }

    pub fn is_degenerate(&self, i: usize) -> bool {
        self.group_of(i).len() > 1
    }

    /// Members of eigenvalue `i`. For a degenerate group the magnitude of bus
    /// j is the norm of row j of the joint invariant subspace.
    pub fn members(&self, i: usize, threshold: f64) -> Vec<usize> {
        let group = self.group_of(i);
        let weights: Vec<f64> = (0..self.psi.nrows())
            .map(|j| group.iter().map(|&g| self.psi[(j, g)].powi(2)).sum::<f64>().sqrt())
            .collect();
        identify_members(&weights, threshold)
    }
}

/// Eigenpairs of C = M𝓑 through the symmetric matrix S = M^{-1/2} C M^{1/2}.
pub fn spectrum(c: &DMatrix<f64>, m: &DroopMatrix) -> Result<ClusterSpectrum> {
    let v = m.len();
    if c.shape() != (v, v) {
        return Err(GridError::Dimension(format!(
            "C is {}x{}, droop matrix has {v} entries",
            c.nrows(),
            c.ncols()
        )));
    }
    let sqrt_m: Vec<f64> = m.diagonal().iter().map(|x| x.sqrt()).collect();
    let s = DMatrix::from_fn(v, v, |i, j| c[(i, j)] * sqrt_m[j] / sqrt_m[i]);
    let s = (&s + s.transpose()) * 0.5;
    let scale = s.norm().max(f64::MIN_POSITIVE);

    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut mu = Vec::with_capacity(v);
    let mut psi = DMatrix::zeros(v, v);
    for (col, &k) in order.iter().enumerate() {
        let mut value = eig.eigenvalues[k];
        if value < -ZERO_CLAMP * scale {
            return Err(GridError::NegativeSpectrum(value));
        }
        if value.abs() <= ZERO_CLAMP * scale {
            value = 0.0;
        }
        mu.push(value);
        let mut vec = DVector::from_fn(v, |j, _| sqrt_m[j] * eig.eigenvectors[(j, k)]);
        vec /= vec.norm();
        fix_sign(&mut vec);
        psi.set_column(col, &vec);
    }
    let phi = DMatrix::from_fn(v, v, |j, i| psi[(j, i)] / m.diagonal()[j]);

    let max_mu = mu.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..v {
        match groups.last_mut() {
            Some(g) if (mu[i] - mu[*g.last().unwrap()]).abs() < DEGENERACY_TOLERANCE * max_mu => {
                g.push(i)
            }
            _ => groups.push(vec![i]),
        }
    }

    Ok(ClusterSpectrum {
        mu,
        psi,
        phi,
        droop: m.clone(),
        groups,
    })
}

/// Makes the largest-magnitude entry positive (first one on ties).
fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for j in 1..v.len() {
        if v[j].abs() > v[best].abs() * (1.0 + 1e-12) {
            best = j;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Buses whose |ψ_j| reaches `threshold` times the largest |ψ| component.
/// Never empty for a non-empty vector.
pub fn identify_members(psi: &[f64], threshold: f64) -> Vec<usize> {
    let max = psi.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut members: Vec<usize> = psi
        .iter()
        .enumerate()
        .filter(|(_, x)| x.abs() >= threshold * max)
        .map(|(j, _)| j)
        .collect();
    if members.is_empty() && !psi.is_empty() {
        let arg = psi
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(j, _)| j)
            .unwrap();
        members.push(arg);
    }
    members
}

/// Reduces, weights and decomposes a network in one call.
pub fn network_spectrum(network: &PuNetwork, reduced: &ReducedNetwork) -> Result<ClusterSpectrum> {
    let m = DroopMatrix::for_network(network, reduced)?;
    let c = weighted_susceptance(reduced, &m)?;
    spectrum(&c, &m)
}

/// Parameters of the per-cluster characteristic polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeParams {
    pub rho: f64,
    pub k: f64,
    pub tau: f64,
    pub tau0: f64,
}

impl ModeParams {
    pub fn new(rho: f64, k: f64, tau: f64, tau0: f64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(GridError::Domain(format!("rho must be >= 0, got {rho}")));
        }
        for (name, v) in [("k", k), ("tau", tau), ("tau0", tau0)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GridError::Domain(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(Self { rho, k, tau, tau0 })
    }

    /// From the filter and line cut-offs in rad/s.
    pub fn from_frequencies(rho: f64, k: f64, omega_c: f64, omega0: f64) -> Result<Self> {
        Self::new(rho, k, 1.0 / omega_c, 1.0 / omega0)
    }

    pub fn from_network(network: &PuNetwork) -> Result<Self> {
        let k = network.k.ok_or_else(|| {
            GridError::Hypothesis("droop ratio m/n differs between inverters (M != kN)".into())
        })?;
        Self::new(network.rho, k, network.tau, network.tau0)
    }
}

/// The quintic `τ0·k·f(λ) + g(λ)(k + τ0·λ)μ + μ²` with
/// `f = λ g² (h² + 1)`, `g = 1 + τλ`, `h = ρ + τ0λ`.
///
/// The time constant multiplying λ in the first and second terms is the line
/// constant τ0: eliminating the line currents from the state matrix gives
/// `I_d = −(1 + τs)(τ0 s) M⁻¹θ`, since the ω equation carries the factor ω0.
pub fn cluster_polynomial(mu: f64, p: &ModeParams) -> Poly {
    let lambda = Poly::new(vec![0.0, 1.0]);
    let g = Poly::linear(1.0, p.tau);
    let h = Poly::linear(p.rho, p.tau0);
    let h2p1 = &(&h * &h) + &Poly::constant(1.0);
    let f = &(&lambda * &(&g * &g)) * &h2p1;
    let coupling = &g * &Poly::linear(p.k, p.tau0);
    &(&f.scale(p.tau0 * p.k) + &coupling.scale(mu)) + &Poly::constant(mu * mu)
}

/// The five modes of the cluster with eigenvalue `mu`, sorted by real part
/// descending.
pub fn cluster_modes(mu: f64, p: &ModeParams) -> Result<[Complex64; 5]> {
    if mu < 0.0 {
        return Err(GridError::NegativeMu(mu));
    }
    let mut roots = cluster_polynomial(mu, p).roots()?;
    roots.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    roots
        .try_into()
        .map_err(|r: Vec<Complex64>| GridError::Dimension(format!("expected 5 roots, got {}", r.len())))
}

/// Largest real part among the five cluster modes.
pub fn max_real_part(mu: f64, p: &ModeParams) -> Result<f64> {
    Ok(cluster_modes(mu, p)?[0].re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_model::{parse_grid, to_per_unit, PuOptions};
    use crate::network_reduction::{edge_laplacian, reduce_to_inverters, LoadMode};
    use std::f64::consts::PI;

    const KUNDUR4: &str = include_str!("../examples/kundur4.json");

    fn pair(x: f64, rho: f64) -> ReducedNetwork {
        ReducedNetwork {
            b: edge_laplacian(2, [(0, 1, 1.0 / x)]),
            rho,
            retained: vec![0, 1],
            eliminated: vec![],
            load_mode: LoadMode::LinesOnly,
            warnings: vec![],
        }
    }

    fn kundur_spectrum() -> ClusterSpectrum {
        let net = to_per_unit(&parse_grid(KUNDUR4).unwrap(), &PuOptions::default()).unwrap();
        let red = reduce_to_inverters(&net, LoadMode::LinesOnly).unwrap();
        network_spectrum(&net, &red).unwrap()
    }

    #[test]
    fn weighted_pair_matrix() {
        let (m, x, rho) = (0.03, 0.0909, 1.4);
        let red = pair(x, rho);
        let dm = DroopMatrix::from_diagonal(vec![m, m]).unwrap();
        let c = weighted_susceptance(&red, &dm).unwrap();
        let a = (1.0 + rho * rho) * m / x;
        let expected = DMatrix::from_row_slice(2, 2, &[a, -a, -a, a]);
        assert!((c - expected).abs().max() < 1e-12);
    }

    #[test]
    fn identity_weights_give_scaled_b() {
        let red = pair(0.2, 0.5);
        let c = weighted_susceptance(&red, &DroopMatrix::from_diagonal(vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(c, red.scaled());
    }

    #[test]
    fn isolated_pair_spectrum() {
        let (m, x, rho) = (0.03, 0.0909, 1.4);
        let dm = DroopMatrix::from_diagonal(vec![m, m]).unwrap();
        let c = weighted_susceptance(&pair(x, rho), &dm).unwrap();
        let s = spectrum(&c, &dm).unwrap();
        // (1+ρ²)(m1+m2)/X
        let expected = 2.96 * 0.06 / 0.0909;
        assert_eq!(s.mu[0], 0.0);
        assert!((s.mu[1] - expected).abs() < 1e-12);
        assert!((s.mu[1] - 1.96).abs() < 0.01);
    }

    #[test]
    fn two_area_spectrum_and_critical_vector() {
        let s = kundur_spectrum();
        assert_eq!(s.mu[0], 0.0);
        assert!((s.mu[3] - 1.9838).abs() < 1e-3, "{:?}", s.mu);
        let psi4 = s.psi(3);
        let expected = [-0.02, 0.06, -0.73, 0.69];
        // sign convention puts the largest entry (bus 3) positive
        assert!(psi4[2] > 0.0);
        for (a, b) in psi4.iter().zip(expected) {
            assert!((a + b).abs() < 0.05, "{psi4}");
        }
        assert_eq!(s.members(3, DEFAULT_MEMBER_THRESHOLD), vec![2, 3]);
    }

    #[test]
    fn residual_and_m_orthogonality() {
        let s = kundur_spectrum();
        let net = to_per_unit(&parse_grid(KUNDUR4).unwrap(), &PuOptions::default()).unwrap();
        let red = reduce_to_inverters(&net, LoadMode::LinesOnly).unwrap();
        let c = weighted_susceptance(&red, &s.droop).unwrap();
        for i in 0..4 {
            let r = &c * s.psi(i) - s.psi(i) * s.mu[i];
            assert!(r.norm() <= 1e-10 * c.norm());
            for j in 0..4 {
                if i != j {
                    let ip = s.psi(i).dot(&s.phi(j));
                    assert!(ip.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn droop_matrix_validation() {
        assert!(DroopMatrix::from_diagonal(vec![0.1, 0.0]).is_err());
        assert!(DroopMatrix::from_diagonal(vec![0.1, -1.0]).is_err());
        let dense = DMatrix::from_row_slice(2, 2, &[0.1, 0.01, 0.0, 0.2]);
        assert!(matches!(
            DroopMatrix::from_dense(&dense),
            Err(GridError::InvalidDroopMatrix(_))
        ));
        let dense = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.2]);
        assert_eq!(DroopMatrix::from_dense(&dense).unwrap().diagonal(), &[0.1, 0.2]);
    }

    #[test]
    fn membership_rules() {
        assert_eq!(identify_members(&[0.5, 0.5, 0.5, 0.5], 0.3), vec![0, 1, 2, 3]);
        assert_eq!(identify_members(&[0.1, -0.7, 0.69, 0.2], 1.0), vec![1]);
        assert_eq!(identify_members(&[-0.02, 0.06, -0.73, 0.69], 0.3), vec![2, 3]);
    }

    #[test]
    fn degenerate_group_uses_joint_subspace() {
        // star with three equal leaves: the two non-zero leaf modes coincide
        let red = ReducedNetwork {
            b: edge_laplacian(4, [(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)]),
            rho: 0.0,
            retained: vec![0, 1, 2, 3],
            eliminated: vec![],
            load_mode: LoadMode::LinesOnly,
            warnings: vec![],
        };
        let m = DroopMatrix::from_diagonal(vec![1.0; 4]).unwrap();
        let s = spectrum(&weighted_susceptance(&red, &m).unwrap(), &m).unwrap();
        assert!((s.mu[1] - 1.0).abs() < 1e-12 && (s.mu[2] - 1.0).abs() < 1e-12);
        assert!(s.is_degenerate(1));
        assert_eq!(s.group_of(2), &[1, 2]);
        assert_eq!(s.members(1, 0.3), vec![1, 2, 3]);
    }

    #[test]
    fn zero_mu_modes_factorize() {
        let p = ModeParams::from_frequencies(1.4, 3.0, 2.0 * PI * 5.0, 2.0 * PI * 50.0).unwrap();
        let modes = cluster_modes(0.0, &p).unwrap();
        let mut expected = [
            Complex64::new(0.0, 0.0),
            Complex64::new(-1.0 / p.tau, 0.0),
            Complex64::new(-1.0 / p.tau, 0.0),
            Complex64::new(-p.rho / p.tau0, 1.0 / p.tau0),
            Complex64::new(-p.rho / p.tau0, -1.0 / p.tau0),
        ];
        for e in &mut expected {
            let (i, _) = modes
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - *e).norm().total_cmp(&(b.1 - *e).norm()))
                .unwrap();
            // the double root at -1/τ is only resolved to ~sqrt(eps)
            assert!((modes[i] - *e).norm() < 1e-6 * (1.0 / p.tau0), "{modes:?}");
            *e = modes[i];
        }
        assert!(modes.windows(2).all(|w| w[0].re >= w[1].re));
    }

    #[test]
    fn negative_mu_rejected() {
        let p = ModeParams::new(1.0, 1.0, 0.1, 0.01).unwrap();
        assert!(matches!(cluster_modes(-1.0, &p), Err(GridError::NegativeMu(_))));
        assert!(ModeParams::new(1.0, 0.0, 0.1, 0.01).is_err());
    }

    #[test]
    fn two_area_critical_cluster_has_unstable_pair() {
        let p = ModeParams::from_frequencies(1.4, 3.0, 2.0 * PI * 5.0, 2.0 * PI * 50.0).unwrap();
        let modes = cluster_modes(2.06, &p).unwrap();
        assert!(modes[0].re > 0.0 && modes[1].re > 0.0);
        assert!((modes[0] - modes[1].conj()).norm() < 1e-9);
        assert!(modes[0].im.abs() > 1.0);
    }
}
