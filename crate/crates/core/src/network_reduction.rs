//! Nodal susceptance matrices and Kron reduction onto the inverter buses.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};
use crate::grid_model::PuNetwork;

/// Relative pivot tolerance of the LDLᵀ factorization used by [`kron_reduce`].
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// How bus loads enter the susceptance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadMode {
    /// Loads are ignored; B is an exact weighted Laplacian.
    #[default]
    LinesOnly,
    /// Load susceptances are added to the diagonal before reduction.
    ShuntAbsorbed,
}

impl fmt::Display for LoadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoadMode::LinesOnly => "lines-only",
            LoadMode::ShuntAbsorbed => "shunt-absorbed",
        })
    }
}

impl FromStr for LoadMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "lines-only" => Ok(LoadMode::LinesOnly),
            "shunt-absorbed" => Ok(LoadMode::ShuntAbsorbed),
            other => Err(format!(
                "unknown load mode \"{other}\" (expected lines-only or shunt-absorbed)"
            )),
        }
    }
}

/// Signed bus-by-line incidence matrix. Column `e` holds −1 at the sending
/// bus and +1 at the receiving bus of line `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix(pub DMatrix<f64>);

impl IncidenceMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn build_incidence(network: &PuNetwork) -> IncidenceMatrix {
    let mut inc = DMatrix::zeros(network.buses.len(), network.lines.len());
    for (e, line) in network.lines.iter().enumerate() {
        inc[(line.from, e)] = -1.0;
        inc[(line.to, e)] = 1.0;
    }
    IncidenceMatrix(inc)
}

/// Susceptance matrix over a set of retained buses.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedNetwork {
    /// Symmetric susceptance matrix B (p.u.).
    pub b: DMatrix<f64>,
    pub rho: f64,
    /// Original bus index of every row of `b`.
    pub retained: Vec<usize>,
    /// Buses removed by Kron reduction.
    pub eliminated: Vec<usize>,
    pub load_mode: LoadMode,
    pub warnings: Vec<String>,
}

impl ReducedNetwork {
    pub fn dim(&self) -> usize {
        self.retained.len()
    }

    /// The scaled matrix (1+ρ²)B that enters the dynamics.
    pub fn scaled(&self) -> DMatrix<f64> {
        &self.b * (1.0 + self.rho * self.rho)
    }

    /// Row of `bus` in the reduced matrix.
    pub fn position(&self, bus: usize) -> Option<usize> {
        self.retained.iter().position(|&b| b == bus)
    }
}

/// Weighted Laplacian assembled one edge at a time.
pub fn edge_laplacian(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    for (i, j, w) in edges {
        l[(i, i)] += w;
        l[(j, j)] += w;
        l[(i, j)] -= w;
        l[(j, i)] -= w;
    }
    l
}

/// Builds B = ∇ᵀX⁻¹∇ over all buses, plus load shunts in
/// [`LoadMode::ShuntAbsorbed`].
pub fn build_susceptance(network: &PuNetwork, mode: LoadMode) -> Result<ReducedNetwork> {
    if let Some(e) = network.lines.iter().position(|l| l.x_pu == 0.0) {
        return Err(GridError::ZeroReactance(e));
    }
    let inc = build_incidence(network).0;
    let mut scaled = inc.clone();
    for (e, line) in network.lines.iter().enumerate() {
        scaled.column_mut(e).scale_mut(1.0 / line.x_pu);
    }
    let mut b = &scaled * inc.transpose();

    let mut warnings = Vec::new();
    if mode == LoadMode::ShuntAbsorbed {
        let mut any = false;
        for (i, bus) in network.buses.iter().enumerate() {
            if let Some(z) = bus.load_pu {
                b[(i, i)] += -(1.0 / z).im;
                any = true;
            }
        }
        if any {
            warnings.push(
                "shunt-absorbed loads have their own R/X ratio; the homogeneous-rho \
                 decoupling holds only approximately"
                    .to_string(),
            );
        }
    }
    Ok(ReducedNetwork {
        b: symmetrize(b),
        rho: network.rho,
        retained: (0..network.buses.len()).collect(),
        eliminated: Vec::new(),
        load_mode: mode,
        warnings,
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Schur complement B_kk − B_ke B_ee⁻¹ B_ek eliminating every index not in
/// `keep`. Rows of the result follow the order of `keep`.
pub fn kron_reduce(b: &DMatrix<f64>, keep: &[usize]) -> Result<DMatrix<f64>> {
    let labels: Vec<String> = (0..b.nrows()).map(|i| format!("#{i}")).collect();
    kron_reduce_labeled(b, keep, &labels)
}

fn kron_reduce_labeled(b: &DMatrix<f64>, keep: &[usize], labels: &[String]) -> Result<DMatrix<f64>> {
    let n = b.nrows();
    if b.ncols() != n {
        return Err(GridError::Dimension(format!("B is {}x{}", n, b.ncols())));
    }
    if let Some(&bad) = keep.iter().find(|&&k| k >= n) {
        return Err(GridError::Dimension(format!("keep index {bad} out of range {n}")));
    }
    let elim: Vec<usize> = (0..n).filter(|i| !keep.contains(i)).collect();
    let bkk = b.select_rows(keep).select_columns(keep);
    if elim.is_empty() {
        return Ok(bkk);
    }
    let bee = b.select_rows(&elim).select_columns(&elim);
    let bek = b.select_rows(&elim).select_columns(keep);

    let scale = b.diagonal().iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let Some(factor) = Ldlt::factor(&bee, PIVOT_TOLERANCE * scale.max(f64::MIN_POSITIVE)) else {
        let component = isolated_component(b, keep, &elim);
        return Err(GridError::IsolatedComponent(
            component.into_iter().map(|i| labels[i].clone()).collect(),
        ));
    };
    let x = factor.solve(&bek);
    Ok(symmetrize(bkk - bek.transpose() * x))
}

/// LDLᵀ factorization without pivoting of a symmetric positive definite block.
struct Ldlt {
    l: DMatrix<f64>,
    d: Vec<f64>,
}

impl Ldlt {
    fn factor(a: &DMatrix<f64>, pivot_tol: f64) -> Option<Self> {
        let n = a.nrows();
        let mut l = DMatrix::identity(n, n);
        let mut d = vec![0.0; n];
        for j in 0..n {
            let mut dj = a[(j, j)];
            for k in 0..j {
                dj -= l[(j, k)] * l[(j, k)] * d[k];
            }
            if dj <= pivot_tol {
                return None;
            }
            d[j] = dj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)] * d[k];
                }
                l[(i, j)] = s / dj;
            }
        }
        Some(Self { l, d })
    }

    fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.d.len();
        let mut x = rhs.clone();
        for c in 0..x.ncols() {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= self.l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s;
            }
            for i in 0..n {
                x[(i, c)] /= self.d[i];
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in i + 1..n {
                    s -= self.l[(k, i)] * x[(k, c)];
                }
                x[(i, c)] = s;
            }
        }
        x
    }
}

/// First connected component of the eliminated subgraph that neither touches
/// a kept node nor carries a shunt.
fn isolated_component(b: &DMatrix<f64>, keep: &[usize], elim: &[usize]) -> Vec<usize> {
    let scale = b.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let mut seen = vec![false; b.nrows()];
    let mut fallback = Vec::new();
    for &start in elim {
        if seen[start] {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut head = 0;
        while head < comp.len() {
            let u = comp[head];
            head += 1;
            for &w in elim {
                if !seen[w] && b[(u, w)].abs() > tol {
                    seen[w] = true;
                    comp.push(w);
                }
            }
        }
        comp.sort_unstable();
        let anchored = comp.iter().any(|&u| {
            keep.iter().any(|&k| b[(u, k)].abs() > tol)
                || b.row(u).iter().sum::<f64>().abs() > tol
        });
        if !anchored {
            return comp;
        }
        if fallback.is_empty() {
            fallback = comp;
        }
    }
    fallback
}

/// Eliminates every bus without an inverter.
pub fn reduce_to_inverters(network: &PuNetwork, mode: LoadMode) -> Result<ReducedNetwork> {
    let full = build_susceptance(network, mode)?;
    let keep = network.inverter_buses();
    let labels: Vec<String> = network.buses.iter().map(|b| b.id.clone()).collect();
    let b = kron_reduce_labeled(&full.b, &keep, &labels)?;
    let eliminated = (0..network.buses.len()).filter(|i| !keep.contains(i)).collect();
    Ok(ReducedNetwork {
        b,
        rho: full.rho,
        retained: keep,
        eliminated,
        load_mode: mode,
        warnings: full.warnings,
    })
}
