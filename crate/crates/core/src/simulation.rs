//! Linear step responses of the 5v-state model, integrated with classical
//! RK4, plus the envelope fit used to compare them with eig(A).

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{GridError, Result};
use crate::fullmodel_oracle::{eigenvalues_general, StateMatrix};
use crate::grid_model::PuNetwork;

pub const DEFAULT_DT: f64 = 1e-4;
pub const DEFAULT_DURATION: f64 = 1.0;
/// RK4 is stable for |λ|·dt up to about 2.78 on the real axis.
pub const STIFFNESS_LIMIT: f64 = 2.5;

/// Constant power steps applied at t = 0, one entry per inverter row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    /// Active-power step ΔP_i (p.u.). Positive means more load.
    pub delta_p: Vec<f64>,
    /// Reactive-power step ΔQ_i (p.u.).
    pub delta_q: Vec<f64>,
    pub duration: f64,
    pub dt: f64,
    /// Keep every n-th sample (the last one is always kept).
    pub record_every: usize,
}

impl Scenario {
    pub fn new(v: usize, duration: f64, dt: f64) -> Self {
        Self {
            delta_p: vec![0.0; v],
            delta_q: vec![0.0; v],
            duration,
            dt,
            record_every: 1,
        }
    }

    pub fn validate(&self, v: usize) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(GridError::Scenario(format!("duration must be > 0, got {}", self.duration)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(GridError::Scenario(format!("time step must be > 0, got {}", self.dt)));
        }
        if self.dt > self.duration / 100.0 {
            return Err(GridError::Scenario(format!(
                "time step {} exceeds duration/100 = {}",
                self.dt,
                self.duration / 100.0
            )));
        }
        if self.delta_p.len() != v || self.delta_q.len() != v {
            return Err(GridError::Scenario(format!(
                "expected {v} power steps, got {} active and {} reactive",
                self.delta_p.len(),
                self.delta_q.len()
            )));
        }
        if self.record_every == 0 {
            return Err(GridError::Scenario("record_every must be >= 1".into()));
        }
        if self.delta_p.iter().chain(&self.delta_q).any(|x| !x.is_finite()) {
            return Err(GridError::Scenario("power steps must be finite".into()));
        }
        Ok(())
    }
}

/// ΔP for a step of `fraction` of the load connected at `bus`.
pub fn load_step(network: &PuNetwork, bus: usize, fraction: f64) -> f64 {
    fraction * network.load_active_power(bus)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    /// One state vector per sample, ordered as in [`StateMatrix`].
    pub x: Vec<Vec<f64>>,
    pub v: usize,
    pub bus_ids: Vec<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn state(&self, index: usize) -> Vec<f64> {
        self.x.iter().map(|s| s[index]).collect()
    }

    pub fn theta(&self, i: usize) -> Vec<f64> {
        self.state(i)
    }

    pub fn omega(&self, i: usize) -> Vec<f64> {
        self.state(self.v + i)
    }

    pub fn voltage(&self, i: usize) -> Vec<f64> {
        self.state(2 * self.v + i)
    }

    pub fn last(&self) -> &[f64] {
        self.x.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// ω_i minus the 1/m-weighted mean frequency, per bus. This removes the
    /// common-mode (μ = 0) motion.
    pub fn omega_deviation(&self, m: &[f64]) -> Vec<Vec<f64>> {
        let w: Vec<f64> = m.iter().map(|x| 1.0 / x).collect();
        let total: f64 = w.iter().sum();
        let mut out = vec![Vec::with_capacity(self.len()); self.v];
        for s in &self.x {
            let omega = &s[self.v..2 * self.v];
            let mean = omega.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / total;
            for (i, o) in omega.iter().enumerate() {
                out[i].push(o - mean);
            }
        }
        out
    }
}

/// Input vector u of ẋ = Ax + u.
pub fn input_vector(sm: &StateMatrix, scenario: &Scenario) -> DVector<f64> {
    let v = sm.v;
    let mut u = DVector::zeros(5 * v);
    for i in 0..v {
        u[v + i] = -sm.omega0 * sm.m[i] * scenario.delta_p[i] / sm.tau;
        u[2 * v + i] = -sm.n[i] * scenario.delta_q[i] / sm.tau;
    }
    u
}

pub fn spectral_radius(sm: &StateMatrix) -> Result<f64> {
    Ok(eigenvalues_general(&sm.a)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Integrates from the zero state with RK4 at a fixed step.
pub fn step_response(sm: &StateMatrix, scenario: &Scenario) -> Result<Trajectory> {
    scenario.validate(sm.v)?;
    let radius = spectral_radius(sm)?;
    let product = radius * scenario.dt;
    if product > STIFFNESS_LIMIT {
        return Err(GridError::StepTooLarge {
            product,
            suggested: 0.9 * STIFFNESS_LIMIT / radius,
        });
    }
    let u = input_vector(sm, scenario);
    let a = &sm.a;
    let h = scenario.dt;
    let steps = (scenario.duration / h).round() as usize;
    let dim = 5 * sm.v;

    let mut x = DVector::zeros(dim);
    let (mut k1, mut k2, mut k3, mut k4) = (x.clone(), x.clone(), x.clone(), x.clone());
    let mut y = x.clone();
    // k ← A·y + u
    let eval = |k: &mut DVector<f64>, y: &DVector<f64>| {
        k.copy_from(&u);
        k.gemv(1.0, a, y, 1.0);
    };
    let mut t = Vec::with_capacity(steps / scenario.record_every + 2);
    let mut xs = Vec::with_capacity(t.capacity());
    t.push(0.0);
    xs.push(x.as_slice().to_vec());
    for k in 1..=steps {
        eval(&mut k1, &x);
        y.copy_from(&x);
        y.axpy(h / 2.0, &k1, 1.0);
        eval(&mut k2, &y);
        y.copy_from(&x);
        y.axpy(h / 2.0, &k2, 1.0);
        eval(&mut k3, &y);
        y.copy_from(&x);
        y.axpy(h, &k3, 1.0);
        eval(&mut k4, &y);
        k2 += &k3;
        x.axpy(h / 6.0, &k1, 1.0);
        x.axpy(h / 3.0, &k2, 1.0);
        x.axpy(h / 6.0, &k4, 1.0);
        if k % scenario.record_every == 0 || k == steps {
            t.push(k as f64 * h);
            xs.push(x.as_slice().to_vec());
        }
    }
    if x.iter().any(|z| !z.is_finite()) {
        return Err(GridError::Scenario("trajectory overflowed".into()));
    }
    Ok(Trajectory {
        t,
        x: xs,
        v: sm.v,
        bus_ids: sm.bus_ids.clone(),
    })
}

/// Relative level below which a decaying signal is treated as round-off.
const ENVELOPE_FLOOR: f64 = 1e-8;

/// Slope of a least-squares line through (t, ln |s|) at the local maxima of
/// |s| in the second half of the record. A decaying record is cut where it
/// last exceeds `ENVELOPE_FLOOR` times its peak, so the fit never reaches
/// round-off noise.
pub fn envelope_growth_rate(t: &[f64], s: &[f64]) -> Result<f64> {
    if t.len() != s.len() || t.len() < 3 {
        return Err(GridError::Domain("need at least three samples".into()));
    }
    let peak = s.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let end = s.iter().rposition(|x| x.abs() > ENVELOPE_FLOOR * peak).map_or(0, |k| k + 1);
    let start = end / 2;
    let mut pts = Vec::new();
    for k in start.max(1)..end.min(t.len() - 1) {
        let (a, b, c) = (s[k - 1].abs(), s[k].abs(), s[k + 1].abs());
        if b > a && b >= c && b > 0.0 {
            pts.push((t[k], b.ln()));
        }
    }
    if pts.len() < 3 {
        return Err(GridError::Domain(format!(
            "only {} envelope peaks in the second half; the signal is not oscillating",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Envelope growth rate of ω_i − ω̄ at the bus that oscillates most in the
/// second half of the run.
pub fn dominant_growth_rate(traj: &Trajectory, m: &[f64]) -> Result<f64> {
    let dev = traj.omega_deviation(m);
    let start = traj.len() / 2;
    let energy = |s: &Vec<f64>| s[start..].iter().map(|x| x * x).sum::<f64>();
    let best = dev
        .iter()
        .max_by(|a, b| energy(a).total_cmp(&energy(b)))
        .ok_or_else(|| GridError::Domain("empty trajectory".into()))?;
    envelope_growth_rate(&traj.t, best)
}

/// Largest real part of eig(A) once the angle-translation zero eigenvalue
/// is set aside.
pub fn reference_growth_rate(sm: &StateMatrix) -> Result<f64> {
    let values = eigenvalues_general(&sm.a)?;
    let tol = 1e-9 * sm.a.norm();
    Ok(values
        .iter()
        .filter(|z| z.norm() > tol)
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}
