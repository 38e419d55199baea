//! Seeded random grids shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use gridclust_core::grid_model::{
    to_per_unit, BusSpec, GridSpec, InverterSpec, LineSpec, LoadImpedance, PuNetwork, PuOptions,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const KUNDUR4: &str = include_str!("../../examples/kundur4.json");

pub fn kundur_spec() -> GridSpec {
    gridclust_core::grid_model::parse_grid(KUNDUR4).unwrap()
}

pub fn kundur() -> PuNetwork {
    to_per_unit(&kundur_spec(), &PuOptions::default()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone)]
pub struct GridShape {
    pub inverters: (usize, usize),
    pub passive: (usize, usize),
    pub extra_edges: usize,
    pub rho: (f64, f64),
    pub k: (f64, f64),
    pub m: (f64, f64),
    pub length_km: (f64, f64),
    /// When false every inverter gets its own m/n.
    pub proportional: bool,
}

impl Default for GridShape {
    fn default() -> Self {
        Self {
            inverters: (3, 10),
            passive: (0, 2),
            extra_edges: 3,
            rho: (0.3, 3.0),
            k: (0.5, 10.0),
            m: (0.005, 0.05),
            length_km: (0.5, 10.0),
            proportional: true,
        }
    }
}

/// Connected grid: a random spanning tree plus up to `extra_edges` chords,
/// one cable type (so ρ is homogeneous), passive buses listed first.
pub fn random_grid(rng: &mut ChaCha8Rng, shape: &GridShape) -> GridSpec {
    let v = rng.gen_range(shape.inverters.0..=shape.inverters.1);
    let p = rng.gen_range(shape.passive.0..=shape.passive.1);
    let n = v + p;
    let omega0 = 2.0 * PI * 50.0;
    let rho = rng.gen_range(shape.rho.0..=shape.rho.1);
    let l_h = 0.0005;
    let r = rho * omega0 * l_h;
    let k = rng.gen_range(shape.k.0..=shape.k.1);

    let id = |i: usize| format!("b{i}");
    let mut buses = Vec::with_capacity(n);
    for i in 0..n {
        let inverter = (i >= p).then(|| {
            let m = rng.gen_range(shape.m.0..=shape.m.1);
            let kk = if shape.proportional { k } else { rng.gen_range(shape.k.0..=shape.k.1) };
            InverterSpec { m, n: m / kk }
        });
        let load_ohm = rng.gen_bool(0.5).then(|| LoadImpedance {
            re: rng.gen_range(5.0..60.0),
            im: rng.gen_range(0.5..20.0),
        });
        buses.push(BusSpec {
            id: id(i),
            inverter,
            load_ohm,
        });
    }
    // passive buses must not be leaves of degree zero; the tree covers all
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    for _ in 0..shape.extra_edges.min(n * (n - 1) / 2) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b && !edges.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a)) {
            edges.push((a, b));
        }
    }
    let lines = edges
        .into_iter()
        .map(|(a, b)| LineSpec {
            from: id(a),
            to: id(b),
            length_km: rng.gen_range(shape.length_km.0..=shape.length_km.1),
            r_ohm_per_km: r,
            l_h_per_km: l_h,
        })
        .collect();
    GridSpec {
        nominal_frequency_rad_s: omega0,
        filter_cutoff_rad_s: None,
        base_voltage_v: 230.0,
        base_power_va: 1e4,
        buses,
        lines,
    }
}

pub fn random_network(rng: &mut ChaCha8Rng, shape: &GridShape) -> PuNetwork {
    to_per_unit(&random_grid(rng, shape), &PuOptions::default()).unwrap()
}
