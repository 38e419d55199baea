mod common;

use common::{random_grid, random_network, rng, GridShape};
use gridclust_core::cluster_spectrum::{network_spectrum, spectrum, DroopMatrix, ModeParams};
use gridclust_core::error::GridError;
use gridclust_core::fullmodel_oracle::{assemble_state_matrix, eigenvalues_general, verify_theorem1};
use gridclust_core::grid_model::{parse_grid, to_per_unit, LineSpec, PuOptions};
use gridclust_core::network_reduction::{edge_laplacian, kron_reduce, reduce_to_inverters, LoadMode};
use gridclust_core::sensitivity::{dmu_ddroop, finite_diff_check, Parameter};
use gridclust_core::stability_boundary::{mu_cr_lower_bound, mu_critical};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn mu_of(net: &gridclust_core::grid_model::PuNetwork) -> Vec<f64> {
    let red = reduce_to_inverters(net, LoadMode::LinesOnly).unwrap();
    network_spectrum(net, &red).unwrap().mu
}

/// Connected weighted Laplacian on `n` nodes.
fn random_laplacian(seed: u64, n: usize) -> DMatrix<f64> {
    let mut r = rng(seed);
    let mut edges: Vec<(usize, usize, f64)> = (1..n).map(|i| (r.gen_range(0..i), i, r.gen_range(0.1..10.0))).collect();
    for _ in 0..n {
        let (a, b) = (r.gen_range(0..n), r.gen_range(0..n));
        if a != b {
            edges.push((a, b, r.gen_range(0.1..10.0)));
        }
    }
    edge_laplacian(n, edges)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_document_round_trips(seed in any::<u64>()) {
        let spec = random_grid(&mut rng(seed), &GridShape::default());
        let back = parse_grid(&spec.to_json()).unwrap();
        prop_assert_eq!(back, spec);
    }

    #[test]
    fn scaling_every_length_scales_the_spectrum(seed in any::<u64>(), c in 0.2f64..5.0) {
        let spec = random_grid(&mut rng(seed), &GridShape::default());
        let mut scaled = spec.clone();
        for l in &mut scaled.lines {
            l.length_km *= c;
        }
        let a = mu_of(&to_per_unit(&spec, &PuOptions::default()).unwrap());
        let b = mu_of(&to_per_unit(&scaled, &PuOptions::default()).unwrap());
        let top = a.last().copied().unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x / c - y).abs() <= 1e-9 * top / c, "{} vs {}", x / c, y);
        }
    }

    #[test]
    fn kron_reduction_is_transitive(seed in any::<u64>(), n in 4usize..12) {
        let b = random_laplacian(seed, n);
        let mut r = rng(seed ^ 0x5eed);
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut r);
        let inner = r.gen_range(1..n - 1);
        let outer = r.gen_range(inner + 1..n);
        let mut mid: Vec<usize> = all[..outer].to_vec();
        let mut keep: Vec<usize> = all[..inner].to_vec();
        mid.sort_unstable();
        keep.sort_unstable();

        let direct = kron_reduce(&b, &keep).unwrap();
        let first = kron_reduce(&b, &mid).unwrap();
        let pos: Vec<usize> = keep.iter().map(|k| mid.iter().position(|m| m == k).unwrap()).collect();
        let twice = kron_reduce(&first, &pos).unwrap();
        prop_assert!((&direct - &twice).norm() <= 1e-10 * b.norm());

        // still a Laplacian
        for i in 0..keep.len() {
            prop_assert!(direct.row(i).sum().abs() <= 1e-10 * b.norm());
            for j in 0..keep.len() {
                prop_assert!((direct[(i, j)] - direct[(j, i)]).abs() <= 1e-12 * b.norm());
                if i != j {
                    prop_assert!(direct[(i, j)] <= 1e-12 * b.norm());
                }
            }
        }
    }

    #[test]
    fn zero_eigenvalues_count_components(seed in any::<u64>(), parts in 1usize..5) {
        // a forest of `parts` random connected pieces
        let mut r = rng(seed);
        let mut edges = Vec::new();
        let mut n = 0;
        for _ in 0..parts {
            let size = r.gen_range(1..5);
            for j in 1..size {
                edges.push((n + r.gen_range(0..j), n + j, r.gen_range(0.1..10.0)));
            }
            n += size;
        }
        let l = edge_laplacian(n, edges);
        let m: Vec<f64> = (0..n).map(|_| r.gen_range(0.005..0.05)).collect();
        let dm = DroopMatrix::from_diagonal(m.clone()).unwrap();
        let c = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(m)) * l;
        let s = spectrum(&c, &dm).unwrap();
        prop_assert_eq!(s.mu.iter().filter(|&&x| x == 0.0).count(), parts);
    }

    #[test]
    fn lower_bound_never_exceeds_threshold(rho in 0.2f64..5.0, k in 0.5f64..10.0) {
        let p = ModeParams::from_frequencies(rho, k, 2.0 * std::f64::consts::PI * 5.0, 100.0 * std::f64::consts::PI).unwrap();
        let mu_cr = mu_critical(&p).unwrap().mu_cr;
        let bound = mu_cr_lower_bound(rho, k).unwrap();
        prop_assert!(bound <= mu_cr * (1.0 + 1e-9), "bound {} > mu_cr {}", bound, mu_cr);
    }

    #[test]
    fn adding_a_line_raises_every_mu_within_weyl(seed in any::<u64>(), length in 0.5f64..20.0) {
        let shape = GridShape { passive: (0, 0), ..GridShape::default() };
        let mut r = rng(seed);
        let spec = random_grid(&mut r, &shape);
        let n = spec.buses.len();
        let (a, b) = loop {
            let (a, b) = (r.gen_range(0..n), r.gen_range(0..n));
            if a != b {
                break (a, b);
            }
        };
        let mut more = spec.clone();
        let template = spec.lines[0].clone();
        more.lines.push(LineSpec {
            from: spec.buses[a].id.clone(),
            to: spec.buses[b].id.clone(),
            length_km: length,
            ..template
        });
        let net = to_per_unit(&spec, &PuOptions::default()).unwrap();
        let before = mu_of(&net);
        let after = mu_of(&to_per_unit(&more, &PuOptions::default()).unwrap());
        let x = net.lines[0].x_pu_per_km() * length;
        let ma = net.droop(a).unwrap().m;
        let mb = net.droop(b).unwrap().m;
        let weyl = (ma + mb) * (1.0 + net.rho * net.rho) / x;
        let tol = 1e-9 * after.last().unwrap();
        for (lo, hi) in before.iter().zip(&after) {
            prop_assert!(hi + tol >= *lo, "{} dropped to {}", lo, hi);
            prop_assert!(*hi <= lo + weyl + tol, "{} rose past {} + {}", hi, lo, weyl);
        }
    }

    #[test]
    fn euler_rule_on_droops(seed in any::<u64>()) {
        let shape = GridShape { proportional: false, ..GridShape::default() };
        let net = random_network(&mut rng(seed), &shape);
        let red = reduce_to_inverters(&net, LoadMode::LinesOnly).unwrap();
        let s = network_spectrum(&net, &red).unwrap();
        for i in 1..s.len() {
            if s.is_degenerate(i) {
                continue;
            }
            let sum: f64 = red
                .retained
                .iter()
                .map(|&bus| net.droop(bus).unwrap().m * dmu_ddroop(&s, &red, i, bus).unwrap())
                .sum();
            prop_assert!((sum - s.mu[i]).abs() <= 1e-10 * s.mu.last().unwrap(), "{} vs {}", sum, s.mu[i]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cluster_spectrum_is_real_and_m_orthogonal(seed in any::<u64>(), n in 2usize..12) {
        let b = random_laplacian(seed, n);
        let mut r = rng(seed.wrapping_add(1));
        let m: Vec<f64> = (0..n).map(|_| r.gen_range(0.001..0.1)).collect();
        let dm = DroopMatrix::from_diagonal(m.clone()).unwrap();
        let c = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(m)) * b;
        let s = spectrum(&c, &dm).unwrap();
        let scale = c.norm();
        prop_assert_eq!(s.mu[0], 0.0);
        let first = s.psi(0);
        prop_assert!(first.iter().all(|x| (x - first[0]).abs() <= 1e-10));
        for i in 0..s.len() {
            prop_assert!(s.mu[i].is_finite() && s.mu[i] >= 0.0);
            if i > 0 {
                prop_assert!(s.mu[i] >= s.mu[i - 1]);
            }
            let psi = s.psi(i);
            prop_assert!((&c * &psi - &psi * s.mu[i]).norm() <= 1e-10 * scale);
            for j in 0..i {
                prop_assert!(s.phi(j).dot(&psi).abs() <= 1e-9 * s.phi(i).dot(&psi));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn analytic_sensitivities_match_finite_differences(seed in any::<u64>()) {
        let shape = GridShape { inverters: (3, 7), passive: (0, 0), ..GridShape::default() };
        let net = random_network(&mut rng(seed), &shape);
        let v = net.buses.len();
        for i in 1..v {
            let params = (0..net.lines.len())
                .map(|index| Parameter::Length { index })
                .chain((0..v).map(|index| Parameter::Droop { index }));
            for p in params {
                match finite_diff_check(&net, LoadMode::LinesOnly, i, p) {
                    Ok(fd) => prop_assert!(fd.agrees(1e-4, 1e-8, 1e-6), "{:?} {:?}", p, fd),
                    Err(GridError::Degenerate(_)) | Err(GridError::EigenvalueCrossing(_)) => {}
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                }
            }
        }
    }

    #[test]
    fn full_model_agrees_with_cluster_modes(seed in any::<u64>()) {
        let net = random_network(&mut rng(seed), &GridShape::default());
        let red = reduce_to_inverters(&net, LoadMode::LinesOnly).unwrap();
        let m = verify_theorem1(&net, &red).unwrap();
        prop_assert!(m.hausdorff <= 1e-6 * net.omega0, "{}", m.hausdorff);
    }

    #[test]
    fn rhp_count_is_twice_the_unstable_count(seed in any::<u64>()) {
        let net = random_network(&mut rng(seed), &GridShape::default());
        let red = reduce_to_inverters(&net, LoadMode::LinesOnly).unwrap();
        let s = network_spectrum(&net, &red).unwrap();
        let p = ModeParams::from_network(&net).unwrap();
        let mu_cr = mu_critical(&p).unwrap().mu_cr;
        prop_assume!(s.mu.iter().all(|m| (m - mu_cr).abs() > 1e-3 * mu_cr));
        let unstable = s.mu.iter().filter(|&&m| m > mu_cr).count();
        let sm = assemble_state_matrix(&net, &red).unwrap();
        let cut = 1e-9 * sm.a.norm();
        let rhp = eigenvalues_general(&sm.a)
            .unwrap()
            .into_iter()
            .filter(|l| l.norm() > cut && l.re > 0.0)
            .count();
        prop_assert_eq!(rhp, 2 * unstable);
    }
}

#[test]
fn scaling_a_droop_up_raises_mu_at_most_proportionally() {
    let mut r = rng(7);
    for _ in 0..100 {
        let net = random_network(&mut r, &GridShape::default());
        let before = mu_of(&net);
        let buses = net.inverter_buses();
        let bus = buses[r.gen_range(0..buses.len())];
        let c = r.gen_range(1.01..3.0);
        let mut up = net.clone();
        let m = up.droop(bus).unwrap().m;
        up.set_frequency_droop(bus, c * m, true).unwrap();
        let after = mu_of(&up);
        let tol = 1e-9 * after.last().unwrap();
        for (lo, hi) in before.iter().zip(&after) {
            assert!(hi + tol >= *lo && *hi <= c * lo + tol, "{lo} -> {hi} with c = {c}");
        }
    }
}
