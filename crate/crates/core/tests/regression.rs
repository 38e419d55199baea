//! Frozen end-to-end outputs for the shipped regression grids. The expected
//! files were produced by an independent dense-numerics script, not by this
//! crate.

use std::path::PathBuf;

use gridclust_core::analysis::{analyze, AnalysisOptions};
use gridclust_core::fullmodel_oracle::{assemble_state_matrix, eigenvalues_general, verify_theorem1};
use gridclust_core::grid_model::{to_per_unit, GridSpec, PuOptions};
use serde::Deserialize;

#[derive(Deserialize)]
struct Expected {
    rho: f64,
    k: f64,
    mu: Vec<f64>,
    mu_cr: f64,
    unstable_count: usize,
    top_members: Vec<String>,
    rhp_eigenvalues: usize,
    max_re_nonzero: f64,
    stable: bool,
}

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/regression")
}

fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= abs + rel * b.abs()
}

fn check(name: &str) {
    let spec = GridSpec::from_path(dir().join(format!("{name}.json"))).unwrap();
    let text = std::fs::read_to_string(dir().join(format!("{name}.expected.json"))).unwrap();
    let exp: Expected = serde_json::from_str(&text).unwrap();

    let net = to_per_unit(&spec, &PuOptions::default()).unwrap();
    let a = analyze(&net, &AnalysisOptions::default()).unwrap();

    assert!(close(a.params.rho, exp.rho, 1e-12, 0.0), "{name}: rho {}", a.params.rho);
    assert!(close(a.params.k, exp.k, 1e-12, 0.0), "{name}: k {}", a.params.k);
    assert_eq!(a.spectrum.mu.len(), exp.mu.len());
    let scale = exp.mu.last().copied().unwrap_or(1.0);
    for (got, want) in a.spectrum.mu.iter().zip(&exp.mu) {
        assert!(close(*got, *want, 1e-9, 1e-12 * scale), "{name}: mu {got} vs {want}");
    }
    let mu_cr = a.threshold.as_ref().unwrap().mu_cr;
    assert!(close(mu_cr, exp.mu_cr, 1e-6, 0.0), "{name}: mu_cr {mu_cr} vs {}", exp.mu_cr);
    assert_eq!(a.verdict.unstable_count, exp.unstable_count, "{name}");
    assert_eq!(a.verdict.stable, exp.stable, "{name}");

    let top = a.spectrum.len() - 1;
    let ids = a.bus_ids();
    let members: Vec<String> = a.spectrum.members(top, 0.3).into_iter().map(|j| ids[j].clone()).collect();
    assert_eq!(members, exp.top_members, "{name}");

    let sm = assemble_state_matrix(&a.network, &a.reduced).unwrap();
    let eig = eigenvalues_general(&sm.a).unwrap();
    let cut = 1e-9 * sm.a.norm();
    let nonzero: Vec<_> = eig.into_iter().filter(|l| l.norm() > cut).collect();
    assert_eq!(nonzero.iter().filter(|l| l.re > 0.0).count(), exp.rhp_eigenvalues, "{name}");
    let max_re = nonzero.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    assert!(close(max_re, exp.max_re_nonzero, 1e-6, 1e-8), "{name}: max re {max_re}");

    // the verdict and the full model agree on these grids
    assert_eq!(exp.rhp_eigenvalues, 2 * exp.unstable_count);
    let m = verify_theorem1(&a.network, &a.reduced).unwrap();
    assert!(m.hausdorff <= 1e-6 * net.omega0, "{name}: hausdorff {}", m.hausdorff);
}

#[test]
fn radial5_matches_frozen_output() {
    check("radial5");
}

#[test]
fn mesh7_matches_frozen_output() {
    check("mesh7");
}

#[test]
fn feeder6_matches_frozen_output() {
    check("feeder6");
}
