use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::Serialize;

use gridclust_core::analysis::{analyze, mode_params, Analysis, AnalysisOptions};
use gridclust_core::cluster_spectrum::{ModeParams, DEFAULT_MEMBER_THRESHOLD};
use gridclust_core::fullmodel_oracle::{assemble_state_matrix, eigenvalues_general, verify_theorem1};
use gridclust_core::grid_model::{to_per_unit, GridSpec, PuNetwork, PuOptions, DEFAULT_OMEGA_C};
use gridclust_core::network_reduction::reduce_to_inverters;
use gridclust_core::sensitivity::{sensitivity_report, SensitivityReport};
use gridclust_core::simulation::{
    dominant_growth_rate, load_step, reference_growth_rate, step_response, Scenario, DEFAULT_DT,
    DEFAULT_DURATION,
};
use gridclust_core::stability_boundary::{mu_cr_lower_bound, mu_critical, ClusterStatus};
use gridclust_core::sweep::{linspace, mu_cr_map, run_sweep, SweepResult, SweepSpec};

use crate::output::{csv_writer, num, print_json, write_json};
use crate::{Cli, Command, Global};

pub fn run(cli: &Cli) -> Result<u8> {
    let g = &cli.global;
    match &cli.command {
        Command::Analyze(a) => analyze_cmd(g, a),
        Command::Mucr(a) => mucr_cmd(g, a),
        Command::Sensitivities(a) => sensitivities_cmd(g, a),
        Command::Sweep(a) => sweep_cmd(g, a),
        Command::Simulate(a) => simulate_cmd(g, a),
        Command::Oracle(a) => oracle_cmd(g, a),
        Command::Reduce(a) => reduce_cmd(g, a),
        Command::Report(a) => report_cmd(g, a),
    }
}

fn load(g: &Global, path: &Path) -> Result<PuNetwork> {
    let spec = GridSpec::from_path(path)?;
    let opts = PuOptions {
        rho_tolerance: g.rho_tolerance,
        omega_c_rad_s: g.omega_c,
        ..Default::default()
    };
    Ok(to_per_unit(&spec, &opts)?)
}

fn run_analysis(g: &Global, net: &PuNetwork, k: Option<f64>, threshold: f64, sens: bool) -> Result<Analysis> {
    let opts = AnalysisOptions {
        load_mode: g.load_mode,
        member_threshold: threshold,
        k_override: k,
        sensitivities: sens,
    };
    Ok(analyze(net, &opts)?)
}

// ---------------------------------------------------------------- analyze

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    pub grid: PathBuf,
    /// Droop ratio m/n to assume when the inverters do not share one.
    #[arg(long)]
    pub k: Option<f64>,
    /// Membership threshold relative to the largest |psi| entry.
    #[arg(long, default_value_t = DEFAULT_MEMBER_THRESHOLD)]
    pub threshold: f64,
    /// Also write the JSON summary to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn analyze_cmd(g: &Global, a: &AnalyzeArgs) -> Result<u8> {
    let net = load(g, &a.grid)?;
    let an = run_analysis(g, &net, a.k, a.threshold, true)?;
    let summary = an.summary();
    if let Some(out) = &a.out {
        write_json(out, &summary)?;
    }
    if g.json {
        print_json(&summary)?;
    } else {
        print!("{}", analysis_text(&an));
    }
    Ok(an.exit_code() as u8)
}

fn members(ids: &[String]) -> String {
    ids.join(" ")
}

fn analysis_text(an: &Analysis) -> String {
    let mut s = String::new();
    let p = &an.params;
    let _ = writeln!(
        s,
        "inverters: {}   load mode: {}",
        an.reduced.dim(),
        an.reduced.load_mode
    );
    let _ = writeln!(
        s,
        "rho = {}   k = {}   omega_c = {} rad/s",
        num(p.rho, 6),
        num(p.k, 6),
        num(1.0 / p.tau, 4)
    );
    if an.uncoupled() {
        let _ = writeln!(s, "verdict: stable, no inter-inverter clusters");
        return s;
    }
    let mu_cr = an.verdict.mu_cr;
    match an.verdict.mu_cr_lower_bound {
        Some(lb) => {
            let _ = writeln!(s, "mu_cr = {}   lower bound = {}", num(mu_cr, 4), num(lb, 4));
        }
        None => {
            let _ = writeln!(s, "mu_cr = {}", num(mu_cr, 4));
        }
    }
    let _ = writeln!(s, "{:>7}  {:>9}  {:>9}  {:<9} members", "cluster", "mu", "margin", "status");
    for c in &an.verdict.clusters {
        let status = match c.status {
            ClusterStatus::Stable => "stable",
            ClusterStatus::Marginal => "marginal",
            ClusterStatus::Unstable => "unstable",
        };
        let _ = writeln!(
            s,
            "{:>7}  {:>9}  {:>9}  {:<9} {}",
            c.index + 1,
            num(c.mu, 4),
            num(c.margin, 4),
            status,
            members(&c.member_ids)
        );
    }
    if an.verdict.stable {
        let _ = writeln!(s, "verdict: stable");
    } else {
        let _ = writeln!(
            s,
            "verdict: unstable ({} unstable, {} marginal)",
            an.verdict.unstable_count, an.verdict.marginal_count
        );
    }
    for r in &an.sensitivities {
        s.push_str(&ranking_text(r, 5));
    }
    for w in &an.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

fn ranking_text(r: &SensitivityReport, top: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "cluster {} (mu = {}) sensitivities by |p * dmu/dp|:",
        r.cluster + 1,
        num(r.mu[r.cluster], 4)
    );
    let _ = writeln!(s, "  {:<12} {:>10} {:>12} {:>12}", "parameter", "value", "dmu/dp", "p*dmu/dp");
    for p in r.ranking.iter().take(top) {
        let _ = writeln!(
            s,
            "  {:<12} {:>10} {:>12} {:>12}",
            p.label,
            num(p.value, 4),
            format!("{:.4e}", p.derivative),
            num(p.elasticity, 4)
        );
    }
    s
}

// ---------------------------------------------------------------- mucr

#[derive(Args, Debug)]
pub struct MucrArgs {
    /// Take rho, k and the time constants from this grid.
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    /// Nominal angular frequency in rad/s (without a grid file).
    #[arg(long, default_value_t = 2.0 * std::f64::consts::PI * 50.0)]
    pub omega0: f64,
    /// Map over a grid, e.g. rho=0.2:5:50,k=0.5:10:50.
    #[arg(long)]
    pub sweep: Option<String>,
    /// CSV output for --sweep (stdout otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct MucrOutput {
    rho: f64,
    k: f64,
    omega_c_rad_s: f64,
    omega0_rad_s: f64,
    mu_cr: f64,
    mu_cr_lower_bound: Option<f64>,
    residual: f64,
    crossings: Vec<f64>,
    warnings: Vec<String>,
}

fn parse_range(s: &str, name: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        bail!("{name} range must be start:stop:count, got \"{s}\"");
    }
    let a: f64 = parts[0].parse().with_context(|| format!("{name} start"))?;
    let b: f64 = parts[1].parse().with_context(|| format!("{name} stop"))?;
    let n: usize = parts[2].parse().with_context(|| format!("{name} count"))?;
    if n < 1 {
        bail!("{name} count must be >= 1");
    }
    Ok(linspace(a, b, n))
}

fn mucr_cmd(g: &Global, a: &MucrArgs) -> Result<u8> {
    let (tau, tau0, base) = match &a.grid {
        Some(path) => {
            let net = load(g, path)?;
            let (p, _) = mode_params(&net, a.k)?;
            (p.tau, p.tau0, Some(p))
        }
        None => (1.0 / g.omega_c.unwrap_or(DEFAULT_OMEGA_C), 1.0 / a.omega0, None),
    };

    if let Some(spec) = &a.sweep {
        let mut rhos = None;
        let mut ks = None;
        for part in spec.split(',') {
            match part.split_once('=') {
                Some(("rho", r)) => rhos = Some(parse_range(r, "rho")?),
                Some(("k", r)) => ks = Some(parse_range(r, "k")?),
                _ => bail!("--sweep expects rho=a:b:n,k=a:b:n, got \"{part}\""),
            }
        }
        let rhos = rhos.ok_or_else(|| anyhow!("--sweep needs a rho range"))?;
        let ks = ks.ok_or_else(|| anyhow!("--sweep needs a k range"))?;
        let map = mu_cr_map(&rhos, &ks, tau, tau0, g.jobs)?;
        if g.json && a.out.is_none() {
            print_json(&map)?;
        } else {
            let mut w = csv_writer(a.out.as_deref())?;
            for p in &map {
                w.serialize(p)?;
            }
            w.flush()?;
        }
        if a.out.is_some() && !g.json {
            let violations = map.iter().filter(|p| p.lower_bound > p.mu_cr).count();
            println!("{} points, lower bound above mu_cr at {violations}", map.len());
        }
        return Ok(0);
    }

    let rho = a.rho.or(base.map(|p| p.rho)).ok_or_else(|| anyhow!("--rho is required without a grid"))?;
    let k = a.k.or(base.map(|p| p.k)).ok_or_else(|| anyhow!("--k is required without a grid"))?;
    let p = ModeParams::new(rho, k, tau, tau0)?;
    let cr = mu_critical(&p)?;
    let out = MucrOutput {
        rho,
        k,
        omega_c_rad_s: 1.0 / tau,
        omega0_rad_s: 1.0 / tau0,
        mu_cr: cr.mu_cr,
        mu_cr_lower_bound: mu_cr_lower_bound(rho, k).ok(),
        residual: cr.residual,
        crossings: cr.crossings.clone(),
        warnings: cr.warnings.clone(),
    };
    if g.json {
        print_json(&out)?;
    } else {
        println!("rho = {}   k = {}   omega_c = {} rad/s", num(rho, 6), num(k, 6), num(1.0 / tau, 4));
        println!("mu_cr = {}", num(out.mu_cr, 6));
        if let Some(lb) = out.mu_cr_lower_bound {
            println!("lower bound = {}", num(lb, 6));
        }
        for w in &out.warnings {
            println!("warning: {w}");
        }
    }
    Ok(0)
}

// ---------------------------------------------------------------- sensitivities

#[derive(Args, Debug)]
pub struct SensitivitiesArgs {
    pub grid: PathBuf,
    /// "top" for the largest mu, or a 1-based cluster number.
    #[arg(long, default_value = "top")]
    pub cluster: String,
    #[arg(long)]
    pub k: Option<f64>,
    /// CSV of the ranked parameters.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SensitivityCsvRow<'a> {
    rank: usize,
    parameter: &'a str,
    value: f64,
    dmu_dp: f64,
    elasticity: f64,
}

fn sensitivities_cmd(g: &Global, a: &SensitivitiesArgs) -> Result<u8> {
    let net = load(g, &a.grid)?;
    let reduced = reduce_to_inverters(&net, g.load_mode)?;
    let spectrum = gridclust_core::cluster_spectrum::network_spectrum(&net, &reduced)?;
    let v = spectrum.len();
    let cluster = if a.cluster == "top" {
        v - 1
    } else {
        let c: usize = a.cluster.parse().with_context(|| format!("bad --cluster \"{}\"", a.cluster))?;
        if c == 0 || c > v {
            bail!("--cluster must be between 1 and {v}");
        }
        c - 1
    };
    let report = sensitivity_report(&net, &reduced, &spectrum, cluster)?;
    if let Some(out) = &a.out {
        let mut w = csv_writer(Some(out))?;
        for (i, p) in report.ranking.iter().enumerate() {
            w.serialize(SensitivityCsvRow {
                rank: i + 1,
                parameter: &p.label,
                value: p.value,
                dmu_dp: p.derivative,
                elasticity: p.elasticity,
            })?;
        }
        w.flush()?;
    }
    if g.json {
        print_json(&report)?;
    } else {
        print!("{}", ranking_text(&report, report.ranking.len()));
    }
    Ok(0)
}

// ---------------------------------------------------------------- sweep

#[derive(Args, Debug)]
pub struct SweepArgs {
    pub grid: PathBuf,
    /// <parameter>=<start>:<stop>:<count>, parameter line:<a>-<b> or droop:<bus>.
    #[arg(long)]
    pub param: String,
    #[arg(long)]
    pub k: Option<f64>,
    /// CSV output (stdout otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn write_sweep_csv(r: &SweepResult, path: Option<&Path>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let v = r.rows.first().map_or(0, |row| row.mu.len());
    let mut header = vec!["value".to_string()];
    header.extend((1..=v).map(|i| format!("mu_{i}")));
    header.extend((1..=v).map(|i| format!("curve_{i}")));
    header.push("mu_cr".into());
    header.push("unstable".into());
    w.write_record(&header)?;
    for row in &r.rows {
        let mut rec = vec![row.value.to_string()];
        rec.extend(row.mu.iter().map(f64::to_string));
        rec.extend(row.tracked.iter().map(f64::to_string));
        rec.push(row.mu_cr.to_string());
        rec.push(row.unstable_count.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn sweep_cmd(g: &Global, a: &SweepArgs) -> Result<u8> {
    let net = load(g, &a.grid)?;
    let spec = SweepSpec::parse(&a.param)?;
    let r = run_sweep(&net, g.load_mode, &spec, a.k, g.jobs)?;
    if g.json {
        if let Some(out) = &a.out {
            write_sweep_csv(&r, Some(out))?;
        }
        print_json(&r)?;
        return Ok(0);
    }
    write_sweep_csv(&r, a.out.as_deref())?;
    let mut s = String::new();
    if r.crossings.is_empty() {
        let _ = writeln!(s, "{}: largest mu never crosses mu_cr in range", r.label);
    }
    for c in &r.crossings {
        let _ = writeln!(
            s,
            "{}: largest mu crosses mu_cr at {} ({})",
            r.label,
            num(c.value, 4),
            if c.destabilizing { "destabilizing" } else { "stabilizing" }
        );
    }
    for c in &r.curve_crossings {
        let _ = writeln!(
            s,
            "  curve {} crosses at {} ({})",
            c.curve.map_or(0, |x| x + 1),
            num(c.value, 4),
            if c.destabilizing { "destabilizing" } else { "stabilizing" }
        );
    }
    // keep stdout clean when it carries the CSV
    if a.out.is_some() {
        print!("{s}");
    } else {
        eprint!("{s}");
    }
    Ok(0)
}

// ---------------------------------------------------------------- simulate

#[derive(Args, Debug)]
pub struct SimulateArgs {
    pub grid: PathBuf,
    /// Active-power step in p.u., <bus>=<value>; repeatable.
    #[arg(long, allow_hyphen_values = true)]
    pub dp: Vec<String>,
    /// Reactive-power step in p.u., <bus>=<value>; repeatable.
    #[arg(long, allow_hyphen_values = true)]
    pub dq: Vec<String>,
    /// Step of a fraction of the bus load, <bus>=<fraction>; repeatable.
    #[arg(long, allow_hyphen_values = true)]
    pub load_step: Vec<String>,
    /// Duration in seconds.
    #[arg(long, default_value_t = DEFAULT_DURATION)]
    pub t: f64,
    #[arg(long, default_value_t = DEFAULT_DT)]
    pub dt: f64,
    /// Record every n-th step.
    #[arg(long, default_value_t = 1)]
    pub every: usize,
    /// CSV output (stdout otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Resolves `<bus>=<value>`, accepting a "bus" prefix on the id.
fn bus_assignment(net: &PuNetwork, s: &str) -> Result<(usize, f64)> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("expected <bus>=<value>, got \"{s}\""))?;
    let bus = net
        .bus_index(key)
        .or_else(|| key.strip_prefix("bus").and_then(|k| net.bus_index(k)))
        .ok_or_else(|| anyhow!("unknown bus \"{key}\""))?;
    let value: f64 = value.parse().with_context(|| format!("bad value in \"{s}\""))?;
    Ok((bus, value))
}

#[derive(Serialize)]
struct SimulationSummary {
    samples: usize,
    final_time: f64,
    growth_rate: Option<f64>,
    reference_growth_rate: f64,
}

fn simulate_cmd(g: &Global, a: &SimulateArgs) -> Result<u8> {
    let net = load(g, &a.grid)?;
    let reduced = reduce_to_inverters(&net, g.load_mode)?;
    let sm = assemble_state_matrix(&net, &reduced)?;
    let mut sc = Scenario::new(sm.v, a.t, a.dt);
    sc.record_every = a.every;
    let row = |bus: usize| -> Result<usize> {
        reduced
            .position(bus)
            .ok_or_else(|| anyhow!("bus \"{}\" has no inverter", net.buses[bus].id))
    };
    for s in &a.dp {
        let (bus, x) = bus_assignment(&net, s)?;
        sc.delta_p[row(bus)?] += x;
    }
    for s in &a.dq {
        let (bus, x) = bus_assignment(&net, s)?;
        sc.delta_q[row(bus)?] += x;
    }
    for s in &a.load_step {
        let (bus, x) = bus_assignment(&net, s)?;
        sc.delta_p[row(bus)?] += load_step(&net, bus, x);
    }
    let traj = step_response(&sm, &sc)?;

    let mut w = csv_writer(a.out.as_deref())?;
    let mut header = vec!["t".to_string()];
    for id in &traj.bus_ids {
        header.push(format!("omega_{id}"));
        header.push(format!("V_{id}"));
        header.push(format!("theta_{id}"));
    }
    w.write_record(&header)?;
    let v = traj.v;
    for (t, x) in traj.t.iter().zip(&traj.x) {
        let mut rec = Vec::with_capacity(1 + 3 * v);
        rec.push(t.to_string());
        for i in 0..v {
            rec.push(x[v + i].to_string());
            rec.push(x[2 * v + i].to_string());
            rec.push(x[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;

    if a.out.is_some() {
        let summary = SimulationSummary {
            samples: traj.len(),
            final_time: *traj.t.last().unwrap_or(&0.0),
            growth_rate: dominant_growth_rate(&traj, &sm.m).ok(),
            reference_growth_rate: reference_growth_rate(&sm)?,
        };
        if g.json {
            print_json(&summary)?;
        } else {
            println!("{} samples to t = {} s", summary.samples, num(summary.final_time, 4));
            match summary.growth_rate {
                Some(r) => println!("envelope growth rate = {} 1/s", num(r, 4)),
                None => println!("envelope growth rate: n/a (no oscillation in the second half)"),
            }
            println!("max Re(eig(A)) without the zero mode = {} 1/s", num(summary.reference_growth_rate, 4));
        }
    }
    Ok(0)
}

// ---------------------------------------------------------------- oracle

#[derive(Args, Debug)]
pub struct OracleArgs {
    pub grid: PathBuf,
    /// CSV of eigenvalues (stdout otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct EigRow {
    re: f64,
    im: f64,
    cluster: Option<usize>,
    mu: Option<f64>,
    predicted_re: Option<f64>,
    predicted_im: Option<f64>,
    distance: Option<f64>,
}

#[derive(Serialize)]
struct OracleSummary {
    eigenvalues: usize,
    right_half_plane: usize,
    hausdorff: Option<f64>,
    hypotheses: Option<String>,
}

fn oracle_cmd(g: &Global, a: &OracleArgs) -> Result<u8> {
    let net = load(g, &a.grid)?;
    let reduced = reduce_to_inverters(&net, g.load_mode)?;
    let sm = assemble_state_matrix(&net, &reduced)?;
    let mut rows: Vec<EigRow> = Vec::new();
    let mut summary = OracleSummary {
        eigenvalues: 0,
        right_half_plane: 0,
        hausdorff: None,
        hypotheses: None,
    };
    match verify_theorem1(&net, &reduced) {
        Ok(mm) => {
            summary.hausdorff = Some(mm.hausdorff);
            for p in &mm.pairs {
                rows.push(EigRow {
                    re: p.oracle.re,
                    im: p.oracle.im,
                    cluster: Some(p.cluster + 1),
                    mu: Some(p.mu),
                    predicted_re: Some(p.predicted.re),
                    predicted_im: Some(p.predicted.im),
                    distance: Some(p.distance),
                });
            }
        }
        Err(e @ gridclust_core::error::GridError::Hypothesis(_)) => {
            summary.hypotheses = Some(e.to_string());
            for z in eigenvalues_general(&sm.a)? {
                rows.push(EigRow {
                    re: z.re,
                    im: z.im,
                    cluster: None,
                    mu: None,
                    predicted_re: None,
                    predicted_im: None,
                    distance: None,
                });
            }
        }
        Err(e) => return Err(e.into()),
    }
    rows.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    summary.eigenvalues = rows.len();
    // the angle-translation zero eigenvalue is not a right-half-plane mode
    let cut = 1e-9 * sm.a.norm();
    summary.right_half_plane = rows
        .iter()
        .filter(|r| r.re > 0.0 && r.re.hypot(r.im) > cut)
        .count();

    if a.out.is_some() || !g.json {
        let mut w = csv_writer(a.out.as_deref())?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    if g.json {
        print_json(&summary)?;
    } else if a.out.is_some() {
        print!("{}", oracle_text(&summary));
    } else {
        eprint!("{}", oracle_text(&summary));
    }
    Ok(0)
}

fn oracle_text(s: &OracleSummary) -> String {
    let mut t = format!(
        "{} eigenvalues of A, {} in the right half-plane\n",
        s.eigenvalues, s.right_half_plane
    );
    if let Some(h) = s.hausdorff {
        let _ = writeln!(t, "Hausdorff distance to the cluster modes = {h:.3e}");
    }
    if let Some(why) = &s.hypotheses {
        let _ = writeln!(t, "no cluster pairing: {why}");
    }
    t
}

// ---------------------------------------------------------------- reduce

#[derive(Args, Debug)]
pub struct ReduceArgs {
    pub grid: PathBuf,
    /// Output (1+rho^2)B instead of B.
    #[arg(long)]
    pub scaled: bool,
    /// CSV output (stdout otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn reduce_cmd(g: &Global, a: &ReduceArgs) -> Result<u8> {
    let net = load(g, &a.grid)?;
    let reduced = reduce_to_inverters(&net, g.load_mode)?;
    let b = if a.scaled { reduced.scaled() } else { reduced.b.clone() };
    let ids: Vec<String> = reduced.retained.iter().map(|&i| net.buses[i].id.clone()).collect();
    if g.json && a.out.is_none() {
        let rows: Vec<Vec<f64>> = (0..b.nrows()).map(|i| b.row(i).iter().copied().collect()).collect();
        print_json(&serde_json::json!({ "bus_ids": ids, "matrix": rows, "warnings": reduced.warnings }))?;
        return Ok(0);
    }
    let mut w = csv_writer(a.out.as_deref())?;
    w.write_record(&ids)?;
    for i in 0..b.nrows() {
        w.write_record(b.row(i).iter().map(f64::to_string))?;
    }
    w.flush()?;
    for warning in &reduced.warnings {
        eprintln!("warning: {warning}");
    }
    Ok(0)
}

// ---------------------------------------------------------------- report

#[derive(Args, Debug)]
pub struct ReportArgs {
    pub grid: PathBuf,
    #[arg(long)]
    pub k: Option<f64>,
}

fn report_cmd(g: &Global, a: &ReportArgs) -> Result<u8> {
    let net = load(g, &a.grid)?;
    let an = run_analysis(g, &net, a.k, DEFAULT_MEMBER_THRESHOLD, true)?;
    let name = a.grid.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let mut s = String::new();
    let _ = writeln!(s, "grid report: {name}");
    let _ = writeln!(
        s,
        "buses: {}   lines: {}   inverters: {}",
        net.buses.len(),
        net.lines.len(),
        an.reduced.dim()
    );
    let mu: Vec<String> = an.spectrum.mu.iter().map(|m| num(*m, 4)).collect();
    let _ = writeln!(s, "spectrum mu: {{{}}}", mu.join(", "));
    s.push_str(&analysis_text(&an));

    let reduced = &an.reduced;
    let sm = assemble_state_matrix(&net, reduced)?;
    let eigs = eigenvalues_general(&sm.a)?;
    let cut = 1e-9 * sm.a.norm();
    let rhp = eigs.iter().filter(|z| z.re > 0.0 && z.norm() > cut).count();
    let _ = writeln!(s, "full model: {} eigenvalues, {rhp} in the right half-plane", eigs.len());
    match verify_theorem1(&net, reduced) {
        Ok(mm) => {
            let _ = writeln!(s, "cluster modes match eig(A): Hausdorff distance {:.3e}", mm.hausdorff);
        }
        Err(e) => {
            let _ = writeln!(s, "cluster modes not compared: {e}");
        }
    }
    if g.json {
        print_json(&serde_json::json!({ "report": s, "summary": an.summary() }))?;
    } else {
        print!("{s}");
    }
    Ok(an.exit_code() as u8)
}
