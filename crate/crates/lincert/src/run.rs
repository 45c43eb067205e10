//! Stage execution for a scenario over its seed ensemble.

use std::sync::Arc;
use std::time::Instant;

use lincert_core::conjugacy::{ConjugacyField, ProbeSpec, Tolerances};
use lincert_core::flow::{self, SystemSpec};
use lincert_core::linalg::Vector;
use lincert_core::randomize::{
    cocycle_from_rde, cutoff, local_linearize, t_max, CocycleSpec, CutoffConfig, CutoffSpec, LocalConfig, RandomConjugacy,
    RandomConjugacyConfig, TMax,
};
use lincert_core::sampling;
use lincert_core::sde::{self, heun_stratonovich, linearize_sde, CohomologyConfig, PipelineConfig, SdeSystem};
use lincert_core::spectrum::{lyapunov_qr, LyapunovSpectrum, SpectrumConfig};
use lincert_core::timebase::{generate_wiener, MdsShift, NoisePath, TimeGrid};
use rayon::prelude::*;
use serde_json::json;

use crate::error::{CliError, CliResult, EXIT_FAIL, EXIT_PASS};
use crate::report::{Check, ErrorRecord, Report, Series, SCHEMA_VERSION};
use crate::scenario::{BuiltSystem, GridDesc, Output, Scenario, Stage};

/// Overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub stage: Option<Stage>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

/// A report with its optional plot data, named by file stem.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    pub series: Vec<(String, Series)>,
}

/// Evidence of one seed.
struct SeedOutcome {
    checks: Vec<Check>,
    artifact: serde_json::Value,
    series: Vec<(String, Series)>,
    /// Top exponent, for ensemble oracles.
    exponents: Option<Vec<f64>>,
}

/// Probe times of the random conjugacy.
const RANDOM_TIMES: [f64; 3] = [0.5, 1.0, 2.0];
/// Probes drawn for trajectories.
const TRAJECTORY_PROBES: usize = 3;

/// Run `scenario` with `opts`; never fails, errors land in the report.
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> RunOutput {
    let start = Instant::now();
    let mut sc = scenario.clone();
    if let Some(s) = opts.seed {
        sc.seeds.base = s;
    }
    if let Some(w) = opts.workers {
        sc.workers = w.max(1);
    }
    let stage = opts.stage.unwrap_or(sc.stage);
    let seeds = sc.seeds.list();
    let mut checks = Vec::new();
    let mut artifacts = Vec::new();
    let mut series = Vec::new();
    let mut errors = Vec::new();
    let mut ensemble = Vec::new();
    match sc.build() {
        Err(e) => errors.push(record(&e, None)),
        Ok(sys) => {
            let outcomes = in_pool(sc.workers, || {
                seeds.par_iter().map(|&seed| (seed, run_seed(&sc, stage, &sys, seed))).collect::<Vec<_>>()
            });
            for (seed, out) in outcomes {
                match out {
                    Ok(o) => {
                        let tag = seeds.len() > 1;
                        checks.extend(o.checks.into_iter().map(|c| if tag { c.with_seed(seed) } else { c }));
                        artifacts.push(json!({ "seed": seed, "evidence": o.artifact }));
                        for (name, s) in o.series {
                            series.push((format!("{}.seed{seed}.{name}", sc.name), s));
                        }
                        if let Some(e) = o.exponents {
                            ensemble.push(e);
                        }
                    }
                    Err(e) => errors.push(record(&e, Some(seed))),
                }
            }
        }
    }
    if let Some(o) = &sc.oracle {
        if o.average && !ensemble.is_empty() && errors.is_empty() {
            for (i, want) in o.exponents.iter().enumerate() {
                let got: Vec<f64> = ensemble.iter().filter_map(|e| e.get(i).copied()).collect();
                let mean = got.iter().sum::<f64>() / got.len() as f64;
                checks.push(Check::le(
                    format!("seed-average exponent {} vs {want}", i + 1),
                    "Lyapunov spectrum of the linear part",
                    (mean - want).abs(),
                    o.tol,
                ));
            }
        }
    }
    let mut pass = errors.is_empty() && checks.iter().all(|c| c.pass);
    let mut exit_code = errors.first().map(|e| e.exit_code).unwrap_or(if pass { EXIT_PASS } else { EXIT_FAIL });
    let mut expected_rejection = None;
    if let Some(exp) = &sc.expect {
        let matched = !errors.is_empty()
            && errors.iter().all(|e| e.exit_code == exp.exit && exp.message.as_ref().is_none_or(|m| e.message.contains(m.as_str())));
        expected_rejection = Some(matched);
        pass = false;
        if errors.is_empty() {
            exit_code = EXIT_FAIL;
        }
    }
    let config = serde_json::to_value(&sc).unwrap_or(serde_json::Value::Null);
    RunOutput {
        report: Report {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            scenario: sc.name.clone(),
            stage: stage.name().to_string(),
            seeds,
            config,
            checks,
            artifacts,
            errors,
            expected_rejection,
            pass,
            exit_code,
            runtime_ms: start.elapsed().as_millis() as u64,
        },
        series,
    }
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn record(e: &CliError, seed: Option<u64>) -> ErrorRecord {
    ErrorRecord {
        kind: e.kind().to_string(),
        message: e.to_string(),
        exit_code: e.exit_code(),
        seed,
    }
}

fn time_grid(g: &GridDesc) -> CliResult<TimeGrid> {
    Ok(TimeGrid::new(g.t0, g.t1, g.dt)?)
}

/// The sampled path for an RDE: zero without noise, with an OU cache when the system reads it.
pub fn rde_path(sys: &SystemSpec, g: &GridDesc, seed: u64) -> CliResult<Arc<NoisePath>> {
    let grid = time_grid(g)?;
    let dynm = sys.dynamics();
    let k = dynm.noise_dims();
    let path = if k == 0 {
        NoisePath::zero(1, grid)?
    } else if dynm.history() > 0.0 {
        generate_wiener(seed, k, grid)?.with_stationary_ou(dynm.history())?
    } else {
        generate_wiener(seed, k, grid)?
    };
    Ok(Arc::new(path))
}

/// The Wiener path of an SDE.
pub fn sde_path(sys: &SdeSystem, g: &GridDesc, seed: u64) -> CliResult<Arc<NoisePath>> {
    Ok(Arc::new(generate_wiener(seed, sys.noise_dims(), time_grid(g)?)?))
}

fn run_seed(sc: &Scenario, stage: Stage, sys: &BuiltSystem, seed: u64) -> CliResult<SeedOutcome> {
    match (stage, sys) {
        (Stage::Spectrum, _) => spectrum_stage(sc, sys, seed),
        (Stage::Conjugacy, BuiltSystem::Rde(s)) if s.dynamics().noise_dims() == 0 => conjugacy_stage(sc, s, seed),
        (Stage::Conjugacy, BuiltSystem::Rde(s)) => random_stage(sc, s, seed),
        (Stage::Local, BuiltSystem::Rde(s)) => local_stage(sc, s, seed),
        (Stage::SdePipeline, BuiltSystem::Sde(s)) => pipeline_stage(sc, s, seed),
        (Stage::SdePipeline, BuiltSystem::Rde(_)) => Err(CliError::scenario("the sde-pipeline stage needs an SDE system")),
        (_, BuiltSystem::Sde(_)) => Err(CliError::scenario(format!(
            "the {} stage needs an RDE system; SDEs run through sde-pipeline",
            stage.name()
        ))),
    }
}

fn spectrum_config() -> SpectrumConfig {
    SpectrumConfig::default()
}

fn spectrum_json(s: &LyapunovSpectrum) -> serde_json::Value {
    json!({
        "exponents": s.exponents,
        "multiplicities": s.multiplicities,
        "raw": s.raw,
        "gap": s.gap,
        "horizon": s.horizon,
        "drift": s.drift,
    })
}

fn spectrum_stage(sc: &Scenario, sys: &BuiltSystem, seed: u64) -> CliResult<SeedOutcome> {
    let g = &sc.grid;
    let spec = match sys {
        BuiltSystem::Rde(s) => {
            let path = rde_path(s, g, seed)?;
            lyapunov_qr(s, &MdsShift::new(path), g.horizon, g.dt, &spectrum_config())?
        }
        BuiltSystem::Sde(s) => {
            let path = sde_path(s, g, seed)?;
            sde::lyapunov_sde(s, &MdsShift::new(path), g.horizon, g.dt, &spectrum_config())?
        }
    };
    let alpha = spec.alpha()?;
    let mut checks = vec![Check::le(
        "top exponent negative",
        "uniform stability gate of the linear part",
        spec.top(),
        0.0,
    )];
    if let Some(o) = sc.oracle.as_ref().filter(|o| !o.average) {
        if o.exponents.len() != spec.exponents.len() {
            checks.push(Check::le("number of exponent classes", "Lyapunov spectrum of the linear part", spec.exponents.len() as f64, o.exponents.len() as f64));
        }
        for (i, (got, want)) in spec.exponents.iter().zip(&o.exponents).enumerate() {
            checks.push(Check::le(
                format!("exponent {} vs {want}", i + 1),
                "Lyapunov spectrum of the linear part",
                (got - want).abs(),
                o.tol,
            ));
        }
    }
    let mut artifact = spectrum_json(&spec);
    artifact["alpha"] = json!(alpha);
    Ok(SeedOutcome {
        checks,
        artifact,
        series: Vec::new(),
        exponents: Some(spec.exponents.clone()),
    })
}

fn trajectories(sys: &SystemSpec, omega: &MdsShift, grid: &TimeGrid, radius: f64, seed: u64) -> CliResult<Series> {
    let n = sys.dim();
    let mut cols = vec!["t".to_string()];
    let points = sampling::ball_points(seed, TRAJECTORY_PROBES, n, radius);
    let mut runs = Vec::new();
    for (p, x) in points.iter().enumerate() {
        runs.push(flow::solve_ivp(sys, omega, grid.t0(), x, grid)?);
        cols.extend((0..n).map(|i| format!("probe{p}_x{i}")));
    }
    let mut s = Series::new(cols);
    for k in 0..grid.len() {
        let mut row = vec![grid.node(k)];
        for r in &runs {
            row.extend(r.states()[k].iter().copied());
        }
        s.push(row);
    }
    Ok(s)
}

fn conjugacy_stage(sc: &Scenario, sys: &SystemSpec, seed: u64) -> CliResult<SeedOutcome> {
    let g = &sc.grid;
    let path = rde_path(sys, g, seed)?;
    let omega = MdsShift::new(path);
    let field = ConjugacyField::standard(sys, &omega, g.tau0, g.dt)?;
    let c = field.constants().clone();
    let tol = Tolerances {
        bound: sc.tol("tol_bound", 1e-3),
        lipschitz: sc.tol("tol_lipschitz", 1e-2),
        conj: sc.tol("tol_conj", 1e-4),
        fd: sc.tol("tol_fd", 1e-4),
    };
    let probes = ProbeSpec {
        seed,
        tolerances: tol,
        times: ProbeSpec::default().times.into_iter().map(|t| t + g.tau0).collect(),
        ..ProbeSpec::default()
    };
    let xi = Vector::from_element(sys.dim(), 1.0);
    let ops = field.operator_report(100, probes.radius, seed, g.tau0, &xi)?;
    let cert = field.certify(&probes)?;
    let a = "Lyapunov-Perron operators";
    let t = "topological conjugacy";
    let mut checks = vec![
        Check::le("op_F sup-norm", a, ops.op_f_sup, ops.op_f_bound * (1.0 + tol.bound)),
        Check::le("op_F contraction ratio", a, ops.contraction_max, ops.contraction_bound * (1.0 + tol.bound)),
        Check::le("Picard gap ratio", a, ops.picard_gap_ratio, 1.25 * ops.contraction_bound),
        Check::le("Picard iterations", a, ops.picard_iterations as f64, ops.picard_iteration_bound),
        Check::le("conjugation residual", t, cert.conjugation_residual, tol.conj),
        Check::le("G∘H and H∘G identity residual", t, cert.inverse_residual, tol.conj),
        Check::le("near-identity sup", t, cert.near_identity_empirical, cert.near_identity_bound * (1.0 + tol.bound)),
        Check::le(
            "empirical Lipschitz of H / theory",
            t,
            cert.per_time.iter().map(|r| r.l_h_empirical / r.l_h_theory).fold(0.0, f64::max),
            1.0 + tol.lipschitz,
        ),
        Check::le("empirical Lipschitz of G", t, cert.l_g_empirical, cert.l_g_theory * (1.0 + tol.lipschitz)),
        Check::le("solution contraction ratio", t, cert.solution_contraction, 1.0 + tol.bound),
    ];
    let mut artifact = json!({ "operators": ops, "certificate": cert });
    if sys.dynamics().derivative_order() >= 1 && c.require_smooth().is_ok() {
        let smooth = field.certify_smooth(&ProbeSpec {
            residual_probes: 30,
            ..probes.clone()
        })?;
        let s = "smooth conjugacy";
        checks.push(Check::le("D2G formula vs finite differences", s, smooth.fd_relative_error, tol.fd));
        checks.push(Check::le("variational bound ratio", s, smooth.variational_ratio, 1.0 + tol.bound));
        checks.push(Check::gt("min det D2G", s, smooth.min_determinant, 0.0));
        artifact["smooth"] = serde_json::to_value(&smooth).map_err(|e| CliError::Output(e.to_string()))?;
    }
    let mut series = Vec::new();
    if sc.wants(Output::Trajectories) {
        let grid = TimeGrid::new(g.tau0, g.tau0 + 5.0, g.dt)?;
        series.push(("trajectories".to_string(), trajectories(sys, &omega, &grid, 2.0, seed)?));
    }
    Ok(SeedOutcome {
        checks,
        artifact,
        series,
        exponents: None,
    })
}

fn random_stage(sc: &Scenario, sys: &SystemSpec, seed: u64) -> CliResult<SeedOutcome> {
    let g = &sc.grid;
    let path = rde_path(sys, g, seed)?;
    let coc = cocycle_from_rde(sys, path, g.dt, sc.tol("tol_cocycle", lincert_core::randomize::TOL_COCYCLE))?;
    let config = RandomConjugacyConfig {
        spectrum_horizon: g.horizon,
        seed,
        ..RandomConjugacyConfig::default()
    };
    let rc = RandomConjugacy::new(&coc, config)?;
    let tol_conj = sc.tol("tol_conj", 1e-3);
    let tol_bound = sc.tol("tol_bound", 1e-2);
    let cert = rc.certify(&RANDOM_TIMES, 20, 5.0, seed, tol_conj, tol_bound)?;
    let r = "random conjugacy";
    let mut checks = vec![Check::le("cocycle property", "cocycle of the random system", coc.report().cocycle_residual, coc.report().tol)];
    for (t, res) in cert.times.iter().zip(&cert.orbit_residuals) {
        checks.push(Check::le(format!("orbit residual at t={t}"), r, *res, tol_conj));
    }
    checks.push(Check::le("near-identity vs M/α", r, cert.near_identity, cert.near_identity_bound * (1.0 + tol_bound)));
    checks.push(Check::le("inverse residual", r, cert.inverse_residual, tol_conj));
    if let Some(d) = cert.min_determinant {
        checks.push(Check::gt("min det D(h⁻¹)", r, d, 0.0));
    }
    let mut series = Vec::new();
    if sc.wants(Output::Trajectories) {
        let grid = TimeGrid::new(0.0, 5.0, g.dt)?;
        series.push(("trajectories".to_string(), trajectories(sys, coc.omega(), &grid, 2.0, seed)?));
    }
    Ok(SeedOutcome {
        checks,
        artifact: json!({ "cocycle": coc.report(), "spectrum": spectrum_json(rc.spectrum()), "certificate": cert }),
        series,
        exponents: Some(rc.spectrum().exponents.clone()),
    })
}

fn local_stage(sc: &Scenario, sys: &SystemSpec, seed: u64) -> CliResult<SeedOutcome> {
    let g = &sc.grid;
    let path = rde_path(sys, g, seed)?;
    let coc = cocycle_from_rde(sys, path.clone(), g.dt, sc.tol("tol_cocycle", lincert_core::randomize::TOL_COCYCLE))?;
    let spectrum = lyapunov_qr(sys, coc.omega(), g.horizon, g.dt, &spectrum_config())?;
    spectrum.alpha()?;
    let t_rep = 12.0 / -spectrum.top();
    let local = LocalConfig {
        seed,
        tol_conj: sc.tol("tol_conj", 1e-3),
        tol_identity: sc.tol("tol_identity", 1e-6),
        conjugacy: RandomConjugacyConfig {
            known_spectrum: Some(spectrum.clone()),
            spectrum_horizon: g.horizon,
            seed,
            ..RandomConjugacyConfig::default()
        },
        ..LocalConfig::default()
    };
    let lo = (((-t_rep - 2.0) / g.dt).floor() * g.dt).max(g.t0 + sys.dynamics().history());
    let cut = Arc::new(cutoff(sys, &path, lo, local.horizon + 2.0, &CutoffConfig { seed, ..CutoffConfig::default() })?);
    let report = local_linearize(&coc, &cut, &local)?;
    let l = "local linearization with cutoff";
    let b = "cutoff of the nonlinearity";
    let exit_horizon = local.horizon + 2.0;
    let (inside_gap, inside_probes) = inside_ball_gap(sys, &cut, coc.omega(), exit_horizon, seed)?;
    let (reversals, reaches_beyond) = t_max_reversals(&coc, &cut, exit_horizon)?;
    let checks = vec![
        Check::le("cocycle property", "cocycle of the random system", coc.report().cocycle_residual, coc.report().tol),
        Check::le("F̃ = F inside the ball", b, inside_gap, 0.0),
        Check::ge("inside-ball probes", b, inside_probes as f64, 1.0),
        Check::gt("min cutoff radius", b, report.cutoff.sigma_min, 0.0),
        Check::le("windowed orbit residual", l, report.max_residual, report.tol_conj),
        Check::le("ψ = ψ̃ before exit", l, report.max_identity_gap, report.tol_identity),
        Check::le("t_max order reversals over dyadic shrinking", l, reversals as f64, 0.0),
        Check::ge("smallest dyadic state never exits", l, if reaches_beyond { 1.0 } else { 0.0 }, 1.0),
    ];
    Ok(SeedOutcome {
        checks,
        artifact: json!({ "cocycle": coc.report(), "spectrum": spectrum_json(&spectrum), "local": report }),
        series: Vec::new(),
        exponents: Some(spectrum.exponents.clone()),
    })
}

/// Largest |F̃ − F| over probes strictly inside the random ball, and the probe count.
fn inside_ball_gap(sys: &SystemSpec, cut: &Arc<CutoffSpec>, omega: &MdsShift, horizon: f64, seed: u64) -> CliResult<(f64, usize)> {
    let cut_sys = cut.system(sys)?;
    let (orig, tilde) = (sys.dynamics(), cut_sys.dynamics());
    let n = sys.dim();
    let mut gap: f64 = 0.0;
    let mut count = 0;
    let steps = (horizon / 0.25).round() as usize;
    for k in 0..steps {
        let t = k as f64 * 0.25;
        let sigma = cut.sigma_at(omega, t);
        for x in sampling::ball_points(seed.wrapping_add(k as u64), 20, n, sigma) {
            if x.norm() > sigma {
                continue;
            }
            let d = (tilde.nonlinear(t, &x, omega) - orig.nonlinear(t, &x, omega)).amax();
            gap = gap.max(if d.is_nan() { f64::INFINITY } else { d });
            count += 1;
        }
    }
    Ok((gap, count))
}

/// Count of dyadic steps x → x/2 that shorten t_max, and whether the last state stays inside.
fn t_max_reversals(coc: &CocycleSpec, cut: &CutoffSpec, horizon: f64) -> CliResult<(usize, bool)> {
    let n = coc.system().dim();
    let s0 = cut.sigma_at(coc.omega(), 0.0);
    let mut last = 0.0;
    let mut reversals = 0;
    let mut beyond = false;
    for j in 0..12 {
        let x = Vector::from_element(n, s0 * 0.5f64.powi(j) / (n as f64).sqrt());
        let t = match t_max(coc, cut, &x, horizon)? {
            TMax::Finite(t) => t,
            TMax::Beyond => f64::INFINITY,
        };
        if t < last {
            reversals += 1;
        }
        beyond = t.is_infinite();
        last = t;
    }
    Ok((reversals, beyond))
}

fn pipeline_stage(sc: &Scenario, sys: &SdeSystem, seed: u64) -> CliResult<SeedOutcome> {
    let g = &sc.grid;
    let path = sde_path(sys, g, seed)?;
    let defaults = PipelineConfig::default();
    let config = PipelineConfig {
        cohomology: CohomologyConfig {
            t_hist: g.history,
            ..CohomologyConfig::default()
        },
        dt: g.dt,
        spectrum_horizon: g.horizon,
        seed,
        tol_inv: sc.tol("tol_inv", defaults.tol_inv),
        tol_fixed: sc.tol("tol_fixed", defaults.tol_fixed),
        tol_cocycle: sc.tol("tol_cocycle", defaults.tol_cocycle),
        tol_end_to_end: sc.tol("tol_end_to_end", defaults.tol_end_to_end),
        local: LocalConfig {
            seed,
            tol_conj: sc.tol("tol_conj", defaults.local.tol_conj),
            tol_identity: sc.tol("tol_identity", defaults.local.tol_identity),
            ..defaults.local.clone()
        },
        ..defaults
    };
    let report = linearize_sde(sys, path.clone(), &config)?;
    let checks = report
        .checks
        .iter()
        .map(|c| Check::le(format!("{}: {}", c.stage, c.name), pipeline_anchor(&c.stage), c.value, c.bound))
        .collect();
    let mut series = Vec::new();
    if sc.wants(Output::Trajectories) {
        let omega = MdsShift::new(path);
        let grid = TimeGrid::new(0.0, 5.0, g.dt)?;
        let mut cols = vec!["t".to_string()];
        let points = sampling::ball_points(seed, TRAJECTORY_PROBES, sys.dim(), 1.0);
        let mut runs = Vec::new();
        for (p, x) in points.iter().enumerate() {
            runs.push(heun_stratonovich(sys, &omega, x, &grid)?);
            cols.extend((0..sys.dim()).map(|i| format!("probe{p}_x{i}")));
        }
        let mut s = Series::new(cols);
        for k in 0..grid.len() {
            let mut row = vec![grid.node(k)];
            for r in &runs {
                row.extend(r.states()[k].iter().copied());
            }
            s.push(row);
        }
        series.push(("trajectories".to_string(), s));
    }
    Ok(SeedOutcome {
        checks,
        artifact: serde_json::to_value(&report).map_err(|e| CliError::Output(e.to_string()))?,
        series,
        exponents: Some(report.exponents.clone()),
    })
}

fn pipeline_anchor(stage: &str) -> &'static str {
    match stage {
        "cohomology" => "stationary cohomology of the SDE",
        "rde" => "cocycle of the induced random ODE",
        "local" => "local linearization of the random ODE",
        _ => "composite conjugacy of the SDE",
    }
}
