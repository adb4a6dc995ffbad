use std::fs;
use std::io::Write;
use std::path::Path;

use helfrich_core::curvature::{set_sign_mutation, CurvatureField};
use helfrich_core::energy::{
    helfrich_energy, lower_bound_certificate, multiplicity_bound, optimal_sphere_upto, willmore_energy, SelectionRule,
};
use helfrich_core::flow::{self, FlowRun, FlowTrace};
use helfrich_core::mesh::generate;
use helfrich_core::mesh::io::{read_mesh, write_off_to};
use helfrich_core::mesh::MeshTopology;
use helfrich_core::transport::{wasserstein, wasserstein_spatial};
use helfrich_core::validation::{self, Suite};
use helfrich_core::{HelfrichParams, Measure, MeshVarifold, ParticleVarifold, SphereArgmin, TransportConfig};
use serde::Serialize;

use crate::config::{self, RunConfig};
use crate::output::{canonical_hash, line_plot, sha256_hex, RunDir, RunManifest, Timer};
use crate::{CliError, EnergyArgs, SolverArg, SphereArgs, TransportArgs, ValidateArgs};

/// Prints a line; a closed pipe is not an error.
fn emit(line: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{line}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::numerical(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Loads an OFF/OBJ file; the genus defaults to the one implied by the
/// Euler characteristic.
fn load_mesh(path: &Path, theta_plus: u32, theta_minus: u32, genus: Option<u32>) -> Result<MeshVarifold, CliError> {
    let raw = read_mesh(path).map_err(|e| match e {
        helfrich_core::Error::Io(io) => CliError::usage(io.to_string()),
        other => CliError::usage(format!("{}: {other}", path.display())),
    })?;
    let genus = match genus {
        Some(g) => g,
        None => {
            let topo = MeshTopology::new(raw.vertices.len(), raw.faces.clone())
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            let chi = topo.euler_characteristic();
            if chi > 2 || chi % 2 != 0 {
                return Err(CliError::usage(format!("{}: Euler characteristic {chi} of a non-orientable or disconnected surface", path.display())));
            }
            ((2 - chi) / 2) as u32
        }
    };
    MeshVarifold::new(raw.vertices, raw.faces, theta_plus, theta_minus, genus)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn off_bytes(mesh: &MeshVarifold) -> Vec<u8> {
    let mut buf = Vec::new();
    write_off_to(&mut buf, mesh.positions(), mesh.faces()).expect("writing to memory");
    buf
}

#[derive(Serialize)]
struct FlowSummary {
    status: String,
    steps_completed: usize,
    tau: f64,
    tol_accept: f64,
    initial_energy: f64,
    final_energy: f64,
    final_willmore: f64,
    final_lower_bound: f64,
    final_multiplicity: u32,
    final_diameter: f64,
    stalled_steps: usize,
    total_inner_iterations: usize,
    max_acceptance_slack: f64,
    params: HelfrichParams,
    optimal_sphere_multiplicity: Option<SphereArgmin>,
    optimal_sphere_energy: Option<f64>,
}

fn summarize(trace: &FlowTrace, cfg: &flow::FlowConfig, params: &HelfrichParams, status: &str) -> Option<FlowSummary> {
    let first = trace.records.first()?;
    let last = trace.records.last()?;
    let slack = trace
        .records
        .windows(2)
        .map(|w| {
            let d = match cfg.distance_power {
                flow::DistancePower::Squared => w[1].increment * w[1].increment,
                flow::DistancePower::Order => w[1].increment.powf(cfg.transport.p),
            };
            w[1].energy + d / (2.0 * cfg.tau) - w[0].energy
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let sphere = if params.v0.is_none() { optimal_sphere_upto(params, None).ok() } else { None };
    Some(FlowSummary {
        status: status.to_string(),
        steps_completed: last.step,
        tau: trace.tau,
        tol_accept: trace.tol_accept,
        initial_energy: first.energy,
        final_energy: last.energy,
        final_willmore: last.willmore,
        final_lower_bound: last.lower_bound,
        final_multiplicity: last.multiplicity,
        final_diameter: last.diameter,
        stalled_steps: trace.records.iter().filter(|r| r.stalled).count(),
        total_inner_iterations: trace.records.iter().map(|r| r.inner_iterations).sum(),
        max_acceptance_slack: if slack.is_finite() { slack } else { 0.0 },
        params: *params,
        optimal_sphere_multiplicity: sphere.as_ref().map(|s| s.argmin),
        optimal_sphere_energy: sphere.as_ref().and_then(|s| s.energies.get(&s.argmin.first()).copied()),
    })
}

fn write_trajectory(
    dir: &mut RunDir,
    trace: &FlowTrace,
    snapshots: &[(usize, MeshVarifold)],
    cfg: &flow::FlowConfig,
    params: &HelfrichParams,
    status: &str,
) -> Result<(), CliError> {
    let mut csv = Vec::new();
    trace.write_csv(&mut csv)?;
    dir.write("trace.csv", &csv)?;
    for (step, mesh) in snapshots {
        dir.write(&format!("snapshot_{step:04}.off"), &off_bytes(mesh))?;
    }
    if let Some(summary) = summarize(trace, cfg, params, status) {
        let mut json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
        json.push(b'\n');
        dir.write("summary.json", &json)?;
    }
    let step = |f: fn(&flow::StepRecord) -> f64| trace.records.iter().map(|r| (r.step as f64, f(r))).collect::<Vec<_>>();
    let plots = [
        (
            "energy.svg",
            line_plot(
                "energy",
                "step",
                &[("G", "#1f77b4", step(|r| r.energy)), ("lower bound", "#d62728", step(|r| r.lower_bound))],
            ),
        ),
        (
            "diameter.svg",
            line_plot(
                "diameter",
                "step",
                &[
                    ("diameter", "#1f77b4", step(|r| r.diameter)),
                    ("sqrt(m / W)", "#2ca02c", step(|r| r.diameter_lower)),
                    ("(2 / pi) sqrt(m W)", "#d62728", step(|r| r.diameter_upper)),
                ],
            ),
        ),
        ("increments.svg", line_plot("step increment W_p", "step", &[("W_p", "#1f77b4", step(|r| r.increment))])),
    ];
    for (name, svg) in plots {
        dir.write(name, svg.as_bytes())?;
    }
    Ok(())
}

pub fn flow(config_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let mut timer = Timer::new();
    timer.start("setup");
    let text = fs::read_to_string(config_path).map_err(|e| CliError::io(config_path, e))?;
    let cfg: RunConfig = config::parse(config_path, &text)?;
    config::validate_static(&cfg)?;
    let base = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let out_dir = match (out, &cfg.output) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => base.join(o),
        (None, None) => {
            let stem = config_path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            base.join(format!("{stem}_out"))
        }
    };

    let (mesh, mesh_source, mesh_hash) = match (&cfg.mesh.path, &cfg.mesh.generate) {
        (Some(p), _) => {
            let full = base.join(p);
            let bytes = read_file(&full)?;
            let mesh = load_mesh(&full, cfg.mesh.theta_plus, cfg.mesh.theta_minus, cfg.mesh.genus)?;
            (mesh, full.display().to_string(), sha256_hex(&bytes))
        }
        (None, Some(g)) => {
            let mesh = g.build(cfg.mesh.theta_plus.max(1), cfg.seed)?;
            let mesh = mesh
                .with_multiplicity(cfg.mesh.theta_plus, cfg.mesh.theta_minus)
                .map_err(|e| CliError::usage(format!("mesh: {e}")))?;
            if let Some(genus) = cfg.mesh.genus {
                if genus != mesh.genus() {
                    return Err(CliError::usage(format!("mesh.genus = {genus} but the generated surface has genus {}", mesh.genus())));
                }
            }
            (mesh, "generated".to_string(), canonical_hash(g))
        }
        (None, None) => unreachable!("checked by validate_static"),
    };
    let mesh = match (cfg.mesh.rescale_to_mass, cfg.params.m0) {
        (true, Some(m0)) => mesh.rescaled_to_mass(m0),
        (true, None) => return Err(CliError::usage("mesh.rescale_to_mass requires params.m0")),
        _ => mesh,
    };
    let params = config::resolve_params(&cfg.params, &mesh)?;
    let flow_cfg = cfg.flow.to_config()?;
    flow_cfg.validate(&params).map_err(|e| CliError::usage(format!("flow: {e}")))?;

    let mut dir = RunDir::create(&out_dir)?;
    let manifest = |dir: &RunDir, status: &str, phases| RunManifest {
        tool: "helfrich",
        version: env!("CARGO_PKG_VERSION"),
        config_path: config_path.display().to_string(),
        config_sha256: canonical_hash(&cfg),
        mesh_source: mesh_source.clone(),
        mesh_sha256: mesh_hash.clone(),
        seed: cfg.seed,
        status: status.to_string(),
        phases,
        files: dir.files(),
    };

    let prepared = (|| -> Result<MeshVarifold, CliError> {
        let mut m = mesh.clone();
        if cfg.mesh.relax_iterations > 0 {
            timer.start("relax");
            m = flow::relax(&m, &flow_cfg, &params, cfg.mesh.relax_iterations)?;
        }
        if cfg.flow.prepare {
            timer.start("prepare");
            m = flow::prepare_initial(&m, &flow_cfg, &params)?;
        }
        Ok(m)
    })();
    let start = match prepared {
        Ok(m) => m,
        Err(e) => {
            let status = format!("failed: {}", e.message);
            let m = manifest(&dir, &status, timer.finish());
            dir.write_manifest(&m)?;
            return Err(e);
        }
    };

    timer.start("flow");
    let result = flow::run_flow(&start, &flow_cfg, &params);
    timer.start("write");
    match result {
        Ok(FlowRun { trace, snapshots, .. }) => {
            write_trajectory(&mut dir, &trace, &snapshots, &flow_cfg, &params, "completed")?;
            let m = manifest(&dir, "completed", timer.finish());
            dir.write_manifest(&m)?;
            let last = trace.records.last().expect("initial record");
            emit(&format!(
                "{} steps, energy {:.10} -> {:.10}, output in {}",
                last.step,
                trace.records[0].energy,
                last.energy,
                out_dir.display()
            ))
        }
        Err(failure) => {
            let status = format!("failed: {}", failure.error);
            write_trajectory(&mut dir, &failure.trace, &failure.snapshots, &flow_cfg, &params, &status)?;
            let m = manifest(&dir, &status, timer.finish());
            dir.write_manifest(&m)?;
            let mut e = CliError::from(failure.error);
            e.message = format!("{} (partial output in {})", e.message, out_dir.display());
            e.code = 1;
            Err(e)
        }
    }
}

#[derive(Serialize)]
struct EnergyReport {
    mesh: String,
    vertices: usize,
    faces: usize,
    genus: u32,
    theta_plus: u32,
    theta_minus: u32,
    mass: f64,
    enclosed_volume: f64,
    params: HelfrichParams,
    energy: helfrich_core::EnergyBreakdown,
    willmore: f64,
    lower_bound_certificate: f64,
    multiplicity_bound: Option<u64>,
    multiplicity_bound_note: Option<String>,
    diameter: f64,
    diameter_bounds: (f64, f64),
}

pub fn energy(a: &EnergyArgs) -> Result<(), CliError> {
    let (mesh, name) = match &a.mesh {
        Some(p) => (load_mesh(p, a.theta_plus, a.theta_minus, a.genus)?, p.display().to_string()),
        None => {
            let m = generate::icosphere(3, 1.0, a.theta_plus.max(1))?;
            (m.with_multiplicity(a.theta_plus, a.theta_minus)?, "unit icosphere".to_string())
        }
    };
    let m0 = a.m0.unwrap_or_else(|| mesh.mass());
    let params = HelfrichParams::new(a.params.beta, a.params.gamma, a.params.h0, m0)?;
    let field = CurvatureField::compute(&mesh)?;
    let e = helfrich_energy(&mesh, &field, &params)?;
    let (bound, note) = match multiplicity_bound(e.total, &params, Some(mesh.genus())) {
        Ok(k) => (Some(k), None),
        Err(err) => (None, Some(err.to_string())),
    };
    let report = EnergyReport {
        mesh: name,
        vertices: mesh.n_vertices(),
        faces: mesh.n_faces(),
        genus: mesh.genus(),
        theta_plus: mesh.theta_plus(),
        theta_minus: mesh.theta_minus(),
        mass: mesh.mass(),
        enclosed_volume: mesh.enclosed_volume(),
        params,
        energy: e,
        willmore: willmore_energy(&mesh, &field)?,
        lower_bound_certificate: lower_bound_certificate(&mesh, &field, &params)?,
        multiplicity_bound: bound,
        multiplicity_bound_note: note,
        diameter: flow::diameter(&mesh),
        diameter_bounds: flow::diameter_bounds(&mesh, &field)?,
    };
    emit(&serde_json::to_string_pretty(&report).expect("report serializes"))
}

pub fn spheres(a: &SphereArgs) -> Result<(), CliError> {
    let params = HelfrichParams::new(a.params.beta, a.params.gamma, a.params.h0, a.m0)?;
    let s = optimal_sphere_upto(&params, a.k_max)?;
    let rule = match s.rule {
        SelectionRule::Integer => "exact interior minimizer (k* is an integer)",
        SelectionRule::AtMostOne => "k* <= 1: single cover",
        SelectionRule::Neighbour => "decided between the neighbours of k*",
        SelectionRule::Tie => "tie between the neighbours of k*",
        SelectionRule::BruteForce => "outside the closed-form hypotheses: direct search",
    };
    emit(&format!("k* = {:.6}  ({rule})", s.k_star))?;
    if let Some(y) = s.y_star {
        emit(&format!("Y* = {y:.6e}"))?;
    }
    for warning in &s.warnings {
        emit(&format!("warning: {warning}"))?;
    }
    emit(&format!("{:>6}  {:>14}  {:>18}", "k", "R_k", "F(S_k)"))?;
    for (k, f) in &s.energies {
        let mark = match s.argmin {
            SphereArgmin::Unique(m) if m == *k => "  <- argmin",
            SphereArgmin::Tie(a, b) if a == *k || b == *k => "  <- argmin (tie)",
            _ => "",
        };
        emit(&format!("{k:>6}  {:>14.8}  {f:>18.10}{mark}", s.radii[k]))?;
    }
    Ok(())
}

fn read_particles(path: &Path) -> Result<ParticleVarifold, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    ParticleVarifold::read_csv(f).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn transport(a: &TransportArgs) -> Result<(), CliError> {
    let cfg = match a.solver {
        SolverArg::Exact => TransportConfig::exact(a.p),
        SolverArg::Entropic => TransportConfig::entropic(a.p, a.epsilon),
    };
    cfg.validate()?;
    let v = read_particles(&a.source)?;
    let w = read_particles(&a.target)?;
    let (dist, plan) = wasserstein(&v, &w, &cfg)?;
    emit(&format!("distance {dist:.15e}"))?;
    if a.spatial {
        emit(&format!("spatial {:.15e}", wasserstein_spatial(&v, &w, &cfg)?))?;
    }
    if let Some(path) = &a.plan {
        let f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        plan.write_csv(f)?;
    }
    Ok(())
}

pub fn validate(a: &ValidateArgs) -> Result<(), CliError> {
    if a.corrupt_curvature_sign {
        set_sign_mutation(true);
    }
    let ids: Vec<u8> = if !a.only.is_empty() {
        for id in &a.only {
            if !validation::ALL.contains(id) {
                return Err(CliError::usage(format!("--only: no criterion {id}")));
            }
        }
        a.only.clone()
    } else if a.quick {
        validation::QUICK.to_vec()
    } else {
        validation::ALL.to_vec()
    };
    let mut suite = Suite::new();
    let mut failed = Vec::new();
    for id in ids {
        let outcome = suite.run(id);
        emit(&outcome.line())?;
        if !outcome.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::numerical(format!("criteria {failed:?} failed")))
    }
}
