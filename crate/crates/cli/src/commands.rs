use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use atroreg::attachment::current_norm;
use atroreg::constraints::violation_norm;
use atroreg::dynamics::total_normal_displacement;
use atroreg::mesh::{ellipsoid, icosphere, load_mesh, save_mesh};
use atroreg::optim::{al_solve, OuterRecord, RunStatus};
use atroreg::{ALState, ConstraintMode, ControlPath, Problem, TriMesh, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

const CHECK_TOLERANCE: f64 = 1e-4;
const CHECK_STEPS: usize = 4;

fn load_input(path: &Path, role: &str) -> Result<TriMesh> {
    let mesh = load_mesh(path).with_context(|| format!("{role} mesh {}", path.display()))?;
    mesh.check_registration_input()
        .with_context(|| format!("{role} mesh {} is not a valid registration input", path.display()))?;
    Ok(mesh)
}

fn build_problem(config: &RunConfig, timesteps: usize) -> Result<Problem> {
    let template = load_input(&config.template_path, "template")?;
    let target = load_input(&config.target_path, "target")?;
    Ok(Problem::new(
        template,
        target,
        config.kernel_spec()?,
        config.attachment_spec()?,
        config.constraint_spec()?,
        atroreg::TimeGrid::new(timesteps)?,
        config.rigid_costs()?,
    )?)
}

#[derive(Debug, Serialize)]
struct FieldSummary {
    min: f64,
    max: f64,
    mean: f64,
}

impl FieldSummary {
    fn of(values: &[f64]) -> Self {
        Self {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: values.iter().sum::<f64>() / values.len().max(1) as f64,
        }
    }
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    status: RunStatus,
    constraint_mode: ConstraintMode,
    energy: f64,
    kinetic: f64,
    attachment: f64,
    rigid_cost: f64,
    violation_norm: f64,
    violation_tolerance: f64,
    mu: f64,
    template_volume: f64,
    final_volume: f64,
    normal_displacement: FieldSummary,
    outer: &'a [OuterRecord],
}

pub fn register(config: &RunConfig) -> Result<i32> {
    let problem = build_problem(config, config.timesteps)?;
    let params = config.al_params()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    fs::write(out.join("config.resolved.json"), serde_json::to_string_pretty(config)? + "\n")?;

    log::info!(
        "registering {} vertices over {} steps, mode {:?}",
        problem.template().n_vertices(),
        config.timesteps,
        config.constraint.mode
    );
    let solution = al_solve(&problem, &params, None)?;
    let template = problem.template();
    let displacement = total_normal_displacement(&solution.path, template);
    let final_mesh = template.with_vertices(solution.path.final_state().to_vec())?;
    let eval = &solution.evaluation;
    let report = Report {
        status: solution.report.status,
        constraint_mode: config.constraint.mode,
        energy: eval.energy(),
        kinetic: eval.kinetic,
        attachment: eval.attachment,
        rigid_cost: eval.rigid_cost,
        violation_norm: violation_norm(&eval.residuals, problem.grid().dt()),
        violation_tolerance: solution.report.violation_tolerance,
        mu: solution.al_state.mu,
        template_volume: template.volume().value,
        final_volume: final_mesh.volume().value,
        normal_displacement: FieldSummary::of(&displacement),
        outer: &solution.report.records,
    };
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    save_mesh(&final_mesh, Some(&displacement), out.join("final.vtk"))?;
    solution.path.save_sequence(template, out)?;

    println!(
        "{:?}: energy {:.6e}, attachment {:.6e}, violation {:.3e} (tolerance {:.3e})",
        report.status, report.energy, report.attachment, report.violation_norm, report.violation_tolerance
    );
    println!("results written to {}", out.display());
    Ok(match report.status {
        RunStatus::Converged => EXIT_OK,
        RunStatus::MaxIterations => EXIT_NOT_CONVERGED,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, clap::ValueEnum)]
pub enum ShapeKind {
    Icosphere,
    Ellipsoid,
}

pub fn make_shape(kind: ShapeKind, level: u32, axes: [f64; 3], center: [f64; 3], out: &Path) -> Result<i32> {
    if axes.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        bail!("axes must be positive, got {axes:?}");
    }
    let shape = match kind {
        ShapeKind::Icosphere if axes[0] == axes[1] && axes[1] == axes[2] => icosphere(level).map_vertices(|x| x * axes[0]),
        ShapeKind::Icosphere => bail!("an icosphere takes a single radius"),
        ShapeKind::Ellipsoid => ellipsoid(axes, level),
    };
    let c = Vec3::from(center);
    let shape = shape.map_vertices(|x| x + c);
    save_mesh(&shape, None, out).with_context(|| format!("cannot write {}", out.display()))?;
    println!(
        "{}: {} vertices, {} faces, volume {:.6}",
        out.display(),
        shape.n_vertices(),
        shape.n_faces(),
        shape.volume().value
    );
    Ok(EXIT_OK)
}

fn radius(mesh: &TriMesh) -> f64 {
    let c = mesh.centroid();
    mesh.vertices().iter().map(|x| (x - c).norm()).fold(0.0, f64::max)
}

/// Random controls whose kernel velocities move vertices by about 5% of the shape radius.
fn random_controls(problem: &Problem, rng: &mut ChaCha8Rng) -> Result<ControlPath> {
    let template = problem.template();
    let mut controls = problem.zero_controls();
    for a in controls.alphas.iter_mut().flatten() {
        *a = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    let speed = problem
        .kernel()
        .apply(template.vertices(), &controls.alphas[0])?
        .iter()
        .map(|v| v.norm())
        .fold(0.0, f64::max);
    let scale = 0.05 * radius(template) / speed.max(f64::MIN_POSITIVE);
    for a in controls.alphas.iter_mut().flatten() {
        *a *= scale;
    }
    if let Some(rigid) = controls.rigid.as_mut() {
        for r in rigid {
            r.beta = Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
            r.tau = 0.05 * radius(template) * Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0);
        }
    }
    Ok(controls)
}

fn geometry_checks(template: &TriMesh, target: &TriMesh, problem: &Problem) -> Result<()> {
    for (name, mesh) in [("template", template), ("target", target)] {
        let total: Vec3 = mesh.face_normals().iter().sum();
        let area = mesh.total_area();
        if total.norm() > 1e-10 * area {
            bail!("{name}: face normals sum to {:.3e}, surface is not closed", total.norm());
        }
        if mesh.volume().value <= 0.0 {
            bail!("{name}: non-positive volume, faces are not oriented outward");
        }
        println!("{name}: closed, volume {:.6}, area {:.6}", mesh.volume().value, area);
    }
    let k = match problem.attachment().kind {
        atroreg::AttachmentKind::Current(k) => k,
        atroreg::AttachmentKind::Landmark => return Ok(()),
    };
    let self_norm = current_norm(&k, template, template)?;
    let forward = current_norm(&k, template, target)?;
    let backward = current_norm(&k, target, template)?;
    if self_norm.abs() > 1e-12 * (1.0 + forward.abs()) || (forward - backward).abs() > 1e-12 * forward.abs().max(1.0) {
        bail!("current norm identities failed: D(S,S) = {self_norm:.3e}, D(S,T) = {forward:.6e}, D(T,S) = {backward:.6e}");
    }
    println!("current norm: D(S,S) = {self_norm:.1e}, D(S,T) = D(T,S) = {forward:.6e}");
    Ok(())
}

/// Adjoint gradient against central differences on a random instance with at
/// most [`CHECK_STEPS`] steps and `samples` sampled coordinates.
pub fn check(config: &RunConfig, samples: usize, corrupt_gradient: bool) -> Result<i32> {
    let problem = build_problem(config, config.timesteps.min(CHECK_STEPS))?;
    geometry_checks(problem.template(), problem.target(), &problem)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let controls = random_controls(&problem, &mut rng)?;
    let mut al = ALState::new(&problem, config.al.mu0);
    for l in al.lambdas.iter_mut().flatten() {
        if rng.gen_bool(0.5) {
            *l = -rng.gen_range(0.0..1.0);
        }
    }
    let (_, grad) = problem.adjoint_gradient(&controls, Some(&al))?;
    let mut grad = grad.to_flat();
    let x = controls.to_flat();
    let mut coords: Vec<usize> = (0..x.len()).collect();
    if coords.len() > samples {
        for i in 0..samples {
            let j = rng.gen_range(i..coords.len());
            coords.swap(i, j);
        }
        coords.truncate(samples);
    }
    if corrupt_gradient {
        let i = coords[0];
        grad[i] = grad[i] * 1.01 + 1e-3;
    }

    let h = 1e-5;
    let value = |x: &[f64]| problem.augmented_energy(&controls.from_flat(x), &al);
    let mut probe = x.clone();
    let mut pairs = Vec::with_capacity(coords.len());
    for &i in &coords {
        probe[i] = x[i] + h;
        let up = value(&probe)?;
        probe[i] = x[i] - h;
        let down = value(&probe)?;
        probe[i] = x[i];
        pairs.push((grad[i], (up - down) / (2.0 * h)));
    }
    let scale = pairs.iter().fold(0.0f64, |m, (_, fd)| m.max(fd.abs()));
    let diff = pairs.iter().fold(0.0f64, |m, (g, fd)| m.max((g - fd).abs()));
    let error = if scale > 0.0 { diff / scale } else { diff };
    println!(
        "gradient check: {} of {} coordinates, {} steps, mode {:?}, rigid {}",
        coords.len(),
        x.len(),
        problem.grid().steps(),
        config.constraint.mode,
        config.rigid.enabled
    );
    println!("max relative error {error:.3e}");
    if error < CHECK_TOLERANCE {
        println!("check passed");
        Ok(EXIT_OK)
    } else {
        println!("check FAILED (tolerance {CHECK_TOLERANCE:.0e})");
        Ok(EXIT_NOT_CONVERGED)
    }
}
