//! Acceptance suite. Runs every criterion, prints one line each, and exits
//! nonzero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use atroreg::attachment::{current_norm, current_norm_gradient, AttachmentSpec};
use atroreg::dynamics::{exp_so3, rotation_exp, shoot, skew, total_normal_displacement, RigidCosts};
use atroreg::mesh::{ellipsoid, icosphere, vertex_normals_at, volume_at};
use atroreg::optim::{al_solve, RunReport, Solution};
use atroreg::{
    ALParams, ALState, ConstraintMode, ConstraintSpec, ControlPath, KernelSpec, Mat3, Problem, TimeGrid, TriMesh, Vec3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::new(
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
    )
}

fn gaussian(sigma: f64) -> KernelSpec {
    KernelSpec::gaussian(sigma).unwrap()
}

fn sphere_problem(template: &TriMesh, target: TriMesh, mode: ConstraintMode, rigid: Option<RigidCosts>) -> Problem {
    Problem::new(
        template.clone(),
        target,
        gaussian(0.5),
        AttachmentSpec::current(gaussian(0.5), 1.0).unwrap(),
        ConstraintSpec::new(mode, 0.0).unwrap(),
        TimeGrid::new(10).unwrap(),
        rigid,
    )
    .unwrap()
}

fn mean_normal_length(mesh: &TriMesh) -> f64 {
    let n = mesh.vertex_normals();
    n.iter().map(|v| v.norm()).sum::<f64>() / n.len() as f64
}

fn final_mesh(template: &TriMesh, sol: &Solution) -> TriMesh {
    template.with_vertices(sol.path.final_state().to_vec()).unwrap()
}

/// Reports produced by the registration criteria, checked by the bookkeeping criterion.
#[derive(Default)]
struct Reports(Vec<(String, RunReport)>);

impl Reports {
    fn push(&mut self, name: &str, report: &RunReport) {
        self.0.push((name.to_string(), report.clone()));
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:.1?}, limit {limit:?}"))
}

fn fd_relative_error(p: &Problem, c: &ControlPath, al: &ALState) -> f64 {
    let (_, grad) = p.adjoint_gradient(c, Some(al)).unwrap();
    let g = grad.to_flat();
    let x = c.to_flat();
    let h = 1e-5;
    let f = |x: &[f64]| p.augmented_energy(&c.from_flat(x), al).unwrap();
    let mut fd = vec![0.0; x.len()];
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        fd[i] = (up - down) / (2.0 * h);
    }
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = g.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    diff / scale
}

fn adjoint_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let modes = [ConstraintMode::None, ConstraintMode::PointwiseAtrophy, ConstraintMode::GlobalVolume];
    let mut worst = 0.0f64;
    let mut count = 0;
    for seed in 0..2 {
        for mode in modes {
            for rigid in [false, true] {
                for cauchy in [false, true] {
                    let level = if seed == 0 { 0 } else { 1 };
                    let steps = rng.gen_range(2..=6);
                    let template = icosphere(level).map_vertices(|x| x * rng.gen_range(0.9..1.1));
                    let template = template.map_vertices(|x| x + rand_vec(&mut rng, 0.03));
                    let axes = [rng.gen_range(0.7..1.3), rng.gen_range(0.7..1.3), rng.gen_range(0.7..1.3)];
                    let target = ellipsoid(axes, level).map_vertices(|x| x + Vec3::new(0.05, -0.02, 0.03));
                    let sigma = rng.gen_range(0.4..0.8);
                    let kernel = if cauchy { KernelSpec::cauchy(sigma) } else { KernelSpec::gaussian(sigma) }.unwrap();
                    let eps = rng.gen_range(0.0..0.05);
                    let p = Problem::new(
                        template,
                        target,
                        kernel,
                        AttachmentSpec::current(gaussian(rng.gen_range(0.3..0.7)), rng.gen_range(0.5..3.0)).unwrap(),
                        ConstraintSpec::new(mode, eps).unwrap(),
                        TimeGrid::new(steps).unwrap(),
                        rigid.then(|| RigidCosts::new(0.4, [0.1, 0.3, 0.2]).unwrap()),
                    )
                    .unwrap();
                    let mut c = p.zero_controls();
                    for a in c.alphas.iter_mut().flatten() {
                        *a = rand_vec(&mut rng, 0.1);
                    }
                    if let Some(r) = c.rigid.as_mut() {
                        for r in r {
                            r.beta = rand_vec(&mut rng, 0.6);
                            r.tau = rand_vec(&mut rng, 0.2);
                        }
                    }
                    let mut al = ALState::new(&p, rng.gen_range(0.05..2.0));
                    for l in al.lambdas.iter_mut().flatten() {
                        if rng.gen_bool(0.5) {
                            *l = -rng.gen_range(0.0..0.5);
                        }
                    }
                    let err = fd_relative_error(&p, &c, &al);
                    ensure(err < 1e-4, || {
                        format!("mode {mode:?} rigid {rigid} cauchy {cauchy} T={steps}: relative error {err:.2e}")
                    })?;
                    worst = worst.max(err);
                    count += 1;
                }
            }
        }
    }
    within(Duration::from_secs(120), start)?;
    Ok(format!("{count} configurations, max relative error {worst:.2e}"))
}

fn shrink_neutrality(reports: &mut Reports) -> Outcome {
    let start = Instant::now();
    let template = icosphere(2);
    let target = template.map_vertices(|x| x * 0.7);
    let params = ALParams::default();
    let free = al_solve(&sphere_problem(&template, target.clone(), ConstraintMode::None, None), &params, None).unwrap();
    let constrained = al_solve(
        &sphere_problem(&template, target, ConstraintMode::PointwiseAtrophy, None),
        &params,
        None,
    )
    .unwrap();
    reports.push("shrink/none", &free.report);
    reports.push("shrink/pointwise", &constrained.report);
    let a0 = free.evaluation.attachment;
    let a1 = constrained.evaluation.attachment;
    let rel = (a1 - a0).abs() / a0;
    ensure(rel < 0.01, || format!("attachment {a1:.6e} vs unconstrained {a0:.6e}"))?;
    let violation = constrained.report.last().violation_norm;
    let bound = 1e-3 * mean_normal_length(&template);
    ensure(violation <= bound, || format!("violation {violation:.3e} above {bound:.3e}"))?;
    within(Duration::from_secs(300), start)?;
    Ok(format!("attachment difference {rel:.2e}, violation {violation:.2e} <= {bound:.2e}"))
}

fn growth_suppression(reports: &mut Reports) -> Outcome {
    let start = Instant::now();
    let template = icosphere(2);
    let target = template.map_vertices(|x| x * 1.3);
    let params = ALParams::default();
    let global = al_solve(
        &sphere_problem(&template, target.clone(), ConstraintMode::GlobalVolume, None),
        &params,
        None,
    )
    .unwrap();
    reports.push("growth/global", &global.report);
    let v0 = template.volume().value;
    let v1 = final_mesh(&template, &global).volume().value;
    ensure(v1 <= v0 * (1.0 + 1e-3), || format!("global: volume {v1:.6} from {v0:.6}"))?;

    let pointwise = al_solve(
        &sphere_problem(&template, target, ConstraintMode::PointwiseAtrophy, None),
        &params,
        None,
    )
    .unwrap();
    reports.push("growth/pointwise", &pointwise.report);
    let disp = total_normal_displacement(&pointwise.path, &template);
    let outward = disp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ensure(outward <= 1e-3, || format!("pointwise: outward displacement {outward:.3e}"))?;
    within(Duration::from_secs(600), start)?;
    Ok(format!(
        "volume ratio {:.6}, max normal displacement {outward:.2e}",
        v1 / v0
    ))
}

/// Largest gap over the path between 𝟏ᵀC(q)α/3 and the forward volume difference quotient.
fn volume_rate_gap(template: &TriMesh, kernel: &KernelSpec, alpha: &[Vec3], steps: usize) -> f64 {
    let grid = TimeGrid::new(steps).unwrap();
    let controls = ControlPath {
        alphas: vec![alpha.to_vec(); steps],
        rigid: None,
    };
    let path = shoot(template, &controls, kernel, grid).unwrap();
    let faces = template.faces();
    let mut gap = 0.0f64;
    for t in 0..steps {
        let q = &path.states[t];
        let v = kernel.apply(q, alpha).unwrap();
        let normals = vertex_normals_at(q, faces);
        let flux: f64 = v.iter().zip(&normals).map(|(v, n)| v.dot(n)).sum();
        let rate = (volume_at(&path.states[t + 1], faces) - volume_at(q, faces)) / grid.dt();
        gap = gap.max((flux / 3.0 - rate).abs());
    }
    gap
}

fn volume_derivative_consistency() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let template = icosphere(2);
    let kernel = gaussian(0.6);
    let alpha: Vec<Vec3> = template
        .vertices()
        .iter()
        .map(|x| 0.05 * Vec3::new(x.x * x.x, -x.y, 0.5 * x.z) + rand_vec(&mut rng, 0.02))
        .collect();
    let gaps: Vec<f64> = [8, 16, 32]
        .iter()
        .map(|&t| volume_rate_gap(&template, &kernel, &alpha, t))
        .collect();
    let ratios = [gaps[0] / gaps[1], gaps[1] / gaps[2]];
    for r in ratios {
        ensure((r - 2.0).abs() <= 0.3, || format!("gaps {gaps:?}, ratios {ratios:?}"))?;
    }
    within(Duration::from_secs(60), start)?;
    Ok(format!("gaps {:.3e} {:.3e} {:.3e}, ratios {:.3} {:.3}", gaps[0], gaps[1], gaps[2], ratios[0], ratios[1]))
}

fn exp_series(u: &Mat3) -> Mat3 {
    let mut sum = Mat3::identity();
    let mut term = Mat3::identity();
    for k in 1..25 {
        term = term * u / k as f64;
        sum += term;
    }
    sum
}

fn rotation_exponential() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut err = 0.0f64;
    let mut defect = 0.0f64;
    for _ in 0..100 {
        let w = rand_vec(&mut rng, 1.0);
        let u = skew(&(w * rng.gen_range(0.0..2.0) / w.norm()));
        let r = rotation_exp(&u).unwrap();
        err = err.max((r - exp_series(&u)).amax());
        defect = defect.max((r.transpose() * r - Mat3::identity()).amax());
    }
    ensure(err < 1e-13, || format!("series error {err:.2e}"))?;
    ensure(defect < 1e-12, || format!("orthogonality defect {defect:.2e}"))?;
    within(Duration::from_secs(1), start)?;
    Ok(format!("series error {err:.2e}, orthogonality defect {defect:.2e}"))
}

fn rigid_equivalence(reports: &mut Reports) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let template = icosphere(2);
    let s1 = ellipsoid([1.2, 1.0, 0.85], 2);
    let mut params = ALParams::default();
    params.inner.max_iters = 1000;
    let base = al_solve(&sphere_problem(&template, s1.clone(), ConstraintMode::None, None), &params, None).unwrap();
    reports.push("rigid/baseline", &base.report);
    let e0 = base.evaluation.kinetic + base.evaluation.attachment;
    let mut worst = 0.0f64;
    for i in 0..3 {
        let axis = rand_vec(&mut rng, 1.0).normalize();
        let r = exp_so3(&(axis * rng.gen_range(0.2..0.5)));
        let b = rand_vec(&mut rng, 0.3);
        let moved = s1.map_vertices(|x| r * x + b);
        let costs = RigidCosts::new(0.0, [0.0; 3]).unwrap();
        let sol = al_solve(
            &sphere_problem(&template, moved, ConstraintMode::None, Some(costs)),
            &params,
            None,
        )
        .unwrap();
        reports.push(&format!("rigid/{i}"), &sol.report);
        let e = sol.evaluation.kinetic + sol.evaluation.attachment;
        let rel = (e - e0).abs() / e0;
        ensure(rel <= 0.05, || format!("motion {i}: energy {e:.6e} vs {e0:.6e}"))?;
        worst = worst.max(rel);
    }
    within(Duration::from_secs(900), start)?;
    Ok(format!("baseline energy {e0:.6e}, max relative difference {worst:.2e}"))
}

fn geometry_invariants() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sphere = icosphere(2).map_vertices(|x| x + rand_vec(&mut rng, 0.05));

    for _ in 0..10 {
        let a = Mat3::from_fn(|_, _| rng.gen_range(-1.0..1.0)) + Mat3::identity();
        let inv_t = a.try_inverse().unwrap().transpose() * a.determinant();
        let moved = sphere.map_vertices(|x| a * x);
        for (n0, n1) in sphere.face_normals().iter().zip(moved.face_normals()) {
            let expect = inv_t * n0;
            ensure((n1 - expect).norm() <= 1e-12 * expect.norm().max(n1.norm()), || {
                format!("transport identity off by {:.2e}", (n1 - expect).norm())
            })?;
        }
    }

    let total: Vec3 = sphere.face_normals().iter().sum();
    ensure(total.norm() <= 1e-10 * sphere.total_area(), || format!("sum of face normals {:.2e}", total.norm()))?;

    let tet = TriMesh::new(
        vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()],
        vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
    )
    .unwrap();
    ensure((tet.volume().value - 1.0 / 6.0).abs() < 1e-12, || format!("tetrahedron volume {}", tet.volume().value))?;
    let cube_vertices: Vec<Vec3> = (0..8)
        .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
        .collect();
    let cube_faces = vec![
        [0, 2, 3], [0, 3, 1], [4, 5, 7], [4, 7, 6], [0, 1, 5], [0, 5, 4],
        [2, 6, 7], [2, 7, 3], [0, 4, 6], [0, 6, 2], [1, 3, 7], [1, 7, 5],
    ];
    let cube = TriMesh::new(cube_vertices, cube_faces).unwrap();
    ensure((cube.volume().value - 1.0).abs() < 1e-12, || format!("cube volume {}", cube.volume().value))?;

    let k = gaussian(0.5);
    let other = ellipsoid([1.1, 0.9, 1.0], 2);
    let self_norm = current_norm(&k, &sphere, &sphere).unwrap();
    ensure(self_norm.abs() < 1e-12, || format!("D(S, S) = {self_norm:.2e}"))?;
    let d01 = current_norm(&k, &sphere, &other).unwrap();
    let d10 = current_norm(&k, &other, &sphere).unwrap();
    ensure((d01 - d10).abs() <= 1e-12 * d01.abs(), || format!("asymmetric: {d01} vs {d10}"))?;
    ensure(d01 >= -1e-10, || format!("negative discrepancy {d01}"))?;

    let grad = current_norm_gradient(&k, &sphere, &other).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.amax()));
    for i in (0..sphere.n_vertices()).step_by(7) {
        for d in 0..3 {
            let shift = |s: f64| {
                let mut v = sphere.vertices().to_vec();
                v[i][d] += s;
                current_norm(&k, &sphere.with_vertices(v).unwrap(), &other).unwrap()
            };
            let fd = (shift(h) - shift(-h)) / (2.0 * h);
            worst = worst.max((fd - grad[i][d]).abs() / gmax);
        }
    }
    ensure(worst < 1e-5, || format!("current gradient relative error {worst:.2e}"))?;
    within(Duration::from_secs(30), start)?;
    Ok(format!("all identities hold, current gradient relative error {worst:.2e}"))
}

fn al_bookkeeping(reports: &Reports) -> Outcome {
    ensure(!reports.0.is_empty(), || "no reports collected".into())?;
    for (name, report) in &reports.0 {
        let mut mu = f64::INFINITY;
        for r in &report.records {
            ensure(r.max_lambda <= 0.0, || format!("{name}: positive multiplier {}", r.max_lambda))?;
            ensure(r.mu <= mu, || format!("{name}: mu grew to {} at outer {}", r.mu, r.outer))?;
            mu = r.mu;
            ensure(r.inner_trace.windows(2).all(|w| w[1] <= w[0]), || {
                format!("{name}: F increased during inner solve {}", r.outer)
            })?;
            ensure(r.inactive_nonzero == 0, || {
                format!("{name}: {} inactive multipliers left nonzero", r.inactive_nonzero)
            })?;
        }
    }
    Ok(format!("{} reports checked", reports.0.len()))
}

fn main() {
    let mut reports = Reports::default();
    let mut failed = 0;
    let mut run = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({took:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({took:.1}s): {detail}");
            }
        }
    };
    run("1 adjoint exactness", &mut adjoint_exactness);
    run("2 shrink neutrality", &mut || shrink_neutrality(&mut reports));
    run("3 growth suppression", &mut || growth_suppression(&mut reports));
    run("4 volume derivative consistency", &mut volume_derivative_consistency);
    run("5 rotation exponential", &mut rotation_exponential);
    run("6 rigid equivalence", &mut || rigid_equivalence(&mut reports));
    run("7 geometry invariants", &mut geometry_invariants);
    run("8 AL bookkeeping", &mut || al_bookkeeping(&reports));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
