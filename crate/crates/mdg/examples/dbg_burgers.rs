use mdg::assembly::{BoundaryCondition, BoundaryData, BoundaryFunction, Discretization};
use mdg::mesh::{build_triangulated_grid, BoundaryTag, Side};
use mdg::oracles::burgers_reference;
use mdg::physics::FluxModel;
use mdg::postprocess::FieldSampler;
use mdg::solver::{initialize_state, MdgSolver, SolverConfig};

fn main() {
    let eps: f64 = std::env::var("EPS").map(|v| v.parse().unwrap()).unwrap_or(1e-3);
    let p: usize = std::env::var("P").map(|v| v.parse().unwrap()).unwrap_or(3);
    let amp = std::f64::consts::FRAC_1_PI;
    let ic = BoundaryFunction::SineProfile { amplitude: amp, offset: 0.2 };

    let (mut mesh, geometry) = build_triangulated_grid(10, 10, [0.0, 0.0, 1.0, 1.0], 1, true).unwrap();
    mesh.tag_boundary(|side| match side {
        Side::YMin => vec![
            BoundaryTag::TemporalInflow,
            BoundaryTag::SlidePlane { normal: [0.0, 1.0], offset: 0.0 },
        ],
        Side::YMax => vec![
            BoundaryTag::TemporalOutflow,
            BoundaryTag::SlidePlane { normal: [0.0, 1.0], offset: 1.0 },
        ],
        Side::XMin => vec![
            BoundaryTag::Inflow,
            BoundaryTag::SlidePlane { normal: [1.0, 0.0], offset: 0.0 },
        ],
        Side::XMax => vec![
            BoundaryTag::Outflow,
            BoundaryTag::SlidePlane { normal: [1.0, 0.0], offset: 1.0 },
        ],
    });
    let model = FluxModel::burgers(eps, true);
    let disc = Discretization::new(&mesh, &geometry, model, p, p);
    let ic2 = ic.clone();
    let state = initialize_state(&disc, &mesh, geometry, move |x| ic2.eval(&[x[0], 0.0]), true);
    let bdata = BoundaryData::new()
        .set(Side::YMin, BoundaryCondition::TemporalInflow(ic.clone()))
        .set(Side::YMax, BoundaryCondition::TemporalOutflow)
        .set(Side::XMin, BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![0.2])))
        .set(Side::XMax, BoundaryCondition::Outflow);
    let schedule: Vec<f64> = {
        let mut s = vec![];
        let mut e: f64 = 0.1;
        while e > eps * 1.5 {
            s.push(e);
            e *= 0.5;
        }
        s.push(eps);
        s
    };
    println!("schedule: {:?}", schedule);
    let config = SolverConfig {
        stationarity_tol: 1e-9,
        max_iterations: std::env::var("ITERS").map(|v| v.parse().unwrap()).unwrap_or(150),
        continuation: schedule,
        lambda_u: 1e-8,
        elastic_weight: 1e-4,
        anisotropy_threshold: 1e9, // keep the 200-cell topology for now
        divergence_patience: 25,
        ..SolverConfig::default()
    };
    // Profile one assembly and one step first.
    {
        let constraints = mdg::geometry_bc::GeometryConstraints::from_mesh(&mesh, &state.geometry);
        let t = std::time::Instant::now();
        let sys = disc.assemble(&mesh, &state, &bdata, &constraints).unwrap();
        println!("assemble: {:?} rows {} cols {} nnz {}", t.elapsed(), sys.n_rows(), sys.n_cols(), sys.jacobian.nnz());
        let t = std::time::Instant::now();
        let r = disc.assemble_residual(&mesh, &state, &bdata).unwrap();
        println!("residual-only: {:?} |r| {:.3e}", t.elapsed(), r.norm());
        let t = std::time::Instant::now();
        let reg = nalgebra::DVector::from_element(sys.n_cols(), 1e-8);
        let d = mdg::solver::lm_step(&sys.jacobian, &sys.residual, &reg, None).unwrap();
        println!("lm_step: {:?} |d| {:.3e}", t.elapsed(), d.norm());
    }
    let t0 = std::time::Instant::now();
    let mut solver = MdgSolver::new(mesh, disc, state, bdata, config);
    match solver.solve() {
        Ok(()) => println!("done converged={} in {:?}", solver.report.converged, t0.elapsed()),
        Err(e) => println!("solve error: {e} after {:?}", t0.elapsed()),
    }
    let mut laststage = usize::MAX;
    for (i, r) in solver.report.records.iter().enumerate() {
        if r.stage != laststage {
            if i > 0 {
                let pr = &solver.report.records[i - 1];
                println!("  stage {} end: it {} |r| {:.3e} |Jtr| {:.3e}", pr.stage, pr.iteration, pr.residual_norm, pr.stationarity_norm);
            }
            laststage = r.stage;
        }
    }
    if let Some(r) = solver.report.records.last() {
        println!("last: stage {} it {} |r| {:.3e} |Jtr| {:.3e}", r.stage, r.iteration, r.residual_norm, r.stationarity_norm);
    }

    // Compare the t=1 profile against the finite-volume reference.
    let fv = burgers_reference(|x| 0.2 + amp * (2.0 * std::f64::consts::PI * x).sin(), eps, 1.0, 8192);
    let sampler = FieldSampler::new(&solver.disc, &solver.mesh, &solver.state);
    let n = 512;
    let mut l1 = 0.0;
    let mut misses = 0;
    for i in 0..n {
        let x = (i as f64 + 0.5) / n as f64;
        match sampler.sample_y(&[x, 1.0 - 1e-9]) {
            Some(y) => {
                let yref = {
                    let idx = ((x * 8192.0) as usize).min(8191);
                    fv.y[idx]
                };
                l1 += (y[0] - yref).abs() / n as f64;
            }
            None => misses += 1,
        }
    }
    println!("t=1 L1 error vs reference: {l1:.4e} (misses {misses})");
}
