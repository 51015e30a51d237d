use mdg::assembly::{BoundaryCondition, BoundaryData, BoundaryFunction, Discretization};
use mdg::basis::{l2_project, l2_error, PolynomialSpace};
use mdg::mesh::{build_line_mesh, BoundaryTag, Side};
use mdg::oracles::exact_advection_diffusion;
use mdg::physics::FluxModel;
use mdg::solver::{initialize_state, MdgSolver, SolverConfig};

fn main() {
    let pe: f64 = std::env::var("PE").map(|v| v.parse().unwrap()).unwrap_or(100.0);
    let args: Vec<String> = std::env::args().collect();
    let p: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(4);
    let n_cells = 8;

    let exact = move |x: &[f64]| vec![exact_advection_diffusion(x[0], pe)];

    // Static projection baseline.
    let (mesh0, geom0) = build_line_mesh(n_cells, 0.0, 1.0, p).unwrap();
    let space = PolynomialSpace::new(mesh0.cell_kind, p);
    let proj = l2_project(exact, &mesh0, &geom0, &space, 1).unwrap();
    let proj_err = l2_error(exact, &proj, &mesh0, &geom0, &space);
    println!("p={p} projection error {proj_err:.3e}");

    // Moving-grid solve with viscosity continuation.
    let (mut mesh, geometry) = build_line_mesh(n_cells, 0.0, 1.0, 1).unwrap();
    mesh.tag_boundary(|_| vec![BoundaryTag::Inflow, BoundaryTag::Fixed]);
    let mut model = FluxModel::advection_diffusion(vec![1.0], 1.0 / pe, false);
    match std::env::args().nth(4).as_deref() {
        Some("gradient") => model.constitutive = mdg::physics::Constitutive::Gradient,
        Some("flux") => model.constitutive = mdg::physics::Constitutive::Flux,
        _ => {}
    }
    let p_sigma: usize = std::env::var("PSIGMA").map(|v| v.parse().unwrap()).unwrap_or(p);
    let mut disc = Discretization::new(&mesh, &geometry, model, p, p_sigma);
    if std::env::var("PHYSROWS").is_ok() {
        disc = disc.with_row_weighting(mdg::assembly::RowWeighting::Physical);
    }
    let init_mode: usize = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(0);
    let state = match init_mode {
        1 => initialize_state(&disc, &mesh, geometry, exact, true),
        _ => initialize_state(&disc, &mesh, geometry, |x| vec![x[0]], true),
    };
    let bdata = BoundaryData::new()
        .set(Side::XMin, BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![0.0])))
        .set(Side::XMax, BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![1.0])));
    let config = SolverConfig {
        stationarity_tol: std::env::var("TOL").map(|v| v.parse().unwrap()).unwrap_or(1e-14),
        max_iterations: std::env::var("ITERS").map(|v| v.parse().unwrap()).unwrap_or(3000),
        continuation: if std::env::args().nth(3).as_deref() == Some("nocont") {
            vec![]
        } else {
            let rate: f64 = std::env::var("RATE").map(|v| v.parse().unwrap()).unwrap_or(1.5);
            let mut s: Vec<f64> = Vec::new();
            let mut pe_k: f64 = 5.0;
            while pe_k < pe {
                s.push(1.0 / pe_k);
                pe_k *= rate;
            }
            s.push(1.0 / pe);
            s
        },
        lambda_u: std::env::var("LAMU").map(|v| v.parse().unwrap()).unwrap_or(1e-8),
        elastic_weight: std::env::var("ELW").map(|v| v.parse().unwrap()).unwrap_or(1e-4),
        ..SolverConfig::default()
    };
    let mut solver = MdgSolver::new(mesh, disc, state, bdata, config);
    let t0 = std::time::Instant::now();
    match solver.solve() {
        Ok(()) => println!("solved converged={} in {:?}, {} records", solver.report.converged, t0.elapsed(), solver.report.records.len()),
        Err(e) => println!("solve error: {e}"),
    }
    let mut laststage = usize::MAX;
    for (i, r) in solver.report.records.iter().enumerate() {
        if r.stage != laststage {
            if i > 0 {
                let pr = &solver.report.records[i-1];
                println!("  stage {} ended: it {} |r| {:.3e} |Jtr| {:.3e}", pr.stage, pr.iteration, pr.residual_norm, pr.stationarity_norm);
            }
            laststage = r.stage;
        }
    }
    if let Some(r) = solver.report.records.last() {
        println!("last: stage {} it {} |r| {:.3e} |Jtr| {:.3e}", r.stage, r.iteration, r.residual_norm, r.stationarity_norm);
    }
    let err = l2_error(exact, &solver.state.y, &solver.mesh, &solver.state.geometry, &solver.disc.y_space);
    println!("moving-grid L2 error {err:.3e} (ratio vs projection: {:.3e})", err / proj_err);
    // interior vertex positions
    let mut xs: Vec<f64> = (0..solver.state.geometry.n_nodes()).map(|n| solver.state.geometry.node_pos[n][0]).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("node positions: {:?}", xs.iter().map(|x| (x * 1000.0).round() / 1000.0).collect::<Vec<_>>());
}
