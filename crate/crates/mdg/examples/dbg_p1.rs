use mdg::assembly::{BoundaryCondition, BoundaryData, BoundaryFunction, Discretization};
use mdg::basis::{l2_error, l2_project, PolynomialSpace};
use mdg::mesh::{build_line_mesh, BoundaryTag, Side};
use mdg::oracles::exact_advection_diffusion;
use mdg::physics::FluxModel;
use mdg::solver::{initialize_state, MdgSolver, SolverConfig};

fn main() {
    let pe = 100.0;
    let p = 1;
    let exact = move |x: &[f64]| vec![exact_advection_diffusion(x[0], pe)];
    let (mesh0, geom0) = build_line_mesh(8, 0.0, 1.0, 1).unwrap();
    let space = PolynomialSpace::new(mesh0.cell_kind, p);
    let proj = l2_project(exact, &mesh0, &geom0, &space, 1).unwrap();
    let proj_err = l2_error(exact, &proj, &mesh0, &geom0, &space);
    println!("projection error {proj_err:.4e}");

    // Hand-graded grid: geometric refinement toward x = 1.
    let (mut mesh, mut geometry) = build_line_mesh(8, 0.0, 1.0, 1).unwrap();
    mesh.tag_boundary(|_| vec![BoundaryTag::Inflow, BoundaryTag::Fixed]);
    let graded = [0.0, 0.82, 0.905, 0.943, 0.965, 0.979, 0.989, 0.9955, 1.0];
    for node in 0..geometry.n_nodes() {
        let xr = geometry.node_ref[node][0];
        let k = (xr * 8.0).round() as usize;
        geometry.node_pos[node][0] = graded[k];
    }
    let model = FluxModel::advection_diffusion(vec![1.0], 1.0 / pe, false);
    let disc = Discretization::new(&mesh, &geometry, model, p, p);
    let state = initialize_state(&disc, &mesh, geometry, exact, true);
    let bdata = BoundaryData::new()
        .set(Side::XMin, BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![0.0])))
        .set(Side::XMax, BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![1.0])));
    let err0 = l2_error(exact, &state.y, &mesh, &state.geometry, &disc.y_space);
    let r0 = disc.assemble_residual(&mesh, &state, &bdata).unwrap();
    println!("graded init: |r| {:.4e} err {:.4e}", r0.norm(), err0);

    let frozen = std::env::args().nth(1).is_some();
    let config = SolverConfig {
        stationarity_tol: 1e-13,
        max_iterations: 2000,
        lambda_u: 1e-8,
        elastic_weight: 1e-4,
        frozen_geometry: frozen,
        ..SolverConfig::default()
    };
    let mut solver = MdgSolver::new(mesh, disc, state, bdata, config);
    match solver.solve() {
        Ok(()) => {}
        Err(e) => println!("solve error: {e}"),
    }
    let last = solver.report.records.last().unwrap();
    println!("end: |r| {:.4e} |Jtr| {:.3e} iters {}", last.residual_norm, last.stationarity_norm, solver.report.records.len());
    let err = l2_error(exact, &solver.state.y, &solver.mesh, &solver.state.geometry, &solver.disc.y_space);
    println!("solved err {:.4e} ratio {:.3e}", err, err / proj_err);
    let xs: Vec<f64> = (0..solver.state.geometry.n_nodes()).map(|n| (solver.state.geometry.node_pos[n][0]*10000.0).round()/10000.0).collect();
    println!("nodes {:?}", xs);
}
