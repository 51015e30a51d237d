use mdg::assembly::{BoundaryCondition, BoundaryData, BoundaryFunction, Discretization};
use mdg::basis::l2_error;
use mdg::mesh::{build_line_mesh, BoundaryTag, Side};
use mdg::oracles::exact_advection_diffusion;
use mdg::physics::FluxModel;
use mdg::solver::{initialize_state, MdgSolver, SolverConfig};

fn main() {
    let pe = 100.0;
    let p: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let exact = move |x: &[f64]| vec![exact_advection_diffusion(x[0], pe)];
    for beta in [1.5f64, 2.0, 3.0, 4.0, 5.0, 6.0] {
        let (mut mesh, mut geometry) = build_line_mesh(8, 0.0, 1.0, 1).unwrap();
        mesh.tag_boundary(|_| vec![BoundaryTag::Inflow, BoundaryTag::Fixed]);
        for node in 0..geometry.n_nodes() {
            let xr = geometry.node_ref[node][0];
            geometry.node_pos[node][0] = 1.0 - (1.0 - xr).powf(beta);
        }
        let model = FluxModel::advection_diffusion(vec![1.0], 1.0 / pe, false);
        let disc = Discretization::new(&mesh, &geometry, model, p, p);
        let state = initialize_state(&disc, &mesh, geometry, exact, true);
        let bdata = BoundaryData::new()
            .set(Side::XMin, BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![0.0])))
            .set(Side::XMax, BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![1.0])));
        let config = SolverConfig {
            stationarity_tol: 1e-13,
            max_iterations: 500,
            frozen_geometry: true,
            ..SolverConfig::default()
        };
        let mut solver = MdgSolver::new(mesh, disc, state, bdata, config);
        let _ = solver.solve();
        let last = solver.report.records.last().unwrap();
        let err = l2_error(exact, &solver.state.y, &solver.mesh, &solver.state.geometry, &solver.disc.y_space);
        println!("beta {beta}: frozen |r| {:.4e} err {:.4e}", last.residual_norm, err);
    }
}
