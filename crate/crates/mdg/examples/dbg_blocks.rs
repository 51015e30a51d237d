use mdg::assembly::{BoundaryCondition, BoundaryData, BoundaryFunction, Discretization};
use mdg::basis::l2_error;
use mdg::mesh::{build_line_mesh, BoundaryTag, Side};
use mdg::oracles::exact_advection_diffusion;
use mdg::physics::FluxModel;
use mdg::solver::{initialize_state, MdgSolver, SolverConfig};

fn block_norms(r: &nalgebra::DVector<f64>, l: &mdg::assembly::Layout) -> (f64, f64, f64, f64) {
    let c0 = r.rows(0, l.constit_offset).norm();
    let c1 = r.rows(l.constit_offset, l.flux_jump_offset - l.constit_offset).norm();
    let c2 = r
        .rows(l.flux_jump_offset, l.state_jump_offset - l.flux_jump_offset)
        .norm();
    let c3 = r.rows(l.state_jump_offset, l.n_rows - l.state_jump_offset).norm();
    (c0, c1, c2, c3)
}

fn main() {
    let pe = 100.0;
    let p = 1;
    let exact = move |x: &[f64]| vec![exact_advection_diffusion(x[0], pe)];
    let run = |knots: &[f64], frozen: bool, label: &str| {
        let (mut mesh, mut geometry) = build_line_mesh(8, 0.0, 1.0, 1).unwrap();
        mesh.tag_boundary(|_| vec![BoundaryTag::Inflow, BoundaryTag::Fixed]);
        for node in 0..geometry.n_nodes() {
            let xr = geometry.node_ref[node][0];
            let k = (xr * 8.0).round() as usize;
            geometry.node_pos[node][0] = knots[k];
        }
        let model = FluxModel::advection_diffusion(vec![1.0], 1.0 / pe, false);
        let disc = Discretization::new(&mesh, &geometry, model, p, p);
        let state = initialize_state(&disc, &mesh, geometry, exact, true);
        let bdata = BoundaryData::new()
            .set(Side::XMin, BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![0.0])))
            .set(Side::XMax, BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![1.0])));
        let config = SolverConfig {
            stationarity_tol: 1e-13,
            max_iterations: 1500,
            frozen_geometry: frozen,
            ..SolverConfig::default()
        };
        let mut solver = MdgSolver::new(mesh, disc, state, bdata, config);
        let _ = solver.solve();
        let sys = solver.current_system().unwrap();
        let (a, b, c, d) = block_norms(&sys.residual, &sys.layout);
        let err = l2_error(exact, &solver.state.y, &solver.mesh, &solver.state.geometry, &solver.disc.y_space);
        println!("{label}: |r| {:.4e} err {:.4e}", sys.residual.norm(), err);
        println!("   cons {a:.3e} constit {b:.3e} fluxjump {c:.3e} statejump {d:.3e}");
    };
    let optimal = [0.0, 0.6297, 0.9458, 0.9664, 0.9776, 0.9853, 0.9912, 0.996, 1.0];
    run(&optimal, true, "optimal-knots frozen");
    let clustered = [0.0, 0.974, 0.981, 0.986, 0.99, 0.993, 0.996, 0.998, 1.0];
    run(&clustered, true, "clustered frozen   ");
    run(&optimal, false, "optimal-knots free ");
}
