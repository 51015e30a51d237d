use mdg::assembly::{BoundaryCondition, BoundaryData, BoundaryFunction, Discretization};
use mdg::basis::l2_error;
use mdg::mesh::{build_line_mesh, BoundaryTag, Side};
use mdg::oracles::exact_advection_diffusion;
use mdg::physics::FluxModel;
use mdg::solver::{initialize_state, MdgSolver, SolverConfig};

fn frozen_residual(knots: &[f64; 9], p: usize, pe: f64) -> (f64, f64) {
    let exact = move |x: &[f64]| vec![exact_advection_diffusion(x[0], pe)];
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
        max_iterations: 10,
        frozen_geometry: true,
        ..SolverConfig::default()
    };
    let mut solver = MdgSolver::new(mesh, disc, state, bdata, config);
    let _ = solver.solve();
    let last = solver.report.records.last().unwrap();
    let err = l2_error(exact, &solver.state.y, &solver.mesh, &solver.state.geometry, &solver.disc.y_space);
    (last.residual_norm, err)
}

fn knots_from(params: &[f64]) -> [f64; 9] {
    // increasing map: softmax-style cumulative widths
    let mut w: Vec<f64> = params.iter().map(|t| t.clamp(-25.0, 25.0).exp()).collect();
    let total: f64 = w.iter().sum::<f64>();
    for v in &mut w { *v = *v / total * 0.9992 + 1e-4; }
    let mut k = [0.0; 9];
    for i in 0..8 { k[i + 1] = k[i] + w[i]; }
    k[8] = 1.0;
    k
}

fn main() {
    let pe = 100.0;
    let p = 1;
    let obj = |params: &[f64]| frozen_residual(&knots_from(params), p, pe).0;
    // Nelder-Mead over 8 width params
    let n = 8;
    let mut simplex: Vec<Vec<f64>> = Vec::new();
    // seeds: uniform, clustered, optimal-L2
    let seed0 = vec![0.0; n];
    simplex.push(seed0.clone());
    for i in 0..n {
        let mut s = seed0.clone();
        s[i] += 1.5;
        simplex.push(s);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|s| obj(s)).collect();
    for it in 0..3000 {
        // order
        let mut idx: Vec<usize> = (0..simplex.len()).collect();
        idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        let best = idx[0]; let worst = idx[n]; let second_worst = idx[n - 1];
        if it % 500 == 0 {
            let (r, e) = frozen_residual(&knots_from(&simplex[best]), p, pe);
            println!("it {it}: best |r| {r:.5e} err {e:.4e}");
        }
        // centroid excluding worst
        let mut cen = vec![0.0; n];
        for (i, s) in simplex.iter().enumerate() {
            if i != worst { for k in 0..n { cen[k] += s[k] / n as f64; } }
        }
        let refl: Vec<f64> = (0..n).map(|k| cen[k] + (cen[k] - simplex[worst][k])).collect();
        let fr = obj(&refl);
        if fr < vals[best] {
            let exp: Vec<f64> = (0..n).map(|k| cen[k] + 2.0 * (cen[k] - simplex[worst][k])).collect();
            let fe = obj(&exp);
            if fe < fr { simplex[worst] = exp; vals[worst] = fe; } else { simplex[worst] = refl; vals[worst] = fr; }
        } else if fr < vals[second_worst] {
            simplex[worst] = refl; vals[worst] = fr;
        } else {
            let con: Vec<f64> = (0..n).map(|k| cen[k] + 0.5 * (simplex[worst][k] - cen[k])).collect();
            let fc = obj(&con);
            if fc < vals[worst] { simplex[worst] = con; vals[worst] = fc; }
            else {
                let bestpt = simplex[best].clone();
                for i in 0..simplex.len() {
                    if i != best {
                        for k in 0..n { simplex[i][k] = bestpt[k] + 0.5 * (simplex[i][k] - bestpt[k]); }
                        vals[i] = obj(&simplex[i]);
                    }
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..simplex.len()).collect();
    idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
    let kbest = knots_from(&simplex[idx[0]]);
    let (r, e) = frozen_residual(&kbest, p, pe);
    println!("GLOBAL: |r| {r:.5e} err {e:.4e}");
    println!("knots {:?}", kbest.iter().map(|x| (x*10000.0).round()/10000.0).collect::<Vec<_>>());
}
