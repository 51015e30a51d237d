//! Solution sampling and output emission.
//!
//! Sampling inverts the grid mapping cell by cell with a Newton iteration
//! seeded from the linear vertex map. Surface and centerline quantities
//! follow the usual definitions: pressure coefficient against the dynamic
//! pressure, Stanton number against the stagnation-to-wall temperature
//! difference. Field dumps use legacy ASCII VTK with curved cells
//! subdivided for display.

use crate::assembly::{DiscreteState, Discretization};
use crate::basis::{CellKind, RefPoint};
use crate::mesh::{BoundaryTag, ReferenceMesh};
use crate::physics::{Equations, FluxModel};
use nalgebra::{Matrix2, Vector2};

/// Point-location and field evaluation over the mapped grid.
pub struct FieldSampler<'a> {
    pub disc: &'a Discretization,
    pub mesh: &'a ReferenceMesh,
    pub state: &'a DiscreteState,
}

impl<'a> FieldSampler<'a> {
    pub fn new(disc: &'a Discretization, mesh: &'a ReferenceMesh, state: &'a DiscreteState) -> Self {
        FieldSampler { disc, mesh, state }
    }

    /// Find the cell whose mapped image contains `x`, returning unit-cell
    /// coordinates there.
    pub fn locate(&self, x: &[f64; 2]) -> Option<(usize, RefPoint)> {
        let dim = self.mesh.dim;
        let tol = 1e-9;
        let mut best: Option<(usize, RefPoint, f64)> = None;
        for cell in 0..self.mesh.n_cells() {
            // Newton iteration from the linear vertex seed.
            let verts: Vec<[f64; 2]> = (0..self.mesh.cell_kind.n_vertices())
                .map(|k| self.state.geometry.node_pos[self.state.geometry.cell_nodes[cell][k]])
                .collect();
            let mut unit = match self.mesh.cell_kind {
                CellKind::Line => {
                    let den = verts[1][0] - verts[0][0];
                    [(x[0] - verts[0][0]) / den, 0.0]
                }
                CellKind::Triangle => {
                    let m = Matrix2::new(
                        verts[1][0] - verts[0][0],
                        verts[2][0] - verts[0][0],
                        verts[1][1] - verts[0][1],
                        verts[2][1] - verts[0][1],
                    );
                    let Some(inv) = m.try_inverse() else {
                        continue;
                    };
                    let d = inv * Vector2::new(x[0] - verts[0][0], x[1] - verts[0][1]);
                    [d[0], d[1]]
                }
            };
            let mut ok = false;
            for _ in 0..30 {
                let geo = self.state.geometry.eval(self.mesh, cell, &unit);
                let mut res = [0.0, 0.0];
                let mut err = 0.0;
                for a in 0..dim {
                    res[a] = geo.x[a] - x[a];
                    err += res[a] * res[a];
                }
                if err.sqrt() < 1e-13 {
                    ok = true;
                    break;
                }
                // geo.jac is the reference-coordinate gradient; compose with
                // the unit-to-reference affine map to step in unit coords.
                let b = &self.mesh.cell_maps[cell].basis;
                if dim == 1 {
                    unit[0] -= res[0] / (geo.jac[(0, 0)] * b[(0, 0)]);
                } else {
                    let Some(inv) = (geo.jac * b).try_inverse() else {
                        break;
                    };
                    let d = inv * Vector2::new(res[0], res[1]);
                    unit[0] -= d[0];
                    unit[1] -= d[1];
                }
                if !unit[0].is_finite() || !unit[1].is_finite() {
                    break;
                }
            }
            if !ok {
                continue;
            }
            let inside = match self.mesh.cell_kind {
                CellKind::Line => -tol <= unit[0] && unit[0] <= 1.0 + tol,
                CellKind::Triangle => {
                    unit[0] >= -tol && unit[1] >= -tol && unit[0] + unit[1] <= 1.0 + tol
                }
            };
            if inside {
                let margin = match self.mesh.cell_kind {
                    CellKind::Line => (-unit[0]).max(unit[0] - 1.0),
                    CellKind::Triangle => {
                        (-unit[0]).max(-unit[1]).max(unit[0] + unit[1] - 1.0)
                    }
                };
                if best.map_or(true, |(_, _, m)| margin < m) {
                    best = Some((cell, unit, margin));
                }
                if margin < -tol {
                    break;
                }
            }
        }
        best.map(|(c, u, _)| (c, u))
    }

    /// State components at a physical point.
    pub fn sample_y(&self, x: &[f64; 2]) -> Option<Vec<f64>> {
        let (cell, unit) = self.locate(x)?;
        Some(self.state.eval_y(self.disc, cell, &unit))
    }

    /// Auxiliary components at a physical point (row-major m by d_x).
    pub fn sample_sigma(&self, x: &[f64; 2]) -> Option<Vec<f64>> {
        let (cell, unit) = self.locate(x)?;
        let vals = self.disc.sigma_space.eval(&unit);
        let cols = self.state.sigma[cell].ncols();
        Some(
            (0..cols)
                .map(|c| {
                    (0..self.disc.sigma_space.dim)
                        .map(|i| self.state.sigma[cell][(i, c)] * vals[i])
                        .sum()
                })
                .collect(),
        )
    }
}

/// Freestream reference values for surface coefficients.
#[derive(Clone, Debug)]
pub struct FreestreamReference {
    pub rho: f64,
    pub velocity: f64,
    pub pressure: f64,
    pub t_total: f64,
    pub t_wall: f64,
    pub cp_heat: f64,
}

/// One centerline or surface sample of the compressible solution.
#[derive(Clone, Debug)]
pub struct FlowSample {
    pub x: [f64; 2],
    pub density: f64,
    pub velocity: Vec<f64>,
    pub pressure: f64,
    pub temperature: f64,
    /// Normal-normal viscous stress along the sampling direction.
    pub tau_nn: f64,
    /// Normal heat flux along the sampling direction.
    pub q_n: f64,
    pub c_p: f64,
    pub stanton: f64,
}

/// Sample the compressible state along a straight line (1024 points by
/// default per the shock-location convention).
pub fn centerline_profile(
    sampler: &FieldSampler,
    freestream: &FreestreamReference,
    start: [f64; 2],
    end: [f64; 2],
    n_samples: usize,
    normal: [f64; 2],
) -> Vec<FlowSample> {
    let model = &sampler.disc.model;
    let (gas, d_x) = match &model.equations {
        Equations::NavierStokes { gas, spatial_dim } => (gas.clone(), *spatial_dim),
        _ => panic!("flow sampling applies to the compressible model"),
    };
    let mut out = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let t = i as f64 / (n_samples - 1) as f64;
        let x = [
            start[0] + t * (end[0] - start[0]),
            start[1] + t * (end[1] - start[1]),
        ];
        let Some(y) = sampler.sample_y(&x) else {
            continue;
        };
        let Some(sigma) = sampler.sample_sigma(&x) else {
            continue;
        };
        let eos = model.eos(&y);
        let scale = gas.mu_inf.sqrt();
        // sigma rows: mass, stresses, heat; contract with the unit normal.
        let mut tau_nn = 0.0;
        let mut q_n = 0.0;
        for i_dir in 0..d_x {
            for j_dir in 0..d_x {
                let tau_ji = scale * sigma[(1 + j_dir) * d_x + i_dir];
                tau_nn += normal[j_dir] * tau_ji * normal[i_dir];
            }
            q_n += -scale * sigma[(d_x + 1) * d_x + i_dir] * normal[i_dir];
        }
        let c_p = (eos.pressure - freestream.pressure)
            / (0.5 * freestream.rho * freestream.velocity * freestream.velocity);
        let stanton = q_n
            / (freestream.cp_heat
                * freestream.rho
                * freestream.velocity
                * (freestream.t_total - freestream.t_wall));
        out.push(FlowSample {
            x,
            density: y[0],
            velocity: (0..d_x).map(|k| y[1 + k] / y[0]).collect(),
            pressure: eos.pressure,
            temperature: eos.temperature,
            tau_nn,
            q_n,
            c_p,
            stanton,
        });
    }
    out
}

/// Shock location: the sample with minimum normal heat flux. Returns None
/// when the heat flux carries no signal (uniform fields).
pub fn shock_location(profile: &[FlowSample]) -> Option<[f64; 2]> {
    let mut best: Option<(&FlowSample, f64)> = None;
    let mut spread = 0.0f64;
    for s in profile {
        spread = spread.max(s.q_n.abs());
        if best.as_ref().map_or(true, |(_, q)| s.q_n < *q) {
            best = Some((s, s.q_n));
        }
    }
    if spread < 1e-12 {
        return None;
    }
    best.map(|(s, _)| s.x)
}

/// Samples at the geometry nodes of wall facets: arc coordinate, pressure
/// coefficient, Stanton number, and wall heat flux.
pub fn surface_samples(
    sampler: &FieldSampler,
    freestream: &FreestreamReference,
) -> Vec<FlowSample> {
    let mesh = sampler.mesh;
    let mut out = Vec::new();
    for (fid, facet) in mesh.facets.iter().enumerate() {
        if !facet.tags.iter().any(|t| matches!(t, BoundaryTag::Wall)) {
            continue;
        }
        let nodes = &sampler.state.geometry.facet_nodes[fid];
        let n_nodes = nodes.len();
        for (k, &node) in nodes.iter().enumerate() {
            let x = sampler.state.geometry.node_pos[node];
            // Unit normal from the scaled normal at the matching parameter.
            let s_param = if n_nodes > 1 {
                k as f64 / (n_nodes - 1) as f64 * mesh.facet_length(facet)
            } else {
                0.0
            };
            let (s_vec, _) = sampler.state.geometry.scaled_normal(mesh, fid, s_param);
            let mag = (s_vec[0] * s_vec[0] + s_vec[1] * s_vec[1]).sqrt();
            let normal = [s_vec[0] / mag, s_vec[1] / mag];
            // Nudge the sample just inside the wall.
            let inner = [x[0] - 1e-10 * normal[0], x[1] - 1e-10 * normal[1]];
            let profile = centerline_profile(sampler, freestream, inner, inner, 2, normal);
            if let Some(s) = profile.into_iter().next() {
                out.push(s);
            }
        }
    }
    out
}

/// Legacy ASCII VTK dump of the state, with curved cells subdivided at
/// `p + 2` points per edge for display. Byte-stable for a fixed state.
pub fn vtk_dump(disc: &Discretization, mesh: &ReferenceMesh, state: &DiscreteState) -> String {
    let refine = disc.y_space.degree.max(state.geometry.degree) + 2;
    let m = disc.model.m();
    let mut points: Vec<[f64; 2]> = Vec::new();
    let mut cells: Vec<Vec<usize>> = Vec::new();
    let mut point_data: Vec<Vec<f64>> = Vec::new();

    for cell in 0..mesh.n_cells() {
        match mesh.cell_kind {
            CellKind::Line => {
                let base = points.len();
                for i in 0..=refine {
                    let unit = [i as f64 / refine as f64, 0.0];
                    let geo = state.geometry.eval(mesh, cell, &unit);
                    points.push(geo.x);
                    point_data.push(state.eval_y(disc, cell, &unit));
                }
                for i in 0..refine {
                    cells.push(vec![base + i, base + i + 1]);
                }
            }
            CellKind::Triangle => {
                let base = points.len();
                let idx = |i: usize, j: usize| -> usize {
                    // Lattice index within the subdivided triangle.
                    let mut off = 0;
                    for row in 0..j {
                        off += refine + 1 - row;
                    }
                    base + off + i
                };
                for j in 0..=refine {
                    for i in 0..=(refine - j) {
                        let unit = [i as f64 / refine as f64, j as f64 / refine as f64];
                        let geo = state.geometry.eval(mesh, cell, &unit);
                        points.push(geo.x);
                        point_data.push(state.eval_y(disc, cell, &unit));
                    }
                }
                for j in 0..refine {
                    for i in 0..(refine - j) {
                        cells.push(vec![idx(i, j), idx(i + 1, j), idx(i, j + 1)]);
                        if i + j + 1 < refine {
                            cells.push(vec![idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
                        }
                    }
                }
            }
        }
    }

    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("mdg solution\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    out.push_str(&format!("POINTS {} double\n", points.len()));
    for p in &points {
        out.push_str(&format!("{:.17e} {:.17e} 0\n", p[0], p[1]));
    }
    let entries: usize = cells.iter().map(|c| c.len() + 1).sum();
    out.push_str(&format!("CELLS {} {}\n", cells.len(), entries));
    for c in &cells {
        let ids: Vec<String> = c.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{} {}\n", c.len(), ids.join(" ")));
    }
    out.push_str(&format!("CELL_TYPES {}\n", cells.len()));
    let vtk_type = match mesh.cell_kind {
        CellKind::Line => 3,
        CellKind::Triangle => 5,
    };
    for _ in &cells {
        out.push_str(&format!("{vtk_type}\n"));
    }
    out.push_str(&format!("POINT_DATA {}\n", points.len()));
    for comp in 0..m {
        out.push_str(&format!("SCALARS y{comp} double 1\nLOOKUP_TABLE default\n"));
        for d in &point_data {
            out.push_str(&format!("{:.17e}\n", d[comp]));
        }
    }
    out
}

/// Per-cell extent and midpoint-sample table.
pub fn cell_table_csv(disc: &Discretization, mesh: &ReferenceMesh, state: &DiscreteState) -> String {
    let m = disc.model.m();
    let mut out = String::from("cell,x_left,x_right");
    for k in 0..m {
        out.push_str(&format!(",y{k}"));
    }
    out.push('\n');
    let mid = match mesh.cell_kind {
        CellKind::Line => [0.5, 0.0],
        CellKind::Triangle => [1.0 / 3.0, 1.0 / 3.0],
    };
    for cell in 0..mesh.n_cells() {
        let verts: Vec<[f64; 2]> = (0..mesh.cell_kind.n_vertices())
            .map(|k| state.geometry.node_pos[state.geometry.cell_nodes[cell][k]])
            .collect();
        let xmin = verts.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
        let xmax = verts.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
        let y = state.eval_y(disc, cell, &mid);
        out.push_str(&format!("{cell},{xmin:.17e},{xmax:.17e}"));
        for v in &y {
            out.push_str(&format!(",{v:.17e}"));
        }
        out.push('\n');
    }
    out
}

/// Pressure coefficient from a pressure value and freestream reference.
pub fn pressure_coefficient(p: f64, freestream: &FreestreamReference) -> f64 {
    (p - freestream.pressure) / (0.5 * freestream.rho * freestream.velocity * freestream.velocity)
}

/// Build the freestream reference for the nondimensional compressible
/// cases: unit density and sound speed, velocity equal to the Mach number.
pub fn nondimensional_freestream(model: &FluxModel, mach: f64) -> FreestreamReference {
    let Equations::NavierStokes { gas, .. } = &model.equations else {
        panic!("freestream reference applies to the compressible model");
    };
    let p_inf = 1.0 / gas.gamma;
    let t_inf = p_inf / gas.gas_constant;
    FreestreamReference {
        rho: 1.0,
        velocity: mach,
        pressure: p_inf,
        t_total: t_inf * (1.0 + 0.5 * (gas.gamma - 1.0) * mach * mach),
        t_wall: 2.5 * t_inf,
        cp_heat: gas.cp(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::BoundaryData;
    use crate::mesh::{build_line_mesh, build_triangulated_grid, Side};
    use crate::physics::GasModel;
    use crate::solver::initialize_state;

    fn tag_inflow(mesh: &mut ReferenceMesh) {
        mesh.tag_boundary(|_| vec![BoundaryTag::Inflow, BoundaryTag::Fixed]);
    }

    #[test]
    fn locates_points_in_curved_cells() {
        let (mut mesh, mut geometry) =
            build_triangulated_grid(2, 2, [0.0, 0.0, 1.0, 1.0], 2, false).unwrap();
        tag_inflow(&mut mesh);
        // Gently warp the interior.
        for node in 0..geometry.n_nodes() {
            let p = geometry.node_ref[node];
            if p[0] > 0.01 && p[0] < 0.99 && p[1] > 0.01 && p[1] < 0.99 {
                geometry.node_pos[node][0] += 0.03 * (p[1] * 7.0).sin();
                geometry.node_pos[node][1] -= 0.02 * (p[0] * 5.0).sin();
            }
        }
        let model = FluxModel::burgers(1e-2, false).clone();
        let model = FluxModel {
            equations: crate::physics::Equations::AdvectionDiffusion {
                velocity: vec![1.0, 0.0],
                diffusivity: 1e-2,
            },
            ..model
        };
        let disc = Discretization::new(&mesh, &geometry, model, 2, 2);
        let state = initialize_state(&disc, &mesh, geometry, |x| vec![x[0] + 2.0 * x[1]], false);
        let sampler = FieldSampler::new(&disc, &mesh, &state);
        for &x in &[[0.21, 0.37], [0.8, 0.13], [0.5, 0.5], [0.05, 0.95]] {
            let y = sampler
                .sample_y(&x)
                .unwrap_or_else(|| panic!("point {x:?} must be found"));
            let expect = x[0] + 2.0 * x[1];
            assert!((y[0] - expect).abs() < 1e-8, "{x:?}: {} vs {expect}", y[0]);
        }
        assert!(sampler.sample_y(&[1.4, 0.2]).is_none(), "outside the mesh");
    }

    fn ns_line_state() -> (ReferenceMesh, Discretization, DiscreteState) {
        let gas = GasModel::air(5e-3);
        let model = FluxModel::navier_stokes(gas, 1, false);
        let (mut mesh, geometry) = build_line_mesh(8, 0.0, 1.0, 2).unwrap();
        tag_inflow(&mut mesh);
        let disc = Discretization::new(&mesh, &geometry, model, 2, 2);
        let gamma = 1.4;
        let p_inf = 1.0 / gamma;
        let state = initialize_state(
            &disc,
            &mesh,
            geometry,
            move |_| vec![1.0, 5.0, p_inf / (gamma - 1.0) + 0.5 * 25.0],
            true,
        );
        (mesh, disc, state)
    }

    #[test]
    fn freestream_has_zero_pressure_coefficient() {
        let (mesh, disc, state) = ns_line_state();
        let sampler = FieldSampler::new(&disc, &mesh, &state);
        let freestream = nondimensional_freestream(&disc.model, 5.0);
        let profile =
            centerline_profile(&sampler, &freestream, [0.01, 0.0], [0.99, 0.0], 64, [1.0, 0.0]);
        assert!(!profile.is_empty());
        for s in &profile {
            assert!(s.c_p.abs() < 1e-10, "c_p = {}", s.c_p);
        }
        // Uniform flow carries no heat flux: shock location is undefined.
        assert!(shock_location(&profile).is_none());
    }

    #[test]
    fn vtk_and_csv_outputs_are_deterministic() {
        let (mesh, disc, state) = ns_line_state();
        let a = vtk_dump(&disc, &mesh, &state);
        let b = vtk_dump(&disc, &mesh, &state);
        assert_eq!(a, b);
        assert!(a.starts_with("# vtk DataFile Version 3.0"));
        let c1 = cell_table_csv(&disc, &mesh, &state);
        let c2 = cell_table_csv(&disc, &mesh, &state);
        assert_eq!(c1, c2);
        assert_eq!(c1.lines().count(), 1 + mesh.n_cells());
    }

    #[test]
    fn cell_table_round_trips_to_machine_precision() {
        let (mesh, disc, state) = ns_line_state();
        let csv = cell_table_csv(&disc, &mesh, &state);
        let mid = [0.5, 0.0];
        for (i, line) in csv.lines().skip(1).enumerate() {
            let fields: Vec<f64> = line
                .split(',')
                .skip(1)
                .map(|s| s.parse::<f64>().unwrap())
                .collect();
            let y = state.eval_y(&disc, i, &mid);
            for (k, v) in y.iter().enumerate() {
                assert!((fields[2 + k] - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
    }
}
