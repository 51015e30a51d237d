//! Regularized Levenberg-Marquardt iteration on the least-squares residual.
//!
//! Each step solves (J^T J + I_lambda + w E) d = -J^T r with a sparse
//! Cholesky factorization, where I_lambda applies per-block Tikhonov
//! coefficients and E is a linear-elastic stiffness acting on the geometry
//! block, conjugated with the boundary-projection derivative. Damping grows
//! multiplicatively on rejected steps and shrinks on accepted ones, floored
//! at the configured base values. After each accepted step the grid validity
//! controller may project cells to linear shape or split edges; topology
//! changes rebuild the discretization and transfer the solution by
//! projection onto the children.

use crate::assembly::{
    consistent_sigma, AssemblyError, BoundaryData, DiscreteState, Discretization, Layout,
    ResidualSystem,
};
use crate::basis::{quadrature_rule, CellKind};
use crate::geometry_bc::GeometryConstraints;
use crate::mesh::{validity_check_and_refine, MeshError, ReferenceMesh};
use crate::physics::Equations;
use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("assembly failed: {0}")]
    Assembly(#[from] AssemblyError),
    #[error("mesh error: {0}")]
    Mesh(#[from] MeshError),
    #[error("residual diverged: no accepted step after {rejections} damping increases")]
    Stalled { rejections: usize },
    #[error("residual grew over {window} iterations (best {best:.3e}, current {current:.3e})")]
    Diverged {
        window: usize,
        best: f64,
        current: f64,
    },
    #[error("normal-equation factorization failed even with raised damping")]
    Factorization,
}

/// Levenberg-Marquardt and grid-control settings.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Base Tikhonov coefficients per unknown block. The grid coefficient
    /// must stay positive while the grid moves; the state and auxiliary
    /// coefficients may be zero.
    pub lambda_y: f64,
    pub lambda_sigma: f64,
    pub lambda_u: f64,
    /// Weight of the linear-elastic grid regularization.
    pub elastic_weight: f64,
    /// Lame parameters of the elastic operator on the reference grid.
    pub lame: (f64, f64),
    /// Stop when ||J^T r|| falls below this.
    pub stationarity_tol: f64,
    pub max_iterations: usize,
    /// Damping multiplier on rejection and divisor on acceptance.
    pub damping_grow: f64,
    pub damping_shrink: f64,
    pub max_rejections: usize,
    /// Viscosity continuation schedule; the last entry is the target. Empty
    /// means a single stage at the model's own parameter.
    pub continuation: Vec<f64>,
    pub anisotropy_threshold: f64,
    pub cell_budget: usize,
    /// Pin every geometry node (static-grid least-squares mode).
    pub frozen_geometry: bool,
    /// Abort when the residual has not improved over this many iterations.
    pub divergence_patience: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda_y: 0.0,
            lambda_sigma: 0.0,
            lambda_u: 1e-6,
            elastic_weight: 1e-3,
            lame: (1.0, 1.0),
            stationarity_tol: 1e-10,
            max_iterations: 200,
            damping_grow: 10.0,
            damping_shrink: 2.0,
            max_rejections: 25,
            continuation: Vec::new(),
            anisotropy_threshold: 50.0,
            cell_budget: 4096,
            frozen_geometry: false,
            divergence_patience: 40,
        }
    }
}

/// One line of the iteration log.
#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub stage: usize,
    pub iteration: usize,
    pub residual_norm: f64,
    pub stationarity_norm: f64,
    pub step_norm_y: f64,
    pub step_norm_sigma: f64,
    pub step_norm_u: f64,
    pub damping: f64,
    pub n_cells: usize,
    pub refinement_events: usize,
}

#[derive(Clone, Debug, Default)]
pub struct IterationReport {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl IterationReport {
    pub fn csv(&self) -> String {
        let mut out = String::from(
            "stage,iteration,residual,stationarity,step_y,step_sigma,step_u,damping,cells,refinements\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{}\n",
                r.stage,
                r.iteration,
                r.residual_norm,
                r.stationarity_norm,
                r.step_norm_y,
                r.step_norm_sigma,
                r.step_norm_u,
                r.damping,
                r.n_cells,
                r.refinement_events
            ));
        }
        out
    }
}

/// Linear-elastic stiffness on the geometry space over the reference
/// configuration, acting on node displacements. Symmetric positive
/// semi-definite; rigid translations are in its null space.
pub fn elastic_operator(
    mesh: &ReferenceMesh,
    geometry: &crate::mesh::GeometryField,
    lame: (f64, f64),
) -> CscMatrix<f64> {
    let (lambda_l, mu_l) = (lame.0, lame.1);
    let dim = mesh.dim;
    let n_u = geometry.n_nodes() * dim;
    let rule = quadrature_rule(mesh.cell_kind, (2 * geometry.degree).max(1));
    let tab = geometry.basis.tabulate(&rule);
    let n_loc = geometry.basis.dim;
    let mut coo = CooMatrix::new(n_u, n_u);
    for cell in 0..mesh.n_cells() {
        let map = &mesh.cell_maps[cell];
        let scale = map.det.abs() * if mesh.cell_kind == CellKind::Line { 1.0 } else { 1.0 };
        for q in 0..rule.len() {
            // Reference-coordinate gradients of the geometry basis.
            let mut grads = vec![[0.0; 2]; n_loc];
            for (i, g) in grads.iter_mut().enumerate() {
                for b in 0..dim {
                    for c in 0..dim {
                        g[b] += tab.grads[c][(q, i)] * map.inv[(c, b)];
                    }
                }
            }
            let w = rule.weights[q] * scale;
            for i in 0..n_loc {
                let gi = grads[i];
                let ni = geometry.cell_nodes[cell][i];
                for j in 0..n_loc {
                    let gj = grads[j];
                    let nj = geometry.cell_nodes[cell][j];
                    let grad_dot: f64 = (0..dim).map(|c| gi[c] * gj[c]).sum();
                    for a in 0..dim {
                        for b in 0..dim {
                            let mut v = mu_l * gi[b] * gj[a];
                            if a == b {
                                v += mu_l * grad_dot;
                            }
                            v += lambda_l * gi[a] * gj[b];
                            coo.push(ni * dim + a, nj * dim + b, w * v);
                        }
                    }
                }
            }
        }
    }
    CscMatrix::from(&coo)
}

/// Conjugate the elastic operator with the boundary-projection derivative:
/// P^T E P, with P block-diagonal over nodes.
pub fn conjugate_with_projectors(
    elastic: &CscMatrix<f64>,
    constraints: &GeometryConstraints,
    geometry: &crate::mesh::GeometryField,
    dim: usize,
) -> CscMatrix<f64> {
    let projectors: Vec<nalgebra::Matrix2<f64>> = (0..geometry.n_nodes())
        .map(|n| constraints.projector(n, geometry.node_pos[n]))
        .collect();
    let mut coo = CooMatrix::new(elastic.nrows(), elastic.ncols());
    for (row, col, &v) in elastic.triplet_iter() {
        let (ni, a) = (row / dim, row % dim);
        let (nj, b) = (col / dim, col % dim);
        let pi = &projectors[ni];
        let pj = &projectors[nj];
        for ap in 0..dim {
            let left = pi[(a, ap)];
            if left == 0.0 {
                continue;
            }
            for bp in 0..dim {
                let right = pj[(b, bp)];
                if left * right * v != 0.0 {
                    coo.push(ni * dim + ap, nj * dim + bp, left * v * right);
                }
            }
        }
    }
    CscMatrix::from(&coo)
}

/// Reverse Cuthill-McKee ordering of a symmetric sparsity pattern, for
/// bandwidth (and Cholesky fill) reduction.
fn rcm_permutation(h: &CscMatrix<f64>) -> Vec<usize> {
    let n = h.ncols();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, c, _) in h.triplet_iter() {
        if r != c {
            adjacency[c].push(r);
        }
    }
    let mut degree: Vec<usize> = adjacency.iter().map(|a| a.len()).collect();
    for a in &mut adjacency {
        a.sort_unstable();
        a.dedup();
    }
    for (d, a) in degree.iter_mut().zip(&adjacency) {
        *d = a.len();
    }
    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    loop {
        // Start each component from a minimum-degree node.
        let Some(start) = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| degree[i])
        else {
            break;
        };
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adjacency[v]
                .iter()
                .copied()
                .filter(|&u| !visited[u])
                .collect();
            nbrs.sort_by_key(|&u| degree[u]);
            for u in nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// One damped Gauss-Newton increment: solves
/// (J^T J + diag(reg) + E) d = -J^T r by sparse Cholesky with an RCM
/// fill-reducing reordering.
///
/// `elastic` must already be sized n_cols by n_cols (or None).
pub fn lm_step(
    jacobian: &CscMatrix<f64>,
    residual: &DVector<f64>,
    reg_diag: &DVector<f64>,
    elastic: Option<&CscMatrix<f64>>,
) -> Result<DVector<f64>, SolveError> {
    let jt = jacobian.transpose();
    let jtj = &jt * jacobian;
    lm_step_from_normal(&jtj, &jt, residual, reg_diag, elastic)
}

/// Variant reusing a precomputed J^T J and transpose.
pub fn lm_step_from_normal(
    jtj: &CscMatrix<f64>,
    jt: &CscMatrix<f64>,
    residual: &DVector<f64>,
    reg_diag: &DVector<f64>,
    elastic: Option<&CscMatrix<f64>>,
) -> Result<DVector<f64>, SolveError> {
    let n = jtj.ncols();
    let mut coo = CooMatrix::new(n, n);
    for (r, c, &v) in jtj.triplet_iter() {
        coo.push(r, c, v);
    }
    for i in 0..n {
        if reg_diag[i] != 0.0 {
            coo.push(i, i, reg_diag[i]);
        }
    }
    if let Some(e) = elastic {
        for (r, c, &v) in e.triplet_iter() {
            if v != 0.0 {
                coo.push(r, c, v);
            }
        }
    }
    let h = CscMatrix::from(&coo);
    let perm = rcm_permutation(&h);
    let mut inv_perm = vec![0usize; n];
    for (new, &old) in perm.iter().enumerate() {
        inv_perm[old] = new;
    }
    let mut pcoo = CooMatrix::new(n, n);
    for (r, c, &v) in h.triplet_iter() {
        pcoo.push(inv_perm[r], inv_perm[c], v);
    }
    let hp = CscMatrix::from(&pcoo);
    let chol = CscCholesky::factor(&hp).map_err(|_| SolveError::Factorization)?;
    let mut g = DVector::zeros(n);
    crate::assembly::sparse_mul_vec(jt, residual, &mut g);
    let mut gp = DVector::zeros(n);
    for old in 0..n {
        gp[inv_perm[old]] = g[old];
    }
    let rhs = DMatrix::from_column_slice(n, 1, gp.as_slice());
    let sol = chol.solve(&rhs);
    let mut d = DVector::zeros(n);
    for old in 0..n {
        d[old] = -sol[(inv_perm[old], 0)];
    }
    Ok(d)
}

fn reg_vector(layout: &Layout, lambda: (f64, f64, f64)) -> DVector<f64> {
    let mut d = DVector::zeros(layout.n_cols);
    for i in 0..layout.n_cols {
        d[i] = if i < layout.sigma_offset {
            lambda.0
        } else if i < layout.u_offset {
            lambda.1
        } else {
            lambda.2
        };
    }
    d
}

/// Embed the geometry-block elastic operator into full column space.
fn embed_elastic(elastic: &CscMatrix<f64>, layout: &Layout, weight: f64) -> CscMatrix<f64> {
    let n = layout.n_cols;
    let mut coo = CooMatrix::new(n, n);
    for (r, c, &v) in elastic.triplet_iter() {
        if weight * v != 0.0 {
            coo.push(layout.u_offset + r, layout.u_offset + c, weight * v);
        }
    }
    CscMatrix::from(&coo)
}

/// The full moving-grid problem: mesh, discretization, state, and data.
pub struct MdgSolver {
    pub mesh: ReferenceMesh,
    pub disc: Discretization,
    pub state: DiscreteState,
    pub bdata: BoundaryData,
    pub config: SolverConfig,
    pub report: IterationReport,
    p_y: usize,
    p_sigma: usize,
}

impl MdgSolver {
    pub fn new(
        mesh: ReferenceMesh,
        disc: Discretization,
        state: DiscreteState,
        bdata: BoundaryData,
        config: SolverConfig,
    ) -> Self {
        let (p_y, p_sigma) = (disc.y_space.degree, disc.sigma_space.degree);
        MdgSolver {
            mesh,
            disc,
            state,
            bdata,
            config,
            report: IterationReport::default(),
            p_y,
            p_sigma,
        }
    }

    fn constraints(&self) -> GeometryConstraints {
        if self.config.frozen_geometry {
            GeometryConstraints::all_fixed(&self.state.geometry)
        } else {
            GeometryConstraints::from_mesh(&self.mesh, &self.state.geometry)
        }
    }

    fn set_viscosity(&mut self, value: f64) {
        match &mut self.disc.model.equations {
            Equations::AdvectionDiffusion { diffusivity, .. } => *diffusivity = value,
            Equations::Burgers { viscosity } => *viscosity = value,
            Equations::NavierStokes { gas, .. } => {
                gas.mu = value;
                gas.mu_inf = value;
            }
        }
    }

    /// Transfer the broken fields onto a refined mesh by projecting each
    /// parent polynomial onto its children in unit coordinates.
    fn transfer_state(
        &mut self,
        old_maps: &[crate::mesh::AffineMap],
        old_y: &[DMatrix<f64>],
        old_sigma: &[DMatrix<f64>],
        parent: &[usize],
    ) {
        let rule = quadrature_rule(self.mesh.cell_kind, 2 * self.p_y.max(self.p_sigma) + 2);
        let y_tab = self.disc.y_space.tabulate(&rule);
        let s_tab = self.disc.sigma_space.tabulate(&rule);
        let m = self.disc.model.m();
        let md = m * self.disc.model.d_x();
        let mut new_y = Vec::with_capacity(self.mesh.n_cells());
        let mut new_sigma = Vec::with_capacity(self.mesh.n_cells());
        for cell in 0..self.mesh.n_cells() {
            let p = parent[cell];
            let mut yc = DMatrix::zeros(self.disc.y_space.dim, m);
            let mut sc = DMatrix::zeros(self.disc.sigma_space.dim, md);
            for (q, pt) in rule.points.iter().enumerate() {
                let global = self.mesh.cell_maps[cell].apply(pt);
                let parent_unit = old_maps[p].pullback(&global);
                let y_vals = self.disc.y_space.eval(&parent_unit);
                let s_vals = self.disc.sigma_space.eval(&parent_unit);
                let w = rule.weights[q];
                for k in 0..m {
                    let mut v = 0.0;
                    for i in 0..self.disc.y_space.dim {
                        v += old_y[p][(i, k)] * y_vals[i];
                    }
                    // Orthonormal basis: projection is plain quadrature.
                    for a in 0..self.disc.y_space.dim {
                        yc[(a, k)] += w * v * y_tab.values[(q, a)] / self.mesh.cell_kind.measure()
                            * self.mesh.cell_kind.measure();
                    }
                }
                for c in 0..md {
                    let mut v = 0.0;
                    for i in 0..self.disc.sigma_space.dim {
                        v += old_sigma[p][(i, c)] * s_vals[i];
                    }
                    for a in 0..self.disc.sigma_space.dim {
                        sc[(a, c)] += w * v * s_tab.values[(q, a)];
                    }
                }
            }
            new_y.push(yc);
            new_sigma.push(sc);
        }
        self.state.y = new_y;
        self.state.sigma = new_sigma;
    }

    /// Run the stationary-point iteration, including the viscosity
    /// continuation schedule.
    pub fn solve(&mut self) -> Result<(), SolveError> {
        let stages: Vec<Option<f64>> = if self.config.continuation.is_empty() {
            vec![None]
        } else {
            self.config.continuation.iter().map(|&v| Some(v)).collect()
        };
        for (stage, value) in stages.iter().enumerate() {
            if let Some(v) = value {
                self.set_viscosity(*v);
                if stage > 0 {
                    // Warm start: keep y and the grid, refresh the auxiliary
                    // variable for the new constitutive scaling.
                    self.state.sigma = consistent_sigma(&self.disc, &self.mesh, &self.state);
                }
            }
            self.solve_stage(stage)?;
        }
        Ok(())
    }

    fn solve_stage(&mut self, stage: usize) -> Result<(), SolveError> {
        let cfg = self.config.clone();
        let mut constraints = self.constraints();
        constraints
            .project(&mut self.state.geometry)
            .expect("initial boundary projection");
        let mut elastic_raw = elastic_operator(&self.mesh, &self.state.geometry, cfg.lame);

        let mut lambda = (cfg.lambda_y, cfg.lambda_sigma, cfg.lambda_u);
        let mut system = self
            .disc
            .assemble(&self.mesh, &self.state, &self.bdata, &constraints)?;
        let mut best_residual = system.residual.norm();
        let mut since_best = 0usize;
        self.push_record(
            stage,
            0,
            system.residual.norm(),
            system.gradient().norm(),
            (0.0, 0.0, 0.0),
            lambda.2,
            0,
        );

        for iteration in 0..cfg.max_iterations {
            let grad = system.gradient();
            let stationarity = grad.norm();
            let res_norm = system.residual.norm();

            if stationarity < cfg.stationarity_tol {
                self.report.converged = true;
                return Ok(());
            }

            // Try steps with growing damping until one is accepted. The
            // normal matrix is fixed while only the damping changes.
            let jt = system.jacobian.transpose();
            let jtj = &jt * &system.jacobian;
            let mut accepted: Option<(DiscreteState, DVector<f64>)> = None;
            let mut rejections = 0usize;
            while rejections <= cfg.max_rejections {
                let reg = reg_vector(&system.layout, lambda);
                let embedded = if cfg.elastic_weight > 0.0 && !cfg.frozen_geometry {
                    let conj = conjugate_with_projectors(
                        &elastic_raw,
                        &constraints,
                        &self.state.geometry,
                        self.mesh.dim,
                    );
                    Some(embed_elastic(&conj, &system.layout, cfg.elastic_weight))
                } else {
                    None
                };
                match lm_step_from_normal(&jtj, &jt, &system.residual, &reg, embedded.as_ref()) {
                    Ok(delta) => {
                        let mut trial = self.state.clone();
                        trial.apply_increment(&system.layout, &delta, &constraints);
                        match self.disc.assemble_residual(&self.mesh, &trial, &self.bdata) {
                            Ok(r_trial) if r_trial.norm() <= res_norm * (1.0 + 1e-14) => {
                                accepted = Some((trial, delta));
                                break;
                            }
                            _ => {}
                        }
                    }
                    Err(SolveError::Factorization) => {}
                    Err(e) => return Err(e),
                }
                // Zero base coefficients still need to participate in
                // damping, or the corresponding block never shrinks its
                // step; they decay back to base after acceptances.
                let activate = |l: f64| (l * cfg.damping_grow).max(1e-10);
                lambda = (activate(lambda.0), activate(lambda.1), activate(lambda.2));
                rejections += 1;
            }
            let Some((trial, delta)) = accepted else {
                return Err(SolveError::Stalled { rejections });
            };
            self.state = trial;
            lambda = (
                (lambda.0 / cfg.damping_shrink).max(cfg.lambda_y),
                (lambda.1 / cfg.damping_shrink).max(cfg.lambda_sigma),
                (lambda.2 / cfg.damping_shrink).max(cfg.lambda_u),
            );

            let ly = delta.rows(0, system.layout.sigma_offset).norm();
            let ls = delta
                .rows(
                    system.layout.sigma_offset,
                    system.layout.u_offset - system.layout.sigma_offset,
                )
                .norm();
            let lu = delta
                .rows(
                    system.layout.u_offset,
                    system.layout.n_cols - system.layout.u_offset,
                )
                .norm();

            // Grid validity and quality control.
            let mut n_events = 0;
            if !cfg.frozen_geometry {
                let old_maps = self.mesh.cell_maps.clone();
                let old_y = self.state.y.clone();
                let old_sigma = self.state.sigma.clone();
                let refinement = validity_check_and_refine(
                    &mut self.mesh,
                    &mut self.state.geometry,
                    cfg.anisotropy_threshold,
                    cfg.cell_budget,
                )?;
                n_events = refinement.events.len();
                if refinement.changed_topology {
                    self.disc = Discretization::new(
                        &self.mesh,
                        &self.state.geometry,
                        self.disc.model.clone(),
                        self.p_y,
                        self.p_sigma,
                    );
                    self.transfer_state(&old_maps, &old_y, &old_sigma, &refinement.parent);
                    constraints = self.constraints();
                    constraints
                        .project(&mut self.state.geometry)
                        .expect("projection after refinement");
                    elastic_raw = elastic_operator(&self.mesh, &self.state.geometry, cfg.lame);
                }
            }

            system = self
                .disc
                .assemble(&self.mesh, &self.state, &self.bdata, &constraints)?;
            let new_norm = system.residual.norm();
            self.push_record(
                stage,
                iteration + 1,
                new_norm,
                system.gradient().norm(),
                (ly, ls, lu),
                lambda.2,
                n_events,
            );

            if new_norm < best_residual * (1.0 - 1e-12) {
                best_residual = new_norm;
                since_best = 0;
            } else {
                since_best += 1;
                if new_norm > 2.0 * best_residual && since_best > cfg.divergence_patience {
                    return Err(SolveError::Diverged {
                        window: cfg.divergence_patience,
                        best: best_residual,
                        current: new_norm,
                    });
                }
                if since_best > cfg.divergence_patience {
                    // Stalled at a stationary point of this stage; move on.
                    break;
                }
            }
        }
        // Stationarity check after the final iteration.
        let grad = system.gradient();
        if grad.norm() < cfg.stationarity_tol {
            self.report.converged = true;
            Ok(())
        } else {
            // Budget exhausted without meeting the tolerance: report as-is;
            // callers decide whether the state is usable.
            self.report.converged = false;
            Ok(())
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push_record(
        &mut self,
        stage: usize,
        iteration: usize,
        residual_norm: f64,
        stationarity_norm: f64,
        steps: (f64, f64, f64),
        damping: f64,
        refinement_events: usize,
    ) {
        self.report.records.push(IterationRecord {
            stage,
            iteration,
            residual_norm,
            stationarity_norm,
            step_norm_y: steps.0,
            step_norm_sigma: steps.1,
            step_norm_u: steps.2,
            damping,
            n_cells: self.mesh.n_cells(),
            refinement_events,
        });
    }

    /// Residual system at the current state (for diagnostics).
    pub fn current_system(&self) -> Result<ResidualSystem, AssemblyError> {
        let constraints = self.constraints();
        self.disc
            .assemble(&self.mesh, &self.state, &self.bdata, &constraints)
    }
}

/// Build a state by projecting an initial profile, optionally with the
/// pointwise-consistent auxiliary variable (otherwise sigma starts at zero).
pub fn initialize_state(
    disc: &Discretization,
    mesh: &ReferenceMesh,
    geometry: crate::mesh::GeometryField,
    profile: impl Fn(&[f64]) -> Vec<f64>,
    sigma_consistent: bool,
) -> DiscreteState {
    let mut state = DiscreteState::zeros(disc, mesh, geometry);
    state.y = crate::basis::l2_project(profile, mesh, &state.geometry, &disc.y_space, disc.model.m())
        .expect("initial projection");
    if sigma_consistent {
        state.sigma = consistent_sigma(disc, mesh, &state);
    }
    state
}
