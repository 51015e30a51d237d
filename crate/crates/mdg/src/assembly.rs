//! Assembly of the discrete state operator and its Jacobian.
//!
//! The residual has four block families: element conservation rows, element
//! constitutive rows, interface flux-jump rows, and interface state-jump
//! rows. Element terms are integrated in reference coordinates with the
//! cofactor and determinant of the grid mapping; interface terms use the
//! scaled facet normal. Test functions are orthonormal on their reference
//! cell or facet, so each block's Euclidean norm is an L2 residual norm.
//!
//! Kernels are generic over the scalar type: running them on jets seeded
//! with the cell- or facet-local unknowns produces residual and Jacobian in
//! one pass, with the boundary-projection chain rule applied to the
//! geometry columns during scatter.

use crate::basis::{
    quadrature_rule, BasisTable, CellKind, NodalBasis, PolynomialSpace, RefPoint, TraceSpace,
};
use crate::geometry_bc::GeometryConstraints;
use crate::jet::{Jet, Scalar, Tangent};
use crate::mesh::{BoundaryTag, GeometryField, ReferenceMesh, Side};
use crate::physics::{FluxModel, PhysicsError, SMat};
use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CscMatrix};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("invalid geometry in cell {cell}: det = {det:.3e}")]
    InvalidGeometry { cell: usize, det: f64 },
    #[error("inadmissible state in cell {cell}: {source}")]
    InadmissibleState { cell: usize, source: PhysicsError },
    #[error("no boundary prescription for side {side:?}")]
    MissingBoundaryData { side: Side },
    #[error("facet {facet} has no side label to look up boundary data")]
    UnlabeledBoundaryFacet { facet: usize },
}

/// Analytic boundary/source profiles, evaluable on jets so that grid motion
/// differentiates through the sampled positions.
#[derive(Clone, Debug)]
pub enum BoundaryFunction {
    Constant(Vec<f64>),
    /// amplitude * sin(2 pi x) + offset, on the first (spatial) coordinate.
    SineProfile { amplitude: f64, offset: f64 },
}

impl BoundaryFunction {
    pub fn eval<S: Scalar>(&self, x: &[S; 2]) -> Vec<S> {
        match self {
            BoundaryFunction::Constant(v) => v.iter().map(|&c| S::constant(c)).collect(),
            BoundaryFunction::SineProfile { amplitude, offset } => {
                let arg = x[0].clone() * (2.0 * std::f64::consts::PI);
                vec![arg.sin() * *amplitude + *offset]
            }
        }
    }
}

/// Flow boundary prescription for one side of the domain.
#[derive(Clone, Debug)]
pub enum BoundaryCondition {
    Inflow(BoundaryFunction),
    Outflow,
    IsothermalWall { t_wall: f64 },
    TemporalInflow(BoundaryFunction),
    TemporalOutflow,
}

impl BoundaryCondition {
    /// Outflow conditions are satisfied identically and carry no rows.
    pub fn has_rows(&self) -> bool {
        !matches!(
            self,
            BoundaryCondition::Outflow | BoundaryCondition::TemporalOutflow
        )
    }
}

/// Boundary prescriptions keyed by generated-side label.
#[derive(Clone, Debug, Default)]
pub struct BoundaryData {
    pub per_side: HashMap<Side, BoundaryCondition>,
}

impl BoundaryData {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, side: Side, bc: BoundaryCondition) -> Self {
        self.per_side.insert(side, bc);
        self
    }

    fn lookup(
        &self,
        facet_id: usize,
        side: Option<Side>,
    ) -> Result<&BoundaryCondition, AssemblyError> {
        let side = side.ok_or(AssemblyError::UnlabeledBoundaryFacet { facet: facet_id })?;
        self.per_side
            .get(&side)
            .ok_or(AssemblyError::MissingBoundaryData { side })
    }
}

/// Row/column offsets of the assembled system.
#[derive(Clone, Debug)]
pub struct Layout {
    pub m: usize,
    pub d_x: usize,
    pub dim: usize,
    pub n_y_basis: usize,
    pub n_sigma_basis: usize,
    pub n_wy: usize,
    pub n_wsigma: usize,
    pub n_cells: usize,
    pub n_geo_nodes: usize,
    pub sigma_offset: usize,
    pub u_offset: usize,
    pub n_cols: usize,
    pub constit_offset: usize,
    pub flux_jump_offset: usize,
    pub state_jump_offset: usize,
    pub n_rows: usize,
    /// Facets that carry interface rows (outflow-like facets do not).
    pub active_facets: Vec<usize>,
}

impl Layout {
    pub fn y_cols_per_cell(&self) -> usize {
        self.m * self.n_y_basis
    }
    pub fn sigma_cols_per_cell(&self) -> usize {
        self.m * self.d_x * self.n_sigma_basis
    }
    pub fn cons_rows_per_cell(&self) -> usize {
        self.m * self.n_y_basis
    }
    pub fn constit_rows_per_cell(&self) -> usize {
        self.m * self.d_x * self.n_sigma_basis
    }
    pub fn flux_rows_per_facet(&self) -> usize {
        self.m * self.n_wy
    }
    pub fn state_rows_per_facet(&self) -> usize {
        self.m * self.d_x * self.n_wsigma
    }
}

/// Discrete unknowns: broken modal coefficients for the state and auxiliary
/// variable plus the continuous grid mapping.
#[derive(Clone, Debug)]
pub struct DiscreteState {
    /// Per cell: n_y_basis rows by m columns.
    pub y: Vec<DMatrix<f64>>,
    /// Per cell: n_sigma_basis rows by m*d_x columns (column = comp*d_x+dir).
    pub sigma: Vec<DMatrix<f64>>,
    pub geometry: GeometryField,
}

impl DiscreteState {
    pub fn zeros(disc: &Discretization, mesh: &ReferenceMesh, geometry: GeometryField) -> Self {
        let m = disc.model.m();
        let d_x = disc.model.d_x();
        DiscreteState {
            y: (0..mesh.n_cells())
                .map(|_| DMatrix::zeros(disc.y_space.dim, m))
                .collect(),
            sigma: (0..mesh.n_cells())
                .map(|_| DMatrix::zeros(disc.sigma_space.dim, m * d_x))
                .collect(),
            geometry,
        }
    }

    /// Apply a solution increment: coefficients add directly; geometry nodes
    /// move through the constraint projector and are re-projected onto the
    /// boundary afterwards.
    pub fn apply_increment(
        &mut self,
        layout: &Layout,
        delta: &DVector<f64>,
        constraints: &GeometryConstraints,
    ) {
        let mut k = 0;
        for cell in 0..self.y.len() {
            for v in self.y[cell].iter_mut() {
                *v += delta[k];
                k += 1;
            }
        }
        debug_assert_eq!(k, layout.sigma_offset);
        for cell in 0..self.sigma.len() {
            for v in self.sigma[cell].iter_mut() {
                *v += delta[k];
                k += 1;
            }
        }
        debug_assert_eq!(k, layout.u_offset);
        for node in 0..self.geometry.n_nodes() {
            let p = constraints.projector(node, self.geometry.node_pos[node]);
            let mut dv = [0.0, 0.0];
            for a in 0..layout.dim {
                dv[a] = delta[layout.u_offset + node * layout.dim + a];
            }
            for a in 0..layout.dim {
                for b in 0..layout.dim {
                    self.geometry.node_pos[node][a] += p[(a, b)] * dv[b];
                }
            }
            self.geometry.node_pos[node] = constraints
                .project_point(node, self.geometry.node_pos[node])
                .expect("projection after increment");
        }
    }

    /// Evaluate the discrete state at a unit-cell point.
    pub fn eval_y(&self, disc: &Discretization, cell: usize, unit: &RefPoint) -> Vec<f64> {
        let vals = disc.y_space.eval(unit);
        let m = self.y[cell].ncols();
        (0..m)
            .map(|k| {
                (0..disc.y_space.dim)
                    .map(|i| self.y[cell][(i, k)] * vals[i])
                    .sum()
            })
            .collect()
    }
}

struct FacetTables {
    length: f64,
    weights: Vec<f64>,
    left_y: DMatrix<f64>,
    left_sigma: DMatrix<f64>,
    right_y: Option<DMatrix<f64>>,
    right_sigma: Option<DMatrix<f64>>,
    trace_y: DMatrix<f64>,
    trace_sigma: DMatrix<f64>,
    /// Line-basis values/derivatives for the facet geometry (2D only).
    geo_vals: DMatrix<f64>,
    geo_grads: DMatrix<f64>,
    /// Maps line-basis node index to position within `facet_nodes`.
    geo_slots: Vec<usize>,
}

/// Normalization of the residual test bases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RowWeighting {
    /// Test functions orthonormal on the reference cell or facet.
    #[default]
    Reference,
    /// Test functions orthonormal in the mapped (physical) measure; cell
    /// rows divide by the square root of the mean mapping determinant and
    /// facet rows by the mean surface Jacobian.
    Physical,
}

/// Per-topology tables: spaces, quadrature, and facet pullbacks.
pub struct Discretization {
    pub model: FluxModel,
    pub y_space: PolynomialSpace,
    pub sigma_space: PolynomialSpace,
    pub source: Option<BoundaryFunction>,
    pub row_weighting: RowWeighting,
    vol_rule_weights: Vec<f64>,
    y_tab: BasisTable,
    sigma_tab: BasisTable,
    geo_tab: BasisTable,
    n_geo_local: usize,
    facet_tables: Vec<FacetTables>,
    pub layout: Layout,
}

impl Discretization {
    pub fn new(
        mesh: &ReferenceMesh,
        geometry: &GeometryField,
        model: FluxModel,
        p_y: usize,
        p_sigma: usize,
    ) -> Self {
        let kind = mesh.cell_kind;
        let y_space = PolynomialSpace::new(kind, p_y);
        let sigma_space = PolynomialSpace::new(kind, p_sigma);
        let p_max = p_y.max(p_sigma).max(geometry.degree);
        let vol_rule = quadrature_rule(kind, 2 * p_max + 2);
        let y_tab = y_space.tabulate(&vol_rule);
        let sigma_tab = sigma_space.tabulate(&vol_rule);
        let geo_tab = geometry.basis.tabulate(&vol_rule);

        let m = model.m();
        let d_x = model.d_x();
        let (n_wy, n_wsigma) = match kind {
            CellKind::Line => (1, 1),
            CellKind::Triangle => (p_y + 1, p_sigma + 1),
        };

        // Facet quadrature on the unit parameter.
        let (fq, fw) = match kind {
            CellKind::Line => (vec![0.0], vec![1.0]),
            CellKind::Triangle => {
                let rule = quadrature_rule(CellKind::Line, 2 * p_max + 3);
                (
                    rule.points.iter().map(|p| p[0]).collect::<Vec<_>>(),
                    rule.weights.clone(),
                )
            }
        };

        let line_basis = NodalBasis::new(CellKind::Line, geometry.degree);
        let mut facet_tables = Vec::with_capacity(mesh.facets.len());
        for facet in &mesh.facets {
            let length = mesh.facet_length(facet);
            let nq = fq.len();
            let tab = |space: &PolynomialSpace, cell: usize| -> DMatrix<f64> {
                DMatrix::from_fn(nq, space.dim, |q, i| {
                    let global = mesh.facet_point(facet, fq[q] * length);
                    let unit = mesh.cell_maps[cell].pullback(&global);
                    space.eval(&unit)[i]
                })
            };
            let left_y = tab(&y_space, facet.left);
            let left_sigma = tab(&sigma_space, facet.left);
            let (right_y, right_sigma) = match facet.right {
                Some(r) => (Some(tab(&y_space, r)), Some(tab(&sigma_space, r))),
                None => (None, None),
            };
            let trace_wy = TraceSpace::segment(p_y, length.max(1.0));
            let trace_wsigma = TraceSpace::segment(p_sigma, length.max(1.0));
            let (trace_y, trace_sigma) = match kind {
                CellKind::Line => (
                    DMatrix::from_element(1, 1, 1.0),
                    DMatrix::from_element(1, 1, 1.0),
                ),
                CellKind::Triangle => (
                    DMatrix::from_fn(nq, n_wy, |q, a| trace_wy.eval(fq[q])[a]),
                    DMatrix::from_fn(nq, n_wsigma, |q, a| trace_wsigma.eval(fq[q])[a]),
                ),
            };
            let (geo_vals, geo_grads, geo_slots) = match kind {
                CellKind::Line => (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), vec![0]),
                CellKind::Triangle => {
                    let n = line_basis.dim;
                    let mut vals = DMatrix::zeros(nq, n);
                    let mut grads = DMatrix::zeros(nq, n);
                    for (q, &s) in fq.iter().enumerate() {
                        let (v, g) = line_basis.eval_with_grad(&[s, 0.0]);
                        for i in 0..n {
                            vals[(q, i)] = v[i];
                            grads[(q, i)] = g[i][0];
                        }
                    }
                    let slots = line_basis
                        .nodes
                        .iter()
                        .map(|n| (n[0] * geometry.degree as f64).round() as usize)
                        .collect();
                    (vals, grads, slots)
                }
            };
            facet_tables.push(FacetTables {
                length,
                weights: fw.clone(),
                left_y,
                left_sigma,
                right_y,
                right_sigma,
                trace_y,
                trace_sigma,
                geo_vals,
                geo_grads,
                geo_slots,
            });
        }

        let n_cells = mesh.n_cells();
        let n_geo_nodes = geometry.n_nodes();
        let dim = mesh.dim;
        let n_y = n_cells * m * y_space.dim;
        let n_sigma = n_cells * m * d_x * sigma_space.dim;
        let n_u = n_geo_nodes * dim;

        let cons_rows = n_cells * m * y_space.dim;
        let constit_rows = n_cells * m * d_x * sigma_space.dim;
        let active: Vec<usize> = mesh
            .facets
            .iter()
            .enumerate()
            .filter(|(_, f)| {
                !matches!(
                    f.flow_tag(),
                    Some(BoundaryTag::Outflow) | Some(BoundaryTag::TemporalOutflow)
                )
            })
            .map(|(i, _)| i)
            .collect();
        let n_active = active.len();
        let flux_jump_offset = cons_rows + constit_rows;
        let state_jump_offset = flux_jump_offset + n_active * m * n_wy;
        let layout = Layout {
            m,
            d_x,
            dim,
            n_y_basis: y_space.dim,
            n_sigma_basis: sigma_space.dim,
            n_wy,
            n_wsigma,
            n_cells,
            n_geo_nodes,
            sigma_offset: n_y,
            u_offset: n_y + n_sigma,
            n_cols: n_y + n_sigma + n_u,
            constit_offset: cons_rows,
            flux_jump_offset,
            state_jump_offset,
            n_rows: state_jump_offset + n_active * m * d_x * n_wsigma,
            active_facets: active,
        };

        Discretization {
            model,
            y_space,
            sigma_space,
            source: None,
            row_weighting: RowWeighting::default(),
            vol_rule_weights: vol_rule.weights,
            y_tab,
            sigma_tab,
            geo_tab,
            n_geo_local: geometry.basis.dim,
            facet_tables,
            layout,
        }
    }

    pub fn with_source(mut self, source: BoundaryFunction) -> Self {
        self.source = Some(source);
        self
    }

    pub fn with_row_weighting(mut self, weighting: RowWeighting) -> Self {
        self.row_weighting = weighting;
        self
    }

    /// Conservation and constitutive rows of one cell.
    fn cell_kernel<S: Scalar>(
        &self,
        mesh: &ReferenceMesh,
        cell: usize,
        y_loc: &[S],
        sigma_loc: &[S],
        upos: &[S],
    ) -> Result<(Vec<S>, Vec<S>), AssemblyError> {
        let model = &self.model;
        let (m, d_x, d) = (model.m(), model.d_x(), model.d());
        let dim = mesh.dim;
        let (n_y, n_s) = (self.y_space.dim, self.sigma_space.dim);
        let b_inv = &mesh.cell_maps[cell].inv;
        let scale = mesh.cell_maps[cell].det.abs().sqrt();
        let nq = self.vol_rule_weights.len();

        let mut cons = vec![S::zero(); m * n_y];
        let mut constit = vec![S::zero(); m * d_x * n_s];
        let mut det_mean = S::zero();

        for q in 0..nq {
            // Point values and reference-coordinate gradients.
            let mut y_val = vec![S::zero(); m];
            let mut dy_ref = vec![[S::zero(), S::zero()]; m];
            for k in 0..m {
                let mut v = S::zero();
                let mut du = [S::zero(), S::zero()];
                for i in 0..n_y {
                    let c = &y_loc[k * n_y + i];
                    v = v + c.clone() * self.y_tab.values[(q, i)];
                    for b in 0..dim {
                        du[b] = du[b].clone() + c.clone() * self.y_tab.grads[b][(q, i)];
                    }
                }
                for b in 0..dim {
                    let mut g = S::zero();
                    for cc in 0..dim {
                        g = g + du[cc].clone() * b_inv[(cc, b)];
                    }
                    dy_ref[k][b] = g;
                }
                y_val[k] = v;
            }
            let yv: Vec<f64> = y_val.iter().map(|s| s.value()).collect();
            model
                .check_admissible(&yv)
                .map_err(|source| AssemblyError::InadmissibleState { cell, source })?;

            let mut s_val = SMat::<S>::zeros(m, d_x);
            let mut ds_ref = vec![[S::zero(), S::zero()]; m * d_x];
            for k in 0..m {
                for ix in 0..d_x {
                    let col = k * d_x + ix;
                    let mut v = S::zero();
                    let mut du = [S::zero(), S::zero()];
                    for i in 0..n_s {
                        let c = &sigma_loc[col * n_s + i];
                        v = v + c.clone() * self.sigma_tab.values[(q, i)];
                        for b in 0..dim {
                            du[b] = du[b].clone() + c.clone() * self.sigma_tab.grads[b][(q, i)];
                        }
                    }
                    for b in 0..dim {
                        let mut g = S::zero();
                        for cc in 0..dim {
                            g = g + du[cc].clone() * b_inv[(cc, b)];
                        }
                        ds_ref[col][b] = g;
                    }
                    s_val.set(k, ix, v);
                }
            }

            // Mapping Jacobian in reference coordinates, padded for 1D.
            let mut jac_ref = [[S::one(), S::zero()], [S::zero(), S::one()]];
            for a in 0..dim {
                let mut j_unit = [S::zero(), S::zero()];
                for (b, ju) in j_unit.iter_mut().enumerate().take(dim) {
                    let mut v = S::zero();
                    for n in 0..self.n_geo_local {
                        v = v + upos[n * dim + a].clone() * self.geo_tab.grads[b][(q, n)];
                    }
                    *ju = v;
                }
                for b in 0..dim {
                    let mut v = S::zero();
                    for cc in 0..dim {
                        v = v + j_unit[cc].clone() * b_inv[(cc, b)];
                    }
                    jac_ref[a][b] = v;
                }
            }
            let det =
                jac_ref[0][0].clone() * &jac_ref[1][1] - jac_ref[0][1].clone() * &jac_ref[1][0];
            if det.value() <= 0.0 {
                return Err(AssemblyError::InvalidGeometry {
                    cell,
                    det: det.value(),
                });
            }
            let cof = [
                [jac_ref[1][1].clone(), -jac_ref[1][0].clone()],
                [-jac_ref[0][1].clone(), jac_ref[0][0].clone()],
            ];
            det_mean = det_mean + det.clone() * (self.vol_rule_weights[q] / mesh.cell_kind.measure());

            let w = self.vol_rule_weights[q] * scale;

            // Conservation density via directional flux derivatives.
            let mut dens = vec![S::zero(); m];
            for i in 0..dim {
                let y_t: Vec<Tangent<S>> = (0..m)
                    .map(|k| Tangent::new(y_val[k].clone(), dy_ref[k][i].clone()))
                    .collect();
                let s_t = SMat::from_fn(m, d_x, |k, ix| {
                    Tangent::new(s_val.at(k, ix).clone(), ds_ref[k * d_x + ix][i].clone())
                });
                let flux_t = model.total_flux(&y_t, &s_t);
                for k in 0..m {
                    for j in 0..d {
                        dens[k] = dens[k].clone() + cof[j][i].clone() * &flux_t.at(k, j).t;
                    }
                }
            }
            if let Some(src) = &self.source {
                let mut x = [S::zero(), S::zero()];
                for (a, xa) in x.iter_mut().enumerate().take(dim) {
                    let mut v = S::zero();
                    for n in 0..self.n_geo_local {
                        v = v + upos[n * dim + a].clone() * self.geo_tab.values[(q, n)];
                    }
                    *xa = v;
                }
                let f = src.eval(&x);
                for k in 0..m {
                    dens[k] = dens[k].clone() - det.clone() * &f[k];
                }
            }
            for k in 0..m {
                for a in 0..n_y {
                    let phi = self.y_tab.values[(q, a)] * w;
                    cons[k * n_y + a] = cons[k * n_y + a].clone() + dens[k].clone() * phi;
                }
            }

            // Constitutive density: det sigma - G(y) (cof grad)_x y.
            let grad_x = SMat::from_fn(m, d_x, |l, jx| {
                let mut v = S::zero();
                for i in 0..dim {
                    v = v + cof[jx][i].clone() * &dy_ref[l][i];
                }
                v
            });
            let g_applied = model.constitutive_apply(&y_val, &grad_x);
            for l in 0..m {
                for ix in 0..d_x {
                    let dens_c = det.clone() * s_val.at(l, ix) - g_applied.at(l, ix);
                    for a in 0..n_s {
                        let phi = self.sigma_tab.values[(q, a)] * w;
                        let idx = (l * d_x + ix) * n_s + a;
                        constit[idx] = constit[idx].clone() + dens_c.clone() * phi;
                    }
                }
            }
        }
        if self.row_weighting == RowWeighting::Physical {
            let inv_sqrt = S::one() / det_mean.sqrt();
            for v in cons.iter_mut() {
                *v = v.clone() * &inv_sqrt;
            }
            for v in constit.iter_mut() {
                *v = v.clone() * &inv_sqrt;
            }
        }
        Ok((cons, constit))
    }

    /// Flux-jump and state-jump rows of one facet.
    #[allow(clippy::too_many_arguments)]
    fn facet_kernel<S: Scalar>(
        &self,
        mesh: &ReferenceMesh,
        facet_id: usize,
        y_l: &[S],
        sigma_l: &[S],
        y_r: &[S],
        sigma_r: &[S],
        upos: &[S],
        bdata: &BoundaryData,
    ) -> Result<(Vec<S>, Vec<S>), AssemblyError> {
        let model = &self.model;
        let (m, d_x, d) = (model.m(), model.d_x(), model.d());
        let dim = mesh.dim;
        let facet = &mesh.facets[facet_id];
        let tabs = &self.facet_tables[facet_id];
        let (n_y, n_s) = (self.y_space.dim, self.sigma_space.dim);
        let (n_wy, n_ws) = (self.layout.n_wy, self.layout.n_wsigma);
        let nq = tabs.weights.len();
        let scale = if dim == 1 { 1.0 } else { tabs.length.sqrt() };

        let mut flux_rows = vec![S::zero(); m * n_wy];
        let mut state_rows = vec![S::zero(); m * d_x * n_ws];
        let mut surf_mean = S::zero();

        for q in 0..nq {
            let trace = |coeff: &[S], table: &DMatrix<f64>, n: usize, k: usize| -> S {
                let mut v = S::zero();
                for i in 0..n {
                    v = v + coeff[k * n + i].clone() * table[(q, i)];
                }
                v
            };
            let y_plus: Vec<S> = (0..m).map(|k| trace(y_l, &tabs.left_y, n_y, k)).collect();
            let sigma_plus = SMat::from_fn(m, d_x, |k, ix| {
                trace(sigma_l, &tabs.left_sigma, n_s, k * d_x + ix)
            });
            let yv: Vec<f64> = y_plus.iter().map(|s| s.value()).collect();
            model
                .check_admissible(&yv)
                .map_err(|source| AssemblyError::InadmissibleState {
                    cell: facet.left,
                    source,
                })?;

            // Scaled normal and physical point from the facet geometry.
            let (s_vec, x_phys): ([S; 2], [S; 2]) = if dim == 1 {
                let pos0 = upos[0].clone();
                (
                    [S::constant(facet.normal_sign), S::zero()],
                    [pos0, S::zero()],
                )
            } else {
                let mut tangent = [S::zero(), S::zero()];
                let mut x = [S::zero(), S::zero()];
                for (k, &slot) in tabs.geo_slots.iter().enumerate() {
                    for a in 0..2 {
                        let p = upos[slot * 2 + a].clone();
                        tangent[a] = tangent[a].clone()
                            + p.clone() * (tabs.geo_grads[(q, k)] / tabs.length);
                        x[a] = x[a].clone() + p * tabs.geo_vals[(q, k)];
                    }
                }
                ([-tangent[1].clone(), tangent[0].clone()], x)
            };
            if dim > 1 {
                let s_mag = (s_vec[0].clone() * &s_vec[0] + s_vec[1].clone() * &s_vec[1]).sqrt();
                surf_mean = surf_mean + s_mag * tabs.weights[q];
            }

            let flux_plus = model.total_flux(&y_plus, &sigma_plus);

            // jump of s . F and the state-jump matrix, by facet type.
            let mut flux_jump = vec![S::zero(); m];
            let state_jump: SMat<S>;

            if facet.right.is_some() {
                let y_minus: Vec<S> = (0..m)
                    .map(|k| trace(y_r, tabs.right_y.as_ref().unwrap(), n_y, k))
                    .collect();
                let sigma_minus = SMat::from_fn(m, d_x, |k, ix| {
                    trace(sigma_r, tabs.right_sigma.as_ref().unwrap(), n_s, k * d_x + ix)
                });
                let yv: Vec<f64> = y_minus.iter().map(|s| s.value()).collect();
                model
                    .check_admissible(&yv)
                    .map_err(|source| AssemblyError::InadmissibleState {
                        cell: facet.right.unwrap(),
                        source,
                    })?;
                let flux_minus = model.total_flux(&y_minus, &sigma_minus);
                for (k, fj) in flux_jump.iter_mut().enumerate() {
                    let mut v = S::zero();
                    for j in 0..d {
                        v = v
                            + s_vec[j].clone() * (flux_plus.at(k, j).clone() - flux_minus.at(k, j));
                    }
                    *fj = v;
                }
                // {{G}} [[y (x) s_x]] with [[y (x) s_x]] = (y+ - y-) (x) s_x.
                let jump_mat =
                    SMat::from_fn(m, d_x, |l, ix| (y_plus[l].clone() - &y_minus[l]) * &s_vec[ix]);
                let g_plus = model.constitutive_apply(&y_plus, &jump_mat);
                let g_minus = model.constitutive_apply(&y_minus, &jump_mat);
                state_jump = SMat::from_fn(m, d_x, |l, ix| {
                    (g_plus.at(l, ix).clone() + g_minus.at(l, ix)) * 0.5
                });
            } else {
                let bc = bdata.lookup(facet_id, facet.side)?;
                let y_bnd: Vec<S> = match bc {
                    BoundaryCondition::Outflow | BoundaryCondition::TemporalOutflow => {
                        unreachable!("outflow facets carry no rows")
                    }
                    BoundaryCondition::Inflow(f) | BoundaryCondition::TemporalInflow(f) => {
                        let y_in = f.eval(&x_phys);
                        assert_eq!(y_in.len(), m, "boundary data has wrong arity");
                        y_in
                    }
                    BoundaryCondition::IsothermalWall { t_wall } => {
                        let gas = match &model.equations {
                            crate::physics::Equations::NavierStokes { gas, .. } => gas,
                            _ => panic!("wall boundary needs the compressible model"),
                        };
                        let e_wall = gas.internal_energy(*t_wall);
                        let mut y_wall = vec![S::zero(); m];
                        y_wall[0] = y_plus[0].clone();
                        y_wall[m - 1] = y_plus[0].clone() * e_wall;
                        y_wall
                    }
                };
                // Prescribed convective flux, interior viscous flux: the
                // viscous parts cancel in the jump, leaving the convective
                // mismatch plus the temporal mismatch in space-time.
                let conv_bnd = model.convective(&y_bnd);
                let conv_plus = model.convective(&y_plus);
                for (k, fj) in flux_jump.iter_mut().enumerate() {
                    let mut v = S::zero();
                    for j in 0..d_x {
                        v = v + s_vec[j].clone() * (conv_plus.at(k, j).clone() - conv_bnd.at(k, j));
                    }
                    if model.spacetime {
                        v = v + s_vec[d - 1].clone() * (y_plus[k].clone() - &y_bnd[k]);
                    }
                    *fj = v;
                }
                let jump_mat =
                    SMat::from_fn(m, d_x, |l, ix| (y_plus[l].clone() - &y_bnd[l]) * &s_vec[ix]);
                state_jump = model.constitutive_apply(&y_bnd, &jump_mat);
            }

            for k in 0..m {
                for a in 0..n_wy {
                    let wgt = tabs.weights[q] * scale * tabs.trace_y[(q, a)];
                    flux_rows[k * n_wy + a] =
                        flux_rows[k * n_wy + a].clone() + flux_jump[k].clone() * wgt;
                }
            }
            for l in 0..m {
                for ix in 0..d_x {
                    for a in 0..n_ws {
                        let wgt = tabs.weights[q] * scale * tabs.trace_sigma[(q, a)];
                        let idx = (l * d_x + ix) * n_ws + a;
                        state_rows[idx] =
                            state_rows[idx].clone() + state_jump.at(l, ix).clone() * wgt;
                    }
                }
            }
        }
        if self.row_weighting == RowWeighting::Physical && dim > 1 {
            let inv_sqrt = S::one() / surf_mean.sqrt();
            for v in flux_rows.iter_mut() {
                *v = v.clone() * &inv_sqrt;
            }
            for v in state_rows.iter_mut() {
                *v = v.clone() * &inv_sqrt;
            }
        }
        Ok((flux_rows, state_rows))
    }

    fn cell_locals_f64(
        &self,
        state: &DiscreteState,
        mesh: &ReferenceMesh,
        cell: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let dim = mesh.dim;
        let y: Vec<f64> = state.y[cell].as_slice().to_vec();
        let sigma: Vec<f64> = state.sigma[cell].as_slice().to_vec();
        let mut upos = Vec::with_capacity(self.n_geo_local * dim);
        for &node in &state.geometry.cell_nodes[cell] {
            for a in 0..dim {
                upos.push(state.geometry.node_pos[node][a]);
            }
        }
        (y, sigma, upos)
    }

    fn facet_upos_f64(&self, state: &DiscreteState, mesh: &ReferenceMesh, fid: usize) -> Vec<f64> {
        let ucomp = if mesh.dim == 1 { 1 } else { 2 };
        let mut upos = Vec::new();
        for &node in &state.geometry.facet_nodes[fid] {
            for a in 0..ucomp {
                upos.push(state.geometry.node_pos[node][a]);
            }
        }
        upos
    }

    /// Residual only (used for trial steps and finite-difference checks).
    pub fn assemble_residual(
        &self,
        mesh: &ReferenceMesh,
        state: &DiscreteState,
        bdata: &BoundaryData,
    ) -> Result<DVector<f64>, AssemblyError> {
        let layout = &self.layout;
        let mut r = DVector::zeros(layout.n_rows);
        for cell in 0..mesh.n_cells() {
            let (y, sigma, upos) = self.cell_locals_f64(state, mesh, cell);
            let (cons, constit) = self.cell_kernel(mesh, cell, &y, &sigma, &upos)?;
            let c0 = cell * layout.cons_rows_per_cell();
            for (i, v) in cons.iter().enumerate() {
                r[c0 + i] = *v;
            }
            let c1 = layout.constit_offset + cell * layout.constit_rows_per_cell();
            for (i, v) in constit.iter().enumerate() {
                r[c1 + i] = *v;
            }
        }
        for (slot, &fid) in layout.active_facets.iter().enumerate() {
            let facet = &mesh.facets[fid];
            let (y_l, sigma_l, _) = self.cell_locals_f64(state, mesh, facet.left);
            let (y_r, sigma_r) = match facet.right {
                Some(rc) => {
                    let (a, b, _) = self.cell_locals_f64(state, mesh, rc);
                    (a, b)
                }
                None => (Vec::new(), Vec::new()),
            };
            let upos = self.facet_upos_f64(state, mesh, fid);
            let (fl, st) =
                self.facet_kernel(mesh, fid, &y_l, &sigma_l, &y_r, &sigma_r, &upos, bdata)?;
            let f0 = layout.flux_jump_offset + slot * layout.flux_rows_per_facet();
            for (i, v) in fl.iter().enumerate() {
                r[f0 + i] = *v;
            }
            let s0 = layout.state_jump_offset + slot * layout.state_rows_per_facet();
            for (i, v) in st.iter().enumerate() {
                r[s0 + i] = *v;
            }
        }
        Ok(r)
    }

    /// Residual and sparse Jacobian, with the boundary-projection chain rule
    /// applied to the geometry columns.
    pub fn assemble(
        &self,
        mesh: &ReferenceMesh,
        state: &DiscreteState,
        bdata: &BoundaryData,
        constraints: &GeometryConstraints,
    ) -> Result<ResidualSystem, AssemblyError> {
        let layout = &self.layout;
        let dim = mesh.dim;
        let mut coo = CooMatrix::new(layout.n_rows, layout.n_cols);
        let mut r = DVector::zeros(layout.n_rows);

        // Per-node projector entries for the b'(u) chain.
        let projectors: Vec<nalgebra::Matrix2<f64>> = (0..state.geometry.n_nodes())
            .map(|n| constraints.projector(n, state.geometry.node_pos[n]))
            .collect();

        let scatter_geo = |coo: &mut CooMatrix<f64>, row: usize, node: usize, draw: &[f64]| {
            // draw[b] = d r / d pos_b; chain through the projector.
            let p = &projectors[node];
            for a in 0..dim {
                let mut v = 0.0;
                for (b, db) in draw.iter().enumerate().take(dim) {
                    v += db * p[(b, a)];
                }
                if v != 0.0 {
                    coo.push(row, layout.u_offset + node * dim + a, v);
                }
            }
        };

        for cell in 0..mesh.n_cells() {
            let (yv, sv, uv) = self.cell_locals_f64(state, mesh, cell);
            let (n_yl, n_sl) = (yv.len(), sv.len());
            let n_loc = n_yl + n_sl + uv.len();
            let seed = |vals: &[f64], off: usize| -> Vec<Jet> {
                vals.iter()
                    .enumerate()
                    .map(|(i, &v)| Jet::variable(v, off + i, n_loc))
                    .collect()
            };
            let y_j = seed(&yv, 0);
            let s_j = seed(&sv, n_yl);
            let u_j = seed(&uv, n_yl + n_sl);
            let (cons, constit) = self.cell_kernel(mesh, cell, &y_j, &s_j, &u_j)?;

            let scatter_cell =
                |coo: &mut CooMatrix<f64>, r: &mut DVector<f64>, row0: usize, rows: &[Jet]| {
                    for (i, jet) in rows.iter().enumerate() {
                        let row = row0 + i;
                        r[row] = jet.v;
                        for k in 0..n_yl {
                            let v = jet.deriv(k);
                            if v != 0.0 {
                                coo.push(row, cell * layout.y_cols_per_cell() + k, v);
                            }
                        }
                        for k in 0..n_sl {
                            let v = jet.deriv(n_yl + k);
                            if v != 0.0 {
                                coo.push(
                                    row,
                                    layout.sigma_offset + cell * layout.sigma_cols_per_cell() + k,
                                    v,
                                );
                            }
                        }
                        for (slot, &node) in state.geometry.cell_nodes[cell].iter().enumerate() {
                            let mut draw = [0.0, 0.0];
                            for (b, db) in draw.iter_mut().enumerate().take(dim) {
                                *db = jet.deriv(n_yl + n_sl + slot * dim + b);
                            }
                            scatter_geo(coo, row, node, &draw[..dim]);
                        }
                    }
                };
            scatter_cell(&mut coo, &mut r, cell * layout.cons_rows_per_cell(), &cons);
            scatter_cell(
                &mut coo,
                &mut r,
                layout.constit_offset + cell * layout.constit_rows_per_cell(),
                &constit,
            );
        }

        for (slot, &fid) in layout.active_facets.iter().enumerate() {
            let facet = &mesh.facets[fid];
            let (ylv, slv, _) = self.cell_locals_f64(state, mesh, facet.left);
            let (yrv, srv) = match facet.right {
                Some(rc) => {
                    let (a, b, _) = self.cell_locals_f64(state, mesh, rc);
                    (a, b)
                }
                None => (Vec::new(), Vec::new()),
            };
            let uv = self.facet_upos_f64(state, mesh, fid);
            let ucomp = if dim == 1 { 1 } else { 2 };
            let f_nodes = &state.geometry.facet_nodes[fid];
            let (n_yl, n_sl, n_yr, n_sr) = (ylv.len(), slv.len(), yrv.len(), srv.len());
            let n_loc = n_yl + n_sl + n_yr + n_sr + uv.len();
            let seed = |vals: &[f64], off: usize| -> Vec<Jet> {
                vals.iter()
                    .enumerate()
                    .map(|(i, &v)| Jet::variable(v, off + i, n_loc))
                    .collect()
            };
            let y_l = seed(&ylv, 0);
            let s_l = seed(&slv, n_yl);
            let y_r = seed(&yrv, n_yl + n_sl);
            let s_r = seed(&srv, n_yl + n_sl + n_yr);
            let u_j = seed(&uv, n_yl + n_sl + n_yr + n_sr);

            let (fl, st) = self.facet_kernel(mesh, fid, &y_l, &s_l, &y_r, &s_r, &u_j, bdata)?;

            let scatter_facet =
                |coo: &mut CooMatrix<f64>, r: &mut DVector<f64>, row0: usize, rows: &[Jet]| {
                    for (i, jet) in rows.iter().enumerate() {
                        let row = row0 + i;
                        r[row] = jet.v;
                        for k in 0..n_yl {
                            let v = jet.deriv(k);
                            if v != 0.0 {
                                coo.push(row, facet.left * layout.y_cols_per_cell() + k, v);
                            }
                        }
                        for k in 0..n_sl {
                            let v = jet.deriv(n_yl + k);
                            if v != 0.0 {
                                coo.push(
                                    row,
                                    layout.sigma_offset
                                        + facet.left * layout.sigma_cols_per_cell()
                                        + k,
                                    v,
                                );
                            }
                        }
                        if let Some(rc) = facet.right {
                            for k in 0..n_yr {
                                let v = jet.deriv(n_yl + n_sl + k);
                                if v != 0.0 {
                                    coo.push(row, rc * layout.y_cols_per_cell() + k, v);
                                }
                            }
                            for k in 0..n_sr {
                                let v = jet.deriv(n_yl + n_sl + n_yr + k);
                                if v != 0.0 {
                                    coo.push(
                                        row,
                                        layout.sigma_offset + rc * layout.sigma_cols_per_cell() + k,
                                        v,
                                    );
                                }
                            }
                        }
                        for (fslot, &node) in f_nodes.iter().enumerate() {
                            let mut draw = [0.0, 0.0];
                            for (b, db) in draw.iter_mut().enumerate().take(ucomp.min(dim)) {
                                *db = jet.deriv(n_yl + n_sl + n_yr + n_sr + fslot * ucomp + b);
                            }
                            scatter_geo(coo, row, node, &draw[..dim]);
                        }
                    }
                };
            scatter_facet(
                &mut coo,
                &mut r,
                layout.flux_jump_offset + slot * layout.flux_rows_per_facet(),
                &fl,
            );
            scatter_facet(
                &mut coo,
                &mut r,
                layout.state_jump_offset + slot * layout.state_rows_per_facet(),
                &st,
            );
        }

        Ok(ResidualSystem {
            residual: r,
            jacobian: CscMatrix::from(&coo),
            layout: self.layout.clone(),
        })
    }
}

/// Assembled residual vector and sparse Jacobian.
pub struct ResidualSystem {
    pub residual: DVector<f64>,
    pub jacobian: CscMatrix<f64>,
    pub layout: Layout,
}

impl ResidualSystem {
    pub fn n_rows(&self) -> usize {
        self.jacobian.nrows()
    }
    pub fn n_cols(&self) -> usize {
        self.jacobian.ncols()
    }

    /// Gradient of the least-squares objective: J^T r.
    pub fn gradient(&self) -> DVector<f64> {
        let jt = self.jacobian.transpose();
        let mut g = DVector::zeros(self.n_cols());
        sparse_mul_vec(&jt, &self.residual, &mut g);
        g
    }
}

/// y = A x for CSC A.
pub fn sparse_mul_vec(a: &CscMatrix<f64>, x: &DVector<f64>, y: &mut DVector<f64>) {
    y.fill(0.0);
    for (col, col_vec) in a.col_iter().enumerate() {
        let xc = x[col];
        if xc == 0.0 {
            continue;
        }
        for (row, v) in col_vec.row_indices().iter().zip(col_vec.values()) {
            y[*row] += v * xc;
        }
    }
}

/// Project the pointwise-consistent auxiliary variable sigma = G(y) grad_x y
/// onto the sigma space, cell by cell.
pub fn consistent_sigma(
    disc: &Discretization,
    mesh: &ReferenceMesh,
    state: &DiscreteState,
) -> Vec<DMatrix<f64>> {
    let model = &disc.model;
    let (m, d_x) = (model.m(), model.d_x());
    let rule = quadrature_rule(
        mesh.cell_kind,
        2 * disc.sigma_space.degree.max(disc.y_space.degree) + 4,
    );
    let s_tab = disc.sigma_space.tabulate(&rule);
    let y_tab = disc.y_space.tabulate(&rule);
    let mut out = Vec::with_capacity(mesh.n_cells());
    for cell in 0..mesh.n_cells() {
        let n = disc.sigma_space.dim;
        let mut mass = DMatrix::zeros(n, n);
        let mut rhs = DMatrix::zeros(n, m * d_x);
        let b_inv = &mesh.cell_maps[cell].inv;
        for (q, pt) in rule.points.iter().enumerate() {
            let geo = state.geometry.eval(mesh, cell, pt);
            let w = rule.weights[q] * geo.det;
            let mut y_val = vec![0.0; m];
            let mut grad_ref = vec![[0.0, 0.0]; m];
            for k in 0..m {
                for i in 0..disc.y_space.dim {
                    let c = state.y[cell][(i, k)];
                    y_val[k] += c * y_tab.values[(q, i)];
                    for b in 0..mesh.dim {
                        let mut g = 0.0;
                        for cc in 0..mesh.dim {
                            g += y_tab.grads[cc][(q, i)] * b_inv[(cc, b)];
                        }
                        grad_ref[k][b] += c * g;
                    }
                }
            }
            // Physical spatial gradient: (cof grad)_x y / det.
            let grad_x = SMat::from_fn(m, d_x, |l, jx| {
                let mut v = 0.0;
                for i in 0..mesh.dim {
                    v += geo.cof[(jx, i)] * grad_ref[l][i];
                }
                v / geo.det
            });
            let sig = model.constitutive_apply(&y_val, &grad_x);
            for i in 0..n {
                let vi = s_tab.values[(q, i)];
                for j in 0..n {
                    mass[(i, j)] += w * vi * s_tab.values[(q, j)];
                }
                for l in 0..m {
                    for ix in 0..d_x {
                        rhs[(i, l * d_x + ix)] += w * vi * sig.at(l, ix);
                    }
                }
            }
        }
        out.push(mass.lu().solve(&rhs).expect("sigma projection mass solve"));
    }
    out
}

/// Largest mixed absolute/relative mismatch between the assembled Jacobian
/// and central finite differences of the residual.
pub fn check_jacobian(
    disc: &Discretization,
    mesh: &ReferenceMesh,
    state: &DiscreteState,
    bdata: &BoundaryData,
    constraints: &GeometryConstraints,
    step: f64,
) -> f64 {
    let system = disc.assemble(mesh, state, bdata, constraints).unwrap();
    let layout = &system.layout;
    let dense = DMatrix::from(&system.jacobian);
    let mut worst: f64 = 0.0;
    for col in 0..layout.n_cols {
        let perturb = |sign: f64| -> DVector<f64> {
            let mut s = state.clone();
            if col < layout.sigma_offset {
                let per_cell = layout.y_cols_per_cell();
                let (cell, k) = (col / per_cell, col % per_cell);
                s.y[cell].as_mut_slice()[k] += sign * step;
            } else if col < layout.u_offset {
                let c = col - layout.sigma_offset;
                let per_cell = layout.sigma_cols_per_cell();
                let (cell, k) = (c / per_cell, c % per_cell);
                s.sigma[cell].as_mut_slice()[k] += sign * step;
            } else {
                let c = col - layout.u_offset;
                let (node, a) = (c / layout.dim, c % layout.dim);
                s.geometry.node_pos[node][a] += sign * step;
                s.geometry.node_pos[node] = constraints
                    .project_point(node, s.geometry.node_pos[node])
                    .unwrap();
            }
            disc.assemble_residual(mesh, &s, bdata).unwrap()
        };
        let rp = perturb(1.0);
        let rm = perturb(-1.0);
        for row in 0..layout.n_rows {
            let fd = (rp[row] - rm[row]) / (2.0 * step);
            let an = dense[(row, col)];
            let denom = an.abs().max(fd.abs()).max(1.0);
            worst = worst.max((an - fd).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry_bc::GeometryConstraints;
    use crate::mesh::{build_line_mesh, build_triangulated_grid};
    use crate::physics::GasModel;
    use rand::prelude::*;

    fn tag_all(mesh: &mut ReferenceMesh, bc: fn(Side) -> BoundaryTag) {
        mesh.tag_boundary(|side| vec![bc(side), BoundaryTag::Fixed]);
    }

    fn line_setup(
        n_cells: usize,
        model: FluxModel,
        p_y: usize,
        p_sigma: usize,
        p_u: usize,
    ) -> (ReferenceMesh, Discretization, DiscreteState, BoundaryData) {
        let (mut mesh, geometry) = build_line_mesh(n_cells, 0.0, 1.0, p_u).unwrap();
        tag_all(&mut mesh, |_| BoundaryTag::Inflow);
        let disc = Discretization::new(&mesh, &geometry, model, p_y, p_sigma);
        let state = DiscreteState::zeros(&disc, &mesh, geometry);
        let bdata = BoundaryData::new()
            .set(
                Side::XMin,
                BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![0.0])),
            )
            .set(
                Side::XMax,
                BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![0.0])),
            );
        (mesh, disc, state, bdata)
    }

    fn set_uniform_state(state: &mut DiscreteState, disc: &Discretization, value: &[f64]) {
        // Constant field: only the constant modal coefficient is nonzero.
        let c0 = disc.y_space.eval(&[0.3, 0.3])[0];
        for y in &mut state.y {
            y.fill(0.0);
            for (k, v) in value.iter().enumerate() {
                y[(0, k)] = v / c0;
            }
        }
        for s in &mut state.sigma {
            s.fill(0.0);
        }
    }

    #[test]
    fn row_and_column_counts_match_the_block_formula() {
        let model = FluxModel::burgers(1e-2, false);
        let (mesh, disc, _, _) = line_setup(2, model, 2, 1, 1);
        let l = &disc.layout;
        // 2 cells, m=1: conservation 2*3, constitutive 2*2, 3 facets (all
        // active: two inflow plus one interior), each 1 flux + 1 state row.
        assert_eq!(l.n_rows, 6 + 4 + 3 + 3);
        assert_eq!(l.n_cols, 6 + 4 + 3 * mesh.dim);
        assert!(l.n_rows > l.n_cols, "system must be overdetermined");
    }

    #[test]
    fn uniform_state_on_affine_grid_has_zero_residual() {
        let model = FluxModel::burgers(1e-3, false);
        let (mesh, disc, mut state, _) = line_setup(4, model, 2, 2, 2);
        set_uniform_state(&mut state, &disc, &[0.7]);
        let bdata = BoundaryData::new()
            .set(
                Side::XMin,
                BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![0.7])),
            )
            .set(
                Side::XMax,
                BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![0.7])),
            );
        let r = disc.assemble_residual(&mesh, &state, &bdata).unwrap();
        assert!(r.norm() < 1e-13, "residual {}", r.norm());
    }

    #[test]
    fn uniform_compressible_flow_is_residual_free_in_two_dimensions() {
        let gas = GasModel::air(1e-3);
        let model = FluxModel::navier_stokes(gas, 2, false);
        let (mut mesh, geometry) =
            build_triangulated_grid(2, 2, [0.0, 0.0, 1.0, 1.0], 1, false).unwrap();
        tag_all(&mut mesh, |_| BoundaryTag::Inflow);
        let disc = Discretization::new(&mesh, &geometry, model, 1, 1);
        let mut state = DiscreteState::zeros(&disc, &mesh, geometry);
        let y_inf = vec![1.0, 0.3, -0.2, 2.5];
        set_uniform_state(&mut state, &disc, &y_inf);
        let mut bdata = BoundaryData::new();
        for side in [Side::XMin, Side::XMax, Side::YMin, Side::YMax] {
            bdata = bdata.set(
                side,
                BoundaryCondition::Inflow(BoundaryFunction::Constant(y_inf.clone())),
            );
        }
        let r = disc.assemble_residual(&mesh, &state, &bdata).unwrap();
        assert!(r.norm() < 1e-12, "residual {}", r.norm());
    }

    #[test]
    fn outflow_facets_carry_no_rows() {
        let model = FluxModel::burgers(1e-2, false);
        let (mut mesh, geometry) = build_line_mesh(2, 0.0, 1.0, 1).unwrap();
        mesh.tag_boundary(|side| {
            vec![
                match side {
                    Side::XMin => BoundaryTag::Inflow,
                    _ => BoundaryTag::Outflow,
                },
                BoundaryTag::Fixed,
            ]
        });
        let disc = Discretization::new(&mesh, &geometry, model, 1, 1);
        // 3 facets, one of them outflow: 2 active facets.
        assert_eq!(disc.layout.active_facets.len(), 2);
    }

    #[test]
    fn interface_rows_vanish_for_continuous_fields() {
        let model = FluxModel::burgers(1e-2, false);
        let (mesh, disc, mut state, bdata) = line_setup(2, model, 2, 2, 1);
        // A globally smooth polynomial: y(x) = 1 + x over both cells.
        state.y = crate::basis::l2_project(
            |x| vec![1.0 + x[0]],
            &mesh,
            &state.geometry,
            &disc.y_space,
            1,
        )
        .unwrap();
        state.sigma = consistent_sigma(&disc, &mesh, &state);
        let r = disc.assemble_residual(&mesh, &state, &bdata).unwrap();
        let l = &disc.layout;
        for (slot, &fid) in l.active_facets.iter().enumerate() {
            if mesh.facets[fid].right.is_none() {
                continue;
            }
            let f0 = l.flux_jump_offset + slot * l.flux_rows_per_facet();
            for i in 0..l.flux_rows_per_facet() {
                assert!(r[f0 + i].abs() < 1e-12, "flux jump {i}: {}", r[f0 + i]);
            }
            let s0 = l.state_jump_offset + slot * l.state_rows_per_facet();
            for i in 0..l.state_rows_per_facet() {
                assert!(r[s0 + i].abs() < 1e-12, "state jump {i}");
            }
        }
    }

    #[test]
    fn matched_inflow_data_gives_zero_boundary_rows() {
        let model = FluxModel::advection_diffusion(vec![1.0], 1e-2, false);
        let (mesh, disc, mut state, _) = line_setup(2, model, 1, 1, 1);
        set_uniform_state(&mut state, &disc, &[0.4]);
        let bdata = BoundaryData::new()
            .set(
                Side::XMin,
                BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![0.4])),
            )
            .set(
                Side::XMax,
                BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![0.4])),
            );
        let r = disc.assemble_residual(&mesh, &state, &bdata).unwrap();
        assert!(r.norm() < 1e-14);
    }

    #[test]
    fn temporal_inflow_matches_sine_profile_when_traced() {
        // Space-time strip; initial data enters through the bottom facets.
        let (mut mesh, geometry) =
            build_triangulated_grid(4, 1, [0.0, 0.0, 1.0, 0.25], 1, true).unwrap();
        tag_all(&mut mesh, |side| match side {
            Side::YMin => BoundaryTag::TemporalInflow,
            Side::YMax => BoundaryTag::TemporalOutflow,
            Side::XMin => BoundaryTag::Inflow,
            Side::XMax => BoundaryTag::Outflow,
        });
        let model = FluxModel::burgers(0.0, true);
        let disc = Discretization::new(&mesh, &geometry, model, 3, 3);
        let mut state = DiscreteState::zeros(&disc, &mesh, geometry);
        let ic = BoundaryFunction::SineProfile {
            amplitude: std::f64::consts::FRAC_1_PI,
            offset: 0.2,
        };
        let bdata = BoundaryData::new()
            .set(Side::YMin, BoundaryCondition::TemporalInflow(ic.clone()))
            .set(Side::YMax, BoundaryCondition::TemporalOutflow)
            .set(
                Side::XMin,
                BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![0.2])),
            )
            .set(Side::XMax, BoundaryCondition::Outflow);

        // State extruded from the initial profile: y(x, t) = ic(x).
        state.y = crate::basis::l2_project(
            |x| ic.eval(&[x[0], 0.0]),
            &mesh,
            &state.geometry,
            &disc.y_space,
            1,
        )
        .unwrap();
        let r = disc.assemble_residual(&mesh, &state, &bdata).unwrap();
        let l = &disc.layout;
        let bottom_max = |r: &DVector<f64>| -> f64 {
            let mut worst = 0.0f64;
            for (slot, &fid) in l.active_facets.iter().enumerate() {
                if mesh.facets[fid].side == Some(Side::YMin) {
                    let f0 = l.flux_jump_offset + slot * l.flux_rows_per_facet();
                    for i in 0..l.flux_rows_per_facet() {
                        worst = worst.max(r[f0 + i].abs());
                    }
                }
            }
            worst
        };
        // The cubic projection of the sine is not exact, but close.
        assert!(bottom_max(&r) < 2e-4, "trace mismatch {}", bottom_max(&r));

        // Distorting the trace breaks the match.
        state.y[0][(0, 0)] += 0.1;
        let r2 = disc.assemble_residual(&mesh, &state, &bdata).unwrap();
        assert!(bottom_max(&r2) > 1e-3);
    }

    #[test]
    fn sigma_hat_drops_out_of_the_flux_jump_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let (m, d) = (3, 2);
            let a: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let n = [a.cos(), a.sin()];
            let sp = DMatrix::from_fn(m, d, |_, _| rng.random::<f64>() - 0.5);
            let sm = DMatrix::from_fn(m, d, |_, _| rng.random::<f64>() - 0.5);
            let shat = DMatrix::from_fn(m, d, |_, _| rng.random::<f64>() - 0.5);
            for k in 0..m {
                let mut lhs = 0.0;
                let mut jump = 0.0;
                for j in 0..d {
                    lhs += (sp[(k, j)] - shat[(k, j)]) * n[j] + (sm[(k, j)] - shat[(k, j)]) * -n[j];
                    jump += n[j] * (sp[(k, j)] - sm[(k, j)]);
                }
                assert!((lhs - jump).abs() < 1e-12);
            }
        }
    }

    fn ns_model() -> FluxModel {
        FluxModel::navier_stokes(GasModel::air(1e-3), 2, false)
    }

    fn random_state(rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
        vec![
            0.5 + rng.random::<f64>(),
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            2.0 + rng.random::<f64>(),
        ]
    }

    #[test]
    fn average_constitutive_jump_identity_holds_for_compressible_states() {
        let model = ns_model();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        for _ in 0..1000 {
            let y_p = random_state(&mut rng);
            let y_m = random_state(&mut rng);
            let a: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let n = [a.cos(), a.sin()];
            let y_hat: Vec<f64> = (0..4).map(|k| 0.5 * (y_p[k] + y_m[k])).collect();
            // G(y+) ((yhat - y+) (x) n+) + G(y-) ((yhat - y-) (x) n-).
            let m_p = SMat::from_fn(4, 2, |l, i| (y_hat[l] - y_p[l]) * n[i]);
            let m_m = SMat::from_fn(4, 2, |l, i| (y_hat[l] - y_m[l]) * -n[i]);
            let lhs_p = model.constitutive_apply(&y_p, &m_p);
            let lhs_m = model.constitutive_apply(&y_m, &m_m);
            // -{{G}} [[y (x) n]] with [[y (x) n]] = (y+ - y-) (x) n+.
            let jump = SMat::from_fn(4, 2, |l, i| (y_p[l] - y_m[l]) * n[i]);
            let g_p = model.constitutive_apply(&y_p, &jump);
            let g_m = model.constitutive_apply(&y_m, &jump);
            for l in 0..4 {
                for i in 0..2 {
                    let lhs = lhs_p.at(l, i) + lhs_m.at(l, i);
                    let rhs = -0.5 * (g_p.at(l, i) + g_m.at(l, i));
                    assert!((lhs - rhs).abs() < 1e-12, "({l},{i}): {lhs} vs {rhs}");
                }
            }
        }
    }

    fn randomize_state(
        state: &mut DiscreteState,
        disc: &Discretization,
        rng: &mut rand_chacha::ChaCha8Rng,
        base: &[f64],
        spread: f64,
    ) {
        let c0 = disc.y_space.eval(&[0.3, 0.3])[0];
        for y in &mut state.y {
            for k in 0..y.ncols() {
                y[(0, k)] = base[k] / c0;
                for i in 1..y.nrows() {
                    y[(i, k)] = spread * (rng.random::<f64>() - 0.5);
                }
            }
        }
        for s in &mut state.sigma {
            for v in s.iter_mut() {
                *v = spread * (rng.random::<f64>() - 0.5);
            }
        }
        for node in 0..state.geometry.n_nodes() {
            for a in 0..2 {
                state.geometry.node_pos[node][a] += 0.02 * (rng.random::<f64>() - 0.5);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_on_small_meshes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);

        // 1D Burgers, curved isoparametric cells.
        {
            let model = FluxModel::burgers(1e-2, false);
            let (mesh, disc, mut state, bdata) = line_setup(2, model, 2, 2, 2);
            randomize_state(&mut state, &disc, &mut rng, &[0.5], 0.1);
            let constraints = GeometryConstraints::from_mesh(&mesh, &state.geometry);
            constraints.project(&mut state.geometry).unwrap();
            let err = check_jacobian(&disc, &mesh, &state, &bdata, &constraints, 1e-6);
            assert!(err < 1e-6, "1D Burgers jacobian error {err}");
        }

        // 2D space-time Burgers on triangles.
        {
            let (mut mesh, geometry) =
                build_triangulated_grid(1, 1, [0.0, 0.0, 1.0, 1.0], 1, true).unwrap();
            tag_all(&mut mesh, |side| match side {
                Side::YMin => BoundaryTag::TemporalInflow,
                Side::YMax => BoundaryTag::TemporalOutflow,
                Side::XMin => BoundaryTag::Inflow,
                Side::XMax => BoundaryTag::Outflow,
            });
            let model = FluxModel::burgers(1e-3, true);
            let disc = Discretization::new(&mesh, &geometry, model, 2, 2);
            let mut state = DiscreteState::zeros(&disc, &mesh, geometry);
            randomize_state(&mut state, &disc, &mut rng, &[0.3], 0.1);
            let constraints = GeometryConstraints::from_mesh(&mesh, &state.geometry);
            constraints.project(&mut state.geometry).unwrap();
            let bdata = BoundaryData::new()
                .set(
                    Side::YMin,
                    BoundaryCondition::TemporalInflow(BoundaryFunction::SineProfile {
                        amplitude: std::f64::consts::FRAC_1_PI,
                        offset: 0.2,
                    }),
                )
                .set(Side::YMax, BoundaryCondition::TemporalOutflow)
                .set(
                    Side::XMin,
                    BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![0.2])),
                )
                .set(Side::XMax, BoundaryCondition::Outflow);
            let err = check_jacobian(&disc, &mesh, &state, &bdata, &constraints, 1e-6);
            assert!(err < 1e-6, "space-time Burgers jacobian error {err}");
        }

        // 1D compressible flow with a wall on the right.
        {
            let gas = GasModel::air(5e-3);
            let t_wall = 2.5 / (1.4 * gas.gas_constant);
            let model = FluxModel::navier_stokes(gas, 1, false);
            let (mut mesh, geometry) = build_line_mesh(2, 0.0, 1.0, 2).unwrap();
            mesh.tag_boundary(|side| {
                vec![
                    match side {
                        Side::XMax => BoundaryTag::Wall,
                        _ => BoundaryTag::Inflow,
                    },
                    BoundaryTag::Fixed,
                ]
            });
            let disc = Discretization::new(&mesh, &geometry, model, 2, 2);
            let mut state = DiscreteState::zeros(&disc, &mesh, geometry);
            let base = [1.0, 0.2, 2.2];
            randomize_state(&mut state, &disc, &mut rng, &base, 0.02);
            let constraints = GeometryConstraints::from_mesh(&mesh, &state.geometry);
            constraints.project(&mut state.geometry).unwrap();
            let bdata = BoundaryData::new()
                .set(
                    Side::XMin,
                    BoundaryCondition::Inflow(BoundaryFunction::Constant(base.to_vec())),
                )
                .set(Side::XMax, BoundaryCondition::IsothermalWall { t_wall });
            let err = check_jacobian(&disc, &mesh, &state, &bdata, &constraints, 1e-7);
            assert!(err < 1e-6, "1D compressible jacobian error {err}");
        }
    }

    #[test]
    fn wall_rows_vanish_for_a_no_slip_isothermal_trace() {
        let gas = GasModel::air(5e-3);
        let t_wall = 0.004;
        let model = FluxModel::navier_stokes(gas.clone(), 1, false);
        let (mut mesh, geometry) = build_line_mesh(1, 0.0, 1.0, 1).unwrap();
        mesh.tag_boundary(|side| {
            vec![
                match side {
                    Side::XMax => BoundaryTag::Wall,
                    _ => BoundaryTag::Inflow,
                },
                BoundaryTag::Fixed,
            ]
        });
        let disc = Discretization::new(&mesh, &geometry, model, 1, 1);
        let mut state = DiscreteState::zeros(&disc, &mesh, geometry);
        // Constant state already satisfying the wall condition.
        let rho = 1.3;
        let y_wall = [rho, 0.0, rho * gas.internal_energy(t_wall)];
        set_uniform_state(&mut state, &disc, &y_wall);
        let bdata = BoundaryData::new()
            .set(
                Side::XMin,
                BoundaryCondition::Inflow(BoundaryFunction::Constant(y_wall.to_vec())),
            )
            .set(Side::XMax, BoundaryCondition::IsothermalWall { t_wall });
        let r = disc.assemble_residual(&mesh, &state, &bdata).unwrap();
        assert!(r.norm() < 1e-12, "wall residual {}", r.norm());
    }

    #[test]
    fn reference_and_physical_assembly_agree_for_affine_maps() {
        // The same physical problem posed two ways: reference [0,1] mapped
        // by u(x) = 2x, and reference [0,2] with the identity map. Rows
        // correspond up to the sqrt(det) test normalization.
        let model = FluxModel::burgers(1e-2, false);
        let build = |x_max: f64, stretch: f64| {
            let (mut mesh, mut geometry) = build_line_mesh(1, 0.0, x_max, 1).unwrap();
            tag_all(&mut mesh, |_| BoundaryTag::Inflow);
            for node in 0..geometry.n_nodes() {
                geometry.node_pos[node][0] *= stretch;
            }
            let disc = Discretization::new(&mesh, &geometry, model.clone(), 2, 2);
            let mut state = DiscreteState::zeros(&disc, &mesh, geometry);
            // Physical profile y(x) = x^2 with consistent sigma.
            state.y = crate::basis::l2_project(
                |x| vec![x[0] * x[0]],
                &mesh,
                &state.geometry,
                &disc.y_space,
                1,
            )
            .unwrap();
            state.sigma = consistent_sigma(&disc, &mesh, &state);
            let bdata = BoundaryData::new()
                .set(
                    Side::XMin,
                    BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![0.0])),
                )
                .set(
                    Side::XMax,
                    BoundaryCondition::Inflow(BoundaryFunction::Constant(vec![4.0])),
                );
            disc.assemble_residual(&mesh, &state, &bdata).unwrap()
        };
        let mapped = build(1.0, 2.0);
        let physical = build(2.0, 1.0);
        // Both rows test the same physical functional; they differ only by
        // the sqrt(det B) normalization of the reference test basis.
        let k = 2.0f64.sqrt();
        assert_eq!(mapped.len(), physical.len());
        for i in 0..6 {
            assert!(
                (mapped[i] - k * physical[i]).abs() < 1e-10,
                "row {i}: {} vs {}",
                mapped[i],
                k * physical[i]
            );
        }
        // Facet rows are point evaluations in 1D and agree exactly.
        for i in 6..mapped.len() {
            assert!((mapped[i] - physical[i]).abs() < 1e-10, "facet row {i}");
        }
    }
}
