//! Reference-domain topology and the movable grid mapping.
//!
//! The reference mesh is a fixed, straight-sided simplicial partition of the
//! reference domain. All grid motion lives in the geometry field `u`, a
//! globally continuous piecewise-polynomial map from reference to physical
//! space. Cells are parameterized from the unit simplex through a per-cell
//! affine map, so basis evaluation always happens in unit coordinates.
//!
//! Facet orientation: stored facet vertices are ordered so that the scaled
//! normal (the 90-degree rotation of the mapped tangent in 2D, a sign in 1D)
//! points out of the `left` cell.

use crate::basis::{CellKind, NodalBasis, RefPoint};
use nalgebra::Matrix2;
use std::collections::HashMap;
use thiserror::Error;

pub type VertexId = usize;
pub type CellId = usize;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("cell count must be positive")]
    EmptyMesh,
    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),
    #[error("refinement budget exhausted: {n_cells} cells exceed budget {budget}")]
    RefinementBudget { n_cells: usize, budget: usize },
    #[error("invalid geometry in cell {cell}: det = {det:.3e}")]
    InvalidGeometry { cell: CellId, det: f64 },
}

/// Boundary roles. Flow tags drive the residual boundary terms; geometric
/// tags drive the grid-point projection operator.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryTag {
    Inflow,
    Outflow,
    Wall,
    TemporalInflow,
    TemporalOutflow,
    SlidePlane { normal: [f64; 2], offset: f64 },
    SlideCircle { center: [f64; 2], radius: f64 },
    Fixed,
}

/// Which side of a generated rectangular/interval domain a facet lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    XMin,
    XMax,
    YMin,
    YMax,
}

/// Oriented facet shared by one or two cells.
#[derive(Clone, Debug)]
pub struct Facet {
    /// One vertex for point facets, two for segment facets. Segment order is
    /// chosen so the scaled normal points out of `left`.
    pub vertices: Vec<VertexId>,
    pub left: CellId,
    pub left_face: usize,
    pub right: Option<CellId>,
    pub right_face: usize,
    pub side: Option<Side>,
    pub tags: Vec<BoundaryTag>,
    /// Outward direction of the point normal for 1D facets (+1 or -1).
    pub normal_sign: f64,
}

impl Facet {
    pub fn is_boundary(&self) -> bool {
        self.right.is_none()
    }

    pub fn flow_tag(&self) -> Option<&BoundaryTag> {
        self.tags.iter().find(|t| {
            matches!(
                t,
                BoundaryTag::Inflow
                    | BoundaryTag::Outflow
                    | BoundaryTag::Wall
                    | BoundaryTag::TemporalInflow
                    | BoundaryTag::TemporalOutflow
            )
        })
    }
}

/// Affine map from the unit simplex onto a reference cell.
#[derive(Clone, Debug)]
pub struct AffineMap {
    pub origin: [f64; 2],
    pub basis: Matrix2<f64>,
    pub inv: Matrix2<f64>,
    pub det: f64,
}

impl AffineMap {
    fn new(origin: [f64; 2], basis: Matrix2<f64>) -> Self {
        let det = basis.determinant();
        let inv = basis.try_inverse().expect("degenerate reference cell");
        AffineMap {
            origin,
            basis,
            inv,
            det,
        }
    }

    pub fn apply(&self, unit: &RefPoint) -> RefPoint {
        [
            self.origin[0] + self.basis[(0, 0)] * unit[0] + self.basis[(0, 1)] * unit[1],
            self.origin[1] + self.basis[(1, 0)] * unit[0] + self.basis[(1, 1)] * unit[1],
        ]
    }

    pub fn pullback(&self, global: &RefPoint) -> RefPoint {
        let dx = [global[0] - self.origin[0], global[1] - self.origin[1]];
        [
            self.inv[(0, 0)] * dx[0] + self.inv[(0, 1)] * dx[1],
            self.inv[(1, 0)] * dx[0] + self.inv[(1, 1)] * dx[1],
        ]
    }
}

/// Fixed simplicial partition of the reference domain.
#[derive(Clone, Debug)]
pub struct ReferenceMesh {
    pub cell_kind: CellKind,
    /// Total dimension d (2 for space-time problems over 1D space).
    pub dim: usize,
    /// Spatial dimension d_x (equals d for spatial problems, d-1 space-time).
    pub spatial_dim: usize,
    pub vertices: Vec<RefPoint>,
    pub cells: Vec<Vec<VertexId>>,
    pub facets: Vec<Facet>,
    pub cell_maps: Vec<AffineMap>,
}

impl ReferenceMesh {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Reference length of a segment facet (0 for point facets).
    pub fn facet_length(&self, facet: &Facet) -> f64 {
        if facet.vertices.len() < 2 {
            return 0.0;
        }
        let a = self.vertices[facet.vertices[0]];
        let b = self.vertices[facet.vertices[1]];
        ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
    }

    /// Global reference point at arc-length parameter `s` along a facet.
    pub fn facet_point(&self, facet: &Facet, s: f64) -> RefPoint {
        let a = self.vertices[facet.vertices[0]];
        if facet.vertices.len() < 2 {
            return a;
        }
        let b = self.vertices[facet.vertices[1]];
        let len = self.facet_length(facet);
        let t = s / len;
        [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
    }

    /// Unit tangent of a facet in reference coordinates.
    pub fn facet_tangent(&self, facet: &Facet) -> [f64; 2] {
        let a = self.vertices[facet.vertices[0]];
        let b = self.vertices[facet.vertices[1]];
        let len = self.facet_length(facet);
        [(b[0] - a[0]) / len, (b[1] - a[1]) / len]
    }

    /// Assign boundary tags from the generated-side labels.
    pub fn tag_boundary<F>(&mut self, mut f: F)
    where
        F: FnMut(Side) -> Vec<BoundaryTag>,
    {
        for facet in &mut self.facets {
            if let Some(side) = facet.side {
                facet.tags = f(side);
            }
        }
    }

    /// Check the structural mesh invariants, returning a description of the
    /// first violation found.
    pub fn validate(&self) -> Result<(), String> {
        let n_faces_per_cell = self.cell_kind.n_vertices();
        let mut seen = vec![vec![false; n_faces_per_cell]; self.n_cells()];
        for (fi, facet) in self.facets.iter().enumerate() {
            if facet.left >= self.n_cells() {
                return Err(format!("facet {fi} references missing left cell"));
            }
            if seen[facet.left][facet.left_face] {
                return Err(format!("cell {} face {} covered twice", facet.left, facet.left_face));
            }
            seen[facet.left][facet.left_face] = true;
            if let Some(right) = facet.right {
                if seen[right][facet.right_face] {
                    return Err(format!("cell {right} face {} covered twice", facet.right_face));
                }
                seen[right][facet.right_face] = true;
            } else if facet.side.is_none() && facet.tags.is_empty() {
                return Err(format!("boundary facet {fi} carries no side or tags"));
            }
        }
        for (c, faces) in seen.iter().enumerate() {
            for (f, covered) in faces.iter().enumerate() {
                if !covered {
                    return Err(format!("cell {c} face {f} not covered by any facet"));
                }
            }
        }
        Ok(())
    }

    /// Local face vertex ids of a cell, in a fixed convention: line cells
    /// have point faces {v0}, {v1}; triangles have segment faces (v0,v1),
    /// (v1,v2), (v2,v0).
    pub fn face_vertices(&self, cell: CellId, face: usize) -> Vec<VertexId> {
        let c = &self.cells[cell];
        match self.cell_kind {
            CellKind::Line => vec![c[face]],
            CellKind::Triangle => {
                let pairs = [(0, 1), (1, 2), (2, 0)];
                let (a, b) = pairs[face];
                vec![c[a], c[b]]
            }
        }
    }

    fn centroid(&self, cell: CellId) -> [f64; 2] {
        let verts = &self.cells[cell];
        let mut c = [0.0, 0.0];
        for &v in verts {
            c[0] += self.vertices[v][0];
            c[1] += self.vertices[v][1];
        }
        let n = verts.len() as f64;
        [c[0] / n, c[1] / n]
    }

    /// Rebuild facet connectivity from cell-vertex data, preserving tags on
    /// boundary facets that survive (matched by vertex set).
    fn build_facets(&mut self, old_boundary: &HashMap<Vec<VertexId>, (Option<Side>, Vec<BoundaryTag>)>) {
        let n_faces = self.cell_kind.n_vertices();
        let mut by_key: HashMap<Vec<VertexId>, Vec<(CellId, usize)>> = HashMap::new();
        for cell in 0..self.n_cells() {
            for face in 0..n_faces {
                let mut key = self.face_vertices(cell, face);
                key.sort_unstable();
                by_key.entry(key).or_default().push((cell, face));
            }
        }
        let mut facets: Vec<Facet> = Vec::new();
        let mut keys: Vec<_> = by_key.keys().cloned().collect();
        keys.sort_unstable();
        for key in keys {
            let owners = &by_key[&key];
            assert!(owners.len() <= 2, "facet shared by more than two cells");
            let (left, left_face) = owners[0];
            let (right, right_face) = if owners.len() == 2 {
                (Some(owners[1].0), owners[1].1)
            } else {
                (None, 0)
            };
            let mut vertices = self.face_vertices(left, left_face);
            let mut normal_sign = 1.0;
            match self.cell_kind {
                CellKind::Line => {
                    let v = self.vertices[vertices[0]][0];
                    let c = self.centroid(left)[0];
                    normal_sign = if v > c { 1.0 } else { -1.0 };
                }
                CellKind::Triangle => {
                    // Orient so the rotated tangent points away from `left`.
                    let a = self.vertices[vertices[0]];
                    let b = self.vertices[vertices[1]];
                    let t = [b[0] - a[0], b[1] - a[1]];
                    let n = [-t[1], t[0]];
                    let c = self.centroid(left);
                    let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                    let outward = n[0] * (mid[0] - c[0]) + n[1] * (mid[1] - c[1]);
                    if outward < 0.0 {
                        vertices.reverse();
                    }
                }
            }
            let (side, tags) = if right.is_none() {
                old_boundary.get(&key).cloned().unwrap_or((None, Vec::new()))
            } else {
                (None, Vec::new())
            };
            facets.push(Facet {
                vertices,
                left,
                left_face,
                right,
                right_face,
                side,
                tags,
                normal_sign,
            });
        }
        self.facets = facets;
    }

    fn rebuild_cell_maps(&mut self) {
        self.cell_maps = self
            .cells
            .iter()
            .map(|cell| match self.cell_kind {
                CellKind::Line => {
                    let a = self.vertices[cell[0]];
                    let b = self.vertices[cell[1]];
                    AffineMap::new(a, Matrix2::new(b[0] - a[0], 0.0, 0.0, 1.0))
                }
                CellKind::Triangle => {
                    let a = self.vertices[cell[0]];
                    let b = self.vertices[cell[1]];
                    let c = self.vertices[cell[2]];
                    AffineMap::new(
                        a,
                        Matrix2::new(b[0] - a[0], c[0] - a[0], b[1] - a[1], c[1] - a[1]),
                    )
                }
            })
            .collect();
    }

    fn finalize(&mut self, old_boundary: &HashMap<Vec<VertexId>, (Option<Side>, Vec<BoundaryTag>)>) {
        self.rebuild_cell_maps();
        self.build_facets(old_boundary);
    }

    /// Plain-text dump: vertex table, cell table, boundary facet tags.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "mesh dim {} spatial_dim {} cells {} vertices {}\n",
            self.dim,
            self.spatial_dim,
            self.n_cells(),
            self.vertices.len()
        ));
        out.push_str("vertices\n");
        for (i, v) in self.vertices.iter().enumerate() {
            out.push_str(&format!("{i} {:.17e} {:.17e}\n", v[0], v[1]));
        }
        out.push_str("cells\n");
        for (i, c) in self.cells.iter().enumerate() {
            let ids: Vec<String> = c.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("{i} {}\n", ids.join(" ")));
        }
        out.push_str("boundary_facets\n");
        for (i, f) in self.facets.iter().enumerate() {
            if f.is_boundary() {
                let ids: Vec<String> = f.vertices.iter().map(|v| v.to_string()).collect();
                out.push_str(&format!("{i} [{}] {:?}\n", ids.join(" "), f.tags));
            }
        }
        out
    }
}

/// Uniform 1D mesh over `[x_min, x_max]` with an identity initial mapping.
pub fn build_line_mesh(
    n_cells: usize,
    x_min: f64,
    x_max: f64,
    geometry_degree: usize,
) -> Result<(ReferenceMesh, GeometryField), MeshError> {
    if n_cells == 0 {
        return Err(MeshError::EmptyMesh);
    }
    if !(x_max > x_min) {
        return Err(MeshError::DegenerateDomain(format!("[{x_min}, {x_max}]")));
    }
    let h = (x_max - x_min) / n_cells as f64;
    let vertices: Vec<RefPoint> = (0..=n_cells)
        .map(|i| [x_min + h * i as f64, 0.0])
        .collect();
    let cells: Vec<Vec<VertexId>> = (0..n_cells).map(|i| vec![i, i + 1]).collect();
    let mut mesh = ReferenceMesh {
        cell_kind: CellKind::Line,
        dim: 1,
        spatial_dim: 1,
        vertices,
        cells,
        facets: Vec::new(),
        cell_maps: Vec::new(),
    };
    mesh.finalize(&HashMap::new());
    for facet in &mut mesh.facets {
        if facet.is_boundary() {
            let x = mesh.vertices[facet.vertices[0]][0];
            facet.side = Some(if (x - x_min).abs() < 0.5 * h {
                Side::XMin
            } else {
                Side::XMax
            });
        }
    }
    let geometry = GeometryField::identity(&mesh, geometry_degree);
    Ok((mesh, geometry))
}

/// Rectangle split into 2 nx ny triangles; boundary facets labeled by side.
///
/// With `spacetime` set, the y-axis is interpreted as time (d_x = 1).
pub fn build_triangulated_grid(
    nx: usize,
    ny: usize,
    rect: [f64; 4],
    geometry_degree: usize,
    spacetime: bool,
) -> Result<(ReferenceMesh, GeometryField), MeshError> {
    if nx == 0 || ny == 0 {
        return Err(MeshError::EmptyMesh);
    }
    let [x0, y0, x1, y1] = rect;
    if !(x1 > x0) || !(y1 > y0) {
        return Err(MeshError::DegenerateDomain(format!("{rect:?}")));
    }
    let hx = (x1 - x0) / nx as f64;
    let hy = (y1 - y0) / ny as f64;
    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([x0 + hx * i as f64, y0 + hy * j as f64]);
        }
    }
    let mut cells = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
            cells.push(vec![a, b, c]);
            cells.push(vec![a, c, d]);
        }
    }
    let mut mesh = ReferenceMesh {
        cell_kind: CellKind::Triangle,
        dim: 2,
        spatial_dim: if spacetime { 1 } else { 2 },
        vertices,
        cells,
        facets: Vec::new(),
        cell_maps: Vec::new(),
    };
    mesh.finalize(&HashMap::new());
    let tol = 1e-12 * (x1 - x0).max(y1 - y0);
    for facet in &mut mesh.facets {
        if facet.is_boundary() {
            let a = mesh.vertices[facet.vertices[0]];
            let b = mesh.vertices[facet.vertices[1]];
            facet.side = if (a[0] - x0).abs() < tol && (b[0] - x0).abs() < tol {
                Some(Side::XMin)
            } else if (a[0] - x1).abs() < tol && (b[0] - x1).abs() < tol {
                Some(Side::XMax)
            } else if (a[1] - y0).abs() < tol && (b[1] - y0).abs() < tol {
                Some(Side::YMin)
            } else {
                Some(Side::YMax)
            };
        }
    }
    let geometry = GeometryField::identity(&mesh, geometry_degree);
    Ok((mesh, geometry))
}

/// Result of evaluating the grid mapping at one reference point.
#[derive(Clone, Debug)]
pub struct GeoEval {
    /// Physical position.
    pub x: [f64; 2],
    /// Jacobian of the mapping in reference coordinates, padded with an
    /// identity row/column for 1D problems.
    pub jac: Matrix2<f64>,
    pub det: f64,
    pub cof: Matrix2<f64>,
}

/// Cofactor of a 2x2 matrix (det times inverse transpose).
pub fn cofactor2(m: &Matrix2<f64>) -> Matrix2<f64> {
    Matrix2::new(m[(1, 1)], -m[(1, 0)], -m[(0, 1)], m[(0, 0)])
}

/// Globally continuous piecewise-polynomial grid mapping.
///
/// Node positions are the unknown geometry coefficients; shared facet and
/// vertex nodes appear once, which is what makes the mapping continuous.
#[derive(Clone, Debug)]
pub struct GeometryField {
    pub degree: usize,
    pub basis: NodalBasis,
    /// Per cell: global geometry node ids in local node order.
    pub cell_nodes: Vec<Vec<usize>>,
    /// Per facet: geometry node ids along the facet, ordered with the facet
    /// tangent (point facets carry one node).
    pub facet_nodes: Vec<Vec<usize>>,
    /// Reference coordinates of each geometry node.
    pub node_ref: Vec<RefPoint>,
    /// Physical coordinates of each geometry node (the mapping dofs).
    pub node_pos: Vec<[f64; 2]>,
}

impl GeometryField {
    /// Build the node layout with the identity mapping.
    pub fn identity(mesh: &ReferenceMesh, degree: usize) -> Self {
        let basis = NodalBasis::new(mesh.cell_kind, degree);
        let mut node_ref: Vec<RefPoint> = Vec::new();
        let mut vertex_node: HashMap<VertexId, usize> = HashMap::new();
        let mut edge_nodes: HashMap<(VertexId, VertexId, usize), usize> = HashMap::new();
        let mut cell_nodes = Vec::with_capacity(mesh.n_cells());
        let n_vert = mesh.cell_kind.n_vertices();
        for (cell, cverts) in mesh.cells.iter().enumerate() {
            let map = &mesh.cell_maps[cell];
            let mut locals = Vec::with_capacity(basis.dim);
            for (k, unit_node) in basis.nodes.iter().enumerate() {
                let global_pt = map.apply(unit_node);
                let id = if k < n_vert {
                    *vertex_node.entry(cverts[k]).or_insert_with(|| {
                        node_ref.push(global_pt);
                        node_ref.len() - 1
                    })
                } else if let Some((va, vb, idx)) =
                    edge_node_key(mesh.cell_kind, degree, k, cverts)
                {
                    let key = if va < vb {
                        (va, vb, idx)
                    } else {
                        (vb, va, degree - idx)
                    };
                    *edge_nodes.entry(key).or_insert_with(|| {
                        node_ref.push(global_pt);
                        node_ref.len() - 1
                    })
                } else {
                    node_ref.push(global_pt);
                    node_ref.len() - 1
                };
                locals.push(id);
            }
            cell_nodes.push(locals);
        }
        let node_pos = node_ref.clone();
        let mut field = GeometryField {
            degree,
            basis,
            cell_nodes,
            facet_nodes: Vec::new(),
            node_ref,
            node_pos,
        };
        field.rebuild_facet_nodes(mesh);
        field
    }

    pub fn n_nodes(&self) -> usize {
        self.node_pos.len()
    }

    /// Recompute the facet-to-node table after topology changes.
    pub fn rebuild_facet_nodes(&mut self, mesh: &ReferenceMesh) {
        let mut by_pos: Vec<Vec<usize>> = Vec::with_capacity(mesh.facets.len());
        for facet in &mesh.facets {
            let cell = facet.left;
            let map = &mesh.cell_maps[cell];
            if facet.vertices.len() < 2 {
                // Point facet: match the vertex node.
                let target = mesh.vertices[facet.vertices[0]];
                let node = self.cell_nodes[cell]
                    .iter()
                    .copied()
                    .find(|&n| dist2(&self.node_ref[n], &target) < 1e-20)
                    .expect("facet vertex node not found");
                by_pos.push(vec![node]);
                continue;
            }
            // Collect cell nodes lying on the facet segment, sort by tangent.
            let a = mesh.vertices[facet.vertices[0]];
            let tangent = mesh.facet_tangent(facet);
            let len = mesh.facet_length(facet);
            let mut on_facet: Vec<(f64, usize)> = Vec::new();
            for &node in &self.cell_nodes[cell] {
                let p = self.node_ref[node];
                let dx = [p[0] - a[0], p[1] - a[1]];
                let s = dx[0] * tangent[0] + dx[1] * tangent[1];
                let off = [dx[0] - s * tangent[0], dx[1] - s * tangent[1]];
                if (off[0] * off[0] + off[1] * off[1]).sqrt() < 1e-10 * len
                    && (-1e-10 * len..=len * (1.0 + 1e-10)).contains(&s)
                {
                    on_facet.push((s, node));
                }
            }
            let _ = map;
            on_facet.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
            on_facet.dedup_by_key(|e| e.1);
            assert_eq!(
                on_facet.len(),
                self.degree + 1,
                "facet node count mismatch"
            );
            by_pos.push(on_facet.into_iter().map(|(_, n)| n).collect());
        }
        self.facet_nodes = by_pos;
    }

    /// Evaluate mapping, Jacobian, determinant, and cofactor at a unit-cell
    /// point of `cell`. 1D problems pad the Jacobian with an identity block,
    /// which leaves the determinant and the leading cofactor entry correct.
    pub fn eval(&self, mesh: &ReferenceMesh, cell: CellId, unit_pt: &RefPoint) -> GeoEval {
        let (vals, grads) = self.basis.eval_with_grad(unit_pt);
        self.eval_from_tables(mesh, cell, &vals, &grads)
    }

    /// Same as [`eval`](Self::eval) with pre-tabulated basis data.
    pub fn eval_from_tables(
        &self,
        mesh: &ReferenceMesh,
        cell: CellId,
        vals: &[f64],
        grads: &[[f64; 2]],
    ) -> GeoEval {
        let inv = &mesh.cell_maps[cell].inv;
        let mut x = [0.0, 0.0];
        let mut jac = Matrix2::identity();
        let dim = mesh.dim;
        let mut j_unit = Matrix2::<f64>::zeros();
        for (k, &node) in self.cell_nodes[cell].iter().enumerate() {
            let pos = self.node_pos[node];
            for a in 0..dim {
                x[a] += vals[k] * pos[a];
                for b in 0..dim {
                    j_unit[(a, b)] += grads[k][b] * pos[a];
                }
            }
        }
        // Chain rule from unit coordinates to reference coordinates.
        for a in 0..dim {
            for b in 0..dim {
                let mut v = 0.0;
                for c in 0..dim {
                    v += j_unit[(a, c)] * inv[(c, b)];
                }
                jac[(a, b)] = v;
            }
        }
        let det = jac.determinant();
        GeoEval {
            x,
            jac,
            det,
            cof: cofactor2(&jac),
        }
    }

    /// Scaled facet normal at arc-length parameter `s`, plus the physical
    /// point. The normal points out of the facet's left cell and carries the
    /// surface Jacobian as its magnitude.
    pub fn scaled_normal(
        &self,
        mesh: &ReferenceMesh,
        facet_id: usize,
        s: f64,
    ) -> ([f64; 2], [f64; 2]) {
        let facet = &mesh.facets[facet_id];
        if facet.vertices.len() < 2 {
            let node = self.facet_nodes[facet_id][0];
            let x = self.node_pos[node];
            return ([facet.normal_sign, 0.0], x);
        }
        let len = mesh.facet_length(facet);
        let nodes = &self.facet_nodes[facet_id];
        let line = NodalBasis::new(CellKind::Line, self.degree);
        let (vals, grads) = line.eval_with_grad(&[s / len, 0.0]);
        let mut x = [0.0, 0.0];
        let mut tangent = [0.0, 0.0];
        for (k, unit_node) in line.nodes.iter().enumerate() {
            // facet_nodes is sorted along the tangent; the line basis lists
            // vertices first.
            let slot = (unit_node[0] * self.degree as f64).round() as usize;
            let pos = self.node_pos[nodes[slot]];
            for a in 0..2 {
                x[a] += vals[k] * pos[a];
                tangent[a] += grads[k][0] / len * pos[a];
            }
        }
        ([-tangent[1], tangent[0]], x)
    }

    /// Validity scan: determinant of the mapping at every geometry node and
    /// volume quadrature point of every cell.
    pub fn invalid_cells(&self, mesh: &ReferenceMesh) -> Vec<(CellId, f64)> {
        let rule = crate::basis::quadrature_rule(mesh.cell_kind, 2 * self.degree.max(1));
        let mut bad = Vec::new();
        for cell in 0..mesh.n_cells() {
            let mut min_det = f64::INFINITY;
            for node in &self.basis.nodes {
                min_det = min_det.min(self.eval(mesh, cell, node).det);
            }
            for pt in &rule.points {
                min_det = min_det.min(self.eval(mesh, cell, pt).det);
            }
            if min_det <= 0.0 {
                bad.push((cell, min_det));
            }
        }
        bad
    }

    /// Physical aspect ratio of a cell from its vertex positions: squared
    /// longest edge over twice the area (1 for segments).
    pub fn aspect_ratio(&self, mesh: &ReferenceMesh, cell: CellId) -> f64 {
        if mesh.cell_kind == CellKind::Line {
            return 1.0;
        }
        let verts: Vec<[f64; 2]> = (0..3)
            .map(|k| {
                let node = self.cell_nodes[cell][k];
                self.node_pos[node]
            })
            .collect();
        let mut l_max: f64 = 0.0;
        for (a, b) in [(0, 1), (1, 2), (2, 0)] {
            let dx = [verts[b][0] - verts[a][0], verts[b][1] - verts[a][1]];
            l_max = l_max.max((dx[0] * dx[0] + dx[1] * dx[1]).sqrt());
        }
        let area = 0.5
            * ((verts[1][0] - verts[0][0]) * (verts[2][1] - verts[0][1])
                - (verts[2][0] - verts[0][0]) * (verts[1][1] - verts[0][1]))
                .abs();
        l_max * l_max / (2.0 * area)
    }

    /// Replace the curved shape of `cell` with the linear interpolant of its
    /// vertex positions. Shared edge nodes move with it, keeping conformity.
    pub fn project_cell_to_linear(&mut self, mesh: &ReferenceMesh, cell: CellId) {
        let n_vert = mesh.cell_kind.n_vertices();
        let vert_pos: Vec<[f64; 2]> = (0..n_vert)
            .map(|k| self.node_pos[self.cell_nodes[cell][k]])
            .collect();
        for (k, unit_node) in self.basis.nodes.iter().enumerate().skip(n_vert) {
            let node = self.cell_nodes[cell][k];
            let bary = match mesh.cell_kind {
                CellKind::Line => vec![1.0 - unit_node[0], unit_node[0]],
                CellKind::Triangle => vec![
                    1.0 - unit_node[0] - unit_node[1],
                    unit_node[0],
                    unit_node[1],
                ],
            };
            let mut p = [0.0, 0.0];
            for (w, v) in bary.iter().zip(&vert_pos) {
                p[0] += w * v[0];
                p[1] += w * v[1];
            }
            self.node_pos[node] = p;
        }
    }
}

fn dist2(a: &RefPoint, b: &RefPoint) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Classify a local node as an edge-interior node: returns the cell-global
/// vertex pair and the index along the local edge direction.
fn edge_node_key(
    cell: CellKind,
    degree: usize,
    local: usize,
    cverts: &[VertexId],
) -> Option<(VertexId, VertexId, usize)> {
    if degree < 2 {
        return None;
    }
    match cell {
        CellKind::Line => None,
        CellKind::Triangle => {
            let per_edge = degree - 1;
            let first_edge_node = 3;
            let first_interior = 3 + 3 * per_edge;
            if local < first_edge_node || local >= first_interior {
                return None;
            }
            let e = (local - first_edge_node) / per_edge;
            let idx = (local - first_edge_node) % per_edge + 1;
            let pairs = [(0usize, 1usize), (1, 2), (2, 0)];
            let (a, b) = pairs[e];
            Some((cverts[a], cverts[b], idx))
        }
    }
}

/// One edge-split event produced by the validity controller.
#[derive(Clone, Debug)]
pub struct RefinementEvent {
    pub cell: CellId,
    pub reason: RefinementReason,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefinementReason {
    ProjectedToLinear,
    InvalidSplit,
    AnisotropySplit,
}

/// Mapping from each new cell back into its parent's unit coordinates.
#[derive(Clone, Debug)]
pub struct RefinementMap {
    pub parent: Vec<CellId>,
    /// Events in the order applied.
    pub events: Vec<RefinementEvent>,
    pub changed_topology: bool,
}

/// Validity and quality control. Cells with a non-positive mapping
/// determinant are first projected to linear shape; cells still invalid and
/// cells with aspect ratio above the threshold get their longest edge split
/// (the neighbor sharing that edge splits too, keeping the mesh conforming).
pub fn validity_check_and_refine(
    mesh: &mut ReferenceMesh,
    geometry: &mut GeometryField,
    anisotropy_threshold: f64,
    cell_budget: usize,
) -> Result<RefinementMap, MeshError> {
    let mut events = Vec::new();

    // Projection pass.
    let invalid = geometry.invalid_cells(mesh);
    for &(cell, _) in &invalid {
        geometry.project_cell_to_linear(mesh, cell);
        events.push(RefinementEvent {
            cell,
            reason: RefinementReason::ProjectedToLinear,
        });
    }

    let mut to_split: Vec<(CellId, RefinementReason)> = geometry
        .invalid_cells(mesh)
        .into_iter()
        .map(|(c, _)| (c, RefinementReason::InvalidSplit))
        .collect();
    for cell in 0..mesh.n_cells() {
        if geometry.aspect_ratio(mesh, cell) > anisotropy_threshold
            && !to_split.iter().any(|&(c, _)| c == cell)
        {
            to_split.push((cell, RefinementReason::AnisotropySplit));
        }
    }

    if to_split.is_empty() {
        let parent = (0..mesh.n_cells()).collect();
        return Ok(RefinementMap {
            parent,
            events,
            changed_topology: false,
        });
    }

    if mesh.n_cells() + 2 * to_split.len() > cell_budget {
        return Err(MeshError::RefinementBudget {
            n_cells: mesh.n_cells() + 2 * to_split.len(),
            budget: cell_budget,
        });
    }

    // Collect the reference edges to split: longest physical edge per cell.
    let mut split_edges: Vec<(VertexId, VertexId)> = Vec::new();
    for &(cell, reason) in &to_split {
        events.push(RefinementEvent { cell, reason });
        let edge = longest_edge(mesh, geometry, cell);
        let key = (edge.0.min(edge.1), edge.0.max(edge.1));
        if !split_edges.contains(&key) {
            split_edges.push(key);
        }
    }

    apply_edge_splits(mesh, geometry, &split_edges, events)
}

fn longest_edge(mesh: &ReferenceMesh, geometry: &GeometryField, cell: CellId) -> (VertexId, VertexId) {
    match mesh.cell_kind {
        CellKind::Line => (mesh.cells[cell][0], mesh.cells[cell][1]),
        CellKind::Triangle => {
            let c = &mesh.cells[cell];
            let mut best = (c[0], c[1]);
            let mut best_len = -1.0;
            for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                let pa = geometry.node_pos[geometry.cell_nodes[cell][a]];
                let pb = geometry.node_pos[geometry.cell_nodes[cell][b]];
                let l = dist2(&pa, &pb);
                if l > best_len {
                    best_len = l;
                    best = (c[a], c[b]);
                }
            }
            best
        }
    }
}

/// Split the given reference edges at their midpoints and rebuild the mesh
/// and geometry field. Field transfer is the caller's job via the returned
/// parent map (new unit coordinates relate to the parent affinely through
/// the shared global reference frame).
fn apply_edge_splits(
    mesh: &mut ReferenceMesh,
    geometry: &mut GeometryField,
    split_edges: &[(VertexId, VertexId)],
    events: Vec<RefinementEvent>,
) -> Result<RefinementMap, MeshError> {
    let mut old_boundary: HashMap<Vec<VertexId>, (Option<Side>, Vec<BoundaryTag>)> = HashMap::new();
    for facet in &mesh.facets {
        if facet.is_boundary() {
            let mut key = facet.vertices.clone();
            key.sort_unstable();
            old_boundary.insert(key, (facet.side, facet.tags.clone()));
        }
    }

    let mut midpoint: HashMap<(VertexId, VertexId), VertexId> = HashMap::new();
    for &(a, b) in split_edges {
        let pa = mesh.vertices[a];
        let pb = mesh.vertices[b];
        mesh.vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
        midpoint.insert((a, b), mesh.vertices.len() - 1);
        // Boundary tags of split boundary edges carry to both halves.
        let key = vec![a.min(b), a.max(b)];
        if let Some(entry) = old_boundary.get(&key).cloned() {
            let m = mesh.vertices.len() - 1;
            old_boundary.insert(vec![a.min(m), a.max(m)], entry.clone());
            old_boundary.insert(vec![b.min(m), b.max(m)], entry);
        }
    }

    let old_cells = mesh.cells.clone();
    let old_geometry = geometry.clone();
    let old_mesh_cells: Vec<Vec<VertexId>> = old_cells.clone();

    let mut new_cells: Vec<Vec<VertexId>> = Vec::new();
    let mut parent: Vec<CellId> = Vec::new();
    for (cell, verts) in old_cells.iter().enumerate() {
        let split = cell_split_edge(mesh.cell_kind, verts, &midpoint);
        match split {
            None => {
                new_cells.push(verts.clone());
                parent.push(cell);
            }
            Some((a, b, m)) => match mesh.cell_kind {
                CellKind::Line => {
                    new_cells.push(vec![a, m]);
                    new_cells.push(vec![m, b]);
                    parent.push(cell);
                    parent.push(cell);
                }
                CellKind::Triangle => {
                    let c = *verts.iter().find(|&&v| v != a && v != b).unwrap();
                    // Keep the parent's orientation in each child.
                    let (first, second) = oriented_children(verts, a, b, m, c);
                    new_cells.push(first);
                    new_cells.push(second);
                    parent.push(cell);
                    parent.push(cell);
                }
            },
        }
    }

    mesh.cells = new_cells;
    mesh.finalize(&old_boundary);
    mesh.validate().map_err(MeshError::DegenerateDomain)?;

    // Rebuild the geometry node layout and interpolate positions from the
    // old mapping through the shared reference frame.
    let mut new_geometry = GeometryField::identity(mesh, geometry.degree);
    for node in 0..new_geometry.n_nodes() {
        let ref_pt = new_geometry.node_ref[node];
        // Locate the old cell containing this reference point.
        let (old_cell, unit) = locate_in_cells(&old_mesh_cells, &old_geometry, mesh, &ref_pt)
            .expect("reference point must lie in some parent cell");
        let geo = old_geometry.eval_old(old_cell, &unit);
        new_geometry.node_pos[node] = geo;
    }
    *geometry = new_geometry;

    Ok(RefinementMap {
        parent,
        events,
        changed_topology: true,
    })
}

fn cell_split_edge(
    kind: CellKind,
    verts: &[VertexId],
    midpoint: &HashMap<(VertexId, VertexId), VertexId>,
) -> Option<(VertexId, VertexId, VertexId)> {
    let edges: Vec<(usize, usize)> = match kind {
        CellKind::Line => vec![(0, 1)],
        CellKind::Triangle => vec![(0, 1), (1, 2), (2, 0)],
    };
    for (i, j) in edges {
        let (a, b) = (verts[i], verts[j]);
        let key = (a.min(b), a.max(b));
        if let Some(&m) = midpoint.get(&key) {
            return Some((a, b, m));
        }
    }
    None
}

fn oriented_children(
    verts: &[VertexId],
    a: VertexId,
    b: VertexId,
    m: VertexId,
    c: VertexId,
) -> (Vec<VertexId>, Vec<VertexId>) {
    // Replace b with m in the parent's cyclic order for the first child and
    // a with m for the second; this preserves orientation.
    let first: Vec<VertexId> = verts
        .iter()
        .map(|&v| if v == b { m } else { v })
        .collect();
    let second: Vec<VertexId> = verts
        .iter()
        .map(|&v| if v == a { m } else { v })
        .collect();
    let _ = (a, c);
    (first, second)
}

impl GeometryField {
    /// Evaluate just the mapped position for an old-topology cell id.
    fn eval_old(&self, cell: CellId, unit: &RefPoint) -> [f64; 2] {
        let vals = self.basis.eval(unit);
        let mut x = [0.0, 0.0];
        for (k, &node) in self.cell_nodes[cell].iter().enumerate() {
            x[0] += vals[k] * self.node_pos[node][0];
            x[1] += vals[k] * self.node_pos[node][1];
        }
        x
    }
}

/// Find an old cell containing `ref_pt` and its unit coordinates there.
fn locate_in_cells(
    old_cells: &[Vec<VertexId>],
    old_geometry: &GeometryField,
    mesh: &ReferenceMesh,
    ref_pt: &RefPoint,
) -> Option<(CellId, RefPoint)> {
    let tol = 1e-9;
    for (cell, verts) in old_cells.iter().enumerate() {
        let unit = match mesh.cell_kind {
            CellKind::Line => {
                let a = mesh.vertices[verts[0]][0];
                let b = mesh.vertices[verts[1]][0];
                [(ref_pt[0] - a) / (b - a), 0.0]
            }
            CellKind::Triangle => {
                let a = mesh.vertices[verts[0]];
                let b = mesh.vertices[verts[1]];
                let c = mesh.vertices[verts[2]];
                let m = Matrix2::new(b[0] - a[0], c[0] - a[0], b[1] - a[1], c[1] - a[1]);
                let inv = m.try_inverse()?;
                let dx = [ref_pt[0] - a[0], ref_pt[1] - a[1]];
                [
                    inv[(0, 0)] * dx[0] + inv[(0, 1)] * dx[1],
                    inv[(1, 0)] * dx[0] + inv[(1, 1)] * dx[1],
                ]
            }
        };
        let inside = match mesh.cell_kind {
            CellKind::Line => unit[0] >= -tol && unit[0] <= 1.0 + tol,
            CellKind::Triangle => {
                unit[0] >= -tol && unit[1] >= -tol && unit[0] + unit[1] <= 1.0 + tol
            }
        };
        if inside {
            let _ = old_geometry;
            return Some((cell, unit));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_mesh_counts() {
        let (mesh, _) = build_line_mesh(8, 0.0, 1.0, 1).unwrap();
        assert_eq!(mesh.n_cells(), 8);
        assert_eq!(mesh.facets.len(), 9);
        let interior = mesh.facets.iter().filter(|f| !f.is_boundary()).count();
        assert_eq!(interior, 7);
        mesh.validate().unwrap();
    }

    #[test]
    fn single_cell_line_mesh() {
        let (mesh, _) = build_line_mesh(1, 0.0, 1.0, 1).unwrap();
        assert_eq!(mesh.n_cells(), 1);
        assert_eq!(mesh.facets.iter().filter(|f| f.is_boundary()).count(), 2);
    }

    #[test]
    fn line_mesh_uniform_spacing() {
        let (mesh, _) = build_line_mesh(10, 0.0, 1.0, 1).unwrap();
        for map in &mesh.cell_maps {
            assert!((map.det - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn line_mesh_rejects_bad_input() {
        assert!(build_line_mesh(0, 0.0, 1.0, 1).is_err());
        assert!(build_line_mesh(4, 1.0, 1.0, 1).is_err());
    }

    #[test]
    fn triangulated_grid_counts() {
        let (mesh, _) = build_triangulated_grid(10, 10, [0.0, 0.0, 1.0, 1.0], 1, false).unwrap();
        assert_eq!(mesh.n_cells(), 200);
        mesh.validate().unwrap();
    }

    #[test]
    fn smallest_grid_has_one_interior_facet() {
        let (mesh, _) = build_triangulated_grid(1, 1, [0.0, 0.0, 1.0, 1.0], 1, false).unwrap();
        assert_eq!(mesh.n_cells(), 2);
        assert_eq!(mesh.facets.iter().filter(|f| !f.is_boundary()).count(), 1);
    }

    #[test]
    fn grid_area_adds_up() {
        let (mesh, _) = build_triangulated_grid(2, 1, [0.0, 0.0, 2.0, 1.0], 1, false).unwrap();
        assert_eq!(mesh.n_cells(), 4);
        let total: f64 = mesh.cell_maps.iter().map(|m| 0.5 * m.det.abs()).sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn identity_geometry_evaluates_to_identity() {
        let (mesh, geom) = build_triangulated_grid(2, 2, [0.0, 0.0, 1.0, 1.0], 2, false).unwrap();
        for cell in 0..mesh.n_cells() {
            let geo = geom.eval(&mesh, cell, &[0.25, 0.25]);
            let expect = mesh.cell_maps[cell].apply(&[0.25, 0.25]);
            assert!((geo.x[0] - expect[0]).abs() < 1e-13);
            assert!((geo.x[1] - expect[1]).abs() < 1e-13);
            assert!((geo.det - 1.0).abs() < 1e-12);
            assert!((geo.jac - Matrix2::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn cofactor_identity_holds_for_random_matrices() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let m = Matrix2::new(
                rng.random::<f64>() + 1.0,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() + 1.0,
            );
            let c = cofactor2(&m);
            let lhs = c * m.transpose();
            let rhs = Matrix2::identity() * m.determinant();
            assert!((lhs - rhs).norm() < 1e-12 * m.norm().max(1.0));
        }
    }

    #[test]
    fn diagonal_cofactor_example() {
        let j = Matrix2::new(2.0, 0.0, 0.0, 3.0);
        let c = cofactor2(&j);
        assert_eq!(j.determinant(), 6.0);
        assert_eq!(c, Matrix2::new(3.0, 0.0, 0.0, 2.0));
    }

    #[test]
    fn scaled_normals_point_outward() {
        let (mesh, geom) = build_triangulated_grid(2, 2, [0.0, 0.0, 1.0, 1.0], 1, false).unwrap();
        for (fid, facet) in mesh.facets.iter().enumerate() {
            let len = mesh.facet_length(facet);
            let (s, x) = geom.scaled_normal(&mesh, fid, 0.5 * len);
            let c = mesh.centroid(facet.left);
            let dot = s[0] * (x[0] - c[0]) + s[1] * (x[1] - c[1]);
            assert!(dot > 0.0, "normal of facet {fid} points into left cell");
        }
    }

    #[test]
    fn scaled_normal_equals_cofactor_times_reference_normal_for_affine_maps() {
        let (mesh, mut geom) =
            build_triangulated_grid(1, 1, [0.0, 0.0, 1.0, 1.0], 2, false).unwrap();
        // Apply the affine map x -> A x + b to every geometry node.
        let a = Matrix2::new(1.3, 0.4, -0.2, 0.9);
        for node in 0..geom.n_nodes() {
            let p = geom.node_ref[node];
            geom.node_pos[node] = [
                a[(0, 0)] * p[0] + a[(0, 1)] * p[1] + 0.7,
                a[(1, 0)] * p[0] + a[(1, 1)] * p[1] - 0.3,
            ];
        }
        for (fid, facet) in mesh.facets.iter().enumerate() {
            let len = mesh.facet_length(facet);
            let t = mesh.facet_tangent(facet);
            // Reference scaled normal: stored vertex order makes the rotated
            // tangent point out of the left cell.
            let sn = [-t[1], t[0]];
            let expect = cofactor2(&a) * nalgebra::Vector2::new(sn[0], sn[1]);
            let (s, _) = geom.scaled_normal(&mesh, fid, 0.5 * len);
            assert!(
                (s[0] - expect[0]).abs() < 1e-12 && (s[1] - expect[1]).abs() < 1e-12,
                "facet {fid}: {s:?} vs {expect:?}"
            );
        }
    }

    #[test]
    fn one_d_point_normals_are_signed() {
        let (mesh, geom) = build_line_mesh(2, 0.0, 1.0, 1).unwrap();
        for (fid, facet) in mesh.facets.iter().enumerate() {
            let (s, x) = geom.scaled_normal(&mesh, fid, 0.0);
            let c = mesh.centroid(facet.left);
            assert!(s[0] * (x[0] - c[0]) > 0.0, "facet {fid}");
        }
    }

    #[test]
    fn refine_noop_when_valid_and_isotropic() {
        let (mut mesh, mut geom) =
            build_triangulated_grid(2, 2, [0.0, 0.0, 1.0, 1.0], 2, false).unwrap();
        let before = mesh.n_cells();
        let map = validity_check_and_refine(&mut mesh, &mut geom, 50.0, 1000).unwrap();
        assert!(!map.changed_topology);
        assert!(map.events.is_empty());
        assert_eq!(mesh.n_cells(), before);
    }

    #[test]
    fn inverted_curved_cell_recovers_by_linear_projection() {
        let (mut mesh, mut geom) =
            build_triangulated_grid(1, 1, [0.0, 0.0, 1.0, 1.0], 2, false).unwrap();
        // Drag one mid-edge node far across the cell to invert the mapping.
        let cell = 0;
        let node = geom.cell_nodes[cell][3];
        let orig = geom.node_pos[node];
        geom.node_pos[node] = [orig[0] + 0.9, orig[1] + 0.9];
        assert!(!geom.invalid_cells(&mesh).is_empty());
        let map = validity_check_and_refine(&mut mesh, &mut geom, 50.0, 1000).unwrap();
        assert!(map
            .events
            .iter()
            .any(|e| e.reason == RefinementReason::ProjectedToLinear));
        assert!(!map.changed_topology);
        assert!(geom.invalid_cells(&mesh).is_empty());
    }

    #[test]
    fn anisotropic_cell_is_split_conformingly() {
        let (mut mesh, mut geom) =
            build_triangulated_grid(1, 1, [0.0, 0.0, 1.0, 1.0], 1, false).unwrap();
        // Stretch physical space to make both triangles highly anisotropic.
        for node in 0..geom.n_nodes() {
            geom.node_pos[node][0] *= 100.0;
        }
        let ar = geom.aspect_ratio(&mesh, 0);
        assert!(ar > 50.0, "aspect ratio {ar}");
        let map = validity_check_and_refine(&mut mesh, &mut geom, 50.0, 1000).unwrap();
        assert!(map.changed_topology);
        mesh.validate().unwrap();
        assert!(mesh.n_cells() > 2);
        // Total reference measure is preserved.
        let total: f64 = mesh
            .cell_maps
            .iter()
            .map(|m| m.det.abs() * mesh.cell_kind.measure())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn refinement_budget_aborts() {
        let (mut mesh, mut geom) =
            build_triangulated_grid(1, 1, [0.0, 0.0, 1.0, 1.0], 1, false).unwrap();
        for node in 0..geom.n_nodes() {
            geom.node_pos[node][0] *= 100.0;
        }
        let err = validity_check_and_refine(&mut mesh, &mut geom, 50.0, 2);
        assert!(matches!(err, Err(MeshError::RefinementBudget { .. })));
    }

    #[test]
    fn geometry_nodes_are_shared_across_cells() {
        let (mesh, geom) = build_triangulated_grid(2, 2, [0.0, 0.0, 1.0, 1.0], 3, false).unwrap();
        for facet in mesh.facets.iter().filter(|f| !f.is_boundary()) {
            // Interior facet nodes must appear in both adjacent cells.
            let fid = mesh
                .facets
                .iter()
                .position(|f| std::ptr::eq(f, facet))
                .unwrap();
            for &node in &geom.facet_nodes[fid] {
                let left = &geom.cell_nodes[facet.left];
                let right = &geom.cell_nodes[facet.right.unwrap()];
                assert!(left.contains(&node));
                assert!(right.contains(&node));
            }
        }
    }

    #[test]
    fn mesh_dump_lists_tables() {
        let (mut mesh, _) = build_line_mesh(2, 0.0, 1.0, 1).unwrap();
        mesh.tag_boundary(|side| match side {
            Side::XMin => vec![BoundaryTag::Inflow],
            _ => vec![BoundaryTag::Outflow],
        });
        let dump = mesh.dump();
        assert!(dump.contains("vertices"));
        assert!(dump.contains("cells"));
        assert!(dump.contains("Inflow"));
    }
}
