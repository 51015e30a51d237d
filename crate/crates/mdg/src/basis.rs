//! Polynomial spaces and quadrature on reference simplices.
//!
//! Reference cells are the unit line `[0,1]` and the unit triangle with
//! vertices (0,0), (1,0), (0,1). Field variables use modal bases (shifted
//! Legendre on the line, a scaled Koornwinder-Dubiner construction on the
//! triangle, both numerically normalized). The grid mapping uses nodal
//! Lagrange bases so that shared facet nodes make the mapping globally
//! continuous.

use crate::jet::{Jet, Scalar};
use crate::mesh::{GeometryField, ReferenceMesh};
use nalgebra::{DMatrix, DVector};

/// Reference cell shapes supported by the discretization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Line,
    Triangle,
}

impl CellKind {
    pub fn dim(&self) -> usize {
        match self {
            CellKind::Line => 1,
            CellKind::Triangle => 2,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.dim() + 1
    }

    /// Measure of the reference cell.
    pub fn measure(&self) -> f64 {
        match self {
            CellKind::Line => 1.0,
            CellKind::Triangle => 0.5,
        }
    }

    /// Dimension of the polynomial space of total degree `p`.
    pub fn space_dim(&self, p: usize) -> usize {
        match self {
            CellKind::Line => p + 1,
            CellKind::Triangle => (p + 1) * (p + 2) / 2,
        }
    }
}

/// Points in reference coordinates; 1D cells use only the first entry.
pub type RefPoint = [f64; 2];

/// Quadrature nodes and weights on a reference cell.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub cell: CellKind,
    pub points: Vec<RefPoint>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss-Legendre nodes and weights on `[0,1]`, exact through degree `2n-1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one quadrature node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        // Newton iteration on P_n over [-1,1] from the Chebyshev guess.
        let mut t = -(std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, t);
            let dt = p / dp;
            t -= dt;
            if dt.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, t);
        let w = 2.0 / ((1.0 - t * t) * dp * dp);
        nodes[k] = 0.5 * (t + 1.0);
        weights[k] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, dp)
}

/// Rule integrating all polynomials of total degree `exactness` exactly.
pub fn quadrature_rule(cell: CellKind, exactness: usize) -> QuadratureRule {
    assert!(exactness >= 1, "exactness degree must be at least 1");
    const MAX_POINTS_1D: usize = 64;
    match cell {
        CellKind::Line => {
            let n = exactness / 2 + 1;
            assert!(n <= MAX_POINTS_1D, "unsupported quadrature exactness {exactness}");
            let (x, w) = gauss_legendre(n);
            QuadratureRule {
                cell,
                points: x.iter().map(|&xi| [xi, 0.0]).collect(),
                weights: w,
                exactness: 2 * n - 1,
            }
        }
        CellKind::Triangle => {
            // Duffy transform: (xi, eta) in [0,1]^2 -> (xi (1-eta), eta).
            // Monomial x^a y^b pulls back to xi^a (1-eta)^(a+1) eta^b, so the
            // eta direction needs one extra degree of exactness.
            let n_xi = exactness / 2 + 1;
            let n_eta = (exactness + 1) / 2 + 1;
            assert!(
                n_xi <= MAX_POINTS_1D && n_eta <= MAX_POINTS_1D,
                "unsupported quadrature exactness {exactness}"
            );
            let (xq, xw) = gauss_legendre(n_xi);
            let (eq, ew) = gauss_legendre(n_eta);
            let mut points = Vec::with_capacity(n_xi * n_eta);
            let mut weights = Vec::with_capacity(n_xi * n_eta);
            for (i, &xi) in xq.iter().enumerate() {
                for (j, &eta) in eq.iter().enumerate() {
                    points.push([xi * (1.0 - eta), eta]);
                    weights.push(xw[i] * ew[j] * (1.0 - eta));
                }
            }
            QuadratureRule {
                cell,
                points,
                weights,
                exactness,
            }
        }
    }
}

/// Composite rule: the base rule replicated over a uniform refinement of
/// the unit cell (2^levels per edge), for integrands with sharp layers.
pub fn composite_rule(cell: CellKind, exactness: usize, levels: u32) -> QuadratureRule {
    let base = quadrature_rule(cell, exactness);
    if levels == 0 {
        return base;
    }
    let n = 1usize << levels;
    let h = 1.0 / n as f64;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match cell {
        CellKind::Line => {
            for k in 0..n {
                for (p, w) in base.points.iter().zip(&base.weights) {
                    points.push([(k as f64 + p[0]) * h, 0.0]);
                    weights.push(w * h);
                }
            }
        }
        CellKind::Triangle => {
            // Uniform subdivision into upward and downward subtriangles.
            let scale = h * h;
            for j in 0..n {
                for i in 0..(n - j) {
                    let (x0, y0) = (i as f64 * h, j as f64 * h);
                    for (p, w) in base.points.iter().zip(&base.weights) {
                        points.push([x0 + p[0] * h, y0 + p[1] * h]);
                        weights.push(w * scale);
                    }
                    if i + j + 1 < n {
                        // Downward triangle with vertices (x0+h, y0),
                        // (x0+h, y0+h), (x0, y0+h).
                        for (p, w) in base.points.iter().zip(&base.weights) {
                            points.push([x0 + h - p[0] * h, y0 + h - p[1] * h]);
                            weights.push(w * scale);
                        }
                    }
                }
            }
        }
    }
    QuadratureRule {
        cell,
        points,
        weights,
        exactness: base.exactness,
    }
}

/// Shifted Legendre values on `[0,1]`, generic so jets give the gradients.
fn legendre_shifted<S: Scalar>(p: usize, x: &S) -> Vec<S> {
    let t = x.clone() * 2.0 - 1.0;
    let mut vals = Vec::with_capacity(p + 1);
    vals.push(S::one());
    if p >= 1 {
        vals.push(t.clone());
    }
    for k in 2..=p {
        let kf = k as f64;
        let next = (t.clone() * &vals[k - 1] * (2.0 * kf - 1.0) - vals[k - 2].clone() * (kf - 1.0))
            / kf;
        vals.push(next);
    }
    vals
}

/// Jacobi P_n^(alpha,0) values at `t` for n = 0..=p.
fn jacobi_alpha0<S: Scalar>(p: usize, alpha: f64, t: &S) -> Vec<S> {
    let mut vals = Vec::with_capacity(p + 1);
    vals.push(S::one());
    if p >= 1 {
        vals.push(t.clone() * (0.5 * (alpha + 2.0)) + 0.5 * alpha);
    }
    for n in 2..=p {
        let nf = n as f64;
        let c = 2.0 * nf + alpha;
        let a1 = 2.0 * nf * (nf + alpha) * (c - 2.0);
        let a2 = (c - 1.0) * alpha * alpha;
        let a3 = (c - 1.0) * c * (c - 2.0);
        let a4 = 2.0 * (nf + alpha - 1.0) * (nf - 1.0) * c;
        let next = ((t.clone() * a3 + a2) * &vals[n - 1] - vals[n - 2].clone() * a4) / a1;
        vals.push(next);
    }
    vals
}

/// Scaled Legendre psi_i(x, w) = P_i((2x - w)/w) * w^i, polynomial in (x, w).
fn scaled_legendre<S: Scalar>(p: usize, x: &S, w: &S) -> Vec<S> {
    let mut vals = Vec::with_capacity(p + 1);
    vals.push(S::one());
    if p >= 1 {
        vals.push(x.clone() * 2.0 - w.clone());
    }
    for i in 2..=p {
        let ifl = i as f64;
        let lin = x.clone() * 2.0 - w.clone();
        let next = (lin * &vals[i - 1] * (2.0 * ifl - 1.0)
            - (w.clone() * w.clone()) * &vals[i - 2] * (ifl - 1.0))
            / ifl;
        vals.push(next);
    }
    vals
}

/// Modal polynomial space of total degree `p` on a reference cell.
///
/// Basis functions are numerically normalized to unit L2 norm on the
/// reference cell.
#[derive(Clone, Debug)]
pub struct PolynomialSpace {
    pub cell: CellKind,
    pub degree: usize,
    pub dim: usize,
    norms: Vec<f64>,
}

impl PolynomialSpace {
    pub fn new(cell: CellKind, degree: usize) -> Self {
        let dim = cell.space_dim(degree);
        let mut space = PolynomialSpace {
            cell,
            degree,
            dim,
            norms: vec![1.0; dim],
        };
        let rule = quadrature_rule(cell, 2 * degree.max(1));
        let mut gram_diag = vec![0.0; dim];
        for (q, pt) in rule.points.iter().enumerate() {
            let vals = space.eval_raw(pt);
            for (i, v) in vals.iter().enumerate() {
                gram_diag[i] += rule.weights[q] * v * v;
            }
        }
        for (n, g) in space.norms.iter_mut().zip(&gram_diag) {
            *n = 1.0 / g.sqrt();
        }
        space
    }

    fn eval_generic<S: Scalar>(&self, x: &S, y: &S) -> Vec<S> {
        match self.cell {
            CellKind::Line => legendre_shifted(self.degree, x),
            CellKind::Triangle => {
                let p = self.degree;
                let w = -y.clone() + 1.0;
                let psi = scaled_legendre(p, x, &w);
                let t = y.clone() * 2.0 - 1.0;
                let mut out = Vec::with_capacity(self.dim);
                for i in 0..=p {
                    let jac = jacobi_alpha0(p - i, 2.0 * i as f64 + 1.0, &t);
                    for j in 0..=(p - i) {
                        out.push(psi[i].clone() * &jac[j]);
                    }
                }
                out
            }
        }
    }

    fn eval_raw(&self, pt: &RefPoint) -> Vec<f64> {
        self.eval_generic(&pt[0], &pt[1])
    }

    /// Values of all basis functions at a reference point.
    pub fn eval(&self, pt: &RefPoint) -> Vec<f64> {
        let mut vals = self.eval_raw(pt);
        for (v, n) in vals.iter_mut().zip(&self.norms) {
            *v *= n;
        }
        vals
    }

    /// Values and reference gradients of all basis functions at a point.
    pub fn eval_with_grad(&self, pt: &RefPoint) -> (Vec<f64>, Vec<[f64; 2]>) {
        let x = Jet::variable(pt[0], 0, 2);
        let y = Jet::variable(pt[1], 1, 2);
        let jets = self.eval_generic(&x, &y);
        let mut vals = Vec::with_capacity(self.dim);
        let mut grads = Vec::with_capacity(self.dim);
        for (jet, n) in jets.iter().zip(&self.norms) {
            vals.push(jet.v * n);
            grads.push([jet.deriv(0) * n, jet.deriv(1) * n]);
        }
        (vals, grads)
    }

    /// Tabulate values and gradients at the nodes of a quadrature rule.
    pub fn tabulate(&self, rule: &QuadratureRule) -> BasisTable {
        BasisTable::build(rule.points.iter(), self.dim, |pt| self.eval_with_grad(pt))
    }
}

/// Basis values and reference gradients tabulated at a fixed point set.
///
/// `values[(q, i)]` is basis function `i` at point `q`; `grads[k]` holds the
/// k-th reference derivative in the same layout.
#[derive(Clone, Debug)]
pub struct BasisTable {
    pub values: DMatrix<f64>,
    pub grads: [DMatrix<f64>; 2],
}

impl BasisTable {
    fn build<'a, I, F>(points: I, dim: usize, eval: F) -> Self
    where
        I: Iterator<Item = &'a RefPoint>,
        F: Fn(&RefPoint) -> (Vec<f64>, Vec<[f64; 2]>),
    {
        let pts: Vec<&RefPoint> = points.collect();
        let nq = pts.len();
        let mut values = DMatrix::zeros(nq, dim);
        let mut gx = DMatrix::zeros(nq, dim);
        let mut gy = DMatrix::zeros(nq, dim);
        for (q, pt) in pts.iter().enumerate() {
            let (vals, grads) = eval(pt);
            for i in 0..dim {
                values[(q, i)] = vals[i];
                gx[(q, i)] = grads[i][0];
                gy[(q, i)] = grads[i][1];
            }
        }
        BasisTable {
            values,
            grads: [gx, gy],
        }
    }
}

/// Lagrange nodes and basis for the continuous grid-mapping space.
///
/// Node order: cell vertices, then nodes interior to each edge (in local
/// edge order), then cell-interior nodes.
#[derive(Clone, Debug)]
pub struct NodalBasis {
    pub cell: CellKind,
    pub degree: usize,
    pub dim: usize,
    pub nodes: Vec<RefPoint>,
    modal: PolynomialSpace,
    /// Inverse generalized Vandermonde mapping modal to nodal coefficients.
    inv_vandermonde: DMatrix<f64>,
}

impl NodalBasis {
    pub fn new(cell: CellKind, degree: usize) -> Self {
        assert!(degree >= 1, "grid mapping needs at least linear cells");
        let nodes = lagrange_nodes(cell, degree);
        let modal = PolynomialSpace::new(cell, degree);
        let dim = modal.dim;
        assert_eq!(nodes.len(), dim);
        let mut v = DMatrix::zeros(dim, dim);
        for (k, node) in nodes.iter().enumerate() {
            let vals = modal.eval(node);
            for i in 0..dim {
                v[(k, i)] = vals[i];
            }
        }
        // Nodal coefficients in the modal basis are rows of V^{-T}.
        let inv_vandermonde = v
            .lu()
            .try_inverse()
            .expect("nodal Vandermonde must be invertible")
            .transpose();
        NodalBasis {
            cell,
            degree,
            dim,
            nodes,
            modal,
            inv_vandermonde,
        }
    }

    /// Values of the Lagrange basis functions at a reference point.
    pub fn eval(&self, pt: &RefPoint) -> Vec<f64> {
        let modal_vals = DVector::from_vec(self.modal.eval(pt));
        let vals = &self.inv_vandermonde * modal_vals;
        vals.iter().copied().collect()
    }

    /// Values and reference gradients of the Lagrange basis at a point.
    pub fn eval_with_grad(&self, pt: &RefPoint) -> (Vec<f64>, Vec<[f64; 2]>) {
        let (mv, mg) = self.modal.eval_with_grad(pt);
        let n = self.dim;
        let mut vals = vec![0.0; n];
        let mut grads = vec![[0.0, 0.0]; n];
        for k in 0..n {
            for i in 0..n {
                let c = self.inv_vandermonde[(k, i)];
                vals[k] += c * mv[i];
                grads[k][0] += c * mg[i][0];
                grads[k][1] += c * mg[i][1];
            }
        }
        (vals, grads)
    }

    pub fn tabulate(&self, rule: &QuadratureRule) -> BasisTable {
        BasisTable::build(rule.points.iter(), self.dim, |pt| self.eval_with_grad(pt))
    }
}

/// Equispaced Lagrange nodes: vertices, edge interiors, then cell interior.
fn lagrange_nodes(cell: CellKind, q: usize) -> Vec<RefPoint> {
    let mut nodes = Vec::new();
    match cell {
        CellKind::Line => {
            nodes.push([0.0, 0.0]);
            nodes.push([1.0, 0.0]);
            for k in 1..q {
                nodes.push([k as f64 / q as f64, 0.0]);
            }
        }
        CellKind::Triangle => {
            let verts: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
            nodes.extend_from_slice(&verts);
            // Local edges (v0,v1), (v1,v2), (v2,v0).
            for (a, b) in [(0usize, 1usize), (1, 2), (2, 0)] {
                for k in 1..q {
                    let s = k as f64 / q as f64;
                    nodes.push([
                        verts[a][0] * (1.0 - s) + verts[b][0] * s,
                        verts[a][1] * (1.0 - s) + verts[b][1] * s,
                    ]);
                }
            }
            for j in 1..q {
                for i in 1..q {
                    if i + j < q {
                        nodes.push([i as f64 / q as f64, j as f64 / q as f64]);
                    }
                }
            }
        }
    }
    nodes
}

/// Single-valued polynomial space on a facet, in the unit facet parameter,
/// orthonormal in L2 of the unit interval.
///
/// Facets of 1D cells are points, carrying the constant function only.
#[derive(Clone, Debug)]
pub struct TraceSpace {
    pub degree: usize,
    pub dim: usize,
    /// Length of the reference facet (0 for point facets).
    pub length: f64,
}

impl TraceSpace {
    pub fn point() -> Self {
        TraceSpace {
            degree: 0,
            dim: 1,
            length: 0.0,
        }
    }

    pub fn segment(degree: usize, length: f64) -> Self {
        TraceSpace {
            degree,
            dim: degree + 1,
            length,
        }
    }

    /// Basis values at unit parameter `s` in `[0, 1]`.
    pub fn eval(&self, s: f64) -> Vec<f64> {
        if self.length == 0.0 {
            return vec![1.0];
        }
        let mut vals = legendre_shifted(self.degree, &s);
        for (n, v) in vals.iter_mut().enumerate() {
            *v *= (2.0 * n as f64 + 1.0).sqrt();
        }
        vals
    }
}

/// L2 projection of a function onto the broken modal space over the grid.
///
/// Returns per-cell modal coefficients, one row per basis function and one
/// column per component of `f`. Minimizes the physical-space L2 error, so
/// the cell mass matrices carry the mapping determinant.
pub fn l2_project<F>(
    f: F,
    mesh: &ReferenceMesh,
    geometry: &GeometryField,
    space: &PolynomialSpace,
    n_components: usize,
) -> Result<Vec<DMatrix<f64>>, String>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let rule = composite_rule(space.cell, 2 * space.degree + 4, 5);
    let table = space.tabulate(&rule);
    let mut coeffs = Vec::with_capacity(mesh.n_cells());
    for cell in 0..mesh.n_cells() {
        let n = space.dim;
        let mut mass = DMatrix::zeros(n, n);
        let mut rhs = DMatrix::zeros(n, n_components);
        let cell_measure = mesh.cell_maps[cell].det.abs();
        for (q, pt) in rule.points.iter().enumerate() {
            let geo = geometry.eval(mesh, cell, pt);
            if geo.det <= 0.0 {
                return Err(format!("invalid geometry in cell {cell} during projection"));
            }
            let w = rule.weights[q] * geo.det * cell_measure;
            let fx = f(&geo.x[..mesh.dim]);
            assert_eq!(fx.len(), n_components);
            for i in 0..n {
                let vi = table.values[(q, i)];
                for j in 0..n {
                    mass[(i, j)] += w * vi * table.values[(q, j)];
                }
                for c in 0..n_components {
                    rhs[(i, c)] += w * vi * fx[c];
                }
            }
        }
        let sol = mass
            .lu()
            .solve(&rhs)
            .ok_or_else(|| format!("singular mass matrix in cell {cell}"))?;
        coeffs.push(sol);
    }
    Ok(coeffs)
}

/// L2 norm of `f - f_h` over the mapped grid, by quadrature.
pub fn l2_error<F>(
    f: F,
    coeffs: &[DMatrix<f64>],
    mesh: &ReferenceMesh,
    geometry: &GeometryField,
    space: &PolynomialSpace,
) -> f64
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let rule = composite_rule(space.cell, 2 * space.degree + 6, 5);
    let table = space.tabulate(&rule);
    let mut err2 = 0.0;
    for cell in 0..mesh.n_cells() {
        let cell_measure = mesh.cell_maps[cell].det.abs();
        for (q, pt) in rule.points.iter().enumerate() {
            let geo = geometry.eval(mesh, cell, pt);
            let w = rule.weights[q] * geo.det * cell_measure;
            let fx = f(&geo.x[..mesh.dim]);
            for (c, fc) in fx.iter().enumerate() {
                let mut fh = 0.0;
                for i in 0..space.dim {
                    fh += table.values[(q, i)] * coeffs[cell][(i, c)];
                }
                err2 += w * (fc - fh) * (fc - fh);
            }
        }
    }
    err2.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_rule_weights_sum_to_one() {
        let rule = quadrature_rule(CellKind::Line, 3);
        assert_eq!(rule.len(), 2);
        let sum: f64 = rule.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn line_rule_midpoint_for_constants() {
        let rule = quadrature_rule(CellKind::Line, 1);
        assert_eq!(rule.len(), 1);
        assert!((rule.points[0][0] - 0.5).abs() < 1e-15);
        assert!((rule.weights[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn triangle_rule_integrates_xy() {
        let rule = quadrature_rule(CellKind::Triangle, 2);
        let integral: f64 = rule
            .points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| w * p[0] * p[1])
            .sum();
        assert!((integral - 1.0 / 24.0).abs() < 1e-15, "got {integral}");
    }

    #[test]
    fn monomial_sweep_matches_analytic_integrals() {
        // Exact reference-triangle integral of x^a y^b is a! b! / (a+b+2)!.
        for exactness in [2usize, 5, 9, 12] {
            let rule = quadrature_rule(CellKind::Triangle, exactness);
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            for a in 0..=exactness {
                for b in 0..=(exactness - a) {
                    let quad: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                        .sum();
                    let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                    assert!(
                        (quad - exact).abs() < 1e-13 * exact.max(1.0),
                        "x^{a} y^{b} at exactness {exactness}: {quad} vs {exact}"
                    );
                }
            }
        }
        for exactness in [1usize, 3, 9, 17] {
            let rule = quadrature_rule(CellKind::Line, exactness);
            for a in 0..=exactness {
                let quad: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(p, w)| w * p[0].powi(a as i32))
                    .sum();
                let exact = 1.0 / (a as f64 + 1.0);
                assert!((quad - exact).abs() < 1e-13, "x^{a}: {quad} vs {exact}");
            }
        }
    }

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn p0_space_is_constant() {
        let space = PolynomialSpace::new(CellKind::Triangle, 0);
        assert_eq!(space.dim, 1);
        let (v, g) = space.eval_with_grad(&[0.3, 0.2]);
        let (v2, _) = space.eval_with_grad(&[0.1, 0.7]);
        assert!((v[0] - v2[0]).abs() < 1e-15);
        assert!(g[0][0].abs() < 1e-15 && g[0][1].abs() < 1e-15);
    }

    #[test]
    fn nodal_line_basis_has_kronecker_property() {
        let basis = NodalBasis::new(CellKind::Line, 1);
        let at0 = basis.eval(&[0.0, 0.0]);
        let at1 = basis.eval(&[1.0, 0.0]);
        assert!((at0[0] - 1.0).abs() < 1e-14 && at0[1].abs() < 1e-14);
        assert!((at1[1] - 1.0).abs() < 1e-14 && at1[0].abs() < 1e-14);
    }

    #[test]
    fn nodal_kronecker_property_all_cells() {
        for (cell, degree) in [(CellKind::Line, 4), (CellKind::Triangle, 3)] {
            let basis = NodalBasis::new(cell, degree);
            for (k, node) in basis.nodes.iter().enumerate() {
                let vals = basis.eval(node);
                for (i, v) in vals.iter().enumerate() {
                    let expect = if i == k { 1.0 } else { 0.0 };
                    assert!((v - expect).abs() < 1e-10, "{cell:?} p={degree} node {k}");
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-6;
        for (cell, degree, pt) in [
            (CellKind::Line, 5, [0.37, 0.0]),
            (CellKind::Triangle, 4, [0.21, 0.33]),
        ] {
            let space = PolynomialSpace::new(cell, degree);
            let (_, grads) = space.eval_with_grad(&pt);
            for axis in 0..cell.dim() {
                let mut pp = pt;
                let mut pm = pt;
                pp[axis] += h;
                pm[axis] -= h;
                let vp = space.eval(&pp);
                let vm = space.eval(&pm);
                for i in 0..space.dim {
                    let fd = (vp[i] - vm[i]) / (2.0 * h);
                    let scale = grads[i][axis].abs().max(1.0);
                    assert!(
                        (grads[i][axis] - fd).abs() / scale < 1e-7,
                        "{cell:?} basis {i} axis {axis}: {} vs fd {fd}",
                        grads[i][axis]
                    );
                }
            }
        }
    }

    #[test]
    fn modal_basis_is_orthonormal() {
        for (cell, degree) in [(CellKind::Line, 6), (CellKind::Triangle, 4)] {
            let space = PolynomialSpace::new(cell, degree);
            let rule = quadrature_rule(cell, 2 * degree);
            let table = space.tabulate(&rule);
            for i in 0..space.dim {
                for j in 0..space.dim {
                    let mut g = 0.0;
                    for q in 0..rule.len() {
                        g += rule.weights[q] * table.values[(q, i)] * table.values[(q, j)];
                    }
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((g - expect).abs() < 1e-11, "{cell:?} gram[{i},{j}] = {g}");
                }
            }
        }
    }

    #[test]
    fn trace_space_on_point_facet_is_constant() {
        let tr = TraceSpace::point();
        assert_eq!(tr.dim, 1);
        assert_eq!(tr.eval(0.0), vec![1.0]);
    }
}
