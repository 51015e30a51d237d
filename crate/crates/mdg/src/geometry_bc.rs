//! Geometric boundary conditions: the projection b(u) that keeps movable
//! grid points on the physical boundary, and its derivative action b'(u).
//!
//! Constraints are attached per geometry node, derived from the boundary
//! facet tags. Nodes carrying two independent constraints (domain corners)
//! are pinned.

use crate::mesh::{BoundaryTag, GeometryField, ReferenceMesh};
use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConstraintError {
    #[error("slide-circle node {node} sits at the circle center")]
    CircleCenter { node: usize },
}

/// Constraint on one geometry node.
#[derive(Clone, Debug, PartialEq)]
pub enum Constraint {
    Free,
    Fixed { anchor: [f64; 2] },
    SlidePlane { normal: [f64; 2], offset: f64 },
    SlideCircle { center: [f64; 2], radius: f64 },
}

/// Per-node constraint table for a mesh/geometry pair.
#[derive(Clone, Debug)]
pub struct GeometryConstraints {
    pub constraints: Vec<Constraint>,
}

impl GeometryConstraints {
    /// All nodes free (useful for tests and frozen-geometry runs).
    pub fn all_free(n_nodes: usize) -> Self {
        GeometryConstraints {
            constraints: vec![Constraint::Free; n_nodes],
        }
    }

    pub fn all_fixed(geometry: &GeometryField) -> Self {
        GeometryConstraints {
            constraints: geometry
                .node_pos
                .iter()
                .map(|&p| Constraint::Fixed { anchor: p })
                .collect(),
        }
    }

    /// Derive node constraints from the geometric boundary tags on facets.
    /// Boundary facets without a geometric tag pin their nodes; nodes shared
    /// by two non-parallel constraints become fixed corners.
    pub fn from_mesh(mesh: &ReferenceMesh, geometry: &GeometryField) -> Self {
        let mut per_node: Vec<Vec<Constraint>> = vec![Vec::new(); geometry.n_nodes()];
        for (fid, facet) in mesh.facets.iter().enumerate() {
            if !facet.is_boundary() {
                continue;
            }
            let mut geo_tags: Vec<Constraint> = facet
                .tags
                .iter()
                .filter_map(|tag| match tag {
                    BoundaryTag::SlidePlane { normal, offset } => {
                        let n = Vector2::new(normal[0], normal[1]).normalize();
                        Some(Constraint::SlidePlane {
                            normal: [n[0], n[1]],
                            offset: *offset,
                        })
                    }
                    BoundaryTag::SlideCircle { center, radius } => Some(Constraint::SlideCircle {
                        center: *center,
                        radius: *radius,
                    }),
                    BoundaryTag::Fixed => Some(Constraint::Fixed { anchor: [0.0, 0.0] }),
                    _ => None,
                })
                .collect();
            if geo_tags.is_empty() {
                geo_tags.push(Constraint::Fixed { anchor: [0.0, 0.0] });
            }
            for &node in &geometry.facet_nodes[fid] {
                for tag in &geo_tags {
                    if !per_node[node].contains(tag) {
                        per_node[node].push(tag.clone());
                    }
                }
            }
        }
        let constraints = per_node
            .iter()
            .enumerate()
            .map(|(node, tags)| match tags.len() {
                0 => Constraint::Free,
                1 => match &tags[0] {
                    Constraint::Fixed { .. } => Constraint::Fixed {
                        anchor: geometry.node_pos[node],
                    },
                    c => c.clone(),
                },
                _ => Constraint::Fixed {
                    anchor: geometry.node_pos[node],
                },
            })
            .collect();
        GeometryConstraints { constraints }
    }

    /// Project a single position under one node's constraint.
    pub fn project_point(&self, node: usize, p: [f64; 2]) -> Result<[f64; 2], ConstraintError> {
        match &self.constraints[node] {
            Constraint::Free => Ok(p),
            Constraint::Fixed { anchor } => Ok(*anchor),
            Constraint::SlidePlane { normal, offset } => {
                let d = normal[0] * p[0] + normal[1] * p[1] - offset;
                Ok([p[0] - d * normal[0], p[1] - d * normal[1]])
            }
            Constraint::SlideCircle { center, radius } => {
                let r = [p[0] - center[0], p[1] - center[1]];
                let len = (r[0] * r[0] + r[1] * r[1]).sqrt();
                if len < 1e-14 * radius.max(1.0) {
                    return Err(ConstraintError::CircleCenter { node });
                }
                Ok([
                    center[0] + radius * r[0] / len,
                    center[1] + radius * r[1] / len,
                ])
            }
        }
    }

    /// Apply b(u) in place: restores anchors and drops slide nodes onto
    /// their plane or circle. Idempotent.
    pub fn project(&self, geometry: &mut GeometryField) -> Result<(), ConstraintError> {
        for node in 0..geometry.n_nodes() {
            geometry.node_pos[node] = self.project_point(node, geometry.node_pos[node])?;
        }
        Ok(())
    }

    /// Derivative b'(u) at one node as a 2x2 projector. Positions are
    /// assumed already projected, so circle tangents are evaluated on the
    /// circle itself.
    pub fn projector(&self, node: usize, pos: [f64; 2]) -> Matrix2<f64> {
        match &self.constraints[node] {
            Constraint::Free => Matrix2::identity(),
            Constraint::Fixed { .. } => Matrix2::zeros(),
            Constraint::SlidePlane { normal, .. } => {
                let n = Vector2::new(normal[0], normal[1]);
                Matrix2::identity() - n * n.transpose()
            }
            Constraint::SlideCircle { center, .. } => {
                let r = Vector2::new(pos[0] - center[0], pos[1] - center[1]);
                let rhat = r.normalize();
                Matrix2::identity() - rhat * rhat.transpose()
            }
        }
    }

    /// Apply b'(u) to a perturbation of every node position.
    pub fn derivative_apply(&self, geometry: &GeometryField, delta: &[[f64; 2]]) -> Vec<[f64; 2]> {
        delta
            .iter()
            .enumerate()
            .map(|(node, d)| {
                let p = self.projector(node, geometry.node_pos[node]);
                let v = p * Vector2::new(d[0], d[1]);
                [v[0], v[1]]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(constraint: Constraint) -> GeometryConstraints {
        GeometryConstraints {
            constraints: vec![constraint],
        }
    }

    #[test]
    fn free_nodes_are_untouched() {
        let c = single(Constraint::Free);
        assert_eq!(c.project_point(0, [0.4, -1.2]).unwrap(), [0.4, -1.2]);
        assert_eq!(c.projector(0, [0.4, -1.2]), Matrix2::identity());
    }

    #[test]
    fn circle_projection_is_radial() {
        let c = single(Constraint::SlideCircle {
            center: [0.0, 0.0],
            radius: 1.0,
        });
        let p = c.project_point(0, [2.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1].abs() < 1e-15);
    }

    #[test]
    fn plane_projection_is_orthogonal_drop() {
        let c = single(Constraint::SlidePlane {
            normal: [0.0, 1.0],
            offset: 0.0,
        });
        let p = c.project_point(0, [0.3, 0.4]).unwrap();
        assert!((p[0] - 0.3).abs() < 1e-15 && p[1].abs() < 1e-15);
    }

    #[test]
    fn fixed_derivative_is_zero() {
        let c = single(Constraint::Fixed { anchor: [1.0, 2.0] });
        assert_eq!(c.projector(0, [5.0, 5.0]), Matrix2::zeros());
    }

    #[test]
    fn plane_derivative_keeps_tangential_component() {
        let c = single(Constraint::SlidePlane {
            normal: [0.0, 1.0],
            offset: 0.0,
        });
        let p = c.projector(0, [0.0, 0.0]) * Vector2::new(1.0, 1.0);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1].abs() < 1e-15);
    }

    #[test]
    fn circle_derivative_is_tangent() {
        let c = single(Constraint::SlideCircle {
            center: [0.0, 0.0],
            radius: 1.0,
        });
        let p = c.projector(0, [1.0, 0.0]) * Vector2::new(1.0, 1.0);
        assert!(p[0].abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn projection_is_idempotent() {
        for constraint in [
            Constraint::Free,
            Constraint::Fixed { anchor: [0.2, 0.7] },
            Constraint::SlidePlane {
                normal: [0.6, 0.8],
                offset: 0.3,
            },
            Constraint::SlideCircle {
                center: [1.0, -1.0],
                radius: 2.0,
            },
        ] {
            let c = single(constraint);
            let once = c.project_point(0, [1.7, 0.9]).unwrap();
            let twice = c.project_point(0, once).unwrap();
            assert!((once[0] - twice[0]).abs() < 1e-15);
            assert!((once[1] - twice[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn circle_center_is_rejected() {
        let c = single(Constraint::SlideCircle {
            center: [0.5, 0.5],
            radius: 1.0,
        });
        assert!(c.project_point(0, [0.5, 0.5]).is_err());
    }

    #[test]
    fn derivative_matches_finite_differences_of_projection() {
        let cases = [
            Constraint::SlidePlane {
                normal: [0.6, 0.8],
                offset: 0.3,
            },
            Constraint::SlideCircle {
                center: [0.0, 0.0],
                radius: 1.5,
            },
        ];
        for constraint in cases {
            let c = single(constraint);
            let base = c.project_point(0, [1.2, 0.9]).unwrap();
            let proj = c.projector(0, base);
            let h = 1e-7;
            for axis in 0..2 {
                let mut pp = base;
                let mut pm = base;
                pp[axis] += h;
                pm[axis] -= h;
                let fp = c.project_point(0, pp).unwrap();
                let fm = c.project_point(0, pm).unwrap();
                for r in 0..2 {
                    let fd = (fp[r] - fm[r]) / (2.0 * h);
                    assert!(
                        (proj[(r, axis)] - fd).abs() < 1e-8,
                        "{:?} d[{r},{axis}]: {} vs {}",
                        c.constraints[0],
                        proj[(r, axis)],
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn corners_of_tagged_rectangles_get_pinned() {
        use crate::mesh::{build_triangulated_grid, BoundaryTag, Side};
        let (mut mesh, geom) =
            build_triangulated_grid(2, 2, [0.0, 0.0, 1.0, 1.0], 2, false).unwrap();
        mesh.tag_boundary(|side| {
            let (normal, offset) = match side {
                Side::XMin => ([1.0, 0.0], 0.0),
                Side::XMax => ([1.0, 0.0], 1.0),
                Side::YMin => ([0.0, 1.0], 0.0),
                Side::YMax => ([0.0, 1.0], 1.0),
            };
            vec![
                BoundaryTag::Outflow,
                BoundaryTag::SlidePlane { normal, offset },
            ]
        });
        let constraints = GeometryConstraints::from_mesh(&mesh, &geom);
        let mut n_fixed = 0;
        let mut n_plane = 0;
        for c in &constraints.constraints {
            match c {
                Constraint::Fixed { .. } => n_fixed += 1,
                Constraint::SlidePlane { .. } => n_plane += 1,
                _ => {}
            }
        }
        assert_eq!(n_fixed, 4, "four corners");
        assert!(n_plane > 0);
    }
}
