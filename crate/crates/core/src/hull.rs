//! Incremental 3D convex hull with a half-space view.

use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HullError {
    #[error("points span fewer than three dimensions")]
    Degenerate,
}

/// Closed triangulated hull. Faces are wound counter-clockwise seen from outside.
#[derive(Debug, Clone)]
pub struct ConvexHull {
    pub points: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

/// `normal · x ≤ offset`, with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSpace {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl HalfSpace {
    pub fn slack(&self, x: &Vector3<f64>) -> f64 {
        self.offset - self.normal.dot(x)
    }
}

fn face_normal(p: &[Vector3<f64>], f: &[usize; 3]) -> Vector3<f64> {
    (p[f[1]] - p[f[0]]).cross(&(p[f[2]] - p[f[0]]))
}

impl ConvexHull {
    pub fn new(points: &[Vector3<f64>]) -> Result<Self, HullError> {
        if points.len() < 4 {
            return Err(HullError::Degenerate);
        }
        let pts = points.to_vec();
        let scale = pts
            .iter()
            .map(|p| (p - pts[0]).norm())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let eps = 1e-10 * scale;

        let i0 = (0..pts.len())
            .min_by(|&a, &b| pts[a].x.total_cmp(&pts[b].x))
            .unwrap();
        let i1 = argmax(&pts, |p| (p - pts[i0]).norm());
        let axis = (pts[i1] - pts[i0]).normalize();
        let i2 = argmax(&pts, |p| {
            let v = p - pts[i0];
            (v - axis * v.dot(&axis)).norm()
        });
        let n = (pts[i1] - pts[i0]).cross(&(pts[i2] - pts[i0]));
        if n.norm() < eps * scale {
            return Err(HullError::Degenerate);
        }
        let n = n.normalize();
        let i3 = argmax(&pts, |p| (p - pts[i0]).dot(&n).abs());
        if (pts[i3] - pts[i0]).dot(&n).abs() < eps {
            return Err(HullError::Degenerate);
        }

        let mut faces: Vec<[usize; 3]> = if (pts[i3] - pts[i0]).dot(&n) > 0.0 {
            vec![[i0, i2, i1], [i0, i1, i3], [i1, i2, i3], [i2, i0, i3]]
        } else {
            vec![[i0, i1, i2], [i0, i3, i1], [i1, i3, i2], [i2, i3, i0]]
        };

        for (idx, p) in pts.iter().enumerate() {
            if [i0, i1, i2, i3].contains(&idx) {
                continue;
            }
            let visible: Vec<bool> = faces
                .iter()
                .map(|f| {
                    let nn = face_normal(&pts, f);
                    let len = nn.norm();
                    len > 0.0 && (p - pts[f[0]]).dot(&nn) / len > eps
                })
                .collect();
            if !visible.iter().any(|&v| v) {
                continue;
            }
            let mut horizon = Vec::new();
            for (f, _) in faces.iter().zip(&visible).filter(|(_, v)| **v) {
                for e in 0..3 {
                    let (a, b) = (f[e], f[(e + 1) % 3]);
                    let shared = faces.iter().zip(&visible).any(|(g, vis)| {
                        *vis && (0..3).any(|k| g[k] == b && g[(k + 1) % 3] == a)
                    });
                    if !shared {
                        horizon.push((a, b));
                    }
                }
            }
            let mut kept: Vec<[usize; 3]> = faces
                .iter()
                .zip(&visible)
                .filter(|(_, v)| !**v)
                .map(|(f, _)| *f)
                .collect();
            kept.extend(horizon.into_iter().map(|(a, b)| [a, b, idx]));
            faces = kept;
        }
        Ok(Self { points: pts, faces })
    }

    pub fn vertex_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.faces.iter().flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn interior_point(&self) -> Vector3<f64> {
        let v = self.vertex_indices();
        v.iter().map(|&i| self.points[i]).sum::<Vector3<f64>>() / v.len() as f64
    }

    pub fn volume(&self) -> f64 {
        let c = self.interior_point();
        self.faces
            .iter()
            .map(|f| {
                let (a, b, d) = (self.points[f[0]] - c, self.points[f[1]] - c, self.points[f[2]] - c);
                a.dot(&b.cross(&d)) / 6.0
            })
            .sum()
    }

    /// Unique facet planes; coplanar triangles collapse to one half-space.
    pub fn halfspaces(&self) -> Vec<HalfSpace> {
        let mut out: Vec<HalfSpace> = Vec::new();
        for f in &self.faces {
            let n = face_normal(&self.points, f);
            let len = n.norm();
            if len == 0.0 {
                continue;
            }
            let normal = n / len;
            let offset = normal.dot(&self.points[f[0]]);
            let dup = out
                .iter()
                .any(|h| (h.normal - normal).norm() < 1e-9 && (h.offset - offset).abs() < 1e-9);
            if !dup {
                out.push(HalfSpace { normal, offset });
            }
        }
        out
    }

    pub fn contains(&self, x: &Vector3<f64>, tol: f64) -> bool {
        self.halfspaces().iter().all(|h| h.slack(x) >= -tol)
    }
}

fn argmax(pts: &[Vector3<f64>], f: impl Fn(&Vector3<f64>) -> f64) -> usize {
    let mut best = 0;
    let mut val = f64::NEG_INFINITY;
    for (i, p) in pts.iter().enumerate() {
        let v = f(p);
        if v > val {
            val = v;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> Vec<Vector3<f64>> {
        let mut v = Vec::new();
        for i in 0..8 {
            v.push(Vector3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64));
        }
        v.push(Vector3::new(0.5, 0.5, 0.5));
        v
    }

    #[test]
    fn cube_volume_and_planes() {
        let h = ConvexHull::new(&cube()).unwrap();
        assert!((h.volume() - 1.0).abs() < 1e-12);
        assert_eq!(h.halfspaces().len(), 6);
        assert_eq!(h.vertex_indices().len(), 8);
    }

    #[test]
    fn flat_points_are_degenerate() {
        let pts: Vec<_> = (0..6).map(|i| Vector3::new(i as f64, (i * i) as f64, 0.0)).collect();
        assert_eq!(ConvexHull::new(&pts).unwrap_err(), HullError::Degenerate);
    }
}
