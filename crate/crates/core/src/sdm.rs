//! Sparse discrete map: holds as inscribed ellipsoids, walls as planes.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::{self, BarrierProblem, BarrierSettings, ConicProgram, Constraint, Objective};
use crate::gripper::{is_graspable, GripperParams};
use crate::hull::{ConvexHull, HalfSpace, HullError};

pub const MAP_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_ASSOCIATION_RADIUS_M: f64 = 0.05;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("degenerate point set")]
    DegeneratePoints,
    #[error("ellipsoid fit did not converge: {0}")]
    Solver(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported map version {0}")]
    Version(u32),
    #[error("duplicate hold id {0}")]
    DuplicateId(HoldId),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<HullError> for MapError {
    fn from(_: HullError) -> Self {
        MapError::DegeneratePoints
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HoldId(pub u32);

impl fmt::Display for HoldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}", self.0)
    }
}

/// Ellipsoid `{center + R·diag(axes)·u : ‖u‖ ≤ 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center_m: Vector3<f64>,
    /// Sorted descending.
    pub semi_axes_m: Vector3<f64>,
    /// Columns are the principal directions, `det = +1`.
    pub orientation: Matrix3<f64>,
}

impl Ellipsoid {
    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.semi_axes_m.iter().product::<f64>()
    }

    /// Shape matrix `B` with the ellipsoid `{B u + c}`.
    pub fn shape(&self) -> Matrix3<f64> {
        self.orientation * Matrix3::from_diagonal(&self.semi_axes_m) * self.orientation.transpose()
    }

    /// Support-function slack against a half-space: `offset − (n·c + ‖B n‖)`.
    pub fn slack(&self, h: &HalfSpace) -> f64 {
        h.offset - h.normal.dot(&self.center_m) - (self.shape() * h.normal).norm()
    }

    pub fn equivalent_radius(&self) -> f64 {
        self.semi_axes_m.iter().product::<f64>().cbrt()
    }

    pub fn smallest_axis(&self) -> Vector3<f64> {
        self.orientation.column(2).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hold {
    pub id: HoldId,
    pub center_m: Vector3<f64>,
    pub semi_axes_m: Vector3<f64>,
    pub orientation: Matrix3<f64>,
    /// RMS spread of the observed centers, `sqrt(trace(cov)/3)`.
    pub centroid_variance_m: f64,
    pub surface_slope_deg: f64,
    pub observations: u32,
    /// Welford accumulator of the center scatter.
    pub center_scatter_m2: Matrix3<f64>,
}

impl Hold {
    pub fn from_ellipsoid(id: HoldId, e: &Ellipsoid, wall_normal: &Vector3<f64>) -> Self {
        Self {
            id,
            center_m: e.center_m,
            semi_axes_m: e.semi_axes_m,
            orientation: e.orientation,
            centroid_variance_m: 0.0,
            surface_slope_deg: surface_slope_deg(e, wall_normal),
            observations: 1,
            center_scatter_m2: Matrix3::zeros(),
        }
    }

    pub fn ellipsoid(&self) -> Ellipsoid {
        Ellipsoid {
            center_m: self.center_m,
            semi_axes_m: self.semi_axes_m,
            orientation: self.orientation,
        }
    }

    pub fn graspable(&self, gripper: &GripperParams) -> bool {
        is_graspable(gripper, 2.0 * self.semi_axes_m[2], self.centroid_variance_m)
    }
}

/// Angle between the hold's smallest principal axis and the wall normal, in [0, 90].
pub fn surface_slope_deg(e: &Ellipsoid, wall_normal: &Vector3<f64>) -> f64 {
    let c = e.smallest_axis().dot(&wall_normal.normalize()).abs().min(1.0);
    c.acos().to_degrees()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallPlane {
    pub normal: Vector3<f64>,
    pub offset_m: f64,
    pub inlier_rms_m: f64,
}

impl WallPlane {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset_m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMap {
    pub version: u32,
    pub frame_id: String,
    pub units: String,
    pub association_radius_m: f64,
    pub holds: Vec<Hold>,
    pub planes: Vec<WallPlane>,
}

impl Default for SparseMap {
    fn default() -> Self {
        Self::new("wall")
    }
}

/// What `fuse_observation` did with an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuseOutcome {
    Merged(HoldId),
    Created(HoldId),
}

impl FuseOutcome {
    pub fn id(&self) -> HoldId {
        match self {
            FuseOutcome::Merged(id) | FuseOutcome::Created(id) => *id,
        }
    }
}

impl SparseMap {
    pub fn new(frame_id: &str) -> Self {
        Self {
            version: MAP_FORMAT_VERSION,
            frame_id: frame_id.to_string(),
            units: "m".to_string(),
            association_radius_m: DEFAULT_ASSOCIATION_RADIUS_M,
            holds: Vec::new(),
            planes: Vec::new(),
        }
    }

    pub fn hold(&self, id: HoldId) -> Option<&Hold> {
        self.holds.iter().find(|h| h.id == id)
    }

    pub fn next_id(&self) -> HoldId {
        HoldId(self.holds.iter().map(|h| h.id.0 + 1).max().unwrap_or(0))
    }

    /// Wall normal used for hold slopes: the first plane, else `+z`.
    pub fn wall_normal(&self) -> Vector3<f64> {
        self.planes.first().map(|p| p.normal).unwrap_or_else(Vector3::z)
    }

    pub fn add_hold(&mut self, hold: Hold) -> Result<(), MapError> {
        if self.hold(hold.id).is_some() {
            return Err(MapError::DuplicateId(hold.id));
        }
        self.holds.push(hold);
        Ok(())
    }

    pub fn nearest_hold(&self, p: &Vector3<f64>) -> Option<(&Hold, f64)> {
        self.holds
            .iter()
            .map(|h| (h, (h.center_m - p).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.id.cmp(&b.0.id)))
    }

    /// Holds whose centers lie within `radius` of `p`, nearest first.
    pub fn holds_within(&self, p: &Vector3<f64>, radius: f64) -> Vec<HoldId> {
        let mut v: Vec<(HoldId, f64)> = self
            .holds
            .iter()
            .map(|h| (h.id, (h.center_m - p).norm()))
            .filter(|(_, d)| *d <= radius)
            .collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        v.into_iter().map(|(id, _)| id).collect()
    }

    pub fn validate(&self) -> Result<(), MapError> {
        if self.version != MAP_FORMAT_VERSION {
            return Err(MapError::Version(self.version));
        }
        let mut ids: Vec<HoldId> = self.holds.iter().map(|h| h.id).collect();
        ids.sort_unstable();
        for w in ids.windows(2) {
            if w[0] == w[1] {
                return Err(MapError::DuplicateId(w[0]));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, MapError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, MapError> {
        let m: SparseMap = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MapError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<(), MapError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Log-det program over `x = (B₀₀, B₁₁, B₂₂, B₀₁, B₀₂, B₁₂, d)`.
struct MvieProgram {
    cones: ConicProgram,
}

const SYM_INDEX: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

fn unpack(x: &DVector<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let mut b = Matrix3::zeros();
    for (k, &(i, j)) in SYM_INDEX.iter().enumerate() {
        b[(i, j)] = x[k];
        b[(j, i)] = x[k];
    }
    (b, Vector3::new(x[6], x[7], x[8]))
}

fn basis(k: usize) -> Matrix3<f64> {
    let (i, j) = SYM_INDEX[k];
    let mut e = Matrix3::zeros();
    e[(i, j)] = 1.0;
    e[(j, i)] = 1.0;
    e
}

impl BarrierProblem for MvieProgram {
    fn dim(&self) -> usize {
        9
    }

    fn barrier_parameter(&self) -> f64 {
        self.cones.barrier_parameter()
    }

    fn objective(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let (b, _) = unpack(x);
        let mut g = DVector::zeros(9);
        let mut h = DMatrix::zeros(9, 9);
        let Some(ch) = b.cholesky() else {
            return (f64::INFINITY, g, h);
        };
        let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let inv = ch.inverse();
        let prods: Vec<Matrix3<f64>> = (0..6).map(|k| inv * basis(k)).collect();
        for k in 0..6 {
            g[k] = -prods[k].trace();
            for l in 0..6 {
                h[(k, l)] = (prods[k] * prods[l]).trace();
            }
        }
        (-logdet, g, h)
    }

    fn barrier(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let (b, _) = unpack(x);
        b.cholesky()?;
        self.cones.barrier(x)
    }

    fn objective_value(&self, x: &DVector<f64>) -> f64 {
        let (b, _) = unpack(x);
        match b.cholesky() {
            Some(ch) => -2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>(),
            None => f64::INFINITY,
        }
    }

    fn barrier_value(&self, x: &DVector<f64>) -> Option<f64> {
        let (b, _) = unpack(x);
        b.cholesky()?;
        self.cones.barrier_value(x)
    }
}

/// Maximum-volume ellipsoid inside the half-space intersection, starting from
/// a strictly interior point.
pub fn mvie_halfspaces(hs: &[HalfSpace], interior: &Vector3<f64>) -> Result<Ellipsoid, MapError> {
    let mut cons = Vec::with_capacity(hs.len());
    for h in hs {
        let a = h.normal;
        let mut m = DMatrix::zeros(3, 9);
        for k in 0..6 {
            let col = basis(k) * a;
            for r in 0..3 {
                m[(r, k)] = col[r];
            }
        }
        let mut d = DVector::zeros(9);
        for r in 0..3 {
            d[6 + r] = -a[r];
        }
        cons.push(Constraint::Cone {
            m,
            c: DVector::zeros(3),
            d,
            e: h.offset,
        });
    }
    let prog = MvieProgram {
        cones: ConicProgram {
            dim: 9,
            objective: Objective::Linear(DVector::zeros(9)),
            constraints: cons,
        },
    };
    let inner = hs
        .iter()
        .map(|h| h.slack(interior))
        .fold(f64::INFINITY, f64::min);
    if !(inner > 0.0) {
        return Err(MapError::DegeneratePoints);
    }
    let mut x0 = DVector::zeros(9);
    for k in 0..3 {
        x0[k] = 0.5 * inner;
    }
    x0.rows_mut(6, 3).copy_from(interior);
    let settings = BarrierSettings {
        gap_tol: 1e-10,
        ..Default::default()
    };
    let r = convex::solve(&prog, x0, &settings).map_err(|e| MapError::Solver(e.to_string()))?;
    let (b, c) = unpack(&r.x);
    Ok(ellipsoid_from_shape(&b, &c))
}

fn ellipsoid_from_shape(b: &Matrix3<f64>, c: &Vector3<f64>) -> Ellipsoid {
    let eig = SymmetricEigen::new(*b);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut rot = Matrix3::zeros();
    let mut axes = Vector3::zeros();
    for (k, &i) in idx.iter().enumerate() {
        axes[k] = eig.eigenvalues[i];
        rot.set_column(k, &eig.eigenvectors.column(i));
    }
    if rot.determinant() < 0.0 {
        let flipped = -rot.column(2);
        rot.set_column(2, &flipped);
    }
    Ellipsoid {
        center_m: *c,
        semi_axes_m: axes,
        orientation: rot,
    }
}

/// Hull of the points and its maximum-volume inscribed ellipsoid.
pub fn inscribe_ellipsoid(points: &[Vector3<f64>]) -> Result<Ellipsoid, MapError> {
    let hull = ConvexHull::new(points)?;
    // solve in a normalized frame so the tolerances are scale free
    let center = hull.interior_point();
    let scale = points.iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
    let local: Vec<Vector3<f64>> = points.iter().map(|p| (p - center) / scale).collect();
    let hull = ConvexHull::new(&local)?;
    let e = mvie_halfspaces(&hull.halfspaces(), &hull.interior_point())?;
    Ok(Ellipsoid {
        center_m: center + e.center_m * scale,
        semi_axes_m: e.semi_axes_m * scale,
        orientation: e.orientation,
    })
}

/// MVIE equivalent radius over hull equivalent radius (cube root of the volume ratio).
pub fn conservatism_check(e: &Ellipsoid, points: &[Vector3<f64>]) -> Result<f64, MapError> {
    let hull = ConvexHull::new(points)?;
    Ok((e.volume() / hull.volume()).cbrt())
}

/// Total-least-squares plane; the normal points toward `+z` when not parallel to it.
pub fn fit_plane(points: &[Vector3<f64>]) -> Result<WallPlane, MapError> {
    if points.len() < 3 {
        return Err(MapError::DegeneratePoints);
    }
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let spread = eig.eigenvalues[idx[2]].max(0.0);
    if spread == 0.0 || eig.eigenvalues[idx[1]] <= 1e-12 * spread {
        return Err(MapError::DegeneratePoints);
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(idx[0]).into_owned().normalize();
    let flip = if normal.z.abs() > 1e-12 {
        normal.z < 0.0
    } else if normal.y.abs() > 1e-12 {
        normal.y < 0.0
    } else {
        normal.x < 0.0
    };
    if flip {
        normal = -normal;
    }
    let offset = normal.dot(&c);
    let rms = (points.iter().map(|p| (normal.dot(p) - offset).powi(2)).sum::<f64>() / n).sqrt();
    Ok(WallPlane {
        normal,
        offset_m: offset,
        inlier_rms_m: rms,
    })
}

/// Associate an observed ellipsoid with the nearest hold inside the gate, or create a new hold.
pub fn fuse_observation(map: &mut SparseMap, obs: &Ellipsoid) -> FuseOutcome {
    let gate = map.association_radius_m;
    let wall = map.wall_normal();
    let target = map
        .nearest_hold(&obs.center_m)
        .filter(|(_, d)| *d < gate)
        .map(|(h, _)| h.id);
    match target {
        None => {
            let id = map.next_id();
            map.holds.push(Hold::from_ellipsoid(id, obs, &wall));
            FuseOutcome::Created(id)
        }
        Some(id) => {
            let h = map.holds.iter_mut().find(|h| h.id == id).expect("associated hold");
            let n = h.observations as f64 + 1.0;
            let delta = obs.center_m - h.center_m;
            h.center_m += delta / n;
            let delta2 = obs.center_m - h.center_m;
            h.center_scatter_m2 += delta * delta2.transpose();
            h.semi_axes_m += (obs.semi_axes_m - h.semi_axes_m) / n;
            h.observations += 1;
            let cov_trace = h.center_scatter_m2.trace() / (n - 1.0);
            h.centroid_variance_m = (cov_trace / 3.0).max(0.0).sqrt();
            FuseOutcome::Merged(id)
        }
    }
}

/// Parse whitespace- or comma-separated XYZ lines; `#` starts a comment.
pub fn parse_points(text: &str) -> Result<Vec<Vector3<f64>>, MapError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse::<f64>)
            .collect();
        let vals = vals.map_err(|e| MapError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if vals.len() != 3 {
            return Err(MapError::Parse {
                line: i + 1,
                msg: format!("expected 3 values, found {}", vals.len()),
            });
        }
        out.push(Vector3::new(vals[0], vals[1], vals[2]));
    }
    Ok(out)
}

/// Segmented point sets grouped per hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointGroups {
    #[serde(default)]
    pub wall: Vec<[f64; 3]>,
    pub holds: Vec<PointGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointGroup {
    pub name: String,
    pub points: Vec<[f64; 3]>,
}

fn to_vectors(p: &[[f64; 3]]) -> Vec<Vector3<f64>> {
    p.iter().map(|v| Vector3::new(v[0], v[1], v[2])).collect()
}

impl PointGroups {
    pub fn from_json(s: &str) -> Result<Self, MapError> {
        Ok(serde_json::from_str(s)?)
    }

    /// Fit the wall plane (if any) and one hold per group.
    pub fn build_map(&self, frame_id: &str) -> Result<SparseMap, MapError> {
        let mut map = SparseMap::new(frame_id);
        if !self.wall.is_empty() {
            map.planes.push(fit_plane(&to_vectors(&self.wall))?);
        }
        let wall = map.wall_normal();
        for (i, g) in self.holds.iter().enumerate() {
            let e = inscribe_ellipsoid(&to_vectors(&g.points))?;
            map.holds.push(Hold::from_ellipsoid(HoldId(i as u32), &e, &wall));
        }
        Ok(map)
    }
}

/// Load point sets from either a JSON grouping or a plain XYZ file (one hold).
pub fn load_point_groups(path: impl AsRef<Path>) -> Result<PointGroups, MapError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    if text.trim_start().starts_with('{') {
        return PointGroups::from_json(&text);
    }
    let pts = parse_points(&text)?;
    Ok(PointGroups {
        wall: Vec::new(),
        holds: vec![PointGroup {
            name: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            points: pts.iter().map(|p| [p.x, p.y, p.z]).collect(),
        }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn octahedron_ball() {
        let mut pts = Vec::new();
        for k in 0..3 {
            for s in [-1.0, 1.0] {
                let mut v = Vector3::zeros();
                v[k] = s;
                pts.push(v);
            }
        }
        let e = inscribe_ellipsoid(&pts).unwrap();
        let r = 1.0 / 3f64.sqrt();
        for k in 0..3 {
            assert!((e.semi_axes_m[k] - r).abs() < 1e-6, "{:?}", e.semi_axes_m);
        }
        assert!(e.center_m.norm() < 1e-6);
    }

    #[test]
    fn plane_fit_exact() {
        let pts: Vec<_> = (0..20)
            .map(|i| {
                let (x, y) = ((i % 5) as f64 * 0.1, (i / 5) as f64 * 0.1);
                Vector3::new(x, y, 0.3 * x - 0.2 * y + 1.0)
            })
            .collect();
        let p = fit_plane(&pts).unwrap();
        assert!(p.inlier_rms_m < 1e-12);
        let truth = Vector3::new(-0.3, 0.2, 1.0).normalize();
        assert!((p.normal - truth).norm() < 1e-12);
    }

    #[test]
    fn collinear_plane_is_degenerate() {
        let pts: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(fit_plane(&pts), Err(MapError::DegeneratePoints)));
    }

    #[test]
    fn parse_mixed_separators() {
        let p = parse_points("# hold\n1, 2, 3\n4 5 6\n\n7,8 9 # tail\n").unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p[2], Vector3::new(7.0, 8.0, 9.0));
        assert!(parse_points("1 2\n").is_err());
    }
}
