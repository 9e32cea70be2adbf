//! BEV occupancy and perspective-view rasterization of map elements.
//!
//! Grid convention: row 0 is the far edge (`y_max`), column 0 is `x_min`.
//! A cell is on when its center lies within half the line width of an edge.

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{MapElement, PerceptionRange, Point, Scene};

/// Points closer than this to the camera plane are clipped.
pub const NEAR_PLANE: f64 = 0.1;

/// Binary H×W grid, row-major, values in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Mask { width, height, data: vec![0; width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch { expected: width * height, got: data.len() });
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("mask values must be 0 or 1".into()));
        }
        Ok(Mask { width, height, data })
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    pub fn set(&mut self, row: usize, col: usize) {
        self.data[row * self.width + col] = 1;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Binary PGM (P5), on-cells as 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| if v != 0 { 255 } else { 0 }));
        out
    }

    fn union(mut self, other: &Mask) -> Mask {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevGridSpec {
    pub range: PerceptionRange,
    pub cell_size: f64,
}

impl Default for BevGridSpec {
    fn default() -> Self {
        BevGridSpec { range: PerceptionRange::default(), cell_size: 0.3 }
    }
}

impl BevGridSpec {
    pub fn new(range: PerceptionRange, cell_size: f64) -> Result<Self> {
        let spec = BevGridSpec { range, cell_size };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.range.validate()?;
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::InvalidArgument(format!("cell size must be positive, got {}", self.cell_size)));
        }
        Ok(())
    }

    /// `(rows, cols)`, each extent divided by the cell size and rounded up.
    pub fn dims(&self) -> (usize, usize) {
        let rows = (self.range.height() / self.cell_size - 1e-9).ceil().max(1.0) as usize;
        let cols = (self.range.width() / self.cell_size - 1e-9).ceil().max(1.0) as usize;
        (rows, cols)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Point {
        Point::new(
            self.range.x_min + (col as f64 + 0.5) * self.cell_size,
            self.range.y_max - (row as f64 + 0.5) * self.cell_size,
        )
    }
}

/// Squared planar distance from `p` to segment `ab`, ignoring z.
fn seg_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (ex, ey) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    ex * ex + ey * ey
}

/// Marks every cell whose center `to_grid(r, c)` lies within `half` of
/// segment `ab`. Centers must sit at `(i + 0.5)·cell` along each axis.
fn stamp_segment(
    mask: &mut Mask,
    a: (f64, f64),
    b: (f64, f64),
    half: f64,
    to_grid: &dyn Fn(usize, usize) -> (f64, f64),
    cell: (f64, f64),
) {
    let (x_lo, x_hi) = (a.0.min(b.0) - half, a.0.max(b.0) + half);
    let (y_lo, y_hi) = (a.1.min(b.1) - half, a.1.max(b.1) + half);
    let col_range = index_span(x_lo, x_hi, cell.0, mask.width);
    let row_range = index_span(y_lo, y_hi, cell.1, mask.height);
    let half2 = half * half;
    for r in row_range.clone() {
        for c in col_range.clone() {
            if seg_dist2(to_grid(r, c), a, b) <= half2 {
                mask.set(r, c);
            }
        }
    }
}

/// Cell indices whose centers `(i + 0.5)·step` can fall in `[lo, hi]`,
/// padded by one cell on each side and clamped to `[0, n)`.
fn index_span(lo: f64, hi: f64, step: f64, n: usize) -> std::ops::Range<usize> {
    if !(lo.is_finite() && hi.is_finite()) || hi < -step || n == 0 {
        return 0..0;
    }
    let first = ((lo / step).floor() - 1.0).max(0.0);
    let last = ((hi / step).ceil() + 1.0).min(n as f64);
    if first >= last {
        return 0..0;
    }
    first as usize..last as usize
}

fn point_in_polygon(p: (f64, f64), poly: &[Point]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.1) != (b.y > p.1) && p.0 < (b.x - a.x) * (p.1 - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn rasterize_element_bev(el: &MapElement, spec: &BevGridSpec, half: f64, fill: bool) -> Mask {
    let (rows, cols) = spec.dims();
    let mut mask = Mask::zeros(cols, rows);
    // Grid frame: x from x_min, y downward from y_max.
    let to_local = |p: Point| (p.x - spec.range.x_min, spec.range.y_max - p.y);
    let cs = spec.cell_size;
    let center = |r: usize, c: usize| ((c as f64 + 0.5) * cs, (r as f64 + 0.5) * cs);
    for (a, b) in el.segments() {
        stamp_segment(&mut mask, to_local(a), to_local(b), half, &center, (cs, cs));
    }
    if fill && el.closed && el.len() >= 3 {
        let local: Vec<Point> = el
            .points
            .iter()
            .map(|&p| {
                let (x, y) = to_local(p);
                Point::new(x, y)
            })
            .collect();
        let (lo_x, hi_x) = local.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.x), h.max(p.x)));
        let (lo_y, hi_y) = local.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.y), h.max(p.y)));
        for r in index_span(lo_y, hi_y, cs, rows) {
            for c in index_span(lo_x, hi_x, cs, cols) {
                if point_in_polygon(center(r, c), &local) {
                    mask.set(r, c);
                }
            }
        }
    }
    mask
}

/// BEV foreground mask. Closed elements are drawn as outlines.
pub fn rasterize_bev(scene: &Scene, spec: &BevGridSpec, line_width: f64) -> Result<Mask> {
    rasterize_bev_with(scene, spec, line_width, false)
}

/// As [`rasterize_bev`], optionally filling the interior of closed elements.
pub fn rasterize_bev_with(scene: &Scene, spec: &BevGridSpec, line_width: f64, fill_polygons: bool) -> Result<Mask> {
    spec.validate()?;
    if !(line_width > 0.0 && line_width.is_finite()) {
        return Err(Error::InvalidArgument(format!("line width must be positive, got {line_width}")));
    }
    let (rows, cols) = spec.dims();
    Ok(scene
        .elements
        .par_iter()
        .map(|el| rasterize_element_bev(el, spec, 0.5 * line_width, fill_polygons))
        .reduce(|| Mask::zeros(cols, rows), |a, b| a.union(&b)))
}

/// Pinhole camera. `extrinsics` maps ego coordinates into the camera frame
/// (x right, y down, z along the optical axis).
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub intrinsics: Matrix3<f64>,
    pub extrinsics: Isometry3<f64>,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(intrinsics: Matrix3<f64>, extrinsics: Isometry3<f64>, width: usize, height: usize) -> Result<Self> {
        let cam = Camera { intrinsics, extrinsics, width, height };
        cam.validate()?;
        Ok(cam)
    }

    /// Builds the extrinsics from an explicit rotation matrix, which must be
    /// orthonormal with determinant +1 to within 1e-9.
    pub fn from_rt(
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if err.is_nan() || err > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("rotation is not orthonormal".into()));
        }
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rotation));
        Camera::new(intrinsics, Isometry3::from_parts(Translation3::from(translation), rot), width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(Error::InvalidArgument("intrinsics must be upper triangular with K[2][2] = 1".into()));
        }
        if !k.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite intrinsics".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        Ok(())
    }

    /// Forward-looking camera mounted `mount_height` meters above the ego
    /// origin, looking along +y with the principal point at the image center.
    pub fn forward(focal: f64, width: usize, height: usize, mount_height: f64) -> Result<Self> {
        let k = Matrix3::new(focal, 0.0, width as f64 / 2.0, 0.0, focal, height as f64 / 2.0, 0.0, 0.0, 1.0);
        let r = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        Camera::from_rt(k, r, r * Vector3::new(0.0, 0.0, -mount_height), width, height)
    }

    pub fn to_camera(&self, p: Point) -> Vector3<f64> {
        (self.extrinsics * Point3::new(p.x, p.y, p.z)).coords
    }

    /// Pixel coordinates of a camera-frame point; pixel `(c, r)` covers
    /// `[c, c+1) × [r, r+1)`.
    fn pixel(&self, pc: Vector3<f64>) -> (f64, f64) {
        let h = self.intrinsics * pc;
        (h.x / h.z, h.y / h.z)
    }

    /// Projects an ego-frame point, or `None` if it is not in front of the
    /// near plane.
    pub fn project(&self, p: Point) -> Option<(f64, f64)> {
        let pc = self.to_camera(p);
        (pc.z > NEAR_PLANE).then(|| self.pixel(pc))
    }
}

/// Clips camera-frame segment `ab` to `z >= NEAR_PLANE`.
fn clip_near(a: Vector3<f64>, b: Vector3<f64>) -> Option<(Vector3<f64>, Vector3<f64>)> {
    match (a.z > NEAR_PLANE, b.z > NEAR_PLANE) {
        (true, true) => Some((a, b)),
        (false, false) => None,
        (a_in, _) => {
            let t = (NEAR_PLANE - a.z) / (b.z - a.z);
            let cut = a + (b - a) * t;
            Some(if a_in { (a, cut) } else { (cut, b) })
        }
    }
}

/// Perspective-view foreground mask of the whole scene.
pub fn project_to_pv(scene: &Scene, camera: &Camera, line_width_px: f64) -> Result<Mask> {
    camera.validate()?;
    if !(line_width_px > 0.0 && line_width_px.is_finite()) {
        return Err(Error::InvalidArgument(format!("line width must be positive, got {line_width_px}")));
    }
    let half = 0.5 * line_width_px;
    let center = |r: usize, c: usize| (c as f64 + 0.5, r as f64 + 0.5);
    Ok(scene
        .elements
        .par_iter()
        .map(|el| {
            let mut mask = Mask::zeros(camera.width, camera.height);
            for (a, b) in el.segments() {
                if let Some((a, b)) = clip_near(camera.to_camera(a), camera.to_camera(b)) {
                    stamp_segment(&mut mask, camera.pixel(a), camera.pixel(b), half, &center, (1.0, 1.0));
                }
            }
            mask
        })
        .reduce(|| Mask::zeros(camera.width, camera.height), |a, b| a.union(&b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_permutation, ElementClass};
    use proptest::prelude::*;

    fn scene_of(elements: Vec<MapElement>) -> Scene {
        Scene::new(elements, PerceptionRange::default(), 2).unwrap()
    }

    fn line(class: ElementClass, a: Point, b: Point, n: usize) -> MapElement {
        MapElement::new(class, (0..n).map(|i| a.lerp(b, i as f64 / (n - 1) as f64)).collect()).unwrap()
    }

    fn brute_force_bev(scene: &Scene, spec: &BevGridSpec, w: f64) -> Mask {
        let (rows, cols) = spec.dims();
        let mut m = Mask::zeros(cols, rows);
        for r in 0..rows {
            for c in 0..cols {
                let p = spec.cell_center(r, c);
                let hit = scene.elements.iter().flat_map(|e| e.segments()).any(|(a, b)| {
                    // Distance via the perpendicular foot, falling back to endpoints.
                    let ab = b - a;
                    let ap = p - a;
                    let l = ab.x * ab.x + ab.y * ab.y;
                    let foot = ap.x * ab.x + ap.y * ab.y;
                    let d = if l == 0.0 || foot <= 0.0 {
                        (ap.x * ap.x + ap.y * ap.y).sqrt()
                    } else if foot >= l {
                        ((p.x - b.x).powi(2) + (p.y - b.y).powi(2)).sqrt()
                    } else {
                        (ap.x * ab.y - ap.y * ab.x).abs() / l.sqrt()
                    };
                    d <= w / 2.0
                });
                if hit {
                    m.set(r, c);
                }
            }
        }
        m
    }

    #[test]
    fn grid_dims() {
        assert_eq!(BevGridSpec::default().dims(), (200, 100));
        let odd = BevGridSpec::new(PerceptionRange::new(0.0, 1.0, 0.0, 1.0).unwrap(), 0.3).unwrap();
        assert_eq!(odd.dims(), (4, 4));
        assert!(BevGridSpec::new(PerceptionRange::default(), 0.0).is_err());
    }

    #[test]
    fn empty_scene_is_blank() {
        let m = rasterize_bev(&Scene::empty(PerceptionRange::default()), &BevGridSpec::default(), 0.3).unwrap();
        assert!(m.is_all_zero());
        assert_eq!((m.width, m.height), (100, 200));
    }

    #[test]
    fn vertical_divider_is_one_cell_stripe() {
        let spec = BevGridSpec::default();
        let s = scene_of(vec![line(ElementClass::Divider, Point::new(0.15, -29.0), Point::new(0.15, 29.0), 20)]);
        let m = rasterize_bev(&s, &spec, spec.cell_size).unwrap();
        for r in 0..m.height {
            let on: Vec<usize> = (0..m.width).filter(|&c| m.get(r, c)).collect();
            let y = spec.cell_center(r, 0).y;
            if y.abs() < 28.9 {
                assert_eq!(on, vec![50], "row {r}");
            }
        }
    }

    #[test]
    fn diagonal_matches_brute_force() {
        let spec = BevGridSpec::default();
        for w in [0.2, 0.3, 0.9, 2.0] {
            let s = scene_of(vec![
                line(ElementClass::Boundary, Point::new(-12.3, -25.1), Point::new(11.7, 24.4), 7),
                MapElement::new(
                    ElementClass::PedCrossing,
                    vec![
                        Point::new(-3.07, 2.03),
                        Point::new(4.01, 2.57),
                        Point::new(4.53, 6.11),
                        Point::new(-2.49, 5.52),
                    ],
                )
                .unwrap(),
            ]);
            assert_eq!(rasterize_bev(&s, &spec, w).unwrap(), brute_force_bev(&s, &spec, w));
        }
    }

    #[test]
    fn filled_polygon_covers_interior() {
        let spec = BevGridSpec::default();
        let sq = MapElement::new(
            ElementClass::PedCrossing,
            vec![Point::new(-3.05, -3.05), Point::new(3.05, -3.05), Point::new(3.05, 3.05), Point::new(-3.05, 3.05)],
        )
        .unwrap();
        let s = scene_of(vec![sq]);
        let outline = rasterize_bev(&s, &spec, 0.3).unwrap();
        let filled = rasterize_bev_with(&s, &spec, 0.3, true).unwrap();
        // 20×20 interior centers plus the ring of centers 0.1 m outside the edges.
        assert_eq!(filled.count_ones(), 22 * 22);
        assert_eq!(outline.count_ones(), 22 * 22 - 20 * 20);
        assert!(outline.data.iter().zip(&filled.data).all(|(&o, &f)| o <= f));
    }

    #[test]
    fn pgm_header() {
        let m = Mask::from_data(3, 2, vec![1, 0, 0, 0, 1, 0]).unwrap();
        let pgm = m.to_pgm();
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&pgm[pgm.len() - 6..], &[255, 0, 0, 0, 255, 0]);
        assert!(Mask::from_data(2, 2, vec![0, 2, 0, 0]).is_err());
    }

    fn camera() -> Camera {
        Camera::forward(400.0, 640, 360, 1.5).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = camera();
        for d in [1.0, 5.0, 40.0] {
            let (u, v) = cam.project(Point::new3(0.0, d, 1.5)).unwrap();
            assert!((u - 320.0).abs() < 1e-12 && (v - 180.0).abs() < 1e-12);
        }
        assert!(cam.project(Point::new3(0.0, -1.0, 1.5)).is_none());
    }

    #[test]
    fn camera_validation() {
        let k = Matrix3::new(-1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0);
        assert!(Camera::new(k, Isometry3::identity(), 10, 10).is_err());
        let k = Matrix3::new(1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0);
        let skewed = Matrix3::new(1.0, 1e-6, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Camera::from_rt(k, skewed, Vector3::zeros(), 10, 10).is_err());
        assert!(Camera::from_rt(k, -Matrix3::identity(), Vector3::zeros(), 10, 10).is_err());
        assert!(Camera::from_rt(k, Matrix3::identity(), Vector3::zeros(), 10, 10).is_ok());
    }

    #[test]
    fn behind_camera_is_blank() {
        let s = scene_of(vec![line(ElementClass::Divider, Point::new(-2.0, -5.0), Point::new(2.0, -25.0), 10)]);
        assert!(project_to_pv(&s, &camera(), 2.0).unwrap().is_all_zero());
    }

    #[test]
    fn ground_line_matches_vertex_projection() {
        let cam = camera();
        let el = line(ElementClass::Divider, Point::new(1.0, 5.0), Point::new(1.0, 15.0), 11);
        let m = project_to_pv(&scene_of(vec![el.clone()]), &cam, 1.0).unwrap();
        // Independent projection of every vertex with the explicit pinhole formula.
        for p in &el.points {
            let (xc, yc, zc) = (p.x, 1.5 - p.z, p.y);
            let (u, v) = (400.0 * xc / zc + 320.0, 400.0 * yc / zc + 180.0);
            let (c, r) = (u.floor() as usize, v.floor() as usize);
            let near = (r.saturating_sub(1)..=r + 1).any(|rr| (c.saturating_sub(1)..=c + 1).any(|cc| m.get(rr, cc)));
            assert!(near, "vertex {p:?} at ({u}, {v}) not drawn");
        }
        // The line converges toward the horizon: every lit pixel is below it.
        for r in 0..m.height {
            for c in 0..m.width {
                if m.get(r, c) {
                    assert!(r >= 180 && c >= 320);
                }
            }
        }
    }

    #[test]
    fn near_plane_clipping_keeps_front_part() {
        let cam = camera();
        let s = scene_of(vec![line(ElementClass::Divider, Point::new(0.5, -10.0), Point::new(0.5, 10.0), 2)]);
        let m = project_to_pv(&s, &cam, 1.0).unwrap();
        assert!(!m.is_all_zero());
    }

    fn arb_element() -> impl Strategy<Value = MapElement> {
        (0usize..4, 2usize..9, prop::collection::vec((-14.0f64..14.0, -29.0f64..29.0), 9)).prop_map(|(ci, n, pts)| {
            let class = ElementClass::from_index(ci).unwrap();
            let n = if class.is_closed() { n.max(3) } else { n };
            MapElement::new(class, pts[..n].iter().map(|&(x, y)| Point::new(x, y)).collect()).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn bev_invariant_under_group(el in arb_element(), k in 0usize..64, w in 0.1f64..1.5) {
            let spec = BevGridSpec::default();
            let g = el.permutation_group();
            let perm = g.get(k % g.len());
            let moved = MapElement { points: apply_permutation(&el.points, perm).unwrap(), ..el.clone() };
            prop_assert_eq!(
                rasterize_bev(&scene_of(vec![el]), &spec, w).unwrap(),
                rasterize_bev(&scene_of(vec![moved]), &spec, w).unwrap()
            );
        }

        // Holds when the line is at least a fine-cell diagonal wide: any
        // in-range point then lights the fine cell containing it.
        #[test]
        fn coarsening_keeps_blank_masks_blank(el in arb_element(), cell in 0.2f64..0.6) {
            let fine = BevGridSpec::new(PerceptionRange::default(), cell).unwrap();
            let coarse = BevGridSpec::new(PerceptionRange::default(), 2.0 * cell).unwrap();
            let w = cell * std::f64::consts::SQRT_2 * 1.0001;
            let s = scene_of(vec![el]);
            if rasterize_bev(&s, &fine, w).unwrap().is_all_zero() {
                prop_assert!(rasterize_bev(&s, &coarse, w).unwrap().is_all_zero());
            }
            let empty = Scene::empty(PerceptionRange::default());
            prop_assert!(rasterize_bev(&empty, &coarse, w).unwrap().is_all_zero());
        }

        #[test]
        fn pv_commutes_with_rigid_motion(
            el in arb_element(),
            yaw in -3.1f64..3.1, tx in -5.0f64..5.0, ty in -5.0f64..5.0, tz in -0.5f64..0.5,
        ) {
            let cam = camera();
            let motion = Isometry3::from_parts(Translation3::new(tx, ty, tz), UnitQuaternion::from_euler_angles(0.0, 0.0, yaw));
            let moved_points: Vec<Point> = el.points.iter().map(|p| {
                let q = motion * Point3::new(p.x, p.y, p.z);
                Point::new3(q.x, q.y, q.z)
            }).collect();
            let moved = MapElement { points: moved_points, ..el.clone() };
            let moved_cam = Camera { extrinsics: cam.extrinsics * motion.inverse(), ..cam.clone() };
            let a = project_to_pv(&scene_of(vec![el]), &cam, 2.0).unwrap();
            let b = project_to_pv(&Scene { elements: vec![moved], range: PerceptionRange::default(), dim: 3 }, &moved_cam, 2.0).unwrap();
            let diff = a.data.iter().zip(&b.data).filter(|(x, y)| x != y).count();
            prop_assert_eq!(diff, 0);
        }
    }
}
