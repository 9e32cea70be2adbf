//! Map-element representation: points, classes, arc-length resampling,
//! equivalent-permutation groups and perception-range normalization.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the ego frame, in meters. Two-dimensional scenes keep `z == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point {
    pub const ZERO: Point = Point { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y, z: 0.0 }
    }

    pub const fn new3(x: f64, y: f64, z: f64) -> Self {
        Point { x, y, z }
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }

    /// L1 distance over all three axes.
    pub fn manhattan(self, other: Point) -> f64 {
        (self.x - other.x).abs() + (self.y - other.y).abs() + (self.z - other.z).abs()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn lerp(self, other: Point, t: f64) -> Point {
        self + (other - self) * t
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Point::new3(a[0], a[1], a[2])
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new3(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new3(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new3(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::new3(-self.x, -self.y, -self.z)
    }
}

impl AddAssign for Point {
    fn add_assign(&mut self, o: Point) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl SubAssign for Point {
    fn sub_assign(&mut self, o: Point) {
        self.x -= o.x;
        self.y -= o.y;
        self.z -= o.z;
    }
}

/// Semantic class of a map element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementClass {
    PedCrossing,
    Divider,
    Boundary,
    Centerline,
}

impl ElementClass {
    pub const ALL: [ElementClass; 4] =
        [ElementClass::PedCrossing, ElementClass::Divider, ElementClass::Boundary, ElementClass::Centerline];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Pedestrian crossings are polygons.
    pub fn is_closed(self) -> bool {
        matches!(self, ElementClass::PedCrossing)
    }

    /// Centerlines carry a driving direction.
    pub fn is_directed(self) -> bool {
        matches!(self, ElementClass::Centerline)
    }

    pub fn name(self) -> &'static str {
        match self {
            ElementClass::PedCrossing => "ped_crossing",
            ElementClass::Divider => "divider",
            ElementClass::Boundary => "boundary",
            ElementClass::Centerline => "centerline",
        }
    }
}

impl fmt::Display for ElementClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ElementClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown element class `{s}`")))
    }
}

/// A classed, discretized point set. Closed elements do not repeat their
/// first point at the end; the wrap edge is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct MapElement {
    pub class: ElementClass,
    pub points: Vec<Point>,
    pub closed: bool,
    pub directed: bool,
}

impl MapElement {
    /// Builds an element whose closed/directed flags follow its class.
    pub fn new(class: ElementClass, points: Vec<Point>) -> Result<Self> {
        Self::with_flags(class, points, class.is_closed(), class.is_directed())
    }

    pub fn with_flags(class: ElementClass, points: Vec<Point>, closed: bool, directed: bool) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::DegenerateGeometry("an element needs at least two points"));
        }
        if closed && directed {
            return Err(Error::InvalidArgument("an element cannot be both closed and directed".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coordinate".into()));
        }
        Ok(MapElement { class, points, closed, directed })
    }

    /// Resamples a raw chain to `n` arc-length-equidistant points.
    pub fn from_raw(class: ElementClass, raw: &[Point], n: usize) -> Result<Self> {
        let points = resample(raw, class.is_closed(), n)?;
        Self::new(class, points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn permutation_group(&self) -> PermutationGroup {
        PermutationGroup::for_element(self.closed, self.directed, self.points.len())
    }

    /// Segments of the polyline, including the wrap edge for closed elements.
    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.points.len();
        let count = if self.closed { n } else { n - 1 };
        (0..count).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    pub fn arc_length(&self) -> f64 {
        self.segments().map(|(a, b)| a.distance(b)).sum()
    }
}

/// Axis-aligned ego-centric region in which elements are modeled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptionRange {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_max: Option<f64>,
}

impl Default for PerceptionRange {
    /// `[-15, 15] x [-30, 30]` meters.
    fn default() -> Self {
        PerceptionRange::new(-15.0, 15.0, -30.0, 30.0).expect("valid default range")
    }
}

impl PerceptionRange {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let r = PerceptionRange { x_min, x_max, y_min, y_max, z_min: None, z_max: None };
        r.validate()?;
        Ok(r)
    }

    pub fn with_z(mut self, z_min: f64, z_max: f64) -> Result<Self> {
        self.z_min = Some(z_min);
        self.z_max = Some(z_max);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo < hi;
        if !ok(self.x_min, self.x_max) || !ok(self.y_min, self.y_max) {
            return Err(Error::InvalidArgument("perception range requires min < max per axis".into()));
        }
        match (self.z_min, self.z_max) {
            (None, None) => Ok(()),
            (Some(lo), Some(hi)) if ok(lo, hi) => Ok(()),
            _ => Err(Error::InvalidArgument("z bounds must be both present with min < max".into())),
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, p: Point) -> bool {
        let in_z = match (self.z_min, self.z_max) {
            (Some(lo), Some(hi)) => p.z >= lo && p.z <= hi,
            _ => true,
        };
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max && in_z
    }

    /// Affine map of each axis onto `[0, 1]`. `z` is only rescaled when the
    /// range carries z bounds.
    pub fn normalize(&self, p: Point) -> Point {
        let z = match (self.z_min, self.z_max) {
            (Some(lo), Some(hi)) => (p.z - lo) / (hi - lo),
            _ => p.z,
        };
        Point::new3((p.x - self.x_min) / self.width(), (p.y - self.y_min) / self.height(), z)
    }

    pub fn denormalize(&self, p: Point) -> Point {
        let z = match (self.z_min, self.z_max) {
            (Some(lo), Some(hi)) => p.z * (hi - lo) + lo,
            _ => p.z,
        };
        Point::new3(p.x * self.width() + self.x_min, p.y * self.height() + self.y_min, z)
    }
}

pub fn normalize(points: &[Point], range: &PerceptionRange) -> Vec<Point> {
    points.iter().map(|&p| range.normalize(p)).collect()
}

pub fn denormalize(points: &[Point], range: &PerceptionRange) -> Vec<Point> {
    points.iter().map(|&p| range.denormalize(p)).collect()
}

/// A set of ground-truth elements observed within a perception range.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub elements: Vec<MapElement>,
    pub range: PerceptionRange,
    /// 2 or 3.
    pub dim: u8,
}

impl Scene {
    pub fn new(elements: Vec<MapElement>, range: PerceptionRange, dim: u8) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidArgument(format!("scene dimension must be 2 or 3, got {dim}")));
        }
        range.validate()?;
        if dim == 2 && elements.iter().flat_map(|e| &e.points).any(|p| p.z != 0.0) {
            return Err(Error::InvalidArgument("2D scene with non-zero z".into()));
        }
        Ok(Scene { elements, range, dim })
    }

    pub fn empty(range: PerceptionRange) -> Self {
        Scene { elements: Vec::new(), range, dim: 2 }
    }

    /// Elements mapped into unit-box coordinates.
    pub fn normalized_elements(&self) -> Vec<MapElement> {
        self.elements.iter().map(|e| MapElement { points: normalize(&e.points, &self.range), ..e.clone() }).collect()
    }
}

/// Resamples an ordered chain to exactly `n` points spaced uniformly by arc
/// length, using linear interpolation along the input. Closed chains are
/// treated as rings and return `n` points without repeating the start; open
/// chains keep both endpoints.
pub fn resample(raw: &[Point], closed: bool, n: usize) -> Result<Vec<Point>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("resample count must be >= 2, got {n}")));
    }
    if raw.len() < 2 {
        return Err(Error::DegenerateGeometry("fewer than two input points"));
    }
    let mut chain = raw.to_vec();
    if closed {
        chain.push(raw[0]);
    }
    let mut cumulative = Vec::with_capacity(chain.len());
    cumulative.push(0.0);
    for w in chain.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + w[0].distance(w[1]));
    }
    let total = *cumulative.last().unwrap();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::DegenerateGeometry("zero total arc length"));
    }

    let spacing = total / if closed { n as f64 } else { (n - 1) as f64 };
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        if !closed && k == n - 1 {
            out.push(*raw.last().unwrap());
            break;
        }
        let s = k as f64 * spacing;
        while seg + 1 < chain.len() - 1 && cumulative[seg + 1] <= s {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let p = if len > 0.0 {
            let t = ((s - cumulative[seg]) / len).clamp(0.0, 1.0);
            chain[seg].lerp(chain[seg + 1], t)
        } else {
            chain[seg]
        };
        out.push(p);
    }
    Ok(out)
}

/// The group of index maps under which an element's geometry is unchanged.
///
/// Members are ordered as cyclic shift `k` followed by its reversal, for
/// `k = 0, 1, ..`, so member 0 is always the identity and member 1 the
/// plain reversal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationGroup {
    n: usize,
    perms: Vec<Vec<usize>>,
}

impl PermutationGroup {
    pub fn new(closed: bool, directed: bool, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("permutation group needs n >= 2, got {n}")));
        }
        if closed && directed {
            return Err(Error::InvalidArgument("closed elements cannot be directed".into()));
        }
        Ok(Self::for_element(closed, directed, n))
    }

    pub(crate) fn for_element(closed: bool, directed: bool, n: usize) -> Self {
        let shift = |k: usize| (0..n).map(move |j| (j + k) % n);
        let perms: Vec<Vec<usize>> = if directed {
            vec![shift(0).collect()]
        } else if !closed {
            vec![shift(0).collect(), shift(0).map(|i| n - 1 - i).collect()]
        } else {
            let mut perms: Vec<Vec<usize>> = Vec::with_capacity(2 * n);
            for k in 0..n {
                for p in [shift(k).collect::<Vec<_>>(), shift(k).map(|i| n - 1 - i).collect()] {
                    if !perms.contains(&p) {
                        perms.push(p);
                    }
                }
            }
            perms
        };
        PermutationGroup { n, perms }
    }

    pub fn identity(n: usize) -> Self {
        PermutationGroup { n, perms: vec![(0..n).collect()] }
    }

    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    pub fn domain(&self) -> usize {
        self.n
    }

    pub fn get(&self, k: usize) -> &[usize] {
        &self.perms[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.perms.iter().map(Vec::as_slice)
    }
}

pub fn permutation_group(closed: bool, directed: bool, n: usize) -> Result<PermutationGroup> {
    PermutationGroup::new(closed, directed, n)
}

/// `output[j] = points[perm[j]]`.
pub fn apply_permutation(points: &[Point], perm: &[usize]) -> Result<Vec<Point>> {
    if points.len() != perm.len() {
        return Err(Error::ShapeMismatch { expected: perm.len(), got: points.len() });
    }
    perm.iter()
        .map(|&i| points.get(i).copied().ok_or(Error::InvalidArgument(format!("index {i} out of range"))))
        .collect()
}
