//! Compact sets carrying everything the solvers need: a quadrature for
//! `H_d`, the metric projection back onto the set, tangent projection of
//! ambient vectors, and covering meshes for covering-radius evaluation.
//!
//! Built-ins are the interval, the round sphere `S^2` and the torus of
//! revolution. Anything else can be described by a [`Chart`].

use std::f64::consts::PI;
use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_on;

pub const DEFAULT_INTERVAL_NODES: usize = 256;
pub const DEFAULT_SPHERE_NODES: (usize, usize) = (96, 192);
pub const DEFAULT_TORUS_NODES: (usize, usize) = (128, 128);
pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

/// A point in ambient coordinates. All coordinates are finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "point coordinates must be finite and nonempty, got {coords:?}"
            )));
        }
        Ok(Point(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Point {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Point::new(v)
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Vec<f64> {
        p.0
    }
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// JSON description of a set. Node counts fall back to the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SetDescriptor {
    Interval {
        a: f64,
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_quad: Option<usize>,
    },
    Sphere {
        #[serde(default = "unit")]
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_theta: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_phi: Option<usize>,
    },
    Torus {
        r_inner: f64,
        r_outer: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_u: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_v: Option<usize>,
    },
    /// Chart-based set. Only describes the set; the chart closures cannot be
    /// restored from JSON, so [`CompactSet::from_descriptor`] rejects it.
    Param {
        label: String,
        hausdorff_dim: usize,
        ambient_dim: usize,
    },
}

fn unit() -> f64 {
    1.0
}

/// User-supplied parametrization of a `d`-dimensional set in `R^p` over a
/// box domain.
#[derive(Clone)]
pub struct Chart {
    pub label: String,
    pub hausdorff_dim: usize,
    pub ambient_dim: usize,
    /// Parameter box, one `(lo, hi)` per axis.
    pub domain: Vec<(f64, f64)>,
    /// Periodic axes get a trapezoid rule, the rest Gauss-Legendre.
    pub periodic: Vec<bool>,
    pub map: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    /// The `d`-dimensional Jacobian (area element) of `map`.
    pub jacobian: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    /// Nearest point on the set; `None` where the projection is undefined.
    pub retraction: Arc<dyn Fn(&[f64]) -> Option<Vec<f64>> + Send + Sync>,
    pub tangent_projector: Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>,
}

impl fmt::Debug for Chart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Chart")
            .field("label", &self.label)
            .field("hausdorff_dim", &self.hausdorff_dim)
            .field("ambient_dim", &self.ambient_dim)
            .field("domain", &self.domain)
            .field("periodic", &self.periodic)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
enum Shape {
    Interval { a: f64, b: f64 },
    Sphere { radius: f64 },
    Torus { major: f64, minor: f64 },
    Chart(Arc<Chart>),
}

/// Logical layout of the quadrature nodes: a tensor grid, row-major, with
/// optional periodic axes. Used for support contours and sublevel
/// components.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuadGrid {
    pub shape: Vec<usize>,
    pub periodic: Vec<bool>,
}

impl QuadGrid {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for k in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.shape[k + 1];
        }
        strides
    }

    /// Grid neighbours of `index` along each axis (forward and backward).
    pub fn neighbors(&self, index: usize) -> Vec<usize> {
        let strides = self.strides();
        let mut out = Vec::with_capacity(2 * self.shape.len());
        for (k, (&n, &stride)) in self.shape.iter().zip(&strides).enumerate() {
            let i = (index / stride) % n;
            let base = index - i * stride;
            if i + 1 < n {
                out.push(base + (i + 1) * stride);
            } else if self.periodic[k] && n > 2 {
                out.push(base);
            }
            if i > 0 {
                out.push(base + (i - 1) * stride);
            } else if self.periodic[k] && n > 2 {
                out.push(base + (n - 1) * stride);
            }
        }
        out
    }

    /// Forward neighbours only, so each grid edge is visited once.
    pub fn forward_neighbors(&self, index: usize) -> Vec<usize> {
        let strides = self.strides();
        let mut out = Vec::with_capacity(self.shape.len());
        for (k, (&n, &stride)) in self.shape.iter().zip(&strides).enumerate() {
            let i = (index / stride) % n;
            let base = index - i * stride;
            if i + 1 < n {
                out.push(base + (i + 1) * stride);
            } else if self.periodic[k] && n > 2 {
                out.push(base);
            }
        }
        out
    }
}

/// Points densely covering a set, with the fill distance they guarantee.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub dim: usize,
    pub coords: Vec<f64>,
    pub fill_distance: f64,
}

impl Mesh {
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn to_points(&self) -> Vec<Point> {
        self.iter().map(|c| Point(c.to_vec())).collect()
    }
}

/// A compact `d`-rectifiable subset of `R^p`. Immutable once built.
#[derive(Clone, Debug)]
pub struct CompactSet {
    shape: Shape,
    ambient_dim: usize,
    hausdorff_dim: usize,
    total_measure: f64,
    diameter: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    grid: QuadGrid,
    mesh: Option<Arc<Mesh>>,
}

impl CompactSet {
    /// `[a, b]` with an `n_quad`-node Gauss-Legendre rule.
    pub fn interval(a: f64, b: f64, n_quad: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(Error::InvalidArgument(format!(
                "interval needs a < b, got [{a}, {b}]"
            )));
        }
        if n_quad < 2 {
            return Err(Error::InvalidArgument(format!(
                "interval needs at least 2 quadrature nodes, got {n_quad}"
            )));
        }
        let (nodes, weights) = gauss_legendre_on(n_quad, a, b);
        Ok(CompactSet {
            shape: Shape::Interval { a, b },
            ambient_dim: 1,
            hausdorff_dim: 1,
            total_measure: b - a,
            diameter: b - a,
            nodes,
            weights,
            grid: QuadGrid {
                shape: vec![n_quad],
                periodic: vec![false],
            },
            mesh: None,
        })
    }

    /// Sphere of the given radius centred at the origin of `R^3`. Product of
    /// Gauss-Legendre in `cos(theta)` and the trapezoid rule in `phi`.
    pub fn sphere(radius: f64, n_theta: usize, n_phi: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sphere radius must be positive, got {radius}"
            )));
        }
        if n_theta < 2 || n_phi < 2 {
            return Err(Error::InvalidArgument(format!(
                "sphere needs n_theta, n_phi >= 2, got {n_theta} x {n_phi}"
            )));
        }
        let (zs, wz) = gauss_legendre_on(n_theta, -1.0, 1.0);
        let dphi = 2.0 * PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(3 * n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for (z, w) in zs.iter().zip(&wz) {
            let rxy = (1.0 - z * z).max(0.0).sqrt();
            for j in 0..n_phi {
                let phi = j as f64 * dphi;
                nodes.extend_from_slice(&[
                    radius * rxy * phi.cos(),
                    radius * rxy * phi.sin(),
                    radius * z,
                ]);
                weights.push(w * dphi * radius * radius);
            }
        }
        Ok(CompactSet {
            shape: Shape::Sphere { radius },
            ambient_dim: 3,
            hausdorff_dim: 2,
            total_measure: 4.0 * PI * radius * radius,
            diameter: 2.0 * radius,
            nodes,
            weights,
            grid: QuadGrid {
                shape: vec![n_theta, n_phi],
                periodic: vec![false, true],
            },
            mesh: None,
        })
    }

    /// Torus of revolution about the z-axis whose inner and outer equators
    /// have radii `r_inner` and `r_outer`.
    pub fn torus(r_inner: f64, r_outer: f64, n_u: usize, n_v: usize) -> Result<Self> {
        if !(r_inner > 0.0 && r_inner < r_outer && r_outer.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "torus needs 0 < r_inner < r_outer, got {r_inner}, {r_outer}"
            )));
        }
        if n_u < 3 || n_v < 3 {
            return Err(Error::InvalidArgument(format!(
                "torus needs n_u, n_v >= 3, got {n_u} x {n_v}"
            )));
        }
        let minor = 0.5 * (r_outer - r_inner);
        let major = 0.5 * (r_outer + r_inner);
        let du = 2.0 * PI / n_u as f64;
        let dv = 2.0 * PI / n_v as f64;
        let mut nodes = Vec::with_capacity(3 * n_u * n_v);
        let mut weights = Vec::with_capacity(n_u * n_v);
        for i in 0..n_u {
            let u = i as f64 * du;
            for j in 0..n_v {
                let v = j as f64 * dv;
                let ring = major + minor * v.cos();
                nodes.extend_from_slice(&[ring * u.cos(), ring * u.sin(), minor * v.sin()]);
                weights.push(du * dv * minor * ring);
            }
        }
        Ok(CompactSet {
            shape: Shape::Torus { major, minor },
            ambient_dim: 3,
            hausdorff_dim: 2,
            total_measure: 4.0 * PI * PI * major * minor,
            diameter: 2.0 * r_outer,
            nodes,
            weights,
            grid: QuadGrid {
                shape: vec![n_u, n_v],
                periodic: vec![true, true],
            },
            mesh: None,
        })
    }

    /// Set given by a chart over a box. Quadrature is a tensor product of
    /// Gauss-Legendre (or trapezoid on periodic axes) pulled back through
    /// the chart's Jacobian. Only the weight-sum invariant is checked.
    pub fn from_chart(chart: Chart, nodes_per_axis: &[usize]) -> Result<Self> {
        let d = chart.hausdorff_dim;
        if d == 0 || d > chart.ambient_dim {
            return Err(Error::InvalidArgument(format!(
                "chart needs 1 <= d <= p, got d = {d}, p = {}",
                chart.ambient_dim
            )));
        }
        if chart.domain.len() != d || chart.periodic.len() != d || nodes_per_axis.len() != d {
            return Err(Error::InvalidArgument(
                "chart domain, periodic flags and node counts must have one entry per axis".into(),
            ));
        }
        if chart.domain.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidArgument("chart domain needs lo < hi on every axis".into()));
        }
        if nodes_per_axis.iter().any(|&n| n < 2) {
            return Err(Error::InvalidArgument("chart needs at least 2 nodes per axis".into()));
        }

        let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..d)
            .map(|k| {
                let (lo, hi) = chart.domain[k];
                let n = nodes_per_axis[k];
                if chart.periodic[k] {
                    let h = (hi - lo) / n as f64;
                    ((0..n).map(|i| lo + i as f64 * h).collect(), vec![h; n])
                } else {
                    gauss_legendre_on(n, lo, hi)
                }
            })
            .collect();

        let total: usize = nodes_per_axis.iter().product();
        let mut nodes = Vec::with_capacity(total * chart.ambient_dim);
        let mut weights = Vec::with_capacity(total);
        let mut params = vec![0.0; d];
        for flat in 0..total {
            let mut rem = flat;
            let mut w = 1.0;
            for k in (0..d).rev() {
                let n = nodes_per_axis[k];
                let i = rem % n;
                rem /= n;
                params[k] = axes[k].0[i];
                w *= axes[k].1[i];
            }
            let x = (chart.map)(&params);
            if x.len() != chart.ambient_dim || x.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "chart map returned an invalid point at parameters {params:?}"
                )));
            }
            nodes.extend_from_slice(&x);
            weights.push(w * (chart.jacobian)(&params).abs());
        }
        let total_measure: f64 = weights.iter().sum();
        if !(total_measure > 0.0 && total_measure.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "chart quadrature weights sum to {total_measure}"
            )));
        }

        // Diameter from a bounded subsample of nodes.
        let p = chart.ambient_dim;
        let stride = (total / 1500).max(1);
        let sample: Vec<&[f64]> = nodes.chunks_exact(p).step_by(stride).collect();
        let mut diam2: f64 = 0.0;
        for (i, a) in sample.iter().enumerate() {
            for b in &sample[i + 1..] {
                diam2 = diam2.max(dist2(a, b));
            }
        }
        let grid = QuadGrid {
            shape: nodes_per_axis.to_vec(),
            periodic: chart.periodic.clone(),
        };
        Ok(CompactSet {
            ambient_dim: p,
            hausdorff_dim: d,
            total_measure,
            diameter: diam2.sqrt().max(f64::MIN_POSITIVE),
            shape: Shape::Chart(Arc::new(chart)),
            nodes,
            weights,
            grid,
            mesh: None,
        })
    }

    pub fn from_descriptor(desc: &SetDescriptor) -> Result<Self> {
        match *desc {
            SetDescriptor::Interval { a, b, n_quad } => {
                Self::interval(a, b, n_quad.unwrap_or(DEFAULT_INTERVAL_NODES))
            }
            SetDescriptor::Sphere {
                radius,
                n_theta,
                n_phi,
            } => Self::sphere(
                radius,
                n_theta.unwrap_or(DEFAULT_SPHERE_NODES.0),
                n_phi.unwrap_or(DEFAULT_SPHERE_NODES.1),
            ),
            SetDescriptor::Torus {
                r_inner,
                r_outer,
                n_u,
                n_v,
            } => Self::torus(
                r_inner,
                r_outer,
                n_u.unwrap_or(DEFAULT_TORUS_NODES.0),
                n_v.unwrap_or(DEFAULT_TORUS_NODES.1),
            ),
            SetDescriptor::Param { ref label, .. } => Err(Error::InvalidArgument(format!(
                "chart set '{label}' must be constructed through CompactSet::from_chart"
            ))),
        }
    }

    pub fn descriptor(&self) -> SetDescriptor {
        match &self.shape {
            Shape::Interval { a, b } => SetDescriptor::Interval {
                a: *a,
                b: *b,
                n_quad: Some(self.grid.shape[0]),
            },
            Shape::Sphere { radius } => SetDescriptor::Sphere {
                radius: *radius,
                n_theta: Some(self.grid.shape[0]),
                n_phi: Some(self.grid.shape[1]),
            },
            Shape::Torus { major, minor } => SetDescriptor::Torus {
                r_inner: major - minor,
                r_outer: major + minor,
                n_u: Some(self.grid.shape[0]),
                n_v: Some(self.grid.shape[1]),
            },
            Shape::Chart(c) => SetDescriptor::Param {
                label: c.label.clone(),
                hausdorff_dim: c.hausdorff_dim,
                ambient_dim: c.ambient_dim,
            },
        }
    }

    /// Same set with every quadrature axis refined by `factor`.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        let s = &self.grid.shape;
        match &self.shape {
            Shape::Interval { a, b } => Self::interval(*a, *b, s[0] * factor),
            Shape::Sphere { radius } => Self::sphere(*radius, s[0] * factor, s[1] * factor),
            Shape::Torus { major, minor } => {
                Self::torus(major - minor, major + minor, s[0] * factor, s[1] * factor)
            }
            Shape::Chart(c) => {
                let counts: Vec<usize> = s.iter().map(|n| n * factor).collect();
                Self::from_chart((**c).clone(), &counts)
            }
        }
    }

    pub fn label(&self) -> String {
        match &self.shape {
            Shape::Interval { a, b } => format!("interval[{a},{b}]"),
            Shape::Sphere { radius } => format!("sphere(r={radius})"),
            Shape::Torus { major, minor } => {
                format!("torus(r_inner={},r_outer={})", major - minor, major + minor)
            }
            Shape::Chart(c) => c.label.clone(),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn hausdorff_dim(&self) -> usize {
        self.hausdorff_dim
    }

    /// `H_d(A)`, unit cube normalization.
    pub fn total_measure(&self) -> f64 {
        self.total_measure
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn quadrature_len(&self) -> usize {
        self.weights.len()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.ambient_dim..(i + 1) * self.ambient_dim]
    }

    pub fn nodes(&self) -> std::slice::ChunksExact<'_, f64> {
        self.nodes.chunks_exact(self.ambient_dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn grid(&self) -> &QuadGrid {
        &self.grid
    }

    /// `(node, weight)` pairs.
    pub fn quadrature(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.nodes().zip(self.weights.iter().copied())
    }

    /// Approximates `int_A f dH_d`. Sums in node order.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.quadrature().map(|(x, w)| w * f(x)).sum()
    }

    pub fn is_interval(&self) -> bool {
        matches!(self.shape, Shape::Interval { .. })
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self.shape, Shape::Sphere { .. })
    }

    /// `(a, b)` for intervals.
    pub fn interval_bounds(&self) -> Option<(f64, f64)> {
        match self.shape {
            Shape::Interval { a, b } => Some((a, b)),
            _ => None,
        }
    }

    pub fn sphere_radius(&self) -> Option<f64> {
        match self.shape {
            Shape::Sphere { radius } => Some(radius),
            _ => None,
        }
    }

    /// Metric projection onto the set.
    pub fn retract(&self, x: &[f64]) -> Result<Point> {
        let mut y = x.to_vec();
        self.retract_in_place(&mut y)?;
        Ok(Point(y))
    }

    pub fn retract_in_place(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.ambient_dim {
            return Err(Error::InvalidArgument(format!(
                "expected a point in R^{}, got {} coordinates",
                self.ambient_dim,
                x.len()
            )));
        }
        match &self.shape {
            Shape::Interval { a, b } => {
                x[0] = x[0].clamp(*a, *b);
            }
            Shape::Sphere { radius } => {
                let norm = dot(x, x).sqrt();
                if !(norm > 0.0) || !norm.is_finite() {
                    return Err(Error::RetractionUndefined(x.to_vec()));
                }
                let scale = radius / norm;
                x.iter_mut().for_each(|c| *c *= scale);
            }
            Shape::Torus { major, minor } => {
                if x.iter().any(|c| !c.is_finite()) {
                    return Err(Error::RetractionUndefined(x.to_vec()));
                }
                let (cx, cy) = torus_center(x, *major);
                let mut w = [x[0] - cx, x[1] - cy, x[2]];
                let mut wn = dot(&w, &w).sqrt();
                if wn == 0.0 {
                    // On the centre circle: snap outwards.
                    w = [cx / major, cy / major, 0.0];
                    wn = 1.0;
                }
                let s = minor / wn;
                x[0] = cx + s * w[0];
                x[1] = cy + s * w[1];
                x[2] = s * w[2];
            }
            Shape::Chart(c) => {
                let y = (c.retraction)(x).ok_or_else(|| Error::RetractionUndefined(x.to_vec()))?;
                if y.len() != x.len() {
                    return Err(Error::RetractionUndefined(x.to_vec()));
                }
                x.copy_from_slice(&y);
            }
        }
        Ok(())
    }

    /// Unit normal at an on-set point, for codimension-one built-ins.
    pub fn unit_normal(&self, x: &[f64]) -> Option<Vec<f64>> {
        match &self.shape {
            Shape::Sphere { .. } => {
                let n = dot(x, x).sqrt();
                (n > 0.0).then(|| x.iter().map(|c| c / n).collect())
            }
            Shape::Torus { major, .. } => {
                let (cx, cy) = torus_center(x, *major);
                let w = [x[0] - cx, x[1] - cy, x[2]];
                let n = dot(&w, &w).sqrt();
                (n > 0.0).then(|| w.iter().map(|c| c / n).collect())
            }
            _ => None,
        }
    }

    /// Projects an ambient vector onto the tangent space at `x`.
    pub fn tangent_project(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        self.tangent_project_in_place(x, &mut out);
        out
    }

    pub fn tangent_project_in_place(&self, x: &[f64], v: &mut [f64]) {
        match &self.shape {
            // One-dimensional ambient space: the tangent line is everything.
            Shape::Interval { .. } => {}
            Shape::Sphere { .. } | Shape::Torus { .. } => {
                if let Some(n) = self.unit_normal(x) {
                    let c = dot(v, &n);
                    v.iter_mut().zip(&n).for_each(|(vi, ni)| *vi -= c * ni);
                }
            }
            Shape::Chart(c) => {
                let out = (c.tangent_projector)(x, v);
                v.copy_from_slice(&out);
            }
        }
    }

    /// Draws `n` distinct points: a quadrature node chosen with probability
    /// proportional to its weight, jittered tangentially by about half a
    /// cell and retracted. Collisions are resampled.
    pub fn sample_points<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        self.sample_points_weighted(n, &self.weights, rng)
    }

    /// As [`Self::sample_points`], drawing node `i` with probability
    /// proportional to `node_weights[i]`.
    pub fn sample_points_weighted<R: Rng + ?Sized>(
        &self,
        n: usize,
        node_weights: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.sample_nodes(n, node_weights, false, rng)
    }

    /// As [`Self::sample_points_weighted`], but nodes are picked by
    /// systematic sampling: one uniform offset `u`, then the node holding
    /// cumulative weight `(k + u) / n` for each `k`. Any run of consecutive
    /// nodes receives its share of the `n` points to within one.
    pub fn sample_points_systematic<R: Rng + ?Sized>(
        &self,
        n: usize,
        node_weights: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.sample_nodes(n, node_weights, true, rng)
    }

    fn sample_nodes<R: Rng + ?Sized>(
        &self,
        n: usize,
        node_weights: &[f64],
        systematic: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let p = self.ambient_dim;
        if node_weights.len() != self.quadrature_len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} node weights, got {}",
                self.quadrature_len(),
                node_weights.len()
            )));
        }
        let index = WeightedIndex::new(node_weights)
            .map_err(|e| Error::InvalidArgument(format!("bad sampling weights: {e}")))?;
        let cumulative: Vec<f64> = node_weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        let total = cumulative.last().copied().unwrap_or(0.0);
        let offset: f64 = if systematic { rng.gen() } else { 0.0 };
        let cell = (self.total_measure / self.quadrature_len() as f64)
            .powf(1.0 / self.hausdorff_dim as f64);
        let jitter = 0.5 * cell;
        let min_sep2 = (1e-9 * self.diameter).powi(2);
        let mut out: Vec<f64> = Vec::with_capacity(n * p);
        let mut attempts = 0usize;
        let mut x = vec![0.0; p];
        let mut v = vec![0.0; p];
        while out.len() < n * p {
            attempts += 1;
            if attempts > 1000 * n + 1000 {
                return Err(Error::InvalidArgument(format!(
                    "could not sample {n} distinct points on {}",
                    self.label()
                )));
            }
            let i = if systematic {
                let target = total * (out.len() / p) as f64 / n as f64 + total * offset / n as f64;
                cumulative.partition_point(|c| *c <= target).min(cumulative.len() - 1)
            } else {
                index.sample(rng)
            };
            let node = self.node(i);
            x.copy_from_slice(node);
            for vi in v.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *vi = jitter * g;
            }
            self.tangent_project_in_place(node, &mut v);
            x.iter_mut().zip(&v).for_each(|(xi, vi)| *xi += vi);
            if self.retract_in_place(&mut x).is_err() {
                continue;
            }
            if out.chunks_exact(p).any(|y| dist2(y, &x) < min_sep2) {
                continue;
            }
            out.extend_from_slice(&x);
        }
        Ok(out)
    }

    /// This set with a covering mesh of the given fill distance attached.
    pub fn with_covering_mesh(mut self, fill_distance: f64) -> Result<Self> {
        self.mesh = Some(Arc::new(self.covering_mesh(fill_distance)?));
        Ok(self)
    }

    pub fn mesh(&self) -> Option<&Mesh> {
        self.mesh.as_deref()
    }

    pub fn covering_mesh(&self, fill_distance: f64) -> Result<Mesh> {
        self.covering_mesh_with_budget(fill_distance, DEFAULT_NODE_BUDGET)
    }

    /// Points on the set such that every point of the set's parametrization
    /// lies within `fill_distance` of one of them.
    pub fn covering_mesh_with_budget(&self, fill_distance: f64, budget: u64) -> Result<Mesh> {
        if !(fill_distance > 0.0 && fill_distance < self.diameter) {
            return Err(Error::InvalidArgument(format!(
                "fill distance must lie in (0, {}), got {fill_distance}",
                self.diameter
            )));
        }
        let f = fill_distance;
        let estimate = match &self.shape {
            Shape::Interval { a, b } => ((b - a) / f).ceil() as u64 + 1,
            Shape::Sphere { radius } => {
                let rings = (PI * radius / f).ceil() + 1.0;
                (rings * (2.0 * PI * radius / f + 1.0)).ceil() as u64
            }
            Shape::Torus { major, minor } => {
                let rings = (2.0 * PI * minor / f).ceil() + 1.0;
                (rings * (2.0 * PI * (major + minor) / f + 1.0)).ceil() as u64
            }
            Shape::Chart(_) => {
                let counts = self.chart_mesh_counts(f);
                counts.iter().map(|&n| n as u64).product()
            }
        };
        if estimate > budget {
            return Err(Error::NodeBudget {
                requested: estimate,
                budget,
            });
        }

        let mut coords = Vec::new();
        match &self.shape {
            Shape::Interval { a, b } => {
                let n = ((b - a) / f).ceil() as usize + 1;
                let h = (b - a) / (n - 1) as f64;
                coords.extend((0..n).map(|i| if i + 1 == n { *b } else { a + i as f64 * h }));
            }
            Shape::Sphere { radius } => {
                let r = *radius;
                let rings = (PI * r / f).ceil() as usize + 1;
                for k in 0..rings {
                    let theta = PI * k as f64 / (rings - 1) as f64;
                    let (st, ct) = theta.sin_cos();
                    let m = ((2.0 * PI * r * st / f).ceil() as usize).max(1);
                    for j in 0..m {
                        let phi = 2.0 * PI * j as f64 / m as f64;
                        coords.extend_from_slice(&[
                            r * st * phi.cos(),
                            r * st * phi.sin(),
                            if k == 0 {
                                r
                            } else if k + 1 == rings {
                                -r
                            } else {
                                r * ct
                            },
                        ]);
                    }
                }
            }
            Shape::Torus { major, minor } => {
                let nv = ((2.0 * PI * minor / f).ceil() as usize).max(3);
                for j in 0..nv {
                    let v = 2.0 * PI * j as f64 / nv as f64;
                    let ring = major + minor * v.cos();
                    let nu = ((2.0 * PI * ring / f).ceil() as usize).max(3);
                    for i in 0..nu {
                        let u = 2.0 * PI * i as f64 / nu as f64;
                        coords.extend_from_slice(&[ring * u.cos(), ring * u.sin(), minor * v.sin()]);
                    }
                }
            }
            Shape::Chart(c) => {
                let counts = self.chart_mesh_counts(f);
                let total: usize = counts.iter().product();
                let d = c.hausdorff_dim;
                let mut params = vec![0.0; d];
                for flat in 0..total {
                    let mut rem = flat;
                    for k in (0..d).rev() {
                        let n = counts[k];
                        let i = rem % n;
                        rem /= n;
                        let (lo, hi) = c.domain[k];
                        params[k] = if c.periodic[k] {
                            lo + (hi - lo) * i as f64 / n as f64
                        } else {
                            lo + (hi - lo) * i as f64 / (n - 1) as f64
                        };
                    }
                    coords.extend((c.map)(&params));
                }
            }
        }
        Ok(Mesh {
            dim: self.ambient_dim,
            coords,
            fill_distance,
        })
    }

    /// Per-axis grid counts for a chart mesh, from a finite-difference
    /// estimate of the chart's stretch along each axis.
    fn chart_mesh_counts(&self, f: f64) -> Vec<usize> {
        let Shape::Chart(c) = &self.shape else {
            return Vec::new();
        };
        let d = c.hausdorff_dim;
        let probes = 9usize;
        let mut stretch = vec![0.0f64; d];
        let mut params = vec![0.0; d];
        for flat in 0..probes.pow(d as u32) {
            let mut rem = flat;
            for k in 0..d {
                let i = rem % probes;
                rem /= probes;
                let (lo, hi) = c.domain[k];
                params[k] = lo + (hi - lo) * (i as f64 + 0.5) / probes as f64;
            }
            for k in 0..d {
                let (lo, hi) = c.domain[k];
                let h = 1e-6 * (hi - lo);
                let mut pp = params.clone();
                let mut pm = params.clone();
                pp[k] += h;
                pm[k] -= h;
                let speed = dist2(&(c.map)(&pp), &(c.map)(&pm)).sqrt() / (2.0 * h);
                stretch[k] = stretch[k].max(speed);
            }
        }
        (0..d)
            .map(|k| {
                let (lo, hi) = c.domain[k];
                // 1.25 covers stretch variation between probes.
                let len = 1.25 * stretch[k] * (hi - lo) * (d as f64).sqrt();
                ((len / f).ceil() as usize + 1).max(2)
            })
            .collect()
    }
}

fn torus_center(x: &[f64], major: f64) -> (f64, f64) {
    let rho = x[0].hypot(x[1]);
    if rho > 0.0 {
        (major * x[0] / rho, major * x[1] / rho)
    } else {
        (major, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn builtins() -> Vec<CompactSet> {
        vec![
            CompactSet::interval(0.0, 2.0, 64).unwrap(),
            CompactSet::sphere(1.0, 48, 96).unwrap(),
            CompactSet::torus(2.0, 4.0, 64, 64).unwrap(),
        ]
    }

    #[test]
    fn interval_basics() {
        let set = CompactSet::interval(0.0, 2.0, 64).unwrap();
        assert_eq!(set.total_measure(), 2.0);
        assert!((set.integrate(|x| x[0]) - 2.0).abs() < 1e-13);
        assert_eq!(set.retract(&[2.5]).unwrap().coords(), &[2.0]);
        assert_eq!(set.retract(&[-1.0]).unwrap().coords(), &[0.0]);
    }

    #[test]
    fn interval_rejects_bad_input() {
        assert!(CompactSet::interval(1.0, 1.0, 8).is_err());
        assert!(CompactSet::interval(2.0, 1.0, 8).is_err());
        assert!(CompactSet::interval(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn sphere_quadrature() {
        let set = CompactSet::sphere(1.0, 48, 96).unwrap();
        assert!((set.integrate(|_| 1.0) - 4.0 * PI).abs() < 1e-10);
        assert!((set.integrate(|x| x[2] * x[2]) - 4.0 * PI / 3.0).abs() < 1e-8);
        let r = set.retract(&[0.0, 0.0, 2.0]).unwrap();
        assert!(dist2(&r, &[0.0, 0.0, 1.0]) < 1e-30);
    }

    #[test]
    fn sphere_z_squared_monte_carlo_agrees() {
        // Independent check of int z^2 dH_2 = 4 pi / 3: uniform samples via
        // normalized Gaussians.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 2_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let g: [f64; 3] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            acc += g[2] * g[2] / dot(&g, &g);
        }
        let mc = 4.0 * PI * acc / n as f64;
        let quad = CompactSet::sphere(1.0, 48, 96).unwrap().integrate(|x| x[2] * x[2]);
        // Standard error of the estimate is about 1.1e-3.
        assert!((mc - quad).abs() < 6e-3, "mc {mc}, quad {quad}");
    }

    #[test]
    fn sphere_rejects_bad_input() {
        assert!(CompactSet::sphere(0.0, 8, 8).is_err());
        assert!(CompactSet::sphere(-1.0, 8, 8).is_err());
        let set = CompactSet::sphere(1.0, 8, 8).unwrap();
        assert!(matches!(
            set.retract(&[0.0, 0.0, 0.0]),
            Err(Error::RetractionUndefined(_))
        ));
    }

    #[test]
    fn torus_basics() {
        let set = CompactSet::torus(2.0, 4.0, 64, 64).unwrap();
        let area = 4.0 * PI * PI * 3.0;
        assert!((set.total_measure() - area).abs() < 1e-9);
        assert!((set.weights().iter().sum::<f64>() - set.total_measure()).abs() < 1e-10 * area);
        let r = set.retract(&[4.5, 0.0, 0.0]).unwrap();
        assert!(dist2(&r, &[4.0, 0.0, 0.0]) < 1e-28);
        assert!(CompactSet::torus(4.0, 2.0, 8, 8).is_err());
        assert!(CompactSet::torus(2.0, 2.0, 8, 8).is_err());
    }

    #[test]
    fn weight_sums_match_total_measure() {
        for set in builtins() {
            let sum: f64 = set.weights().iter().sum();
            assert!(
                ((sum - set.total_measure()) / set.total_measure()).abs() < 1e-10,
                "{}",
                set.label()
            );
        }
    }

    #[test]
    fn doubling_nodes_changes_smooth_integrals_little() {
        let tests: [fn(&[f64]) -> f64; 3] = [|_| 1.0, |x| x[0], |x| x[x.len() - 1].powi(2)];
        for set in builtins() {
            let fine = set.refined(2).unwrap();
            for f in tests {
                let a = set.integrate(f);
                let b = fine.integrate(f);
                let scale = a.abs().max(b.abs()).max(1.0);
                assert!((a - b).abs() / scale < 1e-6, "{}: {a} vs {b}", set.label());
            }
        }
    }

    #[test]
    fn retraction_is_idempotent_on_random_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for set in builtins() {
            let p = set.ambient_dim();
            for _ in 0..1000 {
                let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-6.0..6.0)).collect();
                let Ok(y) = set.retract(&x) else { continue };
                let z = set.retract(&y).unwrap();
                assert!(dist2(&y, &z).sqrt() < 1e-12, "{}", set.label());
            }
        }
    }

    #[test]
    fn tangent_projection_is_idempotent_and_normal_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for set in builtins().into_iter().skip(1) {
            for _ in 0..200 {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let Ok(x) = set.retract(&x) else { continue };
                let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let pv = set.tangent_project(&x, &v);
                let ppv = set.tangent_project(&x, &pv);
                assert!(dist2(&pv, &ppv).sqrt() < 1e-12);
                let n = set.unit_normal(&x).unwrap();
                assert!(dot(&pv, &n).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn interval_mesh_covers() {
        let set = CompactSet::interval(0.0, 1.0, 16).unwrap();
        let mesh = set.covering_mesh(0.25).unwrap();
        for k in 0..=1000 {
            let t = k as f64 / 1000.0;
            let d = mesh.iter().map(|m| (m[0] - t).abs()).fold(f64::INFINITY, f64::min);
            assert!(d <= 0.25);
        }
    }

    #[test]
    fn sphere_mesh_on_set() {
        let set = CompactSet::sphere(1.0, 16, 32).unwrap();
        let mesh = set.covering_mesh(0.1).unwrap();
        for m in mesh.iter() {
            assert!((dot(m, m).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn torus_mesh_covers_finer_probe_grid() {
        let set = CompactSet::torus(2.0, 4.0, 16, 16).unwrap();
        let f = 0.2;
        let mesh = set.covering_mesh(f).unwrap();
        // Probe grid ten times finer than the mesh's densest ring spacing.
        let nv = 10 * (2.0 * PI / f).ceil() as usize;
        let nu = 10 * (2.0 * PI * 4.0 / f).ceil() as usize;
        let mut worst: f64 = 0.0;
        for j in 0..nv {
            let v = 2.0 * PI * j as f64 / nv as f64;
            let ring = 3.0 + v.cos();
            for i in 0..nu {
                let u = 2.0 * PI * i as f64 / nu as f64;
                let x = [ring * u.cos(), ring * u.sin(), v.sin()];
                let d2 = mesh.iter().map(|m| dist2(m, &x)).fold(f64::INFINITY, f64::min);
                worst = worst.max(d2);
            }
        }
        assert!(worst.sqrt() <= f, "worst probe distance {}", worst.sqrt());
    }

    #[test]
    fn mesh_budget_is_enforced() {
        let set = CompactSet::sphere(1.0, 8, 8).unwrap();
        assert!(matches!(
            set.covering_mesh_with_budget(1e-4, 1_000_000),
            Err(Error::NodeBudget { .. })
        ));
        assert!(set.covering_mesh(0.0).is_err());
        assert!(set.covering_mesh(3.0).is_err());
    }

    #[test]
    fn descriptor_round_trip() {
        for set in builtins() {
            let json = serde_json::to_string(&set.descriptor()).unwrap();
            let back: SetDescriptor = serde_json::from_str(&json).unwrap();
            let rebuilt = CompactSet::from_descriptor(&back).unwrap();
            assert_eq!(rebuilt.quadrature_len(), set.quadrature_len());
            assert_eq!(rebuilt.total_measure(), set.total_measure());
        }
        let d: SetDescriptor = serde_json::from_str(r#"{"kind":"sphere"}"#).unwrap();
        let s = CompactSet::from_descriptor(&d).unwrap();
        assert_eq!(s.quadrature_len(), 96 * 192);
    }

    #[test]
    fn chart_set_matches_builtin_sphere() {
        let chart = Chart {
            label: "sphere chart".into(),
            hausdorff_dim: 2,
            ambient_dim: 3,
            domain: vec![(0.0, PI), (0.0, 2.0 * PI)],
            periodic: vec![false, true],
            map: Arc::new(|p| vec![p[0].sin() * p[1].cos(), p[0].sin() * p[1].sin(), p[0].cos()]),
            jacobian: Arc::new(|p| p[0].sin()),
            retraction: Arc::new(|x| {
                let n = dot(x, x).sqrt();
                (n > 0.0).then(|| x.iter().map(|c| c / n).collect())
            }),
            tangent_projector: Arc::new(|x, v| {
                let c = dot(x, v);
                v.iter().zip(x).map(|(vi, xi)| vi - c * xi).collect()
            }),
        };
        let set = CompactSet::from_chart(chart, &[64, 64]).unwrap();
        assert!((set.total_measure() - 4.0 * PI).abs() < 1e-10);
        assert!((set.diameter() - 2.0).abs() < 0.05);
        let mesh = set.covering_mesh(0.2).unwrap();
        assert!(!mesh.is_empty());
        assert!(CompactSet::from_descriptor(&set.descriptor()).is_err());
    }

    #[test]
    fn grid_neighbors_wrap_on_periodic_axes() {
        let g = QuadGrid {
            shape: vec![3, 4],
            periodic: vec![false, true],
        };
        let mut n = g.neighbors(0);
        n.sort();
        assert_eq!(n, vec![1, 3, 4]);
        let mut f = g.forward_neighbors(3);
        f.sort();
        assert_eq!(f, vec![0, 7]);
    }

    #[test]
    fn sampled_points_are_on_set_and_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = CompactSet::interval(0.0, 2.0, 16).unwrap();
        let pts = set.sample_points(100, &mut rng).unwrap();
        assert_eq!(pts.len(), 100);
        assert!(pts.iter().all(|x| (0.0..=2.0).contains(x)));
        let set = CompactSet::sphere(1.0, 16, 32).unwrap();
        let pts = set.sample_points(50, &mut rng).unwrap();
        for x in pts.chunks_exact(3) {
            assert!((dot(x, x).sqrt() - 1.0).abs() < 1e-12);
        }
    }
}
