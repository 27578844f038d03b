//! Quality measures for point configurations: separation, covering radius,
//! mesh ratio, the point potential `U(x, w)`, sublevel containment,
//! empirical densities and weak* discrepancies.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::equilibrium::{sublevel_components, EquilibriumMeasure};
use crate::error::{Error, Result};
use crate::fields::ExternalField;
use crate::geometry::{dist2, CompactSet, Mesh};
use crate::optimizer::{energy, tau, Configuration};
use crate::quadrature::integrate_1d;

/// Minimal pairwise distance, by exhaustive scan.
pub fn separation(config: &Configuration) -> f64 {
    let n = config.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let xi = config.point(i);
        for j in i + 1..n {
            best = best.min(dist2(xi, config.point(j)));
        }
    }
    best.sqrt()
}

/// Bucket grid over a point cloud for nearest-neighbour queries.
pub struct NeighborGrid<'a> {
    coords: &'a [f64],
    dim: usize,
    cell: f64,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
}

impl<'a> NeighborGrid<'a> {
    pub fn new(coords: &'a [f64], dim: usize, cell: f64) -> Self {
        assert!(cell > 0.0 && !coords.is_empty());
        let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (i, x) in coords.chunks_exact(dim).enumerate() {
            buckets.entry(key(x, cell)).or_default().push(i);
        }
        NeighborGrid {
            coords,
            dim,
            cell,
            buckets,
        }
    }

    /// Cell size suited to `n` points spread over a `d`-dimensional set.
    pub fn for_set(coords: &'a [f64], set: &CompactSet) -> Self {
        let n = coords.len() / set.ambient_dim();
        let cell = 2.0 * set.diameter() * (n as f64).powf(-1.0 / set.hausdorff_dim() as f64);
        Self::new(coords, set.ambient_dim(), cell)
    }

    /// Index of and distance to the closest point.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let center = key(x, self.cell);
        let mut best = (usize::MAX, f64::INFINITY);
        let mut offset = vec![0i64; self.dim];
        for r in 0i64.. {
            // Everything beyond shell r is at least r * cell away.
            if best.0 != usize::MAX && best.1.sqrt() <= (r - 1).max(0) as f64 * self.cell {
                break;
            }
            visit_shell(&mut offset, 0, r, &mut |o| {
                let k: Vec<i64> = center.iter().zip(o).map(|(c, d)| c + d).collect();
                if let Some(ids) = self.buckets.get(&k) {
                    for &i in ids {
                        let d2 = dist2(x, &self.coords[i * self.dim..(i + 1) * self.dim]);
                        if d2 < best.1 {
                            best = (i, d2);
                        }
                    }
                }
            });
        }
        (best.0, best.1.sqrt())
    }
}

fn key(x: &[f64], cell: f64) -> Vec<i64> {
    x.iter().map(|v| (v / cell).floor() as i64).collect()
}

/// Calls `f` on every integer offset with Chebyshev norm exactly `r`.
fn visit_shell(offset: &mut [i64], k: usize, r: i64, f: &mut impl FnMut(&[i64])) {
    if k == offset.len() {
        if offset.iter().any(|o| o.abs() == r) || r == 0 {
            f(offset);
        }
        return;
    }
    for o in -r..=r {
        offset[k] = o;
        visit_shell(offset, k + 1, r, f);
    }
}

/// Mesh-approximate covering radius with the mesh fill distance as its
/// error bar.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringRadius {
    pub value: f64,
    pub fill_distance: f64,
    /// Mesh points that took part.
    pub mesh_points: usize,
}

/// `max_{y in mesh} dist(y, w)`, over mesh points with `q(y) <= threshold`
/// when `sublevel` is given.
pub fn covering_radius(
    config: &Configuration,
    set: &CompactSet,
    mesh: &Mesh,
    sublevel: Option<(&ExternalField, f64)>,
) -> Result<CoveringRadius> {
    covering_radius_where(config, set, mesh, |y| match sublevel {
        Some((q, t)) => q.evaluate(y) <= t,
        None => true,
    })
}

/// Covering radius over the mesh points selected by `keep`.
pub fn covering_radius_where(
    config: &Configuration,
    set: &CompactSet,
    mesh: &Mesh,
    keep: impl Fn(&[f64]) -> bool,
) -> Result<CoveringRadius> {
    let mask: Vec<bool> = mesh.iter().map(keep).collect();
    covering_radius_masked(config, set, mesh, &mask)
}

/// Covering radius over the mesh points whose `mask` entry is set.
pub fn covering_radius_masked(
    config: &Configuration,
    set: &CompactSet,
    mesh: &Mesh,
    mask: &[bool],
) -> Result<CoveringRadius> {
    assert_eq!(mask.len(), mesh.len());
    let grid = NeighborGrid::for_set(config.coords(), set);
    let mut value: f64 = 0.0;
    let mut used = 0;
    for (y, _) in mesh.iter().zip(mask).filter(|(_, k)| **k) {
        used += 1;
        value = value.max(grid.nearest(y).1);
    }
    if used == 0 {
        return Err(Error::EmptySublevel);
    }
    Ok(CoveringRadius {
        value,
        fill_distance: mesh.fill_distance,
        mesh_points: used,
    })
}

/// `covering_radius / separation`.
pub fn mesh_ratio(
    config: &Configuration,
    set: &CompactSet,
    mesh: &Mesh,
    sublevel: Option<(&ExternalField, f64)>,
) -> Result<f64> {
    Ok(covering_radius(config, set, mesh, sublevel)?.value / separation(config))
}

/// `U(x, w) = sum_{y != x} |x - y|^{-s} + q(x) tau(N) / N`; `+inf` when `x`
/// coincides with a configuration point other than itself.
pub fn point_potential(
    x: &[f64],
    config: &Configuration,
    field: &ExternalField,
    s: f64,
    scale_n: usize,
) -> Result<f64> {
    let coef = tau(s, config.hausdorff_dim(), scale_n)? / scale_n as f64;
    let mut acc = 0.0;
    let mut skipped_self = false;
    for y in config.points() {
        let r2 = dist2(x, y);
        if r2 == 0.0 {
            if skipped_self {
                return Ok(f64::INFINITY);
            }
            skipped_self = true;
            continue;
        }
        acc += r2.powf(-0.5 * s);
    }
    Ok(acc + coef * field.evaluate(x))
}

/// `max_i q(x_i) - L1`.
pub fn containment_check(config: &Configuration, field: &ExternalField, l1: f64) -> f64 {
    config
        .points()
        .map(|x| field.evaluate(x) - l1)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `E(w) / tau(N)` with `scale_N = N`.
pub fn energy_ratio(config: &Configuration, field: &ExternalField, s: f64) -> Result<f64> {
    let n = config.len();
    Ok(energy(config, field, s, n)? / tau(s, config.hausdorff_dim(), n)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinKind {
    Interval,
    SphereBand,
    QuadratureCell,
}

/// One bin of an empirical density estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityBin {
    /// Interval coordinate or `z` range of the bin; node index range for
    /// quadrature cells.
    pub lo: f64,
    pub hi: f64,
    pub measure: f64,
    pub count: usize,
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDensity {
    pub kind: BinKind,
    pub n_points: usize,
    pub bins: Vec<DensityBin>,
}

/// Counting-measure density: `ceil(sqrt N)` equal bins on an interval,
/// `ceil(sqrt N)` equal-area bands in `z` on a sphere, nearest quadrature
/// node cells otherwise. Densities are relative to `H_d`.
pub fn empirical_density(config: &Configuration, set: &CompactSet) -> Result<EmpiricalDensity> {
    let n = config.len();
    if n < 16 {
        return Err(Error::InvalidArgument(format!("empirical density needs N >= 16, got {n}")));
    }
    let nf = n as f64;
    let nbins = nf.sqrt().ceil() as usize;
    let uniform_bins = |lo: f64, hi: f64, coord: &dyn Fn(&[f64]) -> f64, area: f64| {
        let width = (hi - lo) / nbins as f64;
        let mut counts = vec![0usize; nbins];
        for x in config.points() {
            let b = (((coord(x) - lo) / width).floor() as isize).clamp(0, nbins as isize - 1);
            counts[b as usize] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(b, count)| DensityBin {
                lo: lo + b as f64 * width,
                hi: lo + (b + 1) as f64 * width,
                measure: area * width,
                count,
                density: count as f64 / (nf * area * width),
            })
            .collect::<Vec<_>>()
    };
    if let Some((a, b)) = set.interval_bounds() {
        return Ok(EmpiricalDensity {
            kind: BinKind::Interval,
            n_points: n,
            bins: uniform_bins(a, b, &|x| x[0], 1.0),
        });
    }
    if let Some(r) = set.sphere_radius() {
        // dA = 2 pi r dz on a sphere of radius r.
        return Ok(EmpiricalDensity {
            kind: BinKind::SphereBand,
            n_points: n,
            bins: uniform_bins(-r, r, &|x| x[2], 2.0 * PI * r),
        });
    }
    let nodes: Vec<f64> = set.nodes().flatten().copied().collect();
    let lookup = NeighborGrid::for_set(&nodes, set);
    let mut counts = vec![0usize; set.quadrature_len()];
    for x in config.points() {
        counts[lookup.nearest(x).0] += 1;
    }
    Ok(EmpiricalDensity {
        kind: BinKind::QuadratureCell,
        n_points: n,
        bins: counts
            .into_iter()
            .zip(set.weights())
            .enumerate()
            .map(|(i, (count, w))| DensityBin {
                lo: i as f64,
                hi: (i + 1) as f64,
                measure: *w,
                count,
                density: count as f64 / (nf * w),
            })
            .collect(),
    })
}

impl EmpiricalDensity {
    /// Average equilibrium density over each bin.
    pub fn predicted(&self, measure: &EquilibriumMeasure, set: &CompactSet) -> Vec<f64> {
        match self.kind {
            BinKind::Interval => self
                .bins
                .iter()
                .map(|b| integrate_1d(|x| measure.density_at(&[x]), b.lo, b.hi, 8, 16) / (b.hi - b.lo))
                .collect(),
            BinKind::SphereBand => {
                let mut mass = vec![0.0; self.bins.len()];
                let mut area = vec![0.0; self.bins.len()];
                let (lo, hi) = (self.bins[0].lo, self.bins[self.bins.len() - 1].hi);
                let width = (hi - lo) / self.bins.len() as f64;
                for ((x, w), rho) in set.quadrature().zip(measure.node_density()) {
                    let b = (((x[2] - lo) / width).floor() as isize).clamp(0, self.bins.len() as isize - 1) as usize;
                    mass[b] += w * rho;
                    area[b] += w;
                }
                mass.iter().zip(&area).map(|(m, a)| if *a > 0.0 { m / a } else { 0.0 }).collect()
            }
            BinKind::QuadratureCell => measure.node_density().to_vec(),
        }
    }

    /// `max_b |empirical_b - predicted_b|`.
    pub fn sup_deviation(&self, measure: &EquilibriumMeasure, set: &CompactSet) -> f64 {
        self.bins
            .iter()
            .zip(self.predicted(measure, set))
            .map(|(b, p)| (b.density - p).abs())
            .fold(0.0, f64::max)
    }

    /// Columns `lo, hi, measure, count, empirical, predicted`.
    pub fn to_csv(&self, measure: &EquilibriumMeasure, set: &CompactSet) -> Result<String> {
        let predicted = self.predicted(measure, set);
        let mut wtr = crate::cli::csv_writer(Vec::new());
        let csv_err = crate::equilibrium::csv_err;
        wtr.write_record(["lo", "hi", "measure", "count", "empirical", "predicted"])
            .map_err(csv_err)?;
        for (b, p) in self.bins.iter().zip(predicted) {
            wtr.write_record([
                format!("{:e}", b.lo),
                format!("{:e}", b.hi),
                format!("{:e}", b.measure),
                b.count.to_string(),
                format!("{:e}", b.density),
                format!("{p:e}"),
            ])
            .map_err(csv_err)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is ascii"))
    }
}

/// A labelled continuous test function for weak* comparisons.
#[derive(Clone)]
pub struct TestFunction {
    pub label: String,
    pub f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl TestFunction {
    pub fn new(label: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        TestFunction {
            label: label.into(),
            f: Arc::new(f),
        }
    }
}

/// Coordinate functions `x_k` and their squares.
pub fn default_test_functions(ambient_dim: usize) -> Vec<TestFunction> {
    let mut out = Vec::with_capacity(2 * ambient_dim);
    for k in 0..ambient_dim {
        out.push(TestFunction::new(format!("x{k}"), move |x: &[f64]| x[k]));
    }
    for k in 0..ambient_dim {
        out.push(TestFunction::new(format!("x{k}^2"), move |x: &[f64]| x[k] * x[k]));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakStarError {
    pub label: String,
    pub error: f64,
}

/// `|(1/N) sum_i f(x_i) - int f dmu|` for each test function.
pub fn weak_star_error(
    config: &Configuration,
    measure: &EquilibriumMeasure,
    set: &CompactSet,
    tests: &[TestFunction],
) -> Vec<WeakStarError> {
    let n = config.len() as f64;
    tests
        .iter()
        .map(|t| {
            let empirical = config.points().map(|x| (t.f)(x)).sum::<f64>() / n;
            let exact = measure.integrate(set, |x| (t.f)(x));
            WeakStarError {
                label: t.label.clone(),
                error: (empirical - exact).abs(),
            }
        })
        .collect()
}

/// Labels covering-mesh points by the component of `{q <= threshold}`
/// (computed on the quadrature grid) of their nearest quadrature node.
pub fn label_mesh_by_component(
    set: &CompactSet,
    mesh: &Mesh,
    field: &ExternalField,
    threshold: f64,
) -> (Vec<Option<usize>>, usize) {
    let (node_labels, count) = sublevel_components(set, field, threshold);
    let nodes: Vec<f64> = set.nodes().flatten().copied().collect();
    let lookup = NeighborGrid::for_set(&nodes, set);
    let labels = mesh
        .iter()
        .map(|y| if field.evaluate(y) <= threshold { node_labels[lookup.nearest(y).0] } else { None })
        .collect();
    (labels, count)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub separation: f64,
    pub covering_radius: f64,
    pub covering_fill_distance: f64,
    /// Sublevel threshold `L1 - h` the covering radius was restricted to.
    pub covering_threshold: f64,
    pub mesh_ratio: f64,
    pub energy_ratio: f64,
    pub s_predicted: f64,
    pub weak_star_errors: Vec<WeakStarError>,
    pub containment_margin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticOptions {
    /// Fill distance of the covering mesh; `None` picks a tenth of the
    /// typical spacing `diameter * N^{-1/d}`.
    pub fill_distance: Option<f64>,
    /// Sublevel margin; `None` means `0.05 (L1 - min q)`.
    pub h: Option<f64>,
}

impl Default for DiagnosticOptions {
    fn default() -> Self {
        DiagnosticOptions {
            fill_distance: None,
            h: None,
        }
    }
}

pub fn default_h(measure: &EquilibriumMeasure) -> f64 {
    let qmin = measure
        .node_field()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    0.05 * (measure.l1 - qmin)
}

pub fn default_fill_distance(set: &CompactSet, n: usize) -> f64 {
    0.1 * set.diameter() * (n as f64).powf(-1.0 / set.hausdorff_dim() as f64)
}

/// Every diagnostic for one configuration.
pub fn diagnose(
    set: &CompactSet,
    config: &Configuration,
    measure: &EquilibriumMeasure,
    options: &DiagnosticOptions,
) -> Result<DiagnosticsReport> {
    let field = measure.field();
    let n = config.len();
    let fill = options.fill_distance.unwrap_or_else(|| default_fill_distance(set, n));
    let mesh = match set.mesh() {
        Some(m) => m.clone(),
        None => set.covering_mesh(fill)?,
    };
    let h = options.h.unwrap_or_else(|| default_h(measure));
    let threshold = measure.l1 - h;
    let covering = covering_radius(config, set, &mesh, Some((field, threshold)))?;
    let sep = separation(config);
    Ok(DiagnosticsReport {
        separation: sep,
        covering_radius: covering.value,
        covering_fill_distance: covering.fill_distance,
        covering_threshold: threshold,
        mesh_ratio: covering.value / sep,
        energy_ratio: energy_ratio(config, field, measure.s)?,
        s_predicted: measure.s_limit(),
        weak_star_errors: weak_star_error(config, measure, set, &default_test_functions(set.ambient_dim())),
        containment_margin: containment_check(config, field, measure.l1),
    })
}
