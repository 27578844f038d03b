//! The limiting measure of `(s, d, q)`-energy minimizers.
//!
//! `L1` is the level making `((L1 - q) / M_{s,d})_+^{d/s}` a probability
//! density on `A`; that density is the weak* limit of minimizers and
//! `S(q, A) = int (L1 + s q / d) / (1 + s/d) dmu` is the limit of
//! `E / tau(N)`. Everything is computed from the set's quadrature.

use serde::{Deserialize, Serialize};

use crate::constants::{riesz_constant, RieszConstant};
use crate::error::{Error, Result};
use crate::fields::ExternalField;
use crate::geometry::CompactSet;
use crate::quadrature::integrate_positive_part;

/// Enough halvings to exhaust f64 resolution even when the level sits near zero,
/// where a field flat at the level makes the mass rise like a small power of L.
pub const MAX_BISECTION_STEPS: usize = 1100;
pub const MAX_BRACKET_DOUBLINGS: usize = 60;
pub const MASS_TOLERANCE: f64 = 1e-10;

/// Panels used by the edge-resolved integrals on intervals.
const INTERVAL_PANELS: usize = 256;

/// `int h ((L - q) / M)_+^{d/s} dH_d`. Intervals resolve the support edges
/// exactly; other sets use their quadrature nodes.
struct Density<'a> {
    q: &'a [f64],
    w: &'a [f64],
    field: &'a ExternalField,
    interval: Option<(f64, f64)>,
    m: f64,
    exponent: f64,
}

impl<'a> Density<'a> {
    fn new(set: &'a CompactSet, field: &'a ExternalField, q: &'a [f64], constant: &RieszConstant) -> Self {
        Density {
            q,
            w: set.weights(),
            field,
            interval: set.interval_bounds(),
            m: constant.m_constant(),
            exponent: constant.d as f64 / constant.s,
        }
    }

    fn integral(&self, level: f64, h: impl Fn(&[f64], f64) -> f64) -> f64 {
        if let Some((a, b)) = self.interval {
            let m = self.m;
            return integrate_positive_part(
                |x| (level - self.field.evaluate(&[x])) / m,
                |x| h(&[x], self.field.evaluate(&[x])),
                self.exponent,
                a,
                b,
                INTERVAL_PANELS,
            );
        }
        self.q
            .iter()
            .zip(self.w)
            .map(|(q, w)| {
                let rho = clipped_density(level, *q, self.m, self.exponent);
                if rho > 0.0 {
                    w * rho * h(&[], *q)
                } else {
                    0.0
                }
            })
            .sum()
    }

    fn mass(&self, level: f64) -> f64 {
        self.integral(level, |_, _| 1.0)
    }
}

/// Bisection on the nondecreasing mass function. Returns `(L1, |mass - 1|)`.
fn bisect_level(mass: &Density<'_>, constant: &RieszConstant, total_measure: f64) -> Result<(f64, f64)> {
    let d = constant.d as f64;
    let m = constant.m_constant();
    let finite = mass.q.iter().copied().filter(|v| v.is_finite());
    let (qmin, qmax) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !qmin.is_finite() {
        return Err(Error::InvalidArgument("field is infinite at every quadrature node".into()));
    }
    let mut lo = qmin;
    let mut hi = qmax + m * total_measure.powf(-constant.s / d) + 1.0;
    let mut doublings = 0;
    while mass.mass(hi) < 1.0 {
        if doublings == MAX_BRACKET_DOUBLINGS {
            return Err(Error::BracketFailure(doublings));
        }
        hi = lo + 2.0 * (hi - lo);
        doublings += 1;
    }
    let mut best = (hi, (mass.mass(hi) - 1.0).abs());
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let value = mass.mass(mid);
        let residual = (value - 1.0).abs();
        if residual < best.1 {
            best = (mid, residual);
        }
        if value < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.1 >= MASS_TOLERANCE {
        return Err(Error::NoConvergence(format!(
            "unit-mass residual {} after bisection",
            best.1
        )));
    }
    Ok(best)
}

/// Solves the unit-mass condition for `L1`.
pub fn solve_l1(set: &CompactSet, field: &ExternalField, constant: RieszConstant) -> Result<f64> {
    check_dims(set, &constant)?;
    let q: Vec<f64> = set.nodes().map(|x| field.evaluate(x)).collect();
    let mass = Density::new(set, field, &q, &constant);
    Ok(bisect_level(&mass, &constant, set.total_measure())?.0)
}

fn check_dims(set: &CompactSet, constant: &RieszConstant) -> Result<()> {
    if constant.d != set.hausdorff_dim() {
        return Err(Error::InvalidArgument(format!(
            "constant is for d = {}, set has d = {}",
            constant.d,
            set.hausdorff_dim()
        )));
    }
    Ok(())
}

/// `L1`, the limiting density, and `S(q, A)` for one `(set, field, s)`.
#[derive(Clone, Debug)]
pub struct EquilibriumMeasure {
    pub l1: f64,
    pub s: f64,
    pub d: usize,
    pub c_sd: RieszConstant,
    pub m_constant: f64,
    /// `S(q, A)`.
    pub s_value: f64,
    /// `|int density dH_d - 1|` at the returned `L1`.
    pub residual: f64,
    field: ExternalField,
    node_q: Vec<f64>,
    node_density: Vec<f64>,
    node_weights: Vec<f64>,
    total_measure: f64,
}

/// JSON summary of a solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSummary {
    pub l1: f64,
    pub s_value: f64,
    pub support_fraction: f64,
    pub residual: f64,
    pub c_sd: RieszConstant,
    pub m_constant: f64,
}

impl EquilibriumMeasure {
    /// Solves with the library's `C_{s,d}`.
    pub fn solve_for(set: &CompactSet, field: &ExternalField, s: f64) -> Result<Self> {
        Self::solve(set, field, riesz_constant(s, set.hausdorff_dim())?)
    }

    pub fn solve(set: &CompactSet, field: &ExternalField, c_sd: RieszConstant) -> Result<Self> {
        check_dims(set, &c_sd)?;
        field.check_finite_somewhere(set)?;
        let node_q: Vec<f64> = set.nodes().map(|x| field.evaluate(x)).collect();
        let density = Density::new(set, field, &node_q, &c_sd);
        let (l1, residual) = bisect_level(&density, &c_sd, set.total_measure())?;
        let m = c_sd.m_constant();
        let exponent = c_sd.d as f64 / c_sd.s;
        let ratio = c_sd.s / c_sd.d as f64;
        let s_value = density.integral(l1, |_, q| (l1 + ratio * q) / (1.0 + ratio));
        let node_density: Vec<f64> = node_q.iter().map(|q| clipped_density(l1, *q, m, exponent)).collect();
        Ok(EquilibriumMeasure {
            l1,
            s: c_sd.s,
            d: c_sd.d,
            c_sd,
            m_constant: m,
            s_value,
            residual,
            field: field.clone(),
            node_q,
            node_density,
            node_weights: set.weights().to_vec(),
            total_measure: set.total_measure(),
        })
    }

    pub fn field(&self) -> &ExternalField {
        &self.field
    }

    /// `((L1 - q(x)) / M)_+^{d/s}`; zero wherever `q(x) >= L1`.
    pub fn density_at(&self, x: &[f64]) -> f64 {
        clipped_density(self.l1, self.field.evaluate(x), self.m_constant, self.d as f64 / self.s)
    }

    pub fn support_indicator(&self, x: &[f64]) -> bool {
        self.field.evaluate(x) <= self.l1
    }

    /// `S(q, A)`.
    pub fn s_limit(&self) -> f64 {
        self.s_value
    }

    pub fn node_density(&self) -> &[f64] {
        &self.node_density
    }

    pub fn node_field(&self) -> &[f64] {
        &self.node_q
    }

    /// `int f dmu`; edge-resolved on intervals, by quadrature elsewhere.
    pub fn integrate(&self, set: &CompactSet, f: impl Fn(&[f64]) -> f64) -> f64 {
        if let Some((a, b)) = set.interval_bounds() {
            let (l1, m) = (self.l1, self.m_constant);
            return integrate_positive_part(
                |x| (l1 - self.field.evaluate(&[x])) / m,
                |x| f(&[x]),
                self.d as f64 / self.s,
                a,
                b,
                INTERVAL_PANELS,
            );
        }
        set.nodes()
            .zip(&self.node_density)
            .zip(&self.node_weights)
            .filter(|((_, rho), _)| **rho > 0.0)
            .map(|((x, rho), w)| w * rho * f(x))
            .sum()
    }

    /// Fraction of `H_d(A)` where `q <= L1`.
    pub fn support_fraction(&self) -> f64 {
        let covered: f64 = self
            .node_q
            .iter()
            .zip(&self.node_weights)
            .filter(|(q, _)| **q <= self.l1)
            .map(|(_, w)| w)
            .sum();
        covered / self.total_measure
    }

    pub fn summary(&self) -> EquilibriumSummary {
        EquilibriumSummary {
            l1: self.l1,
            s_value: self.s_value,
            support_fraction: self.support_fraction(),
            residual: self.residual,
            c_sd: self.c_sd,
            m_constant: self.m_constant,
        }
    }

    /// Density table, one row per quadrature node: coordinates, weight,
    /// field value, density.
    pub fn density_csv(&self, set: &CompactSet) -> Result<String> {
        let mut wtr = crate::cli::csv_writer(Vec::new());
        let mut header: Vec<String> = (0..set.ambient_dim()).map(|k| format!("x{k}")).collect();
        header.extend(["weight", "q", "density"].map(String::from));
        wtr.write_record(&header).map_err(csv_err)?;
        for (i, x) in set.nodes().enumerate() {
            let mut row: Vec<String> = x.iter().map(|c| fmt_num(*c)).collect();
            row.push(fmt_num(self.node_weights[i]));
            row.push(fmt_num(self.node_q[i]));
            row.push(fmt_num(self.node_density[i]));
            wtr.write_record(&row).map_err(csv_err)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is ascii"))
    }

    /// Points approximating `{q = L1}`: midpoints of quadrature-grid edges
    /// whose endpoints lie on opposite sides of the level.
    pub fn support_contour(&self, set: &CompactSet) -> Vec<Vec<f64>> {
        let grid = set.grid();
        let mut out = Vec::new();
        for i in 0..grid.len() {
            let inside = self.node_q[i] <= self.l1;
            for j in grid.forward_neighbors(i) {
                if (self.node_q[j] <= self.l1) != inside {
                    let mid: Vec<f64> = set
                        .node(i)
                        .iter()
                        .zip(set.node(j))
                        .map(|(a, b)| 0.5 * (a + b))
                        .collect();
                    if let Ok(p) = set.retract(&mid) {
                        out.push(p.into_inner());
                    }
                }
            }
        }
        out
    }
}

fn clipped_density(level: f64, q: f64, m: f64, exponent: f64) -> f64 {
    let t = (level - q) / m;
    if t > 0.0 {
        t.powf(exponent)
    } else {
        0.0
    }
}

/// Connected components of `{q <= threshold}` on the quadrature grid.
/// Returns one label per node (`None` outside the sublevel set) and the
/// number of components.
pub fn sublevel_components(set: &CompactSet, field: &ExternalField, threshold: f64) -> (Vec<Option<usize>>, usize) {
    let grid = set.grid();
    let inside: Vec<bool> = set.nodes().map(|x| field.evaluate(x) <= threshold).collect();
    let mut labels: Vec<Option<usize>> = vec![None; grid.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..grid.len() {
        if !inside[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(count);
        stack.push(start);
        while let Some(i) = stack.pop() {
            for j in grid.neighbors(i) {
                if inside[j] && labels[j].is_none() {
                    labels[j] = Some(count);
                    stack.push(j);
                }
            }
        }
        count += 1;
    }
    (labels, count)
}

pub(crate) fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else if v > 0.0 {
        "inf".into()
    } else if v < 0.0 {
        "-inf".into()
    } else {
        "nan".into()
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))
}
