//! Discrete `(s, d, q)`-energy, its gradient, and approximate minimizers.
//!
//! The descent is projected gradient with a metric-projection retraction
//! and Armijo backtracking. Trial steps after the first follow the
//! Barzilai-Borwein rule; only steps passing the sufficient-decrease test
//! are accepted, so the energy trace never increases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{check_hypersingular, is_critical};
use crate::equilibrium::EquilibriumMeasure;
use crate::error::{Error, Result};
use crate::fields::{ExternalField, FD_RELATIVE_STEP};
use crate::geometry::{dist2, CompactSet};

/// Retraction residual admitted for points of a [`Configuration`].
pub const ON_SET_TOLERANCE: f64 = 1e-10;

/// Pairs closer than this fraction of the diameter count as coincident.
pub const COLLISION_FRACTION: f64 = 1e-12;

const MAX_BACKTRACKS: usize = 60;

/// `N^{1+s/d}` for `s > d`, `N^2 ln N` for `s = d`.
pub fn tau(s: f64, d: usize, n: usize) -> Result<f64> {
    check_hypersingular(s, d)?;
    if n == 0 {
        return Err(Error::InvalidArgument("N must be positive".into()));
    }
    let nf = n as f64;
    if is_critical(s, d) {
        if n == 1 {
            return Err(Error::InvalidArgument(
                "tau vanishes at N = 1 when s = d; handle the field-only case separately".into(),
            ));
        }
        Ok(nf * nf * nf.ln())
    } else {
        Ok(nf.powf(1.0 + s / d as f64))
    }
}

/// Distribution of the initial points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Quadrature nodes drawn by weight: uniform in `H_d`.
    #[default]
    Uniform,
    /// Nodes drawn by weight times the predicted limit density, so points
    /// start in the right proportions across separated support components.
    Equilibrium,
}

/// How pair sums are reduced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    /// Sequential, fixed summation order: bit-for-bit reproducible.
    #[default]
    Reproducible,
    /// Rows summed in parallel; results may differ in the last few bits.
    Fast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub max_iters: usize,
    /// First trial step. `None` means 1 with preconditioning (the step is
    /// then relative to each point's curvature) and `diameter * N^{-1-s/d}`
    /// without.
    pub step_init: Option<f64>,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub grad_tol: f64,
    pub restarts: usize,
    pub rng_seed: u64,
    pub mode: ExecMode,
    /// Scale each point's step by the inverse of its pair-term curvature.
    pub precondition: bool,
    pub init: InitMode,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_iters: 5000,
            step_init: None,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            grad_tol: 1e-6,
            restarts: 3,
            rng_seed: 0,
            mode: ExecMode::Reproducible,
            precondition: true,
            init: InitMode::Uniform,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.max_iters == 0 {
            return bad("max_iters must be positive".into());
        }
        if self.restarts == 0 {
            return bad("restarts must be positive".into());
        }
        if let Some(t) = self.step_init {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("step_init must be positive, got {t}"));
            }
        }
        if !(self.armijo_c > 0.0 && self.armijo_c <= 0.5) {
            return bad(format!("armijo_c must lie in (0, 0.5], got {}", self.armijo_c));
        }
        if !(self.armijo_shrink > 0.1 && self.armijo_shrink < 0.9) {
            return bad(format!("armijo_shrink must lie in (0.1, 0.9), got {}", self.armijo_shrink));
        }
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return bad(format!("grad_tol must be positive, got {}", self.grad_tol));
        }
        Ok(())
    }

    pub fn resolved_step(&self, set: &CompactSet, s: f64, n: usize) -> f64 {
        self.step_init.unwrap_or_else(|| {
            if self.precondition {
                1.0
            } else {
                set.diameter() * (n as f64).powf(-1.0 - s / set.hausdorff_dim() as f64)
            }
        })
    }
}

/// `N` distinct points on a set, stored as a flat coordinate array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    coords: Vec<f64>,
    dim: usize,
    hausdorff_dim: usize,
    diameter: f64,
    set_ref: String,
}

impl Configuration {
    /// Checks that every point is on `set` and that no two coincide.
    pub fn new(set: &CompactSet, coords: Vec<f64>) -> Result<Self> {
        let p = set.ambient_dim();
        if coords.is_empty() || coords.len() % p != 0 {
            return Err(Error::InvalidArgument(format!(
                "coordinate array of length {} is not a list of {p}-vectors",
                coords.len()
            )));
        }
        for x in coords.chunks_exact(p) {
            let r = set.retract(x)?;
            let off = dist2(&r, x).sqrt();
            if off > ON_SET_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "point {x:?} is {off:e} off the set"
                )));
            }
        }
        let config = Self::unchecked(set, coords);
        if let Some((i, j)) = config.coincident_pair() {
            return Err(Error::InfiniteEnergy(i, j));
        }
        Ok(config)
    }

    /// Retracts every point onto `set` first.
    pub fn projected(set: &CompactSet, mut coords: Vec<f64>) -> Result<Self> {
        let p = set.ambient_dim();
        for x in coords.chunks_exact_mut(p) {
            set.retract_in_place(x)?;
        }
        Self::new(set, coords)
    }

    fn unchecked(set: &CompactSet, coords: Vec<f64>) -> Self {
        Configuration {
            coords,
            dim: set.ambient_dim(),
            hausdorff_dim: set.hausdorff_dim(),
            diameter: set.diameter(),
            set_ref: set.label(),
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.dim
    }

    pub fn hausdorff_dim(&self) -> usize {
        self.hausdorff_dim
    }

    pub fn set_ref(&self) -> &str {
        &self.set_ref
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    /// The same points in a different order.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if order.len() != self.len() || order.iter().any(|&i| i >= seen.len() || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
        let mut out = self.clone();
        out.coords = order.iter().flat_map(|&i| self.point(i).iter().copied()).collect();
        Ok(out)
    }

    fn coincident_pair(&self) -> Option<(usize, usize)> {
        let min2 = (COLLISION_FRACTION * self.diameter).powi(2);
        let n = self.len();
        for i in 0..n {
            for j in i + 1..n {
                if dist2(self.point(i), self.point(j)) <= min2 {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// One row per point, columns `x0, x1, ...`.
    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = crate::cli::csv_writer(Vec::new());
        let header: Vec<String> = (0..self.dim).map(|k| format!("x{k}")).collect();
        wtr.write_record(&header).map_err(crate::equilibrium::csv_err)?;
        for x in self.points() {
            wtr.write_record(x.iter().map(|v| format!("{v:e}")))
                .map_err(crate::equilibrium::csv_err)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is ascii"))
    }
}

/// `r^{-s}` from `r^2`, with exact integer powers where possible.
#[derive(Clone, Copy)]
enum Kernel {
    EvenInt(i32),
    OddInt(i32),
    Real(f64),
}

impl Kernel {
    fn new(s: f64) -> Self {
        if s.fract() == 0.0 && s <= 64.0 {
            let k = s as i32;
            if k % 2 == 0 {
                Kernel::EvenInt(k / 2)
            } else {
                Kernel::OddInt(k)
            }
        } else {
            Kernel::Real(s)
        }
    }

    #[inline]
    fn eval(self, r2: f64) -> f64 {
        match self {
            Kernel::EvenInt(h) => r2.powi(-h),
            Kernel::OddInt(k) => r2.sqrt().powi(-k),
            Kernel::Real(s) => r2.powf(-0.5 * s),
        }
    }
}

/// Energy and gradient evaluator for one `(set, field, s, scale_N)`.
struct Objective<'a> {
    set: &'a CompactSet,
    field: &'a ExternalField,
    s: f64,
    dim: usize,
    kernel: Kernel,
    field_coef: f64,
    min_r2: f64,
    fd_step: f64,
    mode: ExecMode,
}

impl<'a> Objective<'a> {
    fn new(set: &'a CompactSet, field: &'a ExternalField, s: f64, scale_n: usize, mode: ExecMode) -> Result<Self> {
        let d = set.hausdorff_dim();
        if scale_n < 2 {
            return Err(Error::InvalidArgument(format!("scale_N must be >= 2, got {scale_n}")));
        }
        let t = tau(s, d, scale_n)?;
        Ok(Objective {
            set,
            field,
            s,
            dim: set.ambient_dim(),
            kernel: Kernel::new(s),
            field_coef: t / scale_n as f64,
            min_r2: (COLLISION_FRACTION * set.diameter()).powi(2),
            fd_step: FD_RELATIVE_STEP * set.diameter(),
            mode,
        })
    }

    fn field_energy(&self, coords: &[f64]) -> f64 {
        let sum: f64 = coords.chunks_exact(self.dim).map(|x| self.field.evaluate(x)).sum();
        self.field_coef * sum
    }

    /// Ordered-pair Riesz sum, or the first coincident pair found.
    fn pair_energy(&self, coords: &[f64]) -> std::result::Result<f64, (usize, usize)> {
        let p = self.dim;
        let n = coords.len() / p;
        let row = |i: usize| -> std::result::Result<f64, (usize, usize)> {
            let xi = &coords[i * p..(i + 1) * p];
            let mut acc = 0.0;
            for j in i + 1..n {
                let r2 = dist2(xi, &coords[j * p..(j + 1) * p]);
                if r2 <= self.min_r2 {
                    return Err((i, j));
                }
                acc += self.kernel.eval(r2);
            }
            Ok(acc)
        };
        let half = match self.mode {
            ExecMode::Reproducible => {
                let mut total = 0.0;
                for i in 0..n {
                    total += row(i)?;
                }
                total
            }
            ExecMode::Fast => (0..n).into_par_iter().map(row).try_reduce(|| 0.0, |a, b| Ok(a + b))?,
        };
        Ok(2.0 * half)
    }

    fn energy(&self, coords: &[f64]) -> f64 {
        match self.pair_energy(coords) {
            Ok(e) => e + self.field_energy(coords),
            Err(_) => f64::INFINITY,
        }
    }

    /// Energy and tangent-projected gradient. `None` on coincident points.
    fn energy_gradient(&self, coords: &[f64], grad: &mut [f64]) -> Option<f64> {
        let mut curv = vec![0.0; coords.len() / self.dim];
        self.energy_gradient_curvature(coords, grad, &mut curv)
    }

    /// As [`Self::energy_gradient`], also writing for each point the radial
    /// second derivative of its pair terms, `sum_j 2 s (s+1) r_ij^{-s-2}`.
    fn energy_gradient_curvature(&self, coords: &[f64], grad: &mut [f64], curv: &mut [f64]) -> Option<f64> {
        let p = self.dim;
        let n = coords.len() / p;
        let c = -2.0 * self.s;
        let h = 2.0 * self.s * (self.s + 1.0);
        let kernel = self.kernel;
        let pair = match self.mode {
            ExecMode::Reproducible => {
                grad.iter_mut().for_each(|g| *g = 0.0);
                curv.iter_mut().for_each(|v| *v = 0.0);
                let mut total = 0.0;
                let mut diff = vec![0.0; p];
                for i in 0..n {
                    let (head, tail) = coords.split_at((i + 1) * p);
                    let xi = &head[i * p..];
                    for (jj, xj) in tail.chunks_exact(p).enumerate() {
                        let j = i + 1 + jj;
                        let mut r2 = 0.0;
                        for k in 0..p {
                            diff[k] = xi[k] - xj[k];
                            r2 += diff[k] * diff[k];
                        }
                        if r2 <= self.min_r2 {
                            return None;
                        }
                        let e = kernel.eval(r2);
                        total += e;
                        let w = c * e / r2;
                        for k in 0..p {
                            grad[i * p + k] += w * diff[k];
                            grad[j * p + k] -= w * diff[k];
                        }
                        let k2 = h * e / r2;
                        curv[i] += k2;
                        curv[j] += k2;
                    }
                }
                2.0 * total
            }
            ExecMode::Fast => {
                let rows: Vec<Option<f64>> = grad
                    .par_chunks_exact_mut(p)
                    .zip(curv.par_iter_mut())
                    .enumerate()
                    .map(|(i, (gi, ci))| {
                        gi.iter_mut().for_each(|g| *g = 0.0);
                        *ci = 0.0;
                        let xi = &coords[i * p..(i + 1) * p];
                        let mut acc = 0.0;
                        for (j, xj) in coords.chunks_exact(p).enumerate() {
                            if j == i {
                                continue;
                            }
                            let r2 = dist2(xi, xj);
                            if r2 <= self.min_r2 {
                                return None;
                            }
                            let e = kernel.eval(r2);
                            acc += e;
                            let w = c * e / r2;
                            for k in 0..p {
                                gi[k] += w * (xi[k] - xj[k]);
                            }
                            *ci += h * e / r2;
                        }
                        Some(acc)
                    })
                    .collect();
                let mut total = 0.0;
                for r in rows {
                    total += r?;
                }
                total
            }
        };
        let mut fgrad = vec![0.0; p];
        let mut field_sum = 0.0;
        for (x, g) in coords.chunks_exact(p).zip(grad.chunks_exact_mut(p)) {
            let q = self.field.evaluate(x);
            field_sum += q;
            if q.is_finite() {
                self.field.gradient(x, self.fd_step, &mut fgrad);
                for k in 0..p {
                    g[k] += self.field_coef * fgrad[k];
                }
            }
            self.set.tangent_project_in_place(x, g);
        }
        Some(pair + self.field_coef * field_sum)
    }
}

/// `sum_{x != y} |x - y|^{-s} + tau(s, d, scale_N) / scale_N * sum_x q(x)`.
///
/// Coincident points are an error; `q = +inf` at a point gives `+inf`.
pub fn energy(config: &Configuration, field: &ExternalField, s: f64, scale_n: usize) -> Result<f64> {
    energy_with_mode(config, field, s, scale_n, ExecMode::Reproducible)
}

pub fn energy_with_mode(
    config: &Configuration,
    field: &ExternalField,
    s: f64,
    scale_n: usize,
    mode: ExecMode,
) -> Result<f64> {
    if scale_n < 2 {
        return Err(Error::InvalidArgument(format!("scale_N must be >= 2, got {scale_n}")));
    }
    let t = tau(s, config.hausdorff_dim, scale_n)?;
    let kernel = Kernel::new(s);
    let p = config.dim;
    let n = config.len();
    let coords = config.coords();
    let row = |i: usize| -> std::result::Result<f64, Error> {
        let xi = &coords[i * p..(i + 1) * p];
        let mut acc = 0.0;
        for j in i + 1..n {
            let r2 = dist2(xi, &coords[j * p..(j + 1) * p]);
            if r2 == 0.0 {
                return Err(Error::InfiniteEnergy(i, j));
            }
            acc += kernel.eval(r2);
        }
        Ok(acc)
    };
    let half = match mode {
        ExecMode::Reproducible => {
            let mut total = 0.0;
            for i in 0..n {
                total += row(i)?;
            }
            total
        }
        ExecMode::Fast => (0..n).into_par_iter().map(row).try_reduce(|| 0.0, |a, b| Ok(a + b))?,
    };
    let field_sum: f64 = config.points().map(|x| field.evaluate(x)).sum();
    Ok(2.0 * half + t / scale_n as f64 * field_sum)
}

/// Per-point tangent-projected gradient of [`energy`], flattened like the
/// configuration's coordinates.
pub fn energy_gradient(
    set: &CompactSet,
    config: &Configuration,
    field: &ExternalField,
    s: f64,
    scale_n: usize,
) -> Result<Vec<f64>> {
    let objective = Objective::new(set, field, s, scale_n, ExecMode::Reproducible)?;
    let mut grad = vec![0.0; config.coords.len()];
    match objective.energy_gradient(&config.coords, &mut grad) {
        Some(_) => Ok(grad),
        None => Err(config
            .coincident_pair()
            .map(|(i, j)| Error::InfiniteEnergy(i, j))
            .unwrap_or_else(|| Error::InvalidArgument("points too close".into()))),
    }
}

/// Ambient gradient before tangent projection.
pub fn ambient_energy_gradient(
    config: &Configuration,
    field: &ExternalField,
    s: f64,
    scale_n: usize,
) -> Result<Vec<f64>> {
    let t = tau(s, config.hausdorff_dim, scale_n)?;
    let coef = t / scale_n as f64;
    let kernel = Kernel::new(s);
    let p = config.dim;
    let fd_step = FD_RELATIVE_STEP * config.diameter;
    let mut out = vec![0.0; config.coords.len()];
    let mut fgrad = vec![0.0; p];
    for (i, xi) in config.points().enumerate() {
        let gi = &mut out[i * p..(i + 1) * p];
        for (j, xj) in config.points().enumerate() {
            if i == j {
                continue;
            }
            let r2 = dist2(xi, xj);
            if r2 == 0.0 {
                return Err(Error::InfiniteEnergy(i.min(j), i.max(j)));
            }
            let w = -2.0 * s * kernel.eval(r2) / r2;
            for k in 0..p {
                gi[k] += w * (xi[k] - xj[k]);
            }
        }
        field.gradient(xi, fd_step, &mut fgrad);
        for k in 0..p {
            gi[k] += coef * fgrad[k];
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub energy: f64,
    pub grad_norm: f64,
    pub step: f64,
}

/// Per-iteration record of one descent run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub converged: bool,
    pub seed: u64,
}

impl Trace {
    pub fn final_energy(&self) -> Option<f64> {
        self.rows.last().map(|r| r.energy)
    }

    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].energy <= w[0].energy)
    }

    /// Columns `iter, energy, grad_norm, step`.
    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = crate::cli::csv_writer(Vec::new());
        wtr.write_record(["iter", "energy", "grad_norm", "step"])
            .map_err(crate::equilibrium::csv_err)?;
        for r in &self.rows {
            wtr.write_record([
                r.iter.to_string(),
                format!("{:e}", r.energy),
                format!("{:e}", r.grad_norm),
                format!("{:e}", r.step),
            ])
            .map_err(crate::equilibrium::csv_err)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is ascii"))
    }
}

#[derive(Clone, Debug)]
pub struct Minimizer {
    pub configuration: Configuration,
    pub energy: f64,
    /// Trace of the winning restart.
    pub trace: Trace,
    /// Index of the winning restart.
    pub restart: usize,
    /// Final energy of every restart, `+inf` for failed ones.
    pub restart_energies: Vec<f64>,
}

fn restart_seed(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// Multi-start projected descent from weighted random initial points.
/// Restarts use independent streams of `settings.rng_seed`; the lowest
/// final energy wins.
pub fn minimize(
    set: &CompactSet,
    field: &ExternalField,
    s: f64,
    n: usize,
    settings: &OptimizerSettings,
) -> Result<Minimizer> {
    settings.validate()?;
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need N >= 2 points, got {n}")));
    }
    let objective = Objective::new(set, field, s, n, settings.mode)?;
    let node_weights = match settings.init {
        InitMode::Uniform => set.weights().to_vec(),
        InitMode::Equilibrium => {
            let mu = EquilibriumMeasure::solve_for(set, field, s)?;
            set.weights().iter().zip(mu.node_density()).map(|(w, r)| w * r).collect()
        }
    };
    let run = |k: usize| -> (Option<(Vec<f64>, f64)>, Trace) {
        let seed = settings.rng_seed;
        let mut rng = restart_seed(seed, k);
        let fail = || Trace {
            seed,
            ..Trace::default()
        };
        let start = match settings.init {
            InitMode::Uniform => set.sample_points_weighted(n, &node_weights, &mut rng),
            InitMode::Equilibrium => set.sample_points_systematic(n, &node_weights, &mut rng),
        };
        match start {
            Ok(start) => {
                let (x, e, trace) = descend(&objective, start, settings, n);
                if e.is_finite() {
                    (Some((x, e)), Trace { seed, ..trace })
                } else {
                    (None, Trace { seed, ..trace })
                }
            }
            Err(_) => (None, fail()),
        }
    };
    let runs: Vec<_> = match settings.mode {
        ExecMode::Reproducible => (0..settings.restarts).map(run).collect(),
        ExecMode::Fast => (0..settings.restarts).into_par_iter().map(run).collect(),
    };
    let restart_energies: Vec<f64> = runs
        .iter()
        .map(|(r, _)| r.as_ref().map_or(f64::INFINITY, |(_, e)| *e))
        .collect();
    let best = runs
        .iter()
        .enumerate()
        .filter_map(|(k, (r, _))| r.as_ref().map(|(_, e)| (k, *e)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let Some((k, _)) = best else {
        return Err(Error::AllRestartsFailed {
            traces: runs.into_iter().map(|(_, t)| t).collect(),
        });
    };
    let (result, trace) = runs.into_iter().nth(k).expect("index in range");
    let (coords, energy) = result.expect("best restart succeeded");
    Ok(Minimizer {
        configuration: Configuration::unchecked(set, coords),
        energy,
        trace,
        restart: k,
        restart_energies,
    })
}

/// Descent from a given configuration; `scale_N` is the configuration size.
pub fn minimize_from(
    set: &CompactSet,
    field: &ExternalField,
    s: f64,
    start: &Configuration,
    settings: &OptimizerSettings,
) -> Result<Minimizer> {
    settings.validate()?;
    let n = start.len();
    let objective = Objective::new(set, field, s, n, settings.mode)?;
    let (coords, energy, trace) = descend(&objective, start.coords.clone(), settings, n);
    if !energy.is_finite() {
        return Err(Error::AllRestartsFailed { traces: vec![trace] });
    }
    Ok(Minimizer {
        configuration: Configuration::unchecked(set, coords),
        energy,
        trace,
        restart: 0,
        restart_energies: vec![energy],
    })
}

/// `|R(x - h g) - x| / h` for a small `h`: the norm of the projected
/// gradient, which vanishes at constrained stationary points.
fn projected_gradient_norm(set: &CompactSet, x: &[f64], g: &[f64], scratch: &mut [f64]) -> f64 {
    let p = set.ambient_dim();
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if gmax == 0.0 {
        return 0.0;
    }
    let h = 1e-9 * set.diameter() / gmax;
    let mut acc = 0.0;
    for ((yi, xi), gi) in scratch.chunks_exact_mut(p).zip(x.chunks_exact(p)).zip(g.chunks_exact(p)) {
        for k in 0..p {
            yi[k] = xi[k] - h * gi[k];
        }
        if set.retract_in_place(yi).is_err() {
            yi.copy_from_slice(xi);
        }
        acc += dist2(yi, xi);
    }
    acc.sqrt() / h
}

/// Per-point scale `1 / max(curv_i, floor)`; the floor keeps isolated
/// points from taking huge steps.
fn preconditioner(curv: &[f64], out: &mut [f64]) {
    let mut sorted = curv.to_vec();
    sorted.sort_by(f64::total_cmp);
    let floor = 1e-3 * sorted[sorted.len() / 2];
    for (o, c) in out.iter_mut().zip(curv) {
        *o = 1.0 / c.max(floor).max(f64::MIN_POSITIVE);
    }
}

fn descend(obj: &Objective<'_>, mut x: Vec<f64>, settings: &OptimizerSettings, n: usize) -> (Vec<f64>, f64, Trace) {
    let set = obj.set;
    let p = obj.dim;
    let s = obj.s;
    let d = set.hausdorff_dim() as f64;
    let tol = settings.grad_tol * (n as f64).powf(1.0 + s / d) * set.diameter().powf(-s - 1.0);
    let mut trace = Trace::default();

    let mut g = vec![0.0; x.len()];
    let mut curv = vec![0.0; n];
    let mut scale = vec![1.0; n];
    let Some(mut e) = obj.energy_gradient_curvature(&x, &mut g, &mut curv) else {
        trace.rows.push(TraceRow {
            iter: 0,
            energy: f64::INFINITY,
            grad_norm: f64::NAN,
            step: 0.0,
        });
        return (x, f64::INFINITY, trace);
    };
    if settings.precondition {
        preconditioner(&curv, &mut scale);
    }
    let mut t = settings.resolved_step(set, s, n);
    // BB steps are kept within a window around the first step so one
    // noisy curvature estimate cannot stall or blow up the search.
    let (t_min, t_max) = (t * 1e-10, t * 1e6);
    let mut trial = vec![0.0; x.len()];
    let mut g_new = vec![0.0; x.len()];
    trace.rows.push(TraceRow {
        iter: 0,
        energy: e,
        grad_norm: projected_gradient_norm(set, &x, &g, &mut trial),
        step: 0.0,
    });

    for iter in 1..=settings.max_iters {
        // Backtracking along the projected arc x(t) = R(x - t D g).
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let mut ok = true;
            for (i, ((yi, xi), gi)) in trial.chunks_exact_mut(p).zip(x.chunks_exact(p)).zip(g.chunks_exact(p)).enumerate() {
                let ti = t * scale[i];
                for k in 0..p {
                    yi[k] = xi[k] - ti * gi[k];
                }
                if set.retract_in_place(yi).is_err() {
                    ok = false;
                    break;
                }
            }
            if ok {
                let decrease: f64 = g.iter().zip(trial.iter().zip(&x)).map(|(gi, (yi, xi))| gi * (yi - xi)).sum();
                let e_new = obj.energy(&trial);
                if e_new.is_finite() && e_new <= e + settings.armijo_c * decrease && e_new <= e {
                    accepted = true;
                    break;
                }
            }
            t *= settings.armijo_shrink;
        }
        if !accepted {
            // No admissible step: stationary to working precision.
            trace.converged = true;
            break;
        }
        let Some(e_new) = obj.energy_gradient_curvature(&trial, &mut g_new, &mut curv) else {
            break;
        };

        // Barzilai-Borwein in the metric of the preconditioner:
        // <dx, D^{-1} dx> / <dx, dg>.
        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..x.len() {
            let dx = trial[i] - x[i];
            ss += dx * dx / scale[i / p];
            sy += dx * (g_new[i] - g[i]);
        }
        let used = t;
        t = if sy > 0.0 { ss / sy } else { 2.0 * t };
        t = t.clamp(t_min, t_max);

        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut g, &mut g_new);
        if settings.precondition {
            preconditioner(&curv, &mut scale);
        }
        e = e_new.min(e);
        let pg = projected_gradient_norm(set, &x, &g, &mut trial);
        trace.rows.push(TraceRow {
            iter,
            energy: e,
            grad_norm: pg,
            step: used,
        });
        if pg < tol {
            trace.converged = true;
            break;
        }
    }
    (x, e, trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
    use crate::constants::zeta;
    use crate::fields::{catalog, ExampleId};

    fn unit() -> CompactSet {
        CompactSet::interval(0.0, 1.0, 64).unwrap()
    }

    fn cfg(set: &CompactSet, xs: &[f64]) -> Configuration {
        Configuration::new(set, xs.to_vec()).unwrap()
    }

    #[test]
    fn tau_values() {
        assert_eq!(tau(4.0, 1, 100).unwrap(), 1e10);
        assert!((tau(2.0, 2, 10).unwrap() - 230.258_509_299_404_6).abs() < 1e-10);
        assert_eq!(tau(3.0, 2, 64).unwrap(), 32768.0);
        assert!(tau(2.0, 2, 1).is_err());
        assert_eq!(tau(3.0, 2, 1).unwrap(), 1.0);
        assert!(tau(1.0, 2, 10).is_err());
    }

    #[test]
    fn energy_hand_values() {
        let set = unit();
        let zero = ExternalField::zero();
        assert_eq!(energy(&cfg(&set, &[0.0, 1.0]), &zero, 2.0, 2).unwrap(), 2.0);
        let q = ExternalField::from_fn("x", |x| x[0]);
        assert_eq!(energy(&cfg(&set, &[0.0, 1.0]), &q, 2.0, 2).unwrap(), 6.0);
        assert_eq!(energy(&cfg(&set, &[0.0, 0.5, 1.0]), &zero, 2.0, 3).unwrap(), 18.0);
    }

    #[test]
    fn coincident_points_rejected() {
        let set = unit();
        assert!(matches!(
            Configuration::new(&set, vec![0.3, 0.3]),
            Err(Error::InfiniteEnergy(0, 1))
        ));
    }

    #[test]
    fn infinite_field_gives_infinite_energy() {
        let set = unit();
        let q = ExternalField::from_fn("wall", |x| if x[0] > 0.9 { f64::INFINITY } else { 0.0 });
        let e = energy(&cfg(&set, &[0.0, 1.0]), &q, 2.0, 2).unwrap();
        assert_eq!(e, f64::INFINITY);
    }

    #[test]
    fn gradient_hand_values() {
        let set = unit();
        let zero = ExternalField::zero();
        let g = ambient_energy_gradient(&cfg(&set, &[0.0, 1.0]), &zero, 2.0, 2).unwrap();
        assert_eq!(g, vec![4.0, -4.0]);
        let g = energy_gradient(&set, &cfg(&set, &[0.0, 0.5, 1.0]), &zero, 2.0, 3).unwrap();
        assert!(g[1].abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences_on_sphere() {
        let set = CompactSet::sphere(1.0, 16, 32).unwrap();
        let q = catalog(ExampleId::D);
        let mut rng = restart_seed(7, 0);
        let coords = set.sample_points(12, &mut rng).unwrap();
        let config = Configuration::new(&set, coords.clone()).unwrap();
        let grad = ambient_energy_gradient(&config, &q, 4.0, 12).unwrap();
        let h = 1e-6;
        for i in 0..coords.len() {
            let mut plus = coords.clone();
            plus[i] += h;
            let mut minus = coords.clone();
            minus[i] -= h;
            // Off-set perturbations are fine for the ambient energy.
            let ep = energy(&Configuration::unchecked(&set, plus), &q, 4.0, 12).unwrap();
            let em = energy(&Configuration::unchecked(&set, minus), &q, 4.0, 12).unwrap();
            let fd = (ep - em) / (2.0 * h);
            let tol = 1e-5 * grad[i].abs().max(1e-3 * norm(&grad));
            assert!((fd - grad[i]).abs() < tol, "component {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn fast_and_reproducible_agree() {
        let set = CompactSet::sphere(1.0, 16, 32).unwrap();
        let q = catalog(ExampleId::A);
        let coords = set.sample_points(200, &mut restart_seed(3, 0)).unwrap();
        let config = Configuration::new(&set, coords).unwrap();
        let a = energy_with_mode(&config, &q, 2.0, 200, ExecMode::Reproducible).unwrap();
        let b = energy_with_mode(&config, &q, 2.0, 200, ExecMode::Fast).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs());
        let obj_r = Objective::new(&set, &q, 2.0, 200, ExecMode::Reproducible).unwrap();
        let obj_f = Objective::new(&set, &q, 2.0, 200, ExecMode::Fast).unwrap();
        let mut gr = vec![0.0; config.coords.len()];
        let mut gf = gr.clone();
        let er = obj_r.energy_gradient(&config.coords, &mut gr).unwrap();
        let ef = obj_f.energy_gradient(&config.coords, &mut gf).unwrap();
        assert!((er - a).abs() <= 1e-12 * a.abs());
        assert!((ef - a).abs() <= 1e-12 * a.abs());
        let scale = norm(&gr);
        for (x, y) in gr.iter().zip(&gf) {
            assert!((x - y).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn two_points_spread_to_endpoints() {
        let set = unit();
        let m = minimize(&set, &ExternalField::zero(), 2.0, 2, &OptimizerSettings::default()).unwrap();
        let mut xs = m.configuration.coords().to_vec();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![0.0, 1.0]);
        assert_eq!(m.energy, 2.0);
    }

    #[test]
    fn three_points_equally_spaced() {
        let set = unit();
        let m = minimize(&set, &ExternalField::zero(), 2.0, 3, &OptimizerSettings::default()).unwrap();
        let mut xs = m.configuration.coords().to_vec();
        xs.sort_by(f64::total_cmp);
        assert!(xs[0].abs() < 1e-12 && (xs[2] - 1.0).abs() < 1e-12);
        assert!((xs[1] - 0.5).abs() < 1e-6, "middle point {}", xs[1]);
        assert!((m.energy - 18.0).abs() < 1e-8);
    }

    #[test]
    fn five_points_beat_equal_spacing_under_q_e() {
        let set = CompactSet::interval(0.0, 2.0, 256).unwrap();
        let q = catalog(ExampleId::E);
        let m = minimize(&set, &q, 4.0, 5, &OptimizerSettings::default()).unwrap();
        let equal = cfg(&set, &[0.0, 0.5, 1.0, 1.5, 2.0]);
        assert!(m.energy <= energy(&equal, &q, 4.0, 5).unwrap());
    }

    #[test]
    fn trace_is_monotone_and_points_on_set() {
        let set = CompactSet::sphere(1.0, 32, 64).unwrap();
        let q = catalog(ExampleId::B);
        let settings = OptimizerSettings {
            max_iters: 300,
            restarts: 1,
            ..OptimizerSettings::default()
        };
        let m = minimize(&set, &q, 2.0, 60, &settings).unwrap();
        assert!(m.trace.is_monotone());
        for x in m.configuration.points() {
            let r = set.retract(x).unwrap();
            assert!(dist2(&r, x).sqrt() < ON_SET_TOLERANCE);
        }
        assert_eq!(m.trace.final_energy(), Some(m.energy));
    }

    #[test]
    fn reproducible_mode_is_deterministic() {
        let set = CompactSet::torus(2.0, 4.0, 32, 32).unwrap();
        let q = catalog(ExampleId::C);
        let settings = OptimizerSettings {
            max_iters: 100,
            restarts: 2,
            rng_seed: 11,
            ..OptimizerSettings::default()
        };
        let a = minimize(&set, &q, 8.0, 40, &settings).unwrap();
        let b = minimize(&set, &q, 8.0, 40, &settings).unwrap();
        assert_eq!(a.configuration.to_csv().unwrap(), b.configuration.to_csv().unwrap());
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn permutation_leaves_energy_unchanged() {
        let set = CompactSet::sphere(1.0, 16, 32).unwrap();
        let q = catalog(ExampleId::A);
        let config = Configuration::new(&set, set.sample_points(30, &mut restart_seed(1, 0)).unwrap()).unwrap();
        let order: Vec<usize> = (0..30).rev().collect();
        let a = energy(&config, &q, 2.0, 30).unwrap();
        let b = energy(&config.permuted(&order).unwrap(), &q, 2.0, 30).unwrap();
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn energy_ratio_near_limit_at_two_hundred() {
        let set = CompactSet::interval(0.0, 1.0, 256).unwrap();
        let settings = OptimizerSettings {
            restarts: 1,
            ..OptimizerSettings::default()
        };
        let n = 200;
        let m = minimize(&set, &ExternalField::zero(), 2.0, n, &settings).unwrap();
        let ratio = m.energy / tau(2.0, 1, n).unwrap();
        let limit = 2.0 * zeta(2.0).unwrap();
        // Equal spacing: 2 (N-1)^2 sum_k (N-k)/k^2, divided by N^3.
        let nf = n as f64;
        let equal: f64 = (1..n).map(|k| (nf - k as f64) / (k * k) as f64).sum::<f64>() * 2.0 * (nf - 1.0).powi(2) / nf.powi(3);
        assert!((equal / limit - 0.9693).abs() < 1e-4);
        assert!((ratio / limit - 1.0).abs() < 0.05, "ratio {ratio}");
        assert!(m.energy <= equal * nf.powi(3) * (1.0 + 1e-9));
    }

    #[test]
    fn settings_validation() {
        assert!(OptimizerSettings::default().validate().is_ok());
        let bad = [
            OptimizerSettings { armijo_c: 0.6, ..Default::default() },
            OptimizerSettings { armijo_shrink: 0.05, ..Default::default() },
            OptimizerSettings { restarts: 0, ..Default::default() },
            OptimizerSettings { step_init: Some(-1.0), ..Default::default() },
        ];
        for s in bad {
            assert!(s.validate().is_err());
        }
        let json = r#"{"max_iters": 10, "mode": "fast"}"#;
        let s: OptimizerSettings = serde_json::from_str(json).unwrap();
        assert_eq!(s.mode, ExecMode::Fast);
        assert_eq!(s.restarts, 3);
    }
}
