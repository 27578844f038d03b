//! External fields `q: A -> (-inf, +inf]`.
//!
//! Includes the five worked-example fields, a small expression language for
//! JSON-described fields and densities, the inverse design
//! `q = -M_{s,d} rho^{s/d}` that makes minimizers converge to `rho dH_d`,
//! and the limiting density obtained when the design uses a perturbed
//! constant.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::constants::{check_hypersingular, riesz_constant, RieszConstant};
use crate::equilibrium::solve_l1;
use crate::error::{Error, Result};
use crate::geometry::{dist2, CompactSet};
use crate::quadrature::{gauss_legendre_on, integrate_positive_part};

/// Distance below which a point field reports `+inf`.
pub const SINGULAR_RADIUS: f64 = 1e-12;

/// Relative FD step (times the set diameter) used when no analytic
/// gradient exists.
pub const FD_RELATIVE_STEP: f64 = 1e-6;

/// A real function on ambient space, optionally with an analytic gradient.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;

    /// Writes the ambient gradient into `out`. Returns `false` when no
    /// analytic gradient is available.
    fn gradient(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }
}

struct FnField<F>(F);

impl<F: Fn(&[f64]) -> f64 + Send + Sync> ScalarField for FnField<F> {
    fn value(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

struct FnFieldWithGradient<F, G>(F, G);

impl<F, G> ScalarField for FnFieldWithGradient<F, G>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        (self.1)(x, out);
        true
    }
}

/// Lower semi-continuous external field, shareable across threads.
#[derive(Clone)]
pub struct ExternalField {
    inner: Arc<dyn ScalarField>,
    label: String,
    descriptor: Option<FieldDescriptor>,
}

impl fmt::Debug for ExternalField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalField")
            .field("label", &self.label)
            .field("descriptor", &self.descriptor)
            .finish_non_exhaustive()
    }
}

impl ExternalField {
    pub fn new(label: impl Into<String>, field: impl ScalarField + 'static) -> Self {
        ExternalField {
            inner: Arc::new(field),
            label: label.into(),
            descriptor: None,
        }
    }

    pub fn from_shared(label: impl Into<String>, field: Arc<dyn ScalarField>) -> Self {
        ExternalField {
            inner: field,
            label: label.into(),
            descriptor: None,
        }
    }

    /// Field without analytic gradient.
    pub fn from_fn(label: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(label, FnField(f))
    }

    pub fn from_fn_with_gradient(
        label: impl Into<String>,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self::new(label, FnFieldWithGradient(f, grad))
    }

    /// `q == 0`.
    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(c: f64) -> Self {
        let mut f = Self::from_fn_with_gradient(
            format!("constant({c})"),
            move |_| c,
            |_, out| out.iter_mut().for_each(|o| *o = 0.0),
        );
        f.descriptor = Some(FieldDescriptor::Expression {
            expr: Expr::Constant { value: c },
        });
        f
    }

    pub fn with_descriptor(mut self, descriptor: FieldDescriptor) -> Self {
        self.descriptor = Some(descriptor);
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn descriptor(&self) -> Option<&FieldDescriptor> {
        self.descriptor.as_ref()
    }

    pub fn shared(&self) -> Arc<dyn ScalarField> {
        Arc::clone(&self.inner)
    }

    #[inline]
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.inner.value(x)
    }

    pub fn has_analytic_gradient(&self, x: &[f64]) -> bool {
        let mut out = vec![0.0; x.len()];
        self.inner.gradient(x, &mut out)
    }

    /// Ambient gradient; central differences with step `fd_step` when the
    /// field has no analytic gradient.
    pub fn gradient(&self, x: &[f64], fd_step: f64, out: &mut [f64]) {
        if !self.inner.gradient(x, out) {
            self.fd_gradient(x, fd_step, out);
        }
    }

    pub fn fd_gradient(&self, x: &[f64], h: f64, out: &mut [f64]) {
        let mut probe = x.to_vec();
        for k in 0..x.len() {
            probe[k] = x[k] + h;
            let fp = self.inner.value(&probe);
            probe[k] = x[k] - h;
            let fm = self.inner.value(&probe);
            probe[k] = x[k];
            out[k] = (fp - fm) / (2.0 * h);
        }
    }

    /// `q + c`.
    pub fn shifted(&self, c: f64) -> Self {
        ExternalField::new(
            format!("{}+{c}", self.label),
            Shifted {
                inner: Arc::clone(&self.inner),
                offset: c,
            },
        )
    }

    /// `k * q`.
    pub fn scaled(&self, k: f64) -> Self {
        ExternalField::new(
            format!("{k}*{}", self.label),
            Scaled {
                inner: Arc::clone(&self.inner),
                factor: k,
            },
        )
    }

    /// Errors unless the field is finite at some quadrature node.
    pub fn check_finite_somewhere(&self, set: &CompactSet) -> Result<()> {
        if set.nodes().any(|x| self.evaluate(x).is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "field '{}' is infinite at every quadrature node",
                self.label
            )))
        }
    }
}

struct Shifted {
    inner: Arc<dyn ScalarField>,
    offset: f64,
}

impl ScalarField for Shifted {
    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(x) + self.offset
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        self.inner.gradient(x, out)
    }
}

struct Scaled {
    inner: Arc<dyn ScalarField>,
    factor: f64,
}

impl ScalarField for Scaled {
    fn value(&self, x: &[f64]) -> f64 {
        self.factor * self.inner.value(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        if !self.inner.gradient(x, out) {
            return false;
        }
        out.iter_mut().for_each(|o| *o *= self.factor);
        true
    }
}

/// The five worked examples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleId {
    A,
    B,
    C,
    D,
    E,
}

impl ExampleId {
    pub const ALL: [ExampleId; 5] = [ExampleId::A, ExampleId::B, ExampleId::C, ExampleId::D, ExampleId::E];

    pub fn as_str(self) -> &'static str {
        match self {
            ExampleId::A => "a",
            ExampleId::B => "b",
            ExampleId::C => "c",
            ExampleId::D => "d",
            ExampleId::E => "e",
        }
    }
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExampleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(ExampleId::A),
            "b" => Ok(ExampleId::B),
            "c" => Ok(ExampleId::C),
            "d" => Ok(ExampleId::D),
            "e" => Ok(ExampleId::E),
            other => Err(Error::InvalidArgument(format!(
                "unknown example '{other}', expected one of a, b, c, d, e"
            ))),
        }
    }
}

/// Chebyshev `T_3(z) = cos(3 arccos z)` and its derivative.
fn cheb3(z: f64) -> (f64, f64) {
    (4.0 * z * z * z - 3.0 * z, 12.0 * z * z - 3.0)
}

/// Chebyshev `T_4(z) = cos(4 arccos z)` and its derivative.
fn cheb4(z: f64) -> (f64, f64) {
    let z2 = z * z;
    (8.0 * z2 * z2 - 8.0 * z2 + 1.0, 32.0 * z2 * z - 16.0 * z)
}

/// Unnormalized caps profile as a function of `z = cos(phi)`:
/// `10 cos(4 phi) + 11` within `pi/4` of either pole, 1 elsewhere.
/// Returns the value and `d/dz`.
pub fn caps_profile(z: f64) -> (f64, f64) {
    if z.abs() > std::f64::consts::FRAC_1_SQRT_2 {
        let (t, dt) = cheb4(z);
        (10.0 * t + 11.0, 10.0 * dt)
    } else {
        (1.0, 0.0)
    }
}

/// `int_{S^2} caps dH_2`, integrated piecewise so each piece is a
/// polynomial in `z` and Gauss-Legendre is exact.
pub fn caps_normalizer() -> f64 {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let pieces = [(-1.0, -a), (-a, a), (a, 1.0)];
    let mut total = 0.0;
    for (lo, hi) in pieces {
        let (z, w) = gauss_legendre_on(8, lo, hi);
        total += z.iter().zip(&w).map(|(z, w)| w * caps_profile(*z).0).sum::<f64>();
    }
    2.0 * PI * total
}

fn z_of(x: &[f64]) -> f64 {
    x[x.len() - 1]
}

fn point_charge(x: &[f64], center: &[f64], power: i32, scale: f64) -> f64 {
    let r2 = dist2(x, center);
    if r2.sqrt() < SINGULAR_RADIUS {
        return f64::INFINITY;
    }
    scale * r2.powi(-power / 2)
}

fn point_charge_gradient(x: &[f64], center: &[f64], power: i32, scale: f64, out: &mut [f64]) {
    let r2 = dist2(x, center);
    // d/dx |x-c|^{-p} = -p (x - c) |x - c|^{-p-2}
    let k = -(power as f64) * scale * r2.powi(-power / 2 - 1);
    for ((o, xi), ci) in out.iter_mut().zip(x).zip(center) {
        *o += k * (xi - ci);
    }
}

pub const REPELLER_D: [[f64; 3]; 2] = [[1.0, 0.0, 0.0], [0.5691, 0.8223, 0.0]];
pub const REPELLER_C: [f64; 3] = [4.0, 0.0, 0.0];

/// The worked-example fields, each with its analytic gradient.
pub fn catalog(id: ExampleId) -> ExternalField {
    let field = match id {
        ExampleId::A => ExternalField::from_fn_with_gradient(
            "q_a",
            |x| cheb3(z_of(x)).0.powi(16),
            |x, out| {
                out.iter_mut().for_each(|o| *o = 0.0);
                let (t, dt) = cheb3(z_of(x));
                let last = out.len() - 1;
                out[last] = 16.0 * t.powi(15) * dt;
            },
        ),
        ExampleId::B => {
            // rho = caps / Z, q_b = -2 pi rho.
            let amp = -2.0 * PI / caps_normalizer();
            ExternalField::from_fn_with_gradient(
                "q_b",
                move |x| amp * caps_profile(z_of(x)).0,
                move |x, out| {
                    out.iter_mut().for_each(|o| *o = 0.0);
                    let last = out.len() - 1;
                    out[last] = amp * caps_profile(z_of(x)).1;
                },
            )
        }
        ExampleId::C => ExternalField::from_fn_with_gradient(
            "q_c",
            |x| point_charge(x, &REPELLER_C, 2, 1.0),
            |x, out| {
                out.iter_mut().for_each(|o| *o = 0.0);
                point_charge_gradient(x, &REPELLER_C, 2, 1.0, out);
            },
        ),
        ExampleId::D => ExternalField::from_fn_with_gradient(
            "q_d",
            |x| {
                REPELLER_D
                    .iter()
                    .map(|c| point_charge(x, c, 4, 1e-3))
                    .sum()
            },
            |x, out| {
                out.iter_mut().for_each(|o| *o = 0.0);
                for c in &REPELLER_D {
                    point_charge_gradient(x, c, 4, 1e-3, out);
                }
            },
        ),
        ExampleId::E => ExternalField::from_fn_with_gradient(
            "q_e",
            |x| {
                let a = x[0] - 1.6;
                let b = x[0] - 0.2;
                a.powi(4) + 40.0 * b.powi(4) * a * a
            },
            |x, out| {
                let a = x[0] - 1.6;
                let b = x[0] - 0.2;
                out[0] = 4.0 * a.powi(3) + 40.0 * (4.0 * b.powi(3) * a * a + 2.0 * b.powi(4) * a);
            },
        ),
    };
    field.with_descriptor(FieldDescriptor::Catalog { id })
}

/// Small expression grammar for JSON fields and densities. Every node has
/// an analytic gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Expr {
    Constant { value: f64 },
    /// `sum_k coeffs[k] * x[coord]^k`
    Polynomial { coord: usize, coeffs: Vec<f64> },
    /// `scale * |x - center|^power`; `+inf` at the center for negative powers.
    Radial {
        center: Vec<f64>,
        power: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Sum { terms: Vec<Expr> },
    Product { factors: Vec<Expr> },
    Power { base: Box<Expr>, exponent: i32 },
}

fn one() -> f64 {
    1.0
}

impl Expr {
    pub fn validate(&self, ambient_dim: usize) -> Result<()> {
        match self {
            Expr::Constant { value } if !value.is_finite() => {
                Err(Error::InvalidArgument("constant must be finite".into()))
            }
            Expr::Polynomial { coord, .. } if *coord >= ambient_dim => Err(Error::InvalidArgument(
                format!("polynomial coordinate {coord} out of range for R^{ambient_dim}"),
            )),
            Expr::Radial { center, .. } if center.len() != ambient_dim => Err(Error::InvalidArgument(
                format!("radial center must have {ambient_dim} coordinates"),
            )),
            Expr::Sum { terms } => terms.iter().try_for_each(|t| t.validate(ambient_dim)),
            Expr::Product { factors } => factors.iter().try_for_each(|t| t.validate(ambient_dim)),
            Expr::Power { base, .. } => base.validate(ambient_dim),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Constant { value } => *value,
            Expr::Polynomial { coord, coeffs } => {
                let t = x[*coord];
                coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
            }
            Expr::Radial { center, power, scale } => {
                let r = dist2(x, center).sqrt();
                if *power < 0.0 && r < SINGULAR_RADIUS {
                    f64::INFINITY
                } else {
                    scale * r.powf(*power)
                }
            }
            Expr::Sum { terms } => terms.iter().map(|t| t.eval(x)).sum(),
            Expr::Product { factors } => factors.iter().map(|t| t.eval(x)).product(),
            Expr::Power { base, exponent } => base.eval(x).powi(*exponent),
        }
    }

    /// Adds the gradient into `out`.
    fn accumulate_gradient(&self, x: &[f64], weight: f64, out: &mut [f64]) {
        match self {
            Expr::Constant { .. } => {}
            Expr::Polynomial { coord, coeffs } => {
                let t = x[*coord];
                let mut deriv = 0.0;
                for (k, c) in coeffs.iter().enumerate().skip(1) {
                    deriv += k as f64 * c * t.powi(k as i32 - 1);
                }
                out[*coord] += weight * deriv;
            }
            Expr::Radial { center, power, scale } => {
                let r2 = dist2(x, center);
                if r2 == 0.0 {
                    return;
                }
                let k = weight * scale * power * r2.powf(0.5 * power - 1.0);
                for ((o, xi), ci) in out.iter_mut().zip(x).zip(center) {
                    *o += k * (xi - ci);
                }
            }
            Expr::Sum { terms } => terms.iter().for_each(|t| t.accumulate_gradient(x, weight, out)),
            Expr::Product { factors } => {
                let values: Vec<f64> = factors.iter().map(|f| f.eval(x)).collect();
                for (i, f) in factors.iter().enumerate() {
                    let others: f64 = values
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, v)| v)
                        .product();
                    f.accumulate_gradient(x, weight * others, out);
                }
            }
            Expr::Power { base, exponent } => {
                if *exponent == 0 {
                    return;
                }
                let b = base.eval(x);
                let k = *exponent as f64 * b.powi(exponent - 1);
                base.accumulate_gradient(x, weight * k, out);
            }
        }
    }
}

impl ScalarField for Expr {
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.accumulate_gradient(x, 1.0, out);
        true
    }
}

/// JSON description of a field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FieldDescriptor {
    Catalog { id: ExampleId },
    /// `-M_{s,d} rho^{s/d}` for the given density and `s`.
    Designed { rho: DensityDescriptor, s: f64 },
    Expression { expr: Expr },
}

impl FieldDescriptor {
    pub fn resolve(&self, set: &CompactSet) -> Result<ExternalField> {
        let field = match self {
            FieldDescriptor::Catalog { id } => catalog(*id),
            FieldDescriptor::Designed { rho, s } => {
                let density = rho.resolve(set)?;
                design_field(set, density, *s)?.field
            }
            FieldDescriptor::Expression { expr } => {
                expr.validate(set.ambient_dim())?;
                ExternalField::new("expression", expr.clone())
            }
        };
        Ok(field.with_descriptor(self.clone()))
    }
}

/// `int f_+ dH_d`, resolving the zero set of `f` on intervals.
fn positive_mass(set: &CompactSet, f: impl Fn(&[f64]) -> f64) -> f64 {
    match set.interval_bounds() {
        Some((a, b)) => integrate_positive_part(|x| f(&[x]), |_| 1.0, 1.0, a, b, 256),
        None => set.integrate(|x| f(x).max(0.0)),
    }
}

/// JSON description of a density. Resolved densities are normalized with
/// the set's own quadrature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityDescriptor {
    Uniform,
    /// The polar caps profile; sphere only.
    Caps,
    /// `(1 - ((x[coord] - center) / half_width)^2)_+`
    TruncatedQuadratic {
        center: f64,
        half_width: f64,
        #[serde(default)]
        coord: usize,
    },
    /// `max(expr, 0)`
    Expression { expr: Expr },
}

struct ClippedNormalized {
    raw: Arc<dyn ScalarField>,
    scale: f64,
}

impl ScalarField for ClippedNormalized {
    fn value(&self, x: &[f64]) -> f64 {
        self.scale * self.raw.value(x).max(0.0)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        let v = self.raw.value(x);
        if !self.raw.gradient(x, out) {
            return false;
        }
        let k = if v > 0.0 { self.scale } else { 0.0 };
        out.iter_mut().for_each(|o| *o *= k);
        true
    }
}

impl DensityDescriptor {
    pub fn resolve(&self, set: &CompactSet) -> Result<Arc<dyn ScalarField>> {
        let raw: Arc<dyn ScalarField> = match self {
            DensityDescriptor::Uniform => Arc::new(Expr::Constant { value: 1.0 }),
            DensityDescriptor::Caps => {
                if !set.is_sphere() {
                    return Err(Error::InvalidArgument("caps density is defined on the sphere only".into()));
                }
                let r = set.sphere_radius().unwrap_or(1.0);
                Arc::new(FnFieldWithGradient(
                    move |x: &[f64]| caps_profile(z_of(x) / r).0,
                    move |x: &[f64], out: &mut [f64]| {
                        out.iter_mut().for_each(|o| *o = 0.0);
                        let last = out.len() - 1;
                        out[last] = caps_profile(z_of(x) / r).1 / r;
                    },
                ))
            }
            DensityDescriptor::TruncatedQuadratic {
                center,
                half_width,
                coord,
            } => {
                if !(*half_width > 0.0) {
                    return Err(Error::InvalidArgument("half_width must be positive".into()));
                }
                let e = Expr::Polynomial {
                    coord: *coord,
                    coeffs: vec![
                        1.0 - center * center / (half_width * half_width),
                        2.0 * center / (half_width * half_width),
                        -1.0 / (half_width * half_width),
                    ],
                };
                e.validate(set.ambient_dim())?;
                Arc::new(e)
            }
            DensityDescriptor::Expression { expr } => {
                expr.validate(set.ambient_dim())?;
                Arc::new(expr.clone())
            }
        };
        let mass = positive_mass(set, |x| raw.value(x));
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "density has quadrature mass {mass}; cannot normalize"
            )));
        }
        Ok(Arc::new(ClippedNormalized { raw, scale: 1.0 / mass }))
    }
}

/// Output of [`design_field`].
#[derive(Clone)]
pub struct FieldDesign {
    /// The density actually realized (renormalized when needed).
    pub target_density: Arc<dyn ScalarField>,
    pub constant: RieszConstant,
    pub m_constant: f64,
    pub field: ExternalField,
    /// Quadrature mass of the density as supplied.
    pub input_mass: f64,
    /// Set when the input mass was off by more than 1e-4 and the density
    /// was rescaled.
    pub renormalized: bool,
}

impl fmt::Debug for FieldDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FieldDesign")
            .field("constant", &self.constant)
            .field("m_constant", &self.m_constant)
            .field("field", &self.field)
            .field("input_mass", &self.input_mass)
            .field("renormalized", &self.renormalized)
            .finish_non_exhaustive()
    }
}

struct DesignedField {
    rho: Arc<dyn ScalarField>,
    scale: f64,
    m: f64,
    exponent: f64,
}

impl ScalarField for DesignedField {
    fn value(&self, x: &[f64]) -> f64 {
        let r = (self.scale * self.rho.value(x)).max(0.0);
        -self.m * r.powf(self.exponent)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        if !self.rho.gradient(x, out) {
            return false;
        }
        let r = (self.scale * self.rho.value(x)).max(0.0);
        let k = if r > 0.0 {
            -self.m * self.exponent * r.powf(self.exponent - 1.0) * self.scale
        } else {
            0.0
        };
        out.iter_mut().for_each(|o| *o *= k);
        true
    }
}

/// Field `q = -M_{s,d} rho^{s/d}` whose minimizers converge to `rho dH_d`.
pub fn design_field(set: &CompactSet, rho: Arc<dyn ScalarField>, s: f64) -> Result<FieldDesign> {
    let constant = riesz_constant(s, set.hausdorff_dim())?;
    design_field_with_constant(set, rho, constant)
}

/// As [`design_field`], with an explicit (possibly approximate) constant.
pub fn design_field_with_constant(
    set: &CompactSet,
    rho: Arc<dyn ScalarField>,
    constant: RieszConstant,
) -> Result<FieldDesign> {
    let d = set.hausdorff_dim();
    check_hypersingular(constant.s, d)?;
    if constant.d != d {
        return Err(Error::InvalidArgument(format!(
            "constant is for d = {}, set has d = {d}",
            constant.d
        )));
    }
    let mut any_positive = false;
    for x in set.nodes() {
        let r = rho.value(x);
        if r < 0.0 || !r.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "density must be finite and nonnegative, got {r} at {x:?}"
            )));
        }
        any_positive |= r > 0.0;
    }
    let mass = positive_mass(set, |x| rho.value(x));
    if !any_positive {
        return Err(Error::InvalidArgument("density vanishes at every quadrature node".into()));
    }
    let renormalized = (mass - 1.0).abs() > 1e-4;
    let scale = if renormalized { 1.0 / mass } else { 1.0 };
    let target_density: Arc<dyn ScalarField> = if renormalized {
        Arc::new(Scaled {
            inner: Arc::clone(&rho),
            factor: scale,
        })
    } else {
        Arc::clone(&rho)
    };
    let m = constant.m_constant();
    let field = ExternalField::new(
        "designed",
        DesignedField {
            rho,
            scale,
            m,
            exponent: constant.s / d as f64,
        },
    );
    Ok(FieldDesign {
        target_density,
        constant,
        m_constant: m,
        field,
        input_mass: mass,
        renormalized,
    })
}

/// Limiting density of minimizers when the design formula uses
/// `C' = (1 + delta) C` instead of `C`.
#[derive(Clone)]
pub struct PerturbedDensity {
    pub delta: f64,
    pub l1_prime: f64,
    pub m_constant: f64,
    /// The perturbed field `q' = (1 + delta) q`.
    pub field: ExternalField,
    rho: Arc<dyn ScalarField>,
    rho_max: f64,
    s_over_d: f64,
    pub node_values: Vec<f64>,
    pub node_bounds: Vec<f64>,
}

impl fmt::Debug for PerturbedDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PerturbedDensity")
            .field("delta", &self.delta)
            .field("l1_prime", &self.l1_prime)
            .field("m_constant", &self.m_constant)
            .finish_non_exhaustive()
    }
}

impl PerturbedDensity {
    /// `rho'(x) = ((L1' - q'(x)) / M)^{d/s}_+`.
    pub fn value(&self, x: &[f64]) -> f64 {
        let r = ((self.l1_prime - self.field.evaluate(x)) / self.m_constant).max(0.0);
        r.powf(1.0 / self.s_over_d)
    }

    /// First-order deviation bound
    /// `|delta| d (1 + |rho|_inf^{s/d} / rho(x)^{s/d}) / (s M)`.
    pub fn bound(&self, x: &[f64]) -> f64 {
        let r = self.rho.value(x);
        self.delta.abs() * (1.0 + (self.rho_max / r).powf(self.s_over_d))
            / (self.s_over_d * self.m_constant)
    }

    /// The same expansion carried out without dropping factors:
    /// `|delta| (d/s) rho(x) (1 + |rho|_inf^{s/d} / rho(x)^{s/d})`.
    pub fn corrected_bound(&self, x: &[f64]) -> f64 {
        let r = self.rho.value(x);
        self.delta.abs() * r * (1.0 + (self.rho_max / r).powf(self.s_over_d)) / self.s_over_d
    }

    pub fn max_bound(&self) -> f64 {
        self.node_bounds.iter().copied().fold(0.0, f64::max)
    }
}

pub fn perturbed_density(set: &CompactSet, rho: Arc<dyn ScalarField>, s: f64, delta: f64) -> Result<PerturbedDensity> {
    let constant = riesz_constant(s, set.hausdorff_dim())?;
    perturbed_density_with_constant(set, rho, constant, delta)
}

pub fn perturbed_density_with_constant(
    set: &CompactSet,
    rho: Arc<dyn ScalarField>,
    constant: RieszConstant,
    delta: f64,
) -> Result<PerturbedDensity> {
    let d = set.hausdorff_dim();
    let s_over_d = constant.s / d as f64;
    let values: Vec<f64> = set.nodes().map(|x| rho.value(x)).collect();
    let rho_min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let rho_max = values.iter().copied().fold(0.0, f64::max);
    if !(rho_min > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "density must be bounded below by a positive constant, minimum is {rho_min}"
        )));
    }
    let m = constant.m_constant();
    let admissible = m / (1.0 + (rho_max / rho_min).powf(s_over_d));
    if !(delta.is_finite() && delta > -1.0 && delta.abs() < admissible) {
        return Err(Error::InvalidArgument(format!(
            "|delta| = {} outside the admissible range (< {admissible})",
            delta.abs()
        )));
    }
    let design = design_field_with_constant(set, Arc::clone(&rho), constant)?;
    let field = design.field.scaled(1.0 + delta);
    let l1_prime = solve_l1(set, &field, constant)?;
    let mut out = PerturbedDensity {
        delta,
        l1_prime,
        m_constant: m,
        field,
        rho,
        rho_max,
        s_over_d,
        node_values: Vec::new(),
        node_bounds: Vec::new(),
    };
    out.node_values = set.nodes().map(|x| out.value(x)).collect();
    out.node_bounds = set.nodes().map(|x| out.bound(x)).collect();
    Ok(out)
}
