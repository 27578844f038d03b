//! Riesz constants `C_{s,d}` and the field-design coefficient
//! `M_{s,d} = C_{s,d} (1 + s/d)`.
//!
//! Known exactly for `d = 1` (`2 zeta(s)`) and for `s = d` (volume of the
//! unit `d`-ball). For `d = 2, s > 2` the hexagonal-lattice value
//! `|L|^{s/2} zeta_L(s)` is used; it is conjectural and flagged as such.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a constant's value comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ExactD1,
    ExactBallVolume,
    ConjecturedLattice,
    UserOverride,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RieszConstant {
    pub s: f64,
    pub d: usize,
    pub value: f64,
    pub provenance: Provenance,
}

impl RieszConstant {
    /// A caller-supplied value, e.g. for sensitivity studies.
    pub fn user_override(s: f64, d: usize, value: f64) -> Result<Self> {
        check_hypersingular(s, d)?;
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Riesz constant must be positive and finite, got {value}"
            )));
        }
        Ok(RieszConstant {
            s,
            d,
            value,
            provenance: Provenance::UserOverride,
        })
    }

    /// `M_{s,d} = C_{s,d} (1 + s/d)`.
    pub fn m_constant(&self) -> f64 {
        self.value * (1.0 + self.s / self.d as f64)
    }

    pub fn is_conjectural(&self) -> bool {
        self.provenance == Provenance::ConjecturedLattice
    }
}

pub(crate) fn check_hypersingular(s: f64, d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension d must be >= 1".into()));
    }
    if !s.is_finite() || s < d as f64 {
        return Err(Error::NotHypersingular { s, d });
    }
    Ok(())
}

/// `s == d` up to rounding in the caller's arithmetic.
pub(crate) fn is_critical(s: f64, d: usize) -> bool {
    (s - d as f64).abs() <= 1e-12 * s.abs().max(1.0)
}

/// Riemann zeta for `s > 1` by Euler-Maclaurin: 20 direct terms plus
/// the tail integral and Bernoulli corrections through `B_6`.
pub fn zeta(s: f64) -> Result<f64> {
    if !(s > 1.0) || !s.is_finite() {
        return Err(Error::InvalidArgument(format!("zeta needs s > 1, got {s}")));
    }
    const K: f64 = 20.0;
    // B_2 / 2!, B_4 / 4!, B_6 / 6!
    const COEFFS: [f64; 3] = [1.0 / 12.0, -1.0 / 720.0, 1.0 / 30240.0];

    let mut sum = 0.0;
    for n in (1..20).rev() {
        sum += (n as f64).powf(-s);
    }
    sum += K.powf(1.0 - s) / (s - 1.0) + 0.5 * K.powf(-s);
    // term j: B_{2j}/(2j)! * s (s+1) ... (s+2j-2) * K^{-s-2j+1}
    let mut rising = s;
    let mut kpow = K.powf(-s - 1.0);
    for (j, c) in COEFFS.iter().enumerate() {
        if j > 0 {
            let m = 2.0 * j as f64;
            rising *= (s + m - 1.0) * (s + m);
            kpow /= K * K;
        }
        sum += c * rising * kpow;
    }
    Ok(sum)
}

/// Area of the fundamental cell of the unit-edge hexagonal lattice.
pub const HEX_CELL_AREA: f64 = 0.866_025_403_784_438_6;

/// Largest lattice radius summed directly; beyond it the sum is replaced
/// by its continuum tail.
const HEX_MAX_RADIUS: f64 = 1200.0;

/// Epstein zeta of the unit-edge hexagonal lattice,
/// `sum_{v != 0} |v|^{-s}` with `|m a + n b|^2 = m^2 + m n + n^2`.
///
/// Sums every lattice vector with `|v| <= R`, where `R` is the smallest
/// radius whose continuum tail `2 pi R^{2-s} / ((s-2) |L|)` is below 1e-9,
/// capped at 1200. The continuum tail beyond `R` is added back, which leaves
/// only the lattice-point discrepancy on the circle as error.
pub fn epstein_zeta_hex(s: f64) -> Result<f64> {
    if !(s > 2.0) || !s.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "hexagonal Epstein zeta diverges for s <= 2, got {s}"
        )));
    }
    let tail = |r: f64| 2.0 * PI * r.powf(2.0 - s) / ((s - 2.0) * HEX_CELL_AREA);
    let mut radius: f64 = 8.0;
    while tail(radius) > 1e-9 && radius < HEX_MAX_RADIUS {
        radius *= 1.25;
    }
    let radius = radius.min(HEX_MAX_RADIUS);
    Ok(hex_disc_sum(s, radius) + tail(radius))
}

/// Sum of `|v|^{-s}` over nonzero hexagonal lattice vectors with `|v| <= radius`.
fn hex_disc_sum(s: f64, radius: f64) -> f64 {
    let r2 = radius * radius;
    let nmax = (2.0 * radius / 3f64.sqrt()).ceil() as i64;
    let half = s / 2.0;
    let even = half.fract() == 0.0 && half <= 64.0;
    let mut total = 0.0;
    // Outer rows first so small terms accumulate before large ones.
    for n in (-nmax..=nmax).rev() {
        let nf = n as f64;
        let disc = 4.0 * r2 - 3.0 * nf * nf;
        if disc < 0.0 {
            continue;
        }
        let root = disc.sqrt();
        let lo = ((-nf - root) / 2.0).ceil() as i64;
        let hi = ((-nf + root) / 2.0).floor() as i64;
        let mut row = 0.0;
        for m in lo..=hi {
            let norm2 = (m * m + m * n + n * n) as f64;
            if norm2 == 0.0 || norm2 > r2 {
                continue;
            }
            row += if even {
                norm2.powi(-(half as i32))
            } else {
                norm2.powf(-half)
            };
        }
        total += row;
    }
    total
}

/// Volume of the unit `d`-ball, `pi^{d/2} / Gamma(d/2 + 1)`.
pub fn unit_ball_volume(d: usize) -> f64 {
    PI.powf(d as f64 / 2.0) / gamma_half_integer(d + 2)
}

/// `Gamma(k / 2)` for a positive integer `k`.
pub(crate) fn gamma_half_integer(k: usize) -> f64 {
    assert!(k >= 1);
    let (mut g, mut x) = if k % 2 == 0 { (1.0, 1.0) } else { (PI.sqrt(), 0.5) };
    let target = k as f64 / 2.0;
    while x < target {
        g *= x;
        x += 1.0;
    }
    g
}

/// `C_{s,d}` for the supported combinations: `s = d` (any `d`), `d = 1`,
/// and `d = 2` via the hexagonal lattice.
pub fn riesz_constant(s: f64, d: usize) -> Result<RieszConstant> {
    check_hypersingular(s, d)?;
    let (value, provenance) = if is_critical(s, d) {
        (unit_ball_volume(d), Provenance::ExactBallVolume)
    } else if d == 1 {
        (2.0 * zeta(s)?, Provenance::ExactD1)
    } else if d == 2 {
        (
            HEX_CELL_AREA.powf(s / 2.0) * epstein_zeta_hex(s)?,
            Provenance::ConjecturedLattice,
        )
    } else {
        return Err(Error::UnknownConstant { s, d });
    };
    Ok(RieszConstant {
        s,
        d,
        value,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    #[test]
    fn zeta_closed_forms() {
        assert!(close(zeta(2.0).unwrap(), PI * PI / 6.0, 1e-12));
        assert!(close(zeta(4.0).unwrap(), PI.powi(4) / 90.0, 1e-12));
        assert!(close(zeta(6.0).unwrap(), PI.powi(6) / 945.0, 1e-12));
    }

    #[test]
    fn zeta_three_matches_partial_sum_oracle() {
        // 10^6 direct terms plus the Euler-Maclaurin tail of the remainder.
        let n = 1_000_000u64;
        let mut partial = 0.0;
        for k in (1..=n).rev() {
            let k = k as f64;
            partial += 1.0 / (k * k * k);
        }
        let nf = n as f64;
        let tail = 1.0 / (2.0 * nf * nf) - 1.0 / (2.0 * nf.powi(3)) + 1.0 / (4.0 * nf.powi(4));
        assert!(close(zeta(3.0).unwrap(), partial + tail, 1e-10));
    }

    #[test]
    fn zeta_rejects_pole() {
        assert!(zeta(1.0).is_err());
        assert!(zeta(0.5).is_err());
    }

    #[test]
    fn zeta_accurate_near_lower_range() {
        // zeta(1.5), reference value to 15 digits.
        assert!(close(zeta(1.5).unwrap(), 2.612_375_348_685_488, 1e-12));
    }

    #[test]
    fn ball_volumes() {
        assert!(close(unit_ball_volume(1), 2.0, 1e-15));
        assert!(close(unit_ball_volume(2), PI, 1e-15));
        assert!(close(unit_ball_volume(3), 4.0 * PI / 3.0, 1e-14));
        assert!(close(unit_ball_volume(4), PI * PI / 2.0, 1e-14));
    }

    #[test]
    fn constants_for_worked_examples() {
        let c22 = riesz_constant(2.0, 2).unwrap();
        assert_eq!(c22.value, PI);
        assert_eq!(c22.provenance, Provenance::ExactBallVolume);

        let c41 = riesz_constant(4.0, 1).unwrap();
        assert!(close(c41.value, 2.164_646_467_422_276, 1e-12));
        assert!(close(c41.m_constant(), 10.8232, 1e-4));

        let c42 = riesz_constant(4.0, 2).unwrap();
        assert!(close(c42.value, 5.7834, 1e-3));
        assert!(c42.is_conjectural());
    }

    #[test]
    fn unsupported_and_invalid() {
        assert!(matches!(
            riesz_constant(4.0, 3),
            Err(Error::UnknownConstant { .. })
        ));
        assert!(matches!(
            riesz_constant(1.0, 2),
            Err(Error::NotHypersingular { .. })
        ));
        assert!(riesz_constant(3.0, 3).is_ok());
        assert!(epstein_zeta_hex(2.0).is_err());
    }

    #[test]
    fn hex_eight_matches_square_cutoff_sum() {
        let k = 2000i64;
        let mut direct = 0.0;
        for n in -k..=k {
            for m in -k..=k {
                if m == 0 && n == 0 {
                    continue;
                }
                let r2 = (m * m + m * n + n * n) as f64;
                direct += 1.0 / (r2 * r2 * r2 * r2);
            }
        }
        assert!(close(epstein_zeta_hex(8.0).unwrap(), direct, 1e-10));
    }

    #[test]
    fn user_override_validates() {
        assert!(RieszConstant::user_override(3.0, 2, 4.0).is_ok());
        assert!(RieszConstant::user_override(3.0, 2, -1.0).is_err());
        assert!(RieszConstant::user_override(1.0, 2, 1.0).is_err());
    }
}
