//! Riesz constants `C_{s,d}` and the related lattice sums.
//!
//! ```text
//! cargo run --release --example constants
//! ```

use riesz::constants::{epstein_zeta_hex, riesz_constant, unit_ball_volume, zeta};

fn main() -> riesz::Result<()> {
    println!("{:>6} {:>3} {:>14} {:>14}  provenance", "s", "d", "C_sd", "M_sd");
    for &(s, d) in &[(1.0, 1), (2.0, 1), (4.0, 1), (2.0, 2), (3.0, 2), (4.0, 2), (8.0, 2), (3.0, 3)] {
        let c = riesz_constant(s, d)?;
        println!("{s:>6} {d:>3} {:>14.8} {:>14.8}  {:?}", c.value, c.m_constant(), c.provenance);
    }

    // s = d uses the unit ball volume.
    for d in 1..=4 {
        println!("vol(B^{d}) = {:.10}", unit_ball_volume(d));
    }

    println!("zeta(2) = {:.15}", zeta(2.0)?);
    println!("zeta(4) = {:.15}", zeta(4.0)?);
    println!("hex Epstein zeta(4) = {:.12}", epstein_zeta_hex(4.0)?);
    Ok(())
}
