//! One worked example at reduced size, with the reference comparison.
//!
//! ```text
//! cargo run --release --example reproduce -- e
//! ```

use riesz::cli::{cmd_reproduce, ReproduceOptions};
use riesz::fields::ExampleId;

fn main() {
    let id = match std::env::args().nth(1).as_deref() {
        Some("a") => ExampleId::A,
        Some("b") => ExampleId::B,
        Some("c") => ExampleId::C,
        Some("d") => ExampleId::D,
        _ => ExampleId::E,
    };
    let out = std::env::temp_dir().join(format!("riesz-example-{}", id.as_str()));
    let options = ReproduceOptions { reduced: true, output_dir: Some(out.clone()), ..Default::default() };
    match cmd_reproduce(id, &options) {
        Ok(report) => {
            for c in report.comparison.iter().flatten() {
                let verdict = if c.pass { "ok" } else { "MISS" };
                println!("{:<26} {:>10.6} {:>10.6}  {verdict}", c.quantity, c.reference, c.computed);
            }
            println!("outputs in {}", out.display());
        }
        Err(e) => {
            eprintln!("{}", e.message);
            std::process::exit(e.code);
        }
    }
}
