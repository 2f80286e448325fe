//! Relax the built-in reactor-separator to its steady state under the nominal
//! heat inputs and print it.

use kmpc_core::plant::reactor_separator::{DATA_INITIAL_STATE, NOMINAL_INPUT};
use kmpc_core::plant::{relax_to_steady_state, ReactorSeparator};
use kmpc_core::Vector;

fn main() -> kmpc_core::Result<()> {
    let plant = ReactorSeparator::nominal_plant();
    let x0 = Vector::from_column_slice(&DATA_INITIAL_STATE);
    let u = Vector::from_column_slice(&NOMINAL_INPUT);
    let ss = relax_to_steady_state(&plant, &x0, &u, &Vector::zeros(0), 0.005, 1e-13, 200_000)?;
    for v in ss.iter() {
        println!("{v:?},");
    }
    Ok(())
}
