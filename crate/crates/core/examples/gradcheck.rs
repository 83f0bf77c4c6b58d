//! Finite-difference check of every parameter group on the tiny network,
//! followed by a run with a deliberately broken tanh backward rule.
//!
//! cargo run --release --example gradcheck

use tienet::autodiff::OpKind;
use tienet::cli::{gradcheck_table, GRADCHECK_TOL};
use tienet::experiment::gradcheck_groups;
use tienet::model::{Mode, ModelConfig};

fn main() -> tienet::Result<()> {
    for mode in Mode::ALL {
        let cfg = ModelConfig { mode, ..ModelConfig::tiny() };
        let rows = gradcheck_groups(&cfg, 0, None)?;
        println!("== {}", mode.as_str());
        print!("{}", gradcheck_table(&rows));
    }

    let rows = gradcheck_groups(&ModelConfig::tiny(), 0, Some((OpKind::Tanh, 1.5)))?;
    let caught = rows.iter().filter(|r| r.max_rel > GRADCHECK_TOL).count();
    println!("== igr with tanh backward scaled by 1.5: {caught} of {} groups flagged", rows.len());
    Ok(())
}
