//! Prints the curriculum learning rate against training progress for
//! patients of different visit counts.
//!
//!     cargo run --example curriculum_schedule

use medrec::optim::{effective_lr, CurriculumContext, MomentMode, OptimizerState, Schedule};
use medrec::params::ParamStore;

fn main() -> medrec::Result<()> {
    let gamma = 1e-3;
    let horizon = 1000;
    println!("{:>6} {:>10} {:>10} {:>10}", "step", "1 visit", "3 visits", "8 visits");
    for i in (0..=1000).step_by(125) {
        let r: Vec<f64> = [1, 3, 8]
            .iter()
            .map(|&l| effective_lr(gamma, i, l, horizon))
            .collect::<Result<_, _>>()?;
        println!("{i:>6} {:>10.2e} {:>10.2e} {:>10.2e}", r[0], r[1], r[2]);
    }

    let mut st = OptimizerState::new(&ParamStore::new(), gamma, horizon, MomentMode::Standard, Schedule::Reversed)?;
    st.longest = 8;
    println!("\nreversed schedule at step 0:");
    for l in [1, 3, 8] {
        let r = st.rate(CurriculumContext { iteration: 0, visits: l })?;
        println!("  {l} visits -> {r:.3e}");
    }
    Ok(())
}
