//! Pair evaluations and step time of the Relation Network baseline
//! against the attention model as the memory grows.
//!
//! cargo run --release --example rn_scaling

use rmn::cli::compare_config;
use rmn::feature_map::{count_pair_evaluations, step_cost_profile};
use rmn::report::{cost_ratios, cost_table};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let models = vec![("rn".to_string(), compare_config("rn").expect("known model")), ("rmn".to_string(), compare_config("rmn").expect("known model"))];
    let ns = [10, 20, 40, 80, 130];
    for (name, cfg) in &models {
        let counts: Vec<usize> = ns.iter().map(|&n| count_pair_evaluations(cfg.architecture, n, cfg.hops)).collect();
        println!("{name:<4} g evaluations per episode at n={ns:?}: {counts:?}");
    }
    let rows = step_cost_profile(&models, &ns, 1, 3)?;
    print!("{}", cost_table(&rows));
    for (m, wall, pairs) in cost_ratios(&rows) {
        println!("{m}: n=130 vs n=10 wall time {wall:.1}x, pair evaluations {pairs:.0}x");
    }
    Ok(())
}
