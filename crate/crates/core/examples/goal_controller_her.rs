//! Train the goal-conditioned paddle controller on self-chosen lane goals,
//! with and without hindsight relabelling, and compare greedy success.
//!
//! `cargo run --release --example goal_controller_her -- [steps]`

use modular_arcade::controller::{
    evaluate_goal_reaching, train_on_random_goals, ControllerConfig, DrillConfig, GoalController,
};
use modular_arcade::env::EnvKind;

fn main() -> modular_arcade::Result<()> {
    let steps: u64 = std::env::args().nth(1).map_or(8_000, |a| a.parse().expect("step count"));
    for her in [true, false] {
        let config = ControllerConfig { her, seed: 3, ..ControllerConfig::default() };
        let mut controller = GoalController::new(config, EnvKind::Duel.action_set(), (160.0, 192.0))?;
        let train = train_on_random_goals(&mut controller, EnvKind::Duel, 3, steps, DrillConfig::default())?;
        let eval = evaluate_goal_reaching(&controller, EnvKind::Duel, 99, 200, DrillConfig::default())?;
        println!(
            "relabelling {:5}: {} goals in training ({:.2} reached), replay holds {}, greedy success {:.3}",
            her,
            train.goals,
            train.success_rate(),
            controller.store().len(),
            eval.success_rate()
        );
    }
    Ok(())
}
