//! Train the complete agent on duel, evaluate it, checkpoint it and check the
//! restored copy plays identically.
//!
//! `cargo run --release --example full_agent_duel -- [steps] [checkpoint_dir]`

use modular_arcade::agent::{run_episode, Agent, AgentConfig};
use modular_arcade::env::{reset, EnvKind};

fn main() -> modular_arcade::Result<()> {
    let mut args = std::env::args().skip(1);
    let budget: u64 = args.next().map_or(10_000, |a| a.parse().expect("step count"));
    let dir = args.next().map_or_else(|| std::env::temp_dir().join("duel_agent"), Into::into);

    let mut agent = Agent::new(AgentConfig::default().with_seed(0), &reset(EnvKind::Duel, 0))?;
    let (mut done, mut episode) = (0, 0);
    while done < budget {
        let mut state = reset(EnvKind::Duel, episode);
        let s = run_episode(&mut state, &mut agent, (budget - done).min(2_000))?;
        done += s.steps;
        episode += 1;
        println!(
            "episode {episode:3}: {:4} steps, score {:+3}, interception {:.2}",
            s.steps,
            s.score,
            s.interception_rate().unwrap_or(0.0)
        );
    }

    let metrics = agent.evaluate(10, 1_000, 2_000)?;
    println!(
        "eval: mean score {:.2}, interception {:.3}, goal success {:.3}",
        metrics.mean_score, metrics.interception_rate, metrics.goal_success
    );
    agent.save(&dir)?;
    let restored = Agent::from_checkpoint(&dir)?;
    let again = restored.evaluate(10, 1_000, 2_000)?;
    println!("checkpoint in {} reproduces eval: {}", dir.display(), again == metrics);
    Ok(())
}
