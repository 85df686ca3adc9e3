//! Step the duel simulator with a ball-following paddle and print every
//! contact and score event.
//!
//! `cargo run --example duel_physics -- [seed] [steps]`

use modular_arcade::env::{rebound_vx, reset, Action, EnvKind};

fn main() -> modular_arcade::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u64>().expect("integer argument"));
    let seed = args.next().unwrap_or(0);
    let steps = args.next().unwrap_or(400);

    let mut state = reset(EnvKind::Duel, seed);
    let reach = state.controllable().shape.half_width() + 1;
    println!("rebound table (contact dx -> outgoing vx):");
    for dx in 0..=reach {
        print!(" {dx}:{}", rebound_vx(dx, reach));
    }
    println!();

    // aim a few pixels off-centre so rebounds leave at an angle
    let aim = 5;
    for step in 0..steps {
        let pad = state.controllable().position();
        let action = match state.ball() {
            Some(b) if b.position().x - aim < pad.x - 1 => Action::Left,
            Some(b) if b.position().x - aim > pad.x + 1 => Action::Right,
            _ => Action::Noop,
        };
        let events = state.step(action, 2)?;
        for c in &events.contacts {
            println!("step {step:4} tick {:5} {:?} object {} at dx {}", c.tick, c.kind, c.other_id.0, c.offset.x);
        }
        for r in &events.rewards {
            println!("step {step:4} tick {:5} reward {:+}", r.tick, r.amount);
        }
        if state.terminal {
            println!("episode over after {step} steps");
            break;
        }
    }
    Ok(())
}
