//! Feed a contact table with noisy outcomes and watch the sampling
//! distribution sharpen as the temperature drops.
//!
//! `cargo run --example contact_regression`

use modular_arcade::contact::ContactTable;
use modular_arcade::env::{ContactEvent, ContactKind, ObjectId, Point, RewardEvent, ShapeBitmap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut table = ContactTable::for_shape(&ShapeBitmap::rect(15, 3));
    let reach = table.reach();
    let mut tick = 0;
    for _ in 0..2_000 {
        let dx = rng.gen_range(-reach..=reach);
        let kind = if dx.abs() == reach { ContactKind::Miss } else { ContactKind::Hit };
        table.record_contact(&ContactEvent {
            controllable_id: ObjectId(1),
            other_id: ObjectId(0),
            offset: Point::new(dx, 0),
            tick,
            kind,
        });
        // edges score more often, misses lose a point
        let amount = match kind {
            ContactKind::Miss => -1,
            _ if rng.gen_bool(dx.abs() as f64 / reach as f64 * 0.8) => 1,
            _ => 0,
        };
        let rewards = if amount != 0 { vec![RewardEvent { amount, tick: tick + 30 }] } else { vec![] };
        table.settle_rewards(&rewards, tick + 30);
        tick += table.horizon() + 1;
    }
    table.flush();

    println!("bucket  samples  expected");
    for b in table.buckets() {
        let n = table.stats(b).map_or(0, |s| s.count);
        println!("{b:6}  {n:7}  {:8.3}{}", table.expected_reward(b), if table.is_admissible(b) { "" } else { "  (beyond edge)" });
    }
    println!("best contact bucket: {}", table.best_bucket());
    for tau in [1.0, 0.3, 0.05] {
        let p = table.probabilities(tau);
        let top = p.iter().cloned().fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        println!("tau {tau:4}: most likely bucket {} with p = {:.3}", top.0, top.1);
    }
}
