//! Render a bricks frame to PPM, read it back and recover every object from
//! pixels alone.
//!
//! `cargo run --example pixel_extraction -- [out_dir]`

use modular_arcade::env::{render, reset, Action, EnvKind, Frame};
use modular_arcade::pixel::{match_objects, templates_for};

fn main() -> modular_arcade::Result<()> {
    let dir = std::env::args().nth(1).map_or_else(std::env::temp_dir, Into::into);
    let mut state = reset(EnvKind::Bricks, 3);
    let templates = templates_for(&state);
    for t in &templates {
        println!("template {} {:?} {}x{} {:?}", t.id, t.class, t.shape.width(), t.shape.height(), t.expect);
    }

    let prev = render(&state);
    for _ in 0..30 {
        state.step(Action::Right, 2)?;
    }
    let path = dir.join("bricks_frame.ppm");
    render(&state).save_ppm(&path)?;
    let frame = Frame::load_ppm(&path)?;
    println!("wrote and reloaded {}", path.display());

    let found = match_objects(&frame, Some(&prev), &templates)?;
    let mut exact = 0;
    for obj in state.objects.values() {
        if found.detections.iter().any(|d| d.class == obj.class && d.position == obj.position()) {
            exact += 1;
        }
    }
    println!("{} detections, {exact}/{} objects at their true anchor", found.detections.len(), state.objects.len());
    for class in [modular_arcade::env::ObjectClass::Ball, modular_arcade::env::ObjectClass::Paddle] {
        println!("{class:?}: {:?}", found.first(class));
    }
    Ok(())
}
