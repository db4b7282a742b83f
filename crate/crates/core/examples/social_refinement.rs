//! Two agents on a collision course: build each one's energy field, refine
//! the straight-line forecasts, and render the fields.
//!
//!     cargo run --example social_refinement -- [out_dir]

use std::path::PathBuf;

use bgm::gmap::render_map;
use bgm::social::{build_energy_field, discriminant, field_spec, refine, AgentState, NeighborSet, SocialParams};
use bgm::TrajPoint;

fn walker(id: i64, from: TrajPoint, step: TrajPoint) -> AgentState {
    AgentState {
        agent_id: id,
        displacement: step * -7.0,
        prediction: (1..=12).map(|k| from + step * k as f64).collect(),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "bgm-out/social".into()));
    std::fs::create_dir_all(&out)?;
    let params = SocialParams::default();
    let agents = [
        walker(1, TrajPoint::new(0.0, 0.0), TrajPoint::new(0.4, 0.0)),
        walker(2, TrajPoint::new(5.2, 0.05), TrajPoint::new(-0.4, 0.0)),
    ];
    for a in &agents {
        let nb = NeighborSet::excluding(&agents, a.agent_id);
        let spec = field_spec(a, &nb, &params)?;
        let field = build_energy_field(a, &nb, &params, &spec)?;
        let r = refine(&a.prediction, &field, &params);
        let before = discriminant(&field, &a.prediction).value;
        let after = discriminant(&field, &r.points).value;
        let moved = r.points.iter().zip(&a.prediction).map(|(p, q)| p.dist(*q)).fold(0.0, f64::max);
        println!(
            "agent {}: D {before:.4} -> {after:.4} after {} updates (stopped at order {}), largest shift {:.4} m",
            a.agent_id, r.updates, r.order, moved
        );
        render_map(&field, &out.join(format!("field{}.png", a.agent_id)), 3)?;
    }
    println!("fields in {}", out.display());
    Ok(())
}
