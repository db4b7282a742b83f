//! Record windows of a synthetic scene and the guidance map each one
//! produces, written as PNG heat maps with a few tracks overlaid.
//!
//!     cargo run --example guidance_maps -- [out_dir]

use std::path::PathBuf;

use bgm::gmap::{render_map, render_trajectories};
use bgm::ingest::{build_samples, HorizonConfig};
use bgm::pipeline::{MapConfig, SceneContext};
use bgm::recwin::WindowConfig;
use bgm::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "bgm-out/maps".into()));
    std::fs::create_dir_all(&out)?;
    let scene = generate(&SynthConfig::preset("univ", 0).unwrap());
    let ctx = SceneContext::build(&scene, WindowConfig::default(), MapConfig::default())?;
    println!("{} on a {}x{} grid", scene.name, ctx.spec.height, ctx.spec.width);
    for (i, (saved, map)) in ctx.index.windows.iter().zip(&ctx.maps).enumerate() {
        let w = &saved.window;
        println!(
            "window {i}: frames {}..{} saved at {}, {} positions, {} off-grid",
            w.frames[0],
            w.frames[w.frames.len() - 1],
            saved.saved_at,
            w.positions.len(),
            map.dropped
        );
        render_map(map, &out.join(format!("window{i}.png")), 3)?;
    }

    // tracks of the samples whose prediction starts under the last window
    let samples = build_samples(&scene, HorizonConfig::default(), 1);
    let last = ctx.index.len() - 1;
    let shown: Vec<_> = samples.iter().filter(|s| ctx.window_for(s) == Some(last)).take(4).collect();
    let tracks: Vec<Vec<_>> = shown.iter().map(|s| [s.observed.clone(), s.ground_truth.clone()].concat()).collect();
    let colored: Vec<(&[_], [u8; 3])> = tracks.iter().map(|t| (t.as_slice(), [0, 255, 255])).collect();
    render_trajectories(&ctx.maps[last], &colored, &out.join("tracks.png"), 3)?;

    if let Some(s) = shown.first() {
        let local = ctx.local_map(s)?.expect("window in force");
        println!("local map of agent {}: {}x{} cells, {} counts", s.agent_id, local.side, local.side, local.total());
    }
    println!("images in {}", out.display());
    Ok(())
}
