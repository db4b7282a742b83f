//! Parse an annotation file, cut fixed-horizon samples and split them
//! leave-one-out.
//!
//!     cargo run --example samples -- [path/to/scene.txt]

use std::io::Cursor;

use bgm::ingest::{build_samples, parse_reader, parse_annotations, split_leave_one_out, AnnotationFormat, HorizonConfig};
use bgm::synth::{benchmark_scenes, linear_scene};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let horizon = HorizonConfig::default();
    let scene = match std::env::args().nth(1) {
        Some(path) => parse_annotations(path.as_ref(), AnnotationFormat::FrameRows)?,
        None => {
            // round-trip a generated scene through the text format
            let mut text = Vec::new();
            linear_scene("demo", 12, 30, 3).write_annotations(&mut text)?;
            parse_reader("demo", Cursor::new(text), AnnotationFormat::FrameRows)?
        }
    };
    let (lo, hi) = scene.bounds;
    println!(
        "{}: {} agents, {} records, frames {:?}..{:?} every {}, bounds ({:.2},{:.2})-({:.2},{:.2})",
        scene.name,
        scene.tracks.len(),
        scene.num_records(),
        scene.first_frame(),
        scene.last_frame(),
        scene.frame_step,
        lo.x,
        lo.y,
        hi.x,
        hi.y
    );
    let samples = build_samples(&scene, horizon, 1);
    println!("{} samples of {}+{} frames", samples.len(), horizon.t_obs, horizon.t_pred);
    if let Some(s) = samples.first() {
        println!(
            "first: agent {} from frame {}, last observed ({:.2}, {:.2}), {} neighbours",
            s.agent_id,
            s.t0,
            s.last_observed().x,
            s.last_observed().y,
            s.neighbor_ids.len()
        );
    }

    let scenes = benchmark_scenes(0);
    for held in ["eth", "univ"] {
        let (train, test) = split_leave_one_out(&scenes, held, horizon, 1)?;
        println!("hold out {held}: {} train / {} test samples", train.len(), test.len());
    }
    Ok(())
}
