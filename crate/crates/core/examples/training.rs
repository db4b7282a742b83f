//! Train the forecaster on two synthetic scenes and forecast the third.
//!
//!     cargo run --release --example training -- [epochs]

use bgm::eval::{ade, fde, linear_baseline, subsample};
use bgm::ingest::{build_samples, HorizonConfig};
use bgm::model::{train, ModelConfig, ModelOptions, TrainConfig};
use bgm::pipeline::{Contexts, MapConfig};
use bgm::recwin::WindowConfig;
use bgm::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map_or(Ok(20), |s| s.parse())?;
    let scenes: Vec<_> = ["zara1", "zara2", "hotel"]
        .iter()
        .map(|n| generate(&SynthConfig::preset(n, 0).unwrap()))
        .collect();
    let horizon = HorizonConfig::default();
    let contexts = Contexts::build(&scenes, WindowConfig::default(), MapConfig::default())?;
    let train_samples: Vec<_> = scenes[..2].iter().flat_map(|s| build_samples(s, horizon, 1)).collect();
    let train_samples = subsample(&train_samples, 300);
    let test = subsample(&build_samples(&scenes[2], horizon, 1), 200);

    let model = ModelConfig::default();
    let examples = contexts.examples(&train_samples, model.local_side)?;
    let cfg = TrainConfig {
        epochs,
        batch_size: 32,
        ..TrainConfig::default()
    };
    println!("{} training samples, {} parameters", examples.len(), bgm::model::ModelParams::init(model, 0).num_scalars());
    let out = train(model, &examples, cfg, ModelOptions::default(), |e| {
        if e.epoch % 5 == 0 {
            println!("epoch {:>3}: mean error {:.3} m", e.epoch, e.mean_displacement);
        }
    })?;

    let inputs = contexts.inputs(&test, model.local_side)?;
    let preds = out.params.predict_batch(&inputs, ModelOptions::default())?;
    let n = test.len() as f64;
    let (mut a, mut f, mut la, mut lf) = (0.0, 0.0, 0.0, 0.0);
    for (s, p) in test.iter().zip(&preds) {
        let lin = linear_baseline(&s.observed, horizon.t_pred);
        a += ade(p, &s.ground_truth)? / n;
        f += fde(p, &s.ground_truth)? / n;
        la += ade(&lin, &s.ground_truth)? / n;
        lf += fde(&lin, &s.ground_truth)? / n;
    }
    println!("held-out {}: model {a:.3}/{f:.3}, linear {la:.3}/{lf:.3} (ADE/FDE, m)", scenes[2].name);
    Ok(())
}
