//! Leave-one-out benchmark on the synthetic scenes with a small training
//! budget: all four variants, then the record-period experiment on univ.
//!
//!     cargo run --release --example benchmark -- [epochs]

use bgm::config::RunConfig;
use bgm::eval::{dynamic_map_experiment, fold_samples, run_benchmark, EvalError};
use bgm::model::{train, ModelOptions, ModelParams};
use bgm::pipeline::Contexts;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::default();
    cfg.data.synthetic = true;
    cfg.eval.max_train_samples = 200;
    cfg.train.batch_size = 32;
    cfg.train.epochs = std::env::args().nth(1).map_or(Ok(10), |s| s.parse())?;
    let scenes = cfg.load_scenes()?;
    let contexts = Contexts::build(&scenes, cfg.record_window, cfg.map)?;

    let mut univ_model = None;
    let mut source = |held_out: &str, use_context: bool| -> Result<ModelParams, EvalError> {
        let (train_set, _) = fold_samples(&cfg, &scenes, held_out)?;
        let examples = contexts.examples(&train_set, cfg.model.local_side)?;
        eprintln!("fold {held_out}, context {use_context}: {} samples", examples.len());
        let params = train(cfg.model, &examples, cfg.train, ModelOptions { use_context }, |_| {})?.params;
        if held_out == cfg.eval.dynamic_scene && use_context {
            univ_model = Some(params.clone());
        }
        Ok(params)
    };
    let report = run_benchmark(&cfg, &scenes, &mut source)?;
    print!("{}", report.to_text());

    let univ = scenes.iter().find(|s| s.name == cfg.eval.dynamic_scene).unwrap();
    let d = dynamic_map_experiment(&cfg, univ, univ_model.as_ref().unwrap())?;
    print!("{}", d.to_text());
    Ok(())
}
