//! Write a run configuration, reload it, and drive the command-line entry
//! point with it: train on a small synthetic set, then verify the outputs.
//!
//!     cargo run --example run_config -- [out_dir]

use std::path::PathBuf;

use bgm::cli::run_from;
use bgm::config::RunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "bgm-out/config-demo".into()));
    std::fs::create_dir_all(&out)?;

    let mut cfg = RunConfig::default();
    cfg.data.synthetic = true;
    cfg.data.scenes = vec!["hotel".into(), "zara1".into()];
    cfg.eval.max_train_samples = 100;
    cfg.train.epochs = 5;
    let path = out.join("demo.toml");
    std::fs::write(&path, cfg.to_toml())?;
    let back = RunConfig::load(&path)?;
    assert_eq!(back, cfg);
    println!("configuration {} hashes to {}", path.display(), back.hash());

    let common = ["--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let train = [&["bgm", "train", "--scene", "hotel"][..], &common].concat();
    let code = run_from(train);
    println!("train exited with {code}");
    let verify = [&["bgm", "verify"][..], &common].concat();
    println!("verify exited with {}", run_from(verify));
    Ok(())
}
