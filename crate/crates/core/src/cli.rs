//! The `bgm` command line: `train`, `predict`, `eval`, `render`, `verify`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//! Every JSON, JSON-lines and PNG artifact carries the hash of the effective
//! run configuration, and `run.toml` in the output directory holds that
//! configuration in full.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};
use crate::eval::{dynamic_map_experiment, fold_samples, run_benchmark, subsample, EvalError};
use crate::gmap::{dump_csv, png_text, to_image, trajectory_image, write_png, GuidanceMap};
use crate::ingest::{build_samples, Scene, TrajectorySample};
use crate::model::{train, ModelOptions, ModelParams};
use crate::nn::Checkpoint;
use crate::pipeline::{forecast, Contexts, SceneContext};
use crate::social::{build_energy_field, field_spec, observed_displacement, AgentState, NeighborSet};

/// PNG `tEXt` keyword holding the configuration hash.
pub const PNG_HASH_KEY: &str = "bgm-config";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "bgm", version, about = "Pedestrian trajectory forecasting with guidance maps and social refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model, holding out `--scene` when given.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: Option<String>,
        /// Train with the context branch disabled.
        #[arg(long)]
        no_context: bool,
    },
    /// Forecast every test sample of a scene.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: String,
        #[arg(long)]
        no_social: bool,
        #[arg(long)]
        no_context: bool,
        /// Write one PNG per predicted sample.
        #[arg(long)]
        render: bool,
        /// Only the first N samples.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Leave-one-out benchmark from per-scene checkpoints in a directory.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory with `<scene>.ckpt.json` and `<scene>-noctx.ckpt.json`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Only report these variants (default: all).
        #[arg(long)]
        no_social: bool,
        #[arg(long)]
        no_context: bool,
        /// Also run the record-period experiment.
        #[arg(long)]
        dynamic: bool,
    },
    /// Render guidance maps of a scene and, with a checkpoint, energy fields.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Check that every artifact under the output directory carries the
    /// configuration hash.
    Verify {
        #[command(flatten)]
        common: Common,
    },
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { common, scene, no_context } => cmd_train(&common, scene.as_deref(), !no_context).map(|_| ()),
        Command::Predict {
            common,
            checkpoint,
            scene,
            no_social,
            no_context,
            render,
            limit,
        } => cmd_predict(&common, &checkpoint, &scene, !no_social, !no_context, render, limit).map(|_| ()),
        Command::Eval {
            common,
            checkpoint,
            no_social,
            no_context,
            dynamic,
        } => cmd_eval(&common, &checkpoint, no_social, no_context, dynamic).map(|_| ()),
        Command::Render { common, scene, checkpoint } => cmd_render(&common, &scene, checkpoint.as_deref()).map(|_| ()),
        Command::Verify { common } => cmd_verify(&common).map(|_| ()),
    }
}

/// Effective configuration and output directory; writes `run.toml`.
pub fn setup(common: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if cfg.out_dir.as_os_str().is_empty() {
        cfg.out_dir = PathBuf::from("bgm-out");
    }
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", out.display())))?;
    fs::write(out.join("run.toml"), cfg.to_toml()).map_err(runtime)?;
    Ok((cfg, out))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(runtime)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(runtime)?;
    w.write_all(b"\n").map_err(runtime)?;
    w.flush().map_err(runtime)
}

fn find_scene<'a>(scenes: &'a [Scene], name: &str) -> Result<&'a Scene, CliError> {
    scenes
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| CliError::Usage(format!("scene {name} is not in data.scenes")))
}

pub fn checkpoint_name(held_out: Option<&str>, use_context: bool) -> String {
    format!("{}{}.ckpt.json", held_out.unwrap_or("all"), if use_context { "" } else { "-noctx" })
}

/// Trains one model and writes `<tag>.ckpt.json` and `<tag>.loss.csv`.
/// Returns the checkpoint path.
pub fn cmd_train(common: &Common, held_out: Option<&str>, use_context: bool) -> Result<PathBuf, CliError> {
    let (cfg, out) = setup(common)?;
    let scenes = cfg.load_scenes()?;
    let train_samples = match held_out {
        Some(name) => {
            find_scene(&scenes, name)?;
            fold_samples(&cfg, &scenes, name).map_err(runtime)?.0
        }
        None => {
            let all: Vec<TrajectorySample> = scenes.iter().flat_map(|s| build_samples(s, cfg.horizon, cfg.data.stride)).collect();
            subsample(&all, cfg.eval.max_train_samples)
        }
    };
    if train_samples.is_empty() {
        return Err(CliError::Usage("no training samples in the configured scenes".into()));
    }
    let contexts = Contexts::build(&scenes, cfg.record_window, cfg.map).map_err(runtime)?;
    let examples = contexts.examples(&train_samples, cfg.model.local_side).map_err(runtime)?;
    let opts = ModelOptions { use_context };
    eprintln!(
        "training on {} samples, {} epochs, context {}",
        examples.len(),
        cfg.train.epochs,
        if use_context { "on" } else { "off" }
    );
    let outcome = train(cfg.model, &examples, cfg.train, opts, |e| {
        if e.epoch % 50 == 0 {
            eprintln!("epoch {:>4}  loss {:.4}  mean error {:.4} m", e.epoch, e.loss, e.mean_displacement);
        }
    })
    .map_err(runtime)?;
    let hash = cfg.hash();
    let tag = checkpoint_name(held_out, use_context);
    let mut ck = Checkpoint::from_store(&outcome.params.store, &hash);
    ck.meta.insert("held_out".into(), held_out.unwrap_or("").into());
    ck.meta.insert("use_context".into(), use_context.to_string());
    ck.meta.insert("train_samples".into(), examples.len().to_string());
    ck.meta.insert("seed".into(), cfg.train.seed.to_string());
    let ck_path = out.join(&tag);
    ck.save(&ck_path).map_err(runtime)?;
    let loss_path = out.join(tag.replace(".ckpt.json", ".loss.csv"));
    let mut w = BufWriter::new(fs::File::create(&loss_path).map_err(runtime)?);
    writeln!(w, "epoch,loss,mean_displacement").map_err(runtime)?;
    for e in &outcome.losses {
        writeln!(w, "{},{},{}", e.epoch, e.loss, e.mean_displacement).map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    eprintln!("wrote {} and {}", ck_path.display(), loss_path.display());
    Ok(ck_path)
}

fn load_model(cfg: &RunConfig, path: &Path) -> Result<(ModelParams, Checkpoint), CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("checkpoint not found: {}", path.display())));
    }
    let ck = Checkpoint::load(path).map_err(runtime)?;
    let params = ModelParams::from_checkpoint(cfg.model, &ck).map_err(runtime)?;
    Ok((params, ck))
}

#[derive(Debug, Serialize)]
struct PredictionRow<'a> {
    config_hash: &'a str,
    scene: &'a str,
    agent_id: i64,
    t0: i64,
    social: bool,
    points: &'a [crate::ingest::TrajPoint],
    preliminary: &'a [crate::ingest::TrajPoint],
    updates: usize,
}

/// Returns the predictions path.
pub fn cmd_predict(
    common: &Common,
    checkpoint: &Path,
    scene_name: &str,
    use_social: bool,
    use_context: bool,
    render: bool,
    limit: Option<usize>,
) -> Result<PathBuf, CliError> {
    let (cfg, out) = setup(common)?;
    let scenes = cfg.load_scenes()?;
    let scene = find_scene(&scenes, scene_name)?;
    let (params, ck) = load_model(&cfg, checkpoint)?;
    let use_context = use_context && ck.meta.get("use_context").map(String::as_str) != Some("false");
    let mut samples = build_samples(scene, cfg.horizon, cfg.data.stride);
    if let Some(n) = limit {
        samples.truncate(n);
    }
    let contexts = Contexts::build(std::slice::from_ref(scene), cfg.record_window, cfg.map).map_err(runtime)?;
    let social = use_social.then_some(&cfg.social);
    let forecasts = forecast(&params, &contexts, &samples, ModelOptions { use_context }, social).map_err(runtime)?;
    let hash = cfg.hash();
    let path = out.join(format!("predictions-{scene_name}.jsonl"));
    let mut w = BufWriter::new(fs::File::create(&path).map_err(runtime)?);
    for f in &forecasts {
        let row = PredictionRow {
            config_hash: &hash,
            scene: &f.scene,
            agent_id: f.agent_id,
            t0: f.t0,
            social: use_social,
            points: &f.refined,
            preliminary: &f.preliminary,
            updates: f.updates,
        };
        serde_json::to_writer(&mut w, &row).map_err(runtime)?;
        w.write_all(b"\n").map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    if render {
        let dir = out.join("renders");
        fs::create_dir_all(&dir).map_err(runtime)?;
        let ctx = &contexts.scenes[scene_name];
        for (s, f) in samples.iter().zip(&forecasts) {
            let map = match ctx.window_for(s) {
                Some(i) => ctx.maps[i].clone(),
                None => GuidanceMap::empty(ctx.spec),
            };
            let img = trajectory_image(
                &map,
                &[
                    (&s.observed, [255, 255, 255]),
                    (&s.ground_truth, [0, 200, 0]),
                    (&f.preliminary, [60, 120, 255]),
                    (&f.refined, [255, 40, 40]),
                ],
                4,
            );
            let p = dir.join(format!("{scene_name}-{}-{}.png", s.agent_id, s.t0));
            write_png(&img, &p, &[(PNG_HASH_KEY, &hash)]).map_err(runtime)?;
        }
    }
    eprintln!("wrote {} forecasts to {}", forecasts.len(), path.display());
    Ok(path)
}

/// Writes `report.json`, `report.txt` and `errors.csv` (and the
/// record-period experiment with `dynamic`). Returns the report path.
pub fn cmd_eval(common: &Common, dir: &Path, only_no_social: bool, only_no_context: bool, dynamic: bool) -> Result<PathBuf, CliError> {
    let (cfg, out) = setup(common)?;
    let scenes = cfg.load_scenes()?;
    for s in &scenes {
        for ctx in [true, false] {
            let p = dir.join(checkpoint_name(Some(&s.name), ctx));
            if !p.exists() {
                return Err(CliError::Usage(format!("checkpoint not found: {}", p.display())));
            }
        }
    }
    let mut source = |held_out: &str, ctx: bool| -> Result<ModelParams, EvalError> {
        let ck = Checkpoint::load(&dir.join(checkpoint_name(Some(held_out), ctx))).map_err(|e| EvalError::Other(e.to_string()))?;
        Ok(ModelParams::from_checkpoint(cfg.model, &ck)?)
    };
    let mut report = run_benchmark(&cfg, &scenes, &mut source).map_err(runtime)?;
    if only_no_social || only_no_context {
        use crate::eval::Variant;
        report.reports.retain(|r| {
            (only_no_social && r.variant == Variant::NoSocial) || (only_no_context && r.variant == Variant::NoContext)
        });
    }
    let path = out.join("report.json");
    write_json(&path, &report)?;
    fs::write(out.join("report.txt"), report.to_text()).map_err(runtime)?;
    let mut w = BufWriter::new(fs::File::create(out.join("errors.csv")).map_err(runtime)?);
    for (i, r) in report.reports.iter().enumerate() {
        let mut buf = Vec::new();
        r.write_csv(&mut buf).map_err(runtime)?;
        let text = String::from_utf8(buf).expect("utf8");
        let body = if i == 0 { text.as_str() } else { text.split_once('\n').map_or("", |x| x.1) };
        w.write_all(body.as_bytes()).map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    print!("{}", report.to_text());
    if dynamic {
        let name = &cfg.eval.dynamic_scene;
        let scene = find_scene(&scenes, name)?;
        let (params, _) = load_model(&cfg, &dir.join(checkpoint_name(Some(name), true)))?;
        let d = dynamic_map_experiment(&cfg, scene, &params).map_err(runtime)?;
        write_json(&out.join("dynamic.json"), &d)?;
        fs::write(out.join("dynamic.txt"), d.to_text()).map_err(runtime)?;
        print!("{}", d.to_text());
    }
    Ok(path)
}

/// Guidance map per saved window (PNG and CSV); with a checkpoint, the
/// energy field of every agent in the first multi-agent start frame.
/// Returns the written PNG paths.
pub fn cmd_render(common: &Common, scene_name: &str, checkpoint: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let (cfg, out) = setup(common)?;
    let scenes = cfg.load_scenes()?;
    let scene = find_scene(&scenes, scene_name)?;
    let hash = cfg.hash();
    let tag = [(PNG_HASH_KEY, hash.as_str())];
    let ctx = SceneContext::build(scene, cfg.record_window, cfg.map).map_err(runtime)?;
    let dir = out.join("renders");
    fs::create_dir_all(&dir).map_err(runtime)?;
    let mut written = Vec::new();
    for (i, map) in ctx.maps.iter().enumerate() {
        let p = dir.join(format!("{scene_name}-window{i}.png"));
        write_png(&to_image(map, 2), &p, &tag).map_err(runtime)?;
        dump_csv(map, &p.with_extension("csv")).map_err(runtime)?;
        written.push(p);
    }
    if let Some(ckp) = checkpoint {
        let (params, _) = load_model(&cfg, ckp)?;
        let samples = build_samples(scene, cfg.horizon, cfg.data.stride);
        let Some(t0) = samples
            .iter()
            .map(|s| s.t0)
            .find(|&t| samples.iter().filter(|s| s.t0 == t).count() >= 2)
        else {
            return Ok(written);
        };
        let group: Vec<TrajectorySample> = samples.into_iter().filter(|s| s.t0 == t0).collect();
        let contexts = Contexts {
            scenes: [(scene_name.to_string(), ctx)].into_iter().collect(),
        };
        let prelim = forecast(&params, &contexts, &group, ModelOptions::default(), None).map_err(runtime)?;
        let agents: Vec<AgentState> = group
            .iter()
            .zip(&prelim)
            .map(|(s, f)| AgentState {
                agent_id: s.agent_id,
                displacement: observed_displacement(&s.observed),
                prediction: f.preliminary.clone(),
            })
            .collect();
        for a in &agents {
            let nb = NeighborSet::excluding(&agents, a.agent_id);
            let spec = field_spec(a, &nb, &cfg.social).map_err(runtime)?;
            let field = build_energy_field(a, &nb, &cfg.social, &spec).map_err(runtime)?;
            let p = dir.join(format!("{scene_name}-field-{t0}-{}.png", a.agent_id));
            write_png(&to_image(&field, 3), &p, &tag).map_err(runtime)?;
            written.push(p);
        }
    }
    eprintln!("wrote {} images under {}", written.len(), dir.display());
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyOutcome {
    pub checked: usize,
    /// Files whose hash is absent or differs.
    pub failures: Vec<(PathBuf, String)>,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Checks JSON, JSON-lines and PNG artifacts under `dir` against `hash`.
pub fn verify_dir(dir: &Path, hash: &str) -> std::io::Result<VerifyOutcome> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    let mut outcome = VerifyOutcome {
        checked: 0,
        failures: Vec::new(),
    };
    let json_hash = |v: &serde_json::Value| v.get("config_hash").and_then(|h| h.as_str()).map(str::to_string);
    for path in files {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let found: Vec<Option<String>> = match ext {
            "json" => {
                let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path)?).unwrap_or_default();
                vec![json_hash(&v)]
            }
            "jsonl" => fs::read_to_string(&path)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| json_hash(&serde_json::from_str(l).unwrap_or_default()))
                .collect(),
            "png" => vec![png_text(&path)?.into_iter().find(|(k, _)| k == PNG_HASH_KEY).map(|(_, v)| v)],
            _ => continue,
        };
        outcome.checked += 1;
        if let Some(bad) = found.iter().find(|h| h.as_deref() != Some(hash)) {
            let why = match bad {
                None => "no configuration hash".to_string(),
                Some(h) => format!("hash {h}"),
            };
            outcome.failures.push((path, why));
        }
    }
    Ok(outcome)
}

pub fn cmd_verify(common: &Common) -> Result<VerifyOutcome, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    let dir = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("no such directory: {}", dir.display())));
    }
    let hash = cfg.hash();
    let outcome = verify_dir(&dir, &hash).map_err(runtime)?;
    for (p, why) in &outcome.failures {
        eprintln!("MISMATCH {}: {why}", p.display());
    }
    println!("checked {} artifacts against {hash}: {} mismatched", outcome.checked, outcome.failures.len());
    if outcome.failures.is_empty() {
        Ok(outcome)
    } else {
        Err(CliError::Runtime(format!("{} artifacts do not match the configuration", outcome.failures.len())))
    }
}
