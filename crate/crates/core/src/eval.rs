//! Displacement metrics, the least-squares linear baseline, leave-one-out
//! benchmarking with ablations, and the record-period experiment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::ingest::{build_samples, Scene, TrajPoint, TrajectorySample};
use crate::model::{ModelError, ModelInput, ModelOptions, ModelParams};
use crate::pipeline::{forecast, refine_forecasts, Contexts, Forecast, PipelineError, SceneContext};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction has {pred} points, truth has {truth}")]
    Length { pred: usize, truth: usize },
    #[error("empty trajectory")]
    Empty,
    #[error("scene {0} not loaded")]
    MissingScene(String),
    #[error("scene {scene} has {found} usable record periods, need 3")]
    InsufficientWindows { scene: String, found: usize },
    #[error("no test samples for scene {0}")]
    NoSamples(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Other(String),
}

/// Mean Euclidean distance over the horizon.
pub fn ade(pred: &[TrajPoint], truth: &[TrajPoint]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::Length {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let sum: f64 = pred.iter().zip(truth).map(|(a, b)| a.dist(*b)).sum();
    Ok(sum / pred.len() as f64)
}

/// Euclidean distance at the last step.
pub fn fde(pred: &[TrajPoint], truth: &[TrajPoint]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::Length {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    match (pred.last(), truth.last()) {
        (Some(a), Some(b)) => Ok(a.dist(*b)),
        _ => Err(EvalError::Empty),
    }
}

/// Least-squares line per coordinate over the observation (time index
/// `0..t_obs`), extrapolated to `t_obs..t_obs + t_pred`.
pub fn linear_baseline(observed: &[TrajPoint], t_pred: usize) -> Vec<TrajPoint> {
    let n = observed.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![observed[0]; t_pred];
    }
    let nf = n as f64;
    let t_mean = (nf - 1.0) / 2.0;
    let mean = observed.iter().fold(TrajPoint::default(), |a, &p| a + p) * (1.0 / nf);
    let mut sxx = 0.0;
    let mut sxy = TrajPoint::default();
    for (t, &p) in observed.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxx += dt * dt;
        sxy = sxy + (p - mean) * dt;
    }
    let slope = sxy * (1.0 / sxx);
    (0..t_pred)
        .map(|k| mean + slope * ((n + k) as f64 - t_mean))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoSocial,
    NoContext,
    Linear,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoSocial, Variant::NoContext, Variant::Linear];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSocial => "no-social",
            Variant::NoContext => "no-context",
            Variant::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub scene: String,
    pub agent_id: i64,
    pub t0: i64,
    pub ade: f64,
    pub fde: f64,
}

pub fn sample_errors(samples: &[TrajectorySample], preds: &[&[TrajPoint]]) -> Result<Vec<SampleError>, EvalError> {
    samples
        .iter()
        .zip(preds)
        .map(|(s, p)| {
            Ok(SampleError {
                scene: s.scene.clone(),
                agent_id: s.agent_id,
                t0: s.t0,
                ade: ade(p, &s.ground_truth)?,
                fde: fde(p, &s.ground_truth)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub scene: String,
    pub ade: f64,
    pub fde: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variant: Variant,
    pub config_hash: String,
    pub scenes: Vec<SceneMetrics>,
    /// Unweighted mean of the per-scene values.
    pub mean_ade: f64,
    pub mean_fde: f64,
    /// Mean over all samples.
    pub weighted_ade: f64,
    pub weighted_fde: f64,
    pub samples: usize,
    pub per_sample: Vec<SampleError>,
}

impl MetricReport {
    /// Groups errors by scene in order of first appearance.
    pub fn from_errors(variant: Variant, config_hash: &str, per_sample: Vec<SampleError>) -> Self {
        let mut order: Vec<String> = Vec::new();
        let mut acc: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
        for e in &per_sample {
            let entry = acc.entry(e.scene.clone()).or_insert_with(|| {
                order.push(e.scene.clone());
                (0.0, 0.0, 0)
            });
            entry.0 += e.ade;
            entry.1 += e.fde;
            entry.2 += 1;
        }
        let scenes: Vec<SceneMetrics> = order
            .iter()
            .map(|name| {
                let (a, f, n) = acc[name];
                SceneMetrics {
                    scene: name.clone(),
                    ade: a / n as f64,
                    fde: f / n as f64,
                    samples: n,
                }
            })
            .collect();
        let k = scenes.len().max(1) as f64;
        let n = per_sample.len().max(1) as f64;
        Self {
            variant,
            config_hash: config_hash.to_string(),
            mean_ade: scenes.iter().map(|s| s.ade).sum::<f64>() / k,
            mean_fde: scenes.iter().map(|s| s.fde).sum::<f64>() / k,
            weighted_ade: per_sample.iter().map(|e| e.ade).sum::<f64>() / n,
            weighted_fde: per_sample.iter().map(|e| e.fde).sum::<f64>() / n,
            samples: per_sample.len(),
            scenes,
            per_sample,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "variant,scene,agent_id,t0,ade,fde")?;
        for e in &self.per_sample {
            writeln!(w, "{},{},{},{},{},{}", self.variant.name(), e.scene, e.agent_id, e.t0, e.ade, e.fde)?;
        }
        Ok(())
    }
}

/// Reads the per-sample CSV written by [`MetricReport::write_csv`].
pub fn read_error_csv(text: &str) -> Result<Vec<SampleError>, EvalError> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || EvalError::Other(format!("bad error row: {line}"));
            if f.len() != 6 {
                return Err(bad());
            }
            Ok(SampleError {
                scene: f[1].to_string(),
                agent_id: f[2].parse().map_err(|_| bad())?,
                t0: f[3].parse().map_err(|_| bad())?,
                ade: f[4].parse().map_err(|_| bad())?,
                fde: f[5].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config_hash: String,
    pub reports: Vec<MetricReport>,
}

impl BenchmarkReport {
    pub fn get(&self, v: Variant) -> Option<&MetricReport> {
        self.reports.iter().find(|r| r.variant == v)
    }

    /// ADE/FDE table, one row per variant and one column per scene.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let Some(first) = self.reports.first() else {
            return s;
        };
        let _ = write!(s, "{:<12}", "variant");
        for sc in &first.scenes {
            let _ = write!(s, "{:>14}", sc.scene);
        }
        let _ = writeln!(s, "{:>14}{:>14}", "average", "weighted");
        for r in &self.reports {
            let _ = write!(s, "{:<12}", r.variant.name());
            for sc in &r.scenes {
                let _ = write!(s, "{:>14}", format!("{:.3}/{:.3}", sc.ade, sc.fde));
            }
            let _ = writeln!(
                s,
                "{:>14}{:>14}",
                format!("{:.3}/{:.3}", r.mean_ade, r.mean_fde),
                format!("{:.3}/{:.3}", r.weighted_ade, r.weighted_fde)
            );
        }
        let _ = writeln!(s, "samples per scene: {}", first.scenes.iter().map(|x| format!("{}={}", x.scene, x.samples)).collect::<Vec<_>>().join(" "));
        let _ = writeln!(s, "config {}", self.config_hash);
        s
    }
}

/// Deterministic evenly spaced subset of at most `cap` items (all when 0).
pub fn subsample<T: Clone>(items: &[T], cap: usize) -> Vec<T> {
    if cap == 0 || items.len() <= cap {
        return items.to_vec();
    }
    (0..cap).map(|k| items[k * items.len() / cap].clone()).collect()
}

/// Train and test samples of one leave-one-out fold.
pub fn fold_samples(cfg: &RunConfig, scenes: &[Scene], held_out: &str) -> Result<(Vec<TrajectorySample>, Vec<TrajectorySample>), EvalError> {
    let (train, test) = crate::ingest::split_leave_one_out(scenes, held_out, cfg.horizon, cfg.data.stride)
        .map_err(|e| EvalError::Other(e.to_string()))?;
    Ok((subsample(&train, cfg.eval.max_train_samples), test))
}

/// Forecasts of every variant for one fold's test samples.
#[derive(Debug, Clone)]
pub struct FoldForecasts {
    pub full: Vec<Forecast>,
    pub no_context: Vec<Forecast>,
    pub linear: Vec<Vec<TrajPoint>>,
}

/// `full` feeds both the full and the no-social variants (the latter is the
/// same forecast before refinement). `no_context` is a model trained with the
/// context branch disabled.
pub fn evaluate_fold(
    cfg: &RunConfig,
    contexts: &Contexts,
    test: &[TrajectorySample],
    full: &ModelParams,
    no_context: &ModelParams,
) -> Result<FoldForecasts, EvalError> {
    let social = Some(&cfg.social);
    Ok(FoldForecasts {
        full: forecast(full, contexts, test, ModelOptions { use_context: true }, social)?,
        no_context: forecast(no_context, contexts, test, ModelOptions { use_context: false }, social)?,
        linear: test
            .iter()
            .map(|s| linear_baseline(&s.observed, cfg.horizon.t_pred))
            .collect(),
    })
}

pub fn variant_errors(test: &[TrajectorySample], f: &FoldForecasts, v: Variant) -> Result<Vec<SampleError>, EvalError> {
    let preds: Vec<&[TrajPoint]> = match v {
        Variant::Full => f.full.iter().map(|x| x.refined.as_slice()).collect(),
        Variant::NoSocial => f.full.iter().map(|x| x.preliminary.as_slice()).collect(),
        Variant::NoContext => f.no_context.iter().map(|x| x.refined.as_slice()).collect(),
        Variant::Linear => f.linear.iter().map(|x| x.as_slice()).collect(),
    };
    sample_errors(test, &preds)
}

/// Source of fold models: `(held_out, use_context)` to parameters. The CLI
/// loads checkpoints; tests train in place.
pub trait ModelSource {
    fn model(&mut self, held_out: &str, use_context: bool) -> Result<ModelParams, EvalError>;
}

impl<F> ModelSource for F
where
    F: FnMut(&str, bool) -> Result<ModelParams, EvalError>,
{
    fn model(&mut self, held_out: &str, use_context: bool) -> Result<ModelParams, EvalError> {
        self(held_out, use_context)
    }
}

/// Leave-one-out over every loaded scene, all four variants.
pub fn run_benchmark(cfg: &RunConfig, scenes: &[Scene], models: &mut dyn ModelSource) -> Result<BenchmarkReport, EvalError> {
    let contexts = Contexts::build(scenes, cfg.record_window, cfg.map)?;
    let mut errors: BTreeMap<Variant, Vec<SampleError>> = BTreeMap::new();
    for scene in scenes {
        let (_, test) = fold_samples(cfg, scenes, &scene.name)?;
        if test.is_empty() {
            return Err(EvalError::NoSamples(scene.name.clone()));
        }
        let full = models.model(&scene.name, true)?;
        let no_ctx = models.model(&scene.name, false)?;
        let f = evaluate_fold(cfg, &contexts, &test, &full, &no_ctx)?;
        for v in Variant::ALL {
            errors.entry(v).or_default().extend(variant_errors(&test, &f, v)?);
        }
    }
    let hash = cfg.hash();
    Ok(BenchmarkReport {
        reports: errors
            .into_iter()
            .map(|(v, e)| MetricReport::from_errors(v, &hash, e))
            .collect(),
        config_hash: hash,
    })
}

/// Test sets of the three record periods against the maps of all three.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicMapReport {
    pub scene: String,
    pub config_hash: String,
    /// Frame at which each period's window was saved, and its first/last frame.
    pub saved_at: [i64; 3],
    pub frames: [(i64, i64); 3],
    pub test_counts: [usize; 3],
    /// `ade[row][col]`: test set `row` evaluated with the map of period `col`.
    pub ade: [[f64; 3]; 3],
    pub fde: [[f64; 3]; 3],
    /// Diagonal entry is the smallest in its column (ADE).
    pub diagonal_min_by_column: [bool; 3],
    /// Diagonal entry is the smallest in its row (ADE): each test set does
    /// best with its own period's map.
    pub diagonal_min_by_row: [bool; 3],
}

impl DynamicMapReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("record-period experiment on {}\n", self.scene);
        let _ = writeln!(s, "{:<10}{:>16}{:>16}{:>16}", "test\\map", "M(a)", "M(b)", "M(c)");
        for (r, name) in ["X(a)", "X(b)", "X(c)"].iter().enumerate() {
            let _ = write!(s, "{:<10}", format!("{name} n={}", self.test_counts[r]));
            for c in 0..3 {
                let _ = write!(s, "{:>16}", format!("{:.3}/{:.3}", self.ade[r][c], self.fde[r][c]));
            }
            s.push('\n');
        }
        let _ = writeln!(s, "diagonal minimal by column: {:?}", self.diagonal_min_by_column);
        let _ = writeln!(s, "diagonal minimal by row:    {:?}", self.diagonal_min_by_row);
        let _ = writeln!(s, "config {}", self.config_hash);
        s
    }
}

/// Picks the first three saved windows that each have test samples (samples
/// whose prediction starts while that window is in force), then evaluates
/// every test set with every window's map.
pub fn dynamic_map_experiment(cfg: &RunConfig, scene: &Scene, params: &ModelParams) -> Result<DynamicMapReport, EvalError> {
    let ctx = SceneContext::build(scene, cfg.record_window, cfg.map)?;
    let samples = build_samples(scene, cfg.horizon, cfg.data.stride);
    let mut sets: Vec<(usize, Vec<TrajectorySample>)> = Vec::new();
    for w in 0..ctx.index.len() {
        let set: Vec<TrajectorySample> = samples.iter().filter(|s| ctx.window_for(s) == Some(w)).cloned().collect();
        if !set.is_empty() {
            sets.push((w, set));
        }
    }
    if sets.len() < 3 {
        return Err(EvalError::InsufficientWindows {
            scene: scene.name.clone(),
            found: sets.len(),
        });
    }
    sets.truncate(3);
    let mut ade_m = [[0.0; 3]; 3];
    let mut fde_m = [[0.0; 3]; 3];
    let opts = ModelOptions { use_context: true };
    for (r, (_, set)) in sets.iter().enumerate() {
        for (c, (w, _)) in sets.iter().enumerate() {
            let map = &ctx.maps[*w];
            let inputs = set
                .iter()
                .map(|s| Ok(ModelInput::new(s.observed.clone(), Some(&ctx.local_from(map, s)?))))
                .collect::<Result<Vec<_>, PipelineError>>()?;
            let prelim = params.predict_batch(&inputs, opts)?;
            let out = refine_forecasts(set, prelim, Some(&cfg.social))?;
            let preds: Vec<&[TrajPoint]> = out.iter().map(|f| f.refined.as_slice()).collect();
            let errs = sample_errors(set, &preds)?;
            let n = errs.len() as f64;
            ade_m[r][c] = errs.iter().map(|e| e.ade).sum::<f64>() / n;
            fde_m[r][c] = errs.iter().map(|e| e.fde).sum::<f64>() / n;
        }
    }
    let by_col = std::array::from_fn(|c| (0..3).all(|r| ade_m[c][c] <= ade_m[r][c]));
    let by_row = std::array::from_fn(|r| (0..3).all(|c| ade_m[r][r] <= ade_m[r][c]));
    let window = |k: usize| &ctx.index.windows[sets[k].0];
    Ok(DynamicMapReport {
        scene: scene.name.clone(),
        config_hash: cfg.hash(),
        saved_at: std::array::from_fn(|k| window(k).saved_at),
        frames: std::array::from_fn(|k| {
            let f = &window(k).window.frames;
            (f.first().copied().unwrap_or(0), f.last().copied().unwrap_or(0))
        }),
        test_counts: std::array::from_fn(|k| sets[k].1.len()),
        ade: ade_m,
        fde: fde_m,
        diagonal_min_by_column: by_col,
        diagonal_min_by_row: by_row,
    })
}
