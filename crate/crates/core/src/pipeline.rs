//! Scene-level glue: record windows and guidance maps per scene, local maps
//! per sample, and the two-stage forecast (network, then social refinement).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmap::{extract_local, rasterize, GridSpec, GuidanceMap, LocalMap, MapError};
use crate::ingest::{Scene, TrajPoint, TrajectorySample};
use crate::model::{ModelError, ModelInput, ModelOptions, ModelParams, TrainExample};
use crate::recwin::{WindowConfig, WindowError, WindowIndex};
use crate::social::{observed_displacement, refine_group, AgentState, SocialError, SocialParams};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Social(#[from] SocialError),
    #[error("local map side {got} does not match the model's {expected}")]
    MapSide { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    /// Metres per cell of the guidance map.
    pub resolution: f64,
    /// Half side `l` of the local crop in metres.
    pub half_side: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            resolution: crate::gmap::DEFAULT_RESOLUTION,
            half_side: crate::gmap::DEFAULT_HALF_SIDE,
        }
    }
}

/// Record windows and their rasterized guidance maps for one scene.
#[derive(Debug, Clone)]
pub struct SceneContext {
    pub name: String,
    pub spec: GridSpec,
    pub index: WindowIndex,
    /// One map per saved window, same order as `index.windows`.
    pub maps: Vec<GuidanceMap>,
    pub map_config: MapConfig,
}

impl SceneContext {
    pub fn build(scene: &Scene, window: WindowConfig, map_config: MapConfig) -> Result<Self, PipelineError> {
        let (lo, hi) = scene.bounds;
        let spec = GridSpec::covering(lo, hi, map_config.resolution, map_config.half_side)?;
        let index = WindowIndex::build(scene, window)?;
        let maps = index.windows.iter().map(|w| rasterize(&w.window, &spec)).collect();
        Ok(Self {
            name: scene.name.clone(),
            spec,
            index,
            maps,
            map_config,
        })
    }

    /// Window in force when the sample's prediction starts.
    pub fn window_for(&self, sample: &TrajectorySample) -> Option<usize> {
        self.index.lookup(sample.t1)
    }

    pub fn local_from(&self, map: &GuidanceMap, sample: &TrajectorySample) -> Result<LocalMap, PipelineError> {
        Ok(extract_local(map, sample.agent_id, sample.last_observed(), self.map_config.half_side)?)
    }

    /// Local map from the window in force, or `None` when no window has been
    /// saved before the sample (the network then sees an all-zero map).
    pub fn local_map(&self, sample: &TrajectorySample) -> Result<Option<LocalMap>, PipelineError> {
        match self.window_for(sample) {
            Some(i) => Ok(Some(self.local_from(&self.maps[i], sample)?)),
            None => Ok(None),
        }
    }

    pub fn model_input(&self, sample: &TrajectorySample, side: usize) -> Result<ModelInput, PipelineError> {
        let local = self.local_map(sample)?;
        if let Some(m) = &local {
            if m.side != side {
                return Err(PipelineError::MapSide {
                    expected: side,
                    got: m.side,
                });
            }
        }
        Ok(ModelInput::new(sample.observed.clone(), local.as_ref()))
    }
}

/// Contexts for several scenes, keyed by name.
#[derive(Debug, Clone, Default)]
pub struct Contexts {
    pub scenes: BTreeMap<String, SceneContext>,
}

impl Contexts {
    pub fn build(scenes: &[Scene], window: WindowConfig, map_config: MapConfig) -> Result<Self, PipelineError> {
        let mut out = BTreeMap::new();
        for s in scenes {
            out.insert(s.name.clone(), SceneContext::build(s, window, map_config)?);
        }
        Ok(Self { scenes: out })
    }

    pub fn inputs(&self, samples: &[TrajectorySample], side: usize) -> Result<Vec<ModelInput>, PipelineError> {
        samples
            .iter()
            .map(|s| match self.scenes.get(&s.scene) {
                Some(ctx) => ctx.model_input(s, side),
                None => Ok(ModelInput::new(s.observed.clone(), None)),
            })
            .collect()
    }

    pub fn examples(&self, samples: &[TrajectorySample], side: usize) -> Result<Vec<TrainExample>, PipelineError> {
        Ok(self
            .inputs(samples, side)?
            .into_iter()
            .zip(samples)
            .map(|(input, s)| TrainExample {
                input,
                truth: s.ground_truth.clone(),
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub scene: String,
    pub agent_id: i64,
    pub t0: i64,
    pub preliminary: Vec<TrajPoint>,
    /// Equal to `preliminary` when refinement is off.
    pub refined: Vec<TrajPoint>,
    /// Refinement updates applied.
    pub updates: usize,
}

impl Forecast {
    pub fn final_points(&self) -> &[TrajPoint] {
        &self.refined
    }
}

/// Social refinement of a batch of preliminary forecasts. Agents sharing a
/// scene and start frame are each other's neighbours.
pub fn refine_forecasts(
    samples: &[TrajectorySample],
    preliminary: Vec<Vec<TrajPoint>>,
    social: Option<&SocialParams>,
) -> Result<Vec<Forecast>, PipelineError> {
    let mut out: Vec<Forecast> = samples
        .iter()
        .zip(preliminary)
        .map(|(s, p)| Forecast {
            scene: s.scene.clone(),
            agent_id: s.agent_id,
            t0: s.t0,
            refined: p.clone(),
            preliminary: p,
            updates: 0,
        })
        .collect();
    let Some(params) = social else {
        return Ok(out);
    };
    params.validate()?;
    let mut groups: BTreeMap<(&str, i64), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry((s.scene.as_str(), s.t0)).or_default().push(i);
    }
    for members in groups.values() {
        let agents: Vec<AgentState> = members
            .iter()
            .map(|&i| AgentState {
                agent_id: samples[i].agent_id,
                displacement: observed_displacement(&samples[i].observed),
                prediction: out[i].preliminary.clone(),
            })
            .collect();
        for (&i, r) in members.iter().zip(refine_group(&agents, params)?) {
            out[i].refined = r.points;
            out[i].updates = r.updates;
        }
    }
    Ok(out)
}

/// Network forecast followed by optional social refinement.
pub fn forecast(
    params: &ModelParams,
    contexts: &Contexts,
    samples: &[TrajectorySample],
    opts: ModelOptions,
    social: Option<&SocialParams>,
) -> Result<Vec<Forecast>, PipelineError> {
    let inputs = contexts.inputs(samples, params.config.local_side)?;
    let preliminary = params.predict_batch(&inputs, opts)?;
    refine_forecasts(samples, preliminary, social)
}
