//! Synthetic crowd scenes in the five-scene layout of the usual benchmark.
//!
//! Agents follow waypoint routes at a personal preferred speed, steer
//! smoothly, and give way to each other with a short-range push. Route
//! popularity changes every `phase_slots` slots, so the guidance map of one
//! period differs from the next.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{AgentTrack, Scene, TrajPoint};

pub const BENCHMARK_SCENES: [&str; 5] = ["eth", "hotel", "zara1", "zara2", "univ"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Walkway with a bend and a side exit.
    Corridor,
    /// Two-way sidewalk with a stop people turn into.
    Sidewalk,
    /// Street passing a shop door.
    Storefront,
    /// Open square with crossing flows.
    Plaza,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub name: String,
    pub layout: Layout,
    pub seed: u64,
    /// Number of annotated time slots.
    pub slots: usize,
    /// Frame-id increment per slot.
    pub frame_step: i64,
    pub frame_interval_s: f64,
    /// Expected new agents per slot.
    pub spawn_rate: f64,
    /// Slots between changes of route popularity.
    pub phase_slots: usize,
    /// Preferred speed range in m/s.
    pub speed: (f64, f64),
}

impl SynthConfig {
    pub fn new(name: &str, layout: Layout, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            layout,
            seed,
            slots: 400,
            frame_step: 10,
            frame_interval_s: 0.4,
            spawn_rate: 0.2,
            phase_slots: 100,
            speed: (0.9, 1.6),
        }
    }

    /// Preset for one of [`BENCHMARK_SCENES`].
    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        let (layout, rate, salt) = match name {
            "eth" => (Layout::Corridor, 0.16, 1),
            "hotel" => (Layout::Sidewalk, 0.2, 2),
            "zara1" => (Layout::Storefront, 0.22, 3),
            "zara2" => (Layout::Storefront, 0.3, 4),
            "univ" => (Layout::Plaza, 0.3, 5),
            _ => return None,
        };
        let mut c = Self::new(name, layout, seed.wrapping_mul(0x9e37_79b9).wrapping_add(salt));
        c.spawn_rate = rate;
        Some(c)
    }
}

fn pt(x: f64, y: f64) -> TrajPoint {
    TrajPoint::new(x, y)
}

fn reversed(route: &[TrajPoint]) -> Vec<TrajPoint> {
    route.iter().rev().copied().collect()
}

/// Waypoint routes of a layout; `variant` shifts the door/stop location.
pub fn routes(layout: Layout, variant: u64) -> Vec<Vec<TrajPoint>> {
    let shift = (variant % 3) as f64;
    match layout {
        Layout::Corridor => {
            let main = vec![pt(0.0, 4.0), pt(5.0, 4.5), pt(8.0, 6.5), pt(11.0, 8.5), pt(16.0, 9.0)];
            let side = vec![pt(0.0, 4.5), pt(5.0, 5.0), pt(8.0, 7.0), pt(9.0, 11.0), pt(9.5, 15.0)];
            vec![main.clone(), reversed(&main), side.clone(), reversed(&side)]
        }
        Layout::Sidewalk => {
            let east = vec![pt(2.0, 0.0), pt(2.2, 8.0), pt(2.0, 16.0)];
            let west = vec![pt(3.5, 16.0), pt(3.3, 8.0), pt(3.5, 0.0)];
            let stop = vec![pt(2.0, 0.0), pt(2.4, 5.0), pt(4.5, 7.5), pt(8.0, 8.0)];
            let from_stop = vec![pt(8.0, 9.0), pt(4.5, 9.5), pt(3.3, 12.0), pt(3.5, 16.0)];
            vec![east, west, stop, from_stop]
        }
        Layout::Storefront => {
            let door = pt(0.5, 7.0 + shift);
            let street_e = vec![pt(5.0, 0.0), pt(5.3, 8.0), pt(5.0, 16.0)];
            let street_w = vec![pt(6.5, 16.0), pt(6.2, 8.0), pt(6.5, 0.0)];
            let enter = vec![pt(5.0, 0.0), pt(4.0, 4.0 + shift), pt(2.0, 6.0 + shift), door];
            let leave = vec![door, pt(2.0, 8.0 + shift), pt(4.5, 10.5 + shift), pt(6.5, 16.0)];
            vec![street_e, street_w, enter, leave]
        }
        Layout::Plaza => {
            let a = vec![pt(0.0, 0.0), pt(6.0, 4.0), pt(10.0, 10.0), pt(16.0, 16.0)];
            let b = vec![pt(16.0, 0.0), pt(10.0, 4.5), pt(6.0, 10.0), pt(0.0, 16.0)];
            let c = vec![pt(0.0, 8.0), pt(5.0, 10.0), pt(11.0, 10.0), pt(16.0, 8.0)];
            let d = vec![pt(8.0, 0.0), pt(9.5, 6.0), pt(7.0, 11.0), pt(8.0, 16.0)];
            vec![a.clone(), reversed(&a), b.clone(), reversed(&b), c.clone(), reversed(&c), d.clone(), reversed(&d)]
        }
    }
}

struct Walker {
    id: i64,
    route: usize,
    next: usize,
    pos: TrajPoint,
    vel: TrajPoint,
    speed: f64,
    frames: Vec<(i64, TrajPoint)>,
}

fn pick_route(rng: &mut ChaCha8Rng, n: usize, phase: usize) -> usize {
    // the favoured pair of routes rotates every phase
    let weights: Vec<f64> = (0..n)
        .map(|r| if (r / 2 + phase) % (n / 2).max(1) == 0 { 4.0 } else { 1.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (r, w) in weights.iter().enumerate() {
        if u < *w {
            return r;
        }
        u -= w;
    }
    n - 1
}

pub fn generate(config: &SynthConfig) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let routes = routes(config.layout, config.seed);
    let dt = config.frame_interval_s;
    let mut active: Vec<Walker> = Vec::new();
    let mut done: Vec<AgentTrack> = Vec::new();
    let mut next_id = 1i64;
    for slot in 0..config.slots {
        let frame = slot as i64 * config.frame_step;
        let phase = slot / config.phase_slots.max(1);
        let mut spawn = config.spawn_rate;
        while spawn > 0.0 {
            if rng.gen_bool(spawn.min(1.0)) {
                let route = pick_route(&mut rng, routes.len(), phase);
                let jitter = pt(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4));
                active.push(Walker {
                    id: next_id,
                    route,
                    next: 1,
                    pos: routes[route][0] + jitter,
                    vel: TrajPoint::default(),
                    speed: rng.gen_range(config.speed.0..config.speed.1),
                    frames: Vec::new(),
                });
                next_id += 1;
            }
            spawn -= 1.0;
        }
        let snapshot: Vec<TrajPoint> = active.iter().map(|w| w.pos).collect();
        for (k, w) in active.iter_mut().enumerate() {
            w.frames.push((frame, w.pos));
            let route = &routes[w.route];
            if w.next < route.len() - 1 && w.pos.dist(route[w.next]) < 1.0 {
                w.next += 1;
            }
            let to = route[w.next] - w.pos;
            let dist = to.norm().max(1e-9);
            let desired = to * (w.speed / dist);
            let mut push = TrajPoint::default();
            for (j, &o) in snapshot.iter().enumerate() {
                let d = w.pos - o;
                let n = d.norm();
                if j != k && n < 1.2 && n > 1e-9 {
                    push = push + d * ((1.2 - n) / n * 0.8);
                }
            }
            let noise = pt(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
            w.vel = w.vel * 0.6 + (desired + push) * 0.4 + noise;
            w.pos = w.pos + w.vel * dt;
        }
        let (finished, still): (Vec<Walker>, Vec<Walker>) = active.into_iter().partition(|w| {
            let route = &routes[w.route];
            w.next == route.len() - 1 && w.pos.dist(route[w.next]) < 0.5
        });
        active = still;
        done.extend(finished.into_iter().map(|w| AgentTrack {
            agent_id: w.id,
            frames: w.frames,
        }));
    }
    done.extend(active.into_iter().map(|w| AgentTrack {
        agent_id: w.id,
        frames: w.frames,
    }));
    done.retain(|t| !t.frames.is_empty());
    done.sort_by_key(|t| t.agent_id);
    let mut scene = Scene::from_tracks(&config.name, done);
    scene.frame_interval_s = config.frame_interval_s;
    scene
}

/// The five benchmark scenes from one seed.
pub fn benchmark_scenes(seed: u64) -> Vec<Scene> {
    BENCHMARK_SCENES
        .iter()
        .map(|name| generate(&SynthConfig::preset(name, seed).expect("known preset")))
        .collect()
}

/// `n` agents walking straight lines at constant speed, all present for
/// `slots` slots. Handy for smoke runs.
pub fn linear_scene(name: &str, n: usize, slots: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tracks = (0..n)
        .map(|i| {
            let start = pt(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0));
            let heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let step = pt(heading.cos(), heading.sin()) * rng.gen_range(0.2..0.6);
            AgentTrack {
                agent_id: i as i64 + 1,
                frames: (0..slots).map(|t| (t as i64 * 10, start + step * t as f64)).collect(),
            }
        })
        .collect();
    Scene::from_tracks(name, tracks)
}
