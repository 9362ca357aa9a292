//! Social-force crowd simulator for synthetic ground truth.
//!
//! Each agent accelerates towards its goal at its desired speed with
//! relaxation time `τ`, and is pushed away from other agents and from blocked
//! map cells by exponentially decaying forces. Integration is explicit Euler
//! with `substeps` steps per recorded sample.

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::scene::{AgentTrack, Scene, STEP_SECONDS, T_TOTAL};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::kv::KvFile;
use crate::scene::map::{ClassSet, StaticMap, BUILDING, SIDEWALK, VEGETATION};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForceParams {
    /// Relaxation time `τ` of the goal attraction, seconds.
    pub relaxation_time: f64,
    /// Agent repulsion `A·exp((r − d)/B)`: strength `A` (m/s²).
    pub agent_strength: f64,
    /// Agent repulsion range `B` (m).
    pub agent_range: f64,
    /// Agent contact distance `r` (sum of two body radii, m).
    pub agent_radius: f64,
    /// Obstacle repulsion `A_o·exp(−d/B_o)` from the nearest point of each
    /// blocked cell: strength `A_o`.
    pub obstacle_strength: f64,
    pub obstacle_range: f64,
    /// Blocked cells farther than this are ignored.
    pub obstacle_cutoff: f64,
    /// Speeds are clamped to this value after each substep.
    pub max_speed: f64,
}

impl Default for ForceParams {
    fn default() -> Self {
        ForceParams {
            relaxation_time: 0.5,
            agent_strength: 5.0,
            agent_range: 0.3,
            agent_radius: 0.6,
            obstacle_strength: 10.0,
            obstacle_range: 0.3,
            obstacle_cutoff: 1.5,
            max_speed: 2.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentSpec {
    pub position: Point,
    pub velocity: Point,
    pub goal: Point,
    pub desired_speed: f64,
}

/// Integrates `agents` and records `samples` positions (the first being the
/// start) every `dt` seconds.
pub fn simulate_agents(
    agents: &[AgentSpec],
    map: Option<&StaticMap>,
    blocked: ClassSet,
    forces: &ForceParams,
    dt: f64,
    substeps: usize,
    samples: usize,
) -> Vec<Vec<Point>> {
    let h = dt / substeps.max(1) as f64;
    let mut x: Vec<Point> = agents.iter().map(|a| a.position).collect();
    let mut v: Vec<Point> = agents.iter().map(|a| a.velocity).collect();
    let mut out: Vec<Vec<Point>> = x.iter().map(|&p| vec![p]).collect();
    let mut acc = vec![Point::ZERO; agents.len()];
    for _ in 1..samples {
        for _ in 0..substeps.max(1) {
            for (i, a) in agents.iter().enumerate() {
                acc[i] = acceleration(i, a, &x, &v, map, blocked, forces);
            }
            for i in 0..agents.len() {
                x[i] = x[i] + v[i] * h;
                v[i] = v[i] + acc[i] * h;
                let s = v[i].norm();
                if s > forces.max_speed {
                    v[i] = v[i] * (forces.max_speed / s);
                }
            }
        }
        for (o, &p) in out.iter_mut().zip(&x) {
            o.push(p);
        }
    }
    out
}

fn acceleration(
    i: usize,
    a: &AgentSpec,
    x: &[Point],
    v: &[Point],
    map: Option<&StaticMap>,
    blocked: ClassSet,
    f: &ForceParams,
) -> Point {
    let to_goal = a.goal - x[i];
    let dist = to_goal.norm();
    let desired = if dist > 1e-9 { to_goal * (a.desired_speed / dist) } else { Point::ZERO };
    let mut acc = (desired - v[i]) * (1.0 / f.relaxation_time);

    if f.agent_strength != 0.0 {
        for (j, &xj) in x.iter().enumerate() {
            if j == i {
                continue;
            }
            let d = x[i] - xj;
            let n = d.norm();
            if n > 0.0 {
                let mag = f.agent_strength * ((f.agent_radius - n) / f.agent_range).exp();
                acc = acc + d * (mag / n);
            }
        }
    }

    if let (Some(map), true) = (map, f.obstacle_strength != 0.0) {
        acc = acc + obstacle_force(x[i], map, blocked, f);
    }
    acc
}

fn obstacle_force(p: Point, map: &StaticMap, blocked: ClassSet, f: &ForceParams) -> Point {
    let cs = map.cell_size;
    let reach = (f.obstacle_cutoff / cs).ceil() as i64 + 1;
    let c0 = ((p.x - map.origin.x) / cs).floor() as i64;
    let r0 = ((p.y - map.origin.y) / cs).floor() as i64;
    let mut acc = Point::ZERO;
    for r in (r0 - reach).max(0)..(r0 + reach + 1).min(map.height as i64) {
        for c in (c0 - reach).max(0)..(c0 + reach + 1).min(map.width as i64) {
            if !blocked.contains(map.get(r as usize, c as usize)) {
                continue;
            }
            let lo = Point::new(map.origin.x + c as f64 * cs, map.origin.y + r as f64 * cs);
            let q = Point::new(p.x.clamp(lo.x, lo.x + cs), p.y.clamp(lo.y, lo.y + cs));
            let d = p - q;
            let n = d.norm();
            if n > f.obstacle_cutoff {
                continue;
            }
            let (dir, n) = if n > 1e-12 {
                (d * (1.0 / n), n)
            } else {
                // Inside the cell: push out from its center.
                let out = p - map.cell_center(r as usize, c as usize);
                let m = out.norm();
                if m < 1e-12 {
                    continue;
                }
                (out * (1.0 / m), 0.0)
            };
            acc = acc + dir * (f.obstacle_strength * (-n / f.obstacle_range).exp());
        }
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Two perpendicular corridors crossing between building blocks, with a
    /// random vegetation patch near the intersection in every scene.
    CrossingCorridor,
    /// Open ground; agents start on a circle and walk across it.
    OpenPlaza,
}

impl FromStr for Layout {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "crossing-corridor" => Ok(Layout::CrossingCorridor),
            "open-plaza" => Ok(Layout::OpenPlaza),
            _ => Err(()),
        }
    }
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::CrossingCorridor => "crossing-corridor",
            Layout::OpenPlaza => "open-plaza",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub layout: Layout,
    pub scenes: usize,
    pub min_agents: usize,
    pub max_agents: usize,
    /// Mean desired speed, m/s.
    pub desired_speed: f64,
    /// Standard deviation of the desired speed across agents.
    pub speed_spread: f64,
    pub forces: ForceParams,
    /// Seconds between recorded samples.
    pub dt: f64,
    pub substeps: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            layout: Layout::CrossingCorridor,
            scenes: 100,
            min_agents: 3,
            max_agents: 8,
            desired_speed: 1.3,
            speed_spread: 0.15,
            forces: ForceParams::default(),
            dt: STEP_SECONDS,
            substeps: 8,
            seed: 0,
        }
    }
}

/// Names accepted by [`SimConfig::preset`].
pub const PRESETS: [&str; 3] = ["crossing-corridor", "crossing-corridor-unsafe", "open-plaza"];

impl SimConfig {
    /// Built-in presets. The `-unsafe` variant disables all repulsion, so its
    /// agents walk through each other and through obstacles.
    pub fn preset(name: &str) -> Result<Self> {
        let base = SimConfig::default();
        match name {
            "crossing-corridor" => Ok(base),
            "crossing-corridor-unsafe" => Ok(SimConfig {
                forces: ForceParams { agent_strength: 0.0, obstacle_strength: 0.0, ..base.forces },
                ..base
            }),
            "open-plaza" => Ok(SimConfig { layout: Layout::OpenPlaza, ..base }),
            _ => Err(Error::Config(format!("unknown preset `{name}` (known: {})", PRESETS.join(", ")))),
        }
    }

    /// Reads a preset file. `preset = <name>` selects the base values, which
    /// the remaining keys override.
    pub fn from_kv(mut kv: KvFile) -> Result<Self> {
        let mut c = match kv.take::<String>("preset")? {
            Some(name) => SimConfig::preset(&name)?,
            None => SimConfig::default(),
        };
        if let Some(l) = kv.take::<String>("layout")? {
            c.layout = l.parse().map_err(|_| Error::Config(format!("unknown layout `{l}`")))?;
        }
        c.scenes = kv.take_or("scenes", c.scenes)?;
        c.min_agents = kv.take_or("min_agents", c.min_agents)?;
        c.max_agents = kv.take_or("max_agents", c.max_agents)?;
        c.desired_speed = kv.take_or("desired_speed", c.desired_speed)?;
        c.speed_spread = kv.take_or("speed_spread", c.speed_spread)?;
        let f = &mut c.forces;
        f.relaxation_time = kv.take_or("relaxation_time", f.relaxation_time)?;
        f.agent_strength = kv.take_or("agent_strength", f.agent_strength)?;
        f.agent_range = kv.take_or("agent_range", f.agent_range)?;
        f.agent_radius = kv.take_or("agent_radius", f.agent_radius)?;
        f.obstacle_strength = kv.take_or("obstacle_strength", f.obstacle_strength)?;
        f.obstacle_range = kv.take_or("obstacle_range", f.obstacle_range)?;
        f.obstacle_cutoff = kv.take_or("obstacle_cutoff", f.obstacle_cutoff)?;
        f.max_speed = kv.take_or("max_speed", f.max_speed)?;
        c.dt = kv.take_or("dt", c.dt)?;
        c.substeps = kv.take_or("substeps", c.substeps)?;
        c.seed = kv.take_or("seed", c.seed)?;
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }

    /// A built-in preset name or a preset file path.
    pub fn resolve(preset: &str) -> Result<Self> {
        if PRESETS.contains(&preset) {
            SimConfig::preset(preset)
        } else if Path::new(preset).exists() {
            SimConfig::from_kv(KvFile::load(preset)?)
        } else {
            Err(Error::Config(format!("`{preset}` is neither a preset ({}) nor a file", PRESETS.join(", "))))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.forces;
        let positive = [
            ("dt", self.dt),
            ("desired_speed", self.desired_speed),
            ("relaxation_time", f.relaxation_time),
            ("agent_range", f.agent_range),
            ("obstacle_range", f.obstacle_range),
            ("max_speed", f.max_speed),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{k}` must be positive, got {v}")));
            }
        }
        if self.speed_spread < 0.0 || f.agent_strength < 0.0 || f.obstacle_strength < 0.0 {
            return Err(Error::Config("spreads and strengths must be nonnegative".into()));
        }
        if self.min_agents == 0 || self.min_agents > self.max_agents {
            return Err(Error::Config(format!("agent range {}..={} is empty", self.min_agents, self.max_agents)));
        }
        if self.substeps == 0 {
            return Err(Error::Config("`substeps` must be at least 1".into()));
        }
        Ok(())
    }
}

/// The crossing map: building blocks in the four corners of a 20 m square
/// and 6 m wide sidewalk corridors along both axes.
pub fn crossing_map() -> StaticMap {
    let mut map = StaticMap::free(Point::new(-10.0, -10.0), 0.5, 40, 40).expect("valid map");
    map.fill_rect(Point::new(-10.0, -10.0), Point::new(10.0, 10.0), BUILDING);
    map.fill_rect(Point::new(-10.0, -3.0), Point::new(10.0, 3.0), SIDEWALK);
    map.fill_rect(Point::new(-3.0, -10.0), Point::new(3.0, 10.0), SIDEWALK);
    map
}

fn rotate(p: Point, quarter_turns: usize) -> Point {
    match quarter_turns % 4 {
        0 => p,
        1 => Point::new(-p.y, p.x),
        2 => Point::new(-p.x, -p.y),
        _ => Point::new(p.y, -p.x),
    }
}

fn spawn_agents(config: &SimConfig, rng: &mut ChaCha8Rng, n: usize) -> Vec<AgentSpec> {
    let speed = Normal::new(config.desired_speed, config.speed_spread.max(1e-12)).expect("valid normal");
    let mut agents: Vec<AgentSpec> = Vec::with_capacity(n);
    let mut tries = 0;
    while agents.len() < n && tries < 1000 {
        tries += 1;
        let (position, goal) = match config.layout {
            Layout::CrossingCorridor => {
                let turn = rng.random_range(0..4);
                let lateral = rng.random_range(-2.4..2.4);
                let start = Point::new(rng.random_range(-8.0..-5.0), lateral);
                let goal_lateral = (lateral + rng.random_range(-1.0..1.0)).clamp(-2.4, 2.4);
                (rotate(start, turn), rotate(Point::new(12.0, goal_lateral), turn))
            }
            Layout::OpenPlaza => {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let r = rng.random_range(4.0..6.0);
                let start = Point::new(r * angle.cos(), r * angle.sin());
                let jitter = rng.random_range(-0.5..0.5);
                let goal = Point::new(-(r + 4.0) * (angle + jitter).cos(), -(r + 4.0) * (angle + jitter).sin());
                (start, goal)
            }
        };
        if agents.iter().any(|a| a.position.dist(position) < 0.8) {
            continue;
        }
        let s = speed.sample(rng).clamp(0.5 * config.desired_speed, 1.5 * config.desired_speed);
        let dir = goal - position;
        agents.push(AgentSpec { position, velocity: dir * (s / dir.norm()), goal, desired_speed: s });
    }
    agents
}

fn place_vegetation(map: &mut StaticMap, rng: &mut ChaCha8Rng) {
    let w = rng.random_range(0.5..1.5);
    let h = rng.random_range(0.5..1.5);
    let c = Point::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
    map.fill_rect(Point::new(c.x - w / 2.0, c.y - h / 2.0), Point::new(c.x + w / 2.0, c.y + h / 2.0), VEGETATION);
}

/// Runs the configured number of scenes, each `T_TOTAL` samples long.
pub fn simulate(config: &SimConfig) -> Result<Vec<Scene>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let base_map = match config.layout {
        Layout::CrossingCorridor => Some(crossing_map()),
        Layout::OpenPlaza => None,
    };
    let mut scenes = Vec::with_capacity(config.scenes);
    for k in 0..config.scenes {
        let map = base_map.clone().map(|mut m| {
            place_vegetation(&mut m, &mut rng);
            m
        });
        let n = rng.random_range(config.min_agents..=config.max_agents);
        let agents = spawn_agents(config, &mut rng, n);
        let paths = simulate_agents(
            &agents,
            map.as_ref(),
            ClassSet::default(),
            &config.forces,
            config.dt,
            config.substeps,
            T_TOTAL,
        );
        let mut scene = Scene::new(
            format!("{}-{}-{k}", config.layout.name(), config.seed),
            paths.into_iter().enumerate().map(|(i, positions)| AgentTrack { id: i as u64, positions }).collect(),
        );
        scene.video = format!("{}-{}", config.layout.name(), config.seed);
        scene.start_frame = (k * T_TOTAL) as i64;
        scene.map = map.map(Arc::new);
        scenes.push(scene);
    }
    Ok(scenes)
}
