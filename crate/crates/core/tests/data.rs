use std::path::Path;

use proptest::prelude::*;
use safecritic::collision::count_collisions;
use safecritic::data::{
    from_displacements, leave_one_out, load_scenes, parse_trajnet, save_scenes, simulate, simulate_agents,
    to_displacements, AgentSpec, ForceParams, Scene, SimConfig, Split,
};
use safecritic::scene::map::ClassSet;
use safecritic::Point;

/// Three agents: A on frames 0..=20, B on 3..=7, C on 16..=19. Only A ever
/// covers a 20-frame window, and only the windows starting at 0 and 1.
fn fixture() -> String {
    let mut rows = Vec::new();
    for f in 0..=20 {
        rows.push((f, 1, f as f64 * 0.5, 1.0));
    }
    for f in 3..=7 {
        rows.push((f, 2, 0.0, f as f64));
    }
    for f in 16..=19 {
        rows.push((f, 3, -(f as f64), 2.0));
    }
    rows.sort_by_key(|r| (r.0, r.1));
    assert_eq!(rows.len(), 30);
    rows.iter().map(|(f, a, x, y)| format!("{f}\t{a}\t{x}\t{y}\n")).collect()
}

#[test]
fn staggered_fixture_windows() {
    let scenes = parse_trajnet(&fixture(), Path::new("fix.txt"), "fix", None).unwrap();
    let ids: Vec<&str> = scenes.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["fix:0", "fix:1"]);
    for (s, start) in scenes.iter().zip([0i64, 1]) {
        assert_eq!(s.agents.len(), 1);
        assert_eq!(s.agents[0].id, 1);
        let want: Vec<Point> = (start..start + 20).map(|f| Point::new(f as f64 * 0.5, 1.0)).collect();
        assert_eq!(s.agents[0].positions, want);
    }
}

#[test]
fn window_with_two_full_agents() {
    let text: String = (0..20).flat_map(|f| [format!("{f} 7 {f} 0\n"), format!("{f} 4 0 {f}\n")]).collect();
    let scenes = parse_trajnet(&text, Path::new("two.txt"), "two", None).unwrap();
    assert_eq!(scenes.len(), 1);
    let ids: Vec<u64> = scenes[0].agents.iter().map(|a| a.id).collect();
    assert_eq!(ids, [4, 7]);
}

fn tagged(video: &str, n: usize) -> Vec<Scene> {
    (0..n)
        .map(|k| {
            let mut s = Scene::new(format!("{video}-{k}"), Vec::new());
            s.video = video.into();
            s
        })
        .collect()
}

#[test]
fn leave_one_out_partitions_exhaustively() {
    let all: Vec<Scene> = ["A", "B", "C"].iter().zip([2, 3, 4]).flat_map(|(v, n)| tagged(v, n)).collect();
    let ids: Vec<String> = all.iter().map(|s| s.id.clone()).collect();
    for held in ["A", "B", "C"] {
        let (train, test) = leave_one_out(all.clone(), held).unwrap();
        assert!(test.iter().all(|s| s.video == held && s.split == Split::Test));
        assert!(train.iter().all(|s| s.video != held && s.split == Split::Train));
        let mut union: Vec<String> = train.iter().chain(&test).map(|s| s.id.clone()).collect();
        union.sort();
        let mut want = ids.clone();
        want.sort();
        assert_eq!(union, want);
    }
    assert!(leave_one_out(all, "D").is_err());
}

#[test]
fn export_import_is_the_identity() {
    let mut cfg = SimConfig::preset("crossing-corridor").unwrap();
    cfg.scenes = 12;
    let scenes = simulate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_scenes(dir.path(), "corridor", &scenes).unwrap();
    let back = load_scenes(dir.path()).unwrap();
    assert_eq!(back.len(), scenes.len());
    for (a, b) in scenes.iter().zip(&back) {
        assert_eq!(a.agents, b.agents);
        assert_eq!(a.map.as_deref(), b.map.as_deref());
        assert_eq!(b.video, "corridor");
    }
    // A second round trip reproduces the file byte for byte.
    let again = tempfile::tempdir().unwrap();
    save_scenes(again.path(), "corridor", &back).unwrap();
    for ext in ["txt", "maps"] {
        let name = format!("corridor.{ext}");
        assert_eq!(std::fs::read(dir.path().join(&name)).unwrap(), std::fs::read(again.path().join(&name)).unwrap());
    }
}

fn dyadic() -> impl Strategy<Value = f64> {
    (-4096i64..4096).prop_map(|v| v as f64 / 64.0)
}

proptest! {
    #[test]
    fn displacements_round_trip_exactly(pts in prop::collection::vec((dyadic(), dyadic()), 2..40)) {
        let pts: Vec<Point> = pts.into_iter().map(|(x, y)| Point::new(x, y)).collect();
        let d = to_displacements(&pts).unwrap();
        prop_assert_eq!(d.len(), pts.len() - 1);
        prop_assert_eq!(from_displacements(pts[0], &d), pts);
    }
}

fn walker(x: f64, y: f64, goal: Point, speed: f64) -> AgentSpec {
    AgentSpec { position: Point::new(x, y), velocity: Point::ZERO, goal, desired_speed: speed }
}

#[test]
fn free_walkers_follow_the_closed_form() {
    let forces = ForceParams { agent_strength: 0.0, obstacle_strength: 0.0, ..ForceParams::default() };
    let agents = [walker(0.0, 0.0, Point::new(1e6, 0.0), 1.3), walker(0.0, 0.05, Point::new(-1e6, 0.05), 0.9)];
    let (dt, substeps) = (0.4, 8);
    let paths = simulate_agents(&agents, None, ClassSet::default(), &forces, dt, substeps, 20);
    let h = dt / substeps as f64;
    let q = 1.0 - h / forces.relaxation_time;
    for (a, path) in agents.iter().zip(&paths) {
        let dir = (a.goal - a.position).x.signum();
        for (s, p) in path.iter().enumerate() {
            // Euler on v' = (v0 − v)/τ from rest: v_n = v0(1 − qⁿ), x_n = h Σ_{m<n} v_m.
            let n = (s * substeps) as i32;
            let x = a.desired_speed * h * (n as f64 - (1.0 - q.powi(n)) / (1.0 - q));
            assert!((p.x - (a.position.x + dir * x)).abs() < 1e-9, "step {s}: {} vs {x}", p.x);
            assert_eq!(p.y, a.position.y);
        }
    }
}

#[test]
fn lone_agent_reaches_desired_speed_on_a_straight_line() {
    let goal = Point::new(100.0, 30.0);
    let a = walker(0.0, 0.0, goal, 1.3);
    let path = simulate_agents(&[a], None, ClassSet::default(), &ForceParams::default(), 0.4, 8, 20).remove(0);
    let heading = goal * (1.0 / goal.norm());
    for w in path[10..].windows(2) {
        let speed = w[0].dist(w[1]) / 0.4;
        assert!((speed - 1.3).abs() < 0.02 * 1.3, "speed {speed}");
    }
    for p in &path {
        let cross = p.x * heading.y - p.y * heading.x;
        assert!(cross.abs() < 1e-9);
    }
}

#[test]
fn head_on_agents_sidestep() {
    let a = walker(-5.0, 0.05, Point::new(10.0, 0.05), 1.3);
    let b = walker(5.0, -0.05, Point::new(-10.0, -0.05), 1.3);
    let paths = simulate_agents(&[a, b], None, ClassSet::default(), &ForceParams::default(), 0.4, 8, 20);
    let min_sep = (0..20).map(|t| paths[0][t].dist(paths[1][t])).fold(f64::INFINITY, f64::min);
    assert!(min_sep > 0.3, "min separation {min_sep}");
    let lateral = |p: &Vec<Point>, y0: f64| p.iter().map(|q| (q.y - y0).abs()).fold(0.0, f64::max);
    assert!(lateral(&paths[0], 0.05) > 0.2 && lateral(&paths[1], -0.05) > 0.2);
    // The agents pass each other.
    assert!(paths[0][19].x > paths[1][19].x);
}

#[test]
fn simulation_is_deterministic() {
    let cfg = SimConfig { scenes: 8, seed: 42, ..SimConfig::preset("open-plaza").unwrap() };
    let a = simulate(&cfg).unwrap();
    let b = simulate(&cfg).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.id, y.id);
        assert_eq!(x.agents, y.agents);
    }
}

#[test]
fn corridor_ground_truth_collides_only_without_repulsion() {
    let events = |preset: &str| -> usize {
        let cfg = SimConfig { scenes: 100, seed: 3, ..SimConfig::preset(preset).unwrap() };
        simulate(&cfg)
            .unwrap()
            .iter()
            .map(|s| {
                let paths: Vec<Vec<Point>> = s.agents.iter().map(|a| a.positions.clone()).collect();
                count_collisions(&paths, 0.10).unwrap().nc()
            })
            .sum()
    };
    assert_eq!(events("crossing-corridor"), 0);
    assert!(events("crossing-corridor-unsafe") > 0);
}
