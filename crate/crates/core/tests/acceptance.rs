//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 1–3 and 8 are exact checks and abort the run when they fail.
//! Criteria 4–7 train models and are reported without aborting; set
//! `SAFECRITIC_STRICT=1` to make any failure fail the target.

mod support;

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safecritic::collision::{count_collisions, reward_signal};
use safecritic::data::{from_displacements, load_scenes, save_scenes, simulate, to_displacements, Scene, SimConfig};
use safecritic::eval::{diversity, evaluate_critic, evaluate_predictions, made, mfde, Aggregate};
use safecritic::model::{ModelConfig, SafeCritic};
use safecritic::scene::map::ClassSet;
use safecritic::train::{LossBreakdown, TrainConfig, Trainer};
use safecritic::Point;

const EPSILON: f64 = 0.10;

struct Outcome {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn report(id: usize, name: &'static str, passed: bool, detail: String) -> Outcome {
    println!("criterion {id} {name}: {} ({detail})", if passed { "PASS" } else { "FAIL" });
    Outcome { id, name, passed, detail }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let checks = support::all_checks();
    let elapsed = start.elapsed();
    for c in &checks {
        println!("  {} {}", if c.passed() { "ok  " } else { "FAIL" }, c.line());
    }
    let worst = checks.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max);
    let passed = checks.iter().all(|c| c.passed()) && elapsed < Duration::from_secs(60);
    report(1, "gradient fidelity", passed, format!("{} checks, worst {worst:.2e}, {elapsed:.1?}", checks.len()))
}

fn random_paths(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<Point>> {
    (0..n)
        .map(|_| {
            let mut p = Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            (0..12)
                .map(|_| {
                    p = p + Point::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
                    p
                })
                .collect()
        })
        .collect()
}

fn collisions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut mismatches, mut events) = (0, 0);
    for _ in 0..500 {
        let n = rng.random_range(1..=20);
        let paths = random_paths(&mut rng, n);
        let eps = rng.random_range(0.05..0.4);
        let mut brute = Vec::new();
        for t in 0..12 {
            for i in 0..n {
                for j in i + 1..n {
                    let (a, b) = (paths[i][t], paths[j][t]);
                    if ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt() < eps {
                        brute.push((i, j, t));
                    }
                }
            }
        }
        let got: Vec<_> = count_collisions(&paths, eps).unwrap().dynamic.iter().map(|e| (e.i, e.j, e.t)).collect();
        let rewards = reward_signal(&paths, None, ClassSet::default(), eps).unwrap();
        let reward_total: u32 = rewards.iter().flatten().sum();
        if got != brute || reward_total as usize != 2 * brute.len() {
            mismatches += 1;
        }
        events += brute.len();
    }
    report(2, "collision oracle", mismatches == 0, format!("500 scenes, {events} events, {mismatches} mismatches"))
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    let path = |rng: &mut ChaCha8Rng| -> Vec<Point> {
        (0..12).map(|_| Point::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))).collect()
    };
    for _ in 0..1000 {
        let k = rng.random_range(2..=20);
        let y = path(&mut rng);
        let s: Vec<Vec<Point>> = (0..k).map(|_| path(&mut rng)).collect();
        let dist = |a: Point, b: Point| ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
        let ade_oracle =
            s.iter().map(|p| (0..12).map(|t| dist(y[t], p[t])).sum::<f64>() / 12.0).fold(f64::MAX, f64::min);
        let fde_oracle = s.iter().map(|p| dist(y[11], p[11])).fold(f64::MAX, f64::min);
        let mut pair_sum = 0.0;
        for a in 0..k {
            for b in a + 1..k {
                pair_sum += dist(s[a][11], s[b][11]);
            }
        }
        let div_oracle = pair_sum / (k * (k - 1) / 2) as f64;
        worst = worst
            .max((made(&y, &s).unwrap() - ade_oracle).abs())
            .max((mfde(&y, &s).unwrap().0 - fde_oracle).abs())
            .max((diversity(&s).unwrap() - div_oracle).abs());
        let curve: Vec<f64> = (1..=k).map(|j| made(&y, &s[..j]).unwrap()).collect();
        monotone &= curve.windows(2).all(|w| w[1] <= w[0]);
    }
    report(
        3,
        "metric oracles",
        worst <= 1e-12 && monotone,
        format!("1000 cases, max error {worst:.1e}, nested-K monotone {monotone}"),
    )
}

fn corridor(scenes: usize, seed: u64) -> Vec<Scene> {
    simulate(&SimConfig { scenes, seed, ..SimConfig::preset("crossing-corridor").unwrap() }).unwrap()
}

fn acceptance_train_config(seed: u64, epochs: usize, lambda_critic: f64) -> TrainConfig {
    TrainConfig { seed, epochs, lambda_critic, lr_critic: 1e-3, critic_steps: 5, ..TrainConfig::default() }
}

fn train(scenes: &[Scene], model: ModelConfig, tc: TrainConfig) -> SafeCritic {
    let mut trainer = Trainer::new(SafeCritic::new(model, tc.seed).unwrap(), tc.clone()).unwrap();
    for _ in 0..tc.epochs {
        trainer.train_epoch(scenes).unwrap();
    }
    trainer.model
}

fn critic_auc() -> Outcome {
    let start = Instant::now();
    let scenes = corridor(2000, 41);
    let test = corridor(100, 999);
    let model = train(&scenes, ModelConfig::default(), acceptance_train_config(41, 3, 1.0));
    let r = evaluate_critic(&model, &test, 5, EPSILON, 7).unwrap();
    let elapsed = start.elapsed();
    let auc = r.auc.unwrap_or(f64::NAN);
    let passed = auc > 0.8 && elapsed < Duration::from_secs(30 * 60);
    let detail = format!("AUC {auc:.3} on {}/{} colliding trajectories, {elapsed:.0?}", r.positives(), r.labels.len());
    report(4, "critic AUC", passed, detail)
}

struct Arms {
    base: Vec<(SafeCritic, Aggregate)>,
    critic: Vec<Aggregate>,
    no_asr: Vec<Aggregate>,
}

const SEEDS: [u64; 3] = [1, 2, 3];
const LAMBDA_CRITIC: f64 = 1e5;

fn eval(model: &SafeCritic, test: &[Scene], k: usize) -> Aggregate {
    let preds = model.predict(test, k, 11, 16).unwrap();
    evaluate_predictions(test, &preds, EPSILON, model.config.blocked).unwrap().aggregate
}

fn train_arms() -> Arms {
    let scenes = corridor(200, 51);
    let test = corridor(100, 999);
    let mut arms = Arms { base: Vec::new(), critic: Vec::new(), no_asr: Vec::new() };
    for seed in SEEDS {
        let start = Instant::now();
        let base = train(&scenes, ModelConfig::default(), acceptance_train_config(seed, 15, 0.0));
        let a = eval(&base, &test, 20);
        let critic = train(&scenes, ModelConfig::default(), acceptance_train_config(seed, 15, LAMBDA_CRITIC));
        let c = eval(&critic, &test, 20);
        let no_asr_cfg = ModelConfig { asr: false, ..ModelConfig::default() };
        let no_asr = train(&scenes, no_asr_cfg, acceptance_train_config(seed, 15, 0.0));
        let n = eval(&no_asr, &test, 20);
        println!(
            "  seed {seed}: mADE/NC base {:.3}/{:.3}, critic {:.3}/{:.3}, no-asr {:.3}/{:.3} ({:.0?})",
            a.made,
            a.nc_total,
            c.made,
            c.nc_total,
            n.made,
            n.nc_total,
            start.elapsed()
        );
        arms.base.push((base, a));
        arms.critic.push(c);
        arms.no_asr.push(n);
    }
    arms
}

fn critic_tradeoff(arms: &Arms) -> Outcome {
    let nc0 = median(arms.base.iter().map(|(_, a)| a.nc_total).collect());
    let nc1 = median(arms.critic.iter().map(|a| a.nc_total).collect());
    let ade0 = median(arms.base.iter().map(|(_, a)| a.made).collect());
    let ade1 = median(arms.critic.iter().map(|a| a.made).collect());
    let passed = nc1 * 2.0 <= nc0 && ade1 < 1.1 * ade0;
    let detail = format!(
        "median NC {nc0:.3} -> {nc1:.3}, median mADE {ade0:.3} -> {ade1:.3} ({:+.1}%), lambda_c {LAMBDA_CRITIC:e}",
        100.0 * (ade1 / ade0 - 1.0)
    );
    report(5, "critic lowers collisions", passed, detail)
}

fn asr_ablation(arms: &Arms) -> Outcome {
    let worse = arms.base.iter().zip(&arms.no_asr).filter(|((_, a), n)| n.made > a.made).count();
    report(6, "scene context ablation", worse >= 2, format!("zeroed context raises mADE in {worse} of 3 seeds"))
}

fn diversity_check(arms: &Arms) -> Outcome {
    let test = corridor(100, 999);
    let (mut divs, mut collapsed) = (Vec::new(), 0);
    for (model, _) in &arms.base {
        let preds = model.predict(&test, 5, 13, 16).unwrap();
        let r = evaluate_predictions(&test, &preds, EPSILON, model.config.blocked).unwrap();
        divs.push(r.aggregate.diversity);
        for p in &preds.scenes {
            for i in 0..p.samples[0].len() {
                if p.samples.iter().all(|s| s[i] == p.samples[0][i]) {
                    collapsed += 1;
                }
            }
        }
    }
    let mean = divs.iter().sum::<f64>() / divs.len() as f64;
    report(
        7,
        "sample diversity",
        mean > 0.2 && collapsed == 0,
        format!("K=5 diversity {mean:.3} m, {collapsed} collapsed agents"),
    )
}

fn trace_bits(trace: &[LossBreakdown]) -> Vec<u64> {
    trace
        .iter()
        .flat_map(|l| [l.adversarial_g, l.adversarial_d, l.auto_encoding, l.critic_regression, l.critic_regularizer])
        .map(f64::to_bits)
        .collect()
}

fn short_run(scenes: &[Scene]) -> (SafeCritic, Vec<u64>) {
    let tc = TrainConfig { seed: 8, batch_size: 4, ..TrainConfig::default() };
    let mut trainer = Trainer::new(SafeCritic::new(support::small_config(), 8).unwrap(), tc).unwrap();
    let mut trace = trainer.train_epoch(scenes).unwrap();
    trace.extend(trainer.train_epoch(scenes).unwrap());
    (trainer.model, trace_bits(&trace))
}

fn determinism(dir: &Path) -> Outcome {
    let scenes = corridor(12, 61);
    let (model, a) = short_run(&scenes);
    let (_, b) = short_run(&scenes);
    let same_trace = a == b;

    let path = dir.join("model.txt");
    model.save(&path).unwrap();
    let loaded = SafeCritic::load(&path).unwrap();
    let same_eval = loaded.predict(&scenes, 5, 3, 4).unwrap() == model.predict(&scenes, 5, 3, 4).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let displacements = (0..1000).all(|_| {
        let pts: Vec<Point> = (0..20)
            .map(|_| {
                Point::new(rng.random_range(-4096..4096) as f64 / 64.0, rng.random_range(-4096..4096) as f64 / 64.0)
            })
            .collect();
        from_displacements(pts[0], &to_displacements(&pts).unwrap()) == pts
    });

    save_scenes(dir, "export", &scenes).unwrap();
    let back = load_scenes(dir.join("export.txt")).unwrap();
    let trajnet = back.len() == scenes.len()
        && scenes.iter().zip(&back).all(|(a, b)| a.agents == b.agents && a.map.as_deref() == b.map.as_deref());

    let detail = format!(
        "loss trace {same_trace}, checkpoint eval {same_eval}, displacements {displacements}, TrajNet {trajnet}"
    );
    report(8, "determinism and round trips", same_trace && same_eval && displacements && trajnet, detail)
}

fn main() {
    let strict = std::env::var("SAFECRITIC_STRICT").is_ok_and(|v| v == "1");
    let dir = tempfile::tempdir().unwrap();
    let mut outcomes = vec![gradients(), collisions(), metrics(), determinism(dir.path())];
    let exact_ok = outcomes.iter().all(|o| o.passed);
    if !exact_ok {
        summarize(&outcomes);
        std::process::exit(1);
    }
    outcomes.push(critic_auc());
    let arms = train_arms();
    outcomes.push(critic_tradeoff(&arms));
    outcomes.push(asr_ablation(&arms));
    outcomes.push(diversity_check(&arms));
    summarize(&outcomes);
    if strict && outcomes.iter().any(|o| !o.passed) {
        std::process::exit(1);
    }
}

fn summarize(outcomes: &[Outcome]) {
    let mut sorted: Vec<&Outcome> = outcomes.iter().collect();
    sorted.sort_by_key(|o| o.id);
    println!("\nacceptance summary");
    for o in sorted {
        println!("  [{}] {} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.name, o.detail);
    }
}
