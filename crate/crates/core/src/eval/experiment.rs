//! End-to-end runs driven by a `key = value` file: load or simulate data,
//! split, train (or load a checkpoint), evaluate and write every artifact.
//!
//! Keys besides the model and training keys:
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `data` | preset name, simulator file, or TrajNet file/directory | required |
//! | `scenes` | scene count when `data` is simulated | simulator's |
//! | `data_seed` | simulator seed | simulator's |
//! | `test_data` | separate test source, disables `split` | none |
//! | `split` | `every:<k>` or `video:<name>` | `every:5` |
//! | `out` | output directory | `runs/<config stem>` |
//! | `checkpoint` | evaluate this model instead of training | none |
//! | `checkpoint_every` | epochs between checkpoints | 5 |
//! | `k_eval`, `eval_seed`, `eval_batch` | evaluation sampling | 20, 0, 16 |
//! | `plots` | scenes to plot | 8 |

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::dataset::load_scenes;
use crate::data::scene::Scene;
use crate::data::sim::{simulate, SimConfig, PRESETS};
use crate::data::split::{every_kth, leave_one_out};
use crate::error::{Error, Result};
use crate::eval::plot::write_plots;
use crate::eval::predictions::PredictionFile;
use crate::eval::result::{evaluate_predictions, save_result_csv, Aggregate, EvalResult};
use crate::kv::KvFile;
use crate::model::{ModelConfig, PredictionSet, SafeCritic};
use crate::train::{read_model_kv, CheckpointPolicy, LossBreakdown, TrainConfig, Trainer};

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Simulated(SimConfig),
    Files(PathBuf),
}

impl DataSource {
    /// A preset name or simulator file becomes a simulation; anything else
    /// is read as scene files.
    pub fn resolve(spec: &str, scenes: Option<usize>, seed: Option<u64>) -> Result<Self> {
        let path = Path::new(spec);
        let is_sim_file = path.is_file() && path.extension().is_some_and(|e| e != "txt");
        if PRESETS.contains(&spec) || is_sim_file {
            let mut c = SimConfig::resolve(spec)?;
            if let Some(n) = scenes {
                c.scenes = n;
            }
            if let Some(s) = seed {
                c.seed = s;
            }
            c.validate()?;
            Ok(DataSource::Simulated(c))
        } else if path.exists() {
            if scenes.is_some() || seed.is_some() {
                return Err(Error::Config("`scenes` and `data_seed` only apply to simulated data".into()));
            }
            Ok(DataSource::Files(path.to_path_buf()))
        } else {
            Err(Error::Config(format!(
                "data `{spec}` is neither a preset ({}) nor an existing path",
                PRESETS.join(", ")
            )))
        }
    }

    pub fn load(&self) -> Result<Vec<Scene>> {
        match self {
            DataSource::Simulated(c) => simulate(c),
            DataSource::Files(p) => load_scenes(p),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SplitRule {
    EveryKth(usize),
    LeaveOut(String),
}

impl std::str::FromStr for SplitRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("every", k)) => match k.trim().parse::<usize>() {
                Ok(k) if k >= 2 => Ok(SplitRule::EveryKth(k)),
                _ => Err(Error::Config(format!("`every:<k>` needs k >= 2, got `{k}`"))),
            },
            Some(("video", v)) if !v.trim().is_empty() => Ok(SplitRule::LeaveOut(v.trim().to_string())),
            _ => Err(Error::Config(format!("`split` must be every:<k> or video:<name>, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub test_data: Option<DataSource>,
    pub split: SplitRule,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub k_eval: usize,
    pub eval_seed: u64,
    pub eval_batch: usize,
    pub plots: usize,
}

impl ExperimentConfig {
    /// A config with default model, training and evaluation settings.
    pub fn new(data: DataSource, out: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            data,
            test_data: None,
            split: SplitRule::EveryKth(5),
            out: out.into(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            checkpoint: None,
            checkpoint_every: 5,
            k_eval: 20,
            eval_seed: 0,
            eval_batch: 16,
            plots: 8,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(KvFile::load(path)?)
    }

    /// Relative paths are resolved against the config file's directory.
    pub fn from_kv(mut kv: KvFile) -> Result<Self> {
        let base = kv.path().parent().map(Path::to_path_buf).unwrap_or_default();
        let rel = |p: String| -> PathBuf {
            let p = PathBuf::from(p);
            if p.is_absolute() || PRESETS.contains(&p.to_string_lossy().as_ref()) {
                p
            } else {
                base.join(p)
            }
        };
        let stem = kv.path().file_stem().map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned());

        let data: String = kv.take("data")?.ok_or_else(|| Error::Config("missing `data`".into()))?;
        let scenes = kv.take("scenes")?;
        let seed = kv.take("data_seed")?;
        let data = DataSource::resolve(&rel(data).to_string_lossy(), scenes, seed)?;
        let test_data = kv
            .take::<String>("test_data")?
            .map(|t| DataSource::resolve(&rel(t).to_string_lossy(), None, None))
            .transpose()?;
        let out = kv.take::<String>("out")?.map_or_else(|| base.join("runs").join(&stem), rel);
        let mut c = ExperimentConfig::new(data, out);
        c.test_data = test_data;
        if let Some(s) = kv.take::<String>("split")? {
            if c.test_data.is_some() {
                return Err(Error::Config("`split` cannot be combined with `test_data`".into()));
            }
            c.split = s.parse()?;
        }
        c.checkpoint = kv.take::<String>("checkpoint")?.map(rel);
        c.checkpoint_every = kv.take_or("checkpoint_every", c.checkpoint_every)?;
        c.k_eval = kv.take_or("k_eval", c.k_eval)?;
        c.eval_seed = kv.take_or("eval_seed", c.eval_seed)?;
        c.eval_batch = kv.take_or("eval_batch", c.eval_batch)?;
        c.plots = kv.take_or("plots", c.plots)?;
        if c.k_eval == 0 || c.eval_batch == 0 {
            return Err(Error::Config("`k_eval` and `eval_batch` must be at least 1".into()));
        }
        read_model_kv(&mut c.model, &mut kv)?;
        if c.checkpoint.is_some() && c.model != ModelConfig::default() {
            return Err(Error::Config("model keys cannot be set together with `checkpoint`".into()));
        }
        c.train.read_kv(&mut kv)?;
        kv.finish()?;
        Ok(c)
    }

    /// Train and test scenes.
    pub fn scenes(&self) -> Result<(Vec<Scene>, Vec<Scene>)> {
        let all = self.data.load()?;
        if let Some(t) = &self.test_data {
            return Ok((all, t.load()?));
        }
        match &self.split {
            SplitRule::EveryKth(k) => Ok(every_kth(all, *k)),
            SplitRule::LeaveOut(v) => leave_one_out(all, v),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub model: SafeCritic,
    /// Per-step losses; empty when a checkpoint was evaluated.
    pub trace: Vec<LossBreakdown>,
    pub test: Vec<Scene>,
    pub predictions: PredictionSet,
    pub result: EvalResult,
}

/// Samples `k` futures per scene and scores them at `epsilon`.
pub fn evaluate_model(
    model: &SafeCritic,
    scenes: &[Scene],
    k: usize,
    seed: u64,
    epsilon: f64,
    batch: usize,
) -> Result<(PredictionSet, EvalResult)> {
    if scenes.is_empty() {
        return Err(Error::Data("no scenes to evaluate".into()));
    }
    let preds = model.predict(scenes, k, seed, batch)?;
    let result = evaluate_predictions(scenes, &preds, epsilon, model.config.blocked)?;
    Ok((preds, result))
}

/// Writes `results.csv`, `predictions.txt` and up to `plots` scene figures
/// under `dir/plots`.
pub fn write_evaluation(
    dir: &Path,
    model: &SafeCritic,
    scenes: &[Scene],
    preds: &PredictionSet,
    result: &EvalResult,
    plots: usize,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_result_csv(dir.join("results.csv"), result)?;
    let file = PredictionFile::new(scenes, preds, result.epsilon, model.config.grid, model.config.blocked)?;
    file.save(dir.join("predictions.txt"))?;
    if plots > 0 {
        write_plots(&file, dir.join("plots"), plots)?;
    }
    Ok(())
}

/// Runs a whole experiment and writes `losses.csv`, `checkpoints/`,
/// `model.txt` and the evaluation files into `config.out`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let (train, test) = config.scenes()?;
    std::fs::create_dir_all(&config.out)?;
    let (model, trace) = match &config.checkpoint {
        Some(path) => (SafeCritic::load(path)?, Vec::new()),
        None => {
            let model = SafeCritic::new(config.model.clone(), config.train.seed)?;
            let mut trainer = Trainer::new(model, config.train.clone())?;
            let mut log = std::io::BufWriter::new(std::fs::File::create(config.out.join("losses.csv"))?);
            let policy = CheckpointPolicy { dir: config.out.join("checkpoints"), every: config.checkpoint_every };
            std::fs::create_dir_all(&policy.dir)?;
            let trace = trainer.fit(&train, Some(&mut log), Some(&policy))?;
            log.flush()?;
            trainer.model.save(config.out.join("model.txt"))?;
            (trainer.model, trace)
        }
    };
    let (predictions, result) =
        evaluate_model(&model, &test, config.k_eval, config.eval_seed, model.config.epsilon, config.eval_batch)?;
    write_evaluation(&config.out, &model, &test, &predictions, &result, config.plots)?;
    Ok(ExperimentOutcome { model, trace, test, predictions, result })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    /// Zeroes the scene context fed to the generator.
    Asr,
    /// Drops critic training and the regularizer.
    Critic,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::Asr => "asr",
            Ablation::Critic => "critic",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asr" => Ok(Ablation::Asr),
            "critic" => Ok(Ablation::Critic),
            _ => Err(Error::Config(format!("unknown ablation `{s}` (asr, critic)"))),
        }
    }
}

/// Runs `config` as is and with `toggle` switched off, into `out/full` and
/// `out/no-<toggle>`, and writes both aggregates to `out/ablation.csv`.
pub fn run_ablation(config: &ExperimentConfig, toggle: Ablation) -> Result<(ExperimentOutcome, ExperimentOutcome)> {
    if config.checkpoint.is_some() {
        return Err(Error::Config("ablations train from scratch; remove `checkpoint`".into()));
    }
    let mut full = config.clone();
    full.out = config.out.join("full");
    let mut ablated = config.clone();
    ablated.out = config.out.join(format!("no-{}", toggle.name()));
    match toggle {
        Ablation::Asr => ablated.model.asr = false,
        Ablation::Critic => ablated.train.critic = false,
    }
    let a = run_experiment(&full)?;
    let b = run_experiment(&ablated)?;
    let mut csv = String::from("variant,scenes,made,mfde,nc_total,nc_per_agent,static_violations,diversity\n");
    for (name, r) in [("full".to_string(), &a.result.aggregate), (format!("no-{}", toggle.name()), &b.result.aggregate)]
    {
        csv.push_str(&aggregate_row(&name, r));
    }
    std::fs::write(config.out.join("ablation.csv"), csv)?;
    Ok((a, b))
}

fn aggregate_row(name: &str, r: &Aggregate) -> String {
    format!(
        "{name},{},{},{},{},{},{},{}\n",
        r.scenes, r.made, r.mfde, r.nc_total, r.nc_per_agent, r.static_violations, r.diversity
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(text: &str) -> KvFile {
        KvFile::parse(text, "/tmp/exp.cfg").unwrap()
    }

    #[test]
    fn parses_keys_and_defaults() {
        let c =
            ExperimentConfig::from_kv(kv("data = open-plaza\nscenes = 12\nsplit = every:3\nepochs = 2\nasr = off\n"))
                .unwrap();
        match &c.data {
            DataSource::Simulated(s) => assert_eq!(s.scenes, 12),
            other => panic!("{other:?}"),
        }
        assert_eq!(c.split, SplitRule::EveryKth(3));
        assert_eq!(c.out, PathBuf::from("/tmp/runs/exp"));
        assert!(!c.model.asr);
        assert_eq!(c.train.epochs, 2);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "scenes = 3\n",
            "data = open-plaza\nsplit = every:1\n",
            "data = open-plaza\nsplit = random\n",
            "data = open-plaza\nbogus = 1\n",
            "data = open-plaza\ncheckpoint = m.txt\nhidden = 16\n",
            "data = /no/such/path\n",
        ] {
            assert!(
                matches!(ExperimentConfig::from_kv(kv(text)), Err(Error::Config(_) | Error::Parse { .. })),
                "{text}"
            );
        }
    }

    #[test]
    fn ablation_names() {
        assert_eq!("asr".parse::<Ablation>().unwrap(), Ablation::Asr);
        assert!("dropout".parse::<Ablation>().is_err());
    }
}
