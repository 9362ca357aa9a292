use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn safecritic(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safecritic")).args(args).current_dir(dir).output().unwrap()
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "stdout: {stdout}\nstderr: {}", String::from_utf8_lossy(&out.stderr));
    stdout
}

const CONFIG: &str = "\
data = scenes
split = every:4
hidden = 6
embedding = 6
noise_dim = 3
attention_hidden = 4
critic_hidden = 5
critic_mlp = 4
disc_mlp = 5
epochs = 1
batch_size = 4
k_train = 2
k_eval = 3
plots = 1
out = run
";

#[test]
fn simulate_train_eval_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = ok(&safecritic(&["simulate", "--preset", "crossing-corridor", "--out", "scenes", "--scenes", "8"], dir));
    assert!(out.contains("wrote 8 scenes"));
    assert!(dir.join("scenes/crossing-corridor.txt").exists());
    assert!(dir.join("scenes/crossing-corridor.maps").exists());

    fs::write(dir.join("exp.cfg"), CONFIG).unwrap();
    let out = ok(&safecritic(&["train", "--config", "exp.cfg"], dir));
    assert!(out.contains("mADE"), "{out}");
    let model = dir.join("run/model.txt");
    assert!(model.exists());

    let args =
        ["eval", "--checkpoint", "run/model.txt", "--data", "scenes", "--k", "3", "--out", "eval", "--plots", "1"];
    let out = ok(&safecritic(&args, dir));
    assert!(out.contains("K = 3") && out.contains("critic AUC"), "{out}");
    assert!(dir.join("eval/results.csv").exists());

    let out = ok(&safecritic(&["plot", "--result", "eval", "--out", "figs", "--scenes", "2"], dir));
    assert!(out.contains("wrote 4 figures"), "{out}");
    let first: Vec<_> = fs::read_dir(dir.join("figs")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(first.len(), 4);
    let bytes: Vec<Vec<u8>> = first.iter().map(|p| fs::read(p).unwrap()).collect();
    ok(&safecritic(&["plot", "--result", "eval/predictions.txt", "--out", "figs", "--scenes", "2"], dir));
    for (p, b) in first.iter().zip(bytes) {
        assert_eq!(fs::read(p).unwrap(), b);
    }
}

#[test]
fn ablate_writes_both_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let config = CONFIG.replace("data = scenes", "data = open-plaza\nscenes = 8").replace("plots = 1", "plots = 0");
    fs::write(dir.join("exp.cfg"), config).unwrap();
    let out = ok(&safecritic(&["ablate", "--config", "exp.cfg", "--toggle", "critic"], dir));
    assert!(out.contains("no-critic"), "{out}");
    assert!(dir.join("run/ablation.csv").exists());
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("typo.cfg"), "data = open-plaza\nepochz = 3\n").unwrap();
    assert_eq!(safecritic(&["train", "--config", "typo.cfg"], dir).status.code(), Some(2));
    assert_eq!(safecritic(&["simulate", "--preset", "no-such-preset", "--out", "x"], dir).status.code(), Some(2));

    fs::create_dir(dir.join("empty")).unwrap();
    fs::write(dir.join("junk.txt"), "not a model\n").unwrap();
    let args = ["eval", "--checkpoint", "junk.txt", "--data", "open-plaza"];
    assert_eq!(safecritic(&args, dir).status.code(), Some(3));
    assert_eq!(safecritic(&["plot", "--result", "missing.txt", "--out", "figs"], dir).status.code(), Some(3));

    fs::write(
        dir.join("m.cfg"),
        "data = open-plaza\nscenes = 10\nepochs = 1\nhidden = 4\nembedding = 4\nplots = 0\nk_eval = 2\n",
    )
    .unwrap();
    ok(&safecritic(&["train", "--config", "m.cfg"], dir));
    let args = ["eval", "--checkpoint", "runs/m/model.txt", "--data", "empty"];
    assert_eq!(safecritic(&args, dir).status.code(), Some(3));
}
