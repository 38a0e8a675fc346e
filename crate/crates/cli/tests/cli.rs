use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};

use dsl_cli::checkpoint::{self, Checkpoint};
use dsl_cli::config::RunConfig;
use dsl_core::learner::{DslModel, Formulation, ModelConfig, Normalization};

fn dsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsl"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"
[model]
d = 3
a_hidden = [6]
coef_hidden = [6]
[train]
epochs = 2
batch_size = 16
knots = 40
"#;

fn moons(dir: &Path, name: &str, n: &str, seed: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    let o = dsl(&["--seed", seed, "gen-moons", "--samples", n, "--out", s(&p)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    p
}

#[test]
fn train_writes_checkpoint_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let train = moons(dir.path(), "train.csv", "40", "1");
    let val = moons(dir.path(), "val.csv", "20", "2");
    let ck = dir.path().join("m.ckpt");
    let o = dsl(&[
        "train",
        "--config",
        s(&cfg),
        "--train",
        s(&train),
        "--val",
        s(&val),
        "--out",
        s(&ck),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(ck.exists());
    let hist = std::fs::read_to_string(dir.path().join("m.ckpt.history.csv")).unwrap();
    let lines: Vec<&str> = hist.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_accuracy,skipped");
    assert_eq!(lines.len(), 1 + 2);

    let o = dsl(&["eval", "--checkpoint", s(&ck), "--data", s(&val)]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("accuracy "));

    let pred = dir.path().join("pred.csv");
    let o = dsl(&[
        "predict",
        "--checkpoint",
        s(&ck),
        "--data",
        s(&val),
        "--out",
        s(&pred),
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&pred).unwrap().lines().count(), 21);

    let basis = dir.path().join("basis.csv");
    let o = dsl(&[
        "basis",
        "--checkpoint",
        s(&ck),
        "--data",
        s(&val),
        "--index",
        "3",
        "--grid",
        "50",
        "--out",
        s(&basis),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_rows(&basis);
    assert_eq!(rows[0].len(), 3 + 1);
    assert_eq!(rows.len(), 50);
    for c in 1..=3 {
        let max = rows.iter().map(|r| r[c].abs()).fold(0.0, f64::max);
        assert!(rows[0][c].abs() <= 1e-4 * max);
        assert!(
            rows[49][c].abs() <= 1e-4 * max,
            "column {c}: {} vs {max}",
            rows[49][c]
        );
    }

    let o = dsl(&[
        "basis",
        "--checkpoint",
        s(&ck),
        "--data",
        s(&val),
        "--index",
        "20",
        "--out",
        s(&basis),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

fn read_rows(p: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(p).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn missing_data_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let missing = dir.path().join("nope.csv");
    let o = dsl(&[
        "train",
        "--config",
        s(&cfg),
        "--train",
        s(&missing),
        "--val",
        s(&missing),
        "--out",
        "x.ckpt",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.csv"));
}

#[test]
fn negative_alpha_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[train]\nalpha = -0.5\n").unwrap();
    let train = moons(dir.path(), "train.csv", "10", "1");
    let o = dsl(&[
        "train",
        "--config",
        s(&cfg),
        "--train",
        s(&train),
        "--val",
        s(&train),
        "--out",
        "x.ckpt",
    ]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    let o = dsl(&[
        "train",
        "--config",
        s(&cfg),
        "--train",
        s(&train),
        "--val",
        s(&train),
        "--out",
        "x.ckpt",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Fixed-interval model with p = 1/2, q = 0, w = 1 for every input.
fn constant_model() -> DslModel {
    let cfg = ModelConfig {
        d: 3,
        coef_hidden: vec![3],
        formulation: Formulation::FixedInterval,
        ..ModelConfig::default()
    };
    let mut m = DslModel::new(2, 2, &cfg, 9).unwrap();
    let targets = [
        (&mut m.inv_p_net, logit((2.0 - 1.0) / 9.0)),
        (&mut m.q_net, 0.0),
        (&mut m.w_net, logit((1.0 - 0.1) / 9.9)),
    ];
    for (net, bias) in targets {
        net.weights
            .iter_mut()
            .for_each(|w| w.iter_mut().for_each(|v| *v = 0.0));
        net.biases
            .iter_mut()
            .for_each(|b| b.iter_mut().for_each(|v| *v = 0.0));
        *net.biases.last_mut().unwrap() = vec![bias];
    }
    m
}

fn write_checkpoint(path: &Path, model: DslModel) {
    let mut config = RunConfig::default();
    config.train.knots = 200;
    config.train.tol_lambda = 1e-10;
    config.train.substeps = 4;
    let ck = Checkpoint {
        model,
        config,
        normalization: Normalization {
            min: vec![0.0, 0.0],
            max: vec![1.0, 1.0],
        },
        feature_names: vec!["x1".into(), "x2".into()],
    };
    checkpoint::save(path, &ck).unwrap();
}

#[test]
fn constant_coefficient_basis_is_a_sine() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("const.ckpt");
    write_checkpoint(&ck, constant_model());
    let data = dir.path().join("x.csv");
    std::fs::write(&data, "x1,x2\n0.3,0.8\n").unwrap();
    let out = dir.path().join("b.csv");
    let o = dsl(&[
        "basis",
        "--checkpoint",
        s(&ck),
        "--data",
        s(&data),
        "--grid",
        "101",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_rows(&out);
    assert_eq!(rows[0].len(), 4);
    for r in &rows {
        let t = r[0];
        for n in 1..=3 {
            let e = (n as f64 * PI * t).sin() / (n as f64 * PI);
            assert!((r[n] - e).abs() < 1e-4, "t {t} n {n}: {} vs {e}", r[n]);
        }
    }
}

#[test]
fn checkpoint_roundtrip_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig {
        d: 3,
        a_hidden: vec![5],
        coef_hidden: vec![5],
        ..ModelConfig::default()
    };
    let model = DslModel::new(2, 2, &cfg, 4).unwrap();
    let ck = dir.path().join("m.ckpt");
    write_checkpoint(&ck, model.clone());
    let loaded = checkpoint::load(&ck).unwrap();
    assert_eq!(loaded.model, model);
    let opts = loaded.config.train.solver_options();
    for x in [[0.3, 0.4], [0.6, 0.7]] {
        let a = model.predict(&x, &opts).unwrap();
        let b = loaded.model.predict(&x, &opts).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
    std::fs::write(&ck, b"DSLCKPT\0garbage").unwrap();
    let data = dir.path().join("x.csv");
    std::fs::write(&data, "x1,x2,label\n0.3,0.8,1\n").unwrap();
    let o = dsl(&["eval", "--checkpoint", s(&ck), "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn fuzz_corpus_seeds_decode() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");
    for name in [
        "field_line.ckpt",
        "fixed_interval.ckpt",
        "learned_slope.ckpt",
    ] {
        let bytes = std::fs::read(root.join("checkpoint_decode").join(name)).unwrap();
        checkpoint::decode(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    let full = std::fs::read_to_string(root.join("config_parse/full.toml")).unwrap();
    assert_eq!(dsl_cli::config::parse_config(&full).unwrap().model.d, 6);
    let csv = std::fs::read(root.join("csv_dataset/moons.csv")).unwrap();
    assert_eq!(
        dsl_cli::dataset::parse_csv(csv.as_slice(), "label")
            .unwrap()
            .len(),
        2
    );
}
