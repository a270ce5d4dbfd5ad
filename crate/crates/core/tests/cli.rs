mod common;

use std::fs;
use std::path::Path;

use common::{bin, run, stderr, stdout};
use mindformer::data::read_mft;

const SMALL: &[&str] = &[
    "--seed",
    "7",
    "--set",
    "synthetic.n_stimuli=60",
    "--set",
    "synthetic.n_test=20",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

fn assert_fails(o: &std::process::Output, code: i32, category: &str) {
    assert_eq!(o.status.code(), Some(code), "stderr: {}", stderr(o));
    let err = stderr(o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error[{category}]: ")), "{err}");
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect()
}

fn train_small(dir: &Path, epochs: &str) {
    let o = run(dir, &with_small(&["train", "--epochs", epochs]));
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn gen_data_is_byte_identical_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run(d.path(), &with_small(&["gen-data"]));
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("manifest.json"));
    }
    let names: Vec<_> = fs::read_dir(a.path().join("data"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert!(names.len() >= 7, "{names:?}");
    for n in names {
        let x = fs::read(a.path().join("data").join(&n)).unwrap();
        let y = fs::read(b.path().join("data").join(&n)).unwrap();
        assert!(x == y, "{n:?} differs");
    }
}

#[test]
fn missing_seed_is_a_schema_error() {
    let d = tempfile::tempdir().unwrap();
    assert_fails(&run(d.path(), &["gen-data"]), 5, "schema");
    assert!(!d.path().join("data").exists());
}

#[test]
fn config_file_and_set_overrides_compose() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"model": {"seed": 3}, "train": {"seed": 3}, "synthetic": {"seed": 3, "n_stimuli": 30, "n_test": 10}}"#,
    )
    .unwrap();
    let o = bin()
        .args(["gen-data", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(d.path())
        .args(["--set", "synthetic.n_test=5"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = mindformer::data::load_manifest(&d.path().join("data/manifest.json")).unwrap();
    assert_eq!(manifest.trial_count(), 4 * 30);
    let test = manifest
        .manifest()
        .trials
        .iter()
        .filter(|t| t.split.to_string() == "test")
        .count();
    assert_eq!(test, 4 * 5);

    fs::write(
        &cfg,
        r#"{"model": {"seed": 3}, "train": {"seed": 3}, "synthetic": {"seed": 3, "noise": 1}}"#,
    )
    .unwrap();
    let o = bin()
        .args(["gen-data", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(d.path())
        .output()
        .unwrap();
    assert_fails(&o, 5, "schema");
}

#[test]
fn train_writes_a_row_per_epoch_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    train_small(a.path(), "1");
    train_small(b.path(), "1");
    for f in ["metrics.csv", "last.mft", "last.json", "best.mft", "best.json"] {
        let x = fs::read(a.path().join("train").join(f)).unwrap();
        let y = fs::read(b.path().join("train").join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }

    let c = tempfile::tempdir().unwrap();
    train_small(c.path(), "3");
    let text = fs::read_to_string(c.path().join("train/metrics.csv")).unwrap();
    assert!(text.lines().count() > 3, "{text}");
    let rows = csv_rows(&c.path().join("train/metrics.csv"));
    let epochs: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(epochs, ["1", "2", "3"]);
}

#[test]
fn resume_continues_the_metrics_file() {
    let d = tempfile::tempdir().unwrap();
    train_small(d.path(), "2");
    let o = run(
        d.path(),
        &with_small(&["train", "--epochs", "3", "--resume", "train/last.json"]),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let resumed = csv_rows(&d.path().join("train/metrics.csv"));

    let fresh = tempfile::tempdir().unwrap();
    train_small(fresh.path(), "3");
    assert_eq!(resumed, csv_rows(&fresh.path().join("train/metrics.csv")));
    let x = fs::read(d.path().join("train/last.mft")).unwrap();
    let y = fs::read(fresh.path().join("train/last.mft")).unwrap();
    assert!(x == y);
}

#[test]
fn truncated_checkpoint_is_a_format_error_naming_the_entry() {
    let d = tempfile::tempdir().unwrap();
    train_small(d.path(), "1");
    let path = d.path().join("train/last.mft");
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    let o = run(
        d.path(),
        &with_small(&["train", "--epochs", "2", "--resume", "train/last.json"]),
    );
    assert_fails(&o, 4, "format");
    assert!(stderr(&o).contains("(entry `"), "{}", stderr(&o));
}

#[test]
fn eval_reproduces_the_best_row_and_train_beats_test() {
    let d = tempfile::tempdir().unwrap();
    train_small(d.path(), "3");
    let train_rows = csv_rows(&d.path().join("train/metrics.csv"));
    let best_epoch =
        serde_json::from_str::<serde_json::Value>(&fs::read_to_string(d.path().join("train/best.json")).unwrap())
            .unwrap()["epoch"]
            .as_u64()
            .unwrap();

    let o = run(d.path(), &with_small(&["eval", "--checkpoint", "train/best.json"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let eval_rows = csv_rows(&d.path().join("eval/test.csv"));
    assert_eq!(eval_rows.len(), 1);
    let recorded = train_rows.iter().find(|r| r[0] == best_epoch.to_string()).unwrap();
    assert_eq!(&eval_rows[0], recorded);

    let o = run(
        d.path(),
        &with_small(&["eval", "--checkpoint", "train/best.json", "--split", "train"]),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let top1 = |split: &str| -> f64 {
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(d.path().join(format!("eval/{split}.json"))).unwrap()).unwrap();
        v["top1_retrieval"].as_f64().unwrap()
    };
    assert!(top1("train") >= top1("test"), "{} < {}", top1("train"), top1("test"));
}

#[test]
fn unknown_split_and_bad_flags_are_usage_errors() {
    let d = tempfile::tempdir().unwrap();
    let o = run(
        d.path(),
        &with_small(&["eval", "--checkpoint", "train/best.json", "--split", "val"]),
    );
    assert_fails(&o, 2, "usage");
    assert_fails(&run(d.path(), &["train", "--bogus"]), 2, "usage");
    assert_fails(&run(d.path(), &["frobnicate"]), 2, "usage");
    assert_fails(&run(d.path(), &["--preset", "huge", "param-count"]), 2, "usage");
}

#[test]
fn grad_check_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["grad-check"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let err: f64 = stdout(&o).split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(err < 1e-4, "{err}");

    assert_fails(&run(d.path(), &["grad-check", "--sabotage"]), 3, "gradcheck");
    assert_fails(&run(d.path(), &["grad-check", "--h", "1"]), 2, "usage");
}

#[test]
fn ablation_reports_have_the_grid_shape() {
    let d = tempfile::tempdir().unwrap();
    let mut args = with_small(&["ablate", "token", "--seeds", "1,2", "--set", "train.epochs=1"]);
    let o = run(d.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&d.path().join("ablate/token.csv"));
    assert_eq!(rows.len(), 4);
    let arms: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(arms, ["with_token", "without_token", "with_token", "without_token"]);
    assert!(d.path().join("ablate/token.json").exists());

    args = with_small(&[
        "ablate",
        "datasize",
        "--seeds",
        "1,2",
        "--sizes",
        "5,20",
        "--set",
        "train.epochs=1",
    ]);
    let o = run(d.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&d.path().join("ablate/datasize.csv"));
    assert_eq!(rows.len(), 2 * 2 * 2);
    let header = fs::read_to_string(d.path().join("ablate/datasize.csv")).unwrap();
    assert!(header.starts_with("arm,size,seed,epoch,split,total_loss,"), "{header}");

    args = with_small(&["ablate", "datasize", "--sizes", "41", "--seeds", "0"]);
    assert_fails(&run(d.path(), &args), 6, "data");
}

#[test]
fn param_count_breakdown() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["param-count", "--json", "--add-subject", "50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let total = v["total"].as_u64().unwrap();
    let groups: u64 = v["groups"]
        .as_array()
        .unwrap()
        .iter()
        .map(|g| g["count"].as_u64().unwrap())
        .sum();
    assert_eq!(groups, total);
    let (n, dim) = (4, 16);
    let inc = 50 * n * dim + n * dim + dim;
    assert_eq!(v["with_added_subject"]["increment"].as_u64().unwrap(), inc);
    assert_eq!(v["with_added_subject"]["total"].as_u64().unwrap(), total + inc);

    let o = run(d.path(), &["param-count"]);
    let last = stdout(&o).lines().last().unwrap().to_string();
    assert_eq!(
        last.split_whitespace().collect::<Vec<_>>(),
        ["total", &total.to_string()]
    );
}

#[test]
fn export_writes_one_encoding_per_trial() {
    let d = tempfile::tempdir().unwrap();
    train_small(d.path(), "1");
    let o = run(d.path(), &with_small(&["export", "--checkpoint", "train/best.json"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let entries = read_mft(&d.path().join("export/z.mft")).unwrap();
    assert_eq!(entries.len(), 4 * 20);
    assert!(entries.iter().all(|e| e.value.dims() == [4, 16]));
    assert!(entries[0].name.ends_with(".subj01.stim00040"), "{}", entries[0].name);
}
