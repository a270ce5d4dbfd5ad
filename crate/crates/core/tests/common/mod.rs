#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use mindformer::data::SyntheticSpec;
use mindformer::model::SubjectDecl;
use serde_json::Value;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mindformer"));
    c.env("MF_LOG", "error");
    c
}

/// Runs the CLI with `--out dir` prepended to `args`.
pub fn run(dir: &Path, args: &[&str]) -> Output {
    bin().arg("--out").arg(dir).args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        subjects: vec![SubjectDecl::new("a", 20), SubjectDecl::new("b", 16)],
        n_stimuli: 12,
        n_test: 4,
        ..SyntheticSpec::desk(seed)
    }
}

/// Solves the square system `m x = rhs` by Gaussian elimination with partial pivoting.
pub fn solve(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Vec<f64> {
    let n = rhs.len();
    for col in 0..n {
        let p = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, p);
        rhs.swap(col, p);
        let (top, rest) = m.split_at_mut(col + 1);
        let pivot = &top[col];
        for (r, row) in rest.iter_mut().enumerate() {
            let f = row[col] / pivot[col];
            for (x, p) in row[col..].iter_mut().zip(&pivot[col..]) {
                *x -= f * p;
            }
            rhs[col + 1 + r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (rhs[r] - s) / m[r][r];
    }
    x
}

/// Least squares for `a x ≈ y` via the normal equations. `a` is row-major `rows × cols`.
pub fn least_squares(a: &[f64], rows: usize, cols: usize, y: &[f64]) -> Vec<f64> {
    let mut ata = vec![vec![0.0; cols]; cols];
    let mut aty = vec![0.0; cols];
    for r in 0..rows {
        let row = &a[r * cols..(r + 1) * cols];
        for i in 0..cols {
            aty[i] += row[i] * y[r];
            for j in 0..cols {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    solve(ata, aty)
}

fn leaves(v: &Value, path: &mut Vec<Value>, out: &mut Vec<Vec<Value>>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                path.push(Value::String(k.clone()));
                leaves(x, path, out);
                path.pop();
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                path.push(Value::from(i));
                leaves(x, path, out);
                path.pop();
            }
        }
        _ => out.push(path.clone()),
    }
}

fn slot<'a>(doc: &'a mut Value, path: &[Value]) -> &'a mut Value {
    path.iter().fold(doc, |cur, key| match key {
        Value::String(k) => &mut cur[k.as_str()],
        Value::Number(i) => &mut cur[i.as_u64().unwrap() as usize],
        _ => unreachable!(),
    })
}

fn label(path: &[Value]) -> String {
    path.iter()
        .map(|k| k.to_string().trim_matches('"').to_string())
        .collect::<Vec<_>>()
        .join(".")
}

/// Every single-field corruption of a manifest document: each leaf replaced
/// by a wrong value and by a wrong type, each object key dropped, and an
/// unknown key added to each object, and the first element of each array
/// repeated.
pub fn corruptions(doc: &Value) -> Vec<(String, Value)> {
    let mut paths = Vec::new();
    leaves(doc, &mut Vec::new(), &mut paths);
    let mut out = Vec::new();
    for p in &paths {
        let name = label(p);
        let original = slot(&mut doc.clone(), p).clone();
        let wrong = match &original {
            Value::Number(n) => Value::from(n.as_u64().unwrap() + 1),
            Value::String(_) => Value::from("corrupted"),
            other => panic!("unexpected leaf {other}"),
        };
        let retyped = match &original {
            Value::Number(_) => Value::from("1"),
            _ => Value::from(7),
        };
        for (tag, v) in [("value", wrong), ("type", retyped)] {
            let mut d = doc.clone();
            *slot(&mut d, p) = v;
            out.push((format!("{name} ({tag})"), d));
        }
        let (last, parent) = p.split_last().unwrap();
        if let Value::String(k) = last {
            let mut d = doc.clone();
            slot(&mut d, parent).as_object_mut().unwrap().remove(k);
            out.push((format!("{name} (missing)"), d));
        }
    }
    let mut objects = vec![Vec::new()];
    for p in &paths {
        for i in 1..p.len() {
            let prefix = p[..i].to_vec();
            if slot(&mut doc.clone(), &prefix).is_object() && !objects.contains(&prefix) {
                objects.push(prefix);
            }
        }
    }
    for o in objects {
        let mut d = doc.clone();
        slot(&mut d, &o)
            .as_object_mut()
            .unwrap()
            .insert("extra".into(), Value::from(0));
        out.push((format!("{} (unknown key)", label(&o)), d));
    }
    for (k, v) in doc.as_object().unwrap() {
        if let Some(first) = v.as_array().and_then(|a| a.first()) {
            let mut d = doc.clone();
            d[k.as_str()].as_array_mut().unwrap().push(first.clone());
            out.push((format!("{k} (repeated element)"), d));
        }
    }
    out
}
