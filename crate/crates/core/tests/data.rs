mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use common::{corruptions, least_squares, small_spec};
use mindformer::data::{
    generate_synthetic, load_manifest, read_mft, write_synthetic, DatasetManifest, Split, SyntheticSpec, MANIFEST_FILE,
    ORACLE_FILE,
};
use mindformer::numerics::Tensor;
use mindformer::Error;

fn oracle_tensors(dir: &Path) -> BTreeMap<String, Tensor<f64>> {
    read_mft(&dir.join(ORACLE_FILE))
        .unwrap()
        .into_iter()
        .map(|e| (e.name.clone(), e.value.to_real::<f64>()))
        .collect()
}

#[test]
fn noiseless_voxels_decode_back_to_latents() {
    let spec = SyntheticSpec {
        noise_std: 0.0,
        n_stimuli: 120,
        n_test: 20,
        ..SyntheticSpec::desk(11)
    };
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_synthetic(&spec, dir.path()).unwrap();
    let data = load_manifest(&manifest).unwrap();
    let oracle = oracle_tensors(dir.path());
    let latents = &oracle["latents"];
    let k = spec.latent_dim;

    let mut worst_fit = 0.0f64;
    let mut worst_latent = 0.0f64;
    for (i, t) in data.manifest().trials.iter().enumerate() {
        let a = &oracle[&format!("mixing.{}", t.subject_id)];
        let b = &oracle[&format!("bias.{}", t.subject_id)];
        let v: Vec<f64> = data.voxels(i).unwrap().iter().map(|&x| x as f64).collect();
        let centered: Vec<f64> = v.iter().zip(b.data()).map(|(x, b)| x - b).collect();
        let c = least_squares(a.data(), a.rows(), k, &centered);

        let stim: usize = t.stimulus_id.trim_start_matches("stim").parse().unwrap();
        let truth = latents.row(stim);
        let lat_err = c.iter().zip(truth).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / k as f64;
        worst_latent = worst_latent.max(lat_err.sqrt());

        let fit = (0..a.rows())
            .map(|r| {
                let pred: f64 = a.row(r).iter().zip(&c).map(|(x, y)| x * y).sum();
                (centered[r] - pred).powi(2)
            })
            .sum::<f64>()
            / a.rows() as f64;
        worst_fit = worst_fit.max(fit.sqrt());
    }
    assert!(worst_fit < 1e-6, "voxel residual {worst_fit:e}");
    assert!(worst_latent < 1e-6, "latent residual {worst_latent:e}");
}

#[test]
fn embeddings_are_the_projected_latents() {
    let d = generate_synthetic(&small_spec(2)).unwrap();
    let g = &d.oracle.projection;
    for (i, (id, e)) in d.corpus.embeddings.iter().enumerate() {
        assert_eq!(id, &format!("stim{i:05}"));
        assert_eq!(e.dims(), &[4, 16]);
        for (r, &x) in e.data().iter().enumerate() {
            let want: f64 = g.row(r).iter().zip(d.oracle.latents.row(i)).map(|(a, b)| a * b).sum();
            assert_eq!(x, want as f32);
        }
    }
}

#[test]
fn subject_means_recover_subject_biases() {
    let spec = SyntheticSpec::desk(5);
    let d = generate_synthetic(&spec).unwrap();
    let n = spec.n_stimuli as f64;
    let k = spec.latent_dim;
    let mean_c: Vec<f64> = (0..k)
        .map(|j| (0..spec.n_stimuli).map(|i| d.oracle.latents.row(i)[j]).sum::<f64>() / n)
        .collect();
    let tol = 3.0 * spec.noise_std / n.sqrt();

    let mut estimates = Vec::new();
    for (si, s) in spec.subjects.iter().enumerate() {
        let trials: Vec<_> = d.corpus.trials.iter().filter(|t| t.subject == s.id).collect();
        assert_eq!(trials.len(), spec.n_stimuli);
        let a = &d.oracle.mixing[si];
        let est: Vec<f64> = (0..s.voxel_count)
            .map(|j| {
                let mean_v = trials.iter().map(|t| t.voxels[j] as f64).sum::<f64>() / n;
                let drift: f64 = a.row(j).iter().zip(&mean_c).map(|(x, y)| x * y).sum();
                mean_v - drift
            })
            .collect();
        let rms = (est
            .iter()
            .zip(d.oracle.bias[si].data())
            .map(|(e, b)| (e - b).powi(2))
            .sum::<f64>()
            / s.voxel_count as f64)
            .sqrt();
        assert!(rms < tol, "{}: rms {rms} vs {tol}", s.id);
        estimates.push(est);
    }
    for i in 0..estimates.len() {
        for j in i + 1..estimates.len() {
            let m = estimates[j].len();
            let gap = (0..m).map(|v| (estimates[i][v] - estimates[j][v]).abs()).sum::<f64>() / m as f64;
            assert!(gap > 10.0 * tol, "subjects {i} and {j} share a bias");
        }
    }
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

#[test]
fn same_seed_writes_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    write_synthetic(&small_spec(9), a.path()).unwrap();
    write_synthetic(&small_spec(9), b.path()).unwrap();
    write_synthetic(&small_spec(10), c.path()).unwrap();
    let fa = files(a.path());
    assert!(fa.len() >= 5);
    assert_eq!(fa, files(b.path()));
    assert_ne!(fa, files(c.path()));
}

#[test]
fn every_single_field_corruption_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_synthetic(&small_spec(3), dir.path()).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert!(load_manifest(&path).is_ok());

    let cases = corruptions(&doc);
    assert!(cases.len() > 500, "{}", cases.len());
    let bad = dir.path().join("bad.json");
    for (name, d) in cases {
        fs::write(&bad, serde_json::to_string(&d).unwrap()).unwrap();
        match load_manifest(&bad) {
            Err(Error::Validation(_)) => {}
            other => panic!("{name}: expected a validation error, got {other:?}"),
        }
    }
}

#[test]
fn manifest_subset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_synthetic(&small_spec(4), dir.path()).unwrap();
    let full = load_manifest(&path).unwrap();
    let sub: DatasetManifest = full.manifest().subset(3, 1).unwrap();
    let out = dir.path().join("sub.json");
    fs::write(&out, sub.to_json().unwrap()).unwrap();
    let reloaded = load_manifest(&out).unwrap().to_corpus().unwrap();
    for s in ["a", "b"] {
        assert_eq!(reloaded.subject_indices(s, Split::Train).len(), 3);
        assert_eq!(reloaded.subject_indices(s, Split::Test).len(), 4);
    }
    assert_eq!(dir.path().join(MANIFEST_FILE), path);
}
