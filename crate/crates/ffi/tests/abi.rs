use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use mindformer::model::{forward_index, ModelConfig, SubjectDecl};
use mindformer::objective::LossConfig;
use mindformer::train::{TrainConfig, Trainer};
use mindformer_ffi::*;

fn checkpoint(dir: &Path) -> (PathBuf, Trainer) {
    let subjects = vec![SubjectDecl::new("s1", 10), SubjectDecl::new("s2", 6)];
    let t = Trainer::new(
        ModelConfig::desk(subjects, 4),
        LossConfig::default(),
        TrainConfig::desk(4),
    )
    .unwrap();
    let path = dir.join("model.json");
    t.checkpoint().save(&path).unwrap();
    (path, t)
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(mf_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn load(path: &Path) -> *mut MfModel {
    let mut m = ptr::null_mut();
    let p = cstr(path.to_str().unwrap());
    assert_eq!(
        unsafe { mf_model_load(p.as_ptr(), &mut m) },
        MfStatus::Ok,
        "{}",
        last_error()
    );
    assert!(!m.is_null());
    m
}

#[test]
fn forward_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, t) = checkpoint(dir.path());
    let m = load(&path);
    unsafe {
        let (mut n, mut d, mut subjects, mut params, mut f) = (0, 0, 0, 0u64, 0);
        assert_eq!(mf_model_dims(m, &mut n, &mut d), MfStatus::Ok);
        assert_eq!((n, d), (4, 16));
        assert_eq!(mf_model_subject_count(m, &mut subjects), MfStatus::Ok);
        assert_eq!(subjects, 2);
        assert_eq!(mf_model_param_count(m, &mut params), MfStatus::Ok);
        assert_eq!(params, t.params.numel() as u64);
        assert_eq!(mf_model_subject_voxels(m, cstr("s2").as_ptr(), &mut f), MfStatus::Ok);
        assert_eq!(f, 6);

        let voxels: Vec<f32> = (0..6).map(|i| i as f32 * 0.3 - 0.7).collect();
        let mut out = vec![0.0f32; 64];
        let st = mf_model_forward(m, cstr("s2").as_ptr(), voxels.as_ptr(), 6, out.as_mut_ptr(), out.len());
        assert_eq!(st, MfStatus::Ok);
        assert_eq!(last_error(), "");
        let want = forward_index(&voxels, 1, &t.params, &t.model).unwrap();
        assert_eq!(out, want.data());
        mf_model_free(m);
    }
}

#[test]
fn failures_report_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = checkpoint(dir.path());
    let m = load(&path);
    unsafe {
        let v = [0.0f32; 10];
        let mut out = [0.0f32; 64];
        let st = mf_model_forward(m, cstr("nobody").as_ptr(), v.as_ptr(), 10, out.as_mut_ptr(), 64);
        assert_eq!(st, MfStatus::UnknownSubject);
        assert!(last_error().contains("nobody"));

        let st = mf_model_forward(m, cstr("s1").as_ptr(), v.as_ptr(), 9, out.as_mut_ptr(), 64);
        assert_eq!(st, MfStatus::Shape);
        let st = mf_model_forward(m, cstr("s1").as_ptr(), v.as_ptr(), 10, out.as_mut_ptr(), 63);
        assert_eq!(st, MfStatus::Shape);
        let st = mf_model_forward(m, cstr("s1").as_ptr(), ptr::null(), 10, out.as_mut_ptr(), 64);
        assert_eq!(st, MfStatus::NullPointer);
        let mut n = 0;
        assert_eq!(mf_model_dims(ptr::null(), &mut n, &mut n), MfStatus::NullPointer);
        mf_model_free(m);
        mf_model_free(ptr::null_mut());

        let mut h = ptr::null_mut();
        let missing = cstr(dir.path().join("absent.json").to_str().unwrap());
        assert_eq!(mf_model_load(missing.as_ptr(), &mut h), MfStatus::Io);
        assert!(h.is_null());

        let mft = dir.path().join("model.mft");
        let bytes = std::fs::read(&mft).unwrap();
        std::fs::write(&mft, &bytes[..bytes.len() / 2]).unwrap();
        let p = cstr(path.to_str().unwrap());
        assert_eq!(mf_model_load(p.as_ptr(), &mut h), MfStatus::Format);
        assert!(last_error().contains("entry"), "{}", last_error());

        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(mf_model_load(bad.as_ptr().cast(), &mut h), MfStatus::InvalidUtf8);
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(mf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_header() {
    let lib = target_dir().join("libmindformer_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let (path, t) = checkpoint(dir.path());
    let exe = dir.path().join("smoke");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/smoke.c");
    let cc = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .unwrap();
    assert!(cc.status.success(), "{}", String::from_utf8_lossy(&cc.stderr));

    let run = Command::new(&exe).arg(&path).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{stdout}{}", String::from_utf8_lossy(&run.stderr));
    let voxels: Vec<f32> = (0..10).map(|i| i as f32 / 10.0).collect();
    let z = forward_index(&voxels, 0, &t.params, &t.model).unwrap();
    let want = format!(
        "dims 4 16\nparams {}\nz0 {:.6}\nunknown 6\n",
        t.params.numel(),
        z.data()[0]
    );
    assert_eq!(stdout, want);
}
