use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use glgnn_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = glgnn_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn sbm() -> *mut GlgnnDataset {
    let blocks = [20usize, 20];
    let mut ds = ptr::null_mut();
    let status = unsafe { glgnn_dataset_generate_sbm(blocks.as_ptr(), blocks.len(), 0.9, 0.05, 8, 0.5, 3, &mut ds) };
    assert_eq!(status, GlgnnStatus::Ok);
    ds
}

fn quick_config() -> *mut GlgnnConfig {
    let cfg = glgnn_config_new();
    for (k, v) in [("train.max_epochs", "20"), ("train.patience", "20"), ("model.hidden", "8"), ("head.expansion", "2")] {
        assert_eq!(unsafe { glgnn_config_set(cfg, cstr(k).as_ptr(), cstr(v).as_ptr()) }, GlgnnStatus::Ok);
    }
    cfg
}

#[test]
fn dataset_info_of_generated_graph() {
    let ds = sbm();
    let mut info = GlgnnDatasetInfo::default();
    assert_eq!(unsafe { glgnn_dataset_info(ds, &mut info) }, GlgnnStatus::Ok);
    assert_eq!(info.num_nodes, 40);
    assert_eq!(info.num_features, 8);
    assert_eq!(info.num_classes, 2);
    assert!(info.num_edges > 0);
    unsafe { glgnn_dataset_free(ds) };
}

#[test]
fn config_round_trip_and_errors() {
    let cfg = glgnn_config_new();
    let key = cstr("optim.lr");
    unsafe {
        assert_eq!(glgnn_config_set(cfg, key.as_ptr(), cstr("0.005").as_ptr()), GlgnnStatus::Ok);
        let mut needed = 0usize;
        assert_eq!(glgnn_config_get(cfg, key.as_ptr(), ptr::null_mut(), 0, &mut needed), GlgnnStatus::Ok);
        let mut buf = vec![0 as std::ffi::c_char; needed];
        assert_eq!(glgnn_config_get(cfg, key.as_ptr(), buf.as_mut_ptr(), buf.len(), ptr::null_mut()), GlgnnStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "0.005");

        let mut small = [0 as std::ffi::c_char; 2];
        assert_eq!(glgnn_config_get(cfg, key.as_ptr(), small.as_mut_ptr(), 2, ptr::null_mut()), GlgnnStatus::InvalidArgument);

        assert_eq!(glgnn_config_set(cfg, cstr("no.such.key").as_ptr(), cstr("1").as_ptr()), GlgnnStatus::Config);
        assert!(last_error().contains("no.such.key"));
        assert_eq!(glgnn_config_set(cfg, key.as_ptr(), cstr("fast").as_ptr()), GlgnnStatus::Config);
        assert_eq!(glgnn_config_set(ptr::null_mut(), key.as_ptr(), key.as_ptr()), GlgnnStatus::NullArgument);
        glgnn_config_free(cfg);
    }
}

#[test]
fn missing_dataset_is_a_data_error() {
    let mut ds = ptr::null_mut();
    let status = unsafe { glgnn_dataset_load(cstr("/nonexistent/glgnn").as_ptr(), -1, &mut ds) };
    assert_eq!(status, GlgnnStatus::Data);
    assert!(ds.is_null());
    assert!(last_error().contains("/nonexistent/glgnn"));
    glgnn_clear_error();
    assert!(glgnn_last_error().is_null());
    let status = unsafe { glgnn_dataset_load(cstr("x").as_ptr(), 7, &mut ds) };
    assert_eq!(status, GlgnnStatus::InvalidArgument);
}

#[test]
fn train_inspect_predict_and_save() {
    let ds = sbm();
    let cfg = quick_config();
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut run = ptr::null_mut();
        assert_eq!(glgnn_train(ds, cstr("missing").as_ptr(), cfg, &mut run), GlgnnStatus::Data);
        assert_eq!(glgnn_train(ds, cstr("random-0").as_ptr(), cfg, &mut run), GlgnnStatus::Ok);

        let mut s = GlgnnRunSummary::default();
        assert_eq!(glgnn_run_summary(run, &mut s), GlgnnStatus::Ok);
        assert!(s.epochs_run >= 1 && s.epochs_run <= 20);
        assert!(s.best_epoch >= 1 && s.best_epoch <= s.epochs_run);
        assert!((0.0..=1.0).contains(&s.test_acc));

        let mut e = GlgnnEpoch::default();
        assert_eq!(glgnn_run_epoch(run, 0, &mut e), GlgnnStatus::Ok);
        assert_eq!(e.epoch, 1);
        assert_eq!(glgnn_run_epoch(run, s.epochs_run, &mut e), GlgnnStatus::InvalidArgument);

        let mut probs = vec![0.0; 40 * 2];
        assert_eq!(glgnn_run_predict(run, ds, probs.as_mut_ptr(), 10), GlgnnStatus::InvalidArgument);
        assert_eq!(glgnn_run_predict(run, ds, probs.as_mut_ptr(), probs.len()), GlgnnStatus::Ok);
        for row in probs.chunks(2) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
        }

        let ckpt = dir.path().join("model.bin");
        let metrics = dir.path().join("metrics.csv");
        let ckpt_c = cstr(ckpt.to_str().unwrap());
        let metrics_c = cstr(metrics.to_str().unwrap());
        assert_eq!(glgnn_run_save_checkpoint(run, ckpt_c.as_ptr()), GlgnnStatus::Ok);
        assert_eq!(glgnn_run_write_metrics(run, metrics_c.as_ptr()), GlgnnStatus::Ok);
        let loaded = glgnn::checkpoint::Checkpoint::load(&ckpt).unwrap();
        assert_eq!(loaded.num_classes, 2);
        let csv = std::fs::read_to_string(&metrics).unwrap();
        assert_eq!(csv.lines().count(), s.epochs_run + 1);

        glgnn_run_free(run);
        glgnn_config_free(cfg);
        glgnn_dataset_free(ds);
    }
}

#[test]
fn flops_for_generated_graph() {
    let ds = sbm();
    let cfg = glgnn_config_new();
    let mut m = 0.0;
    unsafe {
        assert_eq!(glgnn_flops(ds, cfg, &mut m), GlgnnStatus::Ok);
        assert!(m > 0.0);
        assert_eq!(glgnn_flops(ds, cfg, ptr::null_mut()), GlgnnStatus::NullArgument);
        glgnn_config_free(cfg);
        glgnn_dataset_free(ds);
    }
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        glgnn_dataset_free(ptr::null_mut());
        glgnn_config_free(ptr::null_mut());
        glgnn_run_free(ptr::null_mut());
    }
    let v = unsafe { CStr::from_ptr(glgnn_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/glgnn.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["glgnn_train", "glgnn_last_error", "GLGNN_STATUS_NON_FINITE", "typedef struct GlgnnRun GlgnnRun"] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"glgnn.h\"\nint f(void) { GlgnnConfig *c = glgnn_config_new(); GlgnnStatus s = glgnn_config_set(c, \"train.seed\", \"1\"); glgnn_config_free(c); return (int)s; }\n",
    )
    .unwrap();
    match Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(e) => eprintln!("no C compiler available ({e}); header syntax not checked"),
    }
}
