use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use adastudent_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(abst_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn scalar_functions() {
    let mut lr = 0.0;
    unsafe {
        assert_eq!(abst_poly_lr(0, 10, 0.0002, &mut lr), AbstStatus::Ok);
        assert_eq!(lr, 0.0002);
        assert_eq!(abst_poly_lr(5, 0, 0.1, &mut lr), AbstStatus::Domain);
        assert!(!last_error().is_empty());
        assert_eq!(abst_poly_lr(0, 10, 0.1, ptr::null_mut()), AbstStatus::InvalidArgument);
    }

    let scores = [1.0, 2.0, 3.0];
    let mut out = [0.0; 3];
    unsafe {
        assert_eq!(abst_normalize_scores(scores.as_ptr(), 3, 1.0, out.as_mut_ptr()), AbstStatus::Ok);
    }
    let z: f64 = scores.iter().map(|s: &f64| s.exp()).sum();
    for (o, s) in out.iter().zip(scores) {
        assert!((o - s.exp() / z).abs() < 1e-15);
    }
    let bad = [f64::NAN];
    unsafe {
        assert_eq!(abst_normalize_scores(bad.as_ptr(), 1, 1.0, out.as_mut_ptr()), AbstStatus::NonFinite);
    }

    let p = [0.5, 0.5, 1.0, 0.0];
    let q = [0.25, 0.75, 1.0, 0.0];
    let mut kl = -1.0;
    unsafe {
        assert_eq!(abst_kl_variance_image(p.as_ptr(), q.as_ptr(), 1, 2, 2, &mut kl), AbstStatus::Ok);
    }
    let expected = (0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln()) / 2.0;
    assert!((kl - expected).abs() < 1e-15);
    let unnormalized = [0.5, 0.6];
    unsafe {
        assert_eq!(
            abst_kl_variance_image(unnormalized.as_ptr(), q.as_ptr(), 1, 1, 2, &mut kl),
            AbstStatus::Domain
        );
    }
}

#[test]
fn distribution_handle() {
    let mut d = ptr::null_mut();
    unsafe {
        assert_eq!(abst_distribution_new(0, &mut d), AbstStatus::Domain);
        assert_eq!(abst_distribution_new(4, &mut d), AbstStatus::Ok);
        assert_eq!(abst_distribution_len(d), 4);
        let mut h = 0.0;
        assert_eq!(abst_distribution_entropy(d, &mut h), AbstStatus::Ok);
        assert!((h - 4f64.ln()).abs() < 1e-15);

        let scores = [0.7, 0.1, 0.1, 0.1];
        assert_eq!(abst_distribution_update(d, scores.as_ptr(), 4), AbstStatus::Ok);
        assert_eq!(abst_distribution_update(d, scores.as_ptr(), 3), AbstStatus::Shape);
        let mut w = [0.0; 4];
        assert_eq!(abst_distribution_weights(d, w.as_mut_ptr(), 4), AbstStatus::Ok);
        assert!((w[0] - 0.475).abs() < 1e-15 && (w[1] - 0.175).abs() < 1e-15);
        assert_eq!(abst_distribution_weights(d, w.as_mut_ptr(), 2), AbstStatus::Shape);

        let mut a = [0usize; 50];
        let mut b = [0usize; 50];
        assert_eq!(abst_distribution_draw(d, 9, 50, a.as_mut_ptr()), AbstStatus::Ok);
        assert_eq!(abst_distribution_draw(d, 9, 50, b.as_mut_ptr()), AbstStatus::Ok);
        assert_eq!(a, b);
        assert!(a.iter().all(|&i| i < 4));
        abst_distribution_free(d);
        abst_distribution_free(ptr::null_mut());
        assert_eq!(abst_distribution_len(ptr::null()), 0);
    }
}

#[test]
fn aggregate_handle_and_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("agg.abst").to_str().unwrap()).unwrap();
    let mut agg = ptr::null_mut();
    let snaps = [[1.0, -1.0, 0.5], [3.0, 1.0, 0.5], [2.0, 3.0, 2.0]];
    unsafe {
        assert_eq!(abst_aggregate_new(snaps[0].as_ptr(), 3, &mut agg), AbstStatus::Ok);
        for s in &snaps[1..] {
            assert_eq!(abst_aggregate_update(agg, s.as_ptr(), 3), AbstStatus::Ok);
        }
        assert_eq!(abst_aggregate_update(agg, snaps[0].as_ptr(), 2), AbstStatus::Shape);
        assert_eq!(abst_aggregate_count(agg), 3);
        assert_eq!(abst_aggregate_len(agg), 3);
        let mut mean = [0.0; 3];
        assert_eq!(abst_aggregate_params(agg, mean.as_mut_ptr(), 3), AbstStatus::Ok);
        assert_eq!(mean, [2.0, 1.0, 1.0]);

        assert_eq!(abst_aggregate_save(agg, path.as_ptr()), AbstStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(abst_aggregate_load(path.as_ptr(), &mut back), AbstStatus::Ok);
        assert_eq!(abst_aggregate_count(back), 3);
        let mut again = [0.0; 3];
        assert_eq!(abst_aggregate_params(back, again.as_mut_ptr(), 3), AbstStatus::Ok);
        assert_eq!(mean, again);
        abst_aggregate_free(back);
        abst_aggregate_free(agg);

        std::fs::write(dir.path().join("agg.abst"), b"ABST").unwrap();
        let mut broken = ptr::null_mut();
        assert_eq!(abst_aggregate_load(path.as_ptr(), &mut broken), AbstStatus::CorruptSnapshot);
        assert!(broken.is_null());
        assert!(last_error().contains("corrupt snapshot"));
    }
}

#[test]
fn experiment_entry_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CString::new(
        r#"{"epochs": 2, "iters_per_epoch": 3, "warmup_epochs": 1,
            "shift": {"height": 5, "width": 5, "source_count": 4, "target_count": 4},
            "model": {"height": 5, "width": 5}}"#,
    )
    .unwrap();
    let variant = CString::new("aggregation-only").unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let (mut s, mut a) = (-1.0, -1.0);
    unsafe {
        let status = abst_run_experiment(cfg.as_ptr(), variant.as_ptr(), 3, out.as_ptr(), &mut s, &mut a);
        assert_eq!(status, AbstStatus::Ok, "{}", last_error());
    }
    assert!((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&a));
    assert!(dir.path().join("report.csv").exists());

    let bad = CString::new(r#"{"epochs": 0}"#).unwrap();
    let unknown = CString::new("nope").unwrap();
    unsafe {
        let null = ptr::null_mut();
        assert_eq!(abst_run_experiment(bad.as_ptr(), ptr::null(), 0, ptr::null(), null, null), AbstStatus::Config);
        assert_eq!(
            abst_run_experiment(cfg.as_ptr(), unknown.as_ptr(), 0, ptr::null(), null, null),
            AbstStatus::Config
        );
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(abst_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include").join("adastudent.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for symbol in ["abst_run_experiment", "abst_distribution_free", "AbstAggregate", "ABST_STATUS_OK"] {
        assert!(text.contains(symbol), "header lacks {symbol}");
    }

    let lib = target_dir().join("libadastudent_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let build = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests").join("c").join("smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .expect("C compiler runs");
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));
    let run = Command::new(&exe).arg(dir.path().join("a.abst")).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
