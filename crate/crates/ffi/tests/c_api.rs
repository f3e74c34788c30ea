use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use roireg::interchange::write_case;
use roireg::synthetic::{generate_case, SyntheticSpec};
use roireg::Dims;
use roireg_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = roireg_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn write_synthetic_pair(dir: &Path) -> (CString, CString) {
    let spec = SyntheticSpec::translated(Dims::d2(64, 64).unwrap(), 3, &[-2.0, 4.0], 3);
    let case = generate_case(&spec).unwrap();
    write_case(&case.moving, &dir.join("moving")).unwrap();
    write_case(&case.fixed, &dir.join("fixed")).unwrap();
    (cstr(&dir.join("moving")), cstr(&dir.join("fixed")))
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(roireg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn full_pipeline_through_handles() {
    let tmp = tempfile::tempdir().unwrap();
    let (m, f) = write_synthetic_pair(tmp.path());
    unsafe {
        let mut moving = ptr::null_mut();
        let mut fixed = ptr::null_mut();
        assert_eq!(roireg_case_read(m.as_ptr(), &mut moving), RoiregStatus::Ok);
        assert_eq!(roireg_case_read(f.as_ptr(), &mut fixed), RoiregStatus::Ok);
        let mut n = 0;
        assert_eq!(roireg_case_num_masks(moving, &mut n), RoiregStatus::Ok);
        assert_eq!(n, 3);

        let cfg = roireg_match_config_default();
        assert_eq!((cfg.epsilon, cfg.min_area, cfg.max_area, cfg.max_overlap), (0.8, 200, 7000, 0.8));
        let mut pairing = ptr::null_mut();
        assert_eq!(roireg_match(moving, fixed, &cfg, &mut pairing), RoiregStatus::Ok);
        let mut k = 0;
        assert_eq!(roireg_pairing_len(pairing, &mut k), RoiregStatus::Ok);
        assert_eq!(k, 3);
        let mut info = RoiregPairInfo {
            moving_index: 0,
            fixed_index: 0,
            similarity: 0.0,
            moving_area: 0,
            fixed_area: 0,
        };
        assert_eq!(roireg_pairing_get(pairing, 0, &mut info), RoiregStatus::Ok);
        assert!(info.similarity > 0.8 && info.moving_area > 0);
        assert_eq!(roireg_pairing_get(pairing, 3, &mut info), RoiregStatus::OutOfRange);

        let pdir = cstr(&tmp.path().join("pairing"));
        assert_eq!(roireg_pairing_write(pairing, pdir.as_ptr()), RoiregStatus::Ok);
        let mut reread = ptr::null_mut();
        assert_eq!(roireg_pairing_read(pdir.as_ptr(), &mut reread), RoiregStatus::Ok);

        let mut before = RoiregEvalSummary {
            mean_dice: 0.0,
            tre: 0.0,
            num_rois: 0,
            dropped_rois: 0,
        };
        assert_eq!(roireg_evaluate(reread, ptr::null(), &mut before), RoiregStatus::Ok);

        let mut ddf = ptr::null_mut();
        let mut loss = f64::NAN;
        assert_eq!(roireg_fit_ddf(reread, ptr::null(), &mut ddf, &mut loss), RoiregStatus::Ok);
        assert!(loss.is_finite());
        let mut after = before;
        assert_eq!(roireg_evaluate(reread, ddf, &mut after), RoiregStatus::Ok);
        assert!(after.mean_dice > before.mean_dice);
        assert!(after.mean_dice > 0.95 && after.tre < 1.0);

        let mut dims = [0usize; 3];
        let mut ndim = 0;
        assert_eq!(roireg_ddf_dims(ddf, dims.as_mut_ptr(), &mut ndim), RoiregStatus::Ok);
        assert_eq!((ndim, dims[0], dims[1]), (2, 64, 64));
        let mut buf = vec![0.0; 2 * 64 * 64];
        assert_eq!(roireg_ddf_copy(ddf, buf.as_mut_ptr(), 10), RoiregStatus::BufferTooSmall);
        assert!(last_error().contains("10"));
        assert_eq!(roireg_ddf_copy(ddf, buf.as_mut_ptr(), buf.len()), RoiregStatus::Ok);
        assert!(buf.iter().any(|&v| v != 0.0));

        let ddir = cstr(&tmp.path().join("ddf"));
        assert_eq!(roireg_ddf_write(ddf, ddir.as_ptr()), RoiregStatus::Ok);
        let mut ddf2 = ptr::null_mut();
        assert_eq!(roireg_ddf_read(ddir.as_ptr(), &mut ddf2), RoiregStatus::Ok);
        let mut rt = RoiregRoundtripSummary {
            num_points: 0,
            skipped: 0,
            integer_field: true,
            max_abs_error: -1.0,
        };
        assert_eq!(roireg_roundtrip(ddf2, &mut rt), RoiregStatus::Ok);
        assert_eq!(rt.num_points, 64 * 64);
        assert!(rt.max_abs_error <= 0.5 + 1e-9);

        roireg_ddf_free(ddf2);
        roireg_ddf_free(ddf);
        roireg_pairing_free(reread);
        roireg_pairing_free(pairing);
        roireg_case_free(fixed);
        roireg_case_free(moving);
    }
}

#[test]
fn errors_become_status_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = cstr(&tmp.path().join("nope"));
    unsafe {
        let mut case = ptr::null_mut();
        assert_eq!(roireg_case_read(missing.as_ptr(), &mut case), RoiregStatus::Io);
        assert!(case.is_null());
        assert!(last_error().contains("manifest.json"));
        assert_eq!(roireg_case_read(ptr::null(), &mut case), RoiregStatus::NullPointer);

        let mut n = 0;
        assert_eq!(roireg_case_num_masks(ptr::null(), &mut n), RoiregStatus::NullPointer);

        let (m, f) = write_synthetic_pair(tmp.path());
        let (mut moving, mut fixed) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(roireg_case_read(m.as_ptr(), &mut moving), RoiregStatus::Ok);
        assert!(roireg_last_error().is_null());
        assert_eq!(roireg_case_read(f.as_ptr(), &mut fixed), RoiregStatus::Ok);

        let mut cfg = roireg_match_config_default();
        cfg.epsilon = 1.5;
        let mut pairing = ptr::null_mut();
        assert_eq!(roireg_match(moving, fixed, &cfg, &mut pairing), RoiregStatus::InvalidArgument);

        // a filter that rejects every candidate yields an empty pairing, not an error
        cfg.epsilon = 0.8;
        cfg.min_area = 100_000;
        cfg.max_area = 200_000;
        assert_eq!(roireg_match(moving, fixed, &cfg, &mut pairing), RoiregStatus::Ok);
        let mut k = 99;
        roireg_pairing_len(pairing, &mut k);
        assert_eq!(k, 0);
        let mut ddf = ptr::null_mut();
        assert_eq!(
            roireg_fit_ddf(pairing, ptr::null(), &mut ddf, ptr::null_mut()),
            RoiregStatus::EmptyPairing
        );
        assert!(ddf.is_null());

        let mut bad = roireg_fit_config_default();
        bad.step_size = -1.0;
        let (good_pairing, mut good) = (pairing, ptr::null_mut());
        assert_eq!(roireg_match(moving, fixed, ptr::null(), &mut good), RoiregStatus::Ok);
        assert_eq!(roireg_fit_ddf(good, &bad, &mut ddf, ptr::null_mut()), RoiregStatus::InvalidArgument);

        roireg_pairing_free(good);
        roireg_pairing_free(good_pairing);
        roireg_case_free(moving);
        roireg_case_free(fixed);
        roireg_case_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_api() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/roireg.h");
    let text = std::fs::read_to_string(&header).expect("header is generated by the build script");
    for name in [
        "roireg_version",
        "roireg_last_error",
        "roireg_case_read",
        "roireg_case_free",
        "roireg_match",
        "roireg_pairing_get",
        "roireg_fit_ddf",
        "roireg_ddf_copy",
        "roireg_evaluate",
        "roireg_roundtrip",
        "typedef struct RoiregCase RoiregCase;",
        "ROIREG_STATUS_NON_FINITE_LOSS = 7",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }

    // compile the header as C when a compiler is around
    let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
    else {
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
