use std::ffi::{CStr, CString};
use std::ptr;

use sacc_core::data::{generate_toy_scene, save_sample, ToyConfig};
use sacc_core::model::{ModelConfig, ModelState};
use sacc_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    model: CString,
    scene: CString,
    out_png: CString,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig {
        lay_widths: vec![8, 8, 8],
        obj_widths: vec![4, 8],
        ..ModelConfig::default()
    };
    let model = dir.path().join("m.sacc");
    ModelState::init(cfg).unwrap().save(&model).unwrap();
    let scene = dir.path().join("scene");
    save_sample(&scene, &generate_toy_scene(5, 0, &ToyConfig::default()).unwrap()).unwrap();
    let c = |p: std::path::PathBuf| CString::new(p.to_str().unwrap()).unwrap();
    Fixture {
        model: c(model),
        scene: c(scene),
        out_png: c(dir.path().join("out.png")),
        _dir: dir,
    }
}

fn last_error() -> String {
    let p = sacc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn full_round_trip_through_the_c_abi() {
    let f = fixture();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(sacc_model_load(f.model.as_ptr(), &mut model), SaccStatus::Ok);
        let mut scene = ptr::null_mut();
        assert_eq!(sacc_scene_load(f.scene.as_ptr(), &mut scene), SaccStatus::Ok);
        let (mut w, mut h) = (0usize, 0usize);
        assert_eq!(sacc_scene_size(scene, &mut w, &mut h), SaccStatus::Ok);
        assert_eq!((w, h), (128, 128));
        let mut asset = ptr::null_mut();
        assert_eq!(sacc_asset_extract(model, scene, 0, &mut asset), SaccStatus::Ok);

        let mut t = SaccTransform {
            s: 0.0,
            tx: 0.0,
            ty: 0.0,
        };
        assert_eq!(sacc_infer_transform(model, scene, asset, 3, &mut t), SaccStatus::Ok);
        assert!(t.s > 0.0 && t.s.is_finite());
        let mut t2 = t;
        sacc_infer_transform(model, scene, asset, 3, &mut t2);
        assert_eq!(t, t2);

        let mut buf = vec![0f32; 3 * w * h];
        assert_eq!(
            sacc_compose(scene, asset, &t, buf.as_mut_ptr(), buf.len()),
            SaccStatus::Ok
        );
        assert!(buf.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(
            sacc_compose(scene, asset, &t, buf.as_mut_ptr(), 7),
            SaccStatus::InvalidArgument
        );
        assert!(last_error().contains("need"));
        assert_eq!(sacc_compose_png(scene, asset, &t, f.out_png.as_ptr()), SaccStatus::Ok);
        assert!(std::path::Path::new(f.out_png.to_str().unwrap()).exists());

        sacc_asset_free(asset);
        sacc_scene_free(scene);
        sacc_model_free(model);
    }
}

#[test]
fn errors_are_reported_not_panicked() {
    let f = fixture();
    unsafe {
        let mut model = ptr::null_mut();
        let missing = CString::new("/nonexistent/model.sacc").unwrap();
        assert_eq!(sacc_model_load(missing.as_ptr(), &mut model), SaccStatus::Io);
        assert!(model.is_null());
        assert!(last_error().contains("nonexistent"));
        assert_eq!(sacc_model_load(ptr::null(), &mut model), SaccStatus::NullPointer);
        assert_eq!(
            sacc_model_load(f.model.as_ptr(), ptr::null_mut()),
            SaccStatus::NullPointer
        );
        // A scene directory is not a checkpoint.
        assert_eq!(sacc_model_load(f.scene.as_ptr(), &mut model), SaccStatus::Io);

        let mut scene = ptr::null_mut();
        assert_eq!(sacc_scene_load(f.scene.as_ptr(), &mut scene), SaccStatus::Ok);
        let mut asset = ptr::null_mut();
        assert_eq!(
            sacc_asset_extract(ptr::null(), scene, 0, &mut asset),
            SaccStatus::NullPointer
        );
        let bad = SaccTransform {
            s: -1.0,
            tx: 0.0,
            ty: 0.0,
        };
        let mut buf = vec![0f32; 3 * 128 * 128];
        assert_eq!(
            sacc_compose(scene, ptr::null(), &bad, buf.as_mut_ptr(), buf.len()),
            SaccStatus::NullPointer
        );
        sacc_scene_free(scene);
        sacc_model_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sacc.h")).unwrap();
    for sym in [
        "sacc_model_load",
        "sacc_scene_load",
        "sacc_asset_extract",
        "sacc_infer_transform",
        "sacc_compose",
        "sacc_last_error",
        "SACC_STATUS_OK",
        "typedef struct SaccModel SaccModel",
    ] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
    let v = unsafe { CStr::from_ptr(sacc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
