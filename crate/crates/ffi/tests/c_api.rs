use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use mqreid_core::cvfr::CvfrModel;
use mqreid_core::inference::{score_multi, FeatureRecord, Gallery, InferenceOptions, QuerySet};
use mqreid_core::io::{save_cvfr, save_vcc, write_features};
use mqreid_core::nn::{l2_normalize, SeededRng};
use mqreid_core::vcc::{VccArchitecture, VccModel};
use mqreid_core::Viewpoint;
use mqreid_ffi::*;

const DA: usize = 4;
const DV: usize = 3;

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn unit(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    l2_normalize(&rng.normal_vec(d, 1.0)).unwrap()
}

fn last_error() -> String {
    let p = mq_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn gallery_records(rng: &mut SeededRng) -> Vec<FeatureRecord> {
    (0..20)
        .map(|i| FeatureRecord {
            record_id: format!("g{i:02}"),
            vehicle_id: format!("v{}", i % 4),
            camera_id: format!("c{}", i % 5),
            viewpoint: Viewpoint::ALL[i % 3],
            appearance: unit(rng, DA),
            viewpoint_feature: unit(rng, DV),
        })
        .collect()
}

#[test]
fn multi_query_ranking_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SeededRng::new(3);
    let records = gallery_records(&mut rng);
    let path = dir.path().join("gallery.jsonl");
    write_features(&path, &records).unwrap();

    let mut g: *mut MqGallery = ptr::null_mut();
    assert_eq!(unsafe { mq_gallery_load(cpath(&path).as_ptr(), &mut g) }, MqStatus::Ok);
    assert_eq!(unsafe { mq_gallery_len(g) }, 20);

    let query: Vec<FeatureRecord> = Viewpoint::ALL
        .iter()
        .map(|&v| FeatureRecord {
            record_id: format!("q-{v}"),
            vehicle_id: "v1".into(),
            camera_id: "c1".into(),
            viewpoint: v,
            appearance: unit(&mut rng, DA),
            viewpoint_feature: unit(&mut rng, DV),
        })
        .collect();
    // the gallery round-trips through the file, so compare against the loaded copy
    let loaded = Gallery::new(mqreid_core::io::load_features(&path).unwrap()).unwrap();
    let expected = score_multi(
        &QuerySet::new(query.clone()).unwrap(),
        &loaded,
        None,
        &InferenceOptions::default(),
    )
    .unwrap();

    let camera = CString::new("c1").unwrap();
    let vehicle = CString::new("v1").unwrap();
    let qs: Vec<MqQuery> = query
        .iter()
        .map(|r| MqQuery {
            viewpoint: r.viewpoint.index() as i32,
            camera_id: camera.as_ptr(),
            appearance: r.appearance.as_ptr(),
            viewpoint_feature: r.viewpoint_feature.as_ptr(),
        })
        .collect();
    let mut idx = vec![0usize; 32];
    let mut scores = vec![0f64; 32];
    let mut n = 0usize;
    let status = unsafe {
        mq_rank_multi(g, ptr::null(), qs.as_ptr(), qs.len(), vehicle.as_ptr(), 1, idx.as_mut_ptr(), scores.as_mut_ptr(), 32, &mut n)
    };
    assert_eq!(status, MqStatus::Ok, "{}", last_error());
    // vehicle v1 seen by camera c1 is filtered out
    assert_eq!(n, expected.indices.len());
    assert!(n < 20);
    assert_eq!(&idx[..n], expected.indices.as_slice());
    assert_eq!(&scores[..n], expected.scores.as_slice());

    let mut buf = [0 as std::ffi::c_char; 8];
    let mut needed = 0usize;
    let status = unsafe { mq_gallery_record_id(g, idx[0], buf.as_mut_ptr(), buf.len(), &mut needed) };
    assert_eq!(status, MqStatus::Ok);
    assert_eq!(needed, 4);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), loaded.records()[idx[0]].record_id);

    // two views without a recovery model is a model error
    let status = unsafe {
        mq_rank_multi(g, ptr::null(), qs.as_ptr(), 2, vehicle.as_ptr(), 1, idx.as_mut_ptr(), scores.as_mut_ptr(), 32, &mut n)
    };
    assert_eq!(status, MqStatus::Model);
    assert!(last_error().contains("recovery model"));

    unsafe { mq_gallery_free(g) };
}

#[test]
fn embedding_and_recovery_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SeededRng::new(4);
    let arch = VccArchitecture { viewpoint_hidden: 5, viewpoint_dim: DV, appearance_hidden: 6, appearance_dim: DA };
    let vcc = VccModel::init(7, 3, &arch, &mut rng).unwrap();
    let vcc_path = dir.path().join("vcc.json");
    save_vcc(&vcc_path, &vcc).unwrap();
    let cvfr = CvfrModel::init(DA, 2, 5, &mut rng)
        .unwrap()
        .with_centroids([unit(&mut rng, DV), unit(&mut rng, DV), unit(&mut rng, DV)])
        .unwrap();
    let cvfr_path = dir.path().join("cvfr.json");
    save_cvfr(&cvfr_path, &cvfr).unwrap();

    let mut v: *mut MqVcc = ptr::null_mut();
    assert_eq!(unsafe { mq_vcc_load(cpath(&vcc_path).as_ptr(), &mut v) }, MqStatus::Ok);
    let (mut di, mut da, mut dv) = (0, 0, 0);
    assert_eq!(unsafe { mq_vcc_dims(v, &mut di, &mut da, &mut dv) }, MqStatus::Ok);
    assert_eq!((di, da, dv), (7, DA, DV));

    let x = rng.normal_vec(7, 1.0);
    let mut app = [0.0; DA];
    let mut vp = [0.0; DV];
    let mut view = -1;
    let status = unsafe { mq_vcc_embed(v, x.as_ptr(), x.len(), app.as_mut_ptr(), DA, vp.as_mut_ptr(), DV, &mut view) };
    assert_eq!(status, MqStatus::Ok, "{}", last_error());
    let want = vcc.embed(&x).unwrap();
    assert_eq!(app.to_vec(), want.appearance);
    assert_eq!(vp.to_vec(), want.viewpoint);
    assert_eq!(view as usize, vcc.predict_viewpoint(&x).unwrap().0.index());

    let status = unsafe { mq_vcc_embed(v, x.as_ptr(), x.len(), app.as_mut_ptr(), DA - 1, vp.as_mut_ptr(), DV, &mut view) };
    assert_eq!(status, MqStatus::BufferTooSmall);
    let status = unsafe { mq_vcc_embed(v, x.as_ptr(), 6, app.as_mut_ptr(), DA, vp.as_mut_ptr(), DV, &mut view) };
    assert_eq!(status, MqStatus::Data);
    unsafe { mq_vcc_free(v) };

    let mut c: *mut MqCvfr = ptr::null_mut();
    assert_eq!(unsafe { mq_cvfr_load(cpath(&cvfr_path).as_ptr(), &mut c) }, MqStatus::Ok);
    let mut out = [0.0; DA];
    let status = unsafe { mq_cvfr_recover(c, 0, app.as_ptr(), DA, 2, out.as_mut_ptr(), DA) };
    assert_eq!(status, MqStatus::Ok, "{}", last_error());
    assert_eq!(out.to_vec(), cvfr.recover_from(Viewpoint::Front, &app, Viewpoint::Rear).unwrap());
    assert_eq!(unsafe { mq_cvfr_recover(c, 0, app.as_ptr(), DA, 7, out.as_mut_ptr(), DA) }, MqStatus::InvalidArgument);
    unsafe { mq_cvfr_free(c) };
}

#[test]
fn list_metrics_on_a_worked_example() {
    // positives at ranks 1, 2 and 4; the first two share camera and viewpoint
    let cams: Vec<CString> = ["c1", "c1", "c3", "c2", "c4"].iter().map(|c| CString::new(*c).unwrap()).collect();
    let feats = [[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
    let pos = [1, 1, 0, 1, 0];
    let items: Vec<MqJudged> = (0..5)
        .map(|i| MqJudged { positive: pos[i], camera_id: cams[i].as_ptr(), viewpoint: 0, viewpoint_feature: feats[i].as_ptr() })
        .collect();
    let mut m = MqListMetrics {
        rank1: 0.0,
        rank5: 0.0,
        rank10: 0.0,
        average_precision: 0.0,
        inverse_negative_penalty: 0.0,
        cross_scene_precision: 0.0,
    };
    assert_eq!(unsafe { mq_list_metrics(items.as_ptr(), 5, 2, 0.5, &mut m) }, MqStatus::Ok);
    assert_eq!(m.rank1, 1.0);
    assert!((m.average_precision - 11.0 / 12.0).abs() < 1e-15);
    assert!((m.inverse_negative_penalty - 3.0 / 4.0).abs() < 1e-15);
    // the near-duplicate at rank 2 is dropped: positives at ranks 1 and 3 of 4
    assert!((m.cross_scene_precision - 5.0 / 6.0).abs() < 1e-15);

    let no_pos: Vec<MqJudged> = items.iter().map(|i| MqJudged { positive: 0, ..*i }).collect();
    assert_eq!(unsafe { mq_list_metrics(no_pos.as_ptr(), 5, 2, 0.5, &mut m) }, MqStatus::Ok);
    assert!(m.average_precision.is_nan());
    assert_eq!(m.rank1, 0.0);

    assert_eq!(unsafe { mq_list_metrics(items.as_ptr(), 5, 2, 0.0, &mut m) }, MqStatus::Usage);
}

#[test]
fn null_arguments_are_rejected() {
    let mut g: *mut MqGallery = ptr::null_mut();
    assert_eq!(unsafe { mq_gallery_load(ptr::null(), &mut g) }, MqStatus::InvalidArgument);
    assert!(last_error().contains("path"));
    let missing = CString::new("/nonexistent/gallery.jsonl").unwrap();
    assert_ne!(unsafe { mq_gallery_load(missing.as_ptr(), &mut g) }, MqStatus::Ok);
    assert!(g.is_null());
    assert_eq!(unsafe { mq_gallery_len(ptr::null()) }, 0);
    unsafe {
        mq_vcc_free(ptr::null_mut());
        mq_cvfr_free(ptr::null_mut());
        mq_gallery_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mqreid.h")).unwrap();
    for name in [
        "mq_last_error", "mq_vcc_load", "mq_vcc_free", "mq_vcc_dims", "mq_vcc_embed", "mq_cvfr_load",
        "mq_cvfr_free", "mq_cvfr_recover", "mq_gallery_load", "mq_gallery_free", "mq_gallery_len",
        "mq_gallery_record_id", "mq_rank_multi", "mq_list_metrics", "typedef struct MqGallery MqGallery",
        "MQ_STATUS_BUFFER_TOO_SMALL = 5",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
