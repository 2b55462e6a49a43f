use std::ffi::{CStr, CString};
use std::ptr;

use streamtrack::cli::{simulate, RunConfig, DETECTIONS_FILE, GT_FILE, POSES_FILE};
use streamtrack_ffi::*;

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(st_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn fixture_round_trip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(
        "schema_version = 1\nframes = 30\nn_objects = 4\nego_speed = 0.4\nego_yaw_rate = 0.01\n",
    )
    .unwrap();
    simulate(&cfg, dir.path()).unwrap();

    let dets = cstr(&dir.path().join(DETECTIONS_FILE));
    let poses = cstr(&dir.path().join(POSES_FILE));
    let gt_path = cstr(&dir.path().join(GT_FILE));
    let out_path = cstr(&dir.path().join("hyp.txt"));
    let car = CString::new("Car").unwrap();
    unsafe {
        let mut seq = ptr::null_mut();
        assert_eq!(
            st_sequence_load(dets.as_ptr(), poses.as_ptr(), &mut seq),
            StStatus::Ok
        );
        let mut hyp = ptr::null_mut();
        assert_eq!(st_sequence_run(seq, &mut hyp), StStatus::Ok);
        assert_eq!(st_tracks_count(hyp), 4);
        assert_eq!(
            st_tracks_write_kitti(hyp, out_path.as_ptr(), car.as_ptr()),
            StStatus::Ok
        );

        let mut gt = ptr::null_mut();
        assert_eq!(
            st_tracks_load_kitti(gt_path.as_ptr(), ptr::null(), &mut gt),
            StStatus::Ok
        );
        let mut written = ptr::null_mut();
        assert_eq!(
            st_tracks_load_kitti(out_path.as_ptr(), car.as_ptr(), &mut written),
            StStatus::Ok
        );

        let mut r = StMotReport::default();
        assert_eq!(st_evaluate(gt, hyp, 0.5, &mut r), StStatus::Ok);
        assert!((r.mota - 1.0).abs() < 1e-9, "{r:?}");
        assert_eq!(st_evaluate(gt, written, 0.5, &mut r), StStatus::Ok);
        assert!((r.mota - 1.0).abs() < 1e-9, "{r:?}");
        assert_eq!(r.ids, 0);

        st_tracks_free(written);
        st_tracks_free(gt);
        st_tracks_free(hyp);
        st_sequence_free(seq);
    }
}

#[test]
fn error_codes() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut seq = ptr::null_mut();
        let missing = cstr(&dir.path().join("nope.txt"));
        assert_eq!(
            st_sequence_load(missing.as_ptr(), ptr::null(), &mut seq),
            StStatus::Io
        );
        assert!(last_error().contains("nope.txt"));

        let bad = dir.path().join("bad.txt");
        std::fs::write(
            &bad,
            "format streamtrack-detections 1\nframes 10\ntau 3\n0 -1 0.5 1 2\n",
        )
        .unwrap();
        let bad = cstr(&bad);
        assert_eq!(
            st_sequence_load(bad.as_ptr(), ptr::null(), &mut seq),
            StStatus::Parse
        );
        assert!(last_error().contains(":4:"), "{}", last_error());

        assert_eq!(st_sequence_new(10, 0, &mut seq), StStatus::InvalidArgument);
        assert_eq!(st_sequence_new(10, 3, &mut seq), StStatus::Ok);
        let b = StBox {
            x: 0.0,
            y: 1.0,
            z: 10.0,
            w: 1.6,
            l: 3.9,
            h: 1.5,
            ry: 0.0,
        };
        let neg = StBox { w: -1.0, ..b };
        assert_eq!(
            st_sequence_add_detection(seq, 0, &neg, 0.5, ptr::null(), ptr::null()),
            StStatus::InvalidArgument
        );
        assert_eq!(
            st_sequence_add_detection(seq, 0, &b, 1.5, ptr::null(), ptr::null()),
            StStatus::InvalidArgument
        );
        let bad_cue = StCue {
            co: 2.0,
            ..Default::default()
        };
        assert_eq!(
            st_sequence_add_detection(seq, 0, &b, 0.5, &bad_cue, ptr::null()),
            StStatus::InvalidArgument
        );
        assert_eq!(
            st_sequence_add_detection(seq, 0, &b, 0.5, ptr::null(), ptr::null()),
            StStatus::Ok
        );

        let skew = [1.0, 0.5, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert_eq!(
            st_sequence_set_pose(seq, 0, skew.as_ptr()),
            StStatus::InvalidArgument
        );
        let id = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert_eq!(
            st_sequence_set_pose(seq, 42, id.as_ptr()),
            StStatus::OutOfRange
        );
        assert_eq!(st_sequence_set_pose(seq, 0, id.as_ptr()), StStatus::Ok);

        let mut tracks = ptr::null_mut();
        assert_eq!(st_sequence_run(seq, &mut tracks), StStatus::MissingPose);
        assert!(tracks.is_null());
        st_sequence_free(seq);

        let mut empty = ptr::null_mut();
        assert_eq!(st_sequence_new(5, 2, &mut empty), StStatus::Ok);
        assert_eq!(st_sequence_run(empty, &mut tracks), StStatus::Ok);
        assert_eq!(st_tracks_count(tracks), 0);
        let mut r = StMotReport::default();
        assert_eq!(
            st_evaluate(tracks, tracks, 0.5, &mut r),
            StStatus::EmptyGroundTruth
        );
        assert_eq!(
            st_evaluate(tracks, tracks, 0.0, &mut r),
            StStatus::InvalidArgument
        );
        let mut id = 0u64;
        let mut len = 0usize;
        assert_eq!(
            st_tracks_info(tracks, 0, &mut id, &mut len),
            StStatus::OutOfRange
        );
        let out = cstr(&dir.path().join("o.txt"));
        let spaced = CString::new("Big Car").unwrap();
        assert_eq!(
            st_tracks_write_kitti(tracks, out.as_ptr(), spaced.as_ptr()),
            StStatus::InvalidArgument
        );
        st_tracks_free(tracks);
        st_sequence_free(empty);
        assert_eq!(st_tracks_count(ptr::null()), 0);
    }
}

#[test]
fn iou_entry_points() {
    let a = StBox {
        x: 0.0,
        y: 1.0,
        z: 10.0,
        w: 2.0,
        l: 4.0,
        h: 1.5,
        ry: 0.0,
    };
    let b = StBox { x: 1.0, ..a };
    let mut v = 0.0;
    unsafe {
        assert_eq!(st_box_iou_bev(&a, &b, &mut v), StStatus::Ok);
        // Length along x at ry = 0: overlap 3 × 2 over union 10.
        assert!((v - 0.6).abs() < 1e-12);
        assert_eq!(st_box_iou_3d(&a, &b, &mut v), StStatus::Ok);
        assert!((v - 0.6).abs() < 1e-12);
        assert_eq!(
            st_box_iou_bev(ptr::null(), &b, &mut v),
            StStatus::NullPointer
        );
        assert!(!last_error().is_empty());
        let ver = CStr::from_ptr(st_version()).to_str().unwrap();
        assert_eq!(ver, env!("CARGO_PKG_VERSION"));
    }
}
