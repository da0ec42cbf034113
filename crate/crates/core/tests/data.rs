//! Ingestion, preprocessing and synthetic ground truth.

use std::path::{Path, PathBuf};

use pseudoloc::data::{
    depth_to_millimetres, frame_to_pointset, load_depth_png, load_frame, load_frame_paths, load_split,
    preprocess_image, write_frame, write_scene, FramePaths,
};
use pseudoloc::geometry::depth_to_pointcloud;
use pseudoloc::pointcloud::random_sample;
use pseudoloc::pose::rotation_error;
use pseudoloc::synth::{reprojection_gap, synth_frames_at, synth_scene, SynthScene};
use pseudoloc::{CameraIntrinsics, DepthMap, Error};

fn fixture_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini_scene")
}

fn expected() -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(fixture_root().join("expected.json")).unwrap()).unwrap()
}

fn fixture_k(exp: &serde_json::Value) -> CameraIntrinsics {
    serde_json::from_value(exp["intrinsics"].clone()).unwrap()
}

fn small_k() -> CameraIntrinsics {
    CameraIntrinsics::new(146.25, 146.25, 80.0, 60.0, 160, 120).unwrap()
}

#[test]
fn golden_scene_matches_expected_values() {
    let exp = expected();
    let k = fixture_k(&exp);
    for f in exp["frames"].as_array().unwrap() {
        let seq = f["sequence"].as_str().unwrap();
        let dir = fixture_root().join("office").join(seq);
        let paths = FramePaths::in_dir(&dir, f["index"].as_u64().unwrap() as usize);
        let frame = load_frame_paths(&paths, &k).unwrap();
        assert_eq!(frame.scene, "office");
        assert_eq!(frame.sequence, seq);
        let (_, raw) = load_depth_png(&paths.depth).unwrap();
        let mm: Vec<u16> = f["depth_mm"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap() as u16)
            .collect();
        assert_eq!(raw, mm);
        for (i, &m) in mm.iter().enumerate() {
            let (u, v) = (i % k.width, i / k.width);
            match m {
                0 | 65535 => assert_eq!(frame.depth.at(u, v), None),
                _ => assert_eq!(frame.depth.at(u, v), Some(f64::from(m) / 1000.0)),
            }
        }
        let t: Vec<f64> = f["translation"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        let q: Vec<f64> = f["quaternion"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        for i in 0..3 {
            assert!((frame.pose.t[i] - t[i]).abs() < 1e-12);
            assert!((frame.pose.q.v()[i] - q[i + 1]).abs() < 1e-12);
        }
        assert!((frame.pose.q.u() - q[0]).abs() < 1e-12);
        let px: Vec<u8> = f["rgb_first_pixel"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap() as u8)
            .collect();
        assert_eq!(frame.rgb.pixel(0, 0).to_vec(), px);
    }
}

#[test]
fn golden_scene_split() {
    let split = load_split(&fixture_root(), "office").unwrap();
    assert_eq!(split.train.len(), 2);
    assert_eq!(split.test.len(), 1);
    split.validate_usable().unwrap();
}

#[test]
fn write_and_reload_round_trip() {
    let k = small_k();
    let frame = synth_frames_at(2, &[0.3], 4, &k).unwrap().remove(0);
    let dir = tempfile::tempdir().unwrap();
    let paths = write_frame(&frame, dir.path()).unwrap();
    let back = load_frame_paths(&paths, &k).unwrap();
    assert_eq!(
        depth_to_millimetres(&back.depth).unwrap(),
        depth_to_millimetres(&frame.depth).unwrap()
    );
    assert_eq!(back.rgb, frame.rgb);
    assert_eq!(back.index, 4);
    for i in 0..3 {
        assert!((back.pose.t[i] - frame.pose.t[i]).abs() < 1e-12);
    }
    assert!(rotation_error(&back.pose, &frame.pose) < 1e-9);
    assert!(back.pose.q.dot(&frame.pose.q).abs() > 1.0 - 1e-12);
    // Writing the reloaded frame reproduces the files byte for byte.
    let dir2 = tempfile::tempdir().unwrap();
    let p2 = write_frame(&back, dir2.path()).unwrap();
    for (a, b) in [(&paths.depth, &p2.depth), (&paths.rgb, &p2.rgb)] {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
}

#[test]
fn malformed_files_are_named_in_errors() {
    let k = small_k();
    let frame = synth_frames_at(2, &[0.1], 0, &k).unwrap().remove(0);
    let dir = tempfile::tempdir().unwrap();
    let paths = write_frame(&frame, dir.path()).unwrap();

    std::fs::write(&paths.depth, b"not a png").unwrap();
    let err = load_frame_paths(&paths, &k).unwrap_err();
    assert!(matches!(err, Error::Ingestion { .. }));
    assert!(err.to_string().contains("frame-000000.depth.png"), "{err}");

    // An 8-bit image where 16-bit depth is expected.
    std::fs::copy(&paths.rgb, &paths.depth).unwrap();
    let err = load_frame_paths(&paths, &k).unwrap_err();
    assert!(err.to_string().contains("16-bit"), "{err}");

    let paths = write_frame(&frame, dir.path()).unwrap();
    std::fs::write(&paths.pose, "1 0 0 0 0 1 0 0 0 0 2 0 0 0 0 1").unwrap();
    let err = load_frame_paths(&paths, &k).unwrap_err();
    assert!(matches!(err, Error::Ingestion { .. }));
    assert!(err.to_string().contains("pose.txt"), "{err}");

    let wrong_k = CameraIntrinsics::seven_scenes();
    let paths = write_frame(&frame, dir.path()).unwrap();
    assert!(load_frame(&paths.rgb, &paths.depth, &paths.pose, &wrong_k).is_err());
}

#[test]
fn pointset_is_lift_then_sample() {
    let k = CameraIntrinsics::seven_scenes();
    let frame = synth_scene(5, 1).unwrap().remove(0);
    let a = frame_to_pointset(&frame, &k, 1024, 77).unwrap();
    let b = random_sample(&depth_to_pointcloud(&frame.depth, &k).unwrap(), 1024, 77).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 1024);
    assert!(a.points.iter().all(|p| p[2] > 0.0));

    let mut empty = frame.clone();
    empty.depth = DepthMap::new(640, 480, vec![0.0; 640 * 480], vec![false; 640 * 480]).unwrap();
    assert_eq!(
        frame_to_pointset(&empty, &k, 1024, 0).unwrap_err().category(),
        "degenerate-input"
    );
}

#[test]
fn preprocessing_is_deterministic() {
    let frame = synth_scene(6, 1).unwrap().remove(0);
    assert_eq!(
        preprocess_image(&frame.rgb, true, 3).unwrap(),
        preprocess_image(&frame.rgb, true, 3).unwrap()
    );
    assert_eq!(
        preprocess_image(&frame.rgb, false, 3).unwrap(),
        preprocess_image(&frame.rgb, false, 4).unwrap()
    );
}

#[test]
fn synthetic_depth_lands_on_the_geometry() {
    let k = CameraIntrinsics::seven_scenes();
    let scene = SynthScene::new(11);
    for (i, s) in [0.0, 0.37, 1.0].into_iter().enumerate() {
        let f = scene.frame(s, i, &k).unwrap();
        let cloud = depth_to_pointcloud(&f.depth, &k).unwrap();
        assert_eq!(cloud.len(), k.width * k.height);
        let worst = cloud
            .points
            .iter()
            .step_by(37)
            .map(|p| scene.distance_to_surfaces(f.pose.transform_point(*p)))
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "frame at {s}: {worst}");
    }
}

#[test]
fn overlapping_frames_agree_in_world_frame() {
    let k = CameraIntrinsics::seven_scenes();
    let scene = SynthScene::new(12);
    let (a, b) = (scene.frame(0.40, 0, &k).unwrap(), scene.frame(0.42, 1, &k).unwrap());
    let cloud = depth_to_pointcloud(&a.depth, &k).unwrap();
    let gaps: Vec<f64> = cloud
        .points
        .iter()
        .step_by(53)
        .filter_map(|p| reprojection_gap(&scene, &b.pose, &k, a.pose.transform_point(*p)))
        .collect();
    assert!(gaps.len() > 1000, "overlap too small: {}", gaps.len());
    let close = gaps.iter().filter(|g| **g < 1e-3).count();
    assert!(close as f64 >= 0.95 * gaps.len() as f64, "{close} of {}", gaps.len());
}

#[test]
fn synthetic_scenes_are_seeded() {
    let a = synth_scene(3, 2).unwrap();
    assert_eq!(a, synth_scene(3, 2).unwrap());
    assert_ne!(a[0].pose, synth_scene(4, 2).unwrap()[0].pose);
    let one = synth_scene(3, 1).unwrap();
    assert_eq!(one.len(), 1);
    assert!(one[0].depth.valid_count() > 0);
}

#[test]
fn exported_scene_reloads() {
    let k = small_k();
    let train = synth_frames_at(1, &[0.0, 0.5, 1.0], 0, &k).unwrap();
    let test = synth_frames_at(1, &[0.25], 3, &k).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), "synthetic", &train, &test).unwrap();
    let split = load_split(dir.path(), "synthetic").unwrap();
    assert_eq!((split.train.len(), split.test.len()), (3, 1));
    for p in split.train.iter().chain(&split.test) {
        load_frame_paths(p, &k).unwrap();
    }
}
