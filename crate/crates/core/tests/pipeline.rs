mod common;

use nalgebra::{Point2, Point3, Vector3};
use proxy_depth::geom::{CameraIntrinsics, OrientedBox3D, Polygon2D, SegmentMap};
use proxy_depth::io::{write_depth, DepthFormat, EncodeParams, SceneBox, SceneCamera, SceneSpec};
use proxy_depth::pipeline::{
    box_proxy, boundary_proxy, check_boxes, prepare_dataset, BoundaryOptions, BoxCheckOptions, BoxOptions, DatasetOptions,
    FootprintMethod, ProxyMode,
};
use proxy_depth::raster::{render_depth, RenderScene};

use common::*;

fn rectangle_room(boxes: Vec<SceneBox>) -> SceneSpec {
    let footprint = Polygon2D::from_any_winding(vec![
        Point2::new(-3.0, -2.0),
        Point2::new(3.0, -2.0),
        Point2::new(3.0, 5.0),
        Point2::new(-3.0, 5.0),
    ])
    .unwrap();
    SceneSpec {
        camera: SceneCamera {
            fov_deg: 50.0,
            width: 128,
            height: 96,
        },
        footprint,
        y_min: -1.4,
        y_max: 1.2,
        include_floor: true,
        include_ceiling: true,
        far_m: 30.0,
        boxes,
    }
}

fn sofa() -> SceneBox {
    SceneBox {
        center: [0.8, -1.0, 3.2],
        half_extents: [0.9, 0.4, 0.45],
        yaw_deg: 20.0,
        label: Some("sofa".into()),
    }
}

fn room_options() -> BoundaryOptions {
    BoundaryOptions {
        include_ceiling: true,
        ..BoundaryOptions::default()
    }
}

#[test]
fn empty_room_comes_back_unchanged() {
    let room = rectangle_room(Vec::new());
    let depth = room.render_depth(None).unwrap();
    for method in [FootprintMethod::Profile, FootprintMethod::Grid] {
        let r = boundary_proxy(&depth, &BoundaryOptions { method, ..room_options() }).unwrap();
        let same = fraction(&r.condition, &depth, |c, d| (c - d).abs() <= 1e-3);
        match method {
            FootprintMethod::Profile => assert!(same >= 0.99, "profile matched {same}"),
            // cell-quantized walls only bound the depth, they do not reproduce it
            FootprintMethod::Grid => assert!(fraction(&r.condition, &depth, |c, d| c >= d - 0.05 * d) >= 0.99),
        }
    }
}

#[test]
fn sofa_is_removed_from_the_condition() {
    let empty = rectangle_room(Vec::new()).render_depth(None).unwrap();
    let furnished = rectangle_room(vec![sofa()]).render_depth(None).unwrap();
    assert!(fraction(&furnished, &empty, |f, e| f < e - 0.1) > 0.02, "sofa is visible");
    let r = boundary_proxy(&furnished, &room_options()).unwrap();
    assert!(fraction(&r.condition, &empty, |c, e| (c - e).abs() <= 1e-3) >= 0.99);
    assert!(fraction(&r.condition, &furnished, |c, f| c >= f - 1e-3) >= 0.99);
    assert!(r.scene.boxes.is_empty());
}

fn labelled_render(boxes: &[OrientedBox3D], cam: &CameraIntrinsics) -> (proxy_depth::geom::DepthMap, SegmentMap) {
    let (depth, labels) = render_boxes(boxes, cam, 30.0);
    let seg = SegmentMap::new(cam.width, cam.height, labels).unwrap();
    (depth, seg)
}

fn small_area() -> BoxOptions {
    BoxOptions {
        min_mask_area: 500,
        ..BoxOptions::default()
    }
}

#[test]
fn floating_cuboid_is_recovered() {
    let cam = CameraIntrinsics::from_fov(100.0, 512, 512).unwrap();
    // well off axis, so the side and bottom faces are not seen edge-on
    let truth = OrientedBox3D::new(Point3::new(2.2, 1.8, 3.0), Vector3::new(0.5, 0.3, 0.4), 0.0).unwrap();
    let (depth, seg) = labelled_render(std::slice::from_ref(&truth), &cam);
    let r = box_proxy(&depth, &seg, &small_area()).unwrap();
    assert_eq!(r.boxes.len(), 1);
    let fit = &r.boxes[0].bbox;
    assert!((fit.center - truth.center).norm() <= 1e-2, "{:?} {:?}", fit.center, fit.half_extents);
    assert!((fit.half_extents - truth.half_extents).amax() <= 1e-2, "{:?}", fit.half_extents);

    let mut scene = RenderScene::new(r.condition.data().iter().copied().fold(0.0, f32::max) as f64);
    scene.boxes.push(truth);
    let analytic = render_depth(&scene, &cam).unwrap();
    assert!(fraction(&r.condition, &analytic, |c, a| (c - a).abs() <= 1e-3) >= 0.99);
}

#[test]
fn disjoint_cuboids_composite_by_minimum() {
    let cam = CameraIntrinsics::from_fov(55.0, 256, 192).unwrap();
    let truth = [
        OrientedBox3D::new(Point3::new(-1.0, -0.6, 4.0), Vector3::new(0.4, 0.3, 0.5), 0.3).unwrap(),
        OrientedBox3D::new(Point3::new(1.1, -0.5, 4.5), Vector3::new(0.5, 0.35, 0.3), -0.4).unwrap(),
    ];
    let (depth, seg) = labelled_render(&truth, &cam);
    let r = box_proxy(&depth, &seg, &small_area()).unwrap();
    assert_eq!(r.boxes.len(), 2);
    let far = r.condition.data().iter().copied().fold(0.0, f32::max) as f64;
    let singles: Vec<_> = r
        .boxes
        .iter()
        .map(|b| {
            let mut s = RenderScene::new(far);
            s.boxes.push(b.bbox.clone());
            render_depth(&s, &cam).unwrap()
        })
        .collect();
    for (i, &c) in r.condition.data().iter().enumerate() {
        assert_eq!(c, singles[0].data()[i].min(singles[1].data()[i]), "pixel {i}");
    }
}

#[test]
fn box_check_passes_on_truth_and_fails_when_moved() {
    let scene = random_box_scene(&mut rng(61), 256, 256, 2000);
    let opts = BoxCheckOptions {
        proxy: BoxOptions {
            min_mask_area: 2000,
            ..BoxOptions::default()
        },
        ..BoxCheckOptions::default()
    };
    let report = check_boxes(&scene.depth, &scene.segments, &scene.boxes, &opts).unwrap();
    assert!(report.passed);
    assert!(report.boxes.iter().all(|m| m.iou >= 0.9));

    let mut moved = scene.boxes.clone();
    moved[0].center.x += 10.0;
    let report = check_boxes(&scene.depth, &scene.segments, &moved, &opts).unwrap();
    assert!(!report.passed);
    assert_eq!(report.boxes[0].iou, 0.0);
}

fn sample_dir(corrupt: bool) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (i, stem) in ["s0", "s1", "s2"].iter().enumerate() {
        std::fs::write(dir.path().join(format!("{stem}.txt")), format!("sample {i}")).unwrap();
        std::fs::write(dir.path().join(format!("{stem}.jpg")), b"jpeg").unwrap();
        let path = dir.path().join(format!("{stem}.depth.pfm"));
        if corrupt && i == 1 {
            std::fs::write(path, b"Pf\n3 3\n-1.0\n").unwrap();
        } else {
            let room = random_room(&mut rng(70 + i as u64), 96, 72);
            write_depth(&path, &room.empty.render_depth(None).unwrap(), DepthFormat::Pfm, EncodeParams::default()).unwrap();
        }
    }
    dir
}

#[test]
fn dataset_is_reproducible_and_tolerates_bad_samples() {
    let input = sample_dir(false);
    let out = tempfile::tempdir().unwrap();
    let run = |seed| {
        prepare_dataset(input.path(), out.path(), ProxyMode::Boundary, seed, &DatasetOptions::default()).unwrap()
    };
    let a = run(7);
    assert_eq!(a.entries.len(), 3);
    assert!(a.entries.iter().all(|e| std::path::Path::new(&e.condition_path).is_file()));
    assert_eq!(a.manifest_jsonl(), run(7).manifest_jsonl());
    assert_ne!(a.manifest_jsonl(), run(8).manifest_jsonl());

    let bad = sample_dir(true);
    let r = prepare_dataset(bad.path(), out.path(), ProxyMode::Boundary, 7, &DatasetOptions::default()).unwrap();
    assert_eq!(r.entries.len(), 2);
    assert_eq!(r.skipped.len(), 1);
    assert_eq!(r.skipped[0].stem, "s1");
    // the surviving samples keep their index-keyed field of view
    assert_eq!(r.entries[1].fov_deg, a.entries[2].fov_deg);
}
