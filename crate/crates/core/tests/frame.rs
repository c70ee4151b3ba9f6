mod common;

use common::{flood_fill_sizes, rng};
use evtrack_core::frame::{
    detect_blob, erode, label_components, render_frame, render_frames, threshold_band, AxisMap, BlobParams,
    Connectivity, Frame, FrameCameraSpec, Mask, Roi,
};
use evtrack_core::scene::SceneSpec;
use proptest::prelude::*;
use rand::Rng;

fn sizes_from_labels(labels: &[u32], count: usize) -> Vec<usize> {
    let mut sizes = vec![0; count];
    for &l in labels.iter().filter(|&&l| l > 0) {
        sizes[l as usize - 1] += 1;
    }
    sizes
}

fn arb_mask() -> impl Strategy<Value = Mask> {
    (1usize..40, 1usize..40, 0.0f64..1.0, any::<u64>()).prop_map(|(w, h, density, seed)| {
        let mut r = rng(seed);
        Mask {
            width: w,
            height: h,
            bits: (0..w * h).map(|_| r.random_bool(density)).collect(),
        }
    })
}

proptest! {
    #[test]
    fn labeling_matches_flood_fill(mask in arb_mask(), eight in any::<bool>()) {
        let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
        let (labels, count) = label_components(&mask, conn);
        prop_assert_eq!(sizes_from_labels(&labels, count), flood_fill_sizes(&mask, conn));
        for (l, on) in labels.iter().zip(&mask.bits) {
            prop_assert_eq!(*l > 0, *on);
        }
    }

    #[test]
    fn erosion_only_removes(mask in arb_mask(), radius in 0usize..3) {
        let e = erode(&mask, radius);
        prop_assert!(e.bits.iter().zip(&mask.bits).all(|(a, b)| !*a || *b));
        // a pixel survives iff its whole square is on and inside the mask
        let (w, h) = (mask.width as i64, mask.height as i64);
        let r = radius as i64;
        for y in 0..h {
            for x in 0..w {
                let full = (-r..=r).all(|dy| (-r..=r).all(|dx| {
                    let (nx, ny) = (x + dx, y + dy);
                    nx >= 0 && ny >= 0 && nx < w && ny < h && mask.bits[(ny * w + nx) as usize]
                }));
                prop_assert_eq!(e.bits[(y * w + x) as usize], full);
            }
        }
    }
}

#[test]
fn band_threshold_is_inclusive() {
    let mut f = Frame::new(4, 1, 0);
    f.pixels.copy_from_slice(&[9, 10, 20, 21]);
    let m = threshold_band(&f, Roi { x: 0, y: 0, width: 4, height: 1 }, 10, 20);
    assert_eq!(m.bits, vec![false, true, true, false]);
}

#[test]
fn blob_centroid_follows_the_ball() {
    let scene = SceneSpec::preset("standard").unwrap();
    let camera = FrameCameraSpec::default();
    let params = BlobParams {
        to_mm: camera.from_scene.inverse(),
        ..BlobParams::default()
    };
    for k in [0, 7, 100, 333] {
        let frame = render_frame(&scene, &camera, k);
        let d = detect_blob(&frame, &params).expect("ball visible");
        let truth = scene.center_at(camera.frame_time(k));
        // rasterizing a 22.5 px disc biases the centroid by well under a pixel
        assert!((d.mm[0] - truth[0]).abs() < 0.2 && (d.mm[1] - truth[1]).abs() < 0.2, "{d:?} vs {truth:?}");
    }
}

#[test]
fn salt_noise_does_not_move_the_blob() {
    let scene = SceneSpec::preset("standard").unwrap();
    let clean = FrameCameraSpec::default();
    let noisy = FrameCameraSpec {
        salt_per_frame: 2_000,
        ..clean
    };
    let params = BlobParams::default();
    let a = detect_blob(&render_frame(&scene, &clean, 40), &params).unwrap();
    let b = detect_blob(&render_frame(&scene, &noisy, 40), &params).unwrap();
    assert!((a.px[0] - b.px[0]).abs() < 0.5 && (a.px[1] - b.px[1]).abs() < 0.5);
}

#[test]
fn area_limits_and_roi_reject() {
    let scene = SceneSpec::preset("standard").unwrap();
    let frame = render_frame(&scene, &FrameCameraSpec::default(), 0);
    let tiny = BlobParams {
        blob_max_area: 10,
        ..BlobParams::default()
    };
    assert!(detect_blob(&frame, &tiny).is_none());
    let elsewhere = BlobParams {
        roi: Some(Roi { x: 0, y: 0, width: 50, height: 50 }),
        ..BlobParams::default()
    };
    assert!(detect_blob(&frame, &elsewhere).is_none());
}

#[test]
fn frame_count_and_times() {
    let camera = FrameCameraSpec::default();
    assert_eq!(camera.frame_count(10_000_000), 640);
    assert_eq!(camera.frame_time(64), 1_000_000);
    let mut scene = SceneSpec::preset("standard").unwrap();
    scene.duration = 100_000;
    let frames: Vec<Frame> = render_frames(&scene, &camera).unwrap().collect();
    assert_eq!(frames.len(), 7);
    assert!(frames.iter().all(|f| f.byte_len() == 640 * 480));
    assert!(render_frames(&scene, &FrameCameraSpec { fps: 0.0, ..camera }).is_err());
}

#[test]
fn axis_maps_compose_and_invert() {
    let a = AxisMap {
        scale: [2.0, -3.0],
        offset: [1.0, 5.0],
    };
    let b = AxisMap {
        scale: [0.5, 4.0],
        offset: [-2.0, 0.0],
    };
    let p = [3.0, 7.0];
    let q = b.after(&a).apply(p);
    assert_eq!(q, b.apply(a.apply(p)));
    let back = a.inverse().apply(a.apply(p));
    assert!((back[0] - p[0]).abs() < 1e-12 && (back[1] - p[1]).abs() < 1e-12);
}
