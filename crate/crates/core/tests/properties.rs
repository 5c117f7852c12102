use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

use sparsemono::evalkit::{ap_r40, iou3d, rotated_bev_iou, BevBox, DifficultyRule};
use sparsemono::geometry::{
    alpha_from_rotation, angle_diff, apply_horizontal_offset, box3d_corners, iou2d,
    rotation_from_alpha, transform_center, viewing_angle, wrap_angle, BBox2D, Dims, Label3D,
    RigidTransform, Vec3,
};
use sparsemono::pbf::{
    depth_nll, initialize_prototypes, proto_score, select_pseudo_labels, update_prototype,
    BankConfig, FeatureVec, PbfConfig, Prediction,
};
use sparsemono::rapa::{augment_scene, find_placement, RapaConfig, SceneRef};
use sparsemono::simharness::{
    build_patch_library, dilate, erode, render_scene_image, run_experiment, ExperimentConfig,
};

fn transform() -> impl Strategy<Value = RigidTransform> {
    (-PI..PI, -PI..PI, -PI..PI, -10.0..10.0, -2.0..2.0, -10.0..10.0f64).prop_map(|(r, p, y, tx, ty, tz)| {
        let rot = Rotation3::from_euler_angles(r, p, y).into_inner();
        RigidTransform::new(rot, Vector3::new(tx, ty, tz)).unwrap()
    })
}

fn point() -> impl Strategy<Value = Vec3> {
    (-30.0..30.0, 0.5..2.5, 2.0..65.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn label(x: f64, z: f64, dims: Dims, ry: f64) -> Label3D {
    Label3D {
        class_name: "Car".into(),
        truncation: 0.0,
        occlusion: 0,
        alpha: 0.0,
        bbox2d: BBox2D::new(0.0, 0.0, 10.0, 50.0),
        dims,
        location: Vec3::new(x, 1.6, z),
        rotation_y: ry,
        score: None,
    }
}

fn dims() -> impl Strategy<Value = Dims> {
    (0.5..4.0, 0.5..3.0, 0.5..12.0f64).prop_map(|(h, w, l)| Dims { h, w, l })
}

fn bev() -> impl Strategy<Value = BevBox> {
    (-5.0..5.0, -5.0..5.0, 0.5..3.0, 0.5..6.0, -PI..PI).prop_map(|(x, z, w, l, y)| BevBox::new(x, z, w, l, y))
}

fn bbox() -> impl Strategy<Value = BBox2D> {
    (0.0..500.0, 0.0..300.0, 1.0..200.0, 1.0..200.0f64)
        .prop_map(|(l, t, w, h)| BBox2D::new(l, t, l + w, t + h))
}

fn feature(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, dim).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn transform_identity_and_composition(c in point(), a in transform(), b in transform(), d in transform()) {
        let same = transform_center(&c, &a, &a).unwrap();
        prop_assert!((same - c).amax() <= 1e-9);
        let ab = transform_center(&c, &a, &b).unwrap();
        let abd = transform_center(&ab, &b, &d).unwrap();
        let ad = transform_center(&c, &a, &d).unwrap();
        prop_assert!((abd - ad).amax() <= 1e-9);
    }

    #[test]
    fn alpha_survives_relocation(c in point(), alpha in -PI..PI, offset in -5.0..5.0f64) {
        let moved = apply_horizontal_offset(&c, offset);
        let theta = viewing_angle(moved.x, moved.z).unwrap();
        let ry = rotation_from_alpha(alpha, theta);
        prop_assert!(angle_diff(alpha_from_rotation(ry, theta), alpha).abs() <= 1e-9);
        prop_assert!(ry > -PI && ry <= PI);
    }

    #[test]
    fn wrap_lands_in_half_open_interval(a in -100.0..100.0f64) {
        let w = wrap_angle(a);
        prop_assert!(w > -PI && w <= PI);
        prop_assert!(((a - w) / (2.0 * PI) - ((a - w) / (2.0 * PI)).round()).abs() < 1e-9);
    }

    #[test]
    fn corner_edges_keep_their_lengths(d in dims(), ry in -PI..PI, x in -20.0..20.0, z in 5.0..50.0f64) {
        let c = box3d_corners(&label(x, z, d, ry));
        let len = |i: usize, j: usize| (c[i] - c[j]).norm();
        prop_assert!((len(0, 1) - d.w).abs() <= 1e-9);
        prop_assert!((len(1, 2) - d.l).abs() <= 1e-9);
        prop_assert!((len(0, 4) - d.h).abs() <= 1e-9);
        prop_assert!((len(2, 3) - d.w).abs() <= 1e-9);
        prop_assert!((len(3, 0) - d.l).abs() <= 1e-9);
    }

    #[test]
    fn iou2d_symmetric_and_reflexive(a in bbox(), b in bbox()) {
        prop_assert!((iou2d(&a, &b) - iou2d(&b, &a)).abs() <= 1e-15);
        prop_assert!((iou2d(&a, &a) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn prototype_update_is_a_contraction(p in feature(16), f in feature(16), beta in 0.0..=1.0f64) {
        let (pv, fv) = (FeatureVec::new(p.clone()), FeatureVec::new(f.clone()));
        let q = update_prototype(&pv, &fv, beta).unwrap();
        let before = dist(&p, &f);
        let after = dist(q.values(), &f);
        prop_assert!((after - (1.0 - beta) * before).abs() <= 1e-12 * (1.0 + before));
        // on the segment: |p - q| + |q - f| = |p - f|
        prop_assert!((dist(&p, q.values()) + after - before).abs() <= 1e-12 * (1.0 + before));
    }

    #[test]
    fn proto_score_ignores_positive_scale(
        protos in prop::collection::vec(feature(8), 1..5),
        f in feature(8),
        c in 1e-3..1e3f64,
    ) {
        let cfg = BankConfig { tau_new: 0.99, ..BankConfig::default() };
        let bank = initialize_prototypes(protos.into_iter().map(FeatureVec::new), cfg).unwrap();
        let fv = FeatureVec::new(f);
        let s = proto_score(&fv, &bank).unwrap();
        prop_assert!((proto_score(&fv.scaled(c), &bank).unwrap() - s).abs() <= 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
    }

    #[test]
    fn selection_partitions_and_is_antitone(
        protos in prop::collection::vec(feature(6), 1..4),
        preds in prop::collection::vec((feature(6), -2.0..1.0f64), 0..20),
        td in -0.5..3.0f64, tp in -0.9..1.0f64, dtd in 0.0..1.0f64, dtp in 0.0..0.5f64,
    ) {
        let bank = initialize_prototypes(protos.into_iter().map(FeatureVec::new), BankConfig::default()).unwrap();
        let preds: Vec<Prediction> = preds
            .into_iter()
            .enumerate()
            .map(|(i, (f, sigma))| Prediction {
                id: i as u64,
                image_id: "000000".into(),
                label: label(0.0, 10.0, Dims { h: 1.5, w: 1.6, l: 4.0 }, 0.0),
                feature: FeatureVec::new(f),
                sigma,
            })
            .collect();
        let cfg = PbfConfig { tau_depth: td, tau_proto: tp };
        let sel = select_pseudo_labels(&preds, &bank, &cfg).unwrap();
        let mut ids: Vec<u64> = sel.selected.iter().map(|s| s.prediction.id)
            .chain(sel.rejected.iter().map(|r| r.prediction.id)).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..preds.len() as u64).collect::<Vec<_>>());

        let strict = PbfConfig { tau_depth: td + dtd, tau_proto: (tp + dtp).min(1.0) };
        let tighter = select_pseudo_labels(&preds, &bank, &strict).unwrap();
        let loose: Vec<u64> = sel.selected.iter().map(|s| s.prediction.id).collect();
        prop_assert!(tighter.selected.iter().all(|s| loose.contains(&s.prediction.id)));
    }

    #[test]
    fn depth_nll_is_minimal_at_sqrt2_error(dd in 0.01..20.0f64) {
        let s = std::f64::consts::SQRT_2 * dd;
        let at = depth_nll(0.0, dd, s).unwrap();
        prop_assert!(depth_nll(0.0, dd, s * 0.99).unwrap() > at);
        prop_assert!(depth_nll(0.0, dd, s * 1.01).unwrap() > at);
    }

    #[test]
    fn identical_features_make_one_slot(f in feature(8), n in 1usize..50, k in 1usize..10) {
        let cfg = BankConfig { capacity: k, ..BankConfig::default() };
        let bank = initialize_prototypes(std::iter::repeat_n(FeatureVec::new(f), n), cfg).unwrap();
        prop_assert_eq!(bank.len(), 1);
    }

    #[test]
    fn bev_iou_symmetry_period_and_rigid_motion(
        a in bev(), b in bev(), rot in -PI..PI, tx in -20.0..20.0, tz in -20.0..20.0f64,
    ) {
        let iou = rotated_bev_iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&iou));
        prop_assert!((rotated_bev_iou(&b, &a) - iou).abs() <= 1e-9);
        let flipped = BevBox { yaw: a.yaw + PI, ..a };
        prop_assert!((rotated_bev_iou(&flipped, &b) - iou).abs() <= 1e-9);
        // rotate both centers and yaws about the origin in the x-z plane, then translate
        let (s, c) = rot.sin_cos();
        let moved = |q: &BevBox| {
            let (x, z) = q.center;
            BevBox { center: (c * x + s * z + tx, -s * x + c * z + tz), yaw: q.yaw + rot, ..*q }
        };
        prop_assert!((rotated_bev_iou(&moved(&a), &moved(&b)) - iou).abs() <= 1e-9);
    }

    #[test]
    fn iou3d_bounded_by_bev(a in bev(), b in bev(), h in 0.5..3.0f64) {
        let as_label = |q: &BevBox| label(q.center.0, q.center.1, Dims { h, w: q.size.0, l: q.size.1 }, q.yaw);
        let (la, lb) = (as_label(&a), as_label(&b));
        prop_assert!(iou3d(&la, &lb) <= rotated_bev_iou(&a, &b) + 1e-12);
    }

    #[test]
    fn ap_depends_only_on_score_ranks(
        gts in prop::collection::vec(0u8..8, 1..6),
        preds in prop::collection::vec((0u8..8, 0.0..1.0f64), 0..10),
    ) {
        let obj = |x: u8| label(x as f64 * 3.0, 20.0, Dims { h: 1.5, w: 1.6, l: 4.0 }, 0.0);
        let gts: Vec<Label3D> = gts.into_iter().map(obj).collect();
        let ranked: Vec<(Label3D, f64)> = preds.iter().map(|&(x, s)| (obj(x), s)).collect();
        let warped: Vec<(Label3D, f64)> = preds.iter().map(|&(x, s)| (obj(x), (3.0 * s).exp() - 7.0)).collect();
        let rule = DifficultyRule::HARD;
        let a = ap_r40(&ranked, &gts, iou3d, 0.5, &rule);
        let b = ap_r40(&warped, &gts, iou3d, 0.5, &rule);
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn morphology_is_ordered(
        (w, h, bits) in (1usize..40, 1usize..40).prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(any::<bool>(), w * h))),
        r in 0usize..6,
    ) {
        let m = sparsemono::kitti_io::MaskRaster::from_fn(w, h, |x, y| bits[y * w + x]);
        let (d, e) = (dilate(&m, r), erode(&m, r));
        let closing = erode(&d, r);
        let opening = dilate(&e, r);
        for y in 0..h {
            for x in 0..w {
                let v = m.get(x, y);
                prop_assert!(!v || d.get(x, y));
                prop_assert!(!e.get(x, y) || v);
                prop_assert!(!v || closing.get(x, y));
                prop_assert!(!opening.get(x, y) || v);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn augmentation_properties(seed in any::<u64>(), tau_road in 0.3..0.9f64) {
        let cfg = ExperimentConfig { seed, ..ExperimentConfig::default() };
        let scenes: Vec<_> = (0..6).map(|i| cfg.scene(i).unwrap()).collect();
        let library = build_patch_library(&scenes).unwrap();
        let rapa = RapaConfig { tau_road, patches_per_image: 4, ..RapaConfig::default() };
        for s in &scenes {
            let image = render_scene_image(s);
            let scene = SceneRef { image_id: &s.image_id, image: &image, labels: &s.full_gt, rig: &s.rig, road_mask: &s.road_mask };
            let out = augment_scene(scene, &library, &rapa, seed ^ 7);
            prop_assert_eq!(&out.labels[..s.full_gt.len()], &s.full_gt[..]);
            prop_assert_eq!(out.labels.len(), s.full_gt.len() + out.placements.len());
            prop_assert!(out.placements.windows(2).all(|w| w[0].1.label.location.z >= w[1].1.label.location.z));
            for (idx, p) in &out.placements {
                prop_assert!(p.road_ratio >= tau_road);
                prop_assert!(p.max_existing_iou < rapa.tau_overlap);
                prop_assert!(rapa.depth_in_range(p.label.location.z));
                prop_assert_eq!(p.label.dims, library[*idx].source_label.dims);
            }
            if let Some(patch) = library.first() {
                let a = find_placement(patch, &s.rig, &s.road_mask, &[], &rapa, seed);
                let b = find_placement(patch, &s.rig, &s.road_mask, &[], &rapa, seed);
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn bank_never_shrinks(seed in any::<u64>()) {
        let cfg = ExperimentConfig { seed, num_scenes: 12, epochs: 4, ..ExperimentConfig::default() };
        let report = run_experiment(&cfg, 1).unwrap();
        prop_assert!(report.bank_sizes().windows(2).all(|w| w[0] <= w[1]));
    }
}
