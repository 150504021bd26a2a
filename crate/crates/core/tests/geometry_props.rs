mod oracles;

use clft_core::geometry::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rig_strategy() -> impl Strategy<Value = SensorRig> {
    (
        prop::array::uniform3(-3.2f64..3.2),
        prop::array::uniform3(-5.0f64..5.0),
        (5.0f64..300.0, 5.0f64..300.0),
        (1usize..24, 1usize..24),
    )
        .prop_map(|(euler, pos, (fx, fy), res)| SensorRig::new(euler, pos, [fx, fy], res).unwrap())
}

/// Random points, with duplicates appended so z-buffer ties occur.
fn cloud_strategy() -> impl Strategy<Value = PointCloud> {
    (
        prop::collection::vec(prop::array::uniform3(-20.0f64..20.0), 0..120),
        any::<u64>(),
    )
        .prop_map(|(mut pts, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..pts.len() / 4 {
                let p = pts[rng.gen_range(0..pts.len())];
                pts.push(p);
            }
            PointCloud::new(pts).unwrap()
        })
}

#[test]
fn projection_examples() {
    let rig = SensorRig::new([0.0; 3], [0.0; 3], [100.0, 100.0], (384, 384)).unwrap();
    let cam = PointCloud::new(vec![[0.0, 0.0, 5.0], [1.0, 0.0, 2.0], [0.0, 0.0, -1.0]]).unwrap();
    let p = project_to_image(&cam, &rig);
    assert_eq!((p[0].u, p[0].v), (192.0, 192.0));
    assert_eq!(p[1].u, 242.0);
    assert!(p[2].behind && !p[0].behind);
}

#[test]
fn densify_two_separate_blocks() {
    let mut planes = PlaneStack::empty(12, 5);
    for (col, v) in [(3, 1.5), (7, -2.0)] {
        let k = 2 * 12 + col;
        planes.xy[k] = v;
        planes.yz[k] = v;
        planes.xz[k] = 4.0;
        planes.occupied[k] = true;
    }
    let out = densify(&planes, 1);
    assert_eq!(out, oracles::densify(&planes, 1));
    assert_eq!(out.occupied_count(), 18);
    for r in 1..=3 {
        for c in 2..=4 {
            assert_eq!(out.xy[r * 12 + c], 1.5);
        }
        for c in 6..=8 {
            assert_eq!(out.xy[r * 12 + c], -2.0);
        }
        assert!(!out.occupied[r * 12 + 5]);
    }
}

#[test]
fn mask_counts_for_one_box() {
    let rig = SensorRig::forward_facing([0.0, 0.0, 1.0], 40.0, (64, 48));
    let b = Box3D::new([10.0, 0.0, 1.0], [2.0, 2.0, 2.0], 0.3, BoxClass::Vehicle).unwrap();
    let pts: Vec<Point3> = (0..5).map(|i| [9.5, -0.8 + 0.4 * i as f64, 1.0]).collect();
    let mask = boxes_to_mask(&PointCloud::new(pts).unwrap(), &[b], &rig);
    assert_eq!(mask.count(VEHICLE), 5);
    assert!(mask.count(clft_core::graph::VOID) > 0);
    assert_eq!(mask.count(HUMAN), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rigid_transform_preserves_distances(rig in rig_strategy(), cloud in cloud_strategy()) {
        let cam = transform_to_camera(&cloud, &rig);
        for i in 0..cloud.len().min(20) {
            for j in 0..i {
                let d = |p: &[Point3]| {
                    let (a, b) = (p[i], p[j]);
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
                };
                prop_assert!((d(&cloud.points) - d(&cam.points)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn population_matches_pixel_major_oracle(rig in rig_strategy(), cloud in cloud_strategy()) {
        let planes = filter_and_populate(&cloud, &rig);
        prop_assert_eq!(planes.xy.len(), rig.width() * rig.height());
        prop_assert!(planes.occupied_count() <= cloud.len());
        let oracle = oracles::populate(&cloud, &rig);
        prop_assert_eq!(planes.occupied, oracle.occupied);
        for (a, b) in [(&planes.xy, &oracle.xy), (&planes.yz, &oracle.yz), (&planes.xz, &oracle.xz)] {
            prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn densify_matches_exhaustive_oracle(rig in rig_strategy(), cloud in cloud_strategy(), radius in 0usize..4) {
        let planes = filter_and_populate(&cloud, &rig);
        let out = densify(&planes, radius);
        prop_assert_eq!(&out, &oracles::densify(&planes, radius));
        if radius == 0 {
            prop_assert_eq!(&out, &planes);
        }
        for k in 0..planes.occupied.len() {
            if planes.occupied[k] {
                prop_assert_eq!(out.xy[k].to_bits(), planes.xy[k].to_bits());
            }
        }
    }

    #[test]
    fn densify_is_idempotent_once_gaps_are_covered(seed in any::<u64>(), radius in 1usize..3) {
        // Occupied pixels on a lattice of spacing ≤ radius + 1 leave no gap
        // wider than the radius.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (rng.gen_range(4..16), rng.gen_range(4..16));
        let mut planes = PlaneStack::empty(w, h);
        for r in (0..h).step_by(radius + 1) {
            for c in (0..w).step_by(radius + 1) {
                let k = r * w + c;
                planes.xy[k] = rng.gen_range(-1.0..1.0);
                planes.yz[k] = rng.gen_range(-1.0..1.0);
                planes.xz[k] = rng.gen_range(0.5..9.0);
                planes.occupied[k] = true;
            }
        }
        let once = densify(&planes, radius);
        prop_assert_eq!(once.occupied_count(), w * h);
        prop_assert_eq!(densify(&once, radius), once);
    }

    #[test]
    fn mask_labels_match_point_box_oracle(seed in any::<u64>(), n_boxes in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rig = SensorRig::forward_facing([0.0, 0.0, 1.5], 30.0, (40, 30));
        let boxes: Vec<Box3D> = (0..n_boxes)
            .map(|_| {
                let class = if rng.gen_bool(0.5) { BoxClass::Vehicle } else { BoxClass::Human };
                Box3D::new(
                    [rng.gen_range(4.0..15.0), rng.gen_range(-4.0..4.0), rng.gen_range(0.0..2.0)],
                    [rng.gen_range(0.5..4.0), rng.gen_range(0.5..3.0), rng.gen_range(0.5..2.5)],
                    rng.gen_range(-3.2..3.2),
                    class,
                )
                .unwrap()
            })
            .collect();
        let pts: Vec<Point3> = (0..400)
            .map(|_| [rng.gen_range(-2.0..18.0), rng.gen_range(-6.0..6.0), rng.gen_range(-1.0..3.0)])
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let mask = boxes_to_mask(&cloud, &boxes, &rig);
        prop_assert!(mask.codes.iter().all(|&c| is_mask_code(c)));
        let labels = oracles::labels(&cloud, &boxes, &rig);
        for (code, label) in mask.codes.iter().zip(&labels) {
            match label {
                Some(l) => prop_assert_eq!(code, l),
                None => prop_assert!(*code == BACKGROUND || *code == oracles::VOID),
            }
        }
        if boxes.is_empty() {
            prop_assert_eq!(mask.count(BACKGROUND), 40 * 30);
        }
    }
}
