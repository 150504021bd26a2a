mod oracles;

use std::collections::BTreeMap;

use clft_core::evaluation::{stratified_report, ConfusionState, SubsetTag, ALL_WEATHER};
use clft_core::fusion::Modality;
use clft_core::geometry::ClassMask;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pair(rng: &mut ChaCha8Rng, w: usize, h: usize, void: f64) -> (ClassMask, ClassMask) {
    let pred = (0..w * h).map(|_| rng.gen_range(0..3u8)).collect();
    let gt = (0..w * h)
        .map(|_| if rng.gen_bool(void) { 255 } else { rng.gen_range(0..3u8) })
        .collect();
    (ClassMask::new(w, h, pred).unwrap(), ClassMask::new(w, h, gt).unwrap())
}

#[test]
fn perfect_and_disjoint_predictions() {
    let gt = ClassMask::new(4, 1, vec![0, 1, 2, 1]).unwrap();
    let mut s = ConfusionState::new();
    s.accumulate(&gt, &gt).unwrap();
    for c in 0..3 {
        let m = s.class_metrics(c);
        assert_eq!((m.iou, m.precision, m.recall), (Some(1.0), Some(1.0), Some(1.0)));
    }
    let pred = ClassMask::new(4, 1, vec![1, 0, 0, 0]).unwrap();
    let mut s = ConfusionState::new();
    s.accumulate(&pred, &gt).unwrap();
    assert_eq!(s.class_metrics(1).iou, Some(0.0));
    assert_eq!(s.class_metrics(2).precision, None);
}

#[test]
fn shape_mismatch_is_an_error() {
    let a = ClassMask::filled(2, 3, 0);
    let b = ClassMask::filled(3, 2, 0);
    assert!(ConfusionState::new().accumulate(&a, &b).is_err());
}

#[test]
fn count_aggregation_differs_from_percentage_averaging() {
    // Light-dry: 1 TP, 1 FN for vehicles (IoU 0.5). Dark-wet: 98 TP, 0 errors
    // (IoU 1.0). Averaging percentages gives 0.75; counts give 99/100.
    let mut a = ConfusionState::new();
    a.accumulate(
        &ClassMask::new(2, 1, vec![1, 0]).unwrap(),
        &ClassMask::new(2, 1, vec![1, 1]).unwrap(),
    )
    .unwrap();
    let mut b = ConfusionState::new();
    b.accumulate(&ClassMask::filled(98, 1, 1), &ClassMask::filled(98, 1, 1))
        .unwrap();
    let results = BTreeMap::from([(SubsetTag::LightDry, a), (SubsetTag::DarkWet, b)]);
    let report = stratified_report(Modality::Fusion, &results).unwrap();
    let all = report.rows.last().unwrap();
    assert_eq!(all.subset, ALL_WEATHER);
    let iou = all.classes[0].iou.unwrap();
    assert!((iou - 0.99).abs() < 1e-15);
    let naive = (report.rows[0].classes[0].iou.unwrap() + report.rows[1].classes[0].iou.unwrap()) / 2.0;
    assert!((naive - 0.75).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counts_match_double_loop(seed in any::<u64>(), w in 1usize..17, h in 1usize..17, void in 0.0f64..0.6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (pred, gt) = pair(&mut rng, w, h, void);
        let mut s = ConfusionState::new();
        s.accumulate(&pred, &gt).unwrap();
        let (counts, v) = oracles::confusion(&pred.codes, &gt.codes, w, h);
        prop_assert_eq!(s.void_excluded, v);
        for (c, &expected) in counts.iter().enumerate() {
            prop_assert_eq!([s.tp[c], s.fp[c], s.fn_[c]], expected);
            let [tp, fp, fn_] = expected.map(|x| x as f64);
            let m = s.class_metrics(c);
            if tp + fp + fn_ > 0.0 {
                prop_assert!((m.iou.unwrap() - tp / (tp + fp + fn_)).abs() < 1e-12);
            }
            if let (Some(iou), Some(p), Some(r)) = (m.iou, m.precision, m.recall) {
                prop_assert!(iou <= p.min(r));
            }
        }
    }

    #[test]
    fn accumulation_is_order_independent(seed in any::<u64>(), frames in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<_> = (0..frames).map(|_| pair(&mut rng, 6, 5, 0.2)).collect();
        let mut forward = ConfusionState::new();
        for (p, g) in &pairs {
            forward.accumulate(p, g).unwrap();
        }
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rng);
        let mut other = ConfusionState::new();
        for (p, g) in &shuffled {
            other.accumulate(p, g).unwrap();
        }
        prop_assert_eq!(forward, other);
        // Sharded accumulation merges to the same state.
        let (left, right) = pairs.split_at(frames / 2);
        let shard = |ps: &[(ClassMask, ClassMask)]| {
            let mut s = ConfusionState::new();
            ps.iter().for_each(|(p, g)| s.accumulate(p, g).unwrap());
            s
        };
        prop_assert_eq!(shard(left).merge(&shard(right)), forward);
        prop_assert_eq!(shard(right).merge(&shard(left)), forward);
    }

    #[test]
    fn void_frames_leave_metrics_fixed(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, g) = pair(&mut rng, 7, 7, 0.3);
        let mut s = ConfusionState::new();
        s.accumulate(&p, &g).unwrap();
        let before = s.metrics();
        let (p2, _) = pair(&mut rng, 7, 7, 0.0);
        s.accumulate(&p2, &ClassMask::filled(7, 7, 255)).unwrap();
        prop_assert_eq!(s.metrics(), before);
    }
}
