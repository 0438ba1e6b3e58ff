use apl_seg::eval::{self, audit_maps, EvalOptions};
use apl_seg::losses;
use apl_seg::spl::{spl_weight, SplKind, SplScheme};
use apl_seg::tensor::Tensor;
use apl_seg::trainer::lr_at;
use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn map(values: Vec<f64>) -> Tensor<f64> {
    let n = values.len();
    Tensor::from_vec(1, 1, 1, n, values).unwrap()
}

proptest! {
    #[test]
    fn reliability_target_is_a_weight(p in prop::collection::vec(0.0..=1.0f64, 1..64), seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let g: Vec<f64> = p.iter().map(|_| f64::from(u8::from(r.gen_bool(0.5)))).collect();
        let v = losses::reliability_target(&map(p.clone()), &map(g.clone())).unwrap();
        let vc = losses::reliability_target(&map(p.iter().map(|x| 1.0 - x).collect()), &map(g)).unwrap();
        for (a, b) in v.data.iter().zip(&vc.data) {
            prop_assert!((0.0..=1.0).contains(a));
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_ce_is_linear_in_weights(p in prop::collection::vec(0.01..0.99f64, 1..32), w in 0.0..3.0f64) {
        let y = map(p.iter().map(|&x| f64::from(u8::from(x > 0.5))).collect());
        let pred = map(p);
        let ones = pred.map(|_| 1.0);
        let scaled = pred.map(|_| w);
        let base = losses::unlabeled_loss(&pred, &y, &ones, 1e-7).unwrap().value;
        let l = losses::unlabeled_loss(&pred, &y, &scaled, 1e-7).unwrap().value;
        assert_relative_eq!(l, w * base, epsilon = 1e-9, max_relative = 1e-12);
    }

    #[test]
    fn spl_weights_are_bounded_and_non_increasing(l1 in 0.0..5.0f64, l2 in 0.0..5.0f64, lambda in 0.01..3.0f64) {
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        for kind in SplKind::ALL {
            let s = SplScheme::new(kind, lambda);
            let (a, b) = (spl_weight(lo, &s).unwrap(), spl_weight(hi, &s).unwrap());
            prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
            prop_assert!(a >= b, "{kind}: w({lo}) = {a} < w({hi}) = {b}");
        }
    }

    #[test]
    fn poly_schedule_decays(total in 1usize..10_000, a in 0usize..10_000, b in 0usize..10_000) {
        let (a, b) = (a % (total + 1), b % (total + 1));
        let (lo, hi) = (a.min(b), a.max(b));
        let (x, y) = (lr_at(lo, 1e-3, total, 0.9).unwrap(), lr_at(hi, 1e-3, total, 0.9).unwrap());
        prop_assert!(x >= y && y >= 0.0 && x <= 1e-3);
    }

    #[test]
    fn metrics_stay_in_range(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let maps: Vec<(Vec<f64>, Vec<u8>)> = (0..4)
            .map(|_| {
                let mut g: Vec<u8> = (0..64).map(|_| u8::from(r.gen_bool(0.4))).collect();
                g[0] = 1;
                ((0..64).map(|_| r.gen::<f64>()).collect(), g)
            })
            .collect();
        let rep = eval::evaluate_maps(&maps, &EvalOptions::default(), "d", "c").unwrap();
        prop_assert!((0.0..=1.0).contains(&rep.max_f));
        prop_assert!((0.0..=1.0).contains(&rep.mae));
        prop_assert!(rep.f_curve.iter().all(|f| *f <= rep.max_f));
    }
}

#[test]
fn coin_flip_pseudo_labels_score_half() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let maps: Vec<(Vec<f64>, Vec<u8>)> = (0..100)
        .map(|_| {
            let gt: Vec<u8> = (0..1024).map(|i| u8::from(i % 2 == 0)).collect();
            let pred = (0..1024).map(|_| f64::from(u8::from(r.gen_bool(0.5)))).collect();
            (pred, gt)
        })
        .collect();
    let a = audit_maps(&maps).unwrap();
    assert!((a.accuracy - 0.5).abs() < 0.05, "{}", a.accuracy);
}
