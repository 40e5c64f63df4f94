use proptest::prelude::*;

use splitseg::analysis::{cross_entropy, miou, rd_loss, ConfusionMatrix, RDConfig};
use splitseg::model::SegMap;
use splitseg::Tensor;

fn labels(n: usize, classes: u16) -> impl Strategy<Value = Vec<u16>> {
    prop::collection::vec(1..=classes, n)
}

fn pair() -> impl Strategy<Value = (usize, usize, u16, Vec<u16>, Vec<u16>)> {
    (1usize..10, 1usize..10, 1u16..8).prop_flat_map(|(h, w, s)| {
        (
            Just(h),
            Just(w),
            Just(s),
            labels(h * w, s),
            labels(h * w, s),
        )
    })
}

fn map(h: usize, w: usize, s: u16, l: Vec<u16>) -> SegMap {
    SegMap::new(h, w, s as usize, l).unwrap()
}

fn one_hot(m: &SegMap) -> Tensor {
    let plane = m.height() * m.width();
    Tensor::from_fn(&[m.classes(), m.height(), m.width()], |i| {
        (m.labels()[i % plane] as usize == i / plane + 1) as u8 as f32
    })
}

proptest! {
    #[test]
    fn miou_is_invariant_under_relabeling(
        (h, w, s, p, g) in pair(),
        perm_seed in any::<prop::sample::Index>(),
    ) {
        let mut perm: Vec<u16> = (1..=s).collect();
        let k = perm_seed.index(perm.len());
        perm.rotate_left(k);
        if perm.len() > 2 {
            perm.swap(0, 2);
        }
        let relabel = |v: &[u16]| v.iter().map(|&x| perm[x as usize - 1]).collect::<Vec<_>>();
        let a = miou(&map(h, w, s, p.clone()), &map(h, w, s, g.clone()), s as usize, None).unwrap();
        let b = miou(&map(h, w, s, relabel(&p)), &map(h, w, s, relabel(&g)), s as usize, None).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((0.0..=100.0).contains(&a));
    }

    #[test]
    fn sharded_confusion_matrices_merge_exactly((h, w, s, p, g) in pair(), split in 0usize..100) {
        let n = h * w;
        let cut = split % (n + 1);
        let full_pred = map(1, n, s, p.clone());
        let full_gt = map(1, n, s, g.clone());
        let mut whole = ConfusionMatrix::new(s as usize);
        whole.add(&full_pred, &full_gt, None).unwrap();

        let mut left = ConfusionMatrix::new(s as usize);
        let mut right = ConfusionMatrix::new(s as usize);
        if cut > 0 {
            left.add(&map(1, cut, s, p[..cut].to_vec()), &map(1, cut, s, g[..cut].to_vec()), None).unwrap();
        }
        if cut < n {
            right.add(&map(1, n - cut, s, p[cut..].to_vec()), &map(1, n - cut, s, g[cut..].to_vec()), None).unwrap();
        }
        let mut merged = right.clone();
        merged.merge(&left);
        left.merge(&right);
        prop_assert_eq!(&merged, &whole);
        prop_assert_eq!(&left, &whole);
    }

    #[test]
    fn cross_entropy_is_non_negative_and_zero_only_for_one_hot(
        (h, w, s, p, g) in pair(),
    ) {
        let gt = map(h, w, s, g);
        let perfect = cross_entropy(&one_hot(&gt), &gt, None).unwrap();
        prop_assert_eq!(perfect, 0.0);

        let pred = map(h, w, s, p);
        let ce = cross_entropy(&one_hot(&pred), &gt, None).unwrap();
        prop_assert!(ce >= 0.0);
        prop_assert_eq!(ce == 0.0, pred == gt);

        let uniform = Tensor::full(&[s as usize, h, w], 1.0 / s as f32);
        let u = cross_entropy(&uniform, &gt, None).unwrap();
        prop_assert!((u - (s as f64).ln()).abs() < 1e-6);
        prop_assert_eq!(u > 0.0, s > 1);
    }
}

#[test]
fn ignored_pixels_are_not_counted() {
    let gt = SegMap::new(1, 4, 3, vec![1, 2, 3, 3]).unwrap();
    let pred = SegMap::new(1, 4, 3, vec![1, 2, 1, 2]).unwrap();
    let mut cm = ConfusionMatrix::new(3);
    cm.add(&pred, &gt, Some(3)).unwrap();
    assert_eq!(cm.counted(), 2);
    assert_eq!(cm.ignored(), 2);
    assert_eq!(cm.miou().unwrap(), 100.0);
}

#[test]
fn size_mismatch_is_an_error() {
    let a = SegMap::filled(2, 3, 2, 1);
    let b = SegMap::filled(3, 2, 2, 1);
    assert!(miou(&a, &b, 2, None).is_err());
}

#[test]
fn rd_loss_requires_open_alpha() {
    assert!(RDConfig::new(0.0).is_err());
    assert!(RDConfig::new(1.0).is_err());
    let cfg = RDConfig::new(0.25).unwrap();
    assert_eq!(rd_loss(2.0, 4.0, cfg), 0.25 * 2.0 + 0.75 * 4.0);
}
