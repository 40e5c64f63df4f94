use proptest::prelude::*;

use splitseg::tensor::{
    batchnorm_relu, conv2d, conv_transpose2d, matmul, softmax_rows, upsample_bilinear,
    BatchNormSpec, ConvSpec,
};
use splitseg::Tensor;

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-4.0f32..4.0, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

/// Plain loop convolution used as the reference for grouped convs.
fn naive_conv(x: &Tensor, w: &Tensor, bias: &[f32], k: usize, stride: usize) -> Tensor {
    let (cin, h, wd) = x.chw().unwrap();
    let cout = w.shape()[0];
    let p = k / 2;
    let (oh, ow) = ((h + 2 * p - k) / stride + 1, (wd + 2 * p - k) / stride + 1);
    let mut out = vec![0f32; cout * oh * ow];
    for o in 0..cout {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = bias[o] as f64;
                for i in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (y * stride + ky) as isize - p as isize;
                            let ix = (xx * stride + kx) as isize - p as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            let a = x.data()[(i * h + iy as usize) * wd + ix as usize] as f64;
                            let b = w.data()[((o * cin + i) * k + ky) * k + kx] as f64;
                            acc += a * b;
                        }
                    }
                }
                out[(o * oh + y) * ow + xx] = acc as f32;
            }
        }
    }
    Tensor::new(vec![cout, oh, ow], out).unwrap()
}

fn slice_out(t: &Tensor, start: usize, count: usize) -> Tensor {
    let s = t.shape();
    let per: usize = s[1..].iter().product();
    let mut shape = s.to_vec();
    shape[0] = count;
    Tensor::new(shape, t.data()[start * per..(start + count) * per].to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grouped_conv_matches_per_group_convs(
        groups in 1usize..4, cin_g in 1usize..3, cout_g in 1usize..3,
        k in prop::sample::select(vec![1usize, 3, 5]), stride in 1usize..3,
        h in 2usize..7, w in 2usize..7, seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (cin, cout) = (groups * cin_g, groups * cout_g);
        let x = Tensor::from_fn(&[cin, h, w], |_| rng.gen_range(-1.0..1.0));
        let wt = Tensor::from_fn(&[cout, cin_g, k, k], |_| rng.gen_range(-1.0..1.0));
        let bias: Vec<f32> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = ConvSpec::new(k, cin, cout, groups, stride, false, wt.clone(), Some(Tensor::new(vec![cout], bias.clone()).unwrap())).unwrap();
        let got = conv2d(&x, &spec).unwrap();

        let parts: Vec<Tensor> = (0..groups).map(|g| {
            let xg = x.channel_slice(g * cin_g, cin_g).unwrap();
            let wg = slice_out(&wt, g * cout_g, cout_g);
            naive_conv(&xg, &wg, &bias[g * cout_g..(g + 1) * cout_g], k, stride)
        }).collect();
        let expected = Tensor::concat_channels(&parts).unwrap();
        prop_assert!(got.max_abs_diff(&expected).unwrap() < 1e-5);
    }

    #[test]
    fn softmax_is_shift_invariant(x in tensor(vec![3, 7]), c in -50.0f32..50.0) {
        let a = softmax_rows(&x).unwrap();
        let b = softmax_rows(&x.map(|v| v + c)).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-5);
        for row in a.data().chunks(7) {
            prop_assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn transposed_conv_stride_two_doubles_grid(
        h in 1usize..9, w in 1usize..9, k in prop::sample::select(vec![1usize, 3, 5]),
    ) {
        let spec = ConvSpec::zeros(k, 2, 3, 1, 2, true).unwrap();
        let x = Tensor::full(&[2, h, w], 1.0);
        let out = conv_transpose2d(&x, &spec).unwrap();
        prop_assert_eq!(out.shape(), &[3, 2 * h, 2 * w]);
    }

    #[test]
    fn conv_is_linear_in_input(x in tensor(vec![2, 4, 5]), y in tensor(vec![2, 4, 5])) {
        let wt = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 7919) % 13) as f32 / 13.0 - 0.5);
        let spec = ConvSpec::new(3, 2, 3, 1, 1, false, wt, None).unwrap();
        let sum = Tensor::new(vec![2, 4, 5], x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect()).unwrap();
        let lhs = conv2d(&sum, &spec).unwrap();
        let a = conv2d(&x, &spec).unwrap();
        let b = conv2d(&y, &spec).unwrap();
        let rhs = Tensor::new(lhs.shape().to_vec(), a.data().iter().zip(b.data()).map(|(p, q)| p + q).collect()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-4);
    }

    #[test]
    fn upsampling_preserves_constants(v in -3.0f32..3.0, h in 1usize..6, w in 1usize..6) {
        let out = upsample_bilinear(&Tensor::full(&[2, h, w], v), (4, 4)).unwrap();
        prop_assert_eq!(out.shape(), &[2, 4 * h, 4 * w]);
        prop_assert!(out.data().iter().all(|&o| (o - v).abs() < 1e-6));
    }
}

#[test]
fn batchnorm_matches_scalar_oracle() {
    let x = Tensor::new(vec![2, 1, 3], vec![-1.0, 0.5, 2.0, 3.0, -4.0, 0.0]).unwrap();
    let bn = BatchNormSpec::new(
        Tensor::new(vec![2], vec![0.5, -1.0]).unwrap(),
        Tensor::new(vec![2], vec![4.0, 0.25]).unwrap(),
        Tensor::new(vec![2], vec![2.0, 1.0]).unwrap(),
        Tensor::new(vec![2], vec![0.1, -0.2]).unwrap(),
        1e-5,
    )
    .unwrap();
    let got = batchnorm_relu(&x, &bn).unwrap();
    let params = [(0.5f64, 4.0f64, 2.0f64, 0.1f64), (-1.0, 0.25, 1.0, -0.2)];
    for (i, &v) in x.data().iter().enumerate() {
        let (m, var, g, b) = params[i / 3];
        let expected = (g * (v as f64 - m) / (var + 1e-5).sqrt() + b).max(0.0);
        assert!((got.data()[i] as f64 - expected).abs() < 1e-6, "index {i}");
    }
}

#[test]
fn transposed_conv_grows_8_to_16() {
    let spec = ConvSpec::zeros(5, 4, 4, 4, 2, true).unwrap();
    let out = conv_transpose2d(&Tensor::full(&[4, 8, 8], 1.0), &spec).unwrap();
    assert_eq!(out.shape(), &[4, 16, 16]);
}

#[test]
fn transposed_conv_single_pixel_places_kernel() {
    // a unit impulse at the centre scatters the kernel around (2y, 2x)
    let wt = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f32 + 1.0);
    let spec = ConvSpec::new(3, 1, 1, 1, 2, true, wt, None).unwrap();
    let mut x = Tensor::zeros(&[1, 3, 3]);
    x.data_mut()[4] = 1.0;
    let out = conv_transpose2d(&x, &spec).unwrap();
    assert_eq!(out.shape(), &[1, 6, 6]);
    let at = |y: usize, x: usize| out.data()[y * 6 + x];
    // output (2+dy, 2+dx) receives kernel (dy+1, dx+1)
    for dy in -1i32..=1 {
        for dx in -1i32..=1 {
            let expected = ((dy + 1) * 3 + dx + 1) as f32 + 1.0;
            assert_eq!(at((2 + dy) as usize, (2 + dx) as usize), expected);
        }
    }
    assert_eq!(out.data().iter().filter(|&&v| v != 0.0).count(), 9);
}

#[test]
fn matmul_against_hand_product() {
    let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let b = Tensor::new(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
    assert_eq!(matmul(&a, &b).unwrap().data(), &[58.0, 64.0, 139.0, 154.0]);
}

#[test]
fn shape_mismatches_are_errors() {
    let spec = ConvSpec::zeros(3, 4, 4, 1, 1, false).unwrap();
    assert!(conv2d(&Tensor::zeros(&[3, 4, 4]), &spec).is_err());
    assert!(matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).is_err());
    assert!(ConvSpec::zeros(3, 4, 6, 4, 1, false).is_err());
}
