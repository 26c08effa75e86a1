mod support;

use rand::Rng as _;
use sidda_core::equivariant::{build_model, group_conv, lift_conv, DihedralGroup, GridMode, ModelSpec};
use sidda_core::nn::{BatchNorm, GroupPool, Layer, MaxPool2d, Relu};
use sidda_core::{rng, Tensor};
use support::reference;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::from_seed(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn transform_planes(x: &Tensor, quarter: usize, mirror: bool) -> Tensor {
    let s = x.dim(2);
    let data = x
        .data()
        .chunks(s * s)
        .flat_map(|p| reference::rot_flip(p, s, quarter, mirror))
        .collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

#[test]
fn grid_action_matches_explicit_rotations() {
    let g = DihedralGroup::new(4).unwrap();
    let x = random_tensor(&[1, 2, 6, 6], 1);
    for q in 0..4 {
        for m in [false, true] {
            let e = g.element(q, m);
            assert_eq!(g.transform_image(e, &x).unwrap(), transform_planes(&x, q, m));
        }
    }
}

#[test]
pub fn lifting_conv_is_equivariant_under_d4() {
    let g = DihedralGroup::new(4).unwrap();
    let mut conv = lift_conv(&g, 2, 3, 5, 2, GridMode::Exact, &mut rng::from_seed(2)).unwrap();
    let x = random_tensor(&[2, 2, 12, 12], 3);
    let y = conv.forward(x.clone(), false).unwrap();
    for e in 0..g.order() {
        let y_of_gx = conv.forward(g.transform_image(e, &x).unwrap(), false).unwrap();
        let g_of_y = g.transform_regular(e, &y).unwrap();
        assert!(y_of_gx.max_abs_diff(&g_of_y) <= 1e-5, "element {e}");
    }
}

#[test]
fn d1_reflection_swaps_the_two_fibres() {
    let g = DihedralGroup::new(1).unwrap();
    let mut conv = lift_conv(&g, 1, 1, 3, 1, GridMode::Exact, &mut rng::from_seed(4)).unwrap();
    let x = random_tensor(&[1, 1, 7, 7], 5);
    let y = conv.forward(x.clone(), false).unwrap();
    let yr = conv.forward(transform_planes(&x, 0, true), false).unwrap();
    let plane = 49;
    let mirrored = transform_planes(&y, 0, true);
    assert!(Tensor::new(vec![plane], yr.data()[..plane].to_vec())
        .unwrap()
        .max_abs_diff(&Tensor::new(vec![plane], mirrored.data()[plane..].to_vec()).unwrap())
        <= 1e-5);
    assert!(Tensor::new(vec![plane], yr.data()[plane..].to_vec())
        .unwrap()
        .max_abs_diff(&Tensor::new(vec![plane], mirrored.data()[..plane].to_vec()).unwrap())
        <= 1e-5);
}

#[test]
fn lifting_fibres_equal_convolution_with_transformed_kernels() {
    let g = DihedralGroup::new(4).unwrap();
    let mut conv = lift_conv(&g, 1, 1, 3, 1, GridMode::Exact, &mut rng::from_seed(6)).unwrap();
    let base = conv.weight.value.data().to_vec();
    let x = random_tensor(&[1, 1, 7, 7], 7);
    let y = conv.forward(x.clone(), false).unwrap();
    let xd: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    for q in 0..4 {
        for m in [false, true] {
            let e = g.element(q, m);
            let kernel: Vec<f64> = reference::rot_flip(&base, 3, q, m).iter().map(|&v| v as f64).collect();
            let (expect, _, _) = reference::conv2d(&xd, 1, 1, 7, 7, &kernel, &[0.0], 1, 3, 1);
            let got = &y.data()[e * 49..(e + 1) * 49];
            for (a, b) in got.iter().zip(&expect) {
                assert!((*a as f64 - b).abs() <= 1e-6, "element {e}");
            }
        }
    }
}

#[test]
pub fn group_conv_is_equivariant_under_d4() {
    let g = DihedralGroup::new(4).unwrap();
    let mut conv = group_conv(&g, 2, 2, 3, 1, GridMode::Exact, &mut rng::from_seed(8)).unwrap();
    let x = random_tensor(&[1, 16, 8, 8], 9);
    let y = conv.forward(x.clone(), false).unwrap();
    for e in 0..8 {
        let lhs = conv.forward(g.transform_regular(e, &x).unwrap(), false).unwrap();
        let rhs = g.transform_regular(e, &y).unwrap();
        assert!(lhs.max_abs_diff(&rhs) <= 1e-5, "element {e}");
    }
}

#[test]
fn identity_delta_kernel_passes_fibres_through() {
    let g = DihedralGroup::new(4).unwrap();
    let mut conv = group_conv(&g, 1, 1, 3, 1, GridMode::Exact, &mut rng::from_seed(10)).unwrap();
    let w = conv.weight.value.data_mut();
    w.fill(0.0);
    // base shape (1, 1, 8, 3, 3): relative element 0 (identity), centre tap
    w[4] = 1.0;
    let x = random_tensor(&[1, 8, 5, 5], 11);
    let y = conv.forward(x.clone(), false).unwrap();
    assert!(y.max_abs_diff(&x) <= 1e-7);
}

#[test]
fn two_pixel_d1_group_conv_by_hand() {
    // Image of 1 row x 2 columns, one regular field of D1 (identity, mirror).
    // Kernel 1x1 per relative element: k0 (identity), k1 (mirror).
    // out(u, g) = sum_h f(u, h) k(g^-1 h): out(., e) = k0 f_e + k1 f_m,
    // out(., m) = k1 f_e + k0 f_m.
    let g = DihedralGroup::new(1).unwrap();
    let mut conv = group_conv(&g, 1, 1, 1, 0, GridMode::Exact, &mut rng::from_seed(12)).unwrap();
    conv.weight.value.data_mut().copy_from_slice(&[2.0, -3.0]);
    let f = [1.0f32, 4.0, 0.5, -2.0];
    let x = Tensor::new(vec![1, 2, 1, 2], f.to_vec()).unwrap();
    let y = conv.forward(x, false).unwrap();
    let expect = [
        2.0 * 1.0 - 3.0 * 0.5,
        2.0 * 4.0 - 3.0 * -2.0,
        -3.0 * 1.0 + 2.0 * 0.5,
        -3.0 * 4.0 + 2.0 * -2.0,
    ];
    assert_eq!(y.data(), &expect);
}

#[test]
pub fn group_pool_commutes_with_the_action() {
    let g = DihedralGroup::new(4).unwrap();
    let mut gp = GroupPool::new(8);
    let x = random_tensor(&[2, 16, 6, 6], 13);
    let pooled = gp.forward(x.clone(), false).unwrap();
    for e in 0..8 {
        let lhs = gp.forward(g.transform_regular(e, &x).unwrap(), false).unwrap();
        let rhs = g.transform_image(e, &pooled).unwrap();
        assert!(lhs.max_abs_diff(&rhs) <= 1e-6);
    }
}

#[test]
pub fn training_block_with_fibre_shared_batch_norm_is_equivariant() {
    let g = DihedralGroup::new(4).unwrap();
    let mut r = rng::from_seed(14);
    let mut layers = vec![
        Layer::Conv2d(lift_conv(&g, 1, 2, 5, 2, GridMode::Exact, &mut r).unwrap()),
        Layer::BatchNorm(BatchNorm::new(2, 8)),
        Layer::Relu(Relu::default()),
        Layer::MaxPool2d(MaxPool2d::default()),
    ];
    let run = |layers: &mut Vec<Layer>, x: Tensor| {
        let mut r = rng::from_seed(0);
        layers.iter_mut().fold(x, |h, l| l.forward(h, true, &mut r).unwrap())
    };
    let x = random_tensor(&[3, 1, 8, 8], 15);
    let y = run(&mut layers, x.clone());
    for e in 0..8 {
        let lhs = run(&mut layers, g.transform_image(e, &x).unwrap());
        let rhs = g.transform_regular(e, &y).unwrap();
        assert!(lhs.max_abs_diff(&rhs) <= 1e-5, "element {e}");
    }
}

#[test]
pub fn d4_model_logits_are_invariant() {
    let spec = ModelSpec::dihedral(4, [2, 3, 4], 3, [1, 16, 16]);
    let mut model = build_model(&spec, 16).unwrap();
    let x = random_tensor(&[2, 1, 16, 16], 17);
    let mut r = rng::from_seed(0);
    let (base, _) = model.forward(x.clone(), false, &mut r).unwrap();
    for q in 0..4 {
        for m in [false, true] {
            let (l, _) = model.forward(transform_planes(&x, q, m), false, &mut r).unwrap();
            assert!(l.max_abs_diff(&base) <= 1e-4, "rotation {q} mirror {m}");
        }
    }
}

#[test]
pub fn d1_model_is_reflection_invariant() {
    let spec = ModelSpec::dihedral(1, [2, 3, 4], 3, [1, 16, 16]);
    let mut model = build_model(&spec, 18).unwrap();
    let x = random_tensor(&[2, 1, 16, 16], 19);
    let mut r = rng::from_seed(0);
    let (base, _) = model.forward(x.clone(), false, &mut r).unwrap();
    let (l, _) = model.forward(transform_planes(&x, 0, true), false, &mut r).unwrap();
    assert!(l.max_abs_diff(&base) <= 1e-4);
}

#[test]
fn d4_block_shares_filters_eightfold() {
    let spec_d4 = ModelSpec::dihedral(4, [2, 2, 2], 3, [1, 16, 16]);
    let spec_cnn = ModelSpec::cnn([16, 16, 16], 3, [1, 16, 16]);
    let d4 = build_model(&spec_d4, 0).unwrap();
    let cnn = build_model(&spec_cnn, 0).unwrap();
    let conv_weights = |m: &sidda_core::nn::Model| -> Vec<usize> {
        m.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv2d(c) => Some(c.weight.value.len()),
                _ => None,
            })
            .collect()
    };
    let (a, b) = (conv_weights(&d4), conv_weights(&cnn));
    assert_eq!(a[0] * 8, b[0]);
    for i in 1..3 {
        assert_eq!(a[i] * 8, b[i]);
    }
}

#[test]
fn d8_resampled_lifting_is_approximately_equivariant() {
    let g = DihedralGroup::new(8).unwrap();
    let mut conv = lift_conv(&g, 1, 2, 5, 2, GridMode::Resampled, &mut rng::from_seed(20)).unwrap();
    // Smooth, centred image so that resampling error stays small.
    let s = 24;
    let c = (s as f32 - 1.0) / 2.0;
    let data = (0..s * s)
        .map(|idx| {
            let (i, j) = ((idx / s) as f32 - c, (idx % s) as f32 - c);
            (-(i * i + 0.5 * j * j) / 20.0).exp() + 0.5 * (-((i - 3.0).powi(2) + j * j) / 8.0).exp()
        })
        .collect();
    let x = Tensor::new(vec![1, 1, s, s], data).unwrap();
    let y = conv.forward(x.clone(), false).unwrap();
    let scale = y.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    for e in 0..16 {
        let lhs = conv.forward(g.transform_image(e, &x).unwrap(), false).unwrap();
        let rhs = g.transform_regular(e, &y).unwrap();
        let mad: f32 = lhs.data().iter().zip(rhs.data()).map(|(a, b)| (a - b).abs()).sum::<f32>() / lhs.len() as f32;
        assert!(mad / scale <= 5e-2, "element {e}: {}", mad / scale);
    }
}
