use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sanitone_core::nn::{Layer, ModelParams, Tensor};

mod oracles;
use oracles::{composed, gradcheck, rand_tensor, randomize};

fn check(name: &str, build: impl Fn() -> ModelParams, in_shape: &[usize], draws: usize) {
    let e = gradcheck(name, &build(), in_shape, draws);
    assert!(e <= 1e-4, "{name}: relative error {e:e}");
}

#[test]
fn gradcheck_conv1d() {
    check("conv", || ModelParams::new(vec![Layer::conv("c", 3, 4, 3, 1, 1)]), &[3, 8], 50);
}

#[test]
fn gradcheck_strided_conv1d() {
    check("strided", || ModelParams::new(vec![Layer::conv("c", 3, 4, 5, 2, 2)]), &[3, 11], 50);
}

#[test]
fn gradcheck_linear() {
    check("linear", || ModelParams::new(vec![Layer::linear("l", 5, 3)]), &[5, 2], 50);
}

#[test]
fn gradcheck_glu() {
    check("glu", || ModelParams::new(vec![Layer::glu("g")]), &[6, 5], 50);
}

#[test]
fn gradcheck_instance_norm() {
    check("norm", || ModelParams::new(vec![Layer::norm("n", 3)]), &[3, 7], 50);
}

#[test]
fn gradcheck_pixel_shuffle() {
    check("shuffle", || ModelParams::new(vec![Layer::PixelShuffle1d { name: "p".into(), factor: 2 }]), &[4, 5], 50);
}

#[test]
fn gradcheck_upsample() {
    check("upsample", || ModelParams::new(vec![Layer::Upsample1d { name: "u".into(), factor: 2 }]), &[3, 5], 50);
}

#[test]
fn gradcheck_sigmoid() {
    check("sigmoid", || ModelParams::new(vec![Layer::Sigmoid { name: "s".into() }]), &[3, 5], 50);
}

#[test]
fn gradcheck_residual() {
    check(
        "residual",
        || {
            ModelParams::new(vec![Layer::Residual {
                name: "r".into(),
                body: vec![Layer::conv("a", 4, 8, 3, 1, 1), Layer::norm("n", 8), Layer::glu("g")],
            }])
        },
        &[4, 9],
        50,
    );
}

#[test]
fn composed_model_is_small() {
    assert!(composed().param_count() <= 2000, "{}", composed().param_count());
}

#[test]
fn gradcheck_composed() {
    check("composed", composed, &[4, 12], 50);
}

/// Nested-loop convolution written straight from the definition.
fn direct_conv(x: &[Vec<f64>], w: &[Vec<Vec<f64>>], b: &[f64], stride: usize, pad: usize) -> Vec<Vec<f64>> {
    let t = x[0].len() as isize;
    let k = w[0][0].len();
    let tout = (x[0].len() + 2 * pad - k) / stride + 1;
    let mut y = vec![vec![0.0; tout]; w.len()];
    for (o, wo) in w.iter().enumerate() {
        for (tt, yv) in y[o].iter_mut().enumerate() {
            let mut acc = b[o];
            for (i, wi) in wo.iter().enumerate() {
                for (kk, wv) in wi.iter().enumerate() {
                    let src = (tt * stride + kk) as isize - pad as isize;
                    if src >= 0 && src < t {
                        acc += wv * x[i][src as usize];
                    }
                }
            }
            *yv = acc;
        }
    }
    y
}

#[test]
fn conv_matches_direct_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let cin = rng.random_range(1..6);
        let cout = rng.random_range(1..6);
        let k = rng.random_range(1..6);
        let stride = rng.random_range(1..3);
        let pad = rng.random_range(0..3);
        let t = rng.random_range(k..20);
        let w: Vec<Vec<Vec<f64>>> =
            (0..cout).map(|_| (0..cin).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()).collect();
        let b: Vec<f64> = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<Vec<f64>> = (0..cin).map(|_| (0..t).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let layer = Layer::Conv1d {
            name: "c".into(),
            weight: Tensor::from_vec(&[cout, cin, k], w.iter().flatten().flatten().copied().collect()).unwrap(),
            bias: Tensor::from_vec(&[cout], b.clone()).unwrap(),
            stride,
            padding: pad,
        };
        let m = ModelParams::new(vec![layer]);
        assert!(m.param_count() <= 1000);
        let y = m.forward(&Tensor::from_rows(&x).unwrap()).unwrap().to_rows();
        let oracle = direct_conv(&x, &w, &b, stride, pad);
        for (r, q) in y.iter().zip(&oracle) {
            for (a, e) in r.iter().zip(q) {
                assert!((a - e).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn forward_is_pure() {
    let m = composed().seeded(3);
    let x = rand_tensor(&[4, 12], &mut ChaCha8Rng::seed_from_u64(4));
    let a = m.forward(&x).unwrap();
    let b = m.forward(&x).unwrap();
    assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

mod fuzz {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn finite_in_finite_out(seed in any::<u64>(), scale in 1e-3f64..1e3, t in 4usize..24) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = composed();
            randomize(&mut m, &mut rng);
            let t = t + t % 2;
            let x = rand_tensor(&[4, t], &mut rng).map(|v| v * scale);
            let (y, c) = m.forward_cached(&x).unwrap();
            prop_assert!(y.is_finite());
            let (g, dx) = m.backward(&c, &y).unwrap();
            prop_assert!(dx.is_finite());
            prop_assert!(g.0.iter().all(|t| t.is_finite()));
        }
    }
}
