//! Independent reference implementations shared by the test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sanitone_core::cyclegan::{build_model, ArchDescriptor, CycleGanModel, TrainConfig};
use sanitone_core::audio::Waveform;
use sanitone_core::nn::{Layer, ModelParams, Tensor};
use sanitone_core::toy::{vowel, Resonance};

/// Levenshtein distance with two rolling rows.
pub fn lev(a: &[u8], b: &[u8]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + (x != y) as usize).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Brute force: count FAR/FRR at every candidate threshold directly, take
/// the argmin of |FAR − FRR|, interpolate across the sign change next to it.
pub fn eer_oracle(g: &[f64], im: &[f64]) -> f64 {
    let mut th: Vec<f64> = g.iter().chain(im).copied().collect();
    th.sort_by(f64::total_cmp);
    th.dedup();
    th.push(f64::INFINITY);
    let rates: Vec<(f64, f64)> = th
        .iter()
        .map(|&t| {
            let far = im.iter().filter(|&&s| s >= t).count() as f64 / im.len() as f64;
            let frr = g.iter().filter(|&&s| s < t).count() as f64 / g.len() as f64;
            (far, frr)
        })
        .collect();
    let d: Vec<f64> = rates.iter().map(|(a, r)| a - r).collect();
    let k = (0..d.len()).min_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs()).then(i.cmp(&j))).unwrap();
    if d[k] == 0.0 {
        return rates[k].0;
    }
    let (a, b) = if d[k] > 0.0 { (k, k + 1) } else { (k - 1, k) };
    let t = d[a] / (d[a] - d[b]);
    rates[a].0 + t * (rates[b].0 - rates[a].0)
}

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn randomize(m: &mut ModelParams, rng: &mut ChaCha8Rng) {
    for p in m.params_mut() {
        p.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
}

/// Loss = Σ y·r for a fixed random projection r.
pub fn loss(m: &ModelParams, x: &Tensor, r: &[f64]) -> f64 {
    m.forward(x).unwrap().data.iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Max relative error of analytic vs central-difference gradients over all
/// parameters and inputs.
pub fn max_rel_error(m: &mut ModelParams, x: &Tensor, rng: &mut ChaCha8Rng) -> f64 {
    let h = 1e-4;
    let (y, cache) = m.forward_cached(x).unwrap();
    let r: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let up = Tensor::from_vec(&y.shape, r.clone()).unwrap();
    let (grads, dx) = m.backward(&cache, &up).unwrap();
    // 1e-6 in the denominator acts as an absolute tolerance of 1e-10, the
    // central-difference noise level for losses of order one
    let rel = |a: f64, n: f64| (a - n).abs() / (a.abs().max(n.abs()) + 1e-6);
    let mut worst = 0.0f64;
    let np = m.params().len();
    for pi in 0..np {
        for j in 0..m.params()[pi].len() {
            let orig = m.params()[pi].data[j];
            m.params_mut()[pi].data[j] = orig + h;
            let lp = loss(m, x, &r);
            m.params_mut()[pi].data[j] = orig - h;
            let lm = loss(m, x, &r);
            m.params_mut()[pi].data[j] = orig;
            worst = worst.max(rel(grads.0[pi].data[j], (lp - lm) / (2.0 * h)));
        }
    }
    let mut xp = x.clone();
    for j in 0..x.len() {
        xp.data[j] = x.data[j] + h;
        let lp = loss(m, &xp, &r);
        xp.data[j] = x.data[j] - h;
        let lm = loss(m, &xp, &r);
        xp.data[j] = x.data[j];
        worst = worst.max(rel(dx.data[j], (lp - lm) / (2.0 * h)));
    }
    worst
}

/// Every layer kind in isolation: name, model, input shape.
pub fn layer_cases() -> Vec<(&'static str, ModelParams, Vec<usize>)> {
    vec![
        ("conv", ModelParams::new(vec![Layer::conv("c", 3, 4, 3, 1, 1)]), vec![3, 8]),
        ("strided", ModelParams::new(vec![Layer::conv("c", 3, 4, 5, 2, 2)]), vec![3, 11]),
        ("linear", ModelParams::new(vec![Layer::linear("l", 5, 3)]), vec![5, 2]),
        ("glu", ModelParams::new(vec![Layer::glu("g")]), vec![6, 5]),
        ("norm", ModelParams::new(vec![Layer::norm("n", 3)]), vec![3, 7]),
        ("shuffle", ModelParams::new(vec![Layer::PixelShuffle1d { name: "p".into(), factor: 2 }]), vec![4, 5]),
        ("upsample", ModelParams::new(vec![Layer::Upsample1d { name: "u".into(), factor: 2 }]), vec![3, 5]),
        ("sigmoid", ModelParams::new(vec![Layer::Sigmoid { name: "s".into() }]), vec![3, 5]),
        (
            "residual",
            ModelParams::new(vec![Layer::Residual {
                name: "r".into(),
                body: vec![Layer::conv("a", 4, 8, 3, 1, 1), Layer::norm("n", 8), Layer::glu("g")],
            }]),
            vec![4, 9],
        ),
        ("composed", composed(), vec![4, 12]),
    ]
}

/// Worst relative error over `draws` random parameter/input draws.
pub fn gradcheck(name: &str, m: &ModelParams, in_shape: &[usize], draws: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let mut m = m.clone();
        randomize(&mut m, &mut rng);
        let x = rand_tensor(in_shape, &mut rng);
        worst = worst.max(max_rel_error(&mut m, &x, &mut rng));
    }
    worst
}

/// Gated conv generator in miniature: down, residual, repeat-then-conv up, out.
pub fn composed() -> ModelParams {
    ModelParams::new(vec![
        Layer::conv("in", 4, 12, 5, 1, 2),
        Layer::glu("in.glu"),
        Layer::conv("down", 6, 16, 3, 2, 1),
        Layer::norm("down.norm", 16),
        Layer::glu("down.glu"),
        Layer::Residual {
            name: "res".into(),
            body: vec![
                Layer::conv("res.a", 8, 16, 3, 1, 1),
                Layer::norm("res.a.norm", 16),
                Layer::glu("res.a.glu"),
                Layer::conv("res.b", 8, 8, 3, 1, 1),
                Layer::norm("res.b.norm", 8),
            ],
        },
        Layer::Upsample1d { name: "up.repeat".into(), factor: 2 },
        Layer::conv("up", 8, 8, 3, 1, 1),
        Layer::norm("up.norm", 8),
        Layer::glu("up.glu"),
        Layer::conv("out", 4, 4, 3, 1, 1),
        Layer::linear("head", 4, 2),
        Layer::Sigmoid { name: "sig".into() },
    ])
}

pub fn tiny(dim: usize) -> ArchDescriptor {
    ArchDescriptor {
        feature_dim: dim,
        gen_hidden: 4,
        gen_downsample: 1,
        gen_res_blocks: 1,
        gen_kernel: 3,
        gen_res_kernel: 3,
        gen_skip: true,
        disc_hidden: 3,
        disc_layers: 2,
        disc_kernel: 3,
    }
}

pub fn seg(c: usize, t: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_vec(&[c, t], (0..c * t).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

/// Loss formulas written out term by term on raw network outputs.
pub struct Oracle {
    pub adv_g: f64,
    pub adv_d: f64,
    pub cycle: f64,
    pub identity: f64,
    pub total_g: f64,
}

pub fn oracle(m: &CycleGanModel, x: &Tensor, y: &Tensor, cfg: &TrainConfig, iter: usize) -> Oracle {
    let run = |n: &ModelParams, t: &Tensor| n.forward(t).unwrap().data;
    let xt = &x.data;
    let yt = &y.data;
    let g_x = run(&m.gen_xy, x);
    let f_y = run(&m.gen_yx, y);
    let f_g_x = run(&m.gen_yx, &Tensor { shape: x.shape.clone(), data: g_x.clone() });
    let g_f_y = run(&m.gen_xy, &Tensor { shape: y.shape.clone(), data: f_y.clone() });
    let dy_fake = run(&m.disc_y, &Tensor { shape: x.shape.clone(), data: g_x.clone() });
    let dx_fake = run(&m.disc_x, &Tensor { shape: y.shape.clone(), data: f_y.clone() });
    let dy_real = run(&m.disc_y, y);
    let dx_real = run(&m.disc_x, x);

    let mut s = 0.0;
    for v in &dy_fake {
        s += (v - 1.0) * (v - 1.0);
    }
    let mut adv_g = s / dy_fake.len() as f64;
    s = 0.0;
    for v in &dx_fake {
        s += (v - 1.0) * (v - 1.0);
    }
    adv_g += s / dx_fake.len() as f64;

    let mut adv_d = 0.0;
    for (real, fake) in [(&dy_real, &dy_fake), (&dx_real, &dx_fake)] {
        let mut a = 0.0;
        for v in real.iter() {
            a += (v - 1.0) * (v - 1.0);
        }
        let mut b = 0.0;
        for v in fake.iter() {
            b += v * v;
        }
        adv_d += a / real.len() as f64 + b / fake.len() as f64;
    }

    let mut c1 = 0.0;
    for i in 0..xt.len() {
        c1 += (f_g_x[i] - xt[i]).abs();
    }
    let mut c2 = 0.0;
    for i in 0..yt.len() {
        c2 += (g_f_y[i] - yt[i]).abs();
    }
    let cycle = c1 / xt.len() as f64 + c2 / yt.len() as f64;

    let mut identity = 0.0;
    if iter < cfg.identity_cutoff_iter {
        let g_y = run(&m.gen_xy, y);
        let f_x = run(&m.gen_yx, x);
        let mut i1 = 0.0;
        for i in 0..yt.len() {
            i1 += (g_y[i] - yt[i]).abs();
        }
        let mut i2 = 0.0;
        for i in 0..xt.len() {
            i2 += (f_x[i] - xt[i]).abs();
        }
        identity = i1 / yt.len() as f64 + i2 / xt.len() as f64;
    }
    let total_g = adv_g + cfg.lambda_cycle * cycle + cfg.lambda_identity * identity;
    Oracle { adv_g, adv_d, cycle, identity, total_g }
}

pub fn identity_model(dim: usize, seed: u64) -> CycleGanModel {
    let arch = ArchDescriptor { feature_dim: dim, gen_hidden: 0, ..tiny(dim) };
    let mut m = build_model(&arch, seed).unwrap();
    for g in [&mut m.gen_xy, &mut m.gen_yx] {
        let mut p = g.params_mut();
        p[0].data.fill(0.0);
        for i in 0..dim {
            p[0].data[i * dim + i] = 1.0;
        }
        p[1].data.fill(0.0);
    }
    m
}


/// 20 pulse-train vowels, F0 geometrically spaced over 80–400 Hz, each
/// through 2 or 3 resonances.
pub fn vowels() -> Vec<(f64, Waveform)> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    (0..20)
        .map(|i| {
            let f0 = 80.0 * 5f64.powf(i as f64 / 19.0);
            let n = rng.random_range(2..=3);
            let formants: Vec<Resonance> = (0..n)
                .map(|k| Resonance::new(rng.random_range(300.0..900.0) * (1.0 + 1.6 * k as f64), rng.random_range(80.0..160.0)))
                .collect();
            (f0, vowel(f0, &formants, 0.5, 16000))
        })
        .collect()
}

