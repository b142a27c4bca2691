//! Self-check suite: transform oracles, gradient checks for every
//! differentiable op, loss and metric identities. Backs `gsfm verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::boundary::{bce_with_logits, bootstrapped_ce, boundary_loss, dice_loss, laplacian_boundary, FusionBlock};
use crate::memory::{affinity, fused_read, readout, topk_normalize};
use crate::metrics::{contour_f, jaccard};
use crate::model::{Gsfm, GsfmConfig, TrainSample};
use crate::nn::Module;
use crate::spectral::fft::{naive_dft, Direction, FftPlan};
use crate::spectral::{build_coefficient_map, dft2, idft2, ComplexSpectrum, FilterMode, FrequencyFilter, SpectralFilterModule};
use crate::tensor::{grad_check_many, Padding, Result, Tensor, TensorError};

/// One line of the verification table.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub group: &'static str,
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error < self.tolerance
    }
}

fn check(group: &'static str, name: impl Into<String>, error: f64, tolerance: f64) -> Check {
    Check {
        group,
        name: name.into(),
        error,
        tolerance,
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn invalid(e: impl std::fmt::Display) -> TensorError {
    TensorError::Invalid(e.to_string())
}

/// FFT against the direct DFT, round trip, convolution theorem and Parseval.
pub fn spectral_checks() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut out = Vec::new();
    let mut trip: f64 = 0.0;
    for p in 0..=6 {
        let n = 1usize << p;
        let re: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let im: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (er, ei) = naive_dft(&re, &im, Direction::Forward);
        let plan = FftPlan::new(n);
        let (mut fr, mut fi) = (re.clone(), im.clone());
        plan.process(&mut fr, &mut fi, Direction::Forward);
        out.push(check("fft", format!("fft vs direct DFT, n = {n}"), max_abs_diff(&fr, &er).max(max_abs_diff(&fi, &ei)), 1e-6));
        plan.process(&mut fr, &mut fi, Direction::Inverse);
        let scale = 1.0 / n as f64;
        fr.iter_mut().chain(fi.iter_mut()).for_each(|v| *v *= scale);
        trip = trip.max(max_abs_diff(&fr, &re)).max(max_abs_diff(&fi, &im));
    }
    out.push(check("fft", "inverse of forward, n <= 64", trip, 1e-6));

    let (h, w) = (8, 8);
    let x = random(&[1, h, w], &mut rng);
    let y = random(&[1, h, w], &mut rng);
    let (sx, sy) = (dft2(&x).expect("dft"), dft2(&y).expect("dft"));
    let (a, b, c, d) = (sx.real.data(), sx.imag.data(), sy.real.data(), sy.imag.data());
    let re = Tensor::new(&[1, h, w], (0..h * w).map(|i| a[i] * c[i] - b[i] * d[i]).collect()).expect("shape");
    let im = Tensor::new(&[1, h, w], (0..h * w).map(|i| a[i] * d[i] + b[i] * c[i]).collect()).expect("shape");
    let product = idft2(&ComplexSpectrum::new(re, im).expect("spectrum")).expect("idft");
    let direct: Vec<f64> = (0..h * w)
        .map(|i| {
            let (u, v) = (i / w, i % w);
            (0..h * w)
                .map(|j| {
                    let (p, q) = (j / w, j % w);
                    x.data()[j] * y.data()[((u + h - p) % h) * w + (v + w - q) % w]
                })
                .sum()
        })
        .collect();
    out.push(check("fft", "convolution theorem", max_abs_diff(product.data(), &direct), 1e-5));
    let energy: f64 = x.data().iter().map(|v| v * v).sum();
    let spectral: f64 = a.iter().zip(b).map(|(r, i)| r * r + i * i).sum::<f64>() / (h * w) as f64;
    out.push(check("fft", "Parseval", (energy - spectral).abs(), 1e-5));

    let low = build_coefficient_map(FilterMode::Low, 7.0, 32, 32).expect("map");
    let high = build_coefficient_map(FilterMode::High, 7.0, 32, 32).expect("map");
    out.push(check("filter", "low-pass value at centre", low.data()[16 * 32 + 16].abs(), f64::MIN_POSITIVE));
    let sum_err = low.data().iter().zip(high.data()).map(|(l, h)| (l + h - 1.0).abs()).fold(0.0, f64::max);
    out.push(check("filter", "low + high - 1", sum_err, f64::MIN_POSITIVE));
    out.push(check("filter", "low-pass value at distance sigma", (low.data()[23 * 32 + 16] - (1.0 - (-0.5f64).exp())).abs(), 1e-9));
    out
}

fn probe_sum(t: &Tensor, probe: &Tensor) -> Result<Tensor> {
    Ok(t.mul(probe)?.sum())
}

fn grad(name: &str, f: impl Fn(&[Tensor]) -> Result<Tensor>, inputs: &[Tensor], tolerance: f64, max_coords: Option<usize>) -> Check {
    let error = grad_check_many(f, inputs, 1e-6, max_coords).map_or(f64::INFINITY, |r| r.max_rel_error);
    check("gradient", name, error, tolerance)
}

fn random_params(m: &impl Module, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    m.named_params().iter().map(|(_, t)| random(t.shape(), rng).scale(0.5)).collect()
}

fn with_params<M: Module + Clone>(m: &M, xs: &[Tensor]) -> M {
    let mut m = m.clone();
    let mut i = 0;
    m.visit_params_mut("", &mut |_, p| {
        *p = xs[i].clone();
        i += 1;
    });
    m
}

fn tiny_model_and_sample() -> (Gsfm, TrainSample) {
    let model = Gsfm::new(GsfmConfig {
        input_size: (8, 8),
        base_channels: 4,
        key_channels: 4,
        value_channels: 4,
        lfm_sigma: 1.0,
        hfm_sigma: 1.0,
        init_seed: 5,
        ..GsfmConfig::default()
    })
    .expect("tiny config");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frames = [0, 1, 2].map(|_| Tensor::from_fn(&[3, 8, 8], |_| rng.gen_range(0.0..1.0)));
    let labels = [0, 1, 2].map(|t| (0..64).map(|i| ((2..6).contains(&(i / 8)) && (2 + t..5 + t).contains(&(i % 8))) as u8).collect());
    (model, TrainSample::new(frames, labels).expect("sample"))
}

/// Central-difference gradient checks of every differentiable op and of a tiny model.
pub fn gradient_checks() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut out = Vec::new();
    let tol = 1e-3;
    let x = random(&[2, 3, 4], &mut rng);
    let y = random(&[2, 3, 4], &mut rng).add_scalar(3.0);
    let p = random(&[2, 3, 4], &mut rng);
    let xy = [x.clone(), y.clone()];
    out.push(grad("add, sub, mul, div", |v| probe_sum(&v[0].add(&v[1])?.mul(&v[0])?.sub(&v[1])?.div(&v[1])?, &p), &xy, tol, None));
    out.push(grad("scale, add_scalar, square", |v| probe_sum(&v[0].scale(1.7).add_scalar(0.3).square(), &p), &xy[..1], tol, None));
    out.push(grad("exp, log, sigmoid", |v| probe_sum(&v[1].log().add(&v[0].exp())?.add(&v[0].sigmoid())?, &p), &xy, tol, None));
    let away = Tensor::from_fn(&[2, 3, 4], |i| if i % 2 == 0 { 0.2 + 0.03 * i as f64 } else { -0.2 - 0.03 * i as f64 });
    out.push(grad("relu", |v| probe_sum(&v[0].relu(), &p), &[away], tol, None));
    out.push(grad("sum, mean over axes", |v| probe_sum(&v[0].sum_axis(1)?.add(&v[0].mean_axis(2)?)?, &p), &xy[..1], tol, None));
    out.push(grad("softmax", |v| probe_sum(&v[0].softmax(2)?, &p), &xy[..1], tol, None));
    out.push(grad("log_softmax", |v| probe_sum(&v[0].log_softmax(0)?, &p), &xy[..1], tol, None));
    out.push(grad("concat, narrow", |v| Ok(Tensor::concat(&[v[0].clone(), v[1].clone()], 1)?.narrow(1, 1, 4)?.square().sum()), &xy, tol, None));
    let ab = [random(&[3, 5], &mut rng), random(&[5, 2], &mut rng)];
    out.push(grad("matmul, transpose", |v| Ok(v[0].matmul(&v[1])?.transpose()?.square().sum()), &ab, tol, None));

    let img = random(&[3, 6, 8], &mut rng);
    let cp = random(&[4, 6, 8], &mut rng);
    for (name, k, pad) in [("conv2d 3x3, zero padding", 3, Padding::Zero), ("conv2d 3x3, replicate padding", 3, Padding::Replicate), ("conv2d 1x1", 1, Padding::Zero)] {
        let inputs = [img.clone(), random(&[4, 3, k, k], &mut rng)];
        out.push(grad(name, |v| probe_sum(&v[0].conv2d(&v[1], pad)?, &cp), &inputs, tol, None));
    }
    let up = random(&[3, 12, 16], &mut rng);
    out.push(grad("upsample2x", |v| probe_sum(&v[0].upsample2x()?, &up), &[img.clone()], tol, None));
    let down = random(&[3, 3, 4], &mut rng);
    out.push(grad("avg_pool2x", |v| probe_sum(&v[0].avg_pool2x()?, &down), &[img.clone()], tol, None));
    out.push(grad("reshape, mean, neg", |v| Ok(v[0].reshape(&[3, 48])?.mean_axis(1)?.neg().square().sum().add(&v[0].mean())?), &[img.clone()], tol, None));

    for (name, mode) in [("low-frequency module", FilterMode::Low), ("high-frequency module", FilterMode::High)] {
        let module = SpectralFilterModule::new(3, FrequencyFilter::new(mode, 2.0).expect("sigma"), &mut rng);
        let mut inputs = vec![img.clone()];
        inputs.extend(random_params(&module, &mut rng));
        let sp = random(&[3, 6, 8], &mut rng);
        let f = |v: &[Tensor]| probe_sum(&with_params(&module, &v[1..]).forward(&v[0]).map_err(invalid)?, &sp);
        out.push(grad(name, f, &inputs, tol, None));
    }

    let qkv = [random(&[3, 5], &mut rng), random(&[3, 7], &mut rng), random(&[4, 7], &mut rng)];
    let rp = random(&[4, 5], &mut rng);
    let chain = |v: &[Tensor]| {
        let w = topk_normalize(&affinity(&v[0], &v[1]).map_err(invalid)?, 3).map_err(invalid)?;
        probe_sum(&readout(&w, &v[2]).map_err(invalid)?, &rp)
    };
    out.push(grad("affinity, top-k, readout", chain, &qkv, tol, None));
    out.push(grad("fused memory read", |v| probe_sum(&fused_read(&v[0], &v[1], &v[2], 3).map_err(invalid)?, &rp), &qkv, tol, None));

    let logits = random(&[1, 6, 6], &mut rng).scale(3.0);
    let target = Tensor::from_fn(&[1, 6, 6], |i| ((i / 6 + i % 6) % 3 == 0) as u8 as f64);
    let edges = laplacian_boundary(&target, 0.1).expect("boundary");
    out.push(grad("dice loss", |v| dice_loss(&v[0].sigmoid(), &target, 1e-5).map_err(invalid), &[logits.clone()], tol, None));
    out.push(grad("binary cross-entropy", |v| bce_with_logits(&v[0], &target).map_err(invalid), &[logits.clone()], tol, None));
    out.push(grad("boundary loss", |v| boundary_loss(&v[0], &edges, 1e-5).map_err(invalid), &[logits], tol, None));
    let two = random(&[2, 6, 6], &mut rng).scale(2.0);
    let labels: Vec<u8> = (0..36).map(|i| (i % 5 == 0) as u8).collect();
    out.push(grad("bootstrapped cross-entropy", |v| bootstrapped_ce(&v[0], &labels, 0.3).map_err(invalid), &[two], tol, None));

    let block = FusionBlock::new(3, &mut rng);
    let mut inputs = vec![random(&[3, 4, 4], &mut rng), random(&[3, 4, 4], &mut rng)];
    inputs.extend(random_params(&block, &mut rng));
    let fp = random(&[3, 4, 4], &mut rng);
    out.push(grad("fusion block", |v| probe_sum(&with_params(&block, &v[2..]).forward(&v[0], &v[1]).map_err(invalid)?, &fp), &inputs, tol, None));

    let (model, sample) = tiny_model_and_sample();
    let params: Vec<Tensor> = model.named_params().into_iter().map(|(_, t)| t).collect();
    let f = |v: &[Tensor]| Ok(with_params(&model, v).sample_loss(&sample, 1.0).map_err(invalid)?.0);
    out.push(grad("tiny model, training loss", f, &params, 5e-3, Some(4)));
    out
}

/// Closed-form loss and metric values.
pub fn identity_checks() -> Vec<Check> {
    let t = |v: &[f64]| Tensor::new(&[v.len()], v.to_vec()).expect("vector");
    let dice = |p: &[f64], q: &[f64]| dice_loss(&t(p), &t(q), 0.0).and_then(|l| Ok(l.item()?)).unwrap_or(f64::NAN);
    let mut out = vec![
        check("loss", "dice at perfect prediction", dice(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).abs(), 1e-12),
        check("loss", "dice at disjoint prediction - 1", (dice(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs(), 1e-12),
        check("loss", "dice([1,0], [1,1]) - 1/3", (dice(&[1.0, 0.0], &[1.0, 1.0]) - 1.0 / 3.0).abs(), 1e-12),
    ];
    let mask = |f: &dyn Fn(usize, usize) -> bool| Tensor::from_fn(&[1, 16, 16], |i| f(i / 16, i % 16) as u8 as f64);
    let a = mask(&|y, x| (2..7).contains(&y) && (3..9).contains(&x));
    let b = mask(&|y, x| (11..14).contains(&y) && (11..15).contains(&x));
    out.push(check("metric", "J of identical masks - 1", (jaccard(&a, &a).unwrap_or(0.0) - 1.0).abs(), 1e-12));
    out.push(check("metric", "F of identical masks - 1", (contour_f(&a, &a, 1).unwrap_or(0.0) - 1.0).abs(), 1e-12));
    out.push(check("metric", "J of disjoint masks", jaccard(&a, &b).unwrap_or(1.0), 1e-12));
    out.push(check("metric", "F of disjoint masks", contour_f(&a, &b, 1).unwrap_or(1.0), 1e-12));
    let shifted = mask(&|y, x| (3..8).contains(&y) && (4..10).contains(&x));
    let drops = (0..5)
        .map(|r| contour_f(&a, &shifted, r).unwrap_or(f64::NAN))
        .collect::<Vec<_>>()
        .windows(2)
        .map(|p| (p[0] - p[1]).max(0.0))
        .fold(0.0, f64::max);
    out.push(check("metric", "largest drop of F as tolerance grows", drops, 1e-12));
    out
}

/// Every check, in table order.
pub fn run_all() -> Vec<Check> {
    let mut all = spectral_checks();
    all.extend(gradient_checks());
    all.extend(identity_checks());
    all
}

#[cfg(test)]
mod tests {
    #[test]
    fn every_check_passes() {
        let failed: Vec<_> = super::run_all().into_iter().filter(|c| !c.passed()).collect();
        assert!(failed.is_empty(), "{failed:?}");
    }
}
