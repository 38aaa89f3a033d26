//! Acceptance gate: one test per criterion, each printing a PASS/FAIL line
//! before asserting. Run with `--nocapture` to see the lines.

use std::path::Path;
use std::time::{Duration, Instant};

use ihdr_core::autodiff::gradcheck::{run_suite, TOLERANCE};
use ihdr_core::autodiff::{losses, Tape};
use ihdr_core::eval::protocol::{align_scale, evaluate, fit_crf_correction, map_to_range};
use ihdr_core::eval::pu21;
use ihdr_core::image::LinearImage;
use ihdr_core::intrinsic::{self, AlbedoMap, ShadingMap};
use ihdr_core::io::{pfm, png, rgbe};
use ihdr_core::isp::{self, IspParams};
use ihdr_core::models::train::{dataset_loss, synthetic_dataset, train, TrainConfig};
use ihdr_core::models::{reconstruct, LdrInputs, Role, ToyNet};
use ihdr_core::{Error, LdrImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n} [{name}]: {status} ({detail})");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_image(r: &mut ChaCha8Rng, h: usize, w: usize, c: usize, lo: f64, hi: f64) -> LinearImage {
    LinearImage::new(h, w, c, (0..h * w * c).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn criterion_1_algebraic_identities() {
    let start = Instant::now();
    let mut r = rng(1);
    let (mut albedo_err, mut inv_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let (h, w) = (r.random_range(1..=6), r.random_range(1..=6));
        let a = AlbedoMap::new(random_image(&mut r, h, w, 3, 0.01, 1.0)).unwrap();
        // shading spans four decades
        let s_img = LinearImage::new(h, w, 1, (0..h * w).map(|_| 10f64.powf(r.random_range(-2.0..2.0))).collect()).unwrap();
        let s = ShadingMap::new(s_img.clone()).unwrap();
        let d = intrinsic::shading_to_inverse(&s).unwrap();
        let i = intrinsic::compose(&a, &s).unwrap();
        let back = intrinsic::implied_albedo(&i, &d).unwrap();
        for (x, y) in back.as_image().data().iter().zip(a.as_image().data()) {
            albedo_err = albedo_err.max(rel(*x, *y));
        }
        let s_back = intrinsic::inverse_to_shading(&d).unwrap();
        for (x, y) in s_back.as_image().data().iter().zip(s_img.data()) {
            inv_err = inv_err.max(rel(*x, *y));
        }
        let j = intrinsic::image_to_inverse(&i).unwrap();
        let i_back = intrinsic::inverse_to_image(&j).unwrap();
        for (x, y) in i_back.data().iter().zip(i.data()) {
            inv_err = inv_err.max(rel(*x, *y));
        }
        for &v in j.as_image().data() {
            inv_err = inv_err.max((intrinsic::to_inverse(intrinsic::from_inverse(v)) - v).abs());
        }
    }
    let elapsed = start.elapsed();
    let pass = albedo_err <= 1e-6 && inv_err <= 1e-10 && elapsed < Duration::from_secs(5);
    report(
        1,
        "algebraic identities",
        pass,
        &format!("implied albedo rel err {albedo_err:.2e} <= 1e-6, inverse roundtrip err {inv_err:.2e} <= 1e-10, {elapsed:.2?} < 5 s"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_gradient_checks() {
    let mut worst_loss: f64 = 0.0;
    let mut worst_op: f64 = 0.0;
    let mut failures = Vec::new();
    let mut count = 0;
    for seed in 0..20 {
        for c in run_suite(seed).unwrap() {
            count += 1;
            if c.name.starts_with("op ") {
                worst_op = worst_op.max(c.max_rel_error);
            } else {
                worst_loss = worst_loss.max(c.max_rel_error);
            }
            if !c.passed() {
                failures.push(c.name.clone());
            }
        }
    }
    let pass = failures.is_empty() && worst_loss < TOLERANCE;
    report(
        2,
        "finite-difference gradients",
        pass,
        &format!("{count} checks over 20 seeds, worst loss rel err {worst_loss:.2e}, worst op rel err {worst_op:.2e}, tolerance {TOLERANCE:e}"),
    );
    assert!(pass, "failed: {failures:?}");
}

fn msg_value(pred: &[f64], target: &[f64], shape: [usize; 3], scales: usize) -> f64 {
    let mut t = Tape::new();
    let p = t.constant(&shape, pred.to_vec()).unwrap();
    let g = t.constant(&shape, target.to_vec()).unwrap();
    let l = losses::msg(&mut t, p, g, scales).unwrap();
    t.item(l)
}

#[test]
fn criterion_3_msg_oracle() {
    let hand = msg_value(&[0.0, 1.0, 0.0, 1.0], &[0.0; 4], [1, 2, 2], 1);
    let mut r = rng(3);
    let mut offsets_exact = true;
    for _ in 0..50 {
        let (c, h, w) = (r.random_range(1..=3), r.random_range(8..=16), r.random_range(8..=16));
        // dyadic values keep every difference exactly representable
        let target: Vec<f64> = (0..c * h * w).map(|_| f64::from(r.random_range(0..256u32)) / 64.0).collect();
        let offset = f64::from(r.random_range(1..64u32)) / 8.0;
        let pred: Vec<f64> = target.iter().map(|v| v + offset).collect();
        offsets_exact &= msg_value(&pred, &target, [c, h, w], 4) == 0.0;
    }
    let pass = hand == 0.25 && offsets_exact;
    report(
        3,
        "multi-scale gradient oracle",
        pass,
        &format!("2x2 example = {hand} (want exactly 0.25), constant offsets give exactly 0 on 50 instances: {offsets_exact}"),
    );
    assert!(pass);
}

#[test]
fn criterion_4_isp() {
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for seed in 0..100 {
        let scene = isp::generate_scene(seed, 32, 32).unwrap();
        let params = IspParams::new(isp::exposure_for_seed(seed), 2.2, 8).unwrap();
        let (codes, _) = isp::simulate_ldr(&scene, &params).unwrap();
        let gain = params.exposure_multiplier();
        let max = params.max_code();
        for (&q, &v) in codes.data().iter().zip(scene.hdr_gt.data()) {
            let crf = (gain * v).min(1.0).powf(1.0 / params.crf_gamma);
            worst = worst.max((f64::from(q) / max - crf).abs());
        }
        let mut last = -1.0;
        for k in 0..=48 {
            let f = isp::clipped_fraction(&scene, -3.0 + 0.125 * f64::from(k));
            monotone &= f >= last;
            last = f;
        }
    }
    let bound = 0.5 / 255.0;
    let pass = worst <= bound && monotone;
    report(
        4,
        "ISP quantization and clipping",
        pass,
        &format!("worst |code/255 - crf| = {worst:.3e} <= {bound:.3e} over 100 scenes, clipped fraction monotone in t: {monotone}"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_toy_training() {
    let start = Instant::now();
    let mut data = synthetic_dataset(0, 64, 64, 2.2, 8).unwrap();
    let cfg = TrainConfig::default();
    assert_eq!((cfg.steps, cfg.learning_rate, cfg.seed), (500, 1e-4, 0));
    let mut shading = ToyNet::build(Role::Shading, cfg.seed);
    let mut albedo = ToyNet::build(Role::Albedo, cfg.seed);
    let mut refine = ToyNet::build(Role::Refinement, cfg.seed);

    let ld0 = dataset_loss(&shading, &data).unwrap();
    train(&mut shading, &data, &cfg).unwrap();
    let ld1 = dataset_loss(&shading, &data).unwrap();
    train(&mut albedo, &data, &cfg).unwrap();
    for ex in &mut data {
        ex.attach_stages(&shading, &albedo).unwrap();
    }
    train(&mut refine, &data, &cfg).unwrap();

    let mut wins = 0;
    let held_out = 1000..1016u64;
    let n = held_out.end - held_out.start;
    for seed in held_out {
        let scene = isp::generate_scene(seed, 64, 64).unwrap();
        let params = IspParams::new(isp::exposure_for_seed(seed), 2.2, 8).unwrap();
        let inputs = LdrInputs::from_scene(&scene, &params).unwrap();
        let rec = reconstruct(&inputs, &shading, &albedo, &refine).unwrap();
        let ours = evaluate(&rec.hdr, &scene.hdr_gt).unwrap().rmse_linear;
        let base = evaluate(&inputs.image, &scene.hdr_gt).unwrap().rmse_linear;
        println!("  held-out seed {seed}: t = {:+.2}, RMSE reconstruct {ours:.3} vs LDR {base:.3}", params.exposure_stops);
        wins += usize::from(ours < base);
    }
    let elapsed = start.elapsed();
    let ratio = ld1 / ld0;
    let needed = (0.8 * n as f64).ceil() as usize;
    let pass = ratio < 0.5 && wins >= needed && elapsed < Duration::from_secs(600);
    report(
        5,
        "toy training regression",
        pass,
        &format!(
            "L^D {ld0:.4} -> {ld1:.4} (ratio {ratio:.3} < 0.5), beats LDR on {wins}/{n} (need {needed}), {:.0} s < 600 s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_evaluation_protocol() {
    let mut r = rng(6);
    let gt = random_image(&mut r, 12, 12, 3, 0.01, 50.0);
    let twice = gt.map(|v| 2.0 * v).unwrap();
    let half = align_scale(&twice, &gt).unwrap();

    let pred = gt.map(|v| 0.3 * v.powf(0.8) + 0.01).unwrap();
    let base = evaluate(&pred, &gt).unwrap();
    let mut invariance: f64 = 0.0;
    for k in [1e-3, 0.37, 5.0, 4096.0] {
        let m = evaluate(&pred.map(|v| k * v).unwrap(), &gt).unwrap();
        invariance = invariance.max(rel(m.rmse_linear, base.rmse_linear)).max(rel(m.pu21_psnr, base.pu21_psnr));
    }

    // pred' = exp(p(ln pred)) for a monotone cubic p, all values inside [1, 1000]
    let mut crf_err: f64 = 0.0;
    for trial in 0..5 {
        let a = [0.2 + 0.05 * f64::from(trial), 0.9, 0.02, -0.001];
        let x = random_image(&mut r, 10, 10, 3, 1.0, 800.0);
        let y = x.map(|v| {
            let l = v.ln();
            (a[0] + l * (a[1] + l * (a[2] + l * a[3]))).exp()
        })
        .unwrap();
        let fit = fit_crf_correction(&x, &y).unwrap();
        for ch in fit {
            for (f, t) in ch.iter().zip(a) {
                crf_err = crf_err.max((f - t).abs());
            }
        }
    }

    let oracle = [
        (0.005, 5.470456654038225e-10),
        (0.01, 0.3722322097176101),
        (0.1, 5.717073839669447),
        (1.0, 36.54391113941914),
        (10.0, 123.64748355384738),
        (100.0, 256.3838973127039),
        (250.0, 318.2759712951802),
        (1000.0, 420.0969213492443),
        (5000.0, 544.5649765946748),
        (10000.0, 595.393920020095),
    ];
    let pu_err = oracle.iter().map(|&(y, v)| rel(pu21::encode(y), v)).fold(0.0, f64::max);

    let pass = half == 0.5 && invariance <= 1e-9 && crf_err <= 1e-6 && pu_err <= 1e-4;
    report(
        6,
        "evaluation protocol",
        pass,
        &format!(
            "align_scale(2 gt, gt) = {half}, scaling invariance {invariance:.2e} <= 1e-9, cubic recovery {crf_err:.2e} <= 1e-6, PU21 rel err {pu_err:.2e} <= 1e-4"
        ),
    );
    assert!(pass);
    assert!(map_to_range(&gt).unwrap().max_value() == 1000.0);
}

fn golden(name: &str) -> Vec<u8> {
    std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

#[test]
fn criterion_7_codecs() {
    let mut r = rng(7);
    let (mut pfm_ok, mut png_ok) = (true, true);
    let mut rgbe_err: f64 = 0.0;
    for k in 0..200 {
        let (h, w) = (r.random_range(1..=24), r.random_range(1..=24));
        let c = if k % 4 == 0 { 1 } else { 3 };
        // f32-representable values spanning many octaves
        let data = (0..h * w * c).map(|_| f64::from((r.random_range(-20.0..20.0f64)).exp2() as f32)).collect();
        let img = LinearImage::new(h, w, c, data).unwrap();
        let back = pfm::decode(&pfm::encode(&img)).unwrap();
        pfm_ok &= back.data().iter().zip(img.data()).all(|(a, b)| a.to_bits() == b.to_bits());

        let codes = (0..h * w * 3).map(|_| r.random_range(0..=255u16)).collect();
        let ldr = LdrImage::new(h, w, 8, codes).unwrap();
        png_ok &= png::decode(&png::encode(&ldr).unwrap()).unwrap() == ldr;

        let rgb = random_image(&mut r, h, w, 3, 0.0, 1.0).map(|v| v * (r_scale(k))).unwrap();
        let back = rgbe::decode(&rgbe::encode(&rgb).unwrap()).unwrap();
        for (p, q) in rgb.data().chunks(3).zip(back.data().chunks(3)) {
            let m = p.iter().copied().fold(0.0, f64::max);
            for (a, b) in p.iter().zip(q) {
                if m > 0.0 {
                    rgbe_err = rgbe_err.max((a - b).abs() / m);
                }
            }
        }
    }

    let gold = golden("gray_half_1x1.pfm");
    let half = LinearImage::new(1, 1, 1, vec![0.5]).unwrap();
    let golden_ok = pfm::encode(&half) == gold && pfm::decode(&gold).unwrap() == half;

    let pass = pfm_ok && png_ok && rgbe_err <= 1.0 / 256.0 && golden_ok;
    report(
        7,
        "codec suite",
        pass,
        &format!(
            "PFM bit-exact on 200: {pfm_ok}, PNG exact on 200: {png_ok}, RGBE err / pixel max {rgbe_err:.3e} <= {:.3e}, 1x1 PFM golden bytes: {golden_ok}",
            1.0 / 256.0
        ),
    );
    assert!(pass);
}

/// Pixel scales from 2^-30 to 2^30 across the RGBE trials.
fn r_scale(k: usize) -> f64 {
    ((k % 61) as f64 - 30.0).exp2()
}

#[test]
fn criterion_8_channel_contracts() {
    let mut ok = true;
    let mut accepted = Vec::new();
    for role in Role::ALL {
        let net = ToyNet::build(role, 0);
        let good: Vec<usize> = (1..=16).filter(|&c| net.check_input(&[c, 8, 8]).is_ok()).collect();
        for c in 1..=16 {
            if c != role.in_channels() {
                ok &= matches!(net.check_input(&[c, 8, 8]), Err(Error::ShapeMismatch(_)));
            }
        }
        ok &= net.layers()[0].cin == role.in_channels();
        let y = net.predict(&vec![0.5; role.in_channels() * 64], 8, 8).unwrap();
        ok &= y.len() == role.out_channels() * 64;
        accepted.push((role, good));
    }
    let want = [vec![4], vec![7], vec![10]];
    ok &= accepted.iter().map(|(_, g)| g.clone()).collect::<Vec<_>>() == want;
    let detail = accepted.iter().map(|(r, g)| format!("{r} accepts {g:?}")).collect::<Vec<_>>().join(", ");
    report(8, "channel contracts", ok, &detail);
    assert!(ok);
}
