//! Release acceptance suite. Each test covers one numbered criterion and
//! prints a single `criterion N (name): pass` line before asserting, so a
//! `--nocapture` run reads as a checklist.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use srender::evaluation::{fid, fisherface_acc, run_ablation, PatchSampleConfig};
use srender::imaging::{DomainTag, Image};
use srender::linedraw::{build_pseudo_pairs, LineDrawingOperator, PseudoPair};
use srender::losses::{
    adv_loss_d, adv_loss_g, fm_loss, generator_backward, rec_loss, stroke_loss, total_g_loss,
    GTermWeights, LossWeights,
};
use srender::manifest::RunManifest;
use srender::networks::{
    Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, Perceptual, PerceptualSpec,
    StrokeClassifier, StrokeClassifierSpec,
};
use srender::nn::{concat_channels, downsample2x_forward, normal, param_digest};
use srender::training::{
    lr_at, read_loss_log, synthetic_stroke_patches, train, train_stroke_classifier, Profile,
    StrokePatchDataset, TrainConfig,
};

/// Prints the checklist line, then fails with the names of any dead checks.
fn report(n: usize, name: &str, checks: &[(String, bool)]) {
    let ok = checks.iter().all(|(_, good)| *good);
    println!("criterion {n} ({name}): {}", if ok { "pass" } else { "FAIL" });
    let dead: Vec<&str> = checks
        .iter()
        .filter(|(_, good)| !good)
        .map(|(what, _)| what.as_str())
        .collect();
    assert!(ok, "criterion {n} failed: {}", dead.join("; "));
    for (what, _) in checks {
        println!("  - {what}");
    }
}

fn img8(seed: usize) -> Array4<f64> {
    Array4::from_shape_fn((1, 1, 8, 8), |(_, _, y, x)| {
        ((seed * 31 + y * 13 + x * 7) % 23) as f64 / 23.0
    })
}

fn micro_nets(
    seed: u64,
) -> (Generator, Discriminator, Discriminator, Perceptual, StrokeClassifier) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Generator::new(GeneratorSpec::micro(), &mut rng);
    let d1 = Discriminator::new(DiscriminatorSpec::micro(), &mut rng);
    let d2 = Discriminator::new(DiscriminatorSpec::micro(), &mut rng);
    let phi = Perceptual::new(PerceptualSpec::micro());
    let psi = StrokeClassifier::new(StrokeClassifierSpec::micro(), &mut rng);
    (g, d1, d2, phi, psi)
}

/// Deterministic stand-in sketches: dark strokes of varying period and
/// orientation on a light ground, so the line-drawing operator finds edges.
fn synthetic_sketches(n: usize, side: usize) -> Vec<(String, Image)> {
    (0..n)
        .map(|i| {
            let period = 3 + i % 5;
            let plane = Array3::from_shape_fn((1, side, side), |(_, y, x)| {
                let stripe: f64 = if (y + 2 * i) % period == 0 { 0.15 } else { 0.9 };
                let band: f64 = if (x + i) % (4 + i % 3) == 0 { 0.25 } else { 1.0 };
                let grad = 0.1 * x as f64 / side as f64;
                (stripe.min(band) - grad).clamp(0.0, 1.0)
            });
            let img = Image::new(plane, DomainTag::Sketch).unwrap();
            (format!("s{i:02}"), img)
        })
        .collect()
}

fn toy_pairs(n: usize) -> Vec<PseudoPair> {
    let op = LineDrawingOperator::dog(1.0, 1.6, 0.005).unwrap();
    build_pseudo_pairs(&op, &synthetic_sketches(n, 64)).unwrap()
}

fn toy_cfg(epochs_const: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs_const,
        epochs_decay: 0,
        profile: Profile::Toy64,
        seed,
        checkpoint_every: 50,
        ..TrainConfig::default()
    }
}

#[test]
fn criterion_01_loss_identities() {
    let (_, d1, d2, phi, psi) = micro_nets(1);
    let z = img8(11);
    let y = img8(12);
    let same = y.clone();
    let fm = fm_loss(&d1, &d2, &z, &y, &same).unwrap();
    let rec = rec_loss(&phi, &y, &same).unwrap();
    let stroke = stroke_loss(&psi, true, &y, &same).unwrap();
    let total = total_g_loss(1.0, 1.0, 1.0, 1.0, &LossWeights::default()).unwrap();
    report(
        1,
        "loss identities",
        &[
            (format!("fm on identical sketches = {fm}"), fm.abs() < 1e-6),
            (format!("rec on identical sketches = {rec}"), rec.abs() < 1e-6),
            (format!("stroke on identical sketches = {stroke}"), stroke.abs() < 1e-6),
            (format!("unit components at default weights = {total}"), total == 111.002),
        ],
    );
}

#[test]
fn criterion_02_gradient_fidelity() {
    fn nudge(g: &mut Generator, pi: usize, ei: usize, dv: f64) {
        let mut ps = g.params_mut();
        ps[pi].1.value.as_slice_mut().unwrap()[ei] += dv;
    }

    let terms = ["adv", "fm", "rec", "stroke"];
    let mut checks = Vec::new();
    for name in terms {
        let tw = GTermWeights {
            adv: (name == "adv") as u8 as f64,
            fm: (name == "fm") as u8 as f64,
            rec: (name == "rec") as u8 as f64,
            stroke: (name == "stroke") as u8 as f64,
        };
        let mut worst = 0.0_f64;
        let mut ok = true;
        for seed in 3..8u64 {
            let (mut g, d1, d2, phi, psi) = micro_nets(seed);
            let z = img8(seed as usize + 11);
            let y_real = img8(seed as usize + 12);
            g.zero_grad();
            generator_backward(&mut g, &d1, &d2, &phi, &psi, true, &z, &y_real, &tw).unwrap();
            let analytic: Vec<Vec<f64>> = g
                .params()
                .iter()
                .map(|(_, p)| p.grad.iter().cloned().collect())
                .collect();
            let term = |g: &Generator| -> f64 {
                let y_fake = g.forward(&z).unwrap();
                match name {
                    "adv" => adv_loss_g(&d1, &d2, &z, &y_fake).unwrap(),
                    "fm" => fm_loss(&d1, &d2, &z, &y_real, &y_fake).unwrap(),
                    "rec" => rec_loss(&phi, &y_real, &y_fake).unwrap(),
                    _ => stroke_loss(&psi, true, &y_real, &y_fake).unwrap(),
                }
            };
            let h = 1e-5;
            for pi in 0..analytic.len() {
                for ei in 0..analytic[pi].len() {
                    nudge(&mut g, pi, ei, h);
                    let up = term(&g);
                    nudge(&mut g, pi, ei, -2.0 * h);
                    let down = term(&g);
                    nudge(&mut g, pi, ei, h);
                    let num = (up - down) / (2.0 * h);
                    let ana = analytic[pi][ei];
                    let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-3);
                    worst = worst.max(rel);
                    ok &= rel <= 1e-3;
                }
            }
        }
        checks.push((format!("{name}: worst relative gap {worst:.2e} over 5 draws"), ok));
    }
    report(2, "gradient fidelity", &checks);
}

#[test]
fn criterion_03_learning_rate_schedule() {
    let cfg = TrainConfig::default();
    let constant = (1..=100).all(|e| lr_at(e, &cfg).unwrap() == 2e-4);
    let mid = lr_at(150, &cfg).unwrap();
    let last = lr_at(200, &cfg).unwrap();
    report(
        3,
        "learning rate schedule",
        &[
            ("epochs 1..=100 hold 2e-4".to_string(), constant),
            (format!("epoch 150 = {mid}"), (mid - 1e-4).abs() < 1e-18),
            (format!("epoch 200 = {last}"), last == 0.0),
        ],
    );
}

#[test]
fn criterion_04_fid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<Vec<f64>> = (0..64)
        .map(|_| (0..5).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    let self_fid = fid(&x, &x).unwrap();
    let mut checks = vec![(format!("fid(X, X) = {self_fid:.2e}"), self_fid < 1e-6)];

    let n = 50_000;
    for shift in [0.5_f64, 1.0] {
        // Mean vector (shift, ..., shift) in 4-D: squared norm 4 * shift^2.
        let want = 4.0 * shift * shift;
        let a: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| normal(&mut rng)).collect())
            .collect();
        let b: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| normal(&mut rng) + shift).collect())
            .collect();
        let got = fid(&a, &b).unwrap();
        checks.push((
            format!("gaussians with squared mean gap {want}: fid = {got:.4}"),
            (got - want).abs() <= 0.05 * want,
        ));
    }
    report(4, "fid oracle", &checks);
}

#[test]
fn criterion_05_architecture_shapes() {
    let mut checks = Vec::new();

    let paper = GeneratorSpec::paper(1, 1);
    checks.push((
        "full profile plans 5 conv, 5 transposed-conv, 9 residual".to_string(),
        paper.layer_plan() == (5, 5, 9),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let toy = Generator::new(GeneratorSpec::toy(1, 1), &mut rng);
    checks.push((
        "instantiated toy generator realizes the same plan".to_string(),
        toy.layer_counts() == (5, 5, 9),
    ));

    for side in [64usize, 128] {
        let x = Array4::from_shape_fn((1, 1, side, side), |(_, _, y, x)| {
            ((y * 7 + x) % 11) as f64 / 11.0
        });
        let y = toy.forward(&x).unwrap();
        checks.push((format!("toy generator keeps {side}x{side}"), y.dim() == (1, 1, side, side)));
    }
    // Same stride plan at thin width keeps the 512 forward affordable.
    let thin_spec = GeneratorSpec {
        in_channels: 1,
        out_channels: 1,
        base_channels: 4,
        channel_cap: 8,
        n_down: 4,
        n_resblocks: 9,
    };
    let thin = Generator::new(thin_spec, &mut rng);
    let y = thin.forward(&Array4::from_elem((1, 1, 512, 512), 0.5)).unwrap();
    checks.push(("thin-width generator keeps 512x512".to_string(), y.dim() == (1, 1, 512, 512)));

    // Rebuilding the two-scale objective by hand, with the half-scale
    // branch fed explicitly downsampled tensors, must reproduce adv_loss_d
    // to round-off. That pins what D2 consumes.
    let (_, d1, d2, _, _) = micro_nets(6);
    let z = img8(21);
    let y_real = img8(22);
    let y_fake = img8(23);
    let got = adv_loss_d(&d1, &d2, &z, &y_real, &y_fake).unwrap();
    let score = |d: &Discriminator, z: &Array4<f64>, y: &Array4<f64>| -> f64 {
        let grid = d.forward(&concat_channels(z, y)).unwrap();
        grid.sum() / grid.len() as f64
    };
    let z2 = downsample2x_forward(&z);
    let yr2 = downsample2x_forward(&y_real);
    let yf2 = downsample2x_forward(&y_fake);
    checks.push(("downsampled pair has half the sides".to_string(), z2.dim() == (1, 1, 4, 4)));
    let manual = -(score(&d1, &z, &y_real).ln()
        + (1.0 - score(&d1, &z, &y_fake)).ln()
        + score(&d2, &z2, &yr2).ln()
        + (1.0 - score(&d2, &z2, &yf2)).ln());
    checks.push((
        format!("half-scale branch rebuilt by hand: {got:.12} vs {manual:.12}"),
        (got - manual).abs() < 1e-12,
    ));

    report(5, "architecture shapes", &checks);
}

#[test]
fn criterion_06_stroke_classifier() {
    let patches = synthetic_stroke_patches(200, 32, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ds = StrokePatchDataset::stratified(patches, &mut rng);
    let cfg = TrainConfig {
        epochs_const: 16,
        epochs_decay: 0,
        lr0: 1e-2,
        batch_size: 16,
        profile: Profile::Toy64,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let (psi, acc) = train_stroke_classifier(&ds, &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let before = param_digest(&psi.params());
    let dir = tempfile::tempdir().unwrap();
    let bundle = train(&toy_pairs(2), &toy_cfg(1, 0), dir.path(), Some(psi), false).unwrap();
    let after = param_digest(&bundle.psi.params());

    report(
        6,
        "stroke classifier",
        &[
            (format!("held-out accuracy {acc:.4} in {secs:.0}s"), acc >= 0.95 && secs < 300.0),
            ("parameters bit-identical after a GAN run".to_string(), before == after),
        ],
    );
}

#[test]
fn criterion_07_smoke_training() {
    let pairs = toy_pairs(8);
    // 50-odd steps at the production rate barely move the objective at this
    // scale, so the smoke run uses a proportionally larger rate.
    let cfg = TrainConfig { lr0: 2e-3, ..toy_cfg(7, 0) };
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    train(&pairs, &cfg, dir.path(), None, false).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let rows = read_loss_log(&dir.path().join("loss_log.csv")).unwrap();
    let finite = rows.iter().all(|r| {
        [r.adv_d, r.adv_g, r.fm, r.rec, r.stroke, r.total_g, r.lr]
            .iter()
            .all(|v| v.is_finite())
    });
    let first = &rows[0];
    let base = first.fm + first.rec;
    let tail: Vec<f64> = rows
        .iter()
        .filter(|r| r.epoch == cfg.epochs_const)
        .map(|r| r.fm + r.rec)
        .collect();
    let end = tail.iter().sum::<f64>() / tail.len() as f64;
    report(
        7,
        "smoke training",
        &[
            (format!("{} steps logged", rows.len()), rows.len() == 56),
            ("every logged value finite".to_string(), finite),
            (
                format!("fm+rec step 1 {base:.5} -> last epoch {end:.5}"),
                end <= 0.8 * base,
            ),
            (format!("runtime {secs:.0}s"), secs < 600.0),
        ],
    );
}

#[test]
fn criterion_08_ablation_harness() {
    let pairs = toy_pairs(6);
    let cfg = toy_cfg(1, 3);
    let sample = PatchSampleConfig { n_patches: 48, patch_size: 24, seed: 9 };
    let dir = tempfile::tempdir().unwrap();
    let rows = run_ablation(&pairs, &cfg, &sample, dir.path(), None).unwrap();

    let mut zeroed = rows[0].config.clone();
    zeroed.weights.lambda_str = 0.0;
    report(
        8,
        "ablation harness",
        &[
            (
                "variants are full and no_stroke".to_string(),
                rows.len() == 2 && rows[0].variant == "full" && rows[1].variant == "no_stroke",
            ),
            (
                "stroke weight present then dropped".to_string(),
                rows[0].config.weights.lambda_str > 0.0
                    && rows[1].config.weights.lambda_str == 0.0,
            ),
            ("configs differ only at the stroke weight".to_string(), zeroed == rows[1].config),
            (
                "shared patch-sampling fingerprint".to_string(),
                rows[0].report.sample_config.fingerprint()
                    == rows[1].report.sample_config.fingerprint(),
            ),
            (
                "shared embedder fingerprint".to_string(),
                rows[0].report.embedder_fingerprint == rows[1].report.embedder_fingerprint,
            ),
        ],
    );
}

#[test]
fn criterion_09_determinism() {
    let pairs = toy_pairs(4);
    let cfg = toy_cfg(2, 11);
    let hashes: BTreeMap<String, String> = pairs
        .iter()
        .map(|p| (p.source_id.clone(), p.operator_fingerprint.clone()))
        .collect();
    let op_fp = pairs[0].operator_fingerprint.clone();
    let m1 = RunManifest::new("train", cfg.clone(), hashes.clone(), &op_fp);
    let m2 = RunManifest::new("train", cfg.clone(), hashes, &op_fp);

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    train(&pairs, &cfg, dir_a.path(), None, false).unwrap();
    train(&pairs, &cfg, dir_b.path(), None, false).unwrap();
    let log_a = std::fs::read(dir_a.path().join("loss_log.csv")).unwrap();
    let log_b = std::fs::read(dir_b.path().join("loss_log.csv")).unwrap();
    report(
        9,
        "determinism",
        &[
            ("identical manifests fingerprint alike".to_string(), m1.fingerprint() == m2.fingerprint()),
            (
                format!("loss logs byte-identical ({} bytes)", log_a.len()),
                !log_a.is_empty() && log_a == log_b,
            ),
        ],
    );
}

#[test]
fn criterion_10_fisherface_sanity() {
    fn member(id: usize, v: usize) -> Image {
        let plane = Array3::from_shape_fn((1, 16, 16), |(_, y, x)| {
            let bar: f64 = if (x / 4) % 4 == id { 0.1 } else { 0.85 };
            let jitter = ((v * 7 + y) % 5) as f64 * 0.01;
            (bar + jitter).clamp(0.0, 1.0)
        });
        Image::new(plane, DomainTag::Sketch).unwrap()
    }
    let gallery: Vec<(Image, String)> = (0..4)
        .flat_map(|id| (0..4).map(move |v| (member(id, v), format!("id{id}"))))
        .collect();
    let self_acc = fisherface_acc(&gallery, &gallery).unwrap();

    // Pure-noise images carry no identity signal, so random balanced labels
    // cannot beat chance on fresh probes.
    let c = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let trials = 20;
    let mut total = 0.0;
    for _ in 0..trials {
        let noise = |rng: &mut ChaCha8Rng| {
            let plane = Array3::from_shape_fn((1, 16, 16), |_| rng.gen_range(0.0..1.0));
            Image::new(plane, DomainTag::Sketch).unwrap()
        };
        let mut labels: Vec<usize> = (0..16).map(|i| i % c).collect();
        for i in (1..labels.len()).rev() {
            let j = rng.gen_range(0..=i);
            labels.swap(i, j);
        }
        let noisy_gallery: Vec<(Image, String)> = labels
            .iter()
            .map(|&l| (noise(&mut rng), format!("id{l}")))
            .collect();
        let probes: Vec<(Image, String)> = (0..8)
            .map(|i| (noise(&mut rng), format!("id{}", i % c)))
            .collect();
        total += fisherface_acc(&noisy_gallery, &probes).unwrap();
    }
    let mean = total / trials as f64;
    report(
        10,
        "fisherface sanity",
        &[
            (format!("probes == gallery -> accuracy {self_acc}"), self_acc == 1.0),
            (
                format!("permuted-label mean {mean:.3} vs chance {:.2}", 1.0 / c as f64),
                (mean - 1.0 / c as f64).abs() < 0.15,
            ),
        ],
    );
}
