//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line and
//! the binary exits non-zero if any of them fails.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test -p hybridgan --test acceptance -- 1 4`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use hybridgan::data::synthetic::{generate_synthetic, region_label_palette, SyntheticTask, SyntheticTaskSpec};
use hybridgan::data::{Phase, SampleCounts};
use hybridgan::eval::{
    evaluate_translation, mean_l1_error, quantize_rgb, ConfusionMatrix, Direction, EvalMode, EvalOptions, LabelMap,
    LabelPalette,
};
use hybridgan::losses::{compose_paired_objective, compose_unpaired_objective, FeatureExtractor, LossReport, LossWeights, Term};
use hybridgan::networks::{
    build_discriminator, discriminator_forward, receptive_field, DiscriminatorConfig, GeneratorConfig, NamedTensor,
    NetworkParameters, NormKind,
};
use hybridgan::training::{
    discriminator_pass, generator_pass, lr_at_epoch, save_checkpoint, training_step, GeneratorOptions, NetId, Networks,
    Perceptual, PoolEntry, TrainHooks, TrainState,
};
use hybridgan::{load_checkpoint, train, DatasetManifest, Domain, ImageBatch, ImagePool, PreprocessConfig, Tensor, TrainConfig};
use ndarray::{concatenate, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

fn main() {
    let checks: [(u32, &str, Check); 9] = [
        (1, "receptive field", receptive_field_is_70),
        (2, "gradient suite", gradients_match_finite_differences),
        (3, "objective composition", objectives_compose_exactly),
        (4, "schedule table", schedule_table),
        (5, "image pool", image_pool),
        (6, "metrics oracle", metrics_oracle),
        (7, "determinism and resumability", determinism_and_resume),
        (8, "desk-scale hybrid claim", hybrid_claim),
        (9, "convergence smoke", convergence_smoke),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, check) in checks {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- helpers

fn random_tensor(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Tensor {
    Tensor::from_shape_fn(shape, |_| rng.random_range(-0.9..0.9))
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        generator: GeneratorConfig {
            base_filters: 2,
            num_resblocks: 1,
            ..Default::default()
        },
        discriminator: DiscriminatorConfig {
            layer_filters: vec![4, 4],
            layer_strides: vec![2, 1],
            ..Default::default()
        },
        preprocess: PreprocessConfig::fixed(8),
        pool_size: 3,
        ..Default::default()
    }
}

/// Copy of `params` with flat parameter `k` moved by `delta`.
fn nudged(params: &NetworkParameters, k: usize, delta: f64) -> NetworkParameters {
    let mut weights: Vec<NamedTensor> = params.weights().to_vec();
    let mut seen = 0;
    for w in &mut weights {
        if k < seen + w.value.len() {
            *w.value.iter_mut().nth(k - seen).unwrap() += delta;
            break;
        }
        seen += w.value.len();
    }
    NetworkParameters::from_parts(params.architecture().clone(), weights).unwrap()
}

/// Worst relative error between `analytic` and central differences of `f`
/// over `samples` randomly chosen parameters.
fn worst_fd_error(analytic: &[f64], samples: usize, seed: u64, f: impl Fn(usize, f64) -> f64) -> f64 {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let k = rng.random_range(0..analytic.len());
        let fd = (f(k, h) - f(k, -h)) / (2.0 * h);
        let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-4);
        worst = worst.max(err);
    }
    worst
}

/// Fixed two-layer feature map: the image and its elementwise square.
struct SquareFeatures;

impl FeatureExtractor for SquareFeatures {
    fn extract(&self, image: &Tensor) -> Vec<Tensor> {
        vec![image.clone(), image.mapv(|v| v * v)]
    }

    fn backprop(&self, image: &Tensor, feature_grads: &[Tensor]) -> Tensor {
        &feature_grads[0] + &(image * &feature_grads[1] * 2.0)
    }
}

fn set_net(nets: &Networks, id: NetId, params: NetworkParameters) -> Networks {
    let mut n = nets.clone();
    *n.get_mut(id) = params;
    n
}

fn with_condition(condition: &Tensor, image: &Tensor) -> Tensor {
    concatenate(Axis(1), &[condition.view(), image.view()]).unwrap()
}

fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        total_epochs: 60,
        paired_epochs: 15,
        lr_constant_epochs: 30,
        seed,
        generator: GeneratorConfig {
            base_filters: 8,
            num_resblocks: 2,
            ..Default::default()
        },
        discriminator: DiscriminatorConfig {
            layer_filters: vec![16, 32, 32],
            layer_strides: vec![2, 2, 1],
            ..Default::default()
        },
        preprocess: PreprocessConfig::fixed(32),
        weights: LossWeights {
            lambda_identity: 0.5,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn synthetic(dir: &Path, task: SyntheticTask, paired: usize, unpaired: usize, seed: u64) -> DatasetManifest {
    generate_synthetic(
        &SyntheticTaskSpec {
            resolution: 32,
            num_paired: paired,
            num_unpaired: unpaired,
            task,
            seed,
        },
        dir,
    )
    .unwrap()
}

// ---------------------------------------------------------------- 1

/// Output cells whose value changes when input column `px` of row `py` is perturbed.
fn influences(d: &NetworkParameters, base: &ImageBatch, py: usize, px: usize, cell: (usize, usize)) -> bool {
    let mut t = base.data().clone();
    for c in 0..3 {
        t[[0, c, py, px]] = -t[[0, c, py, px]] * 0.5 + 0.25;
    }
    let moved = ImageBatch::new(t, Domain::Y).unwrap();
    let a = discriminator_forward(d, base, None).unwrap().data;
    let b = discriminator_forward(d, &moved, None).unwrap().data;
    a[[0, 0, cell.0, cell.1]] != b[[0, 0, cell.0, cell.1]]
}

fn receptive_field_is_70() -> Result<String, String> {
    let analytic = receptive_field(&DiscriminatorConfig::default());
    ensure(analytic == 70, || format!("analytic receptive field {analytic}"))?;

    // Instance norm mixes every position into every output, so the probe
    // measures the convolution stack alone.
    let config = DiscriminatorConfig {
        norm: NormKind::None,
        ..Default::default()
    };
    let d = build_discriminator(&config, 1).unwrap();
    let size = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let base = ImageBatch::new(random_tensor(&mut rng, (1, 3, size, size)), Domain::Y).unwrap();
    let (_, _, h, w) = discriminator_forward(&d, &base, None).unwrap().data.dim();
    let cell = (h / 2, w / 2);
    let mut extents = Vec::new();
    for axis in 0..2 {
        let hit = |i: usize| {
            let (py, px) = if axis == 0 { (size / 2, i) } else { (i, size / 2) };
            influences(&d, &base, py, px, cell)
        };
        let first = (0..size).find(|&i| hit(i)).ok_or("no input pixel reaches the probed cell")?;
        let last = (0..size).rev().find(|&i| hit(i)).unwrap();
        // The influenced span must be contiguous.
        ensure((first..=last).step_by(7).all(hit), || format!("gap inside [{first}, {last}]"))?;
        extents.push(last - first + 1);
    }
    ensure(extents == [70, 70], || format!("probed extents {extents:?}"))?;
    Ok(format!("analytic {analytic}, probed {}x{} on {size}x{size}", extents[1], extents[0]))
}

// ---------------------------------------------------------------- 2

fn gradients_match_finite_differences() -> Result<String, String> {
    let config = tiny_config();
    let weights = LossWeights::default();
    let perceptual = Perceptual {
        extractor: Arc::new(SquareFeatures),
        layer_weights: vec![1.0, 0.5],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    let mut worst_all: f64 = 0.0;
    let x = random_tensor(&mut rng, (1, 3, 8, 8));
    let y = random_tensor(&mut rng, (1, 3, 8, 8));
    let nets = Networks::build(&config, 5).unwrap();
    for (phase, terms) in [
        (
            Phase::Paired,
            vec![Term::GanG1D1, Term::GanG2D2, Term::CondPairedD4, Term::CondPairedD3, Term::CycleL1, Term::Identity, Term::Perceptual],
        ),
        (
            Phase::Unpaired,
            vec![Term::GanG1D1, Term::GanG2D2, Term::CycleAdvD3, Term::CycleAdvD4, Term::CycleL1, Term::Identity],
        ),
    ] {
        for term in terms {
            let options = GeneratorOptions {
                weights: &weights,
                identity: true,
                perceptual: Some(&perceptual),
                only: Some(term),
            };
            let pass = generator_pass(&nets, &x, &y, phase, &options).unwrap();
            ensure(pass.objective == pass.report.get(term).unwrap(), || format!("{term:?} objective mismatch"))?;
            for (id, analytic) in [(NetId::G1, &pass.g1), (NetId::G2, &pass.g2)] {
                let worst = worst_fd_error(&analytic.flat(), 25, 9, |k, h| {
                    let n = set_net(&nets, id, nudged(nets.get(id), k, h));
                    generator_pass(&n, &x, &y, phase, &options).unwrap().objective
                });
                ensure(worst < 1e-3, || format!("{phase:?} {term:?} {id:?} relative error {worst:.2e}"))?;
                worst_all = worst_all.max(worst);
                checked += 1;
            }
        }
    }

    // Discriminator sides: D1/D2 on plain images, D3/D4 on (condition, image)
    // stacks. Generators need at least 8x8 inputs; a one-layer critic also
    // covers 4x4.
    let one_layer = TrainConfig {
        discriminator: DiscriminatorConfig {
            layer_filters: vec![4],
            layer_strides: vec![1],
            ..Default::default()
        },
        ..tiny_config()
    };
    for (size, nets) in [(4, Networks::build(&one_layer, 6).unwrap()), (8, nets.clone())] {
        let mut img = || random_tensor(&mut rng, (1, 3, size, size));
        let (x, y, fake_x, fake_y) = (img(), img(), img(), img());
        let inputs = [
            (NetId::D1, y.clone(), fake_y.clone()),
            (NetId::D2, x.clone(), fake_x.clone()),
            (NetId::D3, with_condition(&y, &x), with_condition(&y, &fake_x)),
            (NetId::D4, with_condition(&x, &y), with_condition(&fake_x, &fake_y)),
        ];
        for (id, real, fake) in inputs {
            let d = nets.get(id);
            let (_, grads) = discriminator_pass(d, real.clone(), fake.clone());
            let worst = worst_fd_error(&grads.flat(), 25, 10, |k, h| {
                discriminator_pass(&nudged(d, k, h), real.clone(), fake.clone()).0
            });
            ensure(worst < 1e-3, || format!("{size}x{size} {id:?} discriminator relative error {worst:.2e}"))?;
            worst_all = worst_all.max(worst);
            checked += 1;
        }
    }
    Ok(format!("{checked} (term, network) pairs, worst relative error {worst_all:.2e}"))
}

// ---------------------------------------------------------------- 3

fn objectives_compose_exactly() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let weights = LossWeights::default();
    // Dyadic values keep every sum exact regardless of order.
    let mut v = || rng.random_range(0..512) as f64 / 64.0;
    for _ in 0..100 {
        let report = LossReport::with_terms(Term::ALL.map(|t| (t, v())));
        let g = |t| report.get(t).unwrap();
        let tail = weights.lambda_cycle_l1 * g(Term::CycleL1)
            + weights.lambda_identity * g(Term::Identity)
            + weights.lambda_perceptual * g(Term::Perceptual);
        let paired = g(Term::GanG1D1) + g(Term::GanG2D2) + g(Term::CondPairedD4) + g(Term::CondPairedD3) + tail;
        let unpaired = g(Term::GanG1D1) + g(Term::GanG2D2) + g(Term::CycleAdvD3) + g(Term::CycleAdvD4) + tail;
        let d_sum = g(Term::D1) + g(Term::D2) + g(Term::D3) + g(Term::D4);
        let p = compose_paired_objective(&report, &weights).unwrap();
        let u = compose_unpaired_objective(&report, &weights).unwrap();
        ensure(p.generator_total == paired, || format!("paired {} vs {paired}", p.generator_total))?;
        ensure(u.generator_total == unpaired, || format!("unpaired {} vs {unpaired}", u.generator_total))?;
        ensure(p.discriminators.sum() == d_sum && u.discriminators.sum() == d_sum, || "discriminator totals".into())?;
    }

    // Phase boundary under the default 200 / 50 schedule.
    let config = tiny_config();
    let counts = SampleCounts {
        paired: 4,
        unpaired_x: 4,
        unpaired_y: 4,
    };
    let mut state = TrainState::new(&config, counts).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = ImageBatch::new(random_tensor(&mut rng, (1, 3, 8, 8)), Domain::X).unwrap();
    let y = ImageBatch::new(random_tensor(&mut rng, (1, 3, 8, 8)), Domain::Y).unwrap();
    let paired_only = [Term::CondPairedD4, Term::CondPairedD3];
    let unpaired_only = [Term::CycleAdvD3, Term::CycleAdvD4];
    let mut seen = Vec::new();
    for (epoch, phase, present, absent) in [
        (50, Phase::Paired, paired_only, unpaired_only),
        (51, Phase::Unpaired, unpaired_only, paired_only),
    ] {
        state.begin_epoch(epoch, counts, &config);
        ensure(state.phase == phase, || format!("epoch {epoch} is {:?}", state.phase))?;
        let other = if phase == Phase::Paired { Phase::Unpaired } else { Phase::Paired };
        ensure(training_step(&mut state, &x, &y, other, &config).is_err(), || format!("epoch {epoch} accepted a {other:?} step"))?;
        let report = training_step(&mut state, &x, &y, phase, &config).unwrap();
        ensure(present.iter().all(|&t| report.has(t)) && !absent.iter().any(|&t| report.has(t)), || {
            format!("epoch {epoch} terms {:?}", report.terms.keys().collect::<Vec<_>>())
        })?;
        let expected = match phase {
            Phase::Paired => compose_paired_objective(&report, &config.weights),
            Phase::Unpaired => compose_unpaired_objective(&report, &config.weights),
        }
        .unwrap();
        ensure(report.total_generator == expected.generator_total, || format!("epoch {epoch} total"))?;
        seen.push(format!("epoch {epoch} {}", phase.as_str()));
    }
    Ok(format!("100 random reports exact; {}", seen.join(", ")))
}

// ---------------------------------------------------------------- 4

fn schedule_table() -> Result<String, String> {
    let config = TrainConfig::default();
    let table = [(1, 2e-4), (100, 2e-4), (150, 1e-4), (200, 0.0)];
    for id in [NetId::G1, NetId::G2, NetId::D1, NetId::D2] {
        for (epoch, lr) in table {
            let got = lr_at_epoch(config.optimizer(id), epoch, &config).unwrap();
            ensure(got == lr, || format!("{id:?} epoch {epoch}: {got} != {lr}"))?;
        }
    }
    for id in [NetId::D3, NetId::D4] {
        for epoch in 1..=200 {
            let got = lr_at_epoch(config.optimizer(id), epoch, &config).unwrap();
            ensure(got == 1e-4, || format!("{id:?} epoch {epoch}: {got}"))?;
        }
    }
    Ok("G1/G2/D1/D2 2e-4, 2e-4, 1e-4, 0 at epochs 1/100/150/200; D3/D4 1e-4 throughout".into())
}

// ---------------------------------------------------------------- 5

fn image_pool() -> Result<String, String> {
    let capacity = 50;
    let queries = 10_000;
    let mut pool = ImagePool::new(capacity);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut fresh, mut after_fill) = (0, 0);
    for id in 0..queries {
        let entry = PoolEntry {
            image: Tensor::from_elem((1, 1, 1, 1), id as f64),
            condition: Some(Tensor::from_elem((1, 1, 1, 1), id as f64 + 0.5)),
        };
        let full = pool.len() == capacity;
        let out = pool.query(entry, &mut rng);
        ensure(pool.len() <= capacity, || format!("pool holds {} after query {id}", pool.len()))?;
        let image = out.image[[0, 0, 0, 0]];
        let condition = out.condition.as_ref().map(|c| c[[0, 0, 0, 0]]);
        ensure(condition == Some(image + 0.5), || format!("query {id}: image {image} with condition {condition:?}"))?;
        if full {
            after_fill += 1;
            if image == id as f64 {
                fresh += 1;
            }
        }
    }
    let fraction = fresh as f64 / after_fill as f64;
    ensure((fraction - 0.5).abs() <= 0.02, || format!("fresh fraction {fraction:.4}"))?;
    Ok(format!("capacity {capacity} held over {queries} queries, fresh fraction {fraction:.4}, tuples matched"))
}

// ---------------------------------------------------------------- 6

fn nearest_oracle(palette: &LabelPalette, p: [u8; 3]) -> usize {
    let mut best = (i64::MAX, 0);
    for e in palette.entries() {
        let d: i64 = (0..3).map(|k| (e.color[k] as i64 - p[k] as i64).pow(2)).sum();
        if d < best.0 {
            best = (d, e.class_id);
        }
    }
    best.1
}

fn metrics_oracle() -> Result<String, String> {
    let m = ConfusionMatrix::from_counts(&[vec![3, 1], vec![2, 4]]).unwrap().metrics().unwrap();
    ensure(
        (m.pixel_accuracy - 0.7).abs() < 1e-12 && (m.mean_accuracy - 0.7083).abs() < 1e-4 && (m.mean_iu - 0.5357).abs() < 1e-4,
        || format!("two-class example gave {m:?}"),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let labels = LabelMap::new(16, 16, (0..256).map(|_| rng.random_range(0..3)).collect()).unwrap();
    let mut perfect = ConfusionMatrix::new(3);
    perfect.accumulate(&labels, &labels).unwrap();
    let p = perfect.metrics().unwrap();
    ensure((p.pixel_accuracy, p.mean_accuracy, p.mean_iu) == (1.0, 1.0, 1.0), || format!("perfect prediction gave {p:?}"))?;

    let region = region_label_palette();
    let mut mismatches = 0;
    for i in 0..100 {
        let random_palette;
        let palette = if i % 2 == 0 {
            &region
        } else {
            let colors: Vec<[u8; 3]> = (0..5).map(|_| rng.random()).collect();
            random_palette = LabelPalette::from_colors(&colors).unwrap();
            &random_palette
        };
        let img = image::RgbImage::from_fn(24, 24, |_, _| image::Rgb(rng.random()));
        let q = quantize_rgb(&img, palette);
        for (x, y, p) in img.enumerate_pixels() {
            if q.get(y as usize, x as usize) != nearest_oracle(palette, p.0) {
                mismatches += 1;
            }
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} quantizer mismatches"))?;
    Ok(format!(
        "two-class ({:.4}, {:.4}, {:.4}); perfect (1, 1, 1); quantizer agrees on 100 images",
        m.pixel_accuracy, m.mean_accuracy, m.mean_iu
    ))
}

// ---------------------------------------------------------------- 7

fn small_run_config() -> TrainConfig {
    TrainConfig {
        total_epochs: 5,
        paired_epochs: 2,
        lr_constant_epochs: 3,
        seed: 21,
        preprocess: PreprocessConfig::fixed(16),
        ..desk_config(21)
    }
}

fn determinism_and_resume() -> Result<String, String> {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic(
        &SyntheticTaskSpec {
            resolution: 16,
            num_paired: 4,
            num_unpaired: 12,
            task: SyntheticTask::ColorInversion,
            seed: 3,
        },
        &tmp.path().join("data"),
    )
    .unwrap();
    let config = small_run_config();
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        train(
            &manifest,
            &config,
            TrainHooks {
                checkpoint_dir: Some(dir.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        std::fs::read(dir.join("final.ckpt")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    ensure(a == b, || "two runs from one seed produced different checkpoints".into())?;

    // Stop after epoch 3, reload from disk and finish.
    let dir = tmp.path().join("interrupted");
    let mut stop = |s: &TrainState| {
        if s.completed_epochs == 3 {
            Err(hybridgan::Error::Validation("interrupt".into()))
        } else {
            Ok(())
        }
    };
    let stopped = train(
        &manifest,
        &config,
        TrainHooks {
            checkpoint_dir: Some(dir.clone()),
            on_epoch: Some(&mut stop),
            ..Default::default()
        },
    );
    ensure(stopped.is_err(), || "interrupt hook was ignored".into())?;
    let state = load_checkpoint(&dir.join("latest.ckpt")).unwrap();
    ensure(state.completed_epochs == 3, || format!("checkpoint at epoch {}", state.completed_epochs))?;
    let resumed = hybridgan::training::resume(state, &manifest, &config, TrainHooks::default()).unwrap();
    let path = tmp.path().join("resumed.ckpt");
    save_checkpoint(&resumed, &path).unwrap();
    let c = std::fs::read(&path).unwrap();
    ensure(c == a, || "resumed run diverged from the uninterrupted run".into())?;
    Ok(format!("{} byte checkpoints identical across runs and after resume at epoch 3", a.len()))
}

// ---------------------------------------------------------------- 8

fn photo_to_label_mean_iu(g2: &NetworkParameters, test: &DatasetManifest) -> f64 {
    let palette = region_label_palette();
    let options = EvalOptions {
        direction: Direction::YToX,
        mode: EvalMode::PhotoToLabel,
        palette: Some(&palette),
        segmenter: None,
        preprocess: PreprocessConfig::fixed(32),
        grid_dir: None,
    };
    evaluate_translation(g2, test, &options).unwrap().metrics.mean_iu
}

fn hybrid_claim() -> Result<String, String> {
    let tmp = tempfile::tempdir().unwrap();
    let train_size = 200;
    let regimes = [("unpaired", 0), ("hybrid", 10), ("paired", train_size)];
    let seeds = [1u64, 2, 3];
    let mut means = [0.0; 3];
    let mut cells = Vec::new();
    for seed in seeds {
        let test = synthetic(&tmp.path().join(format!("test{seed}")), SyntheticTask::RegionTexture, 50, 0, 1000 + seed);
        for (r, (name, paired)) in regimes.iter().enumerate() {
            let dir = tmp.path().join(format!("{name}{seed}"));
            let manifest = synthetic(&dir, SyntheticTask::RegionTexture, *paired, train_size - paired, seed);
            let state = train(&manifest, &desk_config(seed), TrainHooks::default()).unwrap();
            let miu = photo_to_label_mean_iu(&state.networks.g2, &test);
            means[r] += miu / seeds.len() as f64;
            cells.push(format!("{name}/s{seed}={miu:.3}"));
        }
    }
    let summary = format!(
        "mean IU unpaired {:.3}, hybrid {:.3}, paired {:.3} ({})",
        means[0],
        means[1],
        means[2],
        cells.join(" ")
    );
    ensure(means[1] - means[0] >= 0.02 && means[2] - means[0] >= 0.02, || summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- 9

fn convergence_smoke() -> Result<String, String> {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synthetic(&tmp.path().join("train"), SyntheticTask::ColorInversion, 10, 190, 1);
    let test = synthetic(&tmp.path().join("test"), SyntheticTask::ColorInversion, 50, 0, 1001);
    let config = desk_config(1);
    let preprocess = config.preprocess.clone();
    let mut curve = Vec::new();
    let mut record = |s: &TrainState| {
        curve.push(mean_l1_error(&s.networks.g1, &test, Direction::XToY, &preprocess)?);
        Ok(())
    };
    train(
        &manifest,
        &config,
        TrainHooks {
            on_epoch: Some(&mut record),
            ..Default::default()
        },
    )
    .unwrap();
    let windows: Vec<f64> = curve.chunks(10).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    let last = *curve.last().unwrap();
    let shown: Vec<String> = windows.iter().map(|v| format!("{v:.4}")).collect();
    let summary = format!("final L1 {last:.4}, 10-epoch window means [{}]", shown.join(", "));
    ensure(last < 0.15, || summary.clone())?;
    ensure(windows.windows(2).all(|w| w[1] < w[0]), || format!("windows not decreasing: {summary}"))?;
    Ok(summary)
}
