//! Acceptance suite. Runs as a plain binary (`harness = false`) so that the
//! PASS/FAIL line of every criterion is always printed. Criterion 8 is soft:
//! it is reported but never fails the run.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gdpo_core::diffusion::{
    empirical_residual_std, pretrain_sample_grads, Architecture, DenoiserModel, DiffusionSchedule, NAOSDConfig,
    PerfectPredictor, Prediction, TrainSample,
};
use gdpo_core::gdpo::{
    dpo_loss, dpo_loss_and_grads, gdpo_loss, gdpo_loss_and_grads, group_advantage, reward_candidates, ExternalScores,
    FrMetric, MetricRegistry, NrMetric, PreferenceContext,
};
use gdpo_core::harness::*;
use gdpo_core::imagecore::{bicubic_upsample, partition_regions, Image, Orientation, PatchGrid};
use gdpo_core::numcore::{gaussian_tensor, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn report(n: usize, title: &str, soft: bool, started: Instant, o: &Outcome) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    let soft = if soft { " (soft)" } else { "" };
    println!("criterion {n} {verdict}{soft}: {title}; {} [{:.1}s]", o.detail, started.elapsed().as_secs_f64());
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn small_model(prediction: Prediction, seed: u64, schedule: &DiffusionSchedule) -> DenoiserModel {
    let arch = Architecture { channels: 1, hidden: vec![4, 4], kernel: 3, embed_dim: 4, prediction };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat: Vec<f64> = (0..arch.num_params()).map(|_| 0.4 * (rng.random::<f64>() - 0.5)).collect();
    DenoiserModel::from_flat(arch, &flat).unwrap().with_schedule(schedule.clone())
}

fn rebuild(like: &DenoiserModel, flat: &[f64]) -> DenoiserModel {
    let m = DenoiserModel::from_flat(like.arch().clone(), flat).unwrap();
    match like.schedule() {
        Some(s) => m.with_schedule(s.clone()),
        None => m,
    }
}

/// Worst relative error of central differences against `analytic`.
fn worst_fd(flat: &[f64], analytic: &[f64], h: f64, loss_at: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..flat.len() {
        let mut p = flat.to_vec();
        p[i] += h;
        let up = loss_at(&p);
        p[i] -= 2.0 * h;
        let down = loss_at(&p);
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6));
    }
    worst
}

fn flatten(g: &[Tensor]) -> Vec<f64> {
    g.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn criterion_1() -> Outcome {
    let s = DiffusionSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = [0.0f64; 3];
    let mut params = 0;
    for (k, prediction) in [Prediction::Noise, Prediction::Sample].into_iter().enumerate() {
        let reference = small_model(prediction, 10 + k as u64, &s);
        let jitter: Vec<f64> = reference.flat().iter().map(|v| v + 0.005 * (rng.random::<f64>() - 0.5)).collect();
        let policy = rebuild(&reference, &jitter);
        params = params.max(policy.num_params());
        let z_lr = random_tensor(&[1, 6, 6], &mut rng);
        let cands: Vec<Tensor> = (0..4).map(|_| random_tensor(&[1, 6, 6], &mut rng)).collect();
        let eps: Vec<Tensor> = (0..4).map(|_| gaussian_tensor(&[1, 6, 6], &mut rng)).collect();
        let adv = group_advantage(&[0.2, 0.9, 0.4, 0.1]);
        let ctx = PreferenceContext { z_lr: &z_lr, t: 180, omega: 50.0, schedule: &s };
        let flat = policy.flat();

        let (_, g) = gdpo_loss_and_grads(&policy, &reference, &cands, &adv, &eps, &ctx).unwrap();
        worst[0] = worst[0].max(worst_fd(&flat, &flatten(&g), 1e-4, |p| {
            gdpo_loss(&rebuild(&policy, p), &reference, &cands, &adv, &eps, &ctx).unwrap()
        }));
        let (_, g) = dpo_loss_and_grads(&policy, &reference, &cands[0], &cands[1], &eps[0], &eps[1], &ctx).unwrap();
        worst[1] = worst[1].max(worst_fd(&flat, &flatten(&g), 1e-4, |p| {
            dpo_loss(&rebuild(&policy, p), &reference, &cands[0], &cands[1], &eps[0], &eps[1], &ctx).unwrap()
        }));

        let lr = Image::from_fn(4, 4, |y, x| ((y * 5 + x * 3) % 7) as f64 / 7.0);
        let sample = TrainSample {
            z_lr: bicubic_upsample(&lr, 2).unwrap().to_tensor(),
            hr: random_tensor(&[1, 8, 8], &mut rng),
            eps: gaussian_tensor(&[1, 8, 8], &mut rng),
        };
        let cfg = NAOSDConfig::default();
        let (_, g) = pretrain_sample_grads(&policy, &sample, 2.0, cfg, &s).unwrap();
        // a 1e-4 step crosses L1 kinks on this fixture, 1e-6 hits roundoff
        worst[2] = worst[2].max(worst_fd(&flat, &flatten(&g), 1e-5, |p| {
            pretrain_sample_grads(&rebuild(&policy, p), &sample, 2.0, cfg, &s).unwrap().0
        }));
    }
    let pass = params < 5000 && worst.iter().all(|&w| w < 1e-4);
    outcome(
        pass,
        format!(
            "{params} parameters, worst relative error gdpo {:.2e}, dpo {:.2e}, pretrain {:.2e} (tolerance 1e-4)",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn criterion_2() -> Outcome {
    let s = DiffusionSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for trial in 0..20u64 {
        let prediction = if trial % 2 == 0 { Prediction::Noise } else { Prediction::Sample };
        let reference = small_model(prediction, 100 + trial, &s);
        let jitter: Vec<f64> = reference.flat().iter().map(|v| v + 1e-4 * (rng.random::<f64>() - 0.5)).collect();
        let policy = rebuild(&reference, &jitter);
        let z_lr = random_tensor(&[1, 6, 6], &mut rng);
        let win = random_tensor(&[1, 6, 6], &mut rng);
        let lose = random_tensor(&[1, 6, 6], &mut rng);
        let eps_w = gaussian_tensor(&[1, 6, 6], &mut rng);
        let eps_l = gaussian_tensor(&[1, 6, 6], &mut rng);
        let t = rng.random_range(1..=1000);
        let ctx = PreferenceContext { z_lr: &z_lr, t, omega: 5000.0, schedule: &s };
        let adv = group_advantage(&[1.0, 0.0]);
        let g =
            gdpo_loss(&policy, &reference, &[win.clone(), lose.clone()], &adv, &[eps_w.clone(), eps_l.clone()], &ctx)
                .unwrap();
        let d = dpo_loss(&policy, &reference, &win, &lose, &eps_w, &eps_l, &ctx).unwrap();
        worst = worst.max((g - d).abs());
    }
    outcome(worst <= 1e-9, format!("max |gdpo − dpo| over 20 fixtures with A = (+1, −1), ω = 5000: {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_mean, mut worst_std, mut worst_affine) = (0.0f64, 0.0f64, 0.0f64);
    let mut equal_ok = true;
    for _ in 0..10_000 {
        let g = rng.random_range(2..=16);
        let rewards: Vec<f64> = (0..g).map(|_| rng.random::<f64>()).collect();
        let a = group_advantage(&rewards).values;
        let n = g as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((std - 1.0).abs());
        let scale = rng.random_range(0.01..100.0);
        let shift = rng.random_range(-50.0..50.0);
        let moved: Vec<f64> = rewards.iter().map(|r| scale * r + shift).collect();
        for (x, y) in a.iter().zip(group_advantage(&moved).values) {
            worst_affine = worst_affine.max((x - y).abs());
        }
        let c = rng.random::<f64>();
        equal_ok &= group_advantage(&vec![c; g]).values.iter().all(|&v| v == 0.0);
    }
    let pass = worst_mean <= 1e-9 && worst_std <= 1e-9 && worst_affine <= 1e-9 && equal_ok;
    outcome(
        pass,
        format!(
            "10000 trials: max |mean| {worst_mean:.1e}, max |std − 1| {worst_std:.1e}, max affine drift {worst_affine:.1e}, \
             all-equal groups zero: {equal_ok}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let s = DiffusionSchedule::default();
    let lr = Image::from_fn(8, 8, |y, x| 0.2 + 0.6 * (((y * 3 + x * 5) % 9) as f64 / 8.0));
    let oracle_gain = |a: usize, d: usize| ((1.0 - s.alpha(a)).sqrt() - (1.0 - s.alpha(d)).sqrt()) / s.alpha(d).sqrt();
    let spread = |a: usize, d: usize| {
        empirical_residual_std(&PerfectPredictor, &lr, 2, NAOSDConfig { t_add: a, t_diff: d }, &s, 1000, 4)
            .unwrap()
            .mean
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for (a, d) in [(100, 100), (250, 250), (500, 500), (250, 100)] {
        let got = spread(a, d);
        let gain = oracle_gain(a, d).abs();
        let ok = if a == d { got < 1e-9 } else { (got - gain).abs() / gain <= 0.1 };
        pass &= ok;
        parts.push(format!("({a},{d}) std {got:.3e} vs gain {gain:.3e}"));
    }
    // fluctuation grows with the injected noise level
    let ladder: Vec<f64> = [100, 175, 250, 375, 500].iter().map(|&a| spread(a, 100)).collect();
    let monotone = ladder.windows(2).all(|w| w[1] > w[0]);
    pass &= monotone;
    parts.push(format!("t_add ladder at t_diff=100 monotone: {monotone}"));
    outcome(pass, parts.join(", "))
}

fn checkerboard(n: usize, cell: usize) -> Image {
    Image::from_fn(n, n, |y, x| ((y / cell + x / cell) % 2) as f64)
}

fn criterion_5() -> Outcome {
    let grid = PatchGrid::default();
    let tau = 2.5;
    let mut fixtures: Vec<Image> = vec![Image::filled(64, 64, 1, 0.4), checkerboard(64, 3)];
    fixtures.extend((0..12).map(|k| procedural_hr(64, 500 + k)));
    fixtures.push(Image::from_fn(64, 64, |y, x| if x < 32 { 0.5 } else { ((y * 7 + x * 13) % 17) as f64 / 16.0 }));
    let maps: Vec<_> = fixtures.iter().map(|img| partition_regions(img, tau, grid).unwrap()).collect();
    let sums_exact = maps.iter().all(|m| m.rho_s + m.rho_d == 1.0);
    let constant = maps[0].rho_s == 1.0;
    let fine = partition_regions(&fixtures[1], 0.5, grid).unwrap().rho_d == 1.0;

    // three candidates scored by PSNR and one external NR metric
    let hr = Image::from_fn(8, 8, |y, x| ((y * 8 + x) % 5) as f64 / 4.0);
    let cands: Vec<Image> = [0.05, 0.2, 0.1]
        .iter()
        .map(|&d| Image::from_fn(8, 8, |y, x| hr.get(y, x, 0) + if (y + x) % 2 == 0 { d } else { -d / 2.0 }))
        .collect();
    let ids: Vec<String> = (0..3).map(|i| format!("c{i}")).collect();
    let mut external = ExternalScores::default();
    for (id, v) in ids.iter().zip([0.3, 0.9, 0.6]) {
        external.insert(id, "q", v, Orientation::HigherIsBetter).unwrap();
    }
    let region = partition_regions(fixtures.last().unwrap(), tau, grid).unwrap();
    let registry = MetricRegistry {
        fr: vec![FrMetric::Psnr],
        nr: vec![NrMetric::External("q".into())],
        external,
        ..MetricRegistry::default()
    };
    let got = reward_candidates(&cands, &ids, &hr, &region, &registry).unwrap().reward;
    let psnr: Vec<f64> = cands
        .iter()
        .map(|c| {
            let mse = c.pixels().iter().zip(hr.pixels()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 64.0;
            10.0 * (1.0 / mse).log10()
        })
        .collect();
    let norm = |v: &[f64]| {
        let (lo, hi) = v.iter().fold((f64::MAX, f64::MIN), |(l, h), &x| (l.min(x), h.max(x)));
        v.iter().map(|x| (x - lo) / (hi - lo)).collect::<Vec<_>>()
    };
    let (fr, nr) = (norm(&psnr), norm(&[0.3, 0.9, 0.6]));
    let want: Vec<f64> = (0..3).map(|i| region.rho_s * fr[i] + region.rho_d * nr[i]).collect();
    let reward_err = got.iter().zip(&want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);

    let pass = sums_exact && constant && fine && reward_err <= 1e-12;
    outcome(
        pass,
        format!(
            "ρ_s + ρ_d = 1 exactly on {} fixtures: {sums_exact}, constant ρ_s = 1: {constant}, checkerboard ρ_d = 1 at τ = 0.5: {fine}, \
             3-candidate reward error {reward_err:.1e} (ρ_s = {:.3})",
            fixtures.len(),
            region.rho_s
        ),
    )
}

const TOY_CONFIG: &str = include_str!("../../../configs/toy.conf");

fn e2e_config(root: &Path) -> RunConfig {
    let ov = vec![
        ("data_dir".to_string(), root.join("data").display().to_string()),
        ("output_dir".to_string(), root.join("runs").display().to_string()),
    ];
    parse_config(TOY_CONFIG, &ov).unwrap()
}

struct EndToEnd {
    c6: Outcome,
    c8: Outcome,
}

fn criteria_6_and_8(root: &Path) -> EndToEnd {
    let cfg = e2e_config(root);
    assert_eq!((cfg.hr_size, cfg.degradation.factor, cfg.gdpo.group_size), (64, 4, 6));
    synthesize_dataset(&cfg).unwrap();
    let pre = run_pretrain(&cfg).unwrap();
    let gain = pre.holdout_psnr - pre.bicubic_psnr;
    let part_a = gain >= 0.5;

    let mut g = cfg.clone();
    g.checkpoint = Some(pre.checkpoint.clone());
    let ablation = run_group_size_ablation(&g, &[2, 6]).unwrap();
    let row = |size: usize| ablation.rows.iter().find(|r| r.group_size == size).unwrap();
    let (g2, g6) = (row(2), row(6));

    let holdout = load_split(&cfg.data_dir, Split::Holdout).unwrap();
    let policy = load_checkpoint(&g6.checkpoint).unwrap().model().unwrap();
    let cmp = compare_rewards(&cfg, &pre.model, &policy, &holdout).unwrap();
    let part_b = cfg.gdpo.iterations >= 200 && cfg.gdpo.omega == 5000.0 && cmp.policy_reward > cmp.base_reward;

    let c6 = outcome(
        part_a && part_b,
        format!(
            "(a) held-out PSNR {:.3} dB vs bicubic {:.3} dB, gain {gain:.3} dB (need ≥ 0.5): {}; \
             (b) G=6 after {} iterations reward {:.4} vs base {:.4}, PSNR {:.3} vs {:.3} dB: {}",
            pre.holdout_psnr,
            pre.bicubic_psnr,
            if part_a { "ok" } else { "short" },
            cfg.gdpo.iterations,
            cmp.policy_reward,
            cmp.base_reward,
            cmp.policy_psnr,
            cmp.base_psnr,
            if part_b { "ok" } else { "not above base" },
        ),
    );
    let beats_base = g6.reward > ablation.base_reward;
    let c8 = outcome(
        g6.reward >= g2.reward && beats_base,
        format!(
            "jointly scored reward base {:.4}, G=2 {:.4}, G=6 {:.4}; G=6 ≥ G=2: {}, G=6 beats base: {beats_base}",
            ablation.base_reward,
            g2.reward,
            g6.reward,
            g6.reward >= g2.reward
        ),
    );
    EndToEnd { c6, c8 }
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Every mode on a small corpus, written under `root`.
fn run_all_modes(root: &Path) {
    let base: Vec<(String, String)> = [
        ("data_dir", root.join("data").display().to_string()),
        ("hr_size", "32".into()),
        ("train_count", "6".into()),
        ("holdout_count", "2".into()),
        ("pretrain_iterations", "12".into()),
        ("pretrain_batch", "2".into()),
        ("gdpo_iterations", "3".into()),
        ("gdpo_batch", "2".into()),
        ("log_interval", "4".into()),
        ("eval_draws", "2".into()),
        ("diversity_draws", "4".into()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let cfg = |mode: &str, extra: &[(&str, String)]| {
        let mut ov = base.clone();
        ov.push(("mode".into(), mode.into()));
        ov.push(("output_dir".into(), root.join(mode).display().to_string()));
        ov.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        parse_config("", &ov).unwrap()
    };
    synthesize_dataset(&cfg("synthesize", &[])).unwrap();
    let pre = run_pretrain(&cfg("pretrain", &[])).unwrap().checkpoint.display().to_string();
    let post = run_gdpo(&cfg("gdpo", &[("checkpoint", pre.clone())])).unwrap().checkpoint.display().to_string();
    run_eval(&cfg("eval", &[("checkpoint", post), ("baseline_checkpoint", pre.clone())])).unwrap();
    run_score_group(&cfg("score-group", &[("checkpoint", pre.clone())])).unwrap();
    let first = &load_split(&root.join("data"), Split::Holdout).unwrap()[0].id;
    let image = root.join("data/holdout/hr").join(format!("{first}.pgm")).display().to_string();
    run_regions(&cfg("regions", &[("image", image)])).unwrap();
    run_diversity(&cfg("diversity", &[("checkpoint", pre)])).unwrap();
}

fn criterion_7(root: &Path) -> Outcome {
    // same paths both times: the config digest in each checkpoint covers them
    run_all_modes(root);
    let first = tree_bytes(root);
    fs::remove_dir_all(root).unwrap();
    run_all_modes(root);
    let second = tree_bytes(root);
    let names = |t: &[(String, Vec<u8>)]| t.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    let differing: Vec<&str> =
        first.iter().zip(&second).filter(|(x, y)| x != y).map(|((n, _), _)| n.as_str()).collect();
    let ckpts = first.iter().filter(|(n, _)| n.ends_with(".ckpt")).count();
    let csvs = first.iter().filter(|(n, _)| n.ends_with(".csv")).count();
    let pass = names(&first) == names(&second) && differing.is_empty() && ckpts >= 2 && csvs >= 8;
    outcome(
        pass,
        format!(
            "{} files ({ckpts} checkpoints, {csvs} CSVs) across seven modes, differing between reruns: {differing:?}",
            first.len()
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filtered runs expect a quick answer
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let scratch = tempfile::tempdir().unwrap();
    let mut failed = Vec::new();
    let mut run = |n: usize, title: &str, soft: bool, started: Instant, o: Outcome| {
        report(n, title, soft, started, &o);
        if !o.pass && !soft {
            failed.push(n);
        }
    };

    let t = Instant::now();
    run(1, "gradient correctness", false, t, criterion_1());
    let t = Instant::now();
    run(2, "GDPO reduces to DPO at G=2", false, t, criterion_2());
    let t = Instant::now();
    run(3, "advantage invariants", false, t, criterion_3());
    let t = Instant::now();
    run(4, "diversity law", false, t, criterion_4());
    let t = Instant::now();
    run(5, "region pipeline", false, t, criterion_5());
    let t = Instant::now();
    let e2e = criteria_6_and_8(&scratch.path().join("e2e"));
    run(6, "end-to-end directional check", false, t, e2e.c6);
    let t = Instant::now();
    run(7, "determinism", false, t, criterion_7(&scratch.path().join("determinism")));
    run(8, "group-size trend", true, Instant::now(), e2e.c8);

    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
