use std::fs;
use std::path::Path;

use gdpo_core::diffusion::{residual_coefficients, DenoiserModel, NAOSDConfig};
use gdpo_core::gdpo::{ExternalScores, GdpoError, NrMetric};
use gdpo_core::harness::*;
use gdpo_core::imagecore::{load_image, partition_regions, Orientation, RegionLabel};
use gdpo_core::numcore::{label_seed, seeded_rng};

fn tiny(dir: &Path, extra: &[(&str, &str)]) -> RunConfig {
    let data = dir.join("data");
    let out = dir.join("out");
    let mut ov: Vec<(String, String)> = [
        ("data_dir", data.to_str().unwrap()),
        ("output_dir", out.to_str().unwrap()),
        ("hr_size", "16"),
        ("train_count", "4"),
        ("holdout_count", "2"),
        ("hidden", "4"),
        ("kernel", "3"),
        ("embed_dim", "4"),
        ("pretrain_crop", "16"),
        ("gdpo_crop", "16"),
        ("pretrain_iterations", "3"),
        ("pretrain_batch", "2"),
        ("gdpo_iterations", "2"),
        ("gdpo_batch", "2"),
        ("group_size", "3"),
        ("grid_rows", "4"),
        ("grid_cols", "4"),
        ("log_interval", "1"),
        ("eval_draws", "2"),
        ("diversity_draws", "4"),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    ov.extend(extra.iter().map(|(k, v)| (k.to_string(), v.to_string())));
    parse_config("", &ov).unwrap()
}

fn with_data(dir: &Path, extra: &[(&str, &str)]) -> RunConfig {
    let cfg = tiny(dir, extra);
    synthesize_dataset(&cfg).unwrap();
    cfg
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

// ---------------------------------------------------------------- config

#[test]
fn empty_config_gives_documented_defaults() {
    let cfg = parse_config("", &[]).unwrap();
    assert_eq!(cfg.gdpo.omega, 5000.0);
    assert_eq!(cfg.gdpo.group_size, 6);
    assert_eq!(cfg.gdpo.learning_rate, 5e-5);
    assert_eq!((cfg.naosd.t_add, cfg.naosd.t_diff), (250, 100));
    assert_eq!(cfg.pretrain.iterations, 2000);
    assert_eq!(cfg.diversity_draws, 50);
}

#[test]
fn group_size_zero_is_rejected_by_key() {
    let err = parse_config("group_size = 0\n", &[]).unwrap_err();
    assert!(matches!(&err, HarnessError::Config { key, .. } if key == "group_size"), "{err}");
}

#[test]
fn unknown_key_and_type_errors_name_key_and_line() {
    let err = parse_config("# header\nomega = 10\nbogus = 3\n", &[]).unwrap_err();
    match err {
        HarnessError::Config { line, key, .. } => assert_eq!((line, key.as_str()), (Some(3), "bogus")),
        other => panic!("{other}"),
    }
    let err = parse_config("\n\nt_add = soon\n", &[]).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("t_add") && msg.contains("line 3"), "{msg}");
    assert!(parse_config("no equals sign\n", &[]).is_err());
}

#[test]
fn flags_override_file_values() {
    let cfg = parse_config("omega = 5000 # file\n", &[("omega".into(), "100".into())]).unwrap();
    assert_eq!(cfg.gdpo.omega, 100.0);
    let cfg = parse_config("", &[("shared-noise".into(), "true".into())]).unwrap();
    assert!(cfg.gdpo.shared_noise);
}

#[test]
fn canonical_dump_parses_back_to_the_same_config() {
    let cfg = parse_config(
        "hidden = 8, 8\nnr_metrics = sharpness, ext:maniqa\nreward_mode = no-aw\ndiversity_pairs = 100:100, 300:50\nquantization_levels = 0\n",
        &[],
    )
    .unwrap();
    assert_eq!(cfg.nr_metrics, vec![NrMetric::Sharpness, NrMetric::External("maniqa".into())]);
    assert_eq!(cfg.degradation.quantization_levels, None);
    let again = parse_config(&cfg.canonical(), &[]).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn invariant_violations_are_reported() {
    for text in ["t_add = 50\nt_diff = 100\n", "hr_size = 30\n", "pretrain_crop = 128\n", "t_lo = 0\n", "kernel = 4\n"]
    {
        assert!(parse_config(text, &[]).is_err(), "{text}");
    }
}

#[test]
fn output_root_env_prefixes_relative_dirs_only() {
    let mut cfg = parse_config("output_dir = run1\n", &[]).unwrap();
    std::env::set_var(OUTPUT_ROOT_ENV, "/tmp/gdpo-root");
    assert_eq!(cfg.resolved_output_dir(), Path::new("/tmp/gdpo-root/run1"));
    cfg.output_dir = "/abs/run".into();
    assert_eq!(cfg.resolved_output_dir(), Path::new("/abs/run"));
    std::env::remove_var(OUTPUT_ROOT_ENV);
}

#[test]
fn missing_checkpoint_path_is_rejected_for_gdpo() {
    let cfg = parse_config("mode = gdpo\ncheckpoint = /nonexistent/base.ckpt\n", &[]).unwrap();
    let err = cfg.check_paths().unwrap_err();
    assert!(err.to_string().contains("checkpoint"), "{err}");
}

// ---------------------------------------------------------------- dataset

#[test]
fn corpus_has_quarter_resolution_lr_images() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(
        dir.path(),
        &[
            ("hr_size", "64"),
            ("train_count", "96"),
            ("holdout_count", "4"),
            ("pretrain_crop", "32"),
            ("gdpo_crop", "32"),
        ],
    );
    assert_eq!(synthesize_dataset(&cfg).unwrap(), (96, 4));
    let train = load_split(&cfg.data_dir, Split::Train).unwrap();
    let holdout = load_split(&cfg.data_dir, Split::Holdout).unwrap();
    assert_eq!(train.len() + holdout.len(), 100);
    for p in train.iter().chain(&holdout) {
        assert_eq!((p.hr.height(), p.hr.width()), (64, 64));
        assert_eq!((p.lr.height(), p.lr.width()), (16, 16));
    }
}

#[test]
fn same_seed_gives_byte_identical_corpus() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synthesize_dataset(&tiny(a.path(), &[])).unwrap();
    synthesize_dataset(&tiny(b.path(), &[])).unwrap();
    assert_eq!(tree_bytes(&a.path().join("data")), tree_bytes(&b.path().join("data")));
    let c = tempfile::tempdir().unwrap();
    synthesize_dataset(&tiny(c.path(), &[("seed", "1")])).unwrap();
    assert_ne!(tree_bytes(&a.path().join("data")), tree_bytes(&c.path().join("data")));
}

#[test]
fn procedural_corpus_contains_smooth_and_detailed_patches() {
    let (mut smooth, mut detailed) = (0, 0);
    for i in 0..20 {
        let img = procedural_hr(64, i);
        let saved = gdpo_core::imagecore::decode_pnm(&gdpo_core::imagecore::encode_pnm(&img)).unwrap();
        assert_eq!(saved, img, "generator output must sit on 8-bit levels");
        let map = partition_regions(&img, 2.5, Default::default()).unwrap();
        smooth += map.labels.iter().filter(|l| **l == RegionLabel::Smooth).count();
        detailed += map.labels.iter().filter(|l| **l == RegionLabel::Detailed).count();
    }
    assert!(smooth > 0 && detailed > 0, "smooth {smooth}, detailed {detailed}");
}

#[test]
fn source_dir_images_are_split_and_degraded() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    fs::create_dir_all(&src).unwrap();
    for i in 0..3 {
        gdpo_core::imagecore::save_image(&procedural_hr(18, i), src.join(format!("img{i}.pgm"))).unwrap();
    }
    let cfg = tiny(dir.path(), &[("source_dir", src.to_str().unwrap()), ("holdout_count", "1")]);
    assert_eq!(synthesize_dataset(&cfg).unwrap(), (2, 1));
    let h = load_split(&cfg.data_dir, Split::Holdout).unwrap();
    assert_eq!((h[0].hr.height(), h[0].lr.height()), (16, 4));
}

// ---------------------------------------------------------------- checkpoints

fn sample_checkpoint() -> Checkpoint {
    let cfg = parse_config("hidden = 3\nembed_dim = 4\n", &[]).unwrap();
    let model = DenoiserModel::init(cfg.arch.clone(), &mut seeded_rng(3)).unwrap();
    let mut opt = gdpo_core::numcore::AdamW::new(Default::default(), model.params());
    opt.step = 7;
    opt.first_moment[0].data_mut()[0] = 0.25;
    Checkpoint::new(&model, Some(&opt), 11, &cfg.schedule().unwrap(), config_digest(&cfg.canonical()))
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = sample_checkpoint();
    let p = dir.path().join("a.ckpt");
    save_checkpoint(&ckpt, &p).unwrap();
    let back = load_checkpoint(&p).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_bytes(), fs::read(&p).unwrap());
    assert_eq!(&fs::read(&p).unwrap()[..4], CHECKPOINT_MAGIC);
}

#[test]
fn checkpoint_version_and_architecture_mismatch_fail() {
    let ckpt = sample_checkpoint();
    let mut bytes = ckpt.to_bytes();
    bytes[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    let err = Checkpoint::from_bytes(&bytes).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.ckpt");
    save_checkpoint(&ckpt, &p).unwrap();
    let mut other = ckpt.arch.clone();
    other.hidden = vec![5];
    let err = load_checkpoint_for(&p, &other).unwrap_err();
    assert!(err.to_string().contains("architecture"), "{err}");

    let good = ckpt.to_bytes();
    assert!(Checkpoint::from_bytes(&good[..good.len() - 3]).is_err());
    assert!(Checkpoint::from_bytes(b"NOPE\x01\0\0\0").is_err());
}

// ---------------------------------------------------------------- external scores and CSV

#[test]
fn external_scores_round_trip_and_feed_the_registry() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("scores.csv");
    let mut text = String::from("image_id,metric_id,value,orientation\n");
    for i in 0..6 {
        text.push_str(&format!("cand{i},maniqa,{},higher\n", 0.1 * i as f64 + 0.05));
    }
    fs::write(&p, text).unwrap();
    let scores = load_external_scores(&p).unwrap();
    assert_eq!(scores.len(), 6);
    for i in 0..6 {
        assert_eq!(
            scores.get(&format!("cand{i}"), "maniqa").unwrap(),
            (0.1 * i as f64 + 0.05, Orientation::HigherIsBetter)
        );
    }
    let q = dir.path().join("copy.csv");
    write_external_scores(&q, &scores).unwrap();
    assert_eq!(load_external_scores(&q).unwrap(), scores);

    let err = scores.get("cand9", "maniqa").unwrap_err();
    assert_eq!(err, GdpoError::MissingScore { image_id: "cand9".into(), metric_id: "maniqa".into() });
}

#[test]
fn external_scores_reject_duplicates_and_bad_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    fs::write(&p, "image_id,metric_id,value,orientation\na,m,1,higher\na,m,2,higher\n").unwrap();
    assert!(load_external_scores(&p).is_err());
    fs::write(&p, "image_id,metric_id,value,orientation\na,m,1,sideways\n").unwrap();
    let err = load_external_scores(&p).unwrap_err();
    assert!(err.to_string().contains("sideways"), "{err}");
    fs::write(&p, "id,metric,value\n").unwrap();
    assert!(load_external_scores(&p).is_err());
    assert!(ExternalScores::default().is_empty());
}

#[test]
fn metrics_tables_round_trip_and_reject_non_finite_values() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = MetricsTable::new(&["id"], &["a", "b"]);
    t.push(vec!["x".into()], vec![0.1, 1.0 / 3.0]).unwrap();
    t.push(vec!["y".into()], vec![-2.5e-17, 99.0]).unwrap();
    assert!(t.push(vec!["z".into()], vec![f64::NAN, 0.0]).is_err());
    assert!(t.push(vec!["z".into()], vec![0.0]).is_err());
    let p = dir.path().join("t.csv");
    write_rows(&p, &t).unwrap();
    assert_eq!(read_rows(&p, 1).unwrap(), t);
}

// ---------------------------------------------------------------- runs

#[test]
fn pretrain_is_deterministic_and_logs_every_interval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_data(dir.path(), &[]);
    let a = run_pretrain(&cfg).unwrap();
    let ckpt_a = fs::read(&a.checkpoint).unwrap();
    let log_a = fs::read(&a.log_path).unwrap();
    let b = run_pretrain(&cfg).unwrap();
    assert_eq!(fs::read(&b.checkpoint).unwrap(), ckpt_a);
    assert_eq!(fs::read(&b.log_path).unwrap(), log_a);
    assert_eq!(a.log.rows.len(), 3);
    assert_eq!(read_rows(&a.log_path, 1).unwrap(), a.log);
    assert_eq!(load_checkpoint(&a.checkpoint).unwrap().step, 3);
}

#[test]
fn pretrain_with_zero_lr_keeps_initial_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_data(dir.path(), &[("pretrain_lr", "0")]);
    let out = run_pretrain(&cfg).unwrap();
    let schedule = cfg.schedule().unwrap();
    let mut init = DenoiserModel::init(cfg.arch.clone(), &mut seeded_rng(label_seed(cfg.seed, "init"))).unwrap();
    init.set_passthrough_skip(cfg.naosd, &schedule).unwrap();
    assert_eq!(out.model.flat(), init.flat());
}

#[test]
fn gdpo_keeps_reference_bytes_and_zero_iterations_copy_the_base() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_data(dir.path(), &[]);
    let base = run_pretrain(&cfg).unwrap();
    let base_bytes = fs::read(&base.checkpoint).unwrap();

    let mut g = cfg.clone();
    g.checkpoint = Some(base.checkpoint.clone());
    g.output_dir = dir.path().join("gdpo");
    let out = run_gdpo(&g).unwrap();
    assert_eq!(fs::read(&base.checkpoint).unwrap(), base_bytes);
    assert_eq!(out.log.rows.len(), 2);
    let first = fs::read(&out.checkpoint).unwrap();
    assert_eq!(run_gdpo(&g).map(|o| fs::read(o.checkpoint).unwrap()).unwrap(), first);

    g.gdpo.iterations = 0;
    let zero = run_gdpo(&g).unwrap();
    assert_eq!(zero.policy.flat(), base.model.flat());
    assert_eq!(load_checkpoint(&zero.checkpoint).unwrap().params, base.model.flat());
}

#[test]
fn eval_is_reproducible_and_has_control_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_data(dir.path(), &[]);
    let base = run_pretrain(&cfg).unwrap();
    let mut e = cfg.clone();
    e.mode = Mode::Eval;
    e.checkpoint = Some(base.checkpoint.clone());
    e.baseline_checkpoint = Some(base.checkpoint.clone());
    e.output_dir = dir.path().join("eval");
    let r1 = run_eval(&e).unwrap();
    let bytes1 = tree_bytes(&e.output_dir);
    let r2 = run_eval(&e).unwrap();
    assert_eq!(tree_bytes(&e.output_dir), bytes1);
    assert_eq!(r1.summary, r2.summary);

    let pairs = load_split(&cfg.data_dir, Split::Holdout).unwrap();
    for p in &pairs {
        assert_eq!(r1.metrics.get(&[&p.id, "hr", "0"], "psnr"), Some(99.0));
        assert_eq!(r1.metrics.get(&[&p.id, "hr", "0"], "ssim"), Some(1.0));
        // same checkpoint under identical noise: identical outputs
        assert_eq!(r1.metrics.get(&[&p.id, "model", "1"], "psnr"), r1.metrics.get(&[&p.id, "baseline", "1"], "psnr"));
    }
    assert_eq!(r1.mean("model", "reward"), r1.mean("baseline", "reward"));
    assert_eq!(read_rows(&e.output_dir.join("eval_summary.csv"), 2).unwrap(), r1.summary);
    assert_eq!(read_rows(&e.output_dir.join("eval_rewards.csv"), 3).unwrap(), r1.rewards);
}

#[test]
fn oracle_diversity_follows_the_noise_gain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_data(
        dir.path(),
        &[("mode", "diversity"), ("diversity_oracle", "true"), ("diversity_pairs", "100:100,250:100,250:250,500:500")],
    );
    let r = run_diversity(&cfg).unwrap();
    let bytes = fs::read(cfg.output_dir.join("diversity.csv")).unwrap();
    run_diversity(&cfg).unwrap();
    assert_eq!(fs::read(cfg.output_dir.join("diversity.csv")).unwrap(), bytes);

    let schedule = cfg.schedule().unwrap();
    let gain = |a, d| residual_coefficients(NAOSDConfig { t_add: a, t_diff: d }, &schedule).unwrap().1;
    assert!(r.mean_range(100, 100, "psnr").unwrap() < 1e-6);
    assert!(r.mean_range(250, 250, "psnr").unwrap() < 1e-6);
    assert!(gain(250, 100) > gain(500, 500));
    assert!(r.mean_range(250, 100, "psnr").unwrap() > 0.1);
    assert_eq!(read_rows(&cfg.output_dir.join("diversity.csv"), 4).unwrap(), r.table);
}

#[test]
fn score_group_uses_external_scores_by_candidate_id() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_data(dir.path(), &[]);
    let base = run_pretrain(&cfg).unwrap();
    let pair = &load_split(&cfg.data_dir, Split::Holdout).unwrap()[0];
    let scores = dir.path().join("ext.csv");
    let mut text = String::from("image_id,metric_id,value,orientation\n");
    for i in 0..3 {
        text.push_str(&format!("{}_{i},musiq,{},higher\n", pair.id, [3.0, 1.0, 2.0][i]));
    }
    fs::write(&scores, text).unwrap();
    let mut s = cfg.clone();
    s.mode = Mode::ScoreGroup;
    s.checkpoint = Some(base.checkpoint);
    s.external_scores = Some(scores);
    s.nr_metrics = vec![NrMetric::External("musiq".into())];
    s.output_dir = dir.path().join("score");
    let table = run_score_group(&s).unwrap();
    assert_eq!(table.column("ext:musiq").unwrap(), vec![3.0, 1.0, 2.0]);
    let adv = table.column("advantage").unwrap();
    assert!(adv.iter().sum::<f64>().abs() < 1e-9);
    assert!(load_image(s.output_dir.join("candidates").join(format!("{}_0.pgm", pair.id))).is_ok());
}

#[test]
fn score_group_reports_missing_external_ids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_data(dir.path(), &[]);
    let base = run_pretrain(&cfg).unwrap();
    let scores = dir.path().join("ext.csv");
    fs::write(&scores, "image_id,metric_id,value,orientation\nsomething_else,musiq,1,higher\n").unwrap();
    let mut s = cfg.clone();
    s.mode = Mode::ScoreGroup;
    s.checkpoint = Some(base.checkpoint);
    s.external_scores = Some(scores);
    s.nr_metrics = vec![NrMetric::External("musiq".into())];
    s.output_dir = dir.path().join("score");
    let err = run_score_group(&s).unwrap_err();
    assert!(err.to_string().contains("_0"), "{err}");
}

#[test]
fn regions_mode_writes_patch_labels() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("flat.pgm");
    gdpo_core::imagecore::save_image(&gdpo_core::imagecore::Image::filled(16, 16, 1, 0.5), &img).unwrap();
    let cfg = tiny(dir.path(), &[("mode", "regions"), ("image", img.to_str().unwrap())]);
    let map = run_regions(&cfg).unwrap();
    assert_eq!((map.rho_s, map.rho_d), (1.0, 0.0));
    let patches = read_rows(&cfg.output_dir.join("regions.csv"), 3).unwrap();
    assert_eq!(patches.rows.len(), 16);
    assert!(patches.rows.iter().all(|(k, _)| k[2] == "smooth"));
}

#[test]
fn ablation_scores_every_group_size_jointly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_data(dir.path(), &[]);
    let base = run_pretrain(&cfg).unwrap();
    let mut a = cfg.clone();
    a.checkpoint = Some(base.checkpoint);
    a.output_dir = dir.path().join("ablation");
    let r = run_group_size_ablation(&a, &[2, 3]).unwrap();
    assert_eq!(r.rows.iter().map(|x| x.group_size).collect::<Vec<_>>(), vec![2, 3]);
    assert!(r.rows.iter().all(|x| x.checkpoint.exists()));
    assert!(r.rows.iter().all(|x| (0.0..=1.0).contains(&x.reward)));
    assert!((0.0..=1.0).contains(&r.base_reward));
}
