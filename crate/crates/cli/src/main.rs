use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gdpo_core::harness::{self, Mode, RunConfig};

#[derive(Parser)]
#[command(name = "gdpo-sr", version, about = "One-step diffusion super-resolution with group preference fine-tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides as `--key value` pairs, applied after the config file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the paired LR/HR corpus.
    Synthesize(Common),
    /// Train a base denoiser from scratch.
    Pretrain(Common),
    /// Fine-tune `checkpoint` with GDPO.
    Gdpo(Common),
    /// Per-image and mean quality of `checkpoint` (and `baseline_checkpoint`).
    Eval(Common),
    /// Sample and score one group of candidates.
    ScoreGroup(Common),
    /// Smooth/detailed partition of `image`.
    Regions(Common),
    /// Output fluctuation ranges across noise draws.
    Diversity(Common),
    /// GDPO once per group size, scored jointly against the base.
    Ablation {
        #[arg(long, value_delimiter = ',', default_value = "2,4,6")]
        sizes: Vec<usize>,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(flag) = it.next() {
        let Some(key) = flag.strip_prefix("--") else { bail!("expected --key, got {flag:?}") };
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else {
            let value = it.next().with_context(|| format!("missing value for --{key}"))?;
            out.push((key.to_string(), value.clone()));
        }
    }
    Ok(out)
}

fn load(common: &Common, mode: Mode) -> Result<RunConfig> {
    let mut overrides = vec![("mode".to_string(), mode.name().to_string())];
    overrides.extend(parse_overrides(&common.overrides)?);
    let cfg = harness::load_config(common.config.as_deref(), &overrides)?;
    cfg.check_paths()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Synthesize(c) => {
            let cfg = load(&c, Mode::Synthesize)?;
            let (train, holdout) = harness::synthesize_dataset(&cfg)?;
            println!("wrote {train} training and {holdout} held-out pairs to {}", cfg.data_dir.display());
        }
        Command::Pretrain(c) => {
            let cfg = load(&c, Mode::Pretrain)?;
            let out = harness::run_pretrain(&cfg)?;
            println!(
                "held-out PSNR {:.3} dB (bicubic {:.3} dB); checkpoint {}",
                out.holdout_psnr,
                out.bicubic_psnr,
                out.checkpoint.display()
            );
        }
        Command::Gdpo(c) => {
            let cfg = load(&c, Mode::Gdpo)?;
            let out = harness::run_gdpo(&cfg)?;
            println!("checkpoint {}; log {}", out.checkpoint.display(), out.log_path.display());
        }
        Command::Eval(c) => {
            let cfg = load(&c, Mode::Eval)?;
            let report = harness::run_eval(&cfg)?;
            for (keys, values) in &report.summary.rows {
                println!("{:<10} {:<10} {:.6}", keys[0], keys[1], values[0]);
            }
        }
        Command::ScoreGroup(c) => {
            let cfg = load(&c, Mode::ScoreGroup)?;
            let table = harness::run_score_group(&cfg)?;
            let reward = table.column("reward").unwrap_or_default();
            for ((keys, _), r) in table.rows.iter().zip(reward) {
                println!("{:<16} reward {r:.6}", keys[0]);
            }
        }
        Command::Regions(c) => {
            let cfg = load(&c, Mode::Regions)?;
            let map = harness::run_regions(&cfg)?;
            println!("rho_s {:.6} rho_d {:.6}", map.rho_s, map.rho_d);
        }
        Command::Diversity(c) => {
            let cfg = load(&c, Mode::Diversity)?;
            let report = harness::run_diversity(&cfg)?;
            for &(a, d) in &cfg.diversity_pairs {
                let psnr = report.mean_range(a, d, "psnr").unwrap_or(f64::NAN);
                println!("({a},{d}) mean PSNR range {psnr:.6} dB");
            }
        }
        Command::Ablation { sizes, common } => {
            let cfg = load(&common, Mode::Gdpo)?;
            let report = harness::run_group_size_ablation(&cfg, &sizes)?;
            println!("base   reward {:.6} PSNR {:.3}", report.base_reward, report.base_psnr);
            for row in &report.rows {
                println!("G={:<4} reward {:.6} PSNR {:.3}", row.group_size, row.reward, row.psnr);
            }
        }
    }
    Ok(())
}
