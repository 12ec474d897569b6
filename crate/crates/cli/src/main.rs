use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use harmony_core::datasynth::{synthesize_toy_pairs, write_dataset, SceneConfig, ToyDatasetConfig};
use harmony_core::evaluation::{bt_scores, evaluate_dataset, harmonize, parse_pairwise_csv};
use harmony_core::image::{composite, load_image, load_mask, save_image, Mask};
use harmony_core::network::{gradient_check, ArchConfig, Network};
use harmony_core::postprocess::{joint_bilateral_upsample, BilateralParams};
use harmony_core::training::{
    format_loss_log, train_from_manifests, Checkpoint, LossWeights, TrainConfig, DEFAULT_LEARNING_RATE,
};

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_GRADIENT: u8 = 3;

/// Deep image harmonization toolkit.
#[derive(Debug, Parser)]
#[command(name = "harmony", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate labeled toy composites with their ground truth and a manifest.
    Synth(SynthArgs),
    /// Two-stage training from manifests; writes a checkpoint and a loss log.
    Train(TrainArgs),
    /// Harmonize one composite with a trained checkpoint.
    Harmonize(HarmonizeArgs),
    /// Score a checkpoint on a manifest and write the report CSV.
    Eval(EvalArgs),
    /// Fit Bradley-Terry scores to `winner_id,loser_id` judgments.
    Rank(RankArgs),
    /// Compare analytic and finite-difference gradients on a tiny network.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Scenes in the reference retrieval pool.
    #[arg(long, default_value_t = 32)]
    pool: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Stage-1 manifest; records need label maps unless `--lambda2 0`.
    #[arg(long)]
    manifest: PathBuf,
    /// Stage-2 manifest; defaults to the stage-1 one.
    #[arg(long)]
    manifest_stage2: Option<PathBuf>,
    /// Output directory for `model.dih` and `loss.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().iters_stage1)]
    iters_stage1: u32,
    #[arg(long, default_value_t = TrainConfig::default().iters_stage2)]
    iters_stage2: u32,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda1: f64,
    #[arg(long, default_value_t = 100.0)]
    lambda2: f64,
    /// Sever the parsing-to-harmonization links (ablation).
    #[arg(long)]
    no_semantics: bool,
}

#[derive(Debug, Args)]
struct HarmonizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    composite: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Full-resolution composite used as the guide for joint bilateral upsampling.
    #[arg(long, value_name = "GUIDE")]
    upsample: Option<PathBuf>,
    /// Keep the composite's own pixels outside the mask.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    composite_bg: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    composite_bg: bool,
}

#[derive(Debug, Args)]
struct RankArgs {
    /// CSV of `winner_id,loser_id` rows.
    pairs: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iters: usize,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Exit with a failure code when the error exceeds this.
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
}

type CliResult = Result<ExitCode, String>;

fn fail<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> String {
    move |e| format!("{context}: {e}")
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), String> {
    fs::write(path, contents).map_err(fail(path.display()))
}

fn synth(a: SynthArgs) -> CliResult {
    let config = ToyDatasetConfig {
        scene: SceneConfig::square(a.size, a.classes),
        pool_size: a.pool,
        ..ToyDatasetConfig::default()
    };
    let pairs = synthesize_toy_pairs(a.seed, a.count, &config).map_err(fail("synthesis failed"))?;
    let manifest = write_dataset(&a.out, &pairs).map_err(fail("writing dataset"))?;
    println!("{}", manifest.display());
    Ok(ExitCode::SUCCESS)
}

fn train(a: TrainArgs) -> CliResult {
    let config = TrainConfig {
        lambda1: a.lambda1,
        lambda2: a.lambda2,
        learning_rate: a.lr,
        iters_stage1: a.iters_stage1,
        iters_stage2: a.iters_stage2,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let arch = ArchConfig {
        input_size: a.size,
        num_classes: a.classes,
        cross_decoder_links: !a.no_semantics,
        ..ArchConfig::default()
    };
    let stage2 = a.manifest_stage2.as_deref().unwrap_or(&a.manifest);
    let mut records = Vec::new();
    let ck = train_from_manifests(&a.manifest, stage2, &config, arch, &mut |r| records.push(r))
        .map_err(fail("training failed"))?;
    fs::create_dir_all(&a.out).map_err(fail(a.out.display()))?;
    let model = a.out.join("model.dih");
    ck.save(&model).map_err(fail("saving checkpoint"))?;
    write_file(&a.out.join("loss.csv"), format_loss_log(&records))?;
    if let Some(last) = records.last() {
        println!("{} iterations, final loss {:.6}", last.iteration, last.combined);
    }
    println!("{}", model.display());
    Ok(ExitCode::SUCCESS)
}

fn harmonize_cmd(a: HarmonizeArgs) -> CliResult {
    let ck = Checkpoint::load(&a.checkpoint).map_err(fail("loading checkpoint"))?;
    let image = load_image(&a.composite).map_err(fail("loading composite"))?;
    let mask = load_mask(&a.mask).map_err(fail("loading mask"))?;
    let (out, _) = harmonize(&ck.network, &image, &mask, a.composite_bg).map_err(fail("harmonization failed"))?;
    let out = match &a.upsample {
        None => out,
        Some(guide_path) => {
            let guide = load_image(guide_path).map_err(fail("loading guide"))?;
            let up = joint_bilateral_upsample(&out, &guide, &BilateralParams::default())
                .map_err(fail("upsampling failed"))?;
            if a.composite_bg {
                let (sy, sx) = (guide.height() / mask.height(), guide.width() / mask.width());
                let big = Mask::from_fn(guide.height(), guide.width(), |y, x| mask.get(y / sy, x / sx))
                    .map_err(fail("mask"))?;
                composite(&up, &guide, &big).map_err(fail("pasting background"))?
            } else {
                up
            }
        }
    };
    save_image(&out, &a.out).map_err(fail("saving output"))?;
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> CliResult {
    let ck = Checkpoint::load(&a.checkpoint).map_err(fail("loading checkpoint"))?;
    let report = evaluate_dataset(&ck.network, &a.manifest, a.composite_bg).map_err(fail("evaluation failed"))?;
    for (image, err) in &report.failures {
        eprintln!("skipped {image}: {err}");
    }
    let csv = report.to_csv();
    match &a.out {
        Some(path) => write_file(path, csv)?,
        None => print!("{csv}"),
    }
    if report.rows.is_empty() {
        return Err("no record could be evaluated".into());
    }
    Ok(ExitCode::SUCCESS)
}

fn rank(a: RankArgs) -> CliResult {
    let text = fs::read_to_string(&a.pairs).map_err(fail(a.pairs.display()))?;
    let counts = parse_pairwise_csv(&text).map_err(fail(a.pairs.display()))?;
    let fit = bt_scores(&counts, a.tolerance, a.max_iters).map_err(fail("ranking failed"))?;
    if !fit.converged {
        eprintln!("warning: not converged after {} iterations", fit.iterations);
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&i, &j| fit.scores[j].total_cmp(&fit.scores[i]).then(i.cmp(&j)));
    for i in order {
        println!("{},{:.3}", counts.ids()[i], fit.scores[i]);
    }
    Ok(ExitCode::SUCCESS)
}

fn grad_check(a: GradCheckArgs) -> CliResult {
    let config = ToyDatasetConfig { scene: SceneConfig::square(8, 4), pool_size: 8, ..ToyDatasetConfig::default() };
    let pair = synthesize_toy_pairs(a.seed, 1, &config).map_err(fail("synthesis failed"))?.remove(0);
    let net = Network::<f64>::build(ArchConfig::tiny(4), a.seed).map_err(fail("building network"))?;
    let report = gradient_check(&net, &pair, LossWeights::default(), a.eps, a.samples, a.seed)
        .map_err(fail("gradient check failed"))?;
    println!("max relative error {:.3e} over {} parameters", report.max_relative_error, report.samples);
    if let Some((name, index, analytic, numeric)) = &report.worst {
        println!("worst: {name}[{index}] analytic {analytic:.6e} numeric {numeric:.6e}");
    }
    if report.max_relative_error > a.threshold {
        eprintln!("error exceeds threshold {:e}", a.threshold);
        return Ok(ExitCode::from(EXIT_GRADIENT));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Harmonize(a) => harmonize_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Rank(a) => rank(a),
        Command::GradCheck(a) => grad_check(a),
    };
    result.unwrap_or_else(|msg| {
        eprintln!("error: {msg}");
        ExitCode::from(EXIT_RUNTIME)
    })
}
