//! Command-line entry point for the decoder workflows.
//!
//! Exit status: 0 on success, 1 when a verification command finds a failing
//! check, 2 on usage or configuration errors. All randomness is controlled
//! by `--seed`; repeated runs with the same flags print identical bytes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use csap_cli::config::RunConfig;
use csap_core::cost::{
    compare_variants, count_attention_matmul_flops, count_params, render_comparison,
    render_flop_report, render_params, with_separators,
};
use csap_core::data::{make_synthetic_dataset, stack_images};
use csap_core::decoder::{
    load_checkpoint, predict, save_checkpoint, stage_dims, DecoderConfig, DecoderModel,
    StubEncoder, Variant,
};
use csap_core::error::Error;
use csap_core::gradcheck::check_decoder;
use csap_core::similarity::attention_similarity;
use csap_core::train::{train_toy, TrainOptions};
use csap_core::Tensor;

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "csap",
    about = "Cross-stage attention propagation decoder: cost reports, checks, and toy training",
    version
)]
struct Cli {
    /// Line-oriented `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Decoder variant: csap or standard.
    #[arg(long, global = true)]
    variant: Option<String>,

    /// Stage that computes full attention (2, 3 or 4).
    #[arg(long, global = true)]
    source_stage: Option<usize>,

    /// Square input resolution; must be divisible by 32.
    #[arg(long, global = true)]
    input_size: Option<usize>,

    #[arg(long, global = true)]
    steps: Option<usize>,

    #[arg(long, global = true)]
    lr: Option<f64>,

    /// Report format: text or kv.
    #[arg(long, global = true)]
    format: Option<String>,

    /// Checkpoint directory (written by train-toy, read by predict).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,

    /// Output file (metric trace for train-toy, label map for predict).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form FLOP report for the configured variant.
    Flops,
    /// Analytic per-module parameter counts, plus the variant comparison.
    Params,
    /// Finite-difference check of every decoder parameter (f64, tiny config).
    Gradcheck {
        /// Base finite-difference step.
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
    },
    /// Train on synthetic shapes and report the metric trace.
    TrainToy,
    /// Train both variants and compare propagated vs per-stage attention.
    AttnSim,
    /// Run one synthetic sample through the decoder and report per-class counts.
    Predict,
}

fn merge_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::parse_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(variant) = &cli.variant {
        cfg.decoder.variant = variant.parse::<Variant>()?;
    }
    if let Some(stage) = cli.source_stage {
        cfg.decoder.source_stage = stage;
    }
    if let Some(size) = cli.input_size {
        cfg.input_size = size;
    }
    if let Some(steps) = cli.steps {
        cfg.steps = steps;
    }
    if let Some(lr) = cli.lr {
        cfg.lr = lr;
    }
    if let Some(format) = &cli.format {
        cfg.format = format.parse()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match merge_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Flops => cmd_flops(&cfg),
        Command::Params => cmd_params(&cfg),
        Command::Gradcheck { eps } => cmd_gradcheck(&cfg, *eps),
        Command::TrainToy => cmd_train_toy(&cfg, &cli),
        Command::AttnSim => cmd_attn_sim(&cfg),
        Command::Predict => cmd_predict(&cfg, &cli),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Training { .. } | Error::Numeric(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn cmd_flops(cfg: &RunConfig) -> Result<u8, Error> {
    let report =
        count_attention_matmul_flops(&cfg.decoder, cfg.input_size, cfg.input_size, 1)?;
    print!("{}", render_flop_report(&report, cfg.format));
    Ok(0)
}

fn cmd_params(cfg: &RunConfig) -> Result<u8, Error> {
    let table = count_params(&cfg.decoder, cfg.input_size, cfg.input_size)?;
    print!("{}", render_params(&table, cfg.format));
    let comparison = compare_variants(&cfg.decoder, cfg.input_size, cfg.input_size)?;
    print!("{}", render_comparison(&comparison, cfg.format));
    Ok(0)
}

fn cmd_gradcheck(cfg: &RunConfig, eps: f64) -> Result<u8, Error> {
    let check_cfg = DecoderConfig {
        variant: cfg.decoder.variant,
        source_stage: cfg.decoder.source_stage,
        ..DecoderConfig::tiny()
    };
    let report = check_decoder(&check_cfg, 64, cfg.seed, eps)?;
    println!(
        "gradcheck: {} decoder, source stage {}, seed {}, eps {:e}",
        check_cfg.variant, check_cfg.source_stage, cfg.seed, eps
    );
    for entry in &report.entries {
        println!("  {:<28} {:.3e}", entry.name, entry.max_rel_error);
    }
    let worst = report.max_rel_error();
    let pass = report.all_below(GRADCHECK_TOLERANCE);
    println!(
        "max relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:e}): {}",
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { 0 } else { 1 })
}

fn train_options(cfg: &RunConfig) -> TrainOptions {
    TrainOptions {
        steps: cfg.steps,
        lr: cfg.lr,
        seed: cfg.seed,
        batch_size: cfg.batch_size,
        eval_every: cfg.eval_every,
        momentum: 0.9,
        holdout: cfg.holdout,
    }
}

fn cmd_train_toy(cfg: &RunConfig, cli: &Cli) -> Result<u8, Error> {
    let ds = make_synthetic_dataset(
        cfg.seed,
        cfg.dataset_size,
        cfg.input_size,
        cfg.input_size,
        cfg.decoder.num_classes,
    )?;
    let trained = train_toy(&cfg.decoder, &ds, &train_options(cfg))?;
    println!(
        "train-toy: {} decoder, {} samples at {px}x{px}, {} steps, lr {}",
        cfg.decoder.variant,
        cfg.dataset_size,
        cfg.steps,
        cfg.lr,
        px = cfg.input_size,
    );
    for r in &trained.log.records {
        if let Some(m) = r.miou {
            println!("  step {:>5}  loss {:.6}  holdout miou {:.6}", r.step, r.loss, m);
        }
    }
    let final_loss = trained.log.records.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!(
        "final: loss {:.6}, holdout miou {}",
        final_loss,
        trained
            .log
            .final_miou()
            .map(|m| format!("{m:.6}"))
            .unwrap_or_else(|| "n/a".into())
    );
    if let Some(dir) = &cli.checkpoint {
        save_checkpoint(dir, trained.model.params())?;
        println!("checkpoint written to {}", dir.display());
    }
    if let Some(path) = &cli.out {
        std::fs::write(path, trained.log.to_csv())?;
        println!("trace written to {}", path.display());
    }
    Ok(0)
}

fn cmd_attn_sim(cfg: &RunConfig) -> Result<u8, Error> {
    let (gh, gw) = cfg.decoder.source_grid(cfg.input_size, cfg.input_size);
    if gh * gw < 2 {
        return Err(Error::Config(format!(
            "attention similarity needs at least 2 pooled context tokens; \
             input size {} gives a {gh}x{gw} source grid (use --input-size 128 or larger)",
            cfg.input_size
        )));
    }
    let ds = make_synthetic_dataset(
        cfg.seed,
        cfg.dataset_size,
        cfg.input_size,
        cfg.input_size,
        cfg.decoder.num_classes,
    )?;
    let opts = train_options(cfg);
    let csap_cfg = DecoderConfig {
        variant: Variant::Csap,
        ..cfg.decoder
    };
    let std_cfg = DecoderConfig {
        variant: Variant::Standard,
        ..cfg.decoder
    };
    let csap = train_toy(&csap_cfg, &ds, &opts)?;
    let standard = train_toy(&std_cfg, &ds, &opts)?;

    let eval_start = ds.len() - opts.holdout.max(1);
    let holdout: Vec<&csap_core::data::SyntheticSample> = ds[eval_start..].iter().collect();
    let images = stack_images(&holdout)?;
    let features = csap.encoder.encode(&images)?;
    let (csap_model, std_model) = match (&csap.model, &standard.model) {
        (DecoderModel::Csap(c), DecoderModel::Standard(s)) => (c, s),
        _ => unreachable!("variants are fixed above"),
    };
    let stats = attention_similarity(csap_model, std_model, &features, cfg.seed)?;

    println!(
        "attention similarity: {} holdout samples at {px}x{px}, {} training steps per variant",
        holdout.len(),
        cfg.steps,
        px = cfg.input_size,
    );
    for ((stage, raw), (_, centered)) in stats.per_stage.iter().zip(&stats.per_stage_centered) {
        println!("  stage {stage}: cosine {raw:.6}  centered {centered:.6}");
    }
    println!(
        "mean cosine {:.6} (shuffled baseline {:.6})",
        stats.mean_cosine, stats.shuffled_baseline
    );
    println!(
        "mean centered cosine {:.6} (shuffled baseline {:.6})",
        stats.mean_centered_cosine, stats.centered_baseline
    );
    let pass = stats.mean_centered_cosine > stats.centered_baseline;
    println!(
        "propagated maps vs per-stage attention: {}",
        if pass {
            "similarity exceeds shuffled baseline"
        } else {
            "similarity does NOT exceed shuffled baseline"
        }
    );
    Ok(if pass { 0 } else { 1 })
}

fn cmd_predict(cfg: &RunConfig, cli: &Cli) -> Result<u8, Error> {
    let ds = make_synthetic_dataset(
        cfg.seed,
        1,
        cfg.input_size,
        cfg.input_size,
        cfg.decoder.num_classes,
    )?;
    let sample = &ds[0];
    let encoder: StubEncoder<f32> =
        StubEncoder::new(cfg.decoder.stage_channels, csap_core::data::derive_seed(cfg.seed, 0));
    let mut model: DecoderModel<f32> = DecoderModel::build(
        cfg.decoder,
        cfg.input_size,
        cfg.input_size,
        csap_core::data::derive_seed(cfg.seed, 1),
    )?;
    if let Some(dir) = &cli.checkpoint {
        load_checkpoint(dir, model.params_mut())?;
    }

    let images = stack_images(&[sample])?;
    let features = encoder.encode(&images)?;
    let mut tape = csap_core::autograd::Tape::new();
    let logits = model.forward_logits(&mut tape, &features)?;
    let labels = predict(tape.value(logits), cfg.input_size, cfg.input_size)?;

    let k = cfg.decoder.num_classes;
    let mut counts = vec![0usize; k];
    for &c in &labels.data {
        counts[c as usize] += 1;
    }
    let (h2, w2) = stage_dims(2, cfg.input_size, cfg.input_size);
    println!(
        "predict: {} decoder, {px}x{px} input, logits at {h2}x{w2}",
        cfg.decoder.variant,
        px = cfg.input_size,
    );
    for (c, n) in counts.iter().enumerate() {
        println!("  class {c}: {} pixels", with_separators(*n as u64));
    }
    let miou = csap_core::metrics::miou(&labels.data, &sample.labels, k)?;
    println!("miou vs generated labels: {miou:.6}");

    if let Some(path) = &cli.out {
        let data: Vec<f32> = labels.data.iter().map(|&c| c as f32).collect();
        let tensor = Tensor::new(vec![labels.batch, labels.height, labels.width], data)?;
        csap_core::cstf::write_file(path, &tensor)?;
        println!("label map written to {}", path.display());
    }
    Ok(0)
}
