//! Command-line harness: train, evaluate, compress, decompress, sweep,
//! bench, and report.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lilnetx::codec;
use lilnetx::config::RunConfig;
use lilnetx::data::{assemble_batch, load_dataset};
use lilnetx::net::Mode;
use lilnetx::sparse;
use lilnetx::train::{self, evaluate, TrainedModel};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "lilnetx", version, about = "Train and compress slice-sparse CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Path to a key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override: random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override: training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override: unstructured sparsity coefficient.
    #[arg(long)]
    lambda_u: Option<f64>,
    /// Override: group (slice) sparsity coefficient.
    #[arg(long)]
    lambda_s: Option<f64>,
    /// Override: rate coefficient.
    #[arg(long)]
    lambda_i: Option<f64>,
    /// Override: dataset (mnist, mnist-synth, cifar10-subset).
    #[arg(long)]
    dataset: Option<String>,
    /// Override: architecture (mlp, miniconv, resnet20).
    #[arg(long)]
    arch: Option<String>,
    /// Override: run output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override: dataset root (else $LILNETX_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Additional overrides as key=value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lambda_u {
            cfg.sparsity.lambda_u = v;
        }
        if let Some(v) = self.lambda_s {
            cfg.sparsity.lambda_s = v;
        }
        if let Some(v) = self.lambda_i {
            cfg.lambda_i = v;
        }
        if let Some(v) = &self.dataset {
            cfg.set("dataset", v)?;
        }
        if let Some(v) = &self.arch {
            cfg.set("arch", v)?;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = &self.data_dir {
            cfg.data_dir = Some(v.clone());
        }
        for kv in &self.set {
            let (key, value) = kv
                .split_once('=')
                .with_context(|| format!("--set expects key=value, got '{kv}'"))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write run artifacts (metrics, state, .lnx).
    Train(ConfigArgs),
    /// Evaluate a compressed model on the configured test split.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Path to a .lnx model file.
        #[arg(long)]
        model: PathBuf,
    },
    /// Build a .lnx file from a full-precision training state.
    Compress {
        /// Path to a state.bin written during training.
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify a .lnx file and expand it back into a training state.
    Decompress {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a λ_U × λ_S × seed grid, producing pareto.csv / pareto.json.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated λ_U grid.
        #[arg(long, value_name = "GRID")]
        lambda_u_grid: String,
        /// Comma-separated λ_S grid.
        #[arg(long, value_name = "GRID")]
        lambda_s_grid: String,
        /// Comma-separated seeds.
        #[arg(long, default_value = "1")]
        seeds: String,
    },
    /// Time dense vs structurally pruned inference on the test split.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        /// Batch size for the timed forward passes.
        #[arg(long, default_value_t = 128)]
        batch: usize,
    },
    /// Print the size breakdown and sparsity report of a .lnx file.
    Report {
        #[arg(long)]
        model: PathBuf,
    },
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad grid value '{v}'")))
        .collect()
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|v| v.trim().parse::<u64>().with_context(|| format!("bad seed '{v}'")))
        .collect()
}

fn load_model(path: &PathBuf) -> Result<TrainedModel> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let state = codec::deserialize_model(&bytes)?;
    Ok(TrainedModel::from_model_state(state, 0))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match Cli::parse().command {
        Command::Train(args) => {
            let cfg = args.build()?;
            let outcome = train::train(&cfg)?;
            let size = codec::report_size(&outcome.lnx_bytes)?;
            println!(
                "trained: top1 {:.4}, slice sparsity {:.3}, file {} B ({:.1}x vs dense {} B)",
                outcome.final_eval.top1,
                outcome.final_eval.report.global_slice_sparsity,
                size.total,
                size.compression_ratio,
                size.dense_baseline
            );
            println!("artifacts in {}", cfg.out_dir.display());
        }
        Command::Eval { config, model } => {
            let cfg = config.build()?;
            let mut model = load_model(&model)?;
            let (_, test) = load_dataset(cfg.dataset, &cfg.resolve_data_dir())?;
            let summary = evaluate(&mut model, &test, 256)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Compress { state, out } => {
            let model = train::load_state(&state)?;
            let bytes = model.to_lnx()?;
            std::fs::write(&out, &bytes)?;
            let size = codec::report_size(&bytes)?;
            println!(
                "wrote {} ({} B, {:.1}x vs dense {} B)",
                out.display(),
                size.total,
                size.compression_ratio,
                size.dense_baseline
            );
        }
        Command::Decompress { model, out } => {
            let bytes = std::fs::read(&model)?;
            let state = codec::deserialize_model(&bytes)?;
            let restored = TrainedModel::from_model_state(state, 0);
            train::save_state(&restored, &out)?;
            println!("verified {} and wrote {}", model.display(), out.display());
        }
        Command::Sweep { config, lambda_u_grid, lambda_s_grid, seeds } => {
            let cfg = config.build()?;
            let lu = parse_grid(&lambda_u_grid)?;
            let ls = parse_grid(&lambda_s_grid)?;
            let seeds = parse_seeds(&seeds)?;
            let out_dir = cfg.out_dir.clone();
            let cells = lilnetx::sweep::sweep(&cfg, &lu, &ls, &seeds, &out_dir)?;
            let ok = cells.iter().filter(|c| c.status == lilnetx::sweep::CellStatus::Ok).count();
            println!(
                "swept {} cells ({} ok); pareto table in {}",
                cells.len(),
                ok,
                out_dir.join("pareto.csv").display()
            );
        }
        Command::Bench { config, model, batch } => {
            let cfg = config.build()?;
            let mut model = load_model(&model)?;
            let (_, test) = load_dataset(cfg.dataset, &cfg.resolve_data_dir())?;
            let weights = model.decode_weights()?;
            let mut masks = Vec::with_capacity(model.net.layers.len());
            for latent in &model.latents {
                masks.push(match latent {
                    Some(l) => Some(sparse::slice_mask(l)?),
                    None => None,
                });
            }
            let (mut pruned, pruned_weights) =
                sparse::prune_structured(&model.net, &weights, &masks)?;
            let mut batches = Vec::new();
            let mut at = 0;
            while at < test.n {
                let hi = (at + batch).min(test.n);
                let idx: Vec<usize> = (at..hi).collect();
                batches.push(assemble_batch(&test, &idx, None).0);
                at = hi;
            }
            // correctness guard before timing
            if let Some(b) = batches.first() {
                let (dense_out, _) = model.net.forward(&weights, b, Mode::Eval)?;
                let (pruned_out, _) = pruned.forward(&pruned_weights, b, Mode::Eval)?;
                let max_diff = dense_out
                    .data
                    .iter()
                    .zip(&pruned_out.data)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f32, f32::max);
                if max_diff > 1e-4 {
                    bail!("pruned network diverged from dense ({max_diff})");
                }
            }
            let mut dense_net = model.net.clone();
            let timing = sparse::bench_speedup(
                &mut dense_net,
                &weights,
                &mut pruned,
                &pruned_weights,
                &batches,
            )?;
            let mut report = sparse::sparsity_report(&model.net, &model.latents)?;
            report.timing = Some(timing);
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Report { model } => {
            let bytes = std::fs::read(&model)?;
            let size = codec::report_size(&bytes)?;
            let state = codec::deserialize_model(&bytes)?;
            let restored = TrainedModel::from_model_state(state, 0);
            let sparsity = sparse::sparsity_report(&restored.net, &restored.latents)?;
            let report = serde_json::json!({ "size": size, "sparsity": sparsity });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}
