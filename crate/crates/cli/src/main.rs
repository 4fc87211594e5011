use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use finercam_cli::commands;
use finercam_cli::config::{ServiceConfig, CONFIG_ENV};
use finercam_cli::error::{AppError, AppResult};
use finercam_cli::request::{ExplainRequest, OutputKind, References};
use finercam_cli::service;
use finercam_core::cam::{Activation, Aggregation, Method, DEFAULT_GAMMA, DEFAULT_REFERENCE_COUNT};
use finercam_core::eval::{EvalConfig, ReferencePolicy, SynthSpec, DEFAULT_STEP};
use finercam_core::head::TrainConfig;
use finercam_core::tensor_store::Split;

/// Comparative class activation maps: explain, evaluate and serve.
#[derive(Parser)]
#[command(name = "finercam", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic benchmark dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 400)]
        num_train: usize,
        #[arg(long, default_value_t = 200)]
        num_test: usize,
    },
    /// Train a linear head on the train split's pooled embeddings.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 3e-4)]
        lr: f32,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
    },
    /// Compute one saliency map.
    Explain {
        #[command(flatten)]
        ws: WorkspaceArgs,
        #[arg(long)]
        sample: String,
        /// Defaults to the head's prediction.
        #[arg(long)]
        target: Option<usize>,
        /// `auto:T`, a comma-separated class list, or `none`.
        #[arg(long, default_value_t = format!("auto:{DEFAULT_REFERENCE_COUNT}"))]
        refs: String,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f32,
        #[command(flatten)]
        method: MethodArgs,
        /// `raw` (feature resolution) or `normalized` (image resolution).
        #[arg(long, default_value = "normalized", value_parser = enum_arg::<OutputKind>)]
        output: OutputKind,
        #[arg(long)]
        by_weight_similarity: bool,
        /// Saliency tensor (FCT).
        #[arg(long)]
        out: PathBuf,
        /// Overlay PNG.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Deletion AUC, relative drop and pointing game over a split.
    Eval {
        #[command(flatten)]
        ws: WorkspaceArgs,
        /// Evaluate the baseline method instead of the comparative one.
        #[arg(long)]
        baseline: bool,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f32,
        #[arg(long, default_value_t = DEFAULT_REFERENCE_COUNT)]
        refs: usize,
        #[arg(long)]
        by_weight_similarity: bool,
        #[command(flatten)]
        method: MethodArgs,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value = "test", value_parser = enum_arg::<Split>)]
        split: Split,
        /// Report JSON; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sorted cosine similarity between head rows as CSV.
    Similarity {
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, env = CONFIG_ENV)]
        config: PathBuf,
        /// Overrides the configured bind address.
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Args)]
struct WorkspaceArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    head: PathBuf,
    /// Backend file; defaults to backend.json next to the manifest.
    #[arg(long)]
    backend: Option<PathBuf>,
}

#[derive(Args)]
struct MethodArgs {
    #[arg(long, default_value = "grad", value_parser = enum_arg::<Method>)]
    method: Method,
    #[arg(long, default_value = "avg_before_act", value_parser = enum_arg::<Aggregation>)]
    aggregation: Aggregation,
    #[arg(long, default_value = "relu", value_parser = enum_arg::<Activation>)]
    activation: Activation,
}

/// Parses a snake_case enum through its serde name.
fn enum_arg<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn write_or_print(out: Option<&PathBuf>, text: &str) -> AppResult<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| AppError::input(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> AppResult<()> {
    match cli.command {
        Command::Synth {
            out,
            seed,
            num_train,
            num_test,
        } => {
            let spec = SynthSpec {
                seed,
                num_train,
                num_test,
                ..SynthSpec::default()
            };
            commands::synth(&out, &spec)?;
            eprintln!("wrote {} samples to {}", num_train + num_test, out.display());
        }
        Command::Train {
            manifest,
            out,
            seed,
            epochs,
            lr,
            batch_size,
        } => {
            let config = TrainConfig {
                learning_rate: lr,
                epochs,
                batch_size,
                seed,
                ..TrainConfig::default()
            };
            let s = commands::train(&manifest, &out, &config)?;
            eprint!("train accuracy {:.4}", s.train_accuracy);
            if let Some(t) = s.test_accuracy {
                eprint!(", test accuracy {t:.4}");
            }
            eprintln!();
        }
        Command::Explain {
            ws,
            sample,
            target,
            refs,
            gamma,
            method,
            output,
            by_weight_similarity,
            out,
            overlay,
        } => {
            let references: References = refs.parse().map_err(AppError::usage)?;
            let req = ExplainRequest {
                sample_id: sample,
                target_class: target,
                references,
                gamma,
                method: method.method,
                aggregation: method.aggregation,
                activation: method.activation,
                output,
                by_weight_similarity,
            };
            let workspace = commands::open_workspace(&ws.manifest, &ws.head, ws.backend.as_deref())?;
            let e = commands::explain(&workspace, &req, &out, overlay.as_deref())?;
            eprintln!("target {} references {:?}", e.target_class, e.references_used);
        }
        Command::Eval {
            ws,
            baseline,
            gamma,
            refs,
            by_weight_similarity,
            method,
            step,
            split,
            out,
        } => {
            let config = EvalConfig {
                method: method.method,
                finer: !baseline,
                gamma,
                references: ReferencePolicy {
                    count: refs,
                    by_weight_similarity,
                },
                aggregation: method.aggregation,
                activation: method.activation,
                step,
                ..EvalConfig::default()
            };
            let workspace = commands::open_workspace(&ws.manifest, &ws.head, ws.backend.as_deref())?;
            let report = commands::eval(&workspace, &config, split)?;
            let json = serde_json::to_string_pretty(&report).expect("serializable");
            write_or_print(out.as_ref(), &(json + "\n"))?;
        }
        Command::Similarity { head, out } => {
            write_or_print(out.as_ref(), &commands::similarity_csv(&head)?)?;
        }
        Command::Serve { config, bind } => {
            let mut config = ServiceConfig::load(&config)?;
            if let Some(b) = bind {
                config.bind = b;
            }
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(AppError::compute)?;
            rt.block_on(service::serve(&config))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
