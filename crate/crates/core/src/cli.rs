//! Command-line front end. Exit codes: 0 success, 1 runtime error, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::compositor::{compose_image, compose_layout};
use crate::data::{
    generate_dataset, load_sample, make_training_example, save_label_png, save_rgb_png, Dataset, Split, ToyConfig,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, load_examples, Baseline, EvalConfig};
use crate::losses::Ablation;
use crate::model::ModelState;
use crate::trainer::{fit, infer_transform, Latent, TrainConfig};

/// Optional default root for relative data paths that do not exist as given.
pub const DATA_ROOT_ENV: &str = "SAC_DATA_ROOT";

#[derive(Debug, Parser)]
#[command(name = "sacc", version, about = "Structure-aware object placement and composition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a procedural road-scene dataset.
    GenerateData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        /// Square scene side in pixels.
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 0.2)]
        val_fraction: f64,
    },
    /// Train a placement model on a dataset's training split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON training configuration; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ablation: Option<Ablation>,
    },
    /// Place an object from one scene into another and write the composite.
    Compose {
        #[arg(long)]
        model: PathBuf,
        /// Target scene directory.
        #[arg(long)]
        scene: PathBuf,
        /// Scene directory holding the object to cut out.
        #[arg(long)]
        object: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        emit_layout: Option<PathBuf>,
    },
    /// Evaluate a model on a dataset's validation split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        baseline: Option<Baseline>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        samples_per_example: usize,
        #[arg(long)]
        max_examples: Option<usize>,
    },
}

fn resolve(p: &Path) -> PathBuf {
    if p.is_relative() && !p.exists() {
        if let Some(root) = std::env::var_os(DATA_ROOT_ENV) {
            return Path::new(&root).join(p);
        }
    }
    p.to_path_buf()
}

fn model_path(p: &Path) -> PathBuf {
    let p = resolve(p);
    if p.is_dir() {
        p.join("model.sacc")
    } else {
        p
    }
}

fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenerateData {
            out,
            count,
            seed,
            size,
            val_fraction,
        } => {
            let cfg = ToyConfig {
                width: size,
                height: size,
                ..ToyConfig::default()
            };
            let ds = generate_dataset(&out, count, seed, &cfg, val_fraction)?;
            log::info!(
                "wrote {count} scenes to {} ({} train, {} val)",
                out.display(),
                ds.indices(Split::Train).len(),
                ds.indices(Split::Val).len()
            );
        }
        Command::Train {
            data,
            out,
            config,
            ablation,
        } => {
            let mut cfg = config.map(|p| read_config(&p)).transpose()?.unwrap_or_default();
            if let Some(a) = ablation {
                cfg.weights = cfg.weights.with_ablation(a);
            }
            let ds = Dataset::open(&resolve(&data))?;
            let res = fit(cfg, &ds, &out)?;
            log::info!("model written to {}", res.model_path.display());
        }
        Command::Compose {
            model,
            scene,
            object,
            seed,
            out,
            emit_layout,
        } => {
            let state = ModelState::load(&model_path(&model))?;
            let target = load_sample(&resolve(&scene))?;
            let source = load_sample(&resolve(&object))?;
            let ex = make_training_example(source, seed, state.config().patch_side)?
                .ok_or_else(|| Error::InvalidInput(format!("no intact object in {}", object.display())))?;
            let t = infer_transform(&state, &target, &ex.asset, &Latent::Seed(seed))?;
            log::info!("placement s={:.4} tx={:.4} ty={:.4}", t.s, t.tx, t.ty);
            save_rgb_png(&out, &compose_image(target.image.view(), &ex.asset, &t)?)?;
            if let Some(path) = emit_layout {
                let layout = compose_layout(&target.layout, &ex.asset, &t)?;
                save_label_png(&path, &layout.to_label_map(), layout.class_table())?;
            }
        }
        Command::Eval {
            model,
            data,
            out,
            baseline,
            seed,
            samples_per_example,
            max_examples,
        } => {
            let state = ModelState::load(&model_path(&model))?;
            let ds = Dataset::open(&resolve(&data))?;
            let examples = load_examples(&ds, Split::Val, state.config().patch_side, max_examples)?;
            let cfg = EvalConfig {
                seed,
                samples_per_example,
                max_examples,
            };
            let report = evaluate(&state, &examples, &cfg, baseline)?;
            let mut text = serde_json::to_string_pretty(&report).map_err(|e| Error::Eval(e.to_string()))?;
            text.push('\n');
            std::fs::write(&out, text).map_err(|e| Error::io(&out, e))?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["sacc", "frobnicate"]), 2);
        assert_eq!(
            run([
                "sacc",
                "generate-data",
                "--out",
                "x",
                "--count",
                "1",
                "--seed",
                "1",
                "--bogus"
            ]),
            2
        );
        assert_eq!(
            run(["sacc", "train", "--data", "d", "--out", "o", "--ablation", "nope"]),
            2
        );
        assert_eq!(run(["sacc", "--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_1() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing");
        let m = missing.to_str().unwrap();
        assert_eq!(run(["sacc", "train", "--data", m, "--out", m]), 1);
        assert_eq!(
            run(["sacc", "generate-data", "--out", m, "--count", "0", "--seed", "1"]),
            1
        );
    }
}
