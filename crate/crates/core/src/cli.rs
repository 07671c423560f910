//! Command-line front end. Every subcommand runs one pipeline stage.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{PipelineConfig, Precision};
use crate::error::Result;
use crate::pipeline;

#[derive(Debug, Parser)]
#[command(name = "affground", version, about = "Pseudo-label supervised affordance grounding")]
pub struct Cli {
    /// Shared TOML config file; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset into the data root.
    Fixture,
    /// Initial pseudo labels and object boxes for the training images.
    GenLabels,
    /// Rank exocentric partners for every egocentric image.
    Pair,
    /// Train the refinement head and write refined labels.
    Refine {
        /// Comma-separated `affordance/object` classes; overrides the config.
        #[arg(long, value_delimiter = ',')]
        scope: Option<Vec<String>>,
    },
    /// Train one grounding model per seed.
    Train {
        /// Comma-separated seeds; overrides the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Score checkpoints on the test split.
    Eval(EvalArgs),
    /// Heatmap for one image and affordance.
    Predict(PredictArgs),
    /// Pick the grasp candidate with the highest heatmap value.
    GraspSelect {
        #[arg(long)]
        heatmap: PathBuf,
        /// JSON array of `{id, u, v}` objects.
        #[arg(long)]
        candidates: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file. Repeatable.
    #[arg(long, required_unless_present = "seeds")]
    pub checkpoint: Vec<PathBuf>,
    /// Evaluate the work-directory checkpoints of these seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Accept checkpoints written under a different config.
    #[arg(long)]
    pub allow_config_mismatch: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Affordance to ground, e.g. `hold`.
    #[arg(long)]
    pub query: String,
    /// `.json` keeps full precision; anything else is written as PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the image with the heatmap blended in.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    #[arg(long)]
    pub allow_config_mismatch: bool,
}

fn toml_list<T: std::fmt::Debug>(v: &[T]) -> String {
    format!("{v:?}")
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.overrides.clone();
    match &cli.command {
        Command::Refine { scope: Some(s) } => overrides.push(format!("refine.scope={}", toml_list(s))),
        Command::Train { seeds: Some(s) } => overrides.push(format!("train.seeds={}", toml_list(s))),
        _ => {}
    }
    let cfg = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    macro_rules! typed {
        ($f:ident($($a:expr),*)) => {
            match cfg.precision {
                Precision::F32 => pipeline::$f::<f32>($($a),*).map(|_| ()),
                Precision::F64 => pipeline::$f::<f64>($($a),*).map(|_| ()),
            }
        };
    }
    match cli.command {
        Command::Fixture => {
            let fx = pipeline::run_fixture(&cfg)?;
            println!("fixture: {} images in {}", fx.index.samples.len(), cfg.data_root.display());
        }
        Command::GenLabels => {
            let s = pipeline::run_gen_labels(&cfg)?;
            println!("gen-labels: {} labels ({} uniform fallbacks), {} object boxes", s.labeled, s.degenerate, s.objects);
        }
        Command::Pair => {
            let p = pipeline::run_pair(&cfg)?;
            println!("pair: {} egocentric images ranked", p.partners.len());
        }
        Command::Refine { .. } => {
            typed!(run_refine(&cfg))?;
            println!("refine: done");
        }
        Command::Train { .. } => {
            typed!(run_train(&cfg))?;
            for s in &cfg.train.seeds {
                println!("train: {}", pipeline::work_dir(&cfg).checkpoint(*s).display());
            }
        }
        Command::Eval(a) => {
            let mut paths = a.checkpoint.clone();
            let wd = pipeline::work_dir(&cfg);
            paths.extend(a.seeds.iter().flatten().map(|s| wd.checkpoint(*s)));
            let summary = match cfg.precision {
                Precision::F32 => pipeline::run_eval::<f32>(&cfg, &paths, a.allow_config_mismatch)?,
                Precision::F64 => pipeline::run_eval::<f64>(&cfg, &paths, a.allow_config_mismatch)?,
            };
            for (p, r) in &summary.reports {
                println!("{}: KLD {:.4} SIM {:.4} NSS {:.4}", p.display(), r.kld(), r.sim(), r.nss());
            }
            if let Some(m) = &summary.mean {
                println!("mean: KLD {:.4} SIM {:.4} NSS {:.4}", m.kld(), m.sim(), m.nss());
            }
        }
        Command::Predict(a) => {
            typed!(run_predict(&cfg, &a.checkpoint, &a.image, &a.query, &a.out, a.overlay.as_deref(), a.allow_config_mismatch))?;
            println!("predict: {}", a.out.display());
        }
        Command::GraspSelect { heatmap, candidates } => {
            let g = pipeline::run_grasp_select(&heatmap, &candidates)?;
            println!("{}", serde_json::to_string(&g).expect("candidate serialises"));
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs the subcommand. Returns 0 on
/// success, 2 on usage errors and 1 on any other failure.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
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
    fn usage_errors_exit_two() {
        assert_eq!(run_command(["affground", "frobnicate"]), 2);
        assert_eq!(run_command(["affground", "train", "--bogus"]), 2);
        assert_eq!(run_command(["affground", "eval"]), 2);
        assert_eq!(run_command(["affground", "eval", "--allow-config-mismatch"]), 2);
        assert_eq!(run_command(["affground"]), 2);
    }

    #[test]
    fn config_errors_exit_one() {
        assert_eq!(run_command(["affground", "--set", "train.epochs=0", "fixture"]), 1);
    }
}
