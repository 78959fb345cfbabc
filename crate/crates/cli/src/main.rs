use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlca::encoder::{load_model, read_markers};
use mlca::pipeline::{
    cmd_evaluate, cmd_infer, cmd_learn_encoder, cmd_synth, cmd_train_merge, DatasetManifest, Layout, PipelineConfig,
    PipelineError, SynthFamily, SynthOptions,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "mlca", version, about = "Marker-driven saliency: encoder design, inference, fusion and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Split to work on; all images when omitted.
    #[arg(long)]
    split: Option<String>,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Run directory; defaults to `output_root` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Learn encoder filters from user markers.
    LearnEncoder {
        #[command(flatten)]
        common: Common,
        /// Marker file (`image_id x y radius fg|bg` per line).
        #[arg(long)]
        markers: PathBuf,
    },
    /// Decode, evolve and optionally merge saliency maps.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Merge network; the run directory's model is used when present.
        #[arg(long)]
        merge: Option<PathBuf>,
    },
    /// Train the fusion network on evolved saliencies.
    TrainMerge {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        encoder: Option<PathBuf>,
    },
    /// Score predictions against ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Inference output to score; defaults to the run directory's.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with markers.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Images per family.
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        size: usize,
        /// Restrict to one family (parasite or brain).
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run the design-studio HTTP backend.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Static front-end files served for unknown paths.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

fn config_error(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(mlca::Error::InvalidArgument(msg.into()))
}

struct Context {
    cfg: PipelineConfig,
    manifest: DatasetManifest,
    layout: Layout,
    split: Option<String>,
    jobs: Option<usize>,
}

impl Common {
    fn load(self) -> Result<Context, PipelineError> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.merge.seed = seed;
        }
        let manifest = DatasetManifest::load(&self.manifest)?;
        manifest.split(self.split.as_deref())?;
        let layout = Layout::new(self.out.unwrap_or_else(|| cfg.output_root.clone()));
        Ok(Context {
            cfg,
            manifest,
            layout,
            split: self.split,
            jobs: self.jobs,
        })
    }
}

fn load_encoder(path: &Path) -> Result<mlca::encoder::EncoderModel, PipelineError> {
    load_model(path).map_err(PipelineError::Data)
}

fn print<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable report"));
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::LearnEncoder { common, markers } => {
            let ctx = common.load()?;
            let arch = ctx.cfg.load_architecture()?;
            let markers = read_markers(&markers).map_err(PipelineError::Data)?;
            let model_path = ctx.layout.encoder_model();
            let summary = mlca::pipeline::with_jobs(ctx.jobs, || {
                cmd_learn_encoder(&ctx.manifest, ctx.split.as_deref(), &markers, &arch, ctx.cfg.seed, &model_path)
            })??;
            print(&summary);
        }
        Command::Infer { common, encoder, merge } => {
            let ctx = common.load()?;
            let encoder = load_encoder(&encoder.unwrap_or_else(|| ctx.layout.encoder_model()))?;
            let merge_path = merge.or_else(|| Some(ctx.layout.merge_model()).filter(|p| p.exists()));
            let merge = match merge_path {
                Some(p) => Some(mlca::merge::load_model(&p).map_err(PipelineError::Data)?.net),
                None => None,
            };
            let out = ctx.layout.infer_dir(ctx.split.as_deref());
            let report =
                cmd_infer(&ctx.manifest, ctx.split.as_deref(), &encoder, merge.as_ref(), &ctx.cfg, ctx.jobs, &out)?;
            eprintln!("wrote {} image(s) to {}", report.images.len(), out.display());
            if !report.over_budget.is_empty() {
                eprintln!("over the wall-time budget: {}", report.over_budget.join(", "));
            }
        }
        Command::TrainMerge { common, encoder } => {
            let ctx = common.load()?;
            let encoder = load_encoder(&encoder.unwrap_or_else(|| ctx.layout.encoder_model()))?;
            let report = cmd_train_merge(
                &ctx.manifest,
                ctx.split.as_deref(),
                &encoder,
                &ctx.cfg,
                ctx.jobs,
                &ctx.layout.merge_model(),
                &ctx.layout.merge_log(),
            )?;
            print(&report);
        }
        Command::Evaluate { common, predictions } => {
            let ctx = common.load()?;
            let predictions = predictions.unwrap_or_else(|| ctx.layout.infer_dir(ctx.split.as_deref()));
            let out = ctx.layout.eval_dir(ctx.split.as_deref());
            let report = mlca::pipeline::with_jobs(ctx.jobs, || {
                cmd_evaluate(&ctx.manifest, ctx.split.as_deref(), &predictions, &ctx.cfg.metrics, &out)
            })??;
            for (variant, r) in &report.reports {
                let mean = |m: &str| r.mean(m).unwrap_or(f64::NAN);
                println!(
                    "{variant:<12} dice {:.4}  fscore {:.4}  muwf {:.4}  smeasure {:.4}  emeasure {:.4}  mae {:.4}",
                    mean("dice"),
                    mean("fscore"),
                    mean("muwf"),
                    mean("smeasure"),
                    mean("emeasure"),
                    mean("mae")
                );
            }
        }
        Command::Synth {
            out,
            count,
            seed,
            size,
            family,
            jobs,
        } => {
            let families = match family.as_deref() {
                None => vec![SynthFamily::Parasite, SynthFamily::Brain],
                Some("parasite") => vec![SynthFamily::Parasite],
                Some("brain") => vec![SynthFamily::Brain],
                Some(other) => return Err(config_error(format!("unknown family '{other}'")).into()),
            };
            let opts = SynthOptions {
                count,
                seed,
                width: size,
                height: size,
                families,
                ..SynthOptions::default()
            };
            let written = mlca::pipeline::with_jobs(jobs, || cmd_synth(&opts, &out))??;
            for f in written {
                eprintln!("{}: {} image(s), {} marker(s)", f.family.name(), f.manifest.entries.len(), f.markers.len());
            }
        }
        Command::Serve { bind, port, static_dir } => {
            let addr: SocketAddr = format!("{bind}:{port}")
                .parse()
                .map_err(|e| config_error(format!("bad bind address: {e}")))?;
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on http://{addr}");
            rt.block_on(mlca_studio::serve(addr, mlca_studio::AppState::new(), static_dir))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<PipelineError>().map_or(1, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
