use std::path::{Path, PathBuf};
use std::process::ExitCode;

use channel_charting::config::{ExperimentConfig, MethodSpec};
use channel_charting::error::{Error, ErrorClass, Result};
use channel_charting::{io, pipeline};
use clap::{Args, Parser, Subcommand};

/// Channel charting: synthesize CSI, extract features, learn and score charts.
#[derive(Parser, Debug)]
#[command(name = "ccharts", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment configuration (TOML); built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to the configuration's output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed overriding every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a CSI dataset.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Extract features from a dataset.
    Features {
        #[command(flatten)]
        common: Common,
        /// Dataset file; defaults to <out>/dataset.ccds.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Also score every (domain, transform) pair against ground truth.
        #[arg(long)]
        table: bool,
    },
    /// Learn a channel chart from a feature file.
    Chart {
        #[command(flatten)]
        common: Common,
        /// One of pca, sm, sm_plus, ae.
        #[arg(long)]
        method: String,
        /// Feature file; defaults to <out>/features.ccfs.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Dataset whose positions are appended to the chart CSV for plotting.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Score a chart against ground-truth positions; reports are written
    /// next to the chart.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Chart CSV; defaults to <run>/<method>/chart.csv.
        #[arg(long)]
        chart: Option<PathBuf>,
        /// Method whose chart in the run directory is evaluated.
        #[arg(long)]
        method: Option<String>,
        /// Dataset file; defaults to <run>/dataset.ccds.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Neighborhood sizes with a full report, comma separated.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
    },
    /// Run every stage for every configured method.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Generate { common }
            | Command::Features { common, .. }
            | Command::Chart { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Pipeline { common } => common,
        }
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 3,
        ErrorClass::Model => 4,
        ErrorClass::Solver => 5,
        ErrorClass::Io => 6,
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.apply_seed(seed);
        cfg.validate()?;
    }
    Ok(cfg)
}

fn method_spec(cfg: &ExperimentConfig, name: &str) -> Result<MethodSpec> {
    let wanted = MethodSpec::by_name(name).ok_or_else(|| Error::Config {
        key: "--method".into(),
        message: format!(
            "unknown method {name:?}, expected one of {}",
            MethodSpec::NAMES.join(", ")
        ),
    })?;
    Ok(cfg
        .methods
        .iter()
        .find(|m| m.name() == wanted.name())
        .cloned()
        .unwrap_or(wanted))
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

fn run(command: &Command) -> Result<()> {
    let common = command.common();
    let cfg = load_config(common)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let ctx = Ctx {
        cfg,
        out,
        quiet: common.quiet,
    };
    let layout = pipeline::Layout::new(&ctx.out);
    match command {
        Command::Generate { .. } => {
            let ds = pipeline::run_generate(&ctx.cfg, &ctx.out)?;
            print_scenario(&ctx, &pipeline::ScenarioSummary::of(&ds));
            ctx.say(format!("wrote {}", layout.dataset().display()));
        }
        Command::Features { dataset, table, .. } => {
            let path = dataset.clone().unwrap_or_else(|| layout.dataset());
            let ds = io::read_dataset(&path)?;
            let mut cfg = ctx.cfg.clone();
            cfg.scenario = ds.spec.clone();
            let f = pipeline::run_features(&cfg, &ds, &ctx.out)?;
            ctx.say(format!(
                "{} features: {} x {} -> {}",
                f.config.label(),
                f.len(),
                f.dim(),
                layout.features().display()
            ));
            if *table {
                let rows = pipeline::run_feature_table(&cfg, &ds, &ctx.out)?;
                ctx.say(format!("{:<10} {:<8} {:>14} {:>14}", "domain", "transform", "TW", "CT"));
                for r in rows {
                    ctx.say(format!(
                        "{:<10} {:<8} {:>6.3} (+-{:.2}) {:>6.3} (+-{:.2})",
                        r.config.domain.name(),
                        r.config.transform.name(),
                        r.report.tw_global,
                        r.report.tw_std,
                        r.report.ct_global,
                        r.report.ct_std
                    ));
                }
                ctx.say(format!("wrote {}", layout.feature_table().display()));
            }
        }
        Command::Chart {
            method,
            features,
            dataset,
            ..
        } => {
            let spec = method_spec(&ctx.cfg, method)?;
            let f = io::read_features(&features.clone().unwrap_or_else(|| layout.features()))?;
            let ds = match dataset {
                Some(p) => Some(io::read_dataset(p)?),
                None => None,
            };
            let mut cfg = ctx.cfg.clone();
            if let Some(ds) = &ds {
                cfg.scenario = ds.spec.clone();
            }
            let chart = pipeline::run_chart(&cfg, &spec, &f, ds.as_ref().map(|d| &d.positions), &ctx.out)?;
            let d = &chart.diagnostics;
            ctx.say(format!(
                "{}: {} points in {} dims, {} iterations, final objective {}",
                chart.method,
                chart.len(),
                chart.dims(),
                d.iterations,
                d.final_objective.map_or("n/a".to_string(), |v| format!("{v:.6e}"))
            ));
            for w in &d.warnings {
                ctx.say(format!("warning: {w}"));
            }
            ctx.say(format!("wrote {}", layout.chart(spec.name()).display()));
        }
        Command::Evaluate {
            chart,
            method,
            dataset,
            k,
            ..
        } => {
            let chart_path = match (chart, method) {
                (Some(p), _) => p.clone(),
                (None, Some(m)) => layout.chart(method_spec(&ctx.cfg, m)?.name()),
                (None, None) => {
                    return Err(Error::Config {
                        key: "--chart".into(),
                        message: "give --chart or --method".into(),
                    })
                }
            };
            let mut ch = io::read_chart(&chart_path)?;
            if let Ok((m, d)) = io::read_diagnostics(&pipeline::diagnostics_beside(&chart_path)) {
                ch.method = m;
                ch.diagnostics = d;
            }
            let ds = io::read_dataset(&dataset.clone().unwrap_or_else(|| layout.dataset()))?;
            let mut cfg = ctx.cfg.clone();
            if !k.is_empty() {
                cfg.evaluation.k_values = k.clone();
            }
            let dest = chart_path.parent().map(Path::to_path_buf).unwrap_or_default();
            let eval = pipeline::run_evaluate(&cfg, &ch, &ds, &dest)?;
            for r in &eval.reports {
                let flag = if r.k == eval.default_k { "  (default K)" } else { "" };
                ctx.say(format!(
                    "K={:<4} CT {:.4} (+-{:.3})  TW {:.4} (+-{:.3}){flag}",
                    r.k, r.ct_global, r.ct_std, r.tw_global, r.tw_std
                ));
            }
            ctx.say(format!("wrote {}", dest.join("sweep.csv").display()));
        }
        Command::Pipeline { .. } => {
            let summary = pipeline::run_pipeline(&ctx.cfg, &ctx.out)?;
            print_scenario(&ctx, &summary.scenario);
            ctx.say(format!(
                "{:<8} {:<7} {:>5} {:>7} {:>7}",
                "method", "model", "K", "CT", "TW"
            ));
            for r in &summary.rows {
                ctx.say(format!(
                    "{:<8} {:<7} {:>5} {:>7.3} {:>7.3}{}",
                    r.method,
                    r.model,
                    r.report.k,
                    r.report.ct_global,
                    r.report.tw_global,
                    if r.resumed { "  (resumed)" } else { "" }
                ));
            }
            ctx.say(format!("wrote {}", layout.summary().display()));
        }
    }
    Ok(())
}

fn print_scenario(ctx: &Ctx, s: &pipeline::ScenarioSummary) {
    ctx.say(format!(
        "{} model: {} locations x {} snapshots x {} antennas, median nearest-neighbor spacing {:.2} m",
        s.model, s.num_locations, s.snapshots, s.csi_len, s.median_spacing_m
    ));
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.command.common().quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
