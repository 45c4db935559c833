use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rogpl::bench::experiment::{
    evaluate_model, load_named, sweep, CsvSink, Experiment, ExperimentConfig, NoiseSpec, OodMode,
    SweepAxis,
};
use rogpl::bench::linqs::convert_dir;
use rogpl::graph::{load_dataset, write_dataset, DatasetFormat};
use rogpl::pipeline::{self, AblationFlags};

#[derive(Parser)]
#[command(name = "rogpl", version, about = "Open-set node classification under label noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw LINQS citation dump to the TSV dataset format.
    Prepare {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inject noise, train one model and save it.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_variant)]
        ablate: Option<AblationFlags>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines training log.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Per-refresh denoising diagnostics (TSV).
        #[arg(long)]
        denoise_tsv: Option<PathBuf>,
        /// Final prototype pool (TSV).
        #[arg(long)]
        prototypes: Option<PathBuf>,
    },
    /// Rebuild the noisy split recorded in a model and append its test metrics.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run experiments over a range of IND or far-OOD noise rates.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_variant)]
        ablate: Option<AblationFlags>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_variant(s: &str) -> Result<AblationFlags, String> {
    AblationFlags::from_name(s).map_err(|e| e.to_string())
}

fn read_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_file(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn far_source(noise: &NoiseSpec) -> Result<Option<rogpl::Graph>> {
    match (&noise.ood_mode, &noise.far_source) {
        (OodMode::Far, Some(p)) => Ok(Some(
            load_dataset(p, DatasetFormat::Tsv).with_context(|| format!("loading far source {}", p.display()))?,
        )),
        _ => Ok(None),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Prepare { input, out } => {
            let c = convert_dir(&input).with_context(|| format!("converting {}", input.display()))?;
            write_dataset(&c.graph, &out)?;
            println!(
                "{} nodes, {} edges, {} features, classes {:?}; dropped {} dangling citations",
                c.graph.n_nodes(),
                c.graph.edge_list().len(),
                c.graph.n_features(),
                c.class_names,
                c.dropped_edges
            );
        }
        Command::Train {
            data,
            config,
            ablate,
            seed,
            out,
            log,
            denoise_tsv,
            prototypes,
        } => {
            let mut cfg = read_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let (name, graph) = load_named(&data)?;
            let source = far_source(&cfg.noise)?;
            let exp = Experiment {
                dataset: &name,
                graph: &graph,
                far_source: source.as_ref(),
                noise: &cfg.noise,
                config: &cfg.train,
                variant: ablate.unwrap_or_default(),
            };
            let run = exp.run_seed(cfg.train.seed)?;
            pipeline::save(&run.model, &out)?;
            if let Some(p) = log {
                run.model.diagnostics.write_log(&p)?;
            }
            if let Some(p) = denoise_tsv {
                run.model.diagnostics.write_denoise_tsv(&p)?;
            }
            if let Some(p) = prototypes {
                run.model.pool.write_dump(&p)?;
            }
            let r = &run.row;
            println!(
                "{} [{}] seed {}: macro-F1 {:.4}  AUROC {:.4}  clean {}  best epoch {}  ({:.1}s)",
                r.dataset,
                r.variant,
                r.seed,
                r.macro_f1,
                r.auroc,
                r.n_clean_final,
                run.model.diagnostics.best_epoch,
                r.wall_seconds
            );
        }
        Command::Eval { model, data, out } => {
            let m: rogpl::Model = pipeline::load(&model)?;
            let Some(noise) = m.experiment.clone() else {
                bail!("{} carries no experiment description", model.display());
            };
            let noise: NoiseSpec = serde_json::from_value(noise).context("model experiment record")?;
            let (name, graph) = load_named(&data)?;
            let source = far_source(&noise)?;
            let start = std::time::Instant::now();
            let ds = noise.apply(&graph, source.as_ref(), m.config.seed)?;
            let metrics = evaluate_model(&m, &ds)?;
            let row = rogpl::bench::experiment::MetricsRow {
                dataset: name,
                ood_mode: noise.ood_mode.as_str().into(),
                ind_rate: noise.ind_rate,
                ood_rate: noise.ood_rate,
                variant: m.flags.name(),
                seed: m.config.seed.to_string(),
                macro_f1: metrics.macro_f1,
                auroc: metrics.auroc,
                known_acc: metrics.known_acc,
                unknown_acc: metrics.unknown_acc,
                overall_acc: metrics.overall_acc,
                n_clean_final: m.diagnostics.final_clean.len() as f64,
                wall_seconds: start.elapsed().as_secs_f64(),
            };
            CsvSink::append(&out)?.write(&row)?;
            println!("macro-F1 {:.4}  AUROC {:.4}", row.macro_f1, row.auroc);
        }
        Command::Sweep {
            data,
            axis,
            values,
            config,
            ablate,
            seeds,
            out,
        } => {
            let cfg = read_config(config.as_deref())?;
            let (name, graph) = load_named(&data)?;
            let source = far_source(&cfg.noise)?;
            let exp = Experiment {
                dataset: &name,
                graph: &graph,
                far_source: source.as_ref(),
                noise: &cfg.noise,
                config: &cfg.train,
                variant: ablate.unwrap_or_default(),
            };
            let mut sink = CsvSink::append(&out)?;
            sweep(&exp, axis, &values, seeds, |row| {
                if row.is_aggregate() {
                    println!(
                        "ind {:.2} ood {:.2}: macro-F1 {:.4}  AUROC {:.4}",
                        row.ind_rate, row.ood_rate, row.macro_f1, row.auroc
                    );
                }
                sink.write(row)
            })?;
        }
    }
    Ok(())
}
