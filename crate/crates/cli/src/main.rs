use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ppro::autodiff::read_checkpoint;
use ppro::data::{edge_homophily, generate_sbm, load_dataset_with_stats, save_dataset, SbmSpec};
use ppro::experiment::{output_root, run_experiment, run_sweep, write_dot, ExperimentConfig, OUTPUT_ENV};
use ppro::priority::build_priority;
use ppro::trainer::{PreparedData, TrainState};

#[derive(Parser)]
#[command(name = "ppro", version, about = "Node-wise prioritized propagation for GNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset directory and print its statistics.
    Ingest {
        dir: PathBuf,
        /// Seed for a regenerated split when masks.tsv is absent.
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
    /// Generate a stochastic block model dataset directory.
    Synth {
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        blocks: usize,
        #[arg(long, default_value_t = 0.05)]
        p_in: f64,
        #[arg(long, default_value_t = 0.005)]
        p_out: f64,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
        #[arg(long, default_value_t = 10)]
        labels_per_class: usize,
        /// Fraction of nodes whose features carry the class mean.
        #[arg(long, default_value_t = 1.0)]
        informative: f64,
        /// Target directory (default: `<output root>/sbm-<seed>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one configuration over its repeats.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Depth sweep or grid search, as set by the config's `sweep` key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write priority features and learned weights/steps for a checkpoint.
    ExportPriority {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run config (default: `config.txt` beside the checkpoint).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (default: beside the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Ingest { dir, split_seed } => ingest(&dir, split_seed),
        Command::Synth {
            n,
            blocks,
            p_in,
            p_out,
            dim,
            seed,
            separation,
            labels_per_class,
            informative,
            out,
        } => {
            let spec = SbmSpec {
                n,
                blocks,
                p_in,
                p_out,
                dim,
                separation,
                labels_per_class,
                informative_fraction: informative,
                seed,
            };
            let dir = out.unwrap_or_else(|| output_root().join(format!("sbm-{seed}")));
            let bundle = generate_sbm(&spec)?;
            save_dataset(&bundle, &dir).with_context(|| format!("writing {}", dir.display()))?;
            println!("wrote {}", dir.display());
            println!("nodes\t{}", bundle.node_count());
            println!("edges\t{}", bundle.graph.edge_count());
            println!("edge_homophily\t{}", edge_homophily(&bundle.graph, &bundle.labels));
            println!("provenance\t{}", bundle.provenance);
            Ok(())
        }
        Command::Train { config } => {
            let cfg = load_config(&config)?;
            let (dir, summary) = run_experiment(&cfg, &output_root())?;
            println!("results in {}", dir.display());
            println!(
                "test accuracy {:.4} ± {:.4} over {} runs",
                summary.mean(),
                summary.std(),
                summary.runs.len()
            );
            Ok(())
        }
        Command::Sweep { config } => {
            let cfg = load_config(&config)?;
            let dir = run_sweep(&cfg, &output_root())?;
            println!("results in {}", dir.display());
            Ok(())
        }
        Command::ExportPriority { checkpoint, config, out } => export_priority(&checkpoint, config, out),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_file(path).with_context(|| format!("reading config {}", path.display()))
}

fn ingest(dir: &Path, split_seed: u64) -> Result<()> {
    let (bundle, stats) = load_dataset_with_stats(dir, split_seed)?;
    let degrees = bundle.graph.degrees();
    let max_degree = degrees.iter().copied().max().unwrap_or(0);
    let mean_degree = degrees.iter().sum::<usize>() as f64 / degrees.len().max(1) as f64;
    println!("name\t{}", bundle.name);
    println!("nodes\t{}", bundle.node_count());
    println!("edge_lines\t{}", stats.edge_lines);
    println!("undirected_edges\t{}", bundle.graph.edge_count());
    println!("features\t{}", bundle.features.dim());
    println!("classes\t{}", bundle.classes());
    println!("max_degree\t{max_degree}");
    println!("mean_degree\t{mean_degree}");
    println!("edge_homophily\t{}", edge_homophily(&bundle.graph, &bundle.labels));
    println!(
        "split\t{}/{}/{}",
        bundle.masks.train_size(),
        bundle.masks.val_indices().len(),
        bundle.masks.test_indices().len()
    );
    println!("connected\t{}", bundle.graph.is_connected());
    println!("provenance\t{}", bundle.provenance);
    Ok(())
}

fn export_priority(checkpoint: &Path, config: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let parent = checkpoint.parent().unwrap_or(Path::new("."));
    let config = config.unwrap_or_else(|| {
        // Depth-sweep checkpoints sit one level below the run's config.
        let here = parent.join("config.txt");
        if here.exists() {
            here
        } else {
            parent.parent().unwrap_or(parent).join("config.txt")
        }
    });
    if !config.exists() {
        bail!(
            "no run config found at {}; pass --config (outputs live under ${OUTPUT_ENV})",
            config.display()
        );
    }
    let cfg = load_config(&config)?;
    let params = read_checkpoint(File::open(checkpoint).with_context(|| format!("opening {}", checkpoint.display()))?)?;
    let bundle = cfg.load_bundle()?;
    let priority = build_priority(&bundle.graph, &bundle.features);
    let data = PreparedData::with_priority(&bundle, &priority);
    let mut train = cfg.train.clone();
    if let Some(steps) = depth_from_path(parent) {
        train.steps = steps;
    }
    let state = TrainState::from_params(train, &data, &params)?;
    let inference = state.infer(&data)?;

    let dir = out.unwrap_or_else(|| parent.to_path_buf());
    fs::create_dir_all(&dir)?;
    let stem = checkpoint.file_stem().map_or_else(|| "export".into(), |s| s.to_string_lossy().into_owned());
    let priority_path = dir.join("priority.tsv");
    let mut w = BufWriter::new(File::create(&priority_path)?);
    priority.write_tsv(&mut w)?;
    w.flush()?;
    let nodes_path = dir.join(format!("{stem}.export.tsv"));
    let mut w = BufWriter::new(File::create(&nodes_path)?);
    for (i, (wt, l)) in inference.weights.iter().zip(&inference.steps).enumerate() {
        writeln!(w, "{i}\t{wt}\t{l}")?;
    }
    w.flush()?;
    let dot_path = dir.join(format!("{stem}.export.dot"));
    write_dot(&bundle, &inference.weights, &inference.steps, BufWriter::new(File::create(&dot_path)?))?;
    println!("wrote {}", priority_path.display());
    println!("wrote {}", nodes_path.display());
    println!("wrote {}", dot_path.display());
    Ok(())
}

/// `depth-<L>` directories of a depth sweep override `steps`.
fn depth_from_path(dir: &Path) -> Option<usize> {
    dir.file_name()?.to_str()?.strip_prefix("depth-")?.parse().ok()
}
