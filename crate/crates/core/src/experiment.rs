//! Config-file driven runs: repeated seeds, depth sweeps, grid searches and
//! their file exports.
//!
//! A config is flat `key = value` text with `#` comments. Trainer keys are
//! those of [`TrainConfig::set`]; the rest are listed on
//! [`ExperimentConfig`]. Every run writes into `<root>/<name>/`, where the
//! root comes from `PPRO_OUT` (default `runs`).

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::autodiff::write_checkpoint;
use crate::data::{generate_sbm, load_dataset, random_split, DatasetBundle, SbmSpec};
use crate::error::{Error, Result};
use crate::par::map_jobs;
use crate::priority::{build_priority, PriorityFeatures};
use crate::trainer::baseline::fit_fixed_depth;
use crate::trainer::grid::{grid_search, GridSpace};
use crate::trainer::{PreparedData, TrainConfig, TrainReport, TrainState};

pub const OUTPUT_ENV: &str = "PPRO_OUT";
pub const DEFAULT_DEPTHS: [usize; 6] = [2, 4, 8, 16, 32, 64];
/// Written next to partial results when a run fails.
pub const FAILURE_MARKER: &str = "FAILED";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::input(origin, idx + 1, "expected `key = value`"))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Dir(PathBuf),
    Sbm(SbmSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Backbone with controllers.
    Ppro,
    /// Backbone alone at depth `steps`.
    Fixed,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SweepKind {
    Depth(Vec<usize>),
    Grid { space: GridSpace, budget: Option<usize> },
}

/// Experiment keys besides the trainer's:
///
/// * `name`: output subdirectory
/// * `dataset`: a dataset directory or `sbm`, with `sbm_n`, `sbm_blocks`,
///   `sbm_p_in`, `sbm_p_out`, `sbm_dim`, `sbm_separation`,
///   `sbm_labels_per_class`, `sbm_informative_fraction`, `sbm_seed`
/// * `split_seed`: seed of a regenerated split
/// * `resplit`: draw a fresh random 60/20/20 split per repeat
/// * `repeats`: runs with seeds `seed, seed+1, ...`
/// * `model`: `ppro` or `fixed`
/// * `sweep`: `depth` (with `depths = 2,4,...`) or `grid` (with one
///   `grid.<key> = v1,v2,...` line per axis and an optional `grid_budget`)
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSource,
    pub split_seed: u64,
    pub resplit: bool,
    pub repeats: usize,
    pub model: ModelKind,
    pub train: TrainConfig,
    pub sweep: SweepKind,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "run".into(),
            dataset: DatasetSource::Sbm(SbmSpec::default()),
            split_seed: 0,
            resplit: false,
            repeats: 1,
            model: ModelKind::Ppro,
            train: TrainConfig::default(),
            sweep: SweepKind::Depth(DEFAULT_DEPTHS.to_vec()),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

impl ExperimentConfig {
    /// Relative dataset paths are resolved against `base`.
    pub fn parse(text: &str, origin: &Path, base: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut sbm = SbmSpec::default();
        let mut dataset: Option<String> = None;
        let mut sweep = "depth".to_string();
        let mut depths = DEFAULT_DEPTHS.to_vec();
        let mut space = GridSpace::new();
        let mut budget = None;
        for (key, value) in parse_key_values(text, origin)? {
            let v = value.as_str();
            match key.as_str() {
                "name" => cfg.name = value.clone(),
                "dataset" => dataset = Some(value.clone()),
                "split_seed" => cfg.split_seed = num(&key, v)?,
                "resplit" => cfg.resplit = matches!(v, "1" | "true" | "yes" | "on"),
                "repeats" => cfg.repeats = num(&key, v)?,
                "model" => {
                    cfg.model = match v {
                        "ppro" => ModelKind::Ppro,
                        "fixed" => ModelKind::Fixed,
                        _ => return Err(Error::Config(format!("unknown model `{v}`"))),
                    }
                }
                "sweep" => sweep = value.clone(),
                "depths" => depths = list(&key, v)?,
                "grid_budget" => budget = Some(num(&key, v)?),
                "sbm_n" => sbm.n = num(&key, v)?,
                "sbm_blocks" => sbm.blocks = num(&key, v)?,
                "sbm_p_in" => sbm.p_in = num(&key, v)?,
                "sbm_p_out" => sbm.p_out = num(&key, v)?,
                "sbm_dim" => sbm.dim = num(&key, v)?,
                "sbm_separation" => sbm.separation = num(&key, v)?,
                "sbm_labels_per_class" => sbm.labels_per_class = num(&key, v)?,
                "sbm_informative_fraction" => sbm.informative_fraction = num(&key, v)?,
                "sbm_seed" => sbm.seed = num(&key, v)?,
                k if k.starts_with("grid.") => {
                    let axis = &k["grid.".len()..];
                    let values: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
                    if values.iter().any(String::is_empty) {
                        return Err(Error::Config(format!("empty value in `{k}`")));
                    }
                    space.push(axis, values);
                }
                k => {
                    if !cfg.train.set(k, v)? {
                        return Err(Error::Config(format!("unknown key `{k}`")));
                    }
                }
            }
        }
        cfg.dataset = match dataset.as_deref() {
            None | Some("sbm") => DatasetSource::Sbm(sbm),
            Some(path) => {
                let p = PathBuf::from(path);
                DatasetSource::Dir(if p.is_relative() { base.join(p) } else { p })
            }
        };
        cfg.sweep = match sweep.as_str() {
            "depth" => SweepKind::Depth(depths),
            "grid" => SweepKind::Grid { space, budget },
            other => return Err(Error::Config(format!("unknown sweep `{other}`"))),
        };
        if cfg.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, path, base)
    }

    /// Resolved configuration in the same format, readable by [`Self::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name = {}", self.name);
        match &self.dataset {
            DatasetSource::Dir(p) => {
                let _ = writeln!(s, "dataset = {}", p.display());
            }
            DatasetSource::Sbm(spec) => {
                let _ = writeln!(s, "dataset = sbm");
                let _ = writeln!(s, "sbm_n = {}", spec.n);
                let _ = writeln!(s, "sbm_blocks = {}", spec.blocks);
                let _ = writeln!(s, "sbm_p_in = {}", spec.p_in);
                let _ = writeln!(s, "sbm_p_out = {}", spec.p_out);
                let _ = writeln!(s, "sbm_dim = {}", spec.dim);
                let _ = writeln!(s, "sbm_separation = {}", spec.separation);
                let _ = writeln!(s, "sbm_labels_per_class = {}", spec.labels_per_class);
                let _ = writeln!(s, "sbm_informative_fraction = {}", spec.informative_fraction);
                let _ = writeln!(s, "sbm_seed = {}", spec.seed);
            }
        }
        let _ = writeln!(s, "split_seed = {}", self.split_seed);
        let _ = writeln!(s, "resplit = {}", self.resplit);
        let _ = writeln!(s, "repeats = {}", self.repeats);
        let model = match self.model {
            ModelKind::Ppro => "ppro",
            ModelKind::Fixed => "fixed",
        };
        let _ = writeln!(s, "model = {model}");
        match &self.sweep {
            SweepKind::Depth(d) => {
                let d: Vec<String> = d.iter().map(ToString::to_string).collect();
                let _ = writeln!(s, "sweep = depth\ndepths = {}", d.join(","));
            }
            SweepKind::Grid { space, budget } => {
                let _ = writeln!(s, "sweep = grid");
                for (k, v) in space.axes() {
                    let _ = writeln!(s, "grid.{k} = {}", v.join(","));
                }
                if let Some(b) = budget {
                    let _ = writeln!(s, "grid_budget = {b}");
                }
            }
        }
        for (k, v) in self.train.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn load_bundle(&self) -> Result<DatasetBundle> {
        match &self.dataset {
            DatasetSource::Dir(dir) => load_dataset(dir, self.split_seed),
            DatasetSource::Sbm(spec) => generate_sbm(spec),
        }
    }
}

/// Final accuracies of one seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub runs: Vec<SeedResult>,
}

impl Summary {
    pub fn mean(&self) -> f64 {
        self.runs.iter().map(|r| r.test_acc).sum::<f64>() / self.runs.len() as f64
    }

    /// Sample standard deviation of the test accuracies (0 for one run).
    pub fn std(&self) -> f64 {
        let n = self.runs.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        let ss: f64 = self.runs.iter().map(|r| (r.test_acc - m).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    }

    pub fn mean_val(&self) -> f64 {
        self.runs.iter().map(|r| r.val_acc).sum::<f64>() / self.runs.len() as f64
    }

    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "runs = {}", self.runs.len())?;
        writeln!(out, "test_acc_mean = {}", self.mean())?;
        writeln!(out, "test_acc_std = {}", self.std())?;
        writeln!(out, "val_acc_mean = {}", self.mean_val())?;
        for r in &self.runs {
            writeln!(out, "seed {} val_acc = {} test_acc = {}", r.seed, r.val_acc, r.test_acc)?;
        }
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_failure(dir: &Path, errors: &[String]) -> Result<()> {
    fs::write(dir.join(FAILURE_MARKER), errors.join("\n") + "\n")?;
    Ok(())
}

/// DOT graph with per-node label, weight and step attributes.
pub fn write_dot(bundle: &DatasetBundle, weights: &[f64], steps: &[usize], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "graph \"{}\" {{", bundle.name.replace('"', "'"))?;
    let y = bundle.labels.as_slice();
    for i in 0..bundle.node_count() {
        writeln!(
            out,
            "  {i} [class={}, weight={}, step={}];",
            y[i], weights[i], steps[i]
        )?;
    }
    for (u, v) in bundle.graph.edges() {
        writeln!(out, "  {u} -- {v};")?;
    }
    writeln!(out, "}}")
}

/// One seed's training: returns the report and, for PPro, the final state.
fn train_seed(cfg: &ExperimentConfig, train: &TrainConfig, data: &PreparedData) -> Result<(TrainReport, Option<TrainState>)> {
    match cfg.model {
        ModelKind::Ppro => {
            let mut state = TrainState::new(train.clone(), data)?;
            let report = state.fit(data)?;
            Ok((report, Some(state)))
        }
        ModelKind::Fixed => Ok((fit_fixed_depth(train, data)?, None)),
    }
}

fn seed_data(cfg: &ExperimentConfig, bundle: &DatasetBundle, priority: &PriorityFeatures, seed: u64) -> Result<PreparedData> {
    if cfg.resplit {
        let mut b = bundle.clone();
        b.masks = random_split(&b.labels, 0.6, 0.2, seed)?;
        Ok(PreparedData::with_priority(&b, priority))
    } else {
        Ok(PreparedData::with_priority(bundle, priority))
    }
}

/// Runs `repeats` seeds of `cfg.train` into `dir`. Per-seed files are
/// written as seeds finish; any failure leaves a [`FAILURE_MARKER`] beside
/// whatever completed.
pub fn run_repeats(cfg: &ExperimentConfig, train: &TrainConfig, bundle: &DatasetBundle, priority: &PriorityFeatures, dir: &Path) -> Result<Summary> {
    fs::create_dir_all(dir)?;
    let seeds: Vec<u64> = (0..cfg.repeats as u64).map(|r| train.seed + r).collect();
    let first = seeds[0];
    let results = map_jobs(seeds, |seed| -> Result<SeedResult> {
        let mut t = train.clone();
        t.seed = seed;
        let data = seed_data(cfg, bundle, priority, seed)?;
        let (report, state) = train_seed(cfg, &t, &data)?;
        let stem = dir.join(format!("seed-{seed}"));
        report.write_csv(create(&stem.with_extension("csv"))?)?;
        report.write_summary(create(&stem.with_extension("summary.txt"))?)?;
        report.write_nodes_tsv(create(&stem.with_extension("nodes.tsv"))?)?;
        if let Some(state) = state {
            write_checkpoint(create(&stem.with_extension("ckpt"))?, &state.named_params())?;
        }
        if seed == first {
            write_dot(bundle, &report.weights, &report.steps, create(&dir.join("graph.dot"))?)?;
        }
        Ok(SeedResult {
            seed,
            val_acc: report.best_val_acc,
            test_acc: report.test_acc,
        })
    });
    let mut runs = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(s) => runs.push(s),
            Err(e) => errors.push(e.to_string()),
        }
    }
    let summary = Summary { runs };
    if !summary.runs.is_empty() {
        summary.write(create(&dir.join("summary.txt"))?)?;
    }
    if !errors.is_empty() {
        write_failure(dir, &errors)?;
        return Err(Error::Config(format!("{} of {} runs failed: {}", errors.len(), cfg.repeats, errors[0])));
    }
    Ok(summary)
}

fn prepare_dir(cfg: &ExperimentConfig, root: &Path) -> Result<(PathBuf, DatasetBundle, PriorityFeatures)> {
    let dir = root.join(&cfg.name);
    fs::create_dir_all(&dir)?;
    let _ = fs::remove_file(dir.join(FAILURE_MARKER));
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    let bundle = cfg.load_bundle()?;
    let priority = build_priority(&bundle.graph, &bundle.features);
    priority.write_tsv(create(&dir.join("priority.tsv"))?)?;
    fs::write(dir.join("provenance.txt"), format!("{}\n", bundle.provenance))?;
    Ok((dir, bundle, priority))
}

/// `train`: repeated seeds of one configuration.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path) -> Result<(PathBuf, Summary)> {
    let (dir, bundle, priority) = prepare_dir(cfg, root)?;
    let summary = run_repeats(cfg, &cfg.train, &bundle, &priority, &dir)?;
    Ok((dir, summary))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthRow {
    pub depth: usize,
    pub summary: Summary,
}

/// `sweep` with `sweep = depth`: one [`run_repeats`] per depth, collected in
/// `depth_sweep.csv`.
pub fn run_depth_sweep(cfg: &ExperimentConfig, depths: &[usize], root: &Path) -> Result<(PathBuf, Vec<DepthRow>)> {
    let (dir, bundle, priority) = prepare_dir(cfg, root)?;
    let mut rows = Vec::new();
    let mut failure = None;
    for &depth in depths {
        let mut train = cfg.train.clone();
        train.steps = depth;
        match run_repeats(cfg, &train, &bundle, &priority, &dir.join(format!("depth-{depth}"))) {
            Ok(summary) => rows.push(DepthRow { depth, summary }),
            Err(e) => {
                failure = Some(format!("depth {depth}: {e}"));
                break;
            }
        }
    }
    let mut out = create(&dir.join("depth_sweep.csv"))?;
    writeln!(out, "depth,runs,test_acc_mean,test_acc_std,val_acc_mean")?;
    for r in &rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.depth,
            r.summary.runs.len(),
            r.summary.mean(),
            r.summary.std(),
            r.summary.mean_val()
        )?;
    }
    out.flush()?;
    if let Some(msg) = failure {
        write_failure(&dir, std::slice::from_ref(&msg))?;
        return Err(Error::Config(msg));
    }
    Ok((dir, rows))
}

/// `sweep` with `sweep = grid`: selects on validation accuracy of the first
/// seed, writes `leaderboard.tsv`, then reruns the winner for all repeats in
/// `best/`.
pub fn run_grid(cfg: &ExperimentConfig, space: &GridSpace, budget: Option<usize>, root: &Path) -> Result<(PathBuf, Summary)> {
    if space.is_empty() {
        return Err(Error::Config("grid sweep needs at least one `grid.<key>` axis".into()));
    }
    let (dir, bundle, priority) = prepare_dir(cfg, root)?;
    let data = seed_data(cfg, &bundle, &priority, cfg.train.seed)?;
    let outcome = grid_search(&cfg.train, space, &data, budget, cfg.train.seed)?;
    let mut out = create(&dir.join("leaderboard.tsv"))?;
    let keys: Vec<&str> = space.axes().iter().map(|(k, _)| k.as_str()).collect();
    writeln!(out, "rank\tindex\t{}\tval_acc\ttest_acc", keys.join("\t"))?;
    for (rank, e) in outcome.leaderboard.iter().enumerate() {
        let values: Vec<&str> = e.assignment.iter().map(|(_, v)| v.as_str()).collect();
        writeln!(out, "{}\t{}\t{}\t{}\t{}", rank + 1, e.index, values.join("\t"), e.val_acc, e.test_acc)?;
    }
    out.flush()?;
    let summary = run_repeats(cfg, &outcome.best, &bundle, &priority, &dir.join("best"))?;
    Ok((dir, summary))
}

/// Dispatches on `cfg.sweep`.
pub fn run_sweep(cfg: &ExperimentConfig, root: &Path) -> Result<PathBuf> {
    match &cfg.sweep {
        SweepKind::Depth(depths) => Ok(run_depth_sweep(cfg, depths, root)?.0),
        SweepKind::Grid { space, budget } => Ok(run_grid(cfg, space, *budget, root)?.0),
    }
}
