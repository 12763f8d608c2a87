//! Dataset bundles and their on-disk format.
//!
//! A dataset directory holds:
//!
//! * `edges.tsv`: one `src<TAB>dst` pair per line, `#` comments allowed
//! * `features.csv`: one comma-separated feature row per node
//! * `labels.tsv`: one integer class per line
//! * `masks.tsv` (optional): three 0/1 columns `train<TAB>val<TAB>test`
//! * `meta.txt` (optional): `key = value` lines; `name`, and `split` set to
//!   `planetoid` or `random` to pick the split regenerated when masks are
//!   missing, and `classes` to declare the class count

mod sbm;

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use sbm::{edge_homophily, generate_sbm, SbmSpec};

use crate::error::{Error, Result};
use crate::graph::{read_edge_list_counted, write_edge_list, Graph};
use crate::nodes::{Labels, NodeFeatures, SplitMasks};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub graph: Graph,
    pub features: NodeFeatures,
    pub labels: Labels,
    pub masks: SplitMasks,
    pub provenance: String,
}

impl DatasetBundle {
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.node_count();
        if self.features.node_count() != n || self.labels.len() != n || self.masks.len() != n {
            return Err(Error::InvalidInput(format!(
                "inconsistent node counts: graph {n}, features {}, labels {}, masks {}",
                self.features.node_count(),
                self.labels.len(),
                self.masks.len()
            )));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn classes(&self) -> usize {
        self.labels.classes()
    }

    /// Relabels every node `i` as `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> DatasetBundle {
        DatasetBundle {
            name: self.name.clone(),
            graph: self.graph.permute(perm),
            features: self.features.permute(perm),
            labels: self.labels.permute(perm),
            masks: self.masks.permute(perm),
            provenance: format!("{} (permuted)", self.provenance),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitProtocol {
    /// 20 training nodes per class, 500 validation, 1000 test.
    Planetoid,
    /// 60% / 20% / 20% per class.
    Random,
}

impl std::str::FromStr for SplitProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "planetoid" => Ok(SplitProtocol::Planetoid),
            "random" => Ok(SplitProtocol::Random),
            other => Err(Error::Config(format!("unknown split protocol `{other}`"))),
        }
    }
}

/// `per_class` training nodes per class, then `val` and `test` nodes from the
/// shuffled remainder.
pub fn planetoid_split(
    labels: &Labels,
    per_class: usize,
    val: usize,
    test: usize,
    seed: u64,
) -> Result<SplitMasks> {
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut taken = vec![0usize; labels.classes()];
    let mut train = vec![false; n];
    let mut rest = Vec::with_capacity(n);
    for &i in &order {
        let c = labels.as_slice()[i];
        if taken[c] < per_class {
            taken[c] += 1;
            train[i] = true;
        } else {
            rest.push(i);
        }
    }
    if rest.len() < val + test {
        return Err(Error::InvalidInput(format!(
            "{} nodes left after training picks, need {val} validation + {test} test",
            rest.len()
        )));
    }
    let mut valm = vec![false; n];
    let mut testm = vec![false; n];
    rest[..val].iter().for_each(|&i| valm[i] = true);
    rest[val..val + test].iter().for_each(|&i| testm[i] = true);
    SplitMasks::new(train, valm, testm)
}

/// Per-class random split with the given train and validation fractions;
/// the remainder is test.
pub fn random_split(labels: &Labels, train_frac: f64, val_frac: f64, seed: u64) -> Result<SplitMasks> {
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = vec![false; n];
    let mut val = vec![false; n];
    let mut test = vec![false; n];
    for c in 0..labels.classes() {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels.as_slice()[i] == c).collect();
        members.shuffle(&mut rng);
        let k = members.len();
        let n_train = ((k as f64 * train_frac).round() as usize).clamp(1, k);
        let n_val = ((k as f64 * val_frac).round() as usize).min(k - n_train);
        for (r, &i) in members.iter().enumerate() {
            if r < n_train {
                train[i] = true;
            } else if r < n_train + n_val {
                val[i] = true;
            } else {
                test[i] = true;
            }
        }
    }
    SplitMasks::new(train, val, test)
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    let mut out = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((idx + 1, trimmed.to_string()));
    }
    Ok(out)
}

fn read_features(path: &Path) -> Result<NodeFeatures> {
    let lines = read_lines(path)?;
    let mut dim = None;
    let mut data = Vec::new();
    for (lineno, line) in &lines {
        let row: Vec<f32> = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f32>()
                    .map_err(|_| Error::input(path, *lineno, format!("invalid number `{}`", s.trim())))
            })
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(Error::input(
                    path,
                    *lineno,
                    format!("ragged row: {} values, expected {d}", row.len()),
                ))
            }
            _ => {}
        }
        if let Some(bad) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(path, *lineno, format!("non-finite value in column {bad}")));
        }
        data.extend(row);
    }
    let dim = dim.ok_or_else(|| Error::input(path, 1, "no feature rows"))?;
    NodeFeatures::new(lines.len(), dim, data)
}

fn read_labels(path: &Path, n: usize, declared_classes: Option<usize>) -> Result<Labels> {
    let lines = read_lines(path)?;
    if lines.len() != n {
        let at = lines.last().map_or(1, |l| l.0);
        return Err(Error::input(path, at, format!("{} labels for {n} nodes", lines.len())));
    }
    let y = lines
        .iter()
        .map(|(lineno, s)| {
            s.parse::<usize>()
                .map_err(|_| Error::input(path, *lineno, format!("invalid label `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(c) = declared_classes {
        if let Some(pos) = y.iter().position(|&v| v >= c) {
            return Err(Error::input(
                path,
                lines[pos].0,
                format!("label {} out of range [0, {c})", y[pos]),
            ));
        }
    }
    let classes = declared_classes.unwrap_or_else(|| y.iter().copied().max().map_or(0, |m| m + 1));
    let mut seen = vec![false; classes];
    y.iter().for_each(|&c| seen[c] = true);
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::input(path, 1, format!("class {missing} has no nodes")));
    }
    Labels::new(y, classes)
}

fn read_masks(path: &Path, n: usize) -> Result<SplitMasks> {
    let lines = read_lines(path)?;
    if lines.len() != n {
        let at = lines.last().map_or(1, |l| l.0);
        return Err(Error::input(path, at, format!("{} mask rows for {n} nodes", lines.len())));
    }
    let (mut train, mut val, mut test) = (vec![false; n], vec![false; n], vec![false; n]);
    for (i, (lineno, s)) in lines.iter().enumerate() {
        let cols: Vec<&str> = s.split_whitespace().collect();
        let flags: Vec<bool> = cols
            .iter()
            .map(|c| match *c {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::input(path, *lineno, format!("mask value `{other}` is not 0/1"))),
            })
            .collect::<Result<_>>()?;
        if flags.len() != 3 {
            return Err(Error::input(path, *lineno, "expected three columns train/val/test"));
        }
        if flags.iter().filter(|&&f| f).count() > 1 {
            return Err(Error::input(path, *lineno, "node assigned to more than one split"));
        }
        (train[i], val[i], test[i]) = (flags[0], flags[1], flags[2]);
    }
    SplitMasks::new(train, val, test).map_err(|e| Error::input(path, 1, e.to_string()))
}

pub fn read_meta(path: &Path) -> Result<Vec<(String, String)>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_lines(path)?
        .into_iter()
        .map(|(lineno, line)| {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::input(path, lineno, "expected `key = value`"))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

/// Summary of what [`load_dataset`] read, for the `ingest` report.
#[derive(Clone, Debug)]
pub struct IngestStats {
    pub edge_lines: usize,
    pub masks_generated: bool,
}

pub fn load_dataset(dir: &Path, split_seed: u64) -> Result<DatasetBundle> {
    Ok(load_dataset_with_stats(dir, split_seed)?.0)
}

pub fn load_dataset_with_stats(dir: &Path, split_seed: u64) -> Result<(DatasetBundle, IngestStats)> {
    let meta = read_meta(&dir.join("meta.txt"))?;
    let meta_get = |key: &str| meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone());

    let features = read_features(&dir.join("features.csv"))?;
    let n = features.node_count();
    let declared = match meta_get("classes") {
        Some(c) => Some(
            c.parse::<usize>()
                .map_err(|_| Error::Config(format!("meta.txt: invalid class count `{c}`")))?,
        ),
        None => None,
    };
    let labels = read_labels(&dir.join("labels.tsv"), n, declared)?;
    let (graph, edge_lines) = read_edge_list_counted(&dir.join("edges.tsv"), n)?;

    let mask_path = dir.join("masks.tsv");
    let name = meta_get("name").unwrap_or_else(|| {
        dir.file_name()
            .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned())
    });
    let (masks, provenance, generated) = if mask_path.exists() {
        (read_masks(&mask_path, n)?, format!("loaded from {}", dir.display()), false)
    } else {
        let protocol = match meta_get("split") {
            Some(s) => s.parse()?,
            None if n >= 20 * labels.classes() + 1500 => SplitProtocol::Planetoid,
            None => SplitProtocol::Random,
        };
        let masks = match protocol {
            SplitProtocol::Planetoid => planetoid_split(&labels, 20, 500, 1000, split_seed)?,
            SplitProtocol::Random => random_split(&labels, 0.6, 0.2, split_seed)?,
        };
        let note = format!(
            "loaded from {}; masks.tsv absent, regenerated {protocol:?} split with seed {split_seed} \
             (not the historical fixed split)",
            dir.display()
        );
        (masks, note, true)
    };
    let bundle = DatasetBundle {
        name,
        graph,
        features,
        labels,
        masks,
        provenance,
    };
    bundle.validate()?;
    Ok((
        bundle,
        IngestStats {
            edge_lines,
            masks_generated: generated,
        },
    ))
}

pub fn save_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut edges = BufWriter::new(std::fs::File::create(dir.join("edges.tsv"))?);
    write_edge_list(&bundle.graph, &mut edges)?;
    edges.flush()?;

    let mut f = BufWriter::new(std::fs::File::create(dir.join("features.csv"))?);
    for i in 0..bundle.node_count() {
        let row: Vec<String> = bundle.features.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;

    let mut l = BufWriter::new(std::fs::File::create(dir.join("labels.tsv"))?);
    for &y in bundle.labels.as_slice() {
        writeln!(l, "{y}")?;
    }
    l.flush()?;

    let mut m = BufWriter::new(std::fs::File::create(dir.join("masks.tsv"))?);
    let masks = &bundle.masks;
    for i in 0..bundle.node_count() {
        writeln!(
            m,
            "{}\t{}\t{}",
            masks.train[i] as u8, masks.val[i] as u8, masks.test[i] as u8
        )?;
    }
    m.flush()?;

    std::fs::write(
        dir.join("meta.txt"),
        format!("name = {}\nclasses = {}\n", bundle.name, bundle.classes()),
    )?;
    Ok(())
}
