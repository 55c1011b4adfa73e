//! Dataset directory format, loading and writing, stratified random splits
//! and a stochastic block model generator.
//!
//! A dataset directory holds:
//!
//! ```text
//! meta.json                 {name, num_nodes, num_features, num_classes[, row_normalize]}
//! edges.tsv                 one "u<TAB>v" pair per line, 0-based
//! features.csv              num_nodes rows of num_features comma-separated values
//! labels.csv                one class index per line, -1 for unknown
//! splits/<name>/train.txt   one node index per line (also val.txt, test.txt)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::GraphInputs;
use crate::tensor::{DenseMatrix, SparseMatrix};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub name: String,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Checks range, pairwise disjointness, a nonempty train set and that
    /// every train node is labelled.
    pub fn validate(&self, labels: &[Option<usize>]) -> Result<()> {
        let n = labels.len();
        if self.train.is_empty() {
            return Err(Error::Split(format!("split {}: empty train set", self.name)));
        }
        let mut owner = vec![None; n];
        for (part, idx) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in idx {
                if i >= n {
                    return Err(Error::Split(format!(
                        "split {}: {part} index {i} outside 0..{n}",
                        self.name
                    )));
                }
                if let Some(prev) = owner[i].replace(part) {
                    return Err(Error::Split(format!(
                        "split {}: node {i} appears in both {prev} and {part}",
                        self.name
                    )));
                }
            }
        }
        if let Some(&i) = self.train.iter().find(|&&i| labels[i].is_none()) {
            return Err(Error::Split(format!("split {}: train node {i} has no label", self.name)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Meta {
    name: String,
    num_nodes: usize,
    num_features: usize,
    num_classes: usize,
    #[serde(default)]
    row_normalize: bool,
}

/// Graph, input features, labels and named splits. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    graph: Graph,
    features: DenseMatrix,
    row_normalize: bool,
    labels: Vec<Option<usize>>,
    num_classes: usize,
    splits: BTreeMap<String, Split>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        graph: Graph,
        features: DenseMatrix,
        labels: Vec<Option<usize>>,
        num_classes: usize,
        splits: Vec<Split>,
    ) -> Result<Self> {
        let n = graph.num_nodes();
        if features.rows() != n {
            return Err(Error::Integrity(format!("features have {} rows for {n} nodes", features.rows())));
        }
        if labels.len() != n {
            return Err(Error::Integrity(format!("{} labels for {n} nodes", labels.len())));
        }
        if let Some((i, y)) = labels.iter().enumerate().find_map(|(i, y)| y.filter(|&y| y >= num_classes).map(|y| (i, y))) {
            return Err(Error::Integrity(format!("node {i} has label {y}, num_classes is {num_classes}")));
        }
        if !features.is_finite() {
            return Err(Error::Integrity("features contain non-finite values".into()));
        }
        let mut map = BTreeMap::new();
        for s in splits {
            s.validate(&labels)?;
            if map.insert(s.name.clone(), s).is_some() {
                return Err(Error::Integrity("duplicate split name".into()));
            }
        }
        Ok(Self {
            name: name.into(),
            graph,
            features,
            row_normalize: false,
            labels,
            num_classes,
            splits: map,
        })
    }

    /// Marks whether feature rows are scaled to unit L1 norm before use.
    pub fn with_row_normalize(mut self, on: bool) -> Self {
        self.row_normalize = on;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row_normalize(&self) -> bool {
        self.row_normalize
    }

    /// Features exactly as stored on disk.
    pub fn raw_features(&self) -> &DenseMatrix {
        &self.features
    }

    /// Features as fed to the model: row-normalized when the flag is set.
    /// Rows with zero norm are left at zero.
    pub fn features(&self) -> DenseMatrix {
        let mut m = self.features.clone();
        if self.row_normalize {
            for i in 0..m.rows() {
                let row = m.row_mut(i);
                let norm: f64 = row.iter().map(|v| v.abs()).sum();
                if norm > 0.0 {
                    row.iter_mut().for_each(|v| *v /= norm);
                }
            }
        }
        m
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn split(&self, name: &str) -> Result<&Split> {
        self.splits.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.splits.keys().map(String::as_str).collect();
            Error::Split(format!("dataset {} has no split {name:?} (available: {known:?})", self.name))
        })
    }

    pub fn splits(&self) -> impl Iterator<Item = &Split> {
        self.splits.values()
    }

    /// Adds or replaces a split after validating it.
    pub fn insert_split(&mut self, split: Split) -> Result<()> {
        split.validate(&self.labels)?;
        self.splits.insert(split.name.clone(), split);
        Ok(())
    }

    /// Sparse model inputs: features (normalized per the flag), `P̃`, and the
    /// attention pattern.
    pub fn graph_inputs(&self) -> GraphInputs {
        let mut features = SparseMatrix::from_dense(&self.features);
        if self.row_normalize {
            let offs = features.row_offsets().to_vec();
            let mut vals = features.values().to_vec();
            for i in 0..features.rows() {
                let seg = &mut vals[offs[i]..offs[i + 1]];
                let norm: f64 = seg.iter().map(|v| v.abs()).sum();
                if norm > 0.0 {
                    seg.iter_mut().for_each(|v| *v /= norm);
                }
            }
            features = features.with_values(vals).expect("same pattern");
        }
        GraphInputs {
            features: Arc::new(features),
            propagation: Arc::new(self.graph.normalized_adjacency()),
            attention_pattern: Arc::new(self.graph.self_loop_pattern()),
        }
    }
}

/// Overrides applied while loading.
#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Replaces the `row_normalize` flag from `meta.json` when set.
    pub row_normalize: Option<bool>,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    load_dataset_with(dir, LoadOptions::default())
}

pub fn load_dataset_with(dir: &Path, opts: LoadOptions) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let meta_path = dir.join("meta.json");
    let meta_text = read(&meta_path)?;
    let meta: Meta = serde_json::from_str(&meta_text).map_err(|e| Error::Parse {
        path: meta_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let n = meta.num_nodes;

    let edges_path = dir.join("edges.tsv");
    let mut edges = Vec::new();
    for (k, line) in read(&edges_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut field = |what: &str| -> Result<usize> {
            let tok = it.next().ok_or_else(|| parse_error(&edges_path, k, format!("missing {what} endpoint")))?;
            tok.parse().map_err(|_| parse_error(&edges_path, k, format!("bad node index {tok:?}")))
        };
        let (u, v) = (field("first")?, field("second")?);
        if it.next().is_some() {
            return Err(parse_error(&edges_path, k, "expected two columns".into()));
        }
        if u >= n || v >= n {
            return Err(Error::Integrity(format!(
                "{}:{}: edge ({u}, {v}) outside num_nodes = {n}",
                edges_path.display(),
                k + 1
            )));
        }
        edges.push((u, v));
    }
    let graph = Graph::build_adjacency(edges, n)?;

    let feat_path = dir.join("features.csv");
    let feat_text = read(&feat_path)?;
    let mut data = Vec::with_capacity(n * meta.num_features);
    let mut rows = 0;
    for (k, line) in feat_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| parse_error(&feat_path, k, format!("bad feature value {tok:?}")))?;
            data.push(v);
        }
        if data.len() - before != meta.num_features {
            return Err(Error::Integrity(format!(
                "{}:{}: {} values, meta num_features = {}",
                feat_path.display(),
                k + 1,
                data.len() - before,
                meta.num_features
            )));
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Integrity(format!(
            "{}: {rows} rows, meta num_nodes = {n}",
            feat_path.display()
        )));
    }
    let features = DenseMatrix::new(n, meta.num_features, data)?;

    let labels_path = dir.join("labels.csv");
    let mut labels = Vec::with_capacity(n);
    for (k, line) in read(&labels_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let y: i64 = line
            .trim()
            .parse()
            .map_err(|_| parse_error(&labels_path, k, format!("bad label {line:?}")))?;
        labels.push(match y {
            -1 => None,
            y if y >= 0 && (y as usize) < meta.num_classes => Some(y as usize),
            y => {
                return Err(Error::Integrity(format!(
                    "{}:{}: label {y} outside 0..{} (meta num_classes)",
                    labels_path.display(),
                    k + 1,
                    meta.num_classes
                )))
            }
        });
    }
    if labels.len() != n {
        return Err(Error::Integrity(format!(
            "{}: {} labels, meta num_nodes = {n}",
            labels_path.display(),
            labels.len()
        )));
    }

    let mut splits = Vec::new();
    let split_dir = dir.join("splits");
    if split_dir.is_dir() {
        let mut names: Vec<String> = fs::read_dir(&split_dir)
            .map_err(|e| Error::io(&split_dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        names.sort();
        for name in names {
            let d = split_dir.join(&name);
            splits.push(Split {
                train: read_indices(&d.join("train.txt"))?,
                val: read_indices(&d.join("val.txt"))?,
                test: read_indices(&d.join("test.txt"))?,
                name,
            });
        }
    }
    let ds = Dataset::new(meta.name, graph, features, labels, meta.num_classes, splits)?;
    Ok(ds.with_row_normalize(opts.row_normalize.unwrap_or(meta.row_normalize)))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, index: usize, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: index + 1,
        message,
    }
}

fn read_indices(path: &Path) -> Result<Vec<usize>> {
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| l.trim().parse().map_err(|_| parse_error(path, k, format!("bad index {l:?}"))))
        .collect()
}

/// Shortest decimal text that parses back to the same bits.
fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

/// Writes `ds` in the directory format; loading the result reproduces an
/// equal dataset.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    let write = |p: &Path, text: String| fs::write(p, text).map_err(|e| Error::io(p, e));
    mkdir(dir)?;
    let meta = Meta {
        name: ds.name.clone(),
        num_nodes: ds.num_nodes(),
        num_features: ds.num_features(),
        num_classes: ds.num_classes,
        row_normalize: ds.row_normalize,
    };
    write(
        &dir.join("meta.json"),
        serde_json::to_string_pretty(&meta).expect("plain struct") + "\n",
    )?;
    let mut edges = String::new();
    for (u, v) in ds.graph.edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    write(&dir.join("edges.tsv"), edges)?;
    let mut feats = String::with_capacity(ds.features.len() * 4);
    for i in 0..ds.num_nodes() {
        let row: Vec<String> = ds.features.row(i).iter().map(|&v| format_value(v)).collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    write(&dir.join("features.csv"), feats)?;
    let labels: String = ds
        .labels
        .iter()
        .map(|y| format!("{}\n", y.map_or(-1, |y| y as i64)))
        .collect();
    write(&dir.join("labels.csv"), labels)?;
    for s in ds.splits.values() {
        let d = dir.join("splits").join(&s.name);
        mkdir(&d)?;
        for (file, idx) in [("train.txt", &s.train), ("val.txt", &s.val), ("test.txt", &s.test)] {
            write(&d.join(file), idx.iter().map(|i| format!("{i}\n")).collect())?;
        }
    }
    Ok(())
}

/// Stratified random splits. Within each class, labelled nodes are shuffled
/// and cut by `ratios` (train, val, test) using largest-remainder rounding;
/// split `i` uses seed `seed + i` and is named `random-{i}`.
pub fn make_random_splits(ds: &Dataset, ratios: [f64; 3], seed: u64, count: usize) -> Result<Vec<Split>> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|&r| !(r > 0.0)) || total > 1.0 + 1e-12 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be positive and sum to at most 1")));
    }
    let mut by_class = vec![Vec::new(); ds.num_classes];
    for (i, y) in ds.labels.iter().enumerate() {
        if let Some(y) = y {
            by_class[*y].push(i);
        }
    }
    if let Some((q, members)) = by_class.iter().enumerate().find(|(_, m)| m.len() < 3) {
        return Err(Error::Split(format!(
            "class {q} has {} labelled nodes, at least 3 are needed",
            members.len()
        )));
    }
    let weights = [ratios[0], ratios[1], ratios[2], (1.0 - total).max(0.0)];
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let mut split = Split {
                name: format!("random-{i}"),
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            };
            for members in &by_class {
                let mut nodes = members.clone();
                nodes.shuffle(&mut rng);
                let sizes = largest_remainder(nodes.len(), &weights);
                let mut rest = nodes.as_slice();
                for (part, &size) in [&mut split.train, &mut split.val, &mut split.test].into_iter().zip(&sizes) {
                    part.extend_from_slice(&rest[..size]);
                    rest = &rest[size..];
                }
            }
            for part in [&mut split.train, &mut split.val, &mut split.test] {
                part.sort_unstable();
            }
            Ok(split)
        })
        .collect()
}

/// Apportions `m` items to buckets proportional to `weights` (which sum to
/// 1): floors first, then the largest fractional parts, ties to the lower
/// bucket.
fn largest_remainder(m: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * m as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let mut left = m.saturating_sub(sizes.iter().sum());
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (quotas[a] - sizes[a] as f64, quotas[b] - sizes[b] as f64);
        fb.partial_cmp(&fa).expect("finite").then(a.cmp(&b))
    });
    for &j in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[j] += 1;
        left -= 1;
    }
    sizes
}

/// Parameters of a stochastic block model dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SbmSpec {
    pub blocks: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of the Gaussian noise added to class prototypes.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        Self {
            blocks: vec![50, 50],
            p_in: 0.9,
            p_out: 0.05,
            feature_dim: 16,
            noise: 0.5,
            seed: 0,
        }
    }
}

/// Samples an SBM graph. Node features are the class prototype (ones on
/// the coordinates `j ≡ q mod k`, zeros elsewhere) plus N(0, σ²) noise;
/// labels are block indices. One stratified 48/32/20 split `random-0` is
/// attached.
pub fn generate_sbm(spec: &SbmSpec) -> Result<Dataset> {
    for (what, p) in [("p_in", spec.p_in), ("p_out", spec.p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("SBM {what} = {p} outside [0, 1]")));
        }
    }
    if spec.blocks.is_empty() || spec.feature_dim == 0 {
        return Err(Error::Config("SBM needs at least one block and one feature".into()));
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::Config(format!("SBM noise {} must be nonnegative", spec.noise)));
    }
    let k = spec.blocks.len();
    let labels: Vec<Option<usize>> = spec
        .blocks
        .iter()
        .enumerate()
        .flat_map(|(q, &size)| std::iter::repeat_n(Some(q), size))
        .collect();
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { spec.p_in } else { spec.p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let normal = Normal::new(0.0, spec.noise).expect("nonnegative sigma");
    let features = DenseMatrix::from_fn(n, spec.feature_dim, |i, j| {
        let proto = if j % k == labels[i].expect("all labelled") { 1.0 } else { 0.0 };
        proto + if spec.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 }
    });
    let graph = Graph::build_adjacency(edges, n)?;
    let mut ds = Dataset::new(format!("sbm-{}", spec.seed), graph, features, labels, k, Vec::new())?;
    if spec.blocks.iter().all(|&b| b >= 3) {
        for s in make_random_splits(&ds, [0.48, 0.32, 0.20], spec.seed, 1)? {
            ds.insert_split(s)?;
        }
    }
    Ok(ds)
}
