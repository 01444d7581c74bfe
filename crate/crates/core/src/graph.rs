//! Node-attributed undirected graphs, their text formats, synthetic
//! generators and train/validation/test splits.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};
use crate::sparse::CsrMatrix;

/// Standard deviation of the Gaussian noise added to generated features.
pub const SBM_FEATURE_NOISE: f64 = 0.1;

/// An immutable undirected graph with dense node features and the
/// symmetrically normalized adjacency `Â = D̃^{-1/2}(A + I)D̃^{-1/2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: DenseMatrix,
    labels: Option<Vec<usize>>,
    adjacency_norm: CsrMatrix,
}

impl Graph {
    /// Validates and normalizes a graph. Edges are undirected: `(u, v)` and
    /// `(v, u)` collapse to one edge; self-loops are dropped.
    pub fn new(
        features: DenseMatrix,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = features.rows();
        if !features.is_finite() {
            return Err(Error::Validation("features contain NaN or infinite values".into()));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Validation(format!("{} labels for {n} nodes", l.len())));
            }
        }
        let mut set = BTreeSet::new();
        let mut self_loops = 0usize;
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Validation(format!(
                    "edge ({u}, {v}) references a node outside 0..{n}"
                )));
            }
            if u == v {
                self_loops += 1;
                continue;
            }
            set.insert((u.min(v), u.max(v)));
        }
        if self_loops > 0 {
            log::warn!("dropped {self_loops} self-loop edge(s); self-loops come only from A + I");
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let adjacency_norm = normalized_adjacency(n, &edges);
        Ok(Self {
            n_nodes: n,
            edges,
            features,
            labels,
            adjacency_norm,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Undirected edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn adjacency_norm(&self) -> &CsrMatrix {
        &self.adjacency_norm
    }

    pub fn n_classes(&self) -> usize {
        self.labels.as_ref().and_then(|l| l.iter().max()).map_or(0, |m| m + 1)
    }

    /// Node degrees in `A` (without the self-loop).
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Writes `features.txt`, `edges.txt` and, when present, `labels.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("features.txt");
        write_lines(&path, |w| {
            writeln!(w, "{} {}", self.n_nodes, self.features.cols())?;
            for row in self.features.row_iter() {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
            Ok(())
        })?;
        write_lines(&dir.join("edges.txt"), |w| {
            for (u, v) in &self.edges {
                writeln!(w, "{u} {v}")?;
            }
            Ok(())
        })?;
        if let Some(labels) = &self.labels {
            write_lines(&dir.join("labels.txt"), |w| {
                for l in labels {
                    writeln!(w, "{l}")?;
                }
                Ok(())
            })?;
        }
        Ok(())
    }
}

fn write_lines(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// `Â[i][j] = 1/√(d̃_i·d̃_j)` wherever `A + I` has a one.
fn normalized_adjacency(n: usize, edges: &[(usize, usize)]) -> CsrMatrix {
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(u, v) in edges {
        rows[u].push((v, 0.0));
        rows[v].push((u, 0.0));
    }
    let deg: Vec<f64> = rows.iter().map(|r| (r.len() + 1) as f64).collect();
    for (i, row) in rows.iter_mut().enumerate() {
        row.push((i, 0.0));
        for (j, v) in row.iter_mut() {
            *v = 1.0 / (deg[i] * deg[*j]).sqrt();
        }
    }
    CsrMatrix::from_rows(n, rows).expect("edges are validated and deduplicated")
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, Result<String>)> + '_> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(move |(i, l)| (i + 1, l.map_err(|e| Error::io(path, e)))))
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, tok: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    tok.parse()
        .map_err(|e| Error::parse(path, line, format!("cannot parse {tok:?}: {e}")))
}

fn read_features(path: &Path) -> Result<DenseMatrix> {
    let mut lines = open_lines(path)?;
    let (n, d) = loop {
        let Some((ln, line)) = lines.next() else {
            return Err(Error::parse(path, 1, "missing \"N d\" header"));
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(Error::parse(path, ln, "header must be \"N d\""));
        }
        break (
            parse_field::<usize>(path, ln, toks[0])?,
            parse_field::<usize>(path, ln, toks[1])?,
        );
    };
    let mut data = Vec::with_capacity(n * d);
    let mut rows = 0usize;
    for (ln, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows += 1;
        if rows > n {
            return Err(Error::Validation(format!(
                "{}: header declares {n} rows but line {ln} is row {rows}",
                path.display()
            )));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(parse_field::<f64>(path, ln, tok)?);
        }
        if data.len() - before != d {
            return Err(Error::Validation(format!(
                "{}: line {ln} has {} values, header declares d = {d}",
                path.display(),
                data.len() - before
            )));
        }
    }
    if rows != n {
        return Err(Error::Validation(format!(
            "{}: header declares N = {n} but the body has {rows} rows",
            path.display()
        )));
    }
    DenseMatrix::new(n, d, data)
}

fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (ln, line) in open_lines(path)? {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(Error::parse(path, ln, "expected \"u v\""));
        }
        edges.push((parse_field(path, ln, toks[0])?, parse_field(path, ln, toks[1])?));
    }
    let unique: BTreeSet<(usize, usize)> = edges.iter().copied().collect();
    let one_way = unique
        .iter()
        .filter(|&&(u, v)| u != v && !unique.contains(&(v, u)))
        .count();
    if one_way > 0 && one_way < unique.len() {
        log::warn!(
            "{}: {one_way} edge(s) listed in one direction only; treating all edges as undirected",
            path.display()
        );
    }
    Ok(edges)
}

/// Reads one non-negative integer per line.
pub fn read_index_file(path: &Path) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (ln, line) in open_lines(path)? {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(parse_field(path, ln, t)?);
    }
    Ok(out)
}

pub fn write_index_file(path: &Path, idx: &[usize]) -> Result<()> {
    write_lines(path, |w| {
        for i in idx {
            writeln!(w, "{i}")?;
        }
        Ok(())
    })
}

/// Loads a graph from the features / edges / labels text files.
pub fn load_graph(features_path: &Path, edges_path: &Path, labels_path: Option<&Path>) -> Result<Graph> {
    let features = read_features(features_path)?;
    let edges = read_edges(edges_path)?;
    let labels = labels_path.map(read_index_file).transpose()?;
    if let (Some(l), Some(p)) = (&labels, labels_path) {
        if l.len() != features.rows() {
            return Err(Error::Validation(format!(
                "{}: {} labels for N = {}",
                p.display(),
                l.len(),
                features.rows()
            )));
        }
    }
    Graph::new(features, edges, labels)
}

/// Loads `features.txt`, `edges.txt` and (if present) `labels.txt` from `dir`.
pub fn load_graph_dir(dir: &Path) -> Result<Graph> {
    let labels = dir.join("labels.txt");
    load_graph(
        &dir.join("features.txt"),
        &dir.join("edges.txt"),
        labels.exists().then_some(labels.as_path()),
    )
}

/// Samples a stochastic block model with `n_blocks` blocks of `n_per_block`
/// nodes. Node `i` belongs to block `i / n_per_block`, which is also its
/// label. Features are a one-hot indicator at column `block % feature_dim`
/// plus Gaussian noise of standard deviation [`SBM_FEATURE_NOISE`].
pub fn generate_sbm(
    n_per_block: usize,
    n_blocks: usize,
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    seed: u64,
) -> Result<Graph> {
    generate_sbm_with_noise(n_per_block, n_blocks, p_in, p_out, feature_dim, SBM_FEATURE_NOISE, seed)
}

/// [`generate_sbm`] with a chosen feature noise level.
pub fn generate_sbm_with_noise(
    n_per_block: usize,
    n_blocks: usize,
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    feature_noise: f64,
    seed: u64,
) -> Result<Graph> {
    if !(feature_noise > 0.0 && feature_noise.is_finite()) {
        return Err(Error::Validation(format!(
            "feature noise must be positive, got {feature_noise}"
        )));
    }
    if n_per_block == 0 || n_blocks == 0 || feature_dim == 0 {
        return Err(Error::Validation(
            "block size, block count and feature dimension must be at least 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) {
        return Err(Error::Validation(format!(
            "edge probabilities must lie in [0, 1], got p_in = {p_in}, p_out = {p_out}"
        )));
    }
    if p_in < p_out {
        return Err(Error::Validation(format!(
            "p_in = {p_in} < p_out = {p_out}; only assortative block models are supported"
        )));
    }
    let n = n_per_block * n_blocks;
    let block = |i: usize| i / n_per_block;
    let mut rng = substream(seed, Purpose::Generator, 0);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if block(u) == block(v) { p_in } else { p_out };
            // One draw per pair regardless of p, so the stream stays aligned.
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let noise = Normal::new(0.0, feature_noise).expect("positive standard deviation");
    let mut feat_rng = substream(seed, Purpose::Generator, 1);
    let mut features = DenseMatrix::zeros(n, feature_dim);
    for i in 0..n {
        let hot = block(i) % feature_dim;
        for (j, x) in features.row_mut(i).iter_mut().enumerate() {
            *x = f64::from(u8::from(j == hot)) + noise.sample(&mut feat_rng);
        }
    }
    let labels = (0..n).map(block).collect();
    Graph::new(features, edges, Some(labels))
}

/// Disjoint train / validation / test node index lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl SplitSpec {
    pub fn new(train_idx: Vec<usize>, val_idx: Vec<usize>, test_idx: Vec<usize>, n_nodes: usize) -> Result<Self> {
        let split = Self {
            train_idx,
            val_idx,
            test_idx,
        };
        split.validate(n_nodes)?;
        Ok(split)
    }

    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        let mut seen = vec![false; n_nodes];
        for (name, idx) in [
            ("train", &self.train_idx),
            ("val", &self.val_idx),
            ("test", &self.test_idx),
        ] {
            if idx.is_empty() {
                return Err(Error::Validation(format!("{name} split is empty")));
            }
            for &i in idx {
                if i >= n_nodes {
                    return Err(Error::Validation(format!(
                        "{name} split index {i} is outside 0..{n_nodes}"
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Validation(format!("node {i} appears twice across splits")));
                }
            }
        }
        Ok(())
    }

    /// Reads `train.txt`, `val.txt` and `test.txt` from `dir`.
    pub fn load(dir: &Path, n_nodes: usize) -> Result<Self> {
        Self::new(
            read_index_file(&dir.join("train.txt"))?,
            read_index_file(&dir.join("val.txt"))?,
            read_index_file(&dir.join("test.txt"))?,
            n_nodes,
        )
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_index_file(&dir.join("train.txt"), &self.train_idx)?;
        write_index_file(&dir.join("val.txt"), &self.val_idx)?;
        write_index_file(&dir.join("test.txt"), &self.test_idx)
    }
}

/// Seeded stratified split with `ratios = (train, val, test)`.
///
/// Nodes of each class are shuffled and placed at evenly spaced fractional
/// positions `(r + 0.5) / class_size`; merging all classes by position gives
/// an ordering whose every prefix matches the global class histogram to
/// within one node per class. The ordering is then cut into the three splits.
pub fn make_split(graph: &Graph, ratios: (f64, f64, f64), seed: u64) -> Result<SplitSpec> {
    let labels = graph
        .labels()
        .ok_or_else(|| Error::Validation("graph has no labels to stratify by".into()))?;
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || a + b + c > 1.0 + 1e-9 {
        return Err(Error::Validation(format!(
            "split ratios ({a}, {b}, {c}) must be in [0, 1] and sum to at most 1"
        )));
    }
    let n = labels.len();
    let n_train = (a * n as f64).round() as usize;
    let n_val = (b * n as f64).round() as usize;
    let n_test = ((c * n as f64).round() as usize).min(n.saturating_sub(n_train + n_val));
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Validation(format!(
            "ratios ({a}, {b}, {c}) leave an empty split for {n} nodes"
        )));
    }
    let n_classes = graph.n_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (cls, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < 3 {
            return Err(Error::Validation(format!(
                "class {cls} has {} node(s); stratifying into three splits needs at least 3",
                members.len()
            )));
        }
    }
    let mut rng = substream(seed, Purpose::Split, 0);
    let mut order: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    for (cls, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let m = members.len() as f64;
        for (r, &node) in members.iter().enumerate() {
            order.push(((r as f64 + 0.5) / m, cls, node));
        }
    }
    order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let nodes: Vec<usize> = order.into_iter().map(|(_, _, i)| i).collect();
    Ok(SplitSpec {
        train_idx: nodes[..n_train].to_vec(),
        val_idx: nodes[n_train..n_train + n_val].to_vec(),
        test_idx: nodes[n_train + n_val..n_train + n_val + n_test].to_vec(),
    })
}
