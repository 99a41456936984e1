//! Graphs, comparison tables, parameter vectors and null hypotheses, plus
//! the plain-text formats they are read from.
//!
//! Node and subject ids are 0-based everywhere in this crate.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest supported number of nodes or subjects.
pub const MIN_NODES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Undirected graphs with edge probability `mu(beta_i + beta_j)`.
    Beta,
    /// Paired comparisons where `i` beats `j` with probability `mu(beta_i - beta_j)`.
    #[serde(rename = "bt")]
    BradleyTerry,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Beta => f.write_str("beta"),
            ModelKind::BradleyTerry => f.write_str("bt"),
        }
    }
}

/// Anything with an integer out-degree per node.
pub trait Degrees {
    fn degrees(&self) -> Vec<u32>;
}

/// Simple undirected graph stored as a packed upper-triangular bit set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedGraph {
    n: usize,
    bits: Vec<u64>,
    degrees: Vec<u32>,
}

#[inline]
fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl UndirectedGraph {
    /// Graph on `n` nodes without edges.
    pub fn empty(n: usize) -> Result<Self> {
        if n < MIN_NODES {
            return Err(Error::invalid(format!("need at least {MIN_NODES} nodes, got {n}")));
        }
        let pairs = n * (n - 1) / 2;
        Ok(Self { n, bits: vec![0; pairs.div_ceil(64)], degrees: vec![0; n] })
    }

    /// Builds a graph from an edge iterator; duplicate edges collapse.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut g = Self::empty(n)?;
        for (i, j) in edges {
            if i == j {
                return Err(Error::invalid(format!("self-loop at node {i}")));
            }
            if i >= n || j >= n {
                return Err(Error::invalid(format!("edge ({i}, {j}) out of range for n = {n}")));
            }
            g.insert(i, j);
        }
        Ok(g)
    }

    /// Builds a graph by querying `present(i, j)` for every pair `i < j`.
    pub fn from_fn(n: usize, mut present: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut g = Self::empty(n)?;
        for i in 0..n {
            for j in i + 1..n {
                if present(i, j) {
                    g.insert(i, j);
                }
            }
        }
        Ok(g)
    }

    /// Adds edge `{i, j}`; returns false when it was already present.
    pub(crate) fn insert(&mut self, i: usize, j: usize) -> bool {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let k = pair_index(self.n, a, b);
        let mask = 1u64 << (k % 64);
        if self.bits[k / 64] & mask != 0 {
            return false;
        }
        self.bits[k / 64] |= mask;
        self.degrees[a] += 1;
        self.degrees[b] += 1;
        true
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        if i == j {
            return false;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let k = pair_index(self.n, a, b);
        self.bits[k / 64] & (1u64 << (k % 64)) != 0
    }

    /// Cached degree sequence.
    pub fn degree_slice(&self) -> &[u32] {
        &self.degrees
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Edges `(i, j)` with `i < j` in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| (i + 1..self.n).map(move |j| (i, j))).filter(|&(i, j)| self.has_edge(i, j))
    }

    /// Edge-list text that [`load_edge_list`] reads back unchanged.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n={}\n", self.n);
        for (i, j) in self.edges() {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }
}

impl Degrees for UndirectedGraph {
    fn degrees(&self) -> Vec<u32> {
        self.degrees.clone()
    }
}

/// Win counts `a_ij` (times `i` beat `j`) for `n` subjects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonTable {
    n: usize,
    wins: Vec<u32>,
}

impl ComparisonTable {
    pub fn new(n: usize) -> Result<Self> {
        if n < MIN_NODES {
            return Err(Error::invalid(format!("need at least {MIN_NODES} subjects, got {n}")));
        }
        Ok(Self { n, wins: vec![0; n * n] })
    }

    /// Table from a dense row-major win matrix.
    pub fn from_wins(n: usize, wins: Vec<u32>) -> Result<Self> {
        if wins.len() != n * n {
            return Err(Error::invalid(format!("win matrix has {} entries, expected {}", wins.len(), n * n)));
        }
        let mut t = Self::new(n)?;
        for i in 0..n {
            if wins[i * n + i] != 0 {
                return Err(Error::invalid(format!("subject {i} has wins against itself")));
            }
        }
        t.wins = wins;
        Ok(t)
    }

    /// Records `w` further wins of `i` over `j`.
    pub fn add_wins(&mut self, i: usize, j: usize, w: u32) -> Result<()> {
        if i == j {
            return Err(Error::invalid(format!("subject {i} compared with itself")));
        }
        if i >= self.n || j >= self.n {
            return Err(Error::invalid(format!("pair ({i}, {j}) out of range for n = {}", self.n)));
        }
        self.wins[i * self.n + j] += w;
        Ok(())
    }

    pub(crate) fn set_pair(&mut self, i: usize, j: usize, a_ij: u32, a_ji: u32) {
        self.wins[i * self.n + j] = a_ij;
        self.wins[j * self.n + i] = a_ji;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn wins(&self, i: usize, j: usize) -> u32 {
        self.wins[i * self.n + j]
    }

    /// Number of comparisons between `i` and `j`.
    pub fn total(&self, i: usize, j: usize) -> u32 {
        if i == j {
            0
        } else {
            self.wins(i, j) + self.wins(j, i)
        }
    }

    /// Symmetric row-major matrix of pair totals `k_ij`.
    pub fn totals(&self) -> Vec<u32> {
        let n = self.n;
        let mut k = vec![0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = self.total(i, j);
            }
        }
        k
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("n={}\n", self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let w = self.wins(i, j);
                if w > 0 {
                    let _ = writeln!(out, "{i},{j},{w}");
                }
            }
        }
        out
    }
}

impl Degrees for ComparisonTable {
    fn degrees(&self) -> Vec<u32> {
        (0..self.n).map(|i| self.wins[i * self.n..(i + 1) * self.n].iter().sum()).collect()
    }
}

/// Free function form of [`Degrees::degrees`].
pub fn degrees<D: Degrees + ?Sized>(data: &D) -> Vec<u32> {
    data.degrees()
}

/// Parameter vector tagged with its model. For Bradley–Terry the first
/// entry is the reference parameter and is always exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub model: ModelKind,
    pub beta: Vec<f64>,
}

impl ParameterVector {
    pub fn new(model: ModelKind, beta: Vec<f64>) -> Result<Self> {
        if let Some(k) = beta.iter().position(|b| !b.is_finite()) {
            return Err(Error::invalid(format!("beta[{k}] is not finite")));
        }
        if model == ModelKind::BradleyTerry && beta.first().copied() != Some(0.0) {
            return Err(Error::invalid("Bradley-Terry parameters need beta[0] = 0"));
        }
        Ok(Self { model, beta })
    }

    pub fn beta_model(beta: Vec<f64>) -> Result<Self> {
        Self::new(ModelKind::Beta, beta)
    }

    pub fn bradley_terry(beta: Vec<f64>) -> Result<Self> {
        Self::new(ModelKind::BradleyTerry, beta)
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }
}

/// Null hypothesis on a leading block of parameters.
///
/// β-model: `Specified` fixes `beta[0..r]` to `values` and `Homogeneous`
/// ties `beta[0..r]`. Bradley–Terry: indices start at 1 because `beta[0]`
/// is pinned, so `Specified` fixes `beta[1..r]` (`r - 1` values) and
/// `Homogeneous` ties `beta[1..r]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NullHypothesis {
    Specified { r: usize, values: Vec<f64> },
    Homogeneous { r: usize },
}

impl NullHypothesis {
    pub fn r(&self) -> usize {
        match self {
            NullHypothesis::Specified { r, .. } | NullHypothesis::Homogeneous { r } => *r,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NullHypothesis::Specified { .. } => "specified",
            NullHypothesis::Homogeneous { .. } => "homogeneous",
        }
    }

    /// Checks the index conventions for `model` on `n` nodes.
    pub fn validate(&self, model: ModelKind, n: usize) -> Result<()> {
        let r = self.r();
        let min_r = match model {
            ModelKind::Beta => 1,
            ModelKind::BradleyTerry => 2,
        };
        if r < min_r || r > n {
            return Err(Error::invalid(format!("r = {r} outside [{min_r}, {n}] for the {model} model")));
        }
        if let NullHypothesis::Specified { values, .. } = self {
            let expected = match model {
                ModelKind::Beta => r,
                ModelKind::BradleyTerry => r - 1,
            };
            if values.len() != expected {
                return Err(Error::invalid(format!(
                    "specified null with r = {r} needs {expected} values, got {}",
                    values.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("specified null values must be finite"));
            }
        }
        Ok(())
    }

    /// Whether `beta` lies in the null parameter space (to `tol`).
    pub fn contains(&self, model: ModelKind, beta: &[f64], tol: f64) -> bool {
        let start = match model {
            ModelKind::Beta => 0,
            ModelKind::BradleyTerry => 1,
        };
        let r = self.r();
        if r > beta.len() {
            return false;
        }
        match self {
            NullHypothesis::Specified { values, .. } => {
                beta[start..r].iter().zip(values).all(|(b, v)| (b - v).abs() <= tol)
            }
            NullHypothesis::Homogeneous { .. } => beta[start..r].iter().all(|b| (b - beta[start]).abs() <= tol),
        }
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(k, l)| (k + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn tokens(line: &str) -> Vec<&str> {
    line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()).collect()
}

fn parse_header(line: &str) -> Option<&str> {
    let rest = line.strip_prefix("n")?.trim_start();
    Some(rest.strip_prefix('=')?.trim())
}

fn parse_id(tok: &str, line: usize) -> Result<usize> {
    tok.parse::<usize>().map_err(|_| Error::parse(line, format!("`{tok}` is not a node id")))
}

/// Reads an edge list: one `i j` or `i,j` pair per line, optionally headed
/// by `n=<count>`. Duplicate edges collapse.
pub fn load_edge_list(text: &str) -> Result<UndirectedGraph> {
    let mut declared = None;
    let mut edges = Vec::new();
    let mut max_id = None::<usize>;
    for (pos, (line_no, line)) in content_lines(text).enumerate() {
        if let Some(count) = parse_header(line) {
            if pos != 0 {
                return Err(Error::parse(line_no, "node count header must come first"));
            }
            declared = Some(count.parse::<usize>().map_err(|_| Error::parse(line_no, "bad node count"))?);
            continue;
        }
        let toks = tokens(line);
        if toks.len() != 2 {
            return Err(Error::parse(line_no, format!("expected 2 node ids, found {}", toks.len())));
        }
        let (i, j) = (parse_id(toks[0], line_no)?, parse_id(toks[1], line_no)?);
        if i == j {
            return Err(Error::parse(line_no, format!("self-loop at node {i}")));
        }
        if let Some(n) = declared {
            if i.max(j) >= n {
                return Err(Error::parse(line_no, format!("node id {} not below n = {n}", i.max(j))));
            }
        }
        max_id = Some(max_id.map_or(i.max(j), |m| m.max(i).max(j)));
        edges.push((i, j));
    }
    let n = match (declared, max_id) {
        (Some(n), _) => n,
        (None, Some(m)) => m + 1,
        (None, None) => return Err(Error::parse(1, "empty edge list")),
    };
    UndirectedGraph::from_edges(n, edges)
}

/// Reads comparison records `i,j,w` (`i` beat `j` `w` times); repeated
/// pairs accumulate.
pub fn load_comparisons(text: &str) -> Result<ComparisonTable> {
    let mut declared = None;
    let mut records = Vec::new();
    let mut max_id = None::<usize>;
    for (pos, (line_no, line)) in content_lines(text).enumerate() {
        if let Some(count) = parse_header(line) {
            if pos != 0 {
                return Err(Error::parse(line_no, "subject count header must come first"));
            }
            declared = Some(count.parse::<usize>().map_err(|_| Error::parse(line_no, "bad subject count"))?);
            continue;
        }
        let toks = tokens(line);
        if toks.len() != 3 {
            return Err(Error::parse(line_no, format!("expected `i,j,w`, found {} fields", toks.len())));
        }
        let (i, j) = (parse_id(toks[0], line_no)?, parse_id(toks[1], line_no)?);
        let w: i64 =
            toks[2].parse().map_err(|_| Error::parse(line_no, format!("win count `{}` is not an integer", toks[2])))?;
        if w < 0 {
            return Err(Error::parse(line_no, "negative win count"));
        }
        if i == j {
            return Err(Error::parse(line_no, format!("subject {i} compared with itself")));
        }
        if let Some(n) = declared {
            if i.max(j) >= n {
                return Err(Error::parse(line_no, format!("subject id {} not below n = {n}", i.max(j))));
            }
        }
        let w = u32::try_from(w).map_err(|_| Error::parse(line_no, "win count too large"))?;
        max_id = Some(max_id.map_or(i.max(j), |m| m.max(i).max(j)));
        records.push((i, j, w));
    }
    let n = match (declared, max_id) {
        (Some(n), _) => n,
        (None, Some(m)) => m + 1,
        (None, None) => return Err(Error::parse(1, "empty comparison file")),
    };
    let mut table = ComparisonTable::new(n)?;
    for (i, j, w) in records {
        table.add_wins(i, j, w)?;
    }
    Ok(table)
}

/// Reads a whitespace/comma separated list of reals.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (line_no, line) in content_lines(text) {
        for tok in tokens(line) {
            let v: f64 = tok.parse().map_err(|_| Error::parse(line_no, format!("`{tok}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::parse(line_no, "non-finite value"));
            }
            out.push(v);
        }
    }
    Ok(out)
}
