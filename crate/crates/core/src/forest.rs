//! Random decision forest for active-vs-passive trajectory classification,
//! plus the motion-magnitude threshold baseline.
//!
//! Trees split on Gini impurity over a random subset of features and grow
//! until pure (no depth limit by default). The forest probability is the mean
//! over trees of the active fraction at the reached leaf.
//!
//! # Model file layout
//!
//! All integers little-endian.
//!
//! ```text
//! magic            8 bytes   "NAOPFRST"
//! format_version   u32       FORMAT_VERSION
//! header_len       u32
//! header           JSON      {format_version, variant, encoding, h, d, n_trees, seed, config}
//! n_trees times:
//!   n_nodes        u32
//!   n_nodes times:
//!     tag          u8        0 = leaf, 1 = internal
//!     leaf:        active_fraction f64, count u32
//!     internal:    feature u32, threshold f64, left u32, right u32
//! end marker       8 bytes   "NAOPEND\0"
//! ```

use std::io::{Read, Write};

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::{DescriptorVariant, FeatureVector};
use crate::error::{Error, Result};
use crate::seed;
use crate::trajectories::Encoding;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"NAOPFRST";
const END_MARKER: &[u8; 8] = b"NAOPEND\0";

/// A feature vector with its training label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeature {
    pub features: FeatureVector,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    /// `None` means `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { n_trees: 25, max_depth: None, features_per_split: None, bootstrap: true, min_samples_leaf: 1, seed: 0 }
    }
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    fn resolved_mtry(&self, d: usize) -> Result<usize> {
        let mtry = self.features_per_split.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize);
        if mtry == 0 || mtry > d {
            return Err(Error::InvalidArgument(format!("features_per_split={mtry} must be in 1..={d}")));
        }
        Ok(mtry)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    Internal { feature: u32, threshold: f64, left: u32, right: u32 },
    Leaf { active_fraction: f64, count: u32 },
}

/// Nodes in a flat array; the root is node 0 and children always follow
/// their parent.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { active_fraction, .. } => return active_fraction,
                TreeNode::Internal { feature, threshold, left, right } => {
                    i = if x[feature as usize] <= threshold { left as usize } else { right as usize };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Internal { left, right, .. } => 1 + go(nodes, left as usize).max(go(nodes, right as usize)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub variant: DescriptorVariant,
    pub encoding: Encoding,
    pub d: usize,
    pub config: TrainConfig,
}

impl Forest {
    /// Number of boxes per described trajectory.
    pub fn h(&self) -> usize {
        self.encoding.n_boxes()
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    /// Mean leaf probability for a raw descriptor of length `d`.
    pub fn predict_values(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.d);
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        (sum / self.trees.len() as f64).clamp(0.0, 1.0)
    }
}

pub fn predict_proba(forest: &Forest, x: &FeatureVector) -> Result<f64> {
    if x.variant != forest.variant {
        return Err(Error::ModelMismatch(format!(
            "model uses the {} descriptor, input is {}",
            forest.variant, x.variant
        )));
    }
    if x.values.len() != forest.d || x.h != forest.h() {
        return Err(Error::ModelMismatch(format!(
            "model expects h={} (d={}), input has h={} (d={})",
            forest.h(),
            forest.d,
            x.h,
            x.values.len()
        )));
    }
    Ok(forest.predict_values(&x.values))
}

// ---------------------------------------------------------------------------
// Class balancing
// ---------------------------------------------------------------------------

/// Keeps every active sample and a uniform random subset of passive samples of
/// the same size. Relative order of the input is preserved.
pub fn balance<T: Clone>(samples: &[T], is_active: impl Fn(&T) -> bool, rng_seed: u64) -> Result<Vec<T>> {
    let active: Vec<usize> = (0..samples.len()).filter(|&i| is_active(&samples[i])).collect();
    let passive: Vec<usize> = (0..samples.len()).filter(|&i| !is_active(&samples[i])).collect();
    if active.is_empty() || passive.is_empty() {
        return Err(Error::InsufficientData(format!(
            "balancing needs both classes (active={}, passive={})",
            active.len(),
            passive.len()
        )));
    }
    if passive.len() <= active.len() {
        if passive.len() < active.len() {
            log::warn!(
                "fewer passive ({}) than active ({}) samples; actives are never subsampled",
                passive.len(),
                active.len()
            );
        }
        return Ok(samples.to_vec());
    }
    let mut rng = seed::rng(rng_seed);
    let mut keep = vec![false; samples.len()];
    for i in &active {
        keep[*i] = true;
    }
    for k in index::sample(&mut rng, passive.len(), active.len()) {
        keep[passive[k]] = true;
    }
    Ok(samples.iter().zip(keep).filter(|(_, k)| *k).map(|(s, _)| s.clone()).collect())
}

pub fn balance_features(samples: &[LabeledFeature], rng_seed: u64) -> Result<Vec<LabeledFeature>> {
    balance(samples, |s| s.active, rng_seed)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Row-major training matrix.
pub(crate) struct Matrix<'a> {
    pub data: &'a [f64],
    pub d: usize,
}

impl Matrix<'_> {
    #[inline]
    fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.d + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Size-weighted Gini impurity of the two children.
    pub impurity: f64,
}

fn gini(active: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = active as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

/// Best Gini split of `rows` on a single feature; `None` when no threshold
/// leaves at least `min_leaf` samples on both sides.
pub(crate) fn best_split_on_feature(
    x: &Matrix,
    y: &[bool],
    rows: &[usize],
    feature: usize,
    min_leaf: usize,
    scratch: &mut Vec<(f64, bool)>,
) -> Option<Split> {
    scratch.clear();
    scratch.extend(rows.iter().map(|&r| (x.at(r, feature), y[r])));
    scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = scratch.len();
    let total_active = scratch.iter().filter(|s| s.1).count();
    let mut left_active = 0;
    let mut best: Option<Split> = None;
    for i in 0..n - 1 {
        left_active += usize::from(scratch[i].1);
        let nl = i + 1;
        let nr = n - nl;
        if nl < min_leaf || nr < min_leaf {
            continue;
        }
        let (lo, hi) = (scratch[i].0, scratch[i + 1].0);
        if lo >= hi {
            continue;
        }
        let impurity =
            (nl as f64 * gini(left_active, nl) + nr as f64 * gini(total_active - left_active, nr)) / n as f64;
        if best.is_none_or(|b| impurity < b.impurity) {
            let mid = lo + (hi - lo) / 2.0;
            let threshold = if mid < hi { mid } else { lo };
            best = Some(Split { feature, threshold, impurity });
        }
    }
    best
}

/// Best split over `features`, visited in order; stops after `max_valid`
/// features that admit a split. Ties keep the earlier feature.
pub(crate) fn find_best_split(
    x: &Matrix,
    y: &[bool],
    rows: &[usize],
    features: &[usize],
    max_valid: usize,
    min_leaf: usize,
) -> Option<Split> {
    let mut scratch = Vec::with_capacity(rows.len());
    let mut best: Option<Split> = None;
    let mut valid = 0;
    for &f in features {
        if let Some(s) = best_split_on_feature(x, y, rows, f, min_leaf, &mut scratch) {
            valid += 1;
            if best.is_none_or(|b| s.impurity < b.impurity) {
                best = Some(s);
            }
            if valid == max_valid {
                break;
            }
        }
    }
    best
}

struct TreeBuilder<'a> {
    x: Matrix<'a>,
    y: &'a [bool],
    mtry: usize,
    config: &'a TrainConfig,
    rng: seed::Rng,
    nodes: Vec<TreeNode>,
    features: Vec<usize>,
}

impl TreeBuilder<'_> {
    fn leaf(&mut self, rows: &[usize]) -> u32 {
        let active = rows.iter().filter(|&&r| self.y[r]).count();
        self.nodes
            .push(TreeNode::Leaf { active_fraction: active as f64 / rows.len() as f64, count: rows.len() as u32 });
        (self.nodes.len() - 1) as u32
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> u32 {
        let active = rows.iter().filter(|&&r| self.y[r]).count();
        let pure = active == 0 || active == rows.len();
        let depth_capped = self.config.max_depth.is_some_and(|m| depth >= m);
        if pure || depth_capped || rows.len() < 2 * self.config.min_samples_leaf.max(1) {
            return self.leaf(&rows);
        }
        self.features.shuffle(&mut self.rng);
        let Some(split) =
            find_best_split(&self.x, self.y, &rows, &self.features, self.mtry, self.config.min_samples_leaf.max(1))
        else {
            return self.leaf(&rows);
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| self.x.at(r, split.feature) <= split.threshold);
        let me = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { active_fraction: 0.0, count: 0 });
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[me] =
            TreeNode::Internal { feature: split.feature as u32, threshold: split.threshold, left: l, right: r };
        me as u32
    }
}

fn grow_tree(x: &Matrix, y: &[bool], mtry: usize, config: &TrainConfig, tree_seed: u64) -> Tree {
    let mut rng = seed::rng(tree_seed);
    let n = y.len();
    let rows: Vec<usize> =
        if config.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
    let mut builder = TreeBuilder {
        x: Matrix { data: x.data, d: x.d },
        y,
        mtry,
        config,
        rng,
        nodes: Vec::new(),
        features: (0..x.d).collect(),
    };
    builder.grow(rows, 0);
    Tree { nodes: builder.nodes }
}

/// Trains a forest. Tree `i` draws all its randomness from a seed derived
/// from `(config.seed, i)`, so the result does not depend on thread count.
pub fn train(samples: &[LabeledFeature], encoding: Encoding, config: &TrainConfig) -> Result<Forest> {
    encoding.validate()?;
    let first = samples.first().ok_or_else(|| Error::InsufficientData("no training samples".into()))?;
    let variant = first.features.variant;
    let d = first.features.values.len();
    for s in samples {
        if s.features.variant != variant || s.features.values.len() != d {
            return Err(Error::InvalidArgument("training samples have inconsistent descriptors".into()));
        }
        if s.features.h != encoding.n_boxes() {
            return Err(Error::InvalidArgument(format!(
                "sample built from {} boxes, encoding {encoding} yields {}",
                s.features.h,
                encoding.n_boxes()
            )));
        }
    }
    let n_active = samples.iter().filter(|s| s.active).count();
    if n_active == 0 || n_active == samples.len() {
        return Err(Error::InsufficientData("training needs both active and passive samples".into()));
    }
    if config.n_trees == 0 {
        return Err(Error::InvalidArgument("n_trees must be >= 1".into()));
    }
    let mtry = config.resolved_mtry(d)?;
    let data: Vec<f64> = samples.iter().flat_map(|s| s.features.values.iter().copied()).collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite feature value".into()));
    }
    let y: Vec<bool> = samples.iter().map(|s| s.active).collect();
    let x = Matrix { data: &data, d };
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|i| grow_tree(&x, &y, mtry, config, seed::derive(config.seed, "tree", i as u64)))
        .collect();
    Ok(Forest { trees, variant, encoding, d, config: config.clone() })
}

// ---------------------------------------------------------------------------
// Motion-magnitude threshold baseline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    /// Magnitudes strictly above this are classified active.
    pub threshold: f64,
    /// Accuracy on the balanced training set.
    pub train_accuracy: f64,
}

impl ThresholdModel {
    pub fn is_active(&self, magnitude: f64) -> bool {
        magnitude > self.threshold
    }

    /// Monotone map of the magnitude to [0, 1] that crosses 0.5 exactly at
    /// the threshold.
    pub fn confidence(&self, magnitude: f64) -> f64 {
        if self.threshold > 0.0 {
            magnitude / (magnitude + self.threshold)
        } else if magnitude > self.threshold {
            1.0
        } else {
            0.0
        }
    }
}

/// Picks the midpoint between consecutive sorted magnitudes with the highest
/// accuracy on the class-balanced samples; ties go to the smaller threshold.
pub fn fit_threshold(samples: &[(f64, bool)], rng_seed: u64) -> Result<ThresholdModel> {
    if samples.iter().any(|s| !s.0.is_finite()) {
        return Err(Error::InvalidArgument("non-finite motion magnitude".into()));
    }
    let mut balanced = balance(samples, |s| s.1, rng_seed)?;
    balanced.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = balanced.len();
    let magnitudes: Vec<f64> = balanced.iter().map(|s| s.0).collect();
    // passive_prefix[k] = passive samples among the k smallest magnitudes
    let mut passive_prefix = vec![0usize; n + 1];
    for (k, s) in balanced.iter().enumerate() {
        passive_prefix[k + 1] = passive_prefix[k] + usize::from(!s.1);
    }
    let total_active = n - passive_prefix[n];
    let mut distinct = magnitudes.clone();
    distinct.dedup();
    if distinct.len() == 1 {
        // Inseparable: nothing lies strictly above the common value.
        return Ok(ThresholdModel { threshold: distinct[0], train_accuracy: passive_prefix[n] as f64 / n as f64 });
    }
    let mut best: Option<(f64, usize)> = None;
    for w in distinct.windows(2) {
        let thr = (w[0] + w[1]) / 2.0;
        let below = magnitudes.partition_point(|&m| m <= thr);
        let active_below = below - passive_prefix[below];
        let correct = passive_prefix[below] + (total_active - active_below);
        if best.is_none_or(|(_, c)| correct > c) {
            best = Some((thr, correct));
        }
    }
    let (threshold, correct) = best.expect("balanced set has at least two samples");
    Ok(ThresholdModel { threshold, train_accuracy: correct as f64 / n as f64 })
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    variant: DescriptorVariant,
    encoding: Encoding,
    h: usize,
    d: usize,
    n_trees: usize,
    seed: u64,
    config: TrainConfig,
}

pub fn save_model<W: Write>(forest: &Forest, mut w: W) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        variant: forest.variant,
        encoding: forest.encoding,
        h: forest.h(),
        d: forest.d,
        n_trees: forest.trees.len(),
        seed: forest.seed(),
        config: forest.config.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for tree in &forest.trees {
        buf.extend_from_slice(&(tree.nodes.len() as u32).to_le_bytes());
        for node in &tree.nodes {
            match *node {
                TreeNode::Leaf { active_fraction, count } => {
                    buf.push(0);
                    buf.extend_from_slice(&active_fraction.to_le_bytes());
                    buf.extend_from_slice(&count.to_le_bytes());
                }
                TreeNode::Internal { feature, threshold, left, right } => {
                    buf.push(1);
                    buf.extend_from_slice(&feature.to_le_bytes());
                    buf.extend_from_slice(&threshold.to_le_bytes());
                    buf.extend_from_slice(&left.to_le_bytes());
                    buf.extend_from_slice(&right.to_le_bytes());
                }
            }
        }
    }
    buf.extend_from_slice(END_MARKER);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn model_to_bytes(forest: &Forest) -> Vec<u8> {
    let mut buf = Vec::new();
    save_model(forest, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CorruptModel(format!("truncated at byte {} (needed {n} more)", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_model<R: Read>(mut r: R) -> Result<Forest> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    model_from_bytes(&bytes)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Forest> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::CorruptModel("not a forest model file".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::FormatVersion { found: version, expected: FORMAT_VERSION });
    }
    let header_len = c.u32()? as usize;
    let header: Header =
        serde_json::from_slice(c.take(header_len)?).map_err(|e| Error::CorruptModel(format!("bad header: {e}")))?;
    if header.format_version != version {
        return Err(Error::CorruptModel("header version disagrees with preamble".into()));
    }
    header.encoding.validate()?;
    if header.h != header.encoding.n_boxes() || header.d != header.variant.dimension(header.h) {
        return Err(Error::CorruptModel("header dimensions are inconsistent".into()));
    }
    if header.n_trees == 0 {
        return Err(Error::CorruptModel("model has no trees".into()));
    }
    let mut trees = Vec::with_capacity(header.n_trees);
    for t in 0..header.n_trees {
        let n_nodes = c.u32()? as usize;
        if n_nodes == 0 {
            return Err(Error::CorruptModel(format!("tree {t} is empty")));
        }
        let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
        for i in 0..n_nodes {
            let node = match c.u8()? {
                0 => {
                    let active_fraction = c.f64()?;
                    let count = c.u32()?;
                    if !(0.0..=1.0).contains(&active_fraction) {
                        return Err(Error::CorruptModel(format!(
                            "tree {t} node {i}: leaf value {active_fraction} outside [0, 1]"
                        )));
                    }
                    TreeNode::Leaf { active_fraction, count }
                }
                1 => {
                    let feature = c.u32()?;
                    let threshold = c.f64()?;
                    let left = c.u32()?;
                    let right = c.u32()?;
                    let child_ok = |k: u32| (k as usize) > i && (k as usize) < n_nodes;
                    if feature as usize >= header.d || !child_ok(left) || !child_ok(right) {
                        return Err(Error::CorruptModel(format!("tree {t} node {i} is malformed")));
                    }
                    TreeNode::Internal { feature, threshold, left, right }
                }
                tag => {
                    return Err(Error::CorruptModel(format!("tree {t} node {i}: bad tag {tag}")));
                }
            };
            nodes.push(node);
        }
        trees.push(Tree { nodes });
    }
    if c.take(8)? != END_MARKER {
        return Err(Error::CorruptModel("missing end marker".into()));
    }
    if c.pos != bytes.len() {
        return Err(Error::CorruptModel("trailing bytes after end marker".into()));
    }
    let mut config = header.config;
    config.seed = header.seed;
    Ok(Forest { trees, variant: header.variant, encoding: header.encoding, d: header.d, config })
}
