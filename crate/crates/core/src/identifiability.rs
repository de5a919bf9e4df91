//! Exact topology recovery and verifiability on noiseless data.
//!
//! A column `R e_m` of the resistance matrix groups the buses into the level
//! sets of `m`: buses share a level set exactly when their entries are equal,
//! and the levels are ordered by increasing value, each step being the
//! resistance of the line between consecutive ancestors of `m`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{bail, Result};
use crate::feeder::{Feeder, Line};
use crate::graph::{build_index, TreeGraph};
use crate::math;
use crate::nodeset::NodeSet;

/// Default relative tolerance for treating two resistance values as equal.
pub const DEFAULT_TOL: f64 = 1e-9;

// Gaps between `tol` and this multiple of it are treated as ambiguous.
const AMBIGUITY_FACTOR: f64 = 1e3;

/// Level sets of one bus read from its resistance column.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPartition {
    pub node: usize,
    /// `N_m^k` for `k = 0..=d_m`; the substation is in group 0.
    pub groups: Vec<NodeSet>,
    /// Common column value of each group, increasing, starting at 0.
    pub values: Vec<f64>,
}

impl LevelPartition {
    pub fn depth(&self) -> usize {
        self.groups.len() - 1
    }

    /// Level of `node` in this partition.
    pub fn level_of(&self, node: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(node))
    }
}

/// Groups `col = R e_m` (length `N`, bus `i` at position `i-1`) by value.
pub fn level_sets_from_column(col: &DVector<f64>, m: usize, tol: f64) -> Result<LevelPartition> {
    let n = col.len();
    if m == 0 || m > n {
        bail!(Argument, "bus {m} outside 1..={n}");
    }
    let value = |x: usize| if x == 0 { 0.0 } else { col[x - 1] };
    let scale = (0..=n).map(|x| math::abs(value(x))).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        bail!(Reconstruction, "column of bus {m} is zero or not finite");
    }
    let eps = tol * scale;
    let mut order: Vec<usize> = (0..=n).collect();
    order.sort_by(|&a, &b| value(a).total_cmp(&value(b)).then(a.cmp(&b)));

    let mut groups: Vec<NodeSet> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for &x in &order {
        let v = value(x);
        let gap = v - prev;
        if gap <= eps {
            groups.last_mut().expect("first value opens a group").insert(x);
        } else {
            if gap <= AMBIGUITY_FACTOR * eps {
                bail!(Quantization, "bus {m}: values {prev} and {v} are neither equal nor separated");
            }
            groups.push(NodeSet::singleton(n + 1, x));
            values.push(v);
        }
        prev = v;
    }
    if !groups[0].contains(0) || math::abs(values[0]) > eps {
        bail!(Reconstruction, "bus {m}: the substation does not hold the smallest value");
    }
    values[0] = 0.0;
    if !groups.last().expect("nonempty").contains(m) {
        bail!(Reconstruction, "bus {m} does not hold the largest value of its own column");
    }
    Ok(LevelPartition { node: m, groups, values })
}

/// Line recovered from probing data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveredLine {
    pub parent: usize,
    pub child: usize,
    pub r: f64,
}

#[derive(Debug, Clone)]
pub struct PartialRecovery {
    pub partitions: Vec<LevelPartition>,
    /// Lines whose both endpoints were pinned down, sorted by child.
    pub lines: Vec<RecoveredLine>,
    /// `(probed bus, depth)` pairs whose ancestor could not be singled out.
    pub unresolved: Vec<(usize, usize)>,
}

impl PartialRecovery {
    pub fn parent_of(&self, child: usize) -> Option<&RecoveredLine> {
        self.lines.iter().find(|l| l.child == child)
    }
}

/// Recovers every line that the probed columns determine.
///
/// `columns` is `N × C` with column `j` equal to `R e_{probed[j]}`. For each
/// probed `w` and depth `k`, the depth-`k` ancestor of `w` is either a probed
/// bus of depth `k` below it, or the unique common member of the depth-`k`
/// level sets of the probed buses below it.
pub fn recover_partial(columns: &DMatrix<f64>, probed: &[usize], tol: f64) -> Result<PartialRecovery> {
    let n = columns.nrows();
    if columns.ncols() != probed.len() {
        bail!(Dimension, "{} columns for {} probed buses", columns.ncols(), probed.len());
    }
    let partitions = probed
        .iter()
        .enumerate()
        .map(|(j, &m)| level_sets_from_column(&columns.column(j).into_owned(), m, tol))
        .collect::<Result<Vec<_>>>()?;

    let mut lines: Vec<Option<RecoveredLine>> = vec![None; n + 1];
    let mut unresolved = Vec::new();
    for p in &partitions {
        let d = p.depth();
        let mut ancestors: Vec<Option<usize>> = vec![None; d + 1];
        ancestors[0] = Some(0);
        ancestors[d] = Some(p.node);
        for (k, slot) in ancestors.iter_mut().enumerate().take(d).skip(1) {
            // Probed buses in the subtree of the depth-k ancestor.
            let below: Vec<&LevelPartition> = partitions
                .iter()
                .filter(|q| p.groups[k..].iter().any(|g| g.contains(q.node)))
                .collect();
            if let Some(q) = below.iter().find(|q| q.depth() == k) {
                *slot = Some(q.node);
                continue;
            }
            let mut common = below[0].groups[k].clone();
            for q in &below[1..] {
                common = common.intersection(&q.groups[k]);
            }
            match common.single() {
                Some(a) => *slot = Some(a),
                None => unresolved.push((p.node, k)),
            }
        }
        for k in 0..d {
            let (Some(parent), Some(child)) = (ancestors[k], ancestors[k + 1]) else {
                continue;
            };
            let line = RecoveredLine {
                parent,
                child,
                r: p.values[k + 1] - p.values[k],
            };
            match lines[child] {
                None => lines[child] = Some(line),
                Some(prev) => {
                    let scale = prev.r.abs().max(line.r.abs());
                    if prev.parent != parent || math::abs(prev.r - line.r) > tol * scale.max(p.values[d]) {
                        bail!(
                            Reconstruction,
                            "bus {child} is fed from {} by one column and from {parent} by another",
                            prev.parent
                        );
                    }
                }
            }
        }
    }
    Ok(PartialRecovery {
        partitions,
        lines: lines.into_iter().flatten().collect(),
        unresolved,
    })
}

#[derive(Debug, Clone)]
pub struct RecoveredTree {
    pub graph: TreeGraph,
    /// Resistance of the line feeding each bus (0 for the substation).
    pub resistance: Vec<f64>,
}

impl RecoveredTree {
    pub fn to_feeder(&self) -> Result<Feeder> {
        let lines: Vec<Line> = self
            .graph
            .edges()
            .map(|(p, c)| Line::new(p, c, self.resistance[c], self.resistance[c]))
            .collect();
        let status = vec![true; lines.len()];
        Feeder::new(self.graph.node_count(), lines, status, vec![])
    }
}

/// Rebuilds the whole tree from the resistance columns of all its leaves.
pub fn recover_tree(leaf_columns: &DMatrix<f64>, leaves: &[usize], tol: f64) -> Result<RecoveredTree> {
    let n = leaf_columns.nrows();
    let rec = recover_partial(leaf_columns, leaves, tol)?;
    for p in &rec.partitions {
        if p.groups.last().and_then(NodeSet::single) != Some(p.node) {
            bail!(
                Reconstruction,
                "bus {} has descendants; every probed bus must be a leaf",
                p.node
            );
        }
    }
    if !rec.unresolved.is_empty() || rec.lines.len() != n {
        bail!(Reconstruction, "leaf columns leave part of the tree undetermined");
    }
    let mut parent = vec![None; n + 1];
    let mut resistance = vec![0.0; n + 1];
    for l in &rec.lines {
        if !(l.r > 0.0) {
            bail!(Reconstruction, "non-positive resistance on line ({}, {})", l.parent, l.child);
        }
        parent[l.child] = Some(l.parent);
        resistance[l.child] = l.r;
    }
    let graph = match TreeGraph::from_parents(parent) {
        Ok(g) => g,
        Err(e) => bail!(Reconstruction, "recovered parents do not form a tree: {e}"),
    };
    let tree = RecoveredTree { graph, resistance };
    // The recovered tree must reproduce the data it came from.
    let r = tree.to_feeder()?.resistance_matrix();
    let sel: Vec<usize> = leaves.iter().map(|l| l - 1).collect();
    let rebuilt = r * math::selection(n, &sel);
    let scale = math::max_abs(leaf_columns);
    if math::max_abs(&(rebuilt - leaf_columns)) > tol * scale * n as f64 {
        bail!(Reconstruction, "no tree reproduces the given columns");
    }
    Ok(tree)
}

/// Whether every pair of candidate lines differs in resistance by more than
/// `tol` relative to the larger one.
pub fn check_distinct_resistances(feeder: &Feeder, tol: f64) -> bool {
    let mut r: Vec<f64> = feeder.lines().iter().map(|l| l.r).collect();
    r.sort_by(f64::total_cmp);
    r.windows(2).all(|w| w[1] - w[0] > tol * w[1].abs().max(w[0].abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifiabilityReport {
    /// `confusable[i][j]`: probing cannot tell configuration `j` from `i`.
    pub confusable: Vec<Vec<bool>>,
    pub distinct_resistances: bool,
}

impl VerifiabilityReport {
    /// `None` when resistances are not distinct and no certificate is given.
    pub fn verifiable(&self) -> Option<bool> {
        if !self.distinct_resistances {
            return None;
        }
        Some(
            self.confusable
                .iter()
                .enumerate()
                .all(|(i, row)| row.iter().enumerate().all(|(j, &c)| i == j || !c)),
        )
    }

    /// Configurations confusable with configuration `i`, including itself.
    pub fn class_of(&self, i: usize) -> Vec<usize> {
        (0..self.confusable.len()).filter(|&j| self.confusable[i][j]).collect()
    }
}

/// Compares the root paths (buses and lines) and the level sets of every
/// probed bus across configurations.
pub fn check_verifiable(feeder: &Feeder, configs: &[Vec<bool>], probed: &[usize]) -> Result<VerifiabilityReport> {
    let n = feeder.n();
    if let Some(b) = probed.iter().find(|&&b| b == 0 || b > n) {
        bail!(Argument, "probed bus {b} outside 1..={n}");
    }
    let signatures = configs
        .iter()
        .map(|b| {
            let f = feeder.with_status(b.clone())?;
            let idx = build_index(f.graph());
            Ok(probed
                .iter()
                .map(|&m| {
                    let path: Vec<(usize, Option<usize>)> =
                        idx.ancestors(m).iter().map(|&a| (a, f.feeding_line(a))).collect();
                    (path, idx.level_sets(m))
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let k = configs.len();
    let confusable = (0..k)
        .map(|i| (0..k).map(|j| signatures[i] == signatures[j]).collect())
        .collect();
    Ok(VerifiabilityReport {
        confusable,
        distinct_resistances: check_distinct_resistances(feeder, DEFAULT_TOL),
    })
}
