use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        /// Rows with `x[feature] < threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
        /// Training rows reaching this node.
        cover: f64,
    },
    Leaf {
        value: f64,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }
}

/// A regression tree stored as a flat node list; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => idx = if row[*feature] < *threshold { *left } else { *right },
            }
        }
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value, cover } => Some((*value, *cover)),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    value: f64,
    grad: f64,
    row: u32,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    node: usize,
    start: usize,
    end: usize,
    sum: f64,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    left_count: usize,
    left_sum: f64,
}

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_child_weight: f64,
}

/// Presorted feature columns; built once per fit.
pub(crate) struct SortedColumns {
    /// Per feature, row indices ordered by value, ties by row index.
    order: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub fn new(columns: &[Vec<f64>]) -> Self {
        let order = columns
            .par_iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { order }
    }
}

/// Greedy exact growth of one squared-loss tree on the residuals `grad`
/// (target minus current prediction) of the rows flagged in `sampled`.
///
/// Leaves hold the mean residual. A node splits only when both children keep
/// at least `min_child_weight` rows and the reduction in squared error is
/// positive. Equal gains resolve to the lowest feature index, then the lowest
/// threshold.
pub(crate) fn grow_tree(
    columns: &[Vec<f64>],
    sorted: &SortedColumns,
    features: &[usize],
    sampled: &[bool],
    grad: &[f64],
    params: &GrowParams,
) -> Tree {
    let mut lists: Vec<Vec<Entry>> = features
        .par_iter()
        .map(|&f| {
            sorted.order[f]
                .iter()
                .filter(|&&r| sampled[r as usize])
                .map(|&r| Entry {
                    value: columns[f][r as usize],
                    grad: grad[r as usize],
                    row: r,
                })
                .collect()
        })
        .collect();

    let n = lists[0].len();
    let mut nodes = Vec::new();
    let root_sum: f64 = lists[0].iter().map(|e| e.grad).sum();
    nodes.push(Node::Leaf {
        value: leaf_value(root_sum, n),
        cover: n as f64,
    });
    let mut frontier = vec![Segment {
        node: 0,
        start: 0,
        end: n,
        sum: root_sum,
    }];
    let mut go_left = vec![false; sampled.len()];
    let mut scratch: Vec<Entry> = Vec::with_capacity(n);

    for _depth in 0..params.max_depth {
        if frontier.is_empty() {
            break;
        }
        let best: Vec<Option<Candidate>> = frontier
            .iter()
            .map(|seg| best_split(&lists, features, seg, params.min_child_weight))
            .collect();

        let mut next = Vec::new();
        let mut any_split = false;
        for (seg, cand) in frontier.iter().zip(&best) {
            let Some(c) = cand else { continue };
            any_split = true;
            let k = features.iter().position(|&f| f == c.feature).expect("feature in sample");
            for (i, e) in lists[k][seg.start..seg.end].iter().enumerate() {
                go_left[e.row as usize] = i < c.left_count;
            }
            let count = seg.end - seg.start;
            let left = nodes.len();
            let right = left + 1;
            let right_sum = seg.sum - c.left_sum;
            nodes.push(Node::Leaf {
                value: leaf_value(c.left_sum, c.left_count),
                cover: c.left_count as f64,
            });
            nodes.push(Node::Leaf {
                value: leaf_value(right_sum, count - c.left_count),
                cover: (count - c.left_count) as f64,
            });
            nodes[seg.node] = Node::Split {
                feature: c.feature,
                threshold: c.threshold,
                left,
                right,
                cover: count as f64,
            };
            let mid = seg.start + c.left_count;
            next.push(Segment {
                node: left,
                start: seg.start,
                end: mid,
                sum: c.left_sum,
            });
            next.push(Segment {
                node: right,
                start: mid,
                end: seg.end,
                sum: right_sum,
            });
        }
        if !any_split {
            break;
        }

        // stable partition of every column list inside each split segment
        for (seg, cand) in frontier.iter().zip(&best) {
            if cand.is_none() {
                continue;
            }
            for list in lists.iter_mut() {
                scratch.clear();
                let slice = &mut list[seg.start..seg.end];
                let mut w = 0;
                for i in 0..slice.len() {
                    let e = slice[i];
                    if go_left[e.row as usize] {
                        slice[w] = e;
                        w += 1;
                    } else {
                        scratch.push(e);
                    }
                }
                slice[w..].copy_from_slice(&scratch);
            }
        }
        frontier = next;
    }
    Tree { nodes }
}

const MIN_REL_GAIN: f64 = 1e-12;

fn leaf_value(sum: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn best_split(lists: &[Vec<Entry>], features: &[usize], seg: &Segment, mcw: f64) -> Option<Candidate> {
    let count = seg.end - seg.start;
    if (count as f64) < 2.0 * mcw || count < 2 {
        return None;
    }
    let parent_score = seg.sum * seg.sum / count as f64;
    let per_feature: Vec<Option<Candidate>> = lists
        .par_iter()
        .zip(features.par_iter())
        .map(|(list, &feature)| {
            let entries = &list[seg.start..seg.end];
            let mut best: Option<Candidate> = None;
            let mut left_sum = 0.0;
            for i in 0..count - 1 {
                left_sum += entries[i].grad;
                let (a, b) = (entries[i].value, entries[i + 1].value);
                if !(a < b) {
                    continue;
                }
                let lc = i + 1;
                let rc = count - lc;
                if (lc as f64) < mcw || (rc as f64) < mcw {
                    continue;
                }
                let right_sum = seg.sum - left_sum;
                let children = left_sum * left_sum / lc as f64 + right_sum * right_sum / rc as f64;
                let gain = children - parent_score;
                // an exact-zero gain can come out as a rounding residue; only real improvements split
                if gain > MIN_REL_GAIN * children && best.map_or(true, |c| gain > c.gain) {
                    best = Some(Candidate {
                        gain,
                        feature,
                        threshold: split_threshold(a, b),
                        left_count: lc,
                        left_sum,
                    });
                }
            }
            best
        })
        .collect();
    // features are in ascending order, so a strict comparison keeps the lowest index on ties
    per_feature
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<Candidate>, c| match acc {
            Some(a) if a.gain >= c.gain => Some(a),
            _ => Some(c),
        })
}

/// Midpoint between consecutive distinct values, nudged to `b` when the
/// midpoint rounds onto `a`.
pub(crate) fn split_threshold(a: f64, b: f64) -> f64 {
    let mid = a + (b - a) / 2.0;
    if mid > a && mid <= b {
        mid
    } else {
        b
    }
}
