//! Assigning switching intervals to modes.
//!
//! A short interval excites only part of the state space, so its
//! least-squares operator `L̂_s = Z_s Y_s†` is only meaningful on
//! `ran(Y_s)`. Two intervals of the same mode agree on each other's excited
//! subspaces, which motivates the dissimilarity
//!
//! ```text
//! d(s, r) = ‖L̂_s P_r − L̂_r P_r‖_F + ‖L̂_r P_s − L̂_s P_s‖_F,   P_s = Y_s Y_s†.
//! ```
//!
//! Intervals are compared only within a vertex set and grouped by
//! average-linkage agglomerative clustering into a known number of modes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TopoError};
use crate::model::VertexSet;
use crate::numerics::{frobenius, numerical_rank, pinv, range_projector, Matrix};
use crate::simulator::SegmentRecord;

/// Local least-squares operator and excitation projector of one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOperator {
    pub interval_index: usize,
    pub l_local: Matrix,
    pub projector: Matrix,
    pub rank: usize,
}

pub fn segment_operator(record: &SegmentRecord, rank_tol: f64) -> SegmentOperator {
    let y_pinv = pinv(&record.y_s, rank_tol);
    SegmentOperator {
        interval_index: record.interval_index,
        l_local: &record.z_s * &y_pinv,
        projector: range_projector(&record.y_s, rank_tol),
        rank: numerical_rank(&record.y_s, rank_tol),
    }
}

/// Projection-based dissimilarity between two intervals of one vertex set.
pub fn dissimilarity(a: &SegmentOperator, b: &SegmentOperator) -> Result<f64> {
    if a.l_local.shape() != b.l_local.shape() {
        return Err(TopoError::Dimension(format!(
            "intervals {} and {} have different dimensions",
            a.interval_index, b.interval_index
        )));
    }
    let on_b = &a.l_local * &b.projector - &b.l_local * &b.projector;
    let on_a = &b.l_local * &a.projector - &a.l_local * &a.projector;
    Ok(frobenius(&on_b) + frobenius(&on_a))
}

/// Intervals sharing one vertex set, as positions into the input slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentGroup {
    pub vertex_set: VertexSet,
    pub members: Vec<usize>,
}

/// Partitions records by node-ID set, groups ordered by first appearance.
pub fn group_by_vertex_set(records: &[SegmentRecord]) -> Vec<SegmentGroup> {
    let mut groups: Vec<SegmentGroup> = Vec::new();
    for (pos, rec) in records.iter().enumerate() {
        let vs = rec.vertex_set();
        match groups.iter_mut().find(|g| g.vertex_set == vs) {
            Some(g) => g.members.push(pos),
            None => groups.push(SegmentGroup { vertex_set: vs, members: vec![pos] }),
        }
    }
    groups
}

/// Pairwise dissimilarities within one vertex-set group.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    pub group_id: usize,
    pub vertex_set: VertexSet,
    /// Interval indices labelling rows and columns.
    pub indices: Vec<usize>,
    pub d: Matrix,
}

impl DissimilarityMatrix {
    pub fn from_operators(group_id: usize, vertex_set: VertexSet, ops: &[SegmentOperator]) -> Result<Self> {
        let n = ops.len();
        let mut d = Matrix::zeros(n, n);
        for s in 0..n {
            for r in s + 1..n {
                let v = dissimilarity(&ops[s], &ops[r])?;
                d[(s, r)] = v;
                d[(r, s)] = v;
            }
        }
        Ok(Self {
            group_id,
            vertex_set,
            indices: ops.iter().map(|o| o.interval_index).collect(),
            d,
        })
    }
}

/// One agglomeration step. Leaves are `0..n`; the cluster created by step
/// `i` has id `n + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

/// Flat labels (by row of the distance matrix) and the merge history.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub labels: Vec<usize>,
    pub merges: Vec<Merge>,
}

/// Average-linkage agglomerative clustering of a symmetric distance matrix
/// down to `clusters` clusters.
///
/// Among pairs at equal linkage distance the pair whose smallest members
/// `(min, max)` are lexicographically smallest is merged first. Labels are
/// numbered by the smallest row in each cluster.
pub fn agglomerative_cluster(d: &Matrix, clusters: usize) -> Result<Dendrogram> {
    let n = d.nrows();
    if !d.is_square() {
        return Err(TopoError::Dimension("distance matrix must be square".into()));
    }
    if clusters < 1 || clusters > n {
        return Err(TopoError::ClusterCount { requested: clusters, available: n });
    }

    // active clusters: (id, representative = smallest member, size)
    let mut ids: Vec<usize> = (0..n).collect();
    let mut reps: Vec<usize> = (0..n).collect();
    let mut sizes: Vec<usize> = vec![1; n];
    let mut alive: Vec<bool> = vec![true; n];
    let mut member_of: Vec<usize> = (0..n).collect();
    let mut dist = d.clone();
    let mut merges = Vec::with_capacity(n - clusters);

    for step in 0..n - clusters {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            for j in i + 1..n {
                if !alive[j] {
                    continue;
                }
                let key = (reps[i].min(reps[j]), reps[i].max(reps[j]));
                let v = dist[(i, j)];
                let better = match best {
                    None => true,
                    Some((bv, bkey, _, _)) => v < bv || (v == bv && key < bkey),
                };
                if better {
                    best = Some((v, key, i, j));
                }
            }
        }
        let (height, _, i, j) = best.expect("at least two live clusters");
        // slot i keeps the merged cluster; Lance-Williams update for average linkage
        let (si, sj) = (sizes[i] as f64, sizes[j] as f64);
        for k in 0..n {
            if alive[k] && k != i && k != j {
                let v = (si * dist[(k, i)] + sj * dist[(k, j)]) / (si + sj);
                dist[(k, i)] = v;
                dist[(i, k)] = v;
            }
        }
        alive[j] = false;
        merges.push(Merge { a: ids[i], b: ids[j], height, size: sizes[i] + sizes[j] });
        ids[i] = n + step;
        sizes[i] += sizes[j];
        reps[i] = reps[i].min(reps[j]);
        for m in member_of.iter_mut() {
            if *m == j {
                *m = i;
            }
        }
    }

    // number clusters by smallest member
    let mut slot_label: BTreeMap<usize, usize> = BTreeMap::new();
    let labels = member_of
        .iter()
        .map(|slot| {
            let next = slot_label.len();
            *slot_label.entry(*slot).or_insert(next)
        })
        .collect();
    Ok(Dendrogram { labels, merges })
}

/// Clustering outcome for one vertex set.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupClustering {
    pub distances: DissimilarityMatrix,
    pub mode_count: usize,
    /// Merges over the rows of `distances`; rows of unexcited intervals never
    /// appear as leaves, merged ids start at the group size.
    pub merge_history: Vec<Merge>,
    /// Intervals whose `Y_s` had numerical rank zero; attached afterwards to
    /// the cluster with the smallest mean dissimilarity.
    pub unexcited: Vec<usize>,
    pub label_offset: u32,
}

/// Mode labels for every interval, unique across vertex sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: BTreeMap<usize, u32>,
    pub groups: Vec<GroupClustering>,
}

impl ClusterAssignment {
    pub fn merge_history(&self) -> impl Iterator<Item = (usize, &Merge)> {
        self.groups
            .iter()
            .flat_map(|g| g.merge_history.iter().map(move |m| (g.distances.group_id, m)))
    }
}

/// Groups intervals by vertex set, computes dissimilarities and clusters each
/// group into its configured number of modes.
pub fn cluster_modes(
    records: &[SegmentRecord],
    mode_counts: &BTreeMap<VertexSet, usize>,
    rank_tol: f64,
) -> Result<ClusterAssignment> {
    let mut labels = BTreeMap::new();
    let mut groups = Vec::new();
    let mut offset: u32 = 0;

    for (group_id, group) in group_by_vertex_set(records).into_iter().enumerate() {
        let m = *mode_counts
            .get(&group.vertex_set)
            .ok_or_else(|| TopoError::MissingModeCount(group.vertex_set.0.clone()))?;
        // every member must use one node ordering for the matrices to be comparable
        let first_nodes = &records[group.members[0]].node_ids;
        if let Some(&pos) = group.members.iter().find(|&&p| &records[p].node_ids != first_nodes) {
            return Err(TopoError::Grouping(format!(
                "interval {} lists vertex set {} in a different order",
                records[pos].interval_index, group.vertex_set
            )));
        }
        let ops: Vec<SegmentOperator> = group
            .members
            .iter()
            .map(|&p| segment_operator(&records[p], rank_tol))
            .collect();
        let distances = DissimilarityMatrix::from_operators(group_id, group.vertex_set.clone(), &ops)?;
        let size = ops.len();

        let excited: Vec<usize> = (0..size).filter(|&i| ops[i].rank > 0).collect();
        let unexcited_rows: Vec<usize> = (0..size).filter(|&i| ops[i].rank == 0).collect();
        let clustered_rows: Vec<usize> =
            if excited.len() >= m { excited } else { (0..size).collect() };

        let sub = Matrix::from_fn(clustered_rows.len(), clustered_rows.len(), |i, j| {
            distances.d[(clustered_rows[i], clustered_rows[j])]
        });
        let dendro = agglomerative_cluster(&sub, m)?;

        let mut row_label: Vec<Option<usize>> = vec![None; size];
        for (i, &row) in clustered_rows.iter().enumerate() {
            row_label[row] = Some(dendro.labels[i]);
        }
        let k = clustered_rows.len();
        let merge_history = dendro
            .merges
            .iter()
            .map(|mg| {
                let map = |id: usize| if id < k { clustered_rows[id] } else { size + (id - k) };
                Merge { a: map(mg.a), b: map(mg.b), ..*mg }
            })
            .collect();

        let mut unexcited = Vec::new();
        for &row in &unexcited_rows {
            if row_label[row].is_some() {
                unexcited.push(ops[row].interval_index);
                continue;
            }
            let mut best = (f64::INFINITY, 0usize);
            for label in 0..m {
                let members: Vec<usize> = (0..size).filter(|&r| row_label[r] == Some(label)).collect();
                let mean = members.iter().map(|&r| distances.d[(row, r)]).sum::<f64>()
                    / members.len() as f64;
                if mean < best.0 {
                    best = (mean, label);
                }
            }
            row_label[row] = Some(best.1);
            unexcited.push(ops[row].interval_index);
        }

        for (row, op) in ops.iter().enumerate() {
            labels.insert(op.interval_index, offset + row_label[row].expect("assigned") as u32);
        }
        groups.push(GroupClustering {
            distances,
            mode_count: m,
            merge_history,
            unexcited,
            label_offset: offset,
        });
        offset += m as u32;
    }
    Ok(ClusterAssignment { labels, groups })
}
