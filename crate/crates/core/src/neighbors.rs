//! Exact k-nearest-neighbour Euclidean distances.
//!
//! Two query shapes are needed by the divergence estimators: the distance
//! from each point of a set to its k-th nearest *other* point of the same
//! set (`within`), and the distance from each query point to its k-th
//! nearest point of a reference set (`cross`). Both are answered by a
//! median-split KD-tree. [`brute_force_knn`] is the O(n·m) reference used
//! by the tests.
//!
//! Only distances are returned. Which of several equidistant neighbours is
//! "the" k-th one is unspecified, and irrelevant to the result.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An n×d matrix of finite sample coordinates, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    data: Vec<f64>,
    dim: usize,
}

impl PointSet {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyPointSet)?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::RaggedRows {
                    row,
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(data, dim)
    }

    /// Builds a point set from row-major storage.
    pub fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        if data.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        if data.len() % dim != 0 {
            return Err(Error::RaggedRows {
                row: data.len() / dim,
                expected: dim,
                found: data.len() % dim,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self { data, dim })
    }

    /// A 1-D point set.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::from_flat(values.to_vec(), 1)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Returns a copy with `point` appended as the last row.
    pub fn with_point(&self, point: &[f64]) -> Result<Self> {
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: point.len(),
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(point);
        Self::from_flat(data, self.dim)
    }

    /// Returns the rows in the order given by `order` (a permutation or any
    /// non-empty selection of row indices).
    pub fn select(&self, order: &[usize]) -> Self {
        let mut data = Vec::with_capacity(order.len() * self.dim);
        for &i in order {
            data.extend_from_slice(self.row(i));
        }
        Self {
            data,
            dim: self.dim,
        }
    }

    /// Applies `f` to every row in place. Fails if the result is not finite.
    pub fn map_rows(&self, mut f: impl FnMut(&[f64], &mut [f64])) -> Result<Self> {
        let mut data = vec![0.0; self.data.len()];
        for (src, dst) in self
            .data
            .chunks_exact(self.dim)
            .zip(data.chunks_exact_mut(self.dim))
        {
            f(src, dst);
        }
        Self::from_flat(data, self.dim)
    }

    pub(crate) fn rows_mut(&mut self) -> impl Iterator<Item = &mut [f64]> + '_ {
        self.data.chunks_exact_mut(self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborMode {
    /// Query points are the indexed points; each point excludes itself.
    Within,
    /// Queries are matched against a separate reference set.
    Cross,
}

/// The k-th nearest-neighbour distance for every query point.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborDistances {
    pub distances: Vec<f64>,
    pub k: usize,
    pub mode: NeighborMode,
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable KD-tree over a borrowed point set.
///
/// Queries take `&self`, so one index can serve several threads.
#[derive(Debug, Clone)]
pub struct SpatialIndex<'a> {
    points: &'a PointSet,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Builds a KD-tree answering exact k-NN queries against `points`.
pub fn build_index(points: &PointSet) -> SpatialIndex<'_> {
    SpatialIndex::new(points)
}

impl<'a> SpatialIndex<'a> {
    pub fn new(points: &'a PointSet) -> Self {
        let mut index = Self {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
        };
        index.build(0, points.len());
        index
    }

    pub fn points(&self) -> &PointSet {
        self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let points = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points.row(a)[axis].total_cmp(&points.row(b)[axis])
        });
        let value = points.row(self.order[mid])[axis];
        // Placeholder, patched once the children exist.
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let dim = self.points.dim();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for &i in &self.order[start..end] {
            for (a, &v) in self.points.row(i).iter().enumerate() {
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
        (0..dim)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0)
    }

    /// Squared distances to the `k` nearest indexed points, ascending.
    /// `skip` excludes one indexed point (the query itself in `within` mode).
    fn k_nearest_sq(&self, query: &[f64], k: usize, skip: Option<usize>) -> Vec<f64> {
        let mut best = KBest::new(k);
        self.search(0, query, skip, &mut best);
        best.items
    }

    fn search(&self, node: usize, query: &[f64], skip: Option<usize>, best: &mut KBest) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == skip {
                        continue;
                    }
                    best.offer(sq_dist(query, self.points.row(i)));
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, skip, best);
                if diff * diff < best.bound() {
                    self.search(far, query, skip, best);
                }
            }
        }
    }

    /// k-th nearest distance from each indexed point to the others.
    pub fn within(&self, k: usize) -> Result<NeighborDistances> {
        let n = self.points.len();
        if k == 0 {
            return Err(Error::InvalidK(k));
        }
        if k >= n {
            return Err(Error::SampleTooSmall { k, available: n });
        }
        let mut distances = Vec::with_capacity(n);
        for (i, row) in self.points.rows().enumerate() {
            let nearest = self.k_nearest_sq(row, k, Some(i));
            if nearest[0] == 0.0 {
                return Err(Error::DuplicatePoints { index: i });
            }
            distances.push(nearest[k - 1].sqrt());
        }
        Ok(NeighborDistances {
            distances,
            k,
            mode: NeighborMode::Within,
        })
    }

    /// k-th nearest distance from each query to the indexed points.
    pub fn cross(&self, queries: &PointSet, k: usize) -> Result<NeighborDistances> {
        check_dims(queries, self.points)?;
        let m = self.points.len();
        if k == 0 {
            return Err(Error::InvalidK(k));
        }
        if k > m {
            return Err(Error::SampleTooSmall { k, available: m });
        }
        let distances = queries
            .rows()
            .map(|q| self.k_nearest_sq(q, k, None)[k - 1].sqrt())
            .collect();
        Ok(NeighborDistances {
            distances,
            k,
            mode: NeighborMode::Cross,
        })
    }
}

/// Ascending list of the k smallest squared distances seen so far.
struct KBest {
    k: usize,
    items: Vec<f64>,
}

impl KBest {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    #[inline]
    fn bound(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1]
        }
    }

    #[inline]
    fn offer(&mut self, d: f64) {
        if d >= self.bound() {
            return;
        }
        let pos = self.items.partition_point(|&x| x <= d);
        self.items.insert(pos, d);
        self.items.truncate(self.k);
    }
}

fn check_dims(a: &PointSet, b: &PointSet) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

/// ρ_k: distance from each point to its k-th nearest other point.
pub fn knn_within(points: &PointSet, k: usize) -> Result<NeighborDistances> {
    SpatialIndex::new(points).within(k)
}

/// ν_k: distance from each query to its k-th nearest reference point.
pub fn knn_cross(queries: &PointSet, refs: &PointSet, k: usize) -> Result<NeighborDistances> {
    check_dims(queries, refs)?;
    SpatialIndex::new(refs).cross(queries, k)
}

/// Exhaustive O(n·m) k-NN scan with the same contract as the indexed
/// queries. With `exclude_self`, `queries` and `refs` must be the same set.
pub fn brute_force_knn(
    queries: &PointSet,
    refs: &PointSet,
    k: usize,
    exclude_self: bool,
) -> Result<NeighborDistances> {
    check_dims(queries, refs)?;
    if k == 0 {
        return Err(Error::InvalidK(k));
    }
    let available = if exclude_self {
        refs.len().saturating_sub(1)
    } else {
        refs.len()
    };
    if k > available {
        return Err(Error::SampleTooSmall { k, available });
    }
    let mut distances = Vec::with_capacity(queries.len());
    let mut scratch = Vec::with_capacity(refs.len());
    for (i, q) in queries.rows().enumerate() {
        scratch.clear();
        scratch.extend(
            refs.rows()
                .enumerate()
                .filter(|&(j, _)| !(exclude_self && i == j))
                .map(|(_, r)| sq_dist(q, r)),
        );
        scratch.sort_unstable_by(f64::total_cmp);
        if exclude_self && scratch[0] == 0.0 {
            return Err(Error::DuplicatePoints { index: i });
        }
        distances.push(scratch[k - 1].sqrt());
    }
    Ok(NeighborDistances {
        distances,
        k,
        mode: if exclude_self {
            NeighborMode::Within
        } else {
            NeighborMode::Cross
        },
    })
}
