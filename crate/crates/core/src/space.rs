//! Embedding spaces, anchor sets and relative projections.
//!
//! Every space stores unit-norm rows, so a dot product between rows is a
//! cosine similarity. A relative representation of a sample is the vector of
//! its cosine similarities to an ordered list of anchors.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

pub(crate) const MIN_NORM: f64 = 1e-12;

/// Rescale every row of `matrix` to unit Euclidean norm.
pub fn normalize_rows(matrix: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = matrix.to_owned();
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm >= MIN_NORM) {
            return Err(Error::ZeroNormRow(i));
        }
        row /= norm;
    }
    Ok(out)
}

pub(crate) fn debug_assert_unit_rows(m: ArrayView2<f64>) {
    if cfg!(debug_assertions) {
        for (i, row) in m.axis_iter(Axis(0)).enumerate() {
            let n = row.dot(&row).sqrt();
            debug_assert!((n - 1.0).abs() < 1e-6, "row {i} has norm {n}");
        }
    }
}

/// A labeled matrix of unit-norm embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    id: String,
    keys: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Array2<f64>,
}

impl EmbeddingSpace {
    /// Builds a space, normalizing rows. Keys must be unique and match the row count.
    pub fn new(id: impl Into<String>, keys: Vec<String>, vectors: Array2<f64>) -> Result<Self> {
        let (rows, dim) = vectors.dim();
        if rows == 0 {
            return Err(Error::Empty("embedding space has no rows"));
        }
        if dim == 0 {
            return Err(Error::Empty("embedding space has zero dimension"));
        }
        if keys.len() != rows {
            return Err(Error::LengthMismatch(keys.len(), rows));
        }
        let mut index = HashMap::with_capacity(rows);
        for (i, k) in keys.iter().enumerate() {
            if index.insert(k.clone(), i).is_some() {
                return Err(Error::DuplicateKey(k.clone()));
            }
        }
        let vectors = normalize_rows(vectors.view())?;
        Ok(Self {
            id: id.into(),
            keys,
            index,
            vectors,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn vectors(&self) -> ArrayView2<'_, f64> {
        self.vectors.view()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(i)
    }

    /// Gathers rows in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Array2<f64>> {
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    rows: self.len(),
                });
            }
        }
        Ok(self.vectors.select(Axis(0), indices))
    }

    /// Sub-space restricted to `indices`, in that order. Rows are copied
    /// bit-for-bit.
    pub fn subset(&self, id: impl Into<String>, indices: &[usize]) -> Result<Self> {
        let vectors = self.select(indices)?;
        let keys: Vec<String> = indices.iter().map(|&i| self.keys[i].clone()).collect();
        let mut index = HashMap::with_capacity(keys.len());
        for (i, k) in keys.iter().enumerate() {
            if index.insert(k.clone(), i).is_some() {
                return Err(Error::DuplicateKey(k.clone()));
            }
        }
        if keys.is_empty() {
            return Err(Error::Empty("embedding space has no rows"));
        }
        Ok(Self {
            id: id.into(),
            keys,
            index,
            vectors,
        })
    }

    /// Rows of this space in the order of `keys`.
    pub fn rows_for_keys(&self, keys: &[String]) -> Result<Array2<f64>> {
        let idx = keys
            .iter()
            .map(|k| self.index_of(k).ok_or_else(|| Error::MissingKey(k.clone())))
            .collect::<Result<Vec<_>>>()?;
        self.select(&idx)
    }
}

/// Ordered row indices into a named space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorSet {
    pub space_id: String,
    pub indices: Vec<usize>,
}

impl AnchorSet {
    pub fn new(space: &EmbeddingSpace, indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= space.len()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                rows: space.len(),
            });
        }
        Ok(Self {
            space_id: space.id().to_string(),
            indices,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Anchor embeddings as an `M x d` matrix.
    pub fn embeddings(&self, space: &EmbeddingSpace) -> Result<Array2<f64>> {
        space.select(&self.indices)
    }

    /// Relative representation of every row of `space` w.r.t. these anchors.
    pub fn project(&self, space: &EmbeddingSpace) -> Result<RelativeRepresentation> {
        relative_projection(space.vectors(), self.embeddings(space)?.view())
    }
}

/// Known parallel anchors: `x.indices[i]` corresponds to `y.indices[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelSeed {
    pub x: AnchorSet,
    pub y: AnchorSet,
}

impl ParallelSeed {
    pub fn new(x: AnchorSet, y: AnchorSet) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::AnchorCountMismatch(x.len(), y.len()));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// `N x M` matrix of cosine similarities between samples and anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeRepresentation {
    pub values: Array2<f64>,
}

impl RelativeRepresentation {
    pub fn anchor_count(&self) -> usize {
        self.values.ncols()
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Copy with rows rescaled to unit norm; zero rows stay zero.
    pub fn unit_rows(&self) -> Array2<f64> {
        unit_rows_lenient(self.values.view())
    }
}

/// Row normalization that leaves zero rows untouched instead of failing.
pub(crate) fn unit_rows_lenient(m: ArrayView2<f64>) -> Array2<f64> {
    let mut out = m.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let n = row.dot(&row).sqrt();
        if n >= MIN_NORM {
            row /= n;
        }
    }
    out
}

/// `samples · anchorsᵀ` for unit-row inputs.
pub fn relative_projection(
    samples: ArrayView2<f64>,
    anchors: ArrayView2<f64>,
) -> Result<RelativeRepresentation> {
    if samples.ncols() != anchors.ncols() {
        return Err(Error::DimMismatch {
            expected: anchors.ncols(),
            got: samples.ncols(),
        });
    }
    debug_assert_unit_rows(samples);
    debug_assert_unit_rows(anchors);
    Ok(RelativeRepresentation {
        values: samples.dot(&anchors.t()),
    })
}

/// Descending by similarity, ties by ascending index.
pub(crate) fn rank_cmp(a: &(usize, f64), b: &(usize, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Top-`k` entries of a similarity vector, with optional excluded index.
pub(crate) fn top_k_of_scores(
    scores: impl Iterator<Item = f64>,
    k: usize,
    exclude: Option<usize>,
) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = scores
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .collect();
    if k == 0 {
        return Vec::new();
    }
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, rank_cmp);
        all.truncate(k);
    }
    all.sort_by(rank_cmp);
    all
}

/// Exact cosine nearest neighbours of `query` among the rows of `corpus`.
///
/// Rows need not be unit-norm (relative-representation rows are not); a
/// zero vector has similarity 0 with everything.
pub fn cosine_topk(
    query: ArrayView1<f64>,
    corpus: ArrayView2<f64>,
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    if query.len() != corpus.ncols() {
        return Err(Error::DimMismatch {
            expected: corpus.ncols(),
            got: query.len(),
        });
    }
    if k > corpus.nrows() {
        return Err(Error::KTooLarge {
            k,
            rows: corpus.nrows(),
        });
    }
    let qn = query.dot(&query).sqrt();
    let scores = corpus.axis_iter(Axis(0)).map(|row| {
        let rn = row.dot(&row).sqrt();
        if qn < MIN_NORM || rn < MIN_NORM {
            0.0
        } else {
            row.dot(&query) / (qn * rn)
        }
    });
    Ok(top_k_of_scores(scores, k, None))
}
