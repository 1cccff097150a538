//! Retrieval metrics between two relative spaces, aggregation over seeds,
//! and PCA coordinates for plotting.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{relative_projection, top_k_of_scores, unit_rows_lenient, AnchorSet, EmbeddingSpace};

const EVAL_BLOCK_ROWS: usize = 256;

/// `|a ∩ b| / |a ∪ b|`.
pub fn jaccard_at_k(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() && b.is_empty() {
        return Err(Error::Empty("neighbor sets"));
    }
    let sa: HashSet<usize> = a.iter().copied().collect();
    let sb: HashSet<usize> = b.iter().copied().collect();
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    Ok(inter as f64 / union as f64)
}

/// `1/rank` (1-based) of `truth` in `ranked`, or 0 when absent.
pub fn reciprocal_rank_at_k(truth: usize, ranked: &[usize]) -> f64 {
    ranked
        .iter()
        .position(|&i| i == truth)
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

/// Per-run retrieval means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScores {
    pub jaccard: f64,
    pub mrr: f64,
    pub cosine: f64,
    pub n_words: usize,
    pub k: usize,
}

/// Retrieval quality of source/target relative spaces over `parallel_keys`.
///
/// For word `w` with encodings `x` (source) and `y` (target):
/// - Jaccard between the K nearest relative neighbours of `x` among source
///   words and of `y` among target words, the query itself excluded;
/// - reciprocal rank of `w` among the K nearest target words to `x`;
/// - cosine between the two relative vectors.
///
/// Neighbour similarity is cosine between relative vectors.
pub fn retrieval_eval(
    space_src: &EmbeddingSpace,
    space_tgt: &EmbeddingSpace,
    anchors_src: &AnchorSet,
    anchors_tgt: &AnchorSet,
    parallel_keys: &[String],
    k: usize,
) -> Result<RetrievalScores> {
    if anchors_src.len() != anchors_tgt.len() {
        return Err(Error::AnchorCountMismatch(anchors_src.len(), anchors_tgt.len()));
    }
    if anchors_src.is_empty() {
        return Err(Error::Empty("anchor set"));
    }
    let n = parallel_keys.len();
    if n == 0 {
        return Err(Error::Empty("parallel keys"));
    }
    if k == 0 || k >= n {
        return Err(Error::KTooLarge { k, rows: n.saturating_sub(1) });
    }
    let x = space_src.rows_for_keys(parallel_keys)?;
    let y = space_tgt.rows_for_keys(parallel_keys)?;
    let rel_x = relative_projection(x.view(), anchors_src.embeddings(space_src)?.view())?;
    let rel_y = relative_projection(y.view(), anchors_tgt.embeddings(space_tgt)?.view())?;
    let ux = unit_rows_lenient(rel_x.values.view());
    let uy = unit_rows_lenient(rel_y.values.view());

    let (mut jac_sum, mut rr_sum, mut cos_sum) = (0.0, 0.0, 0.0);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BLOCK_ROWS).min(n);
        let qx = ux.slice(s![start..end, ..]);
        let qy = uy.slice(s![start..end, ..]);
        let sim_xx = qx.dot(&ux.t());
        let sim_yy = qy.dot(&uy.t());
        let sim_xy = qx.dot(&uy.t());
        for b in 0..end - start {
            let w = start + b;
            let nx: Vec<usize> = top_k_of_scores(sim_xx.row(b).iter().copied(), k, Some(w))
                .into_iter()
                .map(|(i, _)| i)
                .collect();
            let ny: Vec<usize> = top_k_of_scores(sim_yy.row(b).iter().copied(), k, Some(w))
                .into_iter()
                .map(|(i, _)| i)
                .collect();
            jac_sum += jaccard_at_k(&nx, &ny)?;
            let ranked: Vec<usize> = top_k_of_scores(sim_xy.row(b).iter().copied(), k, None)
                .into_iter()
                .map(|(i, _)| i)
                .collect();
            rr_sum += reciprocal_rank_at_k(w, &ranked);
            cos_sum += qx.row(b).dot(&qy.row(b)).clamp(-1.0, 1.0);
        }
        start = end;
    }
    let nf = n as f64;
    Ok(RetrievalScores {
        jaccard: jac_sum / nf,
        mrr: rr_sum / nf,
        cosine: cos_sum / nf,
        n_words: n,
        k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Retrieval metrics for one direction and method, aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub source: String,
    pub target: String,
    pub method: String,
    pub k: usize,
    pub n_words: usize,
    pub jaccard: MeanStd,
    pub mrr: MeanStd,
    pub cosine: MeanStd,
}

impl RetrievalReport {
    pub fn aggregate(
        source: &str,
        target: &str,
        method: &str,
        runs: &[RetrievalScores],
    ) -> Result<Self> {
        let first = runs.first().ok_or(Error::Empty("retrieval runs"))?;
        let col = |f: fn(&RetrievalScores) -> f64| runs.iter().map(f).collect::<Vec<_>>();
        Ok(Self {
            source: source.to_string(),
            target: target.to_string(),
            method: method.to_string(),
            k: first.k,
            n_words: first.n_words,
            jaccard: MeanStd::of(&col(|r| r.jaccard)),
            mrr: MeanStd::of(&col(|r| r.mrr)),
            cosine: MeanStd::of(&col(|r| r.cosine)),
        })
    }
}

impl fmt::Display for RetrievalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<5} {:>8} -> {:<8} Jaccard {}  MRR {}  Cosine {}",
            self.method, self.source, self.target, self.jaccard, self.mrr, self.cosine
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportRow {
    direction_src: String,
    direction_tgt: String,
    method: String,
    jaccard_mean: f64,
    jaccard_std: f64,
    mrr_mean: f64,
    mrr_std: f64,
    cosine_mean: f64,
    cosine_std: f64,
}

/// One CSV row per report, fixed column order.
pub fn write_reports_csv<W: Write>(writer: W, reports: &[RetrievalReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(ReportRow {
            direction_src: r.source.clone(),
            direction_tgt: r.target.clone(),
            method: r.method.clone(),
            jaccard_mean: r.jaccard.mean,
            jaccard_std: r.jaccard.std,
            mrr_mean: r.mrr.mean,
            mrr_std: r.mrr.std,
            cosine_mean: r.cosine.mean,
            cosine_std: r.cosine.std,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads CSV written by [`write_reports_csv`]. `k` and `n_words` are not
/// stored in the CSV and come back as 0.
pub fn read_reports_csv<R: Read>(reader: R) -> Result<Vec<RetrievalReport>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize::<ReportRow>()
        .map(|row| {
            let row = row?;
            Ok(RetrievalReport {
                source: row.direction_src,
                target: row.direction_tgt,
                method: row.method,
                k: 0,
                n_words: 0,
                jaccard: MeanStd { mean: row.jaccard_mean, std: row.jaccard_std },
                mrr: MeanStd { mean: row.mrr_mean, std: row.mrr_std },
                cosine: MeanStd { mean: row.cosine_mean, std: row.cosine_std },
            })
        })
        .collect()
}

/// Projects mean-centered rows onto the top `out_dim` principal directions.
///
/// Each direction is signed so that its largest-magnitude loading is positive.
pub fn pca_project(matrix: ArrayView2<f64>, out_dim: usize) -> Result<Array2<f64>> {
    let (n, m) = matrix.dim();
    if n < 2 {
        return Err(Error::DegenerateData("PCA needs at least two rows"));
    }
    if out_dim == 0 || out_dim > m {
        return Err(Error::InvalidConfig(format!(
            "cannot project {m} columns onto {out_dim} components"
        )));
    }
    let mean = matrix.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &matrix - &mean;
    if centered.iter().all(|v| v.abs() < 1e-12) {
        return Err(Error::DegenerateData("all rows are identical"));
    }
    let cov = centered.t().dot(&centered) / n as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(m, m, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = Array2::<f64>::zeros((m, out_dim));
    for (c, &e) in order.iter().take(out_dim).enumerate() {
        let v = eig.eigenvectors.column(e);
        let lead = v.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for r in 0..m {
            basis[[r, c]] = sign * v[r];
        }
    }
    Ok(centered.dot(&basis))
}
