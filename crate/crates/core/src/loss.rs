//! The invariance objective on the invariant feature block, the pixel
//! reconstruction objective on the decoded intermediates, and their weighted
//! combination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{NodeId, Scalar, Tape, TensorData};

/// Weight of the embedding-matching term.
pub const INVARIANCE_WEIGHT: f64 = 25.0;
/// Weight of the hinge-on-std term that prevents collapse.
pub const VARIANCE_WEIGHT: f64 = 25.0;
/// Weight of the off-diagonal covariance penalty.
pub const COVARIANCE_WEIGHT: f64 = 1.0;
/// Inside-the-sqrt epsilon for the batch standard deviation.
const STD_EPS: f64 = 1e-4;

/// Scalar summary of one step's objective, as logged to the metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ssl: f32,
    pub l_recon: f32,
    pub l_total: f32,
    pub lambda: f64,
    /// Unweighted sub-terms of the invariance objective.
    pub inv_term: f32,
    pub var_term: f32,
    pub cov_term: f32,
}

impl LossBreakdown {
    /// Combine already-computed scalars; `l_total` uses the same two float
    /// operations as the graph, so CSV rows recompute it bit-exactly.
    pub fn combine(l_ssl: f32, l_recon: f32, lambda: f64, terms: (f32, f32, f32)) -> Result<Self> {
        if lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(LossBreakdown {
            l_ssl,
            l_recon,
            l_total: l_ssl + (lambda as f32) * l_recon,
            lambda,
            inv_term: terms.0,
            var_term: terms.1,
            cov_term: terms.2,
        })
    }
}

/// Graph nodes of the invariance objective and its sub-terms.
#[derive(Debug, Clone, Copy)]
pub struct InvarianceNodes {
    pub total: NodeId,
    pub invariance: NodeId,
    pub variance: NodeId,
    pub covariance: NodeId,
}

/// Collapse-resistant invariance loss on the invariant token blocks of the
/// two views, computed on token-mean-pooled embeddings e1, e2 of shape
/// [B, d]:
///
/// * invariance: mean squared difference between e1 and e2;
/// * variance: mean over channels of max(0, 1 - std(channel)), where std is
///   the unbiased batch standard deviation with a 1e-4 epsilon inside the
///   square root, averaged over the two views;
/// * covariance: mean squared off-diagonal entry of the unbiased batch
///   covariance matrix, averaged over the two views.
///
/// Total: 25 * invariance + 25 * variance + 1 * covariance.
pub fn invariance_loss<T: Scalar>(
    tape: &mut Tape<T>,
    inv_tokens_v1: NodeId,
    inv_tokens_v2: NodeId,
) -> Result<InvarianceNodes> {
    let s1 = tape.shape(inv_tokens_v1).to_vec();
    let s2 = tape.shape(inv_tokens_v2).to_vec();
    if s1.len() != 3 || s1 != s2 {
        return Err(Error::Shape {
            op: "invariance_loss",
            detail: format!("expected matching [B,N,d] blocks, got {:?} and {:?}", s1, s2),
        });
    }
    let b = s1[0];
    if b < 2 {
        return Err(Error::Config(format!(
            "invariance loss needs batch size >= 2 (variance/covariance undefined), got {b}"
        )));
    }
    let d = s1[2];

    let e1 = tape.mean_axis(inv_tokens_v1, 1)?; // [B, d]
    let e2 = tape.mean_axis(inv_tokens_v2, 1)?;

    let invariance = tape.mse(e1, e2)?;

    let mut var_terms = Vec::with_capacity(2);
    let mut cov_terms = Vec::with_capacity(2);
    for &e in &[e1, e2] {
        // Centered embeddings.
        let mean = tape.mean_axis(e, 0)?; // [d]
        let neg_mean = tape.scale(mean, -1.0)?;
        let centered = tape.add_broadcast(e, neg_mean)?;

        // Unbiased per-channel variance, then the hinge on std.
        let sq = tape.mul(centered, centered)?;
        let var_biased = tape.mean_axis(sq, 0)?; // sum(c^2)/B
        let var = tape.scale(var_biased, b as f64 / (b as f64 - 1.0))?;
        let std = tape.sqrt_eps(var, STD_EPS)?;
        let neg_std = tape.scale(std, -1.0)?;
        let hinge_arg = tape.shift(neg_std, 1.0)?;
        let hinge = tape.relu(hinge_arg)?;
        var_terms.push(tape.mean_all(hinge)?);

        // Mean squared off-diagonal of the covariance matrix.
        let ct = tape.permute(centered, &[1, 0])?;
        let cov = tape.matmul(ct, centered)?; // [d, d]
        let cov = tape.scale(cov, 1.0 / (b as f64 - 1.0))?;
        let mask = off_diagonal_mask::<T>(d);
        let mask = tape.leaf(mask)?;
        let off = tape.mul(cov, mask)?;
        let off_sq = tape.mul(off, off)?;
        let mean_all = tape.mean_all(off_sq)?; // sum over d^2 entries / d^2
        cov_terms.push(tape.scale(mean_all, d as f64 / (d as f64 - 1.0))?);
    }
    let var_sum = tape.add(var_terms[0], var_terms[1])?;
    let variance = tape.scale(var_sum, 0.5)?;
    let cov_sum = tape.add(cov_terms[0], cov_terms[1])?;
    let covariance = tape.scale(cov_sum, 0.5)?;

    let wi = tape.scale(invariance, INVARIANCE_WEIGHT)?;
    let wv = tape.scale(variance, VARIANCE_WEIGHT)?;
    let wc = tape.scale(covariance, COVARIANCE_WEIGHT)?;
    let partial = tape.add(wi, wv)?;
    let total = tape.add(partial, wc)?;
    Ok(InvarianceNodes { total, invariance, variance, covariance })
}

fn off_diagonal_mask<T: Scalar>(d: usize) -> TensorData<T> {
    let mut data = vec![T::one(); d * d];
    for i in 0..d {
        data[i * d + i] = T::zero();
    }
    TensorData::new(vec![d, d], data)
}

/// Mean over intermediates of the mean squared pixel error, so the weight of
/// the reconstruction objective does not depend on how many intermediates a
/// run uses.
pub fn reconstruction_loss<T: Scalar>(
    tape: &mut Tape<T>,
    preds: &[NodeId],
    targets: &[NodeId],
) -> Result<NodeId> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::Config(format!(
            "reconstruction loss needs matching non-empty prediction/target lists, got {} vs {}",
            preds.len(),
            targets.len()
        )));
    }
    let mut acc: Option<NodeId> = None;
    for (&p, &t) in preds.iter().zip(targets.iter()) {
        let term = tape.mse(p, t)?;
        acc = Some(match acc {
            None => term,
            Some(prev) => tape.add(prev, term)?,
        });
    }
    tape.scale(acc.unwrap(), 1.0 / preds.len() as f64)
}

/// l_total = l_ssl + lambda * l_recon as graph nodes. `l_recon = None`
/// encodes a run without a reconstruction path (lambda 0 semantics).
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    l_ssl: NodeId,
    l_recon: Option<NodeId>,
    lambda: f64,
) -> Result<NodeId> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    match l_recon {
        None => Ok(l_ssl),
        Some(r) => {
            let weighted = tape.scale(r, lambda)?;
            tape.add(l_ssl, weighted)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream1;
    use rand::Rng as _;

    fn tokens_from_rows<T: Scalar>(tape: &mut Tape<T>, rows: &[Vec<f64>]) -> NodeId {
        // One token per sample so pooled embeddings equal the rows.
        let b = rows.len();
        let d = rows[0].len();
        let data: Vec<T> = rows.iter().flatten().map(|&v| T::of(v)).collect();
        tape.leaf(TensorData::new(vec![b, 1, d], data)).unwrap()
    }

    #[test]
    fn well_spread_identical_views_have_zero_loss() {
        // Batch std of each channel is >= 1 (after the eps) and the two
        // channels are uncorrelated, so every term vanishes.
        let rows = vec![
            vec![2.0, 0.0],
            vec![-2.0, 0.0],
            vec![0.0, 2.0],
            vec![0.0, -2.0],
        ];
        let mut tape = Tape::<f64>::new();
        let a = tokens_from_rows(&mut tape, &rows);
        let b = tokens_from_rows(&mut tape, &rows);
        let nodes = invariance_loss(&mut tape, a, b).unwrap();
        assert!(tape.scalar_value(nodes.invariance) == 0.0);
        assert!(tape.scalar_value(nodes.variance) < 1e-12);
        assert!(tape.scalar_value(nodes.covariance) < 1e-12);
        assert!(tape.scalar_value(nodes.total) < 1e-10);
    }

    #[test]
    fn collapsed_batch_saturates_the_variance_hinge() {
        let rows = vec![vec![0.3, -0.7], vec![0.3, -0.7], vec![0.3, -0.7]];
        let mut tape = Tape::<f64>::new();
        let a = tokens_from_rows(&mut tape, &rows);
        let b = tokens_from_rows(&mut tape, &rows);
        let nodes = invariance_loss(&mut tape, a, b).unwrap();
        // std = sqrt(eps) per channel, so the hinge is 1 - sqrt(1e-4) per view.
        let expected = 1.0 - 1e-4f64.sqrt();
        assert!((tape.scalar_value(nodes.variance) - expected).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_evaluation_on_eight_numbers() {
        // B=2, d=2, hand-specified embeddings; oracle below evaluates the
        // three terms with plain arithmetic, independent of the tape.
        let e1 = [[0.5, -0.25], [-0.1, 0.6]];
        let e2 = [[0.4, 0.1], [0.0, -0.2]];

        let inv_oracle = {
            let mut s = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    let d: f64 = e1[i][j] - e2[i][j];
                    s += d * d;
                }
            }
            s / 4.0
        };
        let view_terms = |e: &[[f64; 2]; 2]| {
            let mut var_term = 0.0;
            let mut cov01 = 0.0;
            let means = [(e[0][0] + e[1][0]) / 2.0, (e[0][1] + e[1][1]) / 2.0];
            for j in 0..2 {
                let var = (0..2).map(|i| (e[i][j] - means[j]).powi(2)).sum::<f64>() / 1.0;
                var_term += (1.0 - (var + 1e-4).sqrt()).max(0.0);
            }
            var_term /= 2.0;
            for i in 0..2 {
                cov01 += (e[i][0] - means[0]) * (e[i][1] - means[1]);
            }
            cov01 /= 1.0;
            // Two symmetric off-diagonal entries; their mean square is cov01^2.
            (var_term, cov01 * cov01)
        };
        let (v1, c1) = view_terms(&e1);
        let (v2, c2) = view_terms(&e2);
        let var_oracle = (v1 + v2) / 2.0;
        let cov_oracle = (c1 + c2) / 2.0;
        let total_oracle = 25.0 * inv_oracle + 25.0 * var_oracle + cov_oracle;

        let mut tape = Tape::<f64>::new();
        let a = tokens_from_rows(&mut tape, &[e1[0].to_vec(), e1[1].to_vec()]);
        let b = tokens_from_rows(&mut tape, &[e2[0].to_vec(), e2[1].to_vec()]);
        let nodes = invariance_loss(&mut tape, a, b).unwrap();
        assert!((tape.scalar_value(nodes.invariance) - inv_oracle).abs() < 1e-12);
        assert!((tape.scalar_value(nodes.variance) - var_oracle).abs() < 1e-12);
        assert!((tape.scalar_value(nodes.covariance) - cov_oracle).abs() < 1e-12);
        assert!((tape.scalar_value(nodes.total) - total_oracle).abs() < 1e-11);
    }

    #[test]
    fn invariance_loss_is_symmetric_and_batch_permutation_invariant() {
        let mut rng = stream1(3, "loss", 0);
        let rows: Vec<Vec<f64>> =
            (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let rows2: Vec<Vec<f64>> =
            (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();

        let eval = |xs: &[Vec<f64>], ys: &[Vec<f64>]| {
            let mut tape = Tape::<f64>::new();
            let a = tokens_from_rows(&mut tape, xs);
            let b = tokens_from_rows(&mut tape, ys);
            let nodes = invariance_loss(&mut tape, a, b).unwrap();
            tape.scalar_value(nodes.total)
        };
        let base = eval(&rows, &rows2);
        assert!((base - eval(&rows2, &rows)).abs() < 1e-12, "symmetry");

        let perm = [2usize, 0, 3, 1];
        let rows_p: Vec<_> = perm.iter().map(|&i| rows[i].clone()).collect();
        let rows2_p: Vec<_> = perm.iter().map(|&i| rows2[i].clone()).collect();
        assert!((base - eval(&rows_p, &rows2_p)).abs() < 1e-12, "permutation invariance");
    }

    #[test]
    fn batch_of_one_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tokens_from_rows(&mut tape, &[vec![1.0, 2.0]]);
        let b = tokens_from_rows(&mut tape, &[vec![1.0, 2.0]]);
        assert!(invariance_loss(&mut tape, a, b).is_err());
    }

    #[test]
    fn reconstruction_loss_basics() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(TensorData::new(vec![1, 3, 2, 2], vec![0.5; 12])).unwrap();
        let y = tape.leaf(TensorData::new(vec![1, 3, 2, 2], vec![0.5; 12])).unwrap();
        let zero = reconstruction_loss(&mut tape, &[x], &[y]).unwrap();
        assert_eq!(tape.scalar_value(zero), 0.0);

        let z = tape.leaf(TensorData::new(vec![1, 3, 2, 2], vec![0.0; 12])).unwrap();
        let quarter = reconstruction_loss(&mut tape, &[x], &[z]).unwrap();
        assert_eq!(tape.scalar_value(quarter), 0.25);

        // Random 12-pixel pair against the direct sum-of-squares oracle.
        let mut rng = stream1(4, "recon", 0);
        let pv: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
        let tv: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
        let oracle = pv.iter().zip(&tv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 12.0;
        let p = tape.leaf(TensorData::new(vec![1, 3, 2, 2], pv)).unwrap();
        let t = tape.leaf(TensorData::new(vec![1, 3, 2, 2], tv)).unwrap();
        let l = reconstruction_loss(&mut tape, &[p], &[t]).unwrap();
        assert!((tape.scalar_value(l) - oracle).abs() < 1e-15);

        // K mismatch.
        assert!(reconstruction_loss(&mut tape, &[p, t], &[t]).is_err());
        assert!(reconstruction_loss(&mut tape, &[], &[]).is_err());
    }

    #[test]
    fn total_loss_is_affine_in_recon() {
        let mut tape = Tape::<f64>::new();
        let ssl = tape.leaf(TensorData::new(vec![], vec![0.3])).unwrap();
        let rec = tape.leaf(TensorData::new(vec![], vec![0.2])).unwrap();
        let t0 = total_loss(&mut tape, ssl, Some(rec), 0.0).unwrap();
        assert_eq!(tape.scalar_value(t0), 0.3);
        let t1 = total_loss(&mut tape, ssl, Some(rec), 1.0).unwrap();
        assert!((tape.scalar_value(t1) - 0.5).abs() < 1e-15);
        let t5 = {
            let ssl2 = tape.leaf(TensorData::new(vec![], vec![0.2])).unwrap();
            let rec2 = tape.leaf(TensorData::new(vec![], vec![0.1])).unwrap();
            total_loss(&mut tape, ssl2, Some(rec2), 5.0).unwrap()
        };
        assert!((tape.scalar_value(t5) - 0.7).abs() < 1e-15);
        assert!(total_loss(&mut tape, ssl, Some(rec), -1.0).is_err());

        // Exact linearity with slope lambda.
        let lambda = 2.75;
        let v1 = 0.11f64;
        let v2 = 0.47f64;
        let at = |v: f64| {
            let mut tape = Tape::<f64>::new();
            let s = tape.leaf(TensorData::new(vec![], vec![0.05])).unwrap();
            let r = tape.leaf(TensorData::new(vec![], vec![v])).unwrap();
            let t = total_loss(&mut tape, s, Some(r), lambda).unwrap();
            tape.scalar_value(t)
        };
        assert!(((at(v2) - at(v1)) / (v2 - v1) - lambda).abs() < 1e-12);
    }

    #[test]
    fn breakdown_combination_matches_graph_arithmetic() {
        let bd = LossBreakdown::combine(0.3f32, 0.2f32, 1.5, (0.0, 0.0, 0.0)).unwrap();
        assert_eq!(bd.l_total, 0.3f32 + 1.5f32 * 0.2f32);
        assert!(LossBreakdown::combine(0.1, 0.1, -0.5, (0.0, 0.0, 0.0)).is_err());
    }
}
