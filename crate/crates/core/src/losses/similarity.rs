use crate::error::{Error, Result};
use crate::linalg::{cosine_similarity, neg_abs_distance, Matrix};

use super::FeatureBatch;

/// `S[i][j] = -|y_i - y_j|` over integer labels.
pub fn label_similarity(labels: &[usize]) -> Result<Matrix> {
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = labels.len();
    Ok(Matrix::from_fn(n, n, |i, j| neg_abs_distance(labels[i] as f64, labels[j] as f64)))
}

/// Pairwise cosine similarity of the batch features.
pub fn feature_similarity(batch: &FeatureBatch) -> Result<Matrix> {
    cosine_matrix((0..batch.len()).map(|i| batch.feature(i)).collect::<Vec<_>>().as_slice())
}

/// Pairwise cosine similarity of class prototypes.
pub fn prototype_similarity(protos: &[&[f64]]) -> Result<Matrix> {
    cosine_matrix(protos)
}

fn cosine_matrix(rows: &[&[f64]]) -> Result<Matrix> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let c = if i == j {
                // still validates the vector
                cosine_similarity(rows[i], rows[i])?;
                1.0
            } else {
                cosine_similarity(rows[i], rows[j])?
            };
            s.set(i, j, c);
            s.set(j, i, c);
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn label_similarity_examples() {
        let s = label_similarity(&[1, 2, 3]).unwrap();
        assert_eq!(s.as_slice(), &[0.0, -1.0, -2.0, -1.0, 0.0, -1.0, -2.0, -1.0, 0.0]);
        let s = label_similarity(&[2, 2]).unwrap();
        assert!(s.as_slice().iter().all(|&v| v == 0.0));
        assert!(matches!(label_similarity(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn label_similarity_shape_invariants() {
        let s = label_similarity(&[3, 1, 2, 2, 1, 3, 3]).unwrap();
        assert!(s.is_symmetric(0.0));
        for i in 0..7 {
            assert_eq!(s.get(i, i), 0.0);
            assert!(s.row(i).iter().all(|&v| v <= 0.0));
        }
    }

    #[test]
    fn feature_similarity_orthonormal() {
        let b = FeatureBatch::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 2], 2).unwrap();
        assert_eq!(feature_similarity(&b).unwrap().as_slice(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn feature_similarity_matches_pairwise_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> =
            (0..6).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let b = FeatureBatch::from_rows(&rows, vec![1, 1, 2, 2, 3, 3], 3).unwrap();
        let s = feature_similarity(&b).unwrap();
        for i in 0..6 {
            assert!((s.get(i, i) - 1.0).abs() <= 1e-9);
            for j in 0..6 {
                if i == j {
                    continue;
                }
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                let ni = rows[i].iter().map(|a| a * a).sum::<f64>().sqrt();
                let nj = rows[j].iter().map(|a| a * a).sum::<f64>().sqrt();
                assert!((s.get(i, j) - dot / (ni * nj)).abs() <= 1e-12);
            }
        }
        assert!(s.is_symmetric(1e-9));
    }

    #[test]
    fn feature_similarity_rejects_zero_feature() {
        let b = FeatureBatch::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]], vec![1, 2], 2).unwrap();
        assert!(matches!(feature_similarity(&b), Err(Error::ZeroVector)));
    }
}
