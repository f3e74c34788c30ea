use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roi::similarity::SimilarityMatrix;
use crate::types::{MaskSet, RoiPair, RoiPairing};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchStrategy {
    /// Repeatedly take the most similar unused pair.
    #[default]
    Greedy,
    /// Maximum total similarity assignment (Hungarian), restricted to
    /// entries above the threshold.
    Optimal,
}

/// A selected `(moving, fixed)` index pair with its similarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexPair {
    pub moving: usize,
    pub fixed: usize,
    pub similarity: f64,
}

fn by_similarity_then_index(a: &IndexPair, b: &IndexPair) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then(a.moving.cmp(&b.moving))
        .then(a.fixed.cmp(&b.fixed))
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [0, 1]")));
    }
    Ok(())
}

/// Index pairs with similarity strictly above `epsilon`, each row and column
/// used at most once, sorted by descending similarity then `(i, j)`.
pub fn select_pairs(s: &SimilarityMatrix, epsilon: f64, strategy: MatchStrategy) -> Result<Vec<IndexPair>> {
    check_epsilon(epsilon)?;
    let mut out = match strategy {
        MatchStrategy::Greedy => greedy(s, epsilon),
        MatchStrategy::Optimal => optimal(s, epsilon),
    };
    out.sort_by(by_similarity_then_index);
    Ok(out)
}

fn greedy(s: &SimilarityMatrix, epsilon: f64) -> Vec<IndexPair> {
    let mut candidates: Vec<IndexPair> = (0..s.rows())
        .flat_map(|i| (0..s.cols()).map(move |j| (i, j)))
        .map(|(i, j)| IndexPair {
            moving: i,
            fixed: j,
            similarity: s.get(i, j),
        })
        .filter(|p| p.similarity > epsilon)
        .collect();
    candidates.sort_by(by_similarity_then_index);

    let mut row_used = vec![false; s.rows()];
    let mut col_used = vec![false; s.cols()];
    let mut out = Vec::new();
    for p in candidates {
        if !row_used[p.moving] && !col_used[p.fixed] {
            row_used[p.moving] = true;
            col_used[p.fixed] = true;
            out.push(p);
        }
    }
    out
}

/// Hungarian algorithm with potentials on the padded square matrix,
/// minimizing negative thresholded similarity.
fn optimal(s: &SimilarityMatrix, epsilon: f64) -> Vec<IndexPair> {
    let n = s.rows().max(s.cols());
    if n == 0 {
        return Vec::new();
    }
    let weight = |i: usize, j: usize| -> f64 {
        if i < s.rows() && j < s.cols() && s.get(i, j) > epsilon {
            s.get(i, j)
        } else {
            0.0
        }
    };
    // 1-based arrays, column 0 / row 0 are sentinels.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut assigned_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        assigned_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = -weight(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[assigned_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n)
        .filter_map(|j| {
            let i = assigned_row[j];
            let (row, col) = (i - 1, j - 1);
            (row < s.rows() && col < s.cols() && s.get(row, col) > epsilon).then(|| IndexPair {
                moving: row,
                fixed: col,
                similarity: s.get(row, col),
            })
        })
        .collect()
}

/// Builds the paired-mask registration output from the selected indices.
pub fn match_rois(
    masks_x: &MaskSet,
    masks_y: &MaskSet,
    s: &SimilarityMatrix,
    epsilon: f64,
    strategy: MatchStrategy,
) -> Result<RoiPairing> {
    if s.rows() != masks_x.len() || s.cols() != masks_y.len() {
        return Err(Error::DimMismatch(format!(
            "similarity matrix {}x{} for {} moving and {} fixed masks",
            s.rows(),
            s.cols(),
            masks_x.len(),
            masks_y.len()
        )));
    }
    let pairs = select_pairs(s, epsilon, strategy)?
        .into_iter()
        .map(|p| RoiPair {
            moving_index: p.moving,
            fixed_index: p.fixed,
            moving_mask: masks_x.masks()[p.moving].clone(),
            fixed_mask: masks_y.masks()[p.fixed].clone(),
            similarity: p.similarity,
        })
        .collect();
    Ok(RoiPairing {
        pairs,
        epsilon_used: epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sm(rows: usize, cols: usize, v: &[f64]) -> SimilarityMatrix {
        SimilarityMatrix::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn diagonal_pairs() {
        let s = sm(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        let p = select_pairs(&s, 0.8, MatchStrategy::Greedy).unwrap();
        let idx: Vec<(usize, usize)> = p.iter().map(|p| (p.moving, p.fixed)).collect();
        assert_eq!(idx, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn nothing_above_threshold() {
        let s = sm(2, 3, &[0.5, 0.8, 0.1, 0.2, 0.3, 0.8]);
        assert!(select_pairs(&s, 0.8, MatchStrategy::Greedy).unwrap().is_empty());
        assert!(select_pairs(&s, 0.8, MatchStrategy::Optimal).unwrap().is_empty());
    }

    #[test]
    fn ties_break_lexicographically() {
        let s = sm(2, 2, &[0.9, 0.9, 0.9, 0.9]);
        let p = select_pairs(&s, 0.5, MatchStrategy::Greedy).unwrap();
        let idx: Vec<(usize, usize)> = p.iter().map(|p| (p.moving, p.fixed)).collect();
        assert_eq!(idx, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn optimal_beats_greedy_on_total() {
        // Greedy takes (0,0)=0.95 and then (1,1)=0.1 is below threshold.
        let s = sm(2, 2, &[0.95, 0.9, 0.9, 0.1]);
        let g = select_pairs(&s, 0.5, MatchStrategy::Greedy).unwrap();
        let o = select_pairs(&s, 0.5, MatchStrategy::Optimal).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(o.len(), 2);
        let total: f64 = o.iter().map(|p| p.similarity).sum();
        assert!((total - 1.8).abs() < 1e-12);
    }

    #[test]
    fn optimal_matches_brute_force_on_small_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let (r, c) = (rng.gen_range(1..5), rng.gen_range(1..5));
            let v: Vec<f64> = (0..r * c).map(|_| rng.gen::<f64>()).collect();
            let s = sm(r, c, &v);
            let eps = 0.3;
            let got: f64 = select_pairs(&s, eps, MatchStrategy::Optimal)
                .unwrap()
                .iter()
                .map(|p| p.similarity)
                .sum();
            assert!((got - brute_best(&s, eps, 0, &mut vec![false; c])).abs() < 1e-9);
        }
    }

    fn brute_best(s: &SimilarityMatrix, eps: f64, row: usize, used: &mut Vec<bool>) -> f64 {
        if row == s.rows() {
            return 0.0;
        }
        let mut best = brute_best(s, eps, row + 1, used);
        for j in 0..s.cols() {
            if !used[j] && s.get(row, j) > eps {
                used[j] = true;
                best = best.max(s.get(row, j) + brute_best(s, eps, row + 1, used));
                used[j] = false;
            }
        }
        best
    }

    #[test]
    fn shape_mismatch_rejected() {
        let s = sm(1, 1, &[1.0]);
        assert!(match_rois(&MaskSet::default(), &MaskSet::default(), &s, 0.5, MatchStrategy::Greedy).is_err());
        assert!(select_pairs(&s, 1.5, MatchStrategy::Greedy).is_err());
    }
}
