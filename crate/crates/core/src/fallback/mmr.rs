//! Cosine similarity and Maximal Marginal Relevance selection.

use super::FallbackError;

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64, FallbackError> {
    if a.len() != b.len() {
        return Err(FallbackError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(FallbackError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Greedy MMR over precomputed similarities.
///
/// `relevance[i]` is the similarity of candidate `i` to the query and
/// `pairwise(i, j)` the similarity between candidates. Candidates below
/// `min_sim` are dropped first. Each step picks the argmax of
/// `λ·rel − (1−λ)·max_sim_to_selected` (pure relevance on the first step),
/// breaking ties by the lower id. Returns indices in pick order.
pub fn mmr_select_matrix(
    ids: &[String],
    relevance: &[f64],
    pairwise: &dyn Fn(usize, usize) -> f64,
    k: usize,
    lambda: f64,
    min_sim: f64,
) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..ids.len()).filter(|&i| relevance[i] >= min_sim).collect();
    let mut picked: Vec<usize> = Vec::with_capacity(k.min(pool.len()));
    while picked.len() < k && !pool.is_empty() {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &c) in pool.iter().enumerate() {
            let score = if picked.is_empty() {
                relevance[c]
            } else {
                let redundancy = picked.iter().map(|&s| pairwise(c, s)).fold(f64::NEG_INFINITY, f64::max);
                lambda * relevance[c] - (1.0 - lambda) * redundancy
            };
            let better = match best {
                None => true,
                Some((bpos, bscore)) => score > bscore || (score == bscore && ids[c] < ids[pool[bpos]]),
            };
            if better {
                best = Some((pos, score));
            }
        }
        let (pos, _) = best.expect("pool is non-empty");
        picked.push(pool.remove(pos));
    }
    picked
}

/// MMR over vectors; returns the selected ids in pick order.
pub fn mmr_select(
    query_vec: &[f64],
    candidates: &[(String, Vec<f64>)],
    k: usize,
    lambda: f64,
    min_sim: f64,
) -> Result<Vec<String>, FallbackError> {
    let relevance = candidates
        .iter()
        .map(|(_, v)| cosine_sim(query_vec, v))
        .collect::<Result<Vec<f64>, _>>()?;
    let n = candidates.len();
    let mut pair = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s = cosine_sim(&candidates[i].1, &candidates[j].1)?;
            pair[i * n + j] = s;
            pair[j * n + i] = s;
        }
    }
    let ids: Vec<String> = candidates.iter().map(|(id, _)| id.clone()).collect();
    let picked = mmr_select_matrix(&ids, &relevance, &|i, j| pair[i * n + j], k, lambda, min_sim);
    Ok(picked.into_iter().map(|i| ids[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        assert!((cosine_sim(&[1.0, 0.0], &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let h = 1.0 / 2f64.sqrt();
        assert!((cosine_sim(&[1.0, 0.0], &[h, h]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]), Err(FallbackError::ZeroVector));
        assert_eq!(cosine_sim(&[1.0], &[1.0, 0.0]), Err(FallbackError::DimensionMismatch(1, 2)));
    }

    fn ids(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn worked_example() {
        let names = ids(&["c1", "c2", "c3"]);
        let rel = [0.9, 0.85, 0.4];
        let pair = |i: usize, j: usize| -> f64 {
            match (i.min(j), i.max(j)) {
                (a, b) if a == b => 1.0,
                (0, 1) => 0.95,
                (0, 2) => 0.1,
                _ => 0.2,
            }
        };
        let got = mmr_select_matrix(&names, &rel, &pair, 2, 0.3, 0.30);
        assert_eq!(got, [0, 2]);
    }

    #[test]
    fn lambda_one_is_top_k() {
        let names = ids(&["a", "b", "c", "d"]);
        let rel = [0.5, 0.9, 0.7, 0.8];
        let got = mmr_select_matrix(&names, &rel, &|_, _| 0.99, 3, 1.0, 0.0);
        assert_eq!(got, [1, 3, 2]);
    }

    #[test]
    fn filter_can_empty_the_pool() {
        let names = ids(&["a", "b"]);
        assert!(mmr_select_matrix(&names, &[0.2, 0.2], &|_, _| 0.0, 2, 0.3, 0.30).is_empty());
    }

    #[test]
    fn ties_go_to_lower_id() {
        let names = ids(&["b", "a"]);
        assert_eq!(mmr_select_matrix(&names, &[0.5, 0.5], &|_, _| 0.0, 1, 0.3, 0.0), [1]);
    }

    #[test]
    fn vector_form() {
        let cands = vec![
            ("c1".to_string(), vec![1.0, 0.0]),
            ("c2".to_string(), vec![0.0, 1.0]),
        ];
        assert_eq!(mmr_select(&[1.0, 0.1], &cands, 1, 0.3, 0.0).unwrap(), ["c1"]);
    }
}
