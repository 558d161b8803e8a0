//! Independent reference implementations used only by tests.

use std::cmp::Ordering;

/// Exhaustive MMR: enumerates every ordered selection of `min(k, pool)`
/// eligible candidates and keeps the one whose per-step objective is
/// lexicographically best (higher score first, then the smaller id).
pub fn mmr_bruteforce(ids: &[String], rel: &[f64], sim: &[Vec<f64>], k: usize, lambda: f64, min_sim: f64) -> Vec<usize> {
    let pool: Vec<usize> = (0..ids.len()).filter(|&i| rel[i] >= min_sim).collect();
    let len = k.min(pool.len());
    let mut best: Option<Vec<usize>> = None;
    let mut current = Vec::with_capacity(len);
    let mut used = vec![false; pool.len()];
    enumerate(&pool, len, &mut used, &mut current, &mut |seq| {
        let better = match &best {
            None => true,
            Some(b) => compare(seq, b, ids, rel, sim, lambda) == Ordering::Greater,
        };
        if better {
            best = Some(seq.to_vec());
        }
    });
    best.unwrap_or_default()
}

fn enumerate(pool: &[usize], len: usize, used: &mut [bool], cur: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
    if cur.len() == len {
        visit(cur);
        return;
    }
    for i in 0..pool.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        cur.push(pool[i]);
        enumerate(pool, len, used, cur, visit);
        cur.pop();
        used[i] = false;
    }
}

fn objective(seq: &[usize], step: usize, rel: &[f64], sim: &[Vec<f64>], lambda: f64) -> f64 {
    let c = seq[step];
    if step == 0 {
        return rel[c];
    }
    let redundancy = seq[..step].iter().map(|&s| sim[c][s]).fold(f64::NEG_INFINITY, f64::max);
    lambda * rel[c] - (1.0 - lambda) * redundancy
}

fn compare(a: &[usize], b: &[usize], ids: &[String], rel: &[f64], sim: &[Vec<f64>], lambda: f64) -> Ordering {
    for step in 0..a.len() {
        let (sa, sb) = (objective(a, step, rel, sim, lambda), objective(b, step, rel, sim, lambda));
        match sa.partial_cmp(&sb).unwrap() {
            Ordering::Equal => match ids[b[step]].cmp(&ids[a[step]]) {
                Ordering::Equal => continue,
                o => return o,
            },
            o => return o,
        }
    }
    Ordering::Equal
}

/// Plain cosine similarity.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}
