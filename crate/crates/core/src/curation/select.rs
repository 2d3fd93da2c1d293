use std::collections::HashSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::Manifest;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Manual,
    ClipSim,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Random => "Random",
            Strategy::Manual => "Manual",
            Strategy::ClipSim => "CLIP-sim",
        }
    }
}

/// How a candidate's similarities to several targets become one score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Similarity to the nearest target.
    #[default]
    Max,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub strategy: Strategy,
    pub ids: Vec<String>,
    /// Per-id scores, non-increasing; `clip_sim` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    pub targets: String,
}

/// `a.b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Selection(format!(
            "embedding widths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Selection("cosine similarity of a zero vector is undefined".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Ranks candidates by aggregated cosine similarity to `targets` and keeps
/// the best `n`; ties go to the lexicographically smaller id.
pub fn select_top_n(targets: &[Vec<f64>], candidates: &Manifest, n: usize, aggregation: Aggregation) -> Result<SelectionResult> {
    if targets.is_empty() {
        return Err(Error::Selection("no target embeddings".into()));
    }
    if n > candidates.len() {
        return Err(Error::Selection(format!(
            "cannot select {n} of {} candidates",
            candidates.len()
        )));
    }
    let mut scored = Vec::with_capacity(candidates.len());
    for e in &candidates.entries {
        let v = e
            .embedding
            .as_ref()
            .ok_or_else(|| Error::Selection(format!("candidate `{}` has no embedding", e.id)))?;
        let sims = targets
            .iter()
            .map(|t| cosine_similarity(t, v))
            .collect::<Result<Vec<_>>>()?;
        let score = match aggregation {
            Aggregation::Max => sims.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregation::Mean => sims.iter().sum::<f64>() / sims.len() as f64,
        };
        scored.push((score, e.id.as_str()));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.truncate(n);
    Ok(SelectionResult {
        strategy: Strategy::ClipSim,
        ids: scored.iter().map(|(_, id)| id.to_string()).collect(),
        scores: Some(scored.iter().map(|(s, _)| *s).collect()),
        targets: format!("{} target(s), {aggregation:?} aggregation", targets.len()),
    })
}

/// Uniform sample of `n` ids without replacement.
pub fn select_random(candidates: &Manifest, n: usize, seed: u64) -> Result<SelectionResult> {
    if n > candidates.len() {
        return Err(Error::Selection(format!(
            "cannot select {n} of {} candidates",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = index::sample(&mut rng, candidates.len(), n)
        .into_iter()
        .map(|i| candidates.entries[i].id.clone())
        .collect();
    Ok(SelectionResult {
        strategy: Strategy::Random,
        ids,
        scores: None,
        targets: "none".into(),
    })
}

/// Passes an explicit id list through after checking it against the pool.
pub fn select_manual(candidates: &Manifest, ids: &[String]) -> Result<SelectionResult> {
    let mut seen = HashSet::new();
    for id in ids {
        if candidates.get(id).is_none() {
            return Err(Error::Selection(format!("unknown candidate id `{id}`")));
        }
        if !seen.insert(id) {
            return Err(Error::Selection(format!("candidate id `{id}` listed twice")));
        }
    }
    Ok(SelectionResult {
        strategy: Strategy::Manual,
        ids: ids.to_vec(),
        scores: None,
        targets: "hand-picked".into(),
    })
}

/// The entries of `pool` named by a selection, in selection order.
pub fn apply_selection(pool: &Manifest, selection: &SelectionResult) -> Result<Manifest> {
    let entries = selection
        .ids
        .iter()
        .map(|id| {
            pool.get(id)
                .cloned()
                .ok_or_else(|| Error::Selection(format!("unknown candidate id `{id}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Manifest::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::manifest::tests::entry;
    use crate::curation::manifest::Domain;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use std::cmp::Ordering;

    fn score_order(a: &(f64, String), b: &(f64, String)) -> Ordering {
        b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1))
    }

    fn pool(vectors: &[Vec<f64>]) -> Manifest {
        Manifest::new(
            vectors
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let mut e = entry(&format!("c{i:05}"), Domain::Synthetic);
                    e.embedding = Some(v.clone());
                    e
                })
                .collect(),
        )
        .unwrap()
    }

    fn random_vectors(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect()
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((s - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    /// Repeated arg-max over the remaining candidates.
    fn brute_force(targets: &[Vec<f64>], vectors: &[Vec<f64>], n: usize) -> Vec<String> {
        let score = |v: &Vec<f64>| {
            targets
                .iter()
                .map(|t| {
                    let dot: f64 = t.iter().zip(v).map(|(a, b)| a * b).sum();
                    let nt = t.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    (dot / (nt * nv)).clamp(-1.0, 1.0)
                })
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let mut left: Vec<(f64, String)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (score(v), format!("c{i:05}")))
            .collect();
        let mut out = Vec::new();
        for _ in 0..n {
            let best = (0..left.len())
                .min_by(|&a, &b| score_order(&left[a], &left[b]))
                .unwrap();
            out.push(left.swap_remove(best).1);
        }
        out
    }

    #[test]
    fn matches_brute_force_and_is_scale_invariant() {
        let vectors = random_vectors(100, 6, 1);
        let targets = random_vectors(3, 6, 2);
        let sel = select_top_n(&targets, &pool(&vectors), 10, Aggregation::Max).unwrap();
        assert_eq!(sel.ids, brute_force(&targets, &vectors, 10));
        let s = sel.scores.as_ref().unwrap();
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scaled: Vec<Vec<f64>> = vectors
            .iter()
            .map(|v| {
                let c: f64 = rng.random_range(0.01..100.0);
                v.iter().map(|x| x * c).collect()
            })
            .collect();
        let again = select_top_n(&targets, &pool(&scaled), 10, Aggregation::Max).unwrap();
        assert_eq!(again.ids, sel.ids);
    }

    #[test]
    fn full_selection_and_ties() {
        let vectors = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 1.0]];
        let sel = select_top_n(&[vec![1.0, 0.0]], &pool(&vectors), 3, Aggregation::Mean).unwrap();
        assert_eq!(sel.ids, vec!["c00000", "c00001", "c00002"]);
        assert!(select_top_n(&[vec![1.0, 0.0]], &pool(&vectors), 4, Aggregation::Max).is_err());
        let mut bare = pool(&vectors);
        bare.entries[0].embedding = None;
        assert!(select_top_n(&[vec![1.0, 0.0]], &bare, 1, Aggregation::Max).is_err());
    }

    #[test]
    fn random_and_manual() {
        let p = pool(&random_vectors(20, 2, 4));
        let a = select_random(&p, 5, 9).unwrap();
        assert_eq!(a, select_random(&p, 5, 9).unwrap());
        assert_eq!(a.ids.iter().collect::<HashSet<_>>().len(), 5);
        assert!(select_random(&p, 21, 9).is_err());
        assert!(select_manual(&p, &[]).unwrap().ids.is_empty());
        assert!(select_manual(&p, &["nope".to_string()]).is_err());
        let m = select_manual(&p, &["c00003".to_string()]).unwrap();
        assert_eq!(apply_selection(&p, &m).unwrap().entries[0].id, "c00003");
    }

    #[test]
    fn random_inclusion_is_uniform() {
        let p = pool(&random_vectors(20, 2, 5));
        let trials = 10_000;
        let n = 5;
        let mut hits = std::collections::HashMap::new();
        for s in 0..trials {
            for id in select_random(&p, n, s).unwrap().ids {
                *hits.entry(id).or_insert(0usize) += 1;
            }
        }
        let q = n as f64 / 20.0;
        let sd = (q * (1.0 - q) / trials as f64).sqrt();
        for id in p.ids() {
            let rate = hits.get(id).copied().unwrap_or(0) as f64 / trials as f64;
            assert!((rate - q).abs() < 2.576 * sd * 1.5, "{id}: {rate}");
        }
    }
}
