//! Domain types for conversation runs plus the elementary geometry and rank
//! helpers everything else is built on.
//!
//! Ranks are 1-based. Scores are "higher is better"; within a turn, items are
//! ordered by score descending with ties broken by item id ascending.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense embedding of an item or query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Embedding(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Checks finiteness, non-emptiness and non-zero norm.
    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::validation("empty embedding"));
        }
        if let Some(i) = self.0.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite embedding entry at index {i}"
            )));
        }
        if self.norm() == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(())
    }

    /// Returns a unit-length copy.
    pub fn normalized(&self) -> Result<Embedding> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroNorm);
        }
        Ok(Embedding(self.0.iter().map(|v| v / n).collect()))
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(v: Vec<f64>) -> Self {
        Embedding(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub id: String,
    pub score: f64,
    pub embedding: Embedding,
}

impl RankedItem {
    pub fn new(id: impl Into<String>, score: f64, embedding: impl Into<Embedding>) -> Self {
        RankedItem {
            id: id.into(),
            score,
            embedding: embedding.into(),
        }
    }
}

/// Canonical item order: score descending, then id ascending.
pub fn item_order(a: &RankedItem, b: &RankedItem) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// The ranked list retrieved at one turn of a conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRanking {
    pub turn: usize,
    pub query_embedding: Option<Embedding>,
    pub critique: Option<String>,
    pub items: Vec<RankedItem>,
}

impl TurnRanking {
    /// Builds a ranking from items in arbitrary order, sorting them canonically.
    pub fn from_unsorted(turn: usize, mut items: Vec<RankedItem>) -> Self {
        items.sort_by(item_order);
        TurnRanking {
            turn,
            query_embedding: None,
            critique: None,
            items,
        }
    }

    pub fn with_query(mut self, query: impl Into<Embedding>) -> Self {
        self.query_embedding = Some(query.into());
        self
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// The first `min(top_n, len)` items.
    pub fn top(&self, top_n: usize) -> &[RankedItem] {
        &self.items[..top_n.min(self.items.len())]
    }

    /// 1-based position of `target_id`, if present.
    pub fn rank_of(&self, target_id: &str) -> Option<usize> {
        self.items
            .iter()
            .position(|it| it.id == target_id)
            .map(|p| p + 1)
    }

    /// Checks ordering, id uniqueness and per-item finiteness. Returns the
    /// embedding dimension shared by the turn (None when the turn is empty).
    pub fn validate(&self) -> Result<Option<usize>> {
        if self.turn == 0 {
            return Err(Error::validation("turn index must be >= 1"));
        }
        let mut dim = None;
        let mut seen = std::collections::HashSet::with_capacity(self.items.len());
        for (pos, item) in self.items.iter().enumerate() {
            if !item.score.is_finite() {
                return Err(Error::validation(format!(
                    "non-finite score for item {} at position {}",
                    item.id,
                    pos + 1
                )));
            }
            item.embedding
                .validate()
                .map_err(|e| Error::validation(format!("item {}: {e}", item.id)))?;
            check_dim(&mut dim, item.embedding.dim())?;
            if !seen.insert(item.id.as_str()) {
                return Err(Error::validation(format!("duplicate item id {}", item.id)));
            }
            if pos > 0 && item_order(&self.items[pos - 1], item) == Ordering::Greater {
                return Err(Error::validation(format!(
                    "items not sorted at position {}",
                    pos + 1
                )));
            }
        }
        if let Some(q) = &self.query_embedding {
            q.validate()
                .map_err(|e| Error::validation(format!("query embedding: {e}")))?;
            check_dim(&mut dim, q.dim())?;
        }
        Ok(dim)
    }
}

fn check_dim(expected: &mut Option<usize>, got: usize) -> Result<()> {
    match *expected {
        None => {
            *expected = Some(got);
            Ok(())
        }
        Some(e) if e == got => Ok(()),
        Some(e) => Err(Error::validation(format!(
            "dimension mismatch: expected {e}, got {got}"
        ))),
    }
}

/// One conversation: a target item and the rankings retrieved at turns 1..K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationRun {
    pub conversation_id: String,
    pub target_id: String,
    /// Full-catalogue rank of the target per turn, when known.
    #[serde(default)]
    pub target_ranks: Vec<Option<usize>>,
    pub turns: Vec<TurnRanking>,
}

impl ConversationRun {
    pub fn num_turns(&self) -> usize {
        self.turns.len()
    }

    /// Ranking at the 1-based turn `k`.
    pub fn turn(&self, k: usize) -> Option<&TurnRanking> {
        k.checked_sub(1).and_then(|i| self.turns.get(i))
    }

    /// Best known rank of the target at turn `k`: the position in the stored
    /// list if present there, otherwise the recorded full-catalogue rank.
    pub fn target_rank_at(&self, k: usize) -> Option<usize> {
        let stored = self.turn(k).and_then(|t| t.rank_of(&self.target_id));
        stored.or_else(|| self.target_ranks.get(k - 1).copied().flatten())
    }

    /// Validates every structural invariant; returns the embedding dimension.
    pub fn validate(&self) -> Result<Option<usize>> {
        let ctx =
            |e: Error| Error::validation(format!("conversation {}: {e}", self.conversation_id));
        if self.turns.len() < 2 {
            return Err(ctx(Error::validation(format!(
                "needs at least 2 turns, found {}",
                self.turns.len()
            ))));
        }
        if !self.target_ranks.is_empty() && self.target_ranks.len() != self.turns.len() {
            return Err(ctx(Error::validation(format!(
                "target_ranks has {} entries for {} turns",
                self.target_ranks.len(),
                self.turns.len()
            ))));
        }
        if self.target_ranks.contains(&Some(0)) {
            return Err(ctx(Error::validation("target rank 0 (ranks are 1-based)")));
        }
        let mut dim = None;
        for (i, t) in self.turns.iter().enumerate() {
            if t.turn != i + 1 {
                return Err(ctx(Error::validation(format!(
                    "non-consecutive turns: expected {}, found {}",
                    i + 1,
                    t.turn
                ))));
            }
            let d = t
                .validate()
                .map_err(|e| ctx(Error::validation(format!("turn {}: {e}", t.turn))))?;
            if let Some(d) = d {
                check_dim(&mut dim, d).map_err(&ctx)?;
            }
        }
        Ok(dim)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; errors on dimension mismatch or a zero-norm operand.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine for vectors already known to be valid and of equal dimension.
pub(crate) fn cos_unchecked(a: &[f64], b: &[f64]) -> f64 {
    (dot(a, b) / (norm(a) * norm(b))).clamp(-1.0, 1.0)
}

/// 1/rank of the target, 0 when it is not in the list.
pub fn reciprocal_rank(ranking: &TurnRanking, target_id: &str) -> f64 {
    ranking.rank_of(target_id).map_or(0.0, |r| 1.0 / r as f64)
}

/// Whether the target sits at rank `<= cutoff`.
pub fn found_by(ranking: &TurnRanking, target_id: &str, cutoff: usize) -> bool {
    ranking.rank_of(target_id).is_some_and(|r| r <= cutoff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ranking(ids: &[&str]) -> TurnRanking {
        let n = ids.len();
        let items = ids
            .iter()
            .enumerate()
            .map(|(i, id)| RankedItem::new(*id, (n - i) as f64, vec![1.0, i as f64]))
            .collect();
        TurnRanking::from_unsorted(1, items)
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn reciprocal_rank_and_found_by() {
        let r = ranking(&["a", "b", "c", "t"]);
        assert_eq!(reciprocal_rank(&r, "a"), 1.0);
        assert_eq!(reciprocal_rank(&r, "t"), 0.25);
        assert_eq!(reciprocal_rank(&r, "zz"), 0.0);
        assert!(found_by(&r, "a", 1));
        assert!(found_by(&r, "t", 4));
        assert!(!found_by(&r, "t", 3));
        assert!(!found_by(&r, "zz", 100));
    }

    #[test]
    fn found_by_rank_100_boundary() {
        let ids: Vec<String> = (0..101).map(|i| format!("i{i:03}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let r = ranking(&refs);
        assert!(found_by(&r, "i099", 100));
        assert!(!found_by(&r, "i100", 100));
    }

    #[test]
    fn ties_break_by_id() {
        let r = TurnRanking::from_unsorted(
            1,
            vec![
                RankedItem::new("b", 1.0, vec![1.0]),
                RankedItem::new("a", 1.0, vec![1.0]),
                RankedItem::new("c", 2.0, vec![1.0]),
            ],
        );
        let ids: Vec<_> = r.items.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert!(r.validate().is_ok());
    }

    #[test]
    fn validation_rejects_bad_turns() {
        let mut r = ranking(&["a", "b"]);
        r.items.swap(0, 1);
        assert!(r.validate().unwrap_err().to_string().contains("not sorted"));

        let mut r = ranking(&["a", "b"]);
        r.items[1].embedding = Embedding(vec![0.0, 0.0]);
        assert!(r.validate().is_err());

        let mut r = ranking(&["a", "b"]);
        r.items[1].id = "a".into();
        assert!(r.validate().unwrap_err().to_string().contains("duplicate"));

        let mut r = ranking(&["a", "b"]);
        r.items[1].embedding = Embedding(vec![1.0, 2.0, 3.0]);
        assert!(r
            .validate()
            .unwrap_err()
            .to_string()
            .contains("dimension mismatch"));
    }

    #[test]
    fn run_validation() {
        let mut t2 = ranking(&["a", "b"]);
        t2.turn = 2;
        let run = ConversationRun {
            conversation_id: "c".into(),
            target_id: "b".into(),
            target_ranks: vec![],
            turns: vec![ranking(&["a", "b"]), t2.clone()],
        };
        assert_eq!(run.validate().unwrap(), Some(2));
        assert_eq!(run.target_rank_at(2), Some(2));

        let mut bad = run.clone();
        bad.turns[1].turn = 3;
        assert!(bad
            .validate()
            .unwrap_err()
            .to_string()
            .contains("non-consecutive"));

        let mut short = run.clone();
        short.turns.pop();
        assert!(short.validate().is_err());
    }

    fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, d).prop_filter("non-zero", |v| norm(v) > 1e-6)
    }

    proptest! {
        #[test]
        fn cosine_symmetric((a, b) in (1usize..8).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d)))) {
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-15);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn cosine_scale_invariant(a in vec_strategy(5), s in 0.01f64..100.0) {
            let scaled: Vec<f64> = a.iter().map(|v| v * s).collect();
            prop_assert!((cosine_similarity(&a, &scaled).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn found_by_monotone(pos in 0usize..30, c1 in 1usize..40, extra in 0usize..40) {
            let ids: Vec<String> = (0..30).map(|i| format!("i{i:02}")).collect();
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let r = ranking(&refs);
            let t = &ids[pos];
            if found_by(&r, t, c1) {
                prop_assert!(found_by(&r, t, c1 + extra));
            }
            prop_assert!(reciprocal_rank(&r, t) > 0.0);
        }
    }
}
