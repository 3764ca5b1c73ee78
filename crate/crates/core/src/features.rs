//! Per-turn feature functions over the top of a ranking, and their assembly
//! into multi-turn feature rows.
//!
//! Coherence measures (`ac`, `wand`, `reciprocal_volume`, `a_pair_ratio`)
//! map one ranking to a scalar; `score_stats` yields (mean, max, std);
//! `pooled_embedding` and the top-1 embedding yield a `d`-vector.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cos_unchecked, dot, ConversationRun, Embedding, TurnRanking};

pub const DEFAULT_TOP_N: usize = 100;
pub const RV_RIDGE: f64 = 1e-8;
const APR_GUARD: f64 = 1e-12;

fn require(ranking: &TurnRanking, top_n: usize, min: usize, what: &str) -> Result<usize> {
    let n = top_n.min(ranking.len());
    if n < min {
        return Err(Error::invalid(format!(
            "{what} needs at least {min} item(s), turn {} has {n}",
            ranking.turn
        )));
    }
    Ok(n)
}

/// Mean, max and population standard deviation of the top-n scores.
pub fn score_stats(ranking: &TurnRanking, top_n: usize) -> Result<(f64, f64, f64)> {
    let n = require(ranking, top_n, 1, "score_stats")?;
    let scores: Vec<f64> = ranking.top(n).iter().map(|i| i.score).collect();
    let mean = scores.iter().sum::<f64>() / n as f64;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
    Ok((mean, max, var.sqrt()))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

fn unit_rows(ranking: &TurnRanking, n: usize) -> Vec<Vec<f64>> {
    ranking
        .top(n)
        .iter()
        .map(|it| {
            let v = it.embedding.as_slice();
            let nv = dot(v, v).sqrt();
            v.iter().map(|x| x / nv).collect()
        })
        .collect()
}

/// Score autocorrelation: Pearson correlation between the scores and their
/// one-step diffusion over the (non-negative) cosine similarity graph.
pub fn ac(ranking: &TurnRanking, top_n: usize) -> Result<f64> {
    let n = require(ranking, top_n, 2, "ac")?;
    let units = unit_rows(ranking, n);
    let y: Vec<f64> = ranking.top(n).iter().map(|i| i.score).collect();
    let mut diffused = vec![0.0; n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..n {
            row[j] = if i == j {
                0.0
            } else {
                dot(&units[i], &units[j]).clamp(-1.0, 1.0).max(0.0)
            };
            total += row[j];
        }
        if total > 0.0 {
            diffused[i] = row.iter().zip(&y).map(|(w, s)| w * s).sum::<f64>() / total;
        }
    }
    Ok(pearson(&y, &diffused))
}

/// Mean pairwise cosine similarity of the top-n embeddings.
pub fn wand(ranking: &TurnRanking, top_n: usize) -> Result<f64> {
    let n = require(ranking, top_n, 2, "wand")?;
    let units = unit_rows(ranking, n);
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += dot(&units[i], &units[j]).clamp(-1.0, 1.0);
        }
    }
    Ok(2.0 * sum / (n * (n - 1)) as f64)
}

/// Query used by the query-relative measures: the stored query embedding,
/// else the unit-normalized centroid of the top-n items.
pub fn query_surrogate(ranking: &TurnRanking, top_n: usize) -> Result<Embedding> {
    if let Some(q) = &ranking.query_embedding {
        return Ok(q.clone());
    }
    pooled_embedding(ranking, top_n)?.normalized()
}

/// Arithmetic mean of the top-n item embeddings.
pub fn pooled_embedding(ranking: &TurnRanking, top_n: usize) -> Result<Embedding> {
    let n = require(ranking, top_n, 1, "pooled_embedding")?;
    let top = ranking.top(n);
    let d = top[0].embedding.dim();
    let mut acc = vec![0.0; d];
    for it in top {
        for (a, v) in acc.iter_mut().zip(it.embedding.as_slice()) {
            *a += v;
        }
    }
    Ok(Embedding(acc.into_iter().map(|a| a / n as f64).collect()))
}

/// Log-determinant of a symmetric positive-definite matrix via Cholesky.
fn spd_logdet(mut a: Vec<Vec<f64>>) -> Result<f64> {
    let m = a.len();
    let mut logdet = 0.0;
    for j in 0..m {
        let diag = a[j][j] - a[j][..j].iter().map(|v| v * v).sum::<f64>();
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::validation("Gram matrix is not positive definite"));
        }
        let l = diag.sqrt();
        a[j][j] = l;
        logdet += 2.0 * l.ln();
        for i in j + 1..m {
            let s = a[i][j]
                - a[i][..j]
                    .iter()
                    .zip(&a[j][..j])
                    .map(|(x, y)| x * y)
                    .sum::<f64>();
            a[i][j] = s / l;
        }
    }
    Ok(logdet)
}

/// `-0.5 * logdet(M M^T + eps I)` with rows `m_i = e_i - q`.
///
/// Evaluated on whichever of `M M^T` (n x n) or `M^T M` (d x d) is smaller;
/// the two differ by the constant `(n - d) ln eps`.
pub fn log_reciprocal_volume(ranking: &TurnRanking, top_n: usize) -> Result<f64> {
    let n = require(ranking, top_n, 1, "reciprocal_volume")?;
    let q = query_surrogate(ranking, top_n)?;
    let rows: Vec<Vec<f64>> = ranking
        .top(n)
        .iter()
        .map(|it| {
            it.embedding
                .as_slice()
                .iter()
                .zip(q.as_slice())
                .map(|(e, q)| e - q)
                .collect()
        })
        .collect();
    let d = q.dim();
    let logdet = if n <= d {
        let gram = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| dot(&rows[i], &rows[j]) + if i == j { RV_RIDGE } else { 0.0 })
                    .collect()
            })
            .collect();
        spd_logdet(gram)?
    } else {
        let gram = (0..d)
            .map(|a| {
                (0..d)
                    .map(|b| {
                        rows.iter().map(|r| r[a] * r[b]).sum::<f64>()
                            + if a == b { RV_RIDGE } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        spd_logdet(gram)? + (n - d) as f64 * RV_RIDGE.ln()
    };
    Ok(-0.5 * logdet)
}

/// Reciprocal volume `exp(-0.5 * logdet(M M^T + eps I))`. Overflows to
/// infinity once `n` exceeds `d` by a few dozen; features use the log form.
pub fn reciprocal_volume(ranking: &TurnRanking, top_n: usize) -> Result<f64> {
    log_reciprocal_volume(ranking, top_n).map(f64::exp)
}

/// Mean pairwise cosine distance among items over their mean cosine
/// distance to the query.
pub fn a_pair_ratio(ranking: &TurnRanking, top_n: usize) -> Result<f64> {
    let n = require(ranking, top_n, 2, "a_pair_ratio")?;
    let q = query_surrogate(ranking, top_n)?;
    let units = unit_rows(ranking, n);
    let mut pair = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            pair += 1.0 - dot(&units[i], &units[j]).clamp(-1.0, 1.0);
        }
    }
    pair /= (n * (n - 1) / 2) as f64;
    let to_query = ranking
        .top(n)
        .iter()
        .map(|it| 1.0 - cos_unchecked(q.as_slice(), it.embedding.as_slice()))
        .sum::<f64>()
        / n as f64;
    Ok(pair / (to_query + APR_GUARD))
}

/// A per-turn feature function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma {
    Ac,
    Wand,
    /// Log reciprocal volume.
    Rv,
    Apr,
    ScoreStats,
    Pooled,
    /// Embedding of the single top-ranked item.
    Top1,
}

impl Gamma {
    pub const ALL: [Gamma; 7] = [
        Gamma::Ac,
        Gamma::Wand,
        Gamma::Rv,
        Gamma::Apr,
        Gamma::ScoreStats,
        Gamma::Pooled,
        Gamma::Top1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Gamma::Ac => "ac",
            Gamma::Wand => "wand",
            Gamma::Rv => "rv",
            Gamma::Apr => "apr",
            Gamma::ScoreStats => "score_stats",
            Gamma::Pooled => "pooled",
            Gamma::Top1 => "top1",
        }
    }

    /// Values per turn for an embedding dimension `dim`.
    pub fn width(self, dim: usize) -> usize {
        match self {
            Gamma::Ac | Gamma::Wand | Gamma::Rv | Gamma::Apr => 1,
            Gamma::ScoreStats => 3,
            Gamma::Pooled | Gamma::Top1 => dim,
        }
    }

    /// Evaluates the feature on one ranking.
    pub fn eval(self, ranking: &TurnRanking, top_n: usize) -> Result<Vec<f64>> {
        let v = match self {
            Gamma::Ac => vec![ac(ranking, top_n)?],
            Gamma::Wand => vec![wand(ranking, top_n)?],
            Gamma::Rv => vec![log_reciprocal_volume(ranking, top_n)?],
            Gamma::Apr => vec![a_pair_ratio(ranking, top_n)?],
            Gamma::ScoreStats => {
                let (m, x, s) = score_stats(ranking, top_n)?;
                vec![m, x, s]
            }
            Gamma::Pooled => pooled_embedding(ranking, top_n)?.0,
            Gamma::Top1 => pooled_embedding(ranking, 1)?.0,
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite {} feature at turn {}",
                self.name(),
                ranking.turn
            )));
        }
        Ok(v)
    }
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Gamma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Gamma::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown feature function {s:?}")))
    }
}

/// Which turns feed a feature row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Turns 1..=T concatenated.
    Multi,
    /// Turn T only.
    Single,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Multi => "multi",
            Mode::Single => "single",
        }
    }
}

/// `[gamma(turn 1), ..., gamma(turn T)]` for one conversation.
pub fn assemble_multiturn(
    run: &ConversationRun,
    gamma: Gamma,
    upto_turn: usize,
    top_n: usize,
) -> Result<Vec<f64>> {
    check_turn(run, upto_turn)?;
    let mut row = Vec::new();
    for ranking in &run.turns[..upto_turn] {
        row.extend(gamma.eval(ranking, top_n)?);
    }
    Ok(row)
}

/// `gamma(turn T)` alone.
pub fn assemble_single_turn(
    run: &ConversationRun,
    gamma: Gamma,
    turn: usize,
    top_n: usize,
) -> Result<Vec<f64>> {
    check_turn(run, turn)?;
    gamma.eval(&run.turns[turn - 1], top_n)
}

/// How embedding-valued turn blocks are presented to a classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AeEncoding {
    /// Blocks concatenated as is.
    Concat,
    /// Upper triangle, diagonal included, of the Gram matrix of the blocks.
    /// Invariant to any rotation of the embedding space.
    #[default]
    Gram,
}

impl AeEncoding {
    pub fn name(self) -> &'static str {
        match self {
            AeEncoding::Concat => "concat",
            AeEncoding::Gram => "gram",
        }
    }

    /// Re-encodes a row made of equal-width blocks.
    pub fn apply(self, row: Vec<f64>, block: usize) -> Result<Vec<f64>> {
        match self {
            AeEncoding::Concat => Ok(row),
            AeEncoding::Gram => gram_encode(&row, block),
        }
    }
}

impl fmt::Display for AeEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AeEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(AeEncoding::Concat),
            "gram" => Ok(AeEncoding::Gram),
            _ => Err(Error::invalid(format!("unknown encoding {s:?}"))),
        }
    }
}

/// Pairwise inner products `<b_i, b_j>` for `i <= j`, row-major.
pub fn gram_encode(row: &[f64], block: usize) -> Result<Vec<f64>> {
    if block == 0 || !row.len().is_multiple_of(block) {
        return Err(Error::invalid(format!(
            "row of length {} is not a whole number of blocks of {block}",
            row.len()
        )));
    }
    let blocks: Vec<&[f64]> = row.chunks(block).collect();
    let mut out = Vec::with_capacity(blocks.len() * (blocks.len() + 1) / 2);
    for i in 0..blocks.len() {
        for j in i..blocks.len() {
            out.push(dot(blocks[i], blocks[j]));
        }
    }
    Ok(out)
}

fn check_turn(run: &ConversationRun, t: usize) -> Result<()> {
    if t == 0 || t > run.turns.len() {
        return Err(Error::invalid(format!(
            "conversation {} has {} turns, requested turn {t}",
            run.conversation_id,
            run.turns.len()
        )));
    }
    Ok(())
}

/// Feature rows for a set of conversations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub predictor: Gamma,
    pub mode: Mode,
    pub upto_turn: usize,
    pub top_n: usize,
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn build(
        runs: &[ConversationRun],
        gamma: Gamma,
        mode: Mode,
        upto_turn: usize,
        top_n: usize,
    ) -> Result<Self> {
        let rows = runs
            .iter()
            .map(|r| match mode {
                Mode::Multi => assemble_multiturn(r, gamma, upto_turn, top_n),
                Mode::Single => assemble_single_turn(r, gamma, upto_turn, top_n),
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if rows.iter().any(|r| r.len() != first.len()) {
                return Err(Error::validation("feature rows are not rectangular"));
            }
        }
        Ok(FeatureMatrix {
            predictor: gamma,
            mode,
            upto_turn,
            top_n,
            ids: runs.iter().map(|r| r.conversation_id.clone()).collect(),
            rows,
        })
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// CSV with header `conversation_id,predictor,upto_turn,f_0,...`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec![
            "conversation_id".to_string(),
            "predictor".to_string(),
            "upto_turn".to_string(),
        ];
        header.extend((0..self.width()).map(|i| format!("f_{i}")));
        csv.write_record(&header)?;
        for (id, row) in self.ids.iter().zip(&self.rows) {
            let mut rec = vec![
                id.clone(),
                self.predictor.to_string(),
                self.upto_turn.to_string(),
            ];
            rec.extend(row.iter().map(|v| v.to_string()));
            csv.write_record(&rec)?;
        }
        csv.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RankedItem;

    fn turn(items: &[(f64, &[f64])]) -> TurnRanking {
        let items = items
            .iter()
            .enumerate()
            .map(|(i, (s, e))| RankedItem::new(format!("i{i}"), *s, e.to_vec()))
            .collect();
        TurnRanking::from_unsorted(1, items)
    }

    #[test]
    fn score_stats_examples() {
        assert_eq!(
            score_stats(&turn(&[(5.0, &[1.0])]), 100).unwrap(),
            (5.0, 5.0, 0.0)
        );
        let (m, x, s) =
            score_stats(&turn(&[(1.0, &[1.0]), (2.0, &[1.0]), (3.0, &[1.0])]), 100).unwrap();
        assert_eq!((m, x), (2.0, 3.0));
        assert!((s - 0.816_496_580_927_726).abs() < 1e-12);
        let (m, x, s) =
            score_stats(&turn(&[(0.3, &[1.0]), (0.3, &[2.0]), (0.3, &[3.0])]), 100).unwrap();
        assert!((m - 0.3).abs() < 1e-15 && x == 0.3 && s < 1e-15);
        let empty = TurnRanking::from_unsorted(1, vec![]);
        assert!(score_stats(&empty, 100).is_err());
    }

    #[test]
    fn score_stats_respects_top_n() {
        let t = turn(&[(3.0, &[1.0]), (2.0, &[1.0]), (1.0, &[1.0])]);
        assert_eq!(score_stats(&t, 1).unwrap(), (3.0, 3.0, 0.0));
    }

    #[test]
    fn ac_examples() {
        let t = turn(&[(1.0, &[1.0, 0.0]), (1.0, &[1.0, 1.0]), (1.0, &[0.0, 1.0])]);
        assert_eq!(ac(&t, 100).unwrap(), 0.0);
        let t = turn(&[(2.0, &[1.0, 0.2]), (1.0, &[0.3, 1.0])]);
        assert!((ac(&t, 100).unwrap() + 1.0).abs() < 1e-12);
        assert!(ac(&turn(&[(1.0, &[1.0])]), 100).is_err());
    }

    #[test]
    fn ac_isolated_items_diffuse_to_zero() {
        // orthogonal items: every row of W is zero, so the diffused scores are
        // constant and the correlation is 0
        let t = turn(&[(3.0, &[1.0, 0.0]), (1.0, &[0.0, 1.0])]);
        assert_eq!(ac(&t, 100).unwrap(), 0.0);
    }

    #[test]
    fn wand_examples() {
        let t = turn(&[(2.0, &[0.6, 0.8]), (1.0, &[0.6, 0.8])]);
        assert!((wand(&t, 100).unwrap() - 1.0).abs() < 1e-12);
        let t = turn(&[(2.0, &[1.0, 0.0]), (1.0, &[0.0, 1.0])]);
        assert_eq!(wand(&t, 100).unwrap(), 0.0);
    }

    #[test]
    fn rv_examples() {
        let t = turn(&[(1.0, &[1.0, 1.0])]).with_query(vec![1.0, 0.0]);
        let rv = reciprocal_volume(&t, 100).unwrap();
        assert!((rv - (1.0f64 + 1e-8).powf(-0.5)).abs() < 1e-15);

        let t = turn(&[(1.0, &[0.6, 0.8])]).with_query(vec![0.6, 0.8]);
        let rv = reciprocal_volume(&t, 100).unwrap();
        assert!((rv - 1e4).abs() / 1e4 < 1e-9, "{rv}");
    }

    #[test]
    fn rv_dual_gram_matches_primal() {
        // n = 3 > d = 2 takes the d x d route; compare with a direct 3x3
        let pts: [&[f64]; 3] = [&[1.0, 0.2], &[0.1, 1.0], &[-0.5, 0.4]];
        let q = [0.3, 0.3];
        let t = turn(&[(3.0, pts[0]), (2.0, pts[1]), (1.0, pts[2])]).with_query(q.to_vec());
        let m: Vec<Vec<f64>> = t
            .items
            .iter()
            .map(|it| it.embedding.0.iter().zip(&q).map(|(e, q)| e - q).collect())
            .collect();
        let g = |i: usize, j: usize| dot(&m[i], &m[j]) + if i == j { RV_RIDGE } else { 0.0 };
        let det = g(0, 0) * (g(1, 1) * g(2, 2) - g(1, 2) * g(2, 1))
            - g(0, 1) * (g(1, 0) * g(2, 2) - g(1, 2) * g(2, 0))
            + g(0, 2) * (g(1, 0) * g(2, 1) - g(1, 1) * g(2, 0));
        let expected = -0.5 * det.ln();
        let got = log_reciprocal_volume(&t, 100).unwrap();
        assert!(
            (got - expected).abs() < 1e-6 * expected.abs(),
            "{got} vs {expected}"
        );
    }

    #[test]
    fn apr_examples() {
        let v: &[f64] = &[0.6, 0.8];
        let t = turn(&[(2.0, v), (1.0, v)]).with_query(v.to_vec());
        assert_eq!(a_pair_ratio(&t, 100).unwrap(), 0.0);
        let t = turn(&[(2.0, v), (1.0, v)]).with_query(vec![1.0, 0.0]);
        assert_eq!(a_pair_ratio(&t, 100).unwrap(), 0.0);
    }

    #[test]
    fn query_surrogate_examples() {
        let t = turn(&[(2.0, &[1.0, 0.0]), (1.0, &[0.0, 1.0])]);
        let q = query_surrogate(&t, 100).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((q.0[0] - h).abs() < 1e-12 && (q.0[1] - h).abs() < 1e-12);
        let t = turn(&[(2.0, &[3.0, 4.0])]);
        assert_eq!(query_surrogate(&t, 100).unwrap().0, vec![0.6, 0.8]);
        let t = t.with_query(vec![7.0, 1.0]);
        assert_eq!(query_surrogate(&t, 100).unwrap().0, vec![7.0, 1.0]);
        let t = turn(&[(2.0, &[1.0, 0.0]), (1.0, &[-1.0, 0.0])]);
        assert!(matches!(query_surrogate(&t, 100), Err(Error::ZeroNorm)));
    }

    #[test]
    fn pooled_examples() {
        assert_eq!(
            pooled_embedding(&turn(&[(1.0, &[0.5, 2.0])]), 100)
                .unwrap()
                .0,
            vec![0.5, 2.0]
        );
        let a = turn(&[(2.0, &[2.0, 0.0]), (1.0, &[0.0, 2.0])]);
        assert_eq!(pooled_embedding(&a, 100).unwrap().0, vec![1.0, 1.0]);
        let b = turn(&[(2.0, &[0.0, 2.0]), (1.0, &[2.0, 0.0])]);
        assert_eq!(
            pooled_embedding(&b, 100).unwrap(),
            pooled_embedding(&a, 100).unwrap()
        );
    }

    #[test]
    fn gamma_names_round_trip() {
        for g in Gamma::ALL {
            assert_eq!(g.name().parse::<Gamma>().unwrap(), g);
        }
        assert!("nqc".parse::<Gamma>().is_err());
    }
}
