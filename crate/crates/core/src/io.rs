//! Run files (JSON Lines) and the seeded synthetic run generator.
//!
//! One conversation per line:
//!
//! ```text
//! {"conversation_id": str, "target_id": str, "target_ranks": [int|null],
//!  "turns": [{"turn": int, "query_embedding": [num]|null, "critique": str|null,
//!             "items": [{"id": str, "score": num, "embedding": [num]}]}]}
//! ```
//!
//! Floats are written in their shortest round-trip form. Lines starting with
//! `#` and blank lines are skipped on read.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, item_order, ConversationRun, Embedding, RankedItem, TurnRanking};

/// Validates a set of runs, including a uniform embedding dimension.
pub fn validate_runs(runs: &[ConversationRun]) -> Result<Option<usize>> {
    let mut dim: Option<usize> = None;
    for run in runs {
        if let Some(d) = run.validate()? {
            match dim {
                None => dim = Some(d),
                Some(e) if e != d => {
                    return Err(Error::validation(format!(
                        "conversation {}: dimension mismatch: expected {e}, got {d}",
                        run.conversation_id
                    )))
                }
                _ => {}
            }
        }
    }
    Ok(dim)
}

/// Serializes runs as JSON Lines. Validation happens before anything is
/// written, so a bad record leaves no partial file behind.
pub fn write_runs(runs: &[ConversationRun], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    validate_runs(runs)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_runs_to(runs, &mut w).map_err(|e| match e {
        Error::Json(j) if j.is_io() => Error::io(path, j.into()),
        other => other,
    })?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes already-validated runs to any writer.
pub fn write_runs_to<W: Write>(runs: &[ConversationRun], w: &mut W) -> Result<()> {
    for run in runs {
        serde_json::to_writer(&mut *w, run)?;
        w.write_all(b"\n").map_err(serde_json::Error::io)?;
    }
    Ok(())
}

/// Reads and validates a run file.
pub fn read_runs(path: impl AsRef<Path>) -> Result<Vec<ConversationRun>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut runs = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut run: ConversationRun = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        let d = run
            .validate()
            .map_err(|e| Error::validation(format!("line {lineno}: {e}")))?;
        if let (Some(expected), Some(got)) = (dim, d) {
            if expected != got {
                return Err(Error::validation(format!(
                    "line {lineno}: conversation {}: dimension mismatch: expected {expected}, got {got}",
                    run.conversation_id
                )));
            }
        }
        dim = dim.or(d);
        if run.target_ranks.is_empty() {
            run.target_ranks = vec![None; run.turns.len()];
        }
        runs.push(run);
    }
    Ok(runs)
}

/// Parameters for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_conversations: usize,
    pub n_turns: usize,
    pub dim: usize,
    pub catalogue_size: usize,
    pub top_n: usize,
    pub easy_fraction: f64,
    pub pull_rate_easy: f64,
    pub pull_rate_hard: f64,
    pub noise_sigma: f64,
    /// Per-turn multiplicative decay of the pull rate (1 = constant pull).
    pub pull_decay: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_conversations: 200,
            n_turns: 10,
            dim: 32,
            catalogue_size: 2000,
            top_n: 100,
            easy_fraction: 0.7,
            pull_rate_easy: 0.35,
            pull_rate_hard: 0.02,
            noise_sigma: 0.15,
            pull_decay: 1.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.n_conversations == 0 {
            return bad("n_conversations must be >= 1");
        }
        if self.n_turns < 2 {
            return bad("n_turns must be >= 2");
        }
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.top_n == 0 || self.top_n > self.catalogue_size {
            return bad("top_n must be in 1..=catalogue_size");
        }
        if !(0.0..=1.0).contains(&self.easy_fraction) {
            return bad("easy_fraction must be in [0, 1]");
        }
        if !(self.pull_rate_easy > 0.0 && self.pull_rate_easy <= 1.0) {
            return bad("pull_rate_easy must be in (0, 1]");
        }
        if !(self.pull_rate_hard >= 0.0 && self.pull_rate_hard < 1.0) {
            return bad("pull_rate_hard must be in [0, 1)");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and >= 0");
        }
        if !(self.pull_decay > 0.0 && self.pull_decay <= 1.0) {
            return bad("pull_decay must be in (0, 1]");
        }
        Ok(())
    }
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// Stream 0 is the catalogue, stream 1 the easy/hard designation, 2.. the
// conversations.
const CATALOGUE_STREAM: u64 = 0;
const DESIGNATION_STREAM: u64 = 1;

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn padded_id(prefix: &str, i: usize, count: usize) -> String {
    let width = count.saturating_sub(1).to_string().len();
    format!("{prefix}{i:0width$}")
}

/// Generates synthetic conversation runs.
///
/// A unit-norm Gaussian catalogue is drawn once. Each conversation picks a
/// target and moves a latent query toward it:
/// `q_t = normalize((1 - a_t) q_{t-1} + a_t e_target + sigma g_t)`, with
/// `a_t = pull * pull_decay^(t-1)` and `pull` the easy or hard rate. The
/// first `ceil(easy_fraction * n)` conversations of a seeded shuffle are easy.
pub fn generate_synthetic(config: &GenConfig) -> Result<Vec<ConversationRun>> {
    config.validate()?;
    let d = config.dim;
    let n = config.n_conversations;

    let mut cat_rng = substream(config.seed, CATALOGUE_STREAM);
    let catalogue: Vec<Vec<f64>> = (0..config.catalogue_size)
        .map(|_| unit_gaussian(&mut cat_rng, d))
        .collect();
    let item_ids: Vec<String> = (0..config.catalogue_size)
        .map(|i| padded_id("item_", i, config.catalogue_size))
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(config.seed, DESIGNATION_STREAM));
    let n_easy = (config.easy_fraction * n as f64).ceil() as usize;
    let mut easy = vec![false; n];
    for &c in order.iter().take(n_easy.min(n)) {
        easy[c] = true;
    }

    let mut runs = Vec::with_capacity(n);
    let mut scored: Vec<usize> = (0..config.catalogue_size).collect();
    let mut scores = vec![0.0; config.catalogue_size];
    for (c, &is_easy) in easy.iter().enumerate() {
        let mut rng = substream(config.seed, 2 + c as u64);
        let target = rng.random_range(0..config.catalogue_size);
        let e_target = &catalogue[target];
        let pull = if is_easy {
            config.pull_rate_easy
        } else {
            config.pull_rate_hard
        };
        let mut q = unit_gaussian(&mut rng, d);
        let mut turns = Vec::with_capacity(config.n_turns);
        let mut target_ranks = Vec::with_capacity(config.n_turns);
        for t in 1..=config.n_turns {
            let alpha = pull * config.pull_decay.powi(t as i32 - 1);
            let next: Vec<f64> = (0..d)
                .map(|j| {
                    let g: f64 = rng.sample(StandardNormal);
                    (1.0 - alpha) * q[j] + alpha * e_target[j] + config.noise_sigma * g
                })
                .collect();
            let nn = dot(&next, &next).sqrt();
            if nn > 0.0 {
                q = next.into_iter().map(|x| x / nn).collect();
            }

            for (s, e) in scores.iter_mut().zip(&catalogue) {
                *s = dot(&q, e);
            }
            let cmp = |a: &usize, b: &usize| {
                scores[*b]
                    .total_cmp(&scores[*a])
                    .then_with(|| item_ids[*a].cmp(&item_ids[*b]))
            };
            let target_rank = 1
                + (0..config.catalogue_size)
                    .filter(|&i| cmp(&i, &target) == std::cmp::Ordering::Less)
                    .count();
            if config.top_n < scored.len() {
                scored.select_nth_unstable_by(config.top_n - 1, cmp);
            }
            let top = &mut scored[..config.top_n];
            top.sort_by(cmp);
            let items: Vec<RankedItem> = top
                .iter()
                .map(|&i| RankedItem::new(item_ids[i].clone(), scores[i], catalogue[i].clone()))
                .collect();
            debug_assert!(items.windows(2).all(|w| item_order(&w[0], &w[1]).is_le()));
            turns.push(TurnRanking {
                turn: t,
                query_embedding: Some(Embedding(q.clone())),
                critique: None,
                items,
            });
            target_ranks.push(Some(target_rank));
        }
        runs.push(ConversationRun {
            conversation_id: padded_id("conv_", c, n),
            target_id: item_ids[target].clone(),
            target_ranks,
            turns,
        });
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn small() -> GenConfig {
        GenConfig {
            n_conversations: 6,
            n_turns: 3,
            dim: 4,
            catalogue_size: 40,
            top_n: 10,
            seed: 3,
            ..GenConfig::default()
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    const GOOD: &str = r#"{"conversation_id":"c1","target_id":"b","target_ranks":[2,null],"turns":[{"turn":1,"query_embedding":null,"critique":"more red","items":[{"id":"a","score":0.9,"embedding":[1.0,0.0]},{"id":"b","score":0.2,"embedding":[0.0,1.0]}]},{"turn":2,"query_embedding":[0.5,0.5],"critique":null,"items":[{"id":"b","score":0.9,"embedding":[0.0,1.0]}]}]}"#;

    #[test]
    fn reads_fixture() {
        let second = GOOD.replace("\"c1\"", "\"c2\"");
        let f = write_lines(&["# header", GOOD, "", &second]);
        let runs = read_runs(f.path()).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0].turns[0].critique.as_deref(), Some("more red"));
        assert_eq!(runs[0].target_ranks, vec![Some(2), None]);
    }

    #[test]
    fn rejects_unsorted() {
        let bad = GOOD.replace(
            "\"score\":0.9,\"embedding\":[1.0,0.0]",
            "\"score\":0.1,\"embedding\":[1.0,0.0]",
        );
        let f = write_lines(&[&bad]);
        let err = read_runs(f.path()).unwrap_err().to_string();
        assert!(err.contains("items not sorted"), "{err}");
        assert!(err.contains("c1") && err.contains("turn 1"), "{err}");
    }

    #[test]
    fn rejects_dimension_mismatch_across_lines() {
        let other = GOOD
            .replace("\"c1\"", "\"c2\"")
            .replace("[1.0,0.0]", "[1.0,0.0,0.0]")
            .replace("[0.0,1.0]", "[0.0,1.0,0.0]")
            .replace("[0.5,0.5]", "[0.5,0.5,0.0]");
        let f = write_lines(&[GOOD, &other]);
        let err = read_runs(f.path()).unwrap_err().to_string();
        assert!(err.contains("dimension mismatch"), "{err}");
    }

    #[test]
    fn rejects_non_consecutive_turns() {
        let bad = GOOD.replace("\"turn\":2", "\"turn\":3");
        let f = write_lines(&[&bad]);
        let err = read_runs(f.path()).unwrap_err().to_string();
        assert!(err.contains("non-consecutive"), "{err}");
    }

    #[test]
    fn malformed_json_reports_line() {
        let f = write_lines(&[GOOD, "{not json"]);
        match read_runs(f.path()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_list_writes_empty_file() {
        let f = tempfile::NamedTempFile::new().unwrap();
        write_runs(&[], f.path()).unwrap();
        assert_eq!(std::fs::read(f.path()).unwrap().len(), 0);
        assert!(read_runs(f.path()).unwrap().is_empty());
    }

    #[test]
    fn refuses_nan_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        let mut runs = generate_synthetic(&small()).unwrap();
        runs[2].turns[1].items[0].score = f64::NAN;
        assert!(write_runs(&runs, &path).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn round_trip_generated() {
        let runs = generate_synthetic(&small()).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_runs(&runs, f.path()).unwrap();
        assert_eq!(read_runs(f.path()).unwrap(), runs);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        write_runs_to(&a, &mut ba).unwrap();
        write_runs_to(&b, &mut bb).unwrap();
        assert_eq!(ba, bb);
        let c = generate_synthetic(&GenConfig { seed: 4, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_shape() {
        let cfg = small();
        let runs = generate_synthetic(&cfg).unwrap();
        assert_eq!(runs.len(), cfg.n_conversations);
        for run in &runs {
            assert_eq!(run.turns.len(), cfg.n_turns);
            assert_eq!(run.target_ranks.len(), cfg.n_turns);
            for t in &run.turns {
                assert_eq!(t.items.len(), cfg.top_n);
                assert!(t.validate().is_ok());
            }
            // stored rank agrees with the catalogue rank whenever listed
            for k in 1..=cfg.n_turns {
                if let Some(r) = run.turn(k).unwrap().rank_of(&run.target_id) {
                    assert_eq!(run.target_ranks[k - 1], Some(r));
                }
            }
        }
    }

    #[test]
    fn degenerate_pull_puts_target_first() {
        let cfg = GenConfig {
            pull_rate_easy: 1.0,
            noise_sigma: 0.0,
            easy_fraction: 1.0,
            ..small()
        };
        for run in generate_synthetic(&cfg).unwrap() {
            for t in &run.turns {
                assert_eq!(t.items[0].id, run.target_id);
            }
            assert!(run.target_ranks.iter().all(|r| *r == Some(1)));
        }
    }

    #[test]
    fn config_validation() {
        assert!(GenConfig {
            n_turns: 1,
            ..small()
        }
        .validate()
        .is_err());
        assert!(GenConfig {
            top_n: 41,
            ..small()
        }
        .validate()
        .is_err());
        assert!(GenConfig {
            pull_rate_hard: 1.0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(GenConfig {
            pull_rate_easy: 0.0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(small().validate().is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]
            #[test]
            fn write_read_identity(seed in any::<u64>(), turns in 2usize..4, dim in 1usize..5) {
                let cfg = GenConfig { seed, n_turns: turns, dim, n_conversations: 3, catalogue_size: 12, top_n: 5, ..GenConfig::default() };
                let runs = generate_synthetic(&cfg).unwrap();
                let f = tempfile::NamedTempFile::new().unwrap();
                write_runs(&runs, f.path()).unwrap();
                prop_assert_eq!(read_runs(f.path()).unwrap(), runs);
            }
        }
    }
}
