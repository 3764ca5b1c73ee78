//! Ground-truth labels and the missing-target scenario.
//!
//! A conversation is labelled 1 at turn `k` when its target was ranked
//! within `cutoff` at some turn `t <= k`. The missing-target scenario takes a
//! share of the conversations whose target is found by the final turn,
//! deletes the target from all their rankings and relabels them as never
//! found.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ConversationRun;

pub const DEFAULT_CUTOFF: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Base,
    MissingTarget,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Base => "base",
            Scenario::MissingTarget => "missing_target",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Scenario::Base),
            "missing_target" => Ok(Scenario::MissingTarget),
            _ => Err(Error::invalid(format!("unknown scenario {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub conversation_id: String,
    /// Index `k - 1` holds the label for turn `k`.
    pub labels: Vec<u8>,
}

impl LabelRow {
    pub fn at(&self, turn: usize) -> Option<u8> {
        turn.checked_sub(1)
            .and_then(|i| self.labels.get(i))
            .copied()
    }

    pub fn last(&self) -> u8 {
        self.labels.last().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub scenario: Scenario,
    pub cutoff: usize,
    pub rows: Vec<LabelRow>,
    pub forced: BTreeSet<String>,
}

impl LabelSet {
    pub fn get(&self, conversation_id: &str) -> Option<&LabelRow> {
        self.rows
            .iter()
            .find(|r| r.conversation_id == conversation_id)
    }

    pub fn index(&self) -> HashMap<&str, &LabelRow> {
        self.rows
            .iter()
            .map(|r| (r.conversation_id.as_str(), r))
            .collect()
    }

    /// Number of conversations labelled 1 at `turn`.
    pub fn found_count(&self, turn: usize) -> usize {
        self.rows.iter().filter(|r| r.at(turn) == Some(1)).count()
    }

    /// CSV: `conversation_id,scenario,cutoff,forced,k1..kK`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let k = self.rows.iter().map(|r| r.labels.len()).max().unwrap_or(0);
        let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
        let mut header: Vec<String> = ["conversation_id", "scenario", "cutoff", "forced"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=k).map(|i| format!("k{i}")));
        out.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                row.conversation_id.clone(),
                self.scenario.to_string(),
                self.cutoff.to_string(),
                u8::from(self.forced.contains(&row.conversation_id)).to_string(),
            ];
            rec.extend(row.labels.iter().map(|l| l.to_string()));
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    /// Parses the CSV written by [`LabelSet::write_csv`]; `#` lines are
    /// comments.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(r);
        let mut scenario = None;
        let mut cutoff = None;
        let mut rows = Vec::new();
        let mut forced = BTreeSet::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() < 4 {
                return Err(Error::validation("label row has fewer than 4 columns"));
            }
            let sc: Scenario = rec[1].parse()?;
            let cu: usize = rec[2]
                .parse()
                .map_err(|_| Error::validation(format!("bad cutoff {:?}", &rec[2])))?;
            if scenario.is_some_and(|s| s != sc) || cutoff.is_some_and(|c| c != cu) {
                return Err(Error::validation("mixed scenario/cutoff in one label file"));
            }
            scenario = Some(sc);
            cutoff = Some(cu);
            let id = rec[0].to_string();
            match &rec[3] {
                "1" => {
                    forced.insert(id.clone());
                }
                "0" => {}
                other => return Err(Error::validation(format!("bad forced flag {other:?}"))),
            }
            let labels = rec
                .iter()
                .skip(4)
                .filter(|s| !s.is_empty())
                .map(|s| match s {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    _ => Err(Error::validation(format!("bad label {s:?} for {id}"))),
                })
                .collect::<Result<Vec<u8>>>()?;
            rows.push(LabelRow {
                conversation_id: id,
                labels,
            });
        }
        Ok(LabelSet {
            scenario: scenario.unwrap_or(Scenario::Base),
            cutoff: cutoff.unwrap_or(DEFAULT_CUTOFF),
            rows,
            forced,
        })
    }
}

/// Whether the target is within `cutoff` at turn `k`, using the stored list
/// first and the recorded catalogue rank when the list is too shallow.
fn hit_at(run: &ConversationRun, k: usize, cutoff: usize) -> Result<bool> {
    let ranking = &run.turns[k - 1];
    if let Some(r) = ranking.rank_of(&run.target_id) {
        return Ok(r <= cutoff);
    }
    if ranking.len() >= cutoff {
        return Ok(false);
    }
    match run.target_ranks.get(k - 1).copied().flatten() {
        Some(r) => Ok(r <= cutoff),
        None => Err(Error::InsufficientDepth(format!(
            "conversation {} turn {k}: stored depth {} < cutoff {cutoff} and no target rank recorded",
            run.conversation_id,
            ranking.len()
        ))),
    }
}

/// Cumulative found-by-turn labels.
pub fn label_runs(runs: &[ConversationRun], cutoff: usize) -> Result<LabelSet> {
    if cutoff == 0 {
        return Err(Error::invalid("cutoff must be >= 1"));
    }
    let rows = runs
        .iter()
        .map(|run| {
            let mut found = false;
            let labels = (1..=run.turns.len())
                .map(|k| {
                    found = found || hit_at(run, k, cutoff)?;
                    Ok(u8::from(found))
                })
                .collect::<Result<Vec<u8>>>()?;
            Ok(LabelRow {
                conversation_id: run.conversation_id.clone(),
                labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelSet {
        scenario: Scenario::Base,
        cutoff,
        rows,
        forced: BTreeSet::new(),
    })
}

/// Conversations found by the final turn.
pub fn identify_easy(labels: &LabelSet) -> Result<BTreeSet<String>> {
    if labels.scenario != Scenario::Base {
        return Err(Error::invalid(
            "easy items are defined on base-scenario labels",
        ));
    }
    Ok(labels
        .rows
        .iter()
        .filter(|r| r.last() == 1)
        .map(|r| r.conversation_id.clone())
        .collect())
}

/// `round(fraction * n_easy)`, halves away from zero.
pub fn forced_count(fraction: f64, n_easy: usize) -> usize {
    (fraction * n_easy as f64).round() as usize
}

/// Builds the missing-target scenario. Returns the modified runs (same
/// order as the input) and their labels.
pub fn induce_missing(
    runs: &[ConversationRun],
    labels: &LabelSet,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<ConversationRun>, LabelSet)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!(
            "fraction {fraction} outside [0, 1]"
        )));
    }
    let easy = identify_easy(labels)?;
    // keep the run order so the draw does not depend on id collation
    let easy_ids: Vec<&str> = runs
        .iter()
        .map(|r| r.conversation_id.as_str())
        .filter(|id| easy.contains(*id))
        .collect();
    let count = forced_count(fraction, easy_ids.len());
    if count == 0 && fraction > 0.0 && easy_ids.is_empty() {
        return Err(Error::invalid("no easy conversations to force"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> =
        rand::seq::index::sample(&mut rng, easy_ids.len(), count).into_vec();
    picked.sort_unstable();
    let forced: BTreeSet<String> = picked.iter().map(|&i| easy_ids[i].to_string()).collect();

    let index = labels.index();
    let mut out_runs = Vec::with_capacity(runs.len());
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        let row = index.get(run.conversation_id.as_str()).ok_or_else(|| {
            Error::validation(format!(
                "no labels for conversation {}",
                run.conversation_id
            ))
        })?;
        if forced.contains(&run.conversation_id) {
            let mut m = run.clone();
            for t in &mut m.turns {
                t.items.retain(|it| it.id != m.target_id);
            }
            m.target_ranks = vec![None; m.turns.len()];
            rows.push(LabelRow {
                conversation_id: run.conversation_id.clone(),
                labels: vec![0; row.labels.len()],
            });
            out_runs.push(m);
        } else {
            rows.push((*row).clone());
            out_runs.push(run.clone());
        }
    }
    Ok((
        out_runs,
        LabelSet {
            scenario: Scenario::MissingTarget,
            cutoff: labels.cutoff,
            rows,
            forced,
        },
    ))
}
