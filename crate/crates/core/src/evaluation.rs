//! Turn-pair evaluation protocol: conversation-level train/test splits,
//! one classifier per (train turn T, eval turn T+1) cell, single-turn
//! ablation, rank-cutoff sensitivity, accuracy and McNemar's test.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{AeClassifier, AeConfig};
use crate::classifiers::{
    train_forest, train_lasso, train_logistic, Forest, ForestParams, LassoParams, LinearModel,
    LogisticParams,
};
use crate::error::{Error, Result};
use crate::features::{
    assemble_multiturn, assemble_single_turn, AeEncoding, Gamma, Mode, DEFAULT_TOP_N,
};
use crate::model::ConversationRun;
use crate::scenario::{label_runs, LabelSet};

/// Chi-square critical value, 1 degree of freedom, alpha = 0.05.
pub const CHI2_CRITICAL_005: f64 = 3.841459;

pub const DEFAULT_TRAIN_RATIO: f64 = 0.7;

/// Conversation-level split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
    pub stratified: bool,
    /// Set when stratification was requested but not possible.
    pub warning: Option<String>,
}

/// Seeded split with `round(ratio * n)` training conversations. When
/// stratified, each label class contributes its share up to rounding
/// (largest remainder keeps the total exact).
pub fn split_conversations(
    ids: &[String],
    final_labels: &[u8],
    ratio: f64,
    seed: u64,
    stratified: bool,
) -> Result<Split> {
    let n = ids.len();
    if n < 2 {
        return Err(Error::invalid("need at least 2 conversations to split"));
    }
    if final_labels.len() != n {
        return Err(Error::invalid("ids and labels differ in length"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid("train ratio must be in (0, 1)"));
    }
    let n_train = (ratio * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in final_labels.iter().enumerate() {
        classes[usize::from(l > 0)].push(i);
    }
    let mut warning = None;
    let use_strata = stratified && {
        let ok = classes.iter().all(|c| c.len() >= 2);
        if !ok {
            warning = Some(format!(
                "class sizes {}/{} too small to stratify; used a plain shuffle",
                classes[0].len(),
                classes[1].len()
            ));
        }
        ok
    };

    let mut in_train = vec![false; n];
    if use_strata {
        let exact: Vec<f64> = classes.iter().map(|c| ratio * c.len() as f64).collect();
        let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut rest = n_train - take.iter().sum::<usize>();
        let mut by_remainder = [0usize, 1];
        by_remainder.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor()))
        });
        for &c in &by_remainder {
            if rest > 0 && take[c] < classes[c].len() {
                take[c] += 1;
                rest -= 1;
            }
        }
        for (c, members) in classes.iter_mut().enumerate() {
            members.shuffle(&mut rng);
            for &i in &members[..take[c]] {
                in_train[i] = true;
            }
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        for &i in &all[..n_train] {
            in_train[i] = true;
        }
    }
    let (train_ids, test_ids) =
        ids.iter()
            .zip(&in_train)
            .fold((Vec::new(), Vec::new()), |(mut tr, mut te), (id, &t)| {
                if t {
                    tr.push(id.clone())
                } else {
                    te.push(id.clone())
                }
                (tr, te)
            });
    Ok(Split {
        train_ids,
        test_ids,
        seed,
        stratified: use_strata,
        warning,
    })
}

/// Split on the final-turn labels of a label set.
pub fn split_labels(labels: &LabelSet, ratio: f64, seed: u64, stratified: bool) -> Result<Split> {
    let ids: Vec<String> = labels
        .rows
        .iter()
        .map(|r| r.conversation_id.clone())
        .collect();
    let finals: Vec<u8> = labels.rows.iter().map(|r| r.last()).collect();
    split_conversations(&ids, &finals, ratio, seed, stratified)
}

/// Feature family as exposed to users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Predictor {
    /// Mean-pooled top-n embeddings.
    Ae,
    /// Embedding of the single top-ranked item.
    AeTop1,
    Ac,
    Wand,
    Rv,
    Apr,
    Score,
}

impl Predictor {
    pub const ALL: [Predictor; 7] = [
        Predictor::Ae,
        Predictor::AeTop1,
        Predictor::Ac,
        Predictor::Wand,
        Predictor::Rv,
        Predictor::Apr,
        Predictor::Score,
    ];

    pub fn gamma(self) -> Gamma {
        match self {
            Predictor::Ae => Gamma::Pooled,
            Predictor::AeTop1 => Gamma::Top1,
            Predictor::Ac => Gamma::Ac,
            Predictor::Wand => Gamma::Wand,
            Predictor::Rv => Gamma::Rv,
            Predictor::Apr => Gamma::Apr,
            Predictor::Score => Gamma::ScoreStats,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Predictor::Ae => "ae",
            Predictor::AeTop1 => "ae-top1",
            Predictor::Ac => "ac",
            Predictor::Wand => "wand",
            Predictor::Rv => "rv",
            Predictor::Apr => "apr",
            Predictor::Score => "score",
        }
    }

    /// Embedding-based predictors are always paired with the autoencoder head.
    pub fn requires_ae_head(self) -> bool {
        matches!(self, Predictor::Ae | Predictor::AeTop1)
    }
}

impl fmt::Display for Predictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Predictor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Predictor::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown predictor {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassifierKind {
    AeHead,
    Logreg,
    Lasso,
    Forest,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 4] = [
        ClassifierKind::AeHead,
        ClassifierKind::Logreg,
        ClassifierKind::Lasso,
        ClassifierKind::Forest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::AeHead => "ae-head",
            ClassifierKind::Logreg => "logreg",
            ClassifierKind::Lasso => "lasso",
            ClassifierKind::Forest => "forest",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassifierKind::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown classifier {s:?}")))
    }
}

/// Autoencoder settings shared by every cell; dimensions follow the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub rec_weight: f64,
    pub cls_weight: f64,
}

impl Default for AeSettings {
    fn default() -> Self {
        AeSettings {
            learning_rate: 0.01,
            epochs: 100,
            rec_weight: 1.0,
            cls_weight: 1.0,
        }
    }
}

impl AeSettings {
    pub fn config(&self, input_dim: usize, seed: u64) -> AeConfig {
        AeConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            rec_weight: self.rec_weight,
            cls_weight: self.cls_weight,
            seed,
            ..AeConfig::new(input_dim)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub top_n: usize,
    pub seed: u64,
    pub ae: AeSettings,
    pub logistic: LogisticParams,
    pub lasso: LassoParams,
    pub n_trees: usize,
    /// Applied to embedding-valued predictors only.
    #[serde(default)]
    pub ae_encoding: AeEncoding,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            top_n: DEFAULT_TOP_N,
            seed: 0,
            ae: AeSettings::default(),
            logistic: LogisticParams::default(),
            lasso: LassoParams::default(),
            n_trees: 100,
            ae_encoding: AeEncoding::default(),
        }
    }
}

/// splitmix64 over the base seed and cell coordinates.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base;
    for &p in parts {
        x ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x = z ^ (z >> 31);
    }
    x
}

/// A fitted classifier of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum TrainedClassifier {
    Ae(AeClassifier),
    Linear(LinearModel),
    Forest(Forest),
}

impl TrainedClassifier {
    pub fn fit(
        kind: ClassifierKind,
        rows: &[Vec<f64>],
        labels: &[u8],
        cfg: &EvalConfig,
        seed: u64,
    ) -> Result<Self> {
        Ok(match kind {
            ClassifierKind::AeHead => {
                let width = rows.first().map_or(0, Vec::len);
                let (m, _) = AeClassifier::fit(rows, labels, &cfg.ae.config(width, seed))?;
                TrainedClassifier::Ae(m)
            }
            ClassifierKind::Logreg => {
                TrainedClassifier::Linear(train_logistic(rows, labels, &cfg.logistic)?)
            }
            ClassifierKind::Lasso => {
                TrainedClassifier::Linear(train_lasso(rows, labels, &cfg.lasso)?)
            }
            ClassifierKind::Forest => TrainedClassifier::Forest(train_forest(
                rows,
                labels,
                &ForestParams {
                    n_trees: cfg.n_trees,
                    seed,
                },
            )?),
        })
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<u8>> {
        match self {
            TrainedClassifier::Ae(m) => m.predict(rows),
            TrainedClassifier::Linear(m) => m.predict(rows),
            TrainedClassifier::Forest(f) => f.predict(rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub predictor: String,
    pub classifier: String,
    pub scenario: String,
    pub mode: String,
    pub turn_train: usize,
    pub turn_eval: usize,
    pub cutoff: usize,
    pub accuracy: f64,
    pub n_test: usize,
}

impl ReportRow {
    pub fn cell_id(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}|{}",
            self.predictor,
            self.classifier,
            self.scenario,
            self.mode,
            self.turn_train,
            self.turn_eval,
            self.cutoff
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub cell: String,
    pub conversation_id: String,
    pub predicted: u8,
    pub actual: u8,
}

impl PredictionRecord {
    /// The cell id without its predictor/classifier prefix, used to pair
    /// predictions from different systems on the same test instances.
    pub fn pairing_key(&self) -> &str {
        self.cell.splitn(3, '|').nth(2).unwrap_or(&self.cell)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub predictions: Vec<PredictionRecord>,
}

impl EvalReport {
    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
        self.predictions.extend(other.predictions);
    }

    pub fn mean_accuracy(&self) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        self.rows.iter().map(|r| r.accuracy).sum::<f64>() / self.rows.len() as f64
    }

    pub fn write_report_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "predictor",
            "classifier",
            "scenario",
            "mode",
            "turn_train",
            "turn_eval",
            "cutoff",
            "accuracy",
            "n_test",
        ])?;
        for r in &self.rows {
            out.write_record([
                r.predictor.clone(),
                r.classifier.clone(),
                r.scenario.clone(),
                r.mode.clone(),
                r.turn_train.to_string(),
                r.turn_eval.to_string(),
                r.cutoff.to_string(),
                r.accuracy.to_string(),
                r.n_test.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn write_predictions_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["cell", "conversation_id", "predicted", "actual"])?;
        for p in &self.predictions {
            out.write_record([
                p.cell.clone(),
                p.conversation_id.clone(),
                p.predicted.to_string(),
                p.actual.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r)
}

pub fn read_report_csv<R: Read>(r: R) -> Result<Vec<ReportRow>> {
    csv_reader(r)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn read_predictions_csv<R: Read>(r: R) -> Result<Vec<PredictionRecord>> {
    csv_reader(r)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Fraction of positions where `preds` equals `actuals`.
pub fn accuracy(preds: &[u8], actuals: &[u8]) -> Result<f64> {
    if preds.len() != actuals.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            preds.len(),
            actuals.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let correct = preds.iter().zip(actuals).filter(|(p, a)| p == a).count();
    Ok(correct as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    /// A correct, B wrong.
    pub b: usize,
    /// A wrong, B correct.
    pub c: usize,
    pub chi2: f64,
    pub significant: bool,
}

/// McNemar's test with continuity correction.
pub fn mcnemar_counts(b: usize, c: usize) -> McNemar {
    let chi2 = if b + c == 0 {
        0.0
    } else {
        let diff = (b as f64 - c as f64).abs() - 1.0;
        diff * diff / (b + c) as f64
    };
    McNemar {
        b,
        c,
        chi2,
        significant: chi2 >= CHI2_CRITICAL_005,
    }
}

pub fn mcnemar(preds_a: &[u8], preds_b: &[u8], actuals: &[u8]) -> Result<McNemar> {
    if preds_a.len() != actuals.len() || preds_b.len() != actuals.len() {
        return Err(Error::invalid("prediction vectors differ in length"));
    }
    let (mut b, mut c) = (0, 0);
    for ((pa, pb), y) in preds_a.iter().zip(preds_b).zip(actuals) {
        match (pa == y, pb == y) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(mcnemar_counts(b, c))
}

/// One McNemar comparison per shared cell (or a single pooled one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub key: String,
    pub n: usize,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    pub test: McNemar,
}

/// Pairs two prediction sets on (cell coordinates, conversation) and runs
/// McNemar per cell, or once over all pairs when `pooled`.
pub fn compare_predictions(
    a: &[PredictionRecord],
    b: &[PredictionRecord],
    pooled: bool,
) -> Result<Vec<Comparison>> {
    let index: HashMap<(&str, &str), &PredictionRecord> = b
        .iter()
        .map(|p| ((p.pairing_key(), p.conversation_id.as_str()), p))
        .collect();
    // (predictions a, predictions b, ground truth) per group
    type Group = (Vec<u8>, Vec<u8>, Vec<u8>);
    let mut groups: BTreeMap<String, Group> = BTreeMap::new();
    for pa in a {
        let Some(pb) = index.get(&(pa.pairing_key(), pa.conversation_id.as_str())) else {
            continue;
        };
        if pa.actual != pb.actual {
            return Err(Error::validation(format!(
                "ground truth disagrees for {} in {}",
                pa.conversation_id,
                pa.pairing_key()
            )));
        }
        let key = if pooled {
            "pooled".to_string()
        } else {
            pa.pairing_key().to_string()
        };
        let g = groups.entry(key).or_default();
        g.0.push(pa.predicted);
        g.1.push(pb.predicted);
        g.2.push(pa.actual);
    }
    if groups.is_empty() {
        return Err(Error::validation(
            "the prediction files share no test instances",
        ));
    }
    groups
        .into_iter()
        .map(|(key, (pa, pb, y))| {
            Ok(Comparison {
                n: y.len(),
                accuracy_a: accuracy(&pa, &y)?,
                accuracy_b: accuracy(&pb, &y)?,
                test: mcnemar(&pa, &pb, &y)?,
                key,
            })
        })
        .collect()
}

/// Everything a single protocol cell needs besides the data.
#[derive(Debug, Clone, Copy)]
pub struct Cell {
    pub predictor: Predictor,
    pub classifier: ClassifierKind,
    pub mode: Mode,
    pub turn_train: usize,
}

fn check_combo(predictor: Predictor, classifier: ClassifierKind) -> Result<()> {
    if predictor.requires_ae_head() && classifier != ClassifierKind::AeHead {
        return Err(Error::invalid(format!(
            "predictor {predictor} is only trained with the ae-head classifier"
        )));
    }
    Ok(())
}

/// Trains on the split's train conversations with features up to (or at)
/// `turn_train` and labels at `turn_train + 1`, then scores the test side.
pub fn run_cell(
    runs: &[ConversationRun],
    labels: &LabelSet,
    split: &Split,
    cell: Cell,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    check_combo(cell.predictor, cell.classifier)?;
    let turn_eval = cell.turn_train + 1;
    let by_id: HashMap<&str, &ConversationRun> = runs
        .iter()
        .map(|r| (r.conversation_id.as_str(), r))
        .collect();
    let label_index = labels.index();
    let gamma = cell.predictor.gamma();
    let embedding_valued = matches!(gamma, Gamma::Pooled | Gamma::Top1);
    let gather = |ids: &[String]| -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
        let rows = ids
            .iter()
            .map(|id| {
                let run = by_id.get(id.as_str()).ok_or_else(|| {
                    Error::validation(format!("split names unknown conversation {id}"))
                })?;
                let (row, blocks) = match cell.mode {
                    Mode::Multi => (
                        assemble_multiturn(run, gamma, cell.turn_train, cfg.top_n)?,
                        cell.turn_train,
                    ),
                    Mode::Single => (
                        assemble_single_turn(run, gamma, cell.turn_train, cfg.top_n)?,
                        1,
                    ),
                };
                if embedding_valued {
                    let block = row.len() / blocks;
                    cfg.ae_encoding.apply(row, block)
                } else {
                    Ok(row)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let ys = ids
            .iter()
            .map(|id| {
                label_index
                    .get(id.as_str())
                    .and_then(|row| row.at(turn_eval))
                    .ok_or_else(|| {
                        Error::validation(format!("no label for {id} at turn {turn_eval}"))
                    })
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok((rows, ys))
    };
    let (x_train, y_train) = gather(&split.train_ids)?;
    let (x_test, y_test) = gather(&split.test_ids)?;
    let seed = derive_seed(
        cfg.seed,
        &[
            cell.turn_train as u64,
            matches!(cell.mode, Mode::Single) as u64,
            labels.cutoff as u64,
        ],
    );
    let model = TrainedClassifier::fit(cell.classifier, &x_train, &y_train, cfg, seed)?;
    let preds = model.predict(&x_test)?;
    let row = ReportRow {
        predictor: cell.predictor.to_string(),
        classifier: cell.classifier.to_string(),
        scenario: labels.scenario.to_string(),
        mode: cell.mode.name().to_string(),
        turn_train: cell.turn_train,
        turn_eval,
        cutoff: labels.cutoff,
        accuracy: accuracy(&preds, &y_test)?,
        n_test: y_test.len(),
    };
    let cell_id = row.cell_id();
    let predictions = split
        .test_ids
        .iter()
        .zip(preds.iter().zip(&y_test))
        .map(|(id, (&p, &a))| PredictionRecord {
            cell: cell_id.clone(),
            conversation_id: id.clone(),
            predicted: p,
            actual: a,
        })
        .collect();
    Ok(EvalReport {
        rows: vec![row],
        predictions,
    })
}

/// The turn-pair grid (2,3)..(9,10), clipped to what the shortest run allows.
pub fn default_pairs(runs: &[ConversationRun]) -> Vec<(usize, usize)> {
    let k = runs.iter().map(|r| r.num_turns()).min().unwrap_or(0);
    (2..=9).filter(|&t| t < k).map(|t| (t, t + 1)).collect()
}

fn check_pairs(runs: &[ConversationRun], pairs: &[(usize, usize)]) -> Result<()> {
    let k = runs.iter().map(|r| r.num_turns()).min().unwrap_or(0);
    for &(t, e) in pairs {
        if e != t + 1 || t == 0 {
            return Err(Error::invalid(format!(
                "turn pair ({t},{e}) is not of the form (T, T+1)"
            )));
        }
        if e > k {
            return Err(Error::invalid(format!(
                "turn pair ({t},{e}) exceeds run length {k}"
            )));
        }
    }
    Ok(())
}

/// Runs one cell per turn pair in the given mode.
#[allow(clippy::too_many_arguments)]
pub fn run_grid(
    runs: &[ConversationRun],
    labels: &LabelSet,
    predictor: Predictor,
    classifier: ClassifierKind,
    split: &Split,
    pairs: &[(usize, usize)],
    mode: Mode,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    check_pairs(runs, pairs)?;
    let mut report = EvalReport::default();
    for &(t, _) in pairs {
        let cell = Cell {
            predictor,
            classifier,
            mode,
            turn_train: t,
        };
        report.extend(run_cell(runs, labels, split, cell, cfg)?);
    }
    Ok(report)
}

/// Multi-turn protocol: features from turns 1..=T predict the label at T+1.
pub fn run_turn_pair(
    runs: &[ConversationRun],
    labels: &LabelSet,
    predictor: Predictor,
    classifier: ClassifierKind,
    split: &Split,
    pairs: &[(usize, usize)],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    run_grid(
        runs,
        labels,
        predictor,
        classifier,
        split,
        pairs,
        Mode::Multi,
        cfg,
    )
}

/// Single-turn ablation: features from turn T alone.
pub fn run_single_turn(
    runs: &[ConversationRun],
    labels: &LabelSet,
    predictor: Predictor,
    classifier: ClassifierKind,
    split: &Split,
    pairs: &[(usize, usize)],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    run_grid(
        runs,
        labels,
        predictor,
        classifier,
        split,
        pairs,
        Mode::Single,
        cfg,
    )
}

/// Result of [`cutoff_sensitivity`].
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffSensitivity {
    pub report: EvalReport,
    /// (cutoff, conversations found by the eval turn) in input order.
    pub found_counts: Vec<(usize, usize)>,
}

/// Single-turn autoencoder on the top-ranked item only, with ground truth
/// relabelled at each cutoff. One row per cutoff.
pub fn cutoff_sensitivity(
    runs: &[ConversationRun],
    cutoffs: &[usize],
    split: &Split,
    pair: (usize, usize),
    cfg: &EvalConfig,
) -> Result<CutoffSensitivity> {
    check_pairs(runs, &[pair])?;
    let mut report = EvalReport::default();
    let mut found_counts = Vec::with_capacity(cutoffs.len());
    for &c in cutoffs {
        let labels = label_runs(runs, c)?;
        found_counts.push((c, labels.found_count(pair.1)));
        let cell = Cell {
            predictor: Predictor::AeTop1,
            classifier: ClassifierKind::AeHead,
            mode: Mode::Single,
            turn_train: pair.0,
        };
        report.extend(run_cell(runs, &labels, split, cell, cfg)?);
    }
    Ok(CutoffSensitivity {
        report,
        found_counts,
    })
}

/// Table-style grid: one line per predictor/classifier, one column per turn
/// pair, one section per scenario (and mode). Returns (csv, aligned text).
pub fn render_grid(rows: &[ReportRow]) -> (String, String) {
    let mut pairs: Vec<(usize, usize)> = rows.iter().map(|r| (r.turn_train, r.turn_eval)).collect();
    pairs.sort_unstable();
    pairs.dedup();
    type Systems = BTreeMap<(String, String), BTreeMap<(usize, usize), f64>>;
    let mut sections: BTreeMap<(String, String, usize), Systems> = BTreeMap::new();
    for r in rows {
        sections
            .entry((r.scenario.clone(), r.mode.clone(), r.cutoff))
            .or_default()
            .entry((r.predictor.clone(), r.classifier.clone()))
            .or_default()
            .insert((r.turn_train, r.turn_eval), r.accuracy);
    }
    let pair_labels: Vec<String> = pairs.iter().map(|(t, e)| format!("{t},{e}")).collect();

    let mut csv_out = String::from("scenario,mode,cutoff,predictor,classifier");
    for p in &pair_labels {
        write!(csv_out, ",\"{p}\"").unwrap();
    }
    csv_out.push('\n');

    let name_width = sections
        .values()
        .flat_map(|s| s.keys())
        .map(|(p, c)| p.len() + c.len() + 1)
        .max()
        .unwrap_or(0)
        .max(9);
    let mut text = String::new();
    for ((scenario, mode, cutoff), systems) in &sections {
        writeln!(text, "== {scenario} ({mode}-turn, cutoff {cutoff}) ==").unwrap();
        write!(text, "{:<name_width$}", "turn pair").unwrap();
        for p in &pair_labels {
            write!(text, " {p:>6}").unwrap();
        }
        text.push('\n');
        for ((predictor, classifier), cells) in systems {
            write!(
                csv_out,
                "{scenario},{mode},{cutoff},{predictor},{classifier}"
            )
            .unwrap();
            write!(text, "{:<name_width$}", format!("{predictor}/{classifier}")).unwrap();
            for p in &pairs {
                match cells.get(p) {
                    Some(a) => {
                        write!(csv_out, ",{a:.4}").unwrap();
                        write!(text, " {a:>6.2}").unwrap();
                    }
                    None => {
                        csv_out.push(',');
                        write!(text, " {:>6}", "-").unwrap();
                    }
                }
            }
            csv_out.push('\n');
            text.push('\n');
        }
        text.push('\n');
    }
    (csv_out, text)
}
