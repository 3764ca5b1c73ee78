//! Python bindings: run generation and I/O, features, labelling and the
//! missing-target scenario, the autoencoder, the evaluation protocol and
//! McNemar's test.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use convperf::autoencoder::AeClassifier;
use convperf::evaluation::{
    default_pairs, run_grid, split_labels, AeSettings, ClassifierKind, EvalConfig, Predictor,
};
use convperf::features::{self, AeEncoding, Gamma, Mode};
use convperf::io::GenConfig;
use convperf::model::{ConversationRun, RankedItem, TurnRanking};
use convperf::scenario::{self, LabelSet};

fn to_py(e: convperf::Error) -> PyErr {
    match e {
        convperf::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = convperf::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

fn parse_mode(s: &str) -> PyResult<Mode> {
    match s {
        "multi" => Ok(Mode::Multi),
        "single" => Ok(Mode::Single),
        _ => Err(PyValueError::new_err(format!("unknown mode {s:?}"))),
    }
}

/// One conversation: per-turn ranked lists plus the target.
#[pyclass(name = "Run", module = "convperf_py", from_py_object)]
#[derive(Clone)]
struct PyRun {
    inner: ConversationRun,
}

#[pymethods]
impl PyRun {
    #[getter]
    fn conversation_id(&self) -> &str {
        &self.inner.conversation_id
    }

    #[getter]
    fn target_id(&self) -> &str {
        &self.inner.target_id
    }

    #[getter]
    fn num_turns(&self) -> usize {
        self.inner.num_turns()
    }

    #[getter]
    fn target_ranks(&self) -> Vec<Option<usize>> {
        self.inner.target_ranks.clone()
    }

    /// Item ids of turn `turn` (1-based) in rank order.
    fn item_ids(&self, turn: usize) -> PyResult<Vec<String>> {
        Ok(self
            .turn(turn)?
            .items
            .iter()
            .map(|i| i.id.clone())
            .collect())
    }

    fn scores(&self, turn: usize) -> PyResult<Vec<f64>> {
        Ok(self.turn(turn)?.items.iter().map(|i| i.score).collect())
    }

    fn embeddings(&self, turn: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(self
            .turn(turn)?
            .items
            .iter()
            .map(|i| i.embedding.0.clone())
            .collect())
    }

    /// 1-based rank of the target within the stored list of `turn`.
    fn rank_of_target(&self, turn: usize) -> PyResult<Option<usize>> {
        Ok(self.turn(turn)?.rank_of(&self.inner.target_id))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: ConversationRun =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py)?;
        Ok(PyRun { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "Run(conversation_id={:?}, target_id={:?}, turns={})",
            self.inner.conversation_id,
            self.inner.target_id,
            self.inner.num_turns()
        )
    }
}

impl PyRun {
    fn turn(&self, turn: usize) -> PyResult<&TurnRanking> {
        self.inner
            .turn(turn)
            .ok_or_else(|| PyValueError::new_err(format!("no turn {turn}")))
    }
}

// Vec<u8> would surface as `bytes`.
fn ints(v: &[u8]) -> Vec<u32> {
    v.iter().map(|&x| u32::from(x)).collect()
}

fn unwrap_runs(runs: &[PyRun]) -> Vec<ConversationRun> {
    runs.iter().map(|r| r.inner.clone()).collect()
}

fn wrap_runs(runs: Vec<ConversationRun>) -> Vec<PyRun> {
    runs.into_iter().map(|inner| PyRun { inner }).collect()
}

/// Cumulative found-by-turn labels for a run set.
#[pyclass(name = "Labels", module = "convperf_py", from_py_object)]
#[derive(Clone)]
struct PyLabels {
    inner: LabelSet,
}

#[pymethods]
impl PyLabels {
    #[getter]
    fn scenario(&self) -> &'static str {
        self.inner.scenario.name()
    }

    #[getter]
    fn cutoff(&self) -> usize {
        self.inner.cutoff
    }

    #[getter]
    fn forced(&self) -> Vec<String> {
        self.inner.forced.iter().cloned().collect()
    }

    /// `{conversation_id: [label at turn 1, ...]}`.
    fn as_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for row in &self.inner.rows {
            d.set_item(&row.conversation_id, ints(&row.labels))?;
        }
        Ok(d)
    }

    fn found_count(&self, turn: usize) -> usize {
        self.inner.found_count(turn)
    }

    /// Conversations found by the final turn.
    fn easy(&self) -> PyResult<Vec<String>> {
        Ok(scenario::identify_easy(&self.inner)
            .map_err(to_py)?
            .into_iter()
            .collect())
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_csv(&mut buf).map_err(to_py)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(PyLabels {
            inner: LabelSet::read_csv(text.as_bytes()).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.rows.len()
    }
}

/// Autoencoder with a softmax head, fitted on standardized rows.
#[pyclass(name = "Autoencoder", module = "convperf_py")]
struct PyAutoencoder {
    inner: AeClassifier,
    #[pyo3(get)]
    loss_trace: Vec<f64>,
}

#[pymethods]
impl PyAutoencoder {
    #[staticmethod]
    #[pyo3(signature = (rows, labels, epochs=100, learning_rate=0.01, rec_weight=1.0, cls_weight=1.0, seed=0))]
    fn fit(
        rows: Vec<Vec<f64>>,
        labels: Vec<u8>,
        epochs: usize,
        learning_rate: f64,
        rec_weight: f64,
        cls_weight: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let settings = AeSettings {
            learning_rate,
            epochs,
            rec_weight,
            cls_weight,
        };
        let width = rows.first().map_or(0, Vec::len);
        let (inner, trace) =
            AeClassifier::fit(&rows, &labels, &settings.config(width, seed)).map_err(to_py)?;
        let mut loss_trace: Vec<f64> = trace.epochs.iter().map(|l| l.total).collect();
        loss_trace.push(trace.final_loss.total);
        Ok(PyAutoencoder { inner, loss_trace })
    }

    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<u32>> {
        Ok(ints(&self.inner.predict(&rows).map_err(to_py)?))
    }

    fn predict_proba(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<[f64; 2]>> {
        rows.iter()
            .map(|r| {
                let z = self.inner.standardizer.transform_row(r);
                self.inner.model.predict_proba(&z).map_err(to_py)
            })
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

#[pyfunction]
#[pyo3(signature = (n=200, turns=10, dim=32, catalogue=2000, top_n=100, easy_fraction=0.7,
                    pull_easy=0.35, pull_hard=0.02, sigma=0.15, pull_decay=1.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn generate(
    n: usize,
    turns: usize,
    dim: usize,
    catalogue: usize,
    top_n: usize,
    easy_fraction: f64,
    pull_easy: f64,
    pull_hard: f64,
    sigma: f64,
    pull_decay: f64,
    seed: u64,
) -> PyResult<Vec<PyRun>> {
    let cfg = GenConfig {
        n_conversations: n,
        n_turns: turns,
        dim,
        catalogue_size: catalogue,
        top_n,
        easy_fraction,
        pull_rate_easy: pull_easy,
        pull_rate_hard: pull_hard,
        noise_sigma: sigma,
        pull_decay,
        seed,
    };
    Ok(wrap_runs(
        convperf::io::generate_synthetic(&cfg).map_err(to_py)?,
    ))
}

#[pyfunction]
fn read_runs(path: &str) -> PyResult<Vec<PyRun>> {
    Ok(wrap_runs(convperf::io::read_runs(path).map_err(to_py)?))
}

#[pyfunction]
fn write_runs(runs: Vec<PyRun>, path: &str) -> PyResult<()> {
    convperf::io::write_runs(&unwrap_runs(&runs), path).map_err(to_py)
}

/// Feature row of one conversation for a predictor at `turn`.
#[pyfunction]
#[pyo3(signature = (run, predictor, turn, mode="multi", top_n=100, ae_input="gram"))]
fn feature_row(
    run: &PyRun,
    predictor: &str,
    turn: usize,
    mode: &str,
    top_n: usize,
    ae_input: &str,
) -> PyResult<Vec<f64>> {
    let predictor: Predictor = parse(predictor)?;
    let encoding: AeEncoding = parse(ae_input)?;
    let gamma = predictor.gamma();
    let (row, blocks) = match parse_mode(mode)? {
        Mode::Multi => (
            features::assemble_multiturn(&run.inner, gamma, turn, top_n),
            turn,
        ),
        Mode::Single => (
            features::assemble_single_turn(&run.inner, gamma, turn, top_n),
            1,
        ),
    };
    let row = row.map_err(to_py)?;
    if matches!(gamma, Gamma::Pooled | Gamma::Top1) {
        let block = row.len() / blocks;
        return encoding.apply(row, block).map_err(to_py);
    }
    Ok(row)
}

/// Coherence measures of one ranked list given as embeddings and scores.
#[pyfunction]
#[pyo3(signature = (embeddings, scores, query=None, top_n=100))]
fn coherence<'py>(
    py: Python<'py>,
    embeddings: Vec<Vec<f64>>,
    scores: Vec<f64>,
    query: Option<Vec<f64>>,
    top_n: usize,
) -> PyResult<Bound<'py, PyDict>> {
    if embeddings.len() != scores.len() {
        return Err(PyValueError::new_err(
            "embeddings and scores differ in length",
        ));
    }
    let items = embeddings
        .into_iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (e, s))| RankedItem::new(format!("item_{i}"), s, e))
        .collect();
    let mut ranking = TurnRanking::from_unsorted(1, items);
    if let Some(q) = query {
        ranking = ranking.with_query(q);
    }
    ranking.validate().map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("ac", features::ac(&ranking, top_n).map_err(to_py)?)?;
    d.set_item("wand", features::wand(&ranking, top_n).map_err(to_py)?)?;
    d.set_item(
        "rv",
        features::reciprocal_volume(&ranking, top_n).map_err(to_py)?,
    )?;
    d.set_item(
        "log_rv",
        features::log_reciprocal_volume(&ranking, top_n).map_err(to_py)?,
    )?;
    d.set_item(
        "apr",
        features::a_pair_ratio(&ranking, top_n).map_err(to_py)?,
    )?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (runs, cutoff=100))]
fn label(runs: Vec<PyRun>, cutoff: usize) -> PyResult<PyLabels> {
    Ok(PyLabels {
        inner: scenario::label_runs(&unwrap_runs(&runs), cutoff).map_err(to_py)?,
    })
}

/// Removes the target from a seeded sample of easy conversations.
#[pyfunction]
#[pyo3(signature = (runs, labels, fraction=0.3, seed=0))]
fn induce_missing(
    runs: Vec<PyRun>,
    labels: &PyLabels,
    fraction: f64,
    seed: u64,
) -> PyResult<(Vec<PyRun>, PyLabels)> {
    let (out, mt) = scenario::induce_missing(&unwrap_runs(&runs), &labels.inner, fraction, seed)
        .map_err(to_py)?;
    Ok((wrap_runs(out), PyLabels { inner: mt }))
}

/// Runs the turn-pair protocol; returns one dict per cell.
#[pyfunction]
#[pyo3(signature = (runs, labels, predictor, classifier=None, pairs=None, mode="multi",
                    seed=0, train_ratio=0.7, stratify=true, top_n=100, epochs=100))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    runs: Vec<PyRun>,
    labels: &PyLabels,
    predictor: &str,
    classifier: Option<&str>,
    pairs: Option<Vec<(usize, usize)>>,
    mode: &str,
    seed: u64,
    train_ratio: f64,
    stratify: bool,
    top_n: usize,
    epochs: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let predictor: Predictor = parse(predictor)?;
    let classifier = match classifier {
        Some(c) => parse(c)?,
        None if predictor.requires_ae_head() => ClassifierKind::AeHead,
        None => {
            return Err(PyValueError::new_err(format!(
                "predictor {predictor} needs a classifier"
            )))
        }
    };
    let runs = unwrap_runs(&runs);
    let pairs = pairs.unwrap_or_else(|| default_pairs(&runs));
    let cfg = EvalConfig {
        top_n,
        seed,
        ae: AeSettings {
            epochs,
            ..AeSettings::default()
        },
        ..EvalConfig::default()
    };
    let split = split_labels(&labels.inner, train_ratio, seed, stratify).map_err(to_py)?;
    let report = run_grid(
        &runs,
        &labels.inner,
        predictor,
        classifier,
        &split,
        &pairs,
        parse_mode(mode)?,
        &cfg,
    )
    .map_err(to_py)?;
    report
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("predictor", &r.predictor)?;
            d.set_item("classifier", &r.classifier)?;
            d.set_item("scenario", &r.scenario)?;
            d.set_item("mode", &r.mode)?;
            d.set_item("turn_train", r.turn_train)?;
            d.set_item("turn_eval", r.turn_eval)?;
            d.set_item("cutoff", r.cutoff)?;
            d.set_item("accuracy", r.accuracy)?;
            d.set_item("n_test", r.n_test)?;
            Ok(d)
        })
        .collect()
}

/// McNemar's test from discordant counts: `(chi2, significant)`.
#[pyfunction]
fn mcnemar(b: usize, c: usize) -> (f64, bool) {
    let m = convperf::evaluation::mcnemar_counts(b, c);
    (m.chi2, m.significant)
}

/// McNemar's test on two prediction vectors: `(b, c, chi2, significant)`.
#[pyfunction]
fn mcnemar_predictions(
    a: Vec<u8>,
    b: Vec<u8>,
    actual: Vec<u8>,
) -> PyResult<(usize, usize, f64, bool)> {
    let m = convperf::evaluation::mcnemar(&a, &b, &actual).map_err(to_py)?;
    Ok((m.b, m.c, m.chi2, m.significant))
}

#[pymodule]
fn convperf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRun>()?;
    m.add_class::<PyLabels>()?;
    m.add_class::<PyAutoencoder>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(read_runs, m)?)?;
    m.add_function(wrap_pyfunction!(write_runs, m)?)?;
    m.add_function(wrap_pyfunction!(feature_row, m)?)?;
    m.add_function(wrap_pyfunction!(coherence, m)?)?;
    m.add_function(wrap_pyfunction!(label, m)?)?;
    m.add_function(wrap_pyfunction!(induce_missing, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(mcnemar, m)?)?;
    m.add_function(wrap_pyfunction!(mcnemar_predictions, m)?)?;
    Ok(())
}
