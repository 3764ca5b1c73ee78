use std::error::Error as StdError;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use convperf::classifiers::{LassoParams, LogisticParams};
use convperf::evaluation::{
    compare_predictions, cutoff_sensitivity, default_pairs, read_predictions_csv, read_report_csv,
    render_grid, run_grid, split_labels, AeSettings, ClassifierKind, EvalConfig, EvalReport,
    Predictor,
};
use convperf::features::{AeEncoding, FeatureMatrix, Gamma, Mode};
use convperf::io::{generate_synthetic, read_runs, write_runs, GenConfig};
use convperf::scenario::{identify_easy, induce_missing, label_runs, LabelSet};

use crate::{
    CompareArgs, EvalArgs, FeaturesArgs, GenArgs, LabelArgs, ModeArg, ReportArgs, ScenarioArgs,
};

type CmdResult = Result<(), Box<dyn StdError>>;

/// Stdout writes that ignore a closed pipe instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout().lock(), $($arg)*);
    }};
}

macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

/// `# convperf <cmd> k=v ...` line recording what produced a file.
fn header(cmd: &str, fields: &[(&str, String)]) -> String {
    let mut h = format!("# convperf {cmd}");
    for (k, v) in fields {
        write!(h, " {k}={v}").unwrap();
    }
    h.push('\n');
    h
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>, Box<dyn StdError>> {
    Ok(fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn modes(m: ModeArg) -> Vec<Mode> {
    match m {
        ModeArg::Multi => vec![Mode::Multi],
        ModeArg::Single => vec![Mode::Single],
        ModeArg::Both => vec![Mode::Multi, Mode::Single],
    }
}

fn load_labels(path: &Path) -> Result<LabelSet, Box<dyn StdError>> {
    let bytes = read_file(path)?;
    Ok(LabelSet::read_csv(bytes.as_slice()).map_err(|e| format!("{}: {e}", path.display()))?)
}

pub fn gen(a: GenArgs) -> CmdResult {
    let cfg = GenConfig {
        n_conversations: a.n,
        n_turns: a.turns,
        dim: a.dim,
        catalogue_size: a.catalogue,
        top_n: a.top_n,
        easy_fraction: a.easy_fraction,
        pull_rate_easy: a.pull_easy,
        pull_rate_hard: a.pull_hard,
        noise_sigma: a.sigma,
        pull_decay: a.pull_decay,
        seed: a.seed,
    };
    let runs = generate_synthetic(&cfg)?;
    write_runs(&runs, &a.out)?;
    Ok(())
}

pub fn label(a: LabelArgs) -> CmdResult {
    let runs = read_runs(&a.runs)?;
    let labels = label_runs(&runs, a.cutoff)?;
    let mut out = header(
        "label",
        &[
            ("runs", path_str(&a.runs)),
            ("cutoff", a.cutoff.to_string()),
        ],
    )
    .into_bytes();
    labels.write_csv(&mut out)?;
    write_file(&a.out, &out)
}

pub fn scenario(a: ScenarioArgs) -> CmdResult {
    if a.out == a.runs || a.out == a.labels || a.labels == a.runs {
        return Err("input and output paths must be distinct".into());
    }
    let runs = read_runs(&a.runs)?;
    let base = label_runs(&runs, a.cutoff)?;
    let n_easy = identify_easy(&base)?.len();
    let (mt_runs, mt_labels) = induce_missing(&runs, &base, a.fraction, a.seed)?;
    write_runs(&mt_runs, &a.out)?;
    let mut out = header(
        "scenario",
        &[
            ("runs", path_str(&a.runs)),
            ("fraction", a.fraction.to_string()),
            ("cutoff", a.cutoff.to_string()),
            ("seed", a.seed.to_string()),
        ],
    )
    .into_bytes();
    mt_labels.write_csv(&mut out)?;
    write_file(&a.labels, &out)?;
    outln!(
        "forced {} of {} easy conversations",
        mt_labels.forced.len(),
        n_easy
    );
    Ok(())
}

pub fn features(a: FeaturesArgs) -> CmdResult {
    let predictor: Predictor = a.predictor.parse()?;
    let encoding: AeEncoding = a.ae_input.parse()?;
    let mode = match a.mode {
        ModeArg::Multi => Mode::Multi,
        ModeArg::Single => Mode::Single,
        ModeArg::Both => return Err("features takes a single mode".into()),
    };
    let runs = read_runs(&a.runs)?;
    let gamma = predictor.gamma();
    let mut m = FeatureMatrix::build(&runs, gamma, mode, a.turn, a.top_n)?;
    if matches!(gamma, Gamma::Pooled | Gamma::Top1) {
        let blocks = match mode {
            Mode::Multi => a.turn,
            Mode::Single => 1,
        };
        m.rows = m
            .rows
            .into_iter()
            .map(|r| {
                let block = r.len() / blocks;
                encoding.apply(r, block)
            })
            .collect::<Result<_, _>>()?;
    }
    let mut out = header(
        "features",
        &[
            ("runs", path_str(&a.runs)),
            ("predictor", predictor.to_string()),
            ("mode", mode.name().to_string()),
            ("turn", a.turn.to_string()),
            ("top_n", a.top_n.to_string()),
            ("ae_input", encoding.to_string()),
        ],
    )
    .into_bytes();
    m.write_csv(&mut out)?;
    write_file(&a.out, &out)
}

pub fn eval(a: EvalArgs) -> CmdResult {
    if a.out == a.predictions {
        return Err("--out and --predictions must differ".into());
    }
    let predictor: Predictor = a.predictor.parse()?;
    let classifier = match (&a.classifier, predictor.requires_ae_head()) {
        (None, true) => ClassifierKind::AeHead,
        (None, false) => return Err(format!("predictor {predictor} needs --classifier").into()),
        (Some(c), _) => c.parse::<ClassifierKind>()?,
    };
    let cfg = EvalConfig {
        top_n: a.top_n,
        seed: a.seed,
        ae: AeSettings {
            learning_rate: a.lr,
            epochs: a.epochs,
            rec_weight: a.rec_weight,
            cls_weight: a.cls_weight,
        },
        logistic: LogisticParams {
            lr: a.logreg_lr,
            iters: a.logreg_iters,
        },
        lasso: LassoParams {
            lambda: a.lambda,
            iters: a.lasso_iters,
        },
        n_trees: a.trees,
        ae_encoding: a.ae_input.parse()?,
    };
    let runs = read_runs(&a.runs)?;
    let labels = load_labels(&a.labels)?;
    let split = split_labels(&labels, a.train_ratio, a.seed, !a.no_stratify)?;
    if let Some(w) = &split.warning {
        eprintln!("warning: {w}");
    }
    let pairs = if a.pairs.is_empty() {
        default_pairs(&runs)
    } else {
        a.pairs.clone()
    };
    if pairs.is_empty() {
        return Err("runs are too short for any turn pair".into());
    }

    let mut report = EvalReport::default();
    if a.cutoffs.is_empty() {
        for mode in modes(a.mode) {
            report.extend(run_grid(
                &runs, &labels, predictor, classifier, &split, &pairs, mode, &cfg,
            )?);
        }
    } else {
        let pair = *pairs.last().unwrap();
        let cs = cutoff_sensitivity(&runs, &a.cutoffs, &split, pair, &cfg)?;
        for (c, n) in &cs.found_counts {
            outln!("cutoff {c}: {n} of {} found by turn {}", runs.len(), pair.1);
        }
        report = cs.report;
    }

    let pair_list = pairs
        .iter()
        .map(|(t, e)| format!("{t}-{e}"))
        .collect::<Vec<_>>()
        .join(",");
    let h = header(
        "eval",
        &[
            ("runs", path_str(&a.runs)),
            ("labels", path_str(&a.labels)),
            ("predictor", predictor.to_string()),
            ("classifier", classifier.to_string()),
            ("pairs", pair_list),
            ("seed", a.seed.to_string()),
            ("train_ratio", a.train_ratio.to_string()),
            ("stratified", (!a.no_stratify).to_string()),
            ("top_n", a.top_n.to_string()),
            ("epochs", a.epochs.to_string()),
            ("lr", a.lr.to_string()),
            ("rec_weight", a.rec_weight.to_string()),
            ("cls_weight", a.cls_weight.to_string()),
            ("ae_input", cfg.ae_encoding.to_string()),
            ("lambda", a.lambda.to_string()),
            ("trees", a.trees.to_string()),
            (
                "cutoffs",
                a.cutoffs
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ],
    );
    let mut out = h.clone().into_bytes();
    report.write_report_csv(&mut out)?;
    write_file(&a.out, &out)?;
    let mut out = h.into_bytes();
    report.write_predictions_csv(&mut out)?;
    write_file(&a.predictions, &out)?;
    for r in &report.rows {
        outln!(
            "{} accuracy {:.4} (n={})",
            r.cell_id(),
            r.accuracy,
            r.n_test
        );
    }
    Ok(())
}

pub fn compare(a: CompareArgs) -> CmdResult {
    let pa = read_predictions_csv(read_file(&a.a)?.as_slice())?;
    let pb = read_predictions_csv(read_file(&a.b)?.as_slice())?;
    let results = compare_predictions(&pa, &pb, a.pool)?;
    let mut csv = header(
        "compare",
        &[
            ("a", path_str(&a.a)),
            ("b", path_str(&a.b)),
            ("pooled", a.pool.to_string()),
        ],
    );
    csv.push_str("cell,n,accuracy_a,accuracy_b,b,c,chi2,significant\n");
    for r in &results {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.key,
            r.n,
            r.accuracy_a,
            r.accuracy_b,
            r.test.b,
            r.test.c,
            r.test.chi2,
            r.test.significant
        )
        .unwrap();
        outln!(
            "{}: acc {:.4} vs {:.4}, b={} c={} chi2={:.4}{}",
            r.key,
            r.accuracy_a,
            r.accuracy_b,
            r.test.b,
            r.test.c,
            r.test.chi2,
            if r.test.significant { " *" } else { "" }
        );
    }
    if let Some(out) = &a.out {
        write_file(out, csv.as_bytes())?;
    }
    Ok(())
}

pub fn report(a: ReportArgs) -> CmdResult {
    let mut rows = Vec::new();
    for p in &a.inputs {
        let bytes = read_file(p)?;
        rows.extend(
            read_report_csv(bytes.as_slice()).map_err(|e| format!("{}: {e}", p.display()))?,
        );
    }
    if rows.is_empty() {
        return Err("no report rows in the inputs".into());
    }
    let (csv, text) = render_grid(&rows);
    let inputs = a
        .inputs
        .iter()
        .map(|p| path_str(p))
        .collect::<Vec<_>>()
        .join(",");
    let h = header("report", &[("inputs", inputs)]);
    if let Some(p) = &a.csv {
        write_file(p, format!("{h}{csv}").as_bytes())?;
    }
    match &a.text {
        Some(p) => write_file(p, format!("{h}{text}").as_bytes())?,
        None => out!("{text}"),
    }
    Ok(())
}
