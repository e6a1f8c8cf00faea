//! ROC analysis and the cross-lot train/test experiment driver.

mod roc;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, scan_tree, split, DatasetError, DatasetIndex};
use crate::detector::{
    fine_tune, Hyperparams, Model, ModelError, ModelSpec, TrainError, TrainReport,
};
use crate::Label;

pub use roc::{auc, rates_at, roc, Rates, RocCurve, RocPoint};

/// Decision threshold used for the reported FPR/FNR.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation input: {0}")]
    Validation(String),
    #[error("experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Result of evaluating one trained model on one test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub train_lots: Vec<String>,
    pub test_lots: Vec<String>,
    pub auc: f64,
    pub fpr_at_half: f64,
    pub fnr_at_half: f64,
    pub positive_count: usize,
    pub negative_count: usize,
    pub roc: RocCurve,
}

impl EvalReport {
    pub fn train_name(&self) -> String {
        self.train_lots.join("+")
    }

    pub fn test_name(&self) -> String {
        self.test_lots.join("+")
    }

    pub fn from_scores(
        train_lots: Vec<String>,
        test_lots: Vec<String>,
        scores: &[f64],
        labels: &[Label],
    ) -> Result<EvalReport, EvalError> {
        let curve = roc(scores, labels)?;
        let rates = rates_at(scores, labels, DECISION_THRESHOLD)?;
        Ok(EvalReport {
            train_lots,
            test_lots,
            auc: curve.auc(),
            fpr_at_half: rates.fpr,
            fnr_at_half: rates.fnr,
            positive_count: curve.positive_count,
            negative_count: curve.negative_count,
            roc: curve,
        })
    }
}

/// The three train/test arrangements compared across lots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    /// Train on one lot, test on the same lot.
    Single,
    /// Train on one lot, test on each of the others.
    Cross,
    /// Train on all lots, test on all lots pooled.
    Multi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub train_lots: Vec<String>,
    pub test_lots: Vec<String>,
    /// Evaluate the test lots as one pooled set instead of one report each.
    pub pool_test_lots: bool,
    pub spec: ModelSpec,
    pub hp: Hyperparams,
    pub split_ratio: f64,
    pub split_seed: u64,
    /// Set the model's preprocessing means from the training split.
    pub fit_channel_means: bool,
}

impl ExperimentPlan {
    pub fn new(
        train_lots: Vec<String>,
        test_lots: Vec<String>,
        spec: ModelSpec,
        hp: Hyperparams,
    ) -> Self {
        ExperimentPlan {
            train_lots,
            test_lots,
            pool_test_lots: false,
            spec,
            hp,
            split_ratio: 0.5,
            split_seed: 0,
            fit_channel_means: true,
        }
    }

    /// Plans for one design over `lots`.
    pub fn for_design(
        design: Design,
        lots: &[String],
        spec: &ModelSpec,
        hp: &Hyperparams,
    ) -> Vec<ExperimentPlan> {
        let plan = |train: Vec<String>, test: Vec<String>| {
            ExperimentPlan::new(train, test, spec.clone(), hp.clone())
        };
        match design {
            Design::Single => lots
                .iter()
                .map(|l| plan(vec![l.clone()], vec![l.clone()]))
                .collect(),
            Design::Cross => lots
                .iter()
                .filter_map(|l| {
                    let others: Vec<String> = lots.iter().filter(|o| *o != l).cloned().collect();
                    (!others.is_empty()).then(|| plan(vec![l.clone()], others))
                })
                .collect(),
            Design::Multi => {
                let mut p = plan(lots.to_vec(), lots.to_vec());
                p.pool_test_lots = true;
                vec![p]
            }
        }
    }
}

/// Occupied-probability scores for every record of `index`.
pub fn score_index(
    model: &Model,
    index: &DatasetIndex,
) -> Result<(Vec<f64>, Vec<Label>), EvalError> {
    const CHUNK: usize = 64;
    let pre = model.preprocessor();
    let mut scores = Vec::with_capacity(index.len());
    let mut labels = Vec::with_capacity(index.len());
    let ids: Vec<usize> = (0..index.len()).collect();
    for chunk in ids.chunks(CHUNK) {
        let (batch, l) = dataset::load_batch(index, chunk, &pre)?;
        scores.extend(model.predict_batch(&batch)?.into_iter().map(f64::from));
        labels.extend(l);
    }
    Ok((scores, labels))
}

/// Evaluates a trained model on the given test lots of `test_split`.
pub fn evaluate(
    model: &Model,
    test_split: &DatasetIndex,
    train_lots: &[String],
    test_lots: &[String],
    pooled: bool,
) -> Result<Vec<EvalReport>, EvalError> {
    let groups: Vec<Vec<String>> = if pooled {
        vec![test_lots.to_vec()]
    } else {
        test_lots.iter().map(|l| vec![l.clone()]).collect()
    };
    groups
        .into_iter()
        .map(|group| {
            let subset = test_split.filter_lots(&group)?;
            let (scores, labels) = score_index(model, &subset)?;
            EvalReport::from_scores(train_lots.to_vec(), group, &scores, &labels)
        })
        .collect()
}

/// Outcome of one plan: the trained model, its training report, and one
/// evaluation report per test set.
pub struct ExperimentOutcome {
    pub model: Model,
    pub train_report: TrainReport,
    pub reports: Vec<EvalReport>,
}

/// Splits `index`, trains once on the training half of the plan's train
/// lots, and evaluates on the held-out half of each test lot.
pub fn run_experiment_on(
    plan: &ExperimentPlan,
    index: &DatasetIndex,
) -> Result<ExperimentOutcome, EvalError> {
    if plan.train_lots.is_empty() || plan.test_lots.is_empty() {
        return Err(EvalError::Config(
            "plan needs at least one train and one test lot".into(),
        ));
    }
    let known = index.lots();
    for lot in plan.train_lots.iter().chain(&plan.test_lots) {
        if !known.contains(lot) {
            return Err(EvalError::Config(format!(
                "lot {lot:?} not found; available: {}",
                known.join(", ")
            )));
        }
    }
    let (train, test) = split(index, plan.split_ratio, plan.split_seed)?;
    let train = train.filter_lots(&plan.train_lots)?;
    let mut model = Model::build(plan.spec.clone())?;
    if plan.fit_channel_means {
        model.set_channel_means(dataset::channel_means(&train)?);
    }
    let train_report = fine_tune(&mut model, &train, &plan.hp)?;
    tracing::info!(
        train = %plan.train_lots.join("+"),
        accuracy = train_report.final_train_accuracy,
        seconds = train_report.wall_time_s,
        "training finished"
    );
    let reports = evaluate(
        &model,
        &test,
        &plan.train_lots,
        &plan.test_lots,
        plan.pool_test_lots,
    )?;
    Ok(ExperimentOutcome {
        model,
        train_report,
        reports,
    })
}

pub fn run_experiment(
    plan: &ExperimentPlan,
    data_root: impl AsRef<Path>,
) -> Result<Vec<EvalReport>, EvalError> {
    let index = scan_tree(data_root)?;
    Ok(run_experiment_on(plan, &index)?.reports)
}

fn write_file(path: &Path, body: &str) -> Result<(), EvalError> {
    let mut f = fs::File::create(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(body.as_bytes())
        .map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

pub const REPORT_CSV_HEADER: &str = "train,test,auc,fpr,fnr,positives,negatives";
pub const ROC_CSV_HEADER: &str = "threshold,fpr,tpr";

/// File name of the ROC table for a report: `roc_<train>_<test>.csv`.
pub fn roc_file_name(report: &EvalReport) -> String {
    format!("roc_{}_{}.csv", report.train_name(), report.test_name())
}

/// Writes `report.csv` plus one ROC table per report. Returns the paths
/// written.
pub fn emit(reports: &[EvalReport], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::Validation("no reports to emit".into()));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|source| EvalError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::with_capacity(reports.len() + 1);

    let mut summary = String::from(REPORT_CSV_HEADER);
    summary.push('\n');
    for r in reports {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.train_name(),
            r.test_name(),
            fmt6(r.auc),
            fmt6(r.fpr_at_half),
            fmt6(r.fnr_at_half),
            r.positive_count,
            r.negative_count
        ));
    }
    let path = out_dir.join("report.csv");
    write_file(&path, &summary)?;
    written.push(path);

    for r in reports {
        let mut body = String::from(ROC_CSV_HEADER);
        body.push('\n');
        for p in &r.roc.points {
            body.push_str(&format!(
                "{},{},{}\n",
                fmt6(p.threshold),
                fmt6(p.fpr),
                fmt6(p.tpr)
            ));
        }
        let path = out_dir.join(roc_file_name(r));
        write_file(&path, &body)?;
        written.push(path);
    }
    Ok(written)
}
