//! Config-driven runs shared by the command-line tool and the acceptance tests.

use crate::config::{ConfigError, ExperimentConfig, SuiteTarget};
use crate::data::{self, DataError, OneClassSplit, RawDataset};
use crate::distill::{self, DistillError, GanPair, Role, TeacherRun};
use crate::eval::{self, SuiteReport};
use crate::model::CostReport;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Distill(#[from] DistillError),
}

/// Both partitions of a dataset, loaded once and split per class.
#[derive(Clone, Debug)]
pub struct DataBundle {
    pub train: RawDataset,
    pub test: RawDataset,
}

impl DataBundle {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let root = cfg.data_root()?;
        let (train, test) = data::load_partitions(cfg.data.kind, &root)?;
        Ok(Self { train, test })
    }

    /// One-class split for `class` with the configured subset limits.
    pub fn split(&self, cfg: &ExperimentConfig, class: u8) -> Result<OneClassSplit, DataError> {
        let mut split = data::make_one_class_split(&self.train, &self.test, class)?;
        if let Some(n) = cfg.data.train_limit {
            split = split.with_train_limit(n);
        }
        if let Some(n) = cfg.data.test_limit {
            split = split.with_test_limit(n)?;
        }
        Ok(split)
    }
}

/// Loads the configured dataset and the split for `data.normal_class`.
pub fn load_split(cfg: &ExperimentConfig) -> Result<OneClassSplit, ExperimentError> {
    Ok(DataBundle::load(cfg)?.split(cfg, cfg.data.normal_class)?)
}

pub fn train_teacher(cfg: &ExperimentConfig, split: &OneClassSplit) -> Result<TeacherRun, ExperimentError> {
    Ok(distill::train_teacher(split, &cfg.teacher_spec(), &cfg.teacher_train, &cfg.objectives())?)
}

/// Trains whatever `suite.target` selects and returns the final AUC of the
/// network it reports on.
pub fn suite_cell(cfg: &ExperimentConfig, split: &OneClassSplit) -> Result<f64, ExperimentError> {
    let teacher = train_teacher(cfg, split)?;
    let history = match cfg.suite.target {
        SuiteTarget::Teacher => {
            return match teacher.history.final_auc(Role::Teacher) {
                Some(auc) => Ok(auc),
                None => final_auc(&teacher.pair, split),
            }
        }
        SuiteTarget::Kdgan => {
            distill::run_kdgan(cfg.structure()?, teacher.pair, &cfg.student_spec(), split, &cfg.student_train, &cfg.objectives())?.history
        }
        SuiteTarget::Progressive => {
            let run = distill::run_progressive(
                cfg.variant()?,
                teacher.pair,
                &cfg.student_spec(),
                split,
                &cfg.student_train,
                &cfg.step2_train,
                &cfg.objectives(),
            )?;
            run.full_history()
        }
    };
    history.final_auc(Role::Student).ok_or_else(|| DistillError::InvalidConfig("run produced no student evaluation".into()).into())
}

fn final_auc(pair: &GanPair<f32>, split: &OneClassSplit) -> Result<f64, ExperimentError> {
    Ok(eval::evaluate_model(&pair.gen, split).map_err(DistillError::from)?.auc)
}

/// Runs every (class, repeat) cell of the configured suite. Cells that fail
/// are reported as failures; the others still run.
pub fn run_suite(cfg: &ExperimentConfig, bundle: &DataBundle) -> SuiteReport {
    let suite = &cfg.suite;
    let seeds: Vec<u64> = (0..suite.repeats).map(|r| suite.seed(r)).collect();
    let (cost, epochs) = match suite.target {
        SuiteTarget::Teacher => (CostReport::of(&cfg.teacher_spec()), cfg.teacher_train.epochs),
        SuiteTarget::Kdgan => (CostReport::of(&cfg.student_spec()), cfg.student_train.epochs),
        SuiteTarget::Progressive => (CostReport::of(&cfg.student_spec()), cfg.student_train.epochs + cfg.step2_train.epochs),
    };
    eval::run_suite(cfg.data.kind.name(), &suite.classes, suite.repeats, seeds.clone(), epochs, Some(cost), |class, repeat| {
        let split = bundle.split(cfg, class).map_err(|e| e.to_string())?;
        let cell_cfg = cfg.clone().with_seed(seeds[repeat]);
        suite_cell(&cell_cfg, &split).map_err(|e| e.to_string())
    })
}
