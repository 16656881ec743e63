//! The five benchmarked prediction methods behind one dispatch point.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::cv::{cross_validate_std, refit_selected, CvConfig, CvRule};
use super::design::StdDesign;
use super::enet::EnetOptions;
use super::irls::{irls_std, IrlsOptions};
use super::weights::{adaptive_weights_from_glm, ainet_weights_from_importance};
use super::FittedModel;
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::forest::{fit_random_forest, gini_importance, predict_forest, Forest, ForestParams};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodId {
    #[serde(rename = "GLM")]
    Glm,
    #[serde(rename = "EN")]
    En,
    #[serde(rename = "AEN")]
    Aen,
    #[serde(rename = "AINET")]
    Ainet,
    #[serde(rename = "RF")]
    Rf,
}

impl MethodId {
    pub const ALL: [MethodId; 5] = [
        MethodId::Glm,
        MethodId::En,
        MethodId::Aen,
        MethodId::Ainet,
        MethodId::Rf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Glm => "GLM",
            MethodId::En => "EN",
            MethodId::Aen => "AEN",
            MethodId::Ainet => "AINET",
            MethodId::Rf => "RF",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

/// Hyperparameters shared by all methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub alphas: Vec<f64>,
    pub n_lambda: usize,
    pub cv_folds: usize,
    pub cv_rule: CvRule,
    pub gamma: f64,
    pub forest: ForestParams,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            alphas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            n_lambda: 100,
            cv_folds: 5,
            cv_rule: CvRule::OneSe,
            gamma: 1.0,
            forest: ForestParams::default(),
        }
    }
}

/// Random streams a method may consume.
#[derive(Clone, Debug)]
pub struct MethodStreams {
    pub fold_split: RngStream,
    pub forest: RngStream,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureStage {
    Fit,
    Cv,
    Predict,
    Metric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub stage: FailureStage,
    pub message: String,
}

impl FitFailure {
    pub fn new(stage: FailureStage, message: impl Into<String>) -> Self {
        FitFailure {
            stage,
            message: message.into(),
        }
    }
}

impl fmt::Display for FitFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} failure: {}", self.stage, self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FittedPredictor {
    Linear {
        method: MethodId,
        model: FittedModel,
        /// Cross-validation had to skip penalties with non-converged fold fits.
        #[serde(default)]
        cv_restricted: bool,
    },
    Forest(Forest),
}

impl FittedPredictor {
    pub fn cv_restricted(&self) -> bool {
        matches!(self, FittedPredictor::Linear { cv_restricted: true, .. })
    }

    pub fn linear_model(&self) -> Option<&FittedModel> {
        match self {
            FittedPredictor::Linear { model, .. } => Some(model),
            FittedPredictor::Forest(_) => None,
        }
    }
}

pub fn predict_proba(fitted: &FittedPredictor, x_new: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    match fitted {
        FittedPredictor::Linear { model, .. } => model.predict_proba(x_new),
        FittedPredictor::Forest(f) => predict_forest(f, x_new),
    }
}

type Shared<T> = OnceLock<std::result::Result<T, FitFailure>>;

/// Per-training-set cache so that methods needing the same auxiliary fit
/// (the forest for RF and AINET, the GLM for GLM and AEN) compute it once.
/// Every cached value is a pure function of the training data and streams.
pub(crate) struct TrainingContext<'a> {
    train: &'a Dataset,
    streams: &'a MethodStreams,
    config: &'a MethodConfig,
    design: StdDesign,
    forest: Shared<Forest>,
    glm: Shared<FittedModel>,
}

impl<'a> TrainingContext<'a> {
    pub fn new(train: &'a Dataset, streams: &'a MethodStreams, config: &'a MethodConfig) -> Self {
        TrainingContext {
            train,
            streams,
            config,
            design: StdDesign::new(train.x.view()),
            forest: OnceLock::new(),
            glm: OnceLock::new(),
        }
    }

    fn n(&self) -> usize {
        self.train.n()
    }

    fn p(&self) -> usize {
        self.train.p()
    }

    fn forest(&self) -> std::result::Result<&Forest, FitFailure> {
        self.forest
            .get_or_init(|| {
                fit_random_forest(
                    self.train.x.view(),
                    &self.train.y,
                    &self.streams.forest,
                    &self.config.forest,
                )
                .map_err(|e| FitFailure::new(FailureStage::Fit, e.to_string()))
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    fn plain_glm(&self) -> std::result::Result<&FittedModel, FitFailure> {
        self.glm
            .get_or_init(|| {
                let m = irls_std(&self.design, &self.train.y, None, 0.0, &IrlsOptions::default());
                if m.converged {
                    Ok(m)
                } else {
                    Err(FitFailure::new(FailureStage::Fit, "logistic regression did not converge"))
                }
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    fn cv_fit(
        &self,
        alphas: &[f64],
        weights: &[f64],
        fold_stream: &RngStream,
    ) -> std::result::Result<(FittedModel, bool), FitFailure> {
        let opts = EnetOptions::default();
        let cfg = CvConfig {
            alphas,
            weights,
            k: self.config.cv_folds,
            rule: self.config.cv_rule,
            n_lambda: self.config.n_lambda,
            opts: &opts,
        };
        let sel = cross_validate_std(self.train.x.view(), &self.design, &self.train.y, fold_stream, &cfg);
        if let Some(msg) = sel.failed {
            return Err(FitFailure::new(FailureStage::Cv, msg));
        }
        let model = refit_selected(&self.design, &self.train.y, &sel, weights, &opts);
        if model.converged {
            Ok((model, sel.restricted))
        } else {
            Err(FitFailure::new(FailureStage::Fit, "final elastic-net refit did not converge"))
        }
    }

    pub fn fit(&self, method: MethodId) -> std::result::Result<FittedPredictor, FitFailure> {
        let p = self.p();
        let ones = vec![1.0; p];
        let (model, cv_restricted) = match method {
            MethodId::Glm => {
                if p < self.n() {
                    (self.plain_glm()?.clone(), false)
                } else {
                    self.cv_fit(&[0.0], &ones, &self.streams.fold_split)?
                }
            }
            MethodId::En => self.cv_fit(&self.config.alphas, &ones, &self.streams.fold_split)?,
            MethodId::Aen => {
                let source = if p > self.n() {
                    self.cv_fit(&[0.0], &ones, &self.streams.fold_split.child(1))?.0
                } else {
                    self.plain_glm()?.clone()
                };
                let w = adaptive_weights_from_glm(&source, self.config.gamma)
                    .map_err(|e| FitFailure::new(FailureStage::Fit, e.to_string()))?;
                self.cv_fit(&self.config.alphas, &w, &self.streams.fold_split)?
            }
            MethodId::Ainet => {
                let imp = gini_importance(self.forest()?);
                let w = ainet_weights_from_importance(&imp.raw, self.config.gamma);
                self.cv_fit(&self.config.alphas, &w, &self.streams.fold_split)?
            }
            MethodId::Rf => return Ok(FittedPredictor::Forest(self.forest()?.clone())),
        };
        Ok(FittedPredictor::Linear {
            method,
            model,
            cv_restricted,
        })
    }
}

/// Fits one method on a training set.
pub fn fit_method(
    method: MethodId,
    train: &Dataset,
    streams: &MethodStreams,
    config: &MethodConfig,
) -> std::result::Result<FittedPredictor, FitFailure> {
    if train.n() < 2 {
        return Err(FitFailure::new(FailureStage::Fit, "training set needs at least two rows"));
    }
    TrainingContext::new(train, streams, config).fit(method)
}
