use serde::{Deserialize, Serialize};

use super::cluster::ClusterResult;
use super::fit::{FitResult, FormScore, PowerLaw};
use crate::prelude::*;
use crate::simulate::SystemKind;

/// Scalar scores of a model against ground truth; absent when not computed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub profile_rmse: Option<f64>,
    pub rollout_rmse: Option<f64>,
    pub sinkhorn: Option<f64>,
    pub ssim: Option<f64>,
    pub pearson: Option<f64>,
}

/// Rollout of one recovered type in isolation against the true single-type system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionScore {
    pub cluster: usize,
    pub true_type: usize,
    pub nodes: usize,
    pub steps: usize,
    pub rmse: f64,
}

/// Everything an analysis run recovered from a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub kind: SystemKind,
    pub n_nodes: usize,
    pub clusters: Option<ClusterResult>,
    pub fits: Vec<FitResult>,
    /// Power-law fit per cluster median (gravity, coulomb).
    pub power_laws: Vec<PowerLaw>,
    /// BIC ranking of candidate forms for the first cluster's profile.
    pub form_selection: Vec<FormScore>,
    pub metrics: Metrics,
    pub decomposition: Vec<DecompositionScore>,
    pub notes: Vec<String>,
}

impl AnalysisReport {
    pub fn new(kind: SystemKind, n_nodes: usize) -> Self {
        AnalysisReport {
            kind,
            n_nodes,
            clusters: None,
            fits: Vec::new(),
            power_laws: Vec::new(),
            form_selection: Vec::new(),
            metrics: Metrics::default(),
            decomposition: Vec::new(),
            notes: vec!["embedding projection uses PCA in place of UMAP".to_string()],
        }
    }
}
