//! Reading the hidden heterogeneity back out of a trained model: interaction
//! profiles, clustering, closed-form fits, comparison metrics and virtual
//! decomposition experiments.

mod cluster;
mod decompose;
mod fit;
mod metrics;
mod profiles;
mod report;

pub use cluster::{
    classification_accuracy, cluster_points, hier_cluster, hungarian, normalize_extent, project_profiles,
    ClusterResult, CLUSTER_THRESHOLD,
};
pub use decompose::{cluster_medians, decompose};
pub use fit::{
    compare, fit_boids_terms, fit_masses, fit_power_law, fit_rps_terms, fit_signaling, fit_wave_coeffs,
    huber_regression, linear_fit, mad_outliers, recover_charges, robust_linear_fit, rps_true_poly, select_form,
    split_two_types, FitFamily, FitResult, FormScore, LinearFit, PowerLaw, ProfileForm, SignalingFit, RPS_TERMS,
};
pub use metrics::{field_rmse, pearson, rollout_rmse, sinkhorn_divergence, ssim, SinkhornOptions, SSIM_WINDOW};
pub use profiles::{
    cluster_embeddings, cluster_model, cluster_profiles, default_grid, extract_profiles, extract_profiles_for,
    linspace, profile_rmse, rps_probe_state, InteractionProfile,
};
pub use report::{AnalysisReport, DecompositionScore, Metrics};

#[cfg(test)]
mod tests;
