//! The analysis pipeline behind `hdyn analyze`: clustering, profiles, coefficient
//! fits, rollout metrics and virtual decomposition, scored against the ground
//! truth stored with the dataset.

use std::fmt;

use hetdyn_core::analyze::{
    classification_accuracy, cluster_embeddings, cluster_medians, cluster_model, compare, decompose, default_grid,
    extract_profiles, extract_profiles_for, field_rmse, fit_boids_terms, fit_power_law, fit_rps_terms,
    fit_signaling, fit_wave_coeffs, linspace, pearson, recover_charges, rollout_rmse, rps_true_poly, select_form,
    sinkhorn_divergence, ssim, AnalysisReport, ClusterResult, DecompositionScore, FitFamily, InteractionProfile,
    PowerLaw, SinkhornOptions,
};
use hetdyn_core::dyncore::Frame;
use hetdyn_core::gnn::{rollout, EdgeQuery, InteractionModel, TruthModel};
use hetdyn_core::simulate::{simulate_from, Environment, SystemKind, Trajectory};
use serde::{Deserialize, Serialize};

use crate::error::{HdynError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Cluster,
    Profiles,
    Fit,
    Metrics,
    Decompose,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Cluster, Task::Profiles, Task::Fit, Task::Metrics, Task::Decompose];

    pub fn name(self) -> &'static str {
        match self {
            Task::Cluster => "cluster",
            Task::Profiles => "profiles",
            Task::Fit => "fit",
            Task::Metrics => "metrics",
            Task::Decompose => "decompose",
        }
    }

    /// Parses a comma-separated task list.
    pub fn parse_list(list: &str) -> Result<Vec<Task>> {
        let mut out = Vec::new();
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let task = Task::ALL.into_iter().find(|t| t.name() == name).ok_or_else(|| {
                let valid: Vec<&str> = Task::ALL.iter().map(|t| t.name()).collect();
                HdynError::Usage(format!("unknown task `{name}`; valid tasks: {}", valid.join(", ")))
            })?;
            if !out.contains(&task) {
                out.push(task);
            }
        }
        if out.is_empty() {
            return Err(HdynError::Usage("no analysis tasks given".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub tasks: Vec<Task>,
    /// Rollout length for the metrics task; defaults to the whole trajectory.
    pub rollout_steps: Option<usize>,
    /// Rollout length of each purified type; defaults to the whole trajectory.
    pub decompose_steps: Option<usize>,
    pub sinkhorn: SinkhornOptions,
    /// Random probes per node for the regression fits.
    pub fit_samples: usize,
    pub seed: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            tasks: Task::ALL.to_vec(),
            rollout_steps: None,
            decompose_steps: None,
            sinkhorn: SinkhornOptions::default(),
            fit_samples: 400,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub node: usize,
    pub cluster: Option<usize>,
    pub x: f64,
    pub response: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub node: usize,
    pub a0: f64,
    pub a1: f64,
    pub cluster: Option<usize>,
    pub true_type: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredRow {
    pub quantity: String,
    pub index: usize,
    pub recovered: f64,
    pub truth: f64,
}

/// Report plus the plot-ready tables.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub report: AnalysisReport,
    pub profiles: Vec<ProfileRow>,
    pub embedding: Vec<EmbeddingRow>,
    pub recovered: Vec<RecoveredRow>,
}

/// Nodes that take part in training: all of them, except mesh borders.
pub fn scored_nodes(env: &Environment, n: usize) -> Vec<usize> {
    match &env.mesh {
        Some(mesh) => mesh.interior().collect(),
        None => (0..n).collect(),
    }
}

/// Profile grid used for scoring: the model's band from `d = 0.005` (or its own
/// lower cutoff, if larger) for particles, the default probe grid otherwise.
pub fn scoring_grid(model: &dyn InteractionModel) -> Result<Vec<f64>> {
    let (lap, state) = model.probe_ranges();
    if let Some(b) = model.band().filter(|_| model.kind().is_particle()) {
        let lo = b.d_min.max(0.005);
        let hi = b.d_max - 1e-3 * (b.d_max - b.d_min);
        return Ok(linspace(lo, hi, 200));
    }
    Ok(default_grid(model, lap, state)?)
}

/// Majority cluster of each true type (`None` for types without nodes).
pub fn type_clusters(labels: &[usize], truth: &[usize], n_types: usize) -> Vec<Option<usize>> {
    let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
    (0..n_types)
        .map(|t| {
            let mut votes = vec![0usize; n_clusters];
            for (&l, &tt) in labels.iter().zip(truth) {
                if tt == t {
                    votes[l] += 1;
                }
            }
            (0..n_clusters).filter(|&c| votes[c] > 0).max_by_key(|&c| (votes[c], std::cmp::Reverse(c)))
        })
        .collect()
}

/// Least-squares coefficient of `response ~ c * d^p` for a fixed exponent.
pub fn fixed_power_coefficient(p: &InteractionProfile, exponent: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&d, &r) in p.grid.iter().zip(&p.response) {
        let b = d.powf(exponent);
        num += r * b;
        den += b * b;
    }
    num / den
}

fn median(mut v: Vec<f64>) -> f64 {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

struct Context<'a> {
    model: &'a dyn InteractionModel,
    data: &'a [Trajectory],
    env: Environment,
    truth: TruthModel,
    scored: Vec<usize>,
    opts: &'a AnalysisOptions,
}

impl Context<'_> {
    fn traj(&self) -> &Trajectory {
        &self.data[0]
    }

    fn kind(&self) -> SystemKind {
        self.model.kind()
    }

    fn true_types(&self) -> &[usize] {
        &self.traj().latents.type_id
    }
}

pub fn analyze(model: &dyn InteractionModel, data: &[Trajectory], opts: &AnalysisOptions) -> Result<Analysis> {
    let first = data.first().ok_or_else(|| HdynError::Usage("no trajectories to analyze".into()))?;
    if first.kind() != model.kind() {
        return Err(HdynError::Usage(format!(
            "model is {} but the data is {}",
            model.kind().name(),
            first.kind().name()
        )));
    }
    if first.n() != model.n_nodes() {
        return Err(HdynError::Usage(format!(
            "model has {} nodes but the data has {}",
            model.n_nodes(),
            first.n()
        )));
    }
    let env = first.environment()?;
    let ctx = Context {
        model,
        data,
        truth: TruthModel::new(env.clone(), first.latents.clone()),
        scored: scored_nodes(&env, first.n()),
        env,
        opts,
    };
    let mut out = Analysis {
        report: AnalysisReport::new(first.kind(), first.n()),
        profiles: Vec::new(),
        embedding: Vec::new(),
        recovered: Vec::new(),
    };
    let wants = |t: Task| opts.tasks.contains(&t);
    // Clusters feed the fits and the decomposition, so they are computed whenever
    // one of those is requested.
    let clusters = if wants(Task::Cluster) || wants(Task::Fit) || wants(Task::Decompose) {
        Some(clusters(&ctx, &mut out)?)
    } else {
        None
    };
    if wants(Task::Cluster) {
        out.report.clusters = clusters.clone();
    }
    let emb = model.embeddings();
    out.embedding = (0..first.n())
        .map(|i| EmbeddingRow {
            node: i,
            a0: emb[i][0],
            a1: emb[i][1],
            cluster: clusters.as_ref().map(|c| c.labels[i]),
            true_type: ctx.true_types()[i],
        })
        .collect();
    if wants(Task::Profiles) {
        profiles(&ctx, clusters.as_ref(), &mut out)?;
    }
    if wants(Task::Fit) {
        fits(&ctx, clusters.as_ref().expect("clusters computed for fits"), &mut out)?;
    }
    if wants(Task::Metrics) {
        metrics(&ctx, &mut out)?;
    }
    if wants(Task::Decompose) {
        decomposition(&ctx, clusters.as_ref().expect("clusters computed for decomposition"), &mut out)?;
    }
    Ok(out)
}

/// Profile clustering, except boids (embedding clustering) and signaling (split
/// of the fitted self-coupling). Mesh borders are scored out.
fn clusters(ctx: &Context, out: &mut Analysis) -> Result<ClusterResult> {
    let n = ctx.traj().n();
    let result = match ctx.kind() {
        SystemKind::Boids => {
            out.report.notes.push("clusters from the embeddings".into());
            cluster_embeddings(&ctx.model.embeddings())
        }
        SystemKind::Signaling => {
            out.report.notes.push("clusters from the fitted update coefficients".into());
            let fit = fit_signaling(ctx.model)?;
            let labels = fit.labels;
            let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
            ClusterResult {
                labels,
                n_clusters,
                accuracy: None,
                outliers: 0,
            }
        }
        _ => {
            out.report.notes.push("clusters from the interaction profiles".into());
            cluster_model(ctx.model, Some(&ctx.env))?
        }
    };
    let truth = ctx.true_types();
    let scored: Vec<usize> = ctx.scored.clone();
    let accuracy = if scored.len() == n {
        classification_accuracy(&result.labels, truth)
    } else {
        let l: Vec<usize> = scored.iter().map(|&i| result.labels[i]).collect();
        let t: Vec<usize> = scored.iter().map(|&i| truth[i]).collect();
        classification_accuracy(&l, &t)
    };
    Ok(ClusterResult {
        accuracy: Some(accuracy),
        ..result
    })
}

fn profiles(ctx: &Context, clusters: Option<&ClusterResult>, out: &mut Analysis) -> Result<()> {
    let grid = scoring_grid(ctx.model)?;
    let beta = ctx.env.beta;
    let learned = extract_profiles(ctx.model, &grid, beta)?;
    let true_emb: Vec<[f64; 2]> = (0..ctx.traj().n()).map(|i| [i as f64, 0.0]).collect();
    let truth = extract_profiles_for(&ctx.truth, &true_emb, &grid, beta)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for &i in &ctx.scored {
        for (k, &x) in grid.iter().enumerate() {
            let (r, t) = (learned[i].response[k], truth[i].response[k]);
            sum += (r - t) * (r - t);
            count += 1;
            out.profiles.push(ProfileRow {
                node: i,
                cluster: clusters.map(|c| c.labels[i]),
                x,
                response: r,
                truth: t,
            });
        }
    }
    if ctx.kind() != SystemKind::Signaling {
        // Signaling profiles include the learned scale of A, so they are only
        // comparable after the fit's rescaling.
        out.report.metrics.profile_rmse = Some((sum / count.max(1) as f64).sqrt());
    }
    if let Some(&first) = ctx.scored.first() {
        out.report.form_selection = select_form(&learned[first]);
    }
    Ok(())
}

fn push_recovered(out: &mut Analysis, quantity: &str, recovered: &[f64], truth: &[f64]) {
    for (index, (&r, &t)) in recovered.iter().zip(truth).enumerate() {
        out.recovered.push(RecoveredRow {
            quantity: quantity.to_string(),
            index,
            recovered: r,
            truth: t,
        });
    }
}

/// Radial profile of messages from a sender with embedding `a_j` to a receiver
/// with `a_i`.
fn pair_profile(model: &dyn InteractionModel, a_i: [f64; 2], a_j: [f64; 2], grid: &[f64]) -> Result<InteractionProfile> {
    let q: Vec<EdgeQuery> = grid.iter().map(|&d| EdgeQuery::radial(a_i, a_j, d)).collect();
    Ok(InteractionProfile {
        node: 0,
        grid: grid.to_vec(),
        response: model.messages(&q)?.iter().map(|m| m.x).collect(),
    })
}

fn fits(ctx: &Context, clusters: &ClusterResult, out: &mut Analysis) -> Result<()> {
    let traj = ctx.traj();
    let lat = &traj.latents;
    let model = ctx.model;
    match ctx.kind() {
        SystemKind::Gravity => {
            let grid = scoring_grid(model)?;
            let profiles = extract_profiles(model, &grid, ctx.env.beta)?;
            let laws: Vec<PowerLaw> = profiles.iter().map(fit_power_law).collect();
            let exponent = median(laws.iter().map(|p| p.exponent).collect());
            let masses: Vec<f64> = profiles.iter().map(|p| fixed_power_coefficient(p, exponent)).collect();
            let truth = lat.column("m").expect("gravity latents carry m");
            push_recovered(out, "m", &masses, &truth);
            out.report.fits.push(compare(FitFamily::PowerLaw, &masses, &truth));
            let medians = cluster_medians(&model.embeddings(), clusters);
            for a in medians {
                out.report.power_laws.push(fit_power_law(&pair_profile(model, a, a, &grid)?));
            }
        }
        SystemKind::Coulomb => {
            let grid = scoring_grid(model)?;
            let medians = cluster_medians(&model.embeddings(), clusters);
            let k = medians.len();
            let mut products = vec![f64::NAN; k * k];
            for i in 0..k {
                for j in 0..k {
                    let p = pair_profile(model, medians[i], medians[j], &grid)?;
                    out.report.power_laws.push(fit_power_law(&p));
                    // Radial response is -q_i q_j / d^2.
                    products[i * k + j] = -fixed_power_coefficient(&p, -2.0);
                }
            }
            let q = recover_charges(&products, k)?;
            let truth = lat.column("q").expect("coulomb latents carry q");
            let mut per_node: Vec<f64> = clusters.labels.iter().map(|&c| q[c]).collect();
            // Charges are only defined up to a global sign.
            let err = |s: f64, v: &[f64]| v.iter().zip(&truth).map(|(a, b)| (s * a - b).abs()).fold(0.0, f64::max);
            if err(-1.0, &per_node) < err(1.0, &per_node) {
                per_node.iter_mut().for_each(|v| *v = -*v);
            }
            push_recovered(out, "q", &per_node, &truth);
            out.report.fits.push(compare(FitFamily::PowerLaw, &per_node, &truth));
        }
        SystemKind::Boids => {
            let terms = fit_boids_terms(model, ctx.opts.fit_samples, ctx.opts.seed)?;
            for (k, name) in ["a", "c", "s"].iter().enumerate() {
                let rec: Vec<f64> = terms.iter().map(|t| t[k]).collect();
                let truth = lat.column(name).expect("boids latents carry a, c, s");
                push_recovered(out, name, &rec, &truth);
                out.report.fits.push(compare(FitFamily::BoidsThreeTerm, &rec, &truth));
            }
        }
        SystemKind::Wave => {
            let coeffs = fit_wave_coeffs(model)?;
            let truth = lat.column("a").expect("wave latents carry a");
            let rec: Vec<f64> = ctx.scored.iter().map(|&i| coeffs[i]).collect();
            let tru: Vec<f64> = ctx.scored.iter().map(|&i| truth[i]).collect();
            push_recovered(out, "a", &rec, &tru);
            out.report.fits.push(compare(FitFamily::LinearInLaplacian, &rec, &tru));
        }
        SystemKind::Rps => {
            let terms = fit_rps_terms(model, clusters, ctx.opts.fit_samples, ctx.opts.seed)?;
            let scored_labels: Vec<usize> = ctx.scored.iter().map(|&i| clusters.labels[i]).collect();
            let scored_types: Vec<usize> = ctx.scored.iter().map(|&i| lat.type_id[i]).collect();
            let a = lat.column("a").expect("rps latents carry a");
            let beta = ctx.env.beta;
            let (mut rec, mut tru) = (Vec::new(), Vec::new());
            for (c, coeffs) in terms.iter().enumerate() {
                // Clusters of borders or strays (under 1% of trained nodes) are skipped.
                let members: Vec<usize> = (0..scored_labels.len()).filter(|&k| scored_labels[k] == c).collect();
                if members.len() * 100 < ctx.scored.len() {
                    continue;
                }
                let mut votes = vec![0usize; lat.n_types];
                members.iter().for_each(|&k| votes[scored_types[k]] += 1);
                let true_type = (0..lat.n_types).max_by_key(|&t| votes[t]).unwrap_or(0);
                let a_true = (0..lat.len()).find(|&i| lat.type_id[i] == true_type).map_or(f64::NAN, |i| a[i]);
                let mut want = vec![a_true];
                for k in 0..3 {
                    want.extend_from_slice(&rps_true_poly(k, beta));
                }
                rec.extend_from_slice(coeffs);
                tru.extend(want);
            }
            push_recovered(out, "rps_terms", &rec, &tru);
            out.report.fits.push(compare(FitFamily::RpsPolynomial, &rec, &tru));
        }
        SystemKind::Signaling => {
            let fit = fit_signaling(model)?;
            let dense = traj
                .connectivity
                .as_ref()
                .ok_or_else(|| HdynError::Usage("signaling data without connectivity".into()))?;
            let n = traj.n();
            let truth: Vec<f64> = model
                .connectivity()
                .iter()
                .map(|(e, _)| dense[e.receiver * n + e.sender])
                .collect();
            push_recovered(out, "A", &fit.weights, &truth);
            out.report.fits.push(compare(FitFamily::SignalingSymbolic, &fit.weights, &truth));
            for (k, name) in ["b", "c"].iter().enumerate() {
                let rec: Vec<f64> = fit.node_coeffs.iter().map(|c| c[k]).collect();
                let tru = lat.column(name).expect("signaling latents carry b, c");
                push_recovered(out, name, &rec, &tru);
            }
        }
        SystemKind::AttractionRepulsion => {
            if let Some(field) = &traj.field {
                let learned = model
                    .field(&field.positions, 0)?
                    .ok_or_else(|| HdynError::Usage("model has no hidden-field network".into()))?;
                let truth = field.at(0);
                push_recovered(out, "b", &learned, truth);
                out.report.metrics.pearson = pearson(&learned, truth);
            }
        }
    }
    Ok(())
}

fn metrics(ctx: &Context, out: &mut Analysis) -> Result<()> {
    let traj = ctx.traj();
    let available = traj.len().saturating_sub(1);
    let steps = ctx.opts.rollout_steps.unwrap_or(available).min(available);
    let frames = rollout(ctx.model, &ctx.env, traj.frames[0].clone(), steps)?;
    let truth = &traj.frames[..=steps];
    let kind = ctx.kind();
    if kind.is_particle() {
        let periodic = ctx.env.wrap();
        out.report.metrics.rollout_rmse = Some(rollout_rmse(truth, &frames, periodic)?);
        let opts = SinkhornOptions {
            periodic,
            ..ctx.opts.sinkhorn
        };
        out.report.metrics.sinkhorn = Some(sinkhorn_divergence(&truth[steps].pos, &frames[steps].pos, &opts)?);
    } else {
        let c = kind.derivative_width();
        let values = |f: &Frame| -> Vec<f64> { ctx.scored.iter().flat_map(|&i| f.field_of(i)[..c].to_vec()).collect() };
        let (mut sum, mut count) = (0.0, 0usize);
        for (a, b) in truth.iter().zip(&frames) {
            let r = field_rmse(&values(a), &values(b));
            sum += r * r;
            count += 1;
        }
        out.report.metrics.rollout_rmse = Some((sum / count.max(1) as f64).sqrt());
        if let Some(mesh) = &ctx.env.mesh {
            let first = |f: &Frame| -> Vec<f64> { (0..f.len()).map(|i| f.field_of(i)[0]).collect() };
            if mesh.side >= hetdyn_core::analyze::SSIM_WINDOW {
                out.report.metrics.ssim = Some(ssim(&first(&truth[steps]), &first(&frames[steps]), mesh.side, None)?);
            }
        }
    }
    Ok(())
}

/// Each true type rolled out alone with its cluster's median embedding, against
/// the simulator run on the same nodes from the same initial state.
fn decomposition(ctx: &Context, clusters: &ClusterResult, out: &mut Analysis) -> Result<()> {
    let kind = ctx.kind();
    if !kind.is_particle() {
        out.report.notes.push(format!("decomposition skipped: {} nodes are not separable", kind.name()));
        return Ok(());
    }
    let traj = ctx.traj();
    let lat = &traj.latents;
    let available = traj.len().saturating_sub(1);
    let steps = ctx.opts.decompose_steps.unwrap_or(available).max(1);
    let majority = type_clusters(&clusters.labels, &lat.type_id, lat.n_types);
    for (t, cluster) in majority.iter().enumerate() {
        let Some(cluster) = *cluster else { continue };
        let nodes: Vec<usize> = (0..lat.len()).filter(|&i| lat.type_id[i] == t).collect();
        let initial = traj.frames[0].select(&nodes);
        let mut cfg = traj.config.clone();
        cfg.n = nodes.len();
        cfg.steps = steps + 1;
        let truth = simulate_from(&cfg, ctx.env.clone(), lat.select(&nodes), initial.clone())?;
        let types = vec![cluster; nodes.len()];
        let purified = decompose(ctx.model, &ctx.env, clusters, &types, initial, steps + 1)?;
        let rmse = rollout_rmse(&truth.frames, &purified, ctx.env.wrap())?;
        out.report.decomposition.push(DecompositionScore {
            cluster,
            true_type: t,
            nodes: nodes.len(),
            steps,
            rmse,
        });
    }
    Ok(())
}
