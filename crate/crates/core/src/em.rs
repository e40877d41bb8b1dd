//! Diagonal-covariance Gaussian mixture fitted by Expectation-Maximization.
//!
//! Densities are evaluated in log space; each dimension's variance is floored
//! at `variance_floor × global variance` (with an absolute minimum for
//! constant dimensions) so that collapsed clusters never produce singular
//! densities. The E-step runs in parallel over points, while every reduction
//! is summed in point-index order, so results do not depend on worker count.

use std::collections::HashSet;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest variance ever used, for dimensions that are constant in the data.
pub const MIN_VARIANCE: f64 = 1e-12;

/// Slack allowed when checking the log-likelihood trace for monotonicity.
pub const MONOTONE_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub k: usize,
    pub seed: u64,
    /// Stop when the relative log-likelihood change falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Per-dimension floor as a fraction of that dimension's global variance.
    pub variance_floor: f64,
    /// Independent seeded starts; the fit with the highest final log-likelihood wins.
    pub n_init: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            k: 6,
            seed: 0,
            tol: 1e-6,
            max_iter: 500,
            variance_floor: 1e-6,
            n_init: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub loglik_trace: Vec<f64>,
    pub seed: u64,
    pub converged: bool,
    /// Number of empty-cluster rescues performed during fitting.
    #[serde(default)]
    pub reseeds: usize,
    /// Which of the seeded starts produced this model.
    #[serde(default)]
    pub restart: usize,
}

impl GmmModel {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn iterations(&self) -> usize {
        self.loglik_trace.len()
    }

    /// Per-cluster `ln w_c + ln N(x; μ_c, σ²_c)`.
    fn log_joint(&self, cache: &DensityCache, x: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|c| {
                let mahal: f64 = x
                    .iter()
                    .zip(&self.means[c])
                    .zip(&cache.inv_var[c])
                    .map(|((xi, mu), iv)| (xi - mu) * (xi - mu) * iv)
                    .sum();
                cache.log_norm[c] - 0.5 * mahal
            })
            .collect()
    }
}

struct DensityCache {
    log_norm: Vec<f64>,
    inv_var: Vec<Vec<f64>>,
}

impl DensityCache {
    fn new(model: &GmmModel) -> Self {
        let log_norm = (0..model.k)
            .map(|c| {
                let log_det: f64 = model.variances[c].iter().map(|v| v.ln()).sum();
                model.weights[c].ln() - 0.5 * (model.dim() as f64 * (2.0 * PI).ln() + log_det)
            })
            .collect();
        let inv_var = model
            .variances
            .iter()
            .map(|vs| vs.iter().map(|v| 1.0 / v).collect())
            .collect();
        DensityCache { log_norm, inv_var }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Data("no points to cluster".into()))?;
    for (n, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::Data(format!(
                "point {n} has dimension {}, expected {dim}",
                p.len()
            )));
        }
        if let Some(d) = p.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "point {n} has a non-finite value in dimension {d}"
            )));
        }
    }
    Ok(dim)
}

fn distinct_rows(points: &[Vec<f64>]) -> usize {
    points
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

fn global_moments(points: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = points.len() as f64;
    let dim = points[0].len();
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for p in points {
        for ((v, x), m) in var.iter_mut().zip(p).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Per-dimension variance floors for a dataset.
pub fn variance_floors(points: &[Vec<f64>], rel_floor: f64) -> Vec<f64> {
    let (_, var) = global_moments(points);
    var.iter()
        .map(|v| (rel_floor * v).max(MIN_VARIANCE))
        .collect()
}

/// Initial model: k-means++ seeding of the means (distances scaled by the
/// global per-dimension variance), global variances, uniform weights.
pub fn init_gmm(points: &[Vec<f64>], k: usize, seed: u64) -> Result<GmmModel> {
    init_with_floor(points, k, seed, EmConfig::default().variance_floor)
}

fn init_with_floor(points: &[Vec<f64>], k: usize, seed: u64, rel_floor: f64) -> Result<GmmModel> {
    if k == 0 {
        return Err(Error::Config("cluster count k must be at least 1".into()));
    }
    let dim = check_points(points)?;
    let distinct = distinct_rows(points);
    if distinct < k {
        return Err(Error::TooFewDistinctPoints { k, distinct });
    }
    let (centroid, global_var) = global_moments(points);
    let floors: Vec<f64> = global_var
        .iter()
        .map(|v| (rel_floor * v).max(MIN_VARIANCE))
        .collect();
    let variances: Vec<f64> = global_var
        .iter()
        .zip(&floors)
        .map(|(v, f)| v.max(*f))
        .collect();

    let means = if k == 1 {
        vec![centroid]
    } else {
        let scale: Vec<f64> = global_var
            .iter()
            .map(|v| if *v > 0.0 { 1.0 / v } else { 0.0 })
            .collect();
        let dist2 = |a: &[f64], b: &[f64]| -> f64 {
            a.iter()
                .zip(b)
                .zip(&scale)
                .map(|((x, y), s)| (x - y) * (x - y) * s)
                .sum()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut means = vec![points[rng.random_range(0..points.len())].clone()];
        let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &means[0])).collect();
        while means.len() < k {
            let total: f64 = nearest.iter().sum();
            let pick = if total > 0.0 {
                let mut target = rng.random::<f64>() * total;
                let mut pick = None;
                for (i, d) in nearest.iter().enumerate() {
                    if *d > 0.0 {
                        pick = Some(i);
                        if target < *d {
                            break;
                        }
                        target -= d;
                    }
                }
                pick.expect("positive total implies a positive entry")
            } else {
                // Distinct points that coincide after scaling (they differ only in
                // constant dimensions): take the first unused row.
                points
                    .iter()
                    .position(|p| means.iter().all(|m| m != p))
                    .expect("distinct count checked above")
            };
            let m = points[pick].clone();
            for (d, p) in nearest.iter_mut().zip(points) {
                *d = d.min(dist2(p, &m));
            }
            means.push(m);
        }
        means
    };
    debug_assert!(means.iter().all(|m| m.len() == dim));
    Ok(GmmModel {
        k,
        weights: vec![1.0 / k as f64; k],
        means,
        variances: vec![variances; k],
        loglik_trace: Vec::new(),
        seed,
        converged: false,
        reseeds: 0,
        restart: 0,
    })
}

/// Output of one E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct EStep {
    /// N × k posterior cluster probabilities, rows summing to 1.
    pub responsibilities: Vec<Vec<f64>>,
    /// Per-point log-likelihood under the model.
    pub point_loglik: Vec<f64>,
    pub loglik: f64,
}

impl EStep {
    /// Wrap externally supplied responsibilities (log-likelihoods zeroed).
    pub fn from_responsibilities(responsibilities: Vec<Vec<f64>>) -> Self {
        let n = responsibilities.len();
        EStep {
            responsibilities,
            point_loglik: vec![0.0; n],
            loglik: 0.0,
        }
    }
}

pub fn e_step(model: &GmmModel, points: &[Vec<f64>]) -> EStep {
    let cache = DensityCache::new(model);
    let rows: Vec<(Vec<f64>, f64)> = points
        .par_iter()
        .map(|x| {
            let lj = model.log_joint(&cache, x);
            let lse = log_sum_exp(&lj);
            let mut r: Vec<f64> = lj.iter().map(|l| (l - lse).exp()).collect();
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|v| *v /= s);
            (r, lse)
        })
        .collect();
    let (responsibilities, point_loglik): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let loglik = point_loglik.iter().sum();
    EStep {
        responsibilities,
        point_loglik,
        loglik,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// Clusters whose responsibility mass vanished and were re-seeded.
    pub reseeded: Vec<usize>,
}

/// Maximum-likelihood parameters given responsibilities. A cluster whose total
/// responsibility is below 1e-12 is re-seeded at the point with the lowest
/// log-likelihood, with the global variance and weight 1/N.
/// Weight mass, mean and variance of one component.
type ClusterMoments = (f64, Vec<f64>, Vec<f64>);

pub fn m_step(points: &[Vec<f64>], e: &EStep, floors: &[f64]) -> MStep {
    let n = points.len();
    let k = e.responsibilities.first().map_or(0, Vec::len);
    let dim = floors.len();
    let per_cluster: Vec<Option<ClusterMoments>> = (0..k)
        .into_par_iter()
        .map(|c| {
            let mass: f64 = e.responsibilities.iter().map(|r| r[c]).sum();
            if mass < 1e-12 {
                return None;
            }
            let mut mean = vec![0.0; dim];
            for (x, r) in points.iter().zip(&e.responsibilities) {
                for (m, xi) in mean.iter_mut().zip(x) {
                    *m += r[c] * xi;
                }
            }
            mean.iter_mut().for_each(|m| *m /= mass);
            let mut var = vec![0.0; dim];
            for (x, r) in points.iter().zip(&e.responsibilities) {
                for ((v, xi), m) in var.iter_mut().zip(x).zip(&mean) {
                    *v += r[c] * (xi - m) * (xi - m);
                }
            }
            for (v, f) in var.iter_mut().zip(floors) {
                *v = (*v / mass).max(*f);
            }
            Some((mass / n as f64, mean, var))
        })
        .collect();

    let mut reseeded = Vec::new();
    let (_, global_var) = global_moments(points);
    let worst = e
        .point_loglik
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i);
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for (c, est) in per_cluster.into_iter().enumerate() {
        let (w, m, v) = est.unwrap_or_else(|| {
            reseeded.push(c);
            let var = global_var
                .iter()
                .zip(floors)
                .map(|(g, f)| g.max(*f))
                .collect();
            (1.0 / n as f64, points[worst].clone(), var)
        });
        weights.push(w);
        means.push(m);
        variances.push(v);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    MStep {
        weights,
        means,
        variances,
        reseeded,
    }
}

/// Hard assignment of one fitted point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub cluster: usize,
    pub responsibility: Vec<f64>,
}

impl Assignment {
    pub fn max_responsibility(&self) -> f64 {
        self.responsibility[self.cluster]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub model: GmmModel,
    pub assignments: Vec<Assignment>,
}

/// Seed of restart `r`; restart 0 uses the configured seed unchanged.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Run EM from `cfg.n_init` seeded starts and keep the fit with the highest
/// final log-likelihood (earliest start on ties).
pub fn fit(points: &[Vec<f64>], cfg: &EmConfig) -> Result<Fit> {
    let mut best: Option<Fit> = None;
    for r in 0..cfg.n_init.max(1) {
        let mut f = fit_once(points, cfg, restart_seed(cfg.seed, r))?;
        f.model.seed = cfg.seed;
        f.model.restart = r;
        let ll = |f: &Fit| *f.model.loglik_trace.last().expect("trace is never empty");
        if best.as_ref().is_none_or(|b| ll(&f) > ll(b)) {
            best = Some(f);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Alternate E and M steps until the relative log-likelihood change drops
/// below `cfg.tol` or `cfg.max_iter` M-steps have run.
fn fit_once(points: &[Vec<f64>], cfg: &EmConfig, seed: u64) -> Result<Fit> {
    let mut model = init_with_floor(points, cfg.k, seed, cfg.variance_floor)?;
    let floors = variance_floors(points, cfg.variance_floor);
    let mut iter = 0;
    let e = loop {
        let e = e_step(&model, points);
        if !e.loglik.is_finite() {
            return Err(non_finite_diagnostic(&model, points, &e, iter));
        }
        if let Some(prev) = model.loglik_trace.last() {
            let denom = if *prev != 0.0 { prev.abs() } else { 1.0 };
            if ((e.loglik - prev) / denom).abs() < cfg.tol {
                model.converged = true;
            }
        }
        model.loglik_trace.push(e.loglik);
        if model.converged || iter >= cfg.max_iter {
            break e;
        }
        let m = m_step(points, &e, &floors);
        model.reseeds += m.reseeded.len();
        model.weights = m.weights;
        model.means = m.means;
        model.variances = m.variances;
        iter += 1;
    };
    let assignments = e
        .responsibilities
        .into_iter()
        .map(|r| Assignment {
            cluster: argmax(&r),
            responsibility: r,
        })
        .collect();
    Ok(Fit { model, assignments })
}

fn non_finite_diagnostic(model: &GmmModel, points: &[Vec<f64>], e: &EStep, iter: usize) -> Error {
    let detail = e
        .point_loglik
        .iter()
        .position(|l| !l.is_finite())
        .map(|n| {
            let dim = (0..model.dim())
                .find(|&d| {
                    (0..model.k).any(|c| {
                        let v = model.variances[c][d];
                        !(v.is_finite() && v > 0.0 && model.means[c][d].is_finite())
                    })
                })
                .or_else(|| points[n].iter().position(|v| !v.is_finite()));
            match dim {
                Some(d) => format!("point {n}, dimension {d}"),
                None => format!("point {n}"),
            }
        })
        .unwrap_or_else(|| "log-likelihood sum overflowed".into());
    Error::Numeric(format!(
        "non-finite log-likelihood at iteration {iter}: {detail}"
    ))
}

/// Most probable cluster of a point; ties go to the lower index.
pub fn assign(model: &GmmModel, point: &[f64]) -> usize {
    argmax(&model.log_joint(&DensityCache::new(model), point))
}

/// True when the trace never drops by more than [`MONOTONE_SLACK`].
pub fn is_monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] - MONOTONE_SLACK)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[[f64; 2]], per: usize, sd: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sd).unwrap();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for _ in 0..per {
                pts.push(ctr.iter().map(|m| m + noise.sample(&mut rng)).collect());
                labels.push(c);
            }
        }
        (pts, labels)
    }

    fn one_d(weights: [f64; 2], means: [f64; 2], var: f64) -> GmmModel {
        GmmModel {
            k: 2,
            weights: weights.to_vec(),
            means: means.iter().map(|m| vec![*m]).collect(),
            variances: vec![vec![var]; 2],
            loglik_trace: vec![],
            seed: 0,
            converged: false,
            reseeds: 0,
            restart: 0,
        }
    }

    #[test]
    fn single_cluster_init_is_centroid() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 8.0]];
        let m = init_gmm(&pts, 1, 3).unwrap();
        assert_eq!(m.means[0], vec![2.0, 4.0]);
        assert_eq!(m.weights, vec![1.0]);
    }

    #[test]
    fn init_is_deterministic() {
        let (pts, _) = blobs(&[[0.0, 0.0], [5.0, 5.0], [9.0, 0.0]], 30, 1.0, 1);
        assert_eq!(
            init_gmm(&pts, 3, 11).unwrap(),
            init_gmm(&pts, 3, 11).unwrap()
        );
    }

    #[test]
    fn init_lands_in_distinct_blobs() {
        let centers = [[0.0, 0.0], [20.0, 20.0]];
        for seed in 0..50 {
            let (pts, _) = blobs(&centers, 50, 1.0, 100 + seed);
            let m = init_gmm(&pts, 2, seed).unwrap();
            let nearest = |p: &[f64]| {
                let d: Vec<f64> = centers
                    .iter()
                    .map(|c| -((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)))
                    .collect();
                argmax(&d)
            };
            assert_ne!(nearest(&m.means[0]), nearest(&m.means[1]), "seed {seed}");
        }
    }

    #[test]
    fn init_needs_k_distinct_points() {
        let pts = vec![vec![1.0, 1.0]; 10];
        let err = init_gmm(&pts, 2, 0).unwrap_err();
        assert!(matches!(
            err,
            Error::TooFewDistinctPoints { k: 2, distinct: 1 }
        ));
    }

    #[test]
    fn e_step_point_at_mean_prefers_that_cluster() {
        let m = one_d([0.5, 0.5], [-2.0, 3.0], 1.0);
        let e = e_step(&m, &[vec![3.0]]);
        assert!(e.responsibilities[0][1] > e.responsibilities[0][0]);
    }

    #[test]
    fn e_step_single_cluster() {
        let pts = vec![vec![0.0], vec![5.0], vec![-3.0]];
        let m = init_gmm(&pts, 1, 0).unwrap();
        let e = e_step(&m, &pts);
        assert!(e.responsibilities.iter().all(|r| r == &vec![1.0]));
    }

    #[test]
    fn e_step_matches_closed_form_posterior() {
        // Equal variances: the Gaussian normalisers cancel, and at the midpoint
        // the squared distances are equal, so the posterior equals the prior.
        let m = one_d([0.3, 0.7], [-1.0, 3.0], 2.0);
        let r = &e_step(&m, &[vec![1.0]]).responsibilities[0];
        assert!((r[0] - 0.3).abs() < 1e-12 && (r[1] - 0.7).abs() < 1e-12);

        // Off the midpoint, Bayes' rule in closed form.
        let x: f64 = 0.25;
        let lik = |mu: f64| (-(x - mu).powi(2) / 4.0).exp();
        let expected = 0.3 * lik(-1.0) / (0.3 * lik(-1.0) + 0.7 * lik(3.0));
        let r = &e_step(&m, &[vec![x]]).responsibilities[0];
        assert!((r[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn m_step_hard_assignments_give_sample_moments() {
        let pts = vec![vec![1.0], vec![3.0], vec![10.0], vec![14.0], vec![18.0]];
        let resp = vec![
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ];
        let m = m_step(&pts, &EStep::from_responsibilities(resp), &[1e-12]);
        assert_eq!(m.weights, vec![0.4, 0.6]);
        assert_eq!(m.means, vec![vec![2.0], vec![14.0]]);
        assert_eq!(m.variances[0], vec![1.0]);
        assert!((m.variances[1][0] - 32.0 / 3.0).abs() < 1e-12);
        assert!(m.reseeded.is_empty());
    }

    #[test]
    fn m_step_uniform_responsibilities_share_global_mean() {
        let pts = vec![vec![1.0, -2.0], vec![3.0, 0.0], vec![8.0, 5.0]];
        let resp = vec![vec![1.0 / 3.0; 3]; 3];
        let m = m_step(&pts, &EStep::from_responsibilities(resp), &[1e-12, 1e-12]);
        for mean in &m.means {
            assert!((mean[0] - 4.0).abs() < 1e-12 && (mean[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn m_step_matches_weighted_moment_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let resp: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let m = m_step(
            &pts,
            &EStep::from_responsibilities(resp.clone()),
            &[1e-12; 3],
        );
        for c in 0..4 {
            // Oracle: straightforward two-pass weighted moments.
            let w: Vec<f64> = resp.iter().map(|r| r[c]).collect();
            let sw: f64 = w.iter().sum();
            assert!((m.weights[c] - sw / 20.0).abs() < 1e-12);
            for d in 0..3 {
                let mu: f64 = (0..20).map(|n| w[n] * pts[n][d]).sum::<f64>() / sw;
                let var: f64 = (0..20)
                    .map(|n| w[n] * (pts[n][d] - mu).powi(2))
                    .sum::<f64>()
                    / sw;
                assert!((m.means[c][d] - mu).abs() < 1e-12);
                assert!((m.variances[c][d] - var).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn m_step_reseeds_empty_cluster_at_worst_point() {
        let pts = vec![vec![0.0], vec![1.0], vec![50.0]];
        let mut e = EStep::from_responsibilities(vec![vec![1.0, 0.0]; 3]);
        e.point_loglik = vec![-1.0, -1.5, -40.0];
        let m = m_step(&pts, &e, &[1e-12]);
        assert_eq!(m.reseeded, vec![1]);
        assert_eq!(m.means[1], vec![50.0]);
        assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_two_separated_blobs() {
        let (pts, truth) = blobs(&[[0.0, 0.0], [10.0, 10.0]], 200, 1.0, 9);
        let f = fit(
            &pts,
            &EmConfig {
                k: 2,
                seed: 4,
                ..EmConfig::default()
            },
        )
        .unwrap();
        let hi = argmax(&[f.model.means[0][0], f.model.means[1][0]]);
        let lo = 1 - hi;
        for d in 0..2 {
            assert!(f.model.means[lo][d].abs() < 0.5);
            assert!((f.model.means[hi][d] - 10.0).abs() < 0.5);
        }
        let correct = f
            .assignments
            .iter()
            .zip(&truth)
            .filter(|(a, t)| (a.cluster == hi) == (**t == 1))
            .count();
        assert!(correct as f64 >= 0.99 * pts.len() as f64);
        assert!(f.model.converged);
        assert!(is_monotone(&f.model.loglik_trace));
    }

    #[test]
    fn fit_single_cluster_converges_immediately() {
        let (pts, _) = blobs(&[[3.0, -1.0]], 100, 2.0, 2);
        let f = fit(
            &pts,
            &EmConfig {
                k: 1,
                ..EmConfig::default()
            },
        )
        .unwrap();
        assert!(f.model.converged);
        assert!(f.model.iterations() <= 2);
        let (mean, var) = global_moments(&pts);
        for d in 0..2 {
            assert!((f.model.means[0][d] - mean[d]).abs() < 1e-12);
            assert!((f.model.variances[0][d] - var[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_points_hit_the_variance_floor() {
        let mut pts = vec![vec![1.0, 2.0]; 50];
        pts.extend(vec![vec![4.0, -1.0]; 50]);
        let f = fit(
            &pts,
            &EmConfig {
                k: 2,
                ..EmConfig::default()
            },
        )
        .unwrap();
        let floors = variance_floors(&pts, 1e-6);
        for v in &f.model.variances {
            for (x, fl) in v.iter().zip(&floors) {
                assert!(x.is_finite() && *x >= *fl);
            }
        }
        assert_ne!(f.assignments[0].cluster, f.assignments[99].cluster);
    }

    #[test]
    fn non_finite_input_is_numeric_error() {
        let pts = vec![vec![1.0, f64::NAN], vec![0.0, 0.0], vec![2.0, 2.0]];
        let err = fit(
            &pts,
            &EmConfig {
                k: 2,
                ..EmConfig::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("dimension 1")));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn assign_ties_go_low() {
        let m = one_d([0.5, 0.5], [-1.0, 1.0], 1.0);
        assert_eq!(assign(&m, &[0.0]), 0);
        assert_eq!(assign(&m, &[1.0]), 1);
        assert_eq!(assign(&m, &[-1.0]), 0);
    }

    #[test]
    fn assign_agrees_with_e_step_argmax() {
        let (pts, _) = blobs(&[[0.0, 0.0], [6.0, 6.0]], 100, 1.5, 3);
        let f = fit(
            &pts,
            &EmConfig {
                k: 2,
                ..EmConfig::default()
            },
        )
        .unwrap();
        let e = e_step(&f.model, &pts);
        for (p, r) in pts.iter().zip(&e.responsibilities) {
            assert_eq!(assign(&f.model, p), argmax(r));
        }
    }

    #[test]
    fn responsibilities_are_normalised() {
        let (pts, _) = blobs(&[[0.0, 0.0], [3.0, 1.0], [1.0, 4.0]], 40, 1.0, 8);
        let f = fit(
            &pts,
            &EmConfig {
                k: 3,
                ..EmConfig::default()
            },
        )
        .unwrap();
        assert!((f.model.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for a in &f.assignments {
            assert!((a.responsibility.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn model_json_round_trip() {
        let (pts, _) = blobs(&[[0.0, 0.0], [6.0, 6.0]], 20, 1.0, 3);
        let f = fit(
            &pts,
            &EmConfig {
                k: 2,
                ..EmConfig::default()
            },
        )
        .unwrap();
        let json = serde_json::to_string(&f.model).unwrap();
        let back: GmmModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f.model);
    }
}
