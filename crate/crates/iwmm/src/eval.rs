//! Metrics and the experimental protocol: Rand index, ten-fold
//! cross-validated test log-likelihood, and the KDE and collapsed-iGMM
//! baselines. The iGMM baseline is the sampler's identity-mapping mode; no
//! second mixture implementation exists.

use nalgebra::{DMatrix, DVector};

use crate::data::{center, Dataset};
use crate::error::{Error, Result};
use crate::math::{iso_gaussian_log_density, logsumexp};
use crate::mcmc::{run_chain, Mapping, SampleRecord, SamplerConfig};
use crate::mixture::{Assignments, ComponentStats, GwPrior, GwPriorSpec};
use crate::predictive::DensityEstimator;
use crate::rng::{stream_rng, Stream};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fraction of point pairs on which two partitions agree.
pub fn rand_index(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "label vectors have lengths {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len();
    if n < 2 {
        return Err(Error::Data(
            "rand index is undefined for fewer than two points".into(),
        ));
    }
    let mut agree = 0usize;
    for i in 0..n {
        for j in 0..i {
            let same_pred = pred[i] == pred[j];
            let same_truth = truth[i] == truth[j];
            if same_pred == same_truth {
                agree += 1;
            }
        }
    }
    Ok(agree as f64 / (n * (n - 1) / 2) as f64)
}

/// Reduce a sample archive to one partition: the assignment vector of the
/// sample with the highest log joint (MAP among samples).
pub fn cluster_summary(samples: &[SampleRecord]) -> Result<Vec<usize>> {
    samples
        .iter()
        .max_by(|a, b| {
            a.log_joint
                .partial_cmp(&b.log_joint)
                .expect("log joints are finite")
        })
        .map(|s| s.z.clone())
        .ok_or_else(|| Error::Data("archive contains no samples".into()))
}

/// Assignment of N points to `k` folds; sizes differ by at most one.
#[derive(Debug, Clone)]
pub struct FoldPlan {
    pub fold_of: Vec<usize>,
    pub k: usize,
}

pub fn fold_plan(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::Config(vec![format!(
            "fold count {k} must lie in [2, n = {n}]"
        )]));
    }
    let mut rng = stream_rng(seed, Stream::Folds);
    let mut order: Vec<usize> = (0..n).collect();
    // Fisher-Yates
    use rand::RngExt;
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut fold_of = vec![0usize; n];
    for (rank, &idx) in order.iter().enumerate() {
        fold_of[idx] = rank % k;
    }
    Ok(FoldPlan { fold_of, k })
}

impl FoldPlan {
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != fold)
            .collect()
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == fold)
            .collect()
    }
}

fn subset(ds: &Dataset, rows: &[usize]) -> Dataset {
    let y = DMatrix::from_fn(rows.len(), ds.d(), |i, j| ds.y[(rows[i], j)]);
    let labels = ds
        .labels
        .as_ref()
        .map(|l| rows.iter().map(|&i| l[i]).collect());
    Dataset {
        name: ds.name.clone(),
        y,
        labels,
    }
}

// --- kernel density estimation -------------------------------------------

fn pairwise_sq_dists(y: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let n = y.nrows();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..i {
            let sq = (y.row(i) - y.row(j)).norm_squared();
            d[i][j] = sq;
            d[j][i] = sq;
        }
    }
    d
}

/// Leave-one-out log density of the training set under an isotropic
/// Gaussian KDE with bandwidth `h`.
fn kde_loo_objective(sq_dists: &[Vec<f64>], d: usize, h: f64) -> f64 {
    let n = sq_dists.len();
    let log_norm = -0.5 * d as f64 * (2.0 * std::f64::consts::PI * h * h).ln();
    let mut total = 0.0;
    for i in 0..n {
        let logs: Vec<f64> = (0..n)
            .filter(|&m| m != i)
            .map(|m| log_norm - 0.5 * sq_dists[i][m] / (h * h))
            .collect();
        total += logsumexp(&logs) - ((n - 1) as f64).ln();
    }
    total
}

/// Bandwidth maximizing the leave-one-out log density, found by
/// golden-section search over log bandwidth in [1e-3, 1e3] × the median
/// pairwise distance.
pub fn kde_fit(train: &DMatrix<f64>) -> Result<f64> {
    let n = train.nrows();
    if n < 2 {
        return Err(Error::Data("KDE needs at least two training points".into()));
    }
    let sq = pairwise_sq_dists(train);
    let mut dists: Vec<f64> = (0..n)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| sq[i][j].sqrt())
        .collect();
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = dists[dists.len() / 2];
    if median <= 0.0 {
        return Err(Error::Numerical(
            "bandwidth search failed: training points are all identical".into(),
        ));
    }

    let d = train.ncols();
    let f = |log_h: f64| kde_loo_objective(&sq, d, log_h.exp());
    let (mut lo, mut hi) = ((1e-3 * median).ln(), (1e3 * median).ln());
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut m1 = hi - phi * (hi - lo);
    let mut m2 = lo + phi * (hi - lo);
    let mut f1 = f(m1);
    let mut f2 = f(m2);
    while hi - lo > 1e-4 {
        if f1 < f2 {
            lo = m1;
            m1 = m2;
            f1 = f2;
            m2 = lo + phi * (hi - lo);
            f2 = f(m2);
        } else {
            hi = m2;
            m2 = m1;
            f2 = f1;
            m1 = hi - phi * (hi - lo);
            f1 = f(m1);
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// KDE log density of one point given the training set and bandwidth.
pub fn kde_log_density(y: &DVector<f64>, train: &DMatrix<f64>, h: f64) -> f64 {
    let logs: Vec<f64> = (0..train.nrows())
        .map(|m| iso_gaussian_log_density(y, &train.row(m).transpose(), h * h))
        .collect();
    logsumexp(&logs) - (train.nrows() as f64).ln()
}

// --- iGMM predictive ------------------------------------------------------

/// Exact collapsed predictive log density of one (centered) point under one
/// identity-mode posterior sample.
fn igmm_sample_log_density(
    sample: &SampleRecord,
    prior: &GwPrior,
    y_centered: &DVector<f64>,
) -> Result<f64> {
    let asgn = Assignments::from_labels(&sample.x, &sample.z, prior)?;
    let n = sample.z.len() as f64;
    let denom = (n + prior.eta()).ln();
    let mut logs: Vec<f64> = asgn
        .active()
        .map(|(_, st)| (st.count() as f64).ln() - denom + st.log_pred(y_centered))
        .collect();
    logs.push(prior.eta().ln() - denom + ComponentStats::empty(prior).log_pred(y_centered));
    Ok(logsumexp(&logs))
}

/// Posterior-averaged iGMM log density of one (centered) point.
pub fn igmm_log_density(
    samples: &[SampleRecord],
    prior: &GwPrior,
    y_centered: &DVector<f64>,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("archive contains no samples".into()));
    }
    let logs: Vec<f64> = samples
        .iter()
        .map(|s| igmm_sample_log_density(s, prior, y_centered))
        .collect::<Result<_>>()?;
    Ok(logsumexp(&logs) - (samples.len() as f64).ln())
}

// --- benchmark protocol ----------------------------------------------------

/// A method entering the benchmark tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Warped mixture with the given latent dimension.
    Iwmm { q: usize },
    /// Identity-mapping (unwarped) mixture.
    Igmm,
    /// Isotropic Gaussian KDE with leave-one-out bandwidth.
    Kde,
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Iwmm { q } => format!("iwmm-q{q}"),
            Method::Igmm => "igmm".to_string(),
            Method::Kde => "kde".to_string(),
        }
    }

    /// Parse a method name; `d` resolves the `iwmm-qd` shorthand.
    pub fn parse(s: &str, d: usize) -> Result<Method> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "igmm" => Ok(Method::Igmm),
            "kde" => Ok(Method::Kde),
            "iwmm-qd" => Ok(Method::Iwmm { q: d }),
            _ => {
                if let Some(rest) = s.strip_prefix("iwmm-q") {
                    let q: usize = rest.parse().map_err(|_| {
                        Error::Usage(format!("cannot parse latent dimension in method '{s}'"))
                    })?;
                    Ok(Method::Iwmm { q })
                } else {
                    Err(Error::Usage(format!(
                        "unknown method '{s}' (expected iwmm-q<N>, iwmm-qd, igmm or kde)"
                    )))
                }
            }
        }
    }
}

/// Per-fold values of one metric for one method on one dataset.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub dataset: String,
    pub method: String,
    pub metric: String,
    pub per_fold: Vec<f64>,
    pub mean: f64,
    pub std_err: f64,
}

impl MetricReport {
    fn from_values(dataset: &str, method: &str, metric: &str, values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        MetricReport {
            dataset: dataset.to_string(),
            method: method.to_string(),
            metric: metric.to_string(),
            per_fold: values,
            mean,
            std_err: (var / n).sqrt(),
        }
    }
}

/// Benchmark settings: the sampler template is specialized per method
/// (mapping, latent dimension), folds fan out independently.
#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub sampler: SamplerConfig,
    pub prior: GwPriorSpec,
    pub folds: usize,
    pub fold_seed: u64,
    pub predictive_draws: usize,
}

/// Scores for one (fold, method) pair.
struct FoldScore {
    fold: usize,
    method: String,
    rand: Option<f64>,
    test_log_lik: f64,
}

fn score_fold(
    ds: &Dataset,
    plan: &FoldPlan,
    fold: usize,
    method: Method,
    cfg: &BenchmarkConfig,
) -> Result<FoldScore> {
    let train = subset(ds, &plan.train_indices(fold));
    let test = subset(ds, &plan.test_indices(fold));
    let d = ds.d();

    match method {
        Method::Kde => {
            let h = kde_fit(&train.y)?;
            let ll = (0..test.n())
                .map(|i| kde_log_density(&test.y.row(i).transpose(), &train.y, h))
                .sum::<f64>()
                / test.n() as f64;
            Ok(FoldScore {
                fold,
                method: method.name(),
                rand: None,
                test_log_lik: ll,
            })
        }
        Method::Igmm => {
            let centered = center(&train.y);
            let prior = cfg.prior.build(d)?;
            let mut sampler = cfg.sampler.clone();
            sampler.mapping = Mapping::Identity;
            sampler.latent_dim = d;
            sampler.seed = cfg.sampler.seed.wrapping_add(fold as u64);
            let out = run_chain(&centered.values, &prior, &sampler)?;

            let rand = match &train.labels {
                Some(truth) => Some(rand_index(&cluster_summary(&out.samples)?, truth)?),
                None => None,
            };
            let ll = (0..test.n())
                .map(|i| {
                    let yc = test.y.row(i).transpose() - &centered.means;
                    igmm_log_density(&out.samples, &prior, &yc)
                })
                .sum::<Result<f64>>()?
                / test.n() as f64;
            Ok(FoldScore {
                fold,
                method: method.name(),
                rand,
                test_log_lik: ll,
            })
        }
        Method::Iwmm { q } => {
            let centered = center(&train.y);
            let prior = cfg.prior.build(q)?;
            let mut sampler = cfg.sampler.clone();
            sampler.mapping = Mapping::Warped;
            sampler.latent_dim = q;
            sampler.seed = cfg.sampler.seed.wrapping_add(fold as u64);
            let out = run_chain(&centered.values, &prior, &sampler)?;

            let rand = match &train.labels {
                Some(truth) => Some(rand_index(&cluster_summary(&out.samples)?, truth)?),
                None => None,
            };
            let est = DensityEstimator::from_samples(
                &out.samples,
                &centered.values,
                &centered.means,
                &prior,
                cfg.predictive_draws,
                sampler.seed,
            )?;
            let ll = (0..test.n())
                .map(|i| est.log_density(&test.y.row(i).transpose()))
                .sum::<f64>()
                / test.n() as f64;
            Ok(FoldScore {
                fold,
                method: method.name(),
                rand,
                test_log_lik: ll,
            })
        }
    }
}

/// Run the full fold × method grid on one dataset and aggregate per-method
/// metric reports. Folds (and methods within folds) are independent jobs.
pub fn run_benchmark(
    ds: &Dataset,
    methods: &[Method],
    cfg: &BenchmarkConfig,
) -> Result<Vec<MetricReport>> {
    if methods.is_empty() {
        return Err(Error::Usage("benchmark needs at least one method".into()));
    }
    let plan = fold_plan(ds.n(), cfg.folds, cfg.fold_seed)?;
    let jobs: Vec<(usize, Method)> = (0..cfg.folds)
        .flat_map(|f| methods.iter().map(move |&m| (f, m)))
        .collect();

    #[cfg(feature = "parallel")]
    let scores: Result<Vec<FoldScore>> = jobs
        .par_iter()
        .map(|&(fold, method)| score_fold(ds, &plan, fold, method, cfg))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let scores: Result<Vec<FoldScore>> = jobs
        .iter()
        .map(|&(fold, method)| score_fold(ds, &plan, fold, method, cfg))
        .collect();
    let mut scores = scores?;
    scores.sort_by(|a, b| (a.fold, &a.method).cmp(&(b.fold, &b.method)));

    let mut reports = Vec::new();
    for method in methods {
        let name = method.name();
        let lls: Vec<f64> = scores
            .iter()
            .filter(|s| s.method == name)
            .map(|s| s.test_log_lik)
            .collect();
        reports.push(MetricReport::from_values(
            &ds.name,
            &name,
            "test_log_lik",
            lls,
        ));
        let rands: Vec<f64> = scores
            .iter()
            .filter(|s| s.method == name)
            .filter_map(|s| s.rand)
            .collect();
        if !rands.is_empty() {
            reports.push(MetricReport::from_values(
                &ds.name,
                &name,
                "rand_index",
                rands,
            ));
        }
    }
    Ok(reports)
}
