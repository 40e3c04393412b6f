use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{log_sum_exp, CovarianceType, Gmm};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub components: usize,
    pub max_iters: usize,
    /// Stop once the mean log-likelihood changes by less than this fraction.
    pub tolerance: f64,
    pub covariance: CovarianceType,
    pub seed: u64,
    /// Eigenvalue floor as a fraction of the mean per-dimension variance of
    /// the training data.
    pub variance_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            components: 1,
            max_iters: 100,
            tolerance: 1e-6,
            covariance: CovarianceType::Full,
            seed: 0,
            variance_floor: 1e-6,
        }
    }
}

impl EmConfig {
    pub fn with_components(components: usize) -> Self {
        Self {
            components,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("EM needs at least one iteration".into()));
        }
        if !(self.tolerance >= 0.0) || !(self.variance_floor > 0.0) {
            return Err(Error::Config("tolerance and variance floor must be positive".into()));
        }
        Ok(())
    }
}

/// Mean log-likelihood after initialization and after every EM iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

impl EmTrace {
    pub fn iterations(&self) -> usize {
        self.log_likelihood.len().saturating_sub(1)
    }

    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood.last().unwrap_or(&f64::NAN)
    }
}

fn check_data(data: &[Vec<f64>]) -> Result<usize> {
    let Some(first) = data.first() else {
        return Err(Error::EmptyInput("no training vectors".into()));
    };
    let d = first.len();
    if d == 0 {
        return Err(Error::Shape("zero-dimensional training vectors".into()));
    }
    if data.iter().any(|x| x.len() != d) {
        return Err(Error::Shape("training vectors differ in dimension".into()));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateData("non-finite training value".into()));
    }
    Ok(d)
}

/// Absolute eigenvalue floor: `fraction` times the mean per-dimension variance.
fn absolute_floor(data: &[Vec<f64>], fraction: f64) -> Result<f64> {
    let n = data.len() as f64;
    let d = data[0].len();
    let mut total = 0.0;
    for j in 0..d {
        let mean = data.iter().map(|x| x[j]).sum::<f64>() / n;
        total += data.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n;
    }
    let avg = total / d as f64;
    if avg <= 0.0 || !avg.is_finite() {
        return Err(Error::DegenerateData("training data has zero variance".into()));
    }
    Ok(fraction * avg)
}

/// Smallest change to `s` that has every eigenvalue at least `floor`.
///
/// Clamping eigenvalues is the exact maximizer of the Gaussian likelihood
/// under that constraint, so EM stays monotone.
fn floor_covariance(s: &DMatrix<f64>, floor: f64, kind: CovarianceType) -> DMatrix<f64> {
    let d = s.nrows();
    if kind == CovarianceType::Diagonal {
        return DMatrix::from_diagonal(&DVector::from_iterator(d, (0..d).map(|i| s[(i, i)].max(floor))));
    }
    let sym = (s + s.transpose()) * 0.5;
    let shifted = &sym - DMatrix::identity(d, d) * floor;
    if shifted.cholesky().is_some() {
        return sym;
    }
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

fn weighted_moments(
    data: &[Vec<f64>],
    resp: impl Fn(usize) -> f64,
    kind: CovarianceType,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let d = data[0].len();
    let n_k: f64 = (0..data.len()).map(&resp).sum();
    let mut mean = DVector::zeros(d);
    for (i, x) in data.iter().enumerate() {
        let r = resp(i);
        for j in 0..d {
            mean[j] += r * x[j];
        }
    }
    mean /= n_k;
    let cov = match kind {
        CovarianceType::Full => {
            let mut c = DMatrix::zeros(d, data.len());
            for (i, x) in data.iter().enumerate() {
                let s = resp(i).sqrt();
                for j in 0..d {
                    c[(j, i)] = s * (x[j] - mean[j]);
                }
            }
            (&c * c.transpose()) / n_k
        }
        CovarianceType::Diagonal => {
            let mut v = DVector::zeros(d);
            for (i, x) in data.iter().enumerate() {
                let r = resp(i);
                for j in 0..d {
                    v[j] += r * (x[j] - mean[j]).powi(2);
                }
            }
            DMatrix::from_diagonal(&(v / n_k))
        }
    };
    (n_k, mean, cov)
}

fn sq_dist(a: &[f64], b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centers: &[DVector<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

fn distinct_points(data: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = data
        .iter()
        .map(|x| x.iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// k-means++ seeding followed by ten Lloyd iterations, with full covariances
/// and the default floor.
pub fn kmeans_init(data: &[Vec<f64>], k: usize, seed: u64) -> Result<Gmm> {
    kmeans_init_with(
        data,
        &EmConfig {
            components: k,
            seed,
            ..EmConfig::default()
        },
    )
}

pub fn kmeans_init_with(data: &[Vec<f64>], cfg: &EmConfig) -> Result<Gmm> {
    cfg.validate()?;
    check_data(data)?;
    let k = cfg.components;
    if data.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} vectors for {k} components",
            data.len()
        )));
    }
    let distinct = distinct_points(data);
    if distinct < k {
        return Err(Error::DegenerateData(format!(
            "only {distinct} distinct vectors for {k} components"
        )));
    }
    let floor = absolute_floor(data, cfg.variance_floor)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut centers = vec![DVector::from_column_slice(&data[rng.gen_range(0..data.len())])];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let pick = WeightedIndex::new(&d2)
            .map_err(|e| Error::DegenerateData(format!("k-means++ seeding failed: {e}")))?
            .sample(&mut rng);
        let c = DVector::from_column_slice(&data[pick]);
        for (v, x) in d2.iter_mut().zip(data) {
            *v = v.min(sq_dist(x, &c));
        }
        centers.push(c);
    }

    let d = data[0].len();
    let mut labels = vec![0; data.len()];
    for _ in 0..10 {
        labels = data.par_iter().map(|x| nearest(x, &centers)).collect();
        let mut sums = vec![DVector::zeros(d); k];
        let mut counts = vec![0usize; k];
        for (x, &l) in data.iter().zip(&labels) {
            counts[l] += 1;
            for j in 0..d {
                sums[l][j] += x[j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = &sums[c] / counts[c] as f64;
            }
        }
    }
    labels = data.par_iter().map(|x| nearest(x, &centers)).collect();

    let n = data.len() as f64;
    let (mut weights, mut means, mut covs) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..k {
        let count = labels.iter().filter(|l| **l == c).count();
        weights.push(count as f64 / n);
        if count == 0 {
            means.push(centers[c].clone());
            covs.push(DMatrix::identity(d, d) * floor);
            continue;
        }
        let (_, mean, cov) = weighted_moments(data, |i| if labels[i] == c { 1.0 } else { 0.0 }, cfg.covariance);
        means.push(mean);
        covs.push(floor_covariance(&cov, floor, cfg.covariance));
    }
    Gmm::new(weights, means, covs, cfg.covariance)
}

/// Per-point responsibilities and the mean log-likelihood.
fn e_step(g: &Gmm, data: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let rows: Vec<(Vec<f64>, f64)> = data
        .par_iter()
        .map(|x| {
            let lp = g.component_log_densities(x);
            let ll = log_sum_exp(&lp);
            (lp.iter().map(|v| (v - ll).exp()).collect(), ll)
        })
        .collect();
    // sequential sum keeps the result independent of thread scheduling
    let total: f64 = rows.iter().map(|r| r.1).sum();
    let resp = rows.into_iter().map(|r| r.0).collect();
    (resp, total / data.len() as f64)
}

fn m_step(g: &Gmm, data: &[Vec<f64>], resp: &[Vec<f64>], floor: f64) -> Result<Gmm> {
    let k = g.components();
    let n = data.len() as f64;
    let kind = g.covariance_type();
    let parts: Vec<(f64, DVector<f64>, DMatrix<f64>)> = (0..k)
        .into_par_iter()
        .map(|c| {
            let n_k: f64 = resp.iter().map(|r| r[c]).sum();
            if n_k <= 1e-12 * n {
                // empty component: keep its shape, drop its weight
                return (0.0, g.means()[c].clone(), g.covariances()[c].clone());
            }
            let (n_k, mean, cov) = weighted_moments(data, |i| resp[i][c], kind);
            (n_k, mean, floor_covariance(&cov, floor, kind))
        })
        .collect();
    let total: f64 = parts.iter().map(|p| p.0).sum();
    let weights = parts.iter().map(|p| p.0 / total).collect();
    let (means, covs) = parts.into_iter().map(|p| (p.1, p.2)).unzip();
    Gmm::new(weights, means, covs, kind)
}

/// Fits a mixture by expectation-maximization.
pub fn em_fit(data: &[Vec<f64>], cfg: &EmConfig) -> Result<Gmm> {
    em_fit_traced(data, cfg).map(|(g, _)| g)
}

/// [`em_fit`] that also returns the log-likelihood history.
///
/// A drop in likelihood beyond rounding slack is reported as a numerical
/// failure, since EM with an exact M-step cannot decrease it.
pub fn em_fit_traced(data: &[Vec<f64>], cfg: &EmConfig) -> Result<(Gmm, EmTrace)> {
    cfg.validate()?;
    check_data(data)?;
    if data.len() < 10 * cfg.components {
        log::warn!(
            "{} training vectors for {} components; at least {} recommended",
            data.len(),
            cfg.components,
            10 * cfg.components
        );
    }
    let floor = absolute_floor(data, cfg.variance_floor)?;
    let mut g = kmeans_init_with(data, cfg)?;
    let (mut resp, mut ll) = e_step(&g, data);
    if !ll.is_finite() {
        return Err(Error::NumericalFailure {
            iteration: 0,
            reason: "non-finite log-likelihood after initialization".into(),
        });
    }
    let mut history = vec![ll];
    let mut converged = false;
    for it in 1..=cfg.max_iters {
        let next = m_step(&g, data, &resp, floor).map_err(|e| match e {
            Error::Conditioning { component } => Error::NumericalFailure {
                iteration: it,
                reason: format!("covariance of component {component} lost definiteness"),
            },
            other => other,
        })?;
        let (r, ll_new) = e_step(&next, data);
        if !ll_new.is_finite() {
            return Err(Error::NumericalFailure {
                iteration: it,
                reason: "non-finite log-likelihood".into(),
            });
        }
        if ll_new < ll - 1e-9 * ll.abs().max(1.0) {
            return Err(Error::NumericalFailure {
                iteration: it,
                reason: format!("log-likelihood decreased from {ll} to {ll_new}"),
            });
        }
        history.push(ll_new);
        let done = (ll_new - ll).abs() <= cfg.tolerance * ll.abs().max(1e-300);
        g = next;
        resp = r;
        ll = ll_new;
        if done {
            converged = true;
            break;
        }
    }
    log::debug!(
        "EM: K={} after {} iterations, mean log-likelihood {ll:.6}",
        cfg.components,
        history.len() - 1
    );
    Ok((
        g,
        EmTrace {
            log_likelihood: history,
            converged,
        },
    ))
}
