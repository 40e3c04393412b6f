//! Gaussian mixture densities, EM training and joint-density regression.

mod em;
mod joint;

pub use em::{em_fit, em_fit_traced, kmeans_init, kmeans_init_with, EmConfig, EmTrace};
pub use joint::JointGmm;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::textio::{TextReader, TextWriter};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceType {
    #[default]
    Full,
    /// Off-diagonal terms forced to zero. This removes every cross-covariance,
    /// so joint regression degenerates to a mixture of target means.
    Diagonal,
}

impl CovarianceType {
    pub fn as_str(self) -> &'static str {
        match self {
            CovarianceType::Full => "full",
            CovarianceType::Diagonal => "diagonal",
        }
    }
}

impl std::str::FromStr for CovarianceType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(CovarianceType::Full),
            "diagonal" => Ok(CovarianceType::Diagonal),
            other => Err(Error::Config(format!("unknown covariance type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ComponentCache {
    /// Lower Cholesky factor of the covariance.
    chol: DMatrix<f64>,
    /// `ln w - (d ln 2π + ln|Σ|) / 2`
    log_norm: f64,
}

/// A weighted sum of multivariate Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    covariance_type: CovarianceType,
    cache: Vec<ComponentCache>,
}

impl Gmm {
    /// Validates and assembles a mixture. Every covariance must be symmetric
    /// positive definite and the weights must sum to one.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
        covariance_type: CovarianceType,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::EmptyInput("mixture with no components".into()));
        }
        if means.len() != k || covariances.len() != k {
            return Err(Error::Shape(format!(
                "{k} weights, {} means, {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::Shape("zero-dimensional mixture".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::DegenerateData("negative or non-finite weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::DegenerateData(format!("weights sum to {total}")));
        }
        let mut cache = Vec::with_capacity(k);
        for (c, (m, s)) in means.iter().zip(&covariances).enumerate() {
            if m.len() != d || s.nrows() != d || s.ncols() != d {
                return Err(Error::Shape(format!("component {c} has inconsistent dimensions")));
            }
            if m.iter().chain(s.iter()).any(|v| !v.is_finite()) {
                return Err(Error::DegenerateData(format!("component {c} has non-finite parameters")));
            }
            if (s - s.transpose()).amax() > 1e-12 * s.amax().max(1.0) {
                return Err(Error::DegenerateData(format!("covariance {c} is not symmetric")));
            }
            let chol = s
                .clone()
                .cholesky()
                .ok_or(Error::Conditioning { component: c })?
                .unpack();
            let log_det = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            cache.push(ComponentCache {
                chol,
                log_norm: weights[c].ln() - 0.5 * (d as f64 * LN_2PI + log_det),
            });
        }
        Ok(Self {
            weights,
            means,
            covariances,
            covariance_type,
            cache,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    pub fn covariance_type(&self) -> CovarianceType {
        self.covariance_type
    }

    /// `ln(w_k N(x; μ_k, Σ_k))` for every component.
    pub fn component_log_densities(&self, x: &[f64]) -> Vec<f64> {
        let mut diff = DVector::zeros(self.dim());
        self.cache
            .iter()
            .zip(&self.means)
            .map(|(c, m)| {
                for i in 0..diff.len() {
                    diff[i] = x[i] - m[i];
                }
                c.log_norm - 0.5 * mahalanobis_sq(&c.chol, &diff)
            })
            .collect()
    }

    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.component_log_densities(x))
    }

    /// Average per-point log-likelihood.
    pub fn mean_log_likelihood(&self, data: &[Vec<f64>]) -> f64 {
        data.iter().map(|x| self.log_likelihood(x)).sum::<f64>() / data.len() as f64
    }

    /// Component responsibilities for `x`.
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "vector of dimension {} for a {}-dimensional mixture",
                x.len(),
                self.dim()
            )));
        }
        Ok(normalize_log(&self.component_log_densities(x)))
    }

    pub(crate) fn write_text(&self, w: &mut TextWriter) {
        w.line(
            "gmm",
            &[
                self.components().to_string(),
                self.dim().to_string(),
                self.covariance_type.as_str().to_string(),
            ],
        );
        for k in 0..self.components() {
            w.floats("weight", [self.weights[k]]);
            w.floats("mean", self.means[k].iter().copied());
            // row-major
            w.floats("covariance", self.covariances[k].transpose().iter().copied());
        }
    }

    pub(crate) fn read_text(r: &mut TextReader<'_>) -> Result<Self> {
        let head = r.expect("gmm")?;
        let (k, d, kind) = match head.as_slice() {
            [k, d, kind] => (
                k.parse::<usize>().map_err(|_| r.error("bad component count"))?,
                d.parse::<usize>().map_err(|_| r.error("bad dimension"))?,
                kind.parse::<CovarianceType>().map_err(|e| r.error(e.to_string()))?,
            ),
            _ => return Err(r.error("`gmm` takes count, dimension and covariance type")),
        };
        if k == 0 || d == 0 {
            return Err(r.error("empty mixture"));
        }
        let (mut weights, mut means, mut covs) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..k {
            weights.push(r.expect_floats("weight", 1)?[0]);
            means.push(DVector::from_vec(r.expect_floats("mean", d)?));
            covs.push(DMatrix::from_row_slice(d, d, &r.expect_floats("covariance", d * d)?));
        }
        Gmm::new(weights, means, covs, kind)
    }
}

/// Free-function form of [`Gmm::posterior`].
pub fn posterior(g: &Gmm, x: &[f64]) -> Result<Vec<f64>> {
    g.posterior(x)
}

/// `vᵀ Σ⁻¹ v` from the lower Cholesky factor of `Σ`.
fn mahalanobis_sq(chol: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let z = chol
        .solve_lower_triangular(v)
        .expect("Cholesky factor has a positive diagonal");
    z.norm_squared()
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Turns log weights into probabilities that sum to one.
pub(crate) fn normalize_log(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_component() -> Gmm {
        Gmm::new(
            vec![0.3, 0.7],
            vec![DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![1.5, -0.5])],
            vec![
                DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]),
                DMatrix::from_row_slice(2, 2, &[0.7, -0.2, -0.2, 1.2]),
            ],
            CovarianceType::Full,
        )
        .unwrap()
    }

    /// Textbook density with an explicit inverse and determinant.
    fn direct_density(m: &DVector<f64>, s: &DMatrix<f64>, x: &[f64]) -> f64 {
        let d = m.len() as f64;
        let diff = DVector::from_column_slice(x) - m;
        let inv = s.clone().try_inverse().unwrap();
        let q = (diff.transpose() * inv * &diff)[0];
        (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powf(d) * s.determinant()).sqrt()
    }

    #[test]
    fn single_component_posterior_is_one() {
        let g = Gmm::new(
            vec![1.0],
            vec![DVector::from_vec(vec![3.0])],
            vec![DMatrix::from_element(1, 1, 2.0)],
            CovarianceType::Full,
        )
        .unwrap();
        assert_eq!(g.posterior(&[-100.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn far_apart_components_saturate() {
        let g = Gmm::new(
            vec![0.5, 0.5],
            vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![100.0])],
            vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
            CovarianceType::Full,
        )
        .unwrap();
        let h = posterior(&g, &[0.0]).unwrap();
        assert!(h[0] > 1.0 - 1e-10);
        assert!(h.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn posterior_matches_direct_density_ratio() {
        let g = two_component();
        for x in [[0.0, 0.0], [1.0, 1.0], [-1.0, 0.5], [2.0, -1.0]] {
            let p: Vec<f64> = (0..2)
                .map(|k| g.weights()[k] * direct_density(&g.means()[k], &g.covariances()[k], &x))
                .collect();
            let total = p[0] + p[1];
            let h = g.posterior(&x).unwrap();
            for k in 0..2 {
                assert!((h[k] - p[k] / total).abs() < 1e-12);
            }
            assert!((g.log_likelihood(&x) - total.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn constructor_rejects_bad_parameters() {
        let m = vec![DVector::from_vec(vec![0.0])];
        let s = vec![DMatrix::identity(1, 1)];
        assert!(Gmm::new(vec![0.9], m.clone(), s.clone(), CovarianceType::Full).is_err());
        assert!(matches!(
            Gmm::new(vec![1.0], m.clone(), vec![DMatrix::from_element(1, 1, -1.0)], CovarianceType::Full),
            Err(Error::Conditioning { component: 0 })
        ));
        assert!(Gmm::new(vec![], vec![], vec![], CovarianceType::Full).is_err());
        let g = two_component();
        assert!(matches!(g.posterior(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn text_round_trip_is_lossless() {
        let g = two_component();
        let mut w = TextWriter::new();
        g.write_text(&mut w);
        let text = w.finish();
        let back = Gmm::read_text(&mut TextReader::new(&text)).unwrap();
        assert_eq!(g, back);
    }

    proptest! {
        #[test]
        fn posterior_sums_to_one(x in -50.0..50.0f64, y in -50.0..50.0f64) {
            let h = two_component().posterior(&[x, y]).unwrap();
            prop_assert!(h.iter().all(|v| *v >= 0.0));
            prop_assert!((h.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
