use nalgebra::{DMatrix, DVector};

use super::{normalize_log, Gmm};
use crate::error::{Error, Result};
use crate::textio::{TextReader, TextWriter};

/// A mixture over stacked `[x; y]` vectors, used to predict `y` from `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGmm {
    gmm: Gmm,
    split: usize,
    /// Mixture over the `x` block alone, for responsibilities.
    marginal: Gmm,
    /// `Σ_yx Σ_xx⁻¹` per component.
    slopes: Vec<DMatrix<f64>>,
}

impl JointGmm {
    /// `split` is the dimension of the `x` block.
    pub fn new(gmm: Gmm, split: usize) -> Result<Self> {
        let d = gmm.dim();
        if split == 0 || split >= d {
            return Err(Error::Shape(format!(
                "split index {split} for a {d}-dimensional joint mixture"
            )));
        }
        let q = d - split;
        let mut means_x = Vec::with_capacity(gmm.components());
        let mut covs_x = Vec::with_capacity(gmm.components());
        let mut slopes = Vec::with_capacity(gmm.components());
        for (k, (m, s)) in gmm.means().iter().zip(gmm.covariances()).enumerate() {
            let sxx = s.view((0, 0), (split, split)).into_owned();
            let sxy = s.view((0, split), (split, q)).into_owned();
            let chol = sxx.clone().cholesky().ok_or(Error::Conditioning { component: k })?;
            // Σ_xx Aᵀ = Σ_xy
            let slope = chol.solve(&sxy).transpose();
            if slope.iter().any(|v| !v.is_finite()) {
                return Err(Error::Conditioning { component: k });
            }
            slopes.push(slope);
            means_x.push(m.rows(0, split).into_owned());
            covs_x.push(sxx);
        }
        let marginal = Gmm::new(
            gmm.weights().to_vec(),
            means_x,
            covs_x,
            gmm.covariance_type(),
        )?;
        Ok(Self {
            gmm,
            split,
            marginal,
            slopes,
        })
    }

    pub fn gmm(&self) -> &Gmm {
        &self.gmm
    }

    pub fn split(&self) -> usize {
        self.split
    }

    pub fn output_dim(&self) -> usize {
        self.gmm.dim() - self.split
    }

    pub fn components(&self) -> usize {
        self.gmm.components()
    }

    /// Responsibilities under the `x`-marginal mixture.
    pub fn posterior_x(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.marginal.posterior(x)
    }

    /// Conditional mean `E[y | x]`.
    pub fn regress(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.regress_with_posterior(x).map(|(y, _)| y)
    }

    /// Conditional mean together with the responsibilities that weighted it.
    pub fn regress_with_posterior(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.split {
            return Err(Error::Shape(format!(
                "input of dimension {} for a split at {}",
                x.len(),
                self.split
            )));
        }
        let h = normalize_log(&self.marginal.component_log_densities(x));
        let q = self.output_dim();
        let xv = DVector::from_column_slice(x);
        let mut y = DVector::zeros(q);
        for (k, hk) in h.iter().enumerate() {
            if *hk == 0.0 {
                continue;
            }
            let m = &self.gmm.means()[k];
            let dx = &xv - m.rows(0, self.split);
            let yk = m.rows(self.split, q) + &self.slopes[k] * dx;
            y.axpy(*hk, &yk, 1.0);
        }
        if y.iter().any(|v| !v.is_finite()) {
            let k = h
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map_or(0, |(k, _)| k);
            return Err(Error::Conditioning { component: k });
        }
        Ok((y.as_slice().to_vec(), h))
    }

    pub(crate) fn write_text(&self, w: &mut TextWriter) {
        w.line("split", &[self.split.to_string()]);
        self.gmm.write_text(w);
    }

    pub(crate) fn read_text(r: &mut TextReader<'_>) -> Result<Self> {
        let split = r.expect_usize("split")?;
        let gmm = Gmm::read_text(r)?;
        JointGmm::new(gmm, split).map_err(|e| r.error(format!("invalid joint mixture: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::CovarianceType;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.1
    }

    fn single(mean: DVector<f64>, cov: DMatrix<f64>, split: usize) -> JointGmm {
        JointGmm::new(
            Gmm::new(vec![1.0], vec![mean], vec![cov], CovarianceType::Full).unwrap(),
            split,
        )
        .unwrap()
    }

    /// `μ_y + Σ_yx Σ_xx⁻¹ (x − μ_x)` through an LU solve.
    fn oracle(mean: &DVector<f64>, cov: &DMatrix<f64>, p: usize, x: &[f64]) -> DVector<f64> {
        let q = mean.len() - p;
        let sxx = cov.view((0, 0), (p, p)).into_owned();
        let syx = cov.view((p, 0), (q, p)).into_owned();
        let dx = DVector::from_column_slice(x) - mean.rows(0, p);
        let z = sxx.lu().solve(&dx).unwrap();
        mean.rows(p, q) + syx * z
    }

    #[test]
    fn independent_blocks_predict_the_target_mean() {
        let mut cov = DMatrix::identity(4, 4);
        cov[(0, 1)] = 0.3;
        cov[(1, 0)] = 0.3;
        let mean = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let j = single(mean, cov, 2);
        for x in [[0.0, 0.0], [10.0, -3.0], [1e3, 1e-3]] {
            assert_eq!(j.regress(&x).unwrap(), vec![3.0, 4.0]);
        }
    }

    #[test]
    fn single_component_matches_linear_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let p = rng.gen_range(1..6);
            let d = 2 * p;
            let cov = random_pd(&mut rng, d);
            let mean = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
            let j = single(mean.clone(), cov.clone(), p);
            let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let got = DVector::from_vec(j.regress(&x).unwrap());
            assert!((got - oracle(&mean, &cov, p, &x)).amax() < 1e-10);
        }
    }

    #[test]
    fn separated_regimes_follow_the_active_one() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, -0.8, -0.8, 1.0]);
        let ma = DVector::from_vec(vec![0.0, 1.0]);
        let mb = DVector::from_vec(vec![50.0, -1.0]);
        let g = Gmm::new(
            vec![0.5, 0.5],
            vec![ma.clone(), mb.clone()],
            vec![a.clone(), b.clone()],
            CovarianceType::Full,
        )
        .unwrap();
        let j = JointGmm::new(g, 1).unwrap();
        for x in [-1.0, 0.5, 2.0] {
            let want = oracle(&ma, &a, 1, &[x])[0];
            assert!((j.regress(&[x]).unwrap()[0] - want).abs() < 1e-6);
        }
        for x in [48.0, 50.0, 51.5] {
            let want = oracle(&mb, &b, 1, &[x])[0];
            assert!((j.regress(&[x]).unwrap()[0] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_split_and_input() {
        let j = single(DVector::zeros(4), DMatrix::identity(4, 4), 2);
        assert!(matches!(j.regress(&[1.0]), Err(Error::Shape(_))));
        let g = Gmm::new(vec![1.0], vec![DVector::zeros(2)], vec![DMatrix::identity(2, 2)], CovarianceType::Full)
            .unwrap();
        assert!(JointGmm::new(g.clone(), 0).is_err());
        assert!(JointGmm::new(g, 2).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let j = single(DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0)), random_pd(&mut rng, 6), 3);
        let mut w = TextWriter::new();
        j.write_text(&mut w);
        let text = w.finish();
        assert_eq!(JointGmm::read_text(&mut TextReader::new(&text)).unwrap(), j);
    }

    fn fixture() -> JointGmm {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let means = (0..3).map(|_| DVector::from_fn(4, |_, _| rng.gen_range(-2.0..2.0))).collect();
        let covs = (0..3).map(|_| random_pd(&mut rng, 4)).collect();
        JointGmm::new(Gmm::new(vec![0.2, 0.5, 0.3], means, covs, CovarianceType::Full).unwrap(), 2).unwrap()
    }

    proptest! {
        #[test]
        fn single_component_is_affine(
            x1 in prop::array::uniform3(-5.0..5.0f64),
            x2 in prop::array::uniform3(-5.0..5.0f64),
            alpha in 0.0..1.0f64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let j = single(DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0)), random_pd(&mut rng, 6), 3);
            let mix: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
            let y = j.regress(&mix).unwrap();
            let (y1, y2) = (j.regress(&x1).unwrap(), j.regress(&x2).unwrap());
            for i in 0..3 {
                prop_assert!((y[i] - (alpha * y1[i] + (1.0 - alpha) * y2[i])).abs() < 1e-9);
            }
        }

        #[test]
        fn regression_is_continuous(x in prop::array::uniform2(-3.0..3.0f64), dir in prop::array::uniform2(-1.0..1.0f64)) {
            let j = fixture();
            let eps = 1e-7;
            let moved = [x[0] + eps * dir[0], x[1] + eps * dir[1]];
            let (a, h) = j.regress_with_posterior(&x).unwrap();
            let b = j.regress(&moved).unwrap();
            prop_assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // generous Lipschitz bound from slopes and mean spread
            let spread: f64 = j.gmm().means().iter().map(|m| m.amax()).fold(0.0, f64::max);
            let slope: f64 = j.slopes.iter().map(|s| s.norm()).fold(0.0, f64::max);
            let inv: f64 = j.marginal.covariances().iter()
                .map(|s| s.clone().try_inverse().unwrap().norm()).fold(0.0, f64::max);
            let lip = slope + 2.0 * (spread + slope * 6.0) * inv * 10.0;
            let dist = a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            prop_assert!(dist <= lip * eps * 2.0f64.sqrt());
        }
    }
}
