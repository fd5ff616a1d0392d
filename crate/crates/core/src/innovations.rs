//! Innovation densities used to drive simulations: spherical normal, the
//! three-component Gaussian mixture and the skew-t of Azzalini–Capitanio.
//! Every sampler is centered so the innovations have mean zero.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::ln_gamma;
use crate::error::{arg, Result};
use crate::linalg::cholesky_lower;

/// Random number generator used by every simulation in the crate.
pub type SimRng = ChaCha8Rng;

/// A source of i.i.d. d-dimensional innovations.
pub trait Innovations: Send + Sync {
    fn dim(&self) -> usize;
    fn draw(&self, rng: &mut SimRng, out: &mut [f64]);

    /// Draws `n` innovations as the rows of an `n x d` matrix.
    fn draw_matrix(&self, rng: &mut SimRng, n: usize) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(n, d);
        let mut buf = vec![0.0; d];
        for t in 0..n {
            self.draw(rng, &mut buf);
            for k in 0..d {
                out[(t, k)] = buf[k];
            }
        }
        out
    }
}

/// Which symmetrization of the second mixture covariance to use. The
/// printed matrix `[[7, -6], [6, 6]]` is not symmetric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureSigma2 {
    /// `[[7, -6], [-6, 6]]`
    #[default]
    Lower,
    /// `[[7, 6], [6, 6]]`
    Upper,
}

/// Serializable description of an innovation density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensitySpec {
    SphericalNormal,
    GaussianMixture {
        #[serde(default)]
        sigma2: MixtureSigma2,
    },
    SkewT {
        df: f64,
        slant: Vec<f64>,
    },
}

impl DensitySpec {
    pub fn mixture() -> Self {
        DensitySpec::GaussianMixture { sigma2: MixtureSigma2::Lower }
    }

    /// Skew-t with 3 degrees of freedom, identity scale and slant `(2, ..., 2)`.
    pub fn skew_t3(d: usize) -> Self {
        DensitySpec::SkewT { df: 3.0, slant: vec![2.0; d] }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DensitySpec::SphericalNormal => "spherical_normal",
            DensitySpec::GaussianMixture { .. } => "gaussian_mixture",
            DensitySpec::SkewT { .. } => "skew_t",
        }
    }

    pub fn sampler(&self, d: usize) -> Result<InnovationSampler> {
        match self {
            DensitySpec::SphericalNormal => {
                if d == 0 {
                    return arg("dimension must be positive");
                }
                Ok(InnovationSampler::SphericalNormal { d })
            }
            DensitySpec::GaussianMixture { sigma2 } => {
                if d != 2 {
                    return arg("the Gaussian mixture density is bivariate");
                }
                Ok(InnovationSampler::GaussianMixture(Mixture::standard(*sigma2)?))
            }
            DensitySpec::SkewT { df, slant } => {
                if slant.len() != d {
                    return arg(format!("skew-t slant has length {}, expected {d}", slant.len()));
                }
                Ok(InnovationSampler::SkewT(SkewT::new(*df, DVector::from_column_slice(slant))?))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mixture {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    factors: Vec<DMatrix<f64>>,
    center: DVector<f64>,
}

impl Mixture {
    pub fn new(weights: Vec<f64>, means: Vec<DVector<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covariances.len() {
            return arg("mixture weights, means and covariances must have equal non-zero length");
        }
        if weights.iter().any(|w| !(*w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return arg("mixture weights must be positive and sum to one");
        }
        let d = means[0].len();
        let mut factors = Vec::with_capacity(covariances.len());
        for (k, c) in covariances.iter().enumerate() {
            if c.nrows() != d || c.ncols() != d || means[k].len() != d {
                return arg("mixture component dimensions disagree");
            }
            if (c - c.transpose()).amax() > 0.0 {
                return arg(format!("mixture covariance {} is not symmetric", k + 1));
            }
            factors.push(cholesky_lower(c, "mixture covariance")?);
        }
        let center = weights.iter().zip(&means).fold(DVector::zeros(d), |acc, (w, m)| acc + m * *w);
        Ok(Mixture { weights, means, covariances, factors, center })
    }

    /// The bivariate three-component mixture with weights (3/8, 3/8, 1/4).
    pub fn standard(sigma2: MixtureSigma2) -> Result<Self> {
        let s2 = match sigma2 {
            MixtureSigma2::Lower => [7.0, -6.0, -6.0, 6.0],
            MixtureSigma2::Upper => [7.0, 6.0, 6.0, 6.0],
        };
        Mixture::new(
            vec![3.0 / 8.0, 3.0 / 8.0, 1.0 / 4.0],
            vec![
                DVector::from_vec(vec![-5.0, 0.0]),
                DVector::from_vec(vec![5.0, 0.0]),
                DVector::from_vec(vec![0.0, 0.0]),
            ],
            vec![
                DMatrix::from_row_slice(2, 2, &[7.0, 5.0, 5.0, 5.0]),
                DMatrix::from_row_slice(2, 2, &s2),
                DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 3.0]),
            ],
        )
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.center
    }

    /// Population covariance of the (centered) mixture.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.center.len();
        let mut cov = DMatrix::zeros(d, d);
        for k in 0..self.weights.len() {
            let dm = &self.means[k] - &self.center;
            cov += (&self.covariances[k] + &dm * dm.transpose()) * self.weights[k];
        }
        cov
    }

    /// Draws one centered observation and returns the component it came from.
    pub fn draw_with_component(&self, rng: &mut SimRng, out: &mut [f64]) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = self.weights.len() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = k;
                break;
            }
        }
        let d = self.center.len();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let l = &self.factors[comp];
        for r in 0..d {
            let mut v = self.means[comp][r] - self.center[r];
            for c in 0..=r {
                v += l[(r, c)] * z[c];
            }
            out[r] = v;
        }
        comp
    }
}

/// Multivariate skew-t built as a skew-normal over the square root of an
/// independent scaled chi-square, with identity scale matrix.
#[derive(Clone, Debug)]
pub struct SkewT {
    df: f64,
    slant: DVector<f64>,
    delta: DVector<f64>,
    residual_factor: DMatrix<f64>,
    mean: DVector<f64>,
    chi2: ChiSquared<f64>,
}

impl SkewT {
    pub fn new(df: f64, slant: DVector<f64>) -> Result<Self> {
        if !(df > 2.0) || !df.is_finite() {
            return arg("skew-t degrees of freedom must exceed 2 for finite variance");
        }
        let d = slant.len();
        if d == 0 {
            return arg("skew-t slant must be non-empty");
        }
        let alpha_sq = slant.norm_squared();
        let delta = &slant / (1.0 + alpha_sq).sqrt();
        let resid = DMatrix::identity(d, d) - &delta * delta.transpose();
        let residual_factor = cholesky_lower(&resid, "skew-normal residual covariance")?;
        let b = (df / std::f64::consts::PI).sqrt() * (ln_gamma(0.5 * (df - 1.0)) - ln_gamma(0.5 * df)).exp();
        let mean = &delta * b;
        let chi2 = ChiSquared::new(df).expect("df > 2");
        Ok(SkewT { df, slant, delta, residual_factor, mean, chi2 })
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn slant(&self) -> &DVector<f64> {
        &self.slant
    }

    /// Analytic mean of the uncentered variable (subtracted from every draw).
    pub fn uncentered_mean(&self) -> &DVector<f64> {
        &self.mean
    }
}

/// Concrete innovation samplers.
#[derive(Clone, Debug)]
pub enum InnovationSampler {
    SphericalNormal { d: usize },
    GaussianMixture(Mixture),
    SkewT(SkewT),
}

impl Innovations for InnovationSampler {
    fn dim(&self) -> usize {
        match self {
            InnovationSampler::SphericalNormal { d } => *d,
            InnovationSampler::GaussianMixture(m) => m.center.len(),
            InnovationSampler::SkewT(s) => s.slant.len(),
        }
    }

    fn draw(&self, rng: &mut SimRng, out: &mut [f64]) {
        match self {
            InnovationSampler::SphericalNormal { d } => {
                for v in out.iter_mut().take(*d) {
                    *v = rng.sample(StandardNormal);
                }
            }
            InnovationSampler::GaussianMixture(m) => {
                m.draw_with_component(rng, out);
            }
            InnovationSampler::SkewT(s) => {
                let d = s.slant.len();
                let u0: f64 = rng.sample::<f64, _>(StandardNormal).abs();
                let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let w: f64 = s.chi2.sample(rng);
                let scale = (w / s.df).sqrt();
                for r in 0..d {
                    let mut v = s.delta[r] * u0;
                    for c in 0..=r {
                        v += s.residual_factor[(r, c)] * z[c];
                    }
                    out[r] = v / scale - s.mean[r];
                }
            }
        }
    }
}

/// Draws `n` i.i.d. innovations from a fresh generator seeded with `seed`.
pub fn sample_innovations<S: Innovations + ?Sized>(sampler: &S, n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = SimRng::seed_from_u64(seed);
    sampler.draw_matrix(&mut rng, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_population_mean_is_zero() {
        let m = Mixture::standard(MixtureSigma2::Lower).unwrap();
        assert!(m.mean().norm() < 1e-15);
        let upper = Mixture::standard(MixtureSigma2::Upper).unwrap();
        assert!(upper.covariance()[(0, 1)] > m.covariance()[(0, 1)]);
    }

    #[test]
    fn literal_mixture_covariance_is_rejected() {
        let bad = Mixture::new(
            vec![1.0],
            vec![DVector::zeros(2)],
            vec![DMatrix::from_row_slice(2, 2, &[7.0, -6.0, 6.0, 6.0])],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn weights_must_sum_to_one() {
        let bad = Mixture::new(
            vec![0.5, 0.4],
            vec![DVector::zeros(2), DVector::zeros(2)],
            vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn skew_t_requires_finite_variance() {
        assert!(SkewT::new(2.0, DVector::from_vec(vec![1.0, 1.0])).is_err());
        assert!(DensitySpec::skew_t3(2).sampler(3).is_err());
    }

    #[test]
    fn skew_t3_mean_constant() {
        // sqrt(3/pi) * Gamma(1) / Gamma(3/2) = 2 sqrt(3) / pi
        let s = SkewT::new(3.0, DVector::from_vec(vec![2.0, 2.0])).unwrap();
        let b = 2.0 * 3f64.sqrt() / std::f64::consts::PI;
        let expected = 2.0 / 3.0 * b;
        assert!((s.uncentered_mean()[0] - expected).abs() < 1e-13);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let s = DensitySpec::skew_t3(2).sampler(2).unwrap();
        assert_eq!(sample_innovations(&s, 50, 9), sample_innovations(&s, 50, 9));
        assert_ne!(sample_innovations(&s, 50, 9), sample_innovations(&s, 50, 10));
    }
}
