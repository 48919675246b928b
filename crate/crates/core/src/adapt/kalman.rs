use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::real::Real;

/// Latent coefficient vector of the state-space model and its covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanState<T = f64> {
    pub theta: Vec<T>,
    pub p: Matrix<T>,
    pub step: usize,
}

/// Process noise `Q`: `q·I` or a diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProcessNoise<T = f64> {
    Scalar(T),
    Diagonal(Vec<T>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig<T = f64> {
    pub q: ProcessNoise<T>,
    pub sigma2: T,
}

impl<T: Real> NoiseConfig<T> {
    pub fn new(q: T, sigma2: T) -> Result<Self> {
        let n = NoiseConfig { q: ProcessNoise::Scalar(q), sigma2 };
        n.validate()?;
        Ok(n)
    }

    /// No process noise: the static filter.
    pub fn fixed(sigma2: T) -> Result<Self> {
        Self::new(T::zero(), sigma2)
    }

    pub fn validate(&self) -> Result<()> {
        let ok_q = match &self.q {
            ProcessNoise::Scalar(q) => *q >= T::zero(),
            ProcessNoise::Diagonal(d) => d.iter().all(|&v| v >= T::zero()),
        };
        if !ok_q || !(self.sigma2 > T::zero()) {
            return Err(Error::usage("process noise must be nonnegative and sigma2 positive"));
        }
        Ok(())
    }

    fn add_to(&self, p: &mut Matrix<T>) -> Result<()> {
        match &self.q {
            ProcessNoise::Scalar(q) => {
                for i in 0..p.nrows() {
                    p[(i, i)] += *q;
                }
            }
            ProcessNoise::Diagonal(d) => {
                if d.len() != p.nrows() {
                    return Err(Error::usage("diagonal process noise has the wrong dimension"));
                }
                for (i, &v) in d.iter().enumerate() {
                    p[(i, i)] += v;
                }
            }
        }
        Ok(())
    }
}

impl<T: Real> KalmanState<T> {
    pub fn new(theta: Vec<T>, p: Matrix<T>) -> Result<Self> {
        if p.nrows() != theta.len() || p.ncols() != theta.len() {
            return Err(Error::usage("covariance does not match the state dimension"));
        }
        Ok(KalmanState { theta, p, step: 0 })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// One-step-ahead prediction `θᵀx` with the current state.
    pub fn predict(&self, x: &[T]) -> T {
        self.theta.iter().zip(x).map(|(&a, &b)| a * b).sum()
    }

    /// Time update without an observation: `P ← P + Q`.
    pub fn skip(&mut self, noise: &NoiseConfig<T>) -> Result<()> {
        noise.add_to(&mut self.p)?;
        self.step += 1;
        Ok(())
    }

    /// Predicts with the prior state, then assimilates `y`. Returns the
    /// prediction and the innovation variance `xᵀ(P+Q)x + σ²`.
    pub fn update(&mut self, x: &[T], y: T, noise: &NoiseConfig<T>) -> Result<(T, T)> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::usage(format!("effect vector has {} entries, state has {d}", x.len())));
        }
        if !y.is_finite() {
            return Err(Error::data("non-finite observation"));
        }
        let pred = self.predict(x);
        noise.add_to(&mut self.p)?;
        let v = self.p.matvec(x);
        let s = x.iter().zip(&v).map(|(&a, &b)| a * b).sum::<T>() + noise.sigma2;
        if !s.is_finite() || !(s > T::zero()) {
            return Err(Error::numerical(format!("innovation variance {s} at step {}", self.step)));
        }
        let e = y - pred;
        for (t, &vi) in self.theta.iter_mut().zip(&v) {
            *t += vi / s * e;
        }
        for i in 0..d {
            let ki = v[i] / s;
            let row = self.p.row_mut(i);
            for j in 0..d {
                row[j] -= ki * v[j];
            }
        }
        self.p.symmetrize();
        self.step += 1;
        Ok((pred, s))
    }
}

/// Functional form of [`KalmanState::update`].
pub fn kalman_step<T: Real>(
    state: &KalmanState<T>,
    x: &[T],
    y: T,
    noise: &NoiseConfig<T>,
) -> Result<(KalmanState<T>, T)> {
    let mut next = state.clone();
    let (pred, _) = next.update(x, y, noise)?;
    Ok((next, pred))
}
