use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One observed change in objective under a configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Continuous hyperparameters in the unit cube.
    pub x: Vec<f64>,
    /// Interval index at which the change was measured.
    pub t: f64,
    /// Improvement over the interval; larger is better.
    pub y: f64,
}

/// Kernel hyperparameters: squared-exponential length over `x` and a
/// forgetting rate `decay` over time, plus observation noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub length: f64,
    pub decay: f64,
    pub noise: f64,
}

const LENGTHS: [f64; 5] = [0.05, 0.1, 0.2, 0.5, 1.0];
const DECAYS: [f64; 5] = [0.0, 0.01, 0.05, 0.1, 0.2];
const NOISES: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];

impl KernelParams {
    pub fn k(&self, a: &Observation, bx: &[f64], bt: f64) -> f64 {
        let d2: f64 = a.x.iter().zip(bx).map(|(p, q)| (p - q) * (p - q)).sum();
        let se = (-d2 / (2.0 * self.length * self.length)).exp();
        se * (1.0 - self.decay).powf((a.t - bt).abs() / 2.0)
    }
}

struct Fit {
    params: KernelParams,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    mean: f64,
    std: f64,
}

/// Time-varying Gaussian-process bandit over a sliding window of
/// observations, proposing by upper confidence bound.
#[derive(Clone, Debug)]
pub struct GpBandit {
    window: usize,
    kappa: f64,
    obs: VecDeque<Observation>,
}

impl GpBandit {
    pub fn new(window: usize, kappa: f64) -> Self {
        Self { window: window.max(2), kappa, obs: VecDeque::new() }
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.obs.iter()
    }

    pub fn observe(&mut self, o: Observation) {
        if o.y.is_finite() && o.x.iter().all(|v| v.is_finite()) {
            self.obs.push_back(o);
            while self.obs.len() > self.window {
                self.obs.pop_front();
            }
        }
    }

    fn gram(&self, p: &KernelParams) -> DMatrix<f64> {
        let n = self.obs.len();
        DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = (&self.obs[i], &self.obs[j]);
            p.k(a, &b.x, b.t) + if i == j { p.noise } else { 0.0 }
        })
    }

    fn fit(&self) -> Option<Fit> {
        let n = self.obs.len();
        if n < 2 {
            return None;
        }
        let mean = self.obs.iter().map(|o| o.y).sum::<f64>() / n as f64;
        let var = self.obs.iter().map(|o| (o.y - mean).powi(2)).sum::<f64>() / n as f64;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        let y = DVector::from_iterator(n, self.obs.iter().map(|o| (o.y - mean) / std));
        let mut best: Option<(f64, Fit)> = None;
        for &length in &LENGTHS {
            for &decay in &DECAYS {
                for &noise in &NOISES {
                    let params = KernelParams { length, decay, noise };
                    let Some(chol) = self.gram(&params).cholesky() else { continue };
                    let alpha = chol.solve(&y);
                    let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
                    let lml = -0.5 * y.dot(&alpha) - 0.5 * logdet;
                    if lml.is_finite() && best.as_ref().is_none_or(|(b, _)| lml > *b) {
                        best = Some((lml, Fit { params, chol, alpha, mean, std }));
                    }
                }
            }
        }
        best.map(|(_, f)| f)
    }

    /// Kernel hyperparameters maximizing the marginal likelihood.
    pub fn fitted_params(&self) -> Option<KernelParams> {
        self.fit().map(|f| f.params)
    }

    fn posterior(&self, fit: &Fit, x: &[f64], t: f64) -> (f64, f64) {
        let ks = DVector::from_iterator(self.obs.len(), self.obs.iter().map(|o| fit.params.k(o, x, t)));
        let mu = ks.dot(&fit.alpha);
        let v = fit.chol.l().solve_lower_triangular(&ks).expect("non-singular factor");
        let var = (1.0 - v.dot(&v)).max(1e-12);
        (mu, var)
    }

    /// Posterior mean and variance in the original units of `y`.
    pub fn predict(&self, x: &[f64], t: f64) -> Option<(f64, f64)> {
        let fit = self.fit()?;
        let (mu, var) = self.posterior(&fit, x, t);
        Some((fit.mean + fit.std * mu, fit.std * fit.std * var))
    }

    /// Maximizes the UCB at time `t` over random candidates plus local
    /// perturbations of `anchor`. Returns `None` with fewer than two
    /// observations.
    pub fn propose(&self, anchor: &[f64], t: f64, rng: &mut impl Rng) -> Option<Vec<f64>> {
        let fit = self.fit()?;
        let d = anchor.len();
        let mut candidates: Vec<Vec<f64>> = (0..256).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
        for _ in 0..64 {
            candidates.push(anchor.iter().map(|&a| (a + 0.2 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)).collect());
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for c in candidates {
            let (mu, var) = self.posterior(&fit, &c, t);
            let ucb = mu + self.kappa * var.sqrt();
            if best.as_ref().is_none_or(|(b, _)| ucb > *b) {
                best = Some((ucb, c));
            }
        }
        best.map(|(_, c)| c)
    }
}
