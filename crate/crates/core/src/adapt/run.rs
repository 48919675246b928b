use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kalman::{KalmanState, NoiseConfig, ProcessNoise};
use crate::error::{Error, Result};
use crate::gam::{GamBank, GamPrediction, HALF_HOURS};
use crate::linalg::Matrix;
use crate::timegrid::{Column, TimeGrid, Window};

/// Forecasts of one filter pass and the state it ended in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanRun {
    pub predictions: Column,
    pub state: KalmanState,
}

fn check_lengths(effects: &[Option<Vec<f64>>], loads: &[Option<f64>]) -> Result<()> {
    if effects.len() != loads.len() {
        return Err(Error::usage(format!("{} effect vectors vs {} loads", effects.len(), loads.len())));
    }
    Ok(())
}

/// Filters the stream with fixed noise. Each prediction uses the state
/// before its own observation; steps without an effect vector produce no
/// forecast, steps without a load only propagate the covariance.
pub fn run_filter(
    effects: &[Option<Vec<f64>>],
    loads: &[Option<f64>],
    state: KalmanState,
    noise: &NoiseConfig,
) -> Result<KalmanRun> {
    check_lengths(effects, loads)?;
    noise.validate()?;
    let mut state = state;
    let mut predictions = Vec::with_capacity(effects.len());
    for (x, y) in effects.iter().zip(loads) {
        match (x, y) {
            (Some(x), Some(y)) => {
                let (pred, _) = state.update(x, *y, noise)?;
                predictions.push(Some(pred));
            }
            (Some(x), None) => {
                predictions.push(Some(state.predict(x)));
                state.skip(noise)?;
            }
            (None, _) => {
                predictions.push(None);
                state.skip(noise)?;
            }
        }
    }
    Ok(KalmanRun { predictions, state })
}

/// Static adaptation: no process noise.
pub fn run_static(
    effects: &[Option<Vec<f64>>],
    loads: &[Option<f64>],
    state: KalmanState,
    sigma2: f64,
) -> Result<KalmanRun> {
    run_filter(effects, loads, state, &NoiseConfig::fixed(sigma2)?)
}

/// Dynamic adaptation with constant process noise.
pub fn run_dynamic(
    effects: &[Option<Vec<f64>>],
    loads: &[Option<f64>],
    state: KalmanState,
    noise: &NoiseConfig,
) -> Result<KalmanRun> {
    run_filter(effects, loads, state, noise)
}

/// Ratios `q/σ² = 2⁻³⁰, 2⁻²⁸, …, 2⁰`.
pub fn default_ratio_grid() -> Vec<f64> {
    (-15..=0).map(|k| 2f64.powi(2 * k)).collect()
}

/// Outcome of the dynamic grid search. The filter run with `noise` and
/// covariance `p0_scale · P₀` reproduces the selected trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicFit {
    pub ratio: f64,
    pub noise: NoiseConfig,
    pub p0_scale: f64,
    pub burn_mse: f64,
}

/// Burn-window MSEs within this relative distance of the best count as tied.
pub const MSE_TIE_TOLERANCE: f64 = 1e-3;

/// Chooses `q/σ²` minimizing the one-step-ahead squared error over `burn`,
/// then sets `σ²` to the innovation-variance MLE at that ratio. Ties go to
/// the smaller ratio.
pub fn grid_search_dynamic(
    effects: &[Option<Vec<f64>>],
    loads: &[Option<f64>],
    burn: Range<usize>,
    ratios: &[f64],
    state: &KalmanState,
) -> Result<DynamicFit> {
    check_lengths(effects, loads)?;
    if ratios.is_empty() {
        return Err(Error::usage("empty process-noise grid"));
    }
    if burn.end > effects.len() || burn.is_empty() {
        return Err(Error::usage("burn window outside the stream"));
    }
    let mut sorted = ratios.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut scores = Vec::with_capacity(sorted.len());
    for &r in &sorted {
        let noise = NoiseConfig::new(r, 1.0)?;
        let mut s = state.clone();
        let (mut se, mut scaled, mut count) = (0.0, 0.0, 0usize);
        for t in 0..burn.end {
            match (&effects[t], loads[t]) {
                (Some(x), Some(y)) => {
                    let (pred, var) = s.update(x, y, &noise)?;
                    if t >= burn.start {
                        let e = y - pred;
                        se += e * e;
                        scaled += e * e / var;
                        count += 1;
                    }
                }
                _ => s.skip(&noise)?,
            }
        }
        if count == 0 {
            return Err(Error::data("no observations in the burn window"));
        }
        scores.push((r, se / count as f64, scaled / count as f64));
    }
    let min = scores.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let (ratio, burn_mse, sigma2) =
        *scores.iter().find(|s| s.1 <= min * (1.0 + MSE_TIE_TOLERANCE)).expect("nonempty grid");
    let sigma2 = sigma2.max(f64::MIN_POSITIVE);
    Ok(DynamicFit { ratio, noise: NoiseConfig::new(ratio * sigma2, sigma2)?, p0_scale: sigma2, burn_mse })
}

/// Learning rates of the online noise tracking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VikingHyper {
    pub rho_q: f64,
    pub rho_sigma: f64,
}

impl Default for VikingHyper {
    fn default() -> Self {
        VikingHyper { rho_q: 0.01, rho_sigma: 0.01 }
    }
}

/// Largest change of `log σ²` or `log q` in one step.
pub const VIKING_CLIP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VikingRun {
    pub predictions: Column,
    pub sigma2: Vec<f64>,
    pub q: Vec<f64>,
    pub state: KalmanState,
}

/// viking-lite: the dynamic filter whose `log σ²` and `log q` follow a
/// clipped gradient step on `½(log S + e²/S)` after every observation,
/// `S` being the innovation variance. A zero `q` stays zero.
pub fn run_viking(
    effects: &[Option<Vec<f64>>],
    loads: &[Option<f64>],
    state: KalmanState,
    initial: &NoiseConfig,
    hyper: VikingHyper,
) -> Result<VikingRun> {
    check_lengths(effects, loads)?;
    initial.validate()?;
    if !(hyper.rho_q >= 0.0 && hyper.rho_sigma >= 0.0) {
        return Err(Error::usage("learning rates must be nonnegative"));
    }
    let mut q = match initial.q {
        ProcessNoise::Scalar(q) => q,
        ProcessNoise::Diagonal(_) => return Err(Error::usage("viking-lite tracks a scalar process noise")),
    };
    let mut sigma2 = initial.sigma2;
    let mut state = state;
    let n = effects.len();
    let (mut predictions, mut s_trace, mut q_trace) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (x, y) in effects.iter().zip(loads) {
        let noise = NoiseConfig::new(q, sigma2)?;
        match (x, y) {
            (Some(x), Some(y)) => {
                let (pred, s) = state.update(x, *y, &noise)?;
                predictions.push(Some(pred));
                let e = y - pred;
                let dl_ds = 0.5 * (1.0 / s - e * e / (s * s));
                let step_sigma = (hyper.rho_sigma * dl_ds * sigma2).clamp(-VIKING_CLIP, VIKING_CLIP);
                if step_sigma != 0.0 {
                    sigma2 = (sigma2.ln() - step_sigma).exp().max(f64::MIN_POSITIVE);
                }
                if q > 0.0 && hyper.rho_q > 0.0 {
                    let xx: f64 = x.iter().map(|v| v * v).sum();
                    let step_q = (hyper.rho_q * dl_ds * q * xx).clamp(-VIKING_CLIP, VIKING_CLIP);
                    q = (q.ln() - step_q).exp();
                }
            }
            (Some(x), None) => {
                predictions.push(Some(state.predict(x)));
                state.skip(&noise)?;
            }
            (None, _) => {
                predictions.push(None);
                state.skip(&noise)?;
            }
        }
        s_trace.push(sigma2);
        q_trace.push(q);
    }
    Ok(VikingRun { predictions, sigma2: s_trace, q: q_trace, state })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdaptMethod {
    Static,
    Dynamic,
    VikingLite,
}

impl AdaptMethod {
    pub fn label(self) -> &'static str {
        match self {
            AdaptMethod::Static => "static",
            AdaptMethod::Dynamic => "dynamic",
            AdaptMethod::VikingLite => "viking-lite",
        }
    }
}

/// Settings shared by the 48 chains. `P₀ = p0_scale · σ² · I` where `σ²` is
/// the chain's observation variance: the GAM residual variance for the
/// static filter, the grid-search estimate otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub p0_scale: f64,
    pub ratios: Vec<f64>,
    /// Window scored by the grid search.
    pub burn: Window,
    pub viking: VikingHyper,
}

impl AdaptConfig {
    pub fn new(burn: Window) -> Self {
        AdaptConfig { p0_scale: 1.0, ratios: default_ratio_grid(), burn, viking: VikingHyper::default() }
    }
}

/// Output of the 48 chains, merged back onto the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptOutput {
    pub method: AdaptMethod,
    pub forecast: Column,
    pub noise: Vec<NoiseConfig>,
    pub states: Vec<KalmanState>,
}

/// Runs one chain per half-hour over the bank's effect vectors; the filter
/// starts at `θ₀ = (β₀, sd_1, …, sd_d)` so its first forecast is the GAM's.
pub fn adapt_bank(
    bank: &GamBank,
    prediction: &GamPrediction,
    loads: &[Option<f64>],
    grid: &TimeGrid,
    method: AdaptMethod,
    config: &AdaptConfig,
) -> Result<AdaptOutput> {
    let n = grid.len();
    if prediction.effects.len() != n || loads.len() != n {
        return Err(Error::usage("prediction, loads and grid lengths differ"));
    }
    let burn_cells = config.burn.cells(grid);
    let chains = (0..HALF_HOURS)
        .into_par_iter()
        .map(|h| -> Result<(Vec<usize>, Column, NoiseConfig, KalmanState)> {
            let rows: Vec<usize> = (0..n).filter(|&k| grid.half_hour_of(k) == h).collect();
            let x: Vec<Option<Vec<f64>>> =
                rows.iter().map(|&k| prediction.effects[k].as_ref().map(|e| bank.effect_vector(h, e))).collect();
            let y: Vec<Option<f64>> = rows.iter().map(|&k| loads[k]).collect();
            let theta0 = bank.neutral_theta(h);
            let d = theta0.len();
            let init =
                |sigma2: f64| KalmanState::new(theta0.clone(), Matrix::identity(d).scale(config.p0_scale * sigma2));
            let burn = {
                let a = rows.partition_point(|&k| k < burn_cells.start);
                let b = rows.partition_point(|&k| k < burn_cells.end);
                a..b
            };
            let (pred, noise, state) = match method {
                AdaptMethod::Static => {
                    let s2 = bank.models[h].residual_variance.max(f64::MIN_POSITIVE);
                    let run = run_static(&x, &y, init(s2)?, s2)?;
                    (run.predictions, NoiseConfig::fixed(s2)?, run.state)
                }
                AdaptMethod::Dynamic | AdaptMethod::VikingLite => {
                    let fit = grid_search_dynamic(&x, &y, burn, &config.ratios, &init(1.0)?)?;
                    let start = init(fit.p0_scale)?;
                    if method == AdaptMethod::Dynamic {
                        let run = run_dynamic(&x, &y, start, &fit.noise)?;
                        (run.predictions, fit.noise, run.state)
                    } else {
                        let run = run_viking(&x, &y, start, &fit.noise, config.viking)?;
                        let last = NoiseConfig::new(
                            *run.q.last().unwrap_or(&0.0),
                            *run.sigma2.last().unwrap_or(&fit.noise.sigma2),
                        )?;
                        (run.predictions, last, run.state)
                    }
                }
            };
            Ok((rows, pred, noise, state))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::numerical(format!("{} adaptation: {e}", method.label())))?;
    let mut forecast = vec![None; n];
    let mut noise = Vec::with_capacity(HALF_HOURS);
    let mut states = Vec::with_capacity(HALF_HOURS);
    for (rows, pred, nz, st) in chains {
        for (k, p) in rows.into_iter().zip(pred) {
            forecast[k] = p;
        }
        noise.push(nz);
        states.push(st);
    }
    Ok(AdaptOutput { method, forecast, noise, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn stream(n: usize, d: usize, drift: f64, sigma: f64, seed: u64) -> (Vec<Option<Vec<f64>>>, Vec<Option<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..1.5)).collect();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            for t in theta.iter_mut() {
                *t += drift * rng.sample::<f64, _>(StandardNormal);
            }
            let x: Vec<f64> = std::iter::once(1.0).chain((1..d).map(|_| rng.sample(StandardNormal))).collect();
            let y =
                x.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>() + sigma * rng.sample::<f64, _>(StandardNormal);
            xs.push(Some(x));
            ys.push(Some(y));
        }
        (xs, ys)
    }

    fn start(d: usize, p0: f64) -> KalmanState {
        KalmanState::new(vec![0.0; d], Matrix::identity(d).scale(p0)).unwrap()
    }

    #[test]
    fn empty_stream_returns_the_initial_state() {
        let s = start(3, 1.0);
        let run = run_static(&[], &[], s.clone(), 1.0).unwrap();
        assert!(run.predictions.is_empty());
        assert_eq!(run.state, s);
        assert!(run_static(&[None], &[], s, 1.0).is_err());
    }

    #[test]
    fn static_converges_on_constant_truth() {
        let d = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = [2.0, -1.0, 0.5, 3.0];
        let xs: Vec<Option<Vec<f64>>> = (0..10 * d * 10)
            .map(|_| Some(std::iter::once(1.0).chain((1..d).map(|_| rng.random_range(-2.0..2.0))).collect()))
            .collect();
        let ys: Vec<Option<f64>> =
            xs.iter().map(|x| Some(x.as_ref().unwrap().iter().zip(&truth).map(|(a, b)| a * b).sum())).collect();
        let run = run_static(&xs[..10 * d], &ys[..10 * d], start(d, 1e4), 1e-6).unwrap();
        for (a, b) in run.state.theta.iter().zip(&truth) {
            assert!((a - b).abs() < 0.01 * b.abs());
        }
    }

    #[test]
    fn diffuse_prior_tracks_least_squares() {
        let d = 3;
        let (xs, ys) = stream(40, d, 0.0, 0.3, 2);
        let mut s = start(d, 1e8);
        let noise = NoiseConfig::fixed(1.0).unwrap();
        for t in 0..xs.len() {
            s.update(xs[t].as_ref().unwrap(), ys[t].unwrap(), &noise).unwrap();
            if t + 1 >= d + 5 {
                let rows: Vec<Vec<f64>> = xs[..=t].iter().map(|x| x.clone().unwrap()).collect();
                let xm = Matrix::from_rows(&rows).unwrap();
                let yv: Vec<f64> = ys[..=t].iter().map(|v| v.unwrap()).collect();
                let ols = crate::linalg::Qr::new(&xm).unwrap().solve_least_squares(&yv).unwrap();
                for (a, b) in s.theta.iter().zip(&ols) {
                    assert!((a - b).abs() < 1e-4, "step {t}");
                }
            }
        }
    }

    #[test]
    fn predictions_are_causal() {
        let (xs, ys) = stream(300, 3, 0.01, 0.5, 3);
        let a = run_dynamic(&xs, &ys, start(3, 1.0), &NoiseConfig::new(0.01, 0.25).unwrap()).unwrap();
        let mut ys2 = ys.clone();
        ys2[150..].reverse();
        let b = run_dynamic(&xs, &ys2, start(3, 1.0), &NoiseConfig::new(0.01, 0.25).unwrap()).unwrap();
        assert_eq!(a.predictions[..=150], b.predictions[..=150]);
    }

    #[test]
    fn grid_search_detects_drift() {
        let (xs, ys) = stream(1500, 3, 0.05, 0.3, 4);
        let fit = grid_search_dynamic(&xs, &ys, 300..1500, &default_ratio_grid(), &start(3, 1.0)).unwrap();
        assert!(fit.ratio > 2f64.powi(-30), "{fit:?}");
        assert!(fit.ratio > 1e-3);
    }

    #[test]
    fn grid_search_prefers_no_drift_on_constant_truth() {
        let mut hits = 0;
        for seed in 0..20 {
            let (xs, ys) = stream(1500, 3, 0.0, 0.5, 100 + seed);
            let fit = grid_search_dynamic(&xs, &ys, 300..1500, &default_ratio_grid(), &start(3, 1.0)).unwrap();
            if fit.ratio == 2f64.powi(-30) {
                hits += 1;
            }
        }
        assert!(hits >= 18, "{hits}/20");
    }

    #[test]
    fn single_point_grid() {
        let (xs, ys) = stream(100, 2, 0.0, 0.5, 5);
        let fit = grid_search_dynamic(&xs, &ys, 10..100, &[0.25], &start(2, 1.0)).unwrap();
        assert_eq!(fit.ratio, 0.25);
        assert!((fit.noise.q == ProcessNoise::Scalar(0.25 * fit.noise.sigma2)));
    }

    #[test]
    fn frozen_viking_is_dynamic() {
        let (xs, ys) = stream(500, 3, 0.02, 0.4, 6);
        let noise = NoiseConfig::new(1e-3, 0.2).unwrap();
        let v = run_viking(&xs, &ys, start(3, 1.0), &noise, VikingHyper { rho_q: 0.0, rho_sigma: 0.0 }).unwrap();
        let d = run_dynamic(&xs, &ys, start(3, 1.0), &noise).unwrap();
        assert_eq!(v.predictions, d.predictions);
        assert!(v.sigma2.iter().all(|&s| s == 0.2));
    }

    #[test]
    fn viking_tracks_a_variance_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 2000;
        let theta = [10.0, 2.0];
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for t in 0..n {
            let sigma = if t < n / 2 { 1.0 } else { 2.0 };
            let x = vec![1.0, rng.sample::<f64, _>(StandardNormal)];
            ys.push(Some(theta[0] + theta[1] * x[1] + sigma * rng.sample::<f64, _>(StandardNormal)));
            xs.push(Some(x));
        }
        let run = run_viking(
            &xs,
            &ys,
            start(2, 1.0),
            &NoiseConfig::new(1e-6, 1.0).unwrap(),
            VikingHyper { rho_q: 0.0, rho_sigma: 0.02 },
        )
        .unwrap();
        let tracked = run.sigma2[n / 2 + 500].sqrt();
        assert!((tracked - 2.0).abs() < 0.4, "tracked sigma {tracked}");
    }

    #[test]
    fn viking_survives_a_load_spike() {
        let (xs, mut ys) = stream(600, 3, 0.01, 0.3, 8);
        for y in ys[300..310].iter_mut() {
            *y = y.map(|v| v * 10.0);
        }
        let run = run_viking(
            &xs,
            &ys,
            start(3, 1.0),
            &NoiseConfig::new(1e-4, 0.1).unwrap(),
            VikingHyper { rho_q: 0.05, rho_sigma: 0.05 },
        )
        .unwrap();
        assert!(run.predictions.iter().flatten().all(|p| p.is_finite()));
        assert!(run.sigma2.iter().all(|s| s.is_finite() && *s > 0.0));
        // clipped steps bound the per-step change of log sigma2
        for w in run.sigma2.windows(2) {
            assert!((w[1].ln() - w[0].ln()).abs() <= VIKING_CLIP + 1e-12);
        }
    }
}
