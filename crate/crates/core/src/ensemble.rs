//! Ensembles: bootstrap resampling and bagging, SGD-snapshot collection,
//! the Boltzmann posterior over parameters, and gradient boosting with
//! regression stumps and golden-section line search.

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Uniform resample with replacement, same size as the input.
pub fn bootstrap_resample<T: Clone>(data: &[T], rng: &mut RngStream) -> Result<Vec<T>> {
    if data.is_empty() {
        return Err(Error::InvalidArg("bootstrap_resample: empty dataset".into()));
    }
    Ok((0..data.len()).map(|_| data[rng.below(data.len())].clone()).collect())
}

/// A frozen predictor mapping a feature vector to an output vector.
pub trait Predictor {
    fn predict(&self, x: &[f64]) -> Vec<f64>;
}

impl<F: Fn(&[f64]) -> Vec<f64>> Predictor for F {
    fn predict(&self, x: &[f64]) -> Vec<f64> {
        self(x)
    }
}

/// Uniformly-weighted set of frozen predictors with matching contracts.
pub struct EnsembleSet<P: Predictor> {
    pub members: Vec<P>,
}

impl<P: Predictor> EnsembleSet<P> {
    pub fn new(members: Vec<P>) -> Result<EnsembleSet<P>> {
        if members.is_empty() {
            return Err(Error::InvalidArg("ensemble: no members".into()));
        }
        Ok(EnsembleSet { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Arithmetic mean of member predictions. Under squared loss the bagged
/// prediction never does worse than the average member.
pub fn bag_predict<P: Predictor>(ensemble: &EnsembleSet<P>, x: &[f64]) -> Vec<f64> {
    let mut acc = ensemble.members[0].predict(x);
    for member in &ensemble.members[1..] {
        for (a, v) in acc.iter_mut().zip(member.predict(x)) {
            *a += v;
        }
    }
    let n = ensemble.members.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    acc
}

/// Collects parameter snapshots every `interval` steps once past the
/// burn-in, treating a constant-rate SGD trajectory as a posterior
/// sampler.
#[derive(Debug, Clone)]
pub struct SnapshotCollector<T> {
    pub interval: usize,
    pub burn_in: usize,
    pub snapshots: Vec<T>,
}

impl<T: Clone> SnapshotCollector<T> {
    pub fn new(interval: usize, burn_in: usize) -> Result<SnapshotCollector<T>> {
        if interval == 0 {
            return Err(Error::InvalidArg("snapshot interval must be >= 1".into()));
        }
        Ok(SnapshotCollector {
            interval,
            burn_in,
            snapshots: Vec::new(),
        })
    }

    /// Default burn-in: the first 20% of the step budget.
    pub fn with_default_burn_in(interval: usize, total_steps: usize) -> Result<SnapshotCollector<T>> {
        SnapshotCollector::new(interval, total_steps / 5)
    }

    pub fn observe(&mut self, step: usize, params: &T) {
        if step >= self.burn_in && (step - self.burn_in) % self.interval == 0 {
            self.snapshots.push(params.clone());
        }
    }
}

/// Unnormalized log posterior over parameters:
/// −β Σ_{x ∈ D} L(x; θ) + log p(θ). With β = α/|D| this is the
/// regularized-average-loss objective.
pub fn log_posterior_unnorm<T>(
    theta: &T,
    data: &[Vec<f64>],
    beta: f64,
    log_prior: impl Fn(&T) -> f64,
    loss: impl Fn(&T, &[f64]) -> f64,
) -> Result<f64> {
    if beta <= 0.0 {
        return Err(Error::InvalidArg(format!("posterior temperature beta {beta}")));
    }
    let total: f64 = data.iter().map(|x| loss(theta, x)).sum();
    Ok(-beta * total + log_prior(theta))
}

/// Threshold-on-one-feature weak learner with constant vector leaves.
#[derive(Debug, Clone)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl Predictor for Stump {
    fn predict(&self, x: &[f64]) -> Vec<f64> {
        if x[self.feature] <= self.threshold {
            self.left.clone()
        } else {
            self.right.clone()
        }
    }
}

/// Least-squares stump over all (feature, midpoint-threshold) splits.
pub fn fit_stump(xs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Stump> {
    if xs.is_empty() || xs.len() != targets.len() {
        return Err(Error::InvalidArg("fit_stump: empty or mismatched data".into()));
    }
    let dims = xs[0].len();
    let out_dim = targets[0].len();
    let mean_of = |idx: &[usize]| -> Vec<f64> {
        let mut m = vec![0.0; out_dim];
        for &i in idx {
            for d in 0..out_dim {
                m[d] += targets[i][d];
            }
        }
        if !idx.is_empty() {
            m.iter_mut().for_each(|v| *v /= idx.len() as f64);
        }
        m
    };
    let sse_of = |idx: &[usize], mean: &[f64]| -> f64 {
        idx.iter()
            .map(|&i| crate::linalg::dist_sq(&targets[i], mean))
            .sum()
    };
    let mut best: Option<(f64, Stump)> = None;
    for feature in 0..dims {
        let mut values: Vec<f64> = xs.iter().map(|x| x[feature]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for w in values.windows(2) {
            let threshold = 0.5 * (w[0] + w[1]);
            let left_idx: Vec<usize> = (0..xs.len()).filter(|&i| xs[i][feature] <= threshold).collect();
            let right_idx: Vec<usize> = (0..xs.len()).filter(|&i| xs[i][feature] > threshold).collect();
            let left = mean_of(&left_idx);
            let right = mean_of(&right_idx);
            let sse = sse_of(&left_idx, &left) + sse_of(&right_idx, &right);
            if best.as_ref().map_or(true, |(b, _)| sse < *b) {
                best = Some((
                    sse,
                    Stump {
                        feature,
                        threshold,
                        left,
                        right,
                    },
                ));
            }
        }
    }
    // All points identical on every feature: a constant stump.
    Ok(best.map(|(_, s)| s).unwrap_or_else(|| {
        let all: Vec<usize> = (0..xs.len()).collect();
        let m = mean_of(&all);
        Stump {
            feature: 0,
            threshold: f64::INFINITY,
            left: m.clone(),
            right: m,
        }
    }))
}

/// Differentiable loss on predictions, used to form boosting residual
/// targets.
pub trait BoostLoss {
    fn loss(&self, y: &[f64], pred: &[f64]) -> f64;
    /// ∇_pred loss.
    fn grad(&self, y: &[f64], pred: &[f64]) -> Vec<f64>;
}

pub struct SquaredLoss;

impl BoostLoss for SquaredLoss {
    fn loss(&self, y: &[f64], pred: &[f64]) -> f64 {
        0.5 * crate::linalg::dist_sq(y, pred)
    }

    fn grad(&self, y: &[f64], pred: &[f64]) -> Vec<f64> {
        pred.iter().zip(y).map(|(p, t)| p - t).collect()
    }
}

/// Staged additive model: base prediction plus γ-scaled weak learners.
pub struct BoostState {
    pub base: Vec<f64>,
    pub stages: Vec<(Stump, f64)>,
}

impl BoostState {
    /// Base predictor: the target mean.
    pub fn new(targets: &[Vec<f64>]) -> Result<BoostState> {
        if targets.is_empty() {
            return Err(Error::InvalidArg("boost: empty targets".into()));
        }
        Ok(BoostState {
            base: crate::linalg::mean_vec(targets),
            stages: Vec::new(),
        })
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.base.clone();
        for (stump, gamma) in &self.stages {
            for (o, v) in out.iter_mut().zip(stump.predict(x)) {
                *o += gamma * v;
            }
        }
        out
    }

    pub fn total_loss(&self, xs: &[Vec<f64>], ys: &[Vec<f64>], loss: &impl BoostLoss) -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(x, y)| loss.loss(y, &self.predict(x)))
            .sum()
    }
}

/// Fit the next weak learner to the negative loss gradient at the
/// current predictions (equal to the residuals under squared loss).
pub fn boost_stage_fit(
    state: &BoostState,
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    loss: &impl BoostLoss,
) -> Result<Stump> {
    let targets: Vec<Vec<f64>> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let pred = state.predict(x);
            loss.grad(y, &pred).iter().map(|g| -g).collect()
        })
        .collect();
    fit_stump(xs, &targets)
}

/// Golden-section search over [0, 4] (tolerance 1e-6) for the step that
/// minimizes the total loss of f + γ g. Returns 0 for an all-zero g.
pub fn boost_line_search(
    state: &BoostState,
    stump: &Stump,
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    loss: &impl BoostLoss,
) -> Result<f64> {
    if stump.left.iter().chain(&stump.right).all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let objective = |gamma: f64| -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(x, y)| {
                let mut pred = state.predict(x);
                for (p, v) in pred.iter_mut().zip(stump.predict(x)) {
                    *p += gamma * v;
                }
                loss.loss(y, &pred)
            })
            .sum()
    };
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0_f64, 4.0_f64);
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let mut fc = objective(c);
    let mut fd = objective(d);
    while hi - lo > 1e-6 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = objective(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = objective(d);
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Run `stages` rounds of gradient boosting.
pub fn boost_fit(
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    loss: &impl BoostLoss,
    stages: usize,
) -> Result<(BoostState, Vec<f64>)> {
    let mut state = BoostState::new(ys)?;
    let mut trace = vec![state.total_loss(xs, ys, loss)];
    for _ in 0..stages {
        let stump = boost_stage_fit(&state, xs, ys, loss)?;
        let gamma = boost_line_search(&state, &stump, xs, ys, loss)?;
        state.stages.push((stump, gamma));
        trace.push(state.total_loss(xs, ys, loss));
    }
    Ok((state, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{mh_run, ScalarRandomWalk};
    use crate::linalg;

    #[test]
    fn singleton_resample_is_the_dataset() {
        let mut rng = RngStream::new(1);
        let d = vec![vec![1.0, 2.0]];
        assert_eq!(bootstrap_resample(&d, &mut rng).unwrap(), d);
        assert!(bootstrap_resample::<Vec<f64>>(&[], &mut rng).is_err());
    }

    #[test]
    fn resample_determinism_and_distinct_fraction() {
        let data: Vec<usize> = (0..1000).collect();
        let a = bootstrap_resample(&data, &mut RngStream::new(7)).unwrap();
        let b = bootstrap_resample(&data, &mut RngStream::new(7)).unwrap();
        assert_eq!(a, b);

        // Expected distinct fraction 1 − 1/e ≈ 0.632.
        let mut rng = RngStream::new(8);
        let mut fractions = Vec::new();
        for _ in 0..200 {
            let sample = bootstrap_resample(&data, &mut rng).unwrap();
            let mut seen = vec![false; 1000];
            for &v in &sample {
                seen[v] = true;
            }
            fractions.push(seen.iter().filter(|&&s| s).count() as f64 / 1000.0);
        }
        let mean: f64 = fractions.iter().sum::<f64>() / fractions.len() as f64;
        assert!((mean - (1.0 - (-1.0_f64).exp())).abs() < 0.005, "fraction {mean}");
    }

    #[test]
    fn bagging_basics() {
        let members: Vec<Box<dyn Fn(&[f64]) -> Vec<f64>>> =
            vec![Box::new(|_: &[f64]| vec![0.0]), Box::new(|_: &[f64]| vec![2.0])];
        let ensemble = EnsembleSet::new(members).unwrap();
        assert_eq!(bag_predict(&ensemble, &[0.0]), vec![1.0]);
    }

    impl Predictor for Box<dyn Fn(&[f64]) -> Vec<f64>> {
        fn predict(&self, x: &[f64]) -> Vec<f64> {
            self(x)
        }
    }

    #[test]
    fn bagging_inequality_under_squared_loss() {
        // Loss of the mean prediction <= mean member loss, always.
        let mut rng = RngStream::new(2);
        for _ in 0..1000 {
            let members: Vec<f64> = (0..5).map(|_| 2.0 * rng.normal()).collect();
            let target = rng.normal();
            let mean: f64 = members.iter().sum::<f64>() / members.len() as f64;
            let loss_of_mean = (target - mean) * (target - mean);
            let mean_loss: f64 =
                members.iter().map(|m| (target - m) * (target - m)).sum::<f64>() / members.len() as f64;
            assert!(loss_of_mean <= mean_loss + 1e-12);
        }
    }

    #[test]
    fn snapshot_intervals_and_spread() {
        let mut collector: SnapshotCollector<Vec<f64>> = SnapshotCollector::new(10, 20).unwrap();
        // Noisy SGD on a quadratic: walk stays stochastic, snapshots vary.
        let mut rng = RngStream::new(3);
        let mut theta = vec![2.0];
        for step in 0..120 {
            collector.observe(step, &theta);
            let g = theta[0] + 0.5 * rng.normal();
            theta[0] -= 0.1 * g;
        }
        assert_eq!(collector.snapshots.len(), 10);
        let mean: f64 = collector.snapshots.iter().map(|s| s[0]).sum::<f64>() / 10.0;
        let var: f64 = collector.snapshots.iter().map(|s| (s[0] - mean).powi(2)).sum::<f64>() / 10.0;
        assert!(var > 0.0);

        // Interval equal to the whole budget keeps a single member.
        let mut single: SnapshotCollector<Vec<f64>> = SnapshotCollector::new(200, 0).unwrap();
        for step in 0..120 {
            single.observe(step, &theta);
        }
        assert_eq!(single.snapshots.len(), 1);
    }

    #[test]
    fn snapshot_bag_beats_median_member_on_toy_regression() {
        // y = 1.2 x with noisy scalar-parameter SGD; bagged snapshots
        // against per-snapshot test MSE.
        let mut rng = RngStream::new(4);
        let train: Vec<(f64, f64)> = (0..64)
            .map(|_| {
                let x = 2.0 * rng.uniform() - 1.0;
                (x, 1.2 * x + 0.05 * rng.normal())
            })
            .collect();
        let mut w = 0.0;
        let mut collector: SnapshotCollector<f64> = SnapshotCollector::with_default_burn_in(25, 1000).unwrap();
        for step in 0..1000 {
            let (x, y) = train[rng.below(train.len())];
            let g = (w * x - y) * x + 0.3 * rng.normal();
            w -= 0.05 * g;
            collector.observe(step, &w);
        }
        let test: Vec<(f64, f64)> = (0..256)
            .map(|_| {
                let x = 2.0 * rng.uniform() - 1.0;
                (x, 1.2 * x)
            })
            .collect();
        let mse = |weight: f64| -> f64 {
            test.iter().map(|&(x, y)| (weight * x - y) * (weight * x - y)).sum::<f64>() / test.len() as f64
        };
        let bagged = collector.snapshots.iter().sum::<f64>() / collector.snapshots.len() as f64;
        let mut member_mses: Vec<f64> = collector.snapshots.iter().map(|&s| mse(s)).collect();
        member_mses.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = member_mses[member_mses.len() / 2];
        assert!(mse(bagged) <= median, "bag {} vs median {}", mse(bagged), median);
    }

    #[test]
    fn log_posterior_forms() {
        let theta = vec![0.5, -0.2];
        let data = vec![vec![1.0], vec![2.0]];
        // Flat prior, β = 1: negative total loss.
        let lp = log_posterior_unnorm(&theta, &data, 1.0, |_| 0.0, |_, x| x[0]).unwrap();
        assert!((lp + 3.0).abs() < 1e-12);
        // Gaussian prior with zero loss: −½‖θ‖²/σ_p².
        let lp = log_posterior_unnorm(
            &theta,
            &data,
            2.0,
            |t: &Vec<f64>| -0.5 * linalg::norm_sq(t) / 4.0,
            |_, _| 0.0,
        )
        .unwrap();
        assert!((lp + 0.5 * (0.25 + 0.04) / 4.0).abs() < 1e-12);
        // β = α/|D| matches the regularized average-loss form exactly.
        let alpha = 3.0;
        let beta = alpha / data.len() as f64;
        let lp = log_posterior_unnorm(&theta, &data, beta, |_| -1.0, |_, x| x[0]).unwrap();
        let want = -(alpha / data.len() as f64) * 3.0 - 1.0;
        assert!((lp - want).abs() < 1e-12);
    }

    #[test]
    fn posterior_sampling_matches_conjugate_linear_regression() {
        // 2-parameter linear model y = θᵀx with unit noise and Gaussian
        // prior: the posterior is Gaussian with precision
        // Λ = I/σ_p² + β Σ x xᵀ and mean Λ⁻¹ β Σ y x.
        let mut rng = RngStream::new(5);
        let true_theta = [0.8, -0.4];
        let data: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let x0 = rng.normal();
                let x1 = rng.normal();
                let y = true_theta[0] * x0 + true_theta[1] * x1 + rng.normal();
                vec![x0, x1, y]
            })
            .collect();
        let prior_var = 4.0;
        let beta = 1.0;
        let loss = |t: &Vec<f64>, row: &[f64]| {
            let pred = t[0] * row[0] + t[1] * row[1];
            0.5 * (row[2] - pred) * (row[2] - pred)
        };
        let log_prior = |t: &Vec<f64>| -0.5 * linalg::norm_sq(t) / prior_var;

        // Conjugate closed form.
        let mut precision = vec![vec![1.0 / prior_var, 0.0], vec![0.0, 1.0 / prior_var]];
        let mut rhs = vec![0.0; 2];
        for row in &data {
            for i in 0..2 {
                for j in 0..2 {
                    precision[i][j] += beta * row[i] * row[j];
                }
                rhs[i] += beta * row[2] * row[i];
            }
        }
        let exact_mean = linalg::solve(&precision, &rhs).unwrap();

        let walk = ScalarRandomWalk { sd: 0.25 };
        let (samples, _) = mh_run(
            vec![0.0, 0.0],
            |t: &Vec<f64>| log_posterior_unnorm(t, &data, beta, log_prior, loss).unwrap(),
            &walk,
            2000,
            10,
            30_000,
            &mut rng,
        )
        .unwrap();
        for d in 0..2 {
            let mean: f64 = samples.iter().map(|s| s[d]).sum::<f64>() / samples.len() as f64;
            assert!((mean - exact_mean[d]).abs() < 0.02, "dim {d}: {mean} vs {}", exact_mean[d]);
        }
    }

    #[test]
    fn perfect_fit_gives_zero_targets_and_zero_stump() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|_| vec![3.0]).collect();
        let state = BoostState::new(&ys).unwrap();
        let stump = boost_stage_fit(&state, &xs, &ys, &SquaredLoss).unwrap();
        for v in stump.left.iter().chain(&stump.right) {
            assert!(v.abs() < 1e-12);
        }
        let gamma = boost_line_search(&state, &stump, &xs, &ys, &SquaredLoss).unwrap();
        assert_eq!(gamma, 0.0);
    }

    #[test]
    fn squared_loss_targets_are_residuals() {
        let mut rng = RngStream::new(6);
        let xs: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.normal()]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![2.0 * x[0] + rng.normal()]).collect();
        let state = BoostState::new(&ys).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            let pred = state.predict(x);
            let g = SquaredLoss.grad(y, &pred);
            let residual = y[0] - pred[0];
            assert!((-g[0] - residual).abs() < 1e-12);
        }
    }

    #[test]
    fn targets_match_finite_difference_gradient() {
        let y = vec![1.5, -0.3];
        let pred = vec![0.2, 0.4];
        let g = SquaredLoss.grad(&y, &pred);
        let h = 1e-6;
        for d in 0..2 {
            let mut plus = pred.clone();
            plus[d] += h;
            let mut minus = pred.clone();
            minus[d] -= h;
            let fd = (SquaredLoss.loss(&y, &plus) - SquaredLoss.loss(&y, &minus)) / (2.0 * h);
            assert!((g[d] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn residual_fit_line_search_returns_one() {
        // When g exactly captures the residuals the quadratic in γ is
        // minimized at 1.
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![if x[0] <= 3.5 { 1.0 } else { -1.0 }]).collect();
        let state = BoostState::new(&ys).unwrap();
        // This stump family can represent the residuals exactly.
        let stump = boost_stage_fit(&state, &xs, &ys, &SquaredLoss).unwrap();
        let gamma = boost_line_search(&state, &stump, &xs, &ys, &SquaredLoss).unwrap();
        assert!((gamma - 1.0).abs() < 1e-4, "gamma {gamma}");
    }

    #[test]
    fn staged_loss_non_increasing_on_sinusoid() {
        let mut rng = RngStream::new(7);
        let xs: Vec<Vec<f64>> = (0..60).map(|_| vec![4.0 * rng.uniform()]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0].sin() + 0.05 * rng.normal()]).collect();
        let (_, trace) = boost_fit(&xs, &ys, &SquaredLoss, 10).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "stage loss rose: {} -> {}", w[0], w[1]);
        }
        assert!(trace.last().unwrap() < &(trace[0] * 0.5), "not enough progress: {trace:?}");
    }
}
