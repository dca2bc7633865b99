//! Generalization-bound and uncertainty calculators: Hoeffding and
//! finite-class bounds, the PAC-Bayes bound with its Pinsker inversion,
//! bias-variance decomposition, Wald intervals, histogram credible
//! regions, bootstrap distributions and K-fold splits.

use crate::ensemble::bootstrap_resample;
use crate::error::{Error, Result};
use crate::rng::RngStream;

fn check_n_delta(n: usize, delta: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArg("sample count N >= 1 required".into()));
    }
    if !(0.0 < delta && delta < 1.0) {
        return Err(Error::InvalidArg(format!("failure probability {delta} outside (0, 1)")));
    }
    Ok(())
}

/// ε = √(ln(2/δ) / (2N)): with probability ≥ 1−δ the expected risk of a
/// fixed hypothesis lies within ε of its empirical risk (loss in [0,1]).
pub fn hoeffding_epsilon(n: usize, delta: f64) -> Result<f64> {
    check_n_delta(n, delta)?;
    Ok(((2.0 / delta).ln() / (2.0 * n as f64)).sqrt())
}

/// Union bound over a finite hypothesis class:
/// ε = √((ln|Θ| + ln(2/δ)) / (2N)).
pub fn finite_class_epsilon(n: usize, delta: f64, class_size: usize) -> Result<f64> {
    check_n_delta(n, delta)?;
    if class_size == 0 {
        return Err(Error::InvalidArg("hypothesis class must be nonempty".into()));
    }
    Ok((((class_size as f64).ln() + (2.0 / delta).ln()) / (2.0 * n as f64)).sqrt())
}

/// KL(Bernoulli(p) ‖ Bernoulli(q)) with the 0·log 0 = 0 convention;
/// +∞ when q is degenerate away from p.
pub fn bernoulli_kl(p: f64, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArg(format!("bernoulli_kl({p}, {q}) outside [0,1]")));
    }
    if p == q {
        return Ok(0.0);
    }
    if q == 0.0 || q == 1.0 {
        return Ok(f64::INFINITY);
    }
    let mut kl = 0.0;
    if p > 0.0 {
        kl += p * (p / q).ln();
    }
    if p < 1.0 {
        kl += (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
    }
    Ok(kl)
}

/// Right-hand side of the PAC-Bayes inequality:
/// (KL(Q‖P) + ln((N+1)/δ)) / N.
pub fn pac_bayes_rhs(n: usize, delta: f64, kl_qp: f64) -> Result<f64> {
    check_n_delta(n, delta)?;
    if kl_qp < 0.0 {
        return Err(Error::InvalidArg(format!("KL(Q‖P) = {kl_qp} < 0")));
    }
    Ok((kl_qp + ((n as f64 + 1.0) / delta).ln()) / n as f64)
}

/// Pinsker inversion of the PAC-Bayes bound: the half-width
/// √((KL(Q‖P) + ln((N+1)/δ)) / (2N)).
pub fn pac_bayes_gap(n: usize, delta: f64, kl_qp: f64) -> Result<f64> {
    Ok((0.5 * pac_bayes_rhs(n, delta, kl_qp)?).sqrt())
}

/// Empirical decomposition of the expected squared error into aleatoric
/// noise, parameter variance, squared bias and the paired cross-term.
/// For paired samples: mse = aleatoric + variance + bias² + cross.
#[derive(Debug, Clone, Copy)]
pub struct BiasVariance {
    pub aleatoric: f64,
    pub variance: f64,
    pub bias_sq: f64,
    pub cross_term: f64,
}

pub fn bias_variance_decompose(y: &[f64], predictions: &[f64]) -> Result<BiasVariance> {
    if y.len() < 2 || predictions.len() < 2 {
        return Err(Error::InvalidArg("bias_variance: need >= 2 samples per factor".into()));
    }
    if y.len() != predictions.len() {
        return Err(Error::InvalidArg("bias_variance: factors must be paired".into()));
    }
    let n = y.len() as f64;
    let mu_y: f64 = y.iter().sum::<f64>() / n;
    let mu_hat: f64 = predictions.iter().sum::<f64>() / n;
    let aleatoric = y.iter().map(|v| (v - mu_y).powi(2)).sum::<f64>() / n;
    let variance = predictions.iter().map(|v| (v - mu_hat).powi(2)).sum::<f64>() / n;
    let bias_sq = (mu_y - mu_hat).powi(2);
    let cross_term = -2.0
        * y.iter()
            .zip(predictions)
            .map(|(yv, pv)| (yv - mu_y) * (pv - mu_hat))
            .sum::<f64>()
        / n;
    Ok(BiasVariance {
        aleatoric,
        variance,
        bias_sq,
        cross_term,
    })
}

/// Standard-normal quantile via the Acklam rational approximation
/// (absolute error below 1.2e-9).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::InvalidArg(format!("quantile level {p} outside (0, 1)")));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    let x = if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    Ok(x)
}

#[derive(Debug, Clone, Copy)]
pub struct WaldCi {
    pub lo: f64,
    pub hi: f64,
    pub z: f64,
    /// Set when N < 30, where the normal approximation is shaky.
    pub small_sample_warning: bool,
}

/// Two-sided Wald interval for the accuracy 1 − l̄ at confidence γ:
/// (1−l̄) ± z·√(l̄(1−l̄)/N).
pub fn wald_ci(mean_loss: f64, n: usize, gamma: f64) -> Result<WaldCi> {
    if !(0.0..=1.0).contains(&mean_loss) {
        return Err(Error::InvalidArg(format!("mean loss {mean_loss} outside [0, 1]")));
    }
    if n == 0 {
        return Err(Error::InvalidArg("wald_ci: N >= 1".into()));
    }
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::InvalidArg(format!("confidence {gamma} outside (0, 1)")));
    }
    let z = normal_quantile(1.0 - (1.0 - gamma) / 2.0)?;
    let half = z * (mean_loss * (1.0 - mean_loss) / n as f64).sqrt();
    let acc = 1.0 - mean_loss;
    Ok(WaldCi {
        lo: acc - half,
        hi: acc + half,
        z,
        small_sample_warning: n < 30,
    })
}

/// Highest-density region of a scalar sample by histogram, with
/// Freedman-Diaconis bin widths: keep the densest bins until their mass
/// reaches γ, then merge adjacent kept bins into intervals. Multimodal
/// samples may return several disjoint intervals.
pub fn credible_region(samples: &[f64], gamma: f64) -> Result<Vec<(f64, f64)>> {
    if samples.len() < 100 {
        return Err(Error::InvalidArg(format!("credible_region: needs >= 100 samples, got {}", samples.len())));
    }
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::InvalidArg(format!("mass {gamma} outside (0, 1)")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let q1 = sorted[n / 4];
    let q3 = sorted[3 * n / 4];
    let iqr = (q3 - q1).max(f64::EPSILON);
    let width = 2.0 * iqr / (n as f64).cbrt();
    let lo = sorted[0];
    let hi = sorted[n - 1];
    let bins = (((hi - lo) / width).ceil() as usize).clamp(1, 10_000);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &s in samples {
        let mut b = ((s - lo) / width) as usize;
        if b >= bins {
            b = bins - 1;
        }
        counts[b] += 1;
    }
    // Keep densest bins until the mass target is met.
    let mut order: Vec<usize> = (0..bins).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut kept = vec![false; bins];
    let mut mass = 0.0;
    for &b in &order {
        if mass >= gamma {
            break;
        }
        kept[b] = true;
        mass += counts[b] as f64 / n as f64;
    }
    // Merge adjacent kept bins.
    let mut intervals = Vec::new();
    let mut start: Option<usize> = None;
    for b in 0..bins {
        match (kept[b], start) {
            (true, None) => start = Some(b),
            (false, Some(s)) => {
                intervals.push((lo + s as f64 * width, lo + b as f64 * width));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        intervals.push((lo + s as f64 * width, hi));
    }
    Ok(intervals)
}

/// Mass of the sample actually covered by a region.
pub fn region_mass(samples: &[f64], region: &[(f64, f64)]) -> f64 {
    let inside = samples
        .iter()
        .filter(|&&s| region.iter().any(|&(a, b)| s >= a && s <= b))
        .count();
    inside as f64 / samples.len() as f64
}

/// Evaluate a statistic on M independent bootstrap resamples.
pub fn bootstrap_distribution<T: Clone, F>(
    data: &[T],
    statistic: F,
    m: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>>
where
    F: Fn(&[T]) -> f64,
{
    if m == 0 {
        return Err(Error::InvalidArg("bootstrap_distribution: M >= 1".into()));
    }
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let resample = bootstrap_resample(data, rng)?;
        out.push(statistic(&resample));
    }
    Ok(out)
}

/// Random-permutation K-fold split: contiguous validation blocks of
/// ⌈N/K⌉ indices (the last possibly smaller), mutually disjoint and
/// jointly covering 0..N.
pub fn kfold_split(n: usize, k: usize, rng: &mut RngStream) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || k > n {
        return Err(Error::InvalidArg(format!("kfold: K = {k} outside [2, N = {n}]")));
    }
    let perm = rng.permutation(n);
    let block = n.div_ceil(k);
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let start = f * block;
        let end = ((f + 1) * block).min(n);
        if start >= end {
            break;
        }
        let validation: Vec<usize> = perm[start..end].to_vec();
        let train: Vec<usize> = perm[..start].iter().chain(&perm[end..]).cloned().collect();
        folds.push((train, validation));
    }
    Ok(folds)
}
