//! Small statistics helpers: least squares, weighted moments and
//! Kolmogorov–Smirnov tests.

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Standard error of the slope.
    pub slope_se: f64,
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(invalid("regression inputs differ in length"));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::DegenerateFit("need at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFit("non-finite regression input".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateFit("regressor has no spread".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_se = if n > 2 {
        (sse / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        slope_se,
    })
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean and standard error of the mean.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = mean(v);
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Weighted mean with normalised weights.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
}

/// Kish effective sample size `(Σw)^2 / Σw^2`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Asymptotic Kolmogorov tail `P(K > λ)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample KS test against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(invalid("KS test needs samples"));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let en = n.sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival((en + 0.12 + 0.11 / en) * d),
    })
}

/// Two-sample KS test; `weights_b` makes the second sample a weighted
/// empirical law with effective size `ESS`.
pub fn ks_two_sample(a: &[f64], b: &[f64], weights_b: Option<&[f64]>) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("KS test needs two non-empty samples"));
    }
    let mut xa = a.to_vec();
    xa.sort_by(f64::total_cmp);
    let uniform = vec![1.0; b.len()];
    let wb = weights_b.unwrap_or(&uniform);
    if wb.len() != b.len() {
        return Err(invalid("weights and samples differ in length"));
    }
    let total: f64 = wb.iter().sum();
    let mut idx: Vec<usize> = (0..b.len()).collect();
    idx.sort_by(|&i, &j| b[i].total_cmp(&b[j]));
    let na = xa.len() as f64;
    let (mut i, mut j) = (0usize, 0usize);
    let (mut fa, mut fb, mut d) = (0.0f64, 0.0f64, 0.0f64);
    while i < xa.len() || j < idx.len() {
        let next_a = xa.get(i).copied().unwrap_or(f64::INFINITY);
        let next_b = idx.get(j).map(|&k| b[k]).unwrap_or(f64::INFINITY);
        let x = next_a.min(next_b);
        while i < xa.len() && xa[i] <= x {
            fa += 1.0 / na;
            i += 1;
        }
        while j < idx.len() && b[idx[j]] <= x {
            fb += wb[idx[j]] / total;
            j += 1;
        }
        d = d.max((fa - fb).abs());
    }
    let nb = effective_sample_size(wb);
    let ne = (na * nb / (na + nb)).sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival((ne + 0.12 + 0.11 / ne) * d),
    })
}

/// Empirical quantile by linear interpolation of the sorted sample.
pub fn quantile(samples: &[f64], q: f64) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}
