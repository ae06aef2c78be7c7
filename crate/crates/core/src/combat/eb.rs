//! Per-site batch moments, method-of-moments hyperpriors and the
//! empirical-Bayes fixed point for the shrunken location/scale pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Empirical location and scale of one site's standardized data.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteMoments {
    pub n_subjects: usize,
    /// Per-feature mean of z.
    pub gamma_hat: Vec<f64>,
    /// Per-feature variance of z, `J - 1` denominator.
    pub delta2_hat: Vec<f64>,
}

impl SiteMoments {
    /// `columns[v]` holds the site's standardized values for feature `v`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        let mut gamma_hat = Vec::with_capacity(columns.len());
        let mut delta2_hat = Vec::with_capacity(columns.len());
        for col in columns {
            let (mean, var) = mean_var(col).ok_or_else(|| Error::SiteTooSmall {
                site: String::new(),
                n: col.len(),
            })?;
            gamma_hat.push(mean);
            delta2_hat.push(var);
        }
        Ok(Self {
            n_subjects: n,
            gamma_hat,
            delta2_hat,
        })
    }
}

/// Sample mean and (`n - 1`) variance; `None` below two values.
pub(crate) fn mean_var(x: &[f64]) -> Option<(f64, f64)> {
    if x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>();
    Some((mean, ss / (n - 1.0)))
}

/// Normal prior on the location (`mu_bar`, `tau2_bar`) and inverse-gamma prior
/// on the scale (`lambda_bar`, `theta_bar`), matched to the moments of the
/// empirical estimates across features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperpriors {
    pub mu_bar: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau2_bar: Option<f64>,
    pub g_bar: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s2_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_bar: Option<f64>,
}

impl Hyperpriors {
    /// The priors cannot drive shrinkage: fewer than two features, or no
    /// spread in the variance estimates.
    pub fn is_degenerate(&self) -> bool {
        self.tau2_bar.is_none() || self.lambda_bar.is_none() || self.theta_bar.is_none()
    }
}

/// Moment-matched hyperpriors from the per-feature empirical estimates of one
/// site. With a single feature the spreads are undefined and the result is
/// degenerate; the same holds when the variance estimates do not vary.
pub fn fit_hyperpriors(gamma_hat: &[f64], delta2_hat: &[f64]) -> Hyperpriors {
    let v = gamma_hat.len().min(delta2_hat.len());
    if v == 0 {
        return Hyperpriors {
            mu_bar: 0.0,
            tau2_bar: None,
            g_bar: 0.0,
            s2_bar: None,
            lambda_bar: None,
            theta_bar: None,
        };
    }
    let mu_bar = gamma_hat.iter().sum::<f64>() / v as f64;
    let g_bar = delta2_hat.iter().sum::<f64>() / v as f64;
    let (tau2_bar, s2_bar) = match (mean_var(gamma_hat), mean_var(delta2_hat)) {
        (Some((_, t)), Some((_, s))) => (Some(t), Some(s)),
        _ => (None, None),
    };
    let (lambda_bar, theta_bar) = match s2_bar {
        Some(s2) if s2 > 0.0 => {
            let lambda = (g_bar * g_bar + 2.0 * s2) / s2;
            let theta = (g_bar * g_bar * g_bar + g_bar * s2) / s2;
            if lambda.is_finite() && theta.is_finite() && theta > 0.0 {
                (Some(lambda), Some(theta))
            } else {
                (None, None)
            }
        }
        _ => (None, None),
    };
    Hyperpriors {
        mu_bar,
        tau2_bar,
        g_bar,
        s2_bar,
        lambda_bar,
        theta_bar,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EbOptions {
    /// Relative change threshold on both location and scale.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EbOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shrunken {
    pub gamma_star: Vec<f64>,
    pub delta2_star: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterates the posterior-mean updates
///
/// ```text
/// γ* = (J τ² γ̂ + δ²* μ) / (J τ² + δ²*)
/// δ²* = (θ + ½ Σ_j (z_j − γ*)²) / (J/2 + λ − 1)
/// ```
///
/// starting from `δ²* = δ̂²`. The residual sum uses the identity
/// `Σ_j (z_j − g)² = (J − 1) δ̂² + J (γ̂ − g)²`, so only the site moments are
/// needed.
pub fn eb_shrink(
    moments: &SiteMoments,
    priors: &Hyperpriors,
    options: &EbOptions,
) -> Result<Shrunken> {
    let (Some(tau2), Some(lambda), Some(theta)) =
        (priors.tau2_bar, priors.lambda_bar, priors.theta_bar)
    else {
        return Err(Error::Numerical(
            "empirical-Bayes shrinkage needs non-degenerate hyperpriors".into(),
        ));
    };
    let j = moments.n_subjects as f64;
    if moments.n_subjects < 2 {
        return Err(Error::SiteTooSmall {
            site: String::new(),
            n: moments.n_subjects,
        });
    }
    let mu = priors.mu_bar;
    let denom = j / 2.0 + lambda - 1.0;

    let mut gamma = moments.gamma_hat.clone();
    let mut delta2 = moments.delta2_hat.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iter {
        iterations += 1;
        let mut change: f64 = 0.0;
        for v in 0..gamma.len() {
            let g_hat = moments.gamma_hat[v];
            let g_new = if tau2 == 0.0 {
                mu
            } else if delta2[v] == 0.0 {
                g_hat
            } else {
                (j * tau2 * g_hat + delta2[v] * mu) / (j * tau2 + delta2[v])
            };
            let ss = (j - 1.0) * moments.delta2_hat[v] + j * (g_hat - g_new) * (g_hat - g_new);
            let d_new = (theta + 0.5 * ss) / denom;
            if !g_new.is_finite() || !d_new.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite iterate for feature {v}"
                )));
            }
            change = change
                .max(relative_change(gamma[v], g_new))
                .max(relative_change(delta2[v], d_new));
            gamma[v] = g_new;
            delta2[v] = d_new;
        }
        if change < options.tol {
            converged = true;
            break;
        }
    }
    Ok(Shrunken {
        gamma_star: gamma,
        delta2_star: delta2,
        iterations,
        converged,
    })
}

fn relative_change(old: f64, new: f64) -> f64 {
    (new - old).abs() / old.abs().max(1e-12)
}

/// Location/scale estimates without a prior: the empirical moments themselves.
pub fn ls_estimate(moments: &SiteMoments) -> Shrunken {
    Shrunken {
        gamma_star: moments.gamma_hat.clone(),
        delta2_star: moments.delta2_hat.clone(),
        iterations: 0,
        converged: true,
    }
}
