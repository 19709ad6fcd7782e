//! Rank estimation by the global analytic solution of fully observed
//! variational Bayesian matrix factorisation with empirical noise variance.
//!
//! For an `L × M` matrix (`L ≤ M`, `α = L/M`) with singular values `γ_h`, the
//! free energy as a function of the noise variance `σ²` depends only on
//! `x_h = γ_h² / (M σ²)`:
//!
//! ```text
//! Ω(σ²) = Σ_h [ x_h − ln x_h ]                                  if x_h ≤ x̄
//!       + Σ_h [ x_h − τ_h + ln((τ_h + 1)/x_h) + α ln(τ_h/α + 1) ] if x_h > x̄
//! τ(x)  = ½ (x − (1+α) + √((x − (1+α))² − 4α))
//! x̄     = (1 + τ̄)(1 + α/τ̄),   τ̄ the root of Φ(τ) + Φ(τ/α), Φ(z) = ln(1+z)/z − ½
//! ```
//!
//! `σ²` is minimised over the bracket where the solution must lie, and a
//! component survives when `γ_h > √(M σ² x̄)`.

use alloc::vec::Vec;

use crate::network::ConvKernel;
use crate::tensor::{svd, Matrix};
use crate::tucker::{INPUT_CHANNEL_MODE, OUTPUT_CHANNEL_MODE};
use crate::{Error, Result};

const GRID_POINTS: usize = 1024;
const SEARCH_RESOLUTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RankEstimate {
    pub rank: usize,
    /// Leading singular values above the threshold (a prefix of all of them).
    pub retained_singular_values: Vec<f64>,
    /// Zero only for an all-zero input.
    pub estimated_noise_variance: f64,
    pub threshold: f64,
}

fn phi(z: f64) -> f64 {
    libm::log1p(z) / z - 0.5
}

/// Root of `Φ(τ) + Φ(τ/α)`; the function decreases from 1 to −1 on `(0, ∞)`.
fn tau_bar(alpha: f64) -> f64 {
    let xi = |t: f64| phi(t) + phi(t / alpha);
    let (mut lo, mut hi) = (1e-12, 1.0);
    while xi(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if xi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn tau(x: f64, alpha: f64) -> f64 {
    let b = x - (1.0 + alpha);
    0.5 * (b + libm::sqrt((b * b - 4.0 * alpha).max(0.0)))
}

struct Problem<'a> {
    s: &'a [f64],
    m: f64,
    alpha: f64,
    x_bar: f64,
}

impl Problem<'_> {
    fn objective(&self, sigma2: f64) -> f64 {
        let mut total = 0.0;
        for &g in self.s {
            let x = g * g / (self.m * sigma2);
            if x > self.x_bar {
                let t = tau(x, self.alpha);
                total += x - t + libm::log((t + 1.0) / x) + self.alpha * libm::log1p(t / self.alpha);
            } else if x > 0.0 {
                total += x - libm::log(x);
            } else {
                // γ = 0 contributes −ln x = ln(Mσ²) − ln γ²; only the σ² part varies
                total += libm::log(self.m * sigma2);
            }
        }
        total
    }

    /// Log-spaced grid followed by golden-section refinement around the best cell.
    fn minimise(&self, lower: f64, upper: f64) -> f64 {
        if upper.is_nan() || lower.is_nan() || upper <= lower {
            return upper;
        }
        let (ll, lu) = (libm::log(lower), libm::log(upper));
        let at = |i: usize| libm::exp(ll + (lu - ll) * i as f64 / (GRID_POINTS - 1) as f64);
        let mut best = 0;
        let mut best_val = f64::INFINITY;
        for i in 0..GRID_POINTS {
            let v = self.objective(at(i));
            if v < best_val {
                best_val = v;
                best = i;
            }
        }
        let mut a = libm::log(at(best.saturating_sub(1)));
        let mut b = libm::log(at((best + 1).min(GRID_POINTS - 1)));
        let f = |ls: f64| self.objective(libm::exp(ls));
        let ratio = 0.5 * (libm::sqrt(5.0) - 1.0);
        let mut c = b - ratio * (b - a);
        let mut d = a + ratio * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        while b - a > SEARCH_RESOLUTION {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - ratio * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + ratio * (b - a);
                fd = f(d);
            }
        }
        let refined = libm::exp(0.5 * (a + b));
        if self.objective(refined) <= best_val {
            refined
        } else {
            at(best)
        }
    }
}

/// Estimates the rank of `m`. A result of 0 is reported as is.
pub fn estimate_rank(m: &Matrix) -> Result<RankEstimate> {
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    let s = svd(m)?.s;
    let l = m.rows().min(m.cols());
    let mm = m.rows().max(m.cols());
    let energy: f64 = s.iter().map(|g| g * g).sum();
    if energy == 0.0 {
        return Ok(RankEstimate {
            rank: 0,
            retained_singular_values: Vec::new(),
            estimated_noise_variance: 0.0,
            threshold: 0.0,
        });
    }

    let (lf, mf) = (l as f64, mm as f64);
    let alpha = lf / mf;
    let tb = tau_bar(alpha);
    let x_bar = (1.0 + tb) * (1.0 + alpha / tb);

    // index of the first singular value that cannot belong to the signal
    let cap = (libm::ceil(lf / (1.0 + alpha)) as usize).min(l).saturating_sub(1);
    let tail = &s[cap..];
    let tail_mean = tail.iter().map(|g| g * g).sum::<f64>() / tail.len() as f64;
    let lower = (s[cap] * s[cap] / (mf * x_bar)).max(tail_mean / mf);
    let upper = energy / (lf * mf);

    let problem = Problem {
        s: &s,
        m: mf,
        alpha,
        x_bar,
    };
    let sigma2 = problem.minimise(lower, upper);
    let threshold = libm::sqrt(mf * sigma2 * x_bar);
    let rank = s.iter().take_while(|&&g| g > threshold).count();
    Ok(RankEstimate {
        rank,
        retained_singular_values: s[..rank].to_vec(),
        estimated_noise_variance: sigma2,
        threshold,
    })
}

/// Channel ranks `(rs, rt)` for a Tucker-2 rewrite of a convolution kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvRanks {
    pub rs: usize,
    pub rt: usize,
    pub input: RankEstimate,
    pub output: RankEstimate,
    /// True when either raw estimate was 0 and got raised to 1.
    pub clamped: bool,
}

pub(crate) fn clamp_rank(estimate: &RankEstimate, what: &str) -> (usize, bool) {
    if estimate.rank == 0 {
        log::warn!("VBMF found no signal in {what}; using rank 1");
        (1, true)
    } else {
        (estimate.rank, false)
    }
}

/// VBMF on the mode-`s` and mode-`t` unfoldings, each clamped to at least 1.
pub fn estimate_ranks_for_conv(k: &ConvKernel) -> Result<ConvRanks> {
    let input = estimate_rank(&k.weights.unfold(INPUT_CHANNEL_MODE)?)?;
    let output = estimate_rank(&k.weights.unfold(OUTPUT_CHANNEL_MODE)?)?;
    let (rs, cs) = clamp_rank(&input, "input channel unfolding");
    let (rt, ct) = clamp_rank(&output, "output channel unfolding");
    Ok(ConvRanks {
        rs,
        rt,
        input,
        output,
        clamped: cs || ct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_bar_for_square_matrices() {
        // ln(1+τ)/τ = ½ has root ≈ 2.5129
        assert!((tau_bar(1.0) - 2.5129).abs() < 1e-4);
        let a = 0.25;
        let t = tau_bar(a);
        assert!((phi(t) + phi(t / a)).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let r = estimate_rank(&Matrix::zeros(4, 6)).unwrap();
        assert_eq!(r.rank, 0);
        assert!(r.retained_singular_values.is_empty());
    }

    #[test]
    fn single_row_never_survives() {
        let m = Matrix::from_fn(1, 20, |_, j| j as f64 + 1.0);
        assert_eq!(estimate_rank(&m).unwrap().rank, 0);
    }

    #[test]
    fn rejects_non_finite() {
        let mut m = Matrix::identity(3);
        m.set(1, 1, f64::NAN);
        assert_eq!(estimate_rank(&m).unwrap_err(), Error::NonFinite);
    }
}
