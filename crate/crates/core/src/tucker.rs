//! Partial Tucker decomposition over a subset of modes.
//!
//! Factors are initialised by truncated HOSVD (leading left singular vectors
//! of each unfolding) and refined by higher-order orthogonal iteration. Modes
//! outside the chosen subset keep their full size in the core.

use alloc::format;
use alloc::vec::Vec;

use crate::network::ConvKernel;
use crate::tensor::{svd, DenseTensor, Matrix};
use crate::{Error, Result};

/// Kernel mode carrying the input channels `s`.
pub const INPUT_CHANNEL_MODE: usize = 3;
/// Kernel mode carrying the output channels `t`.
pub const OUTPUT_CHANNEL_MODE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuckerOptions {
    pub max_iters: usize,
    /// Stop once the fit changes by less than this between sweeps.
    pub tol: f64,
    /// `false` returns the truncated HOSVD without any HOOI sweep.
    pub refine: bool,
}

impl Default for TuckerOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-8,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub mode: usize,
    /// original mode size × rank, orthonormal columns.
    pub matrix: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuckerFactors {
    pub core: DenseTensor,
    /// Sorted by mode.
    pub factors: Vec<Factor>,
    pub original_shape: Vec<usize>,
    /// Fit `1 - ‖t - t̂‖/‖t‖` after initialisation and after every HOOI sweep.
    pub fit_history: Vec<f64>,
}

impl TuckerFactors {
    pub fn decomposed_modes(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.mode).collect()
    }

    pub fn factor(&self, mode: usize) -> Option<&Matrix> {
        self.factors.iter().find(|f| f.mode == mode).map(|f| &f.matrix)
    }

    pub fn rank(&self, mode: usize) -> Option<usize> {
        self.factor(mode).map(Matrix::cols)
    }

    pub fn reconstruct(&self) -> Result<DenseTensor> {
        reconstruct(self)
    }

    pub fn final_fit(&self) -> f64 {
        *self.fit_history.last().expect("fit history is never empty")
    }
}

/// Multiplies the core by every factor along its mode.
pub fn reconstruct(f: &TuckerFactors) -> Result<DenseTensor> {
    let mut out = f.core.clone();
    for fac in &f.factors {
        out = out.mode_multiply(&fac.matrix, fac.mode)?;
    }
    if out.shape() != f.original_shape.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "reconstruction has shape {:?}, expected {:?}",
            out.shape(),
            f.original_shape
        )));
    }
    Ok(out)
}

fn leading_left_vectors(m: &Matrix, rank: usize) -> Result<Matrix> {
    let u = svd(m)?.u;
    if rank <= u.cols() {
        return Ok(u.leading_columns(rank));
    }
    // more components requested than the unfolding has columns
    let have = u.cols();
    let mut rows = Matrix::zeros(rank, u.rows());
    for j in 0..have {
        for i in 0..u.rows() {
            rows.set(j, i, u.get(i, j));
        }
    }
    let missing: Vec<usize> = (have..rank).collect();
    crate::tensor::svd::complete_rows(&mut rows, &missing);
    Ok(rows.transpose())
}

fn project_except(t: &DenseTensor, factors: &[Factor], skip: Option<usize>) -> Result<DenseTensor> {
    let mut y = t.clone();
    for (i, f) in factors.iter().enumerate() {
        if Some(i) != skip {
            y = y.mode_multiply_transposed(&f.matrix, f.mode)?;
        }
    }
    Ok(y)
}

fn fit_of(t: &DenseTensor, norm: f64, core: &DenseTensor, factors: &[Factor]) -> Result<f64> {
    if norm == 0.0 {
        return Ok(1.0);
    }
    let mut approx = core.clone();
    for f in factors {
        approx = approx.mode_multiply(&f.matrix, f.mode)?;
    }
    Ok(1.0 - t.distance(&approx)? / norm)
}

fn validate(t: &DenseTensor, modes: &[usize], ranks: &[usize], opts: &TuckerOptions) -> Result<()> {
    if modes.is_empty() {
        return Err(Error::InvalidArgument("no modes to decompose".into()));
    }
    if modes.len() != ranks.len() {
        return Err(Error::InvalidArgument(format!(
            "{} modes but {} ranks",
            modes.len(),
            ranks.len()
        )));
    }
    for (i, (&m, &r)) in modes.iter().zip(ranks).enumerate() {
        if m >= t.ndim() {
            return Err(Error::ModeOutOfRange { mode: m, ndim: t.ndim() });
        }
        if modes[..i].contains(&m) {
            return Err(Error::InvalidArgument(format!("mode {m} listed twice")));
        }
        let size = t.shape()[m];
        if r == 0 || r > size {
            return Err(Error::InvalidRank { rank: r, size });
        }
    }
    if opts.max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    if !t.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Tucker decomposition of `t` restricted to `modes`, with `ranks[k]` for `modes[k]`.
pub fn partial_tucker(
    t: &DenseTensor,
    modes: &[usize],
    ranks: &[usize],
    opts: &TuckerOptions,
) -> Result<TuckerFactors> {
    validate(t, modes, ranks, opts)?;
    let mut order: Vec<(usize, usize)> = modes.iter().copied().zip(ranks.iter().copied()).collect();
    order.sort_unstable();

    let mut factors = Vec::with_capacity(order.len());
    for &(mode, rank) in &order {
        factors.push(Factor {
            mode,
            matrix: leading_left_vectors(&t.unfold(mode)?, rank)?,
        });
    }

    let norm = t.frobenius_norm();
    let mut core = project_except(t, &factors, None)?;
    let mut history = alloc::vec![fit_of(t, norm, &core, &factors)?];

    if opts.refine {
        for _ in 0..opts.max_iters {
            for k in 0..factors.len() {
                let y = project_except(t, &factors, Some(k))?;
                let (mode, rank) = order[k];
                factors[k].matrix = leading_left_vectors(&y.unfold(mode)?, rank)?;
            }
            core = project_except(t, &factors, None)?;
            let fit = fit_of(t, norm, &core, &factors)?;
            let prev = *history.last().expect("non-empty");
            history.push(fit);
            if libm::fabs(fit - prev) < opts.tol {
                break;
            }
        }
    }

    Ok(TuckerFactors {
        core,
        factors,
        original_shape: t.shape().to_vec(),
        fit_history: history,
    })
}

/// Truncated HOSVD on the given modes.
pub fn partial_hosvd(t: &DenseTensor, modes: &[usize], ranks: &[usize]) -> Result<TuckerFactors> {
    partial_tucker(
        t,
        modes,
        ranks,
        &TuckerOptions {
            refine: false,
            ..TuckerOptions::default()
        },
    )
}

/// Tucker-2 on the channel modes of a convolution kernel.
///
/// The core keeps the `D_F × D_H × D_W` extent and becomes `… × rs × rt`;
/// factors are `S × rs` and `T × rt`.
pub fn tucker2_kernel(k: &ConvKernel, rs: usize, rt: usize, opts: &TuckerOptions) -> Result<TuckerFactors> {
    partial_tucker(
        &k.weights,
        &[INPUT_CHANNEL_MODE, OUTPUT_CHANNEL_MODE],
        &[rs, rt],
        opts,
    )
}

/// Tucker-1 on a single mode. For a 2-mode weight `W` decomposed on mode 0
/// this is the truncated SVD `W ≈ U·G` with `G = Uᵀ·W`.
pub fn tucker1_kernel(t: &DenseTensor, mode: usize, r: usize, opts: &TuckerOptions) -> Result<TuckerFactors> {
    partial_tucker(t, &[mode], &[r], opts)
}
