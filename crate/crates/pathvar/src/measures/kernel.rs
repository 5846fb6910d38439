//! The loop-measure mixture kernel.
//!
//! For atoms `(a_i, α_i)` the kernel is
//! `h(t,x) = Σ_i α_i (1-t)^{-n/2} exp(-|x-a_i|²/(2(1-t)))`, the bridge
//! transition weight summed over endpoints. The shared Gaussian
//! normalization constant is dropped: it cancels in the only quantity the
//! dynamics consume, the logarithmic gradient `h'/h`. Everything is
//! evaluated through recentered exponents, so a far-away state degrades into
//! a tiny-but-finite `h` rather than a 0/0 drift; a hard failure is raised
//! only when every exponent is below -700, where even the recentered mixture
//! carries no usable information.

use super::{LoopAtom, MeasureError};

/// Kernel value, gradient in `x`, and the drift ratio `h'/h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopKernel {
    pub value: f64,
    pub log_value: f64,
    pub gradient: Vec<f64>,
    /// `gradient / value`, computed without forming either side.
    pub drift: Vec<f64>,
}

/// Evaluates the mixture kernel at `(t, x)` with `t < 1`.
pub fn loop_kernel(t: f64, x: &[f64], atoms: &[LoopAtom]) -> Result<LoopKernel, MeasureError> {
    assert!(t < 1.0, "the loop kernel lives on [0,1)");
    assert!(!atoms.is_empty());
    let n = x.len();
    let tau = 1.0 - t;
    let mut exponents = Vec::with_capacity(atoms.len());
    let mut shift = f64::NEG_INFINITY;
    for atom in atoms {
        debug_assert_eq!(atom.point.len(), n);
        let mut dist_sq = 0.0;
        for (xc, ac) in x.iter().zip(&atom.point) {
            dist_sq += (xc - ac) * (xc - ac);
        }
        let l = atom.weight.ln() - 0.5 * n as f64 * tau.ln() - dist_sq / (2.0 * tau);
        shift = shift.max(l);
        exponents.push(l);
    }
    if shift < -700.0 {
        return Err(MeasureError::KernelUnderflow { t });
    }
    let mut total = 0.0;
    let mut grad_shifted = vec![0.0; n];
    for (atom, l) in atoms.iter().zip(&exponents) {
        let w = (l - shift).exp();
        total += w;
        for (c, gc) in grad_shifted.iter_mut().enumerate() {
            *gc += w * (atom.point[c] - x[c]) / tau;
        }
    }
    let scale = shift.exp();
    Ok(LoopKernel {
        value: scale * total,
        log_value: shift + total.ln(),
        gradient: grad_shifted.iter().map(|g| g * scale).collect(),
        drift: grad_shifted.iter().map(|g| g / total).collect(),
    })
}
