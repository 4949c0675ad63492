//! Expected improvement and the latent-space gradient of the posterior mean.

use statrs::function::erf::erfc;

use super::fusion::Fusion;
use super::gp::{GpState, PosteriorStats};
use crate::diff::{ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph_vae::GraphLatent;
use crate::set_encoder::DatasetEmbedding;

/// Below this standard deviation EI reduces to the plain improvement.
pub const MIN_STD: f64 = 1e-12;

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E[max(0, f - best)]` for `f ~ N(mean, variance)`, in standardized units.
pub fn expected_improvement(stats: &PosteriorStats, best: f64) -> f64 {
    let sigma = stats.std();
    let gap = stats.mean - best;
    if sigma < MIN_STD {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (gap * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

/// `∂μ/∂x^G` through the fusion MLP, with `x^D`, the support inputs and
/// `alpha` held fixed.
pub fn grad_mu_wrt_graph_latent(
    state: &GpState,
    fusion: &Fusion,
    store: &ParamStore,
    xd: &DatasetEmbedding,
    xg: &GraphLatent,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let xdv = tape.constant(Tensor::row(&xd.0));
    let xgv = tape.leaf(Tensor::row(&xg.0));
    let fused = fusion.fuse_on_tape(&mut tape, store, xdv, xgv)?;
    let point = tape.value(fused).data().to_vec();
    if point.len() != state.inputs().cols() {
        return Err(Error::Shape("fused width differs from GP inputs".into()));
    }
    let upstream = Tensor::row(&state.mean_gradient(&point));
    let out = tape.contract(fused, upstream)?;
    let grads = tape.backward(out)?;
    Ok(grads
        .wrt(xgv)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![0.0; xg.0.len()]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_boundary() {
        assert_eq!(expected_improvement(&PosteriorStats::new(0.2, 0.0), 0.5), 0.0);
        assert_eq!(expected_improvement(&PosteriorStats::new(0.7, 0.0), 0.5), 0.7 - 0.5);
    }

    #[test]
    fn at_incumbent_with_unit_sigma() {
        let ei = expected_improvement(&PosteriorStats::new(1.0, 1.0), 1.0);
        assert!((ei - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }
}
