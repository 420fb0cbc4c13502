//! Empirical convergence diagnostics.
//!
//! The strongly convex contraction condition and its fitted geometric rate,
//! the running average of squared gradient norms for the non-convex bound,
//! and probe-based estimates of the smoothness constant.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{gradient, Arch, ModelParams};

/// Contraction-condition evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionCheck {
    /// `alpha^2 (2 - alpha) (1 - eta mu)^E`.
    pub value: f64,
    /// Whether the value is at most 1.
    pub holds: bool,
}

/// Evaluates the strongly convex contraction condition
/// `alpha^2 (2 - alpha) (1 - eta mu)^E <= 1`.
pub fn contraction_condition(alpha: f64, eta: f64, mu: f64, epochs: usize) -> Result<ContractionCheck> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if !(mu > 0.0) {
        return Err(Error::Parameter(format!("mu must be positive, got {mu}")));
    }
    if eta < 0.0 {
        return Err(Error::Parameter(format!("eta must be non-negative, got {eta}")));
    }
    if epochs == 0 {
        return Err(Error::Parameter("epochs must be at least 1".into()));
    }
    if eta * mu >= 1.0 {
        return Err(Error::Domain(format!(
            "contraction regime requires eta * mu < 1, got {}",
            eta * mu
        )));
    }
    let value = alpha * alpha * (2.0 - alpha) * (1.0 - eta * mu).powi(epochs as i32);
    Ok(ContractionCheck { value, holds: value <= 1.0 })
}

/// Fits a geometric decay rate to an error trace that converges to a
/// possibly nonzero floor.
///
/// The floor is the trailing-window mean when the window has flattened out
/// (relative spread below 25%), and zero while the trace is still visibly
/// decaying. The rate is the least-squares slope of `log(error - floor)`
/// over the pre-window points that sit clearly above the floor.
pub fn fit_geometric_rate(trace: &[f64]) -> Result<f64> {
    let n = trace.len();
    if n < 5 {
        return Err(Error::Fit(format!("trace too short to fit: {n} points")));
    }
    if trace.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::Fit("trace must be strictly positive and finite".into()));
    }
    let window = (n / 5).max(3);
    let tail = &trace[n - window..];
    let tail_mean = tail.iter().sum::<f64>() / window as f64;
    let tail_max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tail_min = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = (tail_max - tail_min) / tail_mean.max(f64::MIN_POSITIVE);
    let floor = if spread > 0.25 { 0.0 } else { tail_mean };

    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for (t, e) in trace.iter().enumerate().take(n - window) {
        let adjusted = e - floor;
        if adjusted > (0.05 * floor).max(1e-300) {
            ts.push(t as f64);
            ys.push(adjusted.ln());
        }
    }
    if ts.len() < 3 {
        return Err(Error::Fit(format!(
            "only {} usable points above the floor {floor:.3e}",
            ts.len()
        )));
    }
    let slope = least_squares_slope(&ts, &ys);
    Ok(slope.exp())
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Running averages `(1/T) sum_{t<=T} g_t` of a squared-gradient-norm trace.
pub fn gradient_norm_average(grad_norm_sq: &[f64]) -> Result<Vec<f64>> {
    if grad_norm_sq.is_empty() {
        return Err(Error::Parameter("gradient-norm trace is empty".into()));
    }
    let mut out = Vec::with_capacity(grad_norm_sq.len());
    let mut total = 0.0;
    for (t, g) in grad_norm_sq.iter().enumerate() {
        total += g;
        out.push(total / (t + 1) as f64);
    }
    Ok(out)
}

/// Estimates a Lipschitz constant of the given gradient map as the largest
/// observed ratio `||grad(x) - grad(y)|| / ||x - y||` over random probe
/// pairs drawn sequentially from the generator. The estimate is a running
/// maximum, so for a fixed seed it is non-decreasing in `n_probes`.
pub fn estimate_smoothness_fn<F, R>(grad_fn: F, dim: usize, n_probes: usize, rng: &mut R) -> Result<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
    R: Rng,
{
    if n_probes < 10 {
        return Err(Error::Parameter(format!("need at least 10 probes, got {n_probes}")));
    }
    // Probe pairs at a few separations: global curvature and near-local.
    let scales = [1.0, 0.1, 0.01];
    let mut best: f64 = 0.0;
    for probe in 0..n_probes {
        let scale = scales[probe % scales.len()];
        let x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(rng);
                v + scale * z
            })
            .collect();
        let gx = grad_fn(&x);
        let gy = grad_fn(&y);
        let num: f64 = gx.iter().zip(&gy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if den > 0.0 {
            best = best.max(num / den);
        }
    }
    Ok(best)
}

/// Smoothness estimate for a model loss on a dataset.
pub fn estimate_smoothness<R: Rng>(
    arch: Arch,
    data: &Dataset,
    l2: f64,
    n_probes: usize,
    rng: &mut R,
) -> Result<f64> {
    let dim = arch.param_count();
    let grad_fn = |values: &[f64]| -> Vec<f64> {
        let params = ModelParams { arch, values: values.to_vec() };
        gradient(&params, data, l2).expect("probe gradient")
    };
    estimate_smoothness_fn(grad_fn, dim, n_probes, rng)
}

/// Diagnostics block appended to run summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ConvergenceDiagnostics {
    /// Contraction condition value, when the run is in the strongly convex
    /// regime (positive L2).
    pub condition_value: Option<f64>,
    pub condition_holds: Option<bool>,
    /// Theoretical contraction factor (equals the condition value).
    pub gamma: Option<f64>,
    /// Fitted geometric rate of the error trace, when available.
    pub gamma_hat: Option<f64>,
    /// Probe-based smoothness estimate.
    pub l_estimate: Option<f64>,
    /// Largest observed gradient norm (square root of the trace maximum).
    pub g_estimate: Option<f64>,
    /// Largest observed squared neighbor-target model distance.
    pub c_estimate: Option<f64>,
    /// Final running average of the squared gradient norm.
    pub grad_norm_running_average: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn condition_examples() {
        let c = contraction_condition(1.0, 1.0, 0.1, 1).unwrap();
        assert_abs_diff_eq!(c.value, 0.9, epsilon = 1e-15);
        assert!(c.holds);

        let boundary = contraction_condition(1.0, 0.0, 0.5, 3).unwrap();
        assert_eq!(boundary.value, 1.0);
        assert!(boundary.holds);

        let zero = contraction_condition(0.0, 0.5, 0.5, 2).unwrap();
        assert_eq!(zero.value, 0.0);
        assert!(zero.holds);
    }

    #[test]
    fn condition_regime_error() {
        assert!(matches!(contraction_condition(0.5, 10.0, 0.2, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn fits_exact_geometric_trace() {
        let trace: Vec<f64> = (0..20).map(|t| 0.5f64.powi(t)).collect();
        let rate = fit_geometric_rate(&trace).unwrap();
        assert_abs_diff_eq!(rate, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn fits_geometric_trace_with_floor() {
        let trace: Vec<f64> = (0..60).map(|t| 0.8f64.powi(t) + 0.01).collect();
        let rate = fit_geometric_rate(&trace).unwrap();
        assert!((0.78..=0.82).contains(&rate), "fitted {rate}");
    }

    #[test]
    fn constant_trace_is_fit_error() {
        assert!(matches!(fit_geometric_rate(&[1.0; 20]), Err(Error::Fit(_))));
    }

    #[test]
    fn short_or_nonpositive_traces_are_errors() {
        assert!(fit_geometric_rate(&[1.0, 0.5, 0.25]).is_err());
        assert!(fit_geometric_rate(&[1.0, 0.5, 0.0, 0.25, 0.1]).is_err());
    }

    #[test]
    fn running_average_examples() {
        let avg = gradient_norm_average(&[3.0; 7]).unwrap();
        assert!(avg.iter().all(|v| (v - 3.0).abs() < 1e-15));

        let harmonic: Vec<f64> = (1..=100).map(|t| 1.0 / t as f64).collect();
        let avg = gradient_norm_average(&harmonic).unwrap();
        // Running mean of 1/t behaves like ln(T)/T: strictly decreasing.
        for w in avg.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert_abs_diff_eq!(avg[99], harmonic.iter().sum::<f64>() / 100.0, epsilon = 1e-15);

        assert!(gradient_norm_average(&[]).is_err());
    }

    #[test]
    fn quadratic_smoothness_is_one() {
        // grad of ||x||^2 / 2 is the identity.
        let mut rng = substream(1, "probe", 0);
        let l = estimate_smoothness_fn(|x| x.to_vec(), 6, 30, &mut rng).unwrap();
        assert_abs_diff_eq!(l, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn regularizer_lower_bounds_model_smoothness() {
        let data = gen_synthetic(3, 4, 30, 1.0, 2).unwrap();
        let arch = Arch::Softmax { dim: 4, n_classes: 3 };
        let mut rng = substream(2, "probe", 0);
        let l = estimate_smoothness(arch, &data, 0.1, 20, &mut rng).unwrap();
        assert!(l >= 0.1, "estimate {l} below the regularizer curvature");
    }

    #[test]
    fn smoothness_estimate_monotone_in_probe_count() {
        let run = |n: usize| {
            let mut rng = substream(3, "probe", 0);
            estimate_smoothness_fn(|x| x.iter().map(|v| v.powi(3)).collect(), 3, n, &mut rng).unwrap()
        };
        assert!(run(10) <= run(40));
        assert!(run(40) <= run(200));
    }

    #[test]
    fn too_few_probes_is_error() {
        let mut rng = substream(4, "probe", 0);
        assert!(estimate_smoothness_fn(|x| x.to_vec(), 3, 5, &mut rng).is_err());
    }
}
