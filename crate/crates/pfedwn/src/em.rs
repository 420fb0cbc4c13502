//! EM estimation of the aggregation weights over selected neighbors.
//!
//! The target's data distribution is modeled as a mixture of its neighbors'
//! distributions. The E-step assigns per-sample responsibilities from the
//! current weights and per-sample losses under each neighbor model; the
//! M-step averages responsibilities into new weights and, optionally,
//! advances the component models on the responsibility-weighted risk.

use ndarray::Array2;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{gradient_weighted, per_sample_losses, ModelParams};

/// EM iteration controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    /// Iteration cap.
    pub max_iterations: usize,
    /// Stop when the L1 change of the weights falls below this.
    pub tolerance: f64,
    /// Gradient steps per component in the model M-step.
    pub inner_steps: usize,
    /// Step size for the model M-step.
    pub inner_learning_rate: f64,
    /// L2 strength for the model M-step.
    pub inner_l2: f64,
    /// When false (the default), component models stay frozen at the
    /// received neighbor models and only the weights are estimated.
    pub update_models: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iterations: 50,
            tolerance: 1e-4,
            inner_steps: 50,
            inner_learning_rate: 0.1,
            inner_l2: 0.0,
            update_models: false,
        }
    }
}

/// Mixture state after an EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    /// Aggregation weights on the probability simplex.
    pub weights: Vec<f64>,
    /// Per-sample responsibilities; each row lies on the simplex.
    pub responsibilities: Array2<f64>,
    pub component_models: Vec<ModelParams>,
    /// Iterations actually performed.
    pub iteration: usize,
}

/// Result of [`run_em`]: final weights plus the full per-iteration trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EmRun {
    pub weights: Vec<f64>,
    /// Weight vector after every iteration; row 0 is the uniform prior.
    pub trace: Vec<Vec<f64>>,
    pub state: EmState,
}

/// Posterior responsibilities: `lambda[i][m]` proportional to
/// `weights[m] * exp(-losses[i][m])`, normalized per row in log space with a
/// max shift for stability. Zero-weight components keep zero mass.
pub fn e_step(losses: &Array2<f64>, weights: &[f64]) -> Result<Array2<f64>> {
    let (n, m) = losses.dim();
    if weights.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} weights vs {} loss columns",
            weights.len(),
            m
        )));
    }
    check_simplex(weights, "weights")?;
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numerical("loss matrix contains non-finite entries".into()));
    }
    let log_weights: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut resp = Array2::zeros((n, m));
    for i in 0..n {
        let mut row = vec![f64::NEG_INFINITY; m];
        let mut max = f64::NEG_INFINITY;
        for j in 0..m {
            row[j] = log_weights[j] - losses[[i, j]];
            max = max.max(row[j]);
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::Numerical(format!("responsibility row {i} has no mass")));
        }
        let mut total = 0.0;
        for j in 0..m {
            let v = (row[j] - max).exp();
            resp[[i, j]] = v;
            total += v;
        }
        for j in 0..m {
            resp[[i, j]] /= total;
        }
    }
    Ok(resp)
}

/// Weight update: column means of the responsibilities.
pub fn m_step_weights(responsibilities: &Array2<f64>) -> Result<Vec<f64>> {
    let (n, m) = responsibilities.dim();
    if n == 0 || m == 0 {
        return Err(Error::Parameter("responsibility matrix is empty".into()));
    }
    let mut weights = vec![0.0; m];
    for row in responsibilities.rows() {
        for (w, v) in weights.iter_mut().zip(row) {
            *w += v;
        }
    }
    for w in &mut weights {
        *w /= n as f64;
    }
    Ok(weights)
}

/// Model update: advances each component by `inner_steps` gradient steps on
/// the responsibility-weighted empirical risk over the target's data. This
/// is an inexact minimization; a component with zero responsibility mass is
/// left untouched.
pub fn m_step_models(
    responsibilities: &Array2<f64>,
    target_train: &Dataset,
    component_models: &[ModelParams],
    config: &EmConfig,
) -> Result<Vec<ModelParams>> {
    let (n, m) = responsibilities.dim();
    if m != component_models.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} responsibility columns vs {} component models",
            m,
            component_models.len()
        )));
    }
    if n != target_train.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} responsibility rows vs {} samples",
            n,
            target_train.len()
        )));
    }
    let mut updated = Vec::with_capacity(m);
    for (j, model) in component_models.iter().enumerate() {
        let column: Vec<f64> = responsibilities.column(j).to_vec();
        if column.iter().all(|v| *v == 0.0) && config.inner_l2 == 0.0 {
            updated.push(model.clone());
            continue;
        }
        let mut current = model.clone();
        for step in 1..=config.inner_steps {
            let grad = gradient_weighted(&current, target_train, Some(&column), config.inner_l2)?;
            for (v, g) in current.values.iter_mut().zip(&grad) {
                *v -= config.inner_learning_rate * g;
            }
            if !current.check_finite() {
                return Err(Error::Divergence { step });
            }
        }
        updated.push(current);
    }
    Ok(updated)
}

/// Evidence lower bound of the mixture at the given state:
/// `sum_i sum_m lambda[i][m] (ln pi[m] - loss[i][m] - ln lambda[i][m])`.
pub fn elbo(losses: &Array2<f64>, weights: &[f64], responsibilities: &Array2<f64>) -> f64 {
    let (n, m) = losses.dim();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let lam = responsibilities[[i, j]];
            if lam > 0.0 {
                total += lam * (weights[j].ln() - losses[[i, j]] - lam.ln());
            }
        }
    }
    total
}

/// Alternates E and M steps from a uniform prior until the weights move less
/// than the tolerance in L1 or the iteration cap is reached.
pub fn run_em(
    target_train: &Dataset,
    neighbor_models: &[ModelParams],
    config: &EmConfig,
) -> Result<EmRun> {
    let m = neighbor_models.len();
    if m == 0 {
        return Err(Error::Parameter("EM requires at least one neighbor model".into()));
    }
    if target_train.is_empty() {
        return Err(Error::Parameter("EM requires a non-empty target dataset".into()));
    }
    let mut models: Vec<ModelParams> = neighbor_models.to_vec();
    let mut weights = vec![1.0 / m as f64; m];
    let mut trace = vec![weights.clone()];
    let mut losses = loss_matrix(target_train, &models)?;
    let mut responsibilities = Array2::zeros((target_train.len(), m));
    let mut iteration = 0;
    for t in 1..=config.max_iterations {
        iteration = t;
        responsibilities = e_step(&losses, &weights)?;
        let next = m_step_weights(&responsibilities)?;
        if config.update_models {
            models = m_step_models(&responsibilities, target_train, &models, config)?;
            losses = loss_matrix(target_train, &models)?;
        }
        let change: f64 = next.iter().zip(&weights).map(|(a, b)| (a - b).abs()).sum();
        weights = next;
        trace.push(weights.clone());
        if change < config.tolerance {
            break;
        }
    }
    Ok(EmRun {
        weights: weights.clone(),
        trace,
        state: EmState { weights, responsibilities, component_models: models, iteration },
    })
}

/// Per-sample losses of the target's data under every component model,
/// arranged samples x components.
pub fn loss_matrix(target_train: &Dataset, models: &[ModelParams]) -> Result<Array2<f64>> {
    let n = target_train.len();
    let mut losses = Array2::zeros((n, models.len()));
    for (j, model) in models.iter().enumerate() {
        let column = per_sample_losses(model, target_train)?;
        for (i, l) in column.into_iter().enumerate() {
            losses[[i, j]] = l;
        }
    }
    Ok(losses)
}

fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| *x < 0.0) {
        return Err(Error::Parameter(format!("{what} must be non-negative")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Parameter(format!("{what} must sum to 1, got {sum}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use crate::model::{local_train, Arch, ModelParams, TrainConfig};
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn e_step_hand_example() {
        let losses = array![[0.0, 2f64.ln()]];
        let resp = e_step(&losses, &[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(resp[[0, 0]], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(resp[[0, 1]], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_columns_reproduce_prior() {
        let losses = array![[1.3, 1.3], [0.2, 0.2], [5.0, 5.0]];
        let resp = e_step(&losses, &[0.7, 0.3]).unwrap();
        for row in resp.rows() {
            assert_abs_diff_eq!(row[0], 0.7, epsilon = 1e-12);
            assert_abs_diff_eq!(row[1], 0.3, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_prior_mass_stays_zero() {
        let losses = array![[9.0, 0.1], [0.5, 4.0]];
        let resp = e_step(&losses, &[1.0, 0.0]).unwrap();
        for row in resp.rows() {
            assert_eq!(row[0], 1.0);
            assert_eq!(row[1], 0.0);
        }
    }

    #[test]
    fn m_step_weight_examples() {
        let resp = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let w = m_step_weights(&resp).unwrap();
        assert_abs_diff_eq!(w[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 1.0 / 3.0, epsilon = 1e-15);

        let constant = array![[0.25, 0.75], [0.25, 0.75]];
        let w = m_step_weights(&constant).unwrap();
        assert_eq!(w, vec![0.25, 0.75]);

        assert!(m_step_weights(&Array2::<f64>::zeros((0, 2))).is_err());
    }

    fn trained_model(classes: &[usize], seed: u64, n_per: usize) -> (ModelParams, Dataset) {
        // Dataset drawn from the named classes of a 4-class mixture.
        let full = gen_synthetic(4, 4, 200, 1.0, seed).unwrap();
        let idx: Vec<usize> = (0..full.len())
            .filter(|&i| classes.contains(&full.labels[i]))
            .take(n_per * classes.len())
            .collect();
        let data = full.subset(&idx);
        let arch = Arch::Softmax { dim: 4, n_classes: 4 };
        let model = local_train(
            &ModelParams::random_init(arch, 0.01, &mut substream(seed, "init", 0)),
            &data,
            &TrainConfig::full_batch(0.3, 120),
        )
        .unwrap();
        (model, data)
    }

    #[test]
    fn run_em_single_component_is_degenerate() {
        let (model, data) = trained_model(&[0, 1], 1, 40);
        let run = run_em(&data, &[model], &EmConfig::default()).unwrap();
        assert_eq!(run.weights, vec![1.0]);
        assert_eq!(run.state.iteration, 1);
    }

    #[test]
    fn matching_component_dominates() {
        for seed in 0..5 {
            let (similar, target_data) = trained_model(&[0, 1], 100 + seed, 60);
            let (disjoint, _) = trained_model(&[2, 3], 200 + seed, 60);
            let run = run_em(&target_data, &[similar, disjoint], &EmConfig::default()).unwrap();
            assert!(
                run.weights[0] > 0.7,
                "seed {seed}: matching component got {:.3}",
                run.weights[0]
            );
        }
    }

    #[test]
    fn symmetric_components_stay_uniform() {
        let (model, data) = trained_model(&[0, 1], 7, 50);
        let run = run_em(&data, &[model.clone(), model], &EmConfig::default()).unwrap();
        assert_abs_diff_eq!(run.weights[0], 0.5, epsilon = 0.02);
        assert_abs_diff_eq!(run.weights[1], 0.5, epsilon = 0.02);
    }

    #[test]
    fn permutation_equivariance() {
        let (a, data) = trained_model(&[0, 1], 9, 50);
        let (b, _) = trained_model(&[2, 3], 10, 50);
        let (c, _) = trained_model(&[1, 2], 11, 50);
        let fwd = run_em(&data, &[a.clone(), b.clone(), c.clone()], &EmConfig::default()).unwrap();
        let rev = run_em(&data, &[c, b, a], &EmConfig::default()).unwrap();
        assert_abs_diff_eq!(fwd.weights[0], rev.weights[2], epsilon = 1e-9);
        assert_abs_diff_eq!(fwd.weights[1], rev.weights[1], epsilon = 1e-9);
        assert_abs_diff_eq!(fwd.weights[2], rev.weights[0], epsilon = 1e-9);
    }

    #[test]
    fn simplex_preserved_every_iteration() {
        let (a, data) = trained_model(&[0, 1], 12, 40);
        let (b, _) = trained_model(&[2, 3], 13, 40);
        let run = run_em(&data, &[a, b], &EmConfig::default()).unwrap();
        for pi in &run.trace {
            let sum: f64 = pi.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(pi.iter().all(|w| *w >= 0.0));
        }
        for row in run.state.responsibilities.rows() {
            let sum: f64 = row.sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_weight_component_is_absorbing() {
        let (a, data) = trained_model(&[0, 1], 14, 40);
        let (b, _) = trained_model(&[2, 3], 15, 40);
        let losses = loss_matrix(&data, &[a, b]).unwrap();
        let mut weights = vec![1.0, 0.0];
        for _ in 0..5 {
            let resp = e_step(&losses, &weights).unwrap();
            weights = m_step_weights(&resp).unwrap();
            assert_eq!(weights[1], 0.0);
        }
    }

    #[test]
    fn zero_responsibility_column_leaves_model_unchanged() {
        let (a, data) = trained_model(&[0, 1], 16, 30);
        let resp = Array2::from_shape_fn((data.len(), 2), |(_, j)| if j == 0 { 1.0 } else { 0.0 });
        let updated =
            m_step_models(&resp, &data, &[a.clone(), a.clone()], &EmConfig::default()).unwrap();
        assert_eq!(updated[1], a);
        assert_ne!(updated[0], a);
    }

    #[test]
    fn all_ones_single_component_reduces_to_local_train() {
        let (a, data) = trained_model(&[0, 1], 17, 30);
        let resp = Array2::from_elem((data.len(), 1), 1.0);
        let config = EmConfig { inner_steps: 3, inner_learning_rate: 0.2, ..Default::default() };
        let updated = m_step_models(&resp, &data, std::slice::from_ref(&a), &config).unwrap();
        let trained = local_train(&a, &data, &TrainConfig::full_batch(0.2, 3)).unwrap();
        assert_eq!(updated[0], trained);
    }

    #[test]
    fn weighted_loss_decreases_during_model_step() {
        let (a, data) = trained_model(&[0, 1], 18, 30);
        let fresh = ModelParams::random_init(a.arch, 0.5, &mut substream(18, "fresh", 0));
        let resp = Array2::from_shape_fn((data.len(), 1), |(i, _)| if i % 2 == 0 { 0.9 } else { 0.1 });
        let weighted_loss = |m: &ModelParams| -> f64 {
            let per = crate::model::per_sample_losses(m, &data).unwrap();
            per.iter().zip(resp.column(0)).map(|(l, w)| l * w).sum::<f64>() / data.len() as f64
        };
        let before = weighted_loss(&fresh);
        let config = EmConfig { inner_steps: 40, inner_learning_rate: 0.05, ..Default::default() };
        let updated = m_step_models(&resp, &data, &[fresh], &config).unwrap();
        let after = weighted_loss(&updated[0]);
        assert!(after < before, "weighted loss went {before} -> {after}");
    }

    #[test]
    fn elbo_non_decreasing_with_frozen_models() {
        let (a, data) = trained_model(&[0, 1], 19, 50);
        let (b, _) = trained_model(&[2, 3], 20, 50);
        let losses = loss_matrix(&data, &[a, b]).unwrap();
        let mut weights = vec![0.5, 0.5];
        let mut last = f64::NEG_INFINITY;
        for _ in 0..20 {
            let resp = e_step(&losses, &weights).unwrap();
            weights = m_step_weights(&resp).unwrap();
            let bound = elbo(&losses, &weights, &resp);
            assert!(bound >= last - 1e-6, "ELBO decreased from {last} to {bound}");
            last = bound;
        }
    }

    #[test]
    fn elbo_non_decreasing_with_model_updates() {
        let (a, data) = trained_model(&[0, 1], 21, 40);
        let (b, _) = trained_model(&[2, 3], 22, 40);
        let config = EmConfig {
            inner_steps: 200,
            inner_learning_rate: 0.05,
            update_models: true,
            max_iterations: 8,
            tolerance: 0.0,
            ..Default::default()
        };
        let mut models = vec![a, b];
        let mut weights = vec![0.5, 0.5];
        let mut last = f64::NEG_INFINITY;
        for _ in 0..config.max_iterations {
            let losses = loss_matrix(&data, &models).unwrap();
            let resp = e_step(&losses, &weights).unwrap();
            weights = m_step_weights(&resp).unwrap();
            models = m_step_models(&resp, &data, &models, &config).unwrap();
            let losses_after = loss_matrix(&data, &models).unwrap();
            let bound = elbo(&losses_after, &weights, &resp);
            assert!(bound >= last - 1e-6, "ELBO decreased from {last} to {bound}");
            last = bound;
        }
    }

    #[test]
    fn trace_stabilizes_within_cap() {
        let (a, data) = trained_model(&[0, 1], 23, 50);
        let (b, _) = trained_model(&[2, 3], 24, 50);
        let config = EmConfig { tolerance: 1e-3, ..Default::default() };
        let run = run_em(&data, &[a, b], &config).unwrap();
        assert!(run.state.iteration <= 50);
        let last = &run.trace[run.trace.len() - 1];
        let prev = &run.trace[run.trace.len() - 2];
        let change: f64 = last.iter().zip(prev).map(|(x, y)| (x - y).abs()).sum();
        assert!(change < 1e-3, "final L1 change {change}");
    }

    proptest! {
        #[test]
        fn m_step_output_stays_on_simplex(rows in 1usize..20, cols in 1usize..6, seed in 0u64..1000) {
            let mut rng = substream(seed, "prop", 0);
            let mut resp = Array2::zeros((rows, cols));
            for i in 0..rows {
                let mut total = 0.0;
                for j in 0..cols {
                    let v: f64 = rand::Rng::random::<f64>(&mut rng);
                    resp[[i, j]] = v;
                    total += v;
                }
                for j in 0..cols {
                    resp[[i, j]] /= total;
                }
            }
            let w = m_step_weights(&resp).unwrap();
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|x| *x >= 0.0));
        }
    }
}
