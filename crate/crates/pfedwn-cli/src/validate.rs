//! Oracle validation suites behind the `validate` mode.
//!
//! Each suite checks an analytic path against an independent reference:
//! Monte Carlo for the transmission-error probability, central finite
//! differences for the gradients, and adaptive quadrature for the
//! closed-form fading moments.

use pfedwn::analysis;
use pfedwn::channel::{
    lognormal_params, mc_transmission_error, rayleigh_pdf, rayleigh_tail_moment2,
    rayleigh_tail_moment4, transmission_error_prob, ChannelParams, LinkBudget,
};
use pfedwn::data::gen_synthetic;
use pfedwn::model::{finite_diff_grad, gradient, Arch, ModelParams};
use pfedwn::numeric::integrate;
use pfedwn::rng::substream;
use pfedwn::topology::{Area, Node, Role, Topology};

/// Result of one validation suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed deviation, in the suite's own units.
    pub worst: f64,
    pub tolerance: f64,
    pub details: Vec<String>,
}

impl SuiteReport {
    pub fn summary_line(&self) -> String {
        format!(
            "{}: {} (worst {:.3e}, tolerance {:.1e})",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.worst,
            self.tolerance
        )
    }
}

/// Layout for the error-probability grid: an 18 m session link with
/// interferers at seeded uniform positions no closer than the session
/// itself.
///
/// The log-normal interference model comes from stochastic geometry and is
/// accurate when no single interferer dominates the sum; a lone interferer
/// much closer than the rest makes the true interference essentially
/// two-valued and the fit degrades. The grid therefore probes the model in
/// its comparable-range regime, where the error probabilities are still far
/// from zero.
pub fn oracle_topology(n_interferers: usize, seed: u64) -> (Topology, u32) {
    let area = Area::new(50.0, 50.0);
    let center = [25.0, 25.0];
    let session_distance = 18.0;
    let mut rng = substream(seed, "oracle-layout", 0);
    let session_pos = [center[0] + session_distance * 0.6, center[1] + session_distance * 0.8];
    let mut neighbors = vec![Node { id: 1, position: session_pos, role: Role::Neighbor }];
    while neighbors.len() < n_interferers + 1 {
        let p = [rand::Rng::random::<f64>(&mut rng) * 50.0, rand::Rng::random::<f64>(&mut rng) * 50.0];
        if pfedwn::topology::distance(p, center) >= session_distance {
            neighbors.push(Node { id: neighbors.len() as u32 + 1, position: p, role: Role::Neighbor });
        }
    }
    let topology = Topology {
        area,
        seed,
        target: Node { id: 0, position: center, role: Role::Target },
        neighbors,
    };
    (topology, 1)
}

/// Analytic transmission-error probability against the Monte Carlo
/// estimator over the SINR-threshold and interferer-count grid.
pub fn perr_suite(n_samples: usize, tolerance: f64) -> SuiteReport {
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for (layout_idx, n_interferers) in [0usize, 5, 15].into_iter().enumerate() {
        let (topology, session) = oracle_topology(n_interferers, 4000 + layout_idx as u64);
        for gamma_th in [5.0, 10.0, 15.0] {
            let params = ChannelParams { sinr_threshold: gamma_th, ..ChannelParams::default() };
            let analytic = LinkBudget::from_topology(&topology, session, &params)
                .and_then(|b| transmission_error_prob(&b, &params));
            let mut rng = substream(9000, "perr-oracle", (layout_idx * 10) as u64 + gamma_th as u64);
            let mc = mc_transmission_error(&topology, &params, session, n_samples, &mut rng);
            match (analytic, mc) {
                (Ok(a), Ok(m)) => {
                    let diff = (a - m).abs();
                    worst = worst.max(diff);
                    details.push(format!(
                        "interferers={n_interferers} gamma_th={gamma_th}: analytic={a:.4} mc={m:.4} diff={diff:.4}"
                    ));
                }
                (a, m) => {
                    details.push(format!(
                        "interferers={n_interferers} gamma_th={gamma_th}: error analytic={a:?} mc={m:?}"
                    ));
                    worst = f64::INFINITY;
                }
            }
        }
    }
    SuiteReport { name: "perr_vs_monte_carlo", passed: worst < tolerance, worst, tolerance, details }
}

/// Analytic gradients against central finite differences on random probes,
/// for both architectures.
pub fn gradient_suite(n_probes: usize, tolerance: f64) -> SuiteReport {
    let data = gen_synthetic(3, 4, 15, 1.5, 77).expect("probe data");
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for arch in [
        Arch::Softmax { dim: 4, n_classes: 3 },
        Arch::Mlp { dim: 4, hidden: 6, n_classes: 3 },
    ] {
        let mut arch_worst: f64 = 0.0;
        for probe in 0..n_probes {
            let mut rng = substream(probe as u64, "grad-oracle", 0);
            let params = ModelParams::random_init(arch, 0.8, &mut rng);
            let g = gradient(&params, &data, 1e-4).expect("gradient");
            let fd = finite_diff_grad(&params, &data, 1e-4, 1e-5).expect("finite differences");
            let err = g
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8))
                .fold(0.0, f64::max);
            arch_worst = arch_worst.max(err);
        }
        details.push(format!("{arch:?}: worst relative error {arch_worst:.3e}"));
        worst = worst.max(arch_worst);
    }
    SuiteReport { name: "gradient_vs_finite_diff", passed: worst < tolerance, worst, tolerance, details }
}

/// Closed-form fading partial moments against quadrature, plus the
/// log-normal fit's moment round trip.
pub fn moments_suite() -> SuiteReport {
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for g in [1.0f64, 2.0, 4.0] {
        let far = (g * (1e18f64).ln()).sqrt();
        for beta in [0.0, 1.0, 2.0] {
            let q2 = integrate(&|x| x * x * rayleigh_pdf(x, g), beta, far, 1e-11).expect("quadrature");
            let q4 =
                integrate(&|x| x.powi(4) * rayleigh_pdf(x, g), beta, far, 1e-11).expect("quadrature");
            let d2 = (rayleigh_tail_moment2(beta, g) - q2).abs();
            let d4 = (rayleigh_tail_moment4(beta, g) - q4).abs();
            worst = worst.max(d2).max(d4);
            details.push(format!("Gamma={g} beta={beta}: |d2|={d2:.2e} |d4|={d4:.2e}"));
        }
    }
    let closed_form_pass = worst < 1e-8;

    let mut roundtrip_worst: f64 = 0.0;
    for (mean, variance) in [(1.0, std::f64::consts::E - 1.0), (3.7e-9, 1.1e-18), (2.0, 8.0)] {
        let fit = lognormal_params(mean, variance).expect("fit");
        let back_mean = (fit.location + 0.5 * fit.scale * fit.scale).exp();
        let back_var =
            (fit.scale * fit.scale).exp_m1() * (2.0 * fit.location + fit.scale * fit.scale).exp();
        roundtrip_worst = roundtrip_worst
            .max((back_mean - mean).abs() / mean)
            .max((back_var - variance).abs() / variance);
    }
    details.push(format!("log-normal round trip worst relative error {roundtrip_worst:.2e}"));
    let passed = closed_form_pass && roundtrip_worst < 1e-9;
    SuiteReport {
        name: "moments_vs_quadrature",
        passed,
        worst: worst.max(roundtrip_worst),
        tolerance: 1e-8,
        details,
    }
}

/// Runs every suite at its reference settings.
pub fn run_all(n_mc_samples: usize) -> Vec<SuiteReport> {
    vec![
        perr_suite(n_mc_samples, 0.02),
        gradient_suite(20, 1e-4),
        moments_suite(),
    ]
}

/// Empirical check of the fitted geometric rate helper on known traces.
pub fn rate_fit_sanity() -> bool {
    let exact: Vec<f64> = (0..20).map(|t| 0.5f64.powi(t)).collect();
    let with_floor: Vec<f64> = (0..60).map(|t| 0.8f64.powi(t) + 0.01).collect();
    matches!(analysis::fit_geometric_rate(&exact), Ok(r) if (r - 0.5).abs() < 1e-6)
        && matches!(analysis::fit_geometric_rate(&with_floor), Ok(r) if (0.78..=0.82).contains(&r))
}
