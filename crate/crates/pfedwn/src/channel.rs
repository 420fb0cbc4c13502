//! Physical-layer quantities for D2D links sharing an unlicensed band.
//!
//! Covers the single-slope path loss model, Rayleigh block fading,
//! closed-form interference moments with a log-normal moment-matched
//! approximation, and the transmission-error probability of a session, with
//! a Monte Carlo estimator serving as an independent oracle.
//!
//! The per-subchannel interference model: every session shares `|F|`
//! subchannels; a node transmits on its best-faded subchannel whenever the
//! best fading clears its threshold. The per-subchannel occupancy factor is
//! `(1/|F|) * (1 - (1 - exp(-beta^2/Gamma))^|F|)`, and each interferer's
//! contribution to a given subchannel carries that factor together with the
//! fading power gated at its threshold. The closed-form first and second
//! moments of the resulting interference feed the log-normal fit, and the
//! Monte Carlo estimator samples exactly that contribution model so that the
//! only approximation it quantifies is the log-normal shape itself.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{integrate, normal_cdf};
use crate::rng::substream;
use crate::topology::Topology;

/// Speed of light in m/s, fixed for wavelength computation.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Physical-layer constants for every session in the band.
///
/// Defaults follow the ISM-band reference configuration: 14 subchannels,
/// Rayleigh factor 2, path loss exponent 3, 1 m reference distance, 0.2 W
/// transmit power, 2.4 GHz carrier, 100 MHz bandwidth, 290 K noise
/// temperature, and fading threshold 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    /// Number of subchannels `|F|`.
    pub n_subchannels: usize,
    /// Rayleigh fading factor `Gamma`.
    pub rayleigh_factor: f64,
    /// Path loss exponent, at least 2.
    pub pathloss_exponent: f64,
    /// Reference distance `d0` in meters.
    pub ref_distance: f64,
    /// Per-node transmit power in watts (uniform default; per-interferer
    /// values live on the link budget).
    pub tx_power: f64,
    /// Carrier frequency in Hz.
    pub frequency: f64,
    /// Boltzmann constant in J/K.
    pub boltzmann: f64,
    /// Noise temperature in kelvin.
    pub noise_temp: f64,
    /// Bandwidth in Hz.
    pub bandwidth: f64,
    /// Channel fading threshold `beta` (uniform default).
    pub fading_threshold: f64,
    /// SINR threshold below which decoding fails.
    pub sinr_threshold: f64,
    /// Error-probability threshold for neighbor selection.
    pub error_threshold: f64,
    /// When set, report the error probability conditioned on the transmit
    /// event instead of the joint probability.
    pub conditional_error: bool,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            n_subchannels: 14,
            rayleigh_factor: 2.0,
            pathloss_exponent: 3.0,
            ref_distance: 1.0,
            tx_power: 0.2,
            frequency: 2.4e9,
            boltzmann: 1.38e-23,
            noise_temp: 290.0,
            bandwidth: 1e8,
            fading_threshold: 2.0,
            sinr_threshold: 10.0,
            error_threshold: 0.05,
            conditional_error: false,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("rayleigh_factor", self.rayleigh_factor),
            ("ref_distance", self.ref_distance),
            ("tx_power", self.tx_power),
            ("frequency", self.frequency),
            ("boltzmann", self.boltzmann),
            ("noise_temp", self.noise_temp),
            ("bandwidth", self.bandwidth),
            ("fading_threshold", self.fading_threshold),
            ("sinr_threshold", self.sinr_threshold),
        ];
        for (name, v) in positives {
            if !(v > 0.0) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_subchannels == 0 {
            return Err(Error::Parameter("n_subchannels must be at least 1".into()));
        }
        if self.pathloss_exponent < 2.0 {
            return Err(Error::Parameter(format!(
                "pathloss_exponent must be at least 2, got {}",
                self.pathloss_exponent
            )));
        }
        if !(self.error_threshold > 0.0 && self.error_threshold < 1.0) {
            // epsilon = 0 is permitted at the selection layer (it empties the
            // selection), but as a standing parameter it must lie in (0, 1).
            return Err(Error::Parameter(format!(
                "error_threshold must lie in (0, 1), got {}",
                self.error_threshold
            )));
        }
        Ok(())
    }

    /// Signal wavelength `c / f` in meters.
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency
    }
}

/// One interfering link seen by a session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interferer {
    /// Square root of the interferer-to-target path loss.
    pub gain_sqrt: f64,
    /// Interferer transmit power in watts.
    pub tx_power: f64,
    /// Interferer fading threshold.
    pub fading_threshold: f64,
}

/// Everything needed to evaluate one session's error probability.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkBudget {
    /// Neighbor id of the session under evaluation.
    pub session: u32,
    /// Square root of the sender-to-target path loss.
    pub path_gain_sqrt: f64,
    /// Interfering links (all other neighbors in the band).
    pub interferers: Vec<Interferer>,
    /// Thermal noise power `kappa * T * W` in watts.
    pub noise_power: f64,
}

impl LinkBudget {
    /// Builds the budget for the session between neighbor `session` and the
    /// target, with every other neighbor acting as an interferer. Uniform
    /// power and fading threshold come from the parameters.
    pub fn from_topology(topology: &Topology, session: u32, params: &ChannelParams) -> Result<Self> {
        let sender = topology
            .neighbor(session)
            .ok_or_else(|| Error::Parameter(format!("no neighbor with id {session}")))?;
        let d = topology.target_distance(sender);
        let sender_gain = path_gain_sqrt(d, params)?;
        let mut interferers = Vec::with_capacity(topology.neighbors.len().saturating_sub(1));
        for n in &topology.neighbors {
            if n.id == session {
                continue;
            }
            interferers.push(Interferer {
                gain_sqrt: path_gain_sqrt(topology.target_distance(n), params)?,
                tx_power: params.tx_power,
                fading_threshold: params.fading_threshold,
            });
        }
        Ok(LinkBudget {
            session,
            path_gain_sqrt: sender_gain,
            interferers,
            noise_power: thermal_noise(params.boltzmann, params.noise_temp, params.bandwidth)?,
        })
    }

    pub fn interferer_gains(&self) -> Vec<f64> {
        self.interferers.iter().map(|i| i.gain_sqrt).collect()
    }
}

/// Log-normal fit of the interference distribution by moment matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LognormalFit {
    /// Location parameter of `ln I`.
    pub location: f64,
    /// Scale parameter of `ln I`, non-negative.
    pub scale: f64,
    /// First moment reproduced by the fit, in watts.
    pub mean: f64,
    /// Central second moment reproduced by the fit, in watts squared.
    pub variance: f64,
}

/// First and second central moments of the aggregate interference on one
/// subchannel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterferenceMoments {
    pub mean: f64,
    pub variance: f64,
    /// Set when catastrophic cancellation drove the raw variance negative
    /// and it was clamped to zero.
    pub clamped: bool,
}

/// Thermal noise power `kappa * T * W` in watts.
pub fn thermal_noise(boltzmann: f64, noise_temp: f64, bandwidth: f64) -> Result<f64> {
    for (name, v) in [("boltzmann", boltzmann), ("noise_temp", noise_temp), ("bandwidth", bandwidth)] {
        if !(v > 0.0) {
            return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(boltzmann * noise_temp * bandwidth)
}

/// Square root of the single-slope path loss at distance `d >= d0`:
/// `(lambda / (4 pi d0)) * sqrt((d0 / d)^alpha)`.
pub fn path_gain_sqrt(d: f64, params: &ChannelParams) -> Result<f64> {
    let d0 = params.ref_distance;
    if d < d0 {
        return Err(Error::Domain(format!(
            "path loss undefined below the reference distance: d = {d} < d0 = {d0}"
        )));
    }
    let lambda = params.wavelength();
    Ok(lambda / (4.0 * std::f64::consts::PI * d0) * (d0 / d).powf(params.pathloss_exponent).sqrt())
}

/// Rayleigh fading density `(2x / Gamma) exp(-x^2 / Gamma)` for `x >= 0`.
pub fn rayleigh_pdf(x: f64, rayleigh_factor: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    2.0 * x / rayleigh_factor * (-x * x / rayleigh_factor).exp()
}

/// Tail probability `P(fading >= beta) = exp(-beta^2 / Gamma)`.
pub fn rayleigh_tail(beta: f64, rayleigh_factor: f64) -> f64 {
    (-beta * beta / rayleigh_factor).exp()
}

/// Partial second moment of the fading, `E[x^2; x >= beta]`, in closed form:
/// `(beta^2 + Gamma) exp(-beta^2 / Gamma)`.
pub fn rayleigh_tail_moment2(beta: f64, rayleigh_factor: f64) -> f64 {
    (beta * beta + rayleigh_factor) * rayleigh_tail(beta, rayleigh_factor)
}

/// Partial fourth moment of the fading, `E[x^4; x >= beta]`, in closed form:
/// `(beta^4 + 2 Gamma beta^2 + 2 Gamma^2) exp(-beta^2 / Gamma)`.
pub fn rayleigh_tail_moment4(beta: f64, rayleigh_factor: f64) -> f64 {
    let b2 = beta * beta;
    let g = rayleigh_factor;
    (b2 * b2 + 2.0 * g * b2 + 2.0 * g * g) * rayleigh_tail(beta, g)
}

/// Probability that a node occupies one given subchannel: it transmits on
/// its best of `|F|` subchannels whenever the best fading clears `beta`, so
/// each subchannel is hit with probability
/// `(1/|F|) * (1 - (1 - exp(-beta^2/Gamma))^|F|)`.
pub fn per_subchannel_transmit_prob(beta: f64, rayleigh_factor: f64, n_subchannels: usize) -> f64 {
    let tail = rayleigh_tail(beta, rayleigh_factor);
    (1.0 - (1.0 - tail).powi(n_subchannels as i32)) / n_subchannels as f64
}

/// First and second central moments of the aggregate interference on one
/// subchannel.
///
/// Contributions are independent across interferers, so the variance is the
/// sum of per-interferer variances; the raw formula subtracts the squared
/// mean and can cancel, in which case the result is clamped to zero and
/// flagged.
pub fn interference_moments(budget: &LinkBudget, params: &ChannelParams) -> InterferenceMoments {
    let g = params.rayleigh_factor;
    let nf = params.n_subchannels;
    let mut mean = 0.0;
    let mut variance = 0.0;
    for int in &budget.interferers {
        let power_gain = int.tx_power * int.gain_sqrt * int.gain_sqrt;
        let occ = per_subchannel_transmit_prob(int.fading_threshold, g, nf);
        let m1 = power_gain * rayleigh_tail_moment2(int.fading_threshold, g) * occ;
        let m2 = power_gain * power_gain * rayleigh_tail_moment4(int.fading_threshold, g) * occ * occ;
        mean += m1;
        variance += m2 - m1 * m1;
    }
    let clamped = variance < 0.0;
    InterferenceMoments { mean, variance: variance.max(0.0), clamped }
}

/// Log-normal parameters reproducing the given mean and variance:
/// `location = ln E - ln(1 + D/E^2)/2`, `scale = sqrt(ln(1 + D/E^2))`.
pub fn lognormal_params(mean: f64, variance: f64) -> Result<LognormalFit> {
    if !(mean > 0.0) {
        return Err(Error::DegenerateInterference);
    }
    if variance < 0.0 {
        return Err(Error::Parameter(format!("variance must be non-negative, got {variance}")));
    }
    let ratio = variance / (mean * mean);
    let location = mean.ln() - 0.5 * ratio.ln_1p();
    let scale = ratio.ln_1p().sqrt();
    Ok(LognormalFit { location, scale, mean, variance })
}

/// Complementary CDF of the fitted interference: `1 - Phi((ln x - mu)/sigma)`
/// for `x > 0`, with a step at `exp(mu)` when the scale is zero, and 1 for
/// non-positive `x`.
pub fn interference_ccdf(x: f64, fit: &LognormalFit) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if fit.scale == 0.0 {
        return if x.ln() < fit.location { 1.0 } else { 0.0 };
    }
    1.0 - normal_cdf((x.ln() - fit.location) / fit.scale)
}

/// Quadrature truncation point: where the Rayleigh tail falls below 1e-12.
fn fading_cutoff(rayleigh_factor: f64) -> f64 {
    (rayleigh_factor * (1e12f64).ln()).sqrt()
}

const QUADRATURE_ABS_TOL: f64 = 1e-6;

/// Transmission-error probability of the budget's session: the probability
/// that the sender transmits and the received SINR still falls below the
/// threshold,
/// `int_{beta}^inf P(fading = x) * v((P h^2 x^2)/gamma - sigma^2) dx`,
/// where `v` is the interference CCDF. With no interference the integral
/// collapses to the fading mass on which even a noise-only SINR misses the
/// threshold.
pub fn transmission_error_prob(budget: &LinkBudget, params: &ChannelParams) -> Result<f64> {
    params.validate()?;
    let g = params.rayleigh_factor;
    let beta_s = params.fading_threshold;
    let gamma_th = params.sinr_threshold;
    let signal_gain = params.tx_power * budget.path_gain_sqrt * budget.path_gain_sqrt;
    let sigma2 = budget.noise_power;
    let cutoff = fading_cutoff(g);

    // Fading level below which the SINR misses the threshold even with zero
    // interference; the CCDF argument is non-positive there and v = 1.
    let x_noise = (gamma_th * sigma2 / signal_gain).sqrt();

    let moments = interference_moments(budget, params);
    let joint = if moments.mean <= 0.0 {
        // No interference: error exactly on the fading mass in [beta, x_noise).
        if x_noise <= beta_s {
            0.0
        } else {
            rayleigh_tail(beta_s, g) - rayleigh_tail(x_noise.min(cutoff), g)
        }
    } else {
        let fit = lognormal_params(moments.mean, moments.variance)?;
        // v = 1 exactly on [beta, x_noise); quadrature on the smooth rest.
        let certain = if x_noise > beta_s {
            rayleigh_tail(beta_s, g) - rayleigh_tail(x_noise.min(cutoff), g)
        } else {
            0.0
        };
        let lo = beta_s.max(x_noise);
        let integrand = |x: f64| {
            rayleigh_pdf(x, g) * interference_ccdf(signal_gain * x * x / gamma_th - sigma2, &fit)
        };
        let tail_part = if lo < cutoff {
            integrate(&integrand, lo, cutoff, QUADRATURE_ABS_TOL)?
        } else {
            0.0
        };
        certain + tail_part
    };
    let joint = joint.clamp(0.0, rayleigh_tail(beta_s, g));
    if params.conditional_error {
        Ok(joint / rayleigh_tail(beta_s, g))
    } else {
        Ok(joint)
    }
}

/// Monte Carlo estimate of the transmission-error probability for the
/// session between neighbor `session` and the target.
///
/// Each trial draws the sender's fading once; the sender transmits when it
/// clears the threshold. Each interferer contributes its occupancy-weighted
/// fading power on the session's subchannel: a fresh fading draw, gated at
/// the interferer's threshold and scaled by the per-subchannel occupancy
/// probability. The resulting interference is summed exactly, with no
/// log-normal approximation.
pub fn mc_transmission_error<R: Rng>(
    topology: &Topology,
    params: &ChannelParams,
    session: u32,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    params.validate()?;
    if n_samples < 10_000 {
        return Err(Error::Parameter(format!(
            "n_samples must be at least 10000 for a stable estimate, got {n_samples}"
        )));
    }
    let budget = LinkBudget::from_topology(topology, session, params)?;
    let g = params.rayleigh_factor;
    let beta_s = params.fading_threshold;
    let gamma_th = params.sinr_threshold;
    let signal_gain = params.tx_power * budget.path_gain_sqrt * budget.path_gain_sqrt;
    let sigma2 = budget.noise_power;
    let occupancy: Vec<f64> = budget
        .interferers
        .iter()
        .map(|i| per_subchannel_transmit_prob(i.fading_threshold, g, params.n_subchannels))
        .collect();

    let mut errors: u64 = 0;
    let mut transmits: u64 = 0;
    for _ in 0..n_samples {
        let x_s = sample_fading(g, rng);
        if x_s < beta_s {
            continue;
        }
        transmits += 1;
        let mut interference = 0.0;
        for (int, occ) in budget.interferers.iter().zip(&occupancy) {
            let y = sample_fading(g, rng);
            if y >= int.fading_threshold {
                interference += occ * int.tx_power * int.gain_sqrt * int.gain_sqrt * y * y;
            }
        }
        let sinr = signal_gain * x_s * x_s / (sigma2 + interference);
        if sinr < gamma_th {
            errors += 1;
        }
    }
    let denom = if params.conditional_error { transmits.max(1) } else { n_samples as u64 };
    Ok(errors as f64 / denom as f64)
}

/// Draws one Rayleigh fading value with factor `Gamma` via inverse CDF.
pub fn sample_fading<R: Rng>(rayleigh_factor: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    // 1 - u is uniform on (0, 1]; ln is then finite.
    (-rayleigh_factor * (1.0 - u).ln()).sqrt()
}

/// Convenience sub-stream for fading draws.
pub fn fading_stream(master_seed: u64, index: u64) -> rand_chacha::ChaCha12Rng {
    substream(master_seed, "fading", index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_topology, PlacementMode, TopologyConfig};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn table_params() -> ChannelParams {
        ChannelParams::default()
    }

    #[test]
    fn thermal_noise_reference_value() {
        let v = thermal_noise(1.38e-23, 290.0, 1e8).unwrap();
        assert_relative_eq!(v, 4.002e-13, max_relative = 1e-12);
        let doubled = thermal_noise(1.38e-23, 290.0, 2e8).unwrap();
        assert_relative_eq!(doubled, 2.0 * v, max_relative = 1e-15);
        assert!(thermal_noise(1.38e-23, 0.0, 1e8).is_err());
    }

    #[test]
    fn path_gain_at_reference_distance() {
        let params = table_params();
        let v = path_gain_sqrt(1.0, &params).unwrap();
        // lambda / (4 pi) with lambda = c / 2.4 GHz.
        let expected = (2.998e8 / 2.4e9) / (4.0 * std::f64::consts::PI);
        assert_relative_eq!(v, expected, max_relative = 1e-14);
        assert_abs_diff_eq!(v, 9.94e-3, epsilon = 1e-5);
    }

    #[test]
    fn path_gain_scaling_law() {
        let params = table_params();
        let at_d0 = path_gain_sqrt(1.0, &params).unwrap();
        let at_2 = path_gain_sqrt(2.0, &params).unwrap();
        assert_relative_eq!(at_2, at_d0 * 2f64.powf(-1.5), max_relative = 1e-13);
    }

    #[test]
    fn path_gain_below_reference_is_domain_error() {
        assert!(matches!(path_gain_sqrt(0.5, &table_params()), Err(Error::Domain(_))));
    }

    #[test]
    fn rayleigh_pdf_normalizes() {
        for g in [1.0, 2.0, 4.0] {
            assert_eq!(rayleigh_pdf(0.0, g), 0.0);
            let total = integrate(&|x| rayleigh_pdf(x, g), 0.0, fading_cutoff(g), 1e-10).unwrap();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn rayleigh_second_moment_is_gamma() {
        let g = 2.0;
        let m2 = integrate(&|x| x * x * rayleigh_pdf(x, g), 0.0, fading_cutoff(g), 1e-10).unwrap();
        assert_abs_diff_eq!(m2, g, epsilon = 1e-6);
    }

    #[test]
    fn rayleigh_tail_examples() {
        assert_eq!(rayleigh_tail(0.0, 2.0), 1.0);
        assert_relative_eq!(rayleigh_tail(2.0, 2.0), (-2.0f64).exp(), max_relative = 1e-15);
        assert_abs_diff_eq!(rayleigh_tail(2.0, 2.0), 0.135335, epsilon = 1e-6);
    }

    #[test]
    fn rayleigh_tail_matches_quadrature() {
        for (beta, g) in [(0.5, 1.0), (2.0, 2.0), (1.0, 4.0)] {
            let quad =
                integrate(&|x| rayleigh_pdf(x, g), beta, fading_cutoff(g), 1e-11).unwrap();
            assert_abs_diff_eq!(rayleigh_tail(beta, g), quad, epsilon = 1e-8);
        }
    }

    #[test]
    fn per_subchannel_prob_examples() {
        assert_abs_diff_eq!(per_subchannel_transmit_prob(0.0, 2.0, 1), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(per_subchannel_transmit_prob(2.0, 2.0, 14), 0.06210, epsilon = 1e-5);
    }

    #[test]
    fn partial_moments_match_quadrature() {
        for g in [1.0f64, 2.0, 4.0] {
            // The fourth-moment integrand needs a deeper cutoff than the
            // error-probability integral to hit 1e-8 absolute agreement.
            let far = (g * (1e18f64).ln()).sqrt();
            for beta in [0.0, 1.0, 2.0] {
                let m2 = integrate(&|x| x * x * rayleigh_pdf(x, g), beta, far, 1e-11).unwrap();
                let m4 = integrate(&|x| x.powi(4) * rayleigh_pdf(x, g), beta, far, 1e-11).unwrap();
                assert_abs_diff_eq!(rayleigh_tail_moment2(beta, g), m2, epsilon = 1e-8);
                assert_abs_diff_eq!(rayleigh_tail_moment4(beta, g), m4, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn third_moment_integral_at_zero_threshold_is_gamma() {
        assert_abs_diff_eq!(rayleigh_tail_moment2(0.0, 2.0), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn no_interferers_give_zero_moments() {
        let budget = LinkBudget {
            session: 1,
            path_gain_sqrt: 1e-3,
            interferers: vec![],
            noise_power: 4e-13,
        };
        let m = interference_moments(&budget, &table_params());
        assert_eq!((m.mean, m.variance, m.clamped), (0.0, 0.0, false));
    }

    #[test]
    fn lognormal_hand_example() {
        let fit = lognormal_params(1.0, std::f64::consts::E - 1.0).unwrap();
        assert_abs_diff_eq!(fit.location, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.scale, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lognormal_zero_variance_is_point_mass() {
        let fit = lognormal_params(3.0, 0.0).unwrap();
        assert_eq!(fit.scale, 0.0);
        assert_abs_diff_eq!(fit.location, 3f64.ln(), epsilon = 1e-15);
        assert_eq!(interference_ccdf(2.9, &fit), 1.0);
        assert_eq!(interference_ccdf(3.1, &fit), 0.0);
    }

    #[test]
    fn lognormal_round_trips_moments() {
        for (mean, var) in [(1.0, 0.5), (3.7e-9, 1.1e-18), (2.0, 8.0)] {
            let fit = lognormal_params(mean, var).unwrap();
            let back_mean = (fit.location + 0.5 * fit.scale * fit.scale).exp();
            let back_var = ((fit.scale * fit.scale).exp_m1())
                * (2.0 * fit.location + fit.scale * fit.scale).exp();
            assert_relative_eq!(back_mean, mean, max_relative = 1e-9);
            if var > 0.0 {
                assert_relative_eq!(back_var, var, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_mean_is_error() {
        assert!(matches!(lognormal_params(0.0, 1.0), Err(Error::DegenerateInterference)));
    }

    #[test]
    fn ccdf_examples() {
        let fit = lognormal_params(1.0, std::f64::consts::E - 1.0).unwrap();
        // Median of the log-normal.
        assert_abs_diff_eq!(interference_ccdf(fit.location.exp(), &fit), 0.5, epsilon = 1e-12);
        assert_eq!(interference_ccdf(0.0, &fit), 1.0);
        assert_eq!(interference_ccdf(-1.0, &fit), 1.0);
        assert_abs_diff_eq!(interference_ccdf(1.0, &fit), 0.30854, epsilon = 1e-5);
    }

    fn ten_neighbor_topology(seed: u64) -> Topology {
        let config = TopologyConfig { mode: PlacementMode::FixedCount(10), ..Default::default() };
        build_topology(&config, seed).unwrap()
    }

    #[test]
    fn perr_zero_without_interference_and_strong_signal() {
        let params = table_params();
        let budget = LinkBudget {
            session: 1,
            path_gain_sqrt: 1e-2,
            interferers: vec![],
            noise_power: thermal_noise(1.38e-23, 290.0, 1e8).unwrap(),
        };
        // P h^2 beta^2 / gamma_th >> sigma^2 here, so no error mass remains.
        let p = transmission_error_prob(&budget, &params).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn perr_approaches_tail_as_threshold_diverges() {
        let topo = ten_neighbor_topology(3);
        let mut params = table_params();
        params.sinr_threshold = 1e12;
        let budget = LinkBudget::from_topology(&topo, 1, &params).unwrap();
        let p = transmission_error_prob(&budget, &params).unwrap();
        let tail = rayleigh_tail(params.fading_threshold, params.rayleigh_factor);
        assert_relative_eq!(p, tail, max_relative = 1e-4);
    }

    #[test]
    fn perr_monotone_in_sinr_threshold() {
        let topo = ten_neighbor_topology(5);
        let mut last = -1.0;
        for gamma_th in [1.0, 5.0, 10.0, 15.0, 40.0] {
            let mut params = table_params();
            params.sinr_threshold = gamma_th;
            let budget = LinkBudget::from_topology(&topo, 2, &params).unwrap();
            let p = transmission_error_prob(&budget, &params).unwrap();
            assert!(p >= last - 1e-9, "P_err not monotone at gamma_th = {gamma_th}");
            last = p;
        }
    }

    #[test]
    fn perr_bounded_by_tail() {
        for seed in 0..5 {
            let topo = ten_neighbor_topology(seed);
            let params = table_params();
            for n in &topo.neighbors {
                let budget = LinkBudget::from_topology(&topo, n.id, &params).unwrap();
                let p = transmission_error_prob(&budget, &params).unwrap();
                let bound = rayleigh_tail(params.fading_threshold, params.rayleigh_factor);
                assert!((0.0..=bound + 1e-12).contains(&p));
            }
        }
    }

    #[test]
    fn mc_zero_sinr_threshold_never_errors() {
        let topo = ten_neighbor_topology(1);
        let mut params = table_params();
        params.sinr_threshold = 1e-300;
        let mut rng = fading_stream(9, 0);
        let est = mc_transmission_error(&topo, &params, 1, 20_000, &mut rng).unwrap();
        assert_eq!(est, 0.0);
    }

    #[test]
    fn mc_huge_fading_threshold_never_transmits() {
        let topo = ten_neighbor_topology(1);
        let mut params = table_params();
        params.fading_threshold = 50.0;
        let mut rng = fading_stream(9, 1);
        let est = mc_transmission_error(&topo, &params, 1, 20_000, &mut rng).unwrap();
        assert_eq!(est, 0.0);
    }

    #[test]
    fn mc_requires_enough_samples() {
        let topo = ten_neighbor_topology(1);
        let mut rng = fading_stream(9, 2);
        assert!(mc_transmission_error(&topo, &table_params(), 1, 100, &mut rng).is_err());
    }

    #[test]
    fn conditional_variant_divides_by_tail() {
        let topo = ten_neighbor_topology(4);
        let mut params = table_params();
        let budget = LinkBudget::from_topology(&topo, 1, &params).unwrap();
        let joint = transmission_error_prob(&budget, &params).unwrap();
        params.conditional_error = true;
        let cond = transmission_error_prob(&budget, &params).unwrap();
        let tail = rayleigh_tail(params.fading_threshold, params.rayleigh_factor);
        assert_relative_eq!(cond, joint / tail, max_relative = 1e-12);
    }
}
