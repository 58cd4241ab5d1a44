//! Maximum-likelihood reconstruction of pure ququarts from coincidence counts.
//!
//! Counts are modelled as independent Poisson variables with means
//! `lambda_j = I |X_j c|^2`. The intensity `I` is profiled out analytically
//! (`I* = sum k / sum |X_j c|^2`), which leaves a scale-invariant objective
//! on the unit sphere of C^4.
//!
//! The optimizer iterates the likelihood equation
//! `c <- normalize(H^-1 Gamma(c) c)` with `H = X^dagger X` and
//! `Gamma(c) = X^dagger diag(k_j / lambda_j) X`. Its fixed points are exactly
//! the stationary points of the likelihood. Each step is extrapolated
//! (accepted only if the likelihood does not drop) and falls back to a
//! projected gradient step when the fixed-point direction fails to ascend.

use nalgebra::{Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::protocol::InstrumentMatrix;
use crate::simulation::run_virtual_experiment;
use crate::states::PureQuquart;
use crate::C64;

/// Poisson log-likelihood `sum_j [k_j ln lambda_j - lambda_j]` (the
/// `ln k_j!` constant is dropped). Returns `-inf` when a setting with
/// counts has zero expected rate.
pub fn log_likelihood(x: &InstrumentMatrix, counts: &[f64], c: &PureQuquart, intensity: f64) -> f64 {
    log_likelihood_raw(x, counts, c.amplitudes(), intensity)
}

/// [`log_likelihood`] for unnormalized amplitudes.
pub fn log_likelihood_raw(x: &InstrumentMatrix, counts: &[f64], amps: &[C64; 4], intensity: f64) -> f64 {
    x.probabilities(amps)
        .into_iter()
        .zip(counts)
        .map(|(p, &k)| {
            let lambda = intensity * p;
            if k == 0.0 {
                -lambda
            } else if lambda <= 0.0 {
                f64::NEG_INFINITY
            } else {
                k * lambda.ln() - lambda
            }
        })
        .sum()
}

/// Gradient of [`log_likelihood_raw`] with respect to the real embedding
/// `(Re c1, Im c1, Re c2, Im c2, ...)` of the amplitudes.
pub fn log_likelihood_gradient(
    x: &InstrumentMatrix,
    counts: &[f64],
    amps: &[C64; 4],
    intensity: f64,
) -> [f64; 8] {
    let mut w = [C64::new(0.0, 0.0); 4];
    for (j, (z, &k)) in x.amplitudes(amps).into_iter().zip(counts).enumerate() {
        let lambda = intensity * z.norm_sqr();
        let weight = if k == 0.0 { -1.0 } else { k / lambda - 1.0 };
        let row = x.row(j);
        for n in 0..4 {
            w[n] += row[n].conj() * z * (weight * intensity);
        }
    }
    let mut g = [0.0; 8];
    for n in 0..4 {
        g[2 * n] = 2.0 * w[n].re;
        g[2 * n + 1] = 2.0 * w[n].im;
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    /// Seed for the random starting points.
    pub seed: u64,
    /// Random starts in addition to the four basis states.
    pub random_restarts: usize,
    pub max_iterations: usize,
    /// Stop when the relative log-likelihood change falls to this level.
    pub tolerance: f64,
    /// Rates are floored at `rate_floor * intensity` inside `Gamma`.
    pub rate_floor: f64,
    /// Extra starting point tried before the standard ones.
    #[serde(skip)]
    pub initial: Option<[C64; 4]>,
    /// Keep the log-likelihood after every iteration of the winning start.
    pub record_trace: bool,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            random_restarts: 4,
            max_iterations: 10_000,
            tolerance: 1e-10,
            rate_floor: 1e-30,
            initial: None,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub estimate: PureQuquart,
    /// Log-likelihood at the profiled intensity.
    pub log_likelihood: f64,
    pub intensity: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts_used: usize,
    /// False when `X^dagger X` is singular: some amplitude directions never
    /// reach the detectors and the estimate is not unique.
    pub identifiable: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trace: Vec<f64>,
}

struct Problem<'a> {
    x: &'a InstrumentMatrix,
    counts: &'a [f64],
    total: f64,
    gram_pinv: Matrix4<C64>,
    rate_floor: f64,
}

struct Run {
    c: Vector4<C64>,
    objective: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn to_vec(a: &[C64; 4]) -> Vector4<C64> {
    Vector4::new(a[0], a[1], a[2], a[3])
}

fn to_arr(v: &Vector4<C64>) -> [C64; 4] {
    [v[0], v[1], v[2], v[3]]
}

fn unit(v: Vector4<C64>) -> Option<Vector4<C64>> {
    let n = v.norm();
    (n.is_finite() && n > 1e-300).then(|| v / C64::new(n, 0.0))
}

/// Moore-Penrose inverse of a Hermitian PSD matrix, plus its rank.
fn hermitian_pinv(h: &Matrix4<C64>) -> (Matrix4<C64>, usize) {
    let eig = h.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let mut pinv = Matrix4::zeros();
    let mut rank = 0;
    for i in 0..4 {
        let ev = eig.eigenvalues[i];
        if ev > 1e-12 * max {
            rank += 1;
            let v = eig.eigenvectors.column(i);
            pinv += v * v.adjoint() * C64::new(1.0 / ev, 0.0);
        }
    }
    (pinv, rank)
}

impl Problem<'_> {
    /// Profiled objective `sum k ln p - N ln sum p`; scale invariant in `c`.
    fn objective(&self, c: &Vector4<C64>) -> f64 {
        let p = self.x.probabilities(&to_arr(c));
        let s: f64 = p.iter().sum();
        if !(s > 0.0) {
            return f64::NEG_INFINITY;
        }
        let mut f = -self.total * s.ln();
        for (pj, &k) in p.iter().zip(self.counts) {
            if k > 0.0 {
                if *pj <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                f += k * pj.ln();
            }
        }
        f
    }

    /// Full log-likelihood at the profiled intensity, from the objective.
    fn profiled_log_likelihood(&self, objective: f64) -> f64 {
        objective + self.total * self.total.ln() - self.total
    }

    /// `H^+ Gamma(c) c` and the profiled-objective gradient `d f / d c^*`.
    fn directions(&self, c: &Vector4<C64>) -> (Vector4<C64>, Vector4<C64>) {
        let z = self.x.amplitudes(&to_arr(c));
        let s: f64 = z.iter().map(|v| v.norm_sqr()).sum();
        let intensity = self.total / s;
        let mut gamma_c = Vector4::zeros();
        let mut hc = Vector4::zeros();
        for (j, (zj, &k)) in z.iter().zip(self.counts).enumerate() {
            let row = self.x.row(j);
            let lambda = (intensity * zj.norm_sqr()).max(self.rate_floor * intensity);
            let w = k / lambda;
            for n in 0..4 {
                let contrib = row[n].conj() * zj;
                gamma_c[n] += contrib * w;
                hc[n] += contrib;
            }
        }
        let fixed_point = self.gram_pinv * gamma_c;
        let grad = (gamma_c - hc) * C64::new(intensity, 0.0);
        (fixed_point, grad)
    }

    fn ascend(&self, start: Vector4<C64>, opts: &MleOptions) -> Option<Run> {
        let mut c = unit(start)?;
        let mut f = self.objective(&c);
        if f == f64::NEG_INFINITY && self.x.probabilities(&to_arr(&c)).iter().sum::<f64>() <= 0.0 {
            return None;
        }
        let mut trace = Vec::new();
        if opts.record_trace {
            trace.push(self.profiled_log_likelihood(f));
        }
        let mut accel = 1.0f64;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < opts.max_iterations {
            iterations += 1;
            let (fp, grad) = self.directions(&c);
            let mut next = None;
            if let Some(mut target) = unit(fp) {
                // align the proposal's global phase with c
                let overlap = c.dotc(&target);
                if overlap.norm() > 0.0 {
                    target *= overlap.conj() / overlap.norm();
                }
                let d = target - c;
                let mut t = accel;
                loop {
                    if let Some(cand) = unit(c + d * C64::new(t, 0.0)) {
                        let fc = self.objective(&cand);
                        if fc >= f {
                            next = Some((cand, fc));
                            accel = if t >= accel { (accel * 2.0).min(64.0) } else { t.max(1.0) };
                            break;
                        }
                    }
                    if t > 1.0 {
                        t = 1.0;
                        accel = (accel / 2.0).max(1.0);
                    } else if t > 1.0 / 1024.0 {
                        t /= 2.0;
                    } else {
                        break;
                    }
                }
            }
            if next.is_none() {
                // projected gradient step on the sphere
                let tangent = grad - c * c.dotc(&grad);
                let gnorm = tangent.norm();
                if gnorm > 0.0 && gnorm.is_finite() {
                    let mut t = 1.0 / gnorm;
                    for _ in 0..60 {
                        if let Some(cand) = unit(c + tangent * C64::new(t, 0.0)) {
                            let fc = self.objective(&cand);
                            if fc >= f {
                                next = Some((cand, fc));
                                break;
                            }
                        }
                        t *= 0.5;
                    }
                }
            }
            let Some((cand, fc)) = next else {
                // no ascent direction left at working precision
                converged = f.is_finite();
                break;
            };
            let change = fc - f;
            let scale = self.profiled_log_likelihood(fc).abs().max(1.0);
            let step = (cand - c).norm();
            c = cand;
            f = fc;
            if opts.record_trace {
                trace.push(self.profiled_log_likelihood(f));
            }
            if f.is_finite() && change.abs() <= opts.tolerance * scale && step <= 1e-8 {
                converged = true;
                break;
            }
        }
        Some(Run {
            c,
            objective: f,
            iterations,
            converged,
            trace,
        })
    }
}

/// Maximum-likelihood pure state for `counts` measured with `x`.
///
/// Runs from every starting point (an optional user guess, the four basis
/// states, then `random_restarts` seeded random states) and keeps the best.
pub fn mle_reconstruct(x: &InstrumentMatrix, counts: &[f64], opts: &MleOptions) -> Result<ReconstructionResult> {
    if counts.len() != x.rows() {
        return Err(Error::Mismatch(format!(
            "{} counts for {} protocol settings",
            counts.len(),
            x.rows()
        )));
    }
    if counts.iter().any(|&k| !(k >= 0.0 && k.is_finite())) {
        return Err(Error::domain("counts must be finite and non-negative"));
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::NoCounts);
    }
    let (gram_pinv, rank) = hermitian_pinv(&x.gram());
    let identifiable = rank == 4;
    if !identifiable {
        log::warn!("instrumental matrix has rank {rank} < 4; the estimate is not unique");
    }
    let problem = Problem {
        x,
        counts,
        total,
        gram_pinv,
        rate_floor: opts.rate_floor,
    };

    let mut starts: Vec<Vector4<C64>> = Vec::new();
    if let Some(init) = &opts.initial {
        starts.push(to_vec(init));
    }
    for n in 0..4 {
        starts.push(to_vec(PureQuquart::basis(n).amplitudes()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.random_restarts {
        let mut v = Vector4::zeros();
        for n in 0..4 {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            v[n] = C64::new(re, im);
        }
        starts.push(v);
    }

    let mut best: Option<Run> = None;
    let mut restarts_used = 0;
    for start in starts {
        let Some(run) = problem.ascend(start, opts) else {
            continue;
        };
        restarts_used += 1;
        if best.as_ref().is_none_or(|b| run.objective > b.objective) {
            best = Some(run);
        }
    }
    let best = best.ok_or(Error::NoCounts)?;
    // Unobservable components carry no information; report the
    // representative inside the observable subspace (X P = X, same likelihood).
    let c = if identifiable {
        best.c
    } else {
        problem.gram_pinv * x.gram() * best.c
    };
    let estimate = PureQuquart::normalize(to_arr(&c))?;
    let s: f64 = x.probabilities(estimate.amplitudes()).iter().sum();
    Ok(ReconstructionResult {
        estimate,
        log_likelihood: problem.profiled_log_likelihood(best.objective),
        intensity: total / s,
        iterations: best.iterations,
        converged: best.converged && identifiable,
        restarts_used,
        identifiable,
        trace: best.trace,
    })
}

/// Distribution of infidelities `1 - F` over repeated virtual experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossDistribution {
    pub samples: Vec<f64>,
    pub summary: LossSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub mean: f64,
    pub median: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    /// Share of samples above 0.005.
    pub frac_above_0_005: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl LossSummary {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = samples.len() as f64;
        let median = quantile_sorted(&sorted, 0.5);
        Self {
            mean: samples.iter().sum::<f64>() / n,
            median,
            q05: quantile_sorted(&sorted, 0.05),
            q50: median,
            q95: quantile_sorted(&sorted, 0.95),
            frac_above_0_005: samples.iter().filter(|&&v| v > 0.005).count() as f64 / n,
        }
    }
}

/// Fidelity of one simulated-then-reconstructed trial.
pub fn trial_fidelity(
    true_state: &PureQuquart,
    x: &InstrumentMatrix,
    total_events: u64,
    seed: u64,
) -> Result<f64> {
    let data = run_virtual_experiment(true_state, x, total_events, derive_seed(seed, 0))?;
    let opts = MleOptions {
        seed: derive_seed(seed, 1),
        ..MleOptions::default()
    };
    let result = mle_reconstruct(x, &data.as_f64(), &opts)?;
    Ok(result.estimate.fidelity(true_state))
}

/// Run `n_trials` independent virtual experiments and reconstructions.
///
/// Trial `t` is seeded from `(seed, t)`, so the output does not depend on
/// how trials are scheduled across threads.
pub fn loss_distribution(
    true_state: &PureQuquart,
    x: &InstrumentMatrix,
    total_events: u64,
    n_trials: usize,
    seed: u64,
) -> Result<LossDistribution> {
    if n_trials == 0 {
        return Err(Error::domain("n_trials must be >= 1"));
    }
    let samples = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            trial_fidelity(true_state, x, total_events, derive_seed(seed, t as u64))
                .map(|f| (1.0 - f).clamp(0.0, 1.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    let summary = LossSummary::from_samples(&samples);
    Ok(LossDistribution { samples, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::DispersionModel;
    use crate::protocol::{instrument_matrix, standard_protocol, Wavelengths};
    use crate::simulation::expected_rates;

    fn x_for(h1: f64, h2: f64) -> InstrumentMatrix {
        instrument_matrix(&standard_protocol(h1, h2, Wavelengths::default(), DispersionModel::QuartzSellmeier).unwrap())
            .unwrap()
    }

    fn identity_x() -> InstrumentMatrix {
        let spec = standard_protocol(0.9, 0.6, Wavelengths::default(), DispersionModel::FixedDeltaN { delta_n: 0.0 })
            .unwrap();
        instrument_matrix(&spec).unwrap()
    }

    #[test]
    fn zero_counts_likelihood() {
        let x = x_for(0.988, 0.836);
        let s = PureQuquart::from_pairs([(0.3, 0.0), (0.1, 0.2), (0.5, -0.1), (0.2, 0.6)]).unwrap();
        let rates = expected_rates(&x, &s, 50.0).unwrap();
        let ll = log_likelihood(&x, &vec![0.0; 144], &s, 50.0);
        assert!((ll + rates.iter().sum::<f64>()).abs() <= 1e-10);
    }

    #[test]
    fn impossible_counts_give_negative_infinity() {
        let x = identity_x();
        let mut k = vec![0.0; 144];
        k[3] = 2.0;
        assert_eq!(log_likelihood(&x, &k, &PureQuquart::basis(0), 10.0), f64::NEG_INFINITY);
    }

    #[test]
    fn exact_rates_are_stationary_in_intensity() {
        let x = x_for(0.988, 0.836);
        let s = PureQuquart::from_pairs([(0.3, 0.0), (0.1, 0.2), (0.5, -0.1), (0.2, 0.6)]).unwrap();
        let i0 = 1234.0;
        let k = expected_rates(&x, &s, i0).unwrap();
        let h = 1e-5 * i0;
        let d = (log_likelihood(&x, &k, &s, i0 + h) - log_likelihood(&x, &k, &s, i0 - h)) / (2.0 * h);
        // each term alone has slope k/I - 1 of order sum(k)/I
        let scale = k.iter().sum::<f64>() / i0;
        assert!(d.abs() <= 1e-6 * scale, "{d}");
    }

    #[test]
    fn noiseless_round_trip() {
        let x = x_for(0.988, 0.836);
        let s = PureQuquart::from_pairs([(0.3, 0.0), (0.1, 0.2), (0.5, -0.1), (0.2, 0.6)]).unwrap();
        let k = expected_rates(&x, &s, 1e4).unwrap();
        let r = mle_reconstruct(&x, &k, &MleOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.identifiable);
        assert_eq!(r.restarts_used, 8);
        assert!(1.0 - r.estimate.fidelity(&s) <= 1e-9, "{}", 1.0 - r.estimate.fidelity(&s));
        assert!((r.intensity - 1e4).abs() <= 1e-4 * 1e4);
    }

    #[test]
    fn rank_deficient_protocol_is_flagged() {
        let x = identity_x();
        let k = expected_rates(&x, &PureQuquart::basis(3), 100.0).unwrap();
        let r = mle_reconstruct(&x, &k, &MleOptions::default()).unwrap();
        assert!(!r.identifiable);
        assert!(!r.converged);
        assert!((r.estimate.amplitudes()[3].norm() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn error_paths() {
        let x = x_for(0.988, 0.836);
        assert!(matches!(
            mle_reconstruct(&x, &vec![0.0; 144], &MleOptions::default()),
            Err(Error::NoCounts)
        ));
        assert!(matches!(
            mle_reconstruct(&x, &vec![1.0; 143], &MleOptions::default()),
            Err(Error::Mismatch(_))
        ));
        let mut k = vec![1.0; 144];
        k[0] = -1.0;
        assert!(mle_reconstruct(&x, &k, &MleOptions::default()).is_err());
    }

    #[test]
    fn likelihood_never_decreases() {
        let x = x_for(0.836, 0.536);
        let s = PureQuquart::from_pairs([(0.6, 0.0), (0.1, -0.3), (0.2, 0.4), (-0.3, 0.2)]).unwrap();
        let data = run_virtual_experiment(&s, &x, 32_000, 5).unwrap();
        let opts = MleOptions {
            record_trace: true,
            ..MleOptions::default()
        };
        let r = mle_reconstruct(&x, &data.as_f64(), &opts).unwrap();
        assert!(r.trace.len() >= 2);
        for w in r.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "{} -> {}", w[0], w[1]);
        }
        assert_eq!(*r.trace.last().unwrap(), r.log_likelihood);
    }

    #[test]
    fn quantiles() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.0);
        assert_eq!(quantile_sorted(&v, 0.25), 1.0);
        assert!((quantile_sorted(&v, 0.95) - 3.8).abs() < 1e-12);
        let s = LossSummary::from_samples(&[0.001, 0.01, 0.002, 0.0]);
        assert_eq!(s.frac_above_0_005, 0.25);
        assert_eq!(s.median, s.q50);
    }

    #[test]
    fn loss_distribution_is_reproducible() {
        let x = x_for(0.988, 0.836);
        let s = PureQuquart::basis(3);
        let a = loss_distribution(&s, &x, 32_000, 6, 42).unwrap();
        let b = loss_distribution(&s, &x, 32_000, 6, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.samples.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(loss_distribution(&s, &x, 32_000, 0, 42).is_err());
    }
}
