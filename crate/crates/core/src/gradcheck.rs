//! Finite-difference and enumeration checks of the learning rules.
//!
//! Relative errors are `|a − b| / max(|a|, |b|, REL_FLOOR)`.

use std::fmt;

use crate::decoder::{DecoderInput, DecoderKind, DecoderModel, Likelihood};
use crate::encoder::{readout_eligibility, EligibilitySet, EncoderArchitecture, EncoderNetwork, FilterParams};
use crate::error::Result;
use crate::mathcore::Rng;
use crate::spikes::{Reference, SpikeTrain};
use crate::trainer::{
    enumerate_expected_loss, episodic_gradient_estimate, for_each_readout, score_sequence, Sample, VdibModel,
};

pub const REL_FLOOR: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-5;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Readout eligibility as a function of `(syn, refractory, u, y)`.
pub type EligibilityFormula = fn(&[f64], &[f64], &[f64], &[u8]) -> EligibilitySet;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
    pub instances: usize,
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: max error {:.3e} (tolerance {:.1e}, {} instances)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_error,
            self.tolerance,
            self.instances
        )
    }
}

fn report(name: impl Into<String>, max_error: f64, tolerance: f64, instances: usize) -> CheckReport {
    CheckReport {
        name: name.into(),
        passed: max_error.is_finite() && max_error <= tolerance,
        max_error,
        tolerance,
        instances,
    }
}

fn random_train(units: usize, steps: usize, p: f64, rng: &mut Rng) -> SpikeTrain {
    let mut x = SpikeTrain::zeros(units, steps);
    for t in 0..steps {
        for u in 0..units {
            x.set(u, t, rng.uniform() < p);
        }
    }
    x
}

/// Readout-only encoder with parameters uniform in `±scale`.
pub fn random_readout_encoder(n_in: usize, n_y: usize, filter: FilterParams, scale: f64, rng: &mut Rng) -> Result<EncoderNetwork> {
    let arch = EncoderArchitecture::readout_only(n_in, n_y, filter);
    let mut net = EncoderNetwork::new(&arch, rng)?;
    let p: Vec<f64> = net.readout_params().iter().map(|_| rng.uniform_range(-scale, scale)).collect();
    net.set_readout_params(&p)?;
    Ok(net)
}

fn random_filter(rng: &mut Rng) -> FilterParams {
    let tau_e = 2 + rng.below(4);
    FilterParams {
        tau_mem: rng.uniform_range(5.0, 20.0),
        tau_syn: rng.uniform_range(1.0, 4.0),
        tau_ref: rng.uniform_range(2.0, 10.0),
        tau_e,
        num_kernels: 1 + rng.below(tau_e.min(3)),
    }
}

/// Compares the readout eligibility at the last step of a random clamped
/// sequence with centered finite differences of that step's log-likelihood,
/// for synaptic, feedback and bias parameters.
pub fn readout_gradcheck(instances: usize, seed: u64, formula: EligibilityFormula) -> Result<CheckReport> {
    let mut rng = Rng::new(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n_in = 1 + rng.below(4);
        let n_y = 1 + rng.below(3);
        let steps = 2 + rng.below(8);
        let mut net = random_readout_encoder(n_in, n_y, random_filter(&mut rng), 1.0, &mut rng)?;
        let x = random_train(n_in, steps, 0.5, &mut rng);
        let y = random_train(n_y, steps, 0.4, &mut rng);
        let last_step_logprob = |net: &mut EncoderNetwork| -> Result<(f64, EligibilitySet)> {
            net.reset();
            let mut out = None;
            for t in 0..steps {
                out = Some(net.step_clamped(x.column(t), y.column(t))?);
            }
            let out = out.expect("steps >= 2");
            let e = &out.eligibilities[0];
            let analytic = formula(&e.syn, &e.refractory, &out.readout_potential, &out.y);
            Ok((out.logprobs.iter().sum(), analytic))
        };
        let (_, analytic) = last_step_logprob(&mut net)?;
        let analytic = analytic.flat();
        let base = net.readout_params();
        for (k, &a) in analytic.iter().enumerate() {
            let mut plus = base.clone();
            plus[k] += FD_STEP;
            net.set_readout_params(&plus)?;
            let (lp_plus, _) = last_step_logprob(&mut net)?;
            let mut minus = base.clone();
            minus[k] -= FD_STEP;
            net.set_readout_params(&minus)?;
            let (lp_minus, _) = last_step_logprob(&mut net)?;
            let fd = (lp_plus - lp_minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(a, fd));
        }
        net.set_readout_params(&base)?;
    }
    Ok(report("readout eligibility vs finite differences", worst, 1e-6, instances))
}

/// The eligibility used by the encoder.
pub fn default_formula() -> EligibilityFormula {
    readout_eligibility
}

/// Backpropagation vs centered finite differences for one decoder kind and likelihood.
pub fn decoder_gradcheck(kind: DecoderKind, likelihood: Likelihood, instances: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = Rng::new(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n_units = 1 + rng.below(4);
        let window = 1 + rng.below(4);
        let n_out = 2 + rng.below(4);
        let input = if rng.uniform() < 0.5 { DecoderInput::Window } else { DecoderInput::Rate };
        let mut model = DecoderModel::new(kind, likelihood, input, n_units, window, n_out, &mut rng)?;
        let params: Vec<f64> = model.flat_params().iter().map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        model.set_flat_params(&params)?;
        let features: Vec<f64> = (0..model.n_in()).map(|_| rng.uniform_range(-1.0, 2.0)).collect();
        let r: Vec<f64> = match likelihood {
            Likelihood::Categorical => {
                let mut v = vec![0.0; n_out];
                v[rng.below(n_out)] = 1.0;
                v
            }
            Likelihood::BernoulliPixel => (0..n_out).map(|_| rng.uniform()).collect(),
            Likelihood::GaussianUnit => (0..n_out).map(|_| rng.uniform_range(-2.0, 2.0)).collect(),
        };
        let (grads, _) = model.backprop(&features, &r)?;
        let analytic = grads.flat();
        let loss_at = |m: &DecoderModel| -> Result<f64> {
            let o = m.forward(&features)?;
            crate::decoder::logloss(&o, &r, likelihood)
        };
        for (k, &a) in analytic.iter().enumerate() {
            let mut p = params.clone();
            p[k] += FD_STEP;
            model.set_flat_params(&p)?;
            let plus = loss_at(&model)?;
            p[k] = params[k] - FD_STEP;
            model.set_flat_params(&p)?;
            let minus = loss_at(&model)?;
            worst = worst.max(relative_error(a, (plus - minus) / (2.0 * FD_STEP)));
        }
        model.set_flat_params(&params)?;
    }
    let name = format!("decoder {kind:?}/{likelihood:?} backprop vs finite differences");
    Ok(report(name, worst, 1e-6, instances))
}

/// Tiny instance for the enumeration oracles: `N_Y · T ≤ 12`.
pub fn tiny_instance(rng: &mut Rng) -> Result<(VdibModel, Sample)> {
    let n_in = 1 + rng.below(3);
    let n_y = 1 + rng.below(2);
    let steps = 2 + rng.below(if n_y == 1 { 7 } else { 3 });
    let n_r = 2 + rng.below(3);
    let filter = random_filter(rng);
    let tau_d = 1 + rng.below(3);
    let encoder = random_readout_encoder(n_in, n_y, filter, 1.0, rng)?;
    let mut decoder = DecoderModel::new(
        DecoderKind::LinearSoftmax,
        Likelihood::Categorical,
        DecoderInput::Window,
        n_y,
        tau_d,
        n_r,
        rng,
    )?;
    let d: Vec<f64> = decoder.flat_params().iter().map(|_| rng.uniform_range(-1.5, 1.5)).collect();
    decoder.set_flat_params(&d)?;
    let x = random_train(n_in, steps, 0.5, rng);
    let r = (0..steps)
        .map(|_| {
            if rng.uniform() < 0.8 {
                let mut v = vec![0.0; n_r];
                v[rng.below(n_r)] = 1.0;
                Some(v)
            } else {
                None
            }
        })
        .collect();
    Ok((
        VdibModel::new(encoder, decoder)?,
        Sample {
            x,
            r: Reference::new(n_r, r)?,
            label: None,
        },
    ))
}

/// `|Σ_y exp(log p(y‖x)) − 1|` over random enumerable instances.
pub fn normalization_check(instances: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = Rng::new(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (mut model, sample) = tiny_instance(&mut rng)?;
        let mut total = 0.0;
        let n_y = model.encoder.n_readout();
        for_each_readout(n_y, sample.x.steps(), |y| {
            total += model.encoder.sequence_log_prob(&sample.x, y)?.exp();
            Ok(())
        })?;
        worst = worst.max((total - 1.0).abs());
    }
    Ok(report("sequence distribution normalization", worst, 1e-10, instances))
}

/// Enumerated expectation of the episodic single-sample gradient estimate
/// vs a Richardson-extrapolated centered difference of the enumerated
/// expected loss, both for the readout parameters.
pub fn unbiasedness_check(instances: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = Rng::new(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (mut model, sample) = tiny_instance(&mut rng)?;
        let beta = rng.uniform_range(0.0, 2.0);
        let prior = rng.uniform_range(0.1, 0.5);
        let n_y = model.encoder.n_readout();
        let mut expected_estimate = vec![0.0; model.encoder.readout_params().len()];
        for_each_readout(n_y, sample.x.steps(), |y| {
            let p = model.encoder.sequence_log_prob(&sample.x, y)?.exp();
            let est = episodic_gradient_estimate(&mut model, &sample, y, beta, prior)?;
            for (a, g) in expected_estimate.iter_mut().zip(&est[0]) {
                *a += p * g;
            }
            Ok(())
        })?;
        let base = model.encoder.readout_params();
        let mut loss_at = |k: usize, h: f64| -> Result<f64> {
            let mut p = base.clone();
            p[k] += h;
            model.encoder.set_readout_params(&p)?;
            let (l, _) = enumerate_expected_loss(&mut model, &sample, beta, prior)?;
            Ok(l)
        };
        let h = 1e-4;
        for (k, &est) in expected_estimate.iter().enumerate() {
            let d1 = (loss_at(k, h)? - loss_at(k, -h)?) / (2.0 * h);
            let d2 = (loss_at(k, h / 2.0)? - loss_at(k, -h / 2.0)?) / h;
            let fd = (4.0 * d2 - d1) / 3.0;
            worst = worst.max((est - fd).abs());
        }
    }
    Ok(report("episodic estimator unbiasedness (absolute)", worst, 1e-8, instances))
}

fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let mut kl = 0.0;
    if p > 0.0 {
        kl += p * (p / q).ln();
    }
    if p < 1.0 {
        kl += (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
    }
    kl
}

/// `KL(p(y‖x) ‖ q(y))` by the chain rule: per-step closed-form Bernoulli
/// divergences weighted by the probability of each readout prefix.
pub fn exact_kl(net: &EncoderNetwork, x: &SpikeTrain, prior_p: f64) -> Result<f64> {
    fn descend(net: &EncoderNetwork, x: &SpikeTrain, t: usize, weight: f64, prior: f64, total: &mut f64) -> Result<()> {
        if t == x.steps() {
            return Ok(());
        }
        let n_y = net.n_readout();
        let mut first = true;
        for code in 0u32..(1u32 << n_y) {
            let y: Vec<u8> = (0..n_y).map(|i| ((code >> i) & 1) as u8).collect();
            let mut next = net.clone();
            let out = next.step_clamped(x.column(t), &y)?;
            if first {
                *total += weight * out.readout_prob.iter().map(|&s| bernoulli_kl(s, prior)).sum::<f64>();
                first = false;
            }
            let p_y: f64 = out
                .readout_prob
                .iter()
                .zip(&y)
                .map(|(&s, &yi)| if yi == 1 { s } else { 1.0 - s })
                .product();
            descend(&next, x, t + 1, weight * p_y, prior, total)?;
        }
        Ok(())
    }
    let mut start = net.clone();
    start.reset();
    let mut total = 0.0;
    descend(&start, x, 0, 1.0, prior_p, &mut total)?;
    Ok(total)
}

/// Enumerated `E[ℓ_enc]` vs [`exact_kl`]; also fails on any negative expectation.
pub fn kl_check(instances: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = Rng::new(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (mut model, sample) = tiny_instance(&mut rng)?;
        let prior = rng.uniform_range(0.05, 0.6);
        let n_y = model.encoder.n_readout();
        let mut expected = 0.0;
        for_each_readout(n_y, sample.x.steps(), |y| {
            let s = score_sequence(&mut model, &sample, y, prior)?;
            expected += s.log_prob.exp() * s.ell_enc;
            Ok(())
        })?;
        let kl = exact_kl(&model.encoder, &sample.x, prior)?;
        let err = if expected < 0.0 { f64::INFINITY } else { (expected - kl).abs() };
        worst = worst.max(err);
    }
    Ok(report("encoder loss expectation vs exact KL", worst, 1e-9, instances))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    All,
    Decoder,
    Readout,
    Oracle,
}

impl std::str::FromStr for Scope {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Scope::All),
            "decoder" => Ok(Scope::Decoder),
            "readout" => Ok(Scope::Readout),
            "oracle" => Ok(Scope::Oracle),
            other => Err(crate::Error::config(format!("unknown gradcheck scope `{other}`"))),
        }
    }
}

/// Runs the checks in `scope` with at least 20 (gradient) or 10 (oracle) instances.
pub fn run_checks(scope: Scope, seed: u64, formula: EligibilityFormula) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    if matches!(scope, Scope::All | Scope::Readout) {
        out.push(readout_gradcheck(20, seed, formula)?);
    }
    if matches!(scope, Scope::All | Scope::Decoder) {
        for kind in [DecoderKind::LinearSoftmax, DecoderKind::Mlp] {
            for lik in [Likelihood::Categorical, Likelihood::BernoulliPixel, Likelihood::GaussianUnit] {
                out.push(decoder_gradcheck(kind, lik, 20, seed)?);
            }
        }
    }
    if matches!(scope, Scope::All | Scope::Oracle) {
        out.push(normalization_check(20, seed)?);
        out.push(unbiasedness_check(10, seed)?);
        out.push(kl_check(20, seed)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wrong_sign(syn: &[f64], refr: &[f64], u: &[f64], y: &[u8]) -> EligibilitySet {
        let mut e = readout_eligibility(syn, refr, u, y);
        for p in &mut e.post {
            *p = -*p;
        }
        e
    }

    fn missing_feedback(syn: &[f64], refr: &[f64], u: &[f64], y: &[u8]) -> EligibilitySet {
        readout_eligibility(syn, &vec![0.0; refr.len()], u, y)
    }

    #[test]
    fn readout_check_passes_and_detects_perturbations() {
        assert!(readout_gradcheck(20, 1, default_formula()).unwrap().passed);
        assert!(!readout_gradcheck(5, 1, wrong_sign).unwrap().passed);
        assert!(!readout_gradcheck(20, 1, missing_feedback).unwrap().passed);
    }

    #[test]
    fn decoder_checks_pass() {
        for kind in [DecoderKind::LinearSoftmax, DecoderKind::Mlp] {
            for lik in [Likelihood::Categorical, Likelihood::BernoulliPixel, Likelihood::GaussianUnit] {
                let r = decoder_gradcheck(kind, lik, 20, 2).unwrap();
                assert!(r.passed, "{r}");
            }
        }
    }

    #[test]
    fn oracles_pass() {
        let n = normalization_check(10, 3).unwrap();
        assert!(n.passed, "{n}");
        let k = kl_check(10, 3).unwrap();
        assert!(k.passed, "{k}");
        let u = unbiasedness_check(3, 3).unwrap();
        assert!(u.passed, "{u}");
    }

    #[test]
    fn bernoulli_kl_values() {
        assert_eq!(bernoulli_kl(0.3, 0.3), 0.0);
        let expected = 0.5 * (0.5f64 / 0.2).ln() + 0.5 * (0.5f64 / 0.8).ln();
        assert!((bernoulli_kl(0.5, 0.2) - expected).abs() < 1e-15);
    }
}
