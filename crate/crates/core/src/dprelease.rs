//! Noise mechanisms turning a true answer and a sensitivity into a released
//! value.
//!
//! Every draw comes from a ChaCha stream seeded by `(seed, mechanism)`, so a
//! release is reproducible from its record.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seeds;
use crate::smoothbounds::{SensitivityReport, SmoothingParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Mechanism {
    LaplaceGlobal,
    LaplaceSmooth,
    GeneralCauchy,
}

impl Mechanism {
    fn tag(self) -> u64 {
        match self {
            Mechanism::LaplaceGlobal => 1,
            Mechanism::LaplaceSmooth => 2,
            Mechanism::GeneralCauchy => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::LaplaceGlobal => "LaplaceGlobal",
            Mechanism::LaplaceSmooth => "LaplaceSmooth",
            Mechanism::GeneralCauchy => "GeneralCauchy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "laplaceglobal" | "global" => Ok(Mechanism::LaplaceGlobal),
            "laplacesmooth" | "laplace" => Ok(Mechanism::LaplaceSmooth),
            "generalcauchy" | "cauchy" => Ok(Mechanism::GeneralCauchy),
            _ => Err(Error::param(format!("unknown mechanism `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NoisyAnswer {
    /// Kept for evaluation only; never part of a published release.
    #[serde(skip)]
    pub true_answer: f64,
    pub sensitivity: f64,
    pub mechanism: Mechanism,
    pub scale: f64,
    pub noisy_value: f64,
    pub seed: u64,
}

impl NoisyAnswer {
    pub fn deviation(&self) -> f64 {
        (self.true_answer - self.noisy_value).abs()
    }
}

/// Stream used for a release with the given seed and mechanism.
pub fn noise_rng(seed: u64, mechanism: Mechanism) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[mechanism.tag()]))
}

/// Zero-mean Laplace draw with scale `b`, by inverse CDF.
pub fn laplace_noise<R: Rng + ?Sized>(b: f64, rng: &mut R) -> Result<f64> {
    if !(b >= 0.0) {
        return Err(Error::param(format!("Laplace scale must be non-negative, got {b}")));
    }
    if b == 0.0 {
        return Ok(0.0);
    }
    // u in (-1/2, 1/2), excluding the endpoints so the log stays finite
    let u: f64 = loop {
        let u = rng.random::<f64>() - 0.5;
        if u > -0.5 {
            break u;
        }
    };
    Ok(-b * u.signum() * (1.0 - 2.0 * u.abs()).ln())
}

/// Draw from the density proportional to `1 / (1 + |z|^γ)`, `γ > 1`.
///
/// Rejection from the symmetric proposal `∝ (1 + |z|)^{-γ}`, whose tail is
/// sampled exactly; the density ratio is at most `2^{γ−1}`.
pub fn general_cauchy_noise<R: Rng + ?Sized>(gamma: f64, rng: &mut R) -> Result<f64> {
    if !(gamma > 1.0) || !gamma.is_finite() {
        return Err(Error::param(format!("gamma must exceed 1, got {gamma}")));
    }
    let bound = 2f64.powf(gamma - 1.0);
    loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        let r = u.powf(-1.0 / (gamma - 1.0)) - 1.0;
        let accept = (1.0 + r).powf(gamma) / ((1.0 + r.powf(gamma)) * bound);
        if rng.random::<f64>() < accept {
            return Ok(if rng.random_bool(0.5) { r } else { -r });
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(Error::param(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

fn same_beta(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Laplace mechanism with global sensitivity `gs`.
pub fn release_global(answer: f64, gs: f64, epsilon: f64, seed: u64) -> Result<NoisyAnswer> {
    check_epsilon(epsilon)?;
    if !gs.is_finite() {
        return Err(Error::param("global sensitivity is unbounded; use a smooth mechanism"));
    }
    if gs < 0.0 {
        return Err(Error::param(format!("sensitivity must be non-negative, got {gs}")));
    }
    let scale = gs / epsilon;
    let noise = laplace_noise(scale, &mut noise_rng(seed, Mechanism::LaplaceGlobal))?;
    Ok(NoisyAnswer {
        true_answer: answer,
        sensitivity: gs,
        mechanism: Mechanism::LaplaceGlobal,
        scale,
        noisy_value: answer + noise,
        seed,
    })
}

/// Laplace noise with scale `2S/ε` for a smooth bound computed with
/// `β = ε / (2 ln(2/δ))`.
pub fn release_smooth_laplace(
    answer: f64,
    report: &SensitivityReport,
    epsilon: f64,
    delta: f64,
    seed: u64,
) -> Result<NoisyAnswer> {
    let expect = SmoothingParams::laplace(epsilon, delta)?;
    if !same_beta(report.params.beta, expect.beta) {
        return Err(Error::param(format!(
            "sensitivity was smoothed with beta {} but (epsilon {epsilon}, delta {delta}) needs {}",
            report.params.beta, expect.beta
        )));
    }
    let s = report.value;
    let scale = 2.0 * s / epsilon;
    let noise = laplace_noise(scale, &mut noise_rng(seed, Mechanism::LaplaceSmooth))?;
    Ok(NoisyAnswer {
        true_answer: answer,
        sensitivity: s,
        mechanism: Mechanism::LaplaceSmooth,
        scale,
        noisy_value: answer + noise,
        seed,
    })
}

/// General Cauchy noise with scale `2(γ+1)S/ε` for a smooth bound computed
/// with `β = ε / (2(γ+1))`.
pub fn release_general_cauchy(
    answer: f64,
    report: &SensitivityReport,
    epsilon: f64,
    gamma: f64,
    seed: u64,
) -> Result<NoisyAnswer> {
    if !(gamma > 1.0) {
        return Err(Error::param(format!("gamma must exceed 1, got {gamma}")));
    }
    let expect = SmoothingParams::general_cauchy(epsilon, gamma)?;
    if !same_beta(report.params.beta, expect.beta) {
        return Err(Error::param(format!(
            "sensitivity was smoothed with beta {} but (epsilon {epsilon}, gamma {gamma}) needs {}",
            report.params.beta, expect.beta
        )));
    }
    let s = report.value;
    let scale = 2.0 * (gamma + 1.0) * s / epsilon;
    let z = general_cauchy_noise(gamma, &mut noise_rng(seed, Mechanism::GeneralCauchy))?;
    Ok(NoisyAnswer {
        true_answer: answer,
        sensitivity: s,
        mechanism: Mechanism::GeneralCauchy,
        scale,
        noisy_value: answer + scale * z,
        seed,
    })
}
