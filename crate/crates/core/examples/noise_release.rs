//! Releasing a count with smooth Laplace and General Cauchy noise at the same
//! sensitivity, and with global-sensitivity Laplace on a single relation.
//!
//! ```text
//! cargo run --example noise_release
//! ```

use joinsens::dprelease::{release_general_cauchy, release_global, release_smooth_laplace};
use joinsens::smoothbounds::{smooth_max, Method, SensitivityReport, SmoothingParams};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn report(f: impl Fn(usize) -> f64 + Sync, params: SmoothingParams) -> joinsens::Result<SensitivityReport> {
    let s = smooth_max(f, params.beta, 1)?;
    Ok(SensitivityReport {
        method: Method::Rs,
        value: s.value,
        k_star: s.k_star,
        params,
        diagnostics: Default::default(),
    })
}

fn main() -> joinsens::Result<()> {
    let (answer, epsilon, delta, gamma) = (1.0e7, 0.8, 1e-7, 4.0);
    // LS^k = 1000 + 10k
    let ls = |k: usize| 1000.0 + 10.0 * k as f64;

    let lap = report(ls, SmoothingParams::laplace(epsilon, delta)?)?;
    let cau = report(ls, SmoothingParams::general_cauchy(epsilon, gamma)?)?;
    println!("smooth bound: Laplace {:.1}, Cauchy {:.1}", lap.value, cau.value);

    let (mut dl, mut dc) = (Vec::new(), Vec::new());
    for seed in 0..1000 {
        dl.push(release_smooth_laplace(answer, &lap, epsilon, delta, seed)?.deviation());
        dc.push(release_general_cauchy(answer, &cau, epsilon, gamma, seed)?.deviation());
    }
    println!(
        "median deviation: Laplace {:.1}, General Cauchy {:.1}",
        median(dl),
        median(dc)
    );

    let single = release_global(5000.0, 1.0, epsilon, 0)?;
    println!("single-relation count 5000 released as {:.2}", single.noisy_value);
    Ok(())
}
