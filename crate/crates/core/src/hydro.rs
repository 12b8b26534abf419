//! Coefficients of the macroscopic limits.
//!
//! Below `ρ_c = 6` the density diffuses with coefficient `(1/3)/(1-ρ/6)`.
//! In the ordered regime the density and the mean attitude `Λ` obey the
//! self-organised hydrodynamics whose coefficients are brace means at
//! `α(ρ)`, the largest root of `α = ρ c₁(α)`.

use crate::equilibria::{solve_c1_branches_with, CriticalDensities};
use crate::flow::Estimate;
use crate::output::fmt_g17;
use crate::so3::{haar_sample, polar_rotation};
use crate::vonmises::{Quadrature, VonMisesParams};
use crate::{Error, Mat3, Result, Rotation};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// `α'` is not computed closer than this to the birth of the branch.
pub const BIRTH_EXCLUSION: f64 = 1e-6;
/// Rows closer than this to `ρ*` are flagged.
pub const FLAG_WINDOW: f64 = 0.05;

/// Largest nonnegative root of `α = ρ c₁(α)`.
pub fn alpha_of_rho(rho: f64, quad: &Quadrature, crit: &CriticalDensities) -> Result<f64> {
    let roots = solve_c1_branches_with(rho, quad, crit)?;
    Ok(roots.last().copied().unwrap_or(0.0).max(0.0))
}

/// `dα/dρ = c₁(α)/(1 - ρ c₁'(α))` on the maximal branch.
pub fn alpha_prime(rho: f64, quad: &Quadrature, crit: &CriticalDensities) -> Result<f64> {
    if rho <= crit.rho_star + BIRTH_EXCLUSION {
        return Err(Error::InvalidArgument(format!(
            "alpha' is singular at the branch birth rho* = {}; need rho > rho* + {BIRTH_EXCLUSION:e}",
            crit.rho_star
        )));
    }
    let a = alpha_of_rho(rho, quad, crit)?;
    Ok(quad.c1(a) / (1.0 - rho * quad.c1_prime(a)))
}

/// The brace-mean coefficients, which depend on `α` only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaCoefficients {
    pub alpha: f64,
    pub c1: f64,
    pub c2_tilde: f64,
    pub c4: f64,
    #[serde(rename = "C2")]
    pub big_c2: f64,
    #[serde(rename = "C4")]
    pub big_c4: f64,
    #[serde(rename = "C5")]
    pub big_c5: f64,
    pub mu2: f64,
    /// `{(1+2cosθ) sin²θ}_α / {sin²θ}_α`.
    pub ratio: f64,
}

pub fn alpha_coefficients(alpha: f64, quad: &Quadrature) -> AlphaCoefficients {
    let r = quad.brace_rule(alpha);
    let s2 = r.mean(|t| t.sin().powi(2));
    let w = |g: fn(f64) -> f64| r.mean(|t| t.sin().powi(2) * g(t.cos()));
    let c23 = w(|c| 2.0 + 3.0 * c);
    let one_m = w(|c| 1.0 - c);
    let one_4 = w(|c| 1.0 + 4.0 * c);
    let one_2 = w(|c| 1.0 + 2.0 * c);
    AlphaCoefficients {
        alpha,
        c1: quad.c1(alpha),
        c2_tilde: 0.2 * c23 / s2,
        c4: 0.2 * one_m / s2,
        big_c2: 2.0 / 3.0 * s2,
        big_c4: 2.0 / 15.0 * one_4,
        big_c5: 2.0 / 15.0 * one_m,
        mu2: one_2 / 3.0,
        ratio: one_2 / s2,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub rho: f64,
    pub alpha: f64,
    pub alpha_prime: f64,
    pub c1: f64,
    pub c2_tilde: f64,
    pub c3_tilde: f64,
    pub c4: f64,
    #[serde(rename = "C2")]
    pub big_c2: f64,
    #[serde(rename = "C4")]
    pub big_c4: f64,
    #[serde(rename = "C5")]
    pub big_c5: f64,
    pub mu2: f64,
    pub flagged: bool,
}

/// Coefficients at `ρ > ρ*` on the maximal branch.
pub fn sohb_coefficients(rho: f64, quad: &Quadrature, crit: &CriticalDensities) -> Result<CoefficientRow> {
    if rho <= crit.rho_star {
        return Err(Error::InvalidArgument(format!(
            "no ordered equilibrium at rho = {rho} <= rho* = {}",
            crit.rho_star
        )));
    }
    let ap = alpha_prime(rho, quad, crit)?;
    let a = alpha_of_rho(rho, quad, crit)?;
    let k = alpha_coefficients(a, quad);
    let c3_tilde = 1.0 / a + rho * ap / a * (1.5 * k.c1 + 0.5 * k.ratio);
    Ok(CoefficientRow {
        rho,
        alpha: a,
        alpha_prime: ap,
        c1: k.c1,
        c2_tilde: k.c2_tilde,
        c3_tilde,
        c4: k.c4,
        big_c2: k.big_c2,
        big_c4: k.big_c4,
        big_c5: k.big_c5,
        mu2: k.mu2,
        flagged: rho < crit.rho_star + FLAG_WINDOW,
    })
}

pub fn coefficient_table(rhos: &[f64], quad: &Quadrature, crit: &CriticalDensities) -> Result<Vec<CoefficientRow>> {
    rhos.par_iter().map(|&r| sohb_coefficients(r, quad, crit)).collect()
}

/// `(1/3)/(1 - ρ/6)` for `0 ≤ ρ < 6`.
pub fn diffusion_coefficient(rho: f64) -> Result<f64> {
    if !(0.0..6.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!(
            "the diffusion limit needs 0 <= rho < 6, got {rho}"
        )));
    }
    Ok((1.0 / 3.0) / (1.0 - rho / 6.0))
}

/// `ψ(A) = -P·ΛᵀA`.
pub fn gci_psi(p: &Mat3, lambda: &Rotation, a: &Rotation) -> f64 {
    -p.dot(&(lambda.matrix().transpose() * *a.matrix()))
}

/// Haar Monte Carlo estimate of `∫ (ρ M_J - f) ψ dA` with `ψ(A) = -P·ΛᵀA`
/// and `Λ` the polar rotation of `J`; `rho` is the mass of `f`.
#[allow(clippy::too_many_arguments)]
pub fn gci_residual<F, R>(
    j: &Mat3,
    p_skew: &Mat3,
    f_spec: F,
    rho: f64,
    n_mc: usize,
    rng: &mut R,
    quad: &Quadrature,
) -> Result<Estimate>
where
    F: Fn(&Rotation) -> f64,
    R: Rng + ?Sized,
{
    if j.det() <= 0.0 {
        return Err(Error::InvalidArgument("det J must be positive".into()));
    }
    if p_skew.max_abs_diff(&p_skew.transpose().scale(-1.0)) > 1e-12 {
        return Err(Error::InvalidArgument("P must be skew-symmetric".into()));
    }
    if n_mc < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let lambda = polar_rotation(j)?;
    let mj = VonMisesParams::new(*j, quad);
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..n_mc {
        let a: Rotation = haar_sample(rng);
        let x = (rho * mj.density(&a) - f_spec(&a)) * gci_psi(p_skew, &lambda, &a);
        sum += x;
        sum2 += x * x;
    }
    let n = n_mc as f64;
    let mean = sum / n;
    let var = ((sum2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(Estimate {
        value: mean,
        std_err: (var / n).sqrt(),
    })
}

/// `M_{ΛK}` with `Λ` the polar rotation of `J`; symmetric `K` gives a
/// density whose flux satisfies the GCI constraint.
pub fn gci_test_law(j: &Mat3, k: &Mat3, quad: &Quadrature) -> Result<VonMisesParams> {
    let lambda = polar_rotation(j)?;
    Ok(VonMisesParams::new(*lambda.matrix() * *k, quad))
}

pub const COEFF_HEADER: [&str; 12] = [
    "rho",
    "alpha",
    "alpha_prime",
    "c1",
    "c2_tilde",
    "c3_tilde",
    "c4",
    "C2",
    "C4",
    "C5",
    "mu2",
    "flagged",
];

pub fn to_csv<W: Write>(rows: &[CoefficientRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(COEFF_HEADER)?;
    for r in rows {
        let mut rec: Vec<String> = [
            r.rho,
            r.alpha,
            r.alpha_prime,
            r.c1,
            r.c2_tilde,
            r.c3_tilde,
            r.c4,
            r.big_c2,
            r.big_c4,
            r.big_c5,
            r.mu2,
        ]
        .iter()
        .map(|&x| fmt_g17(x))
        .collect();
        rec.push(r.flagged.to_string());
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::critical_densities;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn quad() -> &'static Quadrature {
        static Q: OnceLock<Quadrature> = OnceLock::new();
        Q.get_or_init(Quadrature::default)
    }

    fn crit() -> &'static CriticalDensities {
        static C: OnceLock<CriticalDensities> = OnceLock::new();
        C.get_or_init(|| critical_densities(quad()))
    }

    #[test]
    fn alpha_examples() {
        let (q, c) = (quad(), crit());
        assert_eq!(alpha_of_rho(1.0, q, c).unwrap(), 0.0);
        assert!(alpha_of_rho(6.0, q, c).unwrap() > 0.0);
        let a = alpha_of_rho(100.0, q, c).unwrap();
        // α/c₁ = α + 1 + r₁ with small r₁
        assert!((a - 99.0).abs() < 0.2, "{a}");
    }

    #[test]
    fn alpha_prime_matches_fd() {
        let (q, c) = (quad(), crit());
        for rho in [5.0, 8.0, 20.0] {
            let h = 1e-4;
            let fd = (alpha_of_rho(rho + h, q, c).unwrap() - alpha_of_rho(rho - h, q, c).unwrap()) / (2.0 * h);
            let ap = alpha_prime(rho, q, c).unwrap();
            assert!(ap > 0.0);
            assert!((ap - fd).abs() < 1e-5 * fd.abs(), "{rho} {ap} {fd}");
        }
        assert!((alpha_prime(1000.0, q, c).unwrap() - 1.0).abs() < 0.01);
        assert!(alpha_prime(c.rho_star + 1e-8, q, c).is_err());
    }

    #[test]
    fn small_alpha_limits() {
        let k = alpha_coefficients(1e-6, quad());
        assert!((k.c2_tilde - 0.25).abs() < 1e-5);
        assert!((k.c4 - 0.25).abs() < 1e-5);
        // {(1+2cosθ)sin²θ}₀ = (2/π)(π/4 - π/8) = 1/4
        assert!((k.mu2 - 1.0 / 12.0).abs() < 1e-5);
    }

    #[test]
    fn large_alpha_limits() {
        let k = alpha_coefficients(50.0, quad());
        assert!((k.c2_tilde - 1.0).abs() < 0.05);
        assert!(k.c4.abs() < 0.02);
    }

    #[test]
    fn row_identities() {
        let (q, c) = (quad(), crit());
        for rho in [5.0, 7.0, 8.0, 10.0] {
            let r = sohb_coefficients(rho, q, c).unwrap();
            assert!(r.big_c2 > 0.0);
            assert!(((r.big_c4 + r.big_c5) / r.big_c2 - r.c2_tilde).abs() < 1e-12);
            assert!((r.big_c5 / r.big_c2 - r.c4).abs() < 1e-12);
            assert!(r.c3_tilde.is_finite());
            assert!((r.alpha - rho * r.c1).abs() < 1e-9);
            assert!(!r.flagged);
        }
        assert!(sohb_coefficients(3.0, q, c).is_err());
        assert!(sohb_coefficients(c.rho_star + 0.01, q, c).unwrap().flagged);
    }

    #[test]
    fn diffusion_examples() {
        assert_eq!(diffusion_coefficient(0.0).unwrap(), 1.0 / 3.0);
        assert_eq!(diffusion_coefficient(3.0).unwrap(), 2.0 / 3.0);
        assert!(diffusion_coefficient(5.9999).unwrap() > 1e3);
        assert!(diffusion_coefficient(6.0).is_err());
        assert!(diffusion_coefficient(-1.0).is_err());
    }

    #[test]
    fn gci_self_density_is_null() {
        let q = quad();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let j = Mat3::new([[3.0, 0.5, 0.0], [-0.2, 2.0, 0.1], [0.0, 0.3, 1.0]]);
        let p = Mat3::new([[0.0, 1.0, -0.5], [-1.0, 0.0, 0.2], [0.5, -0.2, 0.0]]);
        let mj = VonMisesParams::new(j, q);
        let rho = 2.0;
        let e = gci_residual(&j, &p, |a| rho * mj.density(a), rho, 1000, &mut rng, q).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(gci_residual(&j.scale(-1.0), &p, |_| 1.0, 1.0, 10, &mut rng, q).is_err());
        assert!(gci_residual(&j, &Mat3::identity(), |_| 1.0, 1.0, 10, &mut rng, q).is_err());
    }

    #[test]
    fn coefficient_csv() {
        let rows = coefficient_table(&[7.0, 8.0, 10.0], quad(), crit()).unwrap();
        let mut buf = Vec::new();
        to_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("rho,alpha,alpha_prime,c1,c2_tilde,c3_tilde,c4,C2,C4,C5,mu2,flagged\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
