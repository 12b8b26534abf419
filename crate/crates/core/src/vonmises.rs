//! Von Mises laws `M_J(A) = exp(J·A) / Z(J)` on SO(3).
//!
//! Averages against `M_D` with `D` diagonal are computed on S³: writing
//! `A = Φ(q)` turns `D·A` into `2 Σ s_k q_k²` with `s = φ(D)` diagonal. The
//! sphere is parametrised by Hopf coordinates
//! `q = (√u cos ξ₁, √u sin ξ₁, √(1-u) cos ξ₂, √(1-u) sin ξ₂)`, in which the
//! uniform measure is `du dξ₁ dξ₂ / (4π²)` and the integrand factorises for
//! each `u`. Gauss–Legendre nodes are used in `u` and the periodic
//! trapezoid rule in `ξ₁, ξ₂`.
//!
//! One-dimensional means use Gauss–Legendre in `θ` for the Rodrigues angle
//! and in `x = cos φ` for the second family.

use crate::quad::GaussLegendre;
use crate::so3::{haar_sample, phi_diag, ssvd, Matrix3, Quaternion, Rotation3};
use crate::{Error, Mat3, Result, Rotation, Ssvd};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Maximum number of rejection proposals per sample.
pub const SAMPLER_CAP: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Gauss–Legendre nodes for one-dimensional means.
    pub nodes_1d: usize,
    /// Nodes per coordinate of the S³ product rule.
    pub nodes_s3: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            nodes_1d: 128,
            nodes_s3: 48,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes_1d < 32 {
            return Err(Error::InvalidArgument(format!(
                "nodes_1d must be at least 32, got {}",
                self.nodes_1d
            )));
        }
        if self.nodes_s3 < 24 {
            return Err(Error::InvalidArgument(format!(
                "nodes_s3 must be at least 24, got {}",
                self.nodes_s3
            )));
        }
        Ok(())
    }
}

// a_ii as a combination of q_k²
const SIGNS: [[f64; 4]; 3] = [
    [1.0, 1.0, -1.0, -1.0],
    [1.0, -1.0, 1.0, -1.0],
    [1.0, -1.0, -1.0, 1.0],
];

/// Immutable node tables built from a [`QuadratureConfig`].
#[derive(Clone, Debug)]
pub struct Quadrature {
    cfg: QuadratureConfig,
    theta: GaussLegendre<f64>,
    cos_phi: GaussLegendre<f64>,
    u: GaussLegendre<f64>,
    // distinct cos² of the trapezoid nodes on [0, π) with their weights
    xi_table: Vec<(f64, f64)>,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature::new(QuadratureConfig::default()).unwrap()
    }
}

/// Quaternion-side moments under `M_D`.
#[derive(Clone, Copy, Debug)]
pub struct S3Moments {
    pub log_z: f64,
    /// `⟨q_k²⟩`.
    pub q2: [f64; 4],
    /// `⟨q_k² q_l²⟩`, filled only when requested.
    pub q4: [[f64; 4]; 4],
}

struct PairSums {
    // Σ e, Σ c² e, Σ c⁴ e, Σ c² s² e, Σ s⁴ e  (each divided by n)
    f: f64,
    g: f64,
    h_cc: f64,
    h_cs: f64,
    h_ss: f64,
}

impl Quadrature {
    pub fn new(cfg: QuadratureConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.nodes_s3;
        let xi_table = (0..n.div_ceil(2))
            .map(|k| {
                let xi = PI * (k as f64 + 0.5) / n as f64;
                let w = if 2 * k + 1 == n { 1.0 } else { 2.0 };
                (xi.cos().powi(2), w / n as f64)
            })
            .collect();
        Ok(Quadrature {
            cfg,
            theta: GaussLegendre::new(cfg.nodes_1d, 0.0, PI),
            cos_phi: GaussLegendre::new(cfg.nodes_1d, -1.0, 1.0),
            u: GaussLegendre::new(n, 0.0, 1.0),
            xi_table,
        })
    }

    pub fn config(&self) -> QuadratureConfig {
        self.cfg
    }

    /// Trapezoid sums over one Hopf angle of `exp(2r(a c² + b s²))`,
    /// shifted by `2r max(a, b)`.
    fn pair_sums(&self, r: f64, a: f64, b: f64, second: bool) -> PairSums {
        let m = a.max(b);
        let (ea, eb) = (2.0 * r * (a - m), 2.0 * r * (b - m));
        let mut out = PairSums {
            f: 0.0,
            g: 0.0,
            h_cc: 0.0,
            h_cs: 0.0,
            h_ss: 0.0,
        };
        // nodes k and n-1-k share cos²
        for &(c2, w) in &self.xi_table {
            let s2 = 1.0 - c2;
            let e = w * (ea * c2 + eb * s2).exp();
            out.f += e;
            out.g += c2 * e;
            if second {
                out.h_cc += c2 * c2 * e;
                out.h_cs += c2 * s2 * e;
                out.h_ss += s2 * s2 * e;
            }
        }
        out
    }

    /// Moments of `q_k²` under the Bingham weight `exp(2 Σ s_k q_k²)` on S³.
    pub fn s3_moments(&self, s: [f64; 4], second: bool) -> S3Moments {
        let m12 = s[0].max(s[1]);
        let m34 = s[2].max(s[3]);
        let mmax = 2.0 * m12.max(m34);
        let mut z = 0.0;
        let mut q2 = [0.0; 4];
        let mut q4 = [[0.0; 4]; 4];
        for (&u, &wu) in self.u.nodes.iter().zip(&self.u.weights) {
            let v = 1.0 - u;
            let w = wu * (2.0 * u * m12 + 2.0 * v * m34 - mmax).exp();
            if w == 0.0 {
                continue;
            }
            let p = self.pair_sums(u, s[0], s[1], second);
            let r = self.pair_sums(v, s[2], s[3], second);
            let (g1, g2) = (p.g, p.f - p.g);
            let (g3, g4) = (r.g, r.f - r.g);
            z += w * p.f * r.f;
            q2[0] += w * u * g1 * r.f;
            q2[1] += w * u * g2 * r.f;
            q2[2] += w * v * p.f * g3;
            q2[3] += w * v * p.f * g4;
            if second {
                let uu = w * u * u * r.f;
                let vv = w * v * v * p.f;
                let uv = w * u * v;
                q4[0][0] += uu * p.h_cc;
                q4[0][1] += uu * p.h_cs;
                q4[1][1] += uu * p.h_ss;
                q4[2][2] += vv * r.h_cc;
                q4[2][3] += vv * r.h_cs;
                q4[3][3] += vv * r.h_ss;
                q4[0][2] += uv * g1 * g3;
                q4[0][3] += uv * g1 * g4;
                q4[1][2] += uv * g2 * g3;
                q4[1][3] += uv * g2 * g4;
            }
        }
        for x in q2.iter_mut() {
            *x /= z;
        }
        if second {
            for i in 0..4 {
                for j in i..4 {
                    q4[i][j] /= z;
                    q4[j][i] = q4[i][j];
                }
            }
        }
        S3Moments {
            log_z: mmax + z.ln(),
            q2,
            q4,
        }
    }

    /// `log ∫ exp(D·A) dA` for `D = diag(d)`.
    pub fn log_partition(&self, d: [f64; 3]) -> f64 {
        self.s3_moments(phi_diag(d), false).log_z
    }

    /// Diagonal of `⟨A⟩_{M_D}`.
    pub fn moment1_diag(&self, d: [f64; 3]) -> [f64; 3] {
        let m = self.s3_moments(phi_diag(d), false);
        diag_from_q2(&m.q2)
    }

    /// `⟨a_ii a_jj⟩_{M_D}`.
    pub fn moment2_diag(&self, d: [f64; 3]) -> [[f64; 3]; 3] {
        let m = self.s3_moments(phi_diag(d), true);
        diag2_from_q4(&m.q4)
    }

    /// First and second diagonal moments from one pass.
    pub fn moments_diag(&self, d: [f64; 3]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
        let m = self.s3_moments(phi_diag(d), true);
        (m.log_z, diag_from_q2(&m.q2), diag2_from_q4(&m.q4))
    }

    /// `⟨A⟩_{M_J}` for a general flux.
    pub fn moment_matrix(&self, j: &Mat3) -> Mat3 {
        let s = ssvd(j);
        let m = self.moment1_diag(s.d.d);
        *s.p.matrix() * Matrix3::from_diag(m) * *s.q.matrix()
    }

    /// Weighted `θ` rule for `{·}_α`, normalised to unit mass.
    pub fn brace_rule(&self, alpha: f64) -> WeightedRule {
        let shift = alpha.abs();
        let mut nodes = Vec::with_capacity(self.theta.nodes.len());
        let mut weights = Vec::with_capacity(self.theta.nodes.len());
        for (&t, &w) in self.theta.nodes.iter().zip(&self.theta.weights) {
            let s = (0.5 * t).sin();
            nodes.push(t);
            weights.push(w * s * s * (alpha * t.cos() - shift).exp());
        }
        WeightedRule::normalised(nodes, weights)
    }

    /// Weighted rule in `x = cos φ` for `[·]_α`, normalised to unit mass.
    pub fn bracket_rule(&self, alpha: f64) -> WeightedRule {
        let half = 0.5 * alpha;
        let shift = half.abs();
        let nodes = self.cos_phi.nodes.clone();
        let weights = nodes
            .iter()
            .zip(&self.cos_phi.weights)
            .map(|(&x, &w)| w * (half * x - shift).exp())
            .collect();
        WeightedRule::normalised(nodes, weights)
    }

    /// `{h}_α`: mean of `h(θ)` against `sin²(θ/2) e^{α cos θ}` on `[0, π]`.
    pub fn brace_mean<F: Fn(f64) -> f64>(&self, h: F, alpha: f64) -> f64 {
        self.brace_rule(alpha).mean(h)
    }

    /// `[h]_α`: mean of `h(φ)` against `sin φ e^{(α/2) cos φ}` on `[0, π]`.
    pub fn bracket_mean<F: Fn(f64) -> f64>(&self, h: F, alpha: f64) -> f64 {
        self.bracket_rule(alpha).mean(|x| h(x.clamp(-1.0, 1.0).acos()))
    }

    pub fn c1(&self, alpha: f64) -> f64 {
        self.brace_rule(alpha).mean(|t| 2.0 * t.cos() + 1.0) / 3.0
    }

    pub fn c1_prime(&self, alpha: f64) -> f64 {
        2.0 / 3.0 * self.brace_rule(alpha).variance(|t| t.cos())
    }

    pub fn c2(&self, alpha: f64) -> f64 {
        self.bracket_rule(alpha).mean(|x| x)
    }

    pub fn c2_prime(&self, alpha: f64) -> f64 {
        0.5 * self.bracket_rule(alpha).variance(|x| x)
    }

    /// `α / c₁(α) = 3 / {sin²θ}_α`, finite at `α = 0`.
    pub fn alpha_over_c1(&self, alpha: f64) -> f64 {
        3.0 / self.brace_mean(|t| t.sin().powi(2), alpha)
    }

    /// `α / c₂(α) = 4 / [sin²φ]_α`, finite at `α = 0`.
    pub fn alpha_over_c2(&self, alpha: f64) -> f64 {
        4.0 / self.bracket_rule(alpha).mean(|x| 1.0 - x * x)
    }

    /// Constants `(a, b, c)` with `∫(J·A) A g(A) dA = a Tr(J) I + b J + c Jᵀ`
    /// for a class function `g(A) = g(θ)`.
    pub fn class_function_constants<G: Fn(f64) -> f64>(&self, g: G) -> (f64, f64, f64) {
        // Haar in θ: (2/π) sin²(θ/2) dθ; axis averages of (n1²-n2²)² and n3²
        let haar = |h: &dyn Fn(f64) -> f64| {
            self.theta
                .integrate(|t| 2.0 / PI * (0.5 * t).sin().powi(2) * h(t))
        };
        let tr2 = haar(&|t| (1.0 + 2.0 * t.cos()).powi(2) * g(t));
        let diff2 = haar(&|t| 4.0 / 15.0 * (1.0 - t.cos()).powi(2) * g(t));
        let skew2 = haar(&|t| 4.0 / 3.0 * t.sin().powi(2) * g(t));
        let alpha_g = tr2 / 6.0;
        let lambda = 0.25 * diff2;
        let mu = 0.25 * skew2;
        let b = 0.5 * (lambda + mu);
        let c = 0.5 * (lambda - mu);
        let a = (alpha_g - b - c) / 3.0;
        (a, b, c)
    }

    /// `1 - {(1 - cos θ)²}_x / (5 {sin²θ}_x)`; nonnegative exactly when
    /// `x ≥ 0`.
    pub fn sign_function(&self, x: f64) -> f64 {
        let r = self.brace_rule(x);
        1.0 - r.mean(|t| (1.0 - t.cos()).powi(2)) / (5.0 * r.mean(|t| t.sin().powi(2)))
    }
}

fn diag_from_q2(q2: &[f64; 4]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..4).map(|k| SIGNS[i][k] * q2[k]).sum();
    }
    out
}

fn diag2_from_q4(q4: &[[f64; 4]; 4]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for k in 0..4 {
                for l in 0..4 {
                    s += SIGNS[i][k] * SIGNS[j][l] * q4[k][l];
                }
            }
            out[i][j] = s;
        }
    }
    out
}

/// Nodes with normalised weights.
#[derive(Clone, Debug)]
pub struct WeightedRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl WeightedRule {
    fn normalised(nodes: Vec<f64>, mut weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        WeightedRule { nodes, weights }
    }

    pub fn mean<F: Fn(f64) -> f64>(&self, h: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * h(x))
            .sum()
    }

    pub fn variance<F: Fn(f64) -> f64>(&self, h: F) -> f64 {
        let m = self.mean(&h);
        self.mean(|x| (h(x) - m).powi(2))
    }
}

/// A von Mises law with its SSVD and normalisation cached.
#[derive(Clone, Debug)]
pub struct VonMisesParams {
    pub j: Mat3,
    pub ssvd: Ssvd,
    pub log_z: f64,
}

impl VonMisesParams {
    pub fn new(j: Mat3, quad: &Quadrature) -> Self {
        let s = ssvd(&j);
        let log_z = quad.log_partition(s.d.d);
        VonMisesParams { j, ssvd: s, log_z }
    }

    /// Density with respect to the normalised Haar measure.
    pub fn density(&self, a: &Rotation) -> f64 {
        (self.j.dot(a.matrix()) - self.log_z).exp()
    }

    /// Maximum of `J·A` over SO(3).
    pub fn max_exponent(&self) -> f64 {
        0.5 * self.ssvd.d.d.iter().sum::<f64>()
    }

    /// Exact rejection sampler with Haar proposals.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Rotation> {
        sample_ssvd(&self.ssvd, rng)
    }
}

/// Draws from `M_J` given the SSVD of `J`; the normalisation is not needed.
///
/// Proposals are Haar quaternions accepted with probability
/// `exp(J·A - max J·A)`; in the SSVD frame the exponent is
/// `2 Σ s_k q_k² - 2 s₁` with `s = φ(D)`.
pub fn sample_ssvd<R: Rng + ?Sized>(svd: &Ssvd, rng: &mut R) -> Result<Rotation> {
    let s = phi_diag(svd.d.d);
    let top = 2.0 * s[0];
    for _ in 0..SAMPLER_CAP {
        let c: [f64; 4] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n2: f64 = c.iter().map(|x| x * x).sum();
        if n2 < 1e-24 {
            continue;
        }
        let e = 2.0 * (0..4).map(|k| s[k] * c[k] * c[k]).sum::<f64>() / n2 - top;
        let u: f64 = rng.random();
        if u < e.exp() {
            let b = Rotation3::from_quaternion(&Quaternion { c });
            let a = *svd.p.matrix() * *b.matrix() * *svd.q.matrix();
            return Ok(Rotation3::from_matrix_unchecked(a));
        }
    }
    Err(Error::SamplerExhausted(SAMPLER_CAP))
}

/// Haar sample in `f64`.
pub fn haar<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    haar_sample(rng)
}
