//! Relaxation of the flux towards equilibrium.
//!
//! The flux obeys `dJ/dt = ρ⟨A⟩_{M_J} - J`. Writing `J(t) = P D(t) Q` with
//! the SSVD of `J(0)`, the diagonal part follows the gradient flow
//! `Ḋ = ρ m(D) - D = -∇V̂(D)` of the reduced potential, where `m(D)` is the
//! diagonal of `⟨A⟩_{M_D}`.

use crate::equilibria::{classify_with, solve_c1_branches_with, CriticalDensities, EquilibriumRecord, Kind};
use crate::output::fmt_g17;
use crate::quad::adaptive_simpson;
use crate::so3::{haar_sample, ssvd};
use crate::vonmises::Quadrature;
use crate::{Error, Mat3, Result, Rotation};
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use std::io::Write;

pub use crate::equilibria::potential;

/// Cone violations above this are reported.
pub const CONE_DIAGNOSTIC: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub rtol: f64,
    pub atol: f64,
    pub t_max: f64,
    pub stop_grad_norm: f64,
    /// Upper bound on the step size.
    pub max_step: f64,
    /// Stop as soon as `|rhs| ≤ stop_grad_norm`; otherwise run to `t_max`.
    pub stop_on_convergence: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            rtol: 1e-8,
            atol: 1e-10,
            t_max: 200.0,
            stop_grad_norm: 1e-9,
            max_step: f64::INFINITY,
            stop_on_convergence: true,
        }
    }
}

impl FlowOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.rtol, self.atol, self.t_max, self.stop_grad_norm, self.max_step]
            .iter()
            .all(|&x| x > 0.0);
        if !ok {
            return Err(Error::InvalidArgument("flow options must be positive".into()));
        }
        Ok(())
    }
}

/// Samples of the reduced flow at accepted steps.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub rho: f64,
    pub times: Vec<f64>,
    pub states: Vec<[f64; 3]>,
    pub potentials: Vec<f64>,
    /// `ρ m(D) - D` at each sample.
    pub derivs: Vec<[f64; 3]>,
    pub log_z: Vec<f64>,
    pub converged: bool,
    pub limit: Option<[f64; 3]>,
    /// Largest excursion outside the SSVD cone when started inside it.
    pub cone_violation: f64,
    pub diagnostics: Vec<String>,
}

impl Trajectory {
    pub fn last_state(&self) -> [f64; 3] {
        *self.states.last().unwrap()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn grad_norm(&self, k: usize) -> f64 {
        norm(self.derivs[k])
    }

    fn locate(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s <= t);
        k.clamp(1, self.times.len() - 1) - 1
    }

    /// Cubic Hermite interpolation of the state, using the flow field as
    /// the derivative at the samples.
    pub fn state_at(&self, t: f64) -> [f64; 3] {
        if self.times.len() == 1 || t >= self.horizon() {
            return self.last_state();
        }
        let k = self.locate(t);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = hermite(s, h, self.states[k][i], self.derivs[k][i], self.states[k + 1][i], self.derivs[k + 1][i]);
        }
        out
    }

    /// `log Z(diag D(t))`, Hermite-interpolated with its exact time
    /// derivative `½ m·Ḋ`.
    pub fn log_z_at(&self, t: f64) -> f64 {
        if self.times.len() == 1 || t >= self.horizon() {
            return *self.log_z.last().unwrap();
        }
        let k = self.locate(t);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let dz = |j: usize| {
            let m = self.moment(j);
            0.5 * (0..3).map(|i| m[i] * self.derivs[j][i]).sum::<f64>()
        };
        hermite(s, h, self.log_z[k], dz(k), self.log_z[k + 1], dz(k + 1))
    }

    fn moment(&self, k: usize) -> [f64; 3] {
        let d = self.states[k];
        let f = self.derivs[k];
        [0, 1, 2].map(|i| (f[i] + d[i]) / self.rho)
    }
}

fn hermite(s: f64, h: f64, y0: f64, d0: f64, y1: f64, d1: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0
        + (s3 - 2.0 * s2 + s) * h * d0
        + (-2.0 * s3 + 3.0 * s2) * y1
        + (s3 - s2) * h * d1
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn cone_excess(d: [f64; 3]) -> f64 {
    (d[1] - d[0]).max(d[2].abs() - d[1]).max(0.0)
}

/// Makes `m` respect the symmetries that `d` has exactly: entries with
/// equal `|dᵢ|` are related by a signed permutation fixing `d`, so their
/// moments agree up to the same signs. The quadrature only honours this to
/// rounding, which unstable directions would amplify off invariant planes.
fn symmetrise(d: [f64; 3], m: &mut [f64; 3]) {
    let mut done = [false; 3];
    for i in 0..3 {
        if done[i] {
            continue;
        }
        let v = d[i].abs();
        let class: Vec<usize> = (i..3).filter(|&j| d[j].abs() == v).collect();
        for &j in &class {
            done[j] = true;
        }
        if class.len() < 2 {
            continue;
        }
        if v == 0.0 {
            for &j in &class {
                m[j] = 0.0;
            }
            continue;
        }
        let sign = |j: usize| if d[j] < 0.0 { -1.0 } else { 1.0 };
        let mean = class.iter().map(|&j| sign(j) * m[j]).sum::<f64>() / class.len() as f64;
        for &j in &class {
            m[j] = sign(j) * mean;
        }
    }
}

/// `(ρ m(D) - D, log Z(D))`.
fn field(d: [f64; 3], rho: f64, quad: &Quadrature) -> ([f64; 3], f64) {
    let s = crate::so3::phi_diag(d);
    let mom = quad.s3_moments(s, false);
    let q = mom.q2;
    let mut m = [
        q[0] + q[1] - q[2] - q[3],
        q[0] - q[1] + q[2] - q[3],
        q[0] - q[1] - q[2] + q[3],
    ];
    symmetrise(d, &mut m);
    ([0, 1, 2].map(|i| rho * m[i] - d[i]), mom.log_z)
}

/// `ρ m(D) - D`, the negative gradient of the reduced potential.
pub fn rhs(d: [f64; 3], rho: f64, quad: &Quadrature) -> [f64; 3] {
    field(d, rho, quad).0
}

// Dormand–Prince 5(4)
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates the reduced flow from `d0`.
pub fn integrate(d0: [f64; 3], rho: f64, opts: &FlowOptions, quad: &Quadrature) -> Result<Trajectory> {
    opts.validate()?;
    if d0.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("initial state must be finite".into()));
    }
    let in_cone = cone_excess(d0) == 0.0;
    let (f0, lz0) = field(d0, rho, quad);
    let pot = |d: [f64; 3], lz: f64| 0.5 * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) - 2.0 * rho * lz;
    let mut tr = Trajectory {
        rho,
        times: vec![0.0],
        states: vec![d0],
        potentials: vec![pot(d0, lz0)],
        derivs: vec![f0],
        log_z: vec![lz0],
        ..Default::default()
    };
    let mut t = 0.0;
    let mut y = d0;
    let mut f = f0;
    if norm(f) <= opts.stop_grad_norm {
        tr.converged = true;
        tr.limit = Some(y);
        if opts.stop_on_convergence {
            return Ok(tr);
        }
    }

    let scale = |y: [f64; 3], z: [f64; 3], i: usize| opts.atol + opts.rtol * y[i].abs().max(z[i].abs());
    let mut h = {
        let d0n = (0..3).map(|i| (y[i] / scale(y, y, i)).powi(2)).sum::<f64>().sqrt();
        let d1n = (0..3).map(|i| (f[i] / scale(y, y, i)).powi(2)).sum::<f64>().sqrt();
        let h0 = if d0n < 1e-5 || d1n < 1e-5 { 1e-3 } else { 0.01 * d0n / d1n };
        h0.min(opts.max_step).min(opts.t_max)
    };
    let mut err_prev: f64 = 1e-4;
    let mut k = [[0.0f64; 3]; 7];
    while t < opts.t_max {
        if t + h > opts.t_max {
            h = opts.t_max - t;
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::Integration(format!("step size underflow at t = {t}")));
        }
        k[0] = f;
        let mut lz_new = 0.0;
        for s in 1..7 {
            let mut ys = y;
            for (i, yi) in ys.iter_mut().enumerate() {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * k[j][i];
                }
                *yi += h * acc;
            }
            let (fs, lz) = field(ys, rho, quad);
            k[s] = fs;
            if s == 6 {
                lz_new = lz;
            }
        }
        // stage 7 is evaluated at the 5th-order solution
        let mut y_new = y;
        for (i, yi) in y_new.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..6 {
                acc += A[6][j] * k[j][i];
            }
            *yi += h * acc;
        }
        let mut err = 0.0;
        for i in 0..3 {
            let mut e = 0.0;
            for j in 0..7 {
                e += E[j] * k[j][i];
            }
            err += (h * e / scale(y, y_new, i)).powi(2);
        }
        let err = (err / 3.0).sqrt();
        if !err.is_finite() {
            h *= 0.2;
            continue;
        }
        if err <= 1.0 {
            t += h;
            y = y_new;
            f = k[6];
            tr.times.push(t);
            tr.states.push(y);
            tr.potentials.push(pot(y, lz_new));
            tr.derivs.push(f);
            tr.log_z.push(lz_new);
            if in_cone {
                tr.cone_violation = tr.cone_violation.max(cone_excess(y));
            }
            let fac = 0.9 * err.max(1e-10).powf(-0.14) * err_prev.powf(0.08);
            err_prev = err.max(1e-4);
            h = (h * fac.clamp(0.2, 5.0)).min(opts.max_step);
            if !tr.converged && norm(f) <= opts.stop_grad_norm {
                tr.converged = true;
                tr.limit = Some(y);
                if opts.stop_on_convergence {
                    break;
                }
            }
        } else {
            let fac = 0.9 * err.powf(-0.2);
            h *= fac.clamp(0.2, 1.0);
        }
    }
    if tr.converged && !opts.stop_on_convergence {
        tr.limit = Some(y);
    }
    if tr.cone_violation > CONE_DIAGNOSTIC {
        tr.diagnostics.push(format!(
            "trajectory left the SSVD cone by {:e}",
            tr.cone_violation
        ));
    }
    Ok(tr)
}

/// Result of relaxing a full flux matrix.
#[derive(Clone, Debug)]
pub struct Relaxation {
    pub j_eq: Mat3,
    pub p: Rotation,
    pub q: Rotation,
    pub trajectory: Trajectory,
}

impl Relaxation {
    /// `P diag(D(t)) Q`.
    pub fn flux_at(&self, t: f64) -> Mat3 {
        *self.p.matrix() * Mat3::from_diag(self.trajectory.state_at(t)) * *self.q.matrix()
    }
}

/// Relaxes `j0` along the flux ODE; the equilibrium is `P diag(limit) Q`.
pub fn relax_flux(j0: &Mat3, rho: f64, opts: &FlowOptions, quad: &Quadrature) -> Result<Relaxation> {
    let s = ssvd(j0);
    let trajectory = integrate(s.d.d, rho, opts, quad)?;
    let end = trajectory.limit.unwrap_or_else(|| trajectory.last_state());
    Ok(Relaxation {
        j_eq: *s.p.matrix() * Mat3::from_diag(end) * *s.q.matrix(),
        p: s.p,
        q: s.q,
        trajectory,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BasinLabel {
    Uniform,
    /// Full rank with positive `α`: `α₁` above `ρ_c`, `α₊` below.
    TypeBPositive,
    /// Full rank with negative `α` (`α₃`), reached only from the half-line
    /// `ℝ₊(1,1,-1)`.
    TypeBNegative,
    /// Rank one, reached only from the quarter-plane `{(d₁,d₂,-d₂)}`.
    TypeC,
    /// Below `α₋` on the bistable range the separatrix is not known.
    UnknownBistable,
    /// Exactly on the stable manifold of `α₋` along the line `ℝ(1,1,1)`.
    TypeBMinus,
}

impl BasinLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            BasinLabel::Uniform => "uniform",
            BasinLabel::TypeBPositive => "type_b_positive",
            BasinLabel::TypeBNegative => "type_b_negative",
            BasinLabel::TypeC => "type_c",
            BasinLabel::UnknownBistable => "unknown_bistable",
            BasinLabel::TypeBMinus => "type_b_minus",
        }
    }
}

/// Predicted limit of the flow from a cone point `d0`.
pub fn basin_label(d0: [f64; 3], rho: f64, crit: &CriticalDensities, quad: &Quadrature) -> Result<BasinLabel> {
    crit.check(rho)?;
    let scale = norm(d0).max(1.0);
    let tol = 1e-12 * scale;
    if cone_excess(d0) > tol {
        return Err(Error::InvalidArgument(format!("{d0:?} is not in the SSVD cone")));
    }
    let [d1, d2, d3] = d0;
    let zero = norm(d0) <= tol;
    if zero || rho < crit.rho_star {
        return Ok(BasinLabel::Uniform);
    }
    let on_quarter_plane = (d2 + d3).abs() <= tol;
    let on_half_line = on_quarter_plane && (d1 - d2).abs() <= tol;
    let on_diagonal = (d1 - d2).abs() <= tol && (d2 - d3).abs() <= tol;
    if rho > crit.rho_c {
        return Ok(if on_half_line {
            BasinLabel::TypeBNegative
        } else if on_quarter_plane {
            BasinLabel::TypeC
        } else {
            BasinLabel::TypeBPositive
        });
    }
    // bistable range: the flow is one-dimensional on the symmetry lines
    if on_half_line || (on_quarter_plane && d2.abs() <= tol) {
        return Ok(BasinLabel::Uniform);
    }
    if on_diagonal {
        let roots = solve_c1_branches_with(rho, quad, crit)?;
        let minus = roots.iter().copied().find(|&a| a > 0.0 && a < crit.alpha_star);
        return Ok(match minus {
            Some(am) if (d1 - am).abs() <= tol => BasinLabel::TypeBMinus,
            Some(am) if d1 < am => BasinLabel::Uniform,
            _ => BasinLabel::TypeBPositive,
        });
    }
    Ok(BasinLabel::UnknownBistable)
}

/// The classified equilibrium closest to `limit`, if within `tol`.
pub fn match_limit<'a>(limit: [f64; 3], records: &'a [EquilibriumRecord], tol: f64) -> Option<&'a EquilibriumRecord> {
    records
        .iter()
        .map(|r| (r, norm([0, 1, 2].map(|i| limit[i] - r.d[i]))))
        .filter(|(_, e)| *e <= tol)
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|(r, _)| r)
}

/// Label of a classified equilibrium in terms of [`BasinLabel`].
pub fn record_label(r: &EquilibriumRecord) -> BasinLabel {
    match (r.kind, r.branch.as_str()) {
        (Kind::Uniform, _) => BasinLabel::Uniform,
        (Kind::TypeB, "alpha_3") => BasinLabel::TypeBNegative,
        (Kind::TypeB, "alpha_minus") => BasinLabel::TypeBMinus,
        (Kind::TypeB, _) => BasinLabel::TypeBPositive,
        (Kind::TypeC, _) => BasinLabel::TypeC,
    }
}

/// Exponential decay rate fitted to the tail of a converged trajectory:
/// minus the least-squares slope of `log |D(t) - limit|` over samples with
/// distance between `1e-7` and `1e-3` of the initial distance scale.
pub fn convergence_rate(traj: &Trajectory) -> Result<f64> {
    let limit = match (traj.converged, traj.limit) {
        (true, Some(l)) => l,
        _ => return Err(Error::InvalidArgument("trajectory has not converged".into())),
    };
    let dist: Vec<f64> = traj
        .states
        .iter()
        .map(|s| norm([0, 1, 2].map(|i| s[i] - limit[i])))
        .collect();
    let d_max = dist.iter().cloned().fold(0.0, f64::max);
    if d_max == 0.0 {
        return Err(Error::InvalidArgument("stationary trajectory has no decay".into()));
    }
    let hi = 1e-3 * d_max.max(1.0);
    let lo = (1e-7 * d_max.max(1.0)).max(1e3 * traj.stop_floor());
    let pts: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(&dist)
        .filter(|(_, &d)| d <= hi && d >= lo)
        .map(|(&t, &d)| (t, d.ln()))
        .collect();
    if pts.len() < 20 {
        return Err(Error::InvalidArgument(format!(
            "only {} tail samples, need 20 (lower max_step)",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Ok(-sxy / sxx)
}

impl Trajectory {
    /// Distance to the limit implied by the final gradient norm.
    fn stop_floor(&self) -> f64 {
        self.derivs.last().map(|f| norm(*f)).unwrap_or(0.0)
    }
}

/// `e^{-t} f₀(A) + ρ ∫₀ᵗ e^{-(t-s)} M_{J(s)}(A) ds` along a relaxed flux.
pub fn duhamel_density<F: Fn(&Rotation) -> f64>(f0: F, path: &Relaxation, t: f64, a: &Rotation) -> Result<f64> {
    let tr = &path.trajectory;
    if t < 0.0 || t > tr.horizon() * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "time {t} outside the trajectory horizon {}",
            tr.horizon()
        )));
    }
    let rho = tr.rho;
    let head = (-t).exp() * f0(a);
    if rho == 0.0 || t == 0.0 {
        return Ok(head);
    }
    // B = Pᵀ A Qᵀ so that J(s)·A = D(s)·B
    let b = path.p.matrix().transpose() * *a.matrix() * path.q.matrix().transpose();
    let bd = b.diag();
    let integrand = |s: f64| {
        let d = tr.state_at(s);
        let e = 0.5 * (d[0] * bd[0] + d[1] * bd[1] + d[2] * bd[2]) - tr.log_z_at(s);
        (e - (t - s)).exp()
    };
    let scale = integrand(t).max(integrand(0.0)).max(1e-300);
    let tail = adaptive_simpson(integrand, 0.0, t, 1e-10 * scale, 40);
    Ok(head + rho * tail)
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

/// `F[f] = ∫ f log f - ½|J_f|²` by Haar sampling; `j` is the flux of `f`.
pub fn free_energy<F, R>(j: &Mat3, mut f_eval: F, n_mc: usize, rng: &mut R) -> Result<Estimate>
where
    F: FnMut(&Rotation) -> Result<f64>,
    R: Rng + ?Sized,
{
    if n_mc < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..n_mc {
        let a: Rotation = haar_sample(rng);
        let f = f_eval(&a)?;
        if !(f > 0.0) {
            return Err(Error::InvalidArgument(format!("density {f} is not positive")));
        }
        let x = f * f.ln();
        sum += x;
        sum2 += x * x;
    }
    let n = n_mc as f64;
    let mean = sum / n;
    let var = ((sum2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(Estimate {
        value: mean - 0.5 * j.dot(j),
        std_err: (var / n).sqrt(),
    })
}

/// Summary written next to an exported trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowSummary {
    pub rho: f64,
    pub converged: bool,
    pub limit: Option<[f64; 3]>,
    pub kind: Option<Kind>,
    pub branch: Option<String>,
    pub label: Option<String>,
    pub alpha: Option<f64>,
    pub lambda: Option<Mat3>,
    pub rate: Option<f64>,
    pub diagnostics: Vec<String>,
}

/// Builds the summary: limit kind from the classified equilibria, `Λ = PQ`
/// for a positive full-rank limit, and the tail rate when it can be fitted.
pub fn summarize(rel: &Relaxation, crit: &CriticalDensities, quad: &Quadrature) -> FlowSummary {
    let tr = &rel.trajectory;
    let records = classify_with(tr.rho, quad, crit).ok();
    let matched = match (tr.limit, &records) {
        (Some(l), Some(rs)) => match_limit(l, rs, 1e-5).cloned(),
        _ => None,
    };
    let label = matched.as_ref().map(|r| record_label(r).as_str().to_string());
    let lambda = matched
        .as_ref()
        .filter(|r| r.kind == Kind::TypeB && r.alpha > 0.0)
        .map(|_| *rel.p.compose(&rel.q).matrix());
    FlowSummary {
        rho: tr.rho,
        converged: tr.converged,
        limit: tr.limit,
        kind: matched.as_ref().map(|r| r.kind),
        branch: matched.as_ref().map(|r| r.branch.clone()),
        label,
        alpha: matched.map(|r| r.alpha),
        lambda,
        rate: convergence_rate(tr).ok(),
        diagnostics: tr.diagnostics.clone(),
    }
}

pub const TRAJECTORY_HEADER: [&str; 6] = ["t", "d1", "d2", "d3", "V", "|rhs|"];

pub fn export_csv<W: Write>(traj: &Trajectory, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(TRAJECTORY_HEADER)?;
    for k in 0..traj.times.len() {
        let d = traj.states[k];
        wr.write_record([
            fmt_g17(traj.times[k]),
            fmt_g17(d[0]),
            fmt_g17(d[1]),
            fmt_g17(d[2]),
            fmt_g17(traj.potentials[k]),
            fmt_g17(traj.grad_norm(k)),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Matrix with independent `N(0, s²)` entries.
pub fn random_flux<R: Rng + ?Sized>(s: f64, rng: &mut R) -> Mat3 {
    let e: [f64; 9] = std::array::from_fn(|_| {
        let z: f64 = rand_distr::StandardNormal.sample(rng);
        s * z
    });
    Mat3::from_entries(e)
}

/// Uniform random point of the SSVD cone with `d₁ ≤ r`.
pub fn random_cone_point<R: Rng + ?Sized>(r: f64, rng: &mut R) -> [f64; 3] {
    let d1 = r * rng.random::<f64>();
    let d2 = d1 * rng.random::<f64>();
    let d3 = d2 * (2.0 * rng.random::<f64>() - 1.0);
    [d1, d2, d3]
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

    fn alpha1(rho: f64) -> f64 {
        *solve_c1_branches_with(rho, quad(), crit()).unwrap().last().unwrap()
    }

    #[test]
    fn rhs_fixed_points() {
        let q = quad();
        assert_eq!(rhs([0.0; 3], 8.0, q), [0.0; 3]);
        for a in solve_c1_branches_with(8.0, q, crit()).unwrap() {
            let r = rhs([a; 3], 8.0, q);
            assert!(norm(r) < 1e-9);
        }
    }

    #[test]
    fn rhs_is_negative_gradient() {
        let q = quad();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..10 {
            let d = [0, 1, 2].map(|_| 6.0 * rng.random::<f64>() - 3.0);
            let f = rhs(d, 5.0, q);
            for i in 0..3 {
                let mut up = d;
                let mut dn = d;
                up[i] += h;
                dn[i] -= h;
                let fd = -(potential(up, 5.0, q) - potential(dn, 5.0, q)) / (2.0 * h);
                assert!((f[i] - fd).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn potential_is_coercive() {
        let q = quad();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let u = [0, 1, 2].map(|_| rng.random::<f64>() - 0.5);
            let n = norm(u);
            let u = u.map(|x| x / n);
            assert!(potential(u.map(|x| 50.0 * x), 8.0, q) > potential(u.map(|x| 10.0 * x), 8.0, q));
        }
        let a = alpha1(8.0);
        assert!(potential([a; 3], 8.0, q) < potential([0.0; 3], 8.0, q));
    }

    #[test]
    fn subcritical_decay() {
        let tr = integrate([0.5, 0.3, 0.1], 1.0, &FlowOptions::default(), quad()).unwrap();
        assert!(tr.converged);
        assert!(norm(tr.limit.unwrap()) < 1e-8);
        for w in tr.potentials.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn supercritical_limits() {
        let q = quad();
        let a1 = alpha1(8.0);
        let tr = integrate([3.0, 2.0, 1.0], 8.0, &FlowOptions::default(), q).unwrap();
        let l = tr.limit.unwrap();
        assert!(norm([l[0] - a1, l[1] - a1, l[2] - a1]) < 1e-7);
        assert!(tr.cone_violation <= 1e-9);

        let a3 = solve_c1_branches_with(8.0, q, crit()).unwrap()[0];
        let tr = integrate([2.0, 2.0, -2.0], 8.0, &FlowOptions::default(), q).unwrap();
        let l = tr.limit.unwrap();
        assert!(norm([l[0] + a3, l[1] + a3, l[2] - a3]) < 1e-7);
        for s in &tr.states {
            assert!((s[0] - s[1]).abs() <= 1e-9 && (s[1] + s[2]).abs() <= 1e-9);
        }
    }

    #[test]
    fn relax_examples() {
        let q = quad();
        let lam = *Rotation::from_axis_angle([1.0, 2.0, 2.0], 0.7).matrix();
        let a1 = alpha1(8.0);
        let rel = relax_flux(&lam.scale(0.1), 8.0, &FlowOptions::default(), q).unwrap();
        assert!(rel.j_eq.max_abs_diff(&lam.scale(a1)) < 1e-7);
        assert!(rel.p.compose(&rel.q).matrix().max_abs_diff(&lam) < 1e-10);

        let rel = relax_flux(&Mat3::zero(), 3.0, &FlowOptions::default(), q).unwrap();
        assert_eq!(rel.j_eq, Mat3::zero());

        let j0 = Mat3::new([[0.5, 0.1, 0.0], [0.2, -0.4, 0.3], [0.0, 0.1, 0.6]]);
        assert!(j0.det() < 0.0);
        let rel = relax_flux(&j0, 1.0, &FlowOptions::default(), q).unwrap();
        assert!(rel.j_eq.frobenius() < 1e-8);
    }

    #[test]
    fn basin_labels() {
        let q = quad();
        let c = crit();
        let t = 0.7;
        assert_eq!(basin_label([t, 0.999 * t, -0.998 * t], 8.0, c, q).unwrap(), BasinLabel::TypeBPositive);
        assert_eq!(basin_label([3.0, 1.0, -1.0], 8.0, c, q).unwrap(), BasinLabel::TypeC);
        assert_eq!(basin_label([3.0, 0.0, 0.0], 8.0, c, q).unwrap(), BasinLabel::TypeC);
        assert_eq!(basin_label([0.0; 3], 8.0, c, q).unwrap(), BasinLabel::Uniform);
        assert_eq!(basin_label([2.0, 2.0, -2.0], 8.0, c, q).unwrap(), BasinLabel::TypeBNegative);
        assert_eq!(basin_label([2.0, 1.0, 0.5], 1.0, c, q).unwrap(), BasinLabel::Uniform);
        let mid = 0.5 * (c.rho_star + 6.0);
        assert_eq!(basin_label([2.0, 1.0, 0.5], mid, c, q).unwrap(), BasinLabel::UnknownBistable);
        assert_eq!(basin_label([0.01; 3], mid, c, q).unwrap(), BasinLabel::Uniform);
        assert_eq!(basin_label([5.0; 3], mid, c, q).unwrap(), BasinLabel::TypeBPositive);
        assert!(basin_label([1.0, 1.0, 1.0], 6.0, c, q).is_err());
        assert!(basin_label([1.0, 2.0, 0.0], 8.0, c, q).is_err());
    }

    #[test]
    fn rate_errors() {
        let q = quad();
        let tr = integrate([0.0; 3], 1.0, &FlowOptions::default(), q).unwrap();
        assert!(convergence_rate(&tr).is_err());
        let opts = FlowOptions {
            t_max: 1.0,
            ..Default::default()
        };
        let tr = integrate([1.0, 0.5, 0.2], 1.0, &opts, q).unwrap();
        assert!(!tr.converged);
        assert!(convergence_rate(&tr).is_err());
    }

    #[test]
    fn subcritical_rate() {
        let opts = FlowOptions {
            max_step: 0.25,
            ..Default::default()
        };
        let tr = integrate([0.05, 0.03, 0.01], 1.0, &opts, quad()).unwrap();
        let lam = convergence_rate(&tr).unwrap();
        assert!((lam - 5.0 / 6.0).abs() < 0.05 * 5.0 / 6.0, "{lam}");
    }

    #[test]
    fn duhamel_examples() {
        let q = quad();
        let rho = 8.0;
        let a1 = alpha1(rho);
        let lam = Rotation::from_axis_angle([0.0, 1.0, 1.0], 1.2);
        let jstar = lam.matrix().scale(a1);
        let opts = FlowOptions {
            t_max: 3.0,
            stop_on_convergence: false,
            ..Default::default()
        };
        let rel = relax_flux(&jstar, rho, &opts, q).unwrap();
        let vm = crate::vonmises::VonMisesParams::new(jstar, q);
        let f0 = |a: &Rotation| rho * vm.density(a);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let a: Rotation = haar_sample(&mut rng);
            assert_eq!(duhamel_density(f0, &rel, 0.0, &a).unwrap(), f0(&a));
            let ft = duhamel_density(f0, &rel, 2.5, &a).unwrap();
            assert!((ft - f0(&a)).abs() < 1e-8 * f0(&a).max(1.0));
        }
        assert!(duhamel_density(f0, &rel, 10.0, &Rotation::identity()).is_err());
    }

    #[test]
    fn duhamel_uniform_limit() {
        let q = quad();
        let opts = FlowOptions {
            t_max: 30.0,
            stop_on_convergence: false,
            ..Default::default()
        };
        let rel = relax_flux(&Mat3::zero(), 1.0, &opts, q).unwrap();
        let f0 = |_: &Rotation| 1.0;
        let a = Rotation::from_axis_angle([1.0, 0.0, 0.0], 2.0);
        let f = duhamel_density(f0, &rel, 30.0, &a).unwrap();
        assert!((f - 1.0).abs() < 1e-9);
    }

    #[test]
    fn free_energy_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let e = free_energy(&Mat3::zero(), |_| Ok(1.0), 100, &mut rng).unwrap();
        assert!(e.value.abs() < 1e-15 && e.std_err < 1e-15);
        let q = quad();
        let a1 = alpha1(8.0);
        let vm = crate::vonmises::VonMisesParams::new(Mat3::identity().scale(a1), q);
        let j = Mat3::identity().scale(8.0 * q.c1(a1));
        let e = free_energy(&j, |a| Ok(8.0 * vm.density(a)), 200_000, &mut rng).unwrap();
        assert!(e.value + 4.0 * e.std_err < 8.0 * 8f64.ln());
        assert!(free_energy(&j, |_| Ok(0.0), 10, &mut rng).is_err());
    }

    #[test]
    fn symmetrise_preserves_planes() {
        let q = quad();
        let r = rhs([2.0, 2.0, 1.0], 8.0, q);
        assert_eq!(r[0], r[1]);
        let r = rhs([2.0, 1.0, -1.0], 8.0, q);
        assert_eq!(r[1], -r[2]);
        let r = rhs([2.0, 0.0, 0.0], 8.0, q);
        assert_eq!((r[1], r[2]), (0.0, 0.0));
    }

    #[test]
    fn trajectory_csv_header() {
        let tr = integrate([0.5, 0.3, 0.1], 1.0, &FlowOptions::default(), quad()).unwrap();
        let mut buf = Vec::new();
        export_csv(&tr, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,d1,d2,d3,V,|rhs|\n"));
        assert_eq!(text.lines().count(), tr.times.len() + 1);
    }
}
