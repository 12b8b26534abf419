//! Equilibria of the homogeneous model and their stability.
//!
//! A nonzero equilibrium flux is `αΛ` with `α = ρ c₁(α)` (full rank) or
//! `α p⊗q` with `α = ρ c₂(α)` (rank one). Both maps `α ↦ α/cᵢ(α)` are
//! continuous through `α = 0`, and roots are bracketed on their monotone
//! pieces. Stability is read off the Hessian of the reduced potential
//! `V̂(D) = ½|D|² - 2ρ log Z(diag D)` at a diagonal representative.

use crate::output::fmt_g17;
use crate::so3::sym_eigen;
use crate::vonmises::Quadrature;
use crate::{Error, Mat3, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Densities closer than this to `ρ*` or `ρ_c` are not classified.
pub const CRITICAL_WINDOW: f64 = 1e-6;
/// Relative tolerance for zero eigenvalues.
pub const ZERO_TOL: f64 = 1e-9;
/// Required residual `|α - ρ cᵢ(α)|` of every root.
pub const ROOT_RESIDUAL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kind {
    Uniform,
    TypeB,
    TypeC,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub plus: usize,
    pub zero: usize,
    pub minus: usize,
}

impl Signature {
    pub const fn new(plus: usize, zero: usize, minus: usize) -> Self {
        Signature { plus, zero, minus }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumRecord {
    pub rho: f64,
    pub kind: Kind,
    /// Name of the root branch: `uniform`, `alpha_minus`, `alpha_plus`,
    /// `alpha_1`, `alpha_3` or `alpha_2`.
    pub branch: String,
    pub alpha: f64,
    /// Diagonal of the SSVD of the representative flux.
    pub d: [f64; 3],
    pub signature: Signature,
    pub stable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalDensities {
    pub rho_star: f64,
    pub alpha_star: f64,
    pub rho_c: f64,
}

impl CriticalDensities {
    pub fn compute(quad: &Quadrature) -> Self {
        critical_densities(quad)
    }

    /// The critical density `rho` is close to, if any.
    pub fn near(&self, rho: f64) -> Option<f64> {
        [self.rho_star, self.rho_c]
            .into_iter()
            .find(|c| (rho - c).abs() < CRITICAL_WINDOW)
    }

    pub fn check(&self, rho: f64) -> Result<()> {
        match self.near(rho) {
            Some(c) => Err(Error::NearCritical {
                rho,
                critical: c,
                tol: CRITICAL_WINDOW,
            }),
            None => Ok(()),
        }
    }
}

/// `ρ_c = 1/c₁'(0)` and the minimum `ρ* = α*/c₁(α*)` over `(0, 20]`.
pub fn critical_densities(quad: &Quadrature) -> CriticalDensities {
    let rho_c = 1.0 / quad.c1_prime(0.0);
    let g = |a: f64| quad.alpha_over_c1(a);
    let (mut lo, mut hi) = golden_section(g, 0.0, 20.0, 1e-10);
    // golden section stalls near the flat minimum; the slope of {sin²θ}_α
    // is a covariance with cosθ and changes sign cleanly at α*
    let slope = |a: f64| {
        let r = quad.brace_rule(a);
        let m_s = r.mean(|t| t.sin().powi(2));
        let m_c = r.mean(|t| t.cos());
        r.mean(|t| (t.sin().powi(2) - m_s) * (t.cos() - m_c))
    };
    lo = (lo - 1e-4).max(1e-9);
    hi += 1e-4;
    if slope(lo) > 0.0 && slope(hi) < 0.0 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let alpha_star = 0.5 * (lo + hi);
    CriticalDensities {
        rho_star: g(alpha_star),
        alpha_star,
        rho_c,
    }
}

/// Bracket of width `tol` around the minimum of a unimodal `f`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
        if x1 >= x2 {
            break;
        }
    }
    (a, b)
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::RootNotFound(format!("no sign change on [{lo}, {hi}]")));
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_residual(alpha: f64, residual: f64) -> Result<f64> {
    if residual.abs() > ROOT_RESIDUAL {
        return Err(Error::RootNotFound(format!(
            "root {alpha} has residual {residual:e}"
        )));
    }
    Ok(alpha)
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::InvalidArgument(format!("density must be nonnegative, got {rho}")));
    }
    Ok(())
}

/// All real roots of `α = ρ c₁(α)`, ascending, with the critical densities.
pub fn solve_c1_branches_with(rho: f64, quad: &Quadrature, crit: &CriticalDensities) -> Result<Vec<f64>> {
    check_rho(rho)?;
    let g = |a: f64| quad.alpha_over_c1(a) - rho;
    let residual = |a: f64| a - rho * quad.c1(a);
    let mut roots = vec![0.0];
    let eps = 1e-12;
    if rho < crit.rho_star {
        return Ok(roots);
    }
    // decreasing piece on (0, α*]
    if g(eps) > 0.0 && g(crit.alpha_star) < 0.0 {
        let a = bisect(g, eps, crit.alpha_star)?;
        roots.push(check_residual(a, residual(a))?);
    }
    // increasing piece on [α*, ∞)
    let mut hi = rho + 2.0;
    while g(hi) <= 0.0 {
        hi *= 2.0;
    }
    if g(crit.alpha_star) <= 0.0 {
        let a = bisect(g, crit.alpha_star, hi)?;
        roots.push(check_residual(a, residual(a))?);
    }
    // negative piece, decreasing towards α = 0
    if g(-eps) < 0.0 {
        let mut lo = -rho - 2.0;
        while g(lo) <= 0.0 {
            lo *= 2.0;
        }
        let a = bisect(g, lo, -eps)?;
        roots.push(check_residual(a, residual(a))?);
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(roots)
}

pub fn solve_c1_branches(rho: f64, quad: &Quadrature) -> Result<Vec<f64>> {
    solve_c1_branches_with(rho, quad, &critical_densities(quad))
}

/// All real roots of `α = ρ c₂(α)`: `{0}` or `{-α₂, 0, α₂}`.
pub fn solve_c2_branches(rho: f64, quad: &Quadrature) -> Result<Vec<f64>> {
    check_rho(rho)?;
    let g = |a: f64| quad.alpha_over_c2(a) - rho;
    let eps = 1e-12;
    if g(eps) >= 0.0 {
        return Ok(vec![0.0]);
    }
    let mut hi = rho + 2.0;
    while g(hi) <= 0.0 {
        hi *= 2.0;
    }
    let a = bisect(g, eps, hi)?;
    let a = check_residual(a, a - rho * quad.c2(a))?;
    Ok(vec![-a, 0.0, a])
}

/// `Hess V̂(D) = I - (ρ/2) Γ`, `Γ_ij = ⟨a_ii a_jj⟩ - ⟨a_ii⟩⟨a_jj⟩`.
pub fn hessian(d: [f64; 3], rho: f64, quad: &Quadrature) -> Mat3 {
    let (_, m1, m2) = quad.moments_diag(d);
    let mut h = Mat3::identity();
    for i in 0..3 {
        for j in 0..3 {
            h.m[i][j] -= 0.5 * rho * (m2[i][j] - m1[i] * m1[j]);
        }
    }
    h.sym()
}

/// Counts of positive, zero and negative eigenvalues; `zero_tol` is
/// relative to the largest eigenvalue magnitude.
pub fn signature(h: &Mat3, zero_tol: f64) -> Signature {
    let (vals, _) = sym_eigen(h);
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut s = Signature::new(0, 0, 0);
    for v in vals {
        if scale == 0.0 || v.abs() <= zero_tol * scale {
            s.zero += 1;
        } else if v > 0.0 {
            s.plus += 1;
        } else {
            s.minus += 1;
        }
    }
    s
}

/// SSVD diagonal of the full-rank equilibrium `α I`.
pub fn type_b_diag(alpha: f64) -> [f64; 3] {
    if alpha >= 0.0 {
        [alpha; 3]
    } else {
        [-alpha, -alpha, alpha]
    }
}

/// SSVD diagonal of the rank-one equilibrium `α e₁⊗e₁`.
pub fn type_c_diag(alpha: f64) -> [f64; 3] {
    [alpha.abs(), 0.0, 0.0]
}

fn record(rho: f64, kind: Kind, branch: &str, alpha: f64, d: [f64; 3], quad: &Quadrature) -> EquilibriumRecord {
    let signature = signature(&hessian(d, rho, quad), ZERO_TOL);
    EquilibriumRecord {
        rho,
        kind,
        branch: branch.into(),
        alpha,
        d,
        signature,
        stable: signature == Signature::new(3, 0, 0),
    }
}

fn c1_branch_name(alpha: f64, rho: f64, crit: &CriticalDensities) -> &'static str {
    if alpha < 0.0 {
        "alpha_3"
    } else if rho > crit.rho_c {
        "alpha_1"
    } else if alpha < crit.alpha_star {
        "alpha_minus"
    } else {
        "alpha_plus"
    }
}

/// Every equilibrium orbit at density `rho` with its Hessian signature.
pub fn classify_with(rho: f64, quad: &Quadrature, crit: &CriticalDensities) -> Result<Vec<EquilibriumRecord>> {
    check_rho(rho)?;
    crit.check(rho)?;
    let mut out = vec![record(rho, Kind::Uniform, "uniform", 0.0, [0.0; 3], quad)];
    for a in solve_c1_branches_with(rho, quad, crit)? {
        if a != 0.0 {
            out.push(record(rho, Kind::TypeB, c1_branch_name(a, rho, crit), a, type_b_diag(a), quad));
        }
    }
    for a in solve_c2_branches(rho, quad)? {
        if a > 0.0 {
            out.push(record(rho, Kind::TypeC, "alpha_2", a, type_c_diag(a), quad));
        }
    }
    Ok(out)
}

pub fn classify(rho: f64, quad: &Quadrature) -> Result<Vec<EquilibriumRecord>> {
    classify_with(rho, quad, &critical_densities(quad))
}

/// One branch at one density of the phase diagram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub rho: f64,
    pub branch: String,
    pub alpha: f64,
    pub d: [f64; 3],
    /// Absent at near-critical densities.
    pub signature: Option<Signature>,
    pub stable: Option<bool>,
}

/// Rows for every root of both compatibility equations on a uniform grid
/// of `n` densities in `[rho_min, rho_max]`.
pub fn phase_diagram(rho_min: f64, rho_max: f64, n: usize, quad: &Quadrature) -> Result<Vec<PhaseRow>> {
    if !(rho_min >= 0.0 && rho_min < rho_max) || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "invalid density range {rho_min}:{rho_max}:{n}"
        )));
    }
    let crit = critical_densities(quad);
    let grid: Vec<f64> = (0..n)
        .map(|k| {
            if n == 1 {
                rho_min
            } else {
                rho_min + (rho_max - rho_min) * k as f64 / (n - 1) as f64
            }
        })
        .collect();
    let rows: Result<Vec<Vec<PhaseRow>>> = grid
        .par_iter()
        .map(|&rho| phase_rows(rho, quad, &crit))
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

fn phase_rows(rho: f64, quad: &Quadrature, crit: &CriticalDensities) -> Result<Vec<PhaseRow>> {
    let near = crit.near(rho).is_some();
    let records = if near { Vec::new() } else { classify_with(rho, quad, crit)? };
    let lookup = |branch: &str| records.iter().find(|r| r.branch == branch);
    let mut rows = Vec::new();
    let mut push = |branch: &str, key: &str, alpha: f64, d: [f64; 3]| {
        let rec = lookup(key);
        rows.push(PhaseRow {
            rho,
            branch: branch.into(),
            alpha,
            d,
            signature: rec.map(|r| r.signature),
            stable: rec.map(|r| r.stable),
        });
    };
    for a in solve_c1_branches_with(rho, quad, crit)? {
        if a == 0.0 {
            push("uniform", "uniform", 0.0, [0.0; 3]);
        } else {
            let name = c1_branch_name(a, rho, crit);
            push(name, name, a, type_b_diag(a));
        }
    }
    for a in solve_c2_branches(rho, quad)? {
        if a > 0.0 {
            push("alpha_2", "alpha_2", a, type_c_diag(a));
        } else if a < 0.0 {
            push("minus_alpha_2", "alpha_2", a, type_c_diag(a));
        }
    }
    Ok(rows)
}

pub const PHASE_HEADER: [&str; 10] = [
    "rho", "branch", "alpha", "d1", "d2", "d3", "sig_plus", "sig_zero", "sig_minus", "stable",
];

/// Phase-diagram CSV; near-critical rows carry empty signature fields and
/// `critical` in the stability column.
pub fn to_csv<W: Write>(rows: &[PhaseRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(PHASE_HEADER)?;
    for r in rows {
        let (sp, sz, sm) = match r.signature {
            Some(s) => (s.plus.to_string(), s.zero.to_string(), s.minus.to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        let stable = match r.stable {
            Some(b) => b.to_string(),
            None => "critical".into(),
        };
        wr.write_record([
            fmt_g17(r.rho),
            r.branch.clone(),
            fmt_g17(r.alpha),
            fmt_g17(r.d[0]),
            fmt_g17(r.d[1]),
            fmt_g17(r.d[2]),
            sp,
            sz,
            sm,
            stable,
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Reduced potential `½|D|² - 2ρ log Z(diag D)`.
pub fn potential(d: [f64; 3], rho: f64, quad: &Quadrature) -> f64 {
    0.5 * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) - 2.0 * rho * quad.log_partition(d)
}

#[cfg(test)]
mod tests {
    use super::*;
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
    fn critical_values() {
        let c = crit();
        assert!((c.rho_c - 6.0).abs() < 1e-8);
        assert!(c.rho_star > 0.0 && c.rho_star < c.rho_c);
        assert!(c.alpha_star > 0.0);
        // independent dense scan of α/c₁ with step 1e-3
        let q = quad();
        let scan = (1..20000)
            .map(|k| q.alpha_over_c1(1e-3 * k as f64))
            .fold(f64::INFINITY, f64::min);
        assert!((scan - c.rho_star).abs() < 1e-5);
        assert!(scan >= c.rho_star - 1e-12);
    }

    #[test]
    fn root_sets() {
        let q = quad();
        assert_eq!(solve_c1_branches(1.0, q).unwrap(), vec![0.0]);
        let r6 = solve_c1_branches(6.0, q).unwrap();
        assert_eq!(r6.len(), 2);
        assert_eq!(r6[0], 0.0);
        assert!(r6[1] > crit().alpha_star);
        let r8 = solve_c1_branches(8.0, q).unwrap();
        assert_eq!(r8.len(), 3);
        assert!(r8[0] < 0.0 && r8[1] == 0.0 && r8[2] > 0.0);
        for a in r8 {
            assert!((a - 8.0 * q.c1(a)).abs() <= ROOT_RESIDUAL);
        }
        let mid = 0.5 * (crit().rho_star + 6.0);
        let rm = solve_c1_branches(mid, q).unwrap();
        assert_eq!(rm.len(), 3);
        assert!(rm[1] < crit().alpha_star && rm[2] > crit().alpha_star);
        assert!(solve_c1_branches(-1.0, q).is_err());
        assert!(solve_c2_branches(-1.0, q).is_err());
    }

    #[test]
    fn c2_roots_against_closed_form() {
        let q = quad();
        assert_eq!(solve_c2_branches(3.0, q).unwrap(), vec![0.0]);
        let r = solve_c2_branches(8.0, q).unwrap();
        assert_eq!(r.len(), 3);
        let a = r[2];
        assert_eq!(r[0], -a);
        let closed = |x: f64| 1.0 / (0.5 * x).tanh() - 2.0 / x;
        assert!((a - 8.0 * closed(a)).abs() < 1e-10);
    }

    #[test]
    fn asymptotic_remainders_decrease() {
        let q = quad();
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for rho in [20.0, 50.0, 100.0] {
            let a1 = *solve_c1_branches(rho, q).unwrap().last().unwrap();
            let a2 = *solve_c2_branches(rho, q).unwrap().last().unwrap();
            let r = ((a1 - (rho - 1.0)).abs(), (a2 - (rho - 2.0)).abs());
            assert!(r.0 < prev.0 && r.1 < prev.1);
            prev = r;
        }
    }

    #[test]
    fn hessian_at_zero() {
        let q = quad();
        for rho in [2.0, 4.0, 8.0] {
            let h = hessian([0.0; 3], rho, q);
            assert!(h.max_abs_diff(&Mat3::identity().scale(1.0 - rho / 6.0)) < 1e-13);
        }
    }

    #[test]
    fn hessian_along_identity_line() {
        // eigenvalue on (1,1,1) is c₁(α)(α/c₁)'(α) at a root
        let q = quad();
        let a = *solve_c1_branches(8.0, q).unwrap().last().unwrap();
        let h = hessian([a; 3], 8.0, q);
        let v = h.mul_vec([1.0, 1.0, 1.0]);
        let lam = (v[0] + v[1] + v[2]) / 3.0;
        let step = 1e-5;
        let fd = (q.alpha_over_c1(a + step) - q.alpha_over_c1(a - step)) / (2.0 * step);
        assert!((lam - q.c1(a) * fd).abs() < 1e-7);
    }

    #[test]
    fn signature_examples() {
        let s = |m: Mat3| signature(&m, ZERO_TOL);
        assert_eq!(s(Mat3::identity().scale(1.0 - 4.0 / 6.0)), Signature::new(3, 0, 0));
        assert_eq!(s(Mat3::identity().scale(1.0 - 8.0 / 6.0)), Signature::new(0, 0, 3));
        assert_eq!(s(Mat3::from_diag([1.0, 0.0, -1.0])), Signature::new(1, 1, 1));
    }

    #[test]
    fn classification_table() {
        let q = quad();
        let c = crit();
        let r1 = classify_with(1.0, q, c).unwrap();
        assert_eq!(r1.len(), 1);
        assert!(r1[0].stable && r1[0].kind == Kind::Uniform);

        let mid = 0.5 * (c.rho_star + 6.0);
        let rm = classify_with(mid, q, c).unwrap();
        assert_eq!(rm.len(), 3);
        let by = |rs: &[EquilibriumRecord], b: &str| rs.iter().find(|r| r.branch == b).unwrap().clone();
        assert!(by(&rm, "uniform").stable);
        assert!(by(&rm, "alpha_plus").stable);
        assert_eq!(by(&rm, "alpha_minus").signature, Signature::new(2, 0, 1));

        let r8 = classify_with(8.0, q, c).unwrap();
        assert_eq!(r8.len(), 4);
        assert_eq!(by(&r8, "alpha_1").signature, Signature::new(3, 0, 0));
        assert_eq!(by(&r8, "uniform").signature, Signature::new(0, 0, 3));
        assert_eq!(by(&r8, "alpha_3").signature, Signature::new(1, 0, 2));
        assert_eq!(by(&r8, "alpha_2").signature, Signature::new(2, 0, 1));
        assert_eq!(r8.iter().filter(|r| r.stable).count(), 1);
        assert_eq!(by(&r8, "alpha_3").d[2], by(&r8, "alpha_3").alpha);

        assert!(matches!(classify_with(6.0, q, c), Err(Error::NearCritical { .. })));
        assert!(classify_with(c.rho_star + 5e-7, q, c).is_err());
    }

    #[test]
    fn signatures_agree_on_orbits() {
        let q = quad();
        let a = *solve_c1_branches(8.0, q).unwrap().last().unwrap();
        let s1 = signature(&hessian([a, a, a], 8.0, q), ZERO_TOL);
        let s2 = signature(&hessian([-a, -a, a], 8.0, q), ZERO_TOL);
        assert_eq!(s1, s2);
        let a2 = *solve_c2_branches(8.0, q).unwrap().last().unwrap();
        let s1 = signature(&hessian([a2, 0.0, 0.0], 8.0, q), ZERO_TOL);
        let s2 = signature(&hessian([0.0, -a2, 0.0], 8.0, q), ZERO_TOL);
        assert_eq!(s1, s2);
    }

    #[test]
    fn phase_diagram_branches() {
        let q = quad();
        let rows = phase_diagram(0.0, 4.0, 5, q).unwrap();
        assert!(rows.iter().all(|r| r.branch == "uniform"));
        let rows = phase_diagram(7.0, 8.0, 2, q).unwrap();
        assert_eq!(rows.len(), 10);
        assert!(phase_diagram(3.0, 3.0, 10, q).is_err());
        let rows = phase_diagram(5.0, 7.0, 3, q).unwrap();
        let at6: Vec<_> = rows.iter().filter(|r| r.rho == 6.0).collect();
        assert!(at6.iter().all(|r| r.stable.is_none()));
        let mut buf = Vec::new();
        to_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("rho,branch,alpha,d1,d2,d3,sig_plus,sig_zero,sig_minus,stable"));
        assert!(text.contains("critical"));
    }

    #[test]
    fn potential_values() {
        let q = quad();
        assert!(potential([0.0; 3], 8.0, q).abs() < 1e-13);
        let a = *solve_c1_branches(8.0, q).unwrap().last().unwrap();
        assert!(potential([a; 3], 8.0, q) < 0.0);
    }
}
