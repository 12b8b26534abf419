//! Invariant suites run from the command line.

use crate::settings::Settings;
use so3_bgk::equilibria::{classify_with, critical_densities, potential, Kind};
use so3_bgk::flow::{integrate, random_flux, rhs, FlowOptions};
use so3_bgk::hydro::{alpha_of_rho, coefficient_table};
use so3_bgk::particles::{self, init_ensemble, stream_rng, InitLaw};
use so3_bgk::so3::{horn_check, polar_rotation, ssvd, Quaternion, Rotation3};
use so3_bgk::vonmises::{haar, Quadrature, VonMisesParams};
use so3_bgk::{Error, Mat3, Result};

pub const SUITES: [&str; 8] = [
    "haar",
    "quaternion",
    "ssvd",
    "vonmises",
    "equilibria",
    "flow",
    "particles",
    "hydro",
];

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Check {
    Check { name, pass, detail }
}

pub fn run(suite: &str, s: &Settings) -> Result<bool> {
    let selected: Vec<&str> = if suite == "all" {
        SUITES.to_vec()
    } else if SUITES.contains(&suite) {
        vec![suite]
    } else {
        return Err(Error::InvalidArgument(format!(
            "unknown suite '{suite}'; available: {}, all",
            SUITES.join(", ")
        )));
    };
    let quad = s.quad()?;
    let mut all_pass = true;
    println!("{:<12} {:<34} {:<6} detail", "suite", "check", "result");
    for (k, name) in selected.iter().enumerate() {
        let seed = s.seed.wrapping_add(k as u64);
        let checks = match *name {
            "haar" => haar_suite(seed),
            "quaternion" => quaternion_suite(seed),
            "ssvd" => ssvd_suite(seed),
            "vonmises" => vonmises_suite(seed, &quad)?,
            "equilibria" => equilibria_suite(&quad)?,
            "flow" => flow_suite(seed, &quad)?,
            "particles" => particles_suite(seed)?,
            "hydro" => hydro_suite(&quad)?,
            _ => unreachable!(),
        };
        for c in checks {
            all_pass &= c.pass;
            let tag = if c.pass { "PASS" } else { "FAIL" };
            println!("{:<12} {:<34} {:<6} {}", name, c.name, tag, c.detail);
        }
    }
    println!("{}", if all_pass { "all checks passed" } else { "some checks failed" });
    Ok(all_pass)
}

fn haar_suite(seed: u64) -> Vec<Check> {
    let mut rng = stream_rng(seed, 0);
    let n = 4000;
    let mut worst: f64 = 0.0;
    let mut mean = Mat3::zero();
    let mut trace2 = 0.0;
    for _ in 0..n {
        let a = haar(&mut rng);
        worst = worst.max(a.matrix().orthogonality_defect()).max((a.matrix().det() - 1.0).abs());
        mean = mean + a.matrix().scale(1.0 / n as f64);
        trace2 += a.matrix().trace().powi(2) / n as f64;
    }
    // entries have variance 1/3; E[(tr A)²] = 1 with variance 1
    let bound = 5.0 * (1.0 / (3.0 * n as f64)).sqrt();
    let dev = mean.entries().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    vec![
        check("samples are rotations", worst < 1e-12, format!("defect {worst:.1e}")),
        check("mean is zero", dev < bound, format!("max |mean| {dev:.4} < {bound:.4}")),
        check(
            "second trace moment is one",
            (trace2 - 1.0).abs() < 5.0 / (n as f64).sqrt(),
            format!("{trace2:.4}"),
        ),
    ]
}

fn quaternion_suite(seed: u64) -> Vec<Check> {
    let mut rng = stream_rng(seed, 0);
    let mut round: f64 = 0.0;
    let mut product: f64 = 0.0;
    for _ in 0..500 {
        let a = haar(&mut rng);
        let b = haar(&mut rng);
        let qa = a.quaternion_class().representative();
        let qb = b.quaternion_class().representative();
        round = round.max(Rotation3::from_quaternion(&qa).matrix().max_abs_diff(a.matrix()));
        let ab = Rotation3::from_quaternion(&qa.mul(&qb));
        product = product.max(ab.matrix().max_abs_diff(a.compose(&b).matrix()));
    }
    let q = Quaternion::new(0.3, -0.1, 0.8, 0.5);
    let sign = Rotation3::from_quaternion(&q)
        .matrix()
        .max_abs_diff(Rotation3::from_quaternion(&q.neg()).matrix());
    vec![
        check("rotation round trip", round < 1e-12, format!("{round:.1e}")),
        check("product is a homomorphism", product < 1e-12, format!("{product:.1e}")),
        check("sign invariance", sign < 1e-15, format!("{sign:.1e}")),
    ]
}

fn ssvd_suite(seed: u64) -> Vec<Check> {
    let mut rng = stream_rng(seed, 0);
    let mut recon: f64 = 0.0;
    let mut cone = true;
    let mut horn = true;
    let mut polar: f64 = 0.0;
    for _ in 0..500 {
        let m = random_flux(2.0, &mut rng);
        let s = ssvd(&m);
        recon = recon.max(s.reconstruct().max_abs_diff(&m));
        cone &= s.d.in_cone(1e-12);
        let a = haar(&mut rng);
        horn &= horn_check(a.matrix().diag());
        if m.det() > 1e-6 {
            let r = polar_rotation(&m).unwrap();
            polar = polar.max(r.matrix().max_abs_diff(s.rotation().matrix()));
        }
    }
    vec![
        check("reconstruction", recon < 1e-12, format!("{recon:.1e}")),
        check("diagonal in the cone", cone, String::new()),
        check("rotation diagonals satisfy Horn", horn, String::new()),
        check("polar rotation equals PQ", polar < 1e-9, format!("{polar:.1e}")),
    ]
}

fn vonmises_suite(seed: u64, quad: &Quadrature) -> Result<Vec<Check>> {
    let mut rng = stream_rng(seed, 0);
    let z0 = quad.log_partition([0.0; 3]).abs();
    let j = random_flux(1.5, &mut rng);
    let law = VonMisesParams::new(j, quad);
    let exact = quad.moment_matrix(&j);
    let n = 20000;
    let mut mean = Mat3::zero();
    for _ in 0..n {
        mean = mean + law.sample(&mut rng)?.matrix().scale(1.0 / n as f64);
    }
    let dev = mean.max_abs_diff(&exact);
    let bound = 5.0 / (n as f64).sqrt();
    // the log partition is invariant under the SSVD frame change
    let frame = (VonMisesParams::new(ssvd(&j).d.matrix(), quad).log_z - law.log_z).abs();
    Ok(vec![
        check("uniform normalisation", z0 < 1e-13, format!("{z0:.1e}")),
        check("sampler mean matches moments", dev < bound, format!("{dev:.4} < {bound:.4}")),
        check("frame invariance of log Z", frame < 1e-13, format!("{frame:.1e}")),
    ])
}

fn equilibria_suite(quad: &Quadrature) -> Result<Vec<Check>> {
    let crit = critical_densities(quad);
    let rho_c = (crit.rho_c - 6.0).abs();
    let ordered = crit.rho_star < crit.rho_c;
    let mut kinds = true;
    let mut stable_uniform = true;
    for rho in [1.0, 5.0, 8.0, 12.0] {
        let recs = classify_with(rho, quad, &crit)?;
        kinds &= recs.iter().any(|r| r.kind == Kind::Uniform);
        if rho > crit.rho_c {
            kinds &= recs.iter().any(|r| r.kind == Kind::TypeB && r.stable);
        }
        let u = recs.iter().find(|r| r.kind == Kind::Uniform);
        stable_uniform &= u.map(|r| r.stable == (rho < crit.rho_c)).unwrap_or(false);
    }
    Ok(vec![
        check("rho_c equals 6", rho_c < 1e-8, format!("{rho_c:.1e}")),
        check("rho_star below rho_c", ordered, format!("{:.5}", crit.rho_star)),
        check("stable type B above rho_c", kinds, String::new()),
        check("uniform stable iff rho < rho_c", stable_uniform, String::new()),
    ])
}

fn flow_suite(seed: u64, quad: &Quadrature) -> Result<Vec<Check>> {
    let mut rng = stream_rng(seed, 0);
    let opts = FlowOptions {
        t_max: 30.0,
        ..Default::default()
    };
    let mut monotone = true;
    let mut cone: f64 = 0.0;
    for k in 0..6 {
        let s = ssvd(&random_flux(1.0, &mut rng));
        let rho = 2.0 + 2.0 * k as f64;
        let tr = integrate(s.d.d, rho, &opts, quad)?;
        monotone &= tr.potentials.windows(2).all(|w| w[1] <= w[0] + 1e-9);
        cone = cone.max(tr.cone_violation);
    }
    let d = [1.3, 0.4, -0.2];
    let f = rhs(d, 7.0, quad);
    let g = rhs([-d[1], d[0], -d[2]], 7.0, quad);
    let equi = (g[0] + f[1]).abs().max((g[1] - f[0]).abs()).max((g[2] + f[2]).abs());
    // the field is minus the gradient of the potential
    let h = 1e-5;
    let mut grad: f64 = 0.0;
    for i in 0..3 {
        let mut p = d;
        let mut m = d;
        p[i] += h;
        m[i] -= h;
        let fd = (potential(p, 7.0, quad) - potential(m, 7.0, quad)) / (2.0 * h);
        grad = grad.max((fd + f[i]).abs());
    }
    Ok(vec![
        check("potential decreases", monotone, String::new()),
        check("trajectories stay in the cone", cone <= 1e-7, format!("{cone:.1e}")),
        check("signed permutation equivariance", equi < 1e-11, format!("{equi:.1e}")),
        check("field aligned with the gradient", grad < 1e-6, format!("{grad:.1e}")),
    ])
}

fn particles_suite(seed: u64) -> Result<Vec<Check>> {
    let law = InitLaw::VonMises(Mat3::identity());
    let series = |s: u64| -> Result<_> {
        let mut rng = stream_rng(s, 0);
        let mut ens = init_ensemble(200, &law, 8.0, &mut rng)?;
        let out = particles::run(&mut ens, 1.0, 0.25, &mut rng)?;
        let worst = ens
            .orientations()
            .iter()
            .map(|a| a.matrix().orthogonality_defect())
            .fold(0.0f64, f64::max);
        Ok((out, worst))
    };
    let (a, worst) = series(seed)?;
    let (b, _) = series(seed)?;
    let cube = a.fluxes.iter().all(|j| j.entries().iter().all(|x| x.abs() <= 1.0 + 1e-12));
    Ok(vec![
        check("orientations stay rotations", worst < 1e-12, format!("{worst:.1e}")),
        check("fluxes stay in the cube", cube, String::new()),
        check("same seed gives the same series", a == b, format!("{} jumps", a.jumps)),
    ])
}

fn hydro_suite(quad: &Quadrature) -> Result<Vec<Check>> {
    let crit = critical_densities(quad);
    let mut resid: f64 = 0.0;
    for rho in [5.0, 7.0, 10.0, 20.0] {
        let a = alpha_of_rho(rho, quad, &crit)?;
        resid = resid.max((a - rho * quad.c1(a)).abs());
    }
    let rows = coefficient_table(&[7.0, 8.0, 10.0], quad, &crit)?;
    let finite = rows
        .iter()
        .all(|r| r.c2_tilde.is_finite() && r.c3_tilde.is_finite() && r.c4.is_finite());
    Ok(vec![
        check("alpha solves the fixed point", resid < 1e-9, format!("{resid:.1e}")),
        check("coefficients are finite", finite, format!("{} rows", rows.len())),
    ])
}
