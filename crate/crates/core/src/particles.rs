//! Exact simulation of the homogeneous jump process.
//!
//! Each particle jumps at rate one; at a jump its attitude is redrawn from
//! `M_{ρ_eff J^N}`, where `J^N` is the empirical flux just before the jump.
//! With `ρ_eff = 1` this is the process whose mean-field limit is the BGK
//! equation for a probability density. Other values give the flux ODE in
//! `K = ρ_eff J` with density `ρ_eff`.

use crate::flow::{relax_flux, FlowOptions};
use crate::output::fmt_g17;
use crate::so3::{haar_sample, ssvd};
use crate::vonmises::{sample_ssvd, Quadrature};
use crate::{Error, Mat3, Result, Rotation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Jumps between full recomputations of the running flux sum.
pub const RECOMPUTE_EVERY: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitLaw {
    Uniform,
    VonMises(Mat3),
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    orientations: Vec<Rotation>,
    sum: Mat3,
    clock: f64,
    jumps: u64,
    rho_eff: f64,
    waiting: Exp<f64>,
}

impl Ensemble {
    pub fn new(orientations: Vec<Rotation>, rho_eff: f64) -> Result<Self> {
        if orientations.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs at least one particle".into()));
        }
        if !(rho_eff >= 0.0 && rho_eff.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho_eff = {rho_eff} must be finite and nonnegative")));
        }
        let waiting = Exp::new(orientations.len() as f64).unwrap();
        let mut ens = Ensemble {
            orientations,
            sum: Mat3::zero(),
            clock: 0.0,
            jumps: 0,
            rho_eff,
            waiting,
        };
        ens.recompute();
        Ok(ens)
    }

    pub fn len(&self) -> usize {
        self.orientations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orientations.is_empty()
    }

    pub fn orientations(&self) -> &[Rotation] {
        &self.orientations
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn jumps(&self) -> u64 {
        self.jumps
    }

    pub fn rho_eff(&self) -> f64 {
        self.rho_eff
    }

    /// `J^N = (1/N) Σ Aᵢ`.
    pub fn flux(&self) -> Mat3 {
        self.sum.scale(1.0 / self.len() as f64)
    }

    fn recompute(&mut self) {
        self.sum = self
            .orientations
            .iter()
            .fold(Mat3::zero(), |acc, a| acc + *a.matrix());
    }

    fn jump<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let i = rng.random_range(0..self.len());
        let k = self.flux().scale(self.rho_eff);
        let new = sample_ssvd(&ssvd(&k), rng)?;
        self.sum = self.sum - *self.orientations[i].matrix() + *new.matrix();
        self.orientations[i] = new;
        self.jumps += 1;
        if self.jumps % RECOMPUTE_EVERY == 0 {
            self.recompute();
        }
        Ok(())
    }

    /// One jump after an exponential waiting time of mean `1/N`.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.clock += self.waiting.sample(rng);
        self.jump(rng)
    }
}

pub fn init_ensemble<R: Rng + ?Sized>(n: usize, law: &InitLaw, rho_eff: f64, rng: &mut R) -> Result<Ensemble> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let orientations = match law {
        InitLaw::Uniform => (0..n).map(|_| haar_sample(rng)).collect(),
        InitLaw::VonMises(j) => {
            let s = ssvd(j);
            (0..n).map(|_| sample_ssvd(&s, rng)).collect::<Result<Vec<_>>>()?
        }
    };
    Ensemble::new(orientations, rho_eff)
}

/// Empirical flux recorded at `t = k·dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxSeries {
    pub n: usize,
    pub rho_eff: f64,
    pub times: Vec<f64>,
    pub fluxes: Vec<Mat3>,
    pub jumps: u64,
}

impl FluxSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Runs until the clock passes `t_end`, recording the flux at every
/// multiple of `checkpoint_dt` up to `t_end`.
pub fn run<R: Rng + ?Sized>(ens: &mut Ensemble, t_end: f64, checkpoint_dt: f64, rng: &mut R) -> Result<FluxSeries> {
    if !(t_end > 0.0) || !(checkpoint_dt > 0.0) {
        return Err(Error::InvalidArgument("T and checkpoint_dt must be positive".into()));
    }
    let t0 = ens.clock();
    let n_chk = ((t_end / checkpoint_dt) * (1.0 + 1e-12)).floor() as usize;
    let mut series = FluxSeries {
        n: ens.len(),
        rho_eff: ens.rho_eff,
        times: Vec::with_capacity(n_chk + 1),
        fluxes: Vec::with_capacity(n_chk + 1),
        jumps: 0,
    };
    let jumps0 = ens.jumps;
    let mut k = 0;
    while ens.clock - t0 < t_end {
        let next = ens.clock + ens.waiting.sample(rng);
        // the state is constant on [clock, next)
        while k <= n_chk && t0 + k as f64 * checkpoint_dt < next {
            series.times.push(k as f64 * checkpoint_dt);
            series.fluxes.push(ens.flux());
            k += 1;
        }
        ens.clock = next;
        ens.jump(rng)?;
    }
    while k <= n_chk {
        series.times.push(k as f64 * checkpoint_dt);
        series.fluxes.push(ens.flux());
        k += 1;
    }
    series.jumps = ens.jumps - jumps0;
    Ok(series)
}

/// Independent runs on separate streams of one seed; stream 0 is reserved
/// for the primary run.
#[allow(clippy::too_many_arguments)]
pub fn run_replicas(
    n: usize,
    law: &InitLaw,
    rho_eff: f64,
    t_end: f64,
    checkpoint_dt: f64,
    seed: u64,
    streams: std::ops::Range<u64>,
) -> Result<Vec<FluxSeries>> {
    streams
        .into_par_iter()
        .map(|s| {
            let mut rng = stream_rng(seed, s);
            let mut ens = init_ensemble(n, law, rho_eff, &mut rng)?;
            run(&mut ens, t_end, checkpoint_dt, &mut rng)
        })
        .collect()
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mean-field flux `J_ODE(t)` started from the first recorded flux,
/// evaluated at the series times.
pub fn meanfield_fluxes(series: &FluxSeries, quad: &Quadrature, opts: &FlowOptions) -> Result<Vec<Mat3>> {
    if series.is_empty() {
        return Ok(Vec::new());
    }
    let j0 = series.fluxes[0];
    let t_end = *series.times.last().unwrap();
    let rho = series.rho_eff;
    if rho == 0.0 || t_end == 0.0 {
        return Ok(series.times.iter().map(|&t| j0.scale((-t).exp())).collect());
    }
    let opts = FlowOptions {
        t_max: t_end,
        stop_on_convergence: false,
        max_step: opts.max_step.min(0.05),
        ..*opts
    };
    let rel = relax_flux(&j0.scale(rho), rho, &opts, quad)?;
    Ok(series.times.iter().map(|&t| rel.flux_at(t).scale(1.0 / rho)).collect())
}

/// `‖J^N(t_k) - J_ODE(t_k)‖_F` for each checkpoint.
pub fn meanfield_deviation(series: &FluxSeries, quad: &Quadrature, opts: &FlowOptions) -> Result<Vec<f64>> {
    let ode = meanfield_fluxes(series, quad, opts)?;
    Ok(series
        .fluxes
        .iter()
        .zip(&ode)
        .map(|(a, b)| (*a - *b).frobenius())
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldReport {
    pub n: usize,
    pub rho_eff: f64,
    pub times: Vec<f64>,
    pub deviations: Vec<f64>,
    /// `4 c(t)/√N`, with `c(t)` the replica RMS deviation times `√N`.
    pub band: Vec<f64>,
    pub replicas: usize,
    /// Fraction of checkpoints after `t = 0` inside the band.
    pub coverage: Option<f64>,
    pub max_deviation: f64,
}

/// Deviation of `series` from its mean-field ODE and the fraction of
/// checkpoints inside the band calibrated on `replicas`.
pub fn compare_meanfield(
    series: &FluxSeries,
    replicas: &[FluxSeries],
    quad: &Quadrature,
    opts: &FlowOptions,
) -> Result<MeanFieldReport> {
    let mut report = MeanFieldReport {
        n: series.n,
        rho_eff: series.rho_eff,
        replicas: replicas.len(),
        ..Default::default()
    };
    if series.is_empty() {
        return Ok(report);
    }
    report.times = series.times.clone();
    report.deviations = meanfield_deviation(series, quad, opts)?;
    report.max_deviation = report.deviations.iter().cloned().fold(0.0, f64::max);
    if replicas.is_empty() {
        return Ok(report);
    }
    let devs = replicas
        .iter()
        .map(|r| {
            if r.times != series.times {
                return Err(Error::InvalidArgument("replica checkpoints differ from the series".into()));
            }
            meanfield_deviation(r, quad, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let sqrt_n = (series.n as f64).sqrt();
    report.band = (0..series.len())
        .map(|k| {
            let ms = devs.iter().map(|d| d[k] * d[k]).sum::<f64>() / devs.len() as f64;
            let c = ms.sqrt() * sqrt_n;
            4.0 * c / sqrt_n
        })
        .collect();
    let idx: Vec<usize> = (0..series.len()).filter(|&k| series.times[k] > 0.0).collect();
    if !idx.is_empty() {
        let inside = idx
            .iter()
            .filter(|&&k| report.deviations[k] <= report.band[k])
            .count();
        report.coverage = Some(inside as f64 / idx.len() as f64);
    }
    Ok(report)
}

pub const SERIES_HEADER: [&str; 11] = [
    "t", "j11", "j12", "j13", "j21", "j22", "j23", "j31", "j32", "j33", "frobenius_norm",
];

pub fn export_series_csv<W: Write>(series: &FluxSeries, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SERIES_HEADER)?;
    for (t, j) in series.times.iter().zip(&series.fluxes) {
        let mut row = vec![fmt_g17(*t)];
        row.extend(j.entries().iter().map(|&x| fmt_g17(x)));
        row.push(fmt_g17(j.frobenius()));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}
