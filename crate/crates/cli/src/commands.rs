use crate::input::{parse_matrix, RhoSpec};
use crate::settings::{pick, Format, Settings};
use serde::Serialize;
use so3_bgk::equilibria::{self, critical_densities};
use so3_bgk::flow::{self, random_flux, relax_flux, summarize};
use so3_bgk::hydro;
use so3_bgk::output::Manifest;
use so3_bgk::particles::{self, compare_meanfield, run_replicas, stream_rng, InitLaw};
use so3_bgk::{Error, Mat3, Result};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

struct Outputs {
    dir: PathBuf,
    manifest: Manifest,
}

impl Outputs {
    fn new(s: &Settings, command: &str, args: Vec<String>, seed: Option<u64>, extra: serde_json::Value) -> Result<Self> {
        std::fs::create_dir_all(&s.out)?;
        let mut config = s.json();
        if let (Some(obj), serde_json::Value::Object(more)) = (config.as_object_mut(), extra) {
            obj.extend(more);
        }
        Ok(Outputs {
            dir: s.out.clone(),
            manifest: Manifest::new(command, args, seed, config),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.manifest.outputs.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        use std::io::Write;
        writeln!(w)?;
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let path = self.dir.join("manifest.json");
        self.manifest.write(&path)?;
        for o in &self.manifest.outputs {
            println!("{}", self.dir.join(o).display());
        }
        println!("{}", path.display());
        Ok(())
    }
}

fn table_name(stem: &str, f: Format) -> String {
    match f {
        Format::Csv => format!("{stem}.csv"),
        Format::Json => format!("{stem}.json"),
    }
}

pub fn phase_diagram(s: &Settings, args: Vec<String>) -> Result<()> {
    let (min, max, n) = match s.rho_spec()? {
        RhoSpec::Range { min, max, n } => (min, max, n),
        RhoSpec::List(_) => return Err(Error::InvalidArgument("phase-diagram needs --rho a:b:n".into())),
    };
    let quad = s.quad()?;
    let rows = equilibria::phase_diagram(min, max, n, &quad)?;
    let crit = critical_densities(&quad);
    let mut out = Outputs::new(s, "phase-diagram", args, None, serde_json::json!({}))?;
    let name = table_name("phase_diagram", s.format);
    let w = out.create(&name)?;
    match s.format {
        Format::Csv => equilibria::to_csv(&rows, w)?,
        Format::Json => serde_json::to_writer_pretty(w, &rows)?,
    }
    out.json("critical_densities.json", &crit)?;
    out.finish()
}

fn read_matrix(path: &Path) -> Result<Mat3> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    parse_matrix(&text)
}

pub fn relax(s: &Settings, input: Option<&Path>, random: bool, args: Vec<String>) -> Result<()> {
    let rho = s.single_rho()?;
    let j0 = match (input, random) {
        (Some(p), false) => read_matrix(p)?,
        (None, true) => random_flux(1.0, &mut stream_rng(s.seed, 0)),
        _ => return Err(Error::InvalidArgument("give exactly one of --input or --random".into())),
    };
    let quad = s.quad()?;
    let crit = critical_densities(&quad);
    let rel = relax_flux(&j0, rho, &s.flow(), &quad)?;
    let summary = summarize(&rel, &crit, &quad);
    let seed = random.then_some(s.seed);
    let mut out = Outputs::new(s, "relax", args, seed, serde_json::json!({ "j0": j0 }))?;
    let name = table_name("trajectory", s.format);
    let w = out.create(&name)?;
    match s.format {
        Format::Csv => flow::export_csv(&rel.trajectory, w)?,
        Format::Json => serde_json::to_writer_pretty(w, &rel.trajectory)?,
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        j0: Mat3,
        j_eq: Mat3,
        #[serde(flatten)]
        flow: &'a flow::FlowSummary,
    }
    out.json(
        "summary.json",
        &Summary {
            j0,
            j_eq: rel.j_eq,
            flow: &summary,
        },
    )?;
    out.finish()
}

#[derive(Clone, Debug, Serialize)]
pub struct SimParams {
    pub n: usize,
    pub rho_eff: f64,
    pub time: f64,
    pub checkpoint_dt: f64,
    pub replicas: u64,
    pub init_kappa: f64,
}

impl SimParams {
    pub fn resolve(
        s: &Settings,
        n: Option<usize>,
        rho_eff: Option<f64>,
        time: Option<f64>,
        checkpoint_dt: Option<f64>,
        replicas: Option<u64>,
        init_kappa: Option<f64>,
    ) -> Result<Self> {
        let f = &s.file;
        let p = SimParams {
            n: pick(n, f, "n")?.unwrap_or(20000),
            rho_eff: pick(rho_eff, f, "rho-eff")?.unwrap_or(8.0),
            time: pick(time, f, "time")?.unwrap_or(10.0),
            checkpoint_dt: pick(checkpoint_dt, f, "checkpoint-dt")?.unwrap_or(0.1),
            replicas: pick(replicas, f, "replicas")?.unwrap_or(10),
            init_kappa: pick(init_kappa, f, "init-kappa")?.unwrap_or(0.5),
        };
        if p.n == 0 {
            return Err(Error::InvalidArgument("--n must be at least 1".into()));
        }
        if !(p.time > 0.0) || !(p.checkpoint_dt > 0.0) {
            return Err(Error::InvalidArgument("--time and --checkpoint-dt must be positive".into()));
        }
        if !(p.rho_eff >= 0.0) || !p.rho_eff.is_finite() || !p.init_kappa.is_finite() {
            return Err(Error::InvalidArgument("--rho-eff must be nonnegative and --init-kappa finite".into()));
        }
        Ok(p)
    }
}

pub fn simulate(s: &Settings, p: &SimParams, args: Vec<String>) -> Result<()> {
    let quad = s.quad()?;
    let law = if p.init_kappa == 0.0 {
        InitLaw::Uniform
    } else {
        InitLaw::VonMises(Mat3::identity().scale(p.init_kappa))
    };
    let all = run_replicas(p.n, &law, p.rho_eff, p.time, p.checkpoint_dt, s.seed, 0..p.replicas + 1)?;
    let report = compare_meanfield(&all[0], &all[1..], &quad, &s.flow())?;
    let extra = serde_json::to_value(p)?;
    let mut out = Outputs::new(s, "simulate", args, Some(s.seed), extra)?;
    let name = table_name("flux_series", s.format);
    let w = out.create(&name)?;
    match s.format {
        Format::Csv => particles::export_series_csv(&all[0], w)?,
        Format::Json => serde_json::to_writer_pretty(w, &all[0])?,
    }
    out.json("meanfield_report.json", &report)?;
    out.finish()
}

pub fn coeffs(s: &Settings, args: Vec<String>) -> Result<()> {
    let rhos = s.rho_spec()?.values();
    let quad = s.quad()?;
    let crit = critical_densities(&quad);
    let rows = hydro::coefficient_table(&rhos, &quad, &crit)?;
    let mut out = Outputs::new(s, "coeffs", args, None, serde_json::json!({}))?;
    let name = table_name("coefficients", s.format);
    let w = out.create(&name)?;
    match s.format {
        Format::Csv => hydro::to_csv(&rows, w)?,
        Format::Json => serde_json::to_writer_pretty(w, &rows)?,
    }
    out.finish()
}
