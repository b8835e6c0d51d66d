use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cbic::config::ModelFile;
use cbic::ergodicity::{
    compute_rate_certificate_with, estimate_stationary, estimate_wv_decay, write_decay_csv,
    CertificateError,
};
use cbic::generator::{
    apply_generator, lv_closed_form, lyapunov_certify, write_margin_csv, CertifyError,
    WeightFunction,
};
use cbic::mechanisms::ModelSpec;
use cbic::simulator::stats::{write_binary_dump, write_stats_csv};
use cbic::simulator::{
    ensemble_stats, simulate_coupled_ensemble, simulate_ensemble, LassoSign, SimConfig,
};

const AFTER_HELP: &str = "\
Output files (written to --out, default the current directory):
  simulate         stats.csv    t,mean,variance,se,q05,q25,q50,q75,q95,exploded
                   paths.bin    little-endian dump of every recorded path
  couple           coupling.csv path,coupling_time,up_events,down_events,exploded
  rate             margins.csv  x,y,lhs,rhs,margin   (grid check of the contraction inequality)
                   certificate.txt
  lyapunov         lyapunov.csv x,margin             (L V + C1 V - C0, must be <= 0)
  check-generator  generator.csv x,quadrature,closed_form,abs_diff
  wv               decay.csv    t,wv_upper,se,n_uncoupled
  stationary       stationary.csv x,probability

Exit codes: 0 success, 1 model or condition failure, 2 usage or config error.";

#[derive(Parser)]
#[command(name = "cbic", version, about = "Simulate and certify branching processes with immigration and competition", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate independent paths and write ensemble statistics
    Simulate(Common),
    /// Simulate the coupled pair from (x0, y0) and log coupling times
    Couple(Common),
    /// Compute the ergodicity rate certificate
    Rate(Common),
    /// Find Lyapunov constants L V <= C0 - C1 V
    Lyapunov(Common),
    /// Compare the quadrature generator with the closed form for the weight
    CheckGenerator(Common),
    /// Estimate the weighted total-variation decay curve from the coupled pair
    Wv(Common),
    /// Estimate the stationary law from two starting points
    Stationary(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightArg {
    V1,
    Vlog,
}

#[derive(Args)]
struct Common {
    /// Model file (TOML)
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum)]
    weight: Option<WeightArg>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    paths: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Small-jump cutoff
    #[arg(long)]
    eps: Option<f64>,
    /// Grid size: validation grid side for `rate`, time points for `wv`,
    /// evaluation points for `check-generator`
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    grid: Option<u64>,
}

enum Failure {
    Usage(String),
    Model(String),
}

impl From<cbic::Error> for Failure {
    fn from(e: cbic::Error) -> Self {
        match e {
            cbic::Error::Config(m) | cbic::Error::InvalidParameter(m) => Failure::Usage(m),
            other => Failure::Model(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(format!("i/o: {e}"))
    }
}

struct Loaded {
    file: ModelFile,
    model: ModelSpec,
    sim: SimConfig,
    weight: WeightFunction,
}

fn load(c: &Common) -> Result<Loaded, Failure> {
    let file = ModelFile::load(&c.model)?;
    let model = file.model()?;
    let mut sim = file.sim_config();
    if let Some(n) = c.paths {
        sim.n_paths = n as usize;
    }
    if let Some(dt) = c.dt {
        sim.dt = dt;
    }
    if let Some(t) = c.t_end {
        sim.t_end = t;
    }
    if let Some(s) = c.seed {
        sim.seed = s;
    }
    if c.eps.is_some() {
        sim.eps = c.eps;
    }
    if sim.n_paths == 0 {
        return Err(Failure::Usage("sim.paths must be at least 1".into()));
    }
    let weight = match c.weight {
        Some(WeightArg::V1) => WeightFunction::V1,
        Some(WeightArg::Vlog) => WeightFunction::VLog,
        None => file.weight()?.unwrap_or(WeightFunction::V1),
    };
    fs::create_dir_all(&c.out)
        .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", c.out.display())))?;
    Ok(Loaded {
        file,
        model,
        sim,
        weight,
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    let p = dir.join(name);
    File::create(&p)
        .map(BufWriter::new)
        .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", p.display())))
}

fn simulate(c: &Common) -> Result<(), Failure> {
    let l = load(c)?;
    let x0 = l.file.sim.x0.unwrap_or(1.0);
    let paths = simulate_ensemble(&l.model, x0, &l.sim)?;
    let stats = ensemble_stats(&paths);
    let mut w = create(&c.out, "stats.csv")?;
    write_stats_csv(&mut w, &stats)?;
    w.flush()?;
    let mut w = create(&c.out, "paths.bin")?;
    write_binary_dump(&mut w, &paths)?;
    w.flush()?;
    if let Some(last) = stats.last() {
        println!(
            "t = {}: mean {:.6e} (se {:.2e}), {} of {} paths exploded",
            last.time,
            last.summary.mean,
            last.summary.se,
            paths.iter().filter(|p| p.exploded).count(),
            paths.len()
        );
    }
    Ok(())
}

fn couple(c: &Common) -> Result<(), Failure> {
    let l = load(c)?;
    let x0 = l.file.sim.x0.unwrap_or(1.0);
    let y0 = l.file.sim.y0.unwrap_or(0.0);
    let (hi, lo) = if x0 >= y0 { (x0, y0) } else { (y0, x0) };
    let paths = simulate_coupled_ensemble(&l.model, hi, lo, &l.sim)?;
    let mut w = create(&c.out, "coupling.csv")?;
    writeln!(w, "path,coupling_time,up_events,down_events,exploded")?;
    for (i, p) in paths.iter().enumerate() {
        let up = p
            .lasso_events
            .iter()
            .filter(|e| e.sign == LassoSign::Up)
            .count();
        let down = p.lasso_events.len() - up;
        writeln!(
            w,
            "{i},{},{up},{down},{}",
            p.coupling_time, p.exploded as u8
        )?;
    }
    w.flush()?;
    let coupled = paths.iter().filter(|p| p.coupled()).count();
    println!(
        "{coupled} of {} pairs coupled by t = {}",
        paths.len(),
        l.sim.t_end
    );
    Ok(())
}

fn rate(c: &Common) -> Result<(), Failure> {
    let l = load(c)?;
    let mut opts = l.file.certificate_options();
    if let Some(g) = c.grid {
        opts.validation_grid = g as usize;
    }
    match compute_rate_certificate_with(&l.model, &l.weight, &opts) {
        Ok(cert) => {
            let mut report = Vec::new();
            cert.write_report(&mut report)?;
            io::stdout().write_all(&report)?;
            fs::write(c.out.join("certificate.txt"), &report)?;
            if let Some(v) = &cert.validation {
                let mut w = create(&c.out, "margins.csv")?;
                write_margin_csv(&mut w, &v.rows)?;
                w.flush()?;
            }
            Ok(())
        }
        Err(CertificateError::Numeric(e)) => Err(e.into()),
        Err(e) => Err(Failure::Model(e.to_string())),
    }
}

fn lyapunov(c: &Common) -> Result<(), Failure> {
    let l = load(c)?;
    match lyapunov_certify(&l.model, &l.weight) {
        Ok(cert) => {
            println!("Lyapunov certificate for weight {}", cert.weight.name());
            println!("  C0 = {:.12e}", cert.c0);
            println!("  C1 = {:.12e}", cert.c1);
            println!("  asymptotic margin = {:.6e}", cert.asymptotic_margin);
            let mut w = create(&c.out, "lyapunov.csv")?;
            writeln!(w, "x,margin")?;
            for (x, m) in &cert.margin_report {
                writeln!(w, "{x:e},{m:e}")?;
            }
            w.flush()?;
            Ok(())
        }
        Err(CertifyError::Numeric(e)) => Err(e.into()),
        Err(CertifyError::Condition(f)) => Err(Failure::Model(f.to_string())),
    }
}

fn check_generator(c: &Common) -> Result<(), Failure> {
    let l = load(c)?;
    let br = &l.model.branching;
    let pp = br.psi_prime_at_zero();
    println!("Psi'(0+) = {:e} ({})", pp.value, pp.class);
    for (name, v) in [
        ("Grey's condition", br.grey_condition()),
        ("conservative", br.conservative_condition()),
    ] {
        match v {
            Ok(v) => println!(
                "{name}: {} ({})",
                if v.holds { "holds" } else { "fails" },
                v.note
            ),
            Err(e) => println!("{name}: {e}"),
        }
    }
    let n = c.grid.unwrap_or(25) as usize;
    let xs: Vec<f64> = std::iter::once(0.0)
        .chain((0..n - 1).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / (n - 2).max(1) as f64)))
        .collect();
    let mut w = create(&c.out, "generator.csv")?;
    writeln!(w, "x,quadrature,closed_form,abs_diff")?;
    let mut worst = 0.0f64;
    for x in xs {
        let q = apply_generator(&l.model, &l.weight, x)?;
        let cf = lv_closed_form(&l.model, &l.weight, x)?;
        let d = (q - cf).abs();
        worst = worst.max(d / cf.abs().max(1.0));
        writeln!(w, "{x:e},{q:e},{cf:e},{d:e}")?;
    }
    w.flush()?;
    println!(
        "largest relative difference for {}: {worst:.3e}",
        l.weight.name()
    );
    if worst > 1e-6 {
        return Err(Failure::Model(format!(
            "generator mismatch {worst:e} exceeds 1e-6"
        )));
    }
    Ok(())
}

fn wv(c: &Common) -> Result<(), Failure> {
    let l = load(c)?;
    let x0 = l.file.sim.x0.unwrap_or(1.0);
    let y0 = l.file.sim.y0.unwrap_or(0.0);
    let (hi, lo) = if x0 >= y0 { (x0, y0) } else { (y0, x0) };
    let times = match (&l.file.sim.times, c.grid) {
        (Some(t), None) => t.clone(),
        (_, g) => {
            let n = g.unwrap_or(11) as usize;
            (0..n)
                .map(|i| l.sim.t_end * i as f64 / (n - 1) as f64)
                .collect()
        }
    };
    let d = estimate_wv_decay(&l.model, hi, lo, &l.weight, &l.sim, &times)?;
    let mut w = create(&c.out, "decay.csv")?;
    write_decay_csv(&mut w, &d)?;
    w.flush()?;
    println!(
        "fitted rate {:.6e} (se {:.2e}) over {} points, prefactor {:.4e}",
        d.fitted_rate,
        d.fitted_rate_se,
        d.fit_window.len(),
        d.fitted_prefactor
    );
    Ok(())
}

fn stationary(c: &Common) -> Result<(), Failure> {
    let l = load(c)?;
    let sc = l.file.stationary_config();
    let s = estimate_stationary(&l.model, &l.sim, &sc, &l.weight)?;
    let mut w = create(&c.out, "stationary.csv")?;
    writeln!(w, "x,probability")?;
    for (x, p) in &s.law.atoms {
        writeln!(w, "{x:e},{p:e}")?;
    }
    w.flush()?;
    println!("mean {:.6e} (se {:.2e})", s.mean.mean, s.mean.se);
    println!(
        "two-start distance {:.4e}, threshold {:.4e}",
        s.distance, s.threshold
    );
    if !s.converged {
        return Err(Failure::Model(
            "two-start diagnostic exceeds its threshold".into(),
        ));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let r = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Couple(c) => couple(c),
        Command::Rate(c) => rate(c),
        Command::Lyapunov(c) => lyapunov(c),
        Command::CheckGenerator(c) => check_generator(c),
        Command::Wv(c) => wv(c),
        Command::Stationary(c) => stationary(c),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Model(m)) => {
            eprintln!("{m}");
            ExitCode::from(1)
        }
    }
}
