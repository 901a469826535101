//! `kphyst` subcommands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::analysis::{self, decay_window, equilibria, error_bound, frequency_sweep, SteadyRule};
use crate::config::ExperimentConfig;
use crate::plot::{sweep_plot, trace_plot, PlotKind};
use crate::signals::SignalSpec;
use crate::simulator::{find_periodic, simulate, Trace, TraceMeta};
use crate::verification::{self, CampaignReport, CASES_CSV_HEADER};

#[derive(Debug, Parser)]
#[command(name = "kphyst", version, about = "Play-type hysteresis simulation and inversion-free compensation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the compensation loop for every configured gain.
    Simulate(RunArgs),
    /// Steady-state error over the configured frequencies and gains.
    Sweep(RunArgs),
    /// Equilibrium pair of the aggregate envelopes.
    Equilibria(RunArgs),
    /// Periodic solution by fixed-point iteration of the period map.
    Periodic(RunArgs),
    /// Randomized operator and contraction property campaigns.
    Verify(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config value by dotted path, e.g. `solver.dt=1e-5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory; defaults to `output.dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The run finished but a checked property failed.
    Violations,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Sweep(_) => "sweep",
            Command::Equilibria(_) => "equilibria",
            Command::Periodic(_) => "periodic",
            Command::Verify(_) => "verify",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Simulate(a) | Command::Sweep(a) | Command::Equilibria(a) | Command::Periodic(a) | Command::Verify(a) => a,
        }
    }
}

struct Run {
    config: ExperimentConfig,
    out: PathBuf,
}

impl Run {
    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    fn write_trace(&self, name: &str, trace: &Trace) -> Result<()> {
        trace.write_csv(self.create(name)?).with_context(|| format!("writing {name}"))
    }

    fn plot_traces(&self, name: &str, traces: &[(String, &Trace)], kind: PlotKind) -> Result<()> {
        if self.config.output.plots {
            self.write_text(name, &trace_plot(traces, kind)?.to_svg())?;
        }
        Ok(())
    }

    /// `R_inf + H_max` with `R_inf` the largest reference value, when `R_inf < H_max`.
    fn bound(&self, horizon: f64) -> Option<f64> {
        let (_, h_max) = self.config.build_model().ok()?.output_range().ok()?;
        let (_, r_inf) = self.config.signal.bounds(horizon);
        error_bound(r_inf, h_max).ok()
    }
}

fn gain_tag(k: f64) -> String {
    format!("K{k}")
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let args = cli.command.args();
    let config = ExperimentConfig::load(&args.config, &args.set)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(&config.output.dir));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let run = Run { config, out };
    write_meta(&run, cli.command.name(), &args.config)?;
    match &cli.command {
        Command::Simulate(_) => run_simulate(&run),
        Command::Sweep(_) => run_sweep(&run),
        Command::Equilibria(_) => run_equilibria(&run),
        Command::Periodic(_) => run_periodic(&run),
        Command::Verify(_) => run_verify(&run),
    }
}

fn write_meta(run: &Run, subcommand: &str, path: &Path) -> Result<()> {
    let text = format!(
        "tool=kphyst {}\nsubcommand={subcommand}\nconfig={}\nconfig_sha256={}\nseed={}\n",
        env!("CARGO_PKG_VERSION"),
        path.display(),
        run.config.hash()?,
        run.config.analysis.seed
    );
    run.write_text("run.meta", &text)
}

fn run_simulate(run: &Run) -> Result<Outcome> {
    let c = &run.config;
    let mut traces = Vec::new();
    let mut outcome = Outcome::Success;
    for &k in &c.solver.gains {
        let sim = c.sim_config(k)?;
        let trace = simulate(&sim).with_context(|| format!("simulating K = {k}"))?;
        run.write_trace(&format!("trace_{}.csv", gain_tag(k)), &trace)?;
        let max_e = trace.max_abs_error();
        let mut line = format!(
            "simulate K={k}: {} rows, u(end)={:.9}, |e(end)|={:.3e}, max|e|={max_e:.6}",
            trace.len(),
            trace.u[trace.len() - 1],
            trace.e[trace.len() - 1].abs()
        );
        if let Some(bound) = run.bound(c.solver.t_end) {
            let over = trace.e.iter().filter(|e| e.abs() > bound).count();
            line += &format!(", bound {bound} ({over} rows over)");
            if over > 0 {
                outcome = Outcome::Violations;
            }
        }
        let window = c.analysis.rate_window.map(|w| (w[0], w[1])).map_or_else(|| decay_window(&trace, 1e-2, 1e-10), Ok);
        if let Ok(fit) = window.and_then(|w| analysis::convergence_rate(&trace, w)) {
            line += &format!(", ln|e| slope {:.4}/s (R^2 {:.5})", fit.slope, fit.r_squared);
        }
        println!("{line}");
        traces.push((format!("K = {k}"), trace));
    }
    let refs: Vec<(String, &Trace)> = traces.iter().map(|(l, t)| (l.clone(), t)).collect();
    run.plot_traces("error.svg", &refs, PlotKind::ErrorVsT)?;
    run.plot_traces("log_error.svg", &refs, PlotKind::LogErrorVsT)?;
    run.plot_traces("loop.svg", &refs, PlotKind::LoopWVsU)?;
    Ok(outcome)
}

fn run_periodic(run: &Run) -> Result<Outcome> {
    let c = &run.config;
    let mut traces = Vec::new();
    for &k in &c.solver.gains {
        let sim = c.sim_config(k)?;
        let sol = find_periodic(&sim, c.analysis.periodic_tol, c.analysis.periodic_max_iter)
            .with_context(|| format!("periodic solution for K = {k}"))?;
        run.write_trace(&format!("periodic_{}.csv", gain_tag(k)), &sol.trace)?;
        println!(
            "periodic K={k}: u*={:.12}, residual {:.3e} after {} iterations, max|e| over one period {:.6}",
            sol.u_star,
            sol.residual,
            sol.iterations,
            sol.trace.max_abs_error()
        );
        traces.push((format!("K = {k}"), sol.trace));
    }
    let refs: Vec<(String, &Trace)> = traces.iter().map(|(l, t)| (l.clone(), t)).collect();
    run.plot_traces("periodic_error.svg", &refs, PlotKind::ErrorVsT)?;
    run.plot_traces("periodic_loop.svg", &refs, PlotKind::LoopWVsU)?;
    Ok(Outcome::Success)
}

fn run_sweep(run: &Run) -> Result<Outcome> {
    let c = &run.config;
    let SignalSpec::Sinusoid { omega, .. } = c.signal else {
        anyhow::bail!("sweep needs a sinusoid signal");
    };
    let omegas = if c.analysis.sweep_omegas.is_empty() { vec![omega] } else { c.analysis.sweep_omegas.clone() };
    let rule = SteadyRule {
        rel_tol: c.analysis.steady_rel_tol,
        max_periods: c.analysis.steady_max_periods,
        eval_periods: c.analysis.steady_eval_periods,
    };
    let base = c.sim_config(c.solver.gains[0])?;
    let table = frequency_sweep(&base, &omegas, &c.solver.gains, rule)?;
    table.write_csv(run.create("sweep.csv")?)?;
    if c.output.plots {
        run.write_text("sweep.svg", &sweep_plot(&table).to_svg())?;
    }
    let failed = table.rows.iter().filter(|r| r.error.is_some()).count();
    for r in &table.rows {
        if let Some(e) = &r.error {
            eprintln!("sweep cell omega={} K={}: {e}", r.omega, r.gain);
        }
    }
    println!("sweep: {} cells, {failed} failed, max|e| range [{:.3e}, {:.3e}]", table.rows.len(), min_e(&table), max_e(&table));
    Ok(if failed == 0 { Outcome::Success } else { Outcome::Violations })
}

fn min_e(t: &analysis::SweepTable) -> f64 {
    t.rows.iter().map(|r| r.max_abs_e).filter(|e| e.is_finite()).fold(f64::INFINITY, f64::min)
}

fn max_e(t: &analysis::SweepTable) -> f64 {
    t.rows.iter().map(|r| r.max_abs_e).filter(|e| e.is_finite()).fold(f64::NEG_INFINITY, f64::max)
}

fn run_equilibria(run: &Run) -> Result<Outcome> {
    let c = &run.config;
    let model = c.build_model()?;
    let levels = if !c.analysis.levels.is_empty() {
        c.analysis.levels.clone()
    } else if let Some(level) = c.signal.limit() {
        vec![level]
    } else {
        let (lo, hi) = c.signal.bounds(c.solver.t_end);
        vec![lo, hi]
    };
    let mut csv = run.create("equilibria.csv")?;
    writeln!(csv, "level,u1,u1_unbounded,u2,u2_unbounded")?;
    let cell = |p: Option<crate::curves::Preimage>| p.map_or((String::new(), String::new()), |p| (format!("{:?}", p.x), p.unbounded.to_string()));
    for &level in &levels {
        let eq = equilibria(&model, level);
        let (u1, f1) = cell(eq.u1);
        let (u2, f2) = cell(eq.u2);
        writeln!(csv, "{level:?},{u1},{f1},{u2},{f2}")?;
        let show = |x: Option<f64>| x.map_or("none".to_string(), |x| format!("{x:.9}"));
        println!("equilibria R={level}: u1={} u2={}", show(eq.u1()), show(eq.u2()));
    }
    csv.flush()?;

    if c.output.plots {
        let (gamma_l, gamma_r) = model.aggregate_envelopes();
        let xs: Vec<f64> = gamma_l.breakpoints().iter().chain(gamma_r.breakpoints()).copied().collect();
        let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let (lo, hi) = (lo - 0.5, hi + 0.5);
        let n = 400;
        let sweep: Vec<f64> = (0..=2 * n)
            .map(|k| if k <= n { lo + (hi - lo) * k as f64 / n as f64 } else { hi - (hi - lo) * (k - n) as f64 / n as f64 })
            .collect();
        let mut m = model.clone();
        m.init_with(lo, &crate::kp_model::InitialMemory::Virgin)?;
        let mut major = Trace::new(TraceMeta::default());
        let mut left = Trace::new(TraceMeta::default());
        let mut right = Trace::new(TraceMeta::default());
        for (k, &u) in sweep.iter().enumerate() {
            let s = |w: f64| crate::simulator::Sample { t: k as f64, r: 0.0, u, w, e: 0.0 };
            major.push(&s(m.h_update(u)?));
            if k <= n {
                left.push(&s(gamma_l.eval(u)));
                right.push(&s(gamma_r.eval(u)));
            }
        }
        let refs = [("major loop".to_string(), &major), ("Gamma_l".to_string(), &left), ("Gamma_r".to_string(), &right)];
        run.plot_traces("loop.svg", &refs, PlotKind::LoopWVsU)?;
    }
    Ok(Outcome::Success)
}

fn run_verify(run: &Run) -> Result<Outcome> {
    let c = &run.config;
    let a = &c.analysis;
    let mut reports: Vec<CampaignReport> = vec![
        verification::oracle_campaign(a.seed, a.oracle_cases),
        verification::visintin_campaign(a.seed, a.visintin_cases),
        verification::rate_independence_campaign(a.seed, a.warp_cases),
    ];
    if c.signal.period().is_some() {
        let sim = c.sim_config(c.solver.gains[0])?;
        let range = (a.pair_range[0], a.pair_range[1]);
        reports.extend(verification::nonexpansive_campaign(&sim, a.seed, a.pair_count, range)?);
    }
    let mut text = String::new();
    let mut csv = run.create("verify_cases.csv")?;
    writeln!(csv, "{CASES_CSV_HEADER}")?;
    for r in &reports {
        text += &r.to_text();
        r.write_csv_rows(&mut csv)?;
        println!("verify {}", r.summary());
    }
    csv.flush()?;
    run.write_text("verify_report.txt", &text)?;
    Ok(if reports.iter().all(CampaignReport::passed) { Outcome::Success } else { Outcome::Violations })
}
