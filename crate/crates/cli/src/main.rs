use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use indian_core::dynamics::{default_window, euler_flow, fit_value_rate};
use indian_core::harness::check::run_all;
use indian_core::harness::report::{emit_flow_csv, fmt_f64};
use indian_core::harness::runner::{run_with_schedules, theta0_for};
use indian_core::harness::{
    emit_svg_plot, read_trace_csv, run_experiment, run_grid, write_experiment, ExperimentConfig, HarnessError,
    PlotSeries, Problem,
};
use indian_core::{indian_init, ParamVector};

#[derive(Parser)]
#[command(name = "indian", version, about = "Inertial Newton optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every optimizer of the configuration for every seed.
    Run { config: PathBuf },
    /// Search the initial step size of each optimizer on the training split.
    Grid {
        config: PathBuf,
        /// Follow the search with a full run at the selected step sizes.
        #[arg(long)]
        run: bool,
    },
    /// Integrate the continuous-time dynamics with explicit Euler.
    Flow { config: PathBuf },
    /// Plot one trace column from CSV files as SVG.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        y: String,
        #[arg(long)]
        log: bool,
        #[arg(long, short, default_value = "plot.svg")]
        out: PathBuf,
    },
    /// Run the numerical invariant suite.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(config: &Path) -> Result<(ExperimentConfig, Problem), HarnessError> {
    let cfg = ExperimentConfig::from_path(config)?;
    let problem = Problem::from_config(&cfg.objective)?;
    Ok((cfg, problem))
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn report_traces(cfg: &ExperimentConfig, traces: &[indian_core::harness::RunTrace]) -> Result<(), HarnessError> {
    let dir = cfg.run.resolved_output_dir();
    let paths = write_experiment(traces, &dir)?;
    for (t, p) in traces.iter().zip(&paths) {
        let last = t.last();
        let acc = last
            .and_then(|r| r.test_acc)
            .map(|a| format!(" test_acc={a:.4}"))
            .unwrap_or_default();
        let status = t.failed.as_deref().map(|m| format!(" FAILED ({m})")).unwrap_or_default();
        println!(
            "{} seed {}: k={} J_train={:.6e}{acc}{status} -> {}",
            t.label,
            t.seed,
            last.map_or(0, |r| r.k),
            last.map_or(f64::NAN, |r| r.j_train),
            p.display()
        );
    }
    Ok(())
}

fn cmd_run(config: &Path) -> Result<(), HarnessError> {
    let (cfg, problem) = load(config)?;
    let traces = run_experiment(&cfg, &problem)?;
    report_traces(&cfg, &traces)
}

fn cmd_grid(config: &Path, then_run: bool) -> Result<(), HarnessError> {
    let (cfg, problem) = load(config)?;
    let outcomes = run_grid(&cfg, &problem.train)?;
    let mut csv = String::from("optimizer,gamma0,final_J_train\n");
    for o in &outcomes {
        for (g, s) in &o.scores {
            let _ = writeln!(csv, "{},{},{}", o.label, fmt_f64(*g), s.map(fmt_f64).unwrap_or_default());
        }
        println!("{}: best gamma0 = {}", o.label, o.best_gamma0);
    }
    let dir = cfg.run.resolved_output_dir();
    write_text(&dir.join("grid.csv"), &csv)?;
    if then_run {
        let schedules: Vec<_> = outcomes.iter().map(|o| cfg.schedule.with_gamma0(o.best_gamma0)).collect();
        let traces = run_with_schedules(&cfg, &problem, &schedules)?;
        report_traces(&cfg, &traces)?;
    }
    Ok(())
}

fn cmd_flow(config: &Path) -> Result<(), HarnessError> {
    let (cfg, problem) = load(config)?;
    let flow = cfg
        .flow
        .clone()
        .ok_or_else(|| HarnessError::Config("the flow command needs a [flow] section".into()))?;
    let hp = cfg.flow_hyper_params()?;
    let f = &problem.train.objective;
    let theta0 = match &flow.theta0 {
        Some(t) => ParamVector::from(t.as_slice()),
        None => theta0_for(&problem.train, &cfg.run, cfg.run.seeds[0])?,
    };
    let psi0 = match &flow.psi0 {
        Some(p) => ParamVector::from(p.as_slice()),
        None => indian_init(&theta0, &f.eval_full(&theta0)?.subgrad, &hp)?.psi,
    };
    if theta0.len() != f.dim() || psi0.len() != f.dim() {
        return Err(HarnessError::Config(format!("flow start must have {} coordinates", f.dim())));
    }
    let traj = euler_flow(f.as_ref(), &theta0, &psi0, &hp, flow.h, flow.t_end)?;
    let path = cfg.run.resolved_output_dir().join("flow.csv");
    emit_flow_csv(&traj, flow.stride, &path)?;
    let (a, b, c) = traj.max_energy_increase();
    println!("states: {}{}", traj.len(), if traj.overflowed { " (overflowed)" } else { "" });
    println!("max one-step increase: E_min {a:.3e}, E_max {b:.3e}, E {c:.3e}");
    println!("terminal residual to steady set: {:.3e}", traj.terminal_residual());
    let window = flow.window.map_or_else(|| default_window(flow.t_end), |w| (w[0], w[1]));
    match fit_value_rate(&traj, f.known_minimum(), window) {
        Ok(fit) => println!(
            "rate fit on [{}, {}]: slope {:.4}, r^2 {:.4} over {} points",
            window.0, window.1, fit.slope, fit.r_squared, fit.n_points
        ),
        Err(e) => println!("rate fit unavailable: {e}"),
    }
    println!("-> {}", path.display());
    Ok(())
}

/// Series name from a trace file name: drops the index prefix and seed suffix.
fn group_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = match stem.split_once('_') {
        Some((idx, rest)) if idx.chars().all(|c| c.is_ascii_digit()) => rest.to_string(),
        _ => stem,
    };
    match stem.rfind("_seed") {
        Some(i) => stem[..i].to_string(),
        None => stem,
    }
}

fn cmd_plot(csv: &[PathBuf], y: &str, log_scale: bool, out: &Path) -> Result<(), HarnessError> {
    let series = csv
        .iter()
        .map(|p| {
            Ok(PlotSeries {
                group: group_name(p),
                rows: read_trace_csv(p)?,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let report = emit_svg_plot(&series, y, log_scale, out)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{} traces, {} mean lines -> {}",
        report.polylines,
        report.mean_lines,
        out.display()
    );
    Ok(())
}

fn cmd_check(seed: u64) -> Result<bool, HarnessError> {
    let results = run_all(seed);
    let mut ok = true;
    for r in &results {
        println!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        ok &= r.passed;
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => cmd_run(config).map(|_| true),
        Command::Grid { config, run } => cmd_grid(config, *run).map(|_| true),
        Command::Flow { config } => cmd_flow(config).map(|_| true),
        Command::Plot { csv, y, log, out } => cmd_plot(csv, y, *log, out).map(|_| true),
        Command::Check { seed } => cmd_check(*seed),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
