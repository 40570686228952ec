//! Command-line front end: run scenarios, tune the baseline gains, verify
//! robust stability over the loss-factor box, and compare recorded runs.
//!
//! Exit codes: 0 success; 2 validation or I/O failure; 3 run truncated by
//! numeric divergence (artifacts are still written); 4 stability verdict
//! negative. Failures print a single machine-readable `error: ...` line on
//! stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vtol_ftc::control::ControllerGains;
use vtol_ftc::scenario::{
    compare_runs, compute_metrics, export_csv, import_csv, load_scenario, run_scenario,
    LabeledRun, Metrics, Scenario, ACTUATOR_NAMES,
};
use vtol_ftc::synthesis::{channel_step_response, robust_stability_grid, tune_all};
use vtol_ftc::vehicle::VehicleParams;
use vtol_ftc::Error;

#[derive(Parser)]
#[command(
    name = "vtolftc",
    about = "Fault-tolerant flight control toolkit for a dual-system VTOL UAV"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its trace, metrics and canonical config.
    Run {
        /// Scenario TOML file.
        scenario: PathBuf,
        /// Directory for run artifacts (a subdirectory per scenario name).
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Force the allocator to assume all actuators healthy.
        #[arg(long)]
        no_realloc: bool,
        /// Also write the full trace as CSV.
        #[arg(long)]
        csv: bool,
        /// Override the scenario seed (recorded for provenance).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Tune the fixed-structure cascade gains by mixed-sensitivity descent.
    Tune {
        /// Loop set to tune; only the built-in "standard" set is defined.
        #[arg(default_value = "standard")]
        loopset: String,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Nelder-Mead evaluation budget per loop.
        #[arg(long, default_value_t = 4000)]
        budget: usize,
    },
    /// Sweep the loss-factor box and report the stability verdict.
    Analyze {
        /// Gains TOML file, or "default" for the shipped tuned gains.
        #[arg(default_value = "default")]
        gains: String,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Grid steps per loss axis.
        #[arg(long, default_value_t = 5)]
        steps: usize,
    },
    /// Compare recorded trace CSVs under a shared scenario.
    Compare {
        /// Scenario TOML the traces were produced from (metric definitions
        /// depend on its mission parameters).
        #[arg(long)]
        scenario: PathBuf,
        /// Trace CSV files; the first is the reference run.
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Also write the comparison table as CSV.
        #[arg(long)]
        csv: bool,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<ExitCode, Error> {
    match cmd {
        Cmd::Run {
            scenario,
            out_dir,
            no_realloc,
            csv,
            seed,
        } => cmd_run(&scenario, &out_dir, no_realloc, csv, seed),
        Cmd::Tune {
            loopset,
            out_dir,
            budget,
        } => cmd_tune(&loopset, &out_dir, budget),
        Cmd::Analyze {
            gains,
            out_dir,
            steps,
        } => cmd_analyze(&gains, &out_dir, steps),
        Cmd::Compare {
            scenario,
            traces,
            out_dir,
            csv,
        } => cmd_compare(&scenario, &traces, &out_dir, csv),
    }
}

fn read_file(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn make_dir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn cmd_run(
    path: &Path,
    out_dir: &Path,
    no_realloc: bool,
    csv: bool,
    seed: Option<u64>,
) -> Result<ExitCode, Error> {
    let mut s = load_scenario(&read_file(path)?)?;
    if no_realloc {
        s.reallocation = false;
    }
    if let Some(seed) = seed {
        s.seed = seed;
    }

    let dir = out_dir.join(&s.name);
    make_dir(&dir)?;
    // Canonical echo next to the outputs: the experiment record.
    write_file(&dir.join("scenario.toml"), &s.canonical_toml())?;

    let trace = run_scenario(&s)?;
    let metrics = compute_metrics(&trace, &s);
    if csv {
        export_csv(&trace, &dir.join("trace.csv"))?;
    }
    let summary = metrics_text(&s, &metrics);
    write_file(&dir.join("metrics.txt"), &summary)?;
    print!("{summary}");

    if trace.diverged {
        let t_last = trace.rows.last().map_or(0.0, |r| r.t);
        eprintln!("error: divergence scenario={} truncated_at_s={t_last}", s.name);
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn metrics_text(s: &Scenario, m: &Metrics) -> String {
    let mut out = String::new();
    out.push_str(&format!("scenario: {}\n", s.name));
    out.push_str(&format!("reallocation: {}\n", s.reallocation));
    out.push_str(&format!("partial: {}\n", m.partial));
    match m.transition_duration_s {
        Some(d) => out.push_str(&format!("transition_duration_s: {d:.3}\n")),
        None => out.push_str("transition_duration_s: not completed\n"),
    }
    let windows: Vec<(&str, &vtol_ftc::scenario::WindowMetrics)> = match &m.post_fault {
        Some(pf) => vec![("whole", &m.whole), ("post_fault", pf)],
        None => vec![("whole", &m.whole)],
    };
    for (name, w) in windows {
        out.push_str(&format!(
            "[{name}]\n  max_altitude_dev_m: {:.4}\n  max_roll_deg: {:.4}\n  \
             max_pitch_dev_deg: {:.4}\n  max_yaw_dev_deg: {:.4}\n  \
             residual_rms: {:.6}\n  virtual_tv: [{:.3}, {:.3}, {:.3}, {:.3}]\n",
            w.max_altitude_dev_m,
            w.max_roll_deg,
            w.max_pitch_dev_deg,
            w.max_yaw_dev_deg,
            w.residual_rms,
            w.virtual_tv[0],
            w.virtual_tv[1],
            w.virtual_tv[2],
            w.virtual_tv[3],
        ));
        out.push_str("  actuator_rms:");
        for (i, name) in ACTUATOR_NAMES.iter().enumerate() {
            out.push_str(&format!(" {name}={:.4}", w.actuator_rms[i]));
        }
        out.push('\n');
    }
    out
}

fn cmd_tune(loopset: &str, out_dir: &Path, budget: usize) -> Result<ExitCode, Error> {
    if loopset != "standard" {
        return Err(Error::InvalidParams(format!(
            "unknown loop set `{loopset}` (only `standard` is defined)"
        )));
    }
    let params = VehicleParams::default();
    let (gains, costs) = tune_all(&params, budget)?;
    let doc = toml::to_string_pretty(&gains)
        .map_err(|e| Error::InvalidParams(format!("gains serialization: {e}")))?;
    make_dir(out_dir)?;
    write_file(&out_dir.join("gains.toml"), &doc)?;

    let names = ["altitude", "roll", "pitch", "yaw"];
    let kgs = [
        1.0 / params.mass,
        1.0 / params.inertia[(0, 0)],
        1.0 / params.inertia[(1, 1)],
        1.0 / params.inertia[(2, 2)],
    ];
    let loops = [&gains.altitude, &gains.roll, &gains.pitch, &gains.yaw];
    for i in 0..4 {
        let step = channel_step_response(kgs[i], loops[i], 30.0);
        println!(
            "{:8} cost={:.4} settling_s={:.3} overshoot={:.3}",
            names[i], costs[i], step.settling_time, step.overshoot
        );
    }
    println!("gains written to {}", out_dir.join("gains.toml").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_analyze(gains_arg: &str, out_dir: &Path, steps: usize) -> Result<ExitCode, Error> {
    let gains = if gains_arg == "default" {
        ControllerGains::tuned_default()
    } else {
        toml::from_str(&read_file(Path::new(gains_arg))?)
            .map_err(|e| Error::Parse(e.to_string()))?
    };
    let report = robust_stability_grid(&gains, &VehicleParams::default(), steps, 0.0);

    let mut csv = String::from("gamma_t,gamma_l,gamma_m,gamma_n,max_re_eig\n");
    for p in &report.points {
        csv.push_str(&format!(
            "{},{},{},{},{:.16e}\n",
            p.gamma[0], p.gamma[1], p.gamma[2], p.gamma[3], p.max_re
        ));
    }
    make_dir(out_dir)?;
    write_file(&out_dir.join("stability.csv"), &csv)?;

    println!(
        "grid: {} points, worst max_re={:.6} at gamma=[{}, {}, {}, {}]",
        report.points.len(),
        report.worst.max_re,
        report.worst.gamma[0],
        report.worst.gamma[1],
        report.worst.gamma[2],
        report.worst.gamma[3],
    );
    if report.robustly_stable {
        println!("verdict: robustly stable over the loss box");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "error: unstable worst_max_re={:.6e} gamma=[{},{},{},{}]",
            report.worst.max_re,
            report.worst.gamma[0],
            report.worst.gamma[1],
            report.worst.gamma[2],
            report.worst.gamma[3],
        );
        Ok(ExitCode::from(4))
    }
}

fn cmd_compare(
    scenario: &Path,
    traces: &[PathBuf],
    out_dir: &Path,
    csv: bool,
) -> Result<ExitCode, Error> {
    let s = load_scenario(&read_file(scenario)?)?;
    let mut runs = Vec::with_capacity(traces.len());
    for path in traces {
        let trace = import_csv(&read_file(path)?)?;
        let label = path
            .file_stem()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        runs.push(LabeledRun {
            label,
            tick: trace.tick,
            metrics: compute_metrics(&trace, &s),
        });
    }
    let cmp = compare_runs(runs)?;
    print!("{}", cmp.to_text());
    if csv {
        make_dir(out_dir)?;
        write_file(&out_dir.join("comparison.csv"), &cmp.to_csv())?;
    }
    Ok(ExitCode::SUCCESS)
}
