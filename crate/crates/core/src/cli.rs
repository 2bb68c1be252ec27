//! Command-line front end.
//!
//! ```text
//! tdoa-denoise sweep  --config <path|preset> --out <dir> [--seed N] [--runs N]
//! tdoa-denoise single --config <path|preset> --k N --filter <kind> [--seed N] [--scenario ID]
//! tdoa-denoise presets list
//! tdoa-denoise presets show <name>
//! ```

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{ExperimentFile, PRESETS};
use crate::filters::{apply_filter, FilterKind, FilterSpec};
use crate::localization::position_error;
use crate::measurement::raw_latest;
use crate::sim::{locate, run_monte_carlo_with, run_seed, setup_run, McResult, McRow};
use crate::{Error, Result};

/// Sweeps fail when more than this fraction of localizations did not converge.
pub const MAX_NONCONVERGENCE_RATE: f64 = 0.05;

#[derive(Debug, Parser)]
#[command(name = "tdoa-denoise", version, about = "Denoise ultra-short TDoA windows and evaluate localization error")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte-Carlo sweep over window lengths for every configured scenario.
    Sweep {
        /// Experiment file, or the name of a bundled preset.
        #[arg(long)]
        config: String,
        /// Output directory for the CSV tables.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides plan.runs_per_point.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Generate one window and show every stage of the pipeline.
    Single {
        #[arg(long)]
        config: String,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        filter: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Scenario id; defaults to the first configured scenario.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Bundled experiment presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Debug, Subcommand)]
enum PresetAction {
    List,
    /// Print a preset as a complete experiment file.
    Show { name: String },
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Sweep {
            config,
            out: dir,
            seed,
            runs,
        } => cmd_sweep(&config, &dir, seed, runs, out, err),
        Command::Single {
            config,
            k,
            filter,
            seed,
            scenario,
        } => cmd_single(&config, k, &filter, seed, scenario.as_deref(), out),
        Command::Presets { action } => match action {
            PresetAction::List => {
                let mut text = String::new();
                for (name, desc, _) in PRESETS {
                    let _ = writeln!(text, "{name:<8} {desc}");
                }
                out.write_all(text.as_bytes()).map_err(|e| Error::io("stdout", e))
            }
            PresetAction::Show { name } => match ExperimentFile::preset(&name) {
                Some(file) => file
                    .to_toml()
                    .and_then(|t| out.write_all(t.as_bytes()).map_err(|e| Error::io("stdout", e))),
                None => Err(Error::Config(format!("unknown preset '{name}'"))),
            },
        },
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Wide table for plotting: one row per K, one column per filter label.
pub fn plot_table(rows: &[McRow]) -> Result<String> {
    let mut labels: Vec<&str> = Vec::new();
    let mut ks: Vec<usize> = Vec::new();
    for r in rows {
        if !labels.contains(&r.filter.as_str()) {
            labels.push(&r.filter);
        }
        if !ks.contains(&r.k) {
            ks.push(r.k);
        }
    }
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["k"];
    header.extend(&labels);
    wtr.write_record(&header)?;
    for k in ks {
        let mut rec = vec![k.to_string()];
        for label in &labels {
            let cell = rows
                .iter()
                .find(|r| r.k == k && r.filter == *label)
                .and_then(|r| r.normalized_error)
                .map(|v| v.to_string())
                .unwrap_or_default();
            rec.push(cell);
        }
        wtr.write_record(&rec)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::io("plot csv", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

/// Normalized-error table for the terminal: filters down, K across.
pub fn format_table(scenario: &str, rows: &[McRow]) -> String {
    let mut labels: Vec<&str> = Vec::new();
    let mut ks: Vec<usize> = Vec::new();
    for r in rows {
        if !labels.contains(&r.filter.as_str()) {
            labels.push(&r.filter);
        }
        if !ks.contains(&r.k) {
            ks.push(r.k);
        }
    }
    let mut s = format!("normalized localization error, scenario {scenario}\n{:<14}", "filter \\ K");
    for k in &ks {
        let _ = write!(s, "{k:>7}");
    }
    s.push('\n');
    for label in labels {
        let _ = write!(s, "{label:<14}");
        for k in &ks {
            match rows.iter().find(|r| r.k == *k && r.filter == label).and_then(|r| r.normalized_error) {
                Some(v) => {
                    let _ = write!(s, "{v:>7.3}");
                }
                None => {
                    let _ = write!(s, "{:>7}", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}

pub fn cmd_sweep(
    config: &str,
    out_dir: &Path,
    seed_override: Option<u64>,
    runs_override: Option<usize>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let mut file = ExperimentFile::load(config)?;
    if let Some(seed) = seed_override {
        file.plan.seed = seed;
    }
    if let Some(runs) = runs_override {
        file.plan.runs_per_point = runs;
    }
    file.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let settings = file.settings();

    let mut combined = McResult {
        rows: Vec::new(),
        runs_per_point: file.plan.runs_per_point,
    };
    let mut worst: Option<(String, f64)> = None;
    for scenario in &file.scenarios {
        let _ = writeln!(
            err,
            "scenario {}: altitude {} m, {} km/h, {} runs per point",
            scenario.id, scenario.altitude_m, scenario.speed_kmh, file.plan.runs_per_point
        );
        let result = run_monte_carlo_with(scenario, &file.plan, &settings, |row| {
            let ratio = row
                .normalized_error
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "degenerate".into());
            let _ = writeln!(err, "  K={:<3} {:<14} {ratio}", row.k, row.filter);
        })?;

        write_atomic(
            &out_dir.join(format!("{}.csv", scenario.id)),
            result.to_csv_string()?.as_bytes(),
        )?;
        write_atomic(
            &out_dir.join(format!("{}_plot.csv", scenario.id)),
            plot_table(&result.rows)?.as_bytes(),
        )?;
        out.write_all(format_table(&scenario.id, &result.rows).as_bytes())
            .map_err(|e| Error::io("stdout", e))?;

        let rate = result.nonconvergence_rate();
        if rate > MAX_NONCONVERGENCE_RATE && worst.as_ref().is_none_or(|w| rate > w.1) {
            worst = Some((scenario.id.clone(), rate));
        }
        combined.rows.extend(result.rows);
    }
    write_atomic(&out_dir.join("summary.csv"), combined.to_csv_string()?.as_bytes())?;

    if let Some((id, rate)) = worst {
        return Err(Error::Config(format!(
            "scenario '{id}': {:.1}% of localizations did not converge (limit {:.0}%)",
            rate * 100.0,
            MAX_NONCONVERGENCE_RATE * 100.0
        )));
    }
    Ok(())
}

fn fmt_point(p: &[f64; 3]) -> String {
    format!("({:.4}, {:.4}, {:.4})", p[0], p[1], p[2])
}

fn fmt_matrix(title: &str, m: &nalgebra::DMatrix<f64>, prec: usize) -> String {
    let mut s = format!("{title}\n{:>6}", "k\\n");
    for n in 0..m.ncols() {
        let _ = write!(s, "{:>14}", n + 1);
    }
    s.push('\n');
    for k in 0..m.nrows() {
        let _ = write!(s, "{:>6}", k + 1);
        for n in 0..m.ncols() {
            let v = m[(k, n)];
            if prec > 0 && v.abs() < 1e-3 && v != 0.0 {
                let _ = write!(s, "{v:>14.4e}");
            } else {
                let _ = write!(s, "{v:>14.prec$}");
            }
        }
        s.push('\n');
    }
    s
}

pub fn cmd_single(
    config: &str,
    k: usize,
    filter: &str,
    seed: u64,
    scenario_id: Option<&str>,
    out: &mut dyn Write,
) -> Result<()> {
    let file = ExperimentFile::load(config)?;
    let kind: FilterKind = filter.parse()?;
    let spec = file
        .plan
        .filters
        .iter()
        .find(|f| f.kind == kind)
        .cloned()
        .unwrap_or_else(|| FilterSpec::for_kind(kind));
    spec.validate(k)?;
    if k < 2 {
        return Err(Error::domain(format!("window length must be >= 2, got K = {k}")));
    }
    let scenario = match scenario_id {
        Some(id) => file
            .scenarios
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Config(format!("no scenario with id '{id}'")))?,
        None => &file.scenarios[0],
    };
    let settings = file.settings();
    let setup = setup_run(scenario, &settings, k, run_seed(seed, k, 0))?;
    let truth = setup.truth();
    let window = &setup.window;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "scenario {}  altitude {} m  speed {} km/h  K={}  seed {}  filter {}",
        scenario.id,
        scenario.altitude_m,
        scenario.speed_kmh,
        k,
        seed,
        spec.label()
    );
    let _ = writeln!(s, "window checksum {:016x}", window.checksum());
    s.push_str("gNB positions (m)\n");
    for (n, g) in setup.gnbs.iter().enumerate() {
        let _ = writeln!(s, "{:>6} {}", n + 1, fmt_point(g));
    }
    s.push_str("UAV trajectory (m)\n");
    for (i, p) in setup.trajectory.iter().enumerate() {
        let _ = writeln!(s, "{:>6} {}", i + 1, fmt_point(p));
    }
    s.push_str(&fmt_matrix("true ranges d_true (m)", &window.d_true, 4));
    s.push_str(&fmt_matrix("observed ranges d_obs (m)", &window.d_obs, 4));
    s.push_str(&fmt_matrix("reported SNR (dB)", &window.snr_report_db, 2));
    s.push_str(&fmt_matrix("quality reports r (m^2)", &window.r_quality, 4));

    s.push_str("filter outputs (m)\n");
    let mut specs: Vec<FilterSpec> = file.plan.filters.clone();
    if !specs.iter().any(|f| f.label() == spec.label()) {
        specs.push(spec.clone());
    }
    for f in &specs {
        let _ = write!(s, "{:<14}", f.label());
        match apply_filter(f, window) {
            Ok(values) => {
                for v in values {
                    let _ = write!(s, "{v:>14.4}");
                }
                s.push('\n');
            }
            Err(e) => {
                let _ = writeln!(s, "  unavailable: {e}");
            }
        }
    }

    let raw = raw_latest(window);
    let filtered = apply_filter(&spec, window)?;
    let _ = writeln!(s, "truth (latest frame) {}", fmt_point(&truth));
    for (label, ranges) in [("raw", &raw), (spec.label(), &filtered)] {
        let sol = locate(&setup, ranges, scenario, &settings)?;
        let _ = writeln!(
            s,
            "{label:<14} estimate {}  error {:.4} m  iterations {}  converged {}",
            fmt_point(&sol.position),
            position_error(&sol.position, &truth),
            sol.iterations,
            sol.converged
        );
    }
    out.write_all(s.as_bytes()).map_err(|e| Error::io("stdout", e))
}
