//! `homsim`: simulate, correlate, fit, tune and report.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 infeasible
//! target, 4 numerical non-convergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hom_core::budget::{budget_report, BudgetInputs, EfficiencyChain};
use hom_core::config::{run_experiment, ExperimentConfig};
use hom_core::correlator::{
    cross_correlate, dark_correct_g2, from_csv, normalize_cw, pulsed_g2_zero, write_csv,
    CorrelationHistogram,
};
use hom_core::hom_fit::{fit_hom, AutocorrInput, HomFitInput};
use hom_core::io::KvDocument;
use hom_core::model::default_pair_irf_sigma_ps;
use hom_core::provenance::stamp;
use hom_core::report::{build_report, ReportInputs};
use hom_core::tuning::{match_resonance, DotThermalState, HeaterCalibration};
use hom_core::{ttag, Error, Result};

#[derive(Parser)]
#[command(
    name = "homsim",
    version,
    about = "Two-photon interference simulation and analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Simulate { config: PathBuf },
    /// Coincidence histogram of two TTAG files.
    Correlate(CorrelateArgs),
    /// Joint fit of parallel and orthogonal histograms.
    FitHom(FitArgs),
    /// Heater power that brings dot A onto dot B.
    Tune(TuneArgs),
    /// Write the built-in heater calibration.
    Calibration {
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Coupling and efficiency budget.
    Budget(BudgetArgs),
    /// Consolidated report with cross-stage digest checks.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Normalize {
    Cw,
    Pulsed,
}

#[derive(Args)]
struct CorrelateArgs {
    file1: PathBuf,
    file2: PathBuf,
    #[arg(long, default_value_t = 16)]
    bin_ps: i64,
    #[arg(long)]
    max_lag_ps: i64,
    #[arg(long, value_enum)]
    normalize: Option<Normalize>,
    /// Pulse period for `--normalize pulsed`.
    #[arg(long)]
    rep_ps: Option<i64>,
    #[arg(long, default_value_t = 5)]
    side_peaks: usize,
    /// Acquisition time; defaults to the span of the recorded clicks.
    #[arg(long)]
    duration_s: Option<f64>,
    /// Dark-count fraction used to correct the pulsed g²(0).
    #[arg(long)]
    dark_fraction: Option<f64>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    parallel: PathBuf,
    orthogonal: PathBuf,
    #[arg(long)]
    rho_a: f64,
    #[arg(long)]
    rho_b: f64,
    #[arg(long)]
    irf_sigma_ps: Option<f64>,
    /// Normalized autocorrelation histogram of dot A.
    #[arg(long, requires = "gb_csv")]
    ga_csv: Option<PathBuf>,
    #[arg(long, requires = "ga_csv")]
    gb_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    v_guess: f64,
    #[arg(long, default_value_t = 200.0)]
    tau_c_guess_ps: f64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    calibration: PathBuf,
    dot_a_nm: f64,
    dot_b_nm: f64,
    #[arg(long, default_value_t = 3.0)]
    tol_uev: f64,
    #[arg(long, default_value_t = 30)]
    max_iters: usize,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long, default_value_t = 1120.0)]
    tau_on_a_ps: f64,
    #[arg(long, default_value_t = 1060.0)]
    tau_on_b_ps: f64,
    #[arg(long, default_value_t = 3200.0)]
    tau_off_ps: f64,
    /// Detection stage as `label=efficiency`; repeat for each stage.
    #[arg(long = "stage", value_parser = parse_stage)]
    stages: Vec<(String, f64)>,
    #[arg(long, default_value_t = 5e6)]
    rep_rate_hz: f64,
    #[arg(long, default_value_t = 6000.0)]
    count_rate_a_hz: f64,
    #[arg(long, default_value_t = 7800.0)]
    count_rate_b_hz: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    budget: Option<PathBuf>,
    #[arg(long)]
    fit: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long = "config")]
    configs: Vec<PathBuf>,
    /// Other pipeline outputs whose sidecars should be checked.
    #[arg(long = "artifact")]
    artifacts: Vec<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn parse_stage(s: &str) -> std::result::Result<(String, f64), String> {
    let (label, e) = s.split_once('=').ok_or("expected label=efficiency")?;
    let e = e.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((label.trim().to_string(), e))
}

fn emit(doc: &KvDocument, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => doc.write(p),
        None => {
            print!("{}", doc.render());
            Ok(())
        }
    }
}

fn read_histogram(path: &Path) -> Result<CorrelationHistogram> {
    from_csv(&std::fs::read_to_string(path)?)
}

fn simulate_cmd(config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::read(config)?;
    let s = run_experiment(&cfg)?;
    println!("config_digest = {}", s.digest);
    println!("detector_1 = {} clicks", s.counts.detector_1);
    println!("detector_2 = {} clicks", s.counts.detector_2);
    Ok(())
}

fn correlate_cmd(a: &CorrelateArgs) -> Result<()> {
    let times = |p: &Path| -> Result<Vec<i64>> {
        let mut t: Vec<i64> = ttag::read_file(p)?.iter().map(|r| r.time_ps).collect();
        t.sort_unstable();
        Ok(t)
    };
    let t1 = times(&a.file1)?;
    let t2 = times(&a.file2)?;
    let acquisition_s = match a.duration_s {
        Some(d) => d,
        None => {
            let first = t1.first().into_iter().chain(t2.first()).min();
            let last = t1.last().into_iter().chain(t2.last()).max();
            match (first, last) {
                (Some(f), Some(l)) => (l - f) as f64 * 1e-12,
                _ => 0.0,
            }
        }
    };
    let mut hist = cross_correlate(&t1, &t2, a.max_lag_ps, a.bin_ps, acquisition_s)?;
    let mut g2 = None;
    match a.normalize {
        None => {}
        Some(Normalize::Cw) => hist = normalize_cw(&hist)?,
        Some(Normalize::Pulsed) => {
            let rep = a
                .rep_ps
                .ok_or_else(|| Error::InvalidInput("--normalize pulsed needs --rep-ps".into()))?;
            g2 = Some(pulsed_g2_zero(&hist, rep, a.side_peaks)?);
        }
    }
    if a.dark_fraction.is_some() && g2.is_none() {
        return Err(Error::InvalidInput(
            "--dark-fraction applies to --normalize pulsed".into(),
        ));
    }
    write_csv(&a.output, &hist)?;
    stamp("correlate", &a.output, vec![], &[&a.file1, &a.file2])?;
    if let Some(g) = g2 {
        let mut d = KvDocument::new();
        d.section("g2")
            .set("g2_zero", g.value)
            .set("g2_zero_err", g.uncertainty)
            .set("center_area", g.center_area)
            .set("mean_side_area", g.mean_side_area);
        if let Some(x) = a.dark_fraction {
            let c = dark_correct_g2(g.value, x)?;
            // affine in g: error scales by 1/(1-x)²
            d.set("dark_fraction", x)
                .set("g2_zero_corrected", c.value)
                .set("g2_zero_corrected_err", g.uncertainty / (1.0 - x).powi(2))
                .set("clamped", c.clamped);
        }
        print!("{}", d.render());
    }
    Ok(())
}

fn fit_cmd(a: &FitArgs) -> Result<()> {
    let par = read_histogram(&a.parallel)?;
    let orth = read_histogram(&a.orthogonal)?;
    let mut inputs: Vec<&Path> = vec![&a.parallel, &a.orthogonal];
    let autocorr = match (&a.ga_csv, &a.gb_csv) {
        (Some(pa), Some(pb)) => {
            inputs.push(pa);
            inputs.push(pb);
            AutocorrInput::Known {
                ga: read_histogram(pa)?.to_autocorr()?,
                gb: read_histogram(pb)?.to_autocorr()?,
            }
        }
        _ => AutocorrInput::SharedCw {
            g0_guess: 0.3,
            recovery_guess_ps: 500.0,
        },
    };
    let mut input = HomFitInput::new(
        a.rho_a,
        a.rho_b,
        a.irf_sigma_ps.unwrap_or_else(default_pair_irf_sigma_ps),
        autocorr,
    );
    input.v_guess = a.v_guess;
    input.tau_c_guess_ps = a.tau_c_guess_ps;
    let report = fit_hom(&par, &orth, &input)?;
    report.to_kv().write(&a.output)?;
    stamp("fit-hom", &a.output, vec![], &inputs)?;
    println!(
        "V = {:.4} ± {:.4}, tau_c = {:.1} ± {:.1} ps, visibility = {:.4} ± {:.4}",
        report.v.value,
        report.v.error,
        report.tau_c_ps.value,
        report.tau_c_ps.error,
        report.visibility.value,
        report.visibility.error
    );
    Ok(())
}

fn tune_cmd(a: &TuneArgs) -> Result<()> {
    let cal = HeaterCalibration::read(&a.calibration)?;
    let da = DotThermalState::new("A", a.dot_a_nm);
    let db = DotThermalState::new("B", a.dot_b_nm);
    let m = match_resonance(&da, &db, &cal, a.tol_uev, a.max_iters)?;
    m.write_trace(&a.output)?;
    stamp("tune", &a.output, vec![], &[&a.calibration])?;
    println!("power_mw = {}", m.power_mw);
    println!("detuning_uev = {}", m.detuning_uev);
    println!("iterations = {}", m.iterations);
    Ok(())
}

fn budget_cmd(a: &BudgetArgs) -> Result<()> {
    let mut b = BudgetInputs {
        tau_on_a_ps: a.tau_on_a_ps,
        tau_on_b_ps: a.tau_on_b_ps,
        tau_off_ps: a.tau_off_ps,
        rep_rate_hz: a.rep_rate_hz,
        count_rate_a_hz: a.count_rate_a_hz,
        count_rate_b_hz: a.count_rate_b_hz,
        ..BudgetInputs::default()
    };
    if !a.stages.is_empty() {
        let refs: Vec<(&str, f64)> = a.stages.iter().map(|(l, e)| (l.as_str(), *e)).collect();
        b.chain = EfficiencyChain::new(&refs)?;
    }
    emit(&budget_report(&b)?, a.output.as_deref())
}

fn report_cmd(a: &ReportArgs) -> Result<()> {
    let inputs = ReportInputs {
        budget: a.budget.clone(),
        fit: a.fit.clone(),
        trace: a.trace.clone(),
        configs: a.configs.clone(),
        artifacts: a.artifacts.clone(),
    };
    emit(&build_report(&inputs)?, a.output.as_deref())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 1,
        Error::InvalidInput(_) | Error::Format { .. } => 2,
        Error::Infeasible(_) => 3,
        Error::NonConvergence { .. } => 4,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config } => simulate_cmd(&config),
        Command::Correlate(a) => correlate_cmd(&a),
        Command::FitHom(a) => fit_cmd(&a),
        Command::Tune(a) => tune_cmd(&a),
        Command::Calibration { output } => {
            emit(&HeaterCalibration::default().to_kv(), output.as_deref())
        }
        Command::Budget(a) => budget_cmd(&a),
        Command::Report(a) => report_cmd(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("homsim: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_flags_parse() {
        assert_eq!(
            parse_stage("fiber=0.48").unwrap(),
            ("fiber".to_string(), 0.48)
        );
        assert!(parse_stage("fiber").is_err());
        assert!(parse_stage("fiber=x").is_err());
    }

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(exit_code(&Error::InvalidInput("x".into())), 2);
        assert_eq!(exit_code(&Error::Infeasible("x".into())), 3);
        assert_eq!(
            exit_code(&Error::NonConvergence {
                iterations: 1,
                detail: "x".into()
            }),
            4
        );
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
