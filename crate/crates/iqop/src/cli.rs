//! Command-line front end: `fit`, `design`, `simulate`, `sweep`, `qkd-sim`.
//!
//! Each command writes one machine-readable artifact (CSV or JSON) to
//! `--output` or stdout, with a provenance manifest embedded as `#` comments
//! (CSV) or under a `manifest` key (JSON).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::calibration::{
    design_coupler, fit_kappa, fit_length_series, fit_shared_delta, unwrap_series_with_max_fold,
    unwrapped_phases, CalibrationModel, DesignConstraint, MeasurementSeries, SeriesFit,
    DEFAULT_MAX_FOLD,
};
use crate::circuits::{
    classify_outcome, projector_matrix, qkd_run, splitter_matrix, two_mode_projector,
};
use crate::error::{Error, Result};
use crate::io::{
    clicks_csv, json_envelope, matrix_json, probabilities_csv, qkd_csv, read_circuit,
    read_measurement_table, read_model, read_state, read_sweep, sweep_csv, to_json_text,
    write_output, RunManifest,
};
use crate::semiclassical::{
    fit_sweep, simulate_projection_test, sweep_over_displacements, GratingConfig, SweepRecord,
};
use crate::states::{
    basis_state, detection_probabilities, mub_state, sample_clicks, Basis, MubLabel, PhotonState,
};
use crate::unitary::ModeUnitary;

#[derive(Debug, Parser)]
#[command(
    name = "iqop",
    version,
    about = "Directional-coupler circuit toolkit: calibration, design, and \
             projective-measurement simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed for sampling commands (default 0).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Write the artifact to this file instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    output: Option<PathBuf>,

    /// Output format. Tabular results default to csv, fits and designs are
    /// json only.
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the exponential coupling law to a characterization table.
    Fit(FitArgs),
    /// Solve the coupling law for a geometry hitting a target phase.
    Design(DesignArgs),
    /// Send a photon state through a circuit and report the outputs.
    Simulate(SimulateArgs),
    /// Generate, sample, or fit an interference fringe.
    Sweep(SweepArgs),
    /// Run repeated random-basis projective measurements.
    QkdSim(QkdArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Characterization CSV with header d_m_um,l_c_mm,P4,P3.
    table: PathBuf,

    /// Leave out the series at this separation (µm); repeatable.
    #[arg(long, value_name = "D_M")]
    exclude_series: Vec<f64>,

    /// Also refit all series jointly under one shared length offset.
    #[arg(long)]
    shared_delta: bool,

    /// Largest fold index tried per point when unwrapping phases.
    #[arg(long, default_value_t = DEFAULT_MAX_FOLD)]
    max_fold: u32,
}

#[derive(Debug, Args)]
struct DesignArgs {
    /// Calibration model JSON produced by `fit`.
    #[arg(long, conflicts_with_all = ["kappa0", "gamma"], value_name = "PATH")]
    model: Option<PathBuf>,

    /// Coupling-law amplitude κ₀ (rad/mm), used with --gamma.
    #[arg(long, requires = "gamma")]
    kappa0: Option<f64>,

    /// Coupling-law decay rate γ (1/µm), used with --kappa0.
    #[arg(long, requires = "kappa0")]
    gamma: Option<f64>,

    /// Target coupling phase: radians, or pi/4, pi/2, pi, 3pi/2.
    #[arg(long, value_parser = parse_angle)]
    theta: f64,

    /// Hold the waveguide separation fixed (µm) and solve for the length.
    #[arg(long, conflicts_with = "fix_lc", value_name = "UM")]
    fix_dm: Option<f64>,

    /// Hold the mask length fixed (mm) and solve for the separation.
    #[arg(long, value_name = "MM")]
    fix_lc: Option<f64>,

    /// Effective extra coupling length from the bends (mm).
    #[arg(long, default_value_t = 0.0, value_name = "MM")]
    delta_lc: f64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// builtin:splitter, builtin:projector, builtin:px, builtin:py (prefix
    /// optional), or a circuit layout JSON path.
    #[arg(long)]
    circuit: String,

    /// mode:<j>, <X|Y>:<D|A|L|R>@(j,j'), or a state JSON path.
    #[arg(long)]
    state: String,

    /// Sample this many detections instead of reporting exact probabilities.
    #[arg(long)]
    trials: Option<u64>,

    /// Include the transfer matrix in the output (json only).
    #[arg(long)]
    dump_matrix: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Coupler phase for a generated fringe: radians or pi literals.
    #[arg(long, value_parser = parse_angle, conflicts_with = "fit")]
    theta: Option<f64>,

    /// First displacement, µm.
    #[arg(long, default_value_t = 0.0, conflicts_with = "fit", value_name = "UM")]
    dx_from: f64,

    /// Last displacement, µm.
    #[arg(
        long,
        default_value_t = 30.0,
        conflicts_with = "fit",
        value_name = "UM"
    )]
    dx_to: f64,

    /// Displacement increment, µm.
    #[arg(long, default_value_t = 1.0, conflicts_with = "fit", value_name = "UM")]
    dx_step: f64,

    /// Grating period Λ, µm.
    #[arg(long, default_value_t = 60.0, value_name = "UM")]
    period: f64,

    /// Sample this many detections per displacement instead of exact values.
    #[arg(long, conflicts_with = "fit")]
    trials: Option<u64>,

    /// Fit a recorded fringe CSV instead of generating one.
    #[arg(long, value_name = "PATH")]
    fit: Option<PathBuf>,

    /// With --fit: also write the fitted curve, sampled every 1° of relative
    /// phase, to this CSV file.
    #[arg(long, requires = "fit", value_name = "PATH")]
    emit_curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct QkdArgs {
    /// mode:<j>, <X|Y>:<D|A|L|R>@(j,j'), or a state JSON path (4 guides).
    #[arg(long)]
    state: String,

    /// Number of projective measurements.
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
}

/// Parses and runs the process arguments. Errors map to exit codes via
/// [`Error::exit_code`]; usage errors exit 2 inside clap.
pub fn run() -> Result<()> {
    let cli = Cli::parse();
    let manifest_command = command_line();
    match cli.command {
        Command::Fit(ref args) => cmd_fit(&cli, args, manifest_command),
        Command::Design(ref args) => cmd_design(&cli, args, manifest_command),
        Command::Simulate(ref args) => cmd_simulate(&cli, args, manifest_command),
        Command::Sweep(ref args) => cmd_sweep(&cli, args, manifest_command),
        Command::QkdSim(ref args) => cmd_qkd(&cli, args, manifest_command),
    }
}

fn command_line() -> String {
    let mut parts = vec!["iqop".to_string()];
    parts.extend(std::env::args().skip(1));
    parts.join(" ")
}

/// Radians, or one of the named values pi/4, pi/2, pi, 3pi/2.
pub fn parse_angle(text: &str) -> std::result::Result<f64, String> {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
    let t = text.trim();
    let value = match t {
        "pi/4" => FRAC_PI_4,
        "pi/2" => FRAC_PI_2,
        "pi" => PI,
        "3pi/2" => 1.5 * PI,
        _ => t
            .parse::<f64>()
            .map_err(|_| format!("expected radians or pi/4, pi/2, pi, 3pi/2; got {t:?}"))?,
    };
    if !value.is_finite() {
        return Err(format!("angle must be finite, got {t:?}"));
    }
    Ok(value)
}

/// Builds a state from a command-line spec. Returns the file path when the
/// spec referred to one, for provenance.
pub fn parse_state_spec(spec: &str, dim: usize) -> Result<(PhotonState, Option<PathBuf>)> {
    let s = spec.trim();
    if let Some(rest) = s.strip_prefix("mode:") {
        let j: usize = rest.trim().parse().map_err(|_| {
            Error::invalid(format!("guide index {rest:?} is not a positive integer"))
        })?;
        return Ok((basis_state(j, dim)?, None));
    }
    if let Some((basis @ ("X" | "Y"), rest)) = s.split_once(':') {
        let Some((label_part, pair_part)) = rest.split_once('@') else {
            return Err(Error::invalid(format!(
                "expected {basis}:<label>@(j,j'), got {s:?}"
            )));
        };
        let label = match label_part {
            "D" => MubLabel::D,
            "A" => MubLabel::A,
            "L" => MubLabel::L,
            "R" => MubLabel::R,
            other => {
                return Err(Error::invalid(format!(
                    "unknown state label {other:?}; expected D, A, L, or R"
                )))
            }
        };
        let want = if basis == "X" { Basis::X } else { Basis::Y };
        if label.basis() != want {
            return Err(Error::invalid(format!(
                "label {label_part} belongs to the {} basis, not {basis}",
                label.basis()
            )));
        }
        let inner = pair_part
            .trim()
            .strip_prefix('(')
            .and_then(|p| p.strip_suffix(')'))
            .ok_or_else(|| {
                Error::invalid(format!("expected a guide pair (j,j'), got {pair_part:?}"))
            })?;
        let (a, b) = inner.split_once(',').ok_or_else(|| {
            Error::invalid(format!("expected two guide indices in {pair_part:?}"))
        })?;
        let j: usize = a
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("guide index {a:?} is not a positive integer")))?;
        let jp: usize = b
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("guide index {b:?} is not a positive integer")))?;
        return Ok((mub_state(label, (j, jp), dim)?, None));
    }
    let path = Path::new(s);
    if !path.exists() && (s.contains(':') || s.contains('@')) {
        return Err(Error::invalid(format!(
            "state spec {s:?} is neither mode:<j>, <X|Y>:<label>@(j,j'), \
             nor an existing JSON file"
        )));
    }
    let state = read_state(path)?;
    if state.dim() != dim {
        return Err(Error::invalid(format!(
            "state has {} guides but the circuit has {dim}",
            state.dim()
        )));
    }
    Ok((state, Some(path.to_path_buf())))
}

/// Resolves a circuit spec to its transfer matrix. Builtins use the
/// reference matrices; file layouts are composed element by element.
fn circuit_matrix(spec: &str) -> Result<(ModeUnitary, Option<PathBuf>)> {
    let name = spec.strip_prefix("builtin:").unwrap_or(spec);
    match name {
        "splitter" => Ok((splitter_matrix(), None)),
        "projector" => Ok((projector_matrix(), None)),
        "px" => Ok((two_mode_projector(Basis::X).compose()?, None)),
        "py" => Ok((two_mode_projector(Basis::Y).compose()?, None)),
        _ => {
            let path = PathBuf::from(spec);
            if !path.exists() {
                return Err(Error::invalid(format!(
                    "circuit {spec:?} is neither a builtin (splitter, projector, \
                     px, py) nor an existing layout file"
                )));
            }
            let layout = read_circuit(&path)?;
            Ok((layout.compose()?, Some(path)))
        }
    }
}

fn resolve_format(
    requested: Option<OutputFormat>,
    default: OutputFormat,
    json_only: Option<&str>,
) -> Result<OutputFormat> {
    match (requested, json_only) {
        (Some(OutputFormat::Csv), Some(what)) => Err(Error::invalid(format!(
            "{what} results are structured; only --format json is supported"
        ))),
        (Some(f), _) => Ok(f),
        (None, _) => Ok(default),
    }
}

fn cmd_fit(cli: &Cli, args: &FitArgs, command: String) -> Result<()> {
    resolve_format(cli.format, OutputFormat::Json, Some("fit"))?;
    let mut manifest = RunManifest::new(command);
    manifest.add_input(&args.table)?;
    let table = read_measurement_table(&args.table)?;

    let mut kept: Vec<MeasurementSeries> = Vec::new();
    let mut excluded: Vec<f64> = Vec::new();
    let all = table.series();
    let mut exclusions = args.exclude_series.clone();
    for series in all {
        match exclusions
            .iter()
            .position(|&x| (series.d_m - x).abs() <= 1e-9)
        {
            Some(i) => {
                excluded.push(series.d_m);
                exclusions.remove(i);
            }
            None => kept.push(series),
        }
    }
    if let Some(orphan) = exclusions.first() {
        return Err(Error::invalid(format!(
            "cannot exclude separation {orphan}: no such series in the table"
        )));
    }

    let fits: Vec<SeriesFit> = kept
        .iter()
        .map(|s| unwrap_series_with_max_fold(s, args.max_fold))
        .collect::<Result<_>>()?;
    let mut model = fit_kappa(&fits)?;

    let unfolded: Vec<(f64, Vec<(f64, f64)>)> = kept
        .iter()
        .zip(&fits)
        .map(|(s, f)| Ok((s.d_m, unwrapped_phases(s, f)?)))
        .collect::<Result<_>>()?;
    model.length_fits = fit_length_series(&group_by_length(&unfolded));

    let mut payload = serde_json::to_value(&model)?;
    let fields = payload
        .as_object_mut()
        .expect("model serializes to an object");
    if !excluded.is_empty() {
        fields.insert("excluded".into(), json!(excluded));
    }
    if excluded.is_empty() && fits.len() >= 3 {
        let worst = fits
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.residual.total_cmp(&b.residual))
            .map(|(i, _)| i)
            .expect("at least three fits");
        let rest: Vec<SeriesFit> = fits
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != worst)
            .map(|(_, f)| f.clone())
            .collect();
        let variant = fit_kappa(&rest)?;
        fields.insert(
            "kappa_fit_excluding_worst".into(),
            json!({
                "excluded_d_m": fits[worst].d_m,
                "kappa0": variant.kappa0,
                "gamma": variant.gamma,
                "fit_residual": variant.fit_residual,
            }),
        );
    }
    if args.shared_delta {
        let shared = fit_shared_delta(&unfolded)?;
        fields.insert("shared_delta".into(), serde_json::to_value(&shared)?);
    }

    let envelope = json_envelope(&manifest, payload)?;
    write_output(cli.output.as_deref(), &to_json_text(&envelope)?)
}

/// Regroups per-series unfolded points (d_m, [(l_c, θ)]) into per-length
/// cells (l_c, [(d_m, θ)]); lengths closer than 1e-9 merge.
fn group_by_length(unfolded: &[(f64, Vec<(f64, f64)>)]) -> Vec<(f64, Vec<(f64, f64)>)> {
    let mut points: Vec<(f64, f64, f64)> = unfolded
        .iter()
        .flat_map(|(d_m, pts)| pts.iter().map(move |&(l_c, theta)| (l_c, *d_m, theta)))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.total_cmp(&b.1)));
    let mut cells: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    for (l_c, d_m, theta) in points {
        match cells.last_mut() {
            Some((l0, pts)) if (l_c - *l0).abs() <= 1e-9 => pts.push((d_m, theta)),
            _ => cells.push((l_c, vec![(d_m, theta)])),
        }
    }
    cells
}

fn cmd_design(cli: &Cli, args: &DesignArgs, command: String) -> Result<()> {
    resolve_format(cli.format, OutputFormat::Json, Some("design"))?;
    let mut manifest = RunManifest::new(command);
    let model = match (&args.model, args.kappa0, args.gamma) {
        (Some(path), None, None) => {
            manifest.add_input(path)?;
            read_model(path)?
        }
        (None, Some(kappa0), Some(gamma)) => CalibrationModel::from_law(kappa0, gamma)?,
        _ => {
            return Err(Error::invalid(
                "provide either --model or both --kappa0 and --gamma",
            ))
        }
    };
    let constraint = match (args.fix_dm, args.fix_lc) {
        (Some(d_m), None) => DesignConstraint::FixedSeparation(d_m),
        (None, Some(l_c)) => DesignConstraint::FixedLength(l_c),
        _ => {
            return Err(Error::invalid(
                "provide exactly one of --fix-dm or --fix-lc",
            ))
        }
    };
    let design = design_coupler(&model, args.theta, constraint, args.delta_lc)?;

    let mut payload = serde_json::to_value(&design)?;
    let fields = payload
        .as_object_mut()
        .expect("design serializes to an object");
    fields.insert("target_theta".into(), json!(args.theta));
    fields.insert("delta_l_c".into(), json!(args.delta_lc));
    fields.insert("kappa0".into(), json!(model.kappa0));
    fields.insert("gamma".into(), json!(model.gamma));

    let envelope = json_envelope(&manifest, payload)?;
    write_output(cli.output.as_deref(), &to_json_text(&envelope)?)
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs, command: String) -> Result<()> {
    let format = resolve_format(cli.format, OutputFormat::Csv, None)?;
    if args.dump_matrix && format == OutputFormat::Csv {
        return Err(Error::invalid(
            "--dump-matrix needs --format json; a matrix does not fit the CSV table",
        ));
    }
    let mut manifest = RunManifest::new(command);
    let (matrix, circuit_path) = circuit_matrix(&args.circuit)?;
    if let Some(path) = &circuit_path {
        manifest.add_input(path)?;
    }
    let (state, state_path) = parse_state_spec(&args.state, matrix.dim())?;
    if let Some(path) = &state_path {
        manifest.add_input(path)?;
    }
    let probabilities = detection_probabilities(&state, &matrix)?;

    let sampled = match args.trials {
        Some(trials) => {
            let seed = cli.seed.unwrap_or(0);
            manifest.set_seed(seed);
            Some(sample_clicks(&probabilities, trials, seed)?)
        }
        None => None,
    };

    let text = match format {
        OutputFormat::Csv => match &sampled {
            Some(clicks) => clicks_csv(clicks, &manifest),
            None => probabilities_csv(&probabilities, &manifest),
        },
        OutputFormat::Json => {
            let mut payload = json!({ "dim": matrix.dim() });
            let fields = payload.as_object_mut().expect("object literal");
            match &sampled {
                Some(clicks) => {
                    fields.insert("clicks".into(), serde_json::to_value(clicks)?);
                }
                None => {
                    fields.insert("probabilities".into(), json!(probabilities));
                }
            }
            if args.dump_matrix {
                fields.insert("matrix".into(), matrix_json(&matrix));
            }
            to_json_text(&json_envelope(&manifest, payload)?)?
        }
    };
    write_output(cli.output.as_deref(), &text)
}

fn displacement_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(from.is_finite() && to.is_finite() && step.is_finite()) {
        return Err(Error::invalid("displacement range must be finite"));
    }
    if step <= 0.0 {
        return Err(Error::invalid(format!(
            "displacement step must be positive, got {step}"
        )));
    }
    if to < from {
        return Err(Error::invalid(format!(
            "empty displacement range: {from} to {to}"
        )));
    }
    let count = ((to - from) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| from + k as f64 * step).collect())
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs, command: String) -> Result<()> {
    if let Some(input) = &args.fit {
        return cmd_sweep_fit(cli, args, input, command);
    }
    let Some(theta) = args.theta else {
        return Err(Error::invalid(
            "provide --theta to generate, or --fit to fit",
        ));
    };
    let format = resolve_format(cli.format, OutputFormat::Csv, None)?;
    let mut manifest = RunManifest::new(command);
    let config = GratingConfig::new(args.period)?;
    let grid = displacement_grid(args.dx_from, args.dx_to, args.dx_step)?;

    let records: Vec<SweepRecord> = match args.trials {
        Some(trials) => {
            let seed = cli.seed.unwrap_or(0);
            manifest.set_seed(seed);
            simulate_projection_test(theta, &config, &grid, trials, seed)?
                .into_iter()
                .map(|(record, _)| record)
                .collect()
        }
        None => sweep_over_displacements(theta, &config, &grid)?,
    };

    let text = match format {
        OutputFormat::Csv => sweep_csv(&records, &manifest),
        OutputFormat::Json => {
            let payload = json!({ "records": serde_json::to_value(&records)? });
            to_json_text(&json_envelope(&manifest, payload)?)?
        }
    };
    write_output(cli.output.as_deref(), &text)
}

fn cmd_sweep_fit(cli: &Cli, args: &SweepArgs, input: &Path, command: String) -> Result<()> {
    resolve_format(cli.format, OutputFormat::Json, Some("fringe fit"))?;
    let mut manifest = RunManifest::new(command);
    manifest.add_input(input)?;
    let records = read_sweep(input)?;
    let fit = fit_sweep(&records)?;

    if let Some(curve_path) = &args.emit_curve {
        let config = GratingConfig::new(args.period)?;
        let degree = std::f64::consts::PI / 180.0;
        let curve: Vec<SweepRecord> = (0..=360)
            .map(|k| {
                let epsilon = k as f64 * degree;
                let p1 = fit.background
                    + 0.5 * (1.0 + fit.visibility * (epsilon + fit.epsilon_offset).sin());
                let p1 = p1.clamp(0.0, 1.0);
                SweepRecord {
                    dx_um: epsilon * config.period_um / (4.0 * std::f64::consts::PI),
                    epsilon_rad: epsilon,
                    p1,
                    p2: 1.0 - p1,
                }
            })
            .collect();
        write_output(Some(curve_path), &sweep_csv(&curve, &manifest))?;
    }

    let payload = serde_json::to_value(&fit)?;
    let envelope = json_envelope(&manifest, payload)?;
    write_output(cli.output.as_deref(), &to_json_text(&envelope)?)
}

fn cmd_qkd(cli: &Cli, args: &QkdArgs, command: String) -> Result<()> {
    let format = resolve_format(cli.format, OutputFormat::Csv, None)?;
    let mut manifest = RunManifest::new(command);
    let (state, state_path) = parse_state_spec(&args.state, 4)?;
    if let Some(path) = &state_path {
        manifest.add_input(path)?;
    }
    let seed = cli.seed.unwrap_or(0);
    manifest.set_seed(seed);
    let run = qkd_run(&state, args.trials, seed)?;

    if run.outcomes.first().is_some_and(|o| o.off_protocol) {
        eprintln!(
            "note: state has support on guides 2 or 4; outcome labels assume \
             injection on guides 1 and 3"
        );
    }

    let text = match format {
        OutputFormat::Csv => qkd_csv(&run, seed, &manifest),
        OutputFormat::Json => {
            let (x_freq, y_freq) = run.basis_frequencies();
            let outputs: Vec<serde_json::Value> = run
                .clicks
                .counts
                .iter()
                .enumerate()
                .map(|(i, &count)| {
                    let (basis, label) = classify_outcome(i + 1)?;
                    Ok(json!({
                        "output": i + 1,
                        "basis": basis,
                        "label": label,
                        "count": count,
                        "frequency": count as f64 / args.trials as f64,
                    }))
                })
                .collect::<Result<_>>()?;
            let payload = json!({
                "trials": args.trials,
                "seed": seed,
                "outputs": outputs,
                "basis_frequencies": { "X": x_freq, "Y": y_freq },
                "off_protocol": run.outcomes.first().is_some_and(|o| o.off_protocol),
            });
            to_json_text(&json_envelope(&manifest, payload)?)?
        }
    };
    write_output(cli.output.as_deref(), &text)
}
