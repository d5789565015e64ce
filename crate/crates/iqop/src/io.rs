//! File formats and run provenance.
//!
//! Tables move as CSV with `#` comment lines for free-form metadata; models,
//! circuits, and states move as JSON. Every generated artifact embeds a
//! [`RunManifest`] (the command line, input digests, seed, and version) so a
//! result can be traced back to what produced it. Timestamps honor
//! `SOURCE_DATE_EPOCH` to keep reruns byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{CalibrationModel, CouplerMeasurement, MeasurementTable};
use crate::error::{Error, Result};
use crate::semiclassical::SweepRecord;
use crate::states::{ClickCounts, PhotonState};
use crate::unitary::{CircuitLayout, ModeUnitary};

pub const MEASUREMENT_HEADER: [&str; 4] = ["d_m_um", "l_c_mm", "P4", "P3"];
pub const SWEEP_HEADER: [&str; 4] = ["dx_um", "epsilon_rad", "P1", "P2"];

/// Digest of one input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance block embedded in every generated artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    /// The invocation that produced the artifact.
    pub command: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<InputDigest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Generator behind `seed`, when sampling was involved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng: Option<String>,
    pub version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: impl Into<String>) -> Self {
        RunManifest {
            command: command.into(),
            inputs: Vec::new(),
            seed: None,
            rng: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: now_rfc3339(),
        }
    }

    /// Records an input file by path and content digest.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(path)?,
        });
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.rng = Some(crate::states::RNG_ALGORITHM.to_string());
    }

    /// The manifest as `#` comment lines for CSV artifacts.
    pub fn comment_block(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# command: {}", self.command);
        for input in &self.inputs {
            let _ = writeln!(out, "# input: {} sha256={}", input.path, input.sha256);
        }
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "# seed: {seed}");
        }
        if let Some(rng) = &self.rng {
            let _ = writeln!(out, "# rng: {rng}");
        }
        let _ = writeln!(out, "# version: {}", self.version);
        let _ = writeln!(out, "# generated: {}", self.timestamp);
        out
    }
}

/// UTC timestamp in RFC 3339, seconds resolution. Reads `SOURCE_DATE_EPOCH`
/// when set so repeated runs produce identical bytes.
pub fn now_rfc3339() -> String {
    let pinned = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0));
    let dt = pinned.unwrap_or_else(chrono::Utc::now);
    dt.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// SHA-256 of a file's bytes, lowercase hex.
pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path)
        .map_err(|e| Error::io(format!("reading {} for hashing", path.display()), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Formats a number to 12 significant digits with trailing zeros trimmed,
/// switching to scientific notation outside the 1e-4..1e12 magnitude range.
pub fn fmt_sig12(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let formatted = format!("{:.11e}", v);
    let (mantissa, exp_part) = formatted.split_once('e').expect("exponent marker");
    let exp: i32 = exp_part.parse().expect("exponent digits");
    let neg = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let digits = digits.trim_end_matches('0');
    let digits = if digits.is_empty() { "0" } else { digits };

    let mut out = String::new();
    if neg {
        out.push('-');
    }
    if (-4..=11).contains(&exp) {
        if exp >= 0 {
            let point = exp as usize + 1;
            if digits.len() <= point {
                out.push_str(digits);
                out.push_str(&"0".repeat(point - digits.len()));
            } else {
                out.push_str(&digits[..point]);
                out.push('.');
                out.push_str(&digits[point..]);
            }
        } else {
            out.push_str("0.");
            out.push_str(&"0".repeat((-exp - 1) as usize));
            out.push_str(digits);
        }
    } else {
        out.push_str(&digits[..1]);
        if digits.len() > 1 {
            out.push('.');
            out.push_str(&digits[1..]);
        }
        let _ = write!(out, "e{exp}");
    }
    out
}

fn parse_field(raw: &str, name: &str, line: usize) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("{name} value {raw:?} is not a number"),
    })
}

struct CsvBody {
    metadata: Vec<String>,
    header: Vec<String>,
    header_line: usize,
    /// (line number, fields)
    rows: Vec<(usize, Vec<String>)>,
}

/// Splits a commented CSV into metadata, header, and data rows. Blank lines
/// are skipped; `#` lines are collected (marker and one leading space
/// stripped) in order.
fn split_csv(text: &str) -> Result<CsvBody> {
    let mut metadata = Vec::new();
    let mut header: Option<(usize, Vec<String>)> = None;
    let mut rows = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            metadata.push(comment.strip_prefix(' ').unwrap_or(comment).to_string());
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        match &header {
            None => header = Some((line_no, fields)),
            Some(_) => rows.push((line_no, fields)),
        }
    }
    let Some((header_line, header)) = header else {
        return Err(Error::Parse {
            line: 1,
            message: "file has no header row".into(),
        });
    };
    Ok(CsvBody {
        metadata,
        header,
        header_line,
        rows,
    })
}

fn check_header(body: &CsvBody, expected: &[&str]) -> Result<()> {
    if body.header != expected {
        return Err(Error::Parse {
            line: body.header_line,
            message: format!(
                "expected header {:?}, found {:?}",
                expected.join(","),
                body.header.join(",")
            ),
        });
    }
    Ok(())
}

/// Parses a characterization table. The power columns may be percentages or
/// fractions; the unit is detected per file from the first data row's sum
/// (near 100 or near 1) and applied to every row.
pub fn parse_measurement_csv(text: &str) -> Result<MeasurementTable> {
    let body = split_csv(text)?;
    check_header(&body, &MEASUREMENT_HEADER)?;
    if body.rows.is_empty() {
        return Err(Error::InsufficientData(
            "measurement table has no data rows".into(),
        ));
    }

    let mut raw = Vec::with_capacity(body.rows.len());
    for (line, fields) in &body.rows {
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: *line,
                message: format!("expected 4 comma-separated values, found {}", fields.len()),
            });
        }
        let d_m = parse_field(&fields[0], "d_m_um", *line)?;
        let l_c = parse_field(&fields[1], "l_c_mm", *line)?;
        let p4 = parse_field(&fields[2], "P4", *line)?;
        let p3 = parse_field(&fields[3], "P3", *line)?;
        raw.push((*line, d_m, l_c, p4, p3));
    }

    let first_sum = raw[0].3 + raw[0].4;
    let tol = crate::calibration::POWER_SUM_TOL;
    let percent = if (first_sum - 100.0).abs() <= 100.0 * tol {
        true
    } else if (first_sum - 1.0).abs() <= tol {
        false
    } else {
        return Err(Error::Validation(vec![format!(
            "line {}: P4 + P3 = {first_sum} matches neither percentages (≈100) \
             nor fractions (≈1)",
            raw[0].0
        )]));
    };

    let mut records = Vec::with_capacity(raw.len());
    let mut problems = Vec::new();
    for (line, d_m, l_c, mut p4, mut p3) in raw {
        if percent {
            p4 /= 100.0;
            p3 /= 100.0;
        }
        match CouplerMeasurement::new(d_m, l_c, p4, p3) {
            Ok(m) => records.push(m),
            Err(e) => problems.push(format!("line {line}: {e}")),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    MeasurementTable::new(records, body.metadata)
}

pub fn read_measurement_table(path: &Path) -> Result<MeasurementTable> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_measurement_csv(&text)
}

/// Renders a table back to CSV (power columns as fractions). Values use the
/// shortest representation that parses back to the same number.
pub fn measurement_csv(table: &MeasurementTable, manifest: &RunManifest) -> String {
    let mut out = manifest.comment_block();
    for note in &table.metadata {
        let _ = writeln!(out, "# {note}");
    }
    let _ = writeln!(out, "{}", MEASUREMENT_HEADER.join(","));
    for r in table.records() {
        let _ = writeln!(out, "{},{},{},{}", r.d_m, r.l_c, r.p4, r.p3);
    }
    out
}

/// Parses a recorded fringe. Powers must lie in [0, 1].
pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRecord>> {
    let body = split_csv(text)?;
    check_header(&body, &SWEEP_HEADER)?;
    let mut records = Vec::with_capacity(body.rows.len());
    let mut problems = Vec::new();
    for (line, fields) in &body.rows {
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: *line,
                message: format!("expected 4 comma-separated values, found {}", fields.len()),
            });
        }
        let dx_um = parse_field(&fields[0], "dx_um", *line)?;
        let epsilon_rad = parse_field(&fields[1], "epsilon_rad", *line)?;
        let p1 = parse_field(&fields[2], "P1", *line)?;
        let p2 = parse_field(&fields[3], "P2", *line)?;
        if !(dx_um.is_finite() && epsilon_rad.is_finite()) {
            problems.push(format!("line {line}: non-finite sweep coordinates"));
            continue;
        }
        let slack = 1e-9;
        if !(-slack..=1.0 + slack).contains(&p1) || !(-slack..=1.0 + slack).contains(&p2) {
            problems.push(format!(
                "line {line}: probabilities ({p1}, {p2}) are outside [0, 1]"
            ));
            continue;
        }
        records.push(SweepRecord {
            dx_um,
            epsilon_rad,
            p1: p1.clamp(0.0, 1.0),
            p2: p2.clamp(0.0, 1.0),
        });
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    if records.is_empty() {
        return Err(Error::InsufficientData(
            "sweep file has no data rows".into(),
        ));
    }
    Ok(records)
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRecord>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_sweep_csv(&text)
}

pub fn sweep_csv(records: &[SweepRecord], manifest: &RunManifest) -> String {
    let mut out = manifest.comment_block();
    let _ = writeln!(out, "{}", SWEEP_HEADER.join(","));
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_sig12(r.dx_um),
            fmt_sig12(r.epsilon_rad),
            fmt_sig12(r.p1),
            fmt_sig12(r.p2)
        );
    }
    out
}

/// Detection probabilities per output guide, 1-based.
pub fn probabilities_csv(probs: &[f64], manifest: &RunManifest) -> String {
    let mut out = manifest.comment_block();
    let _ = writeln!(out, "output_index,probability");
    for (i, p) in probs.iter().enumerate() {
        let _ = writeln!(out, "{},{}", i + 1, fmt_sig12(*p));
    }
    out
}

/// Sampled click counts per output guide, 1-based.
pub fn clicks_csv(clicks: &ClickCounts, manifest: &RunManifest) -> String {
    let mut out = manifest.comment_block();
    let _ = writeln!(out, "output_index,count,trials,seed");
    for (i, c) in clicks.counts.iter().enumerate() {
        let _ = writeln!(out, "{},{},{},{}", i + 1, c, clicks.trials, clicks.seed);
    }
    out
}

/// Per-trial projection outcomes of a random-basis run.
pub fn qkd_csv(run: &crate::circuits::QkdRun, seed: u64, manifest: &RunManifest) -> String {
    let mut out = manifest.comment_block();
    let _ = writeln!(out, "trial,output,basis,label,seed");
    for (i, o) in run.outcomes.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            i + 1,
            o.output,
            o.basis,
            o.label,
            seed
        );
    }
    out
}

/// A unitary as JSON with separate real and imaginary parts, row-major.
pub fn matrix_json(u: &ModeUnitary) -> serde_json::Value {
    let re: Vec<f64> = u.entries().iter().map(|z| z.re).collect();
    let im: Vec<f64> = u.entries().iter().map(|z| z.im).collect();
    serde_json::json!({ "dim": u.dim(), "re": re, "im": im })
}

/// Wraps a payload object with the manifest under a `manifest` key.
pub fn json_envelope(
    manifest: &RunManifest,
    payload: serde_json::Value,
) -> Result<serde_json::Value> {
    let mut map = serde_json::Map::new();
    map.insert("manifest".into(), serde_json::to_value(manifest)?);
    match payload {
        serde_json::Value::Object(fields) => {
            for (k, v) in fields {
                map.insert(k, v);
            }
        }
        other => {
            map.insert("result".into(), other);
        }
    }
    Ok(serde_json::Value::Object(map))
}

pub fn to_json_text(value: &serde_json::Value) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

pub fn read_circuit(path: &Path) -> Result<CircuitLayout> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let layout: CircuitLayout = serde_json::from_str(&text)?;
    layout.validate()?;
    Ok(layout)
}

pub fn read_state(path: &Path) -> Result<PhotonState> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_model(path: &Path) -> Result<CalibrationModel> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let model: CalibrationModel = serde_json::from_str(&text)?;
    model.validate()?;
    Ok(model)
}

/// Writes to the path when given, stdout otherwise.
pub fn write_output(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => {
            fs::write(p, contents).map_err(|e| Error::io(format!("writing {}", p.display()), e))
        }
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(contents.as_bytes())
                .map_err(|e| Error::io("writing to stdout", e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn sig12_formatting() {
        assert_eq!(fmt_sig12(0.0), "0");
        assert_eq!(fmt_sig12(1.0), "1");
        assert_eq!(fmt_sig12(-2.5), "-2.5");
        assert_eq!(fmt_sig12(0.5), "0.5");
        assert_eq!(fmt_sig12(PI), "3.14159265359");
        assert_eq!(fmt_sig12(2.0 / 3.0), "0.666666666667");
        assert_eq!(fmt_sig12(1e-4), "0.0001");
        assert_eq!(fmt_sig12(1e-5), "1e-5");
        assert_eq!(fmt_sig12(-1.25e-7), "-1.25e-7");
        assert_eq!(fmt_sig12(1e11), "100000000000");
        assert_eq!(fmt_sig12(1.23456789e12), "1.23456789e12");
        assert_eq!(fmt_sig12(0.9999999999999), "1");
        assert_eq!(fmt_sig12(42.0), "42");
    }

    #[test]
    fn sig12_round_trips_within_half_ulp_of_digit_12() {
        for &v in &[PI, 1.0 / 3.0, 2.045532341870177, 9.628981483252716e-3] {
            let parsed: f64 = fmt_sig12(v).parse().unwrap();
            assert!((parsed - v).abs() <= v.abs() * 1e-11);
        }
    }

    #[test]
    fn measurement_csv_round_trip_percent_and_fraction() {
        let percent = "\
# test table
d_m_um,l_c_mm,P4,P3
3.0,0.5,17.8,82.2
3.0,1.0,93.6,6.4
";
        let table = parse_measurement_csv(percent).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table.metadata, vec!["test table"]);
        assert!((table.records()[0].p4 - 0.178).abs() <= 1e-12);
        assert_eq!(table.records()[0].p4 + table.records()[0].p3, 1.0);

        let manifest = RunManifest::new("test");
        let rendered = measurement_csv(&table, &manifest);
        let back = parse_measurement_csv(&rendered).unwrap();
        assert_eq!(back.records(), table.records());

        let fraction = "d_m_um,l_c_mm,P4,P3\n6.0,1.5,0.493,0.507\n";
        let t2 = parse_measurement_csv(fraction).unwrap();
        assert!((t2.records()[0].p4 - 0.493).abs() <= 1e-12);
    }

    #[test]
    fn measurement_csv_error_reporting() {
        assert!(matches!(
            parse_measurement_csv(""),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_measurement_csv("a,b,c,d\n1,2,3,4\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_measurement_csv("d_m_um,l_c_mm,P4,P3\n"),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            parse_measurement_csv("d_m_um,l_c_mm,P4,P3\n3.0,0.5,oops,82.2\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_measurement_csv("d_m_um,l_c_mm,P4,P3\n3.0,0.5,17.8\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        // First row decides the unit; a 50/50 split is ambiguous with a sum
        // near neither 1 nor 100.
        assert!(matches!(
            parse_measurement_csv("d_m_um,l_c_mm,P4,P3\n3.0,0.5,30,30\n"),
            Err(Error::Validation(_))
        ));
        // Unit mismatch inside one file shows up as a power-sum failure.
        let mixed = "d_m_um,l_c_mm,P4,P3\n3.0,0.5,17.8,82.2\n3.0,1.0,0.936,0.064\n";
        match parse_measurement_csv(mixed) {
            Err(Error::Validation(problems)) => {
                assert_eq!(problems.len(), 1);
                assert!(problems[0].starts_with("line 3:"), "{}", problems[0]);
            }
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn sweep_csv_round_trip() {
        let records = vec![
            SweepRecord {
                dx_um: 0.0,
                epsilon_rad: 0.0,
                p1: 0.5,
                p2: 0.5,
            },
            SweepRecord {
                dx_um: 7.5,
                epsilon_rad: PI / 2.0,
                p1: 0.9,
                p2: 0.1,
            },
        ];
        let manifest = RunManifest::new("test");
        let text = sweep_csv(&records, &manifest);
        let back = parse_sweep_csv(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back[1].epsilon_rad - PI / 2.0).abs() <= 1e-11);
        assert_eq!(back[1].p1, 0.9);

        assert!(matches!(
            parse_sweep_csv("dx_um,epsilon_rad,P1,P2\n0,0,1.5,-0.5\n"),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            parse_sweep_csv("dx_um,epsilon_rad,P1,P2\n"),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn manifest_comment_block_layout() {
        let mut m = RunManifest::new("iqop simulate --circuit builtin:projector");
        m.set_seed(42);
        m.timestamp = "2026-01-01T00:00:00Z".into();
        let block = m.comment_block();
        let lines: Vec<&str> = block.lines().collect();
        assert_eq!(
            lines[0],
            "# command: iqop simulate --circuit builtin:projector"
        );
        assert_eq!(lines[1], "# seed: 42");
        assert_eq!(lines[2], "# rng: chacha12");
        assert!(lines[3].starts_with("# version: "));
        assert_eq!(lines[4], "# generated: 2026-01-01T00:00:00Z");
    }

    #[test]
    fn timestamp_honors_source_date_epoch() {
        std::env::set_var("SOURCE_DATE_EPOCH", "1700000000");
        let stamp = now_rfc3339();
        std::env::remove_var("SOURCE_DATE_EPOCH");
        assert_eq!(stamp, "2023-11-14T22:13:20Z");
    }

    #[test]
    fn json_envelope_merges_payload_after_manifest() {
        let manifest = RunManifest::new("test");
        let payload = serde_json::json!({"kappa0": 9.6, "gamma": 0.537});
        let value = json_envelope(&manifest, payload).unwrap();
        assert!(value.get("manifest").is_some());
        assert_eq!(value["kappa0"], 9.6);
        let text = to_json_text(&value).unwrap();
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn matrix_json_shape() {
        let u = crate::circuits::splitter_matrix();
        let v = matrix_json(&u);
        assert_eq!(v["dim"], 4);
        assert_eq!(v["re"].as_array().unwrap().len(), 16);
        assert_eq!(v["im"].as_array().unwrap().len(), 16);
    }

    #[test]
    fn file_round_trips_through_tempdir() {
        let dir = std::env::temp_dir().join(format!("iqop-io-test-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("table.csv");
        fs::write(&path, "d_m_um,l_c_mm,P4,P3\n6.0,1.5,49.3,50.7\n").unwrap();
        let table = read_measurement_table(&path).unwrap();
        assert_eq!(table.len(), 1);

        let digest = sha256_hex(&path).unwrap();
        assert_eq!(digest.len(), 64);

        let missing = read_measurement_table(&dir.join("absent.csv"));
        assert!(matches!(missing, Err(Error::Io { .. })));
        fs::remove_dir_all(&dir).ok();
    }
}
