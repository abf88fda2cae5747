//! Frame-level log records and their CSV form.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Column order of every trial CSV.
pub const COLUMNS: [&str; 32] = [
    "trial_id",
    "frame_id",
    "t_sim",
    "t_wall",
    "phase",
    "attack_type",
    "attack_layer",
    "epsilon",
    "alpha",
    "num_iter",
    "random_start",
    "adv_x",
    "adv_y",
    "steering_x_raw",
    "steering_x_clipped",
    "rotation",
    "speed",
    "processing_time_ms",
    "fps_estimate",
    "latency_e2e_ms",
    "dos_enabled",
    "dos_type",
    "dos_intensity",
    "dropped_frames",
    "performance_degradation",
    "manipulation_magnitude",
    "mitm_success",
    "rapid_steering_event",
    "convergence_failure",
    "frame_saved",
    "seed",
    "source",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Baseline,
    Attack,
    /// Marker row written when a trial stops on a hard error.
    Aborted,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Baseline => "baseline",
            Phase::Attack => "attack",
            Phase::Aborted => "aborted",
        }
    }

    fn parse(s: &str) -> Option<Phase> {
        match s {
            "baseline" => Some(Phase::Baseline),
            "attack" => Some(Phase::Attack),
            "aborted" => Some(Phase::Aborted),
            _ => None,
        }
    }
}

/// Rounds to 9 significant digits, the precision the CSV carries.
pub fn q9(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.8e}").parse().expect("formatted float parses")
}

fn q9o(v: Option<f64>) -> Option<f64> {
    v.map(q9)
}

/// One CSV row. `None` fields are written as empty cells. Rows for frames
/// dropped by a DoS gate carry no model, control or timing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLogRecord {
    pub trial_id: String,
    pub frame_id: u64,
    pub t_sim: f64,
    pub t_wall: Option<f64>,
    pub phase: Phase,
    pub attack_type: String,
    pub attack_layer: Option<String>,
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
    pub num_iter: Option<u32>,
    pub random_start: Option<bool>,
    pub adv_x: Option<f64>,
    pub adv_y: Option<f64>,
    pub steering_x_raw: Option<f64>,
    pub steering_x_clipped: Option<f64>,
    pub rotation: Option<f64>,
    pub speed: Option<f64>,
    pub processing_time_ms: Option<f64>,
    pub fps_estimate: Option<f64>,
    pub latency_e2e_ms: Option<f64>,
    pub dos_enabled: bool,
    pub dos_type: Option<String>,
    pub dos_intensity: Option<f64>,
    pub dropped_frames: u64,
    pub performance_degradation: Option<f64>,
    pub manipulation_magnitude: Option<f64>,
    pub mitm_success: Option<bool>,
    pub rapid_steering_event: Option<bool>,
    pub convergence_failure: Option<bool>,
    pub frame_saved: bool,
    pub seed: u64,
    pub source: String,
}

impl TrialLogRecord {
    pub fn empty(trial_id: &str, frame_id: u64, t_sim: f64, phase: Phase, seed: u64) -> Self {
        TrialLogRecord {
            trial_id: trial_id.to_string(),
            frame_id,
            t_sim,
            t_wall: None,
            phase,
            attack_type: "none".into(),
            attack_layer: None,
            epsilon: None,
            alpha: None,
            num_iter: None,
            random_start: None,
            adv_x: None,
            adv_y: None,
            steering_x_raw: None,
            steering_x_clipped: None,
            rotation: None,
            speed: None,
            processing_time_ms: None,
            fps_estimate: None,
            latency_e2e_ms: None,
            dos_enabled: false,
            dos_type: None,
            dos_intensity: None,
            dropped_frames: 0,
            performance_degradation: None,
            manipulation_magnitude: None,
            mitm_success: None,
            rapid_steering_event: None,
            convergence_failure: None,
            frame_saved: false,
            seed,
            source: "pipeline".into(),
        }
    }

    /// The frame reached the model (not dropped, not an abort marker).
    pub fn is_processed(&self) -> bool {
        self.steering_x_clipped.is_some()
    }

    /// Rounds every float to the CSV precision so that a written and re-read
    /// record compares equal to the in-memory one.
    pub fn quantize(&mut self) {
        self.t_sim = q9(self.t_sim);
        self.t_wall = q9o(self.t_wall);
        self.epsilon = q9o(self.epsilon);
        self.alpha = q9o(self.alpha);
        self.adv_x = q9o(self.adv_x);
        self.adv_y = q9o(self.adv_y);
        self.steering_x_raw = q9o(self.steering_x_raw);
        self.steering_x_clipped = q9o(self.steering_x_clipped);
        self.rotation = q9o(self.rotation);
        self.speed = q9o(self.speed);
        self.processing_time_ms = q9o(self.processing_time_ms);
        self.fps_estimate = q9o(self.fps_estimate);
        self.latency_e2e_ms = q9o(self.latency_e2e_ms);
        self.dos_intensity = q9o(self.dos_intensity);
        self.performance_degradation = q9o(self.performance_degradation);
        self.manipulation_magnitude = q9o(self.manipulation_magnitude);
    }

    fn cells(&self) -> Vec<String> {
        fn f(v: f64) -> String {
            format!("{}", q9(v))
        }
        fn fo(v: Option<f64>) -> String {
            v.map(f).unwrap_or_default()
        }
        fn bo(v: Option<bool>) -> String {
            v.map(|b| b.to_string()).unwrap_or_default()
        }
        vec![
            self.trial_id.clone(),
            self.frame_id.to_string(),
            f(self.t_sim),
            fo(self.t_wall),
            self.phase.as_str().into(),
            self.attack_type.clone(),
            self.attack_layer.clone().unwrap_or_default(),
            fo(self.epsilon),
            fo(self.alpha),
            self.num_iter.map(|n| n.to_string()).unwrap_or_default(),
            bo(self.random_start),
            fo(self.adv_x),
            fo(self.adv_y),
            fo(self.steering_x_raw),
            fo(self.steering_x_clipped),
            fo(self.rotation),
            fo(self.speed),
            fo(self.processing_time_ms),
            fo(self.fps_estimate),
            fo(self.latency_e2e_ms),
            self.dos_enabled.to_string(),
            self.dos_type.clone().unwrap_or_default(),
            fo(self.dos_intensity),
            self.dropped_frames.to_string(),
            fo(self.performance_degradation),
            fo(self.manipulation_magnitude),
            bo(self.mitm_success),
            bo(self.rapid_steering_event),
            bo(self.convergence_failure),
            self.frame_saved.to_string(),
            self.seed.to_string(),
            self.source.clone(),
        ]
    }
}

pub fn write_csv_to<W: Write>(records: &[TrialLogRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for r in records {
        w.write_record(r.cells())?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_csv(records: &[TrialLogRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(records, std::io::BufWriter::new(file))
}

pub fn csv_string(records: &[TrialLogRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv_to(records, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

struct Row<'a> {
    rec: &'a csv::StringRecord,
    line: usize,
}

impl Row<'_> {
    fn raw(&self, col: usize) -> &str {
        self.rec.get(col).unwrap_or("")
    }

    fn err(&self, col: usize, message: impl Into<String>) -> Error {
        Error::CsvValue {
            row: self.line,
            column: COLUMNS[col].into(),
            message: message.into(),
        }
    }

    fn opt<T: std::str::FromStr>(&self, col: usize) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let s = self.raw(col);
        if s.is_empty() {
            return Ok(None);
        }
        s.parse().map(Some).map_err(|e| self.err(col, format!("`{s}`: {e}")))
    }

    fn req<T: std::str::FromStr>(&self, col: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(col)?.ok_or_else(|| self.err(col, "required value is empty"))
    }

    fn text(&self, col: usize) -> Option<String> {
        let s = self.raw(col);
        (!s.is_empty()).then(|| s.to_string())
    }
}

pub fn read_csv_from<R: Read>(input: R) -> Result<Vec<TrialLogRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != COLUMNS {
        let missing = COLUMNS
            .iter()
            .filter(|c| !header.iter().any(|h| h == *c))
            .map(|c| c.to_string())
            .collect();
        let unexpected = header
            .iter()
            .filter(|h| !COLUMNS.contains(&h.as_str()))
            .cloned()
            .collect();
        return Err(Error::Schema { missing, unexpected });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let r = Row { rec: &rec, line: i + 2 };
        let phase_s = r.raw(4);
        let phase = Phase::parse(phase_s).ok_or_else(|| r.err(4, format!("unknown phase `{phase_s}`")))?;
        out.push(TrialLogRecord {
            trial_id: r.raw(0).to_string(),
            frame_id: r.req(1)?,
            t_sim: r.req(2)?,
            t_wall: r.opt(3)?,
            phase,
            attack_type: r.raw(5).to_string(),
            attack_layer: r.text(6),
            epsilon: r.opt(7)?,
            alpha: r.opt(8)?,
            num_iter: r.opt(9)?,
            random_start: r.opt(10)?,
            adv_x: r.opt(11)?,
            adv_y: r.opt(12)?,
            steering_x_raw: r.opt(13)?,
            steering_x_clipped: r.opt(14)?,
            rotation: r.opt(15)?,
            speed: r.opt(16)?,
            processing_time_ms: r.opt(17)?,
            fps_estimate: r.opt(18)?,
            latency_e2e_ms: r.opt(19)?,
            dos_enabled: r.req(20)?,
            dos_type: r.text(21),
            dos_intensity: r.opt(22)?,
            dropped_frames: r.req(23)?,
            performance_degradation: r.opt(24)?,
            manipulation_magnitude: r.opt(25)?,
            mitm_success: r.opt(26)?,
            rapid_steering_event: r.opt(27)?,
            convergence_failure: r.opt(28)?,
            frame_saved: r.req(29)?,
            seed: r.req(30)?,
            source: r.raw(31).to_string(),
        });
    }
    Ok(out)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<TrialLogRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_from(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrialLogRecord {
        let mut r = TrialLogRecord::empty("pgd/attack/0", 151, 151.0 / 30.0, Phase::Attack, 42);
        r.attack_type = "PGD".into();
        r.attack_layer = Some("model_input".into());
        r.epsilon = Some(1.0);
        r.alpha = Some(0.01);
        r.num_iter = Some(10);
        r.random_start = Some(true);
        r.steering_x_raw = Some(std::f64::consts::PI / 10.0);
        r.steering_x_clipped = Some(0.1 / 3.0);
        r.processing_time_ms = Some(12.345678912345);
        r.rapid_steering_event = Some(false);
        r.quantize();
        r
    }

    #[test]
    fn q9_keeps_nine_digits() {
        assert_eq!(q9(1.0 / 3.0), 0.333333333);
        assert_eq!(q9(123456789.4), 123456789.0);
        assert_eq!(q9(0.0), 0.0);
        assert_eq!(q9(-2.5e-12), -2.5e-12);
    }

    #[test]
    fn round_trip() {
        let recs = vec![sample(), {
            let mut d = TrialLogRecord::empty("x", 3, 0.1, Phase::Baseline, 1);
            d.quantize();
            d
        }];
        let text = csv_string(&recs).unwrap();
        assert_eq!(read_csv_from(text.as_bytes()).unwrap(), recs);
    }

    #[test]
    fn empty_is_header_only() {
        let text = csv_string(&[]).unwrap();
        assert_eq!(text.trim_end(), COLUMNS.join(","));
        assert!(read_csv_from(text.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn schema_mismatch_reports_diff() {
        let text = csv_string(&[sample()]).unwrap().replacen("adv_x", "advx", 1);
        match read_csv_from(text.as_bytes()) {
            Err(Error::Schema { missing, unexpected }) => {
                assert_eq!(missing, vec!["adv_x".to_string()]);
                assert_eq!(unexpected, vec!["advx".to_string()]);
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn bad_value_names_column() {
        let text = csv_string(&[sample()]).unwrap().replace(",PGD,", ",PGD,").replace("151,", "x51,");
        match read_csv_from(text.as_bytes()) {
            Err(Error::CsvValue { column, row, .. }) => {
                assert_eq!(column, "frame_id");
                assert_eq!(row, 2);
            }
            other => panic!("expected value error, got {other:?}"),
        }
    }
}
