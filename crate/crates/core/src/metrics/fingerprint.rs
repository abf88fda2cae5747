//! Three-axis attack fingerprints and the signature taxonomy.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const AXES: [&str; 3] = ["steering_dev", "proc_time_increase_pct", "fps_drop_pct"];

/// Raw fingerprint plus its min-max normalization over the compared set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintVector {
    pub name: String,
    /// (steering deviation, processing-time increase %, FPS drop %).
    pub raw: [f64; 3],
    /// `None` when fewer than two vectors were compared.
    pub normalized: Option<[f64; 3]>,
    /// Axes on which every compared vector was equal.
    pub degenerate: [bool; 3],
}

/// Min-max normalizes each axis over `rows`. The set minimum maps to 0 (so
/// negative overheads are kept, not floored at zero) and the maximum to 1;
/// an axis with no spread maps to 0 and is flagged degenerate.
pub fn fingerprint(rows: &[(String, [f64; 3])]) -> Vec<FingerprintVector> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (_, v) in rows {
        for a in 0..3 {
            lo[a] = lo[a].min(v[a]);
            hi[a] = hi[a].max(v[a]);
        }
    }
    let degenerate: [bool; 3] = std::array::from_fn(|a| rows.len() < 2 || !(hi[a] > lo[a]));
    rows.iter()
        .map(|(name, v)| FingerprintVector {
            name: name.clone(),
            raw: *v,
            normalized: (rows.len() >= 2).then(|| {
                std::array::from_fn(|a| {
                    if degenerate[a] {
                        0.0
                    } else {
                        ((v[a] - lo[a]) / (hi[a] - lo[a])).clamp(0.0, 1.0)
                    }
                })
            }),
            degenerate,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Signature {
    ControlDominant,
    MultiDimensional,
    ResponsivenessDominant,
    ControlModerate,
    Nominal,
}

impl Signature {
    pub fn as_str(&self) -> &'static str {
        match self {
            Signature::ControlDominant => "control-dominant",
            Signature::MultiDimensional => "multi-dimensional",
            Signature::ResponsivenessDominant => "responsiveness-dominant",
            Signature::ControlModerate => "control-moderate",
            Signature::Nominal => "nominal",
        }
    }
}

impl std::fmt::Display for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub hi: f64,
    pub lo: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { hi: 0.6, lo: 0.3 }
    }
}

impl Thresholds {
    pub fn new(hi: f64, lo: f64) -> Result<Self> {
        let t = Thresholds { hi, lo };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lo) || !(0.0..=1.0).contains(&self.hi) || !(self.lo < self.hi) {
            return Err(Error::Config(format!(
                "thresholds need 0 <= lo < hi <= 1, got lo {} hi {}",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Rule set over a normalized (steering, proc, fps) vector, first match
/// wins; every vector gets exactly one label.
pub fn classify_signature(n: [f64; 3], t: Thresholds) -> Signature {
    let [steer, proc, fps] = n;
    let quiet = |v: f64| v <= t.lo;
    if steer >= t.hi && quiet(proc) && quiet(fps) {
        return Signature::ControlDominant;
    }
    if n.iter().all(|&v| v >= t.lo) && n.iter().filter(|&&v| v >= t.hi).count() >= 2 {
        return Signature::MultiDimensional;
    }
    if fps >= t.hi && quiet(steer) {
        return Signature::ResponsivenessDominant;
    }
    if steer > t.lo && steer < t.hi && quiet(proc) && quiet(fps) {
        return Signature::ControlModerate;
    }
    Signature::Nominal
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes_and_degenerate_axes() {
        let fp = fingerprint(&[
            ("a".into(), [0.5, 1.0, 3.0]),
            ("b".into(), [0.1, 1.0, 6.0]),
            ("c".into(), [0.3, 1.0, -3.0]),
        ]);
        assert_eq!(fp[0].normalized.unwrap()[0], 1.0);
        assert_eq!(fp[1].normalized.unwrap()[0], 0.0);
        assert_eq!(fp[1].normalized.unwrap()[2], 1.0);
        assert_eq!(fp[2].normalized.unwrap()[2], 0.0);
        assert!(fp.iter().all(|f| f.degenerate[1] && f.normalized.unwrap()[1] == 0.0));
        assert!(!fp[0].degenerate[0]);
    }

    #[test]
    fn single_vector_has_no_normalization() {
        let fp = fingerprint(&[("only".into(), [0.2, 3.0, 1.0])]);
        assert_eq!(fp[0].normalized, None);
    }

    #[test]
    fn nominal_cases() {
        let t = Thresholds::default();
        assert_eq!(classify_signature([0.0; 3], t), Signature::Nominal);
        assert_eq!(classify_signature([1.0, 0.0, 0.0], t), Signature::ControlDominant);
        assert_eq!(classify_signature([0.4, 0.1, 0.2], t), Signature::ControlModerate);
        assert_eq!(classify_signature([0.1, 0.9, 0.9], t), Signature::ResponsivenessDominant);
        assert_eq!(classify_signature([0.5, 0.9, 0.9], t), Signature::MultiDimensional);
        assert!(Thresholds::new(0.3, 0.6).is_err());
    }
}
