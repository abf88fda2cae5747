//! Attack injectors, one per pipeline edge.
//!
//! | attack        | edge                      |
//! |---------------|---------------------------|
//! | FGSM / PGD    | preprocess -> model       |
//! | MitM input    | camera -> ROI             |
//! | MitM output   | postprocess -> controller |
//! | DoS           | camera -> ROI (I/O)       |
//! | phantom       | world, before the camera  |

pub mod adversarial;
pub mod dos;
pub mod mitm;
pub mod phantom;

use serde::{Deserialize, Serialize};

pub use adversarial::{fgsm_perturb, fgsm_attack, pgd_perturb, PgdOutcome};
pub use dos::{dos_flood_inference, dos_gate, GateDecision};
pub use mitm::{mitm_input_apply, mitm_output_apply, MitmInputResult, SyntheticSource};
pub use phantom::{phantom_schedule, PhantomConfig};

use crate::{Error, Result};

fn default_fgsm_period() -> u32 {
    1
}

fn default_pgd_period() -> u32 {
    3
}

/// One attack family with its parameters. In config files the variant is
/// selected by `type` and, for the MitM and DoS families, the sub-variant by
/// `kind`; all parameters sit flat in the same table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", try_from = "RawAttack")]
pub enum AttackConfig {
    Fgsm {
        /// ℓ∞ budget in normalized input units.
        epsilon: f64,
        #[serde(default)]
        targeted: bool,
        #[serde(default)]
        target: Option<[f64; 2]>,
        #[serde(default = "default_fgsm_period")]
        period_frames: u32,
    },
    Pgd {
        epsilon: f64,
        alpha: f64,
        num_iter: u32,
        random_start: bool,
        #[serde(default = "default_pgd_period")]
        period_frames: u32,
        #[serde(default)]
        targeted: bool,
        #[serde(default)]
        target: Option<[f64; 2]>,
    },
    MitmInput {
        #[serde(flatten)]
        kind: MitmInputKind,
    },
    MitmOutput {
        #[serde(flatten)]
        kind: MitmOutputKind,
        /// Also rewrite y with the same rule.
        #[serde(default)]
        apply_to_y: bool,
    },
    Dos {
        #[serde(flatten)]
        kind: DosKind,
    },
    Phantom {
        #[serde(flatten)]
        config: PhantomConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MitmInputKind {
    /// Additive Gaussian noise, standard deviation in 8-bit pixel units.
    Noise { std: f64 },
    /// Gaussian blur with an odd square kernel.
    Blur { kernel: usize, sigma: f64 },
    /// Full-frame replacement.
    Synthetic { source: SyntheticSource },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MitmOutputKind {
    Target { value: f64 },
    Bias { offset: f64 },
    Invert,
    Random { low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DosKind {
    Delay { ms: f64 },
    Drop { rate: f64 },
    /// Duplicate inference requests per captured frame.
    Flood { requests_per_frame: u32 },
}

impl DosKind {
    pub fn label(&self) -> &'static str {
        match self {
            DosKind::Delay { .. } => "delay",
            DosKind::Drop { .. } => "drop",
            DosKind::Flood { .. } => "flood",
        }
    }

    /// The single intensity number logged in `dos_intensity`.
    pub fn intensity(&self) -> f64 {
        match *self {
            DosKind::Delay { ms } => ms,
            DosKind::Drop { rate } => rate,
            DosKind::Flood { requests_per_frame } => requests_per_frame as f64,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("attack: {m}")));
        match self {
            AttackConfig::Fgsm {
                epsilon,
                targeted,
                target,
                period_frames,
            } => {
                if !(*epsilon >= 0.0) || !epsilon.is_finite() {
                    return bad(format!("epsilon {epsilon} must be >= 0"));
                }
                if *targeted && target.is_none() {
                    return bad("targeted FGSM needs `target`".into());
                }
                if *period_frames == 0 {
                    return bad("period_frames must be >= 1".into());
                }
            }
            AttackConfig::Pgd {
                epsilon,
                alpha,
                period_frames,
                targeted,
                target,
                ..
            } => {
                if !(*epsilon >= 0.0) || !epsilon.is_finite() {
                    return bad(format!("epsilon {epsilon} must be >= 0"));
                }
                if !(*alpha > 0.0) || !alpha.is_finite() {
                    return bad(format!("alpha {alpha} must be > 0"));
                }
                if *period_frames == 0 {
                    return bad("period_frames must be >= 1".into());
                }
                if *targeted && target.is_none() {
                    return bad("targeted PGD needs `target`".into());
                }
            }
            AttackConfig::MitmInput { kind } => match kind {
                MitmInputKind::Noise { std } if !(*std >= 0.0) => {
                    return bad(format!("noise std {std} must be >= 0"));
                }
                MitmInputKind::Blur { kernel, sigma } if *kernel % 2 == 0 || !(*sigma > 0.0) => {
                    return bad(format!("blur needs odd kernel and sigma > 0, got {kernel}/{sigma}"));
                }
                MitmInputKind::Synthetic { source } => source.validate()?,
                _ => {}
            },
            AttackConfig::MitmOutput { kind, .. } => {
                if let MitmOutputKind::Random { low, high } = kind {
                    if !(low <= high) {
                        return bad("random bounds need low <= high".into());
                    }
                }
            }
            AttackConfig::Dos { kind } => match *kind {
                DosKind::Delay { ms } if !(ms >= 0.0) || !ms.is_finite() => {
                    return bad(format!("delay {ms} ms must be >= 0"));
                }
                DosKind::Drop { rate } if !(0.0..=1.0).contains(&rate) => {
                    return bad(format!("drop rate {rate} outside [0, 1]"));
                }
                DosKind::Flood { requests_per_frame: 0 } => {
                    return bad("requests_per_frame must be >= 1".into());
                }
                _ => {}
            },
            AttackConfig::Phantom { config } => config.validate()?,
        }
        Ok(())
    }

    /// Value of the `attack_type` column during the attack phase.
    pub fn attack_type(&self) -> &'static str {
        match self {
            AttackConfig::Fgsm { .. } => "FGSM",
            AttackConfig::Pgd { .. } => "PGD",
            AttackConfig::MitmInput { kind } => match kind {
                MitmInputKind::Noise { .. } => "noise",
                MitmInputKind::Blur { .. } => "blur",
                MitmInputKind::Synthetic { .. } => "synthetic",
            },
            AttackConfig::MitmOutput { kind, .. } => match kind {
                MitmOutputKind::Target { .. } => "target",
                MitmOutputKind::Bias { .. } => "bias",
                MitmOutputKind::Invert => "invert",
                MitmOutputKind::Random { .. } => "random",
            },
            AttackConfig::Dos { .. } => "dos",
            AttackConfig::Phantom { .. } => "phantom",
        }
    }

    /// Value of the `attack_layer` column.
    pub fn attack_layer(&self) -> &'static str {
        match self {
            AttackConfig::Fgsm { .. } | AttackConfig::Pgd { .. } => "model_input",
            AttackConfig::MitmInput { .. } => "input",
            AttackConfig::MitmOutput { .. } => "output_modification",
            AttackConfig::Dos { .. } => "io",
            AttackConfig::Phantom { .. } => "physical",
        }
    }
}

/// Flat deserialization image of [`AttackConfig`]; serde cannot combine
/// flattened sub-enums with unknown-field rejection.
#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum RawAttack {
    Fgsm {
        epsilon: f64,
        #[serde(default)]
        targeted: bool,
        #[serde(default)]
        target: Option<[f64; 2]>,
        #[serde(default = "default_fgsm_period")]
        period_frames: u32,
    },
    Pgd {
        epsilon: f64,
        alpha: f64,
        num_iter: u32,
        random_start: bool,
        #[serde(default = "default_pgd_period")]
        period_frames: u32,
        #[serde(default)]
        targeted: bool,
        #[serde(default)]
        target: Option<[f64; 2]>,
    },
    MitmInput {
        kind: String,
        std: Option<f64>,
        kernel: Option<usize>,
        sigma: Option<f64>,
        source: Option<SyntheticSource>,
    },
    MitmOutput {
        kind: String,
        value: Option<f64>,
        offset: Option<f64>,
        low: Option<f64>,
        high: Option<f64>,
        #[serde(default)]
        apply_to_y: bool,
    },
    Dos {
        kind: String,
        ms: Option<f64>,
        rate: Option<f64>,
        requests_per_frame: Option<u32>,
    },
    Phantom(PhantomConfig),
}

fn pick<T>(kind: &str, name: &str, v: Option<T>) -> std::result::Result<T, String> {
    v.ok_or_else(|| format!("attack kind `{kind}` requires `{name}`"))
}

fn forbid(kind: &str, fields: &[(&str, bool)]) -> std::result::Result<(), String> {
    match fields.iter().find(|(_, present)| *present) {
        Some((name, _)) => Err(format!("field `{name}` does not apply to attack kind `{kind}`")),
        None => Ok(()),
    }
}

impl TryFrom<RawAttack> for AttackConfig {
    type Error = String;

    fn try_from(raw: RawAttack) -> std::result::Result<Self, String> {
        Ok(match raw {
            RawAttack::Fgsm {
                epsilon,
                targeted,
                target,
                period_frames,
            } => AttackConfig::Fgsm {
                epsilon,
                targeted,
                target,
                period_frames,
            },
            RawAttack::Pgd {
                epsilon,
                alpha,
                num_iter,
                random_start,
                period_frames,
                targeted,
                target,
            } => AttackConfig::Pgd {
                epsilon,
                alpha,
                num_iter,
                random_start,
                period_frames,
                targeted,
                target,
            },
            RawAttack::MitmInput {
                kind,
                std,
                kernel,
                sigma,
                source,
            } => {
                let k = kind.as_str();
                let kind = match k {
                    "noise" => {
                        forbid(k, &[("kernel", kernel.is_some()), ("sigma", sigma.is_some()), ("source", source.is_some())])?;
                        MitmInputKind::Noise { std: pick(k, "std", std)? }
                    }
                    "blur" => {
                        forbid(k, &[("std", std.is_some()), ("source", source.is_some())])?;
                        MitmInputKind::Blur {
                            kernel: pick(k, "kernel", kernel)?,
                            sigma: pick(k, "sigma", sigma)?,
                        }
                    }
                    "synthetic" => {
                        forbid(k, &[("std", std.is_some()), ("kernel", kernel.is_some()), ("sigma", sigma.is_some())])?;
                        MitmInputKind::Synthetic {
                            source: pick(k, "source", source)?,
                        }
                    }
                    other => return Err(format!("unknown mitm_input kind `{other}` (noise, blur, synthetic)")),
                };
                AttackConfig::MitmInput { kind }
            }
            RawAttack::MitmOutput {
                kind,
                value,
                offset,
                low,
                high,
                apply_to_y,
            } => {
                let k = kind.as_str();
                let kind = match k {
                    "target" => {
                        forbid(k, &[("offset", offset.is_some()), ("low", low.is_some()), ("high", high.is_some())])?;
                        MitmOutputKind::Target {
                            value: pick(k, "value", value)?,
                        }
                    }
                    "bias" => {
                        forbid(k, &[("value", value.is_some()), ("low", low.is_some()), ("high", high.is_some())])?;
                        MitmOutputKind::Bias {
                            offset: pick(k, "offset", offset)?,
                        }
                    }
                    "invert" => {
                        forbid(
                            k,
                            &[
                                ("value", value.is_some()),
                                ("offset", offset.is_some()),
                                ("low", low.is_some()),
                                ("high", high.is_some()),
                            ],
                        )?;
                        MitmOutputKind::Invert
                    }
                    "random" => {
                        forbid(k, &[("value", value.is_some()), ("offset", offset.is_some())])?;
                        MitmOutputKind::Random {
                            low: pick(k, "low", low)?,
                            high: pick(k, "high", high)?,
                        }
                    }
                    other => return Err(format!("unknown mitm_output kind `{other}` (target, bias, invert, random)")),
                };
                AttackConfig::MitmOutput { kind, apply_to_y }
            }
            RawAttack::Dos {
                kind,
                ms,
                rate,
                requests_per_frame,
            } => {
                let k = kind.as_str();
                let kind = match k {
                    "delay" => {
                        forbid(k, &[("rate", rate.is_some()), ("requests_per_frame", requests_per_frame.is_some())])?;
                        DosKind::Delay { ms: pick(k, "ms", ms)? }
                    }
                    "drop" => {
                        forbid(k, &[("ms", ms.is_some()), ("requests_per_frame", requests_per_frame.is_some())])?;
                        DosKind::Drop {
                            rate: pick(k, "rate", rate)?,
                        }
                    }
                    "flood" => {
                        forbid(k, &[("ms", ms.is_some()), ("rate", rate.is_some())])?;
                        DosKind::Flood {
                            requests_per_frame: pick(k, "requests_per_frame", requests_per_frame)?,
                        }
                    }
                    other => return Err(format!("unknown dos kind `{other}` (delay, drop, flood)")),
                };
                AttackConfig::Dos { kind }
            }
            RawAttack::Phantom(config) => AttackConfig::Phantom { config },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_from_toml() {
        let c: AttackConfig = toml::from_str(
            r#"
            type = "pgd"
            epsilon = 1.0
            alpha = 0.01
            num_iter = 10
            random_start = true
            "#,
        )
        .unwrap();
        assert_eq!(
            c,
            AttackConfig::Pgd {
                epsilon: 1.0,
                alpha: 0.01,
                num_iter: 10,
                random_start: true,
                period_frames: 3,
                targeted: false,
                target: None,
            }
        );
        let c: AttackConfig = toml::from_str("type = \"dos\"\nkind = \"drop\"\nrate = 0.5\n").unwrap();
        assert_eq!(
            c,
            AttackConfig::Dos {
                kind: DosKind::Drop { rate: 0.5 }
            }
        );
        let c: AttackConfig = toml::from_str("type = \"mitm_output\"\nkind = \"target\"\nvalue = 0.8\n").unwrap();
        assert_eq!(c.attack_type(), "target");
    }

    #[test]
    fn serialization_round_trips() {
        for c in [
            AttackConfig::MitmInput {
                kind: MitmInputKind::Blur { kernel: 5, sigma: 1.5 },
            },
            AttackConfig::MitmOutput {
                kind: MitmOutputKind::Random { low: -1.0, high: 1.0 },
                apply_to_y: false,
            },
            AttackConfig::Dos {
                kind: DosKind::Flood { requests_per_frame: 4 },
            },
            AttackConfig::Phantom {
                config: PhantomConfig::default(),
            },
        ] {
            let text = toml::to_string(&c).unwrap();
            assert_eq!(toml::from_str::<AttackConfig>(&text).unwrap(), c, "{text}");
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(serde_json::from_str::<AttackConfig>(&json).unwrap(), c);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let drop = AttackConfig::Dos {
            kind: DosKind::Drop { rate: 1.5 },
        };
        assert!(drop.validate().is_err());
        let pgd = AttackConfig::Pgd {
            epsilon: -1.0,
            alpha: 0.1,
            num_iter: 1,
            random_start: false,
            period_frames: 3,
            targeted: false,
            target: None,
        };
        assert!(pgd.validate().is_err());
        assert!(toml::from_str::<AttackConfig>("type = \"fgsm\"\nepsilon = 1.0\nbogus = 3\n").is_err());
        assert!(toml::from_str::<AttackConfig>("type = \"dos\"\nkind = \"drop\"\nms = 3.0\nrate = 0.1\n").is_err());
        assert!(toml::from_str::<AttackConfig>("type = \"dos\"\nkind = \"drop\"\n").is_err());
    }
}
