//! Compact `kind:arg:arg` flag values for ad-hoc netlab use.

use roadsig_core::attacks::{MitmInputKind, MitmOutputKind, SyntheticSource};
use roadsig_netlab::ShapePolicy;

fn num(s: &str, what: &str) -> Result<f64, String> {
    s.parse::<f64>().map_err(|_| format!("`{s}` is not a number ({what})"))
}

fn split(s: &str) -> (&str, Vec<&str>) {
    let mut it = s.split(':');
    let head = it.next().unwrap_or("");
    (head, it.collect())
}

/// `noise:STD`, `blur:KERNEL:SIGMA`, `synthetic:SOURCE`.
pub fn parse_input(s: &str) -> Result<MitmInputKind, String> {
    match split(s) {
        ("noise", a) if a.len() == 1 => Ok(MitmInputKind::Noise { std: num(a[0], "std")? }),
        ("blur", a) if a.len() == 2 => Ok(MitmInputKind::Blur {
            kernel: a[0].parse().map_err(|_| format!("`{}` is not a kernel size", a[0]))?,
            sigma: num(a[1], "sigma")?,
        }),
        ("synthetic", a) if !a.is_empty() => Ok(MitmInputKind::Synthetic {
            source: SyntheticSource(a.join(":")),
        }),
        _ => Err(format!(
            "bad input manipulation `{s}` (noise:STD | blur:KERNEL:SIGMA | synthetic:SOURCE)"
        )),
    }
}

/// `bias:OFFSET`, `target:VALUE`, `invert`, `random:LOW:HIGH`.
pub fn parse_output(s: &str) -> Result<MitmOutputKind, String> {
    match split(s) {
        ("bias", a) if a.len() == 1 => Ok(MitmOutputKind::Bias { offset: num(a[0], "offset")? }),
        ("target", a) if a.len() == 1 => Ok(MitmOutputKind::Target { value: num(a[0], "value")? }),
        ("invert", a) if a.is_empty() => Ok(MitmOutputKind::Invert),
        ("random", a) if a.len() == 2 => Ok(MitmOutputKind::Random {
            low: num(a[0], "low")?,
            high: num(a[1], "high")?,
        }),
        _ => Err(format!(
            "bad output manipulation `{s}` (bias:OFFSET | target:VALUE | invert | random:LOW:HIGH)"
        )),
    }
}

/// `delay:MS`, `drop:RATE`, `rate:BPS`.
pub fn parse_shape(s: &str) -> Result<ShapePolicy, String> {
    let p = match split(s) {
        ("delay", a) if a.len() == 1 => ShapePolicy::Delay { ms: num(a[0], "ms")? },
        ("drop", a) if a.len() == 1 => ShapePolicy::Drop { rate: num(a[0], "rate")? },
        ("rate", a) if a.len() == 1 => ShapePolicy::RateLimit { bps: num(a[0], "bps")? },
        _ => return Err(format!("bad shape policy `{s}` (delay:MS | drop:RATE | rate:BPS)")),
    };
    p.validate().map_err(|e| e.to_string())?;
    Ok(p)
}
