//! In-pipeline denial-of-service: delay, drop and duplicate inference.

use rand::Rng;

use super::DosKind;
use crate::perception::{ImageTensor, LaneNet, PerceptionOutput, Scalar};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateDecision {
    Pass,
    /// Hold the pipeline for this many milliseconds, then pass.
    Delayed(f64),
    Dropped,
}

/// Decision for one captured frame on the camera -> ROI edge. Drops are
/// Bernoulli(rate) draws from `rng`; floods pass (the extra work happens at
/// inference).
pub fn dos_gate<R: Rng>(kind: &DosKind, rng: &mut R) -> GateDecision {
    match *kind {
        DosKind::Delay { ms } if ms > 0.0 => GateDecision::Delayed(ms),
        DosKind::Delay { .. } => GateDecision::Pass,
        DosKind::Drop { rate } => {
            // random() is in [0, 1): rate 0 never drops, rate 1 always does
            if rng.random::<f64>() < rate {
                GateDecision::Dropped
            } else {
                GateDecision::Pass
            }
        }
        DosKind::Flood { .. } => GateDecision::Pass,
    }
}

/// Runs `requests` forward passes on the same input; only the first result
/// is returned.
pub fn dos_flood_inference<A: Scalar>(
    model: &LaneNet<A>,
    input: &ImageTensor<A>,
    requests: u32,
) -> Result<([f64; 2], PerceptionOutput)> {
    let raw = model.forward_raw(input)?;
    for _ in 1..requests {
        std::hint::black_box(model.forward_raw(std::hint::black_box(input))?);
    }
    Ok((raw, PerceptionOutput::from_raw(raw)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn extreme_rates() {
        let mut rng = stream_rng(1, Stream::DosGate, 0);
        for _ in 0..1000 {
            assert_eq!(dos_gate(&DosKind::Drop { rate: 0.0 }, &mut rng), GateDecision::Pass);
            assert_eq!(dos_gate(&DosKind::Drop { rate: 1.0 }, &mut rng), GateDecision::Dropped);
        }
        assert_eq!(
            dos_gate(&DosKind::Delay { ms: 100.0 }, &mut rng),
            GateDecision::Delayed(100.0)
        );
    }
}
