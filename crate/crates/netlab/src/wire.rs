//! JSON-over-HTTP wire format between robot, proxy and peer.
//!
//! Every body carries a magic tag and a format version; frame payloads are
//! base64 PNG with a SHA-256 checksum.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{NetError, Result};

pub const MAGIC: &str = "RSIG";
pub const WIRE_VERSION: u32 = 1;

pub const FRAME_PATH: &str = "/api/frame";
pub const STATUS_PATH: &str = "/api/status";

pub fn checksum(payload: &[u8]) -> String {
    hex::encode(Sha256::digest(payload))
}

fn check_header(magic: &str, version: u32) -> Result<()> {
    if magic != MAGIC {
        return Err(NetError::Wire(format!("bad magic `{magic}`")));
    }
    if version != WIRE_VERSION {
        return Err(NetError::Wire(format!("unsupported wire version {version}")));
    }
    Ok(())
}

/// One camera frame uploaded by the robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFrameMsg {
    pub magic: String,
    pub version: u32,
    pub session: String,
    pub frame_id: u64,
    pub t_capture: f64,
    /// Base64 of the PNG bytes.
    pub payload: String,
    /// Hex SHA-256 of the PNG bytes.
    pub checksum: String,
    /// Ground-truth steering target, when the sender knows it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_x: Option<f64>,
}

impl WireFrameMsg {
    pub fn new(session: &str, frame_id: u64, t_capture: f64, png: &[u8], truth_x: Option<f64>) -> Self {
        WireFrameMsg {
            magic: MAGIC.into(),
            version: WIRE_VERSION,
            session: session.into(),
            frame_id,
            t_capture,
            payload: B64.encode(png),
            checksum: checksum(png),
            truth_x,
        }
    }

    pub fn from_json(body: &[u8]) -> Result<Self> {
        let m: WireFrameMsg = serde_json::from_slice(body)?;
        check_header(&m.magic, m.version)?;
        Ok(m)
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("frame message serializes")
    }

    /// Decoded PNG bytes; fails when the checksum does not match.
    pub fn png(&self) -> Result<Vec<u8>> {
        let bytes = B64
            .decode(&self.payload)
            .map_err(|e| NetError::Wire(format!("payload base64: {e}")))?;
        if checksum(&bytes) != self.checksum {
            return Err(NetError::Wire(format!("checksum mismatch on frame {}", self.frame_id)));
        }
        Ok(bytes)
    }

    /// Replaces the payload and recomputes the checksum.
    pub fn with_png(mut self, png: &[u8]) -> Self {
        self.payload = B64.encode(png);
        self.checksum = checksum(png);
        self
    }
}

/// Control decision returned for a frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireControlMsg {
    pub frame_id: u64,
    pub x: f64,
    pub y: f64,
    pub rotation: f64,
}

#[derive(Serialize, Deserialize)]
struct ControlEnvelope {
    magic: String,
    version: u32,
    #[serde(flatten)]
    msg: WireControlMsg,
}

impl WireControlMsg {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.x) || !(-1.0..=1.0).contains(&self.y) || !self.rotation.is_finite() {
            return Err(NetError::Wire(format!(
                "control out of range: x {} y {} rotation {}",
                self.x, self.y, self.rotation
            )));
        }
        Ok(())
    }

    pub fn from_json(body: &[u8]) -> Result<Self> {
        let env: ControlEnvelope = serde_json::from_slice(body)?;
        check_header(&env.magic, env.version)?;
        env.msg.validate()?;
        Ok(env.msg)
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(&ControlEnvelope {
            magic: MAGIC.into(),
            version: WIRE_VERSION,
            msg: *self,
        })
        .expect("control message serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatusMsg {
    pub uptime_s: f64,
    pub requests: u64,
    pub frames: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip_preserves_checksum() {
        let png = b"\x89PNG fake bytes".to_vec();
        let m = WireFrameMsg::new("s", 4, 0.25, &png, Some(0.1));
        let back = WireFrameMsg::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.png().unwrap(), png);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut m = WireFrameMsg::new("s", 1, 0.0, b"abc", None);
        m.payload = B64.encode(b"abd");
        assert!(m.png().is_err());
    }

    #[test]
    fn control_round_trip_is_exact() {
        let c = WireControlMsg {
            frame_id: 9,
            x: 0.1 + 0.3,
            y: -1.0 / 3.0,
            rotation: 0.2,
        };
        assert_eq!(WireControlMsg::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn header_is_checked() {
        let c = WireControlMsg {
            frame_id: 0,
            x: 0.0,
            y: 0.0,
            rotation: 0.0,
        };
        let text = String::from_utf8(c.to_json()).unwrap().replace("RSIG", "XXXX");
        assert!(WireControlMsg::from_json(text.as_bytes()).is_err());
        let bad = WireControlMsg { x: 1.5, ..c };
        assert!(WireControlMsg::from_json(&bad.to_json()).is_err());
    }
}
