//! External detector transport: each message is a little-endian `u32`
//! byte length followed by that many bytes of UTF-8 JSON.

use std::io::{self, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{DetectError, Detection, Detector, SceneView};
use crate::camera::{decode_png, BBox, CameraPose, Observation};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);
/// Largest accepted frame payload.
pub const MAX_FRAME: u32 = 64 << 20;
pub const PLUGIN_PROTOCOL: &str = "opend-plugin/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginRequest {
    #[serde(rename = "type")]
    pub kind: String,
    pub protocol: String,
    pub instruction: String,
    pub width: usize,
    pub height: usize,
    /// Base64 PNG, RGB8.
    pub image: String,
    /// Base64 row-major little-endian `f32` ray depth, `+inf` on background.
    pub depth: String,
    pub camera: CameraPose,
}

impl PluginRequest {
    pub fn new(obs: &Observation, instruction: &str) -> Self {
        PluginRequest {
            kind: "detect".into(),
            protocol: PLUGIN_PROTOCOL.into(),
            instruction: instruction.into(),
            width: obs.width(),
            height: obs.width(),
            image: B64.encode(obs.png()),
            depth: B64.encode(obs.depth_bytes()),
            camera: obs.camera,
        }
    }

    /// Decodes the raster and depth back into an observation.
    pub fn observation(&self) -> Result<Observation, String> {
        let png = B64.decode(&self.image).map_err(|e| e.to_string())?;
        let (rgb, w, h) = decode_png(&png).map_err(|e| e.to_string())?;
        let depth = Observation::depth_from_bytes(&B64.decode(&self.depth).map_err(|e| e.to_string())?).ok_or("depth length not a multiple of 4")?;
        if w != self.width || h != self.height || depth.len() != w * h {
            return Err("image and depth sizes disagree".into());
        }
        Ok(Observation { rgb, depth, camera: self.camera })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PluginReply {
    Detection { bbox: [f64; 4], score: f64 },
    Error { error: String },
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    let n = u32::try_from(payload.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Next frame, or `None` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let n = u32::from_le_bytes(len);
    if n > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {n} bytes exceeds limit")));
    }
    let mut buf = vec![0; n as usize];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

fn io_error(e: io::Error) -> DetectError {
    match e.kind() {
        io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => DetectError::Timeout,
        _ => DetectError::ProtocolError(e.to_string()),
    }
}

/// Sends one request to `endpoint` and validates the reply.
pub fn external_detect(endpoint: &str, obs: &Observation, instruction: &str, timeout: Duration) -> Result<Detection, DetectError> {
    let addr = endpoint
        .to_socket_addrs()
        .map_err(|e| DetectError::ProtocolError(format!("resolve {endpoint}: {e}")))?
        .next()
        .ok_or_else(|| DetectError::ProtocolError(format!("no address for {endpoint}")))?;
    let mut stream = TcpStream::connect_timeout(&addr, timeout).map_err(io_error)?;
    stream.set_read_timeout(Some(timeout)).map_err(io_error)?;
    stream.set_write_timeout(Some(timeout)).map_err(io_error)?;
    let body = serde_json::to_vec(&PluginRequest::new(obs, instruction)).expect("request serializes");
    write_frame(&mut stream, &body).map_err(io_error)?;
    let reply = read_frame(&mut stream).map_err(io_error)?.ok_or_else(|| DetectError::ProtocolError("connection closed before reply".into()))?;
    let reply: PluginReply = serde_json::from_slice(&reply).map_err(|e| DetectError::ProtocolError(format!("malformed reply: {e}")))?;
    match reply {
        PluginReply::Error { error } => Err(DetectError::ProtocolError(format!("plugin error: {error}"))),
        PluginReply::Detection { bbox, score } => {
            if !(0.0..=1.0).contains(&score) {
                return Err(DetectError::ProtocolError(format!("score {score} outside [0, 1]")));
            }
            let b = BBox::from_array(bbox);
            if !b.is_valid(obs.width()) {
                return Err(DetectError::InvalidBBox(bbox));
            }
            Ok(Detection { bbox: b, score })
        }
    }
}

/// Answers requests on one connection until the peer closes it.
pub fn serve_plugin_connection<F>(mut stream: TcpStream, mut handler: F) -> io::Result<()>
where
    F: FnMut(&PluginRequest) -> PluginReply,
{
    while let Some(frame) = read_frame(&mut stream)? {
        let reply = match serde_json::from_slice::<PluginRequest>(&frame) {
            Ok(req) => handler(&req),
            Err(e) => PluginReply::Error { error: format!("bad request: {e}") },
        };
        write_frame(&mut stream, &serde_json::to_vec(&reply).expect("reply serializes"))?;
    }
    Ok(())
}

/// Detector backed by an external process speaking the plugin protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct PluginDetector {
    pub endpoint: String,
    pub timeout: Duration,
}

impl PluginDetector {
    pub fn new(endpoint: &str) -> Self {
        PluginDetector { endpoint: endpoint.to_string(), timeout: DEFAULT_TIMEOUT }
    }
}

impl Detector for PluginDetector {
    fn name(&self) -> String {
        format!("plugin:{}", self.endpoint)
    }

    fn locate(&self, view: &SceneView<'_>, instruction: &str, _seed: u64) -> Result<BBox, DetectError> {
        external_detect(&self.endpoint, view.obs, instruction, self.timeout).map(|d| d.bbox)
    }
}
