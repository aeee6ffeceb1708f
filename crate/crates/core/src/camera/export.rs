use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CameraPose, Observation};

/// JSON sidecar written next to the raster and depth files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSidecar {
    pub width: usize,
    pub height: usize,
    pub depth_encoding: String,
    pub camera: CameraPose,
}

pub fn encode_png(rgb: &[u8], width: usize, height: usize) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("png header into memory");
        w.write_image_data(rgb).expect("png data into memory");
    }
    out
}

/// RGB8 pixels and `(width, height)` of a PNG.
pub fn decode_png(bytes: &[u8]) -> Result<(Vec<u8>, usize, usize), png::DecodingError> {
    let dec = png::Decoder::new(io::Cursor::new(bytes));
    let mut reader = dec.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    Ok((buf, info.width as usize, info.height as usize))
}

impl Observation {
    pub fn png(&self) -> Vec<u8> {
        encode_png(&self.rgb, self.width(), self.width())
    }

    /// Row-major little-endian `f32` depth.
    pub fn depth_bytes(&self) -> Vec<u8> {
        self.depth.iter().flat_map(|d| d.to_le_bytes()).collect()
    }

    pub fn depth_from_bytes(bytes: &[u8]) -> Option<Vec<f32>> {
        bytes.len().is_multiple_of(4).then(|| bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    pub fn sidecar(&self) -> CameraSidecar {
        CameraSidecar { width: self.width(), height: self.width(), depth_encoding: "f32le".into(), camera: self.camera }
    }

    /// Writes `stem.png`, `stem.depth.f32` and `stem.camera.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> io::Result<[PathBuf; 3]> {
        fs::create_dir_all(dir)?;
        let paths = [dir.join(format!("{stem}.png")), dir.join(format!("{stem}.depth.f32")), dir.join(format!("{stem}.camera.json"))];
        fs::write(&paths[0], self.png())?;
        fs::write(&paths[1], self.depth_bytes())?;
        fs::write(&paths[2], serde_json::to_string_pretty(&self.sidecar())? + "\n")?;
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use crate::camera::*;
    use crate::scene::{generate_cabinet, GenerationConstraints};

    #[test]
    fn export_round_trip() {
        let c = generate_cabinet(2, &GenerationConstraints::default()).unwrap();
        let obs = render(&place_camera(&c, 0), &c, 0);
        let (rgb, w, h) = decode_png(&obs.png()).unwrap();
        assert_eq!((w, h), (256, 256));
        assert_eq!(rgb, obs.rgb);
        let depth = Observation::depth_from_bytes(&obs.depth_bytes()).unwrap();
        assert!(depth.iter().zip(&obs.depth).all(|(a, b)| a.to_bits() == b.to_bits()));
        let dir = tempfile::tempdir().unwrap();
        let paths = obs.save(dir.path(), "view").unwrap();
        let side: CameraSidecar = serde_json::from_str(&std::fs::read_to_string(&paths[2]).unwrap()).unwrap();
        assert_eq!(side.camera, obs.camera);
        assert_eq!(std::fs::read(&paths[1]).unwrap().len(), 256 * 256 * 4);
    }
}
