use rand::Rng as _;

use super::{project_cuboid, CameraPose};
use crate::geom::Cuboid;
use crate::rng;
use crate::scene::Cabinet;

pub const BACKGROUND: [u8; 3] = [72, 78, 88];

/// RGB raster, per-pixel ray depth (`+inf` on background) and the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub rgb: Vec<u8>,
    pub depth: Vec<f32>,
    pub camera: CameraPose,
}

impl Observation {
    pub fn width(&self) -> usize {
        self.camera.resolution
    }

    pub fn pixel(&self, i: usize, j: usize) -> [u8; 3] {
        let k = 3 * (j * self.width() + i);
        [self.rgb[k], self.rgb[k + 1], self.rgb[k + 2]]
    }

    /// Finite depth at `(i, j)`, `None` on background.
    pub fn depth_at(&self, i: usize, j: usize) -> Option<f64> {
        let d = self.depth[j * self.width() + i];
        d.is_finite().then_some(d as f64)
    }
}

/// What a pixel shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelOwner {
    Body,
    Panel(usize),
    Handle(usize),
}

struct Primitive {
    cuboid: Cuboid,
    color: [u8; 3],
    layer: u8,
    owner: PixelOwner,
}

/// Per-part replacement handle colors: each handle independently gets a
/// random color with probability 0.5.
pub fn recolor_handles(c: &Cabinet, recolor_seed: u64) -> Vec<Option<[u8; 3]>> {
    let mut r = rng::rng(recolor_seed);
    c.parts
        .iter()
        .map(|_| r.random_bool(0.5).then(|| [r.random(), r.random(), r.random()]))
        .collect()
}

fn body_colors(id: u64) -> ([u8; 3], [u8; 3]) {
    let mut r = rng::rng(rng::derive(id, "body-color", 0));
    let base = [r.random_range(120..220u8), r.random_range(90..180u8), r.random_range(60..150u8)];
    let panel = base.map(|v| (v as f32 * 0.88) as u8);
    (base, panel)
}

fn primitives(c: &Cabinet, recolor_seed: u64) -> Vec<Primitive> {
    let (body, panel) = body_colors(c.id);
    let recolor = recolor_handles(c, recolor_seed);
    let mut out = vec![Primitive { cuboid: c.body_cuboid(), color: body, layer: 0, owner: PixelOwner::Body }];
    for p in &c.parts {
        out.push(Primitive { cuboid: p.body_cuboid(c.front_x), color: panel, layer: 1, owner: PixelOwner::Panel(p.id) });
    }
    for (p, rc) in c.parts.iter().zip(recolor) {
        out.push(Primitive {
            cuboid: p.handle_cuboid(),
            color: rc.unwrap_or(p.handle.color),
            layer: 2,
            owner: PixelOwner::Handle(p.id),
        });
    }
    out
}

fn shade(color: [u8; 3], face: usize) -> [u8; 3] {
    // faces 0/1 are the local x faces (fronts), the rest are sides
    let k = match face {
        0 | 1 => 1.0,
        4 | 5 => 0.8,
        _ => 0.7,
    };
    color.map(|v| (v as f32 * k) as u8)
}

fn raster(pose: &CameraPose, prims: &[Primitive]) -> (Observation, Vec<Option<PixelOwner>>) {
    let n = pose.resolution;
    let mut rgb = Vec::with_capacity(n * n * 3);
    for _ in 0..n * n {
        rgb.extend_from_slice(&BACKGROUND);
    }
    let mut depth = vec![f32::INFINITY; n * n];
    let mut exact = vec![f64::INFINITY; n * n];
    let mut owner = vec![None; n * n];
    let cam = pose.position;

    // Layers in order, far primitives first within a layer. Each pixel
    // takes the nearest ray hit, so overlapping paint resolves correctly.
    let mut order: Vec<usize> = (0..prims.len()).collect();
    order.sort_by(|&a, &b| {
        let da = (prims[a].cuboid.center() - cam).norm();
        let db = (prims[b].cuboid.center() - cam).norm();
        prims[a].layer.cmp(&prims[b].layer).then(db.total_cmp(&da))
    });
    for k in order {
        let prim = &prims[k];
        let (i0, i1, j0, j1) = match project_cuboid(pose, &prim.cuboid) {
            Ok(b) => (b.y0.floor() as usize, (b.y1.ceil() as usize).min(n), b.z0.floor() as usize, (b.z1.ceil() as usize).min(n)),
            // straddles the camera plane: scan everything
            Err(super::CameraError::BehindCamera) => (0, n, 0, n),
            Err(_) => continue,
        };
        for j in j0..j1 {
            for i in i0..i1 {
                let dir = pose.pixel_ray(i, j);
                let Some(t) = prim.cuboid.ray_hit(&cam, &dir) else { continue };
                let idx = j * n + i;
                if t <= 0.0 || t > exact[idx] {
                    continue;
                }
                let face = prim.cuboid.query(&(cam + dir * t)).face;
                exact[idx] = t;
                depth[idx] = t as f32;
                owner[idx] = Some(prim.owner);
                rgb[3 * idx..3 * idx + 3].copy_from_slice(&shade(prim.color, face));
            }
        }
    }
    (Observation { rgb, depth, camera: *pose }, owner)
}

/// Flat-shaded raster of the cabinet in its current joint configuration.
pub fn render(pose: &CameraPose, c: &Cabinet, recolor_seed: u64) -> Observation {
    raster(pose, &primitives(c, recolor_seed)).0
}

/// Raster plus the primitive owning each pixel.
pub fn render_labeled(pose: &CameraPose, c: &Cabinet, recolor_seed: u64) -> (Observation, Vec<Option<PixelOwner>>) {
    raster(pose, &primitives(c, recolor_seed))
}

pub fn render_empty(pose: &CameraPose) -> Observation {
    raster(pose, &[]).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{place_camera, RESOLUTION};
    use crate::scene::{generate_cabinet, GenerationConstraints};

    #[test]
    fn empty_scene_is_background() {
        let obs = render_empty(&crate::camera::CameraPose::looking_along_x(nalgebra::Point3::origin()));
        assert!(obs.depth.iter().all(|d| d.is_infinite()));
        assert!(obs.rgb.chunks(3).all(|p| p == BACKGROUND));
        assert_eq!(obs.rgb.len(), RESOLUTION * RESOLUTION * 3);
    }

    #[test]
    fn deterministic_bytes() {
        let c = generate_cabinet(4, &GenerationConstraints::default()).unwrap();
        let cam = place_camera(&c, 1);
        let a = render(&cam, &c, 7);
        let b = render(&cam, &c, 7);
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.depth.iter().map(|d| d.to_bits()).collect::<Vec<_>>(), b.depth.iter().map(|d| d.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn handles_are_nearer_and_depth_is_analytic() {
        for seed in 0..10 {
            let c = generate_cabinet(seed, &GenerationConstraints::default()).unwrap();
            let cam = place_camera(&c, seed);
            let (obs, owner) = render_labeled(&cam, &c, seed);
            let mut handle_px = 0;
            for j in 0..RESOLUTION {
                for i in 0..RESOLUTION {
                    let Some(PixelOwner::Handle(pid)) = owner[j * RESOLUTION + i] else { continue };
                    handle_px += 1;
                    let dir = cam.pixel_ray(i, j);
                    let t = c.part(pid).unwrap().handle_cuboid().ray_hit(&cam.position, &dir).unwrap();
                    let d = obs.depth_at(i, j).unwrap();
                    assert!((d - t).abs() < 1e-4);
                    let face = c.body_cuboid().ray_hit(&cam.position, &dir);
                    if let Some(f) = face {
                        assert!(d < f);
                    }
                }
            }
            assert!(handle_px > 0);
        }
    }

    #[test]
    fn recolor_frequency() {
        let mut hits = 0;
        let mut total = 0;
        for seed in 0..10_000u64 {
            let c = generate_cabinet(seed % 50, &GenerationConstraints::default()).unwrap();
            for rc in recolor_handles(&c, seed) {
                total += 1;
                hits += rc.is_some() as usize;
                if total == 10_000 {
                    break;
                }
            }
            if total == 10_000 {
                break;
            }
        }
        assert_eq!(total, 10_000);
        let f = hits as f64 / total as f64;
        assert!((f - 0.5).abs() < 0.02, "{f}");
    }
}
