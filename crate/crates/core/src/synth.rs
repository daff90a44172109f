//! Procedurally deforming scenes rendered to RGB-D with exact ground truth.
//!
//! The object is a tessellated surface in the first frame's camera space.
//! Frame `f` renders the surface after the scene warp at time
//! `f / (frames - 1)`; each pixel remembers which surface point it saw, so
//! correspondences between any two frames are known exactly. Generation is
//! done in `f64`.

use std::path::Path;

use nalgebra::{Matrix3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::benchmark::{AnnotatedMatch, Occlusion, PairAnnotation, Split};
use crate::error::{Error, Result};
use crate::geometry::{io, rasterize, CameraIntrinsics, Image, RgbdFrame, SurfaceMesh};
use crate::provider::{export_heatmaps, pair_name, CorrespondenceProvider, GroundTruthFlow, Manifest, SyntheticOracle};

/// Distance from the camera to the object center (m).
pub const OBJECT_DEPTH: f64 = 1.0;
/// A target point counts as visible when the rendered depth at its pixel is
/// within this distance (m).
const VISIBILITY_TOLERANCE: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Cylinder along x whose right half bends smoothly in the image plane.
    BendingCylinder,
    /// Two rigid cylinder segments joined at a narrow elbow that rotates
    /// partly toward the camera.
    Arm,
    /// Plane pinned at its left edge with a traveling wave across it.
    Sheet,
}

impl SceneKind {
    pub fn name(self) -> &'static str {
        match self {
            SceneKind::BendingCylinder => "bending_cylinder",
            SceneKind::Arm => "arm",
            SceneKind::Sheet => "sheet",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Multiplies the scene's full motion (60° bend, 75° elbow, 5 cm wave).
    pub motion_scale: f64,
    /// Rotation of the object about its vertical axis over the sequence (deg),
    /// equivalent to the camera orbiting it.
    pub camera_orbit_deg: f64,
    /// Standard deviation of additive depth noise (m).
    pub depth_noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            kind: SceneKind::BendingCylinder,
            frames: 30,
            width: 640,
            height: 480,
            motion_scale: 1.0,
            camera_orbit_deg: 0.0,
            depth_noise: 0.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::invalid("a scene needs at least 2 frames"));
        }
        if self.width < 16 || self.height < 12 {
            return Err(Error::invalid("scene resolution must be at least 16x12"));
        }
        if !(self.motion_scale.is_finite() && self.motion_scale >= 0.0) {
            return Err(Error::invalid("motion_scale must be finite and >= 0"));
        }
        if !self.camera_orbit_deg.is_finite() {
            return Err(Error::invalid("camera_orbit_deg must be finite"));
        }
        if !(self.depth_noise.is_finite() && self.depth_noise >= 0.0) {
            return Err(Error::invalid("depth_noise must be finite and >= 0"));
        }
        Ok(())
    }

    /// Pinhole camera with a 525 px focal length at 640x480, scaled to the
    /// requested resolution.
    pub fn intrinsics(&self) -> CameraIntrinsics<f64> {
        let sx = self.width as f64 / 640.0;
        let sy = self.height as f64 / 480.0;
        CameraIntrinsics::new(
            525.0 * sx,
            525.0 * sy,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
        .expect("positive focal lengths")
    }

    fn time(&self, frame: usize) -> f64 {
        frame as f64 / (self.frames - 1) as f64
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn rotation(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle)
        .to_rotation_matrix()
        .into_inner()
}

fn texture(p: &Vector3<f64>) -> [f64; 3] {
    let (x, y, z) = (p.x, p.y, p.z - OBJECT_DEPTH);
    [
        0.5 + 0.3 * (40.0 * x).sin() * (35.0 * y + 20.0 * z).cos(),
        0.5 + 0.3 * (27.0 * y - 31.0 * x).sin(),
        0.5 + 0.25 * (23.0 * x + 29.0 * y).cos() * (33.0 * z).cos(),
    ]
}

/// One rendered frame and the canonical surface point seen at each pixel.
#[derive(Clone, Debug)]
pub struct RenderedFrame {
    pub frame: RgbdFrame<f64>,
    /// Triangle and barycentric coordinates of the visible surface point.
    pub surface: Image<Option<(u32, [f64; 3])>>,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub spec: SceneSpec,
    pub intrinsics: CameraIntrinsics<f64>,
    /// Undeformed surface (first frame camera space).
    pub surface: SurfaceMesh<f64>,
    center: Vector3<f64>,
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Result<Self> {
        spec.validate()?;
        let center = Vector3::new(0.0, 0.0, OBJECT_DEPTH);
        let surface = match spec.kind {
            SceneKind::BendingCylinder => cylinder(center, 0.5, 0.08, 120, 60),
            SceneKind::Arm => cylinder(center, 0.6, 0.06, 140, 48),
            SceneKind::Sheet => sheet(center, 0.5, 0.35, 100, 70),
        };
        Ok(Self {
            spec,
            intrinsics: spec.intrinsics(),
            surface,
            center,
        })
    }

    /// Position at frame `frame` of the undeformed point `p`.
    pub fn warp(&self, frame: usize, p: &Vector3<f64>) -> Vector3<f64> {
        let tau = self.spec.time(frame);
        let s = self.spec.motion_scale * tau;
        let c = self.center;
        let local = p - c;
        let moved = match self.spec.kind {
            SceneKind::BendingCylinder => {
                let b = smoothstep((local.x + 0.12) / 0.24);
                rotation(Vector3::z(), 60f64.to_radians() * s * b) * local
            }
            SceneKind::Arm => {
                let b = smoothstep((local.x + 0.02) / 0.04);
                rotation(Vector3::new(0.0, 0.6, 1.0), 75f64.to_radians() * s * b) * local
            }
            SceneKind::Sheet => {
                let k = 2.0 * std::f64::consts::PI / 0.3;
                let ramp = (local.x + 0.25) / 0.5;
                let phase = 2.0 * std::f64::consts::PI * tau;
                let dz = 0.05 * self.spec.motion_scale * ramp * ((k * local.x - phase).sin() - (k * local.x).sin());
                local + Vector3::new(0.0, 0.0, dz)
            }
        };
        let orbit = rotation(Vector3::y(), self.spec.camera_orbit_deg.to_radians() * tau);
        c + orbit * moved
    }

    pub fn warped_vertices(&self, frame: usize) -> Vec<Vector3<f64>> {
        self.surface.vertices.iter().map(|p| self.warp(frame, p)).collect()
    }

    /// Renders frame `frame` with depth noise, color, and object mask.
    pub fn render(&self, frame: usize) -> Result<RenderedFrame> {
        let verts = self.warped_vertices(frame);
        let raster = rasterize(&verts, &self.surface.triangles, &self.intrinsics);
        let (w, h) = (self.spec.width, self.spec.height);
        let mut depth = raster.depth.clone();
        if self.spec.depth_noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ (frame as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let n = Normal::new(0.0, self.spec.depth_noise).expect("valid sigma");
            for d in depth.data_mut() {
                if *d > 0.0 {
                    *d = (*d + n.sample(&mut rng)).max(1e-3);
                }
            }
        }
        let surface = raster.fragments.map(|f| f.map(|f| (f.triangle, f.bary)));
        let color = Image::from_fn(w, h, |u, v| match surface.get(u, v) {
            Some((t, b)) => texture(&self.interpolate(&self.surface.vertices, *t, b)),
            None => [0.0; 3],
        });
        let mask = surface.map(|s| s.is_some());
        let frame = RgbdFrame::new(color, depth, self.intrinsics, Some(mask))?;
        Ok(RenderedFrame { frame, surface })
    }

    fn interpolate(&self, verts: &[Vector3<f64>], tri: u32, bary: &[f64; 3]) -> Vector3<f64> {
        let t = self.surface.triangles[tri as usize];
        verts[t[0] as usize] * bary[0] + verts[t[1] as usize] * bary[1] + verts[t[2] as usize] * bary[2]
    }

    pub fn generate(&self) -> Result<SyntheticSequence> {
        let rendered = (0..self.spec.frames)
            .map(|f| self.render(f))
            .collect::<Result<Vec<_>>>()?;
        let warped = (0..self.spec.frames).map(|f| self.warped_vertices(f)).collect();
        Ok(SyntheticSequence {
            scene: self.clone(),
            rendered,
            warped,
        })
    }
}

fn cylinder(c: Vector3<f64>, length: f64, radius: f64, along: usize, around: usize) -> SurfaceMesh<f64> {
    let mut mesh = SurfaceMesh::default();
    for i in 0..=along {
        let x = -length / 2.0 + length * i as f64 / along as f64;
        for j in 0..around {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / around as f64;
            let n = Vector3::new(0.0, phi.cos(), phi.sin());
            mesh.vertices.push(c + Vector3::new(x, 0.0, 0.0) + n * radius);
            mesh.normals.push(n);
        }
    }
    let id = |i: usize, j: usize| (i * around + j % around) as u32;
    for i in 0..along {
        for j in 0..around {
            mesh.triangles.push([id(i, j), id(i + 1, j), id(i, j + 1)]);
            mesh.triangles.push([id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    // end caps, so the tube interior is never visible
    for (i, sign) in [(0, -1.0), (along, 1.0)] {
        let center = mesh.vertices.len() as u32;
        mesh.vertices.push(c + Vector3::new(sign * length / 2.0, 0.0, 0.0));
        mesh.normals.push(Vector3::new(sign, 0.0, 0.0));
        for j in 0..around {
            mesh.triangles.push([center, id(i, j), id(i, j + 1)]);
        }
    }
    mesh
}

fn sheet(c: Vector3<f64>, width: f64, height: f64, nx: usize, ny: usize) -> SurfaceMesh<f64> {
    let mut mesh = SurfaceMesh::default();
    for j in 0..=ny {
        for i in 0..=nx {
            let x = -width / 2.0 + width * i as f64 / nx as f64;
            let y = -height / 2.0 + height * j as f64 / ny as f64;
            mesh.vertices.push(c + Vector3::new(x, y, 0.0));
            mesh.normals.push(Vector3::new(0.0, 0.0, -1.0));
        }
    }
    let id = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
    for j in 0..ny {
        for i in 0..nx {
            mesh.triangles.push([id(i, j), id(i, j + 1), id(i + 1, j)]);
            mesh.triangles.push([id(i + 1, j), id(i, j + 1), id(i + 1, j + 1)]);
        }
    }
    mesh
}

/// A rendered scene with per-frame warped vertices for exact correspondences.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub scene: Scene,
    pub rendered: Vec<RenderedFrame>,
    warped: Vec<Vec<Vector3<f64>>>,
}

impl SyntheticSequence {
    pub fn len(&self) -> usize {
        self.rendered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rendered.is_empty()
    }

    pub fn frames(&self) -> Vec<RgbdFrame<f64>> {
        self.rendered.iter().map(|r| r.frame.clone()).collect()
    }

    pub fn frame(&self, index: usize) -> &RgbdFrame<f64> {
        &self.rendered[index].frame
    }

    /// Where the surface point seen at `(u, v)` in `source` lies in `target`
    /// (m, target camera space).
    pub fn correspondence(&self, source: usize, target: usize, u: usize, v: usize) -> Option<Vector3<f64>> {
        let (t, b) = (*self.rendered[source].surface.get(u, v))?;
        Some(self.scene.interpolate(&self.warped[target], t, &b))
    }

    /// Whether a target-space point is the visible surface in `target`.
    pub fn visible_in(&self, target: usize, p: &Vector3<f64>) -> bool {
        let f = self.frame(target);
        f.intrinsics
            .pixel_of(p)
            .and_then(|(u, v)| f.depth_at(u, v))
            .is_some_and(|d| (d - p.z).abs() <= VISIBILITY_TOLERANCE.max(4.0 * self.scene.spec.depth_noise))
    }

    pub fn flow(&self, source: usize, target: usize) -> GroundTruthFlow {
        let (w, h) = (self.scene.spec.width, self.scene.spec.height);
        let mut flow = GroundTruthFlow::default();
        for v in 0..h {
            for u in 0..w {
                if let Some(p) = self.correspondence(source, target, u, v) {
                    flow.points.insert((u as u32, v as u32), p);
                }
            }
        }
        flow
    }

    /// Oracle holding the flow from the first frame to every frame.
    pub fn oracle(&self, noise_px: f64, noise_depth: f64, simulate_occlusion: bool, seed: u64) -> SyntheticOracle {
        let mut o = SyntheticOracle::new(noise_px, noise_depth, simulate_occlusion, seed);
        for f in 0..self.len() {
            o.insert_flow(pair_name(0, f), self.flow(0, f));
        }
        o
    }

    /// Up to `count` random source pixels visible in both frames, with exact
    /// target pixels and points, and up to `count` occluded source pixels.
    pub fn annotate(&self, source: usize, target: usize, count: usize, seed: u64) -> PairAnnotation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((source as u64) << 32 | target as u64));
        let src = self.frame(source);
        let mut pixels: Vec<(usize, usize)> = src
            .mask
            .as_ref()
            .map(|m| m.enumerate().filter(|(_, _, x)| **x).map(|(u, v, _)| (u, v)).collect())
            .unwrap_or_default();
        // partial Fisher-Yates keeps the draw order reproducible
        let mut matches = Vec::new();
        let mut occlusions = Vec::new();
        let k = &self.scene.intrinsics;
        for i in 0..pixels.len() {
            if matches.len() >= count && occlusions.len() >= count {
                break;
            }
            let j = rng.random_range(i..pixels.len());
            pixels.swap(i, j);
            let (u, v) = pixels[i];
            let (Some(sp), Some(tp)) = (
                self.correspondence(source, source, u, v),
                self.correspondence(source, target, u, v),
            ) else {
                continue;
            };
            if self.visible_in(target, &tp) {
                if matches.len() < count {
                    let px = k.project(&tp).expect("visible point is in front");
                    matches.push(AnnotatedMatch {
                        source: [u as f64, v as f64],
                        target: [px.x, px.y],
                        source_point: Some(sp.into()),
                        target_point: Some(tp.into()),
                    });
                }
            } else if occlusions.len() < count {
                occlusions.push(Occlusion { source: [u as f64, v as f64] });
            }
        }
        PairAnnotation {
            source_frame: source,
            target_frame: target,
            matches,
            occlusions,
        }
    }

    /// Writes the sequence in the dataset layout under
    /// `<root>/<split>/<name>/`, plus `scene.json`, ground-truth flow from the
    /// first frame in `gt/`, and annotations from the first frame to every
    /// `annotate_every`-th frame.
    pub fn write(&self, root: &Path, split: Split, name: &str, annotate_every: usize, matches_per_pair: usize) -> Result<std::path::PathBuf> {
        let dir = root.join(split.dir_name()).join(name);
        for sub in ["depth", "color", "mask", "annotations", "gt"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        io::write_intrinsics(&dir.join("intrinsics.txt"), &self.scene.intrinsics)?;
        std::fs::write(dir.join("scene.json"), serde_json::to_string_pretty(&self.scene.spec)?)?;
        for (i, r) in self.rendered.iter().enumerate() {
            let file = format!("{i:06}.png");
            io::write_depth_png(&dir.join("depth").join(&file), &r.frame.depth)?;
            io::write_color_png(&dir.join("color").join(&file), &r.frame.color)?;
            if let Some(m) = &r.frame.mask {
                io::write_mask_png(&dir.join("mask").join(&file), m)?;
            }
            write_flow(&dir.join("gt").join(format!("flow_000000_{i:06}.bin")), &self.flow(0, i))?;
        }
        let step = annotate_every.max(1);
        for t in (step..self.len()).step_by(step) {
            let ann = self.annotate(0, t, matches_per_pair, self.scene.spec.seed);
            ann.save(&dir.join("annotations").join(ann.file_name()))?;
        }
        Ok(dir)
    }

    /// Exports oracle heatmaps for `queries` on every pair `(0, f)` into `dir`
    /// with a manifest, for use with the file provider.
    pub fn export_oracle_heatmaps(&self, dir: &Path, oracle: &SyntheticOracle, queries: &[(u32, u32)]) -> Result<Manifest> {
        let mut manifest = Manifest::default();
        for f in 1..self.len() {
            let pair = pair_name(0, f);
            let preds = oracle.predict(&pair, self.frame(0), self.frame(f), queries)?;
            export_heatmaps(dir, &pair, &preds, &mut manifest)?;
        }
        manifest.save(dir)?;
        Ok(manifest)
    }
}

/// Ground-truth flow file, in the dense-match record layout with every
/// record valid, sorted by source pixel.
pub fn write_flow(path: &Path, flow: &GroundTruthFlow) -> Result<()> {
    let mut keys: Vec<_> = flow.points.keys().copied().collect();
    keys.sort_by_key(|&(u, v)| (v, u));
    let mut bytes = Vec::with_capacity(4 + keys.len() * 21);
    bytes.extend((keys.len() as u32).to_le_bytes());
    for (u, v) in keys {
        let p = flow.points[&(u, v)];
        bytes.extend(u.to_le_bytes());
        bytes.extend(v.to_le_bytes());
        for x in p.iter() {
            bytes.extend((*x as f32).to_le_bytes());
        }
        bytes.push(1);
    }
    std::fs::write(path, bytes)?;
    Ok(())
}
