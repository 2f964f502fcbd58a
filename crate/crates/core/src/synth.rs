//! Deterministic synthetic data.
//!
//! [`gen_scene`] produces paired LiDAR-like and radar-like sequences of one
//! scene with moving boxes. LiDAR ground returns are center-heavy (radius
//! uniform, so density falls off as `1/r`); radar clutter is uniform over the
//! disc; both see the objects, LiDAR densely and with high intensity, radar
//! with a few returns carrying the true planar velocity.
//!
//! [`gen_feature_batch`] produces feature maps with a planted column shift
//! between the radar and image maps of each scene.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contrastive::{gaussian_tensor_from, SceneMaps};
use crate::pointcloud::{
    write_atomic, write_frame_dir, FrameFormat, LidarFrame, LidarPoint, PointCloudError,
    RadarFrame, RadarPoint, DEFAULT_FRAME_PERIOD,
};
use crate::rng::substream;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RADAR_COUNTS_FILE: &str = "radar_counts.txt";
pub const LIDAR_DIR: &str = "lidar";
pub const RADAR_DIR: &str = "radar";

const GROUND_Z: f64 = -1.8;
const MIN_RANGE: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error(transparent)]
    PointCloud(#[from] PointCloudError),
    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Scene parameters. Lengths in meters, speeds in m/s, densities in
/// points per m² of ground disc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_frames: usize,
    pub n_objects: usize,
    /// Box half-width.
    pub object_extent: f64,
    pub object_height: f64,
    pub ego_radius: f64,
    pub lidar_density: f64,
    pub radar_density: f64,
    /// Radar returns per object per frame (mean).
    pub radar_object_returns: f64,
    pub max_object_speed: f64,
    pub noise_sigma: f64,
    /// Seconds between frames.
    pub frame_period: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_frames: 10,
            n_objects: 12,
            object_extent: 1.5,
            object_height: 1.6,
            ego_radius: 50.0,
            lidar_density: 0.8,
            radar_density: 0.02,
            radar_object_returns: 4.0,
            max_object_speed: 12.0,
            noise_sigma: 0.05,
            frame_period: DEFAULT_FRAME_PERIOD,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let positive = [
            ("object_extent", self.object_extent),
            ("object_height", self.object_height),
            ("ego_radius", self.ego_radius),
            ("lidar_density", self.lidar_density),
            ("radar_density", self.radar_density),
            ("frame_period", self.frame_period),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SynthError::Spec(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("radar_object_returns", self.radar_object_returns),
            ("max_object_speed", self.max_object_speed),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SynthError::Spec(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.radar_density >= self.lidar_density {
            return Err(SynthError::Spec("radar_density must be below lidar_density".into()));
        }
        if self.ego_radius <= MIN_RANGE + self.object_extent {
            return Err(SynthError::Spec("ego_radius too small".into()));
        }
        Ok(())
    }
}

/// Ground-truth motion of one box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMotion {
    pub object_id: usize,
    /// Center at `t = 0`.
    pub center: [f64; 2],
    /// m/s
    pub velocity: [f64; 2],
    pub extent: f64,
}

impl ObjectMotion {
    pub fn center_at(&self, t: f64) -> [f64; 2] {
        [self.center[0] + self.velocity[0] * t, self.center[1] + self.velocity[1] * t]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneData {
    pub lidar: Vec<LidarFrame>,
    pub radar: Vec<RadarFrame>,
    pub motions: Vec<ObjectMotion>,
}

pub fn frame_id(i: usize) -> String {
    format!("frame_{i:05}")
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}

fn gen_objects(spec: &SceneSpec) -> Vec<ObjectMotion> {
    let mut rng = substream(spec.seed, 0);
    let lo = MIN_RANGE + 2.0 * spec.object_extent;
    let hi = spec.ego_radius - spec.object_extent;
    (0..spec.n_objects)
        .map(|object_id| {
            let r = rng.random_range(lo.min(hi)..=hi);
            let a = rng.random_range(0.0..2.0 * PI);
            let speed = rng.random_range(0.0..=spec.max_object_speed);
            let heading = rng.random_range(0.0..2.0 * PI);
            ObjectMotion {
                object_id,
                center: [r * a.cos(), r * a.sin()],
                velocity: [speed * heading.cos(), speed * heading.sin()],
                extent: spec.object_extent,
            }
        })
        .collect()
}

fn gen_lidar_frame(spec: &SceneSpec, objects: &[ObjectMotion], i: usize) -> LidarFrame {
    let mut rng = substream(spec.seed, 2 * i as u64 + 1);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let t = i as f64 * spec.frame_period;
    let area = PI * spec.ego_radius * spec.ego_radius;
    let mut points = Vec::new();

    let n_ground = poisson(spec.lidar_density * area, &mut rng);
    for _ in 0..n_ground {
        let r = rng.random_range(MIN_RANGE..spec.ego_radius);
        let a = rng.random_range(0.0..2.0 * PI);
        points.push(LidarPoint::new(
            r * a.cos() + noise.sample(&mut rng),
            r * a.sin() + noise.sample(&mut rng),
            GROUND_Z + noise.sample(&mut rng),
            rng.random_range(0.0..8.0),
        ));
    }
    // box sides; the lidar density is applied per m² of side area
    for obj in objects {
        let c = obj.center_at(t);
        let e = obj.extent;
        let side_area = 8.0 * e * spec.object_height;
        let n = poisson(4.0 * spec.lidar_density * side_area, &mut rng);
        for _ in 0..n {
            let s = rng.random_range(-e..e);
            let (dx, dy) = match rng.random_range(0..4) {
                0 => (e, s),
                1 => (-e, s),
                2 => (s, e),
                _ => (s, -e),
            };
            points.push(LidarPoint::new(
                c[0] + dx + noise.sample(&mut rng),
                c[1] + dy + noise.sample(&mut rng),
                GROUND_Z + rng.random_range(0.0..spec.object_height),
                rng.random_range(30.0..100.0),
            ));
        }
    }
    LidarFrame::new(frame_id(i), t, points)
}

fn gen_radar_frame(spec: &SceneSpec, objects: &[ObjectMotion], i: usize) -> RadarFrame {
    let mut rng = substream(spec.seed, 2 * i as u64 + 2);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let t = i as f64 * spec.frame_period;
    let area = PI * spec.ego_radius * spec.ego_radius;
    let mut points = Vec::new();

    let n_clutter = poisson(spec.radar_density * area, &mut rng);
    for _ in 0..n_clutter {
        let r = spec.ego_radius * rng.random::<f64>().sqrt();
        let a = rng.random_range(0.0..2.0 * PI);
        points.push(RadarPoint {
            x: r * a.cos(),
            y: r * a.sin(),
            z: 0.0,
            vx: 0.0,
            vy: 0.0,
            intensity: rng.random_range(0.0..8.0),
        });
    }
    for obj in objects {
        let c = obj.center_at(t);
        let n = poisson(spec.radar_object_returns, &mut rng);
        for _ in 0..n {
            points.push(RadarPoint {
                x: c[0] + rng.random_range(-obj.extent..obj.extent) + noise.sample(&mut rng),
                y: c[1] + rng.random_range(-obj.extent..obj.extent) + noise.sample(&mut rng),
                z: 0.0,
                vx: obj.velocity[0],
                vy: obj.velocity[1],
                intensity: rng.random_range(30.0..100.0),
            });
        }
    }
    RadarFrame::new(frame_id(i), t, points)
}

/// Generates a scene; frames are built in parallel from per-frame streams.
pub fn gen_scene(spec: &SceneSpec) -> Result<SceneData, SynthError> {
    spec.validate()?;
    let motions = gen_objects(spec);
    let (lidar, radar) = (0..spec.n_frames)
        .into_par_iter()
        .map(|i| (gen_lidar_frame(spec, &motions, i), gen_radar_frame(spec, &motions, i)))
        .unzip();
    Ok(SceneData {
        lidar,
        radar,
        motions,
    })
}

/// Shape and noise of a planted-correspondence feature batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureBatchSpec {
    pub seed: u64,
    pub scenes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub noise_sigma: f64,
    /// Planted offsets are drawn uniformly from `-max_offset..=max_offset`.
    pub max_offset: usize,
}

impl Default for FeatureBatchSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: 4,
            channels: 4,
            height: 4,
            width: 12,
            noise_sigma: 0.05,
            max_offset: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub scenes: Vec<SceneMaps>,
    /// Per scene: radar column `j` corresponds to image column `j + offset`.
    pub offsets: Vec<i64>,
}

fn crop(latent: &Tensor, start: usize, width: usize) -> Tensor {
    let s = latent.shape();
    let (c, h, total) = (s[0], s[1], s[2]);
    let mut data = Vec::with_capacity(c * h * width);
    for row in 0..c * h {
        data.extend_from_slice(&latent.data()[row * total + start..row * total + start + width]);
    }
    Tensor::new(vec![c, h, width], data).expect("crop shape")
}

fn add_noise<R: Rng + ?Sized>(mut t: Tensor, sigma: f64, rng: &mut R) -> Tensor {
    if sigma > 0.0 {
        let n = gaussian_tensor_from(t.shape(), sigma, rng);
        t.data_mut().iter_mut().zip(n.data()).for_each(|(x, e)| *x += e);
    }
    t
}

/// Per scene, a latent `C×H×(W + 2m)` map is drawn; image maps are the
/// centered crop, radar maps the crop shifted by the scene's offset, each
/// with independent noise.
pub fn gen_feature_batch(spec: &FeatureBatchSpec) -> Result<FeatureBatch, SynthError> {
    if spec.scenes == 0 || spec.channels == 0 || spec.height == 0 || spec.width == 0 {
        return Err(SynthError::Spec("feature batch dims must be >= 1".into()));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(SynthError::Spec(format!("noise_sigma {}", spec.noise_sigma)));
    }
    let m = spec.max_offset;
    let (scenes, offsets) = (0..spec.scenes as u64)
        .map(|b| {
            let mut rng = substream(spec.seed, b);
            let latent = gaussian_tensor_from(&[spec.channels, spec.height, spec.width + 2 * m], 1.0, &mut rng);
            let offset = rng.random_range(-(m as i64)..=m as i64);
            let img = crop(&latent, m, spec.width);
            let rad = crop(&latent, (m as i64 + offset) as usize, spec.width);
            let sigma = spec.noise_sigma;
            let scene = SceneMaps {
                img_bev: add_noise(img.clone(), sigma, &mut rng),
                img_fv: add_noise(img, sigma, &mut rng),
                rad_bev: add_noise(rad.clone(), sigma, &mut rng),
                rad_fv: add_noise(rad, sigma, &mut rng),
            };
            (scene, offset)
        })
        .unzip();
    Ok(FeatureBatch { scenes, offsets })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub frame_id: String,
    pub timestamp: f64,
    pub lidar_points: usize,
    pub radar_points: usize,
}

/// Contents of `manifest.json` in a written corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub scene: SceneSpec,
    pub feature_batch: FeatureBatchSpec,
    pub lidar_dir: String,
    pub radar_dir: String,
    pub radar_counts: String,
    pub frames: Vec<ManifestFrame>,
    pub motions: Vec<ObjectMotion>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, SynthError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| SynthError::Spec(format!("{}: {e}", path.display())))
    }
}

/// Writes `lidar/`, `radar/` (frame directories), `radar_counts.txt` (one
/// per-frame radar point count per line) and `manifest.json`.
pub fn write_corpus(
    dir: &Path,
    spec: &SceneSpec,
    batch: &FeatureBatchSpec,
    scene: &SceneData,
    format: FrameFormat,
) -> Result<Manifest, SynthError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| SynthError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    write_frame_dir(&dir.join(LIDAR_DIR), &scene.lidar, format)?;
    write_frame_dir(&dir.join(RADAR_DIR), &scene.radar, format)?;
    let counts: String = scene.radar.iter().map(|f| format!("{}\n", f.points.len())).collect();
    let counts_path = dir.join(RADAR_COUNTS_FILE);
    write_atomic(&counts_path, counts.as_bytes()).map_err(io(&counts_path))?;

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        scene: spec.clone(),
        feature_batch: batch.clone(),
        lidar_dir: LIDAR_DIR.into(),
        radar_dir: RADAR_DIR.into(),
        radar_counts: RADAR_COUNTS_FILE.into(),
        frames: scene
            .lidar
            .iter()
            .zip(&scene.radar)
            .map(|(l, r)| ManifestFrame {
                frame_id: l.frame_id.clone(),
                timestamp: l.timestamp,
                lidar_points: l.points.len(),
                radar_points: r.points.len(),
            })
            .collect(),
        motions: scene.motions.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&path, json.as_bytes()).map_err(io(&path))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::sliding_window_match;
    use crate::pointcloud::read_frame_dir;

    fn small() -> SceneSpec {
        SceneSpec { n_frames: 4, ego_radius: 30.0, n_objects: 5, ..Default::default() }
    }

    #[test]
    fn deterministic() {
        assert_eq!(gen_scene(&small()).unwrap(), gen_scene(&small()).unwrap());
        let other = gen_scene(&SceneSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(other, gen_scene(&small()).unwrap());
    }

    #[test]
    fn no_objects_means_ground_only() {
        let s = gen_scene(&SceneSpec { n_objects: 0, ..small() }).unwrap();
        assert!(s.motions.is_empty());
        for f in &s.lidar {
            assert!(f.points.iter().all(|p| p.intensity < 8.0 && (p.z - GROUND_Z).abs() < 1.0));
        }
        assert!(s.radar.iter().flat_map(|f| &f.points).all(|p| p.vx == 0.0 && p.vy == 0.0));
    }

    #[test]
    fn radar_is_sparse_planar_and_uniform() {
        let spec = SceneSpec { n_frames: 50, ..Default::default() };
        let s = gen_scene(&spec).unwrap();
        let lidar: usize = s.lidar.iter().map(|f| f.points.len()).sum();
        let radar: usize = s.radar.iter().map(|f| f.points.len()).sum();
        assert!((radar as f64) / (lidar as f64) < 0.1, "{radar} / {lidar}");
        for p in s.radar.iter().flat_map(|f| &f.points) {
            assert_eq!(p.z, 0.0);
            assert!(p.vx.is_finite() && p.vy.is_finite());
        }
        // share of points inside half the radius: ~1/4 for uniform area, ~1/2 for lidar
        let inner = |pts: Vec<[f64; 3]>| {
            let n = pts.len() as f64;
            pts.iter().filter(|p| p[0].hypot(p[1]) < spec.ego_radius / 2.0).count() as f64 / n
        };
        let ri = inner(s.radar.iter().flat_map(|f| f.positions()).collect());
        let li = inner(s.lidar.iter().flat_map(|f| f.positions()).collect());
        assert!(ri < 0.35 && li > 0.4, "radar {ri} lidar {li}");
    }

    #[test]
    fn objects_move_with_their_velocity() {
        let s = gen_scene(&SceneSpec { n_frames: 2, n_objects: 1, ..small() }).unwrap();
        let o = &s.motions[0];
        let c1 = o.center_at(DEFAULT_FRAME_PERIOD);
        assert!((c1[0] - o.center[0] - o.velocity[0] * 0.05).abs() < 1e-12);
        let returns: Vec<_> = s.radar[1].points.iter().filter(|p| p.vx != 0.0 || p.vy != 0.0).collect();
        assert!(returns.iter().all(|p| [p.vx, p.vy] == o.velocity));
    }

    #[test]
    fn spec_validation() {
        assert!(SceneSpec { radar_density: 1.0, lidar_density: 0.5, ..small() }.validate().is_err());
        assert!(SceneSpec { ego_radius: 0.0, ..small() }.validate().is_err());
        small().validate().unwrap();
    }

    #[test]
    fn clean_unshifted_maps_coincide() {
        let b = gen_feature_batch(&FeatureBatchSpec { noise_sigma: 0.0, max_offset: 0, ..Default::default() }).unwrap();
        for s in &b.scenes {
            assert_eq!(s.img_bev, s.img_fv);
            assert_eq!(s.img_bev, s.rad_bev);
            assert_eq!(s.img_bev, s.rad_fv);
        }
        assert!(b.offsets.iter().all(|&o| o == 0));
    }

    #[test]
    fn clean_shift_is_recovered() {
        let spec = FeatureBatchSpec { noise_sigma: 0.0, scenes: 40, width: 16, ..Default::default() };
        let b = gen_feature_batch(&spec).unwrap();
        let (mut hit, mut total) = (0, 0);
        for (s, &off) in b.scenes.iter().zip(&b.offsets) {
            if off != 1 {
                continue;
            }
            let (c, h, w) = s.dims();
            for j in 0..w {
                let anchor = Tensor::new(
                    vec![c, h],
                    (0..c * h).map(|k| s.rad_bev.data()[k * w + j]).collect(),
                )
                .unwrap();
                let m = sliding_window_match(&anchor, &s.img_bev, j, 5, 3).unwrap();
                hit += usize::from(m.offset == 1);
                total += 1;
            }
        }
        assert!(total > 0);
        assert!(hit as f64 / total as f64 >= 0.9, "{hit}/{total}");
    }

    #[test]
    fn scenes_use_independent_latents() {
        let spec = FeatureBatchSpec { scenes: 60, noise_sigma: 0.0, max_offset: 0, channels: 8, height: 8, width: 8, ..Default::default() };
        let b = gen_feature_batch(&spec).unwrap();
        let cos = |a: &Tensor, b: &Tensor| {
            let d: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
            let n = |t: &Tensor| t.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            d / (n(a) * n(b))
        };
        let sims: Vec<f64> = b.scenes.windows(2).map(|p| cos(&p[0].img_bev, &p[1].img_bev)).collect();
        let mean = sims.iter().sum::<f64>() / sims.len() as f64;
        // each cosine has sd ~ 1/sqrt(512)
        assert!(mean.abs() < 4.0 / (512.0 * sims.len() as f64).sqrt(), "{mean}");
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small();
        let scene = gen_scene(&spec).unwrap();
        let m = write_corpus(dir.path(), &spec, &FeatureBatchSpec::default(), &scene, FrameFormat::Csv).unwrap();
        assert_eq!(m.frames.len(), 4);
        assert_eq!(Manifest::load(dir.path()).unwrap(), m);
        let radar: Vec<RadarFrame> = read_frame_dir(&dir.path().join(RADAR_DIR)).unwrap();
        assert_eq!(radar, scene.radar);
        let counts = std::fs::read_to_string(dir.path().join(RADAR_COUNTS_FILE)).unwrap();
        assert_eq!(counts.lines().count(), 4);

        let empty = tempfile::tempdir().unwrap();
        let spec0 = SceneSpec { n_frames: 0, ..small() };
        let m0 = write_corpus(empty.path(), &spec0, &FeatureBatchSpec::default(), &gen_scene(&spec0).unwrap(), FrameFormat::Csv)
            .unwrap();
        assert!(m0.frames.is_empty());
    }
}
