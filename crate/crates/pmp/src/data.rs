//! Synthetic shapes, view occlusion, normalization, and cloud file I/O.
//!
//! Training pairs are made from analytic surfaces: sample a complete cloud,
//! then emulate a depth scan by keeping only the surface region facing away
//! from a viewpoint. Everything is seeded, so a dataset is a pure function
//! of its manifest.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::seed;

/// Analytic surface families, each centered at the origin (line excepted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Line { from: [f64; 3], to: [f64; 3] },
    Circle { radius: f64 },
    Sphere { radius: f64 },
    Cuboid { extents: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
    Plane { width: f64, depth: f64 },
}

impl ShapeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Line { .. } => "line",
            ShapeKind::Circle { .. } => "circle",
            ShapeKind::Sphere { .. } => "sphere",
            ShapeKind::Cuboid { .. } => "cuboid",
            ShapeKind::Cylinder { .. } => "cylinder",
            ShapeKind::Plane { .. } => "plane",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ShapeKind::Line { from, to } => from != to,
            ShapeKind::Circle { radius } | ShapeKind::Sphere { radius } => radius > 0.0,
            ShapeKind::Cuboid { extents } => extents.iter().all(|&e| e > 0.0),
            ShapeKind::Cylinder { radius, height } => radius > 0.0 && height > 0.0,
            ShapeKind::Plane { width, depth } => width > 0.0 && depth > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::argument(format!("degenerate shape parameters: {self:?}")))
        }
    }

    /// One uniform sample of the surface. Cuboid and cylinder weight their
    /// faces by area so density stays uniform across the whole surface.
    fn sample(&self, rng: &mut ChaCha20Rng) -> [f64; 3] {
        use std::f64::consts::{PI, TAU};
        match *self {
            ShapeKind::Line { from, to } => {
                let t: f64 = rng.gen();
                [
                    from[0] + t * (to[0] - from[0]),
                    from[1] + t * (to[1] - from[1]),
                    from[2] + t * (to[2] - from[2]),
                ]
            }
            ShapeKind::Circle { radius } => {
                let theta = rng.gen::<f64>() * TAU;
                [radius * theta.cos(), radius * theta.sin(), 0.0]
            }
            ShapeKind::Sphere { radius } => {
                // Uniform via the cylinder-projection trick: z uniform,
                // angle uniform.
                let z = 2.0 * rng.gen::<f64>() - 1.0;
                let theta = rng.gen::<f64>() * TAU;
                let rho = (1.0 - z * z).max(0.0).sqrt();
                [radius * rho * theta.cos(), radius * rho * theta.sin(), radius * z]
            }
            ShapeKind::Cuboid { extents } => {
                let h = [extents[0] / 2.0, extents[1] / 2.0, extents[2] / 2.0];
                let areas = [
                    extents[1] * extents[2],
                    extents[0] * extents[2],
                    extents[0] * extents[1],
                ];
                let total = 2.0 * (areas[0] + areas[1] + areas[2]);
                let mut pick = rng.gen::<f64>() * total;
                let mut axis = 2usize;
                let mut side = 1.0;
                'faces: for a in 0..3 {
                    for s in [-1.0, 1.0] {
                        if pick < areas[a] {
                            axis = a;
                            side = s;
                            break 'faces;
                        }
                        pick -= areas[a];
                    }
                }
                let mut p = [0.0; 3];
                p[axis] = side * h[axis];
                let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                p[u] = (2.0 * rng.gen::<f64>() - 1.0) * h[u];
                p[v] = (2.0 * rng.gen::<f64>() - 1.0) * h[v];
                p
            }
            ShapeKind::Cylinder { radius, height } => {
                let side_area = TAU * radius * height;
                let cap_area = PI * radius * radius;
                let pick = rng.gen::<f64>() * (side_area + 2.0 * cap_area);
                let theta = rng.gen::<f64>() * TAU;
                if pick < side_area {
                    let z = (rng.gen::<f64>() - 0.5) * height;
                    [radius * theta.cos(), radius * theta.sin(), z]
                } else {
                    let r = radius * rng.gen::<f64>().sqrt();
                    let z = if pick < side_area + cap_area { height / 2.0 } else { -height / 2.0 };
                    [r * theta.cos(), r * theta.sin(), z]
                }
            }
            ShapeKind::Plane { width, depth } => [
                (rng.gen::<f64>() - 0.5) * width,
                (rng.gen::<f64>() - 0.5) * depth,
                0.0,
            ],
        }
    }

    /// Distance from `p` to the analytic surface; 0 on the surface.
    pub fn surface_distance(&self, p: [f64; 3]) -> f64 {
        match *self {
            ShapeKind::Line { from, to } => {
                let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
                let w = [p[0] - from[0], p[1] - from[1], p[2] - from[2]];
                let len_sq = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                let t = ((w[0] * d[0] + w[1] * d[1] + w[2] * d[2]) / len_sq).clamp(0.0, 1.0);
                let c = [w[0] - t * d[0], w[1] - t * d[1], w[2] - t * d[2]];
                (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
            }
            ShapeKind::Circle { radius } => {
                let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - radius;
                (ring * ring + p[2] * p[2]).sqrt()
            }
            ShapeKind::Sphere { radius } => {
                ((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - radius).abs()
            }
            ShapeKind::Cuboid { extents } => {
                let q = [
                    p[0].abs() - extents[0] / 2.0,
                    p[1].abs() - extents[1] / 2.0,
                    p[2].abs() - extents[2] / 2.0,
                ];
                let outside = (q[0].max(0.0).powi(2) + q[1].max(0.0).powi(2)
                    + q[2].max(0.0).powi(2))
                .sqrt();
                let inside = q[0].max(q[1]).max(q[2]).min(0.0);
                (outside + inside).abs()
            }
            ShapeKind::Cylinder { radius, height } => {
                let dr = (p[0] * p[0] + p[1] * p[1]).sqrt() - radius;
                let dz = p[2].abs() - height / 2.0;
                let outside = (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
                let inside = dr.max(dz).min(0.0);
                (outside + inside).abs()
            }
            ShapeKind::Plane { width, depth } => {
                let qx = (p[0].abs() - width / 2.0).max(0.0);
                let qy = (p[1].abs() - depth / 2.0).max(0.0);
                (qx * qx + qy * qy + p[2] * p[2]).sqrt()
            }
        }
    }
}

/// A seeded request for `n_points` uniform samples of one surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub n_points: usize,
    pub seed: u64,
}

/// Uniform surface sampling, deterministic per (kind, n_points, seed).
pub fn generate(spec: &ShapeSpec) -> Result<PointCloud> {
    spec.kind.validate()?;
    if spec.n_points == 0 {
        return Err(Error::argument("generate requires n_points >= 1"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let points = (0..spec.n_points).map(|_| spec.kind.sample(&mut rng)).collect();
    PointCloud::new(points)
}

/// Directional occlusion: which part of the surface a scan would miss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionSpec {
    /// Direction the scanner looks from; the near side gets dropped.
    pub viewpoint: [f64; 3],
    /// Fraction of the surface (by projection rank) that survives.
    pub keep_fraction: f64,
    /// Point count of both output clouds.
    pub resample_to: usize,
}

/// Reference sample size used to estimate the projection cutoff.
const OCCLUSION_REFERENCE_SAMPLES: usize = 4096;

/// Emulates a partial scan of the surface described by `spec`.
///
/// Points are ranked by projection onto the viewpoint direction; the
/// `keep_fraction` with the smallest projection (farthest from the
/// viewpoint) survives. The kept region is resampled to exactly
/// `resample_to` points by rejection, and an independent full-surface
/// sample of the same size is returned as the complete cloud.
pub fn occlude(spec: &ShapeSpec, occ: &OcclusionSpec) -> Result<(PointCloud, PointCloud)> {
    spec.kind.validate()?;
    if !(occ.keep_fraction > 0.0 && occ.keep_fraction <= 1.0) {
        return Err(Error::argument(format!(
            "keep_fraction must be in (0, 1], got {}",
            occ.keep_fraction
        )));
    }
    if occ.resample_to == 0 {
        return Err(Error::argument("occlude requires resample_to >= 1"));
    }
    let norm = (occ.viewpoint.iter().map(|v| v * v).sum::<f64>()).sqrt();
    if norm < 1e-12 {
        return Err(Error::argument("viewpoint direction must be nonzero"));
    }
    let dir = occ.viewpoint.map(|v| v / norm);
    let project = |p: [f64; 3]| p[0] * dir[0] + p[1] * dir[1] + p[2] * dir[2];

    let mut partial = Vec::with_capacity(occ.resample_to);
    let mut rng = ChaCha20Rng::seed_from_u64(seed::mix(spec.seed, &[1]));
    if occ.keep_fraction >= 1.0 {
        // Nothing is occluded; the partial cloud is a plain resample.
        partial.extend((0..occ.resample_to).map(|_| spec.kind.sample(&mut rng)));
    } else {
        let mut ref_rng = ChaCha20Rng::seed_from_u64(seed::mix(spec.seed, &[0]));
        let mut projections: Vec<f64> = (0..OCCLUSION_REFERENCE_SAMPLES)
            .map(|_| project(spec.kind.sample(&mut ref_rng)))
            .collect();
        projections.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cut = ((occ.keep_fraction * projections.len() as f64).ceil() as usize)
            .clamp(1, projections.len());
        let threshold = projections[cut - 1];

        let budget = occ.resample_to.saturating_mul(10_000);
        let mut attempts = 0usize;
        while partial.len() < occ.resample_to {
            if attempts >= budget {
                return Err(Error::Degenerate(format!(
                    "occlusion rejection sampling stalled after {attempts} draws \
                     (kept {}/{} points)",
                    partial.len(),
                    occ.resample_to
                )));
            }
            attempts += 1;
            let p = spec.kind.sample(&mut rng);
            if project(p) <= threshold {
                partial.push(p);
            }
        }
    }

    let mut complete_rng = ChaCha20Rng::seed_from_u64(seed::mix(spec.seed, &[2]));
    let complete = (0..occ.resample_to)
        .map(|_| spec.kind.sample(&mut complete_rng))
        .collect();
    Ok((PointCloud::new(partial)?, PointCloud::new(complete)?))
}

/// Rigid shift plus uniform scale mapping raw coordinates into the
/// normalized frame. `apply` normalizes, `invert` restores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub translation: [f64; 3],
    pub scale: f64,
}

impl Transform {
    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        let points = cloud
            .points
            .iter()
            .map(|p| {
                [
                    (p[0] - self.translation[0]) * self.scale,
                    (p[1] - self.translation[1]) * self.scale,
                    (p[2] - self.translation[2]) * self.scale,
                ]
            })
            .collect();
        PointCloud { points }
    }

    pub fn invert(&self, cloud: &PointCloud) -> PointCloud {
        let points = cloud
            .points
            .iter()
            .map(|p| {
                [
                    p[0] / self.scale + self.translation[0],
                    p[1] / self.scale + self.translation[1],
                    p[2] / self.scale + self.translation[2],
                ]
            })
            .collect();
        PointCloud { points }
    }
}

/// Keeps every displacement the first step can express: tanh saturates at
/// 1, so shapes live inside radius 0.9.
pub const NORMALIZE_SCALE: f64 = 0.9;

/// Centers the cloud on its centroid and scales the farthest point to
/// `scale`. Returns the normalized cloud and the transform that produced
/// it, so outputs can be mapped back to the original frame.
pub fn normalize(cloud: &PointCloud, scale: f64) -> Result<(PointCloud, Transform)> {
    if cloud.is_empty() {
        return Err(Error::argument("normalize requires a non-empty cloud"));
    }
    if scale <= 0.0 {
        return Err(Error::argument(format!("normalize scale must be positive, got {scale}")));
    }
    let c = cloud.centroid();
    let max_radius = cloud
        .points
        .iter()
        .map(|p| {
            ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt()
        })
        .fold(0.0f64, f64::max);
    if max_radius < 1e-12 {
        return Err(Error::Degenerate(
            "normalize: all points coincide, no radius to scale".into(),
        ));
    }
    let t = Transform { translation: c, scale: scale / max_radius };
    Ok((t.apply(cloud), t))
}

/// On-disk encodings: plain `x y z` lines or ASCII PLY.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    XyzText,
    PlyAscii,
}

impl FileFormat {
    /// Picks the format from the file extension.
    pub fn from_path(path: &Path) -> Result<FileFormat> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("xyz") => Ok(FileFormat::XyzText),
            Some("ply") => Ok(FileFormat::PlyAscii),
            other => Err(Error::Format(format!(
                "unsupported cloud extension {:?} for {} (expected .xyz or .ply)",
                other.unwrap_or(""),
                path.display()
            ))),
        }
    }
}

struct Coord(f64);

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.9}", self.0)
    }
}

/// Writes `cloud` in the format implied by the path's extension.
pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let format = FileFormat::from_path(path)?;
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    if format == FileFormat::PlyAscii {
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", cloud.len())?;
        writeln!(w, "property float x")?;
        writeln!(w, "property float y")?;
        writeln!(w, "property float z")?;
        writeln!(w, "end_header")?;
    }
    for p in &cloud.points {
        writeln!(w, "{} {} {}", Coord(p[0]), Coord(p[1]), Coord(p[2]))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_point(line: &str, line_no: usize) -> Result<[f64; 3]> {
    let mut fields = line.split_whitespace();
    let mut p = [0.0; 3];
    for (i, slot) in p.iter_mut().enumerate() {
        let field = fields.next().ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("expected 3 coordinates, found {i}"),
        })?;
        *slot = field.parse::<f64>().map_err(|e| Error::Parse {
            line: line_no,
            msg: format!("bad coordinate {field:?}: {e}"),
        })?;
    }
    Ok(p)
}

/// Reads a cloud back; format from the extension, point order preserved.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let format = FileFormat::from_path(path)?;
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let mut points = Vec::new();
    match format {
        FileFormat::XyzText => {
            for (idx, line) in lines {
                if line.trim().is_empty() {
                    continue;
                }
                points.push(parse_point(line, idx + 1)?);
            }
        }
        FileFormat::PlyAscii => {
            let mut vertex_count: Option<usize> = None;
            let mut header_done = false;
            for (idx, line) in lines.by_ref() {
                let line_no = idx + 1;
                let trimmed = line.trim();
                if line_no == 1 && trimmed != "ply" {
                    return Err(Error::Parse {
                        line: 1,
                        msg: format!("expected \"ply\" magic, found {trimmed:?}"),
                    });
                }
                if let Some(rest) = trimmed.strip_prefix("element vertex ") {
                    vertex_count = Some(rest.trim().parse().map_err(|e| Error::Parse {
                        line: line_no,
                        msg: format!("bad vertex count {rest:?}: {e}"),
                    })?);
                }
                if trimmed == "end_header" {
                    header_done = true;
                    break;
                }
            }
            if !header_done {
                return Err(Error::Parse { line: 0, msg: "missing end_header".into() });
            }
            let expected = vertex_count.ok_or(Error::Parse {
                line: 0,
                msg: "header lacks an element vertex line".into(),
            })?;
            for (idx, line) in lines {
                if line.trim().is_empty() {
                    continue;
                }
                if points.len() == expected {
                    break;
                }
                points.push(parse_point(line, idx + 1)?);
            }
            if points.len() != expected {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("header promised {expected} vertices, file has {}", points.len()),
                });
            }
        }
    }
    PointCloud::new(points)
}

/// Which partition of the dataset an item belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One dataset item: the shape it came from and where its clouds live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub shape: ShapeKind,
    pub seed: u64,
    pub split: Split,
    pub partial_path: String,
    pub complete_path: String,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let json = serde_json::to_string_pretty(entries)
        .map_err(|e| Error::Format(format!("manifest serialization failed: {e}")))?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("manifest parse failed: {e}")))
}

/// The six canonical shape families at desk scale, unit-ish sized so the
/// normalized frame never clips them.
pub fn canonical_kinds() -> Vec<ShapeKind> {
    vec![
        ShapeKind::Line { from: [-0.8, 0.0, 0.0], to: [0.8, 0.0, 0.0] },
        ShapeKind::Circle { radius: 1.0 },
        ShapeKind::Sphere { radius: 1.0 },
        ShapeKind::Cuboid { extents: [1.2, 0.8, 0.6] },
        ShapeKind::Cylinder { radius: 0.6, height: 1.4 },
        ShapeKind::Plane { width: 1.6, depth: 1.0 },
    ]
}

/// Dataset synthesis settings; `canonical` gives the 6-kind, 40-seed,
/// 30/5/5 split used everywhere in testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kinds: Vec<ShapeKind>,
    pub seeds_per_kind: usize,
    pub n_points: usize,
    pub keep_fraction: f64,
    pub viewpoint: [f64; 3],
    pub base_seed: u64,
}

impl SynthConfig {
    pub fn canonical(base_seed: u64) -> SynthConfig {
        SynthConfig {
            kinds: canonical_kinds(),
            seeds_per_kind: 40,
            n_points: 256,
            keep_fraction: 0.5,
            viewpoint: [1.0, 0.0, 0.0],
            base_seed,
        }
    }
}

fn split_of(index: usize, total: usize) -> Split {
    let train = total * 3 / 4;
    let val = (total - train).div_ceil(2);
    if index < train {
        Split::Train
    } else if index < train + val {
        Split::Val
    } else {
        Split::Test
    }
}

/// Generates every (partial, complete) pair into `out_dir` as `.xyz` files,
/// both clouds normalized by the complete cloud's transform, and returns
/// the manifest. Deterministic per config.
pub fn synth_dataset(out_dir: &Path, cfg: &SynthConfig) -> Result<Vec<ManifestEntry>> {
    if cfg.seeds_per_kind == 0 || cfg.kinds.is_empty() {
        return Err(Error::argument("synth_dataset needs at least one kind and one seed"));
    }
    fs::create_dir_all(out_dir)?;
    let mut entries = Vec::new();
    for (ki, &kind) in cfg.kinds.iter().enumerate() {
        for i in 0..cfg.seeds_per_kind {
            let item_seed = seed::mix(cfg.base_seed, &[ki as u64, i as u64]);
            let spec = ShapeSpec { kind, n_points: cfg.n_points, seed: item_seed };
            let occ = OcclusionSpec {
                viewpoint: cfg.viewpoint,
                keep_fraction: cfg.keep_fraction,
                resample_to: cfg.n_points,
            };
            let (partial, complete) = occlude(&spec, &occ)?;
            // One shared frame per item, taken from the complete cloud, so
            // the displacement targets stay inside the first-step bound.
            let (complete_n, transform) = normalize(&complete, NORMALIZE_SCALE)?;
            let partial_n = transform.apply(&partial);
            let stem = format!("{}_{i:03}", kind.name());
            let partial_path = format!("{stem}_partial.xyz");
            let complete_path = format!("{stem}_complete.xyz");
            write_cloud(&out_dir.join(&partial_path), &partial_n)?;
            write_cloud(&out_dir.join(&complete_path), &complete_n)?;
            entries.push(ManifestEntry {
                shape: kind,
                seed: item_seed,
                split: split_of(i, cfg.seeds_per_kind),
                partial_path,
                complete_path,
            });
        }
    }
    write_manifest(&out_dir.join("manifest.json"), &entries)?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{chamfer, ChamferMode};

    #[test]
    fn circle_samples_sit_on_the_ring() {
        let spec = ShapeSpec { kind: ShapeKind::Circle { radius: 1.0 }, n_points: 4, seed: 11 };
        let cloud = generate(&spec).unwrap();
        assert_eq!(cloud.len(), 4);
        for p in &cloud.points {
            assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() < 1e-9);
            assert_eq!(p[2], 0.0);
        }
    }

    #[test]
    fn line_samples_stay_on_the_segment() {
        let kind = ShapeKind::Line { from: [0.0; 3], to: [0.5, 0.0, 0.0] };
        let cloud = generate(&ShapeSpec { kind, n_points: 64, seed: 3 }).unwrap();
        for p in &cloud.points {
            assert!(p[0] >= 0.0 && p[0] <= 0.5);
            assert_eq!(p[1], 0.0);
            assert_eq!(p[2], 0.0);
            assert!(kind.surface_distance(*p) < 1e-12);
        }
    }

    #[test]
    fn sphere_sample_mean_is_near_origin() {
        let spec =
            ShapeSpec { kind: ShapeKind::Sphere { radius: 1.0 }, n_points: 10_000, seed: 5 };
        let c = generate(&spec).unwrap().centroid();
        assert!(c.iter().all(|v| v.abs() < 0.05), "centroid {c:?}");
    }

    #[test]
    fn every_kind_passes_surface_membership() {
        for kind in canonical_kinds() {
            let cloud = generate(&ShapeSpec { kind, n_points: 512, seed: 9 }).unwrap();
            for p in &cloud.points {
                assert!(
                    kind.surface_distance(*p) < 1e-9,
                    "{} sample {p:?} off-surface",
                    kind.name()
                );
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ShapeSpec {
            kind: ShapeKind::Cuboid { extents: [1.2, 0.8, 0.6] },
            n_points: 100,
            seed: 42,
        };
        assert_eq!(generate(&spec).unwrap().points, generate(&spec).unwrap().points);
    }

    #[test]
    fn bad_shape_parameters_are_rejected() {
        let spec =
            ShapeSpec { kind: ShapeKind::Sphere { radius: -1.0 }, n_points: 16, seed: 0 };
        assert!(matches!(generate(&spec), Err(crate::Error::Argument(_))));
    }

    fn circle_occlusion(keep: f64) -> (PointCloud, PointCloud) {
        let spec = ShapeSpec { kind: ShapeKind::Circle { radius: 1.0 }, n_points: 256, seed: 7 };
        let occ =
            OcclusionSpec { viewpoint: [1.0, 0.0, 0.0], keep_fraction: keep, resample_to: 256 };
        occlude(&spec, &occ).unwrap()
    }

    #[test]
    fn keep_everything_is_a_plain_resample() {
        let (partial, complete) = circle_occlusion(1.0);
        assert_eq!(partial.len(), 256);
        assert_eq!(complete.len(), 256);
        let kind = ShapeKind::Circle { radius: 1.0 };
        for p in &partial.points {
            assert!(kind.surface_distance(*p) < 1e-9);
        }
    }

    #[test]
    fn half_occluded_circle_keeps_the_far_side() {
        let (partial, complete) = circle_occlusion(0.5);
        assert_eq!(partial.len(), 256);
        // Median x of a unit circle is 0; the cutoff estimate sits within
        // sampling error of it.
        for p in &partial.points {
            assert!(p[0] <= 0.05, "kept point {p:?} is on the near side");
        }
        let kind = ShapeKind::Circle { radius: 1.0 };
        for p in &partial.points {
            assert!(kind.surface_distance(*p) < 1e-9);
        }
        let gap = chamfer(&partial, &complete, ChamferMode::L2).unwrap();
        assert!(gap > 0.0, "partial and complete should differ, CD {gap}");
    }

    #[test]
    fn occlusion_is_deterministic() {
        let (p1, c1) = circle_occlusion(0.5);
        let (p2, c2) = circle_occlusion(0.5);
        assert_eq!(p1.points, p2.points);
        assert_eq!(c1.points, c2.points);
    }

    #[test]
    fn normalize_scales_the_farthest_point_to_target() {
        let cloud = generate(&ShapeSpec {
            kind: ShapeKind::Cylinder { radius: 0.6, height: 1.4 },
            n_points: 200,
            seed: 1,
        })
        .unwrap();
        let (n, t) = normalize(&cloud, NORMALIZE_SCALE).unwrap();
        let c = n.centroid();
        let max_r = n
            .points
            .iter()
            .map(|p| {
                ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt()
            })
            .fold(0.0f64, f64::max);
        assert!((max_r - 0.9).abs() < 1e-9);

        let restored = t.invert(&n);
        for (a, b) in restored.points.iter().zip(&cloud.points) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-7);
            }
        }

        let (n2, t2) = normalize(&n, NORMALIZE_SCALE).unwrap();
        for (a, b) in n2.points.iter().zip(&n.points) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9, "normalize is not idempotent");
            }
        }
        assert!(t2.translation.iter().all(|v| v.abs() < 1e-9));
        assert!((t2.scale - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normalize_rejects_coincident_points() {
        let cloud = PointCloud::new(vec![[1.0, 2.0, 3.0]; 5]).unwrap();
        assert!(matches!(
            normalize(&cloud, 0.9),
            Err(crate::Error::Degenerate(_))
        ));
    }

    #[test]
    fn xyz_round_trip_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        let cloud =
            PointCloud::new(vec![[0.1, 0.2, 0.3], [-1.0, 2.0, -3.0], [4.5, 0.0, 1.25]]).unwrap();
        write_cloud(&path, &cloud).unwrap();
        let back = read_cloud(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in back.points.iter().zip(&cloud.points) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn ply_header_names_the_vertex_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let cloud = generate(&ShapeSpec {
            kind: ShapeKind::Sphere { radius: 1.0 },
            n_points: 2048,
            seed: 2,
        })
        .unwrap();
        write_cloud(&path, &cloud).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("element vertex 2048"));
        let back = read_cloud(&path).unwrap();
        assert_eq!(back.len(), 2048);
        for (a, b) in back.points.iter().zip(&cloud.points) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn short_line_reports_its_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.xyz");
        std::fs::write(&path, "0 0 0\n1.0 2.0\n").unwrap();
        match read_cloud(&path) {
            Err(crate::Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_extension_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.obj");
        let cloud = PointCloud::new(vec![[0.0; 3]]).unwrap();
        assert!(matches!(write_cloud(&path, &cloud), Err(crate::Error::Format(_))));
        assert!(matches!(read_cloud(&path), Err(crate::Error::Format(_))));
    }

    #[test]
    fn synth_writes_a_consistent_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            kinds: vec![ShapeKind::Circle { radius: 1.0 }, ShapeKind::Sphere { radius: 1.0 }],
            seeds_per_kind: 8,
            n_points: 64,
            keep_fraction: 0.5,
            viewpoint: [1.0, 0.0, 0.0],
            base_seed: 99,
        };
        let entries = synth_dataset(dir.path(), &cfg).unwrap();
        assert_eq!(entries.len(), 16);
        let train = entries.iter().filter(|e| e.split == Split::Train).count();
        let val = entries.iter().filter(|e| e.split == Split::Val).count();
        let test = entries.iter().filter(|e| e.split == Split::Test).count();
        assert_eq!((train, val, test), (12, 2, 2));
        let back = read_manifest(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back, entries);
        for e in &entries {
            let p = read_cloud(&dir.path().join(&e.partial_path)).unwrap();
            let c = read_cloud(&dir.path().join(&e.complete_path)).unwrap();
            assert_eq!(p.len(), 64);
            assert_eq!(c.len(), 64);
            // Shared frame: the complete cloud is centered with radius 0.9.
            let cc = c.centroid();
            assert!(cc.iter().all(|v| v.abs() < 1e-6));
        }
    }

    #[test]
    fn canonical_split_is_30_5_5() {
        assert_eq!(split_of(0, 40), Split::Train);
        assert_eq!(split_of(29, 40), Split::Train);
        assert_eq!(split_of(30, 40), Split::Val);
        assert_eq!(split_of(34, 40), Split::Val);
        assert_eq!(split_of(35, 40), Split::Test);
        assert_eq!(split_of(39, 40), Split::Test);
    }
}
