//! Point and frame types plus frame I/O.
//!
//! Three on-disk frame encodings are supported:
//!
//! * CSV with header `x,y,z,intensity` or `x,y,z,intensity,vx,vy`. Missing
//!   velocity columns read as zero, since LiDAR carries no velocity.
//! * nuScenes-style LiDAR binary (read only): packed little-endian `f32 × 5`
//!   per point (`x, y, z, intensity, ring`), ring discarded.
//! * Native binary: magic `L2RPCF01`, a little-endian `u64` point count, then
//!   `f64 × 6` per point (`x, y, z, intensity, vx, vy`), little-endian.
//!
//! A *frame directory* holds one file per frame plus an optional
//! `frames.json` index with ids and timestamps.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NATIVE_MAGIC: &[u8; 8] = b"L2RPCF01";
pub const NUSCENES_RECORD_BYTES: usize = 20;
pub const FRAME_INDEX_FILE: &str = "frames.json";
/// Frame spacing assumed for directories without an index (20 Hz sweeps).
pub const DEFAULT_FRAME_PERIOD: f64 = 0.05;

#[derive(Debug, Error)]
pub enum PointCloudError {
    #[error("cannot access {}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid point: {0}")]
    Domain(String),
    #[error("sequence error: {0}")]
    Sequence(String),
}

pub type Result<T> = std::result::Result<T, PointCloudError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PointCloudError + '_ {
    move |source| PointCloudError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A LiDAR return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

/// A radar (or pseudo-radar) return with planar velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub vx: f64,
    pub vy: f64,
    pub intensity: f64,
}

impl LidarPoint {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }
}

/// Common view of a point as the six-field record used by every encoding:
/// `[x, y, z, intensity, vx, vy]`.
pub trait PointRecord: Copy + Send + Sync {
    const HAS_VELOCITY: bool;

    fn position(&self) -> [f64; 3];
    fn intensity(&self) -> f64;
    fn to_record(&self) -> [f64; 6];
    fn from_record_unchecked(r: [f64; 6]) -> Self;

    /// Builds a point from a record, rejecting non-finite values and negative
    /// intensity.
    fn from_record(r: [f64; 6]) -> Result<Self> {
        if let Some(v) = r.iter().find(|v| !v.is_finite()) {
            return Err(PointCloudError::Domain(format!("non-finite value {v}")));
        }
        if r[3] < 0.0 {
            return Err(PointCloudError::Domain(format!("negative intensity {}", r[3])));
        }
        Ok(Self::from_record_unchecked(r))
    }
}

impl PointRecord for LidarPoint {
    const HAS_VELOCITY: bool = false;

    fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    fn intensity(&self) -> f64 {
        self.intensity
    }

    fn to_record(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.intensity, 0.0, 0.0]
    }

    fn from_record_unchecked(r: [f64; 6]) -> Self {
        Self::new(r[0], r[1], r[2], r[3])
    }
}

impl PointRecord for RadarPoint {
    const HAS_VELOCITY: bool = true;

    fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    fn intensity(&self) -> f64 {
        self.intensity
    }

    fn to_record(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.intensity, self.vx, self.vy]
    }

    fn from_record_unchecked(r: [f64; 6]) -> Self {
        Self {
            x: r[0],
            y: r[1],
            z: r[2],
            intensity: r[3],
            vx: r[4],
            vy: r[5],
        }
    }
}

/// A timestamped point cloud. Pipeline stages build new frames rather than
/// mutating old ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloudFrame<P> {
    pub frame_id: String,
    /// Seconds.
    pub timestamp: f64,
    pub points: Vec<P>,
}

pub type LidarFrame = PointCloudFrame<LidarPoint>;
pub type RadarFrame = PointCloudFrame<RadarPoint>;

impl<P: PointRecord> PointCloudFrame<P> {
    pub fn new(frame_id: impl Into<String>, timestamp: f64, points: Vec<P>) -> Self {
        Self {
            frame_id: frame_id.into(),
            timestamp,
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(PointRecord::position).collect()
    }
}

/// Checks that timestamps strictly increase along a sequence.
pub fn validate_sequence<P>(frames: &[PointCloudFrame<P>]) -> Result<()> {
    for pair in frames.windows(2) {
        if !(pair[1].timestamp > pair[0].timestamp) {
            return Err(PointCloudError::Sequence(format!(
                "timestamp of {} ({}) does not follow {} ({})",
                pair[1].frame_id, pair[1].timestamp, pair[0].frame_id, pair[0].timestamp
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- CSV

const CSV_BASE: [&str; 4] = ["x", "y", "z", "intensity"];
const CSV_VELOCITY: [&str; 2] = ["vx", "vy"];

/// Parses CSV text into points. Line numbers in errors are 1-based with the
/// header on line 1.
pub fn parse_csv<P: PointRecord>(text: &str) -> Result<Vec<P>> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break l,
            None => return Err(PointCloudError::Schema("missing header".into())),
        }
    };
    let columns: Vec<&str> = header.trim().trim_start_matches('\u{feff}').split(',').map(str::trim).collect();
    let with_velocity = match columns.as_slice() {
        c if c == CSV_BASE => false,
        [base @ .., vx, vy] if base == CSV_BASE && [*vx, *vy] == CSV_VELOCITY => true,
        _ => {
            return Err(PointCloudError::Schema(format!(
                "expected header `x,y,z,intensity[,vx,vy]`, found `{}`",
                header.trim()
            )))
        }
    };
    let width = if with_velocity { 6 } else { 4 };
    let mut points = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(PointCloudError::Parse {
                line: line_no,
                message: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        let mut record = [0.0; 6];
        for (slot, field) in record.iter_mut().zip(&fields) {
            *slot = field.trim().parse::<f64>().map_err(|_| PointCloudError::Parse {
                line: line_no,
                message: format!("`{}` is not a number", field.trim()),
            })?;
        }
        let point = P::from_record(record).map_err(|e| PointCloudError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        points.push(point);
    }
    Ok(points)
}

/// Renders points as CSV. Radar points include the velocity columns.
/// Values use the shortest representation that parses back exactly.
pub fn format_csv<P: PointRecord>(points: &[P]) -> String {
    let mut out = String::new();
    if P::HAS_VELOCITY {
        out.push_str("x,y,z,intensity,vx,vy\n");
    } else {
        out.push_str("x,y,z,intensity\n");
    }
    for p in points {
        let r = p.to_record();
        let n = if P::HAS_VELOCITY { 6 } else { 4 };
        for (i, v) in r[..n].iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn read_frame_csv<P: PointRecord>(
    path: &Path,
    frame_id: impl Into<String>,
    timestamp: f64,
) -> Result<PointCloudFrame<P>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(PointCloudFrame::new(frame_id, timestamp, parse_csv(&text)?))
}

pub fn write_frame_csv<P: PointRecord>(frame: &PointCloudFrame<P>, path: &Path) -> Result<()> {
    write_atomic(path, format_csv(&frame.points).as_bytes()).map_err(io_err(path))
}

// ---------------------------------------------------------------- binary

/// Decodes nuScenes-style LiDAR records (`f32 × 5`, little-endian).
pub fn decode_nuscenes(bytes: &[u8]) -> Result<Vec<LidarPoint>> {
    if !bytes.len().is_multiple_of(NUSCENES_RECORD_BYTES) {
        return Err(PointCloudError::Format(format!(
            "{} bytes is not a multiple of {NUSCENES_RECORD_BYTES}",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(NUSCENES_RECORD_BYTES)
        .map(|rec| {
            let f = |i: usize| {
                f64::from(f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().expect("4 bytes")))
            };
            LidarPoint::from_record([f(0), f(1), f(2), f(3), 0.0, 0.0])
        })
        .collect()
}

pub fn read_frame_nuscenes_bin(
    path: &Path,
    frame_id: impl Into<String>,
    timestamp: f64,
) -> Result<LidarFrame> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(PointCloudFrame::new(frame_id, timestamp, decode_nuscenes(&bytes)?))
}

pub fn encode_native<P: PointRecord>(points: &[P]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + points.len() * 48);
    out.extend_from_slice(NATIVE_MAGIC);
    out.extend_from_slice(&(points.len() as u64).to_le_bytes());
    for p in points {
        for v in p.to_record() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_native<P: PointRecord>(bytes: &[u8]) -> Result<Vec<P>> {
    if bytes.len() < 16 || &bytes[..8] != NATIVE_MAGIC {
        return Err(PointCloudError::Format("missing L2RPCF01 header".into()));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = &bytes[16..];
    if (body.len() as u64) != count.saturating_mul(48) {
        return Err(PointCloudError::Format(format!(
            "header declares {count} points but body holds {} bytes",
            body.len()
        )));
    }
    body.chunks_exact(48)
        .map(|rec| {
            let mut r = [0.0; 6];
            for (i, slot) in r.iter_mut().enumerate() {
                *slot = f64::from_le_bytes(rec[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
            }
            P::from_record(r)
        })
        .collect()
}

// ---------------------------------------------------------------- stats

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub count: usize,
    pub centroid: Option<[f64; 3]>,
    pub mean_distance_to_origin: Option<f64>,
    pub intensity_range: Option<(f64, f64)>,
}

pub fn frame_stats<P: PointRecord>(frame: &PointCloudFrame<P>) -> FrameStats {
    let n = frame.points.len();
    if n == 0 {
        return FrameStats {
            count: 0,
            centroid: None,
            mean_distance_to_origin: None,
            intensity_range: None,
        };
    }
    let mut c = [0.0; 3];
    let mut dist = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &frame.points {
        let q = p.position();
        for k in 0..3 {
            c[k] += q[k];
        }
        dist += (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
        lo = lo.min(p.intensity());
        hi = hi.max(p.intensity());
    }
    let nf = n as f64;
    FrameStats {
        count: n,
        centroid: Some(c.map(|v| v / nf)),
        mean_distance_to_origin: Some(dist / nf),
        intensity_range: Some((lo, hi)),
    }
}

// ---------------------------------------------------------------- directories

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    Csv,
    Native,
    NuScenes,
}

impl FrameFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(Self::Csv),
            "pcf" => Some(Self::Native),
            "bin" => Some(Self::NuScenes),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Native => "pcf",
            Self::NuScenes => "bin",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameIndexEntry {
    pub frame_id: String,
    pub timestamp: f64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FrameIndex {
    pub frames: Vec<FrameIndexEntry>,
}

/// Reads one frame file, dispatching on its extension.
pub fn read_frame<P: PointRecord>(
    path: &Path,
    frame_id: impl Into<String>,
    timestamp: f64,
) -> Result<PointCloudFrame<P>> {
    let format = FrameFormat::from_path(path)
        .ok_or_else(|| PointCloudError::Format(format!("unknown frame file type: {}", path.display())))?;
    let points = match format {
        FrameFormat::Csv => parse_csv(&fs::read_to_string(path).map_err(io_err(path))?)?,
        FrameFormat::Native => decode_native(&fs::read(path).map_err(io_err(path))?)?,
        FrameFormat::NuScenes => decode_nuscenes(&fs::read(path).map_err(io_err(path))?)?
            .into_iter()
            .map(|p| P::from_record_unchecked(p.to_record()))
            .collect(),
    };
    Ok(PointCloudFrame::new(frame_id, timestamp, points))
}

/// Reads every frame of a directory. With a `frames.json` index the index
/// order, ids and timestamps are used; otherwise frame files are taken in
/// file-name order, ids are file stems and timestamps are spaced
/// [`DEFAULT_FRAME_PERIOD`] apart.
pub fn read_frame_dir<P: PointRecord>(dir: &Path) -> Result<Vec<PointCloudFrame<P>>> {
    let index_path = dir.join(FRAME_INDEX_FILE);
    let index = if index_path.exists() {
        let text = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
        serde_json::from_str::<FrameIndex>(&text)
            .map_err(|e| PointCloudError::Schema(format!("{}: {e}", index_path.display())))?
    } else {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| FrameFormat::from_path(p).is_some())
            .collect();
        files.sort();
        FrameIndex {
            frames: files
                .iter()
                .enumerate()
                .map(|(i, p)| FrameIndexEntry {
                    frame_id: p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                    timestamp: i as f64 * DEFAULT_FRAME_PERIOD,
                    file: p.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                })
                .collect(),
        }
    };
    let frames = index
        .frames
        .iter()
        .map(|e| read_frame(&dir.join(&e.file), e.frame_id.clone(), e.timestamp))
        .collect::<Result<Vec<_>>>()?;
    validate_sequence(&frames)?;
    Ok(frames)
}

/// Writes frames plus a `frames.json` index into `dir` (created if needed).
pub fn write_frame_dir<P: PointRecord>(
    dir: &Path,
    frames: &[PointCloudFrame<P>],
    format: FrameFormat,
) -> Result<()> {
    if format == FrameFormat::NuScenes {
        return Err(PointCloudError::Format("nuScenes binary is read-only".into()));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut index = FrameIndex::default();
    for frame in frames {
        let file = format!("{}.{}", frame.frame_id, format.extension());
        let path = dir.join(&file);
        let bytes = match format {
            FrameFormat::Csv => format_csv(&frame.points).into_bytes(),
            _ => encode_native(&frame.points),
        };
        write_atomic(&path, &bytes).map_err(io_err(&path))?;
        index.frames.push(FrameIndexEntry {
            frame_id: frame.frame_id.clone(),
            timestamp: frame.timestamp,
            file,
        });
    }
    let index_path = dir.join(FRAME_INDEX_FILE);
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    write_atomic(&index_path, json.as_bytes()).map_err(io_err(&index_path))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn csv_empty_with_header() {
        let pts: Vec<LidarPoint> = parse_csv("x,y,z,intensity\n").unwrap();
        assert!(pts.is_empty());
    }

    #[test]
    fn csv_bad_number_reports_line() {
        let err = parse_csv::<LidarPoint>("x,y,z,intensity\n1,2,3,notanumber\n").unwrap_err();
        assert!(matches!(err, PointCloudError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn csv_missing_column_is_schema_error() {
        let err = parse_csv::<LidarPoint>("x,y,z\n1,2,3\n").unwrap_err();
        assert!(matches!(err, PointCloudError::Schema(_)));
    }

    #[test]
    fn csv_short_row_is_parse_error() {
        let err = parse_csv::<LidarPoint>("x,y,z,intensity\n1,2,3,4\n1,2\n").unwrap_err();
        assert!(matches!(err, PointCloudError::Parse { line: 3, .. }));
    }

    #[test]
    fn csv_velocity_optional() {
        let pts: Vec<RadarPoint> = parse_csv("x,y,z,intensity\n1,2,3,4\n").unwrap();
        assert_eq!((pts[0].vx, pts[0].vy), (0.0, 0.0));
        let pts: Vec<RadarPoint> = parse_csv("x,y,z,intensity,vx,vy\n1,2,0,4,5,6\n").unwrap();
        assert_eq!((pts[0].vx, pts[0].vy), (5.0, 6.0));
    }

    #[test]
    fn csv_rejects_negative_intensity() {
        let err = parse_csv::<LidarPoint>("x,y,z,intensity\n1,2,3,-1\n").unwrap_err();
        assert!(matches!(err, PointCloudError::Parse { line: 2, .. }));
    }

    #[test]
    fn nuscenes_examples() {
        assert!(decode_nuscenes(&[]).unwrap().is_empty());

        let mut rec = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5, 0.0] {
            rec.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(rec.len(), 20);
        assert_eq!(decode_nuscenes(&rec).unwrap(), vec![LidarPoint::new(1.0, 2.0, 3.0, 0.5)]);

        rec.push(0);
        assert!(matches!(decode_nuscenes(&rec), Err(PointCloudError::Format(_))));
    }

    #[test]
    fn nuscenes_hand_written_bytes() {
        // 1.0f32 = 0x3f800000, 2.0 = 0x40000000, 3.0 = 0x40400000, 0.5 = 0x3f000000
        let bytes = [
            0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x40, 0x00, 0x00, 0x40, 0x40, 0x00, 0x00,
            0x00, 0x3f, 0x00, 0x00, 0x00, 0x00,
        ];
        assert_eq!(decode_nuscenes(&bytes).unwrap(), vec![LidarPoint::new(1.0, 2.0, 3.0, 0.5)]);
    }

    #[test]
    fn native_rejects_truncation_and_bad_magic() {
        let pts = vec![LidarPoint::new(1.0, 2.0, 3.0, 4.0)];
        let mut bytes = encode_native(&pts);
        assert_eq!(bytes.len(), 16 + 48);
        assert_eq!(&bytes[..8], b"L2RPCF01");
        bytes.pop();
        assert!(decode_native::<LidarPoint>(&bytes).is_err());
        assert!(decode_native::<LidarPoint>(b"NOTMAGIC\0\0\0\0\0\0\0\0").is_err());
    }

    #[test]
    fn stats_examples() {
        let f = LidarFrame::new("a", 0.0, vec![LidarPoint::new(1.0, 0.0, 0.0, 2.0)]);
        let s = frame_stats(&f);
        assert_eq!(s.count, 1);
        assert_eq!(s.centroid, Some([1.0, 0.0, 0.0]));
        assert_eq!(s.mean_distance_to_origin, Some(1.0));

        let pair = LidarFrame::new(
            "b",
            0.0,
            vec![LidarPoint::new(1.0, 0.0, 0.0, 0.0), LidarPoint::new(-1.0, 0.0, 0.0, 3.0)],
        );
        let s = frame_stats(&pair);
        assert_eq!(s.centroid, Some([0.0, 0.0, 0.0]));
        assert_eq!(s.intensity_range, Some((0.0, 3.0)));

        let three = LidarFrame::new(
            "c",
            0.0,
            vec![
                LidarPoint::new(3.0, 4.0, 0.0, 1.0),
                LidarPoint::new(0.0, 0.0, 2.0, 5.0),
                LidarPoint::new(-1.0, 2.0, 2.0, 0.5),
            ],
        );
        let s = frame_stats(&three);
        // centroid (2/3, 2, 4/3); distances 5, 2, 3
        let c = s.centroid.unwrap();
        assert!((c[0] - 2.0 / 3.0).abs() < 1e-15 && c[1] == 2.0 && (c[2] - 4.0 / 3.0).abs() < 1e-15);
        assert!((s.mean_distance_to_origin.unwrap() - 10.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.intensity_range, Some((0.5, 5.0)));

        assert_eq!(frame_stats(&LidarFrame::new("e", 0.0, vec![])).centroid, None);
    }

    #[test]
    fn sequence_must_increase() {
        let a = LidarFrame::new("a", 1.0, vec![]);
        let b = LidarFrame::new("b", 1.0, vec![]);
        assert!(validate_sequence(&[a.clone(), b]).is_err());
        assert!(validate_sequence(&[a, LidarFrame::new("c", 1.5, vec![])]).is_ok());
    }

    #[test]
    fn frame_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frames = vec![
            RadarFrame::new("f0", 0.0, vec![RadarPoint { x: 1.0, y: 2.0, z: 0.0, vx: 0.5, vy: -0.25, intensity: 3.0 }]),
            RadarFrame::new("f1", 0.1, vec![]),
        ];
        for fmt in [FrameFormat::Csv, FrameFormat::Native] {
            let sub = dir.path().join(fmt.extension());
            write_frame_dir(&sub, &frames, fmt).unwrap();
            let back: Vec<RadarFrame> = read_frame_dir(&sub).unwrap();
            assert_eq!(back, frames);
        }
    }

    #[test]
    fn frame_dir_without_index_uses_file_order() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.csv"), "x,y,z,intensity\n1,1,1,1\n").unwrap();
        fs::write(dir.path().join("a.csv"), "x,y,z,intensity\n").unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let frames: Vec<LidarFrame> = read_frame_dir(dir.path()).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].frame_id, "a");
        assert_eq!(frames[1].timestamp, DEFAULT_FRAME_PERIOD);
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![-1e6f64..1e6, any::<f64>().prop_filter("finite", |v| v.is_finite())]
    }

    fn radar_points() -> impl Strategy<Value = Vec<RadarPoint>> {
        prop::collection::vec(
            (finite(), finite(), finite(), finite(), finite(), 0.0f64..1e4),
            0..100,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(x, y, z, vx, vy, intensity)| RadarPoint { x, y, z, vx, vy, intensity })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_lossless(points in radar_points()) {
            let text = format_csv(&points);
            let back: Vec<RadarPoint> = parse_csv(&text).unwrap();
            prop_assert_eq!(back, points);
        }

        #[test]
        fn native_round_trip_is_lossless(points in radar_points()) {
            let back: Vec<RadarPoint> = decode_native(&encode_native(&points)).unwrap();
            prop_assert_eq!(back, points);
        }

        #[test]
        fn readers_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let _ = decode_nuscenes(&bytes);
            let _ = decode_native::<RadarPoint>(&bytes);
            let _ = parse_csv::<LidarPoint>(&String::from_utf8_lossy(&bytes));
        }
    }
}
