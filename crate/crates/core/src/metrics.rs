//! Chamfer distance between point sets, and corpus reports over aligned frame
//! pairs.
//!
//! `CD(P, Q) = mean_p min_q |p - q|² + mean_q min_p |p - q|²`, in squared
//! meters, no square root. Nearest neighbours come from [`KdTree`]; planar
//! clouds are compared with `z = 0`.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pointcloud::{PointCloudFrame, PointRecord};
use crate::spatial::{dist_sq, KdTree, Point3, SpatialError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("chamfer distance is undefined for an empty point set ({0})")]
    EmptySet(String),
    #[error("unpaired frames: only in pseudo {only_pseudo:?}, only in reference {only_reference:?}")]
    Orphans {
        only_pseudo: Vec<String>,
        only_reference: Vec<String>,
    },
    #[error("duplicate frame id `{0}`")]
    DuplicateId(String),
    #[error("no frame pairs to evaluate")]
    NoPairs,
    #[error(transparent)]
    Spatial(#[from] SpatialError),
}

fn directed(from: &[Point3], to: &KdTree) -> f64 {
    let total: f64 = from
        .iter()
        .map(|p| to.k_nearest(p, 1, None)[0].dist_sq)
        .sum();
    total / from.len() as f64
}

/// Symmetric Chamfer distance in squared meters.
pub fn chamfer(p: &[Point3], q: &[Point3]) -> Result<f64, MetricsError> {
    if p.is_empty() || q.is_empty() {
        let side = if p.is_empty() { "first" } else { "second" };
        return Err(MetricsError::EmptySet(format!("{side} set")));
    }
    let tp = KdTree::build(p)?;
    let tq = KdTree::build(q)?;
    Ok(directed(p, &tq) + directed(q, &tp))
}

/// Quadratic reference implementation.
pub fn chamfer_brute_force(p: &[Point3], q: &[Point3]) -> Result<f64, MetricsError> {
    if p.is_empty() || q.is_empty() {
        return Err(MetricsError::EmptySet("brute force".into()));
    }
    let one_way = |a: &[Point3], b: &[Point3]| {
        a.iter()
            .map(|x| b.iter().map(|y| dist_sq(x, y)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / a.len() as f64
    };
    Ok(one_way(p, q) + one_way(q, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameChamfer {
    pub frame_id: String,
    /// Squared meters.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChamferReport {
    pub per_frame: Vec<FrameChamfer>,
    pub mean: f64,
    pub count: usize,
    /// 2 when every compared point has `z = 0`, else 3.
    pub dimensionality: u8,
}

fn index_by_id<P>(
    frames: &[PointCloudFrame<P>],
) -> Result<BTreeMap<&str, &PointCloudFrame<P>>, MetricsError> {
    let mut map = BTreeMap::new();
    for f in frames {
        if map.insert(f.frame_id.as_str(), f).is_some() {
            return Err(MetricsError::DuplicateId(f.frame_id.clone()));
        }
    }
    Ok(map)
}

/// Pairs `pseudo` and `reference` frames by id and averages their Chamfer
/// distances. Per-frame entries follow the order of `pseudo`.
pub fn mean_chamfer<P, Q>(
    pseudo: &[PointCloudFrame<P>],
    reference: &[PointCloudFrame<Q>],
) -> Result<ChamferReport, MetricsError>
where
    P: PointRecord + Sync,
    Q: PointRecord + Sync,
{
    let a = index_by_id(pseudo)?;
    let b = index_by_id(reference)?;
    let ka: BTreeSet<&str> = a.keys().copied().collect();
    let kb: BTreeSet<&str> = b.keys().copied().collect();
    if ka != kb {
        return Err(MetricsError::Orphans {
            only_pseudo: ka.difference(&kb).map(|s| s.to_string()).collect(),
            only_reference: kb.difference(&ka).map(|s| s.to_string()).collect(),
        });
    }
    if pseudo.is_empty() {
        return Err(MetricsError::NoPairs);
    }

    let per_frame = pseudo
        .par_iter()
        .map(|f| {
            let r = b[f.frame_id.as_str()];
            let value = chamfer(&f.positions(), &r.positions()).map_err(|e| match e {
                MetricsError::EmptySet(side) => {
                    MetricsError::EmptySet(format!("frame {}: {side}", f.frame_id))
                }
                other => other,
            })?;
            Ok(FrameChamfer {
                frame_id: f.frame_id.clone(),
                value,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;

    let planar = pseudo
        .iter()
        .flat_map(|f| f.points.iter().map(|p| p.position()[2]))
        .chain(reference.iter().flat_map(|f| f.points.iter().map(|p| p.position()[2])))
        .all(|z| z == 0.0);
    let count = per_frame.len();
    let mean = per_frame.iter().map(|f| f.value).sum::<f64>() / count as f64;
    Ok(ChamferReport {
        per_frame,
        mean,
        count,
        dimensionality: if planar { 2 } else { 3 },
    })
}
