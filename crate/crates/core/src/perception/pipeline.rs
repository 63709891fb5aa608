//! Material localization: depth outlier removal, front-surface thresholding,
//! colour-based tool removal, ROI cropping, and the three-cluster report.

use std::fmt::Write as _;

use nalgebra::Vector3;

use super::color::rgb_to_hsv;
use super::depth::{depth_inliers, depth_threshold};
use super::frame::{BBox, RgbdFrame};
use super::kmeans::kmeans;
use crate::error::{invalid, Result};
use crate::rng::derive_seed;

pub const REPORT_CLUSTERS: usize = 3;

/// Fractions of the bounding box removed from each side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiFractions {
    pub top: f64,
    pub bottom: f64,
    pub left: f64,
    pub right: f64,
}

impl Default for RoiFractions {
    fn default() -> Self {
        Self { top: 0.25, bottom: 0.0, left: 0.3, right: 0.3 }
    }
}

pub fn roi_crop(bbox: &BBox, f: &RoiFractions) -> Result<BBox> {
    let all = [f.top, f.bottom, f.left, f.right];
    if all.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return invalid("ROI fractions must lie in [0, 1]");
    }
    let (w, h) = (bbox.width() as f64, bbox.height() as f64);
    let cut = |frac: f64, len: f64| (frac * len).round() as usize;
    let out = BBox {
        x0: bbox.x0 + cut(f.left, w),
        x1: bbox.x1.saturating_sub(cut(f.right, w)),
        y0: bbox.y0 + cut(f.top, h),
        y1: bbox.y1.saturating_sub(cut(f.bottom, h)),
    };
    if out.x1 <= out.x0 || out.y1 <= out.y0 {
        return invalid(format!("ROI crop of {bbox:?} is empty"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToolFilterParams {
    pub clusters: usize,
    /// Inclusive hue window on the 0–180 scale.
    pub hue_min: f64,
    pub hue_max: f64,
    /// Clusters must be strictly more saturated than this to be removed.
    pub saturation_floor: f64,
    pub max_iter: usize,
}

impl Default for ToolFilterParams {
    fn default() -> Self {
        Self { clusters: 6, hue_min: 40.0, hue_max: 80.0, saturation_floor: 0.3, max_iter: 100 }
    }
}

/// Clusters the masked pixels in RGB and drops those whose cluster colour is tool green.
pub fn filter_tool_pixels(frame: &RgbdFrame, mask: &[bool], params: &ToolFilterParams, seed: u64) -> Result<Vec<bool>> {
    if mask.len() != frame.rgb.len() {
        return invalid("mask size does not match frame");
    }
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Ok(mask.to_vec());
    }
    let colors: Vec<[f64; 3]> = idx.iter().map(|&i| frame.rgb[i].map(f64::from)).collect();
    let km = kmeans(&colors, params.clusters.min(colors.len()), seed, params.max_iter)?;
    let tool: Vec<bool> = km
        .centroids
        .iter()
        .map(|c| {
            let hsv = rgb_to_hsv(*c);
            hsv.h >= params.hue_min && hsv.h <= params.hue_max && hsv.s > params.saturation_floor
        })
        .collect();
    let mut out = mask.to_vec();
    for (k, &i) in idx.iter().enumerate() {
        if tool[km.assignments[k]] {
            out[i] = false;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportCluster {
    /// World coordinates, m.
    pub centroid: Vector3<f64>,
    /// Share of ROI pixels in this cluster, %.
    pub coverage_pct: f64,
}

/// Clusters sorted by world z, highest first; empty slots have zero coverage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterReport {
    pub clusters: [ReportCluster; REPORT_CLUSTERS],
}

pub const REPORT_HEADER: &str = "cluster,c_x,c_y,c_z,coverage_pct";

impl ClusterReport {
    pub fn total_coverage(&self) -> f64 {
        self.clusters.iter().map(|c| c.coverage_pct).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for (i, c) in self.clusters.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{},{},{}", c.centroid.x, c.centroid.y, c.centroid.z, c.coverage_pct);
        }
        s
    }
}

/// Three-cluster summary of material pixels `(x, y)` inside `roi`. Pixels are
/// sorted before clustering, so the result does not depend on their order.
/// Each centroid takes the depth of the member pixel nearest to it and is
/// back-projected through the frame's camera.
pub fn material_clusters(pixels: &[(usize, usize)], roi: &BBox, frame: &RgbdFrame, seed: u64) -> Result<ClusterReport> {
    if roi.area() == 0 {
        return invalid("empty ROI");
    }
    let mut px: Vec<(usize, usize)> = pixels.to_vec();
    px.sort_by_key(|&(x, y)| (y, x));
    px.dedup();
    if let Some(&(x, y)) = px.iter().find(|&&(x, y)| !roi.contains(x, y) || frame.depth[frame.index(x, y)] <= 0.0) {
        return invalid(format!("pixel ({x}, {y}) is outside the ROI or has no depth"));
    }
    let cam = &frame.camera;
    let roi_pixels = roi.area() as f64;
    let pts: Vec<[f64; 2]> = px.iter().map(|&(x, y)| [x as f64 + 0.5, y as f64 + 0.5]).collect();

    let mut found: Vec<ReportCluster> = Vec::new();
    let mut fallback_depth = 0.0;
    if !pts.is_empty() {
        let k = REPORT_CLUSTERS.min(pts.len());
        let km = kmeans(&pts, k, seed, 100)?;
        let sizes = km.cluster_sizes();
        for (c, centroid) in km.centroids.iter().enumerate() {
            if sizes[c] == 0 {
                continue;
            }
            let nearest = (0..pts.len())
                .filter(|&i| km.assignments[i] == c)
                .min_by(|&a, &b| {
                    let da = (pts[a][0] - centroid[0]).powi(2) + (pts[a][1] - centroid[1]).powi(2);
                    let db = (pts[b][0] - centroid[0]).powi(2) + (pts[b][1] - centroid[1]).powi(2);
                    da.total_cmp(&db)
                })
                .expect("cluster is nonempty");
            let (x, y) = px[nearest];
            let d = frame.depth[frame.index(x, y)] as f64;
            fallback_depth = d;
            found.push(ReportCluster {
                centroid: cam.back_project(centroid[0], centroid[1], d),
                coverage_pct: sizes[c] as f64 / roi_pixels * 100.0,
            });
        }
    }
    found.sort_by(|a, b| b.centroid.z.total_cmp(&a.centroid.z));
    let centre = (0.5 * (roi.x0 + roi.x1) as f64, 0.5 * (roi.y0 + roi.y1) as f64);
    let pad = ReportCluster { centroid: cam.back_project(centre.0, centre.1, fallback_depth), coverage_pct: 0.0 };
    let mut clusters = [pad; REPORT_CLUSTERS];
    for (slot, c) in clusters.iter_mut().zip(found) {
        *slot = c;
    }
    Ok(ClusterReport { clusters })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    /// Front-surface ratio between nearest and farthest retained depth.
    pub depth_ratio: f64,
    pub roi: RoiFractions,
    pub filter_tool: bool,
    pub tool_filter: ToolFilterParams,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self { depth_ratio: 0.5, roi: RoiFractions::default(), filter_tool: true, tool_filter: ToolFilterParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    /// Depth threshold used, m; NaN if the vial had no valid depth.
    pub threshold: f64,
    /// Vial pixels passing outlier removal and the depth threshold.
    pub front: Vec<bool>,
    /// `front` after tool filtering (equal to `front` when filtering is off).
    pub material: Vec<bool>,
    pub roi: BBox,
    pub report: ClusterReport,
}

impl PipelineOutput {
    /// `mask` restricted to the ROI, row-major over the ROI.
    pub fn roi_values<T: Copy>(&self, mask: &[T], width: usize) -> Vec<T> {
        let r = &self.roi;
        (r.y0..r.y1).flat_map(|y| (r.x0..r.x1).map(move |x| mask[y * width + x])).collect()
    }
}

const FILTER_SEED_TAG: u64 = 0xF117;
const CLUSTER_SEED_TAG: u64 = 0xC1;

/// Runs the full pipeline on a frame given the vial segmentation and its bounding box.
pub fn run_pipeline(frame: &RgbdFrame, vial: &[bool], bbox: &BBox, params: &PipelineParams, seed: u64) -> Result<PipelineOutput> {
    let n = frame.rgb.len();
    if vial.len() != n {
        return invalid("vial mask size does not match frame");
    }
    let roi = roi_crop(bbox, &params.roi)?;
    let valid: Vec<usize> = (0..n).filter(|&i| vial[i] && frame.depth[i] > 0.0).collect();
    let mut front = vec![false; n];
    let mut threshold = f64::NAN;
    if !valid.is_empty() {
        let depths: Vec<f64> = valid.iter().map(|&i| frame.depth[i] as f64).collect();
        let keep = depth_inliers(&depths)?;
        let kept: Vec<f64> = keep.iter().map(|&k| depths[k]).collect();
        threshold = depth_threshold(&kept, params.depth_ratio)?;
        for &k in &keep {
            if depths[k] <= threshold {
                front[valid[k]] = true;
            }
        }
    }
    let material = if params.filter_tool {
        filter_tool_pixels(frame, &front, &params.tool_filter, derive_seed(seed, &[FILTER_SEED_TAG]))?
    } else {
        front.clone()
    };
    let pixels: Vec<(usize, usize)> = (roi.y0..roi.y1)
        .flat_map(|y| (roi.x0..roi.x1).map(move |x| (x, y)))
        .filter(|&(x, y)| material[frame.index(x, y)])
        .collect();
    let report = material_clusters(&pixels, &roi, frame, derive_seed(seed, &[CLUSTER_SEED_TAG]))?;
    Ok(PipelineOutput { threshold, front, material, roi, report })
}
