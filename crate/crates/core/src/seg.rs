//! Delta segmentation: region masks for both frames, IoU matching against a
//! threshold, critical-class masks from an oracle, and composition of the
//! black-background delta frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polygon::{components_8, outline_component, PolygonSet};
use crate::types::{mask_iou, Frame, FrameRole, Mask, MaskSet, MaskSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegParams {
    /// Masks whose best IoU against the background segmentation is at or
    /// below this value count as differences.
    pub delta_thr: f64,
    pub color_quant_levels: u32,
    pub min_region_area: u64,
    pub poly_epsilon: f64,
}

impl Default for SegParams {
    fn default() -> Self {
        SegParams {
            delta_thr: 0.5,
            color_quant_levels: 8,
            min_region_area: 16,
            poly_epsilon: 1.0,
        }
    }
}

impl SegParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_thr > 0.0 && self.delta_thr <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta_thr {} outside (0, 1]",
                self.delta_thr
            )));
        }
        if !(1..=256).contains(&self.color_quant_levels) {
            return Err(Error::InvalidParameter(format!(
                "color_quant_levels {} outside [1, 256]",
                self.color_quant_levels
            )));
        }
        if !(self.poly_epsilon >= 0.0) {
            return Err(Error::InvalidParameter("poly_epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

/// Region segmentation: uniform color quantization, then 4-connected
/// components of identical quantized color. Components smaller than
/// `min_region_area` are dropped.
pub fn segment_regions(frame: &Frame, params: &SegParams, source: MaskSource) -> Result<MaskSet> {
    params.validate()?;
    let (w, h) = frame.dims();
    let levels = params.color_quant_levels;
    let quant: Vec<u32> = frame
        .pixels()
        .chunks_exact(3)
        .map(|p| {
            let q = |v: u8| v as u32 * levels / 256;
            (q(p[0]) << 16) | (q(p[1]) << 8) | q(p[2])
        })
        .collect();

    let mut comp_of = vec![u32::MAX; quant.len()];
    let mut masks = Vec::new();
    let mut stack = Vec::new();
    let mut pixels = Vec::new();
    let mut next_label: u32 = 1;
    for start in 0..quant.len() {
        if comp_of[start] != u32::MAX {
            continue;
        }
        let color = quant[start];
        comp_of[start] = 0;
        stack.push(start);
        pixels.clear();
        while let Some(i) = stack.pop() {
            pixels.push(i);
            let (x, y) = ((i % w as usize) as u32, (i / w as usize) as u32);
            let mut visit = |j: usize| {
                if comp_of[j] == u32::MAX && quant[j] == color {
                    comp_of[j] = 0;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w as usize);
            }
            if y + 1 < h {
                visit(i + w as usize);
            }
        }
        if (pixels.len() as u64) < params.min_region_area {
            continue;
        }
        let label = u16::try_from(next_label)
            .map_err(|_| Error::OutOfRange("more than 65535 regions".into()))?;
        next_label += 1;
        let pts = pixels
            .iter()
            .map(|&i| ((i % w as usize) as u32, (i / w as usize) as u32));
        masks.push(Mask::from_points(w, h, label, pts)?);
    }
    MaskSet::new(w, h, masks, source)
}

fn bboxes_overlap(a: &Mask, b: &Mask) -> bool {
    match (a.bbox(), b.bbox()) {
        (Some(p), Some(q)) => p.x0 <= q.x1 && q.x0 <= p.x1 && p.y0 <= q.y1 && q.y0 <= p.y1,
        _ => false,
    }
}

/// Masks of `m_cav` with no counterpart in `m_rf`: their best IoU over all
/// background masks is at most `delta_thr`. Labels are kept.
pub fn match_delta_masks(m_rf: &MaskSet, m_cav: &MaskSet, params: &SegParams) -> Result<MaskSet> {
    params.validate()?;
    if m_rf.dims() != m_cav.dims() {
        return Err(Error::dims(m_rf.dims(), m_cav.dims()));
    }
    let mut out = Vec::new();
    for cav in m_cav.masks() {
        let mut best = 0.0f64;
        for rf in m_rf.masks() {
            if !bboxes_overlap(rf, cav) {
                continue;
            }
            best = best.max(mask_iou(rf, cav)?);
            if best > params.delta_thr {
                break;
            }
        }
        if best <= params.delta_thr {
            out.push(cav.clone());
        }
    }
    MaskSet::new(m_cav.width(), m_cav.height(), out, MaskSource::Delta)
}

/// A delta frame with the foreground region it was cut from and the outline
/// polygons sent alongside it.
#[derive(Clone, Debug)]
pub struct DeltaFrame {
    pub delta: Frame,
    pub polys: PolygonSet,
    pub region: Mask,
}

fn compose(f_cav: &Frame, region: &Mask) -> Frame {
    let mut delta = Frame::black_like(f_cav, FrameRole::Delta);
    for (x, y) in region.iter_set() {
        delta.set_pixel(x, y, f_cav.pixel(x, y));
    }
    delta
}

/// Outlines of every 8-connected component of `region`, labeled 1, 2, … in
/// raster order of their first pixel.
fn region_polygons(region: &Mask, epsilon: f64) -> Result<PolygonSet> {
    let (w, h) = region.dims();
    let comps = components_8(region);
    if comps.len() > u16::MAX as usize {
        return Err(Error::OutOfRange("more than 65535 delta components".into()));
    }
    let polygons = comps
        .iter()
        .enumerate()
        .map(|(i, c)| outline_component(c, w, h, i as u16 + 1, epsilon))
        .collect();
    Ok(PolygonSet { polygons })
}

/// Segments both frames, keeps the unmatched capture regions, adds the
/// critical-class masks, and cuts the delta frame out of the capture.
pub fn seg_delta(
    f_rf: &Frame,
    f_cav: &Frame,
    class_oracle: &MaskSet,
    params: &SegParams,
) -> Result<DeltaFrame> {
    f_rf.ensure_same_dims(f_cav)?;
    if class_oracle.dims() != f_cav.dims() {
        return Err(Error::dims(class_oracle.dims(), f_cav.dims()));
    }
    let m_rf = segment_regions(f_rf, params, MaskSource::SegmenterRf)?;
    let m_cav = segment_regions(f_cav, params, MaskSource::SegmenterCav)?;
    let differences = match_delta_masks(&m_rf, &m_cav, params)?;
    let mut region = differences.union();
    region.union_with(&class_oracle.union())?;
    let polys = region_polygons(&region, params.poly_epsilon)?;
    Ok(DeltaFrame {
        delta: compose(f_cav, &region),
        polys,
        region,
    })
}

/// Delta frame cut with ground-truth masks: no false positives or negatives.
pub fn ideal_delta(f_cav: &Frame, gt: &MaskSet, params: &SegParams) -> Result<DeltaFrame> {
    if gt.dims() != f_cav.dims() {
        return Err(Error::dims(gt.dims(), f_cav.dims()));
    }
    let region = gt.union();
    let (w, h) = gt.dims();
    // One outline per connected piece of the union, tagged with the lowest
    // instance label it touches.
    let polygons = components_8(&region)
        .iter()
        .map(|comp| {
            let label = gt
                .masks()
                .iter()
                .filter(|m| comp.iter().any(|&(x, y)| m.get(x, y)))
                .map(Mask::label)
                .min()
                .unwrap_or(1);
            outline_component(comp, w, h, label, params.poly_epsilon)
        })
        .collect();
    Ok(DeltaFrame {
        delta: compose(f_cav, &region),
        polys: PolygonSet { polygons },
        region,
    })
}
