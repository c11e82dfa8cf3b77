//! Sender, channel and receiver for one batch, for each pipeline variant.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{analytical_loss_rate, packetize, transmit, ChannelConfig, PacketTrace};
use crate::codec::{decode_all, decode_batch, encode_batch, Bitstream, CodecParams, Concealment};
use crate::error::{Error, Result};
use crate::metrics::{data_savings, psnr, ssim, QualityReport};
use crate::polygon::PolygonSet;
use crate::scene::{render_batch, BackgroundProvider, ProceduralBackground, SceneSpec};
use crate::seg::{ideal_delta, seg_delta, SegParams};
use crate::types::{CameraPose, Frame, FrameRole, MaskSet, MaskSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineVariant {
    /// Full capture frames through the codec.
    VcBaseline,
    /// Delta frames cut with ground-truth masks.
    RfdvcGt,
    /// Delta frames cut by the segmenter.
    RfdvcDs,
}

impl PipelineVariant {
    pub const ALL: [PipelineVariant; 3] = [
        PipelineVariant::VcBaseline,
        PipelineVariant::RfdvcGt,
        PipelineVariant::RfdvcDs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineVariant::VcBaseline => "vc_baseline",
            PipelineVariant::RfdvcGt => "rfdvc_gt",
            PipelineVariant::RfdvcDs => "rfdvc_ds",
        }
    }

    pub fn is_rfdvc(self) -> bool {
        self != PipelineVariant::VcBaseline
    }
}

impl fmt::Display for PipelineVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PipelineVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown variant {s:?}")))
    }
}

const POSE_BYTES: usize = 12 * 8;

/// Per-frame control data: the top three rows of the pose (RFDVC only),
/// then the polygon set.
pub fn encode_control(poses: Option<&[CameraPose]>, polys: &[PolygonSet]) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, p) in polys.iter().enumerate() {
        if let Some(poses) = poses {
            for row in &poses[i].matrix()[..3] {
                for v in row {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        p.write_to(&mut out);
    }
    out
}

pub fn decode_control(bytes: &[u8], frames: usize, with_poses: bool) -> Result<(Vec<CameraPose>, Vec<PolygonSet>)> {
    let mut pos = 0;
    let mut poses = Vec::with_capacity(frames);
    let mut polys = Vec::with_capacity(frames);
    for _ in 0..frames {
        if with_poses {
            let chunk = bytes
                .get(pos..pos + POSE_BYTES)
                .ok_or_else(|| Error::Malformed("control plane truncated in pose".into()))?;
            let mut m = crate::types::IDENTITY4;
            for (i, c) in chunk.chunks_exact(8).enumerate() {
                m[i / 4][i % 4] = f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
            }
            poses.push(CameraPose::new(m)?);
            pos += POSE_BYTES;
        } else {
            poses.push(CameraPose::identity());
        }
        let (set, used) = PolygonSet::read_from(&bytes[pos..])?;
        polys.push(set);
        pos += used;
    }
    if pos != bytes.len() {
        return Err(Error::Malformed("trailing control-plane bytes".into()));
    }
    Ok((poses, polys))
}

/// What the sender puts on the wire for one batch.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub bitstream: Bitstream,
    pub polys: Vec<PolygonSet>,
    pub poses: Vec<CameraPose>,
    pub control: Vec<u8>,
    pub deltas: Vec<Frame>,
}

impl Encoded {
    /// Video payload plus control plane.
    pub fn total_bytes(&self) -> usize {
        self.bitstream.total_bytes() + self.control.len()
    }
}

/// Critical-class masks for the segmenter. Every scene actor is a vehicle
/// or a pedestrian, so this is the ground truth under another source tag.
pub fn class_oracle(gt: &MaskSet) -> Result<MaskSet> {
    MaskSet::new(gt.width(), gt.height(), gt.masks().to_vec(), MaskSource::ClassOracle)
}

/// Sender side: renders the background for every capture pose, forms the
/// delta frames for the variant and codes them as one group of pictures.
pub fn rf_encoder(
    provider: &dyn BackgroundProvider,
    background_id: u64,
    cav_batch: &[Frame],
    gt_batch: &[MaskSet],
    variant: PipelineVariant,
    codec: &CodecParams,
    seg: &SegParams,
) -> Result<Encoded> {
    if cav_batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    if gt_batch.len() != cav_batch.len() {
        return Err(Error::InvalidParameter("one mask set per frame required".into()));
    }
    let mut deltas = Vec::with_capacity(cav_batch.len());
    let mut polys = Vec::with_capacity(cav_batch.len());
    let mut poses = Vec::with_capacity(cav_batch.len());
    for (cav, gt) in cav_batch.iter().zip(gt_batch) {
        let (w, h) = cav.dims();
        poses.push(cav.pose);
        match variant {
            PipelineVariant::VcBaseline => {
                deltas.push(cav.clone());
                polys.push(PolygonSet::full_frame(w, h));
            }
            PipelineVariant::RfdvcGt => {
                let d = ideal_delta(cav, gt, seg)?;
                deltas.push(d.delta);
                polys.push(d.polys);
            }
            PipelineVariant::RfdvcDs => {
                let rf = provider.render(&cav.pose, background_id)?;
                let d = seg_delta(&rf, cav, &class_oracle(gt)?, seg)?;
                deltas.push(d.delta);
                polys.push(d.polys);
            }
        }
    }
    let bitstream = encode_batch(&deltas, codec)?;
    let control = encode_control(variant.is_rfdvc().then_some(&poses[..]), &polys);
    Ok(Encoded {
        bitstream,
        polys,
        poses,
        control,
        deltas,
    })
}

/// Packetizes and sends the stream; returns the trace and the estimated
/// transmission time.
pub fn channel_tx(bitstream: &Bitstream, control: &[u8], cfg: &ChannelConfig) -> Result<(PacketTrace, f64)> {
    let packets = packetize(bitstream, control, cfg)?;
    let trace = transmit(&packets, cfg)?;
    Ok((trace, packets.tau_est))
}

#[derive(Clone, Debug)]
pub struct Received {
    pub rec_frames: Vec<Frame>,
    /// Decoder output under the trace's losses, before overlay.
    pub decoded: Vec<Frame>,
    pub rf_frames: Vec<Frame>,
    pub poses: Vec<CameraPose>,
    pub polys: Vec<PolygonSet>,
}

/// Receiver side. RFDVC variants overlay decoded delta pixels that lie
/// inside a transmitted polygon and in an intact slice on the locally
/// rendered background; everything else is background. The baseline shows
/// the decoder output, lost slices replaced by the previous frame.
pub fn rf_decoder(
    provider: &dyn BackgroundProvider,
    background_id: u64,
    trace: &PacketTrace,
    bitstream: &Bitstream,
    control: &[u8],
    variant: PipelineVariant,
) -> Result<Received> {
    let n = bitstream.frame_count() as usize;
    let (poses, polys) = decode_control(control, n, variant.is_rfdvc())?;
    let avail = trace.availability();
    let (w, h) = (bitstream.header.width, bitstream.header.height);
    let slice_h = bitstream.header.params().slice_height();
    if !variant.is_rfdvc() {
        let dec = decode_batch(bitstream, &avail, Concealment::PreviousFrame)?;
        let rec_frames = dec
            .frames
            .iter()
            .map(|f| {
                let mut r = f.clone();
                r.role = FrameRole::Rec;
                r
            })
            .collect();
        return Ok(Received {
            rec_frames,
            decoded: dec.frames,
            rf_frames: Vec::new(),
            poses,
            polys,
        });
    }
    let dec = decode_batch(bitstream, &avail, Concealment::Black)?;
    let mut rec_frames = Vec::with_capacity(n);
    let mut rf_frames = Vec::with_capacity(n);
    for (t, (pose, set)) in poses.iter().zip(&polys).enumerate() {
        let rf = provider.render(pose, background_id)?;
        if rf.dims() != (w, h) {
            return Err(Error::dims(rf.dims(), (w, h)));
        }
        let inside = set.rasterize(w, h);
        let mut rec = rf.clone();
        rec.role = FrameRole::Rec;
        rec.pose = *pose;
        rec.frame_index = t as u32;
        for (x, y) in inside.iter_set() {
            if dec.intact[t][(y / slice_h) as usize] {
                rec.set_pixel(x, y, dec.frames[t].pixel(x, y));
            }
        }
        rec_frames.push(rec);
        rf_frames.push(rf);
    }
    Ok(Received {
        rec_frames,
        decoded: dec.frames,
        rf_frames,
        poses,
        polys,
    })
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub rec_frames: Vec<Frame>,
    pub cav_frames: Vec<Frame>,
    pub rf_frames: Vec<Frame>,
    pub polys: Vec<PolygonSet>,
    pub poses_sent: Vec<CameraPose>,
    pub poses_received: Vec<CameraPose>,
    /// Video stream plus control plane.
    pub bitstream_bytes: usize,
    pub video_bytes: usize,
    pub control_bytes: usize,
    pub trace: PacketTrace,
    pub tau_est: f64,
    /// Batch-level report; constraint verdicts are left unset.
    pub report: QualityReport,
    pub frame_reports: Vec<QualityReport>,
}

/// Runs one batch of a procedural scene end to end.
pub fn run_pipeline(
    spec: &SceneSpec,
    variant: PipelineVariant,
    codec: &CodecParams,
    channel: &ChannelConfig,
) -> Result<RunResult> {
    let provider = ProceduralBackground::new(spec.width, spec.height);
    let bler = analytical_loss_rate(channel)?;
    run_pipeline_with(&provider, spec, variant, codec, &SegParams::default(), channel, bler)
}

/// As [`run_pipeline`] with an explicit background provider and segmenter
/// settings. `bler_target` is only recorded in the report.
pub fn run_pipeline_with(
    provider: &dyn BackgroundProvider,
    spec: &SceneSpec,
    variant: PipelineVariant,
    codec: &CodecParams,
    seg: &SegParams,
    channel: &ChannelConfig,
    bler_target: f64,
) -> Result<RunResult> {
    let pairs = render_batch(provider, spec)?;
    let (cavs, gts): (Vec<Frame>, Vec<MaskSet>) = pairs.into_iter().map(|p| (p.cav, p.gt)).unzip();
    let codec = CodecParams {
        gop_len: codec.gop_len.max(cavs.len() as u32),
        ..codec.clone()
    };
    let enc = rf_encoder(provider, spec.background_id, &cavs, &gts, variant, &codec, seg)?;
    let (trace, tau_est) = channel_tx(&enc.bitstream, &enc.control, channel)?;
    let rx = rf_decoder(provider, spec.background_id, &trace, &enc.bitstream, &enc.control, variant)?;
    let clean = decode_all(&enc.bitstream)?;

    let frame_bytes = per_frame_bytes(&enc);
    let raw_frame = (spec.width as u64) * (spec.height as u64) * 3;
    let mut frame_reports = Vec::with_capacity(cavs.len());
    for t in 0..cavs.len() {
        let compressed = frame_bytes[t] as u64;
        frame_reports.push(QualityReport {
            variant,
            condition: spec.condition.environment,
            traffic: spec.condition.traffic,
            quant_step: codec.quant_step,
            bler_target,
            realized_loss: trace.realized_loss_rate(),
            raw_bytes: raw_frame,
            compressed_bytes: compressed,
            savings_pct: data_savings(raw_frame, compressed)?,
            psnr_rec_db: psnr(&rx.rec_frames[t], &cavs[t])?,
            ssim_rec: ssim(&rx.rec_frames[t], &cavs[t])?,
            ssim_delta: ssim(&rx.decoded[t], &clean.frames[t])?,
            c_throughput: None,
            c_delta_quality: None,
            c_rec_quality: None,
            c_loss: None,
            c_robustness: None,
        });
    }
    let n = frame_reports.len() as f64;
    let mean = |f: fn(&QualityReport) -> f64| frame_reports.iter().map(f).sum::<f64>() / n;
    let raw = raw_frame * cavs.len() as u64;
    let total = enc.total_bytes() as u64;
    let report = QualityReport {
        raw_bytes: raw,
        compressed_bytes: total,
        savings_pct: data_savings(raw, total)?,
        psnr_rec_db: mean(|r| r.psnr_rec_db),
        ssim_rec: mean(|r| r.ssim_rec),
        ssim_delta: mean(|r| r.ssim_delta),
        ..frame_reports[0].clone()
    };
    let (bitstream_bytes, video_bytes, control_bytes) =
        (enc.total_bytes(), enc.bitstream.total_bytes(), enc.control.len());
    Ok(RunResult {
        rec_frames: rx.rec_frames,
        cav_frames: cavs,
        rf_frames: rx.rf_frames,
        polys: rx.polys,
        poses_sent: enc.poses,
        poses_received: rx.poses,
        bitstream_bytes,
        video_bytes,
        control_bytes,
        trace,
        tau_est,
        report,
        frame_reports,
    })
}

/// Bytes attributed to each frame: its slices and control data, with the
/// header and slice directory charged to the first frame.
fn per_frame_bytes(enc: &Encoded) -> Vec<usize> {
    let bs = &enc.bitstream;
    let pose = if enc.control.len() > enc.polys.iter().map(PolygonSet::encoded_len).sum::<usize>() {
        POSE_BYTES
    } else {
        0
    };
    (0..bs.frame_count())
        .map(|f| {
            let slices: usize = (0..bs.slices_per_frame()).map(|s| bs.entry(f, s).len as usize).sum();
            let header = if f == 0 { bs.header_len() } else { 0 };
            slices + header + pose + enc.polys[f as usize].encoded_len()
        })
        .collect()
}
