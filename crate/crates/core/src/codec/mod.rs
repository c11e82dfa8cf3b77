//! Reference GOP codec: one I-frame followed by P-frames, 8×8 block DCT with
//! a linear quantizer, SKIP/UNIFORM/CODED block modes and Exp-Golomb
//! entropy coding. Every slice is byte-aligned behind a sync marker and can
//! be decoded on its own.

pub mod bits;
pub mod transform;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Frame, FrameRole};
use bits::{BitReader, BitWriter};
use transform::{fdct, idct, round_half_away, rgb_to_ycbcr, ycbcr_to_rgb, ZIGZAG};

pub use bits::{expgolomb_se, expgolomb_ue, parse_se, parse_ue};

pub const MAGIC: &[u8; 4] = b"RFDV";
pub const VERSION: u8 = 1;
pub const SYNC: [u8; 4] = [0x00, 0x00, 0x01, 0xAB];
pub const HEADER_LEN: usize = 13;
pub const DIR_ENTRY_LEN: usize = 8;
const BLOCK: u32 = 8;

const MODE_SKIP: u64 = 0;
const MODE_UNIFORM: u64 = 1;
const MODE_CODED: u64 = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecParams {
    pub quant_step: u32,
    pub gop_len: u32,
    /// Block rows per slice.
    pub slice_rows: u32,
}

impl Default for CodecParams {
    fn default() -> Self {
        CodecParams {
            quant_step: 8,
            gop_len: 10,
            slice_rows: 2,
        }
    }
}

impl CodecParams {
    pub fn validate(&self) -> Result<()> {
        if !(1..=255).contains(&self.quant_step) {
            return Err(Error::InvalidParameter(format!(
                "quant_step {} outside [1, 255]",
                self.quant_step
            )));
        }
        if !(1..=255).contains(&self.gop_len) {
            return Err(Error::InvalidParameter(format!("gop_len {} outside [1, 255]", self.gop_len)));
        }
        if !(1..=255).contains(&self.slice_rows) {
            return Err(Error::InvalidParameter(format!(
                "slice_rows {} outside [1, 255]",
                self.slice_rows
            )));
        }
        Ok(())
    }

    pub fn slice_height(&self) -> u32 {
        self.slice_rows * BLOCK
    }

    /// Number of slices in a frame of the given height.
    pub fn slices_per_frame(&self, height: u32) -> Result<u32> {
        let sh = self.slice_height();
        if height == 0 || height % sh != 0 {
            return Err(Error::InvalidParameter(format!(
                "slice height {sh} does not divide frame height {height}"
            )));
        }
        Ok(height / sh)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
    pub params_gop_len: u32,
    pub quant_step: u32,
    pub slice_rows: u32,
}

impl StreamHeader {
    pub fn params(&self) -> CodecParams {
        CodecParams {
            quant_step: self.quant_step,
            gop_len: self.params_gop_len,
            slice_rows: self.slice_rows,
        }
    }

    pub fn slices_per_frame(&self) -> u32 {
        self.height / (self.slice_rows * BLOCK)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SliceEntry {
    pub offset: u32,
    /// Payload length including the sync marker.
    pub len: u32,
}

/// A coded batch: the raw container bytes plus the parsed header and slice
/// directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitstream {
    pub header: StreamHeader,
    pub directory: Vec<SliceEntry>,
    bytes: Vec<u8>,
}

impl Bitstream {
    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn total_bytes(&self) -> usize {
        self.bytes.len()
    }

    /// Header plus slice directory.
    pub fn header_len(&self) -> usize {
        HEADER_LEN + DIR_ENTRY_LEN * self.directory.len()
    }

    pub fn frame_count(&self) -> u32 {
        self.header.frame_count
    }

    pub fn slices_per_frame(&self) -> u32 {
        self.header.slices_per_frame()
    }

    pub fn entry(&self, frame: u32, slice: u32) -> SliceEntry {
        self.directory[(frame * self.slices_per_frame() + slice) as usize]
    }

    /// The slice bytes, sync marker included, or `None` when the directory
    /// points outside the stream.
    pub fn slice_payload(&self, frame: u32, slice: u32) -> Option<&[u8]> {
        let e = self.entry(frame, slice);
        let start = e.offset as usize;
        self.bytes.get(start..start.checked_add(e.len as usize)?)
    }

    /// Mutable slice bytes, for fault injection.
    pub fn slice_payload_mut(&mut self, frame: u32, slice: u32) -> Option<&mut [u8]> {
        let e = self.entry(frame, slice);
        let start = e.offset as usize;
        let end = start.checked_add(e.len as usize)?;
        self.bytes.get_mut(start..end)
    }

    pub fn parse(bytes: Vec<u8>) -> Result<Bitstream> {
        let bad = |msg: &str| Error::CorruptHeader(msg.to_string());
        if bytes.len() < HEADER_LEN {
            return Err(bad("stream shorter than header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        if bytes[4] != VERSION {
            return Err(bad(&format!("unsupported version {}", bytes[4])));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]) as u32;
        let header = StreamHeader {
            width: u16_at(5),
            height: u16_at(7),
            frame_count: bytes[9] as u32,
            params_gop_len: bytes[10] as u32,
            quant_step: bytes[11] as u32,
            slice_rows: bytes[12] as u32,
        };
        if header.width == 0 || header.width % 16 != 0 || header.height == 0 || header.height % 16 != 0 {
            return Err(bad("dimensions not positive multiples of 16"));
        }
        let params = header.params();
        params.validate().map_err(|e| bad(&e.to_string()))?;
        params
            .slices_per_frame(header.height)
            .map_err(|e| bad(&e.to_string()))?;
        if header.frame_count == 0 || header.frame_count > header.params_gop_len {
            return Err(bad("frame count outside [1, gop_len]"));
        }
        let n = (header.frame_count * header.slices_per_frame()) as usize;
        let dir_end = HEADER_LEN + n * DIR_ENTRY_LEN;
        if bytes.len() < dir_end {
            return Err(bad("truncated slice directory"));
        }
        let u32_at = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
        let directory = (0..n)
            .map(|i| {
                let p = HEADER_LEN + i * DIR_ENTRY_LEN;
                SliceEntry {
                    offset: u32_at(p),
                    len: u32_at(p + 4),
                }
            })
            .collect();
        Ok(Bitstream {
            header,
            directory,
            bytes,
        })
    }
}

/// Full-resolution YCbCr planes of one frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct YccFrame {
    pub width: u32,
    pub height: u32,
    pub planes: [Vec<u8>; 3],
}

impl YccFrame {
    pub fn from_frame(frame: &Frame) -> YccFrame {
        let n = frame.pixel_count();
        let mut planes = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
        for px in frame.pixels().chunks_exact(3) {
            let ycc = rgb_to_ycbcr([px[0], px[1], px[2]]);
            for c in 0..3 {
                planes[c].push(ycc[c]);
            }
        }
        YccFrame {
            width: frame.width(),
            height: frame.height(),
            planes,
        }
    }

    pub fn filled(width: u32, height: u32, ycc: [u8; 3]) -> YccFrame {
        let n = width as usize * height as usize;
        YccFrame {
            width,
            height,
            planes: ycc.map(|v| vec![v; n]),
        }
    }

    pub fn to_frame(&self, role: FrameRole) -> Frame {
        let n = self.width as usize * self.height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for i in 0..n {
            pixels.extend_from_slice(&ycbcr_to_rgb([self.planes[0][i], self.planes[1][i], self.planes[2][i]]));
        }
        Frame::new(self.width, self.height, pixels, role).expect("codec frames have valid dimensions")
    }

    fn block(&self, plane: usize, bx: u32, by: u32) -> [u8; 64] {
        let mut out = [0u8; 64];
        let w = self.width as usize;
        for r in 0..8 {
            let start = (by as usize * 8 + r) * w + bx as usize * 8;
            out[r * 8..r * 8 + 8].copy_from_slice(&self.planes[plane][start..start + 8]);
        }
        out
    }

    fn put_block(&mut self, plane: usize, bx: u32, by: u32, blk: &[u8; 64]) {
        let w = self.width as usize;
        for r in 0..8 {
            let start = (by as usize * 8 + r) * w + bx as usize * 8;
            self.planes[plane][start..start + 8].copy_from_slice(&blk[r * 8..r * 8 + 8]);
        }
    }

    fn copy_rows_from(&mut self, other: &YccFrame, y0: u32, y1: u32) {
        let w = self.width as usize;
        let range = y0 as usize * w..y1 as usize * w;
        for c in 0..3 {
            self.planes[c][range.clone()].copy_from_slice(&other.planes[c][range.clone()]);
        }
    }

    fn fill_rows(&mut self, y0: u32, y1: u32, ycc: [u8; 3]) {
        let w = self.width as usize;
        for c in 0..3 {
            self.planes[c][y0 as usize * w..y1 as usize * w].fill(ycc[c]);
        }
    }
}

fn reconstruct(levels: &[i32; 64], q: u32, base: &[f64; 64]) -> [u8; 64] {
    let mut coef = [0.0; 64];
    for i in 0..64 {
        coef[i] = levels[i] as f64 * q as f64;
    }
    let spatial = idct(&coef);
    let mut out = [0u8; 64];
    for i in 0..64 {
        out[i] = round_half_away(spatial[i] + base[i]).clamp(0.0, 255.0) as u8;
    }
    out
}

fn base_of(reference: Option<&[u8; 64]>) -> [f64; 64] {
    match reference {
        Some(r) => r.map(f64::from),
        None => [128.0; 64],
    }
}

/// Codes one block and returns its reconstruction. A P-frame block whose
/// source samples did not change since the previous frame is skipped.
fn encode_block(
    w: &mut BitWriter,
    cur: &[u8; 64],
    reference: Option<(&[u8; 64], &[u8; 64])>,
    q: u32,
) -> [u8; 64] {
    if let Some((r, prev)) = reference {
        if cur == r || cur == prev {
            w.put(MODE_SKIP, 2);
            return *r;
        }
    }
    if cur.iter().all(|&v| v == cur[0]) {
        w.put(MODE_UNIFORM, 2);
        w.put(cur[0] as u64, 8);
        return *cur;
    }
    let reference = reference.map(|(r, _)| r);
    let base = base_of(reference);
    let mut residual = [0.0; 64];
    for i in 0..64 {
        residual[i] = cur[i] as f64 - base[i];
    }
    let coef = fdct(&residual);
    let mut levels = [0i32; 64];
    for i in 0..64 {
        levels[i] = round_half_away(coef[i] / q as f64) as i32;
    }
    if let Some(r) = reference {
        if levels.iter().all(|&l| l == 0) {
            w.put(MODE_SKIP, 2);
            return *r;
        }
    }
    w.put(MODE_CODED, 2);
    let count = levels.iter().filter(|&&l| l != 0).count();
    w.put_ue(count as u32);
    let mut run = 0u32;
    for &zi in ZIGZAG.iter() {
        let l = levels[zi];
        if l == 0 {
            run += 1;
        } else {
            w.put_ue(run);
            w.put_se(l);
            run = 0;
        }
    }
    reconstruct(&levels, q, &base)
}

fn decode_block(r: &mut BitReader, reference: Option<&[u8; 64]>, q: u32) -> Result<[u8; 64]> {
    match r.get(2)? {
        MODE_SKIP => reference
            .copied()
            .ok_or_else(|| Error::Malformed("SKIP block in intra frame".into())),
        MODE_UNIFORM => Ok([r.get(8)? as u8; 64]),
        MODE_CODED => {
            let count = r.ue()? as usize;
            if count > 64 {
                return Err(Error::Malformed(format!("{count} coefficients in a block")));
            }
            let mut levels = [0i32; 64];
            let mut pos = 0usize;
            for _ in 0..count {
                pos += r.ue()? as usize;
                if pos >= 64 {
                    return Err(Error::Malformed("coefficient run past block end".into()));
                }
                let l = r.se()?;
                if l == 0 {
                    return Err(Error::Malformed("zero level coded".into()));
                }
                levels[ZIGZAG[pos]] = l;
                pos += 1;
            }
            Ok(reconstruct(&levels, q, &base_of(reference)))
        }
        m => Err(Error::Malformed(format!("reserved block mode {m}"))),
    }
}

fn slice_blocks(width: u32, slice: u32, slice_rows: u32) -> impl Iterator<Item = (u32, u32)> {
    let bw = width / BLOCK;
    (slice * slice_rows..(slice + 1) * slice_rows).flat_map(move |by| (0..bw).map(move |bx| (bx, by)))
}

fn encode_slice(
    cur: &YccFrame,
    reference: Option<(&YccFrame, &YccFrame)>,
    recon: &mut YccFrame,
    slice: u32,
    params: &CodecParams,
) -> Vec<u8> {
    let mut w = BitWriter::new();
    for plane in 0..3 {
        for (bx, by) in slice_blocks(cur.width, slice, params.slice_rows) {
            let blk = cur.block(plane, bx, by);
            let rblk = reference.map(|(r, p)| (r.block(plane, bx, by), p.block(plane, bx, by)));
            let rec = encode_block(&mut w, &blk, rblk.as_ref().map(|(r, p)| (r, p)), params.quant_step);
            recon.put_block(plane, bx, by, &rec);
        }
    }
    let mut out = SYNC.to_vec();
    out.extend(w.finish());
    out
}

fn decode_slice(
    payload: &[u8],
    reference: Option<&YccFrame>,
    out: &mut YccFrame,
    slice: u32,
    params: &CodecParams,
) -> Result<()> {
    if payload.len() < SYNC.len() || payload[..4] != SYNC {
        return Err(Error::Malformed("missing sync marker".into()));
    }
    let mut r = BitReader::new(&payload[4..]);
    let mut decoded = Vec::new();
    for plane in 0..3 {
        for (bx, by) in slice_blocks(out.width, slice, params.slice_rows) {
            let rblk = reference.map(|f| f.block(plane, bx, by));
            decoded.push((plane, bx, by, decode_block(&mut r, rblk.as_ref(), params.quant_step)?));
        }
    }
    if !r.at_padded_end() {
        return Err(Error::Malformed("trailing data in slice".into()));
    }
    for (plane, bx, by, blk) in decoded {
        out.put_block(plane, bx, by, &blk);
    }
    Ok(())
}

/// Codes a batch as one group of pictures.
pub fn encode_batch(frames: &[Frame], params: &CodecParams) -> Result<Bitstream> {
    params.validate()?;
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty batch".into()))?;
    if frames.len() > params.gop_len as usize {
        return Err(Error::InvalidParameter(format!(
            "batch of {} exceeds gop_len {}",
            frames.len(),
            params.gop_len
        )));
    }
    for f in &frames[1..] {
        first.ensure_same_dims(f)?;
    }
    let (w, h) = first.dims();
    if w > u16::MAX as u32 || h > u16::MAX as u32 {
        return Err(Error::InvalidFrame(format!("{w}x{h} too large for the container")));
    }
    let slices = params.slices_per_frame(h)?;

    let mut payloads = Vec::with_capacity(frames.len() * slices as usize);
    let mut reference: Option<(YccFrame, YccFrame)> = None;
    for f in frames {
        let cur = YccFrame::from_frame(f);
        let mut recon = YccFrame::filled(w, h, [0, 128, 128]);
        for s in 0..slices {
            let r = reference.as_ref().map(|(r, p)| (r, p));
            payloads.push(encode_slice(&cur, r, &mut recon, s, params));
        }
        reference = Some((recon, cur));
    }

    let dir_len = payloads.len() * DIR_ENTRY_LEN;
    let mut bytes = Vec::with_capacity(HEADER_LEN + dir_len + payloads.iter().map(Vec::len).sum::<usize>());
    bytes.extend_from_slice(MAGIC);
    bytes.push(VERSION);
    bytes.extend_from_slice(&(w as u16).to_le_bytes());
    bytes.extend_from_slice(&(h as u16).to_le_bytes());
    bytes.push(frames.len() as u8);
    bytes.push(params.gop_len as u8);
    bytes.push(params.quant_step as u8);
    bytes.push(params.slice_rows as u8);
    let mut offset = HEADER_LEN + dir_len;
    let mut directory = Vec::with_capacity(payloads.len());
    for p in &payloads {
        let e = SliceEntry {
            offset: u32::try_from(offset).map_err(|_| Error::OutOfRange("stream over 4 GiB".into()))?,
            len: p.len() as u32,
        };
        bytes.extend_from_slice(&e.offset.to_le_bytes());
        bytes.extend_from_slice(&e.len.to_le_bytes());
        directory.push(e);
        offset += p.len();
    }
    for p in payloads {
        bytes.extend(p);
    }
    Ok(Bitstream {
        header: StreamHeader {
            width: w,
            height: h,
            frame_count: frames.len() as u32,
            params_gop_len: params.gop_len,
            quant_step: params.quant_step,
            slice_rows: params.slice_rows,
        },
        directory,
        bytes,
    })
}

/// What a decoder puts in place of a slice it could not decode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Concealment {
    /// Co-located samples of the previous reconstruction; mid-gray when the
    /// intra frame itself is missing.
    PreviousFrame,
    Black,
}

/// Per-frame, per-slice arrival flags.
pub type LossMap = Vec<Vec<bool>>;

pub fn all_arrived(frames: u32, slices: u32) -> LossMap {
    vec![vec![true; slices as usize]; frames as usize]
}

#[derive(Clone, Debug)]
pub struct DecodedBatch {
    pub frames: Vec<Frame>,
    pub planes: Vec<YccFrame>,
    /// Slice decoded from data that arrived, on a reference chain that was
    /// itself intact back to the intra frame.
    pub intact: LossMap,
}

/// Decodes the slices marked as arrived and conceals the rest. Only a
/// malformed header is a hard error; a slice that fails to parse counts as
/// lost.
pub fn decode_batch(bits: &Bitstream, loss_map: &[Vec<bool>], conceal: Concealment) -> Result<DecodedBatch> {
    let hdr = bits.header;
    let params = hdr.params();
    let slices = hdr.slices_per_frame();
    if loss_map.len() != hdr.frame_count as usize || loss_map.iter().any(|r| r.len() != slices as usize) {
        return Err(Error::InvalidParameter(format!(
            "loss map must be {} frames × {} slices",
            hdr.frame_count, slices
        )));
    }
    let sh = params.slice_height();
    let (w, h) = (hdr.width, hdr.height);
    let mut frames = Vec::with_capacity(hdr.frame_count as usize);
    let mut planes: Vec<YccFrame> = Vec::with_capacity(hdr.frame_count as usize);
    let mut intact: LossMap = Vec::with_capacity(hdr.frame_count as usize);
    for f in 0..hdr.frame_count {
        let reference = planes.last();
        let mut out = YccFrame::filled(w, h, [0, 128, 128]);
        let mut ok_row = Vec::with_capacity(slices as usize);
        for s in 0..slices {
            let arrived = loss_map[f as usize][s as usize]
                && bits
                    .slice_payload(f, s)
                    .is_some_and(|p| decode_slice(p, reference, &mut out, s, &params).is_ok());
            let chain = f == 0 || intact[f as usize - 1][s as usize];
            ok_row.push(arrived && chain);
            if !arrived {
                let (y0, y1) = (s * sh, (s + 1) * sh);
                match (conceal, reference) {
                    (Concealment::PreviousFrame, Some(r)) => out.copy_rows_from(r, y0, y1),
                    (Concealment::PreviousFrame, None) => out.fill_rows(y0, y1, [128, 128, 128]),
                    (Concealment::Black, _) => out.fill_rows(y0, y1, [0, 128, 128]),
                }
            }
        }
        let mut frame = out.to_frame(FrameRole::Delta);
        frame.frame_index = f;
        frames.push(frame);
        planes.push(out);
        intact.push(ok_row);
    }
    Ok(DecodedBatch {
        frames,
        planes,
        intact,
    })
}

/// Decodes a stream in which every slice arrived.
pub fn decode_all(bits: &Bitstream) -> Result<DecodedBatch> {
    let map = all_arrived(bits.frame_count(), bits.slices_per_frame());
    decode_batch(bits, &map, Concealment::PreviousFrame)
}
