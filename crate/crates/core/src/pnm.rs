//! Binary PPM (P6) and PGM (P5) interchange.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Frame, FrameRole, Mask, DIM_ALIGN};

pub fn write_ppm<W: Write>(mut w: W, frame: &Frame) -> Result<()> {
    write!(w, "P6\n{} {}\n255\n", frame.width(), frame.height())?;
    w.write_all(frame.pixels())?;
    Ok(())
}

pub fn save_ppm(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    let mut buf = Vec::with_capacity(frame.pixels().len() + 32);
    write_ppm(&mut buf, frame)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Writes the mask as an 8-bit (or 16-bit, for labels above 255) graymap
/// whose set pixels carry the label value.
pub fn write_pgm<W: Write>(mut w: W, mask: &Mask) -> Result<()> {
    let (width, height) = mask.dims();
    let label = mask.label();
    let wide = label > 255;
    let maxval = if wide { 65535 } else { 255 };
    write!(w, "P5\n{width} {height}\n{maxval}\n")?;
    let mut data = Vec::with_capacity(width as usize * height as usize * if wide { 2 } else { 1 });
    for y in 0..height {
        for x in 0..width {
            let v = if mask.get(x, y) { label } else { 0 };
            if wide {
                data.extend_from_slice(&v.to_be_bytes());
            } else {
                data.push(v as u8);
            }
        }
    }
    w.write_all(&data)?;
    Ok(())
}

pub fn save_pgm(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let mut buf = Vec::new();
    write_pgm(&mut buf, mask)?;
    fs::write(path, buf)?;
    Ok(())
}

struct Header {
    magic: [u8; 2],
    width: u32,
    height: u32,
    maxval: u32,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(Error::Pnm("truncated header".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Pnm("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = text
            .parse()
            .map_err(|_| Error::Pnm(format!("bad header field at byte {start}")))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Pnm("missing raster separator".into()));
    }
    Ok(Header {
        magic,
        width: fields[0],
        height: fields[1],
        maxval: fields[2],
        data_start: pos + 1,
    })
}

/// Raw RGB raster of any size.
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

pub fn read_ppm<R: Read>(mut r: R) -> Result<RgbImage> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let h = parse_header(&bytes)?;
    if &h.magic != b"P6" {
        return Err(Error::Pnm("not a binary PPM (P6)".into()));
    }
    if h.maxval != 255 {
        return Err(Error::Pnm(format!("unsupported maxval {}", h.maxval)));
    }
    let n = h.width as usize * h.height as usize * 3;
    let data = bytes
        .get(h.data_start..h.data_start + n)
        .ok_or_else(|| Error::Pnm("truncated raster".into()))?;
    Ok(RgbImage {
        width: h.width,
        height: h.height,
        pixels: data.to_vec(),
    })
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    read_ppm(fs::File::open(path)?)
}

/// Reads a graymap; nonzero pixels become the mask, the first nonzero value
/// its label.
pub fn read_pgm<R: Read>(mut r: R) -> Result<Mask> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let h = parse_header(&bytes)?;
    if &h.magic != b"P5" {
        return Err(Error::Pnm("not a binary PGM (P5)".into()));
    }
    let wide = match h.maxval {
        1..=255 => false,
        256..=65535 => true,
        _ => return Err(Error::Pnm(format!("unsupported maxval {}", h.maxval))),
    };
    let n = h.width as usize * h.height as usize;
    let bpp = if wide { 2 } else { 1 };
    let data = bytes
        .get(h.data_start..h.data_start + n * bpp)
        .ok_or_else(|| Error::Pnm("truncated raster".into()))?;
    let values: Vec<u16> = if wide {
        data.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        data.iter().map(|&v| v as u16).collect()
    };
    let label = values.iter().copied().find(|&v| v != 0).unwrap_or(1);
    let bits: Vec<bool> = values.iter().map(|&v| v != 0).collect();
    Mask::from_bools(h.width, h.height, label, &bits)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Mask> {
    read_pgm(fs::File::open(path)?)
}

/// Pads an arbitrary raster up to the next multiple of 16 in each dimension
/// by replicating the last column and row.
pub fn frame_from_image(img: &RgbImage, role: FrameRole) -> Result<Frame> {
    if img.width == 0 || img.height == 0 {
        return Err(Error::Pnm("empty image".into()));
    }
    let w = img.width.div_ceil(DIM_ALIGN) * DIM_ALIGN;
    let h = img.height.div_ceil(DIM_ALIGN) * DIM_ALIGN;
    if (w, h) == (img.width, img.height) {
        return Frame::new(w, h, img.pixels.clone(), role);
    }
    let mut pixels = Vec::with_capacity(w as usize * h as usize * 3);
    for y in 0..h {
        let sy = y.min(img.height - 1) as usize;
        for x in 0..w {
            let sx = x.min(img.width - 1) as usize;
            let i = (sy * img.width as usize + sx) * 3;
            pixels.extend_from_slice(&img.pixels[i..i + 3]);
        }
    }
    Frame::new(w, h, pixels, role)
}
