//! Radiance picture (`.hdr`) codec on byte slices.
//!
//! Reads flat, old-style run-length and new-style (per component) run-length
//! scanlines with a `-Y h +X w` resolution line. Writes new-style RLE when the
//! width allows it and flat scanlines otherwise.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::image::Image;

/// Largest accepted width or height.
pub const MAX_RGBE_DIM: usize = 1 << 15;
const MAX_PIXELS: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("not a Radiance picture (byte {offset}): expected #?RADIANCE or #?RGBE")]
    BadMagic { offset: usize },
    #[error("malformed header at byte {offset}: {msg}")]
    Header { offset: usize, msg: String },
    #[error("image {width}x{height} exceeds the size limit")]
    TooLarge { width: usize, height: usize },
    #[error("scanline {row} truncated at byte {offset}")]
    Truncated { row: usize, offset: usize },
    #[error("invalid run-length data in scanline {row} at byte {offset}")]
    Rle { row: usize, offset: usize },
    #[error("RGBE images need 3 channels, got {0}")]
    Channels(usize),
}

/// Decodes one RGBE quadruple: `(byte + 0.5) / 256 * 2^(e - 128)`, black for `e = 0`.
pub fn rgbe_to_rgb(q: [u8; 4]) -> [f32; 3] {
    if q[3] == 0 {
        return [0.0; 3];
    }
    let f = libm::ldexp(1.0, q[3] as i32 - 136);
    [
        ((q[0] as f64 + 0.5) * f) as f32,
        ((q[1] as f64 + 0.5) * f) as f32,
        ((q[2] as f64 + 0.5) * f) as f32,
    ]
}

/// Shared-exponent encoding of a linear RGB triple (negatives clamp to 0).
pub fn rgb_to_rgbe(rgb: [f32; 3]) -> [u8; 4] {
    let [r, g, b] = rgb.map(|v| if v > 0.0 { v as f64 } else { 0.0 });
    let v = r.max(g).max(b);
    if v < 1e-32 {
        return [0; 4];
    }
    let (m, e) = libm::frexp(v);
    if e + 128 < 1 {
        return [0; 4];
    }
    if e + 128 > 255 {
        return [255, 255, 255, 255];
    }
    let scale = m * 256.0 / v;
    let q = |c: f64| libm::floor(c * scale).clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b), (e + 128) as u8]
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn line(&mut self) -> Option<&'a [u8]> {
        if self.pos >= self.bytes.len() {
            return None;
        }
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len());
        self.pos += (end + 1).min(rest.len());
        Some(&rest[..end])
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn byte(&mut self) -> Option<u8> {
        let b = *self.bytes.get(self.pos)?;
        self.pos += 1;
        Some(b)
    }
}

fn parse_resolution(line: &[u8], offset: usize) -> Result<(usize, usize), CodecError> {
    let header = |msg: &str| CodecError::Header {
        offset,
        msg: msg.into(),
    };
    let text = core::str::from_utf8(line).map_err(|_| header("resolution line is not ASCII"))?;
    let parts: Vec<&str> = text.split_ascii_whitespace().collect();
    let [ya, h, xa, w] = parts[..] else {
        return Err(header("expected '-Y <height> +X <width>'"));
    };
    if ya != "-Y" || xa != "+X" {
        return Err(header("only the standard -Y/+X orientation is supported"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| header("bad image dimension"));
    let (h, w) = (parse(h)?, parse(w)?);
    if h == 0 || w == 0 {
        return Err(header("zero image dimension"));
    }
    if h > MAX_RGBE_DIM || w > MAX_RGBE_DIM || h * w > MAX_PIXELS {
        return Err(CodecError::TooLarge { width: w, height: h });
    }
    Ok((h, w))
}

fn read_scanline(r: &mut Reader<'_>, row: usize, width: usize, out: &mut [[u8; 4]]) -> Result<(), CodecError> {
    let truncated = |r: &Reader<'_>| CodecError::Truncated { row, offset: r.pos };
    let start = r.pos;
    let first: [u8; 4] = r.take(4).ok_or_else(|| truncated(r))?.try_into().expect("four bytes");

    let new_rle = (8..=0x7fff).contains(&width) && first[0] == 2 && first[1] == 2 && first[2] & 0x80 == 0;
    if new_rle {
        let declared = ((first[2] as usize) << 8) | first[3] as usize;
        if declared != width {
            return Err(CodecError::Rle { row, offset: start });
        }
        for comp in 0..4 {
            let mut x = 0;
            while x < width {
                let at = r.pos;
                let count = r.byte().ok_or_else(|| truncated(r))? as usize;
                if count > 128 {
                    let run = count - 128;
                    let v = r.byte().ok_or_else(|| truncated(r))?;
                    if x + run > width {
                        return Err(CodecError::Rle { row, offset: at });
                    }
                    for px in &mut out[x..x + run] {
                        px[comp] = v;
                    }
                    x += run;
                } else {
                    if count == 0 || x + count > width {
                        return Err(CodecError::Rle { row, offset: at });
                    }
                    let lit = r.take(count).ok_or_else(|| truncated(r))?;
                    for (px, &v) in out[x..x + count].iter_mut().zip(lit) {
                        px[comp] = v;
                    }
                    x += count;
                }
            }
        }
        return Ok(());
    }

    // flat pixels, possibly with old-style (1, 1, 1, n) repeat markers
    let mut x = 0;
    let mut shift = 0;
    let mut pending = Some(first);
    while x < width {
        let at = r.pos;
        let px: [u8; 4] = match pending.take() {
            Some(p) => p,
            None => r.take(4).ok_or_else(|| truncated(r))?.try_into().expect("four bytes"),
        };
        if px[0] == 1 && px[1] == 1 && px[2] == 1 {
            let run = (px[3] as usize) << shift;
            if x == 0 || x + run > width {
                return Err(CodecError::Rle { row, offset: at });
            }
            let prev = out[x - 1];
            for p in &mut out[x..x + run] {
                *p = prev;
            }
            x += run;
            shift += 8;
        } else {
            out[x] = px;
            x += 1;
            shift = 0;
        }
    }
    Ok(())
}

/// Decodes a Radiance picture into a 3-channel linear image.
pub fn decode_rgbe(bytes: &[u8]) -> Result<Image, CodecError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.line().ok_or(CodecError::BadMagic { offset: 0 })?;
    if !(magic.starts_with(b"#?RADIANCE") || magic.starts_with(b"#?RGBE")) {
        return Err(CodecError::BadMagic { offset: 0 });
    }
    loop {
        let offset = r.pos;
        let line = r.line().ok_or_else(|| CodecError::Header {
            offset,
            msg: "header is not terminated by an empty line".into(),
        })?;
        if line.is_empty() {
            break;
        }
        if let Some(fmt) = line.strip_prefix(b"FORMAT=") {
            if fmt.trim_ascii() != b"32-bit_rle_rgbe" {
                return Err(CodecError::Header {
                    offset,
                    msg: format!("unsupported pixel format {:?}", String::from_utf8_lossy(fmt)),
                });
            }
        }
    }
    let offset = r.pos;
    let res = r.line().ok_or(CodecError::Header {
        offset,
        msg: "missing resolution line".into(),
    })?;
    let (height, width) = parse_resolution(res, offset)?;

    let mut data = alloc::vec![0.0f32; 3 * height * width];
    let plane = height * width;
    let mut line = alloc::vec![[0u8; 4]; width];
    for y in 0..height {
        read_scanline(&mut r, y, width, &mut line)?;
        for (x, q) in line.iter().enumerate() {
            let [cr, cg, cb] = rgbe_to_rgb(*q);
            let i = y * width + x;
            data[i] = cr;
            data[plane + i] = cg;
            data[2 * plane + i] = cb;
        }
    }
    Ok(Image::new(3, height, width, data).expect("sized buffer"))
}

fn rle_component(out: &mut Vec<u8>, data: &[u8]) {
    const MIN_RUN: usize = 4;
    let run_at = |i: usize| {
        let v = data[i];
        data[i..].iter().take(127).take_while(|&&b| b == v).count()
    };
    let mut i = 0;
    while i < data.len() {
        let run = run_at(i);
        if run >= MIN_RUN {
            out.push(128 + run as u8);
            out.push(data[i]);
            i += run;
            continue;
        }
        let start = i;
        while i < data.len() && i - start < 128 && run_at(i) < MIN_RUN {
            i += 1;
        }
        out.push((i - start) as u8);
        out.extend_from_slice(&data[start..i]);
    }
}

/// Encodes a 3-channel linear image as a Radiance picture.
pub fn encode_rgbe(image: &Image) -> Result<Vec<u8>, CodecError> {
    let (c, h, w) = image.dims();
    if c != 3 {
        return Err(CodecError::Channels(c));
    }
    let mut out = Vec::with_capacity(64 + 4 * h * w);
    out.extend_from_slice(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n");
    out.extend_from_slice(format!("-Y {h} +X {w}\n").as_bytes());
    let rle = (8..=0x7fff).contains(&w);
    let mut comps = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for y in 0..h {
        for comp in &mut comps {
            comp.clear();
        }
        for x in 0..w {
            let q = rgb_to_rgbe([image.get(0, y, x), image.get(1, y, x), image.get(2, y, x)]);
            if rle {
                for (k, comp) in comps.iter_mut().enumerate() {
                    comp.push(q[k]);
                }
            } else {
                out.extend_from_slice(&q);
            }
        }
        if rle {
            out.extend_from_slice(&[2, 2, (w >> 8) as u8, (w & 0xff) as u8]);
            for comp in &comps {
                rle_component(&mut out, comp);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadruple_decoding() {
        let v = rgbe_to_rgb([128, 128, 128, 129]);
        assert_eq!(v, [128.5 / 256.0 * 2.0; 3]);
        assert!((v[0] - 1.004).abs() < 1e-3);
        assert_eq!(rgbe_to_rgb([200, 10, 3, 0]), [0.0; 3]);
    }

    #[test]
    fn encodes_black_as_zero_exponent() {
        assert_eq!(rgb_to_rgbe([0.0, 0.0, 0.0]), [0; 4]);
        assert_eq!(rgb_to_rgbe([-1.0, 0.0, 0.0]), [0; 4]);
    }

    #[test]
    fn flat_and_rle_roundtrip() {
        for w in [5usize, 37] {
            let im = Image::from_fn(3, 3, w, |c, y, x| (1 + c + y * 7 + (x / 4)) as f32 * 0.37).unwrap();
            let bytes = encode_rgbe(&im).unwrap();
            let back = decode_rgbe(&bytes).unwrap();
            assert_eq!(back.dims(), im.dims());
            for (a, b) in im.data().iter().zip(back.data()) {
                assert!((a - b).abs() / a.abs().max(1e-6) < 0.01);
            }
        }
    }

    #[test]
    fn old_style_repeat_markers() {
        let mut bytes = b"#?RADIANCE\n\n-Y 1 +X 4\n".to_vec();
        bytes.extend_from_slice(&[128, 64, 32, 129, 1, 1, 1, 3]);
        let im = decode_rgbe(&bytes).unwrap();
        for x in 0..4 {
            assert_eq!(im.get(0, 0, x), 128.5 / 128.0);
        }
    }

    #[test]
    fn header_errors() {
        assert!(matches!(decode_rgbe(b"P6\n"), Err(CodecError::BadMagic { .. })));
        assert!(matches!(decode_rgbe(b""), Err(CodecError::BadMagic { .. })));
        assert!(matches!(
            decode_rgbe(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n"),
            Err(CodecError::Header { .. })
        ));
        assert!(matches!(
            decode_rgbe(b"#?RADIANCE\nFORMAT=32-bit_rle_xyze\n\n-Y 1 +X 1\n"),
            Err(CodecError::Header { .. })
        ));
        assert!(matches!(
            decode_rgbe(b"#?RADIANCE\n\n+Y 1 +X 1\n"),
            Err(CodecError::Header { .. })
        ));
        assert!(matches!(
            decode_rgbe(b"#?RADIANCE\n\n-Y 100000 +X 100000\n"),
            Err(CodecError::TooLarge { .. })
        ));
        assert!(matches!(
            decode_rgbe(b"#?RADIANCE\n\n-Y 2 +X 2\n\x01\x02\x03\x81"),
            Err(CodecError::Truncated { row: 0, .. })
        ));
    }
}
