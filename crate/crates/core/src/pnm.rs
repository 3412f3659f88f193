//! Netpbm codecs: P6 color images, P5 8/16-bit gray maps, P4 bit masks.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, PixelMask};

/// Decoded gray map: dimensions, maxval and samples in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayMap {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    if img.channels() != 3 {
        return Err(Error::Input(format!(
            "PPM needs 3 channels, image has {}",
            img.channels()
        )));
    }
    let n = img.pixels();
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.reserve(3 * n);
    let d = img.data();
    for p in 0..n {
        for c in 0..3 {
            out.push((d[c * n + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut r = Reader::new(bytes);
    r.magic("P6")?;
    let width = r.number()?;
    let height = r.number()?;
    let maxval = r.number()?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    let body = r.body(width * height * 3)?;
    let n = width * height;
    let mut data = vec![0.0; 3 * n];
    for p in 0..n {
        for c in 0..3 {
            data[c * n + p] = body[3 * p + c] as f64 / 255.0;
        }
    }
    Image::new(3, height, width, data).map_err(|e| e.to_string())
}

pub fn encode_pgm(map: &GrayMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", map.width, map.height, map.maxval).into_bytes();
    for &s in &map.samples {
        if map.maxval > 255 {
            out.extend_from_slice(&s.to_be_bytes());
        } else {
            out.push(s as u8);
        }
    }
    out
}

pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<GrayMap, String> {
    let mut r = Reader::new(bytes);
    r.magic("P5")?;
    let width = r.number()?;
    let height = r.number()?;
    let maxval = r.number()?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("invalid maxval {maxval}"));
    }
    let wide = maxval > 255;
    let body = r.body(width * height * if wide { 2 } else { 1 })?;
    let samples = if wide {
        body.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
    } else {
        body.iter().map(|&b| b as u16).collect()
    };
    Ok(GrayMap {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

/// P4 bitmap; set bits (black in netpbm convention) mark mask pixels.
pub fn encode_pbm(mask: &PixelMask) -> Vec<u8> {
    let (w, h) = (mask.width(), mask.height());
    let mut out = format!("P4\n{w} {h}\n").into_bytes();
    let row_bytes = w.div_ceil(8);
    for y in 0..h {
        let mut row = vec![0u8; row_bytes];
        for x in 0..w {
            if mask.get(y * w + x) {
                row[x / 8] |= 0x80 >> (x % 8);
            }
        }
        out.extend_from_slice(&row);
    }
    out
}

pub fn decode_pbm(bytes: &[u8]) -> std::result::Result<PixelMask, String> {
    let mut r = Reader::new(bytes);
    r.magic("P4")?;
    let width = r.number()?;
    let height = r.number()?;
    let row_bytes = width.div_ceil(8);
    let body = r.body(row_bytes * height)?;
    let mut bits = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            bits.push(body[y * row_bytes + x / 8] & (0x80 >> (x % 8)) != 0);
        }
    }
    PixelMask::from_bits(height, width, bits).map_err(|e| e.to_string())
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    write(path, &encode_ppm(img)?)
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    decode_ppm(&read(path)?).map_err(|e| Error::format(path, e))
}

pub fn write_pgm(path: &Path, map: &GrayMap) -> Result<()> {
    write(path, &encode_pgm(map))
}

pub fn read_pgm(path: &Path) -> Result<GrayMap> {
    decode_pgm(&read(path)?).map_err(|e| Error::format(path, e))
}

pub fn write_pbm(path: &Path, mask: &PixelMask) -> Result<()> {
    write(path, &encode_pbm(mask))
}

pub fn read_pbm(path: &Path) -> Result<PixelMask> {
    decode_pbm(&read(path)?).map_err(|e| Error::format(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn magic(&mut self, want: &str) -> std::result::Result<(), String> {
        if self.bytes.len() < 2 || &self.bytes[..2] != want.as_bytes() {
            return Err(format!("expected {want} header"));
        }
        self.pos = 2;
        Ok(())
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> std::result::Result<usize, String> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| "malformed header number".to_string())
    }

    /// Consumes the single whitespace byte after the header, then `len` bytes.
    fn body(&mut self, len: usize) -> std::result::Result<&'a [u8], String> {
        match self.bytes.get(self.pos) {
            Some(c) if c.is_ascii_whitespace() => self.pos += 1,
            _ => return Err("missing whitespace after header".into()),
        }
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(format!("truncated raster: need {len} bytes"));
        }
        Ok(&self.bytes[self.pos..end])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn ppm_round_trips_8bit_levels(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
            let mut x = seed;
            let data = (0..3 * w * h).map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((x >> 56) as f64) / 255.0
            }).collect();
            let img = Image::new(3, h, w, data).unwrap();
            prop_assert_eq!(decode_ppm(&encode_ppm(&img).unwrap()).unwrap(), img);
        }

        #[test]
        fn pbm_round_trips(bits in proptest::collection::vec(any::<bool>(), 1..80), w in 1usize..12) {
            let h = bits.len() / w;
            prop_assume!(h > 0);
            let mask = PixelMask::from_bits(h, w, bits[..h * w].to_vec()).unwrap();
            prop_assert_eq!(decode_pbm(&encode_pbm(&mask)).unwrap(), mask);
        }
    }

    #[test]
    fn pgm16_round_trips_and_skips_comments() {
        let map = GrayMap { width: 2, height: 1, maxval: 65535, samples: vec![1, 65000] };
        assert_eq!(decode_pgm(&encode_pgm(&map)).unwrap(), map);
        let bytes = b"P5\n# note\n2 1\n255\n\x01\x02";
        assert_eq!(decode_pgm(bytes).unwrap().samples, vec![1, 2]);
    }

    #[test]
    fn truncated_input_is_rejected() {
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00").is_err());
        assert!(decode_pbm(b"P5\n1 1\n").is_err());
    }
}
