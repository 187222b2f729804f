//! PNG and binary PPM (P6) reading and writing.
//!
//! Decoding is lossless for 8-bit sources; encoding quantizes each channel
//! to `round(255 · v)`.

use std::io::{self, Read};
use std::path::Path;

use fsr_core::Image;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Ppm,
}

impl ImageFormat {
    pub fn sniff(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(b"\x89PNG") {
            Some(ImageFormat::Png)
        } else if bytes.starts_with(b"P6") {
            Some(ImageFormat::Ppm)
        } else {
            None
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "png" => Some(ImageFormat::Png),
            "ppm" => Some(ImageFormat::Ppm),
            _ => None,
        }
    }
}

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    match ImageFormat::sniff(bytes) {
        Some(ImageFormat::Png) => decode_png(bytes),
        Some(ImageFormat::Ppm) => decode_ppm(bytes),
        None => Err(Error::Malformed {
            format: "image",
            offset: 0,
            msg: "neither a PNG nor a binary PPM signature".into(),
        }),
    }
}

pub fn encode_image(img: &Image, format: ImageFormat) -> Result<Vec<u8>> {
    match format {
        ImageFormat::Png => encode_png(img),
        ImageFormat::Ppm => Ok(encode_ppm(img)),
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

/// Writes PNG or PPM, chosen by the file extension.
pub fn write_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let format = ImageFormat::from_path(path)
        .ok_or_else(|| Error::Unsupported(format!("{}: expected a .png or .ppm extension", path.display())))?;
    let bytes = encode_image(img, format)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn quantize(img: &Image) -> Vec<u8> {
    img.pixels().iter().map(|v| (v * 255.0).round() as u8).collect()
}

fn from_bytes(height: usize, width: usize, rgb: &[u8], max: f64) -> Result<Image> {
    Ok(Image::new(
        height,
        width,
        rgb.iter().map(|&b| b as f64 / max).collect(),
    )?)
}

/// Tracks how much of the input the decoder has consumed.
struct Counting<'a> {
    inner: &'a [u8],
    pos: u64,
}

impl Read for Counting<'_> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.pos += n as u64;
        Ok(n)
    }
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut src = Counting { inner: bytes, pos: 0 };
    let malformed = |pos: u64, e: png::DecodingError| Error::Malformed {
        format: "PNG",
        offset: pos,
        msg: e.to_string(),
    };
    let mut decoder = png::Decoder::new(&mut src);
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let result = decoder.read_info().and_then(|mut reader| {
        let mut buf = vec![0; reader.output_buffer_size()];
        reader.next_frame(&mut buf).map(|info| (info, buf))
    });
    let (info, buf) = result.map_err(|e| malformed(src.pos, e))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let data = &buf[..info.buffer_size()];
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => data.to_vec(),
        png::ColorType::Rgba => data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => data.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => data.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err(Error::Unsupported("palette PNG was not expanded".into())),
    };
    from_bytes(h, w, &rgb, 255.0)
}

fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let to_err = |e: png::EncodingError| Error::Unsupported(e.to_string());
        let mut writer = enc.write_header().map_err(to_err)?;
        writer.write_image_data(&quantize(img)).map_err(to_err)?;
        writer.finish().map_err(to_err)?;
    }
    Ok(out)
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(quantize(img));
    out
}

struct PpmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PpmCursor<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Malformed {
            format: "PPM",
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    /// Skips whitespace and `#` comments.
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse().map_err(|_| Error::Malformed {
            format: "PPM",
            offset: start as u64,
            msg: format!("{what} out of range"),
        })
    }
}

fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut c = PpmCursor { bytes, pos: 0 };
    if !bytes.starts_with(b"P6") {
        return Err(c.err("missing P6 signature"));
    }
    c.pos = 2;
    let width = c.number("width")?;
    let height = c.number("height")?;
    let max = c.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(c.err("zero image dimension"));
    }
    if max == 0 || max > 65535 {
        return Err(c.err("maxval must be in 1..=65535"));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(c.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(c.err("expected whitespace after maxval"));
    }
    c.pos += 1;
    let per = if max < 256 { 1 } else { 2 };
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3 * per))
        .ok_or_else(|| c.err("image dimensions overflow"))?;
    let raster = &bytes[c.pos..];
    if raster.len() < need {
        c.pos = bytes.len();
        return Err(c.err(format!("raster truncated: need {need} bytes, have {}", raster.len())));
    }
    let values: Vec<f64> = if per == 1 {
        raster[..need].iter().map(|&b| b as f64 / max as f64).collect()
    } else {
        raster[..need]
            .chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as f64 / max as f64)
            .collect()
    };
    if let Some((i, _)) = values.iter().enumerate().find(|(_, &v)| v > 1.0) {
        c.pos += i * per;
        return Err(c.err("sample exceeds maxval"));
    }
    Ok(Image::new(height, width, values)?)
}
