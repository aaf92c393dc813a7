//! Indirection schemata: QR pseudo-images for image content and
//! `#r2o`-tagged URLs for text content.

pub mod gf;
pub mod qr;
pub mod reader;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::locator::{ContentLocator, LocatorError, MediaClass};

pub use qr::EcLevel;

/// Fragment that marks a URL as a text indirection.
pub const TEXT_FRAGMENT: &str = "r2o";

/// Quiet zone width in modules.
pub const QUIET_ZONE: u32 = 4;

/// Default rendered edge length, quiet zone included.
pub const DEFAULT_TARGET_SIZE: u32 = 512;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("payload of {len} bytes exceeds the capacity of version {max_version} at level {ec:?} ({capacity} bytes)")]
    CapacityExceeded {
        len: usize,
        capacity: usize,
        max_version: u8,
        ec: EcLevel,
    },
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("locator already carries a fragment identifier")]
    FragmentConflict,
    #[error("no QR symbol found in image")]
    NotAQrSymbol,
    #[error("QR symbol could not be decoded: {0}")]
    DecodeFailure(String),
    #[error("target {target_width}x{target_height} is smaller than the {width}x{height} image")]
    TargetTooSmall {
        width: u32,
        height: u32,
        target_width: u32,
        target_height: u32,
    },
    #[error("invalid QR configuration: {0}")]
    InvalidConfig(String),
    #[error("PNG error: {0}")]
    Png(String),
}

impl From<LocatorError> for CodecError {
    fn from(e: LocatorError) -> Self {
        CodecError::InvalidPayload(e.to_string())
    }
}

/// What a schema carries: the off-site locator plus optional opaque metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndirectionPayload {
    pub locator: ContentLocator,
    pub media_class: MediaClass,
    /// Reserved key/value pairs; carried verbatim, no meaning attached.
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

impl IndirectionPayload {
    pub fn image(locator: ContentLocator) -> Self {
        Self {
            locator,
            media_class: MediaClass::Image,
            extra: BTreeMap::new(),
        }
    }

    /// The byte string stored in the symbol: the locator on the first line,
    /// then one `key=value` line per extra entry.
    pub fn to_bytes(&self) -> Result<Vec<u8>, CodecError> {
        let mut out = self.locator.as_str().to_owned();
        for (k, v) in &self.extra {
            if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
                return Err(CodecError::InvalidPayload(format!("bad extra entry {k:?}")));
            }
            out.push('\n');
            out.push_str(k);
            out.push('=');
            out.push_str(v);
        }
        Ok(out.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| CodecError::InvalidPayload("payload is not UTF-8".into()))?;
        let mut lines = text.split('\n');
        let locator = ContentLocator::parse(lines.next().unwrap_or_default())?;
        let mut extra = BTreeMap::new();
        for line in lines {
            let (k, v) = line
                .split_once('=')
                .filter(|(k, _)| !k.is_empty())
                .ok_or_else(|| CodecError::InvalidPayload(format!("bad extra line {line:?}")))?;
            extra.insert(k.to_owned(), v.to_owned());
        }
        Ok(Self {
            locator,
            media_class: MediaClass::Image,
            extra,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QrConfig {
    pub ec_level: EcLevel,
    pub min_version: u8,
    /// Pixels per module when no `target_size` is set.
    pub module_scale: u32,
    /// Output edge length; the symbol is scaled by the largest integer that fits
    /// and centered, leaving at least the quiet zone around it.
    pub target_size: Option<u32>,
}

impl Default for QrConfig {
    fn default() -> Self {
        Self {
            ec_level: EcLevel::M,
            min_version: 1,
            module_scale: 4,
            target_size: Some(DEFAULT_TARGET_SIZE),
        }
    }
}

impl QrConfig {
    pub fn validate(&self) -> Result<(), CodecError> {
        if !(1..=qr::MAX_ENCODE_VERSION).contains(&self.min_version) {
            return Err(CodecError::InvalidConfig(format!(
                "min_version {} outside 1..={}",
                self.min_version,
                qr::MAX_ENCODE_VERSION
            )));
        }
        if self.module_scale == 0 {
            return Err(CodecError::InvalidConfig("module_scale must be >= 1".into()));
        }
        Ok(())
    }
}

/// Pixel rectangle of the symbol proper (quiet zone excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymbolBounds {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// An 8-bit grayscale raster holding a rendered schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
    /// Narrowest quiet-zone margin, in modules.
    pub quiet_zone: u32,
    /// Where the symbol sits, when known (not recoverable from a PNG).
    pub symbol_bounds: Option<SymbolBounds>,
}

impl PseudoImage {
    pub fn pixel(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }

    /// Nearest-neighbour integer upscale.
    pub fn upscale(&self, k: u32) -> PseudoImage {
        assert!(k >= 1);
        let (w, h) = (self.width * k, self.height * k);
        let mut pixels = Vec::with_capacity((w * h) as usize);
        for y in 0..h {
            let row = ((y / k) * self.width) as usize;
            pixels.extend((0..w).map(|x| self.pixels[row + (x / k) as usize]));
        }
        PseudoImage {
            width: w,
            height: h,
            pixels,
            quiet_zone: self.quiet_zone,
            symbol_bounds: self.symbol_bounds.map(|b| SymbolBounds {
                x: b.x * k,
                y: b.y * k,
                width: b.width * k,
                height: b.height * k,
            }),
        }
    }

    /// Encodes as an 8-bit grayscale, non-interlaced PNG.
    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().expect("in-memory PNG header");
            writer
                .write_image_data(&self.pixels)
                .expect("in-memory PNG data");
        }
        out
    }

    /// Decodes a PNG, converting any color type to 8-bit gray.
    pub fn from_png(bytes: &[u8]) -> Result<PseudoImage, CodecError> {
        let mut decoder = png::Decoder::new(bytes);
        decoder.set_transformations(png::Transformations::normalize_to_color8());
        let mut reader = decoder.read_info().map_err(|e| CodecError::Png(e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| CodecError::Png(e.to_string()))?;
        buf.truncate(info.buffer_size());
        let (width, height) = (info.width, info.height);
        let channels = info.color_type.samples();
        let pixels: Vec<u8> = match info.color_type {
            png::ColorType::Grayscale => buf,
            png::ColorType::GrayscaleAlpha => buf
                .chunks_exact(2)
                .map(|p| blend_on_white(p[0], p[1]))
                .collect(),
            png::ColorType::Rgb | png::ColorType::Rgba => buf
                .chunks_exact(channels)
                .map(|p| {
                    let luma =
                        ((p[0] as u32 * 299 + p[1] as u32 * 587 + p[2] as u32 * 114) / 1000) as u8;
                    if channels == 4 {
                        blend_on_white(luma, p[3])
                    } else {
                        luma
                    }
                })
                .collect(),
            png::ColorType::Indexed => {
                return Err(CodecError::Png("palette not expanded".into()));
            }
        };
        Ok(PseudoImage {
            width,
            height,
            pixels,
            quiet_zone: 0,
            symbol_bounds: None,
        })
    }
}

fn blend_on_white(value: u8, alpha: u8) -> u8 {
    ((value as u32 * alpha as u32 + 255 * (255 - alpha as u32)) / 255) as u8
}

/// Encodes `payload` into a square QR pseudo-image.
pub fn encode_qr(payload: &IndirectionPayload, config: &QrConfig) -> Result<PseudoImage, CodecError> {
    config.validate()?;
    if payload.media_class != MediaClass::Image {
        return Err(CodecError::InvalidPayload(
            "QR schemata carry image-class payloads; use the text schema for text".into(),
        ));
    }
    let bytes = payload.to_bytes()?;
    let ec = config.ec_level;
    let version = qr::smallest_version(bytes.len(), ec, config.min_version, qr::MAX_ENCODE_VERSION)
        .ok_or(CodecError::CapacityExceeded {
            len: bytes.len(),
            capacity: qr::byte_capacity(qr::MAX_ENCODE_VERSION, ec),
            max_version: qr::MAX_ENCODE_VERSION,
            ec,
        })?;
    let matrix = qr::build(&bytes, version, ec, None);
    render(&matrix, config)
}

/// Encodes a raw locator string. Over-long input is reported as a capacity
/// problem before the locator itself is validated.
pub fn encode_locator_qr(locator: &str, config: &QrConfig) -> Result<PseudoImage, CodecError> {
    let capacity = qr::byte_capacity(qr::MAX_ENCODE_VERSION, config.ec_level);
    if locator.len() > capacity {
        return Err(CodecError::CapacityExceeded {
            len: locator.len(),
            capacity,
            max_version: qr::MAX_ENCODE_VERSION,
            ec: config.ec_level,
        });
    }
    let locator = ContentLocator::parse(locator)?;
    encode_qr(&IndirectionPayload::image(locator), config)
}

fn render(matrix: &qr::Matrix, config: &QrConfig) -> Result<PseudoImage, CodecError> {
    let modules = matrix.size as u32;
    let with_quiet = modules + 2 * QUIET_ZONE;
    let (side, scale) = match config.target_size {
        Some(target) => {
            let scale = target / with_quiet;
            if scale == 0 {
                return Err(CodecError::InvalidConfig(format!(
                    "target_size {target} cannot hold a {with_quiet}-module symbol"
                )));
            }
            (target, scale)
        }
        None => (with_quiet * config.module_scale, config.module_scale),
    };
    let symbol_px = modules * scale;
    let offset = (side - symbol_px) / 2;
    let mut pixels = vec![255u8; (side * side) as usize];
    for y in 0..matrix.size {
        for x in 0..matrix.size {
            if !matrix.get(x, y) {
                continue;
            }
            let px0 = offset + x as u32 * scale;
            let py0 = offset + y as u32 * scale;
            for py in py0..py0 + scale {
                let row = (py * side) as usize;
                pixels[row + px0 as usize..row + (px0 + scale) as usize].fill(0);
            }
        }
    }
    Ok(PseudoImage {
        width: side,
        height: side,
        pixels,
        quiet_zone: offset / scale,
        symbol_bounds: Some(SymbolBounds {
            x: offset,
            y: offset,
            width: symbol_px,
            height: symbol_px,
        }),
    })
}

/// Recovers the payload from a pseudo-image.
pub fn decode_qr(image: &PseudoImage) -> Result<IndirectionPayload, CodecError> {
    let bytes = reader::read(&image.pixels, image.width as usize, image.height as usize).map_err(
        |e| match e {
            reader::ReadError::NotASymbol => CodecError::NotAQrSymbol,
            reader::ReadError::Damaged(what) => CodecError::DecodeFailure(what.into()),
        },
    )?;
    IndirectionPayload::from_bytes(&bytes)
}

/// Centers `image` on a white field of exactly `target_width`×`target_height`.
pub fn pad_with_border(
    image: &PseudoImage,
    target_width: u32,
    target_height: u32,
) -> Result<PseudoImage, CodecError> {
    if target_width < image.width || target_height < image.height {
        return Err(CodecError::TargetTooSmall {
            width: image.width,
            height: image.height,
            target_width,
            target_height,
        });
    }
    let ox = (target_width - image.width) / 2;
    let oy = (target_height - image.height) / 2;
    let mut pixels = vec![255u8; (target_width * target_height) as usize];
    for y in 0..image.height {
        let src = (y * image.width) as usize;
        let dst = ((y + oy) * target_width + ox) as usize;
        pixels[dst..dst + image.width as usize]
            .copy_from_slice(&image.pixels[src..src + image.width as usize]);
    }
    Ok(PseudoImage {
        width: target_width,
        height: target_height,
        pixels,
        quiet_zone: image.quiet_zone,
        symbol_bounds: image.symbol_bounds.map(|b| SymbolBounds {
            x: b.x + ox,
            y: b.y + oy,
            ..b
        }),
    })
}

/// Tags a locator as a text indirection by setting its fragment to `r2o`.
pub fn encode_text_indirection(locator: &str) -> Result<String, CodecError> {
    if locator.contains('#') {
        // Validate the part before the fragment first so garbage is still reported as such.
        let base = locator.split('#').next().unwrap_or_default();
        ContentLocator::parse(base)?;
        return Err(CodecError::FragmentConflict);
    }
    let locator = ContentLocator::parse(locator)?;
    Ok(format!("{locator}#{TEXT_FRAGMENT}"))
}

/// Returns the tagged locator with its fragment stripped, or `None` when
/// `text` is not a text indirection.
pub fn decode_text_indirection(text: &str) -> Option<ContentLocator> {
    let base = text.strip_suffix(TEXT_FRAGMENT)?.strip_suffix('#')?;
    if base.contains('#') {
        return None;
    }
    ContentLocator::parse(base).ok()
}
