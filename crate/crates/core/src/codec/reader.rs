//! Reads axis-aligned, synthetically rendered symbols back into bytes.
//!
//! The dark-pixel bounding box of such an image is exactly the symbol
//! (finder patterns occupy three corners), so locating the grid reduces to
//! picking the version whose module pitch reproduces the finder and timing
//! patterns.

use super::gf;
use super::qr::{self, EcLevel, Matrix};

/// Pixel values below this are dark.
pub const DARK_THRESHOLD: u8 = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadError {
    /// No finder-pattern geometry was found.
    NotASymbol,
    /// Geometry was found but the content could not be recovered.
    Damaged(&'static str),
}

/// A sampled module grid (`true` = dark).
#[derive(Debug, Clone)]
pub struct Grid {
    pub size: usize,
    cells: Vec<bool>,
}

impl Grid {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.cells[y * self.size + x]
    }
}

struct Bounds {
    left: usize,
    top: usize,
    width: usize,
    height: usize,
}

fn dark_bounds(pixels: &[u8], width: usize, height: usize) -> Option<Bounds> {
    let mut top = None;
    let mut bottom = 0;
    let mut left = width;
    let mut right = 0;
    for y in 0..height {
        let row = &pixels[y * width..(y + 1) * width];
        let first = row.iter().position(|&p| p < DARK_THRESHOLD);
        if let Some(first) = first {
            let last = row.iter().rposition(|&p| p < DARK_THRESHOLD).unwrap_or(first);
            top.get_or_insert(y);
            bottom = y;
            left = left.min(first);
            right = right.max(last);
        }
    }
    top.map(|top| Bounds {
        left,
        top,
        width: right - left + 1,
        height: bottom - top + 1,
    })
}

fn sample(pixels: &[u8], width: usize, b: &Bounds, size: usize) -> Grid {
    let pitch_x = b.width as f64 / size as f64;
    let pitch_y = b.height as f64 / size as f64;
    let mut cells = Vec::with_capacity(size * size);
    for y in 0..size {
        let py = b.top + ((y as f64 + 0.5) * pitch_y) as usize;
        for x in 0..size {
            let px = b.left + ((x as f64 + 0.5) * pitch_x) as usize;
            cells.push(pixels[py * width + px] < DARK_THRESHOLD);
        }
    }
    Grid { size, cells }
}

/// Mismatches against the three finder patterns plus the two timing lines.
fn structure_mismatches(grid: &Grid) -> usize {
    let n = grid.size;
    let finder = |cx: usize, cy: usize| {
        let mut bad = 0;
        for dy in -3i32..=3 {
            for dx in -3i32..=3 {
                let dist = dx.abs().max(dy.abs());
                let want = dist != 2;
                let got = grid.get((cx as i32 + dx) as usize, (cy as i32 + dy) as usize);
                bad += usize::from(want != got);
            }
        }
        bad
    };
    let mut bad = finder(3, 3) + finder(n - 4, 3) + finder(3, n - 4);
    for i in 8..n - 8 {
        bad += usize::from(grid.get(i, 6) != (i % 2 == 0));
        bad += usize::from(grid.get(6, i) != (i % 2 == 0));
    }
    bad
}

/// Candidate grids, best structural match first.
pub fn locate(pixels: &[u8], width: usize, height: usize) -> Result<Vec<Grid>, ReadError> {
    if pixels.len() != width * height {
        return Err(ReadError::NotASymbol);
    }
    let b = dark_bounds(pixels, width, height).ok_or(ReadError::NotASymbol)?;
    let mut candidates = Vec::new();
    for version in 1..=qr::MAX_VERSION {
        let size = qr::size_of(version);
        if b.width < size || b.height < size {
            break;
        }
        let pitch = b.width as f64 / size as f64;
        if (b.height as f64 - b.width as f64).abs() > pitch {
            continue;
        }
        let grid = sample(pixels, width, &b, size);
        let bad = structure_mismatches(&grid);
        // 147 finder modules + 2(n-16) timing modules; allow light damage.
        let budget = (147 + 2 * (size - 16)) / 10;
        if bad <= budget {
            candidates.push((bad, grid));
        }
    }
    if candidates.is_empty() {
        return Err(ReadError::NotASymbol);
    }
    candidates.sort_by_key(|(bad, _)| *bad);
    Ok(candidates.into_iter().map(|(_, g)| g).collect())
}

/// Format information (level, mask) from whichever copy is closest to a valid word.
fn read_format(grid: &Grid) -> Option<(EcLevel, u8)> {
    let positions = qr::format_positions(grid.size);
    let mut copies = [0u32; 2];
    for (i, pair) in positions.iter().enumerate() {
        for (c, &(x, y)) in pair.iter().enumerate() {
            if grid.get(x, y) {
                copies[c] |= 1 << i;
            }
        }
    }
    let mut best: Option<(u32, EcLevel, u8)> = None;
    for ec in EcLevel::ALL {
        for mask in 0..8u8 {
            let word = qr::format_word(ec, mask);
            let dist = copies.iter().map(|c| (c ^ word).count_ones()).min().unwrap_or(15);
            if best.is_none_or(|(d, _, _)| dist < d) {
                best = Some((dist, ec, mask));
            }
        }
    }
    best.filter(|(d, _, _)| *d <= 3).map(|(_, ec, mask)| (ec, mask))
}

/// Decodes one located grid into its byte-mode payload.
pub fn read_grid(grid: &Grid) -> Result<Vec<u8>, ReadError> {
    let version = qr::version_for_size(grid.size).ok_or(ReadError::NotASymbol)?;
    let (ec, mask) = read_format(grid).ok_or(ReadError::Damaged("format information"))?;

    let template = Matrix::with_function_patterns(version);
    let positions = template.data_positions();
    let mut codewords = vec![0u8; qr::total_codewords(version)];
    for (i, &(x, y)) in positions.iter().enumerate().take(codewords.len() * 8) {
        let bit = grid.get(x, y) ^ qr::mask_bit(mask, x, y);
        if bit {
            codewords[i / 8] |= 1 << (7 - i % 8);
        }
    }

    let ecc_len = qr::ecc_per_block(version, ec);
    let mut data = Vec::with_capacity(qr::data_codewords(version, ec));
    for mut block in qr::deinterleave(&codewords, version, ec) {
        gf::correct(&mut block, ecc_len).map_err(|_| ReadError::Damaged("error correction"))?;
        data.extend_from_slice(&block[..block.len() - ecc_len]);
    }
    parse_segments(&data, version)
}

fn parse_segments(data: &[u8], version: u8) -> Result<Vec<u8>, ReadError> {
    let mut reader = BitReader { data, pos: 0 };
    let mut out = Vec::new();
    loop {
        if reader.remaining() < 4 {
            break;
        }
        match reader.read(4) {
            0b0000 => break,
            0b0100 => {
                let count_bits = if version <= 9 { 8 } else { 16 };
                let len = reader.read(count_bits) as usize;
                if reader.remaining() < len * 8 {
                    return Err(ReadError::Damaged("segment length"));
                }
                out.extend((0..len).map(|_| reader.read(8) as u8));
            }
            _ => return Err(ReadError::Damaged("unsupported segment mode")),
        }
    }
    Ok(out)
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn remaining(&self) -> usize {
        self.data.len() * 8 - self.pos
    }

    fn read(&mut self, bits: usize) -> u32 {
        let mut v = 0u32;
        for _ in 0..bits {
            let byte = self.data[self.pos / 8];
            v = (v << 1) | ((byte >> (7 - self.pos % 8)) & 1) as u32;
            self.pos += 1;
        }
        v
    }
}

/// Versions whose module pitch over the bounding box is a whole number of pixels.
fn integral_pitch_versions(b: &Bounds) -> impl Iterator<Item = u8> + '_ {
    (1..=qr::MAX_VERSION).filter(move |&v| {
        let size = qr::size_of(v);
        b.width == b.height && b.width.is_multiple_of(size)
    })
}

/// Locates and reads a symbol from a grayscale raster.
pub fn read(pixels: &[u8], width: usize, height: usize) -> Result<Vec<u8>, ReadError> {
    if pixels.len() != width * height {
        return Err(ReadError::NotASymbol);
    }
    // Rendered symbols have an integer pitch; try those grids before searching.
    if let Some(b) = dark_bounds(pixels, width, height) {
        for version in integral_pitch_versions(&b) {
            let grid = sample(pixels, width, &b, qr::size_of(version));
            if structure_mismatches(&grid) == 0 {
                if let Ok(bytes) = read_grid(&grid) {
                    return Ok(bytes);
                }
            }
        }
    }
    let grids = locate(pixels, width, height)?;
    let mut last = ReadError::NotASymbol;
    for grid in &grids {
        match read_grid(grid) {
            Ok(bytes) => return Ok(bytes),
            Err(e) => last = e,
        }
    }
    Err(last)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster(m: &Matrix, scale: usize, margin: usize) -> (Vec<u8>, usize) {
        let side = (m.size + 2 * margin) * scale;
        let mut px = vec![255u8; side * side];
        for y in 0..m.size {
            for x in 0..m.size {
                if m.get(x, y) {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            px[((y + margin) * scale + dy) * side + (x + margin) * scale + dx] = 0;
                        }
                    }
                }
            }
        }
        (px, side)
    }

    #[test]
    fn reads_every_version_and_level_at_unit_scale() {
        for v in 1..=10u8 {
            for ec in EcLevel::ALL {
                let payload: Vec<u8> = (0..qr::byte_capacity(v, ec)).map(|i| (i * 7) as u8).collect();
                let m = qr::build(&payload, v, ec, None);
                let (px, side) = raster(&m, 1, 4);
                assert_eq!(read(&px, side, side), Ok(payload), "v{v} {ec:?}");
            }
        }
    }

    #[test]
    fn reads_every_mask() {
        for mask in 0..8 {
            let m = qr::build(b"https://example.com/x", 3, EcLevel::Q, Some(mask));
            let (px, side) = raster(&m, 3, 4);
            assert_eq!(read(&px, side, side).unwrap(), b"https://example.com/x");
        }
    }

    #[test]
    fn blank_and_noise_are_not_symbols() {
        assert_eq!(read(&[255; 100 * 100], 100, 100), Err(ReadError::NotASymbol));
        let noise: Vec<u8> = (0..10_000u32).map(|i| if i.wrapping_mul(2654435761) % 7 < 3 { 0 } else { 255 }).collect();
        assert_eq!(read(&noise, 100, 100), Err(ReadError::NotASymbol));
    }

    #[test]
    fn reads_non_integral_module_pitch() {
        let m = qr::build(b"https://example.com/pitch", 2, EcLevel::M, None);
        let (inner, margin) = (110usize, 12usize);
        let side = inner + 2 * margin;
        let mut px = vec![255u8; side * side];
        for y in 0..inner {
            for x in 0..inner {
                if m.get(x * m.size / inner, y * m.size / inner) {
                    px[(y + margin) * side + x + margin] = 0;
                }
            }
        }
        assert_eq!(read(&px, side, side).unwrap(), b"https://example.com/pitch");
    }

    #[test]
    fn penalty_selected_mask_is_readable_for_large_versions() {
        let payload = vec![b'a'; 500];
        let m = qr::build(&payload, 20, EcLevel::L, None);
        let (px, side) = raster(&m, 2, 4);
        assert_eq!(read(&px, side, side), Ok(payload));
    }
}
