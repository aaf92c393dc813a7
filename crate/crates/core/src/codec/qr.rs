//! QR Code model 2 symbols in byte mode: capacity tables, bit-stream
//! construction, module placement, masking and format/version information.
//!
//! Coordinates are `(x, y)` with `x` the column and `y` the row, origin at the
//! top-left module.

use super::gf;

/// Highest version the encoder will select.
pub const MAX_ENCODE_VERSION: u8 = 10;
/// Highest version the tables (and the reader) understand.
pub const MAX_VERSION: u8 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
pub enum EcLevel {
    L,
    #[default]
    M,
    Q,
    H,
}

impl EcLevel {
    pub const ALL: [EcLevel; 4] = [EcLevel::L, EcLevel::M, EcLevel::Q, EcLevel::H];

    fn index(self) -> usize {
        match self {
            EcLevel::L => 0,
            EcLevel::M => 1,
            EcLevel::Q => 2,
            EcLevel::H => 3,
        }
    }

    /// Two-bit indicator stored in the format information.
    pub fn format_bits(self) -> u32 {
        match self {
            EcLevel::L => 0b01,
            EcLevel::M => 0b00,
            EcLevel::Q => 0b11,
            EcLevel::H => 0b10,
        }
    }

    pub fn from_format_bits(bits: u32) -> EcLevel {
        match bits & 0b11 {
            0b01 => EcLevel::L,
            0b00 => EcLevel::M,
            0b11 => EcLevel::Q,
            _ => EcLevel::H,
        }
    }
}

impl std::str::FromStr for EcLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "L" => Ok(EcLevel::L),
            "M" => Ok(EcLevel::M),
            "Q" => Ok(EcLevel::Q),
            "H" => Ok(EcLevel::H),
            other => Err(format!("unknown error-correction level {other:?}")),
        }
    }
}

#[rustfmt::skip]
const ECC_CODEWORDS_PER_BLOCK: [[u8; 41]; 4] = [
    [0,  7, 10, 15, 20, 26, 18, 20, 24, 30, 18, 20, 24, 26, 30, 22, 24, 28, 30, 28, 28, 28, 28, 30, 30, 26, 28, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30],
    [0, 10, 16, 26, 18, 24, 16, 18, 22, 22, 26, 30, 22, 22, 24, 24, 28, 28, 26, 26, 26, 26, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28],
    [0, 13, 22, 18, 26, 18, 24, 18, 22, 20, 24, 28, 26, 24, 20, 30, 24, 28, 28, 26, 30, 28, 30, 30, 30, 30, 28, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30],
    [0, 17, 28, 22, 16, 22, 28, 26, 26, 24, 28, 24, 28, 22, 24, 24, 30, 28, 28, 26, 28, 30, 24, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30],
];

#[rustfmt::skip]
const NUM_BLOCKS: [[u8; 41]; 4] = [
    [0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 4,  4,  4,  4,  4,  6,  6,  6,  6,  7,  8,  8,  9,  9, 10, 12, 12, 12, 13, 14, 15, 16, 17, 18, 19, 19, 20, 21, 22, 24, 25],
    [0, 1, 1, 1, 2, 2, 4, 4, 4, 5, 5,  5,  8,  9,  9, 10, 10, 11, 13, 14, 16, 17, 17, 18, 20, 21, 23, 25, 26, 28, 29, 31, 33, 35, 37, 38, 40, 43, 45, 47, 49],
    [0, 1, 1, 2, 2, 4, 4, 6, 6, 8, 8,  8, 10, 12, 16, 12, 17, 16, 18, 21, 20, 23, 23, 25, 27, 29, 34, 34, 35, 38, 40, 43, 45, 48, 51, 53, 56, 59, 62, 65, 68],
    [0, 1, 1, 2, 4, 4, 4, 5, 6, 8, 8, 11, 11, 16, 16, 18, 16, 19, 21, 25, 25, 25, 34, 30, 32, 35, 37, 40, 42, 45, 48, 51, 54, 57, 60, 63, 66, 70, 74, 77, 81],
];

/// Edge length in modules.
pub fn size_of(version: u8) -> usize {
    17 + 4 * version as usize
}

/// Version whose symbol is `size` modules wide, if any.
pub fn version_for_size(size: usize) -> Option<u8> {
    if size < 21 || !(size - 17).is_multiple_of(4) {
        return None;
    }
    let v = (size - 17) / 4;
    (1..=MAX_VERSION as usize).contains(&v).then_some(v as u8)
}

/// Modules available for codewords (data + ECC + remainder bits).
fn raw_data_modules(version: u8) -> usize {
    let v = version as usize;
    let mut result = (16 * v + 128) * v + 64;
    if v >= 2 {
        let align = v / 7 + 2;
        result -= (25 * align - 10) * align - 55;
        if v >= 7 {
            result -= 36;
        }
    }
    result
}

pub fn total_codewords(version: u8) -> usize {
    raw_data_modules(version) / 8
}

pub fn ecc_per_block(version: u8, ec: EcLevel) -> usize {
    ECC_CODEWORDS_PER_BLOCK[ec.index()][version as usize] as usize
}

pub fn num_blocks(version: u8, ec: EcLevel) -> usize {
    NUM_BLOCKS[ec.index()][version as usize] as usize
}

pub fn data_codewords(version: u8, ec: EcLevel) -> usize {
    total_codewords(version) - ecc_per_block(version, ec) * num_blocks(version, ec)
}

fn count_bits(version: u8) -> usize {
    if version <= 9 {
        8
    } else {
        16
    }
}

/// Largest byte-mode payload for a version/level.
pub fn byte_capacity(version: u8, ec: EcLevel) -> usize {
    let bits = data_codewords(version, ec) * 8;
    let overhead = 4 + count_bits(version);
    let n = (bits - overhead) / 8;
    // The count field caps the length too.
    n.min((1usize << count_bits(version)) - 1)
}

/// Smallest version in `min..=max` that holds `len` bytes.
pub fn smallest_version(len: usize, ec: EcLevel, min: u8, max: u8) -> Option<u8> {
    (min..=max).find(|&v| byte_capacity(v, ec) >= len)
}

/// Data codewords for a byte-mode segment, padded to the version's capacity.
pub fn data_stream(payload: &[u8], version: u8, ec: EcLevel) -> Vec<u8> {
    let capacity_bits = data_codewords(version, ec) * 8;
    let mut bits = BitBuffer::default();
    bits.push(0b0100, 4);
    bits.push(payload.len() as u32, count_bits(version));
    for &b in payload {
        bits.push(b as u32, 8);
    }
    debug_assert!(bits.len() <= capacity_bits);
    let terminator = (capacity_bits - bits.len()).min(4);
    bits.push(0, terminator);
    let align = (8 - bits.len() % 8) % 8;
    bits.push(0, align);
    let mut bytes = bits.into_bytes();
    for pad in [0xEC, 0x11].into_iter().cycle() {
        if bytes.len() >= capacity_bits / 8 {
            break;
        }
        bytes.push(pad);
    }
    bytes
}

#[derive(Default)]
struct BitBuffer {
    bits: Vec<bool>,
}

impl BitBuffer {
    fn push(&mut self, value: u32, len: usize) {
        for i in (0..len).rev() {
            self.bits.push((value >> i) & 1 == 1);
        }
    }

    fn len(&self) -> usize {
        self.bits.len()
    }

    fn into_bytes(self) -> Vec<u8> {
        self.bits
            .chunks(8)
            .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b as u8) << (7 - i))))
            .collect()
    }
}

/// Block lengths `(data_len, total_len)` in interleaving order.
pub fn block_layout(version: u8, ec: EcLevel) -> Vec<(usize, usize)> {
    let blocks = num_blocks(version, ec);
    let ecc = ecc_per_block(version, ec);
    let raw = total_codewords(version);
    let short = blocks - raw % blocks;
    let short_len = raw / blocks;
    (0..blocks)
        .map(|i| {
            let total = if i < short { short_len } else { short_len + 1 };
            (total - ecc, total)
        })
        .collect()
}

/// Splits data into blocks, appends ECC, and interleaves.
pub fn add_ecc_and_interleave(data: &[u8], version: u8, ec: EcLevel) -> Vec<u8> {
    let ecc_len = ecc_per_block(version, ec);
    let layout = block_layout(version, ec);
    let mut blocks = Vec::with_capacity(layout.len());
    let mut offset = 0;
    for &(data_len, _) in &layout {
        let chunk = &data[offset..offset + data_len];
        offset += data_len;
        blocks.push((chunk.to_vec(), gf::encode(chunk, ecc_len)));
    }
    let max_data = layout.iter().map(|l| l.0).max().unwrap_or(0);
    let mut out = Vec::with_capacity(total_codewords(version));
    for i in 0..max_data {
        for (d, _) in &blocks {
            if let Some(&b) = d.get(i) {
                out.push(b);
            }
        }
    }
    for i in 0..ecc_len {
        for (_, e) in &blocks {
            out.push(e[i]);
        }
    }
    out
}

/// Inverse of [`add_ecc_and_interleave`]: per-block `data ++ ecc`.
pub fn deinterleave(codewords: &[u8], version: u8, ec: EcLevel) -> Vec<Vec<u8>> {
    let layout = block_layout(version, ec);
    let ecc_len = ecc_per_block(version, ec);
    let mut blocks: Vec<Vec<u8>> = layout.iter().map(|&(_, t)| Vec::with_capacity(t)).collect();
    let max_data = layout.iter().map(|l| l.0).max().unwrap_or(0);
    let mut it = codewords.iter().copied();
    for i in 0..max_data {
        for (b, &(data_len, _)) in blocks.iter_mut().zip(&layout) {
            if i < data_len {
                b.push(it.next().unwrap_or(0));
            }
        }
    }
    for _ in 0..ecc_len {
        for b in blocks.iter_mut() {
            b.push(it.next().unwrap_or(0));
        }
    }
    blocks
}

pub fn alignment_positions(version: u8) -> Vec<usize> {
    if version == 1 {
        return Vec::new();
    }
    let v = version as usize;
    let count = v / 7 + 2;
    let step = if v == 32 {
        26
    } else {
        (v * 4 + count * 2 + 1) / (count * 2 - 2) * 2
    };
    let mut result: Vec<usize> = (0..count - 1).map(|i| size_of(version) - 7 - i * step).collect();
    result.push(6);
    result.reverse();
    result
}

/// 15-bit format word (BCH(15,5) with mask 0x5412).
pub fn format_word(ec: EcLevel, mask: u8) -> u32 {
    let data = (ec.format_bits() << 3) | mask as u32;
    let mut rem = data;
    for _ in 0..10 {
        rem = (rem << 1) ^ ((rem >> 9) * 0x537);
    }
    ((data << 10) | rem) ^ 0x5412
}

/// 18-bit version word (BCH(18,6)), versions 7 and up.
pub fn version_word(version: u8) -> u32 {
    let data = version as u32;
    let mut rem = data;
    for _ in 0..12 {
        rem = (rem << 1) ^ ((rem >> 11) * 0x1F25);
    }
    (data << 12) | rem
}

/// Positions of format bit `i` (0 = least significant) in both copies.
pub fn format_positions(size: usize) -> [[(usize, usize); 2]; 15] {
    let mut out = [[(0, 0); 2]; 15];
    for (i, slot) in out.iter_mut().enumerate() {
        let first = match i {
            0..=5 => (8, i),
            6 => (8, 7),
            7 => (8, 8),
            8 => (7, 8),
            _ => (14 - i, 8),
        };
        let second = if i < 8 {
            (size - 1 - i, 8)
        } else {
            (8, size - 15 + i)
        };
        *slot = [first, second];
    }
    out
}

pub fn mask_bit(mask: u8, x: usize, y: usize) -> bool {
    match mask {
        0 => (x + y).is_multiple_of(2),
        1 => y.is_multiple_of(2),
        2 => x.is_multiple_of(3),
        3 => (x + y).is_multiple_of(3),
        4 => (x / 3 + y / 2).is_multiple_of(2),
        5 => (x * y) % 2 + (x * y) % 3 == 0,
        6 => ((x * y) % 2 + (x * y) % 3).is_multiple_of(2),
        7 => ((x + y) % 2 + (x * y) % 3).is_multiple_of(2),
        _ => unreachable!("mask pattern out of range"),
    }
}

/// A square module matrix (`true` = dark) plus a map of function-pattern modules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matrix {
    pub version: u8,
    pub size: usize,
    modules: Vec<bool>,
    function: Vec<bool>,
}

impl Matrix {
    /// A matrix with all function patterns drawn and format/version areas reserved.
    pub fn with_function_patterns(version: u8) -> Matrix {
        let size = size_of(version);
        let mut m = Matrix {
            version,
            size,
            modules: vec![false; size * size],
            function: vec![false; size * size],
        };
        for i in 0..size {
            m.set_function(6, i, i % 2 == 0);
            m.set_function(i, 6, i % 2 == 0);
        }
        m.draw_finder(3, 3);
        m.draw_finder(size - 4, 3);
        m.draw_finder(3, size - 4);
        let align = alignment_positions(version);
        let last = align.len().saturating_sub(1);
        for (i, &ax) in align.iter().enumerate() {
            for (j, &ay) in align.iter().enumerate() {
                let overlaps_finder =
                    (i == 0 && j == 0) || (i == 0 && j == last) || (i == last && j == 0);
                if !overlaps_finder {
                    m.draw_alignment(ax, ay);
                }
            }
        }
        // Reserve format areas (filled with a placeholder until the mask is known).
        m.draw_format(0);
        if version >= 7 {
            m.draw_version();
        }
        m
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.modules[y * self.size + x]
    }

    pub fn set(&mut self, x: usize, y: usize, dark: bool) {
        self.modules[y * self.size + x] = dark;
    }

    pub fn is_function(&self, x: usize, y: usize) -> bool {
        self.function[y * self.size + x]
    }

    fn set_function(&mut self, x: usize, y: usize, dark: bool) {
        self.set(x, y, dark);
        self.function[y * self.size + x] = true;
    }

    fn draw_finder(&mut self, cx: usize, cy: usize) {
        for dy in -4i32..=4 {
            for dx in -4i32..=4 {
                let x = cx as i32 + dx;
                let y = cy as i32 + dy;
                if x < 0 || y < 0 || x >= self.size as i32 || y >= self.size as i32 {
                    continue;
                }
                let dist = dx.abs().max(dy.abs());
                self.set_function(x as usize, y as usize, dist != 2 && dist != 4);
            }
        }
    }

    fn draw_alignment(&mut self, cx: usize, cy: usize) {
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                let dist = dx.abs().max(dy.abs());
                self.set_function((cx as i32 + dx) as usize, (cy as i32 + dy) as usize, dist != 1);
            }
        }
    }

    fn draw_format(&mut self, word: u32) {
        for (i, pair) in format_positions(self.size).iter().enumerate() {
            let bit = (word >> i) & 1 == 1;
            for &(x, y) in pair {
                self.set_function(x, y, bit);
            }
        }
        let s = self.size;
        self.set_function(8, s - 8, true);
    }

    fn draw_version(&mut self) {
        let word = version_word(self.version);
        for i in 0..18 {
            let bit = (word >> i) & 1 == 1;
            let a = self.size - 11 + i % 3;
            let b = i / 3;
            self.set_function(a, b, bit);
            self.set_function(b, a, bit);
        }
    }

    /// Non-function module coordinates in codeword placement order
    /// (two-column zigzag from the bottom-right corner).
    pub fn data_positions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(raw_data_modules(self.version));
        let mut right = self.size as i32 - 1;
        while right >= 1 {
            if right == 6 {
                right = 5;
            }
            for vert in 0..self.size {
                for j in 0..2 {
                    let x = (right - j) as usize;
                    let upward = (right + 1) & 2 == 0;
                    let y = if upward { self.size - 1 - vert } else { vert };
                    if !self.is_function(x, y) {
                        out.push((x, y));
                    }
                }
            }
            right -= 2;
        }
        out
    }

    fn place_codewords(&mut self, codewords: &[u8]) {
        let positions = self.data_positions();
        for (i, &(x, y)) in positions.iter().enumerate() {
            let dark = codewords
                .get(i / 8)
                .is_some_and(|b| (b >> (7 - i % 8)) & 1 == 1);
            self.set(x, y, dark);
        }
    }

    fn apply_mask(&mut self, mask: u8) {
        for y in 0..self.size {
            for x in 0..self.size {
                if !self.is_function(x, y) && mask_bit(mask, x, y) {
                    let v = self.get(x, y);
                    self.set(x, y, !v);
                }
            }
        }
    }

    /// Penalty score under the four standard rules (N1=3, N2=3, N3=40, N4=10).
    pub fn penalty(&self) -> u32 {
        let n = self.size;
        let mut score = 0u32;

        // Rule 1: runs of five or more same-colored modules.
        for horizontal in [true, false] {
            for a in 0..n {
                let mut run = 1;
                for b in 1..n {
                    let (cur, prev) = if horizontal {
                        (self.get(b, a), self.get(b - 1, a))
                    } else {
                        (self.get(a, b), self.get(a, b - 1))
                    };
                    if cur == prev {
                        run += 1;
                    } else {
                        if run >= 5 {
                            score += 3 + (run - 5);
                        }
                        run = 1;
                    }
                }
                if run >= 5 {
                    score += 3 + (run - 5);
                }
            }
        }

        // Rule 2: 2x2 blocks of one color.
        for y in 0..n - 1 {
            for x in 0..n - 1 {
                let c = self.get(x, y);
                if c == self.get(x + 1, y) && c == self.get(x, y + 1) && c == self.get(x + 1, y + 1)
                {
                    score += 3;
                }
            }
        }

        // Rule 3: finder-like 1:1:3:1:1 with four light modules on one side.
        // Modules outside the symbol count as light.
        const PATTERN_A: [bool; 11] = [
            true, false, true, true, true, false, true, false, false, false, false,
        ];
        const PATTERN_B: [bool; 11] = [
            false, false, false, false, true, false, true, true, true, false, true,
        ];
        let at = |horizontal: bool, line: usize, pos: i32| -> bool {
            if pos < 0 || pos >= n as i32 {
                false
            } else if horizontal {
                self.get(pos as usize, line)
            } else {
                self.get(line, pos as usize)
            }
        };
        for horizontal in [true, false] {
            for line in 0..n {
                for start in -4..(n as i32) {
                    for pattern in [&PATTERN_A, &PATTERN_B] {
                        if pattern
                            .iter()
                            .enumerate()
                            .all(|(k, &want)| at(horizontal, line, start + k as i32) == want)
                        {
                            score += 40;
                        }
                    }
                }
            }
        }

        // Rule 4: deviation of the dark proportion from 50%, in 5% steps.
        let dark = self.modules.iter().filter(|&&d| d).count() as i64;
        let total = (n * n) as i64;
        let deviation = (dark * 100 - total * 50).abs();
        score += (deviation / (total * 5)) as u32 * 10;

        score
    }

    pub fn modules(&self) -> &[bool] {
        &self.modules
    }
}

/// Builds the finished symbol for `payload`; `mask = None` picks the lowest-penalty mask.
pub fn build(payload: &[u8], version: u8, ec: EcLevel, mask: Option<u8>) -> Matrix {
    let data = data_stream(payload, version, ec);
    let codewords = add_ecc_and_interleave(&data, version, ec);
    let mut base = Matrix::with_function_patterns(version);
    base.place_codewords(&codewords);

    let render = |m: u8| {
        let mut candidate = base.clone();
        candidate.apply_mask(m);
        candidate.draw_format(format_word(ec, m));
        candidate
    };
    match mask {
        Some(m) => render(m),
        None => (0..8u8)
            .map(render)
            .min_by_key(Matrix::penalty)
            .expect("eight candidate masks"),
    }
}
