//! GF(2^8) arithmetic and Reed–Solomon coding over the QR field
//! (primitive polynomial x^8 + x^4 + x^3 + x^2 + 1, generator roots α^0..α^(n-1)).

const PRIMITIVE: u16 = 0x11d;

const fn build_tables() -> ([u8; 512], [u8; 256]) {
    let mut exp = [0u8; 512];
    let mut log = [0u8; 256];
    let mut x: u16 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x as u8;
        log[x as usize] = i as u8;
        x <<= 1;
        if x & 0x100 != 0 {
            x ^= PRIMITIVE;
        }
        i += 1;
    }
    while i < 512 {
        exp[i] = exp[i - 255];
        i += 1;
    }
    (exp, log)
}

const TABLES: ([u8; 512], [u8; 256]) = build_tables();
const EXP: [u8; 512] = TABLES.0;
const LOG: [u8; 256] = TABLES.1;

#[inline]
pub fn mul(a: u8, b: u8) -> u8 {
    if a == 0 || b == 0 {
        0
    } else {
        EXP[LOG[a as usize] as usize + LOG[b as usize] as usize]
    }
}

#[inline]
pub fn div(a: u8, b: u8) -> u8 {
    assert!(b != 0, "division by zero in GF(256)");
    if a == 0 {
        0
    } else {
        EXP[(LOG[a as usize] as usize + 255 - LOG[b as usize] as usize) % 255]
    }
}

/// α^e for any non-negative exponent.
#[inline]
pub fn pow_alpha(e: usize) -> u8 {
    EXP[e % 255]
}

#[inline]
pub fn inv(a: u8) -> u8 {
    div(1, a)
}

/// Generator polynomial of degree `degree`, highest coefficient first, leading 1 omitted.
pub fn generator(degree: usize) -> Vec<u8> {
    let mut poly = vec![0u8; degree];
    poly[degree - 1] = 1;
    let mut root = 1u8;
    for _ in 0..degree {
        for j in 0..degree {
            poly[j] = mul(poly[j], root);
            if j + 1 < degree {
                poly[j] ^= poly[j + 1];
            }
        }
        root = mul(root, 0x02);
    }
    poly
}

/// Remainder of `data · x^degree` divided by the generator: the ECC codewords.
pub fn encode(data: &[u8], degree: usize) -> Vec<u8> {
    let gen = generator(degree);
    let mut rem = vec![0u8; degree];
    for &b in data {
        let factor = b ^ rem[0];
        rem.rotate_left(1);
        rem[degree - 1] = 0;
        for (r, &g) in rem.iter_mut().zip(&gen) {
            *r ^= mul(g, factor);
        }
    }
    rem
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Uncorrectable;

/// Corrects `block` (data followed by `ecc_len` ECC codewords) in place.
///
/// Returns the number of corrected byte errors. Fails when more than
/// `ecc_len / 2` codewords are wrong (or the error pattern is otherwise
/// inconsistent).
pub fn correct(block: &mut [u8], ecc_len: usize) -> Result<usize, Uncorrectable> {
    let n = block.len();
    if ecc_len == 0 || n > 255 {
        return Err(Uncorrectable);
    }
    // S_j = c(α^j), codeword read with block[0] as the highest power.
    let syndromes: Vec<u8> = (0..ecc_len)
        .map(|j| {
            let x = pow_alpha(j);
            block.iter().fold(0u8, |acc, &c| mul(acc, x) ^ c)
        })
        .collect();
    if syndromes.iter().all(|&s| s == 0) {
        return Ok(0);
    }

    let locator = berlekamp_massey(&syndromes);
    let errors = locator.len() - 1;
    if errors == 0 || errors * 2 > ecc_len {
        return Err(Uncorrectable);
    }

    // Chien search: position p (power n-1-i) is in error iff Λ(α^-p) == 0.
    let mut positions = Vec::with_capacity(errors);
    for p in 0..n {
        let x_inv = pow_alpha(255 - (p % 255));
        if eval_low_first(&locator, x_inv) == 0 {
            positions.push(p);
        }
    }
    if positions.len() != errors {
        return Err(Uncorrectable);
    }

    // Ω(x) = S(x)·Λ(x) mod x^ecc_len, low-order coefficients first.
    let mut omega = vec![0u8; ecc_len];
    for (i, &s) in syndromes.iter().enumerate() {
        for (j, &l) in locator.iter().enumerate() {
            if i + j < ecc_len {
                omega[i + j] ^= mul(s, l);
            }
        }
    }
    // Formal derivative keeps odd-power terms only.
    let derivative: Vec<u8> = locator
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, &c)| if i % 2 == 1 { c } else { 0 })
        .collect();

    for &p in &positions {
        let x = pow_alpha(p);
        let x_inv = inv(x);
        let num = eval_low_first(&omega, x_inv);
        let den = eval_low_first(&derivative, x_inv);
        if den == 0 {
            return Err(Uncorrectable);
        }
        // Forney with first consecutive root α^0: e = X · Ω(X^-1) / Λ'(X^-1).
        let magnitude = mul(x, div(num, den));
        block[n - 1 - p] ^= magnitude;
    }

    let clean = (0..ecc_len).all(|j| {
        let x = pow_alpha(j);
        block.iter().fold(0u8, |acc, &c| mul(acc, x) ^ c) == 0
    });
    if clean {
        Ok(errors)
    } else {
        Err(Uncorrectable)
    }
}

/// Error locator Λ(x), low-order coefficient first, Λ_0 = 1, trimmed to its degree.
fn berlekamp_massey(syndromes: &[u8]) -> Vec<u8> {
    let mut c = vec![1u8];
    let mut b = vec![1u8];
    let mut l = 0usize;
    let mut m = 1usize;
    let mut last_d = 1u8;

    for n in 0..syndromes.len() {
        let mut d = syndromes[n];
        for i in 1..=l.min(c.len() - 1) {
            d ^= mul(c[i], syndromes[n - i]);
        }
        if d == 0 {
            m += 1;
            continue;
        }
        let coef = div(d, last_d);
        let prev = c.clone();
        if c.len() < b.len() + m {
            c.resize(b.len() + m, 0);
        }
        for (i, &bi) in b.iter().enumerate() {
            c[i + m] ^= mul(coef, bi);
        }
        if 2 * l <= n {
            l = n + 1 - l;
            b = prev;
            last_d = d;
            m = 1;
        } else {
            m += 1;
        }
    }
    c.truncate(l + 1);
    c.resize(l + 1, 0);
    c
}

fn eval_low_first(poly: &[u8], x: u8) -> u8 {
    poly.iter().rev().fold(0u8, |acc, &c| mul(acc, x) ^ c)
}
