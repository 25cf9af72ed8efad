//! Screen content generators: ITF barcodes and bitmap digits.

use thiserror::Error;

use super::screen::{Screen, BAND_ROWS, BLACK, SCREEN_H, SCREEN_W, WHITE};
#[cfg(test)]
use super::screen::band_fractions_from_rows;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("ITF needs an even number of digits, got {0}")]
    OddLength(usize),
    #[error("not a digit: {0:?}")]
    InvalidChar(char),
    #[error("content needs {needed} px but only {available} are available")]
    DoesNotFit { needed: usize, available: usize },
}

/// Wide/narrow pattern of each digit, `true` = wide.
const ITF: [[bool; 5]; 10] = {
    const N: bool = false;
    const W: bool = true;
    [
        [N, N, W, W, N],
        [W, N, N, N, W],
        [N, W, N, N, W],
        [W, W, N, N, N],
        [N, N, W, N, W],
        [W, N, W, N, N],
        [N, W, W, N, N],
        [N, N, N, W, W],
        [W, N, N, W, N],
        [N, W, N, W, N],
    ]
};

pub const WIDE_FACTOR: usize = 3;

/// ITF pattern of one digit as a string of N/W.
pub fn itf_pattern(d: u8) -> String {
    ITF[d as usize].iter().map(|&w| if w { 'W' } else { 'N' }).collect()
}

fn parse_digits(digits: &str) -> Result<Vec<u8>, EncodeError> {
    digits
        .chars()
        .map(|c| c.to_digit(10).map(|d| d as u8).ok_or(EncodeError::InvalidChar(c)))
        .collect()
}

/// Element sequence `(is_bar, is_wide)`: start, interleaved pairs, stop.
pub fn itf_elements(digits: &str) -> Result<Vec<(bool, bool)>, EncodeError> {
    let d = parse_digits(digits)?;
    if d.len() % 2 == 1 {
        return Err(EncodeError::OddLength(d.len()));
    }
    let mut e = vec![(true, false), (false, false), (true, false), (false, false)];
    for pair in d.chunks(2) {
        for i in 0..5 {
            e.push((true, ITF[pair[0] as usize][i]));
            e.push((false, ITF[pair[1] as usize][i]));
        }
    }
    e.extend([(true, true), (false, false), (true, false)]);
    Ok(e)
}

/// Rows taken by the symbol, excluding the top margin.
pub fn itf_height(n_digits: usize, narrow_h: usize) -> usize {
    // Start 4 units, 18 units per pair, stop 3 + 1 + 1.
    (4 + 18 * (n_digits / 2) + 2 + WIDE_FACTOR) * narrow_h
}

/// Row where the character (digit pair) `k` begins.
pub fn itf_char_top(k: usize, narrow_h: usize) -> usize {
    BAND_ROWS + (4 + 18 * k) * narrow_h
}

/// Horizontal ITF bars on white, stacked top to bottom below a one-band
/// margin. Bars are `narrow_h` rows tall (three times that when wide) and
/// `narrow_width_px` pixels long, centred.
pub fn rasterize_itf(digits: &str, narrow_h: usize, narrow_width_px: usize) -> Result<Screen, EncodeError> {
    let elems = itf_elements(digits)?;
    let needed = BAND_ROWS + itf_height(digits.len(), narrow_h);
    if needed > SCREEN_H {
        return Err(EncodeError::DoesNotFit { needed, available: SCREEN_H });
    }
    let mut s = Screen::filled(WHITE);
    let len = narrow_width_px.min(SCREEN_W);
    let x0 = (SCREEN_W - len) / 2;
    let mut y = BAND_ROWS;
    for (bar, wide) in elems {
        let h = if wide { WIDE_FACTOR * narrow_h } else { narrow_h };
        if bar {
            s.fill_rect(x0, y, len, h, BLACK);
        }
        y += h;
    }
    Ok(s)
}

/// Nonzero channel values per row of [`rasterize_itf`]'s output, without
/// drawing it.
pub fn itf_row_profile(digits: &str, narrow_h: usize, narrow_width_px: usize) -> Result<Vec<usize>, EncodeError> {
    let elems = itf_elements(digits)?;
    let needed = BAND_ROWS + itf_height(digits.len(), narrow_h);
    if needed > SCREEN_H {
        return Err(EncodeError::DoesNotFit { needed, available: SCREEN_H });
    }
    let full = 3 * SCREEN_W;
    let barred = 3 * (SCREEN_W - narrow_width_px.min(SCREEN_W));
    let mut rows = vec![full; SCREEN_H];
    let mut y = BAND_ROWS;
    for (bar, wide) in elems {
        let h = if wide { WIDE_FACTOR * narrow_h } else { narrow_h };
        if bar {
            rows[y..y + h].fill(barred);
        }
        y += h;
    }
    Ok(rows)
}

/// Read the bars back from the centre column of a raster.
pub fn decode_itf_raster(s: &Screen, narrow_h: usize) -> Option<String> {
    let x = s.width / 2;
    let mut runs: Vec<(bool, usize)> = Vec::new();
    for y in BAND_ROWS..s.height {
        let bar = s.get(x, y) == BLACK;
        match runs.last_mut() {
            Some((b, n)) if *b == bar => *n += 1,
            _ => runs.push((bar, 1)),
        }
    }
    // Drop the trailing quiet zone.
    if runs.last().is_some_and(|r| !r.0) {
        runs.pop();
    }
    let wide: Vec<bool> = runs.iter().map(|&(_, n)| n >= 2 * narrow_h).collect();
    if runs.first().is_none_or(|r| !r.0) || wide.len() < 7 || wide[..4].iter().any(|&w| w) {
        return None;
    }
    let body = &wide[4..wide.len() - 3];
    if wide[wide.len() - 3..] != [true, false, false] || body.len() % 10 != 0 {
        return None;
    }
    let digit = |pat: [bool; 5]| ITF.iter().position(|p| *p == pat);
    let mut out = String::new();
    for ch in body.chunks(10) {
        let a = digit([ch[0], ch[2], ch[4], ch[6], ch[8]])?;
        let b = digit([ch[1], ch[3], ch[5], ch[7], ch[9]])?;
        out.push(char::from(b'0' + a as u8));
        out.push(char::from(b'0' + b as u8));
    }
    Some(out)
}

/// 5×7 bitmap digits, one string per row.
pub const FONT: [[&str; 7]; 10] = [
    ["01110", "10001", "10001", "10001", "10001", "10001", "01110"],
    ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
];

/// Pixel size of one font cell when `n` glyphs share the screen: glyphs are
/// as tall as the screen allows, with one blank column between glyphs.
pub fn glyph_scale(n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    (SCREEN_H / 7).min(SCREEN_W / (6 * n - 1))
}

/// White digits on black, scaled to the screen height and centred.
pub fn rasterize_digits(digits: &str) -> Result<Screen, EncodeError> {
    let d = parse_digits(digits)?;
    let mut s = Screen::filled(BLACK);
    if d.is_empty() {
        return Ok(s);
    }
    let k = glyph_scale(d.len());
    if k == 0 {
        return Err(EncodeError::DoesNotFit { needed: 6 * d.len() - 1, available: SCREEN_W });
    }
    let x0 = (SCREEN_W - (6 * d.len() - 1) * k) / 2;
    let y0 = (SCREEN_H - 7 * k) / 2;
    for (i, &g) in d.iter().enumerate() {
        for (r, row) in FONT[g as usize].iter().enumerate() {
            for (c, bit) in row.bytes().enumerate() {
                if bit == b'1' {
                    s.fill_rect(x0 + (6 * i + c) * k, y0 + r * k, k, k, WHITE);
                }
            }
        }
    }
    Ok(s)
}

/// Nonzero channel values per row of [`rasterize_digits`]'s output.
pub fn digits_row_profile(digits: &str) -> Result<Vec<usize>, EncodeError> {
    let d = parse_digits(digits)?;
    let mut rows = vec![0; SCREEN_H];
    if d.is_empty() {
        return Ok(rows);
    }
    let k = glyph_scale(d.len());
    if k == 0 {
        return Err(EncodeError::DoesNotFit { needed: 6 * d.len() - 1, available: SCREEN_W });
    }
    let y0 = (SCREEN_H - 7 * k) / 2;
    for r in 0..7 {
        let lit: usize = d.iter().map(|&g| FONT[g as usize][r].bytes().filter(|&b| b == b'1').count()).sum();
        rows[y0 + r * k..y0 + (r + 1) * k].fill(3 * lit * k);
    }
    Ok(rows)
}
