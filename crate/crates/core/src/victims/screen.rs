//! Screen contents and their per-band statistics.

use std::io::{self, Read, Write};

pub const SCREEN_W: usize = 2560;
pub const SCREEN_H: usize = 1600;
/// Rendering epochs per frame; each covers one horizontal band.
pub const BANDS: usize = 28;
pub const BAND_ROWS: usize = 57;

pub type Rgb = [u8; 3];
pub const BLACK: Rgb = [0, 0, 0];
pub const WHITE: Rgb = [255, 255, 255];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Screen {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl Screen {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        Screen { width, height, pixels: vec![fill; width * height] }
    }

    /// Full-size screen in one color.
    pub fn filled(fill: Rgb) -> Self {
        Self::new(SCREEN_W, SCREEN_H, fill)
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        self.pixels[y * self.width + x] = c;
    }

    pub fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, c: Rgb) {
        for y in y0..(y0 + h).min(self.height) {
            let row = y * self.width;
            let x1 = (x0 + w).min(self.width);
            self.pixels[row + x0.min(x1)..row + x1].fill(c);
        }
    }

    /// Rows of band `b`. Bands are `BAND_ROWS` tall scaled to the screen
    /// height; the last band takes whatever rows remain.
    pub fn band_rows(&self, b: usize) -> std::ops::Range<usize> {
        assert!(b < BANDS);
        let rows = band_height(self.height);
        let start = b * rows;
        let end = if b + 1 == BANDS { self.height } else { start + rows };
        start..end
    }

    /// Fraction of individual R, G and B values that are nonzero, per band.
    pub fn nonzero_channel_fractions(&self) -> Vec<f64> {
        let rows: Vec<usize> = self
            .pixels
            .chunks(self.width.max(1))
            .map(|row| row.iter().map(|p| p.iter().filter(|&&c| c != 0).count()).sum())
            .collect();
        band_fractions_from_rows(&rows, self.width)
    }

    /// Fraction of pure-white pixels, per band.
    pub fn white_fractions(&self) -> Vec<f64> {
        (0..BANDS)
            .map(|b| {
                let r = self.band_rows(b);
                let px = &self.pixels[r.start * self.width..r.end * self.width];
                px.iter().filter(|&&p| p == WHITE).count() as f64 / px.len().max(1) as f64
            })
            .collect()
    }

    /// Raw dump: width and height as little-endian u32, then RGB rows.
    pub fn write_raw<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        let flat: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        w.write_all(&flat)
    }

    pub fn read_raw<R: Read>(mut r: R) -> io::Result<Self> {
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let width = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let height = u32::from_le_bytes(b4) as usize;
        let n = width
            .checked_mul(height)
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "screen too large"))?;
        let mut flat = vec![0u8; 3 * n];
        r.read_exact(&mut flat)?;
        let pixels = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(Screen { width, height, pixels })
    }
}

/// Band height for a screen of `height` rows (57 at 1600).
/// Per-band nonzero fraction from nonzero channel counts per row of a
/// `width`-pixel screen.
pub fn band_fractions_from_rows(rows: &[usize], width: usize) -> Vec<f64> {
    let bh = band_height(rows.len());
    (0..BANDS)
        .map(|b| {
            let start = (b * bh).min(rows.len());
            let end = if b + 1 == BANDS { rows.len() } else { (start + bh).min(rows.len()) };
            let nz: usize = rows[start..end].iter().sum();
            nz as f64 / (3 * width * (end - start)).max(1) as f64
        })
        .collect()
}

pub fn band_height(height: usize) -> usize {
    height / BANDS
}
