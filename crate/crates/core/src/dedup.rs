//! Difference hashing and train/test leakage audits.
//!
//! The image is box-filtered down to 9 columns by 8 rows using exact integer
//! area weights, then bit `(r, c)` is set iff cell `(r, c + 1)` is strictly
//! brighter than cell `(r, c)`. Bits are packed row-major with bit 0 at
//! `(0, 0)`.

use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::par::{self, Execution};

const COLS: usize = 9;
const ROWS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image has no pixels"));
        }
        if width * height != pixels.len() {
            return Err(Error::invalid(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    /// Rec.601 luma from interleaved RGB bytes.
    pub fn from_rgb(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::invalid("RGB buffer size does not match dimensions"));
        }
        let pixels = rgb
            .chunks_exact(3)
            .map(|p| {
                let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                y.round().clamp(0.0, 255.0) as u8
            })
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DHash(pub u64);

impl DHash {
    pub fn distance(self, other: DHash) -> u32 {
        (self.0 ^ other.0).count_ones()
    }

    pub fn parse_hex(s: &str) -> Result<Self> {
        let t = s.trim();
        let t = t.strip_prefix("0x").unwrap_or(t);
        u64::from_str_radix(t, 16)
            .map(DHash)
            .map_err(|_| Error::invalid(format!("bad hash {s:?}")))
    }
}

impl fmt::Display for DHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Overlap of `[a0, a1)` and `[b0, b1)`.
#[inline]
fn overlap(a0: usize, a1: usize, b0: usize, b1: usize) -> usize {
    a1.min(b1).saturating_sub(a0.max(b0))
}

/// Area-weighted cell sums of the 9x8 resample. Every cell has the same total
/// weight (`width * height` in scaled units), so sums compare like means.
pub fn resample_sums(img: &GrayImage) -> [[u64; COLS]; ROWS] {
    let (w, h) = (img.width, img.height);
    // Pixel x spans [x*COLS, (x+1)*COLS) and cell c spans [c*w, (c+1)*w) in
    // units of 1/(COLS) pixel; the same scheme applies vertically.
    let col_weights: Vec<Vec<(usize, u64)>> = (0..COLS)
        .map(|c| {
            (0..w)
                .filter_map(|x| {
                    let o = overlap(x * COLS, (x + 1) * COLS, c * w, (c + 1) * w);
                    (o > 0).then_some((x, o as u64))
                })
                .collect()
        })
        .collect();
    let row_weights: Vec<Vec<(usize, u64)>> = (0..ROWS)
        .map(|r| {
            (0..h)
                .filter_map(|y| {
                    let o = overlap(y * ROWS, (y + 1) * ROWS, r * h, (r + 1) * h);
                    (o > 0).then_some((y, o as u64))
                })
                .collect()
        })
        .collect();
    let mut out = [[0u64; COLS]; ROWS];
    for (r, rw) in row_weights.iter().enumerate() {
        for (c, cw) in col_weights.iter().enumerate() {
            let mut s = 0u64;
            for &(y, wy) in rw {
                let row = &img.pixels[y * w..(y + 1) * w];
                for &(x, wx) in cw {
                    s += wy * wx * row[x] as u64;
                }
            }
            out[r][c] = s;
        }
    }
    out
}

pub fn dhash(img: &GrayImage) -> DHash {
    let cells = resample_sums(img);
    let mut bits = 0u64;
    for r in 0..ROWS {
        for c in 0..COLS - 1 {
            if cells[r][c + 1] > cells[r][c] {
                bits |= 1 << (r * 8 + c);
            }
        }
    }
    DHash(bits)
}

pub fn dhash_all(exec: Execution, images: &[GrayImage]) -> Vec<DHash> {
    par::map(exec, images, dhash)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionReport {
    pub count: usize,
    pub total: usize,
    pub fraction: f64,
    /// `b` was empty, so the fraction is reported as zero.
    pub empty: bool,
}

impl fmt::Display for CollisionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({:.2}%)", self.count, self.fraction * 100.0)
    }
}

/// Items of `b` within `max_hamming` bits of some hash in `a`.
pub fn count_collisions(a: &[DHash], b: &[DHash], max_hamming: u32) -> Result<CollisionReport> {
    if max_hamming > 64 {
        return Err(Error::invalid(format!(
            "max_hamming must be at most 64, got {max_hamming}"
        )));
    }
    let count = if max_hamming == 0 {
        let set: HashSet<DHash> = a.iter().copied().collect();
        b.iter().filter(|h| set.contains(h)).count()
    } else {
        par::map(Execution::default(), b, |h| {
            a.iter().any(|x| x.distance(*h) <= max_hamming)
        })
        .into_iter()
        .filter(|&hit| hit)
        .count()
    };
    let empty = b.is_empty();
    let fraction = if empty {
        0.0
    } else {
        count as f64 / b.len() as f64
    };
    Ok(CollisionReport {
        count,
        total: b.len(),
        fraction,
        empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_hashes_to_zero() {
        for (w, h) in [(1, 1), (9, 8), (17, 5), (640, 480)] {
            let img = GrayImage::new(w, h, vec![137; w * h]).unwrap();
            assert_eq!(dhash(&img), DHash(0));
        }
    }

    #[test]
    fn increasing_columns_set_every_bit() {
        let (w, h) = (90, 16);
        let px: Vec<u8> = (0..h).flat_map(|_| (0..w).map(|x| (x * 2) as u8)).collect();
        assert_eq!(dhash(&GrayImage::new(w, h, px).unwrap()), DHash(u64::MAX));
        let px: Vec<u8> = (0..8).flat_map(|_| (0..9u8).map(|x| x * 20)).collect();
        assert_eq!(dhash(&GrayImage::new(9, 8, px).unwrap()), DHash(u64::MAX));
    }

    #[test]
    fn bit_layout_is_row_major() {
        // 9x8 image, only row 2 has an increase between columns 4 and 5.
        let mut px = vec![50u8; 72];
        for c in 5..9 {
            px[2 * 9 + c] = 60;
        }
        assert_eq!(
            dhash(&GrayImage::new(9, 8, px).unwrap()),
            DHash(1 << (2 * 8 + 4))
        );
    }

    #[test]
    fn rejects_bad_images() {
        assert!(GrayImage::new(0, 3, vec![]).is_err());
        assert!(GrayImage::new(2, 2, vec![0; 3]).is_err());
        assert!(GrayImage::from_rgb(1, 1, &[1, 2]).is_err());
        assert_eq!(
            GrayImage::from_rgb(1, 1, &[255, 255, 255])
                .unwrap()
                .pixels(),
            &[255]
        );
    }

    #[test]
    fn collisions() {
        let a: Vec<DHash> = (0..10).map(DHash).collect();
        let r = count_collisions(&a, &a, 0).unwrap();
        assert_eq!((r.count, r.fraction), (10, 1.0));
        let b = vec![DHash(1), DHash((1 << 40) | (1 << 41)), DHash(3 | (1 << 63))];
        assert_eq!(count_collisions(&a, &b, 0).unwrap().count, 1);
        assert_eq!(count_collisions(&a, &b, 1).unwrap().count, 2);
        assert_eq!(count_collisions(&a, &b, 64).unwrap().count, 3);
        let empty = count_collisions(&a, &[], 0).unwrap();
        assert!(empty.empty && empty.fraction == 0.0);
        assert!(count_collisions(&a, &b, 65).is_err());
    }

    #[test]
    fn report_format() {
        let r = CollisionReport {
            count: 21,
            total: 3663,
            fraction: 21.0 / 3663.0,
            empty: false,
        };
        assert_eq!(r.to_string(), "21 (0.57%)");
    }

    #[test]
    fn hex_round_trip() {
        let h = DHash(0x00ab_cdef_0123_4567);
        assert_eq!(h.to_string(), "00abcdef01234567");
        assert_eq!(DHash::parse_hex(&h.to_string()).unwrap(), h);
        assert!(DHash::parse_hex("zz").is_err());
    }
}
