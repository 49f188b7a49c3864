//! Pixel-space privacy zones and their mapping onto patch-token indices.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PixelMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: bits.len(),
            });
        }
        Ok(Self { width, height, bits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn union(&self, other: &PixelMask) -> Result<PixelMask> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::DimensionMismatch {
                expected: self.bits.len(),
                actual: other.bits.len(),
            });
        }
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        Ok(Self { bits, ..*self })
    }

    /// Text form: `P1`, then `width height`, then `height` lines of `width`
    /// `0`/`1` characters.
    pub fn to_text(&self) -> String {
        let mut s = format!("P1\n{} {}\n", self.width, self.height);
        for row in self.bits.chunks(self.width) {
            for &b in row {
                s.push(if b { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        if lines.next() != Some("P1") {
            return Err(Error::Parse("mask header must be P1".into()));
        }
        let dims = lines
            .next()
            .ok_or_else(|| Error::Parse("missing mask dimensions".into()))?;
        let (width, height) = parse_dims(dims)?;
        let mut bits = Vec::with_capacity(width * height);
        for _ in 0..height {
            let line = lines.next().ok_or_else(|| Error::Parse("truncated mask".into()))?;
            let row: Vec<char> = line.chars().filter(|c| !c.is_whitespace()).collect();
            if row.len() != width {
                return Err(Error::Parse(format!(
                    "mask row has {} cells, expected {width}",
                    row.len()
                )));
            }
            for c in row {
                bits.push(match c {
                    '0' => false,
                    '1' => true,
                    other => return Err(Error::Parse(format!("invalid mask character {other:?}"))),
                });
            }
        }
        Self::from_bits(width, height, bits)
    }
}

pub(crate) fn parse_dims(line: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(Error::Parse(format!("expected 'width height', got {line:?}")));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
    Ok((parse(parts[0])?, parse(parts[1])?))
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x0 <= self.x1 && self.x1 <= width && self.y0 <= self.y1 && self.y1 <= height
    }
}

pub fn rect_to_mask(rect: Rect, width: usize, height: usize) -> Result<PixelMask> {
    if !rect.fits(width, height) {
        return Err(Error::InvalidRect {
            x0: rect.x0,
            y0: rect.y0,
            x1: rect.x1,
            y1: rect.y1,
            width,
            height,
        });
    }
    let mut mask = PixelMask::empty(width, height);
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            mask.set(x, y, true);
        }
    }
    Ok(mask)
}

/// Sorted, deduplicated patch indices (patch tokens only, CLS excluded).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PatchIndexSet(Vec<usize>);

impl PatchIndexSet {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn all(num_patches: usize) -> Self {
        Self((0..num_patches).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    pub fn is_subset(&self, other: &PatchIndexSet) -> bool {
        self.0.iter().all(|i| other.contains(*i))
    }

    pub fn validate(&self, num_patches: usize) -> Result<()> {
        match self.0.last() {
            Some(&i) if i >= num_patches => Err(Error::IndexOutOfRange {
                index: i,
                count: num_patches,
            }),
            _ => Ok(()),
        }
    }
}

/// A patch is selected when the fraction of its pixels covered by the mask
/// strictly exceeds `min_overlap`; `0.0` selects every touched patch.
pub fn mask_to_patches(mask: &PixelMask, patch: usize, min_overlap: f64) -> Result<PatchIndexSet> {
    if patch == 0 || !mask.width.is_multiple_of(patch) || !mask.height.is_multiple_of(patch) {
        return Err(Error::InvalidConfig(format!(
            "mask {}x{} is not divisible by patch {patch}",
            mask.width, mask.height
        )));
    }
    if !(0.0..=1.0).contains(&min_overlap) {
        return Err(Error::InvalidConfig(format!("min_overlap {min_overlap} outside [0,1]")));
    }
    let gw = mask.width / patch;
    let gh = mask.height / patch;
    let area = (patch * patch) as f64;
    let mut out = Vec::new();
    for py in 0..gh {
        for px in 0..gw {
            let mut covered = 0usize;
            for y in py * patch..(py + 1) * patch {
                for x in px * patch..(px + 1) * patch {
                    covered += mask.get(x, y) as usize;
                }
            }
            if covered as f64 / area > min_overlap {
                out.push(py * gw + px);
            }
        }
    }
    Ok(PatchIndexSet(out))
}

impl std::fmt::Display for PatchIndexSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut s = String::from("{");
        for (n, i) in self.0.iter().enumerate() {
            if n > 0 {
                s.push(',');
            }
            write!(s, "{i}")?;
        }
        s.push('}');
        f.write_str(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rect_masks() {
        assert_eq!(rect_to_mask(Rect::new(0, 0, 16, 16), 16, 16).unwrap().count(), 256);
        assert_eq!(rect_to_mask(Rect::new(0, 0, 0, 0), 16, 16).unwrap().count(), 0);
        assert_eq!(rect_to_mask(Rect::new(4, 4, 8, 8), 16, 16).unwrap().count(), 16);
        assert!(rect_to_mask(Rect::new(0, 0, 17, 4), 16, 16).is_err());
        assert!(rect_to_mask(Rect::new(5, 0, 4, 4), 16, 16).is_err());
    }

    #[test]
    fn patch_selection() {
        let full = rect_to_mask(Rect::new(0, 0, 16, 16), 16, 16).unwrap();
        assert_eq!(mask_to_patches(&full, 4, 0.0).unwrap(), PatchIndexSet::all(16));
        let empty = PixelMask::empty(16, 16);
        assert!(mask_to_patches(&empty, 4, 0.0).unwrap().is_empty());
        let aligned = rect_to_mask(Rect::new(4, 4, 8, 8), 16, 16).unwrap();
        assert_eq!(mask_to_patches(&aligned, 4, 0.0).unwrap().indices(), &[5]);
        assert!(mask_to_patches(&PixelMask::empty(15, 16), 4, 0.0).is_err());
    }

    #[test]
    fn overlap_threshold() {
        // Covers patch 0 fully and one column of patch 1.
        let m = rect_to_mask(Rect::new(0, 0, 5, 4), 16, 16).unwrap();
        assert_eq!(mask_to_patches(&m, 4, 0.0).unwrap().indices(), &[0, 1]);
        assert_eq!(mask_to_patches(&m, 4, 0.999).unwrap().indices(), &[0]);
        assert_eq!(mask_to_patches(&m, 4, 0.25).unwrap().indices(), &[0]);
    }

    #[test]
    fn mask_text_round_trip() {
        let m = rect_to_mask(Rect::new(2, 1, 7, 3), 8, 4).unwrap();
        assert_eq!(PixelMask::from_text(&m.to_text()).unwrap(), m);
        assert!(PixelMask::from_text("P2\n1 1\n0\n").is_err());
        assert!(PixelMask::from_text("P1\n2 1\n0\n").is_err());
    }

    #[test]
    fn validate_range() {
        assert!(PatchIndexSet::new(vec![3, 15]).validate(16).is_ok());
        assert!(PatchIndexSet::new(vec![16]).validate(16).is_err());
        assert_eq!(PatchIndexSet::new(vec![3, 1, 3]).indices(), &[1, 3]);
    }

    proptest! {
        #[test]
        fn monotone_under_inclusion(
            bits_a in proptest::collection::vec(any::<bool>(), 256),
            extra in proptest::collection::vec(any::<bool>(), 256),
            overlap in 0.0f64..1.0,
        ) {
            let b_bits: Vec<bool> = bits_a.iter().zip(&extra).map(|(a, e)| *a || *e).collect();
            let a = PixelMask::from_bits(16, 16, bits_a).unwrap();
            let b = PixelMask::from_bits(16, 16, b_bits).unwrap();
            let pa = mask_to_patches(&a, 4, overlap).unwrap();
            let pb = mask_to_patches(&b, 4, overlap).unwrap();
            prop_assert!(pa.is_subset(&pb));
        }
    }
}
