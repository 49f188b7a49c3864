//! Deterministic 16×16 glyph scenes with a privacy zone carrying an
//! identity texture.
//!
//! Layout rules:
//! - background intensity 0.1;
//! - inside `psz_rect`, pixel `(x, y)` shows bit `(y mod 4, x mod 4)` of the
//!   identity's 4×4 code (0.9 for a set bit, 0.3 otherwise), so the texture
//!   is tiled on the absolute image grid;
//! - each person is a 2-pixel-wide glyph (intensity 1.0) filling one 4×4
//!   patch cell that does not touch `psz_rect`; cells are picked by shuffling
//!   the free cells with the scene seed.
//!
//! Glyphs inside a cell (`#` = glyph pixel):
//!
//! ```text
//! normal   fall     smoking  conflict
//! .##.     ....     .###     .##.
//! .##.     ####     .##.     ####
//! .##.     ####     .##.     ####
//! .##.     ....     .##.     .##.
//! ```

use crate::error::{Error, Result};
use crate::psz::{rect_to_mask, PixelMask, Rect};
use crate::rng::{derive_seed, Xoshiro256PlusPlus};
use crate::tensor::Tensor;

pub const SCENE_SIZE: usize = 16;
pub const CELL: usize = 4;
pub const BACKGROUND: f64 = 0.1;
pub const TEXTURE_ON: f64 = 0.9;
pub const TEXTURE_OFF: f64 = 0.3;
pub const GLYPH: f64 = 1.0;
pub const NUM_IDENTITIES: usize = 8;
pub const MAX_PERSONS: usize = 3;
/// Privacy-zone side lengths are drawn from `PSZ_MIN..=PSZ_MAX`.
pub const PSZ_MIN: usize = 6;
pub const PSZ_MAX: usize = 8;

/// Identity codes, row-major from the top-left bit (MSB). Every code has
/// eight set bits, so identities share the same mean intensity.
pub const IDENTITY_CODES: [u16; NUM_IDENTITIES] = [0x9669, 0x0FF0, 0x3333, 0xCCCC, 0xA5A5, 0x5A5A, 0xF00F, 0x6996];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    Normal,
    Fall,
    Smoking,
    Conflict,
}

impl Behavior {
    pub const ALL: [Behavior; 4] = [Behavior::Normal, Behavior::Fall, Behavior::Smoking, Behavior::Conflict];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        crate::cloud::BEHAVIOR_LABELS[self.index()]
    }

    fn glyph(self) -> [&'static str; 4] {
        match self {
            Behavior::Normal => [".##.", ".##.", ".##.", ".##."],
            Behavior::Fall => ["....", "####", "####", "...."],
            Behavior::Smoking => [".###", ".##.", ".##.", ".##."],
            Behavior::Conflict => [".##.", "####", "####", ".##."],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneSpec {
    pub behavior: Behavior,
    pub identity_id: usize,
    pub person_count: usize,
    pub psz_rect: Rect,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneLabels {
    pub behavior: Behavior,
    pub identity_id: usize,
    pub person_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Tensor,
    pub mask: PixelMask,
    pub labels: SceneLabels,
}

fn free_cells(rect: &Rect) -> Vec<(usize, usize)> {
    let grid = SCENE_SIZE / CELL;
    let mut cells = Vec::new();
    for cy in 0..grid {
        for cx in 0..grid {
            let (x0, y0) = (cx * CELL, cy * CELL);
            let touches = x0 < rect.x1 && rect.x0 < x0 + CELL && y0 < rect.y1 && rect.y0 < y0 + CELL;
            if !touches {
                cells.push((cx, cy));
            }
        }
    }
    cells
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.psz_rect.fits(SCENE_SIZE, SCENE_SIZE) {
            return Err(Error::InvalidConfig(format!(
                "psz_rect {:?} outside the image",
                self.psz_rect
            )));
        }
        if self.identity_id >= NUM_IDENTITIES {
            return Err(Error::InvalidConfig(format!(
                "identity_id {} >= {NUM_IDENTITIES}",
                self.identity_id
            )));
        }
        if self.person_count > MAX_PERSONS {
            return Err(Error::InvalidConfig(format!(
                "person_count {} > {MAX_PERSONS}",
                self.person_count
            )));
        }
        if self.person_count == 0 && self.behavior != Behavior::Normal {
            return Err(Error::InvalidConfig("an empty scene must be labelled normal".into()));
        }
        if free_cells(&self.psz_rect).len() < self.person_count {
            return Err(Error::InvalidConfig(
                "not enough room outside psz_rect for every person".into(),
            ));
        }
        Ok(())
    }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let n = SCENE_SIZE;
    let mut img = vec![BACKGROUND; n * n];
    let code = IDENTITY_CODES[spec.identity_id];
    let r = spec.psz_rect;
    for y in r.y0..r.y1 {
        for x in r.x0..r.x1 {
            let bit = 15 - ((y % 4) * 4 + x % 4);
            img[y * n + x] = if code >> bit & 1 == 1 { TEXTURE_ON } else { TEXTURE_OFF };
        }
    }

    let mut cells = free_cells(&r);
    Xoshiro256PlusPlus::seed_from_u64(spec.seed).shuffle(&mut cells);
    let glyph = spec.behavior.glyph();
    for &(cx, cy) in cells.iter().take(spec.person_count) {
        for (dy, row) in glyph.iter().enumerate() {
            for (dx, c) in row.bytes().enumerate() {
                if c == b'#' {
                    img[(cy * CELL + dy) * n + cx * CELL + dx] = GLYPH;
                }
            }
        }
    }

    Ok(Scene {
        image: Tensor::new(vec![n, n, 1], img)?,
        mask: rect_to_mask(r, n, n)?,
        labels: SceneLabels {
            behavior: spec.behavior,
            identity_id: spec.identity_id,
            person_count: spec.person_count,
        },
    })
}

/// Draw one spec: behavior uniform over four classes, identity uniform over
/// eight, then the remaining fields via [`draw_spec_given`].
pub fn draw_spec(rng: &mut Xoshiro256PlusPlus) -> SceneSpec {
    let behavior = Behavior::ALL[rng.below(4) as usize];
    let identity_id = rng.below(NUM_IDENTITIES as u64) as usize;
    draw_spec_given(rng, behavior, identity_id)
}

/// Person count uniform over `0..=3` for `normal` and `1..=3` otherwise, and
/// a privacy zone with independently uniform width and height in
/// `PSZ_MIN..=PSZ_MAX` at a uniform pixel offset.
pub fn draw_spec_given(rng: &mut Xoshiro256PlusPlus, behavior: Behavior, identity_id: usize) -> SceneSpec {
    let person_count = match behavior {
        Behavior::Normal => rng.below(4) as usize,
        _ => 1 + rng.below(3) as usize,
    };
    let sizes = (PSZ_MAX - PSZ_MIN + 1) as u64;
    let w = PSZ_MIN + rng.below(sizes) as usize;
    let h = PSZ_MIN + rng.below(sizes) as usize;
    let x0 = rng.below((SCENE_SIZE - w + 1) as u64) as usize;
    let y0 = rng.below((SCENE_SIZE - h + 1) as u64) as usize;
    SceneSpec {
        behavior,
        identity_id,
        person_count,
        psz_rect: Rect::new(x0, y0, x0 + w, y0 + h),
        seed: rng.next_u64(),
    }
}

/// `n` scenes whose behaviors and identities are balanced: each label list
/// cycles through every class and is then shuffled, so every scene's label
/// is still uniform on its own while class counts differ by at most one.
pub fn generate_dataset(n: usize, seed: u64) -> Result<Vec<Scene>> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut behaviors: Vec<Behavior> = (0..n).map(|i| Behavior::ALL[i % 4]).collect();
    let mut identities: Vec<usize> = (0..n).map(|i| i % NUM_IDENTITIES).collect();
    rng.shuffle(&mut behaviors);
    rng.shuffle(&mut identities);
    behaviors
        .into_iter()
        .zip(identities)
        .map(|(b, id)| generate_scene(&draw_spec_given(&mut rng, b, id)))
        .collect()
}

/// A single scene keyed by its own seed.
pub fn scene_from_seed(seed: u64) -> Result<Scene> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(seed, 0));
    generate_scene(&draw_spec(&mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SceneSpec {
        SceneSpec {
            behavior: Behavior::Smoking,
            identity_id: 0,
            person_count: 2,
            psz_rect: Rect::new(4, 0, 12, 8),
            seed: 99,
        }
    }

    #[test]
    fn empty_scene_is_background_plus_texture() {
        let s = SceneSpec {
            behavior: Behavior::Normal,
            person_count: 0,
            ..spec()
        };
        let scene = generate_scene(&s).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let v = scene.image.at(&[y, x, 0]);
                if s.psz_rect.contains(x, y) {
                    assert!(v == TEXTURE_ON || v == TEXTURE_OFF);
                } else {
                    assert_eq!(v, BACKGROUND);
                }
            }
        }
        assert_eq!(scene.labels.behavior, Behavior::Normal);
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_scene(&spec()).unwrap(), generate_scene(&spec()).unwrap());
    }

    #[test]
    fn identity_only_changes_psz_pixels() {
        let a = generate_scene(&spec()).unwrap();
        let b = generate_scene(&SceneSpec {
            identity_id: 1,
            ..spec()
        })
        .unwrap();
        let mut differs = false;
        for y in 0..16 {
            for x in 0..16 {
                let (va, vb) = (a.image.at(&[y, x, 0]), b.image.at(&[y, x, 0]));
                if !spec().psz_rect.contains(x, y) {
                    assert_eq!(va, vb);
                }
                differs |= va != vb;
            }
        }
        assert!(differs);
    }

    #[test]
    fn behavior_only_changes_pixels_outside_psz() {
        let a = generate_scene(&spec()).unwrap();
        let b = generate_scene(&SceneSpec {
            behavior: Behavior::Fall,
            ..spec()
        })
        .unwrap();
        for y in 0..16 {
            for x in 0..16 {
                if spec().psz_rect.contains(x, y) {
                    assert_eq!(a.image.at(&[y, x, 0]), b.image.at(&[y, x, 0]));
                }
            }
        }
        assert_ne!(a.image, b.image);
    }

    #[test]
    fn glyph_pixel_counts() {
        let base = SceneSpec {
            person_count: 1,
            psz_rect: Rect::new(0, 0, 0, 0),
            ..spec()
        };
        let count = |b: Behavior| {
            let s = generate_scene(&SceneSpec { behavior: b, ..base }).unwrap();
            s.image.data().iter().filter(|&&v| v == GLYPH).count()
        };
        assert_eq!(count(Behavior::Normal), 8);
        assert_eq!(count(Behavior::Fall), 8);
        assert_eq!(count(Behavior::Smoking), 9);
        assert_eq!(count(Behavior::Conflict), 12);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_scene(&SceneSpec {
            identity_id: 8,
            ..spec()
        })
        .is_err());
        assert!(generate_scene(&SceneSpec {
            person_count: 4,
            ..spec()
        })
        .is_err());
        assert!(generate_scene(&SceneSpec {
            person_count: 0,
            ..spec()
        })
        .is_err());
        assert!(generate_scene(&SceneSpec {
            psz_rect: Rect::new(10, 0, 17, 4),
            ..spec()
        })
        .is_err());
        // A full-image zone leaves no room for people.
        assert!(generate_scene(&SceneSpec {
            psz_rect: Rect::new(0, 0, 16, 16),
            ..spec()
        })
        .is_err());
    }

    #[test]
    fn dataset_basics() {
        assert!(generate_dataset(0, 1).unwrap().is_empty());
        let a = generate_dataset(20, 4).unwrap();
        assert_eq!(a, generate_dataset(20, 4).unwrap());
        for s in &a {
            assert!((PSZ_MIN * PSZ_MIN..=PSZ_MAX * PSZ_MAX).contains(&s.mask.count()));
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
