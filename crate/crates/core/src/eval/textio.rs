//! Grayscale text image format: `F1`, then `width height`, then `height`
//! lines of `width` space-separated floats.

use crate::error::{Error, Result};
use crate::psz::parse_dims;
use crate::tensor::Tensor;

pub fn image_to_text(img: &Tensor) -> Result<String> {
    let shape = img.shape();
    if shape.len() != 3 || shape[2] != 1 {
        return Err(Error::ShapeMismatch {
            expected: vec![
                shape.first().copied().unwrap_or(0),
                shape.get(1).copied().unwrap_or(0),
                1,
            ],
            actual: shape.to_vec(),
        });
    }
    let (h, w) = (shape[0], shape[1]);
    let mut s = format!("F1\n{w} {h}\n");
    for row in img.data().chunks(w) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    Ok(s)
}

pub fn image_from_text(text: &str) -> Result<Tensor> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    if lines.next() != Some("F1") {
        return Err(Error::Parse("image header must be F1".into()));
    }
    let (w, h) = parse_dims(
        lines
            .next()
            .ok_or_else(|| Error::Parse("missing image dimensions".into()))?,
    )?;
    let mut data = Vec::with_capacity(w * h);
    for _ in 0..h {
        let line = lines.next().ok_or_else(|| Error::Parse("truncated image".into()))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("{v:?}: {e}"))))
            .collect::<Result<_>>()?;
        if row.len() != w {
            return Err(Error::Parse(format!(
                "image row has {} values, expected {w}",
                row.len()
            )));
        }
        data.extend(row);
    }
    Tensor::new(vec![h, w, 1], data)
}
