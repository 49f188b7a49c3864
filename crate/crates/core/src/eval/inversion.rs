//! Linear ridge feature-inversion attacker and region PSNR.

use nalgebra::{DMatrix, DVector};

use crate::channel::FeatureEmbedding;
use crate::error::{Error, Result};
use crate::psz::PixelMask;
use crate::tensor::Tensor;

/// `image ≈ W · embedding`, `W` is `pixels × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionDecoder {
    pub weights: DMatrix<f64>,
    pub image_shape: Vec<usize>,
}

/// Closed form `W = Y Xᵀ (X Xᵀ + λ I)⁻¹`, with embeddings as the columns of
/// `X` and flattened images as the columns of `Y`, solved by Cholesky on the
/// regularized Gram matrix.
pub fn train_inversion_decoder(pairs: &[(FeatureEmbedding, Tensor)], ridge: f64) -> Result<InversionDecoder> {
    let (first_e, first_img) = pairs
        .first()
        .ok_or_else(|| Error::InvalidConfig("no training pairs".into()))?;
    let dim = first_e.len();
    let pixels = first_img.len();
    for (e, img) in pairs {
        if e.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: e.len(),
            });
        }
        img.check_shape(first_img.shape())?;
    }
    let x = DMatrix::from_fn(dim, pairs.len(), |r, c| pairs[c].0.as_slice()[r]);
    let y = DMatrix::from_fn(pixels, pairs.len(), |r, c| pairs[c].1.data()[r]);
    let gram = &x * x.transpose() + DMatrix::identity(dim, dim) * ridge;
    let chol = gram.cholesky().ok_or(Error::SingularSystem)?;
    // Gram is symmetric, so Wᵀ = G⁻¹ (X Yᵀ).
    let wt = chol.solve(&(&x * y.transpose()));
    if wt.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(InversionDecoder {
        weights: wt.transpose(),
        image_shape: first_img.shape().to_vec(),
    })
}

impl InversionDecoder {
    pub fn reconstruct(&self, e: &FeatureEmbedding) -> Result<Tensor> {
        if e.len() != self.weights.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.ncols(),
                actual: e.len(),
            });
        }
        let out = &self.weights * DVector::from_column_slice(e.as_slice());
        Tensor::new(self.image_shape.clone(), out.as_slice().to_vec())
    }
}

pub const PSNR_CAP: f64 = 99.0;

/// `10·log10(1 / MSE)` over the true pixels of `mask` (peak 1.0), capped at
/// 99 dB when the MSE falls below 1e-10. Channels share the pixel mask.
pub fn psnr_region(a: &Tensor, b: &Tensor, mask: &PixelMask) -> Result<f64> {
    b.check_shape(a.shape())?;
    let shape = a.shape();
    if shape.len() != 3 || shape[0] != mask.height() || shape[1] != mask.width() {
        return Err(Error::ShapeMismatch {
            expected: vec![mask.height(), mask.width(), 1],
            actual: shape.to_vec(),
        });
    }
    let c = shape[2];
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, &on) in mask.bits().iter().enumerate() {
        if on {
            for k in 0..c {
                let d = a.data()[p * c + k] - b.data()[p * c + k];
                sum += d * d;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let mse = sum / n as f64;
    Ok(if mse < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psz::{rect_to_mask, Rect};
    use crate::rng::GaussianStream;

    #[test]
    fn psnr_cases() {
        let full = rect_to_mask(Rect::new(0, 0, 4, 4), 4, 4).unwrap();
        let a = Tensor::zeros(vec![4, 4, 1]);
        let b = Tensor::filled(vec![4, 4, 1], 0.5);
        assert_eq!(psnr_region(&a, &a, &full).unwrap(), 99.0);
        assert!((psnr_region(&a, &b, &full).unwrap() - 6.020599913279624).abs() < 1e-12);
        assert!(matches!(
            psnr_region(&a, &b, &PixelMask::empty(4, 4)),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn full_mask_equals_global_psnr() {
        let mut g = GaussianStream::new(2);
        let a = Tensor::new(vec![4, 4, 1], (0..16).map(|_| g.next_normal() * 0.1 + 0.5).collect()).unwrap();
        let b = Tensor::new(vec![4, 4, 1], (0..16).map(|_| g.next_normal() * 0.1 + 0.5).collect()).unwrap();
        let mse: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / 16.0;
        let full = rect_to_mask(Rect::new(0, 0, 4, 4), 4, 4).unwrap();
        assert!((psnr_region(&a, &b, &full).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-12);
        assert_eq!(psnr_region(&a, &b, &full).unwrap(), psnr_region(&b, &a, &full).unwrap());
    }

    #[test]
    fn realizable_linear_target_is_recovered() {
        let mut g = GaussianStream::new(8);
        let (dim, pixels) = (6, 12);
        let map: Vec<f64> = (0..dim * pixels).map(|_| g.next_normal()).collect();
        let pairs: Vec<_> = (0..30)
            .map(|_| {
                let e: Vec<f64> = (0..dim).map(|_| g.next_normal()).collect();
                let img: Vec<f64> = (0..pixels)
                    .map(|p| (0..dim).map(|k| map[p * dim + k] * e[k]).sum())
                    .collect();
                (FeatureEmbedding(e), Tensor::new(vec![3, 4, 1], img).unwrap())
            })
            .collect();
        let dec = train_inversion_decoder(&pairs, 1e-10).unwrap();
        let mse: f64 = pairs
            .iter()
            .map(|(e, img)| {
                let r = dec.reconstruct(e).unwrap();
                r.data()
                    .iter()
                    .zip(img.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / pixels as f64
            })
            .sum::<f64>()
            / pairs.len() as f64;
        assert!(mse < 1e-8, "mse {mse}");
    }

    #[test]
    fn heavy_ridge_shrinks_to_zero() {
        let e = FeatureEmbedding(vec![0.5, -1.0, 2.0]);
        let img = Tensor::filled(vec![2, 2, 1], 0.8);
        let dec = train_inversion_decoder(&[(e.clone(), img)], 1e6).unwrap();
        assert!(dec.reconstruct(&e).unwrap().max_abs() < 1e-5);
    }

    #[test]
    fn negative_ridge_on_rank_deficient_data_is_singular() {
        let e = FeatureEmbedding(vec![1.0, 0.0]);
        let img = Tensor::filled(vec![1, 1, 1], 0.8);
        assert!(matches!(
            train_inversion_decoder(&[(e, img)], -1e-3),
            Err(Error::SingularSystem)
        ));
    }
}
