use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bilinear resize of a `[C, H, W]` image with half-pixel centers and edge clamping.
pub fn resize_image(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = image.dims3()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config("resize target must be non-empty".into()));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ys = taps(out_h, h);
    let xs = taps(out_w, w);
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    for ch in 0..c {
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = image.at3(ch, y0, x0) * (1.0 - fx) + image.at3(ch, y0, x1) * fx;
                let bot = image.at3(ch, y1, x0) * (1.0 - fx) + image.at3(ch, y1, x1) * fx;
                out.set3(ch, oy, ox, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Ok(out)
}

/// Square resize; normalized annotations carry over unchanged.
pub fn resize(sample: &Sample, size: usize) -> Result<Sample> {
    if size < 8 {
        return Err(Error::Config(format!("resize target {size} below 8")));
    }
    Ok(Sample {
        id: sample.id.clone(),
        image: resize_image(&sample.image, size, size)?,
        annotations: sample.annotations.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let t = Tensor::from_vec(&[1, 2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(resize_image(&t, 2, 3).unwrap(), t);
    }

    #[test]
    fn constant_stays_constant() {
        let t = Tensor::filled(&[3, 7, 5], 0.37);
        let r = resize_image(&t, 16, 11).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn checkerboard_2_to_4_matches_hand_weights() {
        // a b / c d with a=d=1, b=c=0. Output sample positions map to
        // source coordinates -0.25, 0.25, 0.75, 1.25, clamped to [0, 1].
        let t = Tensor::from_vec(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let r = resize_image(&t, 4, 4).unwrap();
        let w = [0.0, 0.25, 0.75, 1.0];
        for oy in 0..4 {
            for ox in 0..4 {
                let (fy, fx) = (w[oy], w[ox]);
                let expect = (1.0 - fy) * (1.0 - fx) + fy * fx;
                assert!((r.at3(0, oy, ox) - expect).abs() < 1e-12, "({oy},{ox})");
            }
        }
        assert!((r.at3(0, 1, 1) - 0.625).abs() < 1e-12);
        assert!((r.at3(0, 1, 2) - 0.375).abs() < 1e-12);
    }

    #[test]
    fn tiny_target_is_rejected() {
        let s = Sample { id: "a".into(), image: Tensor::zeros(&[3, 4, 4]), annotations: vec![] };
        assert!(resize(&s, 7).is_err());
        assert_eq!(resize(&s, 8).unwrap().image.shape(), &[3, 8, 8]);
    }
}
