//! Full-range BT.709 RGB <-> YUV conversion on the 0..255 scale.

const KR: f64 = 0.2126;
const KG: f64 = 0.7152;
const KB: f64 = 0.0722;
/// 2 (1 - Kb)
const CB_SCALE: f64 = 1.8556;
/// 2 (1 - Kr)
const CR_SCALE: f64 = 1.5748;
const CHROMA_OFFSET: f64 = 128.0;

/// Converts an RGB triple to YUV. Inputs are clamped to `[0, 255]`, as are the
/// outputs (chroma of fully saturated blue/red would otherwise reach 255.5).
pub fn rgb_to_yuv(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|c| c.clamp(0.0, 255.0));
    let yuv = rgb_to_yuv_unclamped([r, g, b]);
    yuv.map(|c| c.clamp(0.0, 255.0))
}

/// The raw matrix, no clamping on either side.
pub fn rgb_to_yuv_unclamped([r, g, b]: [f64; 3]) -> [f64; 3] {
    let y = KR * r + KG * g + KB * b;
    let u = (b - y) / CB_SCALE + CHROMA_OFFSET;
    let v = (r - y) / CR_SCALE + CHROMA_OFFSET;
    [y, u, v]
}

/// Inverse of [`rgb_to_yuv_unclamped`]. The result is not clamped.
pub fn yuv_to_rgb([y, u, v]: [f64; 3]) -> [f64; 3] {
    let r = y + CR_SCALE * (v - CHROMA_OFFSET);
    let b = y + CB_SCALE * (u - CHROMA_OFFSET);
    let g = (y - KR * r - KB * b) / KG;
    [r, g, b]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
        a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn black_and_white() {
        assert!(close(rgb_to_yuv([0.0; 3]), [0.0, 128.0, 128.0], 1e-12));
        assert!(close(rgb_to_yuv([255.0; 3]), [255.0, 128.0, 128.0], 1e-9));
        assert!(close(yuv_to_rgb([0.0, 128.0, 128.0]), [0.0; 3], 1e-12));
        assert!(close(yuv_to_rgb([255.0, 128.0, 128.0]), [255.0; 3], 1e-9));
    }

    #[test]
    fn pure_red_luma() {
        // Scalar reference: Y = 0.2126 R.
        let y = rgb_to_yuv([255.0, 0.0, 0.0])[0];
        assert!((y - 0.2126 * 255.0).abs() < 1e-12);
        assert!((y - 54.213).abs() < 1e-9);
    }

    #[test]
    fn inputs_are_clamped() {
        assert_eq!(rgb_to_yuv([-10.0, -1.0, -5.0]), rgb_to_yuv([0.0; 3]));
        assert_eq!(rgb_to_yuv([300.0, 256.0, 999.0]), rgb_to_yuv([255.0; 3]));
    }

    proptest! {
        #[test]
        fn yuv_round_trip(y in 0.0f64..255.0, u in 0.0f64..255.0, v in 0.0f64..255.0) {
            let back = rgb_to_yuv_unclamped(yuv_to_rgb([y, u, v]));
            prop_assert!(close(back, [y, u, v], 1e-9), "{:?} vs {:?}", back, [y, u, v]);
        }
    }
}
