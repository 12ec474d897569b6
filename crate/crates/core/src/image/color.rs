//! sRGB (D65) <-> CIE L*a*b* conversion.

use super::Image;

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

const DELTA: f64 = 6.0 / 29.0;

/// D65 reference white, taken as the XYZ image of sRGB (1, 1, 1) so that white
/// maps to exactly L = 100, a = b = 0.
fn white() -> [f64; 3] {
    SRGB_TO_XYZ.map(|row| row.iter().sum())
}

fn xyz_to_srgb_matrix() -> [[f64; 3]; 3] {
    let m = SRGB_TO_XYZ;
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    [
        [c(1, 1, 2, 2) / det, -c(0, 1, 2, 2) / det, c(0, 1, 1, 2) / det],
        [-c(1, 0, 2, 2) / det, c(0, 0, 2, 2) / det, -c(0, 0, 1, 2) / det],
        [c(1, 0, 2, 1) / det, -c(0, 0, 2, 1) / det, c(0, 0, 1, 1) / det],
    ]
}

fn srgb_decode(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn srgb_encode(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > DELTA.powi(3) {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    m.map(|row| row[0] * v[0] + row[1] * v[1] + row[2] * v[2])
}

pub fn rgb_to_lab_pixel(rgb: [f64; 3]) -> [f64; 3] {
    let xyz = mat_vec(&SRGB_TO_XYZ, rgb.map(srgb_decode));
    let w = white();
    let [fx, fy, fz] = [lab_f(xyz[0] / w[0]), lab_f(xyz[1] / w[1]), lab_f(xyz[2] / w[2])];
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Inverse of [`rgb_to_lab_pixel`]; the result is not clamped.
pub fn lab_to_rgb_pixel(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let w = white();
    let xyz = [lab_f_inv(fx) * w[0], lab_f_inv(fy) * w[1], lab_f_inv(fz) * w[2]];
    mat_vec(&xyz_to_srgb_matrix(), xyz).map(srgb_encode)
}

/// Interleaved L*a*b* raster. L lies in `[0, 100]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl LabImage {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

pub fn rgb_to_lab(image: &Image) -> LabImage {
    let data = image
        .pixels()
        .flat_map(|p| {
            let [l, a, b] = rgb_to_lab_pixel(p.map(f64::from));
            [l.clamp(0.0, 100.0), a, b]
        })
        .collect();
    LabImage { height: image.height(), width: image.width(), data }
}

/// Converts back to sRGB, clamping out-of-gamut colors into `[0, 1]`.
pub fn lab_to_rgb(lab: &LabImage) -> Image {
    let data = lab
        .data
        .chunks_exact(3)
        .flat_map(|p| lab_to_rgb_pixel([p[0], p[1], p[2]]).map(|v| v as f32))
        .collect();
    Image::from_clamped(lab.height, lab.width, data).expect("dimensions come from a valid LabImage")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook sRGB -> Lab with the published D65 white (0.95047, 1, 1.08883),
    /// written without sharing any helper with the implementation.
    fn reference_lab(rgb: [f64; 3]) -> [f64; 3] {
        let lin: Vec<f64> = rgb
            .iter()
            .map(|&c| if c <= 0.04045 { c / 12.92 } else { ((c + 0.055) / 1.055).powf(2.4) })
            .collect();
        let x = 0.4124564 * lin[0] + 0.3575761 * lin[1] + 0.1804375 * lin[2];
        let y = 0.2126729 * lin[0] + 0.7151522 * lin[1] + 0.0721750 * lin[2];
        let z = 0.0193339 * lin[0] + 0.1191920 * lin[1] + 0.9503041 * lin[2];
        let f = |t: f64| {
            if t > 216.0 / 24389.0 {
                t.powf(1.0 / 3.0)
            } else {
                (24389.0 / 27.0 * t + 16.0) / 116.0
            }
        };
        let (fx, fy, fz) = (f(x / 0.95047), f(y / 1.0), f(z / 1.08883));
        [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
    }

    #[test]
    fn white_and_black() {
        let w = rgb_to_lab_pixel([1.0, 1.0, 1.0]);
        assert!((w[0] - 100.0).abs() < 1e-9 && w[1].abs() < 1e-9 && w[2].abs() < 1e-9, "{w:?}");
        let k = rgb_to_lab_pixel([0.0, 0.0, 0.0]);
        assert!(k.iter().all(|v| v.abs() < 1e-12), "{k:?}");
        let back = lab_to_rgb_pixel([100.0, 0.0, 0.0]);
        assert!(back.iter().all(|v| (v - 1.0).abs() < 1e-9), "{back:?}");
        let back = lab_to_rgb_pixel([0.0, 0.0, 0.0]);
        assert!(back.iter().all(|v| v.abs() < 1e-12), "{back:?}");
    }

    #[test]
    fn matches_reference_formula() {
        // Oracle values for (0.5, 0.2, 0.8); the white point differs from the
        // implementation's in the 7th digit, hence the 1e-3 tolerance.
        let expected = reference_lab([0.5, 0.2, 0.8]);
        let got = rgb_to_lab_pixel([0.5, 0.2, 0.8]);
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-3, "{got:?} vs {expected:?}");
        }
        // Frozen from an independent numpy evaluation of the same formulas.
        assert!((got[0] - 40.044294).abs() < 1e-3, "{got:?}");
        assert!((got[1] - 60.255775).abs() < 1e-3, "{got:?}");
        assert!((got[2] - -65.675076).abs() < 1e-3, "{got:?}");
    }

    #[test]
    fn image_round_trip_on_random_pixels() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..10_000 * 3).map(|_| rng.random::<f32>()).collect();
        let image = Image::new(100, 100, data).unwrap();
        let back = lab_to_rgb(&rgb_to_lab(&image));
        let max_err = image
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err < 1e-4, "max round-trip error {max_err}");
    }

    proptest! {
        #[test]
        fn lightness_stays_in_range(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let lab = rgb_to_lab_pixel([r, g, b]);
            prop_assert!(lab[0] >= -1e-9 && lab[0] <= 100.0 + 1e-9);
            prop_assert!(lab[1] >= -128.0 && lab[1] <= 127.0);
            prop_assert!(lab[2] >= -128.0 && lab[2] <= 127.0);
        }
    }
}
