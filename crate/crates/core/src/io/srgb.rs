//! sRGB transfer functions.

/// Gamma-encoded `[0, 1]` value to linear intensity.
pub fn decode(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Linear intensity to gamma-encoded `[0, 1]`.
pub fn encode(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.003_130_8 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mid_grey_8bit() {
        // closed form ((128/255 + 0.055) / 1.055)^2.4
        let v = decode(128.0 / 255.0);
        assert!((v - 0.215_860_5).abs() < 1e-6, "{v}");
        assert!((v - 0.2159).abs() < 5e-5);
    }

    #[test]
    fn inverse_pair() {
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            assert!((decode(encode(x)) - x).abs() < 1e-12);
        }
    }
}
