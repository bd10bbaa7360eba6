use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics. Pixel `(u, v)` is centred on image coordinate `(u, v)`,
/// so the ray through pixel `u` has slope `(u - cx) / fx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(width: u32, height: u32, fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return Err(Error::invalid(format!("focal lengths must be positive, got fx={fx} fy={fy}")));
        }
        if !(cx.is_finite() && cy.is_finite()) || cx < 0.0 || cy < 0.0 || cx >= width as f64 || cy >= height as f64 {
            return Err(Error::invalid(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
        })
    }

    /// Square-pixel intrinsics from a horizontal field of view in degrees.
    pub fn from_fov(fov_deg: f64, width: u32, height: u32) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::invalid(format!("fov_deg must be in (0, 180), got {fov_deg}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        let f = (width as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
        Self::new(width, height, f, f, width as f64 / 2.0, height as f64 / 2.0)
    }

    /// Horizontal field of view implied by `fx` and the image width.
    pub fn fov_deg(&self) -> f64 {
        (2.0 * ((self.width as f64 / 2.0) / self.fx).atan()).to_degrees()
    }

    /// Same field of view at a different resolution; the principal point keeps
    /// its relative position.
    pub fn resized(&self, width: u32, height: u32) -> Result<Self> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self::new(width, height, self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Camera-frame direction with unit z through image coordinate `(u, v)`.
    #[inline]
    pub fn ray_dir(&self, u: f64, v: f64) -> [f64; 3] {
        [(u - self.cx) / self.fx, -(v - self.cy) / self.fy, 1.0]
    }

    /// Projects a camera-frame point (z > 0) to image coordinates.
    #[inline]
    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        [self.fx * p[0] / p[2] + self.cx, self.cy - self.fy * p[1] / p[2]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ninety_degree_fov_has_half_width_focal() {
        let k = CameraIntrinsics::from_fov(90.0, 100, 100).unwrap();
        assert_relative_eq!(k.fx, 50.0, epsilon = 1e-12);
        assert_relative_eq!(k.fy, 50.0, epsilon = 1e-12);
        assert_eq!((k.cx, k.cy), (50.0, 50.0));
    }

    #[test]
    fn forty_three_degrees() {
        let k = CameraIntrinsics::from_fov(43.0, 640, 480).unwrap();
        // 320 / tan(21.5 deg) evaluated with mpmath at 50 digits.
        assert_relative_eq!(k.fx, 812.367_326_612_578_4, max_relative = 1e-12);
    }

    #[test]
    fn out_of_range_fov_rejected() {
        assert!(matches!(
            CameraIntrinsics::from_fov(200.0, 100, 100),
            Err(Error::InvalidArgument(_))
        ));
        assert!(CameraIntrinsics::from_fov(0.0, 100, 100).is_err());
        assert!(CameraIntrinsics::from_fov(60.0, 0, 100).is_err());
    }

    #[test]
    fn fov_readback_is_identity() {
        for i in 1..179 {
            let fov = i as f64 + 0.37;
            let k = CameraIntrinsics::from_fov(fov, 321, 200).unwrap();
            assert!((k.fov_deg() - fov).abs() < 1e-9, "fov {fov}");
        }
    }
}
