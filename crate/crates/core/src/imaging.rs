//! Exact pixel-level image representation and lossless geometry.
//!
//! Quarter-turn rotations are pure index permutations, so rotating by `k`
//! turns and then by `(4 - k) % 4` turns reproduces the original buffer
//! byte for byte. That exactness is what lets the benchmark reconstruct
//! upright sources from stored rotated files without keeping duplicates.
//! Resizing uses bilinear interpolation with half-pixel sample centers;
//! padding anchors the source at the top-left and fills with a constant
//! color (white by default, matching document backgrounds).

use std::path::Path;

use thiserror::Error;

/// Fixed channel count; every buffer is interleaved RGB.
pub const CHANNELS: usize = 3;

/// White fill used for padding and synthetic page backgrounds.
pub const WHITE: [u8; 3] = [255, 255, 255];

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("pixel data length {len} does not match {width}x{height}x3")]
    DataLengthMismatch { len: usize, width: u32, height: u32 },
    #[error("pad target smaller than source: {out_w}x{out_h} < {in_w}x{in_h}")]
    PadTargetSmallerThanSource {
        in_w: u32,
        in_h: u32,
        out_w: u32,
        out_h: u32,
    },
    #[error("failed to read image {path}: {source}")]
    Decode {
        path: String,
        source: image::ImageError,
    },
    #[error("failed to write image {path}: {source}")]
    Encode {
        path: String,
        source: image::ImageError,
    },
}

/// Raw interleaved-RGB raster with an exact length contract:
/// `data.len() == width * height * 3`, row-major, channel-minor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl ImageBuffer {
    /// Wrap raw pixel data, enforcing the length invariant.
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::EmptyDimensions { width, height });
        }
        let expected = width as usize * height as usize * CHANNELS;
        if data.len() != expected {
            return Err(ImagingError::DataLengthMismatch {
                len: data.len(),
                width,
                height,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Constant-color image.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "dimensions must be at least 1x1");
        let mut data = Vec::with_capacity(width as usize * height as usize * CHANNELS);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// White page of the given size.
    pub fn white(width: u32, height: u32) -> Self {
        Self::filled(width, height, WHITE)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    fn index(&self, row: u32, col: u32) -> usize {
        (row as usize * self.width as usize + col as usize) * CHANNELS
    }

    #[inline]
    pub fn pixel(&self, row: u32, col: u32) -> [u8; 3] {
        let i = self.index(row, col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: u32, col: u32, rgb: [u8; 3]) {
        let i = self.index(row, col);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Decode a PNG or JPEG file into an RGB buffer.
    pub fn from_path(path: &Path) -> Result<Self, ImagingError> {
        let decoded = image::open(path).map_err(|source| ImagingError::Decode {
            path: path.display().to_string(),
            source,
        })?;
        let rgb = decoded.to_rgb8();
        let (width, height) = rgb.dimensions();
        Self::new(width, height, rgb.into_raw())
    }

    /// Encode as PNG in memory (for wire payloads).
    pub fn png_bytes(&self) -> Vec<u8> {
        let img: image::RgbImage =
            image::ImageBuffer::from_raw(self.width, self.height, self.data.clone())
                .expect("buffer length invariant");
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .expect("in-memory png encode");
        out.into_inner()
    }

    /// Write a lossless PNG. Rotation round-trip tests rely on this being
    /// byte-exact through a save/load cycle.
    pub fn save_png(&self, path: &Path) -> Result<(), ImagingError> {
        let img: image::RgbImage =
            image::ImageBuffer::from_raw(self.width, self.height, self.data.clone())
                .expect("buffer length invariant");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| ImagingError::Encode {
                path: path.display().to_string(),
                source,
            })
    }
}

/// The four canonical orientations a captured document can land in.
///
/// The integer label is the class index used by the classifier and the
/// manifest format; a positive angle means the page was rotated clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum RotationClass {
    /// Rotated 90° counter-clockwise (label 0, angle -90°).
    Ccw90 = 0,
    /// Not rotated (label 1, angle 0°).
    Upright = 1,
    /// Rotated 90° clockwise (label 2, angle +90°).
    Cw90 = 2,
    /// Rotated 180° (label 3).
    UpsideDown = 3,
}

impl RotationClass {
    pub const ALL: [RotationClass; 4] = [
        RotationClass::Ccw90,
        RotationClass::Upright,
        RotationClass::Cw90,
        RotationClass::UpsideDown,
    ];

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn from_label(label: u8) -> Option<Self> {
        match label {
            0 => Some(RotationClass::Ccw90),
            1 => Some(RotationClass::Upright),
            2 => Some(RotationClass::Cw90),
            3 => Some(RotationClass::UpsideDown),
            _ => None,
        }
    }

    /// Signed angle in degrees; positive is clockwise.
    pub fn angle_deg(self) -> i32 {
        match self {
            RotationClass::Ccw90 => -90,
            RotationClass::Upright => 0,
            RotationClass::Cw90 => 90,
            RotationClass::UpsideDown => 180,
        }
    }

    /// Number of clockwise quarter turns that realize this orientation.
    pub fn clockwise_turns(self) -> u8 {
        match self {
            RotationClass::Ccw90 => 3,
            RotationClass::Upright => 0,
            RotationClass::Cw90 => 1,
            RotationClass::UpsideDown => 2,
        }
    }

    pub fn from_clockwise_turns(turns: u8) -> Self {
        match turns % 4 {
            0 => RotationClass::Upright,
            1 => RotationClass::Cw90,
            2 => RotationClass::UpsideDown,
            _ => RotationClass::Ccw90,
        }
    }

    /// Orientation reached by applying `turns` additional clockwise quarter
    /// turns to an image already in this orientation.
    pub fn plus_turns(self, turns: u8) -> Self {
        Self::from_clockwise_turns(self.clockwise_turns().wrapping_add(turns))
    }
}

// Manifests and checkpoints carry the integer label, not a variant name.
impl serde::Serialize for RotationClass {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.label())
    }
}

impl<'de> serde::Deserialize<'de> for RotationClass {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let label = u8::deserialize(deserializer)?;
        RotationClass::from_label(label).ok_or_else(|| {
            serde::de::Error::custom(format!("unknown rotation label {label}, expected 0..=3"))
        })
    }
}

/// Rotate by `turns_cw` clockwise quarter turns. Pure index permutation:
/// no resampling, no loss. Dimensions swap for odd turn counts.
pub fn rotate_quarter(img: &ImageBuffer, turns_cw: u8) -> ImageBuffer {
    let (w, h) = (img.width, img.height);
    match turns_cw % 4 {
        0 => img.clone(),
        1 => {
            // out(r', c') = in(h - 1 - c', r'), output is h wide, w tall
            let mut out = ImageBuffer::filled(h, w, [0, 0, 0]);
            for r in 0..w {
                for c in 0..h {
                    out.set_pixel(r, c, img.pixel(h - 1 - c, r));
                }
            }
            out
        }
        2 => {
            let mut out = ImageBuffer::filled(w, h, [0, 0, 0]);
            for r in 0..h {
                for c in 0..w {
                    out.set_pixel(r, c, img.pixel(h - 1 - r, w - 1 - c));
                }
            }
            out
        }
        _ => {
            // out(r', c') = in(c', w - 1 - r')
            let mut out = ImageBuffer::filled(h, w, [0, 0, 0]);
            for r in 0..w {
                for c in 0..h {
                    out.set_pixel(r, c, img.pixel(c, w - 1 - r));
                }
            }
            out
        }
    }
}

/// Physically place an upright image into the given orientation.
pub fn apply_rotation_class(img: &ImageBuffer, cls: RotationClass) -> ImageBuffer {
    rotate_quarter(img, cls.clockwise_turns())
}

/// Clockwise quarter turns that undo `cls`: applying `apply_rotation_class`
/// and then `rotate_quarter(_, correction_turns(cls))` is the identity.
pub fn correction_turns(cls: RotationClass) -> u8 {
    (4 - cls.clockwise_turns()) % 4
}

/// Bilinear resize with half-pixel sample centers. Sample coordinates are
/// clamped to the source, channel values to [0, 255]. Resizing to the same
/// dimensions is byte-exact.
pub fn resize_bilinear(img: &ImageBuffer, out_w: u32, out_h: u32) -> ImageBuffer {
    assert!(out_w > 0 && out_h > 0, "output dimensions must be >= 1");
    if out_w == img.width && out_h == img.height {
        return img.clone();
    }
    let (in_w, in_h) = (img.width as f64, img.height as f64);
    let scale_x = in_w / out_w as f64;
    let scale_y = in_h / out_h as f64;
    let mut out = ImageBuffer::filled(out_w, out_h, [0, 0, 0]);
    for r in 0..out_h {
        let sy = ((r as f64 + 0.5) * scale_y - 0.5).clamp(0.0, in_h - 1.0);
        let y0 = sy.floor() as u32;
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = sy - y0 as f64;
        for c in 0..out_w {
            let sx = ((c as f64 + 0.5) * scale_x - 0.5).clamp(0.0, in_w - 1.0);
            let x0 = sx.floor() as u32;
            let x1 = (x0 + 1).min(img.width - 1);
            let fx = sx - x0 as f64;
            let p00 = img.pixel(y0, x0);
            let p01 = img.pixel(y0, x1);
            let p10 = img.pixel(y1, x0);
            let p11 = img.pixel(y1, x1);
            let mut rgb = [0u8; 3];
            for k in 0..CHANNELS {
                let top = p00[k] as f64 * (1.0 - fx) + p01[k] as f64 * fx;
                let bottom = p10[k] as f64 * (1.0 - fx) + p11[k] as f64 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                rgb[k] = v.round().clamp(0.0, 255.0) as u8;
            }
            out.set_pixel(r, c, rgb);
        }
    }
    out
}

/// Pad to `out_w x out_h` with the source anchored at the top-left; new
/// rows/columns at the bottom/right take the fill color.
pub fn pad_to(
    img: &ImageBuffer,
    out_w: u32,
    out_h: u32,
    fill: [u8; 3],
) -> Result<ImageBuffer, ImagingError> {
    if out_w < img.width || out_h < img.height {
        return Err(ImagingError::PadTargetSmallerThanSource {
            in_w: img.width,
            in_h: img.height,
            out_w,
            out_h,
        });
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let mut out = ImageBuffer::filled(out_w, out_h, fill);
    for r in 0..img.height {
        let src = img.index(r, 0);
        let dst = out.index(r, 0);
        let row = img.width as usize * CHANNELS;
        out.data[dst..dst + row].copy_from_slice(&img.data[src..src + row]);
    }
    Ok(out)
}
