//! Pinhole projection of instance points into posed depth frames.
//!
//! A point is a valid projection into frame `k` when it lies in front of the
//! camera, its floored pixel coordinates fall inside the image, the depth map
//! has a measurement at that pixel, and the point is not more than `t_occ`
//! metres behind the measured surface.

use std::path::{Path, PathBuf};

use crate::formats::{read_file, write_file, ByteReader, ByteWriter, FormatError};
use crate::scene::{InstanceId, InstanceSet, SceneError, ScenePointCloud};

pub const DEPTH_MAGIC: &[u8; 4] = b"O3DP";
const DEPTH_FORMAT: &str = "O3DP";

pub const DEFAULT_T_OCC: f64 = 0.10;

/// Row-major depth image in metres. `0.0` and NaN mean "no measurement".
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: u32,
    pub width: u32,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn new(height: u32, width: u32, data: Vec<f32>) -> Result<Self, FormatError> {
        if data.len() != height as usize * width as usize {
            return Err(FormatError::invalid(
                DEPTH_FORMAT,
                "data",
                format!("expected {} values, found {}", height as usize * width as usize, data.len()),
            ));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: u32, width: u32, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height as usize * width as usize],
        }
    }

    pub fn measurement(&self, x: u32, y: u32) -> Option<f32> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let d = self.data[y as usize * self.width as usize + x as usize];
        (d.is_finite() && d != 0.0).then_some(d)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_header(DEPTH_MAGIC, 1);
        w.u32(self.height);
        w.u32(self.width);
        w.f32_slice(&self.data);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(DEPTH_FORMAT, bytes);
        r.header(DEPTH_MAGIC, 1)?;
        let height = r.u32("H")?;
        let width = r.u32("W")?;
        let n = r.check_capacity(height as u64 * width as u64, 4, "H*W")?;
        let data = r.f32_vec(n, "depth")?;
        r.finish()?;
        Ok(Self { height, width, data })
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        write_file(path, &self.to_bytes())
    }
}

/// A posed RGB-D frame.
#[derive(Debug, Clone)]
pub struct CameraFrame {
    pub width: u32,
    pub height: u32,
    /// 3x3 row-major intrinsic matrix.
    pub intrinsics: [f64; 9],
    /// 3x4 row-major world-to-camera transform `(R | t)`.
    pub extrinsics: [f64; 12],
    pub depth: DepthMap,
    pub pixel_embeddings: Option<PathBuf>,
    pub rgb: Option<PathBuf>,
}

impl CameraFrame {
    pub fn new(
        width: u32,
        height: u32,
        intrinsics: [f64; 9],
        extrinsics: [f64; 12],
        depth: DepthMap,
    ) -> Result<Self, SceneError> {
        let frame = Self {
            width,
            height,
            intrinsics,
            extrinsics,
            depth,
            pixel_embeddings: None,
            rgb: None,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |reason: String| Err(SceneError::InvalidFrame(reason));
        if self.width == 0 || self.height == 0 {
            return bad(format!("width/height must be positive, got {}x{}", self.width, self.height));
        }
        if !(self.fx() > 0.0) || !(self.fy() > 0.0) {
            return bad(format!("intrinsics: fx, fy must be > 0, got {}, {}", self.fx(), self.fy()));
        }
        if !(0.0..self.width as f64).contains(&self.cx()) {
            return bad(format!("intrinsics: cx {} outside [0, {})", self.cx(), self.width));
        }
        if !(0.0..self.height as f64).contains(&self.cy()) {
            return bad(format!("intrinsics: cy {} outside [0, {})", self.cy(), self.height));
        }
        if self.depth.height != self.height || self.depth.width != self.width {
            return bad(format!(
                "depth: dimensions {}x{} differ from frame {}x{}",
                self.depth.width, self.depth.height, self.width, self.height
            ));
        }
        Ok(())
    }

    pub fn fx(&self) -> f64 {
        self.intrinsics[0]
    }
    pub fn fy(&self) -> f64 {
        self.intrinsics[4]
    }
    pub fn cx(&self) -> f64 {
        self.intrinsics[2]
    }
    pub fn cy(&self) -> f64 {
        self.intrinsics[5]
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Camera-space coordinates of a world point.
    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let e = &self.extrinsics;
        [
            e[0] * p[0] + e[1] * p[1] + e[2] * p[2] + e[3],
            e[4] * p[0] + e[5] * p[1] + e[6] * p[2] + e[7],
            e[8] * p[0] + e[9] * p[1] + e[10] * p[2] + e[11],
        ]
    }

    /// Floored pixel of a homogeneous image point, if it is in front of the
    /// camera and inside the image.
    pub fn pixel_of(&self, uvw: [f64; 3]) -> Option<[u32; 2]> {
        let [u, v, w] = uvw;
        if !(w > 0.0) {
            return None;
        }
        let x = (u / w).floor();
        let y = (v / w).floor();
        if x >= 0.0 && x <= (self.width - 1) as f64 && y >= 0.0 && y <= (self.height - 1) as f64 {
            Some([x as u32, y as u32])
        } else {
            None
        }
    }
}

/// `(u, v, w) = I · (R|t) · p`; `w` is the camera-space depth.
pub fn project_point(frame: &CameraFrame, p: [f64; 3]) -> [f64; 3] {
    let c = frame.to_camera(p);
    let k = &frame.intrinsics;
    [
        k[0] * c[0] + k[1] * c[1] + k[2] * c[2],
        k[3] * c[0] + k[4] * c[1] + k[5] * c[2],
        k[6] * c[0] + k[7] * c[1] + k[8] * c[2],
    ]
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct PixelBox {
    pub min_x: u32,
    pub min_y: u32,
    pub max_x: u32,
    pub max_y: u32,
}

impl PixelBox {
    pub fn new(min_x: u32, min_y: u32, max_x: u32, max_y: u32) -> Self {
        Self { min_x, min_y, max_x, max_y }
    }

    /// Pixel count `(max_x-min_x+1)·(max_y-min_y+1)`.
    pub fn area(&self) -> u64 {
        (self.max_x - self.min_x + 1) as u64 * (self.max_y - self.min_y + 1) as u64
    }

    /// Geometric extent `(max_x-min_x)·(max_y-min_y)`; zero for a line or a point.
    pub fn extent(&self) -> u64 {
        (self.max_x - self.min_x) as u64 * (self.max_y - self.min_y) as u64
    }

    pub fn union(&self, other: &PixelBox) -> PixelBox {
        PixelBox {
            min_x: self.min_x.min(other.min_x),
            min_y: self.min_y.min(other.min_y),
            max_x: self.max_x.max(other.max_x),
            max_y: self.max_y.max(other.max_y),
        }
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        (self.min_x..=self.max_x).contains(&x) && (self.min_y..=self.max_y).contains(&y)
    }

    pub fn center(&self) -> [f64; 2] {
        [
            (self.min_x as f64 + self.max_x as f64) / 2.0,
            (self.min_y as f64 + self.max_y as f64) / 2.0,
        ]
    }

    /// Grows the box by `scale` around its centre and clamps it to a
    /// `width × height` image. Scales below one are treated as one.
    pub fn expand(&self, scale: f32, width: u32, height: u32) -> PixelBox {
        let s = (scale as f64).max(1.0);
        let [cx, cy] = self.center();
        let hw = (self.max_x - self.min_x) as f64 / 2.0 * s;
        let hh = (self.max_y - self.min_y) as f64 / 2.0 * s;
        let clamp = |v: f64, hi: u32| v.round().clamp(0.0, (hi - 1) as f64) as u32;
        PixelBox {
            min_x: clamp(cx - hw, width),
            min_y: clamp(cy - hh, height),
            max_x: clamp(cx + hw, width),
            max_y: clamp(cy + hh, height),
        }
    }
}

/// Projection of one instance into one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedInstance {
    pub frame: usize,
    pub instance: InstanceId,
    /// One entry per valid point, in point order.
    pub pixels: Vec<[u32; 2]>,
    pub point_count: usize,
    pub vis: f64,
    pub box2d: Option<PixelBox>,
}

impl ProjectedInstance {
    /// Box area as a fraction of the image.
    pub fn area_fraction(&self, width: u32, height: u32) -> f64 {
        self.box2d
            .map(|b| b.area() as f64 / (width as f64 * height as f64))
            .unwrap_or(0.0)
    }
}

/// Pixel of a world point if it passes every validity check.
pub fn valid_pixel(frame: &CameraFrame, p: [f64; 3], t_occ: f64) -> Option<[u32; 2]> {
    let uvw = project_point(frame, p);
    let px = frame.pixel_of(uvw)?;
    let d = frame.depth.measurement(px[0], px[1])? as f64;
    (uvw[2] - d <= t_occ).then_some(px)
}

pub fn project_instance(
    frame: &CameraFrame,
    frame_index: usize,
    cloud: &ScenePointCloud,
    instances: &InstanceSet,
    id: InstanceId,
    t_occ: f64,
) -> Result<ProjectedInstance, SceneError> {
    if !(t_occ > 0.0) {
        return Err(SceneError::InvalidParameter(format!("t_occ must be > 0, got {t_occ}")));
    }
    let indices = instances.points_of(id)?;
    let mut pixels = Vec::new();
    let mut bbox: Option<PixelBox> = None;
    for &idx in indices {
        let p = cloud.point_f64(idx);
        if let Some(px @ [x, y]) = valid_pixel(frame, p, t_occ) {
            pixels.push(px);
            let b = PixelBox::new(x, y, x, y);
            bbox = Some(bbox.map_or(b, |acc| acc.union(&b)));
        }
    }
    Ok(ProjectedInstance {
        frame: frame_index,
        instance: id,
        vis: pixels.len() as f64 / indices.len() as f64,
        point_count: indices.len(),
        pixels,
        box2d: bbox,
    })
}

/// Nearest point per pixel after splatting every point of the cloud: the
/// z-buffer used to synthesise depth maps and label images for fixtures.
pub fn splat_points(
    frame_size: (u32, u32),
    intrinsics: [f64; 9],
    extrinsics: [f64; 12],
    cloud: &ScenePointCloud,
) -> Vec<Option<(f32, usize)>> {
    let (width, height) = frame_size;
    let frame = CameraFrame {
        width,
        height,
        intrinsics,
        extrinsics,
        depth: DepthMap::filled(height, width, 0.0),
        pixel_embeddings: None,
        rgb: None,
    };
    let mut zbuf: Vec<Option<(f32, usize)>> = vec![None; width as usize * height as usize];
    for idx in 0..cloud.len() {
        let uvw = project_point(&frame, cloud.point_f64(idx));
        if let Some([x, y]) = frame.pixel_of(uvw) {
            let slot = &mut zbuf[y as usize * width as usize + x as usize];
            let w = uvw[2] as f32;
            if slot.map_or(true, |(d, _)| w < d) {
                *slot = Some((w, idx));
            }
        }
    }
    zbuf
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDENTITY: [f64; 12] = [1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1., 0.];

    fn camera(extrinsics: [f64; 12], depth: f32) -> CameraFrame {
        CameraFrame::new(
            128,
            128,
            [100., 0., 64., 0., 100., 64., 0., 0., 1.],
            extrinsics,
            DepthMap::filled(128, 128, depth),
        )
        .unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let [u, v, w] = project_point(&camera(IDENTITY, 2.0), [0., 0., 2.]);
        assert_eq!((u / w, v / w, w), (64.0, 64.0, 2.0));
    }

    #[test]
    fn off_axis_point() {
        let [u, v, w] = project_point(&camera(IDENTITY, 2.0), [1., 0., 2.]);
        assert!((u / w - 114.0).abs() < 1e-12);
        assert!((v / w - 64.0).abs() < 1e-12);
    }

    #[test]
    fn point_on_camera_plane_is_invalid() {
        let mut e = IDENTITY;
        e[11] = 1.0;
        let frame = camera(e, 2.0);
        let uvw = project_point(&frame, [0., 0., -1.]);
        assert_eq!(uvw[2], 0.0);
        assert!(frame.pixel_of(uvw).is_none());
    }

    #[test]
    fn occluded_point_rejected() {
        let frame = camera(IDENTITY, 1.0);
        assert!(valid_pixel(&frame, [0., 0., 2.0], 0.1).is_none());
        assert!(valid_pixel(&frame, [0., 0., 1.05], 0.1).is_some());
    }

    #[test]
    fn missing_depth_rejects() {
        let mut frame = camera(IDENTITY, 0.0);
        assert!(valid_pixel(&frame, [0., 0., 2.0], 0.1).is_none());
        frame.depth = DepthMap::filled(128, 128, f32::NAN);
        assert!(valid_pixel(&frame, [0., 0., 2.0], 0.1).is_none());
    }

    #[test]
    fn frame_validation() {
        let k = [100., 0., 64., 0., 100., 64., 0., 0., 1.];
        assert!(CameraFrame::new(128, 128, k, IDENTITY, DepthMap::filled(64, 128, 1.0)).is_err());
        let mut bad = k;
        bad[0] = 0.0;
        assert!(CameraFrame::new(128, 128, bad, IDENTITY, DepthMap::filled(128, 128, 1.0)).is_err());
        let mut bad = k;
        bad[2] = 128.0;
        assert!(CameraFrame::new(128, 128, bad, IDENTITY, DepthMap::filled(128, 128, 1.0)).is_err());
    }

    #[test]
    fn box_union_and_expand() {
        let u = PixelBox::new(0, 0, 10, 10).union(&PixelBox::new(20, 20, 30, 30));
        assert_eq!(u, PixelBox::new(0, 0, 30, 30));
        assert_eq!(u.area(), 31 * 31);
        assert_eq!(PixelBox::new(10, 10, 20, 20).expand(2.0, 100, 100), PixelBox::new(5, 5, 25, 25));
        assert_eq!(PixelBox::new(0, 0, 20, 20).expand(2.0, 25, 25), PixelBox::new(0, 0, 24, 24));
        assert_eq!(PixelBox::new(3, 4, 9, 9).expand(1.0, 100, 100), PixelBox::new(3, 4, 9, 9));
    }

    #[test]
    fn depth_roundtrip_keeps_nan_bits() {
        let d = DepthMap::new(2, 2, vec![0.0, f32::NAN, 1.5, -0.0]).unwrap();
        let bytes = d.to_bytes();
        let back = DepthMap::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
    }
}
