//! Camera model, image containers and per-frame geometry shared by the rest
//! of the crate.

mod camera;
mod distance;
mod frame;
mod image;
pub mod io;
mod mesh;
mod raster;

pub use camera::CameraIntrinsics;
pub use distance::{distance_map, DistanceMap};
pub use frame::{RgbdFrame, LUMA};
pub use image::{image_gradient, resample, GradientField, Image, Sample};
pub use mesh::{frame_to_mesh, toward_camera, SurfaceMesh, DEFAULT_DISCONTINUITY};
pub use raster::{rasterize, Fragment, Raster};
