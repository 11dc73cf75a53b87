//! Gyroscope-guided image alignment for rolling-shutter cameras with optical
//! image stabilization.
//!
//! - [`geometry`]: rotations, intrinsics, homographies and flow synthesis.
//! - [`gyro`]: gyro logs to per-patch homographies and gyro flow.
//! - [`mixtures`]: fundamental mixtures and rotation-only ground-truth flow.
//! - [`synth`]: rolling-shutter / OIS simulator used as the ground-truth oracle.
//! - [`compensator`]: least-squares correction of gyro homographies.
//! - [`eval`]: geometry-distance metric and reports.

pub mod camera;
pub mod compensator;
pub mod eval;
pub mod flo;
pub mod geometry;
pub mod gyro;
pub mod io;
pub mod mixtures;
pub mod synth;

pub use camera::{AxisMap, RsCameraModel, RsTiming};
pub use compensator::PatchCorrection;
pub use eval::{AnnotationPair, Category, EvalReport};
pub use geometry::{
    CameraIntrinsics, FlowField, Homography, HomographyArray, Point2, RotationMatrix,
    RotationVector,
};
pub use gyro::{FrameStamp, GyroSample};
pub use mixtures::{Correspondence, FundamentalMixture};
pub use synth::{Manifest, SynthBundle, SynthConfig};
