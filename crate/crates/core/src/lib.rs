//! Global re-localization for 3D LiDAR scans in prebuilt point-cloud maps.
//!
//! The pipeline: partition the map into per-pose submaps along its
//! trajectory, project clouds to panoramic range images, extract a
//! place/orientation descriptor pair per submap (learned CNN or spectral
//! baseline), index the place vectors in an exact k-d tree, retrieve top-k
//! candidates for a query scan, seed an SE(3) estimate from the candidate
//! pose and a regressed yaw, refine it with point-to-point ICP, and fire
//! re-localization autonomously when the classifier reports a junction.

pub mod descriptor;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod kdtree;
pub mod model;
pub mod partition;
pub mod pose;
pub mod projection;
pub mod sim;
pub mod spectral;
pub mod tensor;
pub mod trigger;

mod db;

pub use db::{CloudRef, DatabaseError, DescriptorDatabase, SubmapRecord};
pub use descriptor::{BackendError, DescriptorBackend, DescriptorPair, DESCRIPTOR_DIM};
pub use geometry::{
    transform_cloud, wrap_angle, yaw_rotation, Point3, PointCloud, PoseSE3, Trajectory,
    TrajectoryNode,
};
pub use projection::{project, shift_columns, ProjectionParams, RangeImage};
