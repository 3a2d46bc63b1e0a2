//! Dexterous grasp dataset generation from a handful of human demonstrations,
//! plus a behavior-cloning policy trained on the generated data.
//!
//! Stages: [`retarget`] human keypoint trajectories onto a robot hand,
//! template-match them across object poses, refine them by correlated
//! perturbation with rejection in [`sim`], augment and funnel them
//! ([`refine`]), persist them ([`dataset`]), and learn a closed-loop
//! [`policy`] from the result.

pub mod dataset;
pub mod fixtures;
pub mod geometry;
pub mod kinematics;
pub mod policy;
pub mod refine;
pub mod retarget;
pub mod sim;

pub use geometry::{geodesic_distance, relative_pose, Rotation, SE3Pose, Vec3};
pub use kinematics::{forward_kinematics, HandModel, HandState, HumanFrame, JointConfig};
