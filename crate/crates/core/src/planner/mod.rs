//! Global planning: waypoint graph, A* routing, spline smoothing and reference sampling.

pub mod graph;
pub mod route;
pub mod spline;

pub use graph::{astar_route, build_graph, EdgeKind, NodeId, Pose, RouteGraph, Waypoint};
pub use route::{sample_reference, ReferenceOptions, ReferenceTrajectory, RoutePath, RouteProjection};
pub use spline::{fit_spline, CubicSpline, PathSpline};
