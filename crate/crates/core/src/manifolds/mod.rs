//! Geometry of S^{2n+1}, its lens quotients and the Heisenberg model.

pub mod ball;
pub mod cc;
pub mod heisenberg;
pub mod lens;
pub mod path;
pub mod sphere;

pub use ball::GaugeBall;
pub use cc::{cc_distance, heisenberg_distance_exact, penalty_oracle, CcOptions, CcReport, PenaltyReport};
pub use heisenberg::{dilation, heisenberg_chart, HeisenbergChart, HeisenbergPoint, BRACKET_CONSTANT};
pub use lens::{lens_distance, lens_project, LensPoint, LensSpec};
pub use path::{path_length, HorizontalPath};
pub use sphere::{
    contact_form, exp_horizontal, frame_coordinates, horizontal_frame, horizontal_from_frame, horizontal_project, reeb, sr_inner, HorizontalVector,
    SpherePoint, TangentVector,
};
