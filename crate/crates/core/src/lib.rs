pub mod analysis;
pub mod certificate;
pub mod design;
pub mod linalg;
pub mod mat;
pub mod model;
pub mod poly;
pub mod sdp;
pub mod sos;
