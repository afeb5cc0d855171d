pub mod ci;
pub mod ellipsoids;
pub mod error;
pub mod joint;
pub mod known_cross;
pub mod linalg;
pub mod problem;
pub mod sampling;
pub mod sim;
pub mod verify;
