pub mod geometry;
pub mod grid5g;
pub mod linklevel;
pub mod measurements;
pub mod beam;
pub mod estimators;
pub mod sim;
