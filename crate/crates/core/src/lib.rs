pub mod bench;
pub mod data;
pub mod model;
pub mod numerics;
pub mod spatial;
pub mod training;
