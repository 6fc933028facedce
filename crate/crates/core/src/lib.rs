pub mod geometry;
pub mod isa;
pub mod timing;
pub mod device;
pub mod backend;
pub mod routines;
pub mod campaign;
