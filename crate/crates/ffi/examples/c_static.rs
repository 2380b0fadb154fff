//! Static archive of the C API, rebuilt by `cargo test` so the C link test
//! has something to link against.
pub use tmspace_ffi::*;
