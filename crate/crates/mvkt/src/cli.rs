//! Command-line entry point (placeholder while lower layers build).

pub fn run() -> i32 {
    0
}
