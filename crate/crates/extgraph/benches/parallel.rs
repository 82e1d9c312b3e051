//! Placeholder; real benchmarks land with the model fitting code.
fn main() {}
