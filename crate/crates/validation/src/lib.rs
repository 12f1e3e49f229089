//! Host crate for the `acceptance` test target, kept separate so that it
//! runs after every other test binary in the workspace.
