//! Layer stacks for composite C^{1,γ} domains: rotated frames, implicit
//! graph continuation, Hölder and flatness checks, and chain decomposition
//! of nested subdomains.

pub mod cli;
pub mod composite;
pub mod domains;
pub mod frames;
pub mod graphsolve;
pub mod layers;
pub mod grid;
mod linalg;
pub mod rootfind;
pub mod verify;
