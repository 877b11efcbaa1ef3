//! Finite-stage models of automorphisms with the tracial (cyclic) Rokhlin
//! property on inductive limits `lim (C(X) ⊗ M_{k(n)}, φ_n)` over minimal
//! torus dynamics.
//!
//! The crate is organised bottom-up:
//!
//! * [`dynamics`]: the torus, its metric and the minimal maps ψ.
//! * [`measure`]: empirical measures, ε-dense sampling and measure comparison.
//! * [`matching`]: threshold and bottleneck matchings between a point set and its image.
//! * [`matalg`]: matrix-valued trigonometric functions, block-diagonal evaluation,
//!   permutation intertwiners and operator norms.
//! * [`tower`]: Rokhlin towers and the tracial Rokhlin checks.
//! * [`ktheory`]: exact integer bookkeeping for induced maps on `K_1`.
//! * [`limitalg`]: the stage models, connecting maps, intertwiners and traces.

pub mod dynamics;
pub mod error;
pub mod ktheory;
pub mod limitalg;
pub mod matalg;
pub mod matching;
pub mod measure;
pub mod tower;

pub use dynamics::{MinimalMap, TorusPoint};
pub use error::{Error, Result};
pub use matching::Permutation;

/// Complex scalars used for function values and matrix entries.
pub type C64 = num_complex::Complex64;
