//! Matrix-valued functions in `C(T^k) ⊗ M_m`, their block-diagonal
//! evaluations, permutation intertwiners and operator norms.

mod function;
mod intertwiner;
mod matrix;
mod trig;

pub use function::{MatrixFunction, ScalarFn};
pub use intertwiner::{
    evaluate_diag, intertwining_defect, intertwining_defect_dense, modulus_defect_bound, permutation_intertwiner,
    IntertwinerMatrix,
};
pub use matrix::{power_iteration, spectral_norm, write_matrix_csv, BlockDiag, CMatrix, POWER_MAX_ITER, POWER_TOL};
pub use trig::TrigPoly;
