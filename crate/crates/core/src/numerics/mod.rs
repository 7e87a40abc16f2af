//! Dense `f64` arrays and seeded random streams.

mod rng;
mod tensor;

pub use rng::{derive_seed, gaussian, Rng};
pub use tensor::{
    matmul_a_bt_into, matmul_at_b_acc, matmul_into, sign, ElementOp, Operand, Tensor,
};
