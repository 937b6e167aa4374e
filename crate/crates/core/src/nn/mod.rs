//! Minimal neural-network building blocks with hand-written gradients.

pub mod adam;
pub mod layers;
pub mod scalar;
pub mod tensor;

pub use adam::Adam;
pub use layers::{
    relu_backward, relu_inplace, sigmoid_backward, sigmoid_inplace, softmax_rows, BatchNorm2d, Conv2d,
    ConvTranspose2d, Linear, Param, ParamsMut, ParamsRef,
};
pub use scalar::{gemm, Scalar};
pub use tensor::{col2im, im2col, ConvGeometry, FeatureMap, Matrix};
