//! The denoising network: layers with explicit backward passes, the
//! WavResNet topology, SGD with clipping and a geometric learning-rate
//! schedule, and `WRN1` checkpoints.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod optim;
pub mod tensor;

pub use checkpoint::{check_topology, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use layers::{
    batchnorm_backward, batchnorm_forward, concat_backward, concat_forward, conv2d_backward,
    conv2d_forward, relu_backward, relu_forward, BatchNormLayer, BnCache, BnGrads, ConvGrads,
    ConvLayer, Mode,
};
pub use model::{
    sample_parameter_coords, wavresnet_backward, wavresnet_forward, wavresnet_infer, Gradients, NetCache, NetworkParams,
    Topology, Unit, UnitGrads,
};
pub use optim::{clip_gradients, lr_schedule, masked_mse_loss, mse_loss, sgd_step, Sgd};
pub use tensor::Tensor4;
