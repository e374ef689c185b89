use crate::{kernels, NdError, ParamId, ParamStore, Tensor};

/// The operation set model code is written against.
///
/// [`Eval`] runs kernels directly; [`crate::Graph`] runs the same kernels and
/// records them for differentiation. Model code generic over `Backend`
/// therefore has one definition for inference and training.
pub trait Backend {
    type T: Clone;

    fn param(&mut self, store: &ParamStore, id: ParamId) -> Self::T;
    fn constant(&mut self, t: Tensor) -> Self::T;
    fn tensor<'a>(&'a self, x: &'a Self::T) -> &'a Tensor;

    fn dense(&mut self, w: &Self::T, b: &Self::T, x: &Self::T) -> Result<Self::T, NdError>;
    fn conv2d(&mut self, w: &Self::T, b: &Self::T, x: &Self::T) -> Result<Self::T, NdError>;
    fn relu(&mut self, x: &Self::T) -> Self::T;
    fn add(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T, NdError>;
    fn sub(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T, NdError>;
    fn add_channels(&mut self, x: &Self::T, v: &Self::T) -> Result<Self::T, NdError>;
    fn mean_pool(&mut self, x: &Self::T) -> Result<Self::T, NdError>;
    fn concat_channels(&mut self, parts: &[&Self::T]) -> Result<Self::T, NdError>;
    fn slice_channels(&mut self, x: &Self::T, start: usize, len: usize) -> Result<Self::T, NdError>;
    fn softmax(&mut self, x: &Self::T) -> Result<Self::T, NdError>;
    fn minmax_scale(&mut self, x: &Self::T) -> Result<Self::T, NdError>;
    fn ln(&mut self, x: &Self::T) -> Self::T;
    fn square(&mut self, x: &Self::T) -> Self::T;
    fn scale(&mut self, x: &Self::T, c: f64) -> Self::T;
    fn gather(&mut self, x: &Self::T, index: &[usize]) -> Result<Self::T, NdError>;
    fn canonical_sum(&mut self, parts: &[&Self::T]) -> Result<Self::T, NdError>;
    fn sum(&mut self, x: &Self::T) -> Self::T;
    fn dot_const(&mut self, x: &Self::T, c: &Tensor) -> Result<Self::T, NdError>;

    /// Residual block `x + conv2(relu(conv1(x)))`.
    fn residual_block(
        &mut self,
        w1: &Self::T,
        b1: &Self::T,
        w2: &Self::T,
        b2: &Self::T,
        x: &Self::T,
    ) -> Result<Self::T, NdError> {
        let h = self.conv2d(w1, b1, x)?;
        let h = self.relu(&h);
        let f = self.conv2d(w2, b2, &h)?;
        self.add(x, &f)
    }
}

/// Backend that evaluates eagerly without recording anything.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eval;

impl Backend for Eval {
    type T = Tensor;

    fn param(&mut self, store: &ParamStore, id: ParamId) -> Tensor {
        store.get(id).clone()
    }
    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }
    fn tensor<'a>(&'a self, x: &'a Tensor) -> &'a Tensor {
        x
    }
    fn dense(&mut self, w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor, NdError> {
        kernels::dense(w, b, x)
    }
    fn conv2d(&mut self, w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor, NdError> {
        kernels::conv2d(w, b, x)
    }
    fn relu(&mut self, x: &Tensor) -> Tensor {
        kernels::relu(x)
    }
    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, NdError> {
        kernels::add(a, b)
    }
    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, NdError> {
        kernels::sub(a, b)
    }
    fn add_channels(&mut self, x: &Tensor, v: &Tensor) -> Result<Tensor, NdError> {
        kernels::add_channels(x, v)
    }
    fn mean_pool(&mut self, x: &Tensor) -> Result<Tensor, NdError> {
        kernels::mean_pool(x)
    }
    fn concat_channels(&mut self, parts: &[&Tensor]) -> Result<Tensor, NdError> {
        kernels::concat_channels(parts)
    }
    fn slice_channels(&mut self, x: &Tensor, start: usize, len: usize) -> Result<Tensor, NdError> {
        kernels::slice_channels(x, start, len)
    }
    fn softmax(&mut self, x: &Tensor) -> Result<Tensor, NdError> {
        kernels::softmax(x)
    }
    fn minmax_scale(&mut self, x: &Tensor) -> Result<Tensor, NdError> {
        kernels::minmax_scale(x)
    }
    fn ln(&mut self, x: &Tensor) -> Tensor {
        x.map(f64::ln)
    }
    fn square(&mut self, x: &Tensor) -> Tensor {
        x.map(|v| v * v)
    }
    fn scale(&mut self, x: &Tensor, c: f64) -> Tensor {
        x.map(|v| v * c)
    }
    fn gather(&mut self, x: &Tensor, index: &[usize]) -> Result<Tensor, NdError> {
        kernels::gather(x, index)
    }
    fn canonical_sum(&mut self, parts: &[&Tensor]) -> Result<Tensor, NdError> {
        kernels::canonical_sum(parts)
    }
    fn sum(&mut self, x: &Tensor) -> Tensor {
        kernels::sum(x)
    }
    fn dot_const(&mut self, x: &Tensor, c: &Tensor) -> Result<Tensor, NdError> {
        kernels::dot(x, c)
    }
}
