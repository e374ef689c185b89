use std::collections::HashMap;

use crate::{kernels, Backend, NdError, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Dense { w: Var, b: Var, x: Var },
    Conv { w: Var, b: Var, x: Var },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddChannels { x: Var, v: Var },
    MeanPool(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Softmax(Var),
    MinMax(Var),
    Ln(Var),
    Square(Var),
    Scale(Var, f64),
    Gather { x: Var, index: Vec<usize> },
    CanonicalSum(Vec<Var>),
    Sum(Var),
    Dot { x: Var, c: Tensor },
}

/// Tape of primal values and the ops that produced them.
///
/// One graph records one forward pass; call [`Graph::backward`] on a scalar
/// output to obtain gradients for every parameter that was read.
#[derive(Default)]
pub struct Graph {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    params: HashMap<ParamId, Var>,
}

/// Gradients keyed by parameter id. Parameters that did not influence the
/// output are absent.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    /// Dense gradient list aligned with `store`, zero for untouched params.
    pub fn to_dense(&self, store: &ParamStore) -> Vec<Tensor> {
        store
            .ids()
            .map(|id| match self.grads.get(&id) {
                Some(g) => g.clone(),
                None => Tensor::zeros(store.get(id).shape()),
            })
            .collect()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Reverse-mode sweep from a scalar `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut adj: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Tensor::full(self.values[output.0].shape(), 1.0));

        fn acc(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut adj[v.0] {
                Some(t) => t.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => {
                    adj[i] = Some(g);
                }
                Op::Dense { w, b, x } => {
                    let (dw, db, dx) = kernels::dense_backward(self.value(*w), self.value(*x), &g);
                    acc(&mut adj, *w, dw);
                    acc(&mut adj, *b, db);
                    acc(&mut adj, *x, dx);
                }
                Op::Conv { w, b, x } => {
                    let (dw, db, dx) = kernels::conv2d_backward(self.value(*w), self.value(*x), &g);
                    acc(&mut adj, *w, dw);
                    acc(&mut adj, *b, db);
                    acc(&mut adj, *x, dx);
                }
                Op::Relu(x) => {
                    let dx = kernels::relu_backward(self.value(*x), &g);
                    acc(&mut adj, *x, dx);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *b, g.map(|v| -v));
                    acc(&mut adj, *a, g);
                }
                Op::AddChannels { x, v } => {
                    let dv = kernels::add_channels_backward(self.value(*x).shape(), &g);
                    acc(&mut adj, *v, dv);
                    acc(&mut adj, *x, g);
                }
                Op::MeanPool(x) => {
                    let dx = kernels::mean_pool_backward(self.value(*x).shape(), &g);
                    acc(&mut adj, *x, dx);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        let piece = Tensor::new(
                            self.value(*p).shape(),
                            g.data()[offset..offset + n].to_vec(),
                        )
                        .expect("shape");
                        offset += n;
                        acc(&mut adj, *p, piece);
                    }
                }
                Op::Slice { x, start } => {
                    let xs = self.value(*x).shape();
                    let hw = xs[1] * xs[2];
                    let mut dx = Tensor::zeros(xs);
                    dx.data_mut()[start * hw..start * hw + g.len()].copy_from_slice(g.data());
                    acc(&mut adj, *x, dx);
                }
                Op::Softmax(x) => {
                    let dx = kernels::softmax_backward(&self.values[i], &g);
                    acc(&mut adj, *x, dx);
                }
                Op::MinMax(x) => {
                    let dx = kernels::minmax_scale_backward(self.value(*x), &self.values[i], &g);
                    acc(&mut adj, *x, dx);
                }
                Op::Ln(x) => {
                    let xv = self.value(*x);
                    let data = g.data().iter().zip(xv.data()).map(|(d, v)| d / v).collect();
                    acc(&mut adj, *x, Tensor::new(xv.shape(), data).expect("shape"));
                }
                Op::Square(x) => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(d, v)| 2.0 * v * d)
                        .collect();
                    acc(&mut adj, *x, Tensor::new(xv.shape(), data).expect("shape"));
                }
                Op::Scale(x, c) => {
                    acc(&mut adj, *x, g.map(|v| v * c));
                }
                Op::Gather { x, index } => {
                    let dx = kernels::gather_backward(self.value(*x).shape(), index, &g);
                    acc(&mut adj, *x, dx);
                }
                Op::CanonicalSum(parts) => {
                    for p in parts {
                        acc(&mut adj, *p, g.clone());
                    }
                }
                Op::Sum(x) => {
                    let g0 = g.item();
                    acc(&mut adj, *x, Tensor::full(self.value(*x).shape(), g0));
                }
                Op::Dot { x, c } => {
                    let g0 = g.item();
                    acc(&mut adj, *x, c.map(|v| v * g0));
                }
            }
        }

        let grads = self
            .params
            .iter()
            .filter_map(|(&id, &var)| adj.get(var.0).and_then(|g| g.clone()).map(|g| (id, g)))
            .collect();
        Gradients { grads }
    }
}

impl Backend for Graph {
    type T = Var;

    fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf);
        self.params.insert(id, v);
        v
    }
    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }
    fn tensor<'a>(&'a self, x: &'a Var) -> &'a Tensor {
        self.value(*x)
    }
    fn dense(&mut self, w: &Var, b: &Var, x: &Var) -> Result<Var, NdError> {
        let y = kernels::dense(self.value(*w), self.value(*b), self.value(*x))?;
        Ok(self.push(y, Op::Dense { w: *w, b: *b, x: *x }))
    }
    fn conv2d(&mut self, w: &Var, b: &Var, x: &Var) -> Result<Var, NdError> {
        let y = kernels::conv2d(self.value(*w), self.value(*b), self.value(*x))?;
        Ok(self.push(y, Op::Conv { w: *w, b: *b, x: *x }))
    }
    fn relu(&mut self, x: &Var) -> Var {
        let y = kernels::relu(self.value(*x));
        self.push(y, Op::Relu(*x))
    }
    fn add(&mut self, a: &Var, b: &Var) -> Result<Var, NdError> {
        let y = kernels::add(self.value(*a), self.value(*b))?;
        Ok(self.push(y, Op::Add(*a, *b)))
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var, NdError> {
        let y = kernels::sub(self.value(*a), self.value(*b))?;
        Ok(self.push(y, Op::Sub(*a, *b)))
    }
    fn add_channels(&mut self, x: &Var, v: &Var) -> Result<Var, NdError> {
        let y = kernels::add_channels(self.value(*x), self.value(*v))?;
        Ok(self.push(y, Op::AddChannels { x: *x, v: *v }))
    }
    fn mean_pool(&mut self, x: &Var) -> Result<Var, NdError> {
        let y = kernels::mean_pool(self.value(*x))?;
        Ok(self.push(y, Op::MeanPool(*x)))
    }
    fn concat_channels(&mut self, parts: &[&Var]) -> Result<Var, NdError> {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| self.value(**p)).collect();
        let y = kernels::concat_channels(&tensors)?;
        Ok(self.push(y, Op::Concat(parts.iter().map(|p| **p).collect())))
    }
    fn slice_channels(&mut self, x: &Var, start: usize, len: usize) -> Result<Var, NdError> {
        let y = kernels::slice_channels(self.value(*x), start, len)?;
        Ok(self.push(y, Op::Slice { x: *x, start }))
    }
    fn softmax(&mut self, x: &Var) -> Result<Var, NdError> {
        let y = kernels::softmax(self.value(*x))?;
        Ok(self.push(y, Op::Softmax(*x)))
    }
    fn minmax_scale(&mut self, x: &Var) -> Result<Var, NdError> {
        let y = kernels::minmax_scale(self.value(*x))?;
        Ok(self.push(y, Op::MinMax(*x)))
    }
    fn ln(&mut self, x: &Var) -> Var {
        let y = self.value(*x).map(f64::ln);
        self.push(y, Op::Ln(*x))
    }
    fn square(&mut self, x: &Var) -> Var {
        let y = self.value(*x).map(|v| v * v);
        self.push(y, Op::Square(*x))
    }
    fn scale(&mut self, x: &Var, c: f64) -> Var {
        let y = self.value(*x).map(|v| v * c);
        self.push(y, Op::Scale(*x, c))
    }
    fn gather(&mut self, x: &Var, index: &[usize]) -> Result<Var, NdError> {
        let y = kernels::gather(self.value(*x), index)?;
        Ok(self.push(
            y,
            Op::Gather {
                x: *x,
                index: index.to_vec(),
            },
        ))
    }
    fn canonical_sum(&mut self, parts: &[&Var]) -> Result<Var, NdError> {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| self.value(**p)).collect();
        let y = kernels::canonical_sum(&tensors)?;
        Ok(self.push(y, Op::CanonicalSum(parts.iter().map(|p| **p).collect())))
    }
    fn sum(&mut self, x: &Var) -> Var {
        let y = kernels::sum(self.value(*x));
        self.push(y, Op::Sum(*x))
    }
    fn dot_const(&mut self, x: &Var, c: &Tensor) -> Result<Var, NdError> {
        let y = kernels::dot(self.value(*x), c)?;
        Ok(self.push(y, Op::Dot { x: *x, c: c.clone() }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient_at_three() {
        let mut store = ParamStore::new();
        let id = store.insert("theta", Tensor::scalar(3.0)).unwrap();
        let mut g = Graph::new();
        let t = g.param(&store, id);
        let y = g.square(&t);
        let grads = g.backward(y);
        assert_eq!(grads.get(id).unwrap().item(), 6.0);
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let mut store = ParamStore::new();
        let id = store.insert("theta", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut g = Graph::new();
        let _t = g.param(&store, id);
        let c = g.constant(Tensor::scalar(4.0));
        let grads = g.backward(c);
        let dense = grads.to_dense(&store);
        assert!(dense[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn param_is_recorded_once() {
        let mut store = ParamStore::new();
        let id = store.insert("theta", Tensor::scalar(2.0)).unwrap();
        let mut g = Graph::new();
        let a = g.param(&store, id);
        let b = g.param(&store, id);
        assert_eq!(a, b);
        let y = g.add(&a, &b).unwrap();
        assert_eq!(g.backward(y).get(id).unwrap().item(), 2.0);
    }
}
