//! Eager reverse-mode tape.
//!
//! Every operation computes its value immediately and records itself on the
//! tape. `backward` walks the tape in reverse and emits the gradient
//! computation as new tape nodes, so gradients are ordinary `Var`s: they can
//! feed further forward computation (unrolled inner-loop updates) and be
//! differentiated again.

use ndarray::{ArrayD, Ix1, Ix2, Ix3, Ix4, IxDyn};

use crate::error::Result;
use crate::{ensure_arg, invalid_arg};

use super::kernels;
use super::scalar::Scalar;

/// Handle to one tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T: Scalar> {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Affine { mul: T, add: T },
    LeakyRelu { slope: T },
    /// value = gy * lrelu'(x); parents [x, gy]. No gradient flows to x
    /// (the derivative is piecewise constant).
    LeakyReluGrad { slope: T },
    Sigmoid,
    Exp,
    Log,
    /// Elementwise sign, treated as locally constant.
    SignMask,
    Sum,
    /// Scalar -> given shape.
    BroadcastScalar,
    /// parents [x: (C,H,W), b: (C)].
    AddBias,
    SumSpatial,
    BroadcastSpatial,
    Conv2d { stride: usize, pad: usize },
    ConvDx { stride: usize, pad: usize, in_h: usize, in_w: usize },
    ConvDw { stride: usize, pad: usize, kh: usize, kw: usize },
    DwConv,
    DwConvDx,
    DwConvDw { kh: usize, kw: usize },
    PixelShuffle { r: usize },
    PixelUnshuffle { r: usize },
    GlobalAvgPool,
    /// parents [w: (m,n), x: (n)] -> (m).
    MatVec,
    /// parents [w: (m,n), g: (m)] -> (n) = w^T g.
    MatVecT,
    /// parents [a: (m), b: (n)] -> (m,n).
    Outer,
    Reshape,
}

struct Node<T: Scalar> {
    value: ArrayD<T>,
    op: Op<T>,
    parents: Vec<Var>,
    needs_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradient vars produced by one `backward` sweep.
pub struct Gradients {
    by_node: Vec<Option<Var>>,
}

impl Gradients {
    /// Gradient of the swept loss w.r.t. `v`, if any path carried gradient.
    pub fn get(&self, v: Var) -> Option<Var> {
        self.by_node.get(v.0).copied().flatten()
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<T>, op: Op<T>, parents: Vec<Var>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            parents,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_auto(&mut self, value: ArrayD<T>, op: Op<T>, parents: Vec<Var>) -> Var {
        let needs = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(value, op, parents, needs)
    }

    /// Constant leaf: no gradient is tracked through it.
    pub fn constant(&mut self, value: impl Into<ArrayD<T>>) -> Var {
        self.push(value.into(), Op::Leaf, vec![], false)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: impl Into<ArrayD<T>>) -> Var {
        self.push(value.into(), Op::Leaf, vec![], true)
    }

    pub fn value(&self, v: Var) -> &ArrayD<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> T {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        *self.nodes[v.0].value.iter().next().expect("scalar node")
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure_arg!(
            self.shape(a) == self.shape(b),
            "add shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        Ok(self.push_auto(value, Op::Add, vec![a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure_arg!(
            self.shape(a) == self.shape(b),
            "sub shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        Ok(self.push_auto(value, Op::Sub, vec![a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure_arg!(
            self.shape(a) == self.shape(b),
            "mul shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        Ok(self.push_auto(value, Op::Mul, vec![a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure_arg!(
            self.shape(a) == self.shape(b),
            "div shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let value = &self.nodes[a.0].value / &self.nodes[b.0].value;
        Ok(self.push_auto(value, Op::Div, vec![a, b]))
    }

    pub fn affine(&mut self, a: Var, mul: T, add: T) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| v * mul + add);
        self.push_auto(value, Op::Affine { mul, add }, vec![a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.affine(a, -T::one(), T::zero())
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.affine(a, c, T::zero())
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| if v >= T::zero() { v } else { v * slope });
        self.push_auto(value, Op::LeakyRelu { slope }, vec![a])
    }

    fn leaky_relu_grad(&mut self, x: Var, gy: Var, slope: T) -> Var {
        let mask_mul = ndarray::Zip::from(&self.nodes[x.0].value)
            .and(&self.nodes[gy.0].value)
            .map_collect(|&xv, &gv| if xv >= T::zero() { gv } else { gv * slope });
        self.push_auto(mask_mul, Op::LeakyReluGrad { slope }, vec![x, gy])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        self.push_auto(value, Op::Sigmoid, vec![a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| v.exp());
        self.push_auto(value, Op::Exp, vec![a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| v.ln());
        self.push_auto(value, Op::Log, vec![a])
    }

    pub fn sign_mask(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| {
            if v > T::zero() {
                T::one()
            } else if v < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        });
        self.push(value, Op::SignMask, vec![a], false)
    }

    // ---- reductions and broadcasts ----

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.nodes[a.0].value.sum();
        let value = ArrayD::from_elem(IxDyn(&[]), total);
        self.push_auto(value, Op::Sum, vec![a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len();
        let s = self.sum(a);
        self.scale(s, T::from_f64(1.0 / n as f64))
    }

    pub fn broadcast_scalar(&mut self, a: Var, shape: &[usize]) -> Var {
        debug_assert_eq!(self.nodes[a.0].value.len(), 1);
        let v = self.scalar_value(a);
        let value = ArrayD::from_elem(IxDyn(shape), v);
        self.push_auto(value, Op::BroadcastScalar, vec![a])
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(b).to_vec();
        ensure_arg!(
            xs.len() == 3 && bs.len() == 1 && xs[0] == bs[0],
            "add_bias expects (C,H,W) and (C), got {xs:?} and {bs:?}"
        );
        let bias = &self.nodes[b.0].value;
        let mut value = self.nodes[x.0].value.clone();
        for (c, mut plane) in value.outer_iter_mut().enumerate() {
            let bv = bias[[c]];
            plane.mapv_inplace(|v| v + bv);
        }
        Ok(self.push_auto(value, Op::AddBias, vec![x, b]))
    }

    fn sum_spatial(&mut self, x: Var) -> Var {
        let v3 = self.nodes[x.0]
            .value
            .view()
            .into_dimensionality::<Ix3>()
            .expect("sum_spatial expects 3d");
        let (c, _, _) = v3.dim();
        let mut out = ndarray::Array1::<T>::zeros(c);
        for (ch, plane) in v3.outer_iter().enumerate() {
            out[ch] = plane.sum();
        }
        self.push_auto(out.into_dyn(), Op::SumSpatial, vec![x])
    }

    fn broadcast_spatial(&mut self, b: Var, h: usize, w: usize) -> Var {
        let v1 = self.nodes[b.0]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("broadcast_spatial expects 1d");
        let c = v1.len();
        let value = ndarray::Array3::from_shape_fn((c, h, w), |(ch, _, _)| v1[ch]);
        self.push_auto(value.into_dyn(), Op::BroadcastSpatial, vec![b])
    }

    // ---- structured ops ----

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        ensure_arg!(
            xs.len() == 3 && ws.len() == 4 && xs[0] == ws[1],
            "conv2d expects (Cin,H,W) and (Cout,Cin,Kh,Kw), got {xs:?} and {ws:?}"
        );
        ensure_arg!(
            xs[1] + 2 * pad >= ws[2] && xs[2] + 2 * pad >= ws[3],
            "conv2d kernel {}x{} larger than padded input {}x{}",
            ws[2],
            ws[3],
            xs[1] + 2 * pad,
            xs[2] + 2 * pad
        );
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix3>().unwrap();
        let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let value = kernels::conv2d(&xv, &wv, stride, pad).into_dyn();
        Ok(self.push_auto(value, Op::Conv2d { stride, pad }, vec![x, w]))
    }

    fn conv_dx(&mut self, w: Var, gy: Var, in_h: usize, in_w: usize, stride: usize, pad: usize) -> Var {
        let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let gv = self.nodes[gy.0].value.view().into_dimensionality::<Ix3>().unwrap();
        let value = kernels::conv2d_dx(&wv, &gv, in_h, in_w, stride, pad).into_dyn();
        self.push_auto(value, Op::ConvDx { stride, pad, in_h, in_w }, vec![w, gy])
    }

    fn conv_dw(&mut self, x: Var, gy: Var, kh: usize, kw: usize, stride: usize, pad: usize) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix3>().unwrap();
        let gv = self.nodes[gy.0].value.view().into_dimensionality::<Ix3>().unwrap();
        let value = kernels::conv2d_dw(&xv, &gv, kh, kw, stride, pad).into_dyn();
        self.push_auto(value, Op::ConvDw { stride, pad, kh, kw }, vec![x, gy])
    }

    /// Per-channel dynamic convolution; weights (C,1,Kh,Kw) usually come
    /// from a predictor network rather than the parameter set.
    pub fn dwconv(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        ensure_arg!(
            xs.len() == 3 && ws.len() == 4 && ws[1] == 1 && xs[0] == ws[0],
            "dwconv expects (C,H,W) and (C,1,Kh,Kw), got {xs:?} and {ws:?}"
        );
        ensure_arg!(
            ws[2] % 2 == 1 && ws[3] % 2 == 1,
            "dwconv kernel dims must be odd, got {}x{}",
            ws[2],
            ws[3]
        );
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix3>().unwrap();
        let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let value = kernels::dwconv(&xv, &wv).into_dyn();
        Ok(self.push_auto(value, Op::DwConv, vec![x, w]))
    }

    fn dwconv_dx(&mut self, w: Var, gy: Var) -> Var {
        let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let gv = self.nodes[gy.0].value.view().into_dimensionality::<Ix3>().unwrap();
        let value = kernels::dwconv_dx(&wv, &gv).into_dyn();
        self.push_auto(value, Op::DwConvDx, vec![w, gy])
    }

    fn dwconv_dw(&mut self, x: Var, gy: Var, kh: usize, kw: usize) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix3>().unwrap();
        let gv = self.nodes[gy.0].value.view().into_dimensionality::<Ix3>().unwrap();
        let value = kernels::dwconv_dw(&xv, &gv, kh, kw).into_dyn();
        self.push_auto(value, Op::DwConvDw { kh, kw }, vec![x, gy])
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        ensure_arg!(
            xs.len() == 3 && xs[0] % (r * r) == 0,
            "pixel_shuffle expects channels divisible by {}, got {xs:?}",
            r * r
        );
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix3>().unwrap();
        let value = kernels::pixel_shuffle(&xv, r).into_dyn();
        Ok(self.push_auto(value, Op::PixelShuffle { r }, vec![x]))
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        ensure_arg!(
            xs.len() == 3 && xs[1] % r == 0 && xs[2] % r == 0,
            "pixel_unshuffle expects spatial dims divisible by {r}, got {xs:?}"
        );
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix3>().unwrap();
        let value = kernels::pixel_unshuffle(&xv, r).into_dyn();
        Ok(self.push_auto(value, Op::PixelUnshuffle { r }, vec![x]))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        ensure_arg!(xs.len() == 3, "global_avg_pool expects (C,H,W), got {xs:?}");
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix3>().unwrap();
        let value = kernels::global_avg_pool(&xv).into_dyn();
        Ok(self.push_auto(value, Op::GlobalAvgPool, vec![x]))
    }

    /// y = W x for W (m,n), x (n).
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        let xs = self.shape(x).to_vec();
        ensure_arg!(
            ws.len() == 2 && xs.len() == 1 && ws[1] == xs[0],
            "matvec expects (m,n) and (n), got {ws:?} and {xs:?}"
        );
        let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix1>().unwrap();
        let value = wv.dot(&xv).into_dyn();
        Ok(self.push_auto(value, Op::MatVec, vec![w, x]))
    }

    fn matvec_t(&mut self, w: Var, g: Var) -> Var {
        let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let gv = self.nodes[g.0].value.view().into_dimensionality::<Ix1>().unwrap();
        let value = wv.t().dot(&gv).into_dyn();
        self.push_auto(value, Op::MatVecT, vec![w, g])
    }

    fn outer(&mut self, a: Var, b: Var) -> Var {
        let av = self.nodes[a.0].value.view().into_dimensionality::<Ix1>().unwrap();
        let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix1>().unwrap();
        let value =
            ndarray::Array2::from_shape_fn((av.len(), bv.len()), |(i, j)| av[i] * bv[j]);
        self.push_auto(value.into_dyn(), Op::Outer, vec![a, b])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        ensure_arg!(
            n == self.nodes[x.0].value.len(),
            "reshape to {shape:?} from {:?}",
            self.shape(x)
        );
        let value = self.nodes[x.0]
            .value
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .map_err(|e| invalid_arg!("reshape: {e}"))?;
        Ok(self.push_auto(value, Op::Reshape, vec![x]))
    }

    // ---- composites ----

    /// Mean absolute error between two same-shape vars.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let m = self.sign_mask(d);
        let abs = self.mul(d, m)?;
        Ok(self.mean(abs))
    }

    /// Numerically stable softmax over a 1-d var.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        ensure_arg!(self.shape(x).len() == 1, "softmax expects a vector");
        let max = self.nodes[x.0]
            .value
            .iter()
            .cloned()
            .fold(T::neg_infinity(), T::max);
        let sh = self.affine(x, T::one(), -max);
        let e = self.exp(sh);
        let s = self.sum(e);
        let denom = self.broadcast_scalar(s, self.shape(x).to_vec().as_slice());
        self.div(e, denom)
    }

    /// Stable log-softmax over a 1-d var.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        ensure_arg!(self.shape(x).len() == 1, "log_softmax expects a vector");
        let max = self.nodes[x.0]
            .value
            .iter()
            .cloned()
            .fold(T::neg_infinity(), T::max);
        let sh = self.affine(x, T::one(), -max);
        let e = self.exp(sh);
        let s = self.sum(e);
        let lse = self.log(s);
        let shape = self.shape(x).to_vec();
        let b = self.broadcast_scalar(lse, &shape);
        self.sub(sh, b)
    }

    /// Reverse sweep from a scalar loss. Gradient nodes are appended to the
    /// tape, so the result can be differentiated again.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        ensure_arg!(
            self.nodes[loss.0].value.len() == 1,
            "backward needs a scalar loss, got shape {:?}",
            self.shape(loss)
        );
        let upto = loss.0 + 1;
        let mut grads: Vec<Option<Var>> = vec![None; upto];
        if self.nodes[loss.0].needs_grad {
            let seed = self.constant(ArrayD::from_elem(IxDyn(self.shape(loss)), T::one()));
            grads[loss.0] = Some(seed);
        }
        for idx in (0..upto).rev() {
            let Some(g) = grads[idx] else { continue };
            let contributions = self.backward_op(idx, g);
            for (parent, contrib) in contributions {
                match grads[parent.0] {
                    None => grads[parent.0] = Some(contrib),
                    Some(existing) => {
                        let combined = self.add(existing, contrib).expect("grad shapes agree");
                        grads[parent.0] = Some(combined);
                    }
                }
            }
        }
        Ok(Gradients { by_node: grads })
    }

    /// Emits gradient contributions of node `idx` to each parent that
    /// tracks gradients.
    fn backward_op(&mut self, idx: usize, g: Var) -> Vec<(Var, Var)> {
        let op = self.nodes[idx].op.clone();
        let parents = self.nodes[idx].parents.clone();
        let this = Var(idx);
        let mut out: Vec<(Var, Option<Var>)> = Vec::new();
        match op {
            Op::Leaf => {}
            Op::Add => {
                out.push((parents[0], Some(g)));
                out.push((parents[1], Some(g)));
            }
            Op::Sub => {
                out.push((parents[0], Some(g)));
                let n = self.neg(g);
                out.push((parents[1], Some(n)));
            }
            Op::Mul => {
                let ga = self.mul(g, parents[1]).expect("mul grad");
                let gb = self.mul(g, parents[0]).expect("mul grad");
                out.push((parents[0], Some(ga)));
                out.push((parents[1], Some(gb)));
            }
            Op::Div => {
                // y = a/b: da = g/b, db = -g*y/b
                let ga = self.div(g, parents[1]).expect("div grad");
                let gy = self.mul(g, this).expect("div grad");
                let gb_pos = self.div(gy, parents[1]).expect("div grad");
                let gb = self.neg(gb_pos);
                out.push((parents[0], Some(ga)));
                out.push((parents[1], Some(gb)));
            }
            Op::Affine { mul, .. } => {
                let ga = self.scale(g, mul);
                out.push((parents[0], Some(ga)));
            }
            Op::LeakyRelu { slope } => {
                let ga = self.leaky_relu_grad(parents[0], g, slope);
                out.push((parents[0], Some(ga)));
            }
            Op::LeakyReluGrad { slope } => {
                out.push((parents[0], None));
                let gg = self.leaky_relu_grad(parents[0], g, slope);
                out.push((parents[1], Some(gg)));
            }
            Op::Sigmoid => {
                // s' = s (1 - s)
                let one_minus = self.affine(this, -T::one(), T::one());
                let sp = self.mul(this, one_minus).expect("sigmoid grad");
                let ga = self.mul(g, sp).expect("sigmoid grad");
                out.push((parents[0], Some(ga)));
            }
            Op::Exp => {
                let ga = self.mul(g, this).expect("exp grad");
                out.push((parents[0], Some(ga)));
            }
            Op::Log => {
                let ga = self.div(g, parents[0]).expect("log grad");
                out.push((parents[0], Some(ga)));
            }
            Op::SignMask => {
                out.push((parents[0], None));
            }
            Op::Sum => {
                let shape = self.shape(parents[0]).to_vec();
                let ga = self.broadcast_scalar(g, &shape);
                out.push((parents[0], Some(ga)));
            }
            Op::BroadcastScalar => {
                let ga = self.sum(g);
                out.push((parents[0], Some(ga)));
            }
            Op::AddBias => {
                out.push((parents[0], Some(g)));
                let gb = self.sum_spatial(g);
                out.push((parents[1], Some(gb)));
            }
            Op::SumSpatial => {
                let shape = self.shape(parents[0]).to_vec();
                let ga = self.broadcast_spatial(g, shape[1], shape[2]);
                out.push((parents[0], Some(ga)));
            }
            Op::BroadcastSpatial => {
                let ga = self.sum_spatial(g);
                out.push((parents[0], Some(ga)));
            }
            Op::Conv2d { stride, pad } => {
                let (x, w) = (parents[0], parents[1]);
                let xs = self.shape(x).to_vec();
                let ws = self.shape(w).to_vec();
                let gx = self.conv_dx(w, g, xs[1], xs[2], stride, pad);
                let gw = self.conv_dw(x, g, ws[2], ws[3], stride, pad);
                out.push((x, Some(gx)));
                out.push((w, Some(gw)));
            }
            Op::ConvDx { stride, pad, .. } => {
                // value = conv_dx(w, gy); upstream u has the input's shape.
                let (w, gy) = (parents[0], parents[1]);
                let ws = self.shape(w).to_vec();
                let gw = self.conv_dw(g, gy, ws[2], ws[3], stride, pad);
                let ggy = self.conv2d(g, w, stride, pad).expect("convdx grad");
                out.push((w, Some(gw)));
                out.push((gy, Some(ggy)));
            }
            Op::ConvDw { stride, pad, .. } => {
                // value = conv_dw(x, gy); upstream v has the weight's shape.
                let (x, gy) = (parents[0], parents[1]);
                let xs = self.shape(x).to_vec();
                let gx = self.conv_dx(g, gy, xs[1], xs[2], stride, pad);
                let ggy = self.conv2d(x, g, stride, pad).expect("convdw grad");
                out.push((x, Some(gx)));
                out.push((gy, Some(ggy)));
            }
            Op::DwConv => {
                let (x, w) = (parents[0], parents[1]);
                let ws = self.shape(w).to_vec();
                let gx = self.dwconv_dx(w, g);
                let gw = self.dwconv_dw(x, g, ws[2], ws[3]);
                out.push((x, Some(gx)));
                out.push((w, Some(gw)));
            }
            Op::DwConvDx => {
                let (w, gy) = (parents[0], parents[1]);
                let ws = self.shape(w).to_vec();
                let gw = self.dwconv_dw(g, gy, ws[2], ws[3]);
                let ggy = self.dwconv(g, w).expect("dwconvdx grad");
                out.push((w, Some(gw)));
                out.push((gy, Some(ggy)));
            }
            Op::DwConvDw { .. } => {
                let (x, gy) = (parents[0], parents[1]);
                let gx = self.dwconv_dx(g, gy);
                let ggy = self.dwconv(x, g).expect("dwconvdw grad");
                out.push((x, Some(gx)));
                out.push((gy, Some(ggy)));
            }
            Op::PixelShuffle { r } => {
                let ga = self.pixel_unshuffle(g, r).expect("shuffle grad");
                out.push((parents[0], Some(ga)));
            }
            Op::PixelUnshuffle { r } => {
                let ga = self.pixel_shuffle(g, r).expect("unshuffle grad");
                out.push((parents[0], Some(ga)));
            }
            Op::GlobalAvgPool => {
                let shape = self.shape(parents[0]).to_vec();
                let b = self.broadcast_spatial(g, shape[1], shape[2]);
                let ga = self.scale(b, T::from_f64(1.0 / (shape[1] * shape[2]) as f64));
                out.push((parents[0], Some(ga)));
            }
            Op::MatVec => {
                let (w, x) = (parents[0], parents[1]);
                let gw = self.outer(g, x);
                let gx = self.matvec_t(w, g);
                out.push((w, Some(gw)));
                out.push((x, Some(gx)));
            }
            Op::MatVecT => {
                // value = w^T g0
                let (w, g0) = (parents[0], parents[1]);
                let gw = self.outer(g0, g);
                let gg0 = self.matvec(w, g).expect("matvect grad");
                out.push((w, Some(gw)));
                out.push((g0, Some(gg0)));
            }
            Op::Outer => {
                let (a, b) = (parents[0], parents[1]);
                let ga = self.matvec(g, b).expect("outer grad");
                let gb = self.matvec_t(g, a);
                out.push((a, Some(ga)));
                out.push((b, Some(gb)));
            }
            Op::Reshape => {
                let shape = self.shape(parents[0]).to_vec();
                let ga = self.reshape(g, &shape).expect("reshape grad");
                out.push((parents[0], Some(ga)));
            }
        }
        out.into_iter()
            .filter_map(|(p, c)| match c {
                Some(c) if self.nodes[p.0].needs_grad => Some((p, c)),
                _ => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, ArrayD, IxDyn};

    #[test]
    fn add_mul_backward() {
        let mut g = Graph::<f64>::new();
        let a = g.param(arr1(&[1.0, 2.0]).into_dyn());
        let b = g.param(arr1(&[3.0, -4.0]).into_dyn());
        let p = g.mul(a, b).unwrap();
        let l = g.sum(p);
        let grads = g.backward(l).unwrap();
        let ga = grads.get(a).unwrap();
        let gb = grads.get(b).unwrap();
        assert_eq!(g.value(ga), &arr1(&[3.0, -4.0]).into_dyn());
        assert_eq!(g.value(gb), &arr1(&[1.0, 2.0]).into_dyn());
    }

    #[test]
    fn leaky_relu_values() {
        let mut g = Graph::<f64>::new();
        let x = g.param(arr1(&[0.0, -1.0, 2.5]).into_dyn());
        let y = g.leaky_relu(x, 0.1);
        assert_eq!(g.value(y), &arr1(&[0.0, -0.1, 2.5]).into_dyn());
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let mut g = Graph::<f64>::new();
        let x = g.param(arr1(&[1.0, 2.0, 3.0]).into_dyn());
        let s = g.softmax(x).unwrap();
        let want = [0.09003057, 0.24472847, 0.66524096];
        for (a, b) in g.value(s).iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
        // Shift invariance.
        let x2 = g.param(arr1(&[101.0, 102.0, 103.0]).into_dyn());
        let s2 = g.softmax(x2).unwrap();
        for (a, b) in g.value(s).iter().zip(g.value(s2).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_carry_no_grad() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(arr1(&[1.0, 2.0]).into_dyn());
        let b = g.param(arr1(&[3.0, 4.0]).into_dyn());
        let p = g.mul(a, b).unwrap();
        let l = g.sum(p);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(a).is_none());
        assert!(grads.get(b).is_some());
    }

    #[test]
    fn second_backward_through_gradient() {
        // f(x) = sum(x^3); df/dx = 3x^2; sum(df/dx) differentiated again
        // gives 6x.
        let mut g = Graph::<f64>::new();
        let x = g.param(arr1(&[1.0, -2.0]).into_dyn());
        let x2 = g.mul(x, x).unwrap();
        let x3 = g.mul(x2, x).unwrap();
        let l = g.sum(x3);
        let grads = g.backward(l).unwrap();
        let gx = grads.get(x).unwrap();
        assert_eq!(g.value(gx), &arr1(&[3.0, 12.0]).into_dyn());
        let l2 = g.sum(gx);
        let grads2 = g.backward(l2).unwrap();
        let gx2 = grads2.get(x).unwrap();
        assert_eq!(g.value(gx2), &arr1(&[6.0, -12.0]).into_dyn());
    }

    #[test]
    fn l1_loss_basics() {
        let mut g = Graph::<f64>::new();
        let a = g.param(arr1(&[0.5, 0.5]).into_dyn());
        let b = g.constant(arr1(&[0.4, 0.6]).into_dyn());
        let l = g.l1_loss(a, b).unwrap();
        assert!((g.scalar_value(l) - 0.1).abs() < 1e-12);
        let same = g.l1_loss(a, a).unwrap();
        assert_eq!(g.scalar_value(same), 0.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let a = g.param(arr1(&[1.0, 2.0]).into_dyn());
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn scalar_graph_values() {
        let mut g = Graph::<f64>::new();
        let a = g.param(ArrayD::from_elem(IxDyn(&[]), 2.0));
        let b = g.scale(a, 3.0);
        assert_eq!(g.scalar_value(b), 6.0);
    }
}
