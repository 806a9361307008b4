use super::{numel, Scalar, Tensor};
use crate::error::{Error, Result};

/// Largest argument passed to `exp`; larger inputs are clamped.
pub(crate) const EXP_CLAMP: f64 = 80.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Exp,
    Log,
    Square,
    Negate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

/// Numpy-style broadcast of two shapes, aligned on trailing dimensions.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed as `out` after broadcasting; broadcast axes get 0.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every element of `out`.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total = numel(out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ia += sa[ax];
            ib += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            ia -= sa[ax] * out[ax];
            ib -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

fn binary_partials<T: Scalar>(op: BinaryOp, a: T, b: T) -> (T, T) {
    match op {
        BinaryOp::Add => (T::one(), T::one()),
        BinaryOp::Sub => (T::one(), -T::one()),
        BinaryOp::Mul => (b, a),
        BinaryOp::Div => (T::one() / b, -a / (b * b)),
    }
}

fn apply_binary<T: Scalar>(op: BinaryOp, a: T, b: T) -> T {
    match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => a / b,
    }
}

fn op_name(op: BinaryOp) -> &'static str {
    match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
    }
}

impl<T: Scalar> Tensor<T> {
    /// Binary elementwise op with broadcasting.
    pub fn binary(&self, op: BinaryOp, other: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape =
            broadcast_shape(self.shape(), other.shape()).ok_or_else(|| Error::ShapeMismatch {
                op: op_name(op),
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            })?;

        let data = if self.shape() == other.shape() {
            let (a, b) = (self.data(), other.data());
            a.iter().zip(b.iter()).map(|(&x, &y)| apply_binary(op, x, y)).collect()
        } else {
            let sa = broadcast_strides(self.shape(), &out_shape);
            let sb = broadcast_strides(other.shape(), &out_shape);
            let (a, b) = (self.data(), other.data());
            let mut out = vec![T::zero(); numel(&out_shape)];
            for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
                out[o] = apply_binary(op, a[ia], b[ib]);
            });
            out
        };

        let shape_for_backward = out_shape.clone();
        Tensor::from_op(
            data,
            &out_shape,
            op_name(op),
            vec![self.clone(), other.clone()],
            Box::new(move |ctx| {
                let (pa, pb) = (&ctx.parents[0], &ctx.parents[1]);
                let (a, b) = (pa.data(), pb.data());
                let mut ga = pa.requires_grad().then(|| vec![T::zero(); pa.numel()]);
                let mut gb = pb.requires_grad().then(|| vec![T::zero(); pb.numel()]);
                let sa = broadcast_strides(pa.shape(), &shape_for_backward);
                let sb = broadcast_strides(pb.shape(), &shape_for_backward);
                for_each_broadcast(&shape_for_backward, &sa, &sb, |o, ia, ib| {
                    let (da, db) = binary_partials(op, a[ia], b[ib]);
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] += ctx.grad[o] * da;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ib] += ctx.grad[o] * db;
                    }
                });
                vec![ga, gb]
            }),
        )
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(BinaryOp::Add, other)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(BinaryOp::Sub, other)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(BinaryOp::Mul, other)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(BinaryOp::Div, other)
    }

    pub fn unary(&self, op: UnaryOp) -> Tensor<T> {
        let clamp = T::lit(EXP_CLAMP);
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|&x| match op {
                UnaryOp::Exp => x.min(clamp).exp(),
                UnaryOp::Log => x.ln(),
                UnaryOp::Square => x * x,
                UnaryOp::Negate => -x,
            })
            .collect();
        let name = match op {
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Square => "square",
            UnaryOp::Negate => "negate",
        };
        Tensor::from_op(
            data,
            self.shape(),
            name,
            vec![self.clone()],
            Box::new(move |ctx| {
                let x = ctx.parents[0].data();
                let g = ctx.grad;
                let grad = match op {
                    UnaryOp::Exp => x
                        .iter()
                        .zip(ctx.output)
                        .zip(g)
                        .map(|((&xi, &yi), &gi)| if xi > clamp { T::zero() } else { gi * yi })
                        .collect(),
                    UnaryOp::Log => x.iter().zip(g).map(|(&xi, &gi)| gi / xi).collect(),
                    UnaryOp::Square => {
                        let two = T::lit(2.0);
                        x.iter().zip(g).map(|(&xi, &gi)| two * xi * gi).collect()
                    }
                    UnaryOp::Negate => g.iter().map(|&gi| -gi).collect(),
                };
                vec![Some(grad)]
            }),
        )
        .expect("unary op preserves shape")
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(UnaryOp::Exp)
    }

    pub fn log(&self) -> Tensor<T> {
        self.unary(UnaryOp::Log)
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary(UnaryOp::Square)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary(UnaryOp::Negate)
    }

    /// `self * c` for a constant `c`.
    pub fn mul_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::lit(c);
        let data = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op(
            data,
            self.shape(),
            "mul_scalar",
            vec![self.clone()],
            Box::new(move |ctx| vec![Some(ctx.grad.iter().map(|&g| g * c).collect())]),
        )
        .expect("shape preserved")
    }

    /// `self + c` for a constant `c`.
    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::lit(c);
        let data = self.data().iter().map(|&x| x + c).collect();
        Tensor::from_op(
            data,
            self.shape(),
            "add_scalar",
            vec![self.clone()],
            Box::new(|ctx| vec![Some(ctx.grad.to_vec())]),
        )
        .expect("shape preserved")
    }

    pub fn activation(&self, act: Activation) -> Tensor<T> {
        let data: Vec<T> = match act {
            Activation::LeakyRelu(slope) => {
                let slope = T::lit(slope);
                self.data()
                    .iter()
                    .map(|&x| if x > T::zero() { x } else { slope * x })
                    .collect()
            }
            Activation::Sigmoid => self.data().iter().map(|&x| stable_sigmoid(x)).collect(),
            Activation::Tanh => self.data().iter().map(|&x| x.tanh()).collect(),
        };
        let name = match act {
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        };
        Tensor::from_op(
            data,
            self.shape(),
            name,
            vec![self.clone()],
            Box::new(move |ctx| {
                let g = ctx.grad;
                let y = ctx.output;
                let grad = match act {
                    Activation::LeakyRelu(slope) => {
                        let slope = T::lit(slope);
                        let x = ctx.parents[0].data();
                        x.iter()
                            .zip(g)
                            .map(|(&xi, &gi)| if xi > T::zero() { gi } else { gi * slope })
                            .collect()
                    }
                    Activation::Sigmoid => y
                        .iter()
                        .zip(g)
                        .map(|(&yi, &gi)| gi * yi * (T::one() - yi))
                        .collect(),
                    Activation::Tanh => y
                        .iter()
                        .zip(g)
                        .map(|(&yi, &gi)| gi * (T::one() - yi * yi))
                        .collect(),
                };
                vec![Some(grad)]
            }),
        )
        .expect("shape preserved")
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        self.activation(Activation::LeakyRelu(slope))
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.activation(Activation::Sigmoid)
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.activation(Activation::Tanh)
    }
}

/// Branch form that never evaluates `exp` of a large positive number.
pub(crate) fn stable_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
