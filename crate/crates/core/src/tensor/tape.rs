use std::sync::atomic::{AtomicU64, Ordering};

use super::{matmul_into, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Log,
    Neg,
    Sigmoid,
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unary {
    Neg,
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Relu,
    Softplus,
    Square,
    Sqrt,
    Powf(f64),
    Scale(f64),
    Offset(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    LhsScalar,
    RhsScalar,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Unary(Unary, usize),
    Binary {
        kind: BinKind,
        a: usize,
        b: usize,
        bcast: Bcast,
    },
    MatMul(usize, usize),
    Reduce {
        kind: ReduceOp,
        a: usize,
        axis: Option<usize>,
        /// For max/min: flat input index selected for each output entry.
        picked: Vec<usize>,
    },
    AddRows(usize, usize),
    ScaleRows(usize, usize),
    ScaleCols(usize, usize),
    /// Output entry k copies `parts[map[k].0]` at flat index `map[k].1`.
    Gather {
        parts: Vec<usize>,
        map: Vec<(u32, u32)>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only record of a differentiable computation.
///
/// Nodes are stored in creation order, which is a topological order because an
/// operation can only reference nodes that already exist. A tape owns all its
/// values; it can be moved across threads but not shared.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn accumulator<'a>(adj: &'a mut [Option<Vec<f64>>], nodes: &[Node], p: usize) -> &'a mut Vec<f64> {
    let len = nodes[p].value.numel();
    adj[p].get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(TensorError::Usage(format!(
                "variable {} does not belong to tape {}",
                v.idx, self.id
            )));
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn rg(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let idx = self.check(v).expect("foreign variable");
        &self.nodes[idx].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[self.check(v).expect("foreign variable")].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        let idx = self.check(v).ok()?;
        self.nodes[idx].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        let idx = self.check(v).ok()?;
        let node = &self.nodes[idx];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ---------------------------------------------------------------- unary

    fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let x = &self.nodes[ia].value;
        match kind {
            Unary::Log if x.data().iter().any(|&v| v <= 0.0) => {
                return Err(TensorError::Domain {
                    op: "log",
                    detail: "non-positive argument".into(),
                })
            }
            Unary::Sqrt if x.data().iter().any(|&v| v < 0.0) => {
                return Err(TensorError::Domain {
                    op: "sqrt",
                    detail: "negative argument".into(),
                })
            }
            Unary::Powf(p) if p.fract() != 0.0 && x.data().iter().any(|&v| v <= 0.0) => {
                return Err(TensorError::Domain {
                    op: "powf",
                    detail: format!("non-positive base with exponent {p}"),
                })
            }
            _ => {}
        }
        let f: fn(f64, f64) -> f64 = match kind {
            Unary::Neg => |x, _| -x,
            Unary::Exp => |x, _| x.exp(),
            Unary::Log => |x, _| x.ln(),
            Unary::Sigmoid => |x, _| sigmoid(x),
            Unary::Tanh => |x, _| x.tanh(),
            Unary::Relu => |x, _| x.max(0.0),
            Unary::Softplus => |x, _| softplus(x),
            Unary::Square => |x, _| x * x,
            Unary::Sqrt => |x, _| x.sqrt(),
            Unary::Powf(_) => |x, p| x.powf(p),
            Unary::Scale(_) => |x, c| x * c,
            Unary::Offset(_) => |x, c| x + c,
        };
        let c = match kind {
            Unary::Powf(p) => p,
            Unary::Scale(c) | Unary::Offset(c) => c,
            _ => 0.0,
        };
        let out = x.map(|v| f(v, c));
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Unary(kind, ia), rg))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Neg, a)
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }
    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Softplus, a)
    }
    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Square, a)
    }
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sqrt, a)
    }
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        self.unary(Unary::Powf(p), a)
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(Unary::Scale(c), a)
    }
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(Unary::Offset(c), a)
    }

    // --------------------------------------------------------------- binary

    fn binary(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let bcast = if va.shape() == vb.shape() {
            Bcast::Same
        } else if vb.is_scalar() {
            Bcast::RhsScalar
        } else if va.is_scalar() {
            Bcast::LhsScalar
        } else {
            return Err(TensorError::Dimension {
                op: "elementwise",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        };
        if kind == BinKind::Div && vb.data().contains(&0.0) {
            return Err(TensorError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let f: fn(f64, f64) -> f64 = match kind {
            BinKind::Add => |x, y| x + y,
            BinKind::Sub => |x, y| x - y,
            BinKind::Mul => |x, y| x * y,
            BinKind::Div => |x, y| x / y,
        };
        let out = match bcast {
            Bcast::Same => {
                let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(va.shape().to_vec(), data)?
            }
            Bcast::RhsScalar => {
                let y = vb.data()[0];
                va.map(|x| f(x, y))
            }
            Bcast::LhsScalar => {
                let x = va.data()[0];
                vb.map(|y| f(x, y))
            }
        };
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(
            out,
            Op::Binary {
                kind,
                a: ia,
                b: ib,
                bcast,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Div, a, b)
    }

    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, b: Option<Var>) -> Result<Var> {
        let need_b = |b: Option<Var>| {
            b.ok_or_else(|| TensorError::Usage(format!("{op:?} requires a second operand")))
        };
        match op {
            ElementwiseOp::Add => self.add(a, need_b(b)?),
            ElementwiseOp::Sub => self.sub(a, need_b(b)?),
            ElementwiseOp::Mul => self.mul(a, need_b(b)?),
            ElementwiseOp::Div => self.div(a, need_b(b)?),
            ElementwiseOp::Exp => self.exp(a),
            ElementwiseOp::Log => self.log(a),
            ElementwiseOp::Neg => self.neg(a),
            ElementwiseOp::Sigmoid => self.sigmoid(a),
            ElementwiseOp::Tanh => self.tanh(a),
            ElementwiseOp::Relu => self.relu(a),
        }
    }

    // --------------------------------------------------------------- matrix

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::MatMul(ia, ib), rg))
    }

    /// Adds a length-`n` vector to every row of an `m × n` matrix.
    pub fn add_rows(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(bias)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.rank() != 2 || vb.numel() != va.cols() {
            return Err(TensorError::Dimension {
                op: "add_rows",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let n = va.cols();
        let mut out = va.clone();
        for (k, o) in out.data_mut().iter_mut().enumerate() {
            *o += vb.data()[k % n];
        }
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::AddRows(ia, ib), rg))
    }

    /// `diag(v) · a` for an `m × n` matrix and a length-`m` vector.
    pub fn scale_rows(&mut self, a: Var, v: Var) -> Result<Var> {
        let (ia, iv) = (self.check(a)?, self.check(v)?);
        let (va, vv) = (&self.nodes[ia].value, &self.nodes[iv].value);
        if va.rank() != 2 || vv.numel() != va.rows() {
            return Err(TensorError::Dimension {
                op: "scale_rows",
                lhs: va.shape().to_vec(),
                rhs: vv.shape().to_vec(),
            });
        }
        let n = va.cols();
        let mut out = va.clone();
        for (k, o) in out.data_mut().iter_mut().enumerate() {
            *o *= vv.data()[k / n];
        }
        let rg = self.rg(ia) || self.rg(iv);
        Ok(self.push(out, Op::ScaleRows(ia, iv), rg))
    }

    /// `a · diag(v)` for an `m × n` matrix and a length-`n` vector.
    pub fn scale_cols(&mut self, a: Var, v: Var) -> Result<Var> {
        let (ia, iv) = (self.check(a)?, self.check(v)?);
        let (va, vv) = (&self.nodes[ia].value, &self.nodes[iv].value);
        if va.rank() != 2 || vv.numel() != va.cols() {
            return Err(TensorError::Dimension {
                op: "scale_cols",
                lhs: va.shape().to_vec(),
                rhs: vv.shape().to_vec(),
            });
        }
        let n = va.cols();
        let mut out = va.clone();
        for (k, o) in out.data_mut().iter_mut().enumerate() {
            *o *= vv.data()[k % n];
        }
        let rg = self.rg(ia) || self.rg(iv);
        Ok(self.push(out, Op::ScaleCols(ia, iv), rg))
    }

    // --------------------------------------------------------------- reduce

    pub fn reduce(&mut self, kind: ReduceOp, a: Var, axis: Option<usize>) -> Result<Var> {
        let ia = self.check(a)?;
        let x = &self.nodes[ia].value;
        let shape = x.shape();
        let (outer, len, inner, out_shape) = match axis {
            None => (1, x.numel(), 1, vec![1]),
            Some(k) if k < shape.len() => {
                let outer = shape[..k].iter().product();
                let inner = shape[k + 1..].iter().product();
                let mut s: Vec<usize> = shape.to_vec();
                s.remove(k);
                if s.is_empty() {
                    s.push(1);
                }
                (outer, shape[k], inner, s)
            }
            Some(k) => {
                return Err(TensorError::Usage(format!(
                    "axis {k} out of range for rank {}",
                    shape.len()
                )))
            }
        };
        if len == 0 {
            return Err(TensorError::Domain {
                op: "reduce",
                detail: "empty tensor".into(),
            });
        }
        let data = x.data();
        let mut out = vec![0.0; outer * inner];
        let mut picked = Vec::new();
        if matches!(kind, ReduceOp::Max | ReduceOp::Min) {
            picked = vec![0; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let slot = o * inner + i;
                match kind {
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let s: f64 = (0..len).map(|l| data[at(l)]).sum();
                        out[slot] = if kind == ReduceOp::Mean { s / len as f64 } else { s };
                    }
                    ReduceOp::Max | ReduceOp::Min => {
                        // Strict comparison keeps the lowest flat index on ties.
                        let mut best = at(0);
                        for l in 1..len {
                            let cand = at(l);
                            let better = if kind == ReduceOp::Max {
                                data[cand] > data[best]
                            } else {
                                data[cand] < data[best]
                            };
                            if better {
                                best = cand;
                            }
                        }
                        out[slot] = data[best];
                        picked[slot] = best;
                    }
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        let rg = self.rg(ia);
        Ok(self.push(
            value,
            Op::Reduce {
                kind,
                a: ia,
                axis,
                picked,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceOp::Sum, a, None)
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceOp::Mean, a, None)
    }

    // ---------------------------------------------------------- structural

    fn gather(&mut self, parts: Vec<usize>, map: Vec<(u32, u32)>, shape: Vec<usize>) -> Result<Var> {
        let data = map
            .iter()
            .map(|&(p, i)| self.nodes[parts[p as usize]].value.data()[i as usize])
            .collect();
        let value = Tensor::new(shape, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::Gather { parts, map }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let n = self.nodes[ia].value.numel();
        if shape.iter().product::<usize>() != n {
            return Err(TensorError::Shape {
                shape: shape.to_vec(),
                len: n,
            });
        }
        let map = (0..n as u32).map(|i| (0, i)).collect();
        self.gather(vec![ia], map, shape.to_vec())
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        if v.rank() != 2 {
            return Err(TensorError::Usage(format!(
                "transpose needs a matrix, got {:?}",
                v.shape()
            )));
        }
        let (r, c) = (v.rows(), v.cols());
        let mut map = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                map.push((0, (i * c + j) as u32));
            }
        }
        self.gather(vec![ia], map, vec![c, r])
    }

    /// Row `i` of a matrix as a `1 × cols` matrix.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        if v.rank() != 2 || i >= v.rows() {
            return Err(TensorError::Usage(format!(
                "row {i} of {:?}",
                v.shape()
            )));
        }
        let c = v.cols();
        let map = (0..c).map(|j| (0, (i * c + j) as u32)).collect();
        self.gather(vec![ia], map, vec![1, c])
    }

    /// Stacks equally sized tensors as rows of a `k × n` matrix.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Usage("stack_rows of nothing".into()));
        }
        let idx: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect::<Result<_>>()?;
        let n = self.nodes[idx[0]].value.numel();
        for &i in &idx {
            if self.nodes[i].value.numel() != n {
                return Err(TensorError::Dimension {
                    op: "stack_rows",
                    lhs: self.nodes[idx[0]].value.shape().to_vec(),
                    rhs: self.nodes[i].value.shape().to_vec(),
                });
            }
        }
        let mut map = Vec::with_capacity(idx.len() * n);
        for p in 0..idx.len() {
            for j in 0..n {
                map.push((p as u32, j as u32));
            }
        }
        self.gather(idx.clone(), map, vec![idx.len(), n])
    }

    /// Concatenation along `axis` (rank-1 along 0; rank-2 along 0 or 1).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Usage("concat of nothing".into()));
        }
        let idx: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect::<Result<_>>()?;
        let first = self.nodes[idx[0]].value.shape().to_vec();
        let rank = first.len();
        let mismatch = |s: &[usize]| TensorError::Dimension {
            op: "concat",
            lhs: first.clone(),
            rhs: s.to_vec(),
        };
        let mut map = Vec::new();
        let shape = match (rank, axis) {
            (1, 0) => {
                let mut total = 0;
                for (p, &i) in idx.iter().enumerate() {
                    let s = self.nodes[i].value.shape();
                    if s.len() != 1 {
                        return Err(mismatch(s));
                    }
                    map.extend((0..s[0]).map(|j| (p as u32, j as u32)));
                    total += s[0];
                }
                vec![total]
            }
            (2, 0) => {
                let mut rows = 0;
                for (p, &i) in idx.iter().enumerate() {
                    let s = self.nodes[i].value.shape();
                    if s.len() != 2 || s[1] != first[1] {
                        return Err(mismatch(s));
                    }
                    map.extend((0..s[0] * s[1]).map(|j| (p as u32, j as u32)));
                    rows += s[0];
                }
                vec![rows, first[1]]
            }
            (2, 1) => {
                let mut cols = Vec::new();
                for &i in &idx {
                    let s = self.nodes[i].value.shape();
                    if s.len() != 2 || s[0] != first[0] {
                        return Err(mismatch(s));
                    }
                    cols.push(s[1]);
                }
                for r in 0..first[0] {
                    for (p, &c) in cols.iter().enumerate() {
                        map.extend((0..c).map(|j| (p as u32, (r * c + j) as u32)));
                    }
                }
                vec![first[0], cols.iter().sum()]
            }
            _ => {
                return Err(TensorError::Usage(format!(
                    "concat axis {axis} unsupported for rank {rank}"
                )))
            }
        };
        self.gather(idx, map, shape)
    }

    // ------------------------------------------------------------ backward

    /// Reverse pass from a scalar `loss`; leaf gradients accumulate (`+=`).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let il = self.check(loss)?;
        if !self.nodes[il].value.is_scalar() {
            return Err(TensorError::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[il].value.shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; il + 1];
        adj[il] = Some(vec![1.0]);
        for i in (0..=il).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        let wants = |p: usize| nodes[p].requires_grad;
        macro_rules! acc {
            ($p:expr) => {
                accumulator(adj, nodes, $p)
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::Unary(kind, a) => {
                let a = *a;
                if !wants(a) {
                    return;
                }
                let x = nodes[a].value.data();
                let y = node.value.data();
                let dst = acc!(a);
                for k in 0..g.len() {
                    let d = match *kind {
                        Unary::Neg => -1.0,
                        Unary::Exp => y[k],
                        Unary::Log => 1.0 / x[k],
                        Unary::Sigmoid => y[k] * (1.0 - y[k]),
                        Unary::Tanh => 1.0 - y[k] * y[k],
                        Unary::Relu => {
                            if x[k] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Softplus => sigmoid(x[k]),
                        Unary::Square => 2.0 * x[k],
                        Unary::Sqrt => 0.5 / y[k],
                        Unary::Powf(p) => p * x[k].powf(p - 1.0),
                        Unary::Scale(c) => c,
                        Unary::Offset(_) => 1.0,
                    };
                    dst[k] += g[k] * d;
                }
            }
            Op::Binary { kind, a, b, bcast } => {
                let (a, b) = (*a, *b);
                let xa = nodes[a].value.data();
                let xb = nodes[b].value.data();
                let ai = |k: usize| if *bcast == Bcast::LhsScalar { 0 } else { k };
                let bi = |k: usize| if *bcast == Bcast::RhsScalar { 0 } else { k };
                if wants(a) {
                    let dst = acc!(a);
                    for k in 0..g.len() {
                        let d = match kind {
                            BinKind::Add | BinKind::Sub => 1.0,
                            BinKind::Mul => xb[bi(k)],
                            BinKind::Div => 1.0 / xb[bi(k)],
                        };
                        dst[ai(k)] += g[k] * d;
                    }
                }
                if wants(b) {
                    let dst = acc!(b);
                    for k in 0..g.len() {
                        let d = match kind {
                            BinKind::Add => 1.0,
                            BinKind::Sub => -1.0,
                            BinKind::Mul => xa[ai(k)],
                            BinKind::Div => -xa[ai(k)] / (xb[bi(k)] * xb[bi(k)]),
                        };
                        dst[bi(k)] += g[k] * d;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let va = &nodes[a].value;
                let vb = &nodes[b].value;
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if wants(a) {
                    // dA = G · Bᵀ
                    let dst = acc!(a);
                    let bd = vb.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            let s: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            dst[i * k + p] += s;
                        }
                    }
                }
                if wants(b) {
                    // dB = Aᵀ · G
                    let dst = acc!(b);
                    let at = va.transpose();
                    matmul_into(at.data(), g, dst, k, m, n);
                }
            }
            Op::Reduce {
                kind,
                a,
                axis,
                picked,
            } => {
                let a = *a;
                if !wants(a) {
                    return;
                }
                let shape = nodes[a].value.shape();
                let dst = acc!(a);
                match kind {
                    ReduceOp::Max | ReduceOp::Min => {
                        for (slot, &src) in picked.iter().enumerate() {
                            dst[src] += g[slot];
                        }
                    }
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let (outer, len, inner) = match axis {
                            None => (1, dst.len(), 1),
                            Some(k) => (
                                shape[..*k].iter().product(),
                                shape[*k],
                                shape[k + 1..].iter().product(),
                            ),
                        };
                        let scale = if *kind == ReduceOp::Mean {
                            1.0 / len as f64
                        } else {
                            1.0
                        };
                        for o in 0..outer {
                            for l in 0..len {
                                for i in 0..inner {
                                    dst[(o * len + l) * inner + i] += g[o * inner + i] * scale;
                                }
                            }
                        }
                    }
                }
            }
            Op::AddRows(a, bias) => {
                let (a, bias) = (*a, *bias);
                let n = nodes[a].value.cols();
                if wants(a) {
                    let dst = acc!(a);
                    dst.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if wants(bias) {
                    let dst = acc!(bias);
                    for (k, x) in g.iter().enumerate() {
                        dst[k % n] += x;
                    }
                }
            }
            Op::ScaleRows(a, v) | Op::ScaleCols(a, v) => {
                let (a, v) = (*a, *v);
                let by_row = matches!(node.op, Op::ScaleRows(..));
                let n = nodes[a].value.cols();
                let which = |k: usize| if by_row { k / n } else { k % n };
                let xa = nodes[a].value.data();
                let xv = nodes[v].value.data();
                if wants(a) {
                    let dst = acc!(a);
                    for k in 0..g.len() {
                        dst[k] += g[k] * xv[which(k)];
                    }
                }
                if wants(v) {
                    let dst = acc!(v);
                    for k in 0..g.len() {
                        dst[which(k)] += g[k] * xa[k];
                    }
                }
            }
            Op::Gather { parts, map } => {
                for (p_local, &p) in parts.iter().enumerate() {
                    if !wants(p) {
                        continue;
                    }
                    let dst = acc!(p);
                    for (k, &(pp, idx)) in map.iter().enumerate() {
                        if pp as usize == p_local {
                            dst[idx as usize] += g[k];
                        }
                    }
                }
            }
        }
    }
}
