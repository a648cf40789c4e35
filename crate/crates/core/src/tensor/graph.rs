use super::kernels::{self, broadcast_offsets, broadcast_shape, gemm_nn, gemm_nt, gemm_tn};
use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::wavelet;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    TransposeLast { a: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: T },
    Linear { x: Var, w: Var, b: Option<Var> },
    Gelu { a: Var },
    Sigmoid { a: Var },
    SoftmaxRows { a: Var },
    GlobalAvgPool { a: Var },
    Concat { axis: usize, parts: Vec<Var> },
    Slice { a: Var, axis: usize, start: usize },
    Reshape { a: Var },
    Expand { a: Var },
    Dwt { a: Var },
    Idwt { a: Var },
    Sum { a: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Dynamic tape. Nodes are appended in creation order, which is a valid
/// topological order; backward visits each node once in reverse.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

/// Splits a shape into `(outer, axis extent, inner)` element counts.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(self.nodes.is_empty() || !self.consumed, "recording on a consumed graph");
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Registers a leaf. Gradients are tracked iff `tensor.requires_grad()`.
    pub fn input(&mut self, tensor: &Tensor<T>) -> Var {
        let value = Tensor::from_parts(tensor.shape().to_vec(), tensor.data().to_vec());
        self.push(value, Op::Leaf, tensor.requires_grad())
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        let value = Tensor::from_parts(tensor.shape().to_vec(), tensor.into_data());
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    /// Gradient of the last backward pass at `v`, if `v` needed one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Copies the gradient at `v` into the gradient slot of `tensor`.
    pub fn write_grad(&self, v: Var, tensor: &mut Tensor<T>) -> Result<()> {
        match self.grad(v) {
            Some(g) => tensor.accumulate_grad(g),
            None => Err(Error::Contract(format!("no gradient recorded for node {}", v.0))),
        }
    }

    /// Drops gradients from a previous backward pass so another can run.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.consumed = false;
    }

    // ----- ops -------------------------------------------------------------

    /// Batched matrix product over the last two axes; leading axes must match.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let r = sa.len();
        if r < 2 || sb.len() != r || sa[..r - 2] != sb[..r - 2] || sa[r - 1] != sb[r - 2] {
            return Err(Error::shape(format!("matmul of {sa:?} and {sb:?}")));
        }
        let (m, k, n) = (sa[r - 2], sa[r - 1], sb[r - 1]);
        let batch = numel(&sa[..r - 2]);
        let mut shape = sa.to_vec();
        shape[r - 1] = n;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            gemm_nn(
                &ad[i * m * k..(i + 1) * m * k],
                &bd[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let ng = self.needs(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul { a, b }, ng))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let r = s.len();
        if r < 2 {
            return Err(Error::shape("transpose needs rank >= 2"));
        }
        let (m, n) = (s[r - 2], s[r - 1]);
        let out = transpose_batched(self.value(a).data(), numel(&s[..r - 2]), m, n);
        let mut shape = s;
        shape.swap(r - 2, r - 1);
        let ng = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::TransposeLast { a }, ng))
    }

    fn broadcast_binary(&mut self, a: Var, b: Var, mul: bool) -> Result<Var> {
        let shape = broadcast_shape(self.shape(a), self.shape(b))?;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let out: Vec<T> = if self.shape(a) == shape.as_slice() && self.shape(b) == shape.as_slice() {
            if mul {
                ad.iter().zip(bd).map(|(&x, &y)| x * y).collect()
            } else {
                ad.iter().zip(bd).map(|(&x, &y)| x + y).collect()
            }
        } else {
            let oa = broadcast_offsets(&shape, self.shape(a));
            let ob = broadcast_offsets(&shape, self.shape(b));
            oa.iter()
                .zip(&ob)
                .map(|(&i, &j)| if mul { ad[i] * bd[j] } else { ad[i] + bd[j] })
                .collect()
        };
        let ng = self.needs(&[a, b]);
        let op = if mul { Op::Mul { a, b } } else { Op::Add { a, b } };
        Ok(self.push(Tensor::from_parts(shape, out), op, ng))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, false)
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, true)
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a).map(|v| v * factor);
        let ng = self.needs(&[a]);
        self.push(value, Op::Scale { a, factor }, ng)
    }

    /// Affine map over the last axis: `x[..., C_in] · w[C_in, C_out] + b[C_out]`.
    /// Over an `(H, W, C)` map this is exactly a 1×1 convolution.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        let c_in = *sx.last().expect("rank >= 1");
        if sw.len() != 2 || sw[0] != c_in {
            return Err(Error::shape(format!("linear: input {sx:?} against weight {sw:?}")));
        }
        let c_out = sw[1];
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::shape(format!("linear: bias {:?}, expected [{c_out}]", self.shape(b))));
            }
        }
        let rows = numel(sx) / c_in;
        let mut shape = sx.to_vec();
        *shape.last_mut().unwrap() = c_out;
        let mut out = vec![T::zero(); rows * c_out];
        if let Some(b) = b {
            let bd = self.value(b).data();
            out.chunks_mut(c_out).for_each(|row| row.copy_from_slice(bd));
        }
        gemm_nn(self.value(x).data(), self.value(w).data(), &mut out, rows, c_in, c_out);
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.needs(&deps);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Linear { x, w, b }, ng))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(kernels::gelu);
        let ng = self.needs(&[a]);
        self.push(value, Op::Gelu { a }, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(kernels::sigmoid);
        let ng = self.needs(&[a]);
        self.push(value, Op::Sigmoid { a }, ng)
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let m = *src.shape().last().unwrap();
        let mut out = src.data().to_vec();
        for row in out.chunks_mut(m) {
            softmax_in_place(row);
        }
        let value = Tensor::from_parts(src.shape().to_vec(), out);
        let ng = self.needs(&[a]);
        self.push(value, Op::SoftmaxRows { a }, ng)
    }

    /// Spatial mean of `[..., H, W, C]`, giving `[..., 1, 1, C]`.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let r = s.len();
        if r < 3 {
            return Err(Error::shape(format!("global_avg_pool needs [..., H, W, C], got {s:?}")));
        }
        let (hw, c) = (s[r - 3] * s[r - 2], s[r - 1]);
        let outer = numel(&s[..r - 3]);
        let inv = T::one() / T::of(hw as f64);
        let src = self.value(a).data();
        let mut out = vec![T::zero(); outer * c];
        for o in 0..outer {
            let acc = &mut out[o * c..(o + 1) * c];
            for p in 0..hw {
                let px = &src[(o * hw + p) * c..(o * hw + p + 1) * c];
                acc.iter_mut().zip(px).for_each(|(a, &v)| *a += v);
            }
            acc.iter_mut().for_each(|a| *a *= inv);
        }
        let mut shape = s;
        shape[r - 3] = 1;
        shape[r - 2] = 1;
        let ng = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::GlobalAvgPool { a }, ng))
    }

    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat of zero parts"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let agrees = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !agrees {
                return Err(Error::shape(format!("concat on axis {axis}: {s:?} vs {base:?}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&base, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis] * inner;
                out.extend_from_slice(&self.value(*p).data()[o * len..(o + 1) * len]);
            }
        }
        let ng = self.needs(parts);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat { axis, parts: parts.to_vec() }, ng))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::shape(format!("slice {start}..{} on axis {axis} of {s:?}", start + len)));
        }
        let (outer, extent, inner) = split_at_axis(&s, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let ng = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Slice { a, axis, start }, ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let ng = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(value.shape().to_vec(), value.into_data()), Op::Reshape { a }, ng))
    }

    /// Broadcasts `a` to `shape`; the gradient sums back over repeated axes.
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let target = broadcast_shape(self.shape(a), shape)?;
        if target != shape {
            return Err(Error::shape(format!("cannot expand {:?} to {shape:?}", self.shape(a))));
        }
        let src = self.value(a).data();
        let out = broadcast_offsets(shape, self.shape(a)).into_iter().map(|i| src[i]).collect();
        let ng = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape.to_vec(), out), Op::Expand { a }, ng))
    }

    /// Single-level Haar DWT of `[..., H, W, C]` into `[..., H/2, W/2, 4C]`,
    /// subbands concatenated on channels as `LL | LH | HL | HH`.
    pub fn dwt_haar(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let (outer, h, w, c) = wavelet::packed_dims(&s, false)?;
        let out = wavelet::haar_forward_packed(self.value(a).data(), outer, h, w, c);
        let mut shape = s;
        let r = shape.len();
        shape[r - 3] = h / 2;
        shape[r - 2] = w / 2;
        shape[r - 1] = 4 * c;
        let ng = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Dwt { a }, ng))
    }

    /// Exact inverse of [`Graph::dwt_haar`].
    pub fn idwt_haar(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let (outer, h, w, c) = wavelet::packed_dims(&s, true)?;
        let out = wavelet::haar_inverse_packed(self.value(a).data(), outer, h, w, c);
        let mut shape = s;
        let r = shape.len();
        shape[r - 3] = 2 * h;
        shape[r - 2] = 2 * w;
        shape[r - 1] = c;
        let ng = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Idwt { a }, ng))
    }

    /// Sum of all entries as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let total: T = self.value(a).data().iter().copied().sum();
        let ng = self.needs(&[a]);
        self.push(Tensor::scalar(total), Op::Sum { a }, ng)
    }

    /// Mean softmax cross-entropy of `logits[n, k]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() {
            return Err(Error::shape(format!("cross_entropy: logits {s:?} for {} targets", targets.len())));
        }
        let k = s[1];
        if let Some(t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::shape(format!("target class {t} out of range for {k} logits")));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = T::zero();
        for (row, &t) in probs.chunks_mut(k).zip(targets) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            loss += lse - row[t];
            softmax_in_place(row);
        }
        loss /= T::of(targets.len() as f64);
        let ng = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            ng,
        ))
    }

    // ----- backward --------------------------------------------------------

    /// Reverse pass from a scalar `loss`. A second call without
    /// [`Graph::reset_grads`] is a contract error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract("backward already ran on this graph; reset_grads first".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!("loss must be scalar, got shape {:?}", self.shape(loss))));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else { continue };
            self.propagate(id, &g);
            self.grads[id] = Some(g);
        }
        self.consumed = true;
        Ok(())
    }

    fn propagate(&mut self, id: usize, g: &[T]) {
        let nodes: &[Node<T>] = &self.nodes;
        let mut acc = Accumulator { nodes, grads: &mut self.grads };
        let shape = |v: &Var| nodes[v.0].value.shape();
        let data = |v: &Var| nodes[v.0].value.data();
        let out_shape = nodes[id].value.shape();
        match &nodes[id].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let sa = shape(a);
                let r = sa.len();
                let (m, k) = (sa[r - 2], sa[r - 1]);
                let n = shape(b)[r - 1];
                let batch = numel(&sa[..r - 2]);
                let (ad, bd) = (data(a), data(b));
                acc.with(*a, |ga| {
                    for i in 0..batch {
                        gemm_nt(
                            &g[i * m * n..(i + 1) * m * n],
                            &bd[i * k * n..(i + 1) * k * n],
                            &mut ga[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                });
                acc.with(*b, |gb| {
                    for i in 0..batch {
                        gemm_tn(
                            &ad[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            &mut gb[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                });
            }
            Op::TransposeLast { a } => {
                let r = out_shape.len();
                let t = transpose_batched(g, numel(&out_shape[..r - 2]), out_shape[r - 2], out_shape[r - 1]);
                acc.add(*a, t);
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    acc.add(*v, reduce_to(g, out_shape, shape(v)));
                }
            }
            Op::Mul { a, b } => {
                for (v, other) in [(a, b), (b, a)] {
                    if !nodes[v.0].needs_grad {
                        continue;
                    }
                    let od = data(other);
                    let prod: Vec<T> = if shape(other) == out_shape {
                        g.iter().zip(od).map(|(&x, &y)| x * y).collect()
                    } else {
                        let offs = broadcast_offsets(out_shape, shape(other));
                        g.iter().zip(offs).map(|(&x, j)| x * od[j]).collect()
                    };
                    acc.add(*v, reduce_to(&prod, out_shape, shape(v)));
                }
            }
            Op::Scale { a, factor } => {
                acc.add(*a, g.iter().map(|&x| x * *factor).collect());
            }
            Op::Linear { x, w, b } => {
                let c_in = *shape(x).last().unwrap();
                let c_out = shape(w)[1];
                let rows = data(x).len() / c_in;
                let (xd, wd) = (data(x), data(w));
                acc.with(*x, |gx| gemm_nt(g, wd, gx, rows, c_out, c_in));
                acc.with(*w, |gw| gemm_tn(xd, g, gw, rows, c_in, c_out));
                if let Some(b) = b {
                    acc.with(*b, |gb| {
                        for row in g.chunks(c_out) {
                            gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                        }
                    });
                }
            }
            Op::Gelu { a } => {
                let d = g.iter().zip(data(a)).map(|(&gv, &x)| gv * kernels::gelu_grad(x)).collect();
                acc.add(*a, d);
            }
            Op::Sigmoid { a } => {
                let y = nodes[id].value.data();
                let d = g.iter().zip(y).map(|(&gv, &s)| gv * s * (T::one() - s)).collect();
                acc.add(*a, d);
            }
            Op::SoftmaxRows { a } => {
                let y = nodes[id].value.data();
                let m = *out_shape.last().unwrap();
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(m).zip(g.chunks(m)) {
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    d.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - dot)));
                }
                acc.add(*a, d);
            }
            Op::GlobalAvgPool { a } => {
                let s = shape(a);
                let r = s.len();
                let (hw, c) = (s[r - 3] * s[r - 2], s[r - 1]);
                let inv = T::one() / T::of(hw as f64);
                acc.with(*a, |ga| {
                    for (o, gc) in g.chunks(c).enumerate() {
                        for p in 0..hw {
                            let dst = &mut ga[(o * hw + p) * c..(o * hw + p + 1) * c];
                            dst.iter_mut().zip(gc).for_each(|(d, &v)| *d += v * inv);
                        }
                    }
                });
            }
            Op::Concat { axis, parts } => {
                let (outer, _, inner) = split_at_axis(out_shape, *axis);
                let row = out_shape[*axis] * inner;
                let mut start = 0;
                for p in parts {
                    let len = shape(p)[*axis] * inner;
                    acc.with(*p, |gp| {
                        for o in 0..outer {
                            let src = &g[o * row + start..o * row + start + len];
                            gp[o * len..(o + 1) * len].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                        }
                    });
                    start += len;
                }
            }
            Op::Slice { a, axis, start } => {
                let len = out_shape[*axis];
                let (outer, extent, inner) = split_at_axis(shape(a), *axis);
                acc.with(*a, |ga| {
                    for o in 0..outer {
                        let base = (o * extent + start) * inner;
                        let chunk = &g[o * len * inner..(o + 1) * len * inner];
                        ga[base..base + len * inner].iter_mut().zip(chunk).for_each(|(d, &v)| *d += v);
                    }
                });
            }
            Op::Reshape { a } => acc.add(*a, g.to_vec()),
            Op::Expand { a } => acc.add(*a, reduce_to(g, out_shape, shape(a))),
            Op::Dwt { a } => {
                // Orthonormal transform: the adjoint is the inverse.
                let (outer, h, w, c) = wavelet::packed_dims(out_shape, true).expect("recorded shape");
                acc.add(*a, wavelet::haar_inverse_packed(g, outer, h, w, c));
            }
            Op::Idwt { a } => {
                let (outer, h, w, c) = wavelet::packed_dims(out_shape, false).expect("recorded shape");
                acc.add(*a, wavelet::haar_forward_packed(g, outer, h, w, c));
            }
            Op::Sum { a } => acc.add(*a, vec![g[0]; data(a).len()]),
            Op::CrossEntropy { logits, targets, probs } => {
                let k = shape(logits)[1];
                let scale = g[0] / T::of(targets.len() as f64);
                let mut d = probs.clone();
                for (row, &t) in d.chunks_mut(k).zip(targets) {
                    row[t] -= T::one();
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                acc.add(*logits, d);
            }
        }
    }
}

/// Gradient sink over the tape; writes only into nodes that need a gradient.
struct Accumulator<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Scalar> Accumulator<'_, T> {
    fn add(&mut self, v: Var, delta: Vec<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
            slot => *slot = Some(delta),
        }
    }

    fn with(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        f(self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]));
    }
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

fn transpose_batched<T: Scalar>(src: &[T], batch: usize, m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for b in 0..batch {
        let (s, d) = (&src[b * m * n..(b + 1) * m * n], &mut out[b * m * n..(b + 1) * m * n]);
        for i in 0..m {
            for j in 0..n {
                d[j * m + i] = s[i * n + j];
            }
        }
    }
    out
}

/// Sums a gradient of broadcast shape `out` back onto operand shape `input`.
fn reduce_to<T: Scalar>(g: &[T], out: &[usize], input: &[usize]) -> Vec<T> {
    if out == input {
        return g.to_vec();
    }
    let mut d = vec![T::zero(); numel(input)];
    for (&v, i) in g.iter().zip(broadcast_offsets(out, input)) {
        d[i] += v;
    }
    d
}
