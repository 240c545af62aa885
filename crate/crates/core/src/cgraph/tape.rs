//! Define-by-run tape of complex tensor primitives.
//!
//! Gradients follow one convention everywhere: for a real loss `L` and a complex node `z`,
//! the stored adjoint is `∂L/∂Re z + j·∂L/∂Im z` (twice the conjugate Wirtinger derivative).
//! For a real parameter `θ` feeding a complex path this yields
//! `dL/dθ = 2·Re{∂L/∂S · ∂S/∂θ}`, so all learnable tensors can stay real.

use std::sync::Arc;

use super::conv::{self, ConvGeom};
use super::fft;
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{CTensor, C64};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Axis-aligned rectangle on a 2-D grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.top && r < self.top + self.height && c >= self.left && c < self.left + self.width
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.top < other.top + other.height
            && other.top < self.top + self.height
            && self.left < other.left + other.width
            && other.left < self.left + self.width
    }
}

/// A primitive whose adjoint is supplied by the caller's module (e.g. MZI meshes).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Adjoints for each input given the output adjoint. Entries for inputs with
    /// `needs[i] == false` may be `None`. Real inputs must receive real adjoints.
    fn backward(
        &self,
        inputs: &[&CTensor],
        output: &CTensor,
        grad_out: &[C64],
        needs: &[bool],
    ) -> Vec<Option<Vec<C64>>>;
}

enum Op {
    Leaf,
    Param(ParamId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, C64),
    MulConst(NodeId, Arc<Vec<C64>>),
    Identity(NodeId),
    MatMul(NodeId, NodeId, [usize; 3]),
    Conv(NodeId, NodeId, ConvGeom),
    ConvT(NodeId, NodeId, ConvGeom),
    Fft2(NodeId),
    Ifft2(NodeId),
    AbsSq(NodeId),
    Sum(NodeId),
    Re(NodeId),
    Im(NodeId),
    Complex(NodeId, NodeId),
    Softmax(NodeId),
    SoftmaxXent(NodeId, usize),
    ExpJ(NodeId),
    Sigmoid(NodeId),
    CRelu(NodeId),
    Embed(NodeId, usize, usize),
    Extract(NodeId, usize, usize),
    RegionSums(NodeId, Arc<Vec<Rect>>),
    Gather(NodeId, Arc<Vec<usize>>),
    Custom(Vec<NodeId>, Box<dyn CustomOp>),
}

struct Node {
    value: CTensor,
    op: Op,
    needs_grad: bool,
    real: bool,
}

/// Ordered record of primitive operations. One tape per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn is_2d(s: &[usize]) -> Option<(usize, usize)> {
    (s.len() == 2).then(|| (s[0], s[1]))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &CTensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn is_real(&self, id: NodeId) -> bool {
        self.nodes[id.0].real
    }

    pub fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: CTensor, op: Op, inputs: &[NodeId], real: bool) -> NodeId {
        let needs_grad = match op {
            Op::Param(_) => true,
            Op::Leaf => false,
            _ => inputs.iter().any(|i| self.nodes[i.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            real,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn val(&self, id: NodeId) -> &CTensor {
        &self.nodes[id.0].value
    }

    /// Constant leaf; never receives gradients.
    pub fn constant(&mut self, value: CTensor) -> NodeId {
        let real = value.data().iter().all(|z| z.im == 0.0);
        self.push(value, Op::Leaf, &[], real)
    }

    /// Leaf whose adjoint can be read back with [`Tape::backward_with_inputs`].
    pub fn input(&mut self, value: CTensor) -> NodeId {
        let real = value.data().iter().all(|z| z.im == 0.0);
        let id = self.push(value, Op::Leaf, &[], real);
        self.nodes[id.0].needs_grad = true;
        id
    }

    /// Real parameter leaf. Frozen parameters (`requires_grad == false`) become constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let p = store.get(id);
        let value = CTensor::from_real(p.shape(), p.value()).expect("parameter shape is consistent");
        if p.requires_grad() {
            self.push(value, Op::Param(id), &[], true)
        } else {
            self.push(value, Op::Leaf, &[], true)
        }
    }

    /// Copies the value of `x` into a new constant, cutting gradient flow.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.val(x).clone();
        let real = self.nodes[x.0].real;
        self.push(v, Op::Leaf, &[], real)
    }

    fn binary_check(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_check("add", a, b)?;
        let data = self.val(a).data().iter().zip(self.val(b).data()).map(|(x, y)| x + y).collect();
        let v = CTensor::new(self.shape(a).to_vec(), data)?;
        let real = self.is_real(a) && self.is_real(b);
        Ok(self.push(v, Op::Add(a, b), &[a, b], real))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_check("sub", a, b)?;
        let data = self.val(a).data().iter().zip(self.val(b).data()).map(|(x, y)| x - y).collect();
        let v = CTensor::new(self.shape(a).to_vec(), data)?;
        let real = self.is_real(a) && self.is_real(b);
        Ok(self.push(v, Op::Sub(a, b), &[a, b], real))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_check("mul", a, b)?;
        let data = self.val(a).data().iter().zip(self.val(b).data()).map(|(x, y)| x * y).collect();
        let v = CTensor::new(self.shape(a).to_vec(), data)?;
        let real = self.is_real(a) && self.is_real(b);
        Ok(self.push(v, Op::Mul(a, b), &[a, b], real))
    }

    pub fn scale(&mut self, a: NodeId, factor: C64) -> NodeId {
        let data = self.val(a).data().iter().map(|x| x * factor).collect();
        let v = CTensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let real = self.is_real(a) && factor.im == 0.0;
        self.push(v, Op::Scale(a, factor), &[a], real)
    }

    /// Elementwise product with a constant tensor of the same size (e.g. a transfer function).
    pub fn mul_const(&mut self, a: NodeId, factor: Arc<Vec<C64>>) -> Result<NodeId> {
        if factor.len() != self.val(a).numel() {
            return Err(Error::shape("mul_const", self.shape(a), &[factor.len()]));
        }
        let data = self.val(a).data().iter().zip(factor.iter()).map(|(x, y)| x * y).collect();
        let v = CTensor::new(self.shape(a).to_vec(), data)?;
        let real = self.is_real(a) && factor.iter().all(|z| z.im == 0.0);
        Ok(self.push(v, Op::MulConst(a, factor), &[a], real))
    }

    /// Records a node whose forward value is `value` but whose adjoint passes to `a` unchanged.
    pub fn straight_through(&mut self, a: NodeId, value: CTensor) -> Result<NodeId> {
        if value.shape() != self.shape(a) {
            return Err(Error::shape("straight_through", self.shape(a), value.shape()));
        }
        let real = self.is_real(a) && value.data().iter().all(|z| z.im == 0.0);
        Ok(self.push(value, Op::Identity(a), &[a], real))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.val(a).clone().reshaped(shape.to_vec())?;
        let real = self.is_real(a);
        Ok(self.push(v, Op::Identity(a), &[a], real))
    }

    /// 2-D matrix product `[m,k]·[k,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = conv::gemm(
            m,
            k,
            n,
            conv::MatRef::rows(self.val(a).data(), k),
            conv::MatRef::rows(self.val(b).data(), n),
        );
        let v = CTensor::new(vec![m, n], out)?;
        let real = self.is_real(a) && self.is_real(b);
        Ok(self.push(v, Op::MatMul(a, b, [m, k, n]), &[a, b], real))
    }

    /// Complex convolution. `x: [cin,h,w]`, `w: [cout,cin,kh,kw]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, geom: ConvGeom) -> Result<NodeId> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] != geom.kh || sw[3] != geom.kw {
            return Err(Error::shape("conv2d", &sx, &sw));
        }
        let (ho, wo) = geom
            .out_extent(sx[1], sx[2])
            .ok_or_else(|| Error::shape("conv2d", &sx, &sw))?;
        if geom.sh > 1 && sx[1] % geom.sh != 0 || geom.sw > 1 && sx[2] % geom.sw != 0 {
            return Err(Error::shape("conv2d (stride does not divide extent)", &sx, &[geom.sh, geom.sw]));
        }
        let (y, _, _) = conv::conv_forward(self.val(x).data(), sx[0], sx[1], sx[2], self.val(w).data(), sw[0], &geom);
        let v = CTensor::new(vec![sw[0], ho, wo], y)?;
        let real = self.is_real(x) && self.is_real(w);
        Ok(self.push(v, Op::Conv(x, w, geom), &[x, w], real))
    }

    /// Transposed convolution. `x: [cin,h,w]`, `w: [cin,cout,kh,kw]`; output extent is
    /// `(h·sh, w·sw)`, the exact inverse of the matching strided "same" convolution.
    pub fn conv_transpose2d(&mut self, x: NodeId, w: NodeId, geom: ConvGeom) -> Result<NodeId> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 4 || sw[0] != sx[0] || sw[2] != geom.kh || sw[3] != geom.kw {
            return Err(Error::shape("conv_transpose2d", &sx, &sw));
        }
        let (ho, wo) = (sx[1] * geom.sh, sx[2] * geom.sw);
        if geom.out_extent(ho, wo) != Some((sx[1], sx[2])) {
            return Err(Error::shape("conv_transpose2d", &sx, &sw));
        }
        let y = conv::tconv_forward(self.val(x).data(), sx[0], sx[1], sx[2], self.val(w).data(), sw[1], &geom, ho, wo);
        let v = CTensor::new(vec![sw[1], ho, wo], y)?;
        let real = self.is_real(x) && self.is_real(w);
        Ok(self.push(v, Op::ConvT(x, w, geom), &[x, w], real))
    }

    pub fn fft2(&mut self, a: NodeId) -> Result<NodeId> {
        let (h, w) = is_2d(self.shape(a)).ok_or_else(|| Error::shape("fft2", self.shape(a), &[0, 0]))?;
        let mut v = self.val(a).clone();
        fft::fft2_inplace(v.data_mut(), h, w);
        Ok(self.push(v, Op::Fft2(a), &[a], false))
    }

    pub fn ifft2(&mut self, a: NodeId) -> Result<NodeId> {
        let (h, w) = is_2d(self.shape(a)).ok_or_else(|| Error::shape("ifft2", self.shape(a), &[0, 0]))?;
        let mut v = self.val(a).clone();
        fft::ifft2_inplace(v.data_mut(), h, w);
        Ok(self.push(v, Op::Ifft2(a), &[a], false))
    }

    /// Elementwise modulus squared (real output).
    pub fn abs_sq(&mut self, a: NodeId) -> NodeId {
        let data = self.val(a).data().iter().map(|z| C64::new(z.norm_sqr(), 0.0)).collect();
        let v = CTensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(v, Op::AbsSq(a), &[a], true)
    }

    /// Sum of all entries to a `[1]` tensor.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: C64 = self.val(a).data().iter().sum();
        let real = self.is_real(a);
        self.push(CTensor::scalar(s), Op::Sum(a), &[a], real)
    }

    pub fn re(&mut self, a: NodeId) -> NodeId {
        let data = self.val(a).data().iter().map(|z| C64::new(z.re, 0.0)).collect();
        let v = CTensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(v, Op::Re(a), &[a], true)
    }

    pub fn im(&mut self, a: NodeId) -> NodeId {
        let data = self.val(a).data().iter().map(|z| C64::new(z.im, 0.0)).collect();
        let v = CTensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(v, Op::Im(a), &[a], true)
    }

    /// Builds `re + j·im` from two real tensors.
    pub fn complex(&mut self, re: NodeId, im: NodeId) -> Result<NodeId> {
        self.binary_check("complex", re, im)?;
        let data = self
            .val(re)
            .data()
            .iter()
            .zip(self.val(im).data())
            .map(|(a, b)| C64::new(a.re, b.re))
            .collect();
        let v = CTensor::new(self.shape(re).to_vec(), data)?;
        Ok(self.push(v, Op::Complex(re, im), &[re, im], false))
    }

    fn softmax_values(x: &[C64]) -> Vec<f64> {
        let max = x.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = x.iter().map(|z| (z.re - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    /// Softmax over the real parts of a 1-D tensor.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        if self.shape(a).len() != 1 {
            return Err(Error::shape("softmax", self.shape(a), &[0]));
        }
        let s = Self::softmax_values(self.val(a).data());
        let v = CTensor::from_real(self.shape(a), &s)?;
        Ok(self.push(v, Op::Softmax(a), &[a], true))
    }

    /// `−log softmax(logits)[target]` over real logits.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let s = self.shape(logits);
        if s.len() != 1 || target >= s[0] {
            return Err(Error::shape("softmax_cross_entropy", s, &[target]));
        }
        let x = self.val(logits).data();
        let max = x.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.iter().map(|z| (z.re - max).exp()).sum::<f64>().ln();
        let loss = lse - x[target].re;
        Ok(self.push(
            CTensor::scalar(C64::new(loss, 0.0)),
            Op::SoftmaxXent(logits, target),
            &[logits],
            true,
        ))
    }

    /// `e^{j·x}` for a real tensor `x`.
    pub fn exp_j(&mut self, a: NodeId) -> NodeId {
        let data = self.val(a).data().iter().map(|z| C64::from_polar(1.0, z.re)).collect();
        let v = CTensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(v, Op::ExpJ(a), &[a], false)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let data = self
            .val(a)
            .data()
            .iter()
            .map(|z| C64::new(1.0 / (1.0 + (-z.re).exp()), 0.0))
            .collect();
        let v = CTensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(v, Op::Sigmoid(a), &[a], true)
    }

    /// `ReLU(Re x) + j·ReLU(Im x)`.
    pub fn crelu(&mut self, a: NodeId) -> NodeId {
        let data = self
            .val(a)
            .data()
            .iter()
            .map(|z| C64::new(z.re.max(0.0), z.im.max(0.0)))
            .collect();
        let v = CTensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let real = self.is_real(a);
        self.push(v, Op::CRelu(a), &[a], real)
    }

    /// Places a 2-D tensor into a zero `[h,w]` grid at `(top,left)`.
    pub fn embed(&mut self, a: NodeId, h: usize, w: usize, top: usize, left: usize) -> Result<NodeId> {
        let (ah, aw) = is_2d(self.shape(a)).ok_or_else(|| Error::shape("embed", self.shape(a), &[h, w]))?;
        if top + ah > h || left + aw > w {
            return Err(Error::shape("embed", &[ah, aw], &[h, w]));
        }
        let mut out = CTensor::zeros(&[h, w]);
        let src = self.val(a).data();
        for r in 0..ah {
            out.data_mut()[(top + r) * w + left..(top + r) * w + left + aw].copy_from_slice(&src[r * aw..(r + 1) * aw]);
        }
        let real = self.is_real(a);
        Ok(self.push(out, Op::Embed(a, top, left), &[a], real))
    }

    /// Crops an `[h,w]` window at `(top,left)` out of a 2-D tensor.
    pub fn extract(&mut self, a: NodeId, h: usize, w: usize, top: usize, left: usize) -> Result<NodeId> {
        let (ah, aw) = is_2d(self.shape(a)).ok_or_else(|| Error::shape("extract", self.shape(a), &[h, w]))?;
        if top + h > ah || left + w > aw {
            return Err(Error::shape("extract", &[ah, aw], &[h, w]));
        }
        let src = self.val(a).data();
        let mut data = Vec::with_capacity(h * w);
        for r in 0..h {
            data.extend_from_slice(&src[(top + r) * aw + left..(top + r) * aw + left + w]);
        }
        let v = CTensor::new(vec![h, w], data)?;
        let real = self.is_real(a);
        Ok(self.push(v, Op::Extract(a, top, left), &[a], real))
    }

    /// Sum of a 2-D tensor inside each rectangle → `[regions]`.
    pub fn region_sums(&mut self, a: NodeId, regions: Arc<Vec<Rect>>) -> Result<NodeId> {
        let (h, w) = is_2d(self.shape(a)).ok_or_else(|| Error::shape("region_sums", self.shape(a), &[0, 0]))?;
        let src = self.val(a).data();
        let mut sums = Vec::with_capacity(regions.len());
        for r in regions.iter() {
            if r.top + r.height > h || r.left + r.width > w {
                return Err(Error::shape("region_sums", &[h, w], &[r.top + r.height, r.left + r.width]));
            }
            let mut s = C64::new(0.0, 0.0);
            for i in r.top..r.top + r.height {
                for j in r.left..r.left + r.width {
                    s += src[i * w + j];
                }
            }
            sums.push(s);
        }
        let v = CTensor::new(vec![regions.len()], sums)?;
        let real = self.is_real(a);
        Ok(self.push(v, Op::RegionSums(a, regions), &[a], real))
    }

    /// Selects flat indices of `a` into a 1-D tensor.
    pub fn gather(&mut self, a: NodeId, indices: Arc<Vec<usize>>) -> Result<NodeId> {
        let n = self.val(a).numel();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::shape("gather", self.shape(a), &[bad]));
        }
        let data = indices.iter().map(|&i| self.val(a).data()[i]).collect();
        let v = CTensor::new(vec![indices.len()], data)?;
        let real = self.is_real(a);
        Ok(self.push(v, Op::Gather(a, indices), &[a], real))
    }

    /// Records a caller-defined primitive with a precomputed forward value.
    pub fn custom(&mut self, inputs: &[NodeId], value: CTensor, real: bool, op: Box<dyn CustomOp>) -> NodeId {
        self.push(value, Op::Custom(inputs.to_vec(), op), inputs, real)
    }

    /// Reverse sweep from a real scalar `loss`; returns gradients of every trainable parameter reached.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        Ok(self.backward_with_inputs(loss, &[])?.0)
    }

    /// Reverse sweep that also returns the adjoints of the given leaves (zeros if unreached).
    pub fn backward_with_inputs(&self, loss: NodeId, inputs: &[NodeId]) -> Result<(Gradients, Vec<Vec<C64>>)> {
        let node = &self.nodes[loss.0];
        if node.value.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.real {
            return Err(Error::InvalidArgument("backward requires a real-valued loss".into()));
        }
        let mut grads: Vec<Option<Vec<C64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![C64::new(1.0, 0.0)]);
        let mut out = Gradients::default();
        let mut leaf_grads: Vec<Vec<C64>> = inputs.iter().map(|i| vec![C64::new(0.0, 0.0); self.val(*i).numel()]).collect();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Some(pos) = inputs.iter().position(|i| i.0 == idx) {
                leaf_grads[pos] = g.clone();
            }
            self.propagate(idx, g, &mut grads, &mut out);
        }
        Ok((out, leaf_grads))
    }

    fn accumulate(&self, grads: &mut [Option<Vec<C64>>], id: NodeId, g: Vec<C64>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: Vec<C64>, grads: &mut [Option<Vec<C64>>], out: &mut Gradients) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Param(pid) => {
                let re: Vec<f64> = g.iter().map(|z| z.re).collect();
                out.add(*pid, &re);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *b, g.clone());
                self.accumulate(grads, *a, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *b, g.iter().map(|z| -z).collect());
                self.accumulate(grads, *a, g);
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    let ga = g.iter().zip(self.val(*b).data()).map(|(gz, y)| gz * y.conj()).collect();
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    let gb = g.iter().zip(self.val(*a).data()).map(|(gz, x)| gz * x.conj()).collect();
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, f) => {
                let fc = f.conj();
                self.accumulate(grads, *a, g.iter().map(|z| z * fc).collect());
            }
            Op::MulConst(a, f) => {
                self.accumulate(grads, *a, g.iter().zip(f.iter()).map(|(z, y)| z * y.conj()).collect());
            }
            Op::Identity(a) => self.accumulate(grads, *a, g),
            Op::MatMul(a, b, [m, k, n]) => {
                let (m, k, n) = (*m, *k, *n);
                if self.nodes[a.0].needs_grad {
                    // gA = gY · B^H
                    let bc = conv::conj(self.val(*b).data());
                    let ga = conv::gemm(m, n, k, conv::MatRef::rows(&g, n), conv::MatRef::transposed(&bc, n));
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    // gB = A^H · gY
                    let ac = conv::conj(self.val(*a).data());
                    let gb = conv::gemm(k, m, n, conv::MatRef::transposed(&ac, k), conv::MatRef::rows(&g, n));
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Conv(x, w, geom) => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let (gx, gw) = conv::conv_backward(
                    self.val(*x).data(),
                    sx[0],
                    sx[1],
                    sx[2],
                    self.val(*w).data(),
                    sw[0],
                    geom,
                    &g,
                    self.nodes[x.0].needs_grad,
                    self.nodes[w.0].needs_grad,
                );
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx);
                }
                if let Some(gw) = gw {
                    self.accumulate(grads, *w, gw);
                }
            }
            Op::ConvT(x, w, geom) => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let so = node.value.shape();
                let (gx, gw) = conv::tconv_backward(
                    self.val(*x).data(),
                    sx[0],
                    sx[1],
                    sx[2],
                    self.val(*w).data(),
                    sw[1],
                    geom,
                    so[1],
                    so[2],
                    &g,
                    self.nodes[x.0].needs_grad,
                    self.nodes[w.0].needs_grad,
                );
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx);
                }
                if let Some(gw) = gw {
                    self.accumulate(grads, *w, gw);
                }
            }
            Op::Fft2(a) => {
                // y = F x  ⇒  gx = F^H gy = (h·w)·IFFT(gy)
                let s = node.value.shape();
                let (h, w) = (s[0], s[1]);
                let mut gx = g;
                fft::ifft2_inplace(&mut gx, h, w);
                let scale = (h * w) as f64;
                gx.iter_mut().for_each(|z| *z *= scale);
                self.accumulate(grads, *a, gx);
            }
            Op::Ifft2(a) => {
                // y = F^H x / (h·w)  ⇒  gx = F gy / (h·w)
                let s = node.value.shape();
                let (h, w) = (s[0], s[1]);
                let mut gx = g;
                fft::fft2_inplace(&mut gx, h, w);
                let scale = 1.0 / (h * w) as f64;
                gx.iter_mut().for_each(|z| *z *= scale);
                self.accumulate(grads, *a, gx);
            }
            Op::AbsSq(a) => {
                let gx = g.iter().zip(self.val(*a).data()).map(|(gz, x)| x * (2.0 * gz.re)).collect();
                self.accumulate(grads, *a, gx);
            }
            Op::Sum(a) => {
                let n = self.val(*a).numel();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Re(a) => {
                self.accumulate(grads, *a, g.iter().map(|z| C64::new(z.re, 0.0)).collect());
            }
            Op::Im(a) => {
                self.accumulate(grads, *a, g.iter().map(|z| C64::new(0.0, z.re)).collect());
            }
            Op::Complex(re, im) => {
                self.accumulate(grads, *re, g.iter().map(|z| C64::new(z.re, 0.0)).collect());
                self.accumulate(grads, *im, g.iter().map(|z| C64::new(z.im, 0.0)).collect());
            }
            Op::Softmax(a) => {
                let s = node.value.data();
                let dot: f64 = s.iter().zip(&g).map(|(si, gi)| si.re * gi.re).sum();
                let gx = s.iter().zip(&g).map(|(si, gi)| C64::new(si.re * (gi.re - dot), 0.0)).collect();
                self.accumulate(grads, *a, gx);
            }
            Op::SoftmaxXent(a, target) => {
                let s = Self::softmax_values(self.val(*a).data());
                let gl = g[0].re;
                let gx = s
                    .iter()
                    .enumerate()
                    .map(|(i, si)| C64::new(gl * (si - if i == *target { 1.0 } else { 0.0 }), 0.0))
                    .collect();
                self.accumulate(grads, *a, gx);
            }
            Op::ExpJ(a) => {
                // dy/dx = j·y, dL/dx = Re(conj(g)·j·y)
                let gx = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(gz, y)| C64::new((gz.conj() * C64::new(0.0, 1.0) * y).re, 0.0))
                    .collect();
                self.accumulate(grads, *a, gx);
            }
            Op::Sigmoid(a) => {
                let gx = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(gz, s)| C64::new(gz.re * s.re * (1.0 - s.re), 0.0))
                    .collect();
                self.accumulate(grads, *a, gx);
            }
            Op::CRelu(a) => {
                let gx = g
                    .iter()
                    .zip(self.val(*a).data())
                    .map(|(gz, x)| {
                        C64::new(
                            if x.re > 0.0 { gz.re } else { 0.0 },
                            if x.im > 0.0 { gz.im } else { 0.0 },
                        )
                    })
                    .collect();
                self.accumulate(grads, *a, gx);
            }
            Op::Embed(a, top, left) => {
                let s = self.shape(*a);
                let (ah, aw) = (s[0], s[1]);
                let w = node.value.shape()[1];
                let mut gx = Vec::with_capacity(ah * aw);
                for r in 0..ah {
                    gx.extend_from_slice(&g[(top + r) * w + left..(top + r) * w + left + aw]);
                }
                self.accumulate(grads, *a, gx);
            }
            Op::Extract(a, top, left) => {
                let s = self.shape(*a);
                let aw = s[1];
                let (h, w) = (node.value.shape()[0], node.value.shape()[1]);
                let mut gx = vec![C64::new(0.0, 0.0); s[0] * s[1]];
                for r in 0..h {
                    gx[(top + r) * aw + left..(top + r) * aw + left + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                self.accumulate(grads, *a, gx);
            }
            Op::RegionSums(a, regions) => {
                let w = self.shape(*a)[1];
                let mut gx = vec![C64::new(0.0, 0.0); self.val(*a).numel()];
                for (k, r) in regions.iter().enumerate() {
                    for i in r.top..r.top + r.height {
                        for j in r.left..r.left + r.width {
                            gx[i * w + j] += g[k];
                        }
                    }
                }
                self.accumulate(grads, *a, gx);
            }
            Op::Gather(a, indices) => {
                let mut gx = vec![C64::new(0.0, 0.0); self.val(*a).numel()];
                for (k, &i) in indices.iter().enumerate() {
                    gx[i] += g[k];
                }
                self.accumulate(grads, *a, gx);
            }
            Op::Custom(inputs, op) => {
                let vals: Vec<&CTensor> = inputs.iter().map(|i| self.val(*i)).collect();
                let needs: Vec<bool> = inputs.iter().map(|i| self.nodes[i.0].needs_grad).collect();
                let gs = op.backward(&vals, &node.value, &g, &needs);
                for (i, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        self.accumulate(grads, *i, gi);
                    }
                }
            }
        }
    }
}
