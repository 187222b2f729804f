use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::{gemm, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparse linear map from the rows of a `[src_rows, C]` matrix to the rows of
/// a `[rows, C]` matrix: `out[r] = Σ weight · src[index]` over the taps of `r`.
///
/// Used for row gathers, query-time bilinear sampling and the weighted local
/// ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMap {
    src_rows: usize,
    offsets: Vec<usize>,
    index: Vec<usize>,
    weight: Vec<f64>,
}

impl RowMap {
    pub fn new(src_rows: usize) -> Self {
        RowMap {
            src_rows,
            offsets: vec![0],
            index: Vec::new(),
            weight: Vec::new(),
        }
    }

    /// Plain gather: output row `r` copies `src[rows[r]]`.
    pub fn gather(src_rows: usize, rows: &[usize]) -> Self {
        let mut map = RowMap::new(src_rows);
        for &r in rows {
            map.push_row(&[(r, 1.0)]);
        }
        map
    }

    /// Appends one output row. Panics on an out-of-range source index.
    pub fn push_row(&mut self, taps: &[(usize, f64)]) {
        for &(i, w) in taps {
            assert!(i < self.src_rows, "row map tap {} out of {}", i, self.src_rows);
            self.index.push(i);
            self.weight.push(w);
        }
        self.offsets.push(self.index.len());
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn src_rows(&self) -> usize {
        self.src_rows
    }

    pub fn taps(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.offsets[row], self.offsets[row + 1]);
        self.index[s..e].iter().copied().zip(self.weight[s..e].iter().copied())
    }

    /// Applies the map to a plain row-major `[src_rows, cols]` buffer.
    pub fn apply(&self, src: &[f64], cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows() * cols];
        for r in 0..self.rows() {
            let dst = &mut out[r * cols..(r + 1) * cols];
            for (i, w) in self.taps(r) {
                let s = &src[i * cols..(i + 1) * cols];
                for (d, v) in dst.iter_mut().zip(s) {
                    *d += w * v;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Relu(Var),
    Sin(Var),
    Exp(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        cols: Vec<f64>,
    },
    Concat(Vec<Var>),
    Rows(Var, Box<RowMap>),
    Sum(Var),
    Mean(Var),
    Transpose(Var),
    Reshape(Var),
    Unfold3x3(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of primitive applications.
///
/// Nodes are stored in creation order, which is a topological order: every
/// operation's inputs already exist when it is pushed.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every `requires_grad` leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Result<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref).ok_or(Error::Detached)
    }

    pub fn take(&mut self, var: Var) -> Result<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take).ok_or(Error::Detached)
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`.
    ///
    /// Vars created after that point become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Which side of its kink every recorded ReLU / clamp input lies on.
    ///
    /// Two evaluations with equal patterns sit on the same smooth piece.
    pub fn kink_pattern(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(x) => out.extend(self.nodes[x.0].value.data().iter().map(|&v| u8::from(v > 0.0))),
                Op::Clamp(x, lo, hi) => out.extend(self.nodes[x.0].value.data().iter().map(|&v| {
                    if v < lo {
                        0
                    } else if v > hi {
                        2
                    } else {
                        1
                    }
                })),
                _ => {}
            }
        }
        out
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn zip_map(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor {
            shape: va.shape.clone(),
            data,
        };
        let rg = self.rg(&[a, b]);
        self.push(name, value, op, rg)
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let va = self.value(a);
        let value = Tensor {
            shape: va.shape.clone(),
            data: va.data().iter().map(|&x| f(x)).collect(),
        };
        let rg = self.rg(&[a]);
        self.push(name, value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("scale", a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("add_scalar", a, |x| x + c, Op::Shift(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.map("sin", a, libm::sin, Op::Sin(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map("exp", a, libm::exp, Op::Exp(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(Error::invalid("sqrt", "negative input"));
        }
        self.map("sqrt", a, libm::sqrt, Op::Sqrt(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::invalid("clamp", "lower bound above upper bound"));
        }
        self.map("clamp", a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// `x · w + b` with `x: [n, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(Error::shape("linear", sx, sw));
        }
        let (n, k, m) = (sx[0], sx[1], sw[1]);
        if let Some(b) = b {
            let sb = self.shape(b);
            if sb != [m] {
                return Err(Error::shape("linear bias", sb, &[m]));
            }
        }
        let mut out = vec![0.0; n * m];
        gemm(
            n,
            k,
            m,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            &mut out,
            false,
        );
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_exact_mut(m) {
                for (o, bv) in row.iter_mut().zip(bias) {
                    *o += bv;
                }
            }
        }
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        self.push(
            "linear",
            Tensor {
                shape: vec![n, m],
                data: out,
            },
            Op::Linear { x, w, b },
            rg,
        )
    }

    /// Stride-1, zero-padded ("same") 2-D convolution.
    ///
    /// `x: [c, h, w]`, `w: [o, c, k, k]` with odd `k`, `b: [o]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] != sw[3] || sw[2] % 2 == 0 {
            return Err(Error::shape("conv2d", &sx, &sw));
        }
        let (c, h, wd) = (sx[0], sx[1], sx[2]);
        let (o, k) = (sw[0], sw[2]);
        if let Some(b) = b {
            let sb = self.shape(b);
            if sb != [o] {
                return Err(Error::shape("conv2d bias", sb, &[o]));
            }
        }
        let cols = im2col(self.value(x).data(), c, h, wd, k);
        let hw = h * wd;
        let mut out = vec![0.0; o * hw];
        gemm(
            o,
            c * k * k,
            hw,
            self.value(w).data(),
            false,
            &cols,
            false,
            &mut out,
            false,
        );
        if let Some(b) = b {
            for (plane, bv) in out.chunks_exact_mut(hw).zip(self.value(b).data()) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        let cols = if rg { cols } else { Vec::new() };
        self.push(
            "conv2d",
            Tensor {
                shape: vec![o, h, wd],
                data: out,
            },
            Op::Conv2d { x, w, b, cols },
            rg,
        )
    }

    /// Concatenation along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let lead = {
            let s = self.shape(first);
            s[..s.len() - 1].to_vec()
        };
        let outer = numel(&lead);
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat", self.shape(first), s));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; outer * total];
        let mut col = 0;
        for (&p, &wdt) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..outer {
                data[r * total + col..r * total + col + wdt].copy_from_slice(&src[r * wdt..(r + 1) * wdt]);
            }
            col += wdt;
        }
        let mut shape = lead;
        shape.push(total);
        let rg = self.rg(parts);
        self.push("concat", Tensor { shape, data }, Op::Concat(parts.to_vec()), rg)
    }

    /// Applies a [`RowMap`] to a `[src_rows, c]` matrix.
    pub fn rows(&mut self, src: Var, map: RowMap) -> Result<Var> {
        let s = self.shape(src);
        if s.len() != 2 || s[0] != map.src_rows() {
            return Err(Error::shape("rows", s, &[map.src_rows()]));
        }
        let c = s[1];
        if map.rows() == 0 {
            return Err(Error::invalid("rows", "empty row map"));
        }
        let data = map.apply(self.value(src).data(), c);
        let shape = vec![map.rows(), c];
        let rg = self.rg(&[src]);
        self.push("rows", Tensor { shape, data }, Op::Rows(src, Box::new(map)), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[a]);
        self.push("mean", Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::invalid("transpose", alloc::format!("expected 2-D, got {:?}", s)));
        }
        let (r, c) = (s[0], s[1]);
        let data = transpose(self.value(a).data(), r, c);
        let rg = self.rg(&[a]);
        self.push(
            "transpose",
            Tensor {
                shape: vec![c, r],
                data,
            },
            Op::Transpose(a),
            rg,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(&[a]);
        self.push("reshape", v, Op::Reshape(a), rg)
    }

    /// `[c, h, w] -> [9c, h, w]`: each pixel gathers its 3×3 neighbourhood
    /// (zero outside the border), blocks ordered top-left to bottom-right.
    pub fn unfold3x3(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 3 {
            return Err(Error::invalid(
                "unfold3x3",
                alloc::format!("expected [c, h, w], got {:?}", s),
            ));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let src = self.value(a).data();
        let mut data = vec![0.0; 9 * c * h * w];
        for (blk, (dy, dx)) in neighbourhood().enumerate() {
            for ch in 0..c {
                let dst = &mut data[(blk * c + ch) * h * w..(blk * c + ch + 1) * h * w];
                let plane = &src[ch * h * w..(ch + 1) * h * w];
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            dst[y * w + x] = plane[sy as usize * w + sx as usize];
                        }
                    }
                }
            }
        }
        let rg = self.rg(&[a]);
        self.push(
            "unfold3x3",
            Tensor {
                shape: vec![9 * c, h, w],
                data,
            },
            Op::Unfold3x3(a),
            rg,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ls = self.shape(loss);
        if numel(ls) != 1 {
            return Err(Error::NonScalarLoss(ls.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        let mut out = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let keep = node.requires_grad && matches!(node.op, Op::Leaf);
            out.push(if keep {
                let data = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                Some(Tensor {
                    shape: node.value.shape.clone(),
                    data,
                })
            } else {
                None
            });
        }
        Ok(Gradients { grads: out })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (v, s) in [(*a, 1.0), (*b, 1.0)] {
                    if rg(v) {
                        axpy(acc(grads, v, g.len()), s, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, s) in [(*a, 1.0), (*b, -1.0)] {
                    if rg(v) {
                        axpy(acc(grads, v, g.len()), s, g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let other = val(*b);
                    let ga = acc(grads, *a, g.len());
                    for ((d, gv), o) in ga.iter_mut().zip(g).zip(other) {
                        *d += gv * o;
                    }
                }
                if rg(*b) {
                    let other = val(*a);
                    let gb = acc(grads, *b, g.len());
                    for ((d, gv), o) in gb.iter_mut().zip(g).zip(other) {
                        *d += gv * o;
                    }
                }
            }
            Op::Scale(a, c) => axpy(acc(grads, *a, g.len()), *c, g),
            Op::Shift(a) => axpy(acc(grads, *a, g.len()), 1.0, g),
            Op::Relu(a) => {
                let x = val(*a);
                let ga = acc(grads, *a, g.len());
                for ((d, gv), xv) in ga.iter_mut().zip(g).zip(x) {
                    if *xv > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Sin(a) => {
                let x = val(*a);
                let ga = acc(grads, *a, g.len());
                for ((d, gv), xv) in ga.iter_mut().zip(g).zip(x) {
                    *d += gv * libm::cos(*xv);
                }
            }
            Op::Exp(a) => {
                let y = node.value.data();
                let ga = acc(grads, *a, g.len());
                for ((d, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                    *d += gv * yv;
                }
            }
            Op::Sqrt(a) => {
                let y = node.value.data();
                let ga = acc(grads, *a, g.len());
                for ((d, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                    if *yv > 0.0 {
                        *d += gv * 0.5 / yv;
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a);
                let ga = acc(grads, *a, g.len());
                for ((d, gv), xv) in ga.iter_mut().zip(g).zip(x) {
                    if *xv >= *lo && *xv <= *hi {
                        *d += gv;
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (n, k) = (self.shape(*x)[0], self.shape(*x)[1]);
                let m = self.shape(*w)[1];
                if rg(*x) {
                    let gx = acc(grads, *x, n * k);
                    gemm(n, m, k, g, false, val(*w), true, gx, true);
                }
                if rg(*w) {
                    let gw = acc(grads, *w, k * m);
                    gemm(k, n, m, val(*x), true, g, false, gw, true);
                }
                if let Some(b) = b {
                    if rg(*b) {
                        let gb = acc(grads, *b, m);
                        for row in g.chunks_exact(m) {
                            for (d, gv) in gb.iter_mut().zip(row) {
                                *d += gv;
                            }
                        }
                    }
                }
            }
            Op::Conv2d { x, w, b, cols } => {
                let sx = self.shape(*x);
                let (c, h, wd) = (sx[0], sx[1], sx[2]);
                let sw = self.shape(*w);
                let (o, k) = (sw[0], sw[2]);
                let hw = h * wd;
                let ckk = c * k * k;
                if rg(*w) {
                    let gw = acc(grads, *w, o * ckk);
                    gemm(o, hw, ckk, g, false, cols, true, gw, true);
                }
                if rg(*x) {
                    let mut gcols = vec![0.0; ckk * hw];
                    gemm(ckk, o, hw, val(*w), true, g, false, &mut gcols, false);
                    col2im_add(&gcols, c, h, wd, k, acc(grads, *x, c * hw));
                }
                if let Some(b) = b {
                    if rg(*b) {
                        let gb = acc(grads, *b, o);
                        for (d, plane) in gb.iter_mut().zip(g.chunks_exact(hw)) {
                            *d += plane.iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let total = *node.value.shape.last().unwrap();
                let outer = node.value.len() / total;
                let mut col = 0;
                for &p in parts {
                    let wdt = *self.shape(p).last().unwrap();
                    if rg(p) {
                        let gp = acc(grads, p, outer * wdt);
                        for r in 0..outer {
                            let src = &g[r * total + col..r * total + col + wdt];
                            for (d, s) in gp[r * wdt..(r + 1) * wdt].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    col += wdt;
                }
            }
            Op::Rows(src, map) => {
                let c = self.shape(*src)[1];
                let gs = acc(grads, *src, map.src_rows() * c);
                for r in 0..map.rows() {
                    let go = &g[r * c..(r + 1) * c];
                    for (i, wt) in map.taps(r) {
                        for (d, gv) in gs[i * c..(i + 1) * c].iter_mut().zip(go) {
                            *d += wt * gv;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.len();
                acc(grads, *a, n).iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len();
                let s = g[0] / n as f64;
                acc(grads, *a, n).iter_mut().for_each(|d| *d += s);
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                let gt = transpose(g, c, r);
                axpy(acc(grads, *a, r * c), 1.0, &gt);
            }
            Op::Reshape(a) => axpy(acc(grads, *a, g.len()), 1.0, g),
            Op::Unfold3x3(a) => {
                let s = self.shape(*a);
                let (c, h, w) = (s[0], s[1], s[2]);
                let ga = acc(grads, *a, c * h * w);
                for (blk, (dy, dx)) in neighbourhood().enumerate() {
                    for ch in 0..c {
                        let src = &g[(blk * c + ch) * h * w..(blk * c + ch + 1) * h * w];
                        let plane = &mut ga[ch * h * w..(ch + 1) * h * w];
                        for y in 0..h {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for x in 0..w {
                                let sx = x as isize + dx;
                                if sx >= 0 && sx < w as isize {
                                    plane[sy as usize * w + sx as usize] += src[y * w + x];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

fn transpose(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    out
}

pub(crate) fn neighbourhood() -> impl Iterator<Item = (isize, isize)> {
    (-1..=1).flat_map(|dy| (-1..=1).map(move |dx| (dy, dx)))
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![0.0; c * k * k * hw];
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ch * k + ky) * k + kx) * hw..((ch * k + ky) * k + kx + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let lo = (-dx).max(0) as usize;
                    let hi = (w as isize - dx.max(0)).max(0) as usize;
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst_row = &mut row[y * w..(y + 1) * w];
                    for xo in lo..hi {
                        dst_row[xo] = src_row[(xo as isize + dx) as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f64], c: usize, h: usize, w: usize, k: usize, dst: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut dst[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ch * k + ky) * k + kx) * hw..((ch * k + ky) * k + kx + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let lo = (-dx).max(0) as usize;
                    let hi = (w as isize - dx.max(0)).max(0) as usize;
                    let src_row = &row[y * w..(y + 1) * w];
                    let dst_row = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for xo in lo..hi {
                        dst_row[(xo as isize + dx) as usize] += src_row[xo];
                    }
                }
            }
        }
    }
}
