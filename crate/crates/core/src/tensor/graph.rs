//! Tape-based reverse-mode autodiff graph.
//!
//! The graph is rebuilt every step (dynamic tape). Node creation order is a
//! topological order, so backward is a single reverse sweep that visits each
//! node exactly once. Gradients accumulate until the graph is dropped, which
//! is what lets `backward` be called twice to double every gradient.

use super::{sc, Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

pub(crate) trait Backward<T: Scalar> {
    /// Gradient contributions for each parent, in parent order.
    /// `needs[i] == false` lets the rule skip that parent's work.
    fn backward(
        &self,
        grad_out: &[T],
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>>;
}

pub(crate) struct Node<T: Scalar> {
    pub value: Tensor<T>,
    pub grad: Option<Vec<T>>,
    pub parents: Vec<NodeId>,
    pub rule: Option<Box<dyn Backward<T>>>,
    pub needs_grad: bool,
}

/// Dynamic autodiff tape. Single-threaded graph semantics; op kernels may be
/// internally data-parallel but are bitwise-deterministic.
pub struct Graph<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Leaf that does not receive a gradient (data, constants).
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(value, false)
    }

    /// Leaf that accumulates a gradient (trainable parameter).
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            grad: None,
            parents: Vec::new(),
            rule: None,
            needs_grad,
        });
        id
    }

    pub(crate) fn push_op(
        &mut self,
        op: &'static str,
        value: Tensor<T>,
        parents: Vec<NodeId>,
        rule: Box<dyn Backward<T>>,
    ) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            grad: None,
            parents,
            rule: Some(rule),
            needs_grad,
        });
        Ok(id)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, id: NodeId) -> T {
        self.nodes[id.0].value.item()
    }

    /// Accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Reverse sweep from a scalar loss; gradients accumulate into every
    /// reachable node with `needs_grad`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }

        // Mark ancestors of the loss.
        let mut reachable = vec![false; self.nodes.len()];
        let mut stack = vec![loss.0];
        while let Some(i) = stack.pop() {
            if reachable[i] {
                continue;
            }
            reachable[i] = true;
            for p in &self.nodes[i].parents {
                if !reachable[p.0] {
                    stack.push(p.0);
                }
            }
        }

        // Transient seed map for this sweep; persistent node.grad keeps
        // accumulating across backward calls.
        let mut sweep: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        sweep[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !reachable[i] || !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = sweep[i].take() else { continue };

            if self.nodes[i].rule.is_some() {
                let parents = self.nodes[i].parents.clone();
                let needs: Vec<bool> = parents
                    .iter()
                    .map(|p| self.nodes[p.0].needs_grad)
                    .collect();
                let contribs = {
                    let node = &self.nodes[i];
                    let inputs: Vec<&Tensor<T>> =
                        parents.iter().map(|p| &self.nodes[p.0].value).collect();
                    node.rule.as_ref().unwrap().backward(
                        &g,
                        &inputs,
                        &node.value,
                        &needs,
                    )
                };
                debug_assert_eq!(contribs.len(), parents.len());
                for (p, contrib) in parents.iter().zip(contribs) {
                    if let Some(cv) = contrib {
                        debug_assert_eq!(cv.len(), self.nodes[p.0].value.len());
                        accumulate(&mut sweep[p.0], cv);
                    }
                }
            }

            // Persist into the node's accumulated gradient.
            accumulate(&mut self.nodes[i].grad, g);
        }
        Ok(())
    }

    // ---- elementwise ops ----

    fn binary_same_shape(
        &self,
        context: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                context,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push_op("add", v, vec![a, b], Box::new(AddRule))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push_op("sub", v, vec![a, b], Box::new(SubRule))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push_op("mul", v, vec![a, b], Box::new(MulRule))
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * factor);
        self.push_op("scale", v, vec![a], Box::new(ScaleRule { factor }))
    }

    pub fn add_scalar(&mut self, a: NodeId, offset: T) -> Result<NodeId> {
        let v = self.value(a).map(|x| x + offset);
        self.push_op("add_scalar", v, vec![a], Box::new(PassThroughRule))
    }

    pub fn silu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * sigmoid(x));
        self.push_op("silu", v, vec![a], Box::new(SiluRule))
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x.abs());
        self.push_op("abs", v, vec![a], Box::new(AbsRule))
    }

    /// Elementwise square root; subgradient 0 at 0.
    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).data().iter().any(|&x| x < T::zero()) {
            return Err(Error::invalid("sqrt of negative value"));
        }
        let v = self.value(a).map(|x| x.sqrt());
        self.push_op("sqrt", v, vec![a], Box::new(SqrtRule))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x.exp());
        self.push_op("exp", v, vec![a], Box::new(ExpRule))
    }

    /// Clamp to [lo, hi]; subgradient 0 outside the open interval.
    pub fn clamp(&mut self, a: NodeId, lo: T, hi: T) -> Result<NodeId> {
        if lo > hi {
            return Err(Error::invalid("clamp bounds out of order"));
        }
        let v = self.value(a).map(|x| x.max(lo).min(hi));
        self.push_op("clamp", v, vec![a], Box::new(ClampRule { lo, hi }))
    }

    // ---- reductions ----

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::invalid("mean of empty tensor"));
        }
        let n = sc::<T>(t.len() as f64);
        let total: T = t.data().iter().copied().sum();
        let v = Tensor::scalar(total / n);
        let inv_n = T::one() / n;
        self.push_op("mean", v, vec![a], Box::new(ReduceRule { weight: inv_n }))
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::invalid("sum of empty tensor"));
        }
        let total: T = t.data().iter().copied().sum();
        let v = Tensor::scalar(total);
        self.push_op(
            "sum",
            v,
            vec![a],
            Box::new(ReduceRule { weight: T::one() }),
        )
    }

    // ---- shape ops ----

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(a).reshaped(shape)?;
        self.push_op("reshape", v, vec![a], Box::new(PassThroughRule))
    }

    /// Concatenate two NCHW tensors along the channel axis.
    pub fn concat_ch(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (na, ca, ha, wa) = self.value(a).dims4()?;
        let (nb, cb, hb, wb) = self.value(b).dims4()?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::ShapeMismatch {
                context: "concat_ch",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let hw = ha * wa;
        let mut out = Vec::with_capacity(na * (ca + cb) * hw);
        for n in 0..na {
            out.extend_from_slice(&da[n * ca * hw..(n + 1) * ca * hw]);
            out.extend_from_slice(&db[n * cb * hw..(n + 1) * cb * hw]);
        }
        let v = Tensor::from_vec(vec![na, ca + cb, ha, wa], out)?;
        self.push_op("concat_ch", v, vec![a, b], Box::new(ConcatChRule { ca, cb }))
    }

    /// Select channels [start, start+len) of an NCHW tensor.
    pub fn narrow_ch(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (n, c, h, w) = self.value(a).dims4()?;
        if start + len > c {
            return Err(Error::invalid(format!(
                "narrow_ch {}..{} out of {} channels",
                start,
                start + len,
                c
            )));
        }
        let hw = h * w;
        let d = self.value(a).data();
        let mut out = Vec::with_capacity(n * len * hw);
        for ni in 0..n {
            let base = ni * c * hw + start * hw;
            out.extend_from_slice(&d[base..base + len * hw]);
        }
        let v = Tensor::from_vec(vec![n, len, h, w], out)?;
        self.push_op(
            "narrow_ch",
            v,
            vec![a],
            Box::new(NarrowChRule { start, len }),
        )
    }

    /// Crop rows/cols off the spatial dims of an NCHW tensor.
    pub fn crop2d(
        &mut self,
        a: NodeId,
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
    ) -> Result<NodeId> {
        let (n, c, h, w) = self.value(a).dims4()?;
        if top + bottom >= h || left + right >= w {
            return Err(Error::invalid(format!(
                "crop2d ({top},{bottom},{left},{right}) exceeds {h}x{w}"
            )));
        }
        let (oh, ow) = (h - top - bottom, w - left - right);
        let d = self.value(a).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for nc in 0..n * c {
            let plane = &d[nc * h * w..(nc + 1) * h * w];
            for i in 0..oh {
                let row = (top + i) * w + left;
                out.extend_from_slice(&plane[row..row + ow]);
            }
        }
        let v = Tensor::from_vec(vec![n, c, oh, ow], out)?;
        self.push_op("crop2d", v, vec![a], Box::new(Crop2dRule { top, left }))
    }

    /// Per-sample per-channel bias: x[n,c,h,w] + e[n,c].
    pub fn add_bias_nc(&mut self, x: NodeId, e: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (ne, ce) = self.value(e).dims2()?;
        if (n, c) != (ne, ce) {
            return Err(Error::ShapeMismatch {
                context: "add_bias_nc",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(e).shape().to_vec(),
            });
        }
        let (dx, de) = (self.value(x).data(), self.value(e).data());
        let hw = h * w;
        let mut out = Vec::with_capacity(dx.len());
        for nc in 0..n * c {
            let b = de[nc];
            out.extend(dx[nc * hw..(nc + 1) * hw].iter().map(|&v| v + b));
        }
        let v = Tensor::from_vec(vec![n, c, h, w], out)?;
        self.push_op("add_bias_nc", v, vec![x, e], Box::new(AddBiasNcRule))
    }
}

fn accumulate<T: Scalar>(dst: &mut Option<Vec<T>>, src: Vec<T>) {
    match dst {
        None => *dst = Some(src),
        Some(d) => {
            debug_assert_eq!(d.len(), src.len());
            for (a, b) in d.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_fn(a.shape(), |i| f(a.data()[i], b.data()[i]))
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

// ---- backward rules ----

struct AddRule;
impl<T: Scalar> Backward<T> for AddRule {
    fn backward(
        &self,
        g: &[T],
        _inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![
            needs[0].then(|| g.to_vec()),
            needs[1].then(|| g.to_vec()),
        ]
    }
}

struct SubRule;
impl<T: Scalar> Backward<T> for SubRule {
    fn backward(
        &self,
        g: &[T],
        _inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![
            needs[0].then(|| g.to_vec()),
            needs[1].then(|| g.iter().map(|&v| -v).collect()),
        ]
    }
}

struct MulRule;
impl<T: Scalar> Backward<T> for MulRule {
    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        vec![
            needs[0].then(|| g.iter().zip(b).map(|(&gv, &bv)| gv * bv).collect()),
            needs[1].then(|| g.iter().zip(a).map(|(&gv, &av)| gv * av).collect()),
        ]
    }
}

struct ScaleRule<T> {
    factor: T,
}
impl<T: Scalar> Backward<T> for ScaleRule<T> {
    fn backward(
        &self,
        g: &[T],
        _inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![needs[0].then(|| g.iter().map(|&v| v * self.factor).collect())]
    }
}

/// Gradient passes through unchanged (add_scalar, reshape).
struct PassThroughRule;
impl<T: Scalar> Backward<T> for PassThroughRule {
    fn backward(
        &self,
        g: &[T],
        _inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![needs[0].then(|| g.to_vec())]
    }
}

struct SiluRule;
impl<T: Scalar> Backward<T> for SiluRule {
    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![needs[0].then(|| {
            g.iter()
                .zip(inputs[0].data())
                .map(|(&gv, &x)| {
                    let s = sigmoid(x);
                    gv * s * (T::one() + x * (T::one() - s))
                })
                .collect()
        })]
    }
}

struct AbsRule;
impl<T: Scalar> Backward<T> for AbsRule {
    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![needs[0].then(|| {
            g.iter()
                .zip(inputs[0].data())
                .map(|(&gv, &x)| {
                    if x > T::zero() {
                        gv
                    } else if x < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                })
                .collect()
        })]
    }
}

struct SqrtRule;
impl<T: Scalar> Backward<T> for SqrtRule {
    fn backward(
        &self,
        g: &[T],
        _inputs: &[&Tensor<T>],
        out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let half = sc::<T>(0.5);
        vec![needs[0].then(|| {
            g.iter()
                .zip(out.data())
                .map(|(&gv, &y)| if y == T::zero() { T::zero() } else { gv * half / y })
                .collect()
        })]
    }
}

struct ExpRule;
impl<T: Scalar> Backward<T> for ExpRule {
    fn backward(
        &self,
        g: &[T],
        _inputs: &[&Tensor<T>],
        out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![needs[0].then(|| g.iter().zip(out.data()).map(|(&gv, &y)| gv * y).collect())]
    }
}

struct ClampRule<T> {
    lo: T,
    hi: T,
}
impl<T: Scalar> Backward<T> for ClampRule<T> {
    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![needs[0].then(|| {
            g.iter()
                .zip(inputs[0].data())
                .map(|(&gv, &x)| {
                    if x > self.lo && x < self.hi {
                        gv
                    } else {
                        T::zero()
                    }
                })
                .collect()
        })]
    }
}

struct ReduceRule<T> {
    weight: T,
}
impl<T: Scalar> Backward<T> for ReduceRule<T> {
    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let seed = g[0] * self.weight;
        vec![needs[0].then(|| vec![seed; inputs[0].len()])]
    }
}

struct ConcatChRule {
    ca: usize,
    cb: usize,
}
impl<T: Scalar> Backward<T> for ConcatChRule {
    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let (n, _c, h, w) = out.dims4().expect("concat output is rank 4");
        let hw = h * w;
        let (sa, sb) = (self.ca * hw, self.cb * hw);
        let mut ga = needs[0].then(|| Vec::with_capacity(inputs[0].len()));
        let mut gb = needs[1].then(|| Vec::with_capacity(inputs[1].len()));
        for ni in 0..n {
            let base = ni * (sa + sb);
            if let Some(v) = ga.as_mut() {
                v.extend_from_slice(&g[base..base + sa]);
            }
            if let Some(v) = gb.as_mut() {
                v.extend_from_slice(&g[base + sa..base + sa + sb]);
            }
        }
        vec![ga, gb]
    }
}

struct NarrowChRule {
    start: usize,
    len: usize,
}
impl<T: Scalar> Backward<T> for NarrowChRule {
    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![needs[0].then(|| {
            let (n, c, h, w) = inputs[0].dims4().expect("narrow input is rank 4");
            let hw = h * w;
            let mut gx = vec![T::zero(); inputs[0].len()];
            for ni in 0..n {
                let src = ni * self.len * hw;
                let dst = ni * c * hw + self.start * hw;
                gx[dst..dst + self.len * hw]
                    .copy_from_slice(&g[src..src + self.len * hw]);
            }
            gx
        })]
    }
}

struct Crop2dRule {
    top: usize,
    left: usize,
}
impl<T: Scalar> Backward<T> for Crop2dRule {
    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![needs[0].then(|| {
            let (n, c, h, w) = inputs[0].dims4().expect("crop input is rank 4");
            let (_, _, oh, ow) = out.dims4().expect("crop output is rank 4");
            let mut gx = vec![T::zero(); inputs[0].len()];
            for nc in 0..n * c {
                for i in 0..oh {
                    let src = nc * oh * ow + i * ow;
                    let dst = nc * h * w + (self.top + i) * w + self.left;
                    gx[dst..dst + ow].copy_from_slice(&g[src..src + ow]);
                }
            }
            gx
        })]
    }
}

struct AddBiasNcRule;
impl<T: Scalar> Backward<T> for AddBiasNcRule {
    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let (n, c, h, w) = inputs[0].dims4().expect("add_bias_nc input is rank 4");
        let hw = h * w;
        let ge = needs[1].then(|| {
            let mut acc = vec![T::zero(); n * c];
            for (nc, a) in acc.iter_mut().enumerate() {
                *a = g[nc * hw..(nc + 1) * hw].iter().copied().sum();
            }
            acc
        });
        vec![needs[0].then(|| g.to_vec()), ge]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_example() {
        let mut g = Graph::new();
        let a = g.input(t64(&[2], &[1.0, 2.0]));
        let b = g.input(t64(&[2], &[3.0, 4.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn add_shape_mismatch_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::zeros(&[2]));
        let b = g.input(Tensor::zeros(&[3]));
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn silu_value_and_gradient_at_zero() {
        let mut g = Graph::new();
        let x = g.param(t64(&[1], &[0.0]));
        let y = g.silu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0]);
        let s = g.sum_all(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.5]);
    }

    #[test]
    fn clamp_values_and_gradient_mask() {
        let mut g = Graph::new();
        let x = g.param(t64(&[3], &[-2.0, 0.5, 2.0]));
        let y = g.clamp(x, -1.0, 1.0).unwrap();
        assert_eq!(g.value(y).data(), &[-1.0, 0.5, 1.0]);
        let s = g.sum_all(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn mean_value_and_gradient() {
        let mut g = Graph::new();
        let x = g.param(t64(&[3], &[1.0, 2.0, 3.0]));
        let m = g.mean_all(x).unwrap();
        assert_eq!(g.item(m), 2.0);
        g.backward(m).unwrap();
        let gr = g.grad(x).unwrap();
        for &v in gr {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let mut g = Graph::new();
        let x = g.param(t64(&[4], &[5.0, 6.0, 7.0, 8.0]));
        let m = g.mean_all(x).unwrap();
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::new();
        let x = g.param(t64(&[3], &[1.0, -4.0, 9.0]));
        let s = g.sum_all(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_and_product_gradients() {
        // f(x) = x^2 at x = 3 -> grad 6
        let mut g = Graph::new();
        let x = g.param(t64(&[1], &[3.0]));
        let y = g.mul(x, x).unwrap();
        let s = g.sum_all(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);

        // f(x, y) = x*y at (2, 5) -> grads (5, 2)
        let mut g = Graph::new();
        let x = g.param(t64(&[1], &[2.0]));
        let y = g.param(t64(&[1], &[5.0]));
        let p = g.mul(x, y).unwrap();
        let s = g.sum_all(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[5.0]);
        assert_eq!(g.grad(y).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_twice_doubles_gradients_exactly() {
        let mut g = Graph::new();
        let x = g.param(t64(&[2], &[1.5, -2.0]));
        let y = g.mul(x, x).unwrap();
        let s = g.mean_all(y).unwrap();
        g.backward(s).unwrap();
        let once: Vec<f64> = g.grad(x).unwrap().to_vec();
        g.backward(s).unwrap();
        let twice: Vec<f64> = g.grad(x).unwrap().to_vec();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(t64(&[2], &[1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut g = Graph::new();
        let x = g.input(t64(&[1], &[800.0]));
        // exp(800) overflows f64
        assert!(matches!(
            g.exp(x),
            Err(Error::NonFinite { op: "exp" })
        ));
    }

    #[test]
    fn concat_and_narrow_roundtrip() {
        let mut g = Graph::new();
        let a = g.param(t64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.param(t64(&[1, 2, 2, 2], &[5.0; 8]));
        let c = g.concat_ch(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[1, 3, 2, 2]);
        let back = g.narrow_ch(c, 0, 1).unwrap();
        assert_eq!(g.value(back).data(), g.value(a).data());
        let s = g.sum_all(back).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0; 4]);
        assert_eq!(g.grad(b).unwrap(), &[0.0; 8]);
    }

    #[test]
    fn crop2d_extracts_interior() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64));
        let y = g.crop2d(x, 1, 1, 1, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[4.0]);
        let s = g.sum_all(y).unwrap();
        g.backward(s).unwrap();
        let gr = g.grad(x).unwrap();
        assert_eq!(gr[4], 1.0);
        assert_eq!(gr.iter().copied().sum::<f64>(), 1.0);
    }
}
