//! Reverse-mode differentiation over a recorded tape of vector operations.
//!
//! A tape borrows the flat parameter buffer; parameter nodes read from it
//! directly and their adjoints land in the gradient returned by
//! [`Tape::gradient`]. Every operation stores its forward value, and
//! [`Tape::gradient`] walks the nodes in reverse recording order.
//!
//! The operation set is closed: dense layers, ReLU, dropout masks, prototype
//! activations, per-prototype masses, Dempster combination, the pignistic
//! transform and the two weighted losses.

use crate::belief::{combine_slices, combine_unnormalized};
use crate::error::{Error, Result};
use crate::params::Slot;
use crate::scalar::Real;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Param(Slot),
    Const,
    MatVec { w: Var, x: Var, rows: usize, cols: usize },
    Add(Var, Var),
    Relu(Var),
    Mask(Var, Vec<T>),
    Activation { x: Var, protos: Var, scale: Var, support: Var, h: usize, d: usize },
    RowSoftmax { a: Var, rows: usize, cols: usize },
    ProtoMass { s: Var, u: Var, index: usize, classes: usize },
    Combine(Var, Var),
    Pignistic(Var),
    Nll { p: Var, class: usize, weight: T },
    SoftmaxCe { logits: Var, class: usize, weight: T },
    WeightedSum(Vec<(Var, T)>),
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Vec<T>,
}

/// Probabilities are clamped below at this value before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

pub struct Tape<'p, T> {
    params: &'p [T],
    nodes: Vec<Node<T>>,
}

fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Softmax of one row, stabilized by subtracting the maximum.
pub(crate) fn softmax<T: Real>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `beta = logistic(raw)` and `gamma = raw^2`, the prototype parametrization.
pub(crate) fn support_of<T: Real>(raw: T) -> T {
    logistic(raw)
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p [T]) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        match &self.nodes[v.0].op {
            Op::Param(slot) => &self.params[slot.range()],
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    fn push(&mut self, op: Op<T>, value: Vec<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, slot: Slot) -> Var {
        assert!(slot.offset + slot.len <= self.params.len(), "slot out of range");
        self.push(Op::Param(slot), Vec::new())
    }

    pub fn constant(&mut self, value: Vec<T>) -> Var {
        self.push(Op::Const, value)
    }

    /// `W x` for a row-major `rows x cols` matrix.
    pub fn matvec(&mut self, w: Var, x: Var, rows: usize, cols: usize) -> Var {
        let (wv, xv) = (self.value(w), self.value(x));
        assert_eq!(wv.len(), rows * cols, "matvec weight shape");
        assert_eq!(xv.len(), cols, "matvec input length");
        let out = wv
            .chunks_exact(cols)
            .map(|row| row.iter().zip(xv).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
            .collect();
        self.push(Op::MatVec { w, x, rows, cols }, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "add operand lengths");
        let out = av.iter().zip(bv).map(|(&x, &y)| x + y).collect();
        self.push(Op::Add(a, b), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&v| v.max(T::zero())).collect();
        self.push(Op::Relu(a), out)
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mask(&mut self, a: Var, mask: Vec<T>) -> Var {
        let av = self.value(a);
        assert_eq!(av.len(), mask.len(), "mask length");
        let out = av.iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        self.push(Op::Mask(a, mask), out)
    }

    /// `s_h = beta_h * exp(-gamma_h * |x - p_h|^2)` for `h` prototypes of
    /// dimension `d`, with `beta = logistic(support)` and `gamma = scale^2`.
    pub fn prototype_activation(
        &mut self,
        x: Var,
        protos: Var,
        scale: Var,
        support: Var,
        h: usize,
        d: usize,
    ) -> Var {
        let xv = self.value(x);
        let pv = self.value(protos);
        assert_eq!(xv.len(), d, "activation input length");
        assert_eq!(pv.len(), h * d, "prototype matrix shape");
        let (sc, su) = (self.value(scale), self.value(support));
        let out = (0..h)
            .map(|k| {
                let dist = sq_dist(xv, &pv[k * d..(k + 1) * d]);
                support_of(su[k]) * (-(sc[k] * sc[k]) * dist).exp()
            })
            .collect();
        self.push(
            Op::Activation {
                x,
                protos,
                scale,
                support,
                h,
                d,
            },
            out,
        )
    }

    pub fn row_softmax(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.len(), rows * cols, "softmax shape");
        let out = av.chunks_exact(cols).flat_map(softmax).collect();
        self.push(Op::RowSoftmax { a, rows, cols }, out)
    }

    /// Mass of prototype `index`: `(u_1 s, ..., u_M s, 1 - s)`.
    pub fn prototype_mass(&mut self, s: Var, u: Var, index: usize, classes: usize) -> Var {
        let sk = self.value(s)[index];
        let row = &self.value(u)[index * classes..(index + 1) * classes];
        let mut out: Vec<T> = row.iter().map(|&uc| uc * sk).collect();
        out.push(T::one() - sk);
        self.push(
            Op::ProtoMass {
                s,
                u,
                index,
                classes,
            },
            out,
        )
    }

    /// Dempster's rule on two masses in the `M + 1` layout.
    pub fn combine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return Err(Error::FrameMismatch {
                expected: av.len() - 1,
                found: bv.len() - 1,
            });
        }
        let (out, _) = combine_slices(av, bv)?;
        Ok(self.push(Op::Combine(a, b), out))
    }

    pub fn pignistic(&mut self, m: Var) -> Var {
        let mv = self.value(m);
        let classes = mv.len() - 1;
        let share = mv[classes] / T::from_usize(classes).expect("class count fits");
        let out = mv[..classes].iter().map(|&v| v + share).collect();
        self.push(Op::Pignistic(m), out)
    }

    /// `-weight * ln(max(p[class], floor))`.
    pub fn nll(&mut self, p: Var, class: usize, weight: T) -> Var {
        let pc = self.value(p)[class].max(T::lit(PROB_FLOOR));
        let out = vec![-weight * pc.ln()];
        self.push(Op::Nll { p, class, weight }, out)
    }

    /// `-weight * log_softmax(logits)[class]`.
    pub fn softmax_ce(&mut self, logits: Var, class: usize, weight: T) -> Var {
        let lv = self.value(logits);
        let max = lv.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = lv.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        let out = vec![-weight * (lv[class] - lse)];
        self.push(
            Op::SoftmaxCe {
                logits,
                class,
                weight,
            },
            out,
        )
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: Vec<(Var, T)>) -> Var {
        let total = terms
            .iter()
            .fold(T::zero(), |acc, &(v, c)| acc + c * self.scalar(v));
        self.push(Op::WeightedSum(terms), vec![total])
    }

    fn len_of(&self, v: Var) -> usize {
        self.value(v).len()
    }

    /// Gradient of the scalar node `root` with respect to the parameter buffer.
    pub fn gradient(&self, root: Var) -> Vec<T> {
        assert_eq!(self.len_of(root), 1, "gradient root must be a scalar");
        let mut grad = vec![T::zero(); self.params.len()];
        let mut adj: Vec<Vec<T>> = vec![Vec::new(); root.0 + 1];
        adj[root.0] = vec![T::one()];

        for id in (0..=root.0).rev() {
            let g = std::mem::take(&mut adj[id]);
            if g.is_empty() {
                continue;
            }
            let node = &self.nodes[id];
            match &node.op {
                Op::Param(slot) => {
                    for (dst, &v) in grad[slot.range()].iter_mut().zip(&g) {
                        *dst = *dst + v;
                    }
                }
                Op::Const => {}
                &Op::MatVec { w, x, rows, cols } => {
                    let (wv, xv) = (self.value(w), self.value(x));
                    let mut gw = vec![T::zero(); rows * cols];
                    let mut gx = vec![T::zero(); cols];
                    for r in 0..rows {
                        let gr = g[r];
                        if gr == T::zero() {
                            continue;
                        }
                        let wrow = &wv[r * cols..(r + 1) * cols];
                        let gwrow = &mut gw[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            gwrow[c] = gr * xv[c];
                            gx[c] = gx[c] + gr * wrow[c];
                        }
                    }
                    self.accumulate(&mut adj, w, gw);
                    self.accumulate(&mut adj, x, gx);
                }
                &Op::Add(a, b) => {
                    self.accumulate(&mut adj, a, g.clone());
                    self.accumulate(&mut adj, b, g);
                }
                &Op::Relu(a) => {
                    let av = self.value(a);
                    let ga = g
                        .iter()
                        .zip(av)
                        .map(|(&gi, &ai)| if ai > T::zero() { gi } else { T::zero() })
                        .collect();
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Mask(a, mask) => {
                    let ga = g.iter().zip(mask).map(|(&gi, &mi)| gi * mi).collect();
                    self.accumulate(&mut adj, *a, ga);
                }
                &Op::Activation {
                    x,
                    protos,
                    scale,
                    support,
                    h,
                    d,
                } => {
                    let (xv, pv) = (self.value(x), self.value(protos));
                    let (sc, su) = (self.value(scale), self.value(support));
                    let s = &node.value;
                    let mut gx = vec![T::zero(); d];
                    let mut gp = vec![T::zero(); h * d];
                    let mut gsc = vec![T::zero(); h];
                    let mut gsu = vec![T::zero(); h];
                    let two = T::lit(2.0);
                    for k in 0..h {
                        let gs = g[k] * s[k];
                        if gs == T::zero() {
                            continue;
                        }
                        let proto = &pv[k * d..(k + 1) * d];
                        let gamma = sc[k] * sc[k];
                        let dist = sq_dist(xv, proto);
                        // ds/d(raw support) = s (1 - beta); ds/d(scale) = -2 scale d^2 s
                        gsu[k] = gs * (T::one() - support_of(su[k]));
                        gsc[k] = -gs * two * sc[k] * dist;
                        let coef = two * gamma * gs;
                        for j in 0..d {
                            let diff = xv[j] - proto[j];
                            gx[j] = gx[j] - coef * diff;
                            gp[k * d + j] = coef * diff;
                        }
                    }
                    self.accumulate(&mut adj, x, gx);
                    self.accumulate(&mut adj, protos, gp);
                    self.accumulate(&mut adj, scale, gsc);
                    self.accumulate(&mut adj, support, gsu);
                }
                &Op::RowSoftmax { a, rows, cols } => {
                    let y = &node.value;
                    let mut ga = vec![T::zero(); rows * cols];
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot = yr.iter().zip(gr).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                        for c in 0..cols {
                            ga[r * cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    self.accumulate(&mut adj, a, ga);
                }
                &Op::ProtoMass {
                    s,
                    u,
                    index,
                    classes,
                } => {
                    let sk = self.value(s)[index];
                    let row = &self.value(u)[index * classes..(index + 1) * classes];
                    let mut gs = vec![T::zero(); self.len_of(s)];
                    let mut gu = vec![T::zero(); self.len_of(u)];
                    let mut acc = -g[classes];
                    for c in 0..classes {
                        acc = acc + g[c] * row[c];
                        gu[index * classes + c] = g[c] * sk;
                    }
                    gs[index] = acc;
                    self.accumulate(&mut adj, s, gs);
                    self.accumulate(&mut adj, u, gu);
                }
                &Op::Combine(a, b) => {
                    let (ga, gb) = combine_backward(self.value(a), self.value(b), &node.value, &g);
                    self.accumulate(&mut adj, a, ga);
                    self.accumulate(&mut adj, b, gb);
                }
                &Op::Pignistic(m) => {
                    let classes = g.len();
                    let share = g.iter().copied().sum::<T>()
                        / T::from_usize(classes).expect("class count fits");
                    let mut gm = g.clone();
                    gm.push(share);
                    self.accumulate(&mut adj, m, gm);
                }
                &Op::Nll { p, class, weight } => {
                    let pv = self.value(p);
                    let mut gp = vec![T::zero(); pv.len()];
                    if pv[class] > T::lit(PROB_FLOOR) {
                        gp[class] = -g[0] * weight / pv[class];
                    }
                    self.accumulate(&mut adj, p, gp);
                }
                &Op::SoftmaxCe {
                    logits,
                    class,
                    weight,
                } => {
                    let probs = softmax(self.value(logits));
                    let gl = probs
                        .iter()
                        .enumerate()
                        .map(|(c, &pc)| {
                            let target = if c == class { T::one() } else { T::zero() };
                            g[0] * weight * (pc - target)
                        })
                        .collect();
                    self.accumulate(&mut adj, logits, gl);
                }
                Op::WeightedSum(terms) => {
                    for &(v, c) in terms {
                        self.accumulate(&mut adj, v, vec![g[0] * c]);
                    }
                }
            }
        }
        grad
    }

    fn accumulate(&self, adj: &mut [Vec<T>], v: Var, g: Vec<T>) {
        let slot = &mut adj[v.0];
        if slot.is_empty() {
            *slot = g;
        } else {
            for (dst, src) in slot.iter_mut().zip(g) {
                *dst = *dst + src;
            }
        }
    }
}

pub(crate) fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Vector-Jacobian product of the closed-form Dempster rule.
///
/// With unnormalized products `q`, conflict `kappa` and `out = q / (1 - kappa)`,
/// the quotient rule gives `dL/dq = g / Z` and `dL/dZ = -<g, out> / Z`, where
/// `Z = 1 - kappa` and `dZ/da_c = -(sum_b - b_c)`.
pub(crate) fn combine_backward<T: Real>(a: &[T], b: &[T], out: &[T], g: &[T]) -> (Vec<T>, Vec<T>) {
    let m = a.len() - 1;
    let (_, kappa) = combine_unnormalized(a, b);
    let z = T::one() - kappa;
    let gq: Vec<T> = g.iter().map(|&v| v / z).collect();
    let gz = -g.iter().zip(out).fold(T::zero(), |acc, (&gi, &oi)| acc + gi * oi) / z;
    let sum_a: T = a[..m].iter().copied().sum();
    let sum_b: T = b[..m].iter().copied().sum();
    let (a_ign, b_ign) = (a[m], b[m]);

    let mut ga = vec![T::zero(); m + 1];
    let mut gb = vec![T::zero(); m + 1];
    for c in 0..m {
        ga[c] = gq[c] * (b[c] + b_ign) - gz * (sum_b - b[c]);
        gb[c] = gq[c] * (a[c] + a_ign) - gz * (sum_a - a[c]);
        ga[m] = ga[m] + gq[c] * b[c];
        gb[m] = gb[m] + gq[c] * a[c];
    }
    ga[m] = ga[m] + gq[m] * b_ign;
    gb[m] = gb[m] + gq[m] * a_ign;
    (ga, gb)
}
