//! Differentiable tensor ops recorded on a [`Tape`].
//!
//! Shape contracts are asserted: callers (model/loss code) validate user
//! input before building graphs, so a violation here is a bug.

use super::{Arr, BackOp, Tape, Var};
use ndarray::{ArrayD, ArrayViewD, Axis, Ix1, Ix2, IxDyn, Slice};

fn same_shape(a: &Arr, b: &Arr, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: operand shapes differ");
}

fn scalar0(v: f64) -> Arr {
    ArrayD::from_elem(IxDyn(&[]), v)
}

impl Tape {
    /// Elementwise `a + b` (identical shapes).
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "add");
        let value = self.value(a) + self.value(b);
        self.push_op(
            value,
            BackOp {
                parents: vec![a, b],
                run: Box::new(move |g, sink| {
                    sink(0, g.clone());
                    sink(1, g.clone());
                }),
            },
        )
    }

    /// Elementwise `a - b` (identical shapes).
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "sub");
        let value = self.value(a) - self.value(b);
        self.push_op(
            value,
            BackOp {
                parents: vec![a, b],
                run: Box::new(move |g, sink| {
                    sink(0, g.clone());
                    sink(1, g.mapv(|x| -x));
                }),
            },
        )
    }

    /// Elementwise `a * b` (identical shapes).
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "mul");
        let value = self.value(a) * self.value(b);
        let av = self.value_rc(a);
        let bv = self.value_rc(b);
        self.push_op(
            value,
            BackOp {
                parents: vec![a, b],
                run: Box::new(move |g, sink| {
                    sink(0, g * &*bv);
                    sink(1, g * &*av);
                }),
            },
        )
    }

    /// Elementwise multiply where `b`'s axes are either equal to `a`'s or 1
    /// (right-aligned ndarray broadcasting, same rank).
    pub fn mul_bcast(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.ndim(), bv.ndim(), "mul_bcast: rank mismatch");
        let bcast_axes: Vec<usize> = (0..av.ndim())
            .filter(|&i| bv.shape()[i] == 1 && av.shape()[i] != 1)
            .collect();
        for i in 0..av.ndim() {
            assert!(
                bv.shape()[i] == av.shape()[i] || bv.shape()[i] == 1,
                "mul_bcast: incompatible shapes"
            );
        }
        let value = av * bv;
        let ar = self.value_rc(a);
        let br = self.value_rc(b);
        self.push_op(
            value,
            BackOp {
                parents: vec![a, b],
                run: Box::new(move |g, sink| {
                    sink(0, g * &*br);
                    let mut gb = g * &*ar;
                    for &ax in &bcast_axes {
                        gb = gb.sum_axis(Axis(ax)).insert_axis(Axis(ax));
                    }
                    sink(1, gb);
                }),
            },
        )
    }

    /// `a * k` for a plain f64 constant.
    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).mapv(|x| x * k);
        self.push_op(
            value,
            BackOp {
                parents: vec![a],
                run: Box::new(move |g, sink| sink(0, g.mapv(|x| x * k))),
            },
        )
    }

    /// `a + k` elementwise for a plain f64 constant.
    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).mapv(|x| x + k);
        self.push_op(
            value,
            BackOp { parents: vec![a], run: Box::new(move |g, sink| sink(0, g.clone())) },
        )
    }

    /// Broadcast a per-channel bias over `[N, C, H, W]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let xs = self.value(x).shape().to_vec();
        assert_eq!(xs.len(), 4, "add_bias expects NCHW input");
        let bval = self.value(b).to_owned();
        assert_eq!(bval.shape(), [xs[1]], "add_bias: bias must be [C]");
        let mut value = self.value(x).clone();
        {
            let vs = value.as_slice_mut().expect("add_bias: non-contiguous input");
            let ba = bval.as_slice().unwrap();
            let m = xs[2] * xs[3];
            for n in 0..xs[0] {
                for c in 0..xs[1] {
                    let base = (n * xs[1] + c) * m;
                    for v in &mut vs[base..base + m] {
                        *v += ba[c];
                    }
                }
            }
        }
        self.push_op(
            value,
            BackOp {
                parents: vec![x, b],
                run: Box::new(move |g, sink| {
                    sink(0, g.clone());
                    let gb = g.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
                    sink(1, gb.into_dyn());
                }),
            },
        )
    }

    /// LeakyReLU with the given negative slope.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.value(x).mapv(|v| if v >= 0.0 { v } else { slope * v });
        let xv = self.value_rc(x);
        self.push_op(
            value,
            BackOp {
                parents: vec![x],
                run: Box::new(move |g, sink| {
                    let mut gx = g.clone();
                    gx.zip_mut_with(&xv, |gi, &vi| {
                        if vi < 0.0 {
                            *gi *= slope;
                        }
                    });
                    sink(0, gx);
                }),
            },
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = std::rc::Rc::new(self.value(x).mapv(f64::tanh));
        let yv = std::rc::Rc::clone(&value);
        self.push_op_rc(
            value,
            BackOp {
                parents: vec![x],
                run: Box::new(move |g, sink| {
                    let mut gx = g.clone();
                    gx.zip_mut_with(&yv, |gi, &yi| *gi *= 1.0 - yi * yi);
                    sink(0, gx);
                }),
            },
        )
    }

    /// Elementwise absolute value; subgradient 0 at 0.
    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::abs);
        let xv = self.value_rc(x);
        self.push_op(
            value,
            BackOp {
                parents: vec![x],
                run: Box::new(move |g, sink| {
                    let mut gx = g.clone();
                    gx.zip_mut_with(&xv, |gi, &vi| {
                        *gi *= if vi > 0.0 {
                            1.0
                        } else if vi < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    sink(0, gx);
                }),
            },
        )
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v * v);
        let xv = self.value_rc(x);
        self.push_op(
            value,
            BackOp {
                parents: vec![x],
                run: Box::new(move |g, sink| {
                    let mut gx = g.clone();
                    gx.zip_mut_with(&xv, |gi, &vi| *gi *= 2.0 * vi);
                    sink(0, gx);
                }),
            },
        )
    }

    /// Mean over all elements, yielding a 0-dim scalar node.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let value = scalar0(self.value(x).sum() / n);
        let shape: Vec<usize> = self.value(x).shape().to_vec();
        self.push_op(
            value,
            BackOp {
                parents: vec![x],
                run: Box::new(move |g, sink| {
                    let g0 = *g.iter().next().unwrap();
                    sink(0, ArrayD::from_elem(IxDyn(&shape), g0 / n));
                }),
            },
        )
    }

    /// Sum over all elements, yielding a 0-dim scalar node.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = scalar0(self.value(x).sum());
        let shape: Vec<usize> = self.value(x).shape().to_vec();
        self.push_op(
            value,
            BackOp {
                parents: vec![x],
                run: Box::new(move |g, sink| {
                    let g0 = *g.iter().next().unwrap();
                    sink(0, ArrayD::from_elem(IxDyn(&shape), g0));
                }),
            },
        )
    }

    /// Multiply a tensor by a 0-dim scalar node.
    pub fn mul_scalar_node(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.value(s).len(), 1, "mul_scalar_node: s must be scalar");
        let sv = self.scalar_value(s);
        let value = self.value(x).mapv(|v| v * sv);
        let xv = self.value_rc(x);
        self.push_op(
            value,
            BackOp {
                parents: vec![x, s],
                run: Box::new(move |g, sink| {
                    sink(0, g.mapv(|v| v * sv));
                    sink(1, scalar0((g * &*xv).sum()));
                }),
            },
        )
    }

    /// Divide a tensor by a 0-dim scalar node.
    pub fn div_scalar_node(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.value(s).len(), 1, "div_scalar_node: s must be scalar");
        let sv = self.scalar_value(s);
        let value = self.value(x).mapv(|v| v / sv);
        let xv = self.value_rc(x);
        self.push_op(
            value,
            BackOp {
                parents: vec![x, s],
                run: Box::new(move |g, sink| {
                    sink(0, g.mapv(|v| v / sv));
                    sink(1, scalar0(-(g * &*xv).sum() / (sv * sv)));
                }),
            },
        )
    }

    /// `max(s, floor)` for a 0-dim scalar node; gradient passes when `s >= floor`.
    pub fn clamp_min_scalar(&mut self, s: Var, floor: f64) -> Var {
        let sv = self.scalar_value(s);
        let value = scalar0(sv.max(floor));
        self.push_op(
            value,
            BackOp {
                parents: vec![s],
                run: Box::new(move |g, sink| {
                    let pass = if sv >= floor { 1.0 } else { 0.0 };
                    sink(0, g.mapv(|v| v * pass));
                }),
            },
        )
    }

    /// Matrix product `[M,K] x [K,N] -> [M,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let a2 = self.value(a).view().into_dimensionality::<Ix2>().expect("matmul: a not 2-d");
        let b2 = self.value(b).view().into_dimensionality::<Ix2>().expect("matmul: b not 2-d");
        assert_eq!(a2.ncols(), b2.nrows(), "matmul: inner dims differ");
        let value = a2.dot(&b2).into_dyn();
        let ar = self.value_rc(a);
        let br = self.value_rc(b);
        self.push_op(
            value,
            BackOp {
                parents: vec![a, b],
                run: Box::new(move |g, sink| {
                    let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                    let a2 = ar.view().into_dimensionality::<Ix2>().unwrap();
                    let b2 = br.view().into_dimensionality::<Ix2>().unwrap();
                    sink(0, g2.dot(&b2.t()).into_dyn());
                    sink(1, a2.t().dot(&g2).into_dyn());
                }),
            },
        )
    }

    /// Matrix-vector product `[M,K] x [K] -> [M]`.
    pub fn matvec(&mut self, a: Var, x: Var) -> Var {
        let a2 = self.value(a).view().into_dimensionality::<Ix2>().expect("matvec: a not 2-d");
        let x1 = self.value(x).view().into_dimensionality::<Ix1>().expect("matvec: x not 1-d");
        assert_eq!(a2.ncols(), x1.len(), "matvec: dims differ");
        let value = a2.dot(&x1).into_dyn();
        let ar = self.value_rc(a);
        let xr = self.value_rc(x);
        self.push_op(
            value,
            BackOp {
                parents: vec![a, x],
                run: Box::new(move |g, sink| {
                    let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
                    let a2 = ar.view().into_dimensionality::<Ix2>().unwrap();
                    let x1 = xr.view().into_dimensionality::<Ix1>().unwrap();
                    let mut ga = Arr::zeros(ar.raw_dim());
                    {
                        let mut ga2 = ga.view_mut().into_dimensionality::<Ix2>().unwrap();
                        for i in 0..g1.len() {
                            for j in 0..x1.len() {
                                ga2[[i, j]] = g1[i] * x1[j];
                            }
                        }
                    }
                    sink(0, ga);
                    sink(1, a2.t().dot(&g1).into_dyn());
                }),
            },
        )
    }

    /// Inner product of two 1-d nodes, yielding a 0-dim scalar node.
    pub fn dot(&mut self, u: Var, w: Var) -> Var {
        let u1 = self.value(u).view().into_dimensionality::<Ix1>().expect("dot: u not 1-d");
        let w1 = self.value(w).view().into_dimensionality::<Ix1>().expect("dot: w not 1-d");
        assert_eq!(u1.len(), w1.len(), "dot: lengths differ");
        let value = scalar0(u1.dot(&w1));
        let ur = self.value_rc(u);
        let wr = self.value_rc(w);
        self.push_op(
            value,
            BackOp {
                parents: vec![u, w],
                run: Box::new(move |g, sink| {
                    let g0 = *g.iter().next().unwrap();
                    sink(0, wr.mapv(|v| v * g0));
                    sink(1, ur.mapv(|v| v * g0));
                }),
            },
        )
    }

    /// Transpose a 2-d node.
    pub fn transpose2(&mut self, a: Var) -> Var {
        let a2 = self.value(a).view().into_dimensionality::<Ix2>().expect("transpose2: not 2-d");
        // as_standard_layout: `.t().to_owned()` would keep fortran order.
        let value = a2.t().as_standard_layout().to_owned().into_dyn();
        self.push_op(
            value,
            BackOp {
                parents: vec![a],
                run: Box::new(move |g, sink| {
                    let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                    sink(0, g2.t().as_standard_layout().to_owned().into_dyn());
                }),
            },
        )
    }

    /// Row-wise softmax of a 2-d node.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let a2 = self.value(a).view().into_dimensionality::<Ix2>().expect("softmax: not 2-d");
        let mut value = a2.to_owned();
        for mut row in value.rows_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let value = std::rc::Rc::new(value.into_dyn());
        let yv = std::rc::Rc::clone(&value);
        self.push_op_rc(
            value,
            BackOp {
                parents: vec![a],
                run: Box::new(move |g, sink| {
                    let y2 = yv.view().into_dimensionality::<Ix2>().unwrap();
                    let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                    let mut gx = y2.to_owned();
                    for (mut grow, (yrow, gr)) in
                        gx.rows_mut().into_iter().zip(y2.rows().into_iter().zip(g2.rows()))
                    {
                        let dot: f64 = yrow.iter().zip(gr.iter()).map(|(y, g)| y * g).sum();
                        for (o, (&y, &g)) in grow.iter_mut().zip(yrow.iter().zip(gr.iter())) {
                            *o = y * (g - dot);
                        }
                    }
                    sink(0, gx.into_dyn());
                }),
            },
        )
    }

    /// Reshape to a new shape with the same element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let old: Vec<usize> = self.value(x).shape().to_vec();
        let n: usize = shape.iter().product();
        assert_eq!(self.value(x).len(), n, "reshape: element count differs");
        let value = self
            .value(x)
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape failed");
        self.push_op(
            value,
            BackOp {
                parents: vec![x],
                run: Box::new(move |g, sink| {
                    let g = g.as_standard_layout();
                    sink(0, g.to_owned().into_shape_with_order(IxDyn(&old)).unwrap());
                }),
            },
        )
    }

    /// Concatenate along `axis`; all other dims must agree.
    pub fn concat_axis(&mut self, axis: usize, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "concat_axis: empty input list");
        let views: Vec<ArrayViewD<f64>> = xs.iter().map(|v| self.value(*v).view()).collect();
        let value = ndarray::concatenate(Axis(axis), &views).expect("concat_axis: shape mismatch");
        // concatenate along inner axes can produce non-standard layouts;
        // downstream kernels index raw slices.
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().to_owned()
        };
        let sizes: Vec<usize> = xs.iter().map(|v| self.value(*v).shape()[axis]).collect();
        self.push_op(
            value,
            BackOp {
                parents: xs.to_vec(),
                run: Box::new(move |g, sink| {
                    let mut start = 0isize;
                    for (i, &sz) in sizes.iter().enumerate() {
                        let part = g
                            .slice_axis(Axis(axis), Slice::from(start..start + sz as isize))
                            .to_owned();
                        sink(i, part);
                        start += sz as isize;
                    }
                }),
            },
        )
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let full: Vec<usize> = self.value(x).shape().to_vec();
        assert!(start + len <= full[axis], "narrow: out of range");
        let value = self
            .value(x)
            .slice_axis(Axis(axis), Slice::from(start as isize..(start + len) as isize))
            .to_owned();
        self.push_op(
            value,
            BackOp {
                parents: vec![x],
                run: Box::new(move |g, sink| {
                    let mut gx = Arr::zeros(IxDyn(&full));
                    gx.slice_axis_mut(
                        Axis(axis),
                        Slice::from(start as isize..(start + len) as isize),
                    )
                    .assign(g);
                    sink(0, gx);
                }),
            },
        )
    }

    /// Nearest-neighbour 2x upsampling of `[N, C, H, W]`.
    pub fn upsample_nearest2(&mut self, x: Var) -> Var {
        let s = self.value(x).shape().to_vec();
        assert_eq!(s.len(), 4, "upsample expects NCHW");
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let xv = self.value(x);
        let mut out = Arr::zeros(IxDyn(&[n, c, 2 * h, 2 * w]));
        {
            let xs = xv.as_slice().expect("upsample: non-contiguous input");
            let os = out.as_slice_mut().unwrap();
            for nc in 0..n * c {
                let ib = nc * h * w;
                let ob = nc * 4 * h * w;
                for y in 0..h {
                    for x_ in 0..w {
                        let v = xs[ib + y * w + x_];
                        let o0 = ob + (2 * y) * (2 * w) + 2 * x_;
                        let o1 = ob + (2 * y + 1) * (2 * w) + 2 * x_;
                        os[o0] = v;
                        os[o0 + 1] = v;
                        os[o1] = v;
                        os[o1 + 1] = v;
                    }
                }
            }
        }
        self.push_op(
            out,
            BackOp {
                parents: vec![x],
                run: Box::new(move |g, sink| {
                    let gs = g.as_standard_layout();
                    let gs = gs.as_slice().unwrap();
                    let mut gx = Arr::zeros(IxDyn(&[n, c, h, w]));
                    {
                        let go = gx.as_slice_mut().unwrap();
                        for nc in 0..n * c {
                            let ib = nc * h * w;
                            let ob = nc * 4 * h * w;
                            for y in 0..h {
                                for x_ in 0..w {
                                    let o0 = ob + (2 * y) * (2 * w) + 2 * x_;
                                    let o1 = ob + (2 * y + 1) * (2 * w) + 2 * x_;
                                    go[ib + y * w + x_] = gs[o0] + gs[o0 + 1] + gs[o1] + gs[o1 + 1];
                                }
                            }
                        }
                    }
                    sink(0, gx);
                }),
            },
        )
    }

    /// Per-sample, per-channel normalization over the spatial extent of
    /// `[N, C, H, W]`, with learnable per-channel gain and shift.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let s = self.value(x).shape().to_vec();
        assert_eq!(s.len(), 4, "instance_norm expects NCHW");
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let m = h * w;
        assert_eq!(self.value(gamma).shape(), [c], "instance_norm: gamma must be [C]");
        assert_eq!(self.value(beta).shape(), [c], "instance_norm: beta must be [C]");

        let xv = self.value_std(x);
        let gval = self.value(gamma).to_owned();
        let bval = self.value(beta).to_owned();
        let mut xhat = Arr::zeros(IxDyn(&[n, c, h, w]));
        let mut inv_std = vec![0.0f64; n * c];
        let mut out = Arr::zeros(IxDyn(&[n, c, h, w]));
        {
            let xs = xv.as_slice().expect("instance_norm: non-contiguous input");
            let xh = xhat.as_slice_mut().unwrap();
            let os = out.as_slice_mut().unwrap();
            let ga = gval.as_slice().unwrap();
            let ba = bval.as_slice().unwrap();
            for i in 0..n * c {
                let base = i * m;
                let lane = &xs[base..base + m];
                let mean: f64 = lane.iter().sum::<f64>() / m as f64;
                let var: f64 = lane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
                let inv = 1.0 / (var + eps).sqrt();
                inv_std[i] = inv;
                let ch = i % c;
                for j in 0..m {
                    let xn = (lane[j] - mean) * inv;
                    xh[base + j] = xn;
                    os[base + j] = ga[ch] * xn + ba[ch];
                }
            }
        }
        let xhat = std::rc::Rc::new(xhat);
        let inv_std = std::rc::Rc::new(inv_std);
        let gval = std::rc::Rc::new(gval);
        self.push_op(
            out,
            BackOp {
                parents: vec![x, gamma, beta],
                run: Box::new(move |g, sink| {
                    let gsl = g.as_standard_layout();
                    let gs = gsl.as_slice().unwrap();
                    let xh = xhat.as_slice().unwrap();
                    let ga = gval.as_slice().unwrap();
                    let mut gx = Arr::zeros(IxDyn(&[n, c, h, w]));
                    let mut ggamma = vec![0.0f64; c];
                    let mut gbeta = vec![0.0f64; c];
                    {
                        let go = gx.as_slice_mut().unwrap();
                        for i in 0..n * c {
                            let base = i * m;
                            let ch = i % c;
                            let inv = inv_std[i];
                            let mut sum_d = 0.0;
                            let mut sum_dx = 0.0;
                            for j in 0..m {
                                let dxhat = gs[base + j] * ga[ch];
                                sum_d += dxhat;
                                sum_dx += dxhat * xh[base + j];
                                ggamma[ch] += gs[base + j] * xh[base + j];
                                gbeta[ch] += gs[base + j];
                            }
                            let mean_d = sum_d / m as f64;
                            let mean_dx = sum_dx / m as f64;
                            for j in 0..m {
                                let dxhat = gs[base + j] * ga[ch];
                                go[base + j] = inv * (dxhat - mean_d - xh[base + j] * mean_dx);
                            }
                        }
                    }
                    sink(0, gx);
                    sink(1, Arr::from_shape_vec(IxDyn(&[c]), ggamma).unwrap());
                    sink(2, Arr::from_shape_vec(IxDyn(&[c]), gbeta).unwrap());
                }),
            },
        )
    }
}
