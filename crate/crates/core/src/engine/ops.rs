use super::{Node, ScalarField, Value};

/// Smoothing constant of [`Var::abs_smooth`](super::Var::abs_smooth).
pub const EPS_ABS: f64 = 1e-6;
/// Denominators smaller than this in magnitude are replaced by it.
pub const EPS_DENOM: f64 = 1e-12;

/// Coordinates this far outside the grid still count as inside (round-off).
pub const BOUNDS_SLACK: f64 = 1e-9;

/// Image axis: `U` runs along columns (x), `V` along rows (y).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    U,
    V,
}

#[derive(Debug, Clone, Copy)]
pub(super) enum UnaryOp {
    Neg,
    Sqrt,
    Abs,
    AbsSmooth,
    Exp,
    Softplus,
    Sin,
    Cos,
    Square,
}

#[derive(Debug, Clone, Copy)]
pub(super) enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy)]
pub(super) enum Op {
    Input,
    Unary { kind: UnaryOp, arg: usize },
    Binary { kind: BinaryOp, lhs: usize, rhs: usize },
    Clamp { arg: usize, lo: f64, hi: f64 },
    Mean(usize),
    Sum(usize),
    Diff { arg: usize, axis: Axis },
    Box3(usize),
    Bilinear { src: usize, u: usize, v: usize },
}

impl Op {
    pub(super) fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Unary { kind, .. } => kind.name(),
            Op::Binary { kind, .. } => kind.name(),
            Op::Clamp { .. } => "clamp",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::Diff { .. } => "diff",
            Op::Box3(_) => "box3",
            Op::Bilinear { .. } => "bilinear",
        }
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

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn guard_denom(b: f64) -> (f64, bool) {
    if b.abs() < EPS_DENOM {
        (if b < 0.0 { -EPS_DENOM } else { EPS_DENOM }, true)
    } else {
        (b, false)
    }
}

impl UnaryOp {
    pub(super) fn name(&self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
            UnaryOp::AbsSmooth => "abs_smooth",
            UnaryOp::Exp => "exp",
            UnaryOp::Softplus => "softplus",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Square => "square",
        }
    }

    pub(super) fn forward(&self, x: f64) -> f64 {
        match self {
            UnaryOp::Neg => -x,
            UnaryOp::Sqrt => x.max(0.0).sqrt(),
            UnaryOp::Abs => x.abs(),
            UnaryOp::AbsSmooth => (x * x + EPS_ABS * EPS_ABS).sqrt(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Softplus => softplus(x),
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Square => x * x,
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn derivative(&self, x: f64, y: f64) -> f64 {
        match self {
            UnaryOp::Neg => -1.0,
            UnaryOp::Sqrt => {
                if y > 0.0 {
                    0.5 / y
                } else {
                    0.0
                }
            }
            UnaryOp::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnaryOp::AbsSmooth => x / y,
            UnaryOp::Exp => y,
            UnaryOp::Softplus => sigmoid(x),
            UnaryOp::Sin => x.cos(),
            UnaryOp::Cos => -x.sin(),
            UnaryOp::Square => 2.0 * x,
        }
    }
}

impl BinaryOp {
    pub(super) fn name(&self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
            BinaryOp::Min => "min",
            BinaryOp::Max => "max",
        }
    }

    pub(super) fn forward(&self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / guard_denom(b).0,
            BinaryOp::Min => {
                if b < a {
                    b
                } else {
                    a
                }
            }
            BinaryOp::Max => {
                if b > a {
                    b
                } else {
                    a
                }
            }
        }
    }

    fn partials(&self, a: f64, b: f64) -> (f64, f64) {
        match self {
            BinaryOp::Add => (1.0, 1.0),
            BinaryOp::Sub => (1.0, -1.0),
            BinaryOp::Mul => (b, a),
            BinaryOp::Div => {
                let (d, guarded) = guard_denom(b);
                (1.0 / d, if guarded { 0.0 } else { -a / (d * d) })
            }
            BinaryOp::Min => {
                if b < a {
                    (0.0, 1.0)
                } else {
                    (1.0, 0.0)
                }
            }
            BinaryOp::Max => {
                if b > a {
                    (0.0, 1.0)
                } else {
                    (1.0, 0.0)
                }
            }
        }
    }
}

/// Broadcast index: scalars always read slot 0.
#[inline]
pub(super) fn bidx(data: &[f64], i: usize) -> usize {
    if data.len() == 1 {
        0
    } else {
        i
    }
}

pub(super) fn forward_diff(f: &ScalarField, axis: Axis) -> ScalarField {
    let (h, w) = f.dims();
    ScalarField::from_fn(h, w, |r, c| match axis {
        Axis::U if c + 1 < w => f.get(r, c + 1) - f.get(r, c),
        Axis::V if r + 1 < h => f.get(r + 1, c) - f.get(r, c),
        _ => 0.0,
    })
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * (n - 1) - i as usize
    } else {
        i as usize
    }
}

pub(super) fn box3(f: &ScalarField) -> ScalarField {
    let (h, w) = f.dims();
    ScalarField::from_fn(h, w, |r, c| {
        let mut acc = 0.0;
        for dr in -1..=1isize {
            let rr = reflect(r as isize + dr, h);
            for dc in -1..=1isize {
                acc += f.get(rr, reflect(c as isize + dc, w));
            }
        }
        acc / 9.0
    })
}

/// Bilinear cell lookup: base corner and fractional offsets, `None` outside.
#[inline]
fn cell(x: f64, y: f64, w: usize, h: usize) -> Option<(usize, usize, f64, f64)> {
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    if !(x >= -BOUNDS_SLACK
        && x <= xmax + BOUNDS_SLACK
        && y >= -BOUNDS_SLACK
        && y <= ymax + BOUNDS_SLACK)
    {
        return None;
    }
    let (x, y) = (x.clamp(0.0, xmax), y.clamp(0.0, ymax));
    let x0 = (x.floor() as usize).min(w - 2);
    let y0 = (y.floor() as usize).min(h - 2);
    Some((x0, y0, x - x0 as f64, y - y0 as f64))
}

pub(super) fn bilinear_forward(
    src: &ScalarField,
    u: &ScalarField,
    v: &ScalarField,
) -> (ScalarField, ScalarField) {
    let (h, w) = src.dims();
    let (oh, ow) = u.dims();
    let mut out = ScalarField::zeros(oh, ow);
    let mut mask = ScalarField::zeros(oh, ow);
    for i in 0..u.len() {
        if let Some((x0, y0, tx, ty)) = cell(u.values()[i], v.values()[i], w, h) {
            let f00 = src.get(y0, x0);
            let f01 = src.get(y0, x0 + 1);
            let f10 = src.get(y0 + 1, x0);
            let f11 = src.get(y0 + 1, x0 + 1);
            out.values_mut()[i] = (1.0 - ty) * ((1.0 - tx) * f00 + tx * f01)
                + ty * ((1.0 - tx) * f10 + tx * f11);
            mask.values_mut()[i] = 1.0;
        }
    }
    (out, mask)
}

fn accumulate(adjoints: &mut [Option<Vec<f64>>], id: usize, contrib: Vec<f64>) {
    match &mut adjoints[id] {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contrib) {
                *a += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

/// Pushes the adjoint `g` of node `id` onto its inputs.
pub(super) fn backprop(nodes: &[Node], id: usize, g: &[f64], adjoints: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    match node.op {
        Op::Input => {}
        Op::Unary { kind, arg } => {
            let x = nodes[arg].value.data();
            let y = node.value.data();
            let contrib = (0..g.len())
                .map(|i| g[i] * kind.derivative(x[i], y[i]))
                .collect();
            accumulate(adjoints, arg, contrib);
        }
        Op::Binary { kind, lhs, rhs } => {
            let a = nodes[lhs].value.data();
            let b = nodes[rhs].value.data();
            let mut ga = vec![0.0; a.len()];
            let mut gb = vec![0.0; b.len()];
            for i in 0..g.len() {
                let (ia, ib) = (bidx(a, i), bidx(b, i));
                let (da, db) = kind.partials(a[ia], b[ib]);
                ga[ia] += g[i] * da;
                gb[ib] += g[i] * db;
            }
            accumulate(adjoints, lhs, ga);
            accumulate(adjoints, rhs, gb);
        }
        Op::Clamp { arg, lo, hi } => {
            let x = nodes[arg].value.data();
            let contrib = (0..g.len())
                .map(|i| if x[i] >= lo && x[i] <= hi { g[i] } else { 0.0 })
                .collect();
            accumulate(adjoints, arg, contrib);
        }
        Op::Mean(arg) => {
            let n = nodes[arg].value.len();
            accumulate(adjoints, arg, vec![g[0] / n as f64; n]);
        }
        Op::Sum(arg) => {
            let n = nodes[arg].value.len();
            accumulate(adjoints, arg, vec![g[0]; n]);
        }
        Op::Diff { arg, axis } => {
            let (h, w) = match &nodes[arg].value {
                Value::Field(f) => f.dims(),
                Value::Scalar(_) => unreachable!("diff recorded on a scalar"),
            };
            let mut gx = vec![0.0; h * w];
            for r in 0..h {
                for c in 0..w {
                    let gi = g[r * w + c];
                    match axis {
                        Axis::U if c + 1 < w => {
                            gx[r * w + c + 1] += gi;
                            gx[r * w + c] -= gi;
                        }
                        Axis::V if r + 1 < h => {
                            gx[(r + 1) * w + c] += gi;
                            gx[r * w + c] -= gi;
                        }
                        _ => {}
                    }
                }
            }
            accumulate(adjoints, arg, gx);
        }
        Op::Box3(arg) => {
            let (h, w) = match &nodes[arg].value {
                Value::Field(f) => f.dims(),
                Value::Scalar(_) => unreachable!("box3 recorded on a scalar"),
            };
            let mut gx = vec![0.0; h * w];
            for r in 0..h {
                for c in 0..w {
                    let gi = g[r * w + c] / 9.0;
                    for dr in -1..=1isize {
                        let rr = reflect(r as isize + dr, h);
                        for dc in -1..=1isize {
                            gx[rr * w + reflect(c as isize + dc, w)] += gi;
                        }
                    }
                }
            }
            accumulate(adjoints, arg, gx);
        }
        Op::Bilinear { src, u, v } => {
            let (Value::Field(s), Value::Field(uu), Value::Field(vv)) =
                (&nodes[src].value, &nodes[u].value, &nodes[v].value)
            else {
                unreachable!("bilinear recorded on non-fields")
            };
            let (h, w) = s.dims();
            let mut gs = vec![0.0; h * w];
            let mut gu = vec![0.0; uu.len()];
            let mut gv = vec![0.0; vv.len()];
            for i in 0..uu.len() {
                let Some((x0, y0, tx, ty)) = cell(uu.values()[i], vv.values()[i], w, h) else {
                    continue;
                };
                let gi = g[i];
                let (i00, i01) = (y0 * w + x0, y0 * w + x0 + 1);
                let (i10, i11) = (i00 + w, i01 + w);
                let vals = s.values();
                gs[i00] += gi * (1.0 - tx) * (1.0 - ty);
                gs[i01] += gi * tx * (1.0 - ty);
                gs[i10] += gi * (1.0 - tx) * ty;
                gs[i11] += gi * tx * ty;
                gu[i] = gi
                    * ((1.0 - ty) * (vals[i01] - vals[i00]) + ty * (vals[i11] - vals[i10]));
                gv[i] = gi
                    * ((1.0 - tx) * (vals[i10] - vals[i00]) + tx * (vals[i11] - vals[i01]));
            }
            accumulate(adjoints, src, gs);
            accumulate(adjoints, u, gu);
            accumulate(adjoints, v, gv);
        }
    }
}
