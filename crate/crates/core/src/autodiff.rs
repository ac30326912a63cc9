//! Minimal reverse-mode automatic differentiation on a thread-local tape.
//!
//! A [`Tape`] guard owns the recording for the current thread. Every
//! arithmetic operation on [`Var`] appends one node holding the local
//! partial derivatives; [`Tape::backward`] sweeps the nodes in reverse.
//! Constants never touch the tape.

use std::cell::{Cell, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::scalar::Real;

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    a: u32,
    b: u32,
    da: f64,
    db: f64,
}

thread_local! {
    static NODES: RefCell<Vec<Node>> = const { RefCell::new(Vec::new()) };
    static ACTIVE: Cell<bool> = const { Cell::new(false) };
}

/// A differentiable scalar. `Copy`, 16 bytes.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    idx: u32,
    val: f64,
}

#[inline]
fn push(a: u32, da: f64, b: u32, db: f64) -> u32 {
    NODES.with(|n| {
        let mut n = n.borrow_mut();
        let idx = n.len() as u32;
        n.push(Node { a, b, da, db });
        idx
    })
}

#[inline]
fn unary(x: Var, val: f64, d: f64) -> Var {
    if x.idx == NONE {
        return Var { idx: NONE, val };
    }
    Var {
        idx: push(x.idx, d, NONE, 0.0),
        val,
    }
}

#[inline]
fn binary(x: Var, dx: f64, y: Var, dy: f64, val: f64) -> Var {
    match (x.idx == NONE, y.idx == NONE) {
        (true, true) => Var { idx: NONE, val },
        (false, true) => Var {
            idx: push(x.idx, dx, NONE, 0.0),
            val,
        },
        (true, false) => Var {
            idx: push(y.idx, dy, NONE, 0.0),
            val,
        },
        (false, false) => Var {
            idx: push(x.idx, dx, y.idx, dy),
            val,
        },
    }
}

impl Var {
    pub fn constant(val: f64) -> Self {
        Var { idx: NONE, val }
    }

    pub fn is_constant(&self) -> bool {
        self.idx == NONE
    }
}

/// Guard for the thread's tape. Only one may be alive per thread.
pub struct Tape {
    _private: (),
}

/// Adjoints produced by a backward sweep.
pub struct Adjoints(Vec<f64>);

impl Adjoints {
    /// d(output)/d(v); zero for constants.
    pub fn of(&self, v: Var) -> f64 {
        if v.idx == NONE {
            0.0
        } else {
            self.0[v.idx as usize]
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        ACTIVE.with(|a| {
            assert!(!a.get(), "a tape is already active on this thread");
            a.set(true);
        });
        NODES.with(|n| n.borrow_mut().clear());
        Tape { _private: () }
    }

    /// Register an independent variable.
    pub fn leaf(&self, val: f64) -> Var {
        Var {
            idx: push(NONE, 0.0, NONE, 0.0),
            val,
        }
    }

    pub fn len(&self) -> usize {
        NODES.with(|n| n.borrow().len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse sweep seeded with `d(loss)/d(output)` for each output.
    pub fn backward(&self, seeds: &[(Var, f64)]) -> Adjoints {
        NODES.with(|n| {
            let nodes = n.borrow();
            let mut adj = vec![0.0; nodes.len()];
            for &(v, s) in seeds {
                if v.idx != NONE {
                    adj[v.idx as usize] += s;
                }
            }
            for i in (0..nodes.len()).rev() {
                let g = adj[i];
                if g == 0.0 {
                    continue;
                }
                let node = nodes[i];
                if node.a != NONE {
                    adj[node.a as usize] += g * node.da;
                }
                if node.b != NONE {
                    adj[node.b as usize] += g * node.db;
                }
            }
            Adjoints(adj)
        })
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for Tape {
    fn drop(&mut self) {
        NODES.with(|n| {
            let mut n = n.borrow_mut();
            n.clear();
            n.shrink_to(1 << 20);
        });
        ACTIVE.with(|a| a.set(false));
    }
}

impl Add for Var {
    type Output = Var;
    #[inline]
    fn add(self, o: Var) -> Var {
        binary(self, 1.0, o, 1.0, self.val + o.val)
    }
}

impl Sub for Var {
    type Output = Var;
    #[inline]
    fn sub(self, o: Var) -> Var {
        binary(self, 1.0, o, -1.0, self.val - o.val)
    }
}

impl Mul for Var {
    type Output = Var;
    #[inline]
    fn mul(self, o: Var) -> Var {
        binary(self, o.val, o, self.val, self.val * o.val)
    }
}

impl Div for Var {
    type Output = Var;
    #[inline]
    fn div(self, o: Var) -> Var {
        let inv = 1.0 / o.val;
        let q = self.val * inv;
        binary(self, inv, o, -q * inv, q)
    }
}

impl Neg for Var {
    type Output = Var;
    #[inline]
    fn neg(self) -> Var {
        unary(self, -self.val, -1.0)
    }
}

impl Add<f64> for Var {
    type Output = Var;
    #[inline]
    fn add(self, o: f64) -> Var {
        unary(self, self.val + o, 1.0)
    }
}

impl Sub<f64> for Var {
    type Output = Var;
    #[inline]
    fn sub(self, o: f64) -> Var {
        unary(self, self.val - o, 1.0)
    }
}

impl Mul<f64> for Var {
    type Output = Var;
    #[inline]
    fn mul(self, o: f64) -> Var {
        unary(self, self.val * o, o)
    }
}

impl Div<f64> for Var {
    type Output = Var;
    #[inline]
    fn div(self, o: f64) -> Var {
        unary(self, self.val / o, 1.0 / o)
    }
}

impl Real for Var {
    #[inline]
    fn cst(v: f64) -> Self {
        Var::constant(v)
    }
    #[inline]
    fn val(self) -> f64 {
        self.val
    }
    #[inline]
    fn sqrt(self) -> Self {
        let r = self.val.sqrt();
        unary(self, r, 0.5 / r)
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.val.exp();
        unary(self, e, e)
    }
    #[inline]
    fn ln(self) -> Self {
        unary(self, self.val.ln(), 1.0 / self.val)
    }
    #[inline]
    fn sin(self) -> Self {
        unary(self, self.val.sin(), self.val.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        unary(self, self.val.cos(), -self.val.sin())
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        let (y, xv) = (self.val, x.val);
        let r2 = y * y + xv * xv;
        binary(self, xv / r2, x, -y / r2, y.atan2(xv))
    }
}
