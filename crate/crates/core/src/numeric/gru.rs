//! Gated recurrent unit.
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! h̃  = tanh(W_h x + U_h (r ∘ h) + b_h)
//! h' = (1 − z) ∘ h + z ∘ h̃
//! ```

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{self, Tensor};
use crate::error::{ensure, Result};

/// Value-level GRU weights: `W_*` are `H×D`, `U_*` are `H×H`, biases `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[hidden, input]);
        let u = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        GruParams {
            w_z: w(),
            w_r: w(),
            w_h: w(),
            u_z: u(),
            u_r: u(),
            u_h: u(),
            b_z: b(),
            b_r: b(),
            b_h: b(),
        }
    }

    /// `(input, hidden)` sizes after checking all nine shapes agree.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let (hidden, input) = self.w_z.dims2();
        ensure!(self.w_z.shape().len() == 2, "W_z must be a matrix");
        for (name, t) in [("W_r", &self.w_r), ("W_h", &self.w_h)] {
            ensure!(
                t.shape() == [hidden, input],
                "{name} has shape {:?}, expected [{hidden}, {input}]",
                t.shape()
            );
        }
        for (name, t) in [("U_z", &self.u_z), ("U_r", &self.u_r), ("U_h", &self.u_h)] {
            ensure!(
                t.shape() == [hidden, hidden],
                "{name} has shape {:?}, expected [{hidden}, {hidden}]",
                t.shape()
            );
        }
        for (name, t) in [("b_z", &self.b_z), ("b_r", &self.b_r), ("b_h", &self.b_h)] {
            ensure!(
                t.shape() == [hidden],
                "{name} has shape {:?}, expected [{hidden}]",
                t.shape()
            );
        }
        Ok((input, hidden))
    }
}

/// One GRU step on plain tensors.
pub fn gru_step(x: &Tensor, h_prev: &Tensor, p: &GruParams) -> Result<Tensor> {
    let (input, hidden) = p.dims()?;
    ensure!(
        x.len() == input,
        "gru input has length {}, cell expects {input}",
        x.len()
    );
    ensure!(
        h_prev.len() == hidden,
        "gru state has length {}, cell expects {hidden}",
        h_prev.len()
    );
    let (x, h) = (x.data(), h_prev.data());
    let affine = |w: &Tensor, u: &Tensor, b: &Tensor, hv: &[f64]| {
        let mut wx = vec![0.0; hidden];
        let mut uh = vec![0.0; hidden];
        tensor::matvec(w.data(), hidden, input, x, &mut wx);
        tensor::matvec(u.data(), hidden, hidden, hv, &mut uh);
        (0..hidden)
            .map(|i| wx[i] + uh[i] + b.data()[i])
            .collect::<Vec<_>>()
    };
    let z: Vec<f64> = affine(&p.w_z, &p.u_z, &p.b_z, h)
        .into_iter()
        .map(tensor::sigmoid)
        .collect();
    let r: Vec<f64> = affine(&p.w_r, &p.u_r, &p.b_r, h)
        .into_iter()
        .map(tensor::sigmoid)
        .collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand = affine(&p.w_h, &p.u_h, &p.b_h, &rh);
    let next = (0..hidden)
        .map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i].tanh())
        .collect();
    Ok(Tensor::vector(next))
}

/// Input-side pre-activations `W x (+ b)` for the three gates.
#[derive(Debug, Clone, Copy)]
pub struct GateInputs {
    pub z: Var,
    pub r: Var,
    pub h: Var,
}

impl GateInputs {
    pub fn add(self, tape: &mut Tape, other: GateInputs) -> GateInputs {
        GateInputs {
            z: tape.add(self.z, other.z),
            r: tape.add(self.r, other.r),
            h: tape.add(self.h, other.h),
        }
    }
}

/// Handles to a GRU's parameters inside a [`ParamStore`].
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn register(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize) -> Self {
        let w = |s: &mut ParamStore, g: &str| s.weight(&format!("{prefix}.w_{g}"), &[hidden, input]);
        let w_z = w(store, "z");
        let w_r = w(store, "r");
        let w_h = w(store, "h");
        let u = |s: &mut ParamStore, g: &str| s.weight(&format!("{prefix}.u_{g}"), &[hidden, hidden]);
        let u_z = u(store, "z");
        let u_r = u(store, "r");
        let u_h = u(store, "h");
        let b = |s: &mut ParamStore, g: &str| s.bias(&format!("{prefix}.b_{g}"), hidden);
        let b_z = b(store, "z");
        let b_r = b(store, "r");
        let b_h = b(store, "h");
        GruCell {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z,
            b_r,
            b_h,
            input,
            hidden,
        }
    }

    pub fn params(&self, store: &ParamStore) -> GruParams {
        GruParams {
            w_z: store.get(self.w_z).clone(),
            w_r: store.get(self.w_r).clone(),
            w_h: store.get(self.w_h).clone(),
            u_z: store.get(self.u_z).clone(),
            u_r: store.get(self.u_r).clone(),
            u_h: store.get(self.u_h).clone(),
            b_z: store.get(self.b_z).clone(),
            b_r: store.get(self.b_r).clone(),
            b_h: store.get(self.b_h).clone(),
        }
    }

    /// `W_* x + b_*` for each gate.
    pub fn project_input(&self, tape: &mut Tape, x: Var) -> GateInputs {
        let proj = |tape: &mut Tape, w, b| {
            let wx = tape.matvec(w, x);
            let bv = tape.param(b);
            tape.add(wx, bv)
        };
        GateInputs {
            z: proj(tape, self.w_z, self.b_z),
            r: proj(tape, self.w_r, self.b_r),
            h: proj(tape, self.w_h, self.b_h),
        }
    }

    /// Recurrent half of the step given precomputed input projections.
    pub fn step_projected(&self, tape: &mut Tape, gates: GateInputs, h: Var) -> Var {
        let uz = tape.matvec(self.u_z, h);
        let zpre = tape.add(gates.z, uz);
        let z = tape.sigmoid(zpre);
        let ur = tape.matvec(self.u_r, h);
        let rpre = tape.add(gates.r, ur);
        let r = tape.sigmoid(rpre);
        let rh = tape.mul(r, h);
        let uh = tape.matvec(self.u_h, rh);
        let hpre = tape.add(gates.h, uh);
        let cand = tape.tanh(hpre);
        let keep = tape.one_minus(z);
        let old = tape.mul(keep, h);
        let new = tape.mul(z, cand);
        tape.add(old, new)
    }

    pub fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Var {
        let gates = self.project_input(tape, x);
        self.step_projected(tape, gates, h)
    }
}
