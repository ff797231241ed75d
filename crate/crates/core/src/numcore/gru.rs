use rand::Rng;

use super::{Float, Graph, ParamId, ParamStore, Var};
use crate::error::Result;

/// Weights of a GRU cell.
///
/// Input-side weights of the three gates are stored side by side in
/// `w_x` (`[d_in, 3 * d_h]`, blocks ordered update | reset | candidate) so
/// a whole sequence can be projected with one matrix product.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub w_x: ParamId,
    pub u_zr: ParamId,
    pub u_h: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

impl GruParams {
    pub fn new<F: Float, R: Rng>(
        store: &mut ParamStore<F>,
        prefix: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(GruParams {
            w_x: store.insert_matrix(format!("{prefix}.w_x"), d_in, 3 * d_h, rng)?,
            u_zr: store.insert_matrix(format!("{prefix}.u_zr"), d_h, 2 * d_h, rng)?,
            u_h: store.insert_matrix(format!("{prefix}.u_h"), d_h, d_h, rng)?,
            bias: store.insert_bias(format!("{prefix}.b"), 3 * d_h)?,
            d_in,
            d_h,
        })
    }

    /// `x @ w_x + b` for a `[N, d_in]` input.
    pub fn project_input<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> Result<Var> {
        let w = g.param(store, self.w_x);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }

    /// One step from a pre-projected input `[B, 3 * d_h]`.
    ///
    /// z = sigmoid(W_z x + U_z h + b_z), r = sigmoid(W_r x + U_r h + b_r),
    /// h~ = tanh(W_h x + U_h (r * h) + b_h), h' = (1 - z) h + z h~.
    pub fn step_projected<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        xw: Var,
        h: Var,
    ) -> Result<Var> {
        let dh = self.d_h;
        let u_zr = g.param(store, self.u_zr);
        let u_h = g.param(store, self.u_h);
        let hu = g.matmul(h, u_zr)?;
        let x_zr = g.narrow(xw, 1, 0, 2 * dh)?;
        let zr_pre = g.add(x_zr, hu)?;
        let zr = g.sigmoid(zr_pre);
        let z = g.narrow(zr, 1, 0, dh)?;
        let r = g.narrow(zr, 1, dh, dh)?;
        let rh = g.mul(r, h)?;
        let rhu = g.matmul(rh, u_h)?;
        let x_h = g.narrow(xw, 1, 2 * dh, dh)?;
        let cand_pre = g.add(x_h, rhu)?;
        let cand = g.tanh(cand_pre);
        let delta = g.sub(cand, h)?;
        let gated = g.mul(z, delta)?;
        g.add(h, gated)
    }

    /// One step of the cell for input `[B, d_in]` and state `[B, d_h]`.
    pub fn step<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
        h: Var,
    ) -> Result<Var> {
        let xw = self.project_input(g, store, x)?;
        self.step_projected(g, store, xw, h)
    }
}
