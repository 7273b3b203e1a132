use super::{Scalar, Tape, Var};
use crate::error::Result;

impl<T: Scalar> Tape<T> {
    /// One step of a standard LSTM cell.
    ///
    /// `w_ih` is `[4H, D_in]`, `w_hh` is `[4H, H]`, `bias` is `[4H]`, with gate blocks
    /// ordered (input, forget, candidate, output). Works on a single vector or a batch.
    pub fn lstm_cell(
        &mut self,
        x: Var,
        h_prev: Var,
        c_prev: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
    ) -> Result<(Var, Var)> {
        let from_x = self.linear(x, w_ih, Some(bias))?;
        let from_h = self.linear(h_prev, w_hh, None)?;
        let gates = self.add(from_x, from_h)?;
        let hc = self.lstm_pointwise(gates, c_prev)?;
        let shape = self.shape(hc)?.to_vec();
        let axis = shape.len() - 1;
        let hidden = shape[axis] / 2;
        let h = self.slice(hc, axis, 0, hidden)?;
        let c = self.slice(hc, axis, hidden, hidden)?;
        Ok((h, c))
    }
}
