//! Geometry of one departure time cell against the "still travelling" line.
//!
//! A traveller who departed at `s` in `[t_m, t_{m+1}]` with trip length `xi`
//! is still in the network at `t_n` iff `xi > z_n - z(s)`. With `z` linear on
//! the cell, the threshold runs linearly from `b = z_n - z_m` (at `s = t_m`)
//! down to `a = z_n - z_{m+1}` (at `s = t_{m+1}`). Parametrise the cell by
//! `u = (s - t_m) / dt` in `[0, 1]`; the threshold is `b - (b - a) u`.

/// Line endpoints for a (current node, past cell) pair. Requires `b > a`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Threshold {
    /// `z_n - z_{m+1}`
    pub a: f64,
    /// `z_n - z_m`
    pub b: f64,
}

impl Threshold {
    pub fn new(z_now: f64, z_cell_start: f64, z_cell_end: f64) -> Self {
        Self {
            a: z_now - z_cell_end,
            b: z_now - z_cell_start,
        }
    }

    /// Fraction of length cell `[x_lo, x_lo + dx]` (uniform over the time
    /// cell) lying strictly above the threshold line.
    pub fn fraction(&self, x_lo: f64, dx: f64) -> f64 {
        let prim = |xi: f64| {
            let u = ((xi - x_lo) / dx).clamp(0.0, 1.0);
            xi.min(x_lo) + dx * (u - 0.5 * u * u)
        };
        let span = self.b - self.a;
        ((prim(self.b) - prim(self.a)) / span).clamp(0.0, 1.0)
    }

    /// Sub-interval `[u_lo, u_hi]` of the time cell on which the threshold
    /// lies inside `[x_lo, x_lo + dx]`.
    pub fn crossing(&self, x_lo: f64, dx: f64) -> (f64, f64) {
        let span = self.b - self.a;
        let u_lo = ((self.b - (x_lo + dx)) / span).clamp(0.0, 1.0);
        let u_hi = ((self.b - x_lo) / span).clamp(0.0, 1.0);
        (u_lo, u_hi)
    }

    /// Length cells that the line may cut, clamped to `[0, n_length)`.
    /// Cells at or beyond the returned end lie fully above the line.
    pub fn partial_range(&self, dx: f64, n_length: usize) -> (usize, usize) {
        let lo = (self.a / dx).floor().max(0.0) as usize;
        let hi = ((self.b / dx).ceil().max(0.0) as usize).min(n_length);
        (lo.min(hi), hi)
    }
}
