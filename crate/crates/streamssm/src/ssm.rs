//! Numeric substrate: zero-order-hold discretization of a diagonal linear
//! state space system and the selective scan in three interchangeable modes.
//!
//! The recurrence is `h_t = A_bar_t * h_t-1 + B_bar_t * x_t`, `y_t = <C_t, h_t>`,
//! evaluated per (head, state) lane. `scan_naive` is the sequential ground
//! truth; `scan_parallel` is a chunked prefix evaluation of the same linear
//! recurrence; `scan_step` is the single-step form used for streaming.

use crate::error::{ModelError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Selective SSM parameters for one scan: `A` is input-independent and
/// diagonal per head, while `B`, `C`, `delta` vary per token.
#[derive(Clone, Debug)]
pub struct SsmParams<F> {
    /// (heads, state_dim), strictly negative entries for a decaying system.
    pub a: Tensor<F>,
    /// (seq, heads, state_dim)
    pub b: Tensor<F>,
    /// (seq, heads, state_dim)
    pub c: Tensor<F>,
    /// (seq, heads), strictly positive.
    pub delta: Tensor<F>,
}

/// ZOH-discretized form: `A_bar = exp(delta*A)`,
/// `B_bar = delta * B * expm1(delta*A)/(delta*A)`.
#[derive(Clone, Debug)]
pub struct DiscreteSsm<F> {
    /// (seq, heads, state_dim)
    pub a_bar: Tensor<F>,
    /// (seq, heads, state_dim)
    pub b_bar: Tensor<F>,
}

impl<F: Real> DiscreteSsm<F> {
    pub fn seq_len(&self) -> usize {
        self.a_bar.shape()[0]
    }
    pub fn heads(&self) -> usize {
        self.a_bar.shape()[1]
    }
    pub fn state_dim(&self) -> usize {
        self.a_bar.shape()[2]
    }
}

/// Hidden state carried between scan steps, (heads, state_dim).
#[derive(Clone, Debug, PartialEq)]
pub struct ScanState<F> {
    pub h: Tensor<F>,
}

impl<F: Real> ScanState<F> {
    pub fn zeros(heads: usize, state_dim: usize) -> Self {
        ScanState {
            h: Tensor::zeros(&[heads, state_dim]),
        }
    }
}

/// Below this magnitude of `delta*A` the discretization switches to a series
/// expansion of `expm1(z)/z` to avoid 0/0.
const ZOH_SERIES_THRESHOLD: f64 = 1e-6;

/// `expm1(z)/z` with a guarded series at small `|z|`.
pub(crate) fn phi<F: Real>(z: F) -> F {
    if z.to_f64().abs() < ZOH_SERIES_THRESHOLD {
        let half = F::from_f64(0.5);
        let sixth = F::from_f64(1.0 / 6.0);
        F::one() + z * half + z * z * sixth
    } else {
        z.expm1() / z
    }
}

/// ZOH discretization of `params`. Rejects non-positive `delta` and NaN.
pub fn discretize<F: Real>(params: &SsmParams<F>) -> Result<DiscreteSsm<F>> {
    let (heads, state) = (params.a.shape()[0], params.a.shape()[1]);
    let seq = params.delta.shape()[0];
    let expected_b = [seq, heads, state];
    if params.b.shape() != expected_b {
        return Err(ModelError::shape("discretize B", &expected_b, params.b.shape()));
    }
    if params.c.shape() != expected_b {
        return Err(ModelError::shape("discretize C", &expected_b, params.c.shape()));
    }
    if params.delta.shape() != [seq, heads] {
        return Err(ModelError::shape(
            "discretize delta",
            &[seq, heads],
            params.delta.shape(),
        ));
    }
    for (i, &d) in params.delta.data().iter().enumerate() {
        let v = d.to_f64();
        if v.is_nan() {
            return Err(ModelError::NonFinite("delta".into()));
        }
        if v <= 0.0 {
            return Err(ModelError::NonPositiveDelta { value: v, index: i });
        }
    }
    for (name, t) in [("A", &params.a), ("B", &params.b), ("C", &params.c)] {
        if t.data().iter().any(|v| v.to_f64().is_nan()) {
            return Err(ModelError::NonFinite(name.into()));
        }
    }

    let mut a_bar = Tensor::zeros(&[seq, heads, state]);
    let mut b_bar = Tensor::zeros(&[seq, heads, state]);
    for t in 0..seq {
        for h in 0..heads {
            let d = params.delta.data()[t * heads + h];
            for n in 0..state {
                let i = (t * heads + h) * state + n;
                let z = d * params.a.data()[h * state + n];
                a_bar.data_mut()[i] = z.exp();
                b_bar.data_mut()[i] = d * params.b.data()[i] * phi(z);
            }
        }
    }
    Ok(DiscreteSsm { a_bar, b_bar })
}

/// One recurrence step over all (head, state) lanes. Shared by `scan_step`
/// and `scan_naive` so folding the former reproduces the latter bitwise.
fn recurrence_step<F: Real>(
    a_bar_t: &[F],
    b_bar_t: &[F],
    c_t: &[F],
    x_t: &[F],
    h: &mut [F],
    y_t: &mut [F],
    heads: usize,
    state: usize,
) {
    for hd in 0..heads {
        let x = x_t[hd];
        let mut acc = F::zero();
        for n in 0..state {
            let i = hd * state + n;
            h[i] = a_bar_t[i] * h[i] + b_bar_t[i] * x;
            acc += c_t[i] * h[i];
        }
        y_t[hd] = acc;
    }
}

fn check_scan_shapes<F: Real>(
    disc: &DiscreteSsm<F>,
    c: &Tensor<F>,
    x: &Tensor<F>,
    h0: &ScanState<F>,
) -> Result<(usize, usize, usize)> {
    let (seq, heads, state) = (disc.seq_len(), disc.heads(), disc.state_dim());
    if c.shape() != [seq, heads, state] {
        return Err(ModelError::shape("scan C", &[seq, heads, state], c.shape()));
    }
    if x.shape() != [seq, heads] {
        return Err(ModelError::shape("scan x", &[seq, heads], x.shape()));
    }
    if h0.h.shape() != [heads, state] {
        return Err(ModelError::shape("scan h0", &[heads, state], h0.h.shape()));
    }
    if !h0.h.all_finite() {
        return Err(ModelError::NonFinite("scan h0".into()));
    }
    Ok((seq, heads, state))
}

/// Literal per-step loop over the recurrence; ground-truth oracle for the
/// other scan modes. Returns (y: (seq, heads), final state).
pub fn scan_naive<F: Real>(
    disc: &DiscreteSsm<F>,
    c: &Tensor<F>,
    x: &Tensor<F>,
    h0: &ScanState<F>,
) -> Result<(Tensor<F>, ScanState<F>)> {
    let (seq, heads, state) = check_scan_shapes(disc, c, x, h0)?;
    let mut h = h0.clone();
    let mut y = Tensor::zeros(&[seq, heads]);
    let lane = heads * state;
    for t in 0..seq {
        let (a_t, b_t, c_t) = (
            &disc.a_bar.data()[t * lane..(t + 1) * lane],
            &disc.b_bar.data()[t * lane..(t + 1) * lane],
            &c.data()[t * lane..(t + 1) * lane],
        );
        let x_row = x.data()[t * heads..(t + 1) * heads].to_vec();
        let y_row = &mut y.data_mut()[t * heads..(t + 1) * heads];
        recurrence_step(a_t, b_t, c_t, &x_row, h.h.data_mut(), y_row, heads, state);
    }
    Ok((y, h))
}

/// Single-step recurrent form used by streaming inference. `a_bar_t`,
/// `b_bar_t`, `c_t` are the (heads*state_dim) slices for one token, `x_t` the
/// (heads) input row. Returns the output row and advances `h` in place.
pub fn scan_step<F: Real>(
    a_bar_t: &[F],
    b_bar_t: &[F],
    c_t: &[F],
    x_t: &[F],
    h: &mut ScanState<F>,
) -> Result<Vec<F>> {
    let (heads, state) = (h.h.shape()[0], h.h.shape()[1]);
    let lane = heads * state;
    if a_bar_t.len() != lane || b_bar_t.len() != lane || c_t.len() != lane || x_t.len() != heads {
        return Err(ModelError::shape(
            "scan_step",
            &[heads, state],
            &[a_bar_t.len() / state.max(1), state],
        ));
    }
    let mut y = vec![F::zero(); heads];
    recurrence_step(a_bar_t, b_bar_t, c_t, x_t, h.h.data_mut(), &mut y, heads, state);
    Ok(y)
}

const PARALLEL_CHUNK: usize = 16;

/// Chunked prefix evaluation of the linear recurrence: each chunk computes a
/// zero-state local prefix plus a cumulative decay product, then chunk entry
/// states are composed sequentially and folded back in. Matches `scan_naive`
/// within floating-point reassociation error.
pub fn scan_parallel<F: Real>(
    disc: &DiscreteSsm<F>,
    c: &Tensor<F>,
    x: &Tensor<F>,
    h0: &ScanState<F>,
) -> Result<(Tensor<F>, ScanState<F>)> {
    let (seq, heads, state) = check_scan_shapes(disc, c, x, h0)?;
    let lane = heads * state;
    // states[t] = hidden state after consuming token t
    let mut states = vec![F::zero(); seq * lane];
    // decay[t] = cumulative product of a_bar within the chunk, up to t
    let mut decay = vec![F::zero(); seq * lane];

    let mut chunk_start = 0;
    while chunk_start < seq {
        let chunk_end = (chunk_start + PARALLEL_CHUNK).min(seq);
        for i in 0..lane {
            let hd = i / state;
            let mut local = F::zero();
            let mut prod = F::one();
            for t in chunk_start..chunk_end {
                let a = disc.a_bar.data()[t * lane + i];
                let u = disc.b_bar.data()[t * lane + i] * x.data()[t * heads + hd];
                local = a * local + u;
                prod *= a;
                states[t * lane + i] = local;
                decay[t * lane + i] = prod;
            }
        }
        chunk_start = chunk_end;
    }

    // Compose chunk entry states sequentially, then offset each chunk.
    let mut entry = h0.h.data().to_vec();
    let mut chunk_start = 0;
    while chunk_start < seq {
        let chunk_end = (chunk_start + PARALLEL_CHUNK).min(seq);
        let last = chunk_end - 1;
        let mut next_entry = vec![F::zero(); lane];
        for i in 0..lane {
            next_entry[i] = states[last * lane + i] + decay[last * lane + i] * entry[i];
        }
        for t in chunk_start..chunk_end {
            for i in 0..lane {
                states[t * lane + i] = states[t * lane + i] + decay[t * lane + i] * entry[i];
            }
        }
        entry = next_entry;
        chunk_start = chunk_end;
    }

    let mut y = Tensor::zeros(&[seq, heads]);
    for t in 0..seq {
        for hd in 0..heads {
            let mut acc = F::zero();
            for n in 0..state {
                let i = hd * state + n;
                acc += c.data()[t * lane + i] * states[t * lane + i];
            }
            y.data_mut()[t * heads + hd] = acc;
        }
    }
    let h_final = ScanState {
        h: Tensor::from_vec(&[heads, state], entry),
    };
    Ok((y, h_final))
}

#[cfg(test)]
mod dd {
    //! Double-double arithmetic for the extended-precision discretization
    //! oracle. ~31 significant digits; test-only.

    #[derive(Clone, Copy, Debug)]
    pub struct Dd(pub f64, pub f64);

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        (s, b - (s - a))
    }

    fn two_prod(a: f64, b: f64) -> (f64, f64) {
        let p = a * b;
        (p, a.mul_add(b, -p))
    }

    impl Dd {
        pub fn from(v: f64) -> Dd {
            Dd(v, 0.0)
        }

        pub fn add(self, o: Dd) -> Dd {
            let (s, e) = two_sum(self.0, o.0);
            let e = e + self.1 + o.1;
            let (hi, lo) = quick_two_sum(s, e);
            Dd(hi, lo)
        }

        pub fn sub(self, o: Dd) -> Dd {
            self.add(Dd(-o.0, -o.1))
        }

        pub fn mul(self, o: Dd) -> Dd {
            let (p, e) = two_prod(self.0, o.0);
            let e = e + self.0 * o.1 + self.1 * o.0;
            let (hi, lo) = quick_two_sum(p, e);
            Dd(hi, lo)
        }

        pub fn div(self, o: Dd) -> Dd {
            let q1 = self.0 / o.0;
            let r = self.sub(o.mul(Dd::from(q1)));
            let q2 = r.0 / o.0;
            let (hi, lo) = quick_two_sum(q1, q2);
            Dd(hi, lo)
        }

        pub fn scale_pow2(self, k: i32) -> Dd {
            let s = (2.0f64).powi(k);
            Dd(self.0 * s, self.1 * s)
        }

        pub fn to_f64(self) -> f64 {
            self.0 + self.1
        }
    }

    const LN2: Dd = Dd(6.931471805599453e-01, 2.3190468138462996e-17);

    /// exp(z) via range reduction z = k*ln2 + r, |r| <= ln2/2, then series.
    pub fn dd_exp(z: Dd) -> Dd {
        let k = (z.to_f64() / LN2.to_f64()).round();
        let r = z.sub(LN2.mul(Dd::from(k)));
        let mut sum = Dd::from(1.0);
        let mut term = Dd::from(1.0);
        for n in 1..30 {
            term = term.mul(r).div(Dd::from(n as f64));
            sum = sum.add(term);
        }
        sum.scale_pow2(k as i32)
    }
}
