//! The scan layer on its own: ZOH discretization of a continuous system,
//! then the same recurrence evaluated three ways — sequentially, chunked in
//! parallel form, and as a fold of single steps.
//!
//! Run with: cargo run --example selective_scan

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamssm::ssm::{discretize, scan_naive, scan_parallel, scan_step, ScanState, SsmParams};
use streamssm::tensor::Tensor;

fn main() -> Result<(), streamssm::ModelError> {
    // scalar sanity check: A = -1, delta = ln 2 halves the state each step
    let half_life = SsmParams {
        a: Tensor::from_vec(&[1, 1], vec![-1.0f64]),
        b: Tensor::from_vec(&[1, 1, 1], vec![1.0]),
        c: Tensor::from_vec(&[1, 1, 1], vec![1.0]),
        delta: Tensor::from_vec(&[1, 1], vec![std::f64::consts::LN_2]),
    };
    let d = discretize(&half_life)?;
    println!(
        "half-life system: a_bar = {}, b_bar = {}",
        d.a_bar.data()[0],
        d.b_bar.data()[0]
    );

    // a larger random system, three evaluation strategies
    let (seq, heads, state) = (48, 2, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = SsmParams::<f64> {
        a: Tensor::from_vec(
            &[heads, state],
            (0..heads * state).map(|_| -rng.gen_range(0.1..2.0)).collect(),
        ),
        b: Tensor::from_vec(
            &[seq, heads, state],
            (0..seq * heads * state).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        ),
        c: Tensor::from_vec(
            &[seq, heads, state],
            (0..seq * heads * state).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        ),
        delta: Tensor::from_vec(
            &[seq, heads],
            (0..seq * heads).map(|_| rng.gen_range(0.01..0.3)).collect(),
        ),
    };
    let x = Tensor::from_vec(
        &[seq, heads],
        (0..seq * heads).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    );
    let disc = discretize(&params)?;
    let h0 = ScanState::zeros(heads, state);
    let (y_seq, _) = scan_naive(&disc, &params.c, &x, &h0)?;
    let (y_par, _) = scan_parallel(&disc, &params.c, &x, &h0)?;
    println!(
        "sequential vs chunked-parallel, {seq} tokens: max |diff| = {:.2e}",
        y_seq.max_abs_diff(&y_par)
    );

    // fold of single steps reproduces the sequential scan bit for bit
    let lane = heads * state;
    let mut h = ScanState::zeros(heads, state);
    let mut bitwise = true;
    for t in 0..seq {
        let y_t = scan_step(
            &disc.a_bar.data()[t * lane..(t + 1) * lane],
            &disc.b_bar.data()[t * lane..(t + 1) * lane],
            &params.c.data()[t * lane..(t + 1) * lane],
            &x.data()[t * heads..(t + 1) * heads],
            &mut h,
        )?;
        for hd in 0..heads {
            bitwise &= y_t[hd].to_bits() == y_seq.data()[t * heads + hd].to_bits();
        }
    }
    println!("step-fold bitwise equal to sequential scan: {bitwise}");
    Ok(())
}
