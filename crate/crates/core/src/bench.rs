//! Cost models and microbenchmark for multi-head dot-product scoring
//! versus distance-kernel scoring.
//!
//! Op counts are exact multiply counts with unit constants over ordered
//! pairs (n^2 for both methods, so the comparison is like-for-like):
//!
//! ```text
//! ops_multihead = 2*H*n*D*d  (Q and K projections)  +  H*n^2*d  (scores)
//! ops_kernel    = n^2*D      (squared distances)    +  n^2      (kernel scalars)
//! ```
//!
//! Additions and comparisons are not counted; one kernel evaluation
//! counts as one scalar op. Timed runs execute both scorers for real on
//! seeded random data, single-threaded, reducing scores to a checksum so
//! memory stays flat across sequence lengths.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("repeats must be at least 3, got {0}")]
    TooFewRepeats(usize),
    #[error("n values must be non-empty, ascending, and positive")]
    BadNValues,
    #[error("model dimensions must be positive")]
    BadDimensions,
}

/// Dimensions of one scoring problem.
#[derive(Debug, Clone, Copy)]
pub struct CostModel {
    pub seq_len: usize,
    pub input_dim: usize,
    pub num_heads: usize,
    pub head_dim: usize,
}

/// Dimensions shared across a bench sweep (everything but n).
#[derive(Debug, Clone, Copy)]
pub struct BenchParams {
    pub input_dim: usize,
    pub num_heads: usize,
    pub head_dim: usize,
}

impl BenchParams {
    pub fn with_n(&self, n: usize) -> CostModel {
        CostModel {
            seq_len: n,
            input_dim: self.input_dim,
            num_heads: self.num_heads,
            head_dim: self.head_dim,
        }
    }
}

/// Exact multiply count of the multi-head dot-product method.
pub fn ops_multihead(m: &CostModel) -> u64 {
    let (n, d_in, h, d) = (
        m.seq_len as u64,
        m.input_dim as u64,
        m.num_heads as u64,
        m.head_dim as u64,
    );
    2 * h * n * d_in * d + h * n * n * d
}

/// Exact multiply count of the distance-kernel method.
pub fn ops_kernel(m: &CostModel) -> u64 {
    let (n, d_in) = (m.seq_len as u64, m.input_dim as u64);
    n * n * d_in + n * n
}

/// Multiply counter threaded through the scorers. The no-op instance
/// compiles away in timed runs.
pub trait OpCounter {
    fn add(&mut self, n: u64);
}

/// Counter used for instrumented verification runs.
#[derive(Debug, Default, Clone, Copy)]
pub struct MulCounter(pub u64);

impl OpCounter for MulCounter {
    #[inline]
    fn add(&mut self, n: u64) {
        self.0 += n;
    }
}

/// Zero-cost counter for timed runs.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoCount;

impl OpCounter for NoCount {
    #[inline]
    fn add(&mut self, _: u64) {}
}

/// Multi-head scorer: project every vector with W_Q/W_K per head, then
/// dot all ordered pairs. Returns a checksum over the scores.
pub fn multihead_checksum<C: OpCounter>(
    x: &[f64],
    n: usize,
    params: &BenchParams,
    w_q: &[f64],
    w_k: &[f64],
    counter: &mut C,
) -> f64 {
    let d_in = params.input_dim;
    let d = params.head_dim;
    let mut checksum = 0.0;
    let mut q = vec![0.0; n * d];
    let mut k = vec![0.0; n * d];
    for h in 0..params.num_heads {
        let head = h * d * d_in;
        for (proj, w) in [(&mut q, w_q), (&mut k, w_k)] {
            for i in 0..n {
                let xi = &x[i * d_in..(i + 1) * d_in];
                for r in 0..d {
                    let wr = &w[head + r * d_in..head + (r + 1) * d_in];
                    let mut acc = 0.0;
                    for c in 0..d_in {
                        acc += wr[c] * xi[c];
                    }
                    counter.add(d_in as u64);
                    proj[i * d + r] = acc;
                }
            }
        }
        for i in 0..n {
            let qi = &q[i * d..(i + 1) * d];
            for j in 0..n {
                let kj = &k[j * d..(j + 1) * d];
                let mut acc = 0.0;
                for c in 0..d {
                    acc += qi[c] * kj[c];
                }
                counter.add(d as u64);
                checksum += acc;
            }
        }
    }
    checksum
}

/// Distance-kernel scorer: squared Euclidean distance per ordered pair,
/// then one kernel evaluation. Returns a checksum over the weights.
pub fn kernel_checksum<C: OpCounter>(
    x: &[f64],
    n: usize,
    input_dim: usize,
    sigma: f64,
    counter: &mut C,
) -> f64 {
    let inv_sigma_sq = 1.0 / (sigma * sigma);
    let mut checksum = 0.0;
    for i in 0..n {
        let xi = &x[i * input_dim..(i + 1) * input_dim];
        for j in 0..n {
            let xj = &x[j * input_dim..(j + 1) * input_dim];
            let mut acc = 0.0;
            for c in 0..input_dim {
                let diff = xi[c] - xj[c];
                acc += diff * diff;
            }
            counter.add(input_dim as u64);
            // one kernel scalar op per pair
            checksum += (-acc * inv_sigma_sq).exp();
            counter.add(1);
        }
    }
    checksum
}

/// One measured row of the sweep.
#[derive(Debug, Clone, Copy)]
pub struct BenchRow {
    pub n: usize,
    pub ops_multihead: u64,
    pub ops_kernel: u64,
    pub time_multihead_s: f64,
    pub time_kernel_s: f64,
}

/// Sweep result: rows plus the smallest benchmarked n where the kernel
/// method is cheaper by op count (None if it never is).
#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub rows: Vec<BenchRow>,
    pub crossover: Option<usize>,
}

fn median(mut times: Vec<f64>) -> f64 {
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let mid = times.len() / 2;
    if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    }
}

fn seeded_data(seed: u64, n: usize, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn seeded_weights(seed: u64, params: &BenchParams) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let len = params.num_heads * params.head_dim * params.input_dim;
    let scale = 1.0 / (params.input_dim as f64).sqrt();
    let mat = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
    };
    (mat(&mut rng), mat(&mut rng))
}

/// Run the sweep: op counts from the closed forms, wall time as the
/// median of `repeats` real single-threaded executions per scorer.
pub fn run_bench(
    n_values: &[usize],
    params: &BenchParams,
    repeats: usize,
    seed: u64,
) -> Result<BenchOutcome, BenchError> {
    if repeats < 3 {
        return Err(BenchError::TooFewRepeats(repeats));
    }
    if n_values.is_empty()
        || n_values.contains(&0)
        || n_values.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(BenchError::BadNValues);
    }
    if params.input_dim == 0 || params.num_heads == 0 || params.head_dim == 0 {
        return Err(BenchError::BadDimensions);
    }

    let (w_q, w_k) = seeded_weights(seed, params);
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let data = seeded_data(seed, n, params.input_dim);
        let mut times_mh = Vec::with_capacity(repeats);
        let mut times_k = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let start = Instant::now();
            let c = multihead_checksum(&data, n, params, &w_q, &w_k, &mut NoCount);
            times_mh.push(start.elapsed().as_secs_f64());
            std::hint::black_box(c);

            let start = Instant::now();
            let c = kernel_checksum(&data, n, params.input_dim, 0.25, &mut NoCount);
            times_k.push(start.elapsed().as_secs_f64());
            std::hint::black_box(c);
        }
        let model = params.with_n(n);
        rows.push(BenchRow {
            n,
            ops_multihead: ops_multihead(&model),
            ops_kernel: ops_kernel(&model),
            time_multihead_s: median(times_mh),
            time_kernel_s: median(times_k),
        });
    }
    let crossover = rows
        .iter()
        .find(|r| r.ops_kernel < r.ops_multihead)
        .map(|r| r.n);
    Ok(BenchOutcome { rows, crossover })
}

/// CSV rendering with a comment header recording the sweep parameters
/// and counting conventions.
pub fn bench_csv(outcome: &BenchOutcome, params: &BenchParams, repeats: usize, seed: u64) -> String {
    let mut out = String::new();
    out.push_str("# cost model: ops_multihead = 2*H*n*D*d + H*n^2*d ; ops_kernel = n^2*D + n^2\n");
    out.push_str("# multiplies only; additions/comparisons uncounted; kernel eval = 1 scalar op\n");
    out.push_str(&format!(
        "# H={} D={} d={} repeats={} seed={}",
        params.num_heads, params.input_dim, params.head_dim, repeats, seed
    ));
    match outcome.crossover {
        Some(n) => out.push_str(&format!(" crossover_n={n}\n")),
        None => out.push_str(" crossover_n=none\n"),
    }
    out.push_str("n,ops_multihead,ops_kernel,time_multihead_s,time_kernel_s\n");
    for r in &outcome.rows {
        out.push_str(&format!(
            "{},{},{},{:.9e},{:.9e}\n",
            r.n, r.ops_multihead, r.ops_kernel, r.time_multihead_s, r.time_kernel_s
        ));
    }
    out
}
