//! Lightweight temporal encoder.
//!
//! Frame order is the only temporal signal: the adjacency
//! (A_t)_{ij} = exp(-|i-j|/sigma) depends on index distance alone, so no
//! positional encoding is used anywhere. The block runs
//! row-softmax(D^{-1/2} A_t D^{-1/2}) fusion, layer norm, an FFN with a
//! residual connection, a second layer norm, then mean-pools the rows
//! into the video embedding.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::scalar::{real, Real};

#[derive(Debug, Error)]
pub enum TemporalError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Index-distance adjacency with its symmetric normalization.
#[derive(Debug, Clone)]
pub struct TemporalMatrices<T> {
    pub a_t: Array2<T>,
    /// Diagonal of the degree matrix D.
    pub degree: Array1<T>,
    /// D^{-1/2} A_t D^{-1/2}.
    pub a_tilde: Array2<T>,
}

impl<T: Real> TemporalMatrices<T> {
    /// Dense N x N degree matrix, for callers that want the matrix form.
    pub fn degree_matrix(&self) -> Array2<T> {
        Array2::from_diag(&self.degree)
    }
}

/// Layer-norm parameters with learnable affine.
#[derive(Debug, Clone)]
pub struct LayerNormParams<T> {
    pub gain: Array1<T>,
    pub bias: Array1<T>,
    pub eps: T,
}

impl<T: Real> LayerNormParams<T> {
    pub fn unit(dim: usize) -> Self {
        LayerNormParams {
            gain: Array1::ones(dim),
            bias: Array1::zeros(dim),
            eps: real(1e-5),
        }
    }
}

/// Temporal encoder parameters.
#[derive(Debug, Clone)]
pub struct TemporalEncoder<T> {
    /// Temporal decay bandwidth (distinct from the kernel bandwidth).
    pub sigma_time: T,
    /// FFN: d x d_hidden, d_hidden, d_hidden x d, d.
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array2<T>,
    pub b2: Array1<T>,
    pub ln1: LayerNormParams<T>,
    pub ln2: LayerNormParams<T>,
}

impl<T: Real> TemporalEncoder<T> {
    pub fn dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn d_hidden(&self) -> usize {
        self.w1.ncols()
    }

    /// Seeded initialization: FFN weights ~ N(0, 1/fan_in), zero biases,
    /// unit layer norms.
    pub fn seeded(dim: usize, d_hidden: usize, sigma_time: T, seed: u64) -> Self {
        assert!(d_hidden >= 1, "d_hidden must be >= 1");
        assert!(
            sigma_time > T::zero() && sigma_time.is_finite(),
            "sigma_time must be positive"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, 1.0 / (d_hidden as f64).sqrt()).unwrap();
        let w1 = Array2::from_shape_fn((dim, d_hidden), |_| real::<T>(n1.sample(&mut rng)));
        let w2 = Array2::from_shape_fn((d_hidden, dim), |_| real::<T>(n2.sample(&mut rng)));
        TemporalEncoder {
            sigma_time,
            w1,
            b1: Array1::zeros(d_hidden),
            w2,
            b2: Array1::zeros(dim),
            ln1: LayerNormParams::unit(dim),
            ln2: LayerNormParams::unit(dim),
        }
    }

    /// Default bandwidth 3 and hidden width 2d.
    pub fn seeded_default(dim: usize, seed: u64) -> Self {
        Self::seeded(dim, 2 * dim, real(3.0), seed)
    }
}

/// Build A_t, D, and A_tilde for `n` frames.
pub fn build_temporal_adjacency<T: Real>(n: usize, sigma_time: T) -> TemporalMatrices<T> {
    assert!(n >= 1, "need at least one frame");
    assert!(sigma_time > T::zero(), "sigma_time must be positive");
    let a_t = Array2::from_shape_fn((n, n), |(i, j)| {
        let diff = i.abs_diff(j);
        (-real::<T>(diff as f64) / sigma_time).exp()
    });
    let degree = a_t.rows().into_iter().map(|r| r.sum()).collect::<Array1<T>>();
    let inv_sqrt: Vec<T> = degree.iter().map(|&d| T::one() / d.sqrt()).collect();
    let a_tilde = Array2::from_shape_fn((n, n), |(i, j)| inv_sqrt[i] * a_t[[i, j]] * inv_sqrt[j]);
    TemporalMatrices { a_t, degree, a_tilde }
}

/// Row-wise softmax.
pub fn row_softmax<T: Real>(m: &Array2<T>) -> Array2<T> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}

/// Temporal context fusion: H' = rowsoftmax(A_tilde) . H.
pub fn fuse<T: Real>(h: &Array2<T>, m: &TemporalMatrices<T>) -> Result<Array2<T>, TemporalError> {
    if m.a_tilde.nrows() != h.nrows() {
        return Err(TemporalError::ShapeMismatch(format!(
            "adjacency is {}x{} but H has {} rows",
            m.a_tilde.nrows(),
            m.a_tilde.ncols(),
            h.nrows()
        )));
    }
    Ok(row_softmax(&m.a_tilde).dot(h))
}

/// Per-row layer norm with learnable affine.
pub fn layer_norm<T: Real>(x: &Array2<T>, params: &LayerNormParams<T>) -> Array2<T> {
    let d = x.ncols();
    let mut out = Array2::zeros(x.raw_dim());
    for (i, row) in x.rows().into_iter().enumerate() {
        let (normalized, _, _) = layer_norm_row(row.as_slice().expect("contiguous row"), params);
        for (j, v) in normalized.into_iter().enumerate().take(d) {
            out[[i, j]] = v;
        }
    }
    out
}

/// Normalize one row; also returns (x - mean)/std and 1/std for the
/// backward pass.
pub(crate) fn layer_norm_row<T: Real>(
    row: &[T],
    params: &LayerNormParams<T>,
) -> (Vec<T>, Vec<T>, T) {
    let d = row.len();
    let dn = real::<T>(d as f64);
    let mut mean = T::zero();
    for &v in row {
        mean += v;
    }
    mean /= dn;
    let mut var = T::zero();
    for &v in row {
        let c = v - mean;
        var += c * c;
    }
    var /= dn;
    let inv_std = T::one() / (var + params.eps).sqrt();
    let xhat: Vec<T> = row.iter().map(|&v| (v - mean) * inv_std).collect();
    let out = xhat
        .iter()
        .enumerate()
        .map(|(j, &v)| v * params.gain[j] + params.bias[j])
        .collect();
    (out, xhat, inv_std)
}

/// FFN with residual: H''' = LN2(ReLU(H'' W1 + b1) W2 + b2 + H'').
pub fn ffn_residual<T: Real>(
    h2: &Array2<T>,
    enc: &TemporalEncoder<T>,
) -> Result<Array2<T>, TemporalError> {
    check_width(h2, enc)?;
    let z = h2.dot(&enc.w1) + &enc.b1;
    let a = z.mapv(|v| if v > T::zero() { v } else { T::zero() });
    let f = a.dot(&enc.w2) + &enc.b2;
    Ok(layer_norm(&(f + h2), &enc.ln2))
}

fn check_width<T: Real>(h: &Array2<T>, enc: &TemporalEncoder<T>) -> Result<(), TemporalError> {
    if h.ncols() != enc.dim() {
        return Err(TemporalError::ShapeMismatch(format!(
            "H has {} columns but encoder dim is {}",
            h.ncols(),
            enc.dim()
        )));
    }
    Ok(())
}

/// Encoder output: refined frame features plus the pooled video embedding.
#[derive(Debug, Clone)]
pub struct TemporalEncoding<T> {
    pub frame_features: Array2<T>,
    pub video_embedding: Array1<T>,
}

/// Full block: fuse -> LN1 -> FFN+residual -> LN2 -> mean pooling.
pub fn encode<T: Real>(
    h: &Array2<T>,
    enc: &TemporalEncoder<T>,
) -> Result<TemporalEncoding<T>, TemporalError> {
    let cache = encode_cached(h, enc)?;
    Ok(TemporalEncoding {
        frame_features: cache.h3,
        video_embedding: cache.z,
    })
}

/// Every intermediate of the encoder forward pass, kept for the analytic
/// backward pass. `encode` is a thin wrapper so inference and training
/// share one floating-point path.
#[derive(Debug, Clone)]
pub(crate) struct TemporalCache<T> {
    /// rowsoftmax(A_tilde).
    pub s: Array2<T>,
    pub ln1_xhat: Array2<T>,
    pub ln1_inv_std: Vec<T>,
    pub h2: Array2<T>,
    /// Pre-ReLU FFN activations H2 W1 + b1.
    pub z_pre: Array2<T>,
    /// Post-ReLU activations.
    pub a: Array2<T>,
    pub ln2_xhat: Array2<T>,
    pub ln2_inv_std: Vec<T>,
    pub h3: Array2<T>,
    pub z: Array1<T>,
}

pub(crate) fn encode_cached<T: Real>(
    h: &Array2<T>,
    enc: &TemporalEncoder<T>,
) -> Result<TemporalCache<T>, TemporalError> {
    check_width(h, enc)?;
    let n = h.nrows();
    let d = h.ncols();
    let matrices = build_temporal_adjacency(n, enc.sigma_time);
    let s = row_softmax(&matrices.a_tilde);
    let h1 = s.dot(h);

    let mut h2 = Array2::zeros((n, d));
    let mut ln1_xhat = Array2::zeros((n, d));
    let mut ln1_inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<T> = (0..d).map(|c| h1[[i, c]]).collect();
        let (out, xhat, inv_std) = layer_norm_row(&row, &enc.ln1);
        for c in 0..d {
            h2[[i, c]] = out[c];
            ln1_xhat[[i, c]] = xhat[c];
        }
        ln1_inv_std.push(inv_std);
    }

    let z_pre = h2.dot(&enc.w1) + &enc.b1;
    let a = z_pre.mapv(|v| if v > T::zero() { v } else { T::zero() });
    let ln2_in = a.dot(&enc.w2) + &enc.b2 + &h2;

    let mut h3 = Array2::zeros((n, d));
    let mut ln2_xhat = Array2::zeros((n, d));
    let mut ln2_inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<T> = (0..d).map(|c| ln2_in[[i, c]]).collect();
        let (out, xhat, inv_std) = layer_norm_row(&row, &enc.ln2);
        for c in 0..d {
            h3[[i, c]] = out[c];
            ln2_xhat[[i, c]] = xhat[c];
        }
        ln2_inv_std.push(inv_std);
    }

    let inv_n = T::one() / real::<T>(n as f64);
    let z = h3.t().dot(&Array1::from_elem(n, inv_n));
    Ok(TemporalCache {
        s,
        ln1_xhat,
        ln1_inv_std,
        h2,
        z_pre,
        a,
        ln2_xhat,
        ln2_inv_std,
        h3,
        z,
    })
}
