//! Two-layer graph convolutional encoder with hand-written reverse pass and
//! an Adam optimizer.
//!
//! `Z = Â · relu(Â · X · W1 + b1) · W2 + b2`

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::scalar::Scalar;

/// Encoder parameters. `version` increases on every in-place update so that
/// stale forward caches can be detected.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams<T> {
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array2<T>,
    pub b2: Array1<T>,
    version: u64,
}

/// Draws an `rows x cols` matrix from N(0, 2 / fan_in).
pub(crate) fn he_matrix<T: Scalar>(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Array2<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        T::lit(z * std)
    })
}

impl<T: Scalar> GcnParams<T> {
    /// He-initialized weights, zero biases.
    pub fn init(n_features: usize, hidden: usize, latent: usize, seed: u64) -> Result<Self> {
        if n_features == 0 || hidden == 0 || latent == 0 {
            return Err(Error::InvalidArgument("encoder dimensions must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = he_matrix(n_features, hidden, n_features, &mut rng);
        let w2 = he_matrix(hidden, latent, hidden, &mut rng);
        Ok(Self {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(latent),
            version: 0,
        })
    }

    /// Assembles parameters from explicit tensors.
    pub fn from_parts(w1: Array2<T>, b1: Array1<T>, w2: Array2<T>, b2: Array1<T>) -> Result<Self> {
        if w1.ncols() != b1.len() || w2.nrows() != w1.ncols() || w2.ncols() != b2.len() {
            return Err(Error::DimensionMismatch(format!(
                "w1 {:?}, b1 {}, w2 {:?}, b2 {}",
                w1.dim(),
                b1.len(),
                w2.dim(),
                b2.len()
            )));
        }
        Ok(Self {
            w1,
            b1,
            w2,
            b2,
            version: 0,
        })
    }

    pub fn n_features(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn latent(&self) -> usize {
        self.w2.ncols()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Marks the parameters as modified; outstanding caches become stale.
    pub fn touch(&mut self) {
        self.version += 1;
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|v| v.is_finite())
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn slices_mut(&mut self) -> [&mut [T]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<'a, T> {
    a_hat: &'a NormalizedAdjacency<T>,
    x: ArrayView2<'a, T>,
    pub hidden_pre: Array2<T>,
    pub hidden: Array2<T>,
    version: u64,
}

impl<T> ForwardCache<'_, T> {
    pub fn version(&self) -> u64 {
        self.version
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnGrads<T> {
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array2<T>,
    pub b2: Array1<T>,
    pub x: Option<Array2<T>>,
}

impl<T: Scalar> GcnGrads<T> {
    pub fn zeros_like(p: &GcnParams<T>) -> Self {
        Self {
            w1: Array2::zeros(p.w1.dim()),
            b1: Array1::zeros(p.b1.len()),
            w2: Array2::zeros(p.w2.dim()),
            b2: Array1::zeros(p.b2.len()),
            x: None,
        }
    }

    fn slices(&self) -> [&[T]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }
}

pub fn forward<'a, T: Scalar>(
    p: &GcnParams<T>,
    a_hat: &'a NormalizedAdjacency<T>,
    x: ArrayView2<'a, T>,
) -> Result<(Array2<T>, ForwardCache<'a, T>)> {
    if x.ncols() != p.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "features have width {}, encoder expects {}",
            x.ncols(),
            p.n_features()
        )));
    }
    if x.nrows() != a_hat.n_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows for a {}-node adjacency",
            x.nrows(),
            a_hat.n_nodes()
        )));
    }
    let a = a_hat.matrix();
    let mut hidden_pre = a.spmm(&x.dot(&p.w1).view())?;
    hidden_pre += &p.b1;
    let hidden = hidden_pre.mapv(|v| if v > T::zero() { v } else { T::zero() });
    let mut z = a.spmm(&hidden.dot(&p.w2).view())?;
    z += &p.b2;
    Ok((
        z,
        ForwardCache {
            a_hat,
            x,
            hidden_pre,
            hidden,
            version: p.version,
        },
    ))
}

/// Reverse pass for a cotangent `grad_z = dL/dZ`. ReLU passes no gradient
/// where its input is `<= 0`.
pub fn backward<T: Scalar>(
    p: &GcnParams<T>,
    cache: &ForwardCache<'_, T>,
    grad_z: ArrayView2<'_, T>,
    want_input_grad: bool,
) -> Result<GcnGrads<T>> {
    if cache.version != p.version {
        return Err(Error::StaleCache {
            cached: cache.version,
            current: p.version,
        });
    }
    if grad_z.dim() != (cache.hidden.nrows(), p.latent()) {
        return Err(Error::DimensionMismatch(format!(
            "grad_z is {:?}, expected {:?}",
            grad_z.dim(),
            (cache.hidden.nrows(), p.latent())
        )));
    }
    let a = cache.a_hat.matrix();
    // Â is symmetric, so Âᵀ·G = Â·G.
    let a_gz = a.spmm(&grad_z)?;
    let w2 = cache.hidden.t().dot(&a_gz);
    let b2 = grad_z.sum_axis(Axis(0));
    let mut g_hidden = a_gz.dot(&p.w2.t());
    ndarray::Zip::from(&mut g_hidden)
        .and(&cache.hidden_pre)
        .for_each(|g, &pre| {
            if pre <= T::zero() {
                *g = T::zero();
            }
        });
    let b1 = g_hidden.sum_axis(Axis(0));
    let a_gh = a.spmm(&g_hidden.view())?;
    let w1 = cache.x.t().dot(&a_gh);
    let x = want_input_grad.then(|| a_gh.dot(&p.w1.t()));
    Ok(GcnGrads { w1, b1, w2, b2, x })
}

/// Adam moment buffers for an ordered list of flat tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_params(p: &GcnParams<T>) -> Self {
        Self::new(&[p.w1.len(), p.b1.len(), p.w2.len(), p.b2.len()])
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update over all tensors.
    pub fn update(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch("adam: tensor count".into()));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[k].len() || g.len() != self.m[k].len() {
                return Err(Error::DimensionMismatch(format!("adam: tensor {k} size")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient tensor {k}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let one = T::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let lr = T::lit(lr);
        let eps = T::lit(self.eps);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one Adam step to the encoder parameters.
pub fn adam_step<T: Scalar>(
    p: &mut GcnParams<T>,
    grads: &GcnGrads<T>,
    st: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    let g = grads.slices();
    let mut slices = p.slices_mut();
    st.update(&mut slices, &g, lr)?;
    p.touch();
    Ok(())
}
