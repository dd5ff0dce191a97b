//! The variational family: per-layer pairing matrix T(y, z), cached
//! fiducial covariance blocks and their parameter derivatives, squared
//! norms, and log-norm gradients.

use crate::error::Error;
use crate::galg::{self, CMat};
use crate::gstate::{self, GammaIn, LinkBlockCache, VERTEX_MAJORANAS};
use crate::lattice::{GaugeConfig, LatticeGeom};
use num_complex::Complex64;

pub const LN_2: f64 = std::f64::consts::LN_2;

/// Pairing matrix with rows {l+, r−, u−, d+} and columns {l−, r+, u+, d−}.
/// Linear in both parameters.
pub fn t_matrix(y: f64, z: f64) -> CMat {
    let s = z / 2.0f64.sqrt();
    let r = |x: f64| Complex64::new(x, 0.0);
    CMat::from_row_slice(
        4,
        4,
        &[
            r(0.0),
            r(y),
            r(s),
            r(s),
            r(-y),
            r(0.0),
            r(-s),
            r(s),
            r(-s),
            r(s),
            r(0.0),
            r(y),
            r(-s),
            r(-s),
            r(-y),
            r(0.0),
        ],
    )
}

pub fn t_matrix_dy() -> CMat {
    t_matrix(1.0, 0.0)
}

pub fn t_matrix_dz() -> CMat {
    t_matrix(0.0, 1.0)
}

/// Real variational parameters of one layer.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LayerParams {
    pub y: f64,
    pub z: f64,
}

impl LayerParams {
    pub fn clamped(self, bound: f64) -> Self {
        LayerParams {
            y: self.y.clamp(-bound, bound),
            z: self.z.clamp(-bound, bound),
        }
    }
}

/// Parameter direction for gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Y,
    Z,
}

pub const PARAMS: [Param; 2] = [Param::Y, Param::Z];

/// Cached per-layer covariance data, rebuilt whenever parameters change.
pub struct LayerCache {
    /// 16×16 fiducial covariance block (identical on every vertex).
    pub d_block: CMat,
    /// ∂(block)/∂y and ∂(block)/∂z.
    pub dd_dy: CMat,
    pub dd_dz: CMat,
    /// Squared norm of the per-vertex fiducial state.
    pub vertex_norm_sq: f64,
}

impl LayerCache {
    pub fn build(params: LayerParams) -> Result<Self, Error> {
        let t = t_matrix(params.y, params.z);
        let (d_block, vertex_norm_sq) = gstate::vertex_d_block(&t)?;
        let dd_dy = gstate::d_vertex_d_block(&t, &t_matrix_dy())?;
        let dd_dz = gstate::d_vertex_d_block(&t, &t_matrix_dz())?;
        Ok(LayerCache {
            d_block,
            dd_dy,
            dd_dz,
            vertex_norm_sq,
        })
    }

    pub fn d_derivative(&self, alpha: Param) -> &CMat {
        match alpha {
            Param::Y => &self.dd_dy,
            Param::Z => &self.dd_dz,
        }
    }
}

/// The full variational state: geometry, layer parameters, and caches.
pub struct Ansatz {
    pub geom: LatticeGeom,
    pub layers: Vec<LayerParams>,
    caches: Vec<LayerCache>,
}

impl Ansatz {
    pub fn new(geom: LatticeGeom, layers: Vec<LayerParams>) -> Result<Self, Error> {
        if layers.is_empty() {
            return Err(Error::Config("ansatz needs at least one layer".into()));
        }
        let caches = layers
            .iter()
            .map(|&p| LayerCache::build(p))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Ansatz {
            geom,
            layers,
            caches,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn cache(&self, layer: usize) -> &LayerCache {
        &self.caches[layer]
    }

    /// Replace the parameters and rebuild all caches. The only mutation
    /// path; estimators never rebuild implicitly.
    pub fn set_params(&mut self, layers: Vec<LayerParams>) -> Result<(), Error> {
        if layers.len() != self.layers.len() {
            return Err(Error::Config("layer count cannot change".into()));
        }
        self.caches = layers
            .iter()
            .map(|&p| LayerCache::build(p))
            .collect::<Result<Vec<_>, _>>()?;
        self.layers = layers;
        Ok(())
    }

    /// Flatten parameters as [y₁, z₁, y₂, z₂, …].
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|p| [p.y, p.z])
            .collect()
    }

    pub fn from_flat(geom: LatticeGeom, flat: &[f64]) -> Result<Self, Error> {
        if flat.len() % 2 != 0 || flat.is_empty() {
            return Err(Error::Config("flat parameter vector must have even length".into()));
        }
        let layers = flat
            .chunks(2)
            .map(|c| LayerParams { y: c[0], z: c[1] })
            .collect();
        Ansatz::new(geom, layers)
    }

    /// Majorana dimension of the assembled matrices.
    pub fn dim(&self) -> usize {
        VERTEX_MAJORANAS * self.geom.n_vertices()
    }
}

/// y = Γ·D where D is block-diagonal with one 16×16 block per vertex.
pub fn mul_blockdiag_right(gamma: &CMat, d_block: &CMat) -> CMat {
    let dim = gamma.nrows();
    let nv = dim / VERTEX_MAJORANAS;
    let mut out = CMat::zeros(dim, dim);
    for v in 0..nv {
        let base = v * VERTEX_MAJORANAS;
        for j in 0..VERTEX_MAJORANAS {
            for k in 0..VERTEX_MAJORANAS {
                let djk = d_block[(k, j)];
                if djk != Complex64::ZERO {
                    // out[:, base+j] += Γ[:, base+k] · D[k, j]
                    let src = gamma.column(base + k);
                    let mut dst = out.column_mut(base + j);
                    dst.axpy(djk, &src, Complex64::ONE);
                }
            }
        }
    }
    out
}

/// y = D·X with block-diagonal D.
pub fn mul_blockdiag_left(d_block: &CMat, x: &CMat) -> CMat {
    let dim = x.nrows();
    let nv = dim / VERTEX_MAJORANAS;
    let cols = x.ncols();
    let mut out = CMat::zeros(dim, cols);
    for v in 0..nv {
        let base = v * VERTEX_MAJORANAS;
        for c in 0..cols {
            for k in 0..VERTEX_MAJORANAS {
                let xkc = x[(base + k, c)];
                if xkc != Complex64::ZERO {
                    for i in 0..VERTEX_MAJORANAS {
                        out[(base + i, c)] += d_block[(i, k)] * xkc;
                    }
                }
            }
        }
    }
    out
}

/// A = 1 − Γ·D for one layer.
pub fn one_minus_gamma_d(gamma: &CMat, d_block: &CMat) -> CMat {
    let mut a = mul_blockdiag_right(gamma, d_block);
    a.neg_mut();
    let dim = a.nrows();
    for i in 0..dim {
        a[(i, i)] += Complex64::ONE;
    }
    a
}

/// log n_i = ½·log det((1 − Γ D_i)/2) for one layer, with the determinant's
/// phase checked: it must be real and non-negative up to numerical noise.
pub fn layer_log_norm(gamma: &CMat, cache: &LayerCache) -> Result<f64, Error> {
    let a = one_minus_gamma_d(gamma, &cache.d_block);
    let dim = a.nrows();
    let (log_abs, phase) = galg::log_det(&a);
    let log_det_scaled = log_abs - dim as f64 * LN_2;
    // A vanishing determinant is a legitimate zero-weight configuration.
    if log_det_scaled < -80.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if phase.re < 0.9 {
        return Err(Error::Convention(format!(
            "det(1 − ΓD) has non-positive phase {phase}: sign convention broken"
        )));
    }
    Ok(0.5 * log_det_scaled)
}

/// Squared norm of the full state and the per-layer factors
/// nᵢ = √det((1 − Γ_in D_i)/2). Accumulates in the log domain.
pub fn norm_sq(
    geom: &LatticeGeom,
    config: &GaugeConfig,
    cache: &LinkBlockCache,
    ansatz: &Ansatz,
) -> Result<(f64, Vec<f64>), Error> {
    let gamma = gstate::assemble_gamma_in(geom, config, cache);
    norm_sq_with_gamma(&gamma, ansatz)
}

pub fn norm_sq_with_gamma(gamma: &GammaIn, ansatz: &Ansatz) -> Result<(f64, Vec<f64>), Error> {
    let mut total_log = 0.0;
    let mut factors = Vec::with_capacity(ansatz.n_layers());
    for cache in &ansatz.caches {
        let log_n = layer_log_norm(&gamma.cov, cache)?;
        factors.push(log_n.exp());
        total_log += log_n;
    }
    Ok((total_log.exp(), factors))
}

/// (∂_α |Ψ_i|²)/|Ψ_i|² = −½ Tr(Γ ∂D_α (1 − Γ D)⁻¹) for layer i, given the
/// cached resolvent W = (1 − Γ D)⁻¹ of that layer.
pub fn log_norm_grad_with(
    w: &CMat,
    gamma: &CMat,
    cache: &LayerCache,
    alpha: Param,
) -> Result<f64, Error> {
    let dd = cache.d_derivative(alpha);
    let tr = trace_gamma_dd_w(gamma, dd, w);
    let val = -0.5 * tr;
    if val.im.abs() > 1e-9 * val.re.abs().max(1.0) {
        return Err(Error::Convention(format!(
            "log-norm gradient has imaginary residue {:.3e}",
            val.im
        )));
    }
    Ok(val.re)
}

/// Tr(Γ · ∂D · W) exploiting Γ's link sparsity and ∂D's block-diagonal
/// structure: a scan over Γ's entries with a 16-term inner sum each.
pub fn trace_gamma_dd_w(gamma: &CMat, dd: &CMat, w: &CMat) -> Complex64 {
    let dim = gamma.nrows();
    let mut acc = Complex64::ZERO;
    let g = gamma.as_slice();
    for y in 0..dim {
        let vbase = (y / VERTEX_MAJORANAS) * VERTEX_MAJORANAS;
        let yr = y % VERTEX_MAJORANAS;
        let col = &g[y * dim..(y + 1) * dim];
        for (x, &gxy) in col.iter().enumerate() {
            if gxy != Complex64::ZERO {
                // (∂D·W)[y, x] = Σ_z ∂D[y, z] W[z, x], z in y's vertex block.
                let mut inner = Complex64::ZERO;
                for z in 0..VERTEX_MAJORANAS {
                    let d = dd[(yr, z)];
                    if d != Complex64::ZERO {
                        inner += d * w[(vbase + z, x)];
                    }
                }
                acc += gxy * inner;
            }
        }
    }
    acc
}

/// Standalone log-norm gradient: builds Γ_in and the resolvent fresh.
pub fn log_norm_grad(
    geom: &LatticeGeom,
    config: &GaugeConfig,
    cache: &LinkBlockCache,
    ansatz: &Ansatz,
    layer: usize,
    alpha: Param,
) -> Result<f64, Error> {
    let gamma = gstate::assemble_gamma_in(geom, config, cache);
    let lc = ansatz.cache(layer);
    let a = one_minus_gamma_d(&gamma.cov, &lc.d_block);
    let w = galg::inverse(&a)?;
    log_norm_grad_with(&w, &gamma.cov, lc, alpha)
}

/// Tr(M · B) for block-diagonal B (one 16×16 block per vertex).
pub fn trace_blockdiag_product(m: &CMat, block: &CMat) -> Complex64 {
    let dim = m.nrows();
    let nv = dim / VERTEX_MAJORANAS;
    let mut tr = Complex64::ZERO;
    for v in 0..nv {
        let base = v * VERTEX_MAJORANAS;
        for i in 0..VERTEX_MAJORANAS {
            for j in 0..VERTEX_MAJORANAS {
                tr += m[(base + i, base + j)] * block[(j, i)];
            }
        }
    }
    tr
}
