//! Per-configuration Monte Carlo estimators and their parameter
//! gradients: Wilson loops, plaquette (magnetic) energy, the electric
//! energy through the Pfaffian formula, and the three-term gradient
//! assembly.

use crate::ansatz::{trace_blockdiag_product, Ansatz, Param, PARAMS};
use crate::error::Error;
use crate::galg::{self, CMat};
use crate::gstate::{self, LinkBlockCache, VERTEX_MAJORANAS};
use crate::lattice::{
    plaquette_links, staggering_sign, GaugeConfig, LatticeGeom, LinkId, Vertex,
};
use num_complex::Complex64;

/// Product of link phases exp(i·sign·q·2π/N) along a signed path.
pub fn wilson_estimator(geom: &LatticeGeom, config: &GaugeConfig, path: &[(LinkId, i8)]) -> Complex64 {
    let delta = 2.0 * std::f64::consts::PI / geom.n as f64;
    let mut phase = 0.0;
    for &(link, sign) in path {
        phase += sign as f64 * config.q_at(geom, link) as f64 * delta;
    }
    Complex64::from_polar(1.0, phase)
}

/// The 1×1 Wilson loop at `origin`.
pub fn plaquette_estimator(geom: &LatticeGeom, config: &GaugeConfig, origin: Vertex) -> Complex64 {
    let path: Vec<(LinkId, i8)> = plaquette_links(geom, origin).to_vec();
    wilson_estimator(geom, config, &path)
}

/// Magnetic energy per plaquette: (1/2g²)·(2 − 2 Re F_W) at the
/// representative plaquette.
pub fn magnetic_energy_estimator(geom: &LatticeGeom, config: &GaugeConfig, g: f64) -> f64 {
    let w = plaquette_estimator(geom, config, (0, 0));
    (2.0 - 2.0 * w.re) / (2.0 * g * g)
}

/// Magnetic estimator averaged over all plaquettes (debug cross-check of
/// translation invariance).
pub fn magnetic_energy_estimator_averaged(geom: &LatticeGeom, config: &GaugeConfig, g: f64) -> f64 {
    let mut acc = 0.0;
    for p in geom.vertices() {
        let w = plaquette_estimator(geom, config, p);
        acc += (2.0 - 2.0 * w.re) / (2.0 * g * g);
    }
    acc / geom.n_plaquettes() as f64
}

/// Γ_in with one link's block replaced by the transition block of the
/// lowering operator.
pub fn build_modified_gamma(
    geom: &LatticeGeom,
    gamma: &CMat,
    config: &GaugeConfig,
    link: LinkId,
    blocks: &LinkBlockCache,
) -> (CMat, Complex64, f64) {
    let parity = staggering_sign(link.vertex);
    let q = config.q_at(geom, link);
    let transition = blocks.transition(q, parity);
    let chi_norm = blocks.block(q, parity).norm_sq;
    let mut modified = gamma.clone();
    gstate::set_link_block(geom, &mut modified, link, &transition.cov);
    (modified, transition.trace, chi_norm)
}

/// Γ + D with block-diagonal D added in place.
pub fn add_blockdiag(gamma: &CMat, d_block: &CMat) -> CMat {
    let mut out = gamma.clone();
    let nv = out.nrows() / VERTEX_MAJORANAS;
    for v in 0..nv {
        let base = v * VERTEX_MAJORANAS;
        for j in 0..VERTEX_MAJORANAS {
            for i in 0..VERTEX_MAJORANAS {
                out[(base + i, base + j)] += d_block[(i, j)];
            }
        }
    }
    out
}

/// One layer's electric estimator value:
///   F = (trace/χ²)·Pf(Γ̃ + D)/Pf(Γ + D),
/// where trace/χ² = ½(1 + cos 2π/N). Both Pfaffians carry definite signs,
/// resolving the square root in the closed-form denominator.
pub fn electric_layer_value(
    gamma_plus_d: &CMat,
    modified_plus_d: &CMat,
    trace: Complex64,
    chi_norm: f64,
) -> Result<Complex64, Error> {
    let pf_den = galg::pfaffian(gamma_plus_d)?;
    let pf_num = galg::pfaffian(modified_plus_d)?;
    let scale = gamma_plus_d.nrows() as f64;
    if pf_den.norm() < 1e-280 * scale {
        return Err(Error::Sampling("singular electric denominator".into()));
    }
    Ok(trace / chi_norm * pf_num / pf_den)
}

/// Per-configuration evaluation of every estimator the optimizer needs.
#[derive(Debug, Clone)]
pub struct ConfigEval {
    /// Plaquette Wilson estimator at the representative plaquette.
    pub f_w: Complex64,
    /// Electric estimator at the representative link (product over layers).
    pub f_el: Complex64,
    /// log of the sampling weight Π_i n_i (determinant route).
    pub log_weight: f64,
    /// Log-norm gradients R per flattened parameter [y₁ z₁ y₂ z₂ …].
    pub r: Vec<f64>,
    /// Explicit electric-estimator derivatives ∂_α F_el (full product).
    pub df_el: Vec<Complex64>,
}

/// Representative link for the electric energy: horizontal at the origin.
pub fn representative_link() -> LinkId {
    LinkId {
        vertex: (0, 0),
        dir: crate::lattice::Direction::Horizontal,
    }
}

/// Tr((Γ+D)⁻¹ ∂D) = −Tr(D·W·∂D) from the cached resolvent W, using that
/// all three factors live in per-vertex 16×16 blocks.
fn trace_gpd_inv_dd(d_block: &CMat, dd: &CMat, w: &CMat) -> Complex64 {
    let dim = w.nrows();
    let nv = dim / VERTEX_MAJORANAS;
    let mut acc = Complex64::ZERO;
    for v in 0..nv {
        let base = v * VERTEX_MAJORANAS;
        // M = W_vv · ∂D, then Tr(D · M).
        for i in 0..VERTEX_MAJORANAS {
            for j in 0..VERTEX_MAJORANAS {
                let dij = d_block[(i, j)];
                if dij == Complex64::ZERO {
                    continue;
                }
                let mut m_ji = Complex64::ZERO;
                for k in 0..VERTEX_MAJORANAS {
                    m_ji += w[(base + j, base + k)] * dd[(k, i)];
                }
                acc += dij * m_ji;
            }
        }
    }
    -acc
}

/// Low-rank machinery for traces against (Γ̃ + D)⁻¹ without forming the
/// inverse: with P = Γ + D and B = P + EΔEᵀ,
///   Tr(B⁻¹ ∂D) = Tr(P⁻¹ ∂D) − Tr(Δ(I + GΔ)⁻¹ · Eᵀ P⁻¹ ∂D P⁻¹ E),
/// where G = Eᵀ P⁻¹ E and P⁻¹ = −D·W.
struct ModifiedTracer {
    rows: [usize; 8],
    /// Rows of P⁻¹ at the link indices (8×dim).
    p_rows: CMat,
    /// Columns of P⁻¹ at the link indices (dim×8).
    p_cols: CMat,
    /// Δ(I + GΔ)⁻¹.
    k_mat: CMat,
}

impl ModifiedTracer {
    fn build(
        d_block: &CMat,
        w: &CMat,
        rows: [usize; 8],
        delta: &CMat,
    ) -> Result<Self, Error> {
        let dim = w.nrows();
        let mut p_rows = CMat::zeros(8, dim);
        for (i, &si) in rows.iter().enumerate() {
            let vbase = (si / VERTEX_MAJORANAS) * VERTEX_MAJORANAS;
            let sr = si % VERTEX_MAJORANAS;
            for c in 0..dim {
                let mut acc = Complex64::ZERO;
                for z in 0..VERTEX_MAJORANAS {
                    let d = d_block[(sr, z)];
                    if d != Complex64::ZERO {
                        acc += d * w[(vbase + z, c)];
                    }
                }
                p_rows[(i, c)] = -acc;
            }
        }
        let mut p_cols = CMat::zeros(dim, 8);
        for (j, &sj) in rows.iter().enumerate() {
            for r in 0..dim {
                let vbase = (r / VERTEX_MAJORANAS) * VERTEX_MAJORANAS;
                let rr = r % VERTEX_MAJORANAS;
                let mut acc = Complex64::ZERO;
                for z in 0..VERTEX_MAJORANAS {
                    let d = d_block[(rr, z)];
                    if d != Complex64::ZERO {
                        acc += d * w[(vbase + z, sj)];
                    }
                }
                p_cols[(r, j)] = -acc;
            }
        }
        let mut g = CMat::zeros(8, 8);
        for j in 0..8 {
            for i in 0..8 {
                g[(i, j)] = p_rows[(i, rows[j])];
            }
        }
        let mut igd = CMat::identity(8, 8);
        igd += &g * delta;
        let lu = galg::LuFactor::new(&igd);
        if lu.is_singular() {
            return Err(Error::Sampling("singular modified-block capacitance".into()));
        }
        let k_mat = delta * lu.inverse()?;
        Ok(ModifiedTracer {
            rows,
            p_rows,
            p_cols,
            k_mat,
        })
    }

    /// Tr(B⁻¹ ∂D) given the base trace Tr(P⁻¹ ∂D).
    fn trace(&self, base: Complex64, dd: &CMat) -> Complex64 {
        let dim = self.p_rows.ncols();
        // T1 = (rows of P⁻¹) · ∂D.
        let mut t1 = CMat::zeros(8, dim);
        for c in 0..dim {
            let vbase = (c / VERTEX_MAJORANAS) * VERTEX_MAJORANAS;
            let cr = c % VERTEX_MAJORANAS;
            for z in 0..VERTEX_MAJORANAS {
                let d = dd[(z, cr)];
                if d != Complex64::ZERO {
                    for i in 0..8 {
                        t1[(i, c)] += self.p_rows[(i, vbase + z)] * d;
                    }
                }
            }
        }
        // H = T1 · (columns of P⁻¹).
        let h = &t1 * &self.p_cols;
        let mut corr = Complex64::ZERO;
        for i in 0..8 {
            for j in 0..8 {
                corr += self.k_mat[(i, j)] * h[(j, i)];
            }
        }
        let _ = self.rows;
        base - corr
    }
}

/// Evaluate every estimator for one configuration from scratch.
pub fn evaluate_config(
    geom: &LatticeGeom,
    config: &GaugeConfig,
    ansatz: &Ansatz,
    blocks: &LinkBlockCache,
    with_grad: bool,
) -> Result<ConfigEval, Error> {
    let gamma = gstate::assemble_gamma_in(geom, config, blocks);
    let mut ws = Vec::with_capacity(ansatz.n_layers());
    let mut log_norms = Vec::with_capacity(ansatz.n_layers());
    for layer in 0..ansatz.n_layers() {
        let lc = ansatz.cache(layer);
        let a = crate::ansatz::one_minus_gamma_d(&gamma.cov, &lc.d_block);
        let lu = galg::LuFactor::new(&a);
        let (log_abs, phase) = lu.log_determinant();
        let dim = a.nrows() as f64;
        let log_det_scaled = log_abs - dim * crate::ansatz::LN_2;
        if phase.re < 0.9 && log_det_scaled > -80.0 {
            return Err(Error::Convention(format!(
                "det(1 − ΓD) phase {phase} at layer {layer}"
            )));
        }
        log_norms.push(0.5 * log_det_scaled);
        ws.push(lu.inverse()?);
    }
    let w_refs: Vec<&CMat> = ws.iter().collect();
    evaluate_with(geom, config, ansatz, blocks, &gamma.cov, &w_refs, &log_norms, with_grad)
}

/// Evaluate estimators reusing per-layer resolvents W_i = (1 − Γ D_i)⁻¹
/// and per-layer log norms maintained by a chain.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_with(
    geom: &LatticeGeom,
    config: &GaugeConfig,
    ansatz: &Ansatz,
    blocks: &LinkBlockCache,
    gamma: &CMat,
    ws: &[&CMat],
    log_norms: &[f64],
    with_grad: bool,
) -> Result<ConfigEval, Error> {
    let f_w = plaquette_estimator(geom, config, (0, 0));
    let link = representative_link();
    let (gamma_mod, trace, chi_norm) = build_modified_gamma(geom, gamma, config, link, blocks);

    let k = ansatz.n_layers();
    let mut f_el = Complex64::ONE;
    let mut layer_values = Vec::with_capacity(k);
    let mut layer_dlog: Vec<[Complex64; 2]> = Vec::with_capacity(k);
    let mut r = Vec::with_capacity(2 * k);

    let link_rows = gstate::link_majoranas(geom, link);
    for layer in 0..k {
        let lc = ansatz.cache(layer);
        let gamma_plus_d = add_blockdiag(gamma, &lc.d_block);
        let modified_plus_d = add_blockdiag(&gamma_mod, &lc.d_block);
        let value = electric_layer_value(&gamma_plus_d, &modified_plus_d, trace, chi_norm)?;
        f_el *= value;
        layer_values.push(value);

        if with_grad {
            let w = ws[layer];
            // Δ between the transition block and the plain link block.
            let mut delta = CMat::zeros(8, 8);
            for a in 0..8 {
                for b in 0..8 {
                    delta[(a, b)] =
                        gamma_mod[(link_rows[a], link_rows[b])] - gamma[(link_rows[a], link_rows[b])];
                }
            }
            let tracer = ModifiedTracer::build(&lc.d_block, w, link_rows, &delta)?;
            let mut dlog = [Complex64::ZERO; 2];
            for (pi, alpha) in PARAMS.iter().enumerate() {
                let dd = lc.d_derivative(*alpha);
                let t_den = trace_gpd_inv_dd(&lc.d_block, dd, w);
                let t_num = tracer.trace(t_den, dd);
                dlog[pi] = 0.5 * (t_num - t_den);
                r.push(crate::ansatz::log_norm_grad_with(w, gamma, lc, *alpha)?);
            }
            layer_dlog.push(dlog);
        }
    }

    let mut df_el = Vec::new();
    if with_grad {
        for layer in 0..k {
            for pi in 0..2 {
                // Product rule: the derivative hits only layer i's factor.
                df_el.push(f_el * layer_dlog[layer][pi]);
            }
        }
    }

    Ok(ConfigEval {
        f_w,
        f_el,
        log_weight: log_norms.iter().sum(),
        r,
        df_el,
    })
}

/// Electric estimator at an arbitrary link (spec operation; the
/// representative-link value is produced by [`evaluate_config`]).
pub fn electric_estimator(
    geom: &LatticeGeom,
    config: &GaugeConfig,
    link: LinkId,
    ansatz: &Ansatz,
    blocks: &LinkBlockCache,
) -> Result<Complex64, Error> {
    let gamma = gstate::assemble_gamma_in(geom, config, blocks);
    let (gamma_mod, trace, chi_norm) = build_modified_gamma(geom, &gamma.cov, config, link, blocks);
    let mut f_el = Complex64::ONE;
    for layer in 0..ansatz.n_layers() {
        let lc = ansatz.cache(layer);
        let gamma_plus_d = add_blockdiag(&gamma.cov, &lc.d_block);
        let modified_plus_d = add_blockdiag(&gamma_mod, &lc.d_block);
        f_el *= electric_layer_value(&gamma_plus_d, &modified_plus_d, trace, chi_norm)?;
    }
    Ok(f_el)
}

/// Explicit-derivative term of F_el with respect to (layer, α).
pub fn electric_grad_estimator(
    geom: &LatticeGeom,
    config: &GaugeConfig,
    link: LinkId,
    ansatz: &Ansatz,
    blocks: &LinkBlockCache,
    layer: usize,
    alpha: Param,
) -> Result<Complex64, Error> {
    let gamma = gstate::assemble_gamma_in(geom, config, blocks);
    let (gamma_mod, trace, chi_norm) = build_modified_gamma(geom, &gamma.cov, config, link, blocks);
    let mut f_el = Complex64::ONE;
    let mut dlog_target = Complex64::ZERO;
    for li in 0..ansatz.n_layers() {
        let lc = ansatz.cache(li);
        let gamma_plus_d = add_blockdiag(&gamma.cov, &lc.d_block);
        let modified_plus_d = add_blockdiag(&gamma_mod, &lc.d_block);
        f_el *= electric_layer_value(&gamma_plus_d, &modified_plus_d, trace, chi_norm)?;
        if li == layer {
            let dd = lc.d_derivative(alpha);
            let mod_inv = galg::inverse(&modified_plus_d)?;
            let gpd_inv = galg::inverse(&gamma_plus_d)?;
            dlog_target = 0.5
                * (trace_blockdiag_product(&mod_inv, dd)
                    - trace_blockdiag_product(&gpd_inv, dd));
        }
    }
    Ok(f_el * dlog_target)
}

/// One Monte Carlo sample of everything the energy gradient needs.
#[derive(Debug, Clone)]
pub struct GradientSample {
    pub f_w: Complex64,
    pub f_el: Complex64,
    pub r: Vec<f64>,
    pub df_el: Vec<Complex64>,
}

impl From<ConfigEval> for GradientSample {
    fn from(e: ConfigEval) -> Self {
        GradientSample {
            f_w: e.f_w,
            f_el: e.f_el,
            r: e.r,
            df_el: e.df_el,
        }
    }
}

/// ⟨∂F⟩ + ⟨F·R⟩ − ⟨F⟩⟨R⟩ for one observable and one parameter direction.
pub fn assemble_observable_grad(
    f: &[Complex64],
    df: &[Complex64],
    r: &[f64],
) -> Result<Complex64, Error> {
    let n = f.len();
    if n < 2 || df.len() != n || r.len() != n {
        return Err(Error::Sampling("need at least 2 consistent samples".into()));
    }
    let nf = n as f64;
    let mean_df: Complex64 = df.iter().sum::<Complex64>() / nf;
    let mean_f: Complex64 = f.iter().sum::<Complex64>() / nf;
    let mean_r: f64 = r.iter().sum::<f64>() / nf;
    let mean_fr: Complex64 = f.iter().zip(r).map(|(x, &w)| x * w).sum::<Complex64>() / nf;
    Ok(mean_df + mean_fr - mean_f * mean_r)
}

/// Total energy and density from estimator means.
pub fn energy_from_means(geom: &LatticeGeom, g: f64, mean_f_el: Complex64, mean_f_w: Complex64) -> (f64, f64) {
    let n_links = geom.n_links() as f64;
    let n_plaq = geom.n_plaquettes() as f64;
    let electric = n_links * 0.5 * g * g * (2.0 - 2.0 * mean_f_el.re);
    let magnetic = n_plaq / (2.0 * g * g) * (2.0 - 2.0 * mean_f_w.re);
    let total = electric + magnetic;
    (total, total / n_plaq)
}

/// Energy gradient per flattened parameter from a set of samples.
/// The Wilson term has no explicit parameter dependence.
pub fn energy_gradient(
    geom: &LatticeGeom,
    g: f64,
    samples: &[GradientSample],
) -> Result<Vec<f64>, Error> {
    if samples.len() < 2 {
        return Err(Error::Sampling("need at least 2 samples".into()));
    }
    let n_params = samples[0].r.len();
    let n_links = geom.n_links() as f64;
    let n_plaq = geom.n_plaquettes() as f64;
    let f_el: Vec<Complex64> = samples.iter().map(|s| s.f_el).collect();
    let f_w: Vec<Complex64> = samples.iter().map(|s| s.f_w).collect();
    let zeros = vec![Complex64::ZERO; samples.len()];
    let mut grad = Vec::with_capacity(n_params);
    for p in 0..n_params {
        let r: Vec<f64> = samples.iter().map(|s| s.r[p]).collect();
        let df: Vec<Complex64> = samples.iter().map(|s| s.df_el[p]).collect();
        let d_fel = assemble_observable_grad(&f_el, &df, &r)?;
        let d_fw = assemble_observable_grad(&f_w, &zeros, &r)?;
        let d_energy = n_links * 0.5 * g * g * (-2.0 * d_fel.re)
            + n_plaq / (2.0 * g * g) * (-2.0 * d_fw.re);
        grad.push(d_energy);
    }
    Ok(grad)
}
