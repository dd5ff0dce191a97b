//! Ground-truth engines: the two-vertex Fock amplitude oracle, exact
//! contraction of the ansatz by full (or orbit-reduced) configuration
//! sums, and exact diagonalization of the gauge Hamiltonian in the
//! gauge-invariant sector.

use crate::ansatz::Ansatz;
use crate::error::Error;
use crate::estimators::{self, ConfigEval};
use crate::fock::FockState;
use crate::galg::{self, CMat};
use crate::gstate::{self, LinkBlockCache};
use crate::lattice::{gauge_transform, GaugeConfig, LatticeGeom};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Two-vertex ring oracle
// ---------------------------------------------------------------------------

/// A one-dimensional two-vertex ring with two links, small enough to
/// evaluate the full wave function amplitude in Fock space. Pins every
/// sign and phase convention of the covariance pipeline.
///
/// Modes per vertex: {l+, l−, r+, r−}; vertex 0 is even (parity +1),
/// vertex 1 odd (parity −1). Link 0 runs 0→1, link 1 runs 1→0.
pub struct ToyRing {
    pub n: usize,
    pub y: f64,
}

const TOY_MODES: usize = 8;

fn toy_mode(vertex: usize, slot: usize) -> usize {
    4 * vertex + slot
}

// Toy slots within a vertex.
const T_LP: usize = 0;
const T_LM: usize = 1;
const T_RP: usize = 2;
const T_RM: usize = 3;

impl ToyRing {
    pub fn new(n: usize, y: f64) -> Self {
        ToyRing { n, y }
    }

    fn delta(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.n as f64
    }

    fn link_phase(&self, link: usize, q: u8) -> f64 {
        let parity = if link == 0 { 1.0 } else { -1.0 };
        parity * q as f64 * self.delta()
    }

    /// Ψ(q₀, q₁) = ⟨Ω| ω₀ ω₁ U₀ U₁ A(0) A(1) |Ω⟩ evaluated literally.
    pub fn amplitude(&self, q0: u8, q1: u8) -> Result<Complex64, Error> {
        let mut state = FockState::vacuum(TOY_MODES)?;
        // Fiducial operators: exp(y l+† r+† − y r−† l−†) per vertex.
        for v in 0..2 {
            state = state.apply_pair_creation_exp(&[
                (
                    toy_mode(v, T_LP),
                    toy_mode(v, T_RP),
                    Complex64::new(self.y, 0.0),
                ),
                (
                    toy_mode(v, T_RM),
                    toy_mode(v, T_LM),
                    Complex64::new(-self.y, 0.0),
                ),
            ]);
        }
        // Gauging: phase ±Φ on the gauged (r) side of each link.
        for (link, v) in [(0usize, 0usize), (1, 1)] {
            let phi = self.link_phase(link, if link == 0 { q0 } else { q1 });
            state = state
                .number_phase(toy_mode(v, T_RP), phi)
                .number_phase(toy_mode(v, T_RM), -phi);
        }
        // Projectors ω = exp(create)·Ω_ℓ·exp(annihilate) per link.
        for link in 0..2 {
            let (gv, fv) = if link == 0 { (0, 1) } else { (1, 0) };
            let annih = [
                (toy_mode(gv, T_RM), toy_mode(fv, T_LP), Complex64::ONE),
                (toy_mode(gv, T_RP), toy_mode(fv, T_LM), Complex64::ONE),
            ];
            let create = [
                (toy_mode(fv, T_LP), toy_mode(gv, T_RM), Complex64::ONE),
                (toy_mode(fv, T_LM), toy_mode(gv, T_RP), Complex64::ONE),
            ];
            let modes = [
                toy_mode(gv, T_RP),
                toy_mode(gv, T_RM),
                toy_mode(fv, T_LP),
                toy_mode(fv, T_LM),
            ];
            state = state
                .apply_pair_annihilation_exp(&annih)
                .project_vacuum(&modes)
                .apply_pair_creation_exp(&create);
        }
        Ok(state.amp[0])
    }

    /// Toy fiducial covariance (8×8 per vertex) and its squared norm.
    pub fn vertex_block(&self) -> Result<(CMat, f64), Error> {
        let vac = FockState::vacuum(4)?;
        let state = vac.apply_pair_creation_exp(&[
            (T_LP, T_RP, Complex64::new(self.y, 0.0)),
            (T_RM, T_LM, Complex64::new(-self.y, 0.0)),
        ]);
        state.covariance()
    }

    /// Block-diagonal fiducial covariance on the full 16 Majoranas.
    pub fn d_matrix(&self) -> Result<(CMat, f64), Error> {
        let (block, nsq) = self.vertex_block()?;
        let mut d = CMat::zeros(16, 16);
        for v in 0..2 {
            for i in 0..8 {
                for j in 0..8 {
                    d[(8 * v + i, 8 * v + j)] = block[(i, j)];
                }
            }
        }
        Ok((d, nsq * nsq))
    }

    /// Majorana indices of a link in link-local order.
    fn link_indices(&self, link: usize) -> [usize; 8] {
        let (gv, fv) = if link == 0 { (0usize, 1usize) } else { (1, 0) };
        let m = |v: usize, slot: usize, c: usize| 8 * v + 2 * slot + c;
        [
            m(gv, T_RP, 0),
            m(gv, T_RP, 1),
            m(fv, T_LP, 0),
            m(fv, T_LP, 1),
            m(gv, T_RM, 0),
            m(gv, T_RM, 1),
            m(fv, T_LM, 0),
            m(fv, T_LM, 1),
        ]
    }

    /// Assembled Γ_in(q₀, q₁) plus the product of link norms.
    pub fn gamma_in(&self, q0: u8, q1: u8) -> (CMat, f64) {
        let mut gamma = CMat::zeros(16, 16);
        let mut norm = 1.0;
        for (link, q, parity) in [(0usize, q0, 1i32), (1, q1, -1)] {
            let block = gstate::link_in_block(q, parity, self.n);
            let idx = self.link_indices(link);
            for a in 0..8 {
                for b in 0..8 {
                    gamma[(idx[a], idx[b])] = block.cov[(a, b)];
                }
            }
            norm *= block.norm_sq;
        }
        (gamma, norm)
    }

    /// Γ_in with link 0's block replaced by the transition block.
    pub fn gamma_modified(&self, q0: u8, q1: u8) -> (CMat, Complex64, f64) {
        let (mut gamma, _) = self.gamma_in(q0, q1);
        let tr = gstate::transition_link_block(q0, 1, self.n);
        let idx = self.link_indices(0);
        for a in 0..8 {
            for b in 0..8 {
                gamma[(idx[a], idx[b])] = tr.cov[(a, b)];
            }
        }
        let chi_norm = gstate::link_in_block(q0, 1, self.n).norm_sq;
        (gamma, tr.trace, chi_norm)
    }

    /// |Ψ(q₀,q₁)|² through the covariance pipeline, absolute normalization
    /// included: ⟨X|X⟩·⟨Y|Y⟩·√det((1 − Γ_in D)/2).
    pub fn norm_sq_pipeline(&self, q0: u8, q1: u8) -> Result<f64, Error> {
        let (gamma, chi_norms) = self.gamma_in(q0, q1);
        let (d, a_norms) = self.d_matrix()?;
        let a = CMat::identity(16, 16) - &gamma * &d;
        let (log_abs, phase) = galg::log_det(&a);
        if phase.re < 0.9 {
            return Err(Error::Convention(format!("toy norm phase {phase}")));
        }
        let sqrt_det = (0.5 * (log_abs - 16.0 * std::f64::consts::LN_2)).exp();
        Ok(chi_norms * a_norms * sqrt_det)
    }

    /// |Ψ|² through the trace identity 2^{-n}·TrX·TrY·Pf(Γ_X)·Pf(Γ_Y − Γ_X⁻¹).
    pub fn norm_sq_overlap_route(&self, q0: u8, q1: u8) -> Result<Complex64, Error> {
        let (gamma, chi_norms) = self.gamma_in(q0, q1);
        let (d, a_norms) = self.d_matrix()?;
        let gamma_inv = galg::inverse(&gamma)?;
        let pf_x = galg::pfaffian(&gamma)?;
        let pf_mix = galg::pfaffian(&(&d - &gamma_inv))?;
        let scale = 2.0f64.powi(-(TOY_MODES as i32));
        Ok(scale * chi_norms * a_norms * pf_x * pf_mix)
    }

    /// Electric estimator for link 0 through the production formula.
    pub fn f_el_pipeline(&self, q0: u8, q1: u8) -> Result<Complex64, Error> {
        let (gamma, _) = self.gamma_in(q0, q1);
        let (gamma_mod, trace, chi_norm) = self.gamma_modified(q0, q1);
        let (d, _) = self.d_matrix()?;
        let gamma_plus_d = &gamma + &d;
        let mod_plus_d = &gamma_mod + &d;
        estimators::electric_layer_value(&gamma_plus_d, &mod_plus_d, trace, chi_norm)
    }

    /// Electric estimator through the swapped-pairing overlap route:
    /// (trace/χ²)·Pf(Γ̃)Pf(D − Γ̃⁻¹) / [Pf(Γ)Pf(D − Γ⁻¹)].
    pub fn f_el_overlap_route(&self, q0: u8, q1: u8) -> Result<Complex64, Error> {
        let (gamma, _) = self.gamma_in(q0, q1);
        let (gamma_mod, trace, chi_norm) = self.gamma_modified(q0, q1);
        let (d, _) = self.d_matrix()?;
        let num = galg::pfaffian(&gamma_mod)?
            * galg::pfaffian(&(&d - &galg::inverse(&gamma_mod)?))?;
        let den = galg::pfaffian(&gamma)? * galg::pfaffian(&(&d - &galg::inverse(&gamma)?))?;
        Ok(trace / chi_norm * num / den)
    }
}

// ---------------------------------------------------------------------------
// Exact contraction
// ---------------------------------------------------------------------------

/// Result of an exact contraction over all gauge configurations.
#[derive(Debug, Clone)]
pub struct EcResult {
    pub energy: f64,
    pub energy_density: f64,
    pub mean_f_el: Complex64,
    pub mean_f_w: Complex64,
    /// Energy gradient per flattened parameter, when requested.
    pub grad: Option<Vec<f64>>,
}

fn check_ec_size(geom: &LatticeGeom) -> Result<u64, Error> {
    let n_states = (geom.n as f64).powi(geom.n_links() as i32);
    if n_states > 1e7 {
        return Err(Error::TooLarge(format!(
            "{n_states:.3e} configurations; use Monte Carlo mode"
        )));
    }
    Ok(n_states as u64)
}

/// Digits of the base-N modular Gray code of `t`: successive values differ
/// by +1 (mod N) in exactly one digit.
fn gray_digits(mut t: u64, n: u64, m: usize) -> Vec<u8> {
    let mut b = vec![0u8; m + 1];
    for digit in b.iter_mut().take(m) {
        *digit = (t % n) as u8;
        t /= n;
    }
    (0..m)
        .map(|i| ((b[i] as i64 - b[i + 1] as i64).rem_euclid(n as i64)) as u8)
        .collect()
}

fn combine_ec(
    geom: &LatticeGeom,
    g: f64,
    evals: &[(f64, ConfigEval)],
    multiplicities: Option<&[f64]>,
    with_grad: bool,
) -> EcResult {
    let max_log = evals
        .iter()
        .map(|(lw, _)| *lw)
        .fold(f64::NEG_INFINITY, f64::max);
    // log_weight is already the log of the squared norm Π n_i.
    let weight = |i: usize, lw: f64| -> f64 {
        let m = multiplicities.map_or(1.0, |ms| ms[i]);
        m * (lw - max_log).exp()
    };
    let mut z = 0.0;
    let mut sum_w = Complex64::ZERO;
    let mut sum_el = Complex64::ZERO;
    for (i, (lw, e)) in evals.iter().enumerate() {
        let w = weight(i, *lw);
        z += w;
        sum_w += w * e.f_w;
        sum_el += w * e.f_el;
    }
    let mean_f_w = sum_w / z;
    let mean_f_el = sum_el / z;
    let (energy, energy_density) = estimators::energy_from_means(geom, g, mean_f_el, mean_f_w);

    let grad = if with_grad {
        let n_params = evals[0].1.r.len();
        let n_links = geom.n_links() as f64;
        let n_plaq = geom.n_plaquettes() as f64;
        let mut out = Vec::with_capacity(n_params);
        for p in 0..n_params {
            let mut mean_r = 0.0;
            let mut mean_df = Complex64::ZERO;
            let mut mean_el_r = Complex64::ZERO;
            let mut mean_w_r = Complex64::ZERO;
            for (i, (lw, e)) in evals.iter().enumerate() {
                let w = weight(i, *lw) / z;
                mean_r += w * e.r[p];
                mean_df += w * e.df_el[p];
                mean_el_r += w * e.f_el * e.r[p];
                mean_w_r += w * e.f_w * e.r[p];
            }
            let d_el = mean_df + mean_el_r - mean_f_el * mean_r;
            let d_w = mean_w_r - mean_f_w * mean_r;
            out.push(
                n_links * 0.5 * g * g * (-2.0 * d_el.re) + n_plaq / (2.0 * g * g) * (-2.0 * d_w.re),
            );
        }
        Some(out)
    } else {
        None
    };

    EcResult {
        energy,
        energy_density,
        mean_f_el,
        mean_f_w,
        grad,
    }
}

/// Exact contraction by full enumeration, walking configurations in
/// modular Gray-code order so every step exercises the incremental
/// determinant-ratio kernel.
pub fn exact_contract(
    geom: &LatticeGeom,
    ansatz: &Ansatz,
    blocks: &LinkBlockCache,
    g: f64,
    with_grad: bool,
) -> Result<EcResult, Error> {
    let n_states = check_ec_size(geom)?;
    let m = geom.n_links();
    let mut config = GaugeConfig::zeros(geom);
    let mut gamma = gstate::assemble_gamma_in(geom, &config, blocks).cov;

    // Per-layer incremental caches of A = 1 − Γ D.
    let mut caches = Vec::with_capacity(ansatz.n_layers());
    for layer in 0..ansatz.n_layers() {
        let a = crate::ansatz::one_minus_gamma_d(&gamma, &ansatz.cache(layer).d_block);
        caches.push(galg::UpdatableInverse::new(a, 256)?);
    }

    let dim = ansatz.dim() as f64;
    let mut evals: Vec<(f64, ConfigEval)> = Vec::with_capacity(n_states as usize);
    let mut digits = vec![0u8; m];
    for t in 0..n_states {
        if t > 0 {
            let next = gray_digits(t, geom.n as u64, m);
            let changed = (0..m)
                .find(|&i| next[i] != digits[i])
                .expect("gray step changes one digit");
            apply_link_shift(geom, &mut config, &mut gamma, &mut caches, ansatz, blocks, changed, next[changed])?;
            digits = next;
        }
        let mut log_norms = Vec::with_capacity(ansatz.n_layers());
        let mut ws: Vec<&CMat> = Vec::with_capacity(ansatz.n_layers());
        for cache in &caches {
            let (log_abs, phase) = cache.log_det();
            if phase.re < 0.9 && log_abs - dim * crate::ansatz::LN_2 > -80.0 {
                return Err(Error::Convention(format!(
                    "det(1 − ΓD) phase {phase} during exact contraction"
                )));
            }
            log_norms.push(0.5 * (log_abs - dim * crate::ansatz::LN_2));
            ws.push(cache.inverse());
        }
        let eval = estimators::evaluate_with(
            geom, &config, ansatz, blocks, &gamma, &ws, &log_norms, with_grad,
        )?;
        let lw = eval.log_weight;
        evals.push((lw, eval));
    }
    Ok(combine_ec(geom, g, &evals, None, with_grad))
}

/// Shift one link to a new group element, updating Γ and all layer caches
/// through the low-rank row-update kernel.
#[allow(clippy::too_many_arguments)]
fn apply_link_shift(
    geom: &LatticeGeom,
    config: &mut GaugeConfig,
    gamma: &mut CMat,
    caches: &mut [galg::UpdatableInverse],
    ansatz: &Ansatz,
    blocks: &LinkBlockCache,
    link_idx: usize,
    new_q: u8,
) -> Result<(), Error> {
    let link = geom.link_from_index(link_idx);
    let parity = crate::lattice::staggering_sign(link.vertex);
    let old_block = blocks.block(config.q[link_idx], parity).cov.clone();
    let new_block = &blocks.block(new_q, parity).cov;
    let delta = new_block - &old_block;
    let rows = gstate::link_majoranas(geom, link);
    let dimension = gamma.nrows();

    for (layer, cache) in caches.iter_mut().enumerate() {
        // A′ − A = −Δ·D rows on the link's Majorana rows.
        let d_block = &ansatz.cache(layer).d_block;
        let mut v = CMat::zeros(8, dimension);
        for (ii, _) in rows.iter().enumerate() {
            for (jj, &sj) in rows.iter().enumerate() {
                let dval = delta[(ii, jj)];
                if dval != Complex64::ZERO {
                    // (Δ·D)[ii, c] = Σ_j Δ[ii,jj]·D[sj, c]; D is block-diagonal.
                    let vblock = sj / 16;
                    let srow = sj % 16;
                    for c in 0..16 {
                        v[(ii, vblock * 16 + c)] -= dval * d_block[(srow, c)];
                    }
                }
            }
        }
        cache.apply_row_update(&rows, &v)?;
    }
    gstate::set_link_block(geom, gamma, link, new_block);
    config.q[link_idx] = new_q;
    Ok(())
}

/// Table of gauge-orbit representatives with orbit sizes; estimators and
/// weights are constant on orbits, so exact sums reduce to this set.
pub struct OrbitTable {
    pub reps: Vec<(u64, f64)>,
}

pub fn build_orbit_table(geom: &LatticeGeom) -> Result<OrbitTable, Error> {
    let n_states = check_ec_size(geom)? as usize;
    let mut visited = vec![false; n_states];
    let mut reps = Vec::new();
    for code in 0..n_states as u64 {
        if visited[code as usize] {
            continue;
        }
        // BFS over the vertex transforms.
        let mut orbit = vec![code];
        visited[code as usize] = true;
        let mut frontier = vec![code];
        while let Some(c) = frontier.pop() {
            let config = GaugeConfig::from_code(geom, c);
            for v in geom.vertices() {
                let t = gauge_transform(geom, &config, v).code();
                if !visited[t as usize] {
                    visited[t as usize] = true;
                    orbit.push(t);
                    frontier.push(t);
                }
            }
        }
        reps.push((code, orbit.len() as f64));
    }
    Ok(OrbitTable { reps })
}

/// Exact contraction over orbit representatives; identical to
/// [`exact_contract`] but ~|orbit| times cheaper. Parallel over
/// representatives with a deterministic reduction order.
pub fn exact_contract_orbits(
    geom: &LatticeGeom,
    ansatz: &Ansatz,
    blocks: &LinkBlockCache,
    g: f64,
    with_grad: bool,
    orbits: &OrbitTable,
) -> Result<EcResult, Error> {
    let results: Result<Vec<(f64, ConfigEval)>, Error> = orbits
        .reps
        .par_iter()
        .map(|&(code, _)| {
            let config = GaugeConfig::from_code(geom, code);
            let eval = estimators::evaluate_config(geom, &config, ansatz, blocks, with_grad)?;
            Ok((eval.log_weight, eval))
        })
        .collect();
    let evals = results?;
    let multiplicities: Vec<f64> = orbits.reps.iter().map(|&(_, m)| m).collect();
    Ok(combine_ec(geom, g, &evals, Some(&multiplicities), with_grad))
}

/// Electric estimator evaluated through the swapped-pairing overlap
/// identity: (trace/χ²)·Pf(Γ̃)Pf(D − Γ̃⁻¹) / [Pf(Γ)Pf(D − Γ⁻¹)].
/// An independent code path from the production formula, used as a
/// cross-oracle.
pub fn electric_overlap_route(
    geom: &LatticeGeom,
    config: &GaugeConfig,
    ansatz: &Ansatz,
    blocks: &LinkBlockCache,
    link: crate::lattice::LinkId,
) -> Result<Complex64, Error> {
    let gamma = gstate::assemble_gamma_in(geom, config, blocks).cov;
    let (gamma_mod, trace, chi_norm) =
        estimators::build_modified_gamma(geom, &gamma, config, link, blocks);
    let dim = gamma.nrows();
    let nv = dim / gstate::VERTEX_MAJORANAS;
    let mut value = Complex64::ONE;
    for layer in 0..ansatz.n_layers() {
        let block = &ansatz.cache(layer).d_block;
        let mut d = CMat::zeros(dim, dim);
        for v in 0..nv {
            for i in 0..16 {
                for j in 0..16 {
                    d[(16 * v + i, 16 * v + j)] = block[(i, j)];
                }
            }
        }
        let num = galg::pfaffian(&gamma_mod)?
            * galg::pfaffian(&(&d - &galg::inverse(&gamma_mod)?))?;
        let den = galg::pfaffian(&gamma)? * galg::pfaffian(&(&d - &galg::inverse(&gamma)?))?;
        value *= trace / chi_norm * num / den;
    }
    Ok(value)
}

// ---------------------------------------------------------------------------
// Exact diagonalization
// ---------------------------------------------------------------------------

/// Specification of an exact diagonalization run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EdSpec {
    pub l: usize,
    pub n: usize,
    pub g: f64,
}

/// Ground energy in the gauge-invariant sector, with diagnostics and the
/// ground vector for property checks.
pub struct EdResult {
    pub energy: f64,
    pub sector_dim: usize,
    pub residual: f64,
    pub ground: Vec<f64>,
}

struct EdOperator {
    geom: LatticeGeom,
    g: f64,
    diag: Vec<f64>,
    /// For each link, the permutation s ↦ s with q_ℓ raised by one.
    raise: Vec<Vec<u32>>,
    /// Basis permutations of the vertex gauge transforms.
    vertex_perm: Vec<Vec<u32>>,
}

impl EdOperator {
    fn build(spec: &EdSpec) -> Result<Self, Error> {
        let geom = LatticeGeom::new(spec.l, spec.n)?;
        let n_states_f = (spec.n as f64).powi(geom.n_links() as i32);
        if n_states_f > 2e5 {
            return Err(Error::TooLarge(format!(
                "ED dimension {n_states_f:.3e} exceeds the supported size"
            )));
        }
        let n_states = n_states_f as usize;
        let delta = 2.0 * std::f64::consts::PI / spec.n as f64;
        let mut diag = vec![0.0; n_states];
        let plaquettes: Vec<Vec<(usize, i8)>> = geom
            .vertices()
            .map(|p| {
                crate::lattice::plaquette_links(&geom, p)
                    .iter()
                    .map(|(l, s)| (geom.link_index(*l), *s))
                    .collect()
            })
            .collect();
        for (s, d) in diag.iter_mut().enumerate() {
            let config = GaugeConfig::from_code(&geom, s as u64);
            let mut acc = 0.0;
            for plq in &plaquettes {
                let phase: f64 = plq
                    .iter()
                    .map(|&(idx, sign)| sign as f64 * config.q[idx] as f64 * delta)
                    .sum();
                acc += (2.0 - 2.0 * phase.cos()) / (2.0 * spec.g * spec.g);
            }
            *d = acc;
        }
        let mut raise = Vec::with_capacity(geom.n_links());
        for idx in 0..geom.n_links() {
            let mut table = vec![0u32; n_states];
            for (s, entry) in table.iter_mut().enumerate() {
                let mut config = GaugeConfig::from_code(&geom, s as u64);
                config.shift(idx, 1);
                *entry = config.code() as u32;
            }
            raise.push(table);
        }
        let mut vertex_perm = Vec::with_capacity(geom.n_vertices());
        for v in geom.vertices() {
            let mut table = vec![0u32; n_states];
            for (s, entry) in table.iter_mut().enumerate() {
                let config = GaugeConfig::from_code(&geom, s as u64);
                *entry = gauge_transform(&geom, &config, v).code() as u32;
            }
            vertex_perm.push(table);
        }
        Ok(EdOperator {
            geom,
            g: spec.g,
            diag,
            raise,
            vertex_perm,
        })
    }

    fn dim(&self) -> usize {
        self.diag.len()
    }

    /// H·v with H = (g²/2)Σ_ℓ[2 − P − P†] + magnetic diagonal.
    fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let half_g2 = 0.5 * self.g * self.g;
        let n_links = self.geom.n_links() as f64;
        let mut out: Vec<f64> = v
            .iter()
            .zip(&self.diag)
            .map(|(x, d)| (d + 2.0 * n_links * half_g2) * x)
            .collect();
        for table in &self.raise {
            for (s, &t) in table.iter().enumerate() {
                let t = t as usize;
                // ⟨t|P†|s⟩ = 1 when t = raise(s): P†|q⟩ = |q+1⟩.
                out[t] -= half_g2 * v[s];
                out[s] -= half_g2 * v[t];
            }
        }
        out
    }

    /// Group-average projection onto the Θ(x) = 1 sector.
    fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut cur = v.to_vec();
        for table in &self.vertex_perm {
            let mut acc = cur.clone();
            let mut image = cur.clone();
            for _ in 1..self.geom.n {
                let mut next = vec![0.0; image.len()];
                for (s, &t) in table.iter().enumerate() {
                    next[t as usize] += image[s];
                }
                for (a, b) in acc.iter_mut().zip(&next) {
                    *a += b;
                }
                image = next;
            }
            for a in acc.iter_mut() {
                *a /= self.geom.n as f64;
            }
            cur = acc;
        }
        cur
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Ground energy of the Z_N Hamiltonian in the gauge-invariant sector
/// via Lanczos with full reorthogonalization and per-step reprojection.
pub fn ed_ground_energy(spec: &EdSpec) -> Result<EdResult, Error> {
    let op = EdOperator::build(spec)?;
    let dim = op.dim();

    // Deterministic pseudo-random start vector, projected into the sector.
    let mut v0: Vec<f64> = (0..dim)
        .map(|i| {
            let x = (i as f64 * 0.7390851332151607 + 0.25).sin();
            0.5 + x
        })
        .collect();
    v0 = op.project(&v0);
    let n0 = norm(&v0);
    if n0 < 1e-12 {
        return Err(Error::Linalg("projected start vector vanished".into()));
    }
    for x in v0.iter_mut() {
        *x /= n0;
    }

    let max_iter = 180.min(dim);
    let mut basis: Vec<Vec<f64>> = vec![v0];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;

    for j in 0..max_iter {
        let w0 = op.matvec(&basis[j]);
        let mut w = op.project(&w0);
        let alpha = dot(&basis[j], &w);
        alphas.push(alpha);
        for (wi, bi) in w.iter_mut().zip(&basis[j]) {
            *wi -= alpha * bi;
        }
        if j > 0 {
            let beta_prev = betas[j - 1];
            for (wi, bi) in w.iter_mut().zip(&basis[j - 1]) {
                *wi -= beta_prev * bi;
            }
        }
        // Full reorthogonalization.
        for b in &basis {
            let c = dot(&w, b);
            for (wi, bi) in w.iter_mut().zip(b) {
                *wi -= c * bi;
            }
        }
        let beta = norm(&w);

        // Ritz values of the current tridiagonal.
        let k = alphas.len();
        let mut tri = nalgebra::DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            tri[(i, i)] = alphas[i];
            if i + 1 < k {
                tri[(i, i + 1)] = betas[i];
                tri[(i + 1, i)] = betas[i];
            }
        }
        let eig = tri.symmetric_eigen();
        let (mut min_idx, mut min_val) = (0, f64::INFINITY);
        for (i, &val) in eig.eigenvalues.iter().enumerate() {
            if val < min_val {
                min_val = val;
                min_idx = i;
            }
        }
        // Ritz vector in the full space.
        let mut ritz = vec![0.0; dim];
        for (i, b) in basis.iter().enumerate() {
            let c = eig.eigenvectors[(i, min_idx)];
            for (ri, bi) in ritz.iter_mut().zip(b) {
                *ri += c * bi;
            }
        }
        let hr = op.matvec(&ritz);
        let residual = {
            let mut acc = 0.0;
            for (h, r) in hr.iter().zip(&ritz) {
                acc += (h - min_val * r).powi(2);
            }
            acc.sqrt()
        };
        best = Some((min_val, ritz));
        if residual <= 1e-9 {
            let (energy, ground) = best.unwrap();
            let sector_dim = sector_dimension(&op);
            return Ok(EdResult {
                energy,
                sector_dim,
                residual,
                ground,
            });
        }
        if beta < 1e-13 {
            break;
        }
        betas.push(beta);
        let next: Vec<f64> = w.iter().map(|x| x / beta).collect();
        basis.push(next);
    }

    let (energy, ground) = best.ok_or(Error::NoConvergence { residual: f64::NAN })?;
    let hr = op.matvec(&ground);
    let mut acc = 0.0;
    for (h, r) in hr.iter().zip(&ground) {
        acc += (h - energy * r).powi(2);
    }
    let residual = acc.sqrt();
    if residual > 1e-9 {
        return Err(Error::NoConvergence { residual });
    }
    let sector_dim = sector_dimension(&op);
    Ok(EdResult {
        energy,
        sector_dim,
        residual,
        ground,
    })
}

/// Dimension of the invariant sector: the gauge group acts freely on the
/// configuration basis, so each orbit carries exactly one invariant state.
fn sector_dimension(op: &EdOperator) -> usize {
    let n_states = op.dim();
    let mut visited = vec![false; n_states];
    let mut count = 0;
    for code in 0..n_states {
        if visited[code] {
            continue;
        }
        count += 1;
        let mut frontier = vec![code];
        visited[code] = true;
        while let Some(c) = frontier.pop() {
            for table in &op.vertex_perm {
                let t = table[c] as usize;
                if !visited[t] {
                    visited[t] = true;
                    frontier.push(t);
                }
            }
        }
    }
    count
}

/// Apply Θ(x) − 1 to a vector and report the norm, for Gauss-law checks.
pub fn gauss_law_residual(spec: &EdSpec, state: &[f64]) -> Result<f64, Error> {
    let op = EdOperator::build(spec)?;
    let mut worst = 0.0f64;
    for table in &op.vertex_perm {
        let mut image = vec![0.0; state.len()];
        for (s, &t) in table.iter().enumerate() {
            image[t as usize] += state[s];
        }
        let mut acc = 0.0;
        for (a, b) in image.iter().zip(state) {
            acc += (a - b).powi(2);
        }
        worst = worst.max(acc.sqrt());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::LayerParams;

    #[test]
    fn toy_amplitude_trivial_case() {
        let toy = ToyRing::new(3, 0.0);
        let amp = toy.amplitude(0, 0).unwrap();
        assert!((amp - Complex64::ONE).norm() < 1e-13);
        assert!(amp.re > 0.0 && amp.im.abs() < 1e-14);
    }

    #[test]
    fn toy_norm_pipeline_matches_fock_absolutely() {
        let toy = ToyRing::new(3, 0.45);
        for q0 in 0..3u8 {
            for q1 in 0..3u8 {
                let amp = toy.amplitude(q0, q1).unwrap();
                let fock = amp.norm_sqr();
                let pipe = toy.norm_sq_pipeline(q0, q1).unwrap();
                assert!(
                    (pipe - fock).abs() < 1e-10 * fock.max(1e-12),
                    "(q0,q1)=({q0},{q1}): pipeline {pipe}, Fock {fock}"
                );
                let overlap = toy.norm_sq_overlap_route(q0, q1).unwrap();
                assert!(
                    (overlap.re - fock).abs() < 1e-10 * fock.max(1e-12)
                        && overlap.im.abs() < 1e-10,
                    "(q0,q1)=({q0},{q1}): overlap route {overlap}, Fock {fock}"
                );
            }
        }
    }

    #[test]
    fn toy_electric_estimator_matches_fock_ratio() {
        // The decisive convention test: per-configuration value of the
        // Pfaffian estimator against the literal amplitude ratio
        // Ψ*(q₀−1, q₁)Ψ(q₀, q₁)/|Ψ(q₀, q₁)|², sign and phase included.
        let toy = ToyRing::new(3, 0.45);
        for q0 in 0..3u8 {
            for q1 in 0..3u8 {
                let amp = toy.amplitude(q0, q1).unwrap();
                let lowered = toy.amplitude((q0 + 2) % 3, q1).unwrap();
                let want = lowered.conj() * amp / amp.norm_sqr();
                let got = toy.f_el_pipeline(q0, q1).unwrap();
                assert!(
                    (got - want).norm() < 1e-9 * want.norm().max(1e-9),
                    "(q0,q1)=({q0},{q1}): pipeline {got}, Fock {want}"
                );
                let overlap = toy.f_el_overlap_route(q0, q1).unwrap();
                assert!(
                    (overlap - want).norm() < 1e-9 * want.norm().max(1e-9),
                    "(q0,q1)=({q0},{q1}): overlap route {overlap}, Fock {want}"
                );
            }
        }
    }

    #[test]
    fn gray_code_walks_all_configs_one_link_at_a_time() {
        let n = 3u64;
        let m = 4usize;
        let mut seen = std::collections::HashSet::new();
        let mut prev = gray_digits(0, n, m);
        seen.insert(prev.clone());
        for t in 1..n.pow(m as u32) {
            let cur = gray_digits(t, n, m);
            let diffs: Vec<usize> = (0..m).filter(|&i| cur[i] != prev[i]).collect();
            assert_eq!(diffs.len(), 1, "step {t}");
            let i = diffs[0];
            assert_eq!((prev[i] + 1) % 3, cur[i], "step {t} is a +1 shift");
            seen.insert(cur.clone());
            prev = cur;
        }
        assert_eq!(seen.len(), 81);
    }

    #[test]
    fn orbit_table_counts_sector_dimension() {
        let geom = LatticeGeom::new(2, 3).unwrap();
        let table = build_orbit_table(&geom).unwrap();
        assert_eq!(table.reps.len(), 243);
        let total: f64 = table.reps.iter().map(|&(_, m)| m).sum();
        assert_eq!(total as usize, 6561);
        assert!(table.reps.iter().all(|&(_, m)| m as usize == 27));
    }

    #[test]
    fn ec_full_and_orbit_agree() {
        let geom = LatticeGeom::new(2, 3).unwrap();
        let blocks = LinkBlockCache::new(3);
        let ansatz = Ansatz::new(geom, vec![LayerParams { y: 0.3, z: 0.2 }]).unwrap();
        let orbits = build_orbit_table(&geom).unwrap();
        let g = 1.2;
        let full = exact_contract(&geom, &ansatz, &blocks, g, true).unwrap();
        let fast = exact_contract_orbits(&geom, &ansatz, &blocks, g, true, &orbits).unwrap();
        assert!(
            (full.energy - fast.energy).abs() < 1e-8 * full.energy.abs().max(1.0),
            "full {} vs orbit {}",
            full.energy,
            fast.energy
        );
        let gf = full.grad.unwrap();
        let go = fast.grad.unwrap();
        for (a, b) in gf.iter().zip(&go) {
            assert!((a - b).abs() < 1e-7 * a.abs().max(1.0));
        }
    }

    #[test]
    fn flat_state_energy_density_is_one_over_g_squared() {
        let geom = LatticeGeom::new(2, 3).unwrap();
        let blocks = LinkBlockCache::new(3);
        let orbits = build_orbit_table(&geom).unwrap();
        for layers in [1usize, 2] {
            let ansatz =
                Ansatz::new(geom, vec![LayerParams { y: 0.0, z: 0.0 }; layers]).unwrap();
            for g in [0.7, 1.0, 2.3] {
                let ec =
                    exact_contract_orbits(&geom, &ansatz, &blocks, g, false, &orbits).unwrap();
                assert!(
                    (ec.energy_density - 1.0 / (g * g)).abs() < 1e-10,
                    "layers {layers}, g {g}: density {}",
                    ec.energy_density
                );
                assert!((ec.mean_f_el - Complex64::ONE).norm() < 1e-10);
                assert!(ec.mean_f_w.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn ed_sector_and_strong_coupling_limit() {
        let spec = EdSpec {
            l: 2,
            n: 3,
            g: 100.0,
        };
        let result = ed_ground_energy(&spec).unwrap();
        assert_eq!(result.sector_dim, 243);
        assert!(result.residual <= 1e-9);
        // Strong coupling: the electric vacuum dominates; E₀ ≪ g².
        assert!(result.energy.abs() < 1e-3 * spec.g * spec.g);
        assert!(result.energy >= 0.0);
        // Gauss law on the ground vector.
        let gauss = gauss_law_residual(&spec, &result.ground).unwrap();
        assert!(gauss < 1e-10, "Gauss-law residual {gauss}");
    }

    #[test]
    fn ed_variational_bound_holds() {
        let geom = LatticeGeom::new(2, 3).unwrap();
        let blocks = LinkBlockCache::new(3);
        let orbits = build_orbit_table(&geom).unwrap();
        let ansatz = Ansatz::new(geom, vec![LayerParams { y: 0.12, z: 0.08 }]).unwrap();
        for g in [0.6, 1.0, 1.8] {
            let ec = exact_contract_orbits(&geom, &ansatz, &blocks, g, false, &orbits).unwrap();
            let ed = ed_ground_energy(&EdSpec { l: 2, n: 3, g }).unwrap();
            assert!(
                ec.energy >= ed.energy - 1e-9,
                "g={g}: EC {} < ED {}",
                ec.energy,
                ed.energy
            );
        }
    }
}
