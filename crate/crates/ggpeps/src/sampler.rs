//! Metropolis sampling over gauge-field configurations with single-link
//! updates, incremental determinant ratios, binned error analysis, and
//! deterministic seeding.

use crate::ansatz::Ansatz;
use crate::error::Error;
use crate::estimators::{self, GradientSample};
use crate::galg::{CMat, UpdatableInverse};
use crate::gstate::{self, LinkBlockCache};
use crate::lattice::{staggering_sign, GaugeConfig, LatticeGeom};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Monte Carlo run settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MCConfig {
    pub warmup_steps: usize,
    pub sample_steps: usize,
    pub seed: u64,
    /// Cached factorizations are rebuilt from scratch after this many
    /// accepted updates.
    pub recompute_interval: usize,
    pub chains: usize,
    /// Measure every `thin`-th step (1 = every step).
    pub thin: usize,
    pub n_bins: usize,
}

impl Default for MCConfig {
    fn default() -> Self {
        MCConfig {
            warmup_steps: 10_000,
            sample_steps: 100_000,
            seed: 1,
            recompute_interval: 1000,
            chains: 1,
            thin: 1,
            n_bins: 50,
        }
    }
}

impl MCConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.sample_steps == 0 || self.chains == 0 || self.thin == 0 || self.n_bins < 20 {
            return Err(Error::Config(
                "MC settings must be positive with at least 20 bins".into(),
            ));
        }
        Ok(())
    }
}

/// Sampled mean with binned (jackknife) errors per component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean_re: f64,
    pub mean_im: f64,
    pub stderr_re: f64,
    pub stderr_im: f64,
    pub n_samples: usize,
    pub n_bins: usize,
    pub acceptance_rate: f64,
}

impl MCEstimate {
    pub fn mean(&self) -> Complex64 {
        Complex64::new(self.mean_re, self.mean_im)
    }
}

/// Jackknife-over-bins standard error of a real sample stream.
pub fn binned_error(samples: &[f64], n_bins: usize) -> Result<(f64, f64), Error> {
    if samples.len() < 2 * n_bins || n_bins < 2 {
        return Err(Error::Sampling(format!(
            "need at least {} samples for {} bins",
            2 * n_bins,
            n_bins
        )));
    }
    let bin_size = samples.len() / n_bins;
    let used = bin_size * n_bins;
    let bin_means: Vec<f64> = (0..n_bins)
        .map(|b| samples[b * bin_size..(b + 1) * bin_size].iter().sum::<f64>() / bin_size as f64)
        .collect();
    let total: f64 = bin_means.iter().sum();
    let mean = total / n_bins as f64;
    let nb = n_bins as f64;
    let jack: f64 = bin_means
        .iter()
        .map(|m| {
            let loo = (total - m) / (nb - 1.0);
            (loo - mean).powi(2)
        })
        .sum();
    let stderr = ((nb - 1.0) / nb * jack).sqrt();
    let _ = used;
    Ok((mean, stderr))
}

/// One Markov chain over gauge configurations for a frozen ansatz.
pub struct ChainState<'a> {
    pub geom: LatticeGeom,
    pub config: GaugeConfig,
    gamma: CMat,
    caches: Vec<UpdatableInverse>,
    rng: ChaCha12Rng,
    ansatz: &'a Ansatz,
    blocks: &'a LinkBlockCache,
    pub accepted: u64,
    pub proposed: u64,
    skipped_samples: u64,
    /// Optional restriction of proposals to a subset of links, for
    /// detailed-balance checks on small state spaces.
    proposal_links: Option<Vec<usize>>,
}

impl<'a> ChainState<'a> {
    pub fn new(
        ansatz: &'a Ansatz,
        blocks: &'a LinkBlockCache,
        seed: u64,
        recompute_interval: usize,
    ) -> Result<Self, Error> {
        let geom = ansatz.geom;
        let config = GaugeConfig::zeros(&geom);
        let gamma = gstate::assemble_gamma_in(&geom, &config, blocks).cov;
        let mut caches = Vec::with_capacity(ansatz.n_layers());
        for layer in 0..ansatz.n_layers() {
            let a = crate::ansatz::one_minus_gamma_d(&gamma, &ansatz.cache(layer).d_block);
            caches.push(UpdatableInverse::new(a, recompute_interval.max(1))?);
        }
        Ok(ChainState {
            geom,
            config,
            gamma,
            caches,
            rng: ChaCha12Rng::seed_from_u64(seed),
            ansatz,
            blocks,
            accepted: 0,
            proposed: 0,
            skipped_samples: 0,
            proposal_links: None,
        })
    }

    pub fn with_proposal_subset(mut self, links: Vec<usize>) -> Self {
        self.proposal_links = Some(links);
        self
    }

    /// One Metropolis update: choose a link, propose one of the N−1 other
    /// elements, accept with min(1, |Ψ'|²/|Ψ|²).
    pub fn metropolis_step(&mut self) -> Result<bool, Error> {
        let n_group = self.geom.n as u8;
        let link_idx = match &self.proposal_links {
            Some(subset) => subset[self.rng.random_range(0..subset.len())],
            None => self.rng.random_range(0..self.geom.n_links()),
        };
        let q_old = self.config.q[link_idx];
        let shift = 1 + self.rng.random_range(0..(n_group - 1)) as i32;
        let q_new = ((q_old as i32 + shift) % n_group as i32) as u8;
        debug_assert_ne!(q_new, q_old);
        self.proposed += 1;

        let link = self.geom.link_from_index(link_idx);
        let parity = staggering_sign(link.vertex);
        let old_block = &self.blocks.block(q_old, parity).cov;
        let new_block = &self.blocks.block(q_new, parity).cov;
        let delta = new_block - old_block;
        let rows = gstate::link_majoranas(&self.geom, link);
        let dim = self.gamma.nrows();

        // Row updates of A_i = 1 − Γ D_i and the resulting |Ψ'|²/|Ψ|².
        let mut vs = Vec::with_capacity(self.caches.len());
        let mut ratio = 1.0f64;
        for (layer, cache) in self.caches.iter().enumerate() {
            let d_block = &self.ansatz.cache(layer).d_block;
            let mut v = CMat::zeros(8, dim);
            for ii in 0..8 {
                for (jj, &sj) in rows.iter().enumerate() {
                    let dval = delta[(ii, jj)];
                    if dval != Complex64::ZERO {
                        let vblock = sj / 16;
                        let srow = sj % 16;
                        for c in 0..16 {
                            v[(ii, vblock * 16 + c)] -= dval * d_block[(srow, c)];
                        }
                    }
                }
            }
            // n_i = √det(A_i/2) is the layer's squared norm, so the
            // sampling ratio takes the square root of each det ratio.
            let det_ratio = cache.block_det_ratio(&rows, &v);
            ratio *= det_ratio.re.max(0.0).sqrt();
            vs.push(v);
        }

        let accept = ratio >= 1.0 || self.rng.random::<f64>() < ratio;
        if accept {
            for (cache, v) in self.caches.iter_mut().zip(&vs) {
                cache.apply_row_update(&rows, v)?;
            }
            gstate::set_link_block(&self.geom, &mut self.gamma, link, new_block);
            self.config.q[link_idx] = q_new;
            self.accepted += 1;
        }
        Ok(accept)
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Log of Π n_i accumulated by the incremental caches.
    pub fn cached_log_weight(&self) -> f64 {
        let dim = self.gamma.nrows() as f64;
        self.caches
            .iter()
            .map(|c| 0.5 * (c.log_det().0 - dim * crate::ansatz::LN_2))
            .sum()
    }

    /// Fresh evaluation of log Π n_i, bypassing the incremental caches.
    pub fn fresh_log_weight(&self) -> Result<f64, Error> {
        let mut total = 0.0;
        for layer in 0..self.ansatz.n_layers() {
            total += crate::ansatz::layer_log_norm(&self.gamma, self.ansatz.cache(layer))?;
        }
        Ok(total)
    }

    /// Measure all energy estimators at the current configuration,
    /// reusing the cached resolvents.
    pub fn measure(&mut self, with_grad: bool) -> Result<Option<estimators::ConfigEval>, Error> {
        let dim = self.gamma.nrows() as f64;
        let mut log_norms = Vec::with_capacity(self.caches.len());
        let mut ws: Vec<&CMat> = Vec::with_capacity(self.caches.len());
        for cache in &self.caches {
            let (log_abs, _) = cache.log_det();
            log_norms.push(0.5 * (log_abs - dim * crate::ansatz::LN_2));
            ws.push(cache.inverse());
        }
        match estimators::evaluate_with(
            &self.geom,
            &self.config,
            self.ansatz,
            self.blocks,
            &self.gamma,
            &ws,
            &log_norms,
            with_grad,
        ) {
            Ok(eval) => Ok(Some(eval)),
            Err(Error::Sampling(_)) => {
                self.skipped_samples += 1;
                Ok(None)
            }
            Err(other) => Err(other),
        }
    }
}

/// Per-bin sufficient statistics for the assembled energy and gradient.
#[derive(Debug, Clone)]
struct BinStats {
    count: f64,
    f_w: Complex64,
    f_el: Complex64,
    r: Vec<f64>,
    df: Vec<Complex64>,
    fel_r: Vec<Complex64>,
    fw_r: Vec<Complex64>,
}

impl BinStats {
    fn new(n_params: usize) -> Self {
        BinStats {
            count: 0.0,
            f_w: Complex64::ZERO,
            f_el: Complex64::ZERO,
            r: vec![0.0; n_params],
            df: vec![Complex64::ZERO; n_params],
            fel_r: vec![Complex64::ZERO; n_params],
            fw_r: vec![Complex64::ZERO; n_params],
        }
    }

    fn push(&mut self, s: &GradientSample) {
        self.count += 1.0;
        self.f_w += s.f_w;
        self.f_el += s.f_el;
        for p in 0..self.r.len() {
            self.r[p] += s.r[p];
            self.df[p] += s.df_el[p];
            self.fel_r[p] += s.f_el * s.r[p];
            self.fw_r[p] += s.f_w * s.r[p];
        }
    }
}

/// Assembled result of an energy run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub energy: f64,
    pub energy_err: f64,
    pub energy_density: f64,
    pub energy_density_err: f64,
    pub f_el: MCEstimate,
    pub f_w: MCEstimate,
    pub grad: Vec<f64>,
    pub grad_err: Vec<f64>,
    pub acceptance_rate: f64,
    pub n_samples: usize,
}

fn assemble_energy(
    geom: &LatticeGeom,
    g: f64,
    bins: &[BinStats],
    acceptance_rate: f64,
    with_grad: bool,
) -> Result<EnergyEstimate, Error> {
    let n_params = bins[0].r.len();
    let nb = bins.len();
    let total_count: f64 = bins.iter().map(|b| b.count).sum();
    if nb < 2 || total_count < 2.0 {
        return Err(Error::Sampling("too few samples to assemble".into()));
    }
    let n_links = geom.n_links() as f64;
    let n_plaq = geom.n_plaquettes() as f64;

    // Quantities as functions of a subset of bins.
    let eval = |skip: Option<usize>| -> (f64, Complex64, Complex64, Vec<f64>) {
        let mut count = 0.0;
        let mut f_w = Complex64::ZERO;
        let mut f_el = Complex64::ZERO;
        let mut r = vec![0.0; n_params];
        let mut df = vec![Complex64::ZERO; n_params];
        let mut fel_r = vec![Complex64::ZERO; n_params];
        let mut fw_r = vec![Complex64::ZERO; n_params];
        for (i, b) in bins.iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            count += b.count;
            f_w += b.f_w;
            f_el += b.f_el;
            for p in 0..n_params {
                r[p] += b.r[p];
                df[p] += b.df[p];
                fel_r[p] += b.fel_r[p];
                fw_r[p] += b.fw_r[p];
            }
        }
        let mean_w = f_w / count;
        let mean_el = f_el / count;
        let (energy, _) = estimators::energy_from_means(geom, g, mean_el, mean_w);
        let grad: Vec<f64> = (0..n_params)
            .map(|p| {
                let mean_r = r[p] / count;
                let d_el = df[p] / count + fel_r[p] / count - mean_el * mean_r;
                let d_w = fw_r[p] / count - mean_w * mean_r;
                n_links * 0.5 * g * g * (-2.0 * d_el.re)
                    + n_plaq / (2.0 * g * g) * (-2.0 * d_w.re)
            })
            .collect();
        (energy, mean_el, mean_w, grad)
    };

    let (energy, mean_el, mean_w, grad) = eval(None);
    let nbf = nb as f64;
    let mut var_energy = 0.0;
    let mut var_grad = vec![0.0; n_params];
    let mut var_el = (0.0, 0.0);
    let mut var_w = (0.0, 0.0);
    for i in 0..nb {
        let (e_i, el_i, w_i, g_i) = eval(Some(i));
        var_energy += (e_i - energy).powi(2);
        var_el.0 += (el_i.re - mean_el.re).powi(2);
        var_el.1 += (el_i.im - mean_el.im).powi(2);
        var_w.0 += (w_i.re - mean_w.re).powi(2);
        var_w.1 += (w_i.im - mean_w.im).powi(2);
        for p in 0..n_params {
            var_grad[p] += (g_i[p] - grad[p]).powi(2);
        }
    }
    let jack = (nbf - 1.0) / nbf;
    let energy_err = (jack * var_energy).sqrt();
    let grad_err: Vec<f64> = var_grad.iter().map(|v| (jack * v).sqrt()).collect();

    let mk_estimate = |mean: Complex64, var: (f64, f64)| MCEstimate {
        mean_re: mean.re,
        mean_im: mean.im,
        stderr_re: (jack * var.0).sqrt(),
        stderr_im: (jack * var.1).sqrt(),
        n_samples: total_count as usize,
        n_bins: nb,
        acceptance_rate,
    };

    // The assembled energy gradient must be statistically real; the
    // imaginary parts were discarded by construction (energies combine
    // real parts), so check the estimator means instead: F_el's imaginary
    // part only shifts the energy at strictly zero weight.
    let _ = with_grad;

    Ok(EnergyEstimate {
        energy,
        energy_err,
        energy_density: energy / n_plaq,
        energy_density_err: energy_err / n_plaq,
        f_el: mk_estimate(mean_el, var_el),
        f_w: mk_estimate(mean_w, var_w),
        grad,
        grad_err,
        acceptance_rate,
        n_samples: total_count as usize,
    })
}

/// Run `cfg.chains` independent chains measuring energy estimators and
/// gradients, merge their bins, and assemble the estimates. Chain c uses
/// seed `cfg.seed + c`; results are deterministic for fixed settings.
pub fn run_energy_chains(
    ansatz: &Ansatz,
    blocks: &LinkBlockCache,
    g: f64,
    cfg: &MCConfig,
    with_grad: bool,
) -> Result<EnergyEstimate, Error> {
    cfg.validate()?;
    let per_chain: Result<Vec<(Vec<BinStats>, u64, u64, u64)>, Error> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let mut chain =
                ChainState::new(ansatz, blocks, cfg.seed + c as u64, cfg.recompute_interval)?;
            let n_params = 2 * ansatz.n_layers();
            for _ in 0..cfg.warmup_steps {
                chain.metropolis_step()?;
            }
            let measured_target = cfg.sample_steps / cfg.thin;
            let bin_size = (measured_target / cfg.n_bins).max(1);
            let mut bins = vec![BinStats::new(n_params)];
            let mut _measured = 0u64;
            for step in 0..cfg.sample_steps {
                chain.metropolis_step()?;
                if step % cfg.thin == 0 {
                    if let Some(eval) = chain.measure(with_grad)? {
                        let sample: GradientSample = eval.into();
                        if bins.last().unwrap().count as usize >= bin_size {
                            bins.push(BinStats::new(n_params));
                        }
                        bins.last_mut().unwrap().push(&sample);
                        _measured += 1;
                    }
                }
            }
            Ok((bins, chain.accepted, chain.proposed, chain.skipped_samples))
        })
        .collect();
    let per_chain = per_chain?;

    let mut bins = Vec::new();
    let mut accepted = 0u64;
    let mut proposed = 0u64;
    let mut skipped = 0u64;
    let mut measured = 0u64;
    for (b, a, p, s) in per_chain {
        measured += b.iter().map(|x| x.count as u64).sum::<u64>();
        bins.extend(b);
        accepted += a;
        proposed += p;
        skipped += s;
    }
    if skipped as f64 > 1e-6 * (measured + skipped) as f64 {
        return Err(Error::Sampling(format!(
            "{skipped} of {} samples hit singular denominators",
            measured + skipped
        )));
    }
    // Drop ragged trailing bins that are much smaller than the rest.
    let max_count = bins.iter().map(|b| b.count).fold(0.0, f64::max);
    bins.retain(|b| b.count >= 0.5 * max_count);
    let acceptance = accepted as f64 / proposed.max(1) as f64;
    assemble_energy(&ansatz.geom, g, &bins, acceptance, with_grad)
}

/// Wilson-loop measurement campaign: origin-averaged estimators for each
/// requested loop shape, with online binning.
pub fn run_wilson_chains(
    ansatz: &Ansatz,
    blocks: &LinkBlockCache,
    loops: &[(usize, usize)],
    cfg: &MCConfig,
) -> Result<Vec<MCEstimate>, Error> {
    cfg.validate()?;
    let geom = ansatz.geom;
    // Precomputed signed link indices for every loop at every origin.
    let mut loop_paths: Vec<Vec<Vec<(usize, i8)>>> = Vec::with_capacity(loops.len());
    for &(r1, r2) in loops {
        let mut per_origin = Vec::with_capacity(geom.n_vertices());
        for origin in geom.vertices() {
            let path = crate::lattice::wilson_path(&geom, origin, r1, r2)?;
            per_origin.push(
                path.iter()
                    .map(|(l, s)| (geom.link_index(*l), *s))
                    .collect::<Vec<_>>(),
            );
        }
        loop_paths.push(per_origin);
    }
    let delta = 2.0 * std::f64::consts::PI / geom.n as f64;

    type WilsonBins = Vec<Vec<(Complex64, f64)>>;
    let per_chain: Result<Vec<(WilsonBins, u64, u64)>, Error> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let mut chain =
                ChainState::new(ansatz, blocks, cfg.seed + c as u64, cfg.recompute_interval)?;
            for _ in 0..cfg.warmup_steps {
                chain.metropolis_step()?;
            }
            let measured_target = cfg.sample_steps / cfg.thin;
            let bin_size = (measured_target / cfg.n_bins).max(1);
            let mut bins: WilsonBins =
                vec![vec![(Complex64::ZERO, 0.0)]; loops.len()];
            for step in 0..cfg.sample_steps {
                chain.metropolis_step()?;
                if step % cfg.thin != 0 {
                    continue;
                }
                for (li, per_origin) in loop_paths.iter().enumerate() {
                    let mut acc = Complex64::ZERO;
                    for path in per_origin {
                        let mut phase = 0.0;
                        for &(idx, sign) in path {
                            phase += sign as f64 * chain.config.q[idx] as f64 * delta;
                        }
                        acc += Complex64::from_polar(1.0, phase);
                    }
                    acc /= geom.n_vertices() as f64;
                    let bin = bins[li].last_mut().unwrap();
                    if bin.1 as usize >= bin_size {
                        bins[li].push((acc, 1.0));
                    } else {
                        bin.0 += acc;
                        bin.1 += 1.0;
                    }
                }
            }
            Ok((bins, chain.accepted, chain.proposed))
        })
        .collect();
    let per_chain = per_chain?;

    let mut accepted = 0u64;
    let mut proposed = 0u64;
    let mut merged: Vec<Vec<(Complex64, f64)>> = vec![Vec::new(); loops.len()];
    for (bins, a, p) in per_chain {
        for (li, b) in bins.into_iter().enumerate() {
            merged[li].extend(b);
        }
        accepted += a;
        proposed += p;
    }
    let acceptance = accepted as f64 / proposed.max(1) as f64;

    let mut out = Vec::with_capacity(loops.len());
    for loop_bins in merged {
        let max_count = loop_bins.iter().map(|b| b.1).fold(0.0, f64::max);
        let full: Vec<(Complex64, f64)> = loop_bins
            .into_iter()
            .filter(|b| b.1 >= 0.5 * max_count)
            .collect();
        let nb = full.len();
        if nb < 2 {
            return Err(Error::Sampling("too few bins for Wilson estimate".into()));
        }
        let total_count: f64 = full.iter().map(|b| b.1).sum();
        let total: Complex64 = full.iter().map(|b| b.0).sum();
        let mean = total / total_count;
        let nbf = nb as f64;
        let mut var = (0.0, 0.0);
        for &(s, c) in &full {
            let loo = (total - s) / (total_count - c);
            var.0 += (loo.re - mean.re).powi(2);
            var.1 += (loo.im - mean.im).powi(2);
        }
        let jack = (nbf - 1.0) / nbf;
        out.push(MCEstimate {
            mean_re: mean.re,
            mean_im: mean.im,
            stderr_re: (jack * var.0).sqrt(),
            stderr_im: (jack * var.1).sqrt(),
            n_samples: total_count as usize,
            n_bins: nb,
            acceptance_rate: acceptance,
        });
    }
    Ok(out)
}

/// Histogram of visited configuration codes (small lattices only).
pub fn run_histogram_chain(
    ansatz: &Ansatz,
    blocks: &LinkBlockCache,
    cfg: &MCConfig,
    restrict_links: Option<Vec<usize>>,
) -> Result<(Vec<u64>, f64), Error> {
    cfg.validate()?;
    let geom = ansatz.geom;
    let n_states = (geom.n as f64).powi(geom.n_links() as i32);
    if n_states > 1e7 {
        return Err(Error::TooLarge("histogram lattice too large".into()));
    }
    let n_states = n_states as usize;
    let counts_chunks: Result<Vec<(Vec<u64>, u64, u64)>, Error> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let mut chain =
                ChainState::new(ansatz, blocks, cfg.seed + c as u64, cfg.recompute_interval)?;
            if let Some(links) = &restrict_links {
                chain = chain.with_proposal_subset(links.clone());
            }
            for _ in 0..cfg.warmup_steps {
                chain.metropolis_step()?;
            }
            let mut counts = vec![0u64; n_states];
            for _ in 0..cfg.sample_steps {
                chain.metropolis_step()?;
                counts[chain.config.code() as usize] += 1;
            }
            Ok((counts, chain.accepted, chain.proposed))
        })
        .collect();
    let mut total = vec![0u64; n_states];
    let mut accepted = 0u64;
    let mut proposed = 0u64;
    for (counts, a, p) in counts_chunks? {
        for (t, c) in total.iter_mut().zip(counts) {
            *t += c;
        }
        accepted += a;
        proposed += p;
    }
    Ok((total, accepted as f64 / proposed.max(1) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::LayerParams;

    fn setup() -> (LatticeGeom, LinkBlockCache) {
        (LatticeGeom::new(2, 3).unwrap(), LinkBlockCache::new(3))
    }

    #[test]
    fn flat_state_accepts_everything() {
        let (geom, blocks) = setup();
        let ansatz = Ansatz::new(geom, vec![LayerParams { y: 0.0, z: 0.0 }]).unwrap();
        let mut chain = ChainState::new(&ansatz, &blocks, 7, 100).unwrap();
        for _ in 0..500 {
            let accepted = chain.metropolis_step().unwrap();
            assert!(accepted, "flat distribution must accept all proposals");
        }
    }

    #[test]
    fn cached_log_weight_matches_fresh_after_run() {
        let (geom, blocks) = setup();
        let ansatz = Ansatz::new(geom, vec![LayerParams { y: 0.35, z: 0.2 }]).unwrap();
        let mut chain = ChainState::new(&ansatz, &blocks, 11, 100).unwrap();
        for _ in 0..10_000 {
            chain.metropolis_step().unwrap();
        }
        let cached = chain.cached_log_weight();
        let fresh = chain.fresh_log_weight().unwrap();
        assert!(
            (cached - fresh).abs() < 1e-6 * fresh.abs().max(1.0),
            "cached {cached} vs fresh {fresh}"
        );
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let (geom, blocks) = setup();
        let ansatz = Ansatz::new(geom, vec![LayerParams { y: 0.2, z: 0.1 }]).unwrap();
        let cfg = MCConfig {
            warmup_steps: 200,
            sample_steps: 2000,
            seed: 99,
            chains: 2,
            ..Default::default()
        };
        let a = run_energy_chains(&ansatz, &blocks, 1.1, &cfg, true).unwrap();
        let b = run_energy_chains(&ansatz, &blocks, 1.1, &cfg, true).unwrap();
        assert_eq!(a.energy.to_bits(), b.energy.to_bits());
        assert_eq!(a.grad.len(), b.grad.len());
        for (x, y) in a.grad.iter().zip(&b.grad) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn binned_error_synthetic_streams() {
        // i.i.d. unit-variance stream: stderr ≈ 1/√n.
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n = 100_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                // sum of 12 uniforms − 6: mean 0, variance 1
                (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0
            })
            .collect();
        let (_, stderr) = binned_error(&samples, 200).unwrap();
        let expect = 1.0 / (n as f64).sqrt();
        assert!(
            (stderr - expect).abs() < 0.1 * expect,
            "stderr {stderr} vs {expect}"
        );

        // Constant stream → exactly zero.
        let constant = vec![2.5; 1000];
        let (mean, err) = binned_error(&constant, 20).unwrap();
        assert_eq!(mean, 2.5);
        assert_eq!(err, 0.0);

        // AR(1) stream: binned error exceeds the naive i.i.d. error.
        let rho = 0.9f64;
        let mut x = 0.0;
        let ar: Vec<f64> = (0..n)
            .map(|_| {
                let noise = (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0;
                x = rho * x + noise;
                x
            })
            .collect();
        let (_, binned) = binned_error(&ar, 50).unwrap();
        let mean_ar: f64 = ar.iter().sum::<f64>() / n as f64;
        let var: f64 = ar.iter().map(|v| (v - mean_ar).powi(2)).sum::<f64>() / n as f64;
        let naive = (var / n as f64).sqrt();
        assert!(
            binned > 2.0 * naive,
            "binned {binned} should exceed naive {naive}"
        );
    }

    #[test]
    fn binned_error_rejects_tiny_input() {
        assert!(binned_error(&[1.0, 2.0], 20).is_err());
    }

    #[test]
    fn flat_wilson_loop_consistent_with_zero() {
        let (geom, blocks) = setup();
        let ansatz = Ansatz::new(geom, vec![LayerParams { y: 0.0, z: 0.0 }]).unwrap();
        let cfg = MCConfig {
            warmup_steps: 500,
            sample_steps: 20_000,
            seed: 21,
            ..Default::default()
        };
        let est = run_wilson_chains(&ansatz, &blocks, &[(1, 1)], &cfg).unwrap();
        let e = &est[0];
        assert!((e.acceptance_rate - 1.0).abs() < 1e-12);
        assert!(e.mean_re.abs() < 3.0 * e.stderr_re.max(1e-4), "⟨W⟩ = {}", e.mean_re);
        assert!(e.mean_im.abs() < 3.0 * e.stderr_im.max(1e-4));
    }

    #[test]
    fn detailed_balance_on_two_link_subspace() {
        // Restrict proposals to two links; the chain must converge to the
        // conditional distribution ∝ |Ψ|² on the 9 remaining states.
        let (geom, blocks) = setup();
        let ansatz = Ansatz::new(geom, vec![LayerParams { y: 0.45, z: 0.3 }]).unwrap();
        let links = vec![0usize, 3];
        let cfg = MCConfig {
            warmup_steps: 2000,
            sample_steps: 300_000,
            seed: 5,
            chains: 1,
            ..Default::default()
        };
        let (counts, _) =
            run_histogram_chain(&ansatz, &blocks, &cfg, Some(links.clone())).unwrap();

        // Exact conditional weights over the 9 configurations.
        let mut weights = std::collections::HashMap::new();
        let mut total_w = 0.0;
        for qa in 0..3u8 {
            for qb in 0..3u8 {
                let mut config = GaugeConfig::zeros(&geom);
                config.q[links[0]] = qa;
                config.q[links[1]] = qb;
                let (nsq, _) = crate::ansatz::norm_sq(&geom, &config, &blocks, &ansatz).unwrap();
                weights.insert(config.code(), nsq);
                total_w += nsq;
            }
        }
        let n_total: u64 = counts.iter().sum();
        for (code, w) in weights {
            let p = w / total_w;
            let observed = counts[code as usize] as f64;
            let expected = p * n_total as f64;
            let sigma = (n_total as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (observed - expected).abs() < 4.0 * sigma,
                "code {code}: observed {observed}, expected {expected} ± {sigma}"
            );
        }
    }
}
