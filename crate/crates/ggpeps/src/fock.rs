//! Brute-force Fock-space evaluator for small fermionic systems.
//!
//! States live in the full 2ⁿ-dimensional Fock space of n Dirac modes with
//! Jordan-Wigner ordered operators (mode 0 leftmost). Every covariance
//! block used by the Gaussian machinery is generated here, so all sign and
//! phase conventions trace back to this module.
//!
//! Majorana components of Dirac mode c are γ⁽¹⁾ = c + c† and
//! γ⁽²⁾ = i(c − c†); Majorana index = 2·(mode index) + component.

use crate::error::Error;
use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;

/// Largest mode count the evaluator accepts (Fock dimension 2¹² = 4096).
pub const MAX_MODES: usize = 12;

/// A (generally unnormalized) state of `n_modes` Dirac modes.
#[derive(Debug, Clone)]
pub struct FockState {
    pub n_modes: usize,
    pub amp: Vec<Complex64>,
}

fn jw_sign(bits: usize, mode: usize) -> f64 {
    // Parity of occupied modes below `mode`.
    let mask = (1usize << mode) - 1;
    if ((bits & mask).count_ones()) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

impl FockState {
    pub fn vacuum(n_modes: usize) -> Result<Self, Error> {
        if n_modes > MAX_MODES {
            return Err(Error::Fock(format!(
                "{n_modes} modes exceeds the brute-force limit of {MAX_MODES}"
            )));
        }
        let mut amp = vec![Complex64::ZERO; 1 << n_modes];
        amp[0] = Complex64::ONE;
        Ok(FockState { n_modes, amp })
    }

    pub fn zero_like(&self) -> FockState {
        FockState {
            n_modes: self.n_modes,
            amp: vec![Complex64::ZERO; self.amp.len()],
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.amp.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn inner(&self, other: &FockState) -> Complex64 {
        assert_eq!(self.n_modes, other.n_modes);
        self.amp
            .iter()
            .zip(&other.amp)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn scale(&mut self, c: Complex64) {
        for a in &mut self.amp {
            *a *= c;
        }
    }

    pub fn add_scaled(&mut self, other: &FockState, c: Complex64) {
        for (a, b) in self.amp.iter_mut().zip(&other.amp) {
            *a += c * b;
        }
    }

    /// Apply c†_mode.
    pub fn create(&self, mode: usize) -> FockState {
        let mut out = self.zero_like();
        let bit = 1usize << mode;
        for (bits, &a) in self.amp.iter().enumerate() {
            if a != Complex64::ZERO && bits & bit == 0 {
                out.amp[bits | bit] += a * jw_sign(bits, mode);
            }
        }
        out
    }

    /// Apply c_mode.
    pub fn annihilate(&self, mode: usize) -> FockState {
        let mut out = self.zero_like();
        let bit = 1usize << mode;
        for (bits, &a) in self.amp.iter().enumerate() {
            if a != Complex64::ZERO && bits & bit != 0 {
                out.amp[bits & !bit] += a * jw_sign(bits, mode);
            }
        }
        out
    }

    /// Apply the Majorana operator with global index `2·mode + component`.
    pub fn majorana(&self, index: usize) -> FockState {
        let mode = index / 2;
        let mut out = self.create(mode);
        let ann = self.annihilate(mode);
        if index % 2 == 0 {
            // γ¹ = c + c†
            out.add_scaled(&ann, Complex64::ONE);
        } else {
            // γ² = i(c − c†)
            out.scale(-Complex64::I);
            out.add_scaled(&ann, Complex64::I);
        }
        out
    }

    /// Apply exp(Σ_k coeff_k · c†_{p_k} c†_{q_k}) by its (terminating) power
    /// series. Each term means c†_p c†_q with c†_q acting first.
    pub fn apply_pair_creation_exp(&self, terms: &[(usize, usize, Complex64)]) -> FockState {
        let mut total = self.clone();
        let mut power = self.clone();
        let max_order = self.n_modes / 2 + 1;
        for k in 1..=max_order {
            power = apply_pair_creation(&power, terms);
            if power.norm_sq() == 0.0 {
                break;
            }
            let fact: f64 = (1..=k).map(|i| i as f64).product();
            total.add_scaled(&power, Complex64::new(1.0 / fact, 0.0));
        }
        total
    }

    /// Apply exp(Σ_k coeff_k · c_{p_k} c_{q_k}), c_q acting first.
    pub fn apply_pair_annihilation_exp(&self, terms: &[(usize, usize, Complex64)]) -> FockState {
        let mut total = self.clone();
        let mut power = self.clone();
        let max_order = self.n_modes / 2 + 1;
        for k in 1..=max_order {
            power = apply_pair_annihilation(&power, terms);
            if power.norm_sq() == 0.0 {
                break;
            }
            let fact: f64 = (1..=k).map(|i| i as f64).product();
            total.add_scaled(&power, Complex64::new(1.0 / fact, 0.0));
        }
        total
    }

    /// Apply Σ_k coeff_k · c†_{p_k} c†_{q_k} once (no exponential).
    pub fn apply_pair_creation_once(&self, terms: &[(usize, usize, Complex64)]) -> FockState {
        apply_pair_creation(self, terms)
    }

    /// Apply exp(iφ n_mode).
    pub fn number_phase(&self, mode: usize, phi: f64) -> FockState {
        let mut out = self.clone();
        let bit = 1usize << mode;
        let phase = Complex64::from_polar(1.0, phi);
        for (bits, a) in out.amp.iter_mut().enumerate() {
            if bits & bit != 0 {
                *a *= phase;
            }
        }
        out
    }

    /// Project onto the vacuum of the listed modes.
    pub fn project_vacuum(&self, modes: &[usize]) -> FockState {
        let mut out = self.clone();
        let mask: usize = modes.iter().map(|&m| 1usize << m).sum();
        for (bits, a) in out.amp.iter_mut().enumerate() {
            if bits & mask != 0 {
                *a = Complex64::ZERO;
            }
        }
        out
    }

    /// Majorana covariance Γ_ab = (i/2)⟨[γ_a, γ_b]⟩ of the normalized state,
    /// together with the squared norm of the unnormalized state.
    pub fn covariance(&self) -> Result<(CMat, f64), Error> {
        let nsq = self.norm_sq();
        if nsq < 1e-300 {
            return Err(Error::Fock("zero-norm state".into()));
        }
        let m = 2 * self.n_modes;
        let gammas: Vec<FockState> = (0..m).map(|a| self.majorana(a)).collect();
        let mut cov = CMat::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                // ⟨ψ|γ_a γ_b|ψ⟩ = ⟨γ_a ψ|γ_b ψ⟩ (Majoranas are Hermitian).
                let moment = gammas[a].inner(&gammas[b]) / nsq;
                let delta = if a == b { 1.0 } else { 0.0 };
                cov[(a, b)] = Complex64::I * (moment - delta);
            }
        }
        Ok((cov, nsq))
    }

    /// Covariance of the transition operator |ket⟩⟨bra| in the Grassmann
    /// representation: Γ_ab = i(⟨bra|γ_a γ_b|ket⟩/⟨bra|ket⟩ − δ_ab).
    /// Returns the covariance and the trace ⟨bra|ket⟩.
    pub fn transition_covariance(
        ket: &FockState,
        bra: &FockState,
    ) -> Result<(CMat, Complex64), Error> {
        assert_eq!(ket.n_modes, bra.n_modes);
        let trace = bra.inner(ket);
        if trace.norm() < 1e-300 {
            return Err(Error::Fock("transition operator has zero trace".into()));
        }
        let m = 2 * ket.n_modes;
        let gk: Vec<FockState> = (0..m).map(|b| ket.majorana(b)).collect();
        let gb: Vec<FockState> = (0..m).map(|a| bra.majorana(a)).collect();
        let mut cov = CMat::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                let moment = gb[a].inner(&gk[b]) / trace;
                let delta = if a == b { 1.0 } else { 0.0 };
                cov[(a, b)] = Complex64::I * (moment - delta);
            }
        }
        Ok((cov, trace))
    }
}

fn apply_pair_creation(state: &FockState, terms: &[(usize, usize, Complex64)]) -> FockState {
    let mut out = state.zero_like();
    for &(p, q, coeff) in terms {
        if coeff == Complex64::ZERO {
            continue;
        }
        let first = state.create(q);
        let second = first.create(p);
        out.add_scaled(&second, coeff);
    }
    out
}

fn apply_pair_annihilation(state: &FockState, terms: &[(usize, usize, Complex64)]) -> FockState {
    let mut out = state.zero_like();
    for &(p, q, coeff) in terms {
        if coeff == Complex64::ZERO {
            continue;
        }
        let first = state.annihilate(q);
        let second = first.annihilate(p);
        out.add_scaled(&second, coeff);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn anticommutators_are_canonical() {
        // {γ_a, γ_b} = 2δ_ab on a random state, n = 3.
        let mut state = FockState::vacuum(3).unwrap();
        for (i, a) in state.amp.iter_mut().enumerate() {
            *a = c(0.3 + i as f64, 0.1 * i as f64);
        }
        let nsq = state.norm_sq();
        for a in 0..6 {
            for b in 0..6 {
                let ab = state.majorana(b).majorana(a);
                let ba = state.majorana(a).majorana(b);
                let mut acomm = ab;
                acomm.add_scaled(&ba, Complex64::ONE);
                let got = state.inner(&acomm) / nsq;
                let want = if a == b { 2.0 } else { 0.0 };
                assert!(
                    (got - c(want, 0.0)).norm() < 1e-12,
                    "anticommutator ({a},{b}) = {got}"
                );
            }
        }
    }

    #[test]
    fn vacuum_covariance_blocks() {
        let state = FockState::vacuum(2).unwrap();
        let (cov, nsq) = state.covariance().unwrap();
        assert!((nsq - 1.0).abs() < 1e-14);
        for mode in 0..2 {
            let i = 2 * mode;
            assert!((cov[(i, i + 1)] - c(1.0, 0.0)).norm() < 1e-13);
            assert!((cov[(i + 1, i)] - c(-1.0, 0.0)).norm() < 1e-13);
        }
        assert!((cov[(0, 2)]).norm() < 1e-13);
    }

    #[test]
    fn occupied_mode_flips_block() {
        let state = FockState::vacuum(2).unwrap().create(0);
        let (cov, _) = state.covariance().unwrap();
        assert!((cov[(0, 1)] - c(-1.0, 0.0)).norm() < 1e-13);
        // Untouched mode keeps the vacuum block.
        assert!((cov[(2, 3)] - c(1.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn pure_state_covariance_squares_to_minus_one() {
        let state = FockState::vacuum(4)
            .unwrap()
            .apply_pair_creation_exp(&[(0, 1, c(0.4, 0.0)), (2, 3, c(-0.2, 0.1))]);
        let (cov, _) = state.covariance().unwrap();
        let sq = &cov * &cov;
        let id = CMat::identity(8, 8);
        assert!((sq + id).norm() < 1e-10);
    }

    #[test]
    fn pair_exponential_matches_manual_expansion() {
        // exp(t c†_0 c†_1)|Ω⟩ = |Ω⟩ + t c†_0 c†_1 |Ω⟩
        let t = c(0.7, -0.2);
        let state = FockState::vacuum(2).unwrap().apply_pair_creation_exp(&[(0, 1, t)]);
        // c†_0 c†_1 |00⟩: create 1 first (sign +), then 0 (sign +): |11⟩.
        assert!((state.amp[0] - Complex64::ONE).norm() < 1e-14);
        assert!((state.amp[3] - t).norm() < 1e-14);
        assert!(state.amp[1].norm() < 1e-14 && state.amp[2].norm() < 1e-14);
    }

    #[test]
    fn number_phase_only_touches_occupied() {
        let state = FockState::vacuum(2)
            .unwrap()
            .apply_pair_creation_exp(&[(0, 1, Complex64::ONE)])
            .number_phase(0, std::f64::consts::FRAC_PI_2);
        assert!((state.amp[0] - Complex64::ONE).norm() < 1e-14);
        assert!((state.amp[3] - Complex64::I).norm() < 1e-14);
    }

    #[test]
    fn transition_covariance_reduces_to_state_covariance() {
        let state = FockState::vacuum(3)
            .unwrap()
            .apply_pair_creation_exp(&[(0, 2, c(0.5, 0.3))]);
        let (cov, nsq) = state.covariance().unwrap();
        let (tcov, trace) = FockState::transition_covariance(&state, &state).unwrap();
        assert!((trace.re - nsq).abs() < 1e-12);
        assert!((cov - tcov).norm() < 1e-12);
    }

    #[test]
    fn mode_limit_enforced() {
        assert!(FockState::vacuum(13).is_err());
        assert!(FockState::vacuum(12).is_ok());
    }
}
