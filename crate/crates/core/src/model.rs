//! Physical model: parameters, the rotating-frame Hamiltonian, collapse
//! channels, the single-excitation matrix and the Raman dark state.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use crate::linalg::eigenvalues;
use crate::operator::{
    annihilation, coherent_state, embed, transition, Level, Operator, SpaceLayout, StateVector,
};
use crate::{Error, Result, C64, I, ONE, ZERO};

/// Mirror fraction sums may exceed one by this much before being rejected.
const FRACTION_SLACK: f64 = 1e-12;

/// All model parameters. Rates, detunings and drive strengths are in units
/// of `gamma_b` once [`SwitchParams::validated`] has been applied.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchParams {
    pub g_a: f64,
    pub g_b: f64,
    pub kappa_a: f64,
    pub kappa_b: f64,
    pub kappa_a_in_frac: f64,
    pub kappa_a_out_frac: f64,
    pub kappa_b_in_frac: f64,
    pub kappa_b_out_frac: f64,
    pub gamma_a: f64,
    pub gamma_b: f64,
    pub theta_a: f64,
    pub theta_b: f64,
    /// Excited-state detuning `Delta`.
    pub delta_cap: f64,
    /// Raman detuning `delta`.
    pub delta_small: f64,
    pub eps_a: f64,
    pub eps_b: f64,
    pub eps_c: f64,
    /// Frequency offset `Omega` of the c-field from the b-drive.
    pub omega_cap: f64,
    pub n_a: usize,
    pub n_b: usize,
}

impl SwitchParams {
    /// Operating point of the steady-state contrast study (a-drive strength
    /// when on).
    pub fn table1() -> Self {
        Self {
            g_a: 1.3784,
            g_b: 10.0,
            kappa_a: 1.0,
            kappa_b: 1.0,
            kappa_a_in_frac: 0.5,
            kappa_a_out_frac: 0.5,
            kappa_b_in_frac: 0.5,
            kappa_b_out_frac: 0.5,
            gamma_a: 0.2,
            gamma_b: 1.0,
            theta_a: -0.0915,
            theta_b: 0.0,
            delta_cap: 2.8520,
            delta_small: 11.5916,
            eps_a: 0.1,
            eps_b: 0.1f64.sqrt(),
            eps_c: 0.0,
            omega_cap: 0.0,
            n_a: 5,
            n_b: 5,
        }
    }

    /// Set-reset relay operating point.
    pub fn relay() -> Self {
        Self {
            g_a: 1.57,
            g_b: 40.0,
            theta_a: -0.0565,
            delta_cap: 0.208,
            delta_small: 40.1,
            eps_c: 0.1,
            omega_cap: 40.0,
            n_a: 4,
            n_b: 4,
            ..Self::table1()
        }
    }

    pub fn layout(&self) -> Result<SpaceLayout> {
        SpaceLayout::switch(self.n_a, self.n_b)
    }

    pub fn kappa_a_in(&self) -> f64 {
        self.kappa_a_in_frac * self.kappa_a
    }

    pub fn kappa_a_out(&self) -> f64 {
        self.kappa_a_out_frac * self.kappa_a
    }

    pub fn kappa_b_in(&self) -> f64 {
        self.kappa_b_in_frac * self.kappa_b
    }

    pub fn kappa_b_out(&self) -> f64 {
        self.kappa_b_out_frac * self.kappa_b
    }

    /// Checks ranges and rescales every rate so that `gamma_b = 1`.
    pub fn validated(&self) -> Result<Self> {
        let named = [
            ("g_a", self.g_a),
            ("g_b", self.g_b),
            ("kappa_a", self.kappa_a),
            ("kappa_b", self.kappa_b),
            ("kappa_a_in_frac", self.kappa_a_in_frac),
            ("kappa_a_out_frac", self.kappa_a_out_frac),
            ("kappa_b_in_frac", self.kappa_b_in_frac),
            ("kappa_b_out_frac", self.kappa_b_out_frac),
            ("gamma_a", self.gamma_a),
            ("gamma_b", self.gamma_b),
            ("eps_a", self.eps_a),
            ("eps_b", self.eps_b),
            ("eps_c", self.eps_c),
        ];
        for (name, v) in named {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("theta_a", self.theta_a),
            ("theta_b", self.theta_b),
            ("delta_cap", self.delta_cap),
            ("delta_small", self.delta_small),
            ("omega_cap", self.omega_cap),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite, got {v}"
                )));
            }
        }
        for (mode, fin, fout) in [
            ("a", self.kappa_a_in_frac, self.kappa_a_out_frac),
            ("b", self.kappa_b_in_frac, self.kappa_b_out_frac),
        ] {
            if fin > 1.0 || fout > 1.0 || fin + fout > 1.0 + FRACTION_SLACK {
                return Err(Error::InvalidArgument(format!(
                    "mirror fractions of mode {mode} sum to {} > 1",
                    fin + fout
                )));
            }
        }
        if self.gamma_b == 0.0 {
            return Err(Error::InvalidArgument(
                "gamma_b sets the unit and must be positive".into(),
            ));
        }
        if self.n_a == 0 || self.n_b == 0 {
            return Err(Error::InvalidDimension(
                "Fock cutoffs must be at least 1".into(),
            ));
        }
        let s = 1.0 / self.gamma_b;
        Ok(Self {
            g_a: self.g_a * s,
            g_b: self.g_b * s,
            kappa_a: self.kappa_a * s,
            kappa_b: self.kappa_b * s,
            gamma_a: self.gamma_a * s,
            gamma_b: 1.0,
            theta_a: self.theta_a * s,
            theta_b: self.theta_b * s,
            delta_cap: self.delta_cap * s,
            delta_small: self.delta_small * s,
            eps_a: self.eps_a * s,
            eps_b: self.eps_b * s,
            eps_c: self.eps_c * s,
            omega_cap: self.omega_cap * s,
            ..self.clone()
        })
    }

    pub fn with_cutoffs(&self, n_a: usize, n_b: usize) -> Self {
        Self {
            n_a,
            n_b,
            ..self.clone()
        }
    }

    pub fn get(&self, name: ParamName) -> f64 {
        match name {
            ParamName::ThetaA => self.theta_a,
            ParamName::ThetaB => self.theta_b,
            ParamName::GA => self.g_a,
            ParamName::GB => self.g_b,
            ParamName::DeltaSmall => self.delta_small,
            ParamName::DeltaCap => self.delta_cap,
            ParamName::GammaA => self.gamma_a,
            ParamName::Kappa => self.kappa_b,
        }
    }

    /// Sets one parameter. `Kappa` sets both cavity rates and rescales the
    /// drive strengths by `sqrt(kappa)` so that the incoming photon fluxes
    /// stay fixed.
    pub fn set(&mut self, name: ParamName, value: f64) {
        match name {
            ParamName::ThetaA => self.theta_a = value,
            ParamName::ThetaB => self.theta_b = value,
            ParamName::GA => self.g_a = value,
            ParamName::GB => self.g_b = value,
            ParamName::DeltaSmall => self.delta_small = value,
            ParamName::DeltaCap => self.delta_cap = value,
            ParamName::GammaA => self.gamma_a = value,
            ParamName::Kappa => {
                let ra = if self.kappa_a > 0.0 {
                    (value / self.kappa_a).sqrt()
                } else {
                    1.0
                };
                let rb = if self.kappa_b > 0.0 {
                    (value / self.kappa_b).sqrt()
                } else {
                    1.0
                };
                self.eps_a *= ra;
                self.eps_b *= rb;
                self.eps_c *= rb;
                self.kappa_a = value;
                self.kappa_b = value;
            }
        }
    }

    pub fn with(&self, name: ParamName, value: f64) -> Self {
        let mut p = self.clone();
        p.set(name, value);
        p
    }
}

/// Parameters addressable by the optimizer and sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamName {
    ThetaA,
    ThetaB,
    GA,
    GB,
    DeltaSmall,
    DeltaCap,
    GammaA,
    /// `kappa_a = kappa_b` with fixed input fluxes.
    Kappa,
}

impl ParamName {
    pub const ALL: [ParamName; 8] = [
        ParamName::ThetaA,
        ParamName::ThetaB,
        ParamName::GA,
        ParamName::GB,
        ParamName::DeltaSmall,
        ParamName::DeltaCap,
        ParamName::GammaA,
        ParamName::Kappa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::ThetaA => "theta_a",
            ParamName::ThetaB => "theta_b",
            ParamName::GA => "g_a",
            ParamName::GB => "g_b",
            ParamName::DeltaSmall => "delta_small",
            ParamName::DeltaCap => "delta_cap",
            ParamName::GammaA => "gamma_a",
            ParamName::Kappa => "kappa",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter name `{s}`")))
    }
}

/// Which control fields are on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DriveState {
    pub a_on: bool,
    pub c_on: bool,
}

impl DriveState {
    pub const OFF: DriveState = DriveState {
        a_on: false,
        c_on: false,
    };
    pub const A_ON: DriveState = DriveState {
        a_on: true,
        c_on: false,
    };
    pub const C_ON: DriveState = DriveState {
        a_on: false,
        c_on: true,
    };
}

/// Operators of the composite space, built once per cutoff pair.
#[derive(Debug, Clone)]
pub struct SwitchOperators {
    pub layout: SpaceLayout,
    pub a: Operator,
    pub b: Operator,
    /// `|G><E|`
    pub sigma_g: Operator,
    /// `|H><E|`
    pub sigma_h: Operator,
    pub proj_g: Operator,
    pub proj_h: Operator,
    pub proj_e: Operator,
    pub num_a: Operator,
    pub num_b: Operator,
}

impl SwitchOperators {
    pub fn new(n_a: usize, n_b: usize) -> Result<Self> {
        let layout = SpaceLayout::switch(n_a, n_b)?;
        let a = embed(&annihilation(n_a)?, 1, &layout)?;
        let b = embed(&annihilation(n_b)?, 2, &layout)?;
        let lam = |to, from| embed(&transition(to, from), 0, &layout);
        let num_a = &a.adjoint() * &a;
        let num_b = &b.adjoint() * &b;
        Ok(Self {
            sigma_g: lam(Level::G, Level::E)?,
            sigma_h: lam(Level::H, Level::E)?,
            proj_g: lam(Level::G, Level::G)?,
            proj_h: lam(Level::H, Level::H)?,
            proj_e: lam(Level::E, Level::E)?,
            num_a,
            num_b,
            a,
            b,
            layout,
        })
    }

    pub fn for_params(params: &SwitchParams) -> Result<Self> {
        Self::new(params.n_a, params.n_b)
    }

    pub fn projector(&self, level: Level) -> &Operator {
        match level {
            Level::G => &self.proj_g,
            Level::H => &self.proj_h,
            Level::E => &self.proj_e,
        }
    }
}

/// `H(t) = static + e^{-i Omega t} X + e^{i Omega t} X^dagger`.
#[derive(Debug, Clone)]
pub struct HamiltonianParts {
    pub static_part: Operator,
    /// `(X, Omega)` when the c-field is on.
    pub modulated: Option<(Operator, f64)>,
}

impl HamiltonianParts {
    pub fn at(&self, t: f64) -> Operator {
        match &self.modulated {
            None => self.static_part.clone(),
            Some((x, omega)) => {
                let f = C64::new(0.0, -omega * t).exp();
                let xd = x.adjoint();
                &(&self.static_part + &x.scale(f)) + &xd.scale(f.conj())
            }
        }
    }
}

/// `i c (A^dagger - A)` with real `c`.
fn drive_term(op: &Operator, strength: f64) -> Operator {
    (&op.adjoint() - op).scale(I * strength)
}

pub fn hamiltonian_parts(
    params: &SwitchParams,
    ops: &SwitchOperators,
    drives: DriveState,
) -> Result<HamiltonianParts> {
    ops.layout.ensure_same(&params.layout()?)?;
    let p = params;
    let r = |x: f64| C64::new(x, 0.0);
    let mut h = &ops.num_a.scale(r(-p.theta_a)) + &ops.num_b.scale(r(-p.theta_b));
    h = &h + &ops.proj_e.scale(r(p.delta_cap));
    h = &h + &ops.proj_g.scale(r(p.theta_b));
    h = &h + &ops.proj_h.scale(r(p.theta_a + p.delta_small));
    // i g (a^dagger sigma - a sigma^dagger)
    let jc = |mode: &Operator, sigma: &Operator, g: f64| {
        let up = &mode.adjoint() * sigma;
        (&up - &up.adjoint()).scale(I * g)
    };
    h = &h + &jc(&ops.a, &ops.sigma_h, p.g_a);
    h = &h + &jc(&ops.b, &ops.sigma_g, p.g_b);
    if drives.a_on {
        h = &h + &drive_term(&ops.a, p.eps_a);
    }
    h = &h + &drive_term(&ops.b, p.eps_b);
    let modulated = if drives.c_on && p.eps_c != 0.0 {
        Some((ops.b.adjoint().scale(I * p.eps_c), p.omega_cap))
    } else {
        None
    };
    Ok(HamiltonianParts {
        static_part: h,
        modulated,
    })
}

/// Rotating-frame Hamiltonian at time `t` (the time only matters with the
/// c-field on).
pub fn hamiltonian(params: &SwitchParams, drives: DriveState, t: f64) -> Result<Operator> {
    let ops = SwitchOperators::for_params(params)?;
    Ok(hamiltonian_parts(params, &ops, drives)?.at(t))
}

/// Decay channels. The mirror-resolved list splits each cavity decay into
/// input mirror, output mirror and residual loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    /// `E -> H` spontaneous emission.
    EmitterH,
    /// `E -> G` spontaneous emission.
    EmitterG,
    CavityA,
    CavityB,
    AIn,
    AOut,
    ALoss,
    BIn,
    BOut,
    BLoss,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::EmitterH => "emitter_h",
            Channel::EmitterG => "emitter_g",
            Channel::CavityA => "cavity_a",
            Channel::CavityB => "cavity_b",
            Channel::AIn => "a_in",
            Channel::AOut => "a_out",
            Channel::ALoss => "a_loss",
            Channel::BIn => "b_in",
            Channel::BOut => "b_out",
            Channel::BLoss => "b_loss",
        }
    }

    /// Photons leaving through an output mirror.
    pub fn is_transmitted(self) -> bool {
        matches!(self, Channel::AOut | Channel::BOut)
    }
}

#[derive(Debug, Clone)]
pub struct Collapse {
    pub channel: Channel,
    pub op: Operator,
}

pub fn collapse_operators(params: &SwitchParams, mirror_resolved: bool) -> Result<Vec<Collapse>> {
    collapse_operators_with(
        params,
        &SwitchOperators::for_params(params)?,
        mirror_resolved,
    )
}

/// Zero-rate channels are omitted.
pub fn collapse_operators_with(
    params: &SwitchParams,
    ops: &SwitchOperators,
    mirror_resolved: bool,
) -> Result<Vec<Collapse>> {
    ops.layout.ensure_same(&params.layout()?)?;
    let p = params;
    let mut out = Vec::new();
    let mut push = |channel, op: &Operator, rate: f64| {
        if rate > 0.0 {
            out.push(Collapse {
                channel,
                op: op.scale(C64::new((2.0 * rate).sqrt(), 0.0)),
            });
        }
    };
    push(Channel::EmitterH, &ops.sigma_h, p.gamma_a);
    push(Channel::EmitterG, &ops.sigma_g, p.gamma_b);
    if mirror_resolved {
        for (mode, kappa, fin, fout, chans) in [
            (
                &ops.a,
                p.kappa_a,
                p.kappa_a_in_frac,
                p.kappa_a_out_frac,
                [Channel::AIn, Channel::AOut, Channel::ALoss],
            ),
            (
                &ops.b,
                p.kappa_b,
                p.kappa_b_in_frac,
                p.kappa_b_out_frac,
                [Channel::BIn, Channel::BOut, Channel::BLoss],
            ),
        ] {
            let loss = (1.0 - fin - fout).max(0.0);
            push(chans[0], mode, fin * kappa);
            push(chans[1], mode, fout * kappa);
            // sums within rounding of one leave no loss channel
            if loss > FRACTION_SLACK {
                push(chans[2], mode, loss * kappa);
            }
        }
    } else {
        push(Channel::CavityA, &ops.a, p.kappa_a);
        push(Channel::CavityB, &ops.b, p.kappa_b);
    }
    Ok(out)
}

/// Eq.-(7)-type block of the Hamiltonian in the basis
/// `{|G,0,1>, |H,1,0>, |E,0,0>}` and its eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleExcitation {
    pub matrix: DMatrix<C64>,
    /// Sorted by real part, then imaginary part.
    pub eigenvalues: Vec<C64>,
    pub max_imag: f64,
}

impl SingleExcitation {
    pub fn energies(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|z| z.re).collect()
    }

    /// Energies minus `offset`.
    pub fn relative_to(&self, offset: f64) -> Vec<f64> {
        self.eigenvalues.iter().map(|z| z.re - offset).collect()
    }
}

/// Largest imaginary part tolerated in the eigenvalues before a warning.
pub const EIGEN_IMAG_TOL: f64 = 1e-9;

pub fn single_excitation_matrix(params: &SwitchParams) -> Result<SingleExcitation> {
    let p = params;
    let r = |x: f64| C64::new(x, 0.0);
    #[rustfmt::skip]
    let matrix = DMatrix::from_row_slice(3, 3, &[
        ZERO, ZERO, I * p.g_b,
        ZERO, r(p.delta_small), I * p.g_a,
        -I * p.g_b, -I * p.g_a, r(p.delta_cap),
    ]);
    let eigenvalues = eigenvalues(&matrix)?;
    let max_imag = eigenvalues.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if max_imag > EIGEN_IMAG_TOL {
        log::warn!("single-excitation eigenvalues have imaginary parts up to {max_imag:.3e}");
    }
    Ok(SingleExcitation {
        matrix,
        eigenvalues,
        max_imag,
    })
}

/// Coherent amplitudes `(xi_a, xi_b)` of the driven empty modes.
pub fn empty_cavity_amplitudes(params: &SwitchParams) -> (C64, C64) {
    let p = params;
    let xi_a = C64::new(p.eps_a, 0.0) / C64::new(p.kappa_a, -p.theta_a);
    let xi_b = C64::new(p.eps_b, 0.0) / C64::new(p.kappa_b, -p.theta_b);
    (xi_a, xi_b)
}

/// Raman dark state with the a-drive on.
pub fn dark_state(params: &SwitchParams) -> Result<StateVector> {
    let p = params;
    if p.g_a == 0.0 || p.eps_a == 0.0 {
        return Err(Error::InvalidArgument(
            "dark state needs g_a != 0 and E_a != 0".into(),
        ));
    }
    let (xi_a, xi_b) = empty_cavity_amplitudes(p);
    let c_h = -(xi_b * p.g_b) / (xi_a * p.g_a);
    let mut lam = nalgebra::DVector::zeros(3);
    lam[Level::G.index()] = ONE;
    lam[Level::H.index()] = c_h;
    let lam = StateVector::new(SpaceLayout::single(3)?, lam)?.normalized()?;
    StateVector::product(&[
        lam,
        coherent_state(p.n_a, xi_a)?,
        coherent_state(p.n_b, xi_b)?,
    ])
}

/// Human-readable summary of a parameter set.
pub fn describe(params: &SwitchParams) -> String {
    format!("{params:?}")
}
