//! Silent-data-corruption laboratory: the Hessenberg bound detector and a single-shot
//! multiplicative fault injector for the orthogonalization coefficients.
//!
//! Every Arnoldi coefficient satisfies `|h_{i,j}| ≤ ‖A‖₂ ≤ ‖A‖_F`, whatever the orthogonalization
//! or preconditioner, so a value above `‖A‖_F` (or a non-finite one) cannot come from correct
//! arithmetic. Values inside the bound are indistinguishable from valid ones.

use std::fmt;

use crate::sparse::SparseMatrix;

/// Slack applied to `‖A‖_F` when building a detector from a matrix, in units of roundoff.
pub const BOUND_SLACK_ULPS: f64 = 64.0;

/// Which Hessenberg entry of inner iteration `j` a value belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Entry {
    /// `h_{i,j}` from MGS step `i` (1-based).
    Projection(usize),
    /// `h_{j+1,j} = ‖v‖`.
    Norm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Location {
    /// 1-based index of the inner solve (the outer iteration that invoked it).
    pub solve: usize,
    /// 1-based Arnoldi iteration `j` within that solve.
    pub iteration: usize,
    pub entry: Entry,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.entry {
            Entry::Projection(i) => write!(f, "solve {} iter {} h[{},{}]", self.solve, self.iteration, i, self.iteration),
            Entry::Norm => write!(f, "solve {} iter {} norm", self.solve, self.iteration),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorAction {
    /// Record the event and keep using the value.
    ReportOnly,
    /// Stop the inner solve and hand back its last completed iterate.
    AbortInner,
    /// Stop the whole solve.
    Halt,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub bound: f64,
    pub action: DetectorAction,
}

impl DetectorConfig {
    /// Panics unless `bound` is finite and positive.
    pub fn new(bound: f64, action: DetectorAction) -> Self {
        assert!(bound.is_finite() && bound > 0.0, "detector bound must be finite and positive, got {bound}");
        Self { bound, action }
    }

    /// `‖A‖_F · (1 + 64ε)`.
    pub fn for_matrix(a: &SparseMatrix, action: DetectorAction) -> Self {
        Self::new(a.frobenius_norm() * (1.0 + BOUND_SLACK_ULPS * f64::EPSILON), action)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorEvent {
    pub location: Location,
    pub observed: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Pass,
    Fault(DetectorEvent),
}

/// Passes iff `value` is finite and `|value| ≤ bound`.
pub fn check(cfg: &DetectorConfig, value: f64, location: Location) -> Verdict {
    if value.is_finite() && value.abs() <= cfg.bound {
        Verdict::Pass
    } else {
        Verdict::Fault(DetectorEvent { location, observed: value, bound: cfg.bound })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultClass {
    /// `h × 10^150`
    Class1,
    /// `h × 10^-0.5`
    Class2,
    /// `h × 10^-300`
    Class3,
}

impl FaultClass {
    pub const ALL: [FaultClass; 3] = [FaultClass::Class1, FaultClass::Class2, FaultClass::Class3];

    pub fn multiplier(self) -> f64 {
        match self {
            FaultClass::Class1 => 1e150,
            FaultClass::Class2 => 10f64.powf(-0.5),
            FaultClass::Class3 => 1e-300,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            FaultClass::Class1 => 1,
            FaultClass::Class2 => 2,
            FaultClass::Class3 => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(FaultClass::Class1),
            2 => Some(FaultClass::Class2),
            3 => Some(FaultClass::Class3),
            _ => None,
        }
    }
}

/// Which MGS step of the target iteration is corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MgsPosition {
    /// `i = 1`
    First,
    /// `i = j`
    Last,
}

impl MgsPosition {
    pub fn as_str(self) -> &'static str {
        match self {
            MgsPosition::First => "first",
            MgsPosition::Last => "last",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FaultSpec {
    pub target_inner_solve: usize,
    pub target_inner_iteration: usize,
    pub mgs_position: MgsPosition,
    pub fault_class: FaultClass,
}

impl FaultSpec {
    pub fn matches(&self, loc: &Location) -> bool {
        let step = match loc.entry {
            Entry::Projection(i) => i,
            Entry::Norm => return false,
        };
        let want = match self.mgs_position {
            MgsPosition::First => 1,
            MgsPosition::Last => loc.iteration,
        };
        loc.solve == self.target_inner_solve && loc.iteration == self.target_inner_iteration && step == want
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiredRecord {
    pub location: Location,
    pub original: f64,
    pub injected: f64,
}

/// Fires a single transient fault, then disarms for good.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultInjector {
    spec: FaultSpec,
    fired: Option<FiredRecord>,
}

impl FaultInjector {
    pub fn new(spec: FaultSpec) -> Self {
        Self { spec, fired: None }
    }

    pub fn spec(&self) -> &FaultSpec {
        &self.spec
    }

    pub fn armed(&self) -> bool {
        self.fired.is_none()
    }

    pub fn fired(&self) -> Option<&FiredRecord> {
        self.fired.as_ref()
    }

    /// Returns the possibly corrupted value of `h` computed at `location`.
    pub fn maybe_inject(&mut self, h: f64, location: Location) -> f64 {
        if self.fired.is_some() || !self.spec.matches(&location) {
            return h;
        }
        let injected = h * self.spec.fault_class.multiplier();
        self.fired = Some(FiredRecord { location, original: h, injected });
        injected
    }
}
