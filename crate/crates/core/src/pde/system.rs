use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{MppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Advection,
    Diffusion,
    AdvectionDiffusion,
    Burgers,
}

impl Family {
    pub fn uses_velocity(self) -> bool {
        matches!(self, Family::Advection | Family::AdvectionDiffusion)
    }

    pub fn uses_diffusion(self) -> bool {
        !matches!(self, Family::Advection)
    }

    pub fn is_linear(self) -> bool {
        !matches!(self, Family::Burgers)
    }
}

impl std::str::FromStr for Family {
    type Err = MppError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "advection" => Ok(Family::Advection),
            "diffusion" => Ok(Family::Diffusion),
            "advection_diffusion" => Ok(Family::AdvectionDiffusion),
            "burgers" => Ok(Family::Burgers),
            other => Err(MppError::Unknown {
                kind: "PDE family",
                name: other.to_string(),
            }),
        }
    }
}

/// A coefficient that is either fixed or drawn uniformly per trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Fixed(f64),
    Range([f64; 2]),
}

impl Coefficient {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Coefficient::Fixed(x) => (x, x),
            Coefficient::Range([lo, hi]) => (lo, hi),
        }
    }

    pub fn draw<R: rand::Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Coefficient::Fixed(x) => x,
            Coefficient::Range([lo, hi]) => {
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            }
        }
    }
}

/// The coefficients a trajectory was actually generated with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// Velocity per spatial axis, in domain lengths per unit time.
    pub v: Vec<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: String,
    pub family: Family,
    /// One entry shared by every axis, or one per axis.
    pub v: Vec<Coefficient>,
    pub delta: Coefficient,
    /// Domain length of each axis.
    pub length: f64,
    /// Grid points per axis.
    pub n: usize,
    pub dims: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub fields: Vec<String>,
    pub periodic: Vec<bool>,
}

impl SystemSpec {
    /// Desk-scale defaults for the named systems: 1D, N=128, L=1 and 21
    /// snapshots (one 16-frame window plus five rollout targets). The
    /// snapshot spacing is per family so that a full trajectory at the
    /// largest diffusivity loses at most a few e-folds of its slowest mode.
    pub fn preset(name: &str) -> Result<Self> {
        let family: Family = name.parse()?;
        let (fields, delta) = match family {
            Family::Burgers => (vec!["u".to_string()], Coefficient::Range([1e-3, 1e-2])),
            _ => (vec!["psi".to_string()], Coefficient::Range([1e-3, 1.0])),
        };
        let dt = match family {
            Family::Advection | Family::Burgers => 0.01,
            Family::Diffusion => 1e-3,
            Family::AdvectionDiffusion => 2e-3,
        };
        Ok(Self {
            name: name.to_string(),
            family,
            v: vec![Coefficient::Range([-3.0, 3.0])],
            delta,
            length: 1.0,
            n: 128,
            dims: 1,
            dt,
            n_steps: 21,
            fields,
            periodic: vec![true],
        })
    }

    pub fn with_resolution(mut self, n: usize, dims: usize) -> Self {
        self.n = n;
        self.dims = dims;
        self.periodic = vec![true; dims];
        self
    }

    /// Spatial shape as `[H, W]`; 1D systems are lifted to `W = 1`.
    pub fn grid_shape(&self) -> [usize; 2] {
        if self.dims == 2 {
            [self.n, self.n]
        } else {
            [self.n, 1]
        }
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(MppError::config(format!("system `{}`: {m}", self.name)));
        if self.n < 8 || !self.n.is_multiple_of(2) {
            return fail(format!("N={} must be even and >= 8", self.n));
        }
        if !(self.dims == 1 || self.dims == 2) {
            return fail(format!("dims={} must be 1 or 2", self.dims));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return fail(format!("dt={} must be positive", self.dt));
        }
        if self.n_steps < 17 {
            return fail(format!("n_steps={} must be >= 17", self.n_steps));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return fail(format!("length={} must be positive", self.length));
        }
        if self.fields.is_empty() {
            return fail("no fields".into());
        }
        for (i, f) in self.fields.iter().enumerate() {
            if self.fields[..i].contains(f) {
                return fail(format!("duplicate field `{f}`"));
            }
        }
        if self.periodic.len() != self.dims || !self.periodic.iter().all(|&p| p) {
            return fail("every axis must be periodic".into());
        }
        if self.v.is_empty() || (self.v.len() != 1 && self.v.len() != self.dims) {
            return fail("velocity must have one entry or one per axis".into());
        }
        for c in self.v.iter().chain(std::iter::once(&self.delta)) {
            let (lo, hi) = c.bounds();
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return fail(format!("bad coefficient bounds [{lo}, {hi}]"));
            }
        }
        let (dlo, _) = self.delta.bounds();
        if self.family.uses_diffusion() && dlo < 0.0 {
            return fail("diffusion coefficient must be non-negative".into());
        }
        if self.family == Family::Burgers {
            if dlo <= 0.0 {
                return fail("burgers requires delta > 0".into());
            }
            if self.dims != 1 {
                return fail("burgers is one-dimensional".into());
            }
        }
        Ok(())
    }

    /// Draws `(v, delta)` for one trajectory, zeroing coefficients the family ignores.
    pub fn draw_coefficients<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Coefficients {
        let mut v: Vec<f64> = self.v.iter().map(|c| c.draw(rng)).collect();
        let delta = self.delta.draw(rng);
        if v.len() == 1 && self.dims == 2 {
            v.push(v[0]);
        }
        Coefficients {
            v: if self.family.uses_velocity() { v } else { vec![0.0; self.dims] },
            delta: if self.family.uses_diffusion() { delta } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialConditionSpec {
    pub max_wavenumber: usize,
    pub n_modes: usize,
    pub amplitude_range: [f64; 2],
    pub normalize_to: f64,
    pub seed: u64,
}

impl Default for InitialConditionSpec {
    fn default() -> Self {
        Self {
            max_wavenumber: 2,
            n_modes: 3,
            amplitude_range: [0.5, 1.0],
            normalize_to: 1.0,
            seed: 0,
        }
    }
}

impl InitialConditionSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.n_modes == 0 {
            return Err(MppError::config("n_modes must be >= 1"));
        }
        if self.max_wavenumber == 0 || 3 * self.max_wavenumber > n {
            return Err(MppError::config(format!(
                "max_wavenumber={} must lie in [1, N/3] for N={n}",
                self.max_wavenumber
            )));
        }
        let [lo, hi] = self.amplitude_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(MppError::config("amplitude_range must satisfy a_min <= a_max"));
        }
        if !(self.normalize_to > 0.0 && self.normalize_to.is_finite()) {
            return Err(MppError::config("normalize_to must be positive"));
        }
        Ok(())
    }
}

/// A generated snapshot sequence, `[n_steps, n_fields, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub system: String,
    pub seed: u64,
    pub coefficients: Coefficients,
    pub snapshots: Array4<f64>,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.snapshots.dim().0
    }

    pub fn is_finite(&self) -> bool {
        self.snapshots.iter().all(|x| x.is_finite())
    }
}
