//! Run configuration: machine geometry and physics, optimizer settings and
//! per-command parameters. Unknown keys are rejected; errors carry key paths.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;

/// Magnet magnetization direction model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MagnetizationKind {
    /// `M = ±|M| x/|x|`.
    #[default]
    Radial,
    /// Uniform per magnet, along the magnet's center direction.
    Parallel,
}

/// Harmonic orders used in the air-gap coupling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HarmonicOrders {
    /// `±1..±N/2` for even `N`; `0, ±1..±(N-1)/2` for odd `N`.
    #[default]
    Full,
    /// Same layout with every order multiplied by the pole-pair count.
    PolePairMultiples,
    /// Explicit list; must be closed under negation.
    Explicit(Vec<i64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MachineConfig {
    pub pole_pairs: usize,
    pub shaft_radius: f64,
    pub rotor_iron_radius: f64,
    pub magnet_radius: f64,
    pub interface_radius: f64,
    pub stator_inner_radius: f64,
    pub slot_bottom_radius: f64,
    pub stator_outer_radius: f64,
    /// Magnet arc as a fraction of the pole pitch.
    pub magnet_span_fraction: f64,
    pub slots: usize,
    /// Slot opening as a fraction of the slot pitch.
    pub slot_span_fraction: f64,
    pub degree: usize,
    pub refinement: usize,
    /// Target angular element size at refinement 0, degrees.
    pub angular_element_deg: f64,
    /// Radial elements per rotor ring (iron, magnets, air) at refinement 0.
    pub rotor_radial_elements: [usize; 3],
    /// Radial elements per stator ring (air, slots, yoke) at refinement 0.
    pub stator_radial_elements: [usize; 3],
    pub mu_r_iron: f64,
    pub mu_r_magnet: f64,
    /// Remanence in tesla.
    pub remanence: f64,
    pub magnetization: MagnetizationKind,
    /// Axial length in meters.
    pub axial_length: f64,
    /// Turns per slot.
    pub turns: f64,
    pub n_harmonics: usize,
    pub harmonic_orders: HarmonicOrders,
    pub n_angles: usize,
    /// Harmonics entering the distortion measure; default all resolvable.
    pub index_set: Option<Vec<usize>>,
    /// Phase current amplitude in amperes; zero means no load.
    pub current_amplitude: f64,
    /// Electrical phase offset of the currents, radians.
    pub current_phase: f64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        Self {
            pole_pairs: 3,
            shaft_radius: 0.010,
            rotor_iron_radius: 0.028,
            magnet_radius: 0.034,
            interface_radius: 0.0345,
            stator_inner_radius: 0.035,
            slot_bottom_radius: 0.050,
            stator_outer_radius: 0.060,
            magnet_span_fraction: 2.0 / 3.0,
            slots: 18,
            slot_span_fraction: 0.5,
            degree: 2,
            refinement: 0,
            angular_element_deg: 5.0,
            rotor_radial_elements: [2, 1, 1],
            stator_radial_elements: [1, 2, 1],
            mu_r_iron: 500.0,
            mu_r_magnet: 1.05,
            remanence: 1.0,
            magnetization: MagnetizationKind::Radial,
            axial_length: 0.1,
            turns: 10.0,
            n_harmonics: 36,
            harmonic_orders: HarmonicOrders::Full,
            n_angles: 120,
            index_set: None,
            current_amplitude: 0.0,
            current_phase: 0.0,
        }
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(
            path,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

impl MachineConfig {
    /// Checks every invariant that does not need the built geometry.
    pub fn validate(&self) -> Result<()> {
        let p = "machine";
        if self.pole_pairs == 0 {
            return Err(Error::config(
                format!("{p}.pole_pairs"),
                "must be at least 1",
            ));
        }
        let radii = [
            ("shaft_radius", self.shaft_radius),
            ("rotor_iron_radius", self.rotor_iron_radius),
            ("magnet_radius", self.magnet_radius),
            ("interface_radius", self.interface_radius),
            ("stator_inner_radius", self.stator_inner_radius),
            ("slot_bottom_radius", self.slot_bottom_radius),
            ("stator_outer_radius", self.stator_outer_radius),
        ];
        for (name, r) in radii {
            positive(&format!("{p}.{name}"), r)?;
        }
        for w in radii.windows(2) {
            if w[1].1 <= w[0].1 {
                return Err(Error::config(
                    format!("{p}.{}", w[1].0),
                    format!(
                        "radii must be strictly increasing ({} <= {})",
                        w[1].1, w[0].1
                    ),
                ));
            }
        }
        if !(self.magnet_span_fraction > 0.0 && self.magnet_span_fraction < 1.0) {
            return Err(Error::config(
                format!("{p}.magnet_span_fraction"),
                "must lie in (0, 1)",
            ));
        }
        if !(self.slot_span_fraction > 0.0 && self.slot_span_fraction < 1.0) {
            return Err(Error::config(
                format!("{p}.slot_span_fraction"),
                "must lie in (0, 1)",
            ));
        }
        if self.slots == 0 || !self.slots.is_multiple_of(6 * self.pole_pairs) {
            return Err(Error::config(
                format!("{p}.slots"),
                format!(
                    "slot count must be a positive multiple of 6 * pole_pairs = {}",
                    6 * self.pole_pairs
                ),
            ));
        }
        if self.degree != 2 {
            return Err(Error::config(
                format!("{p}.degree"),
                "only degree 2 is supported (exact quadratic arcs)",
            ));
        }
        if self.refinement > 6 {
            return Err(Error::config(format!("{p}.refinement"), "at most 6"));
        }
        positive(
            &format!("{p}.angular_element_deg"),
            self.angular_element_deg,
        )?;
        for (name, e) in [
            ("rotor_radial_elements", self.rotor_radial_elements),
            ("stator_radial_elements", self.stator_radial_elements),
        ] {
            if e.contains(&0) {
                return Err(Error::config(
                    format!("{p}.{name}"),
                    "element counts must be >= 1",
                ));
            }
        }
        positive(&format!("{p}.mu_r_iron"), self.mu_r_iron)?;
        positive(&format!("{p}.mu_r_magnet"), self.mu_r_magnet)?;
        if !self.remanence.is_finite() {
            return Err(Error::config(format!("{p}.remanence"), "must be finite"));
        }
        positive(&format!("{p}.axial_length"), self.axial_length)?;
        positive(&format!("{p}.turns"), self.turns)?;
        if self.n_harmonics == 0 {
            return Err(Error::config(
                format!("{p}.n_harmonics"),
                "must be at least 1",
            ));
        }
        self.orders()?;
        if self.n_angles < 4 || !self.n_angles.is_multiple_of(2) {
            return Err(Error::config(
                format!("{p}.n_angles"),
                "must be even and >= 4",
            ));
        }
        self.index_set()?;
        if !self.current_amplitude.is_finite() || !self.current_phase.is_finite() {
            return Err(Error::config(
                format!("{p}.current_amplitude"),
                "must be finite",
            ));
        }
        Ok(())
    }

    /// Harmonic orders of the coupling, closed under negation.
    pub fn orders(&self) -> Result<Vec<i64>> {
        let n = self.n_harmonics as i64;
        let base = |scale: i64| -> Vec<i64> {
            let h = n / 2;
            let mut v: Vec<i64> = (1..=h).rev().map(|k| -k * scale).collect();
            if n % 2 == 1 {
                v.push(0);
            }
            v.extend((1..=h).map(|k| k * scale));
            v
        };
        let orders = match &self.harmonic_orders {
            HarmonicOrders::Full => base(1),
            HarmonicOrders::PolePairMultiples => base(self.pole_pairs as i64),
            HarmonicOrders::Explicit(list) => {
                let path = "machine.harmonic_orders.explicit";
                if list.len() != self.n_harmonics {
                    return Err(Error::config(
                        path,
                        format!("expected {} orders, got {}", self.n_harmonics, list.len()),
                    ));
                }
                let mut sorted = list.clone();
                sorted.sort_unstable();
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    return Err(Error::config(path, "orders must be distinct"));
                }
                if list.iter().any(|l| !list.contains(&-l)) {
                    return Err(Error::config(
                        path,
                        "orders must be closed under negation so the field stays real",
                    ));
                }
                list.clone()
            }
        };
        Ok(orders)
    }

    /// Harmonic index set of the distortion measure.
    pub fn index_set(&self) -> Result<Vec<usize>> {
        let nmax = self.n_angles / 2 - 1;
        match &self.index_set {
            None => Ok((1..=nmax).collect()),
            Some(list) => {
                let path = "machine.index_set";
                if !list.contains(&1) {
                    return Err(Error::config(path, "must contain the fundamental 1"));
                }
                if let Some(&n) = list.iter().find(|&&n| n == 0 || n > nmax) {
                    return Err(Error::config(
                        path,
                        format!("harmonic {n} outside resolvable range 1..={nmax}"),
                    ));
                }
                let mut v = list.clone();
                v.sort_unstable();
                v.dedup();
                Ok(v)
            }
        }
    }

    /// Remanent magnetization magnitude `B_r / mu0`.
    pub fn magnetization_magnitude(&self) -> f64 {
        self.remanence / MU0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Stop when the decrease falls below `tol_rel * J0`.
    pub tol_rel: f64,
    /// Smallest trial step before giving up.
    pub min_step: f64,
    /// Jacobian floor relative to the initial minimum determinant.
    pub eps_j_rel: f64,
    pub max_iterations: usize,
    /// Let control points of magnet patches move as well.
    pub move_magnets: bool,
    /// Write the rotor geometry after every accepted iteration.
    pub snapshots: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            tol_rel: 1e-6,
            min_step: 2f64.powi(-20),
            eps_j_rel: 1e-3,
            max_iterations: 100,
            move_magnets: false,
            snapshots: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        positive("optimizer.tol_rel", self.tol_rel)?;
        positive("optimizer.eps_j_rel", self.eps_j_rel)?;
        if !(self.min_step > 0.0 && self.min_step <= 1.0) {
            return Err(Error::config("optimizer.min_step", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    /// Rotor angle in radians.
    pub alpha: f64,
    /// Sample grid points per axis.
    pub grid: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            grid: 81,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Keep only flux samples and multipliers per angle.
    pub low_memory: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { low_memory: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub levels: Vec<usize>,
    pub harmonics: Vec<usize>,
    pub repetitions: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            levels: vec![1, 2],
            harmonics: vec![6, 20, 36, 50],
            repetitions: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub machine: MachineConfig,
    pub optimizer: OptimizerConfig,
    pub output_dir: Option<String>,
    /// Seed for randomized utilities.
    pub seed: u64,
    /// Worker threads; 0 uses the default pool.
    pub threads: usize,
    pub solve: SolveConfig,
    pub sweep: SweepConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.machine.validate()?;
        self.optimizer.validate()?;
        if self.solve.grid < 2 {
            return Err(Error::config("solve.grid", "must be at least 2"));
        }
        if self.bench.repetitions == 0 {
            return Err(Error::config("bench.repetitions", "must be at least 1"));
        }
        if self.bench.levels.is_empty() || self.bench.harmonics.is_empty() {
            return Err(Error::config(
                "bench",
                "levels and harmonics must be nonempty",
            ));
        }
        if let Some(&l) = self.bench.levels.iter().find(|&&l| l > 6) {
            return Err(Error::config(
                "bench.levels",
                format!("level {l} exceeds 6"),
            ));
        }
        if self.solve.alpha.is_nan() {
            return Err(Error::config("solve.alpha", "must be a number"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
