//! Run configuration: one TOML document describing the environment, the
//! dispersion surface, the source and the run controls.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use stray::environment::{BathymetrySpec, EnvironmentSpec, ProfileSpec, Waveguide};
use stray::modes::{
    build_dispersion_surface, AnalyticDispersion, DirectDispersion, Dispersion, Geometry, GridSpec, ModeLaw,
};
use stray::ode::Tolerances;
use stray::source::{make_plane_chirp, make_point_impulse, GriddedSource, Ramp, SourceFamily, SourceSurface, Window};
use stray::{Error, Result};

/// Batch commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Validate,
    Modes,
    Trace,
    Caustics,
    Fronts,
    Receiver,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Modes => "modes",
            Command::Trace => "trace",
            Command::Caustics => "caustics",
            Command::Fronts => "fronts",
            Command::Receiver => "receiver",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub environment: Option<EnvironmentSpec>,
    pub dispersion: Option<DispersionConfig>,
    pub source: Option<SourceConfig>,
    #[serde(default)]
    pub run: RunSection,
    pub modes: Option<ModesSection>,
    #[serde(default)]
    pub fronts: Vec<FrontSpec>,
    pub receiver: Option<ReceiverSection>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Default command when none is given on the command line.
    pub command: Option<Command>,
    #[serde(default = "RunSection::default_rtol")]
    pub rtol: f64,
    #[serde(default = "RunSection::default_atol")]
    pub atol: f64,
    pub tau_max: Option<f64>,
    #[serde(default = "RunSection::default_n_mu")]
    pub n_mu: usize,
    #[serde(default = "RunSection::default_n_nu")]
    pub n_nu: usize,
    /// Relative to the config file; `out` when absent.
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl RunSection {
    fn default_rtol() -> f64 {
        1e-9
    }
    fn default_atol() -> f64 {
        1e-12
    }
    fn default_n_mu() -> usize {
        16
    }
    fn default_n_nu() -> usize {
        1
    }
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            command: None,
            rtol: Self::default_rtol(),
            atol: Self::default_atol(),
            tau_max: None,
            n_mu: Self::default_n_mu(),
            n_nu: Self::default_n_nu(),
            output_dir: None,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawName {
    #[default]
    IdealWaveguide,
    Nondispersive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryName {
    #[default]
    Homogeneous,
    Lens,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DispersionConfig {
    /// Closed-form `q`; `n` and `h` default to the environment values.
    Analytic {
        #[serde(default)]
        law: LawName,
        n: Option<f64>,
        h: Option<f64>,
        #[serde(default)]
        mode: usize,
        #[serde(default)]
        geometry: GeometryName,
        lens_length: Option<f64>,
        bounds: Option<[[f64; 2]; 2]>,
        band: Option<[f64; 2]>,
    },
    /// Mode solves on a tensor grid over `(x, y, k0)`.
    Grid {
        #[serde(default)]
        mode: usize,
        #[serde(default)]
        x: [f64; 2],
        #[serde(default = "one_node")]
        nx: usize,
        #[serde(default)]
        y: [f64; 2],
        #[serde(default = "one_node")]
        ny: usize,
        k0: [f64; 2],
        nk0: usize,
        #[serde(default = "cubic")]
        order: usize,
    },
    /// A mode solve at every query.
    Direct {
        #[serde(default)]
        mode: usize,
    },
}

fn one_node() -> usize {
    1
}

fn cubic() -> usize {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowName {
    #[default]
    Rect,
    Hann,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SourceConfig {
    #[serde(flatten)]
    pub family: FamilyConfig,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub window: WindowName,
    #[serde(default)]
    pub phase_tilt: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyConfig {
    PointImpulse {
        position: [f64; 2],
        k0_band: [f64; 2],
        #[serde(default)]
        emission_window: [f64; 2],
        /// Launch-angle sector; the full circle when absent.
        mu: Option<[f64; 2]>,
    },
    PlaneChirp {
        origin: [f64; 2],
        line_angle: f64,
        ramp: RampConfig,
        mu: [f64; 2],
        nu: [f64; 2],
    },
    /// Tables row-major with `nu` fastest.
    Gridded {
        mu: Vec<f64>,
        nu: Vec<f64>,
        rho0: Vec<f64>,
        x0: Vec<f64>,
        y0: Vec<f64>,
        k0: Vec<f64>,
        alpha0: Vec<f64>,
        phi0: Vec<f64>,
        a0: Vec<f64>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RampConfig {
    Linear { k0c: f64, c: f64 },
    Tabulated { times: Vec<f64>, k0: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesSection {
    #[serde(default)]
    pub position: [f64; 2],
    pub k0: [f64; 2],
    #[serde(default = "ModesSection::default_n_k0")]
    pub n_k0: usize,
    #[serde(default = "ModesSection::default_modes")]
    pub modes: Vec<usize>,
}

impl ModesSection {
    fn default_n_k0() -> usize {
        50
    }
    fn default_modes() -> Vec<usize> {
        vec![0]
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontSpec {
    /// `phi`, `tau` or `s`.
    pub field: String,
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverSection {
    pub position: [f64; 2],
    /// Observation-time interval.
    pub rho: [f64; 2],
    pub n_rho: usize,
    #[serde(default = "one")]
    pub epsilon: f64,
    /// Seed fan size; the run fan when absent.
    pub n_mu: Option<usize>,
    pub n_nu: Option<usize>,
    #[serde(default = "ReceiverSection::default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "ReceiverSection::default_residual")]
    pub residual_rel: f64,
}

impl ReceiverSection {
    fn default_max_iter() -> usize {
        50
    }
    fn default_residual() -> f64 {
        1e-8
    }
}

/// Parses a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        match msg.strip_prefix("missing field `").and_then(|r| r.split('`').next()) {
            Some(key) => Error::MissingKey(key.to_string()),
            None => Error::Parse(e.to_string()),
        }
    })?;
    cfg.check_run()?;
    Ok(cfg)
}

impl RunConfig {
    fn check_run(&self) -> Result<()> {
        let r = &self.run;
        for (name, v) in [("run.rtol", r.rtol), ("run.atol", r.atol)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invariant(name, "tolerance must be positive"));
            }
        }
        if let Some(t) = r.tau_max {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::invariant("run.tau_max", "must be positive"));
            }
        }
        if r.n_mu == 0 || r.n_nu == 0 {
            return Err(Error::invariant("run.n_mu/n_nu", "fan sizes must be at least 1"));
        }
        if r.threads == Some(0) {
            return Err(Error::invariant("run.threads", "must be at least 1"));
        }
        Ok(())
    }

    /// Checks that every section the command reads is present.
    pub fn require(&self, cmd: Command) -> Result<()> {
        let need = |present: bool, key: &str| {
            if present {
                Ok(())
            } else {
                Err(Error::MissingKey(key.into()))
            }
        };
        need(self.environment.is_some(), "environment")?;
        match cmd {
            Command::Modes => {
                need(self.modes.is_some(), "modes")?;
                let m = self.modes.as_ref().expect("checked");
                if m.n_k0 < 2 || !(m.k0[0] > 0.0) || !(m.k0[1] > m.k0[0]) {
                    return Err(Error::invariant("modes.k0", "need 0 < k0_a < k0_b and n_k0 >= 2"));
                }
                Ok(())
            }
            Command::Validate => {
                need(self.dispersion.is_some(), "dispersion")?;
                need(self.source.is_some(), "source")
            }
            Command::Trace | Command::Caustics | Command::Fronts => {
                need(self.dispersion.is_some(), "dispersion")?;
                need(self.source.is_some(), "source")?;
                need(self.run.tau_max.is_some(), "run.tau_max")?;
                if cmd == Command::Fronts {
                    need(!self.fronts.is_empty(), "fronts")?;
                }
                Ok(())
            }
            Command::Receiver => {
                need(self.dispersion.is_some(), "dispersion")?;
                need(self.source.is_some(), "source")?;
                need(self.receiver.is_some(), "receiver")?;
                let r = self.receiver.as_ref().expect("checked");
                if r.n_rho == 0 || !(r.rho[1] >= r.rho[0]) {
                    return Err(Error::invariant("receiver.rho", "need rho_a <= rho_b and n_rho >= 1"));
                }
                if r.n_mu == Some(0) || r.n_nu == Some(0) {
                    return Err(Error::invariant("receiver.n_mu/n_nu", "fan sizes must be at least 1"));
                }
                Ok(())
            }
        }
    }

    pub fn tolerances(&self) -> Tolerances<f64> {
        Tolerances::new(self.run.rtol, self.run.atol)
    }

    pub fn output_dir(&self, config_path: &Path) -> PathBuf {
        let base = config_path.parent().unwrap_or(Path::new("."));
        base.join(self.run.output_dir.clone().unwrap_or_else(|| PathBuf::from("out")))
    }

    pub fn waveguide(&self) -> Result<Waveguide<f64>> {
        let spec = self
            .environment
            .as_ref()
            .ok_or_else(|| Error::MissingKey("environment".into()))?;
        Waveguide::from_spec(spec)
    }

    pub fn dispersion(&self, env: &Waveguide<f64>) -> Result<Box<dyn Dispersion<f64>>> {
        let cfg = self
            .dispersion
            .as_ref()
            .ok_or_else(|| Error::MissingKey("dispersion".into()))?;
        let spec = self
            .environment
            .as_ref()
            .ok_or_else(|| Error::MissingKey("environment".into()))?;
        Ok(match cfg {
            DispersionConfig::Analytic {
                law,
                n,
                h,
                mode,
                geometry,
                lens_length,
                bounds,
                band,
            } => {
                let n = match n {
                    Some(n) => *n,
                    None => water_index(spec).ok_or_else(|| Error::MissingKey("dispersion.n".into()))?,
                };
                let law = match law {
                    LawName::Nondispersive => ModeLaw::Nondispersive { n },
                    LawName::IdealWaveguide => {
                        let h = match h {
                            Some(h) => *h,
                            None => constant_depth(spec).ok_or_else(|| Error::MissingKey("dispersion.h".into()))?,
                        };
                        ModeLaw::IdealWaveguide { n, h, mode: *mode }
                    }
                };
                let geometry = match geometry {
                    GeometryName::Homogeneous => Geometry::Homogeneous,
                    GeometryName::Lens => {
                        let length = lens_length.ok_or_else(|| Error::MissingKey("dispersion.lens_length".into()))?;
                        if !(length > 0.0) {
                            return Err(Error::invariant("dispersion.lens_length", "must be positive"));
                        }
                        Geometry::Lens { length }
                    }
                };
                let mut d = AnalyticDispersion::new(law, geometry);
                if let Some(b) = bounds {
                    d = d.with_bounds(*b);
                }
                if let Some(b) = band {
                    d = d.with_band(*b);
                }
                Box::new(d)
            }
            DispersionConfig::Grid {
                mode,
                x,
                nx,
                y,
                ny,
                k0,
                nk0,
                order,
            } => {
                let grid = GridSpec {
                    x: *x,
                    nx: *nx,
                    y: *y,
                    ny: *ny,
                    k0: *k0,
                    nk0: *nk0,
                    order: *order,
                };
                Box::new(build_dispersion_surface(env, &grid, *mode)?)
            }
            DispersionConfig::Direct { mode } => Box::new(DirectDispersion::new(env.clone(), *mode)),
        })
    }

    pub fn source(&self, disp: &dyn Dispersion<f64>) -> Result<SourceSurface<f64>> {
        let cfg = self.source.as_ref().ok_or_else(|| Error::MissingKey("source".into()))?;
        let surface = match &cfg.family {
            FamilyConfig::PointImpulse {
                position,
                k0_band,
                emission_window,
                mu,
            } => {
                let mut s = make_point_impulse(*position, *k0_band, *emission_window, disp)?;
                if let Some(m) = mu {
                    if !(m[1] > m[0]) {
                        return Err(Error::invariant("source.mu", "need mu_b > mu_a"));
                    }
                    s.mu = *m;
                }
                s
            }
            FamilyConfig::PlaneChirp {
                origin,
                line_angle,
                ramp,
                mu,
                nu,
            } => {
                let ramp = match ramp {
                    RampConfig::Linear { k0c, c } => Ramp::linear(*k0c, *c),
                    RampConfig::Tabulated { times, k0 } => Ramp::tabulated(times.clone(), k0.clone())?,
                };
                make_plane_chirp(*origin, *line_angle, ramp, *mu, *nu, disp)?
            }
            FamilyConfig::Gridded {
                mu,
                nu,
                rho0,
                x0,
                y0,
                k0,
                alpha0,
                phi0,
                a0,
            } => {
                let g = GriddedSource::new(
                    mu.clone(),
                    nu.clone(),
                    rho0.clone(),
                    x0.clone(),
                    y0.clone(),
                    k0.clone(),
                    alpha0.clone(),
                    phi0.clone(),
                    a0.clone(),
                )?;
                SourceSurface::new(g.mu_range(), g.nu_range(), SourceFamily::Gridded(g))
            }
        };
        if !(cfg.amplitude >= 0.0) {
            return Err(Error::invariant("source.amplitude", "must be non-negative"));
        }
        let window = match cfg.window {
            WindowName::Rect => Window::Rect,
            WindowName::Hann => Window::Hann,
        };
        Ok(surface
            .with_amplitude(cfg.amplitude)
            .with_window(window)
            .with_phase_tilt(cfg.phase_tilt))
    }
}

fn water_index(spec: &EnvironmentSpec) -> Option<f64> {
    match &spec.profile {
        ProfileSpec::TwoLayerPekeris { n_water, .. } => Some(*n_water),
        ProfileSpec::IsoVelocityRigidLimit { n_water } => Some(*n_water),
        ProfileSpec::LinearGradient { n0, .. } => Some(*n0),
        ProfileSpec::Gridded { .. } => None,
    }
}

fn constant_depth(spec: &EnvironmentSpec) -> Option<f64> {
    match &spec.bathymetry {
        BathymetrySpec::Constant { h } => Some(*h),
        _ => None,
    }
}
