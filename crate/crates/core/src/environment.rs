//! Waveguide model: refraction index profile, bathymetry and densities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{Axis, TensorGrid};
use crate::scalar::{lit, Real};

/// Condition below the water layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bottom<T> {
    /// Homogeneous fluid half-space with index `n`.
    HalfSpace { n: T },
    /// Perfectly rigid bottom, `ψ'(h) = 0`.
    Rigid,
}

/// Refraction index `n = c0 / c` in the water column and below it.
#[derive(Debug, Clone, PartialEq)]
pub enum IndexProfile<T> {
    TwoLayerPekeris {
        n_water: T,
        n_bottom: T,
    },
    IsoVelocityRigidLimit {
        n_water: T,
    },
    /// `n = n0 + g·(x, y, z)` in water.
    LinearGradient {
        n0: T,
        gradient: [T; 3],
        n_bottom: Option<T>,
    },
    /// Samples over `(x, y, z)`; an axis with one node is an invariant direction.
    Gridded {
        grid: TensorGrid<T>,
        values: Vec<T>,
        n_bottom: Option<T>,
    },
}

impl<T: Real> IndexProfile<T> {
    pub fn bottom(&self) -> Bottom<T> {
        let n = match self {
            IndexProfile::TwoLayerPekeris { n_bottom, .. } => Some(*n_bottom),
            IndexProfile::IsoVelocityRigidLimit { .. } => None,
            IndexProfile::LinearGradient { n_bottom, .. } => *n_bottom,
            IndexProfile::Gridded { n_bottom, .. } => *n_bottom,
        };
        match n {
            Some(n) => Bottom::HalfSpace { n },
            None => Bottom::Rigid,
        }
    }

    /// Water-column index at a point, without any bottom lookup.
    pub fn water(&self, x: T, y: T, z: T) -> Result<T> {
        match self {
            IndexProfile::TwoLayerPekeris { n_water, .. } | IndexProfile::IsoVelocityRigidLimit { n_water } => {
                Ok(*n_water)
            }
            IndexProfile::LinearGradient { n0, gradient, .. } => {
                Ok(*n0 + gradient[0] * x + gradient[1] * y + gradient[2] * z)
            }
            IndexProfile::Gridded { grid, values, .. } => grid
                .interpolate(values, &[x, y, z])
                .ok_or_else(|| Error::out_of_domain("gridded profile", &[x.as_f64(), y.as_f64(), z.as_f64()])),
        }
    }

    /// True when `n` does not depend on `(x, y)`.
    pub fn is_horizontally_uniform(&self) -> bool {
        match self {
            IndexProfile::TwoLayerPekeris { .. } | IndexProfile::IsoVelocityRigidLimit { .. } => true,
            IndexProfile::LinearGradient { gradient, .. } => gradient[0] == T::zero() && gradient[1] == T::zero(),
            IndexProfile::Gridded { grid, .. } => grid.axes()[0].is_invariant() && grid.axes()[1].is_invariant(),
        }
    }

    /// True when `n` in water does not depend on depth.
    pub fn is_depth_uniform(&self) -> bool {
        match self {
            IndexProfile::TwoLayerPekeris { .. } | IndexProfile::IsoVelocityRigidLimit { .. } => true,
            IndexProfile::LinearGradient { gradient, .. } => gradient[2] == T::zero(),
            IndexProfile::Gridded { grid, .. } => grid.axes()[2].is_invariant(),
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invariant(field, "refraction index must be positive"))
            }
        };
        match self {
            IndexProfile::TwoLayerPekeris { n_water, n_bottom } => {
                positive("profile.n_water", *n_water)?;
                positive("profile.n_bottom", *n_bottom)?;
                if *n_bottom >= *n_water {
                    return Err(Error::invariant(
                        "profile.n_bottom",
                        "no trapped modes: n_bottom must be below n_water",
                    ));
                }
            }
            IndexProfile::IsoVelocityRigidLimit { n_water } => positive("profile.n_water", *n_water)?,
            IndexProfile::LinearGradient { n0, gradient, n_bottom } => {
                positive("profile.n0", *n0)?;
                if gradient.iter().any(|g| !g.is_finite()) {
                    return Err(Error::invariant("profile.gradient", "must be finite"));
                }
                if let Some(nb) = n_bottom {
                    positive("profile.n_bottom", *nb)?;
                }
            }
            IndexProfile::Gridded { grid, values, n_bottom } => {
                if grid.axes().len() != 3 {
                    return Err(Error::invariant("profile", "gridded profile needs x, y, z axes"));
                }
                if values.len() != grid.len() {
                    return Err(Error::invariant(
                        "profile.values",
                        format!("expected {} samples, found {}", grid.len(), values.len()),
                    ));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invariant("profile.values", "samples must be finite"));
                }
                if values.iter().any(|v| *v <= T::zero()) {
                    return Err(Error::invariant("profile.values", "refraction index must be positive"));
                }
                if let Some(nb) = n_bottom {
                    positive("profile.n_bottom", *nb)?;
                }
            }
        }
        Ok(())
    }
}

/// Water depth `h(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Bathymetry<T> {
    Constant {
        h: T,
    },
    /// `h = h0 + g·(x, y)`.
    Linear {
        h0: T,
        gradient: [T; 2],
    },
    Gridded {
        grid: TensorGrid<T>,
        values: Vec<T>,
    },
}

impl<T: Real> Bathymetry<T> {
    pub fn depth(&self, x: T, y: T) -> Result<T> {
        let h = match self {
            Bathymetry::Constant { h } => *h,
            Bathymetry::Linear { h0, gradient } => *h0 + gradient[0] * x + gradient[1] * y,
            Bathymetry::Gridded { grid, values } => grid
                .interpolate(values, &[x, y])
                .ok_or_else(|| Error::out_of_domain("gridded bathymetry", &[x.as_f64(), y.as_f64()]))?,
        };
        if h > T::zero() {
            Ok(h)
        } else {
            Err(Error::invariant("bathymetry", "bathymetry must be positive"))
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Bathymetry::Constant { .. })
    }

    fn validate(&self) -> Result<()> {
        let bad = || Err(Error::invariant("bathymetry", "bathymetry must be positive"));
        match self {
            Bathymetry::Constant { h } => {
                if !(*h > T::zero() && h.is_finite()) {
                    return bad();
                }
            }
            Bathymetry::Linear { h0, gradient } => {
                if !(*h0 > T::zero() && h0.is_finite()) || gradient.iter().any(|g| !g.is_finite()) {
                    return bad();
                }
            }
            Bathymetry::Gridded { grid, values } => {
                if grid.axes().len() != 2 || values.len() != grid.len() {
                    return Err(Error::invariant(
                        "bathymetry.values",
                        "gridded bathymetry needs x, y axes and one sample per node",
                    ));
                }
                if values.iter().any(|v| !(*v > T::zero() && v.is_finite())) {
                    return bad();
                }
            }
        }
        Ok(())
    }
}

/// Immutable environment model.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveguide<T> {
    pub c0: T,
    pub profile: IndexProfile<T>,
    pub bathymetry: Bathymetry<T>,
    /// Density of the water layer.
    pub rho_plus: T,
    /// Density of the bottom.
    pub rho_minus: T,
    pub epsilon: T,
    warnings: Vec<String>,
}

impl<T: Real> Waveguide<T> {
    pub fn new(
        c0: T,
        profile: IndexProfile<T>,
        bathymetry: Bathymetry<T>,
        rho_plus: T,
        rho_minus: T,
        epsilon: T,
    ) -> Result<Self> {
        if !(c0 > T::zero() && c0.is_finite()) {
            return Err(Error::invariant("c0", "reference sound speed must be positive"));
        }
        if !(rho_plus > T::zero() && rho_plus.is_finite()) {
            return Err(Error::invariant("rho_plus", "density must be positive"));
        }
        if !(rho_minus > T::zero() && rho_minus.is_finite()) {
            return Err(Error::invariant("rho_minus", "density must be positive"));
        }
        if !(epsilon > T::zero() && epsilon.is_finite()) {
            return Err(Error::invariant("epsilon", "must be positive"));
        }
        profile.validate()?;
        bathymetry.validate()?;
        let mut wg = Self {
            c0,
            profile,
            bathymetry,
            rho_plus,
            rho_minus,
            epsilon,
            warnings: Vec::new(),
        };
        wg.warnings = wg.index_warnings();
        Ok(wg)
    }

    /// Horizontally homogeneous two-layer waveguide.
    pub fn pekeris(h: T, n_water: T, n_bottom: T, rho_plus: T, rho_minus: T) -> Result<Self> {
        Self::new(
            lit(1500.0),
            IndexProfile::TwoLayerPekeris { n_water, n_bottom },
            Bathymetry::Constant { h },
            rho_plus,
            rho_minus,
            T::one(),
        )
    }

    /// Horizontally homogeneous water layer on a rigid bottom.
    pub fn rigid(h: T, n_water: T) -> Result<Self> {
        Self::new(
            lit(1500.0),
            IndexProfile::IsoVelocityRigidLimit { n_water },
            Bathymetry::Constant { h },
            T::one(),
            T::one(),
            T::one(),
        )
    }

    /// True when neither depth nor index varies horizontally.
    pub fn is_horizontally_homogeneous(&self) -> bool {
        self.bathymetry.is_constant() && self.profile.is_horizontally_uniform()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn depth(&self, x: T, y: T) -> Result<T> {
        self.bathymetry.depth(x, y)
    }

    pub fn bottom(&self) -> Bottom<T> {
        self.profile.bottom()
    }

    /// `n(x, y, z)`: water value above the bottom, bottom value below it.
    pub fn eval_index(&self, x: T, y: T, z: T) -> Result<T> {
        if z < T::zero() || !z.is_finite() {
            return Err(Error::out_of_domain("depth", &[z.as_f64()]));
        }
        let h = self.depth(x, y)?;
        if z < h {
            return self.profile.water(x, y, z);
        }
        match self.bottom() {
            Bottom::HalfSpace { n } => Ok(n),
            Bottom::Rigid if z == h => self.profile.water(x, y, z),
            Bottom::Rigid => Err(Error::out_of_domain(
                "rigid bottom",
                &[x.as_f64(), y.as_f64(), z.as_f64()],
            )),
        }
    }

    /// Whether `(x, y)` lies inside the horizontal domain of every gridded field.
    pub fn contains(&self, x: T, y: T) -> bool {
        let bathy = match &self.bathymetry {
            Bathymetry::Gridded { grid, .. } => grid.contains(&[x, y]),
            _ => true,
        };
        let prof = match &self.profile {
            IndexProfile::Gridded { grid, .. } => grid.axes()[0].contains(x) && grid.axes()[1].contains(y),
            _ => true,
        };
        bathy && prof && self.depth(x, y).is_ok()
    }

    fn index_warnings(&self) -> Vec<String> {
        let lo = lit::<T>(0.5);
        let hi = lit::<T>(2.0);
        let mut samples: Vec<(String, T)> = Vec::new();
        match &self.profile {
            IndexProfile::TwoLayerPekeris { n_water, n_bottom } => {
                samples.push(("n_water".into(), *n_water));
                samples.push(("n_bottom".into(), *n_bottom));
            }
            IndexProfile::IsoVelocityRigidLimit { n_water } => samples.push(("n_water".into(), *n_water)),
            IndexProfile::LinearGradient { n0, n_bottom, .. } => {
                samples.push(("n0".into(), *n0));
                if let Some(nb) = n_bottom {
                    samples.push(("n_bottom".into(), *nb));
                }
            }
            IndexProfile::Gridded { values, n_bottom, .. } => {
                let (mn, mx) = values
                    .iter()
                    .fold((T::infinity(), T::neg_infinity()), |(a, b), &v| (a.min(v), b.max(v)));
                samples.push(("min sample".into(), mn));
                samples.push(("max sample".into(), mx));
                if let Some(nb) = n_bottom {
                    samples.push(("n_bottom".into(), *nb));
                }
            }
        }
        samples
            .into_iter()
            .filter(|(_, v)| *v < lo || *v > hi)
            .map(|(name, v)| format!("refraction index {name} = {v} lies outside [0.5, 2]"))
            .collect()
    }

    pub fn to_spec(&self) -> EnvironmentSpec {
        let f = |v: T| v.as_f64();
        let axis_vec = |a: &Axis<T>| a.nodes().iter().map(|v| v.as_f64()).collect::<Vec<_>>();
        let profile = match &self.profile {
            IndexProfile::TwoLayerPekeris { n_water, n_bottom } => ProfileSpec::TwoLayerPekeris {
                n_water: f(*n_water),
                n_bottom: f(*n_bottom),
            },
            IndexProfile::IsoVelocityRigidLimit { n_water } => {
                ProfileSpec::IsoVelocityRigidLimit { n_water: f(*n_water) }
            }
            IndexProfile::LinearGradient { n0, gradient, n_bottom } => ProfileSpec::LinearGradient {
                n0: f(*n0),
                gradient: gradient.map(f),
                n_bottom: n_bottom.map(f),
            },
            IndexProfile::Gridded { grid, values, n_bottom } => ProfileSpec::Gridded {
                x: axis_vec(&grid.axes()[0]),
                y: axis_vec(&grid.axes()[1]),
                z: axis_vec(&grid.axes()[2]),
                values: values.iter().map(|v| v.as_f64()).collect(),
                order: grid.order(),
                n_bottom: n_bottom.map(f),
            },
        };
        let bathymetry = match &self.bathymetry {
            Bathymetry::Constant { h } => BathymetrySpec::Constant { h: f(*h) },
            Bathymetry::Linear { h0, gradient } => BathymetrySpec::Linear {
                h0: f(*h0),
                gradient: gradient.map(f),
            },
            Bathymetry::Gridded { grid, values } => BathymetrySpec::Gridded {
                x: axis_vec(&grid.axes()[0]),
                y: axis_vec(&grid.axes()[1]),
                values: values.iter().map(|v| v.as_f64()).collect(),
                order: grid.order(),
            },
        };
        EnvironmentSpec {
            c0: f(self.c0),
            rho_plus: f(self.rho_plus),
            rho_minus: f(self.rho_minus),
            epsilon: f(self.epsilon),
            bathymetry,
            profile,
        }
    }

    pub fn from_spec(spec: &EnvironmentSpec) -> Result<Self> {
        let axis = |name: &str, v: &[f64]| {
            Axis::new(v.iter().map(|&x| lit::<T>(x)).collect()).map_err(|e| Error::invariant(name, e.to_string()))
        };
        let vals = |v: &[f64]| v.iter().map(|&x| lit::<T>(x)).collect::<Vec<_>>();
        let profile = match &spec.profile {
            ProfileSpec::TwoLayerPekeris { n_water, n_bottom } => IndexProfile::TwoLayerPekeris {
                n_water: lit(*n_water),
                n_bottom: lit(*n_bottom),
            },
            ProfileSpec::IsoVelocityRigidLimit { n_water } => {
                IndexProfile::IsoVelocityRigidLimit { n_water: lit(*n_water) }
            }
            ProfileSpec::LinearGradient { n0, gradient, n_bottom } => IndexProfile::LinearGradient {
                n0: lit(*n0),
                gradient: gradient.map(lit),
                n_bottom: n_bottom.map(lit),
            },
            ProfileSpec::Gridded {
                x,
                y,
                z,
                values,
                order,
                n_bottom,
            } => IndexProfile::Gridded {
                grid: TensorGrid::new(
                    vec![axis("profile.x", x)?, axis("profile.y", y)?, axis("profile.z", z)?],
                    *order,
                )?,
                values: vals(values),
                n_bottom: n_bottom.map(lit),
            },
        };
        let bathymetry = match &spec.bathymetry {
            BathymetrySpec::Constant { h } => Bathymetry::Constant { h: lit(*h) },
            BathymetrySpec::Linear { h0, gradient } => Bathymetry::Linear {
                h0: lit(*h0),
                gradient: gradient.map(lit),
            },
            BathymetrySpec::Gridded { x, y, values, order } => Bathymetry::Gridded {
                grid: TensorGrid::new(vec![axis("bathymetry.x", x)?, axis("bathymetry.y", y)?], *order)?,
                values: vals(values),
            },
        };
        Self::new(
            lit(spec.c0),
            profile,
            bathymetry,
            lit(spec.rho_plus),
            lit(spec.rho_minus),
            lit(spec.epsilon),
        )
    }
}

fn default_epsilon() -> f64 {
    1.0
}

fn default_order() -> usize {
    3
}

/// Serialized form of a [`Waveguide`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub c0: f64,
    pub rho_plus: f64,
    pub rho_minus: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub bathymetry: BathymetrySpec,
    pub profile: ProfileSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    TwoLayerPekeris {
        n_water: f64,
        n_bottom: f64,
    },
    IsoVelocityRigidLimit {
        n_water: f64,
    },
    LinearGradient {
        n0: f64,
        gradient: [f64; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_bottom: Option<f64>,
    },
    /// `values` are ordered with `z` fastest, then `y`, then `x`.
    Gridded {
        x: Vec<f64>,
        y: Vec<f64>,
        z: Vec<f64>,
        values: Vec<f64>,
        #[serde(default = "default_order")]
        order: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_bottom: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BathymetrySpec {
    Constant {
        h: f64,
    },
    Linear {
        h0: f64,
        gradient: [f64; 2],
    },
    /// `values` are ordered with `y` fastest.
    Gridded {
        x: Vec<f64>,
        y: Vec<f64>,
        values: Vec<f64>,
        #[serde(default = "default_order")]
        order: usize,
    },
}

/// Maps a TOML deserialization error onto the library error type.
pub(crate) fn toml_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    if let Some(rest) = msg.strip_prefix("missing field `") {
        if let Some(end) = rest.find('`') {
            return Error::MissingKey(rest[..end].to_string());
        }
    }
    Error::Parse(e.to_string())
}

#[derive(Deserialize)]
struct EnvironmentDocument {
    environment: EnvironmentSpec,
}

#[derive(Serialize)]
struct EnvironmentDocumentRef<'a> {
    environment: &'a EnvironmentSpec,
}

/// Parses the `[environment]` table of a TOML document and validates it.
pub fn load_environment<T: Real>(text: &str) -> Result<Waveguide<T>> {
    let table: toml::Table = text.parse().map_err(toml_error)?;
    if !table.contains_key("environment") {
        return Err(Error::MissingKey("environment".into()));
    }
    let doc: EnvironmentDocument = toml::from_str(text).map_err(toml_error)?;
    Waveguide::from_spec(&doc.environment)
}

/// Inverse of [`load_environment`].
pub fn serialize_environment<T: Real>(env: &Waveguide<T>) -> String {
    toml::to_string(&EnvironmentDocumentRef {
        environment: &env.to_spec(),
    })
    .expect("environment spec serializes")
}

/// Free-function form of [`Waveguide::eval_index`].
pub fn eval_index<T: Real>(env: &Waveguide<T>, x: T, y: T, z: T) -> Result<T> {
    env.eval_index(x, y, z)
}
