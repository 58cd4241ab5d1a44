//! Birefringent plates: retardation phase, single-photon Jones matrices and
//! the two-photon transform of a plate acting on both photons of a pair.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::states::PureQuquart;
use crate::C64;

/// Default signal wavelength in nm.
pub const SIGNAL_NM: f64 = 702.0;
/// Default idler wavelength in nm.
pub const IDLER_NM: f64 = 605.0;
/// Pump wavelength of the down-conversion source in nm.
pub const PUMP_NM: f64 = 325.0;

/// Two-term Sellmeier fit `n^2 = A + B l^2/(l^2 - C) + D l^2/(l^2 - E)`, `l` in um.
#[derive(Debug, Clone, Copy)]
struct Sellmeier {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    e: f64,
}

impl Sellmeier {
    fn index(&self, wavelength_um: f64) -> f64 {
        let l2 = wavelength_um * wavelength_um;
        (self.a + self.b * l2 / (l2 - self.c) + self.d * l2 / (l2 - self.e)).sqrt()
    }
}

// Crystalline quartz, G. Ghosh, "Dispersion-equation coefficients for the
// refractive index and birefringence of calcite and quartz crystals",
// Opt. Commun. 163, 95-102 (1999). Valid 0.198-2.05 um.
const QUARTZ_ORDINARY: Sellmeier = Sellmeier {
    a: 1.286_041_41,
    b: 1.070_440_83,
    c: 1.005_859_97e-2,
    d: 1.102_022_42,
    e: 100.0,
};
const QUARTZ_EXTRAORDINARY: Sellmeier = Sellmeier {
    a: 1.288_518_04,
    b: 1.095_099_24,
    c: 1.021_018_64e-2,
    d: 1.156_624_75,
    e: 100.0,
};
const QUARTZ_RANGE_NM: (f64, f64) = (198.0, 2050.0);

/// Wavelength -> birefringence `dn = n_o - n_e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum DispersionModel {
    /// Crystalline quartz with literature Sellmeier coefficients.
    QuartzSellmeier,
    /// Wavelength-independent birefringence.
    FixedDeltaN { delta_n: f64 },
}

impl Default for DispersionModel {
    fn default() -> Self {
        DispersionModel::QuartzSellmeier
    }
}

impl DispersionModel {
    pub fn valid_range_nm(&self) -> (f64, f64) {
        match self {
            DispersionModel::QuartzSellmeier => QUARTZ_RANGE_NM,
            DispersionModel::FixedDeltaN { .. } => (f64::MIN_POSITIVE, f64::INFINITY),
        }
    }

    /// `n_o - n_e` at `wavelength_nm`.
    pub fn birefringence(&self, wavelength_nm: f64) -> Result<f64> {
        let (lo, hi) = self.valid_range_nm();
        if !(wavelength_nm >= lo && wavelength_nm <= hi) {
            return Err(Error::domain(format!(
                "wavelength {wavelength_nm} nm outside dispersion model range [{lo}, {hi}] nm"
            )));
        }
        Ok(match *self {
            DispersionModel::QuartzSellmeier => {
                let um = wavelength_nm * 1e-3;
                QUARTZ_ORDINARY.index(um) - QUARTZ_EXTRAORDINARY.index(um)
            }
            DispersionModel::FixedDeltaN { delta_n } => delta_n,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DispersionModel::FixedDeltaN { delta_n } if !delta_n.is_finite() => Err(
                Error::Config(format!("fixed-delta-n needs a finite delta_n, got {delta_n}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Retardation phase `delta = pi * dn(lambda) * h / lambda` of a plate of
/// thickness `thickness_mm` at `wavelength_nm`.
///
/// This is half the full retardation, so `delta = pi/2` is a half-wave plate.
/// The phase is never folded modulo `pi`.
pub fn optical_phase(thickness_mm: f64, wavelength_nm: f64, model: &DispersionModel) -> Result<f64> {
    if !(thickness_mm > 0.0 && thickness_mm.is_finite()) {
        return Err(Error::domain(format!(
            "plate thickness must be positive, got {thickness_mm} mm"
        )));
    }
    let dn = model.birefringence(wavelength_nm)?;
    // mm -> nm
    Ok(PI * dn * (thickness_mm * 1e6) / wavelength_nm)
}

/// A birefringent plate of known thickness; its orientation is chosen per
/// measurement, not stored here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveplate {
    thickness_mm: f64,
    label: String,
}

impl Waveplate {
    pub fn new(thickness_mm: f64, label: impl Into<String>) -> Result<Self> {
        if !(thickness_mm > 0.0 && thickness_mm < 100.0) {
            return Err(Error::domain(format!(
                "plate thickness must lie in (0, 100) mm, got {thickness_mm}"
            )));
        }
        Ok(Self {
            thickness_mm,
            label: label.into(),
        })
    }

    pub fn thickness_mm(&self) -> f64 {
        self.thickness_mm
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn phase(&self, wavelength_nm: f64, model: &DispersionModel) -> Result<f64> {
        optical_phase(self.thickness_mm, wavelength_nm, model)
    }
}

/// Single-photon SU(2) plate transform `[[t, r], [-r*, t*]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesMatrix2 {
    pub t: C64,
    pub r: C64,
}

impl JonesMatrix2 {
    pub fn matrix(&self) -> Matrix2<C64> {
        Matrix2::new(self.t, self.r, -self.r.conj(), self.t.conj())
    }

    /// Row of the matrix selected by a vertical polarizer: `(-r*, t*)`.
    pub fn vertical_row(&self) -> [C64; 2] {
        [-self.r.conj(), self.t.conj()]
    }
}

/// Effective transmission `t = cos d + i sin d cos 2th` and reflection
/// `r = i sin d sin 2th` of a plate with phase `delta` at angle `theta`.
pub fn jones_su2(delta: f64, theta: f64) -> JonesMatrix2 {
    let (sin_d, cos_d) = delta.sin_cos();
    let (sin_2t, cos_2t) = (2.0 * theta).sin_cos();
    JonesMatrix2 {
        t: C64::new(cos_d, sin_d * cos_2t),
        r: C64::new(0.0, sin_d * sin_2t),
    }
}

/// Kronecker product of two 2x2 matrices, signal factor first.
pub fn kron2(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Matrix4<C64> {
    a.kronecker(b).fixed_view::<4, 4>(0, 0).into_owned()
}

/// One plate acting on both photons: `jones(delta_s, theta) (x) jones(delta_i, theta)`.
pub fn biphoton_transform(delta_s: f64, delta_i: f64, theta: f64) -> Matrix4<C64> {
    kron2(
        &jones_su2(delta_s, theta).matrix(),
        &jones_su2(delta_i, theta).matrix(),
    )
}

/// Pass the source state `|VV>` through a plate of thickness `thickness_mm`
/// at orientation `alpha`, returning the canonical product state.
pub fn prepare_product_state(
    thickness_mm: f64,
    alpha: f64,
    signal_nm: f64,
    idler_nm: f64,
    model: &DispersionModel,
) -> Result<PureQuquart> {
    let ds = optical_phase(thickness_mm, signal_nm, model)?;
    let di = optical_phase(thickness_mm, idler_nm, model)?;
    let g = biphoton_transform(ds, di, alpha);
    let col = g.column(3);
    PureQuquart::normalize([col[0], col[1], col[2], col[3]])
}
