//! Measurement schedules, the instrumental matrix and protocol completeness.
//!
//! A measurement sends the biphoton through plate Wp1 (angle `theta1`), then
//! plate Wp2 (angle `theta2`), then projects both photons onto vertical
//! polarization. The amplitude of that coincidence event is linear in the
//! state amplitudes, `M_j = X_j . c`, and the stacked rows `X_j` form the
//! instrumental matrix.
//!
//! Completeness is judged on `B`, whose row `j` is `X_j (x) X_j^*`: the
//! protocol can reconstruct an arbitrary (mixed) ququart iff `B` has 16
//! nonzero singular values, and `ratio = sigma_min / sigma_max` scores how
//! well conditioned it is. The ratio depends on the plates and schedule only.

use nalgebra::{DMatrix, Matrix4};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optics::{biphoton_transform, jones_su2, DispersionModel, Waveplate, IDLER_NM, SIGNAL_NM};
use crate::C64;

/// Plate-1 angles of the standard schedule, degrees.
pub const STANDARD_THETA1_DEG: [f64; 4] = [0.0, 15.0, 30.0, 45.0];
/// Plate-2 angle step of the standard schedule, degrees (full turn).
pub const STANDARD_THETA2_STEP_DEG: f64 = 10.0;
/// Default relative threshold for counting a singular value as nonzero.
pub const DEFAULT_REL_THRESHOLD: f64 = 1e-10;
/// Hilbert-space dimension of a ququart and of `B`'s column space.
pub const DIM: usize = 4;
pub const DIM_SQ: usize = DIM * DIM;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wavelengths {
    pub signal_nm: f64,
    pub idler_nm: f64,
}

impl Default for Wavelengths {
    fn default() -> Self {
        Self {
            signal_nm: SIGNAL_NM,
            idler_nm: IDLER_NM,
        }
    }
}

/// Plate orientations for one measurement, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setting {
    pub theta1: f64,
    pub theta2: f64,
}

impl Setting {
    pub fn from_degrees(theta1_deg: f64, theta2_deg: f64) -> Self {
        Self {
            theta1: theta1_deg.to_radians(),
            theta2: theta2_deg.to_radians(),
        }
    }
}

/// Ordered list of plate orientations, kept in degrees as entered.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// Wp1 at 0, 15, 30, 45 degrees; for each, Wp2 through 0..350 in 10 degree steps.
    Standard144,
    /// Explicit `(theta1_deg, theta2_deg)` pairs.
    Explicit(Vec<(f64, f64)>),
}

impl Schedule {
    pub fn degrees(&self) -> Vec<(f64, f64)> {
        match self {
            Schedule::Standard144 => STANDARD_THETA1_DEG
                .iter()
                .flat_map(|&t1| (0..36).map(move |k| (t1, k as f64 * STANDARD_THETA2_STEP_DEG)))
                .collect(),
            Schedule::Explicit(pairs) => pairs.clone(),
        }
    }

    pub fn settings(&self) -> Vec<Setting> {
        self.degrees()
            .into_iter()
            .map(|(a, b)| Setting::from_degrees(a, b))
            .collect()
    }

    pub fn len(&self) -> usize {
        match self {
            Schedule::Standard144 => 144,
            Schedule::Explicit(pairs) => pairs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ScheduleRepr {
    Named(String),
    Explicit(Vec<[f64; 2]>),
}

impl Serialize for Schedule {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Schedule::Standard144 => ScheduleRepr::Named("standard-144".into()),
            Schedule::Explicit(p) => ScheduleRepr::Explicit(p.iter().map(|&(a, b)| [a, b]).collect()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Schedule {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match ScheduleRepr::deserialize(deserializer)? {
            ScheduleRepr::Named(name) if name == "standard-144" => Ok(Schedule::Standard144),
            ScheduleRepr::Named(name) => Err(D::Error::custom(format!("unknown schedule {name:?}"))),
            ScheduleRepr::Explicit(p) => Ok(Schedule::Explicit(p.into_iter().map(|[a, b]| (a, b)).collect())),
        }
    }
}

/// Everything that determines the instrumental matrix.
///
/// Serializes to the protocol JSON file:
/// `{"plate1_mm", "plate2_mm", "lambda_s_nm", "lambda_i_nm", "dispersion", "schedule"}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSpec {
    pub plate1: Waveplate,
    pub plate2: Waveplate,
    pub schedule: Schedule,
    pub wavelengths: Wavelengths,
    pub dispersion: DispersionModel,
}

#[derive(Serialize, Deserialize)]
struct ProtocolRepr {
    plate1_mm: f64,
    plate2_mm: f64,
    #[serde(default = "default_signal")]
    lambda_s_nm: f64,
    #[serde(default = "default_idler")]
    lambda_i_nm: f64,
    #[serde(default)]
    dispersion: DispersionModel,
    #[serde(default = "default_schedule")]
    schedule: Schedule,
}

fn default_signal() -> f64 {
    SIGNAL_NM
}
fn default_idler() -> f64 {
    IDLER_NM
}
fn default_schedule() -> Schedule {
    Schedule::Standard144
}

impl Serialize for ProtocolSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ProtocolRepr {
            plate1_mm: self.plate1.thickness_mm(),
            plate2_mm: self.plate2.thickness_mm(),
            lambda_s_nm: self.wavelengths.signal_nm,
            lambda_i_nm: self.wavelengths.idler_nm,
            dispersion: self.dispersion,
            schedule: self.schedule.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ProtocolSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = ProtocolRepr::deserialize(deserializer)?;
        ProtocolSpec::new(
            r.plate1_mm,
            r.plate2_mm,
            r.schedule,
            Wavelengths {
                signal_nm: r.lambda_s_nm,
                idler_nm: r.lambda_i_nm,
            },
            r.dispersion,
        )
        .map_err(D::Error::custom)
    }
}

impl ProtocolSpec {
    pub fn new(
        plate1_mm: f64,
        plate2_mm: f64,
        schedule: Schedule,
        wavelengths: Wavelengths,
        dispersion: DispersionModel,
    ) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::Config("schedule has no settings".into()));
        }
        if let Schedule::Explicit(p) = &schedule {
            if p.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
                return Err(Error::Config("schedule angles must be finite".into()));
            }
        }
        dispersion.validate()?;
        let spec = Self {
            plate1: Waveplate::new(plate1_mm, "Wp1")?,
            plate2: Waveplate::new(plate2_mm, "Wp2")?,
            schedule,
            wavelengths,
            dispersion,
        };
        // Surfaces wavelength-range errors at construction time.
        spec.phases()?;
        Ok(spec)
    }

    pub fn settings(&self) -> Vec<Setting> {
        self.schedule.settings()
    }

    pub fn len(&self) -> usize {
        self.schedule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schedule.is_empty()
    }

    pub fn phases(&self) -> Result<PlatePhases> {
        let Wavelengths { signal_nm, idler_nm } = self.wavelengths;
        Ok(PlatePhases {
            plate1_signal: self.plate1.phase(signal_nm, &self.dispersion)?,
            plate1_idler: self.plate1.phase(idler_nm, &self.dispersion)?,
            plate2_signal: self.plate2.phase(signal_nm, &self.dispersion)?,
            plate2_idler: self.plate2.phase(idler_nm, &self.dispersion)?,
        })
    }

    /// Hex SHA-256 of the canonical JSON form; ties data files to a protocol.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("protocol spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// The standard 144-setting protocol for a pair of plates.
pub fn standard_protocol(
    plate1_mm: f64,
    plate2_mm: f64,
    wavelengths: Wavelengths,
    dispersion: DispersionModel,
) -> Result<ProtocolSpec> {
    ProtocolSpec::new(plate1_mm, plate2_mm, Schedule::Standard144, wavelengths, dispersion)
}

/// Retardation phases of both plates at both wavelengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlatePhases {
    pub plate1_signal: f64,
    pub plate1_idler: f64,
    pub plate2_signal: f64,
    pub plate2_idler: f64,
}

impl PlatePhases {
    /// Two-photon operator for one setting: Wp1 acts first, then Wp2.
    pub fn transform(&self, setting: Setting) -> Matrix4<C64> {
        let g1 = biphoton_transform(self.plate1_signal, self.plate1_idler, setting.theta1);
        let g2 = biphoton_transform(self.plate2_signal, self.plate2_idler, setting.theta2);
        g2 * g1
    }

    /// `X_j = 1/2 <VV| G2 G1 |n>`; the 1/2 is the beamsplitter's share of
    /// pairs that split into the two detector arms.
    pub fn row(&self, setting: Setting) -> [C64; 4] {
        let m = self.transform(setting);
        [0, 1, 2, 3].map(|n| m[(3, n)] * 0.5)
    }

    /// Closed-form row `1/2 (a_s a_i, a_s b_i, b_s a_i, b_s b_i)` with
    /// `a = -t1* r2 - r1 t2`, `b = -r1* r2 + t1 t2`, coded as published.
    ///
    /// The published form is the complex conjugate of [`PlatePhases::row`];
    /// conjugating every row leaves the singular values of `B` unchanged.
    pub fn closed_form_row(&self, setting: Setting) -> [C64; 4] {
        let coeffs = |d1: f64, d2: f64| {
            let p1 = jones_su2(d1, setting.theta1);
            let p2 = jones_su2(d2, setting.theta2);
            let alpha = -p1.t.conj() * p2.r - p1.r * p2.t;
            let beta = -p1.r.conj() * p2.r + p1.t * p2.t;
            (alpha, beta)
        };
        let (a_s, b_s) = coeffs(self.plate1_signal, self.plate2_signal);
        let (a_i, b_i) = coeffs(self.plate1_idler, self.plate2_idler);
        [a_s * a_i, a_s * b_i, b_s * a_i, b_s * b_i].map(|v| v * 0.5)
    }
}

/// Row `j` of the instrumental matrix.
pub fn row(spec: &ProtocolSpec, j: usize) -> Result<[C64; 4]> {
    let settings = spec.settings();
    let setting = *settings.get(j).ok_or(Error::IndexOutOfRange {
        index: j,
        len: settings.len(),
    })?;
    Ok(spec.phases()?.row(setting))
}

/// The `m x 4` matrix mapping state amplitudes to process amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentMatrix {
    x: DMatrix<C64>,
    spec: Option<ProtocolSpec>,
}

impl InstrumentMatrix {
    /// Build from bare rows, without a protocol behind them.
    pub fn from_rows(rows: &[[C64; 4]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::DegenerateInput("instrumental matrix needs at least one row".into()));
        }
        Ok(Self {
            x: DMatrix::from_fn(rows.len(), DIM, |j, n| rows[j][n]),
            spec: None,
        })
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.x
    }

    pub fn spec(&self) -> Option<&ProtocolSpec> {
        self.spec.as_ref()
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn row(&self, j: usize) -> [C64; 4] {
        [0, 1, 2, 3].map(|n| self.x[(j, n)])
    }

    /// Process amplitudes `X c` for raw (not necessarily normalized) amplitudes.
    pub fn amplitudes(&self, c: &[C64; 4]) -> Vec<C64> {
        (0..self.rows())
            .map(|j| {
                let mut acc = C64::new(0.0, 0.0);
                for n in 0..DIM {
                    acc += self.x[(j, n)] * c[n];
                }
                acc
            })
            .collect()
    }

    /// Unnormalized projection probabilities `|X_j c|^2`.
    pub fn probabilities(&self, c: &[C64; 4]) -> Vec<f64> {
        self.amplitudes(c).into_iter().map(|a| a.norm_sqr()).collect()
    }

    /// `X^dagger X`, the 4x4 Gram matrix.
    pub fn gram(&self) -> Matrix4<C64> {
        let mut g = Matrix4::zeros();
        for j in 0..self.rows() {
            let r = self.row(j);
            for a in 0..DIM {
                for b in 0..DIM {
                    g[(a, b)] += r[a].conj() * r[b];
                }
            }
        }
        g
    }
}

/// Stack the rows of every setting in schedule order.
pub fn instrument_matrix(spec: &ProtocolSpec) -> Result<InstrumentMatrix> {
    let phases = spec.phases()?;
    let rows: Vec<[C64; 4]> = spec.settings().into_iter().map(|s| phases.row(s)).collect();
    let mut x = InstrumentMatrix::from_rows(&rows)?;
    x.spec = Some(spec.clone());
    Ok(x)
}

/// `m x 16` matrix with rows `X_j (x) X_j^*`; entry `4a + b` is `X_ja X_jb^*`.
pub fn b_matrix(x: &InstrumentMatrix) -> DMatrix<C64> {
    let m = x.matrix();
    DMatrix::from_fn(m.nrows(), DIM_SQ, |j, k| {
        m[(j, k / DIM)] * m[(j, k % DIM)].conj()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessReport {
    /// Descending; zero-padded to 16 when `B` has fewer rows.
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub ratio: f64,
    pub complete: bool,
}

/// Singular-value diagnostics of `B`. A singular value counts as nonzero
/// when it exceeds `rel_threshold * sigma_max`.
pub fn completeness(b: &DMatrix<C64>, rel_threshold: f64) -> Result<CompletenessReport> {
    if b.nrows() == 0 || b.ncols() != DIM_SQ {
        return Err(Error::DegenerateInput(format!(
            "B must be m x {DIM_SQ} with m >= 1, got {} x {}",
            b.nrows(),
            b.ncols()
        )));
    }
    if b.iter().all(|v| *v == C64::new(0.0, 0.0)) {
        return Err(Error::DegenerateInput("B is identically zero".into()));
    }
    let mut sv: Vec<f64> = b.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.resize(DIM_SQ, 0.0);
    let sigma_max = sv[0];
    let rank = sv.iter().filter(|&&s| s > rel_threshold * sigma_max).count();
    let complete = rank == DIM_SQ;
    let ratio = if complete {
        (sv[DIM_SQ - 1] / sigma_max).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(CompletenessReport {
        singular_values: sv,
        rank,
        ratio,
        complete,
    })
}

/// Completeness of a protocol, straight from its spec.
pub fn protocol_completeness(spec: &ProtocolSpec) -> Result<CompletenessReport> {
    completeness(&b_matrix(&instrument_matrix(spec)?), DEFAULT_REL_THRESHOLD)
}
