//! Pure ququart states, coherency matrices and state-quality metrics.

use nalgebra::Matrix4;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::C64;

/// Basis labels in storage order: signal polarization first, idler second.
pub const BASIS: [&str; 4] = ["HH", "HV", "VH", "VV"];

/// Amplitudes below this modulus never fix the global phase.
const GAUGE_EPS: f64 = 1e-9;
const ZERO_NORM: f64 = 1e-300;

/// A normalized pure polarization state of a biphoton,
/// `c1|HH> + c2|HV> + c3|VH> + c4|VV>`.
///
/// Always stored in the canonical gauge: the first amplitude with modulus
/// above `1e-9` is real and non-negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PureQuquart {
    amps: [C64; 4],
}

impl PureQuquart {
    /// Scale `raw` to unit norm and remove its global phase.
    pub fn normalize(raw: [C64; 4]) -> Result<Self> {
        let norm_sqr: f64 = raw.iter().map(|c| c.norm_sqr()).sum();
        if !norm_sqr.is_finite() || norm_sqr <= ZERO_NORM {
            return Err(Error::ZeroVector);
        }
        let norm = norm_sqr.sqrt();
        let mut amps = raw.map(|c| c / norm);
        if let Some(lead) = amps.iter().find(|c| c.norm() > GAUGE_EPS) {
            let phase = lead.conj() / lead.norm();
            for c in amps.iter_mut() {
                *c *= phase;
            }
        }
        Ok(Self { amps })
    }

    /// Convenience constructor from `(re, im)` pairs.
    pub fn from_pairs(pairs: [(f64, f64); 4]) -> Result<Self> {
        Self::normalize(pairs.map(|(re, im)| C64::new(re, im)))
    }

    /// Basis state `index` in `HH, HV, VH, VV` order.
    ///
    /// # Panics
    /// If `index >= 4`.
    pub fn basis(index: usize) -> Self {
        let mut amps = [C64::new(0.0, 0.0); 4];
        amps[index] = C64::new(1.0, 0.0);
        Self { amps }
    }

    pub fn amplitudes(&self) -> &[C64; 4] {
        &self.amps
    }

    /// `|<self|other>|^2`.
    pub fn fidelity(&self, other: &PureQuquart) -> f64 {
        fidelity(self, other)
    }

    pub fn coherency(&self) -> CoherencyMatrix {
        coherency_from_pure(self)
    }

    /// Modulus of the determinant of the 2x2 amplitude matrix
    /// `[[c1, c2], [c3, c4]]`; zero exactly for product states.
    pub fn product_defect(&self) -> f64 {
        let a = &self.amps;
        (a[0] * a[3] - a[1] * a[2]).norm()
    }
}

/// Fidelity `|<a|b>|^2` between two normalized states.
pub fn fidelity(a: &PureQuquart, b: &PureQuquart) -> f64 {
    let overlap: C64 = a
        .amps
        .iter()
        .zip(b.amps.iter())
        .map(|(x, y)| x.conj() * y)
        .sum();
    overlap.norm_sqr().min(1.0)
}

#[derive(Serialize, Deserialize)]
struct StateRepr {
    amplitudes: Vec<[f64; 2]>,
    basis: String,
}

impl Serialize for PureQuquart {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        StateRepr {
            amplitudes: self.amps.iter().map(|c| [c.re, c.im]).collect(),
            basis: BASIS.join(","),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PureQuquart {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = StateRepr::deserialize(deserializer)?;
        if repr.basis.replace(' ', "") != BASIS.join(",") {
            return Err(D::Error::custom(format!(
                "unsupported basis order {:?}",
                repr.basis
            )));
        }
        if repr.amplitudes.len() != 4 {
            return Err(D::Error::custom("expected 4 amplitudes"));
        }
        let mut raw = [C64::new(0.0, 0.0); 4];
        for (dst, [re, im]) in raw.iter_mut().zip(repr.amplitudes) {
            *dst = C64::new(re, im);
        }
        PureQuquart::normalize(raw).map_err(D::Error::custom)
    }
}

/// The 4x4 matrix of fourth-order field moments, equal to the polarization
/// density matrix of the biphoton. Entry `(i, j)` is `<c_i^* c_j>`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherencyMatrix {
    k: Matrix4<C64>,
}

impl CoherencyMatrix {
    pub fn matrix(&self) -> &Matrix4<C64> {
        &self.k
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.k[(row, col)]
    }

    pub fn trace(&self) -> C64 {
        self.k.trace()
    }

    /// Largest entrywise deviation from Hermiticity.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..4 {
            for j in 0..4 {
                worst = worst.max((self.k[(i, j)] - self.k[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> [f64; 4] {
        let eig = self.k.symmetric_eigen();
        let mut vals = [0.0; 4];
        for (v, e) in vals.iter_mut().zip(eig.eigenvalues.iter()) {
            *v = *e;
        }
        vals.sort_by(|a, b| b.total_cmp(a));
        vals
    }
}

/// Build `K4` from a pure state: entry `(i, j) = c_i^* c_j`.
pub fn coherency_from_pure(s: &PureQuquart) -> CoherencyMatrix {
    let c = s.amps;
    CoherencyMatrix {
        k: Matrix4::from_fn(|i, j| c[i].conj() * c[j]),
    }
}

/// Average information loss `log10(1 / (1 - F))` for a mean fidelity `F`.
pub fn information_loss(mean_fidelity: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&mean_fidelity) {
        return Err(Error::domain(format!(
            "information loss needs mean fidelity in [0, 1), got {mean_fidelity}"
        )));
    }
    Ok(-(1.0 - mean_fidelity).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Pure,
    Mixed,
}

/// Number of real parameters fixing a `d`-dimensional state.
pub fn parameter_count(d: usize, kind: StateKind) -> Result<usize> {
    if d < 2 {
        return Err(Error::domain(format!("dimension must be >= 2, got {d}")));
    }
    Ok(match kind {
        StateKind::Pure => 2 * d - 2,
        StateKind::Mixed => d * d - 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn assert_state(s: &PureQuquart, expected: [C64; 4]) {
        for (a, b) in s.amplitudes().iter().zip(expected) {
            assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-12);
            assert_abs_diff_eq!(a.im, b.im, epsilon = 1e-12);
        }
    }

    const Z: C64 = C64::new(0.0, 0.0);

    #[test]
    fn normalize_examples() {
        let s = PureQuquart::normalize([c(2.0, 0.0), Z, Z, Z]).unwrap();
        assert_state(&s, [c(1.0, 0.0), Z, Z, Z]);
        let s = PureQuquart::normalize([Z, Z, Z, c(0.0, 1.0)]).unwrap();
        assert_state(&s, [Z, Z, Z, c(1.0, 0.0)]);
        let s = PureQuquart::normalize([c(1.0, 0.0), Z, Z, c(1.0, 0.0)]).unwrap();
        assert_state(&s, [c(FRAC_1_SQRT_2, 0.0), Z, Z, c(FRAC_1_SQRT_2, 0.0)]);
    }

    #[test]
    fn normalize_rejects_zero() {
        assert!(matches!(
            PureQuquart::normalize([Z; 4]),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            PureQuquart::normalize([c(1e-200, 0.0), Z, Z, Z]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn gauge_skips_tiny_leading_amplitude() {
        let s = PureQuquart::normalize([c(1e-12, 0.0), c(0.0, -1.0), Z, Z]).unwrap();
        let a = s.amplitudes();
        assert_abs_diff_eq!(a[1].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[1].im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn coherency_examples() {
        let k = PureQuquart::basis(0).coherency();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == 0 && j == 0 { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(k.get(i, j).re, want, epsilon = 1e-15);
                assert_abs_diff_eq!(k.get(i, j).im, 0.0, epsilon = 1e-15);
            }
        }

        let bell = PureQuquart::normalize([c(1.0, 0.0), Z, Z, c(1.0, 0.0)]).unwrap();
        let k = bell.coherency();
        // A, D and G of the moment table
        assert_abs_diff_eq!(k.get(0, 0).re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(k.get(3, 3).re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(k.get(0, 3).re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(k.get(1, 1).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k.get(1, 2).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn coherency_moment_layout() {
        let s = PureQuquart::normalize([c(0.3, 0.0), c(0.1, 0.4), c(-0.2, 0.5), c(0.6, -0.1)])
            .unwrap();
        let a = *s.amplitudes();
        let k = s.coherency();
        // E = c1* c2 sits in row 1, column 2; L = c3* c4 in row 3, column 4.
        assert_abs_diff_eq!((k.get(0, 1) - a[0].conj() * a[1]).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((k.get(2, 3) - a[2].conj() * a[3]).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((k.get(1, 0) - k.get(0, 1).conj()).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn fidelity_examples() {
        let a = PureQuquart::from_pairs([(0.3, 0.1), (0.2, -0.5), (0.0, 0.4), (0.7, 0.0)]).unwrap();
        assert_abs_diff_eq!(fidelity(&a, &a), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(
            fidelity(&PureQuquart::basis(0), &PureQuquart::basis(3)),
            0.0,
            epsilon = 1e-15
        );
        let phase = C64::from_polar(1.0, 1.234);
        let rotated = PureQuquart::normalize(a.amplitudes().map(|x| x * phase)).unwrap();
        assert_abs_diff_eq!(fidelity(&a, &rotated), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn information_loss_examples() {
        assert_abs_diff_eq!(information_loss(0.999).unwrap(), 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(information_loss(0.9).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(information_loss(0.0).unwrap(), 0.0, epsilon = 1e-15);
        assert!(matches!(information_loss(1.0), Err(Error::Domain(_))));
        assert!(matches!(information_loss(-0.1), Err(Error::Domain(_))));
        assert!(information_loss(f64::NAN).is_err());
    }

    #[test]
    fn parameter_count_examples() {
        assert_eq!(parameter_count(4, StateKind::Pure).unwrap(), 6);
        assert_eq!(parameter_count(4, StateKind::Mixed).unwrap(), 15);
        assert_eq!(parameter_count(2, StateKind::Pure).unwrap(), 2);
        assert!(parameter_count(1, StateKind::Mixed).is_err());
    }

    #[test]
    fn json_round_trip_uses_canonical_layout() {
        let s = PureQuquart::from_pairs([(0.0, 0.0), (0.0, 2.0), (1.0, 1.0), (0.0, 0.0)]).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"basis\":\"HH,HV,VH,VV\""));
        let back: PureQuquart = serde_json::from_str(&text).unwrap();
        assert!(fidelity(&s, &back) > 1.0 - 1e-15);
        assert!(serde_json::from_str::<PureQuquart>(
            r#"{"amplitudes":[[1,0],[0,0],[0,0],[0,0]],"basis":"VV,VH,HV,HH"}"#
        )
        .is_err());
    }

    fn arb_raw() -> impl Strategy<Value = [C64; 4]> {
        prop::array::uniform8(-1.0f64..1.0)
            .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
            .prop_map(|v| [0, 1, 2, 3].map(|i| C64::new(v[2 * i], v[2 * i + 1])))
    }

    proptest! {
        #[test]
        fn coherency_is_a_pure_density_matrix(raw in arb_raw()) {
            let s = PureQuquart::normalize(raw).unwrap();
            let k = s.coherency();
            prop_assert!(k.hermiticity_defect() <= 1e-12);
            prop_assert!((k.trace() - C64::new(1.0, 0.0)).norm() <= 1e-12);
            let eig = k.eigenvalues();
            prop_assert!(eig.iter().all(|&e| e >= -1e-10));
            prop_assert!(eig[1] <= 1e-10);
        }

        #[test]
        fn canonical_gauge_holds(raw in arb_raw()) {
            let s = PureQuquart::normalize(raw).unwrap();
            let norm: f64 = s.amplitudes().iter().map(|c| c.norm_sqr()).sum();
            prop_assert!((norm - 1.0).abs() <= 1e-12);
            let lead = s.amplitudes().iter().find(|c| c.norm() > 1e-9).unwrap();
            prop_assert!(lead.im.abs() <= 1e-15 && lead.re > 0.0);
        }

        #[test]
        fn fidelity_symmetric_and_phase_invariant(a in arb_raw(), b in arb_raw(), phi in 0.0f64..6.3) {
            let sa = PureQuquart::normalize(a).unwrap();
            let sb = PureQuquart::normalize(b).unwrap();
            let rot = C64::from_polar(1.0, phi);
            let sb_rot = PureQuquart::normalize(b.map(|x| x * rot)).unwrap();
            prop_assert!((fidelity(&sa, &sb) - fidelity(&sb, &sa)).abs() <= 1e-14);
            prop_assert!((fidelity(&sa, &sb) - fidelity(&sa, &sb_rot)).abs() <= 1e-12);
        }

        #[test]
        fn coherency_independent_of_positive_scale(raw in arb_raw(), scale in 1e-3f64..1e3) {
            let k1 = PureQuquart::normalize(raw).unwrap().coherency();
            let k2 = PureQuquart::normalize(raw.map(|x| x * scale)).unwrap().coherency();
            prop_assert!((k1.matrix() - k2.matrix()).norm() <= 1e-12);
        }

        #[test]
        fn information_loss_increasing(f1 in 0.0f64..0.999_999, f2 in 0.0f64..0.999_999) {
            prop_assume!(f1 < f2);
            prop_assert!(information_loss(f1).unwrap() < information_loss(f2).unwrap());
        }
    }
}
