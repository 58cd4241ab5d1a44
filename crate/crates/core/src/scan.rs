//! Grid scans over the two plate thicknesses ("navigation maps").

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::optics::DispersionModel;
use crate::protocol::{
    b_matrix, completeness, instrument_matrix, ProtocolSpec, Schedule, Wavelengths, DEFAULT_REL_THRESHOLD,
};
use crate::reconstruction::trial_fidelity;
use crate::states::{information_loss, PureQuquart};

/// Default thickness step for information-loss scans, mm.
pub const DEFAULT_LOSS_STEP_MM: f64 = 0.02;
/// Default trials per cell for information-loss scans.
pub const DEFAULT_LOSS_TRIALS: usize = 25;

/// Evenly spaced thicknesses `min + i * step`, `i = 0 ..= floor((max - min) / step)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl AxisRange {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self> {
        let r = Self { min, max, step };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("step must be positive, got {}", self.step)));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.max >= self.min) {
            return Err(Error::Config(format!("bad range [{}, {}]", self.min, self.max)));
        }
        if self.len() > 1_000_000 {
            return Err(Error::Config("range has too many points".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        // the epsilon absorbs representation error in (max - min) / step
        ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, i: usize) -> f64 {
        self.min + i as f64 * self.step
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }
}

/// Everything of a protocol except the plate thicknesses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTemplate {
    pub schedule: Schedule,
    pub wavelengths: Wavelengths,
    pub dispersion: DispersionModel,
}

impl Default for ProtocolTemplate {
    fn default() -> Self {
        Self {
            schedule: Schedule::Standard144,
            wavelengths: Wavelengths::default(),
            dispersion: DispersionModel::QuartzSellmeier,
        }
    }
}

impl ProtocolTemplate {
    pub fn spec(&self, plate1_mm: f64, plate2_mm: f64) -> Result<ProtocolSpec> {
        ProtocolSpec::new(
            plate1_mm,
            plate2_mm,
            self.schedule.clone(),
            self.wavelengths,
            self.dispersion,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanKind {
    Ratio,
    InfoLoss,
}

/// Settings of an information-loss scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossScanParams {
    pub true_state: PureQuquart,
    pub total_events: u64,
    pub n_trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub kind: ScanKind,
    pub h1: AxisRange,
    pub h2: AxisRange,
    /// Row-major, `h1` index outer.
    pub values: Vec<f64>,
    pub template: ProtocolTemplate,
    pub loss_params: Option<LossScanParams>,
}

impl ScanGrid {
    pub fn shape(&self) -> (usize, usize) {
        (self.h1.len(), self.h2.len())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.h2.len() + j]
    }
}

/// Optimum of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub i: usize,
    pub j: usize,
    pub h1: f64,
    pub h2: f64,
    pub value: f64,
}

fn evaluate_cells<F>(h1: &AxisRange, h2: &AxisRange, cell: F) -> Result<Vec<f64>>
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    h1.validate()?;
    h2.validate()?;
    let (n1, n2) = (h1.len(), h2.len());
    (0..n1 * n2)
        .into_par_iter()
        .map(|idx| cell(idx / n2, idx % n2))
        .collect()
}

/// Completeness ratio of the protocol at every thickness pair.
pub fn scan_ratio(h1: AxisRange, h2: AxisRange, template: &ProtocolTemplate) -> Result<ScanGrid> {
    let values = evaluate_cells(&h1, &h2, |i, j| {
        let spec = template.spec(h1.value(i), h2.value(j))?;
        let b = b_matrix(&instrument_matrix(&spec)?);
        Ok(completeness(&b, DEFAULT_REL_THRESHOLD)?.ratio)
    })?;
    Ok(ScanGrid {
        kind: ScanKind::Ratio,
        h1,
        h2,
        values,
        template: template.clone(),
        loss_params: None,
    })
}

/// Average information loss `L = log10(1 / (1 - mean F))` at every
/// thickness pair, with `n_trials` simulated reconstructions per cell.
///
/// `1 - mean F` is floored at machine epsilon, capping `L` near 15.6 for
/// cells that reconstruct perfectly.
pub fn scan_info_loss(
    h1: AxisRange,
    h2: AxisRange,
    template: &ProtocolTemplate,
    params: &LossScanParams,
) -> Result<ScanGrid> {
    if params.n_trials == 0 {
        return Err(Error::domain("n_trials must be >= 1"));
    }
    let n2 = h2.len() as u64;
    let values = evaluate_cells(&h1, &h2, |i, j| {
        let spec = template.spec(h1.value(i), h2.value(j))?;
        let x = instrument_matrix(&spec)?;
        let cell_seed = derive_seed(params.seed, i as u64 * n2 + j as u64);
        let mut sum = 0.0;
        for t in 0..params.n_trials {
            sum += trial_fidelity(
                &params.true_state,
                &x,
                params.total_events,
                derive_seed(cell_seed, t as u64),
            )?;
        }
        let mean = (sum / params.n_trials as f64).min(1.0 - f64::EPSILON);
        information_loss(mean)
    })?;
    Ok(ScanGrid {
        kind: ScanKind::InfoLoss,
        h1,
        h2,
        values,
        template: template.clone(),
        loss_params: Some(params.clone()),
    })
}

/// Largest cell; ties go to the smallest `i`, then `j`.
pub fn find_optimum(grid: &ScanGrid) -> Result<Optimum> {
    let n2 = grid.h2.len();
    let mut best: Option<(usize, f64)> = None;
    for (idx, &v) in grid.values.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((idx, v));
        }
    }
    let (idx, value) = best.ok_or(Error::EmptyGrid)?;
    let (i, j) = (idx / n2, idx % n2);
    Ok(Optimum {
        i,
        j,
        h1: grid.h1.value(i),
        h2: grid.h2.value(j),
        value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(values: Vec<f64>, n1: usize, n2: usize) -> ScanGrid {
        ScanGrid {
            kind: ScanKind::Ratio,
            h1: AxisRange::new(0.8, 0.8 + 0.1 * (n1 as f64 - 1.0), 0.1).unwrap(),
            h2: AxisRange::new(0.5, 0.5 + 0.1 * (n2 as f64 - 1.0), 0.1).unwrap(),
            values,
            template: ProtocolTemplate::default(),
            loss_params: None,
        }
    }

    #[test]
    fn axis_lengths() {
        assert_eq!(AxisRange::new(0.8, 1.0, 0.002).unwrap().len(), 101);
        assert_eq!(AxisRange::new(0.5, 1.0, 0.002).unwrap().len(), 251);
        assert_eq!(AxisRange::new(0.8, 1.0, 0.1).unwrap().len(), 3);
        assert_eq!(AxisRange::new(0.5, 1.0, 0.1).unwrap().len(), 6);
        assert_eq!(AxisRange::new(0.8, 1.0, 0.02).unwrap().len(), 11);
        assert_eq!(AxisRange::new(0.9, 0.9, 0.1).unwrap().len(), 1);
        assert!(AxisRange::new(0.8, 1.0, 0.0).is_err());
        assert!(AxisRange::new(1.0, 0.8, 0.1).is_err());
    }

    #[test]
    fn optimum_tie_break_and_single_cell() {
        let g = tiny(vec![0.5; 6], 2, 3);
        let o = find_optimum(&g).unwrap();
        assert_eq!((o.i, o.j), (0, 0));
        let g = tiny(vec![0.1, 0.3, 0.2, 0.3, 0.0, 0.1], 2, 3);
        let o = find_optimum(&g).unwrap();
        assert_eq!((o.i, o.j, o.value), (0, 1, 0.3));
        let g = tiny(vec![0.7], 1, 1);
        assert_eq!(find_optimum(&g).unwrap().value, 0.7);
        let g = tiny(vec![], 1, 1);
        assert!(matches!(find_optimum(&g), Err(Error::EmptyGrid)));
    }

    #[test]
    fn zero_birefringence_scan_is_all_zero() {
        let template = ProtocolTemplate {
            dispersion: DispersionModel::FixedDeltaN { delta_n: 0.0 },
            ..ProtocolTemplate::default()
        };
        let g = scan_ratio(
            AxisRange::new(0.8, 1.0, 0.1).unwrap(),
            AxisRange::new(0.5, 1.0, 0.1).unwrap(),
            &template,
        )
        .unwrap();
        assert_eq!(g.shape(), (3, 6));
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn halving_step_keeps_shared_points() {
        let t = ProtocolTemplate::default();
        let coarse = scan_ratio(
            AxisRange::new(0.9, 0.94, 0.02).unwrap(),
            AxisRange::new(0.6, 0.64, 0.02).unwrap(),
            &t,
        )
        .unwrap();
        let fine = scan_ratio(
            AxisRange::new(0.9, 0.94, 0.01).unwrap(),
            AxisRange::new(0.6, 0.64, 0.01).unwrap(),
            &t,
        )
        .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(coarse.get(i, j), fine.get(2 * i, 2 * j));
            }
        }
        assert!(coarse.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
