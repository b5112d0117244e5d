//! Dynamic shape prior: canonical states keyed and thinned by Frobenius norm.

use nalgebra::Matrix3xX;

use crate::error::{Error, Result};
use crate::geom::{frobenius_norm, CameraPose, ShapeSequence};

/// Canonical 3D states ordered by strictly increasing Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicShapePrior {
    states: Vec<Matrix3xX<f64>>,
    norms: Vec<f64>,
    source_ids: Vec<usize>,
    mu: f64,
}

impl DynamicShapePrior {
    /// Assembles a prior from already ordered parts, checking every invariant.
    pub fn from_parts(
        states: Vec<Matrix3xX<f64>>,
        norms: Vec<f64>,
        source_ids: Vec<usize>,
        mu: f64,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::invalid("a shape prior needs at least one state"));
        }
        if norms.len() != states.len() || source_ids.len() != states.len() {
            return Err(Error::invalid("state, norm and source id counts differ"));
        }
        if !(mu >= 0.0) {
            return Err(Error::invalid(format!("mu must be nonnegative, got {mu}")));
        }
        let points = states[0].ncols();
        for (i, (state, &norm)) in states.iter().zip(&norms).enumerate() {
            if state.ncols() != points {
                return Err(Error::invalid("states disagree on the number of points"));
            }
            let actual = frobenius_norm(state)?;
            if (actual - norm).abs() > 1e-9 * actual.max(1.0) {
                return Err(Error::invalid(format!(
                    "stored norm {norm} of state {i} does not match its Frobenius norm {actual}"
                )));
            }
            if i > 0 && (norm <= norms[i - 1] || norm - norms[i - 1] < mu) {
                return Err(Error::invalid(format!("norm gap before state {i} violates mu = {mu}")));
            }
        }
        Ok(Self { states, norms, source_ids, mu })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn points(&self) -> usize {
        self.states[0].ncols()
    }

    pub fn states(&self) -> &[Matrix3xX<f64>] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &Matrix3xX<f64> {
        &self.states[i]
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// Index of the input frame each state was taken from.
    pub fn source_ids(&self) -> &[usize] {
        &self.source_ids
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Index of the state closest to `shape` in Frobenius distance (first on ties).
    pub fn nearest_state(&self, shape: &Matrix3xX<f64>) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, state) in self.states.iter().enumerate() {
            let d = (state - shape).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

/// Per-frame shapes in the solver's reference frame, shifted to zero
/// centroid and optionally re-oriented by one global rotation. The per-frame
/// camera poses are dropped: orthographic tracks fix neither the rotation
/// nor the translation of a state, so neither belongs in the prior.
pub fn canonicalize_states(
    shapes: &ShapeSequence,
    poses: &[CameraPose],
    global: Option<&CameraPose>,
) -> Result<Vec<Matrix3xX<f64>>> {
    if poses.len() != shapes.frames() {
        return Err(Error::invalid(format!(
            "{} poses for {} frames",
            poses.len(),
            shapes.frames()
        )));
    }
    let frames = shapes.to_frames().into_iter().map(|mut s| {
        let c = s.column_mean();
        for mut col in s.column_iter_mut() {
            col -= c;
        }
        s
    });
    Ok(match global {
        None => frames.collect(),
        Some(g) => frames.map(|s| g.matrix() * s).collect(),
    })
}

/// Sorts states by norm and keeps each one whose norm exceeds the last kept
/// norm by more than `mu`. The smallest-norm state is always kept; ties in
/// norm keep the earlier frame first.
pub fn build_dsp(states: &[Matrix3xX<f64>], mu: f64) -> Result<DynamicShapePrior> {
    if states.is_empty() {
        return Err(Error::invalid("cannot build a shape prior from zero states"));
    }
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::invalid(format!("mu must be a nonnegative finite number, got {mu}")));
    }
    let points = states[0].ncols();
    if states.iter().any(|s| s.ncols() != points) {
        return Err(Error::invalid("states disagree on the number of points"));
    }
    let mut keyed = states
        .iter()
        .enumerate()
        .map(|(l, s)| frobenius_norm(s).map(|n| (n, l)))
        .collect::<Result<Vec<_>>>()?;
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut kept_states = Vec::new();
    let mut norms: Vec<f64> = Vec::new();
    let mut source_ids = Vec::new();
    for (norm, l) in keyed {
        let keep = match norms.last() {
            None => true,
            Some(&last) => norm - last > mu,
        };
        if keep {
            kept_states.push(states[l].clone());
            norms.push(norm);
            source_ids.push(l);
        }
    }
    Ok(DynamicShapePrior { states: kept_states, norms, source_ids, mu })
}

/// Prior cardinality for each threshold of an ascending grid.
pub fn dsp_cardinality_curve(states: &[Matrix3xX<f64>], mu_grid: &[f64]) -> Result<Vec<(f64, usize)>> {
    if mu_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("mu grid must be sorted ascending"));
    }
    mu_grid.iter().map(|&mu| build_dsp(states, mu).map(|d| (mu, d.len()))).collect()
}
