use crate::error::{PncError, Result};
use crate::exec::ExecMode;
use crate::model::{group_of, Model};

use super::{loss, loss_and_gradients, Objective, Sample};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Largest parameter count the exhaustive check accepts.
pub const MAX_CHECKED_PARAMETERS: usize = 100_000;

/// Gradients smaller than this are compared in absolute terms; otherwise the
/// relative error of a coordinate whose true value is zero is pure noise.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub group: String,
    pub count: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error() < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// Compares the analytic gradient of the mean loss over `samples` with
/// central differences, coordinate by coordinate.
pub fn check_gradients(model: &Model, samples: &[Sample<'_>], objective: Objective) -> Result<GradCheckReport> {
    let count = model.params.num_scalars();
    if count > MAX_CHECKED_PARAMETERS {
        return Err(PncError::Unsupported(format!(
            "{count} parameters exceed the finite-difference limit of {MAX_CHECKED_PARAMETERS}"
        )));
    }
    let (_, grads) = loss_and_gradients(model, samples, objective, ExecMode::Sequential)?;
    let mut probe = model.clone();
    let mut groups: Vec<GroupError> = Vec::new();
    let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data.clone()).collect();
    for (t, name) in names.iter().enumerate() {
        let group = group_of(name).to_string();
        let mut worst = 0.0f64;
        let len = analytic[t].len();
        for i in 0..len {
            let original = probe.params.tensors()[t].data[i];
            probe.params.tensors_mut()[t].data[i] = original + FD_STEP;
            let up = loss(&probe, samples, objective)?;
            probe.params.tensors_mut()[t].data[i] = original - FD_STEP;
            let down = loss(&probe, samples, objective)?;
            probe.params.tensors_mut()[t].data[i] = original;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[t][i], numeric));
        }
        match groups.iter_mut().find(|g| g.group == group) {
            Some(g) => {
                g.count += len;
                g.max_relative_error = g.max_relative_error.max(worst);
            }
            None => groups.push(GroupError {
                group,
                count: len,
                max_relative_error: worst,
            }),
        }
    }
    Ok(GradCheckReport { groups })
}
