//! Per-epoch records produced by the SGD and FL engines.

use serde::{Deserialize, Serialize};

use crate::perm::Permutation;

/// Column order of the SGD trace CSV.
pub const SGD_COLUMNS: [&str; 7] = [
    "q",
    "grad_norm_sq",
    "dist_to_opt",
    "order_error_2",
    "order_error_inf",
    "param_dev",
    "extra_grads",
];

/// Extra columns appended for FL runs.
pub const FL_COLUMNS: [&str; 3] = ["round", "fl_order_error_2", "fl_order_error_inf"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlEpochData {
    /// Communication rounds completed before this epoch starts.
    pub round: usize,
    pub fl_order_error_2: f64,
    pub fl_order_error_inf: f64,
}

/// One row per epoch start, plus a final row for `x_Q`.
///
/// Order errors are measured at `x_q` under the permutation used in epoch `q`.
/// Parameter deviations describe the epoch that starts at this row, so the
/// final row has none.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub q: usize,
    pub x: Vec<f64>,
    pub grad_norm_sq: f64,
    pub dist_to_opt: f64,
    pub order_error_2: f64,
    pub order_error_inf: f64,
    pub param_dev_2: Option<f64>,
    pub param_dev_inf: Option<f64>,
    pub permutation: Permutation,
    /// Gradient evaluations beyond the `N·K` the updates need.
    pub extra_grads: usize,
    /// Iterates visited inside the epoch, when recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl: Option<FlEpochData>,
}

impl EpochTrace {
    /// Column names for a trace of this shape.
    pub fn columns(fl: bool) -> Vec<&'static str> {
        let mut c = SGD_COLUMNS.to_vec();
        if fl {
            c.extend(FL_COLUMNS);
        }
        c
    }

    /// Fields in [`EpochTrace::columns`] order. A missing parameter deviation
    /// is written as an empty field.
    pub fn csv_fields(&self) -> Vec<String> {
        let mut f = vec![
            self.q.to_string(),
            fmt_f64(self.grad_norm_sq),
            fmt_f64(self.dist_to_opt),
            fmt_f64(self.order_error_2),
            fmt_f64(self.order_error_inf),
            self.param_dev_2.map(fmt_f64).unwrap_or_default(),
            self.extra_grads.to_string(),
        ];
        if let Some(fl) = &self.fl {
            f.push(fl.round.to_string());
            f.push(fmt_f64(fl.fl_order_error_2));
            f.push(fmt_f64(fl.fl_order_error_inf));
        }
        f
    }

    /// The order error the FL theory uses when present, else the SGD one.
    pub fn effective_order_error(&self, inf: bool) -> f64 {
        match (&self.fl, inf) {
            (Some(fl), true) => fl.fl_order_error_inf,
            (Some(fl), false) => fl.fl_order_error_2,
            (None, true) => self.order_error_inf,
            (None, false) => self.order_error_2,
        }
    }
}

// Shortest representation that round-trips exactly.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
