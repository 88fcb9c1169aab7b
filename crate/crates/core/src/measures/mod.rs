//! Classic trajectory distances over 2-D points in projected meters.

mod edr;
mod edwp;
mod frechet;
mod hausdorff;
mod pairwise;

#[cfg(test)]
mod oracles;

use serde::{Deserialize, Serialize};

pub use edr::{edr, MatchMetric};
pub use edwp::edwp;
pub use frechet::frechet_discrete;
pub use hausdorff::hausdorff;
pub use pairwise::pairwise_matrix;

pub type Pt = [f64; 2];

#[inline]
pub(crate) fn dist(a: Pt, b: Pt) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Measure {
    Edr { eps: f64, metric: MatchMetric },
    Hausdorff,
    Frechet,
    Edwp,
}

impl Measure {
    pub fn name(&self) -> &'static str {
        match self {
            Measure::Edr { .. } => "edr",
            Measure::Hausdorff => "hausdorff",
            Measure::Frechet => "frechet",
            Measure::Edwp => "edwp",
        }
    }

    pub fn eval(&self, a: &[Pt], b: &[Pt]) -> crate::Result<f64> {
        let empty = || crate::Error::Domain("distance between empty sequences".into());
        if a.is_empty() || b.is_empty() {
            return Err(empty());
        }
        Ok(match *self {
            Measure::Edr { eps, metric } => edr(a, b, eps, metric) as f64,
            Measure::Hausdorff => hausdorff(a, b),
            Measure::Frechet => frechet_discrete(a, b),
            Measure::Edwp => edwp(a, b)?,
        })
    }
}
