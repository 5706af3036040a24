use serde::{Deserialize, Serialize};

use super::AttributionMatrix;
use crate::error::{Error, Result};

/// Position in sorted data of the empirical `p`-quantile: the smallest `i`
/// with `(i + 1) / n >= p`.
fn quantile_rank(n: usize, p: f64) -> usize {
    let (mut lo, mut hi) = (0usize, n - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if (mid + 1) as f64 / n as f64 >= p {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

fn check(values: &[f32], p: f64) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("quantile of an empty list".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("quantile level {p} outside [0, 1]")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("quantile of a list containing NaN".into()));
    }
    Ok(())
}

/// Smallest value `v` of the list such that the fraction of values `<= v`
/// is at least `p`.
pub fn empirical_quantile(values: &[f32], p: f64) -> Result<f32> {
    check(values, p)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    Ok(sorted[quantile_rank(sorted.len(), p)])
}

/// `Q(0.75) - Q(0.25)`.
pub fn iqr(values: &[f32]) -> Result<f32> {
    check(values, 0.5)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let n = sorted.len();
    Ok(sorted[quantile_rank(n, 0.75)] - sorted[quantile_rank(n, 0.25)])
}

/// One IQR per tap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqrVector {
    pub image_id: u64,
    pub values: Vec<f32>,
}

pub fn iqr_vector(m: &AttributionMatrix) -> Result<IqrVector> {
    if m.occlusions == 0 || m.dimension == 0 {
        return Err(Error::InvalidArgument("empty attribution matrix".into()));
    }
    let values = (0..m.dimension)
        .map(|j| iqr(&m.column(j)))
        .collect::<Result<Vec<_>>>()?;
    Ok(IqrVector {
        image_id: m.image_id,
        values,
    })
}
