//! Communication-cost accounting.
//!
//! `alpha` measures the overhead of shipping one normal cluster distance on
//! top of the regular updates during system training; `beta` measures the
//! fraction of update traffic saved when drifted nodes send alerts instead of
//! updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::N_PARAMS;

/// Message sizes in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommSizes {
    pub l_update: f64,
    pub l_dist: f64,
    pub l_alert: f64,
}

impl CommSizes {
    /// Sizes of this simulator's own messages: 1570 parameters at 4 bytes,
    /// an 8-byte distance, and a 16-byte alert (node id + round).
    pub fn simulator() -> Self {
        Self {
            l_update: (N_PARAMS * 4) as f64,
            l_dist: 8.0,
            l_alert: 16.0,
        }
    }

    /// Flags configurations where side messages outgrow the update itself.
    /// Such sizes are accepted; this only reports them.
    pub fn is_realistic(&self) -> bool {
        self.l_dist <= self.l_update && self.l_alert <= self.l_update
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(self.l_update.is_finite() && self.l_update > 0.0) || !ok(self.l_dist) || !ok(self.l_alert) {
            return Err(Error::Domain(format!("invalid message sizes {self:?}")));
        }
        Ok(())
    }
}

impl Default for CommSizes {
    fn default() -> Self {
        Self::simulator()
    }
}

/// `((n_iter · l_update) + l_dist) / (n_iter · l_update)`.
pub fn alpha(n_iter: usize, sizes: &CommSizes) -> Result<f64> {
    if n_iter == 0 {
        return Err(Error::Domain("alpha needs at least one training iteration".into()));
    }
    sizes.validate()?;
    let base = n_iter as f64 * sizes.l_update;
    Ok((base + sizes.l_dist) / base)
}

/// `1 − ((n − d) · l_update + d · l_alert) / (n · l_update)`.
pub fn beta(n_nodes: usize, n_drifted: usize, sizes: &CommSizes) -> Result<f64> {
    if n_nodes == 0 {
        return Err(Error::Domain("beta needs at least one node".into()));
    }
    if n_drifted > n_nodes {
        return Err(Error::Domain(format!(
            "{n_drifted} drifted nodes exceed {n_nodes} nodes"
        )));
    }
    sizes.validate()?;
    let (n, d) = (n_nodes as f64, n_drifted as f64);
    Ok(1.0 - ((n - d) * sizes.l_update + d * sizes.l_alert) / (n * sizes.l_update))
}
