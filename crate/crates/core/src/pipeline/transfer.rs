use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NetworkParameters;
use crate::tensor::Real;

/// Which parameters [`transfer_weights`] copied.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferReport {
    pub copied: Vec<String>,
    /// Present in the target but absent from the source or of another shape.
    pub skipped: Vec<String>,
}

/// Initialises the fine network from the coarse one: every parameter of
/// `fine_init` whose name and shape also occur in `coarse` takes the coarse
/// value; the rest keep their initial value.
pub fn transfer_weights<T: Real>(
    coarse: &NetworkParameters<T>,
    fine_init: &NetworkParameters<T>,
) -> Result<(NetworkParameters<T>, TransferReport)> {
    let mut out = fine_init.clone();
    let mut report = TransferReport::default();
    for (name, t) in out.iter_mut() {
        match coarse.get(name) {
            Ok(src) if src.shape() == t.shape() => {
                t.data_mut().copy_from_slice(src.data());
                report.copied.push(name.to_string());
            }
            _ => report.skipped.push(name.to_string()),
        }
    }
    if report.copied.is_empty() {
        return Err(Error::NoMatchingParameters);
    }
    Ok((out, report))
}
