use super::ClientState;
use crate::error::{data_err, Result};
use crate::nn;

/// Each client's current model on its own test split. The average is
/// unweighted over every client, online or not.
pub fn evaluate_all(states: &[ClientState]) -> Result<(f64, Vec<f64>)> {
    let per_client = states
        .iter()
        .map(|s| {
            if s.data.test.is_empty() {
                return Err(data_err(format!("client {} has no test rows", s.id)));
            }
            nn::accuracy(&s.model, &s.data.test.features, &s.data.test.labels)
        })
        .collect::<Result<Vec<_>>>()?;
    let avg = if per_client.is_empty() {
        0.0
    } else {
        per_client.iter().sum::<f64>() / per_client.len() as f64
    };
    Ok((avg, per_client))
}
