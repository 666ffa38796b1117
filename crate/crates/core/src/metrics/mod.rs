//! Evaluation metrics: error rates, BLEU4, speech L2² and inception score.

mod bleu;
mod edit;
mod inception;
mod report;

pub use bleu::{bleu4, corpus_bleu4, BleuStats};
pub use edit::{cer, corpus_cer, corpus_wer, edit_distance, error_rate, wer};
pub use inception::{inception_score, ClassifierConfig, WorldClassifier};
pub use report::{csv_string, write_csv, Metric, MetricRow, MetricsReport, CSV_HEADER};

use crate::error::{Error, Result};
use crate::world::SpeechSeq;

/// Mean squared frame error over the overlapping frames plus the relative
/// length mismatch `|T_hat - T| / T`.
pub fn l2sq_speech(x: &SpeechSeq, x_hat: &SpeechSeq) -> Result<f64> {
    let (t, th) = (x.num_frames(), x_hat.num_frames());
    if t == 0 || th == 0 {
        return Err(Error::data("speech error needs non-empty sequences"));
    }
    if x.frame_dim() != x_hat.frame_dim() {
        return Err(Error::shape(
            "l2sq_speech",
            format!("frame widths {} and {}", x.frame_dim(), x_hat.frame_dim()),
        ));
    }
    let n = t.min(th) * x.frame_dim();
    let sq: f64 = x.frames()[..n]
        .iter()
        .zip(&x_hat.frames()[..n])
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(sq / n as f64 + t.abs_diff(th) as f64 / t as f64)
}
