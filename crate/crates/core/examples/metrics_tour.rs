//! The evaluation metrics on hand-made inputs.

use mmchain::metrics::{bleu4, cer, inception_score, wer};
use mmchain::world::TextSeq;

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn main() -> mmchain::Result<()> {
    let r = TextSeq::parse("red cat a p", 24)?;
    let h = TextSeq::parse("red bat a", 24)?;
    println!("CER {:.2}%  WER {:.2}%", cer(&h, &r)?, wer(&h, &r)?);

    let refs = vec![words("a small red cat sits on the mat"), words("the red cat sits on a mat")];
    for hyp in ["a small red cat sits on the mat", "a red cat sits on the mat", "the dog"] {
        println!("BLEU4 {:>6.2}  {hyp:?}", bleu4(&words(hyp), &refs)?);
    }

    let k = 4;
    let uniform = vec![vec![1.0 / k as f64; k]; 8];
    let confident: Vec<Vec<f64>> = (0..8).map(|i| (0..k).map(|j| f64::from(u8::from(j == i % k))).collect()).collect();
    println!("IS uniform {:.3}, one-hot {:.3}", inception_score(&uniform, 2, 0)?, inception_score(&confident, 2, 0)?);
    Ok(())
}
