//! Speech recognizer: bidirectional RNN encoder, attention decoder.

use super::beam::{beam_search, BeamConfig, StepModel};
use super::layers::{encode_speech, log_probs, DecState, Encoded, TextDecoder};
use super::{speech_key_dim, ComponentKind, ComponentParams, Dims, ModelConfig};
use crate::autodiff::{Session, Var};
use crate::error::Result;
use crate::world::{SpeechSeq, TextSeq};

/// Teacher-forced logits of a speech encoder/decoder pair.
pub(crate) fn speech_logits(
    s: &mut Session,
    enc: &str,
    dec: &str,
    dims: &Dims,
    cfg: &ModelConfig,
    x: &SpeechSeq,
    y: &TextSeq,
) -> Result<Var> {
    let e = encode_speech(s, enc, x, dims, cfg)?;
    let d = TextDecoder::bind(s, dec, speech_key_dim(cfg), cfg)?;
    d.teacher_forced(&mut s.tape, &e, y)
}

pub(crate) fn text_loss(s: &mut Session, logits: Var, y: &TextSeq) -> Result<Var> {
    s.cross_entropy(logits, y.tokens(), &vec![false; y.len()])
}

/// Returns `(loss, logits)`.
pub fn forward(m: &ComponentParams, s: &mut Session, x: &SpeechSeq, y: &TextSeq) -> Result<(Var, Var)> {
    m.expect(ComponentKind::Asr)?;
    let logits = speech_logits(s, "asr.enc", "asr.dec", &m.dims, &m.cfg, x, y)?;
    Ok((text_loss(s, logits, y)?, logits))
}

/// Single attention decoder exposed to beam search.
pub(crate) struct DecoderSteps<'a, 'p> {
    pub s: &'a mut Session<'p>,
    pub dec: TextDecoder,
    pub enc: Encoded,
}

impl StepModel for DecoderSteps<'_, '_> {
    type State = DecState;

    fn start(&mut self) -> Result<DecState> {
        self.dec.start(&mut self.s.tape, &self.enc)
    }

    fn step(&mut self, st: &DecState, token: usize, index: usize) -> Result<(Vec<f64>, DecState)> {
        let (logits, next) = self.dec.step(&mut self.s.tape, &self.enc, st, token, index)?;
        Ok((log_probs(&self.s.tape, logits), next))
    }
}

pub(crate) fn decode_speech(
    s: &mut Session,
    enc: &str,
    dec: &str,
    dims: &Dims,
    cfg: &ModelConfig,
    x: &SpeechSeq,
    beam: usize,
) -> Result<TextSeq> {
    let e = encode_speech(s, enc, x, dims, cfg)?;
    let d = TextDecoder::bind(s, dec, speech_key_dim(cfg), cfg)?;
    let mut steps = DecoderSteps { s, dec: d, enc: e };
    let tokens = beam_search(&mut steps, &BeamConfig::text(beam, dims.max_text_len))?;
    Ok(TextSeq::from_decoded(&tokens, dims.max_text_len))
}

pub fn decode(m: &ComponentParams, x: &SpeechSeq, beam: usize) -> Result<TextSeq> {
    m.expect(ComponentKind::Asr)?;
    let mut s = m.inference();
    decode_speech(&mut s, "asr.enc", "asr.dec", &m.dims, &m.cfg, x, beam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{adam_step, AdamState, GradCheck};
    use crate::models::beam::greedy;
    use crate::models::probe::{probe, probe_triple};
    use crate::world::{gen_corpus, PartitionCounts, World, WorldConfig, VOCAB_SIZE};

    #[test]
    fn untrained_loss_is_near_uniform() {
        let w = World::new(WorldConfig::default()).unwrap();
        let dims = Dims::from_world(w.config());
        let m = ComponentParams::init(ComponentKind::Asr, &dims, &ModelConfig::default(), 3).unwrap();
        let scene = w.scenes().nth(77).unwrap();
        let y = w.caption_of(&scene);
        let x = w.synth_speech(&y, crate::world::SpeakerId(1), 4).unwrap();
        let mut s = m.session();
        let (loss, _) = forward(&m, &mut s, &x, &y).unwrap();
        let ln_v = (VOCAB_SIZE as f64).ln();
        assert!((s.scalar(loss) / ln_v - 1.0).abs() < 0.15, "{}", s.scalar(loss));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let m = probe(ComponentKind::Asr, seed);
            let (x, y, _) = probe_triple(seed, "ab");
            let report = GradCheck::default()
                .run(&m.params, |s| Ok(forward(&m, s, &x, &y)?.0))
                .unwrap();
            assert!(report.passed(), "seed {seed}: {}", report.max_rel_error());
        }
    }

    #[test]
    fn beam_one_equals_greedy_and_output_is_capped() {
        let m = probe(ComponentKind::Asr, 2);
        let (x, _, _) = probe_triple(2, "abc");
        let mut s = m.inference();
        let e = encode_speech(&mut s, "asr.enc", &x, &m.dims, &m.cfg).unwrap();
        let d = TextDecoder::bind(&mut s, "asr.dec", speech_key_dim(&m.cfg), &m.cfg).unwrap();
        let mut steps = DecoderSteps { s: &mut s, dec: d, enc: e };
        let cfg = BeamConfig::text(1, m.dims.max_text_len);
        let g = greedy(&mut steps, &cfg).unwrap();
        let b = beam_search(&mut steps, &cfg).unwrap();
        assert_eq!(g, b);
        let y = decode(&m, &x, 3).unwrap();
        assert!(y.len() <= m.dims.max_text_len);
    }

    #[test]
    fn three_hundred_adam_steps_halve_the_loss() {
        let w = World::new(WorldConfig::default()).unwrap();
        let counts = PartitionCounts {
            paired: 10,
            unpaired: 0,
            speech_only: 0,
            image_only: 0,
            dev: 0,
            test: 0,
        };
        let ds = gen_corpus(&w, &counts, 8).unwrap();
        let data: Vec<_> = ds.paired.iter().take(20).collect();
        let mut m = ComponentParams::init(ComponentKind::Asr, &Dims::from_world(w.config()), &ModelConfig::default(), 1).unwrap();
        let mut adam = AdamState::new(&m.params, 3e-3);
        let total = |m: &ComponentParams| -> f64 {
            data.iter()
                .map(|e| {
                    let mut s = m.inference();
                    let (l, _) = forward(m, &mut s, e.x.as_ref().unwrap(), e.y.as_ref().unwrap()).unwrap();
                    s.scalar(l)
                })
                .sum::<f64>()
        };
        let initial = total(&m);
        for step in 0..300 {
            let e = data[step % data.len()];
            let grads = {
                let mut s = m.session();
                let (l, _) = forward(&m, &mut s, e.x.as_ref().unwrap(), e.y.as_ref().unwrap()).unwrap();
                s.backward(l).unwrap()
            };
            m.params.zero_grad();
            m.params.accumulate(&grads).unwrap();
            adam_step(&mut m.params, &mut adam).unwrap();
        }
        let fin = total(&m);
        assert!(fin < 0.5 * initial, "{initial} -> {fin}");
    }
}
