//! Length-normalized beam search over any step-wise scorer.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::world::text::{EOS, PAD, SOS};

/// A left-to-right model that scores the next token.
pub trait StepModel {
    type State: Clone;

    fn start(&mut self) -> Result<Self::State>;

    /// Log-probabilities over the vocabulary after feeding `token` at
    /// output position `index`.
    fn step(&mut self, state: &Self::State, token: usize, index: usize) -> Result<(Vec<f64>, Self::State)>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam: usize,
    pub max_len: usize,
    /// Token that ends a hypothesis; `None` decodes exactly `max_len` tokens.
    pub eos: Option<usize>,
    /// Tokens that are never emitted.
    pub banned: Vec<usize>,
    /// First token fed to the model.
    pub start_token: usize,
}

impl BeamConfig {
    /// Text decoding: `<pad>`/`<sos>` banned, `<eos>` forced at the cap.
    pub fn text(beam: usize, max_len: usize) -> Self {
        Self {
            beam,
            max_len,
            eos: Some(EOS),
            banned: vec![PAD, SOS],
            start_token: SOS,
        }
    }
}

#[derive(Clone)]
struct Hyp<S> {
    tokens: Vec<usize>,
    logp: f64,
    state: S,
}

impl<S> Hyp<S> {
    fn score(&self) -> f64 {
        self.logp / self.tokens.len() as f64
    }
}

/// Higher score first, then lexicographically smaller tokens, then shorter.
fn rank<S>(a: &Hyp<S>, b: &Hyp<S>) -> Ordering {
    b.score()
        .total_cmp(&a.score())
        .then_with(|| a.tokens.cmp(&b.tokens))
        .then_with(|| a.tokens.len().cmp(&b.tokens.len()))
}

/// Returns the best hypothesis' tokens (including the final `eos`, if any).
///
/// With an `eos`, only `eos` may be emitted at position `max_len - 1`, so
/// every result terminates within the cap.
pub fn beam_search<M: StepModel>(model: &mut M, cfg: &BeamConfig) -> Result<Vec<usize>> {
    if cfg.beam == 0 || cfg.max_len == 0 {
        return Err(Error::config("beam and max_len must be at least 1"));
    }
    let mut active = vec![Hyp {
        tokens: Vec::new(),
        logp: 0.0,
        state: model.start()?,
    }];
    let mut finished: Vec<Hyp<M::State>> = Vec::new();
    for i in 0..cfg.max_len {
        let last = i + 1 == cfg.max_len;
        let mut cands = Vec::new();
        for h in &active {
            let prev = h.tokens.last().copied().unwrap_or(cfg.start_token);
            let (lp, state) = model.step(&h.state, prev, i)?;
            for (tok, &l) in lp.iter().enumerate() {
                if cfg.banned.contains(&tok) || (last && cfg.eos.is_some() && Some(tok) != cfg.eos) {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(tok);
                cands.push(Hyp {
                    tokens,
                    logp: h.logp + l,
                    state: state.clone(),
                });
            }
        }
        if cands.is_empty() {
            return Err(Error::config("every token is banned"));
        }
        cands.sort_by(rank);
        cands.truncate(cfg.beam);
        active.clear();
        for c in cands {
            if cfg.eos.is_some() && c.tokens.last().copied() == cfg.eos {
                finished.push(c);
            } else {
                active.push(c);
            }
        }
        if active.is_empty() {
            break;
        }
    }
    finished.extend(active);
    finished.sort_by(rank);
    Ok(finished.swap_remove(0).tokens)
}

/// Argmax decoding with the same banned set and cap as [`beam_search`].
pub fn greedy<M: StepModel>(model: &mut M, cfg: &BeamConfig) -> Result<Vec<usize>> {
    let mut state = model.start()?;
    let mut tokens = Vec::new();
    for i in 0..cfg.max_len {
        let prev = tokens.last().copied().unwrap_or(cfg.start_token);
        let (lp, next) = model.step(&state, prev, i)?;
        let last = i + 1 == cfg.max_len;
        let mut best: Option<(usize, f64)> = None;
        for (tok, &l) in lp.iter().enumerate() {
            if cfg.banned.contains(&tok) || (last && cfg.eos.is_some() && Some(tok) != cfg.eos) {
                continue;
            }
            if best.is_none_or(|(_, b)| l > b) {
                best = Some((tok, l));
            }
        }
        let (tok, _) = best.ok_or_else(|| Error::config("every token is banned"))?;
        tokens.push(tok);
        state = next;
        if Some(tok) == cfg.eos {
            break;
        }
    }
    Ok(tokens)
}
