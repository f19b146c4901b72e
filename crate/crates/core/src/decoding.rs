//! Greedy and beam-search inference, an exhaustive decoding oracle for tiny
//! models, and edit-distance scoring.
//!
//! All three searches share one model of inference: at most [`EMISSION_CAP`]
//! labels per encoder frame, after which the frame is closed by a forced blank
//! whose log-probability is still charged to the hypothesis.

use std::cmp::Ordering;

use crate::data::Corpus;
use crate::error::{invalid, Result};
use crate::network::decoder::{decoder_step, DecoderState};
use crate::network::encoder::encoder_forward;
use crate::network::Transducer;
use crate::numerics::{log_add_exp, log_softmax};
use crate::parallel::map_indexed;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const EMISSION_CAP: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    /// Log-probability accumulated by the search (merged over alignments in beam search).
    pub score: f64,
    /// Frames on which the emission cap cut off a non-blank choice.
    pub cap_hits: usize,
}

/// A live beam entry; owns the prediction-network state after its last label.
#[derive(Clone, Debug)]
pub struct Hypothesis<S> {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    state: DecoderState<S>,
    dec_logits: Vec<S>,
}

fn joint_log_probs<S: Scalar>(enc: &[S], dec: &[S]) -> Vec<f64> {
    let joint: Vec<S> = enc.iter().zip(dec).map(|(&e, &d)| (e + d).tanh()).collect();
    log_softmax(&joint)
}

/// Score descending, then shorter sequence, then lexicographically smaller.
fn rank(a_score: f64, a_tokens: &[usize], b_score: f64, b_tokens: &[usize]) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then(a_tokens.len().cmp(&b_tokens.len()))
        .then_with(|| a_tokens.cmp(b_tokens))
}

fn encode<S: Scalar>(model: Transducer<'_, S>, frames: &Tensor<S>) -> Result<Tensor<S>> {
    Ok(encoder_forward(model.encoder, frames)?.0.logits)
}

/// Per frame, repeatedly extends the single hypothesis by its best-scoring
/// continuation (blank wins ties, then the lower label) until blank.
pub fn greedy_decode<S: Scalar>(model: Transducer<'_, S>, frames: &Tensor<S>) -> Result<Decoded> {
    let enc = encode(model, frames)?;
    greedy_from_encoder(model, &enc)
}

pub fn greedy_from_encoder<S: Scalar>(model: Transducer<'_, S>, enc: &Tensor<S>) -> Result<Decoded> {
    let blank = model.decoder.config.vocab_size();
    let (mut dec, mut state) = decoder_step(model.decoder, &DecoderState::initial(model.decoder), None)?;
    let mut tokens = Vec::new();
    let mut score = 0.0;
    let mut cap_hits = 0;
    for t in 0..enc.dim(0) {
        let mut emitted = 0;
        loop {
            let lp = joint_log_probs(enc.row(t), &dec);
            let mut best = blank;
            for k in 0..blank {
                if score + lp[k] > score + lp[best] {
                    best = k;
                }
            }
            if best != blank && emitted == EMISSION_CAP {
                cap_hits += 1;
                best = blank;
            }
            score += lp[best];
            if best == blank {
                break;
            }
            tokens.push(best);
            emitted += 1;
            let (next_dec, next_state) = decoder_step(model.decoder, &state, Some(best))?;
            dec = next_dec;
            state = next_state;
        }
    }
    if cap_hits > 0 {
        log::warn!("greedy decoding hit the emission cap on {cap_hits} frame(s)");
    }
    Ok(Decoded { tokens, score, cap_hits })
}

/// Frame-synchronous transducer beam search. Within a frame, each round
/// closes every active hypothesis with a blank and extends it by every label.
/// Closures with equal label sequences merge by log-add into the frame's
/// finished set; the finished set and the label extensions are each pruned to
/// `beam`. A beam of width 1 is greedy search.
pub fn beam_decode<S: Scalar>(model: Transducer<'_, S>, frames: &Tensor<S>, beam: usize) -> Result<Decoded> {
    let enc = encode(model, frames)?;
    beam_from_encoder(model, &enc, beam)
}

pub fn beam_from_encoder<S: Scalar>(model: Transducer<'_, S>, enc: &Tensor<S>, beam: usize) -> Result<Decoded> {
    match beam {
        0 => return Err(invalid!("beam must be at least 1")),
        1 => return greedy_from_encoder(model, enc),
        _ => {}
    }
    let blank = model.decoder.config.vocab_size();
    let (dec_logits, state) = decoder_step(model.decoder, &DecoderState::initial(model.decoder), None)?;
    let mut hyps = vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0, state, dec_logits }];
    let mut cap_hits = 0;
    let by_rank = |a: &Hypothesis<S>, b: &Hypothesis<S>| rank(a.log_prob, &a.tokens, b.log_prob, &b.tokens);
    for t in 0..enc.dim(0) {
        let mut done: Vec<Hypothesis<S>> = Vec::new();
        let mut active = std::mem::take(&mut hyps);
        let mut capped = false;
        for round in 0..=EMISSION_CAP {
            // (score, tokens, parent, label)
            let mut extensions: Vec<(f64, Vec<usize>, usize, usize)> = Vec::new();
            for (i, h) in active.iter().enumerate() {
                let lp = joint_log_probs(enc.row(t), &h.dec_logits);
                let closed = h.log_prob + lp[blank];
                match done.iter_mut().find(|d| d.tokens == h.tokens) {
                    Some(d) => d.log_prob = log_add_exp(d.log_prob, closed),
                    None => done.push(Hypothesis { log_prob: closed, ..h.clone() }),
                }
                if round < EMISSION_CAP {
                    extensions.extend((0..blank).map(|k| {
                        let mut tokens = h.tokens.clone();
                        tokens.push(k);
                        (h.log_prob + lp[k], tokens, i, k)
                    }));
                } else if (0..blank).any(|k| lp[k] > lp[blank]) {
                    capped = true;
                }
            }
            done.sort_by(by_rank);
            done.truncate(beam);
            extensions.sort_by(|a, b| rank(a.0, &a.1, b.0, &b.1));
            extensions.truncate(beam);
            let mut next = Vec::with_capacity(extensions.len());
            for (log_prob, tokens, parent, k) in extensions {
                let (dec_logits, state) = decoder_step(model.decoder, &active[parent].state, Some(k))?;
                next.push(Hypothesis { tokens, log_prob, state, dec_logits });
            }
            active = next;
            if active.is_empty() {
                break;
            }
        }
        cap_hits += usize::from(capped);
        hyps = done;
    }
    let best = hyps.into_iter().min_by(by_rank).expect("the beam never empties");
    Ok(Decoded { tokens: best.tokens, score: best.log_prob, cap_hits })
}

/// Largest prefix the exhaustive oracle will explore.
pub const ORACLE_MAX_TOKENS: usize = 12;

/// Exact best label sequence under the capped inference model, found by
/// branch and bound over label prefixes. For each prefix, a small dynamic
/// program tracks the probability of having emitted exactly that prefix while
/// sitting at frame `t` with `e` labels already emitted in that frame. The
/// probability mass that can still flow into any extension bounds every
/// completion, so whole subtrees are skipped once they cannot beat the best
/// complete sequence. Intended for tiny models only.
pub fn exhaustive_decode<S: Scalar>(model: Transducer<'_, S>, frames: &Tensor<S>) -> Result<Decoded> {
    let enc = encode(model, frames)?;
    if enc.dim(0) > 4 || model.decoder.config.output_dim > 5 {
        return Err(crate::error::Error::OracleLimit(format!(
            "exhaustive decoding supports at most 4 frames and 5 classes, got {} and {}",
            enc.dim(0),
            model.decoder.config.output_dim
        )));
    }
    let frames = enc.dim(0);
    let blank = model.decoder.config.vocab_size();
    let cap = EMISSION_CAP;

    struct Node<S> {
        tokens: Vec<usize>,
        state: DecoderState<S>,
        /// `log_probs[t]` at this prefix's decoder state.
        lp: Vec<Vec<f64>>,
        /// `mass[t][e]`
        mass: Vec<Vec<f64>>,
    }

    let make = |tokens: Vec<usize>, state: DecoderState<S>, dec: Vec<S>, mut mass: Vec<Vec<f64>>| -> Node<S> {
        let lp: Vec<Vec<f64>> = (0..frames).map(|t| joint_log_probs(enc.row(t), &dec)).collect();
        for t in 0..frames {
            let pb = lp[t][blank].exp();
            if t + 1 < frames {
                let carry: f64 = mass[t].iter().sum::<f64>() * pb;
                mass[t + 1][0] += carry;
            }
        }
        Node { tokens, state, lp, mass }
    };

    let (dec0, state0) = decoder_step(model.decoder, &DecoderState::initial(model.decoder), None)?;
    let mut root_mass = vec![vec![0.0; cap + 1]; frames];
    root_mass[0][0] = 1.0;
    let mut stack = vec![make(Vec::new(), state0, dec0, root_mass)];
    let mut best = (0.0f64, Vec::new());
    let mut found = false;
    while let Some(node) = stack.pop() {
        let last = frames - 1;
        let p_final: f64 = node.mass[last].iter().sum::<f64>() * node.lp[last][blank].exp();
        let mut bound = p_final;
        for t in 0..frames {
            let emit = 1.0 - node.lp[t][blank].exp();
            bound += node.mass[t][..cap].iter().sum::<f64>() * emit;
        }
        let better = |p: f64, tokens: &[usize], best: &(f64, Vec<usize>)| -> bool {
            rank(p, tokens, best.0, &best.1) == Ordering::Less
        };
        if !found || better(p_final, &node.tokens, &best) {
            best = (p_final, node.tokens.clone());
            found = true;
        }
        if bound < best.0 || node.tokens.len() >= ORACLE_MAX_TOKENS.min(frames * cap) {
            continue;
        }
        for k in 0..blank {
            let mut mass = vec![vec![0.0; cap + 1]; frames];
            let mut any = false;
            for t in 0..frames {
                let pk = node.lp[t][k].exp();
                for e in 0..cap {
                    if node.mass[t][e] > 0.0 {
                        mass[t][e + 1] += node.mass[t][e] * pk;
                        any = true;
                    }
                }
            }
            if !any {
                continue;
            }
            let mut tokens = node.tokens.clone();
            tokens.push(k);
            let (dec, state) = decoder_step(model.decoder, &node.state, Some(k))?;
            stack.push(make(tokens, state, dec, mass));
        }
    }
    Ok(Decoded { tokens: best.1, score: best.0.ln(), cap_hits: 0 })
}

/// Decodes every utterance of `corpus`, in corpus order.
pub fn decode_corpus(model: Transducer<'_, f32>, corpus: &Corpus, beam: usize) -> Result<Vec<Decoded>> {
    map_indexed(corpus.len(), |i| beam_decode(model, &corpus.utterances[i].features, beam)).into_iter().collect()
}

/// Levenshtein distance with unit costs.
pub fn edit_distance(reference: &[usize], hypothesis: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Corpus-level token error rate: total edits over total reference length.
pub fn wer(refs: &[Vec<usize>], hyps: &[Vec<usize>]) -> Result<f64> {
    if refs.len() != hyps.len() {
        return Err(invalid!("{} references but {} hypotheses", refs.len(), hyps.len()));
    }
    let total: usize = refs.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(invalid!("references contain no tokens"));
    }
    let edits: usize = refs.iter().zip(hyps).map(|(r, h)| edit_distance(r, h)).sum();
    Ok(edits as f64 / total as f64)
}

/// Relative error reduction in percent: `(base - new) / base · 100`.
pub fn relative_werr(base: f64, new: f64) -> f64 {
    (base - new) / base * 100.0
}
