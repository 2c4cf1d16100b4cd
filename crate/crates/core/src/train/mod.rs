//! Maximum-likelihood training and single-pair online updates.

mod optim;

pub use optim::{
    learning_rate_grid, Algorithm, OptimizerState, ADADELTA_DECAY, ADADELTA_EPS, ADAGRAD_EPS, ADAM_BETA1,
    ADAM_BETA2, ADAM_EPS,
};

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::network::{self, ParamVars};
use crate::model::{check_ids, ModelParams};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::vocab::{TokenId, EOS};

/// A source/target id pair. Targets end with `</s>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub src: Vec<TokenId>,
    pub trg: Vec<TokenId>,
}

impl Pair {
    pub fn new(src: Vec<TokenId>, trg: Vec<TokenId>) -> Self {
        Self { src, trg }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub clip_norm: f64,
    pub noise_std: f64,
    pub eval_interval: usize,
    pub patience: usize,
    pub max_updates: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 8, clip_norm: 5.0, noise_std: 0.0, eval_interval: 200, patience: 20, max_updates: 3000, seed: 1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_interval == 0 || self.patience == 0 {
            return Err(Error::Invalid("batch size, eval interval and patience must be positive".into()));
        }
        if !(self.clip_norm > 0.0) || !(self.noise_std >= 0.0) {
            return Err(Error::Invalid("clip norm must be positive and noise std non-negative".into()));
        }
        Ok(())
    }
}

fn check_pair(params: &ModelParams, src: &[TokenId], trg: &[TokenId]) -> Result<()> {
    let cfg = params.config();
    check_ids(src, cfg.src_vocab, "source sentence")?;
    check_ids(trg, cfg.trg_vocab, "target sentence")?;
    if trg.last() != Some(&EOS) {
        return Err(Error::Invalid("target must end with </s>".into()));
    }
    Ok(())
}

/// Teacher-forced `-Σ log p(y_t | y_<t, x)`.
pub fn sentence_nll(params: &ModelParams, src: &[TokenId], trg: &[TokenId]) -> Result<f64> {
    check_pair(params, src, trg)?;
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let loss = network::sentence_nll(&mut tape, &pv, params, src, trg);
    Ok(tape.value(loss).data()[0])
}

/// Loss and its gradient with respect to every parameter tensor.
pub fn sentence_nll_grad(params: &ModelParams, src: &[TokenId], trg: &[TokenId]) -> Result<(f64, Vec<Tensor>)> {
    check_pair(params, src, trg)?;
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let loss = network::sentence_nll(&mut tape, &pv, params, src, trg);
    let grads = tape.gradient(loss, pv.all())?;
    Ok((tape.value(loss).data()[0], grads))
}

/// Summed loss and gradient over a batch.
pub fn batch_nll_grad(params: &ModelParams, batch: &[&Pair]) -> Result<(f64, Vec<Tensor>)> {
    let mut total = 0.0;
    let mut acc: Option<Vec<Tensor>> = None;
    for pair in batch {
        let (loss, grads) = sentence_nll_grad(params, &pair.src, &pair.trg)?;
        total += loss;
        match acc.as_mut() {
            None => acc = Some(grads),
            Some(a) => a.iter_mut().zip(&grads).for_each(|(x, g)| x.add_assign(g)),
        }
    }
    acc.map(|g| (total, g)).ok_or(Error::Empty("batch"))
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let factor = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale_in_place(factor));
    }
    norm
}

/// A copy of `params` with i.i.d. Gaussian noise added to every entry.
/// Only the training forward pass uses it.
pub fn add_weight_noise<R: rand::Rng + ?Sized>(params: &ModelParams, stddev: f64, rng: &mut R) -> Result<ModelParams> {
    if !(stddev.is_finite() && stddev >= 0.0) {
        return Err(Error::Invalid(format!("noise stddev must be finite and non-negative, got {stddev}")));
    }
    let mut noisy = params.clone();
    if stddev == 0.0 {
        return Ok(noisy);
    }
    let normal = Normal::new(0.0, stddev).map_err(|e| Error::Invalid(format!("noise stddev: {e}")))?;
    for t in noisy.tensors_mut() {
        for v in t.data_mut() {
            *v += normal.sample(rng);
        }
    }
    Ok(noisy)
}

/// One clipped optimizer step on a single pair, without weight noise.
/// Returns the loss before the update. On error `params` and `opt` are
/// left untouched.
pub fn online_update(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    src: &[TokenId],
    trg: &[TokenId],
    clip_norm: f64,
) -> Result<f64> {
    let (loss, mut grads) = sentence_nll_grad(params, src, trg)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("online loss".into()));
    }
    clip_gradients(&mut grads, clip_norm);
    opt.apply_update(params.tensors_mut(), &grads)?;
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryEntry {
    pub update: usize,
    pub dev_bleu: f64,
    pub train_loss: f64,
}

pub fn write_history<W: Write>(history: &[HistoryEntry], mut out: W) -> Result<()> {
    for h in history {
        writeln!(out, "{}\t{:.6}\t{:.6}", h.update, h.dev_bleu, h.train_loss)?;
    }
    Ok(())
}

pub fn read_history<R: BufRead>(input: R) -> Result<Vec<HistoryEntry>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Parse(format!("history line {line:?}"));
        if f.len() != 3 {
            return Err(bad());
        }
        out.push(HistoryEntry {
            update: f[0].parse().map_err(|_| bad())?,
            dev_bleu: f[1].parse().map_err(|_| bad())?,
            train_loss: f[2].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    EarlyStopped,
    MaxUpdates,
    Diverged { update: usize },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best development evaluation.
    pub params: ModelParams,
    /// Parameters and optimizer after the last update, for resuming.
    pub last_params: ModelParams,
    pub optimizer: OptimizerState,
    pub history: Vec<HistoryEntry>,
    pub best_update: usize,
    pub best_bleu: f64,
    pub stop: StopReason,
}

fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Indices of the pairs used by update `update` (0-based). Each epoch is a
/// fresh permutation drawn from `(seed, epoch)`, so any update can be
/// reproduced without replaying earlier ones.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, update: usize) -> Vec<usize> {
    let per_epoch = n.div_ceil(batch_size);
    let (epoch, k) = (update / per_epoch, update % per_epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 1, epoch as u64));
    order[k * batch_size..((k + 1) * batch_size).min(n)].to_vec()
}

/// Minibatch training with dev-BLEU early stopping. Continues from
/// `optimizer.step()` so a restored optimizer resumes the same schedule.
pub fn train<F>(
    params: ModelParams,
    mut optimizer: OptimizerState,
    corpus: &[Pair],
    config: &TrainConfig,
    mut evaluate: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&ModelParams) -> Result<f64>,
{
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    for p in corpus {
        check_pair(&params, &p.src, &p.trg)?;
    }
    let mut current = params;
    let mut best = current.clone();
    let mut best_bleu = f64::NEG_INFINITY;
    let mut best_update = optimizer.step() as usize;
    let mut bad_evals = 0;
    let mut history = Vec::new();
    let (mut loss_sum, mut loss_batches) = (0.0, 0usize);
    let mut stop = StopReason::MaxUpdates;
    let mut last_eval = None;

    while (optimizer.step() as usize) < config.max_updates {
        let update = optimizer.step() as usize;
        let idx = batch_indices(corpus.len(), config.batch_size, config.seed, update);
        let batch: Vec<&Pair> = idx.iter().map(|&i| &corpus[i]).collect();
        let result = if config.noise_std > 0.0 {
            let mut rng = stream_rng(config.seed, 2, update as u64);
            let noisy = add_weight_noise(&current, config.noise_std, &mut rng)?;
            batch_nll_grad(&noisy, &batch)
        } else {
            batch_nll_grad(&current, &batch)
        };
        let step_ok = match result {
            Ok((loss, mut grads)) if loss.is_finite() => {
                clip_gradients(&mut grads, config.clip_norm);
                loss_sum += loss;
                loss_batches += 1;
                match optimizer.apply_update(current.tensors_mut(), &grads) {
                    Ok(()) => true,
                    Err(Error::NonFinite(_)) => false,
                    Err(e) => return Err(e),
                }
            }
            Ok(_) | Err(Error::NonFinite(_)) => false,
            Err(e) => return Err(e),
        };
        if !step_ok {
            stop = StopReason::Diverged { update: update + 1 };
            break;
        }
        let done = optimizer.step() as usize;
        if done % config.eval_interval == 0 {
            last_eval = Some(done);
            let bleu = evaluate(&current)?;
            history.push(HistoryEntry { update: done, dev_bleu: bleu, train_loss: loss_sum / loss_batches.max(1) as f64 });
            (loss_sum, loss_batches) = (0.0, 0);
            if bleu > best_bleu {
                best_bleu = bleu;
                best = current.clone();
                best_update = done;
                bad_evals = 0;
            } else {
                bad_evals += 1;
                if bad_evals >= config.patience {
                    stop = StopReason::EarlyStopped;
                    break;
                }
            }
        }
    }
    let done = optimizer.step() as usize;
    if stop == StopReason::MaxUpdates && last_eval != Some(done) && loss_batches > 0 {
        let bleu = evaluate(&current)?;
        history.push(HistoryEntry { update: done, dev_bleu: bleu, train_loss: loss_sum / loss_batches as f64 });
        if bleu > best_bleu {
            best_bleu = bleu;
            best = current.clone();
            best_update = done;
        }
    }
    if best_bleu == f64::NEG_INFINITY {
        best_bleu = 0.0;
    }
    Ok(TrainOutcome { params: best, last_params: current, optimizer, history, best_update, best_bleu, stop })
}
