use std::hash::{DefaultHasher, Hash, Hasher};
use std::time::Instant;

use rand::Rng;

use super::{IterationRecord, Model2D, PipelineError, Stage1Config, TrainReport};
use crate::augment::{augment_image, match_positive_pixels, AugmentError, PixelPair};
use crate::geometry::Image;
use crate::loss::{info_nce_in_batch, LossConfig, LossOutput, NegativePool};
use crate::nn::{EmbeddingSet, Encoder2dTape, HeadTape, ParamSet};
use crate::optim::{sgd_step, OptimState};
use crate::seed;

const OVERLAP_RETRIES: usize = 10;

/// Two augmented views of one image and the matched pixels between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Pair {
    pub view_a: Image,
    pub view_b: Image,
    pub pixels: Vec<PixelPair>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stage1Batch {
    pub pairs: Vec<Stage1Pair>,
}

#[derive(Clone, Debug)]
pub struct Stage1Eval {
    pub output: LossOutput,
    pub grads: Model2D,
    /// Identifies the differentiable piece (ReLU masks) the parameters sit on.
    pub regime: u64,
    /// Every embedding row that was produced: queries then positives.
    pub queries: EmbeddingSet,
    pub positives: EmbeddingSet,
}

/// Summed InfoNCE over all pairs of the batch, with negatives taken from every sampled
/// pixel of every view, and its gradient w.r.t. the encoder and head.
pub fn stage1_objective(model: &Model2D, batch: &Stage1Batch, loss: &LossConfig, neg_seed: u64) -> Result<Stage1Eval, PipelineError> {
    let m = model.head.out_dim();
    let mut queries = EmbeddingSet::empty(m);
    let mut positives = EmbeddingSet::empty(m);
    let mut tapes = Vec::with_capacity(batch.pairs.len());
    let mut hasher = DefaultHasher::new();
    for pair in &batch.pairs {
        let pa: Vec<[usize; 2]> = pair.pixels.iter().map(|p| p.0).collect();
        let pb: Vec<[usize; 2]> = pair.pixels.iter().map(|p| p.1).collect();
        let ta = Encoder2dTape::forward_at(&model.encoder, &pair.view_a, &pa)?;
        let tb = Encoder2dTape::forward_at(&model.encoder, &pair.view_b, &pb)?;
        let ha = HeadTape::forward(&model.head, &ta.features)?;
        let hb = HeadTape::forward(&model.head, &tb.features)?;
        queries.data.extend_from_slice(&ha.embeddings.data);
        queries.rows += ha.embeddings.rows;
        positives.data.extend_from_slice(&hb.embeddings.data);
        positives.rows += hb.embeddings.rows;
        ta.regime().hash(&mut hasher);
        tb.regime().hash(&mut hasher);
        tapes.push((ta, tb, ha, hb));
    }
    let output = info_nce_in_batch(&queries, &positives, NegativePool::QueriesAndPositives, loss, neg_seed)?;

    let mut grads = model.zeros_like();
    let mut offset = 0;
    for (ta, tb, ha, hb) in &tapes {
        let rows = ta.len() * m;
        let dq = &output.grad_queries[offset..offset + rows];
        let dp = &output.grad_positives[offset..offset + rows];
        let dfa = ha.backward(&model.head, dq, &mut grads.head);
        ta.backward(&model.encoder, &dfa, &mut grads.encoder);
        let dfb = hb.backward(&model.head, dp, &mut grads.head);
        tb.backward(&model.encoder, &dfb, &mut grads.encoder);
        offset += rows;
    }
    Ok(Stage1Eval { output, grads, regime: hasher.finish(), queries, positives })
}

/// Draws one augmented pair of `img`, retrying with fresh seeds while the views do not
/// overlap. `None` after the retries are used up.
fn draw_pair(img: &Image, cfg: &Stage1Config, iteration: usize, slot: usize) -> Result<Option<Stage1Pair>, PipelineError> {
    for attempt in 0..=OVERLAP_RETRIES {
        let tag = |k: u64| seed::derive(cfg.seed, &[2, iteration as u64, slot as u64, attempt as u64, k]);
        let (view_a, map_a) = augment_image(img, &cfg.view_a, tag(0))?;
        let (view_b, map_b) = augment_image(img, &cfg.view_b, tag(1))?;
        match match_positive_pixels(&map_a, &map_b, cfg.pixels_per_pair, tag(2)) {
            Ok(pixels) => return Ok(Some(Stage1Pair { view_a, view_b, pixels })),
            Err(AugmentError::EmptyOverlap) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(None)
}

/// Stage-1 pre-training on `dataset`. Deterministic in `cfg.seed`.
pub fn pretrain_2d(dataset: &[Image], cfg: &Stage1Config) -> Result<(Model2D, TrainReport), PipelineError> {
    pretrain_2d_with(dataset, cfg, |_, _| {})
}

/// [`pretrain_2d`] with a callback that sees every iteration's evaluation before the
/// update, e.g. to audit embeddings.
pub fn pretrain_2d_with(
    dataset: &[Image],
    cfg: &Stage1Config,
    mut observe: impl FnMut(usize, &Stage1Eval),
) -> Result<(Model2D, TrainReport), PipelineError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let mut model = Model2D::new(cfg.embed_dim, cfg.head_dim, cfg.seed);
    let mut state = OptimState::new();
    let mut report = TrainReport::default();
    for it in 0..cfg.iterations {
        let start = Instant::now();
        let mut rng = seed::rng(seed::derive(cfg.seed, &[1, it as u64]));
        let mut batch = Stage1Batch::default();
        let mut skipped = 0;
        for slot in 0..cfg.batch_pairs {
            let idx = rng.random_range(0..dataset.len());
            match draw_pair(&dataset[idx], cfg, it, slot)? {
                Some(p) => batch.pairs.push(p),
                None => {
                    log::warn!("iteration {it}: image {idx} gave no overlapping views after {OVERLAP_RETRIES} retries; pair skipped");
                    skipped += 1;
                }
            }
        }
        if batch.pairs.is_empty() {
            return Err(PipelineError::IterationStarved { iteration: it, reasons: "no overlapping view pairs".into() });
        }
        let eval = stage1_objective(&model, &batch, &cfg.loss, seed::derive(cfg.seed, &[3, it as u64]))?;
        if !eval.output.total.is_finite() {
            return Err(PipelineError::NonFiniteLoss { iteration: it, replay: format!("stage1 seed={} iteration={it}", cfg.seed) });
        }
        observe(it, &eval);
        let lr = sgd_step(&mut model, &eval.grads, &mut state, &cfg.optim)?;
        report.history.push(IterationRecord {
            iteration: it,
            loss: eval.output.total,
            loss_per_query: eval.output.mean(),
            alignment_gap: eval.output.alignment_gap(),
            lr,
            skipped,
        });
        report.wall.push(start.elapsed());
        log::debug!("stage1 it {it}: loss/query {:.4} gap {:.4}", eval.output.mean(), eval.output.alignment_gap());
    }
    Ok((model, report))
}
