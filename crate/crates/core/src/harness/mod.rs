//! Experiment driver: source warmup, then per-epoch student training on a
//! weighted target sampler, snapshot aggregation and re-scoring.

mod ablation;
mod config;
mod regularizer;
mod report;

pub use ablation::{run_ablation, AblationCell, AblationResult};
pub use config::{variant_label, ExperimentConfig, SamplerKind, Variant};
pub use regularizer::{EntropyMinimization, NoRegularizer, Regularizer, RegularizerConfig};
pub use report::{MetricsReport, ReportRow, Summary, CONFIG_PREFIX, REPORT_HEADER};

use std::borrow::Cow;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::aggregator::{adaboost_alpha_measured, weighted_combine, AggregateState, AggregationVariant, Snapshot};
use crate::data::{generate_domain_pair, ConfusionMatrix, DomainPair, ShiftConfig};
use crate::error::{Error, Result};
use crate::model::{
    fuse_predictions, poly_lr, sgd_update, write_snapshot_file, Image, LabelMap, Mode, ParamVector, Role, SegModel,
    SnapshotFile,
};
use crate::pool::Workers;
use crate::rng::{stream, Stream};
use crate::sampler::{Cdf, SampleDistribution};
use crate::uncertainty::{normalize_scores_with_temperature, score_dataset, Criterion, ScoreVector};

pub const REPORT_FILE: &str = "report.csv";
pub const STUDENT_FILE: &str = "student.abst";
pub const AGGREGATE_FILE: &str = "aggregate.abst";
pub const DISTRIBUTION_FILE: &str = "distribution.csv";

/// Produces the per-image hardness scores that drive the sampler.
pub trait TargetScorer: Sync {
    fn score(
        &self,
        model: &SegModel,
        params: &ParamVector,
        targets: &[Image],
        criterion: Criterion,
        workers: &Workers,
    ) -> Result<ScoreVector>;
}

impl<T: TargetScorer + ?Sized> TargetScorer for &T {
    fn score(
        &self,
        model: &SegModel,
        params: &ParamVector,
        targets: &[Image],
        criterion: Criterion,
        workers: &Workers,
    ) -> Result<ScoreVector> {
        (**self).score(model, params, targets, criterion, workers)
    }
}

/// Scores each target image with a dropout-free forward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardScorer;

impl TargetScorer for ForwardScorer {
    fn score(
        &self,
        model: &SegModel,
        params: &ParamVector,
        targets: &[Image],
        criterion: Criterion,
        workers: &Workers,
    ) -> Result<ScoreVector> {
        score_dataset(model, params, targets, criterion, workers)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub student: Snapshot,
    /// Every epoch's student snapshot, `θ_1 ..= θ_T`.
    pub snapshots: Vec<Snapshot>,
    pub aggregate: AggregateState,
    /// Sampling distributions `D_1 ..= D_T`, one per epoch.
    pub distributions: Vec<SampleDistribution>,
    /// Learning rate of every iteration, warmup included.
    pub lr_trace: Vec<f64>,
}

pub struct Experiment<'a> {
    config: ExperimentConfig,
    data: Option<DomainPair>,
    scorer: Box<dyn TargetScorer + 'a>,
    regularizer: Box<dyn Regularizer + 'a>,
    workers: Workers,
}

struct LoopState {
    params: ParamVector,
    epoch: usize,
    aggregate: Option<AggregateState>,
    snapshots: Vec<Snapshot>,
    rows: Vec<ReportRow>,
    distributions: Vec<SampleDistribution>,
    lr_trace: Vec<f64>,
}

struct Streams {
    source: rand_chacha::ChaCha8Rng,
    dropout: rand_chacha::ChaCha8Rng,
    sampling: rand_chacha::ChaCha8Rng,
    augment: rand_chacha::ChaCha8Rng,
}

impl<'a> Experiment<'a> {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let regularizer = config.regularizer.build();
        Ok(Experiment {
            config,
            data: None,
            scorer: Box::new(ForwardScorer),
            regularizer,
            workers: Workers::serial(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    /// Train on `pair` instead of generating data from the shift config.
    pub fn with_data(mut self, pair: DomainPair) -> Result<Self> {
        let view = pair.evaluation_view();
        let img = &view.source()[0].image;
        let m = &self.config.model;
        if (img.height(), img.width(), img.features(), pair.classes()) != (m.height, m.width, m.features, m.classes) {
            return Err(Error::Config("dataset dimensions do not match the model config".into()));
        }
        self.data = Some(pair);
        Ok(self)
    }

    pub fn with_scorer(mut self, scorer: impl TargetScorer + 'a) -> Self {
        self.scorer = Box::new(scorer);
        self
    }

    pub fn with_regularizer(mut self, regularizer: impl Regularizer + 'a) -> Self {
        self.regularizer = Box::new(regularizer);
        self
    }

    pub fn with_workers(mut self, workers: Workers) -> Self {
        self.workers = workers;
        self
    }

    /// Runs the experiment. With `output_dir` set, writes the report and
    /// final snapshots there; after a divergence the last good student (and
    /// aggregate, if any) are written before the error is returned.
    pub fn run(&self) -> Result<RunOutcome> {
        let cfg = &self.config;
        let generated;
        let pair = match &self.data {
            Some(pair) => pair,
            None => {
                generated = generate_domain_pair(&ShiftConfig {
                    seed: cfg.seed,
                    ..cfg.shift.clone()
                })?;
                &generated
            }
        };
        let model = SegModel::new(cfg.model.clone())?;
        let mut state = LoopState {
            params: model.init_params(cfg.seed),
            epoch: 0,
            aggregate: None,
            snapshots: Vec::new(),
            rows: Vec::new(),
            distributions: Vec::new(),
            lr_trace: Vec::new(),
        };
        let result = self.train(&model, pair, &mut state);
        let report = MetricsReport {
            config_echo: cfg.echo(),
            rows: std::mem::take(&mut state.rows),
        };
        if let Some(dir) = &cfg.output_dir {
            if result.is_ok() || matches!(result, Err(Error::Divergence { .. })) {
                self.write_outputs(dir, &report, &state)?;
            }
        }
        result?;
        Ok(RunOutcome {
            report,
            student: Snapshot::new(state.params, state.epoch)?,
            snapshots: state.snapshots,
            aggregate: state.aggregate.expect("at least one epoch ran"),
            distributions: state.distributions,
            lr_trace: state.lr_trace,
        })
    }

    fn write_outputs(&self, dir: &Path, report: &MetricsReport, state: &LoopState) -> Result<()> {
        fs::create_dir_all(dir)?;
        report.write_file(&dir.join(REPORT_FILE))?;
        let student = SnapshotFile {
            role: Role::Student,
            index: state.epoch as u64,
            params: state.params.clone(),
        };
        write_snapshot_file(&dir.join(STUDENT_FILE), &student)?;
        if let Some(agg) = &state.aggregate {
            write_snapshot_file(&dir.join(AGGREGATE_FILE), &agg.to_file())?;
        }
        if self.config.dump_distribution {
            let mut out = b"epoch,index,weight\n".to_vec();
            for d in &state.distributions {
                d.write_csv_rows(&mut out)?;
            }
            fs::write(dir.join(DISTRIBUTION_FILE), out)?;
        }
        Ok(())
    }

    fn train(&self, model: &SegModel, pair: &DomainPair, st: &mut LoopState) -> Result<()> {
        let cfg = &self.config;
        let train = pair.training_view();
        let eval = pair.evaluation_view();
        let seed = cfg.seed;
        let mut rngs = Streams {
            source: stream(seed, Stream::Source),
            dropout: stream(seed, Stream::Dropout),
            sampling: stream(seed, Stream::Sampling),
            augment: stream(seed, Stream::Augment),
        };
        let total = cfg.total_iterations();
        let mut global = 0usize;

        for _ in 0..cfg.warmup_epochs * cfg.iters_per_epoch {
            self.iteration(model, pair, st, &mut rngs, global, total, None)?;
            global += 1;
        }

        let source_pairs: Vec<(&Image, &LabelMap)> = eval.source().iter().map(|s| (&s.image, &s.labels)).collect();
        let target_pairs: Vec<(&Image, &LabelMap)> =
            eval.target_images().iter().zip(eval.target_labels()).collect();

        let mut dist = SampleDistribution::init_uniform(train.target_images().len())?;
        let mut ema = None;
        let mut oracle_history: Vec<(ParamVector, f64)> = Vec::new();

        for t in 1..=cfg.epochs {
            let cdf = dist.cdf();
            if let AggregationVariant::Ema { .. } = cfg.aggregation {
                ema.get_or_insert_with(|| AggregateState::from_params(st.params.clone()));
            }
            let mut lr = 0.0;
            for _ in 0..cfg.iters_per_epoch {
                lr = self.iteration(model, pair, st, &mut rngs, global, total, Some(&cdf))?;
                global += 1;
                if let (AggregationVariant::Ema { decay }, Some(state)) = (cfg.aggregation, ema.as_mut()) {
                    *state = state.update_ema(&st.params, decay)?;
                }
            }
            st.epoch = t;
            let snap = Snapshot::new(st.params.clone(), t)?;
            let student_tgt = self.evaluate(model, &snap.params, &target_pairs)?;

            let aggregate = match (cfg.aggregation, st.aggregate.take()) {
                (AggregationVariant::None, _) => AggregateState::from_params(snap.params.clone()),
                (AggregationVariant::RunningMean, None) => AggregateState::init(&snap)?,
                (AggregationVariant::RunningMean, Some(prev)) => prev.update_running_mean(&snap)?,
                (AggregationVariant::Momentum { .. }, None) => AggregateState::init(&snap)?,
                (AggregationVariant::Momentum { momentum }, Some(prev)) => prev.update_momentum(&snap, momentum)?,
                (AggregationVariant::Ema { .. }, _) => ema.clone().expect("ema state initialised"),
                (AggregationVariant::OracleAlpha, _) => {
                    let alpha = adaboost_alpha_measured(1.0 - student_tgt.pixel_accuracy())?.max(0.0);
                    oracle_history.push((snap.params.clone(), alpha));
                    let params: Vec<&ParamVector> = oracle_history.iter().map(|(p, _)| p).collect();
                    let mut alphas: Vec<f64> = oracle_history.iter().map(|(_, a)| *a).collect();
                    if alphas.iter().sum::<f64>() <= 0.0 {
                        alphas.iter_mut().for_each(|a| *a = 1.0);
                    }
                    AggregateState::from_params(weighted_combine(&params, &alphas)?)
                }
            };

            let kl = self.scorer.score(
                model,
                aggregate.mean_params(),
                train.target_images(),
                Criterion::KlVariance,
                &self.workers,
            )?;
            let next = match cfg.sampler.criterion() {
                Some(Criterion::KlVariance) => dist.update(&normalize_scores_with_temperature(&kl, cfg.temperature)?)?,
                Some(Criterion::Entropy) => {
                    let en = self.scorer.score(
                        model,
                        aggregate.mean_params(),
                        train.target_images(),
                        Criterion::Entropy,
                        &self.workers,
                    )?;
                    dist.update(&normalize_scores_with_temperature(&en, cfg.temperature)?)?
                }
                None => dist.update(&vec![1.0 / dist.len() as f64; dist.len()])?,
            };

            let student_src = self.evaluate(model, &snap.params, &source_pairs)?;
            let aggregate_tgt = self.evaluate(model, aggregate.mean_params(), &target_pairs)?;
            st.rows.push(ReportRow {
                epoch: t,
                iter: global,
                variant: variant_label(cfg).to_string(),
                lr,
                student_src_miou: self.miou(&student_src)?,
                student_tgt_miou: self.miou(&student_tgt)?,
                aggregate_tgt_miou: self.miou(&aggregate_tgt)?,
                dist_entropy: dist.entropy(),
                mean_vkl: kl.mean(),
            });
            st.aggregate = Some(aggregate);
            st.snapshots.push(snap);
            st.distributions.push(std::mem::replace(&mut dist, next));
        }
        Ok(())
    }

    /// One SGD step; returns the learning rate used.
    #[allow(clippy::too_many_arguments)]
    fn iteration(
        &self,
        model: &SegModel,
        pair: &DomainPair,
        st: &mut LoopState,
        rngs: &mut Streams,
        global: usize,
        total: usize,
        target_cdf: Option<&Cdf>,
    ) -> Result<f64> {
        let cfg = &self.config;
        let view = pair.training_view();
        let lr = poly_lr(global, total, cfg.lr0)?;

        let source = view.source();
        let mut items: Vec<(Cow<Image>, Cow<LabelMap>)> = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let s = &source[rngs.source.gen_range(0..source.len())];
            if cfg.hflip && rngs.augment.gen_bool(0.5) {
                items.push((Cow::Owned(s.image.flipped()), Cow::Owned(s.labels.flipped())));
            } else {
                items.push((Cow::Borrowed(&s.image), Cow::Borrowed(&s.labels)));
            }
        }
        let batch: Vec<(&Image, &LabelMap)> = items.iter().map(|(i, l)| (i.as_ref(), l.as_ref())).collect();
        let dropout_seed: u64 = rngs.dropout.gen();

        let diverged = |loss: f64| Error::Divergence { iteration: global, loss };
        let as_divergence = |e: Error| match e {
            Error::NonFinite(_) => diverged(f64::NAN),
            other => other,
        };

        let (mut loss, mut grad) = model
            .batch_loss_and_grad(&st.params, &batch, cfg.model.aux_loss_weight, dropout_seed)
            .map_err(as_divergence)?;
        if let Some(cdf) = target_cdf {
            let targets: Vec<&Image> = cdf
                .draw(&mut rngs.sampling, cfg.batch_size)
                .into_iter()
                .map(|j| &view.target_images()[j])
                .collect();
            let (reg_loss, reg_grad) = self
                .regularizer
                .evaluate(model, &st.params, &targets)
                .map_err(as_divergence)?;
            if reg_grad.len() != grad.len() {
                return Err(Error::shape("regularizer gradient length"));
            }
            loss += reg_loss;
            grad.iter_mut().zip(&reg_grad).for_each(|(g, r)| *g += r);
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(diverged(loss));
        }
        let next = sgd_update(&st.params, &grad, lr);
        if !next.is_finite() {
            return Err(diverged(loss));
        }
        st.params = next;
        st.lr_trace.push(lr);
        Ok(lr)
    }

    fn evaluate(&self, model: &SegModel, params: &ParamVector, data: &[(&Image, &LabelMap)]) -> Result<ConfusionMatrix> {
        let classes = self.config.model.classes;
        let parts = self.workers.map(data.len(), |i| -> Result<ConfusionMatrix> {
            let (image, labels) = data[i];
            let (primary, aux) = model.forward(params, image, Mode::Eval)?;
            let mut cm = ConfusionMatrix::new(classes);
            cm.add(&fuse_predictions(&primary, &aux)?.argmax(), labels)?;
            Ok(cm)
        });
        let mut total = ConfusionMatrix::new(classes);
        for part in parts {
            total.merge(&part?)?;
        }
        Ok(total)
    }

    fn miou(&self, cm: &ConfusionMatrix) -> Result<f64> {
        match &self.config.miou_classes {
            Some(subset) => cm.miou_subset(subset),
            None => cm.miou(),
        }
    }
}

/// Runs `config` with the default scorer and regularizer.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome> {
    Experiment::new(config.clone())?.with_workers(Workers::from_env()).run()
}
