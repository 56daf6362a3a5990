use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;

use crate::autodiff::{Tape, Tensor};
use crate::distill::{
    distill_loss, inject_image_noise, total_loss, Auxiliary, DistillInputs, Method,
};
use crate::error::{Error, Result};
use crate::harness::config::{Role, TrainConfig};
use crate::harness::report::{EpochRecord, FinalMetrics, RunReport};
use crate::nn::{
    inherit_parameters, load_checkpoint, pixel_cross_entropy, save_checkpoint, sgd_step, Module,
    Param, SmallCnn,
};
use crate::rng::Rng;
use crate::synth::{argmax_classes, generate_dataset, stack_batch, ConfusionMatrix, SynthSample};

pub const TEACHER_CHECKPOINT: &str = "teacher.ckpt.json";
pub const STUDENT_CHECKPOINT: &str = "student.ckpt.json";

// Independent random streams per run seed.
const STREAM_INIT: u64 = 10;
const STREAM_AUX: u64 = 11;
const STREAM_SHUFFLE: u64 = 12;
const STREAM_NOISE: u64 = 13;

const EVAL_BATCH: usize = 64;

/// Confusion matrix of `net` over `samples`.
pub fn evaluate(net: &SmallCnn, samples: &[SynthSample]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(net.num_classes());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&SynthSample> = chunk.iter().collect();
        let (x, labels) = stack_batch(&refs)?;
        let out = net.forward(&mut Tape::no_grad(), &x)?;
        cm.update(&argmax_classes(&out.logits)?, &labels)?;
    }
    Ok(cm)
}

fn final_metrics(cm: ConfusionMatrix) -> Result<FinalMetrics> {
    let (per_class_iou, miou) = cm.miou()?;
    Ok(FinalMetrics {
        per_class_iou,
        miou,
        pixel_acc: cm.pixel_accuracy()?,
        confusion: cm,
    })
}

fn run_id(cfg: &TrainConfig) -> String {
    cfg.output_dir
        .file_name()
        .map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned())
}

/// Per-run state that differs between teacher and student training.
struct Distiller {
    teacher: SmallCnn,
    aux: Option<Auxiliary>,
}

#[derive(Default)]
struct Running {
    task: f64,
    distill: f64,
    total: f64,
    batches: usize,
}

fn train_loop(
    cfg: &TrainConfig,
    net: &mut SmallCnn,
    distiller: Option<&mut Distiller>,
    train: &[SynthSample],
    val: &[SynthSample],
) -> Result<Vec<EpochRecord>> {
    let d = &cfg.distill;
    // A zero weight disables the whole distillation path, image noise
    // included, so the student sees exactly the plain supervised run.
    let mut distiller = distiller.filter(|_| d.method != Method::None && d.alpha != 0.0);
    let mut noise_rng = Rng::derive(cfg.seed, STREAM_NOISE, 0);
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        Rng::derive(cfg.seed, STREAM_SHUFFLE, epoch as u64).shuffle(&mut order);
        let mut acc = Running::default();
        for idx in order.chunks(cfg.sgd.batch_size) {
            let batch: Vec<&SynthSample> = idx.iter().map(|&i| &train[i]).collect();
            let (x, labels) = stack_batch(&batch)?;
            let mut tape = Tape::new();
            let (total, task, distill) = match distiller.as_deref_mut() {
                None => {
                    let out = net.forward(&mut tape, &x)?;
                    let task = pixel_cross_entropy(&mut tape, &out.logits, &labels)?;
                    (task.clone(), task, None)
                }
                Some(dist) => {
                    let teacher_out = dist.teacher.forward(&mut Tape::no_grad(), &x)?;
                    let x_s = if d.image_noise() {
                        inject_image_noise(&x, d, &mut noise_rng)?
                    } else {
                        x
                    };
                    let out = net.forward(&mut tape, &x_s)?;
                    let task = pixel_cross_entropy(&mut tape, &out.logits, &labels)?;
                    let inputs = DistillInputs {
                        teacher_feature: &teacher_out.feature,
                        student_feature: &out.feature,
                        teacher_logits: Some(&teacher_out.logits),
                        student_logits: &out.logits,
                    };
                    let dl = distill_loss(&mut tape, inputs, dist.aux.as_ref(), d, &mut noise_rng)?
                        .expect("method is not none");
                    (total_loss(&mut tape, &task, &dl, d.alpha)?, task, Some(dl))
                }
            };
            let total_value = total.item();
            if !total_value.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
            }
            tape.backward(&total)?;
            let mut params: Vec<&mut Param> = net.params_mut();
            if let Some(aux) = distiller.as_deref_mut().and_then(|dist| dist.aux.as_mut()) {
                params.extend(aux.params_mut());
            }
            sgd_step(&mut params, &cfg.sgd)?;
            acc.task += task.item();
            acc.distill += distill.map_or(0.0, |t: Tensor| t.item());
            acc.total += total_value;
            acc.batches += 1;
        }
        let cm = evaluate(net, val)?;
        let n = acc.batches.max(1) as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            task_loss: acc.task / n,
            distill_loss: acc.distill / n,
            total_loss: acc.total / n,
            val_miou: cm.miou()?.1,
            val_pixel_acc: cm.pixel_accuracy()?,
        };
        info!(
            "epoch {:>3}  task {:.4}  distill {:.4}  val mIoU {:.4}  acc {:.4}",
            record.epoch,
            record.task_loss,
            record.distill_loss,
            record.val_miou,
            record.val_pixel_acc
        );
        records.push(record);
    }
    Ok(records)
}

fn init_network(cfg: &TrainConfig) -> Result<SmallCnn> {
    let mut net = SmallCnn::with_last_tap(3, &cfg.widths, cfg.dataset.num_classes)?;
    net.init_params(&mut Rng::derive(cfg.seed, STREAM_INIT, 0))?;
    Ok(net)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    cfg: &TrainConfig,
    net: &SmallCnn,
    checkpoint_name: &str,
    val: &[SynthSample],
    records: Vec<EpochRecord>,
    aux_param_count: Option<usize>,
    inherited_params: usize,
    started: Instant,
) -> Result<(PathBuf, RunReport)> {
    let ckpt = cfg.output_dir.join(checkpoint_name);
    save_checkpoint(net, &ckpt)?;
    let report = RunReport {
        run_id: run_id(cfg),
        seed: cfg.seed,
        config: cfg.clone(),
        records,
        final_metrics: final_metrics(evaluate(net, val)?)?,
        aux_param_count,
        inherited_params,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    report.save(&cfg.output_dir)?;
    Ok((ckpt, report))
}

/// Train the wide network with cross-entropy only and save its checkpoint.
pub fn train_teacher(cfg: &TrainConfig) -> Result<(PathBuf, RunReport)> {
    cfg.validate()?;
    if cfg.role != Role::Teacher {
        return Err(Error::Config("train_teacher needs role = teacher".into()));
    }
    let started = Instant::now();
    let (train, val) = generate_dataset(&cfg.dataset)?;
    let mut net = init_network(cfg)?;
    let records = train_loop(cfg, &mut net, None, &train, &val)?;
    finish(
        cfg,
        &net,
        TEACHER_CHECKPOINT,
        &val,
        records,
        None,
        0,
        started,
    )
}

/// Load a frozen teacher from `path`.
pub fn load_teacher(path: &Path) -> Result<SmallCnn> {
    load_checkpoint(path)?.to_small_cnn()
}

/// Train the student under the configured distillation method against the
/// frozen teacher, then save `student.ckpt.json` and the report.
pub fn train_student(cfg: &TrainConfig) -> Result<RunReport> {
    cfg.validate()?;
    if cfg.role != Role::Student {
        return Err(Error::Config("train_student needs role = student".into()));
    }
    let started = Instant::now();
    let teacher = match &cfg.teacher_checkpoint {
        Some(path) if cfg.distill.method.uses_teacher() || cfg.inherit => Some(load_teacher(path)?),
        _ => None,
    };
    if let Some(t) = &teacher {
        if t.num_classes() != cfg.dataset.num_classes || t.in_channels() != 3 {
            return Err(Error::Shape(format!(
                "teacher maps {} channels to {} classes; the task has 3 and {}",
                t.in_channels(),
                t.num_classes(),
                cfg.dataset.num_classes
            )));
        }
    }
    let (train, val) = generate_dataset(&cfg.dataset)?;
    let mut net = init_network(cfg)?;
    let inherited = match (&teacher, cfg.inherit) {
        (Some(t), true) => inherit_parameters(&mut net, t)?.count(),
        _ => 0,
    };

    let mut distiller = match teacher {
        Some(teacher) if cfg.distill.method.uses_teacher() => {
            let aux = Auxiliary::for_method(
                &cfg.distill,
                net.feature_channels(),
                teacher.feature_channels(),
                &mut Rng::derive(cfg.seed, STREAM_AUX, 0),
            )?;
            Some(Distiller { teacher, aux })
        }
        _ => None,
    };
    let aux_param_count = distiller
        .as_ref()
        .and_then(|d| d.aux.as_ref())
        .map(|a| a.param_count());
    let records = train_loop(cfg, &mut net, distiller.as_mut(), &train, &val)?;
    let (_, report) = finish(
        cfg,
        &net,
        STUDENT_CHECKPOINT,
        &val,
        records,
        aux_param_count,
        inherited,
        started,
    )?;
    Ok(report)
}
