use crate::autodiff::{gaussian_sample, log_softmax_values, softmax_values, Tape, Tensor};
use crate::distill::config::{DistillConfig, Method};
use crate::distill::modules::{AlignModule, Auxiliary, GenerationModule};
use crate::error::{Error, Result};
use crate::rng::Rng;

fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn nchw(what: &str, x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        &[n, c, h, w] => Ok((n, c, h * w)),
        s => Err(Error::Shape(format!(
            "{what} expects [N, C, H, W], got {s:?}"
        ))),
    }
}

pub fn align_apply(tape: &mut Tape, align: &AlignModule, s: &Tensor) -> Result<Tensor> {
    align.apply(tape, s)
}

pub fn generate(tape: &mut Tape, gen: &GenerationModule, x: &Tensor) -> Result<Tensor> {
    gen.generate(tape, x)
}

/// `align(S) + noise`, with fresh `N(mu, sigma^2)` noise when the config
/// injects into the feature. The noise is a constant for backpropagation.
pub fn noisy_embedding(
    tape: &mut Tape,
    s: &Tensor,
    align: &AlignModule,
    cfg: &DistillConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    let aligned = align.apply(tape, s)?;
    if cfg.inject_location != crate::distill::InjectLocation::Feature {
        return Ok(aligned);
    }
    let noise = gaussian_sample(rng, aligned.shape(), cfg.mu, cfg.sigma)?;
    tape.add(&aligned, &noise)
}

/// `S' = generate(align(S) + noise)`.
pub fn perturb_student(
    tape: &mut Tape,
    s: &Tensor,
    align: &AlignModule,
    gen: &GenerationModule,
    cfg: &DistillConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    let noisy = noisy_embedding(tape, s, align, cfg, rng)?;
    gen.generate(tape, &noisy)
}

/// Tempered softmax over the `H*W` positions of each `(n, c)` slice.
pub fn channel_softmax(tape: &mut Tape, x: &Tensor, tau: f64) -> Result<Tensor> {
    let (n, c, hw) = nchw("channel_softmax", x)?;
    let flat = tape.reshape(x, &[n, c, hw])?;
    let p = tape.softmax_with_temperature(&flat, 2, tau)?;
    tape.reshape(&p, x.shape())
}

/// Channel-wise KL divergence `KL(phi(T) || phi(S))` scaled by `tau^2 / C`
/// and averaged over the batch.
///
/// The teacher is a constant: no gradient ever reaches `t`.
pub fn channel_kl(tape: &mut Tape, t: &Tensor, s: &Tensor, tau: f64) -> Result<Tensor> {
    same_shape("channel_kl", t, s)?;
    let (n, c, hw) = nchw("channel_kl", s)?;
    let flat_shape = [n, c, hw];
    let log_q = {
        let flat = tape.reshape(s, &flat_shape)?;
        tape.log_softmax_with_temperature(&flat, 2, tau)?
    };
    kl_against_constant(tape, t.data(), &log_q, 2, tau, tau * tau / (c * n) as f64)
}

/// `scale * sum p_t * (log p_t - log_q)` where `p_t` is the tempered softmax
/// of the constant `t_data` along `axis`.
fn kl_against_constant(
    tape: &mut Tape,
    t_data: &[f64],
    log_q: &Tensor,
    axis: usize,
    tau: f64,
    scale: f64,
) -> Result<Tensor> {
    if tau <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let shape = log_q.shape();
    let p_t = Tensor::new(softmax_values(t_data, shape, axis, tau), shape)?;
    let log_p_t = Tensor::new(log_softmax_values(t_data, shape, axis, tau), shape)?;
    let diff = tape.sub(&log_p_t, log_q)?;
    let weighted = tape.mul(&p_t, &diff)?;
    let total = tape.sum_all(&weighted)?;
    tape.scalar_mul(&total, scale)
}

/// Channel-wise distillation on already-aligned student features.
pub fn cwd_loss(tape: &mut Tape, t: &Tensor, s_aligned: &Tensor, tau: f64) -> Result<Tensor> {
    channel_kl(tape, t, s_aligned, tau)
}

/// Channel KL between the teacher feature and the denoised perturbed student.
pub fn gdd_loss(
    tape: &mut Tape,
    t: &Tensor,
    s: &Tensor,
    align: &AlignModule,
    gen: &GenerationModule,
    cfg: &DistillConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    let s_prime = perturb_student(tape, s, align, gen, cfg, rng)?;
    channel_kl(tape, t, &s_prime, cfg.tau)
}

/// Mean of `(T - S)^2` over every entry, `T` held constant.
pub fn mse_feature_loss(tape: &mut Tape, t: &Tensor, s_aligned: &Tensor) -> Result<Tensor> {
    same_shape("mse_feature_loss", t, s_aligned)?;
    let diff = tape.sub(&t.detach(), s_aligned)?;
    let sq = tape.mul(&diff, &diff)?;
    tape.mean_all(&sq)
}

/// Noise + generator, compared with spatial MSE instead of channel KL.
pub fn sn_only_loss(
    tape: &mut Tape,
    t: &Tensor,
    s: &Tensor,
    align: &AlignModule,
    gen: &GenerationModule,
    cfg: &DistillConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    let s_prime = perturb_student(tape, s, align, gen, cfg, rng)?;
    mse_feature_loss(tape, t, &s_prime)
}

/// Spatial keep-mask of shape `[n, channels, h, w]`: each position of each
/// sample is zeroed with probability `ratio`, identically across channels.
pub fn spatial_mask(
    rng: &mut Rng,
    n: usize,
    channels: usize,
    h: usize,
    w: usize,
    ratio: f64,
) -> Result<Tensor> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "mask ratio must be in [0, 1), got {ratio}"
        )));
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(n * channels * hw);
    for _ in 0..n {
        let keep: Vec<f64> = (0..hw)
            .map(|_| if rng.uniform() < ratio { 0.0 } else { 1.0 })
            .collect();
        for _ in 0..channels {
            data.extend_from_slice(&keep);
        }
    }
    Tensor::new(data, &[n, channels, h, w])
}

/// Masked generative distillation: `MSE(T, generate(M * align(S)))`.
pub fn mgd_loss(
    tape: &mut Tape,
    t: &Tensor,
    s: &Tensor,
    align: &AlignModule,
    gen: &GenerationModule,
    mask_ratio: f64,
    rng: &mut Rng,
) -> Result<Tensor> {
    let aligned = align.apply(tape, s)?;
    let sh = aligned.shape().to_vec();
    let mask = spatial_mask(rng, sh[0], sh[1], sh[2], sh[3], mask_ratio)?;
    let masked = tape.mul(&aligned, &mask)?;
    let generated = gen.generate(tape, &masked)?;
    mse_feature_loss(tape, t, &generated)
}

/// Per-pixel `KL(softmax(zT/tau) || softmax(zS/tau))` over the class axis,
/// times `tau^2`, averaged over batch and pixels.
pub fn logit_kd_loss(
    tape: &mut Tape,
    logits_t: &Tensor,
    logits_s: &Tensor,
    tau: f64,
) -> Result<Tensor> {
    same_shape("logit_kd_loss", logits_t, logits_s)?;
    let (n, _, hw) = nchw("logit_kd_loss", logits_s)?;
    let log_q = tape.log_softmax_with_temperature(logits_s, 1, tau)?;
    kl_against_constant(
        tape,
        logits_t.data(),
        &log_q,
        1,
        tau,
        tau * tau / (n * hw) as f64,
    )
}

/// `x + N(mu, sigma^2)` noise on the raw input image.
pub fn inject_image_noise(x: &Tensor, cfg: &DistillConfig, rng: &mut Rng) -> Result<Tensor> {
    let noise = gaussian_sample(rng, x.shape(), cfg.mu, cfg.sigma)?;
    let data = x
        .data()
        .iter()
        .zip(noise.data())
        .map(|(a, b)| a + b)
        .collect();
    Tensor::new(data, x.shape())
}

/// `task + alpha * distill`.
pub fn total_loss(tape: &mut Tape, task: &Tensor, distill: &Tensor, alpha: f64) -> Result<Tensor> {
    if !task.is_scalar() || !distill.is_scalar() {
        return Err(Error::Shape("total_loss expects scalar losses".into()));
    }
    let weighted = tape.scalar_mul(distill, alpha)?;
    tape.add(task, &weighted)
}

/// Network outputs consumed by [`distill_loss`].
#[derive(Debug, Clone, Copy)]
pub struct DistillInputs<'a> {
    pub teacher_feature: &'a Tensor,
    pub student_feature: &'a Tensor,
    pub teacher_logits: Option<&'a Tensor>,
    pub student_logits: &'a Tensor,
}

/// The configured method's distillation loss, or `None` for `Method::None`.
pub fn distill_loss(
    tape: &mut Tape,
    inputs: DistillInputs<'_>,
    aux: Option<&Auxiliary>,
    cfg: &DistillConfig,
    rng: &mut Rng,
) -> Result<Option<Tensor>> {
    let need_aux = || {
        aux.ok_or_else(|| Error::InvalidArgument(format!("{} needs auxiliary modules", cfg.method)))
    };
    fn need_gen(aux: &Auxiliary, method: Method) -> Result<&GenerationModule> {
        aux.generator
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{method} needs a generator")))
    }
    let (t, s) = (inputs.teacher_feature, inputs.student_feature);
    let loss = match cfg.method {
        Method::None => return Ok(None),
        Method::Gdd => {
            let aux = need_aux()?;
            gdd_loss(tape, t, s, &aux.align, need_gen(aux, cfg.method)?, cfg, rng)?
        }
        Method::SnOnly => {
            let aux = need_aux()?;
            sn_only_loss(tape, t, s, &aux.align, need_gen(aux, cfg.method)?, cfg, rng)?
        }
        Method::Mgd => {
            let aux = need_aux()?;
            mgd_loss(
                tape,
                t,
                s,
                &aux.align,
                need_gen(aux, cfg.method)?,
                cfg.mask_ratio,
                rng,
            )?
        }
        Method::Cwd => {
            let aligned = need_aux()?.align.apply(tape, s)?;
            cwd_loss(tape, t, &aligned, cfg.tau)?
        }
        Method::Mse => {
            let aligned = need_aux()?.align.apply(tape, s)?;
            mse_feature_loss(tape, t, &aligned)?
        }
        Method::LogitKd => {
            let lt = inputs
                .teacher_logits
                .ok_or_else(|| Error::InvalidArgument("logit_kd needs teacher logits".into()))?;
            logit_kd_loss(tape, lt, inputs.student_logits, cfg.tau)?
        }
    };
    Ok(Some(loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::config::Method;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::new(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn channel_softmax_scalar_oracle() {
        let y = channel_softmax(&mut Tape::new(), &t(&[0.0, 4.0], &[1, 1, 1, 2]), 4.0).unwrap();
        // e / (e + 1)
        let hi = 0.731_058_578_630_004_9;
        assert!((y.data()[1] - hi).abs() < 1e-15);
        assert!((y.data()[0] - (1.0 - hi)).abs() < 1e-15);
    }

    #[test]
    fn constant_channel_is_uniform() {
        let y = channel_softmax(
            &mut Tape::new(),
            &Tensor::full(&[2, 3, 2, 2], 2.5).unwrap(),
            1.5,
        )
        .unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn channel_kl_scalar_oracle() {
        let kl = channel_kl(
            &mut Tape::new(),
            &t(&[0.0, 0.0], &[1, 1, 1, 2]),
            &t(&[1.0, 0.0], &[1, 1, 1, 2]),
            1.0,
        )
        .unwrap();
        assert!((kl.item() - 0.120_114_506_958_277_58).abs() < 1e-15);
    }

    #[test]
    fn channel_kl_tau_squared_scaling() {
        // With logits pre-multiplied by tau, the distributions are those of
        // tau = 1, so the loss picks up exactly the tau^2 factor.
        let (tt, ss) = (t(&[0.0, 0.0], &[1, 1, 1, 2]), t(&[3.0, 0.0], &[1, 1, 1, 2]));
        let kl = channel_kl(&mut Tape::new(), &tt, &ss, 3.0).unwrap();
        assert!((kl.item() - 9.0 * 0.120_114_506_958_277_58).abs() < 1e-13);
    }

    #[test]
    fn logit_kd_scalar_oracle() {
        let lt = t(&[3f64.ln(), 0.0], &[1, 2, 1, 1]);
        let ls = t(&[0.0, 0.0], &[1, 2, 1, 1]);
        let kd = logit_kd_loss(&mut Tape::new(), &lt, &ls, 1.0).unwrap();
        assert!((kd.item() - 0.130_812_035_941_136_97).abs() < 1e-15);
        assert!(
            logit_kd_loss(&mut Tape::new(), &lt, &lt, 2.0)
                .unwrap()
                .item()
                .abs()
                < 1e-15
        );
    }

    #[test]
    fn mse_oracles() {
        let tt = t(&[1.0, -2.0, 0.5, 4.0], &[1, 1, 2, 2]);
        let shifted = t(&[1.5, -1.5, 1.0, 4.5], &[1, 1, 2, 2]);
        assert_eq!(
            mse_feature_loss(&mut Tape::new(), &tt, &tt).unwrap().item(),
            0.0
        );
        assert!(
            (mse_feature_loss(&mut Tape::new(), &tt, &shifted)
                .unwrap()
                .item()
                - 0.25)
                .abs()
                < 1e-15
        );
        let s = t(&[0.0, 0.0, 1.5, 2.0], &[1, 1, 2, 2]);
        // (1 + 4 + 1 + 4) / 4
        assert!((mse_feature_loss(&mut Tape::new(), &tt, &s).unwrap().item() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn total_loss_is_exact() {
        let mut tape = Tape::new();
        let l = total_loss(
            &mut tape,
            &Tensor::scalar(1.0),
            &Tensor::scalar(0.02),
            145.0,
        )
        .unwrap();
        assert_eq!(l.item(), 3.9);
        assert!(total_loss(
            &mut tape,
            &Tensor::zeros(&[2]).unwrap(),
            &Tensor::scalar(1.0),
            1.0
        )
        .is_err());
    }

    #[test]
    fn teacher_receives_no_gradient() {
        let teacher = Tensor::leaf(vec![0.3, -0.2, 0.9, 0.1], &[1, 1, 2, 2], true).unwrap();
        let student = Tensor::leaf(vec![0.1, 0.4, -0.3, 0.2], &[1, 1, 2, 2], true).unwrap();
        let mut tape = Tape::new();
        let kl = channel_kl(&mut tape, &teacher, &student, 2.0).unwrap();
        let mse = mse_feature_loss(&mut tape, &teacher, &student).unwrap();
        let both = tape.add(&kl, &mse).unwrap();
        tape.backward(&both).unwrap();
        assert!(teacher.grad().is_none());
        assert!(student.grad().is_some());
    }

    #[test]
    fn image_noise_statistics() {
        let cfg = DistillConfig {
            sigma: 0.7,
            ..DistillConfig::default()
        };
        let x = Tensor::full(&[1, 1, 100, 1000], 0.25).unwrap();
        let y = inject_image_noise(&x, &cfg, &mut Rng::new(8)).unwrap();
        let n = y.numel() as f64;
        let mean = y.data().iter().map(|v| v - 0.25).sum::<f64>() / n;
        let var = y
            .data()
            .iter()
            .map(|v| (v - 0.25 - mean).powi(2))
            .sum::<f64>()
            / n;
        assert!((var / 0.49 - 1.0).abs() < 0.02, "{var}");
        let still = DistillConfig { sigma: 0.0, ..cfg };
        assert_eq!(
            inject_image_noise(&x, &still, &mut Rng::new(8))
                .unwrap()
                .data(),
            x.data()
        );
    }

    #[test]
    fn mask_fraction() {
        let m = spatial_mask(&mut Rng::new(2), 10, 3, 100, 100, 0.3).unwrap();
        let hw = 100 * 100;
        let zeros = (0..10)
            .map(|s| {
                m.data()[s * 3 * hw..][..hw]
                    .iter()
                    .filter(|&&v| v == 0.0)
                    .count()
            })
            .sum::<usize>();
        assert!((zeros as f64 / 1e5 - 0.3).abs() < 0.02);
        // Shared across channels.
        assert_eq!(m.data()[..hw], m.data()[hw..2 * hw]);
        assert!(spatial_mask(&mut Rng::new(2), 1, 1, 2, 2, 1.0).is_err());
    }

    #[test]
    fn feature_noise_variance() {
        let cfg = DistillConfig {
            sigma: 1.5,
            ..DistillConfig::default()
        };
        let s = Tensor::full(&[1, 1, 100, 1000], 0.5).unwrap();
        let align = AlignModule::identity(1);
        let e = noisy_embedding(&mut Tape::new(), &s, &align, &cfg, &mut Rng::new(4)).unwrap();
        let n = e.numel() as f64;
        let mean = e.data().iter().map(|v| v - 0.5).sum::<f64>() / n;
        let var = e
            .data()
            .iter()
            .map(|v| (v - 0.5 - mean).powi(2))
            .sum::<f64>()
            / n;
        assert!((var / 2.25 - 1.0).abs() < 0.02, "{var}");
        let image = DistillConfig {
            inject_location: crate::distill::InjectLocation::Image,
            ..cfg
        };
        let clean =
            noisy_embedding(&mut Tape::new(), &s, &align, &image, &mut Rng::new(4)).unwrap();
        assert_eq!(clean.data(), s.data());
    }

    #[test]
    fn distill_loss_dispatch() {
        let mut rng = Rng::new(1);
        let f = Tensor::full(&[1, 2, 3, 3], 0.3).unwrap();
        let logits = Tensor::zeros(&[1, 4, 3, 3]).unwrap();
        let inputs = DistillInputs {
            teacher_feature: &f,
            student_feature: &f,
            teacher_logits: Some(&logits),
            student_logits: &logits,
        };
        for method in Method::ALL {
            let cfg = DistillConfig {
                method,
                ..DistillConfig::default()
            };
            let aux = Auxiliary::for_method(&cfg, 2, 2, &mut rng).unwrap();
            let loss =
                distill_loss(&mut Tape::new(), inputs, aux.as_ref(), &cfg, &mut rng).unwrap();
            assert_eq!(loss.is_none(), method == Method::None, "{method}");
            if method.uses_generator() {
                assert!(distill_loss(&mut Tape::new(), inputs, None, &cfg, &mut rng).is_err());
            }
        }
    }
}
