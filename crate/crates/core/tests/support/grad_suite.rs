//! Finite-difference check of every differentiable operation on random
//! instances. Shared by the core integration tests and the acceptance target.

use gdd_core::autodiff::check_gradients;
use gdd_core::distill::{
    align_apply, channel_kl, channel_softmax, cwd_loss, gdd_loss, generate, logit_kd_loss,
    mgd_loss, mse_feature_loss, noisy_embedding, perturb_student, sn_only_loss, spatial_mask,
    total_loss, AlignModule, DistillConfig, GenerationModule,
};
use gdd_core::nn::{pixel_cross_entropy, Conv2d};
use gdd_core::{Result, Rng, Tape, Tensor};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct OpOutcome {
    pub op: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

impl OpOutcome {
    /// False for NaN errors too.
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.uniform_range(lo, hi)).collect(), shape).unwrap()
}

/// Values in `±[0.05, 1]`, keeping ReLU inputs clear of the kink.
fn off_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.uniform_range(0.05, 1.0);
            if rng.below(2) == 0 {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(data, shape).unwrap()
}

fn small_shape(rng: &mut Rng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| 1 + rng.below(3) as usize).collect()
}

/// `sum(x * w)` for a constant `w`, so every output element matters.
fn weighted_sum(tape: &mut Tape, x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let p = tape.mul(x, w)?;
    tape.sum_all(&p)
}

fn generator(w1: &Tensor, b1: &Tensor, w2: &Tensor, b2: &Tensor) -> Result<GenerationModule> {
    GenerationModule::from_layers(
        Conv2d::from_tensors("generator.conv1", w1.clone(), b1.clone(), 1)?,
        Conv2d::from_tensors("generator.conv2", w2.clone(), b2.clone(), 1)?,
    )
}

/// Random generator parameters `[w1, b1, w2, b2]` for `ct` channels.
fn generator_params(rng: &mut Rng, ct: usize, hidden: usize) -> Vec<Tensor> {
    vec![
        uniform(rng, &[hidden, ct, 3, 3], -0.5, 0.5),
        uniform(rng, &[hidden], -0.2, 0.2),
        uniform(rng, &[ct, hidden, 3, 3], -0.5, 0.5),
        uniform(rng, &[ct], -0.2, 0.2),
    ]
}

/// ReLU inputs closer than this to zero make an instance a kink point; such
/// instances are redrawn.
const KINK: f64 = 1e-3;

/// Whether the generator's hidden pre-activation for input `x` is near a kink.
fn hidden_near_kink(x: &Tensor, w1: &Tensor, b1: &Tensor) -> bool {
    let z = Tape::no_grad().conv2d(x, w1, b1, 1, 1).unwrap();
    z.data().iter().any(|v| v.abs() < KINK)
}

/// What feeds the generator in a composite case.
#[derive(Clone, Copy)]
enum Path {
    Noise,
    IdentityAlign,
    Mask(f64),
}

struct Suite {
    rng: Rng,
    instances: usize,
    outcomes: Vec<OpOutcome>,
}

impl Suite {
    fn case(
        &mut self,
        op: &'static str,
        mut instance: impl FnMut(&mut Rng) -> Result<f64>,
    ) -> Result<()> {
        let mut worst: f64 = 0.0;
        for _ in 0..self.instances {
            worst = worst.max(instance(&mut self.rng)?);
        }
        self.outcomes.push(OpOutcome {
            op,
            instances: self.instances,
            max_rel_error: worst,
        });
        Ok(())
    }
}

/// Run the suite with `instances` random draws per operation.
pub fn run(instances: usize, seed: u64) -> Result<Vec<OpOutcome>> {
    let mut s = Suite {
        rng: Rng::new(seed),
        instances,
        outcomes: Vec::new(),
    };

    for (op, name) in [(0, "add"), (1, "sub"), (2, "mul")] {
        s.case(name, |rng| {
            let shape = small_shape(rng, 3);
            let (a, b, w) = (
                uniform(rng, &shape, -1.0, 1.0),
                uniform(rng, &shape, -1.0, 1.0),
                uniform(rng, &shape, -1.0, 1.0),
            );
            check_gradients(
                |t, x| {
                    let y = match op {
                        0 => t.add(&x[0], &x[1])?,
                        1 => t.sub(&x[0], &x[1])?,
                        _ => t.mul(&x[0], &x[1])?,
                    };
                    weighted_sum(t, &y, &w)
                },
                &[a, b],
                STEP,
            )
        })?;
    }
    s.case("scalar_mul", |rng| {
        let shape = small_shape(rng, 2);
        let (a, w, k) = (
            uniform(rng, &shape, -1.0, 1.0),
            uniform(rng, &shape, -1.0, 1.0),
            rng.uniform_range(-3.0, 3.0),
        );
        check_gradients(
            |t, x| {
                let y = t.scalar_mul(&x[0], k)?;
                weighted_sum(t, &y, &w)
            },
            &[a],
            STEP,
        )
    })?;
    s.case("exp", |rng| {
        let shape = small_shape(rng, 3);
        let (a, w) = (
            uniform(rng, &shape, -2.0, 2.0),
            uniform(rng, &shape, -1.0, 1.0),
        );
        check_gradients(
            |t, x| {
                let y = t.exp(&x[0])?;
                weighted_sum(t, &y, &w)
            },
            &[a],
            STEP,
        )
    })?;
    s.case("log", |rng| {
        let shape = small_shape(rng, 3);
        let (a, w) = (
            uniform(rng, &shape, 0.2, 3.0),
            uniform(rng, &shape, -1.0, 1.0),
        );
        check_gradients(
            |t, x| {
                let y = t.log(&x[0])?;
                weighted_sum(t, &y, &w)
            },
            &[a],
            STEP,
        )
    })?;
    s.case("relu", |rng| {
        let shape = small_shape(rng, 3);
        let (a, w) = (off_zero(rng, &shape), uniform(rng, &shape, -1.0, 1.0));
        check_gradients(
            |t, x| {
                let y = t.relu(&x[0])?;
                weighted_sum(t, &y, &w)
            },
            &[a],
            STEP,
        )
    })?;
    s.case("reshape", |rng| {
        let shape = small_shape(rng, 3);
        let flat: usize = shape.iter().product();
        let (a, w) = (
            uniform(rng, &shape, -1.0, 1.0),
            uniform(rng, &[flat], -1.0, 1.0),
        );
        check_gradients(
            |t, x| {
                let y = t.reshape(&x[0], &[flat])?;
                weighted_sum(t, &y, &w)
            },
            &[a],
            STEP,
        )
    })?;
    for (op, name) in [
        (gdd_core::autodiff::ReduceOp::Sum, "reduce_sum"),
        (gdd_core::autodiff::ReduceOp::Mean, "reduce_mean"),
    ] {
        s.case(name, |rng| {
            let shape = small_shape(rng, 4);
            let axes: Vec<usize> = (0..4).filter(|_| rng.below(2) == 0).collect();
            let out_shape: Vec<usize> = (0..4)
                .filter(|a| !axes.contains(a))
                .map(|a| shape[a])
                .collect();
            let (a, w) = (
                uniform(rng, &shape, -1.0, 1.0),
                uniform(rng, &out_shape, -1.0, 1.0),
            );
            check_gradients(
                |t, x| {
                    let y = t.reduce(op, &x[0], &axes)?;
                    weighted_sum(t, &y, &w)
                },
                &[a],
                STEP,
            )
        })?;
    }
    for (log, name) in [
        (false, "softmax_with_temperature"),
        (true, "log_softmax_with_temperature"),
    ] {
        s.case(name, |rng| {
            let shape: Vec<usize> = (0..3).map(|_| 1 + rng.below(4) as usize).collect();
            let axis = rng.below(3) as usize;
            let tau = rng.uniform_range(0.5, 5.0);
            let (a, w) = (
                uniform(rng, &shape, -3.0, 3.0),
                uniform(rng, &shape, -1.0, 1.0),
            );
            check_gradients(
                |t, x| {
                    let y = if log {
                        t.log_softmax_with_temperature(&x[0], axis, tau)?
                    } else {
                        t.softmax_with_temperature(&x[0], axis, tau)?
                    };
                    weighted_sum(t, &y, &w)
                },
                &[a],
                STEP,
            )
        })?;
    }
    s.case("conv2d", |rng| {
        let (n, cin, cout) = (
            1 + rng.below(2) as usize,
            1 + rng.below(3) as usize,
            1 + rng.below(3) as usize,
        );
        let k = [1, 2, 3][rng.below(3) as usize];
        let (stride, pad) = (1 + rng.below(2) as usize, rng.below(2) as usize);
        let (h, wd) = (k + rng.below(3) as usize, k + rng.below(3) as usize);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let inputs = [
            uniform(rng, &[n, cin, h, wd], -1.0, 1.0),
            uniform(rng, &[cout, cin, k, k], -1.0, 1.0),
            uniform(rng, &[cout], -1.0, 1.0),
        ];
        let w = uniform(rng, &[n, cout, ho, wo], -1.0, 1.0);
        check_gradients(
            |t, x| {
                let y = t.conv2d(&x[0], &x[1], &x[2], stride, pad)?;
                weighted_sum(t, &y, &w)
            },
            &inputs,
            STEP,
        )
    })?;
    s.case("pixel_cross_entropy", |rng| {
        let (n, k, h, w) = (
            1 + rng.below(2) as usize,
            2 + rng.below(3) as usize,
            2,
            1 + rng.below(3) as usize,
        );
        let labels: Vec<u8> = (0..n * h * w).map(|_| rng.below(k as u64) as u8).collect();
        let logits = uniform(rng, &[n, k, h, w], -2.0, 2.0);
        check_gradients(
            |t, x| pixel_cross_entropy(t, &x[0], &labels),
            &[logits],
            STEP,
        )
    })?;
    s.case("channel_softmax", |rng| {
        let shape = [1 + rng.below(2) as usize, 1 + rng.below(3) as usize, 2, 3];
        let tau = rng.uniform_range(0.5, 5.0);
        let (a, w) = (
            uniform(rng, &shape, -3.0, 3.0),
            uniform(rng, &shape, -1.0, 1.0),
        );
        check_gradients(
            |t, x| {
                let y = channel_softmax(t, &x[0], tau)?;
                weighted_sum(t, &y, &w)
            },
            &[a],
            STEP,
        )
    })?;
    s.case("channel_kl", |rng| {
        let shape = [1 + rng.below(2) as usize, 1 + rng.below(3) as usize, 3, 2];
        let tau = rng.uniform_range(0.5, 5.0);
        let (teacher, student) = (
            uniform(rng, &shape, -3.0, 3.0),
            uniform(rng, &shape, -3.0, 3.0),
        );
        check_gradients(|t, x| channel_kl(t, &teacher, &x[0], tau), &[student], STEP)
    })?;
    s.case("cwd_loss", |rng| {
        let shape = [1, 2, 3, 3];
        let tau = rng.uniform_range(0.5, 5.0);
        let (teacher, student) = (
            uniform(rng, &shape, -2.0, 2.0),
            uniform(rng, &shape, -2.0, 2.0),
        );
        check_gradients(|t, x| cwd_loss(t, &teacher, &x[0], tau), &[student], STEP)
    })?;
    s.case("mse_feature_loss", |rng| {
        let shape = small_shape(rng, 4);
        let (teacher, student) = (
            uniform(rng, &shape, -2.0, 2.0),
            uniform(rng, &shape, -2.0, 2.0),
        );
        check_gradients(
            |t, x| mse_feature_loss(t, &teacher, &x[0]),
            &[student],
            STEP,
        )
    })?;
    s.case("logit_kd_loss", |rng| {
        let shape = [1 + rng.below(2) as usize, 2 + rng.below(3) as usize, 2, 2];
        let tau = rng.uniform_range(0.5, 5.0);
        let (lt, ls) = (
            uniform(rng, &shape, -3.0, 3.0),
            uniform(rng, &shape, -3.0, 3.0),
        );
        check_gradients(|t, x| logit_kd_loss(t, &lt, &x[0], tau), &[ls], STEP)
    })?;
    s.case("total_loss", |rng| {
        let alpha = rng.uniform_range(0.0, 10.0);
        let task = Tensor::scalar(rng.uniform_range(0.0, 2.0));
        let distill = Tensor::scalar(rng.uniform_range(0.0, 2.0));
        check_gradients(
            |t, x| total_loss(t, &x[0], &x[1], alpha),
            &[task, distill],
            STEP,
        )
    })?;
    s.case("align_apply", |rng| {
        let (cs, ct) = (1 + rng.below(3) as usize, 1 + rng.below(3) as usize);
        let inputs = [
            uniform(rng, &[1, cs, 2, 3], -1.0, 1.0),
            uniform(rng, &[ct, cs, 1, 1], -1.0, 1.0),
            uniform(rng, &[ct], -1.0, 1.0),
        ];
        let w = uniform(rng, &[1, ct, 2, 3], -1.0, 1.0);
        check_gradients(
            |t, x| {
                let align = AlignModule::from_tensors(x[1].clone(), x[2].clone())?;
                let y = align_apply(t, &align, &x[0])?;
                weighted_sum(t, &y, &w)
            },
            &inputs,
            STEP,
        )
    })?;
    s.case("generate", |rng| {
        let (ct, hid) = (1 + rng.below(2) as usize, 1 + rng.below(3) as usize);
        let inputs = loop {
            let mut inputs = vec![uniform(rng, &[1, ct, 3, 3], -1.0, 1.0)];
            inputs.extend(generator_params(rng, ct, hid));
            if !hidden_near_kink(&inputs[0], &inputs[1], &inputs[2]) {
                break inputs;
            }
        };
        let w = uniform(rng, &[1, ct, 3, 3], -1.0, 1.0);
        check_gradients(
            |t, x| {
                let gen = generator(&x[1], &x[2], &x[3], &x[4])?;
                let y = generate(t, &gen, &x[0])?;
                weighted_sum(t, &y, &w)
            },
            &inputs,
            STEP,
        )
    })?;

    // Composite losses on 1x2x3x3 features with learned align and generator.
    // Each evaluation reseeds its own rng so the noise is a fixed constant.
    // The generator's output bias is held constant: the channel softmax is
    // invariant to per-channel shifts, so its true gradient under a KL loss is
    // exactly zero and a relative error against round-off is meaningless.
    // Inputs are [S, align.w, align.b, gen.w1, gen.b1, gen.w2].
    let composite = |rng: &mut Rng, path: Path| loop {
        let cfg = DistillConfig {
            tau: rng.uniform_range(1.0, 5.0),
            mu: rng.uniform_range(-0.5, 0.5),
            sigma: rng.uniform_range(0.0, 1.5),
            ..DistillConfig::default()
        };
        let teacher = uniform(rng, &[1, 2, 3, 3], -2.0, 2.0);
        let mut inputs = vec![
            uniform(rng, &[1, 2, 3, 3], -2.0, 2.0),
            uniform(rng, &[2, 2, 1, 1], -1.0, 1.0),
            uniform(rng, &[2], -0.5, 0.5),
        ];
        let mut gen = generator_params(rng, 2, 2);
        let out_bias = gen.pop().unwrap();
        inputs.extend(gen);
        let seed = rng.next_u64();

        let mut tape = Tape::no_grad();
        let align = match path {
            Path::IdentityAlign => AlignModule::identity(2),
            _ => AlignModule::from_tensors(inputs[1].clone(), inputs[2].clone()).unwrap(),
        };
        let gen_in = match path {
            Path::Noise | Path::IdentityAlign => {
                noisy_embedding(&mut tape, &inputs[0], &align, &cfg, &mut Rng::new(seed)).unwrap()
            }
            Path::Mask(ratio) => {
                let aligned = align.apply(&mut tape, &inputs[0]).unwrap();
                let mask = spatial_mask(&mut Rng::new(seed), 1, 2, 3, 3, ratio).unwrap();
                tape.mul(&aligned, &mask).unwrap()
            }
        };
        if !hidden_near_kink(&gen_in, &inputs[3], &inputs[4]) {
            break (cfg, teacher, inputs, out_bias, seed);
        }
    };
    let build = |x: &[Tensor], b2: &Tensor| -> Result<(AlignModule, GenerationModule)> {
        Ok((
            AlignModule::from_tensors(x[1].clone(), x[2].clone())?,
            generator(&x[3], &x[4], &x[5], b2)?,
        ))
    };
    s.case("perturb_student", |rng| {
        let (cfg, _, inputs, b2, noise_seed) = composite(rng, Path::Noise);
        let w = uniform(rng, &[1, 2, 3, 3], -1.0, 1.0);
        check_gradients(
            |t, x| {
                let (align, gen) = build(x, &b2)?;
                let y = perturb_student(t, &x[0], &align, &gen, &cfg, &mut Rng::new(noise_seed))?;
                weighted_sum(t, &y, &w)
            },
            &inputs,
            STEP,
        )
    })?;
    s.case("gdd_loss", |rng| {
        let (cfg, teacher, inputs, b2, noise_seed) = composite(rng, Path::Noise);
        check_gradients(
            |t, x| {
                let (align, gen) = build(x, &b2)?;
                gdd_loss(
                    t,
                    &teacher,
                    &x[0],
                    &align,
                    &gen,
                    &cfg,
                    &mut Rng::new(noise_seed),
                )
            },
            &inputs,
            STEP,
        )
    })?;
    s.case("gdd_loss_identity_align", |rng| {
        let (cfg, teacher, inputs, b2, noise_seed) = composite(rng, Path::IdentityAlign);
        let inputs: Vec<Tensor> = [&inputs[0]]
            .into_iter()
            .chain(&inputs[3..])
            .cloned()
            .collect();
        check_gradients(
            |t, x| {
                let gen = generator(&x[1], &x[2], &x[3], &b2)?;
                gdd_loss(
                    t,
                    &teacher,
                    &x[0],
                    &AlignModule::identity(2),
                    &gen,
                    &cfg,
                    &mut Rng::new(noise_seed),
                )
            },
            &inputs,
            STEP,
        )
    })?;
    s.case("sn_only_loss", |rng| {
        let (cfg, teacher, inputs, b2, noise_seed) = composite(rng, Path::Noise);
        check_gradients(
            |t, x| {
                let (align, gen) = build(x, &b2)?;
                sn_only_loss(
                    t,
                    &teacher,
                    &x[0],
                    &align,
                    &gen,
                    &cfg,
                    &mut Rng::new(noise_seed),
                )
            },
            &inputs,
            STEP,
        )
    })?;
    s.case("mgd_loss", |rng| {
        let ratio = rng.uniform_range(0.0, 0.9);
        let (_, teacher, inputs, b2, mask_seed) = composite(rng, Path::Mask(ratio));
        check_gradients(
            |t, x| {
                let (align, gen) = build(x, &b2)?;
                mgd_loss(
                    t,
                    &teacher,
                    &x[0],
                    &align,
                    &gen,
                    ratio,
                    &mut Rng::new(mask_seed),
                )
            },
            &inputs,
            STEP,
        )
    })?;
    Ok(s.outcomes)
}
