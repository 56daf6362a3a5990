use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

const TRAIN_STREAM: u64 = 1;
const VAL_STREAM: u64 = 2;
const BACKGROUND: [f64; 3] = [0.5, 0.5, 0.5];

/// Parameters of the synthetic shape-segmentation task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    /// Background plus shape classes.
    pub num_classes: usize,
    /// Inclusive `[min, max]` number of shapes drawn per image.
    pub shapes_per_image: [usize; 2],
    /// Std of the per-pixel Gaussian noise.
    pub noise_level: f64,
    pub seed: u64,
    pub train_count: usize,
    pub val_count: usize,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_min_shape_size")]
    pub min_shape_size: usize,
}

fn default_image_size() -> usize {
    32
}

fn default_min_shape_size() -> usize {
    6
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_classes: 4,
            shapes_per_image: [1, 3],
            noise_level: 0.05,
            seed: 0,
            train_count: 2000,
            val_count: 500,
            image_size: default_image_size(),
            min_shape_size: default_min_shape_size(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Dataset(m));
        if !(2..=256).contains(&self.num_classes) {
            return bad(format!(
                "num_classes must be in [2, 256], got {}",
                self.num_classes
            ));
        }
        let [lo, hi] = self.shapes_per_image;
        if lo == 0 || lo > hi {
            return bad(format!(
                "shapes_per_image must satisfy 1 <= min <= max, got [{lo}, {hi}]"
            ));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return bad(format!(
                "noise_level must be >= 0, got {}",
                self.noise_level
            ));
        }
        if self.train_count == 0 || self.val_count == 0 {
            return bad("train_count and val_count must be positive".into());
        }
        if self.min_shape_size == 0 || self.min_shape_size > self.image_size {
            return bad(format!(
                "min_shape_size {} does not fit a {}px image",
                self.min_shape_size, self.image_size
            ));
        }
        Ok(())
    }

    fn max_shape_size(&self) -> usize {
        (self.image_size / 2).max(self.min_shape_size)
    }
}

/// Filled shape geometry in pixel coordinates; pixel `(x, y)` is sampled at
/// its center `(x + 0.5, y + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Circle {
        cx: f64,
        cy: f64,
        r: f64,
    },
    Rectangle {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
    Triangle {
        a: [f64; 2],
        b: [f64; 2],
        c: [f64; 2],
    },
}

impl Geometry {
    pub fn contains(&self, px: f64, py: f64) -> bool {
        match *self {
            Geometry::Circle { cx, cy, r } => (px - cx).powi(2) + (py - cy).powi(2) <= r * r,
            Geometry::Rectangle { x0, y0, x1, y1 } => px >= x0 && px < x1 && py >= y0 && py < y1,
            Geometry::Triangle { a, b, c } => {
                let edge = |p: [f64; 2], q: [f64; 2]| {
                    (q[0] - p[0]) * (py - p[1]) - (q[1] - p[1]) * (px - p[0])
                };
                let (d1, d2, d3) = (edge(a, b), edge(b, c), edge(c, a));
                let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(has_neg && has_pos)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacedShape {
    pub class: u8,
    pub geometry: Geometry,
}

/// One image with its per-pixel labels and the shapes that produced them.
#[derive(Debug, Clone)]
pub struct SynthSample {
    /// `[3, H, W]`, values in `[0, 1]`.
    pub image: Tensor,
    /// Row-major `[H, W]` class map.
    pub labels: Vec<u8>,
    /// Shapes in drawing order; later shapes paint over earlier ones.
    pub shapes: Vec<PlacedShape>,
}

/// Base RGB color of `class`.
pub fn class_color(class: u8) -> [f64; 3] {
    match class {
        0 => BACKGROUND,
        1 => [0.90, 0.20, 0.20],
        2 => [0.20, 0.85, 0.20],
        3 => [0.20, 0.20, 0.90],
        k => {
            // Further classes walk around the hue circle at fixed saturation.
            let hue = (k as f64 * 0.618_033_988_75).fract() * std::f64::consts::TAU;
            [
                0.5 + 0.22 * hue.cos(),
                0.5 + 0.22 * (hue + 2.094_395_1).cos(),
                0.5 + 0.22 * (hue + 4.188_790_2).cos(),
            ]
        }
    }
}

fn place_shape(spec: &SynthSpec, rng: &mut Rng) -> PlacedShape {
    let side = spec.image_size as i64;
    let (min, max) = (spec.min_shape_size as i64, spec.max_shape_size() as i64);
    let class = 1 + rng.below(spec.num_classes as u64 - 1) as u8;
    let w = rng.int_inclusive(min, max);
    let h = rng.int_inclusive(min, max);
    let x0 = rng.int_inclusive(0, side - w) as f64;
    let y0 = rng.int_inclusive(0, side - h) as f64;
    let (w, h) = (w as f64, h as f64);
    let geometry = match (class - 1) % 3 {
        0 => {
            let d = w.min(h);
            Geometry::Circle {
                cx: x0 + d / 2.0,
                cy: y0 + d / 2.0,
                r: d / 2.0,
            }
        }
        1 => Geometry::Rectangle {
            x0,
            y0,
            x1: x0 + w,
            y1: y0 + h,
        },
        _ => {
            let apex_x = x0 + rng.uniform() * w;
            let (base_y, apex_y) = if rng.below(2) == 0 {
                (y0 + h, y0)
            } else {
                (y0, y0 + h)
            };
            Geometry::Triangle {
                a: [x0, base_y],
                b: [x0 + w, base_y],
                c: [apex_x, apex_y],
            }
        }
    };
    PlacedShape { class, geometry }
}

/// Sample `index` of the stream `stream`, a pure function of the spec seed.
fn render_sample(spec: &SynthSpec, stream: u64, index: u64) -> Result<SynthSample> {
    let mut rng = Rng::derive(spec.seed, stream, index);
    let size = spec.image_size;
    let [lo, hi] = spec.shapes_per_image;
    let count = rng.int_inclusive(lo as i64, hi as i64) as usize;
    let shapes: Vec<PlacedShape> = (0..count).map(|_| place_shape(spec, &mut rng)).collect();

    let mut labels = vec![0u8; size * size];
    for shape in &shapes {
        for y in 0..size {
            for x in 0..size {
                if shape.geometry.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    labels[y * size + x] = shape.class;
                }
            }
        }
    }
    let mut image = vec![0.0; 3 * size * size];
    for (pixel, &label) in labels.iter().enumerate() {
        let color = class_color(label);
        for (ch, &base) in color.iter().enumerate() {
            let noise = if spec.noise_level > 0.0 {
                rng.normal(0.0, spec.noise_level)
            } else {
                0.0
            };
            image[ch * size * size + pixel] = (base + noise).clamp(0.0, 1.0);
        }
    }
    Ok(SynthSample {
        image: Tensor::new(image, &[3, size, size])?,
        labels,
        shapes,
    })
}

/// Deterministic `(train, val)` splits; the two splits use disjoint streams.
pub fn generate_dataset(spec: &SynthSpec) -> Result<(Vec<SynthSample>, Vec<SynthSample>)> {
    spec.validate()?;
    let train = (0..spec.train_count)
        .map(|i| render_sample(spec, TRAIN_STREAM, i as u64))
        .collect::<Result<Vec<_>>>()?;
    let val = (0..spec.val_count)
        .map(|i| render_sample(spec, VAL_STREAM, i as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok((train, val))
}

/// Stack samples into an `[N, 3, H, W]` batch with matching `[N, H, W]` labels.
pub fn stack_batch(samples: &[&SynthSample]) -> Result<(Tensor, Vec<u8>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let shape = first.image.shape().to_vec();
    let mut data = Vec::with_capacity(samples.len() * first.image.numel());
    let mut labels = Vec::with_capacity(samples.len() * first.labels.len());
    for s in samples {
        if s.image.shape() != shape.as_slice() {
            return Err(Error::Shape("mixed image sizes in batch".into()));
        }
        data.extend_from_slice(s.image.data());
        labels.extend_from_slice(&s.labels);
    }
    let batch_shape = [samples.len(), shape[0], shape[1], shape[2]];
    Ok((Tensor::new(data, &batch_shape)?, labels))
}
