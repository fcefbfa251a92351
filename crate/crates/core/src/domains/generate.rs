//! Synthetic multi-domain image classification data.
//!
//! Every image is a class-specific shape drawn over a scene background, then
//! altered by weather and time of day. Labels are drawn independently of the
//! attribute tuple.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schema::{AttributeSchema, SCENE, TIME, WEATHER};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::seed;

pub const IMAGE_CHANNELS: usize = 3;
pub const IMAGE_SIZE: usize = 32;
pub const IMAGE_NUMEL: usize = IMAGE_CHANNELS * IMAGE_SIZE * IMAGE_SIZE;
pub const NIGHT_BRIGHTNESS: f32 = 0.35;
/// Number of distinct shapes the renderer can draw.
pub const SHAPE_COUNT: usize = 10;

pub fn image_shape() -> Vec<usize> {
    vec![IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE]
}

/// One labelled image with its attribute tuple (value indices in schema order).
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: usize,
    pub image: Tensor<f32>,
    pub label: usize,
    pub attrs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: AttributeSchema,
    pub classes: usize,
    pub samples: Vec<SampleRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stacks the images of `indices` into a `[B, 3, 32, 32]` tensor.
    pub fn batch_images<T: crate::numerics::Real>(&self, indices: &[usize]) -> Tensor<T> {
        let mut data = Vec::with_capacity(indices.len() * IMAGE_NUMEL);
        for &i in indices {
            data.extend(self.samples[i].image.data().iter().map(|&x| T::lit(x as f64)));
        }
        Tensor::new(vec![indices.len(), IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE], data)
            .expect("images have fixed shape")
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.samples[i].label).collect()
    }
}

/// Explicit sample count for one attribute tuple, given by value names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountOverride {
    pub attrs: Vec<String>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub classes: usize,
    /// Count for every tuple without an override.
    pub per_domain: usize,
    #[serde(default)]
    pub overrides: Vec<CountOverride>,
    pub seed: u64,
}

impl DatasetConfig {
    /// Sample count per tuple of `schema.all_tuples()`.
    pub fn counts(&self, schema: &AttributeSchema) -> Result<Vec<usize>> {
        let tuples = schema.all_tuples();
        let mut counts = vec![self.per_domain; tuples.len()];
        for o in &self.overrides {
            if o.attrs.len() != schema.len() {
                return Err(Error::shape("count override", schema.len(), o.attrs.len()));
            }
            let tuple = o
                .attrs
                .iter()
                .enumerate()
                .map(|(a, v)| schema.value_index(a, v))
                .collect::<Result<Vec<_>>>()?;
            let pos = tuples.iter().position(|t| *t == tuple).expect("tuple enumerated");
            counts[pos] = o.count;
        }
        Ok(counts)
    }
}

/// Generates the dataset for `schema`, ordered by tuple then by index within tuple.
///
/// The schema must contain the `time`, `weather` and `scene` attributes with
/// the value sets of [`AttributeSchema::driving`].
pub fn generate_dataset(schema: &AttributeSchema, config: &DatasetConfig) -> Result<Dataset> {
    if config.classes < 2 || config.classes > SHAPE_COUNT {
        return Err(Error::InvalidArgument(format!(
            "class count must be in 2..={SHAPE_COUNT}, got {}",
            config.classes
        )));
    }
    let roles = Roles::resolve(schema)?;
    let counts = config.counts(schema)?;
    let mut samples = Vec::with_capacity(counts.iter().sum());
    for (tuple, count) in schema.all_tuples().into_iter().zip(counts) {
        for _ in 0..count {
            let id = samples.len();
            let mut rng = seed::stream_rng(config.seed, id as u64);
            let label = rng.gen_range(0..config.classes);
            let image = render(&mut rng, label, &roles.look(&tuple));
            samples.push(SampleRecord {
                id,
                image,
                label,
                attrs: tuple.clone(),
            });
        }
    }
    Ok(Dataset {
        schema: schema.clone(),
        classes: config.classes,
        samples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Weather {
    Clear,
    Fog,
    Rain,
}

struct Look {
    night: bool,
    weather: Weather,
    textured: bool,
}

struct Roles {
    time: usize,
    weather: usize,
    scene: usize,
    night: usize,
    fog: usize,
    rain: usize,
    textured: usize,
}

impl Roles {
    fn resolve(schema: &AttributeSchema) -> Result<Self> {
        let time = schema.index_of(TIME)?;
        let weather = schema.index_of(WEATHER)?;
        let scene = schema.index_of(SCENE)?;
        Ok(Self {
            time,
            weather,
            scene,
            night: schema.value_index(time, "night")?,
            fog: schema.value_index(weather, "fog")?,
            rain: schema.value_index(weather, "rain")?,
            textured: schema.value_index(scene, "textured")?,
        })
    }

    fn look(&self, tuple: &[usize]) -> Look {
        let w = tuple[self.weather];
        Look {
            night: tuple[self.time] == self.night,
            weather: if w == self.fog {
                Weather::Fog
            } else if w == self.rain {
                Weather::Rain
            } else {
                Weather::Clear
            },
            textured: tuple[self.scene] == self.textured,
        }
    }
}

/// Point-in-shape test in shape-local coordinates (`u`, `v` ∈ [-1, 1] span the shape).
fn inside(shape: usize, u: f32, v: f32) -> bool {
    let (au, av) = (u.abs(), v.abs());
    let box_ = au <= 1.0 && av <= 1.0;
    let r2 = u * u + v * v;
    match shape {
        0 => box_,
        1 => box_ && au.max(av) >= 0.55,
        2 => r2 <= 1.0,
        3 => (0.3..=1.0).contains(&r2),
        4 => (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0),
        5 => box_ && ((u - v).abs() <= 0.4 || (u + v).abs() <= 0.4),
        6 => av <= 0.35 && au <= 1.0,
        7 => au <= 0.35 && av <= 1.0,
        8 => (-1.0..=1.0).contains(&v) && au <= (v + 1.0) * 0.5,
        _ => box_ && (u <= -0.4 || v >= 0.4),
    }
}

fn render(rng: &mut ChaCha8Rng, label: usize, look: &Look) -> Tensor<f32> {
    const S: usize = IMAGE_SIZE;
    let mut img = vec![0f32; IMAGE_NUMEL];

    let base: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.05..0.35));
    if look.textured {
        let fx = rng.gen_range(0.4..1.4f32) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let fy = rng.gen_range(0.4..1.4f32);
        let phase = rng.gen_range(0.0..std::f32::consts::TAU);
        let tint: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.2..0.6));
        for y in 0..S {
            for x in 0..S {
                let wave = 0.5 + 0.5 * (fx * x as f32 + fy * y as f32 + phase).sin();
                let grain = rng.gen_range(-0.1..0.1f32);
                for c in 0..3 {
                    img[(c * S + y) * S + x] = base[c] + tint[c] * wave + grain;
                }
            }
        }
    } else {
        for c in 0..3 {
            img[c * S * S..(c + 1) * S * S].fill(base[c]);
        }
    }

    let fg: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.55..1.0));
    let cx = 15.5 + rng.gen_range(-4.0..4.0f32);
    let cy = 15.5 + rng.gen_range(-4.0..4.0f32);
    let half = rng.gen_range(7.0..11.0f32);
    for y in 0..S {
        for x in 0..S {
            // 2x2 supersampled coverage
            let mut cover = 0.0;
            for (dy, dx) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                let u = (x as f32 + dx - cx) / half;
                let v = (y as f32 + dy - cy) / half;
                if inside(label, u, v) {
                    cover += 0.25;
                }
            }
            if cover > 0.0 {
                for c in 0..3 {
                    let p = &mut img[(c * S + y) * S + x];
                    *p = *p * (1.0 - cover) + fg[c] * cover;
                }
            }
        }
    }

    match look.weather {
        Weather::Clear => {}
        Weather::Fog => {
            box_blur(&mut img);
            box_blur(&mut img);
            for p in img.iter_mut() {
                *p = 0.6 * *p + 0.4 * 0.55;
            }
        }
        Weather::Rain => {
            let streaks = rng.gen_range(10..18);
            for _ in 0..streaks {
                let len = rng.gen_range(6..14);
                let mut x = rng.gen_range(0..S as i32);
                let mut y = rng.gen_range(-4..S as i32 - 4);
                let gain = rng.gen_range(0.25..0.45f32);
                for step in 0..len {
                    if (0..S as i32).contains(&x) && (0..S as i32).contains(&y) {
                        for c in 0..3 {
                            img[(c * S + y as usize) * S + x as usize] += gain;
                        }
                    }
                    y += 1;
                    if step % 2 == 1 {
                        x -= 1;
                    }
                }
            }
            for p in img.iter_mut() {
                *p += gaussian(rng) * 0.06;
            }
        }
    }

    let scale = if look.night { NIGHT_BRIGHTNESS } else { 1.0 };
    for p in img.iter_mut() {
        *p = ((*p + gaussian(rng) * 0.02) * scale).clamp(0.0, 1.0);
    }
    Tensor::new(image_shape(), img).expect("fixed image shape")
}

fn gaussian(rng: &mut ChaCha8Rng) -> f32 {
    // Box-Muller
    let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
    let u2: f32 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos()
}

fn box_blur(img: &mut [f32]) {
    const S: usize = IMAGE_SIZE;
    let src = img.to_vec();
    for c in 0..3 {
        for y in 0..S {
            for x in 0..S {
                let mut acc = 0.0;
                let mut n = 0.0;
                for yy in y.saturating_sub(1)..=(y + 1).min(S - 1) {
                    for xx in x.saturating_sub(1)..=(x + 1).min(S - 1) {
                        acc += src[(c * S + yy) * S + xx];
                        n += 1.0;
                    }
                }
                img[(c * S + y) * S + x] = acc / n;
            }
        }
    }
}
