//! Procedurally generated image classification data.
//!
//! Every class owns a prototype drawn from a couple of strokes and a blob.
//! Samples jitter the prototype position and contrast and add pixel noise,
//! so the classes overlap enough that no network gets every test image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Side of the built-in images.
pub const TOY_IMAGE_SIDE: usize = 12;
pub const TRAIN_SIZE: usize = 300;
pub const VALIDATION_SIZE: usize = 100;
pub const TEST_SIZE: usize = 100;

const NOISE_STD: f64 = 0.35;
const MAX_SHIFT: f64 = 1.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pixels: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
    pub num_classes: usize,
    pub image_side: usize,
    pub channels: usize,
}

/// Named stand-ins for the classic benchmark data sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BuiltinDataset {
    Mnist,
    Fashion,
    Emnist,
    Kmnist,
    Cifar10,
    Cifar100,
    Stl10,
    ToyMnist,
}

impl BuiltinDataset {
    pub const ALL: [BuiltinDataset; 8] = [
        BuiltinDataset::Mnist,
        BuiltinDataset::Fashion,
        BuiltinDataset::Emnist,
        BuiltinDataset::Kmnist,
        BuiltinDataset::Cifar10,
        BuiltinDataset::Cifar100,
        BuiltinDataset::Stl10,
        BuiltinDataset::ToyMnist,
    ];

    pub fn token(self) -> &'static str {
        match self {
            BuiltinDataset::Mnist => "MNIST",
            BuiltinDataset::Fashion => "FASHION",
            BuiltinDataset::Emnist => "EMNIST",
            BuiltinDataset::Kmnist => "KMNIST",
            BuiltinDataset::Cifar10 => "CIFAR10",
            BuiltinDataset::Cifar100 => "CIFAR100",
            BuiltinDataset::Stl10 => "STL10",
            BuiltinDataset::ToyMnist => "TOYMNIST",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|d| d.token() == token)
    }

    pub fn num_classes(self) -> usize {
        match self {
            BuiltinDataset::Cifar100 => 100,
            _ => 10,
        }
    }

    fn seed(self) -> u64 {
        0x5eed_0000 + self as u64
    }

    pub fn generate(self) -> ToyDataset {
        ToyDataset::generate(self.num_classes(), TOY_IMAGE_SIDE, self.seed())
    }
}

#[derive(Debug, Clone)]
enum Shape {
    Stroke {
        from: (f64, f64),
        to: (f64, f64),
        width: f64,
    },
    Blob {
        center: (f64, f64),
        radius: f64,
        amplitude: f64,
    },
}

impl Shape {
    fn intensity(&self, x: f64, y: f64) -> f64 {
        match *self {
            Shape::Stroke { from, to, width } => {
                let (dx, dy) = (to.0 - from.0, to.1 - from.1);
                let len2 = dx * dx + dy * dy;
                let t = if len2 > 0.0 {
                    (((x - from.0) * dx + (y - from.1) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (px, py) = (from.0 + t * dx - x, from.1 + t * dy - y);
                (-(px * px + py * py) / (2.0 * width * width)).exp()
            }
            Shape::Blob {
                center,
                radius,
                amplitude,
            } => {
                let (px, py) = (x - center.0, y - center.1);
                amplitude * (-(px * px + py * py) / (2.0 * radius * radius)).exp()
            }
        }
    }
}

fn prototype(rng: &mut ChaCha8Rng, side: usize) -> Vec<Shape> {
    let s = side as f64;
    let coord = |rng: &mut ChaCha8Rng| rng.random_range(0.15 * s..0.85 * s);
    let mut shapes = Vec::with_capacity(3);
    for _ in 0..2 {
        let from = (coord(rng), coord(rng));
        let to = (coord(rng), coord(rng));
        shapes.push(Shape::Stroke {
            from,
            to,
            width: rng.random_range(0.5..0.9),
        });
    }
    shapes.push(Shape::Blob {
        center: (coord(rng), coord(rng)),
        radius: rng.random_range(0.8..1.6),
        amplitude: rng.random_range(0.5..0.9),
    });
    shapes
}

fn render(shapes: &[Shape], side: usize, shift: (f64, f64), contrast: f64, noise: &[f64]) -> Vec<f64> {
    let mut pixels = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            let (x, y) = (col as f64 + 0.5 - shift.0, row as f64 + 0.5 - shift.1);
            let v = shapes.iter().map(|s| s.intensity(x, y)).fold(0.0, f64::max);
            pixels.push(contrast * v + noise[row * side + col]);
        }
    }
    pixels
}

impl ToyDataset {
    /// Deterministic 300/100/100 split with balanced classes.
    pub fn generate(num_classes: usize, image_side: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prototypes: Vec<Vec<Shape>> = (0..num_classes).map(|_| prototype(&mut rng, image_side)).collect();
        let noise = Normal::new(0.0, NOISE_STD).expect("finite noise");
        let total = TRAIN_SIZE + VALIDATION_SIZE + TEST_SIZE;

        let mut labels: Vec<usize> = (0..total).map(|i| i % num_classes).collect();
        for i in (1..labels.len()).rev() {
            let j = rng.random_range(0..=i);
            labels.swap(i, j);
        }

        let mut samples: Vec<Sample> = labels
            .into_iter()
            .map(|label| {
                let shift = (
                    rng.random_range(-MAX_SHIFT..MAX_SHIFT),
                    rng.random_range(-MAX_SHIFT..MAX_SHIFT),
                );
                let contrast = rng.random_range(0.6..1.2);
                let n: Vec<f64> = (0..image_side * image_side).map(|_| noise.sample(&mut rng)).collect();
                Sample {
                    pixels: render(&prototypes[label], image_side, shift, contrast, &n),
                    label,
                }
            })
            .collect();

        let test = samples.split_off(TRAIN_SIZE + VALIDATION_SIZE);
        let validation = samples.split_off(TRAIN_SIZE);
        ToyDataset {
            train: samples,
            validation,
            test,
            num_classes,
            image_side,
            channels: 1,
        }
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.image_side * self.image_side
    }
}
