//! Synthetic long-tailed Gaussian-mixture classification data.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::losses::ClassCounts;
use crate::rng::{self, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongTailSpec {
    pub classes: usize,
    pub n_max: usize,
    pub imbalance_ratio: f64,
    pub dim: usize,
    /// Norm of every class mean.
    pub separation: f64,
    /// Within-class standard deviation.
    pub std: f64,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for LongTailSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            n_max: 500,
            imbalance_ratio: 100.0,
            dim: 32,
            separation: 3.0,
            std: 1.0,
            test_per_class: 100,
            seed: 0,
        }
    }
}

impl LongTailSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("data.classes", "need at least 2 classes"));
        }
        if !(self.imbalance_ratio >= 1.0) {
            return Err(Error::invalid("data.imbalance_ratio", "must be >= 1"));
        }
        if (self.n_max as f64) < self.imbalance_ratio {
            return Err(Error::invalid("data.n_max", "n_max / imbalance_ratio must be >= 1"));
        }
        if self.dim < 2 {
            return Err(Error::invalid("data.dim", "must be >= 2"));
        }
        if self.test_per_class < 1 {
            return Err(Error::invalid("data.test_per_class", "must be >= 1"));
        }
        if !(self.separation >= 0.0) || !(self.std >= 0.0) {
            return Err(Error::invalid("data.std", "separation and std must be non-negative"));
        }
        Ok(())
    }
}

/// Train split is long-tailed, test split balanced.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train_x: Tensor,
    pub train_y: Vec<usize>,
    pub test_x: Tensor,
    pub test_y: Vec<usize>,
    pub counts: ClassCounts,
    pub means: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn classes(&self) -> usize {
        self.counts.classes()
    }

    pub fn dim(&self) -> usize {
        self.train_x.shape()[1]
    }

    pub fn train_len(&self) -> usize {
        self.train_y.len()
    }

    pub fn test_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes()];
        for &y in &self.test_y {
            c[y] += 1;
        }
        c
    }

    /// Up to `per_class` training samples per class, chosen by `seed`, in
    /// class-major order.
    pub fn balanced_train_subset(&self, per_class: usize, seed: u64) -> (Tensor, Vec<usize>) {
        let mut rng = rng::stream(seed, Stream::EvalSubset);
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.classes()];
        for (i, &y) in self.train_y.iter().enumerate() {
            by_class[y].push(i);
        }
        let mut picked = Vec::new();
        for idx in &mut by_class {
            idx.shuffle(&mut rng);
            let mut take: Vec<usize> = idx.iter().copied().take(per_class).collect();
            take.sort_unstable();
            picked.extend(take);
        }
        gather(&self.train_x, &self.train_y, &picked)
    }

    /// Plain-text export: a header line with class count, dimension and train
    /// counts, then one `label f1 f2 ...` line per training sample.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let counts: Vec<String> = self.counts.as_slice().iter().map(ToString::to_string).collect();
        writeln!(w, "classes={} dim={} counts={}", self.classes(), self.dim(), counts.join(","))?;
        for (i, y) in self.train_y.iter().enumerate() {
            write!(w, "{y}")?;
            for v in self.train_x.row(i) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Rows `idx` of `x` with their labels.
pub fn gather(x: &Tensor, y: &[usize], idx: &[usize]) -> (Tensor, Vec<usize>) {
    let d = x.shape()[1];
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(x.row(i));
    }
    let labels = idx.iter().map(|&i| y[i]).collect();
    (Tensor::matrix(idx.len(), d, data).expect("gather shape"), labels)
}

/// Exponentially decaying counts `round(n_max * ir^(-c / (C - 1)))`.
pub fn longtail_counts(classes: usize, n_max: usize, imbalance_ratio: f64) -> Result<ClassCounts> {
    if classes < 2 {
        return Err(Error::invalid("classes", "need at least 2 classes"));
    }
    if !(imbalance_ratio >= 1.0) {
        return Err(Error::invalid("imbalance_ratio", "must be >= 1"));
    }
    if (n_max as f64) / imbalance_ratio < 1.0 {
        return Err(Error::invalid("n_max", "n_max / imbalance_ratio must be >= 1"));
    }
    let last = (classes - 1) as f64;
    let counts = (0..classes)
        .map(|c| (n_max as f64 * imbalance_ratio.powf(-(c as f64) / last)).round() as usize)
        .collect();
    ClassCounts::new(counts)
}

pub fn synth_dataset(spec: &LongTailSpec) -> Result<Dataset> {
    spec.validate()?;
    let counts = longtail_counts(spec.classes, spec.n_max, spec.imbalance_ratio)?;
    let mut rng = rng::stream(spec.seed, Stream::DataGen);

    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let g: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            g.iter().map(|v| spec.separation * v / norm).collect()
        })
        .collect();

    let mut draw = |per_class: &[usize]| {
        let n: usize = per_class.iter().sum();
        let mut x = Vec::with_capacity(n * spec.dim);
        let mut y = Vec::with_capacity(n);
        for (c, &m) in per_class.iter().enumerate() {
            for _ in 0..m {
                x.extend(means[c].iter().map(|mu| {
                    let z: f64 = rng.sample(StandardNormal);
                    mu + spec.std * z
                }));
                y.push(c);
            }
        }
        (Tensor::matrix(n, spec.dim, x).expect("dataset shape"), y)
    };
    let (train_x, train_y) = draw(counts.as_slice());
    let (test_x, test_y) = draw(&vec![spec.test_per_class; spec.classes]);

    Ok(Dataset {
        train_x,
        train_y,
        test_x,
        test_y,
        counts,
        means,
    })
}

/// Head / medium / tail class groups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub head: Vec<usize>,
    pub med: Vec<usize>,
    pub tail: Vec<usize>,
}

/// `tail = {n <= t_tail}`, `head = {n > t_head}`, medium is the rest.
pub fn split_classes(counts: &ClassCounts, t_head: usize, t_tail: usize) -> Result<ClassSplit> {
    if t_head <= t_tail {
        return Err(Error::invalid("thresholds", "head threshold must exceed tail threshold"));
    }
    let mut split = ClassSplit {
        head: vec![],
        med: vec![],
        tail: vec![],
    };
    for (c, &n) in counts.as_slice().iter().enumerate() {
        if n <= t_tail {
            split.tail.push(c);
        } else if n > t_head {
            split.head.push(c);
        } else {
            split.med.push(c);
        }
    }
    Ok(split)
}
