//! Seeded generator of correlated audio/visual score matrices.
//!
//! For class `c` with prior `p_c` and informativeness `d_a^c`, `d_v^c`:
//! `Y ~ Bernoulli(p_c)`, `h_a = sigmoid(d_a^c (2Y - 1) + n_a)`,
//! `h_v = sigmoid(d_v^c (2Y - 1) + n_v)` with independent standard normal
//! noise. Each (split, class) column pair is drawn from its own derived seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BenchmarkSplit, LabelMatrix};
use crate::error::{Error, Result};
use crate::nn::kernels::sigmoid;
use crate::tensor::Tensor;

/// Which modality carries the class signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Audio,
    Visual,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_eval: usize,
    pub priors: Vec<f64>,
    pub d_audio: Vec<f64>,
    pub d_visual: Vec<f64>,
    pub kinds: Vec<ClassKind>,
    pub seed: u64,
}

pub struct SyntheticData {
    pub train: BenchmarkSplit,
    pub val: BenchmarkSplit,
    pub eval: BenchmarkSplit,
}

const PRIOR_MIN: f64 = 1e-3;
const PRIOR_MAX: f64 = 0.5;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, stream: u64, class: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ stream) ^ class)
}

impl SyntheticSpec {
    /// The default benchmark: 64 classes, 20000/2000/4000 recordings.
    pub fn benchmark(seed: u64) -> Self {
        Self::with_sizes(64, 20_000, 2_000, 4_000, seed)
    }

    /// Class parameters drawn from `seed`: log-uniform priors over
    /// `[1e-3, 0.5]`, about 60% audio-dominant, 25% visual-dominant and 15%
    /// informative in both modalities.
    pub fn with_sizes(classes: usize, n_train: usize, n_val: usize, n_eval: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX, 0));
        let mut spec = SyntheticSpec {
            classes,
            n_train,
            n_val,
            n_eval,
            priors: Vec::with_capacity(classes),
            d_audio: Vec::with_capacity(classes),
            d_visual: Vec::with_capacity(classes),
            kinds: Vec::with_capacity(classes),
            seed,
        };
        let n_visual = (classes as f64 * 0.25).round() as usize;
        let n_both = (classes as f64 * 0.15).round() as usize;
        let n_audio = classes.saturating_sub(n_visual + n_both);
        let mut kinds: Vec<ClassKind> = std::iter::repeat_n(ClassKind::Audio, n_audio)
            .chain(std::iter::repeat_n(ClassKind::Visual, n_visual))
            .chain(std::iter::repeat_n(ClassKind::Both, n_both))
            .collect();
        kinds.truncate(classes);
        rand::seq::SliceRandom::shuffle(kinds.as_mut_slice(), &mut rng);
        let (lo, hi) = (PRIOR_MIN.ln(), PRIOR_MAX.ln());
        for kind in kinds {
            spec.priors.push(rng.random_range(lo..hi).exp());
            let strong = rng.random_range(1.5..3.0);
            let weak = rng.random_range(0.0..0.8);
            let (da, dv) = match kind {
                ClassKind::Audio => (strong, weak),
                ClassKind::Visual => (weak, strong),
                ClassKind::Both => (rng.random_range(1.0..2.0), rng.random_range(1.0..2.0)),
            };
            spec.d_audio.push(da);
            spec.d_visual.push(dv);
            spec.kinds.push(kind);
        }
        spec
    }

    /// A spec with explicit per-class parameters; kinds are derived from
    /// which informativeness is larger.
    pub fn custom(priors: Vec<f64>, d_audio: Vec<f64>, d_visual: Vec<f64>, n: [usize; 3], seed: u64) -> Result<Self> {
        let kinds = d_audio
            .iter()
            .zip(&d_visual)
            .map(|(a, v)| match a.partial_cmp(v) {
                Some(std::cmp::Ordering::Greater) => ClassKind::Audio,
                Some(std::cmp::Ordering::Less) => ClassKind::Visual,
                _ => ClassKind::Both,
            })
            .collect();
        let spec = SyntheticSpec {
            classes: priors.len(),
            n_train: n[0],
            n_val: n[1],
            n_eval: n[2],
            priors,
            d_audio,
            d_visual,
            kinds,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.classes;
        if c == 0 {
            return Err(Error::InvalidArgument("synthetic spec needs at least one class".into()));
        }
        if [
            self.priors.len(),
            self.d_audio.len(),
            self.d_visual.len(),
            self.kinds.len(),
        ] != [c; 4]
        {
            return Err(Error::InvalidArgument(
                "per-class parameter lengths differ from class count".into(),
            ));
        }
        if let Some(p) = self.priors.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::InvalidArgument(format!("prior {p} outside (0, 1)")));
        }
        if let Some(d) = self
            .d_audio
            .iter()
            .chain(&self.d_visual)
            .find(|d| !(**d >= 0.0 && d.is_finite()))
        {
            return Err(Error::InvalidArgument(format!(
                "informativeness {d} must be finite and >= 0"
            )));
        }
        Ok(())
    }

    /// Classes whose signal is carried by `kind`.
    pub fn classes_of(&self, kind: ClassKind) -> Vec<usize> {
        (0..self.classes).filter(|&c| self.kinds[c] == kind).collect()
    }

    fn generate_split(&self, stream: u64, n: usize) -> BenchmarkSplit {
        let c_total = self.classes;
        let mut audio = vec![0.0; n * c_total];
        let mut visual = vec![0.0; n * c_total];
        let mut labels = LabelMatrix::zeros(n, c_total);
        for c in 0..c_total {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, stream, c as u64));
            let (p, da, dv) = (self.priors[c], self.d_audio[c], self.d_visual[c]);
            for i in 0..n {
                let y = rng.random::<f64>() < p;
                let sign = if y { 1.0 } else { -1.0 };
                let na: f64 = rng.sample(StandardNormal);
                let nv: f64 = rng.sample(StandardNormal);
                audio[i * c_total + c] = sigmoid(da * sign + na);
                visual[i * c_total + c] = sigmoid(dv * sign + nv);
                labels.set(i, c, y);
            }
        }
        BenchmarkSplit {
            audio: Tensor::new(vec![n, c_total], audio).expect("shape"),
            visual: Tensor::new(vec![n, c_total], visual).expect("shape"),
            labels,
        }
    }

    pub fn generate(&self) -> Result<SyntheticData> {
        self.validate()?;
        Ok(SyntheticData {
            train: self.generate_split(0, self.n_train),
            val: self.generate_split(1, self.n_val),
            eval: self.generate_split(2, self.n_eval),
        })
    }
}
