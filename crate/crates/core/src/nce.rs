//! InfoNCE lower bounds on mutual information with a bilinear critic.
//!
//! A batch pairs an anchor vector with K candidates: the positive partner
//! first, then K − 1 negatives. Each candidate `c_k` is scored with
//! `s_k = anchorᵀ W c_k` and the NCE term is the log-softmax of the positive's
//! score, `s_1 − log Σ_k exp(s_k)`, which is never positive.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{Matrix, Vector};
use crate::seeds::derive_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct NceBatch {
    anchor: Vector,
    positive: Vector,
    negatives: Vec<Vector>,
    weight: Matrix,
}

impl NceBatch {
    pub fn new(
        anchor: Vector,
        positive: Vector,
        negatives: Vec<Vector>,
        weight: Matrix,
    ) -> Result<Self> {
        check_len("weight rows", anchor.len(), weight.nrows())?;
        check_len("positive", weight.ncols(), positive.len())?;
        for neg in &negatives {
            check_len("negative", weight.ncols(), neg.len())?;
        }
        let all_finite = anchor
            .iter()
            .chain(positive.iter())
            .chain(weight.iter())
            .all(|v| v.is_finite())
            && negatives.iter().all(|v| v.iter().all(|x| x.is_finite()));
        if !all_finite {
            return Err(Error::NonFiniteInput("NCE batch".into()));
        }
        Ok(Self {
            anchor,
            positive,
            negatives,
            weight,
        })
    }

    /// Number of candidates K (positive included).
    pub fn k(&self) -> usize {
        1 + self.negatives.len()
    }

    pub fn anchor(&self) -> &Vector {
        &self.anchor
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    /// Candidates in batch order: positive, then negatives.
    pub fn candidates(&self) -> impl Iterator<Item = &Vector> {
        std::iter::once(&self.positive).chain(self.negatives.iter())
    }

    pub fn with_weight(&self, weight: Matrix) -> Result<Self> {
        Self::new(
            self.anchor.clone(),
            self.positive.clone(),
            self.negatives.clone(),
            weight,
        )
    }

    pub fn with_anchor(&self, anchor: Vector) -> Result<Self> {
        Self::new(
            anchor,
            self.positive.clone(),
            self.negatives.clone(),
            self.weight.clone(),
        )
    }

    pub fn scores(&self) -> Vector {
        let projected = self.weight.tr_mul(&self.anchor);
        Vector::from_iterator(self.k(), self.candidates().map(|c| projected.dot(c)))
    }
}

/// `anchorᵀ W partner`.
pub fn bilinear_score(anchor: &Vector, partner: &Vector, weight: &Matrix) -> Result<f64> {
    check_len("weight rows", anchor.len(), weight.nrows())?;
    check_len("partner", weight.ncols(), partner.len())?;
    Ok(anchor.dot(&(weight * partner)))
}

fn log_softmax_first(scores: &Vector) -> f64 {
    let m = scores.max();
    let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    scores[0] - lse
}

fn softmax(scores: &Vector) -> Vector {
    let m = scores.max();
    let e = scores.map(|s| (s - m).exp());
    let z = e.sum();
    e / z
}

/// Log-softmax of the positive's score among all K candidates.
pub fn nce_loss(batch: &NceBatch) -> f64 {
    log_softmax_first(&batch.scores())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    /// `I(P; θ | X) ≥ C + L_NCE`, with `C` unknown.
    Head,
    /// `I(P; Z | X) ≥ log N + L_NCE`, with `N` taken as the candidate count.
    Representation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiBound {
    pub kind: BoundKind,
    pub value: f64,
    /// The bound holds only up to an additive constant that is not known
    /// numerically; compare such values only across batches of the same shape.
    pub unknown_offset: bool,
}

pub fn mi_lower_bound(batch: &NceBatch, kind: BoundKind) -> MiBound {
    let nce = nce_loss(batch);
    match kind {
        BoundKind::Head => MiBound {
            kind,
            value: nce,
            unknown_offset: true,
        },
        BoundKind::Representation => MiBound {
            kind,
            value: (batch.k() as f64).ln() + nce,
            unknown_offset: false,
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NceGradients {
    pub weight: Matrix,
    pub anchor: Vector,
}

/// Exact gradients of [`nce_loss`]. With `π = softmax(s)` and
/// `c̄ = Σ_k π_k c_k`, both follow from `∂/∂s_k = [k = 1] − π_k`:
/// `∂/∂W = anchor (c_1 − c̄)ᵀ`, `∂/∂anchor = W (c_1 − c̄)`.
pub fn nce_gradients(batch: &NceBatch) -> NceGradients {
    let pi = softmax(&batch.scores());
    let mut diff = batch.positive.clone();
    for (p, c) in pi.iter().zip(batch.candidates()) {
        diff -= c * *p;
    }
    NceGradients {
        weight: &batch.anchor * diff.transpose(),
        anchor: &batch.weight * diff,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ObjectiveWeights {
    /// `β = 0.1`, `γ = 0.05`.
    fn default() -> Self {
        Self {
            beta: 0.1,
            gamma: 0.05,
        }
    }
}

/// `task_loss − β · rep_bound − γ · head_bound`.
pub fn overall_objective(
    task_loss: f64,
    rep_bound: f64,
    head_bound: f64,
    wts: ObjectiveWeights,
) -> Result<f64> {
    let inputs = [task_loss, rep_bound, head_bound, wts.beta, wts.gamma];
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("objective inputs".into()));
    }
    if wts.beta < 0.0 || wts.gamma < 0.0 {
        return Err(Error::InvalidConfig(
            "beta and gamma must be nonnegative".into(),
        ));
    }
    Ok(task_loss - wts.beta * rep_bound - wts.gamma * head_bound)
}

/// Uniform draw of `k_minus_1` distinct pool entries.
pub fn sample_negatives(pool: &[Vector], k_minus_1: usize, seed: u64) -> Result<Vec<Vector>> {
    if k_minus_1 > pool.len() {
        return Err(Error::PoolTooSmall {
            pool: pool.len(),
            requested: k_minus_1,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, pool.len(), k_minus_1)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}

/// Settings for the correlated-versus-shuffled pairs experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedExperiment {
    pub dim: usize,
    pub pairs: usize,
    /// Candidates per batch, positive included.
    pub k: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub noise: f64,
}

impl Default for PairedExperiment {
    fn default() -> Self {
        Self {
            dim: 4,
            pairs: 64,
            k: 8,
            steps: 100,
            learning_rate: 0.5,
            noise: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedOutcome {
    pub correlated: f64,
    pub shuffled: f64,
}

// Fixed across runs so every seed sees the same dependence structure.
const COUPLING_SEED: u64 = 0x00C0_FFEE;

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn gaussian_vector(len: usize, rng: &mut ChaCha8Rng) -> Vector {
    Vector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

impl PairedExperiment {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.k == 0 || self.pairs < self.k {
            return Err(Error::InvalidConfig(format!(
                "need dim >= 1, k >= 1 and pairs >= k (dim {}, k {}, pairs {})",
                self.dim, self.k, self.pairs
            )));
        }
        Ok(())
    }

    /// The fixed coupling `M` in `partner = M anchor + noise`.
    pub fn coupling(&self) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(COUPLING_SEED);
        gaussian_matrix(self.dim, self.dim, &mut rng) / (self.dim as f64).sqrt()
    }

    fn draw_pairs(&self, coupling: &Matrix, rng: &mut ChaCha8Rng) -> (Vec<Vector>, Vec<Vector>) {
        let anchors: Vec<Vector> = (0..self.pairs)
            .map(|_| gaussian_vector(self.dim, rng))
            .collect();
        let partners = anchors
            .iter()
            .map(|a| coupling * a + gaussian_vector(self.dim, rng) * self.noise)
            .collect();
        (anchors, partners)
    }

    fn batches(
        &self,
        anchors: &[Vector],
        partners: &[Vector],
        weight: &Matrix,
        seed: u64,
    ) -> Result<Vec<NceBatch>> {
        anchors
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let pool: Vec<Vector> = partners
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, p)| p.clone())
                    .collect();
                let negatives = sample_negatives(&pool, self.k - 1, derive_seed(seed, i as u64))?;
                NceBatch::new(a.clone(), partners[i].clone(), negatives, weight.clone())
            })
            .collect()
    }

    fn mean_bound(
        &self,
        anchors: &[Vector],
        partners: &[Vector],
        weight: &Matrix,
        seed: u64,
    ) -> Result<f64> {
        let batches = self.batches(anchors, partners, weight, seed)?;
        let total: f64 = batches
            .iter()
            .map(|b| mi_lower_bound(b, BoundKind::Representation).value)
            .sum();
        Ok(total / batches.len() as f64)
    }

    /// Trains the critic by gradient ascent on the mean NCE term, then reports
    /// the representation bound on held-out pairs.
    fn train_and_evaluate(
        &self,
        train: (&[Vector], &[Vector]),
        eval: (&[Vector], &[Vector]),
        seed: u64,
    ) -> Result<f64> {
        let mut weight = Matrix::zeros(self.dim, self.dim);
        for step in 0..self.steps {
            let batches =
                self.batches(train.0, train.1, &weight, derive_seed(seed, step as u64))?;
            let mut grad = Matrix::zeros(self.dim, self.dim);
            for b in &batches {
                grad += nce_gradients(b).weight;
            }
            weight += grad * (self.learning_rate / batches.len() as f64);
        }
        self.mean_bound(eval.0, eval.1, &weight, derive_seed(seed, u64::MAX))
    }

    /// Representation bound after training on dependent pairs versus the same
    /// pairs with partners permuted.
    pub fn run(&self, seed: u64) -> Result<PairedOutcome> {
        self.validate()?;
        let coupling = self.coupling();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (train_a, train_p) = self.draw_pairs(&coupling, &mut rng);
        let (eval_a, eval_p) = self.draw_pairs(&coupling, &mut rng);
        let mut shuf_train = train_p.clone();
        shuf_train.shuffle(&mut rng);
        let mut shuf_eval = eval_p.clone();
        shuf_eval.shuffle(&mut rng);

        let correlated = self.train_and_evaluate(
            (&train_a, &train_p),
            (&eval_a, &eval_p),
            derive_seed(seed, 1),
        )?;
        let shuffled = self.train_and_evaluate(
            (&train_a, &shuf_train),
            (&eval_a, &shuf_eval),
            derive_seed(seed, 2),
        )?;
        Ok(PairedOutcome {
            correlated,
            shuffled,
        })
    }
}
