//! Collective matrix factorization with spatial regularization.
//!
//! Region shopping intensities `R_s` (`r × n`, partially observed) and
//! mobility intensities `R_m` (`r × m`, dense) are explained by shared region
//! lifestyles `R_l` (`r × l`) through two views, `R_s ≈ R_l·V1ᵀ` and
//! `R_m ≈ R_l·V2ᵀ`. The objective is
//!
//! ```text
//! ½‖I∘(R_s − R_l·V1ᵀ)‖² + (λ1/2)‖R_m − R_l·V2ᵀ‖²
//!   + (α/2) Σ_i ‖R_l,i − Σ_j W(j,i)·R_l,j‖²
//!   + (λ2/2)(‖R_l‖² + ‖V1‖² + ‖V2‖²)
//! ```
//!
//! where `W` holds column-normalized inflow weights (gravity interactions or
//! lattice neighbours). It is minimized by full-batch gradient descent; each
//! iteration starts from step 1 and halves it until the objective strictly
//! decreases.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gravity::CombinedWeightMatrix;
use crate::patterns::{MobilityPatternMatrix, ShoppingPatternMatrix};
use crate::seed;

pub use crate::gravity::neighbor_weights;

/// Steps below this size end training at the current iterate.
pub const MIN_STEP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "mf")]
    Mf,
    #[serde(rename = "cmf")]
    Cmf,
    #[serde(rename = "cmf-n")]
    CmfN,
    #[serde(rename = "cmf-i")]
    CmfI,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Mf, Variant::Cmf, Variant::CmfN, Variant::CmfI];

    pub fn tag(&self) -> &'static str {
        match self {
            Variant::Mf => "mf",
            Variant::Cmf => "cmf",
            Variant::CmfN => "cmf-n",
            Variant::CmfI => "cmf-i",
        }
    }

    /// Display label as used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Mf => "MF",
            Variant::Cmf => "CMF",
            Variant::CmfN => "CMF + N",
            Variant::CmfI => "CMF + I",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mf" => Ok(Variant::Mf),
            "cmf" => Ok(Variant::Cmf),
            "cmf-n" | "cmf+n" => Ok(Variant::CmfN),
            "cmf-i" | "cmf+i" => Ok(Variant::CmfI),
            other => Err(Error::InvalidInput(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// The analytic gradient of the objective.
    #[default]
    Exact,
    /// Per-region spatial term `α·r·(R_l,i − mean_i)` with no cross-region
    /// coupling.
    PaperLiteral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Number of latent lifestyles.
    pub l: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
    pub max_iters: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub gradient_mode: GradientMode,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            l: 10,
            lambda1: 1.0,
            lambda2: 0.01,
            alpha: 1.0,
            max_iters: 2000,
            epsilon: 1e-9,
            seed: 0,
            gradient_mode: GradientMode::Exact,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 {
            return Err(Error::InvalidInput("l must be at least 1".into()));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("alpha", self.alpha),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be positive".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidInput(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// The hyperparameters a variant actually trains with.
    pub fn for_variant(&self, variant: Variant) -> Hyperparams {
        let mut h = self.clone();
        match variant {
            Variant::Mf => {
                h.lambda1 = 0.0;
                h.alpha = 0.0;
            }
            Variant::Cmf => h.alpha = 0.0,
            Variant::CmfN | Variant::CmfI => {}
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerKind {
    None,
    Neighbor,
    Interaction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerSpec {
    kind: RegularizerKind,
    weights: Option<CombinedWeightMatrix>,
}

impl RegularizerSpec {
    pub fn none() -> Self {
        RegularizerSpec {
            kind: RegularizerKind::None,
            weights: None,
        }
    }

    pub fn neighbor(weights: CombinedWeightMatrix) -> Result<Self> {
        Self::with_weights(RegularizerKind::Neighbor, weights)
    }

    pub fn interaction(weights: CombinedWeightMatrix) -> Result<Self> {
        Self::with_weights(RegularizerKind::Interaction, weights)
    }

    fn with_weights(kind: RegularizerKind, weights: CombinedWeightMatrix) -> Result<Self> {
        let w = weights.as_array();
        if w.nrows() != w.ncols() {
            return Err(Error::dims("weight matrix", "square", format!("{:?}", w.dim())));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "weights must be finite and non-negative".into(),
            ));
        }
        let err = weights.max_column_sum_error();
        if err > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "weight columns must sum to 1 (worst deviation {err:e})"
            )));
        }
        Ok(RegularizerSpec {
            kind,
            weights: Some(weights),
        })
    }

    pub fn kind(&self) -> RegularizerKind {
        self.kind
    }

    pub fn weights(&self) -> Option<&CombinedWeightMatrix> {
        self.weights.as_ref()
    }
}

/// Region lifestyles and the two view matrices, plus the input scales used
/// during training (prediction is reported in the original units).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub r_l: Array2<f64>,
    pub v1: Array2<f64>,
    pub v2: Array2<f64>,
    pub shop_scale: f64,
    pub mob_scale: f64,
}

impl FactorModel {
    pub fn new(r_l: Array2<f64>, v1: Array2<f64>, v2: Array2<f64>) -> Result<Self> {
        let l = r_l.ncols();
        if v1.ncols() != l || v2.ncols() != l {
            return Err(Error::dims(
                "latent dimension of V1/V2",
                l,
                format!("{}, {}", v1.ncols(), v2.ncols()),
            ));
        }
        Ok(FactorModel {
            r_l,
            v1,
            v2,
            shop_scale: 1.0,
            mob_scale: 1.0,
        })
    }

    pub fn zeros(r: usize, n: usize, m: usize, l: usize) -> Self {
        FactorModel {
            r_l: Array2::zeros((r, l)),
            v1: Array2::zeros((n, l)),
            v2: Array2::zeros((m, l)),
            shop_scale: 1.0,
            mob_scale: 1.0,
        }
    }

    /// `(r, n, m, l)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (
            self.r_l.nrows(),
            self.v1.nrows(),
            self.v2.nrows(),
            self.r_l.ncols(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.r_l
            .iter()
            .chain(self.v1.iter())
            .chain(self.v2.iter())
            .all(|v| v.is_finite())
    }
}

/// `R_l·V1ᵀ` clamped at zero, in original shopping units.
pub fn predict(model: &FactorModel) -> Array2<f64> {
    let s = model.shop_scale;
    model.r_l.dot(&model.v1.t()).mapv(|v| v.max(0.0) * s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub r_l: Array2<f64>,
    pub v1: Array2<f64>,
    pub v2: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub loss: f64,
    pub gamma: f64,
}

/// Objective after initialization (iteration 0, step 0) and after every
/// accepted step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTrace(pub Vec<TraceEntry>);

impl LossTrace {
    pub fn entries(&self) -> &[TraceEntry] {
        &self.0
    }

    pub fn initial(&self) -> f64 {
        self.0.first().map_or(f64::NAN, |e| e.loss)
    }

    pub fn last(&self) -> f64 {
        self.0.last().map_or(f64::NAN, |e| e.loss)
    }

    pub fn accepted_steps(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        self.0.windows(2).all(|w| w[1].loss < w[0].loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// Decrease fell to `epsilon` or below.
    Converged,
    MaxIters,
    /// No step of size at least `MIN_STEP` decreased the objective.
    StepUnderflow,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FactorModel,
    pub trace: LossTrace,
    pub stop: StopReason,
    pub variant: Variant,
    /// Hyperparameters after variant forcing.
    pub hyperparams: Hyperparams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub r: usize,
    pub n: usize,
    pub m: usize,
    pub l: usize,
}

/// Flat, row-major form of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub dims: ModelDims,
    pub r_l: Vec<f64>,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub shop_scale: f64,
    pub mob_scale: f64,
    pub hyperparams: Hyperparams,
    pub variant: Variant,
    pub final_loss: f64,
    pub stop: StopReason,
    pub accepted_steps: usize,
}

impl ModelDocument {
    pub fn from_outcome(out: &TrainOutcome) -> Self {
        let (r, n, m, l) = out.model.dims();
        let flat = |a: &Array2<f64>| a.iter().copied().collect::<Vec<f64>>();
        ModelDocument {
            dims: ModelDims { r, n, m, l },
            r_l: flat(&out.model.r_l),
            v1: flat(&out.model.v1),
            v2: flat(&out.model.v2),
            shop_scale: out.model.shop_scale,
            mob_scale: out.model.mob_scale,
            hyperparams: out.hyperparams.clone(),
            variant: out.variant,
            final_loss: out.trace.last(),
            stop: out.stop,
            accepted_steps: out.trace.accepted_steps(),
        }
    }

    pub fn to_model(&self) -> Result<FactorModel> {
        let ModelDims { r, n, m, l } = self.dims;
        let shape = |name: &str, rows: usize, data: &[f64]| {
            Array2::from_shape_vec((rows, l), data.to_vec())
                .map_err(|_| Error::dims(&format!("{name} entries"), rows * l, data.len()))
        };
        let model = FactorModel {
            r_l: shape("r_l", r, &self.r_l)?,
            v1: shape("v1", n, &self.v1)?,
            v2: shape("v2", m, &self.v2)?,
            shop_scale: self.shop_scale,
            mob_scale: self.mob_scale,
        };
        if !model.is_finite() || !(self.shop_scale > 0.0 && self.mob_scale > 0.0) {
            return Err(Error::InvalidInput(
                "model contains non-finite factors or scales".into(),
            ));
        }
        Ok(model)
    }
}

// ---------------------------------------------------------------------------
// internals

/// Sparse or dense application of the weight matrix.
enum WeightOp {
    Dense(Array2<f64>),
    /// `cols[i]` = nonzeros of column `i`; `rows[j]` = nonzeros of row `j`.
    Sparse {
        cols: Vec<Vec<(usize, f64)>>,
        rows: Vec<Vec<(usize, f64)>>,
    },
}

impl WeightOp {
    fn new(w: &Array2<f64>) -> Self {
        let r = w.nrows();
        let nnz = w.iter().filter(|&&v| v != 0.0).count();
        if nnz * 4 > r * r {
            return WeightOp::Dense(w.clone());
        }
        let mut cols = vec![Vec::new(); r];
        let mut rows = vec![Vec::new(); r];
        for j in 0..r {
            for i in 0..r {
                let v = w[[j, i]];
                if v != 0.0 {
                    cols[i].push((j, v));
                    rows[j].push((i, v));
                }
            }
        }
        WeightOp::Sparse { cols, rows }
    }

    /// `out_i = Σ_j W(j,i) x_j`, i.e. `Wᵀ·x`.
    fn inflow_mean(&self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            WeightOp::Dense(w) => w.t().dot(x),
            WeightOp::Sparse { cols, .. } => gather(cols, x),
        }
    }

    /// `out_j = Σ_i W(j,i) x_i`, i.e. `W·x`.
    fn scatter(&self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            WeightOp::Dense(w) => w.dot(x),
            WeightOp::Sparse { rows, .. } => gather(rows, x),
        }
    }
}

fn gather(lists: &[Vec<(usize, f64)>], x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(x.dim());
    for (i, list) in lists.iter().enumerate() {
        let mut row = out.row_mut(i);
        for &(j, v) in list {
            row.scaled_add(v, &x.row(j));
        }
    }
    out
}

struct Problem<'a> {
    shop: &'a Array2<f64>,
    mask: &'a Array2<f64>,
    mob: &'a Array2<f64>,
    weights: Option<WeightOp>,
    lambda1: f64,
    lambda2: f64,
    alpha: f64,
    mode: GradientMode,
}

/// Residuals of the three fit terms at one iterate.
struct State {
    e1: Array2<f64>,
    e2: Option<Array2<f64>>,
    dev: Option<Array2<f64>>,
    loss: f64,
}

fn sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

impl<'a> Problem<'a> {
    fn new(
        shop: &'a ShoppingPatternMatrix,
        mob: &'a MobilityPatternMatrix,
        reg: &RegularizerSpec,
        h: &Hyperparams,
    ) -> Result<Self> {
        h.validate()?;
        let r = shop.n_regions();
        if mob.n_regions() != r {
            return Err(Error::dims("mobility rows", r, mob.n_regions()));
        }
        if let Some(w) = reg.weights() {
            if w.n_regions() != r {
                return Err(Error::dims("weight matrix size", r, w.n_regions()));
            }
        }
        if shop.values.iter().chain(mob.0.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite pattern values".into()));
        }
        let use_reg = h.alpha > 0.0 && reg.kind() != RegularizerKind::None;
        Ok(Problem {
            shop: &shop.values,
            mask: &shop.mask,
            mob: &mob.0,
            weights: if use_reg {
                reg.weights().map(|w| WeightOp::new(w.as_array()))
            } else {
                None
            },
            lambda1: h.lambda1,
            lambda2: h.lambda2,
            alpha: if use_reg { h.alpha } else { 0.0 },
            mode: h.gradient_mode,
        })
    }

    fn check_model(&self, m: &FactorModel) -> Result<()> {
        let (r, n, mm, _) = m.dims();
        if r != self.shop.nrows() || n != self.shop.ncols() || mm != self.mob.ncols() {
            return Err(Error::dims(
                "model (r, n, m)",
                format!(
                    "({}, {}, {})",
                    self.shop.nrows(),
                    self.shop.ncols(),
                    self.mob.ncols()
                ),
                format!("({r}, {n}, {mm})"),
            ));
        }
        if m.v1.ncols() != m.r_l.ncols() || m.v2.ncols() != m.r_l.ncols() {
            return Err(Error::dims("latent dimension", m.r_l.ncols(), m.v1.ncols()));
        }
        if !m.is_finite() {
            return Err(Error::InvalidInput("model contains non-finite entries".into()));
        }
        Ok(())
    }

    fn uses_mobility(&self) -> bool {
        self.lambda1 > 0.0
    }

    fn state(&self, m: &FactorModel) -> State {
        let mut e1 = m.r_l.dot(&m.v1.t());
        Zip::from(&mut e1)
            .and(self.shop)
            .and(self.mask)
            .for_each(|e, &s, &k| *e = k * (*e - s));
        let mut loss = 0.5 * sq(&e1);

        let e2 = if self.uses_mobility() {
            let e2 = m.r_l.dot(&m.v2.t()) - self.mob;
            loss += 0.5 * self.lambda1 * sq(&e2);
            Some(e2)
        } else {
            None
        };

        let dev = self.weights.as_ref().map(|w| {
            let dev = &m.r_l - &w.inflow_mean(&m.r_l);
            loss += 0.5 * self.alpha * sq(&dev);
            dev
        });

        if self.lambda2 > 0.0 {
            loss += 0.5 * self.lambda2 * (sq(&m.r_l) + sq(&m.v1) + sq(&m.v2));
        }
        State { e1, e2, dev, loss }
    }

    fn gradient(&self, m: &FactorModel, st: &State) -> Gradient {
        let mut g_r = st.e1.dot(&m.v1);
        let mut g_1 = st.e1.t().dot(&m.r_l);
        let mut g_2 = Array2::zeros(m.v2.dim());
        if let Some(e2) = &st.e2 {
            g_r.scaled_add(self.lambda1, &e2.dot(&m.v2));
            g_2.scaled_add(self.lambda1, &e2.t().dot(&m.r_l));
        }
        if let (Some(w), Some(dev)) = (&self.weights, &st.dev) {
            match self.mode {
                GradientMode::Exact => {
                    let back = dev - &w.scatter(dev);
                    g_r.scaled_add(self.alpha, &back);
                }
                GradientMode::PaperLiteral => {
                    let r = m.r_l.nrows() as f64;
                    g_r.scaled_add(self.alpha * r, dev);
                }
            }
        }
        if self.lambda2 > 0.0 {
            g_r.scaled_add(self.lambda2, &m.r_l);
            g_1.scaled_add(self.lambda2, &m.v1);
            g_2.scaled_add(self.lambda2, &m.v2);
        }
        Gradient {
            r_l: g_r,
            v1: g_1,
            v2: g_2,
        }
    }
}

/// Objective restricted to the ray `θ − γ·∇`, in closed form per entry.
struct LineModel {
    e1: Array2<f64>,
    b1: Array2<f64>,
    c1: Array2<f64>,
    mob: Option<(Array2<f64>, Array2<f64>, Array2<f64>)>,
    dev: Option<(Array2<f64>, Array2<f64>)>,
}

impl LineModel {
    fn new(p: &Problem, m: &FactorModel, st: &State, g: &Gradient) -> Self {
        let mut b1 = g.r_l.dot(&m.v1.t()) + m.r_l.dot(&g.v1.t());
        let mut c1 = g.r_l.dot(&g.v1.t());
        b1.zip_mut_with(p.mask, |v, &k| *v *= k);
        c1.zip_mut_with(p.mask, |v, &k| *v *= k);
        let mob = st.e2.as_ref().map(|e2| {
            let b2 = g.r_l.dot(&m.v2.t()) + m.r_l.dot(&g.v2.t());
            let c2 = g.r_l.dot(&g.v2.t());
            (e2.clone(), b2, c2)
        });
        let dev = match (&p.weights, &st.dev) {
            (Some(w), Some(dev)) => Some((dev.clone(), &g.r_l - &w.inflow_mean(&g.r_l))),
            _ => None,
        };
        LineModel {
            e1: st.e1.clone(),
            b1,
            c1,
            mob,
            dev,
        }
    }

    fn loss(&self, p: &Problem, m: &FactorModel, g: &Gradient, gamma: f64) -> f64 {
        let g2 = gamma * gamma;
        let quad = |e: &Array2<f64>, b: &Array2<f64>, c: &Array2<f64>| -> f64 {
            let mut s = 0.0;
            Zip::from(e).and(b).and(c).for_each(|&e, &b, &c| {
                let v = e - gamma * b + g2 * c;
                s += v * v;
            });
            s
        };
        let mut loss = 0.5 * quad(&self.e1, &self.b1, &self.c1);
        if let Some((e2, b2, c2)) = &self.mob {
            loss += 0.5 * p.lambda1 * quad(e2, b2, c2);
        }
        if let Some((dev, h)) = &self.dev {
            let mut s = 0.0;
            Zip::from(dev).and(h).for_each(|&d, &h| {
                let v = d - gamma * h;
                s += v * v;
            });
            loss += 0.5 * p.alpha * s;
        }
        if p.lambda2 > 0.0 {
            let ridge = |x: &Array2<f64>, d: &Array2<f64>| -> f64 {
                let mut s = 0.0;
                Zip::from(x).and(d).for_each(|&x, &d| {
                    let v = x - gamma * d;
                    s += v * v;
                });
                s
            };
            loss += 0.5 * p.lambda2 * (ridge(&m.r_l, &g.r_l) + ridge(&m.v1, &g.v1) + ridge(&m.v2, &g.v2));
        }
        loss
    }
}

fn step(m: &FactorModel, g: &Gradient, gamma: f64) -> FactorModel {
    let mut next = m.clone();
    next.r_l.scaled_add(-gamma, &g.r_l);
    next.v1.scaled_add(-gamma, &g.v1);
    next.v2.scaled_add(-gamma, &g.v2);
    next
}

// ---------------------------------------------------------------------------
// public operations

/// Objective value in the units of the matrices passed in.
pub fn objective(
    model: &FactorModel,
    shop: &ShoppingPatternMatrix,
    mob: &MobilityPatternMatrix,
    reg: &RegularizerSpec,
    h: &Hyperparams,
) -> Result<f64> {
    let p = Problem::new(shop, mob, reg, h)?;
    p.check_model(model)?;
    Ok(p.state(model).loss)
}

pub fn gradient(
    model: &FactorModel,
    shop: &ShoppingPatternMatrix,
    mob: &MobilityPatternMatrix,
    reg: &RegularizerSpec,
    h: &Hyperparams,
    mode: GradientMode,
) -> Result<Gradient> {
    let h = Hyperparams {
        gradient_mode: mode,
        ..h.clone()
    };
    let p = Problem::new(shop, mob, reg, &h)?;
    p.check_model(model)?;
    let st = p.state(model);
    Ok(p.gradient(model, &st))
}

fn max_observed(values: &Array2<f64>, mask: Option<&Array2<f64>>) -> f64 {
    let max = match mask {
        Some(mask) => values
            .iter()
            .zip(mask.iter())
            .filter(|(_, &k)| k != 0.0)
            .map(|(&v, _)| v)
            .fold(0.0, f64::max),
        None => values.iter().copied().fold(0.0, f64::max),
    };
    if max > 0.0 && max.is_finite() {
        max
    } else {
        1.0
    }
}

/// Trains one variant. Inputs are divided by their largest observed entry
/// before optimization; the scales are stored on the returned model.
pub fn train(
    shop: &ShoppingPatternMatrix,
    mob: &MobilityPatternMatrix,
    reg: &RegularizerSpec,
    h: &Hyperparams,
    variant: Variant,
) -> Result<TrainOutcome> {
    match (variant, reg.kind()) {
        (Variant::CmfN, RegularizerKind::Neighbor) | (Variant::CmfI, RegularizerKind::Interaction) => {}
        (Variant::CmfN | Variant::CmfI, kind) => {
            return Err(Error::InvalidInput(format!(
                "variant {variant} cannot train with a {kind:?} regularizer"
            )))
        }
        _ => {}
    }
    let reg = match variant {
        Variant::Mf | Variant::Cmf => RegularizerSpec::none(),
        _ => reg.clone(),
    };
    let hv = h.for_variant(variant);
    hv.validate()?;

    let (r, n) = shop.values.dim();
    let m = mob.n_patterns();
    if mob.n_regions() != r {
        return Err(Error::dims("mobility rows", r, mob.n_regions()));
    }
    let shop_scale = max_observed(&shop.values, Some(&shop.mask));
    let mob_scale = max_observed(&mob.0, None);
    let scaled_shop = ShoppingPatternMatrix {
        values: shop.values.mapv(|v| v / shop_scale),
        mask: shop.mask.clone(),
    };
    let scaled_mob = MobilityPatternMatrix(mob.0.mapv(|v| v / mob_scale));

    let problem = Problem::new(&scaled_shop, &scaled_mob, &reg, &hv)?;

    let observed = shop.mask.iter().filter(|&&k| k != 0.0).count();
    let mean_obs = if observed > 0 {
        scaled_shop.values.sum() / observed as f64
    } else {
        0.0
    };
    let mean_obs = if mean_obs > 0.0 { mean_obs } else { 1.0 };
    let upper = 0.1 * (mean_obs / hv.l as f64).sqrt();
    let mut rng = seed::rng(hv.seed);
    let mut draw = |rows: usize| Array2::from_shape_fn((rows, hv.l), |_| upper * (1.0 - rng.random::<f64>()));
    let r_l = draw(r);
    let v1 = draw(n);
    let v2 = draw(m);
    let mut model = FactorModel {
        r_l,
        v1,
        v2,
        shop_scale,
        mob_scale,
    };

    let mut state = problem.state(&model);
    if !state.loss.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: 0 });
    }
    let mut trace = LossTrace(vec![TraceEntry {
        iteration: 0,
        loss: state.loss,
        gamma: 0.0,
    }]);
    let mut stop = StopReason::MaxIters;

    for t in 1..=hv.max_iters {
        let grad = problem.gradient(&model, &state);
        let line = LineModel::new(&problem, &model, &state, &grad);
        let mut gamma = 1.0;
        let mut accepted = None;
        while gamma >= MIN_STEP {
            let predicted = line.loss(&problem, &model, &grad, gamma);
            if predicted < state.loss {
                let candidate = step(&model, &grad, gamma);
                let cand_state = problem.state(&candidate);
                if cand_state.loss < state.loss {
                    accepted = Some((candidate, cand_state));
                    break;
                }
            }
            gamma *= 0.5;
        }
        let Some((next, next_state)) = accepted else {
            stop = StopReason::StepUnderflow;
            break;
        };
        if !next_state.loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: t });
        }
        let decrease = state.loss - next_state.loss;
        model = next;
        state = next_state;
        trace.0.push(TraceEntry {
            iteration: t,
            loss: state.loss,
            gamma,
        });
        if decrease <= hv.epsilon {
            stop = StopReason::Converged;
            break;
        }
    }

    Ok(TrainOutcome {
        model,
        trace,
        stop,
        variant,
        hyperparams: hv,
    })
}
