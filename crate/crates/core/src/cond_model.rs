//! Learned complete conditionals and approximate KCC-SD.
//!
//! Each coordinate `j` gets a histogram model: the training range of `x_j` is
//! cut into `m` uniform bins and a two-layer network
//! `softmax(W2 · sigmoid(W1 · x_{-j} + b1) + b2)` predicts the bin of `x_j`.
//! Sampling draws a bin from that categorical and returns its midpoint.
//!
//! Models are trained with full-batch gradient descent on the mean
//! cross-entropy and the epoch with the lowest validation loss is kept.

use std::io::{BufRead, Write};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{fork_seed, substream};
use crate::stein::{estimate_kccsd, CoordinateKernels, DiscrepancyEstimate};
use crate::targets::{ConditionalSampler, Target};

const FORMAT_TAG: &str = "steincc-histogram-model v1";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub bins: usize,
    pub hidden: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 0.1,
            bins: 20,
            hidden: 15,
            train_fraction: 0.2,
            val_fraction: 0.1,
            test_fraction: 0.7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fr.iter().any(|f| f.is_nan() || *f <= 0.0) {
            return Err(Error::Config("split fractions must be positive".into()));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must sum to 1".into()));
        }
        if self.bins == 0 || self.hidden == 0 {
            return Err(Error::Config("bin count and hidden width must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Row counts `(train, val, test)` for `n` rows.
    pub fn split_sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let n_train = (self.train_fraction * n as f64).floor() as usize;
        let n_val = (self.val_fraction * n as f64).floor() as usize;
        let n_test = n.saturating_sub(n_train + n_val);
        if n_train == 0 || n_val == 0 || n_test == 0 {
            return Err(Error::Config(format!(
                "{n} rows give an empty split (train {n_train}, val {n_val}, test {n_test})"
            )));
        }
        Ok((n_train, n_val, n_test))
    }
}

/// Network weights; also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl MlpParams {
    pub fn zeros(input: usize, hidden: usize, bins: usize) -> Self {
        Self {
            w1: Array2::zeros((hidden, input)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((bins, hidden)),
            b2: Array1::zeros(bins),
        }
    }

    /// Uniform weights in ±1/√fan_in, zero biases.
    pub fn random(input: usize, hidden: usize, bins: usize, rng: &mut dyn RngCore) -> Self {
        let mut p = Self::zeros(input, hidden, bins);
        if input > 0 {
            let a = 1.0 / (input as f64).sqrt();
            p.w1.iter_mut().for_each(|w| *w = rng.random_range(-a..a));
        }
        let a = 1.0 / (hidden as f64).sqrt();
        p.w2.iter_mut().for_each(|w| *w = rng.random_range(-a..a));
        p
    }

    fn axpy(&mut self, alpha: f64, g: &MlpParams) {
        self.w1.scaled_add(alpha, &g.w1);
        self.b1.scaled_add(alpha, &g.b1);
        self.w2.scaled_add(alpha, &g.w2);
        self.b2.scaled_add(alpha, &g.b2);
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(self.b1.iter()).chain(self.w2.iter()).chain(self.b2.iter())
    }

    fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

/// Bin classifier for the complete conditional of one coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramConditionalModel {
    coord: usize,
    lo: f64,
    hi: f64,
    params: MlpParams,
}

impl HistogramConditionalModel {
    pub fn new(coord: usize, lo: f64, hi: f64, params: MlpParams) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::Config(format!("invalid bin interval [{lo}, {hi}]")));
        }
        let (h, m) = (params.b1.len(), params.b2.len());
        if params.w1.nrows() != h || params.w2.dim() != (m, h) || m == 0 {
            return Err(Error::Config("inconsistent network shapes".into()));
        }
        Ok(Self { coord, lo, hi, params })
    }

    pub fn coord(&self) -> usize {
        self.coord
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn bins(&self) -> usize {
        self.params.b2.len()
    }

    pub fn input_dim(&self) -> usize {
        self.params.w1.ncols()
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    /// Half-open bins `[e_k, e_{k+1})`, the last one closed; outside values clamp.
    pub fn bin_of(&self, v: f64) -> usize {
        let m = self.bins();
        let t = (v - self.lo) / (self.hi - self.lo) * m as f64;
        if t <= 0.0 {
            0
        } else {
            (t.floor() as usize).min(m - 1)
        }
    }

    pub fn bin_midpoint(&self, k: usize) -> f64 {
        let w = (self.hi - self.lo) / self.bins() as f64;
        self.lo + (k as f64 + 0.5) * w
    }

    /// Bin probabilities for one context `x_{-j}`.
    pub fn forward(&self, x_minus_j: &[f64]) -> Vec<f64> {
        let p = &self.params;
        debug_assert_eq!(x_minus_j.len(), p.w1.ncols());
        let hidden: Vec<f64> = p
            .w1
            .rows()
            .into_iter()
            .zip(p.b1.iter())
            .map(|(w, b)| sigmoid(w.iter().zip(x_minus_j).map(|(a, x)| a * x).sum::<f64>() + b))
            .collect();
        let mut out: Vec<f64> = p
            .w2
            .rows()
            .into_iter()
            .zip(p.b2.iter())
            .map(|(w, b)| w.iter().zip(&hidden).map(|(a, h)| a * h).sum::<f64>() + b)
            .collect();
        softmax_in_place(&mut out);
        out
    }

    /// Hidden activations and bin probabilities for a batch.
    fn forward_batch(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let p = &self.params;
        let mut a = x.dot(&p.w1.t()) + &p.b1;
        a.mapv_inplace(sigmoid);
        let mut probs = (a.dot(&p.w2.t()) + &p.b2).as_standard_layout().into_owned();
        for mut row in probs.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("standard layout"));
        }
        (a, probs)
    }

    /// Mean negative log-probability of the labelled bins.
    pub fn loss(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
        let (_, probs) = self.forward_batch(x);
        let total: f64 = labels.iter().enumerate().map(|(r, &l)| -probs[[r, l]].ln()).sum();
        total / labels.len() as f64
    }

    /// Backpropagation gradient of [`Self::loss`].
    pub fn gradient(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> MlpParams {
        let (a, mut delta) = self.forward_batch(x);
        let scale = 1.0 / labels.len() as f64;
        for (r, &l) in labels.iter().enumerate() {
            delta[[r, l]] -= 1.0;
        }
        delta.mapv_inplace(|v| v * scale);
        let w2 = delta.t().dot(&a);
        let b2 = delta.sum_axis(Axis(0));
        let mut dz = delta.dot(&self.params.w2);
        dz.zip_mut_with(&a, |g, &h| *g *= h * (1.0 - h));
        let w1 = dz.t().dot(&x);
        let b1 = dz.sum_axis(Axis(0));
        MlpParams { w1, b1, w2, b2 }
    }

    /// Draw a bin from the predicted categorical and return its midpoint.
    pub fn sample(&self, x_minus_j: &[f64], rng: &mut dyn RngCore) -> f64 {
        let probs = self.forward(x_minus_j);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = probs.len() - 1;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = k;
                break;
            }
        }
        self.bin_midpoint(chosen)
    }
}

/// Copy of `data` without column `j`.
pub fn drop_column(data: ArrayView2<'_, f64>, j: usize) -> Array2<f64> {
    let (n, d) = data.dim();
    let mut out = Array2::zeros((n, d - 1));
    out.slice_mut(s![.., ..j]).assign(&data.slice(s![.., ..j]));
    out.slice_mut(s![.., j..]).assign(&data.slice(s![.., j + 1..]));
    out
}

fn context_of(x: &[f64], j: usize, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend(x.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, v)| *v));
}

/// Training interval: column range padded by 5% on each side.
pub fn padded_interval(column: impl Iterator<Item = f64>) -> Result<(f64, f64)> {
    let (lo, hi) = column.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Config("training column is empty or non-finite".into()));
    }
    let range = hi - lo;
    if range > 0.0 {
        Ok((lo - 0.05 * range, hi + 0.05 * range))
    } else {
        Ok((lo - 0.5, hi + 0.5))
    }
}

/// A trained coordinate model with its validation history.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedCoordinate {
    pub model: HistogramConditionalModel,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    /// Validation loss after each epoch; entry 0 is the initial model.
    pub val_losses: Vec<f64>,
}

/// Train the histogram model for coordinate `j` and keep the best validation epoch.
pub fn fit_conditional(
    train: ArrayView2<'_, f64>,
    val: ArrayView2<'_, f64>,
    j: usize,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<FittedCoordinate> {
    if train.nrows() == 0 || val.nrows() == 0 {
        return Err(Error::Config("training and validation splits must be non-empty".into()));
    }
    let d = train.ncols();
    if val.ncols() != d || j >= d {
        return Err(Error::Config(format!("coordinate {j} invalid for {d} columns")));
    }
    cfg.validate()?;
    let (lo, hi) = padded_interval(train.column(j).iter().copied())?;
    let params = MlpParams::random(d - 1, cfg.hidden, cfg.bins, rng);
    let mut model = HistogramConditionalModel::new(j, lo, hi, params)?;

    let x_train = drop_column(train, j);
    let x_val = drop_column(val, j);
    let y_train: Vec<usize> = train.column(j).iter().map(|&v| model.bin_of(v)).collect();
    let y_val: Vec<usize> = val.column(j).iter().map(|&v| model.bin_of(v)).collect();

    let mut best = model.params.clone();
    let mut best_loss = model.loss(x_val.view(), &y_val);
    let mut best_epoch = 0;
    if !best_loss.is_finite() {
        return Err(Error::TrainingDiverged { coord: j, epoch: 0 });
    }
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    history.push(best_loss);
    for epoch in 1..=cfg.epochs {
        let g = model.gradient(x_train.view(), &y_train);
        model.params.axpy(-cfg.learning_rate, &g);
        let loss = model.loss(x_val.view(), &y_val);
        if !loss.is_finite() || !model.params.is_finite() {
            return Err(Error::TrainingDiverged { coord: j, epoch });
        }
        history.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best_epoch = epoch;
            best.clone_from(&model.params);
        }
    }
    model.params = best;
    Ok(FittedCoordinate { model, best_val_loss: best_loss, best_epoch, val_losses: history })
}

/// One fitted histogram model per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedConditionals {
    models: Vec<HistogramConditionalModel>,
    best_val_loss: Vec<f64>,
}

impl FittedConditionals {
    pub fn new(models: Vec<HistogramConditionalModel>, best_val_loss: Vec<f64>) -> Result<Self> {
        let d = models.len();
        if d == 0 || best_val_loss.len() != d {
            return Err(Error::Config("need one model and one loss per coordinate".into()));
        }
        for (j, m) in models.iter().enumerate() {
            if m.coord != j || m.input_dim() != d - 1 {
                return Err(Error::Config(format!("model {j} does not match coordinate layout")));
            }
        }
        Ok(Self { models, best_val_loss })
    }

    /// Fit every coordinate; coordinate `j` uses substream `j` of a seed drawn from `rng`.
    pub fn fit(
        train: ArrayView2<'_, f64>,
        val: ArrayView2<'_, f64>,
        cfg: &TrainConfig,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let master = fork_seed(rng);
        let fitted: Vec<FittedCoordinate> = (0..train.ncols())
            .into_par_iter()
            .map(|j| fit_conditional(train, val, j, cfg, &mut substream(master, j as u64)))
            .collect::<Result<_>>()?;
        let (models, losses) = fitted.into_iter().map(|f| (f.model, f.best_val_loss)).unzip();
        Self::new(models, losses)
    }

    pub fn models(&self) -> &[HistogramConditionalModel] {
        &self.models
    }

    pub fn best_val_loss(&self) -> &[f64] {
        &self.best_val_loss
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{FORMAT_TAG}")?;
        writeln!(w, "coords {}", self.models.len())?;
        let line = |w: &mut W, tag: &str, vals: &mut dyn Iterator<Item = &f64>| -> Result<()> {
            write!(w, "{tag}")?;
            for v in vals {
                write!(w, " {v:e}")?;
            }
            writeln!(w)?;
            Ok(())
        };
        for (m, loss) in self.models.iter().zip(&self.best_val_loss) {
            writeln!(
                w,
                "model {} {:e} {:e} {} {} {} {:e}",
                m.coord,
                m.lo,
                m.hi,
                m.bins(),
                m.params.b1.len(),
                m.input_dim(),
                loss
            )?;
            line(&mut w, "w1", &mut m.params.w1.iter())?;
            line(&mut w, "b1", &mut m.params.b1.iter())?;
            line(&mut w, "w2", &mut m.params.w2.iter())?;
            line(&mut w, "b2", &mut m.params.b2.iter())?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Format("unexpected end of file".into()))?
                .map_err(Error::from)
        };
        if next()?.trim() != FORMAT_TAG {
            return Err(Error::Format("missing or unsupported version tag".into()));
        }
        let header = next()?;
        let d: usize = header
            .strip_prefix("coords ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("bad header line: {header}")))?;
        let parse_f = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("{s}: {e}")));
        let parse_u = |s: &str| s.parse::<usize>().map_err(|e| Error::Format(format!("{s}: {e}")));
        let mut models = Vec::with_capacity(d);
        let mut losses = Vec::with_capacity(d);
        for _ in 0..d {
            let head = next()?;
            let f: Vec<&str> = head.split_whitespace().collect();
            if f.len() != 8 || f[0] != "model" {
                return Err(Error::Format(format!("bad model line: {head}")));
            }
            let (coord, lo, hi) = (parse_u(f[1])?, parse_f(f[2])?, parse_f(f[3])?);
            let (bins, hidden, input) = (parse_u(f[4])?, parse_u(f[5])?, parse_u(f[6])?);
            losses.push(parse_f(f[7])?);
            let mut vec_of = |tag: &str, len: usize| -> Result<Vec<f64>> {
                let l = next()?;
                let mut it = l.split_whitespace();
                if it.next() != Some(tag) {
                    return Err(Error::Format(format!("expected {tag} line")));
                }
                let v: Vec<f64> = it.map(parse_f).collect::<Result<_>>()?;
                if v.len() != len {
                    return Err(Error::Format(format!("{tag}: expected {len} values, got {}", v.len())));
                }
                Ok(v)
            };
            let shape_err = |e: ndarray::ShapeError| Error::Format(e.to_string());
            let params = MlpParams {
                w1: Array2::from_shape_vec((hidden, input), vec_of("w1", hidden * input)?).map_err(shape_err)?,
                b1: Array1::from(vec_of("b1", hidden)?),
                w2: Array2::from_shape_vec((bins, hidden), vec_of("w2", bins * hidden)?).map_err(shape_err)?,
                b2: Array1::from(vec_of("b2", bins)?),
            };
            models.push(HistogramConditionalModel::new(coord, lo, hi, params)?);
        }
        Self::new(models, losses)
    }
}

impl ConditionalSampler for FittedConditionals {
    fn dim(&self) -> usize {
        self.models.len()
    }

    fn sample_coord(&self, j: usize, x: &[f64], rng: &mut dyn RngCore) -> Result<f64> {
        let model = self
            .models
            .get(j)
            .ok_or_else(|| Error::Config(format!("no model for coordinate {j}")))?;
        let mut ctx = Vec::with_capacity(x.len().saturating_sub(1));
        context_of(x, j, &mut ctx);
        Ok(model.sample(&ctx, rng))
    }
}

/// Approximate KCC-SD: fit the conditionals on the leading train/validation rows
/// and evaluate on the remaining test rows with draws from the fitted models.
pub fn estimate_approx_kccsd<T: Target + ?Sized>(
    data: ArrayView2<'_, f64>,
    target: &T,
    cfg: &TrainConfig,
    kernels: &CoordinateKernels,
    n_y: usize,
    rng: &mut dyn RngCore,
) -> Result<DiscrepancyEstimate> {
    let (n_train, n_val, _) = cfg.split_sizes(data.nrows())?;
    if data.ncols() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), got: data.ncols() });
    }
    let train = data.slice(s![..n_train, ..]);
    let val = data.slice(s![n_train..n_train + n_val, ..]);
    let test = data.slice(s![n_train + n_val.., ..]);
    let fitted = FittedConditionals::fit(train, val, cfg, rng)?;
    estimate_kccsd(test, target, &fitted, kernels, n_y, rng)
}
