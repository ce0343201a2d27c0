//! Synthetic systems, CSV ingestion and standardization.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{normal, stream, Rng, Stream};

/// Non-stationary kink transition. Both branch conditions put `x = 0` on
/// the lower branch, so `s` jumps from 1 to 0.5 just above zero.
pub fn kink_f(x: f64) -> f64 {
    let kink = 0.8 + (x + 0.2) * (1.0 - 5.0 / (1.0 + (-2.0 * x).exp()));
    let (s, o) = if x > 0.0 {
        (1.0 - 0.5 * (-0.5 * x).exp(), 0.5 * (8.0 * x).sin())
    } else {
        (1.0, 0.5 * (2.0 * x).sin())
    };
    kink * s - o
}

/// Time derivative of the Lorenz-96 state with cyclic indices.
pub fn lorenz96_drift(x: &[f64], forcing: f64) -> Vec<f64> {
    let d = x.len();
    (0..d)
        .map(|i| {
            let (p1, m1, m2) = ((i + 1) % d, (i + d - 1) % d, (i + d - 2) % d);
            (x[p1] - x[m2]) * x[m1] - x[i] + forcing
        })
        .collect()
}

/// One Euler step `x + dt · drift(x)`.
pub fn lorenz96_step(x: &[f64], dt: f64, forcing: f64) -> Result<Vec<f64>> {
    if x.len() < 4 {
        return Err(Error::Contract(format!("lorenz96 needs at least 4 coordinates, got {}", x.len())));
    }
    Ok(lorenz96_drift(x, forcing)
        .iter()
        .zip(x)
        .map(|(f, xi)| xi + dt * f)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    Kink,
    Lorenz96,
}

impl std::str::FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kink" => Ok(SystemKind::Kink),
            "lorenz96" => Ok(SystemKind::Lorenz96),
            _ => Err(Error::Config(format!("unknown system `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSystem {
    pub kind: SystemKind,
    pub state_dim: usize,
    pub q_var: f64,
    pub r_var: f64,
    pub forcing: f64,
    pub dt: f64,
    pub burn_in: usize,
    pub steps: usize,
    pub seed: u64,
}

impl SyntheticSystem {
    pub fn kink(r_var: f64) -> Self {
        SyntheticSystem {
            kind: SystemKind::Kink,
            state_dim: 1,
            q_var: 0.05,
            r_var,
            forcing: 0.0,
            dt: 0.0,
            burn_in: 0,
            steps: 600,
            seed: 0,
        }
    }

    pub fn lorenz96(state_dim: usize) -> Self {
        SyntheticSystem {
            kind: SystemKind::Lorenz96,
            state_dim,
            q_var: 0.0,
            r_var: 4.0,
            forcing: 8.0,
            dt: 0.01,
            burn_in: 500,
            steps: 600,
            seed: 0,
        }
    }

    pub fn simulate(&self) -> Result<Dataset> {
        if self.q_var < 0.0 || self.r_var < 0.0 {
            return Err(Error::Config("noise variances must be non-negative".into()));
        }
        match self.kind {
            SystemKind::Kink => Ok(simulate_kink(self)),
            SystemKind::Lorenz96 => simulate_lorenz96(self),
        }
    }

    /// Applies the noise-free transition row by row.
    pub fn transition(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for r in 0..x.rows() {
            let next = match self.kind {
                SystemKind::Kink => vec![kink_f(x.get(r, 0))],
                SystemKind::Lorenz96 => lorenz96_step(x.row_slice(r), self.dt, self.forcing).expect("checked dimension"),
            };
            for (c, v) in next.into_iter().enumerate() {
                out.set(r, c, v);
            }
        }
        out
    }
}

/// Observations with optional true states, aligned by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `T×d_y`.
    pub ys: Tensor,
    /// `T×d_x` true states `x_{1:T}`.
    pub states: Option<Tensor>,
    /// True `x_0`, when known.
    pub initial_state: Option<Vec<f64>>,
    pub obs_names: Vec<String>,
    pub state_names: Vec<String>,
    /// Per-output statistics used to standardize `ys` (and `states`).
    pub stats: Option<Standardization>,
    /// Rows before this index form the training split.
    pub split: usize,
}

impl Dataset {
    pub fn new(ys: Tensor, states: Option<Tensor>) -> Self {
        let obs_names = (0..ys.cols()).map(|i| format!("y_{i}")).collect();
        let state_names = states
            .as_ref()
            .map(|s| (0..s.cols()).map(|i| format!("x_{i}")).collect())
            .unwrap_or_default();
        let split = ys.rows();
        Dataset {
            ys,
            states,
            initial_state: None,
            obs_names,
            state_names,
            stats: None,
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.ys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.rows() == 0
    }

    pub fn obs_dim(&self) -> usize {
        self.ys.cols()
    }

    pub fn train_ys(&self) -> Tensor {
        self.ys.slice_rows(0, self.split)
    }

    pub fn test_ys(&self) -> Tensor {
        self.ys.slice_rows(self.split, self.len())
    }

    /// Writes `t`, the observations and the states (if any) with a header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
        let mut header = vec!["t".to_string()];
        header.extend(self.obs_names.iter().cloned());
        header.extend(self.state_names.iter().cloned());
        w.write_record(&header).map_err(csv_io)?;
        for t in 0..self.len() {
            let mut row = vec![(t + 1).to_string()];
            row.extend(self.ys.row_slice(t).iter().map(|v| format!("{v:e}")));
            if let Some(s) = &self.states {
                row.extend(s.row_slice(t).iter().map(|v| format!("{v:e}")));
            }
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// `x_t = f(x_{t−1}) + N(0, σ_Q²)`, `y_t = x_t + N(0, σ_R²)`, `x_0 = 0.5`.
pub fn simulate_kink(sys: &SyntheticSystem) -> Dataset {
    let mut rng = stream(sys.seed, Stream::Data);
    let (sq, sr) = (sys.q_var.sqrt(), sys.r_var.sqrt());
    let mut x = 0.5;
    let mut xs = Vec::with_capacity(sys.steps);
    let mut ys = Vec::with_capacity(sys.steps);
    for _ in 0..sys.steps {
        x = kink_f(x) + sq * normal(&mut rng);
        xs.push(x);
        ys.push(x + sr * normal(&mut rng));
    }
    let mut ds = Dataset::new(Tensor::column(&ys), Some(Tensor::column(&xs)));
    ds.initial_state = Some(vec![0.5]);
    ds
}

/// Euler-integrated Lorenz-96 observed through `C = I` with noise `σ_R² I`.
/// The first `burn_in` steps are discarded.
pub fn simulate_lorenz96(sys: &SyntheticSystem) -> Result<Dataset> {
    let d = sys.state_dim;
    if d < 4 {
        return Err(Error::Contract(format!("lorenz96 needs at least 4 coordinates, got {d}")));
    }
    let mut rng = stream(sys.seed, Stream::Data);
    let mut x = vec![sys.forcing; d];
    x[0] += 0.01;
    let sq = sys.q_var.sqrt();
    let advance = |x: &[f64], rng: &mut Rng| -> Result<Vec<f64>> {
        let mut next = lorenz96_step(x, sys.dt, sys.forcing)?;
        if sq > 0.0 {
            for v in &mut next {
                *v += sq * normal(rng);
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "lorenz96 trajectory diverged with dt = {}; try a smaller step",
                sys.dt
            )));
        }
        Ok(next)
    };
    for _ in 0..sys.burn_in {
        x = advance(&x, &mut rng)?;
    }
    let x0 = x.clone();
    let sr = sys.r_var.sqrt();
    let mut states = Vec::with_capacity(sys.steps * d);
    let mut obs = Vec::with_capacity(sys.steps * d);
    for _ in 0..sys.steps {
        x = advance(&x, &mut rng)?;
        states.extend(&x);
        obs.extend(x.iter().map(|v| v + sr * normal(&mut rng)));
    }
    let mut ds = Dataset::new(
        Tensor::from_vec(sys.steps, d, obs)?,
        Some(Tensor::from_vec(sys.steps, d, states)?),
    );
    ds.initial_state = Some(x0);
    Ok(ds)
}

/// Linear-Gaussian system `x_t = A x_{t−1} + N(0, Q)`, `y_t = C x_t + N(0, R)`
/// with diagonal `Q`, `R` and `x_0 ~ N(m₀, P₀)` (diagonal `P₀`).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussian {
    pub a: Tensor,
    pub c: Tensor,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub m0: Vec<f64>,
    pub p0: Vec<f64>,
}

impl LinearGaussian {
    pub fn simulate(&self, steps: usize, seed: u64) -> Dataset {
        let mut rng = stream(seed, Stream::Data);
        let dx = self.a.rows();
        let mut x: Vec<f64> = self.m0.iter().zip(&self.p0).map(|(m, p)| m + p.sqrt() * normal(&mut rng)).collect();
        let x0 = x.clone();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..steps {
            let ax = Tensor::column(&x);
            let ax = self.a.matmul(&ax).expect("A is d_x×d_x");
            x = (0..dx).map(|i| ax.get(i, 0) + self.q[i].sqrt() * normal(&mut rng)).collect();
            let cx = self.c.matmul(&Tensor::column(&x)).expect("C is d_y×d_x");
            xs.extend(&x);
            ys.extend((0..self.c.rows()).map(|i| cx.get(i, 0) + self.r[i].sqrt() * normal(&mut rng)));
        }
        let mut ds = Dataset::new(
            Tensor::from_vec(steps, self.c.rows(), ys).expect("sized"),
            Some(Tensor::from_vec(steps, dx, xs).expect("sized")),
        );
        ds.initial_state = Some(x0);
        ds
    }

    /// `X Aᵀ` row by row.
    pub fn transition(&self, x: &Tensor) -> Tensor {
        x.matmul(&self.a.transpose()).expect("members are N×d_x")
    }
}

/// Reads a numeric CSV with a header. Columns named `x_*` hold true states;
/// every other column (except a leading `t`) is an observation.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path).map_err(csv_io)?;
    let header: Vec<String> = reader.headers().map_err(csv_io)?.iter().map(|s| s.trim().to_string()).collect();
    let mut obs_cols = Vec::new();
    let mut state_cols = Vec::new();
    for (i, h) in header.iter().enumerate() {
        if h.starts_with("x_") {
            state_cols.push(i);
        } else if !(i == 0 && h == "t") {
            obs_cols.push(i);
        }
    }
    if obs_cols.is_empty() {
        return Err(Error::Csv {
            row: 1,
            column: 1,
            message: "no observation columns".into(),
        });
    }
    let mut ys = Vec::new();
    let mut xs = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            row: r + 2,
            column: 0,
            message: e.to_string(),
        })?;
        let cell = |c: usize| -> Result<f64> {
            let raw = record.get(c).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|_| Error::Csv {
                row: r + 2,
                column: c + 1,
                message: format!("non-numeric value `{raw}`"),
            })
        };
        for &c in &obs_cols {
            ys.push(cell(c)?);
        }
        for &c in &state_cols {
            xs.push(cell(c)?);
        }
        rows += 1;
    }
    let states = (!state_cols.is_empty()).then(|| Tensor::from_vec(rows, state_cols.len(), xs)).transpose()?;
    let mut ds = Dataset::new(Tensor::from_vec(rows, obs_cols.len(), ys)?, states);
    ds.obs_names = obs_cols.iter().map(|&c| header[c].clone()).collect();
    ds.state_names = state_cols.iter().map(|&c| header[c].clone()).collect();
    Ok(ds)
}

/// Per-dimension affine map `z = (v − mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Statistics of the rows of `data`; a dimension with zero spread keeps
    /// unit scale.
    pub fn fit(data: &Tensor) -> Self {
        let (n, d) = (data.rows() as f64, data.cols());
        let mut mean = vec![0.0; d];
        let mut std = vec![1.0; d];
        for c in 0..d {
            let m = (0..data.rows()).map(|r| data.get(r, c)).sum::<f64>() / n;
            let v = (0..data.rows()).map(|r| (data.get(r, c) - m).powi(2)).sum::<f64>() / n;
            mean[c] = m;
            if v.sqrt() > 1e-12 {
                std[c] = v.sqrt();
            } else {
                log::warn!("dimension {c} has zero training spread; left unscaled");
            }
        }
        Standardization { mean, std }
    }

    pub fn apply(&self, data: &Tensor) -> Tensor {
        Tensor::from_fn(data.rows(), data.cols(), |r, c| (data.get(r, c) - self.mean[c]) / self.std[c])
    }

    pub fn invert(&self, data: &Tensor) -> Tensor {
        Tensor::from_fn(data.rows(), data.cols(), |r, c| data.get(r, c) * self.std[c] + self.mean[c])
    }
}

/// Marks the first `fraction` of rows as training data and z-scores the
/// observations with training statistics. States share the observation
/// statistics when the dimensions agree.
pub fn split_standardize(ds: &Dataset, fraction: f64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("split fraction must lie in (0, 1], got {fraction}")));
    }
    let split = ((ds.len() as f64) * fraction).round() as usize;
    if split == 0 {
        return Err(Error::Config("training split is empty".into()));
    }
    let stats = Standardization::fit(&ds.ys.slice_rows(0, split));
    let mut out = ds.clone();
    out.ys = stats.apply(&ds.ys);
    if let Some(s) = &ds.states {
        if s.cols() == ds.obs_dim() {
            out.states = Some(stats.apply(s));
            out.initial_state = ds
                .initial_state
                .as_ref()
                .map(|x0| x0.iter().enumerate().map(|(i, v)| (v - stats.mean[i]) / stats.std[i]).collect());
        }
    }
    out.stats = Some(stats);
    out.split = split;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kink_at_zero() {
        assert!((kink_f(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kink_discontinuity_just_above_zero() {
        let above = kink_f(1e-12);
        assert!((above - 0.25).abs() < 1e-9);
    }

    #[test]
    fn oscillation_bounded_on_left() {
        for i in 0..1000 {
            let x = -10.0 + i as f64 * 0.01;
            let kink = 0.8 + (x + 0.2) * (1.0 - 5.0 / (1.0 + (-2.0 * x).exp()));
            assert!((kink_f(x) - kink).abs() <= 0.5 + 1e-15);
        }
    }

    #[test]
    fn noiseless_kink_iterates() {
        let mut sys = SyntheticSystem::kink(0.0);
        sys.q_var = 0.0;
        sys.steps = 20;
        let ds = sys.simulate().unwrap();
        let mut x = 0.5;
        for t in 0..20 {
            x = kink_f(x);
            assert_eq!(ds.ys.get(t, 0), x);
            assert_eq!(ds.states.as_ref().unwrap().get(t, 0), x);
        }
    }

    #[test]
    fn simulation_is_seeded() {
        let sys = SyntheticSystem::kink(0.008);
        assert_eq!(sys.simulate().unwrap(), sys.simulate().unwrap());
        let mut other = sys.clone();
        other.seed = 1;
        assert_ne!(sys.simulate().unwrap(), other.simulate().unwrap());
    }

    #[test]
    fn lorenz_fixed_point_and_zero_step() {
        let x = vec![8.0; 6];
        assert_eq!(lorenz96_step(&x, 0.01, 8.0).unwrap(), x);
        let y = vec![0.3, -1.0, 2.0, 4.0, 0.5];
        assert_eq!(lorenz96_step(&y, 0.0, 8.0).unwrap(), y);
        assert!(matches!(lorenz96_step(&[1.0, 2.0, 3.0], 0.01, 8.0), Err(Error::Contract(_))));
    }

    #[test]
    fn lorenz_hand_step() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let dt = 0.1;
        let expected = [
            1.0 + dt * ((x[1] - x[2]) * x[3] - x[0] + 8.0),
            2.0 + dt * ((x[2] - x[3]) * x[0] - x[1] + 8.0),
            3.0 + dt * ((x[3] - x[0]) * x[1] - x[2] + 8.0),
            4.0 + dt * ((x[0] - x[1]) * x[2] - x[3] + 8.0),
        ];
        let got = lorenz96_step(&x, dt, 8.0).unwrap();
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn lorenz_zero_forcing_stays_at_zero() {
        let mut sys = SyntheticSystem::lorenz96(5);
        sys.forcing = 0.0;
        sys.r_var = 0.0;
        sys.steps = 50;
        let ds = sys.simulate().unwrap();
        // The perturbation on the first coordinate decays without forcing.
        let max = ds.states.unwrap().max_abs();
        assert!(max < 0.01);
    }

    #[test]
    fn standardization_properties() {
        let data = Tensor::from_rows(&[vec![1.0, 3.0], vec![2.0, 3.0], vec![4.0, 3.0], vec![7.0, 3.0]]).unwrap();
        let ds = Dataset::new(data.clone(), None);
        let out = split_standardize(&ds, 1.0).unwrap();
        let z = &out.ys;
        let mean: f64 = (0..4).map(|r| z.get(r, 0)).sum::<f64>() / 4.0;
        let var: f64 = (0..4).map(|r| z.get(r, 0).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-10 && (var - 1.0).abs() < 1e-10);
        assert!((0..4).all(|r| z.get(r, 1) == 0.0));
        let back = out.stats.unwrap().invert(z);
        assert!(back.zip_map(&data, |a, b| (a - b).abs()).max_abs() < 1e-12);
    }
}
