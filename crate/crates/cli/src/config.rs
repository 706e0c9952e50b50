//! `key = value` run configuration with command-line overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use quattro_core::cost::CostModel;
use quattro_core::dynamics::{CartPole, Quadrotor, SystemModel};
use quattro_core::quattro::with_lqr_terminal;

use crate::UsageError;

pub const KEYS: &[&str] = &[
    "system",
    "controller",
    "horizon",
    "control_interval",
    "split",
    "weights",
    "q",
    "r",
    "qf_scale",
    "sim_seconds",
    "x0",
    "seed",
    "trace",
    "sampling",
    "count",
    "out",
    "data",
    "report",
    "oracle",
    "repetitions",
    "sweep",
    "blend_low",
    "blend_high",
    "max_iters",
    "tolerance",
];

/// Values read from a config file, keyed by option name.
#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                UsageError(format!("config line {}: expected key = value", n + 1))
            })?;
            let key = key.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(UsageError(format!(
                    "config line {}: unknown key {key:?}",
                    n + 1
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    /// Command-line value if given, else the file value, parsed.
    pub fn pick<T: FromStr>(&self, cli: Option<T>, key: &str) -> Result<Option<T>, UsageError>
    where
        T::Err: std::fmt::Display,
    {
        if cli.is_some() {
            return Ok(cli);
        }
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| UsageError(format!("invalid value for {key}: {e}")))
            })
            .transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    CartPole,
    Quadrotor,
}

impl FromStr for SystemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cartpole" => Ok(Self::CartPole),
            "quadrotor" => Ok(Self::Quadrotor),
            other => Err(format!("unknown system {other:?} (cartpole | quadrotor)")),
        }
    }
}

/// Terminal weight: a multiple of `Q` or the LQR cost-to-go matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerminalWeight {
    Scale(f64),
    Lqr,
}

impl FromStr for TerminalWeight {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "lqr" {
            return Ok(Self::Lqr);
        }
        s.parse::<f64>()
            .map(Self::Scale)
            .map_err(|_| format!("expected a number or \"lqr\", got {s:?}"))
    }
}

/// Comma-separated floats.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

impl FromStr for FloatList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("bad number {:?}", p.trim()))
            })
            .collect::<Result<_, _>>()
            .map(FloatList)
    }
}

/// Comma-separated counts.
#[derive(Debug, Clone, PartialEq)]
pub struct UsizeList(pub Vec<usize>);

impl FromStr for UsizeList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| format!("bad count {:?}", p.trim()))
            })
            .collect::<Result<_, _>>()
            .map(UsizeList)
    }
}

/// A plant model plus its default cost and start state.
pub enum Plant {
    CartPole(CartPole<f64>),
    Quadrotor(Quadrotor<f64>),
}

impl Plant {
    pub fn new(kind: SystemKind) -> Self {
        match kind {
            SystemKind::CartPole => Self::CartPole(CartPole::default()),
            SystemKind::Quadrotor => Self::Quadrotor(Quadrotor::default()),
        }
    }

    pub fn model(&self) -> &dyn SystemModel<f64> {
        match self {
            Self::CartPole(m) => m,
            Self::Quadrotor(m) => m,
        }
    }

    pub fn default_cost(&self) -> CostModel<f64> {
        match self {
            Self::CartPole(_) => CostModel::cartpole_default(),
            Self::Quadrotor(m) => CostModel::quadrotor_default(m.hover_thrust()),
        }
    }

    pub fn default_x0(&self) -> DVector<f64> {
        match self {
            Self::CartPole(_) => DVector::from_vec(vec![0.3, 0.3, 0.0, 0.0]),
            Self::Quadrotor(_) => {
                let mut x = DVector::zeros(12);
                x.rows_mut(0, 6)
                    .copy_from_slice(&[0.2, -0.2, 0.3, 0.1, -0.1, 0.2]);
                x
            }
        }
    }

    /// Default cost with the `q`, `r` and `qf_scale` overrides applied.
    pub fn cost(
        &self,
        q: Option<FloatList>,
        r: Option<FloatList>,
        terminal: Option<TerminalWeight>,
    ) -> Result<CostModel<f64>, UsageError> {
        let base = self.default_cost();
        let usage = |e: quattro_core::Error| UsageError(e.to_string());
        let q_diag = match q {
            Some(FloatList(v)) => v,
            None => base.q().diagonal().iter().copied().collect(),
        };
        let r_diag = match r {
            Some(FloatList(v)) => v,
            None => base.r().diagonal().iter().copied().collect(),
        };
        let (n_x, n_u) = (self.model().state_dim(), self.model().control_dim());
        if q_diag.len() != n_x || r_diag.len() != n_u {
            return Err(UsageError(format!(
                "q needs {n_x} entries and r needs {n_u}, got {} and {}",
                q_diag.len(),
                r_diag.len()
            )));
        }
        let x_ref = base.x_ref(0).clone();
        let u_ref = base.u_ref().clone();
        match terminal.unwrap_or(TerminalWeight::Scale(10.0)) {
            TerminalWeight::Scale(s) => {
                CostModel::diagonal(&q_diag, &r_diag, s, x_ref, u_ref).map_err(usage)
            }
            TerminalWeight::Lqr => {
                let cost =
                    CostModel::diagonal(&q_diag, &r_diag, 1.0, x_ref, u_ref).map_err(usage)?;
                with_lqr_terminal(self.model(), &cost).map_err(usage)
            }
        }
    }
}

/// Number of plant steps covering `seconds`.
pub fn steps_for(seconds: f64, dt: f64) -> Result<usize, UsageError> {
    if !(seconds >= 0.0 && seconds.is_finite()) {
        return Err(UsageError(format!(
            "simulation length must be non-negative, got {seconds}"
        )));
    }
    Ok((seconds / dt).round() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_rejects_unknown_keys() {
        let cfg =
            FileConfig::parse("# run\nsystem = cartpole\nsim-seconds = 2.5 # short\n\n").unwrap();
        assert_eq!(
            cfg.pick::<SystemKind>(None, "system").unwrap(),
            Some(SystemKind::CartPole)
        );
        assert_eq!(cfg.pick::<f64>(None, "sim_seconds").unwrap(), Some(2.5));
        assert_eq!(cfg.pick(Some(1.0), "sim_seconds").unwrap(), Some(1.0));
        assert!(FileConfig::parse("colour = red").is_err());
        assert!(FileConfig::parse("system cartpole").is_err());
        assert!(cfg.pick::<usize>(None, "sim_seconds").is_err());
    }

    #[test]
    fn step_count_rounds() {
        assert_eq!(steps_for(15.0, 0.01).unwrap(), 1500);
        assert_eq!(steps_for(0.0, 0.01).unwrap(), 0);
        assert!(steps_for(-1.0, 0.01).is_err());
    }

    #[test]
    fn cost_overrides() {
        let plant = Plant::new(SystemKind::CartPole);
        let cost = plant
            .cost(
                Some("1,2,3,4".parse().unwrap()),
                None,
                Some(TerminalWeight::Scale(2.0)),
            )
            .unwrap();
        assert_eq!(cost.qf()[(3, 3)], 8.0);
        assert!(plant
            .cost(Some("1,2".parse().unwrap()), None, None)
            .is_err());
        assert!(
            plant
                .cost(None, None, Some(TerminalWeight::Lqr))
                .unwrap()
                .qf()[(1, 1)]
                > 100.0
        );
    }
}
