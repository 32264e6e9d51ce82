use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// An l_p norm with p in {1, 2, inf}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    #[default]
    L2,
    Linf,
}

impl Norm {
    pub fn eval(self, v: &[f64]) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|a| a.abs()).sum(),
            Norm::L2 => v.iter().map(|a| a * a).sum::<f64>().sqrt(),
            Norm::Linf => v.iter().fold(0.0, |m, a| m.max(a.abs())),
        }
    }

    pub fn of(self, v: &DVector<f64>) -> f64 {
        self.eval(v.as_slice())
    }

    /// The dual norm q with 1/p + 1/q = 1.
    pub fn dual(self) -> Norm {
        match self {
            Norm::L1 => Norm::Linf,
            Norm::L2 => Norm::L2,
            Norm::Linf => Norm::L1,
        }
    }

    /// A vector `d` with `self(d) == radius` maximizing `g·d`, so that
    /// `g·d == radius * self.dual()(g)`. Returns zero for `g == 0`.
    pub fn steepest_direction(self, g: &DVector<f64>, radius: f64) -> DVector<f64> {
        let n = g.len();
        match self {
            Norm::L2 => {
                let nrm = g.norm();
                if nrm == 0.0 {
                    DVector::zeros(n)
                } else {
                    g * (radius / nrm)
                }
            }
            Norm::L1 => {
                let mut d = DVector::zeros(n);
                if let Some((j, v)) = g
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                {
                    if *v != 0.0 {
                        d[j] = radius * v.signum();
                    }
                }
                d
            }
            Norm::Linf => g.map(|v| if v == 0.0 { 0.0 } else { radius * v.signum() }),
        }
    }

    pub fn parse(s: &str) -> Option<Norm> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "1" => Some(Norm::L1),
            "l2" | "2" => Some(Norm::L2),
            "linf" | "inf" | "infinity" => Some(Norm::Linf),
            _ => None,
        }
    }
}
