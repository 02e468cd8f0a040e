use serde::{Deserialize, Serialize};

/// Compactly supported symmetric kernels on `[-1, 1]`, each integrating to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Epanechnikov,
    Quartic,
    Triweight,
}

impl Kernel {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        if !(u.abs() < 1.0) {
            return 0.0;
        }
        let s = 1.0 - u * u;
        match self {
            Kernel::Epanechnikov => 0.75 * s,
            Kernel::Quartic => 0.9375 * s * s,
            Kernel::Triweight => 1.09375 * s * s * s,
        }
    }

    /// `K_h(d) = K(d / h) / h`.
    #[inline]
    pub fn scaled(self, d: f64, h: f64) -> f64 {
        self.eval(d / h) / h
    }
}

impl std::str::FromStr for Kernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            "quartic" | "biweight" => Ok(Kernel::Quartic),
            "triweight" => Ok(Kernel::Triweight),
            other => Err(format!("unknown kernel `{other}`")),
        }
    }
}
