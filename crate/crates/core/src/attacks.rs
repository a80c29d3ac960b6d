// SPDX-License-Identifier: MIT OR Apache-2.0

//! L∞ sign-gradient attacks (FGSM and PGD) against the cross-entropy loss.
//!
//! `sign(0)` is taken to be 0, so coordinates with a vanishing gradient are
//! left untouched. No clipping beyond the ε-ball is applied.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{loss_and_grad, Dataset, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Pgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub epsilon: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
}

impl AttackSpec {
    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            kind: AttackKind::Fgsm,
            epsilon,
            alpha: 0.0,
            steps: 0,
            seed: 0,
        }
    }

    pub fn pgd(epsilon: f64, alpha: f64, steps: usize) -> Self {
        Self {
            kind: AttackKind::Pgd,
            epsilon,
            alpha,
            steps,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() {
            return Err(Error::invalid("epsilon must be finite"));
        }
        if self.kind == AttackKind::Pgd {
            if self.epsilon < 0.0 {
                return Err(Error::invalid("pgd epsilon must be non-negative"));
            }
            if self.steps > 0 && !(self.alpha > 0.0 && self.alpha.is_finite()) {
                return Err(Error::invalid("pgd step size must be positive"));
            }
        }
        Ok(())
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn input_gradient(net: &Network, x: &[f64], label: usize) -> Result<Vec<f64>> {
    let g = loss_and_grad(net, x, label)?.input_grad;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow("input gradient is not finite".into()));
    }
    Ok(g)
}

/// `x + ε · sign(∇ₓ loss)`.
pub fn fgsm(net: &Network, x: &[f64], label: usize, epsilon: f64) -> Result<Vec<f64>> {
    if !epsilon.is_finite() {
        return Err(Error::invalid("epsilon must be finite"));
    }
    let g = input_gradient(net, x, label)?;
    Ok(x.iter().zip(&g).map(|(xi, gi)| xi + epsilon * sign(*gi)).collect())
}

/// Iterated FGSM with step `alpha`, projected back onto `x ± epsilon` after every step.
pub fn pgd(net: &Network, x: &[f64], label: usize, spec: &AttackSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let eps = spec.epsilon;
    let mut adv = x.to_vec();
    for _ in 0..spec.steps {
        let g = input_gradient(net, &adv, label)?;
        for ((a, g), x0) in adv.iter_mut().zip(&g).zip(x) {
            *a = (*a + spec.alpha * sign(*g)).clamp(x0 - eps, x0 + eps);
        }
    }
    Ok(adv)
}

pub fn attack(net: &Network, x: &[f64], label: usize, spec: &AttackSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    match spec.kind {
        AttackKind::Fgsm => fgsm(net, x, label, spec.epsilon),
        AttackKind::Pgd => pgd(net, x, label, spec),
    }
}

/// Attacks every row of `data` against its own label. The result carries the
/// spec as provenance.
pub fn attack_dataset(net: &Network, data: &Dataset, spec: &AttackSpec) -> Result<Dataset> {
    let inputs = data
        .inputs()
        .iter()
        .zip(data.labels())
        .map(|(x, &y)| attack(net, x, y, spec))
        .collect::<Result<Vec<_>>>()?;
    let provenance = serde_json::json!({ "attack": spec, "source": data.name() });
    Ok(Dataset::new(format!("{}/adv", data.name()), data.seed(), inputs, data.labels().to_vec())?
        .with_provenance(provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::netcore::{Activation, Layer};

    fn net() -> Network {
        Network::random(3, &[(6, Activation::Tanh), (2, Activation::Identity)], 5).unwrap()
    }

    #[test]
    fn zero_budget_is_identity() {
        let x = [0.2, -0.4, 1.0];
        assert_eq!(fgsm(&net(), &x, 1, 0.0).unwrap(), x.to_vec());
        assert_eq!(pgd(&net(), &x, 1, &AttackSpec::pgd(0.3, 0.05, 0)).unwrap(), x.to_vec());
    }

    #[test]
    fn constant_network_leaves_input_unchanged() {
        let first = Layer::new(Matrix::zeros(2, 3), vec![0.3, -0.3], Activation::Relu).unwrap();
        let second = Layer::new(Matrix::identity(2), vec![0.0, 0.0], Activation::Identity).unwrap();
        let net = Network::new(3, vec![first, second]).unwrap();
        let x = [1.0, 2.0, 3.0];
        assert_eq!(fgsm(&net, &x, 0, 0.5).unwrap(), x.to_vec());
    }

    #[test]
    fn negative_epsilon_reflects_perturbation() {
        let x = [0.5, 0.1, -0.9];
        let up = fgsm(&net(), &x, 0, 0.2).unwrap();
        let down = fgsm(&net(), &x, 0, -0.2).unwrap();
        for i in 0..3 {
            assert!(((up[i] - x[i]) + (down[i] - x[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn pgd_respects_budget() {
        let x = [0.5, 0.1, -0.9];
        let adv = pgd(&net(), &x, 1, &AttackSpec::pgd(0.1, 0.07, 10)).unwrap();
        for (a, b) in adv.iter().zip(&x) {
            assert!((a - b).abs() <= 0.1);
        }
    }

    #[test]
    fn attacked_dataset_records_provenance() {
        let ds = Dataset::new("clean", 3, vec![vec![0.0, 0.0, 1.0]], vec![1]).unwrap();
        let adv = attack_dataset(&net(), &ds, &AttackSpec::fgsm(0.3)).unwrap();
        assert_eq!(adv.provenance().unwrap()["attack"]["kind"], "fgsm");
        assert_eq!(adv.labels(), ds.labels());
    }
}
