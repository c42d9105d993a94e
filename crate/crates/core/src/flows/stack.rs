use std::fmt;
use std::str::FromStr;

use super::coupling::{coupling_forward, split, squash_scale, CouplingParams, Parity};
use super::planar::{planar_forward, PlanarParams};
use super::sylvester::{sylvester_forward, SylvesterParams};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FlowKind {
    Planar,
    Sylvester,
    Coupling,
}

impl fmt::Display for FlowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlowKind::Planar => "planar",
            FlowKind::Sylvester => "sylvester",
            FlowKind::Coupling => "coupling",
        })
    }
}

impl FromStr for FlowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "planar" => Ok(FlowKind::Planar),
            "sylvester" => Ok(FlowKind::Sylvester),
            "coupling" => Ok(FlowKind::Coupling),
            other => Err(Error::Config(format!("unknown flow kind {other:?}"))),
        }
    }
}

/// Coupling layer whose scale and shift are computed from the identity half
/// and a fixed context: `[s_raw; t] = [z_id; context]·W + bias`.
#[derive(Clone, Debug)]
pub struct CouplingNet {
    /// `[D/2 + C, D]`
    pub weight: Tensor,
    /// `[D]`
    pub bias: Tensor,
    /// `[.., C]`, one row per latent vector.
    pub context: Tensor,
    pub parity: Parity,
}

impl CouplingNet {
    pub fn params(&self, z: &Tensor) -> Result<CouplingParams> {
        let (keep, _) = split(z, self.parity)?;
        let half = *keep.shape().last().unwrap();
        let input = Tensor::cat_last(&[keep, self.context.clone()])?;
        let raw = input.matmul_rows(&self.weight)?.add(&self.bias)?;
        Ok(CouplingParams {
            s: squash_scale(&raw.narrow_last(0, half)?),
            t: raw.narrow_last(half, half)?,
            parity: self.parity,
        })
    }
}

/// One invertible transform in a stack.
#[derive(Clone, Debug)]
pub enum FlowStep {
    Planar(PlanarParams),
    Sylvester(SylvesterParams),
    Coupling(CouplingParams),
    ConditionedCoupling(CouplingNet),
}

impl FlowStep {
    pub fn kind(&self) -> FlowKind {
        match self {
            FlowStep::Planar(_) => FlowKind::Planar,
            FlowStep::Sylvester(_) => FlowKind::Sylvester,
            FlowStep::Coupling(_) | FlowStep::ConditionedCoupling(_) => FlowKind::Coupling,
        }
    }

    /// Transformed vector and `log|det ∂f/∂z|`.
    pub fn forward(&self, z: &Tensor) -> Result<(Tensor, Tensor)> {
        match self {
            FlowStep::Planar(p) => planar_forward(z, p),
            FlowStep::Sylvester(p) => sylvester_forward(z, p),
            FlowStep::Coupling(p) => coupling_forward(z, p),
            FlowStep::ConditionedCoupling(net) => coupling_forward(z, &net.params(z)?),
        }
    }
}

/// `K` transforms applied in order, `z_K = f_K(… f_1(z_0))`.
#[derive(Clone, Debug)]
pub struct FlowStack {
    pub kind: Option<FlowKind>,
    pub steps: Vec<FlowStep>,
}

impl FlowStack {
    /// `K = 0`: the base Gaussian is the whole posterior.
    pub fn empty() -> Self {
        Self { kind: None, steps: Vec::new() }
    }

    pub fn new(steps: Vec<FlowStep>) -> Result<Self> {
        let kind = steps.first().map(FlowStep::kind);
        if steps.iter().any(|s| Some(s.kind()) != kind) {
            return Err(Error::Config("a flow stack holds a single flow family".into()));
        }
        Ok(Self { kind, steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `z_K` and the summed log-determinants along the path.
    pub fn transform(&self, z0: &Tensor) -> Result<(Tensor, Tensor)> {
        let lead = &z0.shape()[..z0.rank().saturating_sub(1)];
        let mut total = Tensor::zeros(lead);
        let mut z = z0.clone();
        for step in &self.steps {
            let (next, log_det) = step.forward(&z)?;
            total = total.add(&log_det)?;
            z = next;
        }
        Ok((z, total))
    }
}

/// One reparameterised posterior sample pushed through a flow stack.
#[derive(Clone, Debug)]
pub struct LatentDraw {
    pub z0: Tensor,
    pub z_k: Tensor,
    /// `log q0(z0) - Σₖ log|det ∂fₖ/∂z_{k-1}|`, per latent vector.
    pub log_q: Tensor,
}

/// Push `z0` (with base log-density `log_q0`) through `stack`.
pub fn stack_forward(z0: &Tensor, log_q0: &Tensor, stack: &FlowStack) -> Result<LatentDraw> {
    let (z_k, log_det) = stack.transform(z0)?;
    let log_q = log_q0.sub(&log_det)?;
    Ok(LatentDraw {
        z0: z0.clone(),
        z_k,
        log_q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn planar(u: &[f64], w: &[f64], b: f64) -> FlowStep {
        FlowStep::Planar(PlanarParams::new(Tensor::vector(u), Tensor::vector(w), Tensor::scalar(b)).unwrap())
    }

    #[test]
    fn empty_stack_is_the_base() {
        let z0 = Tensor::vector(&[0.2, -0.7]);
        let lq = Tensor::scalar(-1.5);
        let draw = stack_forward(&z0, &lq, &FlowStack::empty()).unwrap();
        assert_eq!(draw.z_k.values(), z0.values());
        assert_eq!(draw.log_q.item(), -1.5);
    }

    #[test]
    fn four_planar_steps_match_sequential_application() {
        let steps = vec![
            planar(&[0.5, -0.3], &[1.0, 0.2], 0.1),
            planar(&[-0.8, 0.4], &[0.3, -1.1], -0.2),
            planar(&[1.2, 0.9], &[-0.5, 0.5], 0.4),
            planar(&[0.1, -1.4], &[0.9, 0.7], 0.0),
        ];
        let stack = FlowStack::new(steps.clone()).unwrap();
        let z0 = Tensor::vector(&[0.4, -0.6]);
        let lq0 = Tensor::scalar(-2.0);
        let draw = stack_forward(&z0, &lq0, &stack).unwrap();

        let mut z = z0.clone();
        let mut lq = -2.0;
        for s in &steps {
            let (zn, ld) = s.forward(&z).unwrap();
            lq -= ld.item();
            z = zn;
        }
        assert_eq!(draw.z_k.values(), z.values());
        assert_abs_diff_eq!(draw.log_q.item(), lq, epsilon = 1e-14);
    }

    #[test]
    fn mixed_families_are_rejected() {
        let c = FlowStep::Coupling(CouplingParams {
            s: Tensor::zeros(&[1]),
            t: Tensor::zeros(&[1]),
            parity: Parity::FirstIdentity,
        });
        assert!(FlowStack::new(vec![planar(&[0.0, 0.0], &[1.0, 0.0], 0.0), c]).is_err());
    }

    #[test]
    fn flow_kind_round_trips_through_text() {
        for k in [FlowKind::Planar, FlowKind::Sylvester, FlowKind::Coupling] {
            assert_eq!(k.to_string().parse::<FlowKind>().unwrap(), k);
        }
        assert!("maf".parse::<FlowKind>().is_err());
    }
}
