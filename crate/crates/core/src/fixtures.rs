//! Small games shared by unit tests.

use crate::model::*;

fn player(dim: usize, dwell: DwellBounds) -> PlayerSpec {
    PlayerSpec {
        dwell_bounds: dwell,
        param_box: BoxBounds::symmetric(dim, 1.0),
        control_law: ControlLaw::Constant,
        running_cost: RunningCost::Zero,
        running_cost_bound: 1.0,
        trigger_cost: TriggerCost::Constant { value: 0.0 },
    }
}

/// Scalar state, no dynamics, no costs.
pub fn scalar_zero() -> GameSpec {
    let p = player(1, DwellBounds::new(0.1, 1.0));
    GameSpec {
        state_box: BoxBounds::symmetric(1, 1.0),
        drift: Drift::Zero,
        jump_intensity: JumpIntensity::Zero,
        jump_rate_bound: 0.0,
        jump_kernel: JumpKernel::Identity,
        discount: 0.5,
        players: [p.clone(), p],
        trigger_cost_timing: TriggerCostTiming::AtDecision,
    }
}

/// Relative double integrator with `axes` axes, no costs.
pub fn double_integrator(axes: usize) -> GameSpec {
    let p = player(axes, DwellBounds::new(0.1, 1.0));
    GameSpec {
        state_box: BoxBounds::symmetric(2 * axes, 10.0),
        drift: Drift::DoubleIntegratorRelative { axes },
        jump_intensity: JumpIntensity::Zero,
        jump_rate_bound: 0.0,
        jump_kernel: JumpKernel::Identity,
        discount: 0.5,
        players: [p.clone(), p],
        trigger_cost_timing: TriggerCostTiming::AtDecision,
    }
}
