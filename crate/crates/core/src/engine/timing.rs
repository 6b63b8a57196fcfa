use super::EngineError;

/// Digital deadline plus the fidelity floor that defines the quantum budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingBudget {
    pub t_d: f64,
    pub f_min: f64,
    pub reliability_target: f64,
}

impl TimingBudget {
    pub fn new(t_d: f64, f_min: f64, reliability_target: f64) -> Result<Self, EngineError> {
        if !(t_d > 0.0) {
            return Err(EngineError::Budget(format!("deadline must be positive, got {t_d}")));
        }
        if !(f_min > 0.25 && f_min <= 1.0) {
            return Err(EngineError::Budget(format!("fidelity floor {f_min} outside (0.25, 1]")));
        }
        if !(reliability_target > 0.0 && reliability_target <= 1.0) {
            return Err(EngineError::Budget(format!("reliability target {reliability_target} outside (0, 1]")));
        }
        Ok(Self { t_d, f_min, reliability_target })
    }
}

/// One sample of the two opposing curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingPoint {
    pub t: f64,
    /// Empirical `P(latency <= t)`.
    pub p_latency: f64,
    /// Probability the resource is still coherent at `t`.
    pub survival: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingEval {
    /// `P(latency <= t_d and coherent until the task completes)`.
    pub joint: f64,
    pub p_latency: f64,
    pub p_coherent: f64,
    pub meets_target: bool,
    pub curve: Vec<TimingPoint>,
}

const CURVE_POINTS: usize = 64;

/// Joint success of a task whose latency is drawn from `latency_samples` and
/// whose resource must survive until the task completes.
pub fn eval_timing<S>(latency_samples: &[f64], survival: S, budget: &TimingBudget) -> Result<TimingEval, EngineError>
where
    S: Fn(f64) -> f64,
{
    if latency_samples.is_empty() {
        return Err(EngineError::Budget("no latency samples".into()));
    }
    if latency_samples.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(EngineError::Budget("latency samples must be finite and nonnegative".into()));
    }
    let n = latency_samples.len() as f64;
    let s = |t: f64| survival(t).clamp(0.0, 1.0);
    let mut joint = 0.0;
    let mut on_time = 0usize;
    let mut coherent = 0.0;
    for &l in latency_samples {
        let sl = s(l);
        coherent += sl;
        if l <= budget.t_d {
            on_time += 1;
            joint += sl;
        }
    }

    let mut sorted = latency_samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let max_l = sorted[sorted.len() - 1];
    let span = if budget.t_d.is_finite() { max_l.max(budget.t_d) } else { max_l };
    let curve = (0..CURVE_POINTS)
        .map(|i| {
            let t = span * i as f64 / (CURVE_POINTS - 1) as f64;
            let below = sorted.partition_point(|&x| x <= t);
            TimingPoint { t, p_latency: below as f64 / n, survival: s(t) }
        })
        .collect();

    let joint = joint / n;
    Ok(TimingEval {
        joint,
        p_latency: on_time as f64 / n,
        p_coherent: coherent / n,
        meets_target: joint >= budget.reliability_target,
        curve,
    })
}
