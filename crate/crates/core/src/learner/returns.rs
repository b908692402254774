use super::LearnerError;

/// Truncated λ-returns for one episode.
///
/// `rewards[t]` is the combined reward of transition `t` and `bootstrap[t]`
/// is `max_a Q_tot(s_{t+1}, a)` under the target parameters. The n-step
/// returns are mixed with weights `(1 - λ) λ^(n-1)` and the longest one
/// available takes the remaining mass `λ^(T-t-1)`. When `terminal` is set the
/// longest return does not bootstrap, so `bootstrap[T-1]` is never read.
///
/// Evaluated with the backward recursion
/// `G_t = r_t + γ ((1 - λ) B_t + λ G_{t+1})`.
pub fn lambda_returns(
    rewards: &[f64],
    bootstrap: &[f64],
    gamma: f64,
    lambda: f64,
    terminal: bool,
) -> Result<Vec<f64>, LearnerError> {
    let len = rewards.len();
    if len == 0 {
        return Err(LearnerError::EmptyEpisode);
    }
    if bootstrap.len() != len {
        return Err(LearnerError::Misaligned { rewards: len, bootstrap: bootstrap.len() });
    }
    if rewards.iter().chain(&bootstrap[..len - 1]).any(|v| !v.is_finite())
        || (!terminal && !bootstrap[len - 1].is_finite())
    {
        return Err(LearnerError::NonFiniteInput);
    }
    let mut out = vec![0.0; len];
    let last = len - 1;
    out[last] = rewards[last] + if terminal { 0.0 } else { gamma * bootstrap[last] };
    for t in (0..last).rev() {
        out[t] = rewards[t] + gamma * ((1.0 - lambda) * bootstrap[t] + lambda * out[t + 1]);
    }
    Ok(out)
}
