use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Per-row squared distance `Σ_j (a − b)²` as `[R, 1]`.
fn row_sq_dist(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let sq = tape.mul(d, d)?;
    let w = tape.value(sq).last_dim();
    let ones = tape.constant(Tensor::ones(&[w, 1]));
    tape.matmul(sq, ones)
}

/// Best-of-K reconstruction loss on stacked samples.
///
/// `samples` is `[k·N, D]` with row `s·N + i` holding sample `s` of agent
/// `i`, and `truth` is `[N, D]`. Returns `Σ_i min_s ‖truth_i − sample_{s,i}‖²`;
/// only the closest sample of each agent receives gradient. Ties go to the
/// lowest sample index. Also returns the chosen sample per agent.
pub fn autoencode_stacked(tape: &mut Tape, truth: &Tensor, samples: Var, k: usize) -> Result<(Var, Vec<usize>)> {
    let n = truth.shape().first().copied().unwrap_or(0);
    if k == 0 || n == 0 {
        return Err(Error::Invalid("auto-encoding loss needs at least one sample and one agent".into()));
    }
    if tape.shape(samples) != [k * n, truth.last_dim()] {
        return Err(Error::shape(
            "loss_autoencode",
            format!("samples {:?} for truth {:?} and k = {k}", tape.shape(samples), truth.shape()),
        ));
    }
    let index: Vec<Option<usize>> = (0..k * n).map(|r| Some(r % n)).collect();
    let t = tape.constant(truth.clone());
    let repeated = tape.gather_rows(t, &index)?;
    let dist = row_sq_dist(tape, samples, repeated)?;
    let dv = tape.value(dist).data();
    let mut best = vec![0usize; n];
    for i in 0..n {
        for s in 1..k {
            if dv[s * n + i] < dv[best[i] * n + i] {
                best[i] = s;
            }
        }
    }
    let mut mask = vec![0.0; k * n];
    for (i, &s) in best.iter().enumerate() {
        mask[s * n + i] = 1.0;
    }
    let m = tape.constant(Tensor::new(vec![k * n, 1], mask)?);
    let picked = tape.mul(dist, m)?;
    Ok((tape.sum(picked), best))
}

/// Best-of-K reconstruction loss with one `[N, D]` var per sample.
pub fn loss_autoencode(tape: &mut Tape, truth: &Tensor, samples: &[Var]) -> Result<Var> {
    if samples.is_empty() {
        return Err(Error::Invalid("auto-encoding loss needs at least one sample".into()));
    }
    let stacked = tape.stack_rows(samples)?;
    autoencode_stacked(tape, truth, stacked, samples.len()).map(|(l, _)| l)
}

/// Standard GAN losses from probabilities:
/// `d = −E[log d_real] − E[log(1 − d_fake)]`, `g = −E[log d_fake]`.
pub fn loss_adversarial(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<(Var, Var)> {
    let n_real = tape.value(d_real).len();
    let n_fake = tape.value(d_fake).len();
    let real = tape.bce(d_real, &vec![1.0; n_real])?;
    let fake = tape.bce(d_fake, &vec![0.0; n_fake])?;
    let d = tape.add(real, fake)?;
    let g = tape.bce(d_fake, &vec![1.0; n_fake])?;
    Ok((g, d))
}

/// The same losses computed from logits, which stays finite when the
/// discriminator saturates.
pub fn loss_adversarial_logits(tape: &mut Tape, real_logits: Var, fake_logits: Var) -> Result<(Var, Var)> {
    let n_real = tape.value(real_logits).len();
    let n_fake = tape.value(fake_logits).len();
    let real = tape.bce_with_logits(real_logits, &vec![1.0; n_real])?;
    let fake = tape.bce_with_logits(fake_logits, &vec![0.0; n_fake])?;
    let d = tape.add(real, fake)?;
    let g = tape.bce_with_logits(fake_logits, &vec![1.0; n_fake])?;
    Ok((g, d))
}

/// Mean squared error between per-step scores `[R, 1]` and rewards.
pub fn loss_critic_regression(tape: &mut Tape, scores: &[Var], rewards: &[Tensor]) -> Result<Var> {
    if scores.len() != rewards.len() || scores.is_empty() {
        return Err(Error::shape(
            "loss_critic_regression",
            format!("{} score steps and {} reward steps", scores.len(), rewards.len()),
        ));
    }
    let mut total = None;
    let mut count = 0;
    for (&v, r) in scores.iter().zip(rewards) {
        if tape.shape(v) != r.shape() {
            return Err(Error::shape(
                "loss_critic_regression",
                format!("scores {:?} vs rewards {:?}", tape.shape(v), r.shape()),
            ));
        }
        count += r.len();
        let rc = tape.constant(r.clone());
        let se = tape.squared_error(v, rc)?;
        total = Some(match total {
            None => se,
            Some(t) => tape.add(t, se)?,
        });
    }
    Ok(tape.scale(total.expect("nonempty"), 1.0 / count as f64))
}

/// Mean critic score over all rows and steps.
pub fn loss_critic_regularizer(tape: &mut Tape, scores: &[Var]) -> Result<Var> {
    if scores.is_empty() {
        return Err(Error::Invalid("critic regularizer needs at least one step".into()));
    }
    let all = tape.concat(scores)?;
    tape.mean(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn autoencode_picks_exact_sample() {
        let mut tape = Tape::new();
        let y = t(&[1, 2], &[1.0, 2.0]);
        let off = tape.variable(t(&[1, 2], &[3.0, 2.0]));
        let exact = tape.variable(y.clone());
        let loss = loss_autoencode(&mut tape, &y, &[off, exact]).unwrap();
        assert_eq!(tape.value(loss).item().unwrap(), 0.0);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(off).unwrap().data(), &[0.0, 0.0]);
        assert!(loss_autoencode(&mut tape, &y, &[]).is_err());
    }

    #[test]
    fn adversarial_at_half() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::full(&[3, 1], 0.5));
        let (g, d) = loss_adversarial(&mut tape, p, p).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((tape.value(d).item().unwrap() - 2.0 * ln2).abs() < 1e-15);
        assert!((tape.value(g).item().unwrap() - ln2).abs() < 1e-15);
        let z = tape.constant(Tensor::zeros(&[3, 1]));
        let (gl, dl) = loss_adversarial_logits(&mut tape, z, z).unwrap();
        assert!((tape.value(dl).item().unwrap() - 2.0 * ln2).abs() < 1e-15);
        assert!((tape.value(gl).item().unwrap() - ln2).abs() < 1e-15);
    }

    #[test]
    fn critic_regression_single_hit() {
        let mut tape = Tape::new();
        let v: Vec<Var> = (0..3).map(|_| tape.constant(Tensor::zeros(&[4, 1]))).collect();
        let mut r = vec![Tensor::zeros(&[4, 1]); 3];
        r[1].data_mut()[2] = 1.0;
        let l = loss_critic_regression(&mut tape, &v, &r).unwrap();
        assert!((tape.value(l).item().unwrap() - 1.0 / 12.0).abs() < 1e-15);
        assert!(loss_critic_regression(&mut tape, &v[..2], &r).is_err());
    }
}
