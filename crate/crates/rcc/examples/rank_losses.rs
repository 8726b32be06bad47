//! Tour of the ranking objectives on hand-sized reward vectors.
//!
//! Run with `cargo run --example rank_losses`. Shows the closed-form
//! values each objective takes on tiny inputs (the same numbers the test
//! suite pins), then spot-checks one analytic gradient against central
//! finite differences.

use rcc::rankloss::{
    bt_dpo_loss, combined_loss, hinge_loss, mpo_loss, ntp_loss, pl_dpo_loss, pl_probability,
    ranknet_loss, LossConfig, Objective, ScoredChain,
};
use rcc::Result;

fn main() -> Result<()> {
    // A three-response chain where the policy still equals the reference:
    // every reward r_i = beta * (policy_i - ref_i) is zero, so the listwise
    // loss is ln(3!) = ln 6 — the entropy of a uniform guess over orders.
    let logprobs = vec![-5.0, -6.5, -9.0];
    let fresh = ScoredChain::new(logprobs.clone(), logprobs.clone())?;
    let pl = pl_dpo_loss(&fresh, 0.3)?;
    println!("listwise loss at zero reward (n=3): {:.6}  [ln 6 = {:.6}]", pl.value, 6f64.ln());

    // Two responses, zero reward: every pairwise flavor collapses to ln 2.
    let pair = fresh.truncated(2)?;
    println!(
        "pairwise loss at zero reward:       {:.6}  [ln 2 = {:.6}]",
        bt_dpo_loss(-5.0, -6.5, -5.0, -6.5, 0.3)?.value,
        2f64.ln()
    );
    println!("winner-vs-rest at zero reward:      {:.6}", mpo_loss(&pair, 0.3)?.value);

    // Once the policy has learned something, the reward gaps drive the
    // losses below their uniform values.
    let trained = ScoredChain::new(vec![-4.0, -7.0, -11.0], logprobs.clone())?;
    println!("\nafter moving the policy:");
    println!("  listwise: {:.6}", pl_dpo_loss(&trained, 0.3)?.value);
    println!("  top-two:  {:.6}", bt_dpo_loss(-4.0, -7.0, -5.0, -6.5, 0.3)?.value);
    println!("  mean-winner: {:.6}", mpo_loss(&trained, 0.3)?.value);

    // Margin objectives read raw scores rather than log-ratios.
    println!("  hinge on [2,3,1]: {:.6}  [1/3]", hinge_loss(&[2.0, 3.0, 1.0])?.value);
    println!(
        "  smooth pairwise on [2,0]: {:.6}  [softplus(-2)]",
        ranknet_loss(&[2.0, 0.0])?.value
    );

    // The listwise loss really is the negative log of an order probability:
    // exp(-loss) equals the probability of the observed order, and equal
    // rewards give exactly 1/n!.
    let p = pl_probability(&[0.0, 0.0, 0.0])?;
    println!("\norder probability at equal rewards (n=3): {:.6}  [1/6]", p);

    // The shared entry point adds a weighted next-token term on the best
    // response: ln 6 + 0.1 * 2.0 with these token log-probabilities.
    let config = LossConfig { objective: Objective::PlDpo, beta: 0.3, ntp_weight: 0.1 };
    let tokens = vec![-1.0, -3.0];
    let combined = combined_loss(&config, &fresh, &tokens)?;
    println!(
        "\ncombined = objective + w * ntp: {:.6} = {:.6} + 0.1 * {:.6}",
        combined.value, combined.objective_value, combined.ntp_value
    );
    println!("next-token term alone: {:.6}", ntp_loss(&tokens)?.value);

    // Every gradient in the crate is hand-derived; verify one against
    // central differences as the test suite does at scale.
    let step = 1e-5;
    let mut worst = 0f64;
    let base = pl_dpo_loss(&trained, 0.3)?;
    for i in 0..3 {
        let mut up = trained.policy_logprobs().to_vec();
        let mut down = up.clone();
        up[i] += step;
        down[i] -= step;
        let up = pl_dpo_loss(&ScoredChain::new(up, logprobs.clone())?, 0.3)?.value;
        let down = pl_dpo_loss(&ScoredChain::new(down, logprobs.clone())?, 0.3)?.value;
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max((numeric - base.grad[i]).abs());
    }
    println!("\nanalytic vs numeric gradient, worst abs error: {worst:.2e}");
    Ok(())
}
