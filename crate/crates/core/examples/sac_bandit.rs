//! Drive the soft actor-critic agent on a custom environment: a one-step
//! bandit whose reward peaks at a hidden action.
//!
//! cargo run --release --example sac_bandit -- [optimum] [updates]

use lms2s::config::SacConfig;
use lms2s::sac::{rescale_action, Env, ReplayBuffer, SacAgent, StepResult, Transition};

struct Bandit {
    best: f64,
}

impl Env for Bandit {
    fn observation_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn action_bounds(&self) -> (f64, f64) {
        (0.0, 2.0)
    }
    fn reset(&mut self) -> Vec<f64> {
        vec![1.0]
    }
    fn step(&mut self, action: &[f64]) -> StepResult {
        StepResult {
            observation: vec![1.0],
            reward: -(action[0] - self.best).powi(2),
            done: true,
        }
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let best: f64 = args.next().map_or(Ok(1.2), |s| s.parse())?;
    let updates: usize = args.next().map_or(Ok(2000), |s| s.parse())?;
    let cfg = SacConfig::default();
    let mut env = Bandit { best };
    let mut agent = SacAgent::new(env.observation_dim(), env.action_dim(), &cfg, 1);
    let mut buffer = ReplayBuffer::new(cfg.buffer);
    let bounds = env.action_bounds();

    for step in 0..cfg.learning_starts + updates {
        let obs = env.reset();
        let a = if step < cfg.learning_starts {
            agent.random_action()
        } else {
            agent.act(&obs, false)?
        };
        let r = env.step(&rescale_action(&a, bounds));
        buffer.push(Transition {
            observation: obs,
            action: a,
            reward: r.reward,
            next_observation: r.observation,
            done: r.done,
        });
        if step >= cfg.learning_starts {
            let batch = buffer.sample(cfg.batch, agent.rng());
            let d = agent.update(&batch)?;
            if (step - cfg.learning_starts) % 500 == 0 {
                let greedy = rescale_action(&agent.act(&[1.0], true)?, bounds)[0];
                println!(
                    "update {:>5}: q loss {:.4}, alpha {:.4}, greedy action {greedy:.3}",
                    step - cfg.learning_starts,
                    d.q_loss,
                    d.alpha
                );
            }
        }
    }
    let greedy = rescale_action(&agent.act(&[1.0], true)?, bounds)[0];
    println!("greedy action {greedy:.3}, optimum {best}");
    Ok(())
}
