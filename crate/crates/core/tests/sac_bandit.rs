use lms2s::config::SacConfig;
use lms2s::sac::{rescale_action, Env, ReplayBuffer, SacAgent, StepResult, Transition};

/// One-step bandit: reward `-(a - best)^2`, so the optimum is `best`.
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

fn greedy_after(best: f64, updates: usize, seed: u64) -> f64 {
    let mut env = Bandit { best };
    let cfg = SacConfig::default();
    let mut agent = SacAgent::new(1, 1, &cfg, seed);
    let mut buffer = ReplayBuffer::new(cfg.buffer);
    let bounds = env.action_bounds();
    let mut done_updates = 0;
    let mut step = 0;
    while done_updates < updates {
        let obs = env.reset();
        let a = if step < cfg.learning_starts {
            agent.random_action()
        } else {
            agent.act(&obs, false).unwrap()
        };
        let r = env.step(&rescale_action(&a, bounds));
        buffer.push(Transition {
            observation: obs,
            action: a,
            reward: r.reward,
            next_observation: r.observation,
            done: r.done,
        });
        step += 1;
        if step >= cfg.learning_starts {
            let batch = buffer.sample(cfg.batch, agent.rng());
            agent.update(&batch).unwrap();
            done_updates += 1;
        }
    }
    let a = agent.act(&[1.0], true).unwrap();
    rescale_action(&a, bounds)[0]
}

#[test]
fn greedy_action_finds_bandit_optimum() {
    for (seed, best) in [(1, 1.2), (2, 0.7)] {
        let got = greedy_after(best, 2000, seed);
        assert!((got - best).abs() < 0.1, "seed {seed}: greedy {got}, optimum {best}");
    }
}
