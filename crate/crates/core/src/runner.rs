//! Running a configuration over a list of tasks.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::agent::{AgentConfig, ConfigLabel, TaskSpec, TerminationCause, TrajectoryRecord};
use crate::env::{EnvError, Environment};
use crate::gateway::ChatGateway;

/// Runs every task with a fresh environment from `make_env`. With
/// `parallel > 1` tasks run on that many threads; the output order is the
/// task order either way.
pub fn run_suite<F>(
    tasks: &[TaskSpec],
    config: &AgentConfig,
    gateway: &dyn ChatGateway,
    make_env: F,
    parallel: usize,
) -> Vec<TrajectoryRecord>
where
    F: Fn() -> Result<Box<dyn Environment>, EnvError> + Sync,
{
    let run_one = |task: &TaskSpec| match make_env() {
        Ok(mut env) => crate::agent::run_episode(task, config, gateway, env.as_mut()),
        Err(e) => {
            let mut r = TrajectoryRecord::empty(task, config.label, config.decode.seed);
            r.termination_cause = TerminationCause::EnvironmentError;
            r.error = Some(e.to_string());
            r
        }
    };
    let workers = parallel.clamp(1, tasks.len().max(1));
    if workers == 1 {
        return tasks.iter().map(run_one).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<TrajectoryRecord>>> = Mutex::new(vec![None; tasks.len()]);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(task) = tasks.get(i) else { break };
                let r = run_one(task);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("workers joined").into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Runs the three configurations in order over the same tasks.
pub fn run_ablation<F>(
    tasks: &[TaskSpec],
    base: &AgentConfig,
    gateway: &dyn ChatGateway,
    make_env: F,
    parallel: usize,
) -> Vec<Vec<TrajectoryRecord>>
where
    F: Fn() -> Result<Box<dyn Environment>, EnvError> + Sync,
{
    ConfigLabel::ALL
        .into_iter()
        .map(|label| {
            let config = AgentConfig { label, ..base.clone() };
            run_suite(tasks, &config, gateway, &make_env, parallel)
        })
        .collect()
}
