//! MiniWorld: a deterministic multi-app mock environment with logins,
//! documented endpoints, schema checks, pagination and unit-check rewards.

pub mod adapter;
pub mod apps;
pub mod fixture;
pub mod interp;
pub mod state;

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::env::{ApiDoc, EndpointRef, EnvError, Environment, Evaluation, ExecutionResult};

pub use fixture::{Check, TaskFixture};
pub use interp::Interpreter;
pub use state::WorldState;

/// The synthetic task suite shipped with the crate.
pub const BUILTIN_TASKS: [&str; 10] = [
    include_str!("../../fixtures/tasks/d1_send_report.toml"),
    include_str!("../../fixtures/tasks/d1_schema_mail.toml"),
    include_str!("../../fixtures/tasks/d1_schema_bank.toml"),
    include_str!("../../fixtures/tasks/d1_wrong_recipient.toml"),
    include_str!("../../fixtures/tasks/d2_pay_invoice.toml"),
    include_str!("../../fixtures/tasks/d2_long_catalog_mail.toml"),
    include_str!("../../fixtures/tasks/d2_inbox_pagination.toml"),
    include_str!("../../fixtures/tasks/d3_playlist_relay.toml"),
    include_str!("../../fixtures/tasks/d3_wrong_endpoint.toml"),
    include_str!("../../fixtures/tasks/d3_chain_auth.toml"),
];

pub fn builtin_tasks() -> Vec<TaskFixture> {
    BUILTIN_TASKS
        .iter()
        .map(|t| TaskFixture::from_toml_str(t).expect("built-in task fixtures are valid"))
        .collect()
}

/// Loads every `*.toml` task in a directory, sorted by task id.
pub fn load_task_dir(dir: &Path) -> Result<Vec<TaskFixture>, EnvError> {
    let mut tasks = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "toml") {
            tasks.push(TaskFixture::load(&path)?);
        }
    }
    tasks.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = tasks.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(EnvError::Fixture(format!("duplicate task id `{}`", w[0].id)));
    }
    Ok(tasks)
}

/// A per-task marker string embedded in the first observation.
pub fn canary(task_id: &str, seed: u64) -> String {
    let digest = Sha256::digest(format!("{task_id}:{seed}").as_bytes());
    format!("MW-{}", &hex::encode(digest)[..16])
}

pub fn reset_observation(task: &TaskFixture) -> String {
    let mut s = format!("Task: {}\n\nAvailable apps:\n", task.instruction);
    for (app, desc) in apps::APPS {
        s.push_str(&format!("- {app}: {desc}\n"));
    }
    s.push_str(
        "\nRead documentation with apis.api_docs.show_api_descriptions(app_name=...) and \
apis.api_docs.show_api_doc(app_name=..., api_name=...) before calling an endpoint. \
Account passwords are available from apis.supervisor.show_account_passwords(). \
Call apis.supervisor.complete_task() when the task is done.\n",
    );
    s.push_str(&format!("\nWorkspace reference: {}", canary(&task.id, task.seed)));
    s
}

struct Episode {
    task: TaskFixture,
    world: WorldState,
    interp: Interpreter,
}

/// The built-in environment.
pub struct MiniWorld {
    tasks: BTreeMap<String, TaskFixture>,
    active: Option<Episode>,
}

impl MiniWorld {
    pub fn new(tasks: impl IntoIterator<Item = TaskFixture>) -> Result<Self, EnvError> {
        let mut map = BTreeMap::new();
        for t in tasks {
            t.validate()?;
            if map.contains_key(&t.id) {
                return Err(EnvError::Fixture(format!("duplicate task id `{}`", t.id)));
            }
            map.insert(t.id.clone(), t);
        }
        Ok(MiniWorld { tasks: map, active: None })
    }

    pub fn builtin() -> Self {
        Self::new(builtin_tasks()).expect("built-in suite has unique ids")
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskFixture> {
        self.tasks.values()
    }

    pub fn task(&self, id: &str) -> Option<&TaskFixture> {
        self.tasks.get(id)
    }

    /// World state of the running episode.
    pub fn world(&self) -> Option<&WorldState> {
        self.active.as_ref().map(|e| &e.world)
    }
}

impl Environment for MiniWorld {
    fn reset(&mut self, task_id: &str) -> Result<ExecutionResult, EnvError> {
        let task = self.tasks.get(task_id).ok_or_else(|| EnvError::UnknownTask(task_id.into()))?.clone();
        let obs = reset_observation(&task);
        let world = task.initial_state();
        self.active = Some(Episode { task, world, interp: Interpreter::new() });
        Ok(ExecutionResult::success(obs, vec![]))
    }

    fn execute(&mut self, code: &str) -> Result<ExecutionResult, EnvError> {
        let ep = self.active.as_mut().ok_or(EnvError::NotActive)?;
        ep.world.turn_counter += 1;
        Ok(ep.interp.run(&mut ep.world, code))
    }

    fn evaluate(&mut self) -> Result<Evaluation, EnvError> {
        let ep = self.active.as_ref().ok_or(EnvError::NotActive)?;
        let checks_total = ep.task.checks.len();
        let checks_passed = ep.task.checks.iter().filter(|c| c.passes(&ep.world)).count();
        Ok(Evaluation { reward: u8::from(checks_passed == checks_total), checks_passed, checks_total })
    }

    fn api_doc(&mut self, endpoint: &EndpointRef) -> Result<Option<ApiDoc>, EnvError> {
        Ok(apps::doc(&endpoint.app, &endpoint.endpoint))
    }
}
