use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::plugin::{discover_plugins, PluginError, PluginTask};
use crate::task::{Task, TaskDescriptor};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("task {0:?} registered twice")]
    DuplicateTask(String),
    #[error(transparent)]
    Plugin(#[from] PluginError),
}

/// All tasks available to a run, keyed (and therefore sorted) by name.
#[derive(Default)]
pub struct Registry {
    tasks: BTreeMap<String, Box<dyn Task>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, task: Box<dyn Task>) -> Result<(), RegistryError> {
        let name = task.descriptor().name.clone();
        if self.tasks.contains_key(&name) {
            return Err(RegistryError::DuplicateTask(name));
        }
        self.tasks.insert(name, task);
        Ok(())
    }

    /// Discovers plugins under `root` and registers them. Returns the warnings
    /// for plugin directories that were skipped.
    pub fn load_plugins(&mut self, root: &Path) -> Result<Vec<String>, RegistryError> {
        let existing: Vec<String> = self.tasks.keys().cloned().collect();
        let discovery = discover_plugins(root, &existing)?;
        for manifest in discovery.plugins {
            self.register(Box::new(PluginTask::new(manifest)))?;
        }
        Ok(discovery.warnings)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tasks.contains_key(name)
    }

    pub fn descriptor(&self, name: &str) -> Option<&TaskDescriptor> {
        self.tasks.get(name).map(|t| t.descriptor())
    }

    pub fn task_mut(&mut self, name: &str) -> Option<&mut (dyn Task + 'static)> {
        self.tasks.get_mut(name).map(|t| t.as_mut())
    }

    /// Every registered task, sorted by name.
    pub fn list(&self) -> Vec<&TaskDescriptor> {
        self.tasks.values().map(|t| t.descriptor()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.tasks.keys().cloned().collect()
    }
}
