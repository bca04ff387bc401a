//! Builds the model gateway from the config and command-line overrides.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use causaltext_llm::{
    disjoint_verifier, BackendProfile, Gateway, HttpBackend, MockScript, ResponseCache, RetryPolicy, Role,
    SharedBackend, SimulatedBackend, SimulatedConfig, TemplateSet,
};

use crate::config::{BackendKind, Config, ModelConfig};
use crate::CliError;

/// Backend selection after applying `--backend` and `--mock-script`.
#[derive(Debug, Clone, Default)]
pub struct BackendOverrides {
    pub kind: Option<BackendKind>,
    pub mock_script: Option<PathBuf>,
}

impl BackendOverrides {
    fn resolve(&self, config: &Config) -> (BackendKind, Option<PathBuf>) {
        let script = self.mock_script.clone().or_else(|| config.backends.mock_script.clone());
        let kind = match (self.kind, &self.mock_script) {
            (Some(k), _) => k,
            (None, Some(_)) => BackendKind::Mock,
            (None, None) => config.backends.kind,
        };
        (kind, script)
    }
}

fn profile(role: Role, m: &ModelConfig) -> BackendProfile {
    let mut p = BackendProfile::for_role(role, m.model_id.clone()).with_endpoint(
        m.provider,
        m.endpoint.clone(),
        m.credential_env.clone(),
    );
    if let Some(t) = m.temperature {
        p.temperature = t;
    }
    if let Some(t) = m.top_p {
        p.top_p = t;
    }
    if let Some(t) = m.max_tokens {
        p.max_tokens = t;
    }
    p
}

/// Model serving each role in HTTP mode.
pub fn role_models(config: &Config) -> Result<Vec<(Role, ModelConfig)>, CliError> {
    let b = &config.backends;
    let proposer = b
        .proposer
        .clone()
        .ok_or_else(|| CliError::InvalidConfig("backends.proposer is required for the http backend".into()))?;
    let verifier = match &b.verifier {
        Some(v) => v.clone(),
        None => {
            let ids: Vec<String> = b.roster.iter().map(|m| m.model_id.clone()).collect();
            let pick = disjoint_verifier(&ids, &proposer.model_id).ok_or_else(|| {
                CliError::InvalidConfig(
                    "no verifier configured and the roster has no model besides the proposer".into(),
                )
            })?;
            b.roster.iter().find(|m| m.model_id == pick).cloned().expect("picked from roster")
        }
    };
    let phase3 = b.phase3.clone().unwrap_or_else(|| proposer.clone());
    let discovery = b.discovery.clone().unwrap_or_else(|| proposer.clone());
    Ok(vec![
        (Role::Proposer, proposer),
        (Role::Verifier, verifier),
        (Role::Phase3, phase3),
        (Role::Discovery, discovery),
    ])
}

pub fn build_gateway(
    config: &Config,
    overrides: &BackendOverrides,
    cache: Option<Arc<ResponseCache>>,
) -> Result<Gateway, CliError> {
    let g = &config.gateway;
    let mut templates = TemplateSet::builtin();
    if let Some(dir) = &g.templates_dir {
        templates = templates
            .with_overrides(dir)
            .map_err(|e| CliError::InvalidConfig(format!("templates in {}: {e}", dir.display())))?;
    }
    let mut builder = Gateway::builder()
        .templates(templates)
        .parallelism(g.parallelism)
        .token_budget(g.token_budget)
        .json_retry_budget(g.json_retry_budget)
        .disjoint_verifier(g.disjoint_verifier);
    if let Some(cache) = cache {
        builder = builder.cache(cache);
    }
    let (kind, script) = overrides.resolve(config);
    match kind {
        BackendKind::Mock => {
            let backend: SharedBackend = match &script {
                Some(path) => MockScript::from_path(path)?.into_backend(),
                None => Arc::new(SimulatedBackend::new(SimulatedConfig { seed: config.seed, ..Default::default() })),
            };
            for role in Role::ALL {
                builder = builder.bind(BackendProfile::for_role(role, format!("mock-{role}")), backend.clone());
            }
        }
        BackendKind::Http => {
            let retry = RetryPolicy { max_retries: g.max_retries, ..RetryPolicy::default() };
            let timeout = Duration::from_secs(g.timeout_secs);
            for (role, model) in role_models(config)? {
                let p = profile(role, &model);
                let backend = HttpBackend::new(p.clone(), retry.clone(), timeout)?;
                builder = builder.bind(p, Arc::new(backend));
            }
        }
    }
    Ok(builder.build()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(id: &str) -> ModelConfig {
        ModelConfig {
            model_id: id.into(),
            endpoint: String::new(),
            credential_env: String::new(),
            provider: Default::default(),
            temperature: None,
            top_p: None,
            max_tokens: None,
        }
    }

    #[test]
    fn verifier_comes_from_roster() {
        let mut c = Config::default();
        c.backends.proposer = Some(model("b"));
        c.backends.roster = vec![model("a"), model("b"), model("c")];
        let roles = role_models(&c).unwrap();
        assert_eq!(roles[1].1.model_id, "c");
        assert_eq!(roles[2].1.model_id, "b");
        c.backends.roster = vec![model("b")];
        assert!(matches!(role_models(&c), Err(CliError::InvalidConfig(_))));
    }

    #[test]
    fn mock_gateway_has_disjoint_models() {
        let overrides = BackendOverrides { kind: Some(BackendKind::Mock), mock_script: None };
        let gw = build_gateway(&Config::default(), &overrides, None).unwrap();
        assert_ne!(gw.profile(Role::Proposer).unwrap().model_id, gw.profile(Role::Verifier).unwrap().model_id);
    }

    #[test]
    fn http_without_proposer_is_invalid() {
        assert!(matches!(
            build_gateway(&Config::default(), &BackendOverrides::default(), None),
            Err(CliError::InvalidConfig(_))
        ));
    }
}
