use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::composition::{CompositionDag, CompositionRequest};
use crate::engine::{EngineKind, EngineParams};
use crate::error::{Error, Result};
use crate::firm::PolicyRegistry;
use crate::registry::{DeploymentId, Registry};
use crate::topology::{HostId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalKind {
    #[default]
    Poisson,
    Closed,
}

/// Engine settings applied over the defaults. Keys of the `[engine]` table
/// select `service`, `service.implementation` or
/// `service.implementation.alias`; more specific keys win.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnginePatch {
    pub capacity: Option<u32>,
    pub base_service_time: Option<f64>,
    pub kind: Option<EngineKind>,
    pub job_size_factor: Option<f64>,
    pub failure_probability: Option<f64>,
    /// Host index; only meaningful for a single deployment.
    pub host: Option<usize>,
}

impl EnginePatch {
    fn apply(&self, p: &mut EngineParams) {
        if let Some(v) = self.capacity {
            p.capacity = v;
        }
        if let Some(v) = self.base_service_time {
            p.base_service_time = v;
        }
        if let Some(v) = self.kind {
            p.kind = v;
        }
        if let Some(v) = self.job_size_factor {
            p.job_size_factor = v;
        }
        if let Some(v) = self.failure_probability {
            p.failure_probability = v;
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    registry: PathBuf,
    mode: Option<String>,
    k: Option<usize>,
    requests: Option<usize>,
    seed: Option<u64>,
    request: Option<String>,
    request_mix: Option<Vec<String>>,
    clients: Option<u32>,
    arrival: Option<ArrivalKind>,
    arrival_rate: Option<f64>,
    arrival_window: Option<f64>,
    frequency: Option<f64>,
    threshold: Option<f64>,
    window: Option<f64>,
    memoize: Option<bool>,
    abort_at: Option<f64>,
    check_invariants: Option<bool>,
    report_on_admission: Option<bool>,
    #[serde(default)]
    engine: BTreeMap<String, EnginePatch>,
}

/// Everything a run depends on. Two runs of equal scenarios produce equal
/// event logs.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub mode: String,
    pub k: usize,
    pub requests: usize,
    pub seed: u64,
    pub registry: Registry,
    /// Requests drawn uniformly per arrival.
    pub request_mix: Vec<CompositionRequest>,
    pub clients: u32,
    pub arrival: ArrivalKind,
    /// Poisson arrivals per time unit.
    pub arrival_rate: f64,
    /// When set, the Poisson rate is `requests / arrival_window`, so load
    /// grows with the request count.
    pub arrival_window: Option<f64>,
    /// Promoter tick spacing.
    pub frequency: f64,
    /// `None` means twice each engine's unloaded service time.
    pub threshold: Option<f64>,
    pub window: f64,
    pub memoize: bool,
    pub abort_at: Option<f64>,
    pub check_invariants: bool,
    /// Engines report on admission as well as on completion.
    pub report_on_admission: bool,
    pub engine_defaults: EngineParams,
    pub engine_overrides: BTreeMap<String, EnginePatch>,
}

impl Scenario {
    pub fn new(registry: Registry, request: CompositionRequest) -> Self {
        Self {
            mode: "firm".into(),
            k: 4,
            requests: 100,
            seed: 42,
            registry,
            request_mix: vec![request],
            clients: 16,
            arrival: ArrivalKind::Poisson,
            arrival_rate: 1.0,
            arrival_window: None,
            frequency: 20.0,
            threshold: None,
            window: 50.0,
            memoize: true,
            abort_at: None,
            check_invariants: true,
            report_on_admission: true,
            engine_defaults: EngineParams::default(),
            engine_overrides: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses a scenario; a relative registry path is taken from `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut file: ScenarioFile =
            toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        let path = base_dir.join(&file.registry);
        let registry_text = std::fs::read_to_string(&path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let registry: Registry = registry_text.parse()?;
        let requests = match (file.request.take(), file.request_mix.take()) {
            (Some(_), Some(_)) => {
                return Err(Error::Scenario("give either `request` or `request_mix`".into()))
            }
            (Some(r), None) => vec![r],
            (None, Some(m)) => m,
            (None, None) => return Err(Error::Scenario("no request given".into())),
        };
        let request_mix = requests
            .iter()
            .map(|r| r.parse::<CompositionRequest>())
            .collect::<Result<Vec<_>, _>>()?;
        let first = request_mix.first().cloned().ok_or_else(|| Error::Scenario("empty request_mix".into()))?;
        let mut s = Scenario::new(registry, first);
        s.request_mix = request_mix;
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = file.$f { s.$f = v; })* };
        }
        set!(mode, k, requests, seed, clients, arrival, arrival_rate, frequency, window, memoize, check_invariants, report_on_admission);
        s.threshold = file.threshold;
        s.arrival_window = file.arrival_window;
        s.abort_at = file.abort_at;
        if let Some(d) = file.engine.remove("defaults") {
            if d.host.is_some() {
                return Err(Error::Scenario("`host` cannot be a default".into()));
            }
            d.apply(&mut s.engine_defaults);
        }
        s.engine_overrides = file.engine;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(&PolicyRegistry::builtin())
    }

    /// Validation against a custom set of policies.
    pub fn validate_with(&self, policies: &PolicyRegistry) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if !policies.contains(&self.mode) {
            return Err(Error::UnknownPolicy(self.mode.clone()));
        }
        let topology = Topology::fat_tree(self.k)?;
        if self.clients == 0 {
            return bad("clients must be positive".into());
        }
        for (name, v) in [
            ("arrival_rate", self.arrival_rate),
            ("frequency", self.frequency),
            ("window", self.window),
            ("threshold", self.threshold.unwrap_or(1.0)),
            ("arrival_window", self.arrival_window.unwrap_or(1.0)),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if let Some(t) = self.abort_at {
            if !(t.is_finite() && t >= 0.0) {
                return bad(format!("abort_at must be non-negative, got {t}"));
            }
        }
        if self.request_mix.is_empty() {
            return bad("no request given".into());
        }
        for r in &self.request_mix {
            CompositionDag::link(r, &self.registry)?;
        }
        for key in self.engine_overrides.keys() {
            if self.selected(key)?.is_empty() {
                return bad(format!("engine section `{key}` matches no deployment"));
            }
        }
        for s in self.registry.services() {
            for id in s.deployment_ids() {
                let (p, host) = self.engine_for(&id);
                if p.capacity == 0 {
                    return bad(format!("`{id}`: capacity must be positive"));
                }
                if !(p.base_service_time.is_finite() && p.base_service_time > 0.0) {
                    return bad(format!("`{id}`: base_service_time must be positive"));
                }
                if !(p.job_size_factor.is_finite() && p.job_size_factor > 0.0) {
                    return bad(format!("`{id}`: job_size_factor must be positive"));
                }
                if !(0.0..=1.0).contains(&p.failure_probability) {
                    return bad(format!("`{id}`: failure_probability must be in [0, 1]"));
                }
                if let Some(h) = host {
                    topology.location(h)?;
                }
            }
        }
        Ok(())
    }

    /// Poisson rate in effect.
    pub fn effective_rate(&self) -> f64 {
        match self.arrival_window {
            Some(w) => self.requests as f64 / w,
            None => self.arrival_rate,
        }
    }

    /// Deployments matched by an `[engine]` key.
    fn selected(&self, key: &str) -> Result<Vec<DeploymentId>> {
        let parts: Vec<&str> = key.split('.').collect();
        if parts.len() > 3 || parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Scenario(format!("bad engine section `{key}`")));
        }
        let Some(service) = self.registry.service(parts[0]) else {
            return Err(Error::Scenario(format!("engine section `{key}`: unknown service")));
        };
        Ok(service
            .deployment_ids()
            .filter(|id| parts.get(1).is_none_or(|i| id.implementation == *i))
            .filter(|id| parts.get(2).is_none_or(|a| id.alias == *a))
            .collect())
    }

    /// Engine parameters and pinned host for one deployment.
    pub fn engine_for(&self, id: &DeploymentId) -> (EngineParams, Option<HostId>) {
        let mut params = self.engine_defaults;
        let mut host = None;
        let keys = [
            id.service.clone(),
            format!("{}.{}", id.service, id.implementation),
            id.to_string().replace('/', "."),
        ];
        for k in &keys {
            if let Some(p) = self.engine_overrides.get(k) {
                p.apply(&mut params);
                host = p.host.or(host);
            }
        }
        (params, host.map(HostId))
    }

    /// Host of every deployment: pinned, else derived from its address.
    pub fn placement(&self, topology: &Topology) -> BTreeMap<DeploymentId, HostId> {
        let mut out = BTreeMap::new();
        for s in self.registry.services() {
            for imp in &s.implementations {
                for d in &imp.deployments {
                    let id = DeploymentId::new(&s.name, &imp.name, &d.alias);
                    let host = self
                        .engine_for(&id)
                        .1
                        .unwrap_or_else(|| topology.host_for_address(d.address));
                    out.insert(id, host);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const REG: &str = "services {
        service s { impl a { d1 10.0.0.1; d2 10.0.0.2; } impl b { d3 10.0.0.3; } }
    }";

    fn load(toml: &str) -> Result<Scenario> {
        let dir = tempfile::tempdir().unwrap();
        let mut f = std::fs::File::create(dir.path().join("r.conf")).unwrap();
        f.write_all(REG.as_bytes()).unwrap();
        Scenario::from_toml(toml, dir.path())
    }

    #[test]
    fn overrides_apply_by_specificity() {
        let s = load(
            r#"
            registry = "r.conf"
            request = "<s, x>"
            [engine.defaults]
            capacity = 2
            [engine.s]
            base_service_time = 5.0
            [engine."s.a"]
            capacity = 3
            [engine."s.a.d2"]
            capacity = 9
            host = 7
            "#,
        )
        .unwrap();
        let (p1, h1) = s.engine_for(&DeploymentId::new("s", "a", "d1"));
        let (p2, h2) = s.engine_for(&DeploymentId::new("s", "a", "d2"));
        let (p3, _) = s.engine_for(&DeploymentId::new("s", "b", "d3"));
        assert_eq!((p1.capacity, p1.base_service_time, h1), (3, 5.0, None));
        assert_eq!((p2.capacity, h2), (9, Some(HostId(7))));
        assert_eq!((p3.capacity, p3.base_service_time), (2, 5.0));
    }

    #[test]
    fn rejects_bad_values() {
        let base = "registry = \"r.conf\"\nrequest = \"<s, x>\"\n";
        assert!(load(&format!("{base}k = 3")).is_err());
        assert!(load(&format!("{base}clients = 0")).is_err());
        assert!(load(&format!("{base}mode = \"fastest\"")).is_err());
        assert!(load(&format!("{base}[engine.ghost]\ncapacity = 1")).is_err());
        assert!(load(&format!("{base}[engine.\"s.a.d1\"]\nhost = 16")).is_err());
        assert!(load(&format!("{base}bogus = 1")).is_err());
        assert!(load("registry = \"r.conf\"\nrequest = \"<t, x>\"").is_err());
        assert!(load(base).is_ok());
    }
}
