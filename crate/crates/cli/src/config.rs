//! TOML configuration file.
//!
//! ```toml
//! firstparty_url = "http://127.0.0.1:8081"
//! parallelism = 8
//! seed = 42
//!
//! [qr]
//! ec_level = "M"
//!
//! [providers.flickr_sim]
//! kind = "http"
//! base_url = "http://127.0.0.1:8080"
//! ```
//!
//! Without a `[providers]` table, the eight latency presets are available as
//! in-memory providers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use r2o_core::cache::CacheConfig;
use r2o_core::codec::QrConfig;
use r2o_core::filter::FilterConfig;
use r2o_core::store::{latency_presets, ProviderDescriptor, ProviderKind};
use r2o_core::ContentLocator;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    #[serde(default = "memory_kind")]
    pub kind: ProviderKind,
    pub base_url: Option<String>,
    pub simulated_latency_ms: Option<u64>,
    pub root: Option<PathBuf>,
}

fn memory_kind() -> ProviderKind {
    ProviderKind::Memory
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub filter: FilterConfig,
    pub cache: CacheConfig,
    pub qr: QrConfig,
    pub providers: Option<BTreeMap<String, ProviderSection>>,
    pub firstparty_url: Option<String>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Config = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.filter.validate()?;
        self.qr.validate().map_err(|e| e.to_string())?;
        if self.parallelism == Some(0) {
            return Err("parallelism must be >= 1".into());
        }
        if let Some(u) = &self.firstparty_url {
            ContentLocator::parse(u).map_err(|e| format!("firstparty_url: {e}"))?;
        }
        for d in self.providers() {
            match d.kind {
                ProviderKind::Filesystem if d.root.is_none() => {
                    return Err(format!("provider {}: filesystem kind needs root", d.name))
                }
                ProviderKind::Http if d.base_url.is_empty() => {
                    return Err(format!("provider {}: http kind needs base_url", d.name))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn providers(&self) -> Vec<ProviderDescriptor> {
        let Some(sections) = &self.providers else {
            return latency_presets();
        };
        sections
            .iter()
            .map(|(name, s)| ProviderDescriptor {
                name: name.clone(),
                kind: s.kind,
                base_url: s.base_url.clone().unwrap_or_else(|| match s.kind {
                    ProviderKind::Http => String::new(),
                    _ => ProviderDescriptor::memory(name, 0).base_url,
                }),
                simulated_latency_ms: s.simulated_latency_ms,
                root: s.root.clone(),
            })
            .collect()
    }

    pub fn provider(&self, name: &str) -> Option<ProviderDescriptor> {
        self.providers().into_iter().find(|d| d.name == name)
    }

    pub fn provider_names(&self) -> Vec<String> {
        self.providers().into_iter().map(|d| d.name).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_ship_presets() {
        let c = Config::parse("").unwrap();
        assert_eq!(c.providers().len(), 8);
        assert_eq!(c.provider("flickr").unwrap().simulated_latency_ms, Some(147));
        assert!(c.provider("nosuch").is_none());
    }

    #[test]
    fn sections_and_validation() {
        let c = Config::parse(
            r#"
            parallelism = 4
            firstparty_url = "http://127.0.0.1:8081"
            [qr]
            ec_level = "Q"
            [cache]
            n_frequent = 3
            [providers.flickr_sim]
            kind = "http"
            base_url = "http://127.0.0.1:8080"
            [providers.local]
            simulated_latency_ms = 5
            "#,
        )
        .unwrap();
        assert_eq!(c.parallelism, Some(4));
        assert_eq!(c.cache.n_frequent, 3);
        assert_eq!(c.cache.m_recent, CacheConfig::default().m_recent);
        assert_eq!(c.provider_names(), ["flickr_sim", "local"]);
        assert_eq!(c.provider("flickr_sim").unwrap().kind, ProviderKind::Http);

        assert!(Config::parse("parallelism = 0").is_err());
        assert!(Config::parse("bogus = 1").is_err());
        assert!(Config::parse("[providers.x]\nkind = \"filesystem\"").is_err());
        assert!(Config::parse("[providers.x]\nkind = \"http\"").is_err());
        assert!(Config::parse("firstparty_url = \"ftp://x\"").is_err());
    }
}
