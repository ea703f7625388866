//! Platform description: hosts, their power profiles and carbon-intensity sources.
//!
//! The accepted document format is a strict subset of a SimGrid platform file.
//! Only `host` elements and their `prop` children are interpreted:
//!
//! ```xml
//! <host id="Intel_i5_11400H" speed="12Gf" pstate="0" core="6">
//!   <prop id="wattage_per_state" value="10:25:40" />
//!   <prop id="wattage_off" value="1.0" />
//!   <prop id="carbon_intensity" value="98.348" />
//! </host>
//! ```
//!
//! A host may reference a step trace instead of a constant with
//! `<prop id="carbon_intensity_trace" value="bra.csv" />`.

use std::collections::HashSet;
use std::fmt::Write as _;

use log::warn;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlatformError {
    #[error("malformed wattage_per_state {0:?}: expected three colon-separated values")]
    MalformedTriplet(String),
    #[error("non-numeric power value {0:?}")]
    NonNumeric(String),
    #[error("negative or non-finite power value {0}")]
    NegativeValue(f64),
    #[error("power states out of order: idle {idle} <= epsilon {epsilon} <= allcores {allcores} violated")]
    OrderingViolation { idle: f64, epsilon: f64, allcores: f64 },
    #[error("invalid XML: {0}")]
    Xml(String),
    #[error("line {line}: duplicate host id {id:?}")]
    DuplicateHostId { id: String, line: u32 },
    #[error("line {line}: host is missing required attribute {attribute:?}")]
    MissingAttribute { attribute: &'static str, line: u32 },
    #[error("line {line}: host {host:?} is missing required property {property:?}")]
    MissingProperty { host: String, property: &'static str, line: u32 },
    #[error("line {line}: host {host:?} has unparsable speed {value:?}")]
    UnparsableSpeed { host: String, value: String, line: u32 },
    #[error("line {line}: host {host:?} has invalid core count {value:?}")]
    InvalidCoreCount { host: String, value: String, line: u32 },
    #[error("line {line}: host {host:?}: {source}")]
    Profile {
        host: String,
        line: u32,
        #[source]
        source: Box<PlatformError>,
    },
    #[error("line {line}: host {host:?} has invalid carbon_intensity {value:?}")]
    InvalidCarbonIntensity { host: String, value: String, line: u32 },
    #[error("line {line}: host {host:?} declares both carbon_intensity and carbon_intensity_trace")]
    ConflictingCiSource { host: String, line: u32 },
    #[error("platform declares no hosts")]
    Empty,
}

/// Wattages for the three usage levels of a host plus its residual draw when off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerProfile {
    pub idle_w: f64,
    pub epsilon_w: f64,
    pub allcores_w: f64,
    pub off_w: f64,
}

impl PowerProfile {
    pub fn new(idle_w: f64, epsilon_w: f64, allcores_w: f64, off_w: f64) -> Result<Self, PlatformError> {
        for v in [idle_w, epsilon_w, allcores_w, off_w] {
            if !v.is_finite() || v < 0.0 {
                return Err(PlatformError::NegativeValue(v));
            }
        }
        if idle_w > epsilon_w || epsilon_w > allcores_w {
            return Err(PlatformError::OrderingViolation {
                idle: idle_w,
                epsilon: epsilon_w,
                allcores: allcores_w,
            });
        }
        Ok(Self { idle_w, epsilon_w, allcores_w, off_w })
    }

    /// Renders the `wattage_per_state` value.
    pub fn states_text(&self) -> String {
        format!("{}:{}:{}", self.idle_w, self.epsilon_w, self.allcores_w)
    }
}

/// Where a host gets its carbon intensity (g/kWh) from.
#[derive(Debug, Clone, PartialEq)]
pub enum CiSource {
    Constant(f64),
    /// Path or name of a step-trace CSV, resolved by the caller.
    Trace(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostSpec {
    pub id: String,
    pub core_count: u32,
    /// FLOP/s delivered by a single core.
    pub speed_per_core: f64,
    pub profile: PowerProfile,
    pub ci_source: CiSource,
}

impl HostSpec {
    pub fn aggregate_speed(&self) -> f64 {
        self.core_count as f64 * self.speed_per_core
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlatformSpec {
    pub hosts: Vec<HostSpec>,
}

impl PlatformSpec {
    pub fn host(&self, id: &str) -> Option<&HostSpec> {
        self.hosts.iter().find(|h| h.id == id)
    }

    /// Trace references used by any host, in platform order, deduplicated.
    pub fn trace_refs(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.hosts
            .iter()
            .filter_map(|h| match &h.ci_source {
                CiSource::Trace(r) if seen.insert(r.as_str()) => Some(r.as_str()),
                _ => None,
            })
            .collect()
    }
}

/// One invariant violation found by [`validate_platform`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub host_id: String,
    pub field: &'static str,
    pub message: String,
}

fn parse_watts(token: &str) -> Result<f64, PlatformError> {
    let v: f64 = token
        .trim()
        .parse()
        .map_err(|_| PlatformError::NonNumeric(token.to_string()))?;
    if !v.is_finite() || v < 0.0 {
        return Err(PlatformError::NegativeValue(v));
    }
    Ok(v)
}

/// Parses a `wattage_per_state` triplet (`idle:epsilon:allcores`) and a `wattage_off` value.
pub fn parse_power_profile(text: &str, off_text: &str) -> Result<PowerProfile, PlatformError> {
    let tokens: Vec<&str> = text.split(':').collect();
    if tokens.len() != 3 || tokens.iter().any(|t| t.trim().is_empty()) {
        return Err(PlatformError::MalformedTriplet(text.to_string()));
    }
    let idle = parse_watts(tokens[0])?;
    let epsilon = parse_watts(tokens[1])?;
    let allcores = parse_watts(tokens[2])?;
    let off = parse_watts(off_text)?;
    PowerProfile::new(idle, epsilon, allcores, off)
}

/// Parses a SimGrid-style speed such as `12Gf`, `4.5Gf` or `1e9f` into FLOP/s.
pub fn parse_speed(text: &str) -> Option<f64> {
    let t = text.trim();
    let number_end = t
        .find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
        .unwrap_or(t.len());
    let (number, unit) = t.split_at(number_end);
    let value: f64 = number.parse().ok()?;
    let scale = match unit {
        "" | "f" | "flops" => 1.0,
        "kf" | "kflops" => 1e3,
        "Mf" | "Mflops" => 1e6,
        "Gf" | "Gflops" => 1e9,
        "Tf" | "Tflops" => 1e12,
        "Pf" | "Pflops" => 1e15,
        _ => return None,
    };
    let speed = value * scale;
    speed.is_finite().then_some(speed)
}

const KNOWN_CONTAINERS: &[&str] = &["platform", "zone", "AS"];

/// Parses a platform document into a [`PlatformSpec`].
pub fn parse_platform(document: &str) -> Result<PlatformSpec, PlatformError> {
    let options = roxmltree::ParsingOptions {
        allow_dtd: true,
        ..Default::default()
    };
    let doc = roxmltree::Document::parse_with_options(document, options)
        .map_err(|e| PlatformError::Xml(e.to_string()))?;
    let mut hosts = Vec::new();
    let mut ids = HashSet::new();

    for node in doc.descendants().filter(|n| n.is_element()) {
        let name = node.tag_name().name();
        match name {
            "host" => {
                let line = doc.text_pos_at(node.range().start).row;
                let host = parse_host(node, line)?;
                if !ids.insert(host.id.clone()) {
                    return Err(PlatformError::DuplicateHostId { id: host.id, line });
                }
                hosts.push(host);
            }
            "prop" => {
                if node.parent_element().map(|p| p.tag_name().name()) != Some("host") {
                    warn!("ignoring prop outside of a host element");
                }
            }
            n if KNOWN_CONTAINERS.contains(&n) => {}
            other => warn!("ignoring unsupported platform element <{other}>"),
        }
    }

    if hosts.is_empty() {
        return Err(PlatformError::Empty);
    }
    Ok(PlatformSpec { hosts })
}

fn parse_host(node: roxmltree::Node<'_, '_>, line: u32) -> Result<HostSpec, PlatformError> {
    let attr = |attribute: &'static str| {
        node.attribute(attribute)
            .ok_or(PlatformError::MissingAttribute { attribute, line })
    };
    let id = attr("id")?.to_string();
    let speed_text = attr("speed")?;
    let core_text = attr("core")?;

    let speed_per_core = parse_speed(speed_text).ok_or_else(|| PlatformError::UnparsableSpeed {
        host: id.clone(),
        value: speed_text.to_string(),
        line,
    })?;
    let core_count: u32 = core_text
        .trim()
        .parse()
        .map_err(|_| PlatformError::InvalidCoreCount {
            host: id.clone(),
            value: core_text.to_string(),
            line,
        })?;
    if let Some(p) = node.attribute("pstate") {
        if p.trim() != "0" {
            warn!("host {id}: only pstate 0 is supported, ignoring pstate={p}");
        }
    }

    let mut wattage_per_state = None;
    let mut wattage_off = None;
    let mut ci_constant = None;
    let mut ci_trace = None;
    for prop in node.children().filter(|n| n.has_tag_name("prop")) {
        let (Some(key), Some(value)) = (prop.attribute("id"), prop.attribute("value")) else {
            warn!("host {id}: ignoring prop without id/value");
            continue;
        };
        match key {
            "wattage_per_state" => wattage_per_state = Some(value),
            "wattage_off" => wattage_off = Some(value),
            "carbon_intensity" => ci_constant = Some(value),
            "carbon_intensity_trace" => ci_trace = Some(value),
            other => warn!("host {id}: ignoring unknown property {other:?}"),
        }
    }

    let states = wattage_per_state.ok_or_else(|| PlatformError::MissingProperty {
        host: id.clone(),
        property: "wattage_per_state",
        line,
    })?;
    let off = wattage_off.unwrap_or_else(|| {
        warn!("host {id}: no wattage_off, assuming 0 W");
        "0"
    });
    let profile = parse_power_profile(states, off).map_err(|e| PlatformError::Profile {
        host: id.clone(),
        line,
        source: Box::new(e),
    })?;

    let ci_source = match (ci_constant, ci_trace) {
        (Some(_), Some(_)) => return Err(PlatformError::ConflictingCiSource { host: id, line }),
        (Some(v), None) => match v.trim().parse::<f64>() {
            Ok(ci) if ci.is_finite() && ci >= 0.0 => CiSource::Constant(ci),
            _ => {
                return Err(PlatformError::InvalidCarbonIntensity {
                    host: id,
                    value: v.to_string(),
                    line,
                })
            }
        },
        (None, Some(path)) => CiSource::Trace(path.trim().to_string()),
        (None, None) => {
            warn!("host {id}: no carbon intensity configured, using 0 g/kWh");
            CiSource::Constant(0.0)
        }
    };

    Ok(HostSpec {
        id,
        core_count,
        speed_per_core,
        profile,
        ci_source,
    })
}

fn escape_attr(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('"', "&quot;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Writes a platform back out in the accepted document format.
///
/// Numbers use shortest round-trip formatting, so parsing the output yields
/// an identical [`PlatformSpec`].
pub fn serialize_platform(spec: &PlatformSpec) -> String {
    let mut out = String::from("<?xml version='1.0'?>\n<platform version=\"4.1\">\n");
    for h in &spec.hosts {
        let _ = writeln!(
            out,
            "  <host id=\"{}\" speed=\"{}f\" pstate=\"0\" core=\"{}\">",
            escape_attr(&h.id),
            h.speed_per_core,
            h.core_count
        );
        let _ = writeln!(out, "    <prop id=\"wattage_per_state\" value=\"{}\" />", h.profile.states_text());
        let _ = writeln!(out, "    <prop id=\"wattage_off\" value=\"{}\" />", h.profile.off_w);
        match &h.ci_source {
            CiSource::Constant(ci) => {
                let _ = writeln!(out, "    <prop id=\"carbon_intensity\" value=\"{ci}\" />");
            }
            CiSource::Trace(path) => {
                let _ = writeln!(
                    out,
                    "    <prop id=\"carbon_intensity_trace\" value=\"{}\" />",
                    escape_attr(path)
                );
            }
        }
        out.push_str("  </host>\n");
    }
    out.push_str("</platform>\n");
    out
}

/// Collects every invariant violation of `spec`. An empty list means the platform is valid.
pub fn validate_platform(spec: &PlatformSpec) -> Vec<Violation> {
    let mut violations = Vec::new();
    if spec.hosts.is_empty() {
        violations.push(Violation {
            host_id: String::new(),
            field: "hosts",
            message: "platform has no hosts".into(),
        });
    }
    let mut seen = HashSet::new();
    for h in &spec.hosts {
        let mut push = |field: &'static str, message: String| {
            violations.push(Violation {
                host_id: h.id.clone(),
                field,
                message,
            })
        };
        if !seen.insert(h.id.as_str()) {
            push("id", "duplicate host id".into());
        }
        if h.core_count == 0 {
            push("core_count", "must be at least 1".into());
        }
        if !(h.speed_per_core.is_finite() && h.speed_per_core > 0.0) {
            push("speed", format!("must be positive, got {}", h.speed_per_core));
        }
        let p = &h.profile;
        for (field, v) in [
            ("idle_w", p.idle_w),
            ("epsilon_w", p.epsilon_w),
            ("allcores_w", p.allcores_w),
            ("off_w", p.off_w),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                push(field, format!("must be finite and non-negative, got {v}"));
            }
        }
        if p.idle_w > p.epsilon_w || p.epsilon_w > p.allcores_w {
            push("wattage_per_state", "requires idle <= epsilon <= allcores".into());
        }
        if let CiSource::Constant(ci) = h.ci_source {
            if !(ci.is_finite() && ci >= 0.0) {
                push("carbon_intensity", format!("must be non-negative, got {ci}"));
            }
        }
    }
    violations
}
