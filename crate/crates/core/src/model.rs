//! Problem data: agents, trading network, market instance and report profiles.
//!
//! A [`RawInstance`] mirrors the JSON configuration schema one to one. It is
//! turned into a [`MarketInstance`] only through [`validate_instance`], which
//! collects every violated invariant instead of stopping at the first one.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError, ValidationErrorKind, ValidationErrors};

/// Environment variable overriding the bundled data directory.
pub const DATA_DIR_ENV: &str = "P2P_MARKET_DATA";

/// Default strict-interior margin for generation and demand bounds.
pub const DEFAULT_OMEGA: f64 = 1e-3;

/// One prosumer. Energies in MWh, prices in $/MWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    /// Position in the instance; node 0 is the interface to the upstream grid.
    #[serde(skip)]
    pub id: usize,
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub a_tilde: f64,
    pub b_tilde: f64,
    pub d_star: f64,
    pub delta_g: f64,
    pub g_min: f64,
    pub g_max: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub omega_g: f64,
    pub omega_d: f64,
    pub alpha: f64,
    pub a_budget: f64,
    /// Bus number in the source drawing, when the instance comes from one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure_bus: Option<u32>,
}

impl AgentParams {
    /// Private information `y = D* - ΔG`.
    pub fn private_value(&self) -> f64 {
        self.d_star - self.delta_g
    }

    /// Tightened generation bounds `[g_min + ω, g_max - ω]`.
    pub fn g_bounds(&self) -> (f64, f64) {
        (self.g_min + self.omega_g, self.g_max - self.omega_g)
    }

    /// Tightened demand bounds `[d_min + ω, d_max - ω]`.
    pub fn d_bounds(&self) -> (f64, f64) {
        (self.d_min + self.omega_d, self.d_max - self.omega_d)
    }

    /// `b / a`, the generation offset entering the clearing price.
    pub fn cost_ratio(&self) -> f64 {
        self.b / self.a
    }
}

/// Undirected trading link. `kappa == None` means unbounded capacity, which
/// is how links to the root node are normally given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, Option<f64>)", into = "(usize, usize, Option<f64>)")]
pub struct Edge {
    pub n: usize,
    pub m: usize,
    pub kappa: Option<f64>,
}

impl From<(usize, usize, Option<f64>)> for Edge {
    fn from((n, m, kappa): (usize, usize, Option<f64>)) -> Self {
        Edge { n, m, kappa }
    }
}

impl From<Edge> for (usize, usize, Option<f64>) {
    fn from(e: Edge) -> Self {
        (e.n, e.m, e.kappa)
    }
}

/// Product differentiation prices `c_nm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PriceMode {
    Homogeneous { c: f64 },
    /// `matrix[n][m] = c_nm`; the diagonal is unused.
    Heterogeneous { matrix: Vec<Vec<f64>> },
}

impl PriceMode {
    pub fn price(&self, n: usize, m: usize) -> f64 {
        match self {
            PriceMode::Homogeneous { c } => *c,
            PriceMode::Heterogeneous { matrix } => matrix[n][m],
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        matches!(self, PriceMode::Homogeneous { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTopology {
    pub edges: Vec<Edge>,
    pub prices: PriceMode,
}

/// Instance data exactly as found in a configuration file, not yet validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawInstance {
    pub agents: Vec<AgentParams>,
    pub topology: RawTopology,
    pub p0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    n_agents: usize,
    edges: Vec<Edge>,
    prices: PriceMode,
    /// Non-root neighbours with finite capacity, per node, sorted by index.
    peers: Vec<Vec<(usize, f64)>>,
}

impl NetworkTopology {
    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn prices(&self) -> &PriceMode {
        &self.prices
    }

    /// Neighbours `m != 0` of node `n` with their capacity `κ_nm`.
    pub fn peers(&self, n: usize) -> &[(usize, f64)] {
        &self.peers[n]
    }

    /// Capacity of the link `{n, m}`; `None` if there is no such link and
    /// `Some(f64::INFINITY)` for unbounded links.
    pub fn capacity(&self, n: usize, m: usize) -> Option<f64> {
        self.edges
            .iter()
            .find(|e| (e.n == n && e.m == m) || (e.n == m && e.m == n))
            .map(|e| e.kappa.unwrap_or(f64::INFINITY))
    }
}

/// A validated market: agents, trading network and the wholesale price `p⁰`.
/// Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketInstance {
    agents: Vec<AgentParams>,
    topology: NetworkTopology,
    p0: f64,
}

impl MarketInstance {
    pub fn agents(&self) -> &[AgentParams] {
        &self.agents
    }

    pub fn agent(&self, n: usize) -> &AgentParams {
        &self.agents[n]
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn prices(&self) -> &PriceMode {
        &self.topology.prices
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// True private values `y_n = D*_n - ΔG_n`.
    pub fn true_values(&self) -> Vec<f64> {
        self.agents.iter().map(AgentParams::private_value).collect()
    }

    pub fn to_raw(&self) -> RawInstance {
        RawInstance {
            agents: self.agents.clone(),
            topology: RawTopology {
                edges: self.topology.edges.clone(),
                prices: self.topology.prices.clone(),
            },
            p0: self.p0,
        }
    }

    /// Same instance with the deviation radius and/or privacy budget of every
    /// agent overwritten.
    pub fn with_privacy(&self, alpha: Option<f64>, a_budget: Option<f64>) -> Result<MarketInstance> {
        let mut raw = self.to_raw();
        for agent in &mut raw.agents {
            if let Some(alpha) = alpha {
                agent.alpha = alpha;
            }
            if let Some(a_budget) = a_budget {
                agent.a_budget = a_budget;
            }
        }
        Ok(validate_instance(raw)?)
    }

    pub fn with_prices(&self, prices: PriceMode) -> Result<MarketInstance> {
        let mut raw = self.to_raw();
        raw.topology.prices = prices;
        Ok(validate_instance(raw)?)
    }
}

/// A report profile: deterministic reports `ŷ` and noise variances `V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportProfile {
    pub y_hat: Vec<f64>,
    pub variance: Vec<f64>,
}

impl ReportProfile {
    pub fn new(y_hat: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if y_hat.len() != variance.len() {
            return Err(Error::InvalidOptions(format!(
                "report profile lengths differ ({} reports, {} variances)",
                y_hat.len(),
                variance.len()
            )));
        }
        if let Some(&v) = variance.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::NegativeVariance(v));
        }
        Ok(ReportProfile { y_hat, variance })
    }

    /// `ŷ = y`, `V = 0`.
    pub fn truthful(instance: &MarketInstance) -> Self {
        ReportProfile {
            y_hat: instance.true_values(),
            variance: vec![0.0; instance.n_agents()],
        }
    }

    pub fn len(&self) -> usize {
        self.y_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_hat.is_empty()
    }
}

struct Collector(Vec<ValidationError>);

impl Collector {
    fn push(&mut self, path: impl Into<String>, kind: ValidationErrorKind) {
        self.0.push(ValidationError { path: path.into(), kind });
    }

    fn finite(&mut self, path: impl Into<String>, value: f64) -> bool {
        if value.is_finite() {
            true
        } else {
            self.push(path, ValidationErrorKind::NonFinite);
            false
        }
    }
}

/// Checks every invariant of `raw` and returns the validated instance, or the
/// complete list of violations.
pub fn validate_instance(raw: RawInstance) -> Result<MarketInstance, ValidationErrors> {
    let mut errs = Collector(Vec::new());
    let n_agents = raw.agents.len();
    if n_agents == 0 {
        errs.push("agents", ValidationErrorKind::TooFewAgents { found: 0 });
    }

    for (i, agent) in raw.agents.iter().enumerate() {
        validate_agent(&mut errs, i, agent);
    }
    errs.finite("p0", raw.p0);

    validate_edges(&mut errs, n_agents, &raw.topology.edges);
    validate_prices(&mut errs, n_agents, &raw.topology.prices);

    if !errs.0.is_empty() {
        return Err(ValidationErrors(errs.0));
    }

    let mut agents = raw.agents;
    for (i, agent) in agents.iter_mut().enumerate() {
        agent.id = i;
    }
    let mut peers = vec![Vec::new(); n_agents];
    for e in &raw.topology.edges {
        if e.n == 0 || e.m == 0 {
            continue;
        }
        let kappa = e.kappa.unwrap_or(f64::INFINITY);
        for (a, b) in [(e.n, e.m), (e.m, e.n)] {
            if !peers[a].iter().any(|&(k, _)| k == b) {
                peers[a].push((b, kappa));
            }
        }
    }
    for list in &mut peers {
        list.sort_by_key(|&(k, _)| k);
    }

    Ok(MarketInstance {
        agents,
        topology: NetworkTopology {
            n_agents,
            edges: raw.topology.edges,
            prices: raw.topology.prices,
            peers,
        },
        p0: raw.p0,
    })
}

fn validate_agent(errs: &mut Collector, i: usize, agent: &AgentParams) {
    let path = |field: &str| format!("agents[{i}].{field}");
    let fields = [
        ("a", agent.a),
        ("b", agent.b),
        ("d", agent.d),
        ("a_tilde", agent.a_tilde),
        ("b_tilde", agent.b_tilde),
        ("d_star", agent.d_star),
        ("delta_g", agent.delta_g),
        ("g_min", agent.g_min),
        ("g_max", agent.g_max),
        ("d_min", agent.d_min),
        ("d_max", agent.d_max),
        ("omega_g", agent.omega_g),
        ("omega_d", agent.omega_d),
        ("alpha", agent.alpha),
        ("a_budget", agent.a_budget),
    ];
    let mut all_finite = true;
    for (name, value) in fields {
        all_finite &= errs.finite(path(name), value);
    }

    for (name, value) in [("a", agent.a), ("a_tilde", agent.a_tilde), ("a_budget", agent.a_budget)] {
        if value.is_finite() && value <= 0.0 {
            errs.push(path(name), ValidationErrorKind::NonPositiveCoefficient { value });
        }
    }
    for (name, value) in [("alpha", agent.alpha), ("omega_g", agent.omega_g), ("omega_d", agent.omega_d)] {
        if value.is_finite() && value < 0.0 {
            errs.push(path(name), ValidationErrorKind::NegativeValue { value });
        }
    }
    if all_finite {
        let (lower, upper) = agent.g_bounds();
        if !(lower < upper) {
            errs.push(path("g_max"), ValidationErrorKind::EmptyTightenedInterval { lower, upper });
        }
        let (lower, upper) = agent.d_bounds();
        if !(lower < upper) {
            errs.push(path("d_max"), ValidationErrorKind::EmptyTightenedInterval { lower, upper });
        }
    }
}

fn validate_edges(errs: &mut Collector, n_agents: usize, edges: &[Edge]) {
    let mut seen: BTreeMap<(usize, usize), Option<f64>> = BTreeMap::new();
    for (k, e) in edges.iter().enumerate() {
        let path = format!("topology.edges[{k}]");
        if e.n >= n_agents || e.m >= n_agents || e.n == e.m {
            errs.push(path, ValidationErrorKind::InvalidEdge { n: e.n, m: e.m });
            continue;
        }
        if let Some(kappa) = e.kappa {
            if !errs.finite(format!("{path}.kappa"), kappa) {
                continue;
            }
            if kappa < 0.0 {
                errs.push(format!("{path}.kappa"), ValidationErrorKind::NegativeCapacity { value: kappa });
                continue;
            }
        }
        let key = (e.n.min(e.m), e.n.max(e.m));
        match seen.get(&key) {
            Some(&previous) if previous != e.kappa => {
                errs.push(
                    format!("{path}.kappa"),
                    ValidationErrorKind::AsymmetricCapacity {
                        first: previous.unwrap_or(f64::INFINITY),
                        second: e.kappa.unwrap_or(f64::INFINITY),
                    },
                );
            }
            Some(_) => {}
            None => {
                seen.insert(key, e.kappa);
            }
        }
    }
    for node in 1..n_agents {
        if !seen.contains_key(&(0, node)) {
            errs.push("topology.edges", ValidationErrorKind::MissingRootLink { node });
        }
    }
}

fn validate_prices(errs: &mut Collector, n_agents: usize, prices: &PriceMode) {
    match prices {
        PriceMode::Homogeneous { c } => {
            errs.finite("topology.prices.c", *c);
        }
        PriceMode::Heterogeneous { matrix } => {
            if matrix.len() != n_agents {
                errs.push(
                    "topology.prices.matrix",
                    ValidationErrorKind::AgentCountMismatch { expected: n_agents, found: matrix.len() },
                );
                return;
            }
            let mut shape_ok = true;
            for (n, row) in matrix.iter().enumerate() {
                if row.len() != n_agents {
                    errs.push(
                        format!("topology.prices.matrix[{n}]"),
                        ValidationErrorKind::AgentCountMismatch { expected: n_agents, found: row.len() },
                    );
                    shape_ok = false;
                    continue;
                }
                for (m, &c) in row.iter().enumerate() {
                    shape_ok &= errs.finite(format!("topology.prices.matrix[{n}][{m}]"), c);
                }
            }
            if !shape_ok {
                return;
            }
            for node in 1..n_agents {
                let (c_0n, c_n0) = (matrix[0][node], matrix[node][0]);
                if c_0n != c_n0 {
                    errs.push(
                        format!("topology.prices.matrix[{node}][0]"),
                        ValidationErrorKind::AsymmetricRootPrice { node, c_0n, c_n0 },
                    );
                }
            }
            for n in 1..n_agents {
                for m in (n + 1)..n_agents {
                    if matrix[n][m] == matrix[m][n] {
                        errs.push(
                            format!("topology.prices.matrix[{n}][{m}]"),
                            ValidationErrorKind::SymmetricPricePair { n, m, price: matrix[n][m] },
                        );
                    }
                }
            }
        }
    }
}

/// Parses and validates a JSON configuration document.
pub fn load_instance(config_text: &str) -> Result<MarketInstance> {
    let raw: RawInstance = serde_json::from_str(config_text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: parse_message(&e),
    })?;
    Ok(validate_instance(raw)?)
}

fn parse_message(e: &serde_json::Error) -> String {
    // serde reports "missing field `p0` at line 1 column 80"; keep the field name only.
    let text = e.to_string();
    let text = text.split(" at line ").next().unwrap_or(&text).to_string();
    match text.strip_prefix("missing field `").and_then(|r| r.strip_suffix('`')) {
        Some(field) => format!("{field} required"),
        None => text,
    }
}

pub fn load_instance_file(path: impl AsRef<Path>) -> Result<MarketInstance> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_instance(&text)
}

/// Pretty JSON in the configuration schema. Floats are written in shortest
/// round-trip form, so [`load_instance`] restores them bit for bit.
pub fn serialize_instance(instance: &MarketInstance) -> String {
    let mut text = serde_json::to_string_pretty(&instance.to_raw()).expect("instance serializes");
    text.push('\n');
    text
}

/// Bundled data directory, overridable through `P2P_MARKET_DATA`.
pub fn data_dir() -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => PathBuf::from(dir),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"),
    }
}

/// Resolves an instance argument: an existing path is used as is, anything
/// else is looked up in the data directory.
pub fn resolve_instance_path(arg: impl AsRef<Path>) -> PathBuf {
    let arg = arg.as_ref();
    if arg.exists() {
        arg.to_path_buf()
    } else {
        data_dir().join(arg)
    }
}

// Table of utility parameters for the 13 remaining buses: (ã, b̃, d, D̄, Ḡ).
const IEEE13_TABLE: [(f64, f64, f64, f64, f64); 13] = [
    (1.5, 0.0, 9.0, 25.0, 100.0),
    (1.18, 5.09, 15.0, 26.7, 100.0),
    (1.0, 3.78, 14.0, 99.2, 80.0),
    (0.57, 4.36, 0.0, 52.8, 20.0),
    (1.24, 5.03, 0.0, 12.6, 20.0),
    (1.62, 3.04, 2.0, 16.2, 20.0),
    (1.54, 4.29, 0.0, 19.9, 20.0),
    (1.5, 0.0, 11.0, 25.0, 50.0),
    (0.31, 2.75, 0.0, 34.5, 20.0),
    (4.36, 4.67, 0.0, 14.0, 20.0),
    (1.63, 3.32, 0.0, 8.5, 20.0),
    (5.16, 5.5, 0.0, 11.1, 20.0),
    (1.96, 6.21, 0.0, 18.5, 20.0),
];

// Node k <- drawing bus: 1..7 map to k = bus - 1, bus 8 (interim) is dropped,
// 9..14 map to k = bus - 2. Node 0 is the grid connection with no load.
const IEEE13_BUS: [u32; 13] = [1, 2, 3, 4, 5, 6, 7, 9, 10, 11, 12, 13, 14];
const IEEE13_D_STAR: [f64; 13] = [
    0.0, 6.57, 12.55, 8.75, 6.37, 4.33, 4.0, 9.42, 3.27, 4.51, 3.26, 5.63, 5.28,
];
const IEEE13_RES: [(usize, f64); 3] = [(2, 7.5), (5, 4.99), (7, 15.51)];

// Labelled non-root links, in node indices.
const IEEE13_LINKS: [(usize, usize, f64); 17] = [
    (1, 2, 36.0),
    (1, 3, 65.0),
    (1, 4, 50.0),
    (2, 3, 65.0),
    (3, 4, 45.0),
    (3, 6, 32.0),
    (3, 7, 32.0),
    (4, 5, 45.0),
    (5, 9, 18.0),
    (5, 10, 32.0),
    (5, 11, 32.0),
    (6, 7, 32.0),
    (7, 8, 32.0),
    (7, 12, 12.0),
    (8, 9, 12.0),
    (10, 11, 12.0),
    (11, 12, 12.0),
];

/// The 13-node test instance derived from the IEEE 14-bus system.
///
/// Homogeneous `c = 1`, `p⁰ = 5`, `a = 0.5`, `b = 6`, `α = 3`, `A = 10`,
/// `ω = 1e-3`. Generation bounds are `[0, Ḡ]`; demand bounds are
/// `[-D̄, D̄]` because the closed-form demand of the grid node and of the
/// most flexible consumer is negative at any price that keeps generation
/// non-negative.
pub fn ieee13_instance() -> MarketInstance {
    let agents = IEEE13_TABLE
        .iter()
        .enumerate()
        .map(|(k, &(a_tilde, b_tilde, d, d_bar, g_bar))| AgentParams {
            id: k,
            a: 0.5,
            b: 6.0,
            d,
            a_tilde,
            b_tilde,
            d_star: IEEE13_D_STAR[k],
            delta_g: IEEE13_RES.iter().find(|(n, _)| *n == k).map_or(0.0, |&(_, g)| g),
            g_min: 0.0,
            g_max: g_bar,
            d_min: -d_bar,
            d_max: d_bar,
            omega_g: DEFAULT_OMEGA,
            omega_d: DEFAULT_OMEGA,
            alpha: 3.0,
            a_budget: 10.0,
            figure_bus: Some(IEEE13_BUS[k]),
        })
        .collect::<Vec<_>>();

    let mut edges: Vec<Edge> = (1..agents.len()).map(|m| Edge { n: 0, m, kappa: None }).collect();
    edges.extend(IEEE13_LINKS.iter().map(|&(n, m, k)| Edge { n, m, kappa: Some(k) }));

    let raw = RawInstance {
        agents,
        topology: RawTopology { edges, prices: PriceMode::Homogeneous { c: 1.0 } },
        p0: 5.0,
    };
    validate_instance(raw).expect("bundled IEEE instance is valid")
}
