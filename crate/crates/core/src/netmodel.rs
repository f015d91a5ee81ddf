//! Network description, case-file parsing and Kron reduction.
//!
//! A case is a per-unit description of a dc microgrid: the branch graph, the
//! terminal attached to each node and the master/droop references. From a case
//! we assemble the nodal admittance matrix partitioned by terminal class
//!
//! * `v`: the voltage-controlled master node,
//! * `p`: constant-power (and droop) terminals, the unknowns of the power flow,
//! * `r`: constant-resistance and zero-injection nodes,
//!
//! eliminate class `r` with a Kron reduction and, for island operation, also
//! eliminate the disconnected master node.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{DenseMatrix, LuFactors, NumericsError};

/// Header every case file carries before its branch rows.
pub const CASE_HEADER: [&str; 5] = ["from", "to", "r", "P", "inv_C"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("case has no branches")]
    EmptyGraph,
    #[error("network is disconnected: node {0} is unreachable from node {1}")]
    Disconnected(String, String),
    #[error("duplicate branch between {0} and {1}")]
    DuplicateBranch(String, String),
    #[error("branch {0}-{1} has nonpositive resistance {2}")]
    NonPositiveResistance(String, String, f64),
    #[error("branch connects node {0} to itself")]
    SelfLoop(String),
    #[error("master-slave operation requires a #master directive")]
    MissingMaster,
    #[error("invalid node {0}: {1}")]
    InvalidNode(String, String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("singular {what}: {source}")]
    Singular {
        what: &'static str,
        #[source]
        source: NumericsError,
    },
}

impl NetError {
    pub fn is_singular(&self) -> bool {
        matches!(self, NetError::Singular { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    MasterSlave,
    Island,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::MasterSlave => "master-slave",
            Mode::Island => "island",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "master-slave" | "masterslave" => Ok(Mode::MasterSlave),
            "island" => Ok(Mode::Island),
            other => Err(format!("unknown mode `{other}` (expected master-slave or island)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Master,
    Power,
    ZeroInjection,
    Resistive,
}

/// Terminal class used to partition the admittance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalClass {
    V,
    P,
    R,
}

impl NodeKind {
    pub fn class(self) -> TerminalClass {
        match self {
            NodeKind::Master => TerminalClass::V,
            NodeKind::Power => TerminalClass::P,
            NodeKind::ZeroInjection | NodeKind::Resistive => TerminalClass::R,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
    /// Injected power, positive into the grid.
    pub power: f64,
    /// Droop conductance `C`, zero when the terminal has no droop.
    pub droop: f64,
    /// Shunt conductance of a constant-resistance load.
    pub shunt: f64,
}

impl NodeSpec {
    pub fn power(id: impl Into<String>, power: f64, droop: f64) -> Self {
        Self {
            id: id.into(),
            kind: NodeKind::Power,
            power,
            droop,
            shunt: 0.0,
        }
    }

    pub fn zero_injection(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: NodeKind::ZeroInjection,
            power: 0.0,
            droop: 0.0,
            shunt: 0.0,
        }
    }

    pub fn resistive(id: impl Into<String>, shunt: f64) -> Self {
        Self {
            id: id.into(),
            kind: NodeKind::Resistive,
            power: 0.0,
            droop: 0.0,
            shunt,
        }
    }

    pub fn master(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: NodeKind::Master,
            power: 0.0,
            droop: 0.0,
            shunt: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub from: String,
    pub to: String,
    pub resistance: f64,
}

impl BranchSpec {
    pub fn new(from: impl Into<String>, to: impl Into<String>, resistance: f64) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            resistance,
        }
    }
}

/// Droop reference voltages `v_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoltageReference {
    /// A default for every droop node plus per-node overrides.
    Fixed {
        default: f64,
        overrides: BTreeMap<String, f64>,
    },
    /// Use the master-slave operating point of the same network as the
    /// droop references.
    OperatingPoint,
}

impl Default for VoltageReference {
    fn default() -> Self {
        VoltageReference::Fixed {
            default: 1.0,
            overrides: BTreeMap::new(),
        }
    }
}

/// Validated per-unit description of a dc microgrid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCase {
    nodes: Vec<NodeSpec>,
    branches: Vec<BranchSpec>,
    v_master: f64,
    v_ref: VoltageReference,
    mode: Mode,
}

impl GridCase {
    /// Builds a case and checks all structural invariants.
    ///
    /// In island mode a master node may still be present; it stands for the
    /// disconnected master converter and is eliminated as a zero-current node.
    pub fn new(
        nodes: Vec<NodeSpec>,
        branches: Vec<BranchSpec>,
        v_master: f64,
        v_ref: VoltageReference,
        mode: Mode,
    ) -> Result<Self, NetError> {
        let case = Self {
            nodes,
            branches,
            v_master,
            v_ref,
            mode,
        };
        case.validate()?;
        Ok(case)
    }

    fn validate(&self) -> Result<(), NetError> {
        if self.branches.is_empty() {
            return Err(NetError::EmptyGraph);
        }
        let mut index = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if index.insert(n.id.as_str(), i).is_some() {
                return Err(NetError::InvalidNode(n.id.clone(), "listed twice".into()));
            }
            validate_node(n)?;
        }
        let masters = self.nodes.iter().filter(|n| n.kind == NodeKind::Master).count();
        match (self.mode, masters) {
            (Mode::MasterSlave, 0) => return Err(NetError::MissingMaster),
            (_, m) if m > 1 => {
                return Err(NetError::InvalidNode(
                    self.nodes.iter().find(|n| n.kind == NodeKind::Master).unwrap().id.clone(),
                    format!("{m} master nodes, at most one allowed"),
                ))
            }
            _ => {}
        }
        if masters == 1 && !(self.v_master.is_finite() && self.v_master > 0.0) {
            return Err(NetError::InvalidNode(
                self.master().unwrap().id.clone(),
                format!("master voltage {} must be positive", self.v_master),
            ));
        }
        if let VoltageReference::Fixed { default, overrides } = &self.v_ref {
            if !(default.is_finite() && *default > 0.0) {
                return Err(NetError::Parse {
                    line: 0,
                    message: format!("reference voltage {default} must be positive"),
                });
            }
            for (id, v) in overrides {
                if !index.contains_key(id.as_str()) {
                    return Err(NetError::UnknownNode(id.clone()));
                }
                if !(v.is_finite() && *v > 0.0) {
                    return Err(NetError::InvalidNode(id.clone(), format!("reference voltage {v} must be positive")));
                }
            }
        }

        let mut seen = HashSet::new();
        let mut adjacency = vec![Vec::new(); self.nodes.len()];
        for b in &self.branches {
            let f = *index.get(b.from.as_str()).ok_or_else(|| NetError::UnknownNode(b.from.clone()))?;
            let t = *index.get(b.to.as_str()).ok_or_else(|| NetError::UnknownNode(b.to.clone()))?;
            if f == t {
                return Err(NetError::SelfLoop(b.from.clone()));
            }
            if !(b.resistance.is_finite() && b.resistance > 0.0) {
                return Err(NetError::NonPositiveResistance(b.from.clone(), b.to.clone(), b.resistance));
            }
            if !seen.insert((f.min(t), f.max(t))) {
                return Err(NetError::DuplicateBranch(b.from.clone(), b.to.clone()));
            }
            adjacency[f].push(t);
            adjacency[t].push(f);
        }

        let mut visited = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([0]);
        visited[0] = true;
        while let Some(u) = queue.pop_front() {
            for &w in &adjacency[u] {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
        if let Some(i) = visited.iter().position(|v| !v) {
            return Err(NetError::Disconnected(self.nodes[i].id.clone(), self.nodes[0].id.clone()));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn branches(&self) -> &[BranchSpec] {
        &self.branches
    }

    pub fn v_master(&self) -> f64 {
        self.v_master
    }

    pub fn v_ref(&self) -> &VoltageReference {
        &self.v_ref
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn master(&self) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.kind == NodeKind::Master)
    }

    /// `max |P_i|` over all terminals.
    pub fn max_abs_power(&self) -> f64 {
        self.nodes.iter().map(|n| n.power.abs()).fold(0.0, f64::max)
    }

    /// Same network in another operating mode.
    pub fn with_mode(&self, mode: Mode) -> Result<Self, NetError> {
        Self::new(self.nodes.clone(), self.branches.clone(), self.v_master, self.v_ref.clone(), mode)
    }

    /// Same network with every injected power multiplied by `factor`.
    pub fn with_power_scale(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for n in &mut out.nodes {
            n.power *= factor;
        }
        out
    }

    pub fn with_v_ref(&self, v_ref: VoltageReference) -> Result<Self, NetError> {
        Self::new(self.nodes.clone(), self.branches.clone(), self.v_master, v_ref, self.mode)
    }

    /// Same network with zero-injection nodes kept as explicit zero-power
    /// unknowns instead of being Kron-eliminated.
    pub fn with_explicit_zero_injection(&self) -> Self {
        let mut out = self.clone();
        for n in &mut out.nodes {
            if n.kind == NodeKind::ZeroInjection {
                n.kind = NodeKind::Power;
            }
        }
        out
    }

    /// Droop reference of a node.
    pub fn reference_voltage(&self, id: &str) -> Option<f64> {
        match &self.v_ref {
            VoltageReference::Fixed { default, overrides } => Some(*overrides.get(id).unwrap_or(default)),
            VoltageReference::OperatingPoint => None,
        }
    }
}

fn validate_node(n: &NodeSpec) -> Result<(), NetError> {
    let bad = |msg: &str| Err(NetError::InvalidNode(n.id.clone(), msg.to_string()));
    if !(n.power.is_finite() && n.droop.is_finite() && n.shunt.is_finite()) {
        return bad("non-finite parameter");
    }
    if n.droop < 0.0 {
        return bad("droop must be nonnegative");
    }
    if n.shunt < 0.0 {
        return bad("shunt conductance must be nonnegative");
    }
    match n.kind {
        NodeKind::ZeroInjection if n.power != 0.0 || n.droop != 0.0 || n.shunt != 0.0 => {
            bad("zero-injection node carries power, droop or shunt")
        }
        NodeKind::Master if n.power != 0.0 || n.droop != 0.0 || n.shunt != 0.0 => {
            bad("master node cannot carry power, droop or shunt")
        }
        NodeKind::Resistive if n.power != 0.0 || n.droop != 0.0 => bad("resistive node cannot carry power or droop"),
        NodeKind::Power if n.shunt != 0.0 => bad("power node cannot carry a shunt"),
        _ => Ok(()),
    }
}

#[derive(Default)]
struct Attachment {
    power: f64,
    inv_droop: f64,
    line: usize,
}

/// Parses a case file.
///
/// The format is CSV with header `from,to,r,P,inv_C`; the `P` and `inv_C`
/// columns of a row belong to its `to` node. Lines starting with `#` followed
/// by a keyword are directives:
///
/// ```text
/// #master <node> <v_v>
/// #mode master-slave|island
/// #vref <value> | #vref <node> <value> | #vref operating-point
/// #shunt <node> <g>
/// ```
///
/// `#` followed by whitespace (or alone) starts a comment line.
pub fn parse_case(text: &str) -> Result<GridCase, NetError> {
    let mut master: Option<(String, f64, usize)> = None;
    let mut mode = Mode::MasterSlave;
    let mut v_ref_default = 1.0;
    let mut v_ref_overrides = BTreeMap::new();
    let mut operating_point = false;
    let mut shunts: Vec<(String, f64, usize)> = Vec::new();
    let mut header_seen = false;

    let mut order: Vec<String> = Vec::new();
    let mut known: HashSet<String> = HashSet::new();
    let mut attached: HashMap<String, Attachment> = HashMap::new();
    let mut branches = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let err = |message: String| NetError::Parse { line, message };
        if let Some(rest) = trimmed.strip_prefix('#') {
            if rest.is_empty() || rest.starts_with(char::is_whitespace) || rest.starts_with('#') {
                continue;
            }
            let mut words = rest.split_whitespace();
            let keyword = words.next().unwrap_or_default();
            let args: Vec<&str> = words.collect();
            match keyword {
                "master" => {
                    let [node, value] = args[..] else {
                        return Err(err("expected `#master <node> <v_v>`".into()));
                    };
                    if master.is_some() {
                        return Err(err("more than one #master directive".into()));
                    }
                    master = Some((node.to_string(), parse_number(value, line)?, line));
                }
                "mode" => {
                    let [value] = args[..] else {
                        return Err(err("expected `#mode master-slave|island`".into()));
                    };
                    mode = value.parse().map_err(err)?;
                }
                "vref" => match args[..] {
                    ["operating-point"] => operating_point = true,
                    [value] => v_ref_default = parse_number(value, line)?,
                    [node, value] => {
                        v_ref_overrides.insert(node.to_string(), parse_number(value, line)?);
                    }
                    _ => return Err(err("expected `#vref <value>` or `#vref <node> <value>`".into())),
                },
                "shunt" => {
                    let [node, value] = args[..] else {
                        return Err(err("expected `#shunt <node> <g>`".into()));
                    };
                    shunts.push((node.to_string(), parse_number(value, line)?, line));
                }
                other => return Err(err(format!("unknown directive `#{other}`"))),
            }
            continue;
        }

        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if !header_seen {
            let matches = fields.len() == CASE_HEADER.len()
                && fields.iter().zip(CASE_HEADER).all(|(a, b)| a.eq_ignore_ascii_case(b));
            if !matches {
                return Err(err(format!("expected header `{}`", CASE_HEADER.join(","))));
            }
            header_seen = true;
            continue;
        }
        if fields.len() != CASE_HEADER.len() {
            return Err(err(format!("expected {} fields, found {}", CASE_HEADER.len(), fields.len())));
        }
        let (from, to) = (fields[0], fields[1]);
        if from.is_empty() || to.is_empty() {
            return Err(err("empty node label".into()));
        }
        let r = parse_number(fields[2], line)?;
        let power = parse_number(fields[3], line)?;
        let inv_droop = parse_number(fields[4], line)?;
        if inv_droop < 0.0 {
            return Err(err(format!("inv_C must be nonnegative, got {inv_droop}")));
        }
        for id in [from, to] {
            if known.insert(id.to_string()) {
                order.push(id.to_string());
            }
        }
        match attached.get(to) {
            Some(prev) if prev.power != power || prev.inv_droop != inv_droop => {
                return Err(err(format!(
                    "node {to} already has P={} inv_C={} from line {}",
                    prev.power, prev.inv_droop, prev.line
                )));
            }
            Some(_) => {}
            None => {
                attached.insert(to.to_string(), Attachment { power, inv_droop, line });
            }
        }
        branches.push(BranchSpec::new(from, to, r));
    }

    if !header_seen || branches.is_empty() {
        return Err(NetError::EmptyGraph);
    }

    let master_id = master.as_ref().map(|(id, _, _)| id.clone());
    if let Some((id, _, line)) = &master {
        if !known.contains(id) {
            return Err(NetError::Parse {
                line: *line,
                message: format!("master node {id} does not appear in any branch"),
            });
        }
    }
    let mut shunt_of = HashMap::new();
    for (id, g, line) in shunts {
        if !known.contains(&id) {
            return Err(NetError::Parse {
                line,
                message: format!("shunt node {id} does not appear in any branch"),
            });
        }
        if shunt_of.insert(id.clone(), g).is_some() {
            return Err(NetError::Parse {
                line,
                message: format!("node {id} has more than one #shunt directive"),
            });
        }
    }

    let nodes = order
        .into_iter()
        .map(|id| {
            let a = attached.remove(&id).unwrap_or_default();
            let droop = if a.inv_droop > 0.0 { 1.0 / a.inv_droop } else { 0.0 };
            let kind = if master_id.as_deref() == Some(id.as_str()) {
                NodeKind::Master
            } else if shunt_of.contains_key(&id) {
                NodeKind::Resistive
            } else if a.power == 0.0 && a.inv_droop == 0.0 {
                NodeKind::ZeroInjection
            } else {
                NodeKind::Power
            };
            NodeSpec {
                shunt: shunt_of.get(&id).copied().unwrap_or(0.0),
                id,
                kind,
                power: a.power,
                droop,
            }
        })
        .collect();

    let v_ref = if operating_point {
        VoltageReference::OperatingPoint
    } else {
        VoltageReference::Fixed {
            default: v_ref_default,
            overrides: v_ref_overrides,
        }
    };
    let v_master = master.map_or(1.0, |(_, v, _)| v);
    GridCase::new(nodes, branches, v_master, v_ref, mode)
}

fn parse_number(field: &str, line: usize) -> Result<f64, NetError> {
    let value: f64 = field.trim().parse().map_err(|_| NetError::Parse {
        line,
        message: format!("`{field}` is not a number"),
    })?;
    if !value.is_finite() {
        return Err(NetError::Parse {
            line,
            message: format!("`{field}` is not finite"),
        });
    }
    Ok(value)
}

/// Nodal admittance matrix with its terminal-class partition.
///
/// `full` is indexed in case node order; `v`, `p` and `r` list the node
/// indices of each class in that same order.
#[derive(Debug, Clone)]
pub struct PartitionedAdmittance {
    pub full: DenseMatrix,
    pub labels: Vec<String>,
    pub v: Vec<usize>,
    pub p: Vec<usize>,
    pub r: Vec<usize>,
}

impl PartitionedAdmittance {
    fn indices(&self, class: TerminalClass) -> &[usize] {
        match class {
            TerminalClass::V => &self.v,
            TerminalClass::P => &self.p,
            TerminalClass::R => &self.r,
        }
    }

    pub fn block(&self, rows: TerminalClass, cols: TerminalClass) -> DenseMatrix {
        self.full.select(self.indices(rows), self.indices(cols))
    }

    pub fn y_vv(&self) -> DenseMatrix {
        self.block(TerminalClass::V, TerminalClass::V)
    }
    pub fn y_vp(&self) -> DenseMatrix {
        self.block(TerminalClass::V, TerminalClass::P)
    }
    pub fn y_vr(&self) -> DenseMatrix {
        self.block(TerminalClass::V, TerminalClass::R)
    }
    pub fn y_pv(&self) -> DenseMatrix {
        self.block(TerminalClass::P, TerminalClass::V)
    }
    pub fn y_pp(&self) -> DenseMatrix {
        self.block(TerminalClass::P, TerminalClass::P)
    }
    pub fn y_pr(&self) -> DenseMatrix {
        self.block(TerminalClass::P, TerminalClass::R)
    }
    pub fn y_rv(&self) -> DenseMatrix {
        self.block(TerminalClass::R, TerminalClass::V)
    }
    pub fn y_rp(&self) -> DenseMatrix {
        self.block(TerminalClass::R, TerminalClass::P)
    }
    pub fn y_rr(&self) -> DenseMatrix {
        self.block(TerminalClass::R, TerminalClass::R)
    }

    /// Shunt conductances `g_rr` of the class-`r` nodes, zero for
    /// zero-injection nodes.
    pub fn shunts(&self, case: &GridCase) -> Vec<f64> {
        self.r.iter().map(|&i| case.nodes()[i].shunt).collect()
    }
}

/// Builds the branch admittance matrix: `-1/r` off the diagonal and the sum of
/// incident branch conductances on it. Shunts are not included.
pub fn assemble_admittance(case: &GridCase) -> PartitionedAdmittance {
    let n = case.nodes().len();
    let index: HashMap<&str, usize> = case.nodes().iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    let mut y = DenseMatrix::zeros(n, n);
    for b in case.branches() {
        let (f, t) = (index[b.from.as_str()], index[b.to.as_str()]);
        let g = 1.0 / b.resistance;
        y[(f, f)] += g;
        y[(t, t)] += g;
        y[(f, t)] -= g;
        y[(t, f)] -= g;
    }
    let of_class = |c: TerminalClass| -> Vec<usize> {
        case.nodes()
            .iter()
            .enumerate()
            .filter(|(_, node)| node.kind.class() == c)
            .map(|(i, _)| i)
            .collect()
    };
    PartitionedAdmittance {
        full: y,
        labels: case.nodes().iter().map(|n| n.id.clone()).collect(),
        v: of_class(TerminalClass::V),
        p: of_class(TerminalClass::P),
        r: of_class(TerminalClass::R),
    }
}

/// Kron-reduced network seen from the constant-power terminals.
#[derive(Debug, Clone)]
pub struct ReducedNetwork {
    pub y_pp: DenseMatrix,
    /// Coupling to the master node (`p × 1`, or `p × 0` without a master).
    pub y_pv: DenseMatrix,
    /// Reduced master self-admittance (`1 × 1`, or empty).
    pub y_vv: DenseMatrix,
    /// Island matrix, `0 × 0` until the master is eliminated.
    pub y_s: DenseMatrix,
    /// Node label of each row of `y_pp`.
    pub index_map: Vec<String>,
    pub master: Option<String>,
    pub mode: Mode,
}

impl ReducedNetwork {
    pub fn dim(&self) -> usize {
        self.y_pp.rows()
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index_map.iter().position(|l| l == id)
    }

    /// Matrix relating `i_p` to `v_p` in the network's mode.
    pub fn operating_matrix(&self) -> &DenseMatrix {
        match self.mode {
            Mode::MasterSlave => &self.y_pp,
            Mode::Island => &self.y_s,
        }
    }
}

fn symmetrized(a: &DenseMatrix) -> DenseMatrix {
    a.add(&a.transpose()).scale(0.5)
}

/// Eliminates the class-`r` nodes terminated by the shunts `g_rr`:
///
/// `Y_pv = y_pv − y_pr (y_rr + g_rr)⁻¹ y_rv`,
/// `Y_pp = y_pp − y_pr (y_rr + g_rr)⁻¹ y_rp`.
pub fn kron_reduce_resistive(blocks: &PartitionedAdmittance, g_rr: &[f64]) -> Result<ReducedNetwork, NetError> {
    if g_rr.len() != blocks.r.len() {
        return Err(NetError::Singular {
            what: "resistive block",
            source: NumericsError::Dimension(format!("{} shunts for {} class-r nodes", g_rr.len(), blocks.r.len())),
        });
    }
    let (mut y_pp, mut y_pv, mut y_vv) = (blocks.y_pp(), blocks.y_pv(), blocks.y_vv());
    if !blocks.r.is_empty() {
        let lu = LuFactors::factor(&blocks.y_rr().add_diagonal(g_rr)).map_err(|source| NetError::Singular {
            what: "resistive block y_rr + g_rr",
            source,
        })?;
        let x_p = lu.solve_matrix(&blocks.y_rp()).expect("conformal");
        let x_v = lu.solve_matrix(&blocks.y_rv()).expect("conformal");
        let y_pr = blocks.y_pr();
        y_pp = symmetrized(&y_pp.sub(&y_pr.matmul(&x_p)));
        y_pv = y_pv.sub(&y_pr.matmul(&x_v));
        y_vv = y_vv.sub(&blocks.y_vr().matmul(&x_v));
    }
    Ok(ReducedNetwork {
        y_s: DenseMatrix::zeros(0, 0),
        index_map: blocks.p.iter().map(|&i| blocks.labels[i].clone()).collect(),
        master: blocks.v.first().map(|&i| blocks.labels[i].clone()),
        mode: Mode::MasterSlave,
        y_pp,
        y_pv,
        y_vv,
    })
}

/// Eliminates the disconnected master node, `Y_s = Y_pp − Y_pv Y_vv⁻¹ Y_vp`.
/// Without a master node `Y_s = Y_pp`.
pub fn kron_reduce_master(net: &ReducedNetwork) -> Result<ReducedNetwork, NetError> {
    let y_s = if net.y_vv.is_empty() {
        net.y_pp.clone()
    } else {
        let lu = LuFactors::factor(&net.y_vv).map_err(|source| NetError::Singular {
            what: "master block",
            source,
        })?;
        let x = lu.solve_matrix(&net.y_pv.transpose()).expect("conformal");
        symmetrized(&net.y_pp.sub(&net.y_pv.matmul(&x)))
    };
    Ok(ReducedNetwork {
        y_s,
        mode: Mode::Island,
        ..net.clone()
    })
}

/// Assembles and reduces a case for its own operating mode.
pub fn reduce(case: &GridCase) -> Result<ReducedNetwork, NetError> {
    let blocks = assemble_admittance(case);
    if blocks.p.is_empty() {
        return Err(NetError::InvalidNode(
            case.nodes()[0].id.clone(),
            "network has no constant-power terminals".into(),
        ));
    }
    let net = kron_reduce_resistive(&blocks, &blocks.shunts(case))?;
    match case.mode() {
        Mode::MasterSlave => Ok(net),
        Mode::Island => kron_reduce_master(&net),
    }
}

/// Single-node Kron elimination of row/column `k` from a square matrix.
pub fn eliminate_node(y: &DenseMatrix, k: usize) -> Result<DenseMatrix, NetError> {
    let n = y.rows();
    let pivot = y[(k, k)];
    if pivot.abs() <= crate::numerics::SINGULAR_RTOL * crate::numerics::induced_norm(y) {
        return Err(NetError::Singular {
            what: "eliminated node",
            source: NumericsError::Singular { column: k, pivot },
        });
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != k).collect();
    let mut out = DenseMatrix::zeros(n - 1, n - 1);
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            out[(a, b)] = y[(i, j)] - y[(i, k)] * y[(k, j)] / pivot;
        }
    }
    Ok(out)
}
