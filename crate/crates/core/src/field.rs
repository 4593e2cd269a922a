//! Conditioned velocity fields `V(z, t, c)` and classifier-free guidance.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GaussianMixtureModel;
use crate::vector::{check_dims, State, Velocity};

/// Reserved id for the unconditional (null) condition in files and configs.
pub const NULL_ID: &str = "null";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Condition {
    Null,
    Id(String),
}

impl Condition {
    pub fn id(name: impl Into<String>) -> Self {
        Condition::from(name.into())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Condition::Null)
    }
}

impl From<String> for Condition {
    fn from(s: String) -> Self {
        if s == NULL_ID {
            Condition::Null
        } else {
            Condition::Id(s)
        }
    }
}

impl From<&str> for Condition {
    fn from(s: &str) -> Self {
        Condition::from(s.to_string())
    }
}

impl From<Condition> for String {
    fn from(c: Condition) -> String {
        c.to_string()
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Null => f.write_str(NULL_ID),
            Condition::Id(s) => f.write_str(s),
        }
    }
}

/// An evaluable `V(z, t, c)`. Implementations are pure and shareable across threads.
pub trait VelocityField: Send + Sync {
    fn dim(&self) -> usize;

    fn velocity(&self, z: &State, t: f64, c: &Condition) -> Result<Velocity>;

    fn has_condition(&self, c: &Condition) -> bool;
}

impl<F: VelocityField + ?Sized> VelocityField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity(&self, z: &State, t: f64, c: &Condition) -> Result<Velocity> {
        (**self).velocity(z, t, c)
    }

    fn has_condition(&self, c: &Condition) -> bool {
        (**self).has_condition(c)
    }
}

/// Guided velocity `V(z,t,null) + w (V(z,t,c) - V(z,t,null))`.
///
/// Evaluated as `(1 - w) V_null + w V_c`, so `w = 0` and `w = 1` return the
/// corresponding raw velocity bit for bit.
pub fn cfg_velocity<F: VelocityField + ?Sized>(
    inner: &F,
    z: &State,
    t: f64,
    c: &Condition,
    omega: f64,
    null: &Condition,
) -> Result<Velocity> {
    if !omega.is_finite() {
        return Err(Error::invalid("guidance scale must be finite"));
    }
    if omega < 0.0 {
        log::warn!("negative guidance scale {omega}");
    }
    for cond in [c, null] {
        if !inner.has_condition(cond) {
            return Err(Error::UnknownCondition(cond.to_string()));
        }
    }
    if c == null {
        return inner.velocity(z, t, null);
    }
    let v_null = inner.velocity(z, t, null)?;
    let v_cond = inner.velocity(z, t, c)?;
    Ok(v_null.scale(1.0 - omega).add(&v_cond.scale(omega)))
}

/// Wraps a field with a fixed guidance scale.
#[derive(Debug, Clone)]
pub struct CfgField<F> {
    pub inner: F,
    pub omega: f64,
    pub null: Condition,
}

impl<F: VelocityField> CfgField<F> {
    pub fn new(inner: F, omega: f64) -> Self {
        Self {
            inner,
            omega,
            null: Condition::Null,
        }
    }
}

impl<F: VelocityField> VelocityField for CfgField<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn velocity(&self, z: &State, t: f64, c: &Condition) -> Result<Velocity> {
        cfg_velocity(&self.inner, z, t, c, self.omega, &self.null)
    }

    fn has_condition(&self, c: &Condition) -> bool {
        self.inner.has_condition(c)
    }
}

/// One Gaussian mixture per condition, plus the null mixture.
///
/// Unless overridden, the null mixture is the equal-weight union of every
/// registered condition's mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticField {
    conditions: BTreeMap<String, GaussianMixtureModel>,
    null: GaussianMixtureModel,
}

impl AnalyticField {
    pub fn new(conditions: BTreeMap<String, GaussianMixtureModel>) -> Result<Self> {
        let parts: Vec<&GaussianMixtureModel> = conditions.values().collect();
        let null = GaussianMixtureModel::union(&parts)?;
        Self::with_null(conditions, null)
    }

    pub fn with_null(
        conditions: BTreeMap<String, GaussianMixtureModel>,
        null: GaussianMixtureModel,
    ) -> Result<Self> {
        if conditions.is_empty() {
            return Err(Error::invalid("analytic field needs at least one condition"));
        }
        if conditions.contains_key(NULL_ID) {
            return Err(Error::invalid("`null` is reserved for the unconditional mixture"));
        }
        let d = null.dim();
        for (name, g) in &conditions {
            check_dims(&format!("condition {name}"), d, g.dim())?;
        }
        Ok(Self { conditions, null })
    }

    /// Convenience for a source/target pair.
    pub fn pair(
        src: (&str, GaussianMixtureModel),
        tar: (&str, GaussianMixtureModel),
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        map.insert(src.0.to_string(), src.1);
        map.insert(tar.0.to_string(), tar.1);
        Self::new(map)
    }

    pub fn mixture(&self, c: &Condition) -> Result<&GaussianMixtureModel> {
        match c {
            Condition::Null => Ok(&self.null),
            Condition::Id(id) => self
                .conditions
                .get(id)
                .ok_or_else(|| Error::UnknownCondition(id.clone())),
        }
    }

    pub fn conditions(&self) -> impl Iterator<Item = Condition> + '_ {
        self.conditions.keys().map(|k| Condition::Id(k.clone()))
    }
}

impl VelocityField for AnalyticField {
    fn dim(&self) -> usize {
        self.null.dim()
    }

    fn velocity(&self, z: &State, t: f64, c: &Condition) -> Result<Velocity> {
        self.mixture(c)?.velocity(z, t)
    }

    fn has_condition(&self, c: &Condition) -> bool {
        self.mixture(c).is_ok()
    }
}

/// Per-condition rectilinear grid over `(z_1, ..., z_d, t)` holding velocity vectors.
#[derive(Debug, Clone, PartialEq)]
struct Table {
    /// Sorted distinct node coordinates, `d` state axes followed by the time axis.
    axes: Vec<Vec<f64>>,
    /// Row-major over `axes`, each entry a `d`-vector.
    values: Vec<Vec<f64>>,
}

impl Table {
    fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (i, axis)| acc * axis.len() + i)
    }

    fn lookup(&self, coords: &[f64]) -> Result<Vec<f64>> {
        // (lower index, weight of upper node) per axis
        let mut brackets = Vec::with_capacity(coords.len());
        for (a, (&q, axis)) in coords.iter().zip(&self.axes).enumerate() {
            let (lo, hi) = (axis[0], axis[axis.len() - 1]);
            if !(q >= lo && q <= hi) {
                let name = if a + 1 == coords.len() {
                    "t".to_string()
                } else {
                    format!("z[{a}]")
                };
                return Err(Error::OutOfDomain(format!("{name} = {q} outside [{lo}, {hi}]")));
            }
            if axis.len() == 1 {
                brackets.push((0, 0.0));
                continue;
            }
            let i = axis.partition_point(|&x| x <= q).saturating_sub(1).min(axis.len() - 2);
            let w = (q - axis[i]) / (axis[i + 1] - axis[i]);
            brackets.push((i, w));
        }
        let d = self.values[0].len();
        let mut out = vec![0.0; d];
        let mut idx = vec![0usize; coords.len()];
        for corner in 0u64..(1u64 << coords.len()) {
            let mut weight = 1.0;
            let mut skip = false;
            for (a, &(i, w)) in brackets.iter().enumerate() {
                let upper = corner >> a & 1 == 1;
                if self.axes[a].len() == 1 {
                    if upper {
                        skip = true;
                        break;
                    }
                    idx[a] = 0;
                    continue;
                }
                idx[a] = if upper { i + 1 } else { i };
                weight *= if upper { w } else { 1.0 - w };
            }
            if skip || weight == 0.0 {
                continue;
            }
            let v = &self.values[self.flat_index(&idx)];
            for j in 0..d {
                out[j] += weight * v[j];
            }
        }
        Ok(out)
    }
}

/// Velocity field replayed from a table of nodes, multilinear between nodes.
/// Queries outside the tabulated box are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedField {
    dim: usize,
    conditions: Vec<Condition>,
    tables: BTreeMap<Condition, Table>,
}

struct Node {
    condition: Condition,
    t: f64,
    z: Vec<f64>,
    v: Vec<f64>,
    line: usize,
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

/// Whitespace-separated tokens with 1-based columns.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s, &line[s..]));
    }
    out.into_iter()
        .map(|(s, tok)| (line[..s].chars().count() + 1, tok))
        .collect()
}

fn parse_float(tok: &str, line: usize, col: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, col, format!("expected a number, found `{tok}`")))?;
    if !v.is_finite() {
        return Err(parse_err(line, col, format!("non-finite value `{tok}`")));
    }
    Ok(v)
}

impl TabulatedField {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header: Option<(usize, Vec<Condition>)> = None;
        let mut nodes = Vec::new();
        let mut last_line = 0;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            last_line = line_no;
            let line = raw.split('#').next().unwrap_or("");
            let toks = tokens(line);
            if toks.is_empty() {
                continue;
            }
            match &header {
                None => header = Some(Self::parse_header(&toks, line_no)?),
                Some((d, conds)) => nodes.push(Self::parse_record(&toks, line_no, *d, conds)?),
            }
        }
        let (dim, conditions) =
            header.ok_or_else(|| parse_err(last_line.max(1), 1, "missing `dim=... conditions=...` header"))?;
        if nodes.is_empty() {
            return Err(parse_err(last_line.max(1), 1, "no records"));
        }
        let mut tables = BTreeMap::new();
        for c in &conditions {
            let mine: Vec<&Node> = nodes.iter().filter(|n| &n.condition == c).collect();
            if mine.is_empty() {
                continue;
            }
            tables.insert(c.clone(), Self::build_table(&mine, dim)?);
        }
        Ok(Self {
            dim,
            conditions,
            tables,
        })
    }

    fn parse_header(toks: &[(usize, &str)], line: usize) -> Result<(usize, Vec<Condition>)> {
        let mut dim = None;
        let mut conds = None;
        for &(col, tok) in toks {
            if let Some(v) = tok.strip_prefix("dim=") {
                let d: usize = v
                    .parse()
                    .map_err(|_| parse_err(line, col, format!("bad dimension `{v}`")))?;
                if d == 0 {
                    return Err(parse_err(line, col, "dimension must be >= 1"));
                }
                dim = Some(d);
            } else if let Some(v) = tok.strip_prefix("conditions=") {
                let list: Vec<Condition> = v
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(Condition::from)
                    .collect();
                if list.is_empty() {
                    return Err(parse_err(line, col, "empty condition list"));
                }
                conds = Some(list);
            } else {
                return Err(parse_err(line, col, format!("unexpected header token `{tok}`")));
            }
        }
        match (dim, conds) {
            (Some(d), Some(c)) => Ok((d, c)),
            _ => Err(parse_err(line, 1, "header needs both `dim=` and `conditions=`")),
        }
    }

    fn parse_record(
        toks: &[(usize, &str)],
        line: usize,
        dim: usize,
        conds: &[Condition],
    ) -> Result<Node> {
        let mut condition = None;
        let mut t = None;
        let mut z = None;
        let mut v = None;
        let mut i = 0;
        while i < toks.len() {
            let (col, tok) = toks[i];
            let (key, first) = tok
                .split_once('=')
                .ok_or_else(|| parse_err(line, col, format!("expected key=value, found `{tok}`")))?;
            match key {
                "c" => {
                    let c = Condition::from(first);
                    if !conds.contains(&c) {
                        return Err(parse_err(line, col, format!("condition `{first}` not declared in header")));
                    }
                    condition = Some(c);
                    i += 1;
                }
                "t" => {
                    let tv = parse_float(first, line, col + 2)?;
                    if !(0.0..=1.0).contains(&tv) {
                        return Err(parse_err(line, col, format!("time {tv} outside [0, 1]")));
                    }
                    t = Some(tv);
                    i += 1;
                }
                "z" | "v" => {
                    let mut vals = vec![parse_float(first, line, col + 2)?];
                    for k in 1..dim {
                        let (c2, tok2) = *toks.get(i + k).ok_or_else(|| {
                            parse_err(line, col, format!("`{key}=` needs {dim} values, found {k}"))
                        })?;
                        vals.push(parse_float(tok2, line, c2)?);
                    }
                    i += dim;
                    if key == "z" {
                        z = Some(vals);
                    } else {
                        v = Some(vals);
                    }
                }
                other => return Err(parse_err(line, col, format!("unknown key `{other}`"))),
            }
        }
        let missing = |what: &str| parse_err(line, 1, format!("record missing `{what}=`"));
        Ok(Node {
            condition: condition.ok_or_else(|| missing("c"))?,
            t: t.ok_or_else(|| missing("t"))?,
            z: z.ok_or_else(|| missing("z"))?,
            v: v.ok_or_else(|| missing("v"))?,
            line,
        })
    }

    fn build_table(nodes: &[&Node], dim: usize) -> Result<Table> {
        let coords = |n: &Node| -> Vec<f64> {
            let mut c = n.z.clone();
            c.push(n.t);
            c
        };
        let mut axes: Vec<Vec<f64>> = vec![Vec::new(); dim + 1];
        for n in nodes {
            for (axis, x) in axes.iter_mut().zip(coords(n)) {
                axis.push(x);
            }
        }
        for axis in &mut axes {
            axis.sort_by(f64::total_cmp);
            axis.dedup();
        }
        let total: usize = axes.iter().map(Vec::len).product();
        let mut values: Vec<Option<Vec<f64>>> = vec![None; total];
        let mut table = Table {
            axes,
            values: Vec::new(),
        };
        for n in nodes {
            let idx: Vec<usize> = coords(n)
                .iter()
                .zip(&table.axes)
                .map(|(x, axis)| axis.partition_point(|a| a < x))
                .collect();
            let slot = &mut values[table.flat_index(&idx)];
            if slot.is_some() {
                return Err(parse_err(n.line, 1, format!("duplicate node for condition `{}`", n.condition)));
            }
            *slot = Some(n.v.clone());
        }
        let filled = values.iter().filter(|v| v.is_some()).count();
        if filled != total {
            let line = nodes.iter().map(|n| n.line).max().unwrap_or(1);
            return Err(parse_err(
                line,
                1,
                format!(
                    "incomplete grid for condition `{}`: {filled} of {total} nodes",
                    nodes[0].condition
                ),
            ));
        }
        table.values = values.into_iter().map(Option::unwrap).collect();
        Ok(table)
    }

    /// Samples `field` on the tensor grid `axes x times` for each condition.
    pub fn tabulate<F: VelocityField + ?Sized>(
        field: &F,
        conditions: &[Condition],
        axes: &[Vec<f64>],
        times: &[f64],
    ) -> Result<Self> {
        let dim = field.dim();
        check_dims("tabulation axes", dim, axes.len())?;
        let mut all_axes: Vec<Vec<f64>> = axes.to_vec();
        all_axes.push(times.to_vec());
        for axis in &all_axes {
            if axis.is_empty() || axis.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::invalid("tabulation axes must be non-empty and strictly increasing"));
            }
        }
        let total: usize = all_axes.iter().map(Vec::len).product();
        let mut tables = BTreeMap::new();
        for c in conditions {
            let mut values = Vec::with_capacity(total);
            for flat in 0..total {
                let mut rem = flat;
                let mut coords = vec![0.0; dim + 1];
                for a in (0..=dim).rev() {
                    let len = all_axes[a].len();
                    coords[a] = all_axes[a][rem % len];
                    rem /= len;
                }
                let t = coords.pop().unwrap_or(0.0);
                let z = State::new(coords)?;
                values.push(field.velocity(&z, t, c)?.into_vec());
            }
            tables.insert(
                c.clone(),
                Table {
                    axes: all_axes.clone(),
                    values,
                },
            );
        }
        Ok(Self {
            dim,
            conditions: conditions.to_vec(),
            tables,
        })
    }

    /// Text form readable by [`parse`](Self::parse).
    pub fn to_text(&self) -> String {
        let names: Vec<String> = self.conditions.iter().map(|c| c.to_string()).collect();
        let mut out = format!("dim={} conditions={}\n", self.dim, names.join(","));
        for (c, table) in &self.tables {
            let total = table.values.len();
            for flat in 0..total {
                let mut rem = flat;
                let mut coords = vec![0.0; table.axes.len()];
                for a in (0..table.axes.len()).rev() {
                    let len = table.axes[a].len();
                    coords[a] = table.axes[a][rem % len];
                    rem /= len;
                }
                let t = coords.pop().unwrap_or(0.0);
                let join = |xs: &[f64]| xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
                out.push_str(&format!(
                    "c={c} t={t:?} z={} v={}\n",
                    join(&coords),
                    join(&table.values[flat])
                ));
            }
        }
        out
    }
}

impl VelocityField for TabulatedField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, z: &State, t: f64, c: &Condition) -> Result<Velocity> {
        check_dims("tabulated query", self.dim, z.dim())?;
        let table = self
            .tables
            .get(c)
            .ok_or_else(|| Error::UnknownCondition(c.to_string()))?;
        let mut coords = z.as_slice().to_vec();
        coords.push(t);
        Velocity::new(table.lookup(&coords)?)
    }

    fn has_condition(&self, c: &Condition) -> bool {
        self.tables.contains_key(c)
    }
}
