//! Input-affine systems with known and unknown inputs, their JSON model
//! format, and the state-rewriting operations used by the solver.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symcore::{free_symbols, parse, Expr, Oracle, Symbol};

pub const TIME: &str = "t";
const RESERVED: [&str; 2] = [TIME, "pi"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnownInput {
    pub name: String,
    pub field: Vec<Expr>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnknownInput {
    /// Name this input's symbol gets once it is moved into the state.
    pub name: String,
    pub field: Vec<Expr>,
    /// Index of the originating unknown input in the source model.
    pub origin: usize,
    /// Derivative order relative to the originating input.
    pub order: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub original_dim: usize,
    pub original_inputs: Vec<String>,
    /// Per original unknown input, the highest derivative order stored in
    /// the state, if any.
    pub orders: Vec<Option<usize>>,
    pub log: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SystemModel {
    pub state: Vec<Symbol>,
    pub time_variant: bool,
    pub drift: Vec<Expr>,
    pub known: Vec<KnownInput>,
    pub unknown: Vec<UnknownInput>,
    pub outputs: Vec<Expr>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldDoc {
    pub name: String,
    pub field: Vec<String>,
}

/// Serialized form of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub state: Vec<String>,
    #[serde(default)]
    pub time_variant: bool,
    #[serde(default)]
    pub drift: Option<Vec<String>>,
    #[serde(default)]
    pub known_inputs: Vec<FieldDoc>,
    #[serde(default)]
    pub unknown_inputs: Vec<FieldDoc>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<ProvenanceDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceDoc {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub unknown_origin: Vec<(usize, usize)>,
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_in(src: &str, context: impl Into<String>) -> Result<Expr> {
    parse(src).map_err(|source| Error::Parse { context: context.into(), source })
}

fn parse_vector(src: &[String], n: usize, context: &str) -> Result<Vec<Expr>> {
    if src.len() != n {
        return Err(Error::Model(format!(
            "dimension mismatch: {context} has {} entries, state has {n}",
            src.len()
        )));
    }
    src.iter().enumerate().map(|(i, s)| parse_in(s, format!("{context}[{i}]"))).collect()
}

fn print_vector(v: &[Expr]) -> Vec<String> {
    v.iter().map(ToString::to_string).collect()
}

impl ModelDoc {
    pub fn from_json(text: &str) -> Result<ModelDoc> {
        serde_json::from_str(text).map_err(|e| {
            Error::Model(format!("line {} column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model documents always serialize")
    }
}

impl SystemModel {
    pub fn from_json(text: &str) -> Result<SystemModel> {
        SystemModel::from_doc(&ModelDoc::from_json(text)?)
    }

    pub fn from_doc(doc: &ModelDoc) -> Result<SystemModel> {
        let n = doc.state.len();
        if n == 0 {
            return Err(Error::Model("state must have at least one coordinate".into()));
        }
        if doc.outputs.is_empty() {
            return Err(Error::Model("at least one output is required".into()));
        }
        let mut seen = HashSet::new();
        let names = doc
            .state
            .iter()
            .map(|s| ("state", s))
            .chain(doc.known_inputs.iter().map(|f| ("known input", &f.name)))
            .chain(doc.unknown_inputs.iter().map(|f| ("unknown input", &f.name)));
        for (kind, name) in names {
            if !is_identifier(name) {
                return Err(Error::Model(format!("{kind} name `{name}` is not an identifier")));
            }
            if RESERVED.contains(&name.as_str()) {
                return Err(Error::Model(format!("{kind} name `{name}` is reserved")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Model(format!("duplicate symbol `{name}`")));
            }
        }
        let state: Vec<Symbol> = doc.state.iter().map(|s| Symbol::new(s)).collect();
        let drift = match &doc.drift {
            Some(d) => parse_vector(d, n, "drift")?,
            None => vec![Expr::zero(); n],
        };
        let known = doc
            .known_inputs
            .iter()
            .map(|f| {
                Ok(KnownInput {
                    name: f.name.clone(),
                    field: parse_vector(&f.field, n, &format!("known input `{}`", f.name))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let origins = doc.provenance.as_ref().map(|p| p.unknown_origin.clone());
        let unknown = doc
            .unknown_inputs
            .iter()
            .enumerate()
            .map(|(j, f)| {
                let (origin, order) = origins.as_ref().and_then(|o| o.get(j).copied()).unwrap_or((j, 0));
                Ok(UnknownInput {
                    name: f.name.clone(),
                    field: parse_vector(&f.field, n, &format!("unknown input `{}`", f.name))?,
                    origin,
                    order,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let outputs =
            doc.outputs.iter().enumerate().map(|(i, s)| parse_in(s, format!("outputs[{i}]"))).collect::<Result<Vec<_>>>()?;
        let provenance = match &doc.provenance {
            Some(p) => p.provenance.clone(),
            None => Provenance {
                original_dim: n,
                original_inputs: doc.unknown_inputs.iter().map(|f| f.name.clone()).collect(),
                orders: vec![None; doc.unknown_inputs.len()],
                log: Vec::new(),
            },
        };
        let model =
            SystemModel { state, time_variant: doc.time_variant, drift, known, unknown, outputs, provenance };
        model.check_symbols()?;
        Ok(model)
    }

    fn check_symbols(&self) -> Result<()> {
        let t = Symbol::new(TIME);
        let mut all: Vec<Expr> = self.drift.clone();
        all.extend(self.known.iter().flat_map(|f| f.field.iter().copied()));
        all.extend(self.unknown.iter().flat_map(|f| f.field.iter().copied()));
        all.extend(self.outputs.iter().copied());
        for s in free_symbols(&all) {
            if self.state.contains(&s) {
                continue;
            }
            if s == t {
                if self.time_variant {
                    continue;
                }
                return Err(Error::Model(
                    "expressions use `t` but the model is not marked time_variant".into(),
                ));
            }
            return Err(Error::Model(format!("undeclared symbol `{s}`")));
        }
        Ok(())
    }

    pub fn to_doc(&self) -> ModelDoc {
        let pristine = self.provenance.log.is_empty()
            && self.unknown.iter().enumerate().all(|(j, u)| u.origin == j && u.order == 0);
        ModelDoc {
            state: self.state.iter().map(Symbol::name).collect(),
            time_variant: self.time_variant,
            drift: Some(print_vector(&self.drift)),
            known_inputs: self
                .known
                .iter()
                .map(|f| FieldDoc { name: f.name.clone(), field: print_vector(&f.field) })
                .collect(),
            unknown_inputs: self
                .unknown
                .iter()
                .map(|f| FieldDoc { name: f.name.clone(), field: print_vector(&f.field) })
                .collect(),
            outputs: print_vector(&self.outputs),
            provenance: (!pristine).then(|| ProvenanceDoc {
                provenance: self.provenance.clone(),
                unknown_origin: self.unknown.iter().map(|u| (u.origin, u.order)).collect(),
            }),
        }
    }

    pub fn to_json(&self) -> String {
        self.to_doc().to_json()
    }

    pub fn n(&self) -> usize {
        self.state.len()
    }

    pub fn m_u(&self) -> usize {
        self.known.len()
    }

    pub fn m_w(&self) -> usize {
        self.unknown.len()
    }

    pub fn state_names(&self) -> Vec<String> {
        self.state.iter().map(Symbol::name).collect()
    }

    pub fn known_fields(&self) -> Vec<Vec<Expr>> {
        self.known.iter().map(|f| f.field.clone()).collect()
    }

    pub fn unknown_fields(&self) -> Vec<Vec<Expr>> {
        self.unknown.iter().map(|f| f.field.clone()).collect()
    }

    pub fn time_symbol(&self) -> Option<Symbol> {
        self.time_variant.then(|| Symbol::new(TIME))
    }

    /// Indices of coordinates added by augmentation.
    pub fn augmented_coords(&self) -> Vec<usize> {
        let base: HashSet<Symbol> = self.state[..self.provenance.original_dim].iter().copied().collect();
        (0..self.n()).filter(|i| !base.contains(&self.state[*i])).collect()
    }

    pub fn is_augmented(&self) -> bool {
        self.n() > self.provenance.original_dim
    }

    /// Name of the finite extension this model represents, e.g. `UIE(0, 2)`
    /// over the inputs that were moved into the state.
    pub fn uie_label(&self) -> String {
        let parts: Vec<String> = self
            .provenance
            .orders
            .iter()
            .zip(&self.provenance.original_inputs)
            .filter_map(|(o, name)| o.map(|k| format!("{name}:{k}")))
            .collect();
        if parts.is_empty() {
            "original system".to_string()
        } else {
            format!("UIE({})", parts.join(", "))
        }
    }

    /// Permutes the unknown inputs so that the first `λ.len()` columns of
    /// the reconstructability matrix over `lambdas` are independent.
    /// Returns the reordered model and the permutation (new → old).
    pub fn reorder_uis(&self, lambdas: &[Expr], oracle: &Oracle) -> Result<(SystemModel, Vec<usize>)> {
        let m = lambdas.len();
        let rm = crate::liegeom::recon_matrix(self, lambdas);
        let mut chosen: Vec<usize> = Vec::new();
        let mut rank = 0;
        for j in 0..self.m_w() {
            if chosen.len() == m {
                break;
            }
            let mut cols = chosen.clone();
            cols.push(j);
            let sub: Vec<Vec<Expr>> = rm.iter().map(|row| cols.iter().map(|&c| row[c]).collect()).collect();
            let r = oracle.rank(&sub)?;
            if r > rank {
                rank = r;
                chosen.push(j);
            }
        }
        if chosen.len() < m {
            return Err(Error::RankDeficient(format!(
                "only {} of {m} unknown-input columns are independent",
                chosen.len()
            )));
        }
        let mut perm = chosen.clone();
        perm.extend((0..self.m_w()).filter(|j| !chosen.contains(j)));
        let mut out = self.clone();
        out.unknown = perm.iter().map(|&j| self.unknown[j].clone()).collect();
        if perm.iter().enumerate().any(|(i, &j)| i != j) {
            out.provenance.log.push(format!("reordered unknown inputs {perm:?}"));
        }
        Ok((out, perm))
    }

    fn fresh_name(&self, base: &str) -> String {
        let taken = |s: &str| {
            self.state.iter().any(|x| x.name() == s)
                || self.known.iter().any(|k| k.name == s)
                || self.unknown.iter().any(|u| u.name == s)
                || RESERVED.contains(&s)
        };
        let mut name = base.to_string();
        while taken(&name) {
            name.push('_');
        }
        name
    }

    fn derivative_name(&self, u: &UnknownInput) -> String {
        let base = &self.provenance.original_inputs[u.origin];
        self.fresh_name(&format!("{base}_d{}", u.order + 1))
    }

    /// Moves the last `m_w − m` unknown inputs into the state; their time
    /// derivatives become the new unknown inputs.
    ///
    /// New coordinates are inserted after the block of their originating
    /// input, so repeated augmentation keeps every input's derivatives
    /// contiguous. Returns the model and, for each old coordinate, its index
    /// in the new state.
    pub fn augment(&self, m: usize) -> Result<(SystemModel, Vec<usize>)> {
        let mw = self.m_w();
        if m >= mw {
            return Err(Error::Model(format!("augment needs m < m_w, got m = {m}, m_w = {mw}")));
        }
        let mut state = self.state.clone();
        let mut old_pos: Vec<usize> = (0..self.n()).collect();
        let mut new_pos: Vec<usize> = Vec::new();
        let mut provenance = self.provenance.clone();
        for u in &self.unknown[m..] {
            let block_end = self.block_end(u.origin, &state);
            let sym = Symbol::new(&u.name);
            if state.contains(&sym) {
                return Err(Error::Model(format!("symbol `{}` already in the state", u.name)));
            }
            state.insert(block_end, sym);
            for p in old_pos.iter_mut().chain(new_pos.iter_mut()) {
                if *p >= block_end {
                    *p += 1;
                }
            }
            new_pos.push(block_end);
            provenance.orders[u.origin] = Some(u.order);
        }
        let n2 = state.len();
        let pad = |v: &[Expr]| -> Vec<Expr> {
            let mut out = vec![Expr::zero(); n2];
            for (i, e) in v.iter().enumerate() {
                out[old_pos[i]] = *e;
            }
            out
        };
        let mut drift = pad(&self.drift);
        for u in &self.unknown[m..] {
            let w = Symbol::new(&u.name).expr();
            for (i, g) in u.field.iter().enumerate() {
                drift[old_pos[i]] = drift[old_pos[i]] + *g * w;
            }
        }
        let known =
            self.known.iter().map(|k| KnownInput { name: k.name.clone(), field: pad(&k.field) }).collect();
        let mut unknown: Vec<UnknownInput> = self.unknown[..m]
            .iter()
            .map(|u| UnknownInput { field: pad(&u.field), ..u.clone() })
            .collect();
        for (u, &pos) in self.unknown[m..].iter().zip(&new_pos) {
            let mut field = vec![Expr::zero(); n2];
            field[pos] = Expr::one();
            unknown.push(UnknownInput {
                name: self.derivative_name(u),
                field,
                origin: u.origin,
                order: u.order + 1,
            });
        }
        provenance.log.push(format!(
            "augmented with {}",
            self.unknown[m..].iter().map(|u| u.name.as_str()).collect::<Vec<_>>().join(", ")
        ));
        let out = SystemModel {
            state,
            time_variant: self.time_variant,
            drift,
            known,
            unknown,
            outputs: self.outputs.clone(),
            provenance,
        };
        Ok((out, old_pos))
    }

    /// Position right after the state block holding derivatives of original
    /// input `origin`, or where that block should start.
    fn block_end(&self, origin: usize, state: &[Symbol]) -> usize {
        let owner = |s: &Symbol| -> Option<usize> {
            let name = s.name();
            self.provenance.original_inputs.iter().enumerate().find_map(|(j, base)| {
                let is_block = name == *base
                    || name
                        .strip_prefix(base.as_str())
                        .and_then(|r| r.strip_prefix("_d"))
                        .is_some_and(|r| r.trim_end_matches('_').parse::<usize>().is_ok());
                is_block.then_some(j)
            })
        };
        let base_n = self.provenance.original_dim;
        let mut end = base_n;
        for (i, s) in state.iter().enumerate().skip(base_n) {
            match owner(s) {
                Some(j) if j <= origin => end = i + 1,
                _ => {}
            }
        }
        end
    }

    /// The finite unknown-input extension with the last `orders.len()`
    /// inputs stored in the state up to the given derivative orders.
    pub fn finite_uie(&self, orders: &[usize]) -> Result<SystemModel> {
        let d = orders.len();
        let mw = self.m_w();
        if d == 0 || d > mw {
            return Err(Error::Model(format!("finite extension needs 1 <= d <= m_w = {mw}, got d = {d}")));
        }
        if self.is_augmented() || self.unknown.iter().any(|u| u.order > 0) {
            return Err(Error::Model("finite extensions are built from an unextended model".into()));
        }
        let n = self.n();
        let first = mw - d;
        let mut state = self.state.clone();
        let mut provenance = self.provenance.clone();
        // symbol name of w_j^(k)
        let deriv = |j: usize, k: usize| -> String {
            if k == 0 {
                self.unknown[j].name.clone()
            } else {
                format!("{}_d{k}", self.provenance.original_inputs[self.unknown[j].origin])
            }
        };
        for (q, &k) in orders.iter().enumerate() {
            let j = first + q;
            for i in 0..=k {
                let name = deriv(j, i);
                let sym = Symbol::new(&name);
                if state.contains(&sym) || RESERVED.contains(&name.as_str()) {
                    return Err(Error::Model(format!("generated name `{name}` clashes")));
                }
                state.push(sym);
            }
            provenance.orders[self.unknown[j].origin] = Some(k);
        }
        let n2 = state.len();
        let pad = |v: &[Expr]| -> Vec<Expr> {
            let mut out = v.to_vec();
            out.resize(n2, Expr::zero());
            out
        };
        let mut drift = pad(&self.drift);
        for j in first..mw {
            let w = Symbol::new(&deriv(j, 0)).expr();
            for (d, &g) in drift.iter_mut().zip(&self.unknown[j].field) {
                *d = *d + g * w;
            }
        }
        let mut unknown: Vec<UnknownInput> =
            self.unknown[..first].iter().map(|u| UnknownInput { field: pad(&u.field), ..u.clone() }).collect();
        let mut row = n;
        for (q, &k) in orders.iter().enumerate() {
            let j = first + q;
            for i in 0..k {
                drift[row + i] = Symbol::new(&deriv(j, i + 1)).expr();
            }
            let mut field = vec![Expr::zero(); n2];
            field[row + k] = Expr::one();
            unknown.push(UnknownInput {
                name: deriv(j, k + 1),
                field,
                origin: self.unknown[j].origin,
                order: k + 1,
            });
            row += k + 1;
        }
        provenance.log.push(format!("finite extension with orders {orders:?}"));
        Ok(SystemModel {
            state,
            time_variant: self.time_variant,
            drift,
            known: self.known.iter().map(|f| KnownInput { name: f.name.clone(), field: pad(&f.field) }).collect(),
            unknown,
            outputs: self.outputs.clone(),
            provenance,
        })
    }
}

/// Builds a model from expression strings; convenient in tests and examples.
pub fn model_from_strs(
    state: &[&str],
    drift: Option<&[&str]>,
    known: &[(&str, &[&str])],
    unknown: &[(&str, &[&str])],
    outputs: &[&str],
) -> Result<SystemModel> {
    let strs = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    SystemModel::from_doc(&ModelDoc {
        state: strs(state),
        time_variant: false,
        drift: drift.map(strs),
        known_inputs: known.iter().map(|(n, f)| FieldDoc { name: n.to_string(), field: strs(f) }).collect(),
        unknown_inputs: unknown.iter().map(|(n, f)| FieldDoc { name: n.to_string(), field: strs(f) }).collect(),
        outputs: strs(outputs),
        provenance: None,
    })
}
