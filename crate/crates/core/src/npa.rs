//! Moment-matrix structure of the NPA hierarchy.
//!
//! An operator word is a product of projectors `E_u^x` (Alice) and `F_v^y`
//! (Bob). Entry `(i, j)` of the moment matrix is `<psi| O_i^dag O_j |psi>`.
//! Matrices are real, so a word and its reversal share a moment.
//!
//! Two word bases are supported. [`WordBasis::Full`] keeps every outcome as
//! an explicit projector and records completeness `sum_x E_u^x = 1` as
//! linear relations between moments. [`WordBasis::Reduced`] drops the last
//! outcome of every input; its projector is expanded as `1 - sum` of the
//! others wherever a moment needs it. Both describe the same set of
//! behaviors, but only the reduced form leaves the moment matrix room for a
//! strictly positive definite point, which interior-point solvers need.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::behavior::Alphabets;
use crate::error::{Error, Result};

pub const ALICE: u8 = 0;
pub const BOB: u8 = 1;

/// Projector `E_{input}^{outcome}` of one party.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Letter {
    pub party: u8,
    pub input: u16,
    pub outcome: u16,
}

impl Letter {
    pub fn alice(input: usize, outcome: usize) -> Self {
        Letter {
            party: ALICE,
            input: input as u16,
            outcome: outcome as u16,
        }
    }

    pub fn bob(input: usize, outcome: usize) -> Self {
        Letter {
            party: BOB,
            input: input as u16,
            outcome: outcome as u16,
        }
    }
}

impl From<[usize; 3]> for Letter {
    fn from(t: [usize; 3]) -> Self {
        Letter {
            party: t[0] as u8,
            input: t[1] as u16,
            outcome: t[2] as u16,
        }
    }
}

impl From<Letter> for [usize; 3] {
    fn from(l: Letter) -> Self {
        [l.party as usize, l.input as usize, l.outcome as usize]
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = if self.party == ALICE { 'A' } else { 'B' };
        write!(f, "{p}{}|{}", self.outcome, self.input)
    }
}

/// Product of projectors, applied left to right. The empty word is the
/// identity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OperatorWord(pub Vec<Letter>);

impl OperatorWord {
    pub fn identity() -> Self {
        OperatorWord(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    /// Normal form, or `None` when the product vanishes.
    ///
    /// Letters are stably sorted by party (the parties commute), adjacent
    /// repeats collapse (`E E = E`), and adjacent projectors of one input
    /// with different outcomes annihilate (`E^a E^b = 0`).
    pub fn canonical(&self) -> Option<OperatorWord> {
        canonicalize(&self.0)
    }

    /// Adjoint: each party's letters in reverse order.
    pub fn reversed(&self) -> OperatorWord {
        let mut r: Vec<Letter> = self.0.iter().rev().cloned().collect();
        r.sort_by_key(|l| l.party);
        OperatorWord(r)
    }

    /// Representative shared by a canonical word and its adjoint.
    pub fn moment_key(&self) -> OperatorWord {
        let r = self.reversed();
        if r < *self {
            r
        } else {
            self.clone()
        }
    }
}

impl PartialOrd for OperatorWord {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Shorter words first, then lexicographic on letters.
impl Ord for OperatorWord {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl fmt::Display for OperatorWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

pub fn canonicalize(letters: &[Letter]) -> Option<OperatorWord> {
    let mut sorted = letters.to_vec();
    sorted.sort_by_key(|l| l.party);
    let mut out: Vec<Letter> = Vec::with_capacity(sorted.len());
    for l in sorted {
        if let Some(top) = out.last() {
            if top.party == l.party && top.input == l.input {
                if top.outcome == l.outcome {
                    continue;
                }
                return None;
            }
        }
        out.push(l);
    }
    Some(OperatorWord(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "1+AB")]
    OneAB,
    #[serde(rename = "2")]
    Two,
}

impl Level {
    pub fn parse(s: &str) -> Result<Level> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" => Ok(Level::One),
            "1ab" | "1+ab" => Ok(Level::OneAB),
            "2" => Ok(Level::Two),
            _ => Err(Error::UnsupportedLevel(s.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Level::One => "1",
            Level::OneAB => "1+AB",
            Level::Two => "2",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Level {
    type Err = Error;
    fn from_str(s: &str) -> Result<Level> {
        Level::parse(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WordBasis {
    Full,
    Reduced,
}

fn letters(alphabets: &Alphabets, basis: WordBasis) -> (Vec<Letter>, Vec<Letter>) {
    let cut = |n: usize| match basis {
        WordBasis::Full => n,
        WordBasis::Reduced => n - 1,
    };
    let mut a = Vec::new();
    for u in 0..alphabets.nu {
        for x in 0..cut(alphabets.nx) {
            a.push(Letter::alice(u, x));
        }
    }
    let mut b = Vec::new();
    for v in 0..alphabets.nv {
        for y in 0..cut(alphabets.ny) {
            b.push(Letter::bob(v, y));
        }
    }
    (a, b)
}

/// Canonical words of the requested level with every outcome explicit.
pub fn build_words(alphabets: &Alphabets, level: Level) -> Result<Vec<OperatorWord>> {
    build_words_in(alphabets, level, WordBasis::Full)
}

pub fn build_words_in(
    alphabets: &Alphabets,
    level: Level,
    basis: WordBasis,
) -> Result<Vec<OperatorWord>> {
    alphabets.check()?;
    let (a, b) = letters(alphabets, basis);
    let singles: Vec<Letter> = a.iter().chain(&b).cloned().collect();
    let mut set = BTreeSet::new();
    set.insert(OperatorWord::identity());
    for &l in &singles {
        set.insert(OperatorWord(vec![l]));
    }
    match level {
        Level::One => {}
        Level::OneAB => {
            for &la in &a {
                for &lb in &b {
                    set.insert(OperatorWord(vec![la, lb]));
                }
            }
        }
        Level::Two => {
            for &l1 in &singles {
                for &l2 in &singles {
                    if let Some(w) = canonicalize(&[l1, l2]) {
                        set.insert(w);
                    }
                }
            }
        }
    }
    Ok(set.into_iter().collect())
}

/// Entries sharing one moment value. `word` is the representative
/// `min(w, w^dag)`; `entries` lists upper-triangle positions `(i, j)`,
/// `i <= j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentClass {
    pub word: OperatorWord,
    pub entries: Vec<(usize, usize)>,
}

/// `sum_c coef_c * moment(c) = 0` over class indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct LinearRelation {
    pub terms: Vec<(usize, i32)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NpaStructure {
    pub level: Option<Level>,
    pub basis: WordBasis,
    pub alphabets: Alphabets,
    pub words: Vec<OperatorWord>,
    pub dim: usize,
    pub classes: Vec<MomentClass>,
    pub zero_entries: Vec<(usize, usize)>,
    pub completeness: Vec<LinearRelation>,
    /// `(u, v, x, y) -> (i, j)` with `O_i = E_u^x` and `O_j = F_v^y`.
    /// Complete in the full basis; in the reduced basis only outcomes that
    /// are explicit projectors appear.
    #[serde(serialize_with = "entry_list")]
    pub prob_entries: BTreeMap<[usize; 4], (usize, usize)>,
    pub identity_entry: Option<(usize, usize)>,
    #[serde(skip)]
    entry_class: Vec<Option<usize>>,
    #[serde(skip)]
    class_index: HashMap<OperatorWord, usize>,
}

/// JSON keys must be strings, so the map goes out as `[[u,v,x,y],[i,j]]` pairs.
fn entry_list<S: serde::Serializer>(
    m: &BTreeMap<[usize; 4], (usize, usize)>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(m.iter())
}

impl NpaStructure {
    /// Words of `level` in `basis`, assembled into a structure.
    pub fn for_level(alphabets: &Alphabets, level: Level, basis: WordBasis) -> Result<Self> {
        let words = build_words_in(alphabets, level, basis)?;
        let mut s = build_structure(&words, alphabets)?;
        s.level = Some(level);
        Ok(s)
    }

    /// Class of entry `(i, j)` in either triangle; `None` for forced zeros.
    pub fn class_of(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.entry_class[i * self.dim + j]
    }

    /// Upper-triangle position standing for the class.
    pub fn representative(&self, class: usize) -> (usize, usize) {
        self.classes[class].entries[0]
    }

    pub fn class_of_word(&self, w: &OperatorWord) -> Option<usize> {
        self.class_index.get(&w.moment_key()).copied()
    }

    /// Moment of an arbitrary letter product as a combination of classes.
    ///
    /// In the reduced basis every projector on a dropped last outcome is
    /// replaced by `1 - sum` of the explicit ones first.
    pub fn moment_functional(&self, word: &[Letter]) -> Result<Vec<(usize, f64)>> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        let mut expanded: Vec<(Vec<Letter>, f64)> = vec![(Vec::new(), 1.0)];
        for &l in word {
            let n = if l.party == ALICE {
                self.alphabets.nx
            } else {
                self.alphabets.ny
            };
            let implicit = self.basis == WordBasis::Reduced && l.outcome as usize == n - 1;
            let mut next = Vec::with_capacity(expanded.len() * n);
            for (prefix, c) in expanded {
                if implicit {
                    next.push((prefix.clone(), c));
                    for o in 0..n - 1 {
                        let mut w = prefix.clone();
                        w.push(Letter {
                            outcome: o as u16,
                            ..l
                        });
                        next.push((w, -c));
                    }
                } else {
                    let mut w = prefix;
                    w.push(l);
                    next.push((w, c));
                }
            }
            expanded = next;
        }
        for (w, c) in expanded {
            if let Some(canon) = canonicalize(&w) {
                let class = self
                    .class_of_word(&canon)
                    .ok_or_else(|| Error::MissingMoment(canon.to_string()))?;
                *acc.entry(class).or_insert(0.0) += c;
            }
        }
        Ok(acc.into_iter().filter(|&(_, c)| c != 0.0).collect())
    }

    /// Moment of `P(x, y | u, v)`.
    pub fn probability_functional(
        &self,
        u: usize,
        v: usize,
        x: usize,
        y: usize,
    ) -> Result<Vec<(usize, f64)>> {
        self.moment_functional(&[Letter::alice(u, x), Letter::bob(v, y)])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Equality classes, forced zeros and completeness relations of the moment
/// matrix indexed by `words`.
pub fn build_structure(words: &[OperatorWord], alphabets: &Alphabets) -> Result<NpaStructure> {
    alphabets.check()?;
    let mut seen = BTreeSet::new();
    for w in words {
        for l in &w.0 {
            let (ni, no) = match l.party {
                ALICE => (alphabets.nu, alphabets.nx),
                BOB => (alphabets.nv, alphabets.ny),
                _ => return Err(Error::NonCanonicalWord(format!("unknown party in {w}"))),
            };
            if l.input as usize >= ni || l.outcome as usize >= no {
                return Err(Error::NonCanonicalWord(format!("{w} exceeds the alphabets")));
            }
        }
        if w.canonical().as_ref() != Some(w) {
            return Err(Error::NonCanonicalWord(w.to_string()));
        }
        if !seen.insert(w.clone()) {
            return Err(Error::NonCanonicalWord(format!("duplicate word {w}")));
        }
    }

    let explicit_last = words.iter().any(|w| {
        w.0.iter().any(|l| {
            let n = if l.party == ALICE {
                alphabets.nx
            } else {
                alphabets.ny
            };
            l.outcome as usize == n - 1
        })
    });
    let basis = if explicit_last {
        WordBasis::Full
    } else {
        WordBasis::Reduced
    };

    let dim = words.len();
    let mut classes: Vec<MomentClass> = Vec::new();
    let mut class_index: HashMap<OperatorWord, usize> = HashMap::new();
    let mut entry_class = vec![None; dim * dim];
    let mut zero_entries = Vec::new();
    for i in 0..dim {
        let adj = words[i].reversed();
        for j in i..dim {
            let mut prod = adj.0.clone();
            prod.extend_from_slice(&words[j].0);
            match canonicalize(&prod) {
                None => zero_entries.push((i, j)),
                Some(c) => {
                    let key = c.moment_key();
                    let id = *class_index.entry(key.clone()).or_insert_with(|| {
                        classes.push(MomentClass {
                            word: key,
                            entries: Vec::new(),
                        });
                        classes.len() - 1
                    });
                    classes[id].entries.push((i, j));
                    entry_class[i * dim + j] = Some(id);
                }
            }
        }
    }

    let completeness = if basis == WordBasis::Full {
        completeness_relations(words, alphabets, &class_index)
    } else {
        Vec::new()
    };

    let index: HashMap<&OperatorWord, usize> =
        words.iter().enumerate().map(|(i, w)| (w, i)).collect();
    let mut prob_entries = BTreeMap::new();
    for u in 0..alphabets.nu {
        for v in 0..alphabets.nv {
            for x in 0..alphabets.nx {
                for y in 0..alphabets.ny {
                    let wa = OperatorWord(vec![Letter::alice(u, x)]);
                    let wb = OperatorWord(vec![Letter::bob(v, y)]);
                    if let (Some(&i), Some(&j)) = (index.get(&wa), index.get(&wb)) {
                        prob_entries.insert([u, v, x, y], (i.min(j), i.max(j)));
                    }
                }
            }
        }
    }
    let identity_entry = index.get(&OperatorWord::identity()).map(|&i| (i, i));

    Ok(NpaStructure {
        level: None,
        basis,
        alphabets: *alphabets,
        words: words.to_vec(),
        dim,
        classes,
        zero_entries,
        completeness,
        prob_entries,
        identity_entry,
        entry_class,
        class_index,
    })
}

/// For every entry `(i, j)` and every letter `E_u^x` of `O_j`, summing over
/// the outcome of that letter removes it. Relations touching a moment that
/// the matrix does not contain are skipped.
fn completeness_relations(
    words: &[OperatorWord],
    alphabets: &Alphabets,
    class_index: &HashMap<OperatorWord, usize>,
) -> Vec<LinearRelation> {
    let lookup = |letters: &[Letter]| -> Option<Option<usize>> {
        match canonicalize(letters) {
            None => Some(None),
            Some(c) => class_index.get(&c.moment_key()).map(|&id| Some(id)),
        }
    };
    let mut out = BTreeSet::new();
    for wi in words {
        let adj = wi.reversed();
        for wj in words {
            'pos: for p in 0..wj.len() {
                let l = wj.0[p];
                let n = if l.party == ALICE {
                    alphabets.nx
                } else {
                    alphabets.ny
                };
                let mut coeffs: BTreeMap<usize, i32> = BTreeMap::new();
                for o in 0..n {
                    let mut prod = adj.0.clone();
                    for (q, &lq) in wj.0.iter().enumerate() {
                        prod.push(if q == p {
                            Letter {
                                outcome: o as u16,
                                ..l
                            }
                        } else {
                            lq
                        });
                    }
                    match lookup(&prod) {
                        None => continue 'pos,
                        Some(None) => {}
                        Some(Some(id)) => *coeffs.entry(id).or_insert(0) += 1,
                    }
                }
                let mut prod = adj.0.clone();
                prod.extend(wj.0.iter().enumerate().filter(|&(q, _)| q != p).map(|(_, &x)| x));
                match lookup(&prod) {
                    None => continue 'pos,
                    Some(None) => {}
                    Some(Some(id)) => *coeffs.entry(id).or_insert(0) -= 1,
                }
                let mut terms: Vec<(usize, i32)> =
                    coeffs.into_iter().filter(|&(_, c)| c != 0).collect();
                if terms.is_empty() {
                    continue;
                }
                if terms[0].1 < 0 {
                    for t in terms.iter_mut() {
                        t.1 = -t.1;
                    }
                }
                out.insert(LinearRelation { terms });
            }
        }
    }
    out.into_iter().collect()
}

/// Outcome of [`hermitian_closure_check`].
#[derive(Debug, Clone, Serialize)]
pub struct ClosureReport {
    pub class_count: usize,
    pub zero_count: usize,
    pub constraint_count: usize,
    pub prob_entry_count: usize,
    pub issues: Vec<String>,
}

impl ClosureReport {
    pub fn is_consistent(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Re-derives every entry's moment and confirms it matches its class word
/// up to adjoint, that both triangles agree, and that each entry is covered
/// exactly once.
pub fn hermitian_closure_check(s: &NpaStructure) -> ClosureReport {
    let mut issues = Vec::new();
    if s.words.is_empty() {
        issues.push("empty word list".to_string());
    }
    let mut covered = vec![0u32; s.dim * s.dim];
    for (id, class) in s.classes.iter().enumerate() {
        for &(i, j) in &class.entries {
            covered[i * s.dim + j] += 1;
            let mut prod = s.words[i].reversed().0;
            prod.extend_from_slice(&s.words[j].0);
            match canonicalize(&prod) {
                Some(c) if c == class.word || c.reversed() == class.word => {}
                other => issues.push(format!(
                    "entry ({i},{j}) gives {:?}, class {id} is {}",
                    other.map(|w| w.to_string()),
                    class.word
                )),
            }
            if s.class_of(j, i) != Some(id) {
                issues.push(format!("entry ({j},{i}) not in class {id}"));
            }
        }
    }
    for &(i, j) in &s.zero_entries {
        covered[i * s.dim + j] += 1;
        let mut prod = s.words[i].reversed().0;
        prod.extend_from_slice(&s.words[j].0);
        if canonicalize(&prod).is_some() {
            issues.push(format!("entry ({i},{j}) marked zero but does not vanish"));
        }
    }
    for i in 0..s.dim {
        for j in i..s.dim {
            let c = covered[i * s.dim + j];
            if c != 1 {
                issues.push(format!("entry ({i},{j}) covered {c} times"));
            }
        }
    }
    if s.identity_entry.is_none() && !s.words.is_empty() {
        issues.push("identity word missing".to_string());
    }
    ClosureReport {
        class_count: s.classes.len(),
        zero_count: s.zero_entries.len(),
        constraint_count: s.completeness.len(),
        prob_entry_count: s.prob_entries.len(),
        issues,
    }
}
