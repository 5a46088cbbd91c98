//! Variables, actions, partial states and awareness sets.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Maximum number of variables (and of actions) a problem may declare.
pub const MAX_IDS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub u8);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionId(pub u8);

impl ActionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VariableDecl {
    pub id: VarId,
    pub name: String,
    pub domain: Vec<String>,
}

impl VariableDecl {
    pub fn card(&self) -> usize {
        self.domain.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionDecl {
    pub id: ActionId,
    pub name: String,
}

/// Declared variables, indexed by id.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct VarTable {
    decls: Vec<VariableDecl>,
}

impl VarTable {
    /// Builds a table; ids are assigned in declaration order.
    pub fn new(decls: Vec<(String, Vec<String>)>) -> Self {
        assert!(decls.len() <= MAX_IDS, "too many variables");
        let decls = decls
            .into_iter()
            .enumerate()
            .map(|(i, (name, domain))| {
                assert!(domain.len() >= 2 && domain.len() <= 16, "domain size out of range");
                VariableDecl { id: VarId(i as u8), name, domain }
            })
            .collect();
        VarTable { decls }
    }

    pub fn len(&self) -> usize {
        self.decls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decls.is_empty()
    }

    pub fn decl(&self, v: VarId) -> &VariableDecl {
        &self.decls[v.index()]
    }

    pub fn card(&self, v: VarId) -> usize {
        self.decls[v.index()].card()
    }

    pub fn decls(&self) -> &[VariableDecl] {
        &self.decls
    }

    pub fn ids(&self) -> impl Iterator<Item = VarId> + '_ {
        self.decls.iter().map(|d| d.id)
    }

    pub fn all(&self) -> VarSet {
        VarSet::from_iter(self.ids())
    }

    pub fn by_name(&self, name: &str) -> Option<VarId> {
        self.decls.iter().find(|d| d.name == name).map(|d| d.id)
    }

    /// Product of domain sizes of `vars`.
    pub fn joint_card(&self, vars: VarSet) -> usize {
        vars.iter().map(|v| self.card(v)).product()
    }

    pub fn cards(&self) -> Vec<usize> {
        self.decls.iter().map(|d| d.card()).collect()
    }
}

/// A set of variable ids, iterated in id order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct VarSet(pub u64);

impl VarSet {
    pub const EMPTY: VarSet = VarSet(0);

    pub fn singleton(v: VarId) -> Self {
        VarSet(1 << v.0)
    }

    pub fn contains(self, v: VarId) -> bool {
        self.0 & (1 << v.0) != 0
    }

    pub fn insert(&mut self, v: VarId) -> bool {
        let fresh = !self.contains(v);
        self.0 |= 1 << v.0;
        fresh
    }

    pub fn remove(&mut self, v: VarId) {
        self.0 &= !(1 << v.0);
    }

    pub fn with(self, v: VarId) -> Self {
        VarSet(self.0 | (1 << v.0))
    }

    pub fn without(self, v: VarId) -> Self {
        VarSet(self.0 & !(1 << v.0))
    }

    pub fn union(self, o: VarSet) -> Self {
        VarSet(self.0 | o.0)
    }

    pub fn intersect(self, o: VarSet) -> Self {
        VarSet(self.0 & o.0)
    }

    pub fn minus(self, o: VarSet) -> Self {
        VarSet(self.0 & !o.0)
    }

    pub fn is_subset(self, o: VarSet) -> bool {
        self.0 & !o.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = VarId> {
        let mut bits = self.0;
        core::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let i = bits.trailing_zeros();
            bits &= bits - 1;
            Some(VarId(i as u8))
        })
    }
}

impl FromIterator<VarId> for VarSet {
    fn from_iter<I: IntoIterator<Item = VarId>>(it: I) -> Self {
        let mut s = VarSet::EMPTY;
        for v in it {
            s.insert(v);
        }
        s
    }
}

/// A set of action ids, iterated in id order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct ActionSet(pub u64);

impl ActionSet {
    pub fn contains(self, a: ActionId) -> bool {
        self.0 & (1 << a.0) != 0
    }

    pub fn insert(&mut self, a: ActionId) -> bool {
        let fresh = !self.contains(a);
        self.0 |= 1 << a.0;
        fresh
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = ActionId> {
        let mut bits = self.0;
        core::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let i = bits.trailing_zeros();
            bits &= bits - 1;
            Some(ActionId(i as u8))
        })
    }

    pub fn nth(self, n: usize) -> Option<ActionId> {
        self.iter().nth(n)
    }
}

impl FromIterator<ActionId> for ActionSet {
    fn from_iter<I: IntoIterator<Item = ActionId>>(it: I) -> Self {
        let mut s = ActionSet::default();
        for a in it {
            s.insert(a);
        }
        s
    }
}

const UNSET: u8 = u8::MAX;

/// Assignment of values to a subset of the declared variables.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartialState {
    vals: Vec<u8>,
}

impl PartialState {
    /// Empty assignment over a problem with `n` variables.
    pub fn empty(n: usize) -> Self {
        PartialState { vals: alloc::vec![UNSET; n] }
    }

    /// Complete assignment from a value vector.
    pub fn complete(values: &[u8]) -> Self {
        PartialState { vals: values.to_vec() }
    }

    pub fn num_vars(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, v: VarId) -> Option<u8> {
        match self.vals[v.index()] {
            UNSET => None,
            x => Some(x),
        }
    }

    pub fn set(&mut self, v: VarId, value: u8) {
        debug_assert!(value != UNSET);
        self.vals[v.index()] = value;
    }

    pub fn unset(&mut self, v: VarId) {
        self.vals[v.index()] = UNSET;
    }

    pub fn with(mut self, v: VarId, value: u8) -> Self {
        self.set(v, value);
        self
    }

    pub fn assigned(&self) -> VarSet {
        self.vals
            .iter()
            .enumerate()
            .filter(|(_, &x)| x != UNSET)
            .map(|(i, _)| VarId(i as u8))
            .collect()
    }

    pub fn assigns_all(&self, vars: VarSet) -> bool {
        vars.iter().all(|v| self.get(v).is_some())
    }

    pub fn project(&self, vars: VarSet) -> PartialState {
        let vals = self
            .vals
            .iter()
            .enumerate()
            .map(|(i, &x)| if vars.contains(VarId(i as u8)) { x } else { UNSET })
            .collect();
        PartialState { vals }
    }

    /// True if every assignment of `self` agrees with `other`.
    pub fn agrees_on(&self, other: &PartialState, vars: VarSet) -> bool {
        vars.iter().all(|v| self.vals[v.index()] == other.vals[v.index()])
    }

    /// Raw value vector; unassigned entries are `u8::MAX`.
    pub fn raw(&self) -> &[u8] {
        &self.vals
    }

    /// Mixed-radix index of the assignment to `vars` (first variable most significant).
    pub fn index_over(&self, vars: &[VarId], cards: &[usize]) -> Option<usize> {
        let mut idx = 0usize;
        for (v, &c) in vars.iter().zip(cards) {
            idx = idx * c + self.get(*v)? as usize;
        }
        Some(idx)
    }
}

impl fmt::Debug for PartialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<")?;
        let mut first = true;
        for (i, &x) in self.vals.iter().enumerate() {
            if x != UNSET {
                if !first {
                    f.write_str(",")?;
                }
                write!(f, "{}={}", i, x)?;
                first = false;
            }
        }
        f.write_str(">")
    }
}

/// Enumerates all complete assignments in lexicographic order, last variable fastest.
pub fn all_states(cards: &[usize]) -> impl Iterator<Item = PartialState> + '_ {
    let total: usize = cards.iter().product();
    (0..total).map(move |mut k| {
        let mut vals = alloc::vec![0u8; cards.len()];
        for i in (0..cards.len()).rev() {
            vals[i] = (k % cards[i]) as u8;
            k /= cards[i];
        }
        PartialState { vals }
    })
}

/// Mixed-radix index of a complete state (inverse of `all_states` order).
pub fn state_index(s: &PartialState, cards: &[usize]) -> usize {
    let mut idx = 0;
    for (i, &c) in cards.iter().enumerate() {
        idx = idx * c + s.vals[i] as usize;
    }
    idx
}

/// The learner's awareness: X^t, A^t and the reward scope.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Awareness {
    pub variables: VarSet,
    pub actions: ActionSet,
    pub reward_scope: VarSet,
}

impl Awareness {
    pub fn is_valid(&self, num_vars: usize, num_actions: usize) -> bool {
        self.reward_scope.is_subset(self.variables)
            && self.variables.iter().all(|v| v.index() < num_vars)
            && self.actions.iter().all(|a| a.index() < num_actions)
    }
}

/// Per-variable sets of still-possible values, as bitmasks. Variables beyond the
/// declared ones read as unconstrained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Context {
    masks: [u16; MAX_IDS],
}

impl Context {
    pub fn full(cards: &[usize]) -> Self {
        let mut masks = [u16::MAX; MAX_IDS];
        for (m, &c) in masks.iter_mut().zip(cards) {
            *m = ((1u32 << c) - 1) as u16;
        }
        Context { masks }
    }

    pub fn mask(&self, v: VarId) -> u16 {
        self.masks[v.index()]
    }

    pub fn set_mask(&mut self, v: VarId, m: u16) {
        self.masks[v.index()] = m;
    }

    /// Outcome of the test (v = value?) if the context already fixes it.
    pub fn decided(&self, v: VarId, value: u8) -> Option<bool> {
        let m = self.masks[v.index()];
        let bit = 1u16 << value;
        if m & bit == 0 {
            Some(false)
        } else if m == bit {
            Some(true)
        } else {
            None
        }
    }

    pub fn assume(&self, v: VarId, value: u8, pass: bool) -> Context {
        let mut c = *self;
        let bit = 1u16 << value;
        c.masks[v.index()] = if pass { bit } else { c.masks[v.index()] & !bit };
        c
    }
}
