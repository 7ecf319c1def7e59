use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub frozen: bool,
}

/// Trainable parameters keyed by dotted path, e.g.
/// `texture_decoder.stroke_unit.branch2.conv0.weight`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamTree {
    leaves: BTreeMap<String, Param>,
}

fn under(path: &str, subtree: &str) -> bool {
    path == subtree || (path.len() > subtree.len() && path.starts_with(subtree) && path.as_bytes()[subtree.len()] == b'.')
}

fn bits_eq(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

impl ParamTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) {
        self.leaves.insert(path.into(), Param { value, frozen: false });
    }

    pub fn insert_param(&mut self, path: impl Into<String>, param: Param) {
        self.leaves.insert(path.into(), param);
    }

    pub fn get(&self, path: &str) -> Option<&Param> {
        self.leaves.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Param> {
        self.leaves.get_mut(path)
    }

    /// Value of a leaf; panics on unknown paths, which are programming errors.
    pub fn value(&self, path: &str) -> &Tensor {
        match self.leaves.get(path) {
            Some(p) => &p.value,
            None => panic!("unknown parameter `{}`", path),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.leaves.iter()
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn has_subtree(&self, name: &str) -> bool {
        self.leaves.keys().any(|k| under(k, name))
    }

    pub fn paths_under<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a String> + 'a {
        self.leaves.keys().filter(move |k| under(k, name))
    }

    fn set_frozen(&mut self, names: &[&str], frozen: bool) -> Result<()> {
        if let Some(bad) = names.iter().find(|n| !self.has_subtree(n)) {
            return Err(Error::UnknownSubtree(bad.to_string()));
        }
        for (path, p) in self.leaves.iter_mut() {
            if names.iter().any(|n| under(path, n)) {
                p.frozen = frozen;
            }
        }
        Ok(())
    }

    /// Freezes every leaf under the named subtrees. Idempotent.
    pub fn freeze(&mut self, names: &[&str]) -> Result<()> {
        self.set_frozen(names, true)
    }

    pub fn unfreeze(&mut self, names: &[&str]) -> Result<()> {
        self.set_frozen(names, false)
    }

    pub fn unfreeze_all(&mut self) {
        for p in self.leaves.values_mut() {
            p.frozen = false;
        }
    }

    pub fn is_frozen(&self, path: &str) -> bool {
        self.leaves.get(path).is_some_and(|p| p.frozen)
    }

    pub fn param_count(&self) -> usize {
        self.leaves.values().map(|p| p.value.len()).sum()
    }

    pub fn subtree_param_count(&self, name: &str) -> usize {
        self.leaves.iter().filter(|(k, _)| under(k, name)).map(|(_, p)| p.value.len()).sum()
    }

    /// Order-dependent hash of the raw bits of every leaf under `name`
    /// (`""` for the whole tree).
    pub fn subtree_hash(&self, name: &str) -> u64 {
        let mut h: u64 = 0x84222325cbf29ce4;
        for (k, p) in self.leaves.iter().filter(|(k, _)| name.is_empty() || under(k, name)) {
            for b in k.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
            }
            h = (h ^ p.value.bit_hash()).wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    /// Leaf paths whose values differ bitwise from `other`.
    pub fn changed_paths(&self, other: &ParamTree) -> Vec<String> {
        self.leaves
            .iter()
            .filter(|(k, p)| other.leaves.get(*k).is_none_or(|q| !bits_eq(&q.value, &p.value)))
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.leaves.values().all(|p| p.value.all_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree() -> ParamTree {
        let mut t = ParamTree::new();
        t.insert("encoder.conv0.weight", Tensor::scalar(1.0));
        t.insert("texture_decoder.stroke_unit.branch0.conv0.weight", Tensor::scalar(2.0));
        t.insert("texture_decoder.abstraction_unit.conv0.weight", Tensor::scalar(3.0));
        t.insert("texture_decoder.trunkish", Tensor::scalar(4.0));
        t
    }

    #[test]
    fn freeze_is_scoped_and_idempotent() {
        let mut t = tree();
        t.freeze(&["texture_decoder.abstraction_unit"]).unwrap();
        t.freeze(&["texture_decoder.abstraction_unit"]).unwrap();
        assert!(t.is_frozen("texture_decoder.abstraction_unit.conv0.weight"));
        assert!(!t.is_frozen("texture_decoder.stroke_unit.branch0.conv0.weight"));
        t.unfreeze(&["texture_decoder"]).unwrap();
        assert!(!t.is_frozen("texture_decoder.abstraction_unit.conv0.weight"));
    }

    #[test]
    fn unknown_subtree_is_an_error() {
        let mut t = tree();
        assert_eq!(t.freeze(&["decoder"]), Err(Error::UnknownSubtree("decoder".into())));
        // A name prefix that is not a path component is not a subtree.
        assert!(!t.has_subtree("texture_decoder.trunk"));
        assert!(!t.has_subtree("enc"));
    }

    #[test]
    fn hash_tracks_bits() {
        let mut t = tree();
        let before = t.subtree_hash("encoder");
        let other = t.subtree_hash("texture_decoder");
        t.get_mut("texture_decoder.trunkish").unwrap().value = Tensor::scalar(4.5);
        assert_eq!(t.subtree_hash("encoder"), before);
        assert_ne!(t.subtree_hash("texture_decoder"), other);
        assert_eq!(t.changed_paths(&tree()), alloc::vec!["texture_decoder.trunkish".to_string()]);
    }
}
