//! Adaptive Replacement Cache.
//!
//! Four LRU lists: `t1` holds entries seen once recently, `t2` entries seen
//! at least twice, and the ghost lists `b1`/`b2` remember keys recently
//! evicted from `t1`/`t2` (without their values). A hit on a ghost key moves
//! the adaptive target `p` (the desired size of `t1`) toward the list that
//! would have kept it. Resident entries never exceed `capacity`; resident
//! plus ghost entries never exceed `2 * capacity`.

use alloc::vec::Vec;
use core::hash::Hash;

use hashbrown::HashMap;

const NIL: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Which {
    T1,
    T2,
    B1,
    B2,
}

struct Node<K> {
    key: Option<K>,
    prev: usize,
    next: usize,
}

/// Doubly-linked lists threaded through one shared slab.
struct Lists<K> {
    nodes: Vec<Node<K>>,
    free: Vec<usize>,
    // (head = MRU, tail = LRU, len) per list
    ends: [(usize, usize, usize); 4],
}

impl<K: Clone> Lists<K> {
    fn new() -> Self {
        Lists { nodes: Vec::new(), free: Vec::new(), ends: [(NIL, NIL, 0); 4] }
    }

    fn idx(w: Which) -> usize {
        w as usize
    }

    fn len(&self, w: Which) -> usize {
        self.ends[Self::idx(w)].2
    }

    fn push_front(&mut self, w: Which, key: K) -> usize {
        let node = Node { key: Some(key), prev: NIL, next: self.ends[Self::idx(w)].0 };
        let id = match self.free.pop() {
            Some(id) => {
                self.nodes[id] = node;
                id
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        };
        let ends = &mut self.ends[Self::idx(w)];
        if ends.0 != NIL {
            self.nodes[ends.0].prev = id;
        }
        ends.0 = id;
        if ends.1 == NIL {
            ends.1 = id;
        }
        ends.2 += 1;
        id
    }

    fn unlink(&mut self, w: Which, id: usize) -> K {
        let (prev, next) = (self.nodes[id].prev, self.nodes[id].next);
        let ends = &mut self.ends[Self::idx(w)];
        if prev == NIL {
            ends.0 = next;
        } else {
            self.nodes[prev].next = next;
        }
        if next == NIL {
            ends.1 = prev;
        } else {
            self.nodes[next].prev = prev;
        }
        ends.2 -= 1;
        self.free.push(id);
        self.nodes[id].key.take().expect("linked node has a key")
    }

    fn lru(&self, w: Which) -> Option<usize> {
        let t = self.ends[Self::idx(w)].1;
        (t != NIL).then_some(t)
    }

    #[cfg(test)]
    fn key(&self, id: usize) -> &K {
        self.nodes[id].key.as_ref().expect("linked node has a key")
    }
}

struct Slot<V> {
    list: Which,
    node: usize,
    value: Option<V>,
}

pub struct ArcCache<K, V> {
    capacity: usize,
    target_t1: usize,
    lists: Lists<K>,
    map: HashMap<K, Slot<V>>,
}

impl<K: Hash + Eq + Clone, V> ArcCache<K, V> {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "ARC capacity must be positive");
        ArcCache { capacity, target_t1: 0, lists: Lists::new(), map: HashMap::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of live (value-holding) entries.
    pub fn len(&self) -> usize {
        self.lists.len(Which::T1) + self.lists.len(Which::T2)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ghost_len(&self) -> usize {
        self.lists.len(Which::B1) + self.lists.len(Which::B2)
    }

    pub fn target(&self) -> usize {
        self.target_t1
    }

    pub fn contains(&self, key: &K) -> bool {
        self.map.get(key).is_some_and(|s| s.value.is_some())
    }

    /// Looks up `key`; a hit promotes the entry to the frequency list.
    pub fn get(&mut self, key: &K) -> Option<&V> {
        let (list, node) = match self.map.get(key) {
            Some(s) if s.value.is_some() => (s.list, s.node),
            _ => return None,
        };
        let k = self.lists.unlink(list, node);
        let new_node = self.lists.push_front(Which::T2, k);
        let slot = self.map.get_mut(key).expect("present");
        slot.list = Which::T2;
        slot.node = new_node;
        slot.value.as_ref()
    }

    pub fn peek(&self, key: &K) -> Option<&V> {
        self.map.get(key).and_then(|s| s.value.as_ref())
    }

    /// Inserts or replaces `key`. Returns the previous value if the key was
    /// resident.
    pub fn insert(&mut self, key: K, value: V) -> Option<V> {
        let c = self.capacity;
        if let Some(slot) = self.map.get(&key) {
            match slot.list {
                Which::T1 | Which::T2 => {
                    let old = self.get_slot_mut(&key).value.replace(value);
                    self.get(&key);
                    return old;
                }
                Which::B1 => {
                    let (b1, b2) = (self.lists.len(Which::B1), self.lists.len(Which::B2));
                    let delta = core::cmp::max(b2 / b1.max(1), 1);
                    self.target_t1 = core::cmp::min(c, self.target_t1 + delta);
                    self.replace(false);
                    self.promote_ghost(key, value);
                    return None;
                }
                Which::B2 => {
                    let (b1, b2) = (self.lists.len(Which::B1), self.lists.len(Which::B2));
                    let delta = core::cmp::max(b1 / b2.max(1), 1);
                    self.target_t1 = self.target_t1.saturating_sub(delta);
                    self.replace(true);
                    self.promote_ghost(key, value);
                    return None;
                }
            }
        }

        let l1 = self.lists.len(Which::T1) + self.lists.len(Which::B1);
        if l1 == c {
            if self.lists.len(Which::T1) < c {
                self.drop_lru(Which::B1);
                self.replace(false);
            } else {
                // b1 is empty here; evict the t1 LRU outright.
                self.drop_lru(Which::T1);
            }
        } else {
            let total = l1 + self.lists.len(Which::T2) + self.lists.len(Which::B2);
            if total >= c {
                if total >= 2 * c {
                    self.drop_lru(Which::B2);
                }
                self.replace(false);
            }
        }
        let node = self.lists.push_front(Which::T1, key.clone());
        self.map.insert(key, Slot { list: Which::T1, node, value: Some(value) });
        None
    }

    pub fn remove(&mut self, key: &K) -> Option<V> {
        let slot = self.map.remove(key)?;
        self.lists.unlink(slot.list, slot.node);
        slot.value
    }

    /// Drops every live entry for which `keep` returns false. Ghost entries
    /// for the dropped keys are removed as well.
    pub fn retain<F: FnMut(&K, &V) -> bool>(&mut self, mut keep: F) -> usize {
        let doomed: Vec<K> = self
            .map
            .iter()
            .filter_map(|(k, s)| match &s.value {
                Some(v) if !keep(k, v) => Some(k.clone()),
                _ => None,
            })
            .collect();
        for k in &doomed {
            self.remove(k);
        }
        doomed.len()
    }

    pub fn clear(&mut self) {
        self.map.clear();
        self.lists = Lists::new();
        self.target_t1 = 0;
    }

    fn get_slot_mut(&mut self, key: &K) -> &mut Slot<V> {
        self.map.get_mut(key).expect("present")
    }

    fn promote_ghost(&mut self, key: K, value: V) {
        let slot = self.map.get(&key).expect("ghost present");
        let (list, node) = (slot.list, slot.node);
        let k = self.lists.unlink(list, node);
        let node = self.lists.push_front(Which::T2, k);
        let slot = self.get_slot_mut(&key);
        slot.list = Which::T2;
        slot.node = node;
        slot.value = Some(value);
    }

    fn drop_lru(&mut self, w: Which) {
        if let Some(id) = self.lists.lru(w) {
            let k = self.lists.unlink(w, id);
            self.map.remove(&k);
        }
    }

    /// Moves one resident entry to its ghost list to make room.
    fn replace(&mut self, requested_in_b2: bool) {
        let t1 = self.lists.len(Which::T1);
        let t2 = self.lists.len(Which::T2);
        if t1 + t2 < self.capacity {
            return;
        }
        let from_t1 =
            t1 >= 1 && ((requested_in_b2 && t1 == self.target_t1) || t1 > self.target_t1 || t2 == 0);
        let (from, to) = if from_t1 { (Which::T1, Which::B1) } else { (Which::T2, Which::B2) };
        if let Some(id) = self.lists.lru(from) {
            let k = self.lists.unlink(from, id);
            let node = self.lists.push_front(to, k.clone());
            let slot = self.get_slot_mut(&k);
            slot.list = to;
            slot.node = node;
            slot.value = None;
        }
    }

    #[cfg(test)]
    fn check_invariants(&self) {
        let t1 = self.lists.len(Which::T1);
        let t2 = self.lists.len(Which::T2);
        let b1 = self.lists.len(Which::B1);
        let b2 = self.lists.len(Which::B2);
        assert!(t1 + t2 <= self.capacity, "resident {t1}+{t2} > {}", self.capacity);
        assert!(t1 + b1 <= self.capacity);
        assert!(t1 + t2 + b1 + b2 <= 2 * self.capacity);
        assert!(self.target_t1 <= self.capacity);
        assert_eq!(self.map.len(), t1 + t2 + b1 + b2);
        for (k, s) in &self.map {
            assert!(self.lists.key(s.node) == k);
            assert_eq!(s.value.is_some(), matches!(s.list, Which::T1 | Which::T2));
        }
    }
}
