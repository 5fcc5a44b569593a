//! Tick-delayed message delivery.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Messages enqueued during tick `t` become visible at tick `t + 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MessageBus<M> {
    pending: BTreeMap<u64, Vec<M>>,
}

impl<M> Default for MessageBus<M> {
    fn default() -> Self {
        Self { pending: BTreeMap::new() }
    }
}

impl<M> MessageBus<M> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&mut self, sent_tick: u64, message: M) {
        self.pending.entry(sent_tick + 1).or_default().push(message);
    }

    /// Removes and returns everything due at or before `tick`, oldest first.
    pub fn take_due(&mut self, tick: u64) -> Vec<M> {
        let later = self.pending.split_off(&(tick + 1));
        let due = std::mem::replace(&mut self.pending, later);
        due.into_values().flatten().collect()
    }

    pub fn len(&self) -> usize {
        self.pending.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delivered_next_tick_not_same_tick() {
        let mut bus = MessageBus::new();
        bus.send(10, "hi");
        assert!(bus.take_due(10).is_empty());
        assert_eq!(bus.take_due(11), vec!["hi"]);
        assert!(bus.is_empty());
    }

    #[test]
    fn order_is_by_delivery_then_send_order() {
        let mut bus = MessageBus::new();
        bus.send(3, "b");
        bus.send(1, "a1");
        bus.send(1, "a2");
        assert_eq!(bus.take_due(5), vec!["a1", "a2", "b"]);
    }

    proptest::proptest! {
        #[test]
        fn never_read_in_sending_tick(sends in proptest::collection::vec(0u64..50, 0..40)) {
            let mut bus = MessageBus::new();
            for (i, t) in sends.iter().enumerate() {
                bus.send(*t, (*t, i));
            }
            for tick in 0..=51 {
                for (sent, _) in bus.take_due(tick) {
                    proptest::prop_assert!(sent < tick);
                }
            }
            proptest::prop_assert!(bus.is_empty());
        }
    }
}
