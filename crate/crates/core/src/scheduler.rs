//! Batch formation: decreasing first-fit admission against an HBM ledger.
//!
//! The GPU (or pipeline of GPUs) is a single bin. Pooled sequences are kept
//! sorted by reservation size, largest first, and an admission pass walks the
//! pool once, taking every sequence that fits in the remaining free bytes and
//! skipping the rest. The same pass runs both at arrival time and once per
//! generation iteration, so freed memory is refilled at token granularity.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::{GpuConfig, ModelConfig};

/// One pooled sequence, keyed for decreasing first-fit order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolEntry {
    /// Index into the engine's sequence arena.
    pub seq_index: usize,
    /// Bytes the sequence needs resident: (prompt + allocated) * kv per token.
    pub reservation_bytes: u64,
    pub arrival_time: f64,
    pub id: u64,
    /// Admission passes that considered and skipped this entry.
    pub skipped: u64,
}

/// Reservation descending, then arrival ascending, then id ascending.
fn pool_order(a: &PoolEntry, b: &PoolEntry) -> Ordering {
    b.reservation_bytes
        .cmp(&a.reservation_bytes)
        .then(a.arrival_time.total_cmp(&b.arrival_time))
        .then(a.id.cmp(&b.id))
}

/// The request pool, always sorted in decreasing first-fit order.
#[derive(Debug, Clone, Default)]
pub struct PoolView {
    entries: Vec<PoolEntry>,
}

impl PoolView {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    /// Insert keeping the sort order; position found by binary search.
    pub fn insert(&mut self, seq_index: usize, reservation_bytes: u64, arrival_time: f64, id: u64) {
        let entry = PoolEntry {
            seq_index,
            reservation_bytes,
            arrival_time,
            id,
            skipped: 0,
        };
        let pos = self
            .entries
            .partition_point(|e| pool_order(e, &entry) != Ordering::Greater);
        self.entries.insert(pos, entry);
    }

    fn is_sorted(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| pool_order(&w[0], &w[1]) != Ordering::Greater)
    }
}

/// Byte accounting for the KV region of HBM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryLedger {
    /// Total HBM across the pipeline, in bytes.
    pub hbm_capacity: u64,
    /// Bytes pinned by model weights.
    pub weight_bytes: u64,
    /// Bytes reserved by running sequences.
    pub reserved_bytes: u64,
}

impl MemoryLedger {
    pub fn new(model: &ModelConfig, gpu: &GpuConfig) -> Self {
        Self {
            hbm_capacity: gpu.hbm_capacity * gpu.num_gpus,
            weight_bytes: model.weight_bytes,
            reserved_bytes: 0,
        }
    }

    /// Bytes available to KV caches when nothing is running.
    pub fn capacity_bytes(&self) -> u64 {
        self.hbm_capacity - self.weight_bytes
    }

    pub fn free_bytes(&self) -> u64 {
        self.capacity_bytes() - self.reserved_bytes
    }

    pub fn reserve(&mut self, bytes: u64) -> Result<()> {
        if bytes > self.free_bytes() {
            return Err(Error::Mismatch(format!(
                "ledger over-reservation: {} bytes requested, {} free",
                bytes,
                self.free_bytes()
            )));
        }
        self.reserved_bytes += bytes;
        Ok(())
    }

    pub fn release(&mut self, bytes: u64) -> Result<()> {
        if bytes > self.reserved_bytes {
            return Err(Error::Mismatch(format!(
                "ledger under-release: {} bytes released, {} reserved",
                bytes, self.reserved_bytes
            )));
        }
        self.reserved_bytes -= bytes;
        Ok(())
    }

    /// Safety invariant: reservations never spill past physical HBM.
    pub fn check(&self) -> Result<()> {
        if self.reserved_bytes + self.weight_bytes > self.hbm_capacity {
            return Err(Error::Mismatch(format!(
                "ledger overflow: {} reserved + {} weights > {} HBM",
                self.reserved_bytes, self.weight_bytes, self.hbm_capacity
            )));
        }
        Ok(())
    }
}

/// One decreasing first-fit admission pass.
///
/// Walks the sorted pool once. Entries that have arrived and fit in the
/// remaining free bytes are admitted (removed from the pool, reserved in the
/// ledger); entries that do not fit are skipped and stay pooled. `max_admit`
/// caps how many sequences may be admitted (batch-size cap minus current
/// batch); `max_skip_iterations`, when set, turns an entry already skipped
/// that many times into a head-of-line barrier so smaller latecomers stop
/// overtaking it.
pub fn admit(
    pool: &mut PoolView,
    ledger: &mut MemoryLedger,
    now: f64,
    max_admit: Option<usize>,
    max_skip_iterations: Option<u64>,
) -> Result<Vec<PoolEntry>> {
    debug_assert!(pool.is_sorted());
    let mut admitted = Vec::new();
    let mut kept = Vec::with_capacity(pool.entries.len());
    let mut free = ledger.free_bytes();
    let mut slots = max_admit.unwrap_or(usize::MAX);
    let mut barred = false;
    for mut entry in pool.entries.drain(..) {
        if barred || slots == 0 || entry.arrival_time > now {
            kept.push(entry);
            continue;
        }
        if entry.reservation_bytes > ledger.hbm_capacity - ledger.weight_bytes {
            return Err(Error::Unschedulable {
                id: entry.id,
                reservation_bytes: entry.reservation_bytes,
                capacity_bytes: ledger.hbm_capacity - ledger.weight_bytes,
            });
        }
        if entry.reservation_bytes <= free {
            free -= entry.reservation_bytes;
            slots -= 1;
            admitted.push(entry);
        } else {
            // An entry already skipped `limit` times blocks everything behind
            // it, so `limit` is the number of passes it may be overtaken.
            if max_skip_iterations.is_some_and(|limit| entry.skipped >= limit) {
                barred = true;
            }
            entry.skipped += 1;
            kept.push(entry);
        }
    }
    pool.entries = kept;
    for entry in &admitted {
        ledger.reserve(entry.reservation_bytes)?;
    }
    Ok(admitted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ledger(capacity: u64) -> MemoryLedger {
        MemoryLedger {
            hbm_capacity: capacity,
            weight_bytes: 0,
            reserved_bytes: 0,
        }
    }

    fn pool_of(reservations: &[u64]) -> PoolView {
        let mut pool = PoolView::new();
        for (i, &r) in reservations.iter().enumerate() {
            pool.insert(i, r, i as f64 * 0.001, i as u64);
        }
        pool
    }

    #[test]
    fn first_fit_decreasing_hand_trace() {
        // Reservations [5,3,3,2] into capacity 8: take 5, take the first 3,
        // skip the second 3 and the 2.
        let mut pool = pool_of(&[5, 3, 3, 2]);
        let mut led = ledger(8);
        let admitted = admit(&mut pool, &mut led, 10.0, None, None).unwrap();
        let bytes: Vec<u64> = admitted.iter().map(|e| e.reservation_bytes).collect();
        assert_eq!(bytes, vec![5, 3]);
        assert_eq!(admitted[1].id, 1, "tie broken toward earlier arrival");
        assert_eq!(led.reserved_bytes, 8);
        assert_eq!(pool.len(), 2);
    }

    #[test]
    fn empty_pool_is_a_no_op() {
        let mut pool = PoolView::new();
        let mut led = ledger(8);
        assert!(admit(&mut pool, &mut led, 0.0, None, None)
            .unwrap()
            .is_empty());
        assert_eq!(led.reserved_bytes, 0);
    }

    #[test]
    fn future_arrivals_are_ineligible() {
        let mut pool = PoolView::new();
        pool.insert(0, 4, 5.0, 0);
        let mut led = ledger(8);
        assert!(admit(&mut pool, &mut led, 4.9, None, None)
            .unwrap()
            .is_empty());
        assert_eq!(
            admit(&mut pool, &mut led, 5.0, None, None).unwrap().len(),
            1
        );
    }

    #[test]
    fn equal_reservations_order_by_arrival_then_id() {
        let mut pool = PoolView::new();
        pool.insert(0, 7, 2.0, 9);
        pool.insert(1, 7, 1.0, 5);
        pool.insert(2, 7, 1.0, 3);
        let ids: Vec<u64> = pool.entries().iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![3, 5, 9]);
    }

    #[test]
    fn oversized_reservation_is_unschedulable() {
        let mut pool = pool_of(&[9]);
        let mut led = ledger(8);
        assert!(matches!(
            admit(&mut pool, &mut led, 0.0, None, None),
            Err(Error::Unschedulable { id: 0, .. })
        ));
    }

    #[test]
    fn skipped_but_feasible_is_not_unschedulable() {
        // 6 fits the machine but not the residual after 5; it is skipped,
        // not an error.
        let mut pool = pool_of(&[6, 5]);
        let mut led = ledger(8);
        led.reserved_bytes = 3;
        let admitted = admit(&mut pool, &mut led, 1.0, None, None).unwrap();
        assert_eq!(admitted.len(), 1);
        assert_eq!(admitted[0].reservation_bytes, 5);
        assert_eq!(pool.len(), 1);
    }

    #[test]
    fn batch_cap_limits_admissions() {
        let mut pool = pool_of(&[2, 2, 2, 2]);
        let mut led = ledger(100);
        let admitted = admit(&mut pool, &mut led, 1.0, Some(2), None).unwrap();
        assert_eq!(admitted.len(), 2);
        assert_eq!(pool.len(), 2);
        // Entries passed over for batch-cap reasons are not counted skipped.
        assert!(pool.entries().iter().all(|e| e.skipped == 0));
    }

    #[test]
    fn skip_limit_becomes_head_of_line_barrier() {
        let mut pool = pool_of(&[10, 2]);
        let mut led = ledger(11);
        led.reserved_bytes = 3; // 8 free: 10 skipped once, 2 admitted
        let admitted = admit(&mut pool, &mut led, 1.0, None, Some(1)).unwrap();
        assert_eq!(admitted.len(), 1);
        assert_eq!(admitted[0].reservation_bytes, 2);
        // The 10 now bars later entries until it fits.
        pool.insert(9, 2, 0.0, 9);
        let admitted = admit(&mut pool, &mut led, 1.0, None, Some(1)).unwrap();
        assert!(admitted.is_empty());
        led.release(5).unwrap(); // 10 free
        let admitted = admit(&mut pool, &mut led, 1.0, None, Some(1)).unwrap();
        assert_eq!(admitted[0].reservation_bytes, 10);
    }

    #[test]
    fn ledger_guards_both_directions() {
        let mut led = ledger(10);
        led.weight_bytes = 4;
        assert_eq!(led.capacity_bytes(), 6);
        assert!(led.reserve(7).is_err());
        led.reserve(6).unwrap();
        assert_eq!(led.free_bytes(), 0);
        assert!(led.release(7).is_err());
        led.release(6).unwrap();
        assert!(led.check().is_ok());
    }

    proptest! {
        #[test]
        fn admission_is_safe_and_maximal(
            reservations in proptest::collection::vec(1u64..100, 0..40),
            capacity in 1u64..400,
        ) {
            let mut pool = pool_of(&reservations);
            let mut led = ledger(capacity);
            prop_assume!(reservations.iter().all(|&r| r <= capacity));
            let admitted = admit(&mut pool, &mut led, 100.0, None, None).unwrap();
            let used: u64 = admitted.iter().map(|e| e.reservation_bytes).sum();
            prop_assert_eq!(used, led.reserved_bytes);
            prop_assert!(used <= capacity);
            // Maximality: nothing left in the pool fits the residual.
            for e in pool.entries() {
                prop_assert!(e.reservation_bytes > capacity - used);
            }
        }

        #[test]
        fn small_instances_match_exhaustive_extension_check(
            reservations in proptest::collection::vec(1u64..30, 1..9),
            capacity in 1u64..120,
        ) {
            prop_assume!(reservations.iter().all(|&r| r <= capacity));
            let mut pool = pool_of(&reservations);
            let mut led = ledger(capacity);
            let admitted = admit(&mut pool, &mut led, 100.0, None, None).unwrap();
            let used: u64 = admitted.iter().map(|e| e.reservation_bytes).sum();
            let skipped: Vec<u64> = pool.entries().iter().map(|e| e.reservation_bytes).collect();
            // Every non-empty subset of the skipped items overflows when added
            // to the admitted set.
            for mask in 1u32..(1 << skipped.len()) {
                let extra: u64 = skipped
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, &r)| r)
                    .sum();
                prop_assert!(used + extra > capacity);
            }
        }

        #[test]
        fn pool_stays_sorted_under_random_inserts(
            items in proptest::collection::vec((1u64..50, 0u64..10), 0..30),
        ) {
            let mut pool = PoolView::new();
            for (i, (r, a)) in items.iter().enumerate() {
                pool.insert(i, *r, *a as f64, i as u64);
            }
            for w in pool.entries().windows(2) {
                prop_assert!(
                    w[0].reservation_bytes > w[1].reservation_bytes
                        || (w[0].reservation_bytes == w[1].reservation_bytes
                            && (w[0].arrival_time, w[0].id) <= (w[1].arrival_time, w[1].id))
                );
            }
        }
    }
}
