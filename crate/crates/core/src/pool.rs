//! Bounded worker pool with in-order delivery.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

/// Applies `work` to every item on at most `bound` threads and hands results
/// to `sink` strictly in item order, as soon as each prefix is complete.
/// Returning `false` from `sink` stops handing out new items.
pub fn for_each_ordered<T, R, W, S>(items: &[T], bound: usize, work: W, mut sink: S)
where
    T: Sync,
    R: Send,
    W: Fn(&T) -> R + Sync,
    S: FnMut(usize, R) -> bool,
{
    if items.is_empty() {
        return;
    }
    let workers = bound.clamp(1, items.len());
    let next = AtomicUsize::new(0);
    let stop = std::sync::atomic::AtomicBool::new(false);
    thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, R)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, stop, work) = (&next, &stop, &work);
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                if tx.send((i, work(&items[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut expected = 0;
        let mut open = true;
        for (i, r) in rx {
            pending.insert(i, r);
            while let Some(r) = pending.remove(&expected) {
                if open && !sink(expected, r) {
                    open = false;
                    stop.store(true, Ordering::SeqCst);
                }
                expected += 1;
            }
        }
    });
}

pub fn map_ordered<T, R, W>(items: &[T], bound: usize, work: W) -> Vec<R>
where
    T: Sync,
    R: Send,
    W: Fn(&T) -> R + Sync,
{
    let mut out = Vec::with_capacity(items.len());
    for_each_ordered(items, bound, work, |_, r| {
        out.push(r);
        true
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_bound() {
        let items: Vec<u64> = (0..200).collect();
        let slow = |x: &u64| {
            std::thread::sleep(std::time::Duration::from_micros((x * 37) % 500));
            x * x
        };
        let one = map_ordered(&items, 1, slow);
        for bound in [2, 8, 64] {
            assert_eq!(map_ordered(&items, bound, slow), one);
        }
    }

    #[test]
    fn sink_can_stop_early() {
        let items: Vec<u32> = (0..100).collect();
        let mut seen = Vec::new();
        for_each_ordered(
            &items,
            4,
            |x| *x,
            |i, r| {
                seen.push((i, r));
                i < 9
            },
        );
        assert_eq!(seen.len(), 10);
        assert!(seen
            .iter()
            .enumerate()
            .all(|(i, &(j, r))| i == j && r == i as u32));
    }
}
