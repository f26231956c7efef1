use thiserror::Error;

use crate::relations::InjectionMap;
use crate::semantics::FrameEvent;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("frame events cannot be paired: {0}")]
pub struct LogDesync(pub String);

/// Updates `j` with the frame events of one synchronization window.
/// Returns how many tail-recursive remappings happened.
///
/// Allocations on both sides pair up at delta 0 and matching frees drop
/// the pair. An original-side free immediately followed by an
/// original-side allocation, with nothing on the transformed side, moves
/// the old frame's image to the new frame. A transformed-side free on its
/// own unmaps whatever maps into the freed block.
pub fn track_window(
    j: &mut InjectionMap,
    o: &[FrameEvent],
    t: &[FrameEvent],
) -> Result<usize, LogDesync> {
    use FrameEvent::{Alloc, Free};
    let (mut i, mut k) = (0, 0);
    let mut remaps = 0;
    loop {
        match (o.get(i), t.get(k)) {
            (None, None) => return Ok(remaps),
            (Some(Alloc(bo, _)), Some(Alloc(bt, _))) => {
                j.insert(*bo, *bt, 0);
                i += 1;
                k += 1;
            }
            (Some(Free(bo, _)), Some(Free(bt, _))) if j.get(*bo).map(|x| x.0) == Some(*bt) => {
                j.remove(*bo);
                j.unmap_target(*bt);
                i += 1;
                k += 1;
            }
            (Some(Free(bo, _)), _) if j.get(*bo).is_none() => i += 1,
            (Some(Free(bo, _)), next)
                if !matches!(next, Some(Alloc(..))) && matches!(o.get(i + 1), Some(Alloc(..))) =>
            {
                let Some(Alloc(fresh, _)) = o.get(i + 1) else {
                    unreachable!()
                };
                let (img, d) = j.remove(*bo).expect("mapped");
                j.insert(*fresh, img, d);
                remaps += 1;
                i += 2;
            }
            (None | Some(Alloc(..)), Some(Free(bt, _))) => {
                j.unmap_target(*bt);
                k += 1;
            }
            (a, b) => {
                return Err(LogDesync(format!(
                    "original {a:?} against transformed {b:?}"
                )))
            }
        }
    }
}

/// Replays a sequence of windows from an empty map, returning the map
/// after each window.
pub fn track_injection(
    windows: &[(Vec<FrameEvent>, Vec<FrameEvent>)],
) -> Result<Vec<InjectionMap>, LogDesync> {
    let mut j = InjectionMap::new();
    let mut out = Vec::with_capacity(windows.len());
    for (o, t) in windows {
        track_window(&mut j, o, t)?;
        out.push(j.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::BlockId;
    use FrameEvent::{Alloc, Free};

    fn b(i: u32) -> BlockId {
        BlockId(i)
    }

    #[test]
    fn identical_allocations_pair_up() {
        let maps = track_injection(&[
            (vec![Alloc(b(1), 8)], vec![Alloc(b(1), 8)]),
            (vec![Alloc(b(2), 0)], vec![Alloc(b(2), 0)]),
            (vec![Free(b(2), 0)], vec![Free(b(2), 0)]),
        ])
        .unwrap();
        assert_eq!(
            maps[1].iter().collect::<Vec<_>>(),
            vec![(b(1), b(1), 0), (b(2), b(2), 0)]
        );
        assert_eq!(maps[2].iter().collect::<Vec<_>>(), vec![(b(1), b(1), 0)]);
    }

    #[test]
    fn tail_recursion_remaps() {
        let mut j = InjectionMap::new();
        track_window(&mut j, &[Alloc(b(1), 0)], &[Alloc(b(1), 0)]).unwrap();
        let mut remaps = 0;
        for n in 1..=3 {
            remaps += track_window(&mut j, &[Free(b(n), 0), Alloc(b(n + 1), 0)], &[]).unwrap();
            assert_eq!(j.get(b(n)), None);
            assert_eq!(j.get(b(n + 1)), Some((b(1), 0)));
        }
        assert_eq!(remaps, 3);
    }

    #[test]
    fn transformed_free_unmaps_old_frame() {
        let mut j = InjectionMap::new();
        track_window(&mut j, &[Alloc(b(1), 0)], &[Alloc(b(1), 0)]).unwrap();
        track_window(&mut j, &[], &[Free(b(1), 0)]).unwrap();
        assert!(j.is_empty());
        // The original frees it later on its own.
        track_window(&mut j, &[Free(b(1), 0)], &[]).unwrap();
    }

    #[test]
    fn mismatched_free_order_desyncs() {
        let mut j = InjectionMap::new();
        track_window(
            &mut j,
            &[Alloc(b(1), 8), Alloc(b(2), 8)],
            &[Alloc(b(1), 8), Alloc(b(2), 8)],
        )
        .unwrap();
        let r = track_window(
            &mut j,
            &[Free(b(1), 8), Free(b(2), 8)],
            &[Free(b(2), 8), Free(b(1), 8)],
        );
        assert!(r.is_err());
    }

    #[test]
    fn unpaired_allocation_desyncs() {
        let mut j = InjectionMap::new();
        assert!(track_window(&mut j, &[Alloc(b(1), 8)], &[]).is_err());
        assert!(track_window(&mut j, &[], &[Alloc(b(1), 8)]).is_err());
    }
}
