use super::*;
use crate::isa::Category;
use proptest::prelude::*;

fn cached() -> RunConfig {
    let mut c = RunConfig::default();
    c.cache.enabled = true;
    c
}

fn small(k: Kernel) -> usize {
    match k {
        Kernel::Gemv => 40,
        Kernel::Bs => 600,
        _ => 1000,
    }
}

#[test]
fn every_kernel_passes_in_both_variants() {
    for k in Kernel::ALL {
        for cfg in [RunConfig::default(), cached()] {
            for (dpus, threads) in [(1, 1), (1, 5), (3, 16)] {
                let r = run_and_check(k, dpus, threads, &cfg, small(k), 7).unwrap();
                assert!(r.passed(), "{k} {:?} {dpus}x{threads}: {}", r.variant, r.mismatch.unwrap());
            }
        }
    }
}

#[test]
fn degenerate_sizes() {
    for k in Kernel::ALL {
        for n in [0, 1, 3] {
            let r = run_and_check(k, 2, 3, &RunConfig::default(), n, 1).unwrap();
            assert!(r.passed(), "{k} n={n}: {:?}", r.mismatch);
        }
    }
}

#[test]
fn reference_examples() {
    let d = Dataset::Va { a: vec![1, 2, u32::MAX], b: vec![3, 4, 2] };
    assert_eq!(d.reference(), vec![4, 6, 1]);
    assert_eq!(Dataset::Red { a: vec![1; 512] }.reference(), vec![512]);
    let r = run_dataset(&Dataset::Red { a: vec![1; 512] }, 1, 8, &RunConfig::default()).unwrap();
    assert_eq!(r.outputs, vec![512]);
    assert_eq!(Dataset::Scan { a: vec![1, 2, 3] }.reference(), vec![1, 3, 6]);
    let bs = Dataset::Bs { keys: vec![2, 5, 9], queries: vec![5, 4, 2, 10] };
    assert_eq!(bs.reference(), vec![1, u32::MAX, 0, u32::MAX]);
    let g = Dataset::Gemv { rows: 2, k: 2, a: vec![1, 2, 3, 4], x: vec![10, 1] };
    assert_eq!(g.reference(), vec![12, 34]);
}

#[test]
fn histogram_recount() {
    let Dataset::Hst { a } = Dataset::generate(Kernel::Hst, 4096, 3) else { unreachable!() };
    let h = Dataset::Hst { a: a.clone() }.reference();
    assert_eq!(h.iter().sum::<u32>(), 4096);
    for bin in [0u32, 17, 255] {
        assert_eq!(h[bin as usize], a.iter().filter(|v| *v & 255 == bin).count() as u32);
    }
}

#[test]
fn generation_is_deterministic() {
    for k in Kernel::ALL {
        assert_eq!(Dataset::generate(k, 100, 9), Dataset::generate(k, 100, 9));
        assert_ne!(Dataset::generate(k, 100, 9), Dataset::generate(k, 100, 10));
    }
    let Dataset::Bs { keys, queries } = Dataset::generate(Kernel::Bs, 1000, 4) else { unreachable!() };
    assert!(keys.windows(2).all(|w| w[0] < w[1]));
    let hits = queries.iter().filter(|q| keys.binary_search(q).is_ok()).count();
    assert!(hits > queries.len() / 4 && hits < queries.len() * 3 / 4, "{hits}");
}

#[test]
fn mismatch_reports_first_divergence() {
    assert_eq!(first_mismatch(&[1, 2, 3], &[1, 2, 3]), None);
    let m = first_mismatch(&[1, 2, 3], &[1, 9, 4]).unwrap();
    assert_eq!((m.index, m.expected, m.got), (1, Some(2), Some(9)));
    let m = first_mismatch(&[1, 2], &[1]).unwrap();
    assert_eq!((m.index, m.got), (1, None));
}

#[test]
fn kernel_names_parse() {
    for k in Kernel::ALL {
        assert_eq!(k.name().to_lowercase().parse::<Kernel>().unwrap(), k);
    }
    assert!("nope".parse::<Kernel>().is_err());
}

#[test]
fn va_uses_more_wram_accesses_than_dma() {
    let r = run_and_check(Kernel::Va, 1, 16, &RunConfig::default(), 4096, 7).unwrap();
    let mix = &r.set.launches[0].per_dpu[0].mix;
    assert!(mix.get(Category::LoadStoreWram) > mix.get(Category::Dma));
}

#[test]
fn contended_histogram_spends_more_on_sync() {
    let frac = |t| {
        let r = run_and_check(Kernel::Hst, 1, t, &RunConfig::default(), 2048, 7).unwrap();
        let mix = &r.set.launches[0].per_dpu[0].mix;
        mix.get(Category::Sync) as f64 / mix.total() as f64
    };
    let (one, many) = (frac(1), frac(16));
    assert!(many > one, "{one} vs {many}");
}

#[test]
fn strong_scaling_shrinks_kernel_time() {
    let cfg = RunConfig::default();
    for k in [Kernel::Va, Kernel::Red] {
        let one = run_and_check(k, 1, 16, &cfg, 1 << 18, 2).unwrap();
        let many = run_and_check(k, 16, 16, &cfg, 1 << 18, 2).unwrap();
        let (t1, t16) = (one.kernel_seconds(), many.kernel_seconds());
        assert!(t16 <= 1.15 * t1 / 16.0, "{k}: {t1} on 1 DPU, {t16} on 16");
    }
}

#[test]
fn cache_and_scratchpad_agree_on_bs() {
    let s = run_and_check(Kernel::Bs, 1, 16, &RunConfig::default(), 4096, 5).unwrap();
    let c = run_and_check(Kernel::Bs, 1, 16, &cached(), 4096, 5).unwrap();
    assert!(s.passed() && c.passed());
    assert_eq!(s.outputs, c.outputs);
    assert_ne!(s.dram_bytes_read(), c.dram_bytes_read());
}

proptest! {
    #[test]
    fn split_covers_every_item_once(n in 0usize..5000, parts in 1usize..70) {
        let r = split(n, parts);
        prop_assert_eq!(r.len(), parts);
        let mut next = 0;
        for p in &r {
            prop_assert_eq!(p.start, next);
            next = p.end;
        }
        prop_assert_eq!(next, n);
        let lens: Vec<usize> = r.iter().map(|p| p.len()).collect();
        prop_assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
    }
}
