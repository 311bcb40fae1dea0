use std::collections::{BTreeSet, HashMap, HashSet};

use obfscope::bytecode::{decode, keccak256, opcode, segment, strip_metadata, CodeHash};
use obfscope::enrichment::{lift_table, LiftConfig, PatternKind};
use obfscope::features::{
    classify_erc, minimal_proxy_runtime, proxy_indicator, signature_density, OpcodeHistogram, Selector,
    SelectorSet, StructuralFeatures,
};
use obfscope::records::{ScoreRecord, ScoreSource};
use obfscope::reuse::{directional_overlap, jaccard, overlap_coeff};
use obfscope::triage::{
    secondary_rank, QueueConfig, QueueEntry, QueueSpec, SecondaryContext, SecondaryWeights, Tier, TriageQueue,
};
use proptest::prelude::*;
use tiny_keccak::{Hasher, Keccak};

fn reference_keccak(data: &[u8]) -> [u8; 32] {
    let mut k = Keccak::v256();
    let mut out = [0u8; 32];
    k.update(data);
    k.finalize(&mut out);
    out
}

/// Body followed by a CBOR map of `m` bytes and its big-endian length.
fn with_trailer(body: &[u8], m: usize) -> Vec<u8> {
    let mut v = body.to_vec();
    v.push(0xa1);
    v.extend(std::iter::repeat(0x42).take(m - 1));
    v.extend((m as u16).to_be_bytes());
    v
}

fn features_from(selectors: SelectorSet, hist: OpcodeHistogram, byte_len: usize) -> StructuralFeatures {
    StructuralFeatures {
        selector_count: selectors.len(),
        signature_density: signature_density(selectors.len(), byte_len).unwrap(),
        selectors,
        byte_len,
        erc20: false,
        erc721: false,
        proxy: false,
        minimal_proxy: false,
        opcode_hist: hist,
    }
}

fn arb_features() -> impl Strategy<Value = StructuralFeatures> {
    (
        prop::collection::btree_set(0u8..12, 0..6),
        prop::collection::vec((0u8..=255, 1u64..20), 1..8),
    )
        .prop_map(|(sel, ops)| {
            let selectors = sel.into_iter().map(|b| Selector([0xab, 0xcd, 0x00, b])).collect();
            let mut h = OpcodeHistogram::default();
            for (op, c) in ops {
                h.0[op as usize] += c;
            }
            features_from(selectors, h, 256)
        })
}

#[test]
fn well_known_selectors_match_reference_digest() {
    for (sig, hex) in [
        ("transfer(address,uint256)", "a9059cbb"),
        ("transferOwnership(address)", "f2fde38b"),
        ("owner()", "8da5cb5b"),
    ] {
        assert_eq!(&reference_keccak(sig.as_bytes())[..4], hex::decode(hex).unwrap().as_slice());
        assert_eq!(Selector::from_signature(sig).to_hex(), format!("0x{hex}"));
    }
}

#[test]
fn exactly_the_five_core_selectors_label_erc20() {
    let sigs = [
        "totalSupply()",
        "balanceOf(address)",
        "transfer(address,uint256)",
        "approve(address,uint256)",
        "transferFrom(address,address,uint256)",
    ];
    let sel = |s: &str| Selector(reference_keccak(s.as_bytes())[..4].try_into().unwrap());
    let all: SelectorSet = sigs.iter().map(|s| sel(s)).collect();
    assert_eq!(classify_erc(&all), (true, false));
    for drop in sigs {
        let partial: SelectorSet = sigs.iter().filter(|s| **s != drop).map(|s| sel(s)).collect();
        assert_eq!(classify_erc(&partial).0, false, "{drop} should be required");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn keccak_matches_reference(data in prop::collection::vec(any::<u8>(), 0..600)) {
        prop_assert_eq!(keccak256(&data), reference_keccak(&data));
    }

    #[test]
    fn strip_is_idempotent(
        body in prop::collection::vec(any::<u8>(), 1..300),
        trailers in prop::collection::vec(1usize..60, 0..3),
    ) {
        let mut code = body;
        for m in trailers {
            code = with_trailer(&code, m);
        }
        let once = strip_metadata(&code).unwrap();
        let twice = strip_metadata(&once.bytes).unwrap();
        prop_assert_eq!(&once.bytes, &twice.bytes);
        prop_assert_eq!(once.canonical_hash, twice.canonical_hash);
    }

    #[test]
    fn constructed_trailer_is_removed(body in prop::collection::vec(0u8..0x5f, 3..200), m in 1usize..80) {
        // bodies of non-map-looking bytes whose last two bytes cannot form a valid suffix
        let mut body = body;
        let n = body.len();
        body[n - 2] = 0xff;
        let got = strip_metadata(&with_trailer(&body, m)).unwrap();
        prop_assert!(got.had_metadata());
        prop_assert_eq!(got.bytes, body);
    }

    #[test]
    fn decode_covers_every_byte(code in prop::collection::vec(any::<u8>(), 0..400)) {
        let s = decode(&code);
        let mut cursor = 0;
        for ins in s.iter() {
            prop_assert_eq!(ins.offset, cursor);
            prop_assert_eq!(ins.immediate.len(), opcode::immediate_len(ins.opcode));
            cursor += ins.size();
        }
        prop_assert_eq!(cursor, code.len());
    }

    #[test]
    fn segments_round_trip(code in prop::collection::vec(any::<u8>(), 0..600), l in 1usize..64, n in 1usize..12) {
        let t = segment(&code, l, n);
        prop_assert!(t.mask.windows(2).all(|w| w[0] || !w[1]));
        let kept = code.len().min(l * n);
        prop_assert_eq!(t.truncated, code.len() - kept);
        prop_assert_eq!(t.n_valid(), kept.div_ceil(l));
        let back: Vec<u8> = t.tokens[..kept].iter().map(|x| *x as u8).collect();
        prop_assert_eq!(back.as_slice(), &code[..kept]);
    }

    #[test]
    fn density_halves_when_length_doubles(k in 0usize..200, len in 1usize..50_000) {
        prop_assert_eq!(signature_density(k, 2 * len).unwrap() * 2.0, signature_density(k, len).unwrap());
    }

    #[test]
    fn erc_flags_monotone_in_selectors(
        base in prop::collection::btree_set(0usize..14, 0..14),
        extra in prop::collection::btree_set(0usize..14, 0..14),
    ) {
        let pool = [
            "totalSupply()", "balanceOf(address)", "transfer(address,uint256)", "approve(address,uint256)",
            "transferFrom(address,address,uint256)", "ownerOf(uint256)", "setApprovalForAll(address,bool)",
            "safeTransferFrom(address,address,uint256)", "safeTransferFrom(address,address,uint256,bytes)",
            "owner()", "name()", "symbol()", "decimals()", "mint(address,uint256)",
        ];
        let to_set = |ix: &BTreeSet<usize>| -> SelectorSet { ix.iter().map(|i| Selector::from_signature(pool[*i])).collect() };
        let small = to_set(&base);
        let big = to_set(&base.union(&extra).copied().collect());
        let (a20, a721) = classify_erc(&small);
        let (b20, b721) = classify_erc(&big);
        prop_assert!(!a20 || b20);
        prop_assert!(!a721 || b721);
    }

    #[test]
    fn every_minimal_proxy_is_a_proxy(addr in any::<[u8; 20]>()) {
        let code = minimal_proxy_runtime(addr);
        let s = decode(&code);
        let sel: SelectorSet = Default::default();
        let p = proxy_indicator(&code, &s, &sel, 4);
        prop_assert!(p.proxy && p.minimal);
    }

    #[test]
    fn opcode_frequencies_sum_to_one(all in prop::collection::vec(arb_features(), 1..30), cut in 0usize..30) {
        let refs: Vec<&StructuralFeatures> = all.iter().collect();
        let tail = &refs[..(cut % refs.len()) + 1];
        let cfg = LiftConfig { min_count: 0, ..Default::default() };
        let t = lift_table(tail, &refs, PatternKind::Opcode, &cfg).unwrap();
        let sum_all: f64 = t.rows.iter().map(|r| r.all_freq).sum();
        let sum_tail: f64 = t.rows.iter().map(|r| r.tail_freq).sum();
        prop_assert!((sum_all - 1.0).abs() < 1e-12);
        prop_assert!((sum_tail - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lift_is_scale_free(all in prop::collection::vec(arb_features(), 1..30), cut in 0usize..30, min_count in 0u64..3) {
        let refs: Vec<&StructuralFeatures> = all.iter().collect();
        let k = (cut % refs.len()) + 1;
        let doubled: Vec<&StructuralFeatures> = refs.iter().chain(refs.iter()).copied().collect();
        let doubled_tail: Vec<&StructuralFeatures> = refs[..k].iter().chain(refs[..k].iter()).copied().collect();
        for kind in [PatternKind::Selector, PatternKind::Opcode] {
            // min_count applies to raw counts, so doubling doubles the threshold too
            let a = lift_table(&refs[..k], &refs, kind, &LiftConfig { min_count, ..Default::default() }).unwrap();
            let b = lift_table(&doubled_tail, &doubled, kind, &LiftConfig { min_count: 2 * min_count, ..Default::default() }).unwrap();
            prop_assert_eq!(a.rows.len(), b.rows.len());
            for (x, y) in a.rows.iter().zip(&b.rows) {
                prop_assert_eq!(x.pattern, y.pattern);
                prop_assert_eq!(x.lift, y.lift);
                prop_assert_eq!(x.tail_count * 2, y.tail_count);
            }
        }
    }

    #[test]
    fn min_count_keeps_every_qualifying_row(all in prop::collection::vec(arb_features(), 1..30), min_count in 0u64..6) {
        let refs: Vec<&StructuralFeatures> = all.iter().collect();
        let full = lift_table(&refs, &refs, PatternKind::Selector, &LiftConfig { min_count: 0, ..Default::default() }).unwrap();
        let cut = lift_table(&refs, &refs, PatternKind::Selector, &LiftConfig { min_count, ..Default::default() }).unwrap();
        let expect = full.rows.iter().filter(|r| r.tail_count >= min_count).count();
        prop_assert_eq!(cut.rows.len(), expect);
    }

    #[test]
    fn queues_nest_and_tiers_are_monotone(scores in prop::collection::vec(-50.0f64..50.0, 1..400), bump in 0.0f64..10.0) {
        let spec = QueueSpec::from_scores("c", &scores, &QueueConfig::default()).unwrap();
        prop_assert!(spec.emergency_cutoff >= spec.main_cutoff);
        prop_assert!(spec.main_cutoff >= spec.watch_cutoff);
        prop_assert!(spec.emergency_count <= spec.main_count);
        for s in &scores {
            let before = spec.tier_of(*s);
            let after = spec.tier_of(s + bump);
            prop_assert!(after >= before);
            if before == Some(Tier::Emergency) {
                prop_assert!(*s >= spec.main_cutoff);
            }
        }
    }

    #[test]
    fn set_metric_identities(
        a in prop::collection::btree_set(0u16..200, 1..80),
        b in prop::collection::btree_set(0u16..200, 1..80),
    ) {
        let j = jaccard(&a, &b).value;
        prop_assert_eq!(j, jaccard(&b, &a).value);
        prop_assert!(j <= overlap_coeff(&a, &b).value);
        let ab = directional_overlap(&a, &b).unwrap() * a.len() as f64;
        let ba = directional_overlap(&b, &a).unwrap() * b.len() as f64;
        prop_assert!((ab - ba).abs() < 1e-9);
    }
}

/// Twenty queue entries with hand-picked signals. Expected priorities were
/// worked out by hand (exact fractions) under equal unit weights:
///
/// ```text
///  i  density-rank  lift   ext    reuse owner proxy  priority
///  0  20            0      0      0     0     0      1/40
///  1  19            0.1    0      0     0     0      7/40
///  2   1            0      0      0     0     0      39/40
///  3  18            0      1      0     0     0      45/40
///  4  17            0      0      1     0     0      47/40
///  5  16            0      0      0     1     0      49/40
///  6  15            0      0      0     0     1      51/40
///  7   2            1      0      0     0     0      77/40
///  8  14            0.3    2/3    0     0     0      31/24
///  9   3            0      0      1     1     1      31/8
/// 10  13            0      0      0     0*    0      3/8
/// 11  12            0.1    0      0     0     0      21/40
/// 12   4            0      0      0     0     0      33/40
/// 13  11            0      2/3    1     0     0      257/120
/// 14  10            1      0      0     0     1      101/40
/// 15   5            0      0      0     0     0      31/40
/// 16   9            0      0      0     0     0      23/40
/// 17   6            0.5    1      0     0     0      89/40
/// 18   8            0      0      0     1     0      13/8
/// 19   7            0      0      0     0     0      27/40
/// ```
///
/// Low-density term is `(41 - 2·rank) / 40`. Lifts: HI 100, MID 25, LO 5,
/// capped at 50. External-call baseline is 30 CALLs over 2000 opcodes.
/// `*` has an owner selector but 11 selectors, so it is not sparse.
#[test]
fn secondary_rank_matches_hand_ranking() {
    let hi = Selector([0xee, 0, 0, 1]);
    let mid = Selector([0xee, 0, 0, 2]);
    let lo = Selector([0xee, 0, 0, 3]);
    let owner = Selector::from_signature("owner()");
    // (density rank, lifted selectors, CALL count, reuse, owner, filler selectors, proxy)
    let rows: [(u32, &[Selector], u64, bool, bool, u8, bool); 20] = [
        (20, &[], 0, false, false, 0, false),
        (19, &[lo], 0, false, false, 0, false),
        (1, &[], 0, false, false, 0, false),
        (18, &[], 10, false, false, 0, false),
        (17, &[], 0, true, false, 0, false),
        (16, &[], 0, false, true, 0, false),
        (15, &[], 0, false, false, 0, true),
        (2, &[hi, lo], 0, false, false, 0, false),
        (14, &[mid, lo], 5, false, false, 0, false),
        (3, &[], 0, true, true, 0, true),
        (13, &[], 0, false, true, 10, false),
        (12, &[lo], 0, false, false, 0, false),
        (4, &[], 0, false, false, 0, false),
        (11, &[], 5, true, false, 0, false),
        (10, &[hi], 0, false, false, 0, true),
        (5, &[], 0, false, false, 0, false),
        (9, &[], 0, false, false, 0, false),
        (6, &[mid], 10, false, false, 0, false),
        (8, &[], 0, false, true, 0, false),
        (7, &[], 0, false, false, 0, false),
    ];
    let expected_priority = [
        1.0 / 40.0,
        7.0 / 40.0,
        39.0 / 40.0,
        45.0 / 40.0,
        47.0 / 40.0,
        49.0 / 40.0,
        51.0 / 40.0,
        77.0 / 40.0,
        31.0 / 24.0,
        31.0 / 8.0,
        3.0 / 8.0,
        21.0 / 40.0,
        33.0 / 40.0,
        257.0 / 120.0,
        101.0 / 40.0,
        31.0 / 40.0,
        23.0 / 40.0,
        89.0 / 40.0,
        13.0 / 8.0,
        27.0 / 40.0,
    ];
    let expected_order = [9, 14, 17, 13, 7, 18, 8, 6, 5, 4, 3, 2, 12, 15, 19, 16, 11, 10, 1, 0];

    let hashes: Vec<CodeHash> = (0..20u8).map(|i| CodeHash::of(&[i])).collect();
    let feats: Vec<StructuralFeatures> = rows
        .iter()
        .map(|(rank, lifted, calls, _, has_owner, filler, proxy)| {
            let mut sel: SelectorSet = lifted.iter().copied().collect();
            if *has_owner {
                sel.insert(owner);
            }
            sel.extend((0..*filler).map(|b| Selector([0xdd, 0, 0, b])));
            let mut h = OpcodeHistogram::default();
            h.0[opcode::CALL as usize] = *calls;
            h.0[opcode::ADD as usize] = 100 - calls;
            StructuralFeatures {
                selector_count: sel.len(),
                selectors: sel,
                signature_density: *rank as f64,
                byte_len: 1024,
                erc20: false,
                erc721: false,
                proxy: *proxy,
                minimal_proxy: false,
                opcode_hist: h,
            }
        })
        .collect();
    let queue = TriageQueue {
        chain: "fixture".into(),
        tier: Tier::Main,
        cutoff: 0.0,
        entries: (0..20)
            .map(|i| QueueEntry {
                record: ScoreRecord {
                    chain: "fixture".into(),
                    address: format!("0x{i:040x}"),
                    canonical_hash: hashes[i],
                    score: 100.0 - i as f64,
                    source: ScoreSource::Model,
                },
                percentile: 0.0,
                priority: None,
                flags: vec![],
            })
            .collect(),
    };
    let lifts: HashMap<Selector, f64> = [(hi, 100.0), (mid, 25.0), (lo, 5.0)].into_iter().collect();
    let reuse: HashSet<CodeHash> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.3)
        .map(|(i, _)| hashes[i])
        .collect();
    let ctx = SecondaryContext::new(hashes.iter().copied().zip(feats.iter()), lifts, reuse);
    let ranked = secondary_rank(&queue, &ctx, &SecondaryWeights::default());

    let order: Vec<usize> = ranked
        .entries
        .iter()
        .map(|e| hashes.iter().position(|h| *h == e.record.canonical_hash).unwrap())
        .collect();
    assert_eq!(order, expected_order);
    for e in &ranked.entries {
        let i = hashes.iter().position(|h| *h == e.record.canonical_hash).unwrap();
        let got = e.priority.unwrap();
        assert!((got - expected_priority[i]).abs() < 1e-12, "entry {i}: {got} vs {}", expected_priority[i]);
    }
}
