use proptest::prelude::*;
use std::collections::BTreeMap;
use tilepack_core::filter::scorer::StubScorer;
use tilepack_core::filter::{
    filter_corpus, filter_record, quality_gate, repetition_score, Decision, FilterConfig,
    RuleConfig,
};
use tilepack_core::geometry::{enumerate_target_ratios, plan_layout, ImageDims, TileBudget};
use tilepack_core::mixer::{build_epoch, DatasetConfig};
use tilepack_core::packer::{select_truncate, Packer, PackerConfig, SampleUnit, VisualSpan};
use tilepack_core::tokens::{parse_rendered, render_multi_image, render_single_image, TokenBudget};
use tilepack_core::{ManifestRecord, Modality, Turn};

fn budgets() -> impl Strategy<Value = TileBudget> {
    (1u32..=48, 1u32..=48, 1u32..=1024)
        .prop_map(|(a, b, s)| TileBudget::new(a.min(b), a.max(b), s).unwrap())
}

/// A sample whose visual blocks are laid out between text runs.
fn sample(id: usize) -> impl Strategy<Value = SampleUnit> {
    prop::collection::vec((0u64..3000, 0u32..=6), 0..6).prop_map(move |parts| {
        let mut spans = Vec::new();
        let mut at = 0;
        for (text, tiles) in &parts {
            at += text;
            if *tiles > 0 {
                let len = u64::from(*tiles) * 256;
                spans.push(VisualSpan {
                    offset: at,
                    len,
                    tiles: *tiles,
                });
                at += len;
            }
        }
        let len = at.max(1) + 5;
        let tiles = spans.iter().map(|s| s.tiles).sum();
        SampleUnit::new(format!("u{id}"), len, tiles).with_spans(spans)
    })
}

fn stream() -> impl Strategy<Value = Vec<SampleUnit>> {
    (1usize..120).prop_flat_map(|n| (0..n).map(sample).collect::<Vec<_>>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layout_respects_budget(w in 1u32..=8192, h in 1u32..=8192, budget in budgets(), thumb in any::<bool>()) {
        let layout = plan_layout(ImageDims::new(w, h).unwrap(), &budget, thumb);
        let side = budget.tile_side();
        prop_assert!((budget.n_min()..=budget.n_max()).contains(&layout.tile_count));
        prop_assert_eq!(layout.tile_count, layout.grid.cols * layout.grid.rows);
        prop_assert_eq!((layout.resized.width(), layout.resized.height()), (side * layout.grid.cols, side * layout.grid.rows));
        prop_assert_eq!(layout.has_thumbnail, thumb && layout.tile_count > 1);
        prop_assert!(enumerate_target_ratios(&budget).contains(&layout.grid));
    }

    #[test]
    fn grid_ratios_unique_and_ordered(budget in budgets()) {
        let grids = enumerate_target_ratios(&budget);
        for pair in grids.windows(2) {
            prop_assert!((pair[0].tiles(), pair[0].cols) < (pair[1].tiles(), pair[1].cols));
        }
    }

    #[test]
    fn select_preserves_tokens_and_blocks(unit in sample(0), l_max in 2000u64..6000, t_max in 6u32..20) {
        let cfg = PackerConfig::new(l_max, t_max, 8).unwrap();
        let pieces = select_truncate(unit.clone(), &cfg).unwrap();
        prop_assert_eq!(pieces.iter().map(|p| p.token_length).sum::<u64>(), unit.token_length);
        prop_assert_eq!(pieces.iter().map(|p| p.tile_count).sum::<u32>(), unit.tile_count);
        let blocks: Vec<(u64, u32)> = pieces.iter().flat_map(|p| p.visual_spans.iter().map(|s| (s.len, s.tiles))).collect();
        let orig: Vec<(u64, u32)> = unit.visual_spans.iter().map(|s| (s.len, s.tiles)).collect();
        prop_assert_eq!(blocks, orig);
        for p in &pieces {
            prop_assert!(p.token_length <= l_max && p.tile_count <= t_max);
            for s in &p.visual_spans {
                prop_assert!(s.offset + s.len <= p.token_length);
            }
        }
    }

    #[test]
    fn packer_conserves_tokens_and_ids(units in stream(), cap in 1usize..16) {
        let cfg = PackerConfig::new(8192, 24, cap).unwrap();
        let mut expected: BTreeMap<String, u64> = BTreeMap::new();
        for u in &units {
            for p in select_truncate(u.clone(), &cfg).unwrap() {
                expected.insert(p.id, p.token_length);
            }
        }
        let mut packer = Packer::new(cfg).unwrap();
        let mut out = Vec::new();
        for u in units {
            out.extend(packer.push(u).unwrap());
            prop_assert!(packer.buffer().len() <= cap);
            prop_assert!(packer.buffer().is_sorted());
        }
        out.extend(packer.flush());
        prop_assert!(packer.buffer().is_empty());
        let mut seen: BTreeMap<String, u64> = BTreeMap::new();
        for seq in &out {
            prop_assert!(seq.total_length <= cfg.l_max && seq.total_tiles <= cfg.t_max);
            for s in &seq.segments {
                prop_assert!(seen.insert(s.id.clone(), s.token_length).is_none(), "duplicate {}", s.id);
            }
        }
        prop_assert_eq!(seen, expected);
        let stats = packer.stats();
        prop_assert_eq!(stats.sequences_out as usize, out.len());
        prop_assert_eq!(stats.tokens_out, out.iter().map(|s| s.total_length).sum::<u64>());
    }

    #[test]
    fn rendered_placeholders_parse_back(dims in prop::collection::vec((1u32..4000, 1u32..4000), 1..5), n_max in 1u32..=24) {
        let budget = TileBudget::up_to(n_max).unwrap();
        let layouts: Vec<_> = dims.iter().map(|(w, h)| plan_layout(ImageDims::new(*w, *h).unwrap(), &budget, true)).collect();
        let turns = vec![Turn::user("What is shown?"), Turn::assistant("Several things.")];
        let tb = TokenBudget::default();
        let rendered = if layouts.len() == 1 {
            render_single_image(&layouts[0], &turns, &tb).unwrap()
        } else {
            render_multi_image(&layouts, &turns, &tb).unwrap()
        };
        let parsed = parse_rendered(&rendered.text).unwrap();
        prop_assert_eq!(parsed.modality, rendered.modality);
        prop_assert_eq!(&parsed.image_tokens, &rendered.image_tokens);
        let want: Vec<u64> = layouts.iter().map(|l| u64::from(l.total_tiles()) * 256).collect();
        prop_assert_eq!(parsed.image_tokens, want);
    }

    #[test]
    fn integer_repeats_are_exact(size in 0usize..300, r in 1u32..=4, seed in any::<u64>()) {
        let cfg = DatasetConfig::new("d", Modality::Text).with_repeat(f64::from(r));
        let plan = build_epoch(&[(cfg, size)], seed).unwrap();
        prop_assert_eq!(plan.draws.len(), size * r as usize);
        let mut per: BTreeMap<usize, u32> = BTreeMap::new();
        for d in &plan.draws {
            *per.entry(d.index).or_default() += 1;
        }
        prop_assert!(per.values().all(|&c| c == r));
    }
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop::sample::select(vec![
            "alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta",
        ]),
        0..80,
    )
    .prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn doubling_text_never_raises_repetition_score(t in words()) {
        let rules = RuleConfig::default();
        let doubled = format!("{t} {t}");
        prop_assert!(repetition_score(&doubled, &rules) <= repetition_score(&t, &rules) + 1e-12);
    }

    #[test]
    fn gate_is_monotone(a in 0.0f64..=10.0, b in 0.0f64..=10.0, th in 0.0f64..=10.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(!quality_gate(lo, th).unwrap() || quality_gate(hi, th).unwrap());
    }

    #[test]
    fn higher_quality_never_worsens_decision(t in words(), a in 0.0f64..=10.0, b in 0.0f64..=10.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let rec = ManifestRecord::new("r", Modality::Text, vec![Turn::user(t)]);
        let cfg = FilterConfig::default();
        let rank = |d| match d { Decision::Keep => 0, Decision::Review => 1, Decision::Drop => 2 };
        let dlo = filter_record(&rec, &cfg, Some(&StubScorer::fixed(lo))).decision;
        let dhi = filter_record(&rec, &cfg, Some(&StubScorer::fixed(hi))).decision;
        prop_assert!(rank(dhi) <= rank(dlo));
    }

    #[test]
    fn corpus_partition_and_idempotence(texts in prop::collection::vec(words(), 0..40)) {
        let lines: Vec<String> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| ManifestRecord::new(format!("r{i}"), Modality::Text, vec![Turn::user(t.clone())]).to_json_line())
            .collect();
        let cfg = FilterConfig::default();
        let out = filter_corpus(lines.iter().enumerate().map(|(i, l)| (i + 1, l.as_str())), &cfg, None);
        prop_assert_eq!(out.kept.len() + out.dropped.len() + out.review.len(), lines.len());
        let s = &out.summary;
        prop_assert_eq!(s.keep + s.drop + s.review, s.input);

        let again = filter_corpus(out.kept.iter().enumerate().map(|(i, l)| (i + 1, l.as_str())), &cfg, None);
        prop_assert_eq!(&again.kept, &out.kept);
    }
}
