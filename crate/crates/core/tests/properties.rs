use proptest::prelude::*;

use vigil_core::metrics::{precision, recall, trace_scores, Confusion};
use vigil_core::oracle::{resolve_vote, VotePolicy};
use vigil_core::page::{BBox, RawElement, RawPage};
use vigil_core::trace::{find_scores, PageReidentifier, Session, State};
use vigil_dsl::{Span, Verdict};

const WORDS: &[&str] = &["cart", "search", "price", "add", "book", "save", "home", "total", "remove", "title"];

fn page_strategy() -> impl Strategy<Value = RawPage> {
    (
        prop::collection::vec((prop::sample::select(WORDS), prop::sample::select(WORDS), any::<bool>()), 1..12),
        prop::sample::select(&["/", "/cart", "/search"][..]),
    )
        .prop_map(|(items, url)| {
            let children = items
                .iter()
                .enumerate()
                .map(|(i, (a, b, link))| {
                    let y = 20 * i as i64;
                    let e = RawElement::new(format!("e{i}"), if *link { "link" } else { "text" }, format!("{a} {b}"), BBox::new(0, y, 300, y + 18));
                    if *link {
                        e.interactable()
                    } else {
                        e
                    }
                })
                .collect();
            RawPage {
                url: url.to_string(),
                title: "Page".into(),
                width: 400,
                height: 400,
                root: RawElement::new("root", "main", "", BBox::new(0, 0, 400, 400)).with_children(children),
                screenshot: None,
            }
        })
}

fn policy_strategy() -> impl Strategy<Value = VotePolicy> {
    prop_oneof![
        Just(VotePolicy::single()),
        (2usize..8).prop_map(|m| VotePolicy::majority(m).unwrap()),
        (2usize..8, 0.05f64..0.95).prop_map(|(m, x)| VotePolicy::threshold(m, x).unwrap()),
    ]
}

proptest! {
    #[test]
    fn vote_is_monotone_in_passes(policy in policy_strategy()) {
        let m = policy.candidates_m;
        for p in 0..m {
            prop_assert!(!policy.decide(p) || policy.decide(p + 1));
        }
    }

    #[test]
    fn majority_means_strictly_more_than_half(m in 2usize..10, mask in any::<u16>()) {
        let verdicts: Vec<Verdict> = (0..m)
            .map(|i| if mask >> i & 1 == 1 { Verdict::pass() } else { Verdict::fail("no", Span::default()) })
            .collect();
        let passes = verdicts.iter().filter(|v| v.is_pass()).count();
        prop_assert_eq!(resolve_vote(&verdicts, &VotePolicy::majority(m).unwrap()), passes > m - passes);
    }

    #[test]
    fn completion_scores_are_consistent(holds in prop::collection::vec(any::<bool>(), 0..12), extra in 0usize..3) {
        let expected = holds.len() + extra;
        let (tc, ct) = trace_scores(&holds, expected);
        prop_assert!((0.0..=1.0).contains(&ct));
        prop_assert_eq!(tc == 1, ct == 1.0);
        // Turning any failure into a pass never lowers completion.
        for i in 0..holds.len() {
            let mut better = holds.clone();
            better[i] = true;
            prop_assert!(trace_scores(&better, expected).1 >= ct);
        }
    }

    #[test]
    fn aggregate_precision_recall_recompute(parts in prop::collection::vec((0usize..5, 0usize..5, 0usize..5, 0usize..5), 1..10)) {
        let mut total = Confusion::default();
        for (tp, fp, fn_, tn) in &parts {
            total.add(Confusion { tp: *tp, fp: *fp, fn_: *fn_, tn: *tn });
        }
        let tp: usize = parts.iter().map(|p| p.0).sum();
        let fp: usize = parts.iter().map(|p| p.1).sum();
        let fn_: usize = parts.iter().map(|p| p.2).sum();
        prop_assert_eq!(total.precision(), precision(tp, fp));
        prop_assert_eq!(total.recall(), recall(tp, fn_));
    }

    #[test]
    fn find_is_stable_and_bounded(raw in page_strategy(), a in prop::sample::select(WORDS), b in prop::sample::select(WORDS), k in 1usize..6) {
        let state = State::detached(&raw).unwrap();
        let query = format!("{a} {b}");
        let first = find_scores(&state, &query, k, 0.1);
        prop_assert_eq!(&first, &find_scores(&state, &query, k, 0.1));
        prop_assert!(first.len() <= k);
        prop_assert!(first.windows(2).all(|w| w[0].1 >= w[1].1));
        prop_assert!(first.iter().all(|(_, s)| *s >= 0.1));
        prop_assert_eq!(state.find(&query, k), first.iter().map(|(i, _)| *i).collect::<Vec<_>>());
    }

    #[test]
    fn rendering_is_pure(raw in page_strategy()) {
        let a = State::detached(&raw).unwrap();
        let b = State::detached(&raw).unwrap();
        prop_assert_eq!(a.describe(), b.describe());
        let again = State::detached(&a.to_raw()).unwrap();
        prop_assert_eq!(a.describe(), again.describe());
    }

    #[test]
    fn prefixes_preserve_history(pages in prop::collection::vec(page_strategy(), 1..6), cut in 0usize..7) {
        let reid = PageReidentifier::offline();
        let mut session = Session::new();
        for p in &pages {
            session.append_state(p, &reid).unwrap();
        }
        let prefix = session.prefix(cut);
        prop_assert_eq!(prefix.len(), cut.min(session.len()));
        for (x, y) in prefix.history().iter().zip(session.history()) {
            prop_assert_eq!(x.describe(), y.describe());
            prop_assert_eq!(&x.page_id, &y.page_id);
        }
        prop_assert_eq!(session.prefix(session.len()).to_json(), session.to_json());
    }
}
