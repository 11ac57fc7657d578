use proptest::prelude::*;
use vigil_dsl::parse;

fn leaf() -> impl Strategy<Value = String> {
    prop_oneof![
        (0i64..1000).prop_map(|i| i.to_string()),
        (0u32..1000).prop_map(|i| format!("{}.{}", i / 10, i % 10)),
        "[a-z]{1,6}".prop_map(|s| format!("'{s}'")),
        prop::sample::select(vec!["x", "y", "items", "None", "True", "False"]).prop_map(String::from),
    ]
}

fn expr() -> impl Strategy<Value = String> {
    leaf().prop_recursive(5, 48, 4, |inner| {
        prop_oneof![
            (inner.clone(), prop::sample::select(vec!["+", "-", "*", "/", "//", "%", "**"]), inner.clone())
                .prop_map(|(a, op, b)| format!("({a} {op} {b})")),
            (inner.clone(), prop::sample::select(vec!["==", "!=", "<", ">=", "in", "not in", "is not"]), inner.clone())
                .prop_map(|(a, op, b)| format!("{a} {op} {b}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} and not {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} or {b})")),
            prop::collection::vec(inner.clone(), 0..4).prop_map(|v| format!("[{}]", v.join(", "))),
            prop::collection::vec(inner.clone(), 1..3).prop_map(|v| format!("({},)", v.join(", "))),
            inner.clone().prop_map(|a| format!("-{a}")),
            inner.clone().prop_map(|a| format!("len({a})")),
            inner.clone().prop_map(|a| format!("{a}.price")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a}[{b}]")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a}[{b}:]")),
            (inner.clone(), inner.clone(), inner.clone()).prop_map(|(a, b, c)| format!("({a} if {b} else {c})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("sum(v * {a} for v in {b} if v)")),
            inner.clone().prop_map(|a| format!("(lambda q: q + {a})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{{{a}: {b}}}")),
            (prop::sample::select(vec!["x", "y", "x.price"]), 0i64..100)
                .prop_map(|(a, b)| format!("f'n={{{a} + {b}}} {{{a}:>8.2f}}'")),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn canonical_form_is_a_fixpoint(e in expr(), msg in prop::option::of("[a-z ]{0,8}")) {
        let src = match msg {
            Some(m) => format!("assert {e}, '{m}'\n"),
            None => format!("y = {e}\nassert y\n"),
        };
        let first = parse(&src).unwrap().canonical();
        let second = parse(&first).unwrap_or_else(|err| panic!("{first:?}: {err}")).canonical();
        prop_assert_eq!(first, second);
    }
}
