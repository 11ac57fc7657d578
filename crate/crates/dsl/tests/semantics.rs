use std::sync::Arc;

use vigil_dsl::{
    evaluate_source, parse, parse_schema_source, DslErrorKind, EvalEnvironment, SchemaRegistry, Value, Verdict,
    VerdictStatus,
};

fn env() -> EvalEnvironment {
    let registry = SchemaRegistry::new();
    registry
        .register(parse_schema_source("schema Product { title: string required; price: number required ge=0; quantity: integer optional gt=0 }").unwrap())
        .unwrap();
    let mut env = EvalEnvironment::new(Value::None, Value::None, Arc::new(registry));
    env.bind("xs", Value::list((1..=4).map(Value::Int).collect()));
    env.bind("name", Value::str("Camera X100"));
    env
}

fn run(src: &str) -> Verdict {
    evaluate_source(src, &env())
}

fn passes(src: &str) {
    let v = run(src);
    assert!(v.is_pass(), "{src:?} -> {v}");
}

fn errors(src: &str, kind: DslErrorKind) {
    let v = run(src);
    assert_eq!(v.status, VerdictStatus::Error, "{src:?} -> {v}");
    assert_eq!(v.error_kind, Some(kind), "{src:?} -> {v}");
}

#[test]
fn numeric_equality_is_by_value() {
    passes("assert 2 == 2.0");
    passes("assert 7 / 2 == 3.5 and 7 // 2 == 3 and -7 // 2 == -4 and -7 % 3 == 2");
    passes("assert None == None and not (None == 0)");
    errors("assert '1' == 1", DslErrorKind::TypeMismatch);
    errors("assert '1' < 2", DslErrorKind::TypeMismatch);
}

#[test]
fn containment() {
    passes("assert 'X1' in name and 3 in xs and 9 not in xs");
    passes("assert 'a' in {'a': 1} and 2 in {1, 2}");
    errors("assert 3 in 4", DslErrorKind::TypeMismatch);
}

#[test]
fn arithmetic_faults() {
    errors("assert 1 / 0", DslErrorKind::RuntimeFault);
    errors("assert 9223372036854775807 + 1 > 0", DslErrorKind::RuntimeFault);
    errors("assert xs[10]", DslErrorKind::RuntimeFault);
    errors("assert {'a': 1}['b']", DslErrorKind::RuntimeFault);
    errors("x = None\nassert x.price", DslErrorKind::RuntimeFault);
}

#[test]
fn builtins_and_comprehensions() {
    passes("assert sum(x * x for x in xs) == 30");
    passes("assert sorted(xs, key=lambda v: -v) == [4, 3, 2, 1]");
    passes("assert list(map(lambda v: v + 1, filter(lambda v: v % 2 == 0, xs))) == [3, 5]");
    passes("assert max(xs) == 4 and min(xs, default=0) == 1 and min([], default=0) == 0");
    passes("assert next((x for x in xs if x > 2), None) == 3 and next((x for x in xs if x > 9), None) is None");
    passes("assert {k: v for k, v in zip('ab', xs)} == {'a': 1, 'b': 2}");
    passes("assert [i for i, _ in enumerate(xs)] == list(range(4))");
    passes("assert round(2.5) == 2 and round(3.5) == 4 and round(1.005, 1) == 1.0");
    passes("assert f'{3.14159:.2f}|{1234567:,}|{0.25:.0%}' == '3.14|1,234,567|25%'");
}

#[test]
fn regex_and_dates() {
    passes("assert re.search(r'X(\\d+)', name).group(1) == '100'");
    passes("assert re.match('camera', name, re.I)");
    passes("assert re.findall('[aeiou]', 'camera') == ['a', 'e', 'a']");
    passes("a = datetime.strptime('2024-03-01', '%Y-%m-%d')\nb = datetime.fromisoformat('2024-03-02T10:00:00')\nassert b - a > datetime.timedelta(hours=24)");
    passes("assert datetime.date.fromisoformat('2024-01-31') < datetime.date.fromisoformat('2024-02-01')");
}

#[test]
fn control_flow() {
    passes("total = 0\nfor x in xs:\n    if x == 3:\n        continue\n    total += x\nassert total == 7");
    passes("n = 0\nwhile True:\n    n += 1\n    if n > 5:\n        break\nassert n == 6");
    passes("a, b = 1, 2\nassert (a, b) == (1, 2)");
}

#[test]
fn assertion_messages() {
    let v = run("assert len(xs) == 5, f'expected 5, got {len(xs)}'");
    assert_eq!(v.status, VerdictStatus::Fail);
    assert_eq!(v.message, "expected 5, got 4");
    let v = run("assert True\nassert xs[0] > 1");
    assert_eq!(v.message, "assertion failed: xs[0] > 1");
    assert_eq!(v.failing_span.unwrap().line, 2);
}

#[test]
fn naming_errors() {
    errors("assert missing > 1", DslErrorKind::UnknownName);
    errors("assert open('/etc/passwd')", DslErrorKind::ForbiddenCall);
    errors("assert name.__class__", DslErrorKind::ForbiddenCall);
    errors("assert re.compile('a')", DslErrorKind::ForbiddenCall);
    errors("assert name.nonexistent", DslErrorKind::UnknownAttribute);
    errors("import os", DslErrorKind::ParseError);
    errors("x := 1", DslErrorKind::ParseError);
    errors("def f():\n    pass", DslErrorKind::ParseError);
    errors("break", DslErrorKind::ParseError);
}

#[test]
fn budget() {
    errors("while True:\n    pass", DslErrorKind::BudgetExceeded);
    errors("assert len(list(range(10 ** 9))) > 0", DslErrorKind::BudgetExceeded);
    errors("f = lambda g: g(g)\nassert f(f)", DslErrorKind::BudgetExceeded);
}

#[test]
fn schemas_resolve_as_names() {
    let p = parse("p = state.extract('detail', schema=Product)").unwrap();
    assert!(p.referenced_schemas.contains("Product"));
    errors("assert Product('x')", DslErrorKind::ForbiddenCall);
}

#[test]
fn determinism() {
    let src = "assert sorted(set(xs)) == [1, 2, 3], 'set ' + str(sorted(set(xs)))";
    assert_eq!(run(src), run(src));
}
