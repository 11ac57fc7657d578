mod common;

use std::sync::Arc;

use common::{no_dependencies, oracle_for, reply, route_rules, scripted};
use serde_json::json;
use vigil_core::action::{Driver, DriverFault, ExecutableAction};
use vigil_core::gateway::{ModelGateway, RecordingGateway, RoleTag};
use vigil_core::oracle::{
    infer_candidates, infer_oracle, replay_bug_report, OracleError, Phase, RunOptions, RunStatus, StepStatus, Tester,
    VotePolicy,
};
use vigil_core::page::RawPage;
use vigil_core::requirement::{Requirement, TestStep};
use vigil_core::simapp::{load_app, BugCategory, BugPayload, BugSpec, BugTrigger};
use vigil_core::trace::{PageReidentifier, Session};
use vigil_dsl::{SchemaRegistry, VerdictStatus};

const SHOP_FLOW: &str = r#"steps:
  - action: Type "camera" into the search box and click 'Search'
    expectation: Results for camera are listed
  - condition: Search results are shown
    action: Click 'Camera Lens'
    expectation: The Camera Lens product page opens
  - condition: The product page is shown
    action: Click 'Add to Cart'
    expectation: The cart lists Camera Lens
"#;

fn shop_rules() -> Vec<serde_json::Value> {
    let mut rules = route_rules();
    rules.push(no_dependencies());
    rules.push(oracle_for(
        "Type \"camera\" into the search box and click 'Search'",
        "",
        "",
        "assert state.url == \"/search\"\nassert len(state.find(\"Camera\")) >= 2",
    ));
    rules.push(oracle_for(
        "Click 'Camera Lens'",
        "",
        "assert state.url == \"/search\"",
        "assert state.url == \"/product\", \"not on a product page\"\nassert any(e.text == \"Camera Lens\" for e in session.history[-2].elements)\nassert state.title == \"Camera Lens\"",
    ));
    rules.push(oracle_for(
        "Click 'Add to Cart'",
        "",
        "assert state.find(\"Add to Cart\")[0].role == \"button\"",
        "assert state.url == \"/cart\"\nassert \"Camera Lens\" in [e.text for e in state.elements]",
    ));
    rules
}

fn tester(gateway: Arc<dyn ModelGateway>, policy: VotePolicy) -> Tester {
    Tester::new(gateway, policy, RunOptions::default())
}

#[test]
fn clean_run_passes_and_is_deterministic() {
    let run = || {
        let mut app = load_app("minishop").unwrap();
        app.reset().unwrap();
        tester(scripted(shop_rules()), VotePolicy::single()).run_test(&Requirement::structured(SHOP_FLOW), &mut app)
    };
    let a = run();
    assert_eq!(a.status, RunStatus::Passed, "{}", a.to_json_pretty());
    assert_eq!(a.outcomes.len(), 3);
    assert!(a.outcomes.iter().all(|o| o.status == StepStatus::Passed && o.attempts_used == 1));
    assert_eq!(a.outcomes[0].actions.len(), 2);
    assert_eq!(a.to_json_pretty(), run().to_json_pretty());
    let session = a.session().unwrap();
    assert_eq!(session.len(), 5);
    assert_eq!(a.outcomes[2].end_state, 4);
}

#[test]
fn post_failure_retries_the_action_then_reports() {
    let mut app = load_app("minishop").unwrap().inject(BugSpec {
        category: BugCategory::NavigationFailure,
        trigger: BugTrigger {
            page: Some("product".into()),
            ..Default::default()
        },
        payload: BugPayload::Redirect { redirect: "home".into() },
    });
    app.reset().unwrap();
    let gateway = scripted(shop_rules());
    let record = tester(gateway.clone(), VotePolicy::single()).run_test(&Requirement::structured(SHOP_FLOW), &mut app);
    assert_eq!(record.status, RunStatus::Bug);
    assert_eq!(record.outcomes.len(), 2);
    let failed = &record.outcomes[1];
    assert_eq!(failed.status, StepStatus::PostconditionFailed);
    assert_eq!(failed.attempts_used, 2);
    let report = failed.bug_report.as_ref().unwrap();
    assert_eq!(report.phase, Phase::Post);
    assert_eq!(report.message, "not on a product page");
    let trace = record.session().unwrap();
    assert!(report.implicated_state_indices.iter().all(|&i| i < trace.len()));
    let replayed = replay_bug_report(report, &trace, gateway, &SchemaRegistry::new(), "run").unwrap();
    assert_eq!(replayed.status, VerdictStatus::Fail);
}

#[test]
fn missing_element_fails_the_precondition_after_regeneration() {
    let mut app = load_app("minishop").unwrap().inject(BugSpec {
        category: BugCategory::MissingElement,
        trigger: BugTrigger {
            page: Some("cart".into()),
            ..Default::default()
        },
        payload: BugPayload::Delete {
            selector: "#continue".into(),
        },
    });
    app.reset().unwrap();
    let mut rules = route_rules();
    rules.push(no_dependencies());
    rules.push(oracle_for("Click 'Cart'", "", "", "assert state.url == \"/cart\""));
    rules.push(oracle_for(
        "Click 'Continue Shopping'",
        "",
        "assert next((e for e in state.find(\"Continue Shopping\") if e.role == \"button\"), None) is not None, \"no continue button\"",
        "assert state.url == \"/\"",
    ));
    let gateway = Arc::new(RecordingGateway::new(scripted(rules)));
    let req = Requirement::structured(
        "steps:\n  - action: Click 'Cart'\n    expectation: The cart opens\n  - condition: A Continue Shopping button is shown\n    action: Click 'Continue Shopping'\n    expectation: The home page opens\n",
    );
    let record = tester(gateway.clone(), VotePolicy::single()).run_test(&req, &mut app);
    assert_eq!(record.status, RunStatus::Bug);
    let o = &record.outcomes[1];
    assert_eq!(o.status, StepStatus::PreconditionFailed);
    assert_eq!(o.regenerations, 1);
    assert_eq!(o.attempts_used, 0);
    let report = o.bug_report.as_ref().unwrap();
    assert_eq!((report.phase, report.message.as_str()), (Phase::Pre, "no continue button"));
    let transcript = gateway.full_transcript();
    let regen: Vec<_> = transcript
        .entries
        .iter()
        .filter(|e| e.role == RoleTag::SymbolizeAndAssert && e.prompt.contains("did not hold"))
        .collect();
    assert_eq!(regen.len(), 1);
}

fn step(condition: &str, action: &str, expectation: &str) -> TestStep {
    TestStep {
        index: 1,
        condition: condition.into(),
        action: action.into(),
        expectation: expectation.into(),
        inferred: Default::default(),
    }
}

fn start_session() -> Session {
    let mut app = load_app("minishop").unwrap();
    let mut s = Session::new();
    s.append_state(&app.reset().unwrap(), &PageReidentifier::offline()).unwrap();
    s
}

#[test]
fn static_check_failure_triggers_one_regeneration() {
    let bad = reply("", "", "assert state.isNotificationEnabled");
    let good = reply("", "", "assert state.url == \"/\"");
    let rules = vec![
        no_dependencies(),
        json!({"role": "symbolize_and_assert", "responses": [bad, good]}),
    ];
    let g = RecordingGateway::new(scripted(rules));
    let s = step("", "Click 'Home'", "home is shown");
    let inf = infer_candidates(&s, &start_session(), &g, &SchemaRegistry::new(), "r", 1, None).unwrap();
    assert_eq!(inf.reprompts, 1);
    let prompts = g.full_transcript();
    let last = prompts.entries.last().unwrap();
    assert!(last.prompt.contains("rejected by the static check"), "{}", last.prompt);
    assert!(last.prompt.contains("isNotificationEnabled"));

    let bad = reply("", "", "assert state.isNotificationEnabled");
    let rules = vec![
        no_dependencies(),
        json!({"role": "symbolize_and_assert", "responses": [bad], "repeat": true}),
    ];
    match infer_oracle(&s, &start_session(), scripted(rules).as_ref(), &SchemaRegistry::new(), "r") {
        Err(OracleError::Invalid { reason, .. }) => assert!(reason.contains("isNotificationEnabled"), "{reason}"),
        other => panic!("{:?}", other.map(|b| b.record())),
    }
}

#[test]
fn empty_condition_gives_a_vacuous_precondition() {
    let rules = vec![
        no_dependencies(),
        json!({"role": "symbolize_and_assert", "responses": [reply("", "assert False", "assert True")]}),
    ];
    let b = infer_oracle(
        &step("", "Click 'Home'", "home"),
        &start_session(),
        scripted(rules).as_ref(),
        &SchemaRegistry::new(),
        "r",
    )
    .unwrap();
    assert!(b.precondition.is_empty());
    assert_eq!(b.postcondition.source.trim(), "assert True");
}

pub const CART_SCHEMAS: &str = "schema Product {\n    title: string;\n    price: number ge=0;\n    quantity: integer optional gt=0;\n}\nschema Cart {\n    items: list[Product];\n}";

#[test]
fn cart_bundle_with_two_schemas() {
    let post = "added = session.history[-2].extract(\"Get product detail\", schema=Product)\nassert added is not None";
    let rules = vec![
        json!({"role": "infer_dependencies", "responses": ["data: the cart reflects the viewed product\ntemporal: the cart page was seen before"]}),
        json!({"role": "symbolize_and_assert", "responses": [reply(CART_SCHEMAS, "", post)]}),
    ];
    let b = infer_oracle(
        &step("", "Click 'Add to Cart'", "the product is now in the cart"),
        &start_session(),
        scripted(rules).as_ref(),
        &SchemaRegistry::new(),
        "r",
    )
    .unwrap();
    let names: Vec<&str> = b.schemas.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["Product", "Cart"]);
    assert!(b.postcondition.source.contains("session.history[-2]"));
    assert_eq!(b.dependency_notes.len(), 2);
}

#[test]
fn majority_vote_over_three_candidates() {
    let mut rules = route_rules();
    rules.push(no_dependencies());
    for (k, post) in [(1, "assert state.url == \"/cart\""), (2, "assert True"), (3, "assert False, \"dissent\"")] {
        rules.push(json!({"role": "symbolize_and_assert", "glob": format!("candidate {k} of 3"), "responses": [reply("", "", post)], "repeat": true}));
    }
    let mut app = load_app("minishop").unwrap();
    app.reset().unwrap();
    let req = Requirement::structured("steps:\n  - action: Click 'Cart'\n    expectation: The cart opens\n");
    let record = tester(scripted(rules), VotePolicy::majority(3).unwrap()).run_test(&req, &mut app);
    assert_eq!(record.status, RunStatus::Passed);
    let o = &record.outcomes[0];
    assert_eq!(o.post_verdicts.len(), 3);
    assert_eq!(o.post_verdicts.iter().filter(|v| v.is_pass()).count(), 2);
    assert_eq!(o.bundles.len(), 3);
}

#[test]
fn action_failure_exhausts_retries() {
    let mut rules = route_rules();
    rules.push(no_dependencies());
    rules.push(oracle_for("Click 'Warranty Options'", "", "", "assert True"));
    let mut app = load_app("minishop").unwrap();
    app.reset().unwrap();
    let req = Requirement::structured("steps:\n  - action: Click 'Warranty Options'\n    expectation: anything\n");
    let policy = VotePolicy::single().with_retries(2, 1);
    let record = tester(scripted(rules), policy).run_test(&req, &mut app);
    assert_eq!(record.status, RunStatus::Error);
    assert_eq!(record.outcomes[0].status, StepStatus::ActionFailed);
    assert_eq!(record.outcomes[0].attempts_used, 3);
    assert!(record.bug_reports.is_empty());
}

#[test]
fn continue_on_failure_runs_every_step() {
    let mut rules = route_rules();
    rules.push(no_dependencies());
    rules.push(oracle_for("Click 'Cart'", "", "", "assert False, \"wrong\""));
    rules.push(oracle_for("Click 'Continue Shopping'", "", "", "assert state.url == \"/\""));
    let req = Requirement::structured(
        "steps:\n  - action: Click 'Cart'\n    expectation: x\n  - action: Click 'Continue Shopping'\n    expectation: y\n",
    );
    let options = RunOptions {
        continue_on_failure: true,
        ..RunOptions::default()
    };
    let mut app = load_app("minishop").unwrap();
    app.reset().unwrap();
    let t = Tester::new(scripted(rules), VotePolicy::single().with_retries(0, 0), options);
    let record = t.run_test(&req, &mut app);
    let statuses: Vec<StepStatus> = record.outcomes.iter().map(|o| o.status).collect();
    assert_eq!(statuses, [StepStatus::PostconditionFailed, StepStatus::Passed]);
    assert_eq!(record.status, RunStatus::Bug);
}

struct Counting {
    calls: usize,
}

impl Driver for Counting {
    fn observe(&mut self) -> Result<RawPage, DriverFault> {
        self.calls += 1;
        Err(DriverFault("unused".into()))
    }

    fn perform(&mut self, _: &ExecutableAction) -> Result<RawPage, DriverFault> {
        self.calls += 1;
        Err(DriverFault("unused".into()))
    }

    fn reset(&mut self) -> Result<RawPage, DriverFault> {
        self.calls += 1;
        Err(DriverFault("unused".into()))
    }
}

#[test]
fn zero_steps_is_degenerate() {
    let mut d = Counting { calls: 0 };
    let record = tester(scripted(vec![]), VotePolicy::single()).run_test(&Requirement::structured("steps: []\n"), &mut d);
    assert_eq!(record.status, RunStatus::Degenerate);
    assert_eq!(d.calls, 0);
    assert!(record.outcomes.is_empty());
}

#[test]
fn step_budget_caps_execution() {
    let options = RunOptions {
        max_steps: Some(1),
        ..RunOptions::default()
    };
    let mut app = load_app("minishop").unwrap();
    app.reset().unwrap();
    let record = Tester::new(scripted(shop_rules()), VotePolicy::single(), options).run_test(&Requirement::structured(SHOP_FLOW), &mut app);
    assert_eq!(record.outcomes.len(), 1);
    assert_eq!(record.status, RunStatus::Passed);
    assert!(record.provenance.iter().any(|p| p.contains("step budget")));
}
